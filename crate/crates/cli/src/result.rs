//! Output directory of `fuse`.
//!
//! ```text
//! result.json                 manifest: per-keyframe scalars and file paths
//! config.txt                  effective configuration (key=value)
//! poses.txt, input_poses.txt  final and input camera-to-world poses
//! report.txt, report.kv       summary, human- and machine-readable
//! keyframes/<id>/*.pfm        stage maps; energy.txt holds the energy trace
//! ```
//!
//! Maps are stored as 32-bit floats, everything else exactly.
//! `read_result(write_result(x)) == x` holds bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use densefuse_core::pipeline::{Ablation, PipelineResult};
use densefuse_core::poserefine::DepthSource;
use densefuse_core::{FusionConfig, Grid, Intrinsics, Sim3};
use serde::{Deserialize, Serialize};

use crate::bundle::{check_ids, intrinsics_entry, intrinsics_from_entry, Bundle};
use crate::config::parse_config;
use crate::error::{read_text, write_file, CliError};
use crate::manifest::{read_json, to_json, IntrinsicsEntry};
use crate::pfm;
use crate::poses::{format_poses, parse_f64, parse_poses, pose_from_array, pose_to_array, tokens};

pub const RESULT_FILE: &str = "result.json";
pub const RESULT_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub e_total: f64,
    pub e_cnn_grad: f64,
    pub e_semi_dense: f64,
    pub e_cnn_depth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedKeyframe {
    pub id: u32,
    pub image: Grid<f32>,
    /// Scale and shift applied to the relative prediction.
    pub correction: [f64; 2],
    pub cnn_corrected: Grid<f32>,
    pub filtered: Grid<f32>,
    pub filtered_variance: Grid<f32>,
    pub dense: Grid<f32>,
    pub dense_variance: Grid<f32>,
    pub consistent: Grid<f32>,
    pub consistent_source: Grid<DepthSource>,
    pub consistent_variance: Grid<f32>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub from: u32,
    pub to: u32,
    /// Refined camera-`to` → camera-`from` similarity, when refinement succeeded.
    #[serde(default)]
    pub constraint: Option<[f64; 8]>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedBundle {
    pub intrinsics: Intrinsics<f64>,
    pub config: FusionConfig<f64>,
    pub ablation: Ablation,
    pub keyframes: Vec<FusedKeyframe>,
    pub input_poses: Vec<(u32, Sim3<f64>)>,
    pub poses: Vec<(u32, Sim3<f64>)>,
    pub graph: Option<GraphSummary>,
    pub edges: Vec<EdgeSummary>,
}

fn source_code(s: DepthSource) -> f32 {
    match s {
        DepthSource::Rejected => 0.0,
        DepthSource::SemiDense => 1.0,
        DepthSource::Densified => 2.0,
    }
}

fn source_from_code(v: f32) -> Option<DepthSource> {
    match v {
        0.0 => Some(DepthSource::Rejected),
        1.0 => Some(DepthSource::SemiDense),
        2.0 => Some(DepthSource::Densified),
        _ => None,
    }
}

impl FusedBundle {
    /// Collects the storable part of a pipeline run on `bundle`.
    pub fn from_result(
        result: &PipelineResult<f64>,
        bundle: &Bundle,
        config: &FusionConfig<f64>,
        ablation: &Ablation,
    ) -> Self {
        let keyframes = result
            .keyframes
            .iter()
            .zip(&bundle.keyframes)
            .map(|(r, kf)| FusedKeyframe {
                id: r.id,
                image: kf.image.cast(),
                correction: [r.correction.a, r.correction.b],
                cnn_corrected: r.cnn_corrected.cast(),
                filtered: r.filtered.depth.cast(),
                filtered_variance: r.filtered.variance.cast(),
                dense: r.dense.cast(),
                dense_variance: r.dense_variance.cast(),
                consistent: r.consistent.depth.cast(),
                consistent_source: r.consistent.source.clone(),
                consistent_variance: r.consistent_variance.cast(),
                trace: r
                    .densify
                    .trace
                    .iter()
                    .map(|e| TraceEntry {
                        e_total: e.e_total,
                        e_cnn_grad: e.e_cnn_grad,
                        e_semi_dense: e.e_semi_dense,
                        e_cnn_depth: e.e_cnn_depth,
                    })
                    .collect(),
            })
            .collect();
        FusedBundle {
            intrinsics: bundle.intrinsics,
            config: *config,
            ablation: *ablation,
            keyframes,
            input_poses: result.input_poses.clone(),
            poses: result.poses(),
            graph: result.graph_report.map(|g| GraphSummary {
                initial_cost: g.initial_cost,
                final_cost: g.final_cost,
                iterations: g.iterations,
            }),
            edges: result
                .refinements
                .iter()
                .map(|e| EdgeSummary {
                    from: e.from,
                    to: e.to,
                    constraint: e.refined.as_ref().map(|r| pose_to_array(&r.pose)),
                    iterations: e.refined.as_ref().map(|r| r.iterations),
                    failure: e.failure.as_ref().map(|f| f.to_string()),
                })
                .collect(),
        }
    }

    /// Summary lines for humans.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        for kf in &self.keyframes {
            let first = kf.trace.first().map_or(f64::NAN, |e| e.e_total);
            let last = kf.trace.last().map_or(f64::NAN, |e| e.e_total);
            let _ = writeln!(
                s,
                "keyframe {}: correction a={} b={}; semi-dense {} px after filtering; energy {} -> {}; {} of {} px consistent",
                kf.id,
                kf.correction[0],
                kf.correction[1],
                kf.filtered.valid_count(),
                first,
                last,
                kept(&kf.consistent_source),
                kf.consistent_source.len(),
            );
        }
        for e in &self.edges {
            match (&e.failure, e.iterations) {
                (Some(f), _) => {
                    let _ = writeln!(
                        s,
                        "edge {}-{}: refinement failed ({f}), prior kept",
                        e.from, e.to
                    );
                }
                (None, Some(n)) => {
                    let _ = writeln!(s, "edge {}-{}: refined in {n} iterations", e.from, e.to);
                }
                (None, None) => {}
            }
        }
        match &self.graph {
            Some(g) => {
                let _ = writeln!(
                    s,
                    "pose graph: cost {} -> {} in {} iterations",
                    g.initial_cost, g.final_cost, g.iterations
                );
            }
            None => s.push_str("pose graph: refinement disabled\n"),
        }
        s
    }

    /// `key=value` summary.
    pub fn report_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "keyframes={}", self.keyframes.len());
        for kf in &self.keyframes {
            let id = kf.id;
            let _ = writeln!(s, "keyframe.{id}.correction_a={}", kf.correction[0]);
            let _ = writeln!(s, "keyframe.{id}.correction_b={}", kf.correction[1]);
            let _ = writeln!(
                s,
                "keyframe.{id}.filtered_pixels={}",
                kf.filtered.valid_count()
            );
            if let (Some(f), Some(l)) = (kf.trace.first(), kf.trace.last()) {
                let _ = writeln!(s, "keyframe.{id}.energy_initial={}", f.e_total);
                let _ = writeln!(s, "keyframe.{id}.energy_final={}", l.e_total);
            }
            let _ = writeln!(
                s,
                "keyframe.{id}.consistent_pixels={}",
                kept(&kf.consistent_source)
            );
        }
        for e in &self.edges {
            let status = if e.failure.is_some() {
                "failed"
            } else {
                "refined"
            };
            let _ = writeln!(s, "edge.{}-{}.status={status}", e.from, e.to);
        }
        if let Some(g) = &self.graph {
            let _ = writeln!(s, "graph.initial_cost={}", g.initial_cost);
            let _ = writeln!(s, "graph.final_cost={}", g.final_cost);
            let _ = writeln!(s, "graph.iterations={}", g.iterations);
        }
        s
    }
}

fn kept(source: &Grid<DepthSource>) -> usize {
    source
        .as_slice()
        .iter()
        .filter(|&&s| s != DepthSource::Rejected)
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct AblationEntry {
    filter: bool,
    charbonnier: bool,
    cnn_depth_term: bool,
    pose_refine: bool,
    cnn_grad_term: bool,
    semi_dense_term: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FusedEntry {
    id: u32,
    correction: [f64; 2],
    image: String,
    cnn_corrected: String,
    filtered: String,
    filtered_variance: String,
    dense: String,
    dense_variance: String,
    consistent: String,
    consistent_source: String,
    consistent_variance: String,
    energy: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ResultManifest {
    version: u32,
    intrinsics: IntrinsicsEntry,
    config: String,
    ablation: AblationEntry,
    poses: String,
    input_poses: String,
    keyframes: Vec<FusedEntry>,
    #[serde(default)]
    graph: Option<GraphSummary>,
    #[serde(default)]
    edges: Vec<EdgeSummary>,
}

fn trace_text(trace: &[TraceEntry]) -> String {
    let mut s = String::from("# index e_total e_cnn_grad e_semi_dense [e_cnn_depth]\n");
    for (i, e) in trace.iter().enumerate() {
        let _ = write!(s, "{i} {} {} {}", e.e_total, e.e_cnn_grad, e.e_semi_dense);
        if let Some(d) = e.e_cnn_depth {
            let _ = write!(s, " {d}");
        }
        s.push('\n');
    }
    s
}

fn parse_trace(text: &str, file: &Path) -> Result<Vec<TraceEntry>, CliError> {
    let mut out = Vec::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let offset = line_start;
        line_start += line.len();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let toks: Vec<(usize, &str)> = tokens(line).map(|(o, t)| (o + offset, t)).collect();
        if toks.len() != 4 && toks.len() != 5 {
            return Err(CliError::parse(file, offset, "expected 4 or 5 columns"));
        }
        if toks[0].1 != out.len().to_string() {
            return Err(CliError::parse(
                file,
                toks[0].0,
                "iteration index out of sequence",
            ));
        }
        let v = |i: usize| parse_f64(file, toks[i].0, toks[i].1);
        out.push(TraceEntry {
            e_total: v(1)?,
            e_cnn_grad: v(2)?,
            e_semi_dense: v(3)?,
            e_cnn_depth: if toks.len() == 5 { Some(v(4)?) } else { None },
        });
    }
    Ok(out)
}

pub fn write_result(fused: &FusedBundle, dir: &Path) -> Result<(), CliError> {
    let mut entries = Vec::with_capacity(fused.keyframes.len());
    for kf in &fused.keyframes {
        let base = format!("keyframes/{:06}", kf.id);
        let rel = |name: &str| format!("{base}/{name}");
        let e = FusedEntry {
            id: kf.id,
            correction: kf.correction,
            image: rel("image.pfm"),
            cnn_corrected: rel("cnn_corrected.pfm"),
            filtered: rel("filtered.pfm"),
            filtered_variance: rel("filtered_variance.pfm"),
            dense: rel("dense.pfm"),
            dense_variance: rel("dense_variance.pfm"),
            consistent: rel("consistent.pfm"),
            consistent_source: rel("consistent_source.pfm"),
            consistent_variance: rel("consistent_variance.pfm"),
            energy: rel("energy.txt"),
        };
        pfm::write(&dir.join(&e.image), &kf.image)?;
        pfm::write(&dir.join(&e.cnn_corrected), &kf.cnn_corrected)?;
        pfm::write(&dir.join(&e.filtered), &kf.filtered)?;
        pfm::write(&dir.join(&e.filtered_variance), &kf.filtered_variance)?;
        pfm::write(&dir.join(&e.dense), &kf.dense)?;
        pfm::write(&dir.join(&e.dense_variance), &kf.dense_variance)?;
        pfm::write(&dir.join(&e.consistent), &kf.consistent)?;
        pfm::write(
            &dir.join(&e.consistent_source),
            &kf.consistent_source.map(source_code),
        )?;
        pfm::write(&dir.join(&e.consistent_variance), &kf.consistent_variance)?;
        write_file(&dir.join(&e.energy), trace_text(&kf.trace).as_bytes())?;
        entries.push(e);
    }
    let a = &fused.ablation;
    let manifest = ResultManifest {
        version: RESULT_VERSION,
        intrinsics: intrinsics_entry(&fused.intrinsics),
        config: CONFIG_FILE.into(),
        ablation: AblationEntry {
            filter: a.filter,
            charbonnier: a.charbonnier,
            cnn_depth_term: a.cnn_depth_term,
            pose_refine: a.pose_refine,
            cnn_grad_term: a.cnn_grad_term,
            semi_dense_term: a.semi_dense_term,
        },
        poses: "poses.txt".into(),
        input_poses: "input_poses.txt".into(),
        keyframes: entries,
        graph: fused.graph,
        edges: fused.edges.clone(),
    };
    write_file(
        &dir.join(CONFIG_FILE),
        fused.config.to_key_values().as_bytes(),
    )?;
    write_file(
        &dir.join(&manifest.poses),
        format_poses(&fused.poses).as_bytes(),
    )?;
    write_file(
        &dir.join(&manifest.input_poses),
        format_poses(&fused.input_poses).as_bytes(),
    )?;
    write_file(&dir.join("report.txt"), fused.report_text().as_bytes())?;
    write_file(&dir.join("report.kv"), fused.report_key_values().as_bytes())?;
    write_file(&dir.join(RESULT_FILE), &to_json(&manifest))
}

fn read_f32_map(dir: &Path, rel: &str, dims: (usize, usize)) -> Result<Grid<f32>, CliError> {
    let path = dir.join(rel);
    let g = pfm::read(&path)?;
    if g.dims() != dims {
        return Err(CliError::invalid(
            &path,
            "map size differs from the intrinsics",
        ));
    }
    Ok(g)
}

pub fn read_result(dir: &Path) -> Result<FusedBundle, CliError> {
    let manifest_path = dir.join(RESULT_FILE);
    let m: ResultManifest = read_json(&manifest_path)?;
    if m.version != RESULT_VERSION {
        return Err(CliError::invalid(
            &manifest_path,
            format!("unsupported version {}", m.version),
        ));
    }
    let intrinsics = intrinsics_from_entry(&m.intrinsics, &manifest_path)?;
    let dims = (intrinsics.width, intrinsics.height);
    check_ids(m.keyframes.iter().map(|e| e.id), &manifest_path)?;
    let config_path = dir.join(&m.config);
    let config = parse_config(
        &read_text(&config_path)?,
        &config_path,
        FusionConfig::default(),
    )?;

    let mut keyframes = Vec::with_capacity(m.keyframes.len());
    for e in &m.keyframes {
        let map = |rel: &str| read_f32_map(dir, rel, dims);
        let source_path = dir.join(&e.consistent_source);
        let codes = map(&e.consistent_source)?;
        let mut bad = None;
        let consistent_source = codes.map(|v| {
            source_from_code(v).unwrap_or_else(|| {
                bad.get_or_insert(v);
                DepthSource::Rejected
            })
        });
        if let Some(v) = bad {
            return Err(CliError::invalid(
                &source_path,
                format!("unknown source code {v}"),
            ));
        }
        let energy_path = dir.join(&e.energy);
        keyframes.push(FusedKeyframe {
            id: e.id,
            image: map(&e.image)?,
            correction: e.correction,
            cnn_corrected: map(&e.cnn_corrected)?,
            filtered: map(&e.filtered)?,
            filtered_variance: map(&e.filtered_variance)?,
            dense: map(&e.dense)?,
            dense_variance: map(&e.dense_variance)?,
            consistent: map(&e.consistent)?,
            consistent_source,
            consistent_variance: map(&e.consistent_variance)?,
            trace: parse_trace(&read_text(&energy_path)?, &energy_path)?,
        });
    }
    let read_poses = |rel: &str| -> Result<Vec<(u32, Sim3<f64>)>, CliError> {
        let path = dir.join(rel);
        parse_poses(&read_text(&path)?, &path)
    };
    for e in &m.edges {
        if let Some(c) = &e.constraint {
            pose_from_array(c).map_err(|msg| CliError::invalid(&manifest_path, msg))?;
        }
    }
    let a = m.ablation;
    Ok(FusedBundle {
        intrinsics,
        config,
        ablation: Ablation {
            filter: a.filter,
            charbonnier: a.charbonnier,
            cnn_depth_term: a.cnn_depth_term,
            pose_refine: a.pose_refine,
            cnn_grad_term: a.cnn_grad_term,
            semi_dense_term: a.semi_dense_term,
        },
        keyframes,
        input_poses: read_poses(&m.input_poses)?,
        poses: read_poses(&m.poses)?,
        graph: m.graph,
        edges: m.edges,
    })
}
