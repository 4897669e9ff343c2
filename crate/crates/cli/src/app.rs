//! Command-line surface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use densefuse_core::metrics::{ate, DepthReport, ScaleMode};
use densefuse_core::pipeline;
use densefuse_core::{FusionConfig, Grid, Sim3};
use densefuse_synth::{make_bundle, perturb_poses, standard_noise, standard_scene, SynthSpec};

use crate::bundle::{read_bundle, write_bundle, Bundle, GroundTruth};
use crate::config::{apply_sets, parse_ablation, parse_config};
use crate::error::{read_text, write_file, CliError};
use crate::manifest::{read_json, MANIFEST_FILE};
use crate::ply::{cloud, write_ply_file};
use crate::result::{read_result, write_result, FusedBundle, RESULT_FILE};

#[derive(Parser, Debug)]
#[command(
    name = "densefuse",
    version,
    about = "Dense inverse-depth fusion for monocular SLAM keyframes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene into a keyframe bundle with ground truth.
    Synth {
        /// JSON scene and noise description; the standard scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the spec.
        #[arg(long)]
        seed: Option<u64>,
        /// Perturbs keyframe poses by exp(ξ), ξ ~ N(0, σ²I); ground truth is kept.
        #[arg(long, default_value_t = 0.0)]
        pose_noise: f64,
    },
    /// Fuse a bundle: correct, filter, densify, check consistency, refine poses.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// key=value file overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// key=value override, applied after --config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Comma-separated stage switches to flip from their defaults.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
        /// Worker threads; all available cores when omitted.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score fused depth maps and poses against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Scale::None)]
        scale: Scale,
        /// Relative depth error below which a pixel counts as correct.
        #[arg(long, default_value_t = 0.1)]
        rel_tol: f64,
        /// Also write the report as key=value lines to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Back-project every keyframe into one ASCII point cloud.
    ExportCloud {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Scale {
    None,
    #[value(name = "per_map_ls")]
    PerMapLs,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr, reports to stdout.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("densefuse: {e}");
            if matches!(e, CliError::Usage { .. }) {
                eprintln!("run `densefuse --help` for usage");
            }
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Synth {
            spec,
            out,
            seed,
            pose_noise,
        } => synth(spec.as_deref(), &out, seed, pose_noise),
        Command::Fuse {
            input,
            out,
            config,
            sets,
            ablate,
            threads,
        } => fuse(&input, &out, config.as_deref(), &sets, &ablate, threads),
        Command::Eval {
            est,
            gt,
            scale,
            rel_tol,
            report,
        } => {
            let mode = match scale {
                Scale::None => ScaleMode::None,
                Scale::PerMapLs => ScaleMode::PerMapLs,
            };
            eval(&est, &gt, mode, rel_tol, report.as_deref())
        }
        Command::ExportCloud { input, out } => export_cloud(&input, &out),
    }
}

pub fn synth(
    spec: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    pose_noise: f64,
) -> Result<String, CliError> {
    let mut spec = match spec {
        Some(path) => read_json::<SynthSpec>(path)?,
        None => SynthSpec {
            scene: standard_scene(),
            noise: standard_noise(),
        },
    };
    if let Some(s) = seed {
        spec.scene.seed = s;
    }
    if !(pose_noise >= 0.0 && pose_noise.is_finite()) {
        return Err(CliError::usage(
            "--pose-noise must be a finite non-negative number",
        ));
    }
    let sb = make_bundle(&spec.scene, &spec.noise)?;
    let mut keyframes = sb.keyframes;
    if pose_noise > 0.0 {
        let noisy = perturb_poses(&sb.gt_poses, pose_noise, spec.scene.seed);
        for (kf, p) in keyframes.iter_mut().zip(noisy) {
            kf.pose = p;
        }
    }
    let ids: Vec<u32> = keyframes.iter().map(|k| k.id).collect();
    let bundle = Bundle {
        intrinsics: sb.intrinsics,
        ground_truth: Some(GroundTruth {
            poses: ids.iter().copied().zip(sb.gt_poses).collect(),
            depth: ids.iter().copied().zip(sb.gt_depth).collect(),
        }),
        keyframes,
        loop_edges: Vec::new(),
    };
    write_bundle(&bundle, out)?;
    Ok(format!(
        "wrote {} keyframes to {}\n",
        bundle.keyframes.len(),
        out.display()
    ))
}

pub fn fuse(
    input: &Path,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
    ablate: &[String],
    threads: Option<usize>,
) -> Result<String, CliError> {
    let ablation = parse_ablation(ablate)?;
    let mut cfg = FusionConfig::default();
    if let Some(path) = config {
        cfg = parse_config(&read_text(path)?, path, cfg)?;
    }
    let cfg = apply_sets(cfg, sets)?;
    if threads == Some(0) {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let bundle = read_bundle(input)?;
    let run = || {
        pipeline::run(
            &bundle.keyframes,
            &bundle.intrinsics,
            &cfg,
            &ablation,
            &bundle.loop_edges,
        )
    };
    let result = match threads {
        None => run()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage(format!("cannot start {n} threads: {e}")))?
            .install(run)?,
    };
    let fused = FusedBundle::from_result(&result, &bundle, &cfg, &ablation);
    write_result(&fused, out)?;
    Ok(fused.report_text())
}

fn to_f64(g: &Grid<f32>) -> Grid<f64> {
    g.cast()
}

fn match_poses(
    est: &[(u32, Sim3<f64>)],
    gt: &[(u32, Sim3<f64>)],
) -> (Vec<Sim3<f64>>, Vec<Sim3<f64>>) {
    est.iter()
        .filter_map(|(id, p)| gt.iter().find(|(g, _)| g == id).map(|(_, q)| (*p, *q)))
        .unzip()
}

pub fn eval(
    est: &Path,
    gt: &Path,
    mode: ScaleMode,
    rel_tol: f64,
    report: Option<&Path>,
) -> Result<String, CliError> {
    let fused = read_result(est)?;
    let truth = read_bundle(gt)?;
    let gt_path = gt.join(MANIFEST_FILE);
    let Some(ground) = &truth.ground_truth else {
        return Err(CliError::invalid(&gt_path, "bundle has no ground truth"));
    };
    let mut maps = Vec::new();
    for kf in &fused.keyframes {
        let g = truth.gt_depth(kf.id).ok_or_else(|| {
            CliError::invalid(
                &gt_path,
                format!("no ground-truth depth for keyframe {}", kf.id),
            )
        })?;
        maps.push((kf.id, to_f64(&kf.dense), to_f64(&kf.cnn_corrected), g));
    }
    let dense: Vec<_> = maps.iter().map(|(id, d, _, g)| (*id, d, *g)).collect();
    let corrected: Vec<_> = maps.iter().map(|(id, _, c, g)| (*id, c, *g)).collect();
    let dense_report = DepthReport::evaluate(&dense, rel_tol, mode)?;
    let cnn_report = DepthReport::evaluate(&corrected, rel_tol, mode)?;

    let mut text = String::from("dense maps: ");
    text.push_str(&dense_report.to_text());
    let _ = writeln!(
        text,
        "corrected prediction mean: {:.3}%",
        cnn_report.mean_percent
    );
    let mut kv = dense_report.to_key_values();
    let _ = writeln!(
        kv,
        "corrected_prediction.mean_percent={}",
        cnn_report.mean_percent
    );
    if ground.poses.len() >= 3 {
        let (before, g0) = match_poses(&fused.input_poses, &ground.poses);
        let (after, g1) = match_poses(&fused.poses, &ground.poses);
        let ate_before = ate(&before, &g0)?;
        let ate_after = ate(&after, &g1)?;
        let _ = writeln!(text, "ATE input poses: {ate_before:.6}");
        let _ = writeln!(text, "ATE final poses: {ate_after:.6}");
        let _ = writeln!(kv, "ate_input={ate_before}\nate_final={ate_after}");
    }
    if let Some(path) = report {
        write_file(path, kv.as_bytes())?;
    }
    Ok(text)
}

pub fn export_cloud(input: &Path, out: &Path) -> Result<String, CliError> {
    let mut vertices = Vec::new();
    if input.join(RESULT_FILE).exists() {
        let fused = read_result(input)?;
        let k = fused.intrinsics;
        for kf in &fused.keyframes {
            let pose = fused
                .poses
                .iter()
                .find(|(id, _)| *id == kf.id)
                .map(|(_, p)| *p)
                .ok_or_else(|| {
                    CliError::invalid(
                        &input.join(RESULT_FILE),
                        format!("no pose for keyframe {}", kf.id),
                    )
                })?;
            vertices.extend(cloud(&to_f64(&kf.dense), &to_f64(&kf.image), &pose, &k));
        }
    } else {
        let bundle = read_bundle(input)?;
        for kf in &bundle.keyframes {
            vertices.extend(cloud(
                &kf.semi_dense,
                &kf.image,
                &kf.pose,
                &bundle.intrinsics,
            ));
        }
    }
    write_ply_file(out, &vertices)?;
    Ok(format!(
        "wrote {} vertices to {}\n",
        vertices.len(),
        out.display()
    ))
}
