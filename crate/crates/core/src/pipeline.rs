//! End-to-end fusion of a keyframe sequence.
//!
//! Per keyframe: scale/shift correction → adaptive filtering → densification
//! → two-view consistency against the previous keyframe → variance
//! composition. Then, once for the whole sequence, consecutive constraints are
//! refined by direct alignment and the pose graph is optimized.

use rayon::prelude::*;

use crate::align::{self, AffineDepthCorrection};
use crate::densify::{self, DensifyOutput, DensifyProblem, EnergyTerms};
use crate::error::{FilterError, PipelineError, PoseError};
use crate::filter::{self, FilterInput, FilteredDepth};
use crate::geometry::{Matrix7, Sim3};
use crate::poserefine::{
    self, ConsistencyView, ConsistentDepth, GraphReport, PoseEdge, PoseGraph, RefineSource,
    RefineTarget, RefinedConstraint,
};
use crate::scalar::Real;
use crate::types::{
    validate_keyframe, FusionConfig, Intrinsics, InverseDepthMap, Keyframe, VarianceMap,
};

/// Stage switches. Every flag is on by default except `cnn_depth_term`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub filter: bool,
    pub charbonnier: bool,
    /// Adds the prediction-consistency term to the energy.
    pub cnn_depth_term: bool,
    pub pose_refine: bool,
    pub cnn_grad_term: bool,
    pub semi_dense_term: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            filter: true,
            charbonnier: true,
            cnn_depth_term: false,
            pose_refine: true,
            cnn_grad_term: true,
            semi_dense_term: true,
        }
    }
}

/// Names accepted by [`Ablation::toggle`].
pub const ABLATION_FLAGS: &[&str] = &[
    "filter",
    "charbonnier",
    "cnn_depth_term",
    "pose_refine",
    "cnn_grad_term",
    "semi_dense_term",
];

impl Ablation {
    /// Flips one flag from its current value. Returns `false` for an
    /// unknown name.
    pub fn toggle(&mut self, name: &str) -> bool {
        let flag = match name {
            "filter" => &mut self.filter,
            "charbonnier" => &mut self.charbonnier,
            "cnn_depth_term" => &mut self.cnn_depth_term,
            "pose_refine" => &mut self.pose_refine,
            "cnn_grad_term" => &mut self.cnn_grad_term,
            "semi_dense_term" => &mut self.semi_dense_term,
            _ => return false,
        };
        *flag = !*flag;
        true
    }

    pub fn energy_terms(&self) -> EnergyTerms {
        EnergyTerms {
            cnn_grad: self.cnn_grad_term,
            semi_dense: self.semi_dense_term,
            charbonnier: self.charbonnier,
            cnn_depth: self.cnn_depth_term,
        }
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "filter={}\ncharbonnier={}\ncnn_depth_term={}\npose_refine={}\ncnn_grad_term={}\nsemi_dense_term={}\n",
            self.filter,
            self.charbonnier,
            self.cnn_depth_term,
            self.pose_refine,
            self.cnn_grad_term,
            self.semi_dense_term
        )
    }
}

/// Everything computed for one keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeResult<T: Real> {
    pub id: u32,
    pub correction: AffineDepthCorrection<T>,
    pub cnn_corrected: InverseDepthMap<T>,
    /// Semi-dense map and variance fed to densification (raw when the
    /// filter is bypassed).
    pub filtered: FilteredDepth<T>,
    pub dense: InverseDepthMap<T>,
    /// Pose-uncertainty variance of the dense map.
    pub dense_variance: VarianceMap<T>,
    pub densify: DensifyOutput<T>,
    pub consistent: ConsistentDepth<T>,
    pub consistent_variance: VarianceMap<T>,
}

/// Outcome of refining one consecutive constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRefinement<T: Real> {
    pub from: u32,
    pub to: u32,
    /// `None` when refinement failed and the unrefined relative pose was kept.
    pub refined: Option<RefinedConstraint<T>>,
    pub failure: Option<PoseError>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult<T: Real> {
    pub keyframes: Vec<KeyframeResult<T>>,
    pub input_poses: Vec<(u32, Sim3<T>)>,
    /// Optimized graph; `None` when pose refinement is bypassed.
    pub graph: Option<PoseGraph<T>>,
    pub graph_report: Option<GraphReport<T>>,
    pub refinements: Vec<EdgeRefinement<T>>,
}

impl<T: Real> PipelineResult<T> {
    /// Final camera-to-world poses, in keyframe order.
    pub fn poses(&self) -> Vec<(u32, Sim3<T>)> {
        match &self.graph {
            Some(g) => g.nodes.clone(),
            None => self.input_poses.clone(),
        }
    }
}

/// Extra pose-graph edge given by the caller, e.g. a loop closure.
pub type LoopEdge<T> = PoseEdge<T>;

/// Information assigned to an edge whose refinement failed: the inverse of
/// the sum of both keyframe covariances when invertible, identity otherwise.
fn fallback_information<T: Real>(a: &Matrix7<T>, b: &Matrix7<T>) -> Matrix7<T> {
    (a + b).try_inverse().unwrap_or_else(Matrix7::identity)
}

/// Per-keyframe stages that do not depend on any other keyframe.
struct Independent<T: Real> {
    correction: AffineDepthCorrection<T>,
    cnn_corrected: InverseDepthMap<T>,
    filtered: FilteredDepth<T>,
    densify: DensifyOutput<T>,
}

fn independent_stages<T: Real>(
    kf: &Keyframe<T>,
    cfg: &FusionConfig<T>,
    ablation: &Ablation,
) -> Result<Independent<T>, PipelineError> {
    let id = kf.id;
    let correction = align::solve_scale_shift(&kf.cnn_depth, &kf.semi_dense)
        .map_err(|source| PipelineError::Align { id, source })?;
    let cnn_corrected = align::apply_correction(&kf.cnn_depth, &correction, cfg.min_inverse_depth);

    let filtered = if ablation.filter {
        let out = filter::adaptive_filter(&FilterInput::new(kf, &cnn_corrected), cfg);
        match filter::rescale_variance(&out, &kf.semi_dense, &kf.semi_dense_var) {
            Ok(variance) => FilteredDepth {
                depth: out.depth,
                variance,
            },
            Err(FilterError::ZeroMeanVariance | FilterError::NoValidPixel) => out,
        }
    } else {
        FilteredDepth {
            depth: kf.semi_dense.clone(),
            variance: kf.semi_dense_var.clone(),
        }
    };

    let problem = DensifyProblem::new(
        &filtered.depth,
        &filtered.variance,
        &cnn_corrected,
        cfg,
        ablation.energy_terms(),
    );
    let densify =
        densify::densify(&problem).map_err(|source| PipelineError::Densify { id, source })?;
    Ok(Independent {
        correction,
        cnn_corrected,
        filtered,
        densify,
    })
}

/// Runs the whole pipeline. Keyframes are processed concurrently on the
/// current rayon pool; results do not depend on the number of threads.
pub fn run<T: Real>(
    keyframes: &[Keyframe<T>],
    k: &Intrinsics<T>,
    cfg: &FusionConfig<T>,
    ablation: &Ablation,
    loop_edges: &[LoopEdge<T>],
) -> Result<PipelineResult<T>, PipelineError> {
    cfg.validate()?;
    k.validate()?;
    if keyframes.is_empty() {
        return Err(PipelineError::NoKeyframes);
    }
    for kf in keyframes {
        let v = validate_keyframe(kf);
        if let Some(first) = v.first() {
            return Err(PipelineError::InvalidKeyframe {
                id: kf.id,
                count: v.len(),
                first: first.to_string(),
            });
        }
    }

    let stage1: Vec<Independent<T>> = keyframes
        .par_iter()
        .map(|kf| independent_stages(kf, cfg, ablation))
        .collect::<Result<_, _>>()?;

    let keyframe_results: Vec<KeyframeResult<T>> = (0..keyframes.len())
        .into_par_iter()
        .map(|i| {
            let kf = &keyframes[i];
            let cur = &stage1[i];
            // Pose uncertainty is propagated through the motion to the
            // previous keyframe (identity for the first one).
            let s_rel = if i == 0 {
                Sim3::identity()
            } else {
                Sim3::relative(&kf.pose, &keyframes[i - 1].pose)
            };
            let dense = cur.densify.depth.clone();
            let dense_variance = poserefine::pose_uncertainty_map(&dense, &s_rel, &kf.pose_cov, k);
            let cur_view = ConsistencyView {
                semi_dense: &cur.filtered.depth,
                dense: &dense,
                pose: &kf.pose,
            };
            let consistent = if i == 0 {
                let empty = InverseDepthMap::filled(dense.width(), dense.height(), T::zero());
                let none = ConsistencyView {
                    semi_dense: &empty,
                    dense: &empty,
                    pose: &kf.pose,
                };
                poserefine::two_view_consistent(&cur_view, &none, k, cfg.tau_e)
            } else {
                let prev = &stage1[i - 1];
                let prev_view = ConsistencyView {
                    semi_dense: &prev.filtered.depth,
                    dense: &prev.densify.depth,
                    pose: &keyframes[i - 1].pose,
                };
                poserefine::two_view_consistent(&cur_view, &prev_view, k, cfg.tau_e)
            };
            let consistent_variance = poserefine::compose_consistent_variance(
                &consistent,
                &cur.filtered.variance,
                &dense_variance,
            )
            .map_err(|source| PipelineError::Pose { id: kf.id, source })?;
            Ok(KeyframeResult {
                id: kf.id,
                correction: cur.correction,
                cnn_corrected: cur.cnn_corrected.clone(),
                filtered: cur.filtered.clone(),
                dense,
                dense_variance,
                densify: cur.densify.clone(),
                consistent,
                consistent_variance,
            })
        })
        .collect::<Result<_, PipelineError>>()?;

    let input_poses: Vec<(u32, Sim3<T>)> = keyframes.iter().map(|kf| (kf.id, kf.pose)).collect();
    if !ablation.pose_refine {
        return Ok(PipelineResult {
            keyframes: keyframe_results,
            input_poses,
            graph: None,
            graph_report: None,
            refinements: Vec::new(),
        });
    }

    // Constraint of edge (i−1, i) maps camera i into camera i−1.
    let refinements: Vec<EdgeRefinement<T>> = (1..keyframes.len())
        .into_par_iter()
        .map(|i| {
            let (kf, prev) = (&keyframes[i], &keyframes[i - 1]);
            let (cur_r, prev_r) = (&keyframe_results[i], &keyframe_results[i - 1]);
            let source = RefineSource {
                image: &kf.image,
                depth: &cur_r.consistent.depth,
                variance: &cur_r.consistent_variance,
            };
            let target = RefineTarget {
                image: &prev.image,
                depth: &prev_r.dense,
            };
            let init = Sim3::relative(&kf.pose, &prev.pose);
            match poserefine::refine_constraint(&source, &target, k, &init, cfg) {
                Ok(r) => EdgeRefinement {
                    from: prev.id,
                    to: kf.id,
                    refined: Some(r),
                    failure: None,
                },
                Err(e) => EdgeRefinement {
                    from: prev.id,
                    to: kf.id,
                    refined: None,
                    failure: Some(e),
                },
            }
        })
        .collect();

    let mut edges: Vec<PoseEdge<T>> = refinements
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let (prev, kf) = (&keyframes[j], &keyframes[j + 1]);
            match &r.refined {
                Some(c) => PoseEdge {
                    from: r.from,
                    to: r.to,
                    constraint: c.pose,
                    information: c.information,
                },
                None => PoseEdge {
                    from: r.from,
                    to: r.to,
                    constraint: Sim3::relative(&kf.pose, &prev.pose),
                    information: fallback_information(&prev.pose_cov, &kf.pose_cov),
                },
            }
        })
        .collect();
    edges.extend(loop_edges.iter().cloned());
    let graph = PoseGraph {
        nodes: input_poses.clone(),
        edges,
    };
    let (graph, report) =
        poserefine::optimize_pose_graph(&graph, keyframes[0].id).map_err(|source| {
            PipelineError::Pose {
                id: keyframes[0].id,
                source,
            }
        })?;
    Ok(PipelineResult {
        keyframes: keyframe_results,
        input_poses,
        graph: Some(graph),
        graph_report: Some(report),
        refinements,
    })
}
