//! Two-view consistency, pose-uncertainty propagation, constraint refinement
//! by direct alignment, and pose-graph optimization.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::error::PoseError;
use crate::geometry::{self, skew, Matrix7, Sim3, Vector7};
use crate::scalar::Real;
use crate::types::{FusionConfig, GrayImage, Grid, Intrinsics, InverseDepthMap, VarianceMap};

/// Origin of a pixel of the two-view consistent map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DepthSource {
    SemiDense,
    Densified,
    Rejected,
}

/// Two-view consistent inverse depth with a per-pixel source tag. Pixels that
/// had no value at all are tagged [`DepthSource::Rejected`] as well.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistentDepth<T> {
    pub depth: InverseDepthMap<T>,
    pub source: Grid<DepthSource>,
}

impl<T: Real> ConsistentDepth<T> {
    pub fn kept_count(&self) -> usize {
        self.source
            .as_slice()
            .iter()
            .filter(|&&s| s != DepthSource::Rejected)
            .count()
    }
}

/// The maps of one keyframe that take part in the consistency check.
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyView<'a, T: Real> {
    /// Filtered semi-dense inverse depth.
    pub semi_dense: &'a InverseDepthMap<T>,
    /// Densified inverse depth.
    pub dense: &'a InverseDepthMap<T>,
    /// Camera-to-world pose.
    pub pose: &'a Sim3<T>,
}

/// Semi-dense values where present, densified values elsewhere.
fn combined<T: Real>(v: &ConsistencyView<'_, T>) -> (InverseDepthMap<T>, InverseDepthMap<T>) {
    let dense_only = Grid::from_fn(v.dense.width(), v.dense.height(), |x, y| {
        if v.semi_dense.get(x, y) > T::zero() {
            T::zero()
        } else {
            v.dense.get(x, y)
        }
    });
    (v.semi_dense.clone(), dense_only)
}

/// Checks the current keyframe against the previous one.
///
/// The previous semi-dense map and its densified map (semi-dense pixels
/// excluded) are warped separately into the current view; where both land
/// on a pixel the nearer one is the prediction. A current value differing
/// from the prediction by `tau_e` or more is rejected; current values with
/// no prediction are kept.
pub fn two_view_consistent<T: Real>(
    cur: &ConsistencyView<'_, T>,
    prev: &ConsistencyView<'_, T>,
    k: &Intrinsics<T>,
    tau_e: T,
) -> ConsistentDepth<T> {
    assert!(cur.semi_dense.same_dims(cur.dense) && cur.dense.same_dims(prev.dense));
    let prev_to_cur = Sim3::relative(prev.pose, cur.pose);
    let (prev_semi, prev_dense) = combined(prev);
    let warped_semi = geometry::warp_depth_map(&prev_semi, &prev_to_cur, k);
    let warped_dense = geometry::warp_depth_map(&prev_dense, &prev_to_cur, k);

    let (w, h) = cur.dense.dims();
    let mut depth = InverseDepthMap::filled(w, h, T::zero());
    let mut source = Grid::filled(w, h, DepthSource::Rejected);
    for y in 0..h {
        for x in 0..w {
            let (value, tag) = if cur.semi_dense.get(x, y) > T::zero() {
                (cur.semi_dense.get(x, y), DepthSource::SemiDense)
            } else if cur.dense.get(x, y) > T::zero() {
                (cur.dense.get(x, y), DepthSource::Densified)
            } else {
                continue;
            };
            let predicted = warped_semi.get(x, y).max(warped_dense.get(x, y));
            if predicted > T::zero() && (value - predicted).abs() >= tau_e {
                continue;
            }
            depth.set(x, y, value);
            source.set(x, y, tag);
        }
    }
    ConsistentDepth { depth, source }
}

/// Derivative of the warped inverse depth `1/q_z`, `q = exp(δ)·S_rel·p`, with
/// respect to the left-perturbation tangent `δ` at zero.
pub fn warped_depth_jacobian<T: Real>(
    d: T,
    px: (T, T),
    s_rel: &Sim3<T>,
    k: &Intrinsics<T>,
) -> SMatrix<T, 1, 7> {
    let q = s_rel.transform_point(&geometry::backproject(px, d, k));
    let c = -T::one() / (q.z * q.z);
    let z = T::zero();
    SMatrix::<T, 1, 7>::from_row_slice(&[z, z, c, c * q.y, -c * q.x, z, c * q.z])
}

/// First-order variance of the warped inverse depth, `J_d·Σ·J_dᵀ`.
pub fn propagate_pose_uncertainty<T: Real>(
    d: T,
    px: (T, T),
    s_rel: &Sim3<T>,
    cov: &Matrix7<T>,
    k: &Intrinsics<T>,
) -> T {
    let j = warped_depth_jacobian(d, px, s_rel, k);
    let v = (j * cov * j.transpose())[(0, 0)];
    v.max(T::zero())
}

/// Pose-uncertainty variance of every valid pixel of a dense map.
pub fn pose_uncertainty_map<T: Real>(
    depth: &InverseDepthMap<T>,
    s_rel: &Sim3<T>,
    cov: &Matrix7<T>,
    k: &Intrinsics<T>,
) -> VarianceMap<T> {
    Grid::from_fn(depth.width(), depth.height(), |x, y| {
        let d = depth.get(x, y);
        if d > T::zero() {
            propagate_pose_uncertainty(d, (T::from_count(x), T::from_count(y)), s_rel, cov, k)
        } else {
            T::zero()
        }
    })
}

/// Picks each kept pixel's variance from the map matching its source tag.
pub fn compose_consistent_variance<T: Real>(
    cd: &ConsistentDepth<T>,
    v_semi: &VarianceMap<T>,
    v_opt: &VarianceMap<T>,
) -> Result<VarianceMap<T>, PoseError> {
    assert!(cd.depth.same_dims(v_semi) && cd.depth.same_dims(v_opt));
    let mut out = VarianceMap::filled(cd.depth.width(), cd.depth.height(), T::zero());
    for (x, y, tag) in cd.source.pixels() {
        let v = match tag {
            DepthSource::Rejected => continue,
            DepthSource::SemiDense => v_semi.get(x, y),
            DepthSource::Densified => v_opt.get(x, y),
        };
        if !(v >= T::zero()) || !v.is_finite_val() {
            return Err(PoseError::MissingVariance { x, y });
        }
        out.set(x, y, v);
    }
    Ok(out)
}

/// Source side of a direct alignment: intensities plus depth and variance.
#[derive(Clone, Copy, Debug)]
pub struct RefineSource<'a, T: Real> {
    pub image: &'a GrayImage<T>,
    pub depth: &'a InverseDepthMap<T>,
    pub variance: &'a VarianceMap<T>,
}

/// Target side of a direct alignment. Depth may be entirely invalid, in
/// which case only photometric residuals are used.
#[derive(Clone, Copy, Debug)]
pub struct RefineTarget<'a, T: Real> {
    pub image: &'a GrayImage<T>,
    pub depth: &'a InverseDepthMap<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinedConstraint<T: Real> {
    /// Source-camera to target-camera similarity.
    pub pose: Sim3<T>,
    /// Gauss-Newton Hessian `JᵀWJ` at the solution.
    pub information: Matrix7<T>,
    /// Gauss-Newton iterations summed over all pyramid levels.
    pub iterations: usize,
}

/// Number of pyramid levels used by [`refine_constraint`]; coarser levels
/// are skipped once the image would be narrower than [`MIN_LEVEL_WIDTH`].
pub const PYRAMID_LEVELS: usize = 3;
pub const MIN_LEVEL_WIDTH: usize = 40;
/// Consecutive rejected (energy-increasing) steps that end a pyramid level.
pub const MAX_CONSECUTIVE_INCREASES: usize = 5;

struct Level<T: Real> {
    src_image: GrayImage<T>,
    src_depth: InverseDepthMap<T>,
    src_var: VarianceMap<T>,
    tgt_image: GrayImage<T>,
    tgt_depth: InverseDepthMap<T>,
    k: Intrinsics<T>,
}

fn downsample<T: Real>(g: &Grid<T>, valid_only: bool) -> Grid<T> {
    let (w, h) = (g.width() / 2, g.height() / 2);
    Grid::from_fn(w, h, |x, y| {
        let mut sum = T::zero();
        let mut n = 0usize;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let v = g.get(2 * x + dx, 2 * y + dy);
            if !valid_only || v > T::zero() {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            T::zero()
        } else {
            sum / T::from_count(n)
        }
    })
}

fn pyramid<T: Real>(
    src: &RefineSource<'_, T>,
    tgt: &RefineTarget<'_, T>,
    k: &Intrinsics<T>,
) -> Vec<Level<T>> {
    let mut levels = vec![Level {
        src_image: src.image.clone(),
        src_depth: src.depth.clone(),
        src_var: src.variance.clone(),
        tgt_image: tgt.image.clone(),
        tgt_depth: tgt.depth.clone(),
        k: *k,
    }];
    let half = T::lit(0.5);
    while levels.len() < PYRAMID_LEVELS {
        let last = levels.last().unwrap();
        if last.src_image.width() / 2 < MIN_LEVEL_WIDTH || last.src_image.height() / 2 < 4 {
            break;
        }
        let k = Intrinsics {
            fx: last.k.fx * half,
            fy: last.k.fy * half,
            cx: (last.k.cx - half) * half,
            cy: (last.k.cy - half) * half,
            width: last.k.width / 2,
            height: last.k.height / 2,
        };
        let next = Level {
            src_image: downsample(&last.src_image, false),
            src_depth: downsample(&last.src_depth, true),
            src_var: downsample(&last.src_var, true),
            tgt_image: downsample(&last.tgt_image, false),
            tgt_depth: downsample(&last.tgt_depth, true),
            k,
        };
        levels.push(next);
    }
    levels
}

/// Bilinear sample; `None` outside `[0, w−1] × [0, h−1]`, or when
/// `valid_only` and any corner is non-positive.
pub fn bilinear<T: Real>(g: &Grid<T>, u: T, v: T, valid_only: bool) -> Option<T> {
    let (w, h) = g.dims();
    if w < 2 || h < 2 || !(u >= T::zero() && v >= T::zero()) {
        return None;
    }
    if u > T::from_count(w - 1) || v > T::from_count(h - 1) {
        return None;
    }
    let x0 = (u.floor().to_f64() as usize).min(w - 2);
    let y0 = (v.floor().to_f64() as usize).min(h - 2);
    let fx = u - T::from_count(x0);
    let fy = v - T::from_count(y0);
    let (a, b, c, d) = (
        g.get(x0, y0),
        g.get(x0 + 1, y0),
        g.get(x0, y0 + 1),
        g.get(x0 + 1, y0 + 1),
    );
    if valid_only && !(a > T::zero() && b > T::zero() && c > T::zero() && d > T::zero()) {
        return None;
    }
    let one = T::one();
    Some((a * (one - fx) + b * fx) * (one - fy) + (c * (one - fx) + d * fx) * fy)
}

/// Value and central-difference gradient of the bilinear interpolant.
fn sample_with_gradient<T: Real>(g: &Grid<T>, u: T, v: T, valid_only: bool) -> Option<(T, T, T)> {
    let one = T::one();
    let half = T::lit(0.5);
    let c = bilinear(g, u, v, valid_only)?;
    let gx = (bilinear(g, u + one, v, valid_only)? - bilinear(g, u - one, v, valid_only)?) * half;
    let gy = (bilinear(g, u, v + one, valid_only)? - bilinear(g, u, v - one, valid_only)?) * half;
    Some((c, gx, gy))
}

struct Linearization<T: Real> {
    h: Matrix7<T>,
    b: Vector7<T>,
    energy: T,
    residuals: usize,
    photometric_usable: usize,
}

fn huber<T: Real>(r: T, delta: T) -> (T, T) {
    let a = r.abs();
    if a <= delta {
        (r * r * T::lit(0.5), T::one())
    } else {
        (delta * (a - delta * T::lit(0.5)), delta / a)
    }
}

fn linearize<T: Real>(level: &Level<T>, s: &Sim3<T>, cfg: &FusionConfig<T>) -> Linearization<T> {
    let k = &level.k;
    let sr = s.rotation_matrix() * s.scale();
    let mut h = Matrix7::zeros();
    let mut b = Vector7::zeros();
    let mut energy = T::zero();
    let mut residuals = 0usize;
    let mut photometric_usable = 0usize;
    for (x, y, d) in level.src_depth.pixels() {
        if d <= T::zero() {
            continue;
        }
        let p = geometry::backproject((T::from_count(x), T::from_count(y)), d, k);
        let q = sr * p + s.translation();
        if q.z <= T::zero() {
            continue;
        }
        let inv_z = T::one() / q.z;
        let u = k.fx * q.x * inv_z + k.cx;
        let v = k.fy * q.y * inv_z + k.cy;
        // ∂q/∂δ for the right perturbation S·exp(δ): sR·[I, −[p]×, p].
        let mut dq = SMatrix::<T, 3, 7>::zeros();
        dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&sr);
        dq.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-(sr * skew(&p))));
        dq.fixed_view_mut::<3, 1>(0, 6).copy_from(&(sr * p));
        let mut dpi = SMatrix::<T, 2, 3>::zeros();
        dpi[(0, 0)] = k.fx * inv_z;
        dpi[(0, 2)] = -k.fx * q.x * inv_z * inv_z;
        dpi[(1, 1)] = k.fy * inv_z;
        dpi[(1, 2)] = -k.fy * q.y * inv_z * inv_z;
        let duv = dpi * dq;

        if let Some((i_t, gx, gy)) = sample_with_gradient(&level.tgt_image, u, v, false) {
            let r = i_t - level.src_image.get(x, y);
            let j = duv.row(0) * gx + duv.row(1) * gy;
            let (rho, w) = huber(r, cfg.huber_delta);
            h += j.transpose() * j * w;
            b += j.transpose() * (w * r);
            energy += rho;
            residuals += 1;
            if gx != T::zero() || gy != T::zero() {
                photometric_usable += 1;
            }
        }
        if let Some((d_t, gx, gy)) = sample_with_gradient(&level.tgt_depth, u, v, true) {
            let r = d_t - inv_z;
            let w = T::one() / (level.src_var.get(x, y) + cfg.min_variance);
            let j = duv.row(0) * gx + duv.row(1) * gy + dq.row(2) * (inv_z * inv_z);
            h += j.transpose() * j * w;
            b += j.transpose() * (w * r);
            energy += T::lit(0.5) * w * r * r;
            residuals += 1;
        }
    }
    Linearization {
        h,
        b,
        energy,
        residuals,
        photometric_usable,
    }
}

fn mean_energy<T: Real>(l: &Linearization<T>) -> T {
    if l.residuals == 0 {
        T::zero()
    } else {
        l.energy / T::from_count(l.residuals)
    }
}

/// Direct Sim(3) alignment of `source` (pixels with valid depth) onto
/// `target`, starting from `init` (source-camera to target-camera).
///
/// Coarse-to-fine Gauss-Newton on the right-perturbation tangent with
/// Huber-weighted photometric residuals and inverse-depth residuals
/// weighted by `1/(V + min_variance)`. A step that raises the energy is
/// rejected and damping increased; five consecutive rejections end a level.
/// The result is `Diverged` if the full-resolution energy ends above its
/// value at `init`.
pub fn refine_constraint<T: Real>(
    source: &RefineSource<'_, T>,
    target: &RefineTarget<'_, T>,
    k: &Intrinsics<T>,
    init: &Sim3<T>,
    cfg: &FusionConfig<T>,
) -> Result<RefinedConstraint<T>, PoseError> {
    assert!(source.image.same_dims(target.image) && source.depth.same_dims(source.image));
    let levels = pyramid(source, target, k);
    let at_init = linearize(&levels[0], init, cfg);
    if at_init.photometric_usable < cfg.refine_min_residuals {
        return Err(PoseError::InsufficientOverlap {
            usable: at_init.photometric_usable,
            required: cfg.refine_min_residuals,
        });
    }

    let mut pose = *init;
    let mut total_iterations = 0usize;
    for level in levels.iter().rev() {
        let mut lin = linearize(level, &pose, cfg);
        let mut damping = T::zero();
        let mut increases = 0usize;
        for _ in 0..cfg.refine_iterations {
            total_iterations += 1;
            let mut a = lin.h;
            for i in 0..7 {
                a[(i, i)] += damping * lin.h[(i, i)].max(T::lit(1e-12));
            }
            let Some(delta) = a.cholesky().map(|c| -c.solve(&lin.b)) else {
                damping = if damping == T::zero() {
                    T::lit(1e-4)
                } else {
                    damping * T::lit(10.0)
                };
                increases += 1;
                if increases >= MAX_CONSECUTIVE_INCREASES {
                    break;
                }
                continue;
            };
            if delta.norm() < cfg.refine_tolerance {
                break;
            }
            let candidate = pose.compose(&Sim3::exp(&delta));
            let next = linearize(level, &candidate, cfg);
            if next.residuals > 0 && mean_energy(&next) <= mean_energy(&lin) {
                pose = candidate;
                lin = next;
                increases = 0;
                damping *= T::lit(0.5);
                if damping < T::lit(1e-8) {
                    damping = T::zero();
                }
            } else {
                increases += 1;
                if increases >= MAX_CONSECUTIVE_INCREASES {
                    break;
                }
                damping = if damping == T::zero() {
                    T::lit(1e-4)
                } else {
                    damping * T::lit(10.0)
                };
            }
        }
    }
    let final_lin = linearize(&levels[0], &pose, cfg);
    let (e0, e1) = (mean_energy(&at_init), mean_energy(&final_lin));
    if final_lin.residuals == 0 || !e1.is_finite_val() || e1 > e0 {
        return Err(PoseError::Diverged {
            iterations: total_iterations,
        });
    }
    Ok(RefinedConstraint {
        pose,
        information: final_lin.h,
        iterations: total_iterations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEdge<T: Real> {
    pub from: u32,
    pub to: u32,
    /// Expected `T_from⁻¹·T_to`.
    pub constraint: Sim3<T>,
    pub information: Matrix7<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph<T: Real> {
    pub nodes: Vec<(u32, Sim3<T>)>,
    pub edges: Vec<PoseEdge<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphReport<T> {
    pub initial_cost: T,
    pub final_cost: T,
    pub iterations: usize,
}

pub const GRAPH_MAX_ITERATIONS: usize = 100;
pub const GRAPH_RELATIVE_TOLERANCE: f64 = 1e-9;
pub const GRAPH_INITIAL_DAMPING: f64 = 1e-4;
const JACOBIAN_STEP: f64 = 1e-6;

impl<T: Real> PoseGraph<T> {
    pub fn pose(&self, id: u32) -> Option<&Sim3<T>> {
        self.nodes.iter().find(|(n, _)| *n == id).map(|(_, p)| p)
    }

    fn index(&self) -> HashMap<u32, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (*id, i))
            .collect()
    }

    /// Unknown edge endpoints first, then connectivity.
    pub fn check(&self) -> Result<(), PoseError> {
        let index = self.index();
        for e in &self.edges {
            for id in [e.from, e.to] {
                if !index.contains_key(&id) {
                    return Err(PoseError::UnknownNode(id));
                }
            }
        }
        if self.nodes.is_empty() {
            return Ok(());
        }
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (a, b) = (index[&e.from], index[&e.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(PoseError::DisconnectedGraph)
        }
    }

    /// `Σ rᵀΩr` with `r = log(C⁻¹·T_from⁻¹·T_to)`.
    pub fn cost(&self) -> Result<T, PoseError> {
        let index = self.index();
        let poses: Vec<Sim3<T>> = self.nodes.iter().map(|(_, p)| *p).collect();
        graph_cost(&self.edges, &index, &poses)
    }
}

fn edge_residual<T: Real>(
    e: &PoseEdge<T>,
    from: &Sim3<T>,
    to: &Sim3<T>,
) -> Result<Vector7<T>, PoseError> {
    Ok(e.constraint
        .inverse()
        .compose(&from.inverse().compose(to))
        .log()?)
}

fn graph_cost<T: Real>(
    edges: &[PoseEdge<T>],
    index: &HashMap<u32, usize>,
    poses: &[Sim3<T>],
) -> Result<T, PoseError> {
    let mut cost = T::zero();
    for e in edges {
        let r = edge_residual(e, &poses[index[&e.from]], &poses[index[&e.to]])?;
        cost += (r.transpose() * e.information * r)[(0, 0)];
    }
    Ok(cost)
}

/// Central-difference Jacobian of an edge residual with respect to the
/// right-perturbation tangent of one endpoint.
fn residual_jacobian<T: Real>(
    e: &PoseEdge<T>,
    from: &Sim3<T>,
    to: &Sim3<T>,
    wrt_from: bool,
) -> Result<Matrix7<T>, PoseError> {
    let h = T::lit(JACOBIAN_STEP);
    let mut j = Matrix7::zeros();
    for c in 0..7 {
        let mut step = Vector7::zeros();
        step[c] = h;
        let plus = Sim3::exp(&step);
        step[c] = -h;
        let minus = Sim3::exp(&step);
        let (rp, rm) = if wrt_from {
            (
                edge_residual(e, &from.compose(&plus), to)?,
                edge_residual(e, &from.compose(&minus), to)?,
            )
        } else {
            (
                edge_residual(e, from, &to.compose(&plus))?,
                edge_residual(e, from, &to.compose(&minus))?,
            )
        };
        j.set_column(c, &((rp - rm) / (h + h)));
    }
    Ok(j)
}

/// Levenberg–Marquardt over all nodes except `fixed`, updating poses by
/// right multiplication with `exp(δ)`.
pub fn optimize_pose_graph<T: Real>(
    g: &PoseGraph<T>,
    fixed: u32,
) -> Result<(PoseGraph<T>, GraphReport<T>), PoseError> {
    g.check()?;
    let index = g.index();
    let fixed_idx = *index.get(&fixed).ok_or(PoseError::UnknownNode(fixed))?;
    let n = g.nodes.len();
    // Column block of every free node.
    let mut block = vec![None; n];
    let mut free = 0usize;
    for (i, b) in block.iter_mut().enumerate() {
        if i != fixed_idx {
            *b = Some(free * 7);
            free += 1;
        }
    }
    let mut poses: Vec<Sim3<T>> = g.nodes.iter().map(|(_, p)| *p).collect();
    let initial_cost = graph_cost(&g.edges, &index, &poses)?;
    let mut cost = initial_cost;
    let mut damping = T::lit(GRAPH_INITIAL_DAMPING);
    let mut iterations = 0usize;
    let dim = free * 7;

    while iterations < GRAPH_MAX_ITERATIONS && dim > 0 && cost > T::zero() {
        iterations += 1;
        let mut h = DMatrix::<T>::zeros(dim, dim);
        let mut b = DVector::<T>::zeros(dim);
        for e in &g.edges {
            let (fi, ti) = (index[&e.from], index[&e.to]);
            let r = edge_residual(e, &poses[fi], &poses[ti])?;
            let jf = residual_jacobian(e, &poses[fi], &poses[ti], true)?;
            let jt = residual_jacobian(e, &poses[fi], &poses[ti], false)?;
            let parts = [(block[fi], jf), (block[ti], jt)];
            for (bi, ji) in &parts {
                let Some(bi) = *bi else { continue };
                let jti_omega = ji.transpose() * e.information;
                let mut bseg = b.rows_mut(bi, 7);
                bseg += jti_omega * r;
                for (bj, jj) in &parts {
                    let Some(bj) = *bj else { continue };
                    let mut hblk = h.view_mut((bi, bj), (7, 7));
                    hblk += jti_omega * jj;
                }
            }
        }
        let mut a = h.clone();
        for i in 0..dim {
            a[(i, i)] += damping;
        }
        let Some(delta) = a.cholesky().map(|c| -c.solve(&b)) else {
            damping *= T::lit(10.0);
            continue;
        };
        let candidate: Vec<Sim3<T>> = poses
            .iter()
            .zip(&block)
            .map(|(p, bk)| match bk {
                Some(o) => p.compose(&Sim3::exp(&Vector7::from_iterator(
                    delta.rows(*o, 7).iter().copied(),
                ))),
                None => *p,
            })
            .collect();
        let new_cost = graph_cost(&g.edges, &index, &candidate)?;
        if new_cost < cost {
            let rel = (cost - new_cost) / cost;
            poses = candidate;
            cost = new_cost;
            damping *= T::lit(0.5);
            if rel < T::lit(GRAPH_RELATIVE_TOLERANCE) {
                break;
            }
        } else {
            damping *= T::lit(10.0);
            if damping > T::lit(1e12) {
                break;
            }
        }
    }

    let mut out = g.clone();
    for (i, node) in out.nodes.iter_mut().enumerate() {
        if i != fixed_idx {
            node.1 = poses[i];
        }
    }
    Ok((
        out,
        GraphReport {
            initial_cost,
            final_cost: cost,
            iterations,
        },
    ))
}
