//! Dense inverse-depth estimation.
//!
//! Minimizes `E_total = E_cnn_grad + λ·E_semi_dense` (plus an optional
//! prediction-consistency term used for ablations) over a dense inverse
//! depth map, starting from the corrected prediction:
//!
//! * `E_cnn_grad = 1/|Ω| Σ ((∂x ln D − ∂x ln C)² + (∂y ln D − ∂y ln C)²) · C²`
//!   with forward differences (zero on the last column/row) and `C` the
//!   corrected prediction;
//! * `E_semi_dense = 1/|Ωᵢ| Σ ρ((D − S)² / V)` over valid semi-dense pixels,
//!   `ρ(y) = (y + ε²)^α`;
//! * `E_cnn_depth = 1/|Ω| Σ (D − C)² · C²`.
//!
//! Gradients are analytic. The optimizer is Adam with bias correction.

use crate::error::DensifyError;
use crate::scalar::Real;
use crate::types::{FusionConfig, InverseDepthMap, VarianceMap};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Which terms enter the energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnergyTerms {
    pub cnn_grad: bool,
    pub semi_dense: bool,
    /// Robust penalty on the semi-dense term; quadratic when off.
    pub charbonnier: bool,
    pub cnn_depth: bool,
}

impl Default for EnergyTerms {
    fn default() -> Self {
        Self {
            cnn_grad: true,
            semi_dense: true,
            charbonnier: true,
            cnn_depth: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown<T> {
    pub e_total: T,
    pub e_cnn_grad: T,
    pub e_semi_dense: T,
    pub e_cnn_depth: Option<T>,
}

/// Generalized Charbonnier penalty on an already squared, normalized residual.
#[inline]
pub fn charbonnier<T: Real>(y: T, epsilon: T, alpha: T) -> T {
    (y + epsilon * epsilon).powf(alpha)
}

#[inline]
fn charbonnier_derivative<T: Real>(y: T, epsilon: T, alpha: T) -> T {
    alpha * (y + epsilon * epsilon).powf(alpha - T::one())
}

/// Pairwise sum in slice order; the reduction tree depends only on the length.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        let mut s = T::zero();
        for &v in values {
            s += v;
        }
        s
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Fixed data of one densification problem.
#[derive(Clone, Debug)]
pub struct DensifyProblem<T> {
    width: usize,
    height: usize,
    /// Corrected prediction, clamped to the inverse-depth floor.
    cnn: Vec<T>,
    ln_cnn: Vec<T>,
    semi: Vec<T>,
    /// Semi-dense variance, floored at `min_variance`.
    semi_var: Vec<T>,
    semi_count: usize,
    cfg: FusionConfig<T>,
    terms: EnergyTerms,
}

impl<T: Real> DensifyProblem<T> {
    pub fn new(
        semi: &InverseDepthMap<T>,
        semi_var: &VarianceMap<T>,
        cnn_corrected: &InverseDepthMap<T>,
        cfg: &FusionConfig<T>,
        terms: EnergyTerms,
    ) -> Self {
        assert!(semi.same_dims(cnn_corrected) && semi.same_dims(semi_var));
        let floor = cfg.min_inverse_depth;
        let cnn: Vec<T> = cnn_corrected
            .as_slice()
            .iter()
            .map(|&c| c.max(floor))
            .collect();
        let ln_cnn = cnn.iter().map(|c| c.ln()).collect();
        let semi_var = semi_var
            .as_slice()
            .iter()
            .map(|&v| v.max(cfg.min_variance))
            .collect();
        Self {
            width: semi.width(),
            height: semi.height(),
            cnn,
            ln_cnn,
            semi: semi.as_slice().to_vec(),
            semi_var,
            semi_count: semi.valid_count(),
            cfg: *cfg,
            terms,
        }
    }

    pub fn initial(&self) -> InverseDepthMap<T> {
        InverseDepthMap::from_vec(self.width, self.height, self.cnn.clone())
    }

    fn robust(&self, y: T) -> T {
        if self.terms.charbonnier {
            charbonnier(y, self.cfg.epsilon, self.cfg.alpha)
        } else {
            y
        }
    }

    fn robust_derivative(&self, y: T) -> T {
        if self.terms.charbonnier {
            charbonnier_derivative(y, self.cfg.epsilon, self.cfg.alpha)
        } else {
            T::one()
        }
    }

    /// Forward-difference mismatch of log gradients at pixel `i`.
    #[inline]
    fn log_grad_mismatch(&self, ln_opt: &[T], i: usize) -> (T, T) {
        let (x, y) = (i % self.width, i / self.width);
        let ex = if x + 1 < self.width {
            (ln_opt[i + 1] - ln_opt[i]) - (self.ln_cnn[i + 1] - self.ln_cnn[i])
        } else {
            T::zero()
        };
        let ey = if y + 1 < self.height {
            let j = i + self.width;
            (ln_opt[j] - ln_opt[i]) - (self.ln_cnn[j] - self.ln_cnn[i])
        } else {
            T::zero()
        };
        (ex, ey)
    }

    pub fn energy(&self, d_opt: &InverseDepthMap<T>) -> EnergyBreakdown<T> {
        let d = d_opt.as_slice();
        let n = self.cnn.len();
        let n_all = T::from_count(n);
        let ln_opt: Vec<T> = d.iter().map(|v| v.ln()).collect();

        let e_cnn_grad = if self.terms.cnn_grad {
            let contrib: Vec<T> = (0..n)
                .map(|i| {
                    let (ex, ey) = self.log_grad_mismatch(&ln_opt, i);
                    (ex * ex + ey * ey) * self.cnn[i] * self.cnn[i]
                })
                .collect();
            pairwise_sum(&contrib) / n_all
        } else {
            T::zero()
        };

        let e_semi_dense = if self.terms.semi_dense && self.semi_count > 0 {
            let contrib: Vec<T> = (0..n)
                .filter(|&i| self.semi[i] > T::zero())
                .map(|i| {
                    let r = d[i] - self.semi[i];
                    self.robust(r * r / self.semi_var[i])
                })
                .collect();
            pairwise_sum(&contrib) / T::from_count(self.semi_count)
        } else {
            T::zero()
        };

        let e_cnn_depth = self.terms.cnn_depth.then(|| {
            let contrib: Vec<T> = (0..n)
                .map(|i| {
                    let r = (d[i] - self.cnn[i]) * self.cnn[i];
                    r * r
                })
                .collect();
            pairwise_sum(&contrib) / n_all
        });

        let e_total =
            e_cnn_grad + self.cfg.lambda * e_semi_dense + e_cnn_depth.unwrap_or(T::zero());
        EnergyBreakdown {
            e_total,
            e_cnn_grad,
            e_semi_dense,
            e_cnn_depth,
        }
    }

    /// `∂E_total/∂D` at every pixel.
    pub fn gradient(&self, d_opt: &InverseDepthMap<T>) -> InverseDepthMap<T> {
        let d = d_opt.as_slice();
        let n = self.cnn.len();
        let n_all = T::from_count(n);
        let two = T::lit(2.0);
        let mut g_ln = vec![T::zero(); n];

        if self.terms.cnn_grad {
            let ln_opt: Vec<T> = d.iter().map(|v| v.ln()).collect();
            for i in 0..n {
                let (ex, ey) = self.log_grad_mismatch(&ln_opt, i);
                let w = two * self.cnn[i] * self.cnn[i] / n_all;
                let (x, y) = (i % self.width, i / self.width);
                if x + 1 < self.width {
                    g_ln[i + 1] += w * ex;
                    g_ln[i] -= w * ex;
                }
                if y + 1 < self.height {
                    g_ln[i + self.width] += w * ey;
                    g_ln[i] -= w * ey;
                }
            }
        }

        let mut g: Vec<T> = g_ln.iter().zip(d).map(|(&gl, &di)| gl / di).collect();

        if self.terms.semi_dense && self.semi_count > 0 {
            let scale = self.cfg.lambda / T::from_count(self.semi_count);
            for i in 0..n {
                if self.semi[i] > T::zero() {
                    let r = d[i] - self.semi[i];
                    let v = self.semi_var[i];
                    g[i] += scale * self.robust_derivative(r * r / v) * two * r / v;
                }
            }
        }

        if self.terms.cnn_depth {
            for i in 0..n {
                let c2 = self.cnn[i] * self.cnn[i];
                g[i] += two * (d[i] - self.cnn[i]) * c2 / n_all;
            }
        }
        InverseDepthMap::from_vec(self.width, self.height, g)
    }
}

/// Energy of `d_opt` under the default terms.
pub fn energy<T: Real>(
    d_opt: &InverseDepthMap<T>,
    filtered: (&InverseDepthMap<T>, &VarianceMap<T>),
    cnn_corrected: &InverseDepthMap<T>,
    cfg: &FusionConfig<T>,
    terms: EnergyTerms,
) -> EnergyBreakdown<T> {
    DensifyProblem::new(filtered.0, filtered.1, cnn_corrected, cfg, terms).energy(d_opt)
}

pub fn energy_gradient<T: Real>(
    d_opt: &InverseDepthMap<T>,
    filtered: (&InverseDepthMap<T>, &VarianceMap<T>),
    cnn_corrected: &InverseDepthMap<T>,
    cfg: &FusionConfig<T>,
    terms: EnergyTerms,
) -> InverseDepthMap<T> {
    DensifyProblem::new(filtered.0, filtered.1, cnn_corrected, cfg, terms).gradient(d_opt)
}

/// Prediction-consistency term `1/|Ω| Σ (D − C)²/(1/C)²`.
pub fn energy_cnn_depth_ablation<T: Real>(
    d_opt: &InverseDepthMap<T>,
    cnn_corrected: &InverseDepthMap<T>,
) -> T {
    let contrib: Vec<T> = d_opt
        .as_slice()
        .iter()
        .zip(cnn_corrected.as_slice())
        .map(|(&d, &c)| {
            let r = (d - c) * c;
            r * r
        })
        .collect();
    pairwise_sum(&contrib) / T::from_count(contrib.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyOutput<T> {
    pub depth: InverseDepthMap<T>,
    /// Energy of the initial iterate followed by one entry per step.
    pub trace: Vec<EnergyBreakdown<T>>,
}

impl<T: Real> DensifyOutput<T> {
    /// One line per iterate: `index e_total e_cnn_grad e_semi_dense`.
    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for (i, e) in self.trace.iter().enumerate() {
            s.push_str(&format!(
                "{} {} {} {}\n",
                i,
                e.e_total.to_f64(),
                e.e_cnn_grad.to_f64(),
                e.e_semi_dense.to_f64()
            ));
        }
        s
    }
}

fn check_finite<T: Real>(iteration: usize, e: &EnergyBreakdown<T>) -> Result<(), DensifyError> {
    if e.e_total.is_finite_val() {
        Ok(())
    } else {
        Err(DensifyError::NonFiniteEnergy {
            iteration,
            e_cnn_grad: e.e_cnn_grad.to_f64(),
            e_semi_dense: e.e_semi_dense.to_f64(),
        })
    }
}

/// Runs `cfg.iterations` Adam steps from the corrected prediction, clamping
/// every iterate to `cfg.min_inverse_depth`.
pub fn densify<T: Real>(problem: &DensifyProblem<T>) -> Result<DensifyOutput<T>, DensifyError> {
    let cfg = &problem.cfg;
    let beta1 = T::lit(ADAM_BETA1);
    let beta2 = T::lit(ADAM_BETA2);
    let eps_hat = T::lit(ADAM_EPSILON);
    let one = T::one();

    let mut d = problem.initial();
    let n = d.len();
    let mut m = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let e0 = problem.energy(&d);
    check_finite(0, &e0)?;
    trace.push(e0);

    let (mut beta1_t, mut beta2_t) = (one, one);
    for it in 1..=cfg.iterations {
        let g = problem.gradient(&d);
        beta1_t *= beta1;
        beta2_t *= beta2;
        let bias1 = one - beta1_t;
        let bias2 = one - beta2_t;
        let next: Vec<T> = d
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .enumerate()
            .map(|(i, (&di, &gi))| {
                m[i] = beta1 * m[i] + (one - beta1) * gi;
                v[i] = beta2 * v[i] + (one - beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                (di - cfg.step_size * m_hat / (v_hat.sqrt() + eps_hat)).max(cfg.min_inverse_depth)
            })
            .collect();
        d = InverseDepthMap::from_vec(d.width(), d.height(), next);
        let e = problem.energy(&d);
        check_finite(it, &e)?;
        trace.push(e);
    }
    Ok(DensifyOutput { depth: d, trace })
}
