//! Stochastic block coordinate descent with Adamax-style steps.
//!
//! Each outer iteration draws one index subset per mode and only touches the
//! slabs `Z(s_1, …, s_{n-1}, :, s_{n+1}, …, s_N)`. The exact subset minimizer
//! of a column, with its ℓ1 threshold rescaled towards the full-data one,
//! serves as the target; the pseudo-gradient `a − ā` then drives an Adamax
//! update.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::solvers::column::{soft_threshold, D_FLOOR};
use crate::solvers::{relative_change, ElasticNetConfig, SolveReport};
use crate::tensor::{cp_reconstruct, l2_norm, outer_product, penalty, FactorSet, MaskedTensor};

/// Which ridge term enters the denominator of the threshold rescaling `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauDenominator {
    /// `‖h‖² + λ(1−α)α·T`, as in the algorithm listing.
    #[default]
    RidgeTimesAlpha,
    /// `‖h‖² + λ(1−α)·T`, which is exactly the full-data `d` under a full mask.
    Ridge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticConfig {
    pub batch_sizes: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub step_size: f64,
    /// Applied to the step size whenever the tracked relative error rises.
    pub step_decay_factor: f64,
    pub max_iters: usize,
    /// Relative change of the tracked error below which the run stops.
    pub tol: f64,
    pub tau_denominator: TauDenominator,
}

impl StochasticConfig {
    pub fn new(batch_sizes: Vec<usize>) -> Self {
        Self {
            batch_sizes,
            beta1: 0.9,
            beta2: 0.9999,
            step_size: 0.1,
            step_decay_factor: 0.2,
            max_iters: 300,
            tol: 0.0,
            tau_denominator: TauDenominator::default(),
        }
    }

    pub fn validate(&self, shape: &[usize]) -> Result<()> {
        if self.batch_sizes.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} batch sizes for a {}-way tensor",
                self.batch_sizes.len(),
                shape.len()
            )));
        }
        if let Some((n, &s)) = self
            .batch_sizes
            .iter()
            .enumerate()
            .find(|(n, &s)| s == 0 || s > shape[*n])
        {
            return Err(Error::invalid(format!(
                "batch size {s} for mode {n} must lie in 1..={}",
                shape[n]
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("step size must be positive"));
        }
        if !(self.step_decay_factor > 0.0 && self.step_decay_factor <= 1.0) {
            return Err(Error::invalid("step decay factor must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Subset column solution with the rescaled threshold `λατ`, from explicit
/// subset unfoldings.
///
/// `h_norm_product` estimates `∏_m ‖a^(m)‖²` over all modes, and
/// `own_norm_sq` is `‖a^(n)‖²` for the mode being updated.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_column_target(
    w_s: &DMatrix<f64>,
    d_s: &DMatrix<f64>,
    h_s: &[f64],
    t: &[f64],
    lambda: f64,
    alpha: f64,
    h_norm_product: f64,
    own_norm_sq: f64,
    tau_denominator: TauDenominator,
) -> Result<Vec<f64>> {
    if w_s.shape() != d_s.shape() || w_s.ncols() != h_s.len() || w_s.nrows() != t.len() {
        return Err(Error::shape("subset unfoldings, h and T are inconsistent"));
    }
    let rows = w_s.nrows();
    let mut u = vec![0.0; rows];
    let mut hsq = vec![0.0; rows];
    for (j, &hj) in h_s.iter().enumerate() {
        for i in 0..rows {
            if d_s[(i, j)] != 0.0 {
                u[i] += hj * w_s[(i, j)];
                hsq[i] += hj * hj;
            }
        }
    }
    let mut x = vec![0.0; rows];
    let coeffs = TargetCoeffs {
        lambda,
        alpha,
        h_norm_product,
        own_norm_sq,
        tau_denominator,
    };
    coeffs.solve(&u, &hsq, t, &mut x);
    Ok(x)
}

struct TargetCoeffs {
    lambda: f64,
    alpha: f64,
    h_norm_product: f64,
    own_norm_sq: f64,
    tau_denominator: TauDenominator,
}

impl TargetCoeffs {
    /// Writes the target into `x` and returns the `τ` used.
    fn solve(&self, u: &[f64], hsq: &[f64], t: &[f64], x: &mut [f64]) -> f64 {
        let ridge = self.lambda * (1.0 - self.alpha);
        let tau_ridge = match self.tau_denominator {
            TauDenominator::RidgeTimesAlpha => ridge * self.alpha,
            TauDenominator::Ridge => ridge,
        };
        let h_full = if self.own_norm_sq < D_FLOOR {
            0.0
        } else {
            self.h_norm_product / self.own_norm_sq
        };
        let thresh = self.lambda * self.alpha;
        let tau = if thresh == 0.0 {
            1.0
        } else {
            let (sum, count) = hsq
                .iter()
                .zip(t)
                .map(|(&hs, &ti)| (hs + ridge * ti, h_full + tau_ridge * ti))
                .filter(|&(_, den)| den > 0.0)
                .fold((0.0, 0usize), |(s, c), (d, den)| (s + d / den, c + 1));
            // No usable denominator: keep the subset threshold as is.
            if count == 0 {
                1.0
            } else {
                sum / count as f64
            }
        };
        for i in 0..x.len() {
            let d = hsq[i] + ridge * t[i];
            x[i] = if d < D_FLOOR {
                0.0
            } else {
                soft_threshold(u[i], thresh * tau) / d
            };
        }
        tau
    }
}

/// Index bookkeeping for one draw of per-mode subsets.
///
/// Entry `(j, i)` of slab `n` sits at `offsets[n][j] + i·strides[n]`, where
/// `j` runs over the other modes' sampled positions with the lowest mode
/// fastest, matching the order of the subset `h_s`.
struct Slabs {
    strides: Vec<usize>,
    offsets: Vec<Vec<usize>>,
    /// Rows of mode `n` that lie in its own subset. Slab `n > 0` skips them
    /// when a pass must visit each distinct entry once, since those entries
    /// also belong to slab 0.
    sampled: Vec<Vec<bool>>,
}

impl Slabs {
    fn build(shape: &[usize], subsets: &[Vec<usize>]) -> Self {
        let n_modes = shape.len();
        let strides: Vec<usize> = (0..n_modes).map(|m| shape[..m].iter().product()).collect();
        let offsets = (0..n_modes)
            .map(|n| {
                let mut offs = vec![0usize];
                for m in (0..n_modes).filter(|&m| m != n) {
                    let step = strides[m];
                    offs = subsets[m]
                        .iter()
                        .flat_map(|&i| offs.iter().map(move |&o| o + i * step))
                        .collect();
                }
                offs
            })
            .collect();
        let sampled = shape
            .iter()
            .zip(subsets)
            .map(|(&dim, s)| {
                let mut v = vec![false; dim];
                for &i in s {
                    v[i] = true;
                }
                v
            })
            .collect();
        Self {
            strides,
            offsets,
            sampled,
        }
    }

    fn skip(&self, n: usize, i: usize) -> bool {
        n > 0 && self.sampled[n][i]
    }
}

/// Sampled rows of column `r` for every mode except `skip`, as their outer product.
fn subset_h(f: &FactorSet, subsets: &[Vec<usize>], r: usize, skip: usize) -> Vec<f64> {
    let cols: Vec<Vec<f64>> = (0..f.ndim())
        .filter(|&m| m != skip)
        .map(|m| subsets[m].iter().map(|&i| f.factor(m)[(i, r)]).collect())
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    outer_product(&refs)
}

/// Adamax stochastic block coordinate descent.
///
/// The relative error on observed entries is evaluated after every outer
/// iteration; when it starts to rise the step size is multiplied by
/// `step_decay_factor`, once per run of increases. Columns whose
/// infinity-norm accumulator is still zero are not stepped.
pub fn adamax_solve<R: Rng + ?Sized>(
    z: &MaskedTensor,
    init: &FactorSet,
    cfg: &ElasticNetConfig,
    scfg: &StochasticConfig,
    rng: &mut R,
) -> Result<(FactorSet, SolveReport)> {
    cfg.validate()?;
    cfg.check_against(z.shape())?;
    init.check_against(z.shape())?;
    scfg.validate(z.shape())?;

    let shape = z.shape().to_vec();
    let n_modes = shape.len();
    let rank = init.rank();
    let zdata = z.values().data();
    let mask = z.mask();
    let zobs = z.observed_norm_sq().max(f64::MIN_POSITIVE);

    let mut f = init.clone();
    let mut moment: Vec<DMatrix<f64>> = shape.iter().map(|&i| DMatrix::zeros(i, rank)).collect();
    let mut inf_norm = DMatrix::<f64>::zeros(n_modes, rank);
    let mut h_norm_sq = vec![0.0; rank];
    let mut step = scfg.step_size;
    let mut was_rising = false;

    let evaluate = |f: &FactorSet| -> (f64, f64) {
        let x = cp_reconstruct(f);
        let sq: f64 = zdata
            .iter()
            .zip(x.data())
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b).powi(2))
            .sum();
        ((sq / zobs).sqrt(), 0.5 * sq + penalty(f, cfg))
    };
    let (mut prev_err, obj0) = evaluate(&f);
    let mut report = SolveReport {
        objective_trace: vec![obj0],
        rel_err_trace: vec![prev_err],
        final_objective: obj0,
        ..Default::default()
    };

    let mut resid = vec![0.0; z.len()];
    let max_dim = shape.iter().copied().max().unwrap_or(0);
    let mut u = vec![0.0; max_dim];
    let mut hsq = vec![0.0; max_dim];
    let mut target = vec![0.0; max_dim];

    for t in 1..=scfg.max_iters {
        for (r, hn) in h_norm_sq.iter_mut().enumerate() {
            let prod: f64 = (0..n_modes).map(|n| l2_norm(f.column(n, r)).powi(2)).product();
            *hn = scfg.beta1 * *hn + (1.0 - scfg.beta1) * prod;
        }
        let subsets: Vec<Vec<usize>> = shape
            .iter()
            .zip(&scfg.batch_sizes)
            .map(|(&dim, &s)| {
                let mut v = sample(rng, dim, s).into_vec();
                v.sort_unstable();
                v
            })
            .collect();
        let slabs = Slabs::build(&shape, &subsets);

        // Refresh U = Z − X on the slabs: X restricted to slab n is A_n·H_nᵀ.
        for n in 0..n_modes {
            let offs = &slabs.offsets[n];
            let cols: Vec<f64> = (0..rank).flat_map(|r| subset_h(&f, &subsets, r, n)).collect();
            let h = DMatrix::from_vec(offs.len(), rank, cols);
            let x = f.factor(n) * h.transpose();
            for (j, &off) in offs.iter().enumerate() {
                for i in 0..shape[n] {
                    if slabs.skip(n, i) {
                        continue;
                    }
                    let k = off + i * slabs.strides[n];
                    resid[k] = if mask[k] { zdata[k] - x[(i, j)] } else { 0.0 };
                }
            }
        }

        let bias = 1.0 - scfg.beta1.powi(t as i32);
        for r in 0..rank {
            // The residual excludes component r through its columns before this sweep.
            let old = f.clone();
            for n in 0..n_modes {
                let dim = shape[n];
                let stride = slabs.strides[n];
                let h_new = subset_h(&f, &subsets, r, n);
                let h_old = subset_h(&old, &subsets, r, n);
                let a_old = old.column(n, r);

                let (u, hsq, target) = (&mut u[..dim], &mut hsq[..dim], &mut target[..dim]);
                u.fill(0.0);
                hsq.fill(0.0);
                for (j, &off) in slabs.offsets[n].iter().enumerate() {
                    let (hn, ho) = (h_new[j], h_old[j]);
                    for i in 0..dim {
                        let k = off + i * stride;
                        if mask[k] {
                            u[i] += hn * (resid[k] + a_old[i] * ho);
                            hsq[i] += hn * hn;
                        }
                    }
                }
                let own = l2_norm(f.column(n, r)).powi(2);
                let coeffs = TargetCoeffs {
                    lambda: cfg.lambda,
                    alpha: cfg.alpha,
                    h_norm_product: h_norm_sq[r],
                    own_norm_sq: own,
                    tau_denominator: scfg.tau_denominator,
                };
                coeffs.solve(u, hsq, &cfg.inv_cov_diags[n], target);

                let m_col = &mut moment[n].as_mut_slice()[r * dim..(r + 1) * dim];
                let a = f.column_mut(n, r);
                let mut g_norm_sq = 0.0;
                for i in 0..dim {
                    let g = a[i] - target[i];
                    g_norm_sq += g * g;
                    m_col[i] = scfg.beta1 * m_col[i] + (1.0 - scfg.beta1) * g;
                }
                let acc = (scfg.beta2 * inf_norm[(n, r)]).max(g_norm_sq.sqrt());
                inf_norm[(n, r)] = acc;

                if acc > 0.0 {
                    let scale = step / bias / acc;
                    for (ai, mi) in a.iter_mut().zip(m_col.iter()) {
                        *ai -= scale * mi;
                    }
                }
                for (ai, &ti) in a.iter_mut().zip(target.iter()) {
                    if ti == 0.0 {
                        *ai = 0.0;
                    }
                }
                if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Numerical {
                        iteration: t,
                        component: r,
                        mode: n,
                        detail: format!("stochastic step produced {bad}"),
                    });
                }
            }

            for n in 0..n_modes {
                let stride = slabs.strides[n];
                let h_new = subset_h(&f, &subsets, r, n);
                let h_old = subset_h(&old, &subsets, r, n);
                let (a_new, a_old) = (f.column(n, r), old.column(n, r));
                for (j, &off) in slabs.offsets[n].iter().enumerate() {
                    let (hn, ho) = (h_new[j], h_old[j]);
                    for i in 0..shape[n] {
                        let k = off + i * stride;
                        if mask[k] && !slabs.skip(n, i) {
                            resid[k] += a_old[i] * ho - a_new[i] * hn;
                        }
                    }
                }
            }
        }

        let (err, obj) = evaluate(&f);
        report.iterations = t;
        report.objective_trace.push(obj);
        report.rel_err_trace.push(err);
        report.final_objective = obj;
        // Only the onset of a run of increases counts as a new event.
        let rising = err > prev_err;
        if rising && !was_rising {
            step *= scfg.step_decay_factor;
        }
        was_rising = rising;
        let change = relative_change(prev_err, err);
        prev_err = err;
        if change < scfg.tol {
            report.converged = true;
            break;
        }
    }
    Ok((f, report))
}
