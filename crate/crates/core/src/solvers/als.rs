use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::solvers::SolveReport;
use crate::tensor::{cp_reconstruct, kron_columns, FactorSet, MaskedTensor, ModeLayout};

/// Singular values below this fraction of the largest are dropped from the
/// Gram pseudo-inverse.
const PINV_RCOND: f64 = 1e-12;

/// Plain CP alternating least squares on a fully observed tensor.
///
/// Each mode update is `A_n ← Z_(n) · KhatriRao(others) · pinv(⊛_{m≠n} A_mᵀA_m)`,
/// after which the columns are normalized into a weight vector (2-norm on the
/// first sweep, max-norm afterwards). Weights are folded back into the first
/// mode of the returned factors. Stops when the change in fit
/// `1 − ‖Z − X‖/‖Z‖` falls below `tol`.
pub fn cp_als_solve(
    z: &MaskedTensor,
    init: &FactorSet,
    max_iters: usize,
    tol: f64,
) -> Result<(FactorSet, SolveReport)> {
    if !z.is_fully_observed() {
        return Err(Error::Unsupported("CP-ALS needs a fully observed tensor".into()));
    }
    init.check_against(z.shape())?;
    let shape = z.shape().to_vec();
    let rank = init.rank();
    let zdata = z.values().data();
    let znorm_sq = z.values().frobenius_norm_sq();

    let mut f = init.clone();
    let mut weights = vec![1.0; rank];

    let misfit = |f: &FactorSet, weights: &[f64]| -> f64 {
        let x = cp_reconstruct(&absorb(f, weights));
        zdata.iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let mut sq = misfit(&f, &weights);
    let mut report = SolveReport {
        objective_trace: vec![0.5 * sq],
        ..Default::default()
    };
    let mut fit = 1.0 - (sq / znorm_sq).sqrt();

    for iter in 1..=max_iters {
        for n in 0..shape.len() {
            let lay = ModeLayout::new(&shape, n);
            let mut mttkrp = DMatrix::<f64>::zeros(lay.dim, rank);
            for r in 0..rank {
                let h = kron_columns(&f, r, n);
                for outer in 0..lay.right {
                    let hrow = &h[lay.left * outer..lay.left * (outer + 1)];
                    for i in 0..lay.dim {
                        let base = lay.left * (i + lay.dim * outer);
                        let s: f64 = zdata[base..base + lay.left].iter().zip(hrow).map(|(a, b)| a * b).sum();
                        mttkrp[(i, r)] += s;
                    }
                }
            }
            let mut gram = DMatrix::from_element(rank, rank, 1.0);
            for m in (0..shape.len()).filter(|&m| m != n) {
                let a = f.factor(m);
                gram.component_mul_assign(&(a.transpose() * a));
            }
            let updated = mttkrp * pinv(gram)?;
            *f.factor_mut(n) = updated;

            for r in 0..rank {
                let col = f.column(n, r);
                let w = if iter == 1 {
                    col.iter().map(|v| v * v).sum::<f64>().sqrt()
                } else {
                    col.iter().fold(1.0f64, |m, v| m.max(v.abs()))
                };
                weights[r] = w;
                if w > 0.0 {
                    f.column_mut(n, r).iter_mut().for_each(|v| *v /= w);
                }
            }
        }

        sq = misfit(&f, &weights);
        let new_fit = 1.0 - (sq / znorm_sq).sqrt();
        report.iterations = iter;
        report.objective_trace.push(0.5 * sq);
        report.rel_err_trace.push((sq / znorm_sq).sqrt());
        if !new_fit.is_finite() {
            return Err(Error::Numerical {
                iteration: iter,
                component: 0,
                mode: shape.len() - 1,
                detail: "fit became non-finite".into(),
            });
        }
        let delta = (new_fit - fit).abs();
        fit = new_fit;
        if delta < tol {
            report.converged = true;
            break;
        }
    }
    report.final_objective = 0.5 * sq;
    Ok((absorb(&f, &weights), report))
}

fn absorb(f: &FactorSet, weights: &[f64]) -> FactorSet {
    let mut out = f.clone();
    for (r, &w) in weights.iter().enumerate() {
        out.column_mut(0, r).iter_mut().for_each(|v| *v *= w);
    }
    out
}

fn pinv(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(m);
    }
    let svd = SVD::new(m, true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(PINV_RCOND * smax).map_err(|e| Error::Numerical {
        iteration: 0,
        component: 0,
        mode: 0,
        detail: e.to_string(),
    })
}
