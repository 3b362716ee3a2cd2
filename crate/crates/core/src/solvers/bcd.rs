use crate::error::{Error, Result};
use crate::path::SparsityPattern;
use crate::solvers::column::{accumulate_mode, solve_rows};
use crate::solvers::{relative_change, ElasticNetConfig, SolveReport};
use crate::tensor::{component_tensor, kron_columns, masked_residual, penalty, FactorSet, MaskedTensor, ModeLayout};

/// Cyclic block coordinate descent over factor columns, component-major.
pub fn bcd_solve(z: &MaskedTensor, init: &FactorSet, cfg: &ElasticNetConfig) -> Result<(FactorSet, SolveReport)> {
    run(z, init.clone(), None, cfg)
}

/// Coordinate descent restricted to the free entries of `pattern`; every
/// frozen entry is zero on entry and stays exactly zero.
pub fn sparse_constrained_solve(
    z: &MaskedTensor,
    init: &FactorSet,
    pattern: &SparsityPattern,
    cfg: &ElasticNetConfig,
) -> Result<(FactorSet, SolveReport)> {
    if pattern.shape() != init.shape() || pattern.rank() != init.rank() {
        return Err(Error::shape(format!(
            "pattern {:?} x {} does not match factors {:?} x {}",
            pattern.shape(),
            pattern.rank(),
            init.shape(),
            init.rank()
        )));
    }
    let mut f = init.clone();
    pattern.apply(&mut f);
    run(z, f, Some(pattern), cfg)
}

fn run(
    z: &MaskedTensor,
    mut f: FactorSet,
    pattern: Option<&SparsityPattern>,
    cfg: &ElasticNetConfig,
) -> Result<(FactorSet, SolveReport)> {
    cfg.validate()?;
    cfg.check_against(z.shape())?;
    f.check_against(z.shape())?;

    let shape = z.shape().to_vec();
    let n_modes = shape.len();
    let rank = f.rank();
    let mask = z.mask();

    let fit = |resid: &[f64]| 0.5 * resid.iter().map(|v| v * v).sum::<f64>();
    let mut resid = masked_residual(z, &f)?.into_data();
    let mut obj = fit(&resid) + penalty(&f, cfg);
    let mut report = SolveReport {
        objective_trace: vec![obj],
        final_objective: obj,
        ..Default::default()
    };

    let max_dim = shape.iter().copied().max().unwrap_or(0);
    let mut u = vec![0.0; max_dim];
    let mut hsq = vec![0.0; max_dim];
    let mut w = vec![0.0; resid.len()];
    let layouts: Vec<ModeLayout> = (0..n_modes).map(|n| ModeLayout::new(&shape, n)).collect();

    for iter in 1..=cfg.max_iters {
        if iter > 1 {
            resid = masked_residual(z, &f)?.into_data();
        }
        for r in 0..rank {
            // W = U + current rank-1 term, i.e. the data minus all other components.
            let old = component_tensor(&f, r);
            for ((wk, &uk), &ok) in w.iter_mut().zip(&resid).zip(&old) {
                *wk = uk + ok;
            }
            for n in 0..n_modes {
                let lay = layouts[n];
                let h = kron_columns(&f, r, n);
                let (u, hsq) = (&mut u[..lay.dim], &mut hsq[..lay.dim]);
                accumulate_mode(&w, mask, lay, &h, u, hsq);
                let col = f.column_mut(n, r);
                solve_rows(u, hsq, &cfg.inv_cov_diags[n], cfg.lambda, cfg.alpha, col, None);
                if let Some(p) = pattern {
                    for (i, x) in col.iter_mut().enumerate() {
                        if !p.is_free(n, i, r) {
                            *x = 0.0;
                        }
                    }
                }
                if let Some(bad) = col.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Numerical {
                        iteration: iter,
                        component: r,
                        mode: n,
                        detail: format!("column update produced {bad}"),
                    });
                }
                if cfg.trace_columns {
                    let term = component_tensor(&f, r);
                    let s: f64 = w
                        .iter()
                        .zip(&term)
                        .zip(mask)
                        .filter(|(_, &m)| m)
                        .map(|((wk, tk), _)| (wk - tk).powi(2))
                        .sum();
                    report.column_objectives.push(0.5 * s + penalty(&f, cfg));
                }
            }
            let new = component_tensor(&f, r);
            for (((rk, &wk), &nk), &m) in resid.iter_mut().zip(&w).zip(&new).zip(mask) {
                *rk = if m { wk - nk } else { 0.0 };
            }
        }

        let next = fit(&resid) + penalty(&f, cfg);
        report.iterations = iter;
        report.objective_trace.push(next);
        let change = relative_change(obj, next);
        obj = next;
        if change < cfg.tol {
            report.converged = true;
            break;
        }
    }
    report.final_objective = obj;
    Ok((f, report))
}
