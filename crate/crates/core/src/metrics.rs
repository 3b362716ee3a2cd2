//! Recovery scores and relative errors.

use crate::error::{Error, Result};
use crate::path::{count_true_zeros, extract_pattern};
use crate::tensor::{cp_reconstruct, dot, l2_norm, normalize_factors, DenseTensor, FactorSet, MaskedTensor};

/// `∏ₙ cos(xₙ, yₙ)`; a zero vector makes the whole product 0.
pub fn rank_one_score(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = l2_norm(a) * l2_norm(b);
            if d == 0.0 {
                0.0
            } else {
                dot(a, b) / d
            }
        })
        .product()
}

/// Mean rank-one score over γ-sorted, index-paired components.
pub fn factor_score(x: &FactorSet, y: &FactorSet) -> f64 {
    let k = x.rank().min(y.rank());
    if k == 0 || x.ndim() != y.ndim() {
        return 0.0;
    }
    let ox = normalize_factors(x).order;
    let oy = normalize_factors(y).order;
    let total: f64 = (0..k)
        .map(|p| {
            let a: Vec<&[f64]> = (0..x.ndim()).map(|n| x.column(n, ox[p])).collect();
            let b: Vec<&[f64]> = (0..y.ndim()).map(|n| y.column(n, oy[p])).collect();
            rank_one_score(&a, &b)
        })
        .sum();
    total / k as f64
}

/// `‖(Z − X) ⊛ Δ‖ / ‖Z ⊛ Δ‖`, with 0/0 read as 0.
pub fn observed_rel_err(z: &MaskedTensor, f: &FactorSet) -> Result<f64> {
    f.check_against(z.shape())?;
    let x = cp_reconstruct(f);
    let (num, den) = z
        .values()
        .data()
        .iter()
        .zip(x.data())
        .zip(z.mask())
        .filter(|(_, &m)| m)
        .fold((0.0, 0.0), |(n, d), ((a, b), _)| (n + (a - b).powi(2), d + a * a));
    Ok(ratio(num, den))
}

/// `‖Z − X‖ / ‖Z‖` over every entry, observed or not.
pub fn full_rel_err(z: &DenseTensor, f: &FactorSet) -> Result<f64> {
    f.check_against(z.shape())?;
    let x = cp_reconstruct(f);
    let num: f64 = z.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(ratio(num, z.frobenius_norm_sq()))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rel_err_observed: f64,
    pub rel_err_full: f64,
    pub rank: usize,
    pub nzs: usize,
    pub score: Option<f64>,
    pub nzt: Option<usize>,
    pub tnz: Option<usize>,
    /// Full rel_err minus the noise level `‖Z − clean‖/‖Z‖`.
    pub excess_err: Option<f64>,
}

pub fn evaluate(
    z: &MaskedTensor,
    solution: &FactorSet,
    truth: Option<&FactorSet>,
    clean: Option<&DenseTensor>,
    epsilon: f64,
) -> Result<EvalReport> {
    let shape = z.shape();
    if let Some(c) = clean {
        if c.shape() != shape {
            return Err(Error::shape("clean tensor does not match the data"));
        }
    }
    let rel_err_observed = observed_rel_err(z, solution)?;
    let rel_err_full = full_rel_err(z.values(), solution)?;
    let ex = extract_pattern(solution, epsilon);
    let mut report = EvalReport {
        rel_err_observed,
        rel_err_full,
        rank: ex.rank,
        nzs: ex.nzs,
        score: None,
        nzt: None,
        tnz: None,
        excess_err: None,
    };
    if let Some(t) = truth {
        t.check_against(shape)?;
        report.score = Some(factor_score(solution, t));
        report.nzt = Some(count_true_zeros(&ex.pattern, t, epsilon).1);
        report.tnz = Some(extract_pattern(t, epsilon).nzs);
    }
    if let Some(c) = clean {
        let noise: f64 = z
            .values()
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        report.excess_err = Some(rel_err_full - ratio(noise, z.values().frobenius_norm_sq()));
    }
    Ok(report)
}
