//! Prior-side machinery: covariance estimates from data and the synthetic
//! generator (rejection-sampled factors, gate sparsification, SNR-calibrated
//! noise, random missing entries).

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{cp_reconstruct, validate_shape, DenseTensor, FactorSet, MaskedTensor};

/// Estimated covariance diagonals never go below this.
pub const COVARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    /// Common trace of every mode covariance.
    pub theta: f64,
    pub diags: Vec<Vec<f64>>,
}

/// Moment estimate of the diagonal mode covariances from a fully observed
/// tensor: `θ = (‖X‖²/R)^{1/N}`, `R_n(i,i) = ‖X_(n)(i,:)‖² / (R θ^{N−1})`,
/// floored at [`COVARIANCE_FLOOR`].
pub fn estimate_covariance_diags(x: &DenseTensor, rank: usize) -> Result<CovarianceEstimate> {
    if rank == 0 {
        return Err(Error::invalid("covariance estimate needs rank >= 1"));
    }
    let norm_sq = x.frobenius_norm_sq();
    if norm_sq == 0.0 {
        return Err(Error::invalid("covariance estimate is undefined for a zero tensor"));
    }
    let n_modes = x.ndim() as f64;
    let theta = (norm_sq / rank as f64).powf(1.0 / n_modes);
    let scale = rank as f64 * theta.powf(n_modes - 1.0);

    let shape = x.shape();
    let mut diags: Vec<Vec<f64>> = shape.iter().map(|&i| vec![0.0; i]).collect();
    let mut idx = vec![0usize; shape.len()];
    for &v in x.data() {
        let sq = v * v;
        for (n, &i) in idx.iter().enumerate() {
            diags[n][i] += sq;
        }
        crate::tensor::increment_index(&mut idx, shape);
    }
    for d in &mut diags {
        for k in d.iter_mut() {
            *k = (*k / scale).max(COVARIANCE_FLOOR);
        }
    }
    Ok(CovarianceEstimate { theta, diags })
}

/// Same estimate on `Z ⊛ Δ`.
pub fn estimate_from_observed(z: &MaskedTensor, rank: usize) -> Result<CovarianceEstimate> {
    estimate_covariance_diags(&z.masked_values(), rank)
}

/// One draw from the density `∝ exp(−x²/(2·cov) − μ|x|)`.
///
/// Gaussian proposals are accepted with probability `exp(−μ|x|)`, which is
/// exact and needs no envelope constant.
pub fn sample_prior_factor_entry<R: Rng + ?Sized>(cov_ii: f64, mu: f64, rng: &mut R) -> f64 {
    debug_assert!(cov_ii > 0.0 && mu >= 0.0);
    let sd = cov_ii.sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = sd * z;
        if mu == 0.0 || rng.random::<f64>() < (-mu * x.abs()).exp() {
            return x;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mode_cov_diags: Vec<Vec<f64>>,
    pub mu: f64,
    /// Factor entries with magnitude below the gate are set to zero.
    pub gate: f64,
    pub snr_db: Option<f64>,
    pub missing_fraction: f64,
}

impl PriorSpec {
    pub fn validate(&self, shape: &[usize]) -> Result<()> {
        let dims: Vec<usize> = self.mode_cov_diags.iter().map(Vec::len).collect();
        if dims != shape {
            return Err(Error::shape(format!(
                "covariance lengths {dims:?} do not match shape {shape:?}"
            )));
        }
        if self.mode_cov_diags.iter().flatten().any(|&c| !(c > 0.0)) {
            return Err(Error::invalid("covariance diagonals must be positive"));
        }
        if !(self.mu >= 0.0) || !(self.gate >= 0.0) {
            return Err(Error::invalid("mu and gate must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::invalid(format!(
                "missing fraction must lie in [0, 1), got {}",
                self.missing_fraction
            )));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::invalid("snr must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub truth: FactorSet,
    pub clean: DenseTensor,
    pub observed: MaskedTensor,
    pub noise_sigma: f64,
}

/// Draws a synthetic instance. Random numbers are consumed in a fixed order:
/// factor entries (mode, then column, then row), noise, then the mask.
pub fn generate_synthetic<R: Rng + ?Sized>(
    shape: &[usize],
    rank: usize,
    spec: &PriorSpec,
    rng: &mut R,
) -> Result<SyntheticInstance> {
    validate_shape(shape, 2)?;
    if rank == 0 {
        return Err(Error::invalid("synthetic rank must be >= 1"));
    }
    spec.validate(shape)?;

    let factors = shape
        .iter()
        .zip(&spec.mode_cov_diags)
        .map(|(&dim, cov)| {
            let mut m = nalgebra::DMatrix::zeros(dim, rank);
            for r in 0..rank {
                for i in 0..dim {
                    let v = sample_prior_factor_entry(cov[i], spec.mu, rng);
                    m[(i, r)] = if v.abs() < spec.gate { 0.0 } else { v };
                }
            }
            m
        })
        .collect();
    let truth = FactorSet::new(factors)?;
    let clean = cp_reconstruct(&truth);

    let mut values = clean.clone();
    let noise_sigma = match spec.snr_db {
        Some(snr) => {
            let sigma = (population_variance(clean.data()) / 10f64.powf(snr / 10.0)).sqrt();
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
                for v in values.data_mut() {
                    *v += noise.sample(rng);
                }
            }
            sigma
        }
        None => 0.0,
    };

    let mask: Vec<bool> = if spec.missing_fraction > 0.0 {
        (0..values.len())
            .map(|_| !rng.random_bool(spec.missing_fraction))
            .collect()
    } else {
        vec![true; values.len()]
    };
    let observed = MaskedTensor::new(values, mask)?;
    Ok(SyntheticInstance {
        truth,
        clean,
        observed,
        noise_sigma,
    })
}

/// Diagonal covariances of the three-way simulation scheme: one dominant
/// leading entry per mode, the rest drawn from a narrow range.
pub fn default_simulation_covariances<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if shape.len() != 3 {
        return Err(Error::Unsupported(format!(
            "the simulation covariance scheme is three-way only, got {} modes",
            shape.len()
        )));
    }
    validate_shape(shape, 3)?;
    const RANGES: [((f64, f64), (f64, f64)); 3] = [
        ((101.0, 131.0), (1.0, 31.0)),
        ((1001.0, 1021.0), (1.0, 21.0)),
        ((10001.0, 10011.0), (1.0, 11.0)),
    ];
    Ok(shape
        .iter()
        .zip(RANGES)
        .map(|(&dim, (first, rest))| {
            (0..dim)
                .map(|i| {
                    let (lo, hi) = if i == 0 { first } else { rest };
                    rng.random_range(lo..hi)
                })
                .collect()
        })
        .collect())
}

pub(crate) fn population_variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ones_tensor_estimate() {
        let x = DenseTensor::from_fn(&[2, 2, 2], |_| 1.0);
        let est = estimate_covariance_diags(&x, 1).unwrap();
        assert!((est.theta - 2.0).abs() < 1e-15);
        for d in &est.diags {
            for &v in d {
                assert!((v - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_slice_is_floored() {
        let x = DenseTensor::from_fn(&[3, 2, 2], |ix| if ix[0] == 1 { 0.0 } else { 2.0 });
        let est = estimate_covariance_diags(&x, 2).unwrap();
        assert_eq!(est.diags[0][1], COVARIANCE_FLOOR);
        assert!(est.diags[0][0] > COVARIANCE_FLOOR);
    }

    #[test]
    fn scaling_and_trace_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DenseTensor::from_fn(&[3, 4, 5], |_| rng.random_range(-1.0..1.0));
        let a = estimate_covariance_diags(&x, 2).unwrap();
        let c: f64 = 3.0;
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v *= c);
        let b = estimate_covariance_diags(&y, 2).unwrap();
        assert!((b.theta / a.theta - c.powf(2.0 / 3.0)).abs() < 1e-12);
        for est in [&a, &b] {
            for d in &est.diags {
                let tr: f64 = d.iter().sum();
                assert!((tr - est.theta).abs() / est.theta < 1e-10);
            }
        }
    }

    #[test]
    fn estimate_errors() {
        let x = DenseTensor::zeros(&[2, 2, 2]);
        assert!(estimate_covariance_diags(&x, 1).is_err());
        let y = DenseTensor::from_fn(&[2, 2, 2], |_| 1.0);
        assert!(estimate_covariance_diags(&y, 0).is_err());
    }

    #[test]
    fn sampler_without_l1_is_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_prior_factor_entry(2.5, 0.0, &mut rng)).collect();
        let var = population_variance(&draws);
        assert!((var - 2.5).abs() / 2.5 < 0.05, "var {var}");
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn strong_l1_concentrates_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let plain: f64 = (0..n)
            .map(|_| sample_prior_factor_entry(1.0, 0.0, &mut rng).abs())
            .sum::<f64>()
            / n as f64;
        let sparse: f64 = (0..n)
            .map(|_| sample_prior_factor_entry(1.0, 100.0, &mut rng).abs())
            .sum::<f64>()
            / n as f64;
        assert!(sparse < plain);
        assert!(sparse < 0.05, "mean |x| {sparse}");
    }

    fn plain_spec(shape: &[usize]) -> PriorSpec {
        PriorSpec {
            mode_cov_diags: shape.iter().map(|&i| vec![1.0; i]).collect(),
            mu: 0.1,
            gate: 0.0,
            snr_db: None,
            missing_fraction: 0.0,
        }
    }

    #[test]
    fn noiseless_complete_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = generate_synthetic(&[4, 5, 6], 2, &plain_spec(&[4, 5, 6]), &mut rng).unwrap();
        assert_eq!(inst.observed.values(), &inst.clean);
        assert!(inst.observed.is_fully_observed());
        assert_eq!(inst.noise_sigma, 0.0);
        assert_eq!(inst.clean, cp_reconstruct(&inst.truth));
    }

    #[test]
    fn gate_zeroes_small_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut spec = plain_spec(&[10, 10, 10]);
        spec.gate = 0.5;
        let inst = generate_synthetic(&[10, 10, 10], 3, &spec, &mut rng).unwrap();
        let mut zeros = 0;
        for f in inst.truth.factors() {
            for &v in f.iter() {
                assert!(v == 0.0 || v.abs() >= 0.5);
                zeros += (v == 0.0) as usize;
            }
        }
        assert!(zeros > 0);
    }

    #[test]
    fn snr_and_missing_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = [50, 50, 50];
        let mut spec = plain_spec(&shape);
        spec.snr_db = Some(20.0);
        spec.missing_fraction = 0.25;
        let inst = generate_synthetic(&shape, 3, &spec, &mut rng).unwrap();
        let noise: Vec<f64> = inst
            .observed
            .values()
            .data()
            .iter()
            .zip(inst.clean.data())
            .map(|(a, b)| a - b)
            .collect();
        let ratio = population_variance(&noise) / population_variance(inst.clean.data());
        assert!((ratio - 0.01).abs() / 0.01 < 0.1, "ratio {ratio}");

        let n = 125_000.0;
        let mean = 0.75 * n;
        let sd = (n * 0.75 * 0.25f64).sqrt();
        let count = inst.observed.observed_count() as f64;
        assert!((count - mean).abs() < 3.0 * sd, "observed {count}");
    }

    #[test]
    fn simulation_covariance_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cov = default_simulation_covariances(&[8, 7, 6], &mut rng).unwrap();
        let bounds = [
            ((101.0, 131.0), (1.0, 31.0)),
            ((1001.0, 1021.0), (1.0, 21.0)),
            ((10001.0, 10011.0), (1.0, 11.0)),
        ];
        for (d, (first, rest)) in cov.iter().zip(bounds) {
            assert!(d[0] >= first.0 && d[0] < first.1);
            assert!(d[1..].iter().all(|&v| v >= rest.0 && v < rest.1));
        }
        assert!(cov[2][0] > 10000.0 && cov[2][1..].iter().all(|&v| v < 10000.0));

        let other = default_simulation_covariances(&[8, 7, 6], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_ne!(cov, other);
        assert!(matches!(
            default_simulation_covariances(&[3, 3], &mut rng),
            Err(Error::Unsupported(_))
        ));
    }
}
