//! Regularization path over an increasing λ grid with warm starts, sparsity
//! pattern extraction, refinement at a small λ, and solution selection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metrics::observed_rel_err;
use crate::solvers::{bcd_solve, sparse_constrained_solve, ElasticNetConfig, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::tensor::{normalize_factors, FactorSet, MaskedTensor};

pub const DEFAULT_LAMBDA_S: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Relative width of the rel_err band used by selection without a truth.
pub const SELECTION_BAND: f64 = 0.05;

/// Per mode, which factor entries may be nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    masks: Vec<DMatrix<bool>>,
}

impl SparsityPattern {
    pub fn new(masks: Vec<DMatrix<bool>>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::invalid("a pattern needs at least one mode"));
        }
        let rank = masks[0].ncols();
        if masks.iter().any(|m| m.ncols() != rank) {
            return Err(Error::shape("pattern masks disagree on column count"));
        }
        Ok(Self { masks })
    }

    pub fn all_free(shape: &[usize], rank: usize) -> Self {
        Self::filled(shape, rank, true)
    }

    pub fn all_frozen(shape: &[usize], rank: usize) -> Self {
        Self::filled(shape, rank, false)
    }

    fn filled(shape: &[usize], rank: usize, v: bool) -> Self {
        Self {
            masks: shape.iter().map(|&i| DMatrix::from_element(i, rank, v)).collect(),
        }
    }

    /// Entries with `|a| > epsilon` are free.
    pub fn from_factors(f: &FactorSet, epsilon: f64) -> Self {
        Self {
            masks: f.factors().iter().map(|a| a.map(|v| v.abs() > epsilon)).collect(),
        }
    }

    pub fn masks(&self) -> &[DMatrix<bool>] {
        &self.masks
    }

    pub fn shape(&self) -> Vec<usize> {
        self.masks.iter().map(|m| m.nrows()).collect()
    }

    pub fn rank(&self) -> usize {
        self.masks[0].ncols()
    }

    pub fn is_free(&self, n: usize, i: usize, r: usize) -> bool {
        self.masks[n][(i, r)]
    }

    /// Number of frozen entries across all modes.
    pub fn zeros(&self) -> usize {
        self.masks.iter().map(|m| m.iter().filter(|&&b| !b).count()).sum()
    }

    pub fn entries(&self) -> usize {
        self.masks.iter().map(|m| m.len()).sum()
    }

    /// Sets every frozen entry of `f` to zero.
    pub fn apply(&self, f: &mut FactorSet) {
        for (n, m) in self.masks.iter().enumerate() {
            let a = f.factor_mut(n);
            for (v, &free) in a.iter_mut().zip(m.iter()) {
                if !free {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn is_satisfied_by(&self, f: &FactorSet) -> bool {
        self.masks
            .iter()
            .zip(f.factors())
            .all(|(m, a)| m.iter().zip(a.iter()).all(|(&free, &v)| free || v == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Surviving columns, ordered by γ descending, values untouched.
    pub truncated: FactorSet,
    pub pattern: SparsityPattern,
    pub rank: usize,
    pub nzs: usize,
}

/// Sorts columns by γ, drops dead ones and reads off the sparsity pattern.
///
/// A column is dead when, after zeroing entries with `|a| ≤ epsilon`, some
/// mode norm vanishes or `γ ≤ epsilon`.
pub fn extract_pattern(f: &FactorSet, epsilon: f64) -> Extraction {
    let mut cleaned = f.clone();
    SparsityPattern::from_factors(f, epsilon).apply(&mut cleaned);
    let norm = normalize_factors(&cleaned);
    let keep: Vec<usize> = norm
        .order
        .iter()
        .zip(&norm.gammas)
        .filter(|&(_, &g)| g > epsilon)
        .map(|(&r, _)| r)
        .collect();
    let truncated = f.select_columns(&keep);
    let pattern = SparsityPattern::from_factors(&truncated, epsilon);
    let nzs = pattern.zeros();
    Extraction {
        rank: keep.len(),
        truncated,
        pattern,
        nzs,
    }
}

/// `10^lo, 10^(lo+1), …, 10^hi`.
pub fn decade_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 10f64.powi(k)).collect()
}

/// `1·10^k, 2·10^k, …, 9·10^k` for each decade `k` in `lo..=hi`, then `10^(hi+1)`.
pub fn fine_grid(lo: i32, hi: i32) -> Vec<f64> {
    let mut g: Vec<f64> = (lo..=hi)
        .flat_map(|k| (1..=9).map(move |m| m as f64 * 10f64.powi(k)))
        .collect();
    g.push(10f64.powi(hi + 1));
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    pub lambda_grid: Vec<f64>,
    pub alpha: f64,
    pub lambda_s: f64,
    pub epsilon: f64,
    pub inv_cov_diags: Vec<Vec<f64>>,
    pub max_iters: usize,
    pub refine_max_iters: usize,
    pub tol: f64,
}

impl PathConfig {
    /// Decade grid from 1e-10 to 1e10 with the default refinement settings.
    pub fn new(alpha: f64, inv_cov_diags: Vec<Vec<f64>>) -> Self {
        Self {
            lambda_grid: decade_grid(-10, 10),
            alpha,
            lambda_s: DEFAULT_LAMBDA_S,
            epsilon: DEFAULT_EPSILON,
            inv_cov_diags,
            max_iters: DEFAULT_MAX_ITERS,
            refine_max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.lambda_grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::invalid("lambda grid is empty"));
        }
        if self.lambda_grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid("lambda grid values must be finite and nonnegative"));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("lambda grid must be strictly increasing"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.lambda_s >= 0.0) {
            return Err(Error::invalid("lambda_s must be nonnegative"));
        }
        Ok(())
    }

    fn solver_config(&self, lambda: f64, max_iters: usize) -> Result<ElasticNetConfig> {
        Ok(ElasticNetConfig::new(lambda, self.alpha, self.inv_cov_diags.clone())?
            .with_max_iters(max_iters)
            .with_tol(self.tol))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub factors: FactorSet,
    pub rel_err: f64,
    pub iterations: usize,
    /// False when carried over from an earlier entry with the same pattern.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub lambda: f64,
    pub detected_rank: usize,
    pub nzs: usize,
    pub raw_factors: FactorSet,
    pub raw_rel_err: f64,
    pub iterations_raw: usize,
    pub pattern: SparsityPattern,
    pub refined: Option<Refinement>,
    /// Solver failure message, if the solve at this λ did not finish.
    pub failure: Option<String>,
}

impl PathEntry {
    /// Refined factors when available, otherwise the raw ones.
    pub fn solution(&self) -> &FactorSet {
        self.refined.as_ref().map_or(&self.raw_factors, |r| &r.factors)
    }

    pub fn rel_err(&self) -> f64 {
        self.refined.as_ref().map_or(self.raw_rel_err, |r| r.rel_err)
    }
}

/// Runs the warm-started path. The pattern is refined at `lambda_s` whenever
/// it differs from the previous entry's (a rank change counts as a change);
/// otherwise the previous refinement is carried forward.
pub fn solution_path(z: &MaskedTensor, init: &FactorSet, pcfg: &PathConfig) -> Result<Vec<PathEntry>> {
    pcfg.validate()?;
    init.check_against(z.shape())?;
    let mut current = init.clone();
    let mut entries: Vec<PathEntry> = Vec::with_capacity(pcfg.lambda_grid.len());

    for &lambda in &pcfg.lambda_grid {
        let cfg = pcfg.solver_config(lambda, pcfg.max_iters)?;
        let (solved, iterations, failure) = match bcd_solve(z, &current, &cfg) {
            Ok((f, rep)) => (f, rep.iterations, None),
            Err(e) => (current.clone(), 0, Some(e.to_string())),
        };
        let ex = extract_pattern(&solved, pcfg.epsilon);
        let raw_rel_err = observed_rel_err(z, &ex.truncated)?;

        let prev = entries.last();
        let changed = prev.is_none_or(|p| p.pattern != ex.pattern);
        let mut failure = failure;
        let refined = if ex.rank == 0 {
            None
        } else if changed {
            let rcfg = pcfg.solver_config(pcfg.lambda_s, pcfg.refine_max_iters)?;
            match sparse_constrained_solve(z, &ex.truncated, &ex.pattern, &rcfg) {
                Ok((f, rep)) => Some(Refinement {
                    rel_err: observed_rel_err(z, &f)?,
                    factors: f,
                    iterations: rep.iterations,
                    fresh: true,
                }),
                Err(e) => {
                    failure.get_or_insert(format!("refinement: {e}"));
                    None
                }
            }
        } else {
            prev.and_then(|p| p.refined.clone())
                .map(|r| Refinement { fresh: false, ..r })
        };

        current = ex.truncated.clone();
        entries.push(PathEntry {
            lambda,
            detected_rank: ex.rank,
            nzs: ex.nzs,
            raw_factors: ex.truncated,
            raw_rel_err,
            iterations_raw: iterations,
            pattern: ex.pattern,
            refined,
            failure,
        });
    }
    Ok(entries)
}

/// `(nzs, nzt)`: zeros in `pattern`, and zeros shared with the thresholded
/// truth. Both sides are γ-sorted and paired column by column.
pub fn count_true_zeros(pattern: &SparsityPattern, truth: &FactorSet, epsilon: f64) -> (usize, usize) {
    let t = extract_pattern(truth, epsilon).pattern;
    let nzs = pattern.zeros();
    let k = pattern.rank().min(t.rank());
    let mut nzt = 0;
    for (a, b) in pattern.masks().iter().zip(t.masks()) {
        if a.nrows() != b.nrows() {
            continue;
        }
        for r in 0..k {
            nzt += (0..a.nrows()).filter(|&i| !a[(i, r)] && !b[(i, r)]).count();
        }
    }
    (nzs, nzt)
}

/// Picks one entry of a path.
///
/// With a truth: restrict to the smallest detected rank not below the true
/// rank, then take the last entry whose zeros are all true zeros with
/// `nzs ≤ tnz`, else the last with `nzs < tnz`. Without a truth, or when
/// neither rule applies, take the sparsest entry whose rel_err is within
/// [`SELECTION_BAND`] of the best, breaking ties by lower rel_err.
pub fn select_solution<'a>(path: &'a [PathEntry], truth: Option<&FactorSet>, epsilon: f64) -> Result<&'a PathEntry> {
    if path.is_empty() {
        return Err(Error::invalid("cannot select from an empty path"));
    }
    let Some(truth) = truth else {
        return Ok(band_choice(path.iter()));
    };
    let t = extract_pattern(truth, epsilon);
    let tnz = t.nzs;
    let target = path
        .iter()
        .map(|e| e.detected_rank)
        .filter(|&r| r >= t.rank)
        .min()
        .unwrap_or_else(|| path.iter().map(|e| e.detected_rank).max().unwrap_or(0));
    let same_rank: Vec<&PathEntry> = path.iter().filter(|e| e.detected_rank == target).collect();

    let subset = same_rank.iter().rev().find(|e| {
        let (nzs, nzt) = count_true_zeros(&e.pattern, truth, epsilon);
        nzt == nzs && nzs <= tnz
    });
    if let Some(e) = subset {
        return Ok(e);
    }
    if let Some(e) = same_rank.iter().rev().find(|e| e.nzs < tnz) {
        return Ok(e);
    }
    Ok(band_choice(same_rank.into_iter()))
}

fn band_choice<'a>(entries: impl Iterator<Item = &'a PathEntry> + Clone) -> &'a PathEntry {
    let best = entries.clone().map(PathEntry::rel_err).fold(f64::INFINITY, f64::min);
    let limit = best * (1.0 + SELECTION_BAND);
    entries
        .filter(|e| e.rel_err() <= limit)
        .reduce(|a, b| {
            let better = b.nzs > a.nzs || (b.nzs == a.nzs && b.rel_err() < a.rel_err());
            if better {
                b
            } else {
                a
            }
        })
        .expect("the best entry lies in its own band")
}
