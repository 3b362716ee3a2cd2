//! Dense N-way tensors with an observation mask, CP factor sets, and the
//! unfolding / Kronecker kernels shared by every solver.
//!
//! Storage is first-index-fastest: the entry `(i_1, …, i_N)` lives at
//! `i_1 + I_1 * (i_2 + I_2 * (i_3 + …))`. Mode indices in this API are
//! zero-based.
//!
//! The mode-`n` unfolding puts `i_n` on the rows and enumerates the remaining
//! indices on the columns with the lowest remaining mode fastest. Under that
//! convention the unfolding of a rank-1 term `a_1 ∘ … ∘ a_N` is exactly
//! `a_n hᵀ` with `h = a_N ⊗ … ⊗ a_{n+1} ⊗ a_{n-1} ⊗ … ⊗ a_1`, which is what
//! [`kron_columns`] returns.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::solvers::ElasticNetConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape, 1)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment_index(&mut idx, shape);
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        linear_index(&self.shape, idx)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.linear_index(idx);
        self.data[k] = value;
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }
}

/// Observed tensor `Z` together with its binary observation mask `Δ`.
///
/// Values at unobserved positions are kept but never read by any operation
/// without first being multiplied by the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTensor {
    values: DenseTensor,
    mask: Vec<bool>,
    observed: usize,
}

impl MaskedTensor {
    pub fn new(values: DenseTensor, mask: Vec<bool>) -> Result<Self> {
        validate_shape(values.shape(), 2)?;
        if mask.len() != values.len() {
            return Err(Error::shape(format!(
                "mask has {} entries, tensor has {}",
                mask.len(),
                values.len()
            )));
        }
        let observed = mask.iter().filter(|&&m| m).count();
        Ok(Self { values, mask, observed })
    }

    pub fn fully_observed(values: DenseTensor) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(values, mask)
    }

    /// Builds the mask from a numeric array that must hold only 0 and 1.
    pub fn with_numeric_mask(values: DenseTensor, mask: &[f64]) -> Result<Self> {
        let mask = mask
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                if m == 1.0 {
                    Ok(true)
                } else if m == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::invalid(format!("mask entry {k} is {m}, expected 0 or 1")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, mask)
    }

    pub fn values(&self) -> &DenseTensor {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn ndim(&self) -> usize {
        self.values.ndim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.observed
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed == self.mask.len()
    }

    /// `Z ⊛ Δ`.
    pub fn masked_values(&self) -> DenseTensor {
        let data = self
            .values
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        DenseTensor {
            shape: self.values.shape.clone(),
            data,
        }
    }

    /// `‖Z ⊛ Δ‖_F²`.
    pub fn observed_norm_sq(&self) -> f64 {
        self.values
            .data()
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v * v)
            .sum()
    }
}

/// The decomposition variable: one `I_n × R` matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: Vec<DMatrix<f64>>,
}

impl FactorSet {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("a factor set needs at least one mode"));
        }
        let rank = factors[0].ncols();
        if let Some((n, f)) = factors.iter().enumerate().find(|(_, f)| f.ncols() != rank) {
            return Err(Error::shape(format!(
                "factor {n} has {} columns, factor 0 has {rank}",
                f.ncols()
            )));
        }
        if let Some(n) = factors.iter().position(|f| f.nrows() == 0) {
            return Err(Error::shape(format!("factor {n} has no rows")));
        }
        Ok(Self { factors })
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Self {
        Self {
            factors: shape.iter().map(|&i| DMatrix::zeros(i, rank)).collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &DMatrix<f64> {
        &self.factors[n]
    }

    pub(crate) fn factor_mut(&mut self, n: usize) -> &mut DMatrix<f64> {
        &mut self.factors[n]
    }

    pub fn into_factors(self) -> Vec<DMatrix<f64>> {
        self.factors
    }

    /// Column `r` of mode `n` as a contiguous slice.
    pub fn column(&self, n: usize, r: usize) -> &[f64] {
        let rows = self.factors[n].nrows();
        &self.factors[n].as_slice()[r * rows..(r + 1) * rows]
    }

    pub(crate) fn column_mut(&mut self, n: usize, r: usize) -> &mut [f64] {
        let rows = self.factors[n].nrows();
        &mut self.factors[n].as_mut_slice()[r * rows..(r + 1) * rows]
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, cols: &[usize]) -> FactorSet {
        let factors = self
            .factors
            .iter()
            .map(|f| DMatrix::from_fn(f.nrows(), cols.len(), |i, j| f[(i, cols[j])]))
            .collect();
        FactorSet { factors }
    }

    pub fn count_zeros(&self) -> usize {
        self.factors
            .iter()
            .map(|f| f.iter().filter(|&&v| v == 0.0).count())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    pub fn check_against(&self, shape: &[usize]) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::shape(format!(
                "factor rows {:?} do not match tensor shape {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(())
    }
}

/// Unit-norm columns and their character values `γ`, sorted by `γ` descending.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDecomposition {
    pub units: Vec<DMatrix<f64>>,
    pub gammas: Vec<f64>,
    /// `order[k]` is the column of the source factor set now at position `k`.
    pub order: Vec<usize>,
}

impl NormalizedDecomposition {
    /// Spreads each `γ_r` evenly across modes, giving a factor set with the
    /// same reconstruction.
    pub fn to_factor_set(&self) -> FactorSet {
        let n_modes = self.units.len() as f64;
        let factors = self
            .units
            .iter()
            .map(|u| {
                let mut m = u.clone();
                for (r, &g) in self.gammas.iter().enumerate() {
                    let s = g.powf(1.0 / n_modes);
                    m.column_mut(r).scale_mut(s);
                }
                m
            })
            .collect();
        FactorSet { factors }
    }
}

pub(crate) fn validate_shape(shape: &[usize], min_modes: usize) -> Result<()> {
    if shape.len() < min_modes {
        return Err(Error::invalid(format!(
            "tensor needs at least {min_modes} modes, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!(
            "every dimension must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

pub(crate) fn linear_index(shape: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), idx.len());
    idx.iter().zip(shape).rev().fold(0, |acc, (&i, &dim)| acc * dim + i)
}

pub(crate) fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for (i, &dim) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < dim {
            return;
        }
        *i = 0;
    }
}

/// Splits the storage order around mode `n`:
/// `k = inner + left * (i_n + dim * outer)`, and the unfolding column is
/// `inner + left * outer`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ModeLayout {
    pub left: usize,
    pub dim: usize,
    pub right: usize,
}

impl ModeLayout {
    pub fn new(shape: &[usize], n: usize) -> Self {
        Self {
            left: shape[..n].iter().product(),
            dim: shape[n],
            right: shape[n + 1..].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.left * self.right
    }
}

/// Mode-`n` unfolding, `I_n × ∏_{m≠n} I_m`.
pub fn mode_unfold(t: &DenseTensor, n: usize) -> Result<DMatrix<f64>> {
    if n >= t.ndim() {
        return Err(Error::invalid(format!(
            "mode {n} out of range for a {}-way tensor",
            t.ndim()
        )));
    }
    let lay = ModeLayout::new(t.shape(), n);
    let mut m = DMatrix::zeros(lay.dim, lay.cols());
    for outer in 0..lay.right {
        for i in 0..lay.dim {
            let base = lay.left * (i + lay.dim * outer);
            for inner in 0..lay.left {
                m[(i, inner + lay.left * outer)] = t.data[base + inner];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`mode_unfold`].
pub fn mode_fold(m: &DMatrix<f64>, shape: &[usize], n: usize) -> Result<DenseTensor> {
    if n >= shape.len() {
        return Err(Error::invalid(format!(
            "mode {n} out of range for a {}-way tensor",
            shape.len()
        )));
    }
    let lay = ModeLayout::new(shape, n);
    if m.nrows() != lay.dim || m.ncols() != lay.cols() {
        return Err(Error::shape(format!(
            "a {}x{} matrix cannot fold into {shape:?} along mode {n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut t = DenseTensor::zeros(shape);
    for outer in 0..lay.right {
        for i in 0..lay.dim {
            let base = lay.left * (i + lay.dim * outer);
            for inner in 0..lay.left {
                t.data[base + inner] = m[(i, inner + lay.left * outer)];
            }
        }
    }
    Ok(t)
}

/// Linearized outer product `c_1 ∘ c_2 ∘ … ∘ c_N` (first vector fastest),
/// which is the Kronecker product `c_N ⊗ … ⊗ c_1`.
pub(crate) fn outer_product(columns: &[&[f64]]) -> Vec<f64> {
    let len: usize = columns.iter().map(|c| c.len()).product();
    let mut out = Vec::with_capacity(len);
    out.push(1.0);
    for col in columns {
        let prev = out.len();
        out.resize(prev * col.len(), 0.0);
        // Expand in place from the back so earlier blocks are read before overwrite.
        for (i, &c) in col.iter().enumerate().rev() {
            for j in (0..prev).rev() {
                out[j + prev * i] = out[j] * c;
            }
        }
    }
    out
}

/// `h = a_N ⊗ … ⊗ a_{n+1} ⊗ a_{n-1} ⊗ … ⊗ a_1` for component `r`, skipping mode `skip`.
pub fn kron_columns(f: &FactorSet, r: usize, skip: usize) -> Vec<f64> {
    let cols: Vec<&[f64]> = (0..f.ndim()).filter(|&m| m != skip).map(|m| f.column(m, r)).collect();
    outer_product(&cols)
}

/// Rank-1 tensor of component `r`, linearized in storage order.
pub(crate) fn component_tensor(f: &FactorSet, r: usize) -> Vec<f64> {
    let cols: Vec<&[f64]> = (0..f.ndim()).map(|m| f.column(m, r)).collect();
    outer_product(&cols)
}

/// `X = Σ_r a_r^(1) ∘ … ∘ a_r^(N)`.
pub fn cp_reconstruct(f: &FactorSet) -> DenseTensor {
    let shape = f.shape();
    let mut out = DenseTensor::zeros(&shape);
    for r in 0..f.rank() {
        let term = component_tensor(f, r);
        for (o, t) in out.data.iter_mut().zip(term) {
            *o += t;
        }
    }
    out
}

/// Unit columns and `γ_r = ∏_n ‖a_r^(n)‖₂`, stably sorted by `γ` descending.
pub fn normalize_factors(f: &FactorSet) -> NormalizedDecomposition {
    let rank = f.rank();
    let norms: Vec<Vec<f64>> = (0..f.ndim())
        .map(|n| (0..rank).map(|r| l2_norm(f.column(n, r))).collect())
        .collect();
    let gammas: Vec<f64> = (0..rank)
        .map(|r| {
            if norms.iter().any(|nm| nm[r] == 0.0) {
                0.0
            } else {
                norms.iter().map(|nm| nm[r]).product()
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|&a, &b| gammas[b].total_cmp(&gammas[a]));

    let units = (0..f.ndim())
        .map(|n| {
            let src = f.factor(n);
            let mut u = DMatrix::zeros(src.nrows(), rank);
            for (k, &r) in order.iter().enumerate() {
                if gammas[r] > 0.0 {
                    let s = 1.0 / norms[n][r];
                    for i in 0..src.nrows() {
                        u[(i, k)] = src[(i, r)] * s;
                    }
                }
            }
            u
        })
        .collect();
    let sorted_gammas = order.iter().map(|&r| gammas[r]).collect();
    NormalizedDecomposition {
        units,
        gammas: sorted_gammas,
        order,
    }
}

/// `(Z − X) ⊛ Δ`.
pub fn masked_residual(z: &MaskedTensor, f: &FactorSet) -> Result<DenseTensor> {
    f.check_against(z.shape())?;
    let x = cp_reconstruct(f);
    let data = z
        .values()
        .data()
        .iter()
        .zip(x.data())
        .zip(z.mask())
        .map(|((&zv, &xv), &m)| if m { zv - xv } else { 0.0 })
        .collect();
    Ok(DenseTensor {
        shape: z.shape().to_vec(),
        data,
    })
}

/// Elastic-net penalty `λ Σ_r Σ_n [(1−α)/2 · aᵀ T_n a + α ‖a‖₁]`.
pub fn penalty(f: &FactorSet, cfg: &ElasticNetConfig) -> f64 {
    let mut quad = 0.0;
    let mut l1 = 0.0;
    for (n, t) in cfg.inv_cov_diags.iter().enumerate() {
        let m = f.factor(n);
        for r in 0..m.ncols() {
            for (i, &ti) in t.iter().enumerate() {
                let a = m[(i, r)];
                quad += ti * a * a;
                l1 += a.abs();
            }
        }
    }
    cfg.lambda * ((1.0 - cfg.alpha) / 2.0 * quad + cfg.alpha * l1)
}

/// `½‖(Z − X) ⊛ Δ‖_F² + penalty`.
pub fn objective(z: &MaskedTensor, f: &FactorSet, cfg: &ElasticNetConfig) -> Result<f64> {
    cfg.check_against(z.shape())?;
    let resid = masked_residual(z, f)?;
    Ok(0.5 * resid.frobenius_norm_sq() + penalty(f, cfg))
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn random_factors(shape: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> FactorSet {
        FactorSet::new(
            shape
                .iter()
                .map(|&i| DMatrix::from_fn(i, rank, |_, _| rng.random_range(-2.0..2.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unfold_matrix_mode_zero_is_identity() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = mode_unfold(&t, 0).unwrap();
        assert_eq!(m, DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn unfold_constant_tensor() {
        let t = DenseTensor::from_fn(&[2, 3, 4], |_| 1.0);
        let m = mode_unfold(&t, 1).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 8));
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unfold_last_mode_index_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&[2, 2, 2], &mut rng);
        let m = mode_unfold(&t, 2).unwrap();
        // Enumerate all 8 entries: column j = i1 + 2*i2.
        for i1 in 0..2 {
            for i2 in 0..2 {
                for k in 0..2 {
                    assert_eq!(m[(k, i1 + 2 * i2)], t.get(&[i1, i2, k]));
                }
            }
        }
        assert_eq!(m[(1, 0)], t.get(&[0, 0, 1]));
        assert_eq!(m[(1, 3)], t.get(&[1, 1, 1]));
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let t = DenseTensor::zeros(&[2, 2]);
        assert!(matches!(mode_unfold(&t, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reconstruct_ones_and_empty() {
        let f = FactorSet::new(vec![DMatrix::from_element(2, 1, 1.0); 3]).unwrap();
        assert!(cp_reconstruct(&f).data().iter().all(|&v| v == 1.0));
        let f0 = FactorSet::zeros(&[2, 3, 4], 0);
        let x = cp_reconstruct(&f0);
        assert_eq!(x.shape(), &[2, 3, 4]);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = FactorSet::new(
            (0..3)
                .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random_range(-5i32..=5) as f64))
                .collect(),
        )
        .unwrap();
        let x = cp_reconstruct(&f);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut expect = 0.0;
                    for r in 0..2 {
                        expect += f.factor(0)[(i, r)] * f.factor(1)[(j, r)] * f.factor(2)[(k, r)];
                    }
                    assert_eq!(x.get(&[i, j, k]), expect);
                }
            }
        }
    }

    #[test]
    fn kron_two_modes_is_other_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_factors(&[3, 4], 2, &mut rng);
        assert_eq!(kron_columns(&f, 1, 0), f.column(1, 1).to_vec());
        assert_eq!(kron_columns(&f, 0, 1), f.column(0, 0).to_vec());
    }

    #[test]
    fn kron_of_ones_is_ones() {
        let mut f = FactorSet::zeros(&[2, 3, 4], 1);
        for n in 0..3 {
            f.column_mut(n, 0).fill(1.0);
        }
        f.column_mut(1, 0)[2] = 7.0;
        assert_eq!(kron_columns(&f, 0, 1), vec![1.0; 8]);
    }

    #[test]
    fn kron_matches_unfolded_outer_product() {
        let f = FactorSet::new(vec![
            DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
            DMatrix::from_column_slice(3, 1, &[3.0, 5.0, 7.0]),
            DMatrix::from_column_slice(2, 1, &[11.0, 13.0]),
        ])
        .unwrap();
        let outer = DenseTensor::from_fn(&[2, 3, 2], |ix| {
            f.factor(0)[(ix[0], 0)] * f.factor(1)[(ix[1], 0)] * f.factor(2)[(ix[2], 0)]
        });
        for n in 0..3 {
            let h = kron_columns(&f, 0, n);
            let a = f.column(n, 0);
            let unfolded = mode_unfold(&outer, n).unwrap();
            for i in 0..a.len() {
                for (j, hj) in h.iter().enumerate() {
                    assert_eq!(unfolded[(i, j)], a[i] * hj);
                }
            }
        }
    }

    #[test]
    fn normalize_product_of_norms() {
        let f = FactorSet::new(vec![
            DMatrix::from_column_slice(2, 1, &[2.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, -3.0]),
            DMatrix::from_column_slice(1, 1, &[4.0]),
        ])
        .unwrap();
        let nd = normalize_factors(&f);
        assert_eq!(nd.gammas, vec![24.0]);
        assert_eq!(nd.units[1][(1, 0)], -1.0);
    }

    #[test]
    fn normalize_zero_column_has_zero_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = random_factors(&[3, 3, 3], 2, &mut rng);
        f.column_mut(1, 0).fill(0.0);
        let nd = normalize_factors(&f);
        assert_eq!(nd.gammas[1], 0.0);
        assert_eq!(nd.order, vec![1, 0]);
        assert!(nd.units.iter().all(|u| u.column(1).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn normalize_preserves_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_factors(&[4, 3, 5], 3, &mut rng);
        let nd = normalize_factors(&f);
        assert!(nd.gammas.windows(2).all(|w| w[0] >= w[1]));
        let a = cp_reconstruct(&f);
        let b = cp_reconstruct(&nd.to_factor_set());
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(diff.sqrt() / a.frobenius_norm() < 1e-12);
    }

    #[test]
    fn residual_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_factors(&[2, 2, 2], 2, &mut rng);
        let x = cp_reconstruct(&f);
        let z = MaskedTensor::fully_observed(x.clone()).unwrap();
        assert!(masked_residual(&z, &f).unwrap().data().iter().all(|&v| v == 0.0));

        let noisy = random_tensor(&[2, 2, 2], &mut rng);
        let hidden = MaskedTensor::new(noisy.clone(), vec![false; 8]).unwrap();
        assert!(masked_residual(&hidden, &f).unwrap().data().iter().all(|&v| v == 0.0));

        let mask: Vec<bool> = (0..8).map(|k| k % 3 != 0).collect();
        let z = MaskedTensor::new(noisy.clone(), mask.clone()).unwrap();
        let res = masked_residual(&z, &f).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let lin = i + 2 * j + 4 * k;
                    let mut xv = 0.0;
                    for r in 0..2 {
                        xv += f.factor(0)[(i, r)] * f.factor(1)[(j, r)] * f.factor(2)[(k, r)];
                    }
                    let expect = if mask[lin] { noisy.get(&[i, j, k]) - xv } else { 0.0 };
                    assert_eq!(res.get(&[i, j, k]), expect);
                }
            }
        }
    }

    #[test]
    fn residual_shape_mismatch() {
        let z = MaskedTensor::fully_observed(DenseTensor::zeros(&[2, 2, 2])).unwrap();
        let f = FactorSet::zeros(&[2, 3, 2], 1);
        assert!(matches!(masked_residual(&z, &f), Err(Error::ShapeMismatch(_))));
    }

    fn unit_cfg(shape: &[usize], lambda: f64, alpha: f64) -> ElasticNetConfig {
        ElasticNetConfig::new(lambda, alpha, shape.iter().map(|&i| vec![1.0; i]).collect()).unwrap()
    }

    #[test]
    fn objective_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_factors(&[3, 2, 2], 2, &mut rng);
        let z = MaskedTensor::fully_observed(cp_reconstruct(&f)).unwrap();
        assert_eq!(objective(&z, &f, &unit_cfg(&[3, 2, 2], 0.0, 0.5)).unwrap(), 0.0);

        let vals = random_tensor(&[3, 2, 2], &mut rng);
        let mask: Vec<bool> = (0..12).map(|k| k % 4 != 1).collect();
        let z = MaskedTensor::new(vals, mask).unwrap();
        let empty = FactorSet::zeros(&[3, 2, 2], 0);
        let obj = objective(&z, &empty, &unit_cfg(&[3, 2, 2], 3.0, 0.5)).unwrap();
        assert!((obj - 0.5 * z.observed_norm_sq()).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = [3, 4, 2];
        let f = random_factors(&shape, 2, &mut rng);
        let vals = random_tensor(&shape, &mut rng);
        let mask: Vec<bool> = (0..24).map(|_| rng.random_bool(0.7)).collect();
        let z = MaskedTensor::new(vals.clone(), mask.clone()).unwrap();
        let t: Vec<Vec<f64>> = shape
            .iter()
            .map(|&i| (0..i).map(|_| rng.random_range(0.5..2.0)).collect())
            .collect();
        let cfg = ElasticNetConfig::new(0.7, 0.3, t.clone()).unwrap();

        let mut fit = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    let lin = i + 3 * (j + 4 * k);
                    if !mask[lin] {
                        continue;
                    }
                    let mut xv = 0.0;
                    for r in 0..2 {
                        xv += f.factor(0)[(i, r)] * f.factor(1)[(j, r)] * f.factor(2)[(k, r)];
                    }
                    fit += (vals.get(&[i, j, k]) - xv).powi(2);
                }
            }
        }
        let mut pen = 0.0;
        for n in 0..3 {
            for r in 0..2 {
                for i in 0..shape[n] {
                    let a = f.factor(n)[(i, r)];
                    pen += 0.7 * ((1.0 - 0.3) / 2.0 * t[n][i] * a * a + 0.3 * a.abs());
                }
            }
        }
        let got = objective(&z, &f, &cfg).unwrap();
        assert!((got - (0.5 * fit + pen)).abs() < 1e-12 * got.max(1.0));
    }

    #[test]
    fn numeric_mask_rejects_fractional() {
        let t = DenseTensor::zeros(&[2, 2]);
        assert!(MaskedTensor::with_numeric_mask(t, &[1.0, 0.0, 0.5, 1.0]).is_err());
    }
}
