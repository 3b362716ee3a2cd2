use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{mode_unfold, FactorSet, MaskedTensor};

/// I.i.d. standard Gaussian factors.
pub fn init_random<R: Rng + ?Sized>(shape: &[usize], rank: usize, rng: &mut R) -> FactorSet {
    let factors = shape
        .iter()
        .map(|&i| {
            let data: Vec<f64> = (0..i * rank).map(|_| rng.sample(StandardNormal)).collect();
            DMatrix::from_vec(i, rank, data)
        })
        .collect();
    FactorSet::new(factors).expect("shape dimensions are positive")
}

/// Leading `rank` left singular vectors of each mode unfolding of `Z ⊛ Δ`.
///
/// Computed from the eigenvectors of the Gram matrix `Y Yᵀ`. Each vector is
/// sign-fixed so that its largest-magnitude entry is positive.
pub fn init_nvecs(z: &MaskedTensor, rank: usize) -> Result<FactorSet> {
    let data = z.masked_values();
    let total = z.len();
    let mut factors = Vec::with_capacity(z.ndim());
    for (n, &dim) in z.shape().iter().enumerate() {
        let others = total / dim;
        if rank > dim.min(others) {
            return Err(Error::invalid(format!(
                "rank {rank} exceeds min({dim}, {others}) for mode {n}"
            )));
        }
        let y = mode_unfold(&data, n)?;
        let gram = &y * y.transpose();
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut a = DMatrix::zeros(dim, rank);
        for (k, &col) in order.iter().take(rank).enumerate() {
            let v = eig.eigenvectors.column(col);
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..dim {
                a[(i, k)] = sign * v[i];
            }
        }
        factors.push(a);
    }
    FactorSet::new(factors)
}
