use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::ModeLayout;

/// Rows with `d_i` below this are treated as carrying no information.
pub(crate) const D_FLOOR: f64 = 1e-14;

/// `sign(t) · max(|t| − v, 0)`.
#[inline]
pub fn soft_threshold(t: f64, v: f64) -> f64 {
    if t > v {
        t - v
    } else if t < -v {
        t + v
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnUpdate {
    pub x: Vec<f64>,
    /// Rows whose curvature `d_i` vanished; they were set to zero.
    pub undetermined: Vec<usize>,
}

/// Exact minimizer of the row-separable column subproblem
///
/// `½‖(W − x hᵀ) ⊛ D‖_F² + λ[(1−α)/2 · xᵀ diag(T) x + α‖x‖₁]`
///
/// on explicit unfoldings `W` and `D`.
pub fn column_update(
    w: &DMatrix<f64>,
    d: &DMatrix<f64>,
    h: &[f64],
    t: &[f64],
    lambda: f64,
    alpha: f64,
) -> Result<ColumnUpdate> {
    if w.shape() != d.shape() || w.ncols() != h.len() || w.nrows() != t.len() {
        return Err(Error::shape(format!(
            "W {:?}, D {:?}, h {}, T {} are inconsistent",
            w.shape(),
            d.shape(),
            h.len(),
            t.len()
        )));
    }
    let rows = w.nrows();
    let mut u = vec![0.0; rows];
    let mut hsq = vec![0.0; rows];
    for (j, &hj) in h.iter().enumerate() {
        for i in 0..rows {
            let mh = d[(i, j)] * hj;
            u[i] += mh * d[(i, j)] * w[(i, j)];
            hsq[i] += mh * mh;
        }
    }
    let mut x = vec![0.0; rows];
    let mut undetermined = Vec::new();
    solve_rows(&u, &hsq, t, lambda, alpha, &mut x, Some(&mut undetermined));
    Ok(ColumnUpdate { x, undetermined })
}

/// `x_i = T_{λα}(u_i) / d_i` with `d_i = hsq_i + λ(1−α) t_i`.
pub(crate) fn solve_rows(
    u: &[f64],
    hsq: &[f64],
    t: &[f64],
    lambda: f64,
    alpha: f64,
    x: &mut [f64],
    mut undetermined: Option<&mut Vec<usize>>,
) {
    let ridge = lambda * (1.0 - alpha);
    let thresh = lambda * alpha;
    for i in 0..x.len() {
        let d = hsq[i] + ridge * t[i];
        if d < D_FLOOR {
            x[i] = 0.0;
            if let Some(list) = undetermined.as_deref_mut() {
                list.push(i);
            }
        } else {
            x[i] = soft_threshold(u[i], thresh) / d;
        }
    }
}

/// Accumulates `u_i = Σ_j δ_ij h_j w_ij` and `hsq_i = Σ_j δ_ij h_j²` straight
/// from the linearized tensor, without materializing the unfolding.
pub(crate) fn accumulate_mode(w: &[f64], mask: &[bool], lay: ModeLayout, h: &[f64], u: &mut [f64], hsq: &mut [f64]) {
    u.fill(0.0);
    hsq.fill(0.0);
    for outer in 0..lay.right {
        let hrow = &h[lay.left * outer..lay.left * (outer + 1)];
        for i in 0..lay.dim {
            let base = lay.left * (i + lay.dim * outer);
            let ws = &w[base..base + lay.left];
            let ms = &mask[base..base + lay.left];
            let (mut su, mut sh) = (0.0, 0.0);
            for ((&wv, &m), &hv) in ws.iter().zip(ms).zip(hrow) {
                if m {
                    su += hv * wv;
                    sh += hv * hv;
                }
            }
            u[i] += su;
            hsq[i] += sh;
        }
    }
}
