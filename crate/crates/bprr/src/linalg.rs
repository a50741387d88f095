//! Deterministic linear-algebra kernels: vectorization, commutation
//! matrices, the selection operators of the partitioned model, coefficient
//! assembly, and exact likelihood evaluation.
//!
//! Everything here is a pure function of its inputs. Densities are computed
//! in log space through Cholesky factorizations; no explicit inverses appear
//! on likelihood paths.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{permute_columns, unpermute_columns, Allocation, Dataset, ModelState};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Column-stacking vectorization: entry (i, j) lands at position j*m + i.
pub fn vec_mat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_mat`] for an `nrows x ncols` target.
pub fn unvec(v: &DVector<f64>, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if v.len() != nrows * ncols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape a vector of length {} into {nrows}x{ncols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(nrows, ncols, v.as_slice()))
}

/// Commutation matrix `K_{m,n}` with `K vec(M) = vec(M')` for every m x n `M`.
pub fn commutation_matrix(m: usize, n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m * n, m * n);
    for j in 0..n {
        for i in 0..m {
            // vec(M) index j*m + i maps to vec(M') index i*n + j.
            k[(i * n + j, j * m + i)] = 1.0;
        }
    }
    k
}

/// Index map of `K_{m,n}`: position `u` of `vec(M)` appears at position
/// `commutation_index(m, n)[u]` of `vec(M')`.
pub fn commutation_index(m: usize, n: usize) -> Vec<usize> {
    let mut idx = vec![0usize; m * n];
    for j in 0..n {
        for i in 0..m {
            idx[j * m + i] = i * n + j;
        }
    }
    idx
}

/// The block selection operators of the partitioned model and their
/// Kronecker lifts `U_i = V_i' (x) X`.
///
/// Dense forms; hot paths use the collapsed Kronecker identities instead,
/// and tests reconcile the two.
#[derive(Debug, Clone)]
pub struct SelectionOperators {
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
}

/// Builds `V1 = [I_{q_gamma}, 0]`, `V2 = [0, I_{q - q_gamma}]` and their
/// lifts for the given predictor matrix.
pub fn build_selection(alloc: &Allocation, x: &DMatrix<f64>) -> SelectionOperators {
    let q = alloc.q();
    let q_gamma = alloc.q_gamma();
    let mut v1 = DMatrix::zeros(q_gamma, q);
    for i in 0..q_gamma {
        v1[(i, i)] = 1.0;
    }
    let mut v2 = DMatrix::zeros(q - q_gamma, q);
    for i in 0..q - q_gamma {
        v2[(i, q_gamma + i)] = 1.0;
    }
    let u1 = v1.transpose().kronecker(x);
    let u2 = v2.transpose().kronecker(x);
    SelectionOperators { v1, v2, u1, u2 }
}

/// Assembles the full coefficient matrix from a state: permuted-order
/// `C = [B A', C2]` and its original-order counterpart.
pub fn assemble_c(state: &ModelState) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = state.b.nrows();
    let q = state.alloc.q();
    let q_gamma = state.alloc.q_gamma();
    let r = state.rank.r();
    if state.f.nrows() != q_gamma - r
        || state.f.ncols() != r
        || state.b.ncols() != r
        || state.c2.nrows() != p
        || state.c2.ncols() != q - q_gamma
    {
        return Err(Error::DimensionMismatch(format!(
            "state blocks inconsistent with (q_gamma, r) = ({q_gamma}, {r}): F {}x{}, B {}x{}, C2 {}x{}",
            state.f.nrows(),
            state.f.ncols(),
            state.b.nrows(),
            state.b.ncols(),
            state.c2.nrows(),
            state.c2.ncols()
        )));
    }
    let mut c_perm = DMatrix::zeros(p, q);
    c_perm.view_mut((0, 0), (p, q_gamma)).copy_from(&state.c1());
    c_perm.view_mut((0, q_gamma), (p, q - q_gamma)).copy_from(&state.c2);
    let c_orig = unpermute_columns(&c_perm, state.alloc.perm());
    Ok((c_perm, c_orig))
}

/// Exact Gaussian log likelihood of the full model,
/// `-(nq/2) log 2pi - (n/2) log|Sigma| - 1/2 ||(Y - XC) Sigma^{-1/2}||_F^2`,
/// evaluated in permuted response order.
pub fn log_likelihood(state: &ModelState, data: &Dataset) -> Result<f64> {
    let n = data.n();
    let q = data.q();
    let (c_perm, _) = assemble_c(state)?;
    if c_perm.nrows() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have {} rows but data has p = {}",
            c_perm.nrows(),
            data.p()
        )));
    }
    let sigma_perm = state.sigma_permuted();
    let chol = Cholesky::new(sigma_perm).ok_or_else(|| Error::NotSpd("Sigma".into()))?;
    let resid = data.y_permuted(&state.alloc) - data.x() * &c_perm;
    Ok(gaussian_loglik_rows(&resid, &chol, n, q))
}

/// Log density of `n` iid `N_q(0, Sigma)` rows given the Cholesky factor of
/// `Sigma`; `resid` holds the rows.
pub fn gaussian_loglik_rows(resid: &DMatrix<f64>, chol: &Cholesky<f64, nalgebra::Dyn>, n: usize, q: usize) -> f64 {
    let log_det = 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum();
    // ||R Sigma^{-1/2}||_F^2 = ||L^{-1} R'||_F^2 with Sigma = L L'.
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&resid.transpose())
        .expect("Cholesky factor is nonsingular");
    let quad = z.iter().map(|v| v * v).sum::<f64>();
    -0.5 * (n * q) as f64 * LN_2PI - 0.5 * (n as f64) * log_det - 0.5 * quad
}

/// Permuted-order reconstruction of the response used by shape tests:
/// `vec(Y_perm) = U1 vec(C1) + U2 vec(C2) + vec(E_perm)`.
pub fn reconstruct_y_perm(
    sel: &SelectionOperators,
    c1: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    e_perm: &DMatrix<f64>,
) -> DVector<f64> {
    &sel.u1 * vec_mat(c1) + &sel.u2 * vec_mat(c2) + vec_mat(e_perm)
}

/// Y columns restored to original order.
pub fn to_original_order(m_perm: &DMatrix<f64>, alloc: &Allocation) -> DMatrix<f64> {
    unpermute_columns(m_perm, alloc.perm())
}

/// Y columns mapped to permuted order.
pub fn to_permuted_order(m_orig: &DMatrix<f64>, alloc: &Allocation) -> DMatrix<f64> {
    permute_columns(m_orig, alloc.perm())
}
