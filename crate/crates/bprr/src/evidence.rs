//! Laplace-approximated marginal evidence of the low-rank block.
//!
//! For a fixed allocation and rank, the full-rank coefficients `C2` are
//! integrated out analytically, giving a Gaussian marginal likelihood with
//! covariance `Sigma_y = Sigma (x) I_n + d (V2'V2) (x) (X X')`. The
//! restricted MLEs of `(A, B)` under that covariance are computed by an
//! alternating generalized-least-squares recursion, and the evidence is the
//! marginal log likelihood at the MLE minus `(pr + (q_gamma - r) r)/2 log n`.
//!
//! `Sigma_y` is never formed densely: solves go through the Woodbury
//! identity with the small inner matrix
//! `Omega = d^{-1} I + (V2 Sigma^{-1} V2') (x) (X'X)`, and the normal
//! equations of both half-steps collapse to Kronecker products of q- and
//! p-sized factors. Tests reconcile every fast path against the literal
//! dense construction, commutation conjugation included.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::dist::{log_sum_exp, standard_normal_matrix, RngHandle};
use crate::error::{Error, Result};
use crate::linalg::{commutation_index, vec_mat, LN_2PI};
use crate::types::{permute_square, Allocation, Dataset};

/// Settings of the alternating MLE recursion.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GrrrConfig {
    /// Relative marginal log-likelihood change below which the recursion stops.
    pub tol: f64,
    /// Cap on alternations per run.
    pub max_iter: usize,
    /// Total runs: one SVD warm start plus `n_restarts - 1` random restarts.
    pub n_restarts: usize,
    /// Prior variance used by the warm start's per-response ridge fit.
    pub ridge: f64,
}

impl Default for GrrrConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500, n_restarts: 3, ridge: 0.5 }
    }
}

/// Linear restriction `vec(V1'A) = G psi + g` with `psi = vec(F)`.
///
/// `g` carries the r identity entries of `A`'s top block; each column of `G`
/// routes one free entry of `F` to its slot in `vec(V1'A)`.
#[derive(Debug, Clone)]
pub struct GrrrRestriction {
    pub g_mat: DMatrix<f64>,
    pub g_vec: DVector<f64>,
    /// `psi_positions[k]` = row of the single 1 in column `k` of `G`.
    pub psi_positions: Vec<usize>,
    /// Positions of the 1-entries of `g` (the identity diagonal).
    pub identity_positions: Vec<usize>,
    pub q: usize,
    pub q_gamma: usize,
    pub r: usize,
}

/// Builds the restriction for `V1'A = [I_r; F; 0]` stacked column-wise.
pub fn build_restriction(alloc: &Allocation, r: usize) -> Result<GrrrRestriction> {
    let q = alloc.q();
    let q_gamma = alloc.q_gamma();
    if r < 1 || r + 1 > q_gamma {
        return Err(Error::InvalidArgument(format!(
            "rank {r} incompatible with q_gamma = {q_gamma}"
        )));
    }
    let free = (q_gamma - r) * r;
    let mut g_mat = DMatrix::zeros(q * r, free);
    let mut g_vec = DVector::zeros(q * r);
    let mut psi_positions = Vec::with_capacity(free);
    let mut identity_positions = Vec::with_capacity(r);
    for j in 0..r {
        g_vec[j * q + j] = 1.0;
        identity_positions.push(j * q + j);
    }
    // psi is vec(F): entry (i, j) of F sits at psi index j*(q_gamma-r)+i and
    // lands at row r+i of column j of V1'A.
    for j in 0..r {
        for i in 0..q_gamma - r {
            let row = j * q + r + i;
            let col = j * (q_gamma - r) + i;
            g_mat[(row, col)] = 1.0;
        }
    }
    for j in 0..r {
        for i in 0..q_gamma - r {
            psi_positions.push(j * q + r + i);
        }
    }
    Ok(GrrrRestriction { g_mat, g_vec, psi_positions, identity_positions, q, q_gamma, r })
}

/// Implicit factorization of the C2-marginalized covariance
/// `Sigma_y = Sigma (x) I_n + d (V2'V2) (x) (X X')` in permuted response
/// order, together with its row-major (commutation-conjugated) reordering.
#[derive(Debug, Clone)]
pub struct MarginalCovariance {
    n: usize,
    p: usize,
    q: usize,
    q_gamma: usize,
    d: f64,
    x: DMatrix<f64>,
    sigma_perm: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    /// Cholesky of `Omega = d^{-1} I + (V2 Sigma^{-1} V2') (x) (X'X)`;
    /// absent when the full-rank block is empty.
    omega: Option<Cholesky<f64, nalgebra::Dyn>>,
    log_det: f64,
}

impl MarginalCovariance {
    pub fn new(
        x: &DMatrix<f64>,
        xtx: &DMatrix<f64>,
        sigma_perm: DMatrix<f64>,
        q_gamma: usize,
        d: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        let q = sigma_perm.nrows();
        if !(d > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prior variance d must be positive, got {d}"
            )));
        }
        let chol = Cholesky::new(sigma_perm.clone()).ok_or_else(|| Error::NotSpd("Sigma".into()))?;
        let sigma_logdet = 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum();
        let sigma_inv = chol.inverse();
        let s2 = q - q_gamma;
        let (omega, log_det) = if s2 == 0 {
            (None, (n as f64) * sigma_logdet)
        } else {
            let s22 = sigma_inv.view((q_gamma, q_gamma), (s2, s2)).clone_owned();
            let mut omega_mat = s22.kronecker(xtx);
            for i in 0..s2 * p {
                omega_mat[(i, i)] += 1.0 / d;
            }
            let omega =
                Cholesky::new(omega_mat).ok_or_else(|| Error::NotSpd("Omega inner matrix".into()))?;
            let omega_logdet = 2.0 * omega.l_dirty().diagonal().map(f64::ln).sum();
            let log_det =
                (n as f64) * sigma_logdet + ((s2 * p) as f64) * d.ln() + omega_logdet;
            (Some(omega), log_det)
        };
        Ok(Self { n, p, q, q_gamma, d, x: x.clone(), sigma_perm, sigma_inv, omega, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn sigma_perm(&self) -> &DMatrix<f64> {
        &self.sigma_perm
    }

    pub fn omega(&self) -> Option<&Cholesky<f64, nalgebra::Dyn>> {
        self.omega.as_ref()
    }

    /// `U2' Sigma~^{-1} vec(W)` as a p x (q - q_gamma) matrix, i.e. the last
    /// columns of `X' W Sigma^{-1}`.
    fn u2_projection(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let ws = w * &self.sigma_inv;
        (self.x.transpose() * ws)
            .view((0, self.q_gamma), (self.p, self.q - self.q_gamma))
            .clone_owned()
    }

    /// `Sigma_y^{-1} vec(W)` returned in the same n x q matrix layout.
    pub fn solve_mat(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let base = w * &self.sigma_inv;
        match &self.omega {
            None => base,
            Some(omega) => {
                let t = self.u2_projection(w);
                let s2 = self.q - self.q_gamma;
                let tv = DVector::from_column_slice(t.as_slice());
                let z = omega.solve(&tv);
                let z_mat = DMatrix::from_column_slice(self.p, s2, z.as_slice());
                let mut corr = DMatrix::zeros(self.n, self.q);
                corr.view_mut((0, self.q_gamma), (self.n, s2)).copy_from(&(&self.x * z_mat));
                base - corr * &self.sigma_inv
            }
        }
    }

    /// Quadratic form `vec(W)' Sigma_y^{-1} vec(W)`.
    pub fn quad_form(&self, w: &DMatrix<f64>) -> f64 {
        let ws = w * &self.sigma_inv;
        let base = w.iter().zip(ws.iter()).map(|(a, b)| a * b).sum::<f64>();
        match &self.omega {
            None => base,
            Some(omega) => {
                let t = self.u2_projection(w);
                let tv = DVector::from_column_slice(t.as_slice());
                let z = omega
                    .l_dirty()
                    .solve_lower_triangular(&tv)
                    .expect("Omega factor is nonsingular");
                base - z.norm_squared()
            }
        }
    }

    /// Woodbury solve for a vec(Y)-ordered vector; reconciliation tests
    /// compare this against the dense Cholesky solve.
    pub fn solve_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n * self.q {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against nq = {}",
                v.len(),
                self.n * self.q
            )));
        }
        let w = DMatrix::from_column_slice(self.n, self.q, v.as_slice());
        Ok(vec_mat(&self.solve_mat(&w)))
    }

    /// Solve in the row-major ordering `Sigma~_y = K_{n,q} Sigma_y K_{n,q}'`.
    pub fn solve_twiddle(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n * self.q {
            return Err(Error::DimensionMismatch("solve_twiddle length".into()));
        }
        let wt = DMatrix::from_column_slice(self.q, self.n, v.as_slice());
        let solved = self.solve_mat(&wt.transpose());
        Ok(vec_mat(&solved.transpose()))
    }

    /// Dense `Sigma_y`; oracle use only.
    pub fn dense_sigma_y(&self) -> DMatrix<f64> {
        let mut out = self.sigma_perm.kronecker(&DMatrix::identity(self.n, self.n));
        let s2 = self.q - self.q_gamma;
        if s2 > 0 {
            let mut v2tv2 = DMatrix::zeros(self.q, self.q);
            for i in 0..s2 {
                v2tv2[(self.q_gamma + i, self.q_gamma + i)] = 1.0;
            }
            out += v2tv2.kronecker(&(&self.x * self.x.transpose())) * self.d;
        }
        out
    }
}

/// Everything that stays fixed while evidence is evaluated for one
/// allocation under one Sigma snapshot.
#[derive(Debug, Clone)]
pub struct EvidenceContext {
    pub alloc: Allocation,
    pub y_perm: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub xtx: DMatrix<f64>,
    /// X' Y_perm.
    pub xty: DMatrix<f64>,
    pub mc: MarginalCovariance,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

impl EvidenceContext {
    pub fn new(
        data: &Dataset,
        sigma_orig: &DMatrix<f64>,
        alloc: Allocation,
        d: f64,
    ) -> Result<Self> {
        let sigma_perm = permute_square(sigma_orig, alloc.perm());
        let xtx = data.x().transpose() * data.x();
        let y_perm = data.y_permuted(&alloc);
        let mc = MarginalCovariance::new(data.x(), &xtx, sigma_perm, alloc.q_gamma(), d)?;
        let xty = data.x().transpose() * &y_perm;
        Ok(Self {
            y_perm,
            x: data.x().clone(),
            xtx,
            xty,
            mc,
            n: data.n(),
            p: data.p(),
            q: data.q(),
            alloc,
        })
    }

    /// `log N_{nq}(vec(Y_perm) | U1 vec(C1), Sigma_y)` for a given low-rank
    /// coefficient block.
    pub fn marginal_loglik(&self, c1: &DMatrix<f64>) -> Result<f64> {
        let q_gamma = self.alloc.q_gamma();
        if c1.nrows() != self.p || c1.ncols() != q_gamma {
            return Err(Error::DimensionMismatch(format!(
                "C1 is {}x{}, expected {}x{q_gamma}",
                c1.nrows(),
                c1.ncols(),
                self.p
            )));
        }
        let mut resid = self.y_perm.clone();
        resid.view_mut((0, 0), (self.n, q_gamma)).gemm(-1.0, &self.x, c1, 1.0);
        Ok(-0.5 * (self.n * self.q) as f64 * LN_2PI
            - 0.5 * self.mc.log_det()
            - 0.5 * self.mc.quad_form(&resid))
    }

    /// `U2' Sigma~^{-1} vec(Y_perm)` in Omega coordinates.
    fn u2y(&self) -> DVector<f64> {
        let q_gamma = self.alloc.q_gamma();
        let s2 = self.q - q_gamma;
        let g = &self.xty * self.mc.sigma_inv();
        DVector::from_column_slice(g.view((0, q_gamma), (self.p, s2)).clone_owned().as_slice())
    }
}

/// Spec-shaped marginal likelihood: builds the context on the fly.
pub fn marginal_loglik(
    c1: &DMatrix<f64>,
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
    data: &Dataset,
    d: f64,
) -> Result<f64> {
    EvidenceContext::new(data, sigma_orig, alloc.clone(), d)?.marginal_loglik(c1)
}

/// Output of one alternating-MLE solve.
#[derive(Debug, Clone)]
pub struct GrrrFit {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct GrrrWork<'a> {
    ctx: &'a EvidenceContext,
    restriction: GrrrRestriction,
    r: usize,
    q_gamma: usize,
    /// kappa[u] = position of vec(V1'A)[u] inside vec(A'V1).
    kappa: Vec<usize>,
    u2y: Option<DVector<f64>>,
}

impl<'a> GrrrWork<'a> {
    fn new(ctx: &'a EvidenceContext, r: usize) -> Result<Self> {
        let restriction = build_restriction(&ctx.alloc, r)?;
        let q_gamma = ctx.alloc.q_gamma();
        let kappa = commutation_index(ctx.q, r);
        let u2y = if q_gamma < ctx.q { Some(ctx.u2y()) } else { None };
        Ok(Self { ctx, restriction, r, q_gamma, kappa, u2y })
    }

    /// GLS half-step for `vec(V1'A) = G psi + g` given `B`:
    /// `psi_hat = (G' M_B G)^{-1} G'(n_B - M_B g)`, with `M_B` and `n_B`
    /// assembled through their Kronecker-collapsed forms.
    fn alpha_step(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let ctx = self.ctx;
        let s = ctx.mc.sigma_inv();
        let t_b = b.transpose() * &ctx.xtx * b;
        // Gram and moment in vec(A'V1) coordinates.
        let mut inner = s.kronecker(&t_b);
        let mut n_inner = vec_mat(&(b.transpose() * &ctx.xty * s));
        if let (Some(omega), Some(u2y)) = (ctx.mc.omega(), self.u2y.as_ref()) {
            let s2 = ctx.q - self.q_gamma;
            let v2s = s.view((self.q_gamma, 0), (s2, ctx.q)).clone_owned();
            let xxb = &ctx.xtx * b;
            let c_k = v2s.kronecker(&xxb);
            let oc = omega.solve(&c_k);
            inner -= c_k.transpose() * &oc;
            n_inner -= oc.transpose() * u2y;
        }
        // Conjugate by K_{q,r} to land in vec(V1'A) coordinates, restricted
        // to the rows/columns the selection matrices G and g pick out.
        let pos = &self.restriction.psi_positions;
        let ones = &self.restriction.identity_positions;
        let free = pos.len();
        let mut gram = DMatrix::zeros(free, free);
        let mut rhs = DVector::zeros(free);
        for (k, &u) in pos.iter().enumerate() {
            let ku = self.kappa[u];
            for (l, &v) in pos.iter().enumerate() {
                gram[(k, l)] = inner[(ku, self.kappa[v])];
            }
            let mut carried = 0.0;
            for &j in ones {
                carried += inner[(ku, self.kappa[j])];
            }
            rhs[k] = n_inner[ku] - carried;
        }
        let chol = Cholesky::new(gram)
            .ok_or_else(|| Error::Numerical("singular G'M_B G in alpha step".into()))?;
        let psi = chol.solve(&rhs);
        let f = DMatrix::from_column_slice(self.q_gamma - self.r, self.r, psi.as_slice());
        let mut a = DMatrix::zeros(self.q_gamma, self.r);
        for i in 0..self.r {
            a[(i, i)] = 1.0;
        }
        a.view_mut((self.r, 0), (self.q_gamma - self.r, self.r)).copy_from(&f);
        Ok(a)
    }

    /// GLS half-step for `vec(B)` given `A`: `beta_hat = M_A^{-1} n_A`.
    fn beta_step(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let ctx = self.ctx;
        let s = ctx.mc.sigma_inv();
        // S V1'A is the only way A enters both the Gram and the moment.
        let sw1 = s.view((0, 0), (ctx.q, self.q_gamma)).clone_owned() * a;
        let a_s11_a = a.transpose() * sw1.view((0, 0), (self.q_gamma, self.r)).clone_owned();
        let mut m_a = a_s11_a.kronecker(&ctx.xtx);
        let mut n_a = vec_mat(&(&ctx.xty * &sw1));
        if let (Some(omega), Some(u2y)) = (ctx.mc.omega(), self.u2y.as_ref()) {
            let s2 = ctx.q - self.q_gamma;
            let v2sw1 = sw1.view((self.q_gamma, 0), (s2, self.r)).clone_owned();
            let c_a = v2sw1.kronecker(&ctx.xtx);
            let oc = omega.solve(&c_a);
            m_a -= c_a.transpose() * &oc;
            n_a -= oc.transpose() * u2y;
        }
        let chol = Cholesky::new(m_a)
            .ok_or_else(|| Error::Numerical("singular M_A in beta step".into()))?;
        let beta = chol.solve(&n_a);
        Ok(DMatrix::from_column_slice(ctx.p, self.r, beta.as_slice()))
    }

    fn run(&self, b0: DMatrix<f64>, cfg: &GrrrConfig) -> Result<GrrrFit> {
        let mut a = self.alpha_step(&b0)?;
        let mut b = self.beta_step(&a)?;
        let mut ll = self.ctx.marginal_loglik(&(&b * a.transpose()))?;
        let mut converged = false;
        let mut iterations = 1;
        for _ in 1..cfg.max_iter {
            let a_new = self.alpha_step(&b)?;
            let b_new = self.beta_step(&a_new)?;
            let ll_new = self.ctx.marginal_loglik(&(&b_new * a_new.transpose()))?;
            iterations += 1;
            a = a_new;
            b = b_new;
            let rel = (ll_new - ll).abs() / (1.0 + ll.abs());
            ll = ll_new;
            if rel < cfg.tol {
                converged = true;
                break;
            }
        }
        Ok(GrrrFit { a_hat: a, b_hat: b, loglik: ll, converged, iterations })
    }

    /// Warm start: rank-r SVD truncation of the per-response ridge fit,
    /// normalized so B is the first r columns of the truncation.
    fn warm_start_b(&self, ridge: f64) -> Option<DMatrix<f64>> {
        let ctx = self.ctx;
        let mut gram = ctx.xtx.clone();
        for i in 0..ctx.p {
            gram[(i, i)] += 1.0 / ridge;
        }
        let chol = Cholesky::new(gram)?;
        let c1_ridge = chol.solve(&ctx.xty.view((0, 0), (ctx.p, self.q_gamma)).clone_owned());
        let svd = c1_ridge.svd(true, true);
        let u = svd.u.as_ref()?;
        let vt = svd.v_t.as_ref()?;
        let mut trunc = DMatrix::zeros(ctx.p, self.q_gamma);
        for k in 0..self.r.min(svd.singular_values.len()) {
            let s = svd.singular_values[k];
            for i in 0..ctx.p {
                for j in 0..self.q_gamma {
                    trunc[(i, j)] += s * u[(i, k)] * vt[(k, j)];
                }
            }
        }
        Some(trunc.view((0, 0), (ctx.p, self.r)).clone_owned())
    }
}

/// Restricted MLE of `(A, B)` by alternating GLS, best of `n_restarts` runs.
/// Singular half-steps abort the run and trigger the next start; if every
/// start fails, the zero block is returned flagged as non-converged.
pub fn grrr_mle(
    ctx: &EvidenceContext,
    r: usize,
    cfg: &GrrrConfig,
    restart_seed: u64,
) -> Result<GrrrFit> {
    let work = GrrrWork::new(ctx, r)?;
    let mut rng = RngHandle::new(restart_seed, 0);
    let mut best: Option<GrrrFit> = None;
    for attempt in 0..cfg.n_restarts.max(1) {
        let b0 = if attempt == 0 {
            work.warm_start_b(cfg.ridge)
                .unwrap_or_else(|| standard_normal_matrix(ctx.p, r, &mut rng))
        } else {
            standard_normal_matrix(ctx.p, r, &mut rng)
        };
        if let Ok(fit) = work.run(b0, cfg) {
            if best.as_ref().map_or(true, |cur| fit.loglik > cur.loglik) {
                best = Some(fit);
            }
        }
    }
    match best {
        Some(fit) => Ok(fit),
        None => {
            let q_gamma = ctx.alloc.q_gamma();
            let mut a = DMatrix::zeros(q_gamma, r);
            for i in 0..r {
                a[(i, i)] = 1.0;
            }
            let b = DMatrix::zeros(ctx.p, r);
            let ll = ctx.marginal_loglik(&(&b * a.transpose()))?;
            Ok(GrrrFit { a_hat: a, b_hat: b, loglik: ll, converged: false, iterations: 0 })
        }
    }
}

/// Laplace evidence `log f(Y | A_hat, B_hat, Sigma, gamma, r) - k/2 log n`
/// with `k = pr + (q_gamma - r) r` free parameters.
pub fn log_laplace_evidence(
    ctx: &EvidenceContext,
    r: usize,
    cfg: &GrrrConfig,
    restart_seed: u64,
) -> Result<(f64, GrrrFit)> {
    let fit = grrr_mle(ctx, r, cfg, restart_seed)?;
    let q_gamma = ctx.alloc.q_gamma();
    let k = (ctx.p * r + (q_gamma - r) * r) as f64;
    let value = fit.loglik - 0.5 * k * (ctx.n as f64).ln();
    Ok((value, fit))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct EvidenceKey {
    gamma: Vec<u8>,
    r: usize,
}

/// One cached per-rank evidence value together with the MLEs behind it.
#[derive(Debug, Clone)]
pub struct EvidenceEntry {
    pub log_evidence: f64,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Cache of Laplace evidence values keyed by `(gamma, r)`.
///
/// Entries are valid only for the Sigma snapshot they were computed under;
/// the sampler builds a fresh table every iteration.
#[derive(Debug, Default)]
pub struct EvidenceTable {
    map: HashMap<EvidenceKey, EvidenceEntry>,
}

impl EvidenceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear()
    }

    pub fn get(&self, gamma: &[u8], r: usize) -> Option<&EvidenceEntry> {
        self.map.get(&EvidenceKey { gamma: gamma.to_vec(), r })
    }

    pub fn insert(&mut self, gamma: &[u8], r: usize, log_evidence: f64, fit: GrrrFit) {
        self.map.insert(
            EvidenceKey { gamma: gamma.to_vec(), r },
            EvidenceEntry {
                log_evidence,
                a_hat: fit.a_hat,
                b_hat: fit.b_hat,
                converged: fit.converged,
                iterations: fit.iterations,
            },
        );
    }

    pub fn non_converged(&self) -> usize {
        self.map.values().filter(|e| !e.converged).count()
    }

    /// Computes (optionally in parallel) and caches the evidence for every
    /// admissible rank of one allocation, returning the per-rank values.
    /// Each value is a pure function of its key, so evaluation order cannot
    /// change the result.
    pub fn ensure_ranks(
        &mut self,
        ctx: &EvidenceContext,
        cfg: &GrrrConfig,
        seed: u64,
        parallel: bool,
    ) -> Result<Vec<f64>> {
        let r_max = ctx.alloc.r_max(ctx.p);
        let gamma = ctx.alloc.gamma().to_vec();
        let missing: Vec<usize> = (1..=r_max)
            .filter(|&r| !self.map.contains_key(&EvidenceKey { gamma: gamma.clone(), r }))
            .collect();
        let compute = |&r: &usize| -> Result<(usize, f64, GrrrFit)> {
            let rs = restart_seed(seed, &gamma, r);
            let (value, fit) = log_laplace_evidence(ctx, r, cfg, rs)?;
            Ok((r, value, fit))
        };
        let computed: Result<Vec<_>> = if parallel && missing.len() > 1 {
            missing.par_iter().map(compute).collect()
        } else {
            missing.iter().map(compute).collect()
        };
        for (r, value, fit) in computed? {
            self.map.insert(
                EvidenceKey { gamma: gamma.clone(), r },
                EvidenceEntry {
                    log_evidence: value,
                    a_hat: fit.a_hat,
                    b_hat: fit.b_hat,
                    converged: fit.converged,
                    iterations: fit.iterations,
                },
            );
        }
        Ok((1..=r_max)
            .map(|r| self.map[&EvidenceKey { gamma: gamma.clone(), r }].log_evidence)
            .collect())
    }
}

/// Rank-marginalized allocation evidence
/// `log f~_gamma = logsumexp_r(log f~_r) - log r_max`.
pub fn log_f_gamma(
    ctx: &EvidenceContext,
    cfg: &GrrrConfig,
    seed: u64,
    table: &mut EvidenceTable,
    parallel: bool,
) -> Result<f64> {
    let values = table.ensure_ranks(ctx, cfg, seed, parallel)?;
    Ok(log_sum_exp(&values) - (values.len() as f64).ln())
}

/// Deterministic per-key seed for the random restarts, so evidence values
/// are pure functions of `(data, Sigma, gamma, r, config, seed)` regardless
/// of evaluation order.
pub fn restart_seed(seed: u64, gamma: &[u8], r: usize) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for &g in gamma {
        h = (h ^ g as u64).wrapping_mul(0x100000001b3);
    }
    (h ^ r as u64).wrapping_mul(0x100000001b3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::standard_normal_vector;
    use crate::linalg::{build_selection, commutation_matrix};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_alloc(rng: &mut RngHandle, q: usize) -> Allocation {
        loop {
            let gamma: Vec<u8> = (0..q).map(|_| rng.random_range(0..2u8)).collect();
            if let Ok(a) = Allocation::new(gamma) {
                return a;
            }
        }
    }

    fn random_spd(rng: &mut RngHandle, q: usize) -> DMatrix<f64> {
        let m = standard_normal_matrix(q, q, rng);
        &m * m.transpose() + DMatrix::identity(q, q) * (q as f64)
    }

    fn random_dataset(rng: &mut RngHandle, n: usize, p: usize, q: usize) -> Dataset {
        Dataset::from_matrices(
            standard_normal_matrix(n, q, rng),
            standard_normal_matrix(n, p, rng),
        )
        .unwrap()
    }

    #[test]
    fn restriction_smallest_case() {
        let alloc = Allocation::new(vec![1, 1, 0]).unwrap();
        let res = build_restriction(&alloc, 1).unwrap();
        assert_eq!(res.g_vec.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(res.g_mat.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn restriction_single_free_row() {
        // q_gamma = r + 1: G has exactly r columns, one per column of the
        // single-row F.
        let alloc = Allocation::new(vec![1, 1, 1, 0, 0]).unwrap();
        let res = build_restriction(&alloc, 2).unwrap();
        assert_eq!(res.g_mat.ncols(), 2);
        for c in 0..2 {
            assert_eq!(res.g_mat.column(c).iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    #[test]
    fn restriction_reconstructs_exactly() {
        let mut rng = RngHandle::new(71, 0);
        let alloc = Allocation::new(vec![1, 1, 1, 1, 0, 0]).unwrap();
        let r = 2;
        let res = build_restriction(&alloc, r).unwrap();
        for _ in 0..50 {
            let f = standard_normal_matrix(alloc.q_gamma() - r, r, &mut rng);
            let mut a = DMatrix::zeros(alloc.q_gamma(), r);
            for i in 0..r {
                a[(i, i)] = 1.0;
            }
            a.view_mut((r, 0), (alloc.q_gamma() - r, r)).copy_from(&f);
            let mut v1a = DMatrix::zeros(6, r);
            v1a.view_mut((0, 0), (alloc.q_gamma(), r)).copy_from(&a);
            let lhs = vec_mat(&v1a);
            let rhs = &res.g_mat * vec_mat(&f) + &res.g_vec;
            assert_eq!((lhs - rhs).abs().max(), 0.0);
        }
    }

    #[test]
    fn restriction_identity_exhaustive() {
        // vec(V1'A) = G vec(F) + g for every valid (q, q_gamma, r), q <= 8.
        let mut rng = RngHandle::new(73, 0);
        for q in 3..=8usize {
            for q_gamma in 2..q {
                let mut gamma = vec![0u8; q];
                for g in gamma.iter_mut().take(q_gamma) {
                    *g = 1;
                }
                let alloc = Allocation::new(gamma).unwrap();
                for r in 1..q_gamma {
                    let res = build_restriction(&alloc, r).unwrap();
                    let f = standard_normal_matrix(q_gamma - r, r, &mut rng);
                    let mut v1a = DMatrix::zeros(q, r);
                    for i in 0..r {
                        v1a[(i, i)] = 1.0;
                    }
                    v1a.view_mut((r, 0), (q_gamma - r, r)).copy_from(&f);
                    let rhs = &res.g_mat * vec_mat(&f) + &res.g_vec;
                    assert_eq!((vec_mat(&v1a) - rhs).abs().max(), 0.0, "q={q} qg={q_gamma} r={r}");
                }
            }
        }
    }

    #[test]
    fn woodbury_solve_matches_dense() {
        let mut rng = RngHandle::new(79, 0);
        for trial in 0..10 {
            let (n, p, q) = (5, 2, 4); // nq = 20 <= 60
            let data = random_dataset(&mut rng, n, p, q);
            let alloc = random_alloc(&mut rng, q);
            let sigma = random_spd(&mut rng, q);
            let d = 0.5 + rng.random::<f64>();
            let ctx = EvidenceContext::new(&data, &sigma, alloc, d).unwrap();
            let dense = ctx.mc.dense_sigma_y();
            let chol = Cholesky::new(dense.clone()).unwrap();

            let v = standard_normal_vector(n * q, &mut rng);
            let fast = ctx.mc.solve_vec(&v).unwrap();
            let slow = chol.solve(&v);
            assert!((&fast - &slow).amax() < 1e-8, "trial {trial}");

            // log-determinant through the factored form
            let dense_logdet = 2.0 * chol.l_dirty().diagonal().map(f64::ln).sum();
            assert_relative_eq!(ctx.mc.log_det(), dense_logdet, epsilon = 1e-8);

            // quadratic form
            let w = DMatrix::from_column_slice(n, q, v.as_slice());
            assert_relative_eq!(ctx.mc.quad_form(&w), v.dot(&slow), epsilon = 1e-8, max_relative = 1e-8);

            // row-major reordering
            let k = commutation_matrix(n, q);
            let twiddle_dense = &k * dense * k.transpose();
            let tchol = Cholesky::new(twiddle_dense).unwrap();
            let vt = standard_normal_vector(n * q, &mut rng);
            let fast_t = ctx.mc.solve_twiddle(&vt).unwrap();
            let slow_t = tchol.solve(&vt);
            assert!((&fast_t - &slow_t).amax() < 1e-8);
        }
    }

    #[test]
    fn marginal_loglik_matches_dense_evaluation() {
        let mut rng = RngHandle::new(83, 0);
        for _ in 0..10 {
            let (n, p, q) = (6, 2, 4);
            let data = random_dataset(&mut rng, n, p, q);
            let alloc = random_alloc(&mut rng, q);
            let sigma = random_spd(&mut rng, q);
            let d = 0.7;
            let ctx = EvidenceContext::new(&data, &sigma, alloc.clone(), d).unwrap();
            let c1 = standard_normal_matrix(p, alloc.q_gamma(), &mut rng);

            let fast = ctx.marginal_loglik(&c1).unwrap();

            // dense route via U1 and the explicit Sigma_y
            let sel = build_selection(&alloc, data.x());
            let mean = &sel.u1 * vec_mat(&c1);
            let yv = vec_mat(&data.y_permuted(&alloc));
            let dense = ctx.mc.dense_sigma_y();
            let slow = crate::dist::mvn_logpdf(&yv, &mean, &dense).unwrap();
            assert_relative_eq!(fast, slow, epsilon = 1e-8, max_relative = 1e-10);
        }
    }

    #[test]
    fn marginal_loglik_vanishing_prior_variance_pins_delta() {
        // d -> 0 makes the marginal equal the full likelihood at C2 = 0.
        let mut rng = RngHandle::new(89, 0);
        let (n, p, q) = (5, 2, 4);
        let data = random_dataset(&mut rng, n, p, q);
        let alloc = random_alloc(&mut rng, q);
        let sigma = random_spd(&mut rng, q);
        let c1 = standard_normal_matrix(p, alloc.q_gamma(), &mut rng);

        let marg = marginal_loglik(&c1, &sigma, &alloc, &data, 1e-12).unwrap();

        // full likelihood with C2 = 0 in permuted space
        let sigma_perm = permute_square(&sigma, alloc.perm());
        let chol = Cholesky::new(sigma_perm).unwrap();
        let mut resid = data.y_permuted(&alloc);
        resid
            .view_mut((0, 0), (n, alloc.q_gamma()))
            .gemm(-1.0, data.x(), &c1, 1.0);
        let full = crate::linalg::gaussian_loglik_rows(&resid, &chol, n, q);
        assert!((marg - full).abs() < 1e-4, "marg {marg} vs full {full}");
    }

    /// Dense reference for the GRRR normal equations, following the printed
    /// definitions verbatim: commutation conjugation, Kronecker designs, and
    /// the restriction matrices.
    fn dense_half_steps(
        ctx: &EvidenceContext,
        r: usize,
        b: &DMatrix<f64>,
        a: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = ctx.n;
        let q = ctx.q;
        let p = ctx.p;
        let q_gamma = ctx.alloc.q_gamma();
        let res = build_restriction(&ctx.alloc, r).unwrap();
        let k_nq = commutation_matrix(n, q);
        let sigma_y = ctx.mc.dense_sigma_y();
        let sigma_y_twiddle = &k_nq * sigma_y * k_nq.transpose();
        let st_inv = Cholesky::new(sigma_y_twiddle).unwrap().inverse();
        let y_t_vec = vec_mat(&ctx.y_perm.transpose());

        // alpha side
        let xb = &ctx.x * b;
        let design_b = xb.kronecker(&DMatrix::identity(q, q));
        let m_b = design_b.transpose() * &st_inv * &design_b;
        let n_b = design_b.transpose() * &st_inv * &y_t_vec;
        let gm = res.g_mat.transpose() * &m_b * &res.g_mat;
        let rhs = res.g_mat.transpose() * (&n_b - &m_b * &res.g_vec);
        let psi = Cholesky::new(gm).unwrap().solve(&rhs);
        let alpha_v1 = &res.g_mat * psi + &res.g_vec;
        let v1a = DMatrix::from_column_slice(q, r, alpha_v1.as_slice());
        let a_dense = v1a.view((0, 0), (q_gamma, r)).clone_owned();

        // beta side
        let mut v1t_a = DMatrix::zeros(q, r);
        v1t_a.view_mut((0, 0), (q_gamma, r)).copy_from(a);
        let k_pr = commutation_matrix(p, r);
        let design_a = ctx.x.kronecker(&v1t_a) * &k_pr;
        let m_a = design_a.transpose() * &st_inv * &design_a;
        let n_a = design_a.transpose() * &st_inv * &y_t_vec;
        let beta = Cholesky::new(m_a).unwrap().solve(&n_a);
        let b_dense = DMatrix::from_column_slice(p, r, beta.as_slice());

        (a_dense, b_dense)
    }

    #[test]
    fn collapsed_half_steps_match_dense_grrr_formulas() {
        let mut rng = RngHandle::new(97, 0);
        for trial in 0..8 {
            let (n, p, q) = (5, 3, 4);
            let data = random_dataset(&mut rng, n, p, q);
            let alloc = random_alloc(&mut rng, q);
            let sigma = random_spd(&mut rng, q);
            let ctx = EvidenceContext::new(&data, &sigma, alloc.clone(), 0.6).unwrap();
            let r_max = alloc.r_max(p);
            let r = 1 + (trial % r_max.max(1));
            if r > r_max {
                continue;
            }
            let work = GrrrWork::new(&ctx, r).unwrap();
            let b = standard_normal_matrix(p, r, &mut rng);

            let a_fast = work.alpha_step(&b).unwrap();
            let b_fast = work.beta_step(&a_fast).unwrap();
            let (a_dense, b_dense) = dense_half_steps(&ctx, r, &b, &a_fast);

            assert!((a_fast.clone() - a_dense).amax() < 1e-8, "alpha mismatch trial {trial}");
            assert!((b_fast.clone() - b_dense).amax() < 1e-8, "beta mismatch trial {trial}");
            // identification: top block of A is exactly the identity
            for i in 0..r {
                for j in 0..r {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(a_fast[(i, j)], expect);
                }
            }
        }
    }

    #[test]
    fn grrr_full_low_rank_group_has_no_omega() {
        // q_gamma = q (the RR baseline): Sigma_y = Sigma (x) I_n.
        let mut rng = RngHandle::new(101, 0);
        let (n, p, q) = (6, 3, 4);
        let data = random_dataset(&mut rng, n, p, q);
        let sigma = random_spd(&mut rng, q);
        let alloc = Allocation::full_low_rank(q);
        let ctx = EvidenceContext::new(&data, &sigma, alloc, 0.5).unwrap();
        assert!(ctx.mc.omega().is_none());
        let fit = grrr_mle(&ctx, 2, &GrrrConfig::default(), 7).unwrap();
        assert!(fit.loglik.is_finite());
    }

    #[test]
    fn grrr_monotone_and_recovers_planted_solution() {
        let mut rng = RngHandle::new(103, 0);
        let (n, p, q, q_gamma, r) = (60, 4, 5, 3, 1);
        let mut gamma = vec![0u8; q];
        for g in gamma.iter_mut().take(q_gamma) {
            *g = 1;
        }
        let alloc = Allocation::new(gamma).unwrap();

        // planted (A0, B0) with tiny noise
        let f0 = standard_normal_matrix(q_gamma - r, r, &mut rng);
        let mut a0 = DMatrix::zeros(q_gamma, r);
        for i in 0..r {
            a0[(i, i)] = 1.0;
        }
        a0.view_mut((r, 0), (q_gamma - r, r)).copy_from(&f0);
        let b0 = standard_normal_matrix(p, r, &mut rng);
        let c1_true = &b0 * a0.transpose();
        let x = standard_normal_matrix(n, p, &mut rng);
        let mut y = standard_normal_matrix(n, q, &mut rng) * 1e-3;
        y.view_mut((0, 0), (n, q_gamma)).gemm(1.0, &x, &c1_true, 1.0);
        let data = Dataset::from_matrices(y, x).unwrap();
        let sigma = DMatrix::identity(q, q) * 1e-6; // sigma = (1e-3)^2
        let ctx = EvidenceContext::new(&data, &sigma, alloc, 0.5).unwrap();

        let fit = grrr_mle(&ctx, r, &GrrrConfig::default(), 11).unwrap();
        assert!(fit.converged);
        let c1_hat = &fit.b_hat * fit.a_hat.transpose();
        let err = (c1_hat - &c1_true).norm();
        assert!(err < 1e-2, "planted recovery error {err}");

        // monotonicity along a fresh run from a random start
        let work = GrrrWork::new(&ctx, r).unwrap();
        let mut b = standard_normal_matrix(p, r, &mut rng);
        let mut last = f64::NEG_INFINITY;
        for _ in 0..25 {
            let a = work.alpha_step(&b).unwrap();
            b = work.beta_step(&a).unwrap();
            let ll = ctx.marginal_loglik(&(&b * a.transpose())).unwrap();
            assert!(ll >= last - 1e-8, "loglik decreased: {last} -> {ll}");
            last = ll;
        }
    }

    #[test]
    fn grrr_mle_beats_random_pairs() {
        let mut rng = RngHandle::new(107, 0);
        let (n, p, q) = (20, 3, 4);
        let data = random_dataset(&mut rng, n, p, q);
        let alloc = Allocation::new(vec![1, 1, 1, 0]).unwrap();
        let sigma = random_spd(&mut rng, q);
        let ctx = EvidenceContext::new(&data, &sigma, alloc.clone(), 0.5).unwrap();
        let r = alloc.r_max(p); // r_max with q_gamma = p = 3
        let fit = grrr_mle(&ctx, r, &GrrrConfig::default(), 13).unwrap();
        for _ in 0..100 {
            let f = standard_normal_matrix(alloc.q_gamma() - r, r, &mut rng);
            let mut a = DMatrix::zeros(alloc.q_gamma(), r);
            for i in 0..r {
                a[(i, i)] = 1.0;
            }
            a.view_mut((r, 0), (alloc.q_gamma() - r, r)).copy_from(&f);
            let b = standard_normal_matrix(p, r, &mut rng);
            let ll = ctx.marginal_loglik(&(&b * a.transpose())).unwrap();
            assert!(fit.loglik >= ll - 1e-10);
        }
    }

    #[test]
    fn laplace_penalty_arithmetic() {
        // p = 5, q_gamma = 3, r = 1, n = 20: penalty = -(5+2)/2 log 20.
        let k = (5 * 1 + (3 - 1) * 1) as f64;
        let penalty = -0.5 * k * 20f64.ln();
        assert_relative_eq!(penalty, -10.484929735, epsilon = 1e-8);
    }

    #[test]
    fn laplace_evidence_prefers_true_rank() {
        // data planted at rank 1 with strong signal: evidence at r = 1 beats
        // r = 2 in at least 9 of 10 replicates.
        let mut wins = 0;
        for rep in 0..10 {
            let mut rng = RngHandle::new(200 + rep, 0);
            let (n, p, q, q_gamma) = (100, 4, 5, 3);
            let mut gamma = vec![0u8; q];
            for g in gamma.iter_mut().take(q_gamma) {
                *g = 1;
            }
            let alloc = Allocation::new(gamma).unwrap();
            let f0 = standard_normal_matrix(q_gamma - 1, 1, &mut rng);
            let mut a0 = DMatrix::zeros(q_gamma, 1);
            a0[(0, 0)] = 1.0;
            a0.view_mut((1, 0), (q_gamma - 1, 1)).copy_from(&f0);
            let b0 = standard_normal_matrix(p, 1, &mut rng) * 2.0;
            let c2_0 = standard_normal_matrix(p, q - q_gamma, &mut rng);
            let x = standard_normal_matrix(n, p, &mut rng);
            let mut y = standard_normal_matrix(n, q, &mut rng) * 0.5;
            y.view_mut((0, 0), (n, q_gamma)).gemm(1.0, &x, &(&b0 * a0.transpose()), 1.0);
            y.view_mut((0, q_gamma), (n, q - q_gamma)).gemm(1.0, &x, &c2_0, 1.0);
            let data = Dataset::from_matrices(y, x).unwrap();
            let sigma = DMatrix::identity(q, q) * 0.25;
            let ctx = EvidenceContext::new(&data, &sigma, alloc, 0.5).unwrap();
            let cfg = GrrrConfig::default();
            let (e1, _) = log_laplace_evidence(&ctx, 1, &cfg, 1).unwrap();
            let (e2, _) = log_laplace_evidence(&ctx, 2, &cfg, 2).unwrap();
            if e1 > e2 {
                wins += 1;
            }
        }
        assert!(wins >= 9, "rank-1 evidence won only {wins}/10");
    }

    #[test]
    fn log_f_gamma_single_rank_and_two_rank_arithmetic() {
        let mut rng = RngHandle::new(109, 0);
        let (n, p, q) = (12, 1, 4);
        let data = random_dataset(&mut rng, n, p, q);
        let sigma = random_spd(&mut rng, q);
        let cfg = GrrrConfig::default();

        // r_max = min(p, q_gamma) - 1: p = 1 would give 0; use q_gamma = 2
        // with p = 2 to force r_max = 1.
        let data2 = random_dataset(&mut rng, n, 2, q);
        let alloc = Allocation::new(vec![1, 1, 0, 0]).unwrap();
        let ctx = EvidenceContext::new(&data2, &sigma, alloc, 0.5).unwrap();
        let mut table = EvidenceTable::new();
        let lf = log_f_gamma(&ctx, &cfg, 5, &mut table, false).unwrap();
        let entry = table.get(&[1, 1, 0, 0], 1).unwrap();
        assert_relative_eq!(lf, entry.log_evidence, epsilon = 1e-12);

        // two-rank case: logsumexp(e1, e2) - ln 2
        let alloc3 = Allocation::new(vec![1, 1, 1, 0]).unwrap();
        let data3 = random_dataset(&mut rng, n, 5, q);
        let ctx3 = EvidenceContext::new(&data3, &sigma, alloc3, 0.5).unwrap();
        let mut table3 = EvidenceTable::new();
        let lf3 = log_f_gamma(&ctx3, &cfg, 5, &mut table3, false).unwrap();
        let e1 = table3.get(&[1, 1, 1, 0], 1).unwrap().log_evidence;
        let e2 = table3.get(&[1, 1, 1, 0], 2).unwrap().log_evidence;
        assert_relative_eq!(lf3, log_sum_exp(&[e1, e2]) - 2f64.ln(), epsilon = 1e-12);
        let _ = data;
    }

    #[test]
    fn evidence_cache_hit_is_bit_identical() {
        let mut rng = RngHandle::new(113, 0);
        let (n, p, q) = (10, 3, 4);
        let data = random_dataset(&mut rng, n, p, q);
        let sigma = random_spd(&mut rng, q);
        let alloc = Allocation::new(vec![1, 0, 1, 0]).unwrap();
        let ctx = EvidenceContext::new(&data, &sigma, alloc.clone(), 0.5).unwrap();
        let cfg = GrrrConfig::default();
        let mut table = EvidenceTable::new();
        let first = log_f_gamma(&ctx, &cfg, 21, &mut table, true).unwrap();
        let cached = log_f_gamma(&ctx, &cfg, 21, &mut table, true).unwrap();
        assert_eq!(first.to_bits(), cached.to_bits());

        // recomputation from scratch with the same seed is bit-identical too
        let mut fresh = EvidenceTable::new();
        let recomputed = log_f_gamma(&ctx, &cfg, 21, &mut fresh, false).unwrap();
        assert_eq!(first.to_bits(), recomputed.to_bits());
    }

    #[test]
    fn evidence_invariant_under_full_rank_relabeling() {
        // permuting gamma = 0 columns among themselves permutes Y2 columns
        // and leaves the Laplace evidence unchanged.
        let mut rng = RngHandle::new(127, 0);
        let (n, p, q) = (15, 3, 5);
        let y = standard_normal_matrix(n, q, &mut rng);
        let x = standard_normal_matrix(n, p, &mut rng);
        let sigma = random_spd(&mut rng, q);
        let cfg = GrrrConfig::default();

        // gamma marks columns {0, 2} low-rank; full-rank group {1, 3, 4}.
        let alloc = Allocation::new(vec![1, 0, 1, 0, 0]).unwrap();
        let data = Dataset::from_matrices(y.clone(), x.clone()).unwrap();
        let ctx = EvidenceContext::new(&data, &sigma, alloc.clone(), 0.5).unwrap();
        let mut t = EvidenceTable::new();
        let base = log_f_gamma(&ctx, &cfg, 3, &mut t, false).unwrap();

        // swap full-rank responses 3 and 4 in the data (and sigma rows/cols)
        let swap = [0usize, 1, 2, 4, 3];
        let y_swapped = crate::types::permute_columns(&y, &swap);
        let sigma_swapped = permute_square(&sigma, &swap);
        let data_swapped = Dataset::from_matrices(y_swapped, x).unwrap();
        let ctx2 =
            EvidenceContext::new(&data_swapped, &sigma_swapped, alloc, 0.5).unwrap();
        let mut t2 = EvidenceTable::new();
        let swapped = log_f_gamma(&ctx2, &cfg, 3, &mut t2, false).unwrap();
        assert!((base - swapped).abs() < 1e-6, "{base} vs {swapped}");
    }
}
