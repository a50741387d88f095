//! The partially collapsed Gibbs sampler.
//!
//! Each iteration runs, in order: the Metropolized shotgun-stochastic-search
//! update of the allocation, the discrete rank draw, then conjugate draws of
//! `C2`, `F`, `B`, `Sigma`, and `rho`. Whenever `(gamma, r)` moved, the
//! conditional updates consume the auxiliary matrices `C1*` and `B*` built
//! from column prefixes of the previous iteration's coefficient matrix, so
//! every conditional sees blocks of the dimension the new state demands.
//!
//! Evidence values are cached per iteration only: the cache key is valid for
//! one `Sigma` snapshot and `Sigma` moves every sweep.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dist::{
    beta_sample, categorical, inv_wishart_sample, log_sum_exp, standard_normal_matrix,
    standard_normal_vector, RngHandle,
};
use crate::error::{Error, Result};
use crate::evidence::{restart_seed, EvidenceContext, EvidenceTable, GrrrConfig, GrrrFit, log_laplace_evidence};
use crate::linalg::assemble_c;
use crate::types::{
    permute_columns, permute_square, Allocation, Dataset, Hyperparameters, ModelState, RankState,
};

/// Chain initialization.
#[derive(Debug, Clone, Default)]
pub enum InitMode {
    /// Random valid allocation, uniform rank, identity Sigma, standard
    /// normal coefficients, rho from its prior.
    #[default]
    Random,
    Provided(Box<ModelState>),
}

/// MCMC run settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream_id: u64,
    #[serde(default)]
    pub grrr: GrrrConfig,
    #[serde(default = "default_true")]
    pub parallel_evidence: bool,
    #[serde(skip, default)]
    pub init: InitMode,
}

fn default_true() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 5000,
            burn_in: 2000,
            thin: 1,
            seed: 42,
            stream_id: 0,
            grrr: GrrrConfig::default(),
            parallel_evidence: true,
            init: InitMode::Random,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.grrr.tol > 0.0) || self.grrr.max_iter == 0 {
            return Err(Error::Config("invalid GRRR settings".into()));
        }
        Ok(())
    }
}

/// One retained draw, with `gamma` and `C` in original column order.
#[derive(Debug, Clone)]
pub struct Draw {
    pub iteration: usize,
    pub gamma: Vec<u8>,
    pub r: usize,
    pub c: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub rho: f64,
}

/// Counters of the run; `elapsed_ms` is informational and excluded from
/// persisted output so reruns stay byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainMeta {
    pub msss_proposed: usize,
    pub msss_accepted: usize,
    pub evidence_nonconverged: usize,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub draws: Vec<Draw>,
    pub meta: ChainMeta,
}

/// All one-bit flips of `gamma` that keep `2 <= q_gamma <= q - 1`; the input
/// itself is excluded.
pub fn neighborhood(gamma: &[u8]) -> Vec<Vec<u8>> {
    let q = gamma.len();
    let q_gamma: usize = gamma.iter().map(|&g| g as usize).sum();
    let mut out = Vec::new();
    for j in 0..q {
        let flipped = if gamma[j] == 1 { q_gamma - 1 } else { q_gamma + 1 };
        if flipped >= 2 && flipped <= q - 1 {
            let mut g = gamma.to_vec();
            g[j] ^= 1;
            out.push(g);
        }
    }
    out
}

/// Per-iteration evidence provider: owns the table and the per-allocation
/// contexts for one Sigma snapshot, evaluating missing `(gamma, r)` keys in
/// parallel with a deterministic reduction.
pub struct GammaEvidence<'a> {
    data: &'a Dataset,
    sigma: DMatrix<f64>,
    d: f64,
    cfg: GrrrConfig,
    seed: u64,
    parallel: bool,
    table: EvidenceTable,
    ctxs: HashMap<Vec<u8>, EvidenceContext>,
}

impl<'a> GammaEvidence<'a> {
    pub fn new(
        data: &'a Dataset,
        sigma: DMatrix<f64>,
        d: f64,
        cfg: GrrrConfig,
        seed: u64,
        parallel: bool,
    ) -> Self {
        Self { data, sigma, d, cfg, seed, parallel, table: EvidenceTable::new(), ctxs: HashMap::new() }
    }

    fn ctx_for(&mut self, gamma: &[u8]) -> Result<&EvidenceContext> {
        if !self.ctxs.contains_key(gamma) {
            let alloc = if gamma.iter().all(|&g| g == 1) {
                Allocation::full_low_rank(gamma.len())
            } else {
                Allocation::new(gamma.to_vec())?
            };
            let ctx = EvidenceContext::new(self.data, &self.sigma, alloc, self.d)?;
            self.ctxs.insert(gamma.to_vec(), ctx);
        }
        Ok(&self.ctxs[gamma])
    }

    /// Fills the table for every `(gamma, r)` pair of the given allocations.
    pub fn ensure_batch(&mut self, gammas: &[Vec<u8>]) -> Result<()> {
        for g in gammas {
            self.ctx_for(g)?;
        }
        let p = self.data.p();
        let mut jobs: Vec<(Vec<u8>, usize)> = Vec::new();
        for g in gammas {
            let r_max = self.ctxs[g].alloc.r_max(p);
            for r in 1..=r_max {
                if self.table.get(g, r).is_none() && !jobs.contains(&(g.clone(), r)) {
                    jobs.push((g.clone(), r));
                }
            }
        }
        if jobs.is_empty() {
            return Ok(());
        }
        let ctxs = &self.ctxs;
        let cfg = &self.cfg;
        let seed = self.seed;
        let compute = |(g, r): &(Vec<u8>, usize)| -> Result<(Vec<u8>, usize, f64, GrrrFit)> {
            let ctx = &ctxs[g];
            let (value, fit) = log_laplace_evidence(ctx, *r, cfg, restart_seed(seed, g, *r))?;
            Ok((g.clone(), *r, value, fit))
        };
        let computed: Result<Vec<_>> = if self.parallel && jobs.len() > 1 {
            jobs.par_iter().map(compute).collect()
        } else {
            jobs.iter().map(compute).collect()
        };
        for (g, r, value, fit) in computed? {
            self.table.insert(&g, r, value, fit);
        }
        Ok(())
    }

    /// Rank-marginalized log evidence of one allocation.
    pub fn log_f_gamma(&mut self, gamma: &[u8]) -> Result<f64> {
        self.ensure_batch(std::slice::from_ref(&gamma.to_vec()))?;
        let r_max = self.ctxs[gamma].alloc.r_max(self.data.p());
        let values: Vec<f64> =
            (1..=r_max).map(|r| self.table.get(gamma, r).unwrap().log_evidence).collect();
        Ok(log_sum_exp(&values) - (r_max as f64).ln())
    }

    /// Per-rank log evidences of one allocation.
    pub fn rank_log_evidences(&mut self, gamma: &[u8]) -> Result<Vec<f64>> {
        self.ensure_batch(std::slice::from_ref(&gamma.to_vec()))?;
        let r_max = self.ctxs[gamma].alloc.r_max(self.data.p());
        Ok((1..=r_max).map(|r| self.table.get(gamma, r).unwrap().log_evidence).collect())
    }

    pub fn table(&self) -> &EvidenceTable {
        &self.table
    }
}

/// Result of one MSSS move.
#[derive(Debug, Clone)]
pub struct MsssOutcome {
    pub alloc: Allocation,
    pub accepted: bool,
}

/// One Metropolized shotgun-stochastic-search step.
///
/// Proposes from the approximate posterior restricted to the one-flip
/// neighborhood and accepts with probability
/// `min{1, sum_{nbd(old)} w / sum_{nbd(new)} w}`; with the normalized
/// restricted proposal this is the exact Metropolis-Hastings ratio. All
/// weights are handled in log space, and both the categorical draw and the
/// acceptance draw consume exactly one uniform each.
pub fn msss_step(
    alloc: &Allocation,
    rho: f64,
    evidence: &mut GammaEvidence<'_>,
    rng: &mut RngHandle,
) -> Result<MsssOutcome> {
    let q = alloc.q();
    let nbd_old = neighborhood(alloc.gamma());
    if nbd_old.is_empty() {
        return Err(Error::Numerical("empty MSSS neighborhood".into()));
    }
    let log_prior = |gamma: &[u8]| -> f64 {
        let qg: usize = gamma.iter().map(|&g| g as usize).sum();
        (qg as f64) * rho.ln() + ((q - qg) as f64) * (1.0 - rho).ln()
    };

    evidence.ensure_batch(&nbd_old)?;
    let mut w_old = Vec::with_capacity(nbd_old.len());
    for g in &nbd_old {
        w_old.push(evidence.log_f_gamma(g)? + log_prior(g));
    }
    let proposal_idx = categorical(&w_old, rng)?;
    let proposal = &nbd_old[proposal_idx];

    let nbd_new = neighborhood(proposal);
    evidence.ensure_batch(&nbd_new)?;
    let mut w_new = Vec::with_capacity(nbd_new.len());
    for g in &nbd_new {
        w_new.push(evidence.log_f_gamma(g)? + log_prior(g));
    }

    let log_ratio = log_sum_exp(&w_old) - log_sum_exp(&w_new);
    let u: f64 = rng.random();
    let accepted = log_ratio >= 0.0 || u < log_ratio.exp();
    let alloc_new = if accepted { Allocation::new(proposal.clone())? } else { alloc.clone() };
    Ok(MsssOutcome { alloc: alloc_new, accepted })
}

/// Draws the rank from the discrete distribution proportional to the
/// per-rank Laplace evidence (the uniform rank prior cancels).
pub fn sample_rank(
    alloc: &Allocation,
    evidence: &mut GammaEvidence<'_>,
    rng: &mut RngHandle,
) -> Result<usize> {
    let values = evidence.rank_log_evidences(alloc.gamma())?;
    Ok(categorical(&values, rng)? + 1)
}

/// First `q_gamma_new` columns of the previous coefficient matrix (already
/// in the new permuted order).
pub fn auxiliary_c1(c_prev_perm: &DMatrix<f64>, q_gamma_new: usize) -> DMatrix<f64> {
    c_prev_perm.view((0, 0), (c_prev_perm.nrows(), q_gamma_new)).clone_owned()
}

/// First `r_new` columns of the previous coefficient matrix: by
/// `C1 = [B, B F']`, these coincide with the B block.
pub fn auxiliary_b(c_prev_perm: &DMatrix<f64>, r_new: usize) -> DMatrix<f64> {
    c_prev_perm.view((0, 0), (c_prev_perm.nrows(), r_new)).clone_owned()
}

/// Gaussian posterior in precision form: draw = mean + L^{-T} z where the
/// precision is L L'.
#[derive(Debug)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    prec_chol: Cholesky<f64, nalgebra::Dyn>,
}

impl GaussianPosterior {
    fn new(precision: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<Self> {
        let prec_chol = Cholesky::new(precision)
            .ok_or_else(|| Error::NotSpd(format!("{what} posterior precision")))?;
        let mean = prec_chol.solve(rhs);
        Ok(Self { mean, prec_chol })
    }

    pub fn sample(&self, rng: &mut RngHandle) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        let corr = self
            .prec_chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("precision factor is nonsingular");
        &self.mean + corr
    }

    /// Posterior covariance (dense); oracle use.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.prec_chol.inverse()
    }
}

fn spd_solve_inputs(
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
) -> Result<DMatrix<f64>> {
    let sigma_perm = permute_square(sigma_orig, alloc.perm());
    let chol = Cholesky::new(sigma_perm).ok_or_else(|| Error::NotSpd("Sigma".into()))?;
    Ok(chol.inverse())
}

/// Posterior of `delta = vec(C2)` given the auxiliary `C1*`:
/// precision `Lambda_d^{-1} + U2' Sigma~^{-1} U2`, mean through
/// `U2' Sigma~^{-1} (y - U1 c1*)`. Collapsed Kronecker assembly.
pub fn delta_posterior(
    data: &Dataset,
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
    c1_star: &DMatrix<f64>,
    hyper: &Hyperparameters,
) -> Result<GaussianPosterior> {
    let q = data.q();
    let q_gamma = alloc.q_gamma();
    let s2 = q - q_gamma;
    if c1_star.ncols() != q_gamma || c1_star.nrows() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "C1* is {}x{}, expected {}x{q_gamma}",
            c1_star.nrows(),
            c1_star.ncols(),
            data.p()
        )));
    }
    let s = spd_solve_inputs(sigma_orig, alloc)?;
    let xtx = data.x().transpose() * data.x();
    let s22 = s.view((q_gamma, q_gamma), (s2, s2)).clone_owned();
    let mut prec = s22.kronecker(&xtx);
    for i in 0..s2 * data.p() {
        prec[(i, i)] += 1.0 / hyper.d;
    }
    let mut resid = data.y_permuted(alloc);
    resid.view_mut((0, 0), (data.n(), q_gamma)).gemm(-1.0, data.x(), c1_star, 1.0);
    let proj = (data.x().transpose() * resid) * &s;
    let rhs = DVector::from_column_slice(
        proj.view((0, q_gamma), (data.p(), s2)).clone_owned().as_slice(),
    );
    GaussianPosterior::new(prec, &rhs, "delta")
}

/// Draws `delta` and reshapes it to `C2`.
pub fn sample_delta(
    data: &Dataset,
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
    c1_star: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut RngHandle,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let post = delta_posterior(data, sigma_orig, alloc, c1_star, hyper)?;
    let delta = post.sample(rng);
    let c2 = DMatrix::from_column_slice(data.p(), data.q() - alloc.q_gamma(), delta.as_slice());
    Ok((delta, c2))
}

/// Posterior of `alpha_F = vec(F')` given the auxiliary `B*` and the fresh
/// `C2`. The moment restricts `G = M_a' Sigma~^{-1} M_a` to its J rows and
/// subtracts the identity-block columns applied to `v = vec(I_r)`.
pub fn alpha_posterior(
    data: &Dataset,
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
    r: usize,
    b_star: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    hyper: &Hyperparameters,
) -> Result<GaussianPosterior> {
    let q = data.q();
    let q_gamma = alloc.q_gamma();
    if b_star.ncols() != r {
        return Err(Error::DimensionMismatch(format!(
            "B* has {} columns, expected r = {r}",
            b_star.ncols()
        )));
    }
    if q_gamma < r + 1 {
        return Err(Error::InvalidArgument(format!(
            "alpha step needs q_gamma - r >= 1, got q_gamma = {q_gamma}, r = {r}"
        )));
    }
    let s = spd_solve_inputs(sigma_orig, alloc)?;
    let xtx = data.x().transpose() * data.x();
    let t_b = b_star.transpose() * &xtx * b_star;
    let s11 = s.view((0, 0), (q_gamma, q_gamma)).clone_owned();
    // G in vec(A') coordinates; J = {r^2 .. q_gamma r} indexes the F rows.
    let g_full = s11.kronecker(&t_b);
    let mut y_tilde = data.y_permuted(alloc);
    if q > q_gamma {
        y_tilde
            .view_mut((0, q_gamma), (data.n(), q - q_gamma))
            .gemm(-1.0, data.x(), c2, 1.0);
    }
    let m_full = b_star.transpose() * (data.x().transpose() * y_tilde) * &s;
    let m_v1 = m_full.view((0, 0), (r, q_gamma)).clone_owned(); // r x q_gamma

    let free = (q_gamma - r) * r;
    let mut prec = DMatrix::zeros(free, free);
    let mut rhs = DVector::zeros(free);
    // vec(A') index for column c of A', row i: c*r + i; J starts at r^2.
    for k in 0..free {
        let jk = r * r + k;
        for l in 0..free {
            prec[(k, l)] = g_full[(jk, r * r + l)];
        }
        prec[(k, k)] += 1.0 / hyper.a;
        let mut ident_part = 0.0;
        for j in 0..r {
            ident_part += g_full[(jk, j * r + j)];
        }
        let col = jk / r;
        let row = jk % r;
        rhs[k] = m_v1[(row, col)] - ident_part;
    }
    GaussianPosterior::new(prec, &rhs, "alpha_F")
}

/// Draws `alpha_F`, returning `(F, A)`.
pub fn sample_alpha_f(
    data: &Dataset,
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
    r: usize,
    b_star: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut RngHandle,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let post = alpha_posterior(data, sigma_orig, alloc, r, b_star, c2, hyper)?;
    let alpha = post.sample(rng);
    let q_gamma = alloc.q_gamma();
    // alpha_F = vec(F'): F[i, j] = alpha[i*r + j].
    let f = DMatrix::from_fn(q_gamma - r, r, |i, j| alpha[i * r + j]);
    let mut a = DMatrix::zeros(q_gamma, r);
    for i in 0..r {
        a[(i, i)] = 1.0;
    }
    a.view_mut((r, 0), (q_gamma - r, r)).copy_from(&f);
    Ok((f, a))
}

/// Posterior of `beta = vec(B)` given `A` and `C2`, with
/// `M_b = U1 (A (x) I_p)` collapsed to `(V1'A) (x) X`.
pub fn beta_posterior(
    data: &Dataset,
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
    a_mat: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    hyper: &Hyperparameters,
) -> Result<GaussianPosterior> {
    let q = data.q();
    let q_gamma = alloc.q_gamma();
    let r = a_mat.ncols();
    if a_mat.nrows() != q_gamma {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, expected {q_gamma} rows",
            a_mat.nrows(),
            a_mat.ncols()
        )));
    }
    let s = spd_solve_inputs(sigma_orig, alloc)?;
    let xtx = data.x().transpose() * data.x();
    let sw1 = s.view((0, 0), (q, q_gamma)).clone_owned() * a_mat; // S V1'A, q x r
    let a_s11_a = a_mat.transpose() * sw1.view((0, 0), (q_gamma, r)).clone_owned();
    let mut prec = a_s11_a.kronecker(&xtx);
    for i in 0..data.p() * r {
        prec[(i, i)] += 1.0 / hyper.b;
    }
    let mut y_tilde = data.y_permuted(alloc);
    if q > q_gamma {
        y_tilde
            .view_mut((0, q_gamma), (data.n(), q - q_gamma))
            .gemm(-1.0, data.x(), c2, 1.0);
    }
    let rhs_mat = (data.x().transpose() * y_tilde) * &sw1;
    let rhs = DVector::from_column_slice(rhs_mat.as_slice());
    GaussianPosterior::new(prec, &rhs, "beta")
}

/// Draws `B`.
pub fn sample_beta(
    data: &Dataset,
    sigma_orig: &DMatrix<f64>,
    alloc: &Allocation,
    a_mat: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut RngHandle,
) -> Result<DMatrix<f64>> {
    let post = beta_posterior(data, sigma_orig, alloc, a_mat, c2, hyper)?;
    let beta = post.sample(rng);
    Ok(DMatrix::from_column_slice(data.p(), a_mat.ncols(), beta.as_slice()))
}

/// Inverse-Wishart posterior parameters for `Sigma` given `C` in original
/// column order.
pub fn sigma_posterior(
    data: &Dataset,
    c_orig: &DMatrix<f64>,
    hyper: &Hyperparameters,
) -> Result<(f64, DMatrix<f64>)> {
    if c_orig.nrows() != data.p() || c_orig.ncols() != data.q() {
        return Err(Error::DimensionMismatch("C must be p x q in original order".into()));
    }
    let resid = data.y() - data.x() * c_orig;
    let psi_bar = &hyper.psi + resid.transpose() * resid;
    Ok((hyper.nu + data.n() as f64, psi_bar))
}

pub fn sample_sigma(
    data: &Dataset,
    c_orig: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut RngHandle,
) -> Result<DMatrix<f64>> {
    let (nu_bar, psi_bar) = sigma_posterior(data, c_orig, hyper)?;
    inv_wishart_sample(nu_bar, &psi_bar, rng)
}

/// Draws `rho ~ Beta(a_rho + q_gamma, b_rho + q - q_gamma)`.
pub fn sample_rho(alloc: &Allocation, hyper: &Hyperparameters, rng: &mut RngHandle) -> Result<f64> {
    beta_sample(
        hyper.a_rho + alloc.q_gamma() as f64,
        hyper.b_rho + (alloc.q() - alloc.q_gamma()) as f64,
        rng,
    )
}

/// Whether the allocation is updated each sweep or held fixed.
#[derive(Debug, Clone)]
pub enum GammaPolicy {
    /// Full model: MSSS update each iteration.
    Sample,
    /// Pre-specified allocation (the PRR* baseline) or the all-ones
    /// allocation (the RR baseline, constraint waived).
    Fixed(Allocation),
}

fn random_valid_allocation(q: usize, rng: &mut RngHandle) -> Allocation {
    loop {
        let gamma: Vec<u8> = (0..q).map(|_| rng.random_range(0..2u8)).collect();
        if let Ok(a) = Allocation::new(gamma) {
            return a;
        }
    }
}

fn init_state(
    data: &Dataset,
    hyper: &Hyperparameters,
    cfg: &SamplerConfig,
    policy: &GammaPolicy,
    rng: &mut RngHandle,
) -> Result<ModelState> {
    if let InitMode::Provided(state) = &cfg.init {
        let state = (**state).clone();
        state.validate(data.p(), data.q())?;
        return Ok(state);
    }
    let alloc = match policy {
        GammaPolicy::Sample => random_valid_allocation(data.q(), rng),
        GammaPolicy::Fixed(a) => a.clone(),
    };
    let r_max = alloc.r_max(data.p());
    let r = rng.random_range(1..=r_max);
    let q_gamma = alloc.q_gamma();
    let state = ModelState {
        rank: RankState::new(r, r_max)?,
        f: standard_normal_matrix(q_gamma - r, r, rng),
        b: standard_normal_matrix(data.p(), r, rng),
        c2: standard_normal_matrix(data.p(), data.q() - q_gamma, rng),
        sigma: DMatrix::identity(data.q(), data.q()),
        rho: beta_sample(hyper.a_rho, hyper.b_rho, rng)?,
        alloc,
    };
    Ok(state)
}

/// Runs the full partially collapsed Gibbs sampler (allocation sampled).
pub fn run_chain(data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput> {
    run_prr_chain(data, hyper, cfg, GammaPolicy::Sample)
}

/// Runs the PRR-family sampler under the given allocation policy. The rank,
/// coefficient blocks, `Sigma`, and `rho` are always sampled.
pub fn run_prr_chain(
    data: &Dataset,
    hyper: &Hyperparameters,
    cfg: &SamplerConfig,
    policy: GammaPolicy,
) -> Result<ChainOutput> {
    hyper.validate(data.q())?;
    cfg.validate()?;
    if let GammaPolicy::Fixed(a) = &policy {
        if a.q() != data.q() {
            return Err(Error::DimensionMismatch(format!(
                "fixed allocation over {} responses for q = {}",
                a.q(),
                data.q()
            )));
        }
    }
    let start = Instant::now();
    let mut rng = RngHandle::new(cfg.seed, cfg.stream_id);
    let mut state = init_state(data, hyper, cfg, &policy, &mut rng)?;
    let (_, mut c_orig) = assemble_c(&state)?;
    let mut meta = ChainMeta::default();
    let mut draws = Vec::new();

    let fail = |iteration: usize, e: Error| Error::Sampler {
        iteration,
        message: e.to_string(),
    };

    for m in 1..=cfg.n_iter {
        // Evidence cache lives for exactly one sweep: Sigma moved last sweep.
        let mut evidence = GammaEvidence::new(
            data,
            state.sigma.clone(),
            hyper.d,
            cfg.grrr.clone(),
            cfg.seed,
            cfg.parallel_evidence,
        );

        // Step 1: allocation.
        let alloc = match &policy {
            GammaPolicy::Sample => {
                let out = msss_step(&state.alloc, state.rho, &mut evidence, &mut rng)
                    .map_err(|e| fail(m, e))?;
                meta.msss_proposed += 1;
                if out.accepted {
                    meta.msss_accepted += 1;
                }
                out.alloc
            }
            GammaPolicy::Fixed(a) => a.clone(),
        };

        // Step 2: rank.
        let r = sample_rank(&alloc, &mut evidence, &mut rng).map_err(|e| fail(m, e))?;
        meta.evidence_nonconverged += evidence.table().non_converged();

        // Auxiliary matrices: prefixes of the previous C, re-permuted for
        // the new allocation.
        let c_prev_perm = permute_columns(&c_orig, alloc.perm());

        // Step 3: C2 (empty when the full-rank group is empty).
        let c2 = if alloc.q_gamma() < data.q() {
            let c1_star = auxiliary_c1(&c_prev_perm, alloc.q_gamma());
            let (_, c2) = sample_delta(data, &state.sigma, &alloc, &c1_star, hyper, &mut rng)
                .map_err(|e| fail(m, e))?;
            c2
        } else {
            DMatrix::zeros(data.p(), 0)
        };

        // Step 4: F (hence A).
        let b_star = auxiliary_b(&c_prev_perm, r);
        let (f, a) = sample_alpha_f(data, &state.sigma, &alloc, r, &b_star, &c2, hyper, &mut rng)
            .map_err(|e| fail(m, e))?;

        // Step 5: B.
        let b = sample_beta(data, &state.sigma, &alloc, &a, &c2, hyper, &mut rng)
            .map_err(|e| fail(m, e))?;

        let r_max_bound = alloc.r_max(data.p());
        state = ModelState {
            rank: RankState::new(r, r_max_bound).map_err(|e| fail(m, e))?,
            f,
            b,
            c2,
            sigma: state.sigma,
            rho: state.rho,
            alloc,
        };
        let (_, new_c_orig) = assemble_c(&state).map_err(|e| fail(m, e))?;
        c_orig = new_c_orig;

        // Step 6: Sigma (original order).
        state.sigma =
            sample_sigma(data, &c_orig, hyper, &mut rng).map_err(|e| fail(m, e))?;

        // Step 7: rho.
        state.rho = sample_rho(&state.alloc, hyper, &mut rng).map_err(|e| fail(m, e))?;

        state.validate(data.p(), data.q()).map_err(|e| fail(m, e))?;

        if m > cfg.burn_in && (m - cfg.burn_in) % cfg.thin == 0 {
            draws.push(Draw {
                iteration: m,
                gamma: state.alloc.gamma().to_vec(),
                r,
                c: c_orig.clone(),
                sigma: state.sigma.clone(),
                rho: state.rho,
            });
        }
    }

    meta.elapsed_ms = start.elapsed().as_millis();
    Ok(ChainOutput {
        p: data.p(),
        q: data.q(),
        n: data.n(),
        seed: cfg.seed,
        stream_id: cfg.stream_id,
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        draws,
        meta,
    })
}

/// Full-rank baseline: conjugate Gibbs over `(C, Sigma)` with the same
/// Gaussian prior variance `d` on every entry of `vec(C)`. Draws store the
/// all-zeros allocation, `r = 0`, and `rho = 0` as placeholders.
pub fn run_fr_chain(
    data: &Dataset,
    hyper: &Hyperparameters,
    cfg: &SamplerConfig,
) -> Result<ChainOutput> {
    hyper.validate(data.q())?;
    cfg.validate()?;
    let start = Instant::now();
    let (n, p, q) = (data.n(), data.p(), data.q());
    let mut rng = RngHandle::new(cfg.seed, cfg.stream_id);
    let xtx = data.x().transpose() * data.x();
    let mut sigma = DMatrix::<f64>::identity(q, q);
    let mut draws = Vec::new();

    for m in 1..=cfg.n_iter {
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::Sampler { iteration: m, message: "Sigma not SPD".into() })?;
        let s = chol.inverse();
        let mut prec = s.kronecker(&xtx);
        for i in 0..p * q {
            prec[(i, i)] += 1.0 / hyper.d;
        }
        let rhs_mat = (data.x().transpose() * data.y()) * &s;
        let rhs = DVector::from_column_slice(rhs_mat.as_slice());
        let post = GaussianPosterior::new(prec, &rhs, "full-rank C")
            .map_err(|e| Error::Sampler { iteration: m, message: e.to_string() })?;
        let cv = post.sample(&mut rng);
        let c = DMatrix::from_column_slice(p, q, cv.as_slice());

        sigma = sample_sigma(data, &c, hyper, &mut rng)
            .map_err(|e| Error::Sampler { iteration: m, message: e.to_string() })?;

        if m > cfg.burn_in && (m - cfg.burn_in) % cfg.thin == 0 {
            draws.push(Draw {
                iteration: m,
                gamma: vec![0; q],
                r: 0,
                c: c.clone(),
                sigma: sigma.clone(),
                rho: 0.0,
            });
        }
    }

    Ok(ChainOutput {
        p,
        q,
        n,
        seed: cfg.seed,
        stream_id: cfg.stream_id,
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        draws,
        meta: ChainMeta { elapsed_ms: start.elapsed().as_millis(), ..Default::default() },
    })
}
