//! Domain types shared by every module: data, hyperparameters, the binary
//! response allocation, and the full sampler state.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Response matrix `Y` (n x q) and predictor matrix `X` (n x p) with column
/// metadata.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    response_names: Vec<String>,
    predictor_names: Vec<String>,
    standardized: bool,
}

impl Dataset {
    /// Builds a dataset, enforcing the shape invariants: equal row counts,
    /// `n >= 1`, `q >= 3` (smaller q admits no valid allocation), and, when
    /// `standardized` is set, column means within 1e-10 of zero.
    pub fn new(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        response_names: Vec<String>,
        predictor_names: Vec<String>,
        standardized: bool,
    ) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "Y has {} rows but X has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.nrows() == 0 {
            return Err(Error::InvalidArgument("need at least one observation".into()));
        }
        if y.ncols() < 3 {
            return Err(Error::InvalidArgument(format!(
                "need q >= 3 responses for a valid allocation, got q = {}",
                y.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("need at least one predictor".into()));
        }
        if response_names.len() != y.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} response names for {} responses",
                response_names.len(),
                y.ncols()
            )));
        }
        if predictor_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictor names for {} predictors",
                predictor_names.len(),
                x.ncols()
            )));
        }
        if standardized {
            let check = |m: &DMatrix<f64>, label: &str| -> Result<()> {
                for j in 0..m.ncols() {
                    let mean = m.column(j).mean();
                    if mean.abs() > 1e-10 {
                        return Err(Error::InvalidArgument(format!(
                            "column {j} of {label} has mean {mean:e}, expected 0 for standardized data"
                        )));
                    }
                }
                Ok(())
            };
            check(&y, "Y")?;
            check(&x, "X")?;
        }
        Ok(Self { y, x, response_names, predictor_names, standardized })
    }

    /// Convenience constructor with synthetic `y1..yq` / `x1..xp` names.
    pub fn from_matrices(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let rn = (1..=y.ncols()).map(|j| format!("y{j}")).collect();
        let pn = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(y, x, rn, pn, false)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn standardized(&self) -> bool {
        self.standardized
    }

    /// Y with its columns reordered so the low-rank group comes first.
    pub fn y_permuted(&self, alloc: &Allocation) -> DMatrix<f64> {
        permute_columns(&self.y, alloc.perm())
    }
}

/// Fixed prior hyperparameters.
///
/// `a`, `b`, `d` are the diagonal prior variances of the vectorized `F`,
/// `B`, and `C2` blocks; `(a_rho, b_rho)` parameterize the Beta prior on the
/// low-rank inclusion probability; `(nu, psi)` the inverse-Wishart prior on
/// the error covariance.
#[derive(Debug, Clone)]
pub struct Hyperparameters {
    pub a_rho: f64,
    pub b_rho: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub nu: f64,
    pub psi: DMatrix<f64>,
}

impl Hyperparameters {
    /// Noninformative defaults: `a_rho = b_rho = 1`, `a = b = d = 0.5`,
    /// `nu = q + 1`, `psi = I_q`.
    pub fn default_for(q: usize) -> Self {
        Self {
            a_rho: 1.0,
            b_rho: 1.0,
            a: 0.5,
            b: 0.5,
            d: 0.5,
            nu: (q + 1) as f64,
            psi: DMatrix::identity(q, q),
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        for (name, v) in [
            ("a_rho", self.a_rho),
            ("b_rho", self.b_rho),
            ("a", self.a),
            ("b", self.b),
            ("d", self.d),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        if !(self.nu > (q as f64) - 1.0) {
            return Err(Error::InvalidArgument(format!(
                "nu must exceed q - 1 = {}, got {}",
                q - 1,
                self.nu
            )));
        }
        if self.psi.nrows() != q || self.psi.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "psi is {}x{}, expected {q}x{q}",
                self.psi.nrows(),
                self.psi.ncols()
            )));
        }
        let asym = (&self.psi - self.psi.transpose()).abs().max();
        if asym > 1e-10 * self.psi.abs().max().max(1.0) {
            return Err(Error::NotSpd("psi is not symmetric".into()));
        }
        if Cholesky::new(self.psi.clone()).is_none() {
            return Err(Error::NotSpd("psi has no Cholesky factorization".into()));
        }
        Ok(())
    }
}

/// Binary response allocation: `gamma[j] = 1` marks response `j` as a member
/// of the low-rank group.
///
/// `perm` maps permuted column positions to original ones: position `k` of
/// the permuted response matrix holds original column `perm[k]`. Low-rank
/// columns come first, each group keeping its original relative order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    gamma: Vec<u8>,
    q_gamma: usize,
    perm: Vec<usize>,
}

impl Allocation {
    /// Builds a validated allocation with `2 <= q_gamma <= q - 1`.
    pub fn new(gamma: Vec<u8>) -> Result<Self> {
        if gamma.iter().any(|&g| g > 1) {
            return Err(Error::InvalidAllocation("gamma entries must be 0 or 1".into()));
        }
        let q = gamma.len();
        let q_gamma = gamma.iter().map(|&g| g as usize).sum::<usize>();
        if q < 3 || q_gamma < 2 || q_gamma > q - 1 {
            return Err(Error::InvalidAllocation(format!(
                "need 2 <= q_gamma <= q - 1, got q_gamma = {q_gamma} with q = {q}"
            )));
        }
        Ok(Self::build(gamma, q_gamma))
    }

    /// All-ones allocation (`q_gamma = q`), used only by the full low-rank
    /// baseline where the partial-model constraint is waived.
    pub fn full_low_rank(q: usize) -> Self {
        Self::build(vec![1; q], q)
    }

    fn build(gamma: Vec<u8>, q_gamma: usize) -> Self {
        let mut perm = Vec::with_capacity(gamma.len());
        perm.extend((0..gamma.len()).filter(|&j| gamma[j] == 1));
        perm.extend((0..gamma.len()).filter(|&j| gamma[j] == 0));
        Self { gamma, q_gamma, perm }
    }

    pub fn gamma(&self) -> &[u8] {
        &self.gamma
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    pub fn q_gamma(&self) -> usize {
        self.q_gamma
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Inverse permutation: original column `j` sits at permuted position
    /// `inverse_perm()[j]`.
    pub fn inverse_perm(&self) -> Vec<usize> {
        let mut inv = vec![0usize; self.perm.len()];
        for (k, &j) in self.perm.iter().enumerate() {
            inv[j] = k;
        }
        inv
    }

    /// Largest admissible rank, `min(p, q_gamma) - 1`.
    pub fn r_max(&self, p: usize) -> usize {
        self.q_gamma.min(p) - 1
    }

    pub fn as_bitstring(&self) -> String {
        self.gamma.iter().map(|&g| if g == 1 { '1' } else { '0' }).collect()
    }
}

/// Rank of the low-rank coefficient block, validated against `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankState {
    r: usize,
}

impl RankState {
    pub fn new(r: usize, r_max: usize) -> Result<Self> {
        if r < 1 || r > r_max {
            return Err(Error::InvalidArgument(format!(
                "rank must satisfy 1 <= r <= {r_max}, got {r}"
            )));
        }
        Ok(Self { r })
    }

    pub fn r(&self) -> usize {
        self.r
    }
}

/// One complete MCMC state.
///
/// `F`, `B`, `C2` live in permuted response order; `sigma` is kept in the
/// original response order (its conditional posterior does not depend on the
/// permutation, and a fixed order avoids chain discontinuities when the
/// allocation moves).
#[derive(Debug, Clone)]
pub struct ModelState {
    pub alloc: Allocation,
    pub rank: RankState,
    pub f: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub rho: f64,
}

impl ModelState {
    /// Checks every dimension and domain invariant; used after each sampler
    /// step to catch allocation/rank transition bugs.
    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        let q_gamma = self.alloc.q_gamma();
        let r = self.rank.r();
        if self.alloc.q() != q {
            return Err(Error::DimensionMismatch(format!(
                "allocation over {} responses, expected {q}",
                self.alloc.q()
            )));
        }
        if q_gamma < q && r > self.alloc.r_max(p) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} exceeds r_max = {}",
                self.alloc.r_max(p)
            )));
        }
        if self.f.nrows() != q_gamma - r || self.f.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "F is {}x{}, expected {}x{}",
                self.f.nrows(),
                self.f.ncols(),
                q_gamma - r,
                r
            )));
        }
        if self.b.nrows() != p || self.b.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{}, expected {p}x{r}",
                self.b.nrows(),
                self.b.ncols()
            )));
        }
        if self.c2.nrows() != p || self.c2.ncols() != q - q_gamma {
            return Err(Error::DimensionMismatch(format!(
                "C2 is {}x{}, expected {p}x{}",
                self.c2.nrows(),
                self.c2.ncols(),
                q - q_gamma
            )));
        }
        if self.sigma.nrows() != q || self.sigma.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "Sigma is {}x{}, expected {q}x{q}",
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if Cholesky::new(self.sigma.clone()).is_none() {
            return Err(Error::NotSpd("Sigma".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        Ok(())
    }

    /// `A = [I_r; F]` (q_gamma x r), the identified low-rank factor.
    pub fn a(&self) -> DMatrix<f64> {
        let r = self.rank.r();
        let q_gamma = self.alloc.q_gamma();
        let mut a = DMatrix::zeros(q_gamma, r);
        for i in 0..r {
            a[(i, i)] = 1.0;
        }
        a.view_mut((r, 0), (q_gamma - r, r)).copy_from(&self.f);
        a
    }

    /// `C1 = B A'` (p x q_gamma), rank at most r.
    pub fn c1(&self) -> DMatrix<f64> {
        &self.b * self.a().transpose()
    }

    /// Error covariance conjugated into permuted response order.
    pub fn sigma_permuted(&self) -> DMatrix<f64> {
        permute_square(&self.sigma, self.alloc.perm())
    }
}

/// Reorders columns: `out[:, k] = m[:, perm[k]]`.
pub fn permute_columns(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), perm.len());
    for (k, &j) in perm.iter().enumerate() {
        out.set_column(k, &m.column(j));
    }
    out
}

/// Scatters columns back: `out[:, perm[k]] = m[:, k]`.
pub fn unpermute_columns(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), perm.len());
    for (k, &j) in perm.iter().enumerate() {
        out.set_column(j, &m.column(k));
    }
    out
}

/// Symmetric conjugation by the permutation: `out[k, l] = m[perm[k], perm[l]]`.
pub fn permute_square(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let q = perm.len();
    DMatrix::from_fn(q, q, |k, l| m[(perm[k], perm[l])])
}
