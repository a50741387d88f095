//! Simulation study harness: the synthetic data-generating process, the
//! four-model benchmark sweep, and the rolling one-step-ahead forecast
//! exercise.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::diagnostics::{classification_metrics, forecast_errors, map_estimates, mse_c};
use crate::dist::{standard_normal_matrix, RngHandle};
use crate::error::{Error, Result};
use crate::model::{Bprr, FullRank, PrrStar, ReducedRank, RegressionModel};
use crate::sampler::SamplerConfig;
use crate::types::{unpermute_columns, Allocation, Dataset, Hyperparameters};

/// One cell of the simulation grid.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Scenario {
    pub p: usize,
    pub q: usize,
    pub q_gamma0: usize,
    pub r0: usize,
    pub n: usize,
    pub n_replicates: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.q < 3 || self.q_gamma0 < 2 || self.q_gamma0 > self.q - 1 {
            return Err(Error::Config(format!(
                "scenario needs 2 <= q_gamma0 <= q - 1, got q_gamma0 = {} with q = {}",
                self.q_gamma0, self.q
            )));
        }
        let r_max = self.p.min(self.q_gamma0) - 1;
        if self.r0 < 1 || self.r0 > r_max {
            return Err(Error::Config(format!(
                "scenario needs 1 <= r0 <= {r_max}, got r0 = {}",
                self.r0
            )));
        }
        if self.n == 0 || self.n_replicates == 0 {
            return Err(Error::Config("scenario needs n >= 1 and n_replicates >= 1".into()));
        }
        Ok(())
    }
}

/// The generating parameters behind one synthetic dataset, reported in
/// original column order.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub c0: DMatrix<f64>,
    pub gamma0: Vec<u8>,
    pub sigma0: DMatrix<f64>,
    pub alloc: Allocation,
}

fn uniform_allocation_with(q: usize, q_gamma: usize, rng: &mut RngHandle) -> Vec<u8> {
    let mut idx: Vec<usize> = (0..q).collect();
    for i in (1..q).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut gamma = vec![0u8; q];
    for &k in idx.iter().take(q_gamma) {
        gamma[k] = 1;
    }
    gamma
}

/// Synthetic data: X rows iid standard normal, diagonal noise covariance
/// with entries uniform on [0.5, 1.75], free coefficient entries standard
/// normal, then the response columns scattered so the low-rank columns sit
/// where the (randomly drawn) allocation puts them. Centred responses, no
/// intercept.
pub fn generate_dgp(sc: &Scenario, rng: &mut RngHandle) -> Result<(Dataset, GroundTruth)> {
    sc.validate()?;
    let (n, p, q, q_gamma, r) = (sc.n, sc.p, sc.q, sc.q_gamma0, sc.r0);

    let x = standard_normal_matrix(n, p, rng);

    // sorted-order pieces: [low-rank block | full-rank block]
    let f0 = standard_normal_matrix(q_gamma - r, r, rng);
    let mut a0 = DMatrix::zeros(q_gamma, r);
    for i in 0..r {
        a0[(i, i)] = 1.0;
    }
    a0.view_mut((r, 0), (q_gamma - r, r)).copy_from(&f0);
    let b0 = standard_normal_matrix(p, r, rng);
    let c2_0 = standard_normal_matrix(p, q - q_gamma, rng);
    let mut c_sorted = DMatrix::zeros(p, q);
    c_sorted.view_mut((0, 0), (p, q_gamma)).copy_from(&(&b0 * a0.transpose()));
    c_sorted.view_mut((0, q_gamma), (p, q - q_gamma)).copy_from(&c2_0);

    let noise_sd: Vec<f64> = (0..q).map(|_| (0.5 + 1.25 * rng.random::<f64>()).sqrt()).collect();
    let mut e = standard_normal_matrix(n, q, rng);
    for j in 0..q {
        e.column_mut(j).scale_mut(noise_sd[j]);
    }
    let y_sorted = &x * &c_sorted + e;

    let gamma0 = uniform_allocation_with(q, q_gamma, rng);
    let alloc = Allocation::new(gamma0.clone())?;

    // scatter sorted columns to their original positions: the k-th sorted
    // column lands at original column perm[k]
    let y = unpermute_columns(&y_sorted, alloc.perm());
    let c0 = unpermute_columns(&c_sorted, alloc.perm());
    let mut sigma0 = DMatrix::zeros(q, q);
    for (k, &j) in alloc.perm().iter().enumerate() {
        sigma0[(j, j)] = noise_sd[k] * noise_sd[k];
    }

    let data = Dataset::from_matrices(y, x)?;
    Ok((data, GroundTruth { c0, gamma0, sigma0, alloc }))
}

/// Per-replicate benchmark outcome.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub q_gamma_hat: usize,
    pub r_hat: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub mse_bprr: f64,
    pub mse_fr: f64,
    pub mse_rr: f64,
    pub mse_prr_star: f64,
}

/// Averages over the replicates of one scenario, shaped like one benchmark
/// table row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ScenarioReport {
    pub p: usize,
    pub q: usize,
    pub q_gamma0: usize,
    pub r0: usize,
    pub n: usize,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub avg_q_gamma_hat: f64,
    pub avg_r_hat: f64,
    pub avg_accuracy: f64,
    pub avg_f1: f64,
    pub avg_mse_bprr: f64,
    pub avg_mse_fr: f64,
    pub avg_mse_rr: f64,
    pub avg_mse_prr_star: f64,
}

fn run_replicate(
    sc: &Scenario,
    hyper: &Hyperparameters,
    cfg: &SamplerConfig,
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let mut dgp_rng = RngHandle::new(sc.seed, (replicate as u64) * 16);
    let (data, truth) = generate_dgp(sc, &mut dgp_rng)?;
    // PRR* gets an allocation fixed uniformly at random, independent of the
    // truth.
    let prr_gamma = loop {
        let g = uniform_allocation_with(
            sc.q,
            dgp_rng.random_range(2..sc.q),
            &mut dgp_rng,
        );
        if let Ok(a) = Allocation::new(g) {
            break a;
        }
    };

    let stream_base = (replicate as u64) * 16;
    let with_stream = |offset: u64| -> SamplerConfig {
        let mut c = cfg.clone();
        c.stream_id = stream_base + offset;
        c
    };

    let bprr_chain = Bprr.fit(&data, hyper, &with_stream(1))?;
    let fr_chain = FullRank.fit(&data, hyper, &with_stream(2))?;
    let rr_chain = ReducedRank.fit(&data, hyper, &with_stream(3))?;
    let prr_chain = PrrStar { gamma: prr_gamma }.fit(&data, hyper, &with_stream(4))?;

    let bprr_summary = map_estimates(&bprr_chain)?;
    let (accuracy, f1) = classification_metrics(&bprr_summary.map_gamma, &truth.gamma0)?;
    Ok(ReplicateOutcome {
        q_gamma_hat: bprr_summary.map_gamma.iter().map(|&g| g as usize).sum(),
        r_hat: bprr_summary.map_r,
        accuracy,
        f1,
        mse_bprr: mse_c(&bprr_summary.c_mean, &truth.c0)?,
        mse_fr: mse_c(&map_estimates(&fr_chain)?.c_mean, &truth.c0)?,
        mse_rr: mse_c(&map_estimates(&rr_chain)?.c_mean, &truth.c0)?,
        mse_prr_star: mse_c(&map_estimates(&prr_chain)?.c_mean, &truth.c0)?,
    })
}

/// Runs every replicate of a scenario (in parallel, one RNG stream block per
/// replicate) and averages the outcomes. Replicate failures are counted and
/// skipped.
pub fn run_scenario(
    sc: &Scenario,
    hyper: &Hyperparameters,
    cfg: &SamplerConfig,
) -> Result<ScenarioReport> {
    sc.validate()?;
    hyper.validate(sc.q)?;
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..sc.n_replicates)
        .into_par_iter()
        .map(|i| run_replicate(sc, hyper, cfg, i))
        .collect();
    let mut ok = Vec::new();
    let mut n_failed = 0;
    for o in outcomes {
        match o {
            Ok(v) => ok.push(v),
            Err(_) => n_failed += 1,
        }
    }
    if ok.is_empty() {
        return Err(Error::Numerical(format!(
            "all {} replicates failed for scenario (p={}, q={}, q_gamma={}, r={}, n={})",
            sc.n_replicates, sc.p, sc.q, sc.q_gamma0, sc.r0, sc.n
        )));
    }
    let m = ok.len() as f64;
    let mean = |f: &dyn Fn(&ReplicateOutcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / m;
    Ok(ScenarioReport {
        p: sc.p,
        q: sc.q,
        q_gamma0: sc.q_gamma0,
        r0: sc.r0,
        n: sc.n,
        n_replicates: ok.len(),
        n_failed,
        avg_q_gamma_hat: mean(&|o| o.q_gamma_hat as f64),
        avg_r_hat: mean(&|o| o.r_hat as f64),
        avg_accuracy: mean(&|o| o.accuracy),
        avg_f1: mean(&|o| o.f1),
        avg_mse_bprr: mean(&|o| o.mse_bprr),
        avg_mse_fr: mean(&|o| o.mse_fr),
        avg_mse_rr: mean(&|o| o.mse_rr),
        avg_mse_prr_star: mean(&|o| o.mse_prr_star),
    })
}

/// Rolling forecast output.
#[derive(Debug, Clone)]
pub struct ForecastResult {
    /// One-step-ahead predictions for rows `window..n`.
    pub y_hat: DMatrix<f64>,
    /// The matching observed rows.
    pub y_true: DMatrix<f64>,
    pub mse: f64,
    pub mae: f64,
}

/// Rolling one-step-ahead forecast: for each target row `t` in
/// `window..n`, refit on the `window` preceding rows and predict
/// `y_t = x_t' C_hat` with the posterior mean coefficient matrix.
pub fn rolling_forecast(
    model: &dyn RegressionModel,
    data: &Dataset,
    hyper: &Hyperparameters,
    cfg: &SamplerConfig,
    window: usize,
) -> Result<ForecastResult> {
    let n = data.n();
    let min_fit = data.p().min(3).max(3);
    if window >= n {
        return Err(Error::Config(format!("window {window} must be smaller than n = {n}")));
    }
    if window < min_fit {
        return Err(Error::Config(format!("window {window} too small to fit the model")));
    }
    let n_test = n - window;
    let mut y_hat = DMatrix::zeros(n_test, data.q());
    let mut y_true = DMatrix::zeros(n_test, data.q());
    for t in window..n {
        let rows: Vec<usize> = (t - window..t).collect();
        let y_win = DMatrix::from_fn(window, data.q(), |i, j| data.y()[(rows[i], j)]);
        let x_win = DMatrix::from_fn(window, data.p(), |i, j| data.x()[(rows[i], j)]);
        let train = Dataset::new(
            y_win,
            x_win,
            data.response_names().to_vec(),
            data.predictor_names().to_vec(),
            false,
        )?;
        let mut win_cfg = cfg.clone();
        // distinct, reproducible stream per refit
        win_cfg.stream_id = cfg.stream_id + 1 + (t - window) as u64;
        let chain = model.fit(&train, hyper, &win_cfg)?;
        let summary = map_estimates(&chain)?;
        let x_t = data.x().row(t);
        let pred = x_t * &summary.c_mean;
        y_hat.row_mut(t - window).copy_from(&pred);
        y_true.row_mut(t - window).copy_from(&data.y().row(t));
    }
    let (mse, mae) = forecast_errors(&y_hat, &y_true)?;
    Ok(ForecastResult { y_hat, y_true, mse, mae })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::permute_columns;

    fn scenario() -> Scenario {
        Scenario { p: 3, q: 5, q_gamma0: 3, r0: 1, n: 12, n_replicates: 2, seed: 9 }
    }

    #[test]
    fn dgp_is_deterministic_per_seed() {
        let sc = scenario();
        let mut r1 = RngHandle::new(5, 0);
        let mut r2 = RngHandle::new(5, 0);
        let (d1, t1) = generate_dgp(&sc, &mut r1).unwrap();
        let (d2, t2) = generate_dgp(&sc, &mut r2).unwrap();
        assert_eq!(d1.y(), d2.y());
        assert_eq!(d1.x(), d2.x());
        assert_eq!(t1.c0, t2.c0);
        assert_eq!(t1.gamma0, t2.gamma0);
    }

    #[test]
    fn dgp_low_rank_block_has_planted_rank() {
        let sc = Scenario { p: 4, q: 6, q_gamma0: 4, r0 : 2, n: 10, n_replicates: 1, seed: 1 };
        let mut rng = RngHandle::new(17, 0);
        for _ in 0..100 {
            let (_, truth) = generate_dgp(&sc, &mut rng).unwrap();
            // gather the low-rank columns of C0 (original order)
            let c_perm = permute_columns(&truth.c0, truth.alloc.perm());
            let block = c_perm.view((0, 0), (4, 4)).clone_owned();
            let svd = block.svd(false, false);
            let max_sv = svd.singular_values.max();
            let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * max_sv).count();
            assert_eq!(rank, 2);
        }
    }

    #[test]
    fn dgp_noise_variances_in_range() {
        let sc = scenario();
        let mut rng = RngHandle::new(23, 0);
        for _ in 0..50 {
            let (_, truth) = generate_dgp(&sc, &mut rng).unwrap();
            for j in 0..sc.q {
                let v = truth.sigma0[(j, j)];
                assert!((0.5..=1.75).contains(&v), "variance {v} out of range");
            }
        }
    }

    #[test]
    fn dgp_x_marginals() {
        let sc = Scenario { p: 5, q: 4, q_gamma0: 2, r0: 1, n: 2000, n_replicates: 1, seed: 2 };
        let mut rng = RngHandle::new(29, 0);
        let (data, _) = generate_dgp(&sc, &mut rng).unwrap();
        let entries: Vec<f64> = data.x().iter().copied().collect();
        let m = entries.iter().sum::<f64>() / entries.len() as f64;
        let v = entries.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / entries.len() as f64;
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 1.0).abs() < 0.1, "variance {v}");
    }

    #[test]
    fn dgp_scatter_matches_worked_example() {
        // gamma0 = (0,1,0,1,1): sorted [y1..y3 | y4 y5] scatters to
        // Y = [y4, y1, y5, y2, y3].
        let alloc = Allocation::new(vec![0, 1, 0, 1, 1]).unwrap();
        let sorted = DMatrix::from_row_slice(1, 5, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let scattered = unpermute_columns(&sorted, alloc.perm());
        assert_eq!(
            scattered,
            DMatrix::from_row_slice(1, 5, &[4.0, 1.0, 5.0, 2.0, 3.0])
        );
    }
}
