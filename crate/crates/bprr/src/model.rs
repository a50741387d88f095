//! Model strategies behind a common trait, registered by name.
//!
//! Four interchangeable fitting strategies share one interface: the full
//! BPRR sampler, the full-rank baseline (FR), the full low-rank baseline
//! (RR, allocation pinned at all ones), and the pre-specified partial
//! low-rank baseline (PRR*, allocation pinned at a given vector). The CLI
//! and the simulation harness select them at runtime through [`create_model`].

use crate::error::{Error, Result};
use crate::sampler::{run_chain, run_fr_chain, run_prr_chain, ChainOutput, GammaPolicy, SamplerConfig};
use crate::types::{Allocation, Dataset, Hyperparameters};

/// A fitting strategy: consumes a dataset and produces a chain.
pub trait RegressionModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput>;
}

/// Bayesian partial reduced-rank regression with sampled allocation and rank.
pub struct Bprr;

impl RegressionModel for Bprr {
    fn name(&self) -> &'static str {
        "bprr"
    }

    fn fit(&self, data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput> {
        run_chain(data, hyper, cfg)
    }
}

/// Full-rank baseline: no low-rank structure anywhere.
pub struct FullRank;

impl RegressionModel for FullRank {
    fn name(&self) -> &'static str {
        "fr"
    }

    fn fit(&self, data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput> {
        run_fr_chain(data, hyper, cfg)
    }
}

/// Full low-rank baseline: every response in the low-rank group, rank
/// sampled. The partial-model constraint on `q_gamma` is waived here by
/// construction.
pub struct ReducedRank;

impl RegressionModel for ReducedRank {
    fn name(&self) -> &'static str {
        "rr"
    }

    fn fit(&self, data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput> {
        run_prr_chain(data, hyper, cfg, GammaPolicy::Fixed(Allocation::full_low_rank(data.q())))
    }
}

/// Partial low-rank with a pre-specified allocation.
pub struct PrrStar {
    pub gamma: Allocation,
}

impl RegressionModel for PrrStar {
    fn name(&self) -> &'static str {
        "prr-star"
    }

    fn fit(&self, data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput> {
        run_prr_chain(data, hyper, cfg, GammaPolicy::Fixed(self.gamma.clone()))
    }
}

/// Extra arguments some strategies need at construction time.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    /// Fixed allocation for `prr-star` (required there, ignored elsewhere).
    pub gamma_fixed: Option<Vec<u8>>,
}

type ModelFactory = fn(&ModelParams) -> Result<Box<dyn RegressionModel>>;

/// Name -> factory registry of every built-in strategy.
pub const MODELS: &[(&str, ModelFactory)] = &[
    ("bprr", |_| Ok(Box::new(Bprr))),
    ("fr", |_| Ok(Box::new(FullRank))),
    ("rr", |_| Ok(Box::new(ReducedRank))),
    ("prr-star", |params| {
        let gamma = params.gamma_fixed.clone().ok_or_else(|| {
            Error::Config("prr-star needs a fixed allocation (gamma)".into())
        })?;
        Ok(Box::new(PrrStar { gamma: Allocation::new(gamma)? }))
    }),
];

pub fn model_names() -> Vec<&'static str> {
    MODELS.iter().map(|(name, _)| *name).collect()
}

/// Instantiates a registered strategy by name.
pub fn create_model(name: &str, params: &ModelParams) -> Result<Box<dyn RegressionModel>> {
    MODELS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, factory)| factory(params))
        .unwrap_or_else(|| {
            Err(Error::Config(format!(
                "unknown model '{name}'; available: {}",
                model_names().join(", ")
            )))
        })
}

/// Convenience wrappers mirroring the per-model entry points.
pub fn fit_fr(data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput> {
    FullRank.fit(data, hyper, cfg)
}

pub fn fit_rr(data: &Dataset, hyper: &Hyperparameters, cfg: &SamplerConfig) -> Result<ChainOutput> {
    ReducedRank.fit(data, hyper, cfg)
}

pub fn fit_prr_star(
    data: &Dataset,
    gamma_fixed: &Allocation,
    hyper: &Hyperparameters,
    cfg: &SamplerConfig,
) -> Result<ChainOutput> {
    PrrStar { gamma: gamma_fixed.clone() }.fit(data, hyper, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_all_models() {
        assert_eq!(model_names(), vec!["bprr", "fr", "rr", "prr-star"]);
        assert!(create_model("bprr", &ModelParams::default()).is_ok());
        assert!(create_model("nope", &ModelParams::default()).is_err());
        // prr-star demands an allocation
        assert!(create_model("prr-star", &ModelParams::default()).is_err());
        let params = ModelParams { gamma_fixed: Some(vec![1, 1, 0, 0]) };
        let m = create_model("prr-star", &params).unwrap();
        assert_eq!(m.name(), "prr-star");
    }
}
