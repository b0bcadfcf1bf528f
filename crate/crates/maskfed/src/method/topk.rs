//! Deterministic top-k baseline behind the shared mask-aggregation path.

use super::{mask_method_round, Method, RoundContext};
use crate::baselines::{topk_client_train, TopKConfig};
use crate::config::ExperimentConfig;
use crate::mask::ProbabilityMask;
use crate::metrics::RoundMetrics;
use crate::protocol::{RoundConfig, ServerState, UplinkMessage};
use crate::tensor::FixedWeights;
use crate::{Error, Result};

pub struct TopK {
    server: ServerState,
    cfg: RoundConfig,
    topk: TopKConfig,
}

pub fn build(cfg: &ExperimentConfig, weights: &FixedWeights) -> Result<Box<dyn Method>> {
    let k_fraction = cfg
        .k_fraction
        .ok_or_else(|| Error::Config("topk requires topk.k_fraction".into()))?;
    let mut round_cfg = cfg.round_config();
    round_cfg.lambda = 0.0;
    Ok(Box::new(TopK {
        server: ServerState::init(cfg.seed, weights.param_count()),
        cfg: round_cfg,
        topk: TopKConfig::new(k_fraction)?,
    }))
}

impl Method for TopK {
    fn name(&self) -> &'static str {
        "topk"
    }

    fn lambda(&self) -> f64 {
        0.0
    }

    fn round(&self) -> u64 {
        self.server.round
    }

    fn global_values(&self) -> Vec<f64> {
        self.server.theta.values().to_vec()
    }

    fn restore(&mut self, round: u64, values: Vec<f64>) -> Result<()> {
        if values.len() != self.server.theta.len() {
            return Err(Error::Checkpoint(format!(
                "snapshot has {} values, expected {}",
                values.len(),
                self.server.theta.len()
            )));
        }
        self.server.theta = ProbabilityMask::new(values)
            .map_err(|e| Error::Checkpoint(format!("invalid probability snapshot: {e}")))?;
        self.server.round = round;
        Ok(())
    }

    fn run_round(&mut self, ctx: &RoundContext) -> Result<(RoundMetrics, Vec<UplinkMessage>)> {
        let cfg = self.cfg;
        let topk = self.topk;
        mask_method_round(&mut self.server, &cfg, ctx, |client, theta, rng| {
            topk_client_train(client, ctx.dataset, theta, ctx.weights, &topk, &cfg, rng)
        })
    }
}
