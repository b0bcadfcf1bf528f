//! The stochastic-mask methods: entropy-regularized training and its
//! unregularized FedPM special case (identical machinery, lambda = 0).

use super::{mask_method_round, Method, RoundContext};
use crate::config::ExperimentConfig;
use crate::mask::ProbabilityMask;
use crate::metrics::RoundMetrics;
use crate::protocol::{client_local_train, RoundConfig, ServerState, UplinkMessage};
use crate::tensor::FixedWeights;
use crate::{Error, Result};

pub struct StochasticMask {
    name: &'static str,
    server: ServerState,
    cfg: RoundConfig,
}

pub fn build_regularized(
    cfg: &ExperimentConfig,
    weights: &FixedWeights,
) -> Result<Box<dyn Method>> {
    Ok(Box::new(StochasticMask {
        name: "regularized",
        server: ServerState::init(cfg.seed, weights.param_count()),
        cfg: cfg.round_config(),
    }))
}

pub fn build_fedpm(cfg: &ExperimentConfig, weights: &FixedWeights) -> Result<Box<dyn Method>> {
    let mut round_cfg = cfg.round_config();
    round_cfg.lambda = 0.0;
    Ok(Box::new(StochasticMask {
        name: "fedpm",
        server: ServerState::init(cfg.seed, weights.param_count()),
        cfg: round_cfg,
    }))
}

impl Method for StochasticMask {
    fn name(&self) -> &'static str {
        self.name
    }

    fn lambda(&self) -> f64 {
        self.cfg.lambda
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
        mask_method_round(&mut self.server, &cfg, ctx, |client, theta, rng| {
            client_local_train(client, ctx.dataset, theta, ctx.weights, &cfg, rng)
        })
    }
}
