//! Majority-vote SignSGD baseline. Unlike the mask methods this trains real
//! weights; during training it still exchanges one bit per parameter, but
//! the final model needs a floating-point representation.

use rayon::prelude::*;

use super::{Method, RoundContext};
use crate::baselines::{
    mv_signsgd_aggregate, mv_signsgd_client, signs_to_mask, SignSgdServerState,
};
use crate::config::ExperimentConfig;
use crate::metrics::{accuracy_over_sets, round_bpp, RoundMetrics};
use crate::protocol::{select_participants, UplinkMessage};
use crate::tensor::FixedWeights;
use crate::{Error, Result};

pub struct MvSignSgd {
    state: SignSgdServerState,
    local_epochs: usize,
    batch_size: usize,
    participation: f64,
    round: u64,
    seed: u64,
}

pub fn build(cfg: &ExperimentConfig, weights: &FixedWeights) -> Result<Box<dyn Method>> {
    let eta_server = cfg
        .eta_server
        .ok_or_else(|| Error::Config("mv_signsgd requires eta_server".into()))?;
    Ok(Box::new(MvSignSgd {
        // Weights start from the same signed-constant initialization the
        // mask methods freeze.
        state: SignSgdServerState::new(weights.values().to_vec(), eta_server)?,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        participation: cfg.participation,
        round: 0,
        seed: cfg.seed,
    }))
}

impl Method for MvSignSgd {
    fn name(&self) -> &'static str {
        "mv_signsgd"
    }

    fn lambda(&self) -> f64 {
        0.0
    }

    fn round(&self) -> u64 {
        self.round
    }

    fn global_values(&self) -> Vec<f64> {
        self.state.weights.clone()
    }

    fn restore(&mut self, round: u64, values: Vec<f64>) -> Result<()> {
        if values.len() != self.state.weights.len() {
            return Err(Error::Checkpoint(format!(
                "snapshot has {} values, expected {}",
                values.len(),
                self.state.weights.len()
            )));
        }
        self.state.weights = values;
        self.round = round;
        Ok(())
    }

    fn run_round(&mut self, ctx: &RoundContext) -> Result<(RoundMetrics, Vec<UplinkMessage>)> {
        let round = self.round;
        let participants =
            select_participants(self.seed, round, ctx.clients.len(), self.participation);
        let topology = ctx.weights.topology();
        let weights = &self.state.weights;
        let signs: Vec<Vec<i8>> = ctx.pool.install(|| {
            participants
                .par_iter()
                .map(|&cid| {
                    mv_signsgd_client(
                        weights,
                        topology,
                        ctx.dataset,
                        &ctx.clients[cid].indices,
                        self.local_epochs,
                        self.batch_size,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let uplinks: Vec<UplinkMessage> = participants
            .iter()
            .zip(&signs)
            .map(|(&cid, s)| UplinkMessage {
                client_id: cid,
                mask: signs_to_mask(s),
                dataset_size: ctx.clients[cid].dataset_size(),
            })
            .collect();

        mv_signsgd_aggregate(&signs, &mut self.state)?;

        let ones = vec![1.0; self.state.weights.len()];
        let accuracy =
            accuracy_over_sets(topology, &self.state.weights, &ones, ctx.dataset, ctx.eval)?;
        let (bpp_per_client, bpp_avg) = round_bpp(&uplinks);
        let mask_density_avg =
            uplinks.iter().map(|u| u.mask.density()).sum::<f64>() / uplinks.len() as f64;
        let theta_mean = self.state.weights.iter().sum::<f64>() / self.state.weights.len() as f64;
        self.round = round + 1;
        Ok((
            RoundMetrics {
                round: round + 1,
                accuracy,
                participants,
                bpp_per_client,
                bpp_avg,
                mask_density_avg,
                theta_mean,
            },
            uplinks,
        ))
    }
}
