//! Runtime-selectable training methods behind a common trait.
//!
//! Every federated variant (regularized stochastic masks, plain FedPM,
//! deterministic top-k, majority-vote SignSGD) implements [`Method`] and is
//! registered by name; experiment configs pick one at runtime.

mod signsgd;
mod stochastic;
mod topk;

use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::{Dataset, EvalSets};
use crate::metrics::{round_bpp, EvalMode, RoundMetrics};
use crate::protocol::{
    select_participants, server_aggregate, ClientState, RoundConfig, ServerState, UplinkMessage,
};
use crate::rng::{stream, StreamId};
use crate::tensor::FixedWeights;
use crate::{Error, Result};

/// Everything a round needs besides the method's own state. Borrowed
/// per-round from the experiment runner.
pub struct RoundContext<'a> {
    pub dataset: &'a Dataset,
    pub clients: &'a [ClientState],
    pub eval: &'a EvalSets,
    pub weights: &'a FixedWeights,
    pub pool: &'a rayon::ThreadPool,
    pub eval_mode: EvalMode,
    pub eval_draws: usize,
}

/// One federated training method with its global state.
pub trait Method: Send {
    /// Registry name this instance was built under.
    fn name(&self) -> &'static str;

    /// Regularizer weight in effect (0 for the unregularized methods).
    fn lambda(&self) -> f64;

    /// Completed rounds so far.
    fn round(&self) -> u64;

    /// Snapshot of the global parameter vector (the probability mask for
    /// mask methods, the weights for sign methods); used for checkpoints
    /// and history hashes.
    fn global_values(&self) -> Vec<f64>;

    /// Restore state from a checkpoint snapshot.
    fn restore(&mut self, round: u64, values: Vec<f64>) -> Result<()>;

    /// Run one communication round: local updates on the selected clients,
    /// aggregation, evaluation. Returns the round's metrics and the uplink
    /// payloads (for optional dumping).
    fn run_round(&mut self, ctx: &RoundContext) -> Result<(RoundMetrics, Vec<UplinkMessage>)>;
}

type Builder = fn(&ExperimentConfig, &FixedWeights) -> Result<Box<dyn Method>>;

/// Name -> constructor table. Adding a method means implementing [`Method`]
/// and registering it here.
const REGISTRY: &[(&str, Builder)] = &[
    ("regularized", stochastic::build_regularized),
    ("fedpm", stochastic::build_fedpm),
    ("topk", topk::build),
    ("mv_signsgd", signsgd::build),
];

/// Build the method registered under `name`.
pub fn build(
    name: &str,
    cfg: &ExperimentConfig,
    weights: &FixedWeights,
) -> Result<Box<dyn Method>> {
    for (key, builder) in REGISTRY {
        if *key == name {
            return builder(cfg, weights);
        }
    }
    Err(Error::Config(format!(
        "unknown method '{name}', expected one of: {}",
        method_names().join(", ")
    )))
}

/// Names of all registered methods, in registration order.
pub fn method_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(name, _)| *name).collect()
}

/// Shared round driver for methods whose uplink is a binary mask aggregated
/// into a probability mask. `client_fn` runs one client's local pass.
pub(crate) fn mask_method_round<F>(
    server: &mut ServerState,
    cfg: &RoundConfig,
    ctx: &RoundContext,
    client_fn: F,
) -> Result<(RoundMetrics, Vec<UplinkMessage>)>
where
    F: Fn(&ClientState, &crate::mask::ProbabilityMask, &mut ChaCha8Rng) -> Result<UplinkMessage>
        + Sync,
{
    use rayon::prelude::*;

    let round = server.round;
    let seed = server.seed;
    let participants = select_participants(seed, round, ctx.clients.len(), cfg.participation);
    let theta_down = &server.theta;
    let uplinks: Vec<UplinkMessage> = ctx.pool.install(|| {
        participants
            .par_iter()
            .map(|&cid| {
                let mut rng = stream(
                    seed,
                    StreamId::ClientRound {
                        client: cid as u64,
                        round,
                    },
                );
                client_fn(&ctx.clients[cid], theta_down, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let theta_next = server_aggregate(&uplinks)?;
    let mut eval_rng = stream(seed, StreamId::Evaluation { round });
    let accuracy = crate::metrics::evaluate_sets(
        &theta_next,
        ctx.weights,
        ctx.dataset,
        ctx.eval,
        ctx.eval_mode,
        &mut eval_rng,
        ctx.eval_draws,
    )?;
    let (bpp_per_client, bpp_avg) = round_bpp(&uplinks);
    let mask_density_avg =
        uplinks.iter().map(|u| u.mask.density()).sum::<f64>() / uplinks.len() as f64;
    let metrics = RoundMetrics {
        round: round + 1,
        accuracy,
        participants,
        bpp_per_client,
        bpp_avg,
        mask_density_avg,
        theta_mean: theta_next.mean(),
    };
    server.theta = theta_next;
    server.round = round + 1;
    Ok((metrics, uplinks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        generate_synthetic, partition_with_validation, PartitionMode, PartitionSpec,
    };
    use crate::tensor::build_network;

    #[test]
    fn registry_lists_all_methods() {
        assert_eq!(
            method_names(),
            vec!["regularized", "fedpm", "topk", "mv_signsgd"]
        );
    }

    #[test]
    fn unknown_method_rejected_by_registry() {
        let names = method_names();
        assert!(!names.contains(&"magic"));
    }

    struct Fixture {
        dataset: Dataset,
        clients: Vec<ClientState>,
        eval: EvalSets,
        weights: FixedWeights,
        pool: rayon::ThreadPool,
    }

    fn fixture(client_count: usize, seed: u64) -> Fixture {
        let dataset = generate_synthetic(3, 6, 40 * client_count, 0.1, seed).unwrap();
        let spec = PartitionSpec {
            mode: PartitionMode::Iid,
            client_count,
            seed,
        };
        let (partition, eval) = partition_with_validation(&dataset, &spec).unwrap();
        let clients: Vec<ClientState> = partition
            .clients()
            .iter()
            .enumerate()
            .map(|(client_id, indices)| ClientState {
                client_id,
                indices: indices.clone(),
            })
            .collect();
        let topology = crate::tensor::NetworkTopology::new(
            vec![6],
            vec![
                crate::tensor::LayerSpec::Dense {
                    input: 6,
                    output: 8,
                },
                crate::tensor::LayerSpec::Relu,
                crate::tensor::LayerSpec::Dense {
                    input: 8,
                    output: 3,
                },
            ],
        )
        .unwrap();
        let weights = build_network(seed, &topology).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap();
        Fixture {
            dataset,
            clients,
            eval,
            weights,
            pool,
        }
    }

    fn config_for(seed: u64, output: &std::path::Path) -> crate::config::ExperimentConfig {
        crate::config::ExperimentConfig::parse_str(&format!(
            "\
method = fedpm
seed = {seed}
rounds = 1
output = {}
dataset.kind = synthetic
dataset.classes = 3
dataset.dims = 6
dataset.per_class = 40
partition.mode = iid
partition.clients = 3
topology.input = 6
topology.layers = dense:6:8, relu, dense:8:3
eta = 5
",
            output.display()
        ))
        .unwrap()
    }

    #[test]
    fn full_participation_collects_every_client() {
        let f = fixture(10, 3);
        let dir = tempfile::tempdir().unwrap();
        let cfg = config_for(3, dir.path());
        let mut method = build("fedpm", &cfg, &f.weights).unwrap();
        let ctx = RoundContext {
            dataset: &f.dataset,
            clients: &f.clients,
            eval: &f.eval,
            weights: &f.weights,
            pool: &f.pool,
            eval_mode: EvalMode::Sampled,
            eval_draws: 1,
        };
        let (metrics, uplinks) = method.run_round(&ctx).unwrap();
        assert_eq!(uplinks.len(), 10);
        assert_eq!(metrics.participants, (0..10).collect::<Vec<_>>());
        assert_eq!(metrics.bpp_per_client.len(), 10);
        assert_eq!(metrics.round, 1);
        assert_eq!(method.round(), 1);
    }

    #[test]
    fn single_client_aggregation_is_identity() {
        let f = fixture(1, 5);
        let dir = tempfile::tempdir().unwrap();
        let cfg = config_for(5, dir.path());
        let mut method = build("fedpm", &cfg, &f.weights).unwrap();
        let ctx = RoundContext {
            dataset: &f.dataset,
            clients: &f.clients,
            eval: &f.eval,
            weights: &f.weights,
            pool: &f.pool,
            eval_mode: EvalMode::Expected,
            eval_draws: 1,
        };
        let (_, uplinks) = method.run_round(&ctx).unwrap();
        assert_eq!(uplinks.len(), 1);
        let theta = method.global_values();
        for (v, bit) in theta.iter().zip(uplinks[0].mask.iter()) {
            assert_eq!(*v, if bit { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn identical_seeds_give_identical_rounds() {
        let run = || {
            let f = fixture(4, 11);
            let dir = tempfile::tempdir().unwrap();
            let cfg = config_for(11, dir.path());
            let mut method = build("fedpm", &cfg, &f.weights).unwrap();
            let ctx = RoundContext {
                dataset: &f.dataset,
                clients: &f.clients,
                eval: &f.eval,
                weights: &f.weights,
                pool: &f.pool,
                eval_mode: EvalMode::Sampled,
                eval_draws: 1,
            };
            let (metrics, _) = method.run_round(&ctx).unwrap();
            (method.global_values(), metrics.accuracy, metrics.bpp_avg)
        };
        let (theta_a, acc_a, bpp_a) = run();
        let (theta_b, acc_b, bpp_b) = run();
        assert_eq!(theta_a, theta_b);
        assert_eq!(acc_a, acc_b);
        assert_eq!(bpp_a, bpp_b);
    }
}
