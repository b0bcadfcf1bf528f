//! Splitting a dataset across simulated clients, IID or label-limited.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::rng::{stream, StreamId};
use crate::{Error, Result};

/// Fraction of examples held out for validation by
/// [`partition_with_validation`]: globally for IID, per client otherwise.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Shuffle, then split into near-equal shards.
    Iid,
    /// Each client holds examples of only `classes_per_client` randomly
    /// assigned classes.
    LabelLimited { classes_per_client: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub client_count: usize,
    pub seed: u64,
}

/// Per-client index lists into the parent dataset. Index sets are disjoint
/// across clients and no client is empty.
#[derive(Debug, Clone)]
pub struct Partition {
    client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn client_count(&self) -> usize {
        self.client_indices.len()
    }

    pub fn client(&self, i: usize) -> &[usize] {
        &self.client_indices[i]
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.client_indices
    }
}

/// Validation examples carved out of the training data.
#[derive(Debug, Clone)]
pub enum EvalSets {
    /// One shared holdout (IID partitioning).
    Global(Vec<usize>),
    /// One holdout per client, drawn from that client's label distribution.
    PerClient(Vec<Vec<usize>>),
}

/// Split the whole dataset across clients with no validation carve.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    check_spec(dataset, spec)?;
    let mut rng = stream(spec.seed, StreamId::Partition);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let client_indices = match spec.mode {
        PartitionMode::Iid => iid_split(indices, spec.client_count, &mut rng),
        PartitionMode::LabelLimited { classes_per_client } => label_limited_split(
            dataset,
            &indices,
            spec.client_count,
            classes_per_client,
            &mut rng,
        )?,
    };
    ensure_nonempty(&client_indices)?;
    Ok(Partition { client_indices })
}

/// Split the dataset across clients, holding out [`VALIDATION_FRACTION`] of
/// the examples for evaluation: one global holdout for IID, a per-client
/// holdout matching each client's label distribution otherwise.
pub fn partition_with_validation(
    dataset: &Dataset,
    spec: &PartitionSpec,
) -> Result<(Partition, EvalSets)> {
    check_spec(dataset, spec)?;
    let mut rng = stream(spec.seed, StreamId::Partition);
    match spec.mode {
        PartitionMode::Iid => {
            let mut indices: Vec<usize> = (0..dataset.len()).collect();
            indices.shuffle(&mut rng);
            let eval_count = (dataset.len() as f64 * VALIDATION_FRACTION) as usize;
            let eval = indices[..eval_count].to_vec();
            let train = indices[eval_count..].to_vec();
            let client_indices = chunk_even(train, spec.client_count);
            ensure_nonempty(&client_indices)?;
            Ok((Partition { client_indices }, EvalSets::Global(eval)))
        }
        PartitionMode::LabelLimited { classes_per_client } => {
            let indices: Vec<usize> = (0..dataset.len()).collect();
            let assigned = label_limited_split(
                dataset,
                &indices,
                spec.client_count,
                classes_per_client,
                &mut rng,
            )?;
            let mut train = Vec::with_capacity(assigned.len());
            let mut eval = Vec::with_capacity(assigned.len());
            for mut client in assigned {
                client.shuffle(&mut rng);
                let eval_count = (client.len() as f64 * VALIDATION_FRACTION) as usize;
                eval.push(client[..eval_count].to_vec());
                train.push(client[eval_count..].to_vec());
            }
            ensure_nonempty(&train)?;
            Ok((
                Partition {
                    client_indices: train,
                },
                EvalSets::PerClient(eval),
            ))
        }
    }
}

fn check_spec(dataset: &Dataset, spec: &PartitionSpec) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Partition("cannot partition an empty dataset".into()));
    }
    if spec.client_count == 0 || spec.client_count > dataset.len() {
        return Err(Error::Partition(format!(
            "{} clients cannot share {} examples",
            spec.client_count,
            dataset.len()
        )));
    }
    if let PartitionMode::LabelLimited { classes_per_client } = spec.mode {
        if classes_per_client == 0 || classes_per_client > dataset.class_count() {
            return Err(Error::Partition(format!(
                "{classes_per_client} classes per client outside 1..={}",
                dataset.class_count()
            )));
        }
    }
    Ok(())
}

fn iid_split(mut indices: Vec<usize>, clients: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    indices.shuffle(rng);
    chunk_even(indices, clients)
}

/// Split into `clients` shards whose sizes differ by at most one; the first
/// `len % clients` shards get the extra example.
fn chunk_even(indices: Vec<usize>, clients: usize) -> Vec<Vec<usize>> {
    let base = indices.len() / clients;
    let extra = indices.len() % clients;
    let mut out = Vec::with_capacity(clients);
    let mut cursor = 0;
    for i in 0..clients {
        let take = base + usize::from(i < extra);
        out.push(indices[cursor..cursor + take].to_vec());
        cursor += take;
    }
    out
}

fn label_limited_split(
    dataset: &Dataset,
    indices: &[usize],
    clients: usize,
    classes_per_client: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let class_count = dataset.class_count();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for &i in indices {
        by_class[dataset.label(i)].push(i);
    }

    for _attempt in 0..100 {
        // Each client draws its classes uniformly without replacement.
        let mut all_classes: Vec<usize> = (0..class_count).collect();
        let assignments: Vec<Vec<usize>> = (0..clients)
            .map(|_| {
                all_classes.shuffle(rng);
                all_classes[..classes_per_client].to_vec()
            })
            .collect();

        // Holders of each class, in ascending client order.
        let mut holders: Vec<Vec<usize>> = vec![Vec::new(); class_count];
        for (client, classes) in assignments.iter().enumerate() {
            for &c in classes {
                holders[c].push(client);
            }
        }

        // Split each class evenly among its holders; the remainder goes to
        // the lowest client ids. A class drawn by nobody stays unused.
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); clients];
        for (class, class_holders) in holders.iter().enumerate() {
            if class_holders.is_empty() {
                continue;
            }
            let examples = &by_class[class];
            let base = examples.len() / class_holders.len();
            let extra = examples.len() % class_holders.len();
            let mut cursor = 0;
            for (rank, &client) in class_holders.iter().enumerate() {
                let take = base + usize::from(rank < extra);
                out[client].extend_from_slice(&examples[cursor..cursor + take]);
                cursor += take;
            }
        }

        if out.iter().all(|c| !c.is_empty()) {
            return Ok(out);
        }
    }
    Err(Error::Partition(
        "a client received zero examples in 100 consecutive class assignments".into(),
    ))
}

fn ensure_nonempty(clients: &[Vec<usize>]) -> Result<()> {
    if let Some(empty) = clients.iter().position(|c| c.is_empty()) {
        return Err(Error::Partition(format!("client {empty} has no examples")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use std::collections::BTreeSet;

    fn dataset(examples: usize, classes: usize) -> Dataset {
        let labels: Vec<usize> = (0..examples).map(|i| i % classes).collect();
        Dataset::new(vec![0.5; examples * 2], vec![2], labels, classes).unwrap()
    }

    #[test]
    fn iid_exact_shards() {
        let ds = dataset(1000, 10);
        let p = partition(
            &ds,
            &PartitionSpec {
                mode: PartitionMode::Iid,
                client_count: 10,
                seed: 1,
            },
        )
        .unwrap();
        for c in p.clients() {
            assert_eq!(c.len(), 100);
        }
    }

    #[test]
    fn iid_shard_sizes_differ_by_at_most_one() {
        let ds = dataset(103, 10);
        let p = partition(
            &ds,
            &PartitionSpec {
                mode: PartitionMode::Iid,
                client_count: 10,
                seed: 1,
            },
        )
        .unwrap();
        let sizes: Vec<usize> = p.clients().iter().map(Vec::len).collect();
        let max = sizes.iter().max().unwrap();
        let min = sizes.iter().min().unwrap();
        assert!(max - min <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 103);
    }

    #[test]
    fn partitions_are_exact_set_partitions() {
        let ds = dataset(517, 7);
        for mode in [
            PartitionMode::Iid,
            PartitionMode::LabelLimited {
                classes_per_client: 3,
            },
        ] {
            let p = partition(
                &ds,
                &PartitionSpec {
                    mode,
                    client_count: 9,
                    seed: 3,
                },
            )
            .unwrap();
            let mut seen = BTreeSet::new();
            for c in p.clients() {
                for &i in c {
                    assert!(seen.insert(i), "index {i} assigned twice");
                }
            }
            if mode == PartitionMode::Iid {
                assert_eq!(seen.len(), 517);
            }
        }
    }

    #[test]
    fn label_limited_distinct_label_count() {
        let ds = dataset(3000, 10);
        let p = partition(
            &ds,
            &PartitionSpec {
                mode: PartitionMode::LabelLimited {
                    classes_per_client: 2,
                },
                client_count: 30,
                seed: 11,
            },
        )
        .unwrap();
        for c in p.clients() {
            let labels: BTreeSet<usize> = c.iter().map(|&i| ds.label(i)).collect();
            assert_eq!(labels.len(), 2);
        }
    }

    #[test]
    fn label_limited_full_class_set_degenerates_toward_iid() {
        let ds = dataset(200, 4);
        let p = partition(
            &ds,
            &PartitionSpec {
                mode: PartitionMode::LabelLimited {
                    classes_per_client: 4,
                },
                client_count: 5,
                seed: 2,
            },
        )
        .unwrap();
        // Every client drew all classes, so every client holds all labels.
        for c in p.clients() {
            let labels: BTreeSet<usize> = c.iter().map(|&i| ds.label(i)).collect();
            assert_eq!(labels.len(), 4);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let ds = dataset(500, 10);
        let spec = PartitionSpec {
            mode: PartitionMode::LabelLimited {
                classes_per_client: 2,
            },
            client_count: 10,
            seed: 9,
        };
        let a = partition(&ds, &spec).unwrap();
        let b = partition(&ds, &spec).unwrap();
        assert_eq!(a.clients(), b.clients());
    }

    #[test]
    fn validation_carve_iid() {
        let ds = generate_synthetic(10, 8, 100, 0.1, 5).unwrap();
        let (p, eval) = partition_with_validation(
            &ds,
            &PartitionSpec {
                mode: PartitionMode::Iid,
                client_count: 10,
                seed: 5,
            },
        )
        .unwrap();
        let eval = match eval {
            EvalSets::Global(e) => e,
            _ => panic!("iid carve is global"),
        };
        assert_eq!(eval.len(), 100);
        let train_total: usize = p.clients().iter().map(Vec::len).sum();
        assert_eq!(train_total, 900);
        let eval_set: BTreeSet<usize> = eval.iter().copied().collect();
        for c in p.clients() {
            assert!(c.iter().all(|i| !eval_set.contains(i)));
        }
    }

    #[test]
    fn validation_carve_per_client_keeps_label_sets() {
        let ds = dataset(3000, 10);
        let (p, eval) = partition_with_validation(
            &ds,
            &PartitionSpec {
                mode: PartitionMode::LabelLimited {
                    classes_per_client: 2,
                },
                client_count: 10,
                seed: 5,
            },
        )
        .unwrap();
        let eval = match eval {
            EvalSets::PerClient(e) => e,
            _ => panic!("label-limited carve is per client"),
        };
        assert_eq!(eval.len(), p.client_count());
        for (train, ev) in p.clients().iter().zip(&eval) {
            assert!(!ev.is_empty());
            let train_labels: BTreeSet<usize> = train.iter().map(|&i| ds.label(i)).collect();
            let eval_labels: BTreeSet<usize> = ev.iter().map(|&i| ds.label(i)).collect();
            assert!(eval_labels.is_subset(&train_labels));
        }
    }

    #[test]
    fn too_many_clients_rejected() {
        let ds = dataset(5, 5);
        assert!(partition(
            &ds,
            &PartitionSpec {
                mode: PartitionMode::Iid,
                client_count: 6,
                seed: 0,
            },
        )
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn iid_partition_is_exact_and_balanced(
            examples in 20usize..400,
            clients in 1usize..12,
            seed in proptest::num::u64::ANY,
        ) {
            proptest::prop_assume!(clients <= examples);
            let ds = dataset(examples, 5);
            let p = partition(
                &ds,
                &PartitionSpec {
                    mode: PartitionMode::Iid,
                    client_count: clients,
                    seed,
                },
            )
            .unwrap();
            let mut all: Vec<usize> = p.clients().iter().flatten().copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..examples).collect::<Vec<_>>());
            let sizes: Vec<usize> = p.clients().iter().map(Vec::len).collect();
            let max = sizes.iter().max().unwrap();
            let min = sizes.iter().min().unwrap();
            proptest::prop_assert!(max - min <= 1);
        }

        #[test]
        fn label_limited_partition_is_disjoint_with_c_labels(
            clients in 2usize..12,
            c in 1usize..5,
            seed in proptest::num::u64::ANY,
        ) {
            let ds = dataset(600, 5);
            proptest::prop_assume!(c <= 5);
            let p = partition(
                &ds,
                &PartitionSpec {
                    mode: PartitionMode::LabelLimited { classes_per_client: c },
                    client_count: clients,
                    seed,
                },
            )
            .unwrap();
            let mut seen = BTreeSet::new();
            for client in p.clients() {
                let labels: BTreeSet<usize> = client.iter().map(|&i| ds.label(i)).collect();
                proptest::prop_assert_eq!(labels.len(), c);
                for &i in client {
                    proptest::prop_assert!(seen.insert(i));
                }
            }
        }
    }
}
