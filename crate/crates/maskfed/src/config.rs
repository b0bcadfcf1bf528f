//! Experiment configuration: a flat `key = value` text format with `#`
//! comments and dotted keys for nested settings.
//!
//! Parsing is strict: unknown or inapplicable keys are errors (misspelled
//! keys must never silently fall back to defaults), duplicates are errors,
//! and cross-field rules (method-specific keys, partition arguments) are
//! checked up front.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{self, Dataset, PartitionMode};
use crate::metrics::EvalMode;
use crate::protocol::RoundConfig;
use crate::tensor::{LayerSpec, NetworkTopology};
use crate::{Error, Result};

/// Which dataset an experiment trains on.
#[derive(Debug, Clone)]
pub enum DatasetConfig {
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
    Cifar10 {
        paths: Vec<PathBuf>,
        limit: Option<usize>,
    },
    Synthetic {
        classes: usize,
        dims: usize,
        per_class: usize,
        noise: f64,
    },
}

/// A shipped architecture id or an inline layer list.
#[derive(Debug, Clone)]
pub enum TopologySource {
    Id(String),
    Inline {
        input: Vec<usize>,
        layers: Vec<LayerSpec>,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: String,
    pub seed: u64,
    pub rounds: u64,
    pub output: PathBuf,
    pub workers: usize,
    pub dataset: DatasetConfig,
    pub partition_mode: PartitionMode,
    pub clients: usize,
    pub topology: TopologySource,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub lambda: f64,
    pub participation: f64,
    pub k_fraction: Option<f64>,
    pub eta_server: Option<f64>,
    pub eval_mode: EvalMode,
    pub eval_draws: usize,
    pub dump_masks: bool,
    source: String,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path.display().to_string()))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut map = KeyMap::parse(text)?;

        let method = map.require("method")?.to_string();
        if !crate::method::method_names().contains(&method.as_str()) {
            return Err(Error::Config(format!(
                "unknown method '{method}', expected one of: {}",
                crate::method::method_names().join(", ")
            )));
        }

        let seed = map.require_parse::<u64>("seed")?;
        let rounds = map.require_parse::<u64>("rounds")?;
        let output = PathBuf::from(map.require("output")?);
        let workers = map.parse_or("workers", 1usize)?;
        if workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }

        let dataset = parse_dataset(&mut map)?;
        let partition_mode = match map.require("partition.mode")?.as_str() {
            "iid" => PartitionMode::Iid,
            "label_limited" => PartitionMode::LabelLimited {
                classes_per_client: map.require_parse::<usize>("partition.c")?,
            },
            other => {
                return Err(Error::Config(format!(
                    "partition.mode '{other}' is not 'iid' or 'label_limited'"
                )))
            }
        };
        let clients = map.require_parse::<usize>("partition.clients")?;
        if clients == 0 {
            return Err(Error::Config("partition.clients must be at least 1".into()));
        }

        let topology = parse_topology(&mut map)?;

        let local_epochs = map.parse_or("local_epochs", 3usize)?;
        let batch_size = map.parse_or("batch_size", 128usize)?;
        if local_epochs == 0 || batch_size == 0 {
            return Err(Error::Config(
                "local_epochs and batch_size must be at least 1".into(),
            ));
        }
        let eta = map.require_parse::<f64>("eta")?;
        if !(eta > 0.0) {
            return Err(Error::Config(format!("eta {eta} must be positive")));
        }
        let lambda = map.parse_or("lambda", 0.0f64)?;
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {lambda} must be >= 0")));
        }
        let participation = map.parse_or("participation", 1.0f64)?;
        if !(participation > 0.0 && participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation {participation} outside (0, 1]"
            )));
        }

        // Method-specific keys are taken only for their method, so stray
        // ones surface in the leftover check below.
        let mut k_fraction = None;
        let mut eta_server = None;
        match method.as_str() {
            "regularized" => {}
            "fedpm" => {
                if lambda != 0.0 {
                    return Err(Error::Config(format!(
                        "fedpm runs with lambda = 0 (got {lambda}); use method = regularized"
                    )));
                }
            }
            "topk" => {
                if lambda != 0.0 {
                    return Err(Error::Config("topk does not use lambda".into()));
                }
                let k = map.require_parse::<f64>("topk.k_fraction")?;
                if !(k > 0.0 && k <= 1.0) {
                    return Err(Error::Config(format!("topk.k_fraction {k} outside (0, 1]")));
                }
                k_fraction = Some(k);
            }
            "mv_signsgd" => {
                if lambda != 0.0 {
                    return Err(Error::Config("mv_signsgd does not use lambda".into()));
                }
                let e = map.require_parse::<f64>("eta_server")?;
                if !(e > 0.0) {
                    return Err(Error::Config(format!("eta_server {e} must be positive")));
                }
                eta_server = Some(e);
            }
            _ => unreachable!("validated against the registry"),
        }

        let eval_mode = match map.take("eval_mode") {
            None => EvalMode::Sampled,
            Some(v) => match v.as_str() {
                "sampled" => EvalMode::Sampled,
                "expected" => EvalMode::Expected,
                "thresholded" => EvalMode::Thresholded,
                other => {
                    return Err(Error::Config(format!(
                        "eval_mode '{other}' is not sampled, expected or thresholded"
                    )))
                }
            },
        };
        let eval_draws = map.parse_or("eval_draws", 1usize)?;
        if eval_draws == 0 {
            return Err(Error::Config("eval_draws must be at least 1".into()));
        }
        let dump_masks = map.parse_or("dump_masks", false)?;

        map.finish()?;

        let cfg = ExperimentConfig {
            method,
            seed,
            rounds,
            output,
            workers,
            dataset,
            partition_mode,
            clients,
            topology,
            local_epochs,
            batch_size,
            eta,
            lambda,
            participation,
            k_fraction,
            eta_server,
            eval_mode,
            eval_draws,
            dump_masks,
            source: text.to_string(),
        };
        // Surface non-composing architectures at validation time.
        cfg.build_topology()?;
        Ok(cfg)
    }

    /// The config text this was parsed from (embedded in checkpoints).
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Replace the seed (the `--seed` CLI flag).
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn build_topology(&self) -> Result<NetworkTopology> {
        match &self.topology {
            TopologySource::Id(id) => NetworkTopology::by_id(id).ok_or_else(|| {
                Error::Config(format!(
                    "unknown topology id '{id}', expected mlp-s or conv-s (or an inline spec)"
                ))
            }),
            TopologySource::Inline { input, layers } => {
                NetworkTopology::new(input.clone(), layers.clone())
            }
        }
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Mnist {
                images,
                labels,
                limit,
            } => {
                let mut ds = data::load_idx(images, labels)?;
                if let Some(limit) = limit {
                    ds.truncate(*limit);
                }
                Ok(ds)
            }
            DatasetConfig::Cifar10 { paths, limit } => {
                let mut ds = data::load_cifar10(paths)?;
                if let Some(limit) = limit {
                    ds.truncate(*limit);
                }
                Ok(ds)
            }
            DatasetConfig::Synthetic {
                classes,
                dims,
                per_class,
                noise,
            } => data::generate_synthetic(*classes, *dims, *per_class, *noise, self.seed),
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            eta: self.eta,
            lambda: self.lambda,
            participation: self.participation,
        }
    }
}

fn parse_dataset(map: &mut KeyMap) -> Result<DatasetConfig> {
    match map.require("dataset.kind")?.as_str() {
        "mnist" => Ok(DatasetConfig::Mnist {
            images: PathBuf::from(map.require("dataset.images")?),
            labels: PathBuf::from(map.require("dataset.labels")?),
            limit: map.parse_opt::<usize>("dataset.limit")?,
        }),
        "cifar10" => {
            let paths: Vec<PathBuf> = map
                .require("dataset.path")?
                .split(',')
                .map(|p| PathBuf::from(p.trim()))
                .collect();
            Ok(DatasetConfig::Cifar10 {
                paths,
                limit: map.parse_opt::<usize>("dataset.limit")?,
            })
        }
        "synthetic" => {
            let classes = map.require_parse::<usize>("dataset.classes")?;
            let dims = map.require_parse::<usize>("dataset.dims")?;
            let per_class = map.require_parse::<usize>("dataset.per_class")?;
            let noise = map.parse_or("dataset.noise", 0.05f64)?;
            if classes == 0 || dims == 0 || per_class == 0 {
                return Err(Error::Config(
                    "dataset.classes, dataset.dims and dataset.per_class must be positive".into(),
                ));
            }
            if !(noise >= 0.0) {
                return Err(Error::Config(format!("dataset.noise {noise} must be >= 0")));
            }
            Ok(DatasetConfig::Synthetic {
                classes,
                dims,
                per_class,
                noise,
            })
        }
        other => Err(Error::Config(format!(
            "dataset.kind '{other}' is not mnist, cifar10 or synthetic"
        ))),
    }
}

fn parse_topology(map: &mut KeyMap) -> Result<TopologySource> {
    let id = map.take("topology.id");
    let input = map.take("topology.input");
    let layers = map.take("topology.layers");
    match (id, input, layers) {
        (Some(id), None, None) => Ok(TopologySource::Id(id)),
        (None, Some(input), Some(layers)) => Ok(TopologySource::Inline {
            input: parse_shape(&input)?,
            layers: parse_layers(&layers)?,
        }),
        (None, None, None) => Err(Error::Config(
            "missing topology: set topology.id or topology.input + topology.layers".into(),
        )),
        _ => Err(Error::Config(
            "set either topology.id or both topology.input and topology.layers".into(),
        )),
    }
}

/// `1x28x28` or a single dimension like `64`.
fn parse_shape(text: &str) -> Result<Vec<usize>> {
    text.split('x')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad dimension '{d}' in shape '{text}'")))
        })
        .collect()
}

/// Comma-separated layer tokens: `flatten`, `relu`, `dense:IN:OUT`,
/// `conv:IN_CH:OUT_CH:KERNEL:STRIDE:PAD`, `maxpool:WINDOW`.
fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(',').map(|tok| parse_layer(tok.trim())).collect()
}

fn parse_layer(tok: &str) -> Result<LayerSpec> {
    let parts: Vec<&str> = tok.split(':').collect();
    let num = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad number '{s}' in layer '{tok}'")))
    };
    match parts.as_slice() {
        ["flatten"] => Ok(LayerSpec::Flatten),
        ["relu"] => Ok(LayerSpec::Relu),
        ["dense", i, o] => Ok(LayerSpec::Dense {
            input: num(i)?,
            output: num(o)?,
        }),
        ["conv", ic, oc, k, s, p] => Ok(LayerSpec::Conv2d {
            in_channels: num(ic)?,
            out_channels: num(oc)?,
            kernel: num(k)?,
            stride: num(s)?,
            padding: num(p)?,
        }),
        ["maxpool", w] => Ok(LayerSpec::MaxPool2d { window: num(w)? }),
        _ => Err(Error::Config(format!(
            "unknown layer '{tok}' (expected flatten, relu, dense:IN:OUT, \
             conv:IN:OUT:K:S:P or maxpool:W)"
        ))),
    }
}

/// Key/value lines with taken-key tracking; leftovers are reported as
/// unknown or inapplicable.
struct KeyMap {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", idx + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", idx + 1)));
            }
            if let Some((_, first)) = entries.insert(key.clone(), (value, idx + 1)) {
                return Err(Error::Config(format!(
                    "duplicate key '{key}' (lines {} and {})",
                    first,
                    idx + 1
                )));
            }
        }
        Ok(KeyMap { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn require_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse::<T>()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'"))),
        }
    }

    fn parse_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let mut names: Vec<String> = self
            .entries
            .iter()
            .map(|(k, (_, line))| format!("'{k}' (line {line})"))
            .collect();
        names.sort();
        Err(Error::Config(format!(
            "unknown or inapplicable config keys: {}",
            names.join(", ")
        )))
    }
}
