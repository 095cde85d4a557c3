use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use caafp_core::data::{ScenarioKind, ScenarioSpec, SynthConfig};
use caafp_core::federation::{DatasetKind, ExperimentConfig, Method, Phases, PruningConfig};
use caafp_core::ScoreWeights;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::args::{ConfigArgs, Preset};
use crate::UsageError;

pub fn preset(p: Preset) -> ExperimentConfig {
    let main = ExperimentConfig {
        method: Method::Caafp,
        phases: Phases {
            p1: 0,
            p2: 0,
            p3: 50,
            p4: 3,
        },
        ..ExperimentConfig::default()
    };
    match p {
        Preset::UciharReference => {
            let mut c = main;
            c.dataset.kind = DatasetKind::Ucihar;
            c.weights = ScoreWeights {
                alpha: 0.5,
                beta: 0.25,
                gamma: 0.25,
            };
            c
        }
        Preset::WisdmReference => {
            let mut c = main;
            c.dataset.kind = DatasetKind::Wisdm;
            c.phases.p4 = 25;
            c.weights = ScoreWeights {
                alpha: 0.25,
                beta: 0.25,
                gamma: 0.5,
            };
            c
        }
        Preset::ScoreAblation => ExperimentConfig {
            phases: Phases {
                p1: 0,
                p2: 0,
                p3: 15,
                p4: 0,
            },
            local_epochs: 1,
            pruning: PruningConfig {
                start_sparsity: 0.3,
                target_sparsity: 0.7,
                frequency: 5,
                churn: 0.05,
            },
            ..main
        },
        Preset::Desk => ExperimentConfig {
            phases: Phases {
                p1: 2,
                p2: 2,
                p3: 10,
                p4: 2,
            },
            local_epochs: 1,
            batch_size: 16,
            learning_rate: 5e-3,
            model: caafp_core::federation::ModelConfig {
                filters: 8,
                dense_units: 16,
            },
            dataset: caafp_core::federation::DatasetConfig {
                synth: SynthConfig {
                    samples_per_client: 40,
                    window: 24,
                    channels: 3,
                    noise: 0.1,
                    ..SynthConfig::default()
                },
                ..Default::default()
            },
            pruning: PruningConfig {
                frequency: 2,
                ..PruningConfig::default()
            },
            ..main
        },
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    s.parse::<Method>()
        .map_err(|e| UsageError(e.to_string()).into())
}

pub fn parse_dataset(s: &str) -> Result<DatasetKind> {
    [
        DatasetKind::Synth,
        DatasetKind::Wisdm,
        DatasetKind::Ucihar,
        DatasetKind::Population,
    ]
    .into_iter()
    .find(|k| k.name() == s)
    .ok_or_else(|| UsageError(format!("unknown dataset {s:?}")).into())
}

/// Parses `standard`, `noisy-clients`, `drift` or `non-iid-<k>`, keeping the
/// scenario seed of `base`.
pub fn parse_scenario(s: &str, base: &ScenarioSpec) -> Result<ScenarioSpec> {
    let seed = base.seed;
    let spec = match s {
        "standard" => ScenarioSpec {
            kind: ScenarioKind::Standard,
            seed,
            ..ScenarioSpec::default()
        },
        "noisy-clients" => ScenarioSpec::noisy_clients(seed),
        "drift" => ScenarioSpec::drift(seed),
        _ => match s.strip_prefix("non-iid-").map(str::parse::<usize>) {
            Some(Ok(k)) => ScenarioSpec::non_iid(k, seed),
            _ => return Err(UsageError(format!("unknown scenario {s:?}")).into()),
        },
    };
    Ok(spec)
}

pub fn parse_phases(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match parsed.as_deref() {
        Some(&[p1, p2, p3]) => Ok((p1, p2, p3)),
        _ => Err(UsageError(format!("phases must look like P1:P2:P3, got {s:?}")).into()),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn to_table(config: &ExperimentConfig) -> Result<Table> {
    Ok(Table::try_from(config)?)
}

fn from_table(table: Table) -> Result<ExperimentConfig> {
    table
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {e}")).into())
}

/// Parses the value of `--set key=value` as a TOML literal, falling back to a
/// bare string.
fn parse_value(text: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

pub fn apply_set(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one item");
    let mut cur = table;
    for p in parents {
        cur = match cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
        {
            Value::Table(t) => t,
            _ => bail!(UsageError(format!("{key}: {p} is not a table"))),
        };
    }
    cur.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

fn apply_flags(c: &mut ExperimentConfig, a: &ConfigArgs) -> Result<()> {
    if let Some(m) = &a.method {
        c.method = parse_method(m)?;
    }
    if let Some(l) = &a.label {
        c.label = Some(l.clone());
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(d) = &a.dataset {
        c.dataset.kind = parse_dataset(d)?;
    }
    if let Some(p) = &a.data_path {
        c.dataset.path = Some(p.clone());
    }
    if let Some(s) = &a.scenario {
        c.scenario = parse_scenario(s, &c.scenario)?;
    }
    let set = |dst: &mut usize, src: Option<usize>| {
        if let Some(v) = src {
            *dst = v;
        }
    };
    set(&mut c.phases.p1, a.p1);
    set(&mut c.phases.p2, a.p2);
    set(&mut c.phases.p3, a.p3);
    set(&mut c.phases.p4, a.p4);
    set(&mut c.local_epochs, a.epochs);
    set(&mut c.batch_size, a.batch_size);
    set(&mut c.clusters, a.clusters);
    set(&mut c.clients_per_round, a.clients_per_round);
    set(&mut c.pruning.frequency, a.frequency);
    set(&mut c.eval_every, a.eval_every);
    let setf = |dst: &mut f64, src: Option<f64>| {
        if let Some(v) = src {
            *dst = v;
        }
    };
    setf(&mut c.learning_rate, a.lr);
    setf(&mut c.lambda, a.lambda);
    setf(&mut c.pruning.start_sparsity, a.start_sparsity);
    setf(&mut c.pruning.target_sparsity, a.target_sparsity);
    setf(&mut c.pruning.churn, a.churn);
    if let Some(w) = &a.weights {
        c.weights = ScoreWeights {
            alpha: w[0],
            beta: w[1],
            gamma: w[2],
        };
    }
    if a.count_mask_bitmap {
        c.count_mask_bitmap = true;
    }
    Ok(())
}

/// Preset, then config file, then flags, then `--set` assignments.
pub fn resolve(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut table = to_table(&a.preset.map(preset).unwrap_or_default())?;
    if let Some(path) = &a.config {
        table = merge_file(table, path)?;
    }
    let mut config = from_table(table)?;
    apply_flags(&mut config, a)?;
    if !a.sets.is_empty() {
        let mut table = to_table(&config)?;
        for s in &a.sets {
            apply_set(&mut table, s)?;
        }
        config = from_table(table)?;
    }
    config.validate()?;
    Ok(config)
}

fn merge_file(mut table: Table, path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: Table = toml::from_str(&text)
        .map_err(|e| anyhow!(UsageError(format!("{}: {e}", path.display()))))?;
    merge(&mut table, file);
    Ok(table)
}

/// Short stable digest of the resolved configuration.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let text = config.to_toml()?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}
