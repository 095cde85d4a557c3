use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use caafp_core::data::{
    heterogeneity_report, load_population, load_ucihar, load_wisdm, synth_population,
    ClientDataset, WISDM_ACTIVITIES,
};
use caafp_core::federation::{
    load_checkpoint, prepare_data, save_checkpoint, DatasetKind, Event, Experiment,
    ExperimentConfig, ExperimentResult, PreparedData,
};
use caafp_core::metrics::{read_rows, report, write_rows, ResultRow, RoundMetrics};
use caafp_core::nn::ArchitectureSpec;
use caafp_core::oracle::run_oracles;
use caafp_core::pruning::PruneStepLog;
use caafp_core::{ScenarioSpec, ScoreWeights};
use serde::Serialize;

use crate::args::{
    OracleArgs, ReportArgs, ReportFormat, RunArgs, SweepArgs, ValidateArgs, WeightsGrid,
};
use crate::resolve::{
    config_hash, parse_dataset, parse_method, parse_phases, parse_scenario, resolve,
};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    runs: Vec<RunManifest>,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    method: String,
    dataset: String,
    scenario: String,
    seed: u64,
    config_hash: String,
    config: ExperimentConfig,
    arch: ArchitectureSpec,
    params_total: usize,
    params_prunable: usize,
    client_ids: Vec<usize>,
    affected_clients: Vec<usize>,
    /// Member client ids per cluster.
    clusters: Option<Vec<Vec<usize>>>,
    prune_steps: Vec<PruneStepLog>,
    #[serde(rename = "final")]
    final_metrics: RoundMetrics,
}

fn run_manifest(
    config: &ExperimentConfig,
    data: &PreparedData,
    result: &ExperimentResult,
) -> Result<RunManifest> {
    let layout = data.arch.layout()?;
    let ids = &result.client_ids;
    Ok(RunManifest {
        method: config.method_label(),
        dataset: config.dataset.kind.name().to_string(),
        scenario: config.scenario.to_string(),
        seed: config.seed,
        config_hash: config_hash(config)?,
        config: config.clone(),
        arch: data.arch.clone(),
        params_total: layout.total(),
        params_prunable: layout.prunable_len(),
        client_ids: ids.clone(),
        affected_clients: data.affected.iter().map(|&k| data.clients[k].id).collect(),
        clusters: result.assignment.as_ref().map(|a| {
            a.all_members()
                .iter()
                .map(|m| m.iter().map(|&k| ids[k]).collect())
                .collect()
        }),
        prune_steps: result.prune_log.clone(),
        final_metrics: result.final_metrics().clone(),
    })
}

fn write_outputs(dir: &Path, files: &[(&str, &[ResultRow])], manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, rows) in files {
        let path = dir.join(name);
        let file =
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_rows(file, rows)?;
    }
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn log_event(label: &str, event: Event) {
    match event {
        Event::Round(m) => match (m.mu, m.sigma) {
            (Some(mu), Some(sigma)) => log::info!(
                "{label} round {}: mu {mu:.4} sigma {sigma:.4} sparsity {:.3} comm {:.2} MB",
                m.round,
                m.sparsity,
                m.total_mb
            ),
            _ => log::info!("{label} round {}: comm {:.2} MB", m.round, m.total_mb),
        },
        Event::Clustered(a) => log::info!("{label} clustered into {:?}", a.all_members()),
        Event::MaskUpdated(l) => log::debug!(
            "{label} round {} cluster {}: sparsity {:.3} -> {:.3} (prune {}, grow {})",
            l.round,
            l.cluster,
            l.sparsity_before,
            l.sparsity_after,
            l.n_prune,
            l.n_grow
        ),
        Event::Finished(m) => log::info!("{label} finished: mu {:?} sigma {:?}", m.mu, m.sigma),
    }
}

fn summary_line(row: &ResultRow) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    format!(
        "{} {} {} seed {}: mu {} sigma {} sparsity {:.3} comm {:.2} MB",
        row.method,
        row.dataset,
        row.scenario,
        row.seed,
        fmt(row.mu),
        fmt(row.sigma),
        row.sparsity,
        row.comm_mb
    )
}

pub fn run(args: RunArgs, out: &mut dyn Write) -> Result<()> {
    let config = match &args.resume {
        Some(path) => load_checkpoint(path)?.config,
        None => resolve(&args.config)?,
    };
    if args.dry_run {
        write!(out, "{}", config.to_toml()?)?;
        return Ok(());
    }
    let data = prepare_data(&config)?;
    let mut exp = match &args.resume {
        Some(path) => Experiment::restore(load_checkpoint(path)?, data.clients.clone())?,
        None => Experiment::new(config.clone(), data.clients.clone(), &data.arch)?,
    };
    let label = config.method_label();
    let mut steps = 0;
    while exp.step(&mut |e| log_event(&label, e))? {
        steps += 1;
        if let Some(path) = &args.checkpoint {
            save_checkpoint(path, &exp.checkpoint())?;
            if args.stop_after == Some(steps) {
                writeln!(
                    out,
                    "stopped after {steps} rounds; checkpoint {}",
                    path.display()
                )?;
                return Ok(());
            }
        }
    }
    let result = exp.into_result();
    let rows = result.rows(config.dataset.kind.name(), &config.scenario.to_string());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "run",
        runs: vec![run_manifest(&config, &data, &result)?],
    };
    write_outputs(&args.out, &[("results.csv", &rows)], &manifest)?;
    writeln!(out, "{}", summary_line(rows.last().expect("final row")))?;
    Ok(())
}

fn sweep_grid(args: &SweepArgs, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let seeds = if args.seeds.is_empty() {
        vec![base.seed]
    } else {
        args.seeds.clone()
    };
    let methods = if args.methods.is_empty() {
        vec![base.method]
    } else {
        args.methods
            .iter()
            .map(|m| parse_method(m))
            .collect::<Result<_>>()?
    };
    let scenario_names: Vec<String> = match (&args.scenarios[..], args.weights_grid) {
        ([], Some(WeightsGrid::Ablation)) => ["standard", "noisy-clients", "drift"]
            .map(String::from)
            .to_vec(),
        ([], None) => vec![base.scenario.to_string()],
        (s, _) => s.to_vec(),
    };
    let scenarios: Vec<ScenarioSpec> = scenario_names
        .iter()
        .map(|s| parse_scenario(s, &base.scenario))
        .collect::<Result<_>>()?;
    let weights: Vec<ScoreWeights> = match args.weights_grid {
        Some(WeightsGrid::Ablation) => ScoreWeights::ablation_grid().to_vec(),
        None => vec![base.weights],
    };
    let phases: Vec<(usize, usize, usize)> = if args.phases.is_empty() {
        vec![(base.phases.p1, base.phases.p2, base.phases.p3)]
    } else {
        args.phases
            .iter()
            .map(|p| parse_phases(p))
            .collect::<Result<_>>()?
    };
    let lambdas = if args.lambdas.is_empty() {
        vec![base.lambda]
    } else {
        args.lambdas.clone()
    };

    let mut grid = Vec::new();
    for &method in &methods {
        for w in &weights {
            for &(p1, p2, p3) in &phases {
                for &lambda in &lambdas {
                    for scenario in &scenarios {
                        for &seed in &seeds {
                            let mut c = base.clone();
                            c.method = method;
                            c.weights = *w;
                            c.phases.p1 = p1;
                            c.phases.p2 = p2;
                            c.phases.p3 = p3;
                            c.lambda = lambda;
                            c.scenario = *scenario;
                            c.seed = seed;
                            let mut tags = Vec::new();
                            if weights.len() > 1 {
                                tags.push(format!("w={}/{}/{}", w.alpha, w.beta, w.gamma));
                            }
                            if phases.len() > 1 {
                                tags.push(format!("p={p1}:{p2}:{p3}"));
                            }
                            if lambdas.len() > 1 {
                                tags.push(format!("lambda={lambda}"));
                            }
                            let name = base.label.clone().unwrap_or_else(|| method.to_string());
                            c.label = if tags.is_empty() {
                                base.label.clone()
                            } else {
                                Some(format!("{name}[{}]", tags.join(" ")))
                            };
                            c.validate()?;
                            grid.push(c);
                        }
                    }
                }
            }
        }
    }
    Ok(grid)
}

pub fn sweep(args: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let base = resolve(&args.config)?;
    let grid = sweep_grid(&args, &base)?;
    log::info!("sweep of {} experiments", grid.len());
    let mut cache: HashMap<(u64, String), PreparedData> = HashMap::new();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (i, c) in grid.iter().enumerate() {
        let key = (c.seed, c.scenario.to_string());
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), prepare_data(c)?);
        }
        let data = &cache[&key];
        let label = format!("[{}/{}] {}", i + 1, grid.len(), c.method_label());
        let result = Experiment::new(c.clone(), data.clients.clone(), &data.arch)?
            .run(&mut |e| log_event(&label, e))?;
        let run_rows = result.rows(c.dataset.kind.name(), &c.scenario.to_string());
        writeln!(out, "{}", summary_line(run_rows.last().expect("final row")))?;
        runs.push(run_manifest(c, data, &result)?);
        rows.extend(run_rows);
    }
    let finals: Vec<ResultRow> = rows.iter().filter(|r| r.is_final()).cloned().collect();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "sweep",
        runs,
    };
    write_outputs(
        &args.out,
        &[("results.csv", &rows), ("final.csv", &finals)],
        &manifest,
    )?;
    Ok(())
}

pub fn report_cmd(args: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        rows.extend(read_rows(file)?);
    }
    let table = report(&rows)?;
    match args.format {
        ReportFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&table)?)?,
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "method",
                "dataset",
                "scenario",
                "runs",
                "mu_mean",
                "mu_std",
                "sigma_mean",
                "sigma_std",
                "comm_mb_mean",
                "comm_mb_std",
                "score",
            ])?;
            for r in &table {
                w.write_record([
                    r.method.clone(),
                    r.dataset.clone(),
                    r.scenario.clone(),
                    r.runs.to_string(),
                    r.mu.mean.to_string(),
                    r.mu.std.to_string(),
                    r.sigma.mean.to_string(),
                    r.sigma.std.to_string(),
                    r.comm_mb.mean.to_string(),
                    r.comm_mb.std.to_string(),
                    r.score.to_string(),
                ])?;
            }
            out.write_all(&w.into_inner()?)?;
        }
        ReportFormat::Table => {
            writeln!(
                out,
                "{:<28} {:<10} {:<14} {:>4} {:>17} {:>17} {:>19} {:>8}",
                "method", "dataset", "scenario", "runs", "mu", "sigma", "comm MB", "score"
            )?;
            for r in &table {
                writeln!(
                    out,
                    "{:<28} {:<10} {:<14} {:>4} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>9.2} ± {:<7.2} {:>8.4}",
                    r.method,
                    r.dataset,
                    r.scenario,
                    r.runs,
                    r.mu.mean,
                    r.mu.std,
                    r.sigma.mean,
                    r.sigma.std,
                    r.comm_mb.mean,
                    r.comm_mb.std,
                    r.score
                )?;
            }
        }
    }
    Ok(())
}

pub fn validate_data(args: ValidateArgs, out: &mut dyn Write) -> Result<()> {
    let kind = parse_dataset(&args.dataset)?;
    let path = || {
        args.path.clone().ok_or_else(|| {
            anyhow::Error::new(caafp_core::Error::Data(format!(
                "dataset {} needs --path",
                kind.name()
            )))
        })
    };
    let (clients, num_classes): (Vec<ClientDataset>, usize) = match kind {
        DatasetKind::Synth => {
            let cfg = caafp_core::SynthConfig::default();
            (synth_population(&cfg)?, cfg.classes)
        }
        DatasetKind::Wisdm => {
            let data = load_wisdm(path()?)?;
            writeln!(out, "malformed records skipped: {}", data.malformed_records)?;
            writeln!(
                out,
                "users without a complete window: {:?}",
                data.dropped_users
            )?;
            (data.clients, WISDM_ACTIVITIES.len())
        }
        DatasetKind::Ucihar => (load_ucihar(path()?)?, 6),
        DatasetKind::Population => {
            let pop = load_population(path()?)?;
            (pop.clients, pop.num_classes)
        }
    };
    let first = clients
        .first()
        .ok_or_else(|| caafp_core::Error::Data("dataset produced no clients".into()))?;
    let samples: usize = clients.iter().map(|c| c.total_size()).sum();
    writeln!(out, "dataset: {}", kind.name())?;
    writeln!(out, "clients: {}", clients.len())?;
    writeln!(out, "samples: {samples}")?;
    writeln!(
        out,
        "window: {} x {} channels, {} classes",
        first.train.window(),
        first.train.channels(),
        num_classes
    )?;
    for c in &clients {
        c.validate(num_classes)?;
    }
    if clients.len() >= 2 {
        let h = heterogeneity_report(&clients, num_classes)?;
        writeln!(out, "sample-count CV: {:.1}%", h.sample_count_cv_pct)?;
        writeln!(
            out,
            "clients missing classes: {} / {} ({:.1}%)",
            h.clients_missing_classes, h.clients, h.missing_class_rate_pct
        )?;
        writeln!(out, "feature CV: {:.1}%", h.feature_cv_pct)?;
    }
    Ok(())
}

/// Returns false when any check failed.
pub fn oracle(args: OracleArgs, out: &mut dyn Write) -> Result<bool> {
    let checks = run_oracles(args.seed)?;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {}: {}", c.name, c.detail)?;
    }
    Ok(checks.iter().all(|c| c.passed))
}
