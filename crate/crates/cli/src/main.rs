use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use spade_core::dataset::{read_scenario_dir, write_scenario_dir, ScenarioKind, ScenarioSplit};
use spade_core::evaluation::{aggregate_runs, write_auc_csv, write_precision_csv, EvalReport};
use spade_core::experiment::{
    self, evaluate_model, pseudo_label_precision, resolve_unchecked, sweep, train_on, write_sweep_csv, Ablation,
    ExperimentConfig, SweepAxis,
};
use spade_core::par;
use spade_core::trainer::{write_pseudo_label_log, write_trace_csv, Method, TrainedModel};

#[derive(Parser)]
#[command(name = "spade", version, about = "Semi-supervised anomaly detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one scenario directory per seed.
    Prepare {
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Train on a prepared scenario directory.
    Train {
        #[command(flatten)]
        opts: ConfigOpts,
        #[arg(long)]
        scenario_dir: PathBuf,
    },
    /// Score test sets with trained models; repeated pairs are aggregated.
    Evaluate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long, required = true)]
        scenario_dir: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-seed runs over alpha, beta, k or ablation variants.
    Sweep {
        #[command(flatten)]
        opts: ConfigOpts,
        /// alpha, beta, k or ablation
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `0,0.5,1` or `full,no-ensemble`.
        #[arg(long)]
        values: String,
    },
    /// Prepare, train and evaluate every seed.
    Run {
        #[command(flatten)]
        opts: ConfigOpts,
    },
}

#[derive(Args)]
struct ConfigOpts {
    /// JSON config; keys may be nested or dotted (`train.alpha`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    /// Scenario kind: new-anomalies, pu, easiness, high-risk, temporal.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed percentile thresholds instead of partial matching.
    #[arg(long)]
    no_partial_matching: bool,
    /// A single one-class model.
    #[arg(long)]
    no_ensemble: bool,
    /// Fit one-class models without the labeled normals.
    #[arg(long)]
    no_normals_in_occ: bool,
    #[arg(long)]
    majority_vote: bool,
    /// Any other config key, as `path=json`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Some(serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {}", p.display()))?)
            }
            None => None,
        };
        let mut over: Vec<(String, Value)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            over.push((k.trim().to_string(), v));
        }
        if let Some(s) = self.seed {
            over.push(("seeds".into(), json!([s])));
        }
        if let Some(m) = &self.method {
            let m: Method = m.parse()?;
            over.push(("method".into(), json!(m.as_str())));
        }
        if let Some(a) = self.alpha {
            over.push(("train.alpha".into(), json!(a)));
        }
        if let Some(b) = self.beta {
            over.push(("train.beta".into(), json!(b)));
        }
        if let Some(k) = self.k {
            over.push(("train.pseudo.k".into(), json!(k)));
        }
        if let Some(o) = &self.out {
            over.push(("out".into(), json!(o)));
        }
        let mut cfg = resolve_unchecked(file, &over)?;
        if let Some(s) = &self.scenario {
            let kind: ScenarioKind = s.parse()?;
            cfg.scenario = cfg.scenario.with_kind(kind);
        }
        let flags = [
            (self.no_partial_matching, Ablation::NoPartialMatching),
            (self.no_ensemble, Ablation::NoEnsemble),
            (self.no_normals_in_occ, Ablation::NoNormalsInOcc),
            (self.majority_vote, Ablation::MajorityVote),
        ];
        for (on, a) in flags {
            if on {
                a.apply(&mut cfg.train);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().context("no output directory; pass --out or set `out`")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("writing {}", path.display()))?,
    ))
}

/// The embedded config omits `out` so identical configs give identical
/// directories wherever they are written.
fn write_scenario(split: &ScenarioSplit, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let embedded = ExperimentConfig {
        out: None,
        ..cfg.clone()
    };
    write_scenario_dir(split, dir, Some(embedded.to_value()?)).with_context(|| format!("writing {}", dir.display()))?;
    let (back, _) = read_scenario_dir(dir).with_context(|| format!("re-reading {}", dir.display()))?;
    ensure!(
        back.labeled.len() == split.labeled.len()
            && back.unlabeled.len() == split.unlabeled.len()
            && back.test.len() == split.test.len(),
        "scenario directory {} did not round-trip",
        dir.display()
    );
    Ok(())
}

/// Checkpoint plus, for network models, the training trace and the final
/// pseudo-label log.
fn write_model(model: &TrainedModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("model.json");
    let text = model.to_json()?;
    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    TrainedModel::from_json(&fs::read_to_string(&path)?).context("checkpoint did not round-trip")?;
    if let TrainedModel::Network(m) = model {
        write_trace_csv(create(&dir.join("trace.csv"))?, m)?;
        if m.pseudo_labeler.is_some() {
            write_pseudo_label_log(create(&dir.join("pseudo_labels.jsonl"))?, m)?;
        }
    }
    Ok(())
}

fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    write_auc_csv(create(&dir.join("auc.csv"))?, report)?;
    if let Some(c) = &report.precision_curves {
        write_precision_csv(create(&dir.join("precision.csv"))?, c)?;
    }
    Ok(())
}

fn summary(report: &EvalReport) -> String {
    let f = |s: Option<spade_core::evaluation::Stat>| s.map_or("-".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std));
    format!(
        "seeds {} | overall {} | given {} | missed {}",
        report.n_seeds,
        f(Some(report.overall_auc)),
        f(report.given_auc),
        f(report.missed_auc)
    )
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

fn cmd_prepare(opts: &ConfigOpts) -> Result<()> {
    let cfg = opts.resolve()?;
    let root = out_dir(&cfg)?;
    for &seed in &cfg.seeds {
        let split = experiment::prepare(&cfg, seed).with_context(|| format!("preparing seed {seed}"))?;
        let dir = seed_dir(&root, seed);
        write_scenario(&split, &dir, &cfg)?;
        println!(
            "{}: {} labeled, {} unlabeled, {} test",
            dir.display(),
            split.labeled.len(),
            split.unlabeled.len(),
            split.test.len()
        );
    }
    Ok(())
}

fn cmd_train(opts: &ConfigOpts, scenario_dir: &Path) -> Result<()> {
    let cfg = opts.resolve()?;
    let root = out_dir(&cfg)?;
    let (split, manifest) =
        read_scenario_dir(scenario_dir).with_context(|| format!("reading {}", scenario_dir.display()))?;
    let seed = opts.seed.unwrap_or(manifest.seed);
    let model = train_on(cfg.method, &split, &cfg.train_for(seed))
        .with_context(|| format!("training {} on {}", cfg.method, scenario_dir.display()))?;
    write_model(&model, &root)?;
    write_json(
        &root.join("train.json"),
        &json!({
            "scenario_dir": scenario_dir,
            "seed": seed,
            "config": cfg.to_value()?,
        }),
    )?;
    println!("{}: trained {}", root.display(), cfg.method);
    Ok(())
}

fn cmd_evaluate(models: &[PathBuf], dirs: &[PathBuf], out: &Path) -> Result<()> {
    ensure!(
        models.len() == dirs.len(),
        "got {} --model and {} --scenario-dir values; they pair up in order",
        models.len(),
        dirs.len()
    );
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut runs = Vec::new();
    let mut curves = None;
    for (m, d) in models.iter().zip(dirs) {
        let text = fs::read_to_string(m).with_context(|| format!("reading {}", m.display()))?;
        let model = TrainedModel::from_json(&text).with_context(|| format!("loading {}", m.display()))?;
        let (split, _) = read_scenario_dir(d).with_context(|| format!("reading {}", d.display()))?;
        runs.push(evaluate_model(&model, &split).with_context(|| format!("evaluating on {}", d.display()))?);
        if curves.is_none() {
            curves = pseudo_label_precision(&model, &split)?;
        }
    }
    let mut report = aggregate_runs(&runs)?;
    report.precision_curves = curves;
    write_report(&report, out)?;
    println!("{}", summary(&report));
    Ok(())
}

fn cmd_sweep(opts: &ConfigOpts, param: &str, values: &str) -> Result<()> {
    let cfg = opts.resolve()?;
    let axis = SweepAxis::parse(param, values)?;
    let root = out_dir(&cfg)?;
    let rows = sweep(&cfg, &axis)?;
    write_json(&root.join("config.json"), &cfg)?;
    write_json(&root.join("sweep.json"), &rows)?;
    write_sweep_csv(create(&root.join("sweep.csv"))?, &rows)?;
    for r in &rows {
        println!("{}={}: {}", r.parameter, r.value, summary(&r.report));
    }
    Ok(())
}

fn cmd_run(opts: &ConfigOpts) -> Result<()> {
    let cfg = opts.resolve()?;
    let root = out_dir(&cfg)?;
    let (report, runs) = experiment::run(&cfg)?;
    for r in &runs {
        let dir = seed_dir(&root, r.seed);
        write_scenario(&r.split, &dir.join("scenario"), &cfg)?;
        write_model(&r.model, &dir)?;
    }
    write_json(&root.join("config.json"), &cfg)?;
    write_report(&report, &root)?;
    println!("{}", summary(&report));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare { opts } => cmd_prepare(opts),
        Command::Train { opts, scenario_dir } => cmd_train(opts, scenario_dir),
        Command::Evaluate {
            model,
            scenario_dir,
            out,
        } => cmd_evaluate(model, scenario_dir, out),
        Command::Sweep { opts, param, values } => cmd_sweep(opts, param, values),
        Command::Run { opts } => cmd_run(opts),
    }
}

/// The error chain joined by `: `, skipping causes whose text the previous
/// message already includes.
fn chain(e: &anyhow::Error) -> String {
    let mut out: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.last().is_some_and(|prev| prev.contains(&msg)) {
            out.push(msg);
        }
    }
    out.join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match par::with_threads(par::threads_from_env(), || dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    fn opts(args: &[&str]) -> ConfigOpts {
        let mut full = vec!["spade", "run"];
        full.extend_from_slice(args);
        match Cli::parse_from(full).command {
            Command::Run { opts } => opts,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_defaults() {
        let c = opts(&["--alpha", "0.5", "--k", "3", "--seed", "9", "--majority-vote", "--set", "train.max_epochs=7"])
            .resolve()
            .unwrap();
        assert_eq!(c.train.alpha, 0.5);
        assert_eq!(c.train.pseudo.k, 3);
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.train.pseudo.vote, spade_core::pseudo_labeler::Vote::Majority);
    }

    #[test]
    fn pu_with_occ_is_rejected() {
        assert!(opts(&["--scenario", "pu", "--method", "occ"]).resolve().is_err());
        assert!(opts(&["--scenario", "pu", "--method", "negative-occ"]).resolve().is_ok());
    }
}
