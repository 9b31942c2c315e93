use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowmat_core::evalharness::experiment::{
    analyze_correlation, evaluate_trained, exit_code, load_trained, prepare_data, report_text, run_experiment,
    save_trained, train_models, write_correlation, write_data, write_results, ExperimentConfig, SEED_ENV,
};
use flowmat_core::flowmat::config::parse_kv_text;
use flowmat_core::training::{Regime, Task};
use flowmat_core::{Error, Result};

#[derive(Parser)]
#[command(name = "flowmat", version, about = "Masked-token channel estimation and CSI feedback experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra key=value overrides, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct TaskArgs {
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    regime: Option<Regime>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate channel, precoder and pilot containers
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train models and save checkpoints and loss curves
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Evaluate saved checkpoints on the held-out split
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Frequency-correlation analysis of synthetic channels
    AnalyzeCorr {
        #[command(flatten)]
        common: Common,
    },
    /// Full run: data, training, evaluation and report files
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
    },
}

fn load_config(common: &Common, task: Option<&TaskArgs>, extra: &[(&str, String)]) -> Result<ExperimentConfig> {
    let mut map: BTreeMap<String, String> = match &common.config {
        Some(p) => parse_kv_text(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => BTreeMap::new(),
    };
    for s in &common.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set {s:?}: expected key=value")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(t) = task {
        if let Some(x) = t.task {
            map.insert("task".into(), x.to_string());
        }
        if let Some(x) = t.regime {
            map.insert("regime".into(), x.to_string());
        }
    }
    if let Some(o) = &common.out {
        map.insert("out_dir".into(), o.display().to_string());
    }
    for (k, v) in extra {
        map.insert(k.to_string(), v.clone());
    }
    let mut cfg = ExperimentConfig::from_kv(&map)?;
    cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    Ok(cfg)
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { common, samples } => {
            let extra: Vec<_> = samples.map(|n| ("n_samples", n.to_string())).into_iter().collect();
            let cfg = load_config(&common, None, &extra)?;
            print_files(&write_data(&cfg, &cfg.out_dir)?);
        }
        Cmd::Train { common, task } => {
            let cfg = load_config(&common, Some(&task), &[])?;
            let data = prepare_data(&cfg).map_err(|e| e.in_stage("data"))?;
            let trained = train_models(&cfg, &data).map_err(|e| e.in_stage("train"))?;
            for (name, r) in &trained.reports {
                println!("{name}: {} steps, final loss {:?}", r.curve.len(), r.curve.last().map(|p| p.loss));
            }
            print_files(&save_trained(&trained, &cfg.out_dir)?);
        }
        Cmd::Eval { common, task } => {
            let cfg = load_config(&common, Some(&task), &[])?;
            let data = prepare_data(&cfg).map_err(|e| e.in_stage("data"))?;
            let trained = load_trained(&cfg, &cfg.out_dir).map_err(|e| e.in_stage("eval"))?;
            let rows = evaluate_trained(&cfg, &data, &trained).map_err(|e| e.in_stage("eval"))?;
            print!("{}", report_text(&cfg, &rows));
            print_files(&write_results(&rows, &cfg.out_dir)?);
        }
        Cmd::AnalyzeCorr { common } => {
            let cfg = load_config(&common, None, &[])?;
            let rows = analyze_correlation(&cfg)?;
            for r in &rows {
                println!("paths={} unit={} mean_off_diagonal={:.4}", r.n_paths, r.unit, r.mean_off_diagonal);
            }
            print_files(&write_correlation(&rows, &cfg.out_dir)?);
        }
        Cmd::Report { common, task } => {
            let cfg = load_config(&common, Some(&task), &[])?;
            let out = run_experiment(&cfg)?;
            let text = report_text(&cfg, &out.results);
            print!("{text}");
            let path = cfg.out_dir.join("report.md");
            fs::write(&path, text)?;
            print_files(&out.files);
            print_files(&[path]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
