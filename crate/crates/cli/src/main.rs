//! `evidential` command-line tool.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config or input
//! files), 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evidential::datasets::{self, format_f64};
use evidential::gradcheck::{self, GradCheckConfig, GradCheckReport};
use evidential::metrics::{self, SampleRecord};
use evidential::mlp::Network;
use evidential::trainer::{self, ExperimentConfig, Head};
use evidential::{ActivationKind, Error};

#[derive(Parser)]
#[command(name = "evidential", version, about = "Evidential classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory
    #[arg(long, env = "EVIDENTIAL_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/test/OOD splits described by a config as CSV
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train a model and write epoch log, checkpoint, records and metrics
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Score a dataset with a saved checkpoint
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// relu, softplus, exp, or softmax for the baseline head
        #[arg(long, default_value = "exp")]
        head: String,
        /// Mark every sample as out-of-distribution
        #[arg(long)]
        ood: bool,
        /// Records CSV to write
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare analytic logit gradients with central differences
    Gradcheck {
        /// TOML file with gradient-check settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
        /// Perturb the analytic gradient of one cell (harness self-test)
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train once per lambda1 value and tabulate the results
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated lambda1 grid
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,1,10")]
        lambdas: Vec<f64>,
        /// Worker threads (defaults to all cores)
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Zero-evidence census of a records file
    Census {
        #[arg(long)]
        records: PathBuf,
    },
    /// Accuracy-vacuity curve, top-k accuracy, census and OOD summary
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        ood_records: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        thresholds: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
        fractions: Vec<f64>,
        #[command(flatten)]
        out: OutDir,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. }
            | Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::Precondition(_)
            | Error::Domain(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn write_file(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn json<S: serde::Serialize>(value: &S) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))
}

fn gen_data(config: &Path, out: &Path) -> CmdResult {
    let cfg = ExperimentConfig::load(config)?;
    let splits = trainer::build_datasets(&cfg)?;
    create_dir(out)?;
    let mut parts = vec![("train", &splits.train), ("test", &splits.test)];
    if let Some(ood) = &splits.ood {
        parts.push(("ood", ood));
    }
    for (name, ds) in parts {
        let path = out.join(format!("{name}.csv"));
        datasets::save_csv(ds, &path)?;
        println!("{} ({} samples)", path.display(), ds.len());
    }
    Ok(())
}

fn train(config: &Path, out: &Path) -> CmdResult {
    let cfg = ExperimentConfig::load(config)?;
    let run = trainer::run_experiment(&cfg)?;
    let summary = trainer::write_artifacts(&cfg, &run, out)?;
    println!("final train accuracy: {}", format_f64(summary.final_train_accuracy));
    println!("final test accuracy: {}", format_f64(summary.final_test_accuracy));
    Ok(())
}

fn parse_head(s: &str) -> Result<Head, Failure> {
    if s == "softmax" {
        return Ok(Head::Softmax);
    }
    s.parse::<ActivationKind>()
        .map(Head::Evidential)
        .map_err(|_| Failure::Validation(format!("unknown head '{s}' (relu, softplus, exp, softmax)")))
}

fn evaluate(checkpoint: &Path, data: &Path, head: &str, ood: bool, output: &Path) -> CmdResult {
    let head = parse_head(head)?;
    let net = Network::<f64>::load(checkpoint)?;
    let mut ds = datasets::load_dataset(data)?;
    ds.ood |= ood;
    let records = trainer::evaluate(&net, &ds, head)?;
    metrics::save_records(&records, output)?;
    let ind: Vec<SampleRecord> = records.iter().filter(|r| !r.is_ood).cloned().collect();
    if !ind.is_empty() {
        println!("accuracy: {}", format_f64(metrics::accuracy(&ind)?));
    }
    let mean_vacuity = records.iter().map(|r| r.vacuity).sum::<f64>() / records.len() as f64;
    println!("mean vacuity: {}", format_f64(mean_vacuity));
    Ok(())
}

struct GradcheckArgs {
    config: Option<PathBuf>,
    samples: Option<usize>,
    h: Option<f64>,
    tolerance: Option<f64>,
    seed: Option<u64>,
    json: Option<PathBuf>,
    inject_fault: Option<String>,
}

fn print_report(report: &GradCheckReport) {
    println!("cell,checked,skipped,max_rel_error,abs_failures,status");
    for c in &report.cells {
        println!(
            "{},{},{},{},{},{}",
            c.cell,
            c.checked,
            c.skipped,
            format_f64(c.max_rel_error),
            c.abs_failures,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
}

fn gradcheck_cmd(a: GradcheckArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => GradCheckConfig::load(p)?,
        None => GradCheckConfig::default(),
    };
    if let Some(v) = a.samples {
        cfg.samples = v;
    }
    if let Some(v) = a.h {
        cfg.h = v;
    }
    if let Some(v) = a.tolerance {
        cfg.tolerance = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let grid = gradcheck::default_grid();
    if let Some(name) = &a.inject_fault {
        if !grid.iter().any(|c| c.to_string() == *name) {
            return Err(Failure::Validation(format!("unknown cell '{name}'")));
        }
    }
    let cfg_ref = &cfg;
    let fault = a.inject_fault.as_deref();
    let report = gradcheck::run_with(&grid, &cfg, &|cell, o, y, nu| {
        let mut pair = gradcheck::cell_objective(cell, cfg_ref, o, y, nu)?;
        if fault == Some(cell.to_string().as_str()) {
            pair.grad[0] += 1e-2 * (1.0 + pair.grad[0].abs());
        }
        Ok(pair)
    })?;
    print_report(&report);
    if let Some(p) = &a.json {
        write_file(p, &json(&report)?)?;
    }
    if report.passed {
        let w = report.worst().expect("grid is not empty");
        println!("gradcheck passed: worst {} at {}", w.cell, format_f64(w.max_rel_error));
        Ok(())
    } else {
        let msgs: Vec<String> = report
            .failures()
            .map(|c| {
                format!(
                    "{} max rel error {} (coordinate {}, analytic {}, numeric {})",
                    c.cell,
                    format_f64(c.max_rel_error),
                    c.worst_coordinate,
                    format_f64(c.worst_analytic),
                    format_f64(c.worst_numeric)
                )
            })
            .collect();
        Err(Failure::Runtime(format!("gradcheck failed: {}", msgs.join("; "))))
    }
}

fn sweep_cmd(config: &Path, lambdas: &[f64], jobs: Option<usize>, out: &Path) -> CmdResult {
    let cfg = ExperimentConfig::load(config)?;
    if lambdas.is_empty() {
        return Err(Failure::Validation("--lambdas must not be empty".into()));
    }
    for (i, &l) in lambdas.iter().enumerate() {
        let mut c = cfg.clone();
        c.objective.lambda1 = l;
        c.validate().map_err(|e| Failure::Validation(format!("grid point {i}: {e}")))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let rows = pool.install(|| trainer::sweep(&cfg, lambdas))?;
    create_dir(out)?;
    let csv = trainer::sweep_csv(&rows);
    write_file(&out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn census_cmd(records: &Path) -> CmdResult {
    let rs = metrics::load_records(records)?;
    print!("{}", metrics::census_csv(&metrics::evidence_census(&rs)));
    Ok(())
}

#[derive(serde::Serialize)]
struct ReportSummary {
    n: usize,
    accuracy: f64,
    vacuity: metrics::VacuitySummary,
    /// `null` when no OOD records were supplied.
    auroc: Option<f64>,
}

fn report_cmd(records: &Path, ood: Option<&Path>, thresholds: &[f64], fractions: &[f64], out: &Path) -> CmdResult {
    let mut rs = metrics::load_records(records)?;
    if let Some(p) = ood {
        rs.extend(metrics::load_records(p)?.into_iter().map(|r| SampleRecord { is_ood: true, ..r }));
    }
    let ind: Vec<SampleRecord> = rs.iter().filter(|r| !r.is_ood).cloned().collect();
    let curve = metrics::accuracy_vacuity_curve(&ind, thresholds)?;
    let topk = metrics::topk_confident_accuracy(&ind, fractions)?;
    let census = metrics::evidence_census(&ind);
    let summary = ReportSummary {
        n: rs.len(),
        accuracy: metrics::accuracy(&ind)?,
        vacuity: metrics::vacuity_summary(&rs)?,
        auroc: metrics::ood_auroc(&rs)?,
    };
    create_dir(out)?;
    write_file(&out.join("accuracy_vacuity.csv"), &metrics::curve_csv(&curve))?;
    write_file(&out.join("topk.csv"), &metrics::topk_csv(&topk))?;
    write_file(&out.join("census.csv"), &metrics::census_csv(&census))?;
    write_file(&out.join("summary.json"), &json(&summary)?)?;
    println!("accuracy: {}", format_f64(summary.accuracy));
    match summary.auroc {
        Some(a) => println!("auroc: {}", format_f64(a)),
        None => println!("auroc: absent (no OOD records)"),
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out.out),
        Command::Train { config, out } => train(&config, &out.out),
        Command::Evaluate {
            checkpoint,
            data,
            head,
            ood,
            output,
        } => evaluate(&checkpoint, &data, &head, ood, &output),
        Command::Gradcheck {
            config,
            samples,
            h,
            tolerance,
            seed,
            json,
            inject_fault,
        } => gradcheck_cmd(GradcheckArgs {
            config,
            samples,
            h,
            tolerance,
            seed,
            json,
            inject_fault,
        }),
        Command::Sweep {
            config,
            lambdas,
            jobs,
            out,
        } => sweep_cmd(&config, &lambdas, jobs, &out.out),
        Command::Census { records } => census_cmd(&records),
        Command::Report {
            records,
            ood_records,
            thresholds,
            fractions,
            out,
        } => report_cmd(&records, ood_records.as_deref(), &thresholds, &fractions, &out.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
