use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sfr_core::benchgen::{self, BenchSpec};
use sfr_core::features::{self, ClassEntry, Dataset, DatasetManifest, FeatureSet, SessionEntry};
use sfr_core::protocol::{replay_size_sweep, run_dfcil, run_fscil, RunConfig, RunReport};
use sfr_core::prototype::{fit_prototype, ProtoConfig, PrototypeStore};
use sfr_core::{normality, report, store_io, Error};

/// Data-free class-incremental learning on frozen embeddings.
#[derive(Parser)]
#[command(name = "sfr", version, about)]
struct Cli {
    /// Root seed; overrides the `seed` field of a run config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trials and sweep points (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert CSV feature files into a dataset directory.
    Ingest(IngestArgs),
    /// Write a synthetic benchmark dataset.
    GenBench {
        /// Benchmark spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the data-free incremental protocol.
    Run(RunArgs),
    /// Run the few-shot incremental protocol.
    Fscil {
        #[command(flatten)]
        run: RunArgs,
        /// Real training rows per incremental class.
        #[arg(long)]
        shots: usize,
        /// Enlarge each few-shot class with synthetic samples.
        #[arg(long)]
        augment: bool,
    },
    /// Repeat the data-free run for several replay-buffer sizes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated samples per class, e.g. 10,20,50,100.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Print a report.json as a per-task table.
    Report {
        /// report.json or the directory containing it.
        path: PathBuf,
        /// Print the per-trial CSV instead of the table.
        #[arg(long)]
        csv: bool,
    },
    /// Principal-component Q-Q data for one class, as CSV.
    Normality {
        /// Dataset directory or manifest.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        label: u32,
        /// Number of leading components.
        #[arg(long, default_value_t = 3)]
        components: usize,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export or import prototype stores.
    #[command(subcommand)]
    Proto(ProtoCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct IngestArgs {
    /// Training CSV with header `label,f0,f1,...`.
    #[arg(long)]
    train: PathBuf,
    /// Test CSV with the same layout.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of (lowest) labels in session 0; default all.
    #[arg(long)]
    base_classes: Option<usize>,
    /// Labels per incremental session.
    #[arg(long, default_value_t = 1)]
    increment: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of trials; overrides the config.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum ProtoCommand {
    /// Fit prototypes on a dataset's training rows and save them.
    Export {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated labels; default every class.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<u32>,
        /// Prototype settings (JSON, same fields as `proto` in a run config).
        #[arg(long)]
        proto_config: Option<PathBuf>,
    },
    /// Read a prototype store and print it as JSON.
    Import {
        #[arg(long)]
        input: PathBuf,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| config_error(path, e))?)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let train = features::read_csv_features(&args.train)?;
    let test = match &args.test {
        Some(p) => features::read_csv_features(p)?,
        None => FeatureSet::new(train.dim()),
    };
    if test.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: test.dim(),
        }
        .into());
    }
    let labels: Vec<u32> = train.label_set().into_iter().collect();
    if let Some(l) = test.label_set().into_iter().find(|l| !labels.contains(l)) {
        return Err(Error::Validation(format!("test label {l} has no training rows")).into());
    }
    let base = args.base_classes.unwrap_or(labels.len());
    if base == 0 || base > labels.len() || args.increment == 0 {
        return Err(Error::Validation(format!(
            "base_classes must lie in 1..={} and increment must be positive",
            labels.len()
        ))
        .into());
    }

    let mut sessions: Vec<SessionEntry> = Vec::new();
    let chunks = std::iter::once(&labels[..base]).chain(labels[base..].chunks(args.increment));
    for (session_id, chunk) in chunks.enumerate() {
        let mut classes = Vec::new();
        for &l in chunk {
            let tr = train.filter_labels(&[l].into());
            let te = test.filter_labels(&[l].into());
            let entry = ClassEntry {
                label: l,
                train_file: format!("train/class_{l:04}.f32").into(),
                test_file: format!("test/class_{l:04}.f32").into(),
                train_count: tr.len(),
                test_count: te.len(),
            };
            features::write_feature_file(&tr, &args.out.join(&entry.train_file))?;
            features::write_feature_file(&te, &args.out.join(&entry.test_file))?;
            classes.push(entry);
        }
        sessions.push(SessionEntry { session_id, classes });
    }
    let manifest = DatasetManifest {
        version: features::MANIFEST_VERSION,
        dim: train.dim(),
        dtype: features::DTYPE_F32LE.into(),
        label_names: None,
        sessions,
        root: args.out.clone(),
    };
    manifest.write(&args.out)?;
    manifest.validate()?;
    println!(
        "wrote {} classes in {} sessions to {}",
        labels.len(),
        manifest.sessions.len(),
        args.out.display()
    );
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    dataset: Dataset,
    out: PathBuf,
}

fn prepare(args: &RunArgs, seed: Option<u64>) -> Result<Prepared> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("sfr-out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let dataset = Dataset::open(&cfg.dataset)?;
    Ok(Prepared { cfg, dataset, out })
}

fn save_report(rep: &RunReport, out: &Path) -> Result<()> {
    report::write_json(rep, &out.join("report.json"))?;
    write_file(&out.join("report.csv"), report::sessions_csv(rep))?;
    print!("{}", report::format_table(rep));
    let w = rep.total_warnings();
    if w != Default::default() {
        eprintln!("warnings: {}", serde_json::to_string(&w)?);
    }
    Ok(())
}

fn run(args: &RunArgs, seed: Option<u64>) -> Result<()> {
    let p = prepare(args, seed)?;
    let plan = p.cfg.plan(&p.dataset.manifest)?;
    let settings = p.cfg.settings();
    let rep = match p.cfg.shots {
        Some(_) => run_fscil(&p.dataset, &plan, &settings, p.cfg.augment)?,
        None => run_dfcil(&p.dataset, &plan, &settings)?,
    };
    save_report(&rep, &p.out)
}

fn fscil(args: &RunArgs, seed: Option<u64>, shots: usize, augment: bool) -> Result<()> {
    let mut p = prepare(args, seed)?;
    p.cfg.shots = Some(shots);
    p.cfg.augment = augment;
    let plan = p.cfg.plan(&p.dataset.manifest)?;
    let rep = run_fscil(&p.dataset, &plan, &p.cfg.settings(), augment)?;
    save_report(&rep, &p.out)
}

fn sweep(args: &RunArgs, seed: Option<u64>, sizes: &[usize]) -> Result<()> {
    let p = prepare(args, seed)?;
    let plan = p.cfg.plan(&p.dataset.manifest)?;
    let points = replay_size_sweep(&p.dataset, &plan, sizes, &p.cfg.settings())?;
    let csv = report::sweep_csv(&points);
    write_file(&p.out.join("sweep.csv"), &csv)?;
    write_file(&p.out.join("sweep.json"), serde_json::to_string_pretty(&points)? + "\n")?;
    print!("{csv}");
    Ok(())
}

fn show_report(path: &Path, csv: bool) -> Result<()> {
    let file = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    let rep = report::read_json(&file)?;
    if csv {
        print!("{}", report::sessions_csv(&rep));
    } else {
        print!("{}", report::format_table(&rep));
    }
    Ok(())
}

fn normality_csv(dataset: &Path, label: u32, k: usize, split: Split) -> Result<String> {
    let ds = Dataset::open(dataset)?;
    let class = ds.classes.get(&label).ok_or(Error::UnknownLabel(label))?;
    let rows = match split {
        Split::Train => &class.train,
        Split::Test => &class.test,
    };
    let rep = normality::principal_component_report(&rows.rows_of(label), k)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["component", "variance", "theoretical_quantile", "sample_quantile"])?;
    for c in &rep.components {
        for &(t, s) in &c.qq_points {
            w.write_record([c.index.to_string(), c.variance.to_string(), t.to_string(), s.to_string()])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn proto_export(dataset: &Path, out: &Path, labels: &[u32], proto_config: Option<&Path>) -> Result<()> {
    let cfg: ProtoConfig = match proto_config {
        Some(p) => read_json(p)?,
        None => ProtoConfig::default(),
    };
    let ds = Dataset::open(dataset)?;
    let labels = if labels.is_empty() { ds.labels() } else { labels.to_vec() };
    let mut store = PrototypeStore::new(ds.dim());
    for l in labels {
        let class = ds.classes.get(&l).ok_or(Error::UnknownLabel(l))?;
        store.insert(fit_prototype(l, &class.train.rows_of(l), &cfg)?)?;
    }
    store_io::write_checkpoint(out, &store, None)?;
    println!("wrote {} prototypes (dim {}) to {}", store.len(), store.dim(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ProtoSummary {
    label: u32,
    sample_count: usize,
    shrinkage: f64,
    reduced_rank: Option<usize>,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct StoreSummary {
    dim: usize,
    prototypes: Vec<ProtoSummary>,
    classifier_labels: Option<Vec<u32>>,
}

fn proto_import(input: &Path) -> Result<String> {
    let ck = store_io::read_checkpoint(input)?;
    let prototypes = ck
        .store
        .iter()
        .map(|p| ProtoSummary {
            label: p.label,
            sample_count: p.sample_count,
            shrinkage: p.shrinkage,
            reduced_rank: p.reduced.as_ref().map(|r| r.rank()),
            mean: p.mean.iter().copied().collect(),
            cov: p.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        })
        .collect();
    let summary = StoreSummary {
        dim: ck.store.dim(),
        prototypes,
        classifier_labels: ck.classifier.map(|c| c.labels().to_vec()),
    };
    Ok(serde_json::to_string_pretty(&summary)? + "\n")
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Validation("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::GenBench { spec, out } => {
            let spec: BenchSpec = read_json(spec)?;
            let manifest = benchgen::generate(&spec, out)?;
            let n: usize = manifest.sessions.iter().map(|s| s.classes.len()).sum();
            println!("wrote {n} classes (dim {}) to {}", manifest.dim, out.display());
            Ok(())
        }
        Command::Run(a) => run(a, cli.seed),
        Command::Fscil { run: a, shots, augment } => fscil(a, cli.seed, *shots, *augment),
        Command::Sweep { run: a, sizes } => sweep(a, cli.seed, sizes),
        Command::Report { path, csv } => show_report(path, *csv),
        Command::Normality {
            dataset,
            label,
            components,
            split,
            out,
        } => emit(&normality_csv(dataset, *label, *components, *split)?, out.as_deref()),
        Command::Proto(ProtoCommand::Export {
            dataset,
            out,
            labels,
            proto_config,
        }) => proto_export(dataset, out, labels, proto_config.as_deref()),
        Command::Proto(ProtoCommand::Import { input, out }) => emit(&proto_import(input)?, out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
