//! `rinn`: topology statistics, dataset generation, threshold fitting,
//! training, evaluation and experiment reports.
//!
//! Artifacts live in one output directory (`--out`, or `RINN_OUT_DIR`):
//! `train.json`/`test.json` from `generate`, `thresholds-{train,test}.json`
//! from `fit`, `model-{rinn,ann}-opm<P>.json` and `loss-*.csv` from `train`,
//! `eval-opm<P>.csv` from `eval` and `report.csv` from `report`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rinn::mlp::TrainConfig;
use rinn::monitoring::{generate_dataset, Dataset, GeneratorConfig};
use rinn::physical::{FailureClass, PowerModel};
use rinn::pipeline::{
    self, calibrate, evaluate, measure_inference, rows_to_csv, score_results, train_model, Context,
    Engine, ExperimentConfig, ModelFile, ReportRow,
};
use rinn::rules::{ThresholdTable, DEFAULT_WINDOW};
use rinn::topology::Topology;
use rinn::util::write_atomic;
use rinn::{seed, ComponentGraph};

#[derive(Parser)]
#[command(
    name = "rinn",
    version,
    about = "Multi-failure localization for high-degree ROADM networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Topology file (TOML)
    #[arg(long, global = true)]
    topology: Option<PathBuf>,

    /// Root seed; every stage derives its own seed from it
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Fraction of candidate monitor locations that carry an OPM, in (0, 1]
    #[arg(long, global = true, default_value_t = 1.0)]
    opm_fraction: f64,

    /// Lightpaths per dataset
    #[arg(long, global = true, default_value_t = 100)]
    lps: usize,

    #[arg(long, global = true, default_value_t = 1000)]
    train_samples: usize,

    #[arg(long, global = true, default_value_t = 1000)]
    test_samples: usize,

    /// Possible failure counts per sample, e.g. "1" or "1,2,3"
    #[arg(long, global = true, default_value = "1,2,3")]
    failures: String,

    /// Restrict failures to transponder, amplifier, wss or fiber ("all" for no restriction)
    #[arg(long, global = true, default_value = "all")]
    failure_type: String,

    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Artifact directory
    #[arg(long, global = true, env = "RINN_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Print degrees, component counts and candidate monitor locations
    TopoStats,
    /// Write train.json and test.json
    Generate,
    /// Calibrate rule thresholds for both datasets
    Fit,
    /// Train the rules-informed and the all-component networks
    Train,
    /// Score all three engines on test.json
    Eval,
    /// Run the full experiment grid and write report.csv
    Report,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Missing(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (class, msg) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Missing(m) => ("missing-artifact", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        // keep the message on one line for scripts
        write!(f, "{class}: {}", msg.replace('\n', " "))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl Cli {
    fn topology(&self) -> Result<Topology> {
        let path = self
            .topology
            .as_ref()
            .ok_or_else(|| CliError::Config("--topology is required".into()))?;
        let t = Topology::load(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        t.validate()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(t)
    }

    fn failure_set(&self) -> Result<Vec<usize>> {
        let set: Vec<usize> = self
            .failures
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                CliError::Config(format!(
                    "--failures '{}' is not a list of counts",
                    self.failures
                ))
            })?;
        if set.is_empty() || set.contains(&0) {
            return Err(CliError::Config(
                "--failures needs counts of at least 1".into(),
            ));
        }
        Ok(set)
    }

    fn failure_class(&self) -> Result<Option<FailureClass>> {
        if self.failure_type.eq_ignore_ascii_case("all") {
            return Ok(None);
        }
        self.failure_type
            .parse()
            .map(Some)
            .map_err(CliError::Config)
    }

    fn opm_fraction(&self) -> Result<f64> {
        if self.opm_fraction > 0.0 && self.opm_fraction <= 1.0 {
            Ok(self.opm_fraction)
        } else {
            Err(CliError::Config(format!(
                "--opm-fraction {} is outside (0, 1]",
                self.opm_fraction
            )))
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "train-model"),
            ..TrainConfig::default()
        }
    }
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!(
            "{} not found ({hint})",
            path.display()
        )))
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    require(path, "run `rinn generate` first")?;
    Dataset::load(path).map_err(runtime)
}

fn load_thresholds(path: &Path) -> Result<ThresholdTable> {
    require(path, "run `rinn fit` first")?;
    let text = std::fs::read_to_string(path).map_err(runtime)?;
    ThresholdTable::from_json(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path, pct: u32) -> Result<ModelFile> {
    require(
        path,
        &format!("run `rinn train` on a dataset generated at {pct}% OPM"),
    )?;
    ModelFile::load(path).map_err(runtime)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    write_atomic(path, text.as_bytes())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn topo_stats(cli: &Cli) -> Result<()> {
    let t = cli.topology()?;
    println!("node  fibers  lambda  degree");
    for &n in &t.nodes {
        let s = t.node_stats(n);
        println!(
            "{:>4}  {:>6}  {:>6}  {:>6}",
            s.node, s.line_fibers, s.lambda, s.degree
        );
    }
    let c = t.count_components();
    let m = t.count_opm_slots();
    println!(
        "components: node {} link {} total {}",
        c.node, c.link, c.total
    );
    println!(
        "opm locations: node {} link {} total {}",
        m.node, m.link, m.total
    );
    Ok(())
}

fn generate(cli: &Cli) -> Result<()> {
    let t = cli.topology()?;
    let base = GeneratorConfig {
        lp_count: cli.lps,
        samples: 0,
        n_f_set: cli.failure_set()?,
        type_filter: cli.failure_class()?,
        opm_fraction: cli.opm_fraction()?,
        power_model: PowerModel::default(),
        wavelengths: rinn::provisioning::DEFAULT_WAVELENGTHS,
        seed: 0,
    };
    for (name, samples) in [("train", cli.train_samples), ("test", cli.test_samples)] {
        let cfg = GeneratorConfig {
            samples,
            seed: seed::derive(cli.seed, name),
            ..base.clone()
        };
        let d = generate_dataset(&t, &cfg).map_err(runtime)?;
        let path = cli.artifact(&format!("{name}.json"));
        write(&path, &d.to_json())?;
        println!(
            "{}: {} lightpaths, {} samples, {} OPMs of {} locations",
            path.display(),
            d.lightpaths.len(),
            d.samples.len(),
            d.deployment.len(),
            d.deployment.total_slots
        );
    }
    Ok(())
}

fn fit(cli: &Cli) -> Result<()> {
    for name in ["train", "test"] {
        let d = load_dataset(&cli.artifact(&format!("{name}.json")))?;
        let g = d.graph().map_err(runtime)?;
        let th = calibrate(&d, &g, DEFAULT_WINDOW);
        let path = cli.artifact(&format!("thresholds-{name}.json"));
        write(&path, &th.to_json())?;
        println!("{}: window {}", path.display(), th.window);
    }
    Ok(())
}

fn train(cli: &Cli) -> Result<()> {
    let d = load_dataset(&cli.artifact("train.json"))?;
    let th = load_thresholds(&cli.artifact("thresholds-train.json"))?;
    let g = d.graph().map_err(runtime)?;
    let ctx = Context::new(&g, &d.lightpaths, &d.pre, &th);
    let pct = d.meta.opm_percent();
    for engine in [Engine::Rinn, Engine::Ann] {
        let (model, report) =
            train_model(engine, &ctx, &d, &cli.train_config()).map_err(runtime)?;
        let path = cli.artifact(&ModelFile::file_name(engine, pct));
        model.save(&path).map_err(runtime)?;
        write(
            &cli.artifact(&format!("loss-{}-opm{pct}.csv", engine.name())),
            &report.to_csv(),
        )?;
        println!(
            "{}: {} pairs, final loss {:.4}",
            path.display(),
            model.pairs,
            report.final_loss
        );
    }
    Ok(())
}

fn eval_rows(
    cli: &Cli,
    d: &Dataset,
    g: &ComponentGraph,
    th: &ThresholdTable,
) -> Result<Vec<ReportRow>> {
    let pct = d.meta.opm_percent();
    let rinn_m = load_model(&cli.artifact(&ModelFile::file_name(Engine::Rinn, pct)), pct)?;
    let ann_m = load_model(&cli.artifact(&ModelFile::file_name(Engine::Ann, pct)), pct)?;
    let ctx = Context::new(g, &d.lightpaths, &d.pre, th);
    let ratio = pipeline::mean_suspect_ratio(&ctx, &d.samples);
    let mut rows = Vec::new();
    for engine in Engine::ALL {
        let model = match engine {
            Engine::Rules => None,
            Engine::Ann => Some(&ann_m),
            Engine::Rinn => Some(&rinn_m),
        };
        let results = evaluate(
            engine,
            &ctx,
            &d.samples,
            model,
            seed::derive(cli.seed, "eval"),
        );
        let acc = score_results(&results, &d.samples);
        let t = measure_inference(engine, &ctx, &d.samples[..d.samples.len().min(100)], model);
        rows.push(ReportRow {
            family: "eval",
            opm_percent: pct,
            failures: pipeline::failures_label(&d.meta.n_f_set),
            failure_type: d.meta.type_filter.map_or("all".into(), |c| c.name().into()),
            lp_count: d.lightpaths.len(),
            engine,
            complete: acc.complete,
            partial: acc.partial,
            total: acc.total,
            suspect_ratio: ratio,
            mean_time_ms: t * 1e3,
            samples: acc.samples,
        });
    }
    Ok(rows)
}

fn eval(cli: &Cli) -> Result<()> {
    let d = load_dataset(&cli.artifact("test.json"))?;
    let th = load_thresholds(&cli.artifact("thresholds-test.json"))?;
    let g = d.graph().map_err(runtime)?;
    let rows = eval_rows(cli, &d, &g, &th)?;
    let path = cli.artifact(&format!("eval-opm{}.csv", d.meta.opm_percent()));
    write(&path, &rows_to_csv(&rows))?;
    for r in &rows {
        println!(
            "{:<5} complete {:.4} partial {:.4} total {:.4} ({:.3} ms/sample)",
            r.engine, r.complete, r.partial, r.total, r.mean_time_ms
        );
    }
    Ok(())
}

fn report(cli: &Cli) -> Result<()> {
    let t = cli.topology()?;
    let cfg = ExperimentConfig {
        seed: cli.seed,
        lp_count: cli.lps,
        train_samples: cli.train_samples,
        test_samples: cli.test_samples,
        train: cli.train_config(),
        ..ExperimentConfig::default()
    };
    let rows = pipeline::run_report(&t, &cfg).map_err(runtime)?;
    let path = cli.artifact("report.csv");
    write(&path, &rows_to_csv(&rows))?;
    println!("{}: {} rows", path.display(), rows.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(runtime)?;
    }
    match cli.command {
        Command::TopoStats => topo_stats(cli),
        Command::Generate => generate(cli),
        Command::Fit => fit(cli),
        Command::Train => train(cli),
        Command::Eval => eval(cli),
        Command::Report => report(cli),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error: config: {}", e.kind());
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
