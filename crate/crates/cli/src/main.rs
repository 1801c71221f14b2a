mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gctf::harness::{
    binarize, make_mask, make_synthetic, preprocess_features, run_grid, CellSettings, LinkDataset,
};
use gctf::io::{read_tensor, write_report, write_tensor};
use gctf::{
    build_coupled_cp, build_coupled_tucker, build_cp, build_tucker, fit, Cost, DenseTensor,
    GctfError, LinkDims, ModelDocument, ModelSpec,
};
use log::{info, warn};

use config::{Loaded, ModelChoice};

/// Coupled non-negative tensor factorisation and link-prediction benchmarks.
#[derive(Debug, Parser)]
#[command(name = "gctf", version)]
struct Cli {
    /// TOML run configuration; relative input paths are resolved against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set engine.max_iters=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for benchmark cells.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
    /// Replace every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model and write its factors and objective trace.
    Fit,
    /// Run the link-prediction grid and write a report.
    Benchmark,
    /// Generate a synthetic dataset with its ground-truth factors.
    Synth,
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<GctfError> for Failure {
    fn from(e: GctfError) -> Self {
        let m = e.to_string();
        match e {
            GctfError::Numerical { .. } => Failure::Numerical(m),
            e if e.is_data_error() => Failure::Data(m),
            GctfError::Shape(_) => Failure::Data(m),
            _ => Failure::Usage(m),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let level = std::env::var("GCTF_LOG").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    let outcome = config::load(cli.config.as_deref(), &cli.overrides, cli.seed)
        .map_err(Failure::Usage)
        .and_then(|loaded| {
            if cli.jobs == 0 {
                return Err(Failure::Usage("--jobs must be at least 1".into()));
            }
            match cli.command {
                Command::Fit => cmd_fit(&loaded),
                Command::Benchmark => cmd_benchmark(&loaded, cli.jobs),
                Command::Synth => cmd_synth(&loaded),
            }
        });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// The raw observations named by the data section, labelled `(i,j,k)`,
/// `(i,m)` and `(j,n)`. Side matrices are only loaded when `need_side` is set.
fn load_tensors(
    loaded: &Loaded,
    need_side: bool,
) -> Result<(DenseTensor, Option<DenseTensor>, Option<DenseTensor>), Failure> {
    let data = &loaded.config.data;
    let (x1, mut x2, mut x3) = if let Some(spec) = &data.synthetic {
        if data.x1.is_some() {
            return Err(Failure::Usage(
                "data: give either file paths or a synthetic spec, not both".into(),
            ));
        }
        let (d, _) = make_synthetic(spec)?;
        (d.x1, Some(d.x2), Some(d.x3))
    } else {
        let x1 = data
            .x1
            .as_ref()
            .ok_or_else(|| Failure::Usage("data: missing `x1` (or `synthetic`)".into()))?;
        let read = |p: &Option<PathBuf>,
                    name: &str,
                    labels: &[&str]|
         -> Result<Option<DenseTensor>, Failure> {
            match p {
                Some(p) => Ok(Some(read_tensor(&loaded.resolve(p), labels)?)),
                None if need_side => Err(Failure::Usage(format!("data: missing `{name}`"))),
                None => Ok(None),
            }
        };
        (
            read_tensor(&loaded.resolve(x1), &["i", "j", "k"])?,
            read(&data.x2, "x2", &["i", "m"])?,
            read(&data.x3, "x3", &["j", "n"])?,
        )
    };
    let x1 = if data.binarize_x1 { binarize(&x1) } else { x1 };
    if data.preprocess_x3 {
        x3 = x3.map(|t| preprocess_features(&t)).transpose()?;
    }
    if !need_side {
        x2 = None;
        x3 = None;
    }
    Ok((x1, x2, x3))
}

fn fit_spec(loaded: &Loaded) -> Result<ModelSpec, Failure> {
    let m = &loaded.config.model;
    if m.kind == ModelChoice::Custom {
        let doc_path = m
            .document
            .as_ref()
            .ok_or_else(|| Failure::Usage("model: `custom` needs `document`".into()))?;
        let doc_path = loaded.resolve(doc_path);
        let text = fs::read_to_string(&doc_path)
            .map_err(|e| Failure::Data(format!("{}: {e}", doc_path.display())))?;
        let doc = ModelDocument::from_toml(&text).map_err(|e| Failure::Usage(e.to_string()))?;
        let base = doc_path.parent().unwrap_or(Path::new(""));
        return Ok(doc.to_spec(base)?);
    }

    let coupled = matches!(m.kind, ModelChoice::CoupledCp | ModelChoice::CoupledTucker);
    let (x1, x2, x3) = load_tensors(loaded, coupled)?;
    let s = x1.shape();
    let mut spec = match m.kind {
        ModelChoice::Cp => build_cp([s[0], s[1], s[2]], m.components)?,
        ModelChoice::Tucker => build_tucker([s[0], s[1], s[2]], m.core)?,
        ModelChoice::CoupledCp | ModelChoice::CoupledTucker => {
            let (x2, x3) = (x2.as_ref().expect("loaded"), x3.as_ref().expect("loaded"));
            let dims = LinkDims::new(s[0], s[1], s[2], x2.shape()[1], x3.shape()[1]);
            if m.kind == ModelChoice::CoupledCp {
                build_coupled_cp(dims, m.components)?
            } else {
                build_coupled_tucker(dims, m.core)?
            }
        }
        ModelChoice::Custom => unreachable!(),
    };
    for (name, t) in [("X1", Some(x1)), ("X2", x2), ("X3", x3)] {
        if let Some(t) = t {
            let mask = gctf::Mask::ones(t.indices().to_vec())?;
            spec.set_observation(name, t, mask)?;
        }
    }
    Ok(spec)
}

fn cmd_fit(loaded: &Loaded) -> CmdResult {
    let cfg = &loaded.config;
    let mut spec = fit_spec(loaded)?;
    if let Some(plan) = &cfg.mask {
        let obs = spec
            .observations
            .first()
            .ok_or_else(|| Failure::Usage("model has no observations".into()))?;
        let (mask, heldout) = make_mask(plan, obs.visible())?;
        info!(
            "{}: hiding {} entries ({})",
            obs.name,
            heldout.len(),
            plan.kind
        );
        let name = obs.name.clone();
        spec.set_mask(&name, mask)?;
    }
    let settings = cfg.fit_settings();
    settings
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if settings.cost == Cost::Is {
        warn!(
            "the IS cost has no monotonicity guarantee; the objective may increase between sweeps"
        );
    }
    spec.ensure_valid()
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let result = fit(&spec, &settings)?;
    let dir = &cfg.output.dir;
    for (name, t) in result.factors.iter() {
        write_tensor(t, name, &dir.join(format!("{name}.tns")))?;
    }
    let mut trace = String::from("# sweep objective\n");
    let _ = writeln!(trace, "0 {:.16e}", result.initial_objective);
    for (n, f) in result.objective_trace.iter().enumerate() {
        let _ = writeln!(trace, "{} {f:.16e}", n + 1);
    }
    let trace_path = dir.join("trace.txt");
    fs::write(&trace_path, trace).map_err(|e| GctfError::io(&trace_path, e))?;
    println!(
        "{} sweeps, {} objective {:.6e} -> {:.6e}{}",
        result.iterations_run,
        settings.cost,
        result.initial_objective,
        result.final_objective(),
        if result.converged { " (converged)" } else { "" }
    );
    Ok(())
}

fn cmd_benchmark(loaded: &Loaded, jobs: usize) -> CmdResult {
    let cfg = &loaded.config;
    let (x1, x2, x3) = load_tensors(loaded, true)?;
    let dataset = LinkDataset::new(x1, x2.expect("loaded"), x3.expect("loaded"))?;
    let settings = CellSettings {
        components: cfg.model.components,
        core: cfg.model.core,
        engine: cfg.engine.clone(),
        record_timing: cfg.output.record_timing,
    };
    settings
        .engine
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let report = run_grid(&dataset, &cfg.grid, &settings, jobs)?;
    let path = cfg.output.dir.join(&cfg.output.report);
    write_report(&report, &path)?;
    print!("{}", report.summary_table());

    let failed = report.failed_cells();
    if failed > 0 {
        warn!("{failed} of {} cells produced no AUC", report.records.len());
    }
    if !report.records.is_empty() && failed == report.records.len() {
        let first = report.records[0].error.clone().unwrap_or_default();
        return Err(Failure::Numerical(format!(
            "every cell failed; first error: {first}"
        )));
    }
    info!("report written to {}", path.display());
    Ok(())
}

fn cmd_synth(loaded: &Loaded) -> CmdResult {
    let cfg = &loaded.config;
    let spec = cfg
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| Failure::Usage("synth needs a [data.synthetic] section".into()))?;
    let (dataset, truth) = make_synthetic(spec)?;
    let dir = &cfg.output.dir;
    write_tensor(&dataset.x1, "X1", &dir.join("x1.tns"))?;
    write_tensor(&dataset.x2, "X2", &dir.join("x2.tns"))?;
    write_tensor(&dataset.x3, "X3", &dir.join("x3.tns"))?;
    for (name, t) in truth.iter() {
        write_tensor(t, name, &dir.join(format!("truth_{name}.tns")))?;
    }
    println!(
        "wrote dataset and {} ground-truth factors to {}",
        truth.len(),
        dir.display()
    );
    Ok(())
}
