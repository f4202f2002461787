use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use steerkit::check::{check_equivariance, CheckConfig, Fault};
use steerkit::groups::constraint_elements;
use steerkit::irreps::{irrep_label, parse_irrep_label};

use steerkit::nbody::{evaluate, train, Dataset, SavedModel, SpringSystem, TrainConfig, FORMAT_VERSION};
use steerkit::reps::{cg, restrict};
use steerkit::{Error, GroupElement, GroupId, Irrep, Mat, Rep};

const DEFAULT_SEED: u64 = 0;
const SEED_VAR: &str = "STEERKIT_SEED";

#[derive(Parser)]
#[command(name = "steerkit", version, about = "Steerable CNNs with implicit equivariant kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    BiasOnAllFields,
    RowMajorUnvec,
}

#[derive(Subcommand)]
enum Command {
    /// Run the equivariance suite on random layers of one group.
    CheckEquivariance {
        #[arg(long)]
        group: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Also check kernels and layers conditioned on extra features.
        #[arg(long)]
        with_features: bool,
        /// Deliberately break the layers (test hook).
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Split a representation into irreps.
    Decompose {
        #[arg(long)]
        group: String,
        /// `irrep+irrep`, `group:irrep+...`, or `tensor(a,b)`.
        #[arg(long)]
        rep: String,
        /// Restrict a rep of this parent group to `--group`.
        #[arg(long)]
        restrict_from: Option<String>,
    },
    /// Simulate spring systems and write train/val/test JSON lines.
    GenNbody {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        stiffness: f64,
        #[arg(long, default_value_t = 300)]
        n_train: usize,
        #[arg(long, default_value_t = 64)]
        n_val: usize,
        #[arg(long, default_value_t = 64)]
        n_test: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a generated dataset.
    TrainNbody {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        group: String,
        #[arg(long)]
        out: PathBuf,
        /// JSON training config; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the test error of a saved model.
    EvalNbody {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a trained kernel on a grid of cell centers.
    DumpKernel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        extent: f64,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::GroupMismatch { .. } | Error::Type(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<bool, Failure>;

fn seed_or_env(seed: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| Failure::Usage(format!("{SEED_VAR}={v} is not an integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn group(s: &str) -> Result<GroupId, Failure> {
    Ok(s.parse::<GroupId>()?)
}

fn to_pretty(v: &impl Serialize) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_pretty(v)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn print(v: &impl Serialize) -> Result<(), Failure> {
    print!("{}", to_pretty(v)?);
    Ok(())
}

fn cmd_check(group_s: &str, trials: usize, seed: Option<u64>, with_features: bool, fault: Option<FaultArg>) -> Outcome {
    let cfg = CheckConfig {
        group: group(group_s)?,
        trials,
        seed: seed_or_env(seed)?,
        with_features,
        fault: fault.map(|f| match f {
            FaultArg::BiasOnAllFields => Fault::BiasOnAllFields,
            FaultArg::RowMajorUnvec => Fault::RowMajorUnvec,
        }),
    };
    let report = check_equivariance(&cfg)?;
    print(&json!({
        "format_version": FORMAT_VERSION,
        "config": report.config,
        "tolerance": report.tolerance,
        "errors": report.errors,
        "passed": report.passed,
    }))?;
    Ok(report.passed)
}

/// The matrices a `+`-separated spec stands for, built directly.
fn spec_matrices(group: GroupId, body: &str) -> Result<impl Fn(&GroupElement) -> steerkit::Result<Mat>, Failure> {
    enum Part {
        Std,
        Irrep(Irrep),
    }
    let parts = body
        .split('+')
        .map(str::trim)
        .map(|t| if t == "std" { Ok(Part::Std) } else { Ok(Part::Irrep(Irrep::new(group, parse_irrep_label(group, t)?)?)) })
        .collect::<steerkit::Result<Vec<_>>>()?;
    Ok(move |g: &GroupElement| {
        let blocks = parts
            .iter()
            .map(|p| match p {
                Part::Std => Ok(Mat::from_rows(g.matrix())),
                Part::Irrep(ir) => ir.evaluate(g),
            })
            .collect::<steerkit::Result<Vec<_>>>()?;
        Ok(Mat::block_diag(&blocks))
    })
}

fn split_spec(default: GroupId, spec: &str) -> Result<(GroupId, String), Failure> {
    match spec.rsplit_once(':') {
        Some((g, body)) => Ok((group(g)?, body.to_string())),
        None => Ok((default, spec.to_string())),
    }
}

fn cmd_decompose(group_s: &str, rep_s: &str, restrict_from: Option<&str>) -> Outcome {
    let g = group(group_s)?;
    let samples = constraint_elements::<f64>(g, 20, 0xdec0);
    let (rep, error) = if let Some(inner) = rep_s.strip_prefix("tensor(").and_then(|s| s.strip_suffix(')')) {
        if restrict_from.is_some() {
            return Err(Failure::Usage("--restrict-from does not combine with tensor(..)".into()));
        }
        let (a, b) = inner.split_once(',').ok_or_else(|| Failure::Usage(format!("expected tensor(a,b), got {rep_s}")))?;
        let d = cg(g, parse_irrep_label(g, a.trim())?, parse_irrep_label(g, b.trim())?)?;
        let err = d.reconstruction_error(&samples)?;
        (d.as_rep(), err)
    } else if let Some(parent_s) = restrict_from {
        let parent = group(parent_s)?;
        let (pg, body) = split_spec(parent, rep_s)?;
        if pg != parent {
            return Err(Failure::Usage(format!("rep is over {pg}, not {parent}")));
        }
        let full = Rep::parse_in(parent, &body)?;
        let sub = restrict(&full, g)?;
        let err = sub.max_error_against(|h| full.evaluate(&h.embed_in(parent)?), &samples)?;
        (sub, err)
    } else {
        let (pg, body) = split_spec(g, rep_s)?;
        if pg != g {
            return Err(Failure::Usage(format!("rep is over {pg}, not {g}")));
        }
        let rep = Rep::parse_in(g, &body)?;
        let direct = spec_matrices(g, &body)?;
        let err = rep.max_error_against(direct, &samples)?;
        (rep, err)
    };
    let mult: serde_json::Map<String, Value> =
        rep.multiplicities().into_iter().map(|(id, n)| (irrep_label(g, id), json!(n))).collect();
    print(&json!({
        "format_version": FORMAT_VERSION,
        "config": { "group": g, "rep": rep_s, "restrict_from": restrict_from },
        "decomposition": rep.label(),
        "spec": rep.spec(),
        "multiplicities": mult,
        "reconstruction_error": error,
    }))?;
    Ok(true)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    format_version: u32,
    system: SpringSystem,
    sizes: [usize; 3],
    seed: u64,
}

const MANIFEST: &str = "dataset.json";

fn cmd_gen(out: &Path, stiffness: f64, sizes: [usize; 3], seed: Option<u64>) -> Outcome {
    let seed = seed_or_env(seed)?;
    let system = SpringSystem::with_stiffness(stiffness);
    system.validate()?;
    let data = Dataset::generate(&system, sizes[0], sizes[1], sizes[2], seed)?;
    data.write(out)?;
    let manifest = DatasetManifest { format_version: FORMAT_VERSION, system, sizes, seed };
    write_json(&out.join(MANIFEST), &manifest)?;
    print(&manifest)?;
    Ok(true)
}

fn load_data(dir: &Path) -> Result<(DatasetManifest, Dataset), Failure> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST))?;
    Ok((manifest, Dataset::read(dir)?))
}

fn cmd_train(data_dir: &Path, group_s: &str, out: &Path, config: Option<&Path>, epochs: Option<usize>, seed: Option<u64>) -> Outcome {
    let g = group(group_s)?;
    let mut cfg: TrainConfig = match config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if seed.is_some() || config.is_none() {
        cfg.seed = seed_or_env(seed)?;
    }
    let (manifest, data) = load_data(data_dir)?;
    let trained = train(g, &manifest.system, &data, &cfg)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("model.json"), &trained.saved(&manifest.system))?;
    write_json(&out.join("metrics.json"), &trained.metrics)?;
    print(&trained.metrics)?;
    Ok(true)
}

fn cmd_eval(model_p: &Path, data_dir: &Path, out: Option<&Path>) -> Outcome {
    let saved: SavedModel = read_json(model_p)?;
    let (manifest, data) = load_data(data_dir)?;
    let (model, store) = saved.build()?;
    let test_mse = evaluate(&model, &store, saved.group, &data.test, saved.train.batch_size)?;
    let report = json!({
        "format_version": FORMAT_VERSION,
        "config": { "model": model_p, "data": data_dir, "train": saved.train },
        "group": saved.group,
        "stiffness": manifest.system.plane_stiffness,
        "test_mse": test_mse,
    });
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    print(&report)?;
    Ok(true)
}

fn cmd_dump(model_p: &Path, grid: usize, extent: f64, layer: usize, out: &Path) -> Outcome {
    let saved: SavedModel = read_json(model_p)?;
    let (model, store) = saved.build()?;
    let conv = model
        .blocks()
        .nth(layer)
        .ok_or_else(|| Failure::Usage(format!("model has no convolution layer {layer}")))?;
    let samples = conv.kernel().grid_sample(&store, grid, extent)?;
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "config": { "model": model_p, "grid": grid, "extent": extent, "layer": layer },
        "rho_in": conv.rho_in(),
        "rho_out": conv.rho_out(),
        "kernel": samples,
    });
    write_json(out, &doc)?;
    Ok(true)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::CheckEquivariance { group, trials, seed, with_features, inject_fault } => {
            cmd_check(&group, trials, seed, with_features, inject_fault)
        }
        Command::Decompose { group, rep, restrict_from } => cmd_decompose(&group, &rep, restrict_from.as_deref()),
        Command::GenNbody { out, stiffness, n_train, n_val, n_test, seed } => {
            cmd_gen(&out, stiffness, [n_train, n_val, n_test], seed)
        }
        Command::TrainNbody { data, group, out, config, epochs, seed } => {
            cmd_train(&data, &group, &out, config.as_deref(), epochs, seed)
        }
        Command::EvalNbody { model, data, out } => cmd_eval(&model, &data, out.as_deref()),
        Command::DumpKernel { model, grid, extent, layer, out } => cmd_dump(&model, grid, extent, layer, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
