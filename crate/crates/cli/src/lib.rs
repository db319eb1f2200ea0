//! Subcommands of the `lflow` binary.

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lflow::field::LagrangianField;
use lflow::metrics::{consistency_eval, mse, r2};
use lflow::odesolve::VelocityOffset;
use lflow::ot::{discrete_w2, gaussian_w2, repeated_w2, Endpoint, EndpointConfig, Gaussian};
use lflow::synthdata::{FluidGroundTruth, ObservationSet, Split};
use lflow::training::{predict_densities, Checkpoint, DensityMode, Objective, Trainer};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use config::{ExperimentConfig, ExperimentKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] lflow::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "lflow", version, about = "Lagrangian flow networks: train, evaluate and export density/velocity fields")]
pub struct Cli {
    /// Experiment configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test observation CSVs of a synthetic experiment.
    GenData,
    /// Train a field and write checkpoints and the epoch report.
    Train(TrainArgs),
    /// Density and velocity metrics of a checkpoint on an observation CSV.
    Eval(EvalArgs),
    /// Physical-consistency evaluation of a checkpoint.
    Consistency(ConsistencyArgs),
    /// Squared Wasserstein-2 estimates for a transport experiment.
    Ot(OtArgs),
    /// Field values on a regular space-time lattice.
    ExportGrid(GridArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.csv and val.csv; generated from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Observation CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate; all rows when absent.
    #[arg(long)]
    pub split: Option<Split>,
    /// Comma-separated subset of r2, mse_log1p, mse_log, mse_raw, velocity_mse, gt_velocity_mse.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Adds this constant vector to the model velocity (negative control).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub corrupt_velocity: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct OtArgs {
    /// Trained transport field; required unless --discrete-only.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Only compute sample-based and closed-form references.
    #[arg(long)]
    pub discrete_only: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated times.
    #[arg(long, value_delimiter = ',', required = true)]
    pub times: Vec<f64>,
    /// Lattice points per axis, e.g. 50,50 or 20,20,5.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    /// Lower lattice corner; lattice points include the corners when given.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Option<Vec<f64>>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        log::debug!("worker cap {n}; commands run on the calling thread");
    }
    match &cli.command {
        Command::GenData => gen_data(&cli),
        Command::Train(a) => train(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Consistency(a) => consistency(&cli, a),
        Command::Ot(a) => ot(&cli, a),
        Command::ExportGrid(a) => export_grid(&cli, a),
    }
}

fn load_config(cli: &Cli, default: ExperimentKind) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(default),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.schedule.seed = s;
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(lflow::Error::from)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn provenance(cli: &Cli, command: &str, cfg: Option<&ExperimentConfig>, extra: serde_json::Value) -> CliResult<()> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.map(|c| c.seed).or(cli.seed),
        "config": cfg,
        "details": extra,
    });
    write_json(&cli.out.join("provenance.json"), &doc)
}

fn gen_data(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli, ExperimentKind::Synthetic2d)?;
    let data_cfg = cfg.observation_config()?;
    create_out(&cli.out)?;
    let set = ObservationSet::generate(&data_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut counts = serde_json::Map::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let part = set.split(split);
        part.save(&cli.out.join(format!("{split}.csv")))?;
        counts.insert(split.to_string(), json!(part.len()));
    }
    log::info!("wrote {} observations to {}", set.len(), cli.out.display());
    provenance(
        cli,
        "gen-data",
        Some(&cfg),
        json!({ "counts": counts, "fluid": data_cfg.fluid, "train_times": data_cfg.train_time_grid() }),
    )
}

fn training_data(cfg: &ExperimentConfig, args: &TrainArgs) -> CliResult<(ObservationSet, ObservationSet)> {
    if let Some(dir) = &args.data {
        let train = ObservationSet::load(&dir.join("train.csv"))?;
        let val_path = dir.join("val.csv");
        let val = if val_path.exists() {
            ObservationSet::load(&val_path)?
        } else {
            ObservationSet::new(train.dim)
        };
        return Ok((train, val));
    }
    match cfg.kind {
        ExperimentKind::CustomObservations => {
            let path = cfg.observations.as_ref().expect("validated");
            let set = ObservationSet::load(path)?;
            Ok((set.split(Split::Train), set.split(Split::Val)))
        }
        _ => {
            let set = ObservationSet::generate(&cfg.observation_config()?, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            Ok((set.split(Split::Train), set.split(Split::Val)))
        }
    }
}

fn endpoints(cfg: &ExperimentConfig) -> CliResult<(Endpoint, Endpoint)> {
    let ot = cfg.ot.as_ref().ok_or_else(|| CliError::Usage("the config has no [ot] section".into()))?;
    let p0 = Endpoint::from_config(&ot.p0, cfg.seed)?;
    let p1 = Endpoint::from_config(&ot.p1, cfg.seed.wrapping_add(1))?;
    if p0.dim() != cfg.dim() || p1.dim() != cfg.dim() {
        return Err(CliError::Usage("endpoint and domain dimensions differ".into()));
    }
    Ok((p0, p1))
}

fn train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(cli, ExperimentKind::Synthetic2d)?;
    create_out(&cli.out)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            Trainer::resume(&ck, cfg.schedule.clone(), cfg.weights.clone())?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut field = LagrangianField::new(&cfg.architecture, cfg.domain_box(), cfg.time_span(), 0.0, &mut rng)?;
            field.stack_mut().set_inverse_options(cfg.inverse);
            Trainer::new(field, cfg.architecture.clone(), cfg.schedule.clone(), cfg.weights.clone())?
        }
    };
    let report = if cfg.kind == ExperimentKind::Ot {
        let (p0, p1) = endpoints(&cfg)?;
        let sampling = cfg.ot.as_ref().expect("endpoints checked").sampling.clone();
        trainer.fit(
            &Objective::Transport {
                p0: &p0,
                p1: &p1,
                sampling: &sampling,
            },
            Some(&cli.out),
        )?
    } else {
        let (train, val) = training_data(&cfg, args)?;
        trainer.fit(
            &Objective::Observations {
                train: &train,
                val: (!val.is_empty()).then_some(&val),
                mode: cfg.density_mode,
            },
            Some(&cli.out),
        )?
    };
    let mut w = csv::Writer::from_path(cli.out.join("epochs.csv")).map_err(lflow::Error::from)?;
    for e in &report.epochs {
        w.serialize(e).map_err(lflow::Error::from)?;
    }
    w.flush()?;
    provenance(
        cli,
        "train",
        Some(&cfg),
        json!({ "resumed_from": args.resume, "best_epoch": report.best_epoch, "epochs": trainer.epoch }),
    )
}

fn load_field(path: &Path) -> CliResult<LagrangianField> {
    Ok(Checkpoint::load(path)?.restore()?)
}

fn eval(cli: &Cli, args: &EvalArgs) -> CliResult<()> {
    const ALL: [&str; 6] = ["r2", "mse_log1p", "mse_log", "mse_raw", "velocity_mse", "gt_velocity_mse"];
    let metrics: Vec<String> = args.metrics.clone().unwrap_or_else(|| ALL[..5].iter().map(|s| s.to_string()).collect());
    if let Some(bad) = metrics.iter().find(|m| !ALL.contains(&m.as_str())) {
        return Err(CliError::Usage(format!("unknown metric `{bad}`")));
    }
    let field = load_field(&args.checkpoint)?;
    let mut set = ObservationSet::load(&args.data)?;
    if let Some(s) = args.split {
        set = set.split(s);
    }
    if set.is_empty() {
        return Err(CliError::Usage("no observations to evaluate".into()));
    }
    create_out(&cli.out)?;
    let pred = predict_densities(&field, &set)?;
    let (mut p_rho, mut o_rho) = (Vec::new(), Vec::new());
    for (p, o) in pred.iter().zip(&set.observations) {
        if let Some(r) = o.rho {
            p_rho.push(*p);
            o_rho.push(r);
        }
    }
    let positions = set.positions();
    let times = Array2::from_shape_fn((set.len(), 1), |(i, _)| set.observations[i].t);
    let velocity = field.velocity_batch(&times, &positions)?;
    let mut out = serde_json::Map::new();
    for m in &metrics {
        let value = match m.as_str() {
            "r2" => r2(&p_rho, &o_rho)?,
            "mse_log1p" | "mse_log" | "mse_raw" => {
                let mode = match m.as_str() {
                    "mse_log1p" => DensityMode::MseLog1p,
                    "mse_log" => DensityMode::MseLog,
                    _ => DensityMode::MseRaw,
                };
                let tp: Vec<f64> = p_rho.iter().map(|p| mode.transform(*p)).collect::<lflow::Result<_>>()?;
                let to: Vec<f64> = match o_rho.iter().map(|o| mode.transform(*o)).collect::<lflow::Result<Vec<_>>>() {
                    Ok(v) => v,
                    Err(e) => {
                        log::warn!("{m} skipped: {e}");
                        continue;
                    }
                };
                mse(&tp, &to)?
            }
            "velocity_mse" => {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (i, o) in set.observations.iter().enumerate() {
                    if let Some(v) = &o.velocity {
                        a.extend(velocity.row(i).iter().copied());
                        b.extend(v.iter().copied());
                    }
                }
                if a.is_empty() {
                    log::warn!("no velocity observations");
                    continue;
                }
                mse(&a, &b)?
            }
            _ => {
                let gt = FluidGroundTruth::new(lflow::synthdata::FluidConfig {
                    dim: set.dim,
                    ..Default::default()
                })?;
                let mut a = Vec::new();
                let mut b = Vec::new();
                for (i, o) in set.observations.iter().enumerate() {
                    a.extend(velocity.row(i).iter().copied());
                    b.extend(gt.velocity(o.t, &o.x)?);
                }
                mse(&a, &b)?
            }
        };
        out.insert(m.clone(), json!(value));
    }
    out.insert("count".into(), json!(set.len()));
    write_json(&cli.out.join("metrics.json"), &out)?;
    let mut w = csv::Writer::from_path(cli.out.join("metrics.csv")).map_err(lflow::Error::from)?;
    w.write_record(["metric", "value"]).map_err(lflow::Error::from)?;
    for (k, v) in &out {
        w.write_record([k.as_str(), &v.to_string()]).map_err(lflow::Error::from)?;
    }
    w.flush()?;
    let mut pw = BufWriter::new(File::create(cli.out.join("predictions.csv"))?);
    writeln!(pw, "t,rho_obs,rho_pred")?;
    for (o, p) in set.observations.iter().zip(&pred) {
        writeln!(pw, "{:?},{},{:?}", o.t, o.rho.map_or(String::new(), |r| format!("{r:?}")), p)?;
    }
    pw.flush()?;
    println!("{}", serde_json::to_string(&out).map_err(lflow::Error::from)?);
    provenance(cli, "eval", None, json!({ "checkpoint": args.checkpoint, "data": args.data }))
}

fn consistency(cli: &Cli, args: &ConsistencyArgs) -> CliResult<()> {
    let protocol = match &cli.config {
        Some(_) => {
            let cfg = load_config(cli, ExperimentKind::Synthetic2d)?;
            let mut p = cfg.consistency_protocol();
            p.solver = cfg.consistency.as_ref().map_or(cfg.solver.clone(), |c| c.solver.clone());
            p.seed = cli.seed.unwrap_or(p.seed);
            p
        }
        None => {
            let field = load_field(&args.checkpoint)?;
            let mut p = lflow::metrics::ConsistencyProtocol::synthetic(field.dim());
            p.seed = cli.seed.unwrap_or(0);
            p
        }
    };
    let field = load_field(&args.checkpoint)?;
    create_out(&cli.out)?;
    let report = match &args.corrupt_velocity {
        Some(offset) => {
            if offset.len() != field.dim() {
                return Err(CliError::Usage(format!("--corrupt-velocity needs {} components", field.dim())));
            }
            consistency_eval(
                &VelocityOffset {
                    inner: &field,
                    offset: offset.clone(),
                },
                &protocol,
            )?
        }
        None => consistency_eval(&field, &protocol)?,
    };
    report.write_csv(File::create(cli.out.join("consistency.csv"))?)?;
    write_json(&cli.out.join("consistency.json"), &report)?;
    println!("smape {:e} evaluated {} excluded {}", report.smape, report.evaluated, report.excluded);
    provenance(
        cli,
        "consistency",
        None,
        json!({ "checkpoint": args.checkpoint, "protocol": protocol, "corrupt_velocity": args.corrupt_velocity }),
    )
}

#[derive(Debug, Serialize)]
struct OtRow {
    method: String,
    pair: String,
    estimate: f64,
    std: f64,
    n: usize,
    seed: u64,
}

fn endpoint_name(cfg: &EndpointConfig) -> String {
    match cfg {
        EndpointConfig::Gaussian { mean, .. } => {
            let m: Vec<String> = mean.iter().map(|v| v.to_string()).collect();
            format!("gaussian({})", m.join(" "))
        }
        EndpointConfig::Toy { name, .. } => name.name().to_string(),
    }
}

fn ot(cli: &Cli, args: &OtArgs) -> CliResult<()> {
    let cfg = load_config(cli, ExperimentKind::Ot)?;
    if cfg.kind != ExperimentKind::Ot {
        return Err(CliError::Usage("the ot command needs an ot experiment config".into()));
    }
    if !args.discrete_only && args.checkpoint.is_none() {
        return Err(CliError::Usage("pass --checkpoint or --discrete-only".into()));
    }
    let ot = cfg.ot.clone().expect("validated");
    let (p0, p1) = endpoints(&cfg)?;
    create_out(&cli.out)?;
    let pair = format!("{}->{}", endpoint_name(&ot.p0), endpoint_name(&ot.p1));
    let mut rows = Vec::new();
    let mut push = |method: &str, estimate: f64, std: f64, n: usize| {
        println!("{method}: {estimate:.6} ± {std:.6} (n = {n})");
        rows.push(OtRow {
            method: method.into(),
            pair: pair.clone(),
            estimate,
            std,
            n,
            seed: cfg.seed,
        });
    };
    if let (EndpointConfig::Gaussian { mean: m0, cov: c0 }, EndpointConfig::Gaussian { mean: m1, cov: c1 }) = (&ot.p0, &ot.p1) {
        let w = gaussian_w2(&Gaussian::new(m0.clone(), c0.clone())?, &Gaussian::new(m1.clone(), c1.clone())?)?;
        push("gaussian", w, 0.0, 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let domain = cfg.domain_box();
    let draw = |p: &Endpoint, rng: &mut ChaCha8Rng| -> lflow::Result<Array2<f64>> {
        let d = p.dim();
        let mut rows = Vec::with_capacity(ot.samples * d);
        let mut attempts = 0usize;
        while rows.len() < ot.samples * d {
            attempts += 1;
            if attempts > 1000 * ot.samples {
                return Err(lflow::Error::invalid("endpoint has almost no mass inside the domain"));
            }
            let s = p.sample(1, rng)?;
            if domain.contains(&s.row(0).to_vec()) {
                rows.extend(s.iter().copied());
            }
        }
        Ok(Array2::from_shape_vec((ot.samples, d), rows).expect("sample count"))
    };
    let discrete_n = ot.samples.min(2000);
    let mut estimates = Vec::new();
    for _ in 0..ot.repetitions.min(5) {
        let a = draw(&p0, &mut rng)?;
        let b = draw(&p1, &mut rng)?;
        let a = a.slice(ndarray::s![..discrete_n, ..]).to_owned();
        let b = b.slice(ndarray::s![..discrete_n, ..]).to_owned();
        estimates.push(discrete_w2(&a, &b)?);
    }
    let (m, s) = mean_std(&estimates);
    push("discrete", m, s, discrete_n);
    if let Some(path) = &args.checkpoint {
        if !args.discrete_only {
            let field = load_field(path)?;
            let (t0, t1) = field.time_range();
            let res = repeated_w2(&field, || draw(&p0, &mut rng), t0, t1, ot.repetitions, ot.resample)?;
            push("lflow", res.mean, res.std, ot.samples);
            let mut tw = BufWriter::new(File::create(cli.out.join("transported.csv"))?);
            for (src, dst) in res.source.rows().into_iter().zip(res.transported.rows()) {
                let cols: Vec<String> = src.iter().chain(dst.iter()).map(|v| format!("{v:?}")).collect();
                writeln!(tw, "{}", cols.join(","))?;
            }
            tw.flush()?;
        }
    }
    let mut w = csv::Writer::from_path(cli.out.join("ot.csv")).map_err(lflow::Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(lflow::Error::from)?;
    }
    w.flush()?;
    provenance(cli, "ot", Some(&cfg), json!({ "checkpoint": args.checkpoint, "discrete_only": args.discrete_only }))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, s)
}

/// Lattice coordinates along one axis: inclusive between explicit bounds,
/// cell midpoints of the domain otherwise.
fn axis(n: usize, lo: f64, hi: f64, inclusive: bool) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if inclusive {
                if n == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            } else {
                lo + (hi - lo) * (k as f64 + 0.5) / n as f64
            }
        })
        .collect()
}

fn export_grid(cli: &Cli, args: &GridArgs) -> CliResult<()> {
    let field = load_field(&args.checkpoint)?;
    let d = field.dim();
    if args.shape.len() != d || args.shape.contains(&0) {
        return Err(CliError::Usage(format!("--shape needs {d} positive counts")));
    }
    let domain = field.domain().clone();
    let explicit = args.lower.is_some() || args.upper.is_some();
    let lower = args.lower.clone().unwrap_or_else(|| domain.lower.clone());
    let upper = args.upper.clone().unwrap_or_else(|| domain.upper.clone());
    if lower.len() != d || upper.len() != d {
        return Err(CliError::Usage(format!("--lower and --upper need {d} components")));
    }
    let axes: Vec<Vec<f64>> = (0..d).map(|j| axis(args.shape[j], lower[j], upper[j], explicit)).collect();
    create_out(&cli.out)?;
    let mut w = BufWriter::new(File::create(cli.out.join("grid.csv"))?);
    let names = ["x", "y", "z"];
    let mut header = vec!["t".to_string()];
    header.extend(names[..d].iter().map(|s| s.to_string()));
    header.push("rho".into());
    header.extend(names[..d].iter().map(|s| format!("v{s}")));
    header.extend(names[..d].iter().map(|s| format!("f{s}")));
    writeln!(w, "{}", header.join(","))?;
    let count: usize = args.shape.iter().product();
    for &t in &args.times {
        for k in 0..count {
            let mut rem = k;
            let mut x = vec![0.0; d];
            for j in (0..d).rev() {
                x[j] = axes[j][rem % args.shape[j]];
                rem /= args.shape[j];
            }
            let rho = field.density(t, &x)?;
            let v = field.velocity(t, &x)?;
            let flux = field.flux(t, &x)?;
            let mut cols = vec![format!("{t:?}")];
            cols.extend(x.iter().map(|c| format!("{c:?}")));
            cols.push(format!("{rho:?}"));
            cols.extend(v.iter().map(|c| format!("{c:?}")));
            cols.extend(flux.iter().map(|c| format!("{c:?}")));
            writeln!(w, "{}", cols.join(","))?;
        }
    }
    w.flush()?;
    provenance(cli, "export-grid", None, json!({ "checkpoint": args.checkpoint, "times": args.times, "shape": args.shape }))
}
