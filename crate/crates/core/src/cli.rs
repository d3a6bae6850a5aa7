//! Command-line front end.
//!
//! Every subcommand echoes its resolved flags as `key=value` lines before running.
//! Failures print one `error: ...` line on stderr; bad flags exit 2, runtime
//! failures exit 1.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::curriculum::{PacingConfig, DEFAULT_E_INTERVAL};
use crate::error::{Error, Result};
use crate::io::{self, KeyValues};
use crate::metrics;
use crate::net::{ConvNet, DEFAULT_WIDTH};
use crate::perturb::{self, CorruptionSpec, Family, Ladders};
use crate::pipeline::{self, Mode, RobustnessRow, RunConfig, Teacher, TrainConfig};
use crate::report;
use crate::synth::{self, SceneSpec};

const TEACHER_CKPT: &str = "teacher.ckpt";
const STUDENT_CKPT: &str = "student.ckpt";
const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(
    name = "pcd",
    version,
    about = "Paced-curriculum distillation for segmentation"
)]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file supplying defaults for the subcommand's flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel work (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic segmentation dataset folder
    GenData(GenData),
    /// Train a cross-entropy teacher and fit its temperature
    TrainTeacher(TrainTeacher),
    /// Refit a teacher's temperature on a dataset
    Calibrate(Calibrate),
    /// Train a student (iid, sd, pcd, pcd_no_bu)
    Distill(Distill),
    /// Write a corrupted copy of a dataset folder
    Corrupt(Corrupt),
    /// Evaluate a checkpoint on a dataset
    Evaluate(Evaluate),
    /// Evaluate checkpoints across corruption families and severities
    SweepRobustness(SweepRobustness),
    /// Train one P-CD student per (beta, gamma) pair
    SweepBetaGamma(SweepBetaGamma),
    /// Compare finished runs: table plus robustness plots
    Report(Report),
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Index of the first scene in the seeded stream
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 1)]
    min_shapes: usize,
    #[arg(long, default_value_t = 3)]
    max_shapes: usize,
    /// Pixel noise standard deviation
    #[arg(long, default_value_t = 0.12)]
    noise: f64,
}

#[derive(Debug, Args)]
struct Train {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Hidden channels of the network
    #[arg(long = "net-width", default_value_t = DEFAULT_WIDTH)]
    net_width: usize,
    /// Distillation temperature
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Weight of the KL term
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

impl Train {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            width: self.net_width,
            seed: self.seed,
            tau: self.tau,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Args)]
struct TrainTeacher {
    #[arg(long)]
    data: PathBuf,
    /// Run directory
    #[arg(long)]
    out: PathBuf,
    /// Optional validation folder evaluated after training
    #[arg(long)]
    val: Option<PathBuf>,
    #[command(flatten)]
    train: Train,
}

#[derive(Debug, Args)]
struct Calibrate {
    /// Teacher checkpoint or run directory
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Run directory receiving the recalibrated teacher
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Pacing {
    /// Initial fraction of admitted pixels
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Epoch at which every pixel is admitted
    #[arg(long, default_value_t = 50)]
    gamma: usize,
    #[arg(long = "e-interval", default_value_t = DEFAULT_E_INTERVAL)]
    e_interval: usize,
}

#[derive(Debug, Args)]
struct Distill {
    #[arg(long, default_value = "pcd")]
    mode: Mode,
    #[arg(long)]
    data: PathBuf,
    /// Teacher checkpoint or run directory (required unless --mode iid)
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[command(flatten)]
    train: Train,
    #[command(flatten)]
    pacing: Pacing,
}

#[derive(Debug, Args)]
struct Corrupt {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    family: Family,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    severity: u8,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args)]
struct Evaluate {
    /// Checkpoint or run directory
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepRobustness {
    /// `name=path` or `path`; repeatable
    #[arg(long = "model", required = true, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these families; repeatable (default: all 15)
    #[arg(long = "family", value_delimiter = ',')]
    families: Vec<Family>,
    /// Restrict to these severities; repeatable (default: 1..5)
    #[arg(long = "severity", value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=5))]
    severities: Vec<u8>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SweepBetaGamma {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated β values
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1")]
    betas: Vec<f64>,
    /// Comma-separated γ values
    #[arg(long, value_delimiter = ',', default_value = "10,25,50")]
    gammas: Vec<usize>,
    #[arg(long = "e-interval", default_value_t = DEFAULT_E_INTERVAL)]
    e_interval: usize,
    #[command(flatten)]
    train: Train,
}

#[derive(Debug, Args)]
struct Report {
    /// Run directory; repeatable
    #[arg(long = "run", required = true, value_delimiter = ',')]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Flag-level failure, reported with exit code 2.
struct Usage(String);

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn main() -> i32 {
    run(std::env::args_os()
        .map(|a| a.to_string_lossy().into_owned())
        .collect())
}

/// Parse `argv` (program name first) and dispatch; returns the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    match run_inner(argv) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            1
        }
    }
}

fn run_inner(argv: Vec<String>) -> std::result::Result<(), Failure> {
    let argv = apply_config_file(argv)?;
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            return Err(Failure::Usage(
                first.trim_start_matches("error: ").to_string(),
            ));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let resolved = resolved_flags(name, sub, &matches);
    print!("{}", io::format_key_values(&resolved));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Usage(format!("cannot start {} workers: {e}", cli.jobs)))?;
    pool.install(|| dispatch(cli.command, &resolved))
}

/// Splice `--config` entries in front of the explicit flags, so explicit
/// flags (parsed later) override them.
fn apply_config_file(argv: Vec<String>) -> std::result::Result<Vec<String>, Failure> {
    let pos = argv
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else { return Ok(argv) };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => argv
            .get(pos + 1)
            .cloned()
            .ok_or_else(|| Usage("a value is required for '--config <CONFIG>'".into()))?,
    };
    let kv = io::load_key_values(&path)?;
    let sub_pos = argv
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-') && Command::has_subcommand(a))
        .map(|p| p + 1);
    let Some(sub_pos) = sub_pos else {
        return Ok(argv);
    };
    let mut out = argv[..=sub_pos].to_vec();
    for (k, v) in kv.iter().filter(|(k, _)| k.as_str() != "command") {
        out.push(format!("--{}", k.replace('_', "-")));
        out.push(v.clone());
    }
    out.extend_from_slice(&argv[sub_pos + 1..]);
    Ok(out)
}

impl Command {
    fn has_subcommand(name: &str) -> bool {
        Cli::command()
            .get_subcommands()
            .any(|c| c.get_name() == name)
    }
}

fn resolved_flags(name: &str, sub: &ArgMatches, top: &ArgMatches) -> KeyValues {
    let mut kv = BTreeMap::new();
    kv.insert("command".to_string(), name.to_string());
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let is_arg = |id: &str| {
        cmd.get_arguments()
            .chain(sub_cmd.get_arguments())
            .any(|a| a.get_id().as_str() == id)
    };
    for m in [top, sub] {
        for id in m.ids() {
            let id = id.as_str();
            if id == "config" || !is_arg(id) {
                continue;
            }
            if let Ok(Some(vals)) = m.try_get_raw(id) {
                let vals: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
                kv.insert(id.replace('_', "-"), vals.join(","));
            }
        }
    }
    kv
}

fn dispatch(command: Command, resolved: &KeyValues) -> std::result::Result<(), Failure> {
    match command {
        Command::GenData(a) => gen_data(a, resolved)?,
        Command::TrainTeacher(a) => train_teacher(a, resolved)?,
        Command::Calibrate(a) => calibrate(a)?,
        Command::Distill(a) => distill(a, resolved)?,
        Command::Corrupt(a) => corrupt(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::SweepRobustness(a) => sweep_robustness(a, resolved)?,
        Command::SweepBetaGamma(a) => sweep_beta_gamma(a, resolved)?,
        Command::Report(a) => report_runs(a)?,
    }
    Ok(())
}

/// Accept either a checkpoint directory or a run directory holding `ckpt`.
fn resolve_checkpoint(path: &Path, ckpt: &str) -> PathBuf {
    if path.join("manifest.txt").is_file() {
        path.to_path_buf()
    } else {
        path.join(ckpt)
    }
}

fn load_teacher(path: &Path) -> Result<Teacher> {
    let dir = resolve_checkpoint(path, TEACHER_CKPT);
    if !dir.join("manifest.txt").is_file() {
        return Err(Error::MissingArtifact(dir));
    }
    Teacher::load(dir)
}

fn load_model(path: &Path) -> Result<ConvNet> {
    let mut dir = resolve_checkpoint(path, STUDENT_CKPT);
    if !dir.join("manifest.txt").is_file() {
        dir = path.join(TEACHER_CKPT);
    }
    if !dir.join("manifest.txt").is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(ConvNet::load(dir)?.0)
}

fn write_eval(net: &ConvNet, data: &Path, out: &Path) -> Result<metrics::EvalResult> {
    let ds = synth::load_dataset(data)?;
    let (per_image, agg) = pipeline::evaluate_dataset(net, &ds)?;
    io::write_text(out.join("eval.csv"), &pipeline::eval_csv(&per_image, &agg))?;
    println!(
        "eval mean_dsc={:.6} mean_iou={:.6} mean_precision={:.6}",
        agg.mean_dsc, agg.mean_iou, agg.mean_precision
    );
    Ok(agg)
}

fn gen_data(a: GenData, resolved: &KeyValues) -> std::result::Result<(), Failure> {
    let spec = SceneSpec {
        height: a.height,
        width: a.width,
        classes: a.classes,
        min_shapes: a.min_shapes,
        max_shapes: a.max_shapes,
        class_means: SceneSpec::spaced_means(a.classes),
        noise: a.noise,
        seed: a.seed,
    };
    spec.validate().map_err(|e| Usage(e.to_string()))?;
    let ds = synth::generate_range(&spec, a.start, a.n).map_err(|e| Usage(e.to_string()))?;
    let mut manifest = spec.to_key_values();
    manifest.insert("start".into(), resolved["start"].clone());
    synth::save_dataset(&ds, &a.out, &manifest)?;
    println!("wrote {} scenes to {}", ds.len(), a.out.display());
    Ok(())
}

fn train_teacher(a: TrainTeacher, resolved: &KeyValues) -> std::result::Result<(), Failure> {
    let cfg = a.train.config();
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    let ds = synth::load_dataset(&a.data)?;
    let run = pipeline::train_teacher(&ds, &cfg)?;
    io::create_dir(&a.out)?;
    io::save_key_values(resolved, a.out.join(CONFIG_FILE))?;
    let mut extra = cfg.to_key_values();
    extra.insert("epoch".into(), cfg.epochs.to_string());
    run.teacher.save(a.out.join(TEACHER_CKPT), &extra)?;
    io::write_text(
        a.out.join("calibration.csv"),
        &format!(
            "{}\n{}\n",
            crate::calibration::CalibrationReport::CSV_HEADER,
            run.report.csv_row()
        ),
    )?;
    io::write_text(a.out.join("losses.csv"), &pipeline::batch_csv(&run.log))?;
    println!(
        "teacher T={:.6} nll {:.6} -> {:.6}",
        run.report.temperature.value(),
        run.report.nll_before,
        run.report.nll_after
    );
    if let Some(val) = &a.val {
        write_eval(&run.teacher.net, val, &a.out)?;
    }
    Ok(())
}

fn calibrate(a: Calibrate) -> std::result::Result<(), Failure> {
    let dir = resolve_checkpoint(&a.teacher, TEACHER_CKPT);
    if !dir.join("manifest.txt").is_file() {
        return Err(Error::MissingArtifact(dir).into());
    }
    let (net, manifest) = ConvNet::load(&dir)?;
    let ds = synth::load_dataset(&a.data)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let report = pipeline::calibrate(&net, &ds, &all)?;
    io::create_dir(&a.out)?;
    let teacher = Teacher {
        net,
        temperature: report.temperature,
    };
    teacher.save(a.out.join(TEACHER_CKPT), &manifest)?;
    io::write_text(
        a.out.join("calibration.csv"),
        &format!(
            "{}\n{}\n",
            crate::calibration::CalibrationReport::CSV_HEADER,
            report.csv_row()
        ),
    )?;
    println!(
        "T={:.6} ece {:.6} -> {:.6}",
        report.temperature.value(),
        report.ece_before,
        report.ece_after
    );
    Ok(())
}

fn distill(a: Distill, resolved: &KeyValues) -> std::result::Result<(), Failure> {
    let train = a.train.config();
    let pacing = if a.mode.is_curriculum() {
        Some(
            PacingConfig::new(a.pacing.beta, a.pacing.gamma, a.pacing.e_interval)
                .map_err(|e| Usage(e.to_string()))?,
        )
    } else {
        None
    };
    let cfg = RunConfig::new(a.mode, train, pacing).map_err(|e| Usage(e.to_string()))?;
    let teacher = match (&a.teacher, a.mode.needs_teacher()) {
        (None, true) => return Err(Usage("missing required flag: --teacher".into()).into()),
        (Some(p), true) => Some(load_teacher(p)?),
        _ => None,
    };
    let ds = synth::load_dataset(&a.data)?;
    let run = pipeline::distill_student(&ds, teacher.as_ref(), &cfg)?;
    io::create_dir(&a.out)?;
    io::save_key_values(resolved, a.out.join(CONFIG_FILE))?;
    let mut extra = cfg.to_key_values();
    extra.insert("kind".into(), "student".into());
    extra.insert("epoch".into(), cfg.train.epochs.to_string());
    run.net.save(a.out.join(STUDENT_CKPT), &extra)?;
    io::write_text(
        a.out.join("curriculum.csv"),
        &pipeline::curriculum_csv(&run.curriculum),
    )?;
    io::write_text(a.out.join("losses.csv"), &pipeline::batch_csv(&run.log))?;
    if run.log.skipped_steps > 0 {
        eprintln!(
            "warning: {} batches had no admitted pixels",
            run.log.skipped_steps
        );
    }
    if let Some(mu) = run.mu_init {
        println!("mu_init={mu:.6}");
    }
    if let Some(val) = &a.val {
        write_eval(&run.net, val, &a.out)?;
    }
    Ok(())
}

fn corrupt(a: Corrupt) -> std::result::Result<(), Failure> {
    let ladders = Ladders::from_env()?;
    let spec =
        CorruptionSpec::new(a.family, a.severity, a.seed).map_err(|e| Usage(e.to_string()))?;
    perturb::corrupt_dataset(&a.data, &a.out, &spec, &ladders)?;
    println!(
        "wrote {} severity {} to {}",
        a.family,
        a.severity,
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: Evaluate) -> std::result::Result<(), Failure> {
    let net = load_model(&a.model)?;
    io::create_dir(&a.out)?;
    write_eval(&net, &a.data, &a.out)?;
    Ok(())
}

fn model_name(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) => (name.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(spec);
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

fn write_plots(rows: &[RobustnessRow], out: &Path) -> Result<()> {
    let dir = out.join("plots");
    io::create_dir(&dir)?;
    for (name, svg) in pipeline::robustness_plots(rows) {
        io::write_text(dir.join(name), &svg)?;
    }
    Ok(())
}

fn sweep_robustness(a: SweepRobustness, resolved: &KeyValues) -> std::result::Result<(), Failure> {
    let ladders = Ladders::from_env()?;
    let models = a
        .models
        .iter()
        .map(|m| {
            let (name, path) = model_name(m);
            if name.contains(',') {
                return Err(Usage(format!("model name may not contain a comma: {name}")).into());
            }
            Ok((name, load_model(&path)?))
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    let families = if a.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        a.families
    };
    let mut severities = vec![0u8];
    if a.severities.is_empty() {
        severities.extend(1..=5);
    } else {
        severities.extend(a.severities);
    }
    severities.sort_unstable();
    severities.dedup();
    let clean = synth::load_dataset(&a.data)?;
    let rows =
        pipeline::robustness_sweep(&models, &clean, &families, &severities, a.seed, &ladders)?;
    io::create_dir(&a.out)?;
    io::save_key_values(resolved, a.out.join(CONFIG_FILE))?;
    io::write_text(
        a.out.join("robustness.csv"),
        &pipeline::robustness_csv(&rows),
    )?;
    write_plots(&rows, &a.out)?;
    println!(
        "wrote {} rows to {}",
        rows.len(),
        a.out.join("robustness.csv").display()
    );
    Ok(())
}

fn sweep_beta_gamma(a: SweepBetaGamma, resolved: &KeyValues) -> std::result::Result<(), Failure> {
    if a.betas.is_empty() || a.gammas.is_empty() {
        return Err(Usage("beta/gamma grid is empty".into()).into());
    }
    for (&b, &g) in a.betas.iter().zip(a.gammas.iter().cycle()) {
        PacingConfig::new(b, g, a.e_interval).map_err(|e| Usage(e.to_string()))?;
    }
    for &g in &a.gammas {
        PacingConfig::new(1.0, g, a.e_interval).map_err(|e| Usage(e.to_string()))?;
    }
    let base = RunConfig::new(
        Mode::Pcd,
        a.train.config(),
        Some(
            PacingConfig::new(a.betas[0], a.gammas[0], a.e_interval)
                .map_err(|e| Usage(e.to_string()))?,
        ),
    )
    .map_err(|e| Usage(e.to_string()))?;
    let teacher = load_teacher(&a.teacher)?;
    let train = synth::load_dataset(&a.data)?;
    let val = synth::load_dataset(&a.val)?;
    let cells = pipeline::beta_gamma_grid(&train, &val, &teacher, &a.betas, &a.gammas, &base)?;
    io::create_dir(&a.out)?;
    io::save_key_values(resolved, a.out.join(CONFIG_FILE))?;
    io::write_text(a.out.join("beta_gamma.csv"), &pipeline::grid_csv(&cells))?;
    println!(
        "wrote {} cells to {}",
        cells.len(),
        a.out.join("beta_gamma.csv").display()
    );
    Ok(())
}

/// Overall mean row of a run's `eval.csv`.
fn read_eval_means(run: &Path) -> Result<[f64; 3]> {
    let path = run.join("eval.csv");
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    let text = io::read_text(&path)?;
    let row = text
        .lines()
        .find(|l| l.starts_with("all,mean,"))
        .ok_or_else(|| Error::MissingArtifact(path.clone()))?;
    let vals: Vec<f64> = row
        .split(',')
        .skip(2)
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::KeyValue {
            path: path.clone(),
            msg: format!("bad mean row {row}"),
        })?;
    match vals[..] {
        [d, i, p] => Ok([d, i, p]),
        _ => Err(Error::KeyValue {
            path,
            msg: format!("bad mean row {row}"),
        }),
    }
}

fn run_label(run: &Path) -> String {
    run.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run.display().to_string())
}

fn report_runs(a: Report) -> std::result::Result<(), Failure> {
    let mut rows = Vec::new();
    let mut robustness = Vec::new();
    for run in &a.runs {
        let label = run_label(run);
        let mode = match io::load_key_values(run.join(CONFIG_FILE)) {
            Ok(kv) => kv.get("mode").cloned().unwrap_or_else(|| "teacher".into()),
            Err(_) => "-".into(),
        };
        let [d, i, p] = read_eval_means(run)?;
        rows.push(vec![
            label.clone(),
            mode,
            format!("{d:.6}"),
            format!("{i:.6}"),
            format!("{p:.6}"),
        ]);
        let rpath = run.join("robustness.csv");
        if rpath.is_file() {
            for mut r in pipeline::parse_robustness_csv(&io::read_text(&rpath)?)? {
                if a.runs.len() > 1 {
                    r.model = format!("{label}/{}", r.model);
                }
                robustness.push(r);
            }
        }
    }
    let header = ["run", "mode", "dsc", "iou", "precision"];
    let mut csv = header.join(",");
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.join(","));
        csv.push('\n');
    }
    let table = report::aligned_table(&header, &rows);
    io::create_dir(&a.out)?;
    io::write_text(a.out.join("comparison.csv"), &csv)?;
    io::write_text(a.out.join("comparison.txt"), &table)?;
    if !robustness.is_empty() {
        io::write_text(
            a.out.join("robustness.csv"),
            &pipeline::robustness_csv(&robustness),
        )?;
        write_plots(&robustness, &a.out)?;
    }
    print!("{table}");
    Ok(())
}
