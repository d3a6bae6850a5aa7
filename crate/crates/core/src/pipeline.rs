//! End-to-end orchestration: teacher training and calibration, curriculum
//! distillation of a student, evaluation, robustness sweeps and the β×γ grid.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::calibration::{self, CalibrationReport, Temperature};
use crate::curriculum::{self, CurriculumState, PacingConfig};
use crate::distill::Objective;
use crate::error::{Error, Result};
use crate::io::{self, KeyValues};
use crate::metrics::{self, EvalResult};
use crate::net::{AdamState, ConvNet, Grads, DEFAULT_WIDTH};
use crate::perturb::{self, CorruptionSpec, Family, Ladders};
use crate::report::{LinePlot, Series};
use crate::rng::{derive_seed, Rng};
use crate::svls::{self, SvlsKernel};
use crate::synth::Dataset;
use crate::tensor::{argmax_channels, LabelMap, TensorF};

const STREAM_SPLIT: u64 = 1;
const STREAM_TEACHER_INIT: u64 = 2;
const STREAM_STUDENT_INIT: u64 = 3;
const STREAM_ORDER: u64 = 4;
const STREAM_CORRUPTION: u64 = 5;

pub const CALIBRATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Cross-entropy only.
    Iid,
    /// Unmasked CE + KL.
    Sd,
    /// CE + KL masked by both prediction and boundary uncertainty.
    Pcd,
    /// CE + KL masked by prediction uncertainty only.
    PcdNoBu,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Iid => "iid",
            Mode::Sd => "sd",
            Mode::Pcd => "pcd",
            Mode::PcdNoBu => "pcd_no_bu",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Mode::Iid
    }

    pub fn is_curriculum(self) -> bool {
        matches!(self, Mode::Pcd | Mode::PcdNoBu)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Mode::Iid, Mode::Sd, Mode::Pcd, Mode::PcdNoBu]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub width: usize,
    pub seed: u64,
    pub tau: f64,
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch: 16,
            lr: 1e-3,
            width: DEFAULT_WIDTH,
            seed: 7,
            tau: 1.0,
            alpha: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.width == 0 {
            return Err(Error::InvalidArgument(
                "network width must be positive".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument("alpha must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("epochs".into(), self.epochs.to_string());
        kv.insert("batch".into(), self.batch.to_string());
        kv.insert("lr".into(), self.lr.to_string());
        kv.insert("width".into(), self.width.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        kv.insert("tau".into(), self.tau.to_string());
        kv.insert("alpha".into(), self.alpha.to_string());
        kv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub train: TrainConfig,
    /// Required for the curriculum modes.
    pub pacing: Option<PacingConfig>,
    /// Start the curriculum at μ = 1, admitting every pixel from the first epoch.
    pub force_full_curriculum: bool,
}

impl RunConfig {
    pub fn new(mode: Mode, train: TrainConfig, pacing: Option<PacingConfig>) -> Result<Self> {
        let cfg = RunConfig {
            mode,
            train,
            pacing,
            force_full_curriculum: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.mode.is_curriculum() && self.pacing.is_none() {
            return Err(Error::InvalidArgument(format!(
                "mode {} needs a pacing configuration",
                self.mode
            )));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = self.train.to_key_values();
        kv.insert("mode".into(), self.mode.to_string());
        if let Some(p) = &self.pacing {
            kv.insert("beta".into(), p.beta.to_string());
            kv.insert("gamma".into(), p.gamma.to_string());
            kv.insert("e_interval".into(), p.e_interval.to_string());
        }
        if self.force_full_curriculum {
            kv.insert("force_full_curriculum".into(), "true".into());
        }
        kv
    }
}

/// Frozen teacher network together with its fitted temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub net: ConvNet,
    pub temperature: Temperature,
}

impl Teacher {
    pub fn save(&self, dir: impl AsRef<Path>, extra: &KeyValues) -> Result<()> {
        let mut kv = extra.clone();
        kv.insert("kind".into(), "teacher".into());
        kv.insert(
            "temperature".into(),
            format!("{}", self.temperature.value()),
        );
        self.net.save(dir, &kv)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (net, kv) = ConvNet::load(dir)?;
        let temperature = match kv.get("temperature") {
            Some(_) => {
                Temperature::new(io::kv_get(&kv, "temperature", &dir.join("manifest.txt"))?)?
            }
            None => Temperature::default(),
        };
        Ok(Teacher { net, temperature })
    }

    /// Prediction uncertainty `1 - max softmax(z / T)` per pixel.
    pub fn prediction_uncertainty(&self, logits: &TensorF) -> Result<TensorF> {
        calibration::prediction_uncertainty(&calibration::scaled_softmax(logits, self.temperature))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumLog {
    pub epoch: usize,
    pub mu: f64,
    pub active_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub batches: Vec<BatchLog>,
    /// Batches whose admitted-pixel count was zero; no optimizer step was taken.
    pub skipped_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub teacher: Teacher,
    pub report: CalibrationReport,
    pub train_indices: Vec<usize>,
    pub calibration_indices: Vec<usize>,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub net: ConvNet,
    pub log: TrainLog,
    pub curriculum: Vec<CurriculumLog>,
    pub mu_init: Option<f64>,
}

/// Seeded split of `n` samples into training and held-out calibration indices.
pub fn calibration_split(n: usize, seed: u64, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(derive_seed(seed, STREAM_SPLIT)).shuffle(&mut idx);
    if n < 2 {
        return (idx.clone(), idx);
    }
    let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut calib = idx[..held].to_vec();
    let mut train = idx[held..].to_vec();
    calib.sort_unstable();
    train.sort_unstable();
    (train, calib)
}

fn check_dataset(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset has no samples".into()));
    }
    Ok(())
}

pub fn logits_for(net: &ConvNet, ds: &Dataset, indices: &[usize]) -> Result<Vec<TensorF>> {
    indices
        .par_iter()
        .map(|&i| net.forward(&ds.samples[i].image))
        .collect()
}

/// Per-sample admission weights for one epoch; `None` admits every pixel.
type Weights = Option<Vec<Vec<f64>>>;

/// Mini-batch Adam over `indices`, reshuffled every epoch from the run seed.
/// The batch loss is the masked per-pixel loss summed over the batch divided
/// by the number of admitted pixels in the batch.
fn train_loop(
    net: &mut ConvNet,
    ds: &Dataset,
    indices: &[usize],
    teacher_logits: Option<&[TensorF]>,
    objective: &Objective,
    cfg: &TrainConfig,
    mut weights_for_epoch: impl FnMut(usize) -> Weights,
) -> Result<TrainLog> {
    let mut adam = AdamState::new(cfg.lr);
    let mut order_rng = Rng::new(derive_seed(cfg.seed, STREAM_ORDER));
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let mut log = TrainLog {
        batches: Vec::new(),
        skipped_steps: 0,
    };
    for epoch in 0..cfg.epochs {
        let weights = weights_for_epoch(epoch);
        order_rng.shuffle(&mut order);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let net_ref = &*net;
            let parts: Vec<(f64, usize, Option<Grads>)> = chunk
                .par_iter()
                .map(|&pos| {
                    let sample = &ds.samples[indices[pos]];
                    let w = weights.as_ref().map(|ws| ws[pos].as_slice());
                    let cache = net_ref.forward_cached(&sample.image)?;
                    let teacher = teacher_logits.map(|t| &t[pos]);
                    let out = objective.evaluate(&cache.logits, teacher, &sample.labels, w)?;
                    let grads = if out.maps.active_count > 0 {
                        Some(net_ref.backward(&cache, &out.grad)?)
                    } else {
                        None
                    };
                    Ok((out.masked_sum, out.maps.active_count, grads))
                })
                .collect::<Result<_>>()?;
            let active: usize = parts.iter().map(|p| p.1).sum();
            if active == 0 {
                log.skipped_steps += 1;
                log.batches.push(BatchLog {
                    epoch,
                    batch: b,
                    loss: 0.0,
                    active: 0,
                });
                continue;
            }
            let mut total = Grads::zeros_like(net);
            let mut loss = 0.0;
            for (sum, _, g) in &parts {
                loss += sum;
                if let Some(g) = g {
                    total.add_assign(g);
                }
            }
            total.scale(1.0 / active as f64);
            adam.step_net(net, &total)?;
            log.batches.push(BatchLog {
                epoch,
                batch: b,
                loss: loss / active as f64,
                active,
            });
        }
    }
    Ok(log)
}

/// Train a CE-only teacher on 80% of `train`, then fit its temperature on the held-out 20%.
pub fn train_teacher(train: &Dataset, cfg: &TrainConfig) -> Result<TeacherRun> {
    check_dataset(train)?;
    cfg.validate()?;
    let (train_idx, calib_idx) = calibration_split(train.len(), cfg.seed, CALIBRATION_FRACTION);
    let mut net = ConvNet::new(
        train.in_channels(),
        cfg.width,
        train.classes,
        derive_seed(cfg.seed, STREAM_TEACHER_INIT),
    );
    let objective = Objective {
        tau: cfg.tau,
        alpha: 0.0,
    };
    let log = train_loop(&mut net, train, &train_idx, None, &objective, cfg, |_| None)?;
    let report = calibrate(&net, train, &calib_idx)?;
    Ok(TeacherRun {
        teacher: Teacher {
            net,
            temperature: report.temperature,
        },
        report,
        train_indices: train_idx,
        calibration_indices: calib_idx,
        log,
    })
}

/// Fit a temperature for `net` on the given samples.
pub fn calibrate(net: &ConvNet, ds: &Dataset, indices: &[usize]) -> Result<CalibrationReport> {
    let logits = logits_for(net, ds, indices)?;
    let labels: Vec<LabelMap> = indices
        .iter()
        .map(|&i| ds.samples[i].labels.clone())
        .collect();
    calibration::fit_temperature(&logits, &labels)
}

/// Static per-pixel uncertainties of the training set.
#[derive(Debug, Clone)]
pub struct UncertaintyMaps {
    pub pu: Vec<TensorF>,
    pub bu: Vec<TensorF>,
}

impl UncertaintyMaps {
    pub fn compute(teacher: &Teacher, teacher_logits: &[TensorF], ds: &Dataset) -> Result<Self> {
        let kernel = SvlsKernel::default();
        let pu = teacher_logits
            .par_iter()
            .map(|z| teacher.prediction_uncertainty(z))
            .collect::<Result<Vec<_>>>()?;
        let bu = ds
            .samples
            .par_iter()
            .map(|s| svls::boundary_uncertainty(&s.labels, &kernel))
            .collect();
        Ok(UncertaintyMaps { pu, bu })
    }

    pub fn pooled_pu(&self) -> Vec<f64> {
        self.pu
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Binary per-pixel weights at threshold `mu`; BU is ignored when `use_bu` is false.
    pub fn weights(&self, mu: f64, use_bu: bool) -> Result<Vec<Vec<f64>>> {
        self.pu
            .iter()
            .zip(&self.bu)
            .map(|(pu, bu)| {
                let m = curriculum::build_masks(pu, bu, mu)?;
                Ok(if use_bu {
                    m.combined()
                } else {
                    m.w_pu.into_data()
                })
            })
            .collect()
    }
}

fn active_fraction(weights: &[Vec<f64>]) -> f64 {
    let total: usize = weights.iter().map(Vec::len).sum();
    let active = weights.iter().flatten().filter(|&&w| w > 0.0).count();
    active as f64 / total.max(1) as f64
}

/// Train a fresh student on all of `train` under the configured mode.
pub fn distill_student(
    train: &Dataset,
    teacher: Option<&Teacher>,
    cfg: &RunConfig,
) -> Result<StudentRun> {
    check_dataset(train)?;
    cfg.validate()?;
    let teacher = match (cfg.mode.needs_teacher(), teacher) {
        (true, None) => {
            return Err(Error::InvalidArgument(format!(
                "mode {} needs a teacher",
                cfg.mode
            )))
        }
        (true, Some(t)) => Some(t),
        (false, _) => None,
    };
    let all: Vec<usize> = (0..train.len()).collect();
    let teacher_logits = teacher
        .map(|t| logits_for(&t.net, train, &all))
        .transpose()?;
    let mut net = ConvNet::new(
        train.in_channels(),
        cfg.train.width,
        train.classes,
        derive_seed(cfg.train.seed, STREAM_STUDENT_INIT),
    );
    let objective = Objective {
        tau: cfg.train.tau,
        alpha: if cfg.mode == Mode::Iid {
            0.0
        } else {
            cfg.train.alpha
        },
    };
    let mut curriculum_log = Vec::new();
    let mut mu_init = None;
    let log = if cfg.mode.is_curriculum() {
        let pacing = cfg.pacing.expect("validated");
        let teacher = teacher.expect("curriculum modes need a teacher");
        let maps =
            UncertaintyMaps::compute(teacher, teacher_logits.as_deref().expect("teacher"), train)?;
        let init = if cfg.force_full_curriculum {
            1.0
        } else {
            curriculum::mu_init_from_beta(&maps.pooled_pu(), pacing.beta)?
        };
        mu_init = Some(init);
        let mut state = CurriculumState::new(init, &pacing)?;
        let use_bu = cfg.mode == Mode::Pcd;
        let mut cached: Option<(f64, Vec<Vec<f64>>)> = None;
        let mut failure = None;
        let log = train_loop(
            &mut net,
            train,
            &all,
            teacher_logits.as_deref(),
            &objective,
            &cfg.train,
            |epoch| {
                state = match curriculum::pace(&state, &pacing, epoch) {
                    Ok(s) => s,
                    Err(e) => {
                        failure = Some(e);
                        return None;
                    }
                };
                if cached.as_ref().map(|c| c.0) != Some(state.mu) {
                    match maps.weights(state.mu, use_bu) {
                        Ok(w) => cached = Some((state.mu, w)),
                        Err(e) => {
                            failure = Some(e);
                            return None;
                        }
                    }
                }
                let weights = cached.as_ref().map(|c| c.1.clone()).expect("just filled");
                if epoch == 0 || epoch % pacing.e_interval == 0 || epoch == pacing.gamma {
                    curriculum_log.push(CurriculumLog {
                        epoch,
                        mu: state.mu,
                        active_fraction: active_fraction(&weights),
                    });
                }
                Some(weights)
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        log
    } else {
        let interval = cfg
            .pacing
            .map_or(curriculum::DEFAULT_E_INTERVAL, |p| p.e_interval);
        train_loop(
            &mut net,
            train,
            &all,
            teacher_logits.as_deref(),
            &objective,
            &cfg.train,
            |epoch| {
                if epoch % interval == 0 {
                    curriculum_log.push(CurriculumLog {
                        epoch,
                        mu: 1.0,
                        active_fraction: 1.0,
                    });
                }
                None
            },
        )?
    };
    Ok(StudentRun {
        net,
        log,
        curriculum: curriculum_log,
        mu_init,
    })
}

pub fn predict(net: &ConvNet, image: &TensorF) -> Result<LabelMap> {
    argmax_channels(&net.forward(image)?)
}

/// Per-image results and their aggregate.
pub fn evaluate_dataset(net: &ConvNet, ds: &Dataset) -> Result<(Vec<EvalResult>, EvalResult)> {
    check_dataset(ds)?;
    let per_image = ds
        .samples
        .par_iter()
        .map(|s| metrics::evaluate(&predict(net, &s.image)?, &s.labels, ds.classes))
        .collect::<Result<Vec<_>>>()?;
    let agg = metrics::aggregate(&per_image)?;
    Ok((per_image, agg))
}

pub fn eval_csv(per_image: &[EvalResult], agg: &EvalResult) -> String {
    let mut out = String::from(metrics::EVAL_CSV_HEADER);
    out.push('\n');
    for (i, r) in per_image.iter().enumerate() {
        for row in metrics::eval_csv_rows(&format!("{i:05}"), r) {
            out.push_str(&row);
            out.push('\n');
        }
    }
    for row in metrics::eval_csv_rows("all", agg) {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn curriculum_csv(log: &[CurriculumLog]) -> String {
    let mut out = String::from("epoch,mu,active_pixel_fraction\n");
    for r in log {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            r.epoch, r.mu, r.active_fraction
        ));
    }
    out
}

pub fn batch_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,batch,loss,active_pixels\n");
    for b in &log.batches {
        out.push_str(&format!(
            "{},{},{:.9},{}\n",
            b.epoch, b.batch, b.loss, b.active
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub model: String,
    pub family: Family,
    /// 0 is the uncorrupted set.
    pub severity: u8,
    pub mean_dsc: f64,
    pub mean_iou: f64,
    pub mean_precision: f64,
}

/// Evaluate every model on every (family, severity) corruption of `clean`.
/// Severity 0 rows repeat the clean evaluation under each family.
pub fn robustness_sweep(
    models: &[(String, ConvNet)],
    clean: &Dataset,
    families: &[Family],
    severities: &[u8],
    seed: u64,
    ladders: &Ladders,
) -> Result<Vec<RobustnessRow>> {
    check_dataset(clean)?;
    let clean_scores = models
        .iter()
        .map(|(_, net)| Ok(evaluate_dataset(net, clean)?.1))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(Family, u8)> = families
        .iter()
        .flat_map(|&f| severities.iter().map(move |&s| (f, s)))
        .collect();
    let per_cell = cells
        .par_iter()
        .map(|&(family, severity)| {
            let scores = if severity == 0 {
                clean_scores.clone()
            } else {
                let spec =
                    CorruptionSpec::new(family, severity, derive_seed(seed, STREAM_CORRUPTION))?;
                let corrupted = perturb::corrupt_samples(clean, &spec, ladders)?;
                models
                    .iter()
                    .map(|(_, net)| Ok(evaluate_dataset(net, &corrupted)?.1))
                    .collect::<Result<Vec<_>>>()?
            };
            Ok(models
                .iter()
                .zip(scores)
                .map(|((name, _), r)| RobustnessRow {
                    model: name.clone(),
                    family,
                    severity,
                    mean_dsc: r.mean_dsc,
                    mean_iou: r.mean_iou,
                    mean_precision: r.mean_precision,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<RobustnessRow> = per_cell.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.model.as_str(), a.family, a.severity).cmp(&(b.model.as_str(), b.family, b.severity))
    });
    Ok(rows)
}

pub const ROBUSTNESS_HEADER: &str = "model,family,severity,mean_dsc,mean_iou,mean_precision";

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut out = format!("{ROBUSTNESS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.model, r.family, r.severity, r.mean_dsc, r.mean_iou, r.mean_precision
        ));
    }
    out
}

pub fn parse_robustness_csv(text: &str) -> Result<Vec<RobustnessRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(ROBUSTNESS_HEADER) {
        return Err(Error::InvalidArgument(
            "robustness CSV header mismatch".into(),
        ));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::InvalidArgument(format!("bad robustness row: {l}"));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(RobustnessRow {
                model: f[0].to_string(),
                family: f[1].parse()?,
                severity: f[2].parse().map_err(|_| bad())?,
                mean_dsc: num(f[3])?,
                mean_iou: num(f[4])?,
                mean_precision: num(f[5])?,
            })
        })
        .collect()
}

/// One plot per family plus a family-averaged plot: severity on x, mean DSC on y.
pub fn robustness_plots(rows: &[RobustnessRow]) -> Vec<(String, String)> {
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.dedup();
    models.sort_unstable();
    models.dedup();
    let mut families: Vec<Family> = rows.iter().map(|r| r.family).collect();
    families.sort_unstable();
    families.dedup();
    let plot = |title: String, series: Vec<Series>| LinePlot {
        title,
        x_label: "severity".into(),
        y_label: "mean DSC".into(),
        series,
        y_range: Some((0.0, 1.0)),
    };
    let mut out = Vec::new();
    for &f in &families {
        let series = models
            .iter()
            .map(|&m| Series {
                label: m.to_string(),
                points: rows
                    .iter()
                    .filter(|r| r.model == m && r.family == f)
                    .map(|r| (r.severity as f64, r.mean_dsc))
                    .collect(),
            })
            .collect();
        out.push((
            format!("robustness_{f}.svg"),
            plot(format!("{f}"), series).to_svg(),
        ));
    }
    let series = models
        .iter()
        .map(|&m| {
            let mut sev: Vec<u8> = rows
                .iter()
                .filter(|r| r.model == m)
                .map(|r| r.severity)
                .collect();
            sev.sort_unstable();
            sev.dedup();
            Series {
                label: m.to_string(),
                points: sev
                    .iter()
                    .map(|&s| {
                        let v: Vec<f64> = rows
                            .iter()
                            .filter(|r| r.model == m && r.severity == s)
                            .map(|r| r.mean_dsc)
                            .collect();
                        (s as f64, v.iter().sum::<f64>() / v.len() as f64)
                    })
                    .collect(),
            }
        })
        .collect();
    out.push((
        "robustness_mean.svg".into(),
        plot("mean over families".into(), series).to_svg(),
    ));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub beta: f64,
    pub gamma: usize,
    pub result: EvalResult,
}

/// One P-CD student per (β, γ) with a shared seed, evaluated on `val`.
pub fn beta_gamma_grid(
    train: &Dataset,
    val: &Dataset,
    teacher: &Teacher,
    betas: &[f64],
    gammas: &[usize],
    base: &RunConfig,
) -> Result<Vec<GridCell>> {
    if betas.is_empty() || gammas.is_empty() {
        return Err(Error::Empty("beta/gamma grid is empty".into()));
    }
    let e_interval = base
        .pacing
        .map_or(curriculum::DEFAULT_E_INTERVAL, |p| p.e_interval);
    let cells: Vec<(f64, usize)> = betas
        .iter()
        .flat_map(|&b| gammas.iter().map(move |&g| (b, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(beta, gamma)| {
            let cfg = RunConfig {
                mode: Mode::Pcd,
                pacing: Some(PacingConfig::new(beta, gamma, e_interval)?),
                ..base.clone()
            };
            let student = distill_student(train, Some(teacher), &cfg)?;
            Ok(GridCell {
                beta,
                gamma,
                result: evaluate_dataset(&student.net, val)?.1,
            })
        })
        .collect()
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from("beta,gamma,mean_dsc,mean_iou,mean_precision\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            c.beta, c.gamma, c.result.mean_dsc, c.result.mean_iou, c.result.mean_precision
        ));
    }
    out
}
