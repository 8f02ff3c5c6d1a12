//! Seeded training runs, evaluation and λ₁ sweeps.
//!
//! Experiments are described by an [`ExperimentConfig`], normally read from
//! TOML:
//!
//! ```toml
//! name = "toy4-red"
//! seed = 7
//! epochs = 200
//! batch_size = 4
//! zero_evidence_taus = [0.0, 0.01, 0.1, 1.0]
//!
//! [dataset]
//! kind = "toy4"
//! dim = 2
//!
//! [model]
//! hidden = [16]
//!
//! [objective]
//! loss = "ev_mse"
//! activation = "exp"
//! incorrect_reg = "none"
//! lambda1 = 0.0
//! correct_reg = true
//!
//! [optimizer]
//! kind = "adam"
//! learning_rate = 0.01
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{self, format_f64, BlobSpec, Dataset};
use crate::error::{Error, Result};
use crate::evidence::{argmax, ActivationKind, EvidenceState, LogitVector};
use crate::losses::{softmax, LabelVector, LossKind};
use crate::metrics::{self, CensusBuckets, SampleRecord, VacuitySummary};
use crate::mlp::{dense_specs, Gradients, Network, Optimizer, OptimizerConfig};
use crate::regularizers::{composite_loss, IncRegKind, RegWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Four separated points; the training set doubles as the test set.
    Toy4 {
        dim: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Blobs {
        classes: usize,
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_stddev")]
        stddev: f64,
        n_train: usize,
        n_test: usize,
        /// OOD set: test blobs shifted by this many standard deviations
        /// along the all-ones direction.
        #[serde(default)]
        ood_shift: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        ood: Option<PathBuf>,
    },
}

fn default_spread() -> f64 {
    5.0
}

fn default_stddev() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub loss: LossKind,
    #[serde(default = "default_activation")]
    pub activation: ActivationKind,
    #[serde(default = "default_inc")]
    pub incorrect_reg: IncRegKind,
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default)]
    pub correct_reg: bool,
}

fn default_activation() -> ActivationKind {
    ActivationKind::Relu
}

fn default_inc() -> IncRegKind {
    IncRegKind::None
}

fn default_batch() -> usize {
    32
}

fn default_one() -> usize {
    1
}

fn default_taus() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Test accuracy is computed every `eval_every` epochs and on the last.
    #[serde(default = "default_one")]
    pub eval_every: usize,
    /// Mean-evidence thresholds for the per-epoch zero-evidence counts.
    #[serde(default = "default_taus")]
    pub zero_evidence_taus: Vec<f64>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config {
            field: path.display().to_string(),
            message: e.message().to_string(),
        })?;
        // relative dataset paths resolve against the config's directory
        if let (DatasetConfig::Csv { train, test, ood }, Some(dir)) = (&mut cfg.dataset, path.parent()) {
            for p in std::iter::once(train).chain(test.iter_mut()).chain(ood.iter_mut()) {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Checks every field without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.zero_evidence_taus.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::config("zero_evidence_taus", "thresholds must be finite and >= 0"));
        }
        if self.zero_evidence_taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("zero_evidence_taus", "must be strictly ascending"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        let obj = &self.objective;
        if !(obj.lambda1 >= 0.0 && obj.lambda1.is_finite()) {
            return Err(Error::config("objective.lambda1", "must be finite and >= 0"));
        }
        if obj.correct_reg && obj.activation != ActivationKind::Exp {
            return Err(Error::config(
                "objective.correct_reg",
                "requires activation = \"exp\"",
            ));
        }
        if obj.loss == LossKind::SoftmaxCe && (obj.correct_reg || obj.incorrect_reg != IncRegKind::None) {
            return Err(Error::config(
                "objective.loss",
                "softmax_ce cannot be combined with evidence regularizers",
            ));
        }
        self.optimizer.validate()?;
        match &self.dataset {
            DatasetConfig::Toy4 { dim, .. } if *dim < 2 => Err(Error::config("dataset.dim", "must be at least 2")),
            DatasetConfig::Blobs {
                classes,
                dim,
                spread,
                stddev,
                n_train,
                n_test,
                ood_shift,
                ..
            } => {
                if *classes < 2 {
                    return Err(Error::config("dataset.classes", "must be at least 2"));
                }
                if *dim == 0 {
                    return Err(Error::config("dataset.dim", "must be at least 1"));
                }
                if !(*spread > 0.0) || !(*stddev > 0.0) {
                    return Err(Error::config("dataset.spread", "spread and stddev must be positive"));
                }
                if *n_train == 0 || *n_test == 0 {
                    return Err(Error::config("dataset.n_train", "sample counts must be at least 1"));
                }
                if ood_shift.is_some_and(|s| !s.is_finite()) {
                    return Err(Error::config("dataset.ood_shift", "must be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The evidence interpretation used for evaluation; softmax runs read
    /// their logits through `exp`.
    pub fn eval_activation(&self) -> ActivationKind {
        if self.objective.loss == LossKind::SoftmaxCe {
            ActivationKind::Exp
        } else {
            self.objective.activation
        }
    }
}

/// Train, test and optional OOD splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub test: Dataset,
    pub ood: Option<Dataset>,
}

pub fn build_datasets(cfg: &ExperimentConfig) -> Result<DataSplits> {
    match &cfg.dataset {
        DatasetConfig::Toy4 { dim, seed } => {
            let train = datasets::make_toy4(*dim, seed.unwrap_or(cfg.seed))?;
            Ok(DataSplits {
                test: train.clone(),
                train,
                ood: None,
            })
        }
        DatasetConfig::Blobs {
            classes,
            dim,
            spread,
            stddev,
            n_train,
            n_test,
            ood_shift,
            seed,
        } => {
            let seed = seed.unwrap_or(cfg.seed);
            let per_class = |n: usize| n.div_ceil(*classes);
            let spec = BlobSpec::with_random_means(*classes, *dim, *spread, *stddev, per_class(*n_train), seed)?;
            let train = datasets::make_blobs(&spec)?;
            let test_spec = BlobSpec {
                n_per_class: per_class(*n_test),
                seed: seed.wrapping_add(1),
                ..spec.clone()
            };
            let test = datasets::make_blobs(&test_spec)?;
            let ood = match ood_shift {
                Some(k) => {
                    let step = k * stddev / (*dim as f64).sqrt();
                    let ood_spec = BlobSpec {
                        seed: seed.wrapping_add(2),
                        ..test_spec
                    };
                    Some(datasets::make_ood_shift(&ood_spec, &vec![step; *dim])?)
                }
                None => None,
            };
            Ok(DataSplits { train, test, ood })
        }
        DatasetConfig::Csv { train, test, ood } => {
            let train_ds = datasets::load_dataset(train)?;
            let test_ds = match test {
                Some(p) => datasets::load_dataset(p)?,
                None => train_ds.clone(),
            };
            let ood_ds = match ood {
                Some(p) => {
                    let mut d = datasets::load_dataset(p)?;
                    d.ood = true;
                    Some(d)
                }
                None => None,
            };
            for d in std::iter::once(&test_ds).chain(ood_ds.as_ref()) {
                if d.dim() != train_ds.dim() || d.num_classes != train_ds.num_classes {
                    return Err(Error::InvalidInput(format!(
                        "dataset '{}' has shape {}x{} classes, expected {}x{}",
                        d.name,
                        d.dim(),
                        d.num_classes,
                        train_ds.dim(),
                        train_ds.num_classes
                    )));
                }
            }
            Ok(DataSplits {
                train: train_ds,
                test: test_ds,
                ood: ood_ds,
            })
        }
    }
}

/// Output head used to turn logits into records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Evidential(ActivationKind),
    /// Softmax baseline: predictions from logits, `max_softmax` recorded,
    /// vacuity read through `exp`.
    Softmax,
}

impl Head {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        if cfg.objective.loss == LossKind::SoftmaxCe {
            Head::Softmax
        } else {
            Head::Evidential(cfg.objective.activation)
        }
    }
}

pub fn record_for(logits: Vec<f64>, actual: usize, is_ood: bool, head: Head) -> Result<SampleRecord> {
    let o = LogitVector::new(logits)?;
    let act = match head {
        Head::Evidential(a) => a,
        Head::Softmax => ActivationKind::Exp,
    };
    let state = EvidenceState::new(act, &o);
    let (predicted, max_softmax) = match head {
        Head::Evidential(_) => (argmax(&state.evidence), None),
        Head::Softmax => {
            let p = softmax(o.values());
            let i = argmax(&p);
            (i, Some(p[i]))
        }
    };
    Ok(SampleRecord {
        predicted,
        actual,
        vacuity: state.vacuity,
        mean_evidence: state.mean_evidence(),
        max_softmax,
        is_ood,
    })
}

/// One record per sample; the network is not modified.
pub fn evaluate(net: &Network<f64>, ds: &Dataset, head: Head) -> Result<Vec<SampleRecord>> {
    if net.output_dim() != ds.num_classes {
        return Err(Error::DimensionMismatch {
            expected: ds.num_classes,
            actual: net.output_dim(),
            context: "network output vs dataset classes",
        });
    }
    ds.features
        .iter()
        .zip(&ds.labels)
        .map(|(x, &y)| record_for(net.predict(x)?, y, ds.ood, head))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Training samples with mean evidence ≤ τ, one count per configured τ.
    pub zero_evidence: Vec<usize>,
    pub mean_vacuity: f64,
}

/// `zero_ev_{τ}` column names, e.g. `zero_ev_0.01`, `zero_ev_1.0`.
pub fn tau_columns(taus: &[f64]) -> Vec<String> {
    taus.iter().map(|t| format!("zero_ev_{t:?}")).collect()
}

pub fn epoch_csv_header(taus: &[f64]) -> String {
    let mut h = String::from("epoch,train_loss,train_acc,test_acc");
    for c in tau_columns(taus) {
        h.push(',');
        h.push_str(&c);
    }
    h.push_str(",mean_vacuity");
    h
}

pub fn epoch_csv(logs: &[EpochLog], taus: &[f64]) -> String {
    let mut s = epoch_csv_header(taus);
    s.push('\n');
    for l in logs {
        let _ = write!(
            s,
            "{},{},{},{}",
            l.epoch,
            format_f64(l.train_loss),
            format_f64(l.train_acc),
            l.test_acc.map(format_f64).unwrap_or_default()
        );
        for c in &l.zero_evidence {
            let _ = write!(s, ",{c}");
        }
        let _ = writeln!(s, ",{}", format_f64(l.mean_vacuity));
    }
    s
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logs: Vec<EpochLog>,
    pub network: Network<f64>,
    /// Final test records followed by OOD records, if any.
    pub records: Vec<SampleRecord>,
    pub train_records: Vec<SampleRecord>,
}

impl RunOutput {
    pub fn final_log(&self) -> &EpochLog {
        self.logs.last().expect("runs have at least one epoch")
    }

    pub fn final_test_accuracy(&self) -> f64 {
        let ind: Vec<SampleRecord> = self.records.iter().filter(|r| !r.is_ood).cloned().collect();
        metrics::accuracy(&ind).unwrap_or(0.0)
    }
}

/// Loss and logit gradient for one sample at the given epoch.
fn sample_objective(
    cfg: &ExperimentConfig,
    weights: &RegWeights<f64>,
    logits: Vec<f64>,
    label: usize,
    k: usize,
) -> Result<crate::losses::LossGradPair<f64>> {
    let o = LogitVector::new(logits)?;
    let y = LabelVector::new(label, k)?;
    let obj = &cfg.objective;
    composite_loss(obj.loss, obj.incorrect_reg, obj.activation, weights, &o, &y)
}

/// Mean loss and mean parameter gradient over `batch`.
pub fn batch_gradient(
    cfg: &ExperimentConfig,
    net: &Network<f64>,
    ds: &Dataset,
    batch: &[usize],
    epoch: usize,
) -> Result<(f64, Gradients<f64>)> {
    let weights = RegWeights::new(cfg.objective.lambda1, cfg.objective.correct_reg, epoch)?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for &i in batch {
        let (logits, cache) = net.forward(&ds.features[i])?;
        let pair = sample_objective(cfg, &weights, logits, ds.labels[i], ds.num_classes)?;
        loss += pair.loss * scale;
        grads.add_scaled(scale, &net.backward(&cache, &pair.grad)?);
    }
    Ok((loss, grads))
}

fn epoch_summary(
    cfg: &ExperimentConfig,
    epoch: usize,
    train_loss: f64,
    train: &[SampleRecord],
    test: Option<&[SampleRecord]>,
) -> Result<EpochLog> {
    let zero_evidence = cfg
        .zero_evidence_taus
        .iter()
        .map(|&t| train.iter().filter(|r| r.mean_evidence <= t).count())
        .collect();
    Ok(EpochLog {
        epoch,
        train_loss,
        train_acc: metrics::accuracy(train)?,
        test_acc: test.map(metrics::accuracy).transpose()?,
        zero_evidence,
        mean_vacuity: train.iter().map(|r| r.vacuity).sum::<f64>() / train.len() as f64,
    })
}

/// Trains on prepared splits. Deterministic given `cfg`.
pub fn run_with_data(cfg: &ExperimentConfig, data: &DataSplits) -> Result<RunOutput> {
    cfg.validate()?;
    let train = &data.train;
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(train.num_classes);
    let mut net = Network::new(&dense_specs(&dims)?, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, &net)?;
    let head = Head::for_config(cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7368_7566_666c_6521);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_gradient(cfg, &net, train, batch, epoch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(&mut net, &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_records = evaluate(&net, train, head)?;
        let last = epoch + 1 == cfg.epochs;
        let test_records = if (epoch + 1) % cfg.eval_every == 0 || last {
            Some(evaluate(&net, &data.test, head)?)
        } else {
            None
        };
        logs.push(epoch_summary(
            cfg,
            epoch,
            loss_sum / train.len() as f64,
            &train_records,
            test_records.as_deref(),
        )?);
    }

    let mut records = evaluate(&net, &data.test, head)?;
    if let Some(ood) = &data.ood {
        records.extend(evaluate(&net, ood, head)?);
    }
    let train_records = evaluate(&net, train, head)?;
    Ok(RunOutput {
        logs,
        network: net,
        records,
        train_records,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    run_with_data(cfg, &build_datasets(cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub epochs: usize,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
    pub train_census: CensusBuckets,
    pub vacuity: VacuitySummary,
    pub auroc: Option<f64>,
}

pub fn summarize_run(cfg: &ExperimentConfig, out: &RunOutput) -> Result<RunSummary> {
    Ok(RunSummary {
        name: cfg.name.clone(),
        epochs: cfg.epochs,
        final_train_accuracy: metrics::accuracy(&out.train_records)?,
        final_test_accuracy: out.final_test_accuracy(),
        train_census: metrics::evidence_census(&out.train_records),
        vacuity: metrics::vacuity_summary(&out.records)?,
        auroc: metrics::ood_auroc(&out.records)?,
    })
}

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// Writes the epoch log, checkpoint, records and summary into `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(EPOCHS_FILE, epoch_csv(&out.logs, &cfg.zero_evidence_taus))?;
    out.network.save(&dir.join(CHECKPOINT_FILE))?;
    write(RECORDS_FILE, metrics::records_csv(&out.records))?;
    let summary = summarize_run(cfg, out)?;
    write(METRICS_FILE, summary_json(&summary)?)?;
    Ok(summary)
}

pub fn summary_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda1: f64,
    pub seed: u64,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
    pub train_census: CensusBuckets,
    pub mean_train_vacuity: f64,
}

/// Model seed for grid point `index`; point 0 keeps the base seed.
pub fn sweep_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// One run per λ₁, in parallel, rows returned in grid order. The data is
/// built once from the base seed; each point reseeds the model.
pub fn sweep(base: &ExperimentConfig, grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::config("lambda1 grid", "must not be empty"));
    }
    base.validate()?;
    let configs: Vec<ExperimentConfig> = grid
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mut c = base.clone();
            c.objective.lambda1 = l;
            c.seed = sweep_seed(base.seed, i);
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let data = build_datasets(base)?;
    configs
        .par_iter()
        .map(|c| {
            let out = run_with_data(c, &data)?;
            Ok(SweepRow {
                lambda1: c.objective.lambda1,
                seed: c.seed,
                final_train_accuracy: out.final_log().train_acc,
                final_test_accuracy: out.final_test_accuracy(),
                train_census: metrics::evidence_census(&out.train_records),
                mean_train_vacuity: out.final_log().mean_vacuity,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda1,seed,train_acc,test_acc,le_0.01,le_0.1,le_1.0,gt_1.0,mean_vacuity\n");
    for r in rows {
        let c = &r.train_census;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            format_f64(r.lambda1),
            r.seed,
            format_f64(r.final_train_accuracy),
            format_f64(r.final_test_accuracy),
            c.le_0_01,
            c.le_0_1,
            c.le_1_0,
            c.gt_1_0,
            format_f64(r.mean_train_vacuity)
        );
    }
    s
}
