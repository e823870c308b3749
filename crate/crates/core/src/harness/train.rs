//! Minibatch training, evaluation and region dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abstraction::{self, derive_seed, Model, RegionRecord, SampleStreams, DUMP_HEADER};
use crate::autodiff::Tape;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::loss::LossTerms;
use crate::param::{Optimizer, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::config::{DataSource, RunConfig};
use super::dataset::{load_dataset, Dataset, SplitKind};
use super::synthetic::generate_synthetic;

pub const METRICS_HEADER: &str = "epoch,train_loss,ce,fit,range,rum,train_acc,test_acc,test_macc";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Streams used outside training; training epochs count from 1.
const EVAL_EPOCH: u64 = 0;
const SHUFFLE_PURPOSE: u64 = 0x5_0FF1E;
const ORDER_PURPOSE: u64 = 0x0_4DE2;
const INIT_PURPOSE: u64 = 0x1_417;

/// Generates or loads the configured dataset. Load warnings are returned
/// for the caller to report.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<(Dataset, Vec<String>)> {
    match &cfg.data {
        DataSource::Synthetic(spec) => Ok((generate_synthetic(spec, cfg.seed)?, Vec::new())),
        DataSource::File(path) => {
            let loaded = load_dataset(path, Some(cfg.points), cfg.seed)?;
            Ok((loaded.dataset, loaded.warnings))
        }
    }
}

/// Freshly initialised parameters for `classes` outputs.
pub fn init_model(cfg: &RunConfig, classes: usize) -> Result<(Model, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, INIT_PURPOSE]));
    let model = Model::new(cfg.model_config(classes)?, &mut store, &mut rng)?;
    Ok((model, store))
}

/// The cloud in the point order seen by object `object` during `epoch`.
pub fn shuffled_cloud(points: &[Point], seed: u64, epoch: u64, object: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch, object, SHUFFLE_PURPOSE]));
    let mut pts = points.to_vec();
    pts.shuffle(&mut rng);
    pts
}

/// The order in which `epoch` visits the training clouds.
pub fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
        seed,
        epoch as u64,
        ORDER_PURPOSE,
    ])));
    order
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce: f64,
    pub fit: f64,
    pub range: f64,
    pub rum: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_macc: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.train_loss,
            self.ce,
            self.fit,
            self.range,
            self.rum,
            self.train_acc,
            self.test_acc,
            self.test_macc
        )
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

struct Sample {
    terms: LossTerms,
    total: f64,
    correct: bool,
    grads: Vec<(ParamId, Tensor)>,
}

fn first_bad_term(terms: &LossTerms) -> Option<String> {
    if !terms.ce.is_finite() {
        return Some("cross-entropy".into());
    }
    let named = [
        ("fit", &terms.fit_per_layer),
        ("range", &terms.range_per_layer),
        ("rum", &terms.rum_per_layer),
    ];
    for (name, vals) in named {
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Some(format!("{name} loss of module {}", i + 1));
        }
    }
    None
}

fn train_sample(
    cfg: &RunConfig,
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    object: usize,
    epoch: usize,
) -> Result<Sample> {
    let cloud = &dataset.clouds[object];
    let pts = shuffled_cloud(cloud.points.positions(), cfg.seed, epoch as u64, object as u64);
    let streams = SampleStreams::new(cfg.seed, epoch as u64, object as u64);
    let tape = Tape::new();
    let fwd = abstraction::classify(&tape, store, model, &pts, &streams)?;
    if !fwd.logits.value().is_finite() {
        return Err(Error::NonFinite(format!("logits of cloud {object} in epoch {epoch}")));
    }
    let parts = fwd.loss_parts(model, cloud.label)?;
    let total = parts.total(cfg.alpha1, cfg.alpha2)?;
    let terms = parts.terms(cfg.alpha1, cfg.alpha2);
    if let Some(bad) = first_bad_term(&terms) {
        return Err(Error::NonFinite(format!("{bad} of cloud {object} in epoch {epoch}")));
    }
    let grads = tape.backward(total)?;
    let grads = grads.param_grads().map(|(id, g)| (id, g.clone())).collect();
    Ok(Sample {
        terms,
        total: total.item(),
        correct: fwd.predicted() == cloud.label,
        grads,
    })
}

/// Accuracy summary of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub acc: f64,
    /// Mean of the per-class accuracies over classes present in the split.
    pub macc: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics_from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Evaluation> {
    if labels.len() != predictions.len() {
        return Err(Error::arg("labels and predictions differ in length"));
    }
    if let Some(&bad) = labels.iter().chain(predictions).find(|&&c| c >= classes) {
        return Err(Error::arg(format!("class {bad} out of range for {classes} classes")));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in labels.iter().zip(predictions) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let acc = if labels.is_empty() {
        0.0
    } else {
        correct as f64 / labels.len() as f64
    };
    let per_class: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    let macc = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    Ok(Evaluation { acc, macc, confusion })
}

/// Predicted class of every listed cloud, using the evaluation streams.
pub fn predict(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    indices: &[usize],
    seed: u64,
) -> Result<Vec<usize>> {
    indices
        .par_iter()
        .map(|&i| {
            let pts = shuffled_cloud(dataset.clouds[i].points.positions(), seed, EVAL_EPOCH, i as u64);
            let tape = Tape::new();
            let streams = SampleStreams::new(seed, EVAL_EPOCH, i as u64);
            Ok(abstraction::classify(&tape, store, model, &pts, &streams)?.predicted())
        })
        .collect()
}

pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    split: SplitKind,
    seed: u64,
) -> Result<Evaluation> {
    let idx = dataset.indices(split);
    let preds = predict(model, store, dataset, idx, seed)?;
    let labels: Vec<usize> = idx.iter().map(|&i| dataset.clouds[i].label).collect();
    metrics_from_predictions(&labels, &preds, dataset.num_classes())
}

/// Rebuilds the model of `cfg` and fills it from a checkpoint file.
pub fn load_model(cfg: &RunConfig, classes: usize, checkpoint: &Path) -> Result<(Model, ParamStore)> {
    let (model, mut store) = init_model(cfg, classes)?;
    checkpoint::load_into(&mut store, checkpoint::read(checkpoint)?)?;
    Ok((model, store))
}

/// The run config saved next to a checkpoint.
pub fn config_beside(checkpoint: &Path) -> Result<RunConfig> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::arg(format!(
            "no {CONFIG_FILE} next to {}; pass the config explicitly",
            checkpoint.display()
        )));
    }
    RunConfig::load(&path)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<EpochMetrics>,
    /// Set when an output directory was written.
    pub checkpoint: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn best_test_acc(&self) -> f64 {
        self.history.iter().map(|m| m.test_acc).fold(0.0, f64::max)
    }

    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.history.last()
    }
}

/// Trains on `dataset.split.train`, evaluating on the test split after
/// every epoch. With `out`, writes `metrics.csv` (row by row), `config.txt`
/// and the final `model.ckpt` there.
pub fn train(cfg: &RunConfig, dataset: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (model, mut store) = init_model(cfg, dataset.num_classes())?;
    let mut optimizer = Optimizer::new(cfg.optimizer_kind(), &store);
    let mut history = Vec::with_capacity(cfg.epochs);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
        std::fs::write(dir.join(METRICS_FILE), metrics_csv(&[]))?;
    }
    let train_idx = &dataset.split.train;
    if train_idx.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train_idx, cfg.seed, epoch);
        let lr = cfg.lr_at(epoch);
        let mut sums = [0.0; 5];
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<Sample> = batch
                .par_iter()
                .map(|&i| train_sample(cfg, &model, &store, dataset, i, epoch))
                .collect::<Result<_>>()?;
            store.zero_grads();
            let w = 1.0 / batch.len() as f64;
            for s in &samples {
                for (id, g) in &s.grads {
                    let block = &mut store.get_mut(*id).grad;
                    for (a, b) in block.data_mut().iter_mut().zip(g.data()) {
                        *a += w * b;
                    }
                }
                sums[0] += s.total;
                sums[1] += s.terms.ce;
                sums[2] += s.terms.fit();
                sums[3] += s.terms.range();
                sums[4] += s.terms.rum();
                correct += usize::from(s.correct);
            }
            if let Some(bad) = store.first_non_finite() {
                return Err(Error::NonFinite(format!("{bad} in epoch {epoch}")));
            }
            optimizer.step(&mut store, lr);
            if let Some(bad) = store.first_non_finite() {
                return Err(Error::NonFinite(format!("{bad} after the update in epoch {epoch}")));
            }
        }
        let n = order.len() as f64;
        let test = evaluate(&model, &store, dataset, SplitKind::Test, cfg.seed)?;
        let m = EpochMetrics {
            epoch,
            train_loss: sums[0] / n,
            ce: sums[1] / n,
            fit: sums[2] / n,
            range: sums[3] / n,
            rum: sums[4] / n,
            train_acc: correct as f64 / n,
            test_acc: test.acc,
            test_macc: test.macc,
        };
        if let Some(dir) = out {
            use std::io::Write;
            let mut f = std::fs::OpenOptions::new().append(true).open(dir.join(METRICS_FILE))?;
            writeln!(f, "{}", m.csv_row())?;
        }
        history.push(m);
    }
    let checkpoint = match out {
        Some(dir) => {
            let path = dir.join(CHECKPOINT_FILE);
            checkpoint::save(&store, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        store,
        history,
        checkpoint,
    })
}

/// Region records of one cloud under the evaluation streams.
pub fn region_records(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    cloud: usize,
    seed: u64,
) -> Result<Vec<RegionRecord>> {
    let c = dataset.clouds.get(cloud).ok_or_else(|| {
        Error::arg(format!(
            "cloud index {cloud} out of range ({} clouds)",
            dataset.clouds.len()
        ))
    })?;
    let pts = shuffled_cloud(c.points.positions(), seed, EVAL_EPOCH, cloud as u64);
    let tape = Tape::new();
    let streams = SampleStreams::new(seed, EVAL_EPOCH, cloud as u64);
    Ok(abstraction::classify(&tape, store, model, &pts, &streams)?.records())
}

pub fn dump_text(records: &[RegionRecord]) -> String {
    let mut s = String::from(DUMP_HEADER);
    s.push('\n');
    for r in records {
        for line in r.dump_lines() {
            let _ = writeln!(s, "{line}");
        }
    }
    s
}
