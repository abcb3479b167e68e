//! Mini-batch Adam training of the U-Net on a labelled corpus.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::checkpoint::save_checkpoint;
use super::ops::bce_loss;
use super::tape::Tape;
use super::tensor::Tensor4;
use super::unet::{forward_on_tape, unet_forward, UNetParams};
use super::{input_tensor, label_tensor};
use crate::dataset::{read_all, Record};
use crate::error::{Error, Result};

/// Items per independently differentiated slice of a mini-batch. Gradients of
/// the slices are summed in a fixed order, so results do not depend on
/// `threads`.
pub const CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// `(threshold, lr)` pairs: epoch `e` (0-based) uses the first entry with
    /// `e < threshold`. Use `usize::MAX` for an open-ended last entry.
    pub lr_schedule: Vec<(usize, f64)>,
    pub seed: u64,
    /// Stop once the monitored loss has not improved for this many epochs.
    pub early_stop: Option<usize>,
    /// Records held out at the end of the corpus for the test loss.
    pub test_count: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 150,
            lr_schedule: vec![(100, 1e-4), (usize::MAX, 1e-5)],
            seed: 0,
            early_stop: None,
            test_count: 100,
            depth: 4,
            base_channels: 16,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.lr_schedule.is_empty() {
            return bad("lr_schedule is empty");
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("lr_schedule thresholds must increase");
        }
        if self.lr_schedule.iter().any(|&(_, lr)| !(lr.is_finite() && lr > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.lr_schedule.last().unwrap().0 < self.epochs {
            return bad("lr_schedule does not cover every epoch");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule.iter().find(|&&(t, _)| epoch < t).map_or(self.lr_schedule.last().unwrap().1, |&(_, lr)| lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_bce: f64,
    /// `NaN` when nothing is held out.
    pub test_bce: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub checkpoint: Option<PathBuf>,
    pub wall_time: Duration,
}

/// Input and label tensors of a corpus, one batch item each.
pub struct Examples {
    pub inputs: Vec<Tensor4>,
    pub labels: Vec<Tensor4>,
}

impl Examples {
    pub fn from_records(records: &[Record]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        for r in records {
            inputs.push(input_tensor(&[&r.grids])?);
            labels.push(label_tensor(&[&r.grids])?);
        }
        Ok(Examples { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor4, Tensor4)> {
        let x: Vec<&Tensor4> = idx.iter().map(|&i| &self.inputs[i]).collect();
        let y: Vec<&Tensor4> = idx.iter().map(|&i| &self.labels[i]).collect();
        Ok((Tensor4::stack(&x)?, Tensor4::stack(&y)?))
    }
}

/// Loss and parameter gradients of one chunk, with the loss scaled by `weight`.
fn chunk_gradients(params: &UNetParams, x: Tensor4, y: Tensor4, weight: f64) -> Result<(f64, Vec<Tensor4>)> {
    let mut tape = Tape::new();
    let p = params.leaves(&mut tape);
    let xv = tape.leaf(x);
    let out = forward_on_tape(&mut tape, params.depth, &p, xv)?;
    let loss = tape.bce(out, y)?;
    let mut grads = tape.backward_with(loss, Tensor4::full([1, 1, 1, 1], weight))?;
    let l = tape.value(loss).data[0];
    let g = p
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor4::zeros(t.shape)))
        .collect();
    Ok((l * weight, g))
}

/// Mean BCE and its gradient over the items `idx`.
pub fn batch_gradients(
    params: &UNetParams,
    data: &Examples,
    idx: &[usize],
    threads: usize,
) -> Result<(f64, Vec<Tensor4>)> {
    let chunks: Vec<&[usize]> = idx.chunks(CHUNK).collect();
    let total = idx.len() as f64;
    let run = |c: &[usize]| -> Result<(f64, Vec<Tensor4>)> {
        let (x, y) = data.batch(c)?;
        chunk_gradients(params, x, y, c.len() as f64 / total)
    };
    let results: Vec<Result<(f64, Vec<Tensor4>)>> = if threads <= 1 || chunks.len() == 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let per = chunks.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| s.spawn(move || group.iter().map(|c| run(c)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("training worker panicked")).collect()
        })
    };
    let mut loss = 0.0;
    let mut sum: Option<Vec<Tensor4>> = None;
    for r in results {
        let (l, g) = r?;
        loss += l;
        match &mut sum {
            None => sum = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    Ok((loss, sum.expect("non-empty batch")))
}

/// Mean BCE over all examples (equal weight per pixel).
pub fn evaluate(params: &UNetParams, data: &Examples, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for c in idx.chunks(batch.max(1)) {
        let (x, y) = data.batch(c)?;
        total += bce_loss(&unet_forward(params, &x)?, &y)? * c.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Computes the gradient on `idx` and applies one Adam step; returns the pre-step loss.
pub fn train_step(
    params: &mut UNetParams,
    state: &mut AdamState,
    data: &Examples,
    idx: &[usize],
    lr: f64,
    threads: usize,
) -> Result<f64> {
    let (loss, grads) = batch_gradients(params, data, idx, threads)?;
    if !loss.is_finite() || !grads.iter().all(Tensor4::all_finite) {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    adam_step(&mut params.tensors, &grads, state, lr)?;
    Ok(loss)
}

/// Trains on in-memory records. The last `config.test_count` records form the
/// test split. `on_best` runs whenever the monitored loss reaches a new
/// minimum (test loss, or train loss when nothing is held out); `on_epoch`
/// after every epoch.
pub fn train_records(
    records: &[Record],
    config: &TrainConfig,
    mut on_best: impl FnMut(&UNetParams, &EpochLog) -> Result<()>,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<(UNetParams, TrainReport)> {
    config.validate()?;
    if records.len() <= config.test_count {
        return Err(Error::InvalidParameter(format!(
            "{} records leave nothing to train on after holding out {}",
            records.len(),
            config.test_count
        )));
    }
    let t0 = Instant::now();
    let split = records.len() - config.test_count;
    let train_set = Examples::from_records(&records[..split])?;
    let test_set = Examples::from_records(&records[split..])?;
    let mut params = UNetParams::init(config.depth, config.base_channels, config.seed)?;
    params.check_input(train_set.inputs[0].shape)?;
    let mut best = params.clone();
    let mut state = AdamState::new(&params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report =
        TrainReport { epochs: Vec::new(), best_epoch: 0, best_loss: f64::INFINITY, checkpoint: None, wall_time: Duration::ZERO };
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let loss = train_step(&mut params, &mut state, &train_set, idx, lr, config.threads)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, batch: b },
                    e => e,
                })?;
            sum += loss * idx.len() as f64;
        }
        let train_bce = sum / train_set.len() as f64;
        let test_bce = evaluate(&params, &test_set, config.batch_size)?;
        if !test_set.is_empty() && !test_bce.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let log = EpochLog { epoch, train_bce, test_bce, lr };
        let monitored = if test_set.is_empty() { train_bce } else { test_bce };
        if monitored < report.best_loss {
            report.best_loss = monitored;
            report.best_epoch = epoch;
            best.clone_from(&params);
            on_best(&params, &log)?;
        }
        on_epoch(&log)?;
        report.epochs.push(log);
        if config.early_stop.is_some_and(|p| epoch - report.best_epoch >= p) {
            break;
        }
    }
    report.wall_time = t0.elapsed();
    Ok((best, report))
}

pub const LOG_HEADER: &str = "# epoch\ttrain_bce\ttest_bce\tlr";

/// Trains on a `BSP1` corpus, writing the best checkpoint to `checkpoint` and
/// a tab-separated loss log to `log` when given.
pub fn train(
    dataset: impl AsRef<Path>,
    config: &TrainConfig,
    checkpoint: impl AsRef<Path>,
    log: Option<&Path>,
) -> Result<TrainReport> {
    let (_, records) = read_all(dataset)?;
    let ckpt = checkpoint.as_ref();
    let mut log_out = match log {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{LOG_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let (_, mut report) = train_records(
        &records,
        config,
        |params, _| save_checkpoint(params, ckpt),
        |e| {
            if let Some(w) = log_out.as_mut() {
                writeln!(w, "{}\t{:.6e}\t{:.6e}\t{:e}", e.epoch, e.train_bce, e.test_bce, e.lr)?;
                w.flush()?;
            }
            Ok(())
        },
    )?;
    report.checkpoint = Some(ckpt.to_path_buf());
    Ok(report)
}
