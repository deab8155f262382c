use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::adam::{Adam, AdamConfig};
use super::checkpoint::{Checkpoint, CheckpointError, Descriptor, NamedTensor, RngState, VocabSection};
use super::clip::clip_global_norm;
use crate::config::ModelSection;
use crate::layers::{Parameterized, QrnnState, StackConfig};
use crate::lm::{bpc, evaluate, BatchStream, CharVocab, LmModel};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seq_len: usize,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    /// Total step budget, counted from the start of training (not the resume point).
    pub max_steps: u64,
    pub log_interval: u64,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
    pub patience: Option<u64>,
    pub seed: u64,
    pub log_throughput: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            seq_len: 100,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            max_steps: 1000,
            log_interval: 1,
            eval_interval: 0,
            checkpoint_interval: 0,
            patience: None,
            seed: 0,
            log_throughput: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} at step {step} (last gradient norm {grad_norm})")]
    NonFinite {
        step: u64,
        what: &'static str,
        grad_norm: f64,
    },
    #[error(transparent)]
    Model(#[from] crate::error::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint does not match this run: {0}")]
    Mismatch(String),
}

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub nats: f64,
    pub bpc: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub tokens_per_sec: f64,
}

impl StepRecord {
    /// Tab-separated `step, nats, bpc, grad norm, tokens/sec`. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn log_line(&self, with_throughput: bool) -> String {
        let tps = if with_throughput {
            format!("{:.1}", self.tokens_per_sec)
        } else {
            "-".to_string()
        };
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.step, self.nats, self.bpc, self.grad_norm, tps
        )
    }
}

/// Character-LM training state: model, optimizer, data position, carried
/// recurrent state and the random stream used for dropout.
pub struct Trainer {
    model: LmModel,
    vocab: CharVocab,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    states: Vec<QrnnState>,
    stream: BatchStream,
    config: TrainConfig,
    last_grad_norm: f64,
}

impl Trainer {
    /// Fresh model initialised from `config.seed`.
    pub fn new(
        stack: StackConfig,
        vocab: CharVocab,
        train_ids: Vec<usize>,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = LmModel::new(vocab.len(), stack, &mut rng)?;
        let stream = BatchStream::new(train_ids, config.batch_size, config.seq_len)?;
        let states = model.zero_states(config.batch_size);
        Ok(Self {
            model,
            vocab,
            adam: Adam::new(config.adam),
            rng,
            step: 0,
            states,
            stream,
            config,
            last_grad_norm: 0.0,
        })
    }

    pub fn model(&self) -> &LmModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut LmModel {
        &mut self.model
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Forward over the next segment, backward, clip, Adam update; the
    /// carried state moves on detached.
    pub fn train_step(&mut self) -> Result<StepRecord, TrainError> {
        let started = Instant::now();
        let batch = self.stream.next_batch();
        let step = self.step + 1;
        let tape = Tape::new();
        let fwd = self.model.forward(
            &tape,
            &batch.inputs,
            batch.batch,
            &self.states,
            Some(&mut self.rng),
        )?;
        let loss = fwd.logits.softmax_cross_entropy(&batch.targets)?;
        let nats = loss.value().item()?;
        if !nats.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "loss",
                grad_norm: self.last_grad_norm,
            });
        }
        loss.backward()?;
        tape.accumulate_into(self.model.params_mut())?;

        let mut params = self.model.params_mut();
        let grad_norm = {
            let mut grads: Vec<&mut Tensor> = params.iter_mut().map(|p| p.grad_mut()).collect();
            clip_global_norm(&mut grads, self.config.clip_norm)
        };
        if !grad_norm.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "gradient norm",
                grad_norm,
            });
        }
        self.adam.step(&mut params)?;
        params.into_iter().for_each(|p| p.zero_grad());

        self.states = fwd.states;
        self.step = step;
        self.last_grad_norm = grad_norm;
        let tokens = (batch.batch * batch.seq_len) as f64;
        Ok(StepRecord {
            step,
            nats,
            bpc: bpc(nats)?,
            grad_norm,
            tokens_per_sec: tokens / started.elapsed().as_secs_f64().max(1e-9),
        })
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            model: ModelSection::from_stack(self.model.config()),
            vocab: VocabSection {
                code_points: self.vocab.symbols().iter().map(|&c| c as u32).collect(),
            },
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let params: Vec<NamedTensor> = self
            .model
            .params()
            .into_iter()
            .map(|p| NamedTensor {
                name: p.name().to_string(),
                tensor: p.value().clone(),
            })
            .collect();
        let mut state = Vec::new();
        for (i, p) in params.iter().enumerate() {
            let (m, v) = match self.adam.moments().get(i) {
                Some((m, v)) => (m.clone(), v.clone()),
                None => (
                    Tensor::zeros(p.tensor.shape().to_vec()),
                    Tensor::zeros(p.tensor.shape().to_vec()),
                ),
            };
            state.push(NamedTensor {
                name: format!("adam.m.{}", p.name),
                tensor: m,
            });
            state.push(NamedTensor {
                name: format!("adam.v.{}", p.name),
                tensor: v,
            });
        }
        for (l, s) in self.states.iter().enumerate() {
            state.push(NamedTensor {
                name: format!("carry.{l}.cell"),
                tensor: s.cell.clone(),
            });
            state.push(NamedTensor {
                name: format!("carry.{l}.history"),
                tensor: s.history.clone(),
            });
        }
        Checkpoint {
            descriptor: self.descriptor().to_text(),
            params,
            state,
            step: self.step,
            rng: RngState::capture(&self.rng),
        }
    }

    /// Rebuilds a trainer from a checkpoint so that training continues
    /// exactly as if it had never stopped. `train_ids` must be the same
    /// corpus, encoded with the checkpoint's vocabulary.
    pub fn restore(
        checkpoint: &Checkpoint,
        train_ids: Vec<usize>,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        let desc = checkpoint.descriptor()?;
        let stack = desc
            .model
            .stack_config()
            .map_err(|e| TrainError::Mismatch(e.to_string()))?;
        let vocab = CharVocab::from_code_points(&desc.vocab.code_points)?;
        let mut trainer = Trainer::new(stack, vocab, train_ids, config)?;
        copy_params(&mut trainer.model, checkpoint)?;
        let find = |name: &str| -> Result<Tensor, TrainError> {
            checkpoint
                .state
                .iter()
                .find(|nt| nt.name == name)
                .map(|nt| nt.tensor.clone())
                .ok_or_else(|| TrainError::Mismatch(format!("missing state tensor {name}")))
        };
        let moments = checkpoint
            .params
            .iter()
            .map(|p| Ok((find(&format!("adam.m.{}", p.name))?, find(&format!("adam.v.{}", p.name))?)))
            .collect::<Result<Vec<_>, TrainError>>()?;
        let moments = if checkpoint.step == 0 { Vec::new() } else { moments };
        trainer.adam = Adam::with_state(trainer.config.adam, checkpoint.step, moments);
        let mut states = Vec::with_capacity(trainer.states.len());
        for (l, fresh) in trainer.states.iter().enumerate() {
            let cell = find(&format!("carry.{l}.cell"))?;
            let history = find(&format!("carry.{l}.history"))?;
            if cell.shape() != fresh.cell.shape() || history.shape() != fresh.history.shape() {
                return Err(TrainError::Mismatch(format!(
                    "carried state of layer {l} does not fit batch size {}",
                    trainer.config.batch_size
                )));
            }
            states.push(QrnnState { cell, history });
        }
        trainer.states = states;
        trainer.stream.seek(checkpoint.step);
        trainer.rng = checkpoint.rng.restore();
        trainer.step = checkpoint.step;
        Ok(trainer)
    }
}

fn copy_params(model: &mut LmModel, checkpoint: &Checkpoint) -> Result<(), TrainError> {
    let mut params = model.params_mut();
    if params.len() != checkpoint.params.len() {
        return Err(TrainError::Mismatch(format!(
            "model has {} parameters, checkpoint has {}",
            params.len(),
            checkpoint.params.len()
        )));
    }
    for (p, saved) in params.iter_mut().zip(&checkpoint.params) {
        if p.name() != saved.name || p.value().shape() != saved.tensor.shape() {
            return Err(TrainError::Mismatch(format!(
                "parameter {} {:?} vs saved {} {:?}",
                p.name(),
                p.value().shape(),
                saved.name,
                saved.tensor.shape()
            )));
        }
        *p.value_mut() = saved.tensor.clone();
    }
    Ok(())
}

/// Model and vocabulary stored in a checkpoint, for evaluation.
pub fn load_model(checkpoint: &Checkpoint) -> Result<(LmModel, CharVocab), TrainError> {
    let desc = checkpoint.descriptor()?;
    let stack = desc
        .model
        .stack_config()
        .map_err(|e| TrainError::Mismatch(e.to_string()))?;
    let vocab = CharVocab::from_code_points(&desc.vocab.code_points)?;
    let mut model = LmModel::new(vocab.len(), stack, &mut ChaCha8Rng::seed_from_u64(0))?;
    copy_params(&mut model, checkpoint)?;
    Ok((model, vocab))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub last: Option<StepRecord>,
    pub best_valid_bpc: Option<f64>,
    pub stopped_early: bool,
}

/// Runs until `max_steps`, logging every `log_interval` steps, validating
/// every `eval_interval` steps (keeping `best.ckpt`), saving `step-N.ckpt`
/// every `checkpoint_interval` steps and `last.ckpt` at the end.
pub fn train_loop(
    trainer: &mut Trainer,
    valid_ids: Option<&[usize]>,
    log: &mut dyn Write,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainSummary, TrainError> {
    let cfg = trainer.config.clone();
    let mut last = None;
    let mut best: Option<f64> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    while trainer.step < cfg.max_steps {
        let rec = trainer.train_step()?;
        if rec.step % cfg.log_interval == 0 {
            writeln!(log, "{}", rec.log_line(cfg.log_throughput))?;
        }
        last = Some(rec);
        if let (Some(valid), true) = (valid_ids, cfg.eval_interval > 0 && rec.step % cfg.eval_interval == 0) {
            let result = evaluate(&trainer.model, valid, cfg.seq_len)?;
            info!("step {}: validation bpc {:.4}", rec.step, result.bpc);
            if best.map_or(true, |b| result.bpc < b) {
                best = Some(result.bpc);
                stale = 0;
                if let Some(dir) = checkpoint_dir {
                    trainer.checkpoint().save(&dir.join("best.ckpt"))?;
                }
            } else {
                stale += 1;
                if cfg.patience.is_some_and(|p| stale >= p) {
                    info!("no validation improvement in {stale} evaluations, stopping");
                    stopped_early = true;
                    break;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_interval > 0 && rec.step % cfg.checkpoint_interval == 0 {
                trainer.checkpoint().save(&dir.join(format!("step-{}.ckpt", rec.step)))?;
            }
        }
    }
    log.flush()?;
    if let Some(dir) = checkpoint_dir {
        trainer.checkpoint().save(&dir.join("last.ckpt"))?;
    }
    Ok(TrainSummary {
        steps: trainer.step,
        last,
        best_valid_bpc: best,
        stopped_early,
    })
}
