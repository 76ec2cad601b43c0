use std::fs::File;
use std::io::{BufWriter, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, LearnError, Phase, RngState, TrainConfig};
use crate::data::{
    build_vocab, build_vocab_from_texts, make_example, mask_tokens, pack_sequence, query_text,
    DataError, Document, PackOptions, PackedInput, TrainingExample, Vocab, MASK_ID,
};
use crate::model::{mlm_loss, retrieval_loss, ModelParams};
use crate::numerics::{adam_step, AdamState, Gradients, Graph};
use crate::retrieve::{run_eval, EvalOptions, EvalReport};

/// Where the parameters of a run come from.
#[derive(Debug, Clone)]
pub enum Init {
    /// Random weights and a vocabulary built from the training data.
    Fresh,
    /// Weights and vocabulary of another run; tensors the new arch lacks
    /// are dropped and new ones drawn fresh. Optimizer starts over.
    Pretrained(Checkpoint),
    /// Continues the run that wrote the checkpoint, optimizer and rng included.
    Resume(Checkpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

#[derive(Debug, Clone)]
enum Task {
    Mlm(Vec<PackedInput>),
    Retrieval(Vec<TrainingExample>),
}

impl Task {
    fn len(&self) -> usize {
        match self {
            Task::Mlm(v) => v.len(),
            Task::Retrieval(v) => v.len(),
        }
    }
}

/// Mini-batch Adam training for either phase.
///
/// Batch order is a per-epoch shuffle drawn from `(seed, epoch)`, so the
/// step counter alone locates a run inside its schedule.
pub struct Trainer {
    params: ModelParams,
    vocab: Vocab,
    config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    task: Task,
    order: Option<(u64, Vec<usize>)>,
    log: Vec<LogRecord>,
    sink: Option<BufWriter<File>>,
    eval_docs: Vec<Document>,
    evals: Vec<(u64, EvalReport)>,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;

impl Trainer {
    /// Masked-LM training over the OCR words only; annotations are never read.
    pub fn pretrain(
        corpus: &[Document],
        init: Init,
        config: TrainConfig,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(LearnError::EmptyCorpus);
        }
        let vocab = match &init {
            Init::Fresh => build_vocab(corpus, config.max_vocab),
            Init::Pretrained(c) | Init::Resume(c) => c.vocab.clone(),
        };
        let opts = PackOptions {
            max_len: config.max_len,
            pad: false,
        };
        let mut packs = Vec::with_capacity(corpus.len());
        for doc in corpus.iter().filter(|d| !d.words.is_empty()) {
            packs.push(pack_sequence(&[], &doc.words, &vocab, opts)?);
        }
        if packs.is_empty() {
            return Err(LearnError::EmptyCorpus);
        }
        Self::build(vocab, init, Phase::Pretrain, config, Task::Mlm(packs))
    }

    /// Pairing-score training with BCE over OCR tokens.
    pub fn finetune(
        train: &[Document],
        init: Init,
        config: TrainConfig,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        let mode = config.query_mode;
        let vocab = match &init {
            Init::Fresh => {
                let queries = train.iter().flat_map(|d| {
                    (0..d.annotations.len()).filter_map(move |k| query_text(d, k, mode).ok())
                });
                let words = train
                    .iter()
                    .flat_map(|d| d.words.iter().map(|w| w.text.as_str()));
                build_vocab_from_texts(words.chain(queries), config.max_vocab)
            }
            Init::Pretrained(c) | Init::Resume(c) => c.vocab.clone(),
        };
        let examples = build_examples(train, &vocab, &config)?;
        if examples.is_empty() {
            return Err(LearnError::EmptyCorpus);
        }
        Self::build(
            vocab,
            init,
            Phase::Finetune,
            config,
            Task::Retrieval(examples),
        )
    }

    fn build(
        vocab: Vocab,
        init: Init,
        phase: Phase,
        mut config: TrainConfig,
        task: Task,
    ) -> Result<Self, LearnError> {
        config.phase = phase;
        let (params, adam, rng, step) = match init {
            Init::Fresh => {
                let cfg = config.model_config(vocab.len());
                let params = ModelParams::init(&cfg, &mut seeded(config.seed, STREAM_INIT))?;
                let adam = AdamState::new(&params.store, config.lr, config.weight_decay);
                (params, adam, seeded(config.seed, STREAM_TRAIN), 0)
            }
            Init::Pretrained(c) => {
                let cfg = crate::model::ModelConfig {
                    arch: config.arch,
                    ..c.params.config.clone()
                };
                let params = ModelParams::adapt_from(
                    &cfg,
                    &c.params.store,
                    &mut seeded(config.seed, STREAM_INIT),
                )?;
                let adam = AdamState::new(&params.store, config.lr, config.weight_decay);
                (params, adam, seeded(config.seed, STREAM_TRAIN), 0)
            }
            Init::Resume(c) => {
                if c.phase != phase {
                    return Err(LearnError::Config(format!(
                        "cannot resume a {} checkpoint as {phase}",
                        c.phase
                    )));
                }
                let mut adam = c.adam.ok_or_else(|| {
                    LearnError::Config("checkpoint has no optimizer state to resume".into())
                })?;
                adam.lr = config.lr;
                adam.weight_decay = config.weight_decay;
                (c.params, adam, c.rng.restore(), c.step)
            }
        };
        let sink = match &config.checkpoint_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| LearnError::io(dir, e))?;
                let path = dir.join(format!("{phase}_log.jsonl"));
                let f = File::options()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| LearnError::io(&path, e))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        Ok(Self {
            params,
            vocab,
            config,
            adam,
            rng,
            step,
            task,
            order: None,
            log: Vec::new(),
            sink,
            eval_docs: Vec::new(),
            evals: Vec::new(),
        })
    }

    /// Held-out documents evaluated every `eval_every` steps.
    pub fn set_eval_set(&mut self, docs: Vec<Document>) {
        self.eval_docs = docs;
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn evals(&self) -> &[(u64, EvalReport)] {
        &self.evals
    }

    pub fn num_examples(&self) -> usize {
        self.task.len()
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.task.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let full = self.config.epochs as u64 * self.batches_per_epoch();
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    fn batch_indices(&mut self) -> Vec<usize> {
        let bpe = self.batches_per_epoch();
        let epoch = self.step / bpe;
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..self.task.len()).collect();
            order.shuffle(&mut seeded(self.config.seed, STREAM_SHUFFLE + epoch));
            self.order = Some((epoch, order));
        }
        let order = &self.order.as_ref().expect("set above").1;
        let b = (self.step % bpe) as usize * self.config.batch_size;
        order[b..(b + self.config.batch_size).min(order.len())].to_vec()
    }

    /// One optimizer step on the next mini-batch. Returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64, LearnError> {
        let idx = self.batch_indices();
        let mut grads = Gradients::empty(&self.params.store);
        let mut total = 0.0;
        for &i in &idx {
            let mut g = Graph::new(&self.params.store);
            let loss = match &self.task {
                Task::Retrieval(ex) => retrieval_loss(&mut g, &self.params, &ex[i])?,
                Task::Mlm(packs) => {
                    let (masked, targets) = mask_at_least_one(
                        &packs[i],
                        self.config.mask_rate,
                        self.vocab.len(),
                        &mut self.rng,
                    );
                    mlm_loss(&mut g, &self.params, &masked, &targets)?
                }
            };
            total += g.value(loss).item();
            grads.accumulate(&g.backward(loss)?);
        }
        let k = 1.0 / idx.len() as f64;
        grads.scale(k);
        let loss = total * k;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(LearnError::NonFinite {
                step: self.step,
                loss,
            });
        }
        adam_step(&mut self.params.store, &grads, &mut self.adam);
        self.step += 1;
        self.record(loss)?;
        Ok(loss)
    }

    fn record(&mut self, loss: f64) -> Result<(), LearnError> {
        let rec = LogRecord {
            step: self.step,
            phase: self.config.phase,
            loss,
            lr: self.adam.lr,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
        };
        if let Some(sink) = &mut self.sink {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(sink, "{line}").map_err(|e| LearnError::Io(e.to_string()))?;
        }
        log::debug!("{} step {} loss {loss:.6}", rec.phase, rec.step);
        self.log.push(rec);
        Ok(())
    }

    /// Trains to the end of the schedule, writing periodic checkpoints and
    /// running periodic held-out evaluation when configured.
    pub fn run(&mut self) -> Result<Checkpoint, LearnError> {
        while self.step < self.total_steps() {
            self.train_step()?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.step.is_multiple_of(every) {
                if let Some(dir) = self.config.checkpoint_dir.clone() {
                    let path = dir.join(format!("{}-step{:06}.fqck", self.config.phase, self.step));
                    self.checkpoint().save(&path)?;
                }
            }
            let every = self.config.eval_every;
            if every > 0 && self.step.is_multiple_of(every) && !self.eval_docs.is_empty() {
                let report = self.evaluate(&self.eval_docs)?;
                log::info!("step {} held-out f1 {:.4}", self.step, report.f1);
                self.evals.push((self.step, report));
            }
        }
        if let Some(sink) = &mut self.sink {
            sink.flush().map_err(|e| LearnError::Io(e.to_string()))?;
        }
        Ok(self.checkpoint())
    }

    /// Retrieval F1 of the current parameters on `docs`.
    pub fn evaluate(&self, docs: &[Document]) -> Result<EvalReport, LearnError> {
        let opts = EvalOptions {
            retrieve: crate::retrieve::RetrieveOptions {
                max_len: self.config.max_len,
                ..Default::default()
            },
            ..Default::default()
        };
        Ok(run_eval(
            &self.params,
            &self.vocab,
            docs,
            self.config.query_mode,
            &opts,
        )?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            vocab: self.vocab.clone(),
            phase: self.config.phase,
            step: self.step,
            rng: RngState::capture(&self.rng),
            adam: Some(self.adam.clone()),
        }
    }
}

fn build_examples(
    docs: &[Document],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<Vec<TrainingExample>, LearnError> {
    let opts = PackOptions {
        max_len: config.max_len,
        pad: false,
    };
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for doc in docs {
        for k in 0..doc.annotations.len() {
            match make_example(doc, k, config.query_mode, vocab, opts) {
                Ok(ex) if ex.packed.query_len == 0 => skipped += 1,
                Ok(ex) => out.push(ex),
                Err(DataError::MissingFieldName { .. }) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} annotations without a usable query");
    }
    Ok(out)
}

/// Masks as usual, but forces one `[MASK]` when the draw selected nothing so
/// every example contributes to the loss.
fn mask_at_least_one<R: Rng + ?Sized>(
    packed: &PackedInput,
    rate: f64,
    vocab_size: usize,
    rng: &mut R,
) -> (PackedInput, crate::data::MlmTargets) {
    let (mut masked, mut targets) = mask_tokens(packed, rate, vocab_size, rng);
    if targets.is_empty() {
        let p = rng.random_range(0..packed.content_len());
        targets.push((p, packed.token_ids[p]));
        masked.token_ids[p] = MASK_ID;
    }
    (masked, targets)
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

pub fn pretrain(corpus: &[Document], config: TrainConfig) -> Result<TrainOutcome, LearnError> {
    let mut t = Trainer::pretrain(corpus, Init::Fresh, config)?;
    let checkpoint = t.run()?;
    Ok(TrainOutcome {
        checkpoint,
        log: t.log,
    })
}

pub fn finetune(
    train: &[Document],
    init: Init,
    config: TrainConfig,
) -> Result<TrainOutcome, LearnError> {
    let mut t = Trainer::finetune(train, init, config)?;
    let checkpoint = t.run()?;
    Ok(TrainOutcome {
        checkpoint,
        log: t.log,
    })
}
