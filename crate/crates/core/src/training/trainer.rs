use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tasks::{build_examples, eval_examples, reverse_examples, sample_task, Dataset, TaskKind, TaskSpec, Variant};
use crate::corpus::Prepared;
use crate::error::{Error, Result};
use crate::metrics::perplexity;
use crate::model::{Example, GroundedModel, ModelConfig};
use crate::numeric::{clip_gradients, seeded_rng, Adam, AdamConfig, ClipMode, SeededRng, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub clip_mode: ClipMode,
    pub max_steps: u64,
    /// Steps between dev evaluations.
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// NOFACTS-only steps run before the task schedule starts.
    pub warm_start_steps: u64,
    pub seed: u64,
    /// Per-task mixing ratios overriding the example-count default.
    pub alphas: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 0.02,
            clip: 5.0,
            clip_mode: ClipMode::Norm,
            max_steps: 3000,
            eval_every: 100,
            patience: 10,
            warm_start_steps: 0,
            seed: 1,
            alphas: None,
        }
    }

    pub fn paper() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.1,
            max_steps: 500_000,
            eval_every: 2000,
            ..Self::desk()
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub task: String,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_perplexity: Option<f64>,
}

/// One optimizer step on a batch: mean per-token NLL, backward, clip,
/// Adam. Returns the loss before the update.
pub fn train_step(model: &mut GroundedModel, adam: &mut Adam, batch: &[Example], clip: f64, mode: ClipMode) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (loss, mut grads) = {
        let tape = Tape::new();
        let net = model.net(&tape);
        let (total, tokens) = net.batch_nll(batch)?;
        let mean = tape.scale(total, 1.0 / tokens as f64)?;
        let loss = tape.value(mean).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let mut g = tape.backward(mean)?;
        let grads: Vec<Tensor> = net.vars().iter().map(|&v| g.take(v)).collect();
        (loss, grads)
    };
    clip_gradients(&mut grads, clip, mode)?;
    adam.step(model.params_mut(), &grads)?;
    Ok(loss)
}

/// A task's examples, visited in a fresh shuffle on every pass.
struct TaskStream {
    spec: TaskSpec,
    examples: Vec<Example>,
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl TaskStream {
    fn new(spec: TaskSpec, examples: Vec<Example>, seed: u64) -> Self {
        let mut s = Self {
            order: (0..examples.len()).collect(),
            spec,
            examples,
            pos: 0,
            rng: seeded_rng(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, n: usize) -> Vec<Example> {
        let mut batch = Vec::with_capacity(n);
        while batch.len() < n.min(self.examples.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            batch.push(self.examples[self.order[self.pos]].clone());
            self.pos += 1;
        }
        batch
    }
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Multi-task trainer: each step samples a task by mixing ratio and trains
/// on a batch from that task alone.
pub struct Trainer {
    model: GroundedModel,
    adam: Adam,
    cfg: TrainConfig,
    streams: Vec<TaskStream>,
    alphas: Vec<f64>,
    schedule_rng: SeededRng,
    warm_rng: SeededRng,
    steps: u64,
}

impl Trainer {
    pub fn new(model: GroundedModel, tasks: Vec<(TaskSpec, Vec<Example>)>, cfg: TrainConfig) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Empty("task list"));
        }
        if let Some((spec, _)) = tasks.iter().find(|(_, ex)| ex.is_empty()) {
            return Err(Error::Config(format!("task {} has no examples", spec.label())));
        }
        let alphas: Vec<f64> = match &cfg.alphas {
            Some(a) if a.len() != tasks.len() => {
                return Err(Error::Config(format!(
                    "{} mixing ratios for {} tasks",
                    a.len(),
                    tasks.len()
                )))
            }
            Some(a) => a.clone(),
            None => tasks
                .iter()
                .map(|(spec, ex)| spec.alpha.unwrap_or(ex.len() as f64))
                .collect(),
        };
        // validates the ratios once up front
        sample_task(&alphas, &mut seeded_rng(0))?;
        let adam = Adam::new(
            model.params(),
            AdamConfig {
                learning_rate: cfg.learning_rate,
                ..AdamConfig::default()
            },
        );
        let streams = tasks
            .into_iter()
            .enumerate()
            .map(|(i, (spec, ex))| TaskStream::new(spec, ex, derive_seed(cfg.seed, 100 + i as u64)))
            .collect();
        Ok(Self {
            model,
            adam,
            schedule_rng: seeded_rng(derive_seed(cfg.seed, 1)),
            warm_rng: seeded_rng(derive_seed(cfg.seed, 2)),
            cfg,
            streams,
            alphas,
            steps: 0,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn tasks(&self) -> Vec<TaskSpec> {
        self.streams.iter().map(|s| s.spec).collect()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn model(&self) -> &GroundedModel {
        &self.model
    }

    pub fn into_model(self) -> GroundedModel {
        self.model
    }

    fn run(&mut self, task: usize) -> Result<LogRecord> {
        let batch = self.streams[task].next_batch(self.cfg.batch_size);
        let loss = train_step(&mut self.model, &mut self.adam, &batch, self.cfg.clip, self.cfg.clip_mode)?;
        self.steps += 1;
        Ok(LogRecord {
            step: self.steps,
            task: self.streams[task].spec.label(),
            loss,
            dev_perplexity: None,
        })
    }

    /// One step of the task schedule.
    pub fn step(&mut self) -> Result<LogRecord> {
        let task = sample_task(&self.alphas, &mut self.schedule_rng)?;
        self.run(task)
    }

    /// One step restricted to NOFACTS tasks. Uses its own random stream, so
    /// the schedule that follows is the same with or without warm start.
    pub fn warm_step(&mut self) -> Result<LogRecord> {
        let alphas: Vec<f64> = self
            .streams
            .iter()
            .zip(&self.alphas)
            .map(|(s, &a)| if s.spec.kind == TaskKind::NoFacts { a.max(f64::MIN_POSITIVE) } else { 0.0 })
            .collect();
        let task = sample_task(&alphas, &mut self.warm_rng)?;
        self.run(task)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best dev perplexity, or the last ones without dev.
    pub model: GroundedModel,
    pub log: Vec<LogRecord>,
    pub best_dev_perplexity: Option<f64>,
    pub steps: u64,
}

/// Warm start, then the task schedule with early stopping on dev
/// perplexity. `observe` sees every log record together with the current
/// model.
pub fn train(
    model: GroundedModel,
    tasks: Vec<(TaskSpec, Vec<Example>)>,
    dev: &[Example],
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&LogRecord, &GroundedModel) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, tasks, cfg.clone())?;
    let mut log = Vec::new();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut stale = 0usize;
    let eval_every = cfg.eval_every.max(1);

    while trainer.steps() < cfg.max_steps {
        let mut rec = if trainer.steps() < cfg.warm_start_steps {
            trainer.warm_step()?
        } else {
            trainer.step()?
        };
        let at_end = trainer.steps() == cfg.max_steps;
        if !dev.is_empty() && (trainer.steps() % eval_every == 0 || at_end) {
            let ppl = perplexity(trainer.model(), dev)?;
            rec.dev_perplexity = Some(ppl);
            if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
                best = Some((ppl, trainer.model().params().to_vec()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        observe(&rec, trainer.model())?;
        log.push(rec);
        if stale >= cfg.patience.max(1) {
            break;
        }
    }
    let steps = trainer.steps();
    let mut model = trainer.into_model();
    let best_dev_perplexity = best.map(|(ppl, params)| {
        model.params_mut().clone_from_slice(&params);
        ppl
    });
    Ok(TrainOutcome {
        model,
        log,
        best_dev_perplexity,
        steps,
    })
}

/// Prepared conversations for the two datasets a recipe draws from.
#[derive(Clone, Copy, Debug)]
pub struct VariantData<'a> {
    pub general: &'a [Prepared],
    pub grounded: &'a [Prepared],
}

impl<'a> VariantData<'a> {
    pub fn dataset(&self, d: Dataset) -> &'a [Prepared] {
        match d {
            Dataset::General => self.general,
            Dataset::Grounded => self.grounded,
        }
    }
}

/// Dev examples for early stopping: only the datasets `variant` trains on.
pub fn variant_dev(variant: Variant, dev: VariantData<'_>) -> Vec<Example> {
    variant
        .datasets()
        .into_iter()
        .flat_map(|d| eval_examples(dev.dataset(d)))
        .collect()
}

/// Examples for every task of a variant's recipe.
pub fn variant_tasks(variant: Variant, data: VariantData<'_>) -> Result<Vec<(TaskSpec, Vec<Example>)>> {
    variant
        .tasks()
        .into_iter()
        .map(|spec| {
            let td = build_examples(spec.kind, data.dataset(spec.dataset));
            if td.examples.is_empty() {
                return Err(Error::Config(format!(
                    "{variant}: task {} has no examples ({} conversations skipped)",
                    spec.label(),
                    td.skipped
                )));
            }
            Ok((spec, td.examples))
        })
        .collect()
}

/// Initialize a model per `model_cfg` and train it on `variant`'s recipe,
/// early stopping on [`variant_dev`].
pub fn train_variant(
    variant: Variant,
    model_cfg: &ModelConfig,
    data: VariantData<'_>,
    dev: VariantData<'_>,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&LogRecord, &GroundedModel) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut mc = model_cfg.clone();
    mc.grounded = variant.grounded();
    let model = GroundedModel::new(mc, cfg.seed)?;
    let tasks = variant_tasks(variant, data)?;
    train(model, tasks, &variant_dev(variant, dev), cfg, observe)
}

/// Train the `R → S` model that supplies the reverse reranking feature, on
/// both datasets without facts.
pub fn train_reverse(
    model_cfg: &ModelConfig,
    data: VariantData<'_>,
    dev: VariantData<'_>,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&LogRecord, &GroundedModel) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut mc = model_cfg.clone();
    mc.grounded = false;
    let model = GroundedModel::new(mc, cfg.seed)?;
    let examples: Vec<Example> = reverse_examples(data.general)
        .into_iter()
        .chain(reverse_examples(data.grounded))
        .collect();
    if examples.is_empty() {
        return Err(Error::Empty("reverse training data"));
    }
    let dev: Vec<Example> = reverse_examples(dev.general)
        .into_iter()
        .chain(reverse_examples(dev.grounded))
        .collect();
    let tasks = vec![(TaskSpec::new(TaskKind::NoFacts, Dataset::General), examples)];
    train(model, tasks, &dev, cfg, observe)
}
