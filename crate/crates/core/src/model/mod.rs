//! The grounded encoder-decoder: parameters, forward computations and
//! checkpoints.
//!
//! Parameters live in a flat, named list ([`GroundedModel::params`]); a
//! [`Layout`] maps each role (embedding, gate weight, memory matrix) to its
//! slot. Every forward computation goes through a [`Net`], which binds the
//! parameters onto a [`Tape`] so the same code serves training (with
//! gradients) and inference.

mod checkpoint;
mod memory;
mod net;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{init_uniform_with, seeded_rng, Tape, Tensor};
use crate::text::TokenId;

pub use checkpoint::{CheckpointMeta, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use memory::{bow_vector, bow_vector_text, MemoryRead};
pub use net::{DecoderState, Net};

/// How the memory output `o` is merged with the dialog summary `u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    /// `û = o + u`
    #[default]
    Sum,
    /// `û = [o; u] · W`, with a learned `2d × d` projection.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Size of `u`, `û` and the memory representations; must equal
    /// `layers * hidden_dim`.
    pub memory_dim: usize,
    #[serde(default)]
    pub combine: Combine,
    /// Whether inference routes facts through the memory read. Models
    /// trained without facts ignore them.
    #[serde(default)]
    pub grounded: bool,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            hidden_dim: 64,
            layers: 2,
            memory_dim: 128,
            combine: Combine::Sum,
            grounded: false,
        }
    }

    pub fn paper(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 512,
            hidden_dim: 512,
            layers: 2,
            memory_dim: 1024,
            combine: Combine::Sum,
            grounded: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= crate::text::EOS
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.layers == 0
        {
            return Err(Error::Config(format!("degenerate model config {self:?}")));
        }
        if self.memory_dim != self.layers * self.hidden_dim {
            return Err(Error::Config(format!(
                "memory_dim {} must equal layers × hidden_dim = {}",
                self.memory_dim,
                self.layers * self.hidden_dim
            )));
        }
        Ok(())
    }
}

/// Slots of one GRU layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GruSlots {
    pub w_z: usize,
    pub u_z: usize,
    pub b_z: usize,
    pub w_r: usize,
    pub u_r: usize,
    pub b_r: usize,
    pub w_h: usize,
    pub u_h: usize,
    pub b_h: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub enc_embed: usize,
    pub dec_embed: usize,
    pub encoder: Vec<GruSlots>,
    pub decoder: Vec<GruSlots>,
    pub out_w: usize,
    pub out_b: usize,
    /// Key projection `A` (d × v).
    pub mem_a: usize,
    /// Value projection `C` (d × v).
    pub mem_c: usize,
    pub combine_w: Option<usize>,
}

/// Parameter names, shapes and fan dimensions in slot order.
fn parameter_specs(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, usize)>) {
    let mut specs: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fan: usize| {
        specs.push((name, shape, fan));
        specs.len() - 1
    };
    let (v, e, h, d) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.memory_dim);
    let enc_embed = push("encoder.embedding".into(), vec![v, e], e);
    let dec_embed = push("decoder.embedding".into(), vec![v, e], e);
    let mut gru = |side: &str, layer: usize, input: usize| {
        let p = format!("{side}.gru{layer}");
        GruSlots {
            w_z: push(format!("{p}.w_z"), vec![input, h], h),
            u_z: push(format!("{p}.u_z"), vec![h, h], h),
            b_z: push(format!("{p}.b_z"), vec![h], h),
            w_r: push(format!("{p}.w_r"), vec![input, h], h),
            u_r: push(format!("{p}.u_r"), vec![h, h], h),
            b_r: push(format!("{p}.b_r"), vec![h], h),
            w_h: push(format!("{p}.w_h"), vec![input, h], h),
            u_h: push(format!("{p}.u_h"), vec![h, h], h),
            b_h: push(format!("{p}.b_h"), vec![h], h),
        }
    };
    let encoder: Vec<GruSlots> = (0..cfg.layers)
        .map(|l| gru("encoder", l, if l == 0 { e } else { h }))
        .collect();
    let decoder: Vec<GruSlots> = (0..cfg.layers)
        .map(|l| gru("decoder", l, if l == 0 { e } else { h }))
        .collect();
    let out_w = push("output.w".into(), vec![h, v], h);
    let out_b = push("output.b".into(), vec![v], h);
    let mem_a = push("memory.a".into(), vec![d, v], d);
    let mem_c = push("memory.c".into(), vec![d, v], d);
    let combine_w = (cfg.combine == Combine::Concat)
        .then(|| push("memory.combine".into(), vec![2 * d, d], d));
    (
        Layout {
            enc_embed,
            dec_embed,
            encoder,
            decoder,
            out_w,
            out_b,
            mem_a,
            mem_c,
            combine_w,
        },
        specs,
    )
}

/// Encoder, decoder, output projection and memory matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundedModel {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl GroundedModel {
    /// Every parameter drawn from `U[−√(3/d), √(3/d)]`, `d` being the
    /// hidden, embedding or memory width the parameter belongs to.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = parameter_specs(&config);
        let mut rng = seeded_rng(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, fan) in specs {
            params.push(init_uniform_with(&mut rng, &shape, fan)?);
            names.push(name);
        }
        Ok(Self {
            config,
            layout,
            names,
            params,
        })
    }

    /// Model with the given parameter values, in slot order.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = parameter_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in specs.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        let names = specs.into_iter().map(|(n, _, _)| n).collect();
        Ok(Self {
            config,
            layout,
            names,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_grounded(&mut self, grounded: bool) {
        self.config.grounded = grounded;
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Bind this model's parameters onto `tape`.
    pub fn net<'t, 'p>(&'p self, tape: &'t Tape<'p>) -> Net<'t, 'p> {
        Net::bind(tape, &self.config, &self.layout, &self.params)
    }

    /// Dialog summary `u` of a source sequence.
    pub fn encode(&self, source: &[TokenId]) -> Result<Tensor> {
        let tape = Tape::new();
        let net = self.net(&tape);
        let u = net.encode(std::slice::from_ref(&source.to_vec()))?;
        let value = tape.value(u).clone();
        value.reshape(vec![self.config.memory_dim])
    }

    /// Single-hop memory read of `facts` (token ids per fact) against `u`.
    pub fn memory_read(&self, u: &Tensor, facts: &[Vec<TokenId>]) -> Result<MemoryRead> {
        let tape = Tape::new();
        let net = self.net(&tape);
        let uv = tape.leaf(u.reshape(vec![1, u.len()])?);
        let (u_hat, p) = net.memory_read(uv, std::slice::from_ref(&facts.to_vec()))?;
        let u_hat = tape.value(u_hat).reshape(vec![u.len()])?;
        let weights = tape.value(p).row(0)[..facts.len()].to_vec();
        Ok(MemoryRead { u_hat, weights })
    }

    /// Decoder state from a `d`-dimensional initialization vector.
    pub fn init_decoder_state(&self, u_hat: &Tensor) -> Result<DecoderState> {
        DecoderState::from_summary(&self.config, u_hat)
    }

    /// One decoder step for every row of `state`.
    pub fn decode_step(&self, prev: &[TokenId], state: &DecoderState) -> Result<(Tensor, DecoderState)> {
        let tape = Tape::new();
        let net = self.net(&tape);
        net.decode_step_values(prev, state)
    }

    /// Decoder state for one source, reading `facts` per [`facts_arg`](Self::facts_arg).
    pub fn start_state(&self, source: &[TokenId], facts: &[Vec<TokenId>]) -> Result<DecoderState> {
        let tape = Tape::new();
        let net = self.net(&tape);
        let facts = self.facts_arg(facts).map(|f| vec![f]);
        let vars = net.start(std::slice::from_ref(&source.to_vec()), facts.as_deref())?;
        let summary: Vec<f64> = vars
            .iter()
            .flat_map(|&v| tape.value(v).data().to_vec())
            .collect();
        self.init_decoder_state(&Tensor::new(vec![1, summary.len()], summary)?)
    }

    /// Total `−log P(R | S, F)` in nats, with EOS appended to `response`.
    /// Facts are used only when the model is grounded and `facts` is
    /// non-empty.
    pub fn sequence_nll(&self, source: &[TokenId], facts: &[Vec<TokenId>], response: &[TokenId]) -> Result<f64> {
        let ex = Example::new(source.to_vec(), self.facts_arg(facts), response.to_vec());
        let tape = Tape::new();
        let net = self.net(&tape);
        let (loss, _) = net.batch_nll(std::slice::from_ref(&ex))?;
        let v = tape.value(loss).item();
        Ok(v)
    }

    /// Facts to feed the memory read, per the model's grounding switch.
    pub fn facts_arg(&self, facts: &[Vec<TokenId>]) -> Option<Vec<Vec<TokenId>>> {
        (self.config.grounded && !facts.is_empty()).then(|| facts.to_vec())
    }
}

/// A source, optional retrieved facts, and a target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<TokenId>,
    pub facts: Option<Vec<Vec<TokenId>>>,
    pub target: Vec<TokenId>,
}

impl Example {
    pub fn new(source: Vec<TokenId>, facts: Option<Vec<Vec<TokenId>>>, target: Vec<TokenId>) -> Self {
        Self {
            source,
            facts,
            target,
        }
    }

    /// Target length including the appended EOS.
    pub fn target_tokens(&self) -> usize {
        self.target.len() + 1
    }
}
