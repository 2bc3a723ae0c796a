use super::{Combine, Example, GruSlots, Layout, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{OpKind, Tape, Tensor, Var};
use crate::text::{TokenId, BOS, EOS, PAD};

/// Logit offset for padded memory slots; drives their attention weight to 0.
const MASKED_LOGIT: f64 = -1e30;

/// Model parameters bound to a tape.
pub struct Net<'t, 'p> {
    tape: &'t Tape<'p>,
    cfg: &'t ModelConfig,
    layout: &'t Layout,
    vars: Vec<Var>,
}

/// Per-layer decoder hidden states, each `rows × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    layers: Vec<Tensor>,
}

impl DecoderState {
    /// Split a `d`-dimensional summary (one row per sequence) into the
    /// per-layer initial states.
    pub fn from_summary(cfg: &ModelConfig, summary: &Tensor) -> Result<Self> {
        let d = cfg.memory_dim;
        if summary.cols() != d {
            return Err(Error::Shape {
                op: "init_decoder_state",
                detail: format!("expected dimension {d}, got {}", summary.cols()),
            });
        }
        let rows = summary.rows();
        let h = cfg.hidden_dim;
        let layers = (0..cfg.layers)
            .map(|l| {
                let mut data = Vec::with_capacity(rows * h);
                for r in 0..rows {
                    data.extend_from_slice(&summary.row(r)[l * h..(l + 1) * h]);
                }
                Tensor::new(vec![rows, h], data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn rows(&self) -> usize {
        self.layers[0].rows()
    }

    /// Concatenation of the layer states, the inverse of
    /// [`from_summary`](Self::from_summary).
    pub fn to_summary(&self) -> Tensor {
        let rows = self.rows();
        let mut data = Vec::new();
        for r in 0..rows {
            for l in &self.layers {
                data.extend_from_slice(l.row(r));
            }
        }
        let cols = data.len() / rows;
        Tensor::new(vec![rows, cols], data).expect("consistent layers")
    }

    /// New state made of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut data = Vec::with_capacity(rows.len() * l.cols());
                for &r in rows {
                    data.extend_from_slice(l.row(r));
                }
                Tensor::new(vec![rows.len(), l.cols()], data).expect("nonempty selection")
            })
            .collect();
        Self { layers }
    }
}

impl<'t, 'p> Net<'t, 'p> {
    pub fn bind(tape: &'t Tape<'p>, cfg: &'t ModelConfig, layout: &'t Layout, params: &'p [Tensor]) -> Self {
        let vars = params.iter().map(|p| tape.param(p)).collect();
        Self {
            tape,
            cfg,
            layout,
            vars,
        }
    }

    /// Use parameter variables that are already on the tape.
    pub fn from_vars(tape: &'t Tape<'p>, cfg: &'t ModelConfig, layout: &'t Layout, vars: Vec<Var>) -> Self {
        Self {
            tape,
            cfg,
            layout,
            vars,
        }
    }

    pub fn tape(&self) -> &'t Tape<'p> {
        self.tape
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn p(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    fn gate(&self, x: Var, w: usize, h: Var, u: usize, b: usize) -> Result<Var> {
        let t = self.tape;
        let xw = t.matmul(x, self.p(w))?;
        let hu = t.matmul(h, self.p(u))?;
        t.add(t.add(xw, hu)?, self.p(b))
    }

    /// `h' = (1 − z)∘h + z∘h̃` with `z`, `r` the update and reset gates and
    /// `h̃ = tanh(W x + U (r∘h) + b)`.
    pub fn gru_step(&self, g: &GruSlots, x: Var, h: Var) -> Result<Var> {
        let t = self.tape;
        let z = t.sigmoid(self.gate(x, g.w_z, h, g.u_z, g.b_z)?)?;
        let r = t.sigmoid(self.gate(x, g.w_r, h, g.u_r, g.b_r)?)?;
        let rh = t.mul(r, h)?;
        let cand = t.tanh(self.gate(x, g.w_h, rh, g.u_h, g.b_h)?)?;
        let delta = t.sub(cand, h)?;
        t.add(h, t.mul(z, delta)?)
    }

    fn zeros_state(&self, rows: usize) -> Var {
        self.tape.leaf(Tensor::zeros(&[rows, self.cfg.hidden_dim]))
    }

    /// Dialog summaries `u` (rows × d): the concatenated final hidden
    /// states of all encoder layers. PAD tokens and positions past a
    /// sequence's end leave its state untouched.
    pub fn encode(&self, sources: &[Vec<TokenId>]) -> Result<Var> {
        let t = self.tape;
        if sources.is_empty() || sources.iter().any(|s| s.iter().all(|&x| x == PAD)) {
            return Err(Error::Empty("source sequence"));
        }
        let rows = sources.len();
        let max_len = sources.iter().map(Vec::len).max().unwrap_or(0);
        let mut hs: Vec<Var> = (0..self.cfg.layers).map(|_| self.zeros_state(rows)).collect();
        for step in 0..max_len {
            let ids: Vec<TokenId> = sources
                .iter()
                .map(|s| s.get(step).copied().unwrap_or(PAD))
                .collect();
            let active: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
            if active.iter().all(|a| !a) {
                continue;
            }
            let mask = (!active.iter().all(|&a| a)).then(|| {
                let mut m = Tensor::zeros(&[rows, self.cfg.hidden_dim]);
                for (r, &a) in active.iter().enumerate() {
                    if a {
                        m.row_mut(r).iter_mut().for_each(|x| *x = 1.0);
                    }
                }
                t.leaf(m)
            });
            let mut x = t.gather(self.p(self.layout.enc_embed), ids)?;
            for (l, slots) in self.layout.encoder.iter().enumerate() {
                let next = self.gru_step(slots, x, hs[l])?;
                hs[l] = match mask {
                    None => next,
                    Some(m) => {
                        let delta = t.sub(next, hs[l])?;
                        t.add(hs[l], t.mul(m, delta)?)?
                    }
                };
                x = hs[l];
            }
        }
        t.concat(&hs)
    }

    /// Memory read for each row of `u` against that row's facts.
    ///
    /// `m_i = A r_i`, `c_i = C r_i`, `p_i = softmax_i(uᵀ m_i)`,
    /// `o = Σ p_i c_i`, `û = o + u` (or the learned projection of `[o; u]`).
    /// Returns `û` (rows × d) and the attention weights (rows × K, where K
    /// is the largest fact count; padded slots get weight 0).
    pub fn memory_read(&self, u: Var, facts: &[Vec<Vec<TokenId>>]) -> Result<(Var, Var)> {
        let t = self.tape;
        let rows = facts.len();
        let k = facts.iter().map(Vec::len).max().unwrap_or(0);
        if rows == 0 || facts.iter().any(Vec::is_empty) {
            return Err(Error::Empty("fact batch"));
        }
        let (v, d) = (self.cfg.vocab_size, self.cfg.memory_dim);
        let mut bow = Tensor::zeros(&[rows * k, v]);
        let mut mask = Tensor::zeros(&[rows, k]);
        for (b, fs) in facts.iter().enumerate() {
            for slot in 0..k {
                match fs.get(slot) {
                    Some(ids) => {
                        let row = bow.row_mut(b * k + slot);
                        for &id in ids {
                            if id >= v {
                                return Err(Error::IdOutOfRange { id, size: v });
                            }
                            row[id] += 1.0;
                        }
                    }
                    None => mask.row_mut(b)[slot] = MASKED_LOGIT,
                }
            }
        }
        let bow = t.leaf(bow);
        let keys = t.matmul(bow, t.transpose(self.p(self.layout.mem_a))?)?;
        let values = t.matmul(bow, t.transpose(self.p(self.layout.mem_c))?)?;
        let rep: Vec<usize> = (0..rows).flat_map(|b| std::iter::repeat_n(b, k)).collect();
        let u_rep = t.gather(u, rep)?;
        let logits = t.matmul(t.mul(keys, u_rep)?, t.leaf(Tensor::ones(&[d, 1])))?;
        let logits = t.add(t.reshape(logits, vec![rows, k])?, t.leaf(mask))?;
        let p = t.softmax(logits)?;
        let p_cols = t.matmul(
            t.reshape(p, vec![rows * k, 1])?,
            t.leaf(Tensor::ones(&[1, d])),
        )?;
        let mut select = Tensor::zeros(&[rows, rows * k]);
        for b in 0..rows {
            select.row_mut(b)[b * k..(b + 1) * k]
                .iter_mut()
                .for_each(|x| *x = 1.0);
        }
        let o = t.matmul(t.leaf(select), t.mul(values, p_cols)?)?;
        let u_hat = match (self.cfg.combine, self.layout.combine_w) {
            (Combine::Concat, Some(w)) => t.matmul(t.concat(&[o, u])?, self.p(w))?,
            _ => t.add(o, u)?,
        };
        Ok((u_hat, p))
    }

    /// Split `û` (rows × d) into per-layer decoder states.
    pub fn init_decoder_state(&self, u_hat: Var) -> Result<Vec<Var>> {
        let d = self.tape.value(u_hat).cols();
        if d != self.cfg.memory_dim {
            return Err(Error::Shape {
                op: "init_decoder_state",
                detail: format!("expected dimension {}, got {d}", self.cfg.memory_dim),
            });
        }
        let h = self.cfg.hidden_dim;
        (0..self.cfg.layers)
            .map(|l| self.tape.slice(u_hat, l * h, h))
            .collect()
    }

    /// Logits over the vocabulary (rows × V) and the advanced state.
    pub fn decode_step(&self, prev: &[TokenId], state: &[Var]) -> Result<(Var, Vec<Var>)> {
        let t = self.tape;
        if state.len() != self.cfg.layers {
            return Err(Error::InvalidArgument(format!(
                "decoder state has {} layers, model has {}",
                state.len(),
                self.cfg.layers
            )));
        }
        let mut x = t.gather(self.p(self.layout.dec_embed), prev.to_vec())?;
        let mut next = Vec::with_capacity(state.len());
        for (slots, &h) in self.layout.decoder.iter().zip(state) {
            x = self.gru_step(slots, x, h)?;
            next.push(x);
        }
        let logits = t.add(t.matmul(x, self.p(self.layout.out_w))?, self.p(self.layout.out_b))?;
        Ok((logits, next))
    }

    /// [`decode_step`](Self::decode_step) on plain tensors.
    pub fn decode_step_values(&self, prev: &[TokenId], state: &DecoderState) -> Result<(Tensor, DecoderState)> {
        if state.layers.len() != self.cfg.layers || state.rows() != prev.len() {
            return Err(Error::InvalidArgument(format!(
                "decoder state {}×{} does not match {} layers / {} inputs",
                state.layers.len(),
                state.rows(),
                self.cfg.layers,
                prev.len()
            )));
        }
        let vars: Vec<Var> = state.layers.iter().map(|l| self.tape.leaf(l.clone())).collect();
        let (logits, next) = self.decode_step(prev, &vars)?;
        let layers = next.iter().map(|&v| self.tape.value(v).clone()).collect();
        let logits = self.tape.value(logits).clone();
        Ok((logits, DecoderState { layers }))
    }

    /// Initial decoder states for a batch: `û` when facts are given, `u`
    /// otherwise.
    pub fn start(&self, sources: &[Vec<TokenId>], facts: Option<&[Vec<Vec<TokenId>>]>) -> Result<Vec<Var>> {
        let u = self.encode(sources)?;
        let init = match facts {
            Some(f) => self.memory_read(u, f)?.0,
            None => u,
        };
        self.init_decoder_state(init)
    }

    /// Total teacher-forced NLL of the targets (each with EOS appended) and
    /// the number of scored tokens. Examples with facts go through the
    /// memory read; the rest take the fact-free path.
    pub fn batch_nll(&self, batch: &[Example]) -> Result<(Var, usize)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let (with, without): (Vec<&Example>, Vec<&Example>) = batch
            .iter()
            .partition(|e| e.facts.as_ref().is_some_and(|f| !f.is_empty()));
        let mut total: Option<Var> = None;
        let mut tokens = 0;
        for group in [with, without] {
            if group.is_empty() {
                continue;
            }
            let (loss, n) = self.group_nll(&group)?;
            tokens += n;
            total = Some(match total {
                None => loss,
                Some(acc) => self.tape.add(acc, loss)?,
            });
        }
        Ok((total.expect("nonempty batch"), tokens))
    }

    fn group_nll(&self, group: &[&Example]) -> Result<(Var, usize)> {
        let t = self.tape;
        if group.iter().any(|e| e.target.is_empty()) {
            return Err(Error::Empty("response"));
        }
        let sources: Vec<Vec<TokenId>> = group.iter().map(|e| e.source.clone()).collect();
        let grounded = group[0].facts.as_ref().is_some_and(|f| !f.is_empty());
        let facts: Option<Vec<Vec<Vec<TokenId>>>> = grounded
            .then(|| group.iter().map(|e| e.facts.clone().unwrap_or_default()).collect());
        let mut state = self.start(&sources, facts.as_deref())?;
        let steps = group.iter().map(|e| e.target_tokens()).max().unwrap_or(0);
        let mut losses = Vec::with_capacity(steps);
        let mut tokens = 0;
        for step in 0..steps {
            let mut prev = Vec::with_capacity(group.len());
            let mut targets = Vec::with_capacity(group.len());
            let mut weights = Vec::with_capacity(group.len());
            for e in group {
                let len = e.target.len();
                prev.push(match step {
                    0 => BOS,
                    s if s <= len => e.target[s - 1],
                    _ => PAD,
                });
                let (tgt, w) = match step {
                    s if s < len => (e.target[s], 1.0),
                    s if s == len => (EOS, 1.0),
                    _ => (PAD, 0.0),
                };
                tokens += (w > 0.0) as usize;
                targets.push(tgt);
                weights.push(w);
            }
            let (logits, next) = self.decode_step(&prev, &state)?;
            state = next;
            losses.push(t.apply(OpKind::SoftmaxNll { targets, weights }, &[logits])?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = t.add(total, l)?;
        }
        Ok((total, tokens))
    }
}
