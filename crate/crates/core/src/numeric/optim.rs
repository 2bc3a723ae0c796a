use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Seedable, platform-independent generator used everywhere randomness
/// appears.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Half-width of the initialization interval, `√(3/d)`.
pub fn init_bound(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument("fan dimension must be >= 1".into()));
    }
    Ok((3.0 / d as f64).sqrt())
}

/// I.i.d. samples from `U[−√(3/d), √(3/d)]`.
pub fn init_uniform(shape: &[usize], d: usize, seed: u64) -> Result<Tensor> {
    init_uniform_with(&mut seeded_rng(seed), shape, d)
}

pub fn init_uniform_with(rng: &mut impl Rng, shape: &[usize], d: usize) -> Result<Tensor> {
    let bound = init_bound(d)?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Rescale all gradients together when their joint L2 norm is too large.
    #[default]
    Norm,
    /// Clamp every element into `[−threshold, threshold]`.
    Value,
}

/// Clip `grads` in place. Returns the global L2 norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], threshold: f64, mode: ClipMode) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be > 0, got {threshold}"
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("clip_gradients"));
    }
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    match mode {
        ClipMode::Norm => {
            if norm > threshold {
                let s = threshold / norm;
                grads.iter_mut().for_each(|g| g.scale_in_place(s));
            }
        }
        ClipMode::Value => {
            for g in grads.iter_mut() {
                g.data_mut()
                    .iter_mut()
                    .for_each(|x| *x = x.clamp(-threshold, threshold));
            }
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return shape_err(
                "adam",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            );
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return shape_err(
                    "adam",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                );
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                md[j] = b1 * md[j] + (1.0 - b1) * gd[j];
                vd[j] = b2 * vd[j] + (1.0 - b2) * gd[j] * gd[j];
                let mhat = md[j] / c1;
                let vhat = vd[j] / c2;
                pd[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
