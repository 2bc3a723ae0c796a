use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Prepared;
use crate::error::{Error, Result};
use crate::model::Example;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskKind {
    /// `S → R`.
    NoFacts,
    /// `{f_1..f_k, S} → R`.
    Facts,
    /// `{f_1..f_k, S} → f_i`, once per fact.
    Autoencoder,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::NoFacts => "NOFACTS",
            TaskKind::Facts => "FACTS",
            TaskKind::Autoencoder => "AUTOENCODER",
        })
    }
}

/// Which conversation set a task draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    General,
    Grounded,
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::General => "general",
            Dataset::Grounded => "grounded",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dataset: Dataset,
    /// Mixing ratio; `None` means proportional to the task's example count.
    pub alpha: Option<f64>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, dataset: Dataset) -> Self {
        Self {
            kind,
            dataset,
            alpha: None,
        }
    }

    pub fn label(&self) -> String {
        format!("{}({})", self.kind, self.dataset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SEQ2SEQ")]
    Seq2Seq,
    #[serde(rename = "MTASK")]
    Mtask,
    #[serde(rename = "MTASK-R")]
    MtaskR,
    #[serde(rename = "MTASK-F")]
    MtaskF,
    #[serde(rename = "MTASK-RF")]
    MtaskRf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Seq2Seq,
        Variant::Mtask,
        Variant::MtaskR,
        Variant::MtaskF,
        Variant::MtaskRf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Seq2Seq => "SEQ2SEQ",
            Variant::Mtask => "MTASK",
            Variant::MtaskR => "MTASK-R",
            Variant::MtaskF => "MTASK-F",
            Variant::MtaskRf => "MTASK-RF",
        }
    }

    pub fn tasks(&self) -> Vec<TaskSpec> {
        use Dataset::*;
        use TaskKind::*;
        let t = TaskSpec::new;
        match self {
            Variant::Seq2Seq => vec![t(NoFacts, General)],
            Variant::Mtask => vec![t(NoFacts, General), t(NoFacts, Grounded)],
            Variant::MtaskR => vec![t(NoFacts, General), t(Facts, Grounded)],
            Variant::MtaskF => vec![t(NoFacts, General), t(Autoencoder, Grounded)],
            Variant::MtaskRf => vec![t(NoFacts, General), t(Facts, Grounded), t(Autoencoder, Grounded)],
        }
    }

    /// Datasets the recipe trains on, general first.
    pub fn datasets(&self) -> Vec<Dataset> {
        let mut out: Vec<Dataset> = Vec::new();
        for t in self.tasks() {
            if !out.contains(&t.dataset) {
                out.push(t.dataset);
            }
        }
        out
    }

    /// Whether the trained model reads facts at inference.
    pub fn grounded(&self) -> bool {
        self.tasks().iter().any(|t| t.kind != TaskKind::NoFacts)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s}")))
    }
}

/// Examples of one task and how many conversations it had to skip.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub examples: Vec<Example>,
    pub skipped: usize,
}

/// Turn prepared conversations into the examples of a task. FACTS and
/// AUTOENCODER skip conversations without facts.
pub fn build_examples(kind: TaskKind, convs: &[Prepared]) -> TaskData {
    let mut examples = Vec::new();
    let mut skipped = 0;
    for c in convs {
        match kind {
            TaskKind::NoFacts => examples.push(Example::new(c.source.clone(), None, c.response.clone())),
            _ if c.facts.is_empty() => skipped += 1,
            TaskKind::Facts => examples.push(Example::new(
                c.source.clone(),
                Some(c.facts.clone()),
                c.response.clone(),
            )),
            TaskKind::Autoencoder => {
                for f in c.facts.iter().filter(|f| !f.is_empty()) {
                    examples.push(Example::new(c.source.clone(), Some(c.facts.clone()), f.clone()));
                }
            }
        }
    }
    TaskData { examples, skipped }
}

/// `(S, F, R)` examples for perplexity, with facts wherever some were
/// retrieved. Models that do not read facts ignore them.
pub fn eval_examples(convs: &[Prepared]) -> Vec<Example> {
    convs
        .iter()
        .map(|c| Example::new(c.source.clone(), (!c.facts.is_empty()).then(|| c.facts.clone()), c.response.clone()))
        .collect()
}

/// Swapped `R → S` pairs for the reverse model, without facts.
pub fn reverse_examples(convs: &[Prepared]) -> Vec<Example> {
    convs
        .iter()
        .map(|c| Example::new(c.response.clone(), None, c.source.clone()))
        .collect()
}

/// Index `i` with probability `α_i / Σα`.
pub fn sample_task(alphas: &[f64], rng: &mut impl Rng) -> Result<usize> {
    if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::InvalidArgument(format!("mixing ratios must be finite and >= 0: {alphas:?}")));
    }
    let total: f64 = alphas.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all mixing ratios are zero".into()));
    }
    let mut x = rng.random::<f64>() * total;
    for (i, &a) in alphas.iter().enumerate() {
        if x < a {
            return Ok(i);
        }
        x -= a;
    }
    Ok(alphas.iter().rposition(|&a| a > 0.0).expect("positive total"))
}
