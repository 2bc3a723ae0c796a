//! Deterministic synthetic corpus for desk-scale experiments.
//!
//! Businesses get a made-up name, a signature dish, a closing time and a
//! neighborhood, each stated by one fact. Grounded conversations ask about
//! one of these and the reply repeats it. Most questions say "this place"
//! rather than the name, and the facts never mention it either, so the reply
//! can only come from reading the facts. General conversations are
//! chit-chat whose reply follows from the message.
//!
//! Dev and test businesses never appear in training conversations.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Split};
use crate::error::Result;
use crate::experiment::DataDir;
use crate::facts::FactRecord;
use crate::numeric::{seeded_rng, SeededRng};

const SYLLABLES: &[&str] = &[
    "lu", "na", "ri", "ko", "ta", "mi", "so", "ve", "da", "pe", "zo", "ra", "li", "mo", "ka", "ne",
];
const DISHES: &[&str] = &[
    "tacos", "ramen", "burrito", "pho", "gnocchi", "brisket", "dumplings", "paella", "falafel",
    "lasagna", "curry", "poutine", "ceviche", "bibimbap", "pierogi", "risotto", "shawarma", "gumbo",
    "tamales", "empanadas",
];
const HOURS: &[&str] = &["8pm", "9pm", "10pm", "11pm", "midnight", "6pm", "7pm", "2am"];
const HOODS: &[&str] = &[
    "downtown", "midtown", "chinatown", "soho", "harlem", "brooklyn", "uptown", "chelsea",
    "williamsburg", "astoria", "tribeca", "bushwick",
];

const TOPICS: &[&str] = &[
    "music", "soccer", "coffee", "movies", "hiking", "jazz", "pizza", "books", "tennis", "cats",
    "dogs", "rain", "snow", "chess", "cooking",
];
const NAMES: &[&str] = &["sam", "alex", "jo", "max", "lee", "kim", "pat", "ana", "ben", "eve"];
const SHOWS: &[&str] = &[
    "inception", "up", "alien", "jaws", "heat", "rocky", "frozen", "coco", "shrek", "gravity",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train_entities: usize,
    pub dev_entities: usize,
    pub test_entities: usize,
    /// Grounded conversations per business and question kind.
    pub phrasings: usize,
    /// Chance that a question names the business; otherwise only the
    /// conversation's entity field links it to its facts.
    pub mention_rate: f64,
    pub general_train: usize,
    pub general_dev: usize,
    pub general_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_entities: 120,
            dev_entities: 15,
            test_entities: 15,
            phrasings: 2,
            mention_rate: 0.0,
            general_train: 480,
            general_dev: 60,
            general_test: 60,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthCorpus {
    pub facts: Vec<FactRecord>,
    pub general: Split,
    pub grounded: Split,
}

struct Business {
    name: String,
    dish: &'static str,
    hour: &'static str,
    hood: &'static str,
}

fn names(n: usize, rng: &mut SeededRng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.random_range(2..=3);
        let name: String = (0..k).map(|_| *SYLLABLES.choose(rng).expect("nonempty")).collect();
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn pick(rng: &mut SeededRng, xs: &[&'static str]) -> &'static str {
    xs.choose(rng).expect("nonempty")
}

fn grounded_conversations(b: &Business, cfg: &SynthConfig, rng: &mut SeededRng) -> Vec<Conversation> {
    let kinds: [([&str; 3], String); 3] = [
        (
            ["what should i order at {}?", "any food tips for {}?", "what is good at {}?"],
            format!("{} , definitely", b.dish),
        ),
        (
            ["when does {} close ?", "is {} open late ?", "how late is {} open ?"],
            format!("{} on most nights", b.hour),
        ),
        (
            ["where is {} ?", "how do i find {} ?", "is {} near me ?"],
            format!("{} , near the station", b.hood),
        ),
    ];
    let mut out = Vec::new();
    for (questions, reply) in kinds {
        let mut qs = questions;
        qs.shuffle(rng);
        for q in qs.into_iter().take(cfg.phrasings) {
            let place = if rng.random_bool(cfg.mention_rate) {
                format!("@{} ", b.name)
            } else {
                "this place ".to_string()
            };
            let q = q.replace("{}", &place).replace("  ", " ");
            out.push(Conversation::new("", q.trim(), reply.clone(), Some(&b.name)));
        }
    }
    out
}

fn facts_of(b: &Business) -> Vec<FactRecord> {
    let n = &b.name;
    [
        format!("order the {} here", b.dish),
        format!("the kitchen closes at {}", b.hour),
        format!("located in {}", b.hood),
    ]
    .into_iter()
    .map(|text| FactRecord {
        entity: n.clone(),
        text,
    })
    .collect()
}

fn general_conversation(rng: &mut SeededRng) -> Conversation {
    let (s, r) = match rng.random_range(0..6) {
        0 => {
            let t = pick(rng, TOPICS);
            (format!("do you like {t} ?"), format!("yes i love {t}"))
        }
        1 => {
            let t = pick(rng, TOPICS);
            (format!("i am so bored of {t}"), format!("what is wrong with {t} ?"))
        }
        2 => {
            let n = pick(rng, NAMES);
            (format!("good morning {n}"), "good morning to you too".to_string())
        }
        3 => {
            let n = pick(rng, NAMES);
            (format!("have you seen {n} today ?"), format!("no , {n} is away"))
        }
        4 => {
            let m = pick(rng, SHOWS);
            (format!("i just watched {m}"), format!("was {m} any good ?"))
        }
        _ => ("how are you ?".to_string(), "i am good thanks".to_string()),
    };
    Conversation::new("", s, r, None)
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = seeded_rng(cfg.seed);
    let total = cfg.train_entities + cfg.dev_entities + cfg.test_entities;
    let businesses: Vec<Business> = names(total, &mut rng)
        .into_iter()
        .map(|name| Business {
            name,
            dish: pick(&mut rng, DISHES),
            hour: pick(&mut rng, HOURS),
            hood: pick(&mut rng, HOODS),
        })
        .collect();
    let facts = businesses.iter().flat_map(facts_of).collect();

    let (train_b, rest) = businesses.split_at(cfg.train_entities);
    let (dev_b, test_b) = rest.split_at(cfg.dev_entities);
    let mut grounded_split = |bs: &[Business], tag: &str| {
        let mut convs: Vec<Conversation> = bs
            .iter()
            .flat_map(|b| grounded_conversations(b, cfg, &mut rng))
            .collect();
        convs.shuffle(&mut rng);
        label(convs, &format!("g-{tag}"))
    };
    let grounded = Split {
        train: grounded_split(train_b, "train"),
        dev: grounded_split(dev_b, "dev"),
        test: grounded_split(test_b, "test"),
    };
    let mut general_split = |n: usize, tag: &str| {
        let convs = (0..n).map(|_| general_conversation(&mut rng)).collect();
        label(convs, &format!("c-{tag}"))
    };
    let general = Split {
        train: general_split(cfg.general_train, "train"),
        dev: general_split(cfg.general_dev, "dev"),
        test: general_split(cfg.general_test, "test"),
    };
    SynthCorpus {
        facts,
        general,
        grounded,
    }
}

fn label(mut convs: Vec<Conversation>, prefix: &str) -> Vec<Conversation> {
    for (i, c) in convs.iter_mut().enumerate() {
        c.id = format!("{prefix}-{i}");
    }
    convs
}

impl SynthCorpus {
    /// Write the corpus in the [`DataDir`] layout.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        DataDir {
            facts: self.facts.clone(),
            general: self.general.clone(),
            grounded: self.grounded.clone(),
        }
        .save(dir)
    }
}
