//! Synthetic list-transformation tasks with exact verifiers.
//!
//! Vocabulary layout: `0` EOS, `1` SEP, `2..=5` family markers, `6..=9` keys,
//! `16..32` list values. A prompt is `[family, (key), x_1 … x_n, SEP]` and the
//! gold completion is the transformed list followed by EOS.

pub mod collect;
pub mod policies;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Result};
use crate::model::{Token, EOS};
use crate::numerics::Prng;
use crate::tuning::TrainExample;

pub use collect::{collect_verified, VerifiedDataset, VerifiedExample};
pub use policies::{LookupPolicy, WrongPolicy};

pub const SEP: Token = 1;
pub const KEY_BASE: Token = 6;
pub const N_KEYS: usize = 4;
pub const VALUE_BASE: Token = 16;
pub const N_VALUES: usize = 16;
pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 8;
/// Value shift applied by each MAP_BY_KEY key.
pub const KEY_SHIFTS: [usize; N_KEYS] = [3, 5, 7, 11];
/// Generation budget: longest completion plus one.
pub const MAX_NEW_TOKENS: usize = MAX_LEN + 2;
/// Smallest vocabulary that holds every task token.
pub const MIN_VOCAB: usize = VALUE_BASE + N_VALUES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Reverse,
    Sort,
    Increment,
    MapByKey,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Reverse,
        Family::Sort,
        Family::Increment,
        Family::MapByKey,
    ];

    pub fn marker(self) -> Token {
        2 + self as usize
    }

    pub fn from_marker(t: Token) -> Option<Family> {
        Family::ALL.get(t.checked_sub(2)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Reverse => "REVERSE",
            Family::Sort => "SORT",
            Family::Increment => "INCREMENT",
            Family::MapByKey => "MAP_BY_KEY",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| {
                f.name().eq_ignore_ascii_case(s)
                    || f.name().replace('_', "-").eq_ignore_ascii_case(s)
            })
            .ok_or_else(|| crate::Error::Config(format!("unknown task family {s:?}")))
    }
}

/// One problem instance. The id is derived from the prompt, so equal ids mean
/// equal problems.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: u64,
    pub family: Family,
    pub key: Option<usize>,
    pub input: Vec<usize>,
    pub prompt: Vec<Token>,
}

fn prompt_id(prompt: &[Token]) -> u64 {
    let mut h = Sha256::new();
    for &t in prompt {
        h.update((t as u32).to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

impl TaskInstance {
    /// `input` holds value indices in `0..N_VALUES`.
    pub fn new(family: Family, key: Option<usize>, input: Vec<usize>) -> Result<Self> {
        if input.len() < MIN_LEN || input.len() > MAX_LEN || input.iter().any(|&x| x >= N_VALUES) {
            return contract(format!("task input {input:?} outside the task space"));
        }
        if (family == Family::MapByKey) != key.is_some() || key.is_some_and(|k| k >= N_KEYS) {
            return contract(format!("family {family} with key {key:?}"));
        }
        let mut prompt = vec![family.marker()];
        prompt.extend(key.map(|k| KEY_BASE + k));
        prompt.extend(input.iter().map(|&x| VALUE_BASE + x));
        prompt.push(SEP);
        Ok(Self {
            id: prompt_id(&prompt),
            family,
            key,
            input,
            prompt,
        })
    }

    /// Parses a prompt back into an instance.
    pub fn from_prompt(prompt: &[Token]) -> Result<Self> {
        let bad = || crate::Error::Contract(format!("not a task prompt: {prompt:?}"));
        let (&first, rest) = prompt.split_first().ok_or_else(bad)?;
        let family = Family::from_marker(first).ok_or_else(bad)?;
        let (key, rest) = if family == Family::MapByKey {
            match rest.split_first() {
                Some((&k, r)) if (KEY_BASE..KEY_BASE + N_KEYS).contains(&k) => {
                    (Some(k - KEY_BASE), r)
                }
                _ => return Err(bad()),
            }
        } else {
            (None, rest)
        };
        match rest.split_last() {
            Some((&SEP, body)) => {
                let mut input = Vec::with_capacity(body.len());
                for &t in body {
                    if !(VALUE_BASE..VALUE_BASE + N_VALUES).contains(&t) {
                        return Err(bad());
                    }
                    input.push(t - VALUE_BASE);
                }
                Self::new(family, key, input)
            }
            _ => Err(bad()),
        }
    }

    /// Transformed list as tokens, without EOS.
    pub fn answer(&self) -> Vec<Token> {
        let out: Vec<usize> = match self.family {
            Family::Reverse => self.input.iter().rev().copied().collect(),
            Family::Sort => {
                let mut v = self.input.clone();
                v.sort_unstable();
                v
            }
            Family::Increment => self.input.iter().map(|&x| (x + 1) % N_VALUES).collect(),
            Family::MapByKey => {
                let s = KEY_SHIFTS[self.key.expect("MAP_BY_KEY has a key")];
                self.input.iter().map(|&x| (x + s) % N_VALUES).collect()
            }
        };
        out.into_iter().map(|x| VALUE_BASE + x).collect()
    }

    /// Gold completion: answer then EOS.
    pub fn gold(&self) -> Vec<Token> {
        let mut g = self.answer();
        g.push(EOS);
        g
    }

    /// A completion passes iff it starts with the answer immediately followed by EOS.
    /// Tokens after the first EOS are ignored.
    pub fn verify(&self, completion: &[Token]) -> bool {
        let gold = self.gold();
        completion.len() >= gold.len() && completion[..gold.len()] == gold[..]
    }

    pub fn example(&self) -> TrainExample {
        TrainExample {
            prompt: self.prompt.clone(),
            completion: self.gold(),
        }
    }

    /// Probability that a uniformly random token sequence passes.
    pub fn chance_rate(&self, vocab_size: usize) -> f64 {
        (vocab_size as f64).powi(-(self.gold().len() as i32))
    }
}

pub fn random_instance(family: Family, rng: &mut Prng) -> TaskInstance {
    let len = MIN_LEN + rng.below((MAX_LEN - MIN_LEN + 1) as u64) as usize;
    let key = (family == Family::MapByKey).then(|| rng.below(N_KEYS as u64) as usize);
    let input = (0..len)
        .map(|_| rng.below(N_VALUES as u64) as usize)
        .collect();
    TaskInstance::new(family, key, input).expect("sampled inside the task space")
}

/// `n` distinct instances, families assigned round-robin, skipping ids in `exclude`.
pub fn generate_tasks(
    seed: u64,
    n: usize,
    families: &[Family],
    exclude: &HashSet<u64>,
) -> Result<Vec<TaskInstance>> {
    if families.is_empty() {
        return contract("at least one task family is required");
    }
    let mut rng = Prng::new(seed);
    let mut seen = exclude.clone();
    let mut out = Vec::with_capacity(n);
    let mut misses = 0usize;
    while out.len() < n {
        let fam = families[out.len() % families.len()];
        let t = random_instance(fam, &mut rng);
        if seen.insert(t.id) {
            out.push(t);
            misses = 0;
        } else {
            misses += 1;
            if misses > 10_000 {
                return contract("task space exhausted");
            }
        }
    }
    Ok(out)
}

/// Disjoint train and test sets with balanced families.
pub fn generate_split(
    seed: u64,
    n_train: usize,
    n_test: usize,
    families: &[Family],
) -> Result<(Vec<TaskInstance>, Vec<TaskInstance>)> {
    let test = generate_tasks(seed ^ 0x7465_7374, n_test, families, &HashSet::new())?;
    let exclude: HashSet<u64> = test.iter().map(|t| t.id).collect();
    let train = generate_tasks(seed ^ 0x7472_6169, n_train, families, &exclude)?;
    Ok((train, test))
}

/// Pretraining corpus drawn with per-family weights, avoiding `exclude`.
pub fn mixture_corpus(
    seed: u64,
    n: usize,
    weights: &[(Family, f64)],
    exclude: &HashSet<u64>,
) -> Result<Vec<TrainExample>> {
    if weights.is_empty()
        || weights.iter().any(|&(_, w)| !(w >= 0.0))
        || weights.iter().all(|&(_, w)| w == 0.0)
    {
        return contract("mixture weights must be nonnegative with a positive total");
    }
    let w: Vec<f64> = weights.iter().map(|&(_, w)| w).collect();
    let mut rng = Prng::new(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let fam = weights[rng.categorical(&w)].0;
        let t = random_instance(fam, &mut rng);
        if !exclude.contains(&t.id) {
            out.push(t.example());
        }
    }
    Ok(out)
}
