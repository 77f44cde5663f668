use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{Policy, Token};
use crate::numerics::Prng;
use crate::tasks::{Family, TaskInstance, MAX_NEW_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EvalMode {
    Greedy,
    /// `n` samples per task at `temperature`; task `i` uses stream `i` of `seed`.
    Sampled {
        n: usize,
        temperature: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u64,
    pub family: Family,
    pub samples: usize,
    pub correct: usize,
    /// Greedy output, or the first sample.
    pub output: Vec<Token>,
}

impl TaskRecord {
    /// Greedy pass, or at least one correct sample.
    pub fn passed(&self) -> bool {
        self.correct > 0
    }

    pub fn score(&self) -> f64 {
        self.correct as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mode: EvalMode,
    pub records: Vec<TaskRecord>,
    /// Mean per-task score: pass rate for greedy, sample success rate for sampled.
    pub accuracy: f64,
}

impl Evaluation {
    pub fn family_accuracy(&self, family: Family) -> Option<f64> {
        let rs: Vec<&TaskRecord> = self.records.iter().filter(|r| r.family == family).collect();
        (!rs.is_empty()).then(|| rs.iter().map(|r| r.score()).sum::<f64>() / rs.len() as f64)
    }
}

pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    tasks: &[TaskInstance],
    mode: EvalMode,
) -> Result<Evaluation> {
    if tasks.is_empty() {
        return contract("no test tasks");
    }
    let mut records = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let rec = match mode {
            EvalMode::Greedy => {
                let out = policy.greedy(&task.prompt, MAX_NEW_TOKENS)?;
                let correct = usize::from(task.verify(&out));
                TaskRecord {
                    task_id: task.id,
                    family: task.family,
                    samples: 1,
                    correct,
                    output: out,
                }
            }
            EvalMode::Sampled {
                n,
                temperature,
                seed,
            } => {
                if n == 0 {
                    return contract("sampled evaluation needs n ≥ 1");
                }
                let mut rng = Prng::new(seed).derive(i as u64);
                let mut correct = 0;
                let mut first = None;
                for _ in 0..n {
                    let out = policy.sample(&task.prompt, MAX_NEW_TOKENS, temperature, &mut rng)?;
                    correct += usize::from(task.verify(&out));
                    first.get_or_insert(out);
                }
                TaskRecord {
                    task_id: task.id,
                    family: task.family,
                    samples: n,
                    correct,
                    output: first.unwrap_or_default(),
                }
            }
        };
        records.push(rec);
    }
    let accuracy = records.iter().map(TaskRecord::score).sum::<f64>() / records.len() as f64;
    Ok(Evaluation {
        mode,
        records,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{generate_split, LookupPolicy, WrongPolicy};

    #[test]
    fn perfect_and_adversarial_policies() {
        let (_, test) = generate_split(9, 4, 24, &Family::ALL).unwrap();
        let good = evaluate(&LookupPolicy { vocab_size: 64 }, &test, EvalMode::Greedy).unwrap();
        assert_eq!(good.accuracy, 1.0);
        let bad = evaluate(&WrongPolicy { vocab_size: 64 }, &test, EvalMode::Greedy).unwrap();
        assert_eq!(bad.accuracy, 0.0);
        let sampled = evaluate(
            &LookupPolicy { vocab_size: 64 },
            &test,
            EvalMode::Sampled {
                n: 3,
                temperature: 1.0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(sampled.accuracy, 1.0);
        assert!(sampled.records.iter().all(|r| r.correct == 3));
    }
}
