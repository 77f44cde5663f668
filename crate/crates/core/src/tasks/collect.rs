//! Verified training data sampled from the frozen model.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::{Policy, Token};
use crate::numerics::Prng;
use crate::tasks::{Family, TaskInstance, MAX_NEW_TOKENS};
use crate::tuning::TrainExample;

/// One JSONL record of a verified dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedExample {
    pub task_id: u64,
    pub family: Family,
    pub prompt: Vec<Token>,
    pub completion: Vec<Token>,
}

impl VerifiedExample {
    pub fn example(&self) -> TrainExample {
        TrainExample {
            prompt: self.prompt.clone(),
            completion: self.completion.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifiedDataset {
    pub records: Vec<VerifiedExample>,
}

impl VerifiedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn examples(&self) -> Vec<TrainExample> {
        self.records.iter().map(VerifiedExample::example).collect()
    }

    /// Every record re-verifies against its prompt and no task repeats.
    pub fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let task = TaskInstance::from_prompt(&r.prompt)?;
            if task.id != r.task_id || task.family != r.family {
                return contract(format!(
                    "record {i}: task id or family does not match its prompt"
                ));
            }
            if !task.verify(&r.completion) {
                return contract(format!("record {i}: completion fails verification"));
            }
            if !ids.insert(r.task_id) {
                return contract(format!("record {i}: task {} appears twice", r.task_id));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads JSONL and re-verifies every record.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        let ds = Self { records };
        ds.check()?;
        Ok(ds)
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }
}

/// Per task, samples until the first verified completion or `max_attempts`.
/// Task `i` draws from stream `i` of `seed`, so results do not depend on order
/// of evaluation.
pub fn collect_verified<P: Policy + ?Sized>(
    policy: &P,
    tasks: &[TaskInstance],
    temperature: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<VerifiedDataset> {
    if max_attempts == 0 {
        return contract("max_attempts must be at least 1");
    }
    let root = Prng::new(seed);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, task) in tasks.iter().enumerate() {
        if !seen.insert(task.id) {
            continue;
        }
        let mut rng = root.derive(i as u64);
        for _ in 0..max_attempts {
            let out = policy.sample(&task.prompt, MAX_NEW_TOKENS, temperature, &mut rng)?;
            if task.verify(&out) {
                records.push(VerifiedExample {
                    task_id: task.id,
                    family: task.family,
                    prompt: task.prompt.clone(),
                    completion: task.gold(),
                });
                break;
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Collection(format!(
            "no verified solutions among {} tasks after {max_attempts} attempts each; the model needs more pretraining",
            tasks.len()
        )));
    }
    Ok(VerifiedDataset { records })
}
