//! Deterministic toy instruction tasks. `copy` and `kv_lookup` answers can be
//! found verbatim in the prompt; `reverse` and `arith` answers cannot.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, SftSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Copy,
    Reverse,
    KvLookup,
    Arith,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Copy, Task::Reverse, Task::KvLookup, Task::Arith];

    pub fn name(self) -> &'static str {
        match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::KvLookup => "kv_lookup",
            Task::Arith => "arith",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            "kv_lookup" | "kv" => Ok(Task::KvLookup),
            "arith" => Ok(Task::Arith),
            other => Err(format!(
                "unknown task `{other}` (expected copy, reverse, kv_lookup or arith)"
            )),
        }
    }
}

/// Separator between a task's instruction and its answer.
pub const ARROW: &str = "→";
const KV_PAIRS: usize = 3;

pub fn copy_sample(s: &str) -> SftSample {
    SftSample::from_text(&format!("COPY:{s}{ARROW}"), s).with_task(Task::Copy.name())
}

pub fn reverse_sample(s: &str) -> SftSample {
    let rev: String = s.chars().rev().collect();
    SftSample::from_text(&format!("REV:{s}{ARROW}"), &rev).with_task(Task::Reverse.name())
}

pub fn kv_sample(pairs: &[(char, String)], query: char) -> SftSample {
    let mut prompt = String::new();
    for (k, v) in pairs {
        prompt.push_str(&format!("{k}={v};"));
    }
    prompt.push_str(&format!("GET {query}"));
    let value = pairs
        .iter()
        .find(|(k, _)| *k == query)
        .map(|(_, v)| v.as_str())
        .expect("query key is one of the pairs");
    SftSample::from_text(&prompt, value).with_task(Task::KvLookup.name())
}

pub fn arith_sample(a: u32, b: u32) -> SftSample {
    SftSample::from_text(&format!("{a}+{b}="), &(a + b).to_string()).with_task(Task::Arith.name())
}

fn letters(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

/// `n` samples of `task`, fully determined by the arguments. `len_range` is
/// the string length for copy/reverse and the value length for kv_lookup;
/// arith operands are always below 1000.
pub fn gen_synthetic(task: Task, n: usize, len_range: RangeInclusive<usize>, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let samples = (0..n)
        .map(|_| match task {
            Task::Copy => {
                let len = rng.random_range(len_range.clone());
                copy_sample(&letters(&mut rng, len))
            }
            Task::Reverse => {
                let len = rng.random_range(len_range.clone());
                reverse_sample(&letters(&mut rng, len))
            }
            Task::KvLookup => {
                let keys = sample(&mut rng, 10, KV_PAIRS);
                let pairs: Vec<(char, String)> = keys
                    .iter()
                    .map(|k| {
                        let len = rng.random_range(len_range.clone());
                        ((b'0' + k as u8) as char, letters(&mut rng, len))
                    })
                    .collect();
                let query = pairs[rng.random_range(0..KV_PAIRS)].0;
                kv_sample(&pairs, query)
            }
            Task::Arith => arith_sample(rng.random_range(0..1000), rng.random_range(0..1000)),
        })
        .collect();
    Corpus {
        name: task.name().to_string(),
        source: format!(
            "synthetic:{}:{n}:{}-{}:{seed}",
            task.name(),
            len_range.start(),
            len_range.end()
        ),
        samples,
    }
}
