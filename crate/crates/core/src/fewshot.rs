//! Seeded few-shot sampling.
//!
//! Ids of a split are sorted, shuffled with a SplitMix64-driven
//! Fisher-Yates pass and truncated. SplitMix64 is fully specified by its
//! three constants, so a given `(ids, k, seed)` yields the same subset on
//! every platform.

use crate::dataset::{Dataset, Example, Split, Task};
use crate::error::{Error, Result};

/// SplitMix64 (Steele, Lea and Flood): a Weyl counter with increment
/// `0x9E3779B97F4A7C15` followed by a two-round xor-shift-multiply mix.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
    const MIX2: u64 = 0x94D0_49BB_1331_11EB;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(Self::MIX1);
        z = (z ^ (z >> 27)).wrapping_mul(Self::MIX2);
        z ^ (z >> 31)
    }

    /// Uniform in `0..bound` by rejection, no modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePlan {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub task: Task,
    /// Full-data regime: a dev split smaller than `k` is used whole instead
    /// of failing.
    pub full: bool,
}

impl SamplePlan {
    pub const DEFAULT_SEEDS: std::ops::Range<u64> = 0..10;

    pub fn new(task: Task, k: usize, seeds: Vec<u64>) -> Result<Self> {
        let plan = Self {
            k,
            seeds,
            task,
            full: false,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("seeds must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSplit {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl FewShotSplit {
    pub fn train_ids(&self) -> Vec<&str> {
        self.train.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn dev_ids(&self) -> Vec<&str> {
        self.dev.iter().map(|e| e.id.as_str()).collect()
    }
}

fn sorted_split(ds: &Dataset, split: Split) -> Vec<&Example> {
    let mut v: Vec<&Example> = ds.split(split).collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

fn insufficient(split: Split, required: usize, available: usize) -> Error {
    Error::InsufficientExamples {
        split: split.name().into(),
        required,
        available,
    }
}

/// Draws `k` training examples and a dev set for one seed. MedNLI dev comes
/// from the dev split; MedSTS dev is the next `k` shuffled training
/// examples, so it never overlaps the training sample. Test passes through.
pub fn sample_fewshot(ds: &Dataset, plan: &SamplePlan, seed: u64) -> Result<FewShotSplit> {
    plan.validate()?;
    let k = plan.k;
    let mut rng = SplitMix64::new(seed);
    let mut train = sorted_split(ds, Split::Train);
    let (train_sample, dev_sample) = match plan.task {
        Task::Mednli => {
            if train.len() < k {
                return Err(insufficient(Split::Train, k, train.len()));
            }
            let mut dev = sorted_split(ds, Split::Dev);
            let dev_k = if plan.full { k.min(dev.len()) } else { k };
            if dev.len() < dev_k || dev_k == 0 {
                return Err(insufficient(Split::Dev, k, dev.len()));
            }
            rng.shuffle(&mut train);
            rng.shuffle(&mut dev);
            (train[..k].to_vec(), dev[..dev_k].to_vec())
        }
        Task::Medsts => {
            if train.len() < 2 * k {
                return Err(insufficient(Split::Train, 2 * k, train.len()));
            }
            rng.shuffle(&mut train);
            (train[..k].to_vec(), train[k..2 * k].to_vec())
        }
    };
    Ok(FewShotSplit {
        train: train_sample.into_iter().cloned().collect(),
        dev: dev_sample.into_iter().cloned().collect(),
        test: ds.split(Split::Test).cloned().collect(),
    })
}
