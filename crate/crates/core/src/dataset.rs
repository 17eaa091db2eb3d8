//! A set of posts sharing one signal timeline, with a fixed train/val/test
//! split, and its on-disk layout.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::timeline::{
    read_posts_jsonl, read_signal, write_posts_jsonl, write_signal, ObservationWindow, Post,
    SignalTimeline, DIMS,
};

pub const POSTS_FILE: &str = "posts.jsonl";
pub const SIGNAL_FILE: &str = "signal.csv";
pub const SIGNAL_META_FILE: &str = "signal.json";
pub const DATASET_FILE: &str = "dataset.json";

/// Post indices per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle, then `floor(0.7 n)` train, `floor(0.15 n)` val and the
    /// remainder test.
    pub fn shuffled(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, "split", &[]));
        let n_train = n * 70 / 100;
        let n_val = n * 15 / 100;
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Self { train: idx, val, test }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("split index {i} is out of range or repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    window: ObservationWindow,
    split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub signal: SignalTimeline,
    pub posts: Vec<Post>,
    pub split: Split,
    pub window: ObservationWindow,
}

impl Dataset {
    pub fn new(signal: SignalTimeline, posts: Vec<Post>, split: Split, window: ObservationWindow) -> Result<Self> {
        split.validate(posts.len())?;
        window.validate()?;
        Ok(Self {
            signal,
            posts,
            split,
            window,
        })
    }

    pub fn train(&self) -> impl Iterator<Item = &Post> {
        self.split.train.iter().map(|&i| &self.posts[i])
    }

    pub fn val(&self) -> impl Iterator<Item = &Post> {
        self.split.val.iter().map(|&i| &self.posts[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &Post> {
        self.split.test.iter().map(|&i| &self.posts[i])
    }

    /// Per-metric standard deviation of horizon-end cumulative counts over the
    /// training posts; zero spreads become 1.
    pub fn metric_std(&self) -> [f64; DIMS] {
        let finals: Vec<[f64; DIMS]> = self
            .train()
            .map(|p| p.history().value_at(self.window.horizon_end(p.t0)).to_f64())
            .collect();
        let n = finals.len().max(1) as f64;
        std::array::from_fn(|m| {
            let mean = finals.iter().map(|f| f[m]).sum::<f64>() / n;
            let var = finals.iter().map(|f| (f[m] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_posts_jsonl(&dir.join(POSTS_FILE), &self.posts)?;
        write_signal(&dir.join(SIGNAL_FILE), &dir.join(SIGNAL_META_FILE), &self.signal)?;
        let meta = DatasetMeta {
            window: self.window,
            split: self.split.clone(),
        };
        std::fs::write(dir.join(DATASET_FILE), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let posts = read_posts_jsonl(&dir.join(POSTS_FILE))?;
        let signal = read_signal(&dir.join(SIGNAL_FILE), &dir.join(SIGNAL_META_FILE))?;
        let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(dir.join(DATASET_FILE))?)?;
        Self::new(signal, posts, meta.split, meta.window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_posts_split_seven_one_two() {
        let s = Split::shuffled(10, 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(s, Split::shuffled(10, 3));
        assert_ne!(s, Split::shuffled(10, 4));
    }

    #[test]
    fn repeated_split_index_is_rejected() {
        let s = Split {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        assert!(s.validate(3).is_err());
    }
}
