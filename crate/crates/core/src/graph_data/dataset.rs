//! Dataset specification, reproducible generation, and JSON-lines files.
//!
//! A dataset directory holds `train.jsonl`, `val.jsonl`, `test.jsonl` (one
//! [`Sample`] per line) and `meta.json`, the [`DatasetSpec`] that produced
//! them.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::sample::{gen_sample, Algorithm, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub algorithm: Algorithm,
    pub counts: SplitCounts,
    /// Inclusive range of training instance sizes.
    pub train_sizes: (usize, usize),
    pub val_size: usize,
    pub test_size: usize,
    pub edge_probabilities: Vec<f64>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn edge_probability_grid() -> Vec<f64> {
        (1..=9).map(|k| k as f64 / 10.0).collect()
    }

    /// Split proportions and sizes used for full-scale runs.
    pub fn paper(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            algorithm,
            counts: SplitCounts {
                train: 100_000,
                val: 100,
                test: 100,
            },
            train_sizes: (8, 16),
            val_size: 16,
            test_size: 64,
            edge_probabilities: Self::edge_probability_grid(),
            seed,
        }
    }

    /// Laptop-scale variant: 5000 training samples, same sizes otherwise.
    pub fn desk(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            counts: SplitCounts {
                train: 5_000,
                val: 100,
                test: 100,
            },
            ..Self::paper(algorithm, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.counts;
        if c.train == 0 || c.val == 0 || c.test == 0 {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        let (lo, hi) = self.train_sizes;
        if lo < 2 || lo > hi || self.val_size < 2 || self.test_size < 2 {
            return Err(Error::Config("instance sizes must be at least 2 with lo ≤ hi".into()));
        }
        if self.edge_probabilities.is_empty()
            || self.edge_probabilities.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("edge probabilities must be a non-empty subset of [0,1]".into()));
        }
        Ok(())
    }

    /// Generator for sample `index` of `split`; independent of how many other
    /// samples are generated or in which order.
    fn sample_rng(&self, split: Split, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((split.stream_tag() << 48) | index as u64);
        rng
    }

    pub fn generate_one(&self, split: Split, index: usize) -> Sample {
        let mut rng = self.sample_rng(split, index);
        let n = match split {
            Split::Train => rng.random_range(self.train_sizes.0..=self.train_sizes.1),
            Split::Val => self.val_size,
            Split::Test => self.test_size,
        };
        gen_sample(self.algorithm, n, &self.edge_probabilities, &mut rng)
    }

    pub fn generate_split(&self, split: Split) -> Vec<Sample> {
        (0..self.counts.get(split))
            .into_par_iter()
            .map(|i| self.generate_one(split, i))
            .collect()
    }
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

pub fn meta_path(dir: &Path) -> PathBuf {
    dir.join("meta.json")
}

/// Generates all three splits and writes them under `dir`.
pub fn make_dataset(spec: &DatasetSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in Split::ALL {
        let samples = spec.generate_split(split);
        write_jsonl(&split_path(dir, split), &samples)?;
    }
    let meta = meta_path(dir);
    let text = serde_json::to_string_pretty(spec).map_err(|e| Error::json(&meta, e))?;
    fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates every sample of a JSON-lines file.
pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        s.validate()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn read_meta(dir: &Path) -> Result<DatasetSpec> {
    let path = meta_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(alg: Algorithm) -> DatasetSpec {
        DatasetSpec {
            counts: SplitCounts {
                train: 4,
                val: 2,
                test: 2,
            },
            ..DatasetSpec::desk(alg, 42)
        }
    }

    #[test]
    fn split_sizes_and_counts() {
        for alg in Algorithm::ALL {
            let spec = small(alg);
            let train = spec.generate_split(Split::Train);
            assert_eq!(train.len(), 4);
            assert!(train.iter().all(|s| (8..=16).contains(&s.n())));
            let val = spec.generate_split(Split::Val);
            assert!(val.len() == 2 && val.iter().all(|s| s.n() == 16));
            let test = spec.generate_split(Split::Test);
            assert!(test.len() == 2 && test.iter().all(|s| s.n() == 64));
            for s in train.iter().chain(&val).chain(&test) {
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn files_are_byte_identical_across_runs() {
        let spec = small(Algorithm::BellmanFord);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_dataset(&spec, a.path()).unwrap();
        make_dataset(&spec, b.path()).unwrap();
        for split in Split::ALL {
            let x = fs::read(split_path(a.path(), split)).unwrap();
            let y = fs::read(split_path(b.path(), split)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(read_meta(a.path()).unwrap(), spec);
        let back = read_jsonl(&split_path(a.path(), Split::Train)).unwrap();
        assert_eq!(back, spec.generate_split(Split::Train));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_jsonl(Path::new("/nonexistent/train.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/train.jsonl"));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = small(Algorithm::Scc);
        spec.counts.val = 0;
        assert!(spec.validate().is_err());
        let mut spec = small(Algorithm::Scc);
        spec.train_sizes = (1, 4);
        assert!(spec.validate().is_err());
    }
}
