use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pcn_core::clustering::{generate_sbm_sequence, Partition, SbmParams};
use pcn_core::model::{CostParams, TransactionSequence};
use pcn_core::seed::split_seed;
use serde::{Deserialize, Serialize};

/// Seed streams derived from the single config seed.
pub const STREAM_SEQUENCE: u64 = 0;
pub const STREAM_CLUSTERING: u64 = 1;
pub const STREAM_VERIFY: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Star,
    DoubleStar,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyChoice {
    Star,
    DoubleStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceSource {
    File(PathBuf),
    Sbm(SbmParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: Option<TopologyChoice>,
    pub algorithm: Algorithm,
    pub costs: CostParams,
    pub sequence: Option<SequenceSource>,
    /// Star center; defaults to a fresh node `p`.
    pub center: Option<usize>,
    /// Partition JSON for the double star; generated sequences fall back to
    /// their planted partition.
    pub partition: Option<PathBuf>,
    pub seed: u64,
    /// Batch seeds for `report`.
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative paths in a config resolve against its directory
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(SequenceSource::File(f)) = &mut cfg.sequence {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        if let Some(p) = &mut cfg.partition {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.costs.validate()?;
        let expected = match self.algorithm {
            Algorithm::Star | Algorithm::Oracle => TopologyChoice::Star,
            Algorithm::DoubleStar => TopologyChoice::DoubleStar,
        };
        if let Some(t) = self.topology {
            if t != expected {
                bail!("algorithm {:?} does not run on topology {:?}", self.algorithm, t);
            }
        }
        if self.sequence.is_none() {
            bail!("no sequence source given");
        }
        Ok(())
    }

    /// The sequence for one run, with generated sequences seeded from
    /// `seed`.
    pub fn sequence(&self, seed: u64) -> anyhow::Result<(TransactionSequence, Option<Partition>)> {
        match &self.sequence {
            Some(SequenceSource::File(path)) => Ok((read_sequence(path)?, None)),
            Some(SequenceSource::Sbm(params)) => {
                let params = SbmParams {
                    seed: split_seed(seed, STREAM_SEQUENCE),
                    ..params.clone()
                };
                Ok((generate_sbm_sequence(&params)?, Some(params.partition()?)))
            }
            None => bail!("no sequence source given"),
        }
    }

    pub fn partition(&self, planted: Option<Partition>, p: usize) -> anyhow::Result<Partition> {
        match &self.partition {
            Some(path) => read_partition(path, p),
            None => planted.context("the double star needs a partition"),
        }
    }
}

pub fn read_sequence(path: &Path) -> anyhow::Result<TransactionSequence> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TransactionSequence::read_jsonl(BufReader::new(file), None).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_partition(path: &Path, p: usize) -> anyhow::Result<Partition> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let part: Partition = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    part.validate(p.max(part.node_count()))?;
    if part.node_count() < p {
        bail!("partition covers {} nodes but the sequence has {p}", part.node_count());
    }
    Ok(part)
}
