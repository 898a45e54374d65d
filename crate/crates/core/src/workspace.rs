//! On-disk workspaces: a training and a held-out set, a schema, training
//! settings and the append-only sequence of feedback rounds.
//!
//! ```text
//! <root>/workspace.json
//! <root>/train.tsv, test.tsv
//! <root>/status.json
//! <root>/verdicts/round-NNNN.json          verdicts for the round to be trained
//! <root>/rounds/round-NNNN/model.json|bin  checkpoint
//! <root>/rounds/round-NNNN/trigrams.jsonl
//! <root>/rounds/round-NNNN/train.tsv       retained training set
//! <root>/rounds/round-NNNN/history.jsonl
//! <root>/rounds/round-NNNN.json            RoundRecord, written last
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! round is visible exactly when its record exists.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::corpus::{read_tagged, write_tagged, TaggedExample};
use crate::error::{Error, Result};
use crate::feedback::{run_round, BannedSet, RoundInput, RoundRecord, Verdict, VerdictSet};
use crate::kb::{ClassSet, RelationSchema};
use crate::model::Hyperparams;
use crate::train::EpochRecord;
use crate::trigrams::{self, TrigramAttribution};

pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub id: String,
    pub schema: RelationSchema,
    pub hyper: Hyperparams,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum JobStatus {
    Idle,
    Training { round: usize, epoch: usize, epochs: usize },
    Failed { round: usize, reason: String },
}

/// Workspace ids double as directory names.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::Workspace(format!(
            "invalid workspace id `{id}`: use 1-64 letters, digits, `-` or `_`"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    config: WorkspaceConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}

fn tagged_bytes(examples: &[TaggedExample]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_tagged(&mut buf, examples)?;
    Ok(buf)
}

impl Workspace {
    pub fn create(
        root: &Path,
        config: WorkspaceConfig,
        train: &[TaggedExample],
        test: &[TaggedExample],
    ) -> Result<Self> {
        validate_id(&config.id)?;
        config.hyper.validate()?;
        if config.top_k < 1 {
            return Err(Error::contract("top_k must be at least 1"));
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::contract("training and held-out sets must be non-empty"));
        }
        let classes = ClassSet::from_schema(&config.schema);
        for example in train.iter().chain(test) {
            classes.class_of(example)?;
        }
        if root.join("workspace.json").exists() {
            return Err(Error::Workspace(format!("workspace already exists at {}", root.display())));
        }
        fs::create_dir_all(root.join("rounds"))?;
        fs::create_dir_all(root.join("verdicts"))?;
        write_atomic(&root.join("train.tsv"), &tagged_bytes(train)?)?;
        write_atomic(&root.join("test.tsv"), &tagged_bytes(test)?)?;
        write_json(&root.join("status.json"), &JobStatus::Idle)?;
        write_json(&root.join("workspace.json"), &config)?;
        Ok(Workspace {
            root: root.to_path_buf(),
            config,
        })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("workspace.json");
        if !path.exists() {
            return Err(Error::Workspace(format!("no workspace at {}", root.display())));
        }
        Ok(Workspace {
            root: root.to_path_buf(),
            config: read_json(&path)?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &WorkspaceConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn classes(&self) -> ClassSet {
        ClassSet::from_schema(&self.config.schema)
    }

    fn read_examples(&self, relative: &str) -> Result<Vec<TaggedExample>> {
        let file = fs::File::open(self.root.join(relative))?;
        read_tagged(BufReader::new(file), Some(&self.config.schema))
    }

    pub fn train_set(&self) -> Result<Vec<TaggedExample>> {
        self.read_examples("train.tsv")
    }

    pub fn test_set(&self) -> Result<Vec<TaggedExample>> {
        self.read_examples("test.tsv")
    }

    fn round_dir(k: usize) -> String {
        format!("rounds/round-{k:04}")
    }

    fn record_path(&self, k: usize) -> PathBuf {
        self.root.join(format!("rounds/round-{k:04}.json"))
    }

    pub fn round(&self, k: usize) -> Result<Option<RoundRecord>> {
        let path = self.record_path(k);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// Completed rounds, contiguous from 0.
    pub fn rounds(&self) -> Result<Vec<RoundRecord>> {
        let mut out = Vec::new();
        while let Some(record) = self.round(out.len())? {
            out.push(record);
        }
        Ok(out)
    }

    pub fn round_count(&self) -> Result<usize> {
        let mut k = 0;
        while self.record_path(k).exists() {
            k += 1;
        }
        Ok(k)
    }

    fn require_round(&self, k: usize) -> Result<RoundRecord> {
        self.round(k)?
            .ok_or_else(|| Error::Workspace(format!("round {k} does not exist")))
    }

    /// Training set retained by round `k`; the input of round `k + 1`.
    pub fn round_dataset(&self, k: usize) -> Result<Vec<TaggedExample>> {
        let record = self.require_round(k)?;
        self.read_examples(&record.dataset)
    }

    pub fn round_trigrams(&self, k: usize) -> Result<Vec<TrigramAttribution>> {
        let record = self.require_round(k)?;
        trigrams::read_jsonl(&fs::read_to_string(self.root.join(&record.trigrams))?)
    }

    pub fn round_checkpoint(&self, k: usize) -> Result<Checkpoint> {
        let record = self.require_round(k)?;
        Checkpoint::load(&self.root.join(&record.checkpoint))
    }

    fn verdict_path(&self, round: usize) -> PathBuf {
        self.root.join(format!("verdicts/round-{round:04}.json"))
    }

    /// Verdicts collected for the round that will be trained as `round`.
    pub fn verdicts(&self, round: usize) -> Result<VerdictSet> {
        let path = self.verdict_path(round);
        if !path.exists() {
            return Ok(VerdictSet::default());
        }
        read_json(&path)
    }

    /// Records verdicts for `round`; returns whether anything changed.
    pub fn record_verdicts(&self, round: usize, verdicts: Vec<Verdict>) -> Result<bool> {
        let classes = self.classes();
        for v in &verdicts {
            let known = v.relation == crate::feedback::ANY_RELATION
                || self.config.schema.contains(&v.relation)
                || classes.index_of(&v.relation).is_some();
            if !known {
                return Err(Error::Workspace(format!("unknown relation `{}` in verdict", v.relation)));
            }
        }
        let mut set = self.verdicts(round)?;
        let mut changed = false;
        for v in verdicts {
            changed |= set.record(v);
        }
        if changed {
            fs::create_dir_all(self.root.join("verdicts"))?;
            write_json(&self.verdict_path(round), &set)?;
        }
        Ok(changed)
    }

    /// Moves verdicts collected for `from` into `into`, keeping the later
    /// decision on conflicts.
    pub fn merge_verdicts(&self, from: usize, into: usize) -> Result<()> {
        let late = self.verdicts(from)?;
        if late.is_empty() {
            return Ok(());
        }
        let mut set = self.verdicts(into)?;
        set.merge(late);
        write_json(&self.verdict_path(into), &set)?;
        fs::remove_file(self.verdict_path(from))?;
        Ok(())
    }

    pub fn status(&self) -> Result<JobStatus> {
        let path = self.root.join("status.json");
        if !path.exists() {
            return Ok(JobStatus::Idle);
        }
        read_json(&path)
    }

    pub fn set_status(&self, status: &JobStatus) -> Result<()> {
        write_json(&self.root.join("status.json"), status)
    }

    /// Trains the next round. Round 0 is the unfiltered baseline; later
    /// rounds filter the previous round's retained set with `banned`, or
    /// with the verdicts recorded for that round when `banned` is `None`.
    pub fn run_next_round(
        &self,
        banned: Option<BannedSet>,
        on_epoch: &mut dyn FnMut(&EpochRecord),
    ) -> Result<RoundRecord> {
        let k = self.round_count()?;
        let banned = match banned {
            Some(b) => b,
            None => self.verdicts(k)?.banned(),
        };
        let (train, metrics_before) = if k == 0 {
            if !banned.is_empty() {
                return Err(Error::Workspace(
                    "round 0 is the unfiltered baseline; train it before banning trigrams".into(),
                ));
            }
            (self.train_set()?, None)
        } else {
            let previous = self.require_round(k - 1)?;
            (self.round_dataset(k - 1)?, Some(previous.metrics_after))
        };
        let test = self.test_set()?;
        let classes = self.classes();
        let output = run_round(
            RoundInput {
                round: k,
                train: &train,
                test: &test,
                classes: &classes,
                hyper: &self.config.hyper,
                banned: &banned,
                metrics_before,
                top_k: self.config.top_k,
            },
            on_epoch,
        )?;

        let dir = Self::round_dir(k);
        fs::create_dir_all(self.root.join(&dir))?;
        let mut record = output.record;
        record.checkpoint = format!("{dir}/model.json");
        record.trigrams = format!("{dir}/trigrams.jsonl");
        record.dataset = format!("{dir}/train.tsv");
        output.checkpoint.save(&self.root.join(&record.checkpoint))?;
        let mut buf = Vec::new();
        trigrams::write_jsonl(&mut buf, &output.trigrams)?;
        write_atomic(&self.root.join(&record.trigrams), &buf)?;
        write_atomic(&self.root.join(&record.dataset), &tagged_bytes(&output.retained)?)?;
        buf.clear();
        output.history.write_jsonl(&mut buf)?;
        write_atomic(&self.root.join(format!("{dir}/history.jsonl")), &buf)?;
        write_json(&self.record_path(k), &record)?;
        Ok(record)
    }
}
