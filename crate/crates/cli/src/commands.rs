//! Subcommand implementations. Every command reads and writes plain files so
//! pipeline steps can be inspected and rerun one at a time.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rexloop_core::align::{alignment_stats, normalize_directions, read_bags, write_bags};
use rexloop_core::checkpoint::write_atomic;
use rexloop_core::eval::{length_analysis, write_table as write_metrics_table};
use rexloop_core::feedback::{read_banned, relation_sizes, BannedSet};
use rexloop_core::kb::load_triples;
use rexloop_core::synth::{self, DecoyConfig, SynthConfig};
use rexloop_core::train::EpochRecord;
use rexloop_core::trigrams::{self, AggregateOptions};
use rexloop_core::{
    align, apply_verdicts, build_bags, clean_triples, evaluate, fit, fit_bags, read_corpus, read_tagged,
    write_tagged, Checkpoint, Hyperparams, RelationSchema, TaggedExample, Workspace, WorkspaceConfig,
};
use rexloop_service::{ServeError, ServiceConfig};

use crate::args::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: rexloop_core::Error,
    },
    #[error(transparent)]
    Core(#[from] rexloop_core::Error),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Align(a) => align_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Trigrams(a) => trigrams_cmd(a),
        Command::Filter(a) => filter_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Init(a) => init_cmd(a),
        Command::Round(a) => round_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Open {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `path` with `parse`, attaching the path to any error.
fn read_with<T>(path: &Path, parse: impl FnOnce(BufReader<File>) -> rexloop_core::Result<T>) -> Result<T> {
    parse(open(path)?).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn read_schema(path: &Path) -> Result<RelationSchema> {
    read_with(path, RelationSchema::parse)
}

fn read_examples(path: &Path, schema: Option<&RelationSchema>) -> Result<Vec<TaggedExample>> {
    read_with(path, |r| read_tagged(r, schema))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> rexloop_core::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    Ok(write_atomic(path, &buf)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)?;
        buf.push(b'\n');
        Ok(())
    })
}

fn hyperparams(args: &HyperArgs) -> Result<Hyperparams> {
    let base = match &args.hyper {
        Some(path) => read_with(path, |r| Ok(serde_json::from_reader(r)?))?,
        None => Hyperparams::default(),
    };
    let hyper = args.apply(base);
    hyper.validate()?;
    Ok(hyper)
}

fn log_epoch(record: &EpochRecord) {
    tracing::debug!(
        epoch = record.epoch,
        loss = record.mean_loss,
        accuracy = record.train_accuracy,
        "epoch finished"
    );
}

fn align_cmd(a: AlignArgs) -> Result<()> {
    let schema = read_schema(&a.schema)?;
    let triples = read_with(&a.kb, load_triples)?;
    if let Some(t) = triples.iter().find(|t| !schema.contains(&t.relation)) {
        return Err(CliError::Usage(format!(
            "{}: relation `{}` is not in the schema",
            a.kb.display(),
            t.relation
        )));
    }
    let (kept, removed) = clean_triples(triples);
    let triples = schema.relabel(&kept);
    let sentences = read_with(&a.corpus, read_corpus)?;
    let mut alignment = align(&sentences, &triples, a.max_len);
    normalize_directions(&mut alignment.examples, &schema.negative);
    let examples = alignment.examples;
    let bags = build_bags(&examples)?;
    write_file(&a.out, |buf| write_tagged(buf, &examples))?;
    let bags_out = a.bags_out.unwrap_or_else(|| a.out.with_extension("bags.jsonl"));
    write_file(&bags_out, |buf| write_bags(buf, &bags))?;
    let stats = alignment_stats(&examples, &bags, alignment.skipped_by_length);
    if let Some(path) = &a.stats_out {
        write_json(path, &stats)?;
    }
    tracing::info!(
        examples = stats.examples,
        bags = stats.bags,
        triples_removed = removed.len(),
        skipped_by_length = stats.skipped_by_length,
        "aligned"
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let schema = read_schema(&a.schema)?;
    let examples = read_examples(&a.data, Some(&schema))?;
    let hyper = hyperparams(&a.hyper)?;
    let classes = schema.classes();
    let (checkpoint, history) = match &a.bags {
        Some(path) => {
            let bags = read_with(path, |r| read_bags(r, &examples))?;
            fit_bags(&examples, &bags, &classes, &hyper, &mut log_epoch)?
        }
        None => fit(&examples, &classes, &hyper, &mut log_epoch)?,
    };
    checkpoint.save(&a.checkpoint_out)?;
    if let Some(path) = &a.history_out {
        write_file(path, |buf| history.write_jsonl(buf))?;
    }
    if let Some(last) = history.epochs.last() {
        tracing::info!(epochs = history.epochs.len(), loss = last.mean_loss, "trained");
    }
    Ok(())
}

fn trigrams_cmd(a: TrigramArgs) -> Result<()> {
    let checkpoint = load_checkpoint(&a.checkpoint)?;
    let schema = checkpoint.classes.to_schema();
    let data = read_examples(&a.data, Some(&schema))?;
    let options = AggregateOptions {
        target: a.target.into(),
        ..AggregateOptions::default()
    };
    let ranked = trigrams::top_trigrams(&checkpoint, &data, a.top_k, &options)?;
    if let Some(path) = &a.out {
        write_file(path, |buf| trigrams::write_jsonl(buf, &ranked))?;
    }
    let mut stdout = std::io::stdout().lock();
    trigrams::write_table(&mut stdout, &ranked)?;
    stdout.flush().map_err(rexloop_core::Error::from)?;
    Ok(())
}

fn filter_cmd(a: FilterArgs) -> Result<()> {
    let schema = a.schema.as_deref().map(read_schema).transpose()?;
    let data = read_examples(&a.data, schema.as_ref())?;
    let banned: BannedSet = read_with(&a.banned, read_banned)?;
    let (retained, removed, report) = apply_verdicts(&data, &banned);
    write_file(&a.out, |buf| write_tagged(buf, &retained))?;
    if let Some(path) = &a.report_out {
        write_json(path, &report)?;
    }
    let after = relation_sizes(&retained);
    let emptied: Vec<String> = relation_sizes(&data)
        .into_keys()
        .filter(|r| !after.contains_key(r))
        .collect();
    if !emptied.is_empty() {
        tracing::warn!(relations = ?emptied, "filtering removed every example of these relations");
    }
    tracing::info!(kept = retained.len(), removed = removed.len(), "filtered");
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let checkpoint = load_checkpoint(&a.checkpoint)?;
    let schema = checkpoint.classes.to_schema();
    let test = read_examples(&a.test, Some(&schema))?;
    let report = evaluate(&checkpoint, &test)?;
    if let Some(path) = &a.report_out {
        write_json(path, &report)?;
    }
    if let Some(path) = &a.length_csv {
        let buckets = length_analysis(&checkpoint, &test, a.bucket_width)?;
        write_file(path, |buf| rexloop_core::eval::write_length_csv(buf, &buckets))?;
    }
    let mut stdout = std::io::stdout().lock();
    write_metrics_table(&mut stdout, &report)?;
    stdout.flush().map_err(rexloop_core::Error::from)?;
    Ok(())
}

fn init_cmd(a: InitArgs) -> Result<()> {
    let id = a
        .workspace
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Usage(format!("{}: not a valid workspace path", a.workspace.display())))?
        .to_string();
    let schema = read_schema(&a.schema)?;
    let train = read_examples(&a.train, Some(&schema))?;
    let test = read_examples(&a.test, Some(&schema))?;
    let config = WorkspaceConfig {
        id,
        schema,
        hyper: hyperparams(&a.hyper)?,
        top_k: a.top_k,
    };
    Workspace::create(&a.workspace, config, &train, &test)?;
    tracing::info!(workspace = %a.workspace.display(), "created");
    Ok(())
}

fn round_cmd(a: RoundArgs) -> Result<()> {
    let ws = Workspace::open(&a.workspace)?;
    let banned = a.banned.as_deref().map(|p| read_with(p, read_banned)).transpose()?;
    if ws.round_count()? == 0 {
        let record = ws.run_next_round(None, &mut log_epoch)?;
        tracing::info!(round = 0, macro_f1 = record.metrics_after.macro_f1, "baseline trained");
        if banned.is_none() {
            return Ok(());
        }
    }
    let record = ws.run_next_round(banned, &mut log_epoch)?;
    tracing::info!(
        round = record.round,
        removed = record.total_before - record.total_after,
        macro_f1 = record.metrics_after.macro_f1,
        "round trained"
    );
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(rexloop_core::Error::from)?;
    runtime.block_on(rexloop_service::serve(ServiceConfig {
        port: a.port,
        data_dir: a.data_dir,
    }))?;
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        relations: a.relations,
        signatures: a.signatures,
        per_relation: a.per_relation,
        negatives: a.negatives,
        bag_size: a.bag_size,
        noise: a.noise,
        decoy: a.decoy_relation.map(|relation| DecoyConfig {
            relation,
            sentences: a.decoy_sentences,
            background: a.decoy_background,
        }),
        seed: a.seed,
    };
    let data = synth::generate(&config)?;
    synth::write_dir(&a.out, &config, &data)?;
    tracing::info!(train = data.train.len(), test = data.test.len(), out = %a.out.display(), "generated");
    Ok(())
}
