use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iurkit::datamodel::{parse_jsonl_record, parse_tsv_record, split, Dialogue};
use iurkit::metrics::{evaluate, EvalResult};
use iurkit::rewrite::{rewrite, Diagnostics, RewriteOptions};
use iurkit::scoring::{
    load_model, save_model, Checkpoint, EncoderMode, Model, TrainExample, Trainer, TrainingLog, Vocab,
};
use iurkit::supervision::{Expressibility, SupervisionReport};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Format, QueryMode, RunConfig};
use crate::pipeline::{file_stem, load_dataset, load_vectors, vectors_for, Resources};

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes `<out>/<id>.matrix.json` per example and `<out>/report.json`.
pub fn cmd_build_supervision(cfg: &RunConfig, out: &Path) -> Result<SupervisionReport> {
    let dialogues = load_dataset(cfg.data_path()?, cfg)?;
    let res = Resources::load(cfg)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let results: Vec<_> = dialogues
        .par_iter()
        .map(|d| res.supervise(d, cfg.query_mode))
        .collect::<Result<_>>()?;
    let mut report = SupervisionReport::default();
    let mut stems = HashMap::new();
    for (d, s) in dialogues.iter().zip(results) {
        let stem = file_stem(&d.id);
        if let Some(other) = stems.insert(stem.clone(), d.id.clone()) {
            bail!("ids {other:?} and {:?} map to the same file name", d.id);
        }
        write_json(&out.join(format!("{stem}.matrix.json")), &s.matrix)?;
        report.push(s.report);
    }
    write_json(&out.join("report.json"), &report)?;
    log::info!(
        "{} examples: {} full, {} partial, {} failed",
        report.examples.len(),
        report.full,
        report.partial,
        report.failed
    );
    Ok(report)
}

/// One JSON line per example with its query template.
pub fn cmd_make_query(cfg: &RunConfig, out: &mut dyn Write) -> Result<usize> {
    let dialogues = load_dataset(cfg.data_path()?, cfg)?;
    let res = Resources::load(cfg)?;
    let queries: Vec<_> = dialogues
        .par_iter()
        .map(|d| res.query(d, QueryMode::Predicted))
        .collect::<Result<_>>()?;
    for (d, q) in dialogues.iter().zip(&queries) {
        let line = json!({
            "id": d.id,
            "query": d.mode.join(&q.texts()),
            "tokens": q.texts(),
            "kind": q.kind_summary,
            "markers": q.markers,
        });
        writeln!(out, "{line}")?;
    }
    Ok(queries.len())
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    /// Written after every epoch with optimizer state.
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Dataset scored for exact match after every epoch.
    pub dev: Option<PathBuf>,
    /// Training log; defaults to `<model>.log.json`.
    pub log: Option<PathBuf>,
}

fn training_examples(cfg: &RunConfig, res: &Resources, dialogues: &[Dialogue]) -> Result<Vec<TrainExample>> {
    let supervised: Vec<_> = dialogues
        .par_iter()
        .map(|d| res.supervise(d, cfg.query_mode))
        .collect::<Result<_>>()?;
    let mut kept = Vec::new();
    let mut dropped = 0;
    for (d, s) in dialogues.iter().zip(supervised) {
        let usable = match s.report.status {
            Expressibility::Full => true,
            Expressibility::Partial => cfg.include_partial,
            Expressibility::Failed => false,
        };
        if usable {
            kept.push(TrainExample {
                id: d.id.clone(),
                input: s.input,
                gold: s.matrix,
            });
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} examples are not fully expressible and were left out");
    }
    if kept.is_empty() {
        bail!("no usable training examples");
    }
    Ok(kept)
}

fn rewrite_options(cfg: &RunConfig, res: &Resources) -> RewriteOptions {
    RewriteOptions {
        theta: cfg.theta,
        query: res.options.clone(),
    }
}

fn rewrite_one(
    d: &Dialogue,
    model: &Model,
    cfg: &RunConfig,
    res: &Resources,
    vectors: Option<&iurkit::scoring::ImportedVectors>,
) -> Result<Diagnostics> {
    let parse = res.parse_for(d)?;
    let (_, diag) = rewrite(d, model, &rewrite_options(cfg, res), res.lexicon(d.mode), parse.as_ref(), vectors)
        .with_context(|| format!("rewriting example {:?}", d.id))?;
    Ok(diag)
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainingLog> {
    let model_path = cfg.model_path()?;
    let dialogues = load_dataset(cfg.data_path()?, cfg)?;
    let res = Resources::load(cfg)?;
    let data = training_examples(cfg, &res, &dialogues)?;
    log::info!("{} training examples", data.len());

    let (mut model, mut trainer) = match &args.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut trainer = ck.trainer;
            let mut expected = cfg.train.clone();
            expected.epochs = trainer.config.epochs;
            if trainer.config != expected {
                log::warn!("training settings differ from the checkpoint; using the current ones");
            }
            trainer.config = cfg.train.clone();
            (ck.model, trainer)
        }
        None => {
            let vocab = match cfg.network.mode {
                EncoderMode::TrainableEmbedding => Vocab::build(data.iter().map(|e| &e.input)),
                EncoderMode::ImportedVectors => Vocab::empty(),
            };
            let model = Model::init(cfg.network.clone(), vocab, cfg.train.seed)?;
            let trainer = Trainer::new(cfg.train.clone(), &model)?;
            (model, trainer)
        }
    };
    let vectors = load_vectors(&model, cfg)?;

    let dev = match &args.dev {
        Some(p) => load_dataset(p, cfg)?,
        None => Vec::new(),
    };
    let dev_vectors = if dev.is_empty() { None } else { vectors.clone() };
    let dev_eval = |m: &Model| -> iurkit::Result<f64> {
        let hits: usize = dev
            .par_iter()
            .map(|d| {
                let diag = rewrite_one(d, m, cfg, &res, dev_vectors.as_ref()).map_err(|e| iurkit::Error::Config(format!("{e:#}")))?;
                Ok(usize::from(d.rewritten.as_ref().is_some_and(|g| g.texts() == diag.output.texts())))
            })
            .sum::<iurkit::Result<usize>>()?;
        Ok(hits as f64 / dev.len() as f64)
    };

    let total = cfg.train.epochs;
    let mut log = TrainingLog::default();
    while trainer.epochs_done < total {
        trainer.config.epochs = trainer.epochs_done + 1;
        let dev_fn: Option<&iurkit::scoring::DevEval<'_>> = if dev.is_empty() { None } else { Some(&dev_eval) };
        let epoch_log = trainer.run(&mut model, &data, vectors.as_ref(), dev_fn)?;
        log.epochs.extend(epoch_log.epochs);
        if let Some(ck) = &args.checkpoint {
            Checkpoint {
                model: model.clone(),
                trainer: trainer.clone(),
            }
            .save(ck)?;
        }
    }
    trainer.config.epochs = total;

    save_model(model_path, &model, cfg.dtype)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = model_path.as_os_str().to_owned();
        p.push(".log.json");
        PathBuf::from(p)
    });
    write_json(&log_path, &log)?;
    Ok(log)
}

fn parse_record(line: &str, line_no: usize, id: &str, format: Format) -> iurkit::Result<Dialogue> {
    match format {
        Format::Jsonl => parse_jsonl_record(line, line_no, id),
        Format::Tsv => parse_tsv_record(line, line_no, id),
    }
}

/// Rewrites `--data` to JSON lines `{"id", "rewrite", "tokens"}` in input order,
/// reading and writing in bounded chunks.
pub fn cmd_rewrite(cfg: &RunConfig, out: &mut dyn Write) -> Result<usize> {
    const CHUNK: usize = 256;
    let model = load_model(cfg.model_path()?)?;
    let vectors = load_vectors(&model, cfg)?;
    let res = Resources::load(cfg)?;
    let path = cfg.data_path()?;
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut count = 0;
    loop {
        let mut chunk = Vec::with_capacity(CHUNK);
        for (idx, line) in lines.by_ref() {
            let line = line.with_context(|| format!("cannot read {}", path.display()))?;
            if line.trim().is_empty() {
                continue;
            }
            chunk.push(parse_record(&line, idx + 1, &(count + chunk.len()).to_string(), cfg.format)?);
            if chunk.len() == CHUNK {
                break;
            }
        }
        if chunk.is_empty() {
            break;
        }
        let outputs: Vec<_> = chunk
            .par_iter()
            .map(|d| rewrite_one(d, &model, cfg, &res, vectors.as_ref()))
            .collect::<Result<_>>()?;
        for (d, diag) in chunk.iter().zip(outputs) {
            let tokens = diag.output.texts();
            writeln!(out, "{}", json!({ "id": d.id, "rewrite": d.mode.join(&tokens), "tokens": tokens }))?;
        }
        count += chunk.len();
    }
    out.flush()?;
    Ok(count)
}

/// Scores hypothesis lines `{"id", "rewrite"}` against the gold rewrites of
/// `reference`, matched by id and tokenized like the reference.
pub fn cmd_evaluate(cfg: &RunConfig, hyp: &Path, reference: &Path) -> Result<EvalResult> {
    let refs = load_dataset(reference, cfg)?;
    let text = fs::read_to_string(hyp).with_context(|| format!("cannot read {}", hyp.display()))?;
    let mut by_id = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{}:{}: invalid JSON", hyp.display(), i + 1))?;
        let id = match &v["id"] {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            _ => bail!("{}:{}: missing `id`", hyp.display(), i + 1),
        };
        let rewrite = v["rewrite"]
            .as_str()
            .with_context(|| format!("{}:{}: missing string `rewrite`", hyp.display(), i + 1))?
            .to_owned();
        if by_id.insert(id.clone(), rewrite).is_some() {
            bail!("{}: duplicate id {id:?}", hyp.display());
        }
    }
    let mut hyps = Vec::with_capacity(refs.len());
    let mut golds = Vec::with_capacity(refs.len());
    for d in &refs {
        let gold = d
            .rewritten
            .as_ref()
            .with_context(|| format!("reference {:?} has no gold rewrite", d.id))?;
        let h = by_id
            .remove(&d.id)
            .with_context(|| format!("no hypothesis for example {:?}", d.id))?;
        hyps.push(split(&h, d.mode));
        golds.push(gold.texts().into_iter().map(str::to_owned).collect::<Vec<_>>());
    }
    if !by_id.is_empty() {
        log::warn!("{} hypotheses have no reference and were ignored", by_id.len());
    }
    Ok(evaluate(&hyps, &golds)?)
}

/// Full decoding diagnostics for one example, plus its gold matrix when the
/// example has a gold rewrite.
pub fn cmd_inspect_matrix(cfg: &RunConfig, id: &str, grid_strings: bool) -> Result<serde_json::Value> {
    let model = load_model(cfg.model_path()?)?;
    let res = Resources::load(cfg)?;
    let dialogues = load_dataset(cfg.data_path()?, cfg)?;
    let d = dialogues
        .iter()
        .find(|d| d.id == id)
        .with_context(|| format!("no example with id {id:?}"))?;
    let vectors = vectors_for(model.config.mode, model.config.d_model, cfg)?;
    let diag = rewrite_one(d, &model, cfg, &res, vectors.as_ref())?;
    let mut value = diag.to_json(grid_strings);
    if d.rewritten.is_some() {
        let (matrix, report) = iurkit::supervision::build_edit_matrix(d, &diag.input)?;
        value["gold"] = json!({ "matrix": matrix, "report": report });
    }
    value["theta"] = json!(cfg.theta);
    Ok(value)
}
