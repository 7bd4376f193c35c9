//! End-to-end runs: data preparation, the basic labeler, anchor extraction,
//! the selector, task-guided pre-training, fine-tuning and evaluation, and
//! the masking-strategy ablation built on the same shared stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{
    extract_anchor_sets, select_anchors, train_selector, AnchorSet, ModelConfidence,
    SelectorConfig, SelectorModel, SelectorReport,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::{read_records, write_records, BibRecord};
use crate::io;
use crate::labeler::{predict, train, EpochLog, LabelerModel, ModelMeta, TrainConfig};
use crate::metrics::{self, anchor_frequency, masked_frequency, EvalReport, FrequencyRow};
use crate::pretrain::{
    build_plans, masked_label_share, saliency_proxy, task_guided_pretrain, CorpusGuide,
    MaskingStrategy, PretrainConfig, StrategyKind,
};
use crate::styler::{builtin_styles, generate_noisy_corpus, read_styles};
use crate::subword::{build_vocab, encode_citation, SubwordSequence, SubwordVocab};
use crate::synth::synthesize_records;
use crate::types::{validate_citation, FieldLabel, LabeledCitation, Origin};

/// Fixed offsets from the master seed, one per stage.
pub mod seeds {
    pub const RECORDS: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const TASK_STYLES: u64 = 3;
    pub const GENERATE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const FINETUNE: u64 = 6;
    pub const SELECTOR: u64 = 7;
    pub const PRETRAIN: u64 = 8;
    pub const PLANS: u64 = 9;
    pub const SIGNIFICANCE: u64 = 10;
}

pub fn stage_seed(master: u64, offset: u64) -> u64 {
    master.wrapping_mul(1000).wrapping_add(offset)
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub records: Vec<BibRecord>,
    pub generated: Vec<LabeledCitation>,
    pub train: Vec<LabeledCitation>,
    pub validation: Vec<LabeledCitation>,
    pub test: Vec<LabeledCitation>,
}

/// Load or synthesize records, split them into task and generation pools,
/// and render both.
pub fn prepare_data(cfg: &PipelineConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let records = match &d.records {
        Some(path) => {
            let out = read_records(path, d.records_format, false)?;
            for diag in &out.diagnostics {
                log::warn!(
                    "{}:{}: skipped record: {}",
                    path.display(),
                    diag.line,
                    diag.message
                );
            }
            out.records
        }
        None => synthesize_records(d.synthetic_records, stage_seed(cfg.seed, seeds::RECORDS)),
    };
    let styles = match &d.styles {
        Some(path) => read_styles(path)?,
        None => builtin_styles(),
    };
    let n_task = d.task_train + d.validation + d.test;
    let n_gen = d.generated.div_ceil(d.styles_per_record);
    if records.len() < n_task + n_gen {
        return Err(Error::Invalid(format!(
            "{} records cannot cover {n_task} task citations and {} generated ones",
            records.len(),
            d.generated
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stage_seed(
        cfg.seed,
        seeds::SPLIT,
    )));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let task_records = pick(&order[..n_task]);
    let gen_records = pick(&order[n_task..]);

    let mut task: Vec<LabeledCitation> = generate_noisy_corpus(
        &task_records,
        &styles,
        1,
        stage_seed(cfg.seed, seeds::TASK_STYLES),
        false,
        d.delimiter_drop,
    )?
    .into_iter()
    .map(|r| LabeledCitation {
        origin: Origin::Task,
        ..r.citation
    })
    .collect();
    let mut generated: Vec<LabeledCitation> = generate_noisy_corpus(
        &gen_records,
        &styles,
        d.styles_per_record,
        stage_seed(cfg.seed, seeds::GENERATE),
        d.balance,
        d.delimiter_drop,
    )?
    .into_iter()
    .map(|r| r.citation)
    .collect();
    if generated.len() < d.generated {
        log::warn!(
            "only {} generated citations after balancing ({} requested)",
            generated.len(),
            d.generated
        );
    }
    generated.truncate(d.generated);
    for (i, c) in task.iter().chain(&generated).enumerate() {
        if let Some(v) = validate_citation(c).first() {
            return Err(Error::Invalid(format!(
                "rendered citation {i} is malformed: {v}"
            )));
        }
    }
    let test = task.split_off(d.task_train + d.validation);
    let validation = task.split_off(d.task_train);
    Ok(Datasets {
        records,
        generated,
        train: task,
        validation,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub stage: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<ArtifactEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Output directory plus the manifest of everything written to it.
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn create(root: &Path, config: &PipelineConfig) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let names = [
            ("records", seeds::RECORDS),
            ("split", seeds::SPLIT),
            ("task_styles", seeds::TASK_STYLES),
            ("generate", seeds::GENERATE),
            ("init", seeds::INIT),
            ("finetune", seeds::FINETUNE),
            ("selector", seeds::SELECTOR),
            ("pretrain", seeds::PRETRAIN),
            ("plans", seeds::PLANS),
            ("significance", seeds::SIGNIFICANCE),
        ];
        let seeds = names
            .iter()
            .map(|&(n, o)| (n.to_string(), stage_seed(config.seed, o)))
            .collect();
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest: Manifest {
                config: config.clone(),
                seeds,
                artifacts: Vec::new(),
                failed_stage: None,
                error: None,
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Write an artifact with `write` and record its hash.
    pub fn save(
        &mut self,
        stage: &str,
        rel: &str,
        write: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write(&path)?;
        self.manifest.artifacts.retain(|a| a.path != rel);
        self.manifest.artifacts.push(ArtifactEntry {
            stage: stage.to_string(),
            path: rel.to_string(),
            sha256: io::file_sha256(&path)?,
        });
        Ok(())
    }

    pub fn save_json<T: Serialize>(&mut self, stage: &str, rel: &str, value: &T) -> Result<()> {
        self.save(stage, rel, |p| io::write_json(p, value))
    }

    pub fn write_manifest(&self) -> Result<()> {
        io::write_json(&self.path("manifest.json"), &self.manifest)
    }

    /// Run one stage; on failure the manifest is written with the failing
    /// stage and the error is tagged with its name.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        match f(self) {
            Ok(v) => Ok(v),
            Err(e) => {
                self.manifest.failed_stage = Some(name.to_string());
                self.manifest.error = Some(e.to_string());
                if let Err(w) = self.write_manifest() {
                    log::error!("could not write manifest: {w}");
                }
                Err(e.in_stage(name))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub citation: usize,
    pub labels: Vec<FieldLabel>,
}

pub fn write_predictions(path: &Path, preds: &[Vec<FieldLabel>]) -> Result<()> {
    let recs: Vec<PredictionRecord> = preds
        .iter()
        .enumerate()
        .map(|(i, l)| PredictionRecord {
            citation: i,
            labels: l.clone(),
        })
        .collect();
    io::write_jsonl(path, &recs)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Vec<FieldLabel>>> {
    let mut recs: Vec<PredictionRecord> = io::read_jsonl(path)?;
    recs.sort_by_key(|r| r.citation);
    for (i, r) in recs.iter().enumerate() {
        if r.citation != i {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: "citation ids must be 0..n".into(),
            });
        }
    }
    Ok(recs.into_iter().map(|r| r.labels).collect())
}

pub fn predict_all(
    model: &LabelerModel,
    vocab: &SubwordVocab,
    cs: &[LabeledCitation],
) -> Result<Vec<Vec<FieldLabel>>> {
    cs.iter()
        .map(|c| predict(model, vocab, c).map(|p| p.labels))
        .collect()
}

pub fn encode_all(
    vocab: &SubwordVocab,
    cs: &[LabeledCitation],
    max_len: usize,
) -> Result<Vec<SubwordSequence>> {
    cs.iter()
        .map(|c| encode_citation(c, vocab, max_len))
        .collect()
}

pub fn evaluate_model(
    model: &LabelerModel,
    vocab: &SubwordVocab,
    cs: &[LabeledCitation],
) -> Result<(EvalReport, Vec<Vec<FieldLabel>>)> {
    let preds = predict_all(model, vocab, cs)?;
    let gold: Vec<Vec<FieldLabel>> = cs.iter().map(|c| c.labels.clone()).collect();
    Ok((metrics::evaluate(&gold, &preds)?, preds))
}

pub fn finetune_config(cfg: &PipelineConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.finetune.learning_rate,
        batch_size: cfg.finetune.batch_size,
        epochs: cfg.finetune.epochs,
        seed: stage_seed(seed, seeds::FINETUNE),
        clip_norm: Some(cfg.finetune.clip_norm),
    }
}

pub fn selector_config(cfg: &PipelineConfig) -> SelectorConfig {
    let s = &cfg.selector;
    SelectorConfig {
        learning_rate: s.learning_rate,
        epochs: s.epochs,
        batch_size: s.batch_size,
        seed: stage_seed(cfg.seed, seeds::SELECTOR),
        class_weight: s.class_weight,
        holdout_fraction: s.holdout_fraction,
        threshold: s.threshold,
    }
}

pub fn pretrain_config(cfg: &PipelineConfig, seed: u64) -> PretrainConfig {
    PretrainConfig {
        steps: cfg.pretrain.steps,
        batch_size: cfg.pretrain.batch_size,
        learning_rate: cfg.pretrain.learning_rate,
        seed: stage_seed(seed, seeds::PRETRAIN),
        tied_head: cfg.pretrain.tied_head,
        clip_norm: Some(5.0),
    }
}

pub fn masking_strategy(cfg: &PipelineConfig, variant: StrategyKind) -> MaskingStrategy {
    MaskingStrategy {
        mask_fraction: cfg.pretrain.mask_fraction,
        ..MaskingStrategy::new(variant)
    }
}

/// Everything the masking strategies have in common.
pub struct Shared {
    pub config: PipelineConfig,
    pub data: Datasets,
    pub vocab: SubwordVocab,
    pub meta: ModelMeta,
    pub basic: LabelerModel,
    pub task_anchors: Vec<AnchorSet>,
    pub selector: SelectorModel,
    pub selector_report: SelectorReport,
    pub generated_anchors: Vec<AnchorSet>,
    pub generated_seqs: Vec<SubwordSequence>,
    pub train_seqs: Vec<SubwordSequence>,
    pub validation_seqs: Vec<SubwordSequence>,
    saliency: Option<Vec<Vec<f64>>>,
}

impl Shared {
    /// Per-citation saliency of the generated corpus under the basic model.
    pub fn saliency(&mut self, run: &mut RunDir) -> Result<&[Vec<f64>]> {
        if self.saliency.is_none() {
            let s = run.stage("saliency", |run| {
                let s = self
                    .generated_seqs
                    .iter()
                    .map(|q| saliency_proxy(&self.basic, q))
                    .collect::<Result<Vec<_>>>()?;
                run.save_json("saliency", "anchors/saliency.json", &s)?;
                Ok(s)
            })?;
            self.saliency = Some(s);
        }
        Ok(self.saliency.as_deref().expect("just computed"))
    }
}

/// Data, vocabulary, basic model, anchor sets on the task data, the selector
/// and its anchors on the generated corpus.
pub fn build_shared(cfg: &PipelineConfig, run: &mut RunDir) -> Result<Shared> {
    let data = run.stage("data", |run| {
        let data = prepare_data(cfg)?;
        run.save("data", "data/records.jsonl", |p| {
            write_records(p, &data.records)
        })?;
        for (name, cs) in [
            ("generated", &data.generated),
            ("train", &data.train),
            ("validation", &data.validation),
            ("test", &data.test),
        ] {
            run.save("data", &format!("data/{name}.jsonl"), |p| {
                io::write_citations(p, cs)
            })?;
        }
        Ok(data)
    })?;
    let vocab = run.stage("vocab", |run| {
        let corpus: Vec<LabeledCitation> =
            data.generated.iter().chain(&data.train).cloned().collect();
        let vocab = build_vocab(&corpus, cfg.model.vocab_size, 1)?;
        run.save("vocab", "vocab.txt", |p| vocab.save(p))?;
        Ok(vocab)
    })?;
    let meta = ModelMeta::new(&vocab, cfg.model.dim, cfg.model.hidden, cfg.model.max_len);
    let max_len = cfg.model.max_len;
    let train_seqs = encode_all(&vocab, &data.train, max_len)?;
    let validation_seqs = encode_all(&vocab, &data.validation, max_len)?;

    let basic = run.stage("basic", |run| {
        let init = LabelerModel::new(meta.clone(), stage_seed(cfg.seed, seeds::INIT));
        let out = train(
            init,
            &train_seqs,
            &validation_seqs,
            &TrainConfig {
                epochs: cfg.finetune.basic_epochs,
                ..finetune_config(cfg, cfg.seed)
            },
        )?;
        run.save("basic", "models/basic.model", |p| out.model.save(p))?;
        run.save_json("basic", "logs/basic.json", &out.log)?;
        Ok(out.model)
    })?;
    let task_anchors = run.stage("anchors", |run| {
        let sets = extract_anchor_sets(
            &ModelConfidence {
                model: &basic,
                vocab: &vocab,
            },
            &data.train,
            &cfg.anchor,
        )?;
        run.save("anchors", "anchors/task.jsonl", |p| {
            crate::anchor::write_anchor_sets(p, &sets)
        })?;
        Ok(sets)
    })?;
    let (selector, selector_report) = run.stage("selector", |run| {
        let init = SelectorModel::new(
            meta.clone(),
            basic.encoder.clone(),
            cfg.selector.threshold,
            stage_seed(cfg.seed, seeds::SELECTOR),
        );
        let (sel, report) = train_selector(
            init,
            &vocab,
            &task_anchors,
            &data.train,
            &selector_config(cfg),
        )?;
        if report.degenerate {
            log::warn!(
                "selector is degenerate (held-out recall {:.3})",
                report.holdout_recall
            );
        }
        run.save("selector", "models/selector.model", |p| sel.save(p))?;
        run.save_json("selector", "logs/selector.json", &report)?;
        Ok((sel, report))
    })?;
    let generated_anchors = run.stage("select", |run| {
        let sets = select_anchors(&selector, &vocab, &data.generated)?;
        run.save("select", "anchors/generated.jsonl", |p| {
            crate::anchor::write_anchor_sets(p, &sets)
        })?;
        Ok(sets)
    })?;
    let generated_seqs = encode_all(&vocab, &data.generated, max_len)?;
    Ok(Shared {
        config: cfg.clone(),
        data,
        vocab,
        meta,
        basic,
        task_anchors,
        selector,
        selector_report,
        generated_anchors,
        generated_seqs,
        train_seqs,
        validation_seqs,
        saliency: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub report: EvalReport,
    pub predictions: Vec<Vec<FieldLabel>>,
    pub pretrain_losses: Vec<f64>,
    pub finetune_log: Vec<EpochLog>,
}

/// Pre-train (unless `none`), fine-tune on the task data and evaluate on the
/// test split, writing artifacts under `prefix`.
pub fn run_variant(
    shared: &mut Shared,
    strategy: StrategyKind,
    seed: u64,
    run: &mut RunDir,
    prefix: &str,
) -> Result<VariantOutcome> {
    let cfg = shared.config.clone();
    let guide_saliency = if strategy == StrategyKind::AttentionProxy {
        Some(shared.saliency(run)?.to_vec())
    } else {
        None
    };
    let shared = &*shared;
    let init = LabelerModel::new(shared.meta.clone(), stage_seed(seed, seeds::INIT));
    let pre = run.stage("pretrain", |run| {
        let guide = match strategy {
            StrategyKind::AnchorPlusRandom => CorpusGuide::Anchors(&shared.generated_anchors),
            StrategyKind::AttentionProxy => {
                CorpusGuide::Saliency(guide_saliency.as_deref().expect("computed above"))
            }
            _ => CorpusGuide::None,
        };
        let out = task_guided_pretrain(
            init,
            &shared.generated_seqs,
            guide,
            &masking_strategy(&cfg, strategy),
            &pretrain_config(&cfg, seed),
        )?;
        if strategy != StrategyKind::None {
            run.save(
                "pretrain",
                &format!("{prefix}models/pretrained.model"),
                |p| out.model.save(p),
            )?;
            run.save_json(
                "pretrain",
                &format!("{prefix}logs/pretrain.json"),
                &out.losses,
            )?;
        }
        Ok(out)
    })?;
    let tuned = run.stage("finetune", |run| {
        let out = train(
            pre.model,
            &shared.train_seqs,
            &shared.validation_seqs,
            &finetune_config(&cfg, seed),
        )?;
        run.save("finetune", &format!("{prefix}models/final.model"), |p| {
            out.model.save(p)
        })?;
        run.save_json("finetune", &format!("{prefix}logs/finetune.json"), &out.log)?;
        Ok(out)
    })?;
    let (report, predictions) = run.stage("evaluate", |run| {
        let (report, preds) = evaluate_model(&tuned.model, &shared.vocab, &shared.data.test)?;
        run.save("evaluate", &format!("{prefix}predictions.jsonl"), |p| {
            write_predictions(p, &preds)
        })?;
        run.save_json("evaluate", &format!("{prefix}report.json"), &report)?;
        run.save("evaluate", &format!("{prefix}report.txt"), |p| {
            io::write_bytes(p, metrics::render_report(&report).as_bytes())
        })?;
        Ok((report, preds))
    })?;
    Ok(VariantOutcome {
        strategy,
        seed,
        report,
        predictions,
        pretrain_losses: pre.losses,
        finetune_log: tuned.log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStats {
    /// Words masked by one anchor-plus-random plan per generated citation.
    pub masked_top: Vec<FrequencyRow>,
    /// Share of masked words that lie in gold venue spans.
    pub masked_venue_share: f64,
    pub selected_top: Vec<FrequencyRow>,
    pub task_top: Vec<FrequencyRow>,
    pub task_sets: usize,
    pub task_degenerate: usize,
    pub mean_task_anchors: f64,
    pub mean_selected_anchors: f64,
    /// Share of selected anchor words lying in gold venue spans.
    pub selected_venue_share: f64,
    pub selector: SelectorReport,
}

const TOP: usize = 20;

pub fn anchor_stats(shared: &Shared) -> Result<AnchorStats> {
    let cfg = &shared.config;
    let strategy = masking_strategy(cfg, StrategyKind::AnchorPlusRandom);
    let plans = build_plans(
        &shared.generated_seqs,
        CorpusGuide::Anchors(&shared.generated_anchors),
        &strategy,
        shared.vocab.len(),
        stage_seed(cfg.seed, seeds::PLANS),
        0,
    )?;
    let gen = &shared.data.generated;
    let mut masked_top = masked_frequency(&plans, &shared.generated_seqs, gen);
    masked_top.truncate(TOP);
    let mut selected_top = anchor_frequency(&shared.generated_anchors, gen);
    selected_top.truncate(TOP);
    let mut task_top = anchor_frequency(&shared.task_anchors, &shared.data.train);
    task_top.truncate(TOP);
    let usable: Vec<&AnchorSet> = shared
        .task_anchors
        .iter()
        .filter(|s| !s.degenerate)
        .collect();
    let mean = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let selected: usize = shared
        .generated_anchors
        .iter()
        .map(|s| s.members.len())
        .sum();
    let selected_venue: usize = shared
        .generated_anchors
        .iter()
        .map(|s| {
            s.members
                .iter()
                .filter(|&&w| gen[s.citation].labels.get(w) == Some(&FieldLabel::Venue))
                .count()
        })
        .sum();
    Ok(AnchorStats {
        masked_venue_share: masked_label_share(&plans, &shared.generated_seqs, FieldLabel::Venue),
        masked_top,
        selected_top,
        task_top,
        task_sets: shared.task_anchors.len(),
        task_degenerate: shared.task_anchors.len() - usable.len(),
        mean_task_anchors: mean(usable.iter().map(|s| s.members.len()).sum(), usable.len()),
        mean_selected_anchors: mean(selected, gen.len()),
        selected_venue_share: mean(selected_venue, selected),
        selector: shared.selector_report.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub anchor_stats: AnchorStats,
    pub manifest: Manifest,
}

/// One full run with `cfg.strategy` and the master seed.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let mut run = RunDir::create(out, cfg)?;
    let mut shared = build_shared(cfg, &mut run)?;
    let stats = run.stage("anchor-stats", |run| {
        let s = anchor_stats(&shared)?;
        run.save_json("anchor-stats", "anchor_stats.json", &s)?;
        Ok(s)
    })?;
    let variant = run_variant(&mut shared, cfg.strategy, cfg.seed, &mut run, "")?;
    run.write_manifest()?;
    Ok(PipelineOutcome {
        report: variant.report,
        anchor_stats: stats,
        manifest: run.manifest().clone(),
    })
}

pub const TABLE_COLUMNS: [&str; 5] = ["Author", "Title", "Venue", "Year", "Overall"];

/// Field-level F1 for Author, Title, Venue, Year and overall.
pub fn field_f1_row(r: &EvalReport) -> [f64; 5] {
    let f = &r.field;
    [f.author.f1, f.title.f1, f.venue.f1, f.year.f1, f.overall.f1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub f1: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: StrategyKind,
    pub runs: Vec<RunRow>,
    pub mean: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: StrategyKind,
    pub b: StrategyKind,
    /// Seeds on which a's Venue field-level F1 exceeds b's.
    pub venue_wins: usize,
    /// Seeds on which b's Venue F1 exceeds a's.
    #[serde(default)]
    pub venue_losses: usize,
    pub seeds: usize,
    /// Overall field-level F1 difference and p-value, predictions of all
    /// seeds pooled and paired by (seed, citation).
    pub overall_diff: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub columns: Vec<String>,
    pub rows: Vec<StrategyRow>,
    pub comparisons: Vec<PairComparison>,
}

impl AblationTable {
    pub fn row(&self, s: StrategyKind) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == s)
    }

    /// The comparison of `a` against `b`, flipped if it was stored the
    /// other way round.
    pub fn comparison(&self, a: StrategyKind, b: StrategyKind) -> Option<PairComparison> {
        self.comparisons.iter().find_map(|c| {
            if c.a == a && c.b == b {
                Some(c.clone())
            } else if c.a == b && c.b == a {
                Some(PairComparison {
                    a,
                    b,
                    venue_wins: c.venue_losses,
                    venue_losses: c.venue_wins,
                    seeds: c.seeds,
                    overall_diff: -c.overall_diff,
                    p_value: c.p_value,
                })
            } else {
                None
            }
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "strategy");
        for c in &self.columns {
            let _ = write!(out, " {c:>8}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<10}", r.strategy.as_str());
            for v in r.mean {
                let _ = write!(out, " {:>8.2}", 100.0 * v);
            }
            out.push('\n');
        }
        out.push('\n');
        for r in &self.rows {
            for run in &r.runs {
                let _ = write!(out, "{:<10} seed {:<4}", r.strategy.as_str(), run.seed);
                for v in run.f1 {
                    let _ = write!(out, " {:>8.2}", 100.0 * v);
                }
                out.push('\n');
            }
        }
        out.push('\n');
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "{} vs {}: venue wins {}/{}, overall diff {:+.4}, p = {:.4}",
                c.a, c.b, c.venue_wins, c.seeds, c.overall_diff, c.p_value
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub table: AblationTable,
    pub anchor_stats: AnchorStats,
    pub runs: Vec<VariantOutcome>,
    pub manifest: Manifest,
}

/// Every (strategy, seed) pair on shared data, anchors and selector.
pub fn run_ablation(cfg: &PipelineConfig, out: &Path) -> Result<AblationOutcome> {
    cfg.validate()?;
    let mut run = RunDir::create(out, cfg)?;
    let mut shared = build_shared(cfg, &mut run)?;
    let stats = run.stage("anchor-stats", |run| {
        let s = anchor_stats(&shared)?;
        run.save_json("anchor-stats", "anchor_stats.json", &s)?;
        Ok(s)
    })?;
    let mut runs = Vec::new();
    for &strategy in &cfg.ablation.strategies {
        for &seed in &cfg.ablation.seeds {
            log::info!("ablation: strategy {strategy}, seed {seed}");
            let prefix = format!("runs/{strategy}/seed-{seed}/");
            let v = run_variant(&mut shared, strategy, seed, &mut run, &prefix)
                .map_err(|e| e.in_stage(format!("ablation {strategy} seed {seed}")))?;
            runs.push(v);
        }
    }
    let table = run.stage("ablation", |run| {
        let table = ablation_table(cfg, &shared.data.test, &runs)?;
        run.save_json("ablation", "ablation.json", &table)?;
        run.save("ablation", "ablation.txt", |p| {
            io::write_bytes(p, table.render().as_bytes())
        })?;
        Ok(table)
    })?;
    run.write_manifest()?;
    Ok(AblationOutcome {
        table,
        anchor_stats: stats,
        runs,
        manifest: run.manifest().clone(),
    })
}

pub fn ablation_table(
    cfg: &PipelineConfig,
    test: &[LabeledCitation],
    runs: &[VariantOutcome],
) -> Result<AblationTable> {
    let strategies = &cfg.ablation.strategies;
    let rows: Vec<StrategyRow> = strategies
        .iter()
        .map(|&s| {
            let rs: Vec<RunRow> = runs
                .iter()
                .filter(|r| r.strategy == s)
                .map(|r| RunRow {
                    seed: r.seed,
                    f1: field_f1_row(&r.report),
                })
                .collect();
            let n = rs.len().max(1) as f64;
            let mean = std::array::from_fn(|k| rs.iter().map(|r| r.f1[k]).sum::<f64>() / n);
            StrategyRow {
                strategy: s,
                runs: rs,
                mean,
            }
        })
        .collect();
    let gold: Vec<Vec<FieldLabel>> = cfg
        .ablation
        .seeds
        .iter()
        .flat_map(|_| test.iter().map(|c| c.labels.clone()))
        .collect();
    let pooled = |s: StrategyKind| -> Vec<Vec<FieldLabel>> {
        cfg.ablation
            .seeds
            .iter()
            .flat_map(|&seed| {
                runs.iter()
                    .find(|r| r.strategy == s && r.seed == seed)
                    .map(|r| r.predictions.clone())
                    .unwrap_or_default()
            })
            .collect()
    };
    let mut comparisons = Vec::new();
    for (i, &a) in strategies.iter().enumerate() {
        for &b in &strategies[i + 1..] {
            let (pa, pb) = (pooled(a), pooled(b));
            let sig = metrics::significance(
                &pa,
                &pb,
                &gold,
                cfg.ablation.significance_trials,
                stage_seed(cfg.seed, seeds::SIGNIFICANCE),
            )?;
            let venue = |s: StrategyKind, seed: u64| {
                runs.iter()
                    .find(|r| r.strategy == s && r.seed == seed)
                    .map(|r| r.report.field.venue.f1)
            };
            let count = |x, y| {
                cfg.ablation
                    .seeds
                    .iter()
                    .filter(|&&seed| venue(x, seed) > venue(y, seed))
                    .count()
            };
            let (wins, losses) = (count(a, b), count(b, a));
            comparisons.push(PairComparison {
                a,
                b,
                venue_wins: wins,
                venue_losses: losses,
                seeds: cfg.ablation.seeds.len(),
                overall_diff: sig.observed_diff,
                p_value: sig.p_value,
            });
        }
    }
    Ok(AblationTable {
        columns: TABLE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> PipelineConfig {
        let mut c = PipelineConfig::desk();
        c.data.synthetic_records = 140;
        c.data.generated = 80;
        c.data.task_train = 30;
        c.data.validation = 10;
        c.data.test = 10;
        c.model = crate::config::ModelConfig {
            dim: 8,
            hidden: 8,
            max_len: 96,
            vocab_size: 200,
        };
        c.finetune.epochs = 3;
        c.finetune.learning_rate = 1e-2;
        c.selector.epochs = 2;
        c.anchor.delta = 1e-6;
        c.pretrain.steps = 4;
        c.pretrain.batch_size = 8;
        c.ablation.seeds = vec![1];
        c.ablation.significance_trials = 50;
        c
    }

    #[test]
    fn data_split_sizes_and_origins() {
        let c = tiny_config();
        let d = prepare_data(&c).unwrap();
        assert_eq!(
            (
                d.generated.len(),
                d.train.len(),
                d.validation.len(),
                d.test.len()
            ),
            (80, 30, 10, 10)
        );
        assert!(d.train.iter().all(|c| c.origin == Origin::Task));
        assert!(d.generated.iter().all(|c| c.origin == Origin::Generated));
        let mut small = c.clone();
        small.data.synthetic_records = 50;
        assert!(prepare_data(&small).is_err());
    }

    #[test]
    fn tiny_pipeline_runs_and_records_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&tiny_config(), dir.path()).unwrap();
        assert_eq!(out.report.citations, 10);
        for a in &out.manifest.artifacts {
            assert_eq!(
                io::file_sha256(&dir.path().join(&a.path)).unwrap(),
                a.sha256
            );
        }
        assert!(dir.path().join("manifest.json").exists());
        assert!(dir.path().join("models/pretrained.model").exists());
    }

    #[test]
    fn failing_stage_is_tagged_and_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config();
        c.model.vocab_size = 9;
        let err = run_pipeline(&c, dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::Stage { stage, .. } if stage == "vocab"),
            "{err}"
        );
        let m: Manifest = io::read_json(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m.failed_stage.as_deref(), Some("vocab"));
        assert!(m.artifacts.iter().any(|a| a.path == "data/train.jsonl"));
    }

    #[test]
    fn single_strategy_ablation_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config();
        c.ablation.strategies = vec![StrategyKind::None];
        let out = run_ablation(&c, dir.path()).unwrap();
        assert_eq!(out.table.rows.len(), 1);
        assert_eq!(out.table.columns.len(), 5);
        assert!(out.table.comparisons.is_empty());
    }

    #[test]
    fn comparison_lookup_flips_stored_order() {
        let c = PairComparison {
            a: StrategyKind::None,
            b: StrategyKind::AnchorPlusRandom,
            venue_wins: 1,
            venue_losses: 3,
            seeds: 5,
            overall_diff: -0.5,
            p_value: 0.2,
        };
        let table = AblationTable {
            columns: vec![],
            rows: vec![],
            comparisons: vec![c.clone()],
        };
        assert_eq!(
            table.comparison(StrategyKind::None, StrategyKind::AnchorPlusRandom),
            Some(c)
        );
        let f = table
            .comparison(StrategyKind::AnchorPlusRandom, StrategyKind::None)
            .unwrap();
        assert_eq!(
            (f.venue_wins, f.venue_losses, f.overall_diff, f.p_value),
            (3, 1, 0.5, 0.2)
        );
        assert!(table
            .comparison(StrategyKind::RandomOnly, StrategyKind::None)
            .is_none());
    }
}
