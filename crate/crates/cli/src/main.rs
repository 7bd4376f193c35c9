use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use citefield::anchor::{
    extract_anchor_sets, read_anchor_sets, select_anchors, train_selector, write_anchor_sets,
    AnchorConfig, ModelConfidence, SelectorModel,
};
use citefield::config::PipelineConfig;
use citefield::ingest::{read_records, write_records, RecordFormat};
use citefield::io::{read_citations, write_bytes, write_citations, write_json};
use citefield::labeler::{train, LabelerModel, ModelMeta};
use citefield::metrics::{self, anchor_frequency, masked_frequency, FrequencyRow};
use citefield::pipeline::{
    self, encode_all, finetune_config, masking_strategy, predict_all, pretrain_config,
    read_predictions, selector_config, write_predictions,
};
use citefield::pretrain::{
    build_plans, masked_label_share, saliency_proxy, task_guided_pretrain, CorpusGuide,
    StrategyKind,
};
use citefield::styler::{builtin_styles, generate_corpus, read_styles, write_styles};
use citefield::subword::{build_vocab, SubwordVocab};
use citefield::synth::synthesize_records;
use citefield::{Error, FieldLabel, LabeledCitation, Result};

/// Citation field extraction toolkit.
#[derive(Parser)]
#[command(name = "citefield", version)]
struct Cli {
    /// Pipeline configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read bibliographic records (line-delimited JSON or BibTeX).
    Ingest(IngestArgs),
    /// Write synthetic bibliographic records.
    Synth(SynthArgs),
    /// Render records into labeled citations.
    Generate(GenerateArgs),
    /// Write the built-in style definitions.
    Styles(StylesArgs),
    /// Build a subword vocabulary.
    Vocab(VocabArgs),
    /// Train the labeler on labeled citations.
    Finetune(FinetuneArgs),
    /// Label citations with a trained model.
    Predict(PredictArgs),
    /// Leave-one-out anchor sets on labeled data.
    Anchors(AnchorsArgs),
    /// Train the anchor selector and optionally apply it to a corpus.
    Selector(SelectorArgs),
    /// Task-guided masked pre-training of the encoder.
    Pretrain(PretrainArgs),
    /// Token- and field-level scores of predictions.
    Evaluate(EvaluateArgs),
    /// Paired significance test between two prediction files.
    Compare(CompareArgs),
    /// Run the full pipeline.
    Run(RunArgs),
    /// Run every (strategy, seed) pair of the ablation.
    Ablate(AblateArgs),
    /// Most frequent anchor or masked words.
    AnchorStats(AnchorStatsArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "lines")]
    format: RecordFormat,
    /// Fail on the first bad record instead of skipping it.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6250)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    styles: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    per_record: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    balance: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StylesArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VocabArgs {
    #[arg(long = "corpus", required = true)]
    corpora: Vec<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelShape {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    /// Start from this model (e.g. a pre-trained one) instead of a fresh one.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnchorsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectorArgs {
    /// Basic labeler whose encoder initializes the selector.
    #[arg(long)]
    basic: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Labeled data the anchor sets were computed on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    class_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Corpus to select anchors on.
    #[arg(long, requires = "selected")]
    corpus: Option<PathBuf>,
    /// Output anchor-set file for `--corpus`.
    #[arg(long, requires = "corpus")]
    selected: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Anchor sets for the corpus (strategy `anchor`).
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Labeler used for saliency ranking (strategy `attention`).
    #[arg(long)]
    saliency_model: Option<PathBuf>,
    #[arg(long)]
    strategy: StrategyKind,
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyKind>>,
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct AnchorStatsArgs {
    /// Labeled corpus the anchors or plans refer to.
    #[arg(long)]
    corpus: PathBuf,
    /// Count anchor-set members.
    #[arg(long, conflicts_with = "masked")]
    anchors: Option<PathBuf>,
    /// Count words masked by one anchor-plus-random plan per citation, using
    /// these anchor sets.
    #[arg(long, requires = "vocab")]
    masked: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stage = stage_name(&cli.command);
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                e @ Error::Stage { .. } => e,
                e => e.in_stage(stage),
            };
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Synth(_) => "synth",
        Command::Generate(_) => "generate",
        Command::Styles(_) => "styles",
        Command::Vocab(_) => "vocab",
        Command::Finetune(_) => "finetune",
        Command::Predict(_) => "predict",
        Command::Anchors(_) => "anchors",
        Command::Selector(_) => "selector",
        Command::Pretrain(_) => "pretrain",
        Command::Evaluate(_) => "evaluate",
        Command::Compare(_) => "compare",
        Command::Run(_) => "run",
        Command::Ablate(_) => "ablate",
        Command::AnchorStats(_) => "anchor-stats",
    }
}

fn load_config(path: Option<&Path>, preset: Option<&str>) -> Result<PipelineConfig> {
    match (path, preset) {
        (Some(_), Some(_)) => Err(Error::Invalid(
            "--preset and --config are exclusive; set `preset` in the file".into(),
        )),
        (Some(p), None) => PipelineConfig::load(p),
        (None, name) => PipelineConfig::preset(name.unwrap_or("desk")),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let preset = match &cli.command {
        Command::Run(a) => a.preset.as_deref(),
        Command::Ablate(a) => a.preset.as_deref(),
        _ => None,
    };
    let cfg = load_config(cli.config.as_deref(), preset)?;
    match cli.command {
        Command::Ingest(a) => {
            let out = read_records(&a.input, a.format, a.strict)?;
            write_records(&a.out, &out.records)?;
            println!(
                "{} records ({} skipped)",
                out.records.len(),
                out.diagnostics.len()
            );
        }
        Command::Synth(a) => {
            let records = synthesize_records(a.count, a.seed);
            write_records(&a.out, &records)?;
            println!("{} records", records.len());
        }
        Command::Generate(a) => {
            let records = read_records(&a.records, RecordFormat::Lines, true)?.records;
            let styles = match a.styles.as_deref().or(cfg.data.styles.as_deref()) {
                Some(p) => read_styles(p)?,
                None => builtin_styles(),
            };
            let rendered = generate_corpus(&records, &styles, a.per_record, a.seed, a.balance)?;
            let cs: Vec<LabeledCitation> = rendered.into_iter().map(|r| r.citation).collect();
            write_citations(&a.out, &cs)?;
            println!("{} citations", cs.len());
        }
        Command::Styles(a) => write_styles(&a.out, &builtin_styles())?,
        Command::Vocab(a) => {
            let mut corpus = Vec::new();
            for p in &a.corpora {
                corpus.extend(read_citations(p)?);
            }
            let vocab = build_vocab(&corpus, a.size.unwrap_or(cfg.model.vocab_size), 1)?;
            vocab.save(&a.out)?;
            println!("{} pieces", vocab.len());
        }
        Command::Finetune(a) => finetune(&cfg, a)?,
        Command::Predict(a) => {
            let vocab = SubwordVocab::load(&a.vocab)?;
            let model = LabelerModel::load(&a.model, &vocab)?;
            let preds = predict_all(&model, &vocab, &read_citations(&a.data)?)?;
            write_predictions(&a.out, &preds)?;
        }
        Command::Anchors(a) => {
            let vocab = SubwordVocab::load(&a.vocab)?;
            let model = LabelerModel::load(&a.model, &vocab)?;
            let data = read_citations(&a.data)?;
            let anchor = AnchorConfig {
                delta: a.delta.unwrap_or(cfg.anchor.delta),
                ..cfg.anchor
            };
            let sets = extract_anchor_sets(
                &ModelConfidence {
                    model: &model,
                    vocab: &vocab,
                },
                &data,
                &anchor,
            )?;
            write_anchor_sets(&a.out, &sets)?;
            let members: usize = sets.iter().map(|s| s.members.len()).sum();
            let degenerate = sets.iter().filter(|s| s.degenerate).count();
            println!(
                "{} sets, {members} anchors, {degenerate} degenerate",
                sets.len()
            );
        }
        Command::Selector(a) => selector(&cfg, a)?,
        Command::Pretrain(a) => pretrain(&cfg, a)?,
        Command::Evaluate(a) => {
            let gold: Vec<Vec<FieldLabel>> = read_citations(&a.gold)?
                .into_iter()
                .map(|c| c.labels)
                .collect();
            let pred = read_predictions(&a.pred)?;
            let report = metrics::evaluate(&gold, &pred)?;
            write_json(&a.report, &report)?;
            print!("{}", metrics::render_report(&report));
        }
        Command::Compare(a) => {
            let gold: Vec<Vec<FieldLabel>> = read_citations(&a.gold)?
                .into_iter()
                .map(|c| c.labels)
                .collect();
            let s = metrics::significance(
                &read_predictions(&a.a)?,
                &read_predictions(&a.b)?,
                &gold,
                a.trials,
                a.seed,
            )?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Run(a) => {
            let mut cfg = cfg;
            cfg.strategy = a.strategy.unwrap_or(cfg.strategy);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let out = pipeline::run_pipeline(&cfg, &a.out)?;
            print!("{}", metrics::render_report(&out.report));
            println!(
                "masked words in venue spans: {:.1}%",
                100.0 * out.anchor_stats.masked_venue_share
            );
        }
        Command::Ablate(a) => {
            let mut cfg = cfg;
            if let Some(s) = a.seeds {
                cfg.ablation.seeds = s;
            }
            if let Some(s) = a.strategies {
                cfg.ablation.strategies = s;
            }
            let out = pipeline::run_ablation(&cfg, &a.out)?;
            print!("{}", out.table.render());
        }
        Command::AnchorStats(a) => anchor_stats(&cfg, a)?,
    }
    Ok(())
}

fn model_meta(cfg: &PipelineConfig, vocab: &SubwordVocab, shape: &ModelShape) -> ModelMeta {
    ModelMeta::new(
        vocab,
        shape.dim.unwrap_or(cfg.model.dim),
        shape.hidden.unwrap_or(cfg.model.hidden),
        shape.max_len.unwrap_or(cfg.model.max_len),
    )
}

fn finetune(cfg: &PipelineConfig, a: FinetuneArgs) -> Result<()> {
    let vocab = SubwordVocab::load(&a.vocab)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let init = match &a.init {
        Some(p) => LabelerModel::load(p, &vocab)?,
        None => LabelerModel::new(
            model_meta(cfg, &vocab, &a.shape),
            pipeline::stage_seed(seed, pipeline::seeds::INIT),
        ),
    };
    let max_len = init.meta.max_len;
    let train_set = encode_all(&vocab, &read_citations(&a.train)?, max_len)?;
    let val = match &a.validation {
        Some(p) => encode_all(&vocab, &read_citations(p)?, max_len)?,
        None => Vec::new(),
    };
    let mut tc = finetune_config(cfg, seed);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.batch_size = a.batch.unwrap_or(tc.batch_size);
    let out = train(init, &train_set, &val, &tc)?;
    out.model.save(&a.out)?;
    for e in &out.log {
        println!(
            "epoch {:>3}  loss {:.4}  val acc {}",
            e.epoch,
            e.train_loss,
            e.val_accuracy.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!("kept epoch {}", out.best_epoch);
    Ok(())
}

fn selector(cfg: &PipelineConfig, a: SelectorArgs) -> Result<()> {
    let vocab = SubwordVocab::load(&a.vocab)?;
    let basic = LabelerModel::load(&a.basic, &vocab)?;
    let data = read_citations(&a.data)?;
    let sets = read_anchor_sets(&a.anchors)?;
    let mut sc = selector_config(cfg);
    sc.epochs = a.epochs.unwrap_or(sc.epochs);
    sc.class_weight = a.class_weight.unwrap_or(sc.class_weight);
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    let init = SelectorModel::new(
        basic.meta.clone(),
        basic.encoder.clone(),
        sc.threshold,
        sc.seed,
    );
    let (sel, report) = train_selector(init, &vocab, &sets, &data, &sc)?;
    sel.save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    println!(
        "held-out precision {:.3} recall {:.3}{}",
        report.holdout_precision,
        report.holdout_recall,
        if report.degenerate {
            " (degenerate)"
        } else {
            ""
        }
    );
    if let (Some(corpus), Some(out)) = (&a.corpus, &a.selected) {
        let selected = select_anchors(&sel, &vocab, &read_citations(corpus)?)?;
        write_anchor_sets(out, &selected)?;
        println!("{} anchor sets written", selected.len());
    }
    Ok(())
}

fn pretrain(cfg: &PipelineConfig, a: PretrainArgs) -> Result<()> {
    let vocab = SubwordVocab::load(&a.vocab)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let init = match &a.init {
        Some(p) => LabelerModel::load(p, &vocab)?,
        None => LabelerModel::new(
            model_meta(cfg, &vocab, &a.shape),
            pipeline::stage_seed(seed, pipeline::seeds::INIT),
        ),
    };
    let corpus = encode_all(&vocab, &read_citations(&a.corpus)?, init.meta.max_len)?;
    let anchors = match (&a.anchors, a.strategy) {
        (Some(p), _) => Some(read_anchor_sets(p)?),
        (None, StrategyKind::AnchorPlusRandom) => {
            return Err(Error::Invalid("strategy `anchor` needs --anchors".into()));
        }
        _ => None,
    };
    let saliency = match (&a.saliency_model, a.strategy) {
        (Some(p), StrategyKind::AttentionProxy) => {
            let m = LabelerModel::load(p, &vocab)?;
            Some(
                corpus
                    .iter()
                    .map(|s| saliency_proxy(&m, s))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        (None, StrategyKind::AttentionProxy) => {
            return Err(Error::Invalid(
                "strategy `attention` needs --saliency-model".into(),
            ));
        }
        _ => None,
    };
    let guide = match a.strategy {
        StrategyKind::AnchorPlusRandom => {
            CorpusGuide::Anchors(anchors.as_deref().expect("checked"))
        }
        StrategyKind::AttentionProxy => {
            CorpusGuide::Saliency(saliency.as_deref().expect("checked"))
        }
        _ => CorpusGuide::None,
    };
    let mut pc = pretrain_config(cfg, seed);
    pc.steps = a.steps.unwrap_or(pc.steps);
    pc.learning_rate = a.lr.unwrap_or(pc.learning_rate);
    pc.batch_size = a.batch.unwrap_or(pc.batch_size);
    let out = task_guided_pretrain(
        init,
        &corpus,
        guide,
        &masking_strategy(cfg, a.strategy),
        &pc,
    )?;
    out.model.save(&a.out)?;
    if let (Some(first), Some(last)) = (out.losses.first(), out.losses.last()) {
        println!("{} steps, loss {first:.4} -> {last:.4}", out.losses.len());
    }
    Ok(())
}

fn print_rows(rows: &[FrequencyRow]) {
    for (i, r) in rows.iter().enumerate() {
        println!("{:>3}. {:<24} {}", i + 1, r.token, r.count);
    }
}

fn anchor_stats(cfg: &PipelineConfig, a: AnchorStatsArgs) -> Result<()> {
    let corpus = read_citations(&a.corpus)?;
    let mut rows = if let Some(p) = &a.anchors {
        anchor_frequency(&read_anchor_sets(p)?, &corpus)
    } else if let Some(p) = &a.masked {
        let vocab = SubwordVocab::load(a.vocab.as_deref().expect("required by clap"))?;
        let seqs = encode_all(&vocab, &corpus, cfg.model.max_len)?;
        let sets = read_anchor_sets(p)?;
        let strategy = masking_strategy(cfg, StrategyKind::AnchorPlusRandom);
        let plans = build_plans(
            &seqs,
            CorpusGuide::Anchors(&sets),
            &strategy,
            vocab.len(),
            pipeline::stage_seed(cfg.seed, pipeline::seeds::PLANS),
            0,
        )?;
        println!(
            "masked words in venue spans: {:.1}%",
            100.0 * masked_label_share(&plans, &seqs, FieldLabel::Venue)
        );
        masked_frequency(&plans, &seqs, &corpus)
    } else {
        return Err(Error::Invalid("give --anchors or --masked".into()));
    };
    rows.truncate(a.top);
    print_rows(&rows);
    if let Some(out) = &a.out {
        write_bytes(
            out,
            (serde_json::to_string_pretty(&rows)? + "\n").as_bytes(),
        )?;
    }
    Ok(())
}
