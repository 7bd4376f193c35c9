//! Token-level and field-level evaluation, paired approximate
//! randomization, and masked/anchor word frequency tables.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::AnchorSet;
use crate::error::{Error, Result};
use crate::pretrain::MaskingPlan;
use crate::subword::SubwordSequence;
use crate::types::{spans_from_labels, FieldLabel, LabeledCitation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.gold += o.gold;
        self.predicted += o.predicted;
        self.correct += o.correct;
    }

    /// Zero when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Counts for Author, Title, Venue, Year (in that order).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldCounts(pub [Counts; 4]);

impl FieldCounts {
    pub fn get(&self, label: FieldLabel) -> Option<&Counts> {
        (label != FieldLabel::Other).then(|| &self.0[label.index()])
    }

    fn add(&mut self, o: &FieldCounts) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            a.add(b);
        }
    }

    pub fn pooled(&self) -> Counts {
        let mut c = Counts::default();
        self.0.iter().for_each(|x| c.add(x));
        c
    }
}

fn check_lengths(gold: &[FieldLabel], pred: &[FieldLabel]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold labels but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

pub fn token_level(gold: &[FieldLabel], pred: &[FieldLabel]) -> Result<FieldCounts> {
    check_lengths(gold, pred)?;
    let mut out = FieldCounts::default();
    for (&g, &p) in gold.iter().zip(pred) {
        if g != FieldLabel::Other {
            out.0[g.index()].gold += 1;
        }
        if p != FieldLabel::Other {
            out.0[p.index()].predicted += 1;
            if g == p {
                out.0[p.index()].correct += 1;
            }
        }
    }
    Ok(out)
}

/// A predicted span is correct iff the gold labeling has the identical span.
pub fn field_level(gold: &[FieldLabel], pred: &[FieldLabel]) -> Result<FieldCounts> {
    check_lengths(gold, pred)?;
    let gs = spans_from_labels(gold);
    let mut out = FieldCounts::default();
    for s in gs.iter().filter(|s| s.label != FieldLabel::Other) {
        out.0[s.label.index()].gold += 1;
    }
    for s in spans_from_labels(pred)
        .iter()
        .filter(|s| s.label != FieldLabel::Other)
    {
        let c = &mut out.0[s.label.index()];
        c.predicted += 1;
        if gs.contains(s) {
            c.correct += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationCounts {
    pub token: FieldCounts,
    pub field: FieldCounts,
}

pub fn score_citation(gold: &[FieldLabel], pred: &[FieldLabel]) -> Result<CitationCounts> {
    Ok(CitationCounts {
        token: token_level(gold, pred)?,
        field: field_level(gold, pred)?,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision was set to 0 because nothing was predicted.
    pub zero_predicted: bool,
}

impl From<Counts> for Scores {
    fn from(c: Counts) -> Self {
        Scores {
            gold: c.gold,
            predicted: c.predicted,
            correct: c.correct,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            zero_predicted: c.predicted == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub author: Scores,
    pub title: Scores,
    pub venue: Scores,
    pub year: Scores,
    /// Micro average over the four fields.
    pub overall: Scores,
    /// Unweighted mean of the four per-field scores.
    #[serde(rename = "macro")]
    pub macro_avg: MacroScores,
}

impl LevelReport {
    fn from_counts(c: &FieldCounts) -> Self {
        let per: Vec<Scores> = c.0.iter().map(|&x| Scores::from(x)).collect();
        let mean = |f: fn(&Scores) -> f64| per.iter().map(f).sum::<f64>() / 4.0;
        LevelReport {
            author: per[0],
            title: per[1],
            venue: per[2],
            year: per[3],
            overall: c.pooled().into(),
            macro_avg: MacroScores {
                precision: mean(|s| s.precision),
                recall: mean(|s| s.recall),
                f1: mean(|s| s.f1),
            },
        }
    }

    pub fn field(&self, label: FieldLabel) -> &Scores {
        match label {
            FieldLabel::Author => &self.author,
            FieldLabel::Title => &self.title,
            FieldLabel::Venue => &self.venue,
            FieldLabel::Year => &self.year,
            FieldLabel::Other => &self.overall,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub citations: usize,
    pub token: LevelReport,
    pub field: LevelReport,
}

/// Micro aggregation: counts are summed before any ratio is taken.
pub fn aggregate(per_citation: &[CitationCounts]) -> EvalReport {
    let (mut t, mut f) = (FieldCounts::default(), FieldCounts::default());
    for c in per_citation {
        t.add(&c.token);
        f.add(&c.field);
    }
    EvalReport {
        citations: per_citation.len(),
        token: LevelReport::from_counts(&t),
        field: LevelReport::from_counts(&f),
    }
}

pub fn evaluate(gold: &[Vec<FieldLabel>], pred: &[Vec<FieldLabel>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold citations but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let per = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| score_citation(g, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&per))
}

/// Plain-text table with both levels, one row per field plus overall and
/// macro rows (values in percent).
pub fn render_report(r: &EvalReport) -> String {
    let mut out = String::new();
    for (name, level) in [("token", &r.token), ("field", &r.field)] {
        let _ = writeln!(out, "{name}-level ({} citations)", r.citations);
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "", "P", "R", "F1", "gold", "pred", "correct"
        );
        for l in FieldLabel::FIELDS {
            let s = level.field(l);
            let _ = writeln!(
                out,
                "{:<8} {:>7.2} {:>7.2} {:>7.2} {:>7} {:>7} {:>7}",
                l.as_str(),
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1,
                s.gold,
                s.predicted,
                s.correct
            );
        }
        let o = &level.overall;
        let _ = writeln!(
            out,
            "{:<8} {:>7.2} {:>7.2} {:>7.2} {:>7} {:>7} {:>7}",
            "overall",
            100.0 * o.precision,
            100.0 * o.recall,
            100.0 * o.f1,
            o.gold,
            o.predicted,
            o.correct
        );
        let m = &level.macro_avg;
        let _ = writeln!(
            out,
            "{:<8} {:>7.2} {:>7.2} {:>7.2}",
            "macro",
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1
        );
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// Overall field-level F1 of A minus that of B.
    pub observed_diff: f64,
    pub p_value: f64,
    /// Number of assignments evaluated (2^n when exact).
    pub trials: u64,
    pub exact: bool,
}

/// Largest corpus for which all 2^n swap assignments are enumerated.
pub const EXACT_LIMIT: usize = 10;

/// Paired approximate randomization on overall field-level F1. Each
/// citation's predictions are swapped between the systems with probability
/// 1/2. Sampled p-values are add-one smoothed, (c + 1) / (trials + 1);
/// enumerated ones are the exact fraction c / 2^n.
pub fn significance(
    pred_a: &[Vec<FieldLabel>],
    pred_b: &[Vec<FieldLabel>],
    gold: &[Vec<FieldLabel>],
    trials: u64,
    seed: u64,
) -> Result<Significance> {
    if pred_a.len() != gold.len() || pred_b.len() != gold.len() {
        return Err(Error::Contract(
            "prediction sets and gold corpus differ in size".into(),
        ));
    }
    let ca = gold
        .iter()
        .zip(pred_a)
        .map(|(g, p)| field_level(g, p).map(|c| c.pooled()))
        .collect::<Result<Vec<_>>>()?;
    let cb = gold
        .iter()
        .zip(pred_b)
        .map(|(g, p)| field_level(g, p).map(|c| c.pooled()))
        .collect::<Result<Vec<_>>>()?;
    let diff = |swap: &dyn Fn(usize) -> bool| {
        let (mut a, mut b) = (Counts::default(), Counts::default());
        for i in 0..gold.len() {
            if swap(i) {
                a.add(&cb[i]);
                b.add(&ca[i]);
            } else {
                a.add(&ca[i]);
                b.add(&cb[i]);
            }
        }
        a.f1() - b.f1()
    };
    let observed = diff(&|_| false);
    let at_least = |d: f64| d.abs() >= observed.abs() - 1e-12;
    let n = gold.len();
    if n <= EXACT_LIMIT {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|&mask| at_least(diff(&|i| mask >> i & 1 == 1)))
            .count() as u64;
        return Ok(Significance {
            observed_diff: observed,
            p_value: hits as f64 / total as f64,
            trials: total,
            exact: true,
        });
    }
    if trials == 0 {
        return Err(Error::Invalid("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        let swaps: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        if at_least(diff(&|i| swaps[i])) {
            hits += 1;
        }
    }
    Ok(Significance {
        observed_diff: observed,
        p_value: (hits + 1) as f64 / (trials + 1) as f64,
        trials,
        exact: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub token: String,
    pub count: usize,
}

/// Count surface forms of the selected words; descending count, ties in
/// alphabetical order.
pub fn word_frequency<'a>(
    selections: impl IntoIterator<Item = (&'a LabeledCitation, Vec<usize>)>,
) -> Vec<FrequencyRow> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (c, words) in selections {
        for w in words {
            if let Some(t) = c.tokens.get(w) {
                *counts.entry(t.text.as_str()).or_default() += 1;
            }
        }
    }
    let mut rows: Vec<FrequencyRow> = counts
        .into_iter()
        .map(|(token, count)| FrequencyRow {
            token: token.to_string(),
            count,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
    rows
}

pub fn anchor_frequency(sets: &[AnchorSet], corpus: &[LabeledCitation]) -> Vec<FrequencyRow> {
    word_frequency(
        sets.iter()
            .filter_map(|s| corpus.get(s.citation).map(|c| (c, s.members.clone()))),
    )
}

pub fn masked_frequency(
    plans: &[MaskingPlan],
    seqs: &[SubwordSequence],
    corpus: &[LabeledCitation],
) -> Vec<FrequencyRow> {
    word_frequency(plans.iter().filter_map(|p| {
        let c = corpus.get(p.citation)?;
        Some((c, p.masked_words(seqs.get(p.citation)?)))
    }))
}
