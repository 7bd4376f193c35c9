//! Anchor learning on the venue field.
//!
//! A venue token is an anchor when deleting it lowers the model's mean
//! venue confidence on the remaining venue tokens by more than `delta`:
//!
//! ```text
//! S(w_i) = mean_{venue j} P(venue | s)_j  -  mean_{venue j != i} P(venue | s - w_i)_j
//! ```
//!
//! Anchor sets computed on labeled data train a per-token binary selector,
//! which then marks anchors on the (much larger) generated corpus.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::{predict, LabelerModel, ModelMeta};
use crate::modelfile;
use crate::nn::{clip_grad_norm, log_softmax, Adam, Encoder, Params, Tensor};
use crate::subword::{encode_citation, SubwordSequence, SubwordVocab};
use crate::types::{FieldLabel, LabeledCitation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub delta: f64,
    pub min_venue_tokens: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            delta: 0.05,
            min_venue_tokens: 2,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Invalid(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.min_venue_tokens < 2 {
            return Err(Error::Invalid("min_venue_tokens must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorScore {
    pub token_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    /// Leave-one-out scores over gold venue positions.
    LeaveOneOut,
    /// Selector anchor probabilities over every word.
    Selector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    /// Index of the citation in its corpus.
    pub citation: usize,
    /// Sorted anchor word positions.
    pub members: Vec<usize>,
    pub scores: Vec<AnchorScore>,
    #[serde(default)]
    pub degenerate: bool,
    pub source: AnchorSource,
}

impl AnchorSet {
    pub fn score_of(&self, word: usize) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.token_index == word)
            .map(|s| s.score)
    }
}

pub fn write_anchor_sets(path: &Path, sets: &[AnchorSet]) -> Result<()> {
    crate::io::write_jsonl(path, sets)
}

pub fn read_anchor_sets(path: &Path) -> Result<Vec<AnchorSet>> {
    crate::io::read_jsonl(path)
}

/// Anything that can report venue confidences for the gold venue positions
/// of a citation, in position order.
pub trait VenueConfidence {
    fn venue_confidences(&self, c: &LabeledCitation) -> Result<Vec<f64>>;
}

/// Venue marginals from a trained labeler.
pub struct ModelConfidence<'a> {
    pub model: &'a LabelerModel,
    pub vocab: &'a SubwordVocab,
}

impl VenueConfidence for ModelConfidence<'_> {
    fn venue_confidences(&self, c: &LabeledCitation) -> Result<Vec<f64>> {
        Ok(predict(self.model, self.vocab, c)?
            .confidence
            .venue_confidences)
    }
}

fn venue_positions(c: &LabeledCitation) -> Vec<usize> {
    c.labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == FieldLabel::Venue)
        .map(|(i, _)| i)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn removal_score(
    source: &impl VenueConfidence,
    c: &LabeledCitation,
    i: usize,
    full_mean: f64,
) -> Result<f64> {
    let reduced = source.venue_confidences(&c.without_word(i))?;
    if reduced.is_empty() {
        return Err(Error::Contract(
            "no venue tokens left after deletion".into(),
        ));
    }
    Ok(full_mean - mean(&reduced))
}

/// Leave-one-out score of the venue word at position `i`.
pub fn anchor_score(
    source: &impl VenueConfidence,
    c: &LabeledCitation,
    i: usize,
    config: &AnchorConfig,
) -> Result<AnchorScore> {
    let venue = venue_positions(c);
    if venue.len() < config.min_venue_tokens {
        return Err(Error::DegenerateVenue {
            k: venue.len(),
            min: config.min_venue_tokens,
        });
    }
    if c.labels.get(i) != Some(&FieldLabel::Venue) {
        return Err(Error::Contract(format!(
            "position {i} is not a venue token"
        )));
    }
    let full = source.venue_confidences(c)?;
    Ok(AnchorScore {
        token_index: i,
        score: removal_score(source, c, i, mean(&full))?,
    })
}

/// Scores for every venue position of one citation (the full-sequence mean is
/// computed once).
pub fn score_citation(
    source: &impl VenueConfidence,
    c: &LabeledCitation,
    config: &AnchorConfig,
) -> Result<Vec<AnchorScore>> {
    let venue = venue_positions(c);
    if venue.len() < config.min_venue_tokens {
        return Err(Error::DegenerateVenue {
            k: venue.len(),
            min: config.min_venue_tokens,
        });
    }
    let full_mean = mean(&source.venue_confidences(c)?);
    venue
        .into_iter()
        .map(|i| {
            Ok(AnchorScore {
                token_index: i,
                score: removal_score(source, c, i, full_mean)?,
            })
        })
        .collect()
}

/// Anchor sets for a labeled dataset. Citations with fewer than
/// `min_venue_tokens` venue words get an empty set flagged `degenerate`.
pub fn extract_anchor_sets(
    source: &impl VenueConfidence,
    dataset: &[LabeledCitation],
    config: &AnchorConfig,
) -> Result<Vec<AnchorSet>> {
    config.validate()?;
    dataset
        .iter()
        .enumerate()
        .map(|(idx, c)| match score_citation(source, c, config) {
            Ok(scores) => Ok(AnchorSet {
                citation: idx,
                members: scores
                    .iter()
                    .filter(|s| s.score > config.delta)
                    .map(|s| s.token_index)
                    .collect(),
                scores,
                degenerate: false,
                source: AnchorSource::LeaveOneOut,
            }),
            Err(Error::DegenerateVenue { .. }) => Ok(AnchorSet {
                citation: idx,
                members: Vec::new(),
                scores: Vec::new(),
                degenerate: true,
                source: AnchorSource::LeaveOneOut,
            }),
            Err(e) => Err(e),
        })
        .collect()
}

/// Leave-one-out anchor sets computed directly on a labeled generated
/// corpus, bypassing the selector.
pub fn direct_anchor_sets(
    source: &impl VenueConfidence,
    corpus: &[LabeledCitation],
    config: &AnchorConfig,
) -> Result<Vec<AnchorSet>> {
    extract_anchor_sets(source, corpus, config)
}

/// Pooled overlap |A ∩ B| / |A ∪ B| of member positions across a corpus.
pub fn anchor_agreement(a: &[AnchorSet], b: &[AnchorSet]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let xs: BTreeSet<_> = x.members.iter().collect();
        let ys: BTreeSet<_> = y.members.iter().collect();
        inter += xs.intersection(&ys).count();
        union += xs.union(&ys).count();
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorMeta {
    pub labeler: ModelMeta,
    pub threshold: f64,
}

/// Per-word binary classifier: anchor vs. not anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorModel {
    pub meta: SelectorMeta,
    pub encoder: Encoder,
    /// Row 0 scores "not anchor", row 1 scores "anchor".
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl Params for SelectorModel {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = self.encoder.tensors();
        v.extend([("head_w", &self.head_w), ("head_b", &self.head_b)]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend([&mut self.head_w, &mut self.head_b]);
        v
    }
}

const SELECTOR_KIND: &str = "selector";
const SELECTOR_TENSORS: [&str; 9] = [
    "embedding",
    "fwd.w_ih",
    "fwd.w_hh",
    "fwd.bias",
    "bwd.w_ih",
    "bwd.w_hh",
    "bwd.bias",
    "head_w",
    "head_b",
];

impl SelectorModel {
    /// A selector whose encoder starts from `encoder` and whose head is
    /// freshly initialized.
    pub fn new(meta: ModelMeta, encoder: Encoder, threshold: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let two_h = 2 * encoder.hidden();
        let head_w = Tensor::uniform(2, two_h, 1.0 / (two_h as f64).sqrt(), &mut rng);
        SelectorModel {
            meta: SelectorMeta {
                labeler: meta,
                threshold,
            },
            encoder,
            head_w,
            head_b: Tensor::zeros(1, 2),
        }
    }

    fn logits(&self, out: &[f64]) -> [f64; 2] {
        let mut z = [self.head_b.data[0], self.head_b.data[1]];
        self.head_w.matvec_add(out, &mut z);
        z
    }

    /// Anchor-class probability for every encoded word.
    pub fn probabilities(&self, seq: &SubwordSequence) -> Vec<f64> {
        let enc = self.encoder.forward(&seq.ids);
        seq.word_starts
            .iter()
            .map(|&p| log_softmax(&self.logits(&enc.out[p]))[1].exp())
            .collect()
    }

    /// Weighted cross-entropy summed over words; gradient accumulated.
    fn loss_accumulate(
        &self,
        seq: &SubwordSequence,
        targets: &[bool],
        positive_weight: f64,
        grad: &mut SelectorModel,
    ) -> f64 {
        let enc = self.encoder.forward(&seq.ids);
        let mut d_out = vec![vec![0.0; enc.out[0].len()]; seq.len()];
        let mut loss = 0.0;
        for (&p, &t) in seq.word_starts.iter().zip(targets) {
            let logp = log_softmax(&self.logits(&enc.out[p]));
            let y = usize::from(t);
            let w = if t { positive_weight } else { 1.0 };
            loss -= w * logp[y];
            let mut dz = [logp[0].exp() * w, logp[1].exp() * w];
            dz[y] -= w;
            grad.head_w.outer_add(&dz, &enc.out[p]);
            grad.head_b.data[0] += dz[0];
            grad.head_b.data[1] += dz[1];
            self.head_w.matvec_t_add(&dz, &mut d_out[p]);
        }
        self.encoder
            .backward(&enc, &d_out, &mut grad.encoder, Some(&seq.ids));
        loss
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        modelfile::encode(SELECTOR_KIND, &self.meta, &self.tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let decoded = modelfile::decode::<SelectorMeta>(SELECTOR_KIND, bytes)?;
        let (meta, t) = decoded.take_in_order(&SELECTOR_TENSORS)?;
        let mut it = t.into_iter();
        let mut next = || it.next().expect("tensor count checked");
        Ok(SelectorModel {
            encoder: Encoder {
                embedding: next(),
                fwd: crate::nn::Lstm {
                    w_ih: next(),
                    w_hh: next(),
                    bias: next(),
                },
                bwd: crate::nn::Lstm {
                    w_ih: next(),
                    w_hh: next(),
                    bias: next(),
                },
            },
            head_w: next(),
            head_b: next(),
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path, vocab: &SubwordVocab) -> Result<Self> {
        let m = Self::from_bytes(&crate::io::read_bytes(path)?)?;
        m.meta.labeler.check_vocab(vocab)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss weight of positive (anchor) words relative to negatives.
    pub class_weight: f64,
    pub holdout_fraction: f64,
    pub threshold: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            learning_rate: 5e-3,
            epochs: 8,
            batch_size: 16,
            seed: 0,
            class_weight: 4.0,
            holdout_fraction: 0.2,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectorReport {
    pub train_citations: usize,
    pub holdout_citations: usize,
    pub positives: usize,
    pub negatives: usize,
    pub holdout_precision: f64,
    pub holdout_recall: f64,
    pub epoch_losses: Vec<f64>,
    /// Set when the selector never predicts an anchor on held-out data
    /// (recall 0) or was returned untrained.
    pub degenerate: bool,
    pub untrained: bool,
}

/// Train the anchor selector on `dataset` and its anchor sets. Degenerate
/// sets are skipped; a held-out split reports anchor precision and recall.
pub fn train_selector(
    init: SelectorModel,
    vocab: &SubwordVocab,
    anchor_sets: &[AnchorSet],
    dataset: &[LabeledCitation],
    config: &SelectorConfig,
) -> Result<(SelectorModel, SelectorReport)> {
    if anchor_sets.len() != dataset.len() {
        return Err(Error::Contract(format!(
            "{} anchor sets for {} citations",
            anchor_sets.len(),
            dataset.len()
        )));
    }
    let mut examples: Vec<(SubwordSequence, Vec<bool>)> = Vec::new();
    for set in anchor_sets.iter().filter(|s| !s.degenerate) {
        let c = dataset.get(set.citation).ok_or_else(|| {
            Error::Contract(format!("anchor set for missing citation {}", set.citation))
        })?;
        let seq = encode_citation(c, vocab, init.meta.labeler.max_len)?;
        let targets = (0..seq.num_words())
            .map(|w| set.members.contains(&w))
            .collect();
        examples.push((seq, targets));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((examples.len() as f64) * config.holdout_fraction).round() as usize;
    let n_hold = n_hold.min(examples.len().saturating_sub(1));
    let (hold, mut train_idx) = {
        let (h, t) = order.split_at(n_hold);
        (h.to_vec(), t.to_vec())
    };

    let positives: usize = train_idx
        .iter()
        .map(|&i| examples[i].1.iter().filter(|&&t| t).count())
        .sum();
    let words: usize = train_idx.iter().map(|&i| examples[i].1.len()).sum();
    let mut report = SelectorReport {
        train_citations: train_idx.len(),
        holdout_citations: hold.len(),
        positives,
        negatives: words - positives,
        ..SelectorReport::default()
    };
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut model = init;
    model.meta.threshold = config.threshold;
    if config.epochs == 0 {
        log::warn!("selector epochs = 0; returning the untrained selector");
        report.untrained = true;
    }
    let mut adam = Adam::new(config.learning_rate);
    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(config.batch_size.max(1)) {
            let mut grad = model.zeroed();
            let mut n_words = 0usize;
            for &i in chunk {
                let (seq, t) = &examples[i];
                total += model.loss_accumulate(seq, t, config.class_weight, &mut grad);
                n_words += t.len();
            }
            grad.scale_all(1.0 / n_words.max(1) as f64);
            clip_grad_norm(&mut grad, 5.0);
            adam.step(&mut model, &grad);
        }
        let epoch_loss = total / words.max(1) as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::DivergedEpoch { epoch: epoch + 1 });
        }
        report.epoch_losses.push(epoch_loss);
    }

    let eval_idx = if hold.is_empty() { &train_idx } else { &hold };
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &i in eval_idx {
        let (seq, targets) = &examples[i];
        for (p, &t) in model.probabilities(seq).iter().zip(targets) {
            let pred = *p > model.meta.threshold;
            match (pred, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    report.holdout_precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    report.holdout_recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    report.degenerate = report.untrained || report.holdout_recall == 0.0;
    Ok((model, report))
}

/// Apply the selector to raw citations: members are words whose anchor
/// probability is strictly above the threshold.
pub fn select_anchors(
    selector: &SelectorModel,
    vocab: &SubwordVocab,
    corpus: &[LabeledCitation],
) -> Result<Vec<AnchorSet>> {
    corpus
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let seq = encode_citation(c, vocab, selector.meta.labeler.max_len)?;
            let probs = selector.probabilities(&seq);
            let scores: Vec<AnchorScore> = probs
                .iter()
                .enumerate()
                .map(|(w, &p)| AnchorScore {
                    token_index: w,
                    score: p,
                })
                .collect();
            Ok(AnchorSet {
                citation: idx,
                members: scores
                    .iter()
                    .filter(|s| s.score > selector.meta.threshold)
                    .map(|s| s.token_index)
                    .collect(),
                scores,
                degenerate: false,
                source: AnchorSource::Selector,
            })
        })
        .collect()
}
