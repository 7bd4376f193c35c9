use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf::{self, Row, Transitions};
use crate::error::{Error, Result};
use crate::modelfile;
use crate::nn::{Encoder, EncoderCache, Params, Tensor};
use crate::subword::{encode_citation, SubwordSequence, SubwordVocab};
use crate::types::{FieldLabel, LabeledCitation, NUM_LABELS};

const L: usize = NUM_LABELS;
const KIND: &str = "labeler";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub label_order: Vec<String>,
    pub max_len: usize,
}

impl ModelMeta {
    pub fn new(vocab: &SubwordVocab, dim: usize, hidden: usize, max_len: usize) -> Self {
        ModelMeta {
            dim,
            hidden,
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            label_order: FieldLabel::ALL
                .iter()
                .map(|l| l.as_str().to_string())
                .collect(),
            max_len,
        }
    }

    pub fn check_vocab(&self, vocab: &SubwordVocab) -> Result<()> {
        let found = vocab.hash();
        if found != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    fn check_labels(&self) -> Result<()> {
        let expected: Vec<&str> = FieldLabel::ALL.iter().map(|l| l.as_str()).collect();
        if self.label_order != expected {
            return Err(Error::ModelFile(format!(
                "unexpected label order {:?}",
                self.label_order
            )));
        }
        Ok(())
    }
}

/// Embeddings, a bidirectional LSTM, a linear emission layer and a CRF.
/// Emissions are read at the first subword of each word.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelerModel {
    pub meta: ModelMeta,
    pub encoder: Encoder,
    pub emit_w: Tensor,
    pub emit_b: Tensor,
    pub trans: Tensor,
    pub start: Tensor,
    pub stop: Tensor,
}

const TENSOR_NAMES: [&str; 12] = [
    "embedding",
    "fwd.w_ih",
    "fwd.w_hh",
    "fwd.bias",
    "bwd.w_ih",
    "bwd.w_hh",
    "bwd.bias",
    "emit_w",
    "emit_b",
    "crf.trans",
    "crf.start",
    "crf.stop",
];

impl Params for LabelerModel {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = self.encoder.tensors();
        v.extend([
            ("emit_w", &self.emit_w),
            ("emit_b", &self.emit_b),
            ("crf.trans", &self.trans),
            ("crf.start", &self.start),
            ("crf.stop", &self.stop),
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend([
            &mut self.emit_w,
            &mut self.emit_b,
            &mut self.trans,
            &mut self.start,
            &mut self.stop,
        ]);
        v
    }
}

/// Forward state kept for backpropagation.
pub(crate) struct Forward {
    pub enc: EncoderCache,
    pub emissions: Vec<Row>,
}

impl LabelerModel {
    pub fn new(meta: ModelMeta, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(meta.vocab_size, meta.dim, meta.hidden, &mut rng);
        let scale = 1.0 / ((2 * meta.hidden) as f64).sqrt();
        let emit_w = Tensor::uniform(L, 2 * meta.hidden, scale, &mut rng);
        LabelerModel {
            meta,
            encoder,
            emit_w,
            emit_b: Tensor::zeros(1, L),
            trans: Tensor::zeros(L, L),
            start: Tensor::zeros(1, L),
            stop: Tensor::zeros(1, L),
        }
    }

    pub fn transitions(&self) -> Transitions {
        Transitions {
            trans: std::array::from_fn(|p| std::array::from_fn(|y| self.trans.data[p * L + y])),
            start: std::array::from_fn(|y| self.start.data[y]),
            stop: std::array::from_fn(|y| self.stop.data[y]),
        }
    }

    fn check_ids(&self, seq: &SubwordSequence) -> Result<()> {
        if seq.num_words() == 0 {
            return Err(Error::Encoding("empty sequence".into()));
        }
        if let Some(&bad) = seq
            .ids
            .iter()
            .find(|&&id| id as usize >= self.meta.vocab_size)
        {
            return Err(Error::Encoding(format!(
                "id {bad} outside vocabulary of {}",
                self.meta.vocab_size
            )));
        }
        Ok(())
    }

    pub(crate) fn emissions_from(&self, enc: &EncoderCache, seq: &SubwordSequence) -> Vec<Row> {
        seq.word_starts
            .iter()
            .map(|&p| {
                let mut row: Row = std::array::from_fn(|y| self.emit_b.data[y]);
                self.emit_w.matvec_add(&enc.out[p], &mut row);
                row
            })
            .collect()
    }

    pub(crate) fn forward(&self, seq: &SubwordSequence) -> Result<Forward> {
        self.check_ids(seq)?;
        let enc = self.encoder.forward(&seq.ids);
        let emissions = self.emissions_from(&enc, seq);
        Ok(Forward { enc, emissions })
    }

    /// Word-level emission scores (one row per encoded word).
    pub fn score_table(&self, seq: &SubwordSequence) -> Result<Vec<Row>> {
        Ok(self.forward(seq)?.emissions)
    }

    /// Backpropagate emission and transition gradients through the network,
    /// accumulating into `grad`. Returns gradients for the input vectors.
    pub(crate) fn backward(
        &self,
        fwd: &Forward,
        seq: &SubwordSequence,
        d_emissions: &[Row],
        d_tr: &Transitions,
        grad: &mut LabelerModel,
        scatter_ids: bool,
    ) -> Vec<Vec<f64>> {
        let two_h = 2 * self.meta.hidden;
        let mut d_out = vec![vec![0.0; two_h]; seq.len()];
        for (&p, d) in seq.word_starts.iter().zip(d_emissions) {
            grad.emit_w.outer_add(d, &fwd.enc.out[p]);
            for y in 0..L {
                grad.emit_b.data[y] += d[y];
            }
            self.emit_w.matvec_t_add(d, &mut d_out[p]);
        }
        for p in 0..L {
            for y in 0..L {
                grad.trans.data[p * L + y] += d_tr.trans[p][y];
            }
            grad.start.data[p] += d_tr.start[p];
            grad.stop.data[p] += d_tr.stop[p];
        }
        let ids = scatter_ids.then_some(seq.ids.as_slice());
        self.encoder
            .backward(&fwd.enc, &d_out, &mut grad.encoder, ids)
    }

    /// Negative log-likelihood of `gold` for one sequence, accumulating the
    /// gradient into `grad`.
    pub(crate) fn nll_accumulate(
        &self,
        seq: &SubwordSequence,
        gold: &[FieldLabel],
        grad: &mut LabelerModel,
    ) -> Result<f64> {
        let fwd = self.forward(seq)?;
        let gold: Vec<usize> = gold
            .iter()
            .take(seq.num_words())
            .map(|l| l.index())
            .collect();
        let g = crf::nll_gradient(&fwd.emissions, &self.transitions(), &gold);
        self.backward(&fwd, seq, &g.d_emissions, &g.d_transitions, grad, true);
        Ok(g.loss)
    }

    pub fn encode(&self, vocab: &SubwordVocab, c: &LabeledCitation) -> Result<SubwordSequence> {
        encode_citation(c, vocab, self.meta.max_len)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        modelfile::encode(KIND, &self.meta, &self.tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let decoded = modelfile::decode::<ModelMeta>(KIND, bytes)?;
        let (meta, t) = decoded.take_in_order(&TENSOR_NAMES)?;
        meta.check_labels()?;
        let mut it = t.into_iter();
        let mut next = || it.next().expect("tensor count checked");
        let model = LabelerModel {
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
            emit_w: next(),
            emit_b: next(),
            trans: next(),
            start: next(),
            stop: next(),
            meta,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let (v, d, h) = (self.meta.vocab_size, self.meta.dim, self.meta.hidden);
        let expected = [
            (v, d),
            (4 * h, d),
            (4 * h, h),
            (1, 4 * h),
            (4 * h, d),
            (4 * h, h),
            (1, 4 * h),
            (L, 2 * h),
            (1, L),
            (L, L),
            (1, L),
            (1, L),
        ];
        for ((name, t), shape) in self.tensors().iter().zip(expected) {
            if (t.rows, t.cols) != shape {
                return Err(Error::ModelFile(format!(
                    "tensor `{name}` has shape {}x{}, expected {}x{}",
                    t.rows, t.cols, shape.0, shape.1
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_bytes(path, &self.to_bytes()?)
    }

    /// Load a model and refuse it unless it was trained on `vocab`.
    pub fn load(path: &Path, vocab: &SubwordVocab) -> Result<Self> {
        let model = Self::from_bytes(&crate::io::read_bytes(path)?)?;
        model.meta.check_vocab(vocab)?;
        Ok(model)
    }
}

/// Per-word label marginals, plus the venue column restricted to positions
/// whose reference label is `Venue`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector {
    pub marginals: Vec<Row>,
    pub venue_positions: Vec<usize>,
    pub venue_confidences: Vec<f64>,
}

impl ConfidenceVector {
    pub fn new(marginals: Vec<Row>, reference: &[FieldLabel]) -> Self {
        let venue_positions: Vec<usize> = reference
            .iter()
            .enumerate()
            .take(marginals.len())
            .filter(|(_, &l)| l == FieldLabel::Venue)
            .map(|(i, _)| i)
            .collect();
        let v = FieldLabel::Venue.index();
        let venue_confidences = venue_positions.iter().map(|&i| marginals[i][v]).collect();
        ConfidenceVector {
            marginals,
            venue_positions,
            venue_confidences,
        }
    }

    /// Number of venue positions (k).
    pub fn k(&self) -> usize {
        self.venue_positions.len()
    }

    pub fn mean_venue(&self) -> f64 {
        if self.venue_confidences.is_empty() {
            return 0.0;
        }
        self.venue_confidences.iter().sum::<f64>() / self.venue_confidences.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<FieldLabel>,
    pub confidence: ConfidenceVector,
}

/// Viterbi labels and forward-backward confidences for every word. Words cut
/// off by truncation are labeled `Other` with certainty.
pub fn predict(
    model: &LabelerModel,
    vocab: &SubwordVocab,
    c: &LabeledCitation,
) -> Result<Prediction> {
    let seq = model.encode(vocab, c)?;
    predict_encoded(model, &seq, &c.labels, c.len())
}

pub fn predict_encoded(
    model: &LabelerModel,
    seq: &SubwordSequence,
    reference: &[FieldLabel],
    num_words: usize,
) -> Result<Prediction> {
    let emissions = model.score_table(seq)?;
    let tr = model.transitions();
    let (path, _) = crf::viterbi(&emissions, &tr);
    let fb = crf::forward_backward(&emissions, &tr);
    let mut labels: Vec<FieldLabel> = path
        .into_iter()
        .map(|y| FieldLabel::from_index(y).expect("label index"))
        .collect();
    let mut marginals = fb.marginals;
    let mut other: Row = [0.0; L];
    other[FieldLabel::Other.index()] = 1.0;
    labels.resize(num_words.max(labels.len()), FieldLabel::Other);
    marginals.resize(labels.len(), other);
    Ok(Prediction {
        confidence: ConfidenceVector::new(marginals, reference),
        labels,
    })
}

/// Mean NLL over `batch` and its exact gradient.
pub fn nll_and_gradient(
    model: &LabelerModel,
    batch: &[(&SubwordSequence, &[FieldLabel])],
) -> Result<(f64, LabelerModel)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut grad = model.zeroed();
    let mut total = 0.0;
    for (index, (seq, gold)) in batch.iter().enumerate() {
        let loss = model.nll_accumulate(seq, gold, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { index });
        }
        total += loss;
    }
    let scale = 1.0 / batch.len() as f64;
    grad.scale_all(scale);
    if !grad.all_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    Ok((total * scale, grad))
}
