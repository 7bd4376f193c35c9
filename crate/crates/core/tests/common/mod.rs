//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use citefield::labeler::{Row, Transitions};
use citefield::nn::Params;
use citefield::styler::{builtin_styles, generate_corpus};
use citefield::subword::{build_vocab, encode_citation, tokenize_word, CLS_ID};
use citefield::synth::synthesize_records;
use citefield::{FieldLabel, LabeledCitation, LabelerModel, ModelMeta, SubwordVocab, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const L: usize = 5;

pub fn random_tables(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> (Vec<Row>, Transitions) {
    let mut r = || rng.gen_range(-scale..scale);
    let em = (0..n).map(|_| std::array::from_fn(|_| r())).collect();
    let tr = Transitions {
        trans: std::array::from_fn(|_| std::array::from_fn(|_| r())),
        start: std::array::from_fn(|_| r()),
        stop: std::array::from_fn(|_| r()),
    };
    (em, tr)
}

pub fn all_paths(n: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..n {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..L).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    paths
}

fn score(em: &[Row], tr: &Transitions, path: &[usize]) -> f64 {
    let mut s = tr.start[path[0]] + tr.stop[*path.last().unwrap()];
    for t in 0..path.len() {
        s += em[t][path[t]];
        if t > 0 {
            s += tr.trans[path[t - 1]][path[t]];
        }
    }
    s
}

pub struct Enumerated {
    pub best: Vec<usize>,
    pub best_score: f64,
    pub marginals: Vec<Row>,
    pub log_partition: f64,
}

/// Exhaustive enumeration over all 5^n paths.
pub fn enumerate(em: &[Row], tr: &Transitions) -> Enumerated {
    let n = em.len();
    let paths = all_paths(n);
    let scores: Vec<f64> = paths.iter().map(|p| score(em, tr, p)).collect();
    let (mut bi, mut bs) = (0, f64::NEG_INFINITY);
    for (i, &s) in scores.iter().enumerate() {
        if s > bs {
            bi = i;
            bs = s;
        }
    }
    let m = bs;
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let mut marginals = vec![[0.0; L]; n];
    for (p, s) in paths.iter().zip(&scores) {
        let w = (s - m).exp() / z;
        for (t, &y) in p.iter().enumerate() {
            marginals[t][y] += w;
        }
    }
    Enumerated {
        best: paths[bi].clone(),
        best_score: bs,
        marginals,
        log_partition: m + z.ln(),
    }
}

pub fn synthetic_citations(n: usize, seed: u64) -> Vec<LabeledCitation> {
    let records = synthesize_records(n, seed);
    generate_corpus(&records, &builtin_styles(), 1, seed, false)
        .unwrap()
        .into_iter()
        .map(|r| r.citation)
        .collect()
}

pub fn small_vocab(corpus: &[LabeledCitation]) -> SubwordVocab {
    build_vocab(corpus, 300, 1).unwrap()
}

/// A tiny model with all parameters redrawn uniformly in `[-scale, scale]`.
pub fn random_model(
    vocab: &SubwordVocab,
    dim: usize,
    hidden: usize,
    seed: u64,
    scale: f64,
) -> LabelerModel {
    let mut model = LabelerModel::new(ModelMeta::new(vocab, dim, hidden, 512), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for t in model.tensors_mut() {
        for v in &mut t.data {
            *v = rng.gen_range(-scale..scale);
        }
    }
    model
}

/// Citation made of `words` with `labels`, offsets laid out as if joined by
/// single spaces.
pub fn citation_from_words(words: &[&str], labels: &[FieldLabel]) -> LabeledCitation {
    let mut tokens = Vec::new();
    let mut pos = 0;
    for w in words {
        let n = w.chars().count();
        tokens.push(Token {
            text: w.to_string(),
            char_start: pos,
            char_end: pos + n,
        });
        pos += n + 1;
    }
    LabeledCitation {
        source: words.join(" "),
        tokens,
        labels: labels.to_vec(),
        origin: citefield::Origin::Task,
    }
}

/// Venue marginals recomputed from scratch: subword ids rebuilt word by word,
/// scores from the model, marginals by exhaustive enumeration when short
/// enough and by the library forward-backward otherwise.
pub fn venue_marginals_from_scratch(
    model: &LabelerModel,
    vocab: &SubwordVocab,
    c: &LabeledCitation,
) -> Vec<f64> {
    let mut ids = vec![CLS_ID];
    for t in &c.tokens {
        ids.extend(tokenize_word(&t.text, vocab));
    }
    let seq = encode_citation(c, vocab, model.meta.max_len).unwrap();
    assert_eq!(seq.ids, ids[..seq.ids.len()]);
    let em = model.score_table(&seq).unwrap();
    let marg = if em.len() <= 6 {
        enumerate(&em, &model.transitions()).marginals
    } else {
        citefield::labeler::forward_backward(&em, &model.transitions()).marginals
    };
    let v = FieldLabel::Venue.index();
    c.labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == FieldLabel::Venue)
        .map(|(i, _)| marg[i][v])
        .collect()
}

/// Leave-one-out score of venue word `i`, recomputed without the library's
/// deletion helper.
pub fn loo_oracle(
    model: &LabelerModel,
    vocab: &SubwordVocab,
    c: &LabeledCitation,
    i: usize,
) -> f64 {
    let full = venue_marginals_from_scratch(model, vocab, c);
    let words: Vec<&str> = c
        .tokens
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, t)| t.text.as_str())
        .collect();
    let labels: Vec<FieldLabel> = c
        .labels
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &l)| l)
        .collect();
    let reduced = venue_marginals_from_scratch(model, vocab, &citation_from_words(&words, &labels));
    full.iter().sum::<f64>() / full.len() as f64
        - reduced.iter().sum::<f64>() / reduced.len() as f64
}

/// Largest relative error between the analytic gradient and central
/// differences, over every parameter. Denominators are floored at `floor`.
pub fn max_gradient_error(
    model: &LabelerModel,
    batch: &[(&citefield::SubwordSequence, &[FieldLabel])],
    eps: f64,
    floor: f64,
) -> f64 {
    let (_, grad) = citefield::labeler::nll_and_gradient(model, batch).unwrap();
    let analytic: Vec<f64> = grad
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.clone())
        .collect();
    let loss = |m: &LabelerModel| citefield::labeler::nll_and_gradient(m, batch).unwrap().0;
    let mut worst = 0.0f64;
    let mut k = 0;
    let n_tensors = model.tensors().len();
    for ti in 0..n_tensors {
        let len = model.tensors()[ti].1.data.len();
        for j in 0..len {
            let mut plus = model.clone();
            plus.tensors_mut()[ti].data[j] += eps;
            let mut minus = model.clone();
            minus.tensors_mut()[ti].data[j] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let a = analytic[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
            k += 1;
        }
    }
    worst
}

/// Three hand-labeled citations with planted errors. The expected counts
/// live next to the assertions.
pub struct MetricFixture {
    pub gold: Vec<Vec<FieldLabel>>,
    pub pred: Vec<Vec<FieldLabel>>,
}

pub fn metric_fixture() -> MetricFixture {
    use FieldLabel::*;
    MetricFixture {
        gold: vec![
            // A A O T T T T O Y
            vec![
                Author, Author, Other, Title, Title, Title, Title, Other, Year,
            ],
            // A T T V V V Y
            vec![Author, Title, Title, Venue, Venue, Venue, Year],
            // A A T V V Y
            vec![Author, Author, Title, Venue, Venue, Year],
        ],
        pred: vec![
            // Title cut one short: [3,6) against gold [3,7).
            vec![
                Author, Author, Other, Title, Title, Title, Other, Other, Year,
            ],
            // Venue starts one word early and swallows a title word.
            vec![Author, Title, Venue, Venue, Venue, Venue, Year],
            // Nothing predicted.
            vec![Other, Other, Other, Other, Other, Other],
        ],
    }
}
