//! Task-guided pre-training: masked-token prediction on the generated corpus
//! with masking plans driven by anchors, random sampling or a gradient
//! saliency proxy.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::AnchorSet;
use crate::error::{Error, Result};
use crate::labeler::{crf, Forward, LabelerModel};
use crate::nn::{clip_grad_norm, log_softmax, Adam, Encoder, Params, Tensor};
use crate::subword::{SubwordSequence, CLS_ID, MASK_ID, NUM_SPECIAL, PAD_ID};
use crate::types::FieldLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[serde(rename = "anchor")]
    AnchorPlusRandom,
    #[serde(rename = "random")]
    RandomOnly,
    #[serde(rename = "attention")]
    AttentionProxy,
    None,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::None,
        StrategyKind::AnchorPlusRandom,
        StrategyKind::AttentionProxy,
        StrategyKind::RandomOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::AnchorPlusRandom => "anchor",
            StrategyKind::RandomOnly => "random",
            StrategyKind::AttentionProxy => "attention",
            StrategyKind::None => "none",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchor" => Ok(StrategyKind::AnchorPlusRandom),
            "random" => Ok(StrategyKind::RandomOnly),
            "attention" => Ok(StrategyKind::AttentionProxy),
            "none" => Ok(StrategyKind::None),
            other => Err(Error::Invalid(format!(
                "unknown masking strategy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacePolicy {
    pub mask_prob: f64,
    pub random_prob: f64,
    pub keep_prob: f64,
}

impl Default for ReplacePolicy {
    fn default() -> Self {
        ReplacePolicy {
            mask_prob: 0.8,
            random_prob: 0.1,
            keep_prob: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingStrategy {
    pub variant: StrategyKind,
    pub mask_fraction: f64,
    pub replace_policy: ReplacePolicy,
}

impl MaskingStrategy {
    pub fn new(variant: StrategyKind) -> Self {
        MaskingStrategy {
            variant,
            mask_fraction: 0.15,
            replace_policy: ReplacePolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "mask_fraction must be in (0, 1), got {}",
                self.mask_fraction
            )));
        }
        let p = self.replace_policy;
        if [p.mask_prob, p.random_prob, p.keep_prob]
            .iter()
            .any(|&x| !(0.0..=1.0).contains(&x))
            || (p.mask_prob + p.random_prob + p.keep_prob - 1.0).abs() > 1e-9
        {
            return Err(Error::Invalid(
                "replace policy probabilities must be in [0, 1] and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskAction {
    MaskToken,
    RandomToken(u32),
    Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub citation: usize,
    /// Sorted, distinct subword positions.
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
    /// Original ids at `positions`.
    pub targets: Vec<u32>,
}

impl MaskingPlan {
    /// Input ids with the plan's actions applied.
    pub fn apply(&self, ids: &[u32]) -> Vec<u32> {
        let mut out = ids.to_vec();
        for (&p, a) in self.positions.iter().zip(&self.actions) {
            match a {
                MaskAction::MaskToken => out[p] = MASK_ID,
                MaskAction::RandomToken(id) => out[p] = *id,
                MaskAction::Keep => {}
            }
        }
        out
    }

    /// Distinct word indices touched by the plan, ascending.
    pub fn masked_words(&self, seq: &SubwordSequence) -> Vec<usize> {
        let mut w: Vec<usize> = self
            .positions
            .iter()
            .filter_map(|&p| seq.word_index[p])
            .collect();
        w.dedup();
        w
    }

    fn check(&self, seq: &SubwordSequence, vocab_size: usize) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Contract("masking plan has no positions".into()));
        }
        if self.positions.len() != self.actions.len() || self.positions.len() != self.targets.len()
        {
            return Err(Error::Contract(
                "masking plan arrays differ in length".into(),
            ));
        }
        for (&p, &t) in self.positions.iter().zip(&self.targets) {
            if p == 0 || p >= seq.len() || seq.ids[p] != t || t as usize >= vocab_size {
                return Err(Error::Contract(format!(
                    "masking plan inconsistent with sequence at position {p}"
                )));
            }
        }
        Ok(())
    }
}

/// B = max(1, round(fraction × length)).
pub fn mask_budget(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64).round() as usize).max(1)
}

/// Word-level guidance for a plan.
#[derive(Debug, Clone, Copy)]
pub enum Guide<'a> {
    None,
    Anchors(&'a AnchorSet),
    /// One saliency value per encoded word.
    Saliency(&'a [f64]),
}

fn ranked_positions(seq: &SubwordSequence, words: &[(usize, f64)]) -> Vec<usize> {
    let mut words = words.to_vec();
    words.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    words
        .iter()
        .flat_map(|&(w, _)| seq.word_positions(w).collect::<Vec<_>>())
        .collect()
}

/// Build one masking plan. Guided positions come first (whole words in
/// descending score order, cut at the budget); the rest of the budget is
/// filled with uniformly sampled word positions.
pub fn build_plan(
    citation: usize,
    seq: &SubwordSequence,
    guide: Guide<'_>,
    strategy: &MaskingStrategy,
    vocab_size: usize,
    seed: u64,
) -> Result<MaskingPlan> {
    strategy.validate()?;
    if strategy.variant == StrategyKind::None {
        return Err(Error::Contract(
            "no masking plan under strategy `none`".into(),
        ));
    }
    let eligible: Vec<usize> = (1..seq.len())
        .filter(|&p| seq.word_index[p].is_some())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Contract("sequence has no maskable positions".into()));
    }
    let budget = mask_budget(seq.len(), strategy.mask_fraction).min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen: Vec<usize> = match (strategy.variant, guide) {
        (StrategyKind::AnchorPlusRandom, Guide::Anchors(set)) => {
            let words: Vec<(usize, f64)> = set
                .members
                .iter()
                .filter(|&&w| w < seq.num_words())
                .map(|&w| (w, set.score_of(w).unwrap_or(0.0)))
                .collect();
            ranked_positions(seq, &words)
        }
        (StrategyKind::AnchorPlusRandom, Guide::None) | (StrategyKind::RandomOnly, _) => Vec::new(),
        (StrategyKind::AttentionProxy, Guide::Saliency(s)) => {
            if s.len() != seq.num_words() {
                return Err(Error::Contract(format!(
                    "{} saliency values for {} words",
                    s.len(),
                    seq.num_words()
                )));
            }
            ranked_positions(seq, &s.iter().copied().enumerate().collect::<Vec<_>>())
        }
        (v, _) => {
            return Err(Error::Contract(format!(
                "strategy `{v}` given the wrong kind of guidance"
            )))
        }
    };
    chosen.truncate(budget);
    if chosen.len() < budget {
        let rest: Vec<usize> = eligible
            .iter()
            .copied()
            .filter(|p| !chosen.contains(p))
            .collect();
        chosen.extend(rest.choose_multiple(&mut rng, budget - chosen.len()));
    }
    chosen.sort_unstable();

    let policy = strategy.replace_policy;
    let actions = chosen
        .iter()
        .map(|_| {
            let u: f64 = rng.gen();
            if u < policy.mask_prob {
                MaskAction::MaskToken
            } else if u < policy.mask_prob + policy.random_prob && vocab_size > NUM_SPECIAL {
                MaskAction::RandomToken(rng.gen_range(NUM_SPECIAL as u32..vocab_size as u32))
            } else {
                MaskAction::Keep
            }
        })
        .collect();
    let targets = chosen.iter().map(|&p| seq.ids[p]).collect();
    Ok(MaskingPlan {
        citation,
        positions: chosen,
        actions,
        targets,
    })
}

fn labeling_loss_from(model: &LabelerModel, fwd: &Forward, targets: &[usize]) -> f64 {
    let tr = model.transitions();
    crf::forward_backward(&fwd.emissions, &tr).log_partition
        - crf::path_score(&fwd.emissions, &tr, targets)
}

/// Labeling loss with fixed targets, evaluated from explicit input vectors.
pub fn labeling_loss_at_inputs(
    model: &LabelerModel,
    seq: &SubwordSequence,
    inputs: Vec<Vec<f64>>,
    targets: &[usize],
) -> f64 {
    let enc = model.encoder.forward_inputs(inputs);
    let emissions = model.emissions_from(&enc, seq);
    labeling_loss_from(model, &Forward { enc, emissions }, targets)
}

/// Viterbi labels of the model, as indices.
pub fn predicted_targets(model: &LabelerModel, seq: &SubwordSequence) -> Result<Vec<usize>> {
    let em = model.score_table(seq)?;
    Ok(crf::viterbi(&em, &model.transitions()).0)
}

/// Per-word saliency: L1 norm of the gradient of the labeling loss (with
/// the model's own predictions as targets) with respect to the word's
/// subword input vectors.
pub fn saliency_proxy(model: &LabelerModel, seq: &SubwordSequence) -> Result<Vec<f64>> {
    let fwd = model.forward(seq)?;
    let tr = model.transitions();
    let targets = crf::viterbi(&fwd.emissions, &tr).0;
    let g = crf::nll_gradient(&fwd.emissions, &tr, &targets);
    let mut scratch = model.zeroed();
    let d_in = model.backward(
        &fwd,
        seq,
        &g.d_emissions,
        &g.d_transitions,
        &mut scratch,
        false,
    );
    Ok((0..seq.num_words())
        .map(|w| {
            seq.word_positions(w)
                .map(|p| d_in[p].iter().map(|v| v.abs()).sum::<f64>())
                .sum()
        })
        .collect())
}

/// Output projection from encoder states to vocabulary logits. When tied,
/// the embedding table is reused (requires embedding dim = 2 × hidden) and
/// `w` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub w: Tensor,
    pub b: Tensor,
    pub tied: bool,
}

/// Encoder plus masked-prediction head, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmModel {
    pub encoder: Encoder,
    pub head: MlmHead,
}

impl Params for MlmModel {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = self.encoder.tensors();
        v.extend([("mlm.w", &self.head.w), ("mlm.b", &self.head.b)]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend([&mut self.head.w, &mut self.head.b]);
        v
    }
}

impl MlmModel {
    pub fn new(encoder: Encoder, tied: bool, seed: u64) -> Result<Self> {
        let (v, two_h) = (encoder.vocab_size(), 2 * encoder.hidden());
        if tied && encoder.dim() != two_h {
            return Err(Error::Invalid(format!(
                "tied output head needs embedding dim {} = 2 x hidden {}",
                encoder.dim(),
                encoder.hidden()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = if tied {
            Tensor::zeros(0, 0)
        } else {
            Tensor::uniform(v, two_h, 1.0 / (two_h as f64).sqrt(), &mut rng)
        };
        Ok(MlmModel {
            encoder,
            head: MlmHead {
                w,
                b: Tensor::zeros(1, v),
                tied,
            },
        })
    }

    fn out_w(&self) -> &Tensor {
        if self.head.tied {
            &self.encoder.embedding
        } else {
            &self.head.w
        }
    }

    /// Vocabulary logits for one encoder state.
    pub fn logits(&self, state: &[f64]) -> Vec<f64> {
        let mut z = self.head.b.data.clone();
        self.out_w().matvec_add(state, &mut z);
        z
    }

    /// Summed cross-entropy over the plan's positions and the position count;
    /// gradients accumulate into `grad`.
    fn loss_sum(
        &self,
        plan: &MaskingPlan,
        seq: &SubwordSequence,
        grad: &mut MlmModel,
    ) -> Result<(f64, usize)> {
        plan.check(seq, self.encoder.vocab_size())?;
        let ids = plan.apply(&seq.ids);
        let enc = self.encoder.forward(&ids);
        let mut d_out = vec![vec![0.0; 2 * self.encoder.hidden()]; ids.len()];
        let mut total = 0.0;
        for (&p, &t) in plan.positions.iter().zip(&plan.targets) {
            let lp = log_softmax(&self.logits(&enc.out[p]));
            total -= lp[t as usize];
            let mut dz: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
            dz[t as usize] -= 1.0;
            if self.head.tied {
                grad.encoder.embedding.outer_add(&dz, &enc.out[p]);
            } else {
                grad.head.w.outer_add(&dz, &enc.out[p]);
            }
            crate::nn::axpy(1.0, &dz, &mut grad.head.b.data);
            self.out_w().matvec_t_add(&dz, &mut d_out[p]);
        }
        self.encoder
            .backward(&enc, &d_out, &mut grad.encoder, Some(&ids));
        Ok((total, plan.positions.len()))
    }
}

/// Mean cross-entropy over the plan's positions (including `Keep` ones) and
/// its gradient.
pub fn mlm_loss(
    model: &MlmModel,
    plan: &MaskingPlan,
    seq: &SubwordSequence,
) -> Result<(f64, MlmModel)> {
    let mut grad = model.zeroed();
    let (sum, n) = model.loss_sum(plan, seq, &mut grad)?;
    grad.scale_all(1.0 / n as f64);
    Ok((sum / n as f64, grad))
}

/// Mean masked-prediction loss over fixed plans, without gradients.
pub fn mean_mlm_loss(
    model: &MlmModel,
    seqs: &[SubwordSequence],
    plans: &[MaskingPlan],
) -> Result<f64> {
    let mut scratch = model.zeroed();
    let (mut sum, mut n) = (0.0, 0usize);
    for plan in plans {
        let (s, k) = model.loss_sum(plan, &seqs[plan.citation], &mut scratch)?;
        sum += s;
        n += k;
    }
    Ok(sum / n.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub tied_head: bool,
    pub clip_norm: Option<f64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            batch_size: 32,
            learning_rate: 5e-5,
            seed: 0,
            tied_head: false,
            clip_norm: Some(5.0),
        }
    }
}

/// Per-citation guidance for a whole corpus.
#[derive(Debug, Clone, Copy)]
pub enum CorpusGuide<'a> {
    None,
    Anchors(&'a [AnchorSet]),
    Saliency(&'a [Vec<f64>]),
}

impl<'a> CorpusGuide<'a> {
    fn get(&self, i: usize) -> Guide<'a> {
        match *self {
            CorpusGuide::None => Guide::None,
            CorpusGuide::Anchors(sets) => Guide::Anchors(&sets[i]),
            CorpusGuide::Saliency(s) => Guide::Saliency(&s[i]),
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            CorpusGuide::None => None,
            CorpusGuide::Anchors(s) => Some(s.len()),
            CorpusGuide::Saliency(s) => Some(s.len()),
        }
    }
}

/// Plan seed for citation `i` at `step` (splitmix64 finalizer over the mix).
pub fn plan_seed(seed: u64, step: u64, i: usize) -> u64 {
    let mut z = seed
        ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One plan per citation, all drawn with step index `step`.
pub fn build_plans(
    seqs: &[SubwordSequence],
    guide: CorpusGuide<'_>,
    strategy: &MaskingStrategy,
    vocab_size: usize,
    seed: u64,
    step: u64,
) -> Result<Vec<MaskingPlan>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            build_plan(
                i,
                s,
                guide.get(i),
                strategy,
                vocab_size,
                plan_seed(seed, step, i),
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// The input labeler with its encoder replaced by the pre-trained one.
    pub model: LabelerModel,
    pub head: Option<MlmHead>,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Train the labeler's encoder on masked-token prediction over `corpus`.
/// Every step draws fresh plans for its batch. Strategy `None` or zero steps
/// return the model untouched.
pub fn task_guided_pretrain(
    model: LabelerModel,
    corpus: &[SubwordSequence],
    guide: CorpusGuide<'_>,
    strategy: &MaskingStrategy,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if strategy.variant == StrategyKind::None || config.steps == 0 {
        return Ok(PretrainOutcome {
            model,
            head: None,
            losses: Vec::new(),
        });
    }
    strategy.validate()?;
    if corpus.is_empty() {
        return Err(Error::Invalid("empty pre-training corpus".into()));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Invalid(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    match (strategy.variant, guide.len()) {
        (StrategyKind::AnchorPlusRandom | StrategyKind::AttentionProxy, None) => {
            return Err(Error::Contract(format!(
                "strategy `{}` needs per-citation guidance",
                strategy.variant
            )))
        }
        (_, Some(n)) if n != corpus.len() => {
            return Err(Error::Contract(format!(
                "guidance covers {n} of {} citations",
                corpus.len()
            )))
        }
        _ => {}
    }
    let vocab_size = model.meta.vocab_size;
    let mut mlm = MlmModel::new(
        model.encoder.clone(),
        config.tied_head,
        config.seed ^ 0x6D6C_6D,
    )?;
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut losses = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let mut grad = mlm.zeroed();
        let (mut sum, mut n) = (0.0, 0usize);
        for _ in 0..config.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let plan = build_plan(
                i,
                &corpus[i],
                guide.get(i),
                strategy,
                vocab_size,
                plan_seed(config.seed, step as u64, i),
            )?;
            let (s, k) = mlm.loss_sum(&plan, &corpus[i], &mut grad)?;
            sum += s;
            n += k;
        }
        let loss = sum / n as f64;
        grad.scale_all(1.0 / n as f64);
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::DivergedStep { step });
        }
        if let Some(max) = config.clip_norm {
            clip_grad_norm(&mut grad, max);
        }
        adam.step(&mut mlm, &grad);
        if !mlm.all_finite() {
            return Err(Error::DivergedStep { step });
        }
        if step % 100 == 0 {
            log::debug!("pretrain step {step}: loss {loss:.4}");
        }
        losses.push(loss);
    }
    let mut model = model;
    model.encoder = mlm.encoder;
    Ok(PretrainOutcome {
        model,
        head: Some(mlm.head),
        losses,
    })
}

/// Share of masked words (distinct per plan) whose gold label is `label`.
pub fn masked_label_share(
    plans: &[MaskingPlan],
    seqs: &[SubwordSequence],
    label: FieldLabel,
) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for plan in plans {
        let seq = &seqs[plan.citation];
        for w in plan.masked_words(seq) {
            total += 1;
            hit += usize::from(seq.word_labels()[w] == label);
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Whether a plan may select a position holding `id`.
pub fn is_maskable(id: u32) -> bool {
    id != CLS_ID && id != PAD_ID
}
