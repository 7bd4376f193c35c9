//! Linear-chain CRF over the five field labels: Viterbi decoding,
//! log-space forward-backward, and the gradient of the negative
//! log-likelihood with respect to emissions and transition scores.
//!
//! A path `y` scores
//! `start[y0] + Σ_t emit[t][y_t] + Σ_t trans[y_{t-1}][y_t] + stop[y_{n-1}]`.

use crate::nn::log_sum_exp;
use crate::types::NUM_LABELS;

const L: usize = NUM_LABELS;

pub type Row = [f64; L];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transitions {
    /// `trans[from][to]`
    pub trans: [Row; L],
    pub start: Row,
    pub stop: Row,
}

impl Transitions {
    pub fn zeros() -> Self {
        Transitions {
            trans: [[0.0; L]; L],
            start: [0.0; L],
            stop: [0.0; L],
        }
    }
}

pub fn path_score(emissions: &[Row], tr: &Transitions, path: &[usize]) -> f64 {
    debug_assert_eq!(emissions.len(), path.len());
    let Some((&first, _)) = path.split_first() else {
        return 0.0;
    };
    let mut s = tr.start[first] + tr.stop[path[path.len() - 1]];
    for (t, &y) in path.iter().enumerate() {
        s += emissions[t][y];
        if t > 0 {
            s += tr.trans[path[t - 1]][y];
        }
    }
    s
}

/// Highest-scoring label path and its score. Ties go to the lower label index.
pub fn viterbi(emissions: &[Row], tr: &Transitions) -> (Vec<usize>, f64) {
    let n = emissions.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut delta: Row = std::array::from_fn(|y| tr.start[y] + emissions[0][y]);
    let mut back: Vec<[usize; L]> = Vec::with_capacity(n);
    back.push([0; L]);
    for em in &emissions[1..] {
        let mut next = [0.0; L];
        let mut ptr = [0usize; L];
        for y in 0..L {
            let mut best = delta[0] + tr.trans[0][y];
            let mut arg = 0;
            for p in 1..L {
                let s = delta[p] + tr.trans[p][y];
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            next[y] = best + em[y];
            ptr[y] = arg;
        }
        delta = next;
        back.push(ptr);
    }
    let mut last = 0;
    let mut best = delta[0] + tr.stop[0];
    for y in 1..L {
        let s = delta[y] + tr.stop[y];
        if s > best {
            best = s;
            last = y;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    (path, best)
}

#[derive(Debug, Clone)]
pub struct ForwardBackward {
    /// Per-position label marginals; each row sums to one.
    pub marginals: Vec<Row>,
    pub log_partition: f64,
    alpha: Vec<Row>,
    beta: Vec<Row>,
}

pub fn forward_backward(emissions: &[Row], tr: &Transitions) -> ForwardBackward {
    let n = emissions.len();
    let mut alpha = vec![[0.0; L]; n];
    let mut beta = vec![[0.0; L]; n];
    if n == 0 {
        return ForwardBackward {
            marginals: Vec::new(),
            log_partition: 0.0,
            alpha,
            beta,
        };
    }
    alpha[0] = std::array::from_fn(|y| tr.start[y] + emissions[0][y]);
    let mut buf = [0.0; L];
    for t in 1..n {
        for y in 0..L {
            for p in 0..L {
                buf[p] = alpha[t - 1][p] + tr.trans[p][y];
            }
            alpha[t][y] = log_sum_exp(&buf) + emissions[t][y];
        }
    }
    beta[n - 1] = tr.stop;
    for t in (0..n - 1).rev() {
        for y in 0..L {
            for nx in 0..L {
                buf[nx] = tr.trans[y][nx] + emissions[t + 1][nx] + beta[t + 1][nx];
            }
            beta[t][y] = log_sum_exp(&buf);
        }
    }
    let fin: Row = std::array::from_fn(|y| alpha[n - 1][y] + tr.stop[y]);
    let log_partition = log_sum_exp(&fin);
    let marginals = (0..n)
        .map(|t| {
            let mut row: Row =
                std::array::from_fn(|y| (alpha[t][y] + beta[t][y] - log_partition).exp());
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            row
        })
        .collect();
    ForwardBackward {
        marginals,
        log_partition,
        alpha,
        beta,
    }
}

/// Gradient of `log Z − score(gold)` with respect to all CRF inputs.
#[derive(Debug, Clone)]
pub struct CrfGradient {
    pub loss: f64,
    pub d_emissions: Vec<Row>,
    pub d_transitions: Transitions,
}

pub fn nll_gradient(emissions: &[Row], tr: &Transitions, gold: &[usize]) -> CrfGradient {
    let n = emissions.len();
    let fb = forward_backward(emissions, tr);
    let loss = fb.log_partition - path_score(emissions, tr, gold);
    let mut d_emissions = fb.marginals.clone();
    let mut d_tr = Transitions::zeros();
    if n == 0 {
        return CrfGradient {
            loss: 0.0,
            d_emissions,
            d_transitions: d_tr,
        };
    }
    for (t, &y) in gold.iter().enumerate() {
        d_emissions[t][y] -= 1.0;
    }
    d_tr.start = fb.marginals[0];
    d_tr.start[gold[0]] -= 1.0;
    d_tr.stop = fb.marginals[n - 1];
    d_tr.stop[gold[n - 1]] -= 1.0;
    for t in 1..n {
        for p in 0..L {
            for y in 0..L {
                let log_xi = fb.alpha[t - 1][p] + tr.trans[p][y] + emissions[t][y] + fb.beta[t][y]
                    - fb.log_partition;
                d_tr.trans[p][y] += log_xi.exp();
            }
        }
        d_tr.trans[gold[t - 1]][gold[t]] -= 1.0;
    }
    CrfGradient {
        loss,
        d_emissions,
        d_transitions: d_tr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Row>, Transitions) {
        let mut r = || rng.gen_range(-2.0..2.0);
        let em = (0..n).map(|_| std::array::from_fn(|_| r())).collect();
        let tr = Transitions {
            trans: std::array::from_fn(|_| std::array::from_fn(|_| r())),
            start: std::array::from_fn(|_| r()),
            stop: std::array::from_fn(|_| r()),
        };
        (em, tr)
    }

    #[test]
    fn zero_transitions_decouple_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (em, _) = random_problem(&mut rng, 6);
        let (path, _) = viterbi(&em, &Transitions::zeros());
        for (t, &y) in path.iter().enumerate() {
            let best = (0..L)
                .max_by(|&a, &b| em[t][a].total_cmp(&em[t][b]).then(b.cmp(&a)))
                .unwrap();
            assert_eq!(y, best);
        }
    }

    #[test]
    fn single_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (em, tr) = random_problem(&mut rng, 1);
        let scores: Vec<f64> = (0..L)
            .map(|y| em[0][y] + tr.start[y] + tr.stop[y])
            .collect();
        let best = (0..L).fold(0, |b, y| if scores[y] > scores[b] { y } else { b });
        assert_eq!(viterbi(&em, &tr).0, vec![best]);
        let fb = forward_backward(&em, &tr);
        let z = log_sum_exp(&scores);
        for y in 0..L {
            assert!((fb.marginals[0][y] - (scores[y] - z).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_scores() {
        let em = vec![[0.0; L]; 3];
        let fb = forward_backward(&em, &Transitions::zeros());
        assert!((fb.log_partition - 125f64.ln()).abs() < 1e-12);
        for row in &fb.marginals {
            for &m in row {
                assert!((m - 0.2).abs() < 1e-12);
            }
        }
        // All paths tie; lowest index wins everywhere.
        assert_eq!(viterbi(&em, &Transitions::zeros()).0, vec![0, 0, 0]);
    }

    #[test]
    fn gold_probability_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..8 {
            let (em, tr) = random_problem(&mut rng, n);
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..L)).collect();
            let g = nll_gradient(&em, &tr, &gold);
            let p = (-g.loss).exp();
            assert!(p > 0.0 && p <= 1.0);
            let (best, best_score) = viterbi(&em, &tr);
            assert!(best_score >= path_score(&em, &tr, &gold) - 1e-12);
            assert!((path_score(&em, &tr, &best) - best_score).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (em, tr) = random_problem(&mut rng, 4);
        let gold = vec![2, 0, 4, 4];
        let g = nll_gradient(&em, &tr, &gold);
        let eps = 1e-6;
        let loss =
            |tr: &Transitions| forward_backward(&em, tr).log_partition - path_score(&em, tr, &gold);
        for p in 0..L {
            for y in 0..L {
                let mut a = tr;
                a.trans[p][y] += eps;
                let mut b = tr;
                b.trans[p][y] -= eps;
                let fd = (loss(&a) - loss(&b)) / (2.0 * eps);
                assert!((fd - g.d_transitions.trans[p][y]).abs() < 1e-7);
            }
        }
    }
}
