//! Score and tag heads, the multi-task loss and its gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::Encoded;
use crate::corpus::Tag;
use crate::error::{QeError, Result};
use crate::rng::QeRng;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    None,
}

impl std::str::FromStr for Activation {
    type Err = QeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "none" => Ok(Activation::None),
            other => Err(QeError::InvalidValue(format!("unknown activation {other:?}"))),
        }
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::None => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::None => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Trainable weights. Tag-head row 0 scores OK, row 1 scores BAD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub w_s: Vec<f64>,
    pub b_s: f64,
    pub w_t: [Vec<f64>; 2],
    pub b_t: [f64; 2],
}

impl Heads {
    pub fn zeros(dim: usize) -> Self {
        Heads { w_s: vec![0.0; dim], b_s: 0.0, w_t: [vec![0.0; dim], vec![0.0; dim]], b_t: [0.0; 2] }
    }

    pub fn dim(&self) -> usize {
        self.w_s.len()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Heads) {
        for (a, b) in self.w_s.iter_mut().zip(&other.w_s) {
            *a += scale * b;
        }
        self.b_s += scale * other.b_s;
        for c in 0..2 {
            for (a, b) in self.w_t[c].iter_mut().zip(&other.w_t[c]) {
                *a += scale * b;
            }
            self.b_t[c] += scale * other.b_t[c];
        }
    }

    /// Parameter groups in a fixed order: `w_s`, `b_s`, `w_t`, `b_t`.
    pub fn groups(&self) -> [Vec<f64>; 4] {
        [self.w_s.clone(), vec![self.b_s], self.w_t.concat(), self.b_t.to_vec()]
    }

    pub fn set(&mut self, group: usize, idx: usize, value: f64) {
        let d = self.dim();
        match group {
            0 => self.w_s[idx] = value,
            1 => self.b_s = value,
            2 => self.w_t[idx / d][idx % d] = value,
            3 => self.b_t[idx] = value,
            _ => panic!("no parameter group {group}"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub heads: Heads,
    pub sigma: Activation,
    pub dropout: f64,
}

impl ModelParams {
    pub fn new(dim: usize, sigma: Activation, dropout: f64) -> Result<Self> {
        let p = ModelParams { heads: Heads::zeros(dim), sigma, dropout };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(QeError::InvalidValue(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !self.heads.is_finite() {
            return Err(QeError::InvalidValue("non-finite parameters".into()));
        }
        let d = self.heads.dim();
        if self.heads.w_t.iter().any(|w| w.len() != d) {
            return Err(QeError::InvalidValue("tag head width differs from score head".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tag_probs(heads: &Heads, h: &[f64]) -> [f64; 2] {
    let l0 = dot(&heads.w_t[0], h) + heads.b_t[0];
    let l1 = dot(&heads.w_t[1], h) + heads.b_t[1];
    let p_ok = sigmoid(l0 - l1);
    [p_ok, 1.0 - p_ok]
}

/// Inference pass: sentence score and per-token OK probabilities.
pub fn forward(h: &Encoded, params: &ModelParams) -> (f64, Vec<f64>) {
    let heads = &params.heads;
    let z = dot(&heads.w_s, &h.mean_row()) + heads.b_s;
    let probs = h.rows().map(|row| tag_probs(heads, row)[0]).collect();
    (params.sigma.apply(z), probs)
}

pub fn loss_rank(pred_i: f64, pred_j: f64, gold_i: f64, gold_j: f64, margin: f64) -> f64 {
    let r = if gold_i > gold_j { 1.0 } else { -1.0 };
    (margin - r * (pred_i - pred_j)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1000.0, margin: 0.03 }
    }
}

pub struct LossItem<'a> {
    pub h: &'a Encoded,
    pub tags: &'a [Tag],
    /// Gold sentence score, already normalized if the head expects it.
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub mse: f64,
    pub rank: f64,
}

fn dropped(v: &[f64], rate: f64, rng: &mut QeRng) -> Vec<f64> {
    let keep = 1.0 - rate;
    v.iter().map(|x| if rng.gen::<f64>() < rate { 0.0 } else { x / keep }).collect()
}

/// Batch loss and its gradient with respect to the heads.
///
/// Dropout is applied to head inputs only when `dropout_rng` is given.
pub fn loss_qe(
    params: &ModelParams,
    batch: &[LossItem<'_>],
    weights: &LossWeights,
    mut dropout_rng: Option<&mut QeRng>,
) -> Result<(LossBreakdown, Heads)> {
    if batch.is_empty() {
        return Err(QeError::EmptyInput("empty batch"));
    }
    let heads = &params.heads;
    let bsz = batch.len() as f64;
    let rate = params.dropout;
    let mut grad = Heads::zeros(heads.dim());
    let mut ce = 0.0;
    let mut inputs = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    let mut preds = Vec::with_capacity(batch.len());

    for item in batch {
        if item.tags.len() != item.h.len() {
            return Err(QeError::Misaligned(format!("{} tags for {} tokens", item.tags.len(), item.h.len())));
        }
        let mut x = item.h.mean_row();
        if let (Some(rng), true) = (dropout_rng.as_deref_mut(), rate > 0.0) {
            x = dropped(&x, rate, rng);
        }
        let z = dot(&heads.w_s, &x) + heads.b_s;
        preds.push(params.sigma.apply(z));
        logits.push(z);
        inputs.push(x);

        for (row, tag) in item.h.rows().zip(item.tags) {
            let row = match (dropout_rng.as_deref_mut(), rate > 0.0) {
                (Some(rng), true) => dropped(row, rate, rng),
                _ => row.to_vec(),
            };
            let p = tag_probs(heads, &row);
            let gold = tag.is_bad() as usize;
            ce -= p[gold].max(PROB_FLOOR).ln();
            if p[gold] < PROB_FLOOR {
                continue;
            }
            for c in 0..2 {
                let g = (p[c] - (c == gold) as u8 as f64) / bsz;
                for (w, hv) in grad.w_t[c].iter_mut().zip(&row) {
                    *w += g * hv;
                }
                grad.b_t[c] += g;
            }
        }
    }
    ce /= bsz;

    let mut d_pred = vec![0.0; batch.len()];
    let mut mse = 0.0;
    for (s, item) in batch.iter().enumerate() {
        let diff = preds[s] - item.target;
        mse += diff * diff / bsz;
        d_pred[s] += weights.alpha * 2.0 * diff / bsz;
    }

    let pairs = batch
        .iter()
        .enumerate()
        .flat_map(|(i, a)| batch.iter().enumerate().map(move |(j, b)| (i, j, a.target, b.target)))
        .filter(|&(i, j, mi, mj)| i != j && mi != mj)
        .collect::<Vec<_>>();
    let mut rank = 0.0;
    if !pairs.is_empty() {
        let np = pairs.len() as f64;
        for (i, j, mi, mj) in pairs {
            let v = loss_rank(preds[i], preds[j], mi, mj, weights.margin);
            if v > 0.0 {
                rank += v / np;
                let r = if mi > mj { 1.0 } else { -1.0 };
                d_pred[i] -= weights.beta * r / np;
                d_pred[j] += weights.beta * r / np;
            }
        }
    }

    for s in 0..batch.len() {
        let dz = d_pred[s] * params.sigma.derivative(logits[s]);
        for (w, x) in grad.w_s.iter_mut().zip(&inputs[s]) {
            *w += dz * x;
        }
        grad.b_s += dz;
    }

    let total = ce + weights.alpha * mse + weights.beta * rank;
    if !total.is_finite() || !grad.is_finite() {
        return Err(QeError::Divergence(format!("non-finite loss (ce {ce}, mse {mse}, rank {rank})")));
    }
    Ok((LossBreakdown { total, ce, mse, rank }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random_encoded(rng: &mut QeRng, n: usize, d: usize) -> Encoded {
        Encoded { dim: d, data: (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    fn random_params(rng: &mut QeRng, d: usize, sigma: Activation) -> ModelParams {
        let mut p = ModelParams::new(d, sigma, 0.0).unwrap();
        let mut v = || rng.gen_range(-0.5..0.5);
        p.heads.w_s.iter_mut().for_each(|w| *w = v());
        p.heads.b_s = v();
        for c in 0..2 {
            p.heads.w_t[c].iter_mut().for_each(|w| *w = v());
            p.heads.b_t[c] = v();
        }
        p
    }

    #[test]
    fn rank_examples() {
        assert_eq!(loss_rank(0.8, 0.2, 1.0, 0.0, 0.03), 0.0);
        assert_eq!(loss_rank(0.5, 0.5, 1.0, 0.0, 0.03), 0.03);
        assert!((loss_rank(0.2, 0.8, 1.0, 0.0, 0.03) - 0.63).abs() < 1e-15);
    }

    #[test]
    fn zero_heads_are_neutral() {
        let mut rng = seeded(3);
        let h = random_encoded(&mut rng, 4, 6);
        let p = ModelParams::new(6, Activation::Sigmoid, 0.0).unwrap();
        let (m, probs) = forward(&h, &p);
        assert_eq!(m, 0.5);
        assert!(probs.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn activation_definitions() {
        let mut rng = seeded(4);
        let h = random_encoded(&mut rng, 3, 5);
        let mut p = random_params(&mut rng, 5, Activation::None);
        let (z, _) = forward(&h, &p);
        p.sigma = Activation::Sigmoid;
        let (m, _) = forward(&h, &p);
        assert!((m - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }

    #[test]
    fn single_item_has_no_rank_term() {
        let mut rng = seeded(5);
        let h = random_encoded(&mut rng, 3, 4);
        let p = random_params(&mut rng, 4, Activation::Sigmoid);
        let tags = [Tag::Ok, Tag::Bad, Tag::Ok];
        let w = LossWeights::default();
        let (l, _) = loss_qe(&p, &[LossItem { h: &h, tags: &tags, target: 0.3 }], &w, None).unwrap();
        assert_eq!(l.rank, 0.0);
        assert!((l.total - (l.ce + l.mse)).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_near_zero() {
        let h = Encoded { dim: 2, data: vec![1.0, 0.0, 0.0, 1.0] };
        let mut p = ModelParams::new(2, Activation::None, 0.0).unwrap();
        p.heads.w_t = [vec![100.0, -100.0], vec![-100.0, 100.0]];
        p.heads.b_s = 0.4;
        let tags = [Tag::Ok, Tag::Bad];
        let (l, _) =
            loss_qe(&p, &[LossItem { h: &h, tags: &tags, target: 0.4 }], &LossWeights::default(), None).unwrap();
        assert!(l.total < 1e-12, "{l:?}");
    }

    #[test]
    fn only_ce_without_weights() {
        let mut rng = seeded(6);
        let hs: Vec<Encoded> = (0..3).map(|_| random_encoded(&mut rng, 4, 3)).collect();
        let p = random_params(&mut rng, 3, Activation::Sigmoid);
        let tags = [Tag::Ok, Tag::Bad, Tag::Bad, Tag::Ok];
        let batch: Vec<LossItem> =
            hs.iter().enumerate().map(|(i, h)| LossItem { h, tags: &tags, target: i as f64 / 3.0 }).collect();
        let w = LossWeights { alpha: 0.0, beta: 0.0, margin: 0.03 };
        let (l, _) = loss_qe(&p, &batch, &w, None).unwrap();
        assert_eq!(l.total, l.ce);
    }

    #[test]
    fn zero_dropout_matches_inference() {
        let mut rng = seeded(7);
        let h = random_encoded(&mut rng, 3, 4);
        let p = random_params(&mut rng, 4, Activation::Sigmoid);
        let tags = [Tag::Ok, Tag::Bad, Tag::Ok];
        let batch = [LossItem { h: &h, tags: &tags, target: 0.2 }];
        let w = LossWeights::default();
        let mut drng = seeded(1);
        let a = loss_qe(&p, &batch, &w, Some(&mut drng)).unwrap();
        let b = loss_qe(&p, &batch, &w, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sigmoid_preserves_order() {
        let mut rng = seeded(8);
        let hs: Vec<Encoded> = (0..6).map(|_| random_encoded(&mut rng, 3, 4)).collect();
        let mut p = random_params(&mut rng, 4, Activation::None);
        let raw: Vec<f64> = hs.iter().map(|h| forward(h, &p).0).collect();
        p.sigma = Activation::Sigmoid;
        let squashed: Vec<f64> = hs.iter().map(|h| forward(h, &p).0).collect();
        for i in 0..6 {
            for j in 0..6 {
                let a = (raw[i] - raw[j]).partial_cmp(&0.0);
                let b = (squashed[i] - squashed[j]).partial_cmp(&0.0);
                assert_eq!(a, b);
            }
        }
    }

    /// Norm-wise relative error between analytic and central-difference gradients.
    fn gradient_check(sigma: Activation, seed: u64) -> f64 {
        let mut rng = seeded(seed);
        let d = 5;
        let bsz = rng.gen_range(1..5);
        let hs: Vec<Encoded> = (0..bsz)
            .map(|_| {
                let n = rng.gen_range(1..5);
                random_encoded(&mut rng, n, d)
            })
            .collect();
        let tags: Vec<Vec<Tag>> = hs
            .iter()
            .map(|h| (0..h.len()).map(|_| if rng.gen_bool(0.4) { Tag::Bad } else { Tag::Ok }).collect())
            .collect();
        let targets: Vec<f64> = (0..bsz).map(|_| rng.gen_range(0.0..1.0)).collect();
        let batch: Vec<LossItem> =
            (0..bsz).map(|i| LossItem { h: &hs[i], tags: &tags[i], target: targets[i] }).collect();
        let params = random_params(&mut rng, d, sigma);
        let w = LossWeights::default();
        let (_, grad) = loss_qe(&params, &batch, &w, None).unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for (g, analytic) in grad.groups().iter().enumerate() {
            let base = params.heads.groups()[g].clone();
            let mut numeric = Vec::new();
            for k in 0..base.len() {
                let mut plus = params.clone();
                plus.heads.set(g, k, base[k] + step);
                let mut minus = params.clone();
                minus.heads.set(g, k, base[k] - step);
                let lp = loss_qe(&plus, &batch, &w, None).unwrap().0.total;
                let lm = loss_qe(&minus, &batch, &w, None).unwrap().0.total;
                numeric.push((lp - lm) / (2.0 * step));
            }
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale: f64 =
                analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
            if scale > 0.0 {
                worst = worst.max(diff / scale);
            }
        }
        worst
    }

    #[test]
    fn analytic_gradients_match_differences() {
        for sigma in [Activation::Sigmoid, Activation::None] {
            for seed in 0..20 {
                let err = gradient_check(sigma, seed);
                assert!(err < 1e-4, "{sigma:?} seed {seed}: {err}");
            }
        }
    }
}
