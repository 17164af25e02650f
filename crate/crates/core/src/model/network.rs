//! Forward pass and hand-written backpropagation for the recommender.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::params::ModelParams;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// `m += a ⊗ b`
fn add_outer(m: &mut Array2<f64>, a: &ArrayView1<f64>, b: &ArrayView1<f64>) {
    general_mat_mul(
        1.0,
        &a.view().insert_axis(Axis(1)),
        &b.view().insert_axis(Axis(0)),
        1.0,
        m,
    );
}

struct GruStep {
    token: usize,
    x: Array1<f64>,
    prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    n: Array1<f64>,
    reset_prev: Array1<f64>,
}

/// GRU states over `tokens` (one row per input) plus per-step caches.
struct Encoded {
    states: Array2<f64>,
    steps: Vec<GruStep>,
}

fn encode(params: &ModelParams, tokens: &[usize]) -> Encoded {
    let hidden = params.hidden_dim();
    let mut states = Array2::zeros((tokens.len(), hidden));
    let mut steps = Vec::with_capacity(tokens.len());
    let mut prev = Array1::zeros(hidden);
    for (t, &token) in tokens.iter().enumerate() {
        let x = params.embedding.row(token).to_owned();
        let z = (params.w_z.dot(&x) + params.u_z.dot(&prev) + &params.b_z).mapv(sigmoid);
        let r = (params.w_r.dot(&x) + params.u_r.dot(&prev) + &params.b_r).mapv(sigmoid);
        let reset_prev = &r * &prev;
        let n = (params.w_n.dot(&x) + params.u_n.dot(&reset_prev) + &params.b_n).mapv(f64::tanh);
        let h = (1.0 - &z) * &n + &z * &prev;
        states.row_mut(t).assign(&h);
        steps.push(GruStep {
            token,
            x,
            prev: std::mem::replace(&mut prev, h),
            z,
            r,
            n,
            reset_prev,
        });
    }
    Encoded { states, steps }
}

struct Prediction {
    attn: Array1<f64>,
    query: Array1<f64>,
    features: Array1<f64>,
    probs: Array1<f64>,
}

/// Next-token distribution from the states `0..=t`.
fn predict(params: &ModelParams, states: &Array2<f64>, t: usize) -> Prediction {
    let hidden = params.hidden_dim();
    let seen = states.slice(s![..=t, ..]);
    let last = states.row(t);
    let query = params.attention.dot(&last);
    let attn = softmax(&seen.dot(&query));
    let context = seen.t().dot(&attn);
    let mut features = Array1::zeros(2 * hidden);
    features.slice_mut(s![..hidden]).assign(&context);
    features.slice_mut(s![hidden..]).assign(&last);
    let probs = softmax(&(params.w_out.dot(&features) + &params.b_out));
    Prediction {
        attn,
        query,
        features,
        probs,
    }
}

/// Probability of every vocabulary entry following `prefix`.
pub fn forward(params: &ModelParams, prefix: &[usize]) -> Array1<f64> {
    assert!(!prefix.is_empty(), "prefix must hold at least the request token");
    let enc = encode(params, prefix);
    predict(params, &enc.states, prefix.len() - 1).probs
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SequenceStats {
    /// Summed cross-entropy over all predicted positions.
    pub loss: f64,
    pub predictions: usize,
    pub correct: usize,
}

/// Teacher-forced next-token loss over `tokens`: position `t` predicts
/// `tokens[t + 1]` from `tokens[..=t]`. When `grads` is given, the gradient
/// of the summed loss is added into it.
pub fn sequence_loss(params: &ModelParams, tokens: &[usize], grads: Option<&mut ModelParams>) -> SequenceStats {
    if tokens.len() < 2 {
        return SequenceStats::default();
    }
    let inputs = &tokens[..tokens.len() - 1];
    let enc = encode(params, inputs);
    let hidden = params.hidden_dim();
    let mut stats = SequenceStats::default();
    let mut state_grads = Array2::<f64>::zeros(enc.states.dim());

    let mut grads = grads;
    for t in 0..inputs.len() {
        let target = tokens[t + 1];
        let pred = predict(params, &enc.states, t);
        stats.loss -= pred.probs[target].max(f64::MIN_POSITIVE).ln();
        stats.predictions += 1;
        let best = pred
            .probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        if best == Some(target) {
            stats.correct += 1;
        }

        let Some(g) = grads.as_deref_mut() else { continue };
        let mut d_logits = pred.probs;
        d_logits[target] -= 1.0;
        add_outer(&mut g.w_out, &d_logits.view(), &pred.features.view());
        g.b_out += &d_logits;
        let d_features = params.w_out.t().dot(&d_logits);
        let d_context = d_features.slice(s![..hidden]);
        let d_last = d_features.slice(s![hidden..]);

        let seen = enc.states.slice(s![..=t, ..]);
        // context = seenᵀ attn
        let d_attn = seen.dot(&d_context);
        {
            let mut rows = state_grads.slice_mut(s![..=t, ..]);
            for (j, mut row) in rows.outer_iter_mut().enumerate() {
                row.scaled_add(pred.attn[j], &d_context);
            }
        }
        // attn = softmax(scores)
        let weighted = pred.attn.dot(&d_attn);
        let d_scores = &pred.attn * &(d_attn - weighted);
        // scores = seen · query
        let d_query = seen.t().dot(&d_scores);
        {
            let mut rows = state_grads.slice_mut(s![..=t, ..]);
            for (j, mut row) in rows.outer_iter_mut().enumerate() {
                row.scaled_add(d_scores[j], &pred.query);
            }
        }
        // query = A · last
        let last = enc.states.row(t);
        add_outer(&mut g.attention, &d_query.view(), &last);
        let mut d_state = state_grads.row_mut(t);
        d_state += &params.attention.t().dot(&d_query);
        d_state += &d_last;
    }

    if let Some(g) = grads {
        let mut carry = Array1::<f64>::zeros(hidden);
        for (t, step) in enc.steps.iter().enumerate().rev() {
            let dh = &state_grads.row(t) + &carry;
            let dn = &dh * &(1.0 - &step.z);
            let dz = &dh * &(&step.prev - &step.n);
            let mut d_prev = &dh * &step.z;

            let da_n = &dn * &(1.0 - &step.n * &step.n);
            add_outer(&mut g.w_n, &da_n.view(), &step.x.view());
            add_outer(&mut g.u_n, &da_n.view(), &step.reset_prev.view());
            g.b_n += &da_n;
            let d_reset_prev = params.u_n.t().dot(&da_n);
            let dr = &d_reset_prev * &step.prev;
            d_prev += &(&d_reset_prev * &step.r);
            let mut dx = params.w_n.t().dot(&da_n);

            let da_z = &dz * &(&step.z * &(1.0 - &step.z));
            add_outer(&mut g.w_z, &da_z.view(), &step.x.view());
            add_outer(&mut g.u_z, &da_z.view(), &step.prev.view());
            g.b_z += &da_z;
            d_prev += &params.u_z.t().dot(&da_z);
            dx += &params.w_z.t().dot(&da_z);

            let da_r = &dr * &(&step.r * &(1.0 - &step.r));
            add_outer(&mut g.w_r, &da_r.view(), &step.x.view());
            add_outer(&mut g.u_r, &da_r.view(), &step.prev.view());
            g.b_r += &da_r;
            d_prev += &params.u_r.t().dot(&da_r);
            dx += &params.w_r.t().dot(&da_r);

            let mut e = g.embedding.row_mut(step.token);
            e += &dx;
            carry = d_prev;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = ModelParams::random(7, 4, 5, &mut rng);
            let len = rng.gen_range(1..6);
            let prefix: Vec<usize> = (0..len).map(|_| rng.gen_range(0..7)).collect();
            let probs = forward(&p, &prefix);
            assert!((probs.sum() - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn untrained_model_is_near_uniform() {
        let vocab = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut max_sum = 0.0;
        for _ in 0..100 {
            let p = ModelParams::random(vocab, 18, 36, &mut rng);
            let probs = forward(&p, &[1, 2, 3]);
            max_sum += probs.fold(0.0f64, |m, &v| m.max(v));
        }
        let mean_max = max_sum / 100.0;
        let uniform = 1.0 / vocab as f64;
        assert!(
            mean_max >= uniform && mean_max < 1.5 * uniform,
            "mean max prob {mean_max}"
        );
    }

    #[test]
    fn forward_matches_training_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = ModelParams::random(6, 3, 4, &mut rng);
        let tokens = [1, 3, 4, 0];
        let stats = sequence_loss(&p, &tokens, None);
        let manual: f64 = (1..tokens.len())
            .map(|t| -forward(&p, &tokens[..t])[tokens[t]].ln())
            .sum();
        assert!((stats.loss - manual).abs() < 1e-10);
        assert_eq!(stats.predictions, 3);
    }
}
