//! Small numerical helpers shared across modules: deterministic reductions,
//! log-sum-exp and counter-based random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pairwise (tree) summation. The reduction order depends only on the
/// length of the input, so results are reproducible bit-for-bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Element-wise pairwise reduction of equally sized vectors.
pub fn pairwise_sum_vecs(vs: &[Vec<f64>]) -> Vec<f64> {
    match vs.len() {
        0 => Vec::new(),
        1 => vs[0].clone(),
        len => {
            let mid = len / 2;
            let mut left = pairwise_sum_vecs(&vs[..mid]);
            let right = pairwise_sum_vecs(&vs[mid..]);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

/// `log(sum(exp(x)))` with max-shift. Returns `-inf` for empty input or
/// when every entry is `-inf`; never produces NaN for finite or `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let terms: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    max + pairwise_sum(&terms).ln()
}

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Random stream for a given seed and stream id. Streams with distinct ids
/// are independent and can be created in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for the `(step, index)` pair of a training batch.
#[inline]
pub fn batch_stream(step: usize, index: usize) -> u64 {
    ((step as u64) << 24) | (index as u64 & 0xff_ffff)
}
