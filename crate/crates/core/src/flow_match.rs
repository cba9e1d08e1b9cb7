//! Conditional probability paths on the assignment manifold and the
//! simulation-free flow-matching training loop.
//!
//! The path towards a configuration `β` is the pushforward of the Gaussian
//! `N(tλV_β, Π0)` under the barycentric lifting map. Its generating field is
//! `R_W[λV_β]`, so a payoff network regressed onto `λV_β` under the
//! Fisher–Rao norm learns the marginal field.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_in_place, lift_barycenter, replicator_rows, Assignment, NodeMatrix, TangentField};
use crate::meta_simplex::LabelConfig;
use crate::numeric::{batch_stream, stream_rng};
use crate::payoff::{Adam, PayoffModel, TrainExample};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowMatchConfig {
    /// Speed `λ` of the conditional paths.
    pub lambda_rate: f64,
    /// Rate of the exponential distribution of training times.
    pub time_dist_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of `learning_rate`, reached by
    /// cosine decay over `steps`. `1.0` keeps the rate constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// Record the batch loss every `log_every` steps (and at the last step).
    pub log_every: usize,
}

impl Default for FlowMatchConfig {
    fn default() -> Self {
        Self {
            lambda_rate: 1.0,
            time_dist_rate: 0.5,
            batch_size: 64,
            steps: 2000,
            learning_rate: 3e-3,
            final_lr_fraction: 1.0,
            seed: 0,
            log_every: 50,
        }
    }
}

impl FlowMatchConfig {
    /// Learning rate used at `step`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rate > 0.0 && self.lambda_rate.is_finite()) {
            return Err(Error::Config("lambda_rate must be positive".into()));
        }
        if !(self.time_dist_rate > 0.0 && self.time_dist_rate.is_finite()) {
            return Err(Error::Config("time_dist_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// `V_β = Π0 W̄_β`: row `i` is `e_{β_i} − 1/c`.
pub fn target_direction(beta: &LabelConfig, c: usize) -> TangentField {
    let mut m = beta.to_extreme(c);
    for i in 0..beta.n() {
        center_in_place(m.row_mut(i));
    }
    TangentField::from_matrix(m)
}

/// Draw `g ∼ N(0, Π0)` in the chart.
pub fn sample_reference_chart<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> TangentField {
    let mut m = NodeMatrix::zeros(n, c);
    for x in m.as_mut_slice() {
        *x = rng.sample(StandardNormal);
    }
    for i in 0..n {
        center_in_place(m.row_mut(i));
    }
    TangentField::from_matrix(m)
}

/// Draw from the reference distribution `p0 = (exp_1)_♯ N(0, Π0)`.
pub fn sample_reference<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Assignment {
    lift_barycenter(&sample_reference_chart(n, c, rng))
}

/// The conditional flow `ψ_t(g) = lift(1_W, g + tλV_β)`.
pub fn conditional_flow(g: &TangentField, v_beta: &TangentField, t: f64, lambda: f64) -> Assignment {
    lift_barycenter(&g.add_scaled(v_beta, t * lambda))
}

/// A draw from `p_t(·|β)` together with the data that produced it.
#[derive(Debug, Clone)]
pub struct ConditionalSample {
    pub beta: LabelConfig,
    pub t: f64,
    pub g: TangentField,
    pub v_beta: TangentField,
    pub w: Assignment,
}

pub fn sample_conditional<R: Rng + ?Sized>(
    beta: &LabelConfig,
    c: usize,
    t: f64,
    lambda: f64,
    rng: &mut R,
) -> Result<ConditionalSample> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("conditional path time must be finite and ≥ 0, got {t}")));
    }
    let g = sample_reference_chart(beta.n(), c, rng);
    let v_beta = target_direction(beta, c);
    let w = conditional_flow(&g, &v_beta, t, lambda);
    Ok(ConditionalSample { beta: beta.clone(), t, g, v_beta, w })
}

/// The conditional vector field `u_t(W|β) = R_W[λV_β]`.
pub fn conditional_field(w: &Assignment, beta: &LabelConfig, lambda: f64) -> TangentField {
    replicator_rows(w, target_direction(beta, w.c()).matrix()).scaled(lambda)
}

/// One entry of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub wall_ms: u128,
    pub loss: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: PayoffModel,
    pub optimizer: Adam,
    pub trace: Vec<LossRecord>,
}

/// Builds the training batch for a given step. Each example has its own
/// random stream so batches are reproducible in isolation.
pub fn training_batch(config: &FlowMatchConfig, data: &[LabelConfig], c: usize, step: usize) -> Result<Vec<TrainExample>> {
    let exp = Exp::new(config.time_dist_rate).map_err(|e| Error::Config(e.to_string()))?;
    (0..config.batch_size)
        .map(|b| {
            let mut rng = stream_rng(config.seed, batch_stream(step, b));
            let beta = &data[rng.random_range(0..data.len())];
            let t = exp.sample(&mut rng);
            let s = sample_conditional(beta, c, t, config.lambda_rate, &mut rng)?;
            Ok(TrainExample { w: s.w, t, target: s.v_beta.scaled(config.lambda_rate) })
        })
        .collect()
}

/// Trains `model` on `data`. Never integrates the flow.
pub fn train(config: &FlowMatchConfig, data: &[LabelConfig], model: PayoffModel) -> Result<TrainOutput> {
    let adam = Adam::new(model.num_params(), config.learning_rate);
    train_resume(config, data, model, adam)
}

/// Continues training from an optimizer state; steps already taken by the
/// optimizer are skipped, so a resumed run replays the uninterrupted one.
pub fn train_resume(
    config: &FlowMatchConfig,
    data: &[LabelConfig],
    mut model: PayoffModel,
    mut optimizer: Adam,
) -> Result<TrainOutput> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let (n, c) = (model.arch().n, model.arch().c);
    if let Some(bad) = data.iter().find(|b| b.n() != n || b.labels().iter().any(|&l| l >= c)) {
        return Err(Error::Shape(format!("configuration {bad} does not fit n={n}, c={c}")));
    }
    let start = Instant::now();
    let mut trace = Vec::new();
    let first = optimizer.steps_taken() as usize;
    for step in first..config.steps {
        let batch = training_batch(config, data, c, step)?;
        let (loss, grad) = model.loss_and_grad(&batch).map_err(|e| match e {
            Error::NonFiniteLoss { .. } | Error::NonFiniteLayer { .. } => Error::Diverged { step },
            other => other,
        })?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        optimizer.lr = config.learning_rate_at(step);
        optimizer.step(model.params_mut(), &grad);
        if step % config.log_every == 0 || step + 1 == config.steps {
            trace.push(LossRecord { step, wall_ms: start.elapsed().as_millis(), loss });
        }
    }
    Ok(TrainOutput { model, optimizer, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::lift_inverse_barycenter;
    use crate::payoff::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beta(labels: &[usize], c: usize) -> LabelConfig {
        LabelConfig::from_one_based(labels, c).unwrap()
    }

    #[test]
    fn target_direction_examples() {
        let v = target_direction(&beta(&[1], 2), 2);
        assert_eq!(v.row(0), &[0.5, -0.5]);
        let v = target_direction(&beta(&[3, 1], 4), 4);
        assert_eq!(v.row(0), &[-0.25, -0.25, 0.75, -0.25]);
        assert!(v.rows().all(|r| r.iter().sum::<f64>().abs() < 1e-15));
    }

    #[test]
    fn reference_chart_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, c, k) = (1, 3, 100_000);
        let mut mean = [0.0; 3];
        let mut cov = [[0.0; 3]; 3];
        for _ in 0..k {
            let w = sample_reference(n, c, &mut rng);
            assert!(w.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
            let x = lift_inverse_barycenter(&w);
            let x = x.row(0);
            for a in 0..3 {
                mean[a] += x[a] / k as f64;
                for b in 0..3 {
                    cov[a][b] += x[a] * x[b] / k as f64;
                }
            }
        }
        // π0 has diagonal 2/3 and off-diagonal -1/3; 4σ MC bounds
        let se_mean = (2.0f64 / 3.0 / k as f64).sqrt();
        for m in mean {
            assert!(m.abs() < 4.0 * se_mean);
        }
        let se_cov = (2.0f64 / k as f64).sqrt();
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 2.0 / 3.0 } else { -1.0 / 3.0 };
                assert!((cov[a][b] - expect).abs() < 4.0 * se_cov);
            }
        }
    }

    #[test]
    fn conditional_at_time_zero_is_reference() {
        let b = beta(&[2, 1], 3);
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let s = sample_conditional(&b, 3, 0.0, 1.0, &mut r1).unwrap();
        assert_eq!(s.w, sample_reference(2, 3, &mut r2));
        assert!(sample_conditional(&b, 3, -1.0, 1.0, &mut r1).is_err());
    }

    #[test]
    fn conditional_converges_to_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = beta(&[2, 1, 2], 2);
        for _ in 0..100 {
            let g = sample_reference_chart(3, 2, &mut rng);
            if g.as_slice().iter().any(|x| x.abs() > 4.0) {
                continue;
            }
            let w = conditional_flow(&g, &target_direction(&b, 2), 50.0, 1.0);
            let e = b.to_extreme(2);
            let dev = w.as_slice().iter().zip(e.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-8, "{dev}");
        }
    }

    #[test]
    fn conditional_chart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = beta(&[1, 2], 2);
        let k = 20_000;
        let mut mean = [0.0; 4];
        for _ in 0..k {
            let s = sample_conditional(&b, 2, 2.0, 0.5, &mut rng).unwrap();
            let x = lift_inverse_barycenter(&s.w);
            for (m, v) in mean.iter_mut().zip(x.as_slice()) {
                *m += v / k as f64;
            }
        }
        let expect = target_direction(&b, 2);
        let se = (0.5f64 / k as f64).sqrt();
        for (m, e) in mean.iter().zip(expect.as_slice()) {
            assert!((m - e).abs() < 4.0 * se);
        }
    }

    #[test]
    fn conditional_field_examples() {
        let b = beta(&[1], 2);
        let u = conditional_field(&Assignment::barycenter(1, 2), &b, 1.0);
        assert!((u.row(0)[0] - 0.25).abs() < 1e-15 && (u.row(0)[1] + 0.25).abs() < 1e-15);
        let near = Assignment::new(1, 2, vec![1.0 - 1e-12, 1e-12]).unwrap();
        assert!(conditional_field(&near, &b, 1.0).as_slice().iter().all(|x| x.abs() < 1e-11));
    }

    #[test]
    fn flow_is_generated_by_conditional_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..100 {
            let c = rng.random_range(2..5);
            let n = rng.random_range(1..4);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=c)).collect();
            let b = beta(&labels, c);
            let lambda = rng.random_range(0.25..2.0);
            let t = rng.random_range(0.0..5.0);
            let g = sample_reference_chart(n, c, &mut rng);
            let v = target_direction(&b, c);
            let wp = conditional_flow(&g, &v, t + h, lambda);
            let wm = conditional_flow(&g, &v, t - h, lambda);
            let w = conditional_flow(&g, &v, t, lambda);
            let u = conditional_field(&w, &b, lambda);
            for k in 0..n * c {
                let fd = (wp.as_slice()[k] - wm.as_slice()[k]) / (2.0 * h);
                assert!((fd - u.as_slice()[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mass_concentrates_monotonically() {
        // common random numbers: argmax membership is monotone in t per draw
        for &c in &[2usize, 16] {
            for &lambda in &[0.25, 1.0] {
                let b = beta(&[1, c], c);
                let mut rng = ChaCha8Rng::seed_from_u64(6);
                let gs: Vec<TangentField> = (0..10_000).map(|_| sample_reference_chart(2, c, &mut rng)).collect();
                let v = target_direction(&b, c);
                let mut last = 0.0;
                for &t in &[0.0, 1.0, 2.0, 4.0, 8.0] {
                    let hits = gs
                        .iter()
                        .filter(|g| {
                            let w = conditional_flow(g, &v, t, lambda);
                            (0..2).all(|i| {
                                let row = w.row(i);
                                let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                                row.iter().position(|&p| p == top) == Some(b.labels()[i])
                            })
                        })
                        .count() as f64
                        / gs.len() as f64;
                    assert!(hits >= last);
                    last = hits;
                }
            }
        }
    }

    #[test]
    fn oracle_payoff_has_zero_loss() {
        // single-β data: the constant payoff λV_β is optimal with loss 0
        let cfg = FlowMatchConfig { batch_size: 16, ..Default::default() };
        let b = beta(&[2, 1], 3);
        let batch = training_batch(&cfg, std::slice::from_ref(&b), 3, 0).unwrap();
        let v = target_direction(&b, 3).scaled(cfg.lambda_rate);
        for ex in &batch {
            let (l, _) = crate::payoff::residual_loss(&ex.w, ex.target.matrix(), v.matrix());
            assert_eq!(l, 0.0);
        }
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = PayoffModel::init(Architecture::new(2, 2, 4), &mut rng).unwrap();
        let cfg = FlowMatchConfig { steps: 0, ..Default::default() };
        let out = train(&cfg, &[beta(&[1, 1], 2)], model.clone()).unwrap();
        assert_eq!(out.model, model);
        assert!(out.trace.is_empty());
        assert!(train(&cfg, &[], model).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = PayoffModel::init(Architecture::new(2, 2, 8), &mut rng).unwrap();
        let data = vec![beta(&[1, 1], 2), beta(&[2, 2], 2)];
        let cfg = FlowMatchConfig { steps: 200, batch_size: 32, log_every: 10, ..Default::default() };
        let a = train(&cfg, &data, model.clone()).unwrap();
        let b = train(&cfg, &data, model.clone()).unwrap();
        assert_eq!(a.model, b.model);
        let first: f64 = a.trace[..3].iter().map(|r| r.loss).sum();
        let last: f64 = a.trace[a.trace.len() - 3..].iter().map(|r| r.loss).sum();
        assert!(last < first);

        // interrupted run resumes onto the same trajectory
        let half = FlowMatchConfig { steps: 120, ..cfg.clone() };
        let h = train(&half, &data, model).unwrap();
        let resumed = train_resume(&cfg, &data, h.model, h.optimizer).unwrap();
        assert_eq!(resumed.model, a.model);
    }
}
