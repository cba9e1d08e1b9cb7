//! Histogram metrics against known targets and the class-scaling sweep.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow_match::train;
use crate::geometry::NodeMatrix;
use crate::integrate::sample;
use crate::meta_simplex::{DenseJoint, LabelConfig};
use crate::numeric::{pairwise_sum, stream_rng};
use crate::payoff::PayoffModel;

use super::config::RunConfig;

/// A target distribution that can score single configurations.
pub trait Target {
    fn n(&self) -> usize;
    fn c(&self) -> usize;
    fn log_prob(&self, beta: &LabelConfig) -> f64;
    /// `KL(U, p)` for the uniform model `U`.
    fn uniform_kl(&self) -> f64;
}

impl Target for DenseJoint {
    fn n(&self) -> usize {
        DenseJoint::n(self)
    }
    fn c(&self) -> usize {
        DenseJoint::c(self)
    }
    fn log_prob(&self, beta: &LabelConfig) -> f64 {
        self.prob(beta).ln()
    }
    fn uniform_kl(&self) -> f64 {
        let len = self.probs().len() as f64;
        let terms: Vec<f64> = self.probs().iter().map(|&p| -(len * p).ln() / len).collect();
        pairwise_sum(&terms)
    }
}

/// Product of per-node marginals, usable where `c^n` is too large to store.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizingTarget {
    pub marginals: NodeMatrix,
}

impl FactorizingTarget {
    /// Per-node marginals drawn from a symmetric Dirichlet via normalized
    /// Gamma variates.
    pub fn dirichlet<R: Rng + ?Sized>(n: usize, c: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
        let mut m = NodeMatrix::zeros(n, c);
        for i in 0..n {
            let row = m.row_mut(i);
            loop {
                for v in row.iter_mut() {
                    *v = gamma.sample(rng);
                }
                let s: f64 = row.iter().sum();
                if s > 0.0 && row.iter().all(|&v| v > 0.0) {
                    row.iter_mut().for_each(|v| *v /= s);
                    break;
                }
            }
        }
        Ok(Self { marginals: m })
    }

    /// Independent draws from the target.
    pub fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<LabelConfig> {
        let (n, c) = (self.marginals.n(), self.marginals.c());
        (0..count)
            .map(|_| {
                let labels = (0..n)
                    .map(|i| {
                        let row = self.marginals.row(i);
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        row.iter().position(|&p| {
                            acc += p;
                            u < acc
                        })
                        .unwrap_or(c - 1)
                    })
                    .collect();
                LabelConfig::new(labels, c).expect("label in range")
            })
            .collect()
    }
}

impl Target for FactorizingTarget {
    fn n(&self) -> usize {
        self.marginals.n()
    }
    fn c(&self) -> usize {
        self.marginals.c()
    }
    fn log_prob(&self, beta: &LabelConfig) -> f64 {
        beta.labels().iter().enumerate().map(|(i, &b)| self.marginals.row(i)[b].ln()).sum()
    }
    fn uniform_kl(&self) -> f64 {
        let c = self.marginals.c() as f64;
        let mut acc = 0.0;
        for row in self.marginals.rows() {
            acc += -c.ln() - row.iter().map(|p| p.ln()).sum::<f64>() / c;
        }
        acc
    }
}

/// The two-variable toy target with probabilities 0.45, 0.05, 0.05, 0.45:
/// a strongly correlated pair that no factorizing distribution can match.
pub fn toy_target() -> DenseJoint {
    DenseJoint::new(2, 2, vec![0.45, 0.05, 0.05, 0.45]).expect("valid joint")
}

/// Draws `count` configurations from a dense joint by inversion.
pub fn draw_from_joint<R: Rng + ?Sized>(p: &DenseJoint, count: usize, rng: &mut R) -> Vec<LabelConfig> {
    let mut cdf = Vec::with_capacity(p.probs().len());
    let mut acc = 0.0;
    for &q in p.probs() {
        acc += q;
        cdf.push(acc);
    }
    let last = p.probs().iter().rposition(|&q| q > 0.0).unwrap_or(0);
    (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let idx = cdf.partition_point(|&v| v <= u).min(last);
            LabelConfig::from_dense_index(idx, p.n(), p.c())
        })
        .collect()
}

/// Histogram of `samples` compared against a target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReport {
    pub n: usize,
    pub c: usize,
    pub num_samples: usize,
    /// `KL(p̂, p)` of the sample histogram `p̂` to the target `p` (nats).
    pub kl: f64,
    /// Total variation distance `½ Σ |p̂ − p|`.
    pub tv: f64,
    /// Expected plug-in bias `(N − 1) / (2K)` of `KL(p̂, p)` when the samples
    /// come from `p` itself.
    pub noise_floor: f64,
    /// `KL(U, p)` of the uniform model.
    pub uniform_kl: f64,
    /// Distinct configurations observed.
    pub support: usize,
}

/// Evaluates the histogram of `samples` against `target` on the observed
/// support, so `c^n` need not be enumerable.
pub fn histogram_report<T: Target>(target: &T, samples: &[LabelConfig]) -> Result<KlReport> {
    let (n, c) = (target.n(), target.c());
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if let Some(bad) = samples.iter().find(|b| b.n() != n || b.labels().iter().any(|&l| l >= c)) {
        return Err(Error::Shape(format!("sample {bad} does not fit target n={n}, c={c}")));
    }
    let mut counts: BTreeMap<&LabelConfig, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s).or_default() += 1;
    }
    let k = samples.len() as f64;
    let mut kl_terms = Vec::with_capacity(counts.len());
    let mut tv_terms = Vec::with_capacity(counts.len());
    let mut covered = Vec::with_capacity(counts.len());
    for (beta, &m) in &counts {
        let ph = m as f64 / k;
        let lp = target.log_prob(beta);
        kl_terms.push(ph * (ph.ln() - lp));
        let p = lp.exp();
        tv_terms.push((ph - p).abs());
        covered.push(p);
    }
    let unseen = (1.0 - pairwise_sum(&covered)).max(0.0);
    let big_n = (c as f64).powi(n as i32);
    Ok(KlReport {
        n,
        c,
        num_samples: samples.len(),
        kl: pairwise_sum(&kl_terms),
        tv: 0.5 * (pairwise_sum(&tv_terms) + unseen),
        noise_floor: (big_n - 1.0) / (2.0 * k),
        uniform_kl: target.uniform_kl(),
        support: counts.len(),
    })
}

/// One row of the class-scaling table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScalingRow {
    pub c: usize,
    pub num_samples: usize,
    /// `None` when a stage failed; see `status`.
    pub report: Option<KlReport>,
    pub status: String,
    pub wall_ms: u128,
}

/// Target, training set and sampling seeds for class count index `k` are
/// separate streams of `seed`.
pub fn class_scaling_case(cfg: &RunConfig, index: usize) -> Result<(FactorizingTarget, KlReport)> {
    let cs = &cfg.class_scaling;
    let (n, c) = (cs.n, cs.classes[index]);
    let base = 3 * index as u64;
    let target = FactorizingTarget::dirichlet(n, c, cs.dirichlet_alpha, &mut stream_rng(cfg.seed, base))?;
    let data = target.draw(cs.train_size, &mut stream_rng(cfg.seed, base + 1));
    let arch = cfg.model.architecture(n, c);
    let model = PayoffModel::init(arch, &mut stream_rng(cfg.seed, base + 2))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.train.seed.wrapping_add(index as u64);
    let trained = train(&train_cfg, &data, model)?;
    let count = cs.sample_count(index);
    let samples = sample(&trained.model, &cfg.integrator, cfg.sample.variant, cfg.seed.wrapping_add(index as u64), count)?;
    let labels: Vec<LabelConfig> = samples.into_iter().map(|s| s.labels).collect();
    let report = histogram_report(&target, &labels)?;
    Ok((target, report))
}

/// Runs every class count, recording failures per row instead of aborting.
pub fn class_scaling(cfg: &RunConfig, mut progress: impl FnMut(&ClassScalingRow)) -> Result<Vec<ClassScalingRow>> {
    cfg.class_scaling.validate()?;
    let mut rows = Vec::new();
    for (index, &c) in cfg.class_scaling.classes.iter().enumerate() {
        let start = Instant::now();
        let (report, status) = match class_scaling_case(cfg, index) {
            Ok((_, r)) => (Some(r), "ok".to_string()),
            Err(e) => (None, format!("error: {e}")),
        };
        let row = ClassScalingRow {
            c,
            num_samples: cfg.class_scaling.sample_count(index),
            report,
            status,
            wall_ms: start.elapsed().as_millis(),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// CSV with fixed column order. Timing stays in the manifest so reruns are
/// byte-identical.
pub fn class_scaling_csv(rows: &[ClassScalingRow]) -> String {
    let mut out = String::from("c,num_samples,kl_nats,tv,uniform_kl_nats,noise_floor,support,status\n");
    for r in rows {
        let status = r.status.replace([',', '\n'], ";");
        match &r.report {
            Some(k) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.c, r.num_samples, k.kl, k.tv, k.uniform_kl, k.noise_floor, k.support, status
            )),
            None => out.push_str(&format!("{},{},,,,,,{}\n", r.c, r.num_samples, status)),
        }
    }
    out
}
