//! Likelihood of label configurations under a trained flow.
//!
//! The density of the flow's endpoint is obtained from the instantaneous
//! change-of-variables formula by integrating the state and the divergence
//! backward in time. Probabilities of configurations are then estimated by
//! importance sampling in the chart, either under the factorizing model
//! `E[Π_i W_{i,β_i}]` or under the rounding model `P[W ∈ r_β]`.
//!
//! All densities are taken in orthonormal (Helmert) coordinates of the chart,
//! so the reference measure is a standard normal of dimension `n(c−1)`.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_match::target_direction;
use crate::geometry::{lift_barycenter, HelmertBasis, TangentField};
use crate::integrate::{dopri5, in_rounding_region, sample, IntegratorConfig, SampleVariant};
use crate::meta_simplex::LabelConfig;
use crate::numeric::{batch_stream, log_sum_exp, pairwise_sum, stream_rng};
use crate::payoff::PayoffModel;

/// Distribution of the trace-estimator probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeDist {
    Rademacher,
    Gaussian,
    /// All coordinate directions: the exact finite-difference trace.
    Exact,
}

/// Which discrete model the likelihood refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// `P(β) = E[Π_i W_{i,β_i}]`, matching categorical sampling.
    Factorizing,
    /// `P(β) = P[W ∈ r_β]`, matching argmax rounding.
    Rounding,
}

/// Choice of importance-sampling proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    /// `N(τλV_β, σ² I)` in Helmert coordinates.
    Conditional,
    /// Gaussian moment-matched to pilot samples of the model that round to
    /// `β`, covariance scaled by `σ²`. Falls back to `Conditional` for
    /// configurations with too few pilot hits.
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub num_proposal_samples: usize,
    pub num_hutchinson: usize,
    pub hutchinson_dist: ProbeDist,
    pub proposal: ProposalKind,
    /// Scale of the proposal: standard deviation for `Conditional`,
    /// covariance inflation for `Fitted`.
    pub proposal_sigma: f64,
    /// Forward samples used to fit `Fitted` proposals.
    pub pilot_samples: usize,
    /// Time `τ` of the proposal center `τλV_β`; `None` uses `t_max`.
    pub proposal_center_time: Option<f64>,
    pub model_variant: ModelVariant,
    /// Path speed `λ` the model was trained with.
    pub lambda_rate: f64,
    pub seed: u64,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            num_proposal_samples: 100,
            num_hutchinson: 1,
            hutchinson_dist: ProbeDist::Rademacher,
            proposal: ProposalKind::Conditional,
            proposal_sigma: 1.0,
            pilot_samples: 2000,
            proposal_center_time: None,
            model_variant: ModelVariant::Factorizing,
            lambda_rate: 1.0,
            seed: 0,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_proposal_samples == 0 || self.num_hutchinson == 0 {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        if self.proposal == ProposalKind::Fitted && self.pilot_samples == 0 {
            return Err(Error::Config("a fitted proposal needs pilot_samples ≥ 1".into()));
        }
        if !(self.proposal_sigma > 0.0 && self.proposal_sigma.is_finite()) {
            return Err(Error::Config("proposal_sigma must be positive".into()));
        }
        if !(self.lambda_rate > 0.0) {
            return Err(Error::Config("lambda_rate must be positive".into()));
        }
        if self.proposal_center_time.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
            return Err(Error::Config("proposal_center_time must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Standard normal log-density in `z.len()` dimensions.
pub fn std_normal_log_density(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

/// The chart field in Helmert coordinates, `g(z, t) = Bᵀ F_θ(softmax(Bz), t)`.
struct CoordField<'a> {
    model: &'a PayoffModel,
    basis: HelmertBasis,
    n: usize,
}

impl CoordField<'_> {
    fn new(model: &PayoffModel) -> CoordField<'_> {
        CoordField { model, basis: HelmertBasis::new(model.arch().c), n: model.arch().n }
    }

    fn eval(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let x = self.basis.coords_to_field(self.n, z);
        let f = self.model.forward_chart(x.matrix(), t)?;
        let d = self.basis.dim();
        for i in 0..self.n {
            self.basis.to_coords(f.row(i), &mut out[i * d..(i + 1) * d]);
        }
        Ok(())
    }

    /// `⟨v, J v⟩` by a central difference with step `1e-5·max(1, ‖z‖)`.
    fn quad_form(&self, z: &[f64], t: f64, v: &[f64], buf: &mut [Vec<f64>; 3]) -> Result<f64> {
        let norm = z.iter().map(|a| a * a).sum::<f64>().sqrt();
        let eps = 1e-5 * norm.max(1.0);
        let [zp, fp, fm] = buf;
        for ((a, &b), &c) in zp.iter_mut().zip(z).zip(v) {
            *a = b + eps * c;
        }
        self.eval(zp, t, fp)?;
        for ((a, &b), &c) in zp.iter_mut().zip(z).zip(v) {
            *a = b - eps * c;
        }
        self.eval(zp, t, fm)?;
        Ok(v.iter().zip(fp.iter().zip(fm.iter())).map(|(vi, (p, m))| vi * (p - m)).sum::<f64>() / (2.0 * eps))
    }
}

/// Trace-estimator probes, fixed along one trajectory.
pub fn draw_probes<R: Rng + ?Sized>(dist: ProbeDist, count: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    match dist {
        ProbeDist::Exact => (0..d)
            .map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect(),
        ProbeDist::Rademacher => (0..count)
            .map(|_| (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect(),
        ProbeDist::Gaussian => (0..count).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect(),
    }
}

/// Divergence of the chart field at `(x, t)`, estimated with `probes`.
/// With [`ProbeDist::Exact`] probes this is the full finite-difference trace.
pub fn divergence(model: &PayoffModel, x: &TangentField, t: f64, probes: &[Vec<f64>], exact: bool) -> Result<f64> {
    let field = CoordField::new(model);
    let z = field.basis.field_to_coords(x);
    let d = z.len();
    let mut buf = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut acc = 0.0;
    for v in probes {
        acc += field.quad_form(&z, t, v, &mut buf)?;
    }
    Ok(if exact { acc } else { acc / probes.len() as f64 })
}

/// Result of the backward pass from a final chart point.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    /// Helmert coordinates of the initial point `z(0)`.
    pub z0: Vec<f64>,
    /// `∫_0^{t_max} tr J dt` along the trajectory.
    pub log_det: f64,
    /// `log N(z(0)) − log_det`.
    pub log_density: f64,
}

/// Integrates state and divergence from `t_max` back to 0. The probes are
/// used for the whole trajectory.
pub fn backward_pass(
    model: &PayoffModel,
    x_final: &TangentField,
    integ: &IntegratorConfig,
    probes: &[Vec<f64>],
    exact: bool,
) -> Result<BackwardPass> {
    if x_final.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("likelihood chart state"));
    }
    let field = CoordField::new(model);
    let z_final = field.basis.field_to_coords(x_final);
    let d = z_final.len();
    let t_max = integ.t_max;
    let scale = if exact { 1.0 } else { 1.0 / probes.len() as f64 };
    let mut buf = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut g = vec![0.0; d];
    let rhs = |s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let t = t_max - s;
        let z = &y[..d];
        field.eval(z, t, &mut g)?;
        for (o, gi) in dy[..d].iter_mut().zip(&g) {
            *o = -gi;
        }
        let mut tr = 0.0;
        for v in probes {
            tr += field.quad_form(z, t, v, &mut buf)?;
        }
        dy[d] = tr * scale;
        Ok(())
    };
    let mut y0 = z_final;
    y0.push(0.0);
    let backward = IntegratorConfig { early_exit: false, ..integ.clone() };
    let sol = dopri5(rhs, 0.0, y0, t_max, &backward, |_| false, false)?;
    let y = sol.final_state();
    let log_det = y[d];
    if !log_det.is_finite() {
        return Err(Error::NonFinite("log-determinant"));
    }
    let z0 = y[..d].to_vec();
    let log_density = std_normal_log_density(&z0) - log_det;
    Ok(BackwardPass { z0, log_det, log_density })
}

/// Log-density of the flow's time-`t_max` distribution at `x_final`.
pub fn log_density_with_probes(
    model: &PayoffModel,
    x_final: &TangentField,
    integ: &IntegratorConfig,
    probes: &[Vec<f64>],
    exact: bool,
) -> Result<f64> {
    Ok(backward_pass(model, x_final, integ, probes, exact)?.log_density)
}

/// Log-density at `x_final` with probes drawn from `cfg`.
pub fn log_density_at<R: Rng + ?Sized>(
    model: &PayoffModel,
    x_final: &TangentField,
    cfg: &LikelihoodConfig,
    integ: &IntegratorConfig,
    rng: &mut R,
) -> Result<f64> {
    let d = model.arch().n * (model.arch().c - 1);
    let probes = draw_probes(cfg.hutchinson_dist, cfg.num_hutchinson, d, rng);
    log_density_with_probes(model, x_final, integ, &probes, cfg.hutchinson_dist == ProbeDist::Exact)
}

/// Importance-sampling estimate of `log P(β)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLikelihoodResult {
    pub log_prob: f64,
    /// Delta-method standard error of `log_prob`.
    pub std_error: f64,
    /// Effective sample size of the importance weights.
    pub ess: f64,
    /// Set when no proposal draw received positive weight.
    pub all_weights_zero: bool,
}

/// Combines log importance weights into the estimate, its standard error and
/// the effective sample size.
pub fn combine_log_weights(log_w: &[f64]) -> LogLikelihoodResult {
    let k = log_w.len() as f64;
    let lse = log_sum_exp(log_w);
    if lse == f64::NEG_INFINITY {
        return LogLikelihoodResult { log_prob: f64::NEG_INFINITY, std_error: f64::NAN, ess: 0.0, all_weights_zero: true };
    }
    // normalized weights w_k / Σw
    let p: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();
    let sum_sq = pairwise_sum(&p.iter().map(|x| x * x).collect::<Vec<_>>());
    let ess = 1.0 / sum_sq;
    // sample variance of the weights over the squared mean: K(KΣp² − 1)/(K − 1)
    let rel_var = if k > 1.0 { (k * (k * sum_sq - 1.0) / (k - 1.0)).max(0.0) } else { 0.0 };
    LogLikelihoodResult { log_prob: lse - k.ln(), std_error: (rel_var / k).sqrt(), ess, all_weights_zero: false }
}

/// A Gaussian proposal in Helmert coordinates, `N(mean, L Lᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProposal {
    mean: Vec<f64>,
    /// Row-major lower-triangular Cholesky factor.
    chol: Vec<f64>,
    log_det_chol: f64,
}

impl GaussianProposal {
    /// Isotropic proposal `N(Bᵀ(τλV_β), σ² I)`.
    pub fn conditional(beta: &LabelConfig, c: usize, tau: f64, lambda: f64, sigma: f64) -> Self {
        let basis = HelmertBasis::new(c);
        let mean = basis.field_to_coords(&target_direction(beta, c).scaled(tau * lambda));
        let d = mean.len();
        let mut chol = vec![0.0; d * d];
        for k in 0..d {
            chol[k * d + k] = sigma;
        }
        Self { mean, chol, log_det_chol: d as f64 * sigma.ln() }
    }

    /// Moment fit to `points` with the covariance scaled by `inflate²`.
    /// Returns `None` with fewer than `d + 2` points or a singular fit.
    pub fn fitted(points: &[Vec<f64>], inflate: f64) -> Option<Self> {
        let d = points.first()?.len();
        if points.len() < d + 2 {
            return None;
        }
        let m = points.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / m).collect();
        let mut cov = vec![0.0; d * d];
        for p in points {
            for a in 0..d {
                for b in 0..=a {
                    cov[a * d + b] += (p[a] - mean[a]) * (p[b] - mean[b]) / (m - 1.0);
                }
            }
        }
        let mut chol = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..=a {
                let mut s = cov[a * d + b] * inflate * inflate;
                for k in 0..b {
                    s -= chol[a * d + k] * chol[b * d + k];
                }
                if a == b {
                    if !(s > 0.0) {
                        return None;
                    }
                    chol[a * d + a] = s.sqrt();
                } else {
                    chol[a * d + b] = s / chol[b * d + b];
                }
            }
        }
        let log_det_chol = (0..d).map(|k| chol[k * d + k].ln()).sum();
        Some(Self { mean, chol, log_det_chol })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// A draw and its log-density.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let d = self.mean.len();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let z = (0..d)
            .map(|a| self.mean[a] + (0..=a).map(|k| self.chol[a * d + k] * eps[k]).sum::<f64>())
            .collect();
        (z, std_normal_log_density(&eps) - self.log_det_chol)
    }
}

/// Fits one proposal per configuration from `pilot` forward samples of the
/// model (rounded final chart states, coordinates in the Helmert basis).
pub fn fit_proposals(
    model: &PayoffModel,
    integ: &IntegratorConfig,
    pilot: usize,
    inflate: f64,
    seed: u64,
) -> Result<HashMap<LabelConfig, GaussianProposal>> {
    let basis = HelmertBasis::new(model.arch().c);
    let mut groups: HashMap<LabelConfig, Vec<Vec<f64>>> = HashMap::new();
    for s in sample(model, integ, SampleVariant::Rounding, seed, pilot)? {
        groups.entry(s.labels).or_default().push(basis.field_to_coords(&s.final_chart));
    }
    Ok(groups
        .into_iter()
        .filter_map(|(beta, pts)| GaussianProposal::fitted(&pts, inflate).map(|g| (beta, g)))
        .collect())
}

/// The proposal `cfg` prescribes for `beta`, given fitted proposals if any.
pub fn proposal_for(
    beta: &LabelConfig,
    c: usize,
    cfg: &LikelihoodConfig,
    integ: &IntegratorConfig,
    fitted: Option<&HashMap<LabelConfig, GaussianProposal>>,
) -> GaussianProposal {
    fitted.and_then(|f| f.get(beta).cloned()).unwrap_or_else(|| {
        let tau = cfg.proposal_center_time.unwrap_or(integ.t_max);
        GaussianProposal::conditional(beta, c, tau, cfg.lambda_rate, cfg.proposal_sigma)
    })
}

/// `log P(β)` under the chosen model variant with an explicit proposal.
/// `stream` selects the random stream (the datum index in batch evaluation).
pub fn log_likelihood_with(
    model: &PayoffModel,
    beta: &LabelConfig,
    proposal: &GaussianProposal,
    cfg: &LikelihoodConfig,
    integ: &IntegratorConfig,
    stream: usize,
) -> Result<LogLikelihoodResult> {
    cfg.validate()?;
    let (n, c) = (model.arch().n, model.arch().c);
    if beta.n() != n || beta.labels().iter().any(|&l| l >= c) {
        return Err(Error::Shape(format!("configuration {beta} does not fit n={n}, c={c}")));
    }
    let basis = HelmertBasis::new(c);
    let d = n * (c - 1);
    if proposal.mean.len() != d {
        return Err(Error::Shape("proposal dimension differs from the model chart".into()));
    }
    let exact = cfg.hutchinson_dist == ProbeDist::Exact;

    let log_w: Vec<f64> = (0..cfg.num_proposal_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(cfg.seed, batch_stream(stream, k));
            let (z, log_rho) = proposal.draw(&mut rng);
            let x = basis.coords_to_field(n, &z);
            let w = lift_barycenter(&x);
            let term = match cfg.model_variant {
                ModelVariant::Factorizing => w.rows().zip(beta.labels()).map(|(row, &b)| row[b].ln()).sum(),
                ModelVariant::Rounding => {
                    if in_rounding_region(&w, beta) {
                        0.0
                    } else {
                        return Ok(f64::NEG_INFINITY);
                    }
                }
            };
            let probes = draw_probes(cfg.hutchinson_dist, cfg.num_hutchinson, d, &mut rng);
            let log_nu = log_density_with_probes(model, &x, integ, &probes, exact)?;
            Ok(term + log_nu - log_rho)
        })
        .collect::<Result<_>>()?;
    Ok(combine_log_weights(&log_w))
}

/// `log P(β)` with the proposal selected by `cfg`. A fitted proposal is
/// refitted on every call; use [`kl_surrogate`] or [`fit_proposals`] to
/// share the pilot run across data.
pub fn log_likelihood(
    model: &PayoffModel,
    beta: &LabelConfig,
    cfg: &LikelihoodConfig,
    integ: &IntegratorConfig,
    stream: usize,
) -> Result<LogLikelihoodResult> {
    cfg.validate()?;
    let fitted = match cfg.proposal {
        ProposalKind::Conditional => None,
        ProposalKind::Fitted => Some(fit_proposals(model, integ, cfg.pilot_samples, cfg.proposal_sigma, pilot_seed(cfg))?),
    };
    let proposal = proposal_for(beta, model.arch().c, cfg, integ, fitted.as_ref());
    log_likelihood_with(model, beta, &proposal, cfg, integ, stream)
}

fn pilot_seed(cfg: &LikelihoodConfig) -> u64 {
    cfg.seed.wrapping_add(1)
}

/// Summary of a test-set evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlSurrogate {
    /// Mean negative log-likelihood per configuration (nats).
    pub mean_nll: f64,
    pub nats_per_var: f64,
    pub bits_per_dim: f64,
    /// Standard deviation of the per-datum negative log-likelihoods.
    pub nll_spread: f64,
    /// Root mean square of the per-datum standard errors.
    pub mean_std_error: f64,
    /// Data whose estimate was `−∞` (excluded from the means).
    pub failed: usize,
}

/// Aggregates per-datum log-likelihoods (nats) for `n`-node configurations.
pub fn summarize_log_likelihoods(n: usize, results: &[LogLikelihoodResult]) -> Result<KlSurrogate> {
    if results.is_empty() {
        return Err(Error::Empty("test data"));
    }
    let ok: Vec<&LogLikelihoodResult> = results.iter().filter(|r| r.log_prob.is_finite()).collect();
    let failed = results.len() - ok.len();
    if ok.is_empty() {
        return Ok(KlSurrogate {
            mean_nll: f64::INFINITY,
            nats_per_var: f64::INFINITY,
            bits_per_dim: f64::INFINITY,
            nll_spread: f64::NAN,
            mean_std_error: f64::NAN,
            failed,
        });
    }
    let m = ok.len() as f64;
    let nll: Vec<f64> = ok.iter().map(|r| -r.log_prob).collect();
    let mean = pairwise_sum(&nll) / m;
    let var = pairwise_sum(&nll.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>()) / (m - 1.0).max(1.0);
    let se = (pairwise_sum(&ok.iter().map(|r| r.std_error.powi(2)).collect::<Vec<_>>()) / m).sqrt();
    Ok(KlSurrogate {
        mean_nll: mean,
        nats_per_var: mean / n as f64,
        bits_per_dim: mean / (n as f64 * std::f64::consts::LN_2),
        nll_spread: var.sqrt(),
        mean_std_error: se,
        failed,
    })
}

/// Mean negative log-likelihood of `test_data`, the plug-in estimate of
/// `KL(p, p̃) + H(p)`.
pub fn kl_surrogate(
    model: &PayoffModel,
    test_data: &[LabelConfig],
    cfg: &LikelihoodConfig,
    integ: &IntegratorConfig,
) -> Result<(KlSurrogate, Vec<LogLikelihoodResult>)> {
    if test_data.is_empty() {
        return Err(Error::Empty("test data"));
    }
    cfg.validate()?;
    let fitted = match cfg.proposal {
        ProposalKind::Conditional => None,
        ProposalKind::Fitted => Some(fit_proposals(model, integ, cfg.pilot_samples, cfg.proposal_sigma, pilot_seed(cfg))?),
    };
    let c = model.arch().c;
    let per = test_data
        .iter()
        .enumerate()
        .map(|(i, beta)| {
            let proposal = proposal_for(beta, c, cfg, integ, fitted.as_ref());
            log_likelihood_with(model, beta, &proposal, cfg, integ, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize_log_likelihoods(model.arch().n, &per)?, per))
}

/// The chart coordinates `x` as a node matrix (used by callers that hold
/// flat Helmert coordinates).
pub fn coords_to_chart(n: usize, c: usize, z: &[f64]) -> Result<TangentField> {
    if z.len() != n * (c - 1) {
        return Err(Error::Shape(format!("expected {} coordinates, got {}", n * (c - 1), z.len())));
    }
    Ok(HelmertBasis::new(c).coords_to_field(n, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_match::sample_reference_chart;
    use crate::integrate::integrate;
    use crate::meta_simplex::{entropy, DenseJoint};
    use crate::payoff::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(n: usize, c: usize) -> PayoffModel {
        PayoffModel::init(Architecture::new(n, c, 4), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn random_model(n: usize, c: usize, seed: u64) -> PayoffModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = PayoffModel::init(Architecture::new(n, c, 6), &mut rng).unwrap();
        for p in m.params_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        m
    }

    fn constant_model(v: &[f64], c: usize) -> PayoffModel {
        let mut m = zero_model(1, c);
        let k = m.num_params();
        m.params_mut()[k - c..].copy_from_slice(v);
        m
    }

    #[test]
    fn zero_field_at_origin_is_mode_density() {
        let model = zero_model(2, 3);
        let cfg = LikelihoodConfig::default();
        let integ = IntegratorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ld = log_density_at(&model, &TangentField::zeros(2, 3), &cfg, &integ, &mut rng).unwrap();
        assert_eq!(ld, -2.0 * (2.0 * std::f64::consts::PI).ln());
    }

    #[test]
    fn constant_field_is_a_translation() {
        let b = LabelConfig::from_one_based(&[2], 3).unwrap();
        let v = target_direction(&b, 3);
        let model = constant_model(v.as_slice(), 3);
        let integ = IntegratorConfig { t_max: 4.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = sample_reference_chart(1, 3, &mut rng).add_scaled(&v, 4.0);
        let cfg = LikelihoodConfig::default();
        let ld = log_density_at(&model, &x, &cfg, &integ, &mut rng).unwrap();
        let z0 = HelmertBasis::new(3).field_to_coords(&x.add_scaled(&v, -4.0));
        assert!((ld - std_normal_log_density(&z0)).abs() < 1e-8);
    }

    #[test]
    fn hutchinson_agrees_with_exact_trace() {
        let model = random_model(2, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = sample_reference_chart(2, 3, &mut rng);
        let d = 4;
        let exact = divergence(&model, &x, 0.8, &draw_probes(ProbeDist::Exact, 0, d, &mut rng), true).unwrap();
        let probes = draw_probes(ProbeDist::Rademacher, 10_000, d, &mut rng);
        let vals: Vec<f64> = probes
            .iter()
            .map(|p| divergence(&model, &x, 0.8, std::slice::from_ref(p), false).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        let se = sd / (vals.len() as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se.max(1e-12), "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn backward_pass_matches_flow_jacobian() {
        // independent oracle: log ν_T(x_T) = log N(z0) − log|det ∂z_T/∂z0|,
        // with the Jacobian of the forward flow map by finite differences
        let model = random_model(1, 3, 5);
        let integ = IntegratorConfig { t_max: 2.0, rtol: 1e-11, atol: 1e-13, early_exit: false, ..Default::default() };
        let basis = HelmertBasis::new(3);
        let flow = |z: &[f64]| -> Vec<f64> {
            let x0 = basis.coords_to_field(1, z);
            basis.field_to_coords(integrate(&model, &x0, &integ).unwrap().final_chart())
        };
        let z0 = vec![0.3, -0.7];
        let zt = flow(&z0);
        let h = 1e-5;
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut p = z0.clone();
            let mut m = z0.clone();
            p[k] += h;
            m[k] -= h;
            let (fp, fm) = (flow(&p), flow(&m));
            for r in 0..2 {
                jac[r][k] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let log_det = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs().ln();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let probes = draw_probes(ProbeDist::Exact, 0, 2, &mut rng);
        let back = backward_pass(&model, &basis.coords_to_field(1, &zt), &integ, &probes, true).unwrap();
        assert!(back.z0.iter().zip(&z0).all(|(a, b)| (a - b).abs() < 1e-7));
        assert!((back.log_det - log_det).abs() < 1e-5, "{} vs {log_det}", back.log_det);
        assert!((back.log_density - (std_normal_log_density(&z0) - log_det)).abs() < 1e-5);
    }

    #[test]
    fn zero_field_factorizing_symmetry() {
        let model = zero_model(1, 2);
        let cfg = LikelihoodConfig {
            proposal_center_time: Some(0.0),
            num_proposal_samples: 2000,
            ..Default::default()
        };
        let integ = IntegratorConfig::default();
        let beta = LabelConfig::from_one_based(&[1], 2).unwrap();
        let r = log_likelihood(&model, &beta, &cfg, &integ, 0).unwrap();
        let p = r.log_prob.exp();
        assert!((p - 0.5).abs() <= 3.0 * r.std_error * p, "{p} ± {}", r.std_error);
    }

    #[test]
    fn rounding_variant_weights() {
        // zero field, n = 1, c = 2: P[W ∈ r_β] = 1/2 by symmetry
        let model = zero_model(1, 2);
        let cfg = LikelihoodConfig {
            model_variant: ModelVariant::Rounding,
            proposal_center_time: Some(0.0),
            num_proposal_samples: 2000,
            ..Default::default()
        };
        let integ = IntegratorConfig::default();
        let beta = LabelConfig::from_one_based(&[2], 2).unwrap();
        let r = log_likelihood(&model, &beta, &cfg, &integ, 0).unwrap();
        assert!((r.log_prob.exp() - 0.5).abs() <= 3.0 * r.std_error * 0.5);
        let none = combine_log_weights(&[f64::NEG_INFINITY; 5]);
        assert!(none.all_weights_zero && none.log_prob == f64::NEG_INFINITY);
    }

    #[test]
    fn combine_weights_handles_extreme_spread() {
        let lw = [-1400.0, 0.0, -700.0, f64::NEG_INFINITY];
        let r = combine_log_weights(&lw);
        assert!(r.log_prob.is_finite() && !r.std_error.is_nan());
        assert!((r.log_prob - (0.0 - 4f64.ln())).abs() < 1e-12);
        assert!((r.ess - 1.0).abs() < 1e-12);
        let r = combine_log_weights(&[-3.0; 10]);
        assert_eq!(r.std_error, 0.0);
        assert!((r.ess - 10.0).abs() < 1e-9);
    }

    #[test]
    fn surrogate_examples() {
        let uniform = |_: &LabelConfig| LogLikelihoodResult {
            log_prob: -4.0 * std::f64::consts::LN_2,
            std_error: 0.0,
            ess: 1.0,
            all_weights_zero: false,
        };
        let data = LabelConfig::all(4, 2).unwrap();
        let per: Vec<_> = data.iter().map(uniform).collect();
        let s = summarize_log_likelihoods(4, &per).unwrap();
        assert!((s.bits_per_dim - 1.0).abs() < 1e-15);

        let one = LogLikelihoodResult { log_prob: -1.7, std_error: 0.1, ess: 3.0, all_weights_zero: false };
        let s = summarize_log_likelihoods(2, &[one.clone(), one.clone(), one]).unwrap();
        assert!((s.mean_nll - 1.7).abs() < 1e-15);
        assert!(summarize_log_likelihoods(2, &[]).is_err());

        // exact oracle: the expected NLL under p is minimized at p̃ = p
        let p = DenseJoint::new(2, 2, vec![0.45, 0.05, 0.05, 0.45]).unwrap();
        let cross = |q: &[f64]| -> f64 { p.probs().iter().zip(q).map(|(a, b)| -a * b.ln()).sum() };
        let h = entropy(&p);
        assert!((cross(p.probs()) - h).abs() < 1e-15);
        assert!(cross(&[0.25; 4]) > h);
        assert!(cross(&[0.4, 0.1, 0.05, 0.45]) > h);
    }
}
