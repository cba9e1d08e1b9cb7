//! Integration of the learned assignment flow and sampling.
//!
//! The flow `Ẇ = R_W F_θ(W, t)` is integrated in the barycenter chart, where
//! it reads `ẋ = Π0 F_θ(softmax(x), t)`. States stay on the manifold by
//! construction. The stepper is the embedded Dormand–Prince 5(4) pair with
//! the first-same-as-last property.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_match::sample_reference_chart;
use crate::geometry::{center_in_place, lift_barycenter, softmax_into, Assignment, NodeMatrix, TangentField};
use crate::meta_simplex::LabelConfig;
use crate::numeric::stream_rng;
use crate::payoff::PayoffModel;

const CHART_MAGIC: &[u8; 4] = b"AFGX";

/// Per-node probability at which integration may stop early.
pub const EARLY_EXIT_PROB: f64 = 1.0 - 1e-9;

/// Step-size control and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Stop once every node puts at least `1 − 1e-9` on one class.
    pub early_exit: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            rtol: 1e-6,
            atol: 1e-8,
            h_init: 1e-2,
            h_min: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 100_000,
            early_exit: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && !x.is_nan();
        if !(positive(self.t_max) && self.t_max.is_finite()) {
            return Err(Error::Config("t_max must be positive and finite".into()));
        }
        if !(positive(self.rtol) && positive(self.atol)) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(positive(self.h_init) && positive(self.h_min) && positive(self.h_max)) || self.h_min > self.h_max {
            return Err(Error::Config("step bounds must satisfy 0 < h_min ≤ h_max".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference between the 5th- and 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Output of [`dopri5`].
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
    pub early_exit: bool,
}

impl OdeSolution {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("solution holds the initial point")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("solution holds the initial point")
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Adaptive Dormand–Prince integration of `ẏ = f(t, y)` from `t0` to
/// `t_end`. The local error estimate is `rms(Δ) / (atol + rtol·rms(y))`.
/// `stop` is consulted after every accepted step. With `record` off only the
/// initial and final states are kept.
pub fn dopri5<F, S>(
    mut f: F,
    t0: f64,
    y0: Vec<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
    mut stop: S,
    record: bool,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    S: FnMut(&[f64]) -> bool,
{
    cfg.validate()?;
    let d = y0.len();
    let mut sol = OdeSolution { times: vec![t0], states: vec![y0.clone()], accepted: 0, rejected: 0, early_exit: false };
    if t_end <= t0 {
        return Ok(sol);
    }
    let mut t = t0;
    let mut y = y0;
    let mut k = vec![vec![0.0; d]; 7];
    let mut tmp = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    let mut delta = vec![0.0; d];
    f(t, &y, &mut k[0])?;
    let mut h = cfg.h_init.min(cfg.h_max);
    let mut attempts = 0usize;

    while t < t_end {
        attempts += 1;
        if attempts > cfg.max_steps {
            return Err(Error::MaxSteps { max_steps: cfg.max_steps, t });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        macro_rules! stage {
            ($dst:expr, $c:expr, [$(($a:expr, $j:expr)),*]) => {{
                for m in 0..d {
                    tmp[m] = y[m] + h * (0.0 $(+ $a * k[$j][m])*);
                }
                let (_, rest) = k.split_at_mut($dst);
                f(t + $c * h, &tmp, &mut rest[0])?;
            }};
        }
        stage!(1, C2, [(A21, 0)]);
        stage!(2, C3, [(A31, 0), (A32, 1)]);
        stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
        stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
        stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
        for m in 0..d {
            y_new[m] = y[m] + h * (B1 * k[0][m] + B3 * k[2][m] + B4 * k[3][m] + B5 * k[4][m] + B6 * k[5][m]);
        }
        let t_new = if last { t_end } else { t + h };
        {
            let (_, rest) = k.split_at_mut(6);
            f(t_new, &y_new, &mut rest[0])?;
        }
        for m in 0..d {
            delta[m] = h
                * (E1 * k[0][m] + E3 * k[2][m] + E4 * k[3][m] + E5 * k[4][m] + E6 * k[5][m] + E7 * k[6][m]);
        }
        let scale = cfg.atol + cfg.rtol * rms(&y).max(rms(&y_new));
        let err = rms(&delta) / scale;
        if !err.is_finite() {
            return Err(Error::NonFinite("integrator state"));
        }

        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            sol.accepted += 1;
            if record {
                sol.times.push(t);
                sol.states.push(y.clone());
            }
            if stop(&y) {
                sol.early_exit = t < t_end;
                break;
            }
            h = (h * factor).min(cfg.h_max);
        } else {
            sol.rejected += 1;
            h *= factor.min(1.0);
        }
        if h < cfg.h_min && t < t_end {
            return Err(Error::StepTooSmall { h, t });
        }
    }
    if !record {
        sol.times.push(t);
        sol.states.push(y);
    }
    Ok(sol)
}

/// `Π0 F_θ(softmax(x), t)`.
pub fn chart_field(model: &PayoffModel, x: &TangentField, t: f64) -> Result<TangentField> {
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chart state"));
    }
    let mut f = model.forward_chart(x.matrix(), t)?;
    for i in 0..f.n() {
        center_in_place(f.row_mut(i));
    }
    Ok(TangentField::from_matrix(f))
}

/// Whether every node of the chart state `x` (flat, `c` per node) puts at
/// least [`EARLY_EXIT_PROB`] on a single class.
pub fn is_near_vertex(x: &[f64], c: usize) -> bool {
    let mut p = vec![0.0; c];
    x.chunks_exact(c).all(|row| {
        softmax_into(row, &mut p);
        p.iter().cloned().fold(0.0, f64::max) >= EARLY_EXIT_PROB
    })
}

/// Chart trajectory of the learned flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub chart_states: Vec<TangentField>,
    pub accepted: usize,
    pub rejected: usize,
    pub early_exit: bool,
}

impl Trajectory {
    pub fn final_chart(&self) -> &TangentField {
        self.chart_states.last().expect("trajectory holds the initial point")
    }

    pub fn final_assignment(&self) -> Assignment {
        lift_barycenter(self.final_chart())
    }
}

fn run_chart(model: &PayoffModel, x0: &TangentField, cfg: &IntegratorConfig, record: bool) -> Result<Trajectory> {
    let (n, c) = (x0.n(), x0.c());
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let x = NodeMatrix::new(n, c, y.to_vec())?;
        let mut f = model.forward_chart(&x, t)?;
        for i in 0..n {
            center_in_place(f.row_mut(i));
        }
        dy.copy_from_slice(f.as_slice());
        Ok(())
    };
    let early = cfg.early_exit;
    let sol = dopri5(rhs, 0.0, x0.as_slice().to_vec(), cfg.t_max, cfg, |y| early && is_near_vertex(y, c), record)?;
    let chart_states = sol
        .states
        .into_iter()
        .map(|s| {
            let x = TangentField::from_matrix(NodeMatrix::new(n, c, s).expect("state keeps its shape"));
            debug_assert!(lift_barycenter(&x).as_slice().iter().all(|&p| p > 0.0));
            x
        })
        .collect();
    Ok(Trajectory { times: sol.times, chart_states, accepted: sol.accepted, rejected: sol.rejected, early_exit: sol.early_exit })
}

/// Integrates from `x0` to `t_max`, recording every accepted step.
pub fn integrate(model: &PayoffModel, x0: &TangentField, cfg: &IntegratorConfig) -> Result<Trajectory> {
    run_chart(model, x0, cfg, true)
}

/// Like [`integrate`] but keeps only the initial and final states.
pub fn integrate_endpoint(model: &PayoffModel, x0: &TangentField, cfg: &IntegratorConfig) -> Result<Trajectory> {
    run_chart(model, x0, cfg, false)
}

/// How a final assignment is turned into a labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SampleVariant {
    /// Draw each node from its final class distribution.
    Categorical,
    /// Per-node argmax.
    Rounding,
}

/// Per-node argmax, ties resolved toward the lowest class index.
pub fn round_assignment(w: &Assignment) -> LabelConfig {
    let labels = w
        .rows()
        .map(|row| {
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    LabelConfig::new(labels, w.c()).expect("argmax lies in range")
}

/// Membership in the rounding region `r_β`: every node assigns its largest
/// probability to `β_i`, with ties going to the lowest index.
pub fn in_rounding_region(w: &Assignment, beta: &LabelConfig) -> bool {
    w.rows().zip(beta.labels()).all(|(row, &b)| {
        row.iter().enumerate().all(|(j, &p)| if j < b { row[b] > p } else { row[b] >= p })
    })
}

/// Draws one class per node from the rows of `w`.
pub fn sample_categorical<R: Rng + ?Sized>(w: &Assignment, rng: &mut R) -> LabelConfig {
    let labels = w
        .rows()
        .map(|row| {
            let u: f64 = rng.random::<f64>() * row.iter().sum::<f64>();
            let mut acc = 0.0;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return j;
                }
            }
            row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
        .collect();
    LabelConfig::new(labels, w.c()).expect("sampled label lies in range")
}

/// One generated sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub labels: LabelConfig,
    pub final_chart: TangentField,
    pub early_exit: bool,
}

/// Two-stage sampling: integrate from `x0 ∼ N(0, Π0)` to `t_max`, then turn
/// `W(t_max)` into labels. Sample `k` uses random stream `k`, so results do
/// not depend on the thread count.
pub fn sample(
    model: &PayoffModel,
    cfg: &IntegratorConfig,
    variant: SampleVariant,
    seed: u64,
    count: usize,
) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let (n, c) = (model.arch().n, model.arch().c);
    (0..count)
        .into_par_iter()
        .map(|index| {
            let mut rng = stream_rng(seed, index as u64);
            let x0 = sample_reference_chart(n, c, &mut rng);
            let traj = integrate_endpoint(model, &x0, cfg).map_err(|e| Error::Sample { index, source: Box::new(e) })?;
            let w = traj.final_assignment();
            let labels = match variant {
                SampleVariant::Categorical => sample_categorical(&w, &mut rng),
                SampleVariant::Rounding => round_assignment(&w),
            };
            Ok(Sample { labels, final_chart: traj.final_chart().clone(), early_exit: traj.early_exit })
        })
        .collect()
}

/// Writes final chart states as `AFGX`: magic, `u32` n, `u32` c, `u64`
/// count, then `count · n · c` little-endian `f64`s.
pub fn write_chart_states<W: Write>(mut w: W, n: usize, c: usize, states: &[TangentField]) -> Result<()> {
    w.write_all(CHART_MAGIC)?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(c as u32).to_le_bytes())?;
    w.write_all(&(states.len() as u64).to_le_bytes())?;
    for s in states {
        if (s.n(), s.c()) != (n, c) {
            return Err(Error::Shape("chart state shape differs from header".into()));
        }
        for v in s.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_chart_states<R: Read>(mut r: R) -> Result<(usize, usize, Vec<TangentField>)> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header)?;
    if &header[..4] != CHART_MAGIC {
        return Err(Error::Format("missing AFGX magic".into()));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; n * c * 8];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let data: Vec<f64> = buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        out.push(TangentField::from_matrix(NodeMatrix::new(n, c, data)?));
    }
    Ok((n, c, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_match::target_direction;
    use crate::geometry::project_tangent;
    use crate::payoff::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(n: usize, c: usize) -> PayoffModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        PayoffModel::init(Architecture::new(n, c, 4), &mut rng).unwrap()
    }

    /// A model whose output is the constant `b3` (all weights zero).
    fn constant_model(v: &[f64], c: usize) -> PayoffModel {
        let mut m = zero_model(1, c);
        let k = m.num_params();
        m.params_mut()[k - c..].copy_from_slice(v);
        m
    }

    #[test]
    fn zero_field_keeps_initial_state() {
        let model = zero_model(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = sample_reference_chart(2, 3, &mut rng);
        let traj = integrate(&model, &x0, &IntegratorConfig::default()).unwrap();
        assert_eq!(traj.final_chart(), &x0);
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn constant_field_matches_closed_form() {
        let b = LabelConfig::from_one_based(&[2], 3).unwrap();
        let v = target_direction(&b, 3);
        let model = constant_model(v.as_slice(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = sample_reference_chart(1, 3, &mut rng);
        let cfg = IntegratorConfig { t_max: 7.0, early_exit: false, ..Default::default() };
        let traj = integrate(&model, &x0, &cfg).unwrap();
        let expect = x0.add_scaled(&v, 7.0);
        for (a, e) in traj.final_chart().as_slice().iter().zip(expect.as_slice()) {
            assert!((a - e).abs() < 1e-8);
        }
        let f = chart_field(&model, &x0, 0.3).unwrap();
        assert!(f.as_slice().iter().zip(v.as_slice()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn early_exit_triggers_near_vertex() {
        let b = LabelConfig::from_one_based(&[1], 2).unwrap();
        let v = target_direction(&b, 2).scaled(4.0);
        let model = constant_model(v.as_slice(), 2);
        let cfg = IntegratorConfig { t_max: 100.0, ..Default::default() };
        let traj = integrate(&model, &TangentField::zeros(1, 2), &cfg).unwrap();
        assert!(traj.early_exit);
        assert!(*traj.times.last().unwrap() < 100.0);
        assert_eq!(round_assignment(&traj.final_assignment()), b);
    }

    #[test]
    fn step_limits_are_reported() {
        let b = LabelConfig::from_one_based(&[1], 2).unwrap();
        let model = constant_model(target_direction(&b, 2).as_slice(), 2);
        let cfg = IntegratorConfig { max_steps: 2, h_init: 1e-3, early_exit: false, ..Default::default() };
        let err = integrate(&model, &TangentField::zeros(1, 2), &cfg).unwrap_err();
        assert!(matches!(err, Error::MaxSteps { .. }));
        let stiff = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -1e12 * y[0];
            Ok(())
        };
        let cfg = IntegratorConfig { h_min: 1e-3, h_init: 0.5, ..Default::default() };
        let err = dopri5(stiff, 0.0, vec![1.0], 1.0, &cfg, |_| false, false).unwrap_err();
        assert!(matches!(err, Error::StepTooSmall { .. }));
    }

    #[test]
    fn dopri_solves_exponential_decay() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        let cfg = IntegratorConfig { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let sol = dopri5(f, 0.0, vec![1.0], 2.0, &cfg, |_| false, false).unwrap();
        assert!((sol.final_state()[0] - (-2.0f64).exp()).abs() < 1e-9);
        assert_eq!(sol.final_time(), 2.0);
    }

    #[test]
    fn rounding_examples() {
        let b = LabelConfig::from_one_based(&[2, 1, 3], 3).unwrap();
        let e = b.to_extreme(3);
        let w = Assignment::new(3, 3, e.into_vec()).unwrap();
        assert_eq!(round_assignment(&w), b);
        let tie = Assignment::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(round_assignment(&tie).labels(), &[0]);
    }

    #[test]
    fn rounding_matches_region_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let raw: Vec<f64> = (0..6).map(|_| (rng.random_range(0..4) as f64) * 0.5).collect();
            let w = lift_barycenter(&project_tangent(&NodeMatrix::new(2, 3, raw).unwrap()).unwrap());
            let r = round_assignment(&w);
            for beta in LabelConfig::all(2, 3).unwrap() {
                assert_eq!(in_rounding_region(&w, &beta), beta == r);
            }
        }
    }

    #[test]
    fn categorical_sampling_frequencies() {
        let w = Assignment::new(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        let k = 50_000;
        for _ in 0..k {
            counts[sample_categorical(&w, &mut rng).labels()[0]] += 1;
        }
        for (j, p) in [0.2, 0.5, 0.3].iter().enumerate() {
            let se = (p * (1.0 - p) / k as f64).sqrt();
            assert!((counts[j] as f64 / k as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_zero_field_is_uniform() {
        let model = zero_model(2, 2);
        let cfg = IntegratorConfig::default();
        let a = sample(&model, &cfg, SampleVariant::Categorical, 9, 4000).unwrap();
        let b = sample(&model, &cfg, SampleVariant::Categorical, 9, 4000).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.labels == y.labels && x.final_chart == y.final_chart));
        for node in 0..2 {
            let ones = a.iter().filter(|s| s.labels.labels()[node] == 0).count() as f64 / 4000.0;
            assert!((ones - 0.5).abs() < 4.0 * (0.25f64 / 4000.0).sqrt());
        }
        assert!(sample(&model, &cfg, SampleVariant::Rounding, 9, 0).unwrap().is_empty());
    }

    #[test]
    fn chart_sidecar_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states: Vec<TangentField> = (0..3).map(|_| sample_reference_chart(2, 3, &mut rng)).collect();
        let mut buf = Vec::new();
        write_chart_states(&mut buf, 2, 3, &states).unwrap();
        let (n, c, back) = read_chart_states(&buf[..]).unwrap();
        assert_eq!((n, c), (2, 3));
        assert_eq!(back, states);
    }
}
