//! Integrates assignment flows with the adaptive Dormand–Prince solver. A
//! constant payoff has a closed-form solution, which makes the solver's
//! accuracy visible across tolerances; the same machinery then carries a
//! random initial point to a vertex.

use afgen::flow_match::{conditional_flow, sample_reference_chart, target_direction};
use afgen::geometry::TangentField;
use afgen::integrate::{dopri5, integrate, round_assignment, IntegratorConfig};
use afgen::meta_simplex::LabelConfig;
use afgen::numeric::stream_rng;
use afgen::payoff::{Architecture, PayoffModel};

fn main() -> afgen::Result<()> {
    let (n, c, lambda, t_max) = (3, 4, 1.0, 5.0);
    let beta = LabelConfig::from_one_based(&[2, 4, 1], c)?;
    let v = target_direction(&beta, c);
    let g = sample_reference_chart(n, c, &mut stream_rng(7, 0));
    let exact = conditional_flow(&g, &v, t_max, lambda);

    // Ambient replicator ODE W' = R_W[λV] with the closed-form endpoint as oracle.
    let rhs = |_t: f64, w: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let row = &w[i * c..(i + 1) * c];
            let f = v.row(i);
            let mean: f64 = row.iter().zip(f).map(|(p, q)| p * q).sum();
            for j in 0..c {
                out[i * c + j] = row[j] * (lambda * f[j] - lambda * mean);
            }
        }
        Ok(())
    };
    let w0 = afgen::geometry::lift_barycenter(&g);
    println!("rtol      steps  endpoint error");
    for rtol in [1e-4, 1e-6, 1e-8, 1e-10] {
        let cfg = IntegratorConfig { t_max, rtol, atol: rtol * 1e-2, early_exit: false, ..Default::default() };
        let sol = dopri5(rhs, 0.0, w0.as_slice().to_vec(), t_max, &cfg, |_| false, false)?;
        let err = sol.final_state().iter().zip(exact.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{rtol:<8.0e}  {:>5}  {err:.2e}", sol.accepted);
    }

    // A payoff network whose last layer is zero leaves every point fixed;
    // perturbing it shows a nontrivial trajectory in the chart.
    let arch = Architecture::new(n, c, 16);
    let mut model = PayoffModel::init(arch, &mut stream_rng(1, 0))?;
    let mut rng = stream_rng(1, 1);
    for (k, p) in model.params_mut().iter_mut().enumerate() {
        *p += 0.3 * ((k as f64 * 1.618).sin() + rand::Rng::random::<f64>(&mut rng) - 0.5);
    }
    let x0: TangentField = sample_reference_chart(n, c, &mut stream_rng(1, 2));
    let traj = integrate(&model, &x0, &IntegratorConfig { t_max: 20.0, ..Default::default() })?;
    println!("\nrandom network: {} accepted, {} rejected steps, early exit {}", traj.accepted, traj.rejected, traj.early_exit);
    for (t, x) in traj.times.iter().zip(&traj.chart_states).step_by((traj.times.len() / 6).max(1)) {
        let w = afgen::geometry::lift_barycenter(x);
        println!("  t = {t:>7.3}  min_i max_j W_ij = {:.4}", w.min_max_prob());
    }
    println!("rounded endpoint: ({})", round_assignment(&traj.final_assignment()));
    Ok(())
}
