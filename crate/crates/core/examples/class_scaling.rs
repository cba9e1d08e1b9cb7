//! Fits random factorizing targets on four nodes for a growing number of
//! classes and reports the histogram KL of the learned model next to the
//! uniform baseline. A reduced version of the `afgen class-scaling` command.

use afgen::cli::experiments::{class_scaling, class_scaling_csv};
use afgen::cli::RunConfig;
use afgen::payoff::Context;

fn main() -> afgen::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.class_scaling.classes = vec![2, 3, 4];
    cfg.class_scaling.train_size = 5000;
    cfg.class_scaling.sample_counts = vec![50_000];
    cfg.model.context = Context::None;
    cfg.train.steps = 1500;
    cfg.train.batch_size = 128;
    cfg.train.final_lr_fraction = 0.05;
    cfg.integrator.rtol = 1e-4;

    let rows = class_scaling(&cfg, |row| {
        if let Some(r) = &row.report {
            println!(
                "c = {:<3} N = {:<6} KL = {:.4} nats  (uniform {:.4}, noise floor {:.4})  {:.1} s",
                row.c,
                r.c.pow(r.n as u32),
                r.kl,
                r.uniform_kl,
                r.noise_floor,
                row.wall_ms as f64 / 1000.0
            );
        } else {
            println!("c = {:<3} {}", row.c, row.status);
        }
    })?;
    print!("\n{}", class_scaling_csv(&rows));
    Ok(())
}
