#![allow(dead_code)]

use afgen::cli::experiments::{draw_from_joint, toy_target};
use afgen::flow_match::{train, FlowMatchConfig};
use afgen::meta_simplex::LabelConfig;
use afgen::numeric::stream_rng;
use afgen::payoff::{Architecture, Context, PayoffModel};

pub fn toy_data(count: usize) -> Vec<LabelConfig> {
    draw_from_joint(&toy_target(), count, &mut stream_rng(1, 0))
}

/// The toy model trained briefly; good enough for structural checks.
pub fn quick_toy_model(steps: usize) -> PayoffModel {
    let arch = Architecture::new(2, 2, 16).with_context(Context::Concat).with_node_id(true);
    let model = PayoffModel::init(arch, &mut stream_rng(2, 0)).unwrap();
    let cfg = FlowMatchConfig { steps, batch_size: 64, final_lr_fraction: 0.1, ..Default::default() };
    train(&cfg, &toy_data(2000), model).unwrap().model
}

/// A zero-initialized model (its field vanishes everywhere).
pub fn zero_model(n: usize, c: usize) -> PayoffModel {
    PayoffModel::init(Architecture::new(n, c, 8), &mut stream_rng(0, 0)).unwrap()
}
