use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::{Error, Result};
use crate::flow_match::{train, train_resume, FlowMatchConfig};
use crate::geometry::{Assignment, NodeMatrix};
use crate::integrate::{sample, write_chart_states, IntegratorConfig};
use crate::likelihood::{kl_surrogate, LikelihoodConfig};
use crate::meta_simplex::{embed_t, entropy, kl, marginalize, proj_to_t, DenseJoint, LabelConfig};
use crate::numeric::stream_rng;
use crate::payoff::PayoffModel;

use super::config::{ClassScalingConfig, ModelConfig, RunConfig, SampleConfig};
use super::dataset::{records_to_text, Dataset};
use super::experiments::{class_scaling, class_scaling_csv, draw_from_joint, histogram_report};
use super::manifest::{write_atomic, write_text_atomic, RunManifest};
use super::{
    Cli, ClassScalingArgs, Command, EvalKlArgs, IntegratorFlags, LikelihoodArgs, LikelihoodFlags, ModelFlags,
    OracleOp, SampleArgs, SampleFlags, TrainArgs, TrainFlags,
};

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ModelFlags {
    fn apply(&self, m: &mut ModelConfig) {
        set(&mut m.hidden, self.hidden);
        set(&mut m.time_dim, self.time_dim);
        set(&mut m.context, self.context);
        set(&mut m.node_id, self.node_id);
        if self.embed_dim.is_some() {
            m.embed_dim = self.embed_dim;
        }
    }
}

impl TrainFlags {
    fn apply(&self, t: &mut FlowMatchConfig) {
        set(&mut t.steps, self.steps);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.final_lr_fraction, self.final_lr_fraction);
        set(&mut t.lambda_rate, self.lambda_rate);
        set(&mut t.time_dist_rate, self.time_dist_rate);
        set(&mut t.log_every, self.log_every);
    }
}

impl IntegratorFlags {
    fn apply(&self, i: &mut IntegratorConfig) {
        set(&mut i.t_max, self.t_max);
        set(&mut i.rtol, self.rtol);
        set(&mut i.atol, self.atol);
        set(&mut i.h_init, self.h_init);
        set(&mut i.h_min, self.h_min);
        set(&mut i.h_max, self.h_max);
        set(&mut i.max_steps, self.max_steps);
        if self.no_early_exit {
            i.early_exit = false;
        }
    }
}

impl SampleFlags {
    fn apply(&self, s: &mut SampleConfig) {
        set(&mut s.count, self.count);
        set(&mut s.variant, self.variant);
        if self.chart_states {
            s.chart_states = true;
        }
    }
}

impl LikelihoodFlags {
    fn apply(&self, l: &mut LikelihoodConfig) {
        set(&mut l.num_proposal_samples, self.num_proposal_samples);
        set(&mut l.num_hutchinson, self.num_hutchinson);
        set(&mut l.hutchinson_dist, self.hutchinson_dist);
        set(&mut l.proposal, self.proposal);
        set(&mut l.proposal_sigma, self.proposal_sigma);
        set(&mut l.pilot_samples, self.pilot_samples);
        if self.proposal_center_time.is_some() {
            l.proposal_center_time = self.proposal_center_time;
        }
        set(&mut l.model_variant, self.model_variant);
        set(&mut l.lambda_rate, self.lambda_rate);
    }
}

pub(super) fn dispatch(cli: &Cli, mut cfg: RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = cli.out_dir.as_path();
    match &cli.command {
        Command::Train(a) => {
            a.model.apply(&mut cfg.model);
            a.train.apply(&mut cfg.train);
            cmd_train(a, &cfg, dir, out)
        }
        Command::Sample(a) => {
            a.sample.apply(&mut cfg.sample);
            a.integrator.apply(&mut cfg.integrator);
            cmd_sample(a, &cfg, dir, out)
        }
        Command::EvalKl(a) => {
            a.sample.apply(&mut cfg.sample);
            a.integrator.apply(&mut cfg.integrator);
            cmd_eval_kl(a, &cfg, dir, out)
        }
        Command::ClassScaling(a) => {
            apply_class_scaling(a, &mut cfg);
            cmd_class_scaling(&cfg, dir, out)
        }
        Command::Likelihood(a) => {
            a.likelihood.apply(&mut cfg.likelihood);
            a.integrator.apply(&mut cfg.integrator);
            cmd_likelihood(a, &cfg, dir, out)
        }
        Command::Oracle(a) => cmd_oracle(&a.op, &cfg, dir, out),
    }
}

fn apply_class_scaling(a: &ClassScalingArgs, cfg: &mut RunConfig) {
    let cs: &mut ClassScalingConfig = &mut cfg.class_scaling;
    set(&mut cs.n, a.n);
    set(&mut cs.classes, a.classes.clone());
    set(&mut cs.train_size, a.train_size);
    set(&mut cs.sample_counts, a.sample_counts.clone());
    set(&mut cs.dirichlet_alpha, a.dirichlet_alpha);
    set(&mut cfg.sample.variant, a.variant);
    a.model.apply(&mut cfg.model);
    a.train.apply(&mut cfg.train);
    a.integrator.apply(&mut cfg.integrator);
}

fn start(command: &str, cfg: &RunConfig, dir: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let m = RunManifest::start(command, cfg, cfg.seeds())?;
    let config_path = dir.join(format!("{command}.config.toml"));
    write_text_atomic(&config_path, &cfg.to_toml()?)?;
    Ok(m)
}

fn load_checkpoint(path: &Path) -> Result<(PayoffModel, Option<crate::payoff::Adam>)> {
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot open checkpoint {}: {e}", path.display())))?;
    PayoffModel::read_from(BufReader::new(file))
}

fn load_joint(path: &Path) -> Result<DenseJoint> {
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot open joint {}: {e}", path.display())))?;
    DenseJoint::read_from(BufReader::new(file))
}

fn save_joint(path: &Path, p: &DenseJoint) -> Result<()> {
    write_atomic(path, |w| p.write_to(w))
}

fn join_values(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(|ch: char| ch == ',' || ch.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("invalid number `{t}`"))))
        .collect()
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let data = Dataset::read(&a.data, None)?.non_empty()?;
    let mut manifest = start("train", cfg, dir)?;
    manifest.input(&a.data);
    let result = match &a.resume {
        Some(ckpt) => {
            manifest.input(ckpt);
            let (model, adam) = load_checkpoint(ckpt)?;
            let adam = adam.ok_or_else(|| Error::Config(format!("checkpoint {} has no optimizer state", ckpt.display())))?;
            train_resume(&cfg.train, &data.records, model, adam)?
        }
        None => {
            let arch = cfg.model.architecture(data.n, data.c);
            let model = PayoffModel::init(arch, &mut stream_rng(cfg.seed, 0))?;
            train(&cfg.train, &data.records, model)?
        }
    };

    let ckpt = dir.join("checkpoint.afgp");
    write_atomic(&ckpt, |w| result.model.write_to(w, Some(&result.optimizer)))?;
    let mut csv = String::from("step,wall_ms,loss\n");
    for r in &result.trace {
        let _ = writeln!(csv, "{},{},{}", r.step, r.wall_ms, r.loss);
    }
    let loss_path = dir.join("loss.csv");
    write_text_atomic(&loss_path, &csv)?;
    manifest.output(&ckpt);
    manifest.output(&loss_path);
    let final_loss = result.trace.last().map(|r| r.loss);
    manifest.results = json!({
        "num_params": result.model.num_params(),
        "steps_taken": result.optimizer.steps_taken(),
        "final_loss": final_loss,
        "dataset_size": data.records.len(),
    });
    manifest.finish(dir)?;
    writeln!(
        out,
        "trained {} parameters for {} steps on {} configurations (n={}, c={}); final batch loss {}",
        result.model.num_params(),
        result.optimizer.steps_taken(),
        data.records.len(),
        data.n,
        data.c,
        final_loss.map_or("n/a".to_string(), |l| l.to_string()),
    )?;
    Ok(())
}

fn draw_model_samples(
    model: &PayoffModel,
    cfg: &RunConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<LabelConfig>> {
    let samples = sample(model, &cfg.integrator, cfg.sample.variant, cfg.seed, cfg.sample.count)?;
    if cfg.sample.chart_states {
        let path = dir.join("chart_states.afgx");
        let states: Vec<_> = samples.iter().map(|s| s.final_chart.clone()).collect();
        write_atomic(&path, |w| write_chart_states(w, model.arch().n, model.arch().c, &states))?;
        manifest.output(&path);
    }
    let early = samples.iter().filter(|s| s.early_exit).count();
    manifest.results = json!({
        "count": samples.len(),
        "variant": cfg.sample.variant,
        "early_exits": early,
    });
    Ok(samples.into_iter().map(|s| s.labels).collect())
}

fn cmd_sample(a: &SampleArgs, cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let mut manifest = start("sample", cfg, dir)?;
    manifest.input(&a.checkpoint);
    let labels = draw_model_samples(&model, cfg, dir, &mut manifest)?;
    let path = dir.join("samples.txt");
    write_text_atomic(&path, &records_to_text(&labels))?;
    manifest.output(&path);
    manifest.finish(dir)?;
    writeln!(out, "wrote {} samples ({:?}) to {}", labels.len(), cfg.sample.variant, path.display())?;
    Ok(())
}

fn cmd_eval_kl(a: &EvalKlArgs, cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let target = load_joint(&a.target)?;
    let shape = (target.n(), target.c());
    let mut manifest = start("eval-kl", cfg, dir)?;
    manifest.input(&a.target);
    let samples = match (&a.samples, &a.checkpoint) {
        (Some(path), _) => {
            manifest.input(path);
            Dataset::read(path, Some(shape))?.records
        }
        (None, Some(ckpt)) => {
            manifest.input(ckpt);
            let (model, _) = load_checkpoint(ckpt)?;
            if (model.arch().n, model.arch().c) != shape {
                return Err(Error::Shape(format!(
                    "model has n={} c={}, target has n={} c={}",
                    model.arch().n,
                    model.arch().c,
                    shape.0,
                    shape.1
                )));
            }
            draw_model_samples(&model, cfg, dir, &mut manifest)?
        }
        (None, None) => return Err(Error::Config("eval-kl needs --samples or --checkpoint".into())),
    };
    let report = histogram_report(&target, &samples)?;
    let path = dir.join("eval_kl.json");
    write_text_atomic(&path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    manifest.output(&path);
    manifest.results = serde_json::to_value(&report)?;
    manifest.finish(dir)?;
    writeln!(out, "samples      {}", report.num_samples)?;
    writeln!(out, "kl_nats      {}", report.kl)?;
    writeln!(out, "noise_floor  {}", report.noise_floor)?;
    writeln!(out, "tv           {}", report.tv)?;
    writeln!(out, "uniform_kl   {}", report.uniform_kl)?;
    Ok(())
}

fn cmd_class_scaling(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    cfg.class_scaling.validate()?;
    let mut manifest = start("class-scaling", cfg, dir)?;
    let rows = class_scaling(cfg, |row| {
        let kl = row.report.as_ref().map_or("-".to_string(), |r| r.kl.to_string());
        let _ = writeln!(out, "c={:<4} kl={kl} status={} ({} ms)", row.c, row.status, row.wall_ms);
    })?;
    let path = dir.join("results.csv");
    write_text_atomic(&path, &class_scaling_csv(&rows))?;
    manifest.output(&path);
    manifest.results = json!({
        "target_marginals": "per-node Dirichlet(alpha)",
        "rows": rows,
    });
    manifest.finish(dir)?;
    Ok(())
}

fn cmd_likelihood(a: &LikelihoodArgs, cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let data = Dataset::read(&a.data, None)?.non_empty()?;
    if (data.n, data.c) != (model.arch().n, model.arch().c) {
        return Err(Error::Shape(format!(
            "data has n={} c={}, model has n={} c={}",
            data.n,
            data.c,
            model.arch().n,
            model.arch().c
        )));
    }
    let mut manifest = start("likelihood", cfg, dir)?;
    manifest.input(&a.checkpoint);
    manifest.input(&a.data);
    let (summary, per) = kl_surrogate(&model, &data.records, &cfg.likelihood, &cfg.integrator)?;

    let mut csv = String::from("index,labels,log_prob_nats,std_error,ess,all_weights_zero\n");
    for (i, (beta, r)) in data.records.iter().zip(&per).enumerate() {
        let _ = writeln!(csv, "{i},{beta},{},{},{},{}", r.log_prob, r.std_error, r.ess, r.all_weights_zero);
    }
    let csv_path = dir.join("likelihood.csv");
    write_text_atomic(&csv_path, &csv)?;
    let summary_path = dir.join("likelihood_summary.json");
    write_text_atomic(&summary_path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    manifest.output(&csv_path);
    manifest.output(&summary_path);
    manifest.results = serde_json::to_value(&summary)?;
    manifest.finish(dir)?;

    let ln2 = std::f64::consts::LN_2;
    let nd = data.n as f64;
    writeln!(out, "test configurations   {}", data.records.len())?;
    writeln!(out, "mean -log p (nats)    {} ± {} spread, ± {} per-datum SE", summary.mean_nll, summary.nll_spread, summary.mean_std_error)?;
    writeln!(
        out,
        "bits/dim              {} ± {} spread, ± {} per-datum SE",
        summary.bits_per_dim,
        summary.nll_spread / (nd * ln2),
        summary.mean_std_error / (nd * ln2)
    )?;
    if summary.failed > 0 {
        writeln!(out, "zero-probability estimates excluded: {}", summary.failed)?;
    }
    Ok(())
}

fn cmd_oracle(op: &OracleOp, cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let mut manifest = RunManifest::start("oracle", cfg, cfg.seeds())?;
    let mut text = String::new();
    let mut inputs: Vec<PathBuf> = Vec::new();
    let mut outputs: Vec<PathBuf> = Vec::new();
    match op {
        OracleOp::Embed { n, c, values } => {
            let values = parse_values(values)?;
            let rows = NodeMatrix::new(*n, *c, values.clone())?;
            if rows.rows().any(|r| (r.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
                return Err(Error::Domain("every row of the assignment must sum to 1".into()));
            }
            let w = Assignment::new(*n, *c, values)?;
            let p = embed_t(&w)?;
            let _ = writeln!(text, "{}", join_values(p.probs()));
        }
        OracleOp::Marginalize { joint } => {
            inputs.push(joint.clone());
            let m = marginalize(&load_joint(joint)?);
            for row in m.rows() {
                let _ = writeln!(text, "{}", join_values(row));
            }
        }
        OracleOp::Entropy { joint } => {
            inputs.push(joint.clone());
            let _ = writeln!(text, "{}", entropy(&load_joint(joint)?));
        }
        OracleOp::Kl { p, q } => {
            inputs.extend([p.clone(), q.clone()]);
            let _ = writeln!(text, "{}", kl(&load_joint(p)?, &load_joint(q)?)?);
        }
        OracleOp::ProjT { joint, out: target } => {
            inputs.push(joint.clone());
            let w = proj_to_t(&load_joint(joint)?)?;
            for row in w.rows() {
                let _ = writeln!(text, "{}", join_values(row));
            }
            if let Some(path) = target {
                save_joint(path, &embed_t(&w)?)?;
                outputs.push(path.clone());
            }
        }
        OracleOp::WriteJoint { n, c, probs, out: path } => {
            let p = DenseJoint::new(*n, *c, parse_values(probs)?)?;
            save_joint(path, &p)?;
            outputs.push(path.clone());
        }
        OracleOp::Sample { joint, count, out: path } => {
            inputs.push(joint.clone());
            let p = load_joint(joint)?;
            let records = draw_from_joint(&p, *count, &mut stream_rng(cfg.seed, 0));
            let data = Dataset { n: p.n(), c: p.c(), records, provenance: joint.display().to_string() };
            write_text_atomic(path, &data.to_text())?;
            outputs.push(path.clone());
        }
    }
    out.write_all(text.as_bytes())?;
    std::fs::create_dir_all(dir)?;
    inputs.iter().for_each(|p| manifest.input(p));
    outputs.iter().for_each(|p| manifest.output(p));
    manifest.results = json!({ "operation": format!("{op:?}"), "stdout": text });
    manifest.finish(dir)?;
    Ok(())
}
