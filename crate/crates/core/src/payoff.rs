//! Parametrized payoff functions `F_θ(W, t)` with hand-written reverse-mode
//! gradients of the flow-matching residual.
//!
//! The network is a per-node MLP with weights shared across nodes. Its input
//! for node `i` is the chart coordinate `x_i = π0 log W_i` (optionally mapped
//! through an embedding matrix `E`), a sinusoidal time embedding, an optional
//! context block built from all nodes, and an optional node one-hot. Two
//! softplus hidden layers follow. The embedded variant returns `Eᵀ o` so the
//! output lives in `R^c` again.

use std::io::{Read, Write};
use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{lift_inverse_barycenter, Assignment, NodeMatrix, TangentField};
use crate::numeric::{pairwise_sum, pairwise_sum_vecs, sigmoid, softplus};

const CHECKPOINT_MAGIC: &[u8; 4] = b"AFGP";
const CHECKPOINT_VERSION: u32 = 1;
const ADAM_MAGIC: &[u8; 4] = b"ADAM";

/// How information from other nodes enters a node's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    /// Nodes evolve independently.
    None,
    /// Mean of all node features (permutation invariant).
    Mean,
    /// All node features concatenated in node order.
    Concat,
}

/// Shape of the payoff network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n: usize,
    pub c: usize,
    pub hidden: usize,
    /// Length of the sinusoidal time embedding (even).
    pub time_dim: usize,
    pub context: Context,
    /// Append a one-hot node identifier to every node input.
    pub node_id: bool,
    /// `Some(L)` selects the embedded variant with an `L × c` matrix `E`.
    pub embed_dim: Option<usize>,
}

impl Architecture {
    pub fn new(n: usize, c: usize, hidden: usize) -> Self {
        Self { n, c, hidden, time_dim: 16, context: Context::None, node_id: false, embed_dim: None }
    }

    pub fn with_context(mut self, context: Context) -> Self {
        self.context = context;
        self
    }

    pub fn with_node_id(mut self, on: bool) -> Self {
        self.node_id = on;
        self
    }

    pub fn with_embedding(mut self, l: usize) -> Self {
        self.embed_dim = Some(l);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c < 2 || self.hidden == 0 {
            return Err(Error::Config("architecture needs n ≥ 1, c ≥ 2, hidden ≥ 1".into()));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even".into()));
        }
        if self.embed_dim == Some(0) {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    /// Per-node feature width seen by the MLP.
    fn feat(&self) -> usize {
        self.embed_dim.unwrap_or(self.c)
    }

    fn ctx_dim(&self) -> usize {
        match self.context {
            Context::None => 0,
            Context::Mean => self.feat(),
            Context::Concat => self.n * self.feat(),
        }
    }

    fn in_dim(&self) -> usize {
        self.feat() + self.time_dim + self.ctx_dim() + if self.node_id { self.n } else { 0 }
    }

    fn layout(&self) -> Layout {
        let (f, h, d) = (self.feat(), self.hidden, self.in_dim());
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let e = take(if self.embed_dim.is_some() { f * self.c } else { 0 });
        let w1 = take(h * d);
        let b1 = take(h);
        let w2 = take(h * h);
        let b2 = take(h);
        let w3 = take(f * h);
        let b3 = take(f);
        Layout { e, w1, b1, w2, b2, w3, b3, total: at }
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct Layout {
    e: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    total: usize,
}

/// Sinusoidal embedding with frequencies `2^{-k}`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let (s, c) = (t * 0.5f64.powi(k as i32)).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

/// `y = A x + b` for a row-major `A` with `b.len()` rows.
fn affine(a: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, out) in y.iter_mut().enumerate() {
        let row = &a[r * cols..(r + 1) * cols];
        *out = b[r] + row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
    }
}

/// `dx += Aᵀ dy`, `dA += dy xᵀ`, `db += dy`.
fn affine_backward(a: &[f64], x: &[f64], dy: &[f64], da: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        db[r] += g;
        if g != 0.0 {
            for (d, &xi) in da[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *d += g * xi;
            }
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                for (d, &ai) in dx.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
                    *d += g * ai;
                }
            }
        }
    }
}

fn check_finite(xs: &[f64], layer: usize) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLayer { layer })
    }
}

/// Intermediate values of one node's MLP evaluation.
struct NodeTape {
    input: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

struct Tape {
    nodes: Vec<NodeTape>,
}

/// One flow-matching training example: the sampled state `w`, its time and
/// the regression target for the payoff (typically `λ V_β`).
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub w: Assignment,
    pub t: f64,
    pub target: TangentField,
}

/// Squared Fisher–Rao norm of `R_W[v − f]` summed over nodes, and its
/// gradient with respect to `f`.
///
/// Per node this is the `W`-weighted variance of the residual
/// `r = v − f`: `Σ_j W_j (r_j − ⟨W, r⟩)²`.
pub fn residual_loss(w: &Assignment, target: &NodeMatrix, f: &NodeMatrix) -> (f64, NodeMatrix) {
    let (n, c) = (w.n(), w.c());
    let mut grad = NodeMatrix::zeros(n, c);
    let mut loss = 0.0;
    let mut r = vec![0.0; c];
    for i in 0..n {
        let wi = w.row(i);
        for ((rj, &v), &fj) in r.iter_mut().zip(target.row(i)).zip(f.row(i)) {
            *rj = v - fj;
        }
        let m: f64 = wi.iter().zip(&r).map(|(a, b)| a * b).sum();
        let g = grad.row_mut(i);
        for j in 0..c {
            let d = r[j] - m;
            loss += wi[j] * d * d;
            g[j] = -2.0 * wi[j] * d;
        }
    }
    (loss, grad)
}

/// A payoff network together with its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffModel {
    arch: Architecture,
    theta: Vec<f64>,
}

impl PayoffModel {
    /// He-uniform hidden layers, zero final layer, `E` initialized to the
    /// (padded) identity. The initial model is the zero field.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let lay = arch.layout();
        let mut theta = vec![0.0; lay.total];
        if let Some(l) = arch.embed_dim {
            for k in 0..l.min(arch.c) {
                theta[lay.e.start + k * arch.c + k] = 1.0;
            }
        }
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let a1 = he(arch.in_dim());
        for p in &mut theta[lay.w1.clone()] {
            *p = rng.random_range(-a1..a1);
        }
        let a2 = he(arch.hidden);
        for p in &mut theta[lay.w2.clone()] {
            *p = rng.random_range(-a2..a2);
        }
        Ok(Self { arch, theta })
    }

    pub fn from_params(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.num_params() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.num_params(),
                theta.len()
            )));
        }
        Ok(Self { arch, theta })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn check_shape(&self, n: usize, c: usize) -> Result<()> {
        if (n, c) != (self.arch.n, self.arch.c) {
            return Err(Error::Shape(format!(
                "model expects n={}, c={}, got n={n}, c={c}",
                self.arch.n, self.arch.c
            )));
        }
        Ok(())
    }

    /// `F_θ(W, t)`.
    pub fn forward(&self, w: &Assignment, t: f64) -> Result<NodeMatrix> {
        self.check_shape(w.n(), w.c())?;
        let x = lift_inverse_barycenter(w);
        self.forward_chart(x.matrix(), t)
    }

    /// `F_θ` evaluated at `W = softmax(x)` given the chart coordinates `x`.
    /// Rows of `x` need not be centered; only `π0 x` matters.
    pub fn forward_chart(&self, x: &NodeMatrix, t: f64) -> Result<NodeMatrix> {
        self.check_shape(x.n(), x.c())?;
        let tape = self.run(x, t)?;
        Ok(self.output(&tape))
    }

    fn output(&self, tape: &Tape) -> NodeMatrix {
        let (n, c) = (self.arch.n, self.arch.c);
        let lay = self.arch.layout();
        let mut f = NodeMatrix::zeros(n, c);
        for (i, node) in tape.nodes.iter().enumerate() {
            let row = f.row_mut(i);
            match self.arch.embed_dim {
                None => row.copy_from_slice(&node.out),
                Some(_) => {
                    let e = &self.theta[lay.e.clone()];
                    for (l, &o) in node.out.iter().enumerate() {
                        for (j, r) in row.iter_mut().enumerate() {
                            *r += e[l * c + j] * o;
                        }
                    }
                }
            }
        }
        f
    }

    fn run(&self, x: &NodeMatrix, t: f64) -> Result<Tape> {
        if !t.is_finite() {
            return Err(Error::NonFinite("payoff time"));
        }
        let arch = &self.arch;
        let (n, c, fdim, h) = (arch.n, arch.c, arch.feat(), arch.hidden);
        let lay = arch.layout();
        let th = &self.theta;

        // node features: centered chart coordinates, optionally embedded
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let row = x.row(i);
                let mean = row.iter().sum::<f64>() / c as f64;
                let xc: Vec<f64> = row.iter().map(|v| v - mean).collect();
                match arch.embed_dim {
                    None => xc,
                    Some(l) => {
                        let e = &th[lay.e.clone()];
                        (0..l).map(|k| (0..c).map(|j| e[k * c + j] * xc[j]).sum()).collect()
                    }
                }
            })
            .collect();
        for f in &feats {
            check_finite(f, 0)?;
        }

        let temb = time_embedding(t, arch.time_dim);
        let ctx: Vec<f64> = match arch.context {
            Context::None => Vec::new(),
            Context::Mean => {
                let mut m = vec![0.0; fdim];
                for f in &feats {
                    for (a, b) in m.iter_mut().zip(f) {
                        *a += b / n as f64;
                    }
                }
                m
            }
            Context::Concat => feats.concat(),
        };

        let mut nodes = Vec::with_capacity(n);
        for (i, feat) in feats.iter().enumerate() {
            let mut input = Vec::with_capacity(arch.in_dim());
            input.extend_from_slice(feat);
            input.extend_from_slice(&temb);
            input.extend_from_slice(&ctx);
            if arch.node_id {
                input.extend((0..n).map(|k| if k == i { 1.0 } else { 0.0 }));
            }
            let mut z1 = vec![0.0; h];
            affine(&th[lay.w1.clone()], &th[lay.b1.clone()], &input, &mut z1);
            let h1: Vec<f64> = z1.iter().map(|&z| softplus(z)).collect();
            check_finite(&h1, 1)?;
            let mut z2 = vec![0.0; h];
            affine(&th[lay.w2.clone()], &th[lay.b2.clone()], &h1, &mut z2);
            let h2: Vec<f64> = z2.iter().map(|&z| softplus(z)).collect();
            check_finite(&h2, 2)?;
            let mut out = vec![0.0; fdim];
            affine(&th[lay.w3.clone()], &th[lay.b3.clone()], &h2, &mut out);
            check_finite(&out, 3)?;
            nodes.push(NodeTape { input, z1, h1, z2, h2, out });
        }
        Ok(Tape { nodes })
    }

    /// Accumulates `∂/∂θ ⟨dF, F_θ(x, t)⟩` into `grad`.
    fn backward(&self, x: &NodeMatrix, tape: &Tape, df: &NodeMatrix, grad: &mut [f64]) {
        let arch = &self.arch;
        let (n, c, fdim, h) = (arch.n, arch.c, arch.feat(), arch.hidden);
        let lay = arch.layout();
        let th = &self.theta;
        let mut dfeats = vec![vec![0.0; fdim]; n];
        let mut dctx = vec![0.0; arch.ctx_dim()];
        let mut de = vec![0.0; lay.e.len()];

        let (_, rest) = grad.split_at_mut(lay.w1.start);
        let (gw1, rest) = rest.split_at_mut(lay.w1.len());
        let (gb1, rest) = rest.split_at_mut(lay.b1.len());
        let (gw2, rest) = rest.split_at_mut(lay.w2.len());
        let (gb2, rest) = rest.split_at_mut(lay.b2.len());
        let (gw3, gb3) = rest.split_at_mut(lay.w3.len());

        for (i, node) in tape.nodes.iter().enumerate() {
            let dfi = df.row(i);
            let dout: Vec<f64> = match arch.embed_dim {
                None => dfi.to_vec(),
                Some(l) => {
                    let e = &th[lay.e.clone()];
                    for k in 0..l {
                        for j in 0..c {
                            de[k * c + j] += node.out[k] * dfi[j];
                        }
                    }
                    (0..l).map(|k| (0..c).map(|j| e[k * c + j] * dfi[j]).sum()).collect()
                }
            };
            let mut dh2 = vec![0.0; h];
            affine_backward(&th[lay.w3.clone()], &node.h2, &dout, gw3, gb3, Some(&mut dh2));
            let dz2: Vec<f64> = dh2.iter().zip(&node.z2).map(|(g, &z)| g * sigmoid(z)).collect();
            let mut dh1 = vec![0.0; h];
            affine_backward(&th[lay.w2.clone()], &node.h1, &dz2, gw2, gb2, Some(&mut dh1));
            let dz1: Vec<f64> = dh1.iter().zip(&node.z1).map(|(g, &z)| g * sigmoid(z)).collect();
            let mut dinput = vec![0.0; node.input.len()];
            affine_backward(&th[lay.w1.clone()], &node.input, &dz1, gw1, gb1, Some(&mut dinput));

            for (a, b) in dfeats[i].iter_mut().zip(&dinput[..fdim]) {
                *a += b;
            }
            let off = fdim + arch.time_dim;
            for (a, b) in dctx.iter_mut().zip(&dinput[off..off + arch.ctx_dim()]) {
                *a += b;
            }
        }

        match arch.context {
            Context::None => {}
            Context::Mean => {
                for d in dfeats.iter_mut() {
                    for (a, b) in d.iter_mut().zip(&dctx) {
                        *a += b / n as f64;
                    }
                }
            }
            Context::Concat => {
                for (k, d) in dfeats.iter_mut().enumerate() {
                    for (a, b) in d.iter_mut().zip(&dctx[k * fdim..(k + 1) * fdim]) {
                        *a += b;
                    }
                }
            }
        }

        if let Some(l) = arch.embed_dim {
            for i in 0..n {
                let row = x.row(i);
                let mean = row.iter().sum::<f64>() / c as f64;
                for k in 0..l {
                    for j in 0..c {
                        de[k * c + j] += dfeats[i][k] * (row[j] - mean);
                    }
                }
            }
            for (g, d) in grad[lay.e.clone()].iter_mut().zip(&de) {
                *g += d;
            }
        }
    }

    fn example_loss_grad(&self, ex: &TrainExample) -> Result<(f64, Vec<f64>)> {
        self.check_shape(ex.w.n(), ex.w.c())?;
        let x = lift_inverse_barycenter(&ex.w);
        let tape = self.run(x.matrix(), ex.t)?;
        let f = self.output(&tape);
        let (loss, df) = residual_loss(&ex.w, ex.target.matrix(), &f);
        let mut grad = vec![0.0; self.theta.len()];
        self.backward(x.matrix(), &tape, &df, &mut grad);
        Ok((loss, grad))
    }

    /// Mean flow-matching loss over `batch` and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[TrainExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let per: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(index, ex)| match self.example_loss_grad(ex) {
                Ok((l, g)) if l.is_finite() => Ok((l, g)),
                _ => Err(Error::NonFiniteLoss { index }),
            })
            .collect::<Result<_>>()?;
        let k = batch.len() as f64;
        let losses: Vec<f64> = per.iter().map(|p| p.0).collect();
        let grads: Vec<Vec<f64>> = per.into_iter().map(|p| p.1).collect();
        let loss = pairwise_sum(&losses) / k;
        let grad = pairwise_sum_vecs(&grads).into_iter().map(|g| g / k).collect();
        Ok((loss, grad))
    }

    /// Mean loss only (no gradient).
    pub fn loss(&self, batch: &[TrainExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let losses = batch
            .iter()
            .enumerate()
            .map(|(index, ex)| {
                let f = self.forward(&ex.w, ex.t).map_err(|_| Error::NonFiniteLoss { index })?;
                let l = residual_loss(&ex.w, ex.target.matrix(), &f).0;
                if l.is_finite() {
                    Ok(l)
                } else {
                    Err(Error::NonFiniteLoss { index })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(pairwise_sum(&losses) / batch.len() as f64)
    }

    /// Writes the `AFGP` checkpoint, optionally followed by optimizer state.
    pub fn write_to<W: Write>(&self, mut w: W, adam: Option<&Adam>) -> Result<()> {
        let desc = serde_json::to_string(&self.arch)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc.as_bytes())?;
        w.write_all(&(self.theta.len() as u64).to_le_bytes())?;
        write_f64s(&mut w, &self.theta)?;
        if let Some(a) = adam {
            w.write_all(ADAM_MAGIC)?;
            w.write_all(&a.step.to_le_bytes())?;
            write_f64s(&mut w, &[a.lr, a.beta1, a.beta2, a.eps])?;
            write_f64s(&mut w, &a.m)?;
            write_f64s(&mut w, &a.v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, Option<Adam>)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("missing AFGP magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut desc = vec![0u8; len];
        r.read_exact(&mut desc)?;
        let desc = String::from_utf8(desc).map_err(|_| Error::Format("descriptor is not UTF-8".into()))?;
        let arch: Architecture = serde_json::from_str(&desc)?;
        let count = read_u64(&mut r)? as usize;
        if count != arch.num_params() {
            return Err(Error::Format("parameter count does not match the descriptor".into()));
        }
        let theta = read_f64s(&mut r, count)?;
        let model = Self::from_params(arch, theta)?;

        let mut tag = [0u8; 4];
        let adam = match r.read_exact(&mut tag) {
            Ok(()) if &tag == ADAM_MAGIC => {
                let step = read_u64(&mut r)?;
                let hp = read_f64s(&mut r, 4)?;
                let m = read_f64s(&mut r, count)?;
                let v = read_f64s(&mut r, count)?;
                Some(Adam { lr: hp[0], beta1: hp[1], beta2: hp[2], eps: hp[3], step, m, v })
            }
            Ok(()) => return Err(Error::Format("unknown trailing checkpoint section".into())),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => None,
            Err(e) => return Err(e.into()),
        };
        Ok((model, adam))
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), self.m.len(), "optimizer and parameter sizes differ");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..theta.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[k] / bc1;
            let vhat = self.v[k] / bc2;
            theta[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
