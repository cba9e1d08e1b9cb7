//! The meta-simplex `S_N` of all joint distributions over `N = c^n` label
//! configurations, and the linear maps connecting it to the assignment
//! manifold:
//!
//! * `T(W)_α = Π_i W_{i,α_i}` (Segre embedding of factorizing distributions)
//! * `(QV)_α = Σ_i V_{i,α_i}` (its counterpart for tangent vectors)
//! * `(Mp)_{i,j} = Σ_{α_i = j} p_α` (marginalization, equal to `Qᵀ`)
//!
//! Dense vectors are indexed lexicographically over `(α_1, …, α_n)` with the
//! last node varying fastest. Everything here is a small-instance oracle:
//! constructors refuse `N > 2^24`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{center_in_place, lift_barycenter, softmax_into, Assignment, NodeMatrix, TangentField};
use crate::numeric::pairwise_sum;

/// Largest supported dense size.
pub const MAX_DENSE: usize = 1 << 24;

const JOINT_MAGIC: &[u8; 4] = b"AFGJ";

/// One class index per node, stored zero-based. Text formats use 1-based
/// indices; see [`LabelConfig::from_one_based`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelConfig {
    labels: Vec<usize>,
}

impl LabelConfig {
    /// Zero-based constructor.
    pub fn new(labels: Vec<usize>, c: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Domain(format!("label {} out of range for c={}", bad + 1, c)));
        }
        Ok(Self { labels })
    }

    pub fn from_one_based(labels: &[usize], c: usize) -> Result<Self> {
        if labels.iter().any(|&l| l == 0 || l > c) {
            return Err(Error::Domain(format!("labels must lie in 1..={c}")));
        }
        Ok(Self { labels: labels.iter().map(|l| l - 1).collect() })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    /// Position of `e_β` in the dense index order.
    pub fn dense_index(&self, c: usize) -> usize {
        self.labels.iter().fold(0, |acc, &l| acc * c + l)
    }

    pub fn from_dense_index(mut index: usize, n: usize, c: usize) -> Self {
        let mut labels = vec![0; n];
        for slot in labels.iter_mut().rev() {
            *slot = index % c;
            index /= c;
        }
        Self { labels }
    }

    /// The extreme point `W̄_β` (row `i` is the unit vector `e_{β_i}`).
    pub fn to_extreme(&self, c: usize) -> NodeMatrix {
        let mut m = NodeMatrix::zeros(self.n(), c);
        for (i, &l) in self.labels.iter().enumerate() {
            m.row_mut(i)[l] = 1.0;
        }
        m
    }

    /// Every configuration of `n` nodes with `c` classes, in dense order.
    pub fn all(n: usize, c: usize) -> Result<Vec<Self>> {
        let total = dense_len(n, c)?;
        Ok((0..total).map(|k| Self::from_dense_index(k, n, c)).collect())
    }
}

impl std::fmt::Display for LabelConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, l) in self.labels.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", l + 1)?;
        }
        Ok(())
    }
}

/// `c^n`, refusing anything above [`MAX_DENSE`].
pub fn dense_len(n: usize, c: usize) -> Result<usize> {
    let mut total: usize = 1;
    for _ in 0..n {
        total = total.checked_mul(c).filter(|t| *t <= MAX_DENSE).ok_or(Error::TooLarge { n, c })?;
    }
    Ok(total)
}

/// An explicit joint distribution on `[c]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseJoint {
    n: usize,
    c: usize,
    probs: Vec<f64>,
}

impl DenseJoint {
    /// Checks shape, nonnegativity and normalization (within `1e-12`).
    pub fn new(n: usize, c: usize, probs: Vec<f64>) -> Result<Self> {
        let len = dense_len(n, c)?;
        if probs.len() != len {
            return Err(Error::Shape(format!("expected {len} probabilities, got {}", probs.len())));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain("joint probabilities must be finite and nonnegative".into()));
        }
        let s = pairwise_sum(&probs);
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("joint probabilities sum to {s}, not 1")));
        }
        Ok(Self { n, c, probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(n: usize, c: usize, mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        let s = pairwise_sum(&weights);
        if !(s > 0.0) {
            return Err(Error::Domain("weights sum to zero".into()));
        }
        for w in weights.iter_mut() {
            *w /= s;
        }
        Self::new(n, c, weights)
    }

    pub fn uniform(n: usize, c: usize) -> Result<Self> {
        let len = dense_len(n, c)?;
        Ok(Self { n, c, probs: vec![1.0 / len as f64; len] })
    }

    /// Empirical distribution of a list of configurations.
    pub fn histogram(n: usize, c: usize, samples: &[LabelConfig]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("histogram samples"));
        }
        let mut counts = vec![0.0; dense_len(n, c)?];
        for s in samples {
            if s.n() != n {
                return Err(Error::Shape(format!("sample has {} nodes, expected {n}", s.n())));
            }
            counts[s.dense_index(c)] += 1.0;
        }
        let k = samples.len() as f64;
        Ok(Self { n, c, probs: counts.into_iter().map(|x| x / k).collect() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, beta: &LabelConfig) -> f64 {
        self.probs[beta.dense_index(self.c)]
    }

    /// Serializes as the `AFGJ` binary format: 16-byte header (magic, `u32`
    /// n, `u32` c, `u32` reserved = 0) followed by little-endian `f64`s.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(JOINT_MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.c as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for p in &self.probs {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != JOINT_MAGIC {
            return Err(Error::Format("missing AFGJ magic".into()));
        }
        let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let len = dense_len(n, c)?;
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)?;
        let probs = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(n, c, probs)
    }
}

/// Segre embedding `T(W)`.
pub fn embed_t(w: &Assignment) -> Result<DenseJoint> {
    let (n, c) = (w.n(), w.c());
    let len = dense_len(n, c)?;
    let mut out = Vec::with_capacity(len);
    out.push(1.0);
    for i in 0..n {
        let row = w.row(i);
        out = out.iter().flat_map(|&a| row.iter().map(move |&p| a * p)).collect();
    }
    Ok(DenseJoint { n, c, probs: out })
}

/// `Q V` for any `n × c` matrix (tangent or not).
pub fn embed_q(v: &NodeMatrix) -> Result<Vec<f64>> {
    let (n, c) = (v.n(), v.c());
    let len = dense_len(n, c)?;
    let mut out = Vec::with_capacity(len);
    out.push(0.0);
    for i in 0..n {
        let row = v.row(i);
        out = out.iter().flat_map(|&a| row.iter().map(move |&x| a + x)).collect();
    }
    Ok(out)
}

/// `Qᵀ x`: sums of `x` over the configurations sharing a label at a node.
pub fn q_transpose(x: &[f64], n: usize, c: usize) -> Result<NodeMatrix> {
    let len = dense_len(n, c)?;
    if x.len() != len {
        return Err(Error::Shape(format!("expected {len} entries, got {}", x.len())));
    }
    let mut out = NodeMatrix::zeros(n, c);
    // stride of node i in the dense order is c^(n-1-i)
    let mut stride = len;
    for i in 0..n {
        stride /= c;
        let row = out.row_mut(i);
        for (k, &val) in x.iter().enumerate() {
            row[(k / stride) % c] += val;
        }
    }
    Ok(out)
}

/// Marginalization `M p`.
pub fn marginalize(p: &DenseJoint) -> NodeMatrix {
    q_transpose(&p.probs, p.n, p.c).expect("dense joint already satisfies the guard")
}

/// Orthogonal projection of `v ∈ T0 S_N` onto `img Q ∩ T0 S_N`:
/// `proj0 v = Q_c Π0 Q_cᵀ v` with `Q_c = Q / sqrt(c^{n-1})`.
pub fn proj0(v: &[f64], n: usize, c: usize) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("proj0 input"));
    }
    let u = proj0_coefficients(v, n, c)?;
    embed_q(u.matrix())
}

/// The tangent field `u` with `proj0 v = Q u`, i.e. `Π0 Qᵀ v / c^{n-1}`.
pub fn proj0_coefficients(v: &[f64], n: usize, c: usize) -> Result<TangentField> {
    let mut m = q_transpose(v, n, c)?;
    let scale = (c as f64).powi(n as i32 - 1);
    for i in 0..n {
        let row = m.row_mut(i);
        center_in_place(row);
        for x in row.iter_mut() {
            *x /= scale;
        }
    }
    Ok(TangentField::from_matrix(m))
}

/// Lifting map at the barycenter of `S_N` (softmax over all `N` entries).
pub fn exp_barycenter_dense(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    out
}

/// Inverse lifting map at the barycenter of `S_N`: `π0 log q`.
pub fn log_barycenter_dense(q: &[f64]) -> Result<Vec<f64>> {
    if q.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::Domain("needs a strictly positive distribution".into()));
    }
    let mut v: Vec<f64> = q.iter().map(|x| x.ln()).collect();
    center_in_place(&mut v);
    Ok(v)
}

/// Projection of a strictly positive joint onto the embedded factorizing
/// distributions, `exp ∘ proj0 ∘ exp^{-1}` at the barycenter of `S_N`,
/// returned in marginal coordinates `W` (so `T(W)` is the projected joint).
pub fn proj_to_t(q: &DenseJoint) -> Result<Assignment> {
    let v = log_barycenter_dense(&q.probs)?;
    let u = proj0_coefficients(&v, q.n, q.c)?;
    Ok(lift_barycenter(&u))
}

/// Maximal absolute deviation between `exp_{1_SN}(Q v)` and `T(exp_{1_W}(v))`.
pub fn lifting_map_lemma_residual(v: &TangentField) -> Result<f64> {
    let lhs = exp_barycenter_dense(&embed_q(v.matrix())?);
    let rhs = embed_t(&lift_barycenter(v))?;
    Ok(max_abs_diff(&lhs, rhs.probs()))
}

/// Whether both sides of the lifting-map identity agree within `1e-10`.
pub fn lifting_map_lemma_check(v: &TangentField) -> Result<bool> {
    Ok(lifting_map_lemma_residual(v)? <= 1e-10)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shannon entropy in nats.
pub fn entropy(p: &DenseJoint) -> f64 {
    let terms: Vec<f64> = p.probs.iter().map(|&x| if x > 0.0 { -x * x.ln() } else { 0.0 }).collect();
    pairwise_sum(&terms)
}

/// `KL(p ‖ q)` in nats. Returns `+inf` when `q` vanishes somewhere `p` does
/// not (support violation).
pub fn kl(p: &DenseJoint, q: &DenseJoint) -> Result<f64> {
    if (p.n, p.c) != (q.n, q.c) {
        return Err(Error::Shape(format!(
            "KL between n={},c={} and n={},c={}",
            p.n, p.c, q.n, q.c
        )));
    }
    let mut terms = Vec::with_capacity(p.probs.len());
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            terms.push(a * (a / b).ln());
        }
    }
    Ok(pairwise_sum(&terms).max(0.0))
}

/// Empirical mixture `mean_k T(W_k)`, reduced in a fixed pairwise tree.
pub fn mixture_estimate(samples: &[Assignment]) -> Result<DenseJoint> {
    let first = samples.first().ok_or(Error::Empty("mixture samples"))?;
    let (n, c) = (first.n(), first.c());
    if samples.iter().any(|s| (s.n(), s.c()) != (n, c)) {
        return Err(Error::Shape("mixture samples have different shapes".into()));
    }
    dense_len(n, c)?;
    fn tree(samples: &[Assignment]) -> Result<Vec<f64>> {
        if samples.len() == 1 {
            return Ok(embed_t(&samples[0])?.probs);
        }
        let mid = samples.len() / 2;
        let mut left = tree(&samples[..mid])?;
        let right = tree(&samples[mid..])?;
        for (l, r) in left.iter_mut().zip(&right) {
            *l += r;
        }
        Ok(left)
    }
    let k = samples.len() as f64;
    let probs = tree(samples)?.into_iter().map(|x| x / k).collect();
    Ok(DenseJoint { n, c, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_tangent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assignment(rows: &[&[f64]]) -> Assignment {
        let c = rows[0].len();
        Assignment::new(rows.len(), c, rows.concat()).unwrap()
    }

    fn random_tangent(rng: &mut impl Rng, n: usize, c: usize) -> TangentField {
        let data = (0..n * c).map(|_| rng.random_range(-2.0..2.0)).collect();
        project_tangent(&NodeMatrix::new(n, c, data).unwrap()).unwrap()
    }

    #[test]
    fn embed_t_examples() {
        let (w1, w2) = (0.3, 0.6);
        let w = assignment(&[&[w1, 1.0 - w1], &[w2, 1.0 - w2]]);
        let t = embed_t(&w).unwrap();
        let expect = [w1 * w2, w1 * (1.0 - w2), (1.0 - w1) * w2, (1.0 - w1) * (1.0 - w2)];
        assert_eq!(max_abs_diff(t.probs(), &expect), 0.0);
        assert!(max_abs_diff(t.probs(), &[0.18, 0.12, 0.42, 0.28]) < 1e-15);
        let t = embed_t(&Assignment::barycenter(3, 2)).unwrap();
        assert!(t.probs().iter().all(|p| (p - 0.125).abs() < 1e-15));
    }

    #[test]
    fn embed_q_examples() {
        let z = embed_q(&NodeMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z, vec![0.0; 4]);
        let (a, b) = (0.7, -1.3);
        let v = NodeMatrix::new(2, 2, vec![a, -a, b, -b]).unwrap();
        assert_eq!(embed_q(&v).unwrap(), vec![a + b, a - b, -a + b, -a - b]);
    }

    #[test]
    fn q_transpose_q_scales_tangents() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(n, c) in &[(2, 2), (3, 3), (2, 4), (4, 2)] {
            let v = random_tangent(&mut rng, n, c);
            let back = q_transpose(&embed_q(v.matrix()).unwrap(), n, c).unwrap();
            let scale = (c as f64).powi(n as i32 - 1);
            for (x, y) in back.as_slice().iter().zip(v.as_slice()) {
                assert!((x - scale * y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginals_of_dirac_and_product() {
        let (n, c) = (3, 3);
        for beta in LabelConfig::all(n, c).unwrap() {
            let mut e = vec![0.0; 27];
            e[beta.dense_index(c)] = 1.0;
            let p = DenseJoint::new(n, c, e.clone()).unwrap();
            let m = marginalize(&p);
            assert_eq!(m, beta.to_extreme(c));
            assert_eq!(q_transpose(&e, n, c).unwrap(), m);
        }
        let w = assignment(&[&[0.2, 0.5, 0.3], &[0.6, 0.1, 0.3]]);
        let m = marginalize(&embed_t(&w).unwrap());
        assert!(max_abs_diff(m.as_slice(), w.as_slice()) < 1e-15);
    }

    #[test]
    fn dense_index_round_trip() {
        let beta = LabelConfig::from_one_based(&[2, 1, 3], 3).unwrap();
        assert_eq!(beta.dense_index(3), 11);
        assert_eq!(LabelConfig::from_dense_index(11, 3, 3), beta);
        assert_eq!(beta.to_string(), "2 1 3");
        assert!(LabelConfig::from_one_based(&[0, 1], 2).is_err());
        assert!(LabelConfig::from_one_based(&[3, 1], 2).is_err());
    }

    #[test]
    fn guard_refuses_large() {
        assert!(dense_len(24, 2).is_ok());
        assert!(matches!(dense_len(25, 2), Err(Error::TooLarge { .. })));
        assert!(embed_t(&Assignment::barycenter(30, 2)).is_err());
    }

    #[test]
    fn proj0_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, c) = (3, 3);
        let u = random_tangent(&mut rng, n, c);
        let scale = ((c as f64).powi(n as i32 - 1)).sqrt();
        let v: Vec<f64> = embed_q(u.matrix()).unwrap().iter().map(|x| x / scale).collect();
        assert!(max_abs_diff(&proj0(&v, n, c).unwrap(), &v) < 1e-12);

        let mut x: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
        center_in_place(&mut x);
        let p = proj0(&x, n, c).unwrap();
        let pp = proj0(&p, n, c).unwrap();
        assert!(max_abs_diff(&p, &pp) < 1e-10);
        let y = embed_q(random_tangent(&mut rng, n, c).matrix()).unwrap();
        let inner: f64 = x.iter().zip(&p).zip(&y).map(|((a, b), c)| (a - b) * c).sum();
        assert!(inner.abs() < 1e-10);
        assert!(p.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn proj_to_t_examples() {
        let w = assignment(&[&[0.2, 0.8], &[0.7, 0.3]]);
        let back = proj_to_t(&embed_t(&w).unwrap()).unwrap();
        assert!(max_abs_diff(back.as_slice(), w.as_slice()) < 1e-12);

        let u = DenseJoint::uniform(2, 2).unwrap();
        let b = proj_to_t(&u).unwrap();
        assert!(b.as_slice().iter().all(|x| (x - 0.5).abs() < 1e-15));

        let toy = DenseJoint::new(2, 2, vec![0.45, 0.05, 0.05, 0.45]).unwrap();
        let w = proj_to_t(&toy).unwrap();
        assert!(w.as_slice().iter().all(|x| (x - 0.5).abs() < 1e-12));
        // dense evaluation of exp ∘ proj0 ∘ exp^{-1}
        let dense = exp_barycenter_dense(&proj0(&log_barycenter_dense(toy.probs()).unwrap(), 2, 2).unwrap());
        assert!(max_abs_diff(&dense, embed_t(&w).unwrap().probs()) < 1e-12);

        let zero = DenseJoint::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(matches!(proj_to_t(&zero), Err(Error::Domain(_))));
    }

    #[test]
    fn lifting_lemma_checker() {
        let v = TangentField::zeros(2, 3);
        assert!(lifting_map_lemma_check(&v).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_tangent(&mut rng, 3, 3);
        assert!(lifting_map_lemma_check(&v).unwrap());
        let lhs = exp_barycenter_dense(&embed_q(v.matrix()).unwrap());
        let mut rhs = embed_t(&lift_barycenter(&v)).unwrap().probs().to_vec();
        rhs[0] += 1e-6;
        assert!(max_abs_diff(&lhs, &rhs) > 1e-10);
    }

    #[test]
    fn entropy_and_kl() {
        let u = DenseJoint::uniform(3, 2).unwrap();
        assert!((entropy(&u) - 3.0 * 2f64.ln()).abs() < 1e-14);
        let p = DenseJoint::new(2, 2, vec![0.45, 0.05, 0.05, 0.45]).unwrap();
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        let q = DenseJoint::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(kl(&p, &q).unwrap(), f64::INFINITY);
        assert!(kl(&q, &p).unwrap().is_finite());
        assert!(kl(&p, &DenseJoint::uniform(3, 2).unwrap()).is_err());
    }

    #[test]
    fn factorizing_embedding_maximizes_entropy_given_marginals() {
        // n = c = 2: joints with marginals (a, 1-a), (b, 1-b) are
        // (ab + s, a(1-b) - s, (1-a)b - s, (1-a)(1-b) + s); scan s on a grid.
        for &(a, b) in &[(0.3, 0.6), (0.5, 0.5), (0.1, 0.85)] {
            let w = assignment(&[&[a, 1.0 - a], &[b, 1.0 - b]]);
            let t = embed_t(&w).unwrap();
            let h_t = entropy(&t);
            let h_sum: f64 = w.rows().map(|r| -r.iter().map(|p| p * p.ln()).sum::<f64>()).sum();
            assert!((h_t - h_sum).abs() < 1e-12);
            let lo = -(a * b).min((1.0 - a) * (1.0 - b));
            let hi = (a * (1.0 - b)).min((1.0 - a) * b);
            for k in 0..=400 {
                let s = lo + (hi - lo) * k as f64 / 400.0;
                let probs = vec![a * b + s, a * (1.0 - b) - s, (1.0 - a) * b - s, (1.0 - a) * (1.0 - b) + s];
                let probs: Vec<f64> = probs.into_iter().map(|x| x.max(0.0)).collect();
                let q = DenseJoint::from_weights(2, 2, probs).unwrap();
                assert!(entropy(&q) <= h_t + 1e-12);
            }
        }
    }

    #[test]
    fn mixture_examples() {
        let w = assignment(&[&[0.2, 0.8], &[0.7, 0.3]]);
        let m = mixture_estimate(std::slice::from_ref(&w)).unwrap();
        assert_eq!(m, embed_t(&w).unwrap());
        let e = 1e-9;
        let a = assignment(&[&[1.0 - e, e], &[1.0 - e, e]]);
        let b = assignment(&[&[e, 1.0 - e], &[e, 1.0 - e]]);
        let m = mixture_estimate(&[a, b]).unwrap();
        assert!(max_abs_diff(m.probs(), &[0.5, 0.0, 0.0, 0.5]) < 1e-8);
        assert!(mixture_estimate(&[]).is_err());
    }

    #[test]
    fn mixture_of_nodewise_samples_factorizes() {
        // nodewise-independent samples: node means converge, so the mixture
        // approaches T(mean).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<Assignment> = (0..20000)
            .map(|_| {
                let a: f64 = rng.random_range(0.1..0.5);
                let b: f64 = rng.random_range(0.4..0.9);
                assignment(&[&[a, 1.0 - a], &[b, 1.0 - b]])
            })
            .collect();
        let m = mixture_estimate(&samples).unwrap();
        let t = embed_t(&assignment(&[&[0.3, 0.7], &[0.65, 0.35]])).unwrap();
        assert!(max_abs_diff(m.probs(), t.probs()) < 0.01);
    }

    #[test]
    fn joint_file_round_trip() {
        let p = DenseJoint::new(2, 2, vec![0.45, 0.05, 0.05, 0.45]).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 32);
        assert_eq!(&buf[..4], b"AFGJ");
        assert_eq!(DenseJoint::read_from(&buf[..]).unwrap(), p);
        buf[0] = b'X';
        assert!(DenseJoint::read_from(&buf[..]).is_err());
    }
}
