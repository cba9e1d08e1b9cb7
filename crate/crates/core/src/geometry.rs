//! Fisher–Rao / e-connection geometry on the open probability simplex and on
//! the product ("assignment") manifold of `n` simplices.
//!
//! Every single-simplex operation has a row-wise counterpart on
//! [`Assignment`] / [`TangentField`], which is the form the rest of the crate
//! uses. Points are stored row-major as `n × c` matrices.
//!
//! Notation used in the docs below: `π0 x = x - mean(x)·1` is the orthogonal
//! projection onto the tangent space `T0 = {v : Σ v = 0}`.

use crate::error::{Error, Result};

/// Smallest entry a simplex point may carry. The open simplex is truncated
/// here; constructors clamp to this floor and renormalize.
pub const PROB_FLOOR: f64 = 1e-300;

/// Tolerance for the (debug-only) construction-time invariant checks.
const INVARIANT_TOL: f64 = 1e-12;

/// A point in the relative interior of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

/// A tangent vector of the simplex: its entries sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec(Vec<f64>);

impl SimplexPoint {
    /// Builds a simplex point from nonnegative weights, clamping to
    /// [`PROB_FLOOR`] and renormalizing.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("simplex point"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain(
                "simplex point entries must be finite and nonnegative".into(),
            ));
        }
        let mut probs = probs;
        clamp_normalize(&mut probs);
        Ok(Self(probs))
    }

    pub fn barycenter(c: usize) -> Self {
        Self(vec![1.0 / c as f64; c])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TangentVec {
    /// Wraps coordinates that already sum to zero (checked in debug builds).
    pub fn new(coords: Vec<f64>) -> Self {
        debug_assert!(
            coords.iter().sum::<f64>().abs() <= INVARIANT_TOL * (1.0 + l1(&coords)),
            "tangent vector does not sum to zero"
        );
        Self(coords)
    }

    pub fn zeros(c: usize) -> Self {
        Self(vec![0.0; c])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn l1(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x.abs()).sum()
}

fn clamp_normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v = (*v / s).max(PROB_FLOOR);
    }
    let s: f64 = p.iter().sum();
    if s != 1.0 {
        for v in p.iter_mut() {
            *v /= s;
        }
    }
}

// ---------------------------------------------------------------------------
// slice kernels

/// `π0` in place: subtract the mean.
#[inline]
pub fn center_in_place(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

/// Normalized exponentials of `x` written into `out`, clamped to the floor.
#[inline]
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o = (*o / s).max(PROB_FLOOR);
    }
}

/// `R_p f = (Diag(p) - p pᵀ) f` written into `out`.
#[inline]
pub fn replicator_into(p: &[f64], f: &[f64], out: &mut [f64]) {
    let m: f64 = p.iter().zip(f).map(|(a, b)| a * b).sum();
    for ((o, &pj), &fj) in out.iter_mut().zip(p).zip(f) {
        *o = pj * (fj - m);
    }
}

// ---------------------------------------------------------------------------
// single-simplex operations

/// Orthogonal projection onto `T0`.
pub fn project_tangent_vec(x: &[f64]) -> Result<TangentVec> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("project_tangent input"));
    }
    let mut v = x.to_vec();
    center_in_place(&mut v);
    Ok(TangentVec(v))
}

/// Exponential map of the e-connection: `p·e^{v/p} / ⟨p, e^{v/p}⟩`.
pub fn exp_e(p: &SimplexPoint, v: &TangentVec) -> SimplexPoint {
    let a: Vec<f64> = p
        .0
        .iter()
        .zip(&v.0)
        .map(|(&pj, &vj)| pj.ln() + vj / pj)
        .collect();
    let mut out = vec![0.0; a.len()];
    softmax_into(&a, &mut out);
    SimplexPoint(out)
}

/// Lifting map `exp_p = Exp_p ∘ R_p`.
///
/// Since `R_p v / p = v - ⟨p, v⟩`, this reduces to `p·e^v / ⟨p, e^v⟩`; at the
/// barycenter it is the softmax of `v`. Depends on `v` only through `π0 v`.
pub fn lift(p: &SimplexPoint, v: &TangentVec) -> SimplexPoint {
    let a: Vec<f64> = p.0.iter().zip(&v.0).map(|(&pj, &vj)| pj.ln() + vj).collect();
    let mut out = vec![0.0; a.len()];
    softmax_into(&a, &mut out);
    SimplexPoint(out)
}

/// Inverse of [`lift`] at base point `p`: `π0 (log w - log p)`.
pub fn lift_inverse(p: &SimplexPoint, w: &[f64]) -> Result<TangentVec> {
    if w.len() != p.dim() {
        return Err(Error::Shape(format!(
            "lift_inverse: base has {} entries, argument {}",
            p.dim(),
            w.len()
        )));
    }
    if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain("lift_inverse needs strictly positive entries".into()));
    }
    let mut v: Vec<f64> = w.iter().zip(&p.0).map(|(a, b)| a.ln() - b.ln()).collect();
    center_in_place(&mut v);
    Ok(TangentVec(v))
}

/// Replicator operator `R_p f`. Annihilates constants; output sums to zero.
pub fn replicator(p: &SimplexPoint, f: &[f64]) -> TangentVec {
    let mut out = vec![0.0; f.len()];
    replicator_into(&p.0, f, &mut out);
    TangentVec(out)
}

/// Fisher–Rao metric `⟨u, Diag(p)^{-1} v⟩`.
pub fn fr_inner(p: &SimplexPoint, u: &TangentVec, v: &TangentVec) -> f64 {
    p.0.iter()
        .zip(&u.0)
        .zip(&v.0)
        .map(|((pj, uj), vj)| uj * vj / pj)
        .sum()
}

// ---------------------------------------------------------------------------
// product manifold

/// An unconstrained `n × c` real matrix, row-major (e.g. payoff outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix {
    n: usize,
    c: usize,
    data: Vec<f64>,
}

impl NodeMatrix {
    pub fn new(n: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c {
            return Err(Error::Shape(format!(
                "expected {}×{} = {} entries, got {}",
                n,
                c,
                n * c,
                data.len()
            )));
        }
        Ok(Self { n, c, data })
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        Self { n, c, data: vec![0.0; n * c] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.c)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

macro_rules! node_matrix_accessors {
    ($t:ty) => {
        impl $t {
            pub fn n(&self) -> usize {
                self.0.n
            }
            pub fn c(&self) -> usize {
                self.0.c
            }
            pub fn row(&self, i: usize) -> &[f64] {
                self.0.row(i)
            }
            pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
                self.0.rows()
            }
            pub fn as_slice(&self) -> &[f64] {
                &self.0.data
            }
            pub fn matrix(&self) -> &NodeMatrix {
                &self.0
            }
            pub fn into_vec(self) -> Vec<f64> {
                self.0.data
            }
        }
    };
}

/// A point `W` of the assignment manifold: each row lies in the open simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment(NodeMatrix);

/// A tangent field `V`: each row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField(NodeMatrix);

node_matrix_accessors!(Assignment);
node_matrix_accessors!(TangentField);

impl Assignment {
    /// Validates shape and entries, clamping each row to the floor and
    /// renormalizing.
    pub fn new(n: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        let mut m = NodeMatrix::new(n, c, data)?;
        if c == 0 {
            return Err(Error::Shape("c must be positive".into()));
        }
        if m.data.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain(
                "assignment entries must be finite and nonnegative".into(),
            ));
        }
        for i in 0..n {
            clamp_normalize(m.row_mut(i));
        }
        Ok(Self(m))
    }

    /// Wraps rows produced by an internal kernel that already normalizes.
    pub(crate) fn from_normalized(m: NodeMatrix) -> Self {
        debug_assert!(m
            .rows()
            .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= INVARIANT_TOL && r.iter().all(|p| *p > 0.0)));
        Self(m)
    }

    /// The barycenter: every entry equals `1/c`.
    pub fn barycenter(n: usize, c: usize) -> Self {
        Self(NodeMatrix { n, c, data: vec![1.0 / c as f64; n * c] })
    }

    pub fn row_point(&self, i: usize) -> SimplexPoint {
        SimplexPoint(self.row(i).to_vec())
    }

    /// Per-node maximal probability, minimized over nodes.
    pub fn min_max_prob(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().copied().fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    }
}

impl TangentField {
    pub fn zeros(n: usize, c: usize) -> Self {
        Self(NodeMatrix::zeros(n, c))
    }

    /// Wraps a matrix whose rows already sum to zero (checked in debug builds).
    pub fn from_matrix(m: NodeMatrix) -> Self {
        debug_assert!(m
            .rows()
            .all(|r| r.iter().sum::<f64>().abs() <= INVARIANT_TOL * (1.0 + l1(r))));
        Self(m)
    }

    pub fn row_vec(&self, i: usize) -> TangentVec {
        TangentVec(self.row(i).to_vec())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let data = self.0.data.iter().map(|v| v * s).collect();
        Self(NodeMatrix { n: self.n(), c: self.c(), data })
    }

    /// `self + s·other`, shapes must agree.
    pub fn add_scaled(&self, other: &TangentField, s: f64) -> Self {
        debug_assert_eq!((self.n(), self.c()), (other.n(), other.c()));
        let data = self
            .0
            .data
            .iter()
            .zip(&other.0.data)
            .map(|(a, b)| a + s * b)
            .collect();
        Self(NodeMatrix { n: self.n(), c: self.c(), data })
    }

    /// Euclidean (Frobenius) inner product.
    pub fn dot(&self, other: &TangentField) -> f64 {
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
    }
}

/// `Π0`: row-wise projection of an arbitrary `n × c` matrix onto the tangent
/// space.
pub fn project_tangent(x: &NodeMatrix) -> Result<TangentField> {
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("project_tangent input"));
    }
    let mut m = x.clone();
    for i in 0..m.n {
        center_in_place(m.row_mut(i));
    }
    Ok(TangentField(m))
}

/// Row-wise [`lift`] at the barycenter, i.e. row-wise softmax. This is the
/// global chart used for integration and sampling.
pub fn lift_barycenter(x: &TangentField) -> Assignment {
    let (n, c) = (x.n(), x.c());
    let mut out = NodeMatrix::zeros(n, c);
    for i in 0..n {
        softmax_into(x.row(i), out.row_mut(i));
    }
    Assignment::from_normalized(out)
}

/// Row-wise [`lift`] at an arbitrary base point.
pub fn lift_rows(p: &Assignment, v: &TangentField) -> Assignment {
    let (n, c) = (p.n(), p.c());
    let mut out = NodeMatrix::zeros(n, c);
    let mut a = vec![0.0; c];
    for i in 0..n {
        for ((aj, &pj), &vj) in a.iter_mut().zip(p.row(i)).zip(v.row(i)) {
            *aj = pj.ln() + vj;
        }
        softmax_into(&a, out.row_mut(i));
    }
    Assignment::from_normalized(out)
}

/// Row-wise [`exp_e`].
pub fn exp_e_rows(p: &Assignment, v: &TangentField) -> Assignment {
    let (n, c) = (p.n(), p.c());
    let mut out = NodeMatrix::zeros(n, c);
    let mut a = vec![0.0; c];
    for i in 0..n {
        for ((aj, &pj), &vj) in a.iter_mut().zip(p.row(i)).zip(v.row(i)) {
            *aj = pj.ln() + vj / pj;
        }
        softmax_into(&a, out.row_mut(i));
    }
    Assignment::from_normalized(out)
}

/// Row-wise inverse of [`lift_barycenter`]: `Π0 log W`.
pub fn lift_inverse_barycenter(w: &Assignment) -> TangentField {
    let mut m = NodeMatrix::zeros(w.n(), w.c());
    for i in 0..w.n() {
        let row = m.row_mut(i);
        for (r, &p) in row.iter_mut().zip(w.row(i)) {
            *r = p.ln();
        }
        center_in_place(row);
    }
    TangentField(m)
}

/// Row-wise [`lift_inverse`].
pub fn lift_inverse_rows(p: &Assignment, w: &Assignment) -> Result<TangentField> {
    if (p.n(), p.c()) != (w.n(), w.c()) {
        return Err(Error::Shape("lift_inverse_rows: shapes differ".into()));
    }
    let mut m = NodeMatrix::zeros(w.n(), w.c());
    for i in 0..w.n() {
        let row = m.row_mut(i);
        for ((r, &a), &b) in row.iter_mut().zip(w.row(i)).zip(p.row(i)) {
            *r = a.ln() - b.ln();
        }
        center_in_place(row);
    }
    Ok(TangentField(m))
}

/// Row-wise replicator `R_W F`.
pub fn replicator_rows(w: &Assignment, f: &NodeMatrix) -> TangentField {
    debug_assert_eq!((w.n(), w.c()), (f.n, f.c));
    let mut out = NodeMatrix::zeros(w.n(), w.c());
    for i in 0..w.n() {
        replicator_into(w.row(i), f.row(i), out.row_mut(i));
    }
    TangentField(out)
}

/// Fisher–Rao product metric `Σ_i ⟨U_i, Diag(W_i)^{-1} V_i⟩`.
pub fn fr_inner_rows(w: &Assignment, u: &TangentField, v: &TangentField) -> f64 {
    w.as_slice()
        .iter()
        .zip(u.as_slice())
        .zip(v.as_slice())
        .map(|((p, a), b)| a * b / p)
        .sum()
}

// ---------------------------------------------------------------------------
// orthonormal coordinates on T0

/// Helmert-style orthonormal basis of `T0 ⊂ R^c`: column `k` (1-based) has
/// `1/s_k` in its first `k` entries, `-k/s_k` in entry `k+1`, zeros below,
/// with `s_k = sqrt(k(k+1))`. Coordinates are `c - 1` dimensional.
#[derive(Debug, Clone)]
pub struct HelmertBasis {
    c: usize,
    inv_s: Vec<f64>,
}

impl HelmertBasis {
    pub fn new(c: usize) -> Self {
        let inv_s = (0..c)
            .map(|k| if k == 0 { 0.0 } else { 1.0 / ((k * (k + 1)) as f64).sqrt() })
            .collect();
        Self { c, inv_s }
    }

    pub fn dim(&self) -> usize {
        self.c - 1
    }

    /// `z = Bᵀ x` for one row; `z.len() == c - 1`.
    pub fn to_coords(&self, x: &[f64], z: &mut [f64]) {
        let mut prefix = x[0];
        for k in 1..self.c {
            z[k - 1] = (prefix - k as f64 * x[k]) * self.inv_s[k];
            prefix += x[k];
        }
    }

    /// `x = B z` for one row; the result sums to zero.
    pub fn from_coords(&self, z: &[f64], x: &mut [f64]) {
        let mut suffix = 0.0;
        for j in (0..self.c).rev() {
            let own = if j >= 1 { -(j as f64) * z[j - 1] * self.inv_s[j] } else { 0.0 };
            x[j] = own + suffix;
            if j >= 1 {
                suffix += z[j - 1] * self.inv_s[j];
            }
        }
    }

    /// Flattened coordinates of a whole tangent field, node after node.
    pub fn field_to_coords(&self, v: &TangentField) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; v.n() * d];
        for i in 0..v.n() {
            self.to_coords(v.row(i), &mut z[i * d..(i + 1) * d]);
        }
        z
    }

    pub fn coords_to_field(&self, n: usize, z: &[f64]) -> TangentField {
        let d = self.dim();
        let mut m = NodeMatrix::zeros(n, self.c);
        for i in 0..n {
            self.from_coords(&z[i * d..(i + 1) * d], m.row_mut(i));
        }
        TangentField(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn project_examples() {
        assert_eq!(project_tangent_vec(&[1.0, 0.0]).unwrap().as_slice(), &[0.5, -0.5]);
        assert_eq!(project_tangent_vec(&[3.0, 1.0, 2.0]).unwrap().as_slice(), &[1.0, -1.0, 0.0]);
        assert!(project_tangent_vec(&[f64::NAN, 1.0]).is_err());
        let m = NodeMatrix::new(1, 2, vec![f64::INFINITY, 0.0]).unwrap();
        assert!(project_tangent(&m).is_err());
    }

    #[test]
    fn exp_e_examples() {
        let p = sp(&[0.5, 0.5]);
        let q = exp_e(&p, &TangentVec::zeros(2));
        assert_eq!(q, p);
        let q = exp_e(&p, &TangentVec::new(vec![1.0, -1.0]));
        let e2 = 2f64.exp();
        let expect = [e2 / (e2 + 1.0 / e2), (1.0 / e2) / (e2 + 1.0 / e2)];
        assert!((q.as_slice()[0] - expect[0]).abs() < 1e-15);
        assert!((q.as_slice()[0] - 0.98201).abs() < 1e-5);
        assert!((q.as_slice()[1] - 0.01799).abs() < 1e-5);
    }

    #[test]
    fn exp_e_guards_overflow() {
        let p = sp(&[0.5, 0.5]);
        let q = exp_e(&p, &TangentVec::new(vec![1e4, -1e4]));
        assert!(q.as_slice().iter().all(|x| x.is_finite() && *x > 0.0));
        assert!((q.as_slice()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lift_examples() {
        let b = SimplexPoint::barycenter(2);
        assert_eq!(lift(&b, &TangentVec::zeros(2)), b);
        let a = 1.0f64;
        let q = lift(&b, &TangentVec::new(vec![a, -a]));
        let expect = a.exp() / (a.exp() + (-a).exp());
        assert!((q.as_slice()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn lift_inverse_examples() {
        let b = SimplexPoint::barycenter(2);
        let v = lift_inverse(&b, b.as_slice()).unwrap();
        assert!(v.as_slice().iter().all(|x| x.abs() < 1e-15));
        let w = exp_e(&b, &TangentVec::new(vec![1.0, -1.0]));
        let v = lift_inverse(&b, w.as_slice()).unwrap();
        assert!((v.as_slice()[0] - 2.0).abs() < 1e-12);
        assert!((v.as_slice()[1] + 2.0).abs() < 1e-12);
        assert!(lift_inverse(&b, &[1.0, 0.0]).is_err());
        assert!(lift_inverse(&b, &[1.5, -0.5]).is_err());
    }

    #[test]
    fn replicator_examples() {
        let p = sp(&[0.5, 0.5]);
        assert_eq!(replicator(&p, &[1.0, 0.0]).as_slice(), &[0.25, -0.25]);
        let r = replicator(&p, &[3.0, 3.0]);
        assert!(r.as_slice().iter().all(|x| x.abs() < 1e-15));
        let eps = 1e-8;
        let p = sp(&[1.0 - eps, eps]);
        let r = replicator(&p, &[1.0, -1.0]);
        assert!(r.as_slice().iter().all(|x| x.abs() < 1e-7));
    }

    #[test]
    fn fr_inner_examples() {
        let p = sp(&[0.5, 0.5]);
        let u = TangentVec::new(vec![1.0, -1.0]);
        assert!((fr_inner(&p, &u, &u) - 4.0).abs() < 1e-15);
        let b = SimplexPoint::barycenter(4);
        let u = TangentVec::new(vec![0.1, -0.3, 0.5, -0.3]);
        let v = TangentVec::new(vec![1.0, 2.0, -1.0, -2.0]);
        let e: f64 = u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        assert!((fr_inner(&b, &u, &v) - 4.0 * e).abs() < 1e-14);
    }

    #[test]
    fn floor_clamps_and_renormalizes() {
        let p = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(p.as_slice()[1], PROB_FLOOR);
        assert!(SimplexPoint::new(vec![1.0, -0.1]).is_err());
        let w = Assignment::new(1, 2, vec![2.0, 2.0]).unwrap();
        assert_eq!(w.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn helmert_is_orthonormal_completion() {
        for c in 2..7 {
            let b = HelmertBasis::new(c);
            let x0: Vec<f64> = (0..c).map(|j| (j as f64 * 0.7).sin()).collect();
            let x = project_tangent_vec(&x0).unwrap().into_vec();
            let mut z = vec![0.0; c - 1];
            b.to_coords(&x, &mut z);
            let mut back = vec![0.0; c];
            b.from_coords(&z, &mut back);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-13);
            }
            let nx: f64 = x.iter().map(|v| v * v).sum();
            let nz: f64 = z.iter().map(|v| v * v).sum();
            assert!((nx - nz).abs() < 1e-13);
            // columns orthonormal: Bᵀ B = I
            for k in 0..c - 1 {
                let mut e = vec![0.0; c - 1];
                e[k] = 1.0;
                let mut col = vec![0.0; c];
                b.from_coords(&e, &mut col);
                assert!(col.iter().sum::<f64>().abs() < 1e-14);
                let mut zc = vec![0.0; c - 1];
                b.to_coords(&col, &mut zc);
                for (l, v) in zc.iter().enumerate() {
                    assert!((v - if l == k { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    fn simplex_strategy(c: usize) -> impl Strategy<Value = SimplexPoint> {
        prop::collection::vec(-5.0f64..5.0, c).prop_map(|logits| {
            let mut out = vec![0.0; logits.len()];
            softmax_into(&logits, &mut out);
            SimplexPoint::new(out).unwrap()
        })
    }

    fn tangent_strategy(c: usize) -> impl Strategy<Value = TangentVec> {
        prop::collection::vec(-3.0f64..3.0, c).prop_map(|x| project_tangent_vec(&x).unwrap())
    }

    proptest! {
        #[test]
        fn exp_e_stays_on_simplex((p, v) in (2usize..8).prop_flat_map(|c| (simplex_strategy(c), tangent_strategy(c)))) {
            let q = exp_e(&p, &v);
            prop_assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(q.as_slice().iter().all(|x| *x > 0.0));
        }

        #[test]
        fn lift_is_exp_after_replicator((p, v) in (2usize..8).prop_flat_map(|c| (simplex_strategy(c), tangent_strategy(c)))) {
            let a = lift(&p, &v);
            let b = exp_e(&p, &replicator(&p, v.as_slice()));
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn lift_round_trip((p, v) in (2usize..8).prop_flat_map(|c| (simplex_strategy(c), tangent_strategy(c)))) {
            let w = lift(&p, &v);
            let back = lift_inverse(&p, w.as_slice()).unwrap();
            for (x, y) in v.as_slice().iter().zip(back.as_slice()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn lift_shift_invariant((p, v, k) in (2usize..8).prop_flat_map(|c| (simplex_strategy(c), tangent_strategy(c), -10.0f64..10.0))) {
            let shifted: Vec<f64> = v.as_slice().iter().map(|x| x + k).collect();
            let a = lift(&p, &v);
            let b = lift(&p, &TangentVec(shifted));
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn replicator_is_tangent_and_kills_constants(
            (p, f, k) in (2usize..8).prop_flat_map(|c| (simplex_strategy(c), prop::collection::vec(-10.0f64..10.0, c), -10.0f64..10.0))
        ) {
            let r = replicator(&p, &f);
            prop_assert!(r.as_slice().iter().sum::<f64>().abs() < 1e-14);
            let g: Vec<f64> = f.iter().map(|x| x + k).collect();
            let r2 = replicator(&p, &g);
            for (x, y) in r.as_slice().iter().zip(r2.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn fr_inner_symmetric_definite((p, u, v) in (2usize..8).prop_flat_map(|c| (simplex_strategy(c), tangent_strategy(c), tangent_strategy(c)))) {
            let a = fr_inner(&p, &u, &v);
            let b = fr_inner(&p, &v, &u);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            prop_assert!(fr_inner(&p, &u, &u) >= 0.0);
        }
    }
}
