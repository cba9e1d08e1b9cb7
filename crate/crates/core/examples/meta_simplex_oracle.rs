//! Dense brute-force view of a small joint distribution: the embedding of a
//! factorizing assignment into the meta-simplex, marginalization, the
//! projection onto factorizing distributions and the information lost by it.

use afgen::geometry::{Assignment, NodeMatrix};
use afgen::meta_simplex::{embed_t, entropy, kl, marginalize, proj_to_t, DenseJoint, LabelConfig};

fn main() -> afgen::Result<()> {
    // Two strongly coupled binary variables.
    let p = DenseJoint::new(2, 2, vec![0.45, 0.05, 0.05, 0.45])?;
    println!("target joint p over (x1, x2):");
    for (idx, prob) in p.probs().iter().enumerate() {
        println!("  P({}) = {prob:.2}", LabelConfig::from_dense_index(idx, 2, 2));
    }
    println!("marginals:");
    for row in marginalize(&p).rows() {
        println!("  {row:?}");
    }

    let w = proj_to_t(&p)?;
    let factorized = embed_t(&w)?;
    println!("closest factorizing joint T(W): {:?}", factorized.probs());
    println!("KL(p, T(W))   = {:.6} nats (mutual information)", kl(&p, &factorized)?);
    println!("H(p)          = {:.6} nats", entropy(&p));
    println!("H(T(W))       = {:.6} nats (maximal for these marginals)", entropy(&factorized));

    // A three-node, three-class factorizing assignment and its embedding.
    let w = Assignment::new(3, 3, vec![0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4])?;
    let t = embed_t(&w)?;
    let m = marginalize(&t);
    let err = m.as_slice().iter().zip(w.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("\nN = 3^3 = {} joint entries; marginals recovered to {err:.1e}", t.probs().len());
    let sum: f64 = (0..3).map(|i| entropy(&DenseJoint::new(1, 3, w.row(i).to_vec()).unwrap())).sum();
    println!("H(T(W)) = {:.6} = sum of node entropies {:.6}", entropy(&t), sum);
    let extreme = LabelConfig::from_one_based(&[1, 3, 3], 3)?;
    let vertex: NodeMatrix = extreme.to_extreme(3);
    println!("β = ({extreme}) has dense index {} and one-hot rows {:?}", extreme.dense_index(3), vertex.as_slice());
    Ok(())
}
