//! A walk through the assignment manifold: tangent projection, the lifting
//! map and its inverse, the e-exponential, the replicator operator and the
//! Fisher–Rao metric, plus the orthonormal chart used for densities.

use afgen::geometry::{
    exp_e, fr_inner, lift, lift_barycenter, lift_inverse, project_tangent, project_tangent_vec, replicator,
    replicator_rows, Assignment, HelmertBasis, NodeMatrix, SimplexPoint,
};

fn show(label: &str, xs: &[f64]) {
    let body: Vec<String> = xs.iter().map(|x| format!("{x:+.6}")).collect();
    println!("{label:<28} [{}]", body.join(", "));
}

fn main() -> afgen::Result<()> {
    let p = SimplexPoint::new(vec![0.2, 0.3, 0.5])?;
    let v = project_tangent_vec(&[1.0, -0.5, 0.25])?;
    show("p", p.as_slice());
    show("v = π0(1, -0.5, 0.25)", v.as_slice());

    let q = lift(&p, &v);
    show("lift_p(v)", q.as_slice());
    show("lift_p^-1(lift_p(v))", lift_inverse(&p, q.as_slice())?.as_slice());
    show("exp_p(v) (e-geodesic)", exp_e(&p, &v).as_slice());

    let fitness = [3.0, 1.0, 2.0];
    let r = replicator(&p, &fitness);
    show("R_p f", r.as_slice());
    println!("{:<28} {:+.3e}", "sum of R_p f", r.as_slice().iter().sum::<f64>());
    let shifted: Vec<f64> = fitness.iter().map(|f| f + 10.0).collect();
    show("R_p (f + 10)", replicator(&p, &shifted).as_slice());
    println!("{:<28} {:.6}", "<v, v>_p (Fisher-Rao)", fr_inner(&p, &v, &v));

    // Product manifold: three nodes, four classes.
    let raw = NodeMatrix::new(3, 4, (0..12).map(|k| (k as f64 * 0.7).sin()).collect())?;
    let x = project_tangent(&raw)?;
    let w = lift_barycenter(&x);
    println!("\nassignment W = softmax(π0 x), rows:");
    for row in w.rows() {
        show("", row);
    }
    let field = replicator_rows(&w, &raw);
    let worst = field.rows().map(|r| r.iter().sum::<f64>().abs()).fold(0.0, f64::max);
    println!("{:<28} {:.3e}", "max |row sum| of R_W F", worst);

    let basis = HelmertBasis::new(4);
    let z = basis.field_to_coords(&x);
    let back = basis.coords_to_field(3, &z);
    let err = back.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{:<28} {} coordinates, round trip error {err:.1e}", "Helmert chart", z.len());
    println!("{:<28} {:.3}", "barycenter min max prob", Assignment::barycenter(3, 4).min_max_prob());
    Ok(())
}
