//! Monitored quantities: energy, mass, angular momentum, sup-norm, error
//! norms between fields, and convergence-order fits.
//!
//! The energy is evaluated through the assembled matrices,
//!
//! ```text
//! E(u) = 1/2 Re(u* K u) + beta/4 integral |u_h|^4,
//! ```
//!
//! with the quartic term integrated exactly per element so that it measures
//! the same discrete functional the time stepper conserves. An independent
//! element-loop route (gradients, rotation, potential and quartic terms all
//! recomputed from scratch at quadrature points) exists purely to
//! cross-check the assembly and is exercised by the tests.

use crate::error::{Error, Result};
use crate::mesh::{ComplexField, DofMap, Mesh};
use crate::operators::{DiscreteOperators, GpeProblem};
use crate::quadrature::triangle_rule;
use crate::sparse::dot_c;
use crate::C64;

/// One diagnostics row per time node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagRow {
    pub n: usize,
    pub t: f64,
    pub energy: f64,
    pub mass: f64,
    pub angular_momentum: f64,
    pub sup_norm: f64,
    pub fp_iters: usize,
}

/// Run parameters recorded alongside the time series.
#[derive(Debug, Clone, Copy)]
pub struct RunMeta {
    pub q: usize,
    pub h: f64,
    pub tau: f64,
    pub omega: f64,
    pub beta: f64,
    pub eps_fp: f64,
}

#[derive(Debug, Clone)]
pub struct RunDiagnostics {
    pub meta: RunMeta,
    pub rows: Vec<DiagRow>,
}

/// E(u) = 1/2 Re(u* K u) + beta/4 integral |u_h|^4.
pub fn energy(
    u: &ComplexField,
    ops: &DiscreteOperators,
    problem: &GpeProblem,
    mesh: &Mesh,
    dofs: &DofMap,
) -> f64 {
    let ku = ops.k.matvec_alloc(&u.values);
    let quadratic = 0.5 * dot_c(&u.values, &ku).re;
    if problem.beta == 0.0 {
        return quadratic;
    }
    quadratic + 0.25 * problem.beta * quartic_integral(u, mesh, dofs)
}

/// integral of |u_h|^4, degree-4 rule (exact for P1 fields).
pub fn quartic_integral(u: &ComplexField, mesh: &Mesh, dofs: &DofMap) -> f64 {
    let rule = triangle_rule(4).expect("degree-4 rule is built in");
    let zero = C64::new(0.0, 0.0);
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let coeff = [
            dofs.interior_index[tri[0]].map_or(zero, |i| u.values[i]),
            dofs.interior_index[tri[1]].map_or(zero, |i| u.values[i]),
            dofs.interior_index[tri[2]].map_or(zero, |i| u.values[i]),
        ];
        if coeff.iter().all(|c| *c == zero) {
            continue;
        }
        let area = 0.5 * mesh.double_area(t);
        let mut acc = 0.0;
        for (k, &bary) in rule.points.iter().enumerate() {
            let up = coeff[0] * bary[0] + coeff[1] * bary[1] + coeff[2] * bary[2];
            let d = up.norm_sqr();
            acc += rule.weights[k] * d * d;
        }
        total += acc * area;
    }
    total
}

/// Independent energy route: all four terms of the functional evaluated by
/// direct quadrature on each element, no assembled matrices involved.
pub fn energy_by_quadrature(
    u: &ComplexField,
    problem: &GpeProblem,
    mesh: &Mesh,
    dofs: &DofMap,
) -> f64 {
    let rule = triangle_rule(4).expect("degree-4 rule is built in");
    let zero = C64::new(0.0, 0.0);
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let p = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        let coeff = [
            dofs.interior_index[tri[0]].map_or(zero, |i| u.values[i]),
            dofs.interior_index[tri[1]].map_or(zero, |i| u.values[i]),
            dofs.interior_index[tri[2]].map_or(zero, |i| u.values[i]),
        ];
        let two_a = mesh.double_area(t);
        let area = 0.5 * two_a;
        let grad = [
            ((p[1].1 - p[2].1) / two_a, (p[2].0 - p[1].0) / two_a),
            ((p[2].1 - p[0].1) / two_a, (p[0].0 - p[2].0) / two_a),
            ((p[0].1 - p[1].1) / two_a, (p[1].0 - p[0].0) / two_a),
        ];
        // Complex gradient of u_h, constant on the element.
        let gx = coeff[0] * grad[0].0 + coeff[1] * grad[1].0 + coeff[2] * grad[2].0;
        let gy = coeff[0] * grad[0].1 + coeff[1] * grad[1].1 + coeff[2] * grad[2].1;
        let grad_sq = gx.norm_sqr() + gy.norm_sqr();

        let mut acc = 0.0;
        for (k, &bary) in rule.points.iter().enumerate() {
            let x = bary[0] * p[0].0 + bary[1] * p[1].0 + bary[2] * p[2].0;
            let y = bary[0] * p[0].1 + bary[1] * p[1].1 + bary[2] * p[2].1;
            let up = coeff[0] * bary[0] + coeff[1] * bary[1] + coeff[2] * bary[2];
            let d = up.norm_sqr();
            // L_z u = i (b . grad u) with b = (y, -x) at unit velocity.
            let lz = C64::i() * (gx * y - gy * x);
            let rot = (up.conj() * lz).re;
            acc += rule.weights[k]
                * (grad_sq - problem.omega * rot
                    + problem.potential.eval(x, y) * d
                    + 0.5 * problem.beta * d * d);
        }
        total += 0.5 * acc * area;
    }
    total
}

/// ||u||^2 in the discrete L2 inner product.
pub fn mass(u: &ComplexField, ops: &DiscreteOperators) -> f64 {
    let mu = ops.mass.matvec_c_alloc(&u.values);
    dot_c(&u.values, &mu).re
}

/// Expectation of the angular-momentum operator, Re(u* Lz u) with
/// Lz = -i S at unit angular velocity; real because -iS is Hermitian.
pub fn angular_momentum(u: &ComplexField, ops: &DiscreteOperators) -> f64 {
    let su = ops.s_unit.matvec_c_alloc(&u.values);
    // Re(u* (-i S) u) = Im(u* S u).
    dot_c(&u.values, &su).im
}

/// Largest nodal modulus.
pub fn sup_norm(u: &ComplexField) -> f64 {
    u.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// (L2, H1) norms of the difference of two fields on the same dof map;
/// H1 through the Mass + Kstiff form.
pub fn error_norms(
    a: &ComplexField,
    b: &ComplexField,
    ops: &DiscreteOperators,
) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() != ops.n_dofs {
        return Err(Error::Data(format!(
            "field lengths {} and {} do not match the {} dofs",
            a.len(),
            b.len(),
            ops.n_dofs
        )));
    }
    let d: Vec<C64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let md = ops.mass.matvec_c_alloc(&d);
    let kd = ops.kstiff.matvec_c_alloc(&d);
    let l2_sq = dot_c(&d, &md).re;
    let h1_sq = l2_sq + dot_c(&d, &kd).re;
    Ok((l2_sq.max(0.0).sqrt(), h1_sq.max(0.0).sqrt()))
}

/// Energy-form norm sqrt(Re(u* K u)); equivalent to H1 while the trap
/// inequality holds.
pub fn h_form_norm(u: &ComplexField, ops: &DiscreteOperators) -> f64 {
    let ku = ops.k.matvec_alloc(&u.values);
    dot_c(&u.values, &ku).re.max(0.0).sqrt()
}

/// Least-squares slope of log(error) against log(tau).
pub fn fit_order(taus: &[f64], errors: &[f64]) -> Result<f64> {
    if taus.len() != errors.len() {
        return Err(Error::Data(
            "order fit needs one error per step size".into(),
        ));
    }
    if taus.len() < 3 {
        return Err(Error::Data(format!(
            "order fit needs at least 3 samples, got {}",
            taus.len()
        )));
    }
    for (&t, &e) in taus.iter().zip(errors) {
        if !(t > 0.0) || !(e > 0.0) {
            return Err(Error::Data(format!(
                "order fit needs positive step sizes and errors, got ({t}, {e})"
            )));
        }
    }
    let n = taus.len() as f64;
    let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::Data(
            "order fit needs at least two distinct step sizes".into(),
        ));
    }
    Ok(num / den)
}
