//! Assembly of the discrete operators on the P1 space: mass matrix, the
//! Hamiltonian form K = Kstiff + i Omega S + Kpot, the cubic nonlinearity
//! functional, and the trap-strength check.
//!
//! The rotation block is assembled in the antisymmetrized form
//!
//! ```text
//! S[a][b] = 1/2 integral of (b.grad phi_a) phi_b - (b.grad phi_b) phi_a
//! ```
//!
//! with b(x,y) = (y, -x) at unit angular velocity, and element matrices are
//! computed once per (a,b) pair and mirrored, so symmetry of the real parts
//! and antisymmetry of S hold exactly in floating point; K is then Hermitian
//! to the last bit rather than to a tolerance.
//!
//! Quadrature: degree-2 rule for the rotation term (integrand is quadratic),
//! degree-4 for the potential and the cubic term (exact for quadratic V and
//! for |u_h|^2 u_h phi against P1 fields). A non-polynomial V is sampled at
//! the quadrature points, which is the only spatial approximation beyond
//! interpolation.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::mesh::{ComplexField, DofMap, Mesh};
use crate::quadrature::{triangle_rule, TriangleRule};
use crate::sparse::CsrMatrix;
use crate::C64;

/// Trap potential V(x, y) >= 0.
#[derive(Debug, Clone)]
pub enum Potential {
    /// (gamma_x x)^2 + (gamma_y y)^2.
    AnisotropicQuadratic { gamma_x: f64, gamma_y: f64 },
    /// Arbitrary expression in x and y, sampled at quadrature points.
    Expression(Expr),
}

impl Potential {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Potential::AnisotropicQuadratic { gamma_x, gamma_y } => {
                let gx = gamma_x * x;
                let gy = gamma_y * y;
                gx * gx + gy * gy
            }
            Potential::Expression(e) => e.eval(x, y),
        }
    }
}

/// Physical parameters of one run.
#[derive(Debug, Clone)]
pub struct GpeProblem {
    /// Angular velocity of the rotating frame.
    pub omega: f64,
    /// Interaction strength, nonnegative.
    pub beta: f64,
    pub potential: Potential,
    /// Margin parameter of the trap-strength inequality.
    pub lambda_margin: f64,
}

/// Assembled sparse operators over the interior dofs.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub n_dofs: usize,
    /// Half-bandwidth of every matrix below (= N_h under row-major dofs).
    pub bandwidth: usize,
    pub mass: CsrMatrix<f64>,
    pub kstiff: CsrMatrix<f64>,
    /// Rotation form at unit angular velocity; real antisymmetric.
    pub s_unit: CsrMatrix<f64>,
    pub kpot: CsrMatrix<f64>,
    /// K = Kstiff + i Omega S + Kpot; Hermitian.
    pub k: CsrMatrix<C64>,
}

/// Element geometry: vertex coordinates, constant basis gradients, area.
struct ElementGeometry {
    p: [(f64, f64); 3],
    grad: [(f64, f64); 3],
    area: f64,
}

fn element_geometry(mesh: &Mesh, t: usize) -> ElementGeometry {
    let [v0, v1, v2] = mesh.triangles[t];
    let p = [mesh.vertices[v0], mesh.vertices[v1], mesh.vertices[v2]];
    let two_a = mesh.double_area(t);
    let grad = [
        ((p[1].1 - p[2].1) / two_a, (p[2].0 - p[1].0) / two_a),
        ((p[2].1 - p[0].1) / two_a, (p[0].0 - p[2].0) / two_a),
        ((p[0].1 - p[1].1) / two_a, (p[1].0 - p[0].0) / two_a),
    ];
    ElementGeometry {
        p,
        grad,
        area: 0.5 * two_a,
    }
}

impl ElementGeometry {
    /// Physical coordinates of a barycentric quadrature point.
    fn point(&self, bary: [f64; 3]) -> (f64, f64) {
        (
            bary[0] * self.p[0].0 + bary[1] * self.p[1].0 + bary[2] * self.p[2].0,
            bary[0] * self.p[0].1 + bary[1] * self.p[1].1 + bary[2] * self.p[2].1,
        )
    }
}

/// Consistent P1 mass matrix on the interior dofs.
pub fn assemble_mass(mesh: &Mesh, dofs: &DofMap) -> CsrMatrix<f64> {
    let n = dofs.n_dofs;
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for t in 0..mesh.triangles.len() {
        let area = 0.5 * mesh.double_area(t);
        let tri = mesh.triangles[t];
        for a in 0..3 {
            let Some(ia) = dofs.interior_index[tri[a]] else {
                continue;
            };
            for b in 0..3 {
                let Some(ib) = dofs.interior_index[tri[b]] else {
                    continue;
                };
                let v = if a == b { area / 6.0 } else { area / 12.0 };
                trip.push((ia, ib, v));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

/// All operators for one problem on one mesh.
pub fn assemble_operators(
    mesh: &Mesh,
    dofs: &DofMap,
    problem: &GpeProblem,
) -> Result<DiscreteOperators> {
    if problem.beta < 0.0 {
        return Err(Error::Validation(format!(
            "interaction strength beta must be nonnegative, got {}",
            problem.beta
        )));
    }
    // The potential must be nonnegative on the domain; sample the vertices.
    for &(x, y) in &mesh.vertices {
        let v = problem.potential.eval(x, y);
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Validation(format!(
                "potential must be finite and nonnegative, got V({x}, {y}) = {v}"
            )));
        }
    }

    let n = dofs.n_dofs;
    let rule2 = triangle_rule(2)?;
    let rule4 = triangle_rule(4)?;
    let nel = mesh.triangles.len();
    let mut trip_stiff = Vec::with_capacity(9 * nel);
    let mut trip_s = Vec::with_capacity(6 * nel);
    let mut trip_pot = Vec::with_capacity(9 * nel);
    let mut trip_k = Vec::with_capacity(9 * nel);

    for t in 0..nel {
        let geo = element_geometry(mesh, t);
        let tri = mesh.triangles[t];
        let idx: [Option<usize>; 3] = [
            dofs.interior_index[tri[0]],
            dofs.interior_index[tri[1]],
            dofs.interior_index[tri[2]],
        ];

        // Local matrices for a <= b, mirrored for exact (anti)symmetry.
        let mut stiff = [[0.0f64; 3]; 3];
        let mut rot = [[0.0f64; 3]; 3];
        let mut pot = [[0.0f64; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let st = geo.area * (geo.grad[a].0 * geo.grad[b].0 + geo.grad[a].1 * geo.grad[b].1);
                stiff[a][b] = st;
                stiff[b][a] = st;

                let mut pv = 0.0;
                for (k, &bary) in rule4.points.iter().enumerate() {
                    let (x, y) = geo.point(bary);
                    pv += rule4.weights[k] * problem.potential.eval(x, y) * bary[a] * bary[b];
                }
                pv *= geo.area;
                pot[a][b] = pv;
                pot[b][a] = pv;

                if a != b {
                    // 1/2 [ (b.grad phi_a) phi_b - (b.grad phi_b) phi_a ]
                    // at unit angular velocity, b(x,y) = (y, -x).
                    let mut sv = 0.0;
                    for (k, &bary) in rule2.points.iter().enumerate() {
                        let (x, y) = geo.point(bary);
                        let ba = y * geo.grad[a].0 - x * geo.grad[a].1;
                        let bb = y * geo.grad[b].0 - x * geo.grad[b].1;
                        sv += rule2.weights[k] * 0.5 * (ba * bary[b] - bb * bary[a]);
                    }
                    sv *= geo.area;
                    rot[a][b] = sv;
                    rot[b][a] = -sv;
                }
            }
        }

        for a in 0..3 {
            let Some(ia) = idx[a] else { continue };
            for b in 0..3 {
                let Some(ib) = idx[b] else { continue };
                trip_stiff.push((ia, ib, stiff[a][b]));
                trip_pot.push((ia, ib, pot[a][b]));
                if rot[a][b] != 0.0 {
                    trip_s.push((ia, ib, rot[a][b]));
                }
                trip_k.push((
                    ia,
                    ib,
                    C64::new(stiff[a][b] + pot[a][b], problem.omega * rot[a][b]),
                ));
            }
        }
    }

    let mass = assemble_mass(mesh, dofs);
    let kstiff = CsrMatrix::from_triplets(n, n, &trip_stiff);
    let s_unit = CsrMatrix::from_triplets(n, n, &trip_s);
    let kpot = CsrMatrix::from_triplets(n, n, &trip_pot);
    let k = CsrMatrix::from_triplets(n, n, &trip_k);
    let bandwidth = k.bandwidth().max(mass.bandwidth());
    Ok(DiscreteOperators {
        n_dofs: n,
        bandwidth,
        mass,
        kstiff,
        s_unit,
        kpot,
        k,
    })
}

/// N(u)[i] = integral of |u_h|^2 u_h phi_i, assembled element-wise with the
/// degree-4 rule (exact: the integrand is quartic per element).
pub fn nonlinear_residual(u: &ComplexField, mesh: &Mesh, dofs: &DofMap) -> Vec<C64> {
    let rule4 = triangle_rule(4).expect("degree-4 rule is built in");
    nonlinear_residual_with_rule(u, mesh, dofs, &rule4)
}

pub(crate) fn nonlinear_residual_with_rule(
    u: &ComplexField,
    mesh: &Mesh,
    dofs: &DofMap,
    rule: &TriangleRule,
) -> Vec<C64> {
    debug_assert_eq!(u.len(), dofs.n_dofs);
    let zero = C64::new(0.0, 0.0);
    let mut out = vec![zero; dofs.n_dofs];
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangles[t];
        let idx = [
            dofs.interior_index[tri[0]],
            dofs.interior_index[tri[1]],
            dofs.interior_index[tri[2]],
        ];
        let coeff = [
            idx[0].map_or(zero, |i| u.values[i]),
            idx[1].map_or(zero, |i| u.values[i]),
            idx[2].map_or(zero, |i| u.values[i]),
        ];
        if coeff.iter().all(|c| *c == zero) {
            continue;
        }
        let area = 0.5 * mesh.double_area(t);
        let mut local = [zero; 3];
        for (k, &bary) in rule.points.iter().enumerate() {
            let up = coeff[0] * bary[0] + coeff[1] * bary[1] + coeff[2] * bary[2];
            let g = up * up.norm_sqr() * rule.weights[k];
            local[0] += g * bary[0];
            local[1] += g * bary[1];
            local[2] += g * bary[2];
        }
        for a in 0..3 {
            if let Some(ia) = idx[a] {
                out[ia] += local[a] * area;
            }
        }
    }
    out
}

/// Result of the trap-strength inequality scan.
#[derive(Debug, Clone, Copy)]
pub struct TrapCheck {
    pub pass: bool,
    /// Minimum of V - (1+lambda)/4 Omega^2 (x^2+y^2) over quadrature points.
    pub worst_margin: f64,
}

/// Check V(x) - (1+lambda)/4 Omega^2 |x|^2 >= 0 at every quadrature point;
/// rotation must not overwhelm the confining trap or the form K loses
/// ellipticity and the scheme its stability basis.
pub fn validate_trap(problem: &GpeProblem, mesh: &Mesh) -> TrapCheck {
    let rule4 = triangle_rule(4).expect("degree-4 rule is built in");
    let factor = (1.0 + problem.lambda_margin) / 4.0 * problem.omega * problem.omega;
    let mut worst = f64::INFINITY;
    for t in 0..mesh.triangles.len() {
        let geo = element_geometry(mesh, t);
        for &bary in &rule4.points {
            let (x, y) = geo.point(bary);
            let margin = problem.potential.eval(x, y) - factor * (x * x + y * y);
            if margin < worst {
                worst = margin;
            }
        }
    }
    TrapCheck {
        pass: worst >= 0.0,
        worst_margin: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_dofmap, build_mesh, interpolate};
    use crate::sparse::dot_c;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn quadratic_problem(omega: f64, beta: f64, lambda: f64) -> GpeProblem {
        GpeProblem {
            omega,
            beta,
            potential: Potential::AnisotropicQuadratic {
                gamma_x: 0.9,
                gamma_y: 1.1,
            },
            lambda_margin: lambda,
        }
    }

    fn free_problem() -> GpeProblem {
        GpeProblem {
            omega: 0.0,
            beta: 0.0,
            potential: Potential::AnisotropicQuadratic {
                gamma_x: 0.0,
                gamma_y: 0.0,
            },
            lambda_margin: 0.2,
        }
    }

    /// Deterministic pseudo-random complex field.
    fn noise_field(n: usize, seed: u64) -> ComplexField {
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        ComplexField {
            values: (0..n).map(|_| C64::new(next(), next())).collect(),
        }
    }

    #[test]
    fn stiffness_has_the_five_point_stencil() {
        // Interior node with all-interior neighbors: diagonal 4, axis
        // neighbors -1, diagonal neighbors exactly 0 on this split.
        let mesh = build_mesh(2.0, 4).unwrap();
        let dofs = build_dofmap(&mesh);
        let ops = assemble_operators(&mesh, &dofs, &free_problem()).unwrap();
        let center = dofs.interior_index[mesh.vertex_id(2, 2)].unwrap();
        assert_abs_diff_eq!(ops.kstiff.get(center, center), 4.0, epsilon = 1e-13);
        for (i, j) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            let d = dofs.interior_index[mesh.vertex_id(i, j)].unwrap();
            assert_abs_diff_eq!(ops.kstiff.get(center, d), -1.0, epsilon = 1e-13);
        }
        for (i, j) in [(1, 1), (3, 3), (1, 3), (3, 1)] {
            let d = dofs.interior_index[mesh.vertex_id(i, j)].unwrap();
            assert_abs_diff_eq!(ops.kstiff.get(center, d), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn mass_row_sum_and_diagonal() {
        let mesh = build_mesh(2.0, 4).unwrap();
        let dofs = build_dofmap(&mesh);
        let mass = assemble_mass(&mesh, &dofs);
        let h2 = mesh.h * mesh.h;
        let center = dofs.interior_index[mesh.vertex_id(2, 2)].unwrap();
        let row_sum: f64 = (0..dofs.n_dofs).map(|j| mass.get(center, j)).sum();
        assert_abs_diff_eq!(row_sum, h2, epsilon = 1e-13);
        assert_abs_diff_eq!(mass.get(center, center), h2 / 2.0, epsilon = 1e-13);
    }

    #[test]
    fn single_dof_mesh_hand_values() {
        let mesh = build_mesh(1.0, 2).unwrap();
        let dofs = build_dofmap(&mesh);
        let ops = assemble_operators(&mesh, &dofs, &free_problem()).unwrap();
        assert_eq!(ops.n_dofs, 1);
        assert_abs_diff_eq!(ops.mass.get(0, 0), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(ops.kstiff.get(0, 0), 4.0, epsilon = 1e-14);
        // N([1]) = sum over 6 incident triangles of the quartic self-integral.
        let u = ComplexField::new(vec![C64::new(1.0, 0.0)]).unwrap();
        let n = nonlinear_residual(&u, &mesh, &dofs);
        assert_abs_diff_eq!(n[0].re, mesh.h * mesh.h / 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(n[0].im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn hamiltonian_is_exactly_hermitian() {
        let mesh = build_mesh(8.0, 8).unwrap();
        let dofs = build_dofmap(&mesh);
        for omega in [0.0, 1.6] {
            let ops =
                assemble_operators(&mesh, &dofs, &quadratic_problem(omega, 200.0, 0.2)).unwrap();
            for i in 0..ops.n_dofs {
                for j in 0..ops.n_dofs {
                    let diff = (ops.k.get(i, j) - ops.k.get(j, i).conj()).norm();
                    assert!(diff <= 1e-13, "K[{i}][{j}] hermiticity off by {diff:.3e}");
                }
            }
            if omega == 0.0 {
                let max_im = (0..ops.n_dofs)
                    .flat_map(|i| (0..ops.n_dofs).map(move |j| (i, j)))
                    .map(|(i, j)| ops.k.get(i, j).im.abs())
                    .fold(0.0, f64::max);
                assert_eq!(max_im, 0.0);
            }
        }
    }

    #[test]
    fn zero_potential_gives_zero_kpot() {
        let mesh = build_mesh(1.0, 4).unwrap();
        let dofs = build_dofmap(&mesh);
        let ops = assemble_operators(&mesh, &dofs, &free_problem()).unwrap();
        assert!(ops.kpot.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotation_block_scales_exactly_with_omega() {
        let mesh = build_mesh(4.0, 6).unwrap();
        let dofs = build_dofmap(&mesh);
        let p1 = quadratic_problem(1.6, 0.0, 0.2);
        let p2 = quadratic_problem(3.2, 0.0, 0.2);
        let k1 = assemble_operators(&mesh, &dofs, &p1).unwrap().k;
        let k2 = assemble_operators(&mesh, &dofs, &p2).unwrap().k;
        for (v1, v2) in k1.values.iter().zip(&k2.values) {
            assert_eq!(v2.im, 2.0 * v1.im);
            assert_eq!(v2.re, v1.re);
        }
    }

    #[test]
    fn real_fields_see_no_rotation_energy() {
        let mesh = build_mesh(3.0, 6).unwrap();
        let dofs = build_dofmap(&mesh);
        let ops = assemble_operators(&mesh, &dofs, &quadratic_problem(1.6, 0.0, 0.2)).unwrap();
        let u: Vec<C64> = (0..dofs.n_dofs)
            .map(|i| C64::new((i as f64 * 0.37).sin(), 0.0))
            .collect();
        let su = ops.s_unit.matvec_c_alloc(&u);
        let quad = dot_c(&u, &su);
        // u^T S u = 0 for real u by antisymmetry.
        assert_abs_diff_eq!(quad.re, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_form_of_k_is_real() {
        let mesh = build_mesh(8.0, 8).unwrap();
        let dofs = build_dofmap(&mesh);
        let ops = assemble_operators(&mesh, &dofs, &quadratic_problem(1.6, 200.0, 0.2)).unwrap();
        for seed in 0..5 {
            let u = noise_field(dofs.n_dofs, seed);
            let ku = ops.k.matvec_alloc(&u.values);
            let form = dot_c(&u.values, &ku);
            let scale: f64 = u.values.iter().map(|z| z.norm_sqr()).sum();
            assert!(
                form.im.abs() <= 1e-12 * scale.max(1.0),
                "Im = {:.3e}",
                form.im
            );
        }
    }

    #[test]
    fn hermitian_k_is_positive_definite_when_trap_check_passes() {
        // Discrete ellipticity witness via the real symmetric embedding
        // [[Re K, -Im K], [Im K, Re K]] whose spectrum equals that of K
        // with doubled multiplicity.
        let mesh = build_mesh(8.0, 8).unwrap();
        let dofs = build_dofmap(&mesh);
        let problem = quadratic_problem(1.6, 0.0, 0.2);
        assert!(validate_trap(&problem, &mesh).pass);
        let ops = assemble_operators(&mesh, &dofs, &problem).unwrap();
        let n = ops.n_dofs;
        let mut emb = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let z = ops.k.get(i, j);
                emb[(i, j)] = z.re;
                emb[(n + i, n + j)] = z.re;
                emb[(i, n + j)] = -z.im;
                emb[(n + i, j)] = z.im;
            }
        }
        let min_eig = emb
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig > 0.0, "min eigenvalue {min_eig:.3e}");
    }

    #[test]
    fn rayleigh_quotient_converges_at_second_order() {
        // Interpolant of the first Dirichlet eigenfunction of -Laplace on
        // (-1,1)^2; its Rayleigh quotient tends to pi^2/2 as O(h^2).
        let exact = std::f64::consts::PI * std::f64::consts::PI / 2.0;
        let mut errors = Vec::new();
        for n_h in [8usize, 16, 32] {
            let mesh = build_mesh(1.0, n_h).unwrap();
            let dofs = build_dofmap(&mesh);
            let ops = assemble_operators(&mesh, &dofs, &free_problem()).unwrap();
            let u = interpolate(
                |x, y| {
                    C64::new(
                        (std::f64::consts::PI * x / 2.0).cos()
                            * (std::f64::consts::PI * y / 2.0).cos(),
                        0.0,
                    )
                },
                &mesh,
                &dofs,
            )
            .unwrap();
            let ku = ops.k.matvec_alloc(&u.values);
            let mu = ops.mass.matvec_c_alloc(&u.values);
            let rq = dot_c(&u.values, &ku).re / dot_c(&u.values, &mu).re;
            errors.push((rq - exact).abs());
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(
                (order - 2.0).abs() <= 0.2,
                "observed order {order:.3} (errors {errors:?})"
            );
        }
    }

    #[test]
    fn cubic_homogeneity_of_the_nonlinearity() {
        let mesh = build_mesh(2.0, 5).unwrap();
        let dofs = build_dofmap(&mesh);
        let u = noise_field(dofs.n_dofs, 7);
        let n1 = nonlinear_residual(&u, &mesh, &dofs);
        let c = 1.7;
        let scaled = ComplexField {
            values: u.values.iter().map(|&z| z * c).collect(),
        };
        let n2 = nonlinear_residual(&scaled, &mesh, &dofs);
        for (a, b) in n1.iter().zip(&n2) {
            assert!((*b - *a * c.powi(3)).norm() <= 1e-12 * b.norm().max(1e-30));
        }
        let zero = ComplexField::zeros(dofs.n_dofs);
        assert!(nonlinear_residual(&zero, &mesh, &dofs)
            .iter()
            .all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn trap_check_examples() {
        let mesh = build_mesh(8.0, 16).unwrap();
        assert!(validate_trap(&quadratic_problem(1.6, 0.0, 0.2), &mesh).pass);
        assert!(!validate_trap(&quadratic_problem(1.6, 0.0, 0.3), &mesh).pass);
        let no_rotation = quadratic_problem(0.0, 0.0, 5.0);
        let check = validate_trap(&no_rotation, &mesh);
        assert!(check.pass);
        assert!(check.worst_margin >= 0.0);
    }

    #[test]
    fn negative_parameters_are_rejected() {
        let mesh = build_mesh(1.0, 2).unwrap();
        let dofs = build_dofmap(&mesh);
        let mut p = quadratic_problem(0.0, -1.0, 0.2);
        assert!(assemble_operators(&mesh, &dofs, &p).is_err());
        p.beta = 1.0;
        p.potential = Potential::Expression(Expr::parse("x").unwrap());
        assert!(assemble_operators(&mesh, &dofs, &p).is_err());
    }
}
