//! The cG(q) time step: q decoupled complex linear systems, prefactorized
//! once per (tau, K), driven by a fixed-point iteration on the transformed
//! stage unknowns.
//!
//! Stage system per sweep, for i = 1..q:
//!
//! ```text
//! (Mass + i tau gamma_i K) U_i = a_i Mass u0 - i beta tau sum_nu b[i][nu] N(u_nu)
//! ```
//!
//! with the nonlinearity sampled at the 2q fine nodes,
//!
//! ```text
//! u_nu = c0[nu] u0 + sum_i c[i][nu] U_i,
//! ```
//!
//! warm-started from the previous step's stages, and stopped when the
//! mass-norm of the stage update (summed over stages) drops below eps_fp.
//! beta = 0 needs exactly one sweep: the system is already linear.
//!
//! The step endpoint u(t_{n+1}) is the degree-q polynomial evaluated at the
//! right end: recover the nodal stages through Sigma^-1 and combine with
//! ell_hat(1).

use crate::diagnostics::{self, DiagRow, RunDiagnostics, RunMeta};
use crate::error::{Error, Result};
use crate::mesh::{ComplexField, DofMap, Mesh};
use crate::operators::{nonlinear_residual, DiscreteOperators, GpeProblem};
use crate::sparse::{BandedLu, CsrMatrix};
use crate::tableau::CollocationTableau;
use crate::C64;

#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    /// Uniform step size.
    pub tau: f64,
    /// Fixed-point stopping tolerance in the stage mass-norm.
    pub eps_fp: f64,
    pub max_fp_iters: usize,
    /// Final time; the run takes round(T/tau) steps.
    pub t_final: f64,
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.eps_fp > 0.0) {
            return Err(Error::Config(format!(
                "eps_fp must be positive, got {}",
                self.eps_fp
            )));
        }
        if self.max_fp_iters == 0 {
            return Err(Error::Config("max_fp_iters must be at least 1".into()));
        }
        if self.t_final < self.tau {
            return Err(Error::Config(format!(
                "final time {} is shorter than one step {}",
                self.t_final, self.tau
            )));
        }
        Ok(())
    }
}

/// Transformed stage fields of one step, kept for warm-starting the next.
#[derive(Debug, Clone)]
pub struct StageState {
    /// U^i for i = 1..q, each of n_dofs coefficients.
    pub u_hat: Vec<Vec<C64>>,
    pub fp_iters: usize,
    pub converged: bool,
}

/// One reusable factorization of (Mass + i tau gamma_i K) per stage.
pub fn prefactorize(
    tableau: &CollocationTableau,
    ops: &DiscreteOperators,
    tau: f64,
) -> Result<Vec<BandedLu<C64>>> {
    let n = ops.n_dofs;
    let mut solvers = Vec::with_capacity(tableau.q);
    for &gamma in &tableau.gamma {
        let shift = C64::i() * tau * gamma;
        let mut trip: Vec<(usize, usize, C64)> = Vec::with_capacity(ops.mass.nnz() + ops.k.nnz());
        for i in 0..n {
            for e in ops.mass.row_ptr[i]..ops.mass.row_ptr[i + 1] {
                trip.push((i, ops.mass.col_idx[e], C64::new(ops.mass.values[e], 0.0)));
            }
            for e in ops.k.row_ptr[i]..ops.k.row_ptr[i + 1] {
                trip.push((i, ops.k.col_idx[e], shift * ops.k.values[e]));
            }
        }
        let system = CsrMatrix::from_triplets(n, n, &trip);
        solvers.push(BandedLu::from_csr(&system, ops.bandwidth, ops.bandwidth)?);
    }
    Ok(solvers)
}

/// Weighted nodal combination c[0] f[0] + c[1] f[1] + ...; both the stepper
/// endpoint and in-step reconstruction go through here so equal inputs give
/// bit-identical outputs.
fn combine(weights: &[f64], fields: &[&[C64]]) -> Vec<C64> {
    debug_assert_eq!(weights.len(), fields.len());
    debug_assert!(!fields.is_empty());
    let n = fields[0].len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (w, f) in weights.iter().zip(fields) {
        debug_assert_eq!(f.len(), n);
        if *w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(f.iter()) {
            *o += *v * *w;
        }
    }
    out
}

/// Value of the step polynomial at local coordinate s in [0,1], from the
/// q+1 nodal stage fields u^{n,0}..u^{n,q}.
pub fn reconstruct_in_step(
    stages: &[ComplexField],
    tableau: &CollocationTableau,
    s: f64,
) -> Result<ComplexField> {
    if stages.len() != tableau.q + 1 {
        return Err(Error::Data(format!(
            "reconstruction needs {} stage fields, got {}",
            tableau.q + 1,
            stages.len()
        )));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Data(format!(
            "local coordinate {s} outside the step interval [0, 1]"
        )));
    }
    let weights: Vec<f64> = (0..=tableau.q)
        .map(|j| tableau.ell_hat.value(j, s))
        .collect();
    let fields: Vec<&[C64]> = stages.iter().map(|f| f.values.as_slice()).collect();
    Ok(ComplexField {
        values: combine(&weights, &fields),
    })
}

/// Everything fixed across the steps of one run.
pub struct Stepper<'a> {
    pub tableau: &'a CollocationTableau,
    pub ops: &'a DiscreteOperators,
    pub mesh: &'a Mesh,
    pub dofs: &'a DofMap,
    pub problem: &'a GpeProblem,
    pub config: StepperConfig,
    solvers: Vec<BandedLu<C64>>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        tableau: &'a CollocationTableau,
        ops: &'a DiscreteOperators,
        mesh: &'a Mesh,
        dofs: &'a DofMap,
        problem: &'a GpeProblem,
        config: StepperConfig,
    ) -> Result<Self> {
        config.validate()?;
        let solvers = prefactorize(tableau, ops, config.tau)?;
        Ok(Stepper {
            tableau,
            ops,
            mesh,
            dofs,
            problem,
            config,
            solvers,
        })
    }

    /// Mass-norm squared of a coefficient vector.
    fn mass_norm_sq(&self, v: &[C64]) -> f64 {
        let mv = self.ops.mass.matvec_c_alloc(v);
        crate::sparse::dot_c(v, &mv).re
    }

    /// One step from u0 at t_n = step * tau; `warm` carries the previous
    /// step's stage state. Returns the endpoint field and this step's stages.
    pub fn step(
        &self,
        u0: &ComplexField,
        warm: Option<&StageState>,
        step: usize,
    ) -> Result<(ComplexField, StageState)> {
        let q = self.tableau.q;
        let n = self.ops.n_dofs;
        let tau = self.config.tau;
        let beta = self.problem.beta;
        debug_assert_eq!(u0.len(), n);

        let m_u0 = self.ops.mass.matvec_c_alloc(&u0.values);
        let rhs_base: Vec<Vec<C64>> = (0..q)
            .map(|i| {
                let ai = self.tableau.a[i];
                m_u0.iter().map(|&z| ai * z).collect()
            })
            .collect();

        // beta = 0: the stage systems are linear and decoupled; one solve.
        if beta == 0.0 {
            let u_hat: Vec<Vec<C64>> = (0..q)
                .map(|i| self.solvers[i].solve(&rhs_base[i]))
                .collect();
            let u1 = self.reconstruct_endpoint(u0, &u_hat);
            return Ok((
                u1,
                StageState {
                    u_hat,
                    fp_iters: 1,
                    converged: true,
                },
            ));
        }

        // Fixed-point sweeps on the transformed stages.
        let mut u_hat: Vec<Vec<C64>> = match warm {
            Some(prev) if prev.u_hat.len() == q && prev.u_hat[0].len() == n => prev.u_hat.clone(),
            _ => (0..q)
                .map(|i| {
                    let ai = self.tableau.a[i];
                    u0.values.iter().map(|&z| ai * z).collect()
                })
                .collect(),
        };

        let nf = 2 * q;
        for sweep in 1..=self.config.max_fp_iters {
            // Nonlinearity at the fine nodes from the current stages.
            let mut n_nu: Vec<Vec<C64>> = Vec::with_capacity(nf);
            for nu in 0..nf {
                let mut weights = Vec::with_capacity(q + 1);
                let mut fields: Vec<&[C64]> = Vec::with_capacity(q + 1);
                weights.push(self.tableau.c0[nu]);
                fields.push(&u0.values);
                // c[i][nu] is complex; fold it in as two real combinations.
                let mut u_nu = combine(&weights, &fields);
                for i in 0..q {
                    let ci = self.tableau.c[(i, nu)];
                    for (o, v) in u_nu.iter_mut().zip(&u_hat[i]) {
                        *o += ci * *v;
                    }
                }
                let field = ComplexField { values: u_nu };
                n_nu.push(nonlinear_residual(&field, self.mesh, self.dofs));
            }

            let mut delta_sq = 0.0;
            let mut next: Vec<Vec<C64>> = Vec::with_capacity(q);
            for i in 0..q {
                let mut rhs = rhs_base[i].clone();
                for nu in 0..nf {
                    let w = C64::i() * beta * tau * self.tableau.b[(i, nu)];
                    for (r, nv) in rhs.iter_mut().zip(&n_nu[nu]) {
                        *r -= w * *nv;
                    }
                }
                let sol = self.solvers[i].solve(&rhs);
                let diff: Vec<C64> = sol.iter().zip(&u_hat[i]).map(|(a, b)| a - b).collect();
                delta_sq += self.mass_norm_sq(&diff);
                next.push(sol);
            }
            u_hat = next;

            if delta_sq.sqrt() <= self.config.eps_fp {
                let u1 = self.reconstruct_endpoint(u0, &u_hat);
                return Ok((
                    u1,
                    StageState {
                        u_hat,
                        fp_iters: sweep,
                        converged: true,
                    },
                ));
            }
            if !delta_sq.is_finite() {
                return Err(Error::StepDiverged {
                    step,
                    t: step as f64 * tau,
                    iters: sweep,
                    last_update: delta_sq.sqrt(),
                    eps_fp: self.config.eps_fp,
                });
            }
        }
        Err(Error::StepDiverged {
            step,
            t: step as f64 * tau,
            iters: self.config.max_fp_iters,
            last_update: f64::NAN,
            eps_fp: self.config.eps_fp,
        })
    }

    /// Nodal stages from the transformed unknowns: u^{n,j} = (Sigma^-1 U)_j.
    pub fn nodal_stages(&self, u_hat: &[Vec<C64>]) -> Vec<ComplexField> {
        let q = self.tableau.q;
        let n = u_hat.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(q);
        for j in 0..q {
            let mut v = vec![C64::new(0.0, 0.0); n];
            for i in 0..q {
                let w = self.tableau.sigma_inv[(j, i)];
                for (o, x) in v.iter_mut().zip(&u_hat[i]) {
                    *o += w * *x;
                }
            }
            out.push(ComplexField { values: v });
        }
        out
    }

    fn reconstruct_endpoint(&self, u0: &ComplexField, u_hat: &[Vec<C64>]) -> ComplexField {
        let stages = self.nodal_stages(u_hat);
        let mut fields: Vec<&[C64]> = Vec::with_capacity(self.tableau.q + 1);
        fields.push(&u0.values);
        for s in &stages {
            fields.push(&s.values);
        }
        ComplexField {
            values: combine(&self.tableau.ell_hat_at_one, &fields),
        }
    }
}

/// Full trajectory and the field at the last completed node; `error` is set
/// if a step failed, with the diagnostics rows up to that point retained.
pub struct EvolveResult {
    pub diagnostics: RunDiagnostics,
    pub final_field: ComplexField,
    pub error: Option<Error>,
}

/// March round(T/tau) uniform steps from u0, recording diagnostics at every
/// node and invoking the callback with (n, t_n, field).
pub fn evolve<F>(
    u0: &ComplexField,
    problem: &GpeProblem,
    tableau: &CollocationTableau,
    ops: &DiscreteOperators,
    mesh: &Mesh,
    dofs: &DofMap,
    config: StepperConfig,
    mut callback: F,
) -> Result<EvolveResult>
where
    F: FnMut(usize, f64, &ComplexField),
{
    let stepper = Stepper::new(tableau, ops, mesh, dofs, problem, config)?;
    let n_steps = (config.t_final / config.tau).round() as usize;
    if n_steps == 0 {
        return Err(Error::Config(format!(
            "no steps: T = {} rounds to zero steps of tau = {}",
            config.t_final, config.tau
        )));
    }

    let meta = RunMeta {
        q: tableau.q,
        h: mesh.h,
        tau: config.tau,
        omega: problem.omega,
        beta: problem.beta,
        eps_fp: config.eps_fp,
    };
    let mut rows = Vec::with_capacity(n_steps + 1);
    let record = |n: usize, u: &ComplexField, fp_iters: usize, rows: &mut Vec<DiagRow>| {
        let t = n as f64 * config.tau;
        rows.push(DiagRow {
            n,
            t,
            energy: diagnostics::energy(u, ops, problem, mesh, dofs),
            mass: diagnostics::mass(u, ops),
            angular_momentum: diagnostics::angular_momentum(u, ops),
            sup_norm: diagnostics::sup_norm(u),
            fp_iters,
        });
    };

    let mut u = u0.clone();
    record(0, &u, 0, &mut rows);
    callback(0, 0.0, &u);
    let mut warm: Option<StageState> = None;
    for n in 0..n_steps {
        match stepper.step(&u, warm.as_ref(), n) {
            Ok((u_next, state)) => {
                u = u_next;
                record(n + 1, &u, state.fp_iters, &mut rows);
                callback(n + 1, (n + 1) as f64 * config.tau, &u);
                warm = Some(state);
            }
            Err(e) => {
                return Ok(EvolveResult {
                    diagnostics: RunDiagnostics { meta, rows },
                    final_field: u,
                    error: Some(e),
                });
            }
        }
    }
    Ok(EvolveResult {
        diagnostics: RunDiagnostics { meta, rows },
        final_field: u,
        error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_dofmap, build_mesh, interpolate};
    use crate::operators::{assemble_operators, Potential};
    use crate::sparse::{dot_c, smallest_eigenpair};
    use crate::tableau::build_tableau;

    fn free_problem(beta: f64) -> GpeProblem {
        GpeProblem {
            omega: 0.0,
            beta,
            potential: Potential::AnisotropicQuadratic {
                gamma_x: 0.0,
                gamma_y: 0.0,
            },
            lambda_margin: 0.2,
        }
    }

    fn trapped_problem(omega: f64, beta: f64) -> GpeProblem {
        GpeProblem {
            omega,
            beta,
            potential: Potential::AnisotropicQuadratic {
                gamma_x: 0.9,
                gamma_y: 1.1,
            },
            lambda_margin: 0.2,
        }
    }

    fn config(tau: f64, t_final: f64) -> StepperConfig {
        StepperConfig {
            tau,
            eps_fp: 1e-12,
            max_fp_iters: 200,
            t_final,
        }
    }

    struct Setup {
        mesh: Mesh,
        dofs: DofMap,
        ops: DiscreteOperators,
        problem: GpeProblem,
        tableau: CollocationTableau,
    }

    fn setup(n_h: usize, r: f64, q: usize, problem: GpeProblem) -> Setup {
        let mesh = build_mesh(r, n_h).unwrap();
        let dofs = build_dofmap(&mesh);
        let ops = assemble_operators(&mesh, &dofs, &problem).unwrap();
        let tableau = build_tableau(q).unwrap();
        Setup {
            mesh,
            dofs,
            ops,
            problem,
            tableau,
        }
    }

    fn gaussian_field(s: &Setup) -> ComplexField {
        interpolate(
            |x, y| C64::new(x, y) * (-(x * x + y * y)).exp(),
            &s.mesh,
            &s.dofs,
        )
        .unwrap()
    }

    #[test]
    fn factorization_round_trip() {
        let s = setup(8, 4.0, 2, trapped_problem(1.6, 50.0));
        let tau = 0.01;
        let solvers = prefactorize(&s.tableau, &s.ops, tau).unwrap();
        assert_eq!(solvers.len(), 2);
        // Conjugate eigenvalue pair gives genuinely distinct systems.
        assert!((s.tableau.gamma[0] - s.tableau.gamma[1]).norm() > 0.1);
        let n = s.ops.n_dofs;
        let r: Vec<C64> = (0..n)
            .map(|i| C64::new((i as f64 * 0.63).sin(), (i as f64 * 0.21).cos()))
            .collect();
        for (i, lu) in solvers.iter().enumerate() {
            let x = lu.solve(&r);
            // Residual against the explicitly assembled system matrix.
            let shift = C64::i() * tau * s.tableau.gamma[i];
            let mx = s.ops.mass.matvec_c_alloc(&x);
            let kx = s.ops.k.matvec_alloc(&x);
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..n {
                num += (mx[k] + shift * kx[k] - r[k]).norm_sqr();
                den += r[k].norm_sqr();
            }
            assert!(
                num.sqrt() / den.sqrt() <= 1e-10,
                "stage {i} residual {:.3e}",
                num.sqrt() / den.sqrt()
            );
        }
    }

    #[test]
    fn vanishing_tau_limit_returns_the_input() {
        let s = setup(6, 2.0, 1, free_problem(0.0));
        let solvers = prefactorize(&s.tableau, &s.ops, 1e-300).unwrap();
        let u = gaussian_field(&s);
        let rhs = s.ops.mass.matvec_c_alloc(&u.values);
        let x = solvers[0].solve(&rhs);
        for (a, b) in x.iter().zip(&u.values) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn conjugate_gamma_pair_makes_the_linear_step_time_reversible() {
        // q=2 carries a conjugate eigenvalue pair; with a real symmetric K
        // the rational stability function then satisfies R(z) R(-z) = 1, so
        // stepping, conjugating, stepping, conjugating is the identity.
        let s = setup(8, 2.0, 2, free_problem(0.0));
        assert!((s.tableau.gamma[1] - s.tableau.gamma[0].conj()).norm() <= 1e-14);
        let stepper = Stepper::new(
            &s.tableau,
            &s.ops,
            &s.mesh,
            &s.dofs,
            &s.problem,
            config(0.05, 1.0),
        )
        .unwrap();
        let u0 = gaussian_field(&s);
        let (u1, _) = stepper.step(&u0, None, 0).unwrap();
        let u1c = ComplexField {
            values: u1.values.iter().map(|z| z.conj()).collect(),
        };
        let (u2, _) = stepper.step(&u1c, None, 0).unwrap();
        let num: f64 = u2
            .values
            .iter()
            .zip(&u0.values)
            .map(|(a, b)| (a.conj() - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = u0.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den <= 1e-11, "reversibility defect {:.3e}", num / den);
    }

    #[test]
    fn q1_step_is_implicit_midpoint() {
        let s = setup(8, 4.0, 1, trapped_problem(1.0, 0.0));
        let tau = 0.05;
        let stepper = Stepper::new(
            &s.tableau,
            &s.ops,
            &s.mesh,
            &s.dofs,
            &s.problem,
            config(tau, 1.0),
        )
        .unwrap();
        let u0 = gaussian_field(&s);
        let (u1, state) = stepper.step(&u0, None, 0).unwrap();
        assert_eq!(state.fp_iters, 1);
        assert!(state.converged);

        // Midpoint: (M + i tau/2 K) u1 = (M - i tau/2 K) u0.
        let n = s.ops.n_dofs;
        let half = C64::i() * (tau / 2.0);
        let mut trip = Vec::new();
        for i in 0..n {
            for e in s.ops.mass.row_ptr[i]..s.ops.mass.row_ptr[i + 1] {
                trip.push((
                    i,
                    s.ops.mass.col_idx[e],
                    C64::new(s.ops.mass.values[e], 0.0),
                ));
            }
            for e in s.ops.k.row_ptr[i]..s.ops.k.row_ptr[i + 1] {
                trip.push((i, s.ops.k.col_idx[e], half * s.ops.k.values[e]));
            }
        }
        let sys = CsrMatrix::from_triplets(n, n, &trip);
        let lu = BandedLu::from_csr(&sys, s.ops.bandwidth, s.ops.bandwidth).unwrap();
        let mu = s.ops.mass.matvec_c_alloc(&u0.values);
        let ku = s.ops.k.matvec_alloc(&u0.values);
        let rhs: Vec<C64> = mu.iter().zip(&ku).map(|(m, k)| m - half * k).collect();
        let mid = lu.solve(&rhs);
        let num: f64 = u1
            .values
            .iter()
            .zip(&mid)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = mid.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den <= 1e-11, "relative difference {:.3e}", num / den);
    }

    #[test]
    fn eigenpair_propagation_has_superconvergent_one_step_error() {
        // K v = lambda M v with V = 0, Omega = 0; the semidiscrete solution
        // is exactly e^{-i lambda t} v, so one step isolates the time error.
        let s = setup(8, 1.0, 1, free_problem(0.0));
        let (lambda, v) = smallest_eigenpair(&s.ops.kstiff, &s.ops.mass, 1e-13, 500).unwrap();
        let v_field = ComplexField {
            values: v.iter().map(|&x| C64::new(x, 0.0)).collect(),
        };
        for q in 1..=3 {
            let tableau = build_tableau(q).unwrap();
            let mut errors = Vec::new();
            let taus = [0.2, 0.1, 0.05, 0.025];
            for &tau in &taus {
                let stepper = Stepper::new(
                    &tableau,
                    &s.ops,
                    &s.mesh,
                    &s.dofs,
                    &s.problem,
                    config(tau, 1.0),
                )
                .unwrap();
                let (u1, _) = stepper.step(&v_field, None, 0).unwrap();
                let phase = C64::from_polar(1.0, -lambda * tau);
                let diff: Vec<C64> = u1
                    .values
                    .iter()
                    .zip(&v_field.values)
                    .map(|(a, b)| a - phase * b)
                    .collect();
                let md = s.ops.mass.matvec_c_alloc(&diff);
                errors.push(dot_c(&diff, &md).re.sqrt());
            }
            let slope = crate::diagnostics::fit_order(&taus, &errors).unwrap();
            let target = (2 * q + 1) as f64;
            assert!(
                slope >= target - 0.2,
                "q={q}: one-step order {slope:.3}, expected >= {:.1} (errors {errors:?})",
                target - 0.2
            );
        }
    }

    #[test]
    fn reconstruction_interpolates_the_stages() {
        let s = setup(6, 2.0, 2, trapped_problem(1.0, 5.0));
        let tau = 0.02;
        let stepper = Stepper::new(
            &s.tableau,
            &s.ops,
            &s.mesh,
            &s.dofs,
            &s.problem,
            config(tau, 1.0),
        )
        .unwrap();
        let u0 = gaussian_field(&s);
        let (u1, state) = stepper.step(&u0, None, 0).unwrap();
        let mut stages = vec![u0.clone()];
        stages.extend(stepper.nodal_stages(&state.u_hat));

        // s = 0 returns u0 exactly.
        let at0 = reconstruct_in_step(&stages, &s.tableau, 0.0).unwrap();
        assert_eq!(at0, u0);
        // s = a Gauss node returns that stage exactly.
        for j in 0..s.tableau.q {
            let at = reconstruct_in_step(&stages, &s.tableau, s.tableau.gl_nodes[j]).unwrap();
            assert_eq!(at, stages[j + 1]);
        }
        // s = 1 reproduces the endpoint bit-for-bit.
        let at1 = reconstruct_in_step(&stages, &s.tableau, 1.0).unwrap();
        assert_eq!(at1, u1);
        // Out-of-range s is a domain error.
        assert!(reconstruct_in_step(&stages, &s.tableau, -0.01).is_err());
        assert!(reconstruct_in_step(&stages, &s.tableau, 1.01).is_err());
    }

    #[test]
    fn q1_endpoint_formula() {
        // u(1) = 2 u^{n,1} - u^{n,0} for the linear-in-time q=1 polynomial.
        let s = setup(6, 2.0, 1, free_problem(0.0));
        let stepper = Stepper::new(
            &s.tableau,
            &s.ops,
            &s.mesh,
            &s.dofs,
            &s.problem,
            config(0.05, 1.0),
        )
        .unwrap();
        let u0 = gaussian_field(&s);
        let (u1, state) = stepper.step(&u0, None, 0).unwrap();
        let mid = &stepper.nodal_stages(&state.u_hat)[0];
        for k in 0..u0.len() {
            let want = 2.0 * mid.values[k] - u0.values[k];
            assert!((u1.values[k] - want).norm() <= 1e-13);
        }
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let s = setup(6, 2.0, 2, trapped_problem(1.6, 200.0));
        let u0 = ComplexField::zeros(s.ops.n_dofs);
        let res = evolve(
            &u0,
            &s.problem,
            &s.tableau,
            &s.ops,
            &s.mesh,
            &s.dofs,
            config(0.05, 0.25),
            |_, _, _| {},
        )
        .unwrap();
        assert!(res.error.is_none());
        assert_eq!(res.diagnostics.rows.len(), 6);
        for row in &res.diagnostics.rows {
            assert_eq!(row.energy, 0.0);
            assert_eq!(row.mass, 0.0);
            assert_eq!(row.sup_norm, 0.0);
        }
        assert!(res.final_field.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn energy_is_conserved_and_mass_drifts_only_with_interaction() {
        // Nonlinear desk-top run: energy drift bounded by the fixed-point
        // tolerance; linear variant conserves mass to near machine accuracy.
        let s = setup(16, 4.0, 2, trapped_problem(1.0, 5.0));
        let mut u0 = gaussian_field(&s);
        let m0 = diagnostics::mass(&u0, &s.ops).sqrt();
        for v in &mut u0.values {
            *v /= m0;
        }
        let res = evolve(
            &u0,
            &s.problem,
            &s.tableau,
            &s.ops,
            &s.mesh,
            &s.dofs,
            config(0.01, 0.2),
            |_, _, _| {},
        )
        .unwrap();
        assert!(res.error.is_none(), "{:?}", res.error);
        let e0 = res.diagnostics.rows[0].energy;
        for row in &res.diagnostics.rows {
            let bound = 1e3 * 1e-12 * (row.n.max(1) as f64);
            assert!(
                (row.energy - e0).abs() <= bound.max(1e-12),
                "step {}: energy drift {:.3e} over bound {bound:.3e}",
                row.n,
                (row.energy - e0).abs()
            );
        }

        let linear = free_problem(0.0);
        let ops = assemble_operators(&s.mesh, &s.dofs, &linear).unwrap();
        let res = evolve(
            &u0,
            &linear,
            &s.tableau,
            &ops,
            &s.mesh,
            &s.dofs,
            config(0.01, 0.2),
            |_, _, _| {},
        )
        .unwrap();
        let m0 = res.diagnostics.rows[0].mass;
        for row in &res.diagnostics.rows {
            assert!(
                (row.mass - m0).abs() <= 1e-10 * m0,
                "step {}: relative mass drift {:.3e}",
                row.n,
                (row.mass - m0).abs() / m0
            );
        }
    }

    #[test]
    fn fixed_point_contracts_faster_for_smaller_steps() {
        let s = setup(12, 4.0, 2, trapped_problem(1.0, 20.0));
        let mut u0 = gaussian_field(&s);
        let m0 = diagnostics::mass(&u0, &s.ops).sqrt();
        for v in &mut u0.values {
            *v /= m0;
        }
        let median_iters = |tau: f64, steps: usize| -> usize {
            let res = evolve(
                &u0,
                &s.problem,
                &s.tableau,
                &s.ops,
                &s.mesh,
                &s.dofs,
                config(tau, tau * steps as f64),
                |_, _, _| {},
            )
            .unwrap();
            assert!(res.error.is_none());
            let mut iters: Vec<usize> = res.diagnostics.rows[1..]
                .iter()
                .map(|r| r.fp_iters)
                .collect();
            iters.sort_unstable();
            iters[iters.len() / 2]
        };
        let coarse = median_iters(0.02, 16);
        let fine = median_iters(0.01, 32);
        assert!(
            fine <= coarse,
            "median iterations grew from {coarse} to {fine} when halving tau"
        );
    }

    #[test]
    fn divergence_is_reported_with_partial_diagnostics() {
        // An absurd step size with strong interaction defeats the iteration.
        let s = setup(8, 2.0, 1, trapped_problem(0.0, 5000.0));
        let mut u0 = gaussian_field(&s);
        let m0 = diagnostics::mass(&u0, &s.ops).sqrt();
        for v in &mut u0.values {
            *v /= m0;
        }
        let mut cfg = config(5.0, 10.0);
        cfg.max_fp_iters = 30;
        let res = evolve(
            &u0,
            &s.problem,
            &s.tableau,
            &s.ops,
            &s.mesh,
            &s.dofs,
            cfg,
            |_, _, _| {},
        )
        .unwrap();
        match res.error {
            Some(Error::StepDiverged { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(res.diagnostics.rows.len(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(config(0.0, 1.0).validate().is_err());
        assert!(config(-0.1, 1.0).validate().is_err());
        let mut c = config(0.1, 1.0);
        c.eps_fp = 0.0;
        assert!(c.validate().is_err());
        c = config(0.2, 0.1);
        assert!(c.validate().is_err());
        c = config(0.1, 1.0);
        c.max_fp_iters = 0;
        assert!(c.validate().is_err());
    }
}
