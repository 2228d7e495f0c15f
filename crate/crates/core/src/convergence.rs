//! Convergence experiment: evolve the same initial data under a grid of
//! (q, tau) cells, measure the final-time L2 error of each against one
//! shared high-order reference trajectory, and fit error slopes per q.
//!
//! Cells run in parallel (they share only immutable operators); a failing
//! cell is recorded and the experiment continues. The reference run failing
//! is fatal since every cell compares against it.

use crate::diagnostics::{error_norms, fit_order};
use crate::error::{Error, Result};
use crate::mesh::{ComplexField, DofMap, Mesh};
use crate::operators::{DiscreteOperators, GpeProblem};
use crate::stepper::{evolve, StepperConfig};
use crate::tableau::build_tableau;
use rayon::prelude::*;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct ConvergenceSpec {
    pub q_list: Vec<usize>,
    /// Strictly decreasing step sizes for the test cells.
    pub tau_list: Vec<f64>,
    pub ref_q: usize,
    pub ref_tau: f64,
    pub t_final: f64,
    pub eps_fp: f64,
    pub max_fp_iters: usize,
}

impl ConvergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.q_list.is_empty() {
            return Err(Error::Config("q_list must not be empty".into()));
        }
        if self.tau_list.is_empty() {
            return Err(Error::Config("tau_list must not be empty".into()));
        }
        for w in self.tau_list.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(format!(
                    "tau_list must be strictly decreasing, got {} before {}",
                    w[0], w[1]
                )));
            }
        }
        let min_tau = *self.tau_list.last().expect("nonempty");
        if !(self.tau_list[0] > 0.0) || !(min_tau > 0.0) {
            return Err(Error::Config("tau_list entries must be positive".into()));
        }
        if !(self.ref_tau > 0.0) || self.ref_tau > min_tau / 8.0 {
            return Err(Error::Config(format!(
                "reference tau {} must be at least 8x smaller than the smallest \
                 test tau {min_tau}",
                self.ref_tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceCell {
    pub q: usize,
    pub tau: f64,
    /// Final-time L2 error against the reference, or the failure report.
    pub outcome: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub cells: Vec<ConvergenceCell>,
    /// Fitted error slope per q; None with fewer than 3 successful cells.
    pub slopes: Vec<(usize, Option<f64>)>,
}

pub fn run_convergence_experiment(
    u0: &ComplexField,
    problem: &GpeProblem,
    mesh: &Mesh,
    dofs: &DofMap,
    ops: &DiscreteOperators,
    spec: &ConvergenceSpec,
) -> Result<ConvergenceReport> {
    spec.validate()?;

    let run = |q: usize, tau: f64| -> std::result::Result<ComplexField, String> {
        let tableau = build_tableau(q).map_err(|e| e.to_string())?;
        let config = StepperConfig {
            tau,
            eps_fp: spec.eps_fp,
            max_fp_iters: spec.max_fp_iters,
            t_final: spec.t_final,
        };
        let res = evolve(u0, problem, &tableau, ops, mesh, dofs, config, |_, _, _| {})
            .map_err(|e| e.to_string())?;
        match res.error {
            None => Ok(res.final_field),
            Some(e) => Err(e.to_string()),
        }
    };

    let reference = run(spec.ref_q, spec.ref_tau)
        .map_err(|msg| Error::Numerics(format!("reference trajectory failed: {msg}")))?;

    let grid: Vec<(usize, f64)> = spec
        .q_list
        .iter()
        .flat_map(|&q| spec.tau_list.iter().map(move |&tau| (q, tau)))
        .collect();
    let cells: Vec<ConvergenceCell> = grid
        .par_iter()
        .map(|&(q, tau)| {
            let outcome = run(q, tau).and_then(|final_field| {
                error_norms(&final_field, &reference, ops)
                    .map(|(l2, _)| l2)
                    .map_err(|e| e.to_string())
            });
            ConvergenceCell { q, tau, outcome }
        })
        .collect();

    let slopes = spec
        .q_list
        .iter()
        .map(|&q| {
            let mut taus = Vec::new();
            let mut errors = Vec::new();
            for c in cells.iter().filter(|c| c.q == q) {
                if let Ok(e) = c.outcome {
                    taus.push(c.tau);
                    errors.push(e);
                }
            }
            let slope = if taus.len() >= 3 {
                fit_order(&taus, &errors).ok()
            } else {
                None
            };
            (q, slope)
        })
        .collect();

    Ok(ConvergenceReport { cells, slopes })
}

/// Report as CSV: `q,tau,error` rows for successful cells, then comment
/// lines carrying failures and fitted slopes.
pub fn report_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("q,tau,error\n");
    for c in &report.cells {
        if let Ok(e) = c.outcome {
            writeln!(out, "{},{:.16e},{:.16e}", c.q, c.tau, e).unwrap();
        }
    }
    for c in &report.cells {
        if let Err(msg) = &c.outcome {
            writeln!(out, "# failed q={} tau={:.16e}: {}", c.q, c.tau, msg).unwrap();
        }
    }
    for (q, slope) in &report.slopes {
        match slope {
            Some(s) => writeln!(out, "# slope q={q}: {s:.6}").unwrap(),
            None => writeln!(out, "# slope q={q}: not fitted (needs 3 successful cells)").unwrap(),
        }
    }
    out
}
