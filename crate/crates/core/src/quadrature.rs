//! Gauss-Legendre rules on [0,1] and symmetric quadrature on the reference
//! triangle.
//!
//! The 1D rules supply the collocation nodes s_1 < ... < s_q of the cG(q)
//! scheme (q-stage rule, exact to degree 2q-1) and the finer 2q-stage rule
//! used for the cubic term, whose integrand has degree 4q-1 in time. Nodes
//! are Newton-refined roots of the shifted Legendre polynomial.
//!
//! Triangle rules integrate the spatial terms: degree 2 covers the rotation
//! form b.grad(phi)*phi, degree 4 covers quadratic potentials against P1
//! pairs and the quartic density |u_h|^4. Both are exact for those
//! integrands, so assembly commits no variational crime beyond interpolation
//! of a non-polynomial V.

use crate::error::{Error, Result};

/// Largest supported stage count for the 1D rules.
pub const MAX_STAGES: usize = 12;

/// Quadrature rule on the unit interval: integral(f) ~ sum_k w_k f(s_k).
#[derive(Debug, Clone)]
pub struct QuadratureRule1D {
    /// Nodes, strictly increasing, all in (0,1).
    pub nodes: Vec<f64>,
    /// Positive weights summing to 1.
    pub weights: Vec<f64>,
}

impl QuadratureRule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply the rule to a function on [0,1].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(s))
            .sum()
    }
}

/// Legendre polynomial P_q and its derivative at x in (-1,1), by the
/// three-term recurrence (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}.
fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 1..q {
        let p_next = ((2 * k + 1) as f64 * x * p - k as f64 * p_prev) / (k + 1) as f64;
        p_prev = p;
        p = p_next;
    }
    // |x| < 1 at every Newton iterate for the interior roots.
    let dp = q as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// q-point Gauss-Legendre rule on [0,1], exact for polynomials of degree
/// 2q-1. Supported for 1 <= q <= 12.
pub fn gauss_legendre_01(q: usize) -> Result<QuadratureRule1D> {
    if q == 0 || q > MAX_STAGES {
        return Err(Error::Config(format!(
            "Gauss-Legendre stage count must be in 1..={MAX_STAGES}, got {q}"
        )));
    }
    gauss_legendre_raw(q)
}

/// Unclamped constructor: the tableau's fine rule needs 2q points, which for
/// the top supported order exceeds the public stage cap.
pub(crate) fn gauss_legendre_raw(q: usize) -> Result<QuadratureRule1D> {
    if q == 0 || q > 2 * MAX_STAGES {
        return Err(Error::Config(format!(
            "Gauss-Legendre point count must be in 1..={}, got {q}",
            2 * MAX_STAGES
        )));
    }
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for k in 0..q {
        // Chebyshev-type initial guess for the (k+1)-th root in descending
        // order, then Newton to machine precision.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut converged = false;
        for _ in 0..50 {
            let (p, dp) = legendre_with_derivative(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerics(format!(
                "Legendre root iteration stalled for q = {q}, index {k}"
            )));
        }
        let (_, dp) = legendre_with_derivative(q, x);
        // Map from [-1,1] to [0,1]: node (1+x)/2, weight halved.
        nodes[k] = 0.5 * (1.0 + x);
        weights[k] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    // The analytic rule is symmetric about 1/2; average out the last bits of
    // asymmetric rounding so the symmetry invariant holds exactly.
    for k in 0..q / 2 {
        let m = q - 1 - k;
        let s = 0.5 * (nodes[k] + 1.0 - nodes[m]);
        nodes[k] = s;
        nodes[m] = 1.0 - s;
        let w = 0.5 * (weights[k] + weights[m]);
        weights[k] = w;
        weights[m] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.5;
    }
    Ok(QuadratureRule1D { nodes, weights })
}

/// Symmetric rule on the reference triangle {x,y >= 0, x+y <= 1}.
///
/// Points are barycentric; weights sum to 1, so for a physical triangle T the
/// rule is integral_T(f) ~ area(T) * sum_k w_k f(p_k).
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Symmetric triangle rule exact to the given total degree (2 or 4).
pub fn triangle_rule(degree: usize) -> Result<TriangleRule> {
    match degree {
        2 => {
            // Three interior points at (2/3, 1/6, 1/6), equal weights.
            let a = 2.0 / 3.0;
            let b = 1.0 / 6.0;
            Ok(TriangleRule {
                points: vec![[a, b, b], [b, a, b], [b, b, a]],
                weights: vec![1.0 / 3.0; 3],
                degree,
            })
        }
        4 => {
            // Two three-point orbits; parameters in closed form.
            let s10 = 10.0_f64.sqrt();
            let r = (38.0 - 44.0 * (0.4_f64).sqrt()).sqrt();
            let g1 = (8.0 - s10 + r) / 18.0;
            let g2 = (8.0 - s10 - r) / 18.0;
            let t = (213125.0 - 53320.0 * s10).sqrt();
            let w1 = (620.0 + t) / 3720.0;
            let w2 = (620.0 - t) / 3720.0;
            let orbit = |g: f64| {
                let c = 1.0 - 2.0 * g;
                [[c, g, g], [g, c, g], [g, g, c]]
            };
            let mut points = Vec::with_capacity(6);
            points.extend_from_slice(&orbit(g1));
            points.extend_from_slice(&orbit(g2));
            Ok(TriangleRule {
                points,
                weights: vec![w1, w1, w1, w2, w2, w2],
                degree,
            })
        }
        _ => Err(Error::Config(format!(
            "no triangle rule of degree {degree} (supported: 2, 4)"
        ))),
    }
}

impl TriangleRule {
    /// Apply to a function of barycentric coordinates on the reference
    /// triangle (area 1/2).
    pub fn integrate_reference<F: FnMut(&[f64; 3]) -> f64>(&self, mut f: F) -> f64 {
        0.5 * self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w * f(p))
            .sum::<f64>()
    }
}
