//! Time-discretization constants for the order-q continuous Galerkin scheme.
//!
//! One step of cG(q) seeks a degree-q polynomial u(s) on the unit interval
//! with u(0) = u0, tested against the degree-(q-1) Lagrange basis on the
//! q-point Gauss nodes. Writing u in the Lagrange basis ell_hat on
//! {0, s_1..s_q} turns the weak derivative into the small matrix
//!
//! ```text
//! m[i][j] = integral of ell_hat_j'(s) * ell_i(s) over [0,1],
//! ```
//!
//! whose q x q block Msub combines with the Gauss weights W into
//! A = Msub^-1 W, the Butcher matrix of the q-stage Gauss IRK method.
//! Diagonalizing A = Sigma^-1 Gamma Sigma decouples the stage system into q
//! independent linear solves per fixed-point sweep; the coefficients a, b,
//! c0, c below are everything the stepper needs:
//!
//!   (Mass + i tau gamma_i K) U_i = a_i Mass u0 - i beta tau sum_nu b[i][nu] N_nu
//!   with the nonlinearity sampled at the 2q fine Gauss nodes via
//!   u_nu = c0[nu] u0 + sum_i c[i][nu] U_i,
//! and the step value reconstructed through ell_hat_at_one.

use crate::error::{Error, Result};
use crate::quadrature::{self, MAX_STAGES};
use crate::C64;
use nalgebra::{DMatrix, DVector};

/// Lagrange interpolation basis in barycentric form.
///
/// Stable up to the dozen or so nodes used here; values and derivatives are
/// exact at the nodes themselves (no 0/0 evaluation).
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    pub nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Config(
                "Lagrange basis needs at least one node".into(),
            ));
        }
        let mut bary = vec![1.0; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d = nodes[i] - nodes[j];
                    if d == 0.0 {
                        return Err(Error::Config(format!(
                            "duplicate interpolation nodes at positions {j} and {i}"
                        )));
                    }
                    bary[i] /= d;
                }
            }
        }
        Ok(LagrangeBasis {
            nodes: nodes.to_vec(),
            bary,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ell_i(s).
    pub fn value(&self, i: usize, s: f64) -> f64 {
        if let Some(k) = self.coincident(s) {
            return if k == i { 1.0 } else { 0.0 };
        }
        let mut num = self.bary[i] / (s - self.nodes[i]);
        let mut den = 0.0;
        for j in 0..self.len() {
            den += self.bary[j] / (s - self.nodes[j]);
        }
        num /= den;
        num
    }

    /// d/ds ell_i(s).
    pub fn derivative(&self, i: usize, s: f64) -> f64 {
        if let Some(k) = self.coincident(s) {
            // Differentiation-matrix entries at the nodes.
            if k != i {
                return (self.bary[i] / self.bary[k]) / (self.nodes[k] - self.nodes[i]);
            }
            let mut acc = 0.0;
            for j in 0..self.len() {
                if j != k {
                    acc += (self.bary[j] / self.bary[k]) / (self.nodes[k] - self.nodes[j]);
                }
            }
            return -acc;
        }
        // ell_i'(s) = ell_i(s) * sum_{j != i} 1/(s - x_j) away from nodes.
        let mut acc = 0.0;
        for j in 0..self.len() {
            if j != i {
                acc += 1.0 / (s - self.nodes[j]);
            }
        }
        self.value(i, s) * acc
    }

    fn coincident(&self, s: f64) -> Option<usize> {
        self.nodes.iter().position(|&x| x == s)
    }
}

/// All constants of the order-q scheme; immutable once built.
#[derive(Debug, Clone)]
pub struct CollocationTableau {
    pub q: usize,
    /// Gauss nodes s_1..s_q on [0,1] and their weights.
    pub gl_nodes: Vec<f64>,
    pub gl_weights: Vec<f64>,
    /// Degree-(q-1) test basis on the Gauss nodes.
    pub ell: LagrangeBasis,
    /// Degree-q trial basis on {0, s_1..s_q}; index 0 is the left endpoint.
    pub ell_hat: LagrangeBasis,
    /// q x (q+1): m[i][j] = integral ell_hat_j' ell_i, rows i = 1..q.
    pub m: DMatrix<f64>,
    /// Columns 1..q of m.
    pub msub: DMatrix<f64>,
    /// Similarity transform of Msub with positive-definite Hermitian part.
    pub mstab: DMatrix<f64>,
    /// Butcher matrix A = Msub^-1 W of the q-stage Gauss IRK method.
    pub a_irk: DMatrix<f64>,
    /// Sigma A Sigma^-1 = diag(gamma).
    pub sigma: DMatrix<C64>,
    pub sigma_inv: DMatrix<C64>,
    pub gamma: Vec<C64>,
    /// 2q-point Gauss rule used for the cubic nonlinearity.
    pub fine_nodes: Vec<f64>,
    pub fine_weights: Vec<f64>,
    /// Right-hand-side weight of the initial value: a_i = sum_j sigma[i][j].
    pub a: Vec<C64>,
    /// q x 2q nonlinearity weights b[i][nu].
    pub b: DMatrix<C64>,
    /// Initial-value sample weights c0[nu] = ell_hat_0(fine node nu).
    pub c0: Vec<f64>,
    /// q x 2q stage sample weights c[i][nu].
    pub c: DMatrix<C64>,
    /// ell_hat_j(1) for j = 0..q; reconstructs the step endpoint.
    pub ell_hat_at_one: Vec<f64>,
}

pub fn build_tableau(q: usize) -> Result<CollocationTableau> {
    if q == 0 || q > MAX_STAGES {
        return Err(Error::Config(format!(
            "order q = {q} outside the supported range 1..={MAX_STAGES}"
        )));
    }
    let coarse = quadrature::gauss_legendre_01(q)?;
    let fine = quadrature::gauss_legendre_raw(2 * q)?;
    let ell = LagrangeBasis::new(&coarse.nodes)?;
    let mut hat_nodes = Vec::with_capacity(q + 1);
    hat_nodes.push(0.0);
    hat_nodes.extend_from_slice(&coarse.nodes);
    let ell_hat = LagrangeBasis::new(&hat_nodes)?;

    // m[i][j]: degree-(2q-2) integrand, exact under the 2q-point rule.
    let mut m = DMatrix::zeros(q, q + 1);
    for i in 0..q {
        for j in 0..=q {
            let mut acc = 0.0;
            for (nu, &s) in fine.nodes.iter().enumerate() {
                acc += fine.weights[nu] * ell_hat.derivative(j, s) * ell.value(i, s);
            }
            m[(i, j)] = acc;
        }
    }
    let msub = m.columns(1, q).into_owned();

    let d_sqrt: Vec<f64> = coarse.nodes.iter().map(|s| s.sqrt()).collect();
    let mut mstab = msub.clone();
    for i in 0..q {
        for j in 0..q {
            mstab[(i, j)] *= d_sqrt[j] / d_sqrt[i];
        }
    }

    let w = DMatrix::from_diagonal(&DVector::from_vec(coarse.weights.clone()));
    let msub_lu = msub.clone().lu();
    let a_irk = msub_lu
        .solve(&w)
        .ok_or_else(|| Error::Numerics("stage matrix Msub is singular".into()))?;

    let (gamma, sigma_inv) = diagonalize(&a_irk)?;
    let sigma = sigma_inv
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerics("eigenvector matrix is singular".into()))?;

    // Verify the similarity transform actually diagonalizes A.
    let a_c = a_irk.map(|x| C64::new(x, 0.0));
    let mut resid = &sigma * &a_c * &sigma_inv;
    for i in 0..q {
        resid[(i, i)] -= gamma[i];
    }
    let err = resid.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if err > 1e-12 {
        return Err(Error::Numerics(format!(
            "diagonalization residual {err:.3e} exceeds 1e-12 for q = {q}"
        )));
    }

    // a_i = row sums of Sigma.
    let a: Vec<C64> = (0..q)
        .map(|i| (0..q).map(|j| sigma[(i, j)]).sum())
        .collect();

    // b[i][nu] = w_nu * sum_j (Sigma Msub^-1)[i][j] ell_j(s_nu).
    let msub_inv = msub
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerics("stage matrix Msub is singular".into()))?;
    let comb = &sigma * msub_inv.map(|x| C64::new(x, 0.0));
    let nf = fine.len();
    let mut b = DMatrix::zeros(q, nf);
    for i in 0..q {
        for nu in 0..nf {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..q {
                acc += comb[(i, j)] * ell.value(j, fine.nodes[nu]);
            }
            b[(i, nu)] = acc * fine.weights[nu];
        }
    }

    // Samples of the stage polynomial at the fine nodes, expressed in the
    // transformed unknowns: u_nu = c0[nu] u0 + sum_i c[i][nu] U_i.
    let c0: Vec<f64> = fine.nodes.iter().map(|&s| ell_hat.value(0, s)).collect();
    let mut c = DMatrix::zeros(q, nf);
    for nu in 0..nf {
        for i in 0..q {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..q {
                acc += C64::new(ell_hat.value(j + 1, fine.nodes[nu]), 0.0) * sigma_inv[(j, i)];
            }
            c[(i, nu)] = acc;
        }
    }

    let ell_hat_at_one: Vec<f64> = (0..=q).map(|j| ell_hat.value(j, 1.0)).collect();

    Ok(CollocationTableau {
        q,
        gl_nodes: coarse.nodes,
        gl_weights: coarse.weights,
        ell,
        ell_hat,
        m,
        msub,
        mstab,
        a_irk,
        sigma,
        sigma_inv,
        gamma,
        fine_nodes: fine.nodes,
        fine_weights: fine.weights,
        a,
        b,
        c0,
        c,
        ell_hat_at_one,
    })
}

/// Eigen-decomposition of the real matrix A with deterministic normalization:
/// eigenpairs ordered by ascending imaginary part (then real part), each
/// eigenvector unit 2-norm with its largest component rotated to the positive
/// real axis. Returns (eigenvalues, eigenvector matrix V) with A V = V Gamma.
fn diagonalize(a: &DMatrix<f64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let q = a.nrows();
    let a_c = a.map(|x| C64::new(x, 0.0));
    let mut pairs: Vec<(C64, DVector<C64>)> = Vec::with_capacity(q);
    for lam in a.clone().complex_eigenvalues().iter() {
        let mut lam = *lam;
        let mut v = DVector::from_element(q, C64::new(1.0, 0.0) / (q as f64).sqrt());
        // Shifted inverse iteration with Rayleigh polish: the eigenvalues of
        // the Gauss IRK matrix are simple, so a couple of sweeps suffice.
        for _ in 0..4 {
            let shift = lam + C64::new(1e-11, 1e-13);
            let mut shifted = a_c.clone();
            for i in 0..q {
                shifted[(i, i)] -= shift;
            }
            let next = match shifted.lu().solve(&v) {
                Some(x) => x,
                None => break,
            };
            let norm = next.norm();
            if !norm.is_finite() || norm == 0.0 {
                break;
            }
            v = next / C64::new(norm, 0.0);
            let av = &a_c * &v;
            lam = v.dotc(&av);
        }
        // Phase convention: largest-modulus component real and positive.
        let mut k_max = 0;
        for k in 1..q {
            if v[k].norm() > v[k_max].norm() {
                k_max = k;
            }
        }
        let phase = v[k_max] / v[k_max].norm();
        for k in 0..q {
            v[k] *= phase.conj();
        }
        pairs.push((lam, v));
    }
    pairs.sort_by(|x, y| {
        (x.0.im, x.0.re)
            .partial_cmp(&(y.0.im, y.0.re))
            .expect("eigenvalues are finite")
    });
    let gamma: Vec<C64> = pairs.iter().map(|p| p.0).collect();
    let mut v_mat = DMatrix::zeros(q, q);
    for (j, (_, v)) in pairs.iter().enumerate() {
        v_mat.set_column(j, v);
    }
    Ok((gamma, v_mat))
}

/// Smallest eigenvalue of the Hermitian part of Mstab; the scheme's stage
/// systems stay uniformly solvable while this is positive.
pub fn stability_margin(t: &CollocationTableau) -> f64 {
    let sym = (&t.mstab + t.mstab.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.iter().copied().fold(f64::INFINITY, f64::min)
}

/// The decoupled-system coefficient block (a, b, c0, c).
pub fn decoupling_coefficients(
    t: &CollocationTableau,
) -> (&[C64], &DMatrix<C64>, &[f64], &DMatrix<C64>) {
    (&t.a, &t.b, &t.c0, &t.c)
}

impl CollocationTableau {
    /// All constants as CSV (`constant,i,j,re,im`), 1-based indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("constant,i,j,re,im\n");
        let mut push = |name: &str, i: usize, j: usize, z: C64| {
            out.push_str(&format!("{name},{i},{j},{:.16e},{:.16e}\n", z.re, z.im));
        };
        let re = |x: f64| C64::new(x, 0.0);
        push("q", 0, 0, re(self.q as f64));
        for (i, &x) in self.gl_nodes.iter().enumerate() {
            push("gl_node", i + 1, 0, re(x));
        }
        for (i, &x) in self.gl_weights.iter().enumerate() {
            push("gl_weight", i + 1, 0, re(x));
        }
        for i in 0..self.q {
            for j in 0..=self.q {
                push("m", i + 1, j, re(self.m[(i, j)]));
            }
        }
        for i in 0..self.q {
            for j in 0..self.q {
                push("a_irk", i + 1, j + 1, re(self.a_irk[(i, j)]));
            }
        }
        for (i, &g) in self.gamma.iter().enumerate() {
            push("gamma", i + 1, 0, g);
        }
        for i in 0..self.q {
            for j in 0..self.q {
                push("sigma", i + 1, j + 1, self.sigma[(i, j)]);
            }
        }
        for (i, &x) in self.a.iter().enumerate() {
            push("a", i + 1, 0, x);
        }
        for i in 0..self.q {
            for nu in 0..2 * self.q {
                push("b", i + 1, nu + 1, self.b[(i, nu)]);
            }
        }
        for (nu, &x) in self.c0.iter().enumerate() {
            push("c0", 0, nu + 1, re(x));
        }
        for i in 0..self.q {
            for nu in 0..2 * self.q {
                push("c", i + 1, nu + 1, self.c[(i, nu)]);
            }
        }
        for (j, &x) in self.ell_hat_at_one.iter().enumerate() {
            push("ell_hat_at_one", j, 0, re(x));
        }
        for (nu, &x) in self.fine_nodes.iter().enumerate() {
            push("fine_node", nu + 1, 0, re(x));
        }
        for (nu, &x) in self.fine_weights.iter().enumerate() {
            push("fine_weight", nu + 1, 0, re(x));
        }
        push("stability_margin", 0, 0, re(stability_margin(self)));
        out
    }
}
