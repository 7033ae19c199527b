//! One-dimensional pseudo-spectral SBP operators on a nodal quadrature.
//!
//! `P` holds the collocation weights and `Q` the exact integral of
//! `l_i(x) l_j'(x)` over `[0, 1]`, so that `Q + Q^T = e_R e_R^T - e_L e_L^T`
//! with `e_L = l(0)`, `e_R = l(1)`. For Gauss-Lobatto nodes the boundary rows
//! are unit rows (classical SBP); for Gauss-Legendre nodes they are genuine
//! extrapolations (generalized SBP).

use nalgebra::{DMatrix, DVector};

use crate::quadrature::{gauss_legendre, NodalQuadrature1D};

#[derive(Clone, Debug)]
pub struct Sbp1D {
    quad: NodalQuadrature1D,
    q: DMatrix<f64>,
    d: DMatrix<f64>,
    e_left: DVector<f64>,
    e_right: DVector<f64>,
}

impl Sbp1D {
    pub fn quad(&self) -> &NodalQuadrature1D {
        &self.quad
    }

    /// Diagonal of the norm matrix `P`.
    pub fn p(&self) -> &[f64] {
        self.quad.weights()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `D = P^{-1} Q`.
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Projection row to `x = 0`.
    pub fn e_left(&self) -> &DVector<f64> {
        &self.e_left
    }

    /// Projection row to `x = 1`.
    pub fn e_right(&self) -> &DVector<f64> {
        &self.e_right
    }

    pub fn poly_degree(&self) -> usize {
        self.quad.poly_degree()
    }

    pub fn len(&self) -> usize {
        self.quad.num_nodes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of this operator with `Q` replaced; used to probe the residual
    /// checks with deliberately broken operators.
    pub fn with_q(&self, q: DMatrix<f64>) -> Sbp1D {
        let p = DVector::from_column_slice(self.p());
        let d = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] / p[i]);
        Sbp1D {
            quad: self.quad.clone(),
            q,
            d,
            e_left: self.e_left.clone(),
            e_right: self.e_right.clone(),
        }
    }
}

/// Build the SBP operator on the nodes of `quad`.
pub fn build_sbp_1d(quad: &NodalQuadrature1D) -> Sbp1D {
    let n = quad.num_nodes();
    let dcol = quad.derivative_matrix();
    // integrand l l'^T has degree <= 2N - 1; an (N + 1)-point Gauss rule is exact
    let aux = gauss_legendre(n).expect("node count already validated");
    let mut q = DMatrix::zeros(n, n);
    let mut l = vec![0.0; n];
    for (&z, &w) in aux.nodes().iter().zip(aux.weights()) {
        quad.lagrange_into(z, &mut l);
        let lv = DVector::from_column_slice(&l);
        // l_j'(z) = sum_k l_k(z) D[k][j]
        let dl = dcol.tr_mul(&lv);
        q.ger(w, &lv, &dl, 1.0);
    }
    let mut e_left = vec![0.0; n];
    let mut e_right = vec![0.0; n];
    quad.lagrange_into(0.0, &mut e_left);
    quad.lagrange_into(1.0, &mut e_right);
    let p = quad.weights();
    let d = DMatrix::from_fn(n, n, |i, j| q[(i, j)] / p[i]);
    Sbp1D {
        quad: quad.clone(),
        q,
        d,
        e_left: DVector::from_vec(e_left),
        e_right: DVector::from_vec(e_right),
    }
}

/// Max-norm residuals of the 1D operator invariants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sbp1DReport {
    /// `Q + Q^T - (e_R e_R^T - e_L e_L^T)`.
    pub sbp: f64,
    /// `Q 1`.
    pub consistency: f64,
    /// Nodal error of `D x^j - j x^(j-1)` over `j <= N`.
    pub accuracy: f64,
    /// Deviation of the boundary rows from unit rows; `None` when the nodes
    /// do not include the endpoints.
    pub boundary_rows: Option<f64>,
}

impl Sbp1DReport {
    pub fn max(&self) -> f64 {
        self.sbp
            .max(self.consistency)
            .max(self.accuracy)
            .max(self.boundary_rows.unwrap_or(0.0))
    }
}

pub fn verify_sbp_1d(op: &Sbp1D) -> Sbp1DReport {
    let n = op.len();
    let q = op.q();
    let (el, er) = (op.e_left(), op.e_right());
    let mut sbp: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let b = er[i] * er[j] - el[i] * el[j];
            sbp = sbp.max((q[(i, j)] + q[(j, i)] - b).abs());
        }
    }
    let consistency = q.column_sum().amax();

    let x = op.quad().nodes();
    let mut accuracy: f64 = 0.0;
    for j in 1..=op.poly_degree() as i32 {
        let u = DVector::from_iterator(n, x.iter().map(|v| v.powi(j)));
        let du = op.d() * u;
        for (k, &xk) in x.iter().enumerate() {
            accuracy = accuracy.max((du[k] - j as f64 * xk.powi(j - 1)).abs());
        }
    }

    let boundary_rows = op.quad().boundary_conforming().then(|| {
        let mut r: f64 = 0.0;
        for i in 0..n {
            let ul = if i == 0 { 1.0 } else { 0.0 };
            let ur = if i == n - 1 { 1.0 } else { 0.0 };
            r = r.max((el[i] - ul).abs()).max((er[i] - ur).abs());
        }
        r
    });

    Sbp1DReport {
        sbp,
        consistency,
        accuracy,
        boundary_rows,
    }
}
