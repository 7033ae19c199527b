//! Gauss-Legendre and Gauss-Lobatto nodal rules on the unit interval and the
//! Lagrange bases living on their nodes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest supported polynomial degree `N` (rules with at most `N + 1` nodes).
pub const MAX_POLY_DEGREE: usize = 20;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Node family of a collocation rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeFamily {
    /// Interior nodes only; generalized SBP.
    Legendre,
    /// Endpoints included; classical SBP.
    Lobatto,
}

impl NodeFamily {
    pub const ALL: [NodeFamily; 2] = [NodeFamily::Legendre, NodeFamily::Lobatto];

    /// Rule with `num_nodes` nodes of this family.
    pub fn rule(self, num_nodes: usize) -> Result<NodalQuadrature1D> {
        match self {
            NodeFamily::Legendre => gauss_legendre(num_nodes),
            NodeFamily::Lobatto => gauss_lobatto(num_nodes),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            NodeFamily::Legendre => "legendre",
            NodeFamily::Lobatto => "lobatto",
        }
    }
}

impl fmt::Display for NodeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for NodeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "legendre" | "gauss-legendre" | "lg" => Ok(NodeFamily::Legendre),
            "lobatto" | "gauss-lobatto" | "lgl" => Ok(NodeFamily::Lobatto),
            other => Err(Error::InvalidArgument(format!("unknown node family `{other}`"))),
        }
    }
}

/// A nodal quadrature rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalQuadrature1D {
    family: NodeFamily,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    degree: usize,
    boundary_conforming: bool,
    bary: Vec<f64>,
}

impl NodalQuadrature1D {
    fn new(family: NodeFamily, nodes: Vec<f64>, weights: Vec<f64>, degree: usize) -> Self {
        let bary = barycentric_weights(&nodes);
        NodalQuadrature1D {
            family,
            nodes,
            weights,
            degree,
            boundary_conforming: family == NodeFamily::Lobatto,
            bary,
        }
    }

    pub fn family(&self) -> NodeFamily {
        self.family
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Highest monomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// True iff 0 and 1 are nodes.
    pub fn boundary_conforming(&self) -> bool {
        self.boundary_conforming
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Degree `N` of the interpolating polynomial space.
    pub fn poly_degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Values of all cardinal Lagrange polynomials at `point`.
    pub fn lagrange_eval(&self, point: f64) -> Result<Vec<f64>> {
        if !point.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lagrange evaluation point must be finite, got {point}"
            )));
        }
        let mut out = vec![0.0; self.nodes.len()];
        self.lagrange_into(point, &mut out);
        Ok(out)
    }

    /// Second barycentric form; `point` is assumed finite.
    pub(crate) fn lagrange_into(&self, point: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.nodes.len());
        if let Some(k) = self.nodes.iter().position(|&x| x == point) {
            out.fill(0.0);
            out[k] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for ((o, &x), &b) in out.iter_mut().zip(&self.nodes).zip(&self.bary) {
            let t = b / (point - x);
            *o = t;
            denom += t;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }

    /// Collocation derivative matrix `D[i][j] = l_j'(x_i)`.
    pub fn derivative_matrix(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j]);
                    d[(i, j)] = v;
                    diag -= v;
                }
            }
            d[(i, i)] = diag;
        }
        d
    }
}

fn check_node_count(num_nodes: usize, min: usize) -> Result<()> {
    if num_nodes < min {
        return Err(Error::InvalidArgument(format!(
            "rule needs at least {min} nodes, got {num_nodes}"
        )));
    }
    if num_nodes > MAX_POLY_DEGREE + 1 {
        return Err(Error::InvalidArgument(format!(
            "rule with {num_nodes} nodes exceeds the supported maximum of {}",
            MAX_POLY_DEGREE + 1
        )));
    }
    Ok(())
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = if (1.0 - x * x).abs() > 0.0 {
        n * (x * p1 - p0) / (x * x - 1.0)
    } else {
        // P_n'(±1) = (±1)^(n+1) n(n+1)/2
        let s = if x > 0.0 { 1.0 } else { (-1f64).powi(n as i32 + 1) };
        s * n * (n + 1.0) / 2.0
    };
    (p1, dp)
}

/// Map symmetric nodes `x` on `[-1, 1]` (only the non-negative half is
/// given, descending from the right end) onto `[0, 1]` keeping exact mirror
/// symmetry of the weights.
fn assemble_symmetric(n: usize, half: &[(f64, f64)], family: NodeFamily, degree: usize) -> NodalQuadrature1D {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for (k, &(x, w)) in half.iter().enumerate() {
        // half[k] holds the k-th largest node
        nodes[n - 1 - k] = 0.5 * (1.0 + x);
        nodes[k] = 0.5 * (1.0 - x);
        weights[n - 1 - k] = 0.5 * w;
        weights[k] = 0.5 * w;
    }
    NodalQuadrature1D::new(family, nodes, weights, degree)
}

/// Gauss-Legendre rule with `num_nodes` nodes mapped to `[0, 1]`.
pub fn gauss_legendre(num_nodes: usize) -> Result<NodalQuadrature1D> {
    check_node_count(num_nodes, 1)?;
    let n = num_nodes;
    let mut half = Vec::with_capacity(n.div_ceil(2));
    for k in 0..n.div_ceil(2) {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        if n % 2 == 1 && k == n / 2 {
            x = 0.0;
        } else {
            for _ in 0..NEWTON_MAX_ITER {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() <= NEWTON_TOL {
                    break;
                }
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        half.push((x, w));
    }
    Ok(assemble_symmetric(n, &half, NodeFamily::Legendre, 2 * n - 1))
}

/// Gauss-Lobatto rule with `num_nodes` nodes (endpoints included) on `[0, 1]`.
pub fn gauss_lobatto(num_nodes: usize) -> Result<NodalQuadrature1D> {
    check_node_count(num_nodes, 2)?;
    let n = num_nodes;
    let order = n - 1;
    let nn1 = (order * (order + 1)) as f64;
    let mut half = Vec::with_capacity(n.div_ceil(2));
    for k in 0..n.div_ceil(2) {
        let x = if k == 0 {
            1.0
        } else if n % 2 == 1 && k == n / 2 {
            0.0
        } else {
            let mut x = (PI * k as f64 / order as f64).cos();
            for _ in 0..NEWTON_MAX_ITER {
                let (p, dp) = legendre(order, x);
                // Newton on (1 - x^2) P_N'(x), whose derivative is -N(N+1) P_N(x)
                let dx = (1.0 - x * x) * dp / (nn1 * p);
                x += dx;
                if dx.abs() <= NEWTON_TOL {
                    break;
                }
            }
            x
        };
        let (p, _) = legendre(order, x);
        half.push((x, 2.0 / (nn1 * p * p)));
    }
    Ok(assemble_symmetric(n, &half, NodeFamily::Lobatto, 2 * n - 3))
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(k, &xk)| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &xj)| xk - xj)
                .product();
            1.0 / prod
        })
        .collect();
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    b.iter_mut().for_each(|v| *v /= scale);
    b
}
