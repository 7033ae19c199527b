//! Physical-element operators on a curvilinearly mapped reference square.
//!
//! The chain rule is discretized in skew-symmetric form,
//!
//! ```text
//! Q̃_x = ½ (Q_ξ Y_η + Y_η Q_ξ - Q_η Y_ξ - Y_ξ Q_η)
//! Q̃_y = ½ (Q_η X_ξ + X_ξ Q_η - Q_ξ X_η - X_η Q_ξ)
//! ```
//!
//! and corrected on the faces so that `Q_x + Q_x^T = E^T P N_x E` holds with
//! `P = j P̂` and the discrete unit normals built from the face metrics:
//!
//! ```text
//! Q_x = Q̃_x + ½ E^T P̂ [N_ξ (y_η E - E Y_η) - N_η (y_ξ E - E Y_ξ)]
//! Q_y = Q̃_y + ½ E^T P̂ [N_η (x_ξ E - E X_ξ) - N_ξ (x_η E - E X_η)]
//! ```
//!
//! Both directions share one kernel: the derivative along `(a, b)` uses
//! the coefficient pair `C_ξ = a Y_η - b X_η`, `C_η = -a Y_ξ + b X_ξ`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::tensor::{FaceTag, ReferenceElementOps};
use crate::varcoef::build_varcoef_q_with_surface;

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Smooth map from the reference square onto a physical element.
pub trait CurvilinearMap: Send + Sync + fmt::Debug {
    fn eval(&self, xi: f64, eta: f64) -> (f64, f64);

    /// `[[x_ξ, x_η], [y_ξ, y_η]]`.
    fn jacobian(&self, xi: f64, eta: f64) -> [[f64; 2]; 2];

    fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineChart {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl AffineChart {
    pub const UNIT: AffineChart = AffineChart {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        AffineChart { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

impl CurvilinearMap for AffineChart {
    fn eval(&self, xi: f64, eta: f64) -> (f64, f64) {
        (self.x0 + xi * self.width(), self.y0 + eta * self.height())
    }

    fn jacobian(&self, _: f64, _: f64) -> [[f64; 2]; 2] {
        [[self.width(), 0.0], [0.0, self.height()]]
    }
}

/// Rectangle chart followed by the global perturbation
/// `x + a sin π(y + 1)`, `y + a sin π(x + 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinePerturbed {
    pub chart: AffineChart,
    pub amplitude: f64,
}

impl SinePerturbed {
    pub const DEFAULT_AMPLITUDE: f64 = 0.1;

    pub fn new(chart: AffineChart) -> Self {
        SinePerturbed {
            chart,
            amplitude: Self::DEFAULT_AMPLITUDE,
        }
    }

    /// The perturbation applied to a point of the parent domain.
    pub fn perturb(amplitude: f64, x: f64, y: f64) -> (f64, f64) {
        (
            x + amplitude * (PI * (y + 1.0)).sin(),
            y + amplitude * (PI * (x + 1.0)).sin(),
        )
    }
}

impl CurvilinearMap for SinePerturbed {
    fn eval(&self, xi: f64, eta: f64) -> (f64, f64) {
        let (x, y) = self.chart.eval(xi, eta);
        Self::perturb(self.amplitude, x, y)
    }

    fn jacobian(&self, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        let (x, y) = self.chart.eval(xi, eta);
        let (w, h) = (self.chart.width(), self.chart.height());
        let a = self.amplitude * PI;
        [
            [w, a * (PI * (y + 1.0)).cos() * h],
            [a * (PI * (x + 1.0)).cos() * w, h],
        ]
    }
}

/// Non-separable smooth warp of a rectangle chart:
/// `x = X + a sin(πη) sin(πξ + c)`, `y = Y + b sin(πξ) cos(πη + d)`,
/// with `(X, Y)` the chart image of `(ξ, η)`. Orientation-preserving for
/// `|a|, |b| ≤ 0.05` relative to the chart size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warped {
    pub chart: AffineChart,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl CurvilinearMap for Warped {
    fn eval(&self, xi: f64, eta: f64) -> (f64, f64) {
        let (x, y) = self.chart.eval(xi, eta);
        let (w, h) = (self.chart.width(), self.chart.height());
        (
            x + w * self.a * (PI * eta).sin() * (PI * xi + self.c).sin(),
            y + h * self.b * (PI * xi).sin() * (PI * eta + self.d).cos(),
        )
    }

    fn jacobian(&self, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        let (w, h) = (self.chart.width(), self.chart.height());
        let (a, b) = (self.a * PI, self.b * PI);
        [
            [
                w * (1.0 + a * (PI * eta).sin() * (PI * xi + self.c).cos()),
                w * a * (PI * eta).cos() * (PI * xi + self.c).sin(),
            ],
            [
                h * b * (PI * xi).cos() * (PI * eta + self.d).cos(),
                h * (1.0 - b * (PI * xi).sin() * (PI * eta + self.d).sin()),
            ],
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MetricMode {
    /// Volume metrics from the reference derivative operators, face metrics
    /// by projection. Required for free-stream consistency.
    #[default]
    Discrete,
    /// Exact map derivatives sampled at the nodes.
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    X,
    Y,
}

impl Direction {
    pub fn vector(self) -> (f64, f64) {
        match self {
            Direction::X => (1.0, 0.0),
            Direction::Y => (0.0, 1.0),
        }
    }
}

/// Metric terms on the volume and face nodes of one element.
#[derive(Clone, Debug)]
pub struct MetricData {
    pub mode: MetricMode,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_xi: Vec<f64>,
    pub x_eta: Vec<f64>,
    pub y_xi: Vec<f64>,
    pub y_eta: Vec<f64>,
    pub jac: Vec<f64>,
    pub face_x_xi: Vec<f64>,
    pub face_x_eta: Vec<f64>,
    pub face_y_xi: Vec<f64>,
    pub face_y_eta: Vec<f64>,
    /// Face stretching factor `j`.
    pub j_face: Vec<f64>,
    /// Physical coordinates of the face nodes (exact map values).
    pub face_x: Vec<f64>,
    pub face_y: Vec<f64>,
}

fn reference_derivatives(r: &ReferenceElementOps, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nv = r.num_volume();
    let mut dxi = vec![0.0; nv];
    let mut deta = vec![0.0; nv];
    r.apply_q_xi_add(v, 1.0, &mut dxi);
    r.apply_q_eta_add(v, 1.0, &mut deta);
    for k in 0..nv {
        dxi[k] /= r.p_hat()[k];
        deta[k] /= r.p_hat()[k];
    }
    (dxi, deta)
}

fn restrict_all(r: &ReferenceElementOps, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r.num_face()];
    for tag in FaceTag::ALL {
        let range = r.face_range(tag);
        r.restrict(tag, v, &mut out[range]);
    }
    out
}

pub fn compute_metrics(r: &ReferenceElementOps, map: &dyn CurvilinearMap, mode: MetricMode) -> Result<MetricData> {
    let (x, y): (Vec<f64>, Vec<f64>) = r.volume_coords().iter().map(|&(s, t)| map.eval(s, t)).unzip();
    let (face_x, face_y): (Vec<f64>, Vec<f64>) = r.face_coords().iter().map(|&(_, s, t)| map.eval(s, t)).unzip();

    let (x_xi, x_eta, y_xi, y_eta, fx_xi, fx_eta, fy_xi, fy_eta) = match mode {
        MetricMode::Discrete => {
            let (x_xi, x_eta) = reference_derivatives(r, &x);
            let (y_xi, y_eta) = reference_derivatives(r, &y);
            let (a, b, c, d) = (
                restrict_all(r, &x_xi),
                restrict_all(r, &x_eta),
                restrict_all(r, &y_xi),
                restrict_all(r, &y_eta),
            );
            (x_xi, x_eta, y_xi, y_eta, a, b, c, d)
        }
        MetricMode::Analytic => {
            let vol: Vec<_> = r.volume_coords().iter().map(|&(s, t)| map.jacobian(s, t)).collect();
            let face: Vec<_> = r.face_coords().iter().map(|&(_, s, t)| map.jacobian(s, t)).collect();
            let pick = |m: &[[[f64; 2]; 2]], i: usize, j: usize| m.iter().map(|a| a[i][j]).collect::<Vec<_>>();
            (
                pick(&vol, 0, 0),
                pick(&vol, 0, 1),
                pick(&vol, 1, 0),
                pick(&vol, 1, 1),
                pick(&face, 0, 0),
                pick(&face, 0, 1),
                pick(&face, 1, 0),
                pick(&face, 1, 1),
            )
        }
    };

    let jac: Vec<f64> = (0..x.len()).map(|k| x_xi[k] * y_eta[k] - y_xi[k] * x_eta[k]).collect();
    if let Some((node, &j)) = jac.iter().enumerate().find(|(_, &j)| !(j > 0.0)) {
        return Err(Error::InvertedElement {
            node,
            location: "volume",
            jacobian: j,
        });
    }
    let mut j_face = vec![0.0; r.num_face()];
    for tag in FaceTag::ALL {
        for k in r.face_range(tag) {
            j_face[k] = if tag.runs_along_eta() {
                fx_eta[k].hypot(fy_eta[k])
            } else {
                fx_xi[k].hypot(fy_xi[k])
            };
        }
    }
    if let Some((node, &j)) = j_face.iter().enumerate().find(|(_, &j)| !(j > 0.0)) {
        return Err(Error::InvertedElement {
            node,
            location: "face",
            jacobian: j,
        });
    }

    Ok(MetricData {
        mode,
        x,
        y,
        x_xi,
        x_eta,
        y_xi,
        y_eta,
        jac,
        face_x_xi: fx_xi,
        face_x_eta: fx_eta,
        face_y_xi: fy_xi,
        face_y_eta: fy_eta,
        j_face,
        face_x,
        face_y,
    })
}

/// Which faces of an element are coupled to neighbours. Interior faces use
/// the block-diagonal part with the face self-term removed.
pub type InteriorMask = [bool; 4];

pub const NO_INTERIOR: InteriorMask = [false; 4];

/// Matrix-free element operator: reference operators plus metric vectors.
#[derive(Clone, Debug)]
pub struct ElementKernel {
    ref_ops: Arc<ReferenceElementOps>,
    metrics: MetricData,
    p_phys: Vec<f64>,
    p_face: Vec<f64>,
    n_x: Vec<f64>,
    n_y: Vec<f64>,
}

impl ElementKernel {
    pub fn new(ref_ops: Arc<ReferenceElementOps>, metrics: MetricData) -> Result<Self> {
        check_len("metric volume data", ref_ops.num_volume(), metrics.jac.len())?;
        check_len("metric face data", ref_ops.num_face(), metrics.j_face.len())?;
        let p_phys = metrics.jac.iter().zip(ref_ops.p_hat()).map(|(j, p)| j * p).collect();
        let p_face = metrics.j_face.iter().zip(ref_ops.p_hat_face()).map(|(j, p)| j * p).collect();
        let nf = ref_ops.num_face();
        let (nxi, neta) = (ref_ops.n_xi(), ref_ops.n_eta());
        let m = &metrics;
        let n_x = (0..nf)
            .map(|k| (nxi[k] * m.face_y_eta[k] - neta[k] * m.face_y_xi[k]) / m.j_face[k])
            .collect();
        let n_y = (0..nf)
            .map(|k| (neta[k] * m.face_x_xi[k] - nxi[k] * m.face_x_eta[k]) / m.j_face[k])
            .collect();
        Ok(ElementKernel {
            ref_ops,
            metrics,
            p_phys,
            p_face,
            n_x,
            n_y,
        })
    }

    pub fn ref_ops(&self) -> &ReferenceElementOps {
        &self.ref_ops
    }

    pub fn ref_ops_arc(&self) -> &Arc<ReferenceElementOps> {
        &self.ref_ops
    }

    pub fn metrics(&self) -> &MetricData {
        &self.metrics
    }

    pub fn num_volume(&self) -> usize {
        self.p_phys.len()
    }

    /// Diagonal of the physical volume norm `J P̂`.
    pub fn p_phys(&self) -> &[f64] {
        &self.p_phys
    }

    /// Diagonal of the physical face quadrature `j P̂_face`.
    pub fn p_face(&self) -> &[f64] {
        &self.p_face
    }

    pub fn n_x(&self) -> &[f64] {
        &self.n_x
    }

    pub fn n_y(&self) -> &[f64] {
        &self.n_y
    }

    /// Normal component along `(a, b)`.
    pub fn normal_along(&self, a: f64, b: f64, k: usize) -> f64 {
        a * self.n_x[k] + b * self.n_y[k]
    }

    fn volume_coefficients(&self, a: f64, b: f64, k: usize) -> (f64, f64) {
        let m = &self.metrics;
        (
            a * m.y_eta[k] - b * m.x_eta[k],
            -a * m.y_xi[k] + b * m.x_xi[k],
        )
    }

    fn face_coefficients(&self, a: f64, b: f64, k: usize) -> (f64, f64) {
        let m = &self.metrics;
        (
            a * m.face_y_eta[k] - b * m.face_x_eta[k],
            -a * m.face_y_xi[k] + b * m.face_x_xi[k],
        )
    }

    /// `out += (a Q_x + b Q_y) u` in factored form. Faces flagged in
    /// `interior` drop their `½ E^T P N E` self-term. Returns the number of
    /// multiply-adds performed.
    pub fn apply_add(&self, a: f64, b: f64, u: &[f64], interior: InteriorMask, out: &mut [f64]) -> u64 {
        let r = &*self.ref_ops;
        let nv = r.num_volume();
        let (nx, ny) = (r.n_xi_nodes() as u64, r.n_eta_nodes() as u64);
        let mut ops = 0u64;

        SCRATCH.with(|cell| {
            let mut buf = cell.borrow_mut();
            let face_max = FaceTag::ALL.iter().map(|t| r.face_range(*t).len()).max().unwrap_or(0);
            buf.resize(4 * nv + 2 * face_max, 0.0);
            let (c_xi, rest) = buf.split_at_mut(nv);
            let (c_eta, rest) = rest.split_at_mut(nv);
            let (cu, rest) = rest.split_at_mut(nv);
            let (qu, rest) = rest.split_at_mut(nv);
            let (trace_buf, ctrace_buf) = rest.split_at_mut(face_max);
            for k in 0..nv {
                let (cx, ce) = self.volume_coefficients(a, b, k);
                c_xi[k] = cx;
                c_eta[k] = ce;
            }

            // ½ [Q_ξ (C_ξ u) + C_ξ (Q_ξ u)]
            for k in 0..nv {
                cu[k] = c_xi[k] * u[k];
            }
            qu.fill(0.0);
            r.apply_q_xi_add(cu, 0.5, out);
            r.apply_q_xi_add(u, 0.5, qu);
            for k in 0..nv {
                out[k] += c_xi[k] * qu[k];
            }
            ops += 2 * nx * nx * ny;

            // ½ [Q_η (C_η u) + C_η (Q_η u)]
            qu.fill(0.0);
            for k in 0..nv {
                cu[k] = c_eta[k] * u[k];
            }
            r.apply_q_eta_add(cu, 0.5, out);
            r.apply_q_eta_add(u, 0.5, qu);
            for k in 0..nv {
                out[k] += c_eta[k] * qu[k];
            }
            ops += 2 * nx * ny * ny;
            ops += 6 * nv as u64;

            let p_hat_face = r.p_hat_face();
            for tag in FaceTag::ALL {
                let range = r.face_range(tag);
                let len = range.len();
                let trace = &mut trace_buf[..len];
                let ctrace = &mut ctrace_buf[..len];
                let along_eta = tag.runs_along_eta();
                let sign = if along_eta {
                    tag.reference_normal().0
                } else {
                    tag.reference_normal().1
                };
                // E (C u) for the coefficient paired with this face's normal
                let c: &[f64] = if along_eta { c_xi } else { c_eta };
                for k in 0..nv {
                    cu[k] = c[k] * u[k];
                }
                r.restrict(tag, cu, ctrace);
                let stencil = r.projection_stencil(tag) as u64;
                ops += 2 * stencil * len as u64;
                if interior[tag.index()] {
                    for (i, k) in range.enumerate() {
                        trace[i] = -0.5 * p_hat_face[k] * sign * ctrace[i];
                    }
                } else {
                    r.restrict(tag, u, trace);
                    ops += stencil * len as u64;
                    for (i, k) in range.enumerate() {
                        let (fx, fe) = self.face_coefficients(a, b, k);
                        let cf = if along_eta { fx } else { fe };
                        trace[i] = 0.5 * p_hat_face[k] * sign * (cf * trace[i] - ctrace[i]);
                    }
                }
                r.lift_add(tag, trace, out);
            }
        });
        ops
    }

    /// `(a Q_x + b Q_y) u` divided by the physical norm.
    pub fn differentiate_along(&self, a: f64, b: f64, u: &[f64]) -> Result<Vec<f64>> {
        check_len("element differentiate", self.num_volume(), u.len())?;
        let mut out = vec![0.0; u.len()];
        self.apply_add(a, b, u, NO_INTERIOR, &mut out);
        for (o, p) in out.iter_mut().zip(&self.p_phys) {
            *o /= p;
        }
        Ok(out)
    }
}

/// Physical-element operators with dense `Q_x`, `Q_y`.
#[derive(Clone, Debug)]
pub struct PhysicalElementOps {
    kernel: ElementKernel,
    q_x: DMatrix<f64>,
    q_y: DMatrix<f64>,
}

/// Four variable-coefficient terms summed into one physical direction.
fn delegated_q(r: &ReferenceElementOps, m: &MetricData, dir: Direction) -> Result<DMatrix<f64>> {
    let nv = r.num_volume();
    let nf = r.num_face();
    let ones_v = vec![1.0; nv];
    let ones_f = vec![1.0; nf];
    // (reference direction, volume coefficient, face coefficient, sign)
    let terms: [(bool, &[f64], &[f64], f64); 2] = match dir {
        Direction::X => [
            (true, &m.y_eta, &m.face_y_eta, 1.0),
            (false, &m.y_xi, &m.face_y_xi, -1.0),
        ],
        Direction::Y => [
            (false, &m.x_xi, &m.face_x_xi, 1.0),
            (true, &m.x_eta, &m.face_x_eta, -1.0),
        ],
    };
    let mut q = DMatrix::zeros(nv, nv);
    for (xi, vol, face, sign) in terms {
        let base = if xi { r.direction_xi() } else { r.direction_eta() };
        let a = build_varcoef_q_with_surface(&base, vol, &ones_v, face, &ones_f)?;
        let b = build_varcoef_q_with_surface(&base, &ones_v, vol, &ones_f, face)?;
        q += (a.q() + b.q()) * (0.5 * sign);
    }
    Ok(q)
}

pub fn build_physical_ops(ref_ops: Arc<ReferenceElementOps>, metrics: MetricData) -> Result<PhysicalElementOps> {
    let q_x = delegated_q(&ref_ops, &metrics, Direction::X)?;
    let q_y = delegated_q(&ref_ops, &metrics, Direction::Y)?;
    Ok(PhysicalElementOps {
        kernel: ElementKernel::new(ref_ops, metrics)?,
        q_x,
        q_y,
    })
}

/// Naive skew-symmetric chain rule without face correction.
pub fn naive_q(r: &ReferenceElementOps, m: &MetricData, dir: Direction) -> DMatrix<f64> {
    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
    let (qx, qe) = (r.q_xi(), r.q_eta());
    match dir {
        Direction::X => {
            let (ye, yx) = (diag(&m.y_eta), diag(&m.y_xi));
            (qx * &ye + &ye * qx - qe * &yx - &yx * qe) * 0.5
        }
        Direction::Y => {
            let (xx, xe) = (diag(&m.x_xi), diag(&m.x_eta));
            (qe * &xx + &xx * qe - qx * &xe - &xe * qx) * 0.5
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalReport {
    pub sbp_x: f64,
    pub sbp_y: f64,
    pub consistency_x: f64,
    pub consistency_y: f64,
    pub normal_unit: f64,
}

impl PhysicalElementOps {
    pub fn kernel(&self) -> &ElementKernel {
        &self.kernel
    }

    pub fn into_kernel(self) -> ElementKernel {
        self.kernel
    }

    pub fn metrics(&self) -> &MetricData {
        self.kernel.metrics()
    }

    pub fn ref_ops(&self) -> &ReferenceElementOps {
        self.kernel.ref_ops()
    }

    pub fn q(&self, dir: Direction) -> &DMatrix<f64> {
        match dir {
            Direction::X => &self.q_x,
            Direction::Y => &self.q_y,
        }
    }

    pub fn p_phys(&self) -> &[f64] {
        self.kernel.p_phys()
    }

    pub fn p_face(&self) -> &[f64] {
        self.kernel.p_face()
    }

    pub fn normal(&self, dir: Direction) -> &[f64] {
        match dir {
            Direction::X => self.kernel.n_x(),
            Direction::Y => self.kernel.n_y(),
        }
    }

    pub fn verify(&self) -> PhysicalReport {
        let e = self.ref_ops().e_faces();
        let pf = self.p_face();
        let sbp = |dir| {
            let w: Vec<f64> = pf.iter().zip(self.normal(dir)).map(|(p, n)| p * n).collect();
            crate::tensor::sbp_residual(self.q(dir), e, &w)
        };
        let normal_unit = self
            .kernel
            .n_x()
            .iter()
            .zip(self.kernel.n_y())
            .map(|(a, b)| (a * a + b * b - 1.0).abs())
            .fold(0.0, f64::max);
        PhysicalReport {
            sbp_x: sbp(Direction::X),
            sbp_y: sbp(Direction::Y),
            consistency_x: self.q_x.column_sum().amax(),
            consistency_y: self.q_y.column_sum().amax(),
            normal_unit,
        }
    }
}

/// `P^{-1} Q_dir u` through the factored element kernel.
pub fn differentiate(ops: &ElementKernel, u: &[f64], dir: Direction) -> Result<Vec<f64>> {
    let (a, b) = dir.vector();
    ops.differentiate_along(a, b, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_legendre, gauss_lobatto, NodalQuadrature1D};
    use crate::sbp::build_sbp_1d;
    use crate::tensor::build_reference_ops;

    fn reference(q: NodalQuadrature1D) -> Arc<ReferenceElementOps> {
        let s = build_sbp_1d(&q);
        Arc::new(build_reference_ops(&s, &s))
    }

    fn sine_whole_domain() -> SinePerturbed {
        SinePerturbed::new(AffineChart::new(-1.0, 1.0, -1.0, 1.0))
    }

    /// Direct assembly of the corrected operator, independent of the
    /// variable-coefficient delegation.
    fn direct_q(r: &ReferenceElementOps, m: &MetricData, dir: Direction) -> DMatrix<f64> {
        let e = r.e_faces();
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let ph = diag(r.p_hat_face());
        let (nxi, neta) = (diag(r.n_xi()), diag(r.n_eta()));
        let jump = |face: &[f64], vol: &[f64]| diag(face) * e - e * diag(vol);
        let bracket = match dir {
            Direction::X => &nxi * jump(&m.face_y_eta, &m.y_eta) - &neta * jump(&m.face_y_xi, &m.y_xi),
            Direction::Y => &neta * jump(&m.face_x_xi, &m.x_xi) - &nxi * jump(&m.face_x_eta, &m.x_eta),
        };
        naive_q(r, m, dir) + e.transpose() * ph * bracket * 0.5
    }

    #[test]
    fn identity_map_metrics() {
        let r = reference(gauss_legendre(4).unwrap());
        let m = compute_metrics(&r, &AffineChart::UNIT, MetricMode::Discrete).unwrap();
        for k in 0..r.num_volume() {
            assert!((m.x_xi[k] - 1.0).abs() <= 1e-13);
            assert!(m.x_eta[k].abs() <= 1e-13);
            assert!(m.y_xi[k].abs() <= 1e-13);
            assert!((m.y_eta[k] - 1.0).abs() <= 1e-13);
            assert!((m.jac[k] - 1.0).abs() <= 1e-13);
        }
        assert!(m.j_face.iter().all(|j| (j - 1.0).abs() <= 1e-13));
    }

    #[test]
    fn affine_stretch_metrics() {
        let r = reference(gauss_legendre(3).unwrap());
        let chart = AffineChart::new(0.0, 2.0, 0.0, 3.0);
        for mode in [MetricMode::Discrete, MetricMode::Analytic] {
            let m = compute_metrics(&r, &chart, mode).unwrap();
            assert!(m.jac.iter().all(|j| (j - 6.0).abs() <= 1e-12));
            for k in r.face_range(FaceTag::East) {
                assert!((m.j_face[k] - 3.0).abs() <= 1e-12);
            }
            for k in r.face_range(FaceTag::North) {
                assert!((m.j_face[k] - 2.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn discrete_face_metrics_are_projections() {
        let r = reference(gauss_legendre(5).unwrap());
        let m = compute_metrics(&r, &warped(), MetricMode::Discrete).unwrap();
        let e = r.e_faces();
        for (face, vol) in [
            (&m.face_x_xi, &m.x_xi),
            (&m.face_x_eta, &m.x_eta),
            (&m.face_y_xi, &m.y_xi),
            (&m.face_y_eta, &m.y_eta),
        ] {
            let p = e * DVector::from_column_slice(vol);
            for k in 0..face.len() {
                assert!((face[k] - p[k]).abs() <= 1e-13);
            }
        }
    }

    #[derive(Debug)]
    struct Folded;

    impl CurvilinearMap for Folded {
        fn eval(&self, xi: f64, eta: f64) -> (f64, f64) {
            (xi * (1.0 - xi) * 4.0 - 0.5, eta)
        }

        fn jacobian(&self, xi: f64, _: f64) -> [[f64; 2]; 2] {
            [[4.0 - 8.0 * xi, 0.0], [0.0, 1.0]]
        }
    }

    #[test]
    fn inverted_element_is_reported() {
        let r = reference(gauss_legendre(4).unwrap());
        let err = compute_metrics(&r, &Folded, MetricMode::Analytic).unwrap_err();
        assert!(matches!(err, Error::InvertedElement { .. }), "{err}");
    }

    #[test]
    fn identity_map_recovers_reference_operator() {
        let r = reference(gauss_legendre(4).unwrap());
        let m = compute_metrics(&r, &AffineChart::UNIT, MetricMode::Discrete).unwrap();
        let ops = build_physical_ops(r.clone(), m).unwrap();
        assert!((ops.q(Direction::X) - r.q_xi()).amax() <= 1e-13);
        assert!((ops.q(Direction::Y) - r.q_eta()).amax() <= 1e-13);
        for k in 0..r.num_face() {
            assert!((ops.normal(Direction::X)[k] - r.n_xi()[k]).abs() <= 1e-13);
        }
    }

    #[test]
    fn lobatto_correction_is_zero() {
        let r = reference(gauss_lobatto(5).unwrap());
        let m = compute_metrics(&r, &warped(), MetricMode::Discrete).unwrap();
        let e = r.e_faces();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&m.face_y_eta)) * e
            - e * DMatrix::from_diagonal(&DVector::from_column_slice(&m.y_eta));
        assert_eq!(d.amax(), 0.0);
        let ops = build_physical_ops(r.clone(), m.clone()).unwrap();
        assert!((ops.q(Direction::X) - naive_q(&r, &m, Direction::X)).amax() <= 1e-14);
    }

    fn warped() -> Warped {
        Warped {
            chart: AffineChart::new(-0.5, 0.5, 0.0, 2.0),
            a: 0.04,
            b: -0.03,
            c: 0.4,
            d: -0.2,
        }
    }

    #[test]
    fn sine_map_is_separable_so_naive_form_already_sbp() {
        let r = reference(gauss_legendre(5).unwrap());
        let m = compute_metrics(&r, &sine_whole_domain(), MetricMode::Discrete).unwrap();
        let ops = build_physical_ops(r.clone(), m.clone()).unwrap();
        assert!(ops.verify().sbp_x <= 1e-12);
        assert!((naive_q(&r, &m, Direction::X) - ops.q(Direction::X)).amax() <= 1e-12);
    }

    #[test]
    fn analytic_metrics_match_discrete_for_polynomial_map() {
        // bilinear maps are reproduced exactly by the discrete derivative
        #[derive(Debug)]
        struct Bilinear;
        impl CurvilinearMap for Bilinear {
            fn eval(&self, xi: f64, eta: f64) -> (f64, f64) {
                (xi + 0.2 * xi * eta, eta - 0.1 * xi * eta)
            }
            fn jacobian(&self, xi: f64, eta: f64) -> [[f64; 2]; 2] {
                [[1.0 + 0.2 * eta, 0.2 * xi], [-0.1 * eta, 1.0 - 0.1 * xi]]
            }
        }
        let r = reference(gauss_legendre(3).unwrap());
        let a = compute_metrics(&r, &Bilinear, MetricMode::Analytic).unwrap();
        let d = compute_metrics(&r, &Bilinear, MetricMode::Discrete).unwrap();
        for (u, v) in [(&a.jac, &d.jac), (&a.j_face, &d.j_face), (&a.face_x_eta, &d.face_x_eta)] {
            assert!(u.iter().zip(v.iter()).all(|(p, q)| (p - q).abs() <= 1e-12));
        }
    }

    #[test]
    fn legendre_warped_map_physical_sbp() {
        let r = reference(gauss_legendre(5).unwrap());
        let m = compute_metrics(&r, &warped(), MetricMode::Discrete).unwrap();
        let ops = build_physical_ops(r.clone(), m.clone()).unwrap();
        let rep = ops.verify();
        assert!(rep.sbp_x <= 1e-11 && rep.sbp_y <= 1e-11, "{rep:?}");
        assert!(rep.consistency_x <= 1e-11 && rep.consistency_y <= 1e-11, "{rep:?}");
        assert!(rep.normal_unit <= 1e-11, "{rep:?}");

        let e = r.e_faces();
        for dir in [Direction::X, Direction::Y] {
            let w: Vec<f64> = ops.p_face().iter().zip(ops.normal(dir)).map(|(p, n)| p * n).collect();
            let naive = crate::tensor::sbp_residual(&naive_q(&r, &m, dir), e, &w);
            assert!(naive >= 1e-4, "naive residual {naive}");
            assert!((direct_q(&r, &m, dir) - ops.q(dir)).amax() <= 1e-12);
        }
    }

    #[test]
    fn kernel_matches_dense() {
        let r = reference(gauss_legendre(4).unwrap());
        let m = compute_metrics(&r, &warped(), MetricMode::Discrete).unwrap();
        let ops = build_physical_ops(r.clone(), m).unwrap();
        let nv = r.num_volume();
        let u: Vec<f64> = (0..nv).map(|k| (0.7 * k as f64).sin()).collect();
        for (a, b) in [(1.0, 0.0), (0.0, 1.0), (0.3, -1.7)] {
            let mut out = vec![0.0; nv];
            ops.kernel().apply_add(a, b, &u, NO_INTERIOR, &mut out);
            let dense = (ops.q(Direction::X) * a + ops.q(Direction::Y) * b) * DVector::from_column_slice(&u);
            for k in 0..nv {
                assert!((out[k] - dense[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constants_and_affine_linears() {
        let r = reference(gauss_legendre(3).unwrap());
        let chart = AffineChart::new(-0.5, 0.25, 0.1, 0.6);
        let m = compute_metrics(&r, &chart, MetricMode::Discrete).unwrap();
        let k = ElementKernel::new(r.clone(), m.clone()).unwrap();
        let ones = vec![1.0; r.num_volume()];
        for dir in [Direction::X, Direction::Y] {
            assert!(differentiate(&k, &ones, dir).unwrap().iter().all(|v| v.abs() <= 1e-11));
        }
        let dx = differentiate(&k, &m.x, Direction::X).unwrap();
        assert!(dx.iter().all(|v| (v - 1.0).abs() <= 1e-10));
        let dy = differentiate(&k, &m.x, Direction::Y).unwrap();
        assert!(dy.iter().all(|v| v.abs() <= 1e-10));
        assert!(differentiate(&k, &ones[1..], Direction::X).is_err());
    }

    #[test]
    fn gaussian_error_decreases_with_degree() {
        let chart = AffineChart::new(-1.0, 1.0, -1.0, 1.0);
        let mut prev = f64::INFINITY;
        for n in [4usize, 8, 12, 16] {
            let r = reference(gauss_legendre(n + 1).unwrap());
            let m = compute_metrics(&r, &chart, MetricMode::Discrete).unwrap();
            let k = ElementKernel::new(r, m.clone()).unwrap();
            let u: Vec<f64> = m.x.iter().zip(&m.y).map(|(x, y)| (-(9.0 * x * x + 9.0 * y * y) / 2.0).exp()).collect();
            let du = differentiate(&k, &u, Direction::X).unwrap();
            let err = du
                .iter()
                .zip(m.x.iter().zip(&u))
                .map(|(d, (x, u))| (d + 9.0 * x * u).abs())
                .fold(0.0, f64::max);
            assert!(err < prev, "N={n}: {err} !< {prev}");
            prev = err;
        }
        assert!(prev < 1e-3);
    }
}
