//! Tensor-product operators on the reference square `[0, 1]^2`.
//!
//! Volume nodes are ordered ξ-major: node `(i, j)` sits at index
//! `i * n_eta + j`. Face nodes are stacked East (ξ = 1), West (ξ = 0),
//! North (η = 1), South (η = 0), each along increasing tangential coordinate.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::Error;
use crate::quadrature::NodalQuadrature1D;
use crate::sbp::Sbp1D;
use crate::varcoef::SbpDirection;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaceTag {
    East,
    West,
    North,
    South,
}

impl FaceTag {
    pub const ALL: [FaceTag; 4] = [FaceTag::East, FaceTag::West, FaceTag::North, FaceTag::South];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Outward reference normal `(n_ξ, n_η)`.
    pub fn reference_normal(self) -> (f64, f64) {
        match self {
            FaceTag::East => (1.0, 0.0),
            FaceTag::West => (-1.0, 0.0),
            FaceTag::North => (0.0, 1.0),
            FaceTag::South => (0.0, -1.0),
        }
    }

    /// Faces of constant ξ run along η.
    pub fn runs_along_eta(self) -> bool {
        matches!(self, FaceTag::East | FaceTag::West)
    }

    pub fn opposite(self) -> FaceTag {
        match self {
            FaceTag::East => FaceTag::West,
            FaceTag::West => FaceTag::East,
            FaceTag::North => FaceTag::South,
            FaceTag::South => FaceTag::North,
        }
    }

    /// Reference coordinates of the point at tangential parameter `s`.
    pub fn point(self, s: f64) -> (f64, f64) {
        match self {
            FaceTag::East => (1.0, s),
            FaceTag::West => (0.0, s),
            FaceTag::North => (s, 1.0),
            FaceTag::South => (s, 0.0),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            FaceTag::East => "E",
            FaceTag::West => "W",
            FaceTag::North => "N",
            FaceTag::South => "S",
        }
    }
}

impl fmt::Display for FaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FaceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "E" | "east" => Ok(FaceTag::East),
            "W" | "west" => Ok(FaceTag::West),
            "N" | "north" => Ok(FaceTag::North),
            "S" | "south" => Ok(FaceTag::South),
            other => Err(Error::InvalidArgument(format!("unknown face tag `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceElementOps {
    op_xi: Sbp1D,
    op_eta: Sbp1D,
    p_hat: Vec<f64>,
    q_xi: DMatrix<f64>,
    q_eta: DMatrix<f64>,
    e_faces: DMatrix<f64>,
    p_hat_face: Vec<f64>,
    n_xi: Vec<f64>,
    n_eta: Vec<f64>,
    face_offsets: [usize; 5],
    volume_coords: Vec<(f64, f64)>,
    face_coords: Vec<(FaceTag, f64, f64)>,
}

pub fn build_reference_ops(op_xi: &Sbp1D, op_eta: &Sbp1D) -> ReferenceElementOps {
    let (nx, ny) = (op_xi.len(), op_eta.len());
    let nv = nx * ny;
    let (px, py) = (op_xi.p(), op_eta.p());
    let p_hat: Vec<f64> = (0..nv).map(|v| px[v / ny] * py[v % ny]).collect();

    let pxm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(px));
    let pym = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(py));
    let q_xi = op_xi.q().kronecker(&pym);
    let q_eta = pxm.kronecker(op_eta.q());

    let face_offsets = [0, ny, 2 * ny, 2 * ny + nx, 2 * ny + 2 * nx];
    let nf = face_offsets[4];
    let mut e_faces = DMatrix::zeros(nf, nv);
    let mut p_hat_face = vec![0.0; nf];
    let mut n_xi = vec![0.0; nf];
    let mut n_eta = vec![0.0; nf];
    let mut face_coords = Vec::with_capacity(nf);
    for tag in FaceTag::ALL {
        let off = face_offsets[tag.index()];
        let (nxi_s, neta_s) = tag.reference_normal();
        let (along, across) = if tag.runs_along_eta() { (op_eta, op_xi) } else { (op_xi, op_eta) };
        let e = match tag {
            FaceTag::East | FaceTag::North => across.e_right(),
            FaceTag::West | FaceTag::South => across.e_left(),
        };
        for (k, (&s, &w)) in along.quad().nodes().iter().zip(along.p()).enumerate() {
            let row = off + k;
            p_hat_face[row] = w;
            n_xi[row] = nxi_s;
            n_eta[row] = neta_s;
            let (xi, eta) = tag.point(s);
            face_coords.push((tag, xi, eta));
            for (c, &ec) in e.iter().enumerate() {
                let v = if tag.runs_along_eta() { c * ny + k } else { k * ny + c };
                e_faces[(row, v)] = ec;
            }
        }
    }
    let volume_coords = (0..nv)
        .map(|v| (op_xi.quad().nodes()[v / ny], op_eta.quad().nodes()[v % ny]))
        .collect();

    ReferenceElementOps {
        op_xi: op_xi.clone(),
        op_eta: op_eta.clone(),
        p_hat,
        q_xi,
        q_eta,
        e_faces,
        p_hat_face,
        n_xi,
        n_eta,
        face_offsets,
        volume_coords,
        face_coords,
    }
}

impl ReferenceElementOps {
    pub fn op_xi(&self) -> &Sbp1D {
        &self.op_xi
    }

    pub fn op_eta(&self) -> &Sbp1D {
        &self.op_eta
    }

    pub fn n_xi_nodes(&self) -> usize {
        self.op_xi.len()
    }

    pub fn n_eta_nodes(&self) -> usize {
        self.op_eta.len()
    }

    pub fn num_volume(&self) -> usize {
        self.p_hat.len()
    }

    pub fn num_face(&self) -> usize {
        self.face_offsets[4]
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn q_xi(&self) -> &DMatrix<f64> {
        &self.q_xi
    }

    pub fn q_eta(&self) -> &DMatrix<f64> {
        &self.q_eta
    }

    pub fn e_faces(&self) -> &DMatrix<f64> {
        &self.e_faces
    }

    pub fn p_hat_face(&self) -> &[f64] {
        &self.p_hat_face
    }

    /// Diagonal of `N_ξ`.
    pub fn n_xi(&self) -> &[f64] {
        &self.n_xi
    }

    /// Diagonal of `N_η`.
    pub fn n_eta(&self) -> &[f64] {
        &self.n_eta
    }

    pub fn volume_coords(&self) -> &[(f64, f64)] {
        &self.volume_coords
    }

    pub fn face_coords(&self) -> &[(FaceTag, f64, f64)] {
        &self.face_coords
    }

    /// Index range of `face` within the stacked face vector.
    pub fn face_range(&self, face: FaceTag) -> std::ops::Range<usize> {
        self.face_offsets[face.index()]..self.face_offsets[face.index() + 1]
    }

    pub fn face_len(&self, face: FaceTag) -> usize {
        if face.runs_along_eta() {
            self.n_eta_nodes()
        } else {
            self.n_xi_nodes()
        }
    }

    /// 1D rule along `face`.
    pub fn face_quad(&self, face: FaceTag) -> &NodalQuadrature1D {
        if face.runs_along_eta() {
            self.op_eta.quad()
        } else {
            self.op_xi.quad()
        }
    }

    /// `out += scale * (Q_ξ ⊗ P_η) u` in factored form.
    pub fn apply_q_xi_add(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        let ny = self.n_eta_nodes();
        let q = self.op_xi.q();
        let py = self.op_eta.p();
        for i in 0..self.n_xi_nodes() {
            let row = &mut out[i * ny..(i + 1) * ny];
            for k in 0..self.n_xi_nodes() {
                let c = scale * q[(i, k)];
                let col = &u[k * ny..(k + 1) * ny];
                for j in 0..ny {
                    row[j] += c * py[j] * col[j];
                }
            }
        }
    }

    /// `out += scale * (P_ξ ⊗ Q_η) u` in factored form.
    pub fn apply_q_eta_add(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        let ny = self.n_eta_nodes();
        let q = self.op_eta.q();
        let px = self.op_xi.p();
        for i in 0..self.n_xi_nodes() {
            let c = scale * px[i];
            let ui = &u[i * ny..(i + 1) * ny];
            let oi = &mut out[i * ny..(i + 1) * ny];
            for j in 0..ny {
                let mut acc = 0.0;
                for l in 0..ny {
                    acc += q[(j, l)] * ui[l];
                }
                oi[j] += c * acc;
            }
        }
    }

    fn face_projection_row(&self, face: FaceTag) -> &[f64] {
        match face {
            FaceTag::East => self.op_xi.e_right().as_slice(),
            FaceTag::West => self.op_xi.e_left().as_slice(),
            FaceTag::North => self.op_eta.e_right().as_slice(),
            FaceTag::South => self.op_eta.e_left().as_slice(),
        }
    }

    /// `out = E_face u`.
    pub fn restrict(&self, face: FaceTag, u: &[f64], out: &mut [f64]) {
        let ny = self.n_eta_nodes();
        let e = self.face_projection_row(face);
        out.fill(0.0);
        if face.runs_along_eta() {
            for (i, &ei) in e.iter().enumerate() {
                if ei != 0.0 {
                    for (o, &v) in out.iter_mut().zip(&u[i * ny..(i + 1) * ny]) {
                        *o += ei * v;
                    }
                }
            }
        } else {
            for (o, ui) in out.iter_mut().zip(u.chunks_exact(ny)) {
                *o = e.iter().zip(ui).map(|(a, b)| a * b).sum();
            }
        }
    }

    /// `out += E_face^T v`.
    pub fn lift_add(&self, face: FaceTag, v: &[f64], out: &mut [f64]) {
        let ny = self.n_eta_nodes();
        let e = self.face_projection_row(face);
        if face.runs_along_eta() {
            for (i, &ei) in e.iter().enumerate() {
                if ei != 0.0 {
                    for (o, &w) in out[i * ny..(i + 1) * ny].iter_mut().zip(v) {
                        *o += ei * w;
                    }
                }
            }
        } else {
            for (oi, &w) in out.chunks_exact_mut(ny).zip(v) {
                for (o, &ej) in oi.iter_mut().zip(e) {
                    *o += ej * w;
                }
            }
        }
    }

    /// SBP operator set for the ξ direction (`Q_ξ`, `E`, `P̂`, `N_ξ`).
    pub fn direction_xi(&self) -> SbpDirection<'_> {
        SbpDirection {
            p_vol: &self.p_hat,
            q: &self.q_xi,
            e: &self.e_faces,
            p_face: &self.p_hat_face,
            normal: &self.n_xi,
        }
    }

    pub fn direction_eta(&self) -> SbpDirection<'_> {
        SbpDirection {
            p_vol: &self.p_hat,
            q: &self.q_eta,
            e: &self.e_faces,
            p_face: &self.p_hat_face,
            normal: &self.n_eta,
        }
    }

    /// Number of nonzero coefficients in the projection row of `face`.
    pub(crate) fn projection_stencil(&self, face: FaceTag) -> usize {
        self.face_projection_row(face).iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceReport {
    pub sbp_xi: f64,
    pub sbp_eta: f64,
    pub consistency_xi: f64,
    pub consistency_eta: f64,
    pub face_consistency: f64,
    pub commutation: f64,
}

impl ReferenceReport {
    pub fn max(&self) -> f64 {
        [
            self.sbp_xi,
            self.sbp_eta,
            self.consistency_xi,
            self.consistency_eta,
            self.face_consistency,
            self.commutation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub(crate) fn sbp_residual(q: &DMatrix<f64>, e: &DMatrix<f64>, weights: &[f64]) -> f64 {
    let boundary = e.transpose() * DMatrix::from_fn(e.nrows(), e.ncols(), |r, c| weights[r] * e[(r, c)]);
    (q + q.transpose() - boundary).amax()
}

pub fn verify_reference_ops(ops: &ReferenceElementOps) -> ReferenceReport {
    let wx: Vec<f64> = ops.p_hat_face.iter().zip(&ops.n_xi).map(|(p, n)| p * n).collect();
    let we: Vec<f64> = ops.p_hat_face.iter().zip(&ops.n_eta).map(|(p, n)| p * n).collect();
    let nv = ops.num_volume();
    let dx = DMatrix::from_fn(nv, nv, |i, j| ops.q_xi[(i, j)] / ops.p_hat[i]);
    let de = DMatrix::from_fn(nv, nv, |i, j| ops.q_eta[(i, j)] / ops.p_hat[i]);
    ReferenceReport {
        sbp_xi: sbp_residual(&ops.q_xi, &ops.e_faces, &wx),
        sbp_eta: sbp_residual(&ops.q_eta, &ops.e_faces, &we),
        consistency_xi: ops.q_xi.column_sum().amax(),
        consistency_eta: ops.q_eta.column_sum().amax(),
        face_consistency: ops.e_faces.column_sum().map(|v| v - 1.0).amax(),
        commutation: (&dx * &de - &de * &dx).amax(),
    }
}
