//! Inner-product preserving interface projections between overlapping faces.
//!
//! Faces are described by their node rule and the parent-domain interval
//! they cover. For two faces `m`, `n` the cross mass matrix over the overlap
//! gives
//!
//! ```text
//! I_nm = P̄_m^{-1} ∫ l_m l_n^T dt,    I_mn = P̄_n^{-1} ∫ l_n l_m^T dt
//! ```
//!
//! with `P̄ = L P̂` the face rule scaled to parent length, so that
//! `P̄_m I_nm = (P̄_n I_mn)^T` holds by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, NodalQuadrature1D};

/// A face as a node rule laid on the parent interval `[start, end]`.
#[derive(Clone, Debug)]
pub struct FaceSegment {
    pub quad: NodalQuadrature1D,
    pub start: f64,
    pub end: f64,
}

impl FaceSegment {
    pub fn new(quad: NodalQuadrature1D, start: f64, end: f64) -> Result<Self> {
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidArgument(format!("face interval [{start}, {end}] is empty")));
        }
        Ok(FaceSegment { quad, start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Parent coordinates of the face nodes.
    pub fn node_coords(&self) -> Vec<f64> {
        self.quad.nodes().iter().map(|s| self.start + s * self.length()).collect()
    }

    /// Face quadrature scaled to parent length.
    pub fn parent_weights(&self) -> Vec<f64> {
        self.quad.weights().iter().map(|w| w * self.length()).collect()
    }

    fn local(&self, t: f64) -> f64 {
        (t - self.start) / self.length()
    }
}

/// Projection pair between face `m` and neighbour face `n`.
#[derive(Clone, Debug)]
pub struct InterfaceProjection {
    /// `n → m`, shape `len_m × len_n`.
    pub i_nm: DMatrix<f64>,
    /// `m → n`, shape `len_n × len_m`.
    pub i_mn: DMatrix<f64>,
    /// Face quadrature on `m` the pair is inner-product preserving for.
    pub p_m: Vec<f64>,
    pub p_n: Vec<f64>,
    /// Parent-domain overlap interval.
    pub overlap: (f64, f64),
}

impl InterfaceProjection {
    /// `max |P_m I_nm - (P_n I_mn)^T|`.
    pub fn ipp_residual(&self) -> f64 {
        ipp_residual(&self.i_nm, &self.i_mn, &self.p_m, &self.p_n)
    }
}

pub fn ipp_residual(i_nm: &DMatrix<f64>, i_mn: &DMatrix<f64>, p_m: &[f64], p_n: &[f64]) -> f64 {
    let mut r: f64 = 0.0;
    for a in 0..i_nm.nrows() {
        for b in 0..i_nm.ncols() {
            r = r.max((p_m[a] * i_nm[(a, b)] - p_n[b] * i_mn[(b, a)]).abs());
        }
    }
    r
}

pub fn build_l2_projection_pair(m: &FaceSegment, n: &FaceSegment) -> Result<InterfaceProjection> {
    let t0 = m.start.max(n.start);
    let t1 = m.end.min(n.end);
    let len = t1 - t0;
    if !(len > 1e-14 * m.length().min(n.length())) {
        return Err(Error::InvalidArgument(format!(
            "faces [{}, {}] and [{}, {}] do not overlap",
            m.start, m.end, n.start, n.end
        )));
    }
    let (lm, ln) = (m.quad.num_nodes(), n.quad.num_nodes());
    let degree = m.quad.poly_degree() + n.quad.poly_degree();
    let aux = gauss_legendre(degree.div_ceil(2) + 1)?;

    let mut cross = DMatrix::zeros(lm, ln);
    let mut a = vec![0.0; lm];
    let mut b = vec![0.0; ln];
    for (&z, &w) in aux.nodes().iter().zip(aux.weights()) {
        let t = t0 + z * len;
        m.quad.lagrange_into(m.local(t), &mut a);
        n.quad.lagrange_into(n.local(t), &mut b);
        cross.ger(w * len, &DVector::from_column_slice(&a), &DVector::from_column_slice(&b), 1.0);
    }

    let p_m = m.parent_weights();
    let p_n = n.parent_weights();
    let i_nm = DMatrix::from_fn(lm, ln, |r, c| cross[(r, c)] / p_m[r]);
    let i_mn = DMatrix::from_fn(ln, lm, |r, c| cross[(c, r)] / p_n[r]);
    Ok(InterfaceProjection {
        i_nm,
        i_mn,
        p_m,
        p_n,
        overlap: (t0, t1),
    })
}

/// Rescale a pair for curved faces. `stretch_m`, `stretch_n` are the face
/// stretching factors relative to the quadrature the pair was built for, so
/// the result is inner-product preserving for `stretch ∘ p`.
pub fn rescale_projection_curvilinear(
    pair: &InterfaceProjection,
    stretch_m: &[f64],
    stretch_n: &[f64],
) -> Result<InterfaceProjection> {
    crate::error::check_len("stretching on m", pair.p_m.len(), stretch_m.len())?;
    crate::error::check_len("stretching on n", pair.p_n.len(), stretch_n.len())?;
    for s in stretch_m.iter().chain(stretch_n) {
        if !(*s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!("non-positive face stretching {s}")));
        }
    }
    let rm: Vec<f64> = stretch_m.iter().map(|s| s.sqrt()).collect();
    let rn: Vec<f64> = stretch_n.iter().map(|s| s.sqrt()).collect();
    let i_nm = DMatrix::from_fn(pair.i_nm.nrows(), pair.i_nm.ncols(), |r, c| pair.i_nm[(r, c)] * rn[c] / rm[r]);
    let i_mn = DMatrix::from_fn(pair.i_mn.nrows(), pair.i_mn.ncols(), |r, c| pair.i_mn[(r, c)] * rm[c] / rn[r]);
    Ok(InterfaceProjection {
        i_nm,
        i_mn,
        p_m: pair.p_m.iter().zip(stretch_m).map(|(p, s)| p * s).collect(),
        p_n: pair.p_n.iter().zip(stretch_n).map(|(p, s)| p * s).collect(),
        overlap: pair.overlap,
    })
}

/// Largest `j` for which `Σ_n I_nm y_n^k = y_m^k` holds for every
/// `k ≤ j`, accumulated over all neighbours covering `m`. `None` when even
/// constants are not reproduced.
pub fn exact_monomial_degree(m: &FaceSegment, neighbours: &[FaceSegment], max_degree: usize, tol: f64) -> Result<Option<usize>> {
    let residuals = monomial_residuals(m, neighbours, max_degree)?;
    let mut best = None;
    for (j, r) in residuals.iter().enumerate() {
        if *r > tol {
            break;
        }
        best = Some(j);
    }
    Ok(best)
}

/// `max |Σ_n I_nm y_n^j - y_m^j|` for `j = 0..=max_degree`, with `y` the
/// parent coordinate measured from the start of `m` in units of its length.
pub fn monomial_residuals(m: &FaceSegment, neighbours: &[FaceSegment], max_degree: usize) -> Result<Vec<f64>> {
    let pairs = neighbours
        .iter()
        .map(|n| build_l2_projection_pair(m, n))
        .collect::<Result<Vec<_>>>()?;
    let scale = |t: f64| (t - m.start) / m.length();
    let ym: Vec<f64> = m.node_coords().into_iter().map(scale).collect();
    let yn: Vec<Vec<f64>> = neighbours
        .iter()
        .map(|n| n.node_coords().into_iter().map(scale).collect())
        .collect();
    let mut out = Vec::with_capacity(max_degree + 1);
    for j in 0..=max_degree as i32 {
        let mut acc = DVector::zeros(ym.len());
        for (pair, y) in pairs.iter().zip(&yn) {
            acc += &pair.i_nm * DVector::from_iterator(y.len(), y.iter().map(|v| v.powi(j)));
        }
        let r = acc.iter().zip(&ym).map(|(a, y)| (a - y.powi(j)).abs()).fold(0.0, f64::max);
        out.push(r);
    }
    Ok(out)
}

/// Exact monomial degree of an interface between two tilings of the same
/// interval: the minimum over every face on either side of the degree
/// reproduced when projecting from the overlapping faces opposite.
pub fn interface_exact_degree(left: &[FaceSegment], right: &[FaceSegment], max_degree: usize, tol: f64) -> Result<Option<usize>> {
    let overlapping = |m: &FaceSegment, side: &[FaceSegment]| -> Vec<FaceSegment> {
        side.iter()
            .filter(|n| m.start.max(n.start) < m.end.min(n.end) - 1e-14 * m.length())
            .cloned()
            .collect()
    };
    let mut best = Some(max_degree);
    for (faces, other) in [(left, right), (right, left)] {
        for m in faces {
            let nb = overlapping(m, other);
            if nb.is_empty() {
                return Err(Error::InvalidArgument(format!("face [{}, {}] has no neighbour", m.start, m.end)));
            }
            best = best.min(exact_monomial_degree(m, &nb, max_degree, tol)?);
        }
    }
    Ok(best)
}

/// Accuracy predicted for an L2 projection from faces of degree `n_n` onto
/// a face of degree `n_m` whose rule integrates exactly to degree `q_m`.
pub fn predicted_accuracy(n_m: usize, n_n: usize, q_m: usize) -> usize {
    n_m.min(n_n).min(q_m - n_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_lobatto, NodeFamily};
    use proptest::prelude::*;

    fn seg(family: NodeFamily, degree: usize, a: f64, b: f64) -> FaceSegment {
        FaceSegment::new(family.rule(degree + 1).unwrap(), a, b).unwrap()
    }

    #[test]
    fn conforming_identical_legendre_faces_give_identity() {
        let m = seg(NodeFamily::Legendre, 4, 0.0, 1.0);
        let p = build_l2_projection_pair(&m, &m).unwrap();
        assert!((p.i_nm.clone() - DMatrix::identity(5, 5)).amax() <= 1e-13);
        assert!((p.i_mn.clone() - DMatrix::identity(5, 5)).amax() <= 1e-13);
    }

    #[test]
    fn conforming_identical_lobatto_faces_give_lumped_mass_ratio() {
        // the exact mass matrix is not diagonal in the Lobatto basis
        let m = seg(NodeFamily::Lobatto, 4, 0.0, 1.0);
        let p = build_l2_projection_pair(&m, &m).unwrap();
        let q = m.quad.clone();
        let aux = gauss_legendre(6).unwrap();
        let mut mass = DMatrix::zeros(5, 5);
        for (&z, &w) in aux.nodes().iter().zip(aux.weights()) {
            let l = DVector::from_vec(q.lagrange_eval(z).unwrap());
            mass.ger(w, &l, &l, 1.0);
        }
        let expect = DMatrix::from_fn(5, 5, |r, c| mass[(r, c)] / q.weights()[r]);
        assert!((p.i_nm.clone() - expect).amax() <= 1e-13);
        assert!((p.i_nm.clone() - DMatrix::identity(5, 5)).amax() > 1e-3);
        assert_eq!(exact_monomial_degree(&m, std::slice::from_ref(&m), 6, 1e-11).unwrap(), Some(3));
    }

    #[test]
    fn empty_overlap_rejected() {
        let m = seg(NodeFamily::Legendre, 3, 0.0, 1.0);
        let n = seg(NodeFamily::Legendre, 3, 1.0, 2.0);
        assert!(matches!(build_l2_projection_pair(&m, &n), Err(Error::InvalidArgument(_))));
    }

    fn coarse_side(family: NodeFamily, degree: usize) -> Vec<f64> {
        let m = seg(family, degree, 0.0, 1.0);
        let nb = [seg(family, degree, 0.0, 0.5), seg(family, degree, 0.5, 1.0)];
        monomial_residuals(&m, &nb, degree + 2).unwrap()
    }

    fn fine_side(family: NodeFamily, degree: usize) -> Vec<f64> {
        let m = seg(family, degree, 0.5, 1.0);
        let nb = [seg(family, degree, 0.0, 1.0)];
        monomial_residuals(&m, &nb, degree + 2).unwrap()
    }

    #[test]
    fn legendre_two_to_one_degree_three() {
        let r = fine_side(NodeFamily::Legendre, 3);
        assert!(r[..=3].iter().all(|v| *v <= 1e-11), "{r:?}");
        assert!(r[4] > 1e-3, "{r:?}");
        // the interpolation error on a Gauss-Legendre face is orthogonal to
        // the coarse basis, so the coarse side gains one degree
        let r = coarse_side(NodeFamily::Legendre, 3);
        assert!(r[..=4].iter().all(|v| *v <= 1e-11), "{r:?}");
        assert!(r[5] > 1e-4, "{r:?}");
        let left = [seg(NodeFamily::Legendre, 3, 0.0, 1.0)];
        let right = [seg(NodeFamily::Legendre, 3, 0.0, 0.5), seg(NodeFamily::Legendre, 3, 0.5, 1.0)];
        assert_eq!(interface_exact_degree(&left, &right, 8, 1e-11).unwrap(), Some(3));
    }

    #[test]
    fn lobatto_two_to_one_degree_three() {
        for r in [fine_side(NodeFamily::Lobatto, 3), coarse_side(NodeFamily::Lobatto, 3)] {
            assert!(r[..=2].iter().all(|v| *v <= 1e-11), "{r:?}");
            assert!(r[3] > 1e-4, "{r:?}");
        }
    }

    #[test]
    fn coarse_side_from_fine_side() {
        // m is the short face, n the long one
        let m = seg(NodeFamily::Legendre, 4, 0.5, 1.0);
        let n = seg(NodeFamily::Legendre, 4, 0.0, 1.0);
        assert_eq!(exact_monomial_degree(&m, &[n], 6, 1e-11).unwrap(), Some(4));
    }

    #[test]
    fn rescale_identity_and_constant() {
        let m = seg(NodeFamily::Legendre, 3, 0.0, 1.0);
        let n = seg(NodeFamily::Legendre, 2, 0.0, 0.5);
        let p = build_l2_projection_pair(&m, &n).unwrap();
        for c in [1.0, 2.5] {
            let r = rescale_projection_curvilinear(&p, &[c; 4], &[c; 3]).unwrap();
            assert!((r.i_nm.clone() - &p.i_nm).amax() <= 1e-15);
            assert!((r.i_mn.clone() - &p.i_mn).amax() <= 1e-15);
        }
        assert!(rescale_projection_curvilinear(&p, &[1.0, 0.0, 1.0, 1.0], &[1.0; 3]).is_err());
        assert!(rescale_projection_curvilinear(&p, &[1.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn rescale_variable_keeps_ipp_breaks_exactness() {
        let m = seg(NodeFamily::Legendre, 4, 0.0, 1.0);
        let n = seg(NodeFamily::Legendre, 4, 0.0, 0.5);
        let p = build_l2_projection_pair(&m, &n).unwrap();
        let sm: Vec<f64> = m.node_coords().iter().map(|t| 1.0 + 0.2 * (3.0 * t).sin()).collect();
        let sn: Vec<f64> = n.node_coords().iter().map(|t| 1.0 + 0.2 * (3.0 * t).sin()).collect();
        let r = rescale_projection_curvilinear(&p, &sm, &sn).unwrap();
        assert!(r.ipp_residual() <= 1e-13);
        let ones = DVector::from_element(5, 1.0);
        let drift = (&r.i_mn * &ones).add_scalar(-1.0).amax();
        assert!(drift > 1e-6, "{drift}");
    }

    #[test]
    fn predicted_accuracy_formula() {
        assert_eq!(predicted_accuracy(3, 3, 7), 3);
        assert_eq!(predicted_accuracy(3, 3, 5), 2);
        let q = gauss_lobatto(4).unwrap();
        assert_eq!(predicted_accuracy(3, 3, q.degree()), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn ipp_holds_by_construction(
            fm in prop::sample::select(NodeFamily::ALL.to_vec()),
            fn_ in prop::sample::select(NodeFamily::ALL.to_vec()),
            dm in 1usize..=8,
            dn in 1usize..=8,
            ratio in prop::sample::select(vec![1usize, 2, 3]),
            part in 0usize..3,
        ) {
            let m = seg(fm, dm, 0.0, 1.0);
            let k = part % ratio;
            let h = 1.0 / ratio as f64;
            let n = seg(fn_, dn, k as f64 * h, (k + 1) as f64 * h);
            let p = build_l2_projection_pair(&m, &n).unwrap();
            prop_assert!(p.ipp_residual() <= 1e-13, "{}", p.ipp_residual());
            let q = build_l2_projection_pair(&n, &m).unwrap();
            prop_assert!(q.ipp_residual() <= 1e-13);
        }
    }
}
