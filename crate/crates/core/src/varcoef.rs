//! Penalty-corrected variable-coefficient operators.
//!
//! For any operator set satisfying `Q + Q^T = E^T P N E`, the product
//! `Ψ (Φ u)_x` is approximated by `P^{-1} Q_{Φ,Ψ} u` with
//!
//! ```text
//! Q_{Φ,Ψ} = Ψ Q Φ + ½ (ψ E + E Ψ)^T P N (φ E - E Φ)
//! ```
//!
//! (underlined diagonal matrices written without decoration). The boundary
//! correction restores the variable-coefficient SBP identity
//! `Q_{Φ,Ψ} + Q_{Ψ,Φ}^T = (ψ E)^T P N (φ E)` even when `E` is an inexact
//! projection. Surface coefficients default to `φ = E Φ`, `ψ = E Ψ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result};

/// Borrowed view of one direction of an SBP operator set.
#[derive(Clone, Copy, Debug)]
pub struct SbpDirection<'a> {
    pub p_vol: &'a [f64],
    pub q: &'a DMatrix<f64>,
    pub e: &'a DMatrix<f64>,
    pub p_face: &'a [f64],
    pub normal: &'a [f64],
}

impl SbpDirection<'_> {
    pub fn num_volume(&self) -> usize {
        self.p_vol.len()
    }

    pub fn num_face(&self) -> usize {
        self.p_face.len()
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        (self.e * DVector::from_column_slice(v)).data.into()
    }

    fn check(&self, context: &'static str, vol: &[&[f64]]) -> Result<()> {
        for v in vol {
            check_len(context, self.num_volume(), v.len())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VarCoefOperator {
    phi: Vec<f64>,
    psi: Vec<f64>,
    phi_surface: Vec<f64>,
    psi_surface: Vec<f64>,
    p_vol: Vec<f64>,
    q: DMatrix<f64>,
}

impl VarCoefOperator {
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn phi_surface(&self) -> &[f64] {
        &self.phi_surface
    }

    pub fn psi_surface(&self) -> &[f64] {
        &self.psi_surface
    }

    /// The corrected matrix `Q_{Φ,Ψ}`.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `P^{-1} Q_{Φ,Ψ} u`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("varcoef apply", self.p_vol.len(), u.len())?;
        let r = &self.q * DVector::from_column_slice(u);
        Ok(r.iter().zip(&self.p_vol).map(|(v, p)| v / p).collect())
    }
}

fn diag_left(d: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)])
}

fn diag_right(m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[j])
}

/// `½ (ψ E + E Ψ)^T P N (φ E - E Φ)`.
pub fn correction_term(
    base: &SbpDirection<'_>,
    phi: &[f64],
    psi: &[f64],
    phi_surface: &[f64],
    psi_surface: &[f64],
) -> Result<DMatrix<f64>> {
    base.check("varcoef correction", &[phi, psi])?;
    check_len("varcoef surface phi", base.num_face(), phi_surface.len())?;
    check_len("varcoef surface psi", base.num_face(), psi_surface.len())?;
    let e = base.e;
    let left = diag_left(psi_surface, e) + diag_right(e, psi);
    let right = diag_left(phi_surface, e) - diag_right(e, phi);
    let pn: Vec<f64> = base.p_face.iter().zip(base.normal).map(|(p, n)| 0.5 * p * n).collect();
    Ok(left.transpose() * diag_left(&pn, &right))
}

/// The uncorrected product `Ψ Q Φ`.
pub fn naive_q(base: &SbpDirection<'_>, phi: &[f64], psi: &[f64]) -> Result<DMatrix<f64>> {
    base.check("varcoef naive", &[phi, psi])?;
    Ok(diag_right(&diag_left(psi, base.q), phi))
}

pub fn build_varcoef_q(base: &SbpDirection<'_>, phi: &[f64], psi: &[f64]) -> Result<VarCoefOperator> {
    base.check("varcoef build", &[phi, psi])?;
    let phi_s = base.project(phi);
    let psi_s = base.project(psi);
    build_varcoef_q_with_surface(base, phi, psi, &phi_s, &psi_s)
}

/// Same as [`build_varcoef_q`] with externally supplied surface coefficients.
pub fn build_varcoef_q_with_surface(
    base: &SbpDirection<'_>,
    phi: &[f64],
    psi: &[f64],
    phi_surface: &[f64],
    psi_surface: &[f64],
) -> Result<VarCoefOperator> {
    let q = naive_q(base, phi, psi)? + correction_term(base, phi, psi, phi_surface, psi_surface)?;
    Ok(VarCoefOperator {
        phi: phi.to_vec(),
        psi: psi.to_vec(),
        phi_surface: phi_surface.to_vec(),
        psi_surface: psi_surface.to_vec(),
        p_vol: base.p_vol.to_vec(),
        q,
    })
}

/// Max entry of `Q_{Φ,Ψ} + Q_{Ψ,Φ}^T - (ψ E)^T P N (φ E)`.
pub fn varcoef_identity_residual(base: &SbpDirection<'_>, phi: &[f64], psi: &[f64]) -> Result<f64> {
    let a = build_varcoef_q(base, phi, psi)?;
    let b = build_varcoef_q(base, psi, phi)?;
    let psi_e = diag_left(&a.psi_surface, base.e);
    let phi_e = diag_left(&a.phi_surface, base.e);
    let pn: Vec<f64> = base.p_face.iter().zip(base.normal).map(|(p, n)| p * n).collect();
    let rhs = psi_e.transpose() * diag_left(&pn, &phi_e);
    Ok((a.q + b.q.transpose() - rhs).amax())
}

fn mimicry_residual(
    base: &SbpDirection<'_>,
    q_phi_psi: &DMatrix<f64>,
    q_psi_phi: &DMatrix<f64>,
    phi: &[f64],
    psi: &[f64],
    u: &[f64],
    v: &[f64],
) -> f64 {
    let uv = DVector::from_column_slice(u);
    let vv = DVector::from_column_slice(v);
    let volume = vv.dot(&(q_phi_psi * &uv)) + uv.dot(&(q_psi_phi * &vv));
    let (eu, ev) = (base.project(u), base.project(v));
    let (phi_s, psi_s) = (base.project(phi), base.project(psi));
    let boundary: f64 = (0..base.num_face())
        .map(|k| psi_s[k] * ev[k] * base.p_face[k] * base.normal[k] * phi_s[k] * eu[k])
        .sum();
    (volume - boundary).abs()
}

/// `|(V, D_{Φ,Ψ} U)_P + (U, D_{Ψ,Φ} V)_P - (ψ v)^T P N (φ u)|` for the
/// corrected operator.
pub fn check_inner_product_mimicry(
    base: &SbpDirection<'_>,
    phi: &[f64],
    psi: &[f64],
    u: &[f64],
    v: &[f64],
) -> Result<f64> {
    base.check("inner product mimicry", &[u, v])?;
    let a = build_varcoef_q(base, phi, psi)?;
    let b = build_varcoef_q(base, psi, phi)?;
    Ok(mimicry_residual(base, &a.q, &b.q, phi, psi, u, v))
}

/// The same residual for the uncorrected `Ψ Q Φ`.
pub fn check_inner_product_mimicry_naive(
    base: &SbpDirection<'_>,
    phi: &[f64],
    psi: &[f64],
    u: &[f64],
    v: &[f64],
) -> Result<f64> {
    base.check("inner product mimicry", &[u, v])?;
    let a = naive_q(base, phi, psi)?;
    let b = naive_q(base, psi, phi)?;
    Ok(mimicry_residual(base, &a, &b, phi, psi, u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::quadrature::{gauss_legendre, gauss_lobatto, NodalQuadrature1D};
    use crate::sbp::build_sbp_1d;
    use crate::tensor::{build_reference_ops, ReferenceElementOps};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference(q: NodalQuadrature1D) -> ReferenceElementOps {
        let s = build_sbp_1d(&q);
        build_reference_ops(&s, &s)
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn unit_coefficients_leave_q_unchanged() {
        let r = reference(gauss_legendre(4).unwrap());
        let base = r.direction_xi();
        let ones = vec![1.0; r.num_volume()];
        let corr = correction_term(&base, &ones, &ones, &vec![1.0; r.num_face()], &vec![1.0; r.num_face()]).unwrap();
        assert!(corr.amax() <= 1e-15);
        let op = build_varcoef_q(&base, &ones, &ones).unwrap();
        assert!((op.q() - r.q_xi()).amax() <= 1e-14);
    }

    #[test]
    fn random_coefficients_satisfy_identity() {
        let r = reference(gauss_legendre(4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for base in [r.direction_xi(), r.direction_eta()] {
            let phi = random(&mut rng, r.num_volume());
            let psi = random(&mut rng, r.num_volume());
            assert!(varcoef_identity_residual(&base, &phi, &psi).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn lobatto_correction_vanishes() {
        let r = reference(gauss_lobatto(5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = r.direction_eta();
        let phi = random(&mut rng, r.num_volume());
        let psi = random(&mut rng, r.num_volume());
        let phi_s: Vec<f64> = (r.e_faces() * DVector::from_column_slice(&phi)).data.into();
        let psi_s: Vec<f64> = (r.e_faces() * DVector::from_column_slice(&psi)).data.into();
        // φE - EΦ is exactly zero when E selects unit rows
        let phi_e = diag_left(&phi_s, r.e_faces()) - diag_right(r.e_faces(), &phi);
        assert_eq!(phi_e.amax(), 0.0);
        let corr = correction_term(&base, &phi, &psi, &phi_s, &psi_s).unwrap();
        assert_eq!(corr.amax(), 0.0);
    }

    #[test]
    fn closed_square_constant_mimicry_is_zero() {
        let r = reference(gauss_legendre(3).unwrap());
        let ones = vec![1.0; r.num_volume()];
        for base in [r.direction_xi(), r.direction_eta()] {
            assert!(check_inner_product_mimicry(&base, &ones, &ones, &ones, &ones).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn corrected_beats_naive() {
        let r = reference(gauss_legendre(4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = r.num_volume();
        let base = r.direction_xi();
        let (phi, psi, u, v) = (random(&mut rng, n), random(&mut rng, n), random(&mut rng, n), random(&mut rng, n));
        let corrected = check_inner_product_mimicry(&base, &phi, &psi, &u, &v).unwrap();
        let naive = check_inner_product_mimicry_naive(&base, &phi, &psi, &u, &v).unwrap();
        assert!(corrected <= 1e-12, "{corrected}");
        assert!(naive >= 1e3 * corrected.max(1e-16), "naive {naive} corrected {corrected}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = reference(gauss_legendre(3).unwrap());
        let base = r.direction_xi();
        let short = vec![1.0; r.num_volume() - 1];
        let ok = vec![1.0; r.num_volume()];
        assert!(matches!(build_varcoef_q(&base, &short, &ok), Err(Error::DimensionMismatch { .. })));
        assert!(check_inner_product_mimicry(&base, &ok, &ok, &short, &ok).is_err());
    }

    #[test]
    fn swapped_build_is_transpose_complement() {
        let r = reference(gauss_legendre(5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = r.num_volume();
        let base = r.direction_eta();
        let (phi, psi) = (random(&mut rng, n), random(&mut rng, n));
        let a = build_varcoef_q(&base, &phi, &psi).unwrap();
        let b = build_varcoef_q(&base, &psi, &phi).unwrap();
        // Q_{Φ,Ψ} + Q_{Ψ,Φ}^T is symmetric under the swap Φ <-> Ψ up to transpose
        let s1 = a.q() + b.q().transpose();
        let s2 = b.q() + a.q().transpose();
        assert!((s1 - s2.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn apply_matches_dense_divide() {
        let r = reference(gauss_legendre(3).unwrap());
        let n = r.num_volume();
        let phi: Vec<f64> = (0..n).map(|k| 1.0 + 0.1 * k as f64).collect();
        let op = build_varcoef_q(&r.direction_xi(), &phi, &vec![1.0; n]).unwrap();
        let u: Vec<f64> = (0..n).map(|k| (k as f64).cos()).collect();
        let du = op.apply(&u).unwrap();
        let dense = op.q() * DVector::from_column_slice(&u);
        for k in 0..n {
            assert!((du[k] * r.p_hat()[k] - dense[k]).abs() <= 1e-13);
        }
    }
}
