//! Multi-element SBP operator in split form.
//!
//! ```text
//! Q = Q̿ + ½ (E^i)^T P^i N* E^i,    N* = ½ (N^i I^i - I^i N^i)
//! ```
//!
//! `Q̿` is block diagonal and applied per element through the factored
//! kernel with the interior-face self-term removed. The coupling term only
//! touches interior face traces. Apply runs in three passes:
//!
//! 1. per element: `Q̿ u` and interior traces `E^i u`
//! 2. per interior face: `½ P^i N* (E^i u)`, neighbours summed in a fixed order
//! 3. per element: lift the face values back with `(E^i)^T`

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::coupling::{build_l2_projection_pair, rescale_projection_curvilinear, FaceSegment, InterfaceProjection};
use crate::curvilinear::{compute_metrics, Direction, ElementKernel, InteriorMask, MetricMode};
use crate::error::{check_len, Error, Result};
use crate::exec::{split_by_lengths, Execution};
use crate::mesh::{ElementSpec, FaceId, MeshTopology};
use crate::quadrature::NodeFamily;
use crate::sbp::build_sbp_1d;
use crate::tensor::{build_reference_ops, FaceTag, ReferenceElementOps};

/// IPP residual tolerance relative to the largest face weight involved.
const IPP_TOL: f64 = 1e-12;

/// Reference operators shared between elements of equal discretization.
#[derive(Default)]
pub struct ReferenceCache {
    map: HashMap<(NodeFamily, usize, usize), Arc<ReferenceElementOps>>,
}

impl ReferenceCache {
    pub fn get(&mut self, spec: &ElementSpec) -> Result<Arc<ReferenceElementOps>> {
        let key = (spec.family, spec.degree_xi, spec.degree_eta);
        if let Some(r) = self.map.get(&key) {
            return Ok(r.clone());
        }
        let a = build_sbp_1d(&spec.family.rule(spec.degree_xi + 1)?);
        let b = build_sbp_1d(&spec.family.rule(spec.degree_eta + 1)?);
        let r = Arc::new(build_reference_ops(&a, &b));
        self.map.insert(key, r.clone());
        Ok(r)
    }
}

/// Projection from neighbour face `n` onto face `m`.
#[derive(Clone, Debug)]
pub struct InterfaceCoupling {
    pub m: FaceId,
    pub n: FaceId,
    pub projection: InterfaceProjection,
}

#[derive(Clone, Debug)]
struct Coupling {
    neighbor: usize,
    i_nm: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct InteriorFace {
    face: FaceId,
    p: Vec<f64>,
    n_x: Vec<f64>,
    n_y: Vec<f64>,
    couplings: Vec<Coupling>,
}

#[derive(Clone, Debug)]
struct ExteriorFace {
    face: FaceId,
    p: Vec<f64>,
    n_x: Vec<f64>,
    n_y: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Work performed by one apply, in multiply-adds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ApplyCounters {
    pub element_ops: u64,
    pub coupling_ops: u64,
}

#[derive(Clone, Debug)]
pub struct GlobalOperator {
    kernels: Vec<ElementKernel>,
    offsets: Vec<usize>,
    masks: Vec<InteriorMask>,
    interior: Vec<InteriorFace>,
    interior_offsets: Vec<usize>,
    /// Interior face index for each (element, tag).
    element_faces: Vec<[Option<usize>; 4]>,
    exterior: Vec<ExteriorFace>,
    exterior_offsets: Vec<usize>,
    p: Vec<f64>,
    exec: Execution,
}

fn segment(kernel: &ElementKernel, topo: &MeshTopology, f: FaceId) -> Result<FaceSegment> {
    let el = &topo.elements()[f.element];
    let (a, b) = el.face_span(f.tag);
    FaceSegment::new(kernel.ref_ops().face_quad(f.tag).clone(), a, b)
}

/// Face stretching relative to the parent-length face rule.
fn parent_stretch(kernel: &ElementKernel, topo: &MeshTopology, f: FaceId) -> Vec<f64> {
    let len = topo.elements()[f.element].face_length(f.tag);
    kernel.metrics().j_face[kernel.ref_ops().face_range(f.tag)]
        .iter()
        .map(|j| j / len)
        .collect()
}

/// Build per-element kernels for a mesh.
pub fn build_element_kernels(topo: &MeshTopology, mode: MetricMode, exec: Execution) -> Result<Vec<ElementKernel>> {
    let mut cache = ReferenceCache::default();
    let refs = topo
        .elements()
        .iter()
        .map(|e| cache.get(&e.spec))
        .collect::<Result<Vec<_>>>()?;
    exec.map(topo.elements(), |i, e| {
        let m = compute_metrics(&refs[i], &e.map(), mode)?;
        ElementKernel::new(refs[i].clone(), m)
    })
    .into_iter()
    .collect()
}

/// L2 projections for every interface pair, rescaled for curved faces.
pub fn build_projections(topo: &MeshTopology, kernels: &[ElementKernel]) -> Result<Vec<InterfaceCoupling>> {
    let mut out = Vec::with_capacity(topo.interfaces().len());
    for pair in topo.interfaces() {
        let (m, n) = (pair.a, pair.b);
        let (km, kn) = (&kernels[m.element], &kernels[n.element]);
        let base = build_l2_projection_pair(&segment(km, topo, m)?, &segment(kn, topo, n)?)?;
        let projection = rescale_projection_curvilinear(&base, &parent_stretch(km, topo, m), &parent_stretch(kn, topo, n))?;
        out.push(InterfaceCoupling { m, n, projection });
    }
    Ok(out)
}

pub fn assemble_global(
    topo: &MeshTopology,
    kernels: Vec<ElementKernel>,
    projections: Vec<InterfaceCoupling>,
    exec: Execution,
) -> Result<GlobalOperator> {
    check_len("element kernels", topo.num_elements(), kernels.len())?;
    for (i, (k, e)) in kernels.iter().zip(topo.elements()).enumerate() {
        let r = k.ref_ops();
        if r.n_xi_nodes() != e.spec.degree_xi + 1 || r.n_eta_nodes() != e.spec.degree_eta + 1 {
            return Err(Error::Assembly(format!("element {i}: kernel size does not match mesh degrees")));
        }
    }

    let faces = topo.interior_faces();
    let index: HashMap<FaceId, usize> = faces.iter().enumerate().map(|(i, f)| (*f, i)).collect();
    let mut element_faces = vec![[None; 4]; topo.num_elements()];
    let mut masks = vec![[false; 4]; topo.num_elements()];
    let mut interior: Vec<InteriorFace> = faces
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            element_faces[f.element][f.tag.index()] = Some(i);
            masks[f.element][f.tag.index()] = true;
            let k = &kernels[f.element];
            let range = k.ref_ops().face_range(f.tag);
            InteriorFace {
                face: f,
                p: k.p_face()[range.clone()].to_vec(),
                n_x: k.n_x()[range.clone()].to_vec(),
                n_y: k.n_y()[range].to_vec(),
                couplings: Vec::new(),
            }
        })
        .collect();

    for c in projections {
        let (Some(&mi), Some(&ni)) = (index.get(&c.m), index.get(&c.n)) else {
            return Err(Error::Assembly(format!("projection {} <- {} refers to a non-interior face", c.m, c.n)));
        };
        let (fm, fn_) = (&interior[mi], &interior[ni]);
        let pr = &c.projection;
        if pr.i_nm.nrows() != fm.p.len() || pr.i_nm.ncols() != fn_.p.len() {
            return Err(Error::Assembly(format!("projection {} <- {} has wrong shape", c.m, c.n)));
        }
        interior[mi].couplings.push(Coupling {
            neighbor: ni,
            i_nm: pr.i_nm.clone(),
        });
    }

    if let Some(f) = interior.iter().find(|f| f.couplings.is_empty()) {
        return Err(Error::Assembly(format!("interior face {} is not covered by any projection", f.face)));
    }
    for f in &mut interior {
        f.couplings.sort_by_key(|c| c.neighbor);
    }
    // each pair must be IPP with respect to the physical face quadratures used in N*
    for (mi, f) in interior.iter().enumerate() {
        for c in &f.couplings {
            let g = &interior[c.neighbor];
            let Some(back) = g.couplings.iter().find(|b| b.neighbor == mi) else {
                return Err(Error::Assembly(format!("no projection {} <- {} for pair {} <- {}", g.face, f.face, f.face, g.face)));
            };
            let scale = f.p.iter().chain(&g.p).fold(0.0f64, |a, b| a.max(b.abs()));
            let residual = crate::coupling::ipp_residual(&c.i_nm, &back.i_nm, &f.p, &g.p);
            if !(residual <= IPP_TOL * scale.max(1.0)) {
                return Err(Error::IppViolation { m: f.face, n: g.face, residual });
            }
        }
    }

    let mut exterior = Vec::with_capacity(topo.exterior().len());
    for &f in topo.exterior() {
        let k = &kernels[f.element];
        let range = k.ref_ops().face_range(f.tag);
        exterior.push(ExteriorFace {
            face: f,
            p: k.p_face()[range.clone()].to_vec(),
            n_x: k.n_x()[range.clone()].to_vec(),
            n_y: k.n_y()[range.clone()].to_vec(),
            x: k.metrics().face_x[range.clone()].to_vec(),
            y: k.metrics().face_y[range].to_vec(),
        });
    }

    let offsets = prefix(kernels.iter().map(|k| k.num_volume()));
    let interior_offsets = prefix(interior.iter().map(|f| f.p.len()));
    let exterior_offsets = prefix(exterior.iter().map(|f| f.p.len()));
    let p = kernels.iter().flat_map(|k| k.p_phys().iter().copied()).collect();
    Ok(GlobalOperator {
        kernels,
        offsets,
        masks,
        interior,
        interior_offsets,
        element_faces,
        exterior,
        exterior_offsets,
        p,
        exec,
    })
}

fn prefix(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v = vec![0];
    for n in it {
        v.push(v.last().unwrap() + n);
    }
    v
}

impl GlobalOperator {
    pub fn build(topo: &MeshTopology, mode: MetricMode, exec: Execution) -> Result<GlobalOperator> {
        let kernels = build_element_kernels(topo, mode, exec)?;
        let projections = build_projections(topo, &kernels)?;
        assemble_global(topo, kernels, projections, exec)
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn num_elements(&self) -> usize {
        self.kernels.len()
    }

    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_interior_face_nodes(&self) -> usize {
        *self.interior_offsets.last().unwrap()
    }

    pub fn num_exterior_face_nodes(&self) -> usize {
        *self.exterior_offsets.last().unwrap()
    }

    pub fn kernels(&self) -> &[ElementKernel] {
        &self.kernels
    }

    pub fn element_range(&self, e: usize) -> std::ops::Range<usize> {
        self.offsets[e]..self.offsets[e + 1]
    }

    /// Diagonal of the global norm.
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn interior_faces(&self) -> impl Iterator<Item = FaceId> + '_ {
        self.interior.iter().map(|f| f.face)
    }

    pub fn exterior_faces(&self) -> impl Iterator<Item = FaceId> + '_ {
        self.exterior.iter().map(|f| f.face)
    }

    /// Global nodal coordinates.
    pub fn coordinates(&self) -> (Vec<f64>, Vec<f64>) {
        let x = self.kernels.iter().flat_map(|k| k.metrics().x.iter().copied()).collect();
        let y = self.kernels.iter().flat_map(|k| k.metrics().y.iter().copied()).collect();
        (x, y)
    }

    /// Exterior face node coordinates (exact map values).
    pub fn exterior_coordinates(&self) -> (Vec<f64>, Vec<f64>) {
        let x = self.exterior.iter().flat_map(|f| f.x.iter().copied()).collect();
        let y = self.exterior.iter().flat_map(|f| f.y.iter().copied()).collect();
        (x, y)
    }

    /// Exterior face weights `P^e` and normal component along `(a, b)`.
    pub fn exterior_weights_normals(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.exterior.iter().flat_map(|f| f.p.iter().copied()).collect();
        let n = self
            .exterior
            .iter()
            .flat_map(|f| f.n_x.iter().zip(&f.n_y).map(move |(x, y)| a * x + b * y))
            .collect();
        (p, n)
    }

    /// `E^e u`.
    pub fn exterior_trace(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("exterior trace", self.num_nodes(), u.len())?;
        let mut out = vec![0.0; self.num_exterior_face_nodes()];
        for (i, f) in self.exterior.iter().enumerate() {
            let k = &self.kernels[f.face.element];
            let ue = &u[self.element_range(f.face.element)];
            k.ref_ops().restrict(f.face.tag, ue, &mut out[self.exterior_offsets[i]..self.exterior_offsets[i + 1]]);
        }
        Ok(out)
    }

    /// `out += (E^e)^T v`.
    pub fn exterior_lift_add(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("exterior lift", self.num_exterior_face_nodes(), v.len())?;
        check_len("exterior lift output", self.num_nodes(), out.len())?;
        for (i, f) in self.exterior.iter().enumerate() {
            let k = &self.kernels[f.face.element];
            let range = self.element_range(f.face.element);
            k.ref_ops()
                .lift_add(f.face.tag, &v[self.exterior_offsets[i]..self.exterior_offsets[i + 1]], &mut out[range]);
        }
        Ok(())
    }

    fn interior_traces(&self, u: &[f64]) -> Vec<f64> {
        let mut traces = vec![0.0; self.num_interior_face_nodes()];
        let lens: Vec<usize> = self.interior.iter().map(|f| f.p.len()).collect();
        let mut chunks = split_by_lengths(&mut traces, &lens);
        self.exec.for_each_mut(&mut chunks, |i, chunk| {
            let f = self.interior[i].face;
            self.kernels[f.element]
                .ref_ops()
                .restrict(f.tag, &u[self.element_range(f.element)], chunk);
        });
        traces
    }

    /// `½ P^i N* v` per interior face node.
    fn coupling_values(&self, a: f64, b: f64, traces: &[f64], ops: &AtomicU64) -> Vec<f64> {
        let mut w = vec![0.0; traces.len()];
        let lens: Vec<usize> = self.interior.iter().map(|f| f.p.len()).collect();
        let mut chunks = split_by_lengths(&mut w, &lens);
        let off = &self.interior_offsets;
        self.exec.for_each_mut(&mut chunks, |i, chunk| {
            let f = &self.interior[i];
            let len = chunk.len();
            let mut sum = vec![0.0; len];
            let mut sum_n = vec![0.0; len];
            let mut count = 0u64;
            for c in &f.couplings {
                let g = &self.interior[c.neighbor];
                let v = &traces[off[c.neighbor]..off[c.neighbor + 1]];
                for (col, &vj) in v.iter().enumerate() {
                    let nvj = (a * g.n_x[col] + b * g.n_y[col]) * vj;
                    for ((s, sn), iv) in sum.iter_mut().zip(sum_n.iter_mut()).zip(c.i_nm.column(col).iter()) {
                        *s += iv * vj;
                        *sn += iv * nvj;
                    }
                }
                count += 2 * (len * v.len()) as u64;
            }
            for k in 0..len {
                let nm = a * f.n_x[k] + b * f.n_y[k];
                chunk[k] = 0.25 * f.p[k] * (nm * sum[k] - sum_n[k]);
            }
            ops.fetch_add(count + 3 * len as u64, Ordering::Relaxed);
        });
        w
    }

    /// `out = (a Q_x + b Q_y) u`.
    pub fn apply_q_into(&self, a: f64, b: f64, u: &[f64], out: &mut [f64]) -> Result<ApplyCounters> {
        check_len("global apply input", self.num_nodes(), u.len())?;
        check_len("global apply output", self.num_nodes(), out.len())?;
        let element_ops = AtomicU64::new(0);
        let coupling_ops = AtomicU64::new(0);
        let traces = self.interior_traces(u);
        let w = self.coupling_values(a, b, &traces, &coupling_ops);

        let lens: Vec<usize> = self.kernels.iter().map(|k| k.num_volume()).collect();
        let mut chunks = split_by_lengths(out, &lens);
        self.exec.for_each_mut(&mut chunks, |e, chunk| {
            chunk.fill(0.0);
            let k = &self.kernels[e];
            let ops = k.apply_add(a, b, &u[self.element_range(e)], self.masks[e], chunk);
            element_ops.fetch_add(ops, Ordering::Relaxed);
            for tag in FaceTag::ALL {
                if let Some(fi) = self.element_faces[e][tag.index()] {
                    k.ref_ops()
                        .lift_add(tag, &w[self.interior_offsets[fi]..self.interior_offsets[fi + 1]], chunk);
                }
            }
        });
        // restriction of the traces and lifting of the coupled values
        let lift: u64 = self
            .interior
            .iter()
            .map(|f| {
                let r = self.kernels[f.face.element].ref_ops();
                2 * (r.projection_stencil(f.face.tag) * f.p.len()) as u64
            })
            .sum();
        Ok(ApplyCounters {
            element_ops: element_ops.into_inner(),
            coupling_ops: coupling_ops.into_inner() + lift,
        })
    }

    pub fn apply_q(&self, dir: Direction, u: &[f64]) -> Result<Vec<f64>> {
        let (a, b) = dir.vector();
        let mut out = vec![0.0; self.num_nodes()];
        self.apply_q_into(a, b, u, &mut out)?;
        Ok(out)
    }

    /// `out = P^{-1} (a Q_x + b Q_y) u`.
    pub fn apply_d_into(&self, a: f64, b: f64, u: &[f64], out: &mut [f64]) -> Result<ApplyCounters> {
        let c = self.apply_q_into(a, b, u, out)?;
        for (o, p) in out.iter_mut().zip(&self.p) {
            *o /= p;
        }
        Ok(c)
    }

    /// Global derivative `P^{-1} Q_dir u`.
    pub fn apply_global(&self, dir: Direction, u: &[f64]) -> Result<Vec<f64>> {
        let (a, b) = dir.vector();
        let mut out = vec![0.0; self.num_nodes()];
        self.apply_d_into(a, b, u, &mut out)?;
        Ok(out)
    }

    /// `2 (u, D u)_P = 2 u^T Q u` along `(a, b)`.
    pub fn energy_rate(&self, a: f64, b: f64, u: &[f64]) -> Result<f64> {
        let mut q = vec![0.0; u.len()];
        self.apply_q_into(a, b, u, &mut q)?;
        Ok(2.0 * dot(u, &q))
    }

    pub fn global_energy_rate(&self, dir: Direction, u: &[f64]) -> Result<f64> {
        let (a, b) = dir.vector();
        self.energy_rate(a, b, u)
    }

    /// `(E^e u)^T P^e N^e (E^e u)` along `(a, b)`.
    pub fn boundary_term(&self, a: f64, b: f64, u: &[f64]) -> Result<f64> {
        let t = self.exterior_trace(u)?;
        let (p, n) = self.exterior_weights_normals(a, b);
        Ok(t.iter().zip(p.iter().zip(&n)).map(|(v, (p, n))| p * n * v * v).sum())
    }

    /// Interface part of the energy rate, `2 v^T ½ P^i N* v` with `v = E^i u`.
    /// Vanishes up to round-off by skew-symmetry.
    pub fn interface_energy(&self, a: f64, b: f64, u: &[f64]) -> Result<f64> {
        check_len("interface energy", self.num_nodes(), u.len())?;
        let traces = self.interior_traces(u);
        let w = self.coupling_values(a, b, &traces, &AtomicU64::new(0));
        Ok(2.0 * dot(&traces, &w))
    }

    /// Scale for relative interface-energy comparisons: `Σ |v_k| |w_k|`.
    pub fn interface_energy_scale(&self, a: f64, b: f64, u: &[f64]) -> Result<f64> {
        check_len("interface energy", self.num_nodes(), u.len())?;
        let traces = self.interior_traces(u);
        let mut s = 0.0;
        for (i, f) in self.interior.iter().enumerate() {
            let v = &traces[self.interior_offsets[i]..self.interior_offsets[i + 1]];
            for (k, vk) in v.iter().enumerate() {
                let n = (a * f.n_x[k] + b * f.n_y[k]).abs();
                s += f.p[k] * n * vk * vk;
            }
        }
        Ok(s)
    }

    /// Largest `|S_rc + S_cr|` over the coupling entries of `S = P^i N*`,
    /// and the largest `|S_rc|` as scale.
    pub fn skew_residual(&self, a: f64, b: f64) -> (f64, f64) {
        let entry = |f: &InteriorFace, g: &InteriorFace, i: &DMatrix<f64>, r: usize, c: usize| {
            let nr = a * f.n_x[r] + b * f.n_y[r];
            let nc = a * g.n_x[c] + b * g.n_y[c];
            0.5 * f.p[r] * (nr - nc) * i[(r, c)]
        };
        let (mut res, mut scale) = (0.0f64, 0.0f64);
        for (fi, f) in self.interior.iter().enumerate() {
            for c in &f.couplings {
                let g = &self.interior[c.neighbor];
                let Some(back) = g.couplings.iter().find(|b| b.neighbor == fi) else {
                    return (f64::INFINITY, scale);
                };
                for r in 0..f.p.len() {
                    for col in 0..g.p.len() {
                        let s = entry(f, g, &c.i_nm, r, col);
                        let t = entry(g, f, &back.i_nm, col, r);
                        res = res.max((s + t).abs());
                        scale = scale.max(s.abs());
                    }
                }
            }
        }
        (res, scale)
    }

    /// Largest IPP residual over all ordered coupling pairs.
    pub fn ipp_residual(&self) -> f64 {
        let mut res = 0.0f64;
        for (fi, f) in self.interior.iter().enumerate() {
            for c in &f.couplings {
                let g = &self.interior[c.neighbor];
                res = match g.couplings.iter().find(|b| b.neighbor == fi) {
                    Some(back) => res.max(crate::coupling::ipp_residual(&c.i_nm, &back.i_nm, &f.p, &g.p)),
                    None => f64::INFINITY,
                };
            }
        }
        res
    }

    /// `(a Q̄_x + b Q̄_y) u - ½ (E^i)^T P^i (N^i - N*) E^i u` with the full element
    /// blocks `Q̄` supplied per element as `[Q_x, Q_y]`.
    pub fn apply_unsplit(&self, blocks: &[[DMatrix<f64>; 2]], a: f64, b: f64, u: &[f64]) -> Result<Vec<f64>> {
        check_len("unsplit blocks", self.num_elements(), blocks.len())?;
        check_len("unsplit apply", self.num_nodes(), u.len())?;
        let traces = self.interior_traces(u);
        let w = self.coupling_values(a, b, &traces, &AtomicU64::new(0));
        let mut out = vec![0.0; u.len()];
        for (e, blk) in blocks.iter().enumerate() {
            let r = self.element_range(e);
            let ue = nalgebra::DVectorView::from_slice(&u[r.clone()], r.len());
            let v = &blk[0] * ue * a + &blk[1] * ue * b;
            out[r].copy_from_slice(v.as_slice());
        }
        for (i, f) in self.interior.iter().enumerate() {
            let (lo, hi) = (self.interior_offsets[i], self.interior_offsets[i + 1]);
            let z: Vec<f64> = (lo..hi)
                .map(|k| {
                    let j = k - lo;
                    let n = a * f.n_x[j] + b * f.n_y[j];
                    -0.5 * (f.p[j] * n * traces[k] - 2.0 * w[k])
                })
                .collect();
            let range = self.element_range(f.face.element);
            self.kernels[f.face.element].ref_ops().lift_add(f.face.tag, &z, &mut out[range]);
        }
        Ok(out)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense assembly of the global operator; test oracle only.
pub mod dense {
    use super::*;
    use crate::curvilinear::build_physical_ops;

    /// Dense interior and exterior apparatus for one mesh.
    pub struct DenseGlobal {
        pub p: Vec<f64>,
        /// Full element blocks `Q̄` for x and y.
        pub q_bar: [DMatrix<f64>; 2],
        /// Block-diagonal part from the factored kernels.
        pub q_barbar: [DMatrix<f64>; 2],
        pub e_i: DMatrix<f64>,
        pub p_i: Vec<f64>,
        pub n_i: [Vec<f64>; 2],
        pub i_i: DMatrix<f64>,
        pub e_e: DMatrix<f64>,
        pub p_e: Vec<f64>,
        pub n_e: [Vec<f64>; 2],
    }

    fn idx(dir: Direction) -> usize {
        match dir {
            Direction::X => 0,
            Direction::Y => 1,
        }
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    impl DenseGlobal {
        pub fn build(op: &GlobalOperator) -> Result<DenseGlobal> {
            let nv = op.num_nodes();
            let ni = op.num_interior_face_nodes();
            let ne = op.num_exterior_face_nodes();
            let mut q_bar = [DMatrix::zeros(nv, nv), DMatrix::zeros(nv, nv)];
            let mut q_barbar = [DMatrix::zeros(nv, nv), DMatrix::zeros(nv, nv)];
            for (e, k) in op.kernels.iter().enumerate() {
                let r = op.element_range(e);
                let phys = build_physical_ops(k.ref_ops_arc().clone(), k.metrics().clone())?;
                for dir in [Direction::X, Direction::Y] {
                    q_bar[idx(dir)].view_mut((r.start, r.start), (r.len(), r.len())).copy_from(phys.q(dir));
                    let (a, b) = dir.vector();
                    let mut unit = vec![0.0; r.len()];
                    for c in 0..r.len() {
                        unit.fill(0.0);
                        unit[c] = 1.0;
                        let mut col = vec![0.0; r.len()];
                        k.apply_add(a, b, &unit, op.masks[e], &mut col);
                        for (row, v) in col.iter().enumerate() {
                            q_barbar[idx(dir)][(r.start + row, r.start + c)] = *v;
                        }
                    }
                }
            }

            let mut e_i = DMatrix::zeros(ni, nv);
            let mut p_i = Vec::with_capacity(ni);
            let mut n_i = [Vec::with_capacity(ni), Vec::with_capacity(ni)];
            let mut i_i = DMatrix::zeros(ni, ni);
            for (fi, f) in op.interior.iter().enumerate() {
                let k = &op.kernels[f.face.element];
                let rows = op.interior_offsets[fi];
                let cols = op.element_range(f.face.element).start;
                let fr = k.ref_ops().face_range(f.face.tag);
                let block = k.ref_ops().e_faces().rows(fr.start, fr.len());
                e_i.view_mut((rows, cols), (fr.len(), k.num_volume())).copy_from(&block);
                p_i.extend_from_slice(&f.p);
                n_i[0].extend_from_slice(&f.n_x);
                n_i[1].extend_from_slice(&f.n_y);
                for c in &f.couplings {
                    let nc = op.interior_offsets[c.neighbor];
                    let mut v = i_i.view_mut((rows, nc), c.i_nm.shape());
                    v += &c.i_nm;
                }
            }

            let mut e_e = DMatrix::zeros(ne, nv);
            let mut p_e = Vec::with_capacity(ne);
            let mut n_e = [Vec::with_capacity(ne), Vec::with_capacity(ne)];
            for (fi, f) in op.exterior.iter().enumerate() {
                let k = &op.kernels[f.face.element];
                let rows = op.exterior_offsets[fi];
                let cols = op.element_range(f.face.element).start;
                let fr = k.ref_ops().face_range(f.face.tag);
                let block = k.ref_ops().e_faces().rows(fr.start, fr.len());
                e_e.view_mut((rows, cols), (fr.len(), k.num_volume())).copy_from(&block);
                p_e.extend_from_slice(&f.p);
                n_e[0].extend_from_slice(&f.n_x);
                n_e[1].extend_from_slice(&f.n_y);
            }

            Ok(DenseGlobal {
                p: op.p.clone(),
                q_bar,
                q_barbar,
                e_i,
                p_i,
                n_i,
                i_i,
                e_e,
                p_e,
                n_e,
            })
        }

        /// `N* = ½ (N^i I^i - I^i N^i)`.
        pub fn n_star(&self, dir: Direction) -> DMatrix<f64> {
            let n = diag(&self.n_i[idx(dir)]);
            (&n * &self.i_i - &self.i_i * &n) * 0.5
        }

        /// `Q̄ - ½ (E^i)^T P^i (N^i - N*) E^i`.
        pub fn q_ansatz(&self, dir: Direction) -> DMatrix<f64> {
            let inner = diag(&self.p_i) * (diag(&self.n_i[idx(dir)]) - self.n_star(dir));
            &self.q_bar[idx(dir)] - self.e_i.transpose() * inner * &self.e_i * 0.5
        }

        /// `Q̿ + ½ (E^i)^T P^i N* E^i`.
        pub fn q_split(&self, dir: Direction) -> DMatrix<f64> {
            let inner = diag(&self.p_i) * self.n_star(dir);
            &self.q_barbar[idx(dir)] + self.e_i.transpose() * inner * &self.e_i * 0.5
        }

        /// `max |P^i N* + (P^i N*)^T|`.
        pub fn skew_residual(&self, dir: Direction) -> f64 {
            let m = diag(&self.p_i) * self.n_star(dir);
            (&m + m.transpose()).amax()
        }

        /// `max |Q + Q^T - (E^e)^T P^e N^e E^e|`.
        pub fn global_sbp_residual(&self, dir: Direction) -> f64 {
            let q = self.q_ansatz(dir);
            let w: Vec<f64> = self.p_e.iter().zip(&self.n_e[idx(dir)]).map(|(p, n)| p * n).collect();
            crate::tensor::sbp_residual(&q, &self.e_e, &w)
        }

        pub fn split_residual(&self, dir: Direction) -> f64 {
            (self.q_ansatz(dir) - self.q_split(dir)).amax()
        }
    }
}
