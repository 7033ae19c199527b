//! Residual report over the algebraic invariants of an assembled operator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::curvilinear::{build_physical_ops, Direction, MetricMode};
use crate::error::Result;
use crate::exec::Execution;
use crate::experiments::write_text;
use crate::global::{dense::DenseGlobal, GlobalOperator};
use crate::mesh::{MapKind, MeshTopology};

#[derive(Clone, Debug, PartialEq)]
pub struct AuditEntry {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl AuditEntry {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub label: String,
    pub nodes: usize,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(AuditEntry::passed)
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| !e.passed())
    }

    /// One `name residual tolerance status` line per invariant.
    pub fn to_text(&self) -> String {
        let mut s = format!("gsbp-audit 1\nmesh {}\nnodes {}\n", self.label, self.nodes);
        for e in &self.entries {
            let status = if e.passed() { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{} {:.3e} {:.0e} {}", e.name, e.residual, e.tolerance, status);
        }
        let _ = writeln!(s, "result {}", if self.passed() { "pass" } else { "FAIL" });
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditOptions {
    /// Largest node count for which the dense oracle is also run.
    pub dense_limit: usize,
    pub exec: Execution,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            dense_limit: 2000,
            exec: Execution::default(),
        }
    }
}

/// Columns of `a Q_x + b Q_y` as sparse lists, from unit-vector applies.
fn sparse_columns(op: &GlobalOperator, a: f64, b: f64) -> Result<HashMap<(usize, usize), f64>> {
    let n = op.num_nodes();
    let mut unit = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut out = HashMap::new();
    for j in 0..n {
        unit[j] = 1.0;
        op.apply_q_into(a, b, &unit, &mut col)?;
        unit[j] = 0.0;
        for (i, v) in col.iter().enumerate() {
            if *v != 0.0 {
                out.insert((i, j), *v);
            }
        }
    }
    Ok(out)
}

/// `(E^e)^T P^e N^e E^e` along `(a, b)` in sparse form.
fn boundary_matrix(op: &GlobalOperator, a: f64, b: f64) -> Result<HashMap<(usize, usize), f64>> {
    let n = op.num_nodes();
    let (p, nrm) = op.exterior_weights_normals(a, b);
    let mut unit = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut out = HashMap::new();
    for j in 0..n {
        unit[j] = 1.0;
        let t = op.exterior_trace(&unit)?;
        unit[j] = 0.0;
        if t.iter().all(|v| *v == 0.0) {
            continue;
        }
        let w: Vec<f64> = t.iter().zip(p.iter().zip(&nrm)).map(|(t, (p, n))| p * n * t).collect();
        col.fill(0.0);
        op.exterior_lift_add(&w, &mut col)?;
        for (i, v) in col.iter().enumerate() {
            if *v != 0.0 {
                out.insert((i, j), *v);
            }
        }
    }
    Ok(out)
}

/// Entrywise `max |Q + Q^T - B|`.
fn global_sbp_residual(op: &GlobalOperator, dir: Direction) -> Result<f64> {
    let (a, b) = dir.vector();
    let q = sparse_columns(op, a, b)?;
    let bm = boundary_matrix(op, a, b)?;
    let get = |m: &HashMap<(usize, usize), f64>, k| m.get(&k).copied().unwrap_or(0.0);
    let mut res = 0.0f64;
    for &(i, j) in q.keys().chain(bm.keys()) {
        res = res.max((get(&q, (i, j)) + get(&q, (j, i)) - get(&bm, (i, j))).abs());
    }
    Ok(res)
}

fn probe_vector(n: usize, seed: f64) -> Vec<f64> {
    (0..n).map(|k| ((k as f64 + 1.0) * seed).sin() + 0.25 * (k as f64 * 0.61).cos()).collect()
}

fn amax(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Run every invariant check on `topo` with discrete metrics.
pub fn audit_mesh(label: &str, topo: &MeshTopology, options: AuditOptions) -> Result<AuditReport> {
    let op = GlobalOperator::build(topo, MetricMode::Discrete, options.exec)?;
    let mut entries = Vec::new();
    let mut push = |name: &str, residual: f64, tolerance: f64| {
        entries.push(AuditEntry {
            name: name.to_string(),
            residual: if residual.is_nan() { f64::INFINITY } else { residual },
            tolerance,
        })
    };

    let mut blocks = Vec::with_capacity(op.num_elements());
    let (mut sbp, mut cons, mut unit) = ([0.0f64; 2], 0.0f64, 0.0f64);
    for k in op.kernels() {
        let phys = build_physical_ops(k.ref_ops_arc().clone(), k.metrics().clone())?;
        let r = phys.verify();
        sbp[0] = sbp[0].max(r.sbp_x);
        sbp[1] = sbp[1].max(r.sbp_y);
        cons = cons.max(r.consistency_x).max(r.consistency_y);
        unit = unit.max(r.normal_unit);
        blocks.push([phys.q(Direction::X).clone(), phys.q(Direction::Y).clone()]);
    }
    push("element_sbp_x", sbp[0], 1e-11);
    push("element_sbp_y", sbp[1], 1e-11);
    push("element_consistency", cons, 1e-11);
    push("normals_unit", unit, 1e-12);
    push("ipp", op.ipp_residual(), 1e-12);

    let n = op.num_nodes();
    let u = probe_vector(n, 0.7548776662466927);
    for dir in [Direction::X, Direction::Y] {
        let (a, b) = dir.vector();
        let tag = if dir == Direction::X { "x" } else { "y" };
        let (skew, _) = op.skew_residual(a, b);
        push(&format!("skew_{tag}"), skew, 1e-12);
        push(&format!("global_sbp_{tag}"), global_sbp_residual(&op, dir)?, 1e-11);

        let split = op.apply_q(dir, &u)?;
        let unsplit = op.apply_unsplit(&blocks, a, b, &u)?;
        let scale = amax(split.iter().copied()).max(1.0);
        push(&format!("split_{tag}"), amax(split.iter().zip(&unsplit).map(|(s, t)| s - t)) / scale, 1e-12);

        let rate = op.energy_rate(a, b, &u)?;
        let bt = op.boundary_term(a, b, &u)?;
        push(&format!("energy_{tag}"), (rate - bt).abs() / bt.abs().max(1.0), 1e-10);
        let ie = op.interface_energy(a, b, &u)?;
        let ie_scale = op.interface_energy_scale(a, b, &u)?.max(1.0);
        push(&format!("interface_energy_{tag}"), ie.abs() / ie_scale, 1e-12);

        if topo.elements().iter().all(|e| e.spec.map == MapKind::Affine) {
            let d = op.apply_global(dir, &vec![1.0; n])?;
            push(&format!("consistency_{tag}"), amax(d), 1e-11);
        }
    }

    if n <= options.dense_limit {
        let dense = DenseGlobal::build(&op)?;
        for dir in [Direction::X, Direction::Y] {
            let tag = if dir == Direction::X { "x" } else { "y" };
            push(&format!("dense_skew_{tag}"), dense.skew_residual(dir), 1e-12);
            push(&format!("dense_split_{tag}"), dense.split_residual(dir), 1e-12);
            let dv: DVector<f64> = dense.q_ansatz(dir) * DVector::from_column_slice(&u);
            let mv = op.apply_q(dir, &u)?;
            push(&format!("dense_matvec_{tag}"), amax(mv.iter().zip(dv.iter()).map(|(a, b)| a - b)), 1e-12);
        }
    }

    Ok(AuditReport {
        label: label.to_string(),
        nodes: n,
        entries,
    })
}

/// Dense element blocks, exposed for callers that compare against them.
pub fn element_blocks(op: &GlobalOperator) -> Result<Vec<[DMatrix<f64>; 2]>> {
    op.kernels()
        .iter()
        .map(|k| {
            let phys = build_physical_ops(k.ref_ops_arc().clone(), k.metrics().clone())?;
            Ok([phys.q(Direction::X).clone(), phys.q(Direction::Y).clone()])
        })
        .collect()
}
