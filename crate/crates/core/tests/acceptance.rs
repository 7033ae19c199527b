//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs with its own `main` so the lines are printed even when every check
//! passes. Set `GSBP_FULL_ADVECTION=1` to extend the advection sweep to
//! level 16.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use gsbp_core::advection::AdvectionResult;
use gsbp_core::audit::{audit_mesh, AuditOptions};
use gsbp_core::coupling::{build_l2_projection_pair, interface_exact_degree, predicted_accuracy, FaceSegment};
use gsbp_core::curvilinear::{build_physical_ops, compute_metrics, AffineChart, Warped};
use gsbp_core::experiments::{AccuracyConfig, AdvectionConfig, ConvergenceTable};
use gsbp_core::global::dense::DenseGlobal;
use gsbp_core::mesh::{basket_weave_base, basket_weave_mesh, conforming_pair};
use gsbp_core::sbp::build_sbp_1d;
use gsbp_core::tensor::{build_reference_ops, ReferenceElementOps};
use gsbp_core::varcoef::{build_varcoef_q, SbpDirection};
use gsbp_core::{Direction, ElementSpec, Execution, GlobalOperator, MapKind, MetricMode, NodeFamily};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Sheet {
    checks: Vec<Check>,
}

impl Sheet {
    fn record(&mut self, name: &str, pass: bool, detail: String) -> bool {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.checks.push(Check {
            name: name.to_string(),
            pass,
            detail,
        });
        pass
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// `max |Q + Q^T - E^T diag(w) E|`.
fn sbp_defect(q: &DMatrix<f64>, e: &DMatrix<f64>, w: &[f64]) -> f64 {
    (q + q.transpose() - e.transpose() * diag(w) * e).amax()
}

fn reference(family: NodeFamily, degree: usize) -> Arc<ReferenceElementOps> {
    let s = build_sbp_1d(&family.rule(degree + 1).unwrap());
    Arc::new(build_reference_ops(&s, &s))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn sbp_1d(sheet: &mut Sheet) -> bool {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for family in NodeFamily::ALL {
        for degree in 1..=8 {
            let op = build_sbp_1d(&family.rule(degree + 1).unwrap());
            let b = op.e_right() * op.e_right().transpose() - op.e_left() * op.e_left().transpose();
            worst = worst.max((op.q() + op.q().transpose() - b).amax());
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    sheet.record(
        "identity 1: 1D SBP, both families, N=1..8",
        worst <= 1e-13 && dt < 1.0,
        format!("max residual {worst:.2e} (tol 1e-13), {dt:.2}s"),
    )
}

fn varcoef_residual(base: &SbpDirection<'_>, phi: &[f64], psi: &[f64]) -> f64 {
    let a = build_varcoef_q(base, phi, psi).unwrap();
    let b = build_varcoef_q(base, psi, phi).unwrap();
    let pn: Vec<f64> = base.p_face.iter().zip(base.normal).map(|(p, n)| p * n).collect();
    let psi_e = diag(a.psi_surface()) * base.e;
    let phi_e = diag(a.phi_surface()) * base.e;
    (a.q() + b.q().transpose() - psi_e.transpose() * diag(&pn) * phi_e).amax()
}

fn varcoef(sheet: &mut Sheet) -> bool {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut configs = 0;
    for family in NodeFamily::ALL {
        for degree in 1..=6 {
            let r = reference(family, degree);
            for base in [r.direction_xi(), r.direction_eta()] {
                configs += 1;
                for _ in 0..100 {
                    let phi = random_vec(&mut rng, base.num_volume(), -2.0, 2.0);
                    let psi = random_vec(&mut rng, base.num_volume(), -2.0, 2.0);
                    worst = worst.max(varcoef_residual(&base, &phi, &psi));
                }
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    sheet.record(
        "identity 2: variable-coefficient SBP, 100 random coefficient pairs per configuration",
        worst <= 1e-12 && dt < 5.0,
        format!("{configs} configurations, max residual {worst:.2e} (tol 1e-12), {dt:.2}s"),
    )
}

fn random_warp(rng: &mut ChaCha8Rng) -> Warped {
    let x0 = rng.gen_range(-1.0..1.0);
    let y0 = rng.gen_range(-1.0..1.0);
    Warped {
        chart: AffineChart::new(x0, x0 + rng.gen_range(0.2..2.0), y0, y0 + rng.gen_range(0.2..2.0)),
        a: rng.gen_range(-0.05..0.05),
        b: rng.gen_range(-0.05..0.05),
        c: rng.gen_range(-3.0..3.0),
        d: rng.gen_range(-3.0..3.0),
    }
}

fn physical_sbp(sheet: &mut Sheet) -> (bool, bool) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut sbp, mut cons) = (0.0f64, 0.0f64);
    for k in 0..20 {
        let map = random_warp(&mut rng);
        let family = NodeFamily::ALL[k % 2];
        let degree = 2 + k % 5;
        let r = reference(family, degree);
        let m = compute_metrics(&r, &map, MetricMode::Discrete).unwrap();
        let ops = build_physical_ops(r.clone(), m).unwrap();
        let ones = DVector::from_element(r.num_volume(), 1.0);
        for dir in [Direction::X, Direction::Y] {
            let w: Vec<f64> = ops.p_face().iter().zip(ops.normal(dir)).map(|(p, n)| p * n).collect();
            sbp = sbp.max(sbp_defect(ops.q(dir), r.e_faces(), &w));
            cons = cons.max((ops.q(dir) * &ones).amax());
        }
    }
    // the assembled operator on the Cartesian mesh
    for family in NodeFamily::ALL {
        let m = basket_weave_mesh(1, ElementSpec::uniform(family, 4, MapKind::Affine)).unwrap();
        let op = GlobalOperator::build(&m, MetricMode::Discrete, Execution::Sequential).unwrap();
        let ones = vec![1.0; op.num_nodes()];
        for dir in [Direction::X, Direction::Y] {
            let q1 = op.apply_q(dir, &ones).unwrap();
            cons = cons.max(q1.iter().fold(0.0, |a, v| a.max(v.abs())));
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    let a = sheet.record(
        "identity 3: physical SBP on 20 random smooth maps",
        sbp <= 1e-11 && dt < 10.0,
        format!("max residual {sbp:.2e} (tol 1e-11), {dt:.2}s"),
    );
    let b = sheet.record(
        "identity 4: consistency, discrete metrics",
        cons <= 1e-11,
        format!("max |Q 1| {cons:.2e} (tol 1e-11)"),
    );
    (a, b)
}

fn seg(family: NodeFamily, degree: usize, a: f64, b: f64) -> FaceSegment {
    FaceSegment::new(family.rule(degree + 1).unwrap(), a, b).unwrap()
}

fn tiling(family: NodeFamily, degree: usize, parts: usize) -> Vec<FaceSegment> {
    let h = 1.0 / parts as f64;
    (0..parts).map(|k| seg(family, degree, k as f64 * h, (k + 1) as f64 * h)).collect()
}

fn ipp_and_accuracy(sheet: &mut Sheet) -> bool {
    let mut ipp = 0.0f64;
    let mut configs = 0;
    let mut mismatches = Vec::new();
    for family in NodeFamily::ALL {
        for dm in 2..=6 {
            for dn in [dm - 1, dm, dm + 1] {
                for parts in [1usize, 2] {
                    if parts == 1 && dm == dn && family == NodeFamily::Legendre {
                        // identical Legendre faces project by the identity
                        continue;
                    }
                    let left = tiling(family, dm, 1);
                    let right = tiling(family, dn, parts);
                    for n in &right {
                        ipp = ipp.max(build_l2_projection_pair(&left[0], n).unwrap().ipp_residual());
                        ipp = ipp.max(build_l2_projection_pair(n, &left[0]).unwrap().ipp_residual());
                    }
                    let measured = interface_exact_degree(&left, &right, 12, 1e-10).unwrap();
                    let q = |d: usize| family.rule(d + 1).unwrap().degree();
                    let predicted = predicted_accuracy(dm, dn, q(dm)).min(predicted_accuracy(dn, dm, q(dn)));
                    configs += 1;
                    if measured != Some(predicted) {
                        mismatches.push(format!("{family} {dm}/{dn} 1:{parts} got {measured:?} want {predicted}"));
                    }
                }
            }
        }
    }
    sheet.record(
        "identity 5: interface projections, IPP and accuracy law",
        ipp <= 1e-13 && mismatches.is_empty() && configs >= 20,
        format!(
            "max IPP residual {ipp:.2e} (tol 1e-13), accuracy law matched on {}/{configs} configurations{}",
            configs - mismatches.len(),
            if mismatches.is_empty() { String::new() } else { format!(" [{}]", mismatches.join("; ")) }
        ),
    )
}

fn global_identities(sheet: &mut Sheet) -> bool {
    let t0 = Instant::now();
    let (mut skew, mut sbp) = (0.0f64, 0.0f64);
    let mut failed = Vec::new();
    for family in NodeFamily::ALL {
        for degree in 2..=5 {
            let m = basket_weave_mesh(1, ElementSpec::uniform(family, degree, MapKind::Sine)).unwrap();
            let opts = AuditOptions {
                dense_limit: 0,
                exec: Execution::Sequential,
            };
            let r = audit_mesh("level 1", &m, opts).unwrap();
            for tag in ["x", "y"] {
                skew = skew.max(r.entry(&format!("skew_{tag}")).unwrap().residual);
                sbp = sbp.max(r.entry(&format!("global_sbp_{tag}")).unwrap().residual);
            }
            if !r.passed() {
                failed.push(format!("{family} N={degree}"));
            }
        }
    }
    sheet.record(
        "identity 6: global skew-symmetry and SBP identity, level-1 basket-weave mesh, N=2..5",
        skew <= 1e-12 && sbp <= 1e-11 && failed.is_empty(),
        format!(
            "max skew {skew:.2e} (tol 1e-12), max SBP {sbp:.2e} (tol 1e-11), full audit failures {failed:?}, {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn matrix_free(sheet: &mut Sheet) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for family in NodeFamily::ALL {
        for map in [MapKind::Affine, MapKind::Sine] {
            let mut meshes = vec![];
            for degree in 2..=5 {
                let s = ElementSpec::uniform(family, degree, map);
                meshes.push(conforming_pair(s, s).unwrap());
                meshes.push(basket_weave_base(s).unwrap());
            }
            meshes.push(basket_weave_mesh(1, ElementSpec::uniform(family, 3, map)).unwrap());
            for m in meshes {
                let op = GlobalOperator::build(&m, MetricMode::Discrete, Execution::Sequential).unwrap();
                let dense = DenseGlobal::build(&op).unwrap();
                for dir in [Direction::X, Direction::Y] {
                    let q = dense.q_ansatz(dir);
                    for _ in 0..3 {
                        let u = random_vec(&mut rng, op.num_nodes(), -1.0, 1.0);
                        let mv = op.apply_q(dir, &u).unwrap();
                        let dv = &q * DVector::from_column_slice(&u);
                        worst = worst.max(mv.iter().zip(dv.iter()).fold(0.0, |a, (p, q)| a.max((p - q).abs())));
                        cases += 1;
                    }
                }
            }
        }
    }
    sheet.record(
        "identity 7: matrix-free apply equals dense assembly",
        worst <= 1e-12,
        format!("{cases} random vectors, max difference {worst:.2e} (tol 1e-12)"),
    )
}

const ACCURACY_LEVELS: [usize; 5] = [1, 2, 4, 8, 16];

fn operator_accuracy(sheet: &mut Sheet) {
    let t0 = Instant::now();
    let mut all = true;
    let mut lines = Vec::new();
    for (family, expected) in [(NodeFamily::Legendre, [3.0, 4.0, 5.0]), (NodeFamily::Lobatto, [2.0, 3.0, 4.0])] {
        for (degree, want) in (3..=5).zip(expected) {
            let cfg = AccuracyConfig {
                exec: Execution::Sequential,
                ..AccuracyConfig::new(family, degree, ACCURACY_LEVELS.to_vec())
            };
            let errors: Vec<f64> = ACCURACY_LEVELS.iter().map(|&l| cfg.level(l).unwrap().max()).collect();
            let table = ConvergenceTable::new(cfg.title(), &ACCURACY_LEVELS, &errors).unwrap();
            let rate = table.final_rate().unwrap();
            let ok = (rate - want).abs() <= 0.15;
            all &= ok;
            lines.push(format!(
                "{family} N={degree}: errors {} final rate {rate:.2} (expected {want:.2} ± 0.15){}",
                errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" "),
                if ok { "" } else { " MISS" }
            ));
        }
    }
    for l in &lines {
        println!("    {l}");
    }
    sheet.record(
        "operator-accuracy convergence, levels 1..16",
        all,
        format!("{} configurations, {:.1}s", lines.len(), t0.elapsed().as_secs_f64()),
    );
}

fn advection_levels() -> Vec<usize> {
    match std::env::var("GSBP_FULL_ADVECTION").as_deref() {
        Ok("1") => vec![1, 2, 4, 8, 16],
        _ => vec![1, 2, 4, 8],
    }
}

fn advection(sheet: &mut Sheet) {
    let t0 = Instant::now();
    let levels = advection_levels();
    let mut rates_ok = true;
    let (mut interface, mut excess) = (0.0f64, f64::NEG_INFINITY);
    let mut runs = 0;
    let mut finest = Vec::new();
    let mut lines = Vec::new();
    for degree in 3..=5 {
        for (family, want) in [(NodeFamily::Legendre, [2.74, 4.25, 5.04]), (NodeFamily::Lobatto, [2.47, 3.51, 4.27])] {
            let want = want[degree - 3];
            let cfg = AdvectionConfig {
                exec: Execution::Sequential,
                ..AdvectionConfig::new(family, degree, levels.clone())
            };
            let results: Vec<AdvectionResult> = levels.iter().map(|&l| cfg.level(l).unwrap().1).collect();
            for r in &results {
                interface = interface.max(r.max_interface_energy);
                excess = excess.max(r.max_energy_excess);
                runs += 1;
            }
            let errors: Vec<f64> = results.iter().map(|r| r.max_error).collect();
            let table = ConvergenceTable::new(cfg.title(), &levels, &errors).unwrap();
            let rate = table.average_rate().unwrap();
            let ok = (rate - want).abs() <= 0.5;
            rates_ok &= ok;
            finest.push((family, degree, *errors.last().unwrap()));
            let line = format!(
                "{family} N={degree}: errors {} average rate {rate:.2} (expected {want:.2} ± 0.5){}",
                errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" "),
                if ok { "" } else { " MISS" }
            );
            eprintln!("    {line} [{:.0}s]", t0.elapsed().as_secs_f64());
            lines.push(line);
        }
    }
    let mut ordering_ok = true;
    for degree in 3..=5 {
        let get = |f| finest.iter().find(|(g, d, _)| *g == f && *d == degree).unwrap().2;
        let (lg, lgl) = (get(NodeFamily::Legendre), get(NodeFamily::Lobatto));
        let ok = lg < lgl;
        ordering_ok &= ok;
        lines.push(format!(
            "N={degree} finest level: Legendre {lg:.3e} {} Lobatto {lgl:.3e}",
            if ok { "<" } else { ">=" }
        ));
    }
    for l in &lines {
        println!("    {l}");
    }
    let top = levels.last().unwrap();
    sheet.record(
        &format!("advection convergence, levels 1..{top}"),
        rates_ok && ordering_ok,
        format!("6 configurations, Legendre below Lobatto at level {top}: {ordering_ok}, {:.0}s", t0.elapsed().as_secs_f64()),
    );
    sheet.record(
        "stability: interface energy and boundary bound on every advection run",
        interface <= 1e-10 && excess <= 1e-12,
        format!("{runs} runs, max interface contribution {interface:.2e} (tol 1e-10), max relative excess over bound {excess:.2e}"),
    );
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored; a name
    // filter that matches nothing here skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut sheet = Sheet::default();
    let identities = [
        sbp_1d(&mut sheet),
        varcoef(&mut sheet),
        {
            let (a, b) = physical_sbp(&mut sheet);
            a && b
        },
        ipp_and_accuracy(&mut sheet),
        global_identities(&mut sheet),
        matrix_free(&mut sheet),
    ];
    sheet.record(
        "algebraic identity suite",
        identities.iter().all(|v| *v),
        "items 1..7 above".to_string(),
    );
    operator_accuracy(&mut sheet);
    advection(&mut sheet);

    let failed: Vec<&Check> = sheet.checks.iter().filter(|c| !c.pass).collect();
    println!("acceptance: {} checks, {} failed", sheet.checks.len(), failed.len());
    for c in &failed {
        println!("  failed: {} ({})", c.name, c.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
