use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gsbp_core::advection::{AdvectionProblem, ExactSolution};
use gsbp_core::mesh::basket_weave_mesh;
use gsbp_core::{ElementSpec, Execution, GlobalOperator, MapKind, MetricMode, NodeFamily};

fn operator(level: usize, exec: Execution) -> GlobalOperator {
    let spec = ElementSpec::uniform(NodeFamily::Legendre, 4, MapKind::Sine);
    let mesh = basket_weave_mesh(level, spec).unwrap();
    GlobalOperator::build(&mesh, MetricMode::Discrete, exec).unwrap()
}

fn apply_q(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply_q");
    for level in [1, 2, 4] {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let op = operator(level, exec);
            let u: Vec<f64> = (0..op.num_nodes()).map(|k| (k as f64 * 0.37).sin()).collect();
            let mut out = vec![0.0; u.len()];
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), level), &level, |b, _| {
                b.iter(|| op.apply_q_into(0.5, 0.5, black_box(&u), &mut out).unwrap())
            });
        }
    }
    group.finish();
}

fn advection_rhs(c: &mut Criterion) {
    let mut group = c.benchmark_group("advection_rhs");
    for exec in [Execution::Sequential, Execution::Parallel] {
        let pb = AdvectionProblem::new(operator(2, exec), ExactSolution::default(), 0.5).unwrap();
        let u = pb.exact_state(0.0);
        let mut out = vec![0.0; u.len()];
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| pb.semidiscrete_rhs(black_box(&u), 0.1, &mut out).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, apply_q, advection_rhs);
criterion_main!(benches);
