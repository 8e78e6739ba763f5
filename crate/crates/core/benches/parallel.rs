//! Parallel against sequential evaluation of the NLP callbacks.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crossflow::nlp::NlpProblem;
use crossflow::ocp::{assemble, initial_guess, OcpOptions};
use crossflow::scenario::{generate_scenario, GeneratorOptions};
use crossflow::Exec;

fn callbacks(c: &mut Criterion) {
    let scn = generate_scenario(4, 1, GeneratorOptions::default()).unwrap();
    let opts = OcpOptions::default();
    let (mut nlp, layout) = assemble(&scn, &scn.transcription, &opts).unwrap();
    let x = initial_guess(&scn, &layout, opts.guess).unwrap();
    let y = vec![1.0; nlp.n_cons()];
    let mut cons = vec![0.0; nlp.n_cons()];
    let mut jac = vec![0.0; nlp.jacobian_structure().len()];
    let mut hess = vec![0.0; nlp.hessian_structure().len()];
    let mut group = c.benchmark_group("callbacks_4cav");
    for (name, exec) in [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)] {
        nlp.set_exec(exec);
        group.bench_function(BenchmarkId::new("constraints", name), |b| {
            b.iter(|| nlp.constraints(&x, &mut cons).unwrap())
        });
        group.bench_function(BenchmarkId::new("jacobian", name), |b| {
            b.iter(|| nlp.jacobian_values(&x, &mut jac).unwrap())
        });
        group.bench_function(BenchmarkId::new("hessian", name), |b| {
            b.iter(|| nlp.hessian_values(&x, 1.0, &y, &mut hess).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, callbacks);
criterion_main!(benches);
