use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use varifold_flow::cli_io::gate_constant_for;
use varifold_flow::exec::Execution;
use varifold_flow::flow::{run_with_tracers, FlowConfig, Schedule};
use varifold_flow::geometry::{ball_average, MonteCarlo};
use varifold_flow::mollifier::{KernelFields, Mollifier, QuadratureGrid};
use varifold_flow::scenarios;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn velocity(c: &mut Criterion) {
    let mut group = c.benchmark_group("velocity_at");
    group.sample_size(10);
    for count in [100, 400] {
        let v = scenarios::circle(1.0, count, DVector::zeros(2)).unwrap();
        let kernel = Mollifier::new(2, 0.1, 4.0).unwrap();
        let points: Vec<DVector<f64>> = v.positions().cloned().collect();
        for (name, exec) in MODES {
            let fields = KernelFields::new(&v, &kernel).with_execution(exec);
            group.bench_with_input(BenchmarkId::new(name, count), &points, |b, p| b.iter(|| fields.velocity_at(p, 4).unwrap()));
        }
    }
    group.finish();
}

fn dissipation(c: &mut Criterion) {
    let mut group = c.benchmark_group("dissipation");
    group.sample_size(10);
    let v = scenarios::circle(1.0, 200, DVector::zeros(2)).unwrap();
    let kernel = Mollifier::new(2, 0.1, 4.0).unwrap();
    let grid = QuadratureGrid::covering_support(&v, &kernel, 2);
    for (name, exec) in MODES {
        let fields = KernelFields::new(&v, &kernel).with_execution(exec);
        group.bench_function(name, |b| b.iter(|| fields.dissipation(&grid).unwrap()));
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("ball_average");
    let mc = MonteCarlo { samples: 100_000, ..MonteCarlo::default() };
    let center = [0.0, 0.0, 0.0];
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| ball_average(&center, 1.0, &mc, exec, &|x| (x[0] * x[1]).cos() + x[2] * x[2])));
    }
    group.finish();
}

fn flow_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("flow_5_steps");
    group.sample_size(10);
    let eps = 0.2;
    let v = scenarios::circle(1.0, 60, DVector::zeros(2)).unwrap();
    let dt = 0.2 * eps * eps;
    let mut cfg = FlowConfig::new(eps, 7.0, Schedule::uniform(dt, 5.0 * dt));
    cfg.gate_constant = gate_constant_for(7.0, eps, 0.2);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| run_with_tracers(&v, &[], &cfg, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, velocity, dissipation, monte_carlo, flow_steps);
criterion_main!(benches);
