//! Benchmarks of the synthesis, estimation and simulation paths on the
//! scalar vehicle-positioning instance.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use ncs_core::controller::{optimal_cost, synthesize_finite, synthesize_stationary};
use ncs_core::estimator::covariance_schedule;
use ncs_core::model::{prepare, SystemSpec};
use ncs_core::moments;
use ncs_core::riccati::{finite_horizon_recursion, solve_are, DEFAULT_MAX_ITER, DEFAULT_TOL};
use ncs_core::sim::Simulator;

pub fn benchmarks(c: &mut Criterion) {
    let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
    let sched = finite_horizon_recursion(&aug).unwrap();
    let gains = synthesize_finite(&aug, &sched).unwrap();

    c.bench_function("solve_are", |b| b.iter(|| solve_are(black_box(&aug), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap()));
    c.bench_function("finite_horizon_recursion", |b| b.iter(|| finite_horizon_recursion(black_box(&aug)).unwrap()));
    c.bench_function("optimal_cost", |b| b.iter(|| optimal_cost(black_box(&aug), &sched).unwrap()));
    c.bench_function("covariance_schedule", |b| b.iter(|| covariance_schedule(black_box(&aug), 101).unwrap()));
    c.bench_function("moments", |b| b.iter(|| moments::propagate(black_box(&aug), &gains, 101).unwrap()));

    let sim = Simulator::new(&aug, &gains, 101, 1).unwrap();
    let mut group = c.benchmark_group("monte_carlo");
    for reps in [100usize, 1000] {
        group.throughput(Throughput::Elements((reps * 101) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(reps), &reps, |b, &reps| b.iter(|| sim.run_many(reps).unwrap()));
    }
    group.finish();

    let sol = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let stationary = synthesize_stationary(&aug, &sol).unwrap();
    let long = Simulator::new(&aug, &stationary, 500, 1).unwrap();
    c.bench_function("replicate_500_steps", |b| b.iter(|| long.run(black_box(7)).unwrap()));
}
