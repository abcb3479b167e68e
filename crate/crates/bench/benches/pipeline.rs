use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use bsplan_bench::{solved_scenario, GRID};
use bsplan_core::neural::{predict, UNetParams};
use bsplan_core::planner::plan;
use bsplan_core::reconstruct::reconstruct_path;
use bsplan_core::{PlannerParams, ReconstructionParams};

fn planner(c: &mut Criterion) {
    let (s, _) = solved_scenario(0).unwrap();
    let mut seed = 0;
    c.bench_function("plan_2000_iters", |b| {
        b.iter(|| {
            seed += 1;
            plan(black_box(&s), &PlannerParams { seed, ..PlannerParams::default() }).unwrap()
        })
    });
}

fn network(c: &mut Criterion) {
    let (s, _) = solved_scenario(0).unwrap();
    let stack = s.encode(GRID, GRID);
    let mut group = c.benchmark_group("unet_predict");
    for (depth, base) in [(3, 8), (4, 16)] {
        let net = UNetParams::init(depth, base, 0).unwrap();
        group.bench_function(format!("depth{depth}_base{base}"), |b| b.iter(|| predict(&net, black_box(&stack)).unwrap()));
    }
    group.finish();
}

fn reconstruction(c: &mut Criterion) {
    let (s, density) = solved_scenario(0).unwrap();
    let mut group = c.benchmark_group("reconstruct");
    for components in [10, 20] {
        let params = ReconstructionParams { components, sample_count: 10 * components, ..Default::default() };
        group.bench_function(format!("components{components}"), |b| {
            b.iter(|| reconstruct_path(black_box(&density), &s, &params))
        });
    }
    group.finish();
}

criterion_group!(benches, planner, network, reconstruction);
criterion_main!(benches);
