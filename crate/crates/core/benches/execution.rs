use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gatebench::demo::{demo_plan, demo_release_root};
use gatebench::exec::Execution;
use gatebench::gate::gate_runset;
use gatebench::runner::run_plan;
use gatebench::study::{build_study_plan, study_release_root, StudyGrid};

fn modes() -> [(&'static str, Execution); 2] {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::with_threads(threads)),
    ]
}

fn demo_pipeline(c: &mut Criterion) {
    let (root, store) = demo_release_root();
    let plan = demo_plan();
    let mut group = c.benchmark_group("demo_plan");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::new("run_and_gate", name), &exec, |b, &exec| {
            b.iter(|| {
                let set = run_plan(&plan, &root, &store, exec).unwrap();
                gate_runset(&set, &root, exec)
            })
        });
    }
    group.finish();
}

fn study_slice(c: &mut Criterion) {
    let (root, store) = study_release_root();
    let mut grid = StudyGrid::fixed_budget();
    grid.backends.truncate(1);
    let plan = build_study_plan(&grid, 0, 1);
    let mut group = c.benchmark_group("study_slice");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::new("run_plan", name), &exec, |b, &exec| {
            b.iter(|| run_plan(&plan, &root, &store, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, demo_pipeline, study_slice);
criterion_main!(benches);
