//! Run the decision study with overridden grid constants and print how far
//! each cell is from flipping its selection.
//!
//! `cargo run --release --example study_sweep -- h=40000 ep=96 seed_base=1000`

use gatebench::exec::Execution;
use gatebench::report::decision_table;
use gatebench::study::{run_study, StudyGrid};

fn parse<T: std::str::FromStr>(k: &str, v: &str) -> T {
    v.parse().unwrap_or_else(|_| panic!("bad value for {k}: {v}"))
}

fn main() {
    let mut grid = StudyGrid::default_grid();
    let mut seed_base = 0u64;
    for kv in std::env::args().skip(1) {
        let (k, v) = kv.split_once('=').expect("arguments are key=value");
        match k {
            "threshold" => grid.hook_b.pressure_threshold_ms = parse(k, v),
            "h" => grid.horizon_ms = parse(k, v),
            "ep" => grid.episodes = parse(k, v),
            "conc" => grid.sim_concurrency = parse(k, v),
            "servers" => grid.verifier_servers = parse(k, v),
            "max_conc" => grid.hook_b.max_conc = parse(k, v),
            "step" => grid.hook_b.step = parse(k, v),
            "window" => grid.window_capacity = parse(k, v),
            "seed_base" => seed_base = parse(k, v),
            _ => panic!("unknown key {k}"),
        }
    }
    let start = std::time::Instant::now();
    let out = run_study(&grid, seed_base, Execution::with_threads(4)).expect("study runs");
    print!("{}", decision_table(&out.report));

    // Relative margin of the expected winner: hook_a in clean, hook_b stressed.
    let mut margins: Vec<(f64, String)> = out
        .report
        .cells
        .iter()
        .filter_map(|c| {
            let mut aucs = c.auc_by_variant.values();
            let (a, b) = (*aucs.next()?, *aucs.next()?);
            let m = if c.setting == "clean" { a - b } else { b - a } / a.max(b);
            Some((
                m,
                format!("{} seed {} budget {} {}", c.backend, c.seed, c.budget, c.setting),
            ))
        })
        .collect();
    margins.sort_by(|x, y| x.0.total_cmp(&y.0));
    if let Some((m, cell)) = margins.first() {
        println!("smallest margin {m:.3} at {cell}");
    }
    println!("elapsed {:.2?}", start.elapsed());
}
