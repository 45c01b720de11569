//! A small size sweep and a small discount sweep with quantile summaries.

use std::io;

use rosa::harness::{default_gamma_sweep, run_bench, summarize, write_summary, BenchConfig, Method};

fn main() -> rosa::Result<()> {
    let quantiles = [0.16, 0.84];

    let sizes = BenchConfig {
        methods: vec![Method::Rosa, Method::Bcp],
        sizes: vec![2, 3, 4],
        gammas: vec![0.9999],
        reps: 5,
        ..Default::default()
    };
    let rows = run_bench(&sizes)?;
    println!("size sweep");
    write_summary(&summarize(&rows, &quantiles), &quantiles, io::stdout())?;

    let gammas: Vec<f64> = default_gamma_sweep().into_iter().step_by(8).collect();
    let discount = BenchConfig {
        methods: vec![Method::Rosa, Method::Bcp],
        sizes: vec![3],
        gammas,
        reps: 3,
        ..Default::default()
    };
    let rows = run_bench(&discount)?;
    println!("\ndiscount sweep");
    write_summary(&summarize(&rows, &quantiles), &quantiles, io::stdout())?;
    Ok(())
}
