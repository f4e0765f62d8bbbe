//! Benchmark two shaped backends, build a table and route with it.

use mcrdl::tuner::{build_table, BenchConfig, Statistic};
use mcrdl::{cli, dispatch, route, BackendSpec, CommOpKind};

fn main() -> mcrdl::Result<()> {
    let specs = vec![
        BackendSpec::new("high-latency")?.shaped(100e-6, 1e-9)?,
        BackendSpec::new("low-bandwidth")?.shaped(10e-6, 10e-9)?,
    ];
    let cfg = BenchConfig {
        ops: vec![CommOpKind::Bcast],
        sizes: (8..=17).map(|e| 1u64 << e).collect(),
        warmup_iters: 3,
        measure_iters: 21,
        statistic: Statistic::Median,
    };
    let run = cli::bench_scales(&cfg, &specs, &[2, 4])?;
    let built = build_table(&run.samples, Statistic::Median, "example")?;
    println!("{} cells, {} entries after merge", built.pre_merge, built.post_merge);

    let path = std::env::temp_dir().join("mcrdl-tuning-example.json");
    dispatch::emit(&built.table, &path)?;
    let table = dispatch::load_table(&path)?;
    let registered: Vec<String> = specs.iter().map(|s| s.id.to_string()).collect();
    for bytes in [512, 4096, 8192, 16384, 131072] {
        println!("bcast {bytes:>6} B at 4 ranks -> {}", route(&table, CommOpKind::Bcast, 4, bytes, &registered)?);
    }
    println!("table written to {}", path.display());
    Ok(())
}
