//! Per-rank operation logs turned into a communication breakdown.

use std::path::PathBuf;

use mcrdl::middleware::report;
use mcrdl::{launch, AlgorithmPolicy, BackendSpec, Buffer, DType, ReduceOp, Runtime};

fn main() -> mcrdl::Result<()> {
    let dir = std::env::temp_dir().join("mcrdl-logging-example");
    std::fs::create_dir_all(&dir)?;
    let specs = vec![
        BackendSpec::new("nccl")?.shaped(20e-6, 1e-9)?,
        BackendSpec::new("mpi")?.policy(AlgorithmPolicy::preset("tree")?).shaped(5e-6, 4e-9)?,
    ];
    let log_dir = dir.clone();
    let paths = launch::run_local_ok(4, move |g| {
        let rt = Runtime::init(g, specs.clone())?;
        rt.enable_logging(true);
        let p = rt.world_size();
        for _ in 0..20 {
            rt.all_reduce("nccl", Buffer::zeros(DType::F32, 4096), ReduceOp::Sum, false)?;
            rt.all_to_all_single("mpi", Buffer::zeros(DType::F32, 256 * p), Buffer::zeros(DType::F32, 256 * p), false)?;
        }
        let path = log_dir.join(format!("rank{}.jsonl", rt.rank()));
        rt.flush_log(&path)?;
        Ok(path)
    })?;
    let paths: Vec<PathBuf> = paths;
    print!("{}", report(&paths)?.to_text());
    Ok(())
}
