//! Two backends in one program: gradients on one, expert exchange on the
//! other, with an event ordering the second behind the first.

use std::time::{Duration, Instant};

use mcrdl::{launch, AlgorithmPolicy, BackendSpec, Buffer, DType, ReduceOp, Runtime};

fn main() -> mcrdl::Result<()> {
    let specs = vec![
        BackendSpec::new("nccl")?.shaped(20e-6, 1e-9)?,
        BackendSpec::new("mpi")?.policy(AlgorithmPolicy::preset("tree")?).shaped(5e-6, 4e-9)?,
    ];
    let out = launch::run_local_ok(4, move |g| {
        let rt = Runtime::init(g, specs.clone())?;
        let (r, p) = (rt.rank(), rt.world_size());

        let grads = rt.all_reduce("nccl", Buffer::from_slice(&[r as f32; 256]), ReduceOp::Sum, true)?;
        let done = rt.record_event("nccl")?;

        let tokens: Vec<f32> = (0..p * 4).map(|i| (r * 100 + i) as f32).collect();
        let routed = rt.all_to_all_single("mpi", Buffer::zeros(DType::F32, p * 4), Buffer::from_slice(&tokens), true)?;

        done.wait_until(Instant::now() + Duration::from_secs(5));
        let grads = grads.wait()?.into_buffer().to_vec::<f32>();
        let routed = routed.wait()?.into_buffer().to_vec::<f32>();
        rt.finalize(&[])?;
        Ok(format!("rank {r}: grad[0] = {}, tokens from peers = {:?}", grads[0], &routed[..]))
    })?;
    for line in out {
        println!("{line}");
    }
    Ok(())
}
