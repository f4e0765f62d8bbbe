//! Many small all-reduces coalesced into a few backend collectives.

use std::time::Duration;

use mcrdl::{launch, BackendSpec, Buffer, FusionConfig, ReduceOp, Runtime};

fn main() -> mcrdl::Result<()> {
    let spec = BackendSpec::new("fused")?.fusion(FusionConfig::new(8192, Duration::from_millis(5))?);
    let out = launch::run_local_ok(4, move |g| {
        let rt = Runtime::init(g, vec![spec.clone()])?;
        let r = rt.rank() as f32;
        let handles = (0..64)
            .map(|i| rt.all_reduce("fused", Buffer::from_slice(&[r + i as f32; 64]), ReduceOp::Sum, true))
            .collect::<mcrdl::Result<Vec<_>>>()?;
        let mut firsts = Vec::new();
        for h in handles {
            firsts.push(h.wait()?.into_buffer().to_vec::<f32>()[0]);
        }
        let stats = rt.fusion_stats("fused")?.expect("fusion is configured");
        Ok((firsts, stats))
    })?;
    let (firsts, stats) = &out[0];
    println!("first results: {:?}", &firsts[..4]);
    println!("{} requests, {} flushes, {} backend collectives", stats.members, stats.flushes, stats.collectives);
    Ok(())
}
