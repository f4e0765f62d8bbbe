//! A slow all-reduce hidden behind local work.

use std::thread::sleep;
use std::time::{Duration, Instant};

use mcrdl::{launch, BackendSpec, Buffer, DType, ReduceOp, Runtime};

fn main() -> mcrdl::Result<()> {
    let spec = BackendSpec::new("slow")?.shaped(30e-3, 0.0)?;
    let out = launch::run_local_ok(2, move |g| {
        let rt = Runtime::init(g, vec![spec.clone()])?;
        let compute = || sleep(Duration::from_millis(25));

        let t0 = Instant::now();
        rt.all_reduce("slow", Buffer::zeros(DType::F32, 16), ReduceOp::Sum, false)?.wait()?;
        compute();
        let blocking = t0.elapsed();

        let t0 = Instant::now();
        let h = rt.all_reduce("slow", Buffer::zeros(DType::F32, 16), ReduceOp::Sum, true)?;
        compute();
        let ready_early = rt.test(&h);
        h.wait()?;
        let overlapped = t0.elapsed();
        Ok((blocking, overlapped, ready_early))
    })?;
    let (b, o, ready) = out[0];
    println!("blocking then compute: {b:?}");
    println!("async with compute:    {o:?} (done before wait: {ready})");
    Ok(())
}
