//! Ranks over loopback TCP instead of in-process channels. Each rank is a
//! thread here; `mcrdl launch --mode processes` does the same with processes.

use std::thread;

use mcrdl::{launch, BackendSpec, Buffer, Group, ReduceOp, Runtime, TransportKind};

fn main() -> mcrdl::Result<()> {
    let p = 3;
    let master = format!("127.0.0.1:{}", launch::free_port());
    let ranks: Vec<_> = (0..p)
        .map(|r| {
            let master = master.clone();
            thread::spawn(move || -> mcrdl::Result<Vec<f64>> {
                let g = Group::tcp(r, p, master)?;
                let rt = Runtime::init(g, vec![BackendSpec::new("net")?.transport(TransportKind::Tcp)])?;
                let out = rt
                    .all_reduce("net", Buffer::from_slice(&[r as f64 + 0.5; 3]), ReduceOp::Max, false)?
                    .wait()?;
                rt.finalize(&[])?;
                Ok(out.into_buffer().to_vec::<f64>())
            })
        })
        .collect();
    for (r, h) in ranks.into_iter().enumerate() {
        println!("rank {r}: {:?}", h.join().expect("rank thread panicked")?);
    }
    Ok(())
}
