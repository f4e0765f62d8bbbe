//! Four thread ranks sum a vector with each built-in all-reduce algorithm.

use mcrdl::{launch, Algorithm, AlgorithmPolicy, BackendSpec, Buffer, CommOpKind, ReduceOp, Runtime};

fn main() -> mcrdl::Result<()> {
    let specs = [Algorithm::Ring, Algorithm::RecursiveDoubling, Algorithm::Naive]
        .iter()
        .map(|&a| {
            let policy = AlgorithmPolicy::preset("ring")?.with(CommOpKind::AllReduce, a)?;
            Ok(BackendSpec::new(a.as_str())?.policy(policy))
        })
        .collect::<mcrdl::Result<Vec<_>>>()?;

    let out = launch::run_local_ok(4, move |g| {
        let rt = Runtime::init(g, specs.clone())?;
        let mine: Vec<i64> = (0..6).map(|i| (rt.rank() * 10 + i) as i64).collect();
        let mut lines = Vec::new();
        for id in rt.get_backends() {
            let sum = rt
                .all_reduce(&id, Buffer::from_slice(&mine), ReduceOp::Sum, false)?
                .wait()?
                .into_buffer()
                .to_vec::<i64>();
            lines.push(format!("{id:>18}: {sum:?}"));
        }
        rt.finalize(&[])?;
        Ok(lines)
    })?;
    for line in &out[0] {
        println!("{line}");
    }
    Ok(())
}
