//! Ragged exchanges: rank r contributes r + 1 elements.

use mcrdl::{launch, BackendSpec, Buffer, DType, Runtime};

fn main() -> mcrdl::Result<()> {
    let out = launch::run_local_ok(3, |g| {
        let rt = Runtime::init(g, vec![BackendSpec::new("v")?])?;
        let (r, p) = (rt.rank(), rt.world_size());
        let counts: Vec<usize> = (1..=p).collect();
        let displs: Vec<usize> = counts.iter().scan(0, |acc, c| Some(std::mem::replace(acc, *acc + c))).collect();
        let total: usize = counts.iter().sum();

        let mine = Buffer::from_slice(&vec![r as i32; counts[r]]);
        let gathered = rt
            .all_gatherv("v", Buffer::zeros(DType::I32, total), mine, counts.clone(), displs.clone(), false)?
            .wait()?
            .into_buffer()
            .to_vec::<i32>();

        // Send j + 1 elements to rank j; receive r + 1 from everyone.
        let scounts = counts.clone();
        let rcounts = vec![r + 1; p];
        let rdispls: Vec<usize> = (0..p).map(|j| j * (r + 1)).collect();
        let input: Vec<i32> = (0..total).map(|i| (r * 100 + i) as i32).collect();
        let exchanged = rt
            .all_to_allv(
                "v",
                Buffer::zeros(DType::I32, p * (r + 1)),
                Buffer::from_slice(&input),
                scounts,
                rcounts,
                displs,
                rdispls,
                false,
            )?
            .wait()?
            .into_buffer()
            .to_vec::<i32>();
        Ok(format!("rank {r}: all_gatherv {gathered:?}  all_to_allv {exchanged:?}"))
    })?;
    for line in out {
        println!("{line}");
    }
    Ok(())
}
