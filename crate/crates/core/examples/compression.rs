//! Truncated-f32 compression on an all-gather: half the bytes on the wire,
//! low mantissa bits lost.

use mcrdl::{launch, BackendSpec, Buffer, Codec, DType, Runtime};

fn main() -> mcrdl::Result<()> {
    let specs = vec![BackendSpec::new("raw")?, BackendSpec::new("small")?.compression(Codec::Trunc16)];
    let out = launch::run_local_ok(2, move |g| {
        let rt = Runtime::init(g, specs.clone())?;
        let x = [std::f32::consts::PI * (rt.rank() + 1) as f32; 2];
        let mut rows = Vec::new();
        for id in ["raw", "small"] {
            let got = rt
                .all_gather(id, Buffer::zeros(DType::F32, 4), Buffer::from_slice(&x), false)?
                .wait()?
                .into_buffer()
                .to_vec::<f32>();
            rows.push(format!("{id:>5}: {got:?}"));
        }
        Ok(rows)
    })?;
    for row in &out[0] {
        println!("{row}");
    }
    Ok(())
}
