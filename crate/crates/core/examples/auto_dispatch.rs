//! Size-based routing from a tuning table, with `"auto"` as the backend.

use mcrdl::{launch, BackendSpec, Buffer, CommRequest, DType, TuningTable};

const TABLE: &str = r#"{
  "version": 1,
  "system": "example",
  "tables": {
    "all_gather": {
      "4": [
        {"max_bytes": 2048, "backend": "mvapich2-gdr"},
        {"max_bytes": 8192, "backend": "nccl"},
        {"max_bytes": 32768, "backend": "sccl"}
      ]
    }
  }
}"#;

fn main() -> mcrdl::Result<()> {
    let table = TuningTable::from_json(TABLE)?;
    let specs: Vec<BackendSpec> = ["mvapich2-gdr", "nccl", "sccl"]
        .iter()
        .map(|id| BackendSpec::new(id))
        .collect::<mcrdl::Result<_>>()?;
    let out = launch::run_local_ok(4, move |g| {
        let rt = mcrdl::Runtime::init(g, specs.clone())?;
        rt.set_tuning_table(table.clone());
        let mut picks = Vec::new();
        for bytes in [256usize, 1024, 4096, 16384, 65536] {
            let m = bytes / 4;
            let req = CommRequest::all_gather(Buffer::zeros(DType::F32, 4 * m), Buffer::zeros(DType::F32, m)).on("auto");
            let h = rt.post(req)?;
            picks.push((bytes, h.backend().to_string()));
            h.wait()?;
        }
        Ok(picks)
    })?;
    for (bytes, id) in &out[0] {
        println!("{bytes:>6} B -> {id}");
    }
    Ok(())
}
