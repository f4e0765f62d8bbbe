mod common;

use common::{presets, run_plans, world_ok, Col, Net};
use mcrdl::{
    launch, Algorithm, AlgorithmPolicy, BackendSpec, Buffer, CommOpKind, CommRequest, DType, ReduceOp, Runtime,
};
use proptest::prelude::*;

fn oracle_world(p: usize, net: Net, counts: &[usize], seed: u64) {
    let failures = world_ok(p, net, |g| {
        let rt = Runtime::init(g, presets())?;
        let mut all = Vec::new();
        for id in rt.get_backends() {
            all.extend(run_plans(&rt, &id, &CommOpKind::COLLECTIVES, &[DType::F32, DType::I64], counts, seed)?);
        }
        rt.finalize(&[])?;
        Ok(all)
    });
    let failures: Vec<String> = failures.into_iter().flatten().collect();
    assert!(failures.is_empty(), "{} mismatches:\n{}", failures.len(), failures.join("\n"));
}

#[test]
fn every_collective_matches_oracle_inproc() {
    for p in [1, 2, 3, 4, 6] {
        oracle_world(p, Net::Inproc, &[0, 1, 5, 33], 3);
    }
}

#[test]
fn every_collective_matches_oracle_tcp() {
    oracle_world(3, Net::Tcp, &[0, 1, 17], 5);
}

#[test]
fn send_recv_ring() {
    let got = world_ok(4, Net::Inproc, |g| {
        let rt = Runtime::init(g, vec![BackendSpec::new("p2p")?])?;
        let (r, p) = (rt.rank(), rt.world_size());
        let s = rt.send("p2p", Buffer::from_slice(&[r as i64 * 10; 3]), (r + 1) % p, true)?;
        let h = rt.recv("p2p", Buffer::zeros(DType::I64, 3), (r + p - 1) % p, true)?;
        s.wait()?;
        Ok(h.wait()?.into_buffer().to_vec::<i64>())
    });
    for (r, v) in got.iter().enumerate() {
        let from = (r + 3) % 4;
        assert_eq!(v, &vec![from as i64 * 10; 3]);
    }
}

#[test]
fn invalid_requests_fail_at_post() {
    let rt = Runtime::init(mcrdl::Group::solo(), vec![BackendSpec::new("a").unwrap()]).unwrap();
    let e = rt.bcast("a", Buffer::zeros(DType::F32, 2), 3, false).unwrap_err();
    assert_eq!(e.kind(), "InvalidRoot");
    let e = rt.send("a", Buffer::zeros(DType::F32, 2), 0, false).unwrap_err();
    assert_eq!(e.kind(), "InvalidDestination");
    let e = rt
        .all_gather("a", Buffer::zeros(DType::F32, 3), Buffer::zeros(DType::F32, 2), false)
        .unwrap_err();
    assert_eq!(e.kind(), "ValidationError");
    let e = rt.all_reduce("zz", Buffer::zeros(DType::F32, 1), ReduceOp::Sum, false).unwrap_err();
    assert_eq!(e.kind(), "UnknownBackend");
}

#[test]
fn unsupported_kind_reports_backend() {
    let spec = BackendSpec::new("nccl").unwrap().policy(AlgorithmPolicy::preset("nccl-like").unwrap());
    let rt = Runtime::init(mcrdl::Group::solo(), vec![spec]).unwrap();
    let e = rt
        .gather("nccl", Buffer::zeros(DType::F32, 1), Buffer::zeros(DType::F32, 1), 0, false)
        .unwrap_err();
    assert_eq!(e.kind(), "SkippedCombination");
    assert!(e.to_string().contains("nccl"), "{e}");
}

fn single_algo(id: &str, kind: CommOpKind, algo: Algorithm) -> BackendSpec {
    let policy = AlgorithmPolicy::preset("ring").unwrap().with(kind, algo).unwrap();
    BackendSpec::new(id).unwrap().policy(policy)
}

/// Results of one kind under each algorithm, per rank, raw bytes.
fn cross(kind: CommOpKind, algos: &[Algorithm], p: usize, count: usize, dtype: DType, seed: u64) -> Vec<Vec<Vec<u8>>> {
    let specs: Vec<BackendSpec> = algos.iter().map(|a| single_algo(a.as_str(), kind, *a)).collect();
    world_ok(p, Net::Inproc, |g| {
        let rt = Runtime::init(g, specs.clone())?;
        let (r, p) = (rt.rank(), rt.world_size());
        let mut outs = Vec::new();
        for a in algos {
            let planned = common::plan(kind, dtype, count, ReduceOp::Sum, p, r, seed);
            let out = rt.post(planned.request.on(a.as_str()))?.wait()?;
            outs.push(common::output_col(kind, out).to_buffer().into_bytes());
        }
        Ok(outs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn all_reduce_algorithms_agree(p in 1usize..7, count in 0usize..50, seed in any::<u64>()) {
        let algos = [Algorithm::Ring, Algorithm::RecursiveDoubling, Algorithm::Naive];
        for ranks in cross(CommOpKind::AllReduce, &algos, p, count, DType::I64, seed) {
            prop_assert!(ranks.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn all_to_all_algorithms_agree(p in 1usize..7, count in 0usize..20, seed in any::<u64>()) {
        let algos = [Algorithm::Bruck, Algorithm::PairwiseExchange, Algorithm::Naive];
        for kind in [CommOpKind::AllToAllSingle, CommOpKind::AllToAll] {
            for ranks in cross(kind, &algos, p, count, DType::F32, seed) {
                prop_assert!(ranks.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }

    #[test]
    fn vectored_layouts_match_oracle(p in 1usize..6, count in 0usize..12, seed in any::<u64>()) {
        let kinds = [CommOpKind::Gatherv, CommOpKind::Scatterv, CommOpKind::AllGatherv, CommOpKind::AllToAllv];
        let failures = world_ok(p, Net::Inproc, |g| {
            let rt = Runtime::init(g, presets())?;
            let mut all = Vec::new();
            for id in rt.get_backends() {
                all.extend(run_plans(&rt, &id, &kinds, &[DType::I64], &[count], seed)?);
            }
            Ok(all)
        });
        let failures: Vec<String> = failures.into_iter().flatten().collect();
        prop_assert!(failures.is_empty(), "{}", failures.join("\n"));
    }

    #[test]
    fn reduce_then_bcast_equals_all_reduce(p in 1usize..6, count in 0usize..30, seed in any::<u64>()) {
        let outs = world_ok(p, Net::Inproc, |g| {
            let rt = Runtime::init(g, presets())?;
            let (r, p) = (rt.rank(), rt.world_size());
            let x = Col::input(DType::I64, seed, r, count).to_buffer();
            let root = seed as usize % p;
            let red = rt.reduce("tree", x.clone(), root, ReduceOp::Max, false)?.wait()?.into_buffer();
            let t = if r == root { red } else { Buffer::zeros(DType::I64, count) };
            let b = rt.bcast("naive", t, root, false)?.wait()?.into_buffer();
            let a = rt.all_reduce("ring", x, ReduceOp::Max, false)?.wait()?.into_buffer();
            Ok(a == b)
        });
        prop_assert!(outs.into_iter().all(|x| x));
    }
}

#[test]
fn bruck_with_uneven_blocks_falls_back() {
    // all_to_allv on a Bruck backend: non-uniform blocks take the pairwise path.
    let spec = single_algo("bruck", CommOpKind::AllToAllv, Algorithm::Bruck);
    let failures = world_ok(5, Net::Inproc, |g| {
        let rt = Runtime::init(g, vec![spec.clone()])?;
        run_plans(&rt, "bruck", &[CommOpKind::AllToAllv], &[DType::F32], &[9], 1)
    });
    assert!(failures.iter().all(Vec::is_empty), "{failures:?}");
}

#[test]
fn zero_length_collectives_complete() {
    let outs = launch::run_local_ok(3, |g| {
        let rt = Runtime::init(g, presets())?;
        let mut n = 0;
        for id in rt.get_backends() {
            n += rt.all_reduce(&id, Buffer::empty(DType::F32), ReduceOp::Sum, false)?.wait()?.byte_len();
            let req = CommRequest::all_gather(Buffer::empty(DType::I64), Buffer::empty(DType::I64)).on(id.as_str());
            n += rt.post(req)?.wait()?.byte_len();
        }
        Ok(n)
    })
    .unwrap();
    assert_eq!(outs, vec![0, 0, 0]);
}
