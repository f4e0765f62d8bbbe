//! The `mcrdl` command line: local launch, benchmarks, tuning, reports and
//! demo programs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::launch;
use crate::runtime::{BackendSpec, Group, Runtime};
use crate::tuner::{self, BenchConfig, BenchRun, Statistic};
use crate::types::{Buffer, CommOpKind, ReduceOp};

const DEFAULT_BENCH_BACKENDS: &str = "ring:policy=ring,tree:policy=tree,naive:policy=naive";
const DEFAULT_DEMO_BACKENDS: &str = "nccl:policy=ring:alpha=20e-6:beta=1e-9,mpi:policy=tree:alpha=5e-6:beta=4e-9";

/// `4096`, `64K`, `1M`, `2GiB`. Suffixes are binary.
pub fn parse_size(s: &str) -> Result<usize> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let t = if lower.ends_with("ib") {
        &t[..t.len() - 2]
    } else if lower.ends_with('b') {
        &t[..t.len() - 1]
    } else {
        t
    };
    let (num, mult) = match t.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let mult = match c.to_ascii_uppercase() {
                'K' => 1usize << 10,
                'M' => 1 << 20,
                'G' => 1 << 30,
                _ => return Err(Error::Parse(format!("bad size suffix in `{s}`"))),
            };
            (&t[..i], mult)
        }
        _ => (t, 1),
    };
    num.trim()
        .parse::<usize>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .ok_or_else(|| Error::Parse(format!("bad size `{s}`")))
}

/// Comma list of sizes, or `MIN:MAX` for every power of two in between.
pub fn parse_sizes(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once(':') {
            Some((lo, hi)) => {
                let (lo, hi) = (parse_size(lo)?, parse_size(hi)?);
                if lo == 0 || !lo.is_power_of_two() || !hi.is_power_of_two() || hi < lo {
                    return Err(Error::Parse(format!("range `{part}` needs powers of two MIN ≤ MAX")));
                }
                let mut x = lo;
                while x <= hi {
                    out.push(x as u64);
                    x *= 2;
                }
            }
            None => out.push(parse_size(part)? as u64),
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("no sizes given".into()));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn parse_ops(s: &str) -> Result<Vec<CommOpKind>> {
    let ops: Vec<CommOpKind> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if ops.is_empty() {
        return Err(Error::Config("--ops: no operations given".into()));
    }
    Ok(ops)
}

/// Comma-separated backend specs (see [`BackendSpec`]'s `FromStr`).
pub fn parse_backends(s: &str) -> Result<Vec<BackendSpec>> {
    let specs: Vec<BackendSpec> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if specs.is_empty() {
        return Err(Error::Config("--backends: no backends given".into()));
    }
    Ok(specs)
}

#[derive(Debug, Parser)]
#[command(name = "mcrdl", version, about = "Mix-and-match collective communication runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run a subcommand on N local ranks.
    Launch(LaunchArgs),
    /// Time collectives per backend and size; rank 0 prints CSV.
    Bench(Common),
    /// Benchmark, pick the fastest backend per size and write a tuning table.
    Tune(TuneArgs),
    /// Per-op time breakdown from runtime logs.
    Report(ReportArgs),
    /// Two async all-reduces on two backends, checked against one backend.
    DemoMixed(DemoArgs),
    /// Check every collective on every backend against local oracles.
    Selftest(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Threads,
    Processes,
}

#[derive(Debug, Clone, Args)]
pub struct LaunchArgs {
    /// Number of ranks.
    #[arg(short = 'n', long = "nranks", value_parser = clap::value_parser!(u64).range(1..))]
    pub nranks: u64,
    #[arg(long, value_enum, default_value = "threads")]
    pub mode: Mode,
    /// host:port for process mode; a free localhost port by default.
    #[arg(long)]
    pub master: Option<String>,
    /// Subcommand to run on every rank, with its arguments.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, required = true)]
    pub program: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Comma-separated backend specs, e.g. `a:policy=ring,b:policy=tree:alpha=1e-5`.
    #[arg(long)]
    pub backends: Option<String>,
    /// Comma-separated op names. Default: all_reduce.
    #[arg(long)]
    pub ops: Option<String>,
    /// Comma list or MIN:MAX powers of two, e.g. `1K:1M`.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Measured iterations per cell. Default: 20.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Tuning table used by the `auto` backend.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Output file: bench CSV, or the table for `tune`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `tune`: also print the raw samples as CSV.
    #[arg(long)]
    pub csv: bool,
    /// Seed for generated inputs.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Write each rank's operation log to `<PREFIX>.rank<r>.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// World sizes to benchmark on local thread worlds. Without it the
    /// current world is used.
    #[arg(long)]
    pub scales: Option<String>,
    /// median, mean or min.
    #[arg(long, default_value = "median")]
    pub statistic: Statistic,
    /// System name recorded in the table.
    #[arg(long, default_value = "local")]
    pub system: String,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Per-rank JSONL logs.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// CSV instead of a text table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: Common,
    /// Make the last rank post a mismatched first collective.
    #[arg(long)]
    pub inject_mismatch: bool,
    /// Elements per rank.
    #[arg(long, default_value_t = 1024)]
    pub count: usize,
}

/// What one rank has to say.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Output {
    pub text: String,
    pub code: i32,
}

impl Output {
    fn ok(text: impl Into<String>) -> Self {
        Output { text: text.into(), code: 0 }
    }

    fn fail(text: impl Into<String>) -> Self {
        Output { text: text.into(), code: 1 }
    }
}

fn specs(common: &Common, default: &str) -> Result<Vec<BackendSpec>> {
    parse_backends(common.backends.as_deref().unwrap_or(default))
}

fn runtime(group: Group, common: &Common, default: &str) -> Result<Runtime> {
    let rt = Runtime::init(group, specs(common, default)?)?;
    let table = common
        .table
        .clone()
        .or_else(|| std::env::var_os("MCRDL_TUNING_TABLE").map(PathBuf::from));
    if let Some(path) = table {
        rt.set_tuning_table(crate::dispatch::load_table(&path)?);
    }
    if common.log.is_some() {
        rt.enable_logging(true);
    }
    Ok(rt)
}

fn flush_log(rt: &Runtime, common: &Common) -> Result<()> {
    if let Some(prefix) = &common.log {
        let mut name = prefix.as_os_str().to_owned();
        name.push(format!(".rank{}.jsonl", rt.rank()));
        rt.flush_log(Path::new(&name))?;
    }
    Ok(())
}

fn bench_config(common: &Common) -> Result<BenchConfig> {
    let mut cfg = BenchConfig {
        ops: parse_ops(common.ops.as_deref().unwrap_or("all_reduce"))?,
        sizes: parse_sizes(common.sizes.as_deref().unwrap_or("4:1M"))?,
        ..BenchConfig::default()
    };
    if let Some(n) = common.iters {
        cfg.measure_iters = n;
        cfg.warmup_iters = cfg.warmup_iters.min(n);
    }
    cfg.check()?;
    Ok(cfg)
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn csv_text(run: &BenchRun) -> String {
    let mut s = String::from(tuner::csv_header());
    s.push('\n');
    for row in tuner::csv_rows(run) {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

fn cmd_bench(group: Group, common: &Common) -> Result<Output> {
    let cfg = bench_config(common)?;
    let rt = runtime(group, common, DEFAULT_BENCH_BACKENDS)?;
    let run = tuner::bench(&cfg, &rt, &rt.get_backends())?;
    flush_log(&rt, common)?;
    rt.finalize(&[])?;
    if rt.rank() != 0 {
        return Ok(Output::default());
    }
    let text = csv_text(&run);
    if let Some(out) = &common.out {
        write_out(out, &text)?;
    }
    Ok(Output::ok(text.trim_end()))
}

fn parse_scales(s: &str) -> Result<Vec<usize>> {
    let scales: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().ok().filter(|&n| n > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Parse(format!("--scales `{s}`: expected positive integers")))?;
    Ok(scales)
}

/// Benchmark on a fresh thread world of each size in `scales`.
pub fn bench_scales(cfg: &BenchConfig, specs: &[BackendSpec], scales: &[usize]) -> Result<BenchRun> {
    let mut all = BenchRun::default();
    for &p in scales {
        let runs = launch::run_local_ok(p, |g| {
            let rt = Runtime::init(g, specs.to_vec())?;
            let run = tuner::bench(cfg, &rt, &rt.get_backends())?;
            rt.finalize(&[])?;
            Ok(run)
        })?;
        all.extend(runs.into_iter().next().unwrap_or_default());
    }
    Ok(all)
}

fn cmd_tune(group: Group, args: &TuneArgs) -> Result<Output> {
    let common = &args.common;
    let cfg = bench_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("tuning_table.json"));
    let run = match &args.scales {
        Some(s) => {
            if group.world_size() > 1 {
                return Err(Error::Config("--scales starts its own worlds; run tune without launch".into()));
            }
            bench_scales(&cfg, &specs(common, DEFAULT_BENCH_BACKENDS)?, &parse_scales(s)?)?
        }
        None => {
            let rt = runtime(group, common, DEFAULT_BENCH_BACKENDS)?;
            let run = tuner::bench(&cfg, &rt, &rt.get_backends())?;
            rt.finalize(&[])?;
            if rt.rank() != 0 {
                return Ok(Output::default());
            }
            run
        }
    };
    let built = tuner::build_table(&run.samples, args.statistic, &args.system)?;
    tuner::emit(&built.table, &out)?;
    if common.csv {
        print!("{}", csv_text(&run));
    }
    Ok(Output::ok(format!(
        "tune: {} samples, {} skipped; entries {} before merge, {} after; wrote {}",
        run.samples.len(),
        run.skipped.len(),
        built.pre_merge,
        built.post_merge,
        out.display()
    )))
}

fn cmd_report(args: &ReportArgs) -> Result<Output> {
    let r = crate::middleware::report(&args.logs)?;
    let text = if args.csv { r.to_csv() } else { r.to_text() };
    Ok(Output::ok(text.trim_end()))
}

fn random_vec(rng: &mut StdRng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// The mixed-backend program: two async all-reduces on different backends
/// overlapped with local work on `z`.
pub fn demo_mixed(rt: &Runtime, seed: u64, count: usize, inject_mismatch: bool) -> Result<Output> {
    let ids = rt.get_backends();
    if ids.len() < 2 {
        return Ok(Output::ok(format!(
            "demo-mixed: skipped, needs two backends (registered: {})",
            ids.join(",")
        )));
    }
    let (a, b) = (&ids[0], &ids[1]);
    let (rank, p) = (rt.rank(), rt.world_size());
    let mut rng = StdRng::seed_from_u64(seed.wrapping_add(rank as u64));
    let x = random_vec(&mut rng, count);
    let y = random_vec(&mut rng, count);
    let z = random_vec(&mut rng, count);

    let xs = if inject_mismatch && rank == p - 1 { &x[..x.len().min(2)] } else { &x[..] };
    let run = || -> Result<Vec<f32>> {
        let h1 = rt.all_reduce(a, Buffer::from_slice(xs), ReduceOp::Sum, true)?;
        let h2 = rt.all_reduce(b, Buffer::from_slice(&y), ReduceOp::Sum, true)?;
        let z2: Vec<f32> = z.iter().map(|v| 2.0 * v).collect();
        let sx = h1.wait()?.into_buffer().to_vec::<f32>();
        let sy = h2.wait()?.into_buffer().to_vec::<f32>();
        Ok(sx.iter().zip(&sy).zip(&z2).map(|((x, y), z)| x + y + z).collect())
    };
    let result = match run() {
        Ok(r) => r,
        Err(e) => {
            let _ = rt.synchronize(&[]);
            return Ok(Output::fail(format!("demo-mixed: FAIL on rank {rank}: {} ({e})", e.kind())));
        }
    };

    // Same program, one backend, blocking.
    let sx = rt.all_reduce(a, Buffer::from_slice(&x), ReduceOp::Sum, false)?.wait()?;
    let sy = rt.all_reduce(a, Buffer::from_slice(&y), ReduceOp::Sum, false)?.wait()?;
    let oracle: Vec<f32> = sx
        .into_buffer()
        .to_vec::<f32>()
        .iter()
        .zip(sy.into_buffer().to_vec::<f32>())
        .zip(&z)
        .map(|((x, y), z)| x + y + 2.0 * z)
        .collect();
    let worst = result
        .iter()
        .zip(&oracle)
        .map(|(r, o)| ((r - o).abs() / o.abs().max(1e-6)) as f64)
        .fold(0.0, f64::max);
    rt.synchronize(&[])?;
    if worst <= 1e-6 {
        Ok(Output::ok(format!(
            "demo-mixed: PASS ({count} elements, backends {a}+{b}, world {p}, max rel err {worst:.2e})"
        )))
    } else {
        Ok(Output::fail(format!(
            "demo-mixed: FAIL on rank {rank}: max rel err {worst:.2e} against single-backend run"
        )))
    }
}

fn cmd_demo(group: Group, args: &DemoArgs) -> Result<Output> {
    let rt = runtime(group, &args.common, DEFAULT_DEMO_BACKENDS)?;
    let out = demo_mixed(&rt, args.common.seed, args.count, args.inject_mismatch)?;
    flush_log(&rt, &args.common)?;
    Ok(out)
}

fn cmd_selftest(group: Group, common: &Common) -> Result<Output> {
    let rt = runtime(group, common, DEFAULT_BENCH_BACKENDS)?;
    let summary = crate::selftest::run(&rt, common.seed)?;
    flush_log(&rt, common)?;
    rt.finalize(&[])?;
    let text = summary.to_string();
    Ok(if summary.passed() { Output::ok(text) } else { Output::fail(text) })
}

/// Parse a full argument vector (program name first) into a subcommand.
pub fn parse_command<I, T>(argv: I) -> Result<Command>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
        .map(|c| c.command)
        .map_err(|e| Error::Config(e.to_string()))
}

/// Run a rank-level subcommand on `group`.
pub fn run_rank(command: &Command, group: Group) -> Result<Output> {
    match command {
        Command::Bench(c) => cmd_bench(group, c),
        Command::Tune(t) => cmd_tune(group, t),
        Command::DemoMixed(d) => cmd_demo(group, d),
        Command::Selftest(c) => cmd_selftest(group, c),
        Command::Report(r) => cmd_report(r),
        Command::Launch(_) => Err(Error::Config("launch cannot be nested".into())),
    }
}

fn rank_output(rank: usize, r: Result<Output>) -> Output {
    r.unwrap_or_else(|e| Output::fail(format!("rank {rank}: {} error: {e}", e.kind())))
}

/// Thread-mode launch: run `command` on `n` in-process ranks. Rank 0's
/// output is kept, plus anything a failing rank reported.
pub fn launch_threads(n: usize, command: &Command) -> Output {
    let timeout = std::env::var("MCRDL_TIMEOUT_SECS")
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map_or(crate::runtime::DEFAULT_TIMEOUT, |s| Duration::from_secs(s.max(1)));
    let results = launch::run_local_with(n, timeout, |g| run_rank(command, g));
    let mut out = Output::default();
    for (rank, r) in results.into_iter().enumerate() {
        let o = rank_output(rank, r);
        if (rank == 0 || o.code != 0) && !o.text.is_empty() {
            if !out.text.is_empty() {
                out.text.push('\n');
            }
            out.text.push_str(&o.text);
        }
        out.code = out.code.max(o.code);
    }
    out
}

fn cmd_launch(args: &LaunchArgs) -> Result<Output> {
    let n = args.nranks as usize;
    let inner = parse_command(std::iter::once("mcrdl".to_string()).chain(args.program.iter().cloned()))?;
    if let Command::Report(r) = &inner {
        return cmd_report(r);
    }
    match args.mode {
        Mode::Threads => Ok(launch_threads(n, &inner)),
        Mode::Processes => {
            let port = match &args.master {
                Some(m) => Some(
                    m.rsplit_once(':')
                        .and_then(|(_, p)| p.parse().ok())
                        .ok_or_else(|| Error::Config(format!("--master `{m}`: expected host:port")))?,
                ),
                None => None,
            };
            let exe = std::env::current_exe()?;
            let code = launch::spawn_processes(n, &exe, &args.program, port)?;
            Ok(Output { text: String::new(), code })
        }
    }
}

/// Parse `argv`, run, and return the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Launch(l) => cmd_launch(l),
        Command::Report(r) => cmd_report(r),
        other => Group::from_env().and_then(|g| {
            let rank = g.rank();
            let mut out = rank_output(rank, run_rank(other, g));
            if rank != 0 && out.code == 0 {
                out.text.clear();
            }
            Ok(out)
        }),
    };
    match result {
        Ok(out) => {
            if !out.text.is_empty() {
                let mut stdout = std::io::stdout().lock();
                let _ = writeln!(stdout, "{}", out.text);
            }
            out.code
        }
        Err(e) => {
            eprintln!("mcrdl: {} error: {e}", e.kind());
            match e {
                Error::Config(_) | Error::Parse(_) => 2,
                _ => 1,
            }
        }
    }
}

pub fn main() -> i32 {
    main_with(std::env::args_os())
}
