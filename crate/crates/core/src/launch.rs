//! Starting local multi-rank worlds: threads sharing in-process fabrics, or
//! child processes wired together through environment variables.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command};
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::runtime::{Group, LocalWorld};

/// An ephemeral localhost port that was free a moment ago.
pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .and_then(|l| l.local_addr())
        .map(|a| a.port())
        .expect("bind an ephemeral port")
}

/// Run `f` on `n` thread ranks of a fresh in-process world and collect each
/// rank's result in rank order. A panicking rank yields an error.
pub fn run_local<T, F>(n: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(Group) -> Result<T> + Sync,
{
    run_local_with(n, crate::runtime::DEFAULT_TIMEOUT, f)
}

pub fn run_local_with<T, F>(n: usize, timeout: Duration, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(Group) -> Result<T> + Sync,
{
    assert!(n > 0, "need at least one rank");
    let world = LocalWorld::new(n);
    thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|rank| {
                let group = Group::local(&world, rank).with_timeout(timeout);
                let f = &f;
                thread::Builder::new()
                    .name(format!("rank-{rank}"))
                    .spawn_scoped(s, move || f(group))
                    .expect("spawn rank thread")
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Config(format!("rank {rank} panicked"))))
            })
            .collect()
    })
}

/// Like [`run_local`], but fails with the first rank error.
pub fn run_local_ok<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Group) -> Result<T> + Sync,
{
    run_local(n, f).into_iter().collect()
}

/// Spawn `n` copies of `exe args...`, one per rank, with `MCRDL_RANK`,
/// `MCRDL_WORLD_SIZE`, `MCRDL_MASTER_ADDR` and `MCRDL_MASTER_PORT` set.
/// Returns the largest exit code.
pub fn spawn_processes(n: usize, exe: &Path, args: &[String], port: Option<u16>) -> Result<i32> {
    if n == 0 {
        return Err(Error::Config("need at least one rank".into()));
    }
    let port = port.unwrap_or_else(free_port);
    let mut children: Vec<Child> = Vec::with_capacity(n);
    for rank in 0..n {
        let child = Command::new(exe)
            .args(args)
            .env("MCRDL_RANK", rank.to_string())
            .env("MCRDL_WORLD_SIZE", n.to_string())
            .env("MCRDL_MASTER_ADDR", "127.0.0.1")
            .env("MCRDL_MASTER_PORT", port.to_string())
            .spawn();
        match child {
            Ok(c) => children.push(c),
            Err(e) => {
                for mut c in children {
                    let _ = c.kill();
                }
                return Err(e.into());
            }
        }
    }
    let mut worst = 0;
    for mut c in children {
        let status = c.wait()?;
        worst = worst.max(status.code().unwrap_or(1));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_world_ranks() {
        let ranks = run_local_ok(3, |g| Ok((g.rank(), g.world_size()))).unwrap();
        assert_eq!(ranks, vec![(0, 3), (1, 3), (2, 3)]);
    }

    #[test]
    fn panics_become_errors() {
        let r = run_local(2, |g| if g.rank() == 1 { panic!("boom") } else { Ok(()) });
        assert!(r[0].is_ok());
        assert!(r[1].is_err());
    }
}
