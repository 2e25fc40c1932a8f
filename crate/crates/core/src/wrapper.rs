//! External target-algorithm wrappers.
//!
//! A wrapper is invoked as
//!
//! ```text
//! <wrapper> <instance_path> <seed> <cutoff_seconds> [--name value]...
//! ```
//!
//! and must print a final line `RESULT: <SAT|UNSAT|SOLVED|TIMEOUT|CRASHED>, <runtime_seconds>`
//! on stdout. The exit code is ignored; a missing result line means the run
//! crashed. The wrapper runs in its own process group, which is sent SIGTERM
//! at the cutoff and SIGKILL one grace second later.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{Instance, Outcome, RunStatus};
use crate::runner::{component_seed, Backend, Race};
use crate::space::Configuration;

/// Termination allowance after the cutoff, excluded from scoring.
pub const GRACE: Duration = Duration::from_secs(1);

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct WrapperBackend {
    program: String,
    prefix_args: Vec<String>,
}

/// Parsed `RESULT:` line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrapperResult {
    pub status: RunStatus,
    pub runtime: f64,
}

/// Finds the last `RESULT:` line in wrapper output.
pub fn parse_result_line(stdout: &str) -> Option<WrapperResult> {
    let line = stdout.lines().rev().map(str::trim).find(|l| l.starts_with("RESULT:"))?;
    let body = line.trim_start_matches("RESULT:").trim();
    let (status, runtime) = body.split_once(',')?;
    let status: RunStatus = status.trim().parse().ok()?;
    let runtime: f64 = runtime.trim().parse().ok()?;
    if !runtime.is_finite() || runtime < 0.0 {
        return None;
    }
    Some(WrapperResult { status, runtime })
}

struct Finished {
    stdout: String,
    cpu_seconds: f64,
    killed: bool,
    cancelled: bool,
}

impl WrapperBackend {
    /// `command` is split on whitespace; the first word is the program.
    pub fn new(command: &str) -> Result<Self> {
        let mut words = command.split_whitespace().map(str::to_string);
        let program = words
            .next()
            .ok_or_else(|| Error::invalid("empty wrapper command"))?;
        Ok(WrapperBackend {
            program,
            prefix_args: words.collect(),
        })
    }

    fn command(&self, config: &Configuration, instance: &Instance, cutoff: f64, seed: u64) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.prefix_args)
            .arg(instance.locator())
            .arg(seed.to_string())
            .arg(format!("{cutoff}"));
        for (name, value) in config.assignments() {
            cmd.arg(format!("--{name}")).arg(value.to_string());
        }
        cmd.stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0);
        cmd
    }

    fn spawn_and_wait(
        &self,
        config: &Configuration,
        instance: &Instance,
        cutoff: f64,
        seed: u64,
        cancel: &AtomicBool,
    ) -> Result<Finished> {
        let mut child = self
            .command(config, instance, cutoff, seed)
            .spawn()
            .map_err(|source| Error::Spawn {
                command: self.program.clone(),
                source,
            })?;
        let pid = child.id() as libc::pid_t;
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stdout.read_to_string(&mut buf);
            buf
        });

        let start = Instant::now();
        let limit = Duration::from_secs_f64(cutoff);
        let mut term_sent = false;
        let mut killed = false;
        let mut cancelled = false;
        let usage = loop {
            if let Some(usage) = reap(pid, false) {
                break usage;
            }
            let elapsed = start.elapsed();
            if cancel.load(Ordering::Relaxed) && !term_sent {
                cancelled = true;
                signal_group(pid, libc::SIGKILL);
                term_sent = true;
            } else if elapsed >= limit && !term_sent {
                signal_group(pid, libc::SIGTERM);
                term_sent = true;
                killed = true;
            } else if elapsed >= limit + GRACE {
                signal_group(pid, libc::SIGKILL);
                break reap(pid, true).unwrap_or_default();
            }
            thread::sleep(POLL);
        };
        // Grandchildren may still hold the pipe open.
        signal_group(pid, libc::SIGKILL);
        let stdout = reader.join().unwrap_or_default();
        Ok(Finished {
            stdout,
            cpu_seconds: usage.cpu_seconds,
            killed,
            cancelled,
        })
    }

    fn run_cancellable(
        &self,
        config: &Configuration,
        instance: &Instance,
        cutoff: f64,
        seed: u64,
        cancel: &AtomicBool,
    ) -> Result<(Outcome, f64)> {
        let f = self.spawn_and_wait(config, instance, cutoff, seed, cancel)?;
        let consumed = f.cpu_seconds.min(cutoff);
        let parsed = parse_result_line(&f.stdout);
        let outcome = if f.cancelled {
            Outcome::timeout(consumed.max(f64::MIN_POSITIVE))
        } else if f.killed {
            match parsed {
                Some(r) if r.status == RunStatus::Solved => Outcome::new(r.status, r.runtime, cutoff),
                _ => Outcome::timeout(cutoff),
            }
        } else {
            match parsed {
                Some(r) => Outcome::new(r.status, r.runtime, cutoff),
                None => Outcome::crashed(consumed, cutoff),
            }
        };
        Ok((outcome, consumed))
    }
}

impl Backend for WrapperBackend {
    fn label(&self) -> &str {
        &self.program
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn run(&self, config: &Configuration, instance: &Instance, cutoff: f64, seed: u64) -> Result<Outcome> {
        let never = AtomicBool::new(false);
        self.run_cancellable(config, instance, cutoff, seed, &never)
            .map(|(o, _)| o)
    }

    /// Runs every component concurrently and kills the rest once one solves.
    fn race(&self, components: &[Configuration], instance: &Instance, cutoff: f64, seed: u64) -> Result<Race> {
        let done = AtomicBool::new(false);
        let results: Vec<Result<(Outcome, f64)>> = thread::scope(|s| {
            let handles: Vec<_> = components
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let done = &done;
                    s.spawn(move || {
                        let r = self.run_cancellable(c, instance, cutoff, component_seed(seed, i), done);
                        if matches!(&r, Ok((o, _)) if o.is_solved()) {
                            done.store(true, Ordering::Relaxed);
                        }
                        r
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("runner thread")).collect()
        });
        let mut outcomes = Vec::with_capacity(results.len());
        let mut cost = 0.0;
        for r in results {
            let (o, c) = r?;
            outcomes.push(o);
            cost += c;
        }
        let mut race = Race::settle(outcomes, cutoff);
        race.cost = cost;
        Ok(race)
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Usage {
    cpu_seconds: f64,
}

/// Reaps `pid`; returns its resource usage once it has exited.
fn reap(pid: libc::pid_t, block: bool) -> Option<Usage> {
    let mut status = 0;
    // SAFETY: rusage is plain old data, fully written by wait4 on success.
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    let flags = if block { 0 } else { libc::WNOHANG };
    // SAFETY: valid pointers to locals; pid is our own child.
    let r = unsafe { libc::wait4(pid, &mut status, flags, &mut ru) };
    if r == pid || (r < 0 && block) {
        let secs = |tv: libc::timeval| tv.tv_sec as f64 + tv.tv_usec as f64 * 1e-6;
        return Some(Usage {
            cpu_seconds: secs(ru.ru_utime) + secs(ru.ru_stime),
        });
    }
    if r < 0 {
        // Already reaped or not our child; treat as exited.
        return Some(Usage::default());
    }
    None
}

fn signal_group(pid: libc::pid_t, sig: libc::c_int) {
    // SAFETY: plain syscall; ESRCH is fine once the group is gone.
    unsafe {
        libc::kill(-pid, sig);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_result_lines() {
        let r = parse_result_line("c noise\nRESULT: SAT, 1.27\n").unwrap();
        assert_eq!(r, WrapperResult { status: RunStatus::Solved, runtime: 1.27 });
        let r = parse_result_line("RESULT: UNSAT, 3").unwrap();
        assert_eq!(r.status, RunStatus::Solved);
        let r = parse_result_line("RESULT: TIMEOUT, 60\nRESULT: CRASHED, 0.1").unwrap();
        assert_eq!(r.status, RunStatus::Crashed);
        assert!(parse_result_line("no result here").is_none());
        assert!(parse_result_line("RESULT: SAT").is_none());
        assert!(parse_result_line("RESULT: MAYBE, 1").is_none());
    }

    #[test]
    fn empty_command_rejected() {
        assert!(WrapperBackend::new("  ").is_err());
    }
}
