use std::any::Any;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::fabric::{Fabric, Layout};
use super::link::{LinkDesc, LinkStats, Node};
use super::shared::{EndpointStats, Shared};
use super::trace::TraceEvent;
use super::unit::{CkUnit, StepOutcome, UnitStats};
use crate::channel::RankContext;
use crate::config::Mode;
use crate::error::{Result, SmiError};
use crate::packet::NetworkPacket;

pub(crate) enum Go {
    Run,
    Abort,
}

pub(crate) enum Turn {
    Yield,
    Finished { ok: bool },
}

/// How a rank procedure waits for the fabric.
pub(crate) enum Pacer {
    /// One turn per cycle, handed over by the scheduler.
    Cycle {
        go: Receiver<Go>,
        done: Sender<(usize, Turn)>,
    },
    Concurrent,
}

/// How long an idle thread sleeps before re-checking in free-running mode.
const IDLE_WAIT: Duration = Duration::from_millis(20);

type Body<'a, T> = Box<dyn FnOnce(&RankContext<'_>) -> Result<T> + Send + 'a>;

/// A rank procedure: code that runs on `rank` and talks to the fabric through
/// its [`RankContext`].
pub struct Program<'a, T> {
    rank: u8,
    body: Body<'a, T>,
}

impl<'a, T> Program<'a, T> {
    pub fn new(rank: u8, body: impl FnOnce(&RankContext<'_>) -> Result<T> + Send + 'a) -> Self {
        Program {
            rank,
            body: Box::new(body),
        }
    }

    pub fn rank(&self) -> u8 {
        self.rank
    }
}

/// Outcome of a run. `outputs` follows program order.
#[derive(Debug)]
pub struct RunReport<T> {
    pub outputs: Vec<T>,
    /// Cycle at which the last program finished; 0 in free-running mode.
    pub cycles: u64,
    pub trace: Vec<TraceEvent>,
    pub links: Vec<(LinkDesc, LinkStats)>,
    pub units: Vec<(Node, UnitStats)>,
    pub endpoints: BTreeMap<(u8, u8), EndpointStats>,
    /// Packets still queued, held or stashed after every program returned.
    pub residual_packets: usize,
}

impl<T> RunReport<T> {
    pub fn unit(&self, node: Node) -> Option<&UnitStats> {
        self.units.iter().find(|(n, _)| *n == node).map(|(_, s)| s)
    }

    pub fn endpoint(&self, rank: u8, port: u8) -> EndpointStats {
        self.endpoints.get(&(rank, port)).copied().unwrap_or_default()
    }
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".into()
    }
}

fn run_body<T>(body: Body<'_, T>, ctx: &RankContext<'_>) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(|| body(ctx))) {
        Ok(r) => r,
        Err(p) => Err(SmiError::ProgramPanicked(panic_message(p))),
    }
}

fn pending_of(units: &[Mutex<CkUnit>]) -> Vec<(Node, NetworkPacket)> {
    units
        .iter()
        .filter_map(|u| {
            let u = u.lock().unwrap();
            u.pending().map(|p| (u.node(), *p))
        })
        .collect()
}

fn finish<T>(shared: &Shared<'_>, units: Vec<Mutex<CkUnit>>, outputs: Vec<T>, cycles: u64) -> RunReport<T> {
    let units: Vec<CkUnit> = units.into_iter().map(|u| u.into_inner().unwrap()).collect();
    let links = shared.link_snapshot();
    let endpoints = shared.endpoint_snapshot();
    let residual = links.iter().map(|(_, len, _)| len).sum::<usize>()
        + units.iter().filter(|u| u.pending().is_some()).count()
        + endpoints.values().map(|(_, stashed)| stashed).sum::<usize>();
    RunReport {
        outputs,
        cycles,
        trace: shared.take_trace(),
        links: links.into_iter().map(|(d, _, s)| (d, s)).collect(),
        units: units.into_iter().map(|u| (u.node(), u.stats)).collect(),
        endpoints: endpoints.into_iter().map(|(k, (s, _))| (k, s)).collect(),
        residual_packets: residual,
    }
}

/// Picks the error to report: fabric failures first, then the earliest
/// program failure that was not a consequence of the abort.
fn first_error<T>(failure: Option<SmiError>, results: Vec<Result<T>>) -> Result<Vec<T>> {
    if let Some(e) = failure {
        return Err(e);
    }
    let mut outputs = Vec::with_capacity(results.len());
    let mut aborted = false;
    for r in results {
        match r {
            Ok(v) => outputs.push(v),
            Err(SmiError::Aborted) => aborted = true,
            Err(e) => return Err(e),
        }
    }
    if aborted {
        return Err(SmiError::Aborted);
    }
    Ok(outputs)
}

impl Fabric {
    /// Runs the programs to completion in the configured mode.
    pub fn run<'a, T: Send + 'a>(&self, programs: Vec<Program<'a, T>>) -> Result<RunReport<T>> {
        for p in &programs {
            if p.rank as usize >= self.num_ranks() {
                return Err(SmiError::RankOutOfRange {
                    rank: p.rank as usize,
                    size: self.num_ranks(),
                });
            }
        }
        match self.config().mode {
            Mode::Cycle => self.run_cycle(programs),
            Mode::Concurrent => self.run_concurrent(programs),
        }
    }

    /// Runs `body` once on every rank.
    pub fn run_spmd<T, F>(&self, body: F) -> Result<RunReport<T>>
    where
        T: Send,
        F: Fn(&RankContext<'_>) -> Result<T> + Sync,
    {
        let body = &body;
        let programs = (0..self.num_ranks())
            .map(|r| Program::new(r as u8, move |ctx: &RankContext<'_>| body(ctx)))
            .collect();
        self.run(programs)
    }

    fn shared(&self, layout: &mut Layout, concurrent: bool) -> Shared<'_> {
        Shared::new(
            self.tables(),
            self.ports(),
            self.config(),
            self.num_ranks(),
            std::mem::take(&mut layout.links),
            std::mem::take(&mut layout.descs),
            std::mem::take(&mut layout.app_ports),
            concurrent,
        )
    }

    fn run_cycle<'a, T: Send + 'a>(&self, programs: Vec<Program<'a, T>>) -> Result<RunReport<T>> {
        let mut layout = self.layout(false);
        let shared = self.shared(&mut layout, false);
        let units: Vec<Mutex<CkUnit>> = layout.units.into_iter().map(Mutex::new).collect();
        let n = programs.len();
        let watchdog = self.config().watchdog_cycles;
        let (done_tx, done_rx) = mpsc::channel();

        let (results, failure, cycles) = thread::scope(|s| {
            let mut gos = Vec::with_capacity(n);
            let mut handles = Vec::with_capacity(n);
            for (idx, p) in programs.into_iter().enumerate() {
                let (go_tx, go_rx) = mpsc::channel();
                gos.push(go_tx);
                let done = done_tx.clone();
                let shared = &shared;
                handles.push(s.spawn(move || {
                    if !matches!(go_rx.recv(), Ok(Go::Run)) {
                        let _ = done.send((idx, Turn::Finished { ok: false }));
                        return Err(SmiError::Aborted);
                    }
                    let ctx = RankContext::new(
                        shared,
                        p.rank,
                        idx,
                        Pacer::Cycle {
                            go: go_rx,
                            done: done.clone(),
                        },
                    );
                    let r = run_body(p.body, &ctx);
                    let _ = done.send((idx, Turn::Finished { ok: r.is_ok() }));
                    r
                }));
            }

            let mut active = vec![true; n];
            let mut failure = None;
            let mut cycle = 0u64;
            let mut last_activity = (shared.activity(), 0u64);
            'run: loop {
                shared.set_now(cycle);
                for i in 0..n {
                    if !active[i] {
                        continue;
                    }
                    if gos[i].send(Go::Run).is_err() {
                        active[i] = false;
                        continue;
                    }
                    match done_rx.recv() {
                        Ok((_, Turn::Yield)) => {}
                        Ok((_, Turn::Finished { ok })) => {
                            active[i] = false;
                            if !ok {
                                break 'run;
                            }
                        }
                        Err(_) => break 'run,
                    }
                }
                if !active.iter().any(|&a| a) {
                    break;
                }
                for u in &units {
                    if let Err(e) = u.lock().unwrap().step(&shared, cycle) {
                        failure = Some(e);
                        break 'run;
                    }
                }
                let a = shared.activity();
                if a != last_activity.0 {
                    last_activity = (a, cycle);
                } else if cycle - last_activity.1 >= watchdog {
                    failure = Some(SmiError::Deadlock(format!(
                        "no progress for {watchdog} cycles at cycle {cycle}\n{}",
                        shared.dump(&pending_of(&units))
                    )));
                    break;
                }
                cycle += 1;
            }
            shared.abort();
            for (i, g) in gos.iter().enumerate() {
                if active[i] {
                    let _ = g.send(Go::Abort);
                }
            }
            drop(gos);
            let results: Vec<Result<T>> = handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|p| Err(SmiError::ProgramPanicked(panic_message(p))))
                })
                .collect();
            (results, failure, cycle)
        });
        let outputs = first_error(failure, results)?;
        Ok(finish(&shared, units, outputs, cycles))
    }

    fn run_concurrent<'a, T: Send + 'a>(&self, programs: Vec<Program<'a, T>>) -> Result<RunReport<T>> {
        let mut layout = self.layout(true);
        let shared = self.shared(&mut layout, true);
        let units: Vec<Mutex<CkUnit>> = layout.units.into_iter().map(Mutex::new).collect();
        let remaining = AtomicUsize::new(programs.len());
        let stop = AtomicBool::new(false);
        let unit_error: Mutex<Option<SmiError>> = Mutex::new(None);
        let patience = Duration::from_millis(self.config().watchdog_ms);

        let (results, deadlock) = thread::scope(|s| {
            for u in &units {
                let (shared, stop, unit_error) = (&shared, &stop, &unit_error);
                s.spawn(move || {
                    while !stop.load(Ordering::SeqCst) && !shared.aborted() {
                        let seen = shared.progress.current();
                        let r = u.lock().unwrap().step(shared, 0);
                        match r {
                            Ok(StepOutcome::Progress | StepOutcome::Polled) => {}
                            Ok(StepOutcome::Stalled | StepOutcome::Idle) => {
                                shared.progress.wait_change(seen, IDLE_WAIT)
                            }
                            Err(e) => {
                                unit_error.lock().unwrap().get_or_insert(e);
                                shared.abort();
                            }
                        }
                    }
                });
            }
            let handles: Vec<_> = programs
                .into_iter()
                .enumerate()
                .map(|(idx, p)| {
                    let (shared, remaining) = (&shared, &remaining);
                    s.spawn(move || {
                        let ctx = RankContext::new(shared, p.rank, idx, Pacer::Concurrent);
                        let r = run_body(p.body, &ctx);
                        if r.is_err() {
                            shared.abort();
                        }
                        remaining.fetch_sub(1, Ordering::SeqCst);
                        shared.progress.bump();
                        r
                    })
                })
                .collect();

            let mut deadlock = None;
            while remaining.load(Ordering::SeqCst) > 0 && !shared.aborted() {
                let seen = shared.progress.current();
                shared.progress.wait_change(seen, patience);
                if shared.progress.current() == seen && remaining.load(Ordering::SeqCst) > 0 && !shared.aborted() {
                    deadlock = Some(SmiError::Deadlock(format!(
                        "no progress for {} ms\n{}",
                        patience.as_millis(),
                        shared.dump(&pending_of(&units))
                    )));
                    shared.abort();
                }
            }
            stop.store(true, Ordering::SeqCst);
            shared.progress.bump();
            let results: Vec<Result<T>> = handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|p| Err(SmiError::ProgramPanicked(panic_message(p))))
                })
                .collect();
            (results, deadlock)
        });
        let failure = unit_error.into_inner().unwrap().or(deadlock);
        let outputs = first_error(failure, results)?;
        Ok(finish(&shared, units, outputs, 0))
    }
}
