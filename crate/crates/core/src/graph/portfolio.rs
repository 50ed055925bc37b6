//! Anytime tree-decomposition planners run side by side, their outputs
//! collated into one stream of strictly improving decompositions.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use super::decomposition::TreeDecomposition;
use super::heuristics::{elimination_order, elimination_tree_decomposition, EliminationRule};
use super::pace::{emit_gr, parse_td};
use super::Graph;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlannerError {
    #[error("could not start `{0}`: {1}")]
    Spawn(String, String),
    #[error("i/o with solver: {0}")]
    Io(String),
    #[error("solver produced no decomposition")]
    NoOutput,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PortfolioError {
    #[error("portfolio needs at least one planner")]
    NoPlanners,
    #[error("every planner failed: {0:?}")]
    AllPlannersFailed(Vec<(String, PlannerError)>),
    #[error("no decomposition found before the deadline")]
    NoDecomposition,
}

/// Stop condition shared by all planners of one portfolio.
#[derive(Debug, Clone)]
pub struct Budget {
    deadline: Instant,
    cancel: Arc<AtomicBool>,
}

impl Budget {
    pub fn new(deadline: Instant) -> Self {
        Self {
            deadline,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn deadline(&self) -> Instant {
        self.deadline
    }

    pub fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }

    pub fn expired(&self) -> bool {
        self.cancelled() || Instant::now() >= self.deadline
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }
}

/// A producer of successively found tree decompositions.
pub trait AnytimePlanner: Send {
    fn name(&self) -> String;

    /// Runs until the budget expires or the planner is exhausted, passing
    /// every decomposition it finds to `emit`.
    fn run(
        &mut self,
        g: &Graph,
        budget: &Budget,
        emit: &mut dyn FnMut(TreeDecomposition),
    ) -> Result<(), PlannerError>;
}

/// Repeats an elimination heuristic with seeds `seed, seed+1, ...`.
#[derive(Debug, Clone)]
pub struct HeuristicPlanner {
    pub rule: EliminationRule,
    pub seed: u64,
    /// Stop after this many rounds even if time remains.
    pub max_rounds: Option<usize>,
}

impl HeuristicPlanner {
    pub fn new(rule: EliminationRule, seed: u64) -> Self {
        Self {
            rule,
            seed,
            max_rounds: None,
        }
    }

    pub fn with_max_rounds(mut self, rounds: usize) -> Self {
        self.max_rounds = Some(rounds);
        self
    }
}

impl AnytimePlanner for HeuristicPlanner {
    fn name(&self) -> String {
        format!("{}:{}", self.rule.name(), self.seed)
    }

    fn run(
        &mut self,
        g: &Graph,
        budget: &Budget,
        emit: &mut dyn FnMut(TreeDecomposition),
    ) -> Result<(), PlannerError> {
        let mut round = 0usize;
        loop {
            if self.max_rounds.is_some_and(|m| round >= m) || budget.cancelled() {
                return Ok(());
            }
            // the first round always runs so a tight deadline still yields a plan
            if round > 0 && budget.expired() {
                return Ok(());
            }
            let order = elimination_order(g, self.rule, self.seed.wrapping_add(round as u64));
            emit(elimination_tree_decomposition(g, &order));
            round += 1;
        }
    }
}

/// A PACE-speaking solver: the graph goes to its stdin as `.gr`, every
/// complete `.td` document on its stdout is reported, and at the deadline it
/// gets SIGTERM, then SIGKILL after `grace`.
#[derive(Debug, Clone)]
pub struct ExternalPlanner {
    pub command: String,
    pub grace: Duration,
}

impl ExternalPlanner {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            grace: Duration::from_millis(500),
        }
    }
}

/// Splits a stream of lines into complete `.td` documents.
#[derive(Default)]
struct TdSplitter {
    doc: String,
    expect: Option<(usize, usize)>,
    bags: usize,
    arcs: usize,
}

impl TdSplitter {
    fn push(&mut self, line: &str) -> Option<String> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first() {
            None | Some(&"c") => return None,
            Some(&"s") => {
                *self = Self::default();
                let nb = toks.get(2).and_then(|t| t.parse::<usize>().ok())?;
                self.expect = Some((nb, nb.saturating_sub(1)));
            }
            Some(&"b") => self.bags += 1,
            Some(_) => self.arcs += 1,
        }
        self.expect?;
        self.doc.push_str(line);
        self.doc.push('\n');
        let (nb, na) = self.expect?;
        (self.bags >= nb && self.arcs >= na).then(|| std::mem::take(&mut *self).doc)
    }
}

fn terminate(child: &mut Child) {
    if let Ok(pid) = libc::pid_t::try_from(child.id()) {
        // SAFETY: plain signal delivery to our own child process
        unsafe {
            libc::kill(pid, libc::SIGTERM);
        }
    }
}

impl AnytimePlanner for ExternalPlanner {
    fn name(&self) -> String {
        format!("external:{}", self.command)
    }

    fn run(
        &mut self,
        g: &Graph,
        budget: &Budget,
        emit: &mut dyn FnMut(TreeDecomposition),
    ) -> Result<(), PlannerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| PlannerError::Spawn(self.command.clone(), e.to_string()))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let gr = emit_gr(g);
        let writer = thread::spawn(move || {
            // a solver may exit without reading everything
            let _ = stdin.write_all(gr.as_bytes());
        });

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = crossbeam_channel::unbounded::<String>();
        let reader = thread::spawn(move || {
            let mut splitter = TdSplitter::default();
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if let Some(doc) = splitter.push(&line) {
                    if tx.send(doc).is_err() {
                        break;
                    }
                }
            }
        });

        let mut produced = 0usize;
        let mut handle = |doc: String, produced: &mut usize| match parse_td(&doc) {
            Ok(td) => {
                *produced += 1;
                emit(td);
            }
            Err(e) => log::warn!("{}: unreadable decomposition: {e}", self.command),
        };

        let tick = Duration::from_millis(20);
        let mut term_sent: Option<Instant> = None;
        loop {
            match rx.recv_timeout(tick) {
                Ok(doc) => handle(doc, &mut produced),
                Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {}
            }
            match term_sent {
                None if budget.expired() => {
                    terminate(&mut child);
                    term_sent = Some(Instant::now());
                }
                Some(at) if at.elapsed() >= self.grace => {
                    let _ = child.kill();
                    break;
                }
                _ => {}
            }
        }
        let _ = child.wait();
        let _ = writer.join();
        let _ = reader.join();
        for doc in rx.try_iter() {
            handle(doc, &mut produced);
        }
        if produced == 0 {
            Err(PlannerError::NoOutput)
        } else {
            Ok(())
        }
    }
}

/// One admitted decomposition.
#[derive(Debug, Clone)]
pub struct StreamRecord {
    pub decomposition: TreeDecomposition,
    pub width: usize,
    pub found_after: Duration,
    pub planner: String,
}

struct Collator {
    best: Option<usize>,
    admitted: usize,
}

/// Receiving end of a running portfolio. Records arrive in discovery order
/// with strictly decreasing widths.
pub struct DecompositionStream {
    rx: Receiver<StreamRecord>,
    budget: Budget,
    collator: Arc<Mutex<Collator>>,
    workers: Vec<(String, JoinHandle<Result<(), PlannerError>>)>,
}

impl DecompositionStream {
    /// Starts one worker thread per planner.
    pub fn spawn(
        g: Arc<Graph>,
        planners: Vec<Box<dyn AnytimePlanner>>,
        deadline: Instant,
    ) -> Result<Self, PortfolioError> {
        if planners.is_empty() {
            return Err(PortfolioError::NoPlanners);
        }
        let start = Instant::now();
        let budget = Budget::new(deadline);
        let collator = Arc::new(Mutex::new(Collator {
            best: None,
            admitted: 0,
        }));
        let (tx, rx) = crossbeam_channel::unbounded();
        let workers = planners
            .into_iter()
            .map(|mut planner| {
                let name = planner.name();
                let g = Arc::clone(&g);
                let budget = budget.clone();
                let collator = Arc::clone(&collator);
                let tx: Sender<StreamRecord> = tx.clone();
                let worker_name = name.clone();
                let handle = thread::spawn(move || {
                    let mut emit = |td: TreeDecomposition| {
                        let width = match td.checked_width(&g) {
                            Ok(w) => w,
                            Err(e) => {
                                log::warn!("{worker_name}: dropped invalid decomposition: {e}");
                                return;
                            }
                        };
                        let mut c = collator.lock().expect("collator lock");
                        if c.best.is_some_and(|b| width >= b) {
                            return;
                        }
                        c.best = Some(width);
                        c.admitted += 1;
                        // sent under the lock so stream order is admission order
                        let _ = tx.send(StreamRecord {
                            decomposition: td,
                            width,
                            found_after: start.elapsed(),
                            planner: worker_name.clone(),
                        });
                    };
                    planner.run(&g, &budget, &mut emit)
                });
                (name, handle)
            })
            .collect();
        Ok(Self {
            rx,
            budget,
            collator,
            workers,
        })
    }

    /// Next record; `Disconnected` once every planner has stopped and the
    /// stream is drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<StreamRecord, RecvTimeoutError> {
        self.rx.recv_timeout(timeout)
    }

    pub fn recv(&self) -> Option<StreamRecord> {
        self.rx.recv().ok()
    }

    /// Asks every planner to stop early.
    pub fn cancel(&self) {
        self.budget.cancel();
    }

    /// Cancels, joins the workers, and reports whether anything was found.
    pub fn finish(self) -> Result<(), PortfolioError> {
        self.budget.cancel();
        let mut errors = Vec::new();
        let total = self.workers.len();
        for (name, handle) in self.workers {
            match handle.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => errors.push((name, e)),
                Err(_) => errors.push((name, PlannerError::Io("planner thread panicked".into()))),
            }
        }
        let admitted = self.collator.lock().expect("collator lock").admitted;
        if admitted > 0 {
            Ok(())
        } else if errors.len() == total {
            Err(PortfolioError::AllPlannersFailed(errors))
        } else {
            Err(PortfolioError::NoDecomposition)
        }
    }
}

/// Runs the planners to completion or the deadline and returns the whole
/// stream.
pub fn portfolio_plan(
    g: &Graph,
    planners: Vec<Box<dyn AnytimePlanner>>,
    deadline: Instant,
) -> Result<Vec<StreamRecord>, PortfolioError> {
    let stream = DecompositionStream::spawn(Arc::new(g.clone()), planners, deadline)?;
    let mut out = Vec::new();
    while let Some(r) = stream.recv() {
        out.push(r);
    }
    stream.finish()?;
    Ok(out)
}
