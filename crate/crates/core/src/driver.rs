//! End-to-end counting: parse, reduce, plan anytime until the plan is good
//! enough for the time spent, then execute with slicing under a memory
//! budget. Also the corpus benchmark harness.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::RecvTimeoutError;
use thiserror::Error;

use crate::factoring::{factor_branch_structured, FactorPlan, StructuredTensor};
use crate::formula::{parse_dimacs, CnfFormula, FormulaError, WeightFunction};
use crate::graph::portfolio::{AnytimePlanner, DecompositionStream, ExternalPlanner, HeuristicPlanner};
use crate::graph::{tree_to_branch, EliminationRule};
use crate::network::{max_rank, op_count, structure_graph_of, ContractionTree, TensorNetwork, DEFAULT_THROUGHPUT};
use crate::reduction::reduce_structured;
use crate::slicing::{mem_cost, sliced_execute_until, SliceError};
use crate::tensor::{entry_count, Index};

/// Performance factors per planner: single core, eight cores, GPU.
pub const PERFORMANCE_FACTORS: [(&str, f64, f64, f64); 6] = [
    ("Tamaki", 3.8e-11, 7.8e-12, 2.1e-12),
    ("FlowCutter", 4.8e-12, 1.8e-12, 5.5e-13),
    ("htd", 1.6e-12, 1.3e-12, 1.3e-12),
    ("Hicks", 1.0e-21, 1.0e-21, 1.0e-21),
    ("P3", 1.4e-11, 5.5e-12, 3.0e-12),
    ("P4", 1.6e-11, 6.2e-12, 3.8e-12),
];

fn single_core_factor(name: &str) -> f64 {
    PERFORMANCE_FACTORS
        .iter()
        .find(|row| row.0 == name)
        .map(|row| row.1)
        .expect("known planner row")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannerChoice {
    MinFill,
    MinDegree,
    Portfolio,
    External(String),
}

impl PlannerChoice {
    /// Single-planner runs use the best single-core solver's factor; the
    /// portfolio uses the four-solver portfolio's.
    pub fn default_alpha(&self) -> f64 {
        match self {
            PlannerChoice::Portfolio => single_core_factor("P4"),
            _ => single_core_factor("Tamaki"),
        }
    }
}

impl FromStr for PlannerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minfill" => Ok(PlannerChoice::MinFill),
            "mindegree" => Ok(PlannerChoice::MinDegree),
            "portfolio" => Ok(PlannerChoice::Portfolio),
            _ => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(PlannerChoice::External(cmd.to_string())),
                _ => Err(format!(
                    "unknown planner `{s}` (expected minfill, mindegree, portfolio or external:<cmd>)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct CountOptions {
    pub timeout: Duration,
    /// `None` picks the planner's default factor.
    pub alpha: Option<f64>,
    pub planner: PlannerChoice,
    pub mem_budget: u128,
    pub jobs: usize,
    pub seed: u64,
    /// Cap on heuristic rounds per in-process planner.
    pub rounds: Option<usize>,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(1000),
            alpha: None,
            planner: PlannerChoice::MinFill,
            mem_budget: 1 << 30,
            jobs: 1,
            seed: 0,
            rounds: Some(8),
        }
    }
}

impl CountOptions {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| self.planner.default_alpha())
    }

    fn planners(&self) -> Vec<Box<dyn AnytimePlanner>> {
        let heuristic = |rule| {
            let mut p = HeuristicPlanner::new(rule, self.seed);
            p.max_rounds = self.rounds;
            Box::new(p) as Box<dyn AnytimePlanner>
        };
        match &self.planner {
            PlannerChoice::MinFill => vec![heuristic(EliminationRule::MinFill)],
            PlannerChoice::MinDegree => vec![heuristic(EliminationRule::MinDegree)],
            PlannerChoice::Portfolio => vec![heuristic(EliminationRule::MinFill), heuristic(EliminationRule::MinDegree)],
            PlannerChoice::External(cmd) => vec![Box::new(ExternalPlanner::new(cmd.clone()))],
        }
    }
}

/// Summary of one candidate plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStats {
    pub tree_width: usize,
    pub branch_width: usize,
    /// Carving width of the intermediate carving built while factoring.
    pub s_width: usize,
    pub max_rank: usize,
    pub time_cost: f64,
    pub mem_cost: u128,
    pub found_after: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct StageTimes {
    pub parse: Duration,
    pub reduce: Duration,
    pub plan: Duration,
    pub execute: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct CountReport {
    pub count: f64,
    pub num_vars: usize,
    pub num_clauses: usize,
    pub num_tensors: usize,
    /// Every plan built during planning, in order.
    pub plans: Vec<PlanStats>,
    /// Stats of the executed plan.
    pub chosen: PlanStats,
    /// True when no decomposition arrived and a greedy plan was used.
    pub fallback: bool,
    pub plan_text: String,
    pub sliced: Vec<Index>,
    pub slices: u64,
    pub peak_bytes: u128,
    pub times: StageTimes,
}

impl CountReport {
    /// `s wmc <count>` followed by `c` statistics lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let c = &self.chosen;
        let t = &self.times;
        writeln!(out, "c vars {} clauses {} tensors {}", self.num_vars, self.num_clauses, self.num_tensors).unwrap();
        writeln!(
            out,
            "c plans {} fallback {} treewidth {} branchwidth {} max_rank {}",
            self.plans.len(),
            self.fallback,
            c.tree_width,
            c.branch_width,
            c.max_rank
        )
        .unwrap();
        writeln!(out, "c time_cost {:.3e} mem_cost {}", c.time_cost, c.mem_cost).unwrap();
        let ids: Vec<String> = self.sliced.iter().map(|i| i.id().to_string()).collect();
        writeln!(
            out,
            "c sliced [{}] slices {} peak_bytes {}",
            ids.join(","),
            self.slices,
            self.peak_bytes
        )
        .unwrap();
        writeln!(
            out,
            "c seconds parse {:.6} reduce {:.6} plan {:.6} execute {:.6} total {:.6}",
            t.parse.as_secs_f64(),
            t.reduce.as_secs_f64(),
            t.plan.as_secs_f64(),
            t.execute.as_secs_f64(),
            t.total.as_secs_f64()
        )
        .unwrap();
        writeln!(out, "s wmc {}", self.count).unwrap();
        out
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Parse(#[from] FormulaError),
    #[error("timed out{}", .best.as_ref().map(|b| format!(" (best plan max_rank {}, time_cost {:.3e})", b.max_rank, b.time_cost)).unwrap_or_default())]
    Timeout { best: Option<PlanStats> },
    #[error("memory budget of {budget} bytes is infeasible: a slice needs {needed}")]
    BudgetInfeasible { needed: u128, budget: u128 },
    #[error("the memory budget needs {0} slices")]
    TooManySlices(u128),
    #[error("execution failed: {0}")]
    Execution(String),
}

/// Anytime stopping rule: with the plan of estimated cost `c` in hand,
/// planning stops as soon as `alpha * c < elapsed`.
#[derive(Debug, Clone)]
pub struct PlanningGuard {
    alpha: f64,
    current: Option<f64>,
}

impl PlanningGuard {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, current: None }
    }

    /// A new plan replaces the one in hand.
    pub fn offer(&mut self, time_cost: f64) {
        self.current = Some(time_cost);
    }

    pub fn should_stop(&self, elapsed: f64) -> bool {
        self.current.is_some_and(|c| self.alpha * c < elapsed)
    }

    /// Elapsed time after which the plan in hand is good enough.
    pub fn stop_after(&self) -> Option<f64> {
        self.current.map(|c| self.alpha * c)
    }
}

/// Outcome of replaying the guard on a scripted planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardOutcome {
    pub chosen: usize,
    pub stop_time: f64,
}

/// Replays the guard against plans arriving at `script[i] = (time, cost)`
/// (times increasing). Plan `i` is executed when the guard fires before plan
/// `i+1` arrives; once the script runs out at `exhausted_at` planning stops.
pub fn simulate_guard(alpha: f64, script: &[(f64, f64)], exhausted_at: Option<f64>) -> Option<GuardOutcome> {
    let mut guard = PlanningGuard::new(alpha);
    for (i, &(arrival, cost)) in script.iter().enumerate() {
        guard.offer(cost);
        let fires = guard.stop_after().expect("plan in hand").max(arrival);
        match script.get(i + 1) {
            // strict: a plan arriving exactly when the guard would fire wins
            Some(&(next, _)) if !guard.should_stop(next) => continue,
            Some(_) => return Some(GuardOutcome { chosen: i, stop_time: fires }),
            None => {
                let stop = exhausted_at.map_or(fires, |e| fires.min(e.max(arrival)));
                return Some(GuardOutcome { chosen: i, stop_time: stop });
            }
        }
    }
    None
}

struct Candidate {
    plan: FactorPlan,
    stats: PlanStats,
}

fn build_candidate(
    tensors: &[StructuredTensor],
    graph: &crate::graph::Graph,
    record: &crate::graph::portfolio::StreamRecord,
) -> Option<Candidate> {
    let bd = match tree_to_branch(&record.decomposition, graph) {
        Ok(bd) => bd,
        Err(e) => {
            log::warn!("dropping decomposition from {}: {e}", record.planner);
            return None;
        }
    };
    let plan = match factor_branch_structured(tensors, &bd) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("factoring failed: {e}");
            return None;
        }
    };
    let time_cost = op_count(&plan.network, &plan.tree).ok()? / DEFAULT_THROUGHPUT;
    let mem = mem_cost(&plan.network, &plan.tree, &Default::default()).ok()?;
    let stats = PlanStats {
        tree_width: record.width,
        branch_width: plan.branch_width,
        s_width: plan.h_carving_width,
        max_rank: plan.max_rank,
        time_cost,
        mem_cost: mem,
        found_after: record.found_after,
    };
    log::info!(
        "plan from {}: treewidth {} branchwidth {} max_rank {} time_cost {:.3e}",
        record.planner,
        stats.tree_width,
        stats.branch_width,
        stats.max_rank,
        stats.time_cost
    );
    Some(Candidate { plan, stats })
}

/// Contracts the unfactored network greedily; only reached when planning
/// produced nothing, so every tensor is materialized in full first.
fn greedy_candidate(
    tensors: &[StructuredTensor],
    budget: u128,
) -> Result<(TensorNetwork, ContractionTree, PlanStats), DriverError> {
    let largest = tensors.iter().map(|t| entry_count(t.indices()) * 8).max().unwrap_or(0);
    if largest > budget {
        return Err(DriverError::BudgetInfeasible { needed: largest, budget });
    }
    let dense = tensors
        .iter()
        .map(StructuredTensor::materialize)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DriverError::Execution(e.to_string()))?;
    let network = &TensorNetwork::new(dense).map_err(|e| DriverError::Execution(e.to_string()))?;
    let tree = ContractionTree::greedy(network);
    let err = |e: crate::network::NetworkError| DriverError::Execution(e.to_string());
    let stats = PlanStats {
        tree_width: 0,
        branch_width: 0,
        s_width: 0,
        max_rank: max_rank(network, &tree).map_err(err)?,
        time_cost: op_count(network, &tree).map_err(err)? / DEFAULT_THROUGHPUT,
        mem_cost: mem_cost(network, &tree, &Default::default()).map_err(|e| DriverError::Execution(e.to_string()))?,
        found_after: Duration::ZERO,
    };
    Ok((network.clone(), tree, stats))
}

/// Counts an already parsed formula.
pub fn count_formula(
    formula: &CnfFormula,
    weights: &WeightFunction,
    opts: &CountOptions,
) -> Result<CountReport, DriverError> {
    let start = Instant::now();
    let deadline = start + opts.timeout;
    let mut times = StageTimes::default();

    let t0 = Instant::now();
    let tensors = reduce_structured(formula, weights);
    times.reduce = t0.elapsed();

    let plan_start = Instant::now();
    let sg = structure_graph_of(tensors.iter().map(StructuredTensor::indices));
    let mut plans = Vec::new();
    let mut current: Option<Candidate> = None;
    if sg.graph.num_edges() > 0 {
        let graph = Arc::new(sg.graph.clone());
        let stream = DecompositionStream::spawn(Arc::clone(&graph), opts.planners(), deadline)
            .map_err(|e| DriverError::Execution(e.to_string()))?;
        let mut guard = PlanningGuard::new(opts.alpha());
        loop {
            let elapsed = plan_start.elapsed().as_secs_f64();
            if guard.should_stop(elapsed) || Instant::now() >= deadline {
                break;
            }
            let until_deadline = deadline.saturating_duration_since(Instant::now());
            let wait = match guard.stop_after() {
                // wake just after the guard would fire
                Some(s) => Duration::from_secs_f64((s - elapsed).max(0.0) + 1e-6).min(until_deadline),
                None => until_deadline,
            };
            match stream.recv_timeout(wait) {
                Ok(record) => {
                    if let Some(c) = build_candidate(&tensors, &graph, &record) {
                        guard.offer(c.stats.time_cost);
                        plans.push(c.stats.clone());
                        current = Some(c);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        if let Err(e) = stream.finish() {
            log::warn!("planning: {e}");
        }
    }
    times.plan = plan_start.elapsed();

    let (exec_net, exec_tree, chosen, fallback) = match current {
        Some(c) => (c.plan.network, c.plan.tree, c.stats, false),
        None => {
            if Instant::now() >= deadline && sg.graph.num_edges() > 0 {
                return Err(DriverError::Timeout { best: None });
            }
            let (n, t, s) = greedy_candidate(&tensors, opts.mem_budget)?;
            (n, t, s, true)
        }
    };
    log::info!("executing plan with max_rank {}", chosen.max_rank);

    let t0 = Instant::now();
    let outcome = sliced_execute_until(&exec_net, &exec_tree, opts.mem_budget, opts.jobs, Some(deadline));
    times.execute = t0.elapsed();
    let outcome = match outcome {
        Ok(o) => o,
        Err(SliceError::BudgetInfeasible { needed, budget }) => {
            return Err(DriverError::BudgetInfeasible { needed, budget })
        }
        Err(SliceError::Interrupted) => return Err(DriverError::Timeout { best: Some(chosen) }),
        Err(SliceError::TooManySlices(n)) => return Err(DriverError::TooManySlices(n)),
        Err(e) => return Err(DriverError::Execution(e.to_string())),
    };
    times.total = start.elapsed();
    let count = outcome
        .value
        .scalar_value()
        .ok_or_else(|| DriverError::Execution("result is not a scalar".into()))?;
    Ok(CountReport {
        count,
        num_vars: formula.num_vars(),
        num_clauses: formula.clauses().len(),
        num_tensors: tensors.len(),
        plans,
        chosen,
        fallback,
        plan_text: exec_tree.to_plan_string(),
        sliced: outcome.sliced,
        slices: outcome.slices,
        peak_bytes: outcome.peak,
        times,
    })
}

/// Reads, parses and counts one instance file.
pub fn count(path: &Path, opts: &CountOptions) -> Result<CountReport, DriverError> {
    let start = Instant::now();
    let file = std::fs::File::open(path).map_err(|e| DriverError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (formula, weights) = parse_dimacs(std::io::BufReader::new(file))?;
    let parse = start.elapsed();
    let mut opts = opts.clone();
    opts.timeout = opts.timeout.saturating_sub(parse);
    let mut report = count_formula(&formula, &weights, &opts)?;
    report.times.parse = parse;
    report.times.total = start.elapsed();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchStatus {
    Solved(f64),
    Timeout,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchEntry {
    pub name: String,
    pub seconds: f64,
    pub status: BenchStatus,
}

/// Solved wall times plus twice the timeout for every unsolved instance.
pub fn par2(entries: &[BenchEntry], timeout: Duration) -> f64 {
    entries
        .iter()
        .map(|e| match e.status {
            BenchStatus::Solved(_) => e.seconds,
            _ => 2.0 * timeout.as_secs_f64(),
        })
        .fold(0.0, |a, b| a + b)
}

/// Runs every regular file of `dir` (sorted by name) through `count`.
pub fn bench(dir: &Path, opts: &CountOptions) -> Result<Vec<BenchEntry>, DriverError> {
    let io = |e: std::io::Error| DriverError::Io {
        path: dir.to_path_buf(),
        msg: e.to_string(),
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files
        .iter()
        .map(|path| {
            let start = Instant::now();
            let result = count(path, opts);
            let seconds = start.elapsed().as_secs_f64();
            let status = match result {
                Ok(r) if seconds <= opts.timeout.as_secs_f64() => BenchStatus::Solved(r.count),
                Ok(_) | Err(DriverError::Timeout { .. }) => BenchStatus::Timeout,
                Err(e) => BenchStatus::Failed(e.to_string()),
            };
            BenchEntry {
                name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                seconds,
                status,
            }
        })
        .collect())
}

pub fn render_bench(entries: &[BenchEntry], timeout: Duration) -> String {
    let mut out = String::new();
    for e in entries {
        let status = match &e.status {
            BenchStatus::Solved(c) => format!("solved {c}"),
            BenchStatus::Timeout => "timeout".to_string(),
            BenchStatus::Failed(msg) => format!("failed {msg}"),
        };
        writeln!(out, "c {} {:.6} {}", e.name, e.seconds, status).unwrap();
    }
    let solved = entries.iter().filter(|e| matches!(e.status, BenchStatus::Solved(_))).count();
    writeln!(out, "s par2 {:.6} solved {} of {}", par2(entries, timeout), solved, entries.len()).unwrap();
    out
}
