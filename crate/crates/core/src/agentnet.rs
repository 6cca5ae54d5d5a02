//! Message-passing executor: one thread per agent, synchronous rounds.
//!
//! An agent thread holds its own blocks and talks to the rest of the network
//! only through its inbox and the senders of its neighbors. Neighbor blocks
//! are read through a [`LocalView`] that holds exactly the payloads delivered
//! in the current round; reading anything else is a locality violation.
//! A coordinator thread observes each finished round to build the trace.

use std::cell::{Cell, RefCell};
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::blockvec::{AgentState, PrimalDualState};
use crate::error::{Error, Result};
use crate::operators::StateView;
use crate::solver::kernel;
use crate::solver::{RunOutput, Solver, StepOutput, StopReason, Variant};
use crate::stochastic::{Phase, StreamKey};

/// The two exchange rounds of an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangePhase {
    /// Inertial points `Z_k`.
    #[serde(rename = "inertial-exchange")]
    Inertial,
    /// Mid points `Y_k`.
    #[serde(rename = "mid-exchange")]
    Mid,
}

/// What a message may carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    /// The sender's strategy block, for agents whose cost depends on it.
    Strategy { u: Vec<f64> },
    /// The sender's dual blocks, for its graph neighbors.
    Dual { mu: Vec<f64>, lambda: Vec<f64> },
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Strategy { .. } => "strategy",
            Payload::Dual { .. } => "dual",
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::Strategy { u } => u.len(),
            Payload::Dual { mu, lambda } => mu.len() + lambda.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub receiver: usize,
    pub iteration: usize,
    pub phase: ExchangePhase,
    pub payload: Payload,
}

/// One line of the message dump.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageRecord {
    pub k: usize,
    pub phase: ExchangePhase,
    pub sender: usize,
    pub receiver: usize,
    pub payload: String,
    pub len: usize,
}

/// Writes records as JSON lines.
pub fn write_message_log<W: Write>(records: &[MessageRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct NetOptions {
    /// Count and log every read of another agent's block.
    pub audit: bool,
    /// Keep a [`MessageRecord`] per message.
    pub record_messages: bool,
    /// How long an agent waits for a message before reporting a deadlock.
    pub timeout: Duration,
}

impl Default for NetOptions {
    fn default() -> Self {
        NetOptions {
            audit: false,
            record_messages: false,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug)]
pub struct NetworkOutput {
    pub run: RunOutput,
    /// Messages sent in each executed iteration.
    pub messages_per_iteration: Vec<usize>,
    /// Sorted by iteration, phase, sender and receiver.
    pub log: Vec<MessageRecord>,
    /// Reads of neighbor blocks (audit mode only).
    pub cross_reads: usize,
}

/// Messages per exchange round: `Σ_i |N_i^λ| + Σ_i |N_i^A|`.
pub fn messages_per_round(solver: &Solver) -> usize {
    let op = solver.operator();
    let n = op.problem().num_agents();
    (0..n)
        .map(|i| op.graph().neighbors(i).len() + op.problem().interaction_neighbors(i).len())
        .sum()
}

/// Neighbor blocks available to one agent in one round.
pub struct LocalView<'a> {
    agent: usize,
    own: &'a AgentState,
    strategies: &'a [Option<Vec<f64>>],
    duals: &'a [Option<(Vec<f64>, Vec<f64>)>],
    nan: Vec<f64>,
    audit: bool,
    reads: Cell<usize>,
    violation: RefCell<Option<String>>,
}

impl<'a> LocalView<'a> {
    fn new(
        agent: usize,
        own: &'a AgentState,
        strategies: &'a [Option<Vec<f64>>],
        duals: &'a [Option<(Vec<f64>, Vec<f64>)>],
        audit: bool,
        widest: usize,
    ) -> Self {
        LocalView {
            agent,
            own,
            strategies,
            duals,
            nan: vec![f64::NAN; widest],
            audit,
            reads: Cell::new(0),
            violation: RefCell::new(None),
        }
    }

    fn remote<'s>(&'s self, j: usize, field: &str, found: Option<&'s [f64]>) -> &'s [f64] {
        if self.audit {
            self.reads.set(self.reads.get() + 1);
            log::trace!("agent {} reads {field}_{j}", self.agent);
        }
        match found {
            Some(v) => v,
            None => {
                self.violation.borrow_mut().get_or_insert_with(|| format!("{field}_{j}"));
                &self.nan
            }
        }
    }

    fn check(&self) -> Result<()> {
        match self.violation.borrow().clone() {
            Some(field) => Err(Error::Locality {
                agent: self.agent,
                field,
            }),
            None => Ok(()),
        }
    }
}

impl StateView for LocalView<'_> {
    fn u_block(&self, j: usize) -> &[f64] {
        if j == self.agent {
            return &self.own.u;
        }
        let found = self.strategies.get(j).and_then(|s| s.as_deref());
        self.remote(j, "u", found)
    }

    fn mu_block(&self, j: usize) -> &[f64] {
        if j == self.agent {
            return &self.own.mu;
        }
        let found = self.duals.get(j).and_then(|d| d.as_ref()).map(|d| d.0.as_slice());
        self.remote(j, "mu", found)
    }

    fn lambda_block(&self, j: usize) -> &[f64] {
        if j == self.agent {
            return &self.own.lambda;
        }
        let found = self.duals.get(j).and_then(|d| d.as_ref()).map(|d| d.1.as_slice());
        self.remote(j, "lambda", found)
    }
}

enum Control {
    Go(usize),
    Stop,
}

#[derive(Default)]
struct Traffic {
    sent: usize,
    records: Vec<MessageRecord>,
}

struct RoundResult {
    z: AgentState,
    a: AgentState,
    y: AgentState,
    b: Option<AgentState>,
    next: AgentState,
    traffic: Traffic,
    reads: usize,
}

enum Report {
    Done(usize, Box<RoundResult>),
    /// `(agent, phase rank, error)`; lower ranks happen earlier in a round.
    Failed(usize, u8, Error),
    Aborted,
}

/// Phase ranks used to pick the error the sequential executor would raise.
const RANK_INERTIA: u8 = 0;
const RANK_FORWARD: u8 = 1;
const RANK_CORRECTION: u8 = 2;
const RANK_TRANSPORT: u8 = 3;

struct Node<'a> {
    id: usize,
    solver: &'a Solver,
    state: AgentState,
    prev: AgentState,
    /// Agents that receive this agent's strategy block.
    strategy_to: Vec<usize>,
    /// Graph neighbors.
    dual_to: Vec<usize>,
    /// `N_i^A`.
    strategy_from: Vec<usize>,
    outbox: Vec<(usize, Sender<Message>)>,
    inbox: Receiver<Message>,
    pending: Vec<Message>,
    options: NetOptions,
    abort: &'a AtomicBool,
    n: usize,
    /// Longest block of any agent, the length of NaN stand-ins.
    widest: usize,
}

/// `Err(None)` means the round was aborted elsewhere.
type Step<T> = std::result::Result<T, Option<(u8, Error)>>;

impl Node<'_> {
    fn send(&self, k: usize, phase: ExchangePhase, s: &AgentState, round: &mut Traffic) {
        let mut post = |to: usize, payload: Payload| {
            round.sent += 1;
            if self.options.record_messages {
                round.records.push(MessageRecord {
                    k,
                    phase,
                    sender: self.id,
                    receiver: to,
                    payload: payload.kind().into(),
                    len: payload.len(),
                });
            }
            let tx = &self.outbox.iter().find(|(j, _)| *j == to).expect("sender for every neighbor").1;
            // A closed inbox means the receiver already stopped; the coordinator
            // learns why from its report.
            let _ = tx.send(Message {
                sender: self.id,
                receiver: to,
                iteration: k,
                phase,
                payload,
            });
        };
        for &j in &self.strategy_to {
            post(j, Payload::Strategy { u: s.u.clone() });
        }
        for &j in &self.dual_to {
            post(
                j,
                Payload::Dual {
                    mu: s.mu.clone(),
                    lambda: s.lambda.clone(),
                },
            );
        }
    }

    /// Waits for every payload of round `(k, phase)`.
    #[allow(clippy::type_complexity)]
    fn receive(
        &mut self,
        k: usize,
        phase: ExchangePhase,
    ) -> Step<(Vec<Option<Vec<f64>>>, Vec<Option<(Vec<f64>, Vec<f64>)>>)> {
        let mut strategies = vec![None; self.n];
        let mut duals = vec![None; self.n];
        let mut missing: Vec<(usize, &str)> = self
            .strategy_from
            .iter()
            .map(|&j| (j, "strategy"))
            .chain(self.dual_to.iter().map(|&j| (j, "dual")))
            .collect();
        let deadline = Instant::now() + self.options.timeout;
        let mut take = |m: Message, missing: &mut Vec<(usize, &str)>| {
            let kind = m.payload.kind();
            if let Some(pos) = missing.iter().position(|&(j, t)| j == m.sender && t == kind) {
                missing.swap_remove(pos);
            }
            match m.payload {
                Payload::Strategy { u } => strategies[m.sender] = Some(u),
                Payload::Dual { mu, lambda } => duals[m.sender] = Some((mu, lambda)),
            }
        };
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].iteration == k && self.pending[i].phase == phase {
                let m = self.pending.swap_remove(i);
                take(m, &mut missing);
            } else {
                i += 1;
            }
        }
        while !missing.is_empty() {
            if self.abort.load(Ordering::SeqCst) {
                return Err(None);
            }
            match self.inbox.recv_timeout(Duration::from_millis(5)) {
                Ok(m) if m.iteration == k && m.phase == phase => take(m, &mut missing),
                Ok(m) => self.pending.push(m),
                Err(RecvTimeoutError::Timeout) if Instant::now() < deadline => {}
                Err(_) => {
                    let (sender, _) = missing[0];
                    return Err(Some((
                        RANK_TRANSPORT,
                        Error::Deadlock {
                            phase: match phase {
                                ExchangePhase::Inertial => "inertial-exchange".into(),
                                ExchangePhase::Mid => "mid-exchange".into(),
                            },
                            iteration: k,
                            agent: self.id,
                            sender,
                        },
                    )));
                }
            }
        }
        Ok((strategies, duals))
    }

    fn round(&mut self, k: usize, seed: u64) -> Step<RoundResult> {
        let s = self.solver;
        let op = s.operator();
        let orc = &**s.oracle();
        let steps = s.agent_steps(self.id);
        let batch = s.batch_size(k);
        let sfb = s.params().variant == Variant::Sfb;
        let mut traffic = Traffic::default();
        let mut reads = 0;
        let z = if sfb {
            self.state.clone()
        } else {
            kernel::inertia(&self.state, &self.prev, s.alpha(k))
        };
        if !z.is_finite() {
            return Err(Some((
                RANK_INERTIA,
                Error::Diverged {
                    iteration: k,
                    phase: "inertia".into(),
                },
            )));
        }
        self.send(k, ExchangePhase::Inertial, &z, &mut traffic);
        let (st, du) = self.receive(k, ExchangePhase::Inertial)?;
        let view = LocalView::new(self.id, &z, &st, &du, self.options.audit, self.widest);
        let key = StreamKey {
            seed,
            iteration: k,
            phase: Phase::Xi,
        };
        let fwd = kernel::forward(op, orc, self.id, steps, &view, batch, key);
        view.check().map_err(|e| Some((RANK_FORWARD, e)))?;
        let (a, y) = fwd.map_err(|e| Some((RANK_FORWARD, e)))?;
        reads += view.reads.get();
        let (b, next) = if sfb {
            (None, y.clone())
        } else {
            self.send(k, ExchangePhase::Mid, &y, &mut traffic);
            let (st, du) = self.receive(k, ExchangePhase::Mid)?;
            let view = LocalView::new(self.id, &y, &st, &du, self.options.audit, self.widest);
            let key = StreamKey {
                seed,
                iteration: k,
                phase: Phase::Eta,
            };
            let cor = kernel::correct(op, orc, self.id, steps, &view, &z, &a, s.rho(k), batch, key);
            view.check().map_err(|e| Some((RANK_CORRECTION, e)))?;
            let (b, next) = cor.map_err(|e| Some((RANK_CORRECTION, e)))?;
            reads += view.reads.get();
            (Some(b), next)
        };
        Ok(RoundResult {
            z,
            a,
            y,
            b,
            next,
            traffic,
            reads,
        })
    }

    fn run(mut self, control: Receiver<Control>, reports: Sender<Report>, seed: u64) {
        while let Ok(Control::Go(k)) = control.recv() {
            let report = match self.round(k, seed) {
                Ok(r) => {
                    self.prev = std::mem::replace(&mut self.state, r.next.clone());
                    Report::Done(self.id, Box::new(r))
                }
                Err(Some((rank, e))) => Report::Failed(self.id, rank, e),
                Err(None) => Report::Aborted,
            };
            let stop = !matches!(report, Report::Done(..));
            if reports.send(report).is_err() || stop {
                return;
            }
        }
    }
}

/// Runs the configured variant with one thread per agent.
///
/// Under the same `(configuration, seed)` the trace equals that of
/// [`Solver::run`] bit for bit.
pub fn run_distributed(
    solver: &Solver,
    x0: &PrimalDualState,
    seed: u64,
    reference: Option<&PrimalDualState>,
    options: &NetOptions,
) -> Result<NetworkOutput> {
    solver.check_start(x0, reference)?;
    let op = solver.operator();
    let problem = op.problem();
    let part = problem.partition().clone();
    let n = part.num_agents();
    let params = solver.params();
    let start = Instant::now();

    let strategy_from: Vec<Vec<usize>> = (0..n).map(|i| problem.interaction_neighbors(i).to_vec()).collect();
    let mut strategy_to = vec![Vec::new(); n];
    for (i, from) in strategy_from.iter().enumerate() {
        for &j in from {
            strategy_to[j].push(i);
        }
    }
    let dual_to: Vec<Vec<usize>> = (0..n)
        .map(|i| op.graph().neighbors(i).iter().map(|&(j, _)| j).collect())
        .collect();

    let widest = part.dims().iter().copied().chain([part.constraint_dim()]).max().unwrap_or(0);
    let (inbox_tx, inbox_rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<Message>()).unzip();
    let (control_tx, control_rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<Control>()).unzip();
    let (report_tx, report_rx) = mpsc::channel::<Report>();
    let abort = AtomicBool::new(false);

    std::thread::scope(|scope| {
        for (i, (inbox, control)) in inbox_rx.into_iter().zip(control_rx).enumerate() {
            let mut targets: Vec<usize> = strategy_to[i].iter().chain(&dual_to[i]).copied().collect();
            targets.sort_unstable();
            targets.dedup();
            let node = Node {
                id: i,
                solver,
                state: x0.agent_state(i),
                prev: x0.agent_state(i),
                strategy_to: strategy_to[i].clone(),
                dual_to: dual_to[i].clone(),
                strategy_from: strategy_from[i].clone(),
                outbox: targets.iter().map(|&j| (j, inbox_tx[j].clone())).collect(),
                inbox,
                pending: Vec::new(),
                options: options.clone(),
                abort: &abort,
                n,
                widest,
            };
            let reports = report_tx.clone();
            scope.spawn(move || node.run(control, reports, seed));
        }
        drop(inbox_tx);
        drop(report_tx);

        let mut trace = solver.empty_trace();
        let mut x_prev = x0.clone();
        let mut x = x0.clone();
        let mut stop = StopReason::IterationLimit;
        let mut per_iteration = Vec::new();
        let mut log = Vec::new();
        let mut cross_reads = 0;
        for k in 0..params.max_iters {
            for c in &control_tx {
                let _ = c.send(Control::Go(k));
            }
            let mut rounds: Vec<Option<Box<RoundResult>>> = (0..n).map(|_| None).collect();
            let mut failure: Option<(u8, usize, Error)> = None;
            let mut lost = false;
            for _ in 0..n {
                match report_rx.recv_timeout(options.timeout * 2) {
                    Ok(Report::Done(i, r)) => rounds[i] = Some(r),
                    Ok(Report::Failed(i, rank, e)) => {
                        abort.store(true, Ordering::SeqCst);
                        if failure.as_ref().is_none_or(|(r, a, _)| (rank, i) < (*r, *a)) {
                            failure = Some((rank, i, e));
                        }
                    }
                    Ok(Report::Aborted) => {}
                    Err(_) => {
                        abort.store(true, Ordering::SeqCst);
                        lost = true;
                        break;
                    }
                }
            }
            if let Some((_, _, e)) = failure {
                stop = StopReason::Aborted(e);
                break;
            }
            if lost {
                stop = StopReason::Aborted(Error::Deadlock {
                    phase: "report".into(),
                    iteration: k,
                    agent: n,
                    sender: rounds.iter().position(Option::is_none).unwrap_or(0),
                });
                break;
            }
            let rounds: Vec<Box<RoundResult>> = rounds.into_iter().map(|r| r.expect("all reported")).collect();
            let mut out = StepOutput {
                alpha: if params.variant == Variant::Sfb { 0.0 } else { solver.alpha(k) },
                rho: if params.variant == Variant::Sfb { 1.0 } else { solver.rho(k) },
                z: PrimalDualState::zeros(part.clone()),
                a: PrimalDualState::zeros(part.clone()),
                y: PrimalDualState::zeros(part.clone()),
                b: (params.variant != Variant::Sfb).then(|| PrimalDualState::zeros(part.clone())),
                next: PrimalDualState::zeros(part.clone()),
            };
            let mut sent = 0;
            for (i, r) in rounds.into_iter().enumerate() {
                out.z.set_agent(i, &r.z);
                out.a.set_agent(i, &r.a);
                out.y.set_agent(i, &r.y);
                if let (Some(b), Some(rb)) = (out.b.as_mut(), r.b.as_ref()) {
                    b.set_agent(i, rb);
                }
                out.next.set_agent(i, &r.next);
                sent += r.traffic.sent;
                cross_reads += r.reads;
                log.extend(r.traffic.records);
            }
            per_iteration.push(sent);
            let mut rec = match solver.observe(k, &x_prev, &x, &out, reference) {
                Ok(r) => r,
                Err(e) => {
                    stop = StopReason::Aborted(e);
                    break;
                }
            };
            trace.iterations = k + 1;
            let converged = rec.r_psi < params.tol;
            let last = converged || k + 1 == params.max_iters;
            if solver.keeps(k, last) {
                solver.compute_res(&mut rec, &out.next, last);
                trace.records.push(rec);
            }
            x_prev = x;
            x = out.next;
            if converged {
                stop = StopReason::Converged { iteration: k };
                break;
            }
        }
        for c in &control_tx {
            let _ = c.send(Control::Stop);
        }
        log.sort();
        Ok(NetworkOutput {
            run: RunOutput {
                state: x,
                trace,
                stop,
                wall_time_secs: start.elapsed().as_secs_f64(),
            },
            messages_per_iteration: per_iteration,
            log,
            cross_reads,
        })
    })
}
