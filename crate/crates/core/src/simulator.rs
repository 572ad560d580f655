//! Deterministic discrete-event simulator of the two timed protocols.
//!
//! * `P1`: workers share every stochastic gradient with the server for free;
//!   only server-to-worker messages cost `tau_s` per coordinate.
//! * `P2`: worker-to-server traffic also goes through messages costing `tau_w`
//!   per coordinate.
//!
//! Each worker computes at most one gradient at a time (exactly `h` seconds).
//! Each (direction, worker) channel is FIFO with one message in flight; a
//! message of `P` coordinates occupies the channel for `P * tau` seconds and is
//! handed to the receiver whole when its last coordinate lands.
//!
//! Every node keeps a support closure: the coordinates it has seen nonzero in
//! a gradient it computed or received, or in a message it received. Points and
//! messages a node emits must stay inside its closure.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compressors::SparseMessage;
use crate::error::{Error, Result};
use crate::oracle;
use crate::rng::{purpose, substream, Stream};
use crate::worstcase::ObjectiveInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    P1,
    P2,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(Protocol::P1),
            "p2" => Ok(Protocol::P2),
            other => Err(Error::InvalidParameter(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingModel {
    pub h: f64,
    pub tau_s: f64,
    pub tau_w: f64,
}

impl TimingModel {
    pub fn new(h: f64, tau_s: f64, tau_w: f64) -> Result<Self> {
        let t = Self { h, tau_s, tau_w };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("h", self.h), ("tau_s", self.tau_s), ("tau_w", self.tau_w)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn per_coordinate(&self, dir: Direction) -> f64 {
        match dir {
            Direction::S2W => self.tau_s,
            Direction::W2S => self.tau_w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Server,
    Worker(usize),
}

impl Node {
    fn slot(self) -> usize {
        match self {
            Node::Server => 0,
            Node::Worker(i) => i + 1,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Server => write!(f, "S"),
            Node::Worker(i) => write!(f, "W{i}"),
        }
    }
}

impl std::str::FromStr for Node {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "S" {
            return Ok(Node::Server);
        }
        s.strip_prefix('W')
            .and_then(|r| r.parse().ok())
            .map(Node::Worker)
            .ok_or_else(|| Error::InvalidParameter(format!("bad node label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    S2W,
    W2S,
}

/// A point constructed by some node. Cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    id: u64,
    node: Node,
    x: Arc<Vec<f64>>,
}

impl Point {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn node(&self) -> Node {
        self.node
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub node: String,
    pub kind: String,
    pub point_id: Option<u64>,
    /// 1-based coordinate outside the node's closure.
    pub coordinate: u32,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "node {} emitted coordinate {} outside its closure ({} at t={})",
            self.node, self.coordinate, self.kind, self.t
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub node: String,
    pub kind: String,
    pub payload_size: usize,
    pub point_id: Option<u64>,
    /// Sorted 1-based nonzero coordinates carried by the event.
    pub support: Vec<u32>,
}

pub fn write_trace<W: Write>(trace: &[TraceEvent], mut out: W) -> std::io::Result<()> {
    for ev in trace {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceEvent>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| Error::InvalidParameter(e.to_string()))?;
            serde_json::from_str(&l).map_err(|e| Error::InvalidParameter(e.to_string()))
        })
        .collect()
}

/// Replays a trace and reports every emission outside the emitter's closure.
pub fn audit_zero_respecting(trace: &[TraceEvent]) -> Vec<Violation> {
    let mut closures: std::collections::HashMap<&str, std::collections::HashSet<u32>> = Default::default();
    let mut out = Vec::new();
    for ev in trace {
        let set = closures.entry(ev.node.as_str()).or_default();
        match ev.kind.as_str() {
            "grad_done" | "grad_share" | "deliver" => set.extend(ev.support.iter().copied()),
            "propose" | "send" => {
                if let Some(&c) = ev.support.iter().find(|c| !set.contains(c)) {
                    out.push(Violation {
                        t: ev.t,
                        node: ev.node.clone(),
                        kind: ev.kind.clone(),
                        point_id: ev.point_id,
                        coordinate: c,
                    });
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Epsilon,
    FullDiscovery,
    Budget,
    Idle,
    EventLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub time_to_eps: Option<f64>,
    pub best_grad_sq: f64,
    pub grads_computed: u64,
    pub coords_s2w: u64,
    pub coords_w2s: u64,
    /// Discovery time of chain coordinates `1..=T`.
    pub discovery_times: Vec<Option<f64>>,
    pub points: u64,
    pub end_time: f64,
    pub stop: StopReason,
}

impl RunRecord {
    pub const CSV_COLUMNS: [&'static str; 5] = ["time_to_eps", "grads", "coords_s2w", "coords_w2s", "best_grad_sq"];

    pub fn csv_fields(&self) -> [String; 5] {
        [
            self.time_to_eps.map_or_else(|| "none".to_string(), |t| t.to_string()),
            self.grads_computed.to_string(),
            self.coords_s2w.to_string(),
            self.coords_w2s.to_string(),
            self.best_grad_sq.to_string(),
        ]
    }

    /// Discovery time of coordinate `T`, if reached.
    pub fn last_discovery(&self) -> Option<f64> {
        self.discovery_times.last().copied().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub timing: TimingModel,
    pub budget: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub stop_at_eps: bool,
    #[serde(default)]
    pub stop_at_full_discovery: bool,
    #[serde(default = "default_true")]
    pub enforce_zero_respecting: bool,
    #[serde(default)]
    pub record_trace: bool,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

fn default_true() -> bool {
    true
}

fn default_max_events() -> u64 {
    200_000_000
}

impl SimConfig {
    pub fn new(protocol: Protocol, timing: TimingModel, budget: f64, seed: u64) -> Self {
        Self {
            protocol,
            timing,
            budget,
            seed,
            stop_at_eps: true,
            stop_at_full_discovery: false,
            enforce_zero_respecting: true,
            record_trace: false,
            max_events: default_max_events(),
        }
    }
}

/// Hooks invoked by the event loop. All default to doing nothing.
pub trait Algorithm {
    fn name(&self) -> &str;

    fn start(&mut self, ctx: &mut Ctx<'_>) -> Result<()>;

    /// A stochastic gradient requested by `worker` at `point` is ready.
    fn on_gradient(&mut self, _ctx: &mut Ctx<'_>, _worker: usize, _point: &Point, _grad: &[f64]) -> Result<()> {
        Ok(())
    }

    /// P1 only: the server's free copy of a worker's gradient. Called before
    /// `on_gradient` for the same event.
    fn on_server_gradient(&mut self, _ctx: &mut Ctx<'_>, _worker: usize, _point: &Point, _grad: &[f64]) -> Result<()> {
        Ok(())
    }

    /// `worker` received a message from the server.
    fn on_worker_message(&mut self, _ctx: &mut Ctx<'_>, _worker: usize, _msg: &SparseMessage) -> Result<()> {
        Ok(())
    }

    /// The server received a message from `worker` (P2 only).
    fn on_server_message(&mut self, _ctx: &mut Ctx<'_>, _worker: usize, _msg: &SparseMessage) -> Result<()> {
        Ok(())
    }

    /// A channel has nothing in flight and nothing queued.
    fn on_channel_idle(&mut self, _ctx: &mut Ctx<'_>, _dir: Direction, _worker: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug)]
enum Payload {
    Gradient { worker: usize, point: Point },
    Deliver { dir: Direction, worker: usize, msg: SparseMessage },
}

#[derive(Debug)]
struct Event {
    time: f64,
    kind: u8,
    worker: usize,
    seq: u64,
    payload: Payload,
}

impl Event {
    fn key(&self) -> (f64, u8, usize, u64) {
        (self.time, self.kind, self.worker, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
            .then(b.3.cmp(&a.3))
    }
}

const KIND_GRADIENT: u8 = 0;
const KIND_S2W: u8 = 1;
const KIND_W2S: u8 = 2;

#[derive(Debug, Default)]
struct Channel {
    busy: bool,
    queue: VecDeque<SparseMessage>,
}

/// Simulation state seen by algorithm hooks.
pub struct Ctx<'a> {
    inst: &'a ObjectiveInstance,
    cfg: &'a SimConfig,
    clock: f64,
    n: usize,
    closures: Vec<Vec<bool>>,
    busy: Vec<bool>,
    channels: [Vec<Channel>; 2],
    queue: BinaryHeap<Event>,
    seq: u64,
    next_point: u64,
    draws: Vec<u64>,
    rngs: Vec<Stream>,
    trace: Option<Vec<TraceEvent>>,
    violations: Vec<Violation>,
    record: RunRecord,
}

fn dir_slot(dir: Direction) -> usize {
    match dir {
        Direction::S2W => 0,
        Direction::W2S => 1,
    }
}

fn support_of(x: &[f64]) -> Vec<u32> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j as u32 + 1)
        .collect()
}

impl<'a> Ctx<'a> {
    fn new(inst: &'a ObjectiveInstance, cfg: &'a SimConfig) -> Self {
        let n = inst.n();
        let d = inst.d();
        let mut rngs = vec![substream(cfg.seed, &[purpose::SERVER])];
        rngs.extend((0..n).map(|i| substream(cfg.seed, &[purpose::WORKER, i as u64])));
        Self {
            inst,
            cfg,
            clock: 0.0,
            n,
            closures: vec![vec![false; d]; n + 1],
            busy: vec![false; n],
            channels: [
                (0..n).map(|_| Channel::default()).collect(),
                (0..n).map(|_| Channel::default()).collect(),
            ],
            queue: BinaryHeap::new(),
            seq: 0,
            next_point: 0,
            draws: vec![0; n],
            rngs,
            trace: cfg.record_trace.then(Vec::new),
            violations: Vec::new(),
            record: RunRecord {
                time_to_eps: None,
                best_grad_sq: f64::INFINITY,
                grads_computed: 0,
                coords_s2w: 0,
                coords_w2s: 0,
                discovery_times: vec![None; inst.t],
                points: 0,
                end_time: 0.0,
                stop: StopReason::Idle,
            },
        }
    }

    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.inst.d()
    }

    pub fn protocol(&self) -> Protocol {
        self.cfg.protocol
    }

    pub fn timing(&self) -> TimingModel {
        self.cfg.timing
    }

    /// Coordinates `node` may legitimately make nonzero (0-based mask).
    pub fn closure(&self, node: Node) -> &[bool] {
        &self.closures[node.slot()]
    }

    /// The node's private random stream.
    pub fn rng(&mut self, node: Node) -> &mut Stream {
        &mut self.rngs[node.slot()]
    }

    pub fn is_computing(&self, worker: usize) -> bool {
        self.busy[worker]
    }

    /// Nothing in flight and nothing queued on the channel.
    pub fn channel_idle(&self, dir: Direction, worker: usize) -> bool {
        let ch = &self.channels[dir_slot(dir)][worker];
        !ch.busy && ch.queue.is_empty()
    }

    fn log(&mut self, node: Node, kind: &str, payload_size: usize, point_id: Option<u64>, support: Vec<u32>) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceEvent {
                t: self.clock,
                node: node.to_string(),
                kind: kind.to_string(),
                payload_size,
                point_id,
                support,
            });
        }
    }

    fn audit(&mut self, node: Node, kind: &str, point_id: Option<u64>, support: &[u32]) -> Result<()> {
        let closure = &self.closures[node.slot()];
        if let Some(&c) = support.iter().find(|&&c| !closure[c as usize - 1]) {
            let v = Violation {
                t: self.clock,
                node: node.to_string(),
                kind: kind.to_string(),
                point_id,
                coordinate: c,
            };
            if self.cfg.enforce_zero_respecting {
                return Err(Error::ZeroRespectViolation(v));
            }
            self.violations.push(v);
        }
        Ok(())
    }

    /// Registers a point constructed by `node` and evaluates `‖∇f‖²` there.
    pub fn propose(&mut self, node: Node, x: Vec<f64>) -> Result<Point> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        self.check_node(node)?;
        let id = self.next_point;
        self.next_point += 1;
        let support = support_of(&x);
        self.audit(node, "propose", Some(id), &support)?;
        self.log(node, "propose", 0, Some(id), support);
        let g2 = self.inst.grad_norm_sq(&x)?;
        self.record.points += 1;
        self.record.best_grad_sq = self.record.best_grad_sq.min(g2);
        if g2 <= self.inst.eps() && self.record.time_to_eps.is_none() {
            self.record.time_to_eps = Some(self.clock);
        }
        Ok(Point {
            id,
            node,
            x: Arc::new(x),
        })
    }

    fn check_node(&self, node: Node) -> Result<()> {
        match node {
            Node::Worker(i) if i >= self.n => Err(Error::Protocol(format!("no worker {i}"))),
            _ => Ok(()),
        }
    }

    /// Starts a stochastic gradient at `point` on `worker`; ready `h` later.
    pub fn compute(&mut self, worker: usize, point: &Point) -> Result<()> {
        self.check_node(Node::Worker(worker))?;
        if point.node != Node::Worker(worker) {
            return Err(Error::Protocol(format!(
                "worker {worker} cannot compute at point {} owned by {}",
                point.id, point.node
            )));
        }
        if self.busy[worker] {
            return Err(Error::Protocol(format!("worker {worker} is already computing")));
        }
        self.busy[worker] = true;
        self.log(Node::Worker(worker), "grad_start", 0, Some(point.id), Vec::new());
        let time = self.clock + self.cfg.timing.h;
        self.schedule(time, KIND_GRADIENT, worker, Payload::Gradient {
            worker,
            point: point.clone(),
        });
        Ok(())
    }

    pub fn send_to_worker(&mut self, worker: usize, msg: SparseMessage) -> Result<()> {
        self.send(Direction::S2W, worker, msg)
    }

    pub fn send_to_server(&mut self, worker: usize, msg: SparseMessage) -> Result<()> {
        if self.cfg.protocol == Protocol::P1 {
            return Err(Error::Protocol(
                "worker-to-server messages do not exist in P1; gradients are shared for free".into(),
            ));
        }
        self.send(Direction::W2S, worker, msg)
    }

    fn send(&mut self, dir: Direction, worker: usize, msg: SparseMessage) -> Result<()> {
        self.check_node(Node::Worker(worker))?;
        let d = self.d();
        if let Some(&(i, _)) = msg.entries.iter().find(|(i, _)| *i == 0 || *i as usize > d) {
            return Err(Error::Protocol(format!("message index {i} outside 1..={d}")));
        }
        let sender = match dir {
            Direction::S2W => Node::Server,
            Direction::W2S => Node::Worker(worker),
        };
        let mut support: Vec<u32> = msg.support().collect();
        support.sort_unstable();
        self.audit(sender, "send", None, &support)?;
        self.log(sender, "send", msg.payload_size(), None, support);
        self.channels[dir_slot(dir)][worker].queue.push_back(msg);
        self.pump(dir, worker);
        Ok(())
    }

    fn pump(&mut self, dir: Direction, worker: usize) {
        let ch = &mut self.channels[dir_slot(dir)][worker];
        if ch.busy {
            return;
        }
        let Some(msg) = ch.queue.pop_front() else { return };
        ch.busy = true;
        let time = self.clock + msg.payload_size() as f64 * self.cfg.timing.per_coordinate(dir);
        let kind = match dir {
            Direction::S2W => KIND_S2W,
            Direction::W2S => KIND_W2S,
        };
        self.schedule(time, kind, worker, Payload::Deliver { dir, worker, msg });
    }

    fn schedule(&mut self, time: f64, kind: u8, worker: usize, payload: Payload) {
        debug_assert!(time >= self.clock);
        self.seq += 1;
        self.queue.push(Event {
            time,
            kind,
            worker,
            seq: self.seq,
            payload,
        });
    }

    fn absorb(&mut self, node: Node, support: &[u32]) {
        let slot = node.slot();
        let t = self.inst.t;
        for &c in support {
            let j = c as usize - 1;
            if !self.closures[slot][j] {
                self.closures[slot][j] = true;
                if j < t && self.record.discovery_times[j].is_none() {
                    self.record.discovery_times[j] = Some(self.clock);
                }
            }
        }
    }

    fn fully_discovered(&self) -> bool {
        self.record.discovery_times.iter().all(Option::is_some)
    }
}

pub struct SimOutcome {
    pub record: RunRecord,
    pub trace: Option<Vec<TraceEvent>>,
    pub violations: Vec<Violation>,
}

/// Runs `alg` on `inst` until the budget is spent or a stop rule fires.
pub fn run(cfg: &SimConfig, inst: &ObjectiveInstance, alg: &mut dyn Algorithm) -> Result<SimOutcome> {
    cfg.timing.validate()?;
    if !(cfg.budget > 0.0) {
        return Err(Error::InvalidParameter(format!("budget must be positive, got {}", cfg.budget)));
    }
    let mut ctx = Ctx::new(inst, cfg);
    alg.start(&mut ctx)?;
    let mut events = 0u64;
    let mut grad = vec![0.0; inst.d()];
    ctx.record.stop = loop {
        if cfg.stop_at_eps && ctx.record.time_to_eps.is_some() {
            break StopReason::Epsilon;
        }
        if cfg.stop_at_full_discovery && ctx.fully_discovered() {
            break StopReason::FullDiscovery;
        }
        let Some(ev) = ctx.queue.pop() else {
            break StopReason::Idle;
        };
        if ev.time > cfg.budget {
            ctx.clock = cfg.budget;
            break StopReason::Budget;
        }
        events += 1;
        if events > cfg.max_events {
            break StopReason::EventLimit;
        }
        ctx.clock = ev.time;
        match ev.payload {
            Payload::Gradient { worker, point } => {
                let mut stream = substream(cfg.seed, &[purpose::ORACLE, worker as u64, ctx.draws[worker]]);
                ctx.draws[worker] += 1;
                oracle::draw_into(inst, point.x(), &mut stream, &mut grad)?;
                ctx.busy[worker] = false;
                ctx.record.grads_computed += 1;
                let support = support_of(&grad);
                ctx.absorb(Node::Worker(worker), &support);
                ctx.log(Node::Worker(worker), "grad_done", 0, Some(point.id), support.clone());
                if cfg.protocol == Protocol::P1 {
                    ctx.absorb(Node::Server, &support);
                    ctx.log(Node::Server, "grad_share", 0, Some(point.id), support);
                    alg.on_server_gradient(&mut ctx, worker, &point, &grad)?;
                }
                alg.on_gradient(&mut ctx, worker, &point, &grad)?;
            }
            Payload::Deliver { dir, worker, msg } => {
                let receiver = match dir {
                    Direction::S2W => Node::Worker(worker),
                    Direction::W2S => Node::Server,
                };
                match dir {
                    Direction::S2W => ctx.record.coords_s2w += msg.payload_size() as u64,
                    Direction::W2S => ctx.record.coords_w2s += msg.payload_size() as u64,
                }
                let mut support: Vec<u32> = msg.support().collect();
                support.sort_unstable();
                ctx.absorb(receiver, &support);
                ctx.log(receiver, "deliver", msg.payload_size(), None, support);
                ctx.channels[dir_slot(dir)][worker].busy = false;
                ctx.pump(dir, worker);
                match dir {
                    Direction::S2W => alg.on_worker_message(&mut ctx, worker, &msg)?,
                    Direction::W2S => alg.on_server_message(&mut ctx, worker, &msg)?,
                }
                if ctx.channel_idle(dir, worker) {
                    alg.on_channel_idle(&mut ctx, dir, worker)?;
                }
            }
        }
    };
    ctx.record.end_time = ctx.clock;
    Ok(SimOutcome {
        record: ctx.record,
        trace: ctx.trace,
        violations: ctx.violations,
    })
}
