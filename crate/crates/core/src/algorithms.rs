//! Upper-bound methods and a coordinate-chasing stress algorithm, written as
//! simulator hooks.

use serde::{Deserialize, Serialize};

use crate::compressors::{identity, rand_k, SparseMessage};
use crate::error::{Error, Result};
use crate::simulator::{Algorithm, Ctx, Direction, Node, Point, Protocol, TimingModel};
use crate::worstcase::ObjectiveInstance;

/// Multipliers applied to the nominal parameter choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Multipliers {
    pub batch: f64,
    pub messages: f64,
    pub step: f64,
    /// Chaser coordinates are set to `chase * λ`.
    pub chase: f64,
}

impl Default for Multipliers {
    fn default() -> Self {
        Self {
            batch: 1.0,
            messages: 1.0,
            step: 1.0,
            chase: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgKind {
    BatchSyncSgd,
    BatchQsgd,
    LocalSgd,
    GreedyChaser,
}

impl AlgKind {
    pub const ALL: [AlgKind; 4] = [
        AlgKind::BatchSyncSgd,
        AlgKind::BatchQsgd,
        AlgKind::LocalSgd,
        AlgKind::GreedyChaser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgKind::BatchSyncSgd => "batch_sync_sgd",
            AlgKind::BatchQsgd => "batch_qsgd",
            AlgKind::LocalSgd => "local_sgd",
            AlgKind::GreedyChaser => "greedy_chaser",
        }
    }

    pub fn build(self, inst: &ObjectiveInstance, timing: &TimingModel, mult: &Multipliers) -> Result<Box<dyn Algorithm>> {
        Ok(match self {
            AlgKind::BatchSyncSgd => Box::new(batch_sync_sgd(inst, timing, mult)),
            AlgKind::BatchQsgd => Box::new(batch_qsgd(inst, timing, mult)),
            AlgKind::LocalSgd => Box::new(local_sgd(inst, timing, mult)),
            AlgKind::GreedyChaser => Box::new(greedy_chaser(inst, timing, mult)?),
        })
    }
}

impl std::str::FromStr for AlgKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm {s:?}")))
    }
}

fn ceil_at_least_one(v: f64) -> usize {
    if v.is_finite() && v > 1.0 {
        v.ceil() as usize
    } else {
        1
    }
}

/// Synchronous rounds: every worker computes a batch at the current iterate,
/// the server averages, steps, and broadcasts the full iterate.
///
/// Worker uploads are free gradient sharing under P1 and full-vector messages
/// of the batch sum under P2. The same skeleton runs Batch QSGD, whose P2
/// uploads are `m` independent RandK messages of the batch sum.
#[derive(Debug, Clone)]
pub struct SyncRounds {
    name: &'static str,
    n: usize,
    d: usize,
    b: usize,
    m: usize,
    gamma: f64,
    upload_k: Option<usize>,
    x: Vec<f64>,
    server_sum: Vec<f64>,
    server_count: usize,
    worker_point: Vec<Option<Point>>,
    worker_done: Vec<usize>,
    worker_sum: Vec<Vec<f64>>,
    rounds: u64,
    record_iterates: bool,
    iterates: Vec<Vec<f64>>,
}

pub fn batch_sync_sgd(inst: &ObjectiveInstance, _timing: &TimingModel, mult: &Multipliers) -> SyncRounds {
    let b = ceil_at_least_one(mult.batch * inst.sigma2() / (inst.eps() * inst.n() as f64));
    SyncRounds::new("batch_sync_sgd", inst, b, 1, mult.step / (2.0 * inst.l()), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QsgdParams {
    pub b: usize,
    pub m: usize,
    pub gamma: f64,
    pub t_star: f64,
}

pub fn qsgd_params(inst: &ObjectiveInstance, timing: &TimingModel, mult: &Multipliers) -> QsgdParams {
    let n = inst.n() as f64;
    let d = inst.d() as f64;
    let stat = inst.sigma2() / (n * inst.eps());
    let (h, tw) = (timing.h, timing.tau_w);
    let t_star = [h, tw, tw * d / n, h * stat, (d * tw * h * stat).sqrt()]
        .into_iter()
        .fold(0.0, f64::max);
    let b = if h > 0.0 { ceil_at_least_one(mult.batch * t_star / h) } else { 1 };
    let m = if tw > 0.0 { ceil_at_least_one(mult.messages * t_star / tw) } else { 1 };
    QsgdParams {
        b,
        m,
        gamma: mult.step / (2.0 * inst.l()),
        t_star,
    }
}

pub fn batch_qsgd(inst: &ObjectiveInstance, timing: &TimingModel, mult: &Multipliers) -> SyncRounds {
    let p = qsgd_params(inst, timing, mult);
    let upload_k = (timing.tau_w > 0.0).then_some(1);
    SyncRounds::new("batch_qsgd", inst, p.b, p.m, p.gamma, upload_k)
}

impl SyncRounds {
    fn new(name: &'static str, inst: &ObjectiveInstance, b: usize, m: usize, gamma: f64, upload_k: Option<usize>) -> Self {
        let n = inst.n();
        let d = inst.d();
        Self {
            name,
            n,
            d,
            b,
            m,
            gamma,
            upload_k,
            x: vec![0.0; d],
            server_sum: vec![0.0; d],
            server_count: 0,
            worker_point: vec![None; n],
            worker_done: vec![0; n],
            worker_sum: vec![vec![0.0; d]; n],
            rounds: 0,
            record_iterates: false,
            iterates: Vec::new(),
        }
    }

    pub fn batch(&self) -> usize {
        self.b
    }

    pub fn messages(&self) -> usize {
        self.m
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Keep every server iterate `x^0, x^1, …`.
    pub fn record_iterates(mut self) -> Self {
        self.record_iterates = true;
        self
    }

    pub fn iterates(&self) -> &[Vec<f64>] {
        &self.iterates
    }

    /// Number of uploads the server waits for in one round.
    fn expected(&self, protocol: Protocol) -> usize {
        match protocol {
            Protocol::P1 => self.n * self.b,
            Protocol::P2 => self.n * self.m,
        }
    }

    fn server_step(&mut self, ctx: &mut Ctx<'_>) -> Result<()> {
        // P1 averages n*b raw gradients; P2 averages n*m messages of batch sums
        let scale = match ctx.protocol() {
            Protocol::P1 => self.gamma / (self.n * self.b) as f64,
            Protocol::P2 => self.gamma / (self.n * self.b * self.m) as f64,
        };
        for (x, g) in self.x.iter_mut().zip(&self.server_sum) {
            *x -= scale * g;
        }
        self.server_sum.iter_mut().for_each(|g| *g = 0.0);
        self.server_count = 0;
        self.rounds += 1;
        ctx.propose(Node::Server, self.x.clone())?;
        if self.record_iterates {
            self.iterates.push(self.x.clone());
        }
        for w in 0..self.n {
            ctx.send_to_worker(w, identity(&self.x))?;
        }
        Ok(())
    }

    fn begin_batch(&mut self, ctx: &mut Ctx<'_>, worker: usize, x: Vec<f64>) -> Result<()> {
        let p = ctx.propose(Node::Worker(worker), x)?;
        self.worker_done[worker] = 0;
        self.worker_sum[worker].iter_mut().for_each(|g| *g = 0.0);
        ctx.compute(worker, &p)?;
        self.worker_point[worker] = Some(p);
        Ok(())
    }
}

impl Algorithm for SyncRounds {
    fn name(&self) -> &str {
        self.name
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) -> Result<()> {
        ctx.propose(Node::Server, self.x.clone())?;
        if self.record_iterates {
            self.iterates.push(self.x.clone());
        }
        for w in 0..self.n {
            self.begin_batch(ctx, w, vec![0.0; self.d])?;
        }
        Ok(())
    }

    fn on_server_gradient(&mut self, ctx: &mut Ctx<'_>, _worker: usize, _point: &Point, grad: &[f64]) -> Result<()> {
        for (s, g) in self.server_sum.iter_mut().zip(grad) {
            *s += g;
        }
        self.server_count += 1;
        if self.server_count == self.expected(Protocol::P1) {
            self.server_step(ctx)?;
        }
        Ok(())
    }

    fn on_gradient(&mut self, ctx: &mut Ctx<'_>, worker: usize, point: &Point, grad: &[f64]) -> Result<()> {
        self.worker_done[worker] += 1;
        if ctx.protocol() == Protocol::P2 {
            for (s, g) in self.worker_sum[worker].iter_mut().zip(grad) {
                *s += g;
            }
        }
        if self.worker_done[worker] < self.b {
            return ctx.compute(worker, point);
        }
        if ctx.protocol() == Protocol::P2 {
            let sum = &self.worker_sum[worker];
            match self.upload_k {
                Some(k) => {
                    for _ in 0..self.m {
                        let msg = rand_k(sum, k, ctx.rng(Node::Worker(worker)))?;
                        ctx.send_to_server(worker, msg)?;
                    }
                }
                None => {
                    let msg = identity(sum);
                    for _ in 0..self.m {
                        ctx.send_to_server(worker, msg.clone())?;
                    }
                }
            }
        }
        Ok(())
    }

    fn on_server_message(&mut self, ctx: &mut Ctx<'_>, _worker: usize, msg: &SparseMessage) -> Result<()> {
        msg.accumulate(&mut self.server_sum, 1.0);
        self.server_count += 1;
        if self.server_count == self.expected(Protocol::P2) {
            self.server_step(ctx)?;
        }
        Ok(())
    }

    fn on_worker_message(&mut self, ctx: &mut Ctx<'_>, worker: usize, msg: &SparseMessage) -> Result<()> {
        self.begin_batch(ctx, worker, msg.decode(self.d))
    }
}

/// Single-node SGD on worker 0 with no communication.
#[derive(Debug, Clone)]
pub struct LocalSgd {
    gamma: f64,
    x: Vec<f64>,
    record_iterates: bool,
    iterates: Vec<Vec<f64>>,
}

pub fn local_sgd(inst: &ObjectiveInstance, _timing: &TimingModel, mult: &Multipliers) -> LocalSgd {
    let l = inst.l();
    let mut gamma = 1.0 / (2.0 * l);
    if inst.sigma2() > 0.0 {
        gamma = gamma.min(inst.eps() / (2.0 * l * inst.sigma2()));
    }
    LocalSgd {
        gamma: mult.step * gamma,
        x: vec![0.0; inst.d()],
        record_iterates: false,
        iterates: Vec::new(),
    }
}

impl LocalSgd {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn record_iterates(mut self) -> Self {
        self.record_iterates = true;
        self
    }

    pub fn iterates(&self) -> &[Vec<f64>] {
        &self.iterates
    }

    fn step_point(&mut self, ctx: &mut Ctx<'_>) -> Result<()> {
        if self.record_iterates {
            self.iterates.push(self.x.clone());
        }
        let p = ctx.propose(Node::Worker(0), self.x.clone())?;
        ctx.compute(0, &p)
    }
}

impl Algorithm for LocalSgd {
    fn name(&self) -> &str {
        "local_sgd"
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) -> Result<()> {
        self.step_point(ctx)
    }

    fn on_gradient(&mut self, ctx: &mut Ctx<'_>, worker: usize, _point: &Point, grad: &[f64]) -> Result<()> {
        debug_assert_eq!(worker, 0);
        for (x, g) in self.x.iter_mut().zip(grad) {
            *x -= self.gamma * g;
        }
        self.step_point(ctx)
    }
}

/// Every node sits at `cλ` on each coordinate it knows. Workers compute
/// gradients without pause; the server streams Rand1 messages of its point to
/// every worker without pause (and workers stream back under P2).
#[derive(Debug, Clone)]
pub struct GreedyChaser {
    value: f64,
    known: Vec<usize>,
    points: Vec<Option<Point>>,
}

pub fn greedy_chaser(inst: &ObjectiveInstance, timing: &TimingModel, mult: &Multipliers) -> Result<GreedyChaser> {
    if !(mult.chase >= 1.0) {
        return Err(Error::InvalidParameter(format!("chase multiplier must be >= 1, got {}", mult.chase)));
    }
    if timing.tau_s <= 0.0 || timing.h <= 0.0 {
        return Err(Error::InvalidParameter(
            "greedy_chaser streams without pause and needs h > 0 and tau_s > 0".into(),
        ));
    }
    Ok(GreedyChaser {
        value: mult.chase * inst.lambda,
        known: vec![usize::MAX; inst.n() + 1],
        points: vec![None; inst.n() + 1],
    })
}

impl GreedyChaser {
    fn slot(node: Node) -> usize {
        match node {
            Node::Server => 0,
            Node::Worker(i) => i + 1,
        }
    }

    /// The node's current point, re-proposed only when its closure grew.
    fn refresh(&mut self, ctx: &mut Ctx<'_>, node: Node) -> Result<Point> {
        let slot = Self::slot(node);
        let closure = ctx.closure(node);
        let count = closure.iter().filter(|&&c| c).count();
        if self.known[slot] != count || self.points[slot].is_none() {
            let x: Vec<f64> = closure.iter().map(|&c| if c { self.value } else { 0.0 }).collect();
            self.points[slot] = Some(ctx.propose(node, x)?);
            self.known[slot] = count;
        }
        Ok(self.points[slot].clone().expect("point set above"))
    }

    fn stream(&mut self, ctx: &mut Ctx<'_>, dir: Direction, worker: usize) -> Result<()> {
        let node = match dir {
            Direction::S2W => Node::Server,
            Direction::W2S => Node::Worker(worker),
        };
        let p = self.refresh(ctx, node)?;
        let msg = rand_k(p.x(), 1, ctx.rng(node))?;
        match dir {
            Direction::S2W => ctx.send_to_worker(worker, msg),
            Direction::W2S => ctx.send_to_server(worker, msg),
        }
    }
}

impl Algorithm for GreedyChaser {
    fn name(&self) -> &str {
        "greedy_chaser"
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) -> Result<()> {
        self.refresh(ctx, Node::Server)?;
        for w in 0..ctx.n() {
            let p = self.refresh(ctx, Node::Worker(w))?;
            ctx.compute(w, &p)?;
            self.stream(ctx, Direction::S2W, w)?;
            if ctx.protocol() == Protocol::P2 && ctx.timing().tau_w > 0.0 {
                self.stream(ctx, Direction::W2S, w)?;
            }
        }
        Ok(())
    }

    fn on_server_gradient(&mut self, ctx: &mut Ctx<'_>, _worker: usize, _point: &Point, _grad: &[f64]) -> Result<()> {
        self.refresh(ctx, Node::Server).map(|_| ())
    }

    fn on_gradient(&mut self, ctx: &mut Ctx<'_>, worker: usize, _point: &Point, _grad: &[f64]) -> Result<()> {
        let p = self.refresh(ctx, Node::Worker(worker))?;
        ctx.compute(worker, &p)
    }

    fn on_server_message(&mut self, ctx: &mut Ctx<'_>, _worker: usize, _msg: &SparseMessage) -> Result<()> {
        self.refresh(ctx, Node::Server).map(|_| ())
    }

    fn on_channel_idle(&mut self, ctx: &mut Ctx<'_>, dir: Direction, worker: usize) -> Result<()> {
        self.stream(ctx, dir, worker)
    }
}
