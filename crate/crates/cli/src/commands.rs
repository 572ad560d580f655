//! Simulation sweeps, lower-bound experiments and their file formats.

use std::fmt::Write as _;

use lbopt_core::algorithms::{AlgKind, Multipliers};
use lbopt_core::lowerbound::{
    mc_verify, theory_time, with_thread_cap, BlockSumParams, Bound, McReport, RecursionParams, TheoryInputs,
    TheoryModel,
};
use lbopt_core::simulator::{run, Protocol, SimConfig, TimingModel};
use lbopt_core::worstcase::{build_instance, InstanceParams, Variant};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BlockPoint, ChaserPoint, LowerboundConfig, RecursionPoint, SimulateConfig, SweepConfig};
use crate::CliError;

/// Column order of simulation CSV files.
pub const CSV_COLUMNS: [&str; 12] = [
    "alg",
    "n",
    "d",
    "h",
    "tau_s",
    "tau_w",
    "seed",
    "time_to_eps",
    "grads",
    "coords_s2w",
    "coords_w2s",
    "theory_time",
];

/// Default budget as a multiple of the predicted runtime.
pub const BUDGET_FACTOR: f64 = 50.0;

/// The prediction each algorithm is compared against.
pub fn theory_model(alg: AlgKind) -> TheoryModel {
    match alg {
        AlgKind::BatchSyncSgd => TheoryModel::Eq3,
        // reduces to Eq4 when tau_s = 0
        AlgKind::BatchQsgd => TheoryModel::Eq5,
        AlgKind::LocalSgd => TheoryModel::Local,
        AlgKind::GreedyChaser => TheoryModel::Eq8Min,
    }
}

pub fn theory_inputs(p: &InstanceParams, timing: &TimingModel) -> TheoryInputs {
    TheoryInputs {
        l: p.l,
        delta: p.delta,
        eps: p.eps,
        sigma2: p.sigma2,
        n: p.n,
        d: p.d,
        h: timing.h,
        tau_s: timing.tau_s,
        tau_w: timing.tau_w,
    }
}

/// One simulation: an algorithm on an instance under a timing model and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub alg: AlgKind,
    pub instance: InstanceParams,
    pub timing: TimingModel,
    pub protocol: Protocol,
    pub multipliers: Multipliers,
    pub seed: u64,
    pub budget: Option<f64>,
    pub max_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub alg: String,
    pub n: usize,
    pub d: usize,
    pub h: f64,
    pub tau_s: f64,
    pub tau_w: f64,
    pub seed: u64,
    pub time_to_eps: Option<f64>,
    pub grads: u64,
    pub coords_s2w: u64,
    pub coords_w2s: u64,
    pub theory_time: f64,
}

impl Row {
    pub fn fields(&self) -> [String; 12] {
        [
            self.alg.clone(),
            self.n.to_string(),
            self.d.to_string(),
            self.h.to_string(),
            self.tau_s.to_string(),
            self.tau_w.to_string(),
            self.seed.to_string(),
            self.time_to_eps.map_or_else(|| "none".to_string(), |t| t.to_string()),
            self.grads.to_string(),
            self.coords_s2w.to_string(),
            self.coords_w2s.to_string(),
            self.theory_time.to_string(),
        ]
    }

    /// `time_to_eps / theory_time`, if the run reached an ε-stationary point.
    pub fn ratio(&self) -> Option<f64> {
        self.time_to_eps.map(|t| t / self.theory_time)
    }
}

pub fn run_unit(u: &Unit) -> Result<Row, CliError> {
    let inst = build_instance(u.instance)?;
    let theory = theory_time(theory_model(u.alg), &theory_inputs(&u.instance, &u.timing));
    let budget = u.budget.unwrap_or(if theory > 0.0 { BUDGET_FACTOR * theory } else { 1e9 });
    let mut alg = u.alg.build(&inst, &u.timing, &u.multipliers)?;
    let mut cfg = SimConfig::new(u.protocol, u.timing, budget, u.seed);
    cfg.max_events = u.max_events;
    let out = run(&cfg, &inst, alg.as_mut())?;
    let r = out.record;
    Ok(Row {
        alg: u.alg.name().to_string(),
        n: u.instance.n,
        d: u.instance.d,
        h: u.timing.h,
        tau_s: u.timing.tau_s,
        tau_w: u.timing.tau_w,
        seed: u.seed,
        time_to_eps: r.time_to_eps,
        grads: r.grads_computed,
        coords_s2w: r.coords_s2w,
        coords_w2s: r.coords_w2s,
        theory_time: theory,
    })
}

/// Runs units in parallel; rows come back in input order.
pub fn run_units(units: &[Unit]) -> Result<Vec<Row>, CliError> {
    with_thread_cap(|| units.par_iter().map(run_unit).collect())
}

pub fn simulate_units(cfg: &SimulateConfig) -> Vec<Unit> {
    let mut units = Vec::new();
    for &alg in &cfg.algorithms {
        for &seed in &cfg.seeds {
            units.push(Unit {
                alg,
                instance: cfg.instance,
                timing: cfg.timing,
                protocol: cfg.protocol,
                multipliers: cfg.multipliers,
                seed,
                budget: cfg.budget,
                max_events: cfg.max_events,
            });
        }
    }
    units
}

fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Grid product in the order n, sigma2, h, tau_s, tau_w, then algorithm and seed.
pub fn sweep_units(cfg: &SweepConfig) -> Vec<Unit> {
    let b = &cfg.base;
    let g = &cfg.grid;
    let mut units = Vec::new();
    for n in axis(&g.n, b.instance.n) {
        for sigma2 in axis(&g.sigma2, b.instance.sigma2) {
            for h in axis(&g.h, b.timing.h) {
                for tau_s in axis(&g.tau_s, b.timing.tau_s) {
                    for tau_w in axis(&g.tau_w, b.timing.tau_w) {
                        let point = SimulateConfig {
                            instance: InstanceParams { n, sigma2, ..b.instance },
                            timing: TimingModel { h, tau_s, tau_w },
                            ..b.clone()
                        };
                        units.extend(simulate_units(&point));
                    }
                }
            }
        }
    }
    units
}

/// CSV text with a `#` header holding the command and the resolved config.
pub fn render_csv<C: Serialize>(command: &str, config: &C, rows: &[Row]) -> Result<String, CliError> {
    let json = serde_json::to_string(config).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = String::new();
    writeln!(out, "# lbopt {command}").unwrap();
    writeln!(out, "# config: {json}").unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// The `(command, config JSON)` pair embedded in a CSV written by [`render_csv`].
pub fn read_header(text: &str) -> Result<(String, String), CliError> {
    let mut lines = text.lines();
    let bad = || CliError::Config("file lacks the lbopt reproducibility header".into());
    let command = lines.next().and_then(|l| l.strip_prefix("# lbopt ")).ok_or_else(bad)?;
    let config = lines.next().and_then(|l| l.strip_prefix("# config: ")).ok_or_else(bad)?;
    Ok((command.to_string(), config.to_string()))
}

pub fn simulate_csv(cfg: &SimulateConfig) -> Result<String, CliError> {
    let rows = run_units(&simulate_units(cfg))?;
    let resolved = SimulateConfig { out: None, ..cfg.clone() };
    render_csv("simulate", &resolved, &rows)
}

pub fn sweep_csv(cfg: &SweepConfig) -> Result<String, CliError> {
    let rows = run_units(&sweep_units(cfg))?;
    let mut resolved = cfg.clone();
    resolved.base.out = None;
    render_csv("sweep", &resolved, &rows)
}

/// Regenerates a CSV from its own header; `Ok(true)` iff the bytes match.
pub fn check_csv(text: &str) -> Result<bool, CliError> {
    let (command, json) = read_header(text)?;
    let again = match command.as_str() {
        "simulate" => simulate_csv(&crate::config::parse(&json)?)?,
        "sweep" => sweep_csv(&crate::config::parse(&json)?)?,
        other => return Err(CliError::Config(format!("cannot re-run command {other:?}"))),
    };
    Ok(again == text)
}

pub fn lemma6_bound(p: &BlockPoint) -> Result<Bound, CliError> {
    let k = lbopt_core::worstcase::window_for(p.n);
    let t = p.blocks * k;
    let inst = build_instance(InstanceParams::for_chain(p.n, t, p.p_sigma, p.d_factor * t, Variant::New)?)?;
    Ok(Bound::Lemma6(BlockSumParams::from_instance(&inst, p.h, p.tau_s, p.delta)))
}

pub fn lemma8_bound(p: &RecursionPoint) -> Result<Bound, CliError> {
    let inst = build_instance(InstanceParams::for_chain(p.n, p.t, p.p_sigma, p.d_factor * p.t, Variant::Classic)?)?;
    Ok(Bound::Lemma8(RecursionParams::from_instance(&inst, p.h, p.tau_w, p.delta)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaserReport {
    pub point: ChaserPoint,
    #[serde(rename = "T")]
    pub t: usize,
    pub t_bar: f64,
    pub runs: u64,
    /// Runs whose last chain coordinate appeared no earlier than `t̄/2`.
    pub late: u64,
    pub fraction: f64,
    /// Runs that met ε-stationarity before discovering coordinate `T`.
    pub early_eps: u64,
    pub median_discovery: f64,
    pub pass: bool,
}

pub fn chaser_experiment(p: &ChaserPoint, seed: u64) -> Result<ChaserReport, CliError> {
    let k = lbopt_core::worstcase::window_for(p.n);
    let t = p.blocks * k;
    let inst = build_instance(InstanceParams::for_chain(p.n, t, p.p_sigma, p.d_factor * t, Variant::New)?)?;
    let t_bar = lbopt_core::lowerbound::t_bar_lemma6(&BlockSumParams::from_instance(&inst, p.h, p.tau_s, p.delta))?;
    let timing = TimingModel::new(p.h, p.tau_s, p.tau_s)?;
    let budget = 1e3 * t_bar.max(p.h) * t as f64;
    let outcomes: Vec<(Option<f64>, Option<f64>)> = with_thread_cap(|| {
        (0..p.runs)
            .into_par_iter()
            .map(|i| {
                let mut alg = AlgKind::GreedyChaser.build(&inst, &timing, &Multipliers::default())?;
                let mut cfg = SimConfig::new(p.protocol, timing, budget, seed.wrapping_add(i));
                cfg.stop_at_eps = false;
                cfg.stop_at_full_discovery = true;
                let r = run(&cfg, &inst, alg.as_mut())?.record;
                Ok((r.last_discovery(), r.time_to_eps))
            })
            .collect::<Result<_, CliError>>()
    })?;
    let half = t_bar / 2.0;
    // an undiscovered coordinate was not reached before the (much larger) budget
    let late = outcomes.iter().filter(|(d, _)| d.is_none_or(|d| d >= half)).count() as u64;
    let early_eps = outcomes
        .iter()
        .filter(|(d, e)| match (d, e) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(d), Some(e)) => e < d,
        })
        .count() as u64;
    let mut times: Vec<f64> = outcomes.iter().map(|(d, _)| d.unwrap_or(f64::INFINITY)).collect();
    times.sort_by(f64::total_cmp);
    let fraction = late as f64 / p.runs.max(1) as f64;
    Ok(ChaserReport {
        point: *p,
        t,
        t_bar,
        runs: p.runs,
        late,
        fraction,
        early_eps,
        median_discovery: times.get(times.len() / 2).copied().unwrap_or(f64::NAN),
        pass: p.runs > 0 && fraction >= p.min_fraction && early_eps == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerboundReport {
    pub config: LowerboundConfig,
    pub lemma6: Vec<McReport>,
    pub lemma8: Vec<McReport>,
    pub chaser: Vec<ChaserReport>,
    pub pass: bool,
}

pub fn lowerbound(cfg: &LowerboundConfig) -> Result<LowerboundReport, CliError> {
    let lemma6 = cfg
        .lemma6
        .iter()
        .map(|p| Ok(mc_verify(&lemma6_bound(p)?, cfg.trials, cfg.seed)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let lemma8 = cfg
        .lemma8
        .iter()
        .map(|p| Ok(mc_verify(&lemma8_bound(p)?, cfg.trials, cfg.seed)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let chaser = cfg
        .chaser
        .iter()
        .map(|p| chaser_experiment(p, cfg.seed))
        .collect::<Result<Vec<_>, CliError>>()?;
    let pass = lemma6.iter().all(|r| r.pass) && lemma8.iter().all(|r| r.pass) && chaser.iter().all(|r| r.pass);
    Ok(LowerboundReport {
        config: LowerboundConfig { out: None, ..cfg.clone() },
        lemma6,
        lemma8,
        chaser,
        pass,
    })
}

pub fn render_lowerbound(r: &LowerboundReport) -> String {
    let mut out = String::new();
    for m in r.lemma6.iter().chain(&r.lemma8) {
        let verdict = if m.pass { "ok  " } else { "FAIL" };
        writeln!(
            out,
            "{verdict} {} delta={} t_bar={:.4} p_hat={:.4} ci99=[{:.4}, {:.4}] median={:.4} trials={}",
            m.params.name(),
            m.params.delta(),
            m.t_bar,
            m.p_hat,
            m.ci_low,
            m.ci_high,
            m.median,
            m.trials
        )
        .unwrap();
    }
    for c in &r.chaser {
        let verdict = if c.pass { "ok  " } else { "FAIL" };
        writeln!(
            out,
            "{verdict} chaser n={} T={} t_bar/2={:.4} late={}/{} ({:.3}) median discovery={:.4} early eps={}",
            c.point.n,
            c.t,
            c.t_bar / 2.0,
            c.late,
            c.runs,
            c.fraction,
            c.median_discovery,
            c.early_eps
        )
        .unwrap();
    }
    writeln!(out, "lowerbound: {}", if r.pass { "PASS" } else { "FAIL" }).unwrap();
    out
}
