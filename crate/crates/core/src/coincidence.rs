//! Jeffress-style coincidence detector.
//!
//! Two chains run in opposite directions. Each chain has `2S + 1` taps spaced
//! by half a stage. Node `k` (in `-S..=S`) pairs A-chain tap `S + k` with
//! B-chain tap `S - k`, so two pulses with `b_rise - a_rise = k * stage_delay`
//! line up exactly at node `k`. Every node is a NAND followed by a glitch
//! filter and is asserted LOW.
//!
//! The clocked variant adds a catch stage on each node output, so assertions
//! only appear on clock falling edges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gates::{ClockGen, ClockedCatch, Delay, Gate, GateKind, GlitchFilter};
use crate::simkernel::{Component, Ctx, Level, NetId, Pulse, SimError, Simulation, TimePs};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoincidenceError {
    #[error("offset {offset_ps} ps is outside the detector span")]
    OutOfSpan { offset_ps: i64 },
    #[error("invalid detector configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Clocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdConfig {
    pub stages_per_side: i64,
    pub stage_delay: TimePs,
    pub variant: Variant,
    pub clock_period: TimePs,
    /// First rising clock edge.
    pub clock_phase: TimePs,
    pub min_overlap: TimePs,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            stages_per_side: 7,
            stage_delay: TimePs::ns(5),
            variant: Variant::Plain,
            clock_period: TimePs::ns(10),
            clock_phase: TimePs::ZERO,
            min_overlap: TimePs::ns(1),
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<(), CoincidenceError> {
        if self.stages_per_side < 1 {
            return Err(CoincidenceError::BadConfig(
                "need at least one stage per side".into(),
            ));
        }
        if self.stage_delay.0 == 0 || !self.stage_delay.0.is_multiple_of(2) {
            return Err(CoincidenceError::BadConfig(
                "stage delay must be even and positive".into(),
            ));
        }
        if self.variant == Variant::Clocked && self.clock_period.0 < 2 {
            return Err(CoincidenceError::BadConfig("clock period too short".into()));
        }
        Ok(())
    }

    pub fn hop(&self) -> TimePs {
        TimePs(self.stage_delay.0 / 2)
    }

    pub fn nodes(&self) -> impl Iterator<Item = i64> {
        -self.stages_per_side..=self.stages_per_side
    }

    pub fn node_count(&self) -> usize {
        (2 * self.stages_per_side + 1) as usize
    }

    /// Analytic node for a B-after-A offset.
    pub fn offset_oracle(&self, offset_ps: i64, width: TimePs) -> Result<i64, CoincidenceError> {
        let s = self.stages_per_side;
        let stage = self.stage_delay.0 as i64;
        if offset_ps.abs() > s * stage + width.0 as i64 {
            return Err(CoincidenceError::OutOfSpan { offset_ps });
        }
        let q = offset_ps as f64 / stage as f64;
        Ok((q.round() as i64).clamp(-s, s))
    }
}

/// A node assertion. `time` is when the node output went LOW; `asserted_at`
/// is when the unclocked pair detector asserted (equal for the plain variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub node: i64,
    pub time: TimePs,
    pub asserted_at: TimePs,
}

/// Nets of a detector placed in a simulation.
#[derive(Debug, Clone)]
pub struct CdNets {
    pub a_in: NetId,
    pub b_in: NetId,
    /// Unclocked filtered node outputs, index `k + S`.
    pub raw: Vec<NetId>,
    /// Node outputs after the optional clocked stage, index `k + S`.
    pub nodes: Vec<NetId>,
    pub stages_per_side: i64,
}

impl CdNets {
    pub fn node(&self, k: i64) -> NetId {
        self.nodes[(k + self.stages_per_side) as usize]
    }

    pub fn raw_node(&self, k: i64) -> NetId {
        self.raw[(k + self.stages_per_side) as usize]
    }
}

pub fn node_name(prefix: &str, k: i64) -> String {
    format!("{prefix}node{k:+}")
}

/// Places a detector into `sim`. A clock net is needed for the clocked variant.
pub fn build(
    sim: &mut Simulation,
    cfg: &CdConfig,
    prefix: &str,
    a_in: NetId,
    b_in: NetId,
    clock: Option<NetId>,
    trace: bool,
) -> Result<CdNets, CoincidenceError> {
    cfg.validate()?;
    let s = cfg.stages_per_side;
    let taps = (2 * s + 1) as usize;
    let mut chain = |name: &str, input: NetId| -> Result<Vec<NetId>, SimError> {
        let mut v = vec![input];
        for i in 1..taps {
            let n = sim.add_net(&format!("{prefix}{name}{i}"), false)?;
            sim.add_component(Box::new(Delay {
                input: v[i - 1],
                output: n,
                delay: cfg.hop(),
            }));
            v.push(n);
        }
        Ok(v)
    };
    let a = chain("a", a_in)?;
    let b = chain("b", b_in)?;
    let mut raw = Vec::new();
    let mut nodes = Vec::new();
    for k in cfg.nodes() {
        let ai = (s + k) as usize;
        let bi = (s - k) as usize;
        let nand = sim.add_net(&format!("{prefix}nand{k:+}"), false)?;
        sim.add_component(Box::new(
            Gate::new(GateKind::Nand, vec![a[ai], b[bi]], nand).expect("binary nand"),
        ));
        let clocked = cfg.variant == Variant::Clocked;
        let raw_name = if clocked {
            format!("{prefix}raw{k:+}")
        } else {
            node_name(prefix, k)
        };
        let filtered = sim.add_net(&raw_name, trace)?;
        sim.add_component(Box::new(GlitchFilter::new(
            nand,
            filtered,
            cfg.min_overlap,
            Level::High,
        )));
        raw.push(filtered);
        if clocked {
            let clk = clock.ok_or_else(|| {
                CoincidenceError::BadConfig("clocked detector needs a clock net".into())
            })?;
            let out = sim.add_net(&node_name(prefix, k), trace)?;
            sim.add_component(Box::new(ClockedCatch::new(filtered, clk, out, Level::Low)));
            nodes.push(out);
        } else {
            nodes.push(filtered);
        }
    }
    Ok(CdNets {
        a_in,
        b_in,
        raw,
        nodes,
        stages_per_side: s,
    })
}

fn falls_after(trace: &[(TimePs, Level)], from: TimePs) -> impl Iterator<Item = TimePs> + '_ {
    trace
        .iter()
        .filter(move |&&(t, l)| l == Level::Low && t >= from)
        .map(|&(t, _)| t)
}

/// Every node assertion at or after `from`, ordered by `(time, asserted_at)`.
pub fn detections(
    sim: &Simulation,
    nets: &CdNets,
    from: TimePs,
) -> Result<Vec<Detection>, SimError> {
    let mut out = Vec::new();
    for (i, (&node, &raw)) in nets.nodes.iter().zip(&nets.raw).enumerate() {
        let k = i as i64 - nets.stages_per_side;
        let raw_trace = sim.trace(raw)?;
        for t in falls_after(sim.trace(node)?, from) {
            let asserted_at = raw_trace
                .iter()
                .filter(|&&(rt, l)| l == Level::Low && rt <= t)
                .map(|&(rt, _)| rt)
                .next_back()
                .unwrap_or(t);
            out.push(Detection {
                node: k,
                time: t,
                asserted_at,
            });
        }
    }
    out.sort_by_key(|d| (d.time, d.asserted_at, d.node));
    Ok(out)
}

/// Runs two pulses through a standalone detector.
pub fn feed(cfg: &CdConfig, a: Pulse, b: Pulse) -> Result<Vec<Detection>, CoincidenceError> {
    let mut sim = Simulation::new();
    let va = sim.add_net("Va", false)?;
    let vb = sim.add_net("Vb", false)?;
    let clock = if cfg.variant == Variant::Clocked {
        let clk = sim.add_net("Vclock", false)?;
        sim.add_component(Box::new(ClockGen::new(
            clk,
            cfg.clock_period,
            cfg.clock_phase,
        )));
        Some(clk)
    } else {
        None
    };
    let nets = build(&mut sim, cfg, "", va, vb, clock, true)?;
    sim.drive_pulse(va, a)?;
    sim.drive_pulse(vb, b)?;
    let end = a.fall().max(b.fall())
        + cfg.stage_delay * (cfg.stages_per_side as u64 + 1)
        + cfg.clock_period * 3;
    sim.run_until(end)?;
    Ok(detections(&sim, &nets, TimePs::ZERO)?)
}

/// The node reported downstream: the earliest assertion.
pub fn nearest(dets: &[Detection]) -> Option<i64> {
    dets.first().map(|d| d.node)
}

/// First-come lock over active-low requests. The first request to assert is
/// granted; later ones are ignored until every request has been idle for
/// `quiet`. A grant follows its request while the lock is held.
pub struct Arbiter {
    pub requests: Vec<NetId>,
    pub grants: Vec<NetId>,
    pub quiet: TimePs,
    pub delay: TimePs,
    locked: Option<usize>,
    generation: u64,
}

impl Arbiter {
    pub fn new(requests: Vec<NetId>, grants: Vec<NetId>, quiet: TimePs) -> Self {
        assert_eq!(requests.len(), grants.len());
        Arbiter {
            requests,
            grants,
            quiet,
            delay: crate::gates::DEFAULT_GATE_DELAY,
            locked: None,
            generation: 0,
        }
    }
}

impl Component for Arbiter {
    fn inputs(&self) -> Vec<NetId> {
        self.requests.clone()
    }
    fn init(&mut self, ctx: &mut Ctx<'_>) {
        for &g in &self.grants {
            ctx.drive(g, Level::High, TimePs::ZERO);
        }
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, net: NetId) {
        let idx = self
            .requests
            .iter()
            .position(|&r| r == net)
            .expect("own input");
        let level = ctx.level(net);
        if self.locked.is_none() && level == Level::Low {
            self.locked = Some(idx);
        }
        if self.locked == Some(idx) {
            ctx.drive(self.grants[idx], level, self.delay);
        }
        self.generation += 1;
        if self.requests.iter().all(|&r| ctx.level(r) == Level::High) {
            let at = ctx.now() + self.quiet;
            ctx.wake_at(at, self.generation);
        }
    }
    fn on_timer(&mut self, _ctx: &mut Ctx<'_>, token: u64) {
        if token == self.generation {
            self.locked = None;
        }
    }
}
