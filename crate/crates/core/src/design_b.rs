//! Design B: bias-selecting sequence learner.
//!
//! A passes through an 8-unit tunable line whose bias starts at the 700 mV
//! default (60 ns), is retimed by a sample/hold, and enters a clocked
//! coincidence detector. B enters the other side through a matched buffer.
//! The first usable detection latches one of three bias choices and the
//! choice never changes afterwards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coincidence::{self, CdConfig, CdNets, Variant};
use crate::delayline::{BiasSource, TappedLineComponent, TunableDelayLine};
use crate::gates::{ClockGen, GateKind, Netlist, SampleHold, DEFAULT_GATE_DELAY};
use crate::simkernel::{Level, NetId, Pulse, SimError, Simulation, TimePs, TraceSet};

pub const BIAS_DEFAULT_MV: i64 = 700;
pub const BIAS_40NS_MV: i64 = 950;
pub const BIAS_20NS_MV: i64 = 1800;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DesignBError {
    #[error("device is already trained")]
    AlreadyTrained,
    #[error("device has not been trained")]
    Untrained,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Coincidence(#[from] coincidence::CoincidenceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignBConfig {
    pub cd: CdConfig,
    pub near_nodes: Vec<i64>,
    pub far_nodes: Vec<i64>,
    pub delay_line: TunableDelayLine,
    /// Matched buffer on the B path.
    pub b_path_delay: TimePs,
    pub pattern_delay_min: TimePs,
    /// Swap the roles of the two inputs.
    pub mirrored: bool,
}

impl Default for DesignBConfig {
    fn default() -> Self {
        DesignBConfig {
            cd: CdConfig {
                stages_per_side: 3,
                stage_delay: TimePs::ns(20),
                variant: Variant::Clocked,
                clock_period: TimePs::ns(10),
                clock_phase: TimePs::ns(6),
                min_overlap: TimePs::ns(1),
            },
            near_nodes: vec![-2],
            far_nodes: vec![-1],
            delay_line: TunableDelayLine::new(BIAS_DEFAULT_MV),
            b_path_delay: DEFAULT_GATE_DELAY,
            pattern_delay_min: TimePs::ns(15),
            mirrored: false,
        }
    }
}

impl DesignBConfig {
    pub fn validate(&self) -> Result<(), DesignBError> {
        self.cd.validate()?;
        if self.cd.variant != Variant::Clocked {
            return Err(DesignBError::BadConfig(
                "design B uses the clocked detector".into(),
            ));
        }
        let s = self.cd.stages_per_side;
        let all = self.near_nodes.iter().chain(&self.far_nodes);
        if all.clone().any(|&k| k == 0 || k.abs() > s) {
            return Err(DesignBError::BadConfig(
                "node groups must be non-zero and within span".into(),
            ));
        }
        if self.near_nodes.iter().any(|k| self.far_nodes.contains(k)) {
            return Err(DesignBError::BadConfig("near and far nodes overlap".into()));
        }
        if self.near_nodes.is_empty() || self.far_nodes.is_empty() {
            return Err(DesignBError::BadConfig(
                "node groups must not be empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BiasDecision {
    Set20ns,
    Set40ns,
    KeepDefault,
    Failed,
}

impl BiasDecision {
    pub fn label(self) -> &'static str {
        match self {
            BiasDecision::Set20ns => "SET_20NS",
            BiasDecision::Set40ns => "SET_40NS",
            BiasDecision::KeepDefault => "KEEP_DEFAULT",
            BiasDecision::Failed => "FAILED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Recognized { t_out: TimePs },
    NoMatch,
}

pub struct DesignB {
    pub cfg: DesignBConfig,
    sim: Simulation,
    pub vin1: NetId,
    pub vin2: NetId,
    pub vclock: NetId,
    pub vout: NetId,
    pub latch_20: NetId,
    pub latch_40: NetId,
    pub latch_keep: NetId,
    pub suppress_20ns: NetId,
    pub cd: CdNets,
    attempted: bool,
    last_end: Option<TimePs>,
}

/// Time to let a presentation work through the line, detector and latches.
const SETTLE: TimePs = TimePs::ns(200);
const POWER_ON: TimePs = TimePs::ns(5);

impl DesignB {
    pub fn new(cfg: DesignBConfig) -> Result<Self, DesignBError> {
        cfg.validate()?;
        let mut sim = Simulation::new();
        let mut nl = Netlist::new(&mut sim);
        let vin1 = nl.net("Vin1", true)?;
        let vin2 = nl.net("Vin2", true)?;
        let vclock = nl.net("Vclock", true)?;
        let vout = nl.net("Vout", true)?;
        let por = nl.net("power_on_reset", false)?;
        nl.sim.add_component(Box::new(ClockGen::new(
            vclock,
            cfg.cd.clock_period,
            cfg.cd.clock_phase,
        )));

        let (tuned_in, fixed_in) = if cfg.mirrored {
            (vin2, vin1)
        } else {
            (vin1, vin2)
        };

        let latch_20 = nl.net("latch_20ns", true)?;
        let latch_40 = nl.net("latch_40ns", true)?;

        // tuned path: line, then retimed onto the clock
        let line_out = nl.net("line_out", true)?;
        let bias = BiasSource::Select {
            default: BIAS_DEFAULT_MV,
            options: vec![(latch_20, BIAS_20NS_MV), (latch_40, BIAS_40NS_MV)],
        };
        let units = cfg.delay_line.n_units;
        nl.sim.add_component(Box::new(
            TappedLineComponent::new(
                tuned_in,
                vec![(units, line_out)],
                bias,
                cfg.delay_line.clone(),
            )
            .with_analog_trace("bias_mV"),
        ));
        let a_side = nl.net("a_retimed", false)?;
        nl.sim
            .add_component(Box::new(SampleHold::new(line_out, vclock, a_side)));
        let b_side = nl.delay(fixed_in, cfg.b_path_delay, "b_buffered")?;

        let cd = coincidence::build(nl.sim, &cfg.cd, "cd_", a_side, b_side, Some(vclock), true)?;

        let hits = |nl: &mut Netlist<'_>, nodes: &[i64], name: &str| -> Result<NetId, SimError> {
            let outs: Vec<NetId> = nodes.iter().map(|&k| cd.node(k)).collect();
            // node outputs are active low
            if outs.len() == 1 {
                nl.gate(GateKind::Inv, &outs, name, false)
            } else {
                nl.gate(GateKind::Nand, &outs, name, false)
            }
        };
        let far = hits(&mut nl, &cfg.far_nodes, "far_hit")?;
        let near = hits(&mut nl, &cfg.near_nodes, "near_hit")?;
        let mid = nl.gate(GateKind::Inv, &[cd.node(0)], "mid_hit", false)?;

        // near decisions wait two clock periods so a far detection can suppress them
        let near_1 = nl.net("near_hold1", false)?;
        nl.sim
            .add_component(Box::new(SampleHold::new(near, vclock, near_1)));
        let near_2 = nl.net("near_hold2", false)?;
        nl.sim
            .add_component(Box::new(SampleHold::new(near_1, vclock, near_2)));

        let trained = nl.net("trained", false)?;
        let not_trained = nl.gate(GateKind::Inv, &[trained], "not_trained", false)?;
        let suppress_20ns = nl.gate(GateKind::Or, &[latch_40, latch_40], "suppress_20ns", true)?;
        let not_suppress = nl.gate(GateKind::Inv, &[suppress_20ns], "not_suppress", false)?;

        let s40 = nl.gate(GateKind::And, &[far, not_trained], "set_40ns", false)?;
        let s20 = nl.gate(
            GateKind::And,
            &[near_2, not_suppress, not_trained],
            "set_20ns",
            false,
        )?;
        let skeep = nl.gate(GateKind::And, &[mid, not_trained], "set_keep", false)?;
        nl.sim
            .add_component(Box::new(crate::gates::SrLatch::new(s40, por, latch_40)));
        nl.sim
            .add_component(Box::new(crate::gates::SrLatch::new(s20, por, latch_20)));
        let latch_keep = nl.latch(skeep, por, "latch_keep", true)?;
        nl.sim.add_component(Box::new(
            crate::gates::Gate::new(GateKind::Or, vec![latch_20, latch_40, latch_keep], trained)
                .expect("or"),
        ));

        nl.sim.add_component(Box::new(
            crate::gates::Gate::new(GateKind::Inv, vec![cd.node(0)], vout).expect("inv"),
        ));

        // active-low nets start LOW and glitch once at start-up
        sim.drive_pulse(por, Pulse::new(TimePs::ZERO, POWER_ON)?)?;
        sim.run_until(POWER_ON + TimePs::ns(1))?;

        Ok(DesignB {
            cfg,
            sim,
            vin1,
            vin2,
            vclock,
            vout,
            latch_20,
            latch_40,
            latch_keep,
            suppress_20ns,
            cd,
            attempted: false,
            last_end: None,
        })
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn traces(&self) -> TraceSet {
        self.sim.trace_set()
    }

    pub fn now(&self) -> TimePs {
        self.sim.now()
    }

    /// Next time at or after `t` aligned to the presentation grid
    /// (a multiple of the clock period).
    pub fn align(&self, t: TimePs) -> TimePs {
        let p = self.cfg.cd.clock_period.0;
        TimePs(t.0.div_ceil(p) * p)
    }

    /// Earliest aligned start respecting the pattern gap.
    pub fn next_start(&self) -> TimePs {
        let gap = self
            .last_end
            .map(|e| e + self.cfg.pattern_delay_min)
            .unwrap_or(TimePs::ZERO);
        self.align(gap.max(self.sim.now()))
    }

    pub fn decision(&self) -> BiasDecision {
        let l = |n: NetId| self.sim.level(n).is_high();
        if l(self.latch_20) {
            BiasDecision::Set20ns
        } else if l(self.latch_40) {
            BiasDecision::Set40ns
        } else if l(self.latch_keep) {
            BiasDecision::KeepDefault
        } else {
            BiasDecision::Failed
        }
    }

    pub fn is_trained(&self) -> bool {
        self.decision() != BiasDecision::Failed
    }

    pub fn current_bias(&self) -> i64 {
        match self.decision() {
            BiasDecision::Set20ns => BIAS_20NS_MV,
            BiasDecision::Set40ns => BIAS_40NS_MV,
            _ => BIAS_DEFAULT_MV,
        }
    }

    /// Delay the tuned line currently applies.
    pub fn trained_delay(&self) -> TimePs {
        self.cfg
            .delay_line
            .calibration
            .line_delay_for_bias(self.current_bias())
            .expect("bias choices are calibrated")
    }

    /// True when a pair would break the width, offset or pattern-gap envelope.
    pub fn violates(&self, a_rise: TimePs, b_rise: TimePs, width: TimePs) -> bool {
        let w_ok = (10_000..=15_000).contains(&width.0);
        let d_ok = (10_000..=50_000).contains(&b_rise.diff(a_rise));
        let gap_ok = self
            .last_end
            .is_none_or(|e| a_rise.min(b_rise) >= e + self.cfg.pattern_delay_min);
        !(w_ok && d_ok && gap_ok)
    }

    /// Drives one pair; `a_rise` is for the tuned input.
    pub fn schedule_pair(
        &mut self,
        a_rise: TimePs,
        b_rise: TimePs,
        width: TimePs,
    ) -> Result<(), DesignBError> {
        let (ta, tb) = if self.cfg.mirrored {
            (self.vin2, self.vin1)
        } else {
            (self.vin1, self.vin2)
        };
        self.sim.drive_pulse(ta, Pulse::new(a_rise, width)?)?;
        self.sim.drive_pulse(tb, Pulse::new(b_rise, width)?)?;
        self.last_end = Some(a_rise.max(b_rise) + width);
        Ok(())
    }

    pub fn run_until(&mut self, t: TimePs) -> Result<(), DesignBError> {
        Ok(self.sim.run_until(t)?)
    }

    pub fn vout_rises(&self, from: TimePs) -> Result<Vec<TimePs>, DesignBError> {
        Ok(self
            .sim
            .trace(self.vout)?
            .iter()
            .filter(|&&(t, l)| l == Level::High && t >= from)
            .map(|&(t, _)| t)
            .collect())
    }

    pub fn train(
        &mut self,
        a_rise: TimePs,
        b_rise: TimePs,
        width: TimePs,
    ) -> Result<BiasDecision, DesignBError> {
        if self.attempted && self.is_trained() {
            return Err(DesignBError::AlreadyTrained);
        }
        self.attempted = true;
        self.schedule_pair(a_rise, b_rise, width)?;
        self.sim.run_until(a_rise.max(b_rise) + SETTLE)?;
        Ok(self.decision())
    }

    pub fn detect(
        &mut self,
        a_rise: TimePs,
        b_rise: TimePs,
        width: TimePs,
    ) -> Result<Outcome, DesignBError> {
        if !self.is_trained() {
            return Err(DesignBError::Untrained);
        }
        let start = self.sim.now();
        self.schedule_pair(a_rise, b_rise, width)?;
        self.sim.run_until(a_rise.max(b_rise) + SETTLE)?;
        Ok(match self.vout_rises(start)?.first() {
            Some(&t_out) => Outcome::Recognized { t_out },
            None => Outcome::NoMatch,
        })
    }

    /// Trains on `offset` (B after A) at the next aligned slot.
    pub fn train_offset(
        &mut self,
        offset: TimePs,
        width: TimePs,
    ) -> Result<BiasDecision, DesignBError> {
        let a = self.next_start() + TimePs::ns(10);
        self.train(a, a + offset, width)
    }

    pub fn detect_offset(
        &mut self,
        offset: TimePs,
        width: TimePs,
    ) -> Result<Outcome, DesignBError> {
        let a = self.next_start() + TimePs::ns(10);
        self.detect(a, a + offset, width)
    }
}
