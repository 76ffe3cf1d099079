//! Design A: tap-selecting sequence learner.
//!
//! Input A goes through a fixed reference delay into one side of a plain
//! coincidence detector. Input B goes through a tapped line; the tap in use is
//! held in a one-hot row of SR latches and feeds the other side. While in
//! training mode, an off-middle coincidence at node `k` moves the selected tap
//! by `k` stages. A middle coincidence sets the mode latch. In active mode a
//! middle coincidence produces an output pulse a fixed time after the later
//! input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coincidence::{self, Arbiter, CdConfig, CdNets, Variant};
use crate::delayline::{BiasSource, TappedLineComponent, TunableDelayLine};
use crate::gates::{GateKind, Netlist, SrLatch, DEFAULT_GATE_DELAY};
use crate::simkernel::{
    Component, Ctx, Level, NetId, Pulse, SimError, Simulation, TimePs, TraceSet,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DesignAError {
    #[error("tap latches are not one-hot: {0} HIGH")]
    NotOneHot(usize),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Coincidence(#[from] coincidence::CoincidenceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignAConfig {
    pub bias_mv: i64,
    pub ref_tap_delay: TimePs,
    pub tap_pitch: TimePs,
    pub tap_count: usize,
    pub initial_tap_delay: TimePs,
    pub cd: CdConfig,
    /// Delay after the output one-shot; fixes the input-to-output latency.
    pub output_pad_delay: TimePs,
    pub pattern_delay_min: TimePs,
    /// How long a middle coincidence waits before switching to active mode.
    pub mode_set_delay: TimePs,
    pub line: TunableDelayLine,
}

fn cfg_settle(cfg: &DesignAConfig) -> TimePs {
    cfg.mode_set_delay + TimePs::ns(2)
}

pub const OUTPUT_LATENCY: TimePs = TimePs::ns(65);
/// Gates between the later input rise and the output, besides the pad.
const OUTPUT_PATH_GATES: u64 = 4;

impl Default for DesignAConfig {
    fn default() -> Self {
        DesignAConfig {
            bias_mv: 1180,
            ref_tap_delay: TimePs::ns(25),
            tap_pitch: TimePs::ps(2500),
            tap_count: 20,
            initial_tap_delay: TimePs::ns(25),
            cd: CdConfig {
                stages_per_side: 7,
                stage_delay: TimePs::ns(5),
                variant: Variant::Plain,
                ..CdConfig::default()
            },
            output_pad_delay: TimePs(OUTPUT_LATENCY.0 - OUTPUT_PATH_GATES * DEFAULT_GATE_DELAY.0),
            pattern_delay_min: TimePs::ns(15),
            mode_set_delay: TimePs::ns(15),
            line: TunableDelayLine::new(1180),
        }
    }
}

impl DesignAConfig {
    pub fn tap_delay(&self, j: usize) -> TimePs {
        self.tap_pitch * (j as u64 + 1)
    }

    fn tap_index(&self, delay: TimePs) -> Result<usize, DesignAError> {
        if delay.0 == 0 || !delay.0.is_multiple_of(self.tap_pitch.0) {
            return Err(DesignAError::BadConfig(format!(
                "{delay} is not on the tap grid"
            )));
        }
        let j = (delay.0 / self.tap_pitch.0 - 1) as usize;
        if j >= self.tap_count {
            return Err(DesignAError::BadConfig(format!(
                "{delay} is beyond the last tap"
            )));
        }
        Ok(j)
    }

    fn units_for(&self, delay: TimePs) -> Result<u64, DesignAError> {
        let mut line = self.line.clone();
        line.bias_mv = self.bias_mv;
        let u = line
            .unit_delay()
            .map_err(|e| DesignAError::BadConfig(e.to_string()))?;
        if !delay.0.is_multiple_of(u.0) {
            return Err(DesignAError::BadConfig(format!(
                "{delay} is not a whole number of units"
            )));
        }
        Ok(delay.0 / u.0)
    }

    pub fn validate(&self) -> Result<(), DesignAError> {
        self.cd.validate()?;
        if self.cd.variant != Variant::Plain {
            return Err(DesignAError::BadConfig(
                "design A uses the plain detector".into(),
            ));
        }
        if !self.cd.stage_delay.0.is_multiple_of(self.tap_pitch.0) {
            return Err(DesignAError::BadConfig(
                "stage delay must be a multiple of the tap pitch".into(),
            ));
        }
        self.tap_index(self.initial_tap_delay)?;
        self.units_for(self.ref_tap_delay)?;
        self.units_for(self.tap_pitch)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Trained { tap_delay: TimePs },
    EnteredActive,
    Recognized { t_out: TimePs },
    NoMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Presentation {
    pub outcome: Outcome,
    /// Set when the stimulus broke the documented timing envelope.
    pub timing_violation: bool,
}

/// Moves the one-hot tap selection in response to update strobes.
struct TapWriter {
    updates: Vec<(NetId, i64)>,
    reset: NetId,
    sets: Vec<NetId>,
    resets: Vec<NetId>,
    current: usize,
    initial: usize,
    taps_per_node: i64,
    strobe: TimePs,
}

impl TapWriter {
    fn write(&mut self, ctx: &mut Ctx<'_>, target: usize) {
        for (j, (&s, &r)) in self.sets.iter().zip(&self.resets).enumerate() {
            let net = if j == target { s } else { r };
            ctx.drive(net, Level::High, TimePs::ZERO);
            ctx.drive(net, Level::Low, self.strobe);
        }
        self.current = target;
    }
}

impl Component for TapWriter {
    fn inputs(&self) -> Vec<NetId> {
        let mut v: Vec<NetId> = self.updates.iter().map(|&(n, _)| n).collect();
        v.push(self.reset);
        v
    }
    fn init(&mut self, ctx: &mut Ctx<'_>) {
        self.write(ctx, self.initial);
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, net: NetId) {
        if !ctx.level(net).is_high() {
            return;
        }
        if net == self.reset {
            self.write(ctx, self.initial);
            return;
        }
        if let Some(&(_, k)) = self.updates.iter().find(|&&(n, _)| n == net) {
            let last = self.sets.len() as i64 - 1;
            let target = (self.current as i64 - k * self.taps_per_node).clamp(0, last);
            self.write(ctx, target as usize);
        }
    }
}

/// A Design A device inside its own simulation.
pub struct DesignA {
    pub cfg: DesignAConfig,
    sim: Simulation,
    pub vin1: NetId,
    pub vin2: NetId,
    pub vreset: NetId,
    pub vout: NetId,
    pub vactive: NetId,
    pub vtraining: NetId,
    pub tap_q: Vec<NetId>,
    pub cd: CdNets,
    last_end: Option<TimePs>,
    reset_count: u64,
}

impl DesignA {
    pub fn new(cfg: DesignAConfig) -> Result<Self, DesignAError> {
        cfg.validate()?;
        let mut sim = Simulation::new();
        let mut nl = Netlist::new(&mut sim);
        let vin1 = nl.net("Vin1", true)?;
        let vin2 = nl.net("Vin2", true)?;
        let vreset = nl.net("Vreset", true)?;
        let vout = nl.net("Vout", true)?;
        let vactive = nl.net("Vactive", true)?;
        let vtraining = nl.net("Vtraining", true)?;

        let mut line = cfg.line.clone();
        line.bias_mv = cfg.bias_mv;

        // reference path
        let ref_tap = nl.net("ref_tap", false)?;
        let ref_units = cfg.units_for(cfg.ref_tap_delay)?;
        nl.sim.add_component(Box::new(TappedLineComponent::new(
            vin1,
            vec![(ref_units, ref_tap)],
            BiasSource::Fixed(cfg.bias_mv),
            line.clone(),
        )));

        // trainable path: tap j feeds the B side only while its latch holds
        let units_per_tap = cfg.units_for(cfg.tap_pitch)?;
        let mut taps = Vec::new();
        let mut tap_q = Vec::new();
        let mut sets = Vec::new();
        let mut resets = Vec::new();
        let mut gated = Vec::new();
        for j in 0..cfg.tap_count {
            let t = nl.net(&format!("tap{j}"), false)?;
            taps.push((units_per_tap * (j as u64 + 1), t));
            let s = nl.net(&format!("tap{j}_set"), false)?;
            let r = nl.net(&format!("tap{j}_rst"), false)?;
            let q = nl.latch(s, r, &format!("tapQ{j:02}"), true)?;
            gated.push(nl.gate(GateKind::And, &[t, q], &format!("tap{j}_and"), false)?);
            sets.push(s);
            resets.push(r);
            tap_q.push(q);
        }
        nl.sim.add_component(Box::new(TappedLineComponent::new(
            vin2,
            taps,
            BiasSource::Fixed(cfg.bias_mv),
            line,
        )));
        let trained = nl.gate(GateKind::Or, &gated, "trained_signal", false)?;

        let cd = coincidence::build(nl.sim, &cfg.cd, "cd_", ref_tap, trained, None, true)?;

        // first coincidence wins; grants are active low
        let s = cfg.cd.stages_per_side;
        let mut grants = Vec::new();
        for k in cfg.cd.nodes() {
            grants.push(nl.net(&format!("sel{k:+}"), false)?);
        }
        nl.sim.add_component(Box::new(Arbiter::new(
            cd.nodes.clone(),
            grants.clone(),
            TimePs::ns(5),
        )));

        let mut updates = Vec::new();
        for k in cfg.cd.nodes().filter(|&k| k != 0) {
            let sel = grants[(k + s) as usize];
            let u = nl.gate(
                GateKind::Nor,
                &[vactive, sel],
                &format!("update{k:+}"),
                false,
            )?;
            updates.push((u, k));
        }
        let initial = cfg.tap_index(cfg.initial_tap_delay)?;
        nl.sim.add_component(Box::new(TapWriter {
            updates,
            reset: vreset,
            sets,
            resets,
            current: initial,
            initial,
            taps_per_node: (cfg.cd.stage_delay.0 / cfg.tap_pitch.0) as i64,
            strobe: TimePs::ns(1),
        }));

        // mode latch
        let sel0 = grants[s as usize];
        let mid_training = nl.gate(GateKind::Nor, &[vactive, sel0], "mid_training", false)?;
        let mode_set = nl.delay(mid_training, cfg.mode_set_delay, "mode_set")?;
        nl.sim.add_component(Box::new(
            SrLatch::new(mode_set, vreset, vactive).with_qn(vtraining),
        ));

        // output timing: one-shot on the later input, padded to the latency
        let l1_rst = nl.net("pair_rst", false)?;
        let l1 = nl.latch(vin1, l1_rst, "seen_a", false)?;
        let l2 = nl.latch(vin2, l1_rst, "seen_b", false)?;
        let both = nl.gate(GateKind::And, &[l1, l2], "both_seen", false)?;
        let both_late = nl.delay(both, TimePs::ns(11), "both_seen_late")?;
        nl.sim.add_component(Box::new(
            crate::gates::Gate::new(GateKind::Or, vec![vreset, both_late], l1_rst).expect("or"),
        ));
        let both_10 = nl.delay(both, TimePs::ns(10), "both_seen_10")?;
        let not_both_10 = nl.gate(GateKind::Inv, &[both_10], "not_both_10", false)?;
        let shot = nl.gate(GateKind::And, &[both, not_both_10], "out_shot", false)?;
        let padded = nl.delay(shot, cfg.output_pad_delay, "out_padded")?;

        // recognition hold: set by a middle coincidence in active mode,
        // cleared when the padded one-shot ends
        let padded_1 = nl.delay(padded, TimePs::ns(1), "out_padded_1")?;
        let not_padded = nl.gate(GateKind::Inv, &[padded], "not_out_padded", false)?;
        let shot_end = nl.gate(GateKind::And, &[not_padded, padded_1], "out_end", false)?;
        let recog_rst = nl.gate(GateKind::Or, &[vreset, shot_end], "recog_rst", false)?;
        let recog_set = nl.gate(GateKind::Nor, &[sel0, vtraining], "recog_set", false)?;
        let recog = nl.latch(recog_set, recog_rst, "recog", false)?;
        nl.sim.add_component(Box::new(
            crate::gates::Gate::new(GateKind::And, vec![recog, padded], vout).expect("and"),
        ));

        let mut dev = DesignA {
            cfg,
            sim,
            vin1,
            vin2,
            vreset,
            vout,
            vactive,
            vtraining,
            tap_q,
            cd,
            last_end: None,
            reset_count: 0,
        };
        // active-low nets start LOW, so the strobes glitch once at start-up;
        // a power-on reset after the mode-set delay clears what they latched
        let por = cfg_settle(&dev.cfg);
        dev.sim.run_until(por)?;
        dev.sim
            .drive_pulse(dev.vreset, Pulse::new(por, TimePs::ns(5))?)?;
        dev.sim.run_until(por + TimePs::ns(10))?;
        Ok(dev)
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn now(&self) -> TimePs {
        self.sim.now()
    }

    pub fn traces(&self) -> TraceSet {
        self.sim.trace_set()
    }

    /// Earliest start for the next pattern that respects the pattern gap.
    pub fn next_start(&self) -> TimePs {
        let gap = self
            .last_end
            .map(|e| e + self.cfg.pattern_delay_min)
            .unwrap_or(TimePs::ZERO);
        gap.max(self.sim.now())
    }

    /// Resets issued since construction, not counting the power-on reset.
    pub fn reset_count(&self) -> u64 {
        self.reset_count
    }

    pub fn is_active(&self) -> bool {
        self.sim.level(self.vactive).is_high()
    }

    pub fn selected_tap(&self) -> Result<TimePs, DesignAError> {
        let high: Vec<usize> = self
            .tap_q
            .iter()
            .enumerate()
            .filter(|(_, &q)| self.sim.level(q).is_high())
            .map(|(j, _)| j)
            .collect();
        match high.as_slice() {
            [j] => Ok(self.cfg.tap_delay(*j)),
            _ => Err(DesignAError::NotOneHot(high.len())),
        }
    }

    /// True when a pair would break the width, offset or pattern-gap envelope.
    pub fn violates(&self, a_rise: TimePs, b_rise: TimePs, width: TimePs) -> bool {
        let w_ok = (10_000..=12_000).contains(&width.0);
        let d = b_rise.diff(a_rise).unsigned_abs();
        let d_ok = (10_000..=11_000).contains(&d) || (20_000..=21_000).contains(&d);
        let gap_ok = self
            .last_end
            .is_none_or(|e| a_rise.min(b_rise) >= e + self.cfg.pattern_delay_min);
        !(w_ok && d_ok && gap_ok)
    }

    /// Drives one input pair without running the simulation.
    pub fn schedule_pair(
        &mut self,
        a_rise: TimePs,
        b_rise: TimePs,
        width: TimePs,
    ) -> Result<bool, DesignAError> {
        let violation = self.violates(a_rise, b_rise, width);
        self.sim
            .drive_pulse(self.vin1, Pulse::new(a_rise, width)?)?;
        self.sim
            .drive_pulse(self.vin2, Pulse::new(b_rise, width)?)?;
        self.last_end = Some(a_rise.max(b_rise) + width);
        Ok(violation)
    }

    pub fn run_until(&mut self, t: TimePs) -> Result<(), DesignAError> {
        Ok(self.sim.run_until(t)?)
    }

    pub fn vout_rises(&self, from: TimePs) -> Result<Vec<TimePs>, DesignAError> {
        Ok(self
            .sim
            .trace(self.vout)?
            .iter()
            .filter(|&&(t, l)| l == Level::High && t >= from)
            .map(|&(t, _)| t)
            .collect())
    }

    /// Presents one pair and runs until its outcome is settled.
    pub fn present(
        &mut self,
        a_rise: TimePs,
        b_rise: TimePs,
        width: TimePs,
    ) -> Result<Presentation, DesignAError> {
        let start = self.sim.now();
        let was_active = self.is_active();
        let tap_before = self.selected_tap()?;
        let violation = self.schedule_pair(a_rise, b_rise, width)?;
        let later = a_rise.max(b_rise);
        self.sim
            .run_until(later + OUTPUT_LATENCY + TimePs::ns(11))?;
        let outcome = if let Some(&t_out) = self.vout_rises(start)?.first() {
            Outcome::Recognized { t_out }
        } else if !was_active && self.is_active() {
            Outcome::EnteredActive
        } else {
            let tap = self.selected_tap()?;
            if tap != tap_before {
                Outcome::Trained { tap_delay: tap }
            } else {
                Outcome::NoMatch
            }
        };
        Ok(Presentation {
            outcome,
            timing_violation: violation,
        })
    }

    /// Pulses Vreset for 5 ns and lets the device settle.
    pub fn reset(&mut self) -> Result<(), DesignAError> {
        let t = self.sim.now();
        self.sim
            .drive_pulse(self.vreset, Pulse::new(t, TimePs::ns(5))?)?;
        self.sim.run_until(t + TimePs::ns(10))?;
        self.reset_count += 1;
        Ok(())
    }

    /// Resets at an absolute time without running the simulation.
    pub fn schedule_reset(&mut self, at: TimePs) -> Result<(), DesignAError> {
        self.sim
            .drive_pulse(self.vreset, Pulse::new(at, TimePs::ns(5))?)?;
        self.reset_count += 1;
        Ok(())
    }
}
