//! Behavioral logic primitives.
//!
//! Every component here is a [`Component`] that can be placed in a
//! [`Simulation`](crate::simkernel::Simulation). Delays are transport delays.

use crate::simkernel::{Component, Ctx, Level, NetId, SimError, Simulation, TimePs};
use thiserror::Error;

pub const DEFAULT_GATE_DELAY: TimePs = TimePs::ps(100);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GateError {
    #[error("{kind:?} takes {expected} inputs, got {got}")]
    ArityMismatch {
        kind: GateKind,
        expected: &'static str,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Inv,
    And,
    Or,
    Nand,
    Nor,
}

impl GateKind {
    pub const ALL: [GateKind; 5] = [
        GateKind::Inv,
        GateKind::And,
        GateKind::Or,
        GateKind::Nand,
        GateKind::Nor,
    ];
}

pub fn eval_gate(kind: GateKind, inputs: &[Level]) -> Result<Level, GateError> {
    let arity_ok = match kind {
        GateKind::Inv => inputs.len() == 1,
        _ => inputs.len() >= 2,
    };
    if !arity_ok {
        return Err(GateError::ArityMismatch {
            kind,
            expected: if kind == GateKind::Inv { "1" } else { ">= 2" },
            got: inputs.len(),
        });
    }
    let all = inputs.iter().all(|l| l.is_high());
    let any = inputs.iter().any(|l| l.is_high());
    Ok(Level::from_bool(match kind {
        GateKind::Inv => !inputs[0].is_high(),
        GateKind::And => all,
        GateKind::Or => any,
        GateKind::Nand => !all,
        GateKind::Nor => !any,
    }))
}

/// Next latch state. Reset wins when both inputs are HIGH.
pub fn latch_update(s: Level, r: Level, q_prev: Level) -> Level {
    match (s, r) {
        (_, Level::High) => Level::Low,
        (Level::High, Level::Low) => Level::High,
        (Level::Low, Level::Low) => q_prev,
    }
}

pub struct Gate {
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
    pub output: NetId,
    pub delay: TimePs,
}

impl Gate {
    pub fn new(kind: GateKind, inputs: Vec<NetId>, output: NetId) -> Result<Self, GateError> {
        // validate arity once up front
        eval_gate(kind, &vec![Level::Low; inputs.len()])?;
        Ok(Gate {
            kind,
            inputs,
            output,
            delay: DEFAULT_GATE_DELAY,
        })
    }

    pub fn with_delay(mut self, delay: TimePs) -> Self {
        self.delay = delay;
        self
    }

    fn evaluate(&self, ctx: &mut Ctx<'_>) {
        let levels: Vec<Level> = self.inputs.iter().map(|&n| ctx.level(n)).collect();
        let v = eval_gate(self.kind, &levels).expect("arity checked in constructor");
        ctx.drive(self.output, v, self.delay);
    }
}

impl Component for Gate {
    fn inputs(&self) -> Vec<NetId> {
        self.inputs.clone()
    }
    fn init(&mut self, ctx: &mut Ctx<'_>) {
        self.evaluate(ctx);
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, _net: NetId) {
        self.evaluate(ctx);
    }
}

/// Reset-dominant SR latch with optional complementary output.
pub struct SrLatch {
    pub set: NetId,
    pub reset: NetId,
    pub q: NetId,
    pub qn: Option<NetId>,
    pub delay: TimePs,
    state: Level,
}

impl SrLatch {
    pub fn new(set: NetId, reset: NetId, q: NetId) -> Self {
        SrLatch {
            set,
            reset,
            q,
            qn: None,
            delay: DEFAULT_GATE_DELAY,
            state: Level::Low,
        }
    }

    pub fn with_qn(mut self, qn: NetId) -> Self {
        self.qn = Some(qn);
        self
    }

    pub fn with_delay(mut self, delay: TimePs) -> Self {
        self.delay = delay;
        self
    }

    fn emit(&self, ctx: &mut Ctx<'_>) {
        ctx.drive(self.q, self.state, self.delay);
        if let Some(qn) = self.qn {
            ctx.drive(qn, !self.state, self.delay);
        }
    }
}

impl Component for SrLatch {
    fn inputs(&self) -> Vec<NetId> {
        vec![self.set, self.reset]
    }
    fn init(&mut self, ctx: &mut Ctx<'_>) {
        self.state = latch_update(ctx.level(self.set), ctx.level(self.reset), self.state);
        self.emit(ctx);
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, _net: NetId) {
        let next = latch_update(ctx.level(self.set), ctx.level(self.reset), self.state);
        if next != self.state {
            self.state = next;
            self.emit(ctx);
        }
    }
}

/// Two antiphase pass gates in series. The internal node tracks the input
/// while the clock is HIGH; the output takes the internal node on the falling
/// edge and holds it for a full period.
pub struct SampleHold {
    pub input: NetId,
    pub clock: NetId,
    pub output: NetId,
    pub delay: TimePs,
    internal: Level,
}

impl SampleHold {
    pub fn new(input: NetId, clock: NetId, output: NetId) -> Self {
        SampleHold {
            input,
            clock,
            output,
            delay: DEFAULT_GATE_DELAY,
            internal: Level::Low,
        }
    }

    pub fn with_delay(mut self, delay: TimePs) -> Self {
        self.delay = delay;
        self
    }
}

impl Component for SampleHold {
    fn inputs(&self) -> Vec<NetId> {
        vec![self.input, self.clock]
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, net: NetId) {
        let clk = ctx.level(self.clock);
        if net == self.clock && clk == Level::Low {
            ctx.drive(self.output, self.internal, self.delay);
        } else if clk == Level::High {
            self.internal = ctx.level(self.input);
        }
    }
}

/// Square-wave clock with rising edges at `phase + k * period`.
pub struct ClockGen {
    pub output: NetId,
    pub period: TimePs,
    pub duty_percent: u64,
    pub phase: TimePs,
}

impl ClockGen {
    pub fn new(output: NetId, period: TimePs, phase: TimePs) -> Self {
        ClockGen {
            output,
            period,
            duty_percent: 50,
            phase,
        }
    }

    pub fn high_time(&self) -> TimePs {
        TimePs(self.period.0 * self.duty_percent / 100)
    }

    /// Falling edge times in `[from, to]`.
    pub fn falling_edges(&self, from: TimePs, to: TimePs) -> Vec<TimePs> {
        let first = self.phase.0 + self.high_time().0;
        let mut out = Vec::new();
        let mut t = first;
        if from.0 > first {
            t = first + (from.0 - first).div_ceil(self.period.0) * self.period.0;
        }
        while t <= to.0 {
            out.push(TimePs(t));
            t += self.period.0;
        }
        out
    }
}

impl Component for ClockGen {
    fn inputs(&self) -> Vec<NetId> {
        Vec::new()
    }
    fn init(&mut self, ctx: &mut Ctx<'_>) {
        assert!(self.period.0 > 0 && (1..100).contains(&self.duty_percent));
        ctx.wake_at(self.phase, 0);
    }
    fn on_input(&mut self, _ctx: &mut Ctx<'_>, _net: NetId) {}
    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        let now = ctx.now();
        if token == 0 {
            ctx.drive(self.output, Level::High, TimePs::ZERO);
            ctx.wake_at(now + self.high_time(), 1);
        } else {
            ctx.drive(self.output, Level::Low, TimePs::ZERO);
            ctx.wake_at(now + TimePs(self.period.0 - self.high_time().0), 0);
        }
    }
}

/// Transport-delay buffer.
pub struct Delay {
    pub input: NetId,
    pub output: NetId,
    pub delay: TimePs,
}

impl Component for Delay {
    fn inputs(&self) -> Vec<NetId> {
        vec![self.input]
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, _net: NetId) {
        let v = ctx.level(self.input);
        ctx.drive(self.output, v, self.delay);
    }
}

/// Inertial filter: the output only follows input levels held for at least
/// `min_width`. A level held for exactly `min_width` passes.
pub struct GlitchFilter {
    pub input: NetId,
    pub output: NetId,
    pub min_width: TimePs,
    pub idle: Level,
    generation: u64,
    since: TimePs,
    pending: Option<Level>,
}

impl GlitchFilter {
    pub fn new(input: NetId, output: NetId, min_width: TimePs, idle: Level) -> Self {
        GlitchFilter {
            input,
            output,
            min_width,
            idle,
            generation: 0,
            since: TimePs::ZERO,
            pending: None,
        }
    }
}

impl Component for GlitchFilter {
    fn inputs(&self) -> Vec<NetId> {
        vec![self.input]
    }
    fn init(&mut self, ctx: &mut Ctx<'_>) {
        ctx.drive(self.output, self.idle, TimePs::ZERO);
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, _net: NetId) {
        let now = ctx.now();
        // a level that lasted exactly min_width still counts, whatever the
        // queue order of its ending edge and its timer
        if let Some(prev) = self.pending.take() {
            if now.saturating_sub(self.since) >= self.min_width {
                ctx.drive(self.output, prev, TimePs::ZERO);
            }
        }
        self.generation += 1;
        self.since = now;
        self.pending = Some(ctx.level(self.input));
        ctx.wake_at(now + self.min_width, self.generation);
    }
    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        if token == self.generation {
            if let Some(v) = self.pending.take() {
                ctx.drive(self.output, v, TimePs::ZERO);
            }
        }
    }
}

/// Catches any assertion of `input` since the previous clock falling edge and
/// presents it for one clock period starting at the next falling edge.
pub struct ClockedCatch {
    pub input: NetId,
    pub clock: NetId,
    pub output: NetId,
    pub asserted: Level,
    pub delay: TimePs,
    armed: bool,
}

impl ClockedCatch {
    pub fn new(input: NetId, clock: NetId, output: NetId, asserted: Level) -> Self {
        ClockedCatch {
            input,
            clock,
            output,
            asserted,
            delay: DEFAULT_GATE_DELAY,
            armed: false,
        }
    }
}

impl Component for ClockedCatch {
    fn inputs(&self) -> Vec<NetId> {
        vec![self.input, self.clock]
    }
    fn init(&mut self, ctx: &mut Ctx<'_>) {
        ctx.drive(self.output, !self.asserted, TimePs::ZERO);
    }
    fn on_input(&mut self, ctx: &mut Ctx<'_>, net: NetId) {
        if net == self.input {
            if ctx.level(self.input) == self.asserted {
                self.armed = true;
            }
        } else if ctx.level(self.clock) == Level::Low {
            let out = if self.armed {
                self.asserted
            } else {
                !self.asserted
            };
            ctx.drive(self.output, out, self.delay);
            self.armed = ctx.level(self.input) == self.asserted;
        }
    }
}

/// Convenience wrapper for wiring primitives into a simulation.
pub struct Netlist<'a> {
    pub sim: &'a mut Simulation,
}

impl<'a> Netlist<'a> {
    pub fn new(sim: &'a mut Simulation) -> Self {
        Netlist { sim }
    }

    pub fn net(&mut self, name: &str, traced: bool) -> Result<NetId, SimError> {
        self.sim.add_net(name, traced)
    }

    /// Adds a gate driving a fresh net. Panics on a bad arity, which is a wiring bug.
    pub fn gate(
        &mut self,
        kind: GateKind,
        inputs: &[NetId],
        name: &str,
        traced: bool,
    ) -> Result<NetId, SimError> {
        let out = self.sim.add_net(name, traced)?;
        let g = Gate::new(kind, inputs.to_vec(), out).expect("gate arity");
        self.sim.add_component(Box::new(g));
        Ok(out)
    }

    pub fn delay(&mut self, input: NetId, delay: TimePs, name: &str) -> Result<NetId, SimError> {
        let out = self.sim.add_net(name, false)?;
        self.sim.add_component(Box::new(Delay {
            input,
            output: out,
            delay,
        }));
        Ok(out)
    }

    pub fn latch(
        &mut self,
        set: NetId,
        reset: NetId,
        name: &str,
        traced: bool,
    ) -> Result<NetId, SimError> {
        let q = self.sim.add_net(name, traced)?;
        self.sim
            .add_component(Box::new(SrLatch::new(set, reset, q)));
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::Pulse;
    use proptest::prelude::*;

    fn reference(kind: GateKind, bits: &[bool]) -> bool {
        match kind {
            GateKind::Inv => !bits[0],
            GateKind::And => bits.iter().fold(true, |a, b| a & b),
            GateKind::Or => bits.iter().fold(false, |a, b| a | b),
            GateKind::Nand => !bits.iter().fold(true, |a, b| a & b),
            GateKind::Nor => !bits.iter().fold(false, |a, b| a | b),
        }
    }

    #[test]
    fn truth_tables_exhaustive() {
        for kind in GateKind::ALL {
            let arities: &[usize] = if kind == GateKind::Inv {
                &[1]
            } else {
                &[2, 3, 4]
            };
            for &n in arities {
                for mask in 0..(1u32 << n) {
                    let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    let levels: Vec<Level> = bits.iter().map(|&b| Level::from_bool(b)).collect();
                    assert_eq!(
                        eval_gate(kind, &levels).unwrap(),
                        Level::from_bool(reference(kind, &bits)),
                        "{kind:?} {bits:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn truth_tables_and_arity() {
        use Level::*;
        assert_eq!(eval_gate(GateKind::Nand, &[High, High]).unwrap(), Low);
        assert_eq!(eval_gate(GateKind::Nor, &[Low, Low]).unwrap(), High);
        assert_eq!(eval_gate(GateKind::Or, &[Low; 4]).unwrap(), Low);
        assert!(eval_gate(GateKind::Inv, &[Low, Low]).is_err());
        assert!(eval_gate(GateKind::And, &[High]).is_err());
    }

    #[test]
    fn latch_decision_table() {
        use Level::*;
        let table = [
            (Low, Low, Low, Low),
            (Low, Low, High, High),
            (High, Low, Low, High),
            (High, Low, High, High),
            (Low, High, Low, Low),
            (Low, High, High, Low),
            (High, High, Low, Low),
            (High, High, High, Low),
        ];
        for (s, r, q, want) in table {
            assert_eq!(latch_update(s, r, q), want, "{s:?} {r:?} {q:?}");
        }
    }

    proptest! {
        #[test]
        fn latch_follows_last_action(actions in proptest::collection::vec(any::<bool>(), 1..40)) {
            let mut sim = Simulation::new();
            let s = sim.add_net("s", false).unwrap();
            let r = sim.add_net("r", false).unwrap();
            let q = sim.add_net("q", true).unwrap();
            sim.add_component(Box::new(SrLatch::new(s, r, q)));
            for (i, &set) in actions.iter().enumerate() {
                let net = if set { s } else { r };
                let p = Pulse::new(TimePs::ns(10 * i as u64 + 1), TimePs::ns(2)).unwrap();
                sim.drive_pulse(net, p).unwrap();
            }
            sim.run_until(TimePs::ns(10 * actions.len() as u64 + 10)).unwrap();
            prop_assert_eq!(sim.level(q), Level::from_bool(*actions.last().unwrap()));
        }

        #[test]
        fn sample_hold_changes_only_on_falling_edges(
            pulses in proptest::collection::vec((0u64..200, 1u64..30), 0..6)
        ) {
            let mut sim = Simulation::new();
            let d = sim.add_net("d", false).unwrap();
            let clk = sim.add_net("clk", false).unwrap();
            let o = sim.add_net("o", true).unwrap();
            let gen = ClockGen::new(clk, TimePs::ns(10), TimePs::ns(3));
            let edges = gen.falling_edges(TimePs::ZERO, TimePs::ns(400));
            sim.add_component(Box::new(gen));
            sim.add_component(Box::new(SampleHold::new(d, clk, o)));
            let mut t = 0;
            for (gap, w) in pulses {
                t += gap * 100 + 1;
                sim.drive_pulse(d, Pulse::new(TimePs(t * 10), TimePs::ns(w)).unwrap()).unwrap();
                t += w * 100 + 1;
            }
            sim.run_until(TimePs::ns(400)).unwrap();
            for &(time, _) in sim.trace(o).unwrap() {
                prop_assert!(edges.iter().any(|&e| e + DEFAULT_GATE_DELAY == time));
            }
        }
    }

    fn sh_sim() -> (Simulation, NetId, NetId) {
        let mut sim = Simulation::new();
        let d = sim.add_net("d", false).unwrap();
        let clk = sim.add_net("clk", false).unwrap();
        let o = sim.add_net("o", true).unwrap();
        sim.add_component(Box::new(ClockGen::new(clk, TimePs::ns(10), TimePs::ZERO)));
        sim.add_component(Box::new(SampleHold::new(d, clk, o)));
        (sim, d, o)
    }

    #[test]
    fn sample_hold_full_cycle_holds_over_half_period() {
        let (mut sim, d, o) = sh_sim();
        sim.drive_pulse(d, Pulse::new(TimePs::ns(10), TimePs::ns(10)).unwrap())
            .unwrap();
        sim.run_until(TimePs::ns(50)).unwrap();
        let p = sim.pulses_of(o).unwrap().pulses;
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].rise, TimePs::ps(15_100));
        assert!(p[0].width > TimePs::ns(5));
    }

    #[test]
    fn sample_hold_ignores_pulse_in_hold_phase() {
        let (mut sim, d, o) = sh_sim();
        sim.drive_pulse(d, Pulse::new(TimePs::ns(6), TimePs::ns(3)).unwrap())
            .unwrap();
        sim.run_until(TimePs::ns(50)).unwrap();
        assert!(sim.trace(o).unwrap().is_empty());
    }

    #[test]
    fn clock_edges_exact() {
        let mut sim = Simulation::new();
        let clk = sim.add_net("clk", true).unwrap();
        sim.add_component(Box::new(ClockGen::new(clk, TimePs::ns(10), TimePs::ns(6))));
        sim.run_until(TimePs::ns(40)).unwrap();
        let rises: Vec<TimePs> = sim
            .pulses_of(clk)
            .unwrap()
            .pulses
            .iter()
            .map(|p| p.rise)
            .collect();
        assert_eq!(rises, vec![TimePs::ns(6), TimePs::ns(16), TimePs::ns(26)]);
    }

    #[test]
    fn glitch_filter_threshold() {
        for (w, passes) in [(999u64, false), (1000, true), (3000, true)] {
            let mut sim = Simulation::new();
            let i = sim.add_net("i", false).unwrap();
            let o = sim.add_net("o", true).unwrap();
            sim.add_component(Box::new(GlitchFilter::new(i, o, TimePs::ns(1), Level::Low)));
            sim.drive_pulse(i, Pulse::new(TimePs::ns(5), TimePs(w)).unwrap())
                .unwrap();
            sim.run_until(TimePs::ns(20)).unwrap();
            assert_eq!(!sim.trace(o).unwrap().is_empty(), passes, "width {w}");
        }
    }

    #[test]
    fn clocked_catch_presents_on_next_falling_edge() {
        let mut sim = Simulation::new();
        let i = sim.add_net("i", false).unwrap();
        let clk = sim.add_net("clk", false).unwrap();
        let o = sim.add_net("o", true).unwrap();
        sim.add_component(Box::new(ClockGen::new(clk, TimePs::ns(10), TimePs::ZERO)));
        sim.add_component(Box::new(ClockedCatch::new(i, clk, o, Level::High)));
        sim.drive_pulse(i, Pulse::new(TimePs::ns(6), TimePs::ns(2)).unwrap())
            .unwrap();
        sim.run_until(TimePs::ns(50)).unwrap();
        let p = sim.pulses_of(o).unwrap().pulses;
        assert_eq!(
            p,
            vec![Pulse {
                rise: TimePs::ps(15_100),
                width: TimePs::ns(10)
            }]
        );
    }
}
