//! Bias-tunable delay line with width distortion and subelement taps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simkernel::{Component, Ctx, Level, NetId, Pulse, TimePs};

/// Units in the calibrated reference line.
pub const CALIBRATED_UNITS: u64 = 8;
pub const UNITS_PER_SUBELEMENT: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DelayLineError {
    #[error("bias {0} mV is outside the calibrated range")]
    BiasOutOfRange(i64),
    #[error("tap {tap} is outside a line of {units} units")]
    TapOutOfRange { tap: u64, units: u64 },
    #[error("calibration: {0}")]
    BadCalibration(String),
}

/// Bias voltage to full-line delay table, interpolated piecewise linearly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasCalibration {
    /// `(bias_mV, line_delay_ps)` sorted by bias.
    pub points: Vec<(i64, u64)>,
}

impl Default for BiasCalibration {
    fn default() -> Self {
        BiasCalibration {
            points: vec![(700, 60_000), (950, 40_000), (1180, 20_000), (1800, 20_000)],
        }
    }
}

impl BiasCalibration {
    pub fn new(points: Vec<(i64, u64)>) -> Result<Self, DelayLineError> {
        let cal = BiasCalibration { points };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<(), DelayLineError> {
        if self.points.is_empty() {
            return Err(DelayLineError::BadCalibration("no points".into()));
        }
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DelayLineError::BadCalibration(
                    "bias values must be strictly increasing".into(),
                ));
            }
            if w[1].1 > w[0].1 {
                return Err(DelayLineError::BadCalibration(
                    "delay must not increase with bias".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn range(&self) -> (i64, i64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    pub fn line_delay_for_bias(&self, bias_mv: i64) -> Result<TimePs, DelayLineError> {
        let (lo, hi) = self.range();
        if bias_mv < lo || bias_mv > hi {
            return Err(DelayLineError::BiasOutOfRange(bias_mv));
        }
        for w in self.points.windows(2) {
            let ((b0, d0), (b1, d1)) = (w[0], w[1]);
            if bias_mv <= b1 {
                let num = (d0 as i128 - d1 as i128) * (bias_mv - b0) as i128;
                let den = (b1 - b0) as i128;
                let drop = (2 * num + den) / (2 * den);
                return Ok(TimePs((d0 as i128 - drop) as u64));
            }
        }
        Ok(TimePs(self.points[0].1))
    }

    pub fn unit_delay_for_bias(&self, bias_mv: i64) -> Result<TimePs, DelayLineError> {
        Ok(TimePs(
            self.line_delay_for_bias(bias_mv)?.0 / CALIBRATED_UNITS,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TunableDelayLine {
    pub n_units: u64,
    pub bias_mv: i64,
    pub width_shrink_per_unit: TimePs,
    pub min_propagable_width: TimePs,
    pub calibration: BiasCalibration,
}

impl TunableDelayLine {
    pub fn new(bias_mv: i64) -> Self {
        TunableDelayLine {
            n_units: CALIBRATED_UNITS,
            bias_mv,
            width_shrink_per_unit: TimePs::ps(250),
            min_propagable_width: TimePs::ns(1),
            calibration: BiasCalibration::default(),
        }
    }

    pub fn unit_delay(&self) -> Result<TimePs, DelayLineError> {
        self.calibration.unit_delay_for_bias(self.bias_mv)
    }

    /// Sends `pulse` through `n` units. `None` if distortion kills it.
    pub fn propagate(&self, pulse: Pulse, n: u64) -> Result<Option<Pulse>, DelayLineError> {
        if n > self.n_units {
            return Err(DelayLineError::TapOutOfRange {
                tap: n,
                units: self.n_units,
            });
        }
        let u = self.unit_delay()?;
        Ok(distort(
            pulse,
            n,
            u,
            self.width_shrink_per_unit,
            self.min_propagable_width,
        ))
    }

    /// Output at subelement boundary `tap` (1-based).
    pub fn tap_pulse(&self, pulse: Pulse, tap: u64) -> Result<Option<Pulse>, DelayLineError> {
        if tap == 0 || tap * UNITS_PER_SUBELEMENT > self.n_units {
            return Err(DelayLineError::TapOutOfRange {
                tap,
                units: self.n_units,
            });
        }
        self.propagate(pulse, tap * UNITS_PER_SUBELEMENT)
    }
}

fn distort(pulse: Pulse, n: u64, unit: TimePs, shrink: TimePs, min_width: TimePs) -> Option<Pulse> {
    let lost = shrink.0 * n;
    if pulse.width.0 < lost + min_width.0 {
        return None;
    }
    Some(Pulse {
        rise: pulse.rise + unit * n,
        width: TimePs(pulse.width.0 - lost),
    })
}

/// Where a line gets its bias from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BiasSource {
    Fixed(i64),
    /// The first HIGH select net wins; `default` applies when none is HIGH.
    Select {
        default: i64,
        options: Vec<(NetId, i64)>,
    },
}

impl BiasSource {
    fn current(&self, ctx: &Ctx<'_>) -> i64 {
        match self {
            BiasSource::Fixed(v) => *v,
            BiasSource::Select { default, options } => options
                .iter()
                .find(|(n, _)| ctx.level(*n).is_high())
                .map(|&(_, v)| v)
                .unwrap_or(*default),
        }
    }

    fn nets(&self) -> Vec<NetId> {
        match self {
            BiasSource::Fixed(_) => Vec::new(),
            BiasSource::Select { options, .. } => options.iter().map(|&(n, _)| n).collect(),
        }
    }
}

struct InFlight {
    rise: TimePs,
    fall: Option<TimePs>,
    unit: TimePs,
}

/// Event-level delay line. Each output is tapped after a given number of units.
/// The bias in effect at an input rise applies to that whole pulse.
pub struct TappedLineComponent {
    input: NetId,
    taps: Vec<(u64, NetId)>,
    bias: BiasSource,
    analog_name: Option<String>,
    line: TunableDelayLine,
    flights: Vec<InFlight>,
}

impl TappedLineComponent {
    pub fn new(
        input: NetId,
        taps: Vec<(u64, NetId)>,
        bias: BiasSource,
        line: TunableDelayLine,
    ) -> Self {
        TappedLineComponent {
            input,
            taps,
            bias,
            analog_name: None,
            line,
            flights: Vec::new(),
        }
    }

    /// Records the bias as a stepwise analog trace under `name`.
    pub fn with_analog_trace(mut self, name: &str) -> Self {
        self.analog_name = Some(name.to_string());
        self
    }

    fn token(&self, flight: usize, tap: usize) -> u64 {
        (flight * self.taps.len() + tap) as u64
    }

    fn record_bias(&self, ctx: &mut Ctx<'_>) {
        if let Some(name) = &self.analog_name {
            let v = self.bias.current(ctx);
            ctx.record_analog(name, v);
        }
    }
}

impl Component for TappedLineComponent {
    fn inputs(&self) -> Vec<NetId> {
        let mut v = vec![self.input];
        v.extend(self.bias.nets());
        v
    }

    fn init(&mut self, ctx: &mut Ctx<'_>) {
        self.record_bias(ctx);
    }

    fn on_input(&mut self, ctx: &mut Ctx<'_>, net: NetId) {
        if net != self.input {
            self.record_bias(ctx);
            return;
        }
        let now = ctx.now();
        if ctx.level(self.input).is_high() {
            let bias = self.bias.current(ctx);
            let unit = self
                .line
                .calibration
                .unit_delay_for_bias(bias)
                .expect("bias source outside calibration");
            let id = self.flights.len();
            self.flights.push(InFlight {
                rise: now,
                fall: None,
                unit,
            });
            for (i, &(n, _)) in self.taps.iter().enumerate() {
                let tok = self.token(id, i);
                ctx.wake_at(now + unit * n, tok);
            }
        } else if let Some(f) = self.flights.last_mut() {
            f.fall = Some(now);
            let (rise, unit) = (f.rise, f.unit);
            for &(n, out) in &self.taps {
                // the output rise has already happened: schedule its fall here
                if rise + unit * n <= now && self.line.propagate_ok(now.0 - rise.0, n) {
                    let fall = now + TimePs((unit.0 - self.line.width_shrink_per_unit.0) * n);
                    ctx.drive_at(out, Level::Low, fall.max(now));
                }
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        let ntaps = self.taps.len();
        let (id, tap) = (token as usize / ntaps, token as usize % ntaps);
        let (n, out) = self.taps[tap];
        let f = &self.flights[id];
        let now = ctx.now();
        match f.fall {
            // still HIGH at the input, so the pulse is wide enough to survive
            None => ctx.drive(out, Level::High, TimePs::ZERO),
            Some(fall) => {
                let p = Pulse {
                    rise: f.rise,
                    width: TimePs(fall.0 - f.rise.0),
                };
                let shrink = self.line.width_shrink_per_unit;
                if let Some(q) = distort(p, n, f.unit, shrink, self.line.min_propagable_width) {
                    ctx.drive(out, Level::High, TimePs::ZERO);
                    // when fall == now the input fall hook already scheduled the output fall
                    if fall < now {
                        ctx.drive_at(out, Level::Low, q.fall());
                    }
                }
            }
        }
    }
}

impl TunableDelayLine {
    fn propagate_ok(&self, width_ps: u64, n: u64) -> bool {
        width_ps >= self.width_shrink_per_unit.0 * n + self.min_propagable_width.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::Simulation;
    use proptest::prelude::*;

    fn p(rise_ns: u64, width_ps: u64) -> Pulse {
        Pulse {
            rise: TimePs::ns(rise_ns),
            width: TimePs(width_ps),
        }
    }

    #[test]
    fn calibration_anchors() {
        let cal = BiasCalibration::default();
        assert_eq!(cal.line_delay_for_bias(700).unwrap(), TimePs::ns(60));
        assert_eq!(cal.line_delay_for_bias(950).unwrap(), TimePs::ns(40));
        assert_eq!(cal.line_delay_for_bias(1180).unwrap(), TimePs::ns(20));
        assert_eq!(cal.line_delay_for_bias(1800).unwrap(), TimePs::ns(20));
        assert_eq!(cal.line_delay_for_bias(825).unwrap(), TimePs::ns(50));
        assert!(matches!(
            cal.line_delay_for_bias(699),
            Err(DelayLineError::BiasOutOfRange(699))
        ));
        assert!(cal.line_delay_for_bias(1801).is_err());
    }

    #[test]
    fn bad_calibration_rejected() {
        assert!(BiasCalibration::new(vec![(700, 10), (600, 5)]).is_err());
        assert!(BiasCalibration::new(vec![(700, 10), (800, 20)]).is_err());
        assert!(BiasCalibration::new(vec![]).is_err());
    }

    #[test]
    fn propagate_examples() {
        let slow = TunableDelayLine::new(700);
        assert_eq!(slow.propagate(p(0, 10_000), 8).unwrap(), Some(p(60, 8_000)));
        assert_eq!(slow.propagate(p(3, 4_321), 0).unwrap(), Some(p(3, 4_321)));
        assert_eq!(slow.propagate(p(0, 2_500), 8).unwrap(), None);
        assert!(slow.propagate(p(0, 10_000), 9).is_err());
    }

    #[test]
    fn width_table_brute_force() {
        let line = TunableDelayLine::new(700);
        for w in (500..=15_000).step_by(250) {
            let out = line.propagate(p(0, w), 8).unwrap();
            let expect = w as i64 - 2000;
            assert_eq!(out.is_some(), expect >= 1000, "width {w}");
            if let Some(q) = out {
                assert_eq!(q.width.0 as i64, expect);
            }
        }
    }

    #[test]
    fn tap_examples() {
        let line = TunableDelayLine::new(1180);
        assert_eq!(
            line.tap_pulse(p(0, 10_000), 3).unwrap().unwrap().rise,
            TimePs::ns(15)
        );
        assert_eq!(
            line.tap_pulse(p(0, 10_000), 1).unwrap().unwrap().rise,
            TimePs::ns(5)
        );
        assert!(matches!(
            line.tap_pulse(p(0, 10_000), 5),
            Err(DelayLineError::TapOutOfRange { .. })
        ));
        assert!(line.tap_pulse(p(0, 10_000), 0).is_err());
    }

    proptest! {
        #[test]
        fn delay_non_increasing(a in 700i64..=1800, b in 700i64..=1800) {
            let cal = BiasCalibration::default();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(cal.line_delay_for_bias(lo).unwrap() >= cal.line_delay_for_bias(hi).unwrap());
        }

        #[test]
        fn propagate_composes(bias in 700i64..=1800, w in 1000u64..20_000, k in 0u64..=8, m in 0u64..=8) {
            prop_assume!(k + m <= 8);
            let line = TunableDelayLine::new(bias);
            let start = p(5, w);
            let two = line.propagate(start, k).unwrap().and_then(|q| line.propagate(q, m).unwrap());
            prop_assert_eq!(two, line.propagate(start, k + m).unwrap());
        }

        #[test]
        fn delay_is_width_independent(bias in 700i64..=1800, w1 in 3000u64..20_000, w2 in 3000u64..20_000) {
            let line = TunableDelayLine::new(bias);
            let a = line.propagate(p(0, w1), 8).unwrap().unwrap();
            let b = line.propagate(p(0, w2), 8).unwrap().unwrap();
            prop_assert_eq!(a.rise, b.rise);
        }

        #[test]
        fn component_matches_pure_model(bias in 700i64..=1800, w in 500u64..20_000, n in 0u64..=8) {
            let line = TunableDelayLine::new(bias);
            let mut sim = Simulation::new();
            let i = sim.add_net("i", false).unwrap();
            let o = sim.add_net("o", true).unwrap();
            sim.add_component(Box::new(TappedLineComponent::new(i, vec![(n, o)], BiasSource::Fixed(bias), line.clone())));
            let input = p(2, w);
            sim.drive_pulse(i, input).unwrap();
            sim.run_until(TimePs::ns(200)).unwrap();
            let got = sim.pulses_of(o).unwrap().pulses;
            let want: Vec<Pulse> = line.propagate(input, n).unwrap().into_iter().collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn select_bias_changes_following_pulses_and_is_traced() {
        let mut sim = Simulation::new();
        let i = sim.add_net("i", false).unwrap();
        let sel = sim.add_net("sel", false).unwrap();
        let o = sim.add_net("o", true).unwrap();
        let src = BiasSource::Select {
            default: 700,
            options: vec![(sel, 950)],
        };
        sim.add_component(Box::new(
            TappedLineComponent::new(i, vec![(8, o)], src, TunableDelayLine::new(700))
                .with_analog_trace("bias_mV"),
        ));
        sim.drive_pulse(i, p(0, 10_000)).unwrap();
        sim.drive_pulse(sel, p(30, 1_000_000)).unwrap();
        sim.drive_pulse(i, p(100, 10_000)).unwrap();
        sim.run_until(TimePs::ns(300)).unwrap();
        let rises: Vec<TimePs> = sim
            .pulses_of(o)
            .unwrap()
            .pulses
            .iter()
            .map(|q| q.rise)
            .collect();
        assert_eq!(rises, vec![TimePs::ns(60), TimePs::ns(140)]);
        let series = &sim.analog_traces()["bias_mV"];
        assert_eq!(series, &vec![(TimePs::ZERO, 700), (TimePs::ns(30), 950)]);
    }
}
