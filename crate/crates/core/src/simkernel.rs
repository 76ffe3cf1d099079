//! Deterministic discrete-event simulation core.
//!
//! Time is kept in integer picoseconds. Nets carry two-valued logic levels and
//! start LOW. Events are delivered in `(time, seq)` order, where `seq` is a
//! monotone insertion counter, so equal-time events resolve first-in first-out.
//!
//! Components are boxed trait objects that react to level changes on the nets
//! they are sensitive to, and to private timers they schedule for themselves.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default bound on events processed without time advancing.
pub const DEFAULT_LIVELOCK_BOUND: u64 = 1_000_000;

/// Default supply voltage in millivolts.
pub const DEFAULT_SUPPLY_MV: i64 = 1800;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event at {time} is earlier than the current time {now}")]
    PastEvent { time: TimePs, now: TimePs },
    #[error("livelock: {count} events at {time} without time advancing")]
    LivelockDetected { time: TimePs, count: u64 },
    #[error("pulse on net `{net}` overlaps an already scheduled pulse")]
    OverlappingDrive { net: String },
    #[error("net `{0}` is not traced")]
    UntracedNet(String),
    #[error("unknown net `{0}`")]
    UnknownNet(String),
    #[error("net `{0}` already exists")]
    DuplicateNet(String),
    #[error("time arithmetic underflow: {lhs} - {rhs}")]
    Underflow { lhs: TimePs, rhs: TimePs },
    #[error("pulse width must be strictly positive")]
    ZeroWidth,
}

/// Simulation time in picoseconds.
/// Serialized as integer picoseconds. Deserializes from an integer (ps) or a
/// string with a unit such as `"10ns"` or `"2.5ns"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct TimePs(pub u64);

/// Parses a signed duration: `"10ns"`, `"-2.5ns"`, `"500ps"`, `"1us"`, or a
/// bare integer meaning picoseconds.
pub fn parse_signed_ps(text: &str) -> Result<i64, String> {
    let t = text.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let split = body
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(body.len());
    let (num, unit) = body.split_at(split);
    let scale: u64 = match unit.trim() {
        "" | "ps" => 1,
        "ns" => 1_000,
        "us" => 1_000_000,
        "ms" => 1_000_000_000,
        other => return Err(format!("unknown time unit `{other}` in `{text}`")),
    };
    let (int, frac) = num.split_once('.').unwrap_or((num, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(format!("no number in `{text}`"));
    }
    let int_v: u64 = if int.is_empty() {
        0
    } else {
        int.parse().map_err(|_| format!("bad number in `{text}`"))?
    };
    let mut total = int_v
        .checked_mul(scale)
        .ok_or_else(|| format!("`{text}` overflows"))?;
    let mut place = scale;
    for c in frac.chars() {
        place /= 10;
        let d = c
            .to_digit(10)
            .ok_or_else(|| format!("bad number in `{text}`"))? as u64;
        if place == 0 {
            if d != 0 {
                return Err(format!("`{text}` is finer than 1 ps"));
            }
            continue;
        }
        total += d * place;
    }
    let v = i64::try_from(total).map_err(|_| format!("`{text}` overflows"))?;
    Ok(if neg { -v } else { v })
}

impl std::str::FromStr for TimePs {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let v = parse_signed_ps(s)?;
        u64::try_from(v)
            .map(TimePs)
            .map_err(|_| format!("time `{s}` must not be negative"))
    }
}

impl<'de> Deserialize<'de> for TimePs {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(TimePs(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl TimePs {
    pub const ZERO: TimePs = TimePs(0);

    pub const fn ps(v: u64) -> Self {
        TimePs(v)
    }

    pub const fn ns(v: u64) -> Self {
        TimePs(v * 1000)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn checked_sub(self, rhs: TimePs) -> Result<TimePs, SimError> {
        self.0
            .checked_sub(rhs.0)
            .map(TimePs)
            .ok_or(SimError::Underflow { lhs: self, rhs })
    }

    pub fn saturating_sub(self, rhs: TimePs) -> TimePs {
        TimePs(self.0.saturating_sub(rhs.0))
    }

    /// Adds a signed picosecond offset; fails if the result would be negative.
    pub fn offset(self, delta_ps: i64) -> Result<TimePs, SimError> {
        let v = self.0 as i128 + delta_ps as i128;
        if v < 0 {
            Err(SimError::Underflow {
                lhs: self,
                rhs: TimePs(delta_ps.unsigned_abs()),
            })
        } else {
            Ok(TimePs(v as u64))
        }
    }

    /// Signed difference `self - other` in picoseconds.
    pub fn diff(self, other: TimePs) -> i64 {
        self.0 as i64 - other.0 as i64
    }
}

impl Add for TimePs {
    type Output = TimePs;
    fn add(self, rhs: TimePs) -> TimePs {
        TimePs(self.0 + rhs.0)
    }
}

impl Mul<u64> for TimePs {
    type Output = TimePs;
    fn mul(self, rhs: u64) -> TimePs {
        TimePs(self.0 * rhs)
    }
}

impl fmt::Display for TimePs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(1000) {
            write!(f, "{}ns", self.0 / 1000)
        } else {
            write!(f, "{}ps", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Level {
    #[default]
    Low,
    High,
}

impl Level {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Level::High
        } else {
            Level::Low
        }
    }

    pub fn is_high(self) -> bool {
        self == Level::High
    }
}

impl std::ops::Not for Level {
    type Output = Level;
    fn not(self) -> Level {
        match self {
            Level::Low => Level::High,
            Level::High => Level::Low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentId(pub usize);

/// A HIGH interval on a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pulse {
    pub rise: TimePs,
    pub width: TimePs,
}

impl Pulse {
    pub fn new(rise: TimePs, width: TimePs) -> Result<Self, SimError> {
        if width == TimePs::ZERO {
            return Err(SimError::ZeroWidth);
        }
        Ok(Pulse { rise, width })
    }

    pub fn fall(&self) -> TimePs {
        self.rise + self.width
    }

    /// Length of the common HIGH interval of two pulses.
    pub fn overlap(&self, other: &Pulse) -> TimePs {
        let start = self.rise.max(other.rise);
        let end = self.fall().min(other.fall());
        end.saturating_sub(start)
    }
}

/// Pulses read back from a trace. `open_from` is set when the net is still
/// HIGH at the end of the trace.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PulseTrain {
    pub pulses: Vec<Pulse>,
    pub open_from: Option<TimePs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: TimePs,
    pub net: NetId,
    pub new_level: Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Set { net: NetId, level: Level },
    Timer { component: ComponentId, token: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Queued {
    time: TimePs,
    seq: u64,
    action: Action,
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Behavior attached to a simulation.
pub trait Component: Send {
    /// Nets whose level changes wake this component.
    fn inputs(&self) -> Vec<NetId>;

    /// Called once when the simulation starts, or on insertion into a running one.
    fn init(&mut self, _ctx: &mut Ctx<'_>) {}

    fn on_input(&mut self, ctx: &mut Ctx<'_>, net: NetId);

    fn on_timer(&mut self, _ctx: &mut Ctx<'_>, _token: u64) {}
}

/// View handed to a component while it reacts to an event.
pub struct Ctx<'a> {
    now: TimePs,
    me: ComponentId,
    levels: &'a [Level],
    out: &'a mut Vec<(TimePs, Action)>,
    analog: &'a mut BTreeMap<String, Vec<(TimePs, i64)>>,
}

impl Ctx<'_> {
    pub fn now(&self) -> TimePs {
        self.now
    }

    pub fn level(&self, net: NetId) -> Level {
        self.levels[net.0]
    }

    /// Drives `net` to `level` after `delay`.
    pub fn drive(&mut self, net: NetId, level: Level, delay: TimePs) {
        self.out
            .push((self.now + delay, Action::Set { net, level }));
    }

    /// Drives `net` at an absolute time, which must not lie in the past.
    pub fn drive_at(&mut self, net: NetId, level: Level, time: TimePs) {
        assert!(time >= self.now, "component scheduled an event in the past");
        self.out.push((time, Action::Set { net, level }));
    }

    pub fn wake_at(&mut self, time: TimePs, token: u64) {
        assert!(time >= self.now, "component scheduled a timer in the past");
        self.out.push((
            time,
            Action::Timer {
                component: self.me,
                token,
            },
        ));
    }

    /// Appends a sample to a stepwise analog trace; repeated values are dropped.
    pub fn record_analog(&mut self, name: &str, value: i64) {
        record_analog_sample(self.analog, name, self.now, value);
    }
}

fn record_analog_sample(
    analog: &mut BTreeMap<String, Vec<(TimePs, i64)>>,
    name: &str,
    now: TimePs,
    value: i64,
) {
    let series = analog.entry(name.to_string()).or_default();
    match series.last_mut() {
        Some((t, v)) if *t == now => *v = value,
        Some((_, v)) if *v == value => {}
        _ => series.push((now, value)),
    }
    // collapse a same-time overwrite that now repeats the previous value
    if series.len() >= 2 && series[series.len() - 1].1 == series[series.len() - 2].1 {
        series.pop();
    }
}

struct NetState {
    name: String,
    level: Level,
    trace: Option<Vec<(TimePs, Level)>>,
    fanout: Vec<ComponentId>,
    drives: Vec<(TimePs, TimePs)>,
}

/// A single-threaded event-driven simulation instance.
pub struct Simulation {
    now: TimePs,
    seq: u64,
    pending: BinaryHeap<Reverse<Queued>>,
    nets: Vec<NetState>,
    levels: Vec<Level>,
    by_name: HashMap<String, NetId>,
    components: Vec<Option<Box<dyn Component>>>,
    analog: BTreeMap<String, Vec<(TimePs, i64)>>,
    started: bool,
    livelock_bound: u64,
    cascade: u64,
    events_processed: u64,
    pub supply_mv: i64,
}

impl Default for Simulation {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulation {
    pub fn new() -> Self {
        Simulation {
            now: TimePs::ZERO,
            seq: 0,
            pending: BinaryHeap::new(),
            nets: Vec::new(),
            levels: Vec::new(),
            by_name: HashMap::new(),
            components: Vec::new(),
            analog: BTreeMap::new(),
            started: false,
            livelock_bound: DEFAULT_LIVELOCK_BOUND,
            cascade: 0,
            events_processed: 0,
            supply_mv: DEFAULT_SUPPLY_MV,
        }
    }

    pub fn with_livelock_bound(mut self, bound: u64) -> Self {
        self.livelock_bound = bound;
        self
    }

    pub fn now(&self) -> TimePs {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn add_net(&mut self, name: &str, traced: bool) -> Result<NetId, SimError> {
        if self.by_name.contains_key(name) {
            return Err(SimError::DuplicateNet(name.to_string()));
        }
        let id = NetId(self.nets.len());
        self.nets.push(NetState {
            name: name.to_string(),
            level: Level::Low,
            trace: traced.then(Vec::new),
            fanout: Vec::new(),
            drives: Vec::new(),
        });
        self.levels.push(Level::Low);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn net(&self, name: &str) -> Result<NetId, SimError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| SimError::UnknownNet(name.to_string()))
    }

    pub fn net_name(&self, net: NetId) -> &str {
        &self.nets[net.0].name
    }

    pub fn level(&self, net: NetId) -> Level {
        self.levels[net.0]
    }

    pub fn net_count(&self) -> usize {
        self.nets.len()
    }

    pub fn add_component(&mut self, component: Box<dyn Component>) -> ComponentId {
        let id = ComponentId(self.components.len());
        for net in component.inputs() {
            let fanout = &mut self.nets[net.0].fanout;
            if !fanout.contains(&id) {
                fanout.push(id);
            }
        }
        self.components.push(Some(component));
        if self.started {
            self.init_component(id);
        }
        id
    }

    fn init_component(&mut self, id: ComponentId) {
        let mut out = Vec::new();
        let mut comp = self.components[id.0].take().expect("component re-entered");
        {
            let mut ctx = Ctx {
                now: self.now,
                me: id,
                levels: &self.levels,
                out: &mut out,
                analog: &mut self.analog,
            };
            comp.init(&mut ctx);
        }
        self.components[id.0] = Some(comp);
        self.enqueue_all(out);
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for i in 0..self.components.len() {
            self.init_component(ComponentId(i));
        }
    }

    fn enqueue_all(&mut self, out: Vec<(TimePs, Action)>) {
        for (time, action) in out {
            self.push(time, action);
        }
    }

    fn push(&mut self, time: TimePs, action: Action) {
        let seq = self.seq;
        self.seq += 1;
        self.pending.push(Reverse(Queued { time, seq, action }));
    }

    pub fn schedule(&mut self, event: Event) -> Result<(), SimError> {
        if event.time < self.now {
            return Err(SimError::PastEvent {
                time: event.time,
                now: self.now,
            });
        }
        self.push(
            event.time,
            Action::Set {
                net: event.net,
                level: event.new_level,
            },
        );
        Ok(())
    }

    /// Schedules a rise at `pulse.rise` and a fall at `pulse.fall()`.
    pub fn drive_pulse(&mut self, net: NetId, pulse: Pulse) -> Result<(), SimError> {
        if pulse.rise < self.now {
            return Err(SimError::PastEvent {
                time: pulse.rise,
                now: self.now,
            });
        }
        if pulse.width == TimePs::ZERO {
            return Err(SimError::ZeroWidth);
        }
        let state = &mut self.nets[net.0];
        let (rise, fall) = (pulse.rise, pulse.fall());
        // touching pulses count as overlapping: they would collapse into one
        if state.drives.iter().any(|&(r, f)| rise <= f && r <= fall) {
            return Err(SimError::OverlappingDrive {
                net: state.name.clone(),
            });
        }
        state.drives.push((rise, fall));
        self.push(
            rise,
            Action::Set {
                net,
                level: Level::High,
            },
        );
        self.push(
            fall,
            Action::Set {
                net,
                level: Level::Low,
            },
        );
        Ok(())
    }

    /// Processes every event with time `<= t` and leaves `now == t`.
    pub fn run_until(&mut self, t: TimePs) -> Result<(), SimError> {
        if t < self.now {
            return Err(SimError::PastEvent {
                time: t,
                now: self.now,
            });
        }
        self.start();
        let mut out = Vec::new();
        while let Some(Reverse(head)) = self.pending.peek() {
            if head.time > t {
                break;
            }
            let Reverse(ev) = self.pending.pop().expect("peeked");
            if ev.time > self.now {
                self.now = ev.time;
                self.cascade = 0;
            } else {
                self.cascade += 1;
                if self.cascade > self.livelock_bound {
                    return Err(SimError::LivelockDetected {
                        time: self.now,
                        count: self.cascade,
                    });
                }
            }
            self.events_processed += 1;
            match ev.action {
                Action::Set { net, level } => {
                    if self.levels[net.0] == level {
                        continue;
                    }
                    self.apply_level(net, level);
                    let fanout = self.nets[net.0].fanout.clone();
                    for cid in fanout {
                        self.dispatch(cid, &mut out, |c, ctx| c.on_input(ctx, net));
                    }
                }
                Action::Timer { component, token } => {
                    self.dispatch(component, &mut out, |c, ctx| c.on_timer(ctx, token));
                }
            }
        }
        if t > self.now {
            self.now = t;
            self.cascade = 0;
        }
        Ok(())
    }

    /// Runs until no events remain, or returns an error past `limit`.
    pub fn run_to_quiescence(&mut self, limit: TimePs) -> Result<(), SimError> {
        self.run_until(limit)
    }

    pub fn has_pending_before(&self, t: TimePs) -> bool {
        self.pending.peek().is_some_and(|Reverse(q)| q.time <= t)
    }

    fn dispatch<F>(&mut self, cid: ComponentId, out: &mut Vec<(TimePs, Action)>, f: F)
    where
        F: FnOnce(&mut dyn Component, &mut Ctx<'_>),
    {
        let mut comp = self.components[cid.0].take().expect("component re-entered");
        {
            let mut ctx = Ctx {
                now: self.now,
                me: cid,
                levels: &self.levels,
                out,
                analog: &mut self.analog,
            };
            f(comp.as_mut(), &mut ctx);
        }
        self.components[cid.0] = Some(comp);
        for (time, action) in out.drain(..) {
            let seq = self.seq;
            self.seq += 1;
            self.pending.push(Reverse(Queued { time, seq, action }));
        }
    }

    fn apply_level(&mut self, net: NetId, level: Level) {
        self.levels[net.0] = level;
        let now = self.now;
        let state = &mut self.nets[net.0];
        state.level = level;
        if let Some(trace) = state.trace.as_mut() {
            match trace.last() {
                // zero-width glitch: drop the earlier same-time entry
                Some(&(t, _)) if t == now => {
                    trace.pop();
                    let prev = trace.last().map(|&(_, l)| l).unwrap_or(Level::Low);
                    if prev != level {
                        trace.push((now, level));
                    }
                }
                _ => trace.push((now, level)),
            }
        }
    }

    pub fn trace(&self, net: NetId) -> Result<&[(TimePs, Level)], SimError> {
        self.nets[net.0]
            .trace
            .as_deref()
            .ok_or_else(|| SimError::UntracedNet(self.nets[net.0].name.clone()))
    }

    pub fn is_traced(&self, net: NetId) -> bool {
        self.nets[net.0].trace.is_some()
    }

    pub fn pulses_of(&self, net: NetId) -> Result<PulseTrain, SimError> {
        Ok(pulses_from_trace(self.trace(net)?))
    }

    /// Level of `net` at time `t` reconstructed from its trace.
    pub fn level_at(&self, net: NetId, t: TimePs) -> Result<Level, SimError> {
        let trace = self.trace(net)?;
        Ok(trace
            .iter()
            .take_while(|(time, _)| *time <= t)
            .last()
            .map(|&(_, l)| l)
            .unwrap_or(Level::Low))
    }

    pub fn record_analog(&mut self, name: &str, value: i64) {
        let now = self.now;
        record_analog_sample(&mut self.analog, name, now, value);
    }

    pub fn analog_traces(&self) -> &BTreeMap<String, Vec<(TimePs, i64)>> {
        &self.analog
    }

    /// Snapshot of every traced net and analog series.
    pub fn trace_set(&self) -> TraceSet {
        let mut digital = BTreeMap::new();
        for n in &self.nets {
            if let Some(t) = &n.trace {
                digital.insert(n.name.clone(), t.clone());
            }
        }
        TraceSet {
            digital,
            analog: self.analog.clone(),
            end: self.now,
        }
    }
}

/// Converts a transition list into HIGH intervals.
pub fn pulses_from_trace(trace: &[(TimePs, Level)]) -> PulseTrain {
    let mut train = PulseTrain::default();
    let mut rise: Option<TimePs> = None;
    for &(t, level) in trace {
        match (level, rise) {
            (Level::High, None) => rise = Some(t),
            (Level::Low, Some(r)) => {
                train.pulses.push(Pulse {
                    rise: r,
                    width: TimePs(t.0 - r.0),
                });
                rise = None;
            }
            _ => {}
        }
    }
    train.open_from = rise;
    train
}

/// All recorded waveforms of one run, keyed by net name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceSet {
    pub digital: BTreeMap<String, Vec<(TimePs, Level)>>,
    pub analog: BTreeMap<String, Vec<(TimePs, i64)>>,
    pub end: TimePs,
}

impl TraceSet {
    pub fn is_empty(&self) -> bool {
        self.digital.is_empty() && self.analog.is_empty()
    }

    /// Checks the per-net alternation and strict time ordering invariant.
    pub fn check_well_formed(&self) -> Result<(), String> {
        for (name, trace) in &self.digital {
            let mut prev_level = Level::Low;
            let mut prev_time: Option<TimePs> = None;
            for &(t, l) in trace {
                if l == prev_level {
                    return Err(format!("net {name}: repeated level at {t}"));
                }
                if prev_time.is_some_and(|p| p >= t) {
                    return Err(format!("net {name}: non-increasing time at {t}"));
                }
                prev_level = l;
                prev_time = Some(t);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Inverter {
        input: NetId,
        output: NetId,
        delay: TimePs,
    }

    impl Component for Inverter {
        fn inputs(&self) -> Vec<NetId> {
            vec![self.input]
        }
        fn init(&mut self, ctx: &mut Ctx<'_>) {
            let v = !ctx.level(self.input);
            ctx.drive(self.output, v, self.delay);
        }
        fn on_input(&mut self, ctx: &mut Ctx<'_>, _net: NetId) {
            let v = !ctx.level(self.input);
            ctx.drive(self.output, v, self.delay);
        }
    }

    #[test]
    fn empty_queue_advances_time() {
        let mut sim = Simulation::new();
        let n = sim.add_net("n", true).unwrap();
        sim.run_until(TimePs::ns(10)).unwrap();
        assert_eq!(sim.now(), TimePs::ns(10));
        assert!(sim.trace(n).unwrap().is_empty());
    }

    #[test]
    fn single_pulse_trace() {
        let mut sim = Simulation::new();
        let n = sim.add_net("Vin1", true).unwrap();
        sim.drive_pulse(n, Pulse::new(TimePs::ZERO, TimePs::ns(10)).unwrap())
            .unwrap();
        sim.run_until(TimePs::ns(20)).unwrap();
        assert_eq!(
            sim.trace(n).unwrap(),
            &[(TimePs::ZERO, Level::High), (TimePs::ns(10), Level::Low)]
        );
        let train = sim.pulses_of(n).unwrap();
        assert_eq!(
            train.pulses,
            vec![Pulse {
                rise: TimePs::ZERO,
                width: TimePs::ns(10)
            }]
        );
        assert_eq!(train.open_from, None);
    }

    #[test]
    fn back_to_back_pulses_on_two_nets() {
        let mut sim = Simulation::new();
        let a = sim.add_net("Vin1", true).unwrap();
        let b = sim.add_net("Vin2", true).unwrap();
        sim.drive_pulse(a, Pulse::new(TimePs::ZERO, TimePs::ns(10)).unwrap())
            .unwrap();
        sim.drive_pulse(b, Pulse::new(TimePs::ns(10), TimePs::ns(10)).unwrap())
            .unwrap();
        sim.run_until(TimePs::ns(30)).unwrap();
        let pa = sim.pulses_of(a).unwrap().pulses[0];
        let pb = sim.pulses_of(b).unwrap().pulses[0];
        assert_eq!(pb.rise.diff(pa.rise), 10_000);
    }

    #[test]
    fn overlapping_drive_rejected() {
        let mut sim = Simulation::new();
        let n = sim.add_net("n", true).unwrap();
        sim.drive_pulse(n, Pulse::new(TimePs::ZERO, TimePs::ns(10)).unwrap())
            .unwrap();
        let err = sim
            .drive_pulse(n, Pulse::new(TimePs::ns(5), TimePs::ns(10)).unwrap())
            .unwrap_err();
        assert!(matches!(err, SimError::OverlappingDrive { .. }));
    }

    #[test]
    fn past_event_rejected() {
        let mut sim = Simulation::new();
        let n = sim.add_net("n", false).unwrap();
        sim.run_until(TimePs::ns(1)).unwrap();
        let err = sim
            .schedule(Event {
                time: TimePs::ps(999),
                net: n,
                new_level: Level::High,
            })
            .unwrap_err();
        assert!(matches!(err, SimError::PastEvent { .. }));
    }

    #[test]
    fn fifo_tie_break_at_equal_time() {
        let mut sim = Simulation::new();
        let n = sim.add_net("n", true).unwrap();
        let t = TimePs::ps(5000);
        sim.schedule(Event {
            time: t,
            net: n,
            new_level: Level::High,
        })
        .unwrap();
        sim.schedule(Event {
            time: t,
            net: n,
            new_level: Level::Low,
        })
        .unwrap();
        sim.run_until(TimePs::ns(6)).unwrap();
        // e1 then e2: net ends LOW and the zero-width glitch leaves no trace entry
        assert_eq!(sim.level(n), Level::Low);
        assert!(sim.trace(n).unwrap().is_empty());
    }

    #[test]
    fn event_at_now_precedes_later_events() {
        let mut sim = Simulation::new();
        let a = sim.add_net("a", true).unwrap();
        let b = sim.add_net("b", true).unwrap();
        sim.schedule(Event {
            time: TimePs::ns(3),
            net: b,
            new_level: Level::High,
        })
        .unwrap();
        sim.schedule(Event {
            time: TimePs::ZERO,
            net: a,
            new_level: Level::High,
        })
        .unwrap();
        sim.run_until(TimePs::ns(5)).unwrap();
        assert_eq!(sim.trace(a).unwrap()[0].0, TimePs::ZERO);
        assert_eq!(sim.trace(b).unwrap()[0].0, TimePs::ns(3));
    }

    #[test]
    fn zero_delay_inverter_loop_livelocks() {
        let mut sim = Simulation::new().with_livelock_bound(10_000);
        let x = sim.add_net("x", false).unwrap();
        let y = sim.add_net("y", false).unwrap();
        sim.add_component(Box::new(Inverter {
            input: x,
            output: y,
            delay: TimePs::ZERO,
        }));
        sim.add_component(Box::new(Inverter {
            input: y,
            output: x,
            delay: TimePs::ZERO,
        }));
        let err = sim.run_until(TimePs::ns(1)).unwrap_err();
        assert!(matches!(err, SimError::LivelockDetected { .. }));
    }

    #[test]
    fn pulses_of_untraced_net_fails() {
        let mut sim = Simulation::new();
        let n = sim.add_net("n", false).unwrap();
        assert!(matches!(sim.pulses_of(n), Err(SimError::UntracedNet(_))));
    }

    #[test]
    fn pulses_from_trace_cases() {
        assert_eq!(pulses_from_trace(&[]), PulseTrain::default());
        let t = [
            (TimePs::ZERO, Level::High),
            (TimePs::ns(10), Level::Low),
            (TimePs::ns(25), Level::High),
            (TimePs::ns(35), Level::Low),
            (TimePs::ns(40), Level::High),
        ];
        let train = pulses_from_trace(&t);
        assert_eq!(train.pulses.len(), 2);
        assert_eq!(
            train.pulses[1],
            Pulse {
                rise: TimePs::ns(25),
                width: TimePs::ns(10)
            }
        );
        assert_eq!(train.open_from, Some(TimePs::ns(40)));
    }

    #[test]
    fn run_until_is_idempotent() {
        let mut sim = Simulation::new();
        let n = sim.add_net("n", true).unwrap();
        sim.drive_pulse(n, Pulse::new(TimePs::ns(2), TimePs::ns(3)).unwrap())
            .unwrap();
        sim.run_until(TimePs::ns(10)).unwrap();
        let once = sim.trace_set();
        sim.run_until(TimePs::ns(10)).unwrap();
        assert_eq!(once, sim.trace_set());
    }

    #[test]
    fn time_parsing() {
        assert_eq!("10ns".parse::<TimePs>().unwrap(), TimePs::ns(10));
        assert_eq!("2.5ns".parse::<TimePs>().unwrap(), TimePs::ps(2500));
        assert_eq!("750".parse::<TimePs>().unwrap(), TimePs::ps(750));
        assert_eq!("1us".parse::<TimePs>().unwrap(), TimePs::ns(1000));
        assert_eq!(parse_signed_ps("-10ns").unwrap(), -10_000);
        assert!("-1ns".parse::<TimePs>().is_err());
        assert!("1.0001ns".parse::<TimePs>().is_err());
        assert!("10 parsecs".parse::<TimePs>().is_err());
        let t: TimePs = serde_json::from_str("\"15ns\"").unwrap();
        assert_eq!(t, TimePs::ns(15));
        let t: TimePs = serde_json::from_str("42").unwrap();
        assert_eq!(serde_json::to_string(&t).unwrap(), "42");
    }

    #[test]
    fn time_underflow_is_an_error() {
        assert!(TimePs::ns(1).checked_sub(TimePs::ns(2)).is_err());
        assert!(TimePs::ns(1).offset(-1001).is_err());
        assert_eq!(TimePs::ns(1).offset(-1000).unwrap(), TimePs::ZERO);
    }
}
