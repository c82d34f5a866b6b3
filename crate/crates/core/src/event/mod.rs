//! Continuous-time discrete-event kernel.
//!
//! Events are kept in a binary heap keyed by `(time, seq)`; `seq` is a
//! per-scheduler counter, so equal timestamps are served in insertion order
//! and replaying a trial reproduces the exact event sequence.

mod latency;
mod trace;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub use latency::{
    calibrate_time_unit, time_unit_bound, Composition, LatencyModel, CLUSTER_JOIN, MULTI_LEADER,
    SINGLE_LEADER,
};
pub use trace::{HashTrace, NoTrace, TextTrace, TraceSink};

use crate::rng::SimRng;
use crate::types::NodeId;

/// Simulated time in time steps.
pub type Time = f64;

/// Events shared by the asynchronous engines. `C` is the context carried by a
/// channel-establishment completion, `S` the payload of a signal.
#[derive(Debug, Clone, PartialEq)]
pub enum Event<C, S> {
    /// Poisson clock tick at a node.
    Tick(NodeId),
    /// All channels a node opened at its last good tick are up.
    ChannelsReady(NodeId, C),
    /// Fire-and-forget message arriving at a node.
    Signal(NodeId, S),
    /// Protocol-defined timer at a node.
    Timer(NodeId),
}

impl<C, S> Event<C, S> {
    pub fn label(&self) -> &'static str {
        match self {
            Event::Tick(_) => "tick",
            Event::ChannelsReady(..) => "ready",
            Event::Signal(..) => "signal",
            Event::Timer(_) => "timer",
        }
    }

    pub fn node(&self) -> NodeId {
        match *self {
            Event::Tick(v) | Event::ChannelsReady(v, _) | Event::Signal(v, _) | Event::Timer(v) => v,
        }
    }
}

/// An event popped from the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduled<E> {
    pub time: Time,
    pub seq: u64,
    pub event: E,
}

struct Entry<E>(Scheduled<E>);

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed: the heap is a max-heap and the earliest event must come first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.time.total_cmp(&self.0.time).then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Event queue plus simulation clock.
pub struct Scheduler<E> {
    heap: BinaryHeap<Entry<E>>,
    next_seq: u64,
    now: Time,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler { heap: BinaryHeap::new(), next_seq: 0, now: 0.0 }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Scheduler { heap: BinaryHeap::with_capacity(cap), next_seq: 0, now: 0.0 }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Inserts `event` at absolute `time`. Panics if `time` is in the past.
    pub fn schedule_at(&mut self, time: Time, event: E) -> u64 {
        assert!(
            time >= self.now && !time.is_nan(),
            "event scheduled in the past: {time} < {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Scheduled { time, seq, event }));
        seq
    }

    pub fn schedule_in(&mut self, delay: Time, event: E) -> u64 {
        self.schedule_at(self.now + delay, event)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Scheduled<E>> {
        let Entry(s) = self.heap.pop()?;
        debug_assert!(s.time >= self.now);
        self.now = s.time;
        Some(s)
    }

    /// Moves the clock forward without processing anything.
    pub fn advance_to(&mut self, time: Time) {
        assert!(time >= self.now);
        self.now = time;
    }
}

/// Inserts the next Poisson(1) tick of `node`, returning its time.
pub fn schedule_tick<C, S>(
    sched: &mut Scheduler<Event<C, S>>,
    node: NodeId,
    now: Time,
    rng: &mut SimRng,
) -> Time {
    let t = now + rng.exponential(1.0);
    sched.schedule_at(t, Event::Tick(node));
    t
}

/// Opens channels whose completion time follows `stages`: each stage waits for
/// the slowest of its parallel channels, stages run one after another.
/// Returns the time the `ChannelsReady` event fires.
pub fn open_channels<C, S>(
    sched: &mut Scheduler<Event<C, S>>,
    node: NodeId,
    ctx: C,
    stages: &[usize],
    now: Time,
    latency: &LatencyModel,
    rng: &mut SimRng,
) -> Time {
    assert!(
        stages.iter().all(|&s| s > 0) && !stages.is_empty(),
        "channel composition needs at least one target per stage"
    );
    let t = now + latency.composite(stages, rng);
    sched.schedule_at(t, Event::ChannelsReady(node, ctx));
    t
}

/// Sends `payload` to `target` with one exponential latency. The sender does
/// not wait.
pub fn send_signal<C, S>(
    sched: &mut Scheduler<Event<C, S>>,
    target: NodeId,
    payload: S,
    now: Time,
    latency: &LatencyModel,
    rng: &mut SimRng,
) -> Time {
    let t = now + latency.sample(rng);
    sched.schedule_at(t, Event::Signal(target, payload));
    t
}

/// A protocol driven by the kernel.
pub trait Process {
    type Event;

    fn handle(&mut self, event: Scheduled<Self::Event>, sched: &mut Scheduler<Self::Event>);

    /// Stop condition, checked after every event.
    fn done(&self) -> bool;

    /// Label and node recorded in event traces.
    fn describe(event: &Self::Event) -> (&'static str, NodeId);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Predicate,
    Budget,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RunOutcome {
    /// Simulation clock when the loop stopped.
    pub time: Time,
    pub events: u64,
    pub reason: StopReason,
}

/// Processes events in `(time, seq)` order until `process.done()`, the queue
/// runs dry, or the next event lies beyond `budget`.
pub fn run_until<P: Process>(
    sched: &mut Scheduler<P::Event>,
    process: &mut P,
    budget: Time,
    trace: &mut dyn TraceSink,
) -> RunOutcome {
    let mut events = 0u64;
    if process.done() {
        return RunOutcome { time: sched.now(), events, reason: StopReason::Predicate };
    }
    loop {
        match sched.peek_time() {
            None => {
                return RunOutcome { time: sched.now(), events, reason: StopReason::Exhausted };
            }
            Some(t) if t > budget => {
                return RunOutcome { time: sched.now(), events, reason: StopReason::Budget };
            }
            Some(_) => {}
        }
        let ev = sched.pop().expect("peeked event");
        let (label, node) = P::describe(&ev.event);
        trace.record(ev.time, ev.seq, label, node);
        process.handle(ev, sched);
        events += 1;
        if process.done() {
            return RunOutcome { time: sched.now(), events, reason: StopReason::Predicate };
        }
    }
}
