//! Deterministic discrete-event core: simulated clock, totally ordered event
//! queue, and entity dispatch.
//!
//! Events are ordered by `(fire_time, seq)` where `seq` is a monotonically
//! increasing insertion counter, so two runs of the same scenario dispatch
//! events in byte-identical order. Every dispatched event appends one line to
//! the run's event log.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use thiserror::Error;

use crate::time::{SimDuration, SimTime};

/// Names one protocol entity (MH, AP, MAG, LMA, CN, AAA, ...) within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Permits cancellation of a scheduled event that has not fired yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventHandle(u64);

/// Payload description used for the line-oriented event log:
/// `time_us seq target payload_kind detail`.
pub trait LogPayload {
    fn kind(&self) -> &'static str;
    fn detail(&self) -> String;
}

/// One dispatched event, as recorded in the event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub time_us: u64,
    pub seq: u64,
    pub target: EntityId,
    pub kind: &'static str,
    pub detail: String,
}

/// Outcome of `run_until`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub events_processed: u64,
    pub final_clock: SimTime,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event handler failed at t={time_us}us seq={seq} target={target}: {message}")]
    Handler {
        time_us: u64,
        seq: u64,
        target: String,
        message: String,
    },
    #[error("cannot schedule: the run has finished")]
    Finished,
    #[error("run_until end {end_us}us is before the current clock {clock_us}us")]
    EndBeforeClock { end_us: u64, clock_us: u64 },
}

/// The simulation world: owns all entity state and routes a dispatched event
/// to the handler for its target entity.
pub trait World {
    type Msg: LogPayload;

    fn dispatch(
        &mut self,
        engine: &mut Engine<Self::Msg>,
        target: EntityId,
        msg: Self::Msg,
    ) -> Result<(), String>;
}

struct Queued<M> {
    fire_time: SimTime,
    seq: u64,
    target: EntityId,
    msg: M,
}

impl<M> PartialEq for Queued<M> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl<M> Eq for Queued<M> {}
impl<M> PartialOrd for Queued<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Queued<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.fire_time, self.seq).cmp(&(other.fire_time, other.seq))
    }
}

/// Single-threaded event engine. One engine instance owns one scenario; a
/// parameter sweep may run many engines concurrently as long as each owns its
/// scenario exclusively.
pub struct Engine<M> {
    clock: SimTime,
    queue: BinaryHeap<Reverse<Queued<M>>>,
    live: HashSet<u64>,
    next_seq: u64,
    names: Vec<String>,
    log: Vec<LogRecord>,
    finished: bool,
}

impl<M: LogPayload> Engine<M> {
    pub fn new() -> Self {
        Engine {
            clock: SimTime::ZERO,
            queue: BinaryHeap::new(),
            live: HashSet::new(),
            next_seq: 0,
            names: Vec::new(),
            log: Vec::new(),
            finished: false,
        }
    }

    /// Registers an entity and returns its id. Names appear verbatim in the
    /// event log, so they must not contain whitespace.
    pub fn register_entity(&mut self, name: &str) -> EntityId {
        debug_assert!(!name.contains(char::is_whitespace));
        let id = EntityId(self.names.len() as u32);
        self.names.push(name.to_string());
        id
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.names[id.index()]
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    /// Enqueues an event at `clock + delay`. Ties fire in insertion order.
    pub fn schedule(
        &mut self,
        delay: SimDuration,
        target: EntityId,
        msg: M,
    ) -> Result<EventHandle, SimError> {
        if self.finished {
            return Err(SimError::Finished);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.live.insert(seq);
        self.queue.push(Reverse(Queued {
            fire_time: self.clock + delay,
            seq,
            target,
            msg,
        }));
        Ok(EventHandle(seq))
    }

    /// Returns true iff the event had not yet fired and will never fire.
    /// Cancelling twice (or after the event fired) returns false.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }

    /// Dispatches all events with `fire_time <= end` (inclusive boundary) and
    /// then advances the clock to `end`. Handler errors abort the run with the
    /// offending event identified.
    pub fn run_until<W: World<Msg = M>>(
        &mut self,
        world: &mut W,
        end: SimTime,
    ) -> Result<RunSummary, SimError> {
        if end < self.clock {
            return Err(SimError::EndBeforeClock {
                end_us: end.as_us(),
                clock_us: self.clock.as_us(),
            });
        }
        let mut processed = 0u64;
        loop {
            match self.queue.peek() {
                Some(Reverse(q)) if q.fire_time <= end => {}
                _ => break,
            }
            let Reverse(q) = self.queue.pop().unwrap();
            if !self.live.remove(&q.seq) {
                continue; // cancelled
            }
            debug_assert!(q.fire_time >= self.clock, "clock must never decrease");
            self.clock = q.fire_time;
            self.log.push(LogRecord {
                time_us: q.fire_time.as_us(),
                seq: q.seq,
                target: q.target,
                kind: q.msg.kind(),
                detail: q.msg.detail(),
            });
            processed += 1;
            world
                .dispatch(self, q.target, q.msg)
                .map_err(|message| SimError::Handler {
                    time_us: self.clock.as_us(),
                    seq: q.seq,
                    target: self.names[q.target.index()].clone(),
                    message,
                })?;
        }
        self.clock = end;
        self.finished = true;
        Ok(RunSummary {
            events_processed: processed,
            final_clock: self.clock,
        })
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Renders the event log in its external line format:
    /// `time_us seq target payload_kind detail`.
    pub fn log_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                r.time_us,
                r.seq,
                self.names[r.target.index()],
                r.kind,
                r.detail
            ));
        }
        out
    }
}

impl<M: LogPayload> Default for Engine<M> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct TestMsg(&'static str);

    impl LogPayload for TestMsg {
        fn kind(&self) -> &'static str {
            self.0
        }
        fn detail(&self) -> String {
            String::new()
        }
    }

    #[derive(Default)]
    struct Recorder {
        seen: Vec<(u64, &'static str)>,
        reschedule: bool,
    }

    impl World for Recorder {
        type Msg = TestMsg;
        fn dispatch(
            &mut self,
            engine: &mut Engine<TestMsg>,
            _target: EntityId,
            msg: TestMsg,
        ) -> Result<(), String> {
            self.seen.push((engine.now().as_us(), msg.0));
            if self.reschedule && msg.0 == "chain" {
                self.reschedule = false;
                engine
                    .schedule(SimDuration::from_us(7), EntityId(0), TestMsg("chained"))
                    .unwrap();
            }
            Ok(())
        }
    }

    fn engine_with_entity() -> (Engine<TestMsg>, EntityId) {
        let mut e = Engine::new();
        let x = e.register_entity("x");
        (e, x)
    }

    #[test]
    fn ties_break_by_insertion_order() {
        let (mut e, x) = engine_with_entity();
        e.schedule(SimDuration::ZERO, x, TestMsg("m")).unwrap();
        e.schedule(SimDuration::ZERO, x, TestMsg("n")).unwrap();
        let mut w = Recorder::default();
        e.run_until(&mut w, SimTime::from_us(1)).unwrap();
        assert_eq!(w.seen, vec![(0, "m"), (0, "n")]);
    }

    #[test]
    fn clock_reads_exact_fire_time() {
        let (mut e, x) = engine_with_entity();
        e.schedule(SimDuration::from_ms_f64(5.0), x, TestMsg("m"))
            .unwrap();
        let mut w = Recorder::default();
        e.run_until(&mut w, SimTime::from_secs_f64(1.0)).unwrap();
        assert_eq!(w.seen, vec![(5_000, "m")]);
    }

    #[test]
    fn empty_queue_runs_to_end() {
        let (mut e, _x) = engine_with_entity();
        let mut w = Recorder::default();
        let s = e.run_until(&mut w, SimTime::from_us(42)).unwrap();
        assert_eq!(s.events_processed, 0);
        assert_eq!(s.final_clock.as_us(), 42);
    }

    #[test]
    fn end_boundary_is_inclusive() {
        let (mut e, x) = engine_with_entity();
        e.schedule(SimDuration::from_us(10), x, TestMsg("m")).unwrap();
        let mut w = Recorder::default();
        let s = e.run_until(&mut w, SimTime::from_us(10)).unwrap();
        assert_eq!(s.events_processed, 1);
    }

    #[test]
    fn cancel_before_fire_suppresses_event() {
        let (mut e, x) = engine_with_entity();
        let h = e.schedule(SimDuration::from_us(5), x, TestMsg("m")).unwrap();
        assert!(e.cancel(h));
        assert!(!e.cancel(h));
        let mut w = Recorder::default();
        let s = e.run_until(&mut w, SimTime::from_us(100)).unwrap();
        assert_eq!(s.events_processed, 0);
        assert!(w.seen.is_empty());
        assert!(e.log().is_empty());
    }

    #[test]
    fn cancel_after_fire_returns_false() {
        let (mut e, x) = engine_with_entity();
        let h = e.schedule(SimDuration::from_us(5), x, TestMsg("m")).unwrap();
        let mut w = Recorder::default();
        e.run_until(&mut w, SimTime::from_us(100)).unwrap();
        assert!(!e.cancel(h));
    }

    #[test]
    fn schedule_after_finish_is_rejected() {
        let (mut e, x) = engine_with_entity();
        let mut w = Recorder::default();
        e.run_until(&mut w, SimTime::from_us(1)).unwrap();
        assert!(matches!(
            e.schedule(SimDuration::ZERO, x, TestMsg("m")),
            Err(SimError::Finished)
        ));
    }

    #[test]
    fn events_scheduled_during_dispatch_fire_in_order() {
        let (mut e, x) = engine_with_entity();
        e.schedule(SimDuration::from_us(3), x, TestMsg("chain")).unwrap();
        e.schedule(SimDuration::from_us(20), x, TestMsg("late")).unwrap();
        let mut w = Recorder {
            reschedule: true,
            ..Default::default()
        };
        e.run_until(&mut w, SimTime::from_us(100)).unwrap();
        assert_eq!(w.seen, vec![(3, "chain"), (10, "chained"), (20, "late")]);
    }

    struct Failing;

    impl World for Failing {
        type Msg = TestMsg;
        fn dispatch(
            &mut self,
            _engine: &mut Engine<TestMsg>,
            _target: EntityId,
            msg: TestMsg,
        ) -> Result<(), String> {
            if msg.0 == "boom" {
                Err("handler exploded".into())
            } else {
                Ok(())
            }
        }
    }

    #[test]
    fn handler_error_aborts_with_the_offending_event() {
        let (mut e, x) = engine_with_entity();
        e.schedule(SimDuration::from_us(1), x, TestMsg("fine")).unwrap();
        e.schedule(SimDuration::from_us(2), x, TestMsg("boom")).unwrap();
        let err = e.run_until(&mut Failing, SimTime::from_us(10)).unwrap_err();
        match err {
            SimError::Handler {
                time_us,
                seq,
                target,
                message,
            } => {
                assert_eq!(time_us, 2);
                assert_eq!(seq, 1);
                assert_eq!(target, "x");
                assert!(message.contains("exploded"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn double_run_produces_identical_logs() {
        let build_and_run = || {
            let (mut e, x) = engine_with_entity();
            for i in 0..50u64 {
                e.schedule(SimDuration::from_us(i % 7), x, TestMsg("m")).unwrap();
            }
            let mut w = Recorder::default();
            e.run_until(&mut w, SimTime::from_us(100)).unwrap();
            e.log_lines()
        };
        assert_eq!(build_and_run(), build_and_run());
    }

    #[test]
    fn log_count_matches_events_processed() {
        let (mut e, x) = engine_with_entity();
        for i in 0..17u64 {
            e.schedule(SimDuration::from_us(i), x, TestMsg("m")).unwrap();
        }
        let mut w = Recorder::default();
        let s = e.run_until(&mut w, SimTime::from_us(100)).unwrap();
        assert_eq!(s.events_processed, e.log().len() as u64);
        assert_eq!(e.log_lines().lines().count() as u64, s.events_processed);
    }

    #[test]
    fn clock_is_monotone_across_log() {
        let (mut e, x) = engine_with_entity();
        for i in [9u64, 3, 3, 14, 0] {
            e.schedule(SimDuration::from_us(i), x, TestMsg("m")).unwrap();
        }
        let mut w = Recorder::default();
        e.run_until(&mut w, SimTime::from_us(100)).unwrap();
        let times: Vec<u64> = e.log().iter().map(|r| r.time_us).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }
}
