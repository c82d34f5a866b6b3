use plurality::event::{
    calibrate_time_unit, open_channels, schedule_tick, send_signal, time_unit_bound, Composition, Event,
    HashTrace, LatencyModel, Scheduler, TraceSink, SINGLE_LEADER,
};
use plurality::rng::seeded_rng;

type Ev = Event<u8, u8>;

#[test]
fn events_pop_in_time_then_insertion_order() {
    let mut s: Scheduler<Ev> = Scheduler::new();
    s.schedule_at(2.0, Event::Tick(1));
    s.schedule_at(1.0, Event::Tick(2));
    s.schedule_at(2.0, Event::Timer(3));
    s.schedule_at(1.0, Event::Signal(4, 9));
    let order: Vec<(f64, u32)> = std::iter::from_fn(|| s.pop()).map(|e| (e.time, e.event.node())).collect();
    assert_eq!(order, vec![(1.0, 2), (1.0, 4), (2.0, 1), (2.0, 3)]);
    assert_eq!(s.now(), 2.0);
}

#[test]
#[should_panic(expected = "past")]
fn scheduling_in_the_past_panics() {
    let mut s: Scheduler<Ev> = Scheduler::new();
    s.schedule_at(3.0, Event::Tick(0));
    s.pop();
    s.schedule_at(1.0, Event::Tick(0));
}

#[test]
fn helpers_schedule_in_the_future() {
    let mut s: Scheduler<Ev> = Scheduler::new();
    let mut rng = seeded_rng(5, 0);
    let lat = LatencyModel::new(2.0);
    let t1 = schedule_tick(&mut s, 0, 0.0, &mut rng);
    let t2 = open_channels(&mut s, 1, 7, &SINGLE_LEADER, 0.0, &lat, &mut rng);
    let t3 = send_signal(&mut s, 2, 8, 0.0, &lat, &mut rng);
    assert!(t1 > 0.0 && t2 > 0.0 && t3 > 0.0);
    assert_eq!(s.len(), 3);
    let labels: Vec<&str> = std::iter::from_fn(|| s.pop()).map(|e| e.event.label()).collect();
    let mut sorted = labels.clone();
    sorted.sort();
    assert_eq!(sorted, vec!["ready", "signal", "tick"]);
}

#[test]
fn exponential_tick_gaps_have_unit_mean() {
    let mut rng = seeded_rng(9, 1);
    let m = 200_000;
    let mean = (0..m).map(|_| rng.exponential(1.0)).sum::<f64>() / m as f64;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
}

#[test]
fn hash_trace_depends_on_every_field() {
    let digest = |entries: &[(f64, u64, &str, u32)]| {
        let mut h = HashTrace::new();
        for &(t, s, l, v) in entries {
            h.record(t, s, l, v);
        }
        h.hex_digest()
    };
    let base = digest(&[(1.0, 0, "tick", 3), (2.0, 1, "ready", 4)]);
    assert_eq!(base, digest(&[(1.0, 0, "tick", 3), (2.0, 1, "ready", 4)]));
    assert_ne!(base, digest(&[(1.0, 0, "tick", 3), (2.0, 1, "ready", 5)]));
    assert_ne!(base, digest(&[(1.0, 0, "tick", 3), (2.5, 1, "ready", 4)]));
    assert_ne!(base, digest(&[(1.0, 0, "tick", 3), (2.0, 1, "timer", 4)]));
}

#[test]
fn staged_unit_is_frozen_and_majorizer_is_looser() {
    let staged = calibrate_time_unit(1.0, &Composition::Stages(SINGLE_LEADER.to_vec()), 1_000_000, &mut seeded_rng(0, 4));
    let majorizing = calibrate_time_unit(1.0, &Composition::Majorizing, 1_000_000, &mut seeded_rng(0, 4));
    assert!((staged - 9.12).abs() < 0.05, "{staged}");
    // Gamma(7, 1) 0.9-quantile.
    assert!((majorizing - 10.532).abs() < 0.05, "{majorizing}");
    assert!(majorizing > staged);
    assert!((time_unit_bound(0.5) - 20.0 / 3.0).abs() < 1e-12);
}
