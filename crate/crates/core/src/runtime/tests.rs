use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::boost::{KbConfig, KbParams, KbSystem};
use crate::error::Error;
use crate::gridnet::{GridConfig, INPUT_CHANNELS};
use crate::rng;
use crate::tensor::Tensor;

const BINS: usize = 7;

fn grid(d: usize, b: usize, attention: bool) -> GridConfig {
    GridConfig {
        d,
        b,
        i: 1,
        j: 1,
        h: 3,
        l: 2,
        attention,
        attention_window: 4,
        k: 2,
        qk_dim: 14,
        speaker_dim: None,
    }
}

fn system(c: usize) -> (KbSystem, KbParams<f64>) {
    let cfg = KbConfig {
        v: 3,
        ..KbConfig::new(grid(4, 3, false), grid(6, 2, true), c, 2)
    };
    KbSystem::new(cfg, BINS, 50 + c as u64).unwrap()
}

fn input(frames: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    let n = frames * BINS * INPUT_CHANNELS;
    Tensor::from_vec(&[frames, BINS, INPUT_CHANNELS], (0..n).map(|_| rng::gaussian(&mut r)).collect()).unwrap()
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
}

#[test]
fn delay_examples() {
    assert_eq!(delay_to_chunks(&DelayConfig::from_ms(24.0, 24.0)).unwrap(), 6);
    assert_eq!(delay_to_chunks(&DelayConfig::from_ms(0.0, 48.0)).unwrap(), 6);
    assert_eq!(delay_to_chunks(&DelayConfig::from_ms(7.0, 8.0)).unwrap(), 1);
    assert_eq!(delay_to_chunks(&DelayConfig::from_ms(0.0, 0.0)).unwrap(), 0);
    for (ms, c) in [(8.0, 1), (24.0, 3)] {
        assert_eq!(delay_to_chunks(&DelayConfig::from_ms(ms, 0.0)).unwrap(), c);
    }
    let bad = DelayConfig { tau: 0.0, ..DelayConfig::from_ms(1.0, 1.0) };
    assert!(matches!(bad.chunks(), Err(Error::Config(_))));
    assert!(DelayConfig { tau: -0.008, ..bad }.chunks().is_err());
    assert!(DelayConfig::from_ms(-8.0, 16.0).chunks().is_err());
}

#[test]
fn tick_split_matches_total() {
    let t = DelayConfig::from_ms(20.0, 28.0).ticks().unwrap();
    assert_eq!(t, TickDelays { uplink: 2, downlink: 4 });
    // the sum rounds up past the individual floors
    let t = DelayConfig::from_ms(12.0, 12.0).ticks().unwrap();
    assert_eq!((t.uplink, t.total()), (1, 3));
}

#[test]
fn throughput_examples() {
    assert_eq!(hint_throughput(2, 1, 97, 125.0, 32).unwrap(), 1_552_000.0);
    assert_eq!(hint_throughput(2, 2, 97, 125.0, 32).unwrap(), 776_000.0);
    assert_eq!(hint_throughput(2, 4, 97, 125.0, 32).unwrap(), 97.0 * 125.0 * 32.0);
    assert!(hint_throughput(2, 3, 97, 125.0, 32).is_err());
    assert!(hint_throughput(2, 0, 97, 125.0, 32).is_err());
    assert_eq!(header_overhead(125.0), 9000.0);
}

proptest! {
    #[test]
    fn doubling_compression_halves_rate(k in 1usize..8, f in 1usize..300, bits in 1u32..64) {
        let p = 2 * k;
        for q in (1..=p).filter(|q| p % q == 0 && p % (2 * q) == 0) {
            let a = hint_throughput(k, q, f, 125.0, bits).unwrap();
            let b = hint_throughput(k, 2 * q, f, 125.0, bits).unwrap();
            prop_assert_eq!(a, 2.0 * b);
        }
    }

    #[test]
    fn chunk_count_is_floor_of_total(out_us in 0u32..100_000, in_us in 0u32..100_000) {
        let cfg = DelayConfig::from_ms(out_us as f64 / 1e3, in_us as f64 / 1e3);
        let expect = ((out_us + in_us) / 8000) as usize;
        prop_assert_eq!(cfg.chunks().unwrap(), expect);
        let t = cfg.ticks().unwrap();
        prop_assert_eq!(t.total(), expect);
        prop_assert_eq!(t.uplink, (out_us / 8000) as usize);
    }
}

#[test]
fn channel_is_fifo_with_fixed_delay() {
    let mut ch = DelayChannel::<f64>::new(2);
    for t in 0..4 {
        ch.send(MessageKind::AudioChunk, t, vec![t as f64], t).unwrap();
    }
    assert!(ch.deliver(1).is_none());
    let m = ch.deliver(3).unwrap();
    assert_eq!((m.chunk, m.sent_tick, m.deliver_tick), (0, 0, 2));
    assert_eq!(ch.deliver(3).unwrap().chunk, 1);
    assert!(ch.deliver(3).is_none());
    assert_eq!(ch.in_flight(), 2);
}

#[test]
fn overflow_is_a_backpressure_fault() {
    let mut ch = DelayChannel::<f64>::with_bound(3, 3);
    for t in 0..3 {
        ch.send(MessageKind::AudioChunk, t, vec![], t).unwrap();
    }
    // three messages with delay three never exceed the bound in steady state
    while ch.deliver(3).is_some() {}
    ch.send(MessageKind::AudioChunk, 3, vec![], 3).unwrap();
    let mut stuck = DelayChannel::<f64>::with_bound(5, 3);
    for t in 0..3 {
        stuck.send(MessageKind::AudioChunk, t, vec![], t).unwrap();
    }
    assert!(matches!(
        stuck.send(MessageKind::AudioChunk, 3, vec![], 3),
        Err(Error::Backpressure { in_flight: 4, bound: 3 })
    ));
}

#[test]
fn session_with_long_link_faults() {
    let (sys, p) = system(5);
    let mut s = Session::with_bound(&sys, &p, None, TickDelays { uplink: 5, downlink: 0 }, 4).unwrap();
    let x = input(8, 1);
    let per = BINS * INPUT_CHANNELS;
    let mut err = None;
    for t in 0..8 {
        let f = &x.data()[t * per..(t + 1) * per];
        if let Err(e) = s.tick(&sys, &p, f, f) {
            err = Some((t, e));
            break;
        }
    }
    assert!(matches!(err, Some((4, Error::Backpressure { .. }))), "{err:?}");
}

#[test]
fn zero_delay_session_equals_offline() {
    let (sys, p) = system(0);
    let x = input(12, 2);
    let run = run_session(&sys, &p, &x, None, None, TickDelays::downlink_only(0)).unwrap();
    assert!(close(&run.output, &sys.infer(&p, &x, &x, None).unwrap(), 1e-10));
}

#[test]
fn delayed_session_equals_shifted_offline() {
    for (c, up) in [(1, 0), (3, 1), (6, 4)] {
        let (sys, p) = system(c);
        let x = input(14, 3);
        let delays = TickDelays { uplink: up, downlink: c - up };
        let run = run_session(&sys, &p, &x, None, None, delays).unwrap();
        assert!(close(&run.output, &sys.infer(&p, &x, &x, None).unwrap(), 1e-10), "C={c}");
        for r in &run.trace.records {
            assert_eq!(r.hint_used, r.tick.checked_sub(c));
            assert_eq!(r.remote_chunk, r.tick.checked_sub(up));
            assert!(r.cache_occupancy.iter().all(|&o| o <= c + 3));
        }
    }
}

#[test]
fn session_rejects_mismatched_delay() {
    let (sys, p) = system(3);
    assert!(matches!(Session::new(&sys, &p, None, TickDelays::downlink_only(2)), Err(Error::Config(_))));
}

#[test]
fn traces_replay_bit_exactly() {
    let (sys, p) = system(2);
    let x = input(10, 4);
    let d = TickDelays { uplink: 1, downlink: 1 };
    let a = run_session(&sys, &p, &x, None, None, d).unwrap();
    let b = run_session(&sys, &p, &x, None, None, d).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.output, b.output);
    let y = input(10, 5);
    assert_ne!(run_session(&sys, &p, &y, None, None, d).unwrap().trace, a.trace);
}

// remote runs ahead over the whole stream, then the local node catches up
#[test]
fn assembled_trace_matches_scheduler_trace() {
    let (c, up) = (4, 1);
    let (sys, p) = system(c);
    let x = input(11, 6);
    let d = TickDelays { uplink: up, downlink: c - up };
    let reference = run_session(&sys, &p, &x, None, None, d).unwrap();

    let per = BINS * INPUT_CHANNELS;
    let frames = x.shape()[0];
    let mut remote = RemoteNode::new(&sys, &p, None).unwrap();
    let mut remote_events = Vec::new();
    let mut hints = Vec::new();
    for chunk in 0..frames.saturating_sub(up) {
        let frame = x.data()[chunk * per..(chunk + 1) * per].to_vec();
        let msg = ChannelMessage {
            kind: MessageKind::AudioChunk,
            chunk,
            payload: frame,
            sent_tick: chunk,
            deliver_tick: chunk + up,
        };
        let hint = remote.on_audio(&sys, &p, &msg).unwrap();
        remote_events.push(RemoteEvent {
            tick: chunk + up,
            chunk,
            input: digest(&msg.payload),
        });
        hints.push(ChannelMessage {
            kind: MessageKind::HintEmbedding,
            chunk,
            payload: hint,
            sent_tick: chunk + up,
            deliver_tick: chunk + c,
        });
    }
    let mut local = LocalNode::new(&sys, &p, None).unwrap();
    let mut local_events = Vec::new();
    let mut out = Vec::new();
    let mut pending = hints.into_iter().peekable();
    for t in 0..frames {
        while pending.peek().is_some_and(|m| m.deliver_tick <= t) {
            local.receive(pending.next().unwrap()).unwrap();
        }
        let (y, ev) = local.process(&sys, &p, &x.data()[t * per..(t + 1) * per]).unwrap();
        out.extend(y);
        local_events.push(ev);
    }
    let trace = SessionTrace::assemble(d, &local_events, &remote_events).unwrap();
    assert_eq!(trace, reference.trace);
    assert_eq!(&out[..], reference.output.data());
}

#[test]
fn early_or_missing_hints_are_protocol_faults() {
    let (sys, p) = system(2);
    let mut local = LocalNode::<f64>::new(&sys, &p, None).unwrap();
    let frame = vec![0.0; BINS * INPUT_CHANNELS];
    local.process(&sys, &p, &frame).unwrap();
    local.process(&sys, &p, &frame).unwrap();
    assert!(matches!(local.process(&sys, &p, &frame), Err(Error::Protocol(_))));
}

fn streaming<'a>(sys: &'a KbSystem, p: &'a KbParams<f64>) -> impl FnMut(&Tensor<f64>, &Tensor<f64>) -> crate::Result<Tensor<f64>> + 'a {
    let d = TickDelays::downlink_only(sys.config().c);
    move |l, r| run_session(sys, p, l, Some(r), None, d).map(|o| o.output)
}

#[test]
fn compliant_pipelines_pass_the_audit() {
    let c = 6;
    let (sys, p) = system(c);
    let x = input(16, 7);
    let report = causality_audit(streaming(&sys, &p), &x, c, 9, 1).unwrap();
    assert!(report.is_clean(), "{report:?}");
    assert_eq!(report.perturbed_from, 4);
    let offline = |l: &Tensor<f64>, r: &Tensor<f64>| sys.infer(&p, l, r, None);
    assert!(causality_audit(offline, &x, c, 9, 1).unwrap().into_result().is_ok());
}

#[test]
fn remote_perturbation_after_the_window_is_visible() {
    // the contract is tight: perturbing one chunk earlier does change Y_t
    let c = 3;
    let (sys, p) = system(c);
    let x = input(10, 8);
    let base = sys.infer(&p, &x, &x, None).unwrap();
    let mut xr = x.clone();
    let per = BINS * INPUT_CHANNELS;
    let t = 7;
    for v in &mut xr.data_mut()[(t - c) * per..(t - c + 1) * per] {
        *v += 0.5;
    }
    let out = sys.infer(&p, &x, &xr, None).unwrap();
    let row = |a: &Tensor<f64>| a.data()[t * BINS * 4..(t + 1) * BINS * 4].to_vec();
    let prev = |a: &Tensor<f64>| a.data()[..t * BINS * 4].to_vec();
    assert_eq!(prev(&base), prev(&out));
    assert_ne!(row(&base), row(&out));
}

#[test]
fn injected_leak_is_caught() {
    let c = 2;
    let (mut sys, p) = system(c);
    sys.inject_future_leak(true);
    let x = input(12, 9);
    let offline = |l: &Tensor<f64>, r: &Tensor<f64>| sys.infer(&p, l, r, None);
    let report = causality_audit(offline, &x, c, 6, 2).unwrap();
    let kinds: Vec<_> = report.violations.iter().map(|v| v.kind).collect();
    assert_eq!(kinds, [AuditKind::FutureInput, AuditKind::RemotePerturbation]);
    // every position attends to every chunk, so the leak shows from the first tick
    assert!(report.violations.iter().all(|v| v.tick == 0));
    assert!(matches!(report.into_result(), Err(Error::Causality { tick: 0, .. })));
}
