mod common;

use kboost::config::SessionConfig;
use kboost::models;
use kboost::threaded::run_threaded;
use kboost_core::gridnet::INPUT_CHANNELS;
use kboost_core::runtime::{run_session, TickDelays, CHANNEL_BOUND};
use kboost_core::train::Boosted;
use kboost_core::{rng, Tensor};
use proptest::prelude::*;

fn noise(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng::gaussian(&mut r)).collect()).unwrap()
}

fn model(task: &str, up: usize, down: usize) -> (SessionConfig, Boosted<f64>) {
    let mut cfg = SessionConfig::from_toml(&common::tiny_toml(task, "unused".as_ref())).unwrap();
    cfg.delay.c_out_ms = 8.0 * up as f64;
    cfg.delay.c_in_ms = 8.0 * down as f64;
    let m = models::boosted(&cfg).unwrap();
    (cfg, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn threaded_run_matches_the_scheduler(up in 0usize..3, down in 0usize..4, ticks in 1usize..14, seed in 0u64..1000) {
        let (cfg, m) = model("se", up, down);
        let delays = TickDelays { uplink: up, downlink: down };
        let x = noise(&[ticks, cfg.bins(), INPUT_CHANNELS], seed);
        let r = noise(&[ticks, cfg.bins(), INPUT_CHANNELS], seed + 1);
        for remote in [None, Some(&r)] {
            let a = run_session(&m.sys, &m.params, &x, remote, None, delays).unwrap();
            let b = run_threaded(&m.sys, &m.params, &x, remote, None, delays).unwrap();
            prop_assert_eq!(&a.trace, &b.trace);
            prop_assert_eq!(&a.output, &b.output);
        }
    }
}

#[test]
fn speaker_conditioned_sessions_agree() {
    let (cfg, m) = model("tse", 1, 2);
    let x = noise(&[10, cfg.bins(), INPUT_CHANNELS], 3);
    let e = noise(&[6, cfg.bins(), INPUT_CHANNELS], 4);
    let d = TickDelays { uplink: 1, downlink: 2 };
    let a = run_session(&m.sys, &m.params, &x, None, Some(&e), d).unwrap();
    let b = run_threaded(&m.sys, &m.params, &x, None, Some(&e), d).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.output, b.output);
    assert!(run_threaded(&m.sys, &m.params, &x, None, None, d).is_err());
}

#[test]
fn bad_inputs_are_rejected() {
    let (cfg, m) = model("se", 1, 1);
    let x = noise(&[5, cfg.bins(), INPUT_CHANNELS], 1);
    let wrong = TickDelays { uplink: 0, downlink: 1 };
    assert!(matches!(run_threaded(&m.sys, &m.params, &x, None, None, wrong), Err(kboost_core::Error::Config(_))));
    let short = noise(&[4, cfg.bins(), INPUT_CHANNELS], 2);
    assert!(run_threaded(&m.sys, &m.params, &x, Some(&short), None, TickDelays { uplink: 1, downlink: 1 }).is_err());
    let (_, far) = model("se", 0, CHANNEL_BOUND + 1);
    let r = run_threaded(&far.sys, &far.params, &x, None, None, TickDelays::downlink_only(CHANNEL_BOUND + 1));
    assert!(matches!(r, Err(kboost_core::Error::Backpressure { .. })), "{r:?}");
}
