use std::path::Path;

use kboost::checkpoint::{Checkpoint, Dtype};
use kboost::config::{DelaySection, Role, SessionConfig, SweepPoint};
use kboost::report::{aggregate, read_trace, write_trace, FileMetrics, MetricsReport, ReportHeader, TraceHeader};
use kboost::wav::{read_wav, write_wav};
use kboost::Error;
use kboost_core::dsp::AudioSignal;
use kboost_core::numerics::ParamStore;
use kboost_core::runtime::{SessionTrace, TickDelays, TickRecord};
use kboost_core::Tensor;
use proptest::prelude::*;

fn configs() -> Vec<SessionConfig> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .map(|p| SessionConfig::load(&p).unwrap())
        .collect();
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

#[test]
fn shipped_configs_round_trip_through_toml() {
    let all = configs();
    assert_eq!(all.len(), 7);
    for cfg in all {
        let back = SessionConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.chunks().unwrap(), 6, "{}", cfg.name);
        for point in cfg.sweep_points().unwrap() {
            cfg.at(point).validate().unwrap();
        }
    }
}

#[test]
fn sweep_grid_is_the_cartesian_product() {
    let cfg = configs().into_iter().find(|c| c.name == "compression-ss").unwrap();
    let pts = cfg.sweep_points().unwrap();
    assert_eq!(pts.len(), 9);
    assert!(pts.contains(&SweepPoint { c: 1, p: 4, freeze: false }));
    let frozen = configs().into_iter().find(|c| c.name == "frozen-ss").unwrap();
    assert_eq!(frozen.sweep_points().unwrap().iter().filter(|p| p.freeze).count(), 4);
}

#[test]
fn chunk_split_puts_the_odd_chunk_downstream() {
    for c in 0..10 {
        let d = DelaySection::for_chunks(c).to_delay();
        let t = d.ticks().unwrap();
        assert_eq!(t.total(), c);
        assert_eq!(t.downlink - t.uplink, c % 2);
    }
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let text = configs()[0].to_toml();
    let err = SessionConfig::from_toml(&format!("{text}\nbogus = 1\n")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let mut cfg = configs().into_iter().find(|c| c.name == "main-se").unwrap();
    cfg.boost.p = 3;
    assert!(cfg.validate().is_err());
    cfg.boost.p = 1;
    cfg.models.small.speaker_dim = Some(8);
    assert!(cfg.validate().is_err());
    cfg.models.small.speaker_dim = None;
    cfg.models.small.k = 4;
    assert!(cfg.validate().is_err());
}

#[test]
fn model_hash_tracks_architecture_and_delay() {
    let cfg = configs().into_iter().find(|c| c.name == "main-ss").unwrap();
    let h = cfg.model_hash(Role::Boosted).unwrap();
    assert_eq!(h.len(), 64);
    let mut renamed = cfg.clone();
    renamed.name = "other".into();
    renamed.seed = 99;
    assert_eq!(renamed.model_hash(Role::Boosted).unwrap(), h);
    let moved = cfg.at(SweepPoint { c: 3, p: 1, freeze: false });
    assert_ne!(moved.model_hash(Role::Boosted).unwrap(), h);
    // the large baseline does not depend on the link
    assert_eq!(moved.model_hash(Role::Large).unwrap(), cfg.model_hash(Role::Large).unwrap());
    assert_ne!(cfg.model_hash(Role::Small).unwrap(), cfg.model_hash(Role::Large).unwrap());
}

fn store(shapes: &[Vec<usize>], seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (i, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let vals = (0..n).map(|j| ((seed + 31 * i as u64 + j as u64) as f64 * 0.37).sin()).collect();
        s.add(format!("p{i}"), Tensor::from_vec(shape, vals).unwrap());
    }
    s
}

proptest! {
    #[test]
    fn checkpoint_bytes_round_trip(
        shapes in proptest::collection::vec(proptest::collection::vec(1usize..5, 1..4), 1..6),
        seed in any::<u64>(),
    ) {
        let s = store(&shapes, seed);
        let mut ck = Checkpoint::new(Role::Medium, "ab".repeat(32), seed);
        ck.add_store("model", &s);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(&back, &ck);
        let mut fresh = store(&shapes, seed.wrapping_add(1));
        back.restore("model", &mut fresh).unwrap();
        for (a, b) in fresh.params().iter().zip(s.params()) {
            prop_assert_eq!(&a.value, &b.value);
        }
    }
}

#[test]
fn f32_checkpoints_round_values() {
    let s = store(&[vec![3, 2]], 5);
    let mut ck = Checkpoint::new(Role::Small, "00".repeat(32), 0);
    ck.add_store("model", &s);
    ck.dtype = Dtype::F32;
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    for (a, b) in back.tensors[0].1.data().iter().zip(s.params()[0].value.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let mut ck = Checkpoint::new(Role::Large, "12".repeat(32), 1);
    ck.add_store("model", &store(&[vec![4]], 1));
    let bytes = ck.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
}

#[test]
fn hash_mismatch_needs_an_override() {
    let ck = Checkpoint::new(Role::Small, "aa".repeat(32), 1);
    assert!(!ck.verify(&"aa".repeat(32), false).unwrap());
    let e = ck.verify(&"bb".repeat(32), false).unwrap_err();
    assert!(matches!(e, Error::HashMismatch { .. }));
    assert_eq!(e.exit_code(), 2);
    assert!(ck.verify(&"bb".repeat(32), true).unwrap());
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut ck = Checkpoint::new(Role::Boosted, "cd".repeat(32), 7);
    ck.add_store("small", &store(&[vec![2, 2]], 1));
    ck.add_store("boost", &store(&[vec![3]], 2));
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.groups(), ["small", "boost"]);
}

#[test]
fn wav_round_trip_is_f32_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let ch = |k: f64| (0..500).map(|i| (i as f64 * k).sin() * 0.5).collect::<Vec<f64>>();
    let sig = AudioSignal::new(vec![ch(0.01), ch(0.03), ch(0.07)], 16_000).unwrap();
    write_wav(&path, &sig).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!((back.num_channels(), back.len(), back.sample_rate()), (3, 500, 16_000));
    for c in 0..3 {
        for (a, b) in back.channel(c).iter().zip(sig.channel(c)) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
    assert!(read_wav(&dir.path().join("missing.wav")).is_err());
}

fn rows(values: &[(f64, f64)]) -> Vec<FileMetrics> {
    values
        .iter()
        .enumerate()
        .map(|(i, &(s, d))| FileMetrics {
            id: format!("f{i}"),
            si_sdr: s,
            si_sdri: d,
        })
        .collect()
}

#[test]
fn aggregate_matches_hand_computation() {
    let a = aggregate(&rows(&[(1.0, 0.5), (2.0, 1.0), (6.0, 1.5)]));
    assert_eq!(a.n, 3);
    assert_eq!(a.mean, 3.0);
    assert_eq!(a.mean_improvement, 1.0);
    // squared deviations 4 + 1 + 9 over n - 1
    assert_eq!(a.std, 7.0f64.sqrt());
    assert_eq!(aggregate(&rows(&[(4.0, 1.0)])).std, 0.0);
    assert!(aggregate(&[]).mean.is_nan());
}

proptest! {
    #[test]
    fn aggregate_is_recomputable(values in proptest::collection::vec((-30.0f64..30.0, -10.0f64..10.0), 2..40)) {
        let r = rows(&values);
        let a = aggregate(&r);
        let n = values.len() as f64;
        let mean: f64 = values.iter().map(|v| v.0).sum::<f64>() / n;
        let var: f64 = values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert_eq!(a.mean, mean);
        prop_assert_eq!(a.std, var.sqrt());
        prop_assert!(values.iter().any(|v| v.0 <= a.mean) && values.iter().any(|v| v.0 >= a.mean));
    }
}

fn header() -> ReportHeader {
    ReportHeader {
        config: "t".into(),
        config_hash: "ef".repeat(32),
        checkpoint_hash: None,
        config_mismatch: false,
        seed: 3,
        role: "boosted".into(),
        estimate: "mixture".into(),
        split: "test".into(),
        delay_chunks: 2,
        compression: 1,
        params: vec![("small".into(), 100)],
        throughput_bps: 1.0,
        local_macs_per_chunk: 5,
    }
}

#[test]
fn report_jsonl_round_trip_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = MetricsReport::new(header(), rows(&[(1.5, 0.25), (-2.0, 3.0)]));
    let path = dir.path().join("r.jsonl");
    std::fs::write(&path, report.to_jsonl()).unwrap();
    let back = MetricsReport::read_jsonl(&path).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.summary, aggregate(&back.rows));
    let csv_path = dir.path().join("r.csv");
    report.write_csv(&csv_path).unwrap();
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(text.lines().next(), Some("id,si_sdr,si_sdri"));
    assert_eq!(text.lines().count(), 3);
    assert!(report.summary_table().contains("2 files"));
}

#[test]
fn trace_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let delays = TickDelays { uplink: 1, downlink: 2 };
    let records = (0..5)
        .map(|t| TickRecord {
            tick: t,
            local_input: t as u64 * 17,
            remote_chunk: t.checked_sub(1),
            remote_input: t.checked_sub(1).map(|c| c as u64 * 13),
            hint_used: t.checked_sub(3),
            cache_occupancy: vec![t.min(3)],
            uplink_depth: 1,
            downlink_depth: 2,
            output: t as u64 * 31,
        })
        .collect();
    let trace = SessionTrace { delays, records };
    let h = TraceHeader {
        config_hash: "01".repeat(32),
        seed: 4,
        delays,
    };
    let path = dir.path().join("t.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    write_trace(&mut f, &h, &trace).unwrap();
    drop(f);
    let (h2, t2) = read_trace(&path).unwrap();
    assert_eq!((h2, t2), (h, trace));
}
