use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::numerics::{Graph, ParamStore};
use crate::rng;

fn tiny(attention: bool) -> GridConfig {
    GridConfig {
        d: 4,
        b: 2,
        i: 1,
        j: 1,
        h: 3,
        l: 2,
        attention,
        attention_window: 3,
        k: 2,
        qk_dim: 16,
        speaker_dim: None,
    }
}

fn rand_input(frames: usize, bins: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    let n = frames * bins * INPUT_CHANNELS;
    Tensor::from_vec(&[frames, bins, INPUT_CHANNELS], (0..n).map(|_| rng::gaussian(&mut r)).collect()).unwrap()
}

fn offline(net: &GridNet, s: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = net.forward(s, &mut g, xv, None).unwrap();
    g.value(y).clone()
}

#[test]
fn closed_form_count_matches_enumeration() {
    for cfg in [
        GridConfig::small(4),
        GridConfig::medium(4),
        GridConfig::large(4),
        GridConfig::small(2).with_speaker(32),
        tiny(true),
    ] {
        let mut s = ParamStore::<f32>::new();
        GridNet::new(cfg, 97, &mut s, &mut rng::seeded(0)).unwrap();
        assert_eq!(cfg.param_count(97), GridNet::enumerate_params(&s), "{cfg:?}");
    }
}

#[test]
fn doubling_hidden_scales_lstm_terms() {
    let base = GridConfig::small(4);
    let wide = GridConfig { h: 2 * base.h, ..base };
    let (d, h, b) = (base.d, base.h, base.b);
    // each of the three LSTMs per block: recurrent term 4h^2 -> 16h^2, input 4hd -> 8hd, bias 4h -> 8h;
    // projections from 2h (freq) and h (time) double their weight columns
    let per_lstm = (16 * h * h - 4 * h * h) + (8 * h * d - 4 * h * d) + 4 * h;
    let proj = d * 2 * h + d * h;
    assert_eq!(wide.param_count(97) - base.param_count(97), b * (3 * per_lstm + proj));
}

#[test]
fn degenerate_configs_are_rejected() {
    let mut s = ParamStore::<f32>::new();
    for cfg in [
        GridConfig { d: 0, ..GridConfig::small(4) },
        GridConfig { b: 0, ..GridConfig::small(4) },
        GridConfig { i: 2, ..GridConfig::small(4) },
        GridConfig { l: 3, ..GridConfig::large(4) },
    ] {
        assert!(GridNet::new(cfg, 97, &mut s, &mut rng::seeded(0)).is_err(), "{cfg:?}");
    }
}

#[test]
fn encoder_shape_and_bias_pattern() {
    let mut s = ParamStore::<f32>::new();
    let net = GridNet::new(GridConfig::small(4), 97, &mut s, &mut rng::seeded(1)).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[624, 97, 4]));
    let z = net.encode(&s, &mut g, x).unwrap();
    assert_eq!(g.shape(z), &[624, 97, 16]);
    let zv = g.value(z).data();
    let first = &zv[..97 * 16];
    for t in 1..624 {
        assert_eq!(&zv[t * 97 * 16..(t + 1) * 97 * 16], first);
    }
}

#[test]
fn encoder_and_decoder_are_frame_local() {
    let mut s = ParamStore::<f64>::new();
    let net = GridNet::new(tiny(false), 5, &mut s, &mut rng::seeded(2)).unwrap();
    let a = rand_input(6, 5, 3);
    let mut b = a.clone();
    b.data_mut()[3 * 20 + 7] += 1.0;
    let enc = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let z = net.encode(&s, &mut g, xv).unwrap();
        let y = net.decode(&s, &mut g, z).unwrap();
        g.value(y).clone()
    };
    let (ya, yb) = (enc(&a), enc(&b));
    let per = 5 * 4;
    for t in 0..6 {
        let same = ya.data()[t * per..(t + 1) * per] == yb.data()[t * per..(t + 1) * per];
        assert_eq!(same, t != 3, "frame {t}");
    }
}

#[test]
fn zero_latent_with_zero_bias_decodes_to_zero() {
    let mut s = ParamStore::<f64>::new();
    let net = GridNet::new(tiny(false), 5, &mut s, &mut rng::seeded(4)).unwrap();
    let id = s.find("decoder.b").unwrap();
    s.get_mut(id).fill(0.0);
    let out = net.decode_frame(&s, &[0.0; 20]);
    assert!(out.iter().all(|&v| v == 0.0));
    assert_eq!(out.len(), 5 * 4);
}

#[test]
fn output_never_depends_on_future_frames() {
    for attention in [false, true] {
        let mut s = ParamStore::<f64>::new();
        let net = GridNet::new(tiny(attention), 5, &mut s, &mut rng::seeded(5)).unwrap();
        let a = rand_input(10, 5, 6);
        let mut b = a.clone();
        let t = 6;
        for v in &mut b.data_mut()[t * 20..] {
            *v += 0.5;
        }
        let (ya, yb) = (offline(&net, &s, &a), offline(&net, &s, &b));
        let per = 5 * 4;
        assert_eq!(ya.data()[..t * per], yb.data()[..t * per]);
        assert_ne!(ya.data()[t * per..(t + 1) * per], yb.data()[t * per..(t + 1) * per]);
    }
}

#[test]
fn streaming_matches_offline() {
    for attention in [false, true] {
        let mut s = ParamStore::<f32>::new();
        let net = GridNet::new(tiny(attention), 7, &mut s, &mut rng::seeded(7)).unwrap();
        let x: Tensor<f32> = rand_input(12, 7, 8).cast();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = net.forward(&s, &mut g, xv, None).unwrap();
        let full = g.value(y).clone();
        let mut st = net.new_state();
        let per_in = 7 * INPUT_CHANNELS;
        let per_out = 7 * 4;
        for t in 0..12 {
            let out = net.step(&s, &mut st, &x.data()[t * per_in..(t + 1) * per_in], None);
            for (a, b) in out.iter().zip(&full.data()[t * per_out..(t + 1) * per_out]) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "t={t}: {a} vs {b}");
            }
            if attention {
                assert!(st.cached_frames(0) <= 3);
            }
        }
    }
}

#[test]
fn attention_reads_only_its_window() {
    // outputs past the window still change through the recurrent stage, but a
    // model whose time stage is silenced only sees the window
    let mut cfg = tiny(true);
    cfg.b = 1;
    let mut s = ParamStore::<f64>::new();
    let net = GridNet::new(cfg, 5, &mut s, &mut rng::seeded(9)).unwrap();
    let id = s.find("block0.time.proj.w").unwrap();
    s.get_mut(id).fill(0.0);
    let id = s.find("block0.time.proj.b").unwrap();
    s.get_mut(id).fill(0.0);
    let a = rand_input(10, 5, 10);
    let mut b = a.clone();
    for v in &mut b.data_mut()[2 * 20..3 * 20] {
        *v += 1.0;
    }
    let (ya, yb) = (offline(&net, &s, &a), offline(&net, &s, &b));
    let per = 5 * 4;
    for t in 0..10 {
        let same = ya.data()[t * per..(t + 1) * per] == yb.data()[t * per..(t + 1) * per];
        // frame 2 is visible to queries 2, 3 and 4 only
        assert_eq!(same, !(2..=4).contains(&t), "frame {t}");
    }
}

#[test]
fn speaker_gate_conditions_latent() {
    let cfg = tiny(false).with_speaker(6);
    let mut s = ParamStore::<f64>::new();
    let net = GridNet::new(cfg, 5, &mut s, &mut rng::seeded(11)).unwrap();
    let z: Vec<f64> = (0..20).map(|i| i as f64 * 0.1 - 1.0).collect();
    // initial gate map yields all ones
    let gate = net.speaker_gate(&s, &[0.3; 6]).unwrap();
    let mut zz = z.clone();
    apply_gate(&mut zz, &gate);
    assert_eq!(zz, z);
    let id = s.find("speaker.gate.b").unwrap();
    s.get_mut(id).fill(0.0);
    let gate = net.speaker_gate(&s, &[0.3; 6]).unwrap();
    let mut zz = z.clone();
    apply_gate(&mut zz, &gate);
    assert!(zz.iter().all(|&v| v == 0.0));

    let mut s = ParamStore::<f64>::new();
    let net = GridNet::new(cfg, 5, &mut s, &mut rng::seeded(12)).unwrap();
    let id = s.find("speaker.gate.w").unwrap();
    *s.get_mut(id) = rand_input(1, 6, 13).reshape(&[4, 6]).unwrap();
    let _ = id;
    let emb = |seed| {
        let mut g = Graph::new();
        let e = g.input(rand_input(8, 5, seed));
        let v = net.speaker_embedding(&s, &mut g, e).unwrap();
        g.value(v).data().to_vec()
    };
    let (e1, e2) = (emb(20), emb(21));
    assert_eq!(e1.len(), 6);
    let x = rand_input(4, 5, 22);
    let run = |e: &[f64]| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let ev = g.input(Tensor::from_vec(&[6], e.to_vec()).unwrap());
        let y = net.forward(&s, &mut g, xv, Some(ev)).unwrap();
        g.value(y).data().to_vec()
    };
    assert_ne!(run(&e1), run(&e2));
}

#[test]
fn features_round_trip() {
    let cfg = crate::dsp::StftConfig::DEFAULT;
    let mut spec = crate::dsp::Spectrogram::<f64>::zeros(2, 3, cfg);
    let mut r = rng::seeded(30);
    for v in spec.values.iter_mut() {
        *v = num_complex::Complex::new(rng::gaussian(&mut r), rng::gaussian(&mut r));
    }
    let x = spec_to_features(&spec);
    assert_eq!(x.shape(), &[3, 97, 4]);
    assert_eq!(features_to_spec(&x, cfg).unwrap(), spec);
    let v = vec![spec.frame(1, 2)[5].re, spec.frame(1, 2)[5].im];
    let f = frame_features(&spec, 2);
    assert_eq!([f[5 * 4 + 1], f[5 * 4 + 3]], [v[0], v[1]]);
}
