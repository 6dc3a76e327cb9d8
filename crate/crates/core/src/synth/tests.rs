use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::dsp::AudioSignal;

fn short(task: Task, seed: u64, n: usize) -> CorpusSpec {
    CorpusSpec {
        sizes: SplitSizes { train: n, val: n / 2, test: n / 2 },
        seconds: 0.5,
        ..CorpusSpec::new(task, seed)
    }
}

fn sig(l: Vec<f64>, r: Vec<f64>) -> AudioSignal<f64> {
    AudioSignal::new(vec![l, r], 16_000).unwrap()
}

#[test]
fn brir_invariants() {
    for id in 0..40 {
        let h = ToyBrir::generate(id, 16_000);
        assert!(h.left.len() <= MAX_SUPPORT && h.left.len() == h.right.len());
        assert!(h.itd.abs() <= MAX_ITD);
        assert!((h.energy() - 1.0).abs() < 1e-12);
        // direct path onsets differ by exactly the itd
        let onset = |x: &[f64]| x.iter().position(|&v| v != 0.0).unwrap() as i32;
        assert_eq!(onset(&h.right) - onset(&h.left), h.itd, "id {id}");
        assert_eq!(h, ToyBrir::generate(id, 16_000));
    }
}

#[test]
fn sparse_convolution_matches_direct_sum() {
    let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let h = vec![0.0, 0.5, 0.0, 0.0, -0.25, 0.0, 1.0];
    let y = convolve_sparse(&x, &h);
    for n in 0..x.len() {
        let direct: f64 = (0..h.len()).filter(|&k| k <= n).map(|k| h[k] * x[n - k]).sum();
        assert!((y[n] - direct).abs() < 1e-12);
    }
}

#[test]
fn sources_are_speech_like_and_speaker_specific() {
    let a = speech_like(3, 1, 16_000, 16_000);
    assert!(a.iter().all(|v| v.is_finite()));
    // syllable gaps leave silent stretches
    let silent = a.iter().filter(|&&v| v == 0.0).count();
    assert!(silent > 800 && silent < 12_000, "{silent}");
    assert_eq!(a, speech_like(3, 1, 16_000, 16_000));
    assert_ne!(a, speech_like(3, 2, 16_000, 16_000));
    assert_ne!(Voice::of_speaker(3), Voice::of_speaker(4));
}

#[test]
fn equal_power_at_zero_db_needs_unit_scale() {
    let s = sig(vec![1.0, -1.0, 1.0, -1.0], vec![2.0, 0.0, -2.0, 0.0]);
    let n = sig(vec![-1.0, 1.0, 1.0, -1.0], vec![0.0, 2.0, 0.0, -2.0]);
    assert!((scale_noise_to_snr(&s, &n, 0.0).unwrap() - 1.0).abs() < 1e-15);
    let g = scale_noise_to_snr(&s, &n, 6.0).unwrap();
    assert!((g - 10f64.powf(-6.0 / 20.0)).abs() < 1e-15);
}

#[test]
fn silent_channels_are_rejected() {
    let s = sig(vec![1.0; 4], vec![0.0; 4]);
    let n = sig(vec![1.0; 4], vec![1.0; 4]);
    assert!(matches!(scale_noise_to_snr(&s, &n, 0.0), Err(crate::Error::ZeroPower(_))));
    assert!(matches!(scale_noise_to_snr(&n, &s, 0.0), Err(crate::Error::ZeroPower(_))));
}

proptest! {
    #[test]
    fn asymmetric_channels_measure_back(
        target in -6.0f64..6.0,
        gl in 0.01f64..10.0,
        gr in 0.01f64..10.0,
        seed in 0u64..1000,
    ) {
        let [a, b] = binaural_noise(1, seed, 400, 16_000);
        let [c, d] = binaural_noise(2, seed, 400, 16_000);
        let s = sig(a.iter().map(|v| gl * v).collect(), b.iter().map(|v| gr * v).collect());
        let n = sig(c, d);
        let g = scale_noise_to_snr(&s, &n, target).unwrap();
        let scaled = sig(n.channel(0).iter().map(|v| g * v).collect(), n.channel(1).iter().map(|v| g * v).collect());
        prop_assert!((measure_snr(&s, &scaled) - target).abs() < 1e-6);
    }
}

#[test]
fn mixture_is_sum_of_parts() {
    for task in [Task::Ss, Task::Se, Task::Tse] {
        let recipes = build_corpus(&short(task, 11, 4)).unwrap();
        let m = make_mixture(&recipes[0]).unwrap();
        assert_eq!(m.references.len(), task.num_sources());
        for c in 0..2 {
            for n in 0..m.mixture.len() {
                let mut expect = 0.0;
                for r in &m.references {
                    expect += r.channel(c)[n];
                }
                if let Some(noise) = &m.noise {
                    expect += noise.channel(c)[n];
                }
                assert_eq!(m.mixture.channel(c)[n].to_bits(), expect.to_bits());
            }
        }
        assert_eq!(m.enrollment.is_some(), task == Task::Tse);
        if let Some(e) = &m.enrollment {
            assert_eq!(e.len(), 32_000);
        }
    }
}

#[test]
fn rendered_snr_matches_recipe() {
    let recipes = build_corpus(&short(Task::Se, 12, 6)).unwrap();
    for r in &recipes {
        let m = make_mixture(r).unwrap();
        let snr = measure_snr(&m.references[0], m.noise.as_ref().unwrap());
        assert!((snr - r.snr_db.unwrap()).abs() < 1e-9, "{}", r.id);
    }
}

#[test]
fn corpus_is_deterministic_and_disjoint() {
    let spec = short(Task::Tse, 13, 40);
    let a = build_corpus(&spec).unwrap();
    assert_eq!(a, build_corpus(&spec).unwrap());
    assert_ne!(a, build_corpus(&CorpusSpec { seed: 14, ..spec }).unwrap());
    assert_eq!(a.len(), 80);
    check_disjoint(&a).unwrap();
    for r in &a {
        assert_ne!(r.sources[0], r.sources[1]);
        assert!(r.snr_db.is_some_and(|s| (-6.0..=6.0).contains(&s)));
    }
}

#[test]
fn crossing_identities_fail_the_build_check() {
    let mut a = build_corpus(&short(Task::Se, 15, 4)).unwrap();
    let val = a.iter().position(|r| r.split == Split::Val).unwrap();
    a[val].noise = a[0].noise;
    assert!(check_disjoint(&a).is_err());
}

#[test]
fn corpus_snr_is_centered() {
    let spec = CorpusSpec {
        sizes: SplitSizes { train: 200, val: 0, test: 0 },
        ..CorpusSpec::new(Task::Se, 16)
    };
    let recipes = build_corpus(&spec).unwrap();
    let mean = recipes.iter().map(|r| r.snr_db.unwrap()).sum::<f64>() / recipes.len() as f64;
    assert!(mean.abs() < 0.5, "{mean}");
}

#[test]
fn invalid_recipes_are_rejected() {
    let base = build_corpus(&short(Task::Tse, 17, 2)).unwrap().remove(0);
    let mut r = base.clone();
    r.snr_db = Some(7.0);
    assert!(make_mixture(&r).is_err());
    let mut r = base.clone();
    r.sources[1] = r.sources[0];
    assert!(r.validate().is_err());
    let mut r = base;
    r.enrollment = None;
    assert!(r.validate().is_err());
}
