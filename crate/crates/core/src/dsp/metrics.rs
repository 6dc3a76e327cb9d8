use super::signal::AudioSignal;
use crate::error::{shape_err, Error, Result};
use crate::real::Real;

/// Finite stand-in for a perfect (or perfectly wrong) reconstruction.
pub const SI_SDR_CAP_DB: f64 = 120.0;

const CAP_RATIO: f64 = 1e-12;

/// Energies of the scaled target and the residual: `(|a s|^2, |a s - e|^2)`
/// with `a = <e, s> / |s|^2`, accumulated in f64.
pub fn si_sdr_parts<T: Real>(estimate: &[T], reference: &[T]) -> Result<(f64, f64)> {
    if estimate.len() != reference.len() {
        return Err(shape_err!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        ));
    }
    let (mut ss, mut es, mut ee) = (0.0f64, 0.0f64, 0.0f64);
    for (&e, &s) in estimate.iter().zip(reference) {
        let (e, s) = (e.as_f64(), s.as_f64());
        ss += s * s;
        es += e * s;
        ee += e * e;
    }
    if ss == 0.0 {
        return Err(Error::ZeroReference);
    }
    let target = es * es / ss;
    // orthogonal decomposition: |e|^2 = |target|^2 + |residual|^2
    let residual = (ee - target).max(0.0);
    Ok((target, residual))
}

/// Scale-invariant SDR in dB of one channel. Saturates at `±SI_SDR_CAP_DB`
/// when one of the two energies vanishes relative to the other.
pub fn si_sdr<T: Real>(estimate: &[T], reference: &[T]) -> Result<f64> {
    let (target, residual) = si_sdr_parts(estimate, reference)?;
    Ok(ratio_db(target, residual))
}

pub(crate) fn ratio_db(target: f64, residual: f64) -> f64 {
    if residual <= CAP_RATIO * target {
        SI_SDR_CAP_DB
    } else if target <= CAP_RATIO * residual {
        -SI_SDR_CAP_DB
    } else {
        10.0 * libm::log10(target / residual)
    }
}

/// Mean of per-channel SI-SDR; each channel gets its own optimal scale.
pub fn mean_si_sdr<T: Real>(estimate: &AudioSignal<T>, reference: &AudioSignal<T>) -> Result<f64> {
    if estimate.num_channels() != reference.num_channels() {
        return Err(shape_err!("channel counts differ"));
    }
    let mut sum = 0.0;
    for c in 0..estimate.num_channels() {
        sum += si_sdr(estimate.channel(c), reference.channel(c))?;
    }
    Ok(sum / estimate.num_channels() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use alloc::vec::Vec;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| rng::gaussian(&mut r)).collect()
    }

    #[test]
    fn perfect_and_scaled_hit_cap() {
        let s = noise(500, 1);
        assert_eq!(si_sdr(&s, &s).unwrap(), SI_SDR_CAP_DB);
        let scaled: Vec<f64> = s.iter().map(|v| 3.0 * v).collect();
        assert_eq!(si_sdr(&scaled, &s).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_equal_energy_is_zero_db() {
        let s = vec![1.0, 0.0, 1.0, 0.0];
        let est = vec![1.0, 1.0, 1.0, 1.0]; // s + e, e = [0,1,0,1]
        assert!(si_sdr(&est, &s).unwrap().abs() < 1e-6);
    }

    #[test]
    fn zero_reference_errors() {
        assert_eq!(si_sdr(&[1.0f64, 2.0], &[0.0, 0.0]), Err(Error::ZeroReference));
    }

    #[test]
    fn mean_over_channels() {
        // channel 0: 0 dB, channel 1: 10 dB
        let s0 = vec![1.0, 0.0, 1.0, 0.0];
        let e0 = vec![1.0, 1.0, 1.0, 1.0];
        let s1 = vec![1.0, 0.0, 0.0, 0.0];
        let r = libm::sqrt(0.1);
        let e1 = vec![1.0, r, 0.0, 0.0];
        let est = AudioSignal::new(vec![e0, e1], 16000).unwrap();
        let refs = AudioSignal::new(vec![s0, s1], 16000).unwrap();
        assert!((mean_si_sdr(&est, &refs).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn binaural_mean_matches_per_channel_oracle() {
        let est = AudioSignal::new(vec![noise(300, 2), noise(300, 3)], 16000).unwrap();
        let refs = AudioSignal::new(vec![noise(300, 4), noise(300, 5)], 16000).unwrap();
        // brute force: explicit projection per channel
        let mut acc = 0.0;
        for c in 0..2 {
            let (e, s) = (est.channel(c), refs.channel(c));
            let a = e.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() / s.iter().map(|y| y * y).sum::<f64>();
            let num: f64 = s.iter().map(|y| (a * y) * (a * y)).sum();
            let den: f64 = s.iter().zip(e).map(|(y, x)| (a * y - x) * (a * y - x)).sum();
            acc += 10.0 * libm::log10(num / den);
        }
        assert!((mean_si_sdr(&est, &refs).unwrap() - acc / 2.0).abs() < 1e-9);
    }
}
