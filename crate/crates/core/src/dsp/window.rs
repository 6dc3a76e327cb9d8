use alloc::vec::Vec;

use crate::real::Real;

/// Square root of the periodic Hann window. Used for both analysis and
/// synthesis so the product of the two is a Hann window.
pub fn sqrt_hann<T: Real>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| {
            let phase = core::f64::consts::TAU * n as f64 / len as f64;
            T::lit(libm::sqrt(0.5 - 0.5 * libm::cos(phase)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squares_to_periodic_hann() {
        let w = sqrt_hann::<f64>(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        // periodic: symmetric around the center sample
        for n in 1..8 {
            assert!((w[n] - w[8 - n]).abs() < 1e-15);
        }
    }
}
