use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ScalarField, Spectrum, TorusGeometry};
use crate::error::{DhymError, Result};

/// Reproducible zero-mean random field with Fourier support in
/// `|k|_∞ ≤ k_band`.
///
/// Coefficients are drawn per wave vector in lexicographic order, so the same
/// seed gives the same continuous field at every resolution.
pub fn bandlimited_noise(
    geom: &TorusGeometry,
    k_band: usize,
    amplitude: f64,
    seed: u64,
) -> Result<ScalarField> {
    let nn = geom.resolution();
    if 3 * k_band > nn {
        return Err(DhymError::BandTooLarge {
            k_band,
            resolution: nn,
        });
    }
    let d = geom.real_dim();
    let kb = k_band as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![Complex64::new(0.0, 0.0); geom.spectrum_len()];
    let total = geom.num_points() as f64;

    let mut k = [-kb; 6];
    loop {
        if is_positive(&k[..d]) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let c = Complex64::new(re, im) * (0.5 * amplitude * total);
            let mut neg = [0i64; 6];
            for a in 0..d {
                neg[a] = -k[a];
            }
            for (kk, coef) in [(k, c), (neg, c.conj())] {
                let (s, conj) = geom.half_index_of(&kk[..d]);
                if kk[d - 1] > 0 || (kk[d - 1] == 0 && !conj) {
                    data[s] = if conj { coef.conj() } else { coef };
                }
            }
        }
        // odometer over [−kb, kb]^d
        let mut a = d;
        loop {
            if a == 0 {
                let field = geom.to_physical(Spectrum { data });
                return Ok(field);
            }
            a -= 1;
            if k[a] < kb {
                k[a] += 1;
                break;
            }
            k[a] = -kb;
        }
    }
}

fn is_positive(k: &[i64]) -> bool {
    k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_zero_mean() {
        let g = TorusGeometry::standard(1, 16).unwrap();
        let a = bandlimited_noise(&g, 2, 1.0, 7).unwrap();
        let b = bandlimited_noise(&g, 2, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.mean().abs() < 1e-14);
        assert!(a.sup_abs() > 0.1);
        let c = bandlimited_noise(&g, 2, 1.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_amplitude_is_zero() {
        let g = TorusGeometry::standard(1, 16).unwrap();
        let z = bandlimited_noise(&g, 2, 0.0, 7).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn band_limit_enforced() {
        let g = TorusGeometry::standard(1, 16).unwrap();
        let err = bandlimited_noise(&g, 8, 1.0, 7).unwrap_err();
        assert!(err.to_string().starts_with("band exceeds dealiasing limit"));
    }

    #[test]
    fn resolution_independent() {
        let coarse = TorusGeometry::standard(1, 16).unwrap();
        let fine = TorusGeometry::standard(1, 32).unwrap();
        let a = bandlimited_noise(&coarse, 3, 1.0, 11).unwrap();
        let b = bandlimited_noise(&fine, 3, 1.0, 11).unwrap();
        // coarse grid points are every other fine point along each axis
        for p in 0..coarse.num_points() {
            let idx = coarse.grid_index(p);
            let q = fine.flat_index(&[2 * idx[0], 2 * idx[1]]);
            assert!((a.values[p] - b.values[q]).abs() < 1e-13);
        }
    }

    #[test]
    fn support_is_band_limited() {
        let g = TorusGeometry::standard(1, 16).unwrap();
        let f = bandlimited_noise(&g, 2, 1.0, 1).unwrap();
        let spec = g.spectrum(&f);
        for (s, c) in spec.data.iter().enumerate() {
            if let Some(k) = g.spectral_wavevector(s) {
                if k[0].abs() > 2 || k[1].abs() > 2 {
                    assert!(c.norm() < 1e-11, "mode {k:?} = {c}");
                }
            }
        }
    }
}
