//! Real-to-complex N-d FFTs and complex-coordinate derivative multipliers.
//!
//! The half spectrum keeps last-axis indices `0..=N/2`; other axes are full.
//! A derivative along `z_j` multiplies mode `(m, l)` by `(i m_j + l_j)/2`,
//! along `z̄_j` by `(i m_j − l_j)/2`. Modes touching the Nyquist index on any
//! axis get multiplier zero so that real fields stay real and complex
//! Hessians stay exactly Hermitian.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{ComplexField, MatrixField, ScalarField, TorusGeometry};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const PAR_LEN: usize = 1 << 15;

/// One complex derivative direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    Z(usize),
    Zbar(usize),
}

/// Half spectrum of a real field (unnormalized forward transform).
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub(crate) data: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl TorusGeometry {
    fn half(&self) -> usize {
        self.resolution / 2 + 1
    }

    pub(crate) fn spectrum_len(&self) -> usize {
        self.num_points() / self.resolution * self.half()
    }

    /// Signed wave number for a full-axis index.
    #[inline]
    fn wavenumber(&self, idx: usize) -> i64 {
        let nn = self.resolution;
        if idx < nn / 2 {
            idx as i64
        } else {
            idx as i64 - nn as i64
        }
    }

    /// Wave vector of half-spectrum index `s`; `None` on Nyquist modes.
    #[cfg(test)]
    pub(crate) fn spectral_wavevector(&self, mut s: usize) -> Option<[i64; 6]> {
        let d = self.real_dim();
        let nn = self.resolution;
        let m = self.half();
        let mut k = [0i64; 6];
        let last = s % m;
        if last == nn / 2 {
            return None;
        }
        k[d - 1] = last as i64;
        s /= m;
        for a in (0..d - 1).rev() {
            let idx = s % nn;
            if idx == nn / 2 {
                return None;
            }
            k[a] = self.wavenumber(idx);
            s /= nn;
        }
        Some(k)
    }

    /// Puts a full-spectrum wave vector into the half spectrum, returning the
    /// index and whether the coefficient has to be conjugated.
    pub(crate) fn half_index_of(&self, k: &[i64]) -> (usize, bool) {
        let d = self.real_dim();
        let nn = self.resolution as i64;
        let (k, conj) = if k[d - 1] < 0 {
            let mut neg = [0i64; 6];
            for a in 0..d {
                neg[a] = -k[a];
            }
            (neg, true)
        } else {
            let mut kk = [0i64; 6];
            kk[..d].copy_from_slice(&k[..d]);
            (kk, false)
        };
        let mut s = 0usize;
        for ka in &k[..d - 1] {
            s = s * self.resolution + ka.rem_euclid(nn) as usize;
        }
        s = s * self.half() + k[d - 1] as usize;
        (s, conj)
    }

    /// Forward transform of a real field.
    pub fn spectrum(&self, f: &ScalarField) -> Spectrum {
        let nn = self.resolution;
        let m = self.half();
        assert_eq!(f.len(), self.num_points(), "field/grid size mismatch");
        let mut data = vec![ZERO; self.spectrum_len()];
        let r2c = &self.r2c;
        let row = |(src, dst): (&[f64], &mut [Complex64])| {
            let mut input = src.to_vec();
            let mut scratch = r2c.make_scratch_vec();
            r2c.process_with_scratch(&mut input, dst, &mut scratch)
                .expect("r2c buffer sizes");
        };
        if f.len() >= PAR_LEN {
            f.values
                .par_chunks(nn)
                .zip(data.par_chunks_mut(m))
                .for_each(row);
        } else {
            f.values.chunks(nn).zip(data.chunks_mut(m)).for_each(row);
        }
        for axis in (0..self.real_dim() - 1).rev() {
            self.c2c_axis(&mut data, axis, false);
        }
        Spectrum { data }
    }

    /// Inverse transform back to a real field (normalized).
    pub fn to_physical(&self, spec: Spectrum) -> ScalarField {
        let nn = self.resolution;
        let m = self.half();
        let mut data = spec.data;
        for axis in 0..self.real_dim() - 1 {
            self.c2c_axis(&mut data, axis, true);
        }
        let scale = 1.0 / self.num_points() as f64;
        let mut out = vec![0.0; self.num_points()];
        let c2r = &self.c2r;
        let row = |(src, dst): (&mut [Complex64], &mut [f64])| {
            src[0].im = 0.0;
            src[m - 1].im = 0.0;
            let mut scratch = c2r.make_scratch_vec();
            c2r.process_with_scratch(src, dst, &mut scratch)
                .expect("c2r buffer sizes");
            for x in dst.iter_mut() {
                *x *= scale;
            }
        };
        if out.len() >= PAR_LEN {
            data.par_chunks_mut(m)
                .zip(out.par_chunks_mut(nn))
                .for_each(row);
        } else {
            data.chunks_mut(m).zip(out.chunks_mut(nn)).for_each(row);
        }
        ScalarField { values: out }
    }

    fn c2c_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let nn = self.resolution;
        let d = self.real_dim();
        let stride = nn.pow((d - 2 - axis) as u32) * self.half();
        let block = nn * stride;
        let outer = data.len() / block;
        let fft = if inverse {
            &self.fft_inv
        } else {
            &self.fft_fwd
        };
        let mut buf = vec![ZERO; data.len()];
        for b in 0..outer {
            let base = b * block;
            for j in 0..stride {
                let line = (b * stride + j) * nn;
                for k in 0..nn {
                    buf[line + k] = data[base + k * stride + j];
                }
            }
        }
        let chunk = nn * 64;
        if buf.len() >= PAR_LEN {
            buf.par_chunks_mut(chunk).for_each(|c| {
                let mut scratch = vec![ZERO; fft.get_inplace_scratch_len()];
                fft.process_with_scratch(c, &mut scratch);
            });
        } else {
            let mut scratch = vec![ZERO; fft.get_inplace_scratch_len()];
            fft.process_with_scratch(&mut buf, &mut scratch);
        }
        for b in 0..outer {
            let base = b * block;
            for j in 0..stride {
                let line = (b * stride + j) * nn;
                for k in 0..nn {
                    data[base + k * stride + j] = buf[line + k];
                }
            }
        }
    }

    #[inline]
    fn multiplier(&self, k: &[i64; 6], dirs: &[Dir]) -> Complex64 {
        let n = self.n;
        let mut acc = Complex64::new(1.0, 0.0);
        for dir in dirs {
            let f = match *dir {
                Dir::Z(j) => Complex64::new(k[n + j] as f64, k[j] as f64) * 0.5,
                Dir::Zbar(j) => Complex64::new(-(k[n + j] as f64), k[j] as f64) * 0.5,
            };
            acc *= f;
        }
        acc
    }

    fn scaled_spectrum(
        &self,
        spec: &Spectrum,
        f: impl Fn(&[i64; 6]) -> Complex64 + Sync,
    ) -> Spectrum {
        let d = self.real_dim();
        let nn = self.resolution;
        let m = self.half();
        // one row = all last-axis indices for fixed leading indices
        let apply = |(row, (out, src)): (usize, (&mut [Complex64], &[Complex64]))| {
            let mut k = [0i64; 6];
            let mut r = row;
            let mut nyquist = false;
            for a in (0..d - 1).rev() {
                let idx = r % nn;
                nyquist |= idx == nn / 2;
                k[a] = self.wavenumber(idx);
                r /= nn;
            }
            if nyquist {
                out.fill(ZERO);
                return;
            }
            for (j, (o, &v)) in out.iter_mut().zip(src).enumerate() {
                if j == nn / 2 {
                    *o = ZERO;
                } else {
                    k[d - 1] = j as i64;
                    *o = f(&k) * v;
                }
            }
        };
        let mut data = vec![ZERO; spec.data.len()];
        if data.len() >= PAR_LEN {
            data.par_chunks_mut(m)
                .zip(spec.data.par_chunks(m))
                .enumerate()
                .for_each(apply);
        } else {
            data.chunks_mut(m)
                .zip(spec.data.chunks(m))
                .enumerate()
                .for_each(apply);
        }
        Spectrum { data }
    }

    /// Applies the derivative `∂_{dirs}` to a real field given by its spectrum.
    pub fn derivative(&self, spec: &Spectrum, dirs: &[Dir]) -> ComplexField {
        let (re, im) = self.derivative_parts(spec, dirs);
        let values = match im {
            Some(im) => re
                .values
                .iter()
                .zip(&im.values)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
            None => re.values.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
        };
        ComplexField { values }
    }

    /// Real derivative; only valid when each `Z(j)` is paired with a `Zbar(j)`.
    pub fn derivative_real(&self, spec: &Spectrum, dirs: &[Dir]) -> ScalarField {
        assert!(is_self_conjugate(dirs), "derivative {dirs:?} is not real");
        self.derivative_parts(spec, dirs).0
    }

    /// `∂_{z_i}∂_{z̄_i} f`, the quarter Laplacian in the (x_i, y_i) plane.
    pub fn diagonal_hessian(&self, spec: &Spectrum, i: usize) -> ScalarField {
        let n = self.n;
        let scaled = self.scaled_spectrum(spec, |k| {
            let (m, l) = (k[i] as f64, k[n + i] as f64);
            Complex64::new(-0.25 * (m * m + l * l), 0.0)
        });
        self.to_physical(scaled)
    }

    /// Real and imaginary parts of ∂_{dirs} f. The imaginary part is `None`
    /// when it vanishes identically.
    fn derivative_parts(
        &self,
        spec: &Spectrum,
        dirs: &[Dir],
    ) -> (ScalarField, Option<ScalarField>) {
        let odd = dirs.len() % 2 == 1;
        let i = Complex64::new(0.0, 1.0);
        // a(−k) = (−1)^r a(k), so real/imag parts of the output have
        // Hermitian-symmetric multipliers built from Re a and Im a.
        let re_spec = self.scaled_spectrum(spec, |k| {
            let a = self.multiplier(k, dirs);
            if odd {
                i * a.im
            } else {
                Complex64::new(a.re, 0.0)
            }
        });
        let re = self.to_physical(re_spec);
        if is_self_conjugate(dirs) {
            return (re, None);
        }
        let im_spec = self.scaled_spectrum(spec, |k| {
            let a = self.multiplier(k, dirs);
            if odd {
                -i * a.re
            } else {
                Complex64::new(a.im, 0.0)
            }
        });
        (re, Some(self.to_physical(im_spec)))
    }

    /// Matrix of ∂_{prefix}∂_{z_i}∂_{z̄_j} f over (i, j).
    pub fn mixed_tensor(&self, spec: &Spectrum, prefix: &[Dir]) -> MatrixField {
        let n = self.n;
        let len = self.num_points();
        let mut out = MatrixField::zeros(n, len);
        let hermitian = prefix.is_empty();
        for i in 0..n {
            for j in 0..n {
                if hermitian && j < i {
                    continue;
                }
                let mut dirs = prefix.to_vec();
                dirs.push(Dir::Z(i));
                dirs.push(Dir::Zbar(j));
                if hermitian && i == j {
                    let re = self.diagonal_hessian(spec, i);
                    out.set_real_diagonal_field(i, &re.values);
                    continue;
                }
                let vals = self.derivative(spec, &dirs).values;
                if hermitian {
                    let conj: Vec<Complex64> = vals.iter().map(|z| z.conj()).collect();
                    out.set_entry_field(j, i, &conj);
                }
                out.set_entry_field(i, j, &vals);
            }
        }
        out
    }

    /// Matrix of ∂_{prefix}∂_{z_i}∂_{z_j} f over (i, j), symmetric in (i, j).
    pub fn holomorphic_tensor(&self, spec: &Spectrum, prefix: &[Dir]) -> MatrixField {
        let n = self.n;
        let mut out = MatrixField::zeros(n, self.num_points());
        for i in 0..n {
            for j in i..n {
                let mut dirs = prefix.to_vec();
                dirs.push(Dir::Z(i));
                dirs.push(Dir::Z(j));
                let vals = self.derivative(spec, &dirs).values;
                out.set_entry_field(i, j, &vals);
                if i != j {
                    out.set_entry_field(j, i, &vals);
                }
            }
        }
        out
    }

    pub fn hessian_from_spectrum(&self, spec: &Spectrum) -> MatrixField {
        self.mixed_tensor(spec, &[])
    }

    /// ¼(∂²_{x_j} + ∂²_{y_j}) f via the real multiplier −(m_j² + l_j²)/4.
    pub fn quarter_laplacian(&self, f: &ScalarField, j: usize) -> ScalarField {
        let spec = self.spectrum(f);
        let n = self.n;
        let scaled = self.scaled_spectrum(&spec, |k| {
            Complex64::new(-((k[j] * k[j] + k[n + j] * k[n + j]) as f64) / 4.0, 0.0)
        });
        self.to_physical(scaled)
    }
}

fn is_self_conjugate(dirs: &[Dir]) -> bool {
    let mut balance = [0i32; 3];
    for d in dirs {
        match *d {
            Dir::Z(j) => balance[j] += 1,
            Dir::Zbar(j) => balance[j] -= 1,
        }
    }
    balance.iter().all(|&b| b == 0)
}
