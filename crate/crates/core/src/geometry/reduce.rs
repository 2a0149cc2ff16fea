//! Order-fixed reductions over grid arrays.
//!
//! Sums use a pairwise tree whose shape depends only on the input length, so
//! the result is bit-identical regardless of how many rayon workers run it.

use num_complex::Complex64;

const LEAF: usize = 128;
const PAR_THRESHOLD: usize = 1 << 16;

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = split_point(xs.len());
    let (a, b) = xs.split_at(mid);
    if xs.len() >= PAR_THRESHOLD {
        let (sa, sb) = rayon::join(|| pairwise_sum(a), || pairwise_sum(b));
        sa + sb
    } else {
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = split_point(xs.len());
    let (a, b) = xs.split_at(mid);
    if xs.len() >= PAR_THRESHOLD {
        let (sa, sb) = rayon::join(|| pairwise_sum_complex(a), || pairwise_sum_complex(b));
        sa + sb
    } else {
        pairwise_sum_complex(a) + pairwise_sum_complex(b)
    }
}

// leaf-aligned midpoint keeps the tree identical for every caller
fn split_point(len: usize) -> usize {
    let leaves = len.div_ceil(LEAF);
    (leaves / 2) * LEAF
}

pub fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn sup_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}
