//! Deterministic synthetic ground-truth images in `[0, 1]`.

use super::config::PhantomKind;
use crate::buffer::{strides, ImageBuffer};
use crate::error::{PnpError, Result};
use crate::rng::SeededRng;

/// Generates a phantom of the given kind; identical `(kind, shape, seed)`
/// yields bitwise-identical buffers.
pub fn phantom(kind: &PhantomKind, shape: &[usize], seed: u64) -> Result<ImageBuffer> {
    match kind {
        PhantomKind::PiecewiseConstantBlocks => blocks(shape, seed),
        PhantomKind::SmoothBumps => bumps(shape, seed),
        PhantomKind::RandomSparse { sparsity } => sparse(shape, seed, *sparsity),
    }
}

/// Overlapping axis-aligned rectangles with constant values: exactly
/// piecewise constant, so total-variation priors fit it well.
fn blocks(shape: &[usize], seed: u64) -> Result<ImageBuffer> {
    let mut rng = SeededRng::new(seed);
    let st = strides(shape);
    let total: usize = shape.iter().product();
    let mut data = vec![0.0f64; total];
    let rects = 8;
    for _ in 0..rects {
        let mut start = Vec::with_capacity(shape.len());
        let mut len = Vec::with_capacity(shape.len());
        for &n in shape {
            start.push(rng.uniform_below(n as u64) as usize);
            let max_len = (n / 2).max(1) as u64;
            len.push(1 + rng.uniform_below(max_len) as usize);
        }
        let value = (1 + rng.uniform_below(9)) as f64 / 10.0;
        paint_rect(&mut data, shape, &st, &start, &len, value);
    }
    ImageBuffer::new(shape.to_vec(), data)
}

fn paint_rect(
    data: &mut [f64],
    shape: &[usize],
    st: &[usize],
    start: &[usize],
    len: &[usize],
    value: f64,
) {
    // Walk the clipped rectangle with a mixed-radix counter.
    let dims: Vec<usize> = (0..shape.len())
        .map(|d| len[d].min(shape[d] - start[d]))
        .collect();
    let count: usize = dims.iter().product();
    for m in 0..count {
        let mut rem = m;
        let mut flat = 0usize;
        for d in (0..shape.len()).rev() {
            let c = rem % dims[d];
            rem /= dims[d];
            flat += (start[d] + c) * st[d];
        }
        data[flat] = value;
    }
}

/// Sum of Gaussian bumps, scaled so the maximum is 1.
fn bumps(shape: &[usize], seed: u64) -> Result<ImageBuffer> {
    let mut rng = SeededRng::new(seed);
    let st = strides(shape);
    let total: usize = shape.iter().product();
    let n_bumps = 5;
    let mut centers = Vec::new();
    let mut widths = Vec::new();
    let mut amps = Vec::new();
    for _ in 0..n_bumps {
        let c: Vec<f64> = shape
            .iter()
            .map(|&n| rng.uniform_below(n as u64) as f64)
            .collect();
        let w: Vec<f64> = shape
            .iter()
            .map(|&n| n as f64 * (0.05 + 0.15 * rng.next_f64()))
            .collect();
        let a = 0.3 + 0.7 * rng.next_f64();
        centers.push(c);
        widths.push(w);
        amps.push(a);
    }
    let mut data = vec![0.0f64; total];
    for (flat, slot) in data.iter_mut().enumerate() {
        let mut acc = 0.0;
        for b in 0..n_bumps {
            let mut e = 0.0;
            for d in 0..shape.len() {
                let x = ((flat / st[d]) % shape[d]) as f64 - centers[b][d];
                e += x * x / (2.0 * widths[b][d] * widths[b][d]);
            }
            acc += amps[b] * (-e).exp();
        }
        *slot = acc;
    }
    let max = data.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut data {
            *v /= max;
        }
    }
    ImageBuffer::new(shape.to_vec(), data)
}

/// Exactly `ceil(sparsity * n)` nonzero pixels with values in `(0, 1]`.
fn sparse(shape: &[usize], seed: u64, sparsity: f64) -> Result<ImageBuffer> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(PnpError::InvalidArgument {
            name: "sparsity",
            reason: format!("must lie in (0, 1], got {sparsity}"),
        });
    }
    let mut rng = SeededRng::new(seed);
    let total: usize = shape.iter().product();
    let k = (sparsity * total as f64).ceil() as usize;
    // Partial Fisher-Yates: the first k entries end up as a uniform
    // k-subset.
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..k {
        let j = i + rng.uniform_below((total - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut data = vec![0.0f64; total];
    for &i in idx.iter().take(k) {
        data[i] = ((rng.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64;
    }
    ImageBuffer::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_piecewise_constant_in_unit_range() {
        let p = phantom(&PhantomKind::PiecewiseConstantBlocks, &[32, 32], 5).unwrap();
        let mut distinct: Vec<u64> = p.data().iter().map(|v| v.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        // 8 rectangles plus background can produce at most 10 levels.
        assert!(distinct.len() <= 10, "{} levels", distinct.len());
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn bumps_normalized_to_unit_peak() {
        let p = phantom(&PhantomKind::SmoothBumps, &[24, 24], 9).unwrap();
        let max = p.data().iter().cloned().fold(0.0f64, f64::max);
        assert!((max - 1.0).abs() <= 1e-12);
        assert!(p.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sparse_has_exact_nonzero_count() {
        let p = phantom(&PhantomKind::RandomSparse { sparsity: 0.05 }, &[40, 10], 3).unwrap();
        let nnz = p.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nnz, (0.05f64 * 400.0).ceil() as usize);
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn same_inputs_bitwise_identical() {
        for kind in [
            PhantomKind::PiecewiseConstantBlocks,
            PhantomKind::SmoothBumps,
            PhantomKind::RandomSparse { sparsity: 0.1 },
        ] {
            let a = phantom(&kind, &[16, 16], 42).unwrap();
            let b = phantom(&kind, &[16, 16], 42).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
