use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape("tensor", &shape, &[values.len()]));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row `r` of a 2-d tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// `out = W x` for a row-major `rows × cols` matrix. Fixed summation order.
/// Runs `$body` through a copy compiled with AVX when the CPU has it. No FMA
/// is enabled, so both copies round identically.
macro_rules! dispatch {
    ($name:ident($($arg:ident: $ty:ty),*) $body:block) => {
        pub(crate) fn $name($($arg: $ty),*) {
            #[inline(always)]
            fn generic($($arg: $ty),*) $body

            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = "avx")]
            unsafe fn avx($($arg: $ty),*) {
                generic($($arg),*)
            }

            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx") {
                // SAFETY: the feature was detected at runtime.
                return unsafe { avx($($arg),*) };
            }
            generic($($arg),*)
        }
    };
}

dispatch!(matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let quads = rows / 4;
    for q in 0..quads {
        let r = q * 4;
        let block = &w[r * cols..(r + 4) * cols];
        let (w0, rest) = block.split_at(cols);
        let (w1, rest) = rest.split_at(cols);
        let (w2, w3) = rest.split_at(cols);
        let d = dot4([w0, w1, w2, w3], x);
        out[r..r + 4].copy_from_slice(&d);
    }
    for r in quads * 4..rows {
        out[r] = dot(&w[r * cols..(r + 1) * cols], x);
    }
});

dispatch!(outer_acc(dw: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    debug_assert_eq!(x.len(), cols);
    for (row, &dr) in dw.chunks_exact_mut(cols).zip(d) {
        if dr != 0.0 {
            row.iter_mut().zip(x).for_each(|(a, xx)| *a += dr * xx);
        }
    }
});

dispatch!(matvec_t_acc(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    for (row, &dr) in w.chunks_exact(cols).zip(d) {
        if dr != 0.0 {
            out.iter_mut().zip(row).for_each(|(a, ww)| *a += dr * ww);
        }
    }
});

/// Four dot products against the same vector, each summed exactly as [`dot`] does.
#[inline(always)]
fn dot4(rows: [&[f64]; 4], x: &[f64]) -> [f64; 4] {
    let n = x.len();
    let chunks = n / 4;
    let mut acc = [[0.0f64; 4]; 4];
    for k in 0..chunks {
        let i = k * 4;
        let xv = &x[i..i + 4];
        for (a, row) in acc.iter_mut().zip(&rows) {
            let rv = &row[i..i + 4];
            a[0] += rv[0] * xv[0];
            a[1] += rv[1] * xv[1];
            a[2] += rv[2] * xv[2];
            a[3] += rv[3] * xv[3];
        }
    }
    let mut out = [0.0; 4];
    for ((o, a), row) in out.iter_mut().zip(&acc).zip(&rows) {
        let mut s = (a[0] + a[1]) + (a[2] + a[3]);
        for i in chunks * 4..n {
            s += row[i] * x[i];
        }
        *o = s;
    }
    out
}

/// Dot product with four independent accumulators.
#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Numerically stable softmax over a plain vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

pub(crate) fn log_softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
    let lse = max + z.ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn kernels_match_scalar_loops(rows in 1usize..11, cols in 1usize..13, seed in 0u64..1000) {
            let val = |k: usize| (((k as u64 * 2654435761 + seed * 97) % 1000) as f64 - 500.0) / 37.0;
            let w: Vec<f64> = (0..rows * cols).map(val).collect();
            let x: Vec<f64> = (0..cols).map(|k| val(k + 7919)).collect();
            let d: Vec<f64> = (0..rows).map(|k| if k % 3 == 1 { 0.0 } else { val(k + 104729) }).collect();

            let mut out = vec![0.0; rows];
            matvec(&w, rows, cols, &x, &mut out);
            for r in 0..rows {
                proptest::prop_assert_eq!(out[r].to_bits(), dot(&w[r * cols..(r + 1) * cols], &x).to_bits());
            }

            let mut dw = w.clone();
            outer_acc(&mut dw, cols, &d, &x);
            let mut dx = x.clone();
            matvec_t_acc(&w, cols, &d, &mut dx);
            let mut ex = x.clone();
            for r in 0..rows {
                for c in 0..cols {
                    let k = r * cols + c;
                    let want = if d[r] == 0.0 { w[k] } else { w[k] + d[r] * x[c] };
                    proptest::prop_assert_eq!(dw[k].to_bits(), want.to_bits());
                    if d[r] != 0.0 {
                        ex[c] += d[r] * w[k];
                    }
                }
            }
            for c in 0..cols {
                proptest::prop_assert_eq!(dx[c].to_bits(), ex[c].to_bits());
            }
        }
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 0.0]).unwrap();
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] >= 0.0 && big[1] < 1e-300);
        assert!(softmax(&[]).is_err());
        assert!(matches!(softmax(&[f64::NAN, 1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.25).collect();
        let a = softmax(&x).unwrap();
        let b = softmax(&shifted).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one(xs in proptest::collection::vec(-500.0f64..500.0, 1..40)) {
            let p = softmax(&xs).unwrap();
            let s: f64 = p.iter().sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-12);
            proptest::prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
        }
    }
}
