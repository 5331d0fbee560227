//! Dense matrix kernels.
//!
//! Every output element is produced by the same sequential loop whether rows
//! are distributed across rayon workers or not, so the two execution paths are
//! bit-identical. The `parallel` feature only changes who computes which row.

use std::sync::atomic::{AtomicU8, Ordering};

/// How row-parallel kernels are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

const UNSET: u8 = 0;
const SEQ: u8 = 1;
const PAR: u8 = 2;

static EXECUTION: AtomicU8 = AtomicU8::new(UNSET);

// Below this many multiply-adds the scheduling overhead dominates.
const PAR_MIN_WORK: usize = 1 << 15;

/// Overrides the scheduling for every kernel in the process.
///
/// `Parallel` silently falls back to sequential when the crate is built
/// without the `parallel` feature.
pub fn set_execution(mode: Execution) {
    EXECUTION.store(
        match mode {
            Execution::Sequential => SEQ,
            Execution::Parallel => PAR,
        },
        Ordering::Relaxed,
    );
}

pub fn execution() -> Execution {
    match EXECUTION.load(Ordering::Relaxed) {
        SEQ => Execution::Sequential,
        PAR if cfg!(feature = "parallel") => Execution::Parallel,
        UNSET if cfg!(feature = "parallel") => Execution::Parallel,
        _ => Execution::Sequential,
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Runs `f(row_index, row)` over each `cols`-wide row of `out`.
fn for_each_row(out: &mut [f64], cols: usize, work: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        if execution() == Execution::Parallel && work >= PAR_MIN_WORK {
            use rayon::prelude::*;
            out.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    let _ = work;
    for (i, row) in out.chunks_mut(cols).enumerate() {
        f(i, row);
    }
}

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    for_each_row(&mut out, n, m * k * n, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (p, &aip) in ai.iter().enumerate() {
            let bp = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o += aip * bv;
            }
        }
    });
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    for_each_row(&mut out, n, m * k * n, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(ai, &b[j * k..(j + 1) * k]);
        }
    });
    out
}

/// `aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    for_each_row(&mut out, n, m * k * n, |i, row| {
        for p in 0..k {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o += api * bv;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn execution_modes_are_bit_identical() {
        let m = 64;
        let k = 40;
        let n = 48;
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 53 % 97) as f64).cos()).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| ((i * 17 % 89) as f64).cos()).collect();
        let at: Vec<f64> = (0..k * m).map(|i| ((i * 7 % 83) as f64).sin()).collect();

        set_execution(Execution::Sequential);
        let s1 = matmul(&a, &b, m, k, n);
        let s2 = matmul_nt(&a, &bt, m, k, n);
        let s3 = matmul_tn(&at, &b, k, m, n);
        set_execution(Execution::Parallel);
        let p1 = matmul(&a, &b, m, k, n);
        let p2 = matmul_nt(&a, &bt, m, k, n);
        let p3 = matmul_tn(&at, &b, k, m, n);
        assert_eq!(s1, p1);
        assert_eq!(s2, p2);
        assert_eq!(s3, p3);
    }
}
