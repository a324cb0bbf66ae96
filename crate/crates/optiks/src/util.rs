//! Small numeric helpers shared across modules.

/// Numerically stable logistic sigmoid.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; `u` must lie in (0, 1).
pub(crate) fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

/// `n` evenly spaced values covering `[a, b]` inclusive; `n >= 2`.
pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    debug_assert!(n >= 2);
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect()
}

/// Euclidean norm of the first `dims` components.
pub(crate) fn norm3(v: &[f64; 3], dims: usize) -> f64 {
    let mut acc = 0.0;
    for x in &v[..dims] {
        acc += x * x;
    }
    acc.sqrt()
}

/// Smallest power of two >= `n`.
pub(crate) fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Worker-thread budget for batch work, capped by the `OPTIKS_THREADS`
/// environment variable when it parses to a positive integer.
pub(crate) fn thread_count() -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("OPTIKS_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n.min(hw).min(64),
            _ => hw.min(64),
        },
        Err(_) => hw.min(64),
    }
}
