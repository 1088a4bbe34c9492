//! Generalised Laguerre polynomials and the coupling calibration built on
//! their roots.

use crate::error::{Error, Result};

/// `L_n^{(alpha)}(x)` by the three-term recurrence
/// `(k+1) L_{k+1} = (2k + 1 + alpha - x) L_k - (k + alpha) L_{k-1}`.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `L_n^{(1)}(x)`, the polynomial entering the operator-valued coupling.
pub fn laguerre_assoc(n: usize, x: f64) -> f64 {
    laguerre(n, 1.0, x)
}

/// Smallest positive root of `L_m^{(1)}`.
pub fn smallest_root(m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::NoRoot);
    }
    // All roots lie in (0, 4m + 2); the smallest one is separated from the
    // next by O(1/m), far more than the scan step.
    let f = |x: f64| laguerre_assoc(m, x);
    let step = 0.02 / (m as f64 + 1.0);
    let upper = 4.0 * m as f64 + 4.0;
    let mut lo = 0.0;
    let mut flo = f(lo);
    let mut hi = step;
    while hi <= upper {
        let fhi = f(hi);
        if fhi == 0.0 {
            return Ok(hi);
        }
        if flo.signum() != fhi.signum() {
            return Ok(bisect(f, lo, hi, flo));
        }
        lo = hi;
        flo = fhi;
        hi += step;
    }
    Err(Error::NoRoot)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    if f(lo).abs() <= f(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Scaled coupling `eta = g / omega_m` that slices the phonon ladder at `m`:
/// the square root of the smallest positive root of `L_m^{(1)}`.
pub fn eta_for_target(m: usize) -> Result<f64> {
    Ok(smallest_root(m)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Explicit sum `L_n^{(1)}(x) = sum_k (-1)^k C(n+1, n-k) x^k / k!`.
    fn explicit(n: usize, x: f64) -> f64 {
        let binom = |a: usize, b: usize| -> f64 {
            (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
        };
        (0..=n)
            .map(|k| {
                let fact: f64 = (1..=k).map(|i| i as f64).product();
                (-1f64).powi(k as i32) * binom(n + 1, n - k) * x.powi(k as i32) / fact
            })
            .sum()
    }

    #[test]
    fn low_orders() {
        assert_eq!(laguerre_assoc(0, 3.7), 1.0);
        assert_eq!(laguerre_assoc(1, 2.0), 0.0);
        let x = 1.0;
        // L_3^{(1)}(x) = (24 - 36x + 12x^2 - x^3)/6 -> -1/6 at x = 1
        assert!((laguerre_assoc(3, x) - explicit(3, x)).abs() < 1e-14);
        assert!((laguerre_assoc(3, x) + 1.0 / 6.0).abs() < 1e-14);
        for n in 0..12 {
            for &x in &[0.0, 0.3, 1.7, 5.0] {
                let e = explicit(n, x);
                assert!((laguerre_assoc(n, x) - e).abs() < 1e-10 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn general_alpha_matches_closed_forms() {
        // L_1^{(a)} = 1 + a - x, L_2^{(a)} = ((a+1)(a+2) - 2(a+2)x + x^2)/2
        let (a, x) = (3.0, 0.9);
        assert!((laguerre(1, a, x) - (1.0 + a - x)).abs() < 1e-15);
        let l2 = ((a + 1.0) * (a + 2.0) - 2.0 * (a + 2.0) * x + x * x) / 2.0;
        assert!((laguerre(2, a, x) - l2).abs() < 1e-14);
    }

    #[test]
    fn roots_for_first_targets() {
        assert!((eta_for_target(1).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let m2 = (3.0 - 3f64.sqrt()).sqrt();
        assert!((eta_for_target(2).unwrap() - m2).abs() < 1e-12);
        assert!(matches!(eta_for_target(0), Err(Error::NoRoot)));
    }

    #[test]
    fn roots_are_roots_and_decrease() {
        let mut last = f64::INFINITY;
        for m in 1..=12 {
            let eta = eta_for_target(m).unwrap();
            assert!(laguerre_assoc(m, eta * eta).abs() < 1e-12, "M = {m}");
            assert!(eta < last);
            last = eta;
        }
    }

    #[test]
    fn five_matches_bisection_oracle() {
        // Independent oracle: plain bisection on the explicit sum over (0, 2].
        let f = |x: f64| explicit(5, x);
        let (mut lo, mut hi): (f64, f64) = (1e-9, 2.0);
        // first sign change scanning coarsely
        let mut x = lo;
        while f(x).signum() == f(x + 0.01).signum() {
            x += 0.01;
        }
        lo = lo.max(x);
        hi = hi.min(x + 0.01);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == f(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = (0.5 * (lo + hi)).sqrt();
        assert!((eta_for_target(5).unwrap() - oracle).abs() < 1e-10);
    }
}
