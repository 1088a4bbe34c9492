//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (Higham, "The scaling and squaring method for the matrix exponential
//! revisited", 2005). Degrees 3, 5, 7, 9 and 13 are selected from the 1-norm.

use faer::linalg::solvers::Solve;
use faer::{c64, Mat, Scale};

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068e0),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm_1(a: &Mat<c64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn scaled(a: &Mat<c64>, s: f64) -> Mat<c64> {
    Scale(c64::new(s, 0.0)) * a
}

fn axpy(acc: &mut Mat<c64>, s: f64, a: &Mat<c64>) {
    let n = acc.nrows();
    for j in 0..n {
        for i in 0..n {
            acc[(i, j)] += a[(i, j)] * s;
        }
    }
}

fn add_identity(acc: &mut Mat<c64>, s: f64) {
    for i in 0..acc.nrows() {
        acc[(i, i)] += c64::new(s, 0.0);
    }
}

/// Odd/even split `(U, V)` of a low-degree Padé approximant.
fn pade_low(a: &Mat<c64>, b: &[f64]) -> (Mat<c64>, Mat<c64>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut powers = vec![a2.clone()];
    let m = b.len() - 1;
    while powers.len() < m / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = Mat::<c64>::zeros(n, n);
    let mut v = Mat::<c64>::zeros(n, n);
    add_identity(&mut u_inner, b[1]);
    add_identity(&mut v, b[0]);
    for (k, p) in powers.iter().enumerate() {
        let deg = 2 * (k + 1);
        axpy(&mut v, b[deg], p);
        axpy(&mut u_inner, b[deg + 1], p);
    }
    (a * &u_inner, v)
}

fn pade_13(a: &Mat<c64>) -> (Mat<c64>, Mat<c64>) {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let mut w1 = scaled(&a6, b[13]);
    axpy(&mut w1, b[11], &a4);
    axpy(&mut w1, b[9], &a2);
    let mut w2 = scaled(&a6, b[7]);
    axpy(&mut w2, b[5], &a4);
    axpy(&mut w2, b[3], &a2);
    add_identity(&mut w2, b[1]);
    let inner = &(&a6 * &w1) + &w2;
    let u = a * &inner;

    let mut z1 = scaled(&a6, b[12]);
    axpy(&mut z1, b[10], &a4);
    axpy(&mut z1, b[8], &a2);
    let mut z2 = scaled(&a6, b[6]);
    axpy(&mut z2, b[4], &a4);
    axpy(&mut z2, b[2], &a2);
    add_identity(&mut z2, b[0]);
    let v = &(&a6 * &z1) + &z2;
    (u, v)
}

/// `exp(a)` for a square complex matrix.
pub(crate) fn expm(a: &Mat<c64>) -> Mat<c64> {
    assert_eq!(a.nrows(), a.ncols(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let norm = norm_1(a);
    if norm == 0.0 {
        return Mat::identity(n, n);
    }

    for (deg, theta) in THETA {
        if norm <= theta {
            let b: &[f64] = match deg {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(a, b);
            return rational(&u, &v);
        }
    }

    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let a_scaled = scaled(a, 0.5f64.powi(s));
    let (u, v) = pade_13(&a_scaled);
    let mut r = rational(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn rational(u: &Mat<c64>, v: &Mat<c64>) -> Mat<c64> {
    let p = v + u;
    let q = v - u;
    q.partial_piv_lu().solve(&p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(vals: &[c64]) -> Mat<c64> {
        let n = vals.len();
        Mat::from_fn(n, n, |i, j| if i == j { vals[i] } else { c64::new(0.0, 0.0) })
    }

    #[test]
    fn exponential_of_diagonal_matches_scalar_exponentials() {
        let vals = [
            c64::new(0.001, 0.0),
            c64::new(-0.3, 0.2),
            c64::new(1.7, -2.0),
            c64::new(-12.0, 30.0),
        ];
        let e = expm(&diag(&vals));
        for (i, v) in vals.iter().enumerate() {
            let expect = v.exp();
            assert!((e[(i, i)] - expect).norm() <= 1e-12 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn rotation_generator_gives_rotation() {
        // exp([[0, -t], [t, 0]]) = [[cos t, -sin t], [sin t, cos t]]
        for &t in &[0.01, 0.7, 3.0, 25.0] {
            let g = Mat::from_fn(2, 2, |i, j| match (i, j) {
                (0, 1) => c64::new(-t, 0.0),
                (1, 0) => c64::new(t, 0.0),
                _ => c64::new(0.0, 0.0),
            });
            let r = expm(&g);
            assert!((r[(0, 0)].re - t.cos()).abs() < 1e-12);
            assert!((r[(1, 0)].re - t.sin()).abs() < 1e-12);
            assert!((r[(0, 1)].re + t.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn nilpotent_matrix_exponential_is_exact_series() {
        // exp(N) = I + N + N^2/2 for a 3x3 strictly upper-triangular N.
        let nmat = Mat::from_fn(3, 3, |i, j| {
            if j == i + 1 {
                c64::new(2.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let e = expm(&nmat);
        assert!((e[(0, 1)].re - 2.0).abs() < 1e-12);
        assert!((e[(0, 2)].re - 2.0).abs() < 1e-12);
        assert!((e[(0, 0)].re - 1.0).abs() < 1e-12);
    }
}
