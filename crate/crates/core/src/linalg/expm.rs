//! Matrix exponential by scaling-and-squaring with diagonal Padé
//! approximants, selecting the cheapest order whose backward-error bound
//! holds and falling back to order 13 with scaling otherwise.

use super::norm1;
use nalgebra::DMatrix;

// 1-norm thresholds under which the order-m approximant has backward error
// below unit roundoff.
// The digits are copied verbatim from the published tables.
const THETA_3: f64 = 1.495585217958292e-2;
#[allow(clippy::excessive_precision)]
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
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

/// Principal matrix exponential of a square real matrix.
pub fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "matrix exponential requires a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm1(a);
    let id = DMatrix::identity(n, n);

    let (u, v) = if norm <= THETA_3 {
        let a2 = a * a;
        pade_low(a, &[&a2], &B3, &id)
    } else if norm <= THETA_5 {
        let a2 = a * a;
        let a4 = &a2 * &a2;
        pade_low(a, &[&a2, &a4], &B5, &id)
    } else if norm <= THETA_7 {
        let a2 = a * a;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        pade_low(a, &[&a2, &a4, &a6], &B7, &id)
    } else if norm <= THETA_9 {
        let a2 = a * a;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let a8 = &a6 * &a2;
        pade_low(a, &[&a2, &a4, &a6, &a8], &B9, &id)
    } else {
        // Scale so the 1-norm falls under the order-13 threshold, then square back.
        let s = ((norm / THETA_13).log2().ceil()).max(0.0) as u32;
        let a_scaled = a / 2f64.powi(s as i32);
        let a2 = &a_scaled * &a_scaled;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let (u, v) = pade13(&a_scaled, &a2, &a4, &a6, &id);
        let mut x = solve_pade(u, v);
        for _ in 0..s {
            x = &x * &x;
        }
        return x;
    };
    solve_pade(u, v)
}

// Orders 3..9: U = A * (sum of odd coefficients on even powers),
// V = sum of even coefficients on even powers.
fn pade_low(
    a: &DMatrix<f64>,
    even_powers: &[&DMatrix<f64>],
    b: &[f64],
    id: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut u_poly = id * b[1];
    let mut v = id * b[0];
    for (k, p) in even_powers.iter().enumerate() {
        u_poly += *p * b[2 * k + 3];
        v += *p * b[2 * k + 2];
    }
    let u = a * u_poly;
    debug_assert_eq!(u.nrows(), n);
    (u, v)
}

fn pade13(
    a: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    a4: &DMatrix<f64>,
    a6: &DMatrix<f64>,
    id: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let w1 = a6 * B13[13] + a4 * B13[11] + a2 * B13[9];
    let w2 = a6 * B13[7] + a4 * B13[5] + a2 * B13[3] + id * B13[1];
    let u = a * (a6 * w1 + w2);
    let z1 = a6 * B13[12] + a4 * B13[10] + a2 * B13[8];
    let v = a6 * z1 + a6 * B13[6] + a4 * B13[4] + a2 * B13[2] + id * B13[0];
    (u, v)
}

// exp(A) ~= (V - U)^{-1} (V + U)
fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let lhs = &v - &u;
    let rhs = v + u;
    lhs.lu().solve(&rhs).expect("Padé denominator must be nonsingular")
}
