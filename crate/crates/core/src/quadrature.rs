//! Gauss–Legendre and periodic trapezoid rules.

use crate::error::{arg, Result};
use crate::scalar::Real;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[a, b]`,
/// nodes ascending.
pub fn gauss_legendre<T: Real>(n: usize, a: T, b: T) -> Result<(Vec<T>, Vec<T>)> {
    if n == 0 {
        return arg("Gauss–Legendre rule needs at least one node");
    }
    let half = T::lit(0.5);
    let mid = half * (a + b);
    let rad = half * (b - a);
    let nf = T::from_usize_lossy(n);
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let k = T::from_usize_lossy(i + 1);
        let mut z = (T::PI() * (k - T::lit(0.25)) / (nf + half)).cos();
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z = z - dz;
            if dz.abs() <= T::epsilon() * T::lit(4.0) {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != T::zero() {
            dp = d;
        }
        let w = T::lit(2.0) / ((T::one() - z * z) * dp * dp);
        nodes[i] = mid - rad * z;
        nodes[n - 1 - i] = mid + rad * z;
        weights[i] = rad * w;
        weights[n - 1 - i] = rad * w;
    }
    Ok((nodes, weights))
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre<T: Real>(n: usize, z: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = z;
    for k in 2..=n {
        let kf = T::from_usize_lossy(k);
        let p2 = ((T::lit(2.0) * kf - T::one()) * z * p1 - (kf - T::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (T::one(), T::zero());
    }
    let nf = T::from_usize_lossy(n);
    (p1, nf * (z * p1 - p0) / (z * z - T::one()))
}

/// Nodes `2πj/n`, `j = 0..n`, with equal weights `2π/n`.
pub fn periodic_trapezoid<T: Real>(n: usize) -> Result<(Vec<T>, T)> {
    if n == 0 {
        return arg("trapezoid rule needs at least one node");
    }
    let h = T::TAU() / T::from_usize_lossy(n);
    Ok(((0..n).map(|j| h * T::from_usize_lossy(j)).collect(), h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 8, 17, 64] {
            let (x, w) = gauss_legendre::<f64>(n, -1.0, 1.0).unwrap();
            for deg in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn known_three_point_rule() {
        let (x, w) = gauss_legendre::<f64>(3, -1.0, 1.0).unwrap();
        let s = (0.6f64).sqrt();
        assert!((x[0] + s).abs() < 1e-15 && x[1].abs() < 1e-15 && (x[2] - s).abs() < 1e-15);
        assert!((w[0] - 5.0 / 9.0).abs() < 1e-15 && (w[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn interval_mapping_and_f32() {
        let (x, w) = gauss_legendre::<f64>(12, 0.0, std::f64::consts::PI).unwrap();
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.sin()).sum();
        assert!((s - 2.0).abs() < 1e-13);
        let (x, w) = gauss_legendre::<f32>(6, 0.0, 1.0).unwrap();
        let s: f32 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((s - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn trapezoid_is_spectral_for_trig_polynomials() {
        let (phi, h) = periodic_trapezoid::<f64>(16).unwrap();
        let s: f64 = phi.iter().map(|p| h * (3.0 * p).cos().powi(2)).sum();
        assert!((s - std::f64::consts::PI).abs() < 1e-13);
    }
}
