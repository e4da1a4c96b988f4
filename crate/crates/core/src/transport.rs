//! Attenuated ray transforms along refracted geodesics and the interior
//! characteristic solution of the transport equation.
//!
//! Every transform integrates backward from the evaluation point `(x, ξ)`:
//! the geodesic is first marched to find `τ₋`, then re-integrated on a uniform
//! node sequence that ends exactly at the entry point. The outer integral
//! `∫ f(t+τ, γ)·γ̇^m exp(−∫_τ^0 α) dτ` and the inner attenuation integral are
//! accumulated on the same nodes.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::field::SymmetricTensorField;
use crate::geodesic::{march_uniform, tau_minus, IntegratorConfig, PhaseSpacePoint};
use crate::metric::{geodesic_acceleration, RefractiveModel};
use crate::scalar::{dot, norm, scale, Real, Vec3};

type AlphaFn<T> = dyn Fn(&Vec3<T>, &Vec3<T>) -> T + Send + Sync;

/// Absorption coefficient `α(x, ξ) ≥ α₀`.
#[derive(Clone)]
pub struct Attenuation<T> {
    alpha: Arc<AlphaFn<T>>,
    alpha0: T,
    label: String,
}

impl<T: Real> std::fmt::Debug for Attenuation<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Attenuation({}, alpha0={})", self.label, self.alpha0)
    }
}

impl<T: Real> Attenuation<T> {
    pub fn constant(a: T) -> Result<Self> {
        if !(a >= T::zero()) {
            return arg(format!("attenuation must be nonnegative, got {a}"));
        }
        Ok(Self {
            alpha: Arc::new(move |_, _| a),
            alpha0: a,
            label: format!("constant:{a}"),
        })
    }

    /// Arbitrary coefficient with a certified lower bound `alpha0 ≥ 0`.
    pub fn from_fn(
        alpha0: T,
        label: impl Into<String>,
        alpha: impl Fn(&Vec3<T>, &Vec3<T>) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(alpha0 >= T::zero()) {
            return arg("attenuation lower bound must be nonnegative");
        }
        Ok(Self {
            alpha: Arc::new(alpha),
            alpha0,
            label: label.into(),
        })
    }

    /// Parses `constant:<a>` or a bare number.
    pub fn parse(spec: &str) -> Result<Self> {
        let s = spec.trim();
        let num = s.strip_prefix("constant:").unwrap_or(s);
        let a: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("attenuation spec `{spec}` is not recognized")))?;
        Self::constant(T::lit(a))
    }

    #[inline]
    pub fn eval(&self, x: &Vec3<T>, xi: &Vec3<T>) -> T {
        (self.alpha)(x, xi)
    }

    pub fn alpha0(&self) -> T {
        self.alpha0
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Midpoint,
    Simpson,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureConfig<T> {
    pub rule: Rule,
    pub step: T,
}

impl<T: Real> Default for QuadratureConfig<T> {
    fn default() -> Self {
        Self {
            rule: Rule::Simpson,
            step: T::lit(1e-3),
        }
    }
}

impl<T: Real> QuadratureConfig<T> {
    pub fn simpson(step: T) -> Self {
        Self {
            rule: Rule::Simpson,
            step,
        }
    }

    pub fn midpoint(step: T) -> Self {
        Self {
            rule: Rule::Midpoint,
            step,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) {
            return arg("quadrature step must be positive");
        }
        Ok(())
    }

    fn integrator(&self) -> IntegratorConfig<T> {
        IntegratorConfig::with_step(self.step)
    }
}

/// Classification tolerance for `⟨ξ, ν⟩` on the boundary.
pub const GLANCING_TOL: f64 = 1e-12;

fn on_sphere<T: Real>(x: &Vec3<T>) -> bool {
    (norm(x) - T::one()).abs().to_f64_lossy() <= 1e-9
}

/// `∫_{τ₋}^0 f(t+τ, γ(τ))·γ̇^m(τ) exp(−∫_τ^0 α) dτ` along the geodesic through `p`.
fn backward_integral<T: Real>(
    model: &RefractiveModel<T>,
    f: &SymmetricTensorField<T>,
    att: &Attenuation<T>,
    t: T,
    p: &PhaseSpacePoint<T>,
    q: &QuadratureConfig<T>,
) -> Result<T> {
    q.validate()?;
    let tau_minus = tau_minus(model, p, &q.integrator())?;
    let length = -tau_minus;
    if length <= T::zero() {
        return Ok(T::zero());
    }
    let back = scale(-T::one(), &p.xi);
    let intervals = (length / q.step).ceil().to_usize().unwrap_or(1).max(1);
    // backward state (y, w) at parameter s ↔ γ(−s) = y, γ̇(−s) = −w
    let integrand_parts = |s: T, y: &Vec3<T>, w: &Vec3<T>| {
        let v = scale(-T::one(), w);
        (f.moment(t - s, y, &v), att.eval(y, &v))
    };
    match q.rule {
        Rule::Simpson => {
            let n = intervals + intervals % 2;
            let h = length / T::from_usize_lossy(n);
            let states = march_uniform(model, &p.x, &back, length, n);
            let (moments, alphas): (Vec<T>, Vec<T>) = states
                .iter()
                .enumerate()
                .map(|(i, (y, w))| integrand_parts(h * T::from_usize_lossy(i), y, w))
                .unzip();
            let absorbed = cumulative_simpson(&alphas, h);
            let values: Vec<T> = moments
                .iter()
                .zip(&absorbed)
                .map(|(&u, &a)| u * (-a).exp())
                .collect();
            Ok(simpson(&values, h))
        }
        Rule::Midpoint => {
            let n = intervals;
            let h = length / T::from_usize_lossy(n);
            let half = h * T::lit(0.5);
            let states = march_uniform(model, &p.x, &back, length, 2 * n);
            let alphas: Vec<T> = states
                .iter()
                .enumerate()
                .map(|(i, (y, w))| integrand_parts(half * T::from_usize_lossy(i), y, w).1)
                .collect();
            let absorbed = cumulative_trapezoid(&alphas, half);
            let mut total = T::zero();
            for i in 0..n {
                let k = 2 * i + 1;
                let (y, w) = &states[k];
                let (u, _) = integrand_parts(half * T::from_usize_lossy(k), y, w);
                total = total + u * (-absorbed[k]).exp();
            }
            Ok(total * h)
        }
    }
}

/// Composite Simpson on an odd number of equispaced values.
fn simpson<T: Real>(values: &[T], h: T) -> T {
    let n = values.len() - 1;
    debug_assert!(n % 2 == 0);
    let mut s = values[0] + values[n];
    for (i, &v) in values.iter().enumerate().take(n).skip(1) {
        s = s + v * if i % 2 == 1 { T::lit(4.0) } else { T::lit(2.0) };
    }
    s * h / T::lit(3.0)
}

/// Running integral `∫_0^{s_i}` at every node: Simpson pairs at even nodes,
/// the three-point single-interval rule at odd nodes.
fn cumulative_simpson<T: Real>(values: &[T], h: T) -> Vec<T> {
    let n = values.len() - 1;
    let mut out = vec![T::zero(); n + 1];
    let third = h / T::lit(3.0);
    let twelfth = h / T::lit(12.0);
    let mut i = 0;
    while i + 2 <= n {
        let (f0, f1, f2) = (values[i], values[i + 1], values[i + 2]);
        out[i + 1] = out[i] + twelfth * (T::lit(5.0) * f0 + T::lit(8.0) * f1 - f2);
        out[i + 2] = out[i] + third * (f0 + T::lit(4.0) * f1 + f2);
        i += 2;
    }
    out
}

fn cumulative_trapezoid<T: Real>(values: &[T], h: T) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = T::zero();
    out.push(acc);
    for w in values.windows(2) {
        acc = acc + (w[0] + w[1]) * h * T::lit(0.5);
        out.push(acc);
    }
    out
}

fn require_outflow<T: Real>(p: &PhaseSpacePoint<T>) -> Result<bool> {
    if !on_sphere(&p.x) {
        return arg("ray transforms are evaluated at boundary points");
    }
    let c = p.normal_component();
    if c.to_f64_lossy() < -GLANCING_TOL {
        return arg("point is not an outflow boundary point");
    }
    // glancing directions carry value 0
    Ok(c.to_f64_lossy() > GLANCING_TOL)
}

/// Attenuated ray transform of a static field at an outflow boundary point.
pub fn ray_transform_static<T: Real>(
    model: &RefractiveModel<T>,
    f: &SymmetricTensorField<T>,
    att: &Attenuation<T>,
    p: &PhaseSpacePoint<T>,
    q: &QuadratureConfig<T>,
) -> Result<T> {
    if f.is_time_dependent() {
        return arg("static transform needs a time-independent field");
    }
    if !require_outflow(p)? {
        return Ok(T::zero());
    }
    backward_integral(model, f, att, T::zero(), p, q)
}

/// Dynamic transform: the field is sampled at time `t + τ` along the ray.
pub fn ray_transform_dynamic<T: Real>(
    model: &RefractiveModel<T>,
    f: &SymmetricTensorField<T>,
    att: &Attenuation<T>,
    t: T,
    p: &PhaseSpacePoint<T>,
    q: &QuadratureConfig<T>,
) -> Result<T> {
    if !require_outflow(p)? {
        return Ok(T::zero());
    }
    backward_integral(model, f, att, t, p, q)
}

/// Characteristic solution `u(t, x, ξ)` of the transport equation at any
/// point of the closed phase space. Vanishes on the inflow boundary.
pub fn interior_solution<T: Real>(
    model: &RefractiveModel<T>,
    f: &SymmetricTensorField<T>,
    att: &Attenuation<T>,
    t: T,
    p: &PhaseSpacePoint<T>,
    q: &QuadratureConfig<T>,
) -> Result<T> {
    model.check_domain(&p.x)?;
    if on_sphere(&p.x) && p.normal_component().to_f64_lossy() <= GLANCING_TOL {
        return Ok(T::zero());
    }
    backward_integral(model, f, att, t, p, q)
}

/// Rate of change of the direction angle `θ = atan2(ξ₂, ξ₁)` along the
/// geodesic flow: `(a₂ξ₁ − a₁ξ₂)/‖ξ‖²` with `a` the geodesic acceleration.
pub fn turning_rate<T: Real>(model: &RefractiveModel<T>, x: &Vec3<T>, xi: &Vec3<T>) -> T {
    let a = model.acceleration_unchecked(x, xi);
    (a[1] * xi[0] - a[0] * xi[1]) / dot(xi, xi)
}

/// `(∂_t + H + α)u − f·ξ^m` at `p` by central differences in `(t, x, θ)`.
///
/// `u` is evaluated on metric-unit phase points; `x`-derivatives are taken at
/// fixed direction angle and `H u = ξ·∇_x u + θ̇ ∂_θ u`. Planar models only.
pub fn transport_residual<T: Real, U>(
    model: &RefractiveModel<T>,
    f: &SymmetricTensorField<T>,
    att: &Attenuation<T>,
    u: U,
    t: T,
    p: &PhaseSpacePoint<T>,
    fd_step: T,
) -> Result<T>
where
    U: Fn(T, &PhaseSpacePoint<T>) -> Result<T>,
{
    if model.dim() != 2 {
        return arg("transport residual is implemented for planar models");
    }
    geodesic_acceleration(model, &p.x, &p.xi)?;
    let h = fd_step;
    if !(h > T::zero()) {
        return arg("fd_step must be positive");
    }
    if norm(&p.x) + h > T::one() {
        return Err(Error::Stencil([
            p.x[0].to_f64_lossy(),
            p.x[1].to_f64_lossy(),
            p.x[2].to_f64_lossy(),
        ]));
    }
    let theta = p.xi[1].atan2(p.xi[0]);
    let at = |tt: T, x: Vec3<T>, th: T| -> Result<T> {
        let q = PhaseSpacePoint::unitized(model, x, [th.cos(), th.sin(), T::zero()])?;
        u(tt, &q)
    };
    let two_h = h + h;
    let u0 = u(t, p)?;
    let dt = (at(t + h, p.x, theta)? - at(t - h, p.x, theta)?) / two_h;
    let mut grad = [T::zero(); 3];
    for (k, g) in grad.iter_mut().enumerate().take(2) {
        let mut xp = p.x;
        let mut xm = p.x;
        xp[k] = xp[k] + h;
        xm[k] = xm[k] - h;
        *g = (at(t, xp, theta)? - at(t, xm, theta)?) / two_h;
    }
    let dtheta = (at(t, p.x, theta + h)? - at(t, p.x, theta - h)?) / two_h;
    let h_u = dot(&p.xi, &grad) + turning_rate(model, &p.x, &p.xi) * dtheta;
    Ok(dt + h_u + att.eval(&p.x, &p.xi) * u0 - f.moment(t, &p.x, &p.xi))
}

/// One row of a boundary data table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryRow {
    pub t: f64,
    pub phi: f64,
    pub theta: f64,
    pub value: f64,
}

/// Dynamic transform on the boundary grid `φ_j = 2πj/n_phi`,
/// `θ_k = 2πk/n_theta` for each requested time. Inflow and glancing
/// directions are reported as 0.
pub fn boundary_table(
    model: &RefractiveModel<f64>,
    f: &SymmetricTensorField<f64>,
    att: &Attenuation<f64>,
    times: &[f64],
    n_phi: usize,
    n_theta: usize,
    q: &QuadratureConfig<f64>,
) -> Result<Vec<BoundaryRow>> {
    let tau = std::f64::consts::TAU;
    let jobs: Vec<(f64, f64, f64)> = times
        .iter()
        .flat_map(|&t| {
            (1..=n_phi).flat_map(move |j| {
                (1..=n_theta).map(move |k| (t, tau * j as f64 / n_phi as f64, tau * k as f64 / n_theta as f64))
            })
        })
        .collect();
    jobs.par_iter()
        .map(|&(t, phi, theta)| {
            let p = PhaseSpacePoint::polar(model, 1.0, phi, theta)?;
            let value = if p.normal_component() > GLANCING_TOL {
                ray_transform_dynamic(model, f, att, t, &p, q)?
            } else {
                0.0
            };
            Ok(BoundaryRow { t, phi, theta, value })
        })
        .collect()
}

pub fn write_boundary_csv<W: Write>(rows: &[BoundaryRow], mut w: W) -> io::Result<()> {
    writeln!(w, "t,phi,theta,value")?;
    for r in rows {
        writeln!(w, "{:e},{:e},{:e},{:e}", r.t, r.phi, r.theta, r.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::vec2;
    use approx::assert_relative_eq;

    fn flat() -> RefractiveModel<f64> {
        RefractiveModel::constant(2, 1.0).unwrap()
    }

    #[test]
    fn unattenuated_chord_integral() {
        let m = flat();
        let f = SymmetricTensorField::constant_vector(&[1.0, 0.0]).unwrap();
        let att = Attenuation::constant(0.0).unwrap();
        let p = PhaseSpacePoint::new(&m, vec2(1.0, 0.0), vec2(1.0, 0.0)).unwrap();
        for q in [QuadratureConfig::simpson(1e-3), QuadratureConfig::midpoint(1e-3)] {
            let v = ray_transform_static(&m, &f, &att, &p, &q).unwrap();
            assert_relative_eq!(v, 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn attenuated_chord_closed_form() {
        let m = flat();
        let f = SymmetricTensorField::constant_scalar(2, 1.0).unwrap();
        let att = Attenuation::constant(1.0).unwrap();
        let p = PhaseSpacePoint::new(&m, vec2(1.0, 0.0), vec2(1.0, 0.0)).unwrap();
        let v = ray_transform_static(&m, &f, &att, &p, &QuadratureConfig::default()).unwrap();
        assert_relative_eq!(v, 1.0 - (-2.0f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn interior_examples() {
        let m = flat();
        let f = SymmetricTensorField::constant_vector(&[1.0, 0.0]).unwrap();
        let att = Attenuation::constant(0.0).unwrap();
        let q = QuadratureConfig::default();
        let p = PhaseSpacePoint::new(&m, vec2(0.0, 0.0), vec2(1.0, 0.0)).unwrap();
        assert_relative_eq!(interior_solution(&m, &f, &att, 0.0, &p, &q).unwrap(), 1.0, epsilon = 1e-10);
        let inflow = PhaseSpacePoint::new(&m, vec2(1.0, 0.0), vec2(-1.0, 0.0)).unwrap();
        assert_eq!(interior_solution(&m, &f, &att, 0.0, &inflow, &q).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_outflow_points() {
        let m = flat();
        let f = SymmetricTensorField::constant_vector(&[1.0, 0.0]).unwrap();
        let att = Attenuation::constant(0.0).unwrap();
        let q = QuadratureConfig::default();
        let inflow = PhaseSpacePoint::new(&m, vec2(1.0, 0.0), vec2(-1.0, 0.0)).unwrap();
        assert!(ray_transform_static(&m, &f, &att, &inflow, &q).is_err());
        let interior = PhaseSpacePoint::new(&m, vec2(0.5, 0.0), vec2(1.0, 0.0)).unwrap();
        assert!(ray_transform_static(&m, &f, &att, &interior, &q).is_err());
        let glancing = PhaseSpacePoint::new(&m, vec2(1.0, 0.0), vec2(0.0, 1.0)).unwrap();
        assert_eq!(ray_transform_static(&m, &f, &att, &glancing, &q).unwrap(), 0.0);
    }

    #[test]
    fn residual_of_trivial_functions() {
        let m = RefractiveModel::<f64>::paper4();
        let zero = SymmetricTensorField::zero(2, 1).unwrap();
        let att = Attenuation::constant(1.0).unwrap();
        let p = PhaseSpacePoint::polar(&m, 0.3, 0.2, 1.0).unwrap();
        let r0 = transport_residual(&m, &zero, &att, |_, _| Ok(0.0), 0.0, &p, 1e-3).unwrap();
        assert_eq!(r0, 0.0);
        let r1 = transport_residual(&m, &zero, &att, |_, _| Ok(1.0), 0.0, &p, 1e-3).unwrap();
        assert_eq!(r1, 1.0);
        let edge = PhaseSpacePoint::polar(&m, 0.9995, 0.2, 1.0).unwrap();
        assert!(matches!(
            transport_residual(&m, &zero, &att, |_, _| Ok(1.0), 0.0, &edge, 1e-3),
            Err(Error::Stencil(_))
        ));
    }

    #[test]
    fn cumulative_rules_integrate_polynomials() {
        let h = 0.1;
        let vals: Vec<f64> = (0..=10).map(|i| (i as f64 * h).powi(2)).collect();
        let c = cumulative_simpson(&vals, h);
        for (i, ci) in c.iter().enumerate() {
            let s = i as f64 * h;
            assert_relative_eq!(*ci, s.powi(3) / 3.0, epsilon = 1e-14);
        }
        assert_relative_eq!(simpson(&vals, h), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn boundary_table_shape() {
        let m = flat();
        let f = SymmetricTensorField::constant_vector(&[1.0, 0.0]).unwrap();
        let att = Attenuation::constant(0.5).unwrap();
        let rows = boundary_table(&m, &f, &att, &[0.0, 1.0], 4, 4, &QuadratureConfig::simpson(1e-2)).unwrap();
        assert_eq!(rows.len(), 32);
        let mut buf = Vec::new();
        write_boundary_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 33);
    }
}
