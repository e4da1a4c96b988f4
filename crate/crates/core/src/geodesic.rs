//! Geodesics of `g = n² δ` on the unit ball: fixed-step RK4 integration of
//! the first-order system `(γ̇, −Γ(γ)γ̇γ̇)` with bisection refinement of the
//! boundary crossing.

use std::io::{self, Write};

use crate::error::{arg, Error, Result};
use crate::metric::RefractiveModel;
use crate::scalar::{axpy, dot, norm, scale, Real, Vec3};

/// A point of the unit sphere bundle: `n(x)·‖ξ‖_e = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSpacePoint<T> {
    pub x: Vec3<T>,
    pub xi: Vec3<T>,
}

impl<T: Real> PhaseSpacePoint<T> {
    /// Validates the unit-speed constraint to `1e-10` (or a few ulps for
    /// single precision).
    pub fn new(model: &RefractiveModel<T>, x: Vec3<T>, xi: Vec3<T>) -> Result<Self> {
        model.check_domain(&x)?;
        let speed = model.n(&x) * norm(&xi);
        let tol = T::lit(1e-10).max(T::epsilon() * T::lit(16.0));
        if (speed - T::one()).abs() > tol {
            return arg(format!("xi is not metric-unit: n·|xi| = {speed}"));
        }
        Ok(Self { x, xi })
    }

    /// Rescales `direction` to metric-unit length.
    pub fn unitized(model: &RefractiveModel<T>, x: Vec3<T>, direction: Vec3<T>) -> Result<Self> {
        model.check_domain(&x)?;
        let len = norm(&direction);
        if !(len > T::zero()) || !len.is_finite() {
            return arg("direction must be a nonzero finite vector");
        }
        let xi = scale((model.n(&x) * len).recip(), &direction);
        Ok(Self { x, xi })
    }

    /// Point with `x = r(cos φ, sin φ)` and `ξ = n⁻¹(x)(cos θ, sin θ)`.
    pub fn polar(model: &RefractiveModel<T>, r: T, phi: T, theta: T) -> Result<Self> {
        let x = [r * phi.cos(), r * phi.sin(), T::zero()];
        Self::unitized(model, x, [theta.cos(), theta.sin(), T::zero()])
    }

    /// `⟨ξ, x⟩_e`; on the boundary its sign is that of `⟨ξ, ν⟩`.
    pub fn normal_component(&self) -> T {
        dot(&self.xi, &self.x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig<T> {
    pub step: T,
    pub max_steps: usize,
    pub boundary_tol: T,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            step: T::lit(1e-3),
            max_steps: 1_000_000,
            boundary_tol: T::lit(1e-10).max(T::epsilon() * T::lit(8.0)),
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn with_step(step: T) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) || !(self.boundary_tol > T::zero()) {
            return arg("integrator step and boundary tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathNode<T> {
    pub tau: T,
    pub x: Vec3<T>,
    pub v: Vec3<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicPath<T> {
    pub nodes: Vec<PathNode<T>>,
    pub tau_minus: T,
    pub tau_plus: T,
    pub step: T,
}

impl<T: Real> GeodesicPath<T> {
    pub fn entry(&self) -> &PathNode<T> {
        &self.nodes[0]
    }

    pub fn exit(&self) -> &PathNode<T> {
        self.nodes.last().expect("path has at least one node")
    }

    /// CSV with columns `tau,x1,x2[,x3],v1,v2[,v3]`.
    pub fn write_csv<W: Write>(&self, dim: usize, mut w: W) -> io::Result<()> {
        let axes = &["1", "2", "3"][..dim];
        let xs: Vec<String> = axes.iter().map(|a| format!("x{a}")).collect();
        let vs: Vec<String> = axes.iter().map(|a| format!("v{a}")).collect();
        writeln!(w, "tau,{},{}", xs.join(","), vs.join(","))?;
        for n in &self.nodes {
            write!(w, "{:e}", n.tau.to_f64_lossy())?;
            for c in n.x.iter().take(dim) {
                write!(w, ",{:e}", c.to_f64_lossy())?;
            }
            for c in n.v.iter().take(dim) {
                write!(w, ",{:e}", c.to_f64_lossy())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// One classical RK4 step of the geodesic system.
#[inline]
pub fn rk4_step<T: Real>(model: &RefractiveModel<T>, x: &Vec3<T>, v: &Vec3<T>, h: T) -> (Vec3<T>, Vec3<T>) {
    let half = h * T::lit(0.5);
    let k1x = *v;
    let k1v = model.acceleration_unchecked(x, v);
    let x2 = axpy(x, half, &k1x);
    let v2 = axpy(v, half, &k1v);
    let k2v = model.acceleration_unchecked(&x2, &v2);
    let x3 = axpy(x, half, &v2);
    let v3 = axpy(v, half, &k2v);
    let k3v = model.acceleration_unchecked(&x3, &v3);
    let x4 = axpy(x, h, &v3);
    let v4 = axpy(v, h, &k3v);
    let k4v = model.acceleration_unchecked(&x4, &v4);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut xn = *x;
    let mut vn = *v;
    for i in 0..3 {
        xn[i] = x[i] + sixth * (k1x[i] + two * v2[i] + two * v3[i] + v4[i]);
        vn[i] = v[i] + sixth * (k1v[i] + two * k2v[i] + two * k3v[i] + k4v[i]);
    }
    (xn, vn)
}

fn on_boundary<T: Real>(x: &Vec3<T>) -> bool {
    (norm(x) - T::one()).abs() <= T::lit(1e-9)
}

/// Integrates forward from `(x, v)` until the boundary. Returns nodes
/// `(s, x, v)` with `s ≥ 0`, the first at `s = 0` and the last on the sphere.
fn march<T: Real>(
    model: &RefractiveModel<T>,
    x0: &Vec3<T>,
    v0: &Vec3<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<PathNode<T>>> {
    let mut nodes = vec![PathNode {
        tau: T::zero(),
        x: *x0,
        v: *v0,
    }];
    // outward or tangential start on the boundary exits immediately
    if on_boundary(x0) && dot(x0, v0) >= T::zero() {
        return Ok(nodes);
    }
    let h = cfg.step;
    let (mut x, mut v, mut s) = (*x0, *v0, T::zero());
    for _ in 0..cfg.max_steps {
        let (xn, vn) = rk4_step(model, &x, &v, h);
        if norm(&xn) < T::one() {
            s = s + h;
            x = xn;
            v = vn;
            nodes.push(PathNode { tau: s, x, v });
            continue;
        }
        // bracket [lo, hi] with ‖x(lo)‖ ≤ 1 < ‖x(hi)‖
        let (mut lo, mut hi) = (T::zero(), h);
        let (mut xb, mut vb) = (xn, vn);
        let mut sb = h;
        for _ in 0..200 {
            let mid = (lo + hi) * T::lit(0.5);
            let (xm, vm) = rk4_step(model, &x, &v, mid);
            let f = norm(&xm) - T::one();
            xb = xm;
            vb = vm;
            sb = mid;
            if f.abs() <= cfg.boundary_tol || hi - lo <= T::epsilon() * h {
                break;
            }
            if f < T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if sb > T::zero() {
            nodes.push(PathNode {
                tau: s + sb,
                x: xb,
                v: vb,
            });
        } else {
            // the previous node was already on the sphere
            let last = nodes.last_mut().expect("nonempty");
            last.x = xb;
            last.v = vb;
        }
        return Ok(nodes);
    }
    Err(Error::NonTermination {
        max_steps: cfg.max_steps,
    })
}

/// Traces the maximal geodesic through `p`, backward and forward.
pub fn trace<T: Real>(
    model: &RefractiveModel<T>,
    p: &PhaseSpacePoint<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<GeodesicPath<T>> {
    cfg.validate()?;
    model.check_domain(&p.x)?;
    if norm(&p.xi) == T::zero() {
        return arg("xi must be nonzero");
    }
    let forward = march(model, &p.x, &p.xi, cfg)?;
    let backward = march(model, &p.x, &scale(-T::one(), &p.xi), cfg)?;
    let mut nodes: Vec<PathNode<T>> = backward
        .iter()
        .rev()
        .map(|n| PathNode {
            tau: -n.tau,
            x: n.x,
            v: scale(-T::one(), &n.v),
        })
        .collect();
    nodes.extend(forward.into_iter().skip(1));
    let tau_minus = nodes[0].tau;
    let tau_plus = nodes.last().expect("nonempty").tau;
    Ok(GeodesicPath {
        nodes,
        tau_minus,
        tau_plus,
        step: cfg.step,
    })
}

/// Entry and exit parameters `(τ₋, τ₊)` of the geodesic through `p`.
pub fn tau_bounds<T: Real>(
    model: &RefractiveModel<T>,
    p: &PhaseSpacePoint<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<(T, T)> {
    cfg.validate()?;
    model.check_domain(&p.x)?;
    if norm(&p.xi) == T::zero() {
        return arg("xi must be nonzero");
    }
    let fwd = march(model, &p.x, &p.xi, cfg)?;
    let bwd = march(model, &p.x, &scale(-T::one(), &p.xi), cfg)?;
    Ok((-bwd.last().expect("nonempty").tau, fwd.last().expect("nonempty").tau))
}

/// Entry parameter `τ₋` alone; skips the forward march.
pub fn tau_minus<T: Real>(
    model: &RefractiveModel<T>,
    p: &PhaseSpacePoint<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<T> {
    cfg.validate()?;
    model.check_domain(&p.x)?;
    if norm(&p.xi) == T::zero() {
        return arg("xi must be nonzero");
    }
    let bwd = march(model, &p.x, &scale(-T::one(), &p.xi), cfg)?;
    Ok(-bwd.last().expect("nonempty").tau)
}

/// Integrates `n_steps` uniform RK4 steps covering parameter length `length`
/// from `(x, v)`. Returns `n_steps + 1` states including the start.
pub fn march_uniform<T: Real>(
    model: &RefractiveModel<T>,
    x: &Vec3<T>,
    v: &Vec3<T>,
    length: T,
    n_steps: usize,
) -> Vec<(Vec3<T>, Vec3<T>)> {
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push((*x, *v));
    if n_steps == 0 {
        return out;
    }
    let h = length / T::from_usize_lossy(n_steps);
    let (mut xc, mut vc) = (*x, *v);
    for _ in 0..n_steps {
        let (xn, vn) = rk4_step(model, &xc, &vc, h);
        xc = xn;
        vc = vn;
        out.push((xc, vc));
    }
    out
}

/// Angular momentum `n²(x)(x₁v₂ − x₂v₁)`, conserved along geodesics of
/// rotationally symmetric planar models. For metric-unit `v` it equals
/// `n·‖x‖·sin∠(v, x)`.
pub fn bouguer_invariant<T: Real>(model: &RefractiveModel<T>, x: &Vec3<T>, v: &Vec3<T>) -> T {
    let n = model.n(x);
    n * n * (x[0] * v[1] - x[1] * v[0])
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
    fn euclidean_chord_through_center() {
        let p = PhaseSpacePoint::new(&flat(), vec2(0.0, 0.0), vec2(1.0, 0.0)).unwrap();
        let path = trace(&flat(), &p, &IntegratorConfig::default()).unwrap();
        assert_relative_eq!(path.tau_minus, -1.0, epsilon = 1e-10);
        assert_relative_eq!(path.tau_plus, 1.0, epsilon = 1e-10);
        assert_relative_eq!(path.entry().x[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(path.exit().x[0], 1.0, epsilon = 1e-10);
        assert!(path.nodes.windows(2).all(|w| w[1].tau > w[0].tau));
    }

    #[test]
    fn tau_bounds_examples() {
        let cfg = IntegratorConfig::default();
        let m = flat();
        let p = PhaseSpacePoint::new(&m, vec2(0.5, 0.0), vec2(1.0, 0.0)).unwrap();
        let (a, b) = tau_bounds(&m, &p, &cfg).unwrap();
        assert_relative_eq!(a, -1.5, epsilon = 1e-10);
        assert_relative_eq!(b, 0.5, epsilon = 1e-10);

        let p4 = RefractiveModel::<f64>::paper4();
        let p = PhaseSpacePoint::unitized(&p4, vec2(0.0, 0.0), vec2(1.0, 0.0)).unwrap();
        let (a, b) = tau_bounds(&p4, &p, &cfg).unwrap();
        assert!((a + b).abs() < 1e-8);
    }

    #[test]
    fn boundary_starts() {
        let cfg = IntegratorConfig::default();
        let m = flat();
        let out = PhaseSpacePoint::new(&m, vec2(1.0, 0.0), vec2(1.0, 0.0)).unwrap();
        let (a, b) = tau_bounds(&m, &out, &cfg).unwrap();
        assert_eq!(b, 0.0);
        assert_relative_eq!(a, -2.0, epsilon = 1e-10);
        let glancing = PhaseSpacePoint::new(&m, vec2(1.0, 0.0), vec2(0.0, 1.0)).unwrap();
        assert_eq!(tau_bounds(&m, &glancing, &cfg).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn radial_geodesic_stays_on_axis() {
        let p4 = RefractiveModel::<f64>::paper4();
        let p = PhaseSpacePoint::unitized(&p4, vec2(1.0, 0.0), vec2(-1.0, 0.0)).unwrap();
        let path = trace(&p4, &p, &IntegratorConfig::default()).unwrap();
        assert!(path.nodes.iter().all(|n| n.x[1] == 0.0 && n.v[1] == 0.0));
        assert_relative_eq!(path.exit().x[0], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn unit_speed_is_conserved() {
        let p4 = RefractiveModel::<f64>::paper4();
        let p = PhaseSpacePoint::polar(&p4, 0.3, 0.4, 2.0).unwrap();
        let path = trace(&p4, &p, &IntegratorConfig::default()).unwrap();
        for n in &path.nodes {
            assert!((p4.n(&n.x) * norm(&n.v) - 1.0).abs() < 1e-7);
        }
        assert!((norm(&path.entry().x) - 1.0).abs() < 1e-9);
        assert!((norm(&path.exit().x) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trapped_budget_reports_non_termination() {
        let p4 = RefractiveModel::<f64>::paper4();
        let p = PhaseSpacePoint::polar(&p4, 0.3, 0.4, 2.0).unwrap();
        let cfg = IntegratorConfig {
            max_steps: 10,
            ..IntegratorConfig::default()
        };
        assert!(matches!(trace(&p4, &p, &cfg), Err(Error::NonTermination { max_steps: 10 })));
        assert!(trace(&p4, &PhaseSpacePoint { x: vec2(0.0, 0.0), xi: vec2(0.0, 0.0) }, &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = flat();
        let p = PhaseSpacePoint::new(&m, vec2(0.0, 0.0), vec2(1.0, 0.0)).unwrap();
        let path = trace(&m, &p, &IntegratorConfig::with_step(0.25)).unwrap();
        let mut buf = Vec::new();
        path.write_csv(2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "tau,x1,x2,v1,v2");
        assert_eq!(lines.count(), path.nodes.len());
    }

    #[test]
    fn works_in_single_precision() {
        let m = RefractiveModel::<f32>::paper4();
        let p = PhaseSpacePoint::polar(&m, 0.2f32, 0.0, 1.0).unwrap();
        let cfg = IntegratorConfig::with_step(1e-2f32);
        let path = trace(&m, &p, &cfg).unwrap();
        assert!((norm(&path.exit().x) - 1.0).abs() < 1e-5);
    }
}
