//! Refractive-index models and the pointwise geometry of the conformal metric
//! `g = n² δ`.
//!
//! A model is an analytic profile whose value, gradient and Hessian are
//! evaluated together, so the integrator and the finite-difference assembly
//! can query derivatives at arbitrary points.

use std::fmt;
use std::str::FromStr;

use crate::error::{arg, Error, Result};
use crate::scalar::{dot, norm, scale, sub, zero3, Real, Vec3};

/// Points farther than this outside the unit sphere are rejected.
pub const DOMAIN_SLACK: f64 = 1e-9;

/// Analytic refractive-index profiles.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile<T> {
    /// `n(x) = n0`
    Constant(T),
    /// `n(x) = Σ_k c_k ‖x‖^{2k}`
    Radial(Vec<T>),
    /// `n(x) = a + b·x`
    Affine { a: T, b: Vec3<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefractiveModel<T> {
    dim: usize,
    profile: Profile<T>,
    floor: T,
}

impl<T: Real> RefractiveModel<T> {
    pub fn constant(dim: usize, n0: T) -> Result<Self> {
        Self::new(dim, Profile::Constant(n0), n0)
    }

    /// `n(x) = x₁² + x₂² + 1.5` on the unit disk.
    pub fn paper4() -> Self {
        Self::radial(2, vec![T::lit(1.5), T::one()]).expect("valid built-in model")
    }

    /// Radial polynomial in `r²`. The floor is the certified bound
    /// `c₀ + Σ_{k≥1} min(c_k, 0)` which holds for `r ≤ 1`.
    pub fn radial(dim: usize, coeffs: Vec<T>) -> Result<Self> {
        if coeffs.is_empty() {
            return arg("radial model needs at least one coefficient");
        }
        let floor = coeffs
            .iter()
            .skip(1)
            .fold(coeffs[0], |acc, &c| acc + c.min(T::zero()));
        Self::new(dim, Profile::Radial(coeffs), floor)
    }

    /// Affine profile; the dimension is the number of slope components.
    pub fn affine(a: T, slope: &[T]) -> Result<Self> {
        let dim = slope.len();
        if !(2..=3).contains(&dim) {
            return arg(format!("affine model needs 2 or 3 slope components, got {dim}"));
        }
        let mut b = zero3();
        b[..dim].copy_from_slice(slope);
        let floor = a - norm(&b);
        Self::new(dim, Profile::Affine { a, b }, floor)
    }

    fn new(dim: usize, profile: Profile<T>, floor: T) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return arg(format!("dimension must be 2 or 3, got {dim}"));
        }
        if !(floor > T::zero()) {
            return arg(format!("refractive index floor must be positive, got {floor}"));
        }
        Ok(Self { dim, profile, floor })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self) -> &Profile<T> {
        &self.profile
    }

    /// Certified lower bound of `n` on the closed unit ball.
    pub fn floor(&self) -> T {
        self.floor
    }

    /// Same profile read in another dimension. Affine slopes are truncated
    /// or padded with zero.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        let mut profile = self.profile.clone();
        if let Profile::Affine { b, .. } = &mut profile {
            if dim == 2 {
                b[2] = T::zero();
            }
        }
        let floor = match &profile {
            Profile::Affine { a, b } => *a - norm(b),
            _ => self.floor,
        };
        Self::new(dim, profile, floor)
    }

    /// Cast to another scalar type.
    pub fn cast<S: Real>(&self) -> RefractiveModel<S> {
        let c = |v: T| S::lit(v.to_f64_lossy());
        let profile = match &self.profile {
            Profile::Constant(n0) => Profile::Constant(c(*n0)),
            Profile::Radial(cs) => Profile::Radial(cs.iter().map(|&v| c(v)).collect()),
            Profile::Affine { a, b } => Profile::Affine {
                a: c(*a),
                b: [c(b[0]), c(b[1]), c(b[2])],
            },
        };
        RefractiveModel {
            dim: self.dim,
            profile,
            floor: c(self.floor),
        }
    }

    fn r2(&self, x: &Vec3<T>) -> T {
        let mut s = x[0] * x[0] + x[1] * x[1];
        if self.dim == 3 {
            s = s + x[2] * x[2];
        }
        s
    }

    fn masked(&self, x: &Vec3<T>) -> Vec3<T> {
        let mut y = *x;
        if self.dim == 2 {
            y[2] = T::zero();
        }
        y
    }

    /// Returns `(p(s), p'(s), p''(s))` for the radial polynomial at `s = r²`.
    fn radial_poly(coeffs: &[T], s: T) -> (T, T, T) {
        let (mut p, mut dp, mut ddp) = (T::zero(), T::zero(), T::zero());
        for &c in coeffs.iter().rev() {
            ddp = ddp * s + dp * T::lit(2.0);
            dp = dp * s + p;
            p = p * s + c;
        }
        (p, dp, ddp)
    }

    /// Refractive index.
    pub fn n(&self, x: &Vec3<T>) -> T {
        match &self.profile {
            Profile::Constant(n0) => *n0,
            Profile::Radial(cs) => Self::radial_poly(cs, self.r2(x)).0,
            Profile::Affine { a, b } => *a + dot(b, &self.masked(x)),
        }
    }

    /// Euclidean gradient of `n`.
    pub fn grad(&self, x: &Vec3<T>) -> Vec3<T> {
        match &self.profile {
            Profile::Constant(_) => zero3(),
            Profile::Radial(cs) => {
                let (_, dp, _) = Self::radial_poly(cs, self.r2(x));
                scale(T::lit(2.0) * dp, &self.masked(x))
            }
            Profile::Affine { b, .. } => *b,
        }
    }

    /// Hessian of `n`.
    pub fn hessian(&self, x: &Vec3<T>) -> [[T; 3]; 3] {
        let mut h = [[T::zero(); 3]; 3];
        if let Profile::Radial(cs) = &self.profile {
            let (_, dp, ddp) = Self::radial_poly(cs, self.r2(x));
            let y = self.masked(x);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[i][j] = T::lit(4.0) * ddp * y[i] * y[j];
                }
                h[i][i] = h[i][i] + T::lit(2.0) * dp;
            }
        }
        h
    }

    /// Errors unless `x` lies in the closed unit ball (with a `1e-9` slack).
    pub fn check_domain(&self, x: &Vec3<T>) -> Result<()> {
        let r = self.r2(x).sqrt();
        if r.to_f64_lossy() > 1.0 + DOMAIN_SLACK || !r.is_finite() {
            return Err(Error::Domain([
                x[0].to_f64_lossy(),
                x[1].to_f64_lossy(),
                x[2].to_f64_lossy(),
            ]));
        }
        Ok(())
    }

    /// Geodesic acceleration without a domain check, closed form
    /// `n⁻¹(∂_k n ‖v‖²_e − 2 v_k ∇n·v)`.
    #[inline]
    pub(crate) fn acceleration_unchecked(&self, x: &Vec3<T>, v: &Vec3<T>) -> Vec3<T> {
        let n = self.n(x);
        let g = self.grad(x);
        let vv = dot(v, v);
        let gv = dot(&g, v);
        let two = T::lit(2.0);
        let inv = n.recip();
        [
            inv * (g[0] * vv - two * v[0] * gv),
            inv * (g[1] * vv - two * v[1] * gv),
            inv * (g[2] * vv - two * v[2] * gv),
        ]
    }
}

impl<T: Real> fmt::Display for RefractiveModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |vs: &[T]| {
            vs.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        match &self.profile {
            Profile::Radial(cs)
                if self.dim == 2 && cs.len() == 2 && cs[0] == T::lit(1.5) && cs[1] == T::one() =>
            {
                write!(f, "paper4")
            }
            Profile::Constant(n0) if self.dim == 2 => write!(f, "constant:{n0}"),
            Profile::Constant(n0) => write!(f, "constant3:{n0}"),
            Profile::Radial(cs) if self.dim == 2 => write!(f, "radial:{}", join(cs)),
            Profile::Radial(cs) => write!(f, "radial3:{}", join(cs)),
            Profile::Affine { a, b } => write!(f, "affine:{a},{}", join(&b[..self.dim])),
        }
    }
}

/// Parses `paper4`, `constant:<n0>`, `radial:<c0,c1,...>` and
/// `affine:<a,b1,b2[,b3]>`. The `constant3:` and `radial3:` forms select the
/// three-dimensional ball.
impl<T: Real> FromStr for RefractiveModel<T> {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let bad = || Error::ModelSpec(spec.to_string());
        let spec_t = spec.trim();
        if spec_t == "paper4" {
            return Ok(Self::paper4());
        }
        let (kind, rest) = spec_t.split_once(':').ok_or_else(bad)?;
        let nums = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>().map(T::lit))
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|_| bad())?;
        let model = match kind.trim() {
            "constant" | "constant3" if nums.len() == 1 => {
                Self::constant(if kind.ends_with('3') { 3 } else { 2 }, nums[0])
            }
            "radial" => Self::radial(2, nums),
            "radial3" => Self::radial(3, nums),
            "affine" if nums.len() >= 3 => Self::affine(nums[0], &nums[1..]),
            _ => return Err(bad()),
        };
        model.map_err(|e| Error::ModelSpec(format!("{spec}: {e}")))
    }
}

/// Named analytic models shipped with the crate.
pub fn registry<T: Real>() -> Vec<(&'static str, RefractiveModel<T>)> {
    vec![
        ("constant", RefractiveModel::constant(2, T::one()).unwrap()),
        ("paper4", RefractiveModel::paper4()),
        (
            "radial",
            RefractiveModel::radial(2, vec![T::lit(2.0), T::lit(-0.5), T::lit(0.25)]).unwrap(),
        ),
        ("affine", RefractiveModel::affine(T::lit(2.0), &[T::one(), T::zero()]).unwrap()),
    ]
}

/// `g(u, v) = n²(x) u·v`.
pub fn metric_inner<T: Real>(
    model: &RefractiveModel<T>,
    x: &Vec3<T>,
    u: &Vec3<T>,
    v: &Vec3<T>,
) -> Result<T> {
    model.check_domain(x)?;
    let n = model.n(x);
    Ok(n * n * dot(u, v))
}

pub fn metric_norm<T: Real>(model: &RefractiveModel<T>, x: &Vec3<T>, u: &Vec3<T>) -> Result<T> {
    metric_inner(model, x, u, u).map(|s| s.sqrt())
}

/// Christoffel symbols of the second kind, stored as `[k][i][j]` for `Γ^k_{ij}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Christoffel<T> {
    pub dim: usize,
    pub gamma: [[[T; 3]; 3]; 3],
}

impl<T: Real> Christoffel<T> {
    pub fn get(&self, k: usize, i: usize, j: usize) -> T {
        self.gamma[k][i][j]
    }

    /// `-Γ^k_{ij} v_i v_j`
    pub fn contract(&self, v: &Vec3<T>) -> Vec3<T> {
        let mut out = zero3();
        for (k, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut s = T::zero();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    s = s + self.gamma[k][i][j] * v[i] * v[j];
                }
            }
            *o = -s;
        }
        out
    }
}

pub fn christoffel<T: Real>(model: &RefractiveModel<T>, x: &Vec3<T>) -> Result<Christoffel<T>> {
    model.check_domain(x)?;
    let d = model.dim();
    let inv = model.n(x).recip();
    let g = model.grad(x);
    let mut gamma = [[[T::zero(); 3]; 3]; 3];
    let delta = |a: usize, b: usize| if a == b { T::one() } else { T::zero() };
    for (k, gk) in gamma.iter_mut().enumerate().take(d) {
        for i in 0..d {
            for j in 0..d {
                gk[i][j] = inv * (g[j] * delta(i, k) + g[i] * delta(j, k) - g[k] * delta(i, j));
            }
        }
    }
    Ok(Christoffel { dim: d, gamma })
}

/// `-Γ^k_{ij}(x) v_i v_j`, evaluated through the closed form.
pub fn geodesic_acceleration<T: Real>(
    model: &RefractiveModel<T>,
    x: &Vec3<T>,
    v: &Vec3<T>,
) -> Result<Vec3<T>> {
    model.check_domain(x)?;
    Ok(model.acceleration_unchecked(x, v))
}

/// Sampling of the closed unit ball used for the coercivity sup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampling {
    pub radial: usize,
    pub angular: usize,
    /// Rounds of local grid refinement around the best sample.
    pub refine: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            radial: 200,
            angular: 96,
            refine: 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoercivityReport<T> {
    /// `sup ‖∇n‖_e / n²`: metric norm of the metric gradient, over `n`.
    pub sup_riemannian: T,
    /// `sup ‖∇n‖_e / n`
    pub sup_euclidean: T,
    pub alpha0: T,
    /// Decided on the Riemannian reading.
    pub satisfied: bool,
}

impl<T: Real> CoercivityReport<T> {
    pub fn satisfied_euclidean(&self) -> bool {
        self.sup_euclidean < self.alpha0
    }
}

fn ball_point<T: Real>(dim: usize, r: f64, a: f64, b: f64) -> Vec3<T> {
    if dim == 2 {
        [T::lit(r * a.cos()), T::lit(r * a.sin()), T::zero()]
    } else {
        [
            T::lit(r * b.sin() * a.cos()),
            T::lit(r * b.sin() * a.sin()),
            T::lit(r * b.cos()),
        ]
    }
}

/// Maximizes `ratio` over the ball on a polar (2D) or spherical (3D) grid,
/// then shrinks a local box around the best sample `refine` times.
fn sup_over_ball<T: Real>(dim: usize, s: &Sampling, ratio: impl Fn(&Vec3<T>) -> f64) -> f64 {
    let nr = s.radial.max(2);
    let na = s.angular.max(4);
    let nb = if dim == 3 { (na / 2).max(2) } else { 1 };
    let two_pi = std::f64::consts::TAU;
    let pi = std::f64::consts::PI;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for ir in 0..=nr {
        let r = ir as f64 / nr as f64;
        for ia in 0..na {
            let a = two_pi * ia as f64 / na as f64;
            for ib in 0..=nb {
                let b = if dim == 3 { pi * ib as f64 / nb as f64 } else { pi / 2.0 };
                let val = ratio(&ball_point(dim, r, a, b));
                if val > best.0 {
                    best = (val, r, a, b);
                }
                if dim == 2 {
                    break;
                }
            }
        }
    }
    let (mut dr, mut da, mut db) = (1.0 / nr as f64, two_pi / na as f64, pi / nb as f64);
    for _ in 0..s.refine {
        let (_, r0, a0, b0) = best;
        for ir in -4i32..=4 {
            let r = (r0 + dr * ir as f64 / 4.0).clamp(0.0, 1.0);
            for ia in -4i32..=4 {
                let a = a0 + da * ia as f64 / 4.0;
                for ib in -4i32..=4 {
                    let b = (b0 + db * ib as f64 / 4.0).clamp(0.0, pi);
                    let val = ratio(&ball_point(dim, r, a, b));
                    if val > best.0 {
                        best = (val, r, a, b);
                    }
                    if dim == 2 {
                        break;
                    }
                }
            }
        }
        dr /= 4.0;
        da /= 4.0;
        db /= 4.0;
    }
    best.0
}

/// Evaluates the smallness condition `sup ‖∇n‖/n < α₀` under both norm readings.
pub fn coercivity_margin<T: Real>(
    model: &RefractiveModel<T>,
    alpha0: T,
    samples: &Sampling,
) -> Result<CoercivityReport<T>> {
    if !(alpha0 > T::zero()) {
        return arg(format!("alpha0 must be positive, got {alpha0}"));
    }
    let riem = sup_over_ball(model.dim(), samples, |x: &Vec3<T>| {
        let n = model.n(x).to_f64_lossy();
        norm(&model.grad(x)).to_f64_lossy() / (n * n)
    });
    let eucl = sup_over_ball(model.dim(), samples, |x: &Vec3<T>| {
        norm(&model.grad(x)).to_f64_lossy() / model.n(x).to_f64_lossy()
    });
    let sup_riemannian = T::lit(riem);
    Ok(CoercivityReport {
        sup_riemannian,
        sup_euclidean: T::lit(eucl),
        alpha0,
        satisfied: sup_riemannian < alpha0,
    })
}

/// Christoffel symbols from the general definition
/// `½ g^{kp}(∂_j g_{ip} + ∂_i g_{jp} − ∂_p g_{ij})`, with metric derivatives
/// by central differences. Used as an independent check.
pub fn christoffel_from_metric_fd(model: &RefractiveModel<f64>, x: &Vec3<f64>, h: f64) -> [[[f64; 3]; 3]; 3] {
    let d = model.dim();
    let g = |y: &Vec3<f64>| {
        let n = model.n(y);
        n * n
    };
    let mut dg = [0.0; 3];
    for (p, slot) in dg.iter_mut().enumerate().take(d) {
        let mut e = zero3();
        e[p] = h;
        *slot = (g(&crate::scalar::add(x, &e)) - g(&sub(x, &e))) / (2.0 * h);
    }
    let ginv = 1.0 / g(x);
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut out = [[[0.0; 3]; 3]; 3];
    for (k, ok) in out.iter_mut().enumerate().take(d) {
        for i in 0..d {
            for j in 0..d {
                // g_{ab} = φ δ_ab, so ∂_c g_{ab} = ∂_c φ δ_ab and g^{kp} = δ_kp / φ
                let p = k;
                ok[i][j] = 0.5 * ginv * (dg[j] * delta(i, p) + dg[i] * delta(j, p) - dg[p] * delta(i, j));
            }
        }
    }
    out
}
