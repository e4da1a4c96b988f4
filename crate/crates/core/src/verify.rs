//! Numerical checks: the fiber integral identity relating the Christoffel
//! term to `n⁻¹⟨∇n, ξ⟩`, relative error fields, and the viscosity sweep
//! against the characteristic solution.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::discretize::{classify_boundary, GridFunction, PhaseGrid};
use crate::error::{arg, Error, Result};
use crate::field::SymmetricTensorField;
use crate::metric::{christoffel, RefractiveModel};
use crate::quadrature::{gauss_legendre, periodic_trapezoid};
use crate::solve::{assemble, solve_static, BoundaryData, SolveReport, SolverConfig};
use crate::transport::{interior_solution, Attenuation, QuadratureConfig};

/// Reading of `⟨∇n, ξ⟩` on the right-hand side of the fiber identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Convention {
    /// Metric gradient `n⁻²∇n` paired in the metric: `∇n·ξ`.
    MetricGradient,
    /// Euclidean gradient paired in the metric: `n²∇n·ξ`.
    EuclideanGradient,
}

impl Convention {
    pub const ALL: [Convention; 2] = [Convention::MetricGradient, Convention::EuclideanGradient];

    pub fn name(&self) -> &'static str {
        match self {
            Convention::MetricGradient => "metric-gradient",
            Convention::EuclideanGradient => "euclidean-gradient",
        }
    }
}

impl std::fmt::Display for Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Convention::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown convention `{s}`")))
    }
}

/// Function on the fiber sphere in the polar angles `(θ, φ)` of the direction.
pub trait FiberFunction: Sync {
    fn value(&self, theta: f64, phi: f64) -> f64;

    /// `(∂_θ u, ∂_φ u)` if known in closed form.
    fn angular_derivatives(&self, _theta: f64, _phi: f64) -> Option<(f64, f64)> {
        None
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync> FiberFunction for F {
    fn value(&self, theta: f64, phi: f64) -> f64 {
        self(theta, phi)
    }
}

/// Fiber function with closed-form angular derivatives.
pub struct Analytic<U, D> {
    pub u: U,
    pub d: D,
}

impl<U, D> FiberFunction for Analytic<U, D>
where
    U: Fn(f64, f64) -> f64 + Sync,
    D: Fn(f64, f64) -> (f64, f64) + Sync,
{
    fn value(&self, theta: f64, phi: f64) -> f64 {
        (self.u)(theta, phi)
    }

    fn angular_derivatives(&self, theta: f64, phi: f64) -> Option<(f64, f64)> {
        Some((self.d)(theta, phi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
    pub convention: Convention,
}

impl IdentityCheck {
    /// `|lhs − rhs| / (1 + |rhs|)`
    pub fn scaled_diff(&self) -> f64 {
        self.abs_diff / (1.0 + self.rhs.abs())
    }
}

const FD_ANGLE: f64 = 1e-5;

/// Evaluates both sides of
/// `−∮ Γ^k_{ij} ξ_i ξ_j ∂u/∂ξ_k · u dω = ∮ n⁻¹⟨∇n, ξ⟩ u² dω`
/// at `x` with Gauss–Legendre in `θ` and the periodic trapezoid rule in `φ`.
pub fn check_proposition1(
    model: &RefractiveModel<f64>,
    u: &dyn FiberFunction,
    x: &[f64; 3],
    n_theta: usize,
    n_phi: usize,
    convention: Convention,
) -> Result<IdentityCheck> {
    if model.dim() != 3 {
        return arg("the fiber identity is checked in three dimensions");
    }
    if n_theta < 4 || n_phi < 4 {
        return arg(format!("quadrature orders must be at least 4, got ({n_theta}, {n_phi})"));
    }
    if x.iter().map(|v| v * v).sum::<f64>() >= 1.0 {
        return arg("base point must lie strictly inside the unit ball");
    }
    let gamma = christoffel(model, x)?;
    let n = model.n(x);
    let grad = model.grad(x);
    let (thetas, wt) = gauss_legendre::<f64>(n_theta, 0.0, std::f64::consts::PI)?;
    let (phis, wp) = periodic_trapezoid::<f64>(n_phi)?;
    let rhs_scale = match convention {
        Convention::MetricGradient => 1.0 / n,
        Convention::EuclideanGradient => n,
    };
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (&th, &w_th) in thetas.iter().zip(&wt) {
        let (st, ct) = th.sin_cos();
        for &ph in &phis {
            let (sp, cp) = ph.sin_cos();
            let xi = [cp * st / n, sp * st / n, ct / n];
            let val = u.value(th, ph);
            let (du_th, du_ph) = u.angular_derivatives(th, ph).unwrap_or_else(|| {
                (
                    (u.value(th + FD_ANGLE, ph) - u.value(th - FD_ANGLE, ph)) / (2.0 * FD_ANGLE),
                    (u.value(th, ph + FD_ANGLE) - u.value(th, ph - FD_ANGLE)) / (2.0 * FD_ANGLE),
                )
            });
            let du = [
                n * (cp * ct * du_th - sp / st * du_ph),
                n * (sp * ct * du_th + cp / st * du_ph),
                -n * st * du_th,
            ];
            // −Γ^k_ij ξ_i ξ_j
            let a = gamma.contract(&xi);
            let w = w_th * wp * st;
            lhs += w * (a[0] * du[0] + a[1] * du[1] + a[2] * du[2]) * val;
            let g_xi = grad[0] * xi[0] + grad[1] * xi[1] + grad[2] * xi[2];
            rhs += w * rhs_scale * g_xi * val * val;
        }
    }
    Ok(IdentityCheck {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
        convention,
    })
}

/// Outcome of running both conventions under quadrature refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub chosen: Convention,
    /// `(convention, orders, largest scaled discrepancy over the cases)`.
    pub runs: Vec<(Convention, usize, f64)>,
}

/// Smooth fiber functions used by the calibration run.
pub fn calibration_functions() -> Vec<(&'static str, Box<dyn FiberFunction>)> {
    vec![
        (
            "linear",
            Box::new(Analytic {
                u: |t: f64, p: f64| 1.0 + 0.5 * t.sin() * p.cos() + 0.25 * t.cos(),
                d: |t: f64, p: f64| (0.5 * t.cos() * p.cos() - 0.25 * t.sin(), -0.5 * t.sin() * p.sin()),
            }),
        ),
        (
            "quadratic",
            Box::new(Analytic {
                u: |t: f64, p: f64| (t.sin() * p.sin()) * (t.sin() * p.sin()) + t.cos(),
                d: |t: f64, p: f64| {
                    let s = t.sin() * p.sin();
                    (2.0 * s * t.cos() * p.sin() - t.sin(), 2.0 * s * t.sin() * p.cos())
                },
            }),
        ),
        (
            "exponential",
            Box::new(|t: f64, p: f64| (0.7 * t.sin() * p.cos() - 0.4 * t.cos()).exp()),
        ),
    ]
}

/// Runs both conventions on the `paper4` model lifted to 3D at a few base points under
/// refinement and keeps the one whose discrepancy vanishes.
pub fn calibrate_proposition1() -> Result<Calibration> {
    let model = RefractiveModel::paper4().with_dim(3)?;
    let points = [[0.3, -0.2, 0.4], [0.0, 0.5, -0.1], [-0.45, 0.1, 0.2]];
    let funcs = calibration_functions();
    let mut runs = Vec::new();
    let mut finest = Vec::new();
    for conv in Convention::ALL {
        let mut last = f64::INFINITY;
        for order in [16usize, 32, 64] {
            let mut worst: f64 = 0.0;
            for x in &points {
                for (_, u) in &funcs {
                    worst = worst.max(check_proposition1(&model, u.as_ref(), x, order, order, conv)?.scaled_diff());
                }
            }
            runs.push((conv, order, worst));
            last = worst;
        }
        finest.push((conv, last));
    }
    let (chosen, best) = finest.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).expect("two conventions");
    if !(best <= 1e-8) {
        return Err(Error::Numerical(format!("no convention satisfies the fiber identity (best discrepancy {best:e})")));
    }
    Ok(Calibration { chosen, runs })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorNorms {
    /// Root mean square over nodes.
    pub l2: f64,
    pub linf: f64,
}

/// Pointwise `|u_num − u_ref| / max(|u_ref|, floor_cut)` and its norms.
pub fn relative_error(u_num: &GridFunction, u_ref: &GridFunction, floor_cut: f64) -> Result<(GridFunction, ErrorNorms)> {
    if u_num.shape != u_ref.shape {
        return arg(format!("grid mismatch: {:?} vs {:?}", u_num.shape, u_ref.shape));
    }
    if !(floor_cut > 0.0) {
        return arg(format!("floor_cut must be positive, got {floor_cut}"));
    }
    let values: Vec<f64> = u_num
        .values
        .iter()
        .zip(&u_ref.values)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor_cut))
        .collect();
    let len = values.len().max(1) as f64;
    let norms = ErrorNorms {
        l2: (values.iter().map(|v| v * v).sum::<f64>() / len).sqrt(),
        linf: values.iter().fold(0.0, |m, v| m.max(*v)),
    };
    Ok((
        GridFunction {
            shape: u_num.shape,
            values,
        },
        norms,
    ))
}

/// Default floor `1e-12·max|u_ref|` (smallest positive normal if `u_ref ≡ 0`).
pub fn default_floor_cut(u_ref: &GridFunction) -> f64 {
    (1e-12 * u_ref.max_abs()).max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub outcome: std::result::Result<SweepSolve, Error>,
}

#[derive(Clone, Debug)]
pub struct SweepSolve {
    pub solution: GridFunction,
    pub error: GridFunction,
    pub norms: ErrorNorms,
    pub report: SolveReport,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub reference: GridFunction,
    pub floor_cut: f64,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    /// CSV with columns `epsilon,l2_rel_err,linf_rel_err,iterations,residual,converged`.
    /// Failed solves are written with `NaN` norms.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "epsilon,l2_rel_err,linf_rel_err,iterations,residual,converged")?;
        for e in &self.entries {
            match &e.outcome {
                Ok(s) => writeln!(
                    w,
                    "{:e},{:e},{:e},{},{:e},{}",
                    e.epsilon, s.norms.l2, s.norms.linf, s.report.iterations, s.report.final_residual, s.report.converged
                )?,
                Err(_) => writeln!(w, "{:e},NaN,NaN,0,NaN,false", e.epsilon)?,
            }
        }
        Ok(())
    }

    pub fn l2_errors(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.outcome.as_ref().ok().map(|s| s.norms.l2)).collect()
    }
}

/// Characteristic solution at every node.
pub fn reference_solution(
    grid: &PhaseGrid,
    model: &RefractiveModel<f64>,
    f: &SymmetricTensorField<f64>,
    att: &Attenuation<f64>,
    q: &QuadratureConfig<f64>,
) -> Result<GridFunction> {
    let values: Result<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| interior_solution(model, f, att, 0.0, &grid.point(idx), q))
        .collect();
    GridFunction::from_values(grid, values?)
}

/// Solves the viscosity problem for each `ε` (strictly decreasing, positive)
/// with outflow data taken from the characteristic solution, and records
/// relative errors against it. A failed solve is recorded and the sweep
/// continues.
pub fn epsilon_sweep(
    model: &RefractiveModel<f64>,
    f: &SymmetricTensorField<f64>,
    att: &Attenuation<f64>,
    grid: &PhaseGrid,
    eps_list: &[f64],
    q: &QuadratureConfig<f64>,
    solver: &SolverConfig,
) -> Result<SweepResult> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return arg("epsilon list must be nonempty and positive");
    }
    if eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return arg("epsilon list must be strictly decreasing");
    }
    let reference = reference_solution(grid, model, f, att, q)?;
    let floor_cut = default_floor_cut(&reference);
    let data: BoundaryData = classify_boundary(grid, model)
        .outflow_nodes()
        .into_iter()
        .map(|i| (i, reference.values[i]))
        .collect();
    let entries = eps_list
        .iter()
        .map(|&epsilon| {
            let outcome = assemble(grid, model, f, att, epsilon, &data)
                .and_then(|sys| solve_static(&sys, solver))
                .and_then(|(solution, report)| {
                    let (error, norms) = relative_error(&solution, &reference, floor_cut)?;
                    Ok(SweepSolve {
                        solution,
                        error,
                        norms,
                        report,
                    })
                });
            SweepEntry { epsilon, outcome }
        })
        .collect();
    Ok(SweepResult {
        reference,
        floor_cut,
        entries,
    })
}
