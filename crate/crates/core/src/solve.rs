//! Assembly and solution of the discrete viscosity problem
//! `−εΔu + Hu + αu = f·ξ^m` with Dirichlet data on the outer ring.
//!
//! Outflow nodes are pinned to boundary data, inflow and glancing nodes to 0,
//! by replacing their rows with identity rows.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::discretize::{advection_coefficients, classify_boundary, h_stencil, laplace_stencil, BoundaryClass, GridFunction, GridShape, PhaseGrid};
use crate::error::{arg, Error, Result};
use crate::field::SymmetricTensorField;
use crate::metric::RefractiveModel;
use crate::sparse::{gmres, norm2, GmresConfig, Ilu0, SparseOperator};
use crate::transport::{ray_transform_dynamic, Attenuation, QuadratureConfig};

/// Values on outflow nodes, keyed by linear node index.
pub type BoundaryData = BTreeMap<usize, f64>;

pub type SolverConfig = GmresConfig;

/// Default iteration budget `⌈20·√N⌉` for a grid of `N` nodes.
pub fn default_max_iter(nodes: usize) -> usize {
    (20.0 * (nodes as f64).sqrt()).ceil() as usize
}

#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: SparseOperator,
    pub b: Vec<f64>,
    pub dirichlet: BTreeMap<usize, f64>,
    pub shape: GridShape,
    /// Phase-space volume `n²·r·Δr·Δφ·Δθ` per node.
    pub measure: Vec<f64>,
}

impl LinearSystem {
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.a.size()).filter(|i| !self.dirichlet.contains_key(i)).collect()
    }

    pub fn write_dump<W: Write>(&self, triplets: W, mut rhs: impl Write) -> io::Result<()> {
        self.a.write_triplets(triplets)?;
        writeln!(rhs, "row,value")?;
        for (i, v) in self.b.iter().enumerate() {
            writeln!(rhs, "{i},{v:e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub wall_time: Duration,
}

fn node_measure(grid: &PhaseGrid) -> Vec<f64> {
    let cell = grid.dr() * grid.dphi() * grid.dtheta();
    (0..grid.len())
        .map(|idx| {
            let (i, j, _) = grid.coords(idx);
            let n = grid.n_at(i, j);
            n * n * grid.r(i) * cell
        })
        .collect()
}

/// Rows of `shift·I − εΔ + H + α` on interior nodes and identity rows on the
/// outer ring.
fn operator(grid: &PhaseGrid, model: &RefractiveModel<f64>, att: &Attenuation<f64>, epsilon: f64, shift: f64) -> Result<SparseOperator> {
    let adv = advection_coefficients(grid, model);
    let rows: Vec<Vec<(usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            if grid.is_boundary(idx) {
                return vec![(idx, 1.0)];
            }
            let p = grid.point(idx);
            let mut row = h_stencil(grid, &adv[idx], idx);
            if epsilon != 0.0 {
                row.extend(laplace_stencil(grid, idx).into_iter().map(|(c, w)| (c, -epsilon * w)));
            }
            row.push((idx, att.eval(&p.x, &p.xi) + shift));
            row
        })
        .collect();
    SparseOperator::from_rows(grid.len(), rows)
}

fn source(grid: &PhaseGrid, f: &SymmetricTensorField<f64>, t: f64) -> Vec<f64> {
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let p = grid.point(idx);
            f.moment(t, &p.x, &p.xi)
        })
        .collect()
}

fn pinned_values(grid: &PhaseGrid, model: &RefractiveModel<f64>, data: &BoundaryData) -> Result<BTreeMap<usize, f64>> {
    let mask = classify_boundary(grid, model);
    for (&node, &v) in data {
        if mask.class_of(node) != Some(BoundaryClass::Outflow) {
            return Err(Error::Assembly(format!("boundary data given for node {node}, which is not an outflow node")));
        }
        if !v.is_finite() {
            return Err(Error::Assembly(format!("boundary data at node {node} is not finite")));
        }
    }
    let mut pinned = BTreeMap::new();
    for idx in (0..grid.len()).filter(|&i| grid.is_boundary(i)) {
        let value = match mask.class_of(idx) {
            Some(BoundaryClass::Outflow) => *data
                .get(&idx)
                .ok_or_else(|| Error::Assembly(format!("missing boundary data for outflow node {idx}")))?,
            _ => 0.0,
        };
        pinned.insert(idx, value);
    }
    Ok(pinned)
}

pub fn assemble(
    grid: &PhaseGrid,
    model: &RefractiveModel<f64>,
    f: &SymmetricTensorField<f64>,
    att: &Attenuation<f64>,
    epsilon: f64,
    boundary_data: &BoundaryData,
) -> Result<LinearSystem> {
    if !(epsilon >= 0.0) {
        return arg(format!("epsilon must be nonnegative, got {epsilon}"));
    }
    if f.dim() != 2 {
        return arg("the grid solver needs a planar field");
    }
    let dirichlet = pinned_values(grid, model, boundary_data)?;
    let a = operator(grid, model, att, epsilon, 0.0)?;
    let mut b = source(grid, f, 0.0);
    for (&idx, &v) in &dirichlet {
        b[idx] = v;
    }
    Ok(LinearSystem {
        a,
        b,
        dirichlet,
        shape: grid.shape(),
        measure: node_measure(grid),
    })
}

fn initial_guess(sys: &LinearSystem) -> Vec<f64> {
    let mut x = vec![0.0; sys.a.size()];
    for (&i, &v) in &sys.dirichlet {
        x[i] = v;
    }
    x
}

fn run_gmres(a: &SparseOperator, m: &Ilu0, b: &[f64], x: &mut [f64], cfg: &SolverConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let out = gmres(a, b, x, m, cfg)?;
    Ok(SolveReport {
        iterations: out.iterations,
        final_residual: out.residual,
        converged: out.converged,
        wall_time: start.elapsed(),
    })
}

/// ILU(0)-preconditioned restarted GMRES. An unconverged solve returns the
/// best iterate with `converged = false`.
pub fn solve_static(sys: &LinearSystem, cfg: &SolverConfig) -> Result<(GridFunction, SolveReport)> {
    if !(cfg.tol > 0.0) {
        return arg("tol must be positive");
    }
    let m = Ilu0::new(&sys.a)?;
    let mut x = initial_guess(sys);
    let report = run_gmres(&sys.a, &m, &sys.b, &mut x, cfg)?;
    Ok((
        GridFunction {
            shape: sys.shape,
            values: x,
        },
        report,
    ))
}

/// Outflow boundary data `I_α f` at time `t` for every outflow node.
pub fn boundary_data(
    grid: &PhaseGrid,
    model: &RefractiveModel<f64>,
    f: &SymmetricTensorField<f64>,
    att: &Attenuation<f64>,
    t: f64,
    q: &QuadratureConfig<f64>,
) -> Result<BoundaryData> {
    let nodes = classify_boundary(grid, model).outflow_nodes();
    let values: Result<Vec<(usize, f64)>> = nodes
        .par_iter()
        .map(|&idx| Ok((idx, ray_transform_dynamic(model, f, att, t, &grid.point(idx), q)?)))
        .collect();
    Ok(values?.into_iter().collect())
}

#[derive(Clone, Debug)]
pub struct DynamicSolution {
    /// `t_n = n·dt`, starting at 0.
    pub times: Vec<f64>,
    /// `u⁰ = 0` followed by one state per step.
    pub states: Vec<GridFunction>,
    pub reports: Vec<SolveReport>,
}

impl DynamicSolution {
    pub fn last(&self) -> &GridFunction {
        self.states.last().expect("at least the initial state")
    }
}

/// Number of implicit Euler steps for `(dt, t_final)`.
pub fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_final >= dt) {
        return arg(format!("need dt > 0 and t_final ≥ dt, got dt={dt}, t_final={t_final}"));
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final {
        return arg(format!("t_final={t_final} is not a multiple of dt={dt}"));
    }
    Ok(n as usize)
}

/// Implicit Euler: `(u^{n+1} − u^n)/dt + L_ε u^{n+1} = f(t_{n+1})` with
/// `boundary[n]` imposed at `t_{n+1}`. A step that fails to converge is
/// reported as an error carrying its index.
#[allow(clippy::too_many_arguments)]
pub fn solve_dynamic(
    grid: &PhaseGrid,
    model: &RefractiveModel<f64>,
    f: &SymmetricTensorField<f64>,
    att: &Attenuation<f64>,
    epsilon: f64,
    dt: f64,
    t_final: f64,
    boundary: &[BoundaryData],
    cfg: &SolverConfig,
) -> Result<DynamicSolution> {
    let steps = step_count(dt, t_final)?;
    if boundary.len() != steps {
        return arg(format!("expected boundary data for {steps} steps, got {}", boundary.len()));
    }
    if !(epsilon >= 0.0) {
        return arg(format!("epsilon must be nonnegative, got {epsilon}"));
    }
    let a = operator(grid, model, att, epsilon, 1.0 / dt)?;
    let m = Ilu0::new(&a)?;
    let mut times = vec![0.0];
    let mut states = vec![GridFunction::zeros(grid)];
    let mut reports = Vec::with_capacity(steps);
    for (n, data) in boundary.iter().enumerate() {
        let t = (n + 1) as f64 * dt;
        let wrap = |e: Error| Error::Step {
            step: n + 1,
            source: Box::new(e),
        };
        let pinned = pinned_values(grid, model, data).map_err(wrap)?;
        let prev = &states[n].values;
        let mut b: Vec<f64> = source(grid, f, t).iter().zip(prev).map(|(s, u)| s + u / dt).collect();
        let mut x = prev.clone();
        for (&i, &v) in &pinned {
            b[i] = v;
            x[i] = v;
        }
        let report = run_gmres(&a, &m, &b, &mut x, cfg).map_err(wrap)?;
        if !report.converged {
            return Err(wrap(Error::NotConverged {
                iterations: report.iterations,
                residual: report.final_residual,
            }));
        }
        times.push(t);
        states.push(GridFunction {
            shape: grid.shape(),
            values: x,
        });
        reports.push(report);
    }
    Ok(DynamicSolution { times, states, reports })
}

/// Inner product in which the symmetric part is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerProduct {
    /// Plain `ℓ²` over node values.
    Euclidean,
    /// Weighted by the phase-space volume of each node.
    Liouville,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoercivityEstimate {
    pub lambda_min: f64,
    /// Ritz residual `‖S y − λ y‖` of the reported pair.
    pub residual: f64,
    pub reliable: bool,
}

/// Symmetric part of the interior block in the chosen inner product, as a
/// plain symmetric matrix.
pub fn symmetric_interior_block(sys: &LinearSystem, inner: InnerProduct) -> SparseOperator {
    let keep = sys.interior_nodes();
    let block = sys.a.principal_block(&keep);
    let block = match inner {
        InnerProduct::Euclidean => block,
        InnerProduct::Liouville => {
            // D A D⁻¹ with D = W^{1/2}
            let d: Vec<f64> = keep.iter().map(|&i| sys.measure[i].sqrt()).collect();
            let rows = (0..block.size()).map(|r| block.row(r).map(|(c, v)| (c, d[r] * v / d[c])).collect()).collect();
            SparseOperator::from_rows(block.size(), rows).expect("scaled block")
        }
    };
    block.symmetric_part()
}

/// Smallest eigenvalue of the symmetric part of the interior block by
/// Lanczos with full reorthogonalization from `probes` random starts.
pub fn discrete_coercivity(sys: &LinearSystem, probes: usize, inner: InnerProduct, seed: u64) -> Result<CoercivityEstimate> {
    if probes == 0 {
        return arg("at least one probe is needed");
    }
    let s = symmetric_interior_block(sys, inner);
    let n = s.size();
    if n == 0 {
        return arg("system has no interior nodes");
    }
    let scale = (0..n).map(|r| s.row(r).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let steps = n.min(400);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<CoercivityEstimate> = None;
    for _ in 0..probes {
        let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nq = norm2(&q);
        q.iter_mut().for_each(|v| *v /= nq);
        let est = lanczos_min(&s, q, steps, scale)?;
        if best.is_none_or(|b| est.lambda_min < b.lambda_min) {
            best = Some(est);
        }
    }
    Ok(best.expect("probes > 0"))
}

fn lanczos_min(s: &SparseOperator, q0: Vec<f64>, steps: usize, scale: f64) -> Result<CoercivityEstimate> {
    let n = s.size();
    let mut basis: Vec<Vec<f64>> = vec![q0];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..steps {
        let mut w = s.matvec(&basis[j]);
        let a = basis[j].iter().zip(&w).map(|(x, y)| x * y).sum::<f64>();
        alpha.push(a);
        // two passes of full reorthogonalization
        for _ in 0..2 {
            for v in &basis {
                let c = v.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>();
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let b = norm2(&w);
        if !b.is_finite() {
            return Err(Error::Numerical("non-finite Lanczos vector".into()));
        }
        if b <= 1e-12 * scale || j + 1 == steps {
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (pos, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty tridiagonal");
    let coeffs = eig.eigenvectors.column(pos);
    let mut y = vec![0.0; n];
    for (c, v) in coeffs.iter().zip(&basis) {
        y.iter_mut().zip(v).for_each(|(yi, vi)| *yi += c * vi);
    }
    let sy = s.matvec(&y);
    let residual = norm2(&sy.iter().zip(&y).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
    Ok(CoercivityEstimate {
        lambda_min: lambda,
        residual,
        reliable: residual <= 1e-6 * scale,
    })
}
