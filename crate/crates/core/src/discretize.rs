//! Polar phase-space grid of the unit disk and finite-difference operators
//! for the geodesic vector field `H` and the Laplace–Beltrami operator
//! `Δ = Δ_x + Δ_ξ`.
//!
//! Nodes are `x_ij = r_i(cos φ_j, sin φ_j)` and `ξ_ijk = n⁻¹(x_ij)(cos θ_k, sin θ_k)`
//! with `r_i = i/I`, `φ_j = 2πj/J`, `θ_k = 2πk/K` for `i, j, k ≥ 1`. In code
//! the indices are zero-based (`i = 0` is the innermost ring `r = 1/I`);
//! exported tables use the one-based numbering.
//!
//! `H` is discretized with first-order upwind differences driven by the
//! reduced characteristic velocity `(ṙ, φ̇, θ̇)`; `Δ` with second-order central
//! differences in polar form. No node sits on the pole: the inner ring uses
//! the antipodal value `u(r₁, φ + π, θ)` as its radial neighbor across the
//! center, at distance `2r₁`.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{arg, Error, Result};
use crate::geodesic::PhaseSpacePoint;
use crate::metric::RefractiveModel;
use crate::transport::{turning_rate, GLANCING_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub ni: usize,
    pub nj: usize,
    pub nk: usize,
}

impl GridShape {
    pub fn len(&self) -> usize {
        self.ni * self.nj * self.nk
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct PhaseGrid {
    shape: GridShape,
    r: Vec<f64>,
    phi: Vec<f64>,
    theta: Vec<f64>,
    /// `n(x_ij)` and `∇n(x_ij)` per spatial node, indexed `i * J + j`.
    n: Vec<f64>,
    grad_n: Vec<[f64; 3]>,
}

pub fn build_grid(model: &RefractiveModel<f64>, ni: usize, nj: usize, nk: usize) -> Result<PhaseGrid> {
    if ni < 3 || nj < 3 || nk < 3 {
        return arg(format!("grid sizes must be at least 3, got ({ni}, {nj}, {nk})"));
    }
    if model.dim() != 2 {
        return arg("phase-space grids are planar; use a two-dimensional model");
    }
    let r: Vec<f64> = (1..=ni).map(|i| i as f64 / ni as f64).collect();
    let phi: Vec<f64> = (1..=nj).map(|j| TAU * j as f64 / nj as f64).collect();
    let theta: Vec<f64> = (1..=nk).map(|k| TAU * k as f64 / nk as f64).collect();
    let mut n = Vec::with_capacity(ni * nj);
    let mut grad_n = Vec::with_capacity(ni * nj);
    for &ri in &r {
        for &pj in &phi {
            let x = [ri * pj.cos(), ri * pj.sin(), 0.0];
            n.push(model.n(&x));
            grad_n.push(model.grad(&x));
        }
    }
    Ok(PhaseGrid {
        shape: GridShape { ni, nj, nk },
        r,
        phi,
        theta,
        n,
        grad_n,
    })
}

impl PhaseGrid {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    /// Linear index, `k` fastest, then `j`, then `i`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape.nj + j) * self.shape.nk + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.shape.nk;
        let rest = idx / self.shape.nk;
        (rest / self.shape.nj, rest % self.shape.nj, k)
    }

    pub fn r(&self, i: usize) -> f64 {
        self.r[i]
    }

    pub fn phi(&self, j: usize) -> f64 {
        self.phi[j]
    }

    pub fn theta(&self, k: usize) -> f64 {
        self.theta[k]
    }

    pub fn dr(&self) -> f64 {
        1.0 / self.shape.ni as f64
    }

    pub fn dphi(&self) -> f64 {
        TAU / self.shape.nj as f64
    }

    pub fn dtheta(&self) -> f64 {
        TAU / self.shape.nk as f64
    }

    pub fn x(&self, i: usize, j: usize) -> [f64; 3] {
        [self.r[i] * self.phi[j].cos(), self.r[i] * self.phi[j].sin(), 0.0]
    }

    pub fn n_at(&self, i: usize, j: usize) -> f64 {
        self.n[i * self.shape.nj + j]
    }

    pub fn xi(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = 1.0 / self.n_at(i, j);
        [s * self.theta[k].cos(), s * self.theta[k].sin(), 0.0]
    }

    pub fn point(&self, idx: usize) -> PhaseSpacePoint<f64> {
        let (i, j, k) = self.coords(idx);
        PhaseSpacePoint {
            x: self.x(i, j),
            xi: self.xi(i, j, k),
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.coords(idx).0 == self.shape.ni - 1
    }

    /// Evaluates `u(x, ξ)` at every node.
    pub fn sample(&self, mut u: impl FnMut(&PhaseSpacePoint<f64>) -> f64) -> GridFunction {
        let values = (0..self.len()).map(|idx| u(&self.point(idx))).collect();
        GridFunction {
            shape: self.shape,
            values,
        }
    }

    /// Evaluates `u(r, φ, θ)` at every node.
    pub fn sample_polar(&self, u: impl Fn(f64, f64, f64) -> f64) -> GridFunction {
        let values = (0..self.len())
            .map(|idx| {
                let (i, j, k) = self.coords(idx);
                u(self.r[i], self.phi[j], self.theta[k])
            })
            .collect();
        GridFunction {
            shape: self.shape,
            values,
        }
    }
}

/// Scalar values, one per grid node, in linear index order.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self {
            shape: grid.shape(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &PhaseGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return arg(format!("expected {} values, got {}", grid.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("grid function has non-finite values".into()));
        }
        Ok(Self {
            shape: grid.shape(),
            values,
        })
    }

    pub fn check_grid(&self, grid: &PhaseGrid) -> Result<()> {
        if self.shape != grid.shape() {
            return arg(format!(
                "grid function shape {:?} does not match grid {:?}",
                self.shape,
                grid.shape()
            ));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with header `i,j,k,r,phi,theta,value`, one-based indices.
    pub fn write_csv<W: Write>(&self, grid: &PhaseGrid, mut w: W) -> io::Result<()> {
        writeln!(w, "i,j,k,r,phi,theta,value")?;
        for (idx, v) in self.values.iter().enumerate() {
            let (i, j, k) = grid.coords(idx);
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{:e}",
                i + 1,
                j + 1,
                k + 1,
                grid.r(i),
                grid.phi(j),
                grid.theta(k),
                v
            )?;
        }
        Ok(())
    }

    /// Binary PGM of the `(i, j)` slice at direction index `k` (rows are
    /// rings, columns are angles). Values map linearly from `[min, max]` to
    /// `[0, 255]`; returns `(min, max)`.
    pub fn write_pgm_slice<W: Write>(&self, k: usize, mut w: W) -> io::Result<(f64, f64)> {
        let GridShape { ni, nj, nk } = self.shape;
        let slice: Vec<f64> = (0..ni)
            .flat_map(|i| (0..nj).map(move |j| (i * nj + j) * nk + k))
            .map(|idx| self.values[idx])
            .collect();
        let lo = slice.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        write!(w, "P5\n{nj} {ni}\n255\n")?;
        let bytes: Vec<u8> = slice
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        w.write_all(&bytes)?;
        Ok((lo, hi))
    }

    /// Writes `<stem>_k<k>.pgm` plus `<stem>_k<k>.range.txt` for every direction slice.
    pub fn export_heatmaps(&self, dir: &Path, stem: &str) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for k in 0..self.shape.nk {
            let name = format!("{stem}_k{:02}", k + 1);
            let mut buf = Vec::new();
            let (lo, hi) = self.write_pgm_slice(k, &mut buf)?;
            fs::write(dir.join(format!("{name}.pgm")), buf)?;
            fs::write(
                dir.join(format!("{name}.range.txt")),
                format!("min={lo:e}\nmax={hi:e}\n"),
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryClass {
    /// `⟨ξ, ν⟩ < 0`
    Inflow,
    /// `⟨ξ, ν⟩ > 0`
    Outflow,
    Glancing,
}

/// Classes of the outer-ring nodes, indexed `j * K + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMask {
    shape: GridShape,
    classes: Vec<BoundaryClass>,
}

impl BoundaryMask {
    pub fn class(&self, j: usize, k: usize) -> BoundaryClass {
        self.classes[j * self.shape.nk + k]
    }

    /// Class of a node by linear index, `None` for interior nodes.
    pub fn class_of(&self, idx: usize) -> Option<BoundaryClass> {
        let per_ring = self.shape.nj * self.shape.nk;
        let ring = idx / per_ring;
        (ring == self.shape.ni - 1).then(|| self.classes[idx % per_ring])
    }

    pub fn count(&self, class: BoundaryClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    /// Linear indices of the outflow nodes.
    pub fn outflow_nodes(&self) -> Vec<usize> {
        let base = (self.shape.ni - 1) * self.shape.nj * self.shape.nk;
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == BoundaryClass::Outflow)
            .map(|(m, _)| base + m)
            .collect()
    }
}

pub fn classify_boundary(grid: &PhaseGrid, _model: &RefractiveModel<f64>) -> BoundaryMask {
    let GridShape { ni, nj, nk } = grid.shape();
    let i = ni - 1;
    let mut classes = Vec::with_capacity(nj * nk);
    for j in 0..nj {
        let x = grid.x(i, j);
        for k in 0..nk {
            let xi = grid.xi(i, j, k);
            // ν = x on the unit circle; euclidean and metric pairings share a sign
            let c = xi[0] * x[0] + xi[1] * x[1];
            classes.push(if c > GLANCING_TOL {
                BoundaryClass::Outflow
            } else if c < -GLANCING_TOL {
                BoundaryClass::Inflow
            } else {
                BoundaryClass::Glancing
            });
        }
    }
    BoundaryMask {
        shape: grid.shape(),
        classes,
    }
}

/// Characteristic velocity `(ṙ, φ̇, θ̇)` of the reduced geodesic flow at a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Advection {
    pub r_dot: f64,
    pub phi_dot: f64,
    pub theta_dot: f64,
}

pub fn advection_coefficients(grid: &PhaseGrid, model: &RefractiveModel<f64>) -> Vec<Advection> {
    (0..grid.len())
        .map(|idx| {
            let (i, j, k) = grid.coords(idx);
            let x = grid.x(i, j);
            let xi = grid.xi(i, j, k);
            let (c, s) = (grid.phi(j).cos(), grid.phi(j).sin());
            Advection {
                r_dot: xi[0] * c + xi[1] * s,
                phi_dot: (-xi[0] * s + xi[1] * c) / grid.r(i),
                theta_dot: turning_rate(model, &x, &xi),
            }
        })
        .collect()
}

/// Sparse row: `(column, weight)` pairs, possibly with repeated columns.
pub type Stencil = Vec<(usize, f64)>;

/// Row combining `a·(value at lower) + b·(value at upper)` in the radial
/// direction; lower neighbors of the inner ring resolve to the antipodal
/// ghost, interpolated in φ when `J` is odd.
fn push_radial(grid: &PhaseGrid, row: &mut Stencil, i: usize, j: usize, k: usize, lower: bool, w: f64) {
    if lower && i == 0 {
        let nj = grid.shape.nj;
        let a = j as f64 + nj as f64 / 2.0;
        let j0 = a.floor();
        let frac = a - j0;
        let j0 = (j0 as usize) % nj;
        row.push((grid.index(0, j0, k), w * (1.0 - frac)));
        if frac > 0.0 {
            row.push((grid.index(0, (j0 + 1) % nj, k), w * frac));
        }
    } else {
        let ii = if lower { i - 1 } else { i + 1 };
        row.push((grid.index(ii, j, k), w));
    }
}

/// Radial spacings `(h₋, h₊)` at ring `i`; the inner ring reaches across the pole.
fn radial_spacings(grid: &PhaseGrid, i: usize) -> (f64, f64) {
    let dr = grid.dr();
    if i == 0 {
        (2.0 * grid.r(0), dr)
    } else {
        (dr, dr)
    }
}

/// First-order upwind row of `H` at node `idx`.
pub fn h_stencil(grid: &PhaseGrid, adv: &Advection, idx: usize) -> Stencil {
    let GridShape { ni, nj, nk } = grid.shape();
    let (i, j, k) = grid.coords(idx);
    let mut row: Stencil = Vec::with_capacity(8);
    // radial
    let (hm, hp) = radial_spacings(grid, i);
    if i == ni - 1 || adv.r_dot > 0.0 {
        let h = if i == ni - 1 { grid.dr() } else { hm };
        let c = adv.r_dot / h;
        if c != 0.0 {
            row.push((idx, c));
            push_radial(grid, &mut row, i, j, k, true, -c);
        }
    } else if adv.r_dot < 0.0 {
        let c = adv.r_dot / hp;
        push_radial(grid, &mut row, i, j, k, false, c);
        row.push((idx, -c));
    }
    // angular, periodic
    let c = adv.phi_dot / grid.dphi();
    if c > 0.0 {
        row.push((idx, c));
        row.push((grid.index(i, (j + nj - 1) % nj, k), -c));
    } else if c < 0.0 {
        row.push((grid.index(i, (j + 1) % nj, k), c));
        row.push((idx, -c));
    }
    let c = adv.theta_dot / grid.dtheta();
    if c > 0.0 {
        row.push((idx, c));
        row.push((grid.index(i, j, (k + nk - 1) % nk), -c));
    } else if c < 0.0 {
        row.push((grid.index(i, j, (k + 1) % nk), c));
        row.push((idx, -c));
    }
    row
}

/// Central-difference row of `Δ_x + Δ_ξ` at node `idx`.
pub fn laplace_stencil(grid: &PhaseGrid, idx: usize) -> Stencil {
    let GridShape { ni, nj, nk } = grid.shape();
    let (i, j, k) = grid.coords(idx);
    let r = grid.r(i);
    let n = grid.n_at(i, j);
    let g = grid.grad_n[i * nj + j];
    let (c, s) = (grid.phi(j).cos(), grid.phi(j).sin());
    let g_r = g[0] * c + g[1] * s;
    let g_phi = -g[0] * s + g[1] * c;
    let inv_n2 = 1.0 / (n * n);
    let inv_n3 = inv_n2 / n;
    // coefficients of u_rr, u_r, u_φφ, u_φ in Δ_x
    let a_rr = inv_n2;
    let a_r = inv_n2 / r + inv_n3 * g_r;
    let a_pp = inv_n2 / (r * r);
    let a_p = inv_n3 * g_phi / r;
    let mut row: Stencil = Vec::with_capacity(12);

    if i < ni - 1 {
        let (hm, hp) = radial_spacings(grid, i);
        let sum = hm + hp;
        // u_rr ≈ 2[(u₊−u₀)/h₊ − (u₀−u₋)/h₋]/(h₊+h₋)
        let wp = 2.0 / (hp * sum);
        let wm = 2.0 / (hm * sum);
        // u_r ≈ [h₋² u₊ − h₊² u₋ + (h₊² − h₋²) u₀] / (h₊h₋(h₊+h₋))
        let denom = hp * hm * sum;
        let dp = hm * hm / denom;
        let dm = -hp * hp / denom;
        let d0 = (hp * hp - hm * hm) / denom;
        push_radial(grid, &mut row, i, j, k, false, a_rr * wp + a_r * dp);
        push_radial(grid, &mut row, i, j, k, true, a_rr * wm + a_r * dm);
        row.push((idx, -a_rr * (wp + wm) + a_r * d0));
    } else {
        // outer ring: one-sided second-order differences toward the interior
        let dr = grid.dr();
        let (u0, u1, u2) = (idx, grid.index(i - 1, j, k), grid.index(i - 2, j, k));
        row.push((u0, a_rr / (dr * dr) + a_r * 1.5 / dr));
        row.push((u1, -2.0 * a_rr / (dr * dr) - a_r * 2.0 / dr));
        row.push((u2, a_rr / (dr * dr) + a_r * 0.5 / dr));
    }
    let dp = grid.dphi();
    let jp = grid.index(i, (j + 1) % nj, k);
    let jm = grid.index(i, (j + nj - 1) % nj, k);
    row.push((jp, a_pp / (dp * dp) + a_p / (2.0 * dp)));
    row.push((jm, a_pp / (dp * dp) - a_p / (2.0 * dp)));
    row.push((idx, -2.0 * a_pp / (dp * dp)));

    let dt = grid.dtheta();
    let w = 1.0 / (dt * dt);
    row.push((grid.index(i, j, (k + 1) % nk), w));
    row.push((grid.index(i, j, (k + nk - 1) % nk), w));
    row.push((idx, -2.0 * w));
    row
}

fn apply_rows(grid: &PhaseGrid, u: &GridFunction, row: impl Fn(usize) -> Stencil) -> Result<GridFunction> {
    u.check_grid(grid)?;
    let values = (0..grid.len())
        .map(|idx| row(idx).iter().map(|&(col, w)| w * u.values[col]).sum())
        .collect();
    Ok(GridFunction {
        shape: grid.shape(),
        values,
    })
}

/// Upwind discretization of the geodesic vector field.
pub fn apply_h(grid: &PhaseGrid, model: &RefractiveModel<f64>, u: &GridFunction) -> Result<GridFunction> {
    let adv = advection_coefficients(grid, model);
    apply_rows(grid, u, |idx| h_stencil(grid, &adv[idx], idx))
}

/// Central discretization of `Δ_x + Δ_ξ`.
pub fn apply_laplace(grid: &PhaseGrid, _model: &RefractiveModel<f64>, u: &GridFunction) -> Result<GridFunction> {
    apply_rows(grid, u, |idx| laplace_stencil(grid, idx))
}

/// Direction angle of `v`, in `[0, 2π)`.
pub fn direction_angle(v: &[f64; 3]) -> f64 {
    let a = v[1].atan2(v[0]);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::rk4_step;

    fn flat() -> RefractiveModel<f64> {
        RefractiveModel::constant(2, 1.0).unwrap()
    }

    #[test]
    fn grid_sizes_and_index_map() {
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, 30, 30, 10).unwrap();
        assert_eq!(g.len(), 9000);
        let small = build_grid(&m, 3, 3, 3).unwrap();
        assert_eq!(small.len(), 27);
        assert_eq!((0..3).map(|i| small.r(i)).collect::<Vec<_>>(), vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let mut seen = vec![false; g.len()];
        for i in 0..30 {
            for j in 0..30 {
                for k in 0..10 {
                    let idx = g.index(i, j, k);
                    assert_eq!(g.coords(idx), (i, j, k));
                    assert!(!seen[idx]);
                    seen[idx] = true;
                }
            }
        }
        for idx in 0..g.len() {
            let p = g.point(idx);
            assert!((m.n(&p.x) * crate::scalar::norm(&p.xi) - 1.0).abs() < 1e-12);
            if g.is_boundary(idx) {
                assert!((crate::scalar::norm(&p.x) - 1.0).abs() < 1e-15);
            }
        }
        assert!(build_grid(&m, 2, 5, 5).is_err());
    }

    #[test]
    fn boundary_classes() {
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, 4, 8, 8).unwrap();
        let mask = classify_boundary(&g, &m);
        // θ_k = φ_j: radially outward
        assert_eq!(mask.class(3, 3), BoundaryClass::Outflow);
        // θ_k = φ_j + π
        assert_eq!(mask.class(3, 7), BoundaryClass::Inflow);
        // θ_k = φ_j + π/2
        assert_eq!(mask.class(3, 5), BoundaryClass::Glancing);
        let total = mask.count(BoundaryClass::Inflow) + mask.count(BoundaryClass::Outflow) + mask.count(BoundaryClass::Glancing);
        assert_eq!(total, 64);
        assert_eq!(mask.class_of(0), None);
        assert_eq!(mask.outflow_nodes().len(), mask.count(BoundaryClass::Outflow));
    }

    #[test]
    fn constant_functions_are_annihilated() {
        let m = RefractiveModel::paper4();
        for (ni, nj, nk) in [(6, 8, 6), (5, 7, 5)] {
            let g = build_grid(&m, ni, nj, nk).unwrap();
            let u = g.sample_polar(|_, _, _| 2.5);
            assert!(apply_h(&g, &m, &u).unwrap().max_abs() < 1e-10);
            assert!(apply_laplace(&g, &m, &u).unwrap().max_abs() < 1e-9);
        }
    }

    #[test]
    fn straight_rays_do_not_turn() {
        let m = flat();
        let g = build_grid(&m, 5, 8, 8).unwrap();
        assert!(advection_coefficients(&g, &m).iter().all(|a| a.theta_dot == 0.0));
        let p4 = RefractiveModel::paper4();
        let g = build_grid(&p4, 5, 8, 8).unwrap();
        let adv = advection_coefficients(&g, &p4);
        // j = J-1 is φ = 2π (x₁-axis); k = K-1 is θ = 2π (radial)
        assert!(adv[g.index(2, 7, 7)].theta_dot.abs() < 1e-15);
    }

    #[test]
    fn turning_rate_matches_traced_geodesic() {
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, 7, 9, 11).unwrap();
        let adv = advection_coefficients(&g, &m);
        for idx in [5usize, 77, 321, 500] {
            let p = g.point(idx);
            let h = 1e-4;
            let (_, vp) = rk4_step(&m, &p.x, &p.xi, h);
            let (_, vm) = rk4_step(&m, &p.x, &p.xi, -h);
            let mut d = vp[1].atan2(vp[0]) - vm[1].atan2(vm[0]);
            if d > PI {
                d -= TAU;
            } else if d < -PI {
                d += TAU;
            }
            assert!((d / (2.0 * h) - adv[idx].theta_dot).abs() < 1e-6);
        }
    }

    #[test]
    fn h_of_coordinate_is_direction_component() {
        let m = flat();
        let g = build_grid(&m, 20, 24, 8).unwrap();
        let u = g.sample(|p| p.x[0]);
        let hu = apply_h(&g, &m, &u).unwrap();
        for idx in 0..g.len() {
            let p = g.point(idx);
            assert!((hu.values[idx] - p.xi[0]).abs() < 0.2);
        }
    }

    fn h_error(ni: usize, nj: usize, nk: usize) -> f64 {
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, ni, nj, nk).unwrap();
        let u_exact = |p: &PhaseSpacePoint<f64>| {
            let th = p.xi[1].atan2(p.xi[0]);
            (p.x[0] + 0.5 * p.x[1] * p.x[1]) * (1.0 + 0.3 * th.cos())
        };
        let h_exact = |p: &PhaseSpacePoint<f64>| {
            let th = p.xi[1].atan2(p.xi[0]);
            let a = turning_rate(&m, &p.x, &p.xi);
            (p.xi[0] + p.x[1] * p.xi[1]) * (1.0 + 0.3 * th.cos()) - (p.x[0] + 0.5 * p.x[1] * p.x[1]) * 0.3 * th.sin() * a
        };
        let u = g.sample(u_exact);
        let hu = apply_h(&g, &m, &u).unwrap();
        let exact = g.sample(h_exact);
        hu.values
            .iter()
            .zip(&exact.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn upwind_h_converges_at_first_order() {
        let e1 = h_error(10, 16, 16);
        let e2 = h_error(20, 32, 32);
        let e3 = h_error(40, 64, 64);
        let (r1, r2) = (e1 / e2, e2 / e3);
        assert!((1.5..=2.5).contains(&r2), "ratios {r1} {r2}");
    }

    #[test]
    fn laplacian_of_radius_squared() {
        let m = flat();
        let g = build_grid(&m, 20, 32, 6).unwrap();
        let u = g.sample(|p| p.x[0] * p.x[0] + p.x[1] * p.x[1]);
        let lu = apply_laplace(&g, &m, &u).unwrap();
        for idx in 0..g.len() {
            if !g.is_boundary(idx) {
                assert!((lu.values[idx] - 4.0).abs() < 1e-9, "{}", lu.values[idx]);
            }
        }
    }

    #[test]
    fn fiber_laplacian_of_cosine() {
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, 4, 6, 64).unwrap();
        let u = g.sample_polar(|_, _, th| th.cos());
        let lu = apply_laplace(&g, &m, &u).unwrap();
        let dt = g.dtheta();
        for idx in 0..g.len() {
            let (_, _, k) = g.coords(idx);
            let exact = -g.theta(k).cos() * (2.0 - 2.0 * dt.cos()) / (dt * dt);
            assert!((lu.values[idx] - exact).abs() < 1e-9);
            assert!((lu.values[idx] + g.theta(k).cos()).abs() < dt * dt);
        }
    }

    #[test]
    fn fiber_laplacian_matches_ambient_form() {
        // n⁻² Σ ∂²_{ξᵢ} applied to a 0-homogeneous extension equals ∂²_θ on ‖ξ‖ = 1/n
        let m = RefractiveModel::paper4();
        let x = [0.3, -0.4, 0.0];
        let n = m.n(&x);
        let rho = 1.0 / n;
        let u = |a: f64, b: f64| {
            let th = b.atan2(a);
            (2.0 * th).cos() + 0.5 * th.sin()
        };
        for th in [0.3, 1.7, 4.0] {
            let (a, b) = (rho * f64::cos(th), rho * f64::sin(th));
            let h = 1e-4;
            let lap = (u(a + h, b) + u(a - h, b) + u(a, b + h) + u(a, b - h) - 4.0 * u(a, b)) / (h * h);
            let ambient = lap / (n * n);
            let exact = -4.0 * (2.0 * th).cos() - 0.5 * th.sin();
            assert!((ambient - exact).abs() < 1e-5, "{ambient} {exact}");
        }
    }

    #[test]
    fn rotation_equivariance_of_operators() {
        // radial model with J = K: shifting (j, k) together commutes with both operators
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, 6, 12, 12).unwrap();
        let u = g.sample_polar(|r, p, t| r * r * (p.cos() + 0.3 * (t - p).sin()) + (2.0 * t).cos());
        let shifted = |f: &GridFunction| {
            let mut out = f.clone();
            for idx in 0..g.len() {
                let (i, j, k) = g.coords(idx);
                out.values[g.index(i, (j + 1) % 12, (k + 1) % 12)] = f.values[idx];
            }
            out
        };
        for op in [apply_h, apply_laplace] {
            let a = shifted(&op(&g, &m, &u).unwrap());
            let b = op(&g, &m, &shifted(&u)).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn upwind_stencil_reads_only_upstream() {
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, 8, 10, 12).unwrap();
        let adv = advection_coefficients(&g, &m);
        for idx in 0..g.len() {
            let (i, j, k) = g.coords(idx);
            if i == 0 || i == 7 {
                continue;
            }
            for &(col, w) in &h_stencil(&g, &adv[idx], idx) {
                if col == idx {
                    assert!(w >= 0.0);
                    continue;
                }
                assert!(w <= 0.0);
                let (ci, cj, ck) = g.coords(col);
                if ci != i {
                    assert_eq!(ci as isize - i as isize, if adv[idx].r_dot > 0.0 { -1 } else { 1 });
                } else if cj != j {
                    let step = if adv[idx].phi_dot > 0.0 { (j + 9) % 10 } else { (j + 1) % 10 };
                    assert_eq!(cj, step);
                } else {
                    let step = if adv[idx].theta_dot > 0.0 { (k + 11) % 12 } else { (k + 1) % 12 };
                    assert_eq!(ck, step);
                }
            }
        }
    }

    #[test]
    fn csv_and_pgm_exports() {
        let m = RefractiveModel::paper4();
        let g = build_grid(&m, 30, 30, 10).unwrap();
        let u = g.sample_polar(|r, _, _| r);
        let mut buf = Vec::new();
        u.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9001);
        assert!(text.starts_with("i,j,k,r,phi,theta,value\n1,1,1,"));

        let c = g.sample_polar(|_, _, _| 3.0);
        let mut pgm = Vec::new();
        let (lo, hi) = c.write_pgm_slice(0, &mut pgm).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));
        let header = b"P5\n30 30\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let pixels = &pgm[header.len()..];
        assert_eq!(pixels.len(), 900);
        assert!(pixels.iter().all(|&p| p == pixels[0]));
    }
}
