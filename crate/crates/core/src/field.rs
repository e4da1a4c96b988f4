//! Symmetric rank-`m` tensor fields and their moments `f·ξ^m`.

use std::fmt;
use std::sync::Arc;

use crate::error::{arg, Error, Result};
use crate::scalar::{Real, Vec3};

type ComponentFn<T> = dyn Fn(T, &Vec3<T>, &[usize]) -> T + Send + Sync;

/// A symmetric covariant tensor field `f_{i₁…i_m}(t, x)`.
///
/// The component closure only ever sees sorted multi-indices, so the field is
/// symmetric by construction.
#[derive(Clone)]
pub struct SymmetricTensorField<T> {
    dim: usize,
    rank: usize,
    components: Arc<ComponentFn<T>>,
    time_dependent: bool,
    switch_on: bool,
    label: String,
}

impl<T: Real> fmt::Debug for SymmetricTensorField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricTensorField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("rank", &self.rank)
            .field("time_dependent", &self.time_dependent)
            .field("switch_on", &self.switch_on)
            .finish()
    }
}

impl<T: Real> SymmetricTensorField<T> {
    /// Builds a field from a component function receiving `(t, x, sorted multi-index)`.
    pub fn from_fn(
        dim: usize,
        rank: usize,
        time_dependent: bool,
        label: impl Into<String>,
        components: impl Fn(T, &Vec3<T>, &[usize]) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return arg(format!("field dimension must be 2 or 3, got {dim}"));
        }
        Ok(Self {
            dim,
            rank,
            components: Arc::new(components),
            time_dependent,
            switch_on: false,
            label: label.into(),
        })
    }

    /// The planar vector field `(1/(x₁²+x₂²+1), x₁+x₂)`.
    pub fn paper4() -> Self {
        Self::from_fn(2, 1, false, "paper4", |_, x, idx| match idx[0] {
            0 => (x[0] * x[0] + x[1] * x[1] + T::one()).recip(),
            _ => x[0] + x[1],
        })
        .expect("valid built-in field")
    }

    pub fn constant_vector(c: &[T]) -> Result<Self> {
        let comps: Vec<T> = c.to_vec();
        let label = format!(
            "constant-vec:{}",
            c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        Self::from_fn(c.len(), 1, false, label, move |_, _, idx| comps[idx[0]])
    }

    pub fn constant_scalar(dim: usize, c: T) -> Result<Self> {
        Self::from_fn(dim, 0, false, format!("constant-scalar:{c}"), move |_, _, _| c)
    }

    pub fn zero(dim: usize, rank: usize) -> Result<Self> {
        Self::from_fn(dim, rank, false, "zero", |_, _, _| T::zero())
    }

    /// Components vanish for `t < 0` when set.
    pub fn with_switch_on(mut self, on: bool) -> Self {
        self.switch_on = on;
        self
    }

    /// Parses `paper4`, `constant-vec:<c1,c2[,c3]>` or `constant-scalar:<c>`.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let bad = || Error::FieldSpec(spec.to_string());
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
        match kind.trim() {
            "constant-vec" if (2..=3).contains(&nums.len()) => Self::constant_vector(&nums),
            "constant-scalar" if nums.len() == 1 => Self::constant_scalar(dim, nums[0]),
            _ => Err(bad()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn switch_on(&self) -> bool {
        self.switch_on
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Component at an arbitrary (unsorted) multi-index.
    pub fn component(&self, t: T, x: &Vec3<T>, index: &[usize]) -> T {
        if self.switch_on && t < T::zero() {
            return T::zero();
        }
        let mut sorted: smallvec_like::Idx = smallvec_like::Idx::from_slice(index);
        sorted.as_mut_slice().sort_unstable();
        let t_eff = if self.time_dependent { t } else { T::zero() };
        (self.components)(t_eff, x, sorted.as_slice())
    }

    /// `f_{i₁…i_m}(t, x) ξ^{i₁}⋯ξ^{i_m}` summed over the full index set.
    pub fn moment(&self, t: T, x: &Vec3<T>, xi: &Vec3<T>) -> T {
        if self.switch_on && t < T::zero() {
            return T::zero();
        }
        let t_eff = if self.time_dependent { t } else { T::zero() };
        let d = self.dim;
        let m = self.rank;
        if m == 0 {
            return (self.components)(t_eff, x, &[]);
        }
        let mut idx = smallvec_like::Idx::zeros(m);
        let mut sorted = smallvec_like::Idx::zeros(m);
        let mut total = T::zero();
        loop {
            let mut w = T::one();
            for &i in idx.as_slice() {
                w = w * xi[i];
            }
            if w != T::zero() {
                sorted.as_mut_slice().copy_from_slice(idx.as_slice());
                sorted.as_mut_slice().sort_unstable();
                total = total + w * (self.components)(t_eff, x, sorted.as_slice());
            }
            // odometer over {0..d}^m
            let digits = idx.as_mut_slice();
            let mut pos = 0;
            loop {
                if pos == m {
                    return total;
                }
                digits[pos] += 1;
                if digits[pos] < d {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Checked moment: the tangent vector must live in the field's dimension.
    pub fn moment_checked(&self, t: T, x: &Vec3<T>, xi: &Vec3<T>, xi_dim: usize) -> Result<T> {
        if xi_dim != self.dim {
            return arg(format!(
                "tangent vector has dimension {xi_dim}, field has dimension {}",
                self.dim
            ));
        }
        Ok(self.moment(t, x, xi))
    }

    /// Pointwise sum of two fields of equal shape.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.rank != other.rank {
            return arg("fields differ in dimension or rank");
        }
        let (a, b) = (self.clone(), other.clone());
        let mut out = Self::from_fn(
            self.dim,
            self.rank,
            self.time_dependent || other.time_dependent,
            format!("{}+{}", self.label, other.label),
            move |t, x, idx| a.component(t, x, idx) + b.component(t, x, idx),
        )?;
        out.switch_on = false;
        Ok(out)
    }

    /// Multiplies every component by `s`.
    pub fn scaled(&self, s: T) -> Self {
        let a = self.clone();
        let mut out = Self::from_fn(self.dim, self.rank, self.time_dependent, format!("{s}*{}", self.label), move |t, x, idx| {
            s * a.component(t, x, idx)
        })
        .expect("dimension already validated");
        out.switch_on = false;
        out
    }
}

/// Fixed-capacity index buffer; ranks above 8 are not supported.
mod smallvec_like {
    pub const MAX_RANK: usize = 8;

    pub struct Idx {
        buf: [usize; MAX_RANK],
        len: usize,
    }

    impl Idx {
        pub fn zeros(len: usize) -> Self {
            assert!(len <= MAX_RANK, "tensor rank {len} exceeds {MAX_RANK}");
            Self {
                buf: [0; MAX_RANK],
                len,
            }
        }

        pub fn from_slice(s: &[usize]) -> Self {
            let mut out = Self::zeros(s.len());
            out.buf[..s.len()].copy_from_slice(s);
            out
        }

        pub fn as_slice(&self) -> &[usize] {
            &self.buf[..self.len]
        }

        pub fn as_mut_slice(&mut self) -> &mut [usize] {
            &mut self.buf[..self.len]
        }
    }
}
