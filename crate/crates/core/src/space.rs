//! Parameter box, uniform sampling and evaluated-sample records.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One uniform input dimension in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ParameterDef {
    pub fn new(name: impl Into<String>, min: f64, max: f64) -> Result<Self> {
        let def = ParameterDef { name: name.into(), min, max };
        def.validate()?;
        Ok(def)
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Domain("parameter name must not be empty".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Domain(format!(
                "parameter {}: bounds [{}, {}] must be finite with min < max",
                self.name, self.min, self.max
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// Affine image of `u` in `[0, 1]`, clamped into `[min, max]` so rounding
    /// can never leave the box.
    #[inline]
    pub fn from_unit(&self, u: f64) -> f64 {
        (self.min + u * self.width()).clamp(self.min, self.max)
    }
}

/// Ordered set of uniform input dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParameterDef>", into = "Vec<ParameterDef>")]
pub struct ParameterSpace {
    dims: Vec<ParameterDef>,
}

impl TryFrom<Vec<ParameterDef>> for ParameterSpace {
    type Error = Error;

    fn try_from(dims: Vec<ParameterDef>) -> Result<Self> {
        ParameterSpace::new(dims)
    }
}

impl From<ParameterSpace> for Vec<ParameterDef> {
    fn from(space: ParameterSpace) -> Self {
        space.dims
    }
}

impl ParameterSpace {
    pub fn new(dims: Vec<ParameterDef>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Domain("parameter space needs at least one dimension".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            d.validate()?;
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Domain(format!("duplicate parameter name {}", d.name)));
            }
        }
        Ok(ParameterSpace { dims })
    }

    /// Wing geometry (aspect ratio, sweep, dihedral) followed by freestream
    /// conditions (angle of attack, side-slip, Mach). Angles in degrees.
    pub fn wing_default() -> Self {
        let d = |n: &str, lo, hi| ParameterDef { name: n.into(), min: lo, max: hi };
        ParameterSpace {
            dims: alloc::vec![
                d("aspect_ratio", 5.0, 15.0),
                d("sweep", 25.0, 45.0),
                d("dihedral", -5.0, 15.0),
                d("alpha", 0.0, 8.0),
                d("beta", 0.0, 5.0),
                d("mach", 0.1, 0.3),
            ],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[ParameterDef] {
        &self.dims
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Domain(format!("vector has {len} coordinates, space has {} dimensions", self.dim())));
        }
        Ok(())
    }

    /// Checks length and bounds of `values`.
    pub fn check(&self, values: &[f64]) -> Result<()> {
        self.check_len(values.len())?;
        for (d, &v) in self.dims.iter().zip(values) {
            if !(v >= d.min && v <= d.max) {
                return Err(Error::Domain(format!("parameter {} = {v} outside [{}, {}]", d.name, d.min, d.max)));
            }
        }
        Ok(())
    }

    /// Validates `values` and wraps them.
    pub fn vector(&self, values: Vec<f64>) -> Result<ParameterVector> {
        self.check(&values)?;
        Ok(ParameterVector(values))
    }

    /// Maps natural units onto the unit cube.
    pub fn normalize(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        Ok(self.normalize_unchecked(w))
    }

    pub(crate) fn normalize_unchecked(&self, w: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(w).map(|(d, &v)| (v - d.min) / d.width()).collect()
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, u: &[f64]) -> Result<ParameterVector> {
        self.check_len(u.len())?;
        if let Some((d, v)) = self.dims.iter().zip(u).find(|(_, v)| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::Domain(format!("normalized {} = {v} outside [0, 1]", d.name)));
        }
        Ok(self.denormalize_unchecked(u))
    }

    pub(crate) fn denormalize_unchecked(&self, u: &[f64]) -> ParameterVector {
        ParameterVector(self.dims.iter().zip(u).map(|(d, &x)| d.from_unit(x)).collect())
    }

    /// Fills `u` with one uniform draw per dimension.
    #[inline]
    pub(crate) fn draw_unit<R: Rng + ?Sized>(&self, rng: &mut R, u: &mut [f64]) {
        for x in u.iter_mut() {
            *x = rng.gen::<f64>();
        }
    }

    /// `n` independent uniform draws from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<ParameterVector> {
        let mut u = alloc::vec![0.0; self.dim()];
        (0..n)
            .map(|_| {
                self.draw_unit(rng, &mut u);
                self.denormalize_unchecked(&u)
            })
            .collect()
    }

    /// Structured design: the first `split` dimensions form "outer" draws
    /// (e.g. geometries), the rest "inner" draws (e.g. flight conditions).
    /// With `shared_inner` the same inner draws are crossed with every outer
    /// draw; otherwise each outer draw gets fresh inner draws.
    pub fn sample_grid<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        split: usize,
        outer: usize,
        inner: usize,
        shared_inner: bool,
    ) -> Result<Vec<ParameterVector>> {
        if split == 0 || split >= self.dim() {
            return Err(Error::Domain(format!(
                "grid split {split} must leave dimensions on both sides (space has {})",
                self.dim()
            )));
        }
        let draw =
            |rng: &mut R, range: core::ops::Range<usize>| -> Vec<f64> { range.map(|_| rng.gen::<f64>()).collect() };
        let outer_draws: Vec<Vec<f64>> = (0..outer).map(|_| draw(rng, 0..split)).collect();
        let shared: Vec<Vec<f64>> =
            if shared_inner { (0..inner).map(|_| draw(rng, split..self.dim())).collect() } else { Vec::new() };
        let mut out = Vec::with_capacity(outer * inner);
        for o in &outer_draws {
            for k in 0..inner {
                let i = match shared.get(k) {
                    Some(s) => s.clone(),
                    None => draw(rng, split..self.dim()),
                };
                let u: Vec<f64> = o.iter().chain(i.iter()).copied().collect();
                out.push(self.denormalize_unchecked(&u));
            }
        }
        Ok(out)
    }
}

/// A point of a [`ParameterSpace`] in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    /// Wraps values without bounds checks; use [`ParameterSpace::vector`]
    /// for untrusted input.
    pub fn from_values(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A drawn parameter vector and what is known about it so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub params: ParameterVector,
    /// Expensive objective, present once the evaluator has returned.
    pub j_true: Option<f64>,
    /// Surrogate value under the current model.
    pub j_tilde: Option<f64>,
    /// Stratum under the current model.
    pub stratum: Option<usize>,
    /// 0 for the preliminary batch.
    pub iteration: u32,
}

impl SampleRecord {
    pub fn new(id: u64, params: ParameterVector, iteration: u32) -> Self {
        SampleRecord { id, params, j_true: None, j_tilde: None, stratum: None, iteration }
    }

    pub fn is_evaluated(&self) -> bool {
        self.j_true.is_some()
    }
}
