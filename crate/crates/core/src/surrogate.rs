//! Linear least-squares surrogate `J~(w) = b0 + sum_j b_j u_j` over
//! normalized coordinates `u`, with its residual scale sigma.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ParameterSpace, SampleRecord};

/// Pivots below this fraction of the largest Gram diagonal mark a dependent column.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Divisor used for the residual scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// Plain root mean square, divisor `n`.
    #[default]
    Rms,
    /// Divisor `n - dim - 1`.
    DegreesOfFreedom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub space: ParameterSpace,
    pub intercept: f64,
    /// One coefficient per normalized dimension.
    pub coefficients: Vec<f64>,
    pub sigma: f64,
    pub sigma_mode: SigmaMode,
    pub training_count: usize,
}

impl SurrogateModel {
    /// Fits on every sample, all of which must carry `j_true`.
    pub fn fit(space: &ParameterSpace, samples: &[SampleRecord], mode: SigmaMode) -> Result<Self> {
        let mut xs = Vec::with_capacity(samples.len());
        let mut ys = Vec::with_capacity(samples.len());
        for s in samples {
            let y = s.j_true.ok_or_else(|| Error::Contract(format!("sample {} has no objective value", s.id)))?;
            xs.push(s.params.values());
            ys.push(y);
        }
        Self::fit_points(space, &xs, &ys, mode)
    }

    /// Fits on raw `(w, J)` pairs given in natural units.
    pub fn fit_points(space: &ParameterSpace, xs: &[&[f64]], ys: &[f64], mode: SigmaMode) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Contract(format!("{} inputs but {} responses", xs.len(), ys.len())));
        }
        let dim = space.dim();
        let p = dim + 1;
        let n = xs.len();
        if n < p {
            return Err(Error::InsufficientData { needed: p, got: n });
        }
        if let Some(y) = ys.iter().find(|y| !y.is_finite()) {
            return Err(Error::Domain(format!("non-finite response {y}")));
        }

        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|w| {
                let mut row = Vec::with_capacity(p);
                row.push(1.0);
                row.extend(space.normalize(w)?);
                Ok(row)
            })
            .collect::<Result<_>>()?;

        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        for (row, &y) in rows.iter().zip(ys) {
            for i in 0..p {
                rhs[i] += row[i] * y;
                for j in 0..=i {
                    gram[i * p + j] += row[i] * row[j];
                }
            }
        }

        let chol = cholesky(&mut gram, p).map_err(|column| Error::RankDeficient {
            column,
            name: if column == 0 { "intercept".to_string() } else { space.dims()[column - 1].name.clone() },
        })?;
        let beta = chol.solve(&rhs);

        let ss: f64 = rows
            .iter()
            .zip(ys)
            .map(|(row, &y)| {
                let r = y - dot(row, &beta);
                r * r
            })
            .sum();
        let divisor = match mode {
            SigmaMode::Rms => n,
            SigmaMode::DegreesOfFreedom => n - p,
        };
        let sigma = if divisor == 0 { 0.0 } else { libm::sqrt(ss / divisor as f64) };

        Ok(SurrogateModel {
            space: space.clone(),
            intercept: beta[0],
            coefficients: beta[1..].to_vec(),
            sigma,
            sigma_mode: mode,
            training_count: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Surrogate value at a point given in natural units.
    pub fn predict(&self, w: &[f64]) -> Result<f64> {
        let u = self.space.normalize(w)?;
        Ok(self.predict_unit(&u))
    }

    /// Surrogate value at a point of the unit cube. No bounds checks.
    #[inline]
    pub fn predict_unit(&self, u: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, u)
    }

    /// `J - J~` for each sample that has an objective value.
    pub fn residuals<'a>(&'a self, samples: &'a [SampleRecord]) -> impl Iterator<Item = Result<f64>> + 'a {
        samples.iter().filter_map(|s| s.j_true.map(|j| (s, j))).map(|(s, j)| Ok(j - self.predict(&s.params)?))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Cholesky {
    lower: Vec<f64>,
    p: usize,
}

/// In-place lower Cholesky factor of the symmetric matrix whose lower
/// triangle is stored in `a`. Returns the first dependent column on failure.
fn cholesky(a: &mut [f64], p: usize) -> core::result::Result<Cholesky, usize> {
    let scale = (0..p).map(|i| a[i * p + i]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(0);
    }
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > PIVOT_TOLERANCE * scale) {
            return Err(j);
        }
        let l = libm::sqrt(d);
        a[j * p + j] = l;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / l;
        }
    }
    Ok(Cholesky { lower: a.to_vec(), p })
}

impl Cholesky {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (l, p) = (&self.lower, self.p);
        let mut y = b.to_vec();
        for i in 0..p {
            for k in 0..i {
                y[i] -= l[i * p + k] * y[k];
            }
            y[i] /= l[i * p + i];
        }
        for i in (0..p).rev() {
            for k in i + 1..p {
                y[i] -= l[k * p + i] * y[k];
            }
            y[i] /= l[i * p + i];
        }
        y
    }
}
