use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodingScheme {
    /// `ν_{y,p} = e_y − e_p`.
    CrammerSinger,
    /// `ν_{y,p} = e_p`.
    Binary,
}

/// Class-direction vectors of the unified all-in-one dual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassEncoding {
    pub num_classes: usize,
    pub scheme: EncodingScheme,
}

impl ClassEncoding {
    pub fn new(num_classes: usize, scheme: EncodingScheme) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::domain(format!("need at least 2 classes, got {num_classes}")));
        }
        Ok(Self { num_classes, scheme })
    }

    pub fn nu(&self, y: usize, p: usize) -> Array1<f64> {
        let mut v = Array1::zeros(self.num_classes);
        match self.scheme {
            EncodingScheme::CrammerSinger => {
                v[y] += 1.0;
                v[p] -= 1.0;
            }
            EncodingScheme::Binary => v[p] = 1.0,
        }
        v
    }

    /// `G_pq = ⟨ν_{y,p}, ν_{y,q}⟩` over the active non-true classes.
    pub fn gram_matrix(&self, y: usize, active: &[usize]) -> Result<Array2<f64>> {
        if active.is_empty() {
            return Err(Error::domain("gram matrix needs a non-empty active set"));
        }
        if y >= self.num_classes {
            return Err(Error::domain(format!("true class {y} out of range")));
        }
        if let Some(&p) = active.iter().find(|&&p| p == y || p >= self.num_classes) {
            return Err(Error::domain(format!("active class {p} must differ from y and be < c")));
        }
        let nus: Vec<Array1<f64>> = active.iter().map(|&p| self.nu(y, p)).collect();
        Ok(Array2::from_shape_fn((nus.len(), nus.len()), |(i, j)| {
            nus[i].dot(&nus[j])
        }))
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn lambda_max(g: &Array2<f64>) -> Result<f64> {
    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 10_000;
    let m = g.nrows();
    if m == 0 || g.ncols() != m {
        return Err(Error::domain("lambda_max needs a non-empty square matrix"));
    }
    // A start vector with unequal entries avoids orthogonality to the top eigenvector
    // for the structured matrices used here.
    let mut v = Array1::from_shape_fn(m, |i| 1.0 + 0.1 * i as f64);
    v /= v.dot(&v).sqrt();
    let mut lambda = v.dot(&g.dot(&v));
    for _ in 0..MAX_ITER {
        let w = g.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        let next = v.dot(&g.dot(&v));
        if (next - lambda).abs() <= TOL * next.abs().max(1.0) {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::PowerIteration(MAX_ITER))
}

/// Closed-form `λ_max(G)` choices for weight perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EncodingPreset {
    /// Single most-violating class: `λ_max = 2`.
    #[default]
    CrammerSinger,
    /// Binary SVM: `λ_max = 1`.
    Binary,
    /// Every non-true class active: `λ_max = c`.
    Conservative,
}

impl EncodingPreset {
    pub fn lambda_max(&self, num_classes: usize) -> f64 {
        match self {
            EncodingPreset::CrammerSinger => 2.0,
            EncodingPreset::Binary => 1.0,
            EncodingPreset::Conservative => num_classes as f64,
        }
    }

    /// The encoding and active set whose Gram matrix the preset summarizes.
    pub fn gram_matrix(&self, num_classes: usize) -> Result<Array2<f64>> {
        match self {
            EncodingPreset::CrammerSinger => {
                ClassEncoding::new(num_classes, EncodingScheme::CrammerSinger)?.gram_matrix(0, &[1])
            }
            EncodingPreset::Binary => ClassEncoding::new(num_classes, EncodingScheme::Binary)?.gram_matrix(0, &[1]),
            EncodingPreset::Conservative => {
                let active: Vec<usize> = (1..num_classes).collect();
                ClassEncoding::new(num_classes, EncodingScheme::CrammerSinger)?.gram_matrix(0, &active)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncodingPreset::CrammerSinger => "crammer_singer",
            EncodingPreset::Binary => "binary",
            EncodingPreset::Conservative => "conservative",
        }
    }
}

impl fmt::Display for EncodingPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncodingPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crammer_singer" => Ok(Self::CrammerSinger),
            "binary" => Ok(Self::Binary),
            "conservative" => Ok(Self::Conservative),
            other => Err(Error::Config(format!(
                "unknown encoding preset {other:?} (expected crammer_singer, binary or conservative)"
            ))),
        }
    }
}
