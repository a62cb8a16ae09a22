//! Polarization-state tomography: Stokes reconstruction of 2×2 density
//! matrices from detector counts, and Uhlmann fidelity against the ideal
//! states.
//!
//! The receiver has only H/V/P/M detectors, which cannot resolve the
//! circular component, so s3 defaults to zero unless circular counts are
//! supplied; imaginary parts of the reconstruction are then structurally
//! zero.

use num_complex::Complex64;
use thiserror::Error;

use crate::protocol::Polarization;

#[derive(Debug, Error, PartialEq)]
pub enum TomographyError {
    #[error("counts invalid: {0}")]
    BadCounts(&'static str),
    #[error("matrix is not a density matrix: {0}")]
    NonPhysical(&'static str),
}

/// Detector counts for one prepared state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TomographyCounts {
    pub n_h: u64,
    pub n_v: u64,
    pub n_p: u64,
    pub n_m: u64,
    /// Optional circular-basis counts (right, left).
    pub circular: Option<(u64, u64)>,
}

impl TomographyCounts {
    pub fn linear(n_h: u64, n_v: u64, n_p: u64, n_m: u64) -> Self {
        Self { n_h, n_v, n_p, n_m, circular: None }
    }
}

/// A 2×2 complex density matrix, row-major, with H ≡ (1,0)ᵀ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    pub m: [[Complex64; 2]; 2],
}

impl DensityMatrix {
    pub fn new(m: [[Complex64; 2]; 2]) -> Result<Self, TomographyError> {
        let dm = Self { m };
        dm.validate()?;
        Ok(dm)
    }

    fn validate(&self) -> Result<(), TomographyError> {
        let tol = 1e-10;
        if (self.m[0][1] - self.m[1][0].conj()).norm() > tol
            || self.m[0][0].im.abs() > tol
            || self.m[1][1].im.abs() > tol
        {
            return Err(TomographyError::NonPhysical("not Hermitian"));
        }
        if (self.trace() - 1.0).abs() > tol {
            return Err(TomographyError::NonPhysical("trace differs from 1"));
        }
        let (l1, l2) = self.eigenvalues();
        if l1 < -tol || l2 < -tol {
            return Err(TomographyError::NonPhysical("negative eigenvalue"));
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        (self.m[0][0] + self.m[1][1]).re
    }

    pub fn determinant(&self) -> f64 {
        (self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]).re
    }

    /// Eigenvalues of the Hermitian matrix, descending.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let tr = self.trace();
        let det = self.determinant();
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        ((tr + disc) / 2.0, (tr - disc) / 2.0)
    }

    /// From Stokes components, rescaling the vector onto the Bloch sphere
    /// when counts place it outside (the PSD projection).
    pub fn from_stokes(s1: f64, s2: f64, s3: f64) -> Self {
        let norm = (s1 * s1 + s2 * s2 + s3 * s3).sqrt();
        let (s1, s2, s3) = if norm > 1.0 {
            (s1 / norm, s2 / norm, s3 / norm)
        } else {
            (s1, s2, s3)
        };
        Self {
            m: [
                [
                    Complex64::new((1.0 + s1) / 2.0, 0.0),
                    Complex64::new(s2 / 2.0, -s3 / 2.0),
                ],
                [
                    Complex64::new(s2 / 2.0, s3 / 2.0),
                    Complex64::new((1.0 - s1) / 2.0, 0.0),
                ],
            ],
        }
    }

    /// Ideal pure state of one source polarization.
    pub fn ideal(pol: Polarization) -> Self {
        match pol {
            Polarization::H => Self::from_stokes(1.0, 0.0, 0.0),
            Polarization::V => Self::from_stokes(-1.0, 0.0, 0.0),
            Polarization::P => Self::from_stokes(0.0, 1.0, 0.0),
            Polarization::M => Self::from_stokes(0.0, -1.0, 0.0),
        }
    }

    /// (1−p)·ρ + p·I/2.
    pub fn depolarized(&self, p: f64) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = *entry * (1.0 - p)
                    + if i == j { Complex64::new(p / 2.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            }
        }
        Self { m }
    }

    /// Principal square root via the spectral decomposition.
    fn sqrt(&self) -> [[Complex64; 2]; 2] {
        let (l1, l2) = self.eigenvalues();
        let (r1, r2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
        // sqrt(A) = r1 P1 + r2 P2 with P1 = (A - l2 I)/(l1 - l2). For a
        // (near-)degenerate spectrum the matrix is r·I.
        if (l1 - l2).abs() < 1e-14 {
            return [
                [Complex64::new(r1, 0.0), Complex64::new(0.0, 0.0)],
                [Complex64::new(0.0, 0.0), Complex64::new(r1, 0.0)],
            ];
        }
        let scale = 1.0 / (l1 - l2);
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let a = self.m[i][j];
                let id = if i == j { 1.0 } else { 0.0 };
                let p1 = (a - Complex64::new(l2 * id, 0.0)) * scale;
                let p2 = (Complex64::new(l1 * id, 0.0) - a) * scale;
                out[i][j] = p1 * r1 + p2 * r2;
            }
        }
        out
    }
}

fn matmul(a: &[[Complex64; 2]; 2], b: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Stokes reconstruction from counts: s1 = (nH−nV)/(nH+nV),
/// s2 = (nP−nM)/(nP+nM), s3 from circular counts when present, else 0.
pub fn reconstruct(counts: &TomographyCounts) -> Result<DensityMatrix, TomographyError> {
    if counts.n_h + counts.n_v == 0 {
        return Err(TomographyError::BadCounts("no rectilinear counts"));
    }
    if counts.n_p + counts.n_m == 0 {
        return Err(TomographyError::BadCounts("no diagonal counts"));
    }
    let s1 = (counts.n_h as f64 - counts.n_v as f64) / (counts.n_h + counts.n_v) as f64;
    let s2 = (counts.n_p as f64 - counts.n_m as f64) / (counts.n_p + counts.n_m) as f64;
    let s3 = match counts.circular {
        Some((r, l)) => {
            if r + l == 0 {
                return Err(TomographyError::BadCounts("no circular counts"));
            }
            (r as f64 - l as f64) / (r + l) as f64
        }
        None => 0.0,
    };
    Ok(DensityMatrix::from_stokes(s1, s2, s3))
}

/// Uhlmann fidelity F = [tr √(√ρ σ √ρ)]².
///
/// For a pure `rho_ide` this reduces to ⟨ψ|ρ_mea|ψ⟩, which the tests use as
/// an independent route.
pub fn fidelity(rho_mea: &DensityMatrix, rho_ide: &DensityMatrix) -> Result<f64, TomographyError> {
    rho_mea.validate()?;
    rho_ide.validate()?;
    let sq = rho_mea.sqrt();
    let inner = matmul(&matmul(&sq, &rho_ide.m), &sq);
    // inner is Hermitian PSD; tr sqrt = sqrt(l1) + sqrt(l2)
    let tr = (inner[0][0] + inner[1][1]).re;
    let det = (inner[0][0] * inner[1][1] - inner[0][1] * inner[1][0]).re;
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    let (l1, l2) = (((tr + disc) / 2.0).max(0.0), ((tr - disc) / 2.0).max(0.0));
    let root = l1.sqrt() + l2.sqrt();
    Ok((root * root).clamp(0.0, 1.0))
}
