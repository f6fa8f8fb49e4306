//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as exact zeros.
pub const PSD_CLAMP: f64 = 1e-12;

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Checks that `m` is symmetric positive semidefinite, returning its smallest eigenvalue.
pub fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "covariance `{name}` is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPsdCovariance {
            name: name.to_string(),
            min_eigenvalue: f64::NAN,
        });
    }
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NonPsdCovariance {
            name: name.to_string(),
            min_eigenvalue: f64::NAN,
        });
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let min = m.clone().symmetric_eigen().eigenvalues.min();
    if min < -PSD_CLAMP * m.amax().max(1.0) {
        return Err(Error::NonPsdCovariance {
            name: name.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(min)
}

/// Symmetric square root `S^{1/2}` of a PSD matrix, so that `S^{1/2} S^{1/2} = S`.
///
/// Tiny negative eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_psd(name, m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if is_diagonal(m) {
        return Ok(DMatrix::from_diagonal(&m.diagonal().map(|v| v.max(0.0).sqrt())));
    }
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let u = &eig.eigenvectors;
    Ok(u * DMatrix::from_diagonal(&sqrt_vals) * u.transpose())
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Euclidean norm of each row.
pub fn row_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.norm()))
}

/// `m * m^T` restricted to its diagonal.
pub fn gram_diagonal(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.norm_squared()))
}

/// Relative Frobenius distance `|a - b| / max(|b|, 1e-300)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(1e-300);
    (a - b).norm() / denom
}

/// Serde adapter storing a `DMatrix` as a list of rows (row-major, human-readable).
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        RowsDoc {
            rows: m.nrows(),
            cols: m.ncols(),
            data: rows,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let doc = RowsDoc::deserialize(d)?;
        from_doc(doc).map_err(D::Error::custom)
    }

    #[derive(Serialize, Deserialize)]
    pub(crate) struct RowsDoc {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }

    fn from_doc(doc: RowsDoc) -> Result<DMatrix<f64>, String> {
        if doc.data.len() != doc.rows {
            return Err(format!(
                "matrix declares {} rows but holds {}",
                doc.rows,
                doc.data.len()
            ));
        }
        if let Some((i, r)) = doc.data.iter().enumerate().find(|(_, r)| r.len() != doc.cols) {
            return Err(format!(
                "row {i} has {} entries, expected {}",
                r.len(),
                doc.cols
            ));
        }
        Ok(DMatrix::from_fn(doc.rows, doc.cols, |i, j| doc.data[i][j]))
    }

    /// Same adapter for a sequence of matrices.
    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
            use serde::ser::SerializeSeq;
            let mut seq = s.serialize_seq(Some(ms.len()))?;
            for m in ms {
                seq.serialize_element(&Wrap(m))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
            let docs = Vec::<RowsDoc>::deserialize(d)?;
            docs.into_iter()
                .map(|doc| from_doc(doc).map_err(D::Error::custom))
                .collect()
        }

        struct Wrap<'a>(&'a DMatrix<f64>);

        impl Serialize for Wrap<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                super::serialize(self.0, s)
            }
        }
    }
}
