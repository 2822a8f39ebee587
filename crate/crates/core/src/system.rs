use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Processing steps a system matrix has been through, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Raw,
    BackgroundCorrected,
    RowSelected { kept: usize, of: usize },
    Whitened,
    Normalized { scale: f64 },
}

/// Discrete forward operator together with how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrix {
    pub matrix: Matrix,
    pub provenance: Vec<Provenance>,
}

impl SystemMatrix {
    pub fn raw(matrix: Matrix) -> Self {
        Self {
            matrix,
            provenance: vec![Provenance::Raw],
        }
    }

    pub fn derived(&self, matrix: Matrix, step: Provenance) -> Self {
        let mut provenance = self.provenance.clone();
        provenance.push(step);
        Self { matrix, provenance }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

impl From<Matrix> for SystemMatrix {
    fn from(matrix: Matrix) -> Self {
        Self::raw(matrix)
    }
}
