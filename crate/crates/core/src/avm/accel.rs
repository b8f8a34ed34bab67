//! The matrix-vector multiply accelerator. The VM hands every `mvmul` to a
//! backend as one opaque operation; the default backend simulates it.

/// A device that computes `A b` for a row-major `rows × cols` matrix `A`.
///
/// Implementations may refuse operands they cannot hold by returning the
/// largest dimension they support.
pub trait MvmBackend {
    fn mvmul(&self, a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>, usize>;
}

/// Software model of a single-instruction MVM unit, with an optional cap on
/// operand size standing in for the array dimensions of real hardware.
#[derive(Debug, Clone, Copy, Default)]
pub struct Simulator {
    pub max_dim: Option<usize>,
}

impl Simulator {
    pub fn with_max_dim(max_dim: usize) -> Self {
        Simulator {
            max_dim: Some(max_dim),
        }
    }
}

impl MvmBackend for Simulator {
    fn mvmul(&self, a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>, usize> {
        if let Some(max) = self.max_dim {
            if rows > max || cols > max {
                return Err(max);
            }
        }
        debug_assert_eq!(a.len(), rows * cols);
        debug_assert_eq!(b.len(), cols);
        Ok(a.chunks(cols)
            .map(|row| row.iter().zip(b).map(|(x, y)| x * y).sum())
            .collect())
    }
}
