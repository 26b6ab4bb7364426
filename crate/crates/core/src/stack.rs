use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::so3::{Rotation, ROTATION_TOL};

/// Vertical stack of `n` absolute-rotation blocks.
///
/// Blocks are plain matrices so that the all-zeros starting point of a
/// coordinate descent run can be represented; every solver output consists
/// of valid rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationStack {
    blocks: Vec<Matrix3<f64>>,
}

impl RotationStack {
    pub fn zeros(n: usize) -> Self {
        RotationStack {
            blocks: vec![Matrix3::zeros(); n],
        }
    }

    pub fn identity(n: usize) -> Self {
        RotationStack {
            blocks: vec![Matrix3::identity(); n],
        }
    }

    pub fn from_rotations(rotations: &[Rotation]) -> Self {
        RotationStack {
            blocks: rotations.iter().map(|r| *r.matrix()).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<Matrix3<f64>>) -> Self {
        RotationStack { blocks }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    #[inline]
    pub fn block(&self, i: usize) -> &Matrix3<f64> {
        &self.blocks[i]
    }

    #[inline]
    pub fn set_block(&mut self, i: usize, m: Matrix3<f64>) {
        self.blocks[i] = m;
    }

    pub fn blocks(&self) -> &[Matrix3<f64>] {
        &self.blocks
    }

    /// Block `i` as a rotation, or an error if it is not one.
    pub fn rotation(&self, i: usize) -> Result<Rotation> {
        Rotation::from_matrix(self.blocks[i]).map_err(|e| {
            Error::InvalidArgument(format!("block {i} of the rotation stack: {e}"))
        })
    }

    pub fn to_rotations(&self) -> Result<Vec<Rotation>> {
        (0..self.len()).map(|i| self.rotation(i)).collect()
    }

    /// True if every block satisfies the rotation invariants at `tol`.
    pub fn all_valid(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| Rotation::is_valid(b, tol))
    }

    pub fn all_valid_default(&self) -> bool {
        self.all_valid(ROTATION_TOL)
    }

    /// Returns `{R_i Q}`.
    pub fn right_multiplied(&self, q: &Matrix3<f64>) -> Self {
        RotationStack {
            blocks: self.blocks.iter().map(|b| b * q).collect(),
        }
    }
}
