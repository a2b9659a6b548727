//! Per-task datasets as consumed by the trainer and the evaluation code.

use alloc::vec::Vec;
use core::ops::Range;

use crate::linalg::Matrix;

/// One split (train or test) of a task: `n x d_in` inputs and global labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }
}

/// A task: its contiguous block of global class ids and its two splits.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub index: usize,
    pub classes: Range<usize>,
    pub train: Split,
    pub test: Split,
}

impl TaskData {
    pub fn input_dim(&self) -> usize {
        self.train.inputs.cols()
    }

    pub fn classes_per_task(&self) -> usize {
        self.classes.len()
    }
}
