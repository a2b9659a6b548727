//! Evaluation battery: average accuracy and forgetting, 2-Wasserstein feature
//! shift, key-query interaction heatmap, sub-head triggering rates.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::linalg::Matrix;
use crate::math;
use crate::model::{ModelState, PredictionRule, ScoreTarget};
use crate::task::Split;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no tasks recorded")]
    NoTasks,
    #[error("forgetting needs at least two tasks")]
    SingleTask,
    #[error("empty point set")]
    EmptySet,
    #[error("points have dimension {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("row {row} of the accuracy matrix has {got} entries, expected {expected}")]
    MalformedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
}

/// `acc[t][i]`: accuracy on task `t` after training task `i >= t`.
///
/// Stored by training stage: `stage(i)[t]` for `t <= i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyMatrix {
    stages: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_stages(stages: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        for (i, s) in stages.iter().enumerate() {
            if s.len() != i + 1 {
                return Err(MetricsError::MalformedRow {
                    row: i,
                    expected: i + 1,
                    got: s.len(),
                });
            }
        }
        Ok(Self { stages })
    }

    /// Records the accuracies on tasks `0..=i` after training task `i`.
    pub fn push_stage(&mut self, accuracies: Vec<f64>) -> Result<(), MetricsError> {
        let i = self.stages.len();
        if accuracies.len() != i + 1 {
            return Err(MetricsError::MalformedRow {
                row: i,
                expected: i + 1,
                got: accuracies.len(),
            });
        }
        self.stages.push(accuracies);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[Vec<f64>] {
        &self.stages
    }

    /// Accuracy of task `t` after training task `i`.
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.stages.get(i).and_then(|s| s.get(t)).copied()
    }

    /// Mean of the final-stage accuracies.
    pub fn average_accuracy(&self) -> Result<f64, MetricsError> {
        let last = self.stages.last().ok_or(MetricsError::NoTasks)?;
        Ok(last.iter().sum::<f64>() / last.len() as f64)
    }

    /// `1/(T-1) * sum_{t<T-1} max_{t<=j<T-1} (acc[t][j] - acc[t][T-1])`.
    /// Negative when accuracy only improved.
    pub fn average_forgetting(&self) -> Result<f64, MetricsError> {
        let n = self.stages.len();
        match n {
            0 => return Err(MetricsError::NoTasks),
            1 => return Err(MetricsError::SingleTask),
            _ => {}
        }
        let last = &self.stages[n - 1];
        let mut total = 0.0;
        for (t, final_acc) in last.iter().enumerate().take(n - 1) {
            let best = (t..n - 1)
                .map(|j| self.stages[j][t] - final_acc)
                .fold(f64::NEG_INFINITY, f64::max);
            total += best;
        }
        Ok(total / (n - 1) as f64)
    }
}

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// potentials). Returns `assignment[row] = column`.
pub fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact 2-Wasserstein distance between two uniform empirical distributions
/// of equal size.
pub fn wasserstein2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    assert_eq!(a.len(), b.len(), "equal-size samples required");
    let d = a[0].len();
    if let Some(p) = a.iter().chain(b).find(|p| p.len() != d) {
        return Err(MetricsError::DimensionMismatch(d, p.len()));
    }
    let n = a.len();
    let mut cost = Matrix::zeros(n, n);
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            cost.set(i, j, squared_distance(p, q));
        }
    }
    let assignment = hungarian(&cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    Ok(math::sqrt(total.max(0.0) / n as f64))
}

/// Feature displacement between two samples; the larger one is subsampled
/// (seeded, without replacement) to the size of the smaller.
pub fn feature_shift<R: Rng>(
    old: &[Vec<f64>],
    new: &[Vec<f64>],
    rng: &mut R,
) -> Result<f64, MetricsError> {
    if old.is_empty() || new.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let n = old.len().min(new.len());
    let pick = |set: &[Vec<f64>], rng: &mut R| -> Vec<Vec<f64>> {
        if set.len() == n {
            set.to_vec()
        } else {
            index::sample(rng, set.len(), n)
                .into_iter()
                .map(|i| set[i].clone())
                .collect()
        }
    };
    let a = pick(old, rng);
    let b = pick(new, rng);
    wasserstein2(&a, &b)
}

/// Entry `(i, j)`: mean over task-`i` queries of the mean `|alpha|` over the
/// keys of task `j`. Rows are query tasks, columns key tasks.
pub fn key_query_heatmap(model: &ModelState, per_task_queries: &[Vec<Vec<f64>>]) -> Matrix {
    let key_tasks = model.pool.tasks();
    let mut out = Matrix::zeros(per_task_queries.len(), key_tasks);
    for (i, queries) in per_task_queries.iter().enumerate() {
        if queries.is_empty() {
            continue;
        }
        let mut acc = vec![0.0; key_tasks];
        for q in queries {
            let w = model
                .pool
                .attention_weights(q, model.attention, model.similarity)
                .expect("query dimension matches pool");
            for (j, a) in acc.iter_mut().enumerate() {
                let block = w.task(j);
                *a += block.iter().map(|x| x.abs()).sum::<f64>() / block.len() as f64;
            }
        }
        for (j, a) in acc.iter().enumerate() {
            out.set(i, j, a / queries.len() as f64);
        }
    }
    out
}

/// Fraction of each task's samples routed to that task's sub-head, from
/// `(true task, predicted task)` pairs.
pub fn triggering_rates(pairs: &[(usize, usize)], tasks: usize) -> Vec<f64> {
    let mut hit = vec![0usize; tasks];
    let mut seen = vec![0usize; tasks];
    for &(truth, predicted) in pairs {
        seen[truth] += 1;
        if truth == predicted {
            hit[truth] += 1;
        }
    }
    hit.iter()
        .zip(&seen)
        .map(|(&h, &s)| if s == 0 { 0.0 } else { h as f64 / s as f64 })
        .collect()
}

/// Classification accuracy of `model` on a split.
pub fn accuracy(
    model: &ModelState,
    split: &Split,
    rule: PredictionRule,
    target: ScoreTarget,
) -> f64 {
    if split.is_empty() {
        return 0.0;
    }
    let correct = (0..split.len())
        .filter(|&i| model.predict(split.input(i), rule, target).class == split.labels[i])
        .count();
    correct as f64 / split.len() as f64
}
