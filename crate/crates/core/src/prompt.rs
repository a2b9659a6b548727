//! The expanding key/prompt pool, query-key attention and prompt composition.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::Matrix;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("query has dimension {got}, keys have {expected}")]
    QueryDim { expected: usize, got: usize },
    #[error("weight vector has length {got}, pool holds {expected} prompts")]
    WeightLen { expected: usize, got: usize },
    #[error("test pool does not extend the train pool (block {block} differs or is missing)")]
    NotExtension { block: usize },
    #[error("prompt block {0} is frozen")]
    Frozen(usize),
}

/// Similarity function between a (possibly masked) query and a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

/// `Koppa` matches raw queries against keys; `Coda` multiplies the query by a
/// learnable per-key mask first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    #[default]
    Koppa,
    Coda,
}

impl Similarity {
    pub fn eval(self, u: &[f64], k: &[f64]) -> f64 {
        match self {
            Similarity::Dot => math::dot(u, k),
            Similarity::Cosine => {
                let nu = math::norm(u);
                let nk = math::norm(k);
                if nu == 0.0 || nk == 0.0 {
                    0.0
                } else {
                    math::dot(u, k) / (nu * nk)
                }
            }
        }
    }

    /// Accumulates `upstream * d gamma/du` into `du` and `upstream * d gamma/dk`
    /// into `dk`. A zero vector has zero gradient under the cosine convention.
    pub fn backward(self, u: &[f64], k: &[f64], upstream: f64, du: &mut [f64], dk: &mut [f64]) {
        match self {
            Similarity::Dot => {
                for i in 0..u.len() {
                    du[i] += upstream * k[i];
                    dk[i] += upstream * u[i];
                }
            }
            Similarity::Cosine => {
                let nu = math::norm(u);
                let nk = math::norm(k);
                if nu == 0.0 || nk == 0.0 {
                    return;
                }
                let c = math::dot(u, k) / (nu * nk);
                let inv = 1.0 / (nu * nk);
                for i in 0..u.len() {
                    du[i] += upstream * (k[i] * inv - c * u[i] / (nu * nu));
                    dk[i] += upstream * (u[i] * inv - c * k[i] / (nk * nk));
                }
            }
        }
    }
}

/// Keys, prompts and (CODA mode) masks owned by one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBlock {
    /// `M x d_q`
    pub keys: Matrix,
    /// `M x d_p`
    pub prompts: Matrix,
    /// `M x d_q`, only in CODA mode.
    pub masks: Option<Matrix>,
    pub frozen: bool,
}

impl PromptBlock {
    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    /// The vector matched against key `i`: the query, masked in CODA mode.
    pub fn matched_query(&self, i: usize, query: &[f64], mode: AttentionMode) -> Vec<f64> {
        match (mode, &self.masks) {
            (AttentionMode::Coda, Some(m)) => {
                query.iter().zip(m.row(i)).map(|(q, a)| q * a).collect()
            }
            _ => query.to_vec(),
        }
    }
}

/// Attention weights over every prompt in the pool, grouped by task.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub values: Vec<f64>,
    pub per_task: usize,
    /// Set when the query was the zero vector (all weights defined as 0).
    pub degenerate_query: bool,
}

impl AttentionWeights {
    pub fn task(&self, t: usize) -> &[f64] {
        &self.values[t * self.per_task..(t + 1) * self.per_task]
    }

    pub fn tasks(&self) -> usize {
        self.values.len().checked_div(self.per_task).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPool {
    key_dim: usize,
    prompt_dim: usize,
    per_task: usize,
    blocks: Vec<PromptBlock>,
}

impl PromptPool {
    pub fn new(key_dim: usize, prompt_dim: usize, per_task: usize) -> Self {
        Self {
            key_dim,
            prompt_dim,
            per_task,
            blocks: Vec::new(),
        }
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn prompt_dim(&self) -> usize {
        self.prompt_dim
    }

    pub fn per_task(&self) -> usize {
        self.per_task
    }

    pub fn tasks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_prompts(&self) -> usize {
        self.blocks.len() * self.per_task
    }

    pub fn blocks(&self) -> &[PromptBlock] {
        &self.blocks
    }

    pub fn block(&self, t: usize) -> &PromptBlock {
        &self.blocks[t]
    }

    /// Mutable access to a block that has not been frozen.
    pub fn block_mut(&mut self, t: usize) -> Result<&mut PromptBlock, PromptError> {
        let b = &mut self.blocks[t];
        if b.frozen {
            Err(PromptError::Frozen(t))
        } else {
            Ok(b)
        }
    }

    /// Appends a new trainable block with keys, prompts (and masks) drawn
    /// uniformly from `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn expand<R: Rng>(&mut self, rng: &mut R, with_masks: bool) -> usize {
        let key_bound = 1.0 / math::sqrt(self.key_dim as f64);
        let prompt_bound = 1.0 / math::sqrt(self.prompt_dim as f64);
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Matrix::new(rows, cols, data).expect("finite init")
        };
        let keys = uniform(self.per_task, self.key_dim, key_bound);
        let prompts = uniform(self.per_task, self.prompt_dim, prompt_bound);
        let masks = with_masks.then(|| uniform(self.per_task, self.key_dim, key_bound));
        self.push_block(PromptBlock {
            keys,
            prompts,
            masks,
            frozen: false,
        })
    }

    /// Appends a block as-is (checkpoint loading). Returns its index.
    pub fn push_block(&mut self, block: PromptBlock) -> usize {
        assert_eq!(block.keys.shape(), (self.per_task, self.key_dim));
        assert_eq!(block.prompts.shape(), (self.per_task, self.prompt_dim));
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    pub fn freeze(&mut self, t: usize) {
        self.blocks[t].frozen = true;
    }

    /// Similarity of `query` to every key in the pool.
    pub fn attention_weights(
        &self,
        query: &[f64],
        mode: AttentionMode,
        similarity: Similarity,
    ) -> Result<AttentionWeights, PromptError> {
        if query.len() != self.key_dim {
            return Err(PromptError::QueryDim {
                expected: self.key_dim,
                got: query.len(),
            });
        }
        let mut values = Vec::with_capacity(self.total_prompts());
        for block in &self.blocks {
            for i in 0..block.len() {
                let u = block.matched_query(i, query, mode);
                values.push(similarity.eval(&u, block.keys.row(i)));
            }
        }
        Ok(AttentionWeights {
            values,
            per_task: self.per_task,
            degenerate_query: query.iter().all(|x| *x == 0.0),
        })
    }

    /// `sum_{t,i} alpha_{t,i} P^t_i`.
    pub fn compose_prompt(&self, weights: &AttentionWeights) -> Result<Vec<f64>, PromptError> {
        self.compose(&weights.values)
    }

    pub fn compose(&self, weights: &[f64]) -> Result<Vec<f64>, PromptError> {
        if weights.len() != self.total_prompts() {
            return Err(PromptError::WeightLen {
                expected: self.total_prompts(),
                got: weights.len(),
            });
        }
        let mut out = vec![0.0; self.prompt_dim];
        let mut w = weights.iter();
        for block in &self.blocks {
            for i in 0..block.len() {
                let a = *w.next().expect("length checked");
                if a == 0.0 {
                    continue;
                }
                for (o, p) in out.iter_mut().zip(block.prompts.row(i)) {
                    *o += a * p;
                }
            }
        }
        Ok(out)
    }

    /// Whether `self` extends `base`: same shapes and bit-identical shared
    /// blocks. Returns the first offending block otherwise.
    pub fn extends(&self, base: &PromptPool) -> Result<(), PromptError> {
        if self.key_dim != base.key_dim
            || self.prompt_dim != base.prompt_dim
            || self.per_task != base.per_task
        {
            return Err(PromptError::NotExtension { block: 0 });
        }
        if self.blocks.len() < base.blocks.len() {
            return Err(PromptError::NotExtension {
                block: self.blocks.len(),
            });
        }
        for (t, (a, b)) in base.blocks.iter().zip(&self.blocks).enumerate() {
            let same = a.keys == b.keys && a.prompts == b.prompts && a.masks == b.masks;
            if !same {
                return Err(PromptError::NotExtension { block: t });
            }
        }
        Ok(())
    }
}

/// Difference between the prompt composed for `query` by a later pool and by
/// the pool that existed when the query's task was trained.
pub fn mismatch(
    pool_at_train: &PromptPool,
    pool_at_test: &PromptPool,
    query: &[f64],
    mode: AttentionMode,
    similarity: Similarity,
) -> Result<Vec<f64>, PromptError> {
    pool_at_test.extends(pool_at_train)?;
    let train =
        pool_at_train.compose_prompt(&pool_at_train.attention_weights(query, mode, similarity)?)?;
    let test =
        pool_at_test.compose_prompt(&pool_at_test.attention_weights(query, mode, similarity)?)?;
    Ok(test.iter().zip(&train).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool_with(keys: Vec<Vec<f64>>, prompts: Vec<Vec<f64>>) -> PromptPool {
        let mut pool = PromptPool::new(keys[0].len(), prompts[0].len(), keys.len());
        pool.push_block(PromptBlock {
            keys: Matrix::from_rows(&keys).unwrap(),
            prompts: Matrix::from_rows(&prompts).unwrap(),
            masks: None,
            frozen: false,
        });
        pool
    }

    #[test]
    fn self_similarity_is_one() {
        let pool = pool_with(vec![vec![0.6, 0.8]], vec![vec![1.0]]);
        let w = pool
            .attention_weights(&[0.6, 0.8], AttentionMode::Koppa, Similarity::Cosine)
            .unwrap();
        assert!((w.values[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_query_gets_no_weight() {
        let pool = pool_with(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            vec![vec![1.0], vec![2.0]],
        );
        let w = pool
            .attention_weights(&[0.0, 0.0, 5.0], AttentionMode::Koppa, Similarity::Cosine)
            .unwrap();
        assert_eq!(w.values, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_query_is_flagged() {
        let pool = pool_with(vec![vec![1.0, 0.0]], vec![vec![1.0]]);
        let w = pool
            .attention_weights(&[0.0, 0.0], AttentionMode::Koppa, Similarity::Cosine)
            .unwrap();
        assert!(w.degenerate_query);
        assert_eq!(w.values, vec![0.0]);
    }

    #[test]
    fn query_dimension_checked() {
        let pool = pool_with(vec![vec![1.0, 0.0]], vec![vec![1.0]]);
        assert!(matches!(
            pool.attention_weights(&[1.0], AttentionMode::Koppa, Similarity::Cosine),
            Err(PromptError::QueryDim {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn compose_selects_and_sums() {
        let pool = pool_with(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
        );
        assert_eq!(pool.compose(&[0.0, 1.0, 0.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(pool.compose(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        // explicit summation oracle
        assert_eq!(
            pool.compose(&[1.0, 1.0, 1.0]).unwrap(),
            vec![1.0 + 3.0 + 5.0, 2.0 + 4.0 + 6.0]
        );
        assert!(matches!(
            pool.compose(&[1.0]),
            Err(PromptError::WeightLen { .. })
        ));
    }

    #[test]
    fn coda_mask_changes_the_match() {
        let mut pool = PromptPool::new(2, 1, 1);
        pool.push_block(PromptBlock {
            keys: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            prompts: Matrix::from_rows(&[vec![1.0]]).unwrap(),
            masks: Some(Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap()),
            frozen: false,
        });
        let q = [1.0, 1.0];
        let koppa = pool
            .attention_weights(&q, AttentionMode::Koppa, Similarity::Cosine)
            .unwrap();
        let coda = pool
            .attention_weights(&q, AttentionMode::Coda, Similarity::Cosine)
            .unwrap();
        assert!((koppa.values[0] - 1.0 / math::sqrt(2.0)).abs() < 1e-15);
        assert_eq!(coda.values[0], 0.0);
    }

    #[test]
    fn mismatch_is_contribution_of_new_blocks() {
        let train = pool_with(vec![vec![1.0, 0.0]], vec![vec![1.0, 1.0]]);
        assert_eq!(
            mismatch(
                &train,
                &train,
                &[1.0, 0.0],
                AttentionMode::Koppa,
                Similarity::Cosine
            )
            .unwrap(),
            vec![0.0, 0.0]
        );
        let mut test = train.clone();
        // cosine 0.5 with the query (1, 0)
        test.push_block(PromptBlock {
            keys: Matrix::from_rows(&[vec![0.5, math::sqrt(3.0) / 2.0]]).unwrap(),
            prompts: Matrix::from_rows(&[vec![2.0, -4.0]]).unwrap(),
            masks: None,
            frozen: false,
        });
        let d = mismatch(
            &train,
            &test,
            &[1.0, 0.0],
            AttentionMode::Koppa,
            Similarity::Cosine,
        )
        .unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] + 2.0).abs() < 1e-12);

        let mut perp = train.clone();
        perp.push_block(PromptBlock {
            keys: Matrix::from_rows(&[vec![0.0, 3.0]]).unwrap(),
            prompts: Matrix::from_rows(&[vec![2.0, -4.0]]).unwrap(),
            masks: None,
            frozen: false,
        });
        assert_eq!(
            mismatch(
                &train,
                &perp,
                &[1.0, 0.0],
                AttentionMode::Koppa,
                Similarity::Cosine
            )
            .unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn mismatch_rejects_unrelated_pools() {
        let a = pool_with(vec![vec![1.0, 0.0]], vec![vec![1.0]]);
        let b = pool_with(vec![vec![0.0, 1.0]], vec![vec![1.0]]);
        assert_eq!(
            mismatch(
                &a,
                &b,
                &[1.0, 0.0],
                AttentionMode::Koppa,
                Similarity::Cosine
            ),
            Err(PromptError::NotExtension { block: 0 })
        );
    }

    #[test]
    fn frozen_blocks_refuse_mutation() {
        let mut pool = PromptPool::new(4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        pool.expand(&mut rng, false);
        pool.freeze(0);
        assert_eq!(pool.block_mut(0).err(), Some(PromptError::Frozen(0)));
        let bound = 0.5;
        assert!(pool
            .block(0)
            .keys
            .as_slice()
            .iter()
            .all(|x| x.abs() <= bound));
    }
}
