//! Per-task prototype storage replayed by the one-versus-all loss.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

/// A stored feature vector with its global class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub feature: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    Uniform,
    /// Round-robin over classes, uniform within each class.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeBuffer {
    tasks: Vec<Vec<Prototype>>,
}

impl PrototypeBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `min(n, features.len())` of the given end-of-task features,
    /// drawn without replacement, as a new closed task.
    pub fn capture<R: Rng>(
        &mut self,
        features: &[Prototype],
        n: usize,
        selection: Selection,
        rng: &mut R,
    ) -> usize {
        let take = n.min(features.len());
        let picked: Vec<usize> = match selection {
            Selection::Uniform => index::sample(rng, features.len(), take).into_vec(),
            Selection::Stratified => stratified(features, take, rng),
        };
        let stored: Vec<Prototype> = picked.into_iter().map(|i| features[i].clone()).collect();
        self.tasks.push(stored);
        take
    }

    /// Appends a closed task verbatim (checkpoint loading).
    pub fn push_task(&mut self, prototypes: Vec<Prototype>) {
        self.tasks.push(prototypes);
    }

    pub fn tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, t: usize) -> &[Prototype] {
        &self.tasks[t]
    }

    pub fn len(&self) -> usize {
        self.tasks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every stored prototype, task-major in insertion order.
    pub fn replay_all(&self) -> Vec<Prototype> {
        self.tasks.iter().flatten().cloned().collect()
    }

    /// Bytes taken by the stored feature vectors as `f64`.
    pub fn memory_bytes(&self) -> usize {
        self.tasks
            .iter()
            .flatten()
            .map(|p| p.feature.len() * core::mem::size_of::<f64>())
            .sum()
    }

    pub fn class_histogram(&self, t: usize) -> BTreeMap<usize, usize> {
        histogram(&self.tasks[t])
    }
}

pub fn histogram(items: &[Prototype]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for p in items {
        *h.entry(p.label).or_insert(0) += 1;
    }
    h
}

fn stratified<R: Rng>(features: &[Prototype], take: usize, rng: &mut R) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in features.iter().enumerate() {
        by_class.entry(p.label).or_default().push(i);
    }
    let mut queues: Vec<Vec<usize>> = by_class
        .into_values()
        .map(|idx| {
            let order = index::sample(rng, idx.len(), idx.len()).into_vec();
            order.into_iter().rev().map(|k| idx[k]).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        for q in queues.iter_mut() {
            if out.len() == take {
                break;
            }
            if let Some(i) = q.pop() {
                out.push(i);
            }
        }
    }
    out
}
