use rand::Rng;

use crate::nn::Matrix;
use crate::{Error, Result};

/// One environment step as stored for off-policy learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Unique within a run; lets stored subsets be traced back to their source.
    pub id: u64,
    pub s: Vec<f64>,
    /// Continuous action, or a single slot holding a discrete index.
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    /// True termination; time-limit truncation is not stored as `d`.
    pub d: bool,
}

/// A sampled minibatch in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub s: Matrix,
    pub a: Matrix,
    pub r: Vec<f64>,
    pub s2: Matrix,
    pub d: Vec<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (ns, na) = (first.s.len(), first.a.len());
        for t in items {
            if t.s.len() != ns || t.s2.len() != ns {
                return Err(Error::shape("transition state", ns, t.s.len().max(t.s2.len())));
            }
            if t.a.len() != na {
                return Err(Error::shape("transition action", na, t.a.len()));
            }
        }
        Ok(Self {
            s: Matrix::from_rows(ns, items.iter().map(|t| t.s.as_slice()))?,
            a: Matrix::from_rows(na, items.iter().map(|t| t.a.as_slice()))?,
            r: items.iter().map(|t| t.r).collect(),
            s2: Matrix::from_rows(ns, items.iter().map(|t| t.s2.as_slice()))?,
            d: items.iter().map(|t| if t.d { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
            inserted: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes ever, including evicted items.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stored transitions in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.next = 0;
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::NotReady {
                len: self.items.len(),
                needed: batch_size.max(1),
            });
        }
        Ok((0..batch_size).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        let items: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&items)
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tr(id: u64) -> Transition {
        Transition {
            id,
            s: vec![id as f64],
            a: vec![0.0],
            r: id as f64,
            s2: vec![id as f64 + 1.0],
            d: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for i in 0..3 {
            b.push(tr(i));
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.inserted(), 3);
        let ids: Vec<u64> = b.iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn undersized_buffer_is_not_ready() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push(tr(0));
        let mut r = rng::stream(0, "t", 0);
        assert!(matches!(b.sample(2, &mut r), Err(Error::NotReady { len: 1, needed: 2 })));
    }

    #[test]
    fn uniform_sampling_chi_square() {
        let mut b = ReplayBuffer::new(4).unwrap();
        for i in 0..4 {
            b.push(tr(i));
        }
        let mut r = rng::stream(3, "chi", 0);
        let mut counts = [0usize; 4];
        for _ in 0..2500 {
            for i in b.sample_indices(4, &mut r).unwrap() {
                counts[i] += 1;
            }
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        // 3 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let mut b = ReplayBuffer::new(16).unwrap();
        for i in 0..16 {
            b.push(tr(i));
        }
        let x = b.sample(8, &mut rng::stream(5, "s", 0)).unwrap();
        let y = b.sample(8, &mut rng::stream(5, "s", 0)).unwrap();
        assert_eq!(x, y);
    }
}
