//! Limited-memory BFGS two-loop recursion.

use std::collections::VecDeque;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Curvature pairs `(s, y)` of one parameter field, newest last.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores the pair unless `s^T y` is not safely positive. Returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if !(sy > 1e-12 * scale) || !sy.is_finite() || self.capacity == 0 {
            log::debug!("skipping L-BFGS pair with s.y = {sy:e}");
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `-H g` with `H0 = gamma I`, `gamma = s^T y / y^T y` of the newest pair.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match self.pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0,
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        for v in q.iter_mut() {
            *v = -*v;
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_memory_is_steepest_descent() {
        let m = LbfgsMemory::new(15);
        assert_eq!(m.direction(&[1.0, -2.0]), vec![-1.0, 2.0]);
    }

    #[test]
    fn one_pair_satisfies_secant() {
        let d = [1.0, 10.0];
        let s = vec![0.3, -0.7];
        let y: Vec<f64> = s.iter().zip(d).map(|(a, b)| a * b).collect();
        let mut m = LbfgsMemory::new(5);
        assert!(m.push(s.clone(), y.clone()));
        let hy = m.direction(&y);
        for (a, b) in hy.iter().zip(&s) {
            assert!((a + b).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_curvature_is_skipped_and_capacity_respected() {
        let mut m = LbfgsMemory::new(2);
        assert!(!m.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(!m.push(vec![1.0, 0.0], vec![0.0, 1.0]));
        for i in 0..4 {
            assert!(m.push(vec![1.0, i as f64], vec![2.0, i as f64]));
        }
        assert_eq!(m.len(), 2);
        let g = [0.4, -1.3];
        let s = m.direction(&g);
        assert!(dot(&s, &g) < 0.0);
    }
}
