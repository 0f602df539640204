//! Limited-memory BFGS state for a single row.

use std::collections::VecDeque;

/// Pairs with `sᵀy` at or below this are discarded.
pub const CURVATURE_EPS: f64 = 1e-10;

#[derive(Clone, Debug)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

#[derive(Clone, Debug)]
pub struct LbfgsState {
    memory: usize,
    pairs: VecDeque<Pair>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LbfgsState {
    pub fn new(memory: usize, x: Vec<f64>, g: Vec<f64>) -> Self {
        assert_eq!(x.len(), g.len());
        Self {
            memory: memory.max(1),
            pairs: VecDeque::with_capacity(memory),
            x,
            g,
        }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(s, y)` for each stored pair, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs.iter().map(|p| (p.s.as_slice(), p.y.as_slice()))
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
    }

    /// `γ = sᵀy / yᵀy` from the newest pair, 1 with empty memory.
    pub fn gamma(&self) -> f64 {
        match self.pairs.back() {
            Some(p) => dot(&p.s, &p.y) / dot(&p.y, &p.y),
            None => 1.0,
        }
    }

    /// `−H g` with `H` given implicitly by the two-loop recursion.
    pub fn apply_inverse_hessian(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for p in self.pairs.iter().rev() {
            let a = p.rho * dot(&p.s, &q);
            for (qi, yi) in q.iter_mut().zip(&p.y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = self.gamma();
        let mut r: Vec<f64> = q.iter().map(|v| gamma * v).collect();
        for (p, a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = p.rho * dot(&p.y, &r);
            for (ri, si) in r.iter_mut().zip(&p.s) {
                *ri += (a - b) * si;
            }
        }
        r.iter_mut().for_each(|v| *v = -*v);
        r
    }

    pub fn direction(&self) -> Vec<f64> {
        self.apply_inverse_hessian(&self.g)
    }

    /// Moves to `(x_new, g_new)` and stores the difference pair if it
    /// satisfies the curvature guard. Returns whether the pair was kept.
    pub fn update(&mut self, x_new: Vec<f64>, g_new: Vec<f64>) -> bool {
        let s: Vec<f64> = x_new.iter().zip(&self.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&self.g).map(|(a, b)| a - b).collect();
        self.x = x_new;
        self.g = g_new;
        let sy = dot(&s, &y);
        if !(sy > CURVATURE_EPS) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(Pair { s, y, rho: 1.0 / sy });
        true
    }
}
