//! Nodal fields over the interior nodes and the discrete norms used
//! throughout: `L^2` with weight `h^3` per node and the `H^1` norm built from
//! the `p = 1` diffusion form.

use std::ops::{Index, IndexMut};

use crate::grid::{Grid, Neighbor};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField(Vec<f64>);

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        ScalarField(values)
    }

    pub fn zeros(len: usize) -> Self {
        ScalarField(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, a: f64) -> Self {
        ScalarField(self.0.iter().map(|v| a * v).collect())
    }

    /// Zeroes every entry where `mask` is false.
    pub fn masked(&self, mask: &[bool]) -> Self {
        ScalarField(self.0.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for ScalarField {
    fn from(v: Vec<f64>) -> Self {
        ScalarField(v)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Grid {
    /// `L^2(Omega)` inner product (nodal rule).
    pub fn inner(&self, a: &ScalarField, b: &ScalarField) -> f64 {
        self.cell_volume() * dot(a.values(), b.values())
    }

    pub fn l2_norm(&self, a: &ScalarField) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// `L^2` norm over the nodes selected by `mask`.
    pub fn l2_norm_on(&self, a: &ScalarField, mask: &[bool]) -> f64 {
        let s: f64 = a.values().iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum();
        (self.cell_volume() * s).sqrt()
    }

    /// Squared discrete `H^1` norm restricted to the nodes in `mask`: the `L^2`
    /// part sums over masked nodes, the gradient part over lattice links whose
    /// two endpoints are both masked. Links to eliminated boundary nodes count
    /// when the interior endpoint is masked, with the cut-cell length.
    pub fn h1_norm_sq_on(&self, a: &ScalarField, mask: &[bool]) -> f64 {
        let h2 = self.h() * self.h();
        let mut grad = 0.0;
        let mut mass = 0.0;
        for i in 0..self.len() {
            if !mask[i] {
                continue;
            }
            let ui = a[i];
            mass += ui * ui;
            for nb in self.neighbors(i) {
                match *nb {
                    // each interior link is visited from both ends
                    Neighbor::Interior(j) if mask[j] => {
                        let d = ui - a[j];
                        grad += 0.5 * d * d / h2;
                    }
                    Neighbor::Interior(_) => {}
                    Neighbor::Boundary { fraction } => grad += ui * ui / (fraction * h2),
                }
            }
        }
        self.cell_volume() * (grad + mass)
    }

    pub fn h1_norm(&self, a: &ScalarField) -> f64 {
        let all = vec![true; self.len()];
        self.h1_norm_sq_on(a, &all).sqrt()
    }

    /// Nodal estimate of `|grad u|^2`: half the sum of squared one-sided
    /// differences over the six links (zero Dirichlet value at cut links).
    pub fn grad_sq_nodal(&self, a: &[f64]) -> Vec<f64> {
        let h = self.h();
        (0..self.len())
            .map(|i| {
                let mut s = 0.0;
                for nb in self.neighbors(i) {
                    let d = match *nb {
                        Neighbor::Interior(j) => (a[j] - a[i]) / h,
                        Neighbor::Boundary { fraction } => -a[i] / (fraction * h),
                    };
                    s += d * d;
                }
                0.5 * s
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DomainShape, Grid};

    #[test]
    fn constant_field_l2() {
        let g = Grid::build(1.0, 16, DomainShape::Box).unwrap();
        let one = ScalarField::new(vec![1.0; g.len()]);
        let expect = (g.len() as f64 * g.cell_volume()).sqrt();
        assert!((g.l2_norm(&one) - expect).abs() < 1e-14);
    }

    #[test]
    fn restricted_h1_of_zero_and_disjoint_support() {
        let g = Grid::build(1.0, 16, DomainShape::Ball).unwrap();
        let z = ScalarField::zeros(g.len());
        let all = vec![true; g.len()];
        assert_eq!(g.h1_norm_sq_on(&z, &all), 0.0);
        // supported in |x| < 0.15, measured outside 0.3: no shared links
        let inner = g.sample(|x| if crate::grid::norm(x) < 0.15 { 1.0 } else { 0.0 });
        let outside: Vec<bool> = g.points().iter().map(|x| crate::grid::norm(x) > 0.3).collect();
        assert_eq!(g.h1_norm_sq_on(&inner, &outside), 0.0);
    }

    #[test]
    fn grad_sq_of_linear_function() {
        let g = Grid::build(1.0, 16, DomainShape::Box).unwrap();
        let u = g.sample(|x| 2.0 * x[0] - x[1]);
        let gs = g.grad_sq_nodal(u.values());
        // interior nodes away from faces see the exact gradient
        for i in 0..g.len() {
            let interior = g.neighbors(i).iter().all(|n| matches!(n, Neighbor::Interior(_)));
            if interior {
                assert!((gs[i] - 5.0).abs() < 1e-10);
            }
        }
    }
}
