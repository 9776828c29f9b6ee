//! Seeded randomness. Every random quantity in a run is drawn from one
//! `Pcg32` stream built with `seed_from_u64(seed)`; uniform deviates on
//! `[-1, 1)` are `next_u32() / 2^31 - 1`, which is easy to reproduce
//! outside Rust.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use crate::field::ScalarField;
use crate::grid::{distance, Grid, Point};

pub struct SeededRng(Pcg32);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(Pcg32::seed_from_u64(seed))
    }

    /// Uniform on `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        self.0.next_u32() as f64 / 2_147_483_648.0 - 1.0
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        0.5 * (self.symmetric() + 1.0)
    }

    /// Uniform on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Point uniformly distributed in the ball of radius `radius`.
    pub fn point_in_ball(&mut self, radius: f64) -> Point {
        loop {
            let p = [self.symmetric(), self.symmetric(), self.symmetric()];
            if p.iter().map(|c| c * c).sum::<f64>() < 1.0 {
                return p.map(|c| c * radius);
            }
        }
    }

    /// Nodal white noise with entries uniform on `[-1, 1)`.
    pub fn noise(&mut self, len: usize) -> ScalarField {
        ScalarField::new((0..len).map(|_| self.symmetric()).collect())
    }

    /// Smooth random field: a sum of `bumps` Gaussians with random centers
    /// inside the domain, widths in `[0.15, 0.35]` and amplitudes in
    /// `[-1, 1)`, normalized to unit `L^2`. Being defined pointwise it is the
    /// same function on every grid.
    pub fn smooth_field(&mut self, grid: &Grid, bumps: usize) -> ScalarField {
        let reach = 0.8 * grid.inradius();
        let params: Vec<(Point, f64, f64)> = (0..bumps.max(1))
            .map(|_| {
                let c = self.point_in_ball(reach);
                let w = self.range(0.15, 0.35);
                let a = self.symmetric();
                (c, w, a)
            })
            .collect();
        let f = grid.sample(|x| {
            params
                .iter()
                .map(|(c, w, a)| a * (-(distance(x, c) / w).powi(2)).exp())
                .sum()
        });
        let n = grid.l2_norm(&f);
        if n > 0.0 {
            f.scaled(1.0 / n)
        } else {
            f
        }
    }
}
