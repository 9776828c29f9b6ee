//! Discrete elliptic operators: the diffusion part `-div(p grad)` with
//! Dirichlet nodes eliminated, the (regularized or cut off) inverse-square
//! potential, and their difference `L`.

use crate::error::{Error, Result};
use crate::grid::{norm, Coefficient, Grid, Neighbor, Point, DIRECTIONS};
use crate::sparse::Csr;

/// Smooth cutoff equal to 1 on `|x| <= radius/2` and 0 on `|x| >= radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub radius: f64,
}

impl Cutoff {
    pub fn eval(&self, x: &Point) -> f64 {
        let r = norm(x);
        let inner = 0.5 * self.radius;
        if r <= inner {
            1.0
        } else if r >= self.radius {
            0.0
        } else {
            smooth_step((self.radius - r) / (self.radius - inner))
        }
    }
}

/// C-infinity step from 0 at `t <= 0` to 1 at `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = f(t);
    let b = f(1.0 - t);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    pub mu: f64,
    /// Regularization; zero selects the exact inverse-square potential.
    pub epsilon: f64,
    pub cutoff: Option<Cutoff>,
}

impl PotentialSpec {
    pub fn exact(mu: f64) -> Self {
        PotentialSpec {
            mu,
            epsilon: 0.0,
            cutoff: None,
        }
    }

    pub fn regularized(mu: f64, epsilon: f64) -> Self {
        PotentialSpec {
            mu,
            epsilon,
            cutoff: None,
        }
    }

    pub fn with_cutoff(mu: f64, cutoff: Cutoff) -> Self {
        PotentialSpec {
            mu,
            epsilon: 0.0,
            cutoff: Some(cutoff),
        }
    }

    /// Value of the potential at a point (without the cutoff factor).
    pub fn singular_part(&self, x: &Point) -> f64 {
        let r2 = x.iter().map(|c| c * c).sum::<f64>();
        self.mu / (r2 + self.epsilon * self.epsilon)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let v = self.singular_part(x);
        match self.cutoff {
            Some(c) => (1.0 - c.eval(x)) * v,
            None => v,
        }
    }
}

/// Symmetric 7-point assembly of `-div(p grad u)` with face coefficients
/// equal to the arithmetic mean of the two endpoint values.
pub fn assemble_diffusion(grid: &Grid, coeff: &Coefficient) -> Result<Csr> {
    if coeff.p.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: coeff.p.len(),
        });
    }
    let h2 = grid.h() * grid.h();
    let mut triplets = Vec::with_capacity(7 * grid.len());
    for i in 0..grid.len() {
        let pi = coeff.p[i];
        let mut diag = 0.0;
        for (slot, nb) in grid.neighbors(i).iter().enumerate() {
            match *nb {
                Neighbor::Interior(j) => {
                    let w = 0.5 * (pi + coeff.p[j]) / h2;
                    diag += w;
                    // one pass emits both triangles from the same value
                    if j > i {
                        triplets.push((i, j, -w));
                        triplets.push((j, i, -w));
                    }
                }
                Neighbor::Boundary { fraction } => {
                    let (axis, sign) = DIRECTIONS[slot];
                    let mut xb = *grid.point(i);
                    xb[axis] += sign * fraction * grid.h();
                    let w = 0.5 * (pi + coeff.spec.eval(&xb)) / (fraction * h2);
                    diag += w;
                }
            }
        }
        triplets.push((i, i, diag));
    }
    Ok(Csr::from_triplets(grid.len(), triplets))
}

/// Diagonal potential operator with nodal values of `spec`.
pub fn assemble_potential(grid: &Grid, spec: &PotentialSpec) -> Result<Csr> {
    if !(spec.epsilon >= 0.0) || !spec.mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid potential: mu = {}, epsilon = {}",
            spec.mu, spec.epsilon
        )));
    }
    let d: Vec<f64> = grid.points().iter().map(|x| spec.eval(x)).collect();
    Ok(Csr::diagonal_matrix(&d))
}

/// `L = diffusion - potential`.
pub fn assemble_l(diffusion: &Csr, potential: &Csr) -> Result<Csr> {
    diffusion.combine(1.0, potential, -1.0)
}

/// Diagonal matrix of `|x|^(-power)` at the nodes.
pub fn radial_weight(grid: &Grid, power: f64) -> Vec<f64> {
    grid.points().iter().map(|x| norm(x).powf(-power)).collect()
}
