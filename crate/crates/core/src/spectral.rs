//! Bottom of the spectrum: shifted inverse iteration, discrete Hardy and
//! improved-Hardy constants, and the regularized-potential sweep with the
//! lower bound on the stabilization cost.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::field::{dot, norm2, ScalarField};
use crate::grid::{hardy_critical, norm, Coefficient, Grid, RegionMasks};
use crate::operators::{assemble_diffusion, assemble_l, assemble_potential, radial_weight, PotentialSpec};
use crate::grid::CoefficientSpec;
use crate::solver::{conjugate_gradient, CgError, CgSettings};
use crate::sparse::Csr;

/// Relative eigen-residual target: `|A phi - lambda phi| <= 1e-8 (1 + |lambda|)`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
const MAX_OUTER: usize = 5000;
const INNER_TOL: f64 = 1e-13;
const SHIFT_RETRIES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub lambda0: f64,
    pub phi0: ScalarField,
    /// `|A phi0 - lambda0 phi0| / |phi0|`.
    pub residual: f64,
    pub iterations: usize,
    pub shift: f64,
}

/// Smallest eigenpair of a symmetric matrix by shifted inverse iteration.
///
/// The shift defaults to the Gershgorin lower bound minus one, so
/// `A - shift I` is positive definite and each step is a CG solve. Every
/// step is followed by a Rayleigh-Ritz projection onto the span of the new
/// and previous iterates, which keeps the iteration an inverse iteration
/// while removing most of the slow tail when the shift sits far below
/// `lambda0`. The returned vector has unit Euclidean norm and nonnegative sum.
pub fn smallest_eigenpair(a: &Csr, shift_hint: Option<f64>) -> Result<EigenResult> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("empty operator".into()));
    }
    let mut shift = shift_hint.unwrap_or_else(|| a.gershgorin_lower() - 1.0);
    for _ in 0..SHIFT_RETRIES {
        match inverse_iteration(a, shift) {
            Err(Error::ShiftInsideSpectrum { .. }) => {
                shift -= shift.abs().max(1.0);
            }
            other => return other,
        }
    }
    Err(Error::ShiftInsideSpectrum { shift })
}

fn inverse_iteration(a: &Csr, shift: f64) -> Result<EigenResult> {
    let n = a.dim();
    let shifted = a.shifted(-shift);
    let inv_diag: Vec<f64> = shifted
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let settings = CgSettings::new(INNER_TOL, 20 * n + 100);

    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut prev: Option<Vec<f64>> = None;
    let mut lambda = dot(&x, &a.mul(&x));
    let mut y = vec![0.0; n];

    for it in 1..=MAX_OUTER {
        // warm start: (A - s)^{-1} x ~ x / (lambda - s)
        let gap = (lambda - shift).max(1e-300);
        y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi = xi / gap);
        match conjugate_gradient(
            |v, out| {
                shifted.apply(v, out);
                Ok(())
            },
            Some(&inv_diag),
            &x,
            &mut y,
            settings,
        ) {
            Ok(_) => {}
            Err(CgError::Indefinite { .. }) => return Err(Error::ShiftInsideSpectrum { shift }),
            Err(CgError::MaxIterations { relative_residual, .. })
            | Err(CgError::Stalled { relative_residual, .. }) => {
                // inexact step; accept if it still made progress
                if !(relative_residual < 1e-6) {
                    return Err(Error::NoConvergence {
                        iterations: it,
                        residual: relative_residual,
                    });
                }
            }
            Err(CgError::Apply(e)) => return Err(e),
        }
        let mut next = normalized(&y);
        if let Some(p) = &prev {
            if let Some(ritz) = ritz_pair(a, &next, p) {
                next = ritz;
            }
        }
        let ax = a.mul(&next);
        lambda = dot(&next, &ax);
        let residual = norm2(&ax.iter().zip(&next).map(|(u, v)| u - lambda * v).collect::<Vec<_>>());
        prev = Some(std::mem::replace(&mut x, next));
        if residual <= EIGEN_RESIDUAL_TOL * (1.0 + lambda.abs()) {
            if x.iter().sum::<f64>() < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
            return Ok(EigenResult {
                lambda0: lambda,
                phi0: ScalarField::new(x),
                residual,
                iterations: it,
                shift,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_OUTER,
        residual: f64::NAN,
    })
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s = norm2(v);
    v.iter().map(|x| x / s).collect()
}

/// Lowest Ritz vector of `a` in `span{u, w}` (`u` unit).
fn ritz_pair(a: &Csr, u: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let c = dot(u, w);
    let mut q: Vec<f64> = w.iter().zip(u).map(|(wi, ui)| wi - c * ui).collect();
    let qn = norm2(&q);
    if qn < 1e-8 {
        return None;
    }
    q.iter_mut().for_each(|v| *v /= qn);
    let au = a.mul(u);
    let aq = a.mul(&q);
    let h11 = dot(u, &au);
    let h12 = dot(u, &aq);
    let h22 = dot(&q, &aq);
    // smallest eigenvector of [[h11, h12], [h12, h22]]
    let mean = 0.5 * (h11 + h22);
    let rad = (0.25 * (h11 - h22).powi(2) + h12 * h12).sqrt();
    let low = mean - rad;
    let (cu, cq) = if h12.abs() > 0.0 {
        (h12, low - h11)
    } else if h11 <= h22 {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let s = (cu * cu + cq * cq).sqrt();
    let v: Vec<f64> = u.iter().zip(&q).map(|(a, b)| (cu * a + cq * b) / s).collect();
    Some(v)
}

/// Rescales a unit Euclidean eigenvector to unit `L^2(Omega)` norm.
fn to_l2_unit(grid: &Grid, mut res: EigenResult) -> EigenResult {
    let scale = 1.0 / grid.cell_volume().sqrt();
    res.phi0 = res.phi0.scaled(scale);
    res
}

/// Bottom eigenpair of a grid operator with `phi0` normalized in `L^2(Omega)`.
pub fn grid_eigenpair(grid: &Grid, op: &Csr) -> Result<EigenResult> {
    if op.dim() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: op.dim(),
        });
    }
    smallest_eigenpair(op, None).map(|r| to_l2_unit(grid, r))
}

fn unit_diffusion(grid: &Grid) -> Result<Csr> {
    let c = Coefficient::build(grid, CoefficientSpec::Constant(1.0))?;
    assemble_diffusion(grid, &c)
}

/// Discrete Hardy constant: smallest `nu` with `A u = nu M u`, `A` the
/// `p = 1` diffusion operator and `M = diag(1/|x|^2)`. Solved in standard
/// form `D A D v = nu v` with `D = diag(|x|)`.
pub fn hardy_constant(grid: &Grid) -> Result<f64> {
    hardy_eigenpair(grid).map(|r| r.lambda0)
}

pub fn hardy_eigenpair(grid: &Grid) -> Result<EigenResult> {
    let a = unit_diffusion(grid)?;
    let d: Vec<f64> = grid.points().iter().map(norm).collect();
    smallest_eigenpair(&a.congruence(&d), None)
}

/// Same as [`hardy_constant`] with `M` built from the average of `1/|x|^2`
/// over each node's cell (`samples^3` midpoint points) instead of the nodal
/// value.
pub fn hardy_constant_cell_averaged(grid: &Grid, samples: usize) -> Result<f64> {
    let a = unit_diffusion(grid)?;
    let h = grid.h();
    let offsets: Vec<f64> = (0..samples).map(|k| ((k as f64 + 0.5) / samples as f64 - 0.5) * h).collect();
    let d: Vec<f64> = grid
        .points()
        .iter()
        .map(|x| {
            let mut s = 0.0;
            for &a in &offsets {
                for &b in &offsets {
                    for &c in &offsets {
                        let y = [x[0] + a, x[1] + b, x[2] + c];
                        s += 1.0 / y.iter().map(|v| v * v).sum::<f64>();
                    }
                }
            }
            let mean = s / (samples * samples * samples) as f64;
            1.0 / mean.sqrt()
        })
        .collect();
    smallest_eigenpair(&a.congruence(&d), None).map(|r| r.lambda0)
}

/// Smallest `K0` with `mu* M_2 + l M_gamma <= A + K0 I` on the grid, i.e.
/// minus the smallest eigenvalue of `A - mu* M_2 - l M_gamma`. A nonpositive
/// value means `K0 = 0` already suffices.
pub fn improved_hardy_k0(grid: &Grid, gamma: f64, l: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must lie in (0, 2)")));
    }
    if !(l >= 0.0) {
        return Err(Error::InvalidArgument(format!("l = {l} must be nonnegative")));
    }
    let a = unit_diffusion(grid)?;
    let m2 = radial_weight(grid, 2.0);
    let mg = radial_weight(grid, gamma);
    let mu_star = hardy_critical();
    let d: Vec<f64> = m2.iter().zip(&mg).map(|(a2, ag)| mu_star * a2 + l * ag).collect();
    let op = a.combine(1.0, &Csr::diagonal_matrix(&d), -1.0)?;
    smallest_eigenpair(&op, None).map(|r| -r.lambda0)
}

/// Discrete `H^1` norm of `phi` outside `B(0, tau)`.
pub fn concentration_norm(grid: &Grid, phi: &ScalarField, tau: f64) -> Result<f64> {
    if !(tau > 2.0 * grid.h()) {
        return Err(Error::InvalidArgument(format!(
            "tau = {tau} must exceed 2h = {}",
            2.0 * grid.h()
        )));
    }
    let outside: Vec<bool> = grid.points().iter().map(|x| norm(x) > tau).collect();
    Ok(grid.h1_norm_sq_on(phi, &outside).sqrt())
}

/// Lower bound on the regularized stabilization cost for initial datum
/// `phi0`: `min{ (e^{2|l|T} - 1)/(16|l|), |l| (1 - e^{-2|l|T}) / (4 |phi0|^2_{H^1(omega)}) }`.
/// Both branches are compared in log space; `value` is `exp(ln_value)` and
/// saturates to infinity when the bound exceeds the `f64` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostLowerBound {
    pub value: f64,
    pub ln_value: f64,
}

pub fn j_lower_bound(lambda0: f64, horizon: f64, h1_omega_sq: f64) -> CostLowerBound {
    let a = lambda0.abs();
    let x = 2.0 * a * horizon;
    // ln((e^x - 1) / (16 a)) = x + ln(1 - e^{-x}) - ln(16 a)
    let ln_growth = x + (-(-x).exp_m1()).ln() - (16.0 * a).ln();
    let ln_obs = if h1_omega_sq > 0.0 {
        a.ln() + (-(-x).exp_m1()).ln() - (4.0 * h1_omega_sq).ln()
    } else {
        f64::INFINITY
    };
    let ln_value = ln_growth.min(ln_obs);
    CostLowerBound {
        value: ln_value.exp(),
        ln_value,
    }
}

/// Smallest radial Dirichlet eigenvalue of `-Delta - mu/|x|^2` on the ball
/// of radius `radius`, by shooting on `v = r u`. In `s = ln r` the equation
/// is `v'' - v' + (lambda r^2 + mu) v = 0`, started from the regular branch
/// `v ~ r^{a+1}`, `a = -1/2 + sqrt(1/4 - mu)`, and integrated with RK4.
/// `lambda` is bisected on whether `v` vanishes before `radius`.
pub fn radial_shooting_eigenvalue(mu: f64, radius: f64) -> Result<f64> {
    let mu_star = hardy_critical();
    if !(mu >= 0.0 && mu < mu_star) {
        return Err(Error::MuOutOfRange {
            mu,
            reason: format!("radial shooting needs 0 <= mu < mu* = {mu_star}"),
        });
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius = {radius} must be positive")));
    }
    let a = -0.5 + (0.25 - mu).sqrt();
    let s0 = (radius * 1e-8).ln();
    let s1 = radius.ln();
    let steps = 40_000;
    let ds = (s1 - s0) / steps as f64;
    let crosses = |lambda: f64| -> bool {
        let rhs = |s: f64, v: f64, w: f64| -> (f64, f64) {
            let r2 = (2.0 * s).exp();
            (w, w - (lambda * r2 + mu) * v)
        };
        let r0 = s0.exp();
        let (mut v, mut w) = (r0.powf(a + 1.0), (a + 1.0) * r0.powf(a + 1.0));
        for k in 0..steps {
            let s = s0 + k as f64 * ds;
            let (k1v, k1w) = rhs(s, v, w);
            let (k2v, k2w) = rhs(s + 0.5 * ds, v + 0.5 * ds * k1v, w + 0.5 * ds * k1w);
            let (k3v, k3w) = rhs(s + 0.5 * ds, v + 0.5 * ds * k2v, w + 0.5 * ds * k2w);
            let (k4v, k4w) = rhs(s + ds, v + ds * k3v, w + ds * k3w);
            v += ds / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            w += ds / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
            if v <= 0.0 {
                return true;
            }
        }
        false
    };
    let (mut lo, mut hi) = (0.0, 1.0 / (radius * radius));
    while !crosses(hi) {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if crosses(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub epsilon: f64,
    pub lambda0: f64,
    pub residual: f64,
    pub concentration_norm: f64,
    pub tau: f64,
    pub h1_omega_norm: f64,
    pub j_lower_bound: f64,
    pub ln_j_lower_bound: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Reject `mu <= p2 mu*` (the blow-up regime hypothesis).
    pub require_supercritical: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            require_supercritical: true,
        }
    }
}

/// Bottom eigenpairs of `L^eps = -div(p grad) - mu/(|x|^2 + eps^2)` along a
/// decreasing list of `eps`, with concentration norms and the cost bound.
pub fn spectral_sweep(
    grid: &Grid,
    coeff: &Coefficient,
    masks: &RegionMasks,
    mu: f64,
    eps_list: &[f64],
    tau: f64,
    horizon: f64,
    options: SweepOptions,
) -> Result<Vec<SweepRecord>> {
    let mu_star = hardy_critical();
    if options.require_supercritical && !(mu > coeff.p2 * mu_star) {
        return Err(Error::MuOutOfRange {
            mu,
            reason: format!(
                "the blow-up sweep assumes mu > p2 mu* = {:.6}",
                coeff.p2 * mu_star
            ),
        });
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("eps_list must be strictly decreasing".into()));
    }
    if let Some(&eps) = eps_list.iter().find(|&&e| e < grid.h()) {
        return Err(Error::ResolutionGuard { epsilon: eps, h: grid.h() });
    }
    let diffusion = assemble_diffusion(grid, coeff)?;
    let mut out = Vec::with_capacity(eps_list.len());
    for &epsilon in eps_list {
        let start = Instant::now();
        let potential = assemble_potential(grid, &PotentialSpec::regularized(mu, epsilon))?;
        let l = assemble_l(&diffusion, &potential)?;
        let eig = grid_eigenpair(grid, &l)?;
        let conc = concentration_norm(grid, &eig.phi0, tau)?;
        let h1_omega_sq = grid.h1_norm_sq_on(&eig.phi0, &masks.omega);
        let bound = j_lower_bound(eig.lambda0, horizon, h1_omega_sq);
        out.push(SweepRecord {
            epsilon,
            lambda0: eig.lambda0,
            residual: eig.residual,
            concentration_norm: conc,
            tau,
            h1_omega_norm: h1_omega_sq.sqrt(),
            j_lower_bound: bound.value,
            ln_j_lower_bound: bound.ln_value,
            iterations: eig.iterations,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainShape;

    #[test]
    fn shooting_reproduces_bessel_zeros() {
        // mu = 0: sin(sqrt(l) r)/r, so l = pi^2 / R^2
        let l = radial_shooting_eigenvalue(0.0, 1.0).unwrap();
        assert!((l - std::f64::consts::PI.powi(2)).abs() < 1e-6, "{l}");
        let l2 = radial_shooting_eigenvalue(0.0, 2.0).unwrap();
        assert!((4.0 * l2 - l).abs() < 1e-6);
        // mu = 3/16: a = -1/4, u = J_{1/4}(k r) r^{-1/2}, first zero of J_{1/4} = 2.7808877
        let j = 2.780_887_7_f64;
        let l3 = radial_shooting_eigenvalue(3.0 / 16.0, 1.0).unwrap();
        assert!((l3 - j * j).abs() < 1e-4 * j * j, "{l3}");
        assert!(radial_shooting_eigenvalue(0.3, 1.0).is_err());
    }

    #[test]
    fn diagonal_spectrum() {
        let a = Csr::diagonal_matrix(&[1.0, 2.0, 3.0]);
        let r = smallest_eigenpair(&a, None).unwrap();
        assert!((r.lambda0 - 1.0).abs() < 1e-10);
        assert!((r.phi0[0] - 1.0).abs() < 1e-8);
        assert!(r.phi0[1].abs() < 1e-8 && r.phi0[2].abs() < 1e-8);
    }

    #[test]
    fn tridiagonal_matches_closed_form() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = Csr::from_triplets(n, t);
        let r = smallest_eigenpair(&a, None).unwrap();
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((r.lambda0 - exact).abs() < 1e-10);
        assert!(r.phi0.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn residual_and_rayleigh_consistency() {
        let g = Grid::build(1.0, 12, DomainShape::Ball).unwrap();
        let c = Coefficient::build(&g, CoefficientSpec::RadialBump { amplitude: 0.2, width: 0.5 }).unwrap();
        let a = assemble_diffusion(&g, &c).unwrap();
        let r = grid_eigenpair(&g, &a).unwrap();
        assert!(r.lambda0 > 0.0);
        assert!((g.l2_norm(&r.phi0) - 1.0).abs() < 1e-12);
        let ap = a.mul(r.phi0.values());
        let rq = dot(r.phi0.values(), &ap) / dot(r.phi0.values(), r.phi0.values());
        assert!((rq - r.lambda0).abs() <= 1e-10 * r.lambda0.abs());
        let res: Vec<f64> = ap.iter().zip(r.phi0.values()).map(|(u, v)| u - r.lambda0 * v).collect();
        let rel = norm2(&res) / norm2(r.phi0.values());
        assert!(rel <= EIGEN_RESIDUAL_TOL * (1.0 + r.lambda0.abs()));
    }

    #[test]
    fn cost_bound_formula() {
        let b = j_lower_bound(-2.0, 1.0, 0.1);
        let growth = (4f64.exp() - 1.0) / 32.0;
        let obs = 2.0 * (1.0 - (-4f64).exp()) / 0.4;
        assert!((growth - 1.6749).abs() < 1e-4);
        assert!((obs - 4.9084).abs() < 1e-4);
        assert!((b.value - growth).abs() < 1e-12);
        // huge |lambda| stays finite in log space
        let big = j_lower_bound(-1e4, 1.0, 1e-3);
        assert!(big.ln_value.is_finite());
    }

    #[test]
    fn k0_monotone_in_l() {
        let g = Grid::build(1.0, 12, DomainShape::Ball).unwrap();
        let k0 = improved_hardy_k0(&g, 1.0, 0.0).unwrap();
        let k1 = improved_hardy_k0(&g, 1.0, 1.0).unwrap();
        let k2 = improved_hardy_k0(&g, 1.0, 2.0).unwrap();
        assert!(k0 <= 0.0);
        assert!(k2 >= k1);
        assert!(matches!(improved_hardy_k0(&g, 2.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sweep_guards() {
        let g = Grid::build(1.0, 16, DomainShape::Ball).unwrap();
        let c = Coefficient::build(&g, CoefficientSpec::Constant(1.0)).unwrap();
        let m = RegionMasks::build(&g, crate::grid::OmegaSpec::default_annulus(), 0.2).unwrap();
        let opts = SweepOptions::default();
        assert!(matches!(
            spectral_sweep(&g, &c, &m, 0.2, &[0.2], 0.3, 1.0, opts),
            Err(Error::MuOutOfRange { .. })
        ));
        assert!(matches!(
            spectral_sweep(&g, &c, &m, 0.5, &[0.2, 0.1], 0.3, 1.0, opts),
            Err(Error::ResolutionGuard { .. })
        ));
        assert!(matches!(
            spectral_sweep(&g, &c, &m, 0.5, &[0.2, 0.3], 0.3, 1.0, opts),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn concentration_norm_edge_cases() {
        let g = Grid::build(1.0, 16, DomainShape::Ball).unwrap();
        let z = ScalarField::zeros(g.len());
        assert_eq!(concentration_norm(&g, &z, 0.3).unwrap(), 0.0);
        let inner = g.sample(|x| if norm(x) < 0.15 { 1.0 } else { 0.0 });
        assert_eq!(concentration_norm(&g, &inner, 0.3).unwrap(), 0.0);
        assert!(concentration_norm(&g, &z, 0.2).is_err());
    }
}
