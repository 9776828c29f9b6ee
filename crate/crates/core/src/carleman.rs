//! Carleman weights for the singular heat operator: the weight function
//! `psi`, the time blow-up factor `theta`, `phi = e^{lambda psi}` and
//! `sigma = s theta (e^{2 lambda sup psi} - |x|^2/2 - phi)`, their analytic
//! derivatives, a numerical evaluation of both sides of the Carleman
//! inequality along discrete trajectories, and a lower estimate of the
//! observability constant.

use crate::error::{Error, Result};
use crate::evolution::{ThetaStepper, TimeGrid, Trajectory};
use crate::field::{dot, norm2, ScalarField};
use crate::grid::{norm, Grid, Neighbor, OmegaSpec, Point, RegionMasks, DIM, DIRECTIONS};
use crate::hum::Gram;
use crate::operators::smooth_step;
use crate::report::{fmt_f64, Table};
use crate::rng::SeededRng;
use crate::sparse::Csr;

pub type Matrix3 = [[f64; DIM]; DIM];

/// Default lower bound for `|grad psi|` outside `omega0`.
pub const DELTA_FLOOR: f64 = 1e-4;

/// Quintic Hermite interpolant on `[start, start + width]` from value, first
/// and second derivative at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Quintic {
    start: f64,
    width: f64,
    // p0, H m0, H^2 a0, p1, H m1, H^2 a1
    c: [f64; 6],
}

impl Quintic {
    fn new(start: f64, end: f64, left: [f64; 3], right: [f64; 3]) -> Self {
        let h = end - start;
        Quintic {
            start,
            width: h,
            c: [left[0], h * left[1], h * h * left[2], right[0], h * right[1], h * h * right[2]],
        }
    }

    fn basis(t: f64, order: usize) -> [f64; 6] {
        let (t2, t3, t4, t5) = (t * t, t * t * t, t * t * t * t, t * t * t * t * t);
        match order {
            0 => [
                1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
                t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
                0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5),
                10.0 * t3 - 15.0 * t4 + 6.0 * t5,
                -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
                0.5 * (t3 - 2.0 * t4 + t5),
            ],
            1 => [
                -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
                1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
                0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4),
                30.0 * t2 - 60.0 * t3 + 30.0 * t4,
                -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
                0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4),
            ],
            2 => [
                -60.0 * t + 180.0 * t2 - 120.0 * t3,
                -36.0 * t + 96.0 * t2 - 60.0 * t3,
                0.5 * (2.0 - 18.0 * t + 36.0 * t2 - 20.0 * t3),
                60.0 * t - 180.0 * t2 + 120.0 * t3,
                -24.0 * t + 84.0 * t2 - 60.0 * t3,
                0.5 * (6.0 * t - 24.0 * t2 + 20.0 * t3),
            ],
            // antiderivatives vanishing at t = 0
            _ => {
                let t6 = t3 * t3;
                [
                    t - 2.5 * t4 + 3.0 * t5 - t6,
                    0.5 * t2 - 1.5 * t4 + 1.6 * t5 - 0.5 * t6,
                    0.5 * (t3 / 3.0 - 0.75 * t4 + 0.6 * t5 - t6 / 6.0),
                    2.5 * t4 - 3.0 * t5 + t6,
                    -t4 + 1.4 * t5 - 0.5 * t6,
                    0.5 * (0.25 * t4 - 0.4 * t5 + t6 / 6.0),
                ]
            }
        }
    }

    /// Derivative of order `order` (0..=2) at `x`.
    fn eval(&self, x: f64, order: usize) -> f64 {
        let t = (x - self.start) / self.width;
        let b = Self::basis(t, order);
        let s: f64 = b.iter().zip(&self.c).map(|(b, c)| b * c).sum();
        s / self.width.powi(order as i32)
    }

    /// `int_start^x`.
    fn integral(&self, x: f64) -> f64 {
        let t = (x - self.start) / self.width;
        let b = Self::basis(t, 3);
        self.width * b.iter().zip(&self.c).map(|(b, c)| b * c).sum::<f64>()
    }
}

/// Radial weight profile `g`: `ln(rho / r)` on `[0, r]`; on `[r, 1]` its
/// derivative is a C^2 pair of quintics, positive up to the peak radius,
/// zero there with slope `-peak_slope`, negative after, with the outer
/// value chosen so that `g(1) = 0`. The resulting `g` is C^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProfile {
    pub r: f64,
    pub peak: f64,
    pub peak_slope: f64,
    /// `g'(1)`.
    pub outer_slope: f64,
    rise: Quintic,
    fall: Quintic,
    peak_value: f64,
}

impl RadialProfile {
    pub fn new(r: f64, peak: f64, peak_slope: f64) -> Result<Self> {
        if !(0.0 < r && r < peak && peak < 1.0 && peak_slope > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radial profile needs 0 < r < peak < 1 and a positive slope (r={r}, peak={peak}, slope={peak_slope})"
            )));
        }
        let rise = Quintic::new(r, peak, [1.0 / r, -1.0 / (r * r), 2.0 / (r * r * r)], [0.0, -peak_slope, 0.0]);
        let peak_value = rise.integral(peak);
        // int_peak^1 g' = -g(peak) fixes the outer value
        let h = 1.0 - peak;
        let outer_slope = (-peak_value + h * h * peak_slope / 10.0) / (0.5 * h);
        let fall = Quintic::new(peak, 1.0, [0.0, -peak_slope, 0.0], [outer_slope, 0.0, 0.0]);
        let profile = RadialProfile {
            r,
            peak,
            peak_slope,
            outer_slope,
            rise,
            fall,
            peak_value,
        };
        profile.check_shape()?;
        Ok(profile)
    }

    /// `g' > 0` on `[r, peak)` and `g' < 0` on `(peak, 1]`, by dense sampling.
    fn check_shape(&self) -> Result<()> {
        let samples = 4000;
        for i in 0..samples {
            let a = self.r + (self.peak - self.r) * i as f64 / samples as f64;
            let b = self.peak + (1.0 - self.peak) * (i + 1) as f64 / samples as f64;
            if self.derivative(a, 1) <= 0.0 || self.derivative(b, 1) >= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "radial profile is not unimodal (r={}, peak={}, slope={})",
                    self.r, self.peak, self.peak_slope
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, rho: f64) -> f64 {
        if rho <= self.r {
            (rho / self.r).ln()
        } else if rho <= self.peak {
            self.rise.integral(rho)
        } else {
            self.peak_value + self.fall.integral(rho.min(1.0))
        }
    }

    /// `g^{(order)}(rho)` for `order` in 1..=3.
    pub fn derivative(&self, rho: f64, order: usize) -> f64 {
        if rho <= self.r {
            match order {
                1 => 1.0 / rho,
                2 => -1.0 / (rho * rho),
                _ => 2.0 / (rho * rho * rho),
            }
        } else if rho <= self.peak {
            self.rise.eval(rho, order - 1)
        } else {
            self.fall.eval(rho, order - 1)
        }
    }

    pub fn max_value(&self) -> f64 {
        self.peak_value
    }
}

/// Parameters of the blended candidate for a ball control region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendedPsi {
    pub r: f64,
    pub center: Point,
    pub amplitude: f64,
    pub bump: f64,
    pub width: f64,
    pub blend: f64,
}

impl BlendedPsi {
    /// `ln(|x|/r)` blended, over a shell of width `blend`, into
    /// `K (1 - |x|^2) (1 + A exp(-|x - c|^2 / w^2))`, which vanishes on the
    /// unit sphere and peaks near `c`.
    pub fn value(&self, x: &Point) -> f64 {
        let rho = norm(x);
        let inner = (rho / self.r).ln();
        if rho <= self.r {
            return inner;
        }
        let eta = smooth_step((rho - self.r) / self.blend);
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        let outer = self.amplitude * (1.0 - rho * rho) * (1.0 + self.bump * (-d2 / (self.width * self.width)).exp());
        (1.0 - eta) * inner + eta * outer
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiFunction {
    Radial(RadialProfile),
    Blended(BlendedPsi),
}

/// Step of the fourth-order difference formulas used for the blended
/// candidate outside `B_r`.
const PSI_FD_STEP: f64 = 1e-3;

impl PsiFunction {
    pub fn r(&self) -> f64 {
        match self {
            PsiFunction::Radial(p) => p.r,
            PsiFunction::Blended(b) => b.r,
        }
    }

    pub fn value(&self, x: &Point) -> f64 {
        match self {
            PsiFunction::Radial(p) => p.value(norm(x)),
            PsiFunction::Blended(b) => b.value(x),
        }
    }

    pub fn gradient(&self, x: &Point) -> [f64; DIM] {
        let rho = norm(x);
        if rho <= self.r() {
            // closed form inside B_r: d_k psi = x_k / |x|^2
            return x.map(|c| c / (rho * rho));
        }
        match self {
            PsiFunction::Radial(p) => {
                let d = p.derivative(rho, 1);
                x.map(|c| d * c / rho)
            }
            PsiFunction::Blended(_) => {
                let mut g = [0.0; DIM];
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk = fd4(|e| self.value(&shift(x, k, e)), PSI_FD_STEP);
                }
                g
            }
        }
    }

    pub fn hessian(&self, x: &Point) -> Matrix3 {
        let rho = norm(x);
        let mut hess = [[0.0; DIM]; DIM];
        if rho <= self.r() {
            // d_j d_k psi = delta_jk / |x|^2 - 2 x_j x_k / |x|^4
            let r2 = rho * rho;
            for j in 0..DIM {
                for k in 0..DIM {
                    let delta = if j == k { 1.0 } else { 0.0 };
                    hess[j][k] = delta / r2 - 2.0 * x[j] * x[k] / (r2 * r2);
                }
            }
            return hess;
        }
        match self {
            PsiFunction::Radial(p) => {
                let d1 = p.derivative(rho, 1);
                let d2 = p.derivative(rho, 2);
                for j in 0..DIM {
                    for k in 0..DIM {
                        let xx = x[j] * x[k] / (rho * rho);
                        let delta = if j == k { 1.0 } else { 0.0 };
                        hess[j][k] = d2 * xx + d1 / rho * (delta - xx);
                    }
                }
            }
            PsiFunction::Blended(_) => {
                for j in 0..DIM {
                    let col = |e: f64| self.gradient(&shift(x, j, e));
                    for k in 0..DIM {
                        hess[j][k] = fd4(|e| col(e)[k], PSI_FD_STEP);
                    }
                }
            }
        }
        hess
    }
}

fn shift(x: &Point, axis: usize, e: f64) -> Point {
    let mut y = *x;
    y[axis] += e;
    y
}

/// Fourth-order central difference of `f` at 0.
fn fd4(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiMode {
    Radial,
    Blended,
}

impl PsiMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "radial" => Some(PsiMode::Radial),
            "blended" => Some(PsiMode::Blended),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PsiMode::Radial => "radial",
            PsiMode::Blended => "blended",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiOptions {
    /// Peak radius of the radial profile; defaults to the annulus midpoint.
    pub peak: Option<f64>,
    pub peak_slope: f64,
    pub delta_floor: f64,
}

impl Default for PsiOptions {
    fn default() -> Self {
        PsiOptions {
            peak: None,
            peak_slope: 8.0,
            delta_floor: DELTA_FLOOR,
        }
    }
}

/// A validated weight function with its nodal samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiField {
    pub function: PsiFunction,
    pub field: ScalarField,
    /// Smallest `|grad psi|` over nodes outside `omega0`.
    pub delta: f64,
    pub sup: f64,
    pub mode: PsiMode,
}

/// Builds `psi` and checks every nodal requirement: `psi = ln(|x|/r)` in
/// `B_r`, `psi > 0` outside the closed ball, `psi = 0` on the boundary and
/// `|grad psi| >= delta_floor` outside `omega0`.
pub fn build_psi(grid: &Grid, masks: &RegionMasks, mode: PsiMode, options: PsiOptions) -> Result<PsiField> {
    let r = masks.r;
    if !(r > 0.0) {
        return Err(Error::InvalidArgument("weight construction needs a singular ball radius r > 0".into()));
    }
    let function = match (mode, masks.omega_spec) {
        (PsiMode::Radial, OmegaSpec::Annulus { inner, outer }) => {
            let peak = options.peak.unwrap_or(0.5 * (inner + outer));
            if !(inner < peak && peak < outer) {
                return Err(Error::InvalidArgument(format!("peak radius {peak} must lie inside the annulus")));
            }
            PsiFunction::Radial(RadialProfile::new(r, peak, options.peak_slope)?)
        }
        (PsiMode::Radial, OmegaSpec::Ball { .. }) => {
            return Err(Error::InvalidArgument(
                "the radial weight needs an annular control region containing a full sphere".into(),
            ))
        }
        (PsiMode::Blended, spec) => {
            let center = match spec {
                OmegaSpec::Ball { center, .. } => center,
                OmegaSpec::Annulus { inner, outer } => [0.5 * (inner + outer), 0.0, 0.0],
            };
            PsiFunction::Blended(BlendedPsi {
                r,
                center,
                amplitude: 1.0,
                bump: 4.0,
                width: 0.3,
                blend: 0.3_f64.min(0.5 * (1.0 - r)),
            })
        }
    };
    let field = grid.sample(|x| function.value(x));

    let mut bad = Vec::new();
    let mut counts = [0usize; 4];
    let mut delta = f64::INFINITY;
    let h = grid.h();
    for (i, x) in grid.points().iter().enumerate() {
        let rho = norm(x);
        let v = field[i];
        let mut ok = true;
        if rho < r && (v - (rho / r).ln()).abs() > 1e-12 {
            counts[0] += 1;
            ok = false;
        }
        if rho > r && !(v > 0.0) {
            counts[1] += 1;
            ok = false;
        }
        for (slot, nb) in grid.neighbors(i).iter().enumerate() {
            if let Neighbor::Boundary { fraction } = *nb {
                let (axis, sign) = DIRECTIONS[slot];
                let xb = shift(x, axis, sign * fraction * h);
                if function.value(&xb).abs() > 1e-9 {
                    counts[2] += 1;
                    ok = false;
                }
            }
        }
        if !masks.omega0[i] {
            let g = norm(&function.gradient(x));
            delta = delta.min(g);
            if !(g >= options.delta_floor) {
                counts[3] += 1;
                ok = false;
            }
        }
        if !ok {
            bad.push(i);
        }
    }
    if !bad.is_empty() {
        return Err(Error::ValidationFailure {
            nodes: bad,
            summary: format!(
                "{} psi != ln(|x|/r) in B_r, {} psi <= 0 outside B_r, {} psi != 0 on the boundary, {} |grad psi| < {:e} outside omega0",
                counts[0], counts[1], counts[2], counts[3], options.delta_floor
            ),
        });
    }
    let sup = match function {
        PsiFunction::Radial(p) => p.max_value(),
        PsiFunction::Blended(_) => field.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(PsiField {
        function,
        field,
        delta,
        sup,
        mode,
    })
}

/// Smallest `lambda` with `e^{2 lambda S} - R^2/2 - e^{lambda S} > 0`, i.e.
/// `sigma > 0` wherever `psi <= S` and `|x| <= R`.
pub fn lambda_min(sup_psi: f64, radius: f64) -> f64 {
    ((1.0 + (1.0 + 2.0 * radius * radius).sqrt()) / 2.0).ln() / sup_psi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub theta: f64,
    pub phi: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDerivatives {
    pub dt: f64,
    pub grad: [f64; DIM],
    pub hess: Matrix3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSystem {
    pub s: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub k0: f64,
    pub r: f64,
    pub delta: f64,
    pub horizon: f64,
    pub sup_psi: f64,
    pub psi: PsiFunction,
    pub psi_field: ScalarField,
}

impl WeightSystem {
    pub fn new(psi: &PsiField, gamma: f64, lambda: f64, s: f64, horizon: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 2.0) {
            return Err(Error::InvalidArgument(format!("gamma = {gamma} must lie in (0, 2)")));
        }
        if !(lambda > 0.0 && s > 0.0 && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda = {lambda}, s = {s} and T = {horizon} must be positive"
            )));
        }
        Ok(WeightSystem {
            s,
            lambda,
            gamma,
            k0: 1.0 + 2.0 / gamma,
            r: psi.function.r(),
            delta: psi.delta,
            horizon,
            sup_psi: psi.sup,
            psi: psi.function,
            psi_field: psi.field.clone(),
        })
    }

    pub fn with_s(&self, s: f64) -> Self {
        WeightSystem { s, ..self.clone() }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t > 0.0 && t < self.horizon {
            Ok(())
        } else {
            Err(Error::TimeEndpoint(t))
        }
    }

    pub fn theta(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok((t * (self.horizon - t)).powf(-self.k0))
    }

    pub fn theta_prime(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let q = t * (self.horizon - t);
        Ok(-self.k0 * q.powf(-self.k0 - 1.0) * (self.horizon - 2.0 * t))
    }

    /// `e^{2 lambda sup psi}`.
    pub fn top(&self) -> f64 {
        (2.0 * self.lambda * self.sup_psi).exp()
    }

    /// Spatial factor `e^{2 lambda S} - |x|^2/2 - e^{lambda psi}` of `sigma / (s theta)`.
    pub fn spatial(&self, rho: f64, psi: f64) -> f64 {
        self.top() - 0.5 * rho * rho - (self.lambda * psi).exp()
    }

    pub fn eval(&self, x: &Point, t: f64) -> Result<Weights> {
        let theta = self.theta(t)?;
        let psi = self.psi.value(x);
        let phi = (self.lambda * psi).exp();
        Ok(Weights {
            theta,
            phi,
            sigma: self.s * theta * self.spatial(norm(x), psi),
        })
    }

    pub fn derivatives(&self, x: &Point, t: f64) -> Result<WeightDerivatives> {
        let theta = self.theta(t)?;
        let dtheta = self.theta_prime(t)?;
        let psi = self.psi.value(x);
        let phi = (self.lambda * psi).exp();
        let gpsi = self.psi.gradient(x);
        let hpsi = self.psi.hessian(x);
        let st = self.s * theta;
        let l = self.lambda;
        let mut grad = [0.0; DIM];
        let mut hess = [[0.0; DIM]; DIM];
        for k in 0..DIM {
            grad[k] = -st * (x[k] + l * phi * gpsi[k]);
            for j in 0..DIM {
                let delta = if j == k { 1.0 } else { 0.0 };
                hess[j][k] = -st * (delta + l * phi * hpsi[j][k] + l * l * phi * gpsi[j] * gpsi[k]);
            }
        }
        Ok(WeightDerivatives {
            dt: self.s * dtheta * self.spatial(norm(x), psi),
            grad,
            hess,
        })
    }
}

/// `s0` such that `2 sigma <= limit` at `t = T/2` for `s = scale * s0`.
pub fn default_s0(psi: &PsiField, gamma: f64, lambda: f64, horizon: f64, scale: f64, limit: f64) -> Result<f64> {
    let probe = WeightSystem::new(psi, gamma, lambda, 1.0, horizon)?;
    let theta_mid = probe.theta(0.5 * horizon)?;
    Ok(limit / (2.0 * scale * theta_mid * probe.top()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub step: f64,
    pub max_rel_dt: f64,
    pub max_rel_grad: f64,
    pub max_rel_hess: f64,
}

impl DerivativeCheck {
    pub fn worst(&self) -> f64 {
        self.max_rel_dt.max(self.max_rel_grad).max(self.max_rel_hess)
    }
}

/// Random space-time samples with `|x|` in `[0.1, 0.95]` and `t` in
/// `[T/4, 3T/4]`, away from the blow-up of `theta` where a fixed step
/// would not resolve it.
pub fn derivative_samples(rng: &mut SeededRng, count: usize, horizon: f64) -> Vec<(Point, f64)> {
    (0..count)
        .map(|_| loop {
            let x = rng.point_in_ball(0.95);
            if norm(&x) >= 0.1 {
                break (x, rng.range(0.25, 0.75) * horizon);
            }
        })
        .collect()
}

/// Compares analytic derivatives with central differences of step `step`:
/// `d_t sigma` and `grad sigma` against differences of `sigma`, the Hessian
/// against differences of the analytic gradient. Errors are relative to the
/// size of the compared object, floored where it vanishes by cancellation:
/// `|sigma| / T` for the time derivative (zero at `T/2`), the size of the
/// two terms `s theta (|x| + lambda phi |grad psi|)` for the gradient (which
/// crosses zero on the decreasing branch of `psi`), and likewise for the
/// Hessian.
pub fn check_derivatives(ws: &WeightSystem, samples: &[(Point, f64)], step: f64) -> Result<DerivativeCheck> {
    let mut out = DerivativeCheck {
        step,
        max_rel_dt: 0.0,
        max_rel_grad: 0.0,
        max_rel_hess: 0.0,
    };
    for (x, t) in samples {
        let sigma = |y: &Point, tt: f64| ws.eval(y, tt).map(|w| w.sigma);
        let d = ws.derivatives(x, *t)?;
        let fd_t = (sigma(x, t + step)? - sigma(x, t - step)?) / (2.0 * step);
        let scale_t = d.dt.abs().max(sigma(x, *t)?.abs() / ws.horizon);
        out.max_rel_dt = out.max_rel_dt.max((fd_t - d.dt).abs() / scale_t);

        let mut grad_err = [0.0; DIM];
        let mut hess_err = [[0.0; DIM]; DIM];
        for k in 0..DIM {
            let fd = (sigma(&shift(x, k, step), *t)? - sigma(&shift(x, k, -step), *t)?) / (2.0 * step);
            grad_err[k] = fd - d.grad[k];
            let gp = ws.derivatives(&shift(x, k, step), *t)?.grad;
            let gm = ws.derivatives(&shift(x, k, -step), *t)?.grad;
            for j in 0..DIM {
                hess_err[k][j] = (gp[j] - gm[j]) / (2.0 * step) - d.hess[k][j];
            }
        }
        let frob = |m: &Matrix3| m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let st = ws.s * ws.theta(*t)?;
        let phi = (ws.lambda * ws.psi.value(x)).exp();
        let gpsi = norm2(&ws.psi.gradient(x));
        let lp = ws.lambda * phi;
        let scale_grad = norm2(&d.grad).max(st * (norm(x) + lp * gpsi));
        let scale_hess = frob(&d.hess).max(st * (3f64.sqrt() + lp * (frob(&ws.psi.hessian(x)) + ws.lambda * gpsi * gpsi)));
        out.max_rel_grad = out.max_rel_grad.max(norm2(&grad_err) / scale_grad);
        out.max_rel_hess = out.max_rel_hess.max(frob(&hess_err) / scale_hess);
    }
    Ok(out)
}

/// Both sides of the Carleman inequality for one trajectory and one `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanReport {
    pub lhs_terms: [f64; 7],
    pub rhs_observation: f64,
    pub rhs_source: f64,
    /// `sum(lhs) / (rhs_observation + rhs_source)`: the empirical constant.
    pub ratio: f64,
    pub s: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub k0: f64,
    pub grid_id: String,
    /// Interior time nodes where `exp(-2 sigma)` is nonzero somewhere.
    pub usable_steps: usize,
}

impl CarlemanReport {
    pub const HEADER: [&'static str; 16] = [
        "grid", "s", "lambda", "gamma", "k0", "lhs1", "lhs2", "lhs3", "lhs4", "lhs5", "lhs6", "lhs7", "rhs_obs",
        "rhs_src", "C_est", "usable_steps",
    ];

    pub fn table(reports: &[CarlemanReport]) -> Table {
        let mut t = Table::new(&Self::HEADER);
        for r in reports {
            let mut row = vec![r.grid_id.clone(), fmt_f64(r.s), fmt_f64(r.lambda), fmt_f64(r.gamma), fmt_f64(r.k0)];
            row.extend(r.lhs_terms.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(r.rhs_observation));
            row.push(fmt_f64(r.rhs_source));
            row.push(fmt_f64(r.ratio));
            row.push(r.usable_steps.to_string());
            t.push(row);
        }
        t
    }

    pub fn all_nonnegative(&self) -> bool {
        self.lhs_terms.iter().all(|v| *v >= 0.0) && self.rhs_observation >= 0.0 && self.rhs_source >= 0.0
    }
}

/// Evaluates the seven left-hand integrals and the two right-hand integrals
/// (without the unknown constant) of the Carleman inequality on a discrete
/// trajectory `w` with source `g`. Time integrals use the interior time
/// nodes only, where the weights are finite; `w_t` is a centered difference.
pub fn carleman_sides(
    ws: &WeightSystem,
    grid: &Grid,
    masks: &RegionMasks,
    w: &Trajectory,
    g: Option<&Trajectory>,
    grid_id: &str,
) -> Result<CarlemanReport> {
    let n = grid.len();
    if w.dim() != n || ws.psi_field.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.dim() });
    }
    let tg = w.time_grid;
    if (tg.horizon - ws.horizon).abs() > 1e-12 * ws.horizon {
        return Err(Error::InvalidArgument("trajectory and weights use different horizons".into()));
    }
    let h3 = grid.cell_volume();
    let dt = tg.dt();
    let (s, l) = (ws.s, ws.lambda);
    let radii: Vec<f64> = grid.points().iter().map(norm).collect();
    let phi: Vec<f64> = ws.psi_field.values().iter().map(|p| (l * p).exp()).collect();
    let spatial: Vec<f64> = radii.iter().zip(ws.psi_field.values()).map(|(rho, p)| ws.spatial(*rho, *p)).collect();
    let outside: Vec<bool> = radii.iter().map(|rho| *rho > ws.r).collect();
    let in_ball = &masks.ball_r;

    let mut lhs = [0.0; 7];
    let mut obs = 0.0;
    let mut src = 0.0;
    let mut usable = 0;
    let damp = (-4.0 * l * ws.sup_psi).exp();
    for k in 1..tg.steps {
        let theta = ws.theta(tg.time(k))?;
        let wk = w.frames[k].values();
        let grad_sq = grid.grad_sq_nodal(wk);
        let wp = w.frames[k + 1].values();
        let wm = w.frames[k - 1].values();
        let mut any = false;
        for i in 0..n {
            let e = (-2.0 * s * theta * spatial[i]).exp();
            if e == 0.0 {
                continue;
            }
            any = true;
            let wi = wk[i];
            let wt = (wp[i] - wm[i]) / (2.0 * dt);
            let c = dt * h3 * e;
            if outside[i] {
                lhs[0] += c * s * l * l * theta * phi[i] * grad_sq[i];
                lhs[4] += c * s.powi(3) * l.powi(4) * theta.powi(3) * phi[i].powi(3) * wi * wi;
                lhs[6] += c * damp / s / (theta * phi[i]) * wt * wt;
            }
            if in_ball[i] {
                lhs[5] += c * damp / s / theta * wt * wt;
            }
            lhs[1] += c * s / (l * l) * theta * grad_sq[i];
            lhs[2] += c * s * theta * wi * wi / radii[i].powf(ws.gamma);
            lhs[3] += c * s.powi(3) * theta.powi(3) * radii[i] * radii[i] * wi * wi;
            if masks.omega[i] {
                obs += c * s.powi(3) * l.powi(4) * ws.top() * theta.powi(3) * phi[i].powi(3) * wi * wi;
            }
            if let Some(gt) = g {
                let gi = gt.frames[k][i];
                src += c * gi * gi;
            }
        }
        if any {
            usable += 1;
        }
    }
    if usable == 0 {
        return Err(Error::WeightOverflow { s, lambda: l });
    }
    let total: f64 = lhs.iter().sum();
    let ratio = if obs + src > 0.0 { total / (obs + src) } else { 0.0 };
    Ok(CarlemanReport {
        lhs_terms: lhs,
        rhs_observation: obs,
        rhs_source: src,
        ratio,
        s,
        lambda: l,
        gamma: ws.gamma,
        k0: ws.k0,
        grid_id: grid_id.to_string(),
        usable_steps: usable,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityEstimate {
    /// Largest quotient found: a lower bound for the observability constant.
    pub value: f64,
    pub per_trial: Vec<f64>,
    /// Dimension of the search subspace retained in each trial.
    pub subspace_dims: Vec<usize>,
}

/// Random starts per trial.
const OBS_SKETCH: usize = 16;
/// Relative norm below which a new basis vector counts as dependent.
const OBS_DROP: f64 = 1e-9;

/// Lower estimate of `sup |y(0)|^2 / |y|^2_{L^2(omega x (0,T))}` over
/// adjoint solutions `y` with terminal data `yT`.
///
/// The supremum is carried by the slowest modes, so each trial draws
/// random starts, pushes them once through the adjoint propagator (which
/// leaves only those modes), orthonormalizes, and maximizes the quotient
/// over that subspace: power iteration on the projected operator
/// `Lambda^{-1} E`, with `<E a, a> = |y_a(0)|^2` and `<Lambda a, a>` the
/// observed energy. The returned quotient is attained by an explicit
/// terminal datum, hence a certified lower bound.
///
/// Requires the backward Euler scheme: under Crank-Nicolson the grid-scale
/// modes decay slowly and alternate in sign, so their time-averaged trace
/// on `omega` nearly cancels and the discrete quotient is dominated by that
/// artifact.
pub fn observability_constant(
    grid: &Grid,
    l: &Csr,
    masks: &RegionMasks,
    time_grid: TimeGrid,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<ObservabilityEstimate> {
    if time_grid.theta != 1.0 {
        return Err(Error::InvalidArgument(
            "observability estimates need theta = 1 (Crank-Nicolson hides oscillating grid modes)".into(),
        ));
    }
    let gram = Gram::new(grid, l, masks, time_grid)?;
    let stepper: &ThetaStepper = gram.stepper();
    let h3 = grid.cell_volume();
    let omega_nodes: Vec<usize> = (0..grid.len()).filter(|&i| masks.omega[i]).collect();
    let steps = time_grid.steps;
    let dt = time_grid.dt();
    let mut per_trial = Vec::with_capacity(trials);
    let mut subspace_dims = Vec::with_capacity(trials);
    for _ in 0..trials.max(1) {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for _ in 0..OBS_SKETCH {
            let smooth = stepper.adjoint(&rng.noise(grid.len()))?.initial().clone().into_inner();
            let n0 = norm2(&smooth);
            let mut v = smooth;
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nv = norm2(&v);
            if nv > OBS_DROP * n0 && nv > 0.0 {
                v.iter_mut().for_each(|x| *x /= nv);
                basis.push(v);
            }
        }
        // observed traces and initial values of each basis vector
        let mut traces: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
        for v in &basis {
            let y = stepper.adjoint(&ScalarField::new(v.clone()))?;
            let mut tr = Vec::with_capacity(steps * omega_nodes.len());
            for k in 0..steps {
                let yk = stepper.adjoint_weighted(&y, k);
                tr.extend(omega_nodes.iter().map(|&i| yk[i]));
            }
            traces.push(tr);
            starts.push(y.initial().clone().into_inner());
        }
        let k = basis.len();
        let mut e = vec![vec![0.0; k]; k];
        let mut g = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                e[i][j] = h3 * dot(&starts[i], &starts[j]);
                e[j][i] = e[i][j];
                g[i][j] = dt * h3 * dot(&traces[i], &traces[j]);
                g[j][i] = g[i][j];
            }
        }
        let value = projected_max_quotient(&e, &g)?;
        per_trial.push(value);
        subspace_dims.push(k);
    }
    let value = per_trial.iter().cloned().fold(0.0, f64::max);
    Ok(ObservabilityEstimate {
        value,
        per_trial,
        subspace_dims,
    })
}

/// Largest `x^T E x / x^T G x` for small dense symmetric `E >= 0`, `G > 0`:
/// Cholesky `G = C C^T`, then power iteration on `C^{-1} E C^{-T}`.
fn projected_max_quotient(e: &[Vec<f64>], g: &[Vec<f64>]) -> Result<f64> {
    let k = g.len();
    let mut c = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = g[i][j] - (0..j).map(|m| c[i][m] * c[j][m]).sum::<f64>();
            if i == j {
                if !(s > 1e-300) {
                    return Err(Error::DegenerateDenominator(s));
                }
                c[i][i] = s.sqrt();
            } else {
                c[i][j] = s / c[j][j];
            }
        }
    }
    // solve C z = b (forward) and C^T z = b (backward)
    let lower = |b: &[f64]| {
        let mut z = vec![0.0; k];
        for i in 0..k {
            z[i] = (b[i] - (0..i).map(|m| c[i][m] * z[m]).sum::<f64>()) / c[i][i];
        }
        z
    };
    let upper = |b: &[f64]| {
        let mut z = vec![0.0; k];
        for i in (0..k).rev() {
            z[i] = (b[i] - (i + 1..k).map(|m| c[m][i] * z[m]).sum::<f64>()) / c[i][i];
        }
        z
    };
    let apply = |v: &[f64]| {
        let w = upper(v);
        let ew: Vec<f64> = (0..k).map(|i| dot(&e[i], &w)).collect();
        lower(&ew)
    };
    let mut v = vec![1.0 / (k as f64).sqrt(); k];
    let mut best: f64 = 0.0;
    for _ in 0..10_000 {
        let w = apply(&v);
        let q = dot(&v, &w);
        let nw = norm2(&w);
        if !(nw > 0.0) {
            break;
        }
        let converged = (q - best).abs() <= 1e-14 * q.abs();
        best = best.max(q);
        if converged {
            break;
        }
        v = w.iter().map(|x| x / nw).collect();
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainShape;

    fn annulus_setup(m: usize, r: f64) -> (Grid, RegionMasks) {
        let g = Grid::build(1.0, m, DomainShape::Ball).unwrap();
        let masks = RegionMasks::build(&g, OmegaSpec::default_annulus(), r).unwrap();
        (g, masks)
    }

    #[test]
    fn projected_quotient_diagonal() {
        let e = vec![vec![2.0, 0.0], vec![0.0, 6.0]];
        let g = vec![vec![1.0, 0.0], vec![0.0, 4.0]];
        assert!((projected_max_quotient(&e, &g).unwrap() - 2.0).abs() < 1e-12);
        let bad = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(projected_max_quotient(&e, &bad), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn observability_decreases_with_horizon() {
        let g = Grid::build(1.0, 10, DomainShape::Ball).unwrap();
        let c = crate::grid::Coefficient::build(&g, crate::grid::CoefficientSpec::Constant(1.0)).unwrap();
        let l = crate::operators::assemble_diffusion(&g, &c).unwrap();
        let masks = RegionMasks::build(&g, OmegaSpec::default_annulus(), 0.1).unwrap();
        let mut rng = SeededRng::new(5);
        let short = observability_constant(&g, &l, &masks, TimeGrid::new(0.25, 20, 1.0).unwrap(), 2, &mut rng).unwrap();
        let long = observability_constant(&g, &l, &masks, TimeGrid::new(0.5, 20, 1.0).unwrap(), 2, &mut rng).unwrap();
        assert!(short.value.is_finite() && short.value > 0.0);
        assert!(long.value < short.value);
        let cn = TimeGrid::new(0.5, 20, 0.5).unwrap();
        assert!(observability_constant(&g, &l, &masks, cn, 1, &mut rng).is_err());
    }

    #[test]
    fn quintic_reproduces_data_and_integral() {
        let q = Quintic::new(0.2, 0.7, [1.0, -2.0, 3.0], [0.5, 0.25, -1.0]);
        assert!((q.eval(0.2, 0) - 1.0).abs() < 1e-12);
        assert!((q.eval(0.2, 1) + 2.0).abs() < 1e-12);
        assert!((q.eval(0.2, 2) - 3.0).abs() < 1e-11);
        assert!((q.eval(0.7, 0) - 0.5).abs() < 1e-12);
        assert!((q.eval(0.7, 1) - 0.25).abs() < 1e-12);
        assert!((q.eval(0.7, 2) + 1.0).abs() < 1e-11);
        // Simpson with many panels
        let n = 2000;
        let hh = 0.5 / n as f64;
        let mut s = q.eval(0.2, 0) + q.eval(0.7, 0);
        for i in 1..n {
            s += q.eval(0.2 + i as f64 * hh, 0) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert!((s * hh / 3.0 - q.integral(0.7)).abs() < 1e-12);
    }

    #[test]
    fn radial_profile_shape() {
        let p = RadialProfile::new(0.3, 0.65, 8.0).unwrap();
        assert!(p.value(0.3).abs() < 1e-15);
        assert!((p.value(0.3 / std::f64::consts::E) + 1.0).abs() < 1e-14);
        assert!(p.value(1.0).abs() < 1e-12);
        assert!(p.value(0.65) > 0.0 && p.value(0.65) == p.max_value());
        // C^3 joins
        for (a, order) in [(0.3, 1), (0.3, 2), (0.3, 3), (0.65, 1), (0.65, 2), (0.65, 3)] {
            let l = p.derivative(a - 1e-9, order);
            let r = p.derivative(a + 1e-9, order);
            assert!((l - r).abs() < 1e-5 * (1.0 + l.abs()), "order {order} at {a}: {l} vs {r}");
        }
        assert!(p.outer_slope < 0.0);
        // value is the integral of the derivative
        let fd = (p.value(0.5 + 1e-6) - p.value(0.5 - 1e-6)) / 2e-6;
        assert!((fd - p.derivative(0.5, 1)).abs() < 1e-6);
    }

    #[test]
    fn radial_psi_validates() {
        let (g, masks) = annulus_setup(16, 0.3);
        let psi = build_psi(&g, &masks, PsiMode::Radial, PsiOptions::default()).unwrap();
        assert!(psi.delta > 0.0);
        let PsiFunction::Radial(p) = psi.function else { panic!() };
        assert_eq!(p.peak, 0.65);
        assert!(psi.sup > 0.0);
    }

    #[test]
    fn radial_needs_annulus() {
        let g = Grid::build(1.0, 16, DomainShape::Ball).unwrap();
        let masks = RegionMasks::build(&g, OmegaSpec::default_ball(), 0.15).unwrap();
        assert!(matches!(
            build_psi(&g, &masks, PsiMode::Radial, PsiOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
        // the blended candidate either validates or names the failing nodes
        match build_psi(&g, &masks, PsiMode::Blended, PsiOptions::default()) {
            Ok(p) => assert!(p.delta >= DELTA_FLOOR),
            Err(Error::ValidationFailure { nodes, .. }) => assert!(!nodes.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }

    fn weights() -> WeightSystem {
        let (g, masks) = annulus_setup(16, 0.3);
        let psi = build_psi(&g, &masks, PsiMode::Radial, PsiOptions::default()).unwrap();
        let lam = 2.0 * lambda_min(psi.sup, 1.0);
        WeightSystem::new(&psi, 1.0, lam, 1.0, 1.0).unwrap()
    }

    #[test]
    fn theta_values() {
        let ws = weights();
        assert_eq!(ws.k0, 3.0);
        assert!((ws.theta(0.5).unwrap() - 64.0).abs() < 1e-12);
        assert_eq!(ws.theta_prime(0.5).unwrap(), 0.0);
        assert_eq!(ws.theta(0.0), Err(Error::TimeEndpoint(0.0)));
        assert!(ws.theta(1.0).is_err());
        for i in 1..20 {
            let t = i as f64 / 20.0;
            assert!(ws.theta(t).unwrap() >= 64.0);
        }
    }

    #[test]
    fn phi_inside_ball() {
        let ws = weights();
        let x = [0.1, 0.05, -0.02];
        let w = ws.eval(&x, 0.4).unwrap();
        assert!((w.phi - (norm(&x) / 0.3).powf(ws.lambda)).abs() < 1e-14);
        let on_sphere = [0.3, 0.0, 0.0];
        assert!((ws.eval(&on_sphere, 0.4).unwrap().phi - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_inside_ball_closed_form() {
        let ws = weights();
        let x = [0.1, -0.1, 0.05];
        let t = 0.3;
        let d = ws.derivatives(&x, t).unwrap();
        let st = ws.s * ws.theta(t).unwrap();
        let rho = norm(&x);
        let phi = (rho / 0.3).powf(ws.lambda);
        for k in 0..3 {
            let expect = -st * (x[k] + ws.lambda * phi * x[k] / (rho * rho));
            assert!((d.grad[k] - expect).abs() < 1e-12 * expect.abs().max(1.0));
        }
        assert_eq!(ws.derivatives(&x, 0.5).unwrap().dt, 0.0);
    }

    #[test]
    fn sigma_positive_above_lambda_min() {
        let ws = weights();
        let (g, _) = annulus_setup(16, 0.3);
        for x in g.points() {
            assert!(ws.eval(x, 0.5).unwrap().sigma > 0.0);
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let ws = weights();
        let samples = derivative_samples(&mut SeededRng::new(3), 20, ws.horizon);
        let coarse = check_derivatives(&ws, &samples, 1e-2).unwrap();
        let fine = check_derivatives(&ws, &samples, 1e-3).unwrap();
        assert!(fine.worst() < 1e-4, "{fine:?}");
        assert!(coarse.worst() / fine.worst() > 30.0, "{coarse:?} {fine:?}");
    }

    #[test]
    fn sides_zero_trajectory_and_scaling() {
        let (g, masks) = annulus_setup(16, 0.3);
        let psi = build_psi(&g, &masks, PsiMode::Radial, PsiOptions::default()).unwrap();
        let lam = 2.0 * lambda_min(psi.sup, 1.0);
        let s0 = default_s0(&psi, 1.0, lam, 1.0, 4.0, 600.0).unwrap();
        let ws = WeightSystem::new(&psi, 1.0, lam, s0, 1.0).unwrap();
        let tg = TimeGrid::new(1.0, 20, 0.5).unwrap();
        let zero = Trajectory::zeros(tg, g.len());
        let r = carleman_sides(&ws, &g, &masks, &zero, None, "t").unwrap();
        assert_eq!(r.ratio, 0.0);
        assert!(r.lhs_terms.iter().all(|v| *v == 0.0));

        let w = crate::evolution::solve_adjoint(
            &crate::operators::assemble_diffusion(
                &g,
                &crate::grid::Coefficient::build(&g, crate::grid::CoefficientSpec::Constant(1.0)).unwrap(),
            )
            .unwrap(),
            &SeededRng::new(1).smooth_field(&g, 3),
            tg,
        )
        .unwrap();
        let a = carleman_sides(&ws, &g, &masks, &w, None, "t").unwrap();
        let b = carleman_sides(&ws, &g, &masks, &w.scaled(3.0), None, "t").unwrap();
        assert!(a.all_nonnegative() && a.ratio > 0.0);
        assert!((a.ratio - b.ratio).abs() < 1e-12 * a.ratio);
        let huge = ws.with_s(1e8);
        assert!(matches!(
            carleman_sides(&huge, &g, &masks, &w, None, "t"),
            Err(Error::WeightOverflow { .. })
        ));
    }
}
