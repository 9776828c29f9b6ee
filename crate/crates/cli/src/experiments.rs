//! One driver per subcommand. Each returns an [`Outcome`]: CSV tables, a
//! plain-text summary and the invariant checks that decide the exit code.

use std::path::Path;
use std::time::Instant;

use singular_heat::carleman::{
    build_psi, carleman_sides, check_derivatives, default_s0, derivative_samples, lambda_min, observability_constant,
    CarlemanReport, PsiOptions, WeightSystem,
};
use singular_heat::evolution::{check_monotonicity, duality_residual, ThetaStepper};
use singular_heat::field::{dot, norm2};
use singular_heat::grid::{admissible_r, hardy_critical};
use singular_heat::hum::{cutoff_stabilizer, synthesize_control, ControlProblem, Gram, HumSettings};
use singular_heat::operators::{assemble_diffusion, assemble_l, assemble_potential, PotentialSpec};
use singular_heat::report::{fmt_f64, fmt_time, Table};
use singular_heat::rng::SeededRng;
use singular_heat::spectral::{
    grid_eigenpair, hardy_eigenpair, improved_hardy_k0, radial_shooting_eigenvalue, spectral_sweep, SweepOptions,
    SweepRecord,
};
use singular_heat::{Coefficient, Csr, DomainShape, Error, Grid, OmegaSpec, RegionMasks, TimeGrid};

use crate::config::{RChoice, RunConfig};

/// A module error tagged with the subcommand that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{command}: {source}")]
pub struct RunError {
    pub command: &'static str,
    #[source]
    pub source: Error,
}

type RunResult<T> = std::result::Result<T, RunError>;

trait Tag<T> {
    fn tag(self, command: &'static str) -> RunResult<T>;
}

impl<T> Tag<T> for singular_heat::Result<T> {
    fn tag(self, command: &'static str) -> RunResult<T> {
        self.map_err(|source| RunError { command, source })
    }
}

/// One asserted invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub command: &'static str,
    /// `(file stem, table)` pairs, written as `<stem>.csv`.
    pub tables: Vec<(String, Table)>,
    pub summary: Vec<String>,
    /// Asserted invariants; the exit code is 0 iff all pass.
    pub checks: Vec<Check>,
    /// Reported but not asserted.
    pub diagnostics: Vec<Check>,
    pub wall_time_s: f64,
}

impl Outcome {
    fn new(command: &'static str) -> Self {
        Outcome {
            command,
            ..Outcome::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().chain(&self.diagnostics).find(|c| c.name == name)
    }

    pub fn table(&self, stem: &str) -> Option<&Table> {
        self.tables.iter().find(|(s, _)| s == stem).map(|(_, t)| t)
    }

    /// Text report: config echo, summary lines, then one line per check.
    pub fn summary_text(&self, cfg: &RunConfig) -> String {
        let mut out = format!("# {}\n", self.command);
        out.push_str("## configuration\n");
        out.push_str(&cfg.render());
        out.push_str("\n## results\n");
        for line in &self.summary {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("## checks\n");
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
        }
        for c in &self.diagnostics {
            out.push_str(&format!("(diagnostic) {}\n", c.line()));
        }
        out.push_str(&format!("wall_time_s = {:.3}\n", self.wall_time_s));
        out
    }

    /// Writes every table as `<dir>/<stem>.csv` and the summary as
    /// `<dir>/summary.txt`.
    pub fn write(&self, dir: &Path, cfg: &RunConfig) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (stem, table) in &self.tables {
            table
                .write_path(&dir.join(format!("{stem}.csv")))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        std::fs::write(dir.join("summary.txt"), self.summary_text(cfg))
    }
}

fn timing(cfg: &RunConfig, seconds: f64) -> String {
    fmt_time(cfg.timing.then_some(seconds))
}

fn build_grid(cfg: &RunConfig, m: usize) -> singular_heat::Result<Grid> {
    Grid::build(cfg.grid.half_width, m, cfg.grid.shape)
}

/// Largest `|x|` in the closed domain.
fn domain_radius(cfg: &RunConfig) -> f64 {
    match cfg.grid.shape {
        DomainShape::Ball => cfg.grid.half_width,
        DomainShape::Box => cfg.grid.half_width * 3f64.sqrt(),
    }
}

/// Control-region masks with `r` fixed or chosen automatically: the
/// admissible bound from the coefficient, capped so that `omega` keeps the
/// `2h` clearance from `B_r`.
fn build_masks(grid: &Grid, spec: OmegaSpec, r: RChoice, coeff: &Coefficient, mu: f64) -> singular_heat::Result<RegionMasks> {
    let r = match r {
        RChoice::Fixed(r) => r,
        RChoice::Auto => {
            let cap = spec.distance_from_origin() - 2.0 * grid.h();
            admissible_r(coeff, mu, cap)?
        }
    };
    RegionMasks::build(grid, spec, r)
}

fn operator(grid: &Grid, coeff: &Coefficient, mu: f64) -> singular_heat::Result<Csr> {
    let a = assemble_diffusion(grid, coeff)?;
    assemble_l(&a, &assemble_potential(grid, &PotentialSpec::exact(mu))?)
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}

/// Discrete Hardy constants and improved-Hardy `K0` across refinements,
/// plus the `mu = 0` Dirichlet eigenvalue against the radial shooting value.
pub fn run_hardy(cfg: &RunConfig) -> RunResult<Outcome> {
    const CMD: &str = "hardy";
    let start = Instant::now();
    let h = &cfg.hardy;
    let mut out = Outcome::new(CMD);
    let oracle = match cfg.grid.shape {
        DomainShape::Ball => Some(radial_shooting_eigenvalue(0.0, cfg.grid.half_width).tag(CMD)?),
        DomainShape::Box => None,
    };
    let mut table = Table::new(&[
        "m",
        "h",
        "nu",
        "nu_rel_gap",
        "k0",
        "lambda0_dirichlet",
        "lambda0_oracle",
        "lambda0_rel_err",
        "iterations",
        "wall_time_s",
    ]);
    let mut nus = Vec::new();
    let mut last_lambda = f64::NAN;
    let mut ms = h.m_list.clone();
    ms.sort_unstable();
    for &m in &ms {
        let t0 = Instant::now();
        let grid = build_grid(cfg, m).tag(CMD)?;
        let hardy = hardy_eigenpair(&grid).tag(CMD)?;
        let k0 = improved_hardy_k0(&grid, h.gamma, h.l).tag(CMD)?;
        let unit = Coefficient::build(&grid, singular_heat::CoefficientSpec::Constant(1.0)).tag(CMD)?;
        let dirichlet = grid_eigenpair(&grid, &assemble_diffusion(&grid, &unit).tag(CMD)?).tag(CMD)?;
        let rel = oracle.map(|o| (dirichlet.lambda0 - o).abs() / o);
        table.push(vec![
            m.to_string(),
            fmt_f64(grid.h()),
            fmt_f64(hardy.lambda0),
            fmt_f64((hardy.lambda0 - h.target).abs() / h.target),
            fmt_f64(k0),
            fmt_f64(dirichlet.lambda0),
            oracle.map(fmt_f64).unwrap_or_else(|| "NA".into()),
            rel.map(fmt_f64).unwrap_or_else(|| "NA".into()),
            hardy.iterations.to_string(),
            timing(cfg, t0.elapsed().as_secs_f64()),
        ]);
        out.summary.push(format!(
            "m = {m} (h = {:.6}): discrete Hardy constant nu = {:.6} (continuum optimum mu* = {:.4}), K0(gamma = {}, l = {}) = {:.6}, Dirichlet lambda0 = {:.6}",
            grid.h(),
            hardy.lambda0,
            hardy_critical(),
            h.gamma,
            h.l,
            k0,
            dirichlet.lambda0
        ));
        nus.push(hardy.lambda0);
        last_lambda = dirichlet.lambda0;
    }
    out.tables.push(("hardy".into(), table));

    let gaps: Vec<f64> = nus.iter().map(|nu| (nu - h.target).abs()).collect();
    out.checks.push(Check::new(
        "hardy_trend",
        strictly_decreasing(&gaps),
        format!("|nu - {}| over m = {:?}: {}", h.target, ms, list(&gaps)),
    ));
    let finest = *nus.last().unwrap_or(&f64::NAN);
    let rel = (finest - h.target).abs() / h.target;
    out.checks.push(Check::new(
        "hardy_target",
        rel <= h.tolerance,
        format!(
            "nu = {finest:.6} at m = {}: relative gap {rel:.4} vs tolerance {}",
            ms.last().copied().unwrap_or(0),
            h.tolerance
        ),
    ));
    if let Some(o) = oracle {
        let rel = (last_lambda - o).abs() / o;
        out.checks.push(Check::new(
            "dirichlet_oracle",
            rel <= 0.02,
            format!(
                "lambda0 = {last_lambda:.6} at m = {} vs radial shooting {o:.6}: relative error {rel:.4} (tolerance 0.02)",
                ms.last().copied().unwrap_or(0)
            ),
        ));
    }
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

fn sweep_rows(table: &mut Table, cfg: &RunConfig, run: &str, mu: f64, records: &[SweepRecord]) {
    for r in records {
        table.push(vec![
            run.to_string(),
            fmt_f64(mu),
            fmt_f64(r.epsilon),
            fmt_f64(r.lambda0),
            fmt_f64(r.residual),
            fmt_f64(r.concentration_norm),
            fmt_f64(r.tau),
            fmt_f64(r.h1_omega_norm),
            fmt_f64(r.j_lower_bound),
            fmt_f64(r.ln_j_lower_bound),
            r.iterations.to_string(),
            timing(cfg, r.wall_time_s),
        ]);
    }
}

/// Blow-up checks on one sweep, sorted by decreasing `epsilon`.
fn blowup_checks(prefix: &str, records: &[SweepRecord], ratio: f64) -> Vec<Check> {
    let lambdas: Vec<f64> = records.iter().map(|r| r.lambda0).collect();
    let conc: Vec<f64> = records.iter().map(|r| r.concentration_norm).collect();
    let lnj: Vec<f64> = records.iter().map(|r| r.ln_j_lower_bound).collect();
    let ratios: Vec<f64> = lambdas.windows(2).map(|w| w[1].abs() / w[0].abs()).collect();
    vec![
        Check::new(
            &format!("{prefix}lambda_decreasing"),
            strictly_decreasing(&lambdas),
            format!("lambda0 = {}", list(&lambdas)),
        ),
        Check::new(
            &format!("{prefix}lambda_ratio"),
            !ratios.is_empty() && ratios.iter().all(|q| *q >= ratio),
            format!("|lambda0(next eps)| / |lambda0(eps)| = {} (need >= {ratio})", list(&ratios)),
        ),
        Check::new(
            &format!("{prefix}concentration_decreasing"),
            strictly_decreasing(&conc),
            format!("H1 norm outside B(0, tau) = {}", list(&conc)),
        ),
        Check::new(
            &format!("{prefix}cost_bound_increasing"),
            strictly_increasing(&lnj),
            format!("ln of the cost lower bound = {}", list(&lnj)),
        ),
    ]
}

/// Regularized spectral sweep at a supercritical `mu`, a subcritical
/// control run, and a run above the discrete Hardy constant.
pub fn run_spectrum(cfg: &RunConfig) -> RunResult<Outcome> {
    const CMD: &str = "spectrum";
    let start = Instant::now();
    let sp = &cfg.spectrum;
    let mut out = Outcome::new(CMD);
    let grid = build_grid(cfg, sp.m).tag(CMD)?;
    let coeff = Coefficient::build(&grid, cfg.coefficient_spec(cfg.coefficient.kind)).tag(CMD)?;
    let mu_star = hardy_critical();
    let mu = cfg.mu.unwrap_or(sp.mu_factor * coeff.p2 * mu_star);
    let spec = cfg.omega_spec(sp.omega);
    let r = match sp.r {
        RChoice::Fixed(r) => r,
        RChoice::Auto => 0.99 * (spec.distance_from_origin() - 2.0 * grid.h()),
    };
    let masks = RegionMasks::build(&grid, spec, r).tag(CMD)?;
    let mut eps = sp.eps_list.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let horizon = cfg.time.horizon;
    let strict = SweepOptions {
        require_supercritical: true,
    };
    let loose = SweepOptions {
        require_supercritical: false,
    };
    let main = spectral_sweep(&grid, &coeff, &masks, mu, &eps, sp.tau, horizon, strict).tag(CMD)?;
    let mu_control = sp.control_factor * mu_star;
    let control = spectral_sweep(&grid, &coeff, &masks, mu_control, &eps, sp.tau, horizon, loose).tag(CMD)?;

    let mut table = Table::new(&[
        "run",
        "mu",
        "epsilon",
        "lambda0",
        "residual",
        "concentration_norm",
        "tau",
        "h1_omega_norm",
        "j_lower_bound",
        "ln_j_lower_bound",
        "iterations",
        "wall_time_s",
    ]);
    sweep_rows(&mut table, cfg, "main", mu, &main);
    sweep_rows(&mut table, cfg, "control", mu_control, &control);
    out.summary.push(format!(
        "grid m = {} (h = {:.6}), {}; p1 = {:.6}, p2 = {:.6}; mu* = {mu_star}",
        sp.m,
        grid.h(),
        coeff.summary(),
        coeff.p1,
        coeff.p2
    ));
    out.summary.push(format!(
        "main run: mu = {mu:.6} = {:.4} p2 mu*, eps = {}, tau = {}, T = {horizon}: lambda0 = {}",
        mu / (coeff.p2 * mu_star),
        list(&eps),
        sp.tau,
        list(&main.iter().map(|r| r.lambda0).collect::<Vec<_>>())
    ));
    out.summary.push(format!(
        "control run: mu = {mu_control:.6} = {} mu*: lambda0 = {}",
        sp.control_factor,
        list(&control.iter().map(|r| r.lambda0).collect::<Vec<_>>())
    ));
    out.checks.extend(blowup_checks("", &main, sp.ratio));
    let control_min = control.iter().map(|r| r.lambda0).fold(f64::INFINITY, f64::min);
    out.checks.push(Check::new(
        "control_bounded",
        control_min > 0.0,
        format!("smallest control-run lambda0 = {control_min:.6} (bounded below by 0)"),
    ));

    if sp.discrete_factor > 0.0 {
        let nu = hardy_eigenpair(&grid).tag(CMD)?.lambda0;
        let mu_d = sp.discrete_factor * coeff.p2 * nu;
        let discrete = spectral_sweep(&grid, &coeff, &masks, mu_d, &eps, sp.tau, horizon, strict).tag(CMD)?;
        sweep_rows(&mut table, cfg, "discrete", mu_d, &discrete);
        out.summary.push(format!(
            "discrete run: mu = {mu_d:.6} = {} p2 nu_h with nu_h = {nu:.6} the discrete Hardy constant: lambda0 = {}",
            sp.discrete_factor,
            list(&discrete.iter().map(|r| r.lambda0).collect::<Vec<_>>())
        ));
        out.diagnostics.extend(blowup_checks("discrete_", &discrete, sp.ratio));
    }
    out.tables.push(("spectrum".into(), table));
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Adjoint solves from random terminal data: energy monotonicity, and the
/// duality identity against forward solves from random initial data.
pub fn run_solve(cfg: &RunConfig) -> RunResult<Outcome> {
    const CMD: &str = "solve";
    let start = Instant::now();
    let so = &cfg.solve;
    let mut out = Outcome::new(CMD);
    let grid = build_grid(cfg, cfg.grid.m).tag(CMD)?;
    let coeff = Coefficient::build(&grid, cfg.coefficient_spec(cfg.coefficient.kind)).tag(CMD)?;
    let mu_star = hardy_critical();
    let mus: Vec<f64> = match cfg.mu {
        Some(mu) => vec![mu],
        None => so.mu_factors.iter().map(|f| f * coeff.p1 * mu_star).collect(),
    };
    let tg = TimeGrid::new(cfg.time.horizon, cfg.time.steps, cfg.time.theta).tag(CMD)?;
    let everywhere = vec![true; grid.len()];
    let mut rng = SeededRng::new(cfg.seed);
    let mut table = Table::new(&[
        "mu",
        "sample",
        "max_violation",
        "min_increment",
        "duality_residual",
        "y0_norm",
        "yT_norm",
    ]);
    let mut worst_violation: f64 = 0.0;
    let mut worst_duality: f64 = 0.0;
    for &mu in &mus {
        let stepper = ThetaStepper::new(&operator(&grid, &coeff, mu).tag(CMD)?, tg).tag(CMD)?;
        let mut mu_worst: f64 = 0.0;
        for sample in 0..so.samples {
            let y_t = rng.noise(grid.len());
            let y = stepper.adjoint(&y_t).tag(CMD)?;
            let mono = check_monotonicity(&grid, &y);
            let u0 = rng.noise(grid.len());
            let u = stepper.forward(&u0, None, &everywhere).tag(CMD)?;
            let dual = duality_residual(&grid, &stepper, &u, None, &y);
            table.push(vec![
                fmt_f64(mu),
                sample.to_string(),
                fmt_f64(mono.max_violation),
                fmt_f64(mono.min_increment),
                fmt_f64(dual),
                fmt_f64(grid.l2_norm(y.initial())),
                fmt_f64(grid.l2_norm(y.terminal())),
            ]);
            mu_worst = mu_worst.max(mono.max_violation);
            worst_duality = worst_duality.max(dual);
        }
        out.summary.push(format!(
            "mu = {mu:.6} ({:.3} p1 mu*): worst relative norm increase backward in time {mu_worst:.3e} over {} samples",
            mu / (coeff.p1 * mu_star),
            so.samples
        ));
        worst_violation = worst_violation.max(mu_worst);
    }
    out.summary.push(format!(
        "grid m = {}, {}, T = {}, N = {}, theta = {}",
        cfg.grid.m,
        coeff.summary(),
        tg.horizon,
        tg.steps,
        tg.theta
    ));
    out.tables.push(("solve".into(), table));
    out.checks.push(Check::new(
        "energy_monotone",
        worst_violation <= so.tolerance,
        format!("worst signed violation {worst_violation:.3e} (tolerance {:e})", so.tolerance),
    ));
    out.checks.push(Check::new(
        "solve_duality",
        worst_duality <= so.duality_tolerance,
        format!("worst duality residual {worst_duality:.3e} (tolerance {:e})", so.duality_tolerance),
    ));
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Weight construction and validation, derivative check, and the Carleman
/// ratio across `s` multiples and grids.
pub fn run_carleman(cfg: &RunConfig) -> RunResult<Outcome> {
    const CMD: &str = "carleman";
    let start = Instant::now();
    let ca = &cfg.carleman;
    let mut out = Outcome::new(CMD);
    let tg = TimeGrid::new(cfg.time.horizon, cfg.time.steps, cfg.time.theta).tag(CMD)?;
    let mut header = vec!["m", "trajectory", "s_factor"];
    header.extend(CarlemanReport::HEADER);
    let mut table = Table::new(&header);
    let mut fd_table = Table::new(&["step", "max_rel_dt", "max_rel_grad", "max_rel_hess", "worst"]);
    let mut obs_table = Table::new(&["m", "trial", "value", "subspace_dim"]);
    // ratios[trajectory] over every (m, s)
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); ca.trajectories];
    let mut nonnegative = true;
    let s_max = ca.s_factors.iter().cloned().fold(0.0, f64::max);
    for (gi, &m) in ca.m_list.iter().enumerate() {
        let grid = build_grid(cfg, m).tag(CMD)?;
        let coeff = Coefficient::build(&grid, cfg.coefficient_spec(cfg.coefficient.kind)).tag(CMD)?;
        let mu = cfg.mu.unwrap_or(ca.mu_factor * coeff.controllability_limit());
        let masks = build_masks(&grid, cfg.omega_spec(ca.omega), ca.r, &coeff, mu).tag(CMD)?;
        let psi = build_psi(&grid, &masks, ca.psi, PsiOptions::default()).tag(CMD)?;
        let lam = ca.lambda.unwrap_or(2.0 * lambda_min(psi.sup, domain_radius(cfg)));
        let s0 = default_s0(&psi, ca.gamma, lam, tg.horizon, s_max, ca.sigma_limit).tag(CMD)?;
        let base = WeightSystem::new(&psi, ca.gamma, lam, s0, tg.horizon).tag(CMD)?;
        out.summary.push(format!(
            "m = {m}: {} psi validated with margin delta = {:.4e}, sup psi = {:.6}; {}; mu = {mu:.6}; gamma = {} so k0 = {}; lambda = {lam:.6}; s0 = {s0:.6e} (2 sigma <= {} at t = T/2 for s = {s_max} s0)",
            ca.psi.name(),
            psi.delta,
            psi.sup,
            masks.summary(),
            ca.gamma,
            base.k0,
            ca.sigma_limit
        ));
        if gi == 0 {
            let mut rng = SeededRng::new(cfg.seed);
            let samples = derivative_samples(&mut rng, ca.fd_samples, tg.horizon);
            let mut worst = Vec::new();
            for &step in &ca.fd_steps {
                let d = check_derivatives(&base, &samples, step).tag(CMD)?;
                fd_table.push(vec![
                    fmt_f64(step),
                    fmt_f64(d.max_rel_dt),
                    fmt_f64(d.max_rel_grad),
                    fmt_f64(d.max_rel_hess),
                    fmt_f64(d.worst()),
                ]);
                worst.push((step, d.worst()));
            }
            worst.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (fine_step, fine) = worst[0];
            out.checks.push(Check::new(
                "derivative_agreement",
                fine <= ca.fd_tolerance,
                format!(
                    "worst relative error {fine:.3e} at step {fine_step:e} over {} samples (tolerance {:e})",
                    samples.len(),
                    ca.fd_tolerance
                ),
            ));
            if let Some(&(coarse_step, coarse)) = worst.last().filter(|_| worst.len() > 1) {
                let order = (coarse / fine).ln() / (coarse_step / fine_step).ln();
                out.checks.push(Check::new(
                    "derivative_order",
                    order >= 1.5,
                    format!("observed order {order:.3} between steps {coarse_step:e} and {fine_step:e} (second order expected, need >= 1.5)"),
                ));
            }
        }
        let l = operator(&grid, &coeff, mu).tag(CMD)?;
        let stepper = ThetaStepper::new(&l, tg).tag(CMD)?;
        // the same seed on every grid draws the same continuous terminal data
        let mut rng = SeededRng::new(cfg.seed.wrapping_add(1));
        let grid_id = format!("m{m}");
        for (j, ratio_row) in ratios.iter_mut().enumerate() {
            let w = stepper.adjoint(&rng.smooth_field(&grid, 3)).tag(CMD)?;
            for &f in &ca.s_factors {
                let ws = base.with_s(f * s0);
                let rep = carleman_sides(&ws, &grid, &masks, &w, None, &grid_id).tag(CMD)?;
                nonnegative &= rep.all_nonnegative();
                ratio_row.push(rep.ratio);
                let row = CarlemanReport::table(std::slice::from_ref(&rep)).rows.remove(0);
                let mut full = vec![m.to_string(), j.to_string(), fmt_f64(f)];
                full.extend(row);
                table.push(full);
            }
        }
        if ca.observability_trials > 0 {
            let obs_tg = TimeGrid::new(tg.horizon, tg.steps, 1.0).tag(CMD)?;
            let mut rng = SeededRng::new(cfg.seed.wrapping_add(2));
            let est = observability_constant(&grid, &l, &masks, obs_tg, ca.observability_trials, &mut rng).tag(CMD)?;
            for (k, (v, d)) in est.per_trial.iter().zip(&est.subspace_dims).enumerate() {
                obs_table.push(vec![m.to_string(), k.to_string(), fmt_f64(*v), d.to_string()]);
            }
            out.summary.push(format!(
                "m = {m}: observability constant lower estimate {:.6e} (theta = 1, T = {}, N = {})",
                est.value, obs_tg.horizon, obs_tg.steps
            ));
        }
    }
    let spreads: Vec<f64> = ratios
        .iter()
        .map(|r| {
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            hi / lo
        })
        .collect();
    let worst_spread = spreads.iter().cloned().fold(0.0, f64::max);
    let all_ratios: Vec<f64> = ratios.iter().flatten().cloned().collect();
    out.summary.push(format!(
        "C_est range [{:.6e}, {:.6e}] over m = {:?}, s = {:?} s0, {} trajectories",
        all_ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        all_ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ca.m_list,
        ca.s_factors,
        ca.trajectories
    ));
    out.checks.push(Check::new(
        "carleman_nonnegative",
        nonnegative,
        "every LHS and RHS term is nonnegative".to_string(),
    ));
    out.checks.push(Check::new(
        "carleman_stability",
        worst_spread.is_finite() && worst_spread <= ca.spread,
        format!(
            "per-trajectory max/min of C_est across s and m: {} (need <= {})",
            list(&spreads),
            ca.spread
        ),
    ));
    out.tables.push(("carleman".into(), table));
    out.tables.push(("weights_fd".into(), fd_table));
    if ca.observability_trials > 0 {
        out.tables.push(("observability".into(), obs_table));
    }
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// HUM null controls over several horizons, with Gram symmetry and
/// positivity checks on random pairs.
pub fn run_hum(cfg: &RunConfig) -> RunResult<Outcome> {
    const CMD: &str = "hum";
    let start = Instant::now();
    let hu = &cfg.hum;
    let mut out = Outcome::new(CMD);
    let m = hu.m.unwrap_or(cfg.grid.m);
    let grid = build_grid(cfg, m).tag(CMD)?;
    let coeff = Coefficient::build(&grid, cfg.coefficient_spec(hu.coefficient)).tag(CMD)?;
    let mu = cfg.mu.unwrap_or(hu.mu_factor * coeff.controllability_limit());
    let masks = build_masks(&grid, cfg.omega_spec(hu.omega), hu.r, &coeff, mu).tag(CMD)?;
    let l = operator(&grid, &coeff, mu).tag(CMD)?;
    out.summary.push(format!(
        "grid m = {m}, {}; mu = {mu:.6} = {:.4} (p1^2/p2) mu*; {}",
        coeff.summary(),
        mu / coeff.controllability_limit(),
        masks.summary()
    ));

    // Gram operator at the base horizon
    let tg = TimeGrid::new(cfg.time.horizon, cfg.time.steps, cfg.time.theta).tag(CMD)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut gram_table = Table::new(&["pair", "symmetry_defect", "psd_defect", "quadratic_form"]);
    let (mut worst_sym, mut worst_psd): (f64, f64) = (0.0, 0.0);
    if hu.gram_pairs > 0 {
        let gram = Gram::new(&grid, &l, &masks, tg).tag(CMD)?;
        for k in 0..hu.gram_pairs {
            let a = rng.noise(grid.len());
            let b = rng.noise(grid.len());
            let la = gram.apply(&a).tag(CMD)?;
            let lb = gram.apply(&b).tag(CMD)?;
            let scale = (norm2(la.values()) * norm2(b.values())).max(norm2(a.values()) * norm2(lb.values()));
            let sym = if scale > 0.0 {
                (dot(la.values(), b.values()) - dot(a.values(), lb.values())).abs() / scale
            } else {
                0.0
            };
            let q = dot(la.values(), a.values());
            let qscale = norm2(la.values()) * norm2(a.values());
            let psd = if qscale > 0.0 { (-q).max(0.0) / qscale } else { 0.0 };
            gram_table.push(vec![k.to_string(), fmt_f64(sym), fmt_f64(psd), fmt_f64(q)]);
            worst_sym = worst_sym.max(sym);
            worst_psd = worst_psd.max(psd);
        }
        out.summary.push(format!(
            "Gram operator at T = {}, N = {}, theta = {}: worst symmetry defect {worst_sym:.3e}, worst PSD defect {worst_psd:.3e} over {} pairs",
            tg.horizon, tg.steps, tg.theta, hu.gram_pairs
        ));
        out.checks.push(Check::new(
            "gram_symmetry",
            worst_sym <= hu.gram_tolerance,
            format!("worst relative defect {worst_sym:.3e} (tolerance {:e})", hu.gram_tolerance),
        ));
        out.checks.push(Check::new(
            "gram_psd",
            worst_psd <= hu.gram_tolerance,
            format!("worst relative defect {worst_psd:.3e} (tolerance {:e})", hu.gram_tolerance),
        ));
        out.tables.push(("gram".into(), gram_table));
    }

    let u0 = rng.smooth_field(&grid, 4);
    let settings = HumSettings {
        delta_pen: hu.delta_pen,
        cg_tol: hu.cg_tol,
        max_iter: hu.max_iter,
        ..HumSettings::default()
    };
    let mut table = Table::new(&[
        "T",
        "N",
        "theta",
        "u0_norm",
        "terminal_norm",
        "terminal_ratio",
        "cost",
        "cost_ratio",
        "j_value",
        "cg_iterations",
        "cg_residual",
        "duality_residual",
        "support_leak",
        "wall_time_s",
    ]);
    let (mut reached, mut finite, mut dual_ok, mut local) = (true, true, true, true);
    let mut worst_dual: f64 = 0.0;
    let mut ratios = Vec::new();
    for &horizon in &hu.horizons {
        let t0 = Instant::now();
        let problem = ControlProblem {
            grid: &grid,
            l: &l,
            masks: &masks,
            time_grid: tg.with_horizon(horizon).tag(CMD)?,
            coeff: &coeff,
            mu,
        };
        let res = synthesize_control(&problem, &u0, settings).tag(CMD)?;
        let ratio = res.terminal_norm / res.u0_norm;
        let cost_ratio = res.cost / res.u0_norm;
        table.push(vec![
            fmt_f64(horizon),
            tg.steps.to_string(),
            fmt_f64(tg.theta),
            fmt_f64(res.u0_norm),
            fmt_f64(res.terminal_norm),
            fmt_f64(ratio),
            fmt_f64(res.cost),
            fmt_f64(cost_ratio),
            fmt_f64(res.j_value),
            res.cg_iterations.to_string(),
            fmt_f64(res.cg_residual),
            fmt_f64(res.duality_residual),
            fmt_f64(res.support_leak),
            timing(cfg, t0.elapsed().as_secs_f64()),
        ]);
        out.summary.push(format!(
            "T = {horizon}: |u(T)|/|u0| = {ratio:.3e}, control cost |f|/|u0| = {cost_ratio:.6e}, J = {:.6e}, CG {} iterations (delta_pen = {:e}), duality residual {:.3e}",
            res.j_value, res.cg_iterations, hu.delta_pen, res.duality_residual
        ));
        reached &= ratio <= hu.target;
        finite &= cost_ratio.is_finite();
        dual_ok &= res.duality_residual <= hu.duality_tolerance;
        local &= res.support_leak == 0.0;
        worst_dual = worst_dual.max(res.duality_residual);
        ratios.push(ratio);
    }
    out.tables.push(("hum".into(), table));
    out.checks.push(Check::new(
        "null_control",
        reached,
        format!("|u(T)|/|u0| = {} (need <= {:e})", list(&ratios), hu.target),
    ));
    out.checks.push(Check::new("control_cost_finite", finite, "cost/|u0| finite for every horizon".into()));
    out.checks.push(Check::new(
        "hum_duality",
        dual_ok,
        format!("worst duality residual {worst_dual:.3e} (tolerance {:e})", hu.duality_tolerance),
    ));
    out.checks.push(Check::new("control_localized", local, "control vanishes outside omega".into()));
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Cutoff stabilization with the origin inside the control region.
pub fn run_stabilize(cfg: &RunConfig) -> RunResult<Outcome> {
    const CMD: &str = "stabilize";
    let start = Instant::now();
    let st = &cfg.stabilize;
    let mut out = Outcome::new(CMD);
    let grid = build_grid(cfg, cfg.grid.m).tag(CMD)?;
    let coeff = Coefficient::build(&grid, cfg.coefficient_spec(cfg.coefficient.kind)).tag(CMD)?;
    let mu = cfg.mu.unwrap_or(st.mu_factor * coeff.p2 * hardy_critical());
    let spec = OmegaSpec::Ball {
        center: [0.0; 3],
        radius: st.radius,
    };
    let tg = TimeGrid::new(cfg.time.horizon, cfg.time.steps, cfg.time.theta).tag(CMD)?;
    let u0 = SeededRng::new(cfg.seed).smooth_field(&grid, 4);
    let res = cutoff_stabilizer(&grid, &coeff, mu, spec, &u0, tg).tag(CMD)?;
    let mut table = Table::new(&["step", "time", "state_l2", "control_l2"]);
    for (k, (u, f)) in res.state.frames.iter().zip(&res.control.frames).enumerate() {
        table.push(vec![
            k.to_string(),
            fmt_f64(tg.time(k)),
            fmt_f64(grid.l2_norm(u)),
            fmt_f64(grid.l2_norm(f)),
        ]);
    }
    out.tables.push(("stabilize".into(), table));
    let growth = res.max_norm / res.u0_norm;
    out.summary.push(format!(
        "grid m = {}, {}; mu = {mu:.6} = {:.4} p2 mu*; omega = {}; cutoff radius {:.4}; T = {}, N = {}, theta = {}",
        cfg.grid.m,
        coeff.summary(),
        mu / (coeff.p2 * hardy_critical()),
        spec.describe(),
        res.cutoff.radius,
        tg.horizon,
        tg.steps,
        tg.theta
    ));
    out.summary.push(format!(
        "max residual {:.3e}, support leak {:e}, max |u(t)|/|u0| = {growth:.6}, J = {:.6e}, |u(T)|/|u0| = {:.6e}",
        res.max_residual,
        res.support_leak,
        res.j_value,
        grid.l2_norm(res.state.terminal()) / res.u0_norm
    ));
    out.checks.push(Check::new(
        "stabilizer_residual",
        res.max_residual <= st.tolerance,
        format!("max per-step residual {:.3e} (tolerance {:e})", res.max_residual, st.tolerance),
    ));
    out.checks.push(Check::new(
        "stabilizer_support",
        res.support_leak == 0.0,
        format!("largest control value outside omega {:e}", res.support_leak),
    ));
    out.checks.push(Check::new(
        "stabilizer_bounded",
        growth.is_finite(),
        format!("max |u(t)|/|u0| = {growth:.6}"),
    ));
    out.checks.push(Check::new(
        "stabilizer_cost_finite",
        res.j_value.is_finite(),
        format!("J = {:.6e}", res.j_value),
    ));
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

pub const SUBCOMMANDS: [&str; 6] = ["hardy", "spectrum", "solve", "carleman", "hum", "stabilize"];

pub fn run_named(name: &str, cfg: &RunConfig) -> RunResult<Outcome> {
    match name {
        "hardy" => run_hardy(cfg),
        "spectrum" => run_spectrum(cfg),
        "solve" => run_solve(cfg),
        "carleman" => run_carleman(cfg),
        "hum" => run_hum(cfg),
        "stabilize" => run_stabilize(cfg),
        _ => unreachable!("unknown subcommand {name}"),
    }
}
