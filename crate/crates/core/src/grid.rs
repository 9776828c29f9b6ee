//! Spatial discretization of the domain: a staggered Cartesian lattice,
//! region masks for the control set and the singular ball, and the
//! diffusion coefficient with its bounds.
//!
//! Lattice coordinates are `x_i = -L - h/2 + i h` along every axis, so all
//! coordinates are odd multiples of `h/2` (`m` must be even) and the origin
//! always falls at the center of a cell.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Space dimension. Fixed: the inverse-square regime needs `n >= 3`.
pub const DIM: usize = 3;

/// Critical Hardy constant `(n - 2)^2 / 4` for `n = DIM`.
pub fn hardy_critical() -> f64 {
    let n = DIM as f64;
    (n - 2.0) * (n - 2.0) / 4.0
}

/// Cut fractions below this are clamped when folding Dirichlet values into
/// the diagonal.
pub const MIN_CUT_FRACTION: f64 = 0.05;

pub type Point = [f64; DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainShape {
    /// Ball of radius `L` centered at the origin.
    Ball,
    /// Cube `[-L + h/2, L + h/2]^3` whose faces lie on lattice planes.
    Box,
}

impl DomainShape {
    pub fn name(&self) -> &'static str {
        match self {
            DomainShape::Ball => "ball",
            DomainShape::Box => "box",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ball" => Some(DomainShape::Ball),
            "box" => Some(DomainShape::Box),
            _ => None,
        }
    }
}

/// Lattice neighbor of an interior node along one axis direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Neighbor {
    Interior(usize),
    /// Eliminated Dirichlet node; the boundary crosses the link at
    /// `fraction * h` from the interior node.
    Boundary { fraction: f64 },
}

/// Axis directions in neighbor order: -x, +x, -y, +y, -z, +z.
pub const DIRECTIONS: [(usize, f64); 6] = [
    (0, -1.0),
    (0, 1.0),
    (1, -1.0),
    (1, 1.0),
    (2, -1.0),
    (2, 1.0),
];

#[derive(Debug, Clone)]
pub struct Grid {
    half_width: f64,
    cells_per_axis: usize,
    h: f64,
    shape: DomainShape,
    axis_len: usize,
    lattice: Vec<[u32; DIM]>,
    points: Vec<Point>,
    index: Vec<u32>,
    neighbors: Vec<[Neighbor; 6]>,
}

const NOT_INTERIOR: u32 = u32::MAX;

impl Grid {
    /// Builds the staggered grid. Requires `m >= 8`, `m` even and `L > 0`.
    pub fn build(half_width: f64, cells_per_axis: usize, shape: DomainShape) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidGrid(format!("half width must be positive, got {half_width}")));
        }
        if cells_per_axis < 8 {
            return Err(Error::InvalidGrid(format!(
                "m = {cells_per_axis} is too coarse (need m >= 8)"
            )));
        }
        if cells_per_axis % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "m = {cells_per_axis} is odd; the origin would be a lattice node"
            )));
        }
        let m = cells_per_axis;
        let h = 2.0 * half_width / m as f64;
        let axis_len = m + 2;
        let coord = |i: usize| -half_width - 0.5 * h + i as f64 * h;

        let mut grid = Grid {
            half_width,
            cells_per_axis: m,
            h,
            shape,
            axis_len,
            lattice: Vec::new(),
            points: Vec::new(),
            index: vec![NOT_INTERIOR; axis_len * axis_len * axis_len],
            neighbors: Vec::new(),
        };

        for i in 0..axis_len {
            for j in 0..axis_len {
                for k in 0..axis_len {
                    let x = [coord(i), coord(j), coord(k)];
                    if grid.contains(&x) {
                        let id = grid.points.len() as u32;
                        let slot = grid.flat([i, j, k]);
                        grid.index[slot] = id;
                        grid.lattice.push([i as u32, j as u32, k as u32]);
                        grid.points.push(x);
                    }
                }
            }
        }
        if grid.points.is_empty() {
            return Err(Error::InvalidGrid("no interior nodes".into()));
        }

        let mut neighbors = Vec::with_capacity(grid.points.len());
        for (node, ijk) in grid.lattice.iter().enumerate() {
            let mut row = [Neighbor::Boundary { fraction: 1.0 }; 6];
            for (slot, &(axis, sign)) in DIRECTIONS.iter().enumerate() {
                let mut nb = *ijk;
                nb[axis] = (nb[axis] as i64 + sign as i64) as u32;
                let id = grid.index[grid.flat([nb[0] as usize, nb[1] as usize, nb[2] as usize])];
                row[slot] = if id != NOT_INTERIOR {
                    Neighbor::Interior(id as usize)
                } else {
                    Neighbor::Boundary {
                        fraction: grid.cut_fraction(&grid.points[node], axis, sign),
                    }
                };
            }
            neighbors.push(row);
        }
        grid.neighbors = neighbors;
        Ok(grid)
    }

    fn flat(&self, ijk: [usize; DIM]) -> usize {
        (ijk[0] * self.axis_len + ijk[1]) * self.axis_len + ijk[2]
    }

    /// Strict interior test for the continuous domain.
    pub fn contains(&self, x: &Point) -> bool {
        match self.shape {
            DomainShape::Ball => norm(x) < self.half_width,
            DomainShape::Box => {
                let lo = -self.half_width + 0.5 * self.h;
                let hi = self.half_width + 0.5 * self.h;
                // faces are lattice planes; compare with a relative guard
                let tol = 1e-9 * self.h;
                x.iter().all(|&c| c > lo + tol && c < hi - tol)
            }
        }
    }

    fn cut_fraction(&self, x: &Point, axis: usize, sign: f64) -> f64 {
        let t = match self.shape {
            DomainShape::Ball => {
                let r2 = x.iter().map(|c| c * c).sum::<f64>();
                let xd = x[axis];
                let disc = xd * xd - (r2 - self.half_width * self.half_width);
                (-sign * xd + disc.max(0.0).sqrt()) / self.h
            }
            DomainShape::Box => {
                let face = if sign > 0.0 {
                    self.half_width + 0.5 * self.h
                } else {
                    -self.half_width + 0.5 * self.h
                };
                (face - x[axis]) * sign / self.h
            }
        };
        t.clamp(MIN_CUT_FRACTION, 1.0)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn dimension(&self) -> usize {
        DIM
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Shift of the lattice relative to an origin-centered one.
    pub fn node_offset(&self) -> f64 {
        0.5 * self.h
    }

    pub fn shape(&self) -> DomainShape {
        self.shape
    }

    /// Number of interior nodes (unknowns).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, node: usize) -> &Point {
        &self.points[node]
    }

    pub fn lattice_coords(&self) -> &[[u32; DIM]] {
        &self.lattice
    }

    /// Dense index of the lattice point `ijk`, if it is an interior node.
    pub fn interior_index(&self, ijk: [usize; DIM]) -> Option<usize> {
        if ijk.iter().any(|&c| c >= self.axis_len) {
            return None;
        }
        match self.index[self.flat(ijk)] {
            NOT_INTERIOR => None,
            id => Some(id as usize),
        }
    }

    pub fn neighbors(&self, node: usize) -> &[Neighbor; 6] {
        &self.neighbors[node]
    }

    /// Quadrature weight of one node (`h^3`).
    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    pub fn min_radius(&self) -> f64 {
        self.points.iter().map(norm).fold(f64::INFINITY, f64::min)
    }

    /// Largest value the exact inverse-square potential can take on this grid.
    pub fn potential_ceiling(&self) -> f64 {
        1.0 / self.min_radius().powi(2)
    }

    /// Radius of the largest origin-centered ball inside the domain.
    pub fn inradius(&self) -> f64 {
        match self.shape {
            DomainShape::Ball => self.half_width,
            DomainShape::Box => self.half_width - 0.5 * self.h,
        }
    }

    /// Samples a function at every interior node.
    pub fn sample(&self, f: impl Fn(&Point) -> f64) -> ScalarField {
        ScalarField::new(self.points.iter().map(f).collect())
    }

    pub fn summary(&self) -> String {
        format!(
            "grid: shape={} L={} m={} h={:.6} nodes={} offset={:.6} min|x|={:.6} potential_ceiling={:.6}",
            self.shape.name(),
            self.half_width,
            self.cells_per_axis,
            self.h,
            self.len(),
            self.node_offset(),
            self.min_radius(),
            self.potential_ceiling()
        )
    }
}

pub fn norm(x: &Point) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

/// Continuous description of the control region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaSpec {
    Ball { center: Point, radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl OmegaSpec {
    pub fn default_ball() -> Self {
        OmegaSpec::Ball {
            center: [0.6, 0.0, 0.0],
            radius: 0.15,
        }
    }

    pub fn default_annulus() -> Self {
        OmegaSpec::Annulus {
            inner: 0.55,
            outer: 0.75,
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        match *self {
            OmegaSpec::Ball { center, radius } => distance(x, &center) < radius,
            OmegaSpec::Annulus { inner, outer } => {
                let r = norm(x);
                r > inner && r < outer
            }
        }
    }

    /// Distance from the origin to the closure of the region.
    pub fn distance_from_origin(&self) -> f64 {
        match *self {
            OmegaSpec::Ball { center, radius } => (norm(&center) - radius).max(0.0),
            OmegaSpec::Annulus { inner, .. } => inner,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            OmegaSpec::Ball { center, radius } => format!(
                "ball center=({},{},{}) radius={}",
                center[0], center[1], center[2], radius
            ),
            OmegaSpec::Annulus { inner, outer } => format!("annulus {inner}..{outer}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegionMasks {
    pub omega: Vec<bool>,
    pub omega0: Vec<bool>,
    pub ball_r: Vec<bool>,
    pub r: f64,
    pub omega_spec: OmegaSpec,
    /// Smallest distance between a `B_r` node and an `omega` node.
    pub node_separation: f64,
    /// Smallest `|x| - r` over `omega` nodes.
    pub radial_clearance: f64,
}

impl RegionMasks {
    /// Masks for the null-control setting: `omega` must stay `2h` away from
    /// the singular ball `B(0, r)`.
    pub fn build(grid: &Grid, omega_spec: OmegaSpec, r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidArgument(format!("r = {r} must lie in (0, 1)")));
        }
        if r >= grid.inradius() {
            return Err(Error::SeparationViolation(format!(
                "closed ball B(0, {r}) is not inside the domain (inradius {})",
                grid.inradius()
            )));
        }
        let required = r + 2.0 * grid.h();
        let clearance = omega_spec.distance_from_origin();
        if clearance < required {
            return Err(Error::SeparationViolation(format!(
                "omega ({}) comes within {clearance:.4} of the origin; need >= r + 2h = {required:.4}",
                omega_spec.describe()
            )));
        }
        let mut masks = Self::from_regions(grid, omega_spec, r)?;
        if masks.radial_clearance < 2.0 * grid.h() {
            return Err(Error::SeparationViolation(format!(
                "an omega node lies within {:.4} of B_r (need 2h = {:.4})",
                masks.radial_clearance,
                2.0 * grid.h()
            )));
        }
        masks.node_separation = node_separation(grid, &masks.ball_r, &masks.omega);
        Ok(masks)
    }

    /// Masks for configurations where the control region contains the origin
    /// (cutoff stabilization). There is no singular ball.
    pub fn around_origin(grid: &Grid, omega_spec: OmegaSpec) -> Result<Self> {
        if !omega_spec.contains(&[0.0; DIM]) {
            return Err(Error::OriginOutsideOmega);
        }
        Self::from_regions(grid, omega_spec, 0.0)
    }

    fn from_regions(grid: &Grid, omega_spec: OmegaSpec, r: f64) -> Result<Self> {
        let omega: Vec<bool> = grid.points().iter().map(|x| omega_spec.contains(x)).collect();
        if !omega.iter().any(|&b| b) {
            return Err(Error::EmptyRegion("omega"));
        }
        let omega0 = erode(grid, &omega);
        let ball_r: Vec<bool> = grid.points().iter().map(|x| norm(x) < r).collect();
        let radial_clearance = grid
            .points()
            .iter()
            .zip(&omega)
            .filter(|(_, &w)| w)
            .map(|(x, _)| norm(x) - r)
            .fold(f64::INFINITY, f64::min);
        Ok(RegionMasks {
            omega,
            omega0,
            ball_r,
            r,
            omega_spec,
            node_separation: f64::INFINITY,
            radial_clearance,
        })
    }

    pub fn omega_count(&self) -> usize {
        self.omega.iter().filter(|&&b| b).count()
    }

    pub fn summary(&self) -> String {
        format!(
            "masks: omega={} nodes={} omega0_nodes={} r={} ball_r_nodes={} node_separation={:.6} radial_clearance={:.6}",
            self.omega_spec.describe(),
            self.omega_count(),
            self.omega0.iter().filter(|&&b| b).count(),
            self.r,
            self.ball_r.iter().filter(|&&b| b).count(),
            self.node_separation,
            self.radial_clearance
        )
    }
}

/// Nodes of `mask` whose six lattice neighbors are interior nodes of `mask`.
fn erode(grid: &Grid, mask: &[bool]) -> Vec<bool> {
    (0..grid.len())
        .map(|i| {
            mask[i]
                && grid.neighbors(i).iter().all(|nb| match nb {
                    Neighbor::Interior(j) => mask[*j],
                    Neighbor::Boundary { .. } => false,
                })
        })
        .collect()
}

fn node_separation(grid: &Grid, a: &[bool], b: &[bool]) -> f64 {
    let pa: Vec<&Point> = grid.points().iter().zip(a).filter(|(_, &m)| m).map(|(p, _)| p).collect();
    let pb: Vec<&Point> = grid.points().iter().zip(b).filter(|(_, &m)| m).map(|(p, _)| p).collect();
    let mut best = f64::INFINITY;
    for x in &pa {
        for y in &pb {
            best = best.min(distance(x, y));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    /// `p(x) = 1 + amplitude * exp(-|x|^2 / width^2)`.
    RadialBump { amplitude: f64, width: f64 },
}

impl CoefficientSpec {
    pub fn eval(&self, x: &Point) -> f64 {
        match *self {
            CoefficientSpec::Constant(c) => c,
            CoefficientSpec::RadialBump { amplitude, width } => {
                let r2 = x.iter().map(|c| c * c).sum::<f64>();
                1.0 + amplitude * (-r2 / (width * width)).exp()
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            CoefficientSpec::Constant(c) => format!("constant {c}"),
            CoefficientSpec::RadialBump { amplitude, width } => {
                format!("radial bump amplitude={amplitude} width={width}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Coefficient {
    pub p: ScalarField,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub spec: CoefficientSpec,
}

impl Coefficient {
    pub fn build(grid: &Grid, spec: CoefficientSpec) -> Result<Self> {
        let p = grid.sample(|x| spec.eval(x));
        if let Some((node, &value)) = p.values().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositiveCoefficient { node, value });
        }
        let p1 = p.values().iter().copied().fold(f64::INFINITY, f64::min);
        let p2 = p.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let h = grid.h();
        let p3 = grid
            .points()
            .iter()
            .map(|x| {
                let mut g2 = 0.0;
                for axis in 0..DIM {
                    let mut fwd = *x;
                    let mut bwd = *x;
                    fwd[axis] += h;
                    bwd[axis] -= h;
                    let d = (spec.eval(&fwd) - spec.eval(&bwd)) / (2.0 * h);
                    g2 += d * d;
                }
                g2.sqrt()
            })
            .fold(0.0, f64::max);
        Ok(Coefficient { p, p1, p2, p3, spec })
    }

    /// Upper end of the null-controllability range, `(p1^2 / p2) mu*`.
    pub fn controllability_limit(&self) -> f64 {
        self.p1 * self.p1 / self.p2 * hardy_critical()
    }

    pub fn summary(&self) -> String {
        format!(
            "coefficient: {} p1={:.6} p2={:.6} p3={:.6}",
            self.spec.describe(),
            self.p1,
            self.p2,
            self.p3
        )
    }
}

/// Largest singular-ball radius satisfying `2 p1^2 - 2 p2 mu/mu* > 3 p1 p3 r`
/// with a 10% margin, capped at `0.99` and at `0.99 * geometry_cap`.
pub fn admissible_r(coeff: &Coefficient, mu: f64, geometry_cap: f64) -> Result<f64> {
    admissible_r_from_bounds(coeff.p1, coeff.p2, coeff.p3, mu, geometry_cap)
}

pub fn admissible_r_from_bounds(p1: f64, p2: f64, p3: f64, mu: f64, geometry_cap: f64) -> Result<f64> {
    let mu_star = hardy_critical();
    let limit = p1 * p1 / p2 * mu_star;
    if !(mu >= 0.0) || mu >= limit {
        return Err(Error::MuOutOfRange {
            mu,
            reason: format!("need 0 <= mu < (p1^2/p2) mu* = {limit:.6}"),
        });
    }
    let slack = 2.0 * p1 * p1 - 2.0 * p2 * mu / mu_star;
    let bound = if p3 > 0.0 {
        0.9 * slack / (3.0 * p1 * p3)
    } else {
        f64::INFINITY
    };
    let r = bound.min(0.99).min(0.99 * geometry_cap);
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("geometry cap {geometry_cap} leaves no admissible r")));
    }
    Ok(r)
}

const DUMP_MAGIC: &[u8; 8] = b"SHGRID01";

/// Writes the grid (and optionally masks) as a little-endian binary dump:
/// magic, `n`, `m`, `L`, offset, shape, node count, lattice triplets, then
/// for each mask a count followed by node indices.
pub fn write_dump<W: Write>(grid: &Grid, masks: Option<&RegionMasks>, mut w: W) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(DIM as u32).to_le_bytes())?;
    w.write_all(&(grid.cells_per_axis as u32).to_le_bytes())?;
    w.write_all(&grid.half_width.to_le_bytes())?;
    w.write_all(&grid.node_offset().to_le_bytes())?;
    w.write_all(&[match grid.shape {
        DomainShape::Ball => 0u8,
        DomainShape::Box => 1u8,
    }])?;
    w.write_all(&(grid.len() as u64).to_le_bytes())?;
    for ijk in &grid.lattice {
        for c in ijk {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    let empty = Vec::new();
    let sets: [&Vec<bool>; 3] = match masks {
        Some(m) => [&m.omega, &m.omega0, &m.ball_r],
        None => [&empty, &empty, &empty],
    };
    for set in sets {
        let ids: Vec<u32> = set.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as u32).collect();
        w.write_all(&(ids.len() as u64).to_le_bytes())?;
        for id in ids {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Decoded contents of a binary grid dump.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub dimension: u32,
    pub cells_per_axis: u32,
    pub half_width: f64,
    pub node_offset: f64,
    pub shape: DomainShape,
    pub lattice: Vec<[u32; DIM]>,
    pub omega: Vec<u32>,
    pub omega0: Vec<u32>,
    pub ball_r: Vec<u32>,
}

pub fn read_dump<R: Read>(mut r: R) -> Result<GridDump> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Io("not a grid dump".into()));
    }
    let dimension = read_u32(&mut r)?;
    let cells_per_axis = read_u32(&mut r)?;
    let half_width = read_f64(&mut r)?;
    let node_offset = read_f64(&mut r)?;
    let mut shape = [0u8; 1];
    r.read_exact(&mut shape)?;
    let shape = match shape[0] {
        0 => DomainShape::Ball,
        1 => DomainShape::Box,
        s => return Err(Error::Io(format!("unknown shape tag {s}"))),
    };
    let count = read_u64(&mut r)? as usize;
    let mut lattice = Vec::with_capacity(count);
    for _ in 0..count {
        lattice.push([read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?]);
    }
    let mut sets = Vec::new();
    for _ in 0..3 {
        let n = read_u64(&mut r)? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(read_u32(&mut r)?);
        }
        sets.push(ids);
    }
    let ball_r = sets.pop().unwrap_or_default();
    let omega0 = sets.pop().unwrap_or_default();
    let omega = sets.pop().unwrap_or_default();
    Ok(GridDump {
        dimension,
        cells_per_axis,
        half_width,
        node_offset,
        shape,
        lattice,
        omega,
        omega0,
        ball_r,
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
