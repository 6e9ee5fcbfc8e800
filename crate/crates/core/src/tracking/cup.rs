//! Ball-in-cup: vertical drops onto an incline that descends toward `+x`
//! and ends at `x = 0`, with a cup standing on the floor beyond it.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::acoustics::TABLE_SIZE;
use crate::calibration::TruncatedGaussian;
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, stream};
use crate::sim::{
    apply_collision, step_to_next_bounce, BallState, CollisionMode, SimParams, SurfacePlane, STANDARD_GRAVITY,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CupConfig {
    pub incline_deg: f64,
    /// Horizontal distance from the incline's bottom edge to the cup centre, m.
    pub cup_distance: f64,
    pub cup_radius: f64,
    /// Height of the cup opening above the floor, m.
    pub cup_height: f64,
    /// Drop height above the floor, m.
    pub drop_height: f64,
    pub max_bounces: usize,
    pub gravity: f64,
    pub collision_mode: CollisionMode,
}

impl Default for CupConfig {
    fn default() -> Self {
        CupConfig {
            incline_deg: 10.72,
            cup_distance: 0.21844,
            cup_radius: 0.045,
            cup_height: 0.1,
            drop_height: 0.3,
            max_bounces: 4,
            gravity: STANDARD_GRAVITY,
            collision_mode: CollisionMode::FullSpeed,
        }
    }
}

impl CupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.incline_deg > 0.0 && self.incline_deg < 90.0) {
            return Err(invalid("incline angle must lie in (0, 90) degrees"));
        }
        if !(self.cup_distance > 0.0) || !(self.cup_radius > 0.0) || !(self.cup_height >= 0.0) {
            return Err(invalid("cup distance and radius must be positive, height non-negative"));
        }
        if !(self.drop_height > self.cup_height) || self.max_bounces == 0 || !(self.gravity > 0.0) {
            return Err(invalid("drop height must exceed the cup height; bounces and gravity positive"));
        }
        Ok(())
    }
}

/// Regular grid of drop points `(x, y)` over the incline (`x ≤ 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CupGrid {
    pub x_range: [f64; 2],
    pub nx: usize,
    pub y_range: [f64; 2],
    pub ny: usize,
}

impl Default for CupGrid {
    fn default() -> Self {
        CupGrid { x_range: [-0.2, -0.02], nx: 10, y_range: [-0.06, 0.06], ny: 5 }
    }
}

impl CupGrid {
    pub fn validate(&self) -> Result<()> {
        let [x0, x1] = self.x_range;
        let [y0, y1] = self.y_range;
        if self.nx == 0 || self.ny == 0 || !(x0 <= x1) || !(y0 <= y1) {
            return Err(invalid("grid needs ordered ranges and at least one point per axis"));
        }
        if x1 > 0.0 || x0 < -TABLE_SIZE || y0 < -TABLE_SIZE / 2.0 || y1 > TABLE_SIZE / 2.0 {
            return Err(invalid("grid must lie on the incline"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let lin = |r: [f64; 2], n: usize, i: usize| if n == 1 { r[0] } else { r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64 };
        let mut pts = Vec::with_capacity(self.nx * self.ny);
        for i in 0..self.nx {
            for j in 0..self.ny {
                pts.push((lin(self.x_range, self.nx, i), lin(self.y_range, self.ny, j)));
            }
        }
        pts
    }

    /// Parses `x0:x1:nx,y0:y1:ny`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || invalid(format!("grid spec {spec:?} is not x0:x1:nx,y0:y1:ny"));
        let axes: Vec<&str> = spec.split(',').collect();
        let [xs, ys] = axes.as_slice() else { return Err(bad()) };
        let axis = |s: &str| -> Result<([f64; 2], usize)> {
            let p: Vec<&str> = s.split(':').collect();
            let [a, b, n] = p.as_slice() else { return Err(bad()) };
            Ok((
                [a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?],
                n.trim().parse().map_err(|_| bad())?,
            ))
        };
        let (x_range, nx) = axis(xs)?;
        let (y_range, ny) = axis(ys)?;
        let g = CupGrid { x_range, nx, y_range, ny };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CupCell {
    pub x: f64,
    pub y: f64,
    pub successes: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CupMap {
    pub cells: Vec<CupCell>,
}

impl CupMap {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "successes", "n"])?;
        for c in &self.cells {
            out.write_record([format!("{:.6}", c.x), format!("{:.6}", c.y), c.successes.to_string(), c.n.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One drop from `(x, y)`. Success when the ball descends through the cup
/// opening before touching anything past the incline.
pub fn drop_into_cup<R: Rng + ?Sized>(params: &SimParams, x: f64, y: f64, cfg: &CupConfig, rng: &mut R) -> Result<bool> {
    let plane = SurfacePlane::inclined(cfg.incline_deg.to_radians());
    let g = cfg.gravity;
    let mut state = BallState { position: Vector3::new(x, y, cfg.drop_height), velocity: Vector3::zeros(), time: 0.0 };
    if plane.height(&state.position) <= 0.0 {
        return Err(invalid("drop point lies below the incline"));
    }
    for _ in 0..cfg.max_bounces {
        let impact = step_to_next_bounce(&state, &plane, g)?;
        let flight = impact.state.time - state.time;
        let (p, v) = (state.position, state.velocity);
        let disc = v.z * v.z + 2.0 * g * (p.z - cfg.cup_height);
        if disc >= 0.0 {
            let t = (v.z + disc.sqrt()) / g;
            let at = p + v * t - Vector3::z() * (0.5 * g * t * t);
            if t > 0.0 && t <= flight && at.x > 0.0 {
                let off = ((at.x - cfg.cup_distance).powi(2) + at.y.powi(2)).sqrt();
                return Ok(off <= cfg.cup_radius);
            }
        }
        if impact.state.position.x > 0.0 {
            // past the bottom edge the floor is met first
            return Ok(false);
        }
        let v = apply_collision(&impact.state.velocity, &plane, params, rng)?;
        state = BallState { velocity: v, ..impact.state };
    }
    Ok(false)
}

/// Success counts over a drop grid, with `(e, log10 κ)` redrawn from the
/// posterior for every drop. Cell `j` owns its own stream family.
pub fn run_cup_experiment(
    posterior: &TruncatedGaussian,
    grid: &CupGrid,
    n_per_cell: usize,
    cfg: &CupConfig,
    seed: u64,
) -> Result<CupMap> {
    grid.validate()?;
    cfg.validate()?;
    if posterior.gaussian.dim() != 2 {
        return Err(invalid("cup posterior must be over (e, log10 κ)"));
    }
    let base = derive_seed(seed, "cup");
    let cells = grid
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(j, (x, y))| {
            let mut rng = stream(base, j as u64);
            let mut successes = 0;
            for _ in 0..n_per_cell {
                let theta = posterior.sample(&mut rng);
                let params =
                    SimParams { gravity: cfg.gravity, collision_mode: cfg.collision_mode, ..SimParams::new(theta[0], theta[1]) };
                if drop_into_cup(&params, x, y, cfg, &mut rng)? {
                    successes += 1;
                }
            }
            Ok(CupCell { x, y, successes, n: n_per_cell })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CupMap { cells })
}
