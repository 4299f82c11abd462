//! The crowd as a measure: an atomic part carried by individual agents and
//! an absolutely continuous part carried by a piecewise-constant density.
//!
//! A population's mass distribution is
//!
//! ```text
//! mu = theta * m + (1 - theta) * lambda * M
//! ```
//!
//! where `m` counts agents with unit weight, `M` integrates the density,
//! `theta` blends the two scales and `lambda = N / M0` converts macroscopic
//! mass into head counts.

use crate::error::{Error, Result};
use crate::geometry::{overlap_area, Grid, Obstacle, Rect};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Follower,
    Leader,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agent {
    pub id: u32,
    pub pos: Vec2,
    pub role: Role,
}

/// The atomic part: a finite list of unit point masses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MicroState {
    pub agents: Vec<Agent>,
}

impl MicroState {
    pub fn from_positions(positions: &[Vec2]) -> MicroState {
        MicroState {
            agents: positions
                .iter()
                .enumerate()
                .map(|(i, &pos)| Agent {
                    id: i as u32,
                    pos,
                    role: Role::Follower,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn count_in(&self, region: &Rect) -> usize {
        self.agents.iter().filter(|a| region.contains(a.pos)).count()
    }

    pub fn followers(&self) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(|a| a.role == Role::Follower)
    }

    pub fn follower_count(&self) -> usize {
        self.followers().count()
    }
}

/// The absolutely continuous part: one nonnegative coefficient per grid
/// cell, interpreted as a density (mass per unit area).
#[derive(Clone, Debug, PartialEq)]
pub struct MacroDensity {
    pub grid: Grid,
    pub rho: Vec<f64>,
}

impl MacroDensity {
    pub fn zeros(grid: Grid) -> MacroDensity {
        let n = grid.n_cells();
        MacroDensity {
            grid,
            rho: vec![0.0; n],
        }
    }

    pub fn total_mass(&self) -> f64 {
        let cell = self.grid.h * self.grid.h;
        self.rho.iter().sum::<f64>() * cell
    }

    /// Integral of the density over `region`, by exact cell overlap.
    pub fn mass_in(&self, region: &Rect) -> f64 {
        let (i0, i1, j0, j1) = self.grid.index_window(region.min, region.max);
        let mut total = 0.0;
        for iy in j0..=j1 {
            for ix in i0..=i1 {
                let rho = self.rho[self.grid.linear(ix, iy)];
                if rho > 0.0 {
                    let ov = overlap_area(&self.grid.cell_rect(ix, iy), region);
                    if ov > 0.0 {
                        total += rho * ov;
                    }
                }
            }
        }
        total
    }

    pub fn max_coefficient(&self) -> f64 {
        self.rho.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_coefficient(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// One population carried at both scales simultaneously.
#[derive(Clone, Debug)]
pub struct CrowdMeasure {
    pub micro: MicroState,
    pub density: MacroDensity,
    /// Scale interpolation weight in `[0, 1]`; 1 is fully microscopic.
    pub theta: f64,
    /// Head-count equivalent of one unit of macroscopic mass.
    pub lambda: f64,
}

impl CrowdMeasure {
    /// Multiscale mass of `region`:
    /// `theta * #agents + (1 - theta) * lambda * M(region)`.
    pub fn mass_in(&self, region: &Rect) -> f64 {
        let micro = self.micro.count_in(region) as f64;
        let macro_mass = self.density.mass_in(region);
        self.theta * micro + (1.0 - self.theta) * self.lambda * macro_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.theta * self.micro.len() as f64
            + (1.0 - self.theta) * self.lambda * self.density.total_mass()
    }
}

/// `lambda = n / m0`, the number of pedestrians represented by one unit of
/// macroscopic mass.
pub fn compute_lambda(n_agents: usize, m0: f64) -> Result<f64> {
    if n_agents == 0 {
        return Err(Error::InvalidScaling("population has no agents".into()));
    }
    if !(m0 > 0.0) {
        return Err(Error::InvalidScaling(format!(
            "macroscopic initial mass must be positive, got {m0}"
        )));
    }
    Ok(n_agents as f64 / m0)
}

/// Result of [`init_density_from_micro`].
pub struct InitializedDensity {
    pub density: MacroDensity,
    /// Ball radius actually used for the local averages.
    pub xi: f64,
    /// Scaled macroscopic mass `lambda * M0_tilde` achieved by the average.
    pub scaled_mass: f64,
}

/// Build the initial density by local averaging of the agent positions:
/// each cell coefficient is the number of follower agents within distance
/// `xi` of the cell center, divided by `lambda * pi * xi^2`. Cells whose
/// center lies inside an obstacle stay empty.
///
/// `xi` starts at `1.5 h`; when that misses the head count by more than 5%
/// the radius is re-solved exactly. The scaled total mass as a function of
/// `xi` is a sawtooth (it jumps up whenever the balls capture a new ring of
/// cell centers and decays as `1/xi^2` in between), so each smooth branch
/// is solved in closed form over the enumerated capture radii and the most
/// regular solution is kept.
pub fn init_density_from_micro(
    micro: &MicroState,
    lambda: f64,
    grid: &Grid,
    obstacles: &[Obstacle],
) -> Result<InitializedDensity> {
    let n = micro.follower_count();
    if n == 0 {
        return Err(Error::InvalidScaling(
            "cannot initialize a density from zero followers".into(),
        ));
    }
    let target = n as f64;
    let tol = 0.05;

    let blocked: Vec<bool> = (0..grid.n_cells())
        .map(|k| {
            let (ix, iy) = (k % grid.nx, k / grid.nx);
            let c = grid.cell_center(ix, iy);
            obstacles.iter().any(|o| o.rect.contains_interior(c))
        })
        .collect();

    let build = |xi: f64| -> (MacroDensity, f64) {
        let norm = lambda * std::f64::consts::PI * xi * xi;
        let mut rho = vec![0.0; grid.n_cells()];
        for a in micro.followers() {
            let (i0, i1, j0, j1) = grid.index_window(
                Vec2 {
                    x: a.pos.x - xi,
                    y: a.pos.y - xi,
                },
                Vec2 {
                    x: a.pos.x + xi,
                    y: a.pos.y + xi,
                },
            );
            for iy in j0..=j1 {
                for ix in i0..=i1 {
                    let k = grid.linear(ix, iy);
                    if blocked[k] {
                        continue;
                    }
                    if grid.cell_center(ix, iy).distance(a.pos) <= xi {
                        rho[k] += 1.0 / norm;
                    }
                }
            }
        }
        let density = MacroDensity {
            grid: grid.clone(),
            rho,
        };
        let scaled = lambda * density.total_mass();
        (density, scaled)
    };

    let mut xi = 1.5 * grid.h;
    let (density, scaled) = build(xi);
    if (scaled - target).abs() / target <= tol {
        return Ok(InitializedDensity {
            density,
            xi,
            scaled_mass: scaled,
        });
    }

    use std::f64::consts::PI;

    // Enumerate the capture radii: every distance from a follower to a free
    // cell center. Between consecutive radii the capture count is constant,
    // so the scaled mass is count * h^2 / (pi xi^2) and the equation
    // scaled = n solves in closed form per branch.
    let cap = 8.0 * grid.h;
    let mut ds: Vec<f64> = Vec::new();
    let mut zero_hits = 0usize;
    let mut floor_xi: f64 = 0.0;
    for a in micro.followers() {
        let (i0, i1, j0, j1) = grid.index_window(
            Vec2 {
                x: a.pos.x - cap,
                y: a.pos.y - cap,
            },
            Vec2 {
                x: a.pos.x + cap,
                y: a.pos.y + cap,
            },
        );
        let mut nearest = f64::INFINITY;
        for iy in j0..=j1 {
            for ix in i0..=i1 {
                if blocked[grid.linear(ix, iy)] {
                    continue;
                }
                let d = grid.cell_center(ix, iy).distance(a.pos);
                if d > cap {
                    continue;
                }
                nearest = nearest.min(d);
                if d == 0.0 {
                    zero_hits += 1;
                } else {
                    ds.push(d);
                }
            }
        }
        if !nearest.is_finite() {
            return Err(Error::InvalidScaling(format!(
                "agent at ({}, {}) is farther than {cap} from every free cell center",
                a.pos.x, a.pos.y
            )));
        }
        // Radii below the farthest "nearest center" would leave some agent
        // unrepresented in the density altogether.
        floor_xi = floor_xi.max(nearest);
    }
    ds.sort_unstable_by(f64::total_cmp);

    let root_for = |count: usize| grid.h * (count as f64 / (PI * target)).sqrt();
    let mut candidates: Vec<f64> = Vec::new();
    let mut count = zero_hits;
    let mut branch_lo = 0.0;
    let mut idx = 0;
    loop {
        let branch_hi = ds.get(idx).copied().unwrap_or(cap);
        if count > 0 {
            let xi_star = root_for(count);
            if xi_star > 0.0 && xi_star >= branch_lo && xi_star < branch_hi && xi_star >= floor_xi
            {
                candidates.push(xi_star);
            }
        }
        if idx >= ds.len() {
            break;
        }
        branch_lo = branch_hi;
        while idx < ds.len() && ds[idx] == branch_lo {
            count += 1;
            idx += 1;
        }
    }

    // Candidates come out ascending. Prefer the smallest one that still
    // spans a full cell; tiny balls make a spiky density even when the
    // total mass comes out right.
    let chosen = candidates
        .iter()
        .copied()
        .find(|&c| c >= grid.h)
        .or_else(|| candidates.last().copied());
    if let Some(best) = chosen {
        let (density, scaled) = build(best);
        if (scaled - target).abs() / target <= tol {
            return Ok(InitializedDensity {
                density,
                xi: best,
                scaled_mass: scaled,
            });
        }
    }

    // No branch crosses the head count exactly; scan for the closest
    // achievable radius instead.
    let lo = floor_xi.max(0.3 * grid.h);
    let mut best_xi = xi;
    let mut best_err = f64::INFINITY;
    for k in 0..=1200 {
        let probe = lo + (cap - lo) * k as f64 / 1200.0;
        if probe <= 0.0 {
            continue;
        }
        let c = zero_hits + ds.partition_point(|&d| d <= probe);
        let scaled = c as f64 * grid.h * grid.h / (PI * probe * probe);
        let err = (scaled - target).abs() / target;
        if err < best_err {
            best_err = err;
            best_xi = probe;
        }
    }
    xi = best_xi;
    let (density, scaled) = build(xi);
    if (scaled - target).abs() / target <= tol {
        return Ok(InitializedDensity {
            density,
            xi,
            scaled_mass: scaled,
        });
    }
    Err(Error::SupportScaling {
        xi,
        achieved: scaled,
        target,
    })
}
