//! Nonlocal interaction velocities.
//!
//! Every mass element a crowd member can see contributes a push along the
//! line of sight: repulsive at short range with strength `f_r / s`,
//! attractive up to a longer range with strength `f_a * s`. Sight is
//! restricted to a frontal cone of half-width `alpha_bar` around the
//! walking direction. Agent sums and density integrals use the same kernel;
//! the density integral is evaluated with the midpoint rule on the grid,
//! skipping the cell that contains the evaluation point (the integrand is
//! singular there and the point itself carries no area).

use crate::measures::{MacroDensity, MicroState};
use crate::vec2::Vec2;

/// Radial and angular kernel coefficients for one interaction channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    /// Repulsion strength.
    pub f_r: f64,
    /// Attraction strength.
    pub f_a: f64,
    /// Repulsion radius.
    pub r_r: f64,
    /// Attraction radius.
    pub r_a: f64,
    /// Half-width of the frontal sight cone, in radians.
    pub alpha_bar: f64,
}

impl KernelParams {
    pub fn repulsion_only(f_r: f64, r_r: f64, alpha_bar: f64) -> KernelParams {
        KernelParams {
            f_r,
            f_a: 0.0,
            r_r,
            // Placeholder radius; with f_a = 0 the attractive term vanishes
            // identically, so any value inside the pruning radius works.
            r_a: r_r,
            alpha_bar,
        }
    }

    /// Interactions vanish beyond this distance.
    pub fn max_radius(&self) -> f64 {
        self.r_r.max(self.r_a)
    }
}

/// How one population composes its interaction velocity from its own mass
/// and (optionally) an opposing population's mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteractionSpec {
    /// Scale interpolation weight shared by both channels.
    pub theta: f64,
    pub endogenous: KernelParams,
    /// Kernel felt toward the opposing population, when there is one.
    pub exogenous: Option<KernelParams>,
    /// Weight of the exogenous channel in `[0, 1]`.
    pub capital_theta: f64,
}

/// Signed radial kernel: negative values repel (push the walker away from
/// the seen mass), positive values attract. Both indicator intervals are
/// closed at their outer radius.
pub fn radial_kernel(s: f64, p: &KernelParams) -> f64 {
    assert!(s > 0.0, "radial kernel needs a positive separation, got {s}");
    let mut f = 0.0;
    if s <= p.r_r {
        f -= p.f_r / s;
    }
    if s <= p.r_a {
        f += p.f_a * s;
    }
    f
}

/// Frontal sight indicator: 1 when `|alpha| <= alpha_bar`, else 0.
pub fn angular_focus(alpha: f64, alpha_bar: f64) -> f64 {
    if alpha.abs() <= alpha_bar {
        1.0
    } else {
        0.0
    }
}

/// Signed angle in `(-pi, pi]` under which `y` is seen from `x` relative to
/// the walking direction `heading`.
pub fn sight_angle(x: Vec2, y: Vec2, heading: Vec2) -> f64 {
    let d = y - x;
    debug_assert!(d.norm_sq() > 0.0, "sight angle undefined for y == x");
    f64::atan2(heading.cross(d), heading.dot(d))
}

/// Bucket index over agent positions for neighbor pruning. Buckets are at
/// least as wide as the interaction radius, so candidates always live in
/// the 3x3 block around the query point. Agents are inserted in storage
/// order and queries re-sort candidates by index, which keeps accumulation
/// order identical to the unpruned sum.
pub struct SpatialHash {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl SpatialHash {
    pub fn build(micro: &MicroState, cell: f64) -> SpatialHash {
        let cell = cell.max(1e-12);
        let (mut lo, mut hi) = (
            Vec2 {
                x: f64::INFINITY,
                y: f64::INFINITY,
            },
            Vec2 {
                x: f64::NEG_INFINITY,
                y: f64::NEG_INFINITY,
            },
        );
        for a in &micro.agents {
            lo.x = lo.x.min(a.pos.x);
            lo.y = lo.y.min(a.pos.y);
            hi.x = hi.x.max(a.pos.x);
            hi.y = hi.y.max(a.pos.y);
        }
        if micro.agents.is_empty() {
            lo = Vec2::ZERO;
            hi = Vec2::ZERO;
        }
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, a) in micro.agents.iter().enumerate() {
            let bx = (((a.pos.x - lo.x) / cell).floor() as usize).min(nx - 1);
            let by = (((a.pos.y - lo.y) / cell).floor() as usize).min(ny - 1);
            buckets[by * nx + bx].push(i as u32);
        }
        SpatialHash {
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    /// Indices of all agents within one bucket of `x`, ascending.
    pub fn candidates(&self, x: Vec2, out: &mut Vec<u32>) {
        out.clear();
        let bx = ((x.x - self.origin.x) / self.cell).floor();
        let by = ((x.y - self.origin.y) / self.cell).floor();
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (ix, iy) = (bx as i64 + dx, by as i64 + dy);
                if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
                    continue;
                }
                out.extend_from_slice(&self.buckets[iy as usize * self.nx + ix as usize]);
            }
        }
        out.sort_unstable();
    }
}

/// Interaction velocity induced at `x` by the atomic part of a crowd:
/// the kernel-weighted sum over all agents other than one standing exactly
/// at `x`.
///
/// `s_floor` is the smallest separation fed to the radial kernel; the true
/// separation still picks the direction and the range cutoff. Agent
/// evaluations pass 0 (the particle model is exact), cell-center
/// evaluations pass half a cell width: a cell's transport velocity stands
/// for a cell average, and evaluating the `1/s` singularity at a point
/// closer than the grid can resolve would put unbounded speeds on the
/// density where the exact cell average is finite.
pub fn nu_micro_at(
    x: Vec2,
    micro: &MicroState,
    heading: Vec2,
    p: &KernelParams,
    s_floor: f64,
    hash: &SpatialHash,
    scratch: &mut Vec<u32>,
) -> Vec2 {
    hash.candidates(x, scratch);
    let mut nu = Vec2::ZERO;
    for &k in scratch.iter() {
        let y = micro.agents[k as usize].pos;
        let d = y - x;
        let s = d.norm();
        if s == 0.0 || s > p.max_radius() {
            continue;
        }
        let g = angular_focus(sight_angle(x, y, heading), p.alpha_bar);
        if g == 0.0 {
            continue;
        }
        nu += d * (radial_kernel(s.max(s_floor), p) * g / s);
    }
    nu
}

/// Same sum without pruning, in agent storage order. Used to pin down the
/// pruned evaluation in tests.
pub fn nu_micro_at_unpruned(
    x: Vec2,
    micro: &MicroState,
    heading: Vec2,
    p: &KernelParams,
    s_floor: f64,
) -> Vec2 {
    let mut nu = Vec2::ZERO;
    for a in &micro.agents {
        let d = a.pos - x;
        let s = d.norm();
        if s == 0.0 || s > p.max_radius() {
            continue;
        }
        let g = angular_focus(sight_angle(x, a.pos, heading), p.alpha_bar);
        if g == 0.0 {
            continue;
        }
        nu += d * (radial_kernel(s.max(s_floor), p) * g / s);
    }
    nu
}

/// Interaction velocity induced at `x` by the density: midpoint-rule
/// quadrature over cell centers within the kernel radius, skipping the cell
/// that contains `x`.
pub fn nu_macro_at(x: Vec2, density: &MacroDensity, heading: Vec2, p: &KernelParams) -> Vec2 {
    let grid = &density.grid;
    let r = p.max_radius();
    let h2 = grid.h * grid.h;
    let own = grid.cell_index(x);
    let (i0, i1, j0, j1) = grid.index_window(
        Vec2 {
            x: x.x - r,
            y: x.y - r,
        },
        Vec2 {
            x: x.x + r,
            y: x.y + r,
        },
    );
    let mut nu = Vec2::ZERO;
    for iy in j0..=j1 {
        for ix in i0..=i1 {
            if own == Some((ix, iy)) {
                continue;
            }
            let rho = density.rho[grid.linear(ix, iy)];
            if rho == 0.0 {
                continue;
            }
            let y = grid.cell_center(ix, iy);
            let d = y - x;
            let s = d.norm();
            if s > r {
                continue;
            }
            let g = angular_focus(sight_angle(x, y, heading), p.alpha_bar);
            if g == 0.0 {
                continue;
            }
            nu += d * (radial_kernel(s, p) * g * rho * h2 / s);
        }
    }
    nu
}

/// Full-grid variant of [`nu_macro_at`], used to pin down window pruning.
pub fn nu_macro_at_unpruned(
    x: Vec2,
    density: &MacroDensity,
    heading: Vec2,
    p: &KernelParams,
) -> Vec2 {
    let grid = &density.grid;
    let h2 = grid.h * grid.h;
    let own = grid.cell_index(x);
    let mut nu = Vec2::ZERO;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if own == Some((ix, iy)) {
                continue;
            }
            let rho = density.rho[grid.linear(ix, iy)];
            if rho == 0.0 {
                continue;
            }
            let y = grid.cell_center(ix, iy);
            let d = y - x;
            let s = d.norm();
            if s > p.max_radius() {
                continue;
            }
            let g = angular_focus(sight_angle(x, y, heading), p.alpha_bar);
            if g == 0.0 {
                continue;
            }
            nu += d * (radial_kernel(s, p) * g * rho * h2 / s);
        }
    }
    nu
}

/// Everything [`interaction_velocity`] needs to know about one population's
/// current state.
#[derive(Clone, Copy)]
pub struct MeasureView<'a> {
    pub micro: &'a MicroState,
    pub density: &'a MacroDensity,
    pub lambda: f64,
    pub hash: &'a SpatialHash,
}

/// Total interaction velocity at `x` for a member of the population `own`,
/// blending scales with `theta` and, when opposing populations are given,
/// mixing the endogenous and exogenous channels with `capital_theta` (split
/// evenly across the opponents). `s_floor` as in [`nu_micro_at`].
pub fn interaction_velocity(
    x: Vec2,
    heading: Vec2,
    spec: &InteractionSpec,
    own: &MeasureView,
    others: &[MeasureView],
    s_floor: f64,
    scratch: &mut Vec<u32>,
) -> Vec2 {
    let th = spec.theta;
    let endo = {
        let micro = nu_micro_at(
            x,
            own.micro,
            heading,
            &spec.endogenous,
            s_floor,
            own.hash,
            scratch,
        );
        let mac = nu_macro_at(x, own.density, heading, &spec.endogenous);
        micro * th + mac * ((1.0 - th) * own.lambda)
    };
    match spec.exogenous {
        Some(exo) if spec.capital_theta > 0.0 && !others.is_empty() => {
            let w = spec.capital_theta / others.len() as f64;
            let mut total = endo * (1.0 - spec.capital_theta);
            for o in others {
                let micro = nu_micro_at(x, o.micro, heading, &exo, s_floor, o.hash, scratch);
                let mac = nu_macro_at(x, o.density, heading, &exo);
                total += (micro * th + mac * ((1.0 - th) * o.lambda)) * w;
            }
            total
        }
        _ => endo,
    }
}
