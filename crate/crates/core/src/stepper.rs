//! Time stepping.
//!
//! Both scales of every population are pushed forward by one shared
//! velocity field per step: agents move as points, the density moves by
//! translating each cell image and re-binning the overlap areas onto the
//! grid. Near walls the displacement itself is clamped (not just the
//! velocity), so no mass ends up inside a solid.

use crate::desired::DesiredVelocity;
use crate::geometry::{Environment, Rect};
use crate::interaction::{interaction_velocity, InteractionSpec, MeasureView, SpatialHash};
use crate::measures::{Agent, MacroDensity, MicroState, Role};
use crate::vec2::Vec2;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControls {
    pub dt_max: f64,
    /// Courant number for the density scheme; keep below 1 so a cell image
    /// never moves farther than one cell per step.
    pub cfl: f64,
    pub t_final: f64,
    /// Fraction of the initial mass below which a region counts as empty.
    pub emptiness_threshold: f64,
}

impl Default for StepControls {
    fn default() -> StepControls {
        StepControls {
            dt_max: 0.05,
            cfl: 0.95,
            t_final: 1.0,
            emptiness_threshold: 1e-6,
        }
    }
}

/// Motion rule for a leader agent: walk at the preassigned velocity while
/// the followers' center of mass is within reach, halt otherwise.
#[derive(Clone, Copy, Debug)]
pub struct LeaderRule {
    pub velocity: Vec2,
    pub stop_distance: f64,
}

pub struct Population {
    pub name: String,
    pub micro: MicroState,
    pub density: MacroDensity,
    pub lambda: f64,
    pub interaction: InteractionSpec,
    pub desired: DesiredVelocity,
    pub leader: Option<LeaderRule>,
    /// Region watched by the early-stop rule and the flux diagnostics.
    pub probe: Option<Rect>,
}

impl Population {
    pub fn theta(&self) -> f64 {
        self.interaction.theta
    }

    /// Multiscale mass of `region`:
    /// `theta * #agents + (1 - theta) * lambda * M(region)`.
    pub fn measure_mass_in(&self, region: &Rect) -> f64 {
        let th = self.theta();
        th * self.micro.count_in(region) as f64
            + (1.0 - th) * self.lambda * self.density.mass_in(region)
    }

    pub fn total_measure_mass(&self) -> f64 {
        let th = self.theta();
        th * self.micro.len() as f64 + (1.0 - th) * self.lambda * self.density.total_mass()
    }

    pub fn follower_center(&self) -> Option<Vec2> {
        let mut sum = Vec2::ZERO;
        let mut n = 0usize;
        for a in self.micro.followers() {
            sum += a.pos;
            n += 1;
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    }
}

pub struct World {
    pub env: Environment,
    pub controls: StepControls,
    pub populations: Vec<Population>,
    pub time: f64,
    pub step_index: u64,
    initial_total_mass: f64,
    initial_probe_mass: Vec<f64>,
}

impl World {
    pub fn new(env: Environment, controls: StepControls, populations: Vec<Population>) -> World {
        let initial_total_mass = populations.iter().map(|p| p.total_measure_mass()).sum();
        let initial_probe_mass = populations
            .iter()
            .map(|p| p.probe.map_or(0.0, |r| p.measure_mass_in(&r)))
            .collect();
        World {
            env,
            controls,
            populations,
            time: 0.0,
            step_index: 0,
            initial_total_mass,
            initial_probe_mass,
        }
    }

    pub fn initial_total_mass(&self) -> f64 {
        self.initial_total_mass
    }

    pub fn initial_probe_mass(&self, pop: usize) -> f64 {
        self.initial_probe_mass[pop]
    }

    pub fn total_measure_mass(&self) -> f64 {
        self.populations.iter().map(|p| p.total_measure_mass()).sum()
    }
}

/// The shared velocity field of one step, evaluated at every agent position
/// and every cell center.
pub struct FieldSnapshot {
    pub agent_velocity: Vec<Vec<Vec2>>,
    pub cell_velocity: Vec<Vec<Vec2>>,
}

/// Evaluate desired plus interaction velocity for every population, with
/// the wall projection applied. All populations see the same pre-step
/// state, so the order they are advanced in afterwards cannot matter.
pub fn compute_fields(world: &World) -> FieldSnapshot {
    let pops = &world.populations;

    // Bucket size per population: the largest radius with which anyone,
    // including itself, will query its agents.
    let hashes: Vec<SpatialHash> = pops
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = p.interaction.endogenous.max_radius();
            for (j, q) in pops.iter().enumerate() {
                if j != i {
                    if let Some(exo) = q.interaction.exogenous {
                        r = r.max(exo.max_radius());
                    }
                }
            }
            SpatialHash::build(&p.micro, r)
        })
        .collect();

    let views: Vec<MeasureView> = pops
        .iter()
        .zip(&hashes)
        .map(|(p, hash)| MeasureView {
            micro: &p.micro,
            density: &p.density,
            lambda: p.lambda,
            hash,
        })
        .collect();

    let mut agent_velocity = Vec::with_capacity(pops.len());
    let mut cell_velocity = Vec::with_capacity(pops.len());
    for (i, p) in pops.iter().enumerate() {
        let own = views[i];
        let others: Vec<MeasureView> = views
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .collect();

        let follower_center = p.follower_center();
        let av: Vec<Vec2> = p
            .micro
            .agents
            .par_iter()
            .map_init(Vec::new, |buf, a| {
                let v = match (a.role, p.leader) {
                    (Role::Leader, Some(rule)) => match follower_center {
                        Some(c) if a.pos.distance(c) <= rule.stop_distance => rule.velocity,
                        _ => Vec2::ZERO,
                    },
                    _ => {
                        let heading = p.desired.heading(a.pos);
                        p.desired.eval(a.pos)
                            + interaction_velocity(
                                a.pos,
                                heading,
                                &p.interaction,
                                &own,
                                &others,
                                0.0,
                                buf,
                            )
                    }
                };
                world.env.project_admissible(v, a.pos)
            })
            .collect();

        let grid = &p.density.grid;
        let nx = grid.nx;
        // Cell velocities stand for cell averages; agents closer to a center
        // than the resolution limit act from half a cell away.
        let s_floor = 0.5 * grid.h;
        let cv: Vec<Vec2> = (0..grid.n_cells())
            .into_par_iter()
            .map_init(Vec::new, |buf, k| {
                let c = grid.cell_center(k % nx, k / nx);
                let heading = p.desired.heading(c);
                let v = p.desired.eval(c)
                    + interaction_velocity(c, heading, &p.interaction, &own, &others, s_floor, buf);
                world.env.project_admissible(v, c)
            })
            .collect();

        agent_velocity.push(av);
        cell_velocity.push(cv);
    }

    FieldSnapshot {
        agent_velocity,
        cell_velocity,
    }
}

/// Step size: the CFL bound over every cell and agent of every population,
/// capped by `dt_max` and by the time left until `t_final`.
pub fn compute_dt(world: &World, fields: &FieldSnapshot) -> f64 {
    let mut dt = world.controls.dt_max;
    for (i, p) in world.populations.iter().enumerate() {
        let mut vmax = 0.0f64;
        for v in &fields.cell_velocity[i] {
            vmax = vmax.max(v.norm());
        }
        for v in &fields.agent_velocity[i] {
            vmax = vmax.max(v.norm());
        }
        if vmax > 0.0 {
            dt = dt.min(world.controls.cfl * p.density.grid.h / vmax);
        }
    }
    let remaining = world.controls.t_final - world.time;
    if dt > remaining {
        dt = remaining;
    }
    dt.max(0.0)
}

pub struct MacroStepResult {
    pub density: MacroDensity,
    /// Mass that left the domain through open doors this step.
    pub outflow_mass: f64,
    /// Mass overlapping walls or obstacles after the move; the displacement
    /// clamp keeps this at rounding level and the tests audit it.
    pub wall_residual: f64,
}

/// Push the density forward by one explicit Euler step: translate each cell
/// image by its displacement (wall-clamped) and re-bin by exact overlap
/// area.
pub fn advance_macro(
    env: &Environment,
    density: &MacroDensity,
    cell_velocity: &[Vec2],
    dt: f64,
) -> MacroStepResult {
    let grid = density.grid.clone();
    let (nx, ny) = (grid.nx, grid.ny);
    let h2 = grid.h * grid.h;

    let translated: Vec<Option<Rect>> = (0..grid.n_cells())
        .into_par_iter()
        .map(|k| {
            if density.rho[k] == 0.0 {
                return None;
            }
            let rect = grid.cell_rect(k % nx, k / nx);
            let d = env.clamp_rect_displacement(&rect, cell_velocity[k] * dt);
            Some(rect.translated(d))
        })
        .collect();

    let rho: Vec<f64> = (0..grid.n_cells())
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i % nx, i / nx);
            let dest = grid.cell_rect(ix, iy);
            let (j0, j1) = (iy.saturating_sub(2), (iy + 2).min(ny - 1));
            let (i0, i1) = (ix.saturating_sub(2), (ix + 2).min(nx - 1));
            let mut acc = 0.0;
            for jy in j0..=j1 {
                for jx in i0..=i1 {
                    let k = grid.linear(jx, jy);
                    if let Some(t) = &translated[k] {
                        let ov = crate::geometry::overlap_area(&dest, t);
                        if ov > 0.0 {
                            acc += density.rho[k] * ov;
                        }
                    }
                }
            }
            acc / h2
        })
        .collect();

    let bounding = grid.bounding_rect();
    let mut outflow_mass = 0.0;
    let mut wall_residual = 0.0;
    for (k, t) in translated.iter().enumerate() {
        if let Some(t) = t {
            // Exact containment short-circuit: recomputing the area of an
            // interior cell image would leave rounding crumbs in the flux.
            let escaped = if bounding.contains_rect(t) {
                0.0
            } else {
                (h2 - crate::geometry::overlap_area(&bounding, t)).max(0.0)
            };
            outflow_mass += density.rho[k] * escaped;
            for s in env.solids() {
                wall_residual += density.rho[k] * crate::geometry::overlap_area(t, s);
            }
        }
    }

    MacroStepResult {
        density: MacroDensity { grid, rho },
        outflow_mass,
        wall_residual,
    }
}

pub struct MicroStepResult {
    pub micro: MicroState,
    /// Agents that stepped out of the domain (through an open door), with
    /// their exit positions.
    pub removed: Vec<Agent>,
}

pub fn advance_micro(
    env: &Environment,
    micro: &MicroState,
    agent_velocity: &[Vec2],
    dt: f64,
) -> MicroStepResult {
    let moved: Vec<Agent> = micro
        .agents
        .par_iter()
        .zip(agent_velocity.par_iter())
        .map(|(a, v)| {
            let d = env.clamp_point_displacement(a.pos, *v * dt);
            Agent {
                pos: a.pos + d,
                ..*a
            }
        })
        .collect();
    let mut kept = Vec::with_capacity(moved.len());
    let mut removed = Vec::new();
    for a in moved {
        if env.domain.contains(a.pos) {
            kept.push(a);
        } else {
            removed.push(a);
        }
    }
    MicroStepResult {
        micro: MicroState { agents: kept },
        removed,
    }
}

pub struct StepReport {
    pub dt: f64,
    /// Per population, macroscopic mass that left through open doors.
    pub outflow_mass: Vec<f64>,
    /// Per population, agents that left the domain.
    pub removed: Vec<Vec<Agent>>,
    pub wall_residual: f64,
}

pub fn step(world: &mut World) -> StepReport {
    let fields = compute_fields(world);
    let dt = compute_dt(world, &fields);
    step_with(world, &fields, dt)
}

/// Advance every population by `dt` using a precomputed field snapshot.
pub fn step_with(world: &mut World, fields: &FieldSnapshot, dt: f64) -> StepReport {
    let results: Vec<(MacroStepResult, MicroStepResult)> = world
        .populations
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                advance_macro(&world.env, &p.density, &fields.cell_velocity[i], dt),
                advance_micro(&world.env, &p.micro, &fields.agent_velocity[i], dt),
            )
        })
        .collect();

    let mut outflow_mass = Vec::with_capacity(results.len());
    let mut removed = Vec::with_capacity(results.len());
    let mut wall_residual = 0.0f64;
    for (p, (mac, mic)) in world.populations.iter_mut().zip(results) {
        outflow_mass.push(mac.outflow_mass);
        wall_residual = wall_residual.max(mac.wall_residual);
        removed.push(mic.removed);
        p.density = mac.density;
        p.micro = mic.micro;
    }
    world.time += dt;
    world.step_index += 1;
    StepReport {
        dt,
        outflow_mass,
        removed,
        wall_residual,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ReachedFinalTime,
    /// Total multiscale mass in the domain fell below the threshold.
    DomainEmptied,
    /// Every watched probe region fell below the threshold.
    ProbesEmptied,
    /// The step size collapsed; something in the parameters is pathological.
    Stalled,
}

pub struct RunSummary {
    pub steps: u64,
    pub final_time: f64,
    pub reason: StopReason,
}

/// March to `t_final` or until the domain (or every probe) is empty,
/// invoking `on_step` after each completed step.
pub fn run(world: &mut World, mut on_step: impl FnMut(&World, &StepReport)) -> RunSummary {
    let threshold = world.controls.emptiness_threshold;
    let initial_total = world.initial_total_mass.max(f64::MIN_POSITIVE);
    let probe_initials = world.initial_probe_mass.clone();
    let t_final = world.controls.t_final;
    let start_step = world.step_index;
    // One shared tolerance: a remaining gap this small counts as arrival,
    // and a step this small counts as a stall.
    let eps = 1e-12 * t_final.max(1.0);

    loop {
        if world.time >= t_final - eps {
            return RunSummary {
                steps: world.step_index - start_step,
                final_time: world.time,
                reason: StopReason::ReachedFinalTime,
            };
        }
        let fields = compute_fields(world);
        let dt = compute_dt(world, &fields);
        if dt <= eps {
            return RunSummary {
                steps: world.step_index - start_step,
                final_time: world.time,
                reason: StopReason::Stalled,
            };
        }
        let report = step_with(world, &fields, dt);
        on_step(world, &report);

        if world.total_measure_mass() < threshold * initial_total {
            return RunSummary {
                steps: world.step_index - start_step,
                final_time: world.time,
                reason: StopReason::DomainEmptied,
            };
        }
        let mut any_probe = false;
        let mut all_empty = true;
        for (p, &initial) in world.populations.iter().zip(&probe_initials) {
            if let Some(region) = p.probe {
                if initial > 0.0 {
                    any_probe = true;
                    if p.measure_mass_in(&region) >= threshold * initial {
                        all_empty = false;
                    }
                }
            }
        }
        if any_probe && all_empty {
            return RunSummary {
                steps: world.step_index - start_step,
                final_time: world.time,
                reason: StopReason::ProbesEmptied,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DoorSegment, Grid, Obstacle};
    use crate::interaction::KernelParams;
    use crate::vec2::vec2;
    use std::f64::consts::FRAC_PI_2;

    fn no_interaction() -> InteractionSpec {
        InteractionSpec {
            theta: 0.5,
            endogenous: KernelParams::repulsion_only(0.0, 0.1, FRAC_PI_2),
            exogenous: None,
            capital_theta: 0.0,
        }
    }

    fn sealed_env(domain: Rect) -> Environment {
        Environment::new(domain, vec![], vec![], 0.01, true)
    }

    #[test]
    fn uniform_shift_by_one_cell_is_exact() {
        let grid = Grid::new(vec2(0.0, 0.0), 0.25, 16, 16);
        let env = sealed_env(grid.bounding_rect());
        let mut density = MacroDensity::zeros(grid.clone());
        for iy in 6..9 {
            for ix in 4..7 {
                density.rho[grid.linear(ix, iy)] = 1.0 + (ix + iy) as f64 * 0.1;
            }
        }
        // Displacement of exactly one cell: velocity 1, dt = h.
        let v = vec![vec2(1.0, 0.0); grid.n_cells()];
        let out = advance_macro(&env, &density, &v, 0.25);
        for iy in 0..16 {
            for ix in 1..16 {
                assert_eq!(
                    out.density.rho[grid.linear(ix, iy)],
                    density.rho[grid.linear(ix - 1, iy)],
                    "cell ({ix}, {iy})"
                );
            }
        }
        assert_eq!(out.outflow_mass, 0.0);
        assert_eq!(out.wall_residual, 0.0);
    }

    #[test]
    fn partial_shift_splits_mass_by_overlap() {
        let grid = Grid::new(vec2(0.0, 0.0), 0.25, 8, 8);
        let env = sealed_env(grid.bounding_rect());
        let mut density = MacroDensity::zeros(grid.clone());
        let k = grid.linear(3, 3);
        density.rho[k] = 2.0;
        let v = vec![vec2(0.4, 0.0); grid.n_cells()];
        let out = advance_macro(&env, &density, &v, 0.25); // moves 0.1 = 0.4 h
        let stay = out.density.rho[grid.linear(3, 3)];
        let next = out.density.rho[grid.linear(4, 3)];
        assert!((stay - 2.0 * 0.6).abs() < 1e-12);
        assert!((next - 2.0 * 0.4).abs() < 1e-12);
        assert!((out.density.total_mass() - density.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn sealed_box_conserves_measure_mass() {
        let grid = Grid::new(vec2(0.0, 0.0), 0.1, 20, 20);
        let env = sealed_env(grid.bounding_rect());
        let mut density = MacroDensity::zeros(grid.clone());
        for iy in 8..12 {
            for ix in 8..12 {
                density.rho[grid.linear(ix, iy)] = 1.0;
            }
        }
        let micro = MicroState::from_positions(&[
            vec2(0.95, 1.05),
            vec2(1.05, 1.05),
            vec2(1.0, 0.9),
        ]);
        let pop = Population {
            name: "p".into(),
            micro,
            density,
            lambda: 5.0,
            interaction: InteractionSpec {
                theta: 0.4,
                endogenous: KernelParams::repulsion_only(0.1, 0.3, FRAC_PI_2),
                exogenous: None,
                capital_theta: 0.0,
            },
            desired: DesiredVelocity::constant(vec2(0.7, 0.3)),
            leader: None,
            probe: None,
        };
        let mut world = World::new(
            env,
            StepControls {
                dt_max: 0.05,
                cfl: 0.9,
                t_final: 5.0,
                emptiness_threshold: 1e-6,
            },
            vec![pop],
        );
        let m0 = world.initial_total_mass();
        let mut max_residual = 0.0f64;
        for _ in 0..60 {
            let report = step(&mut world);
            max_residual = max_residual.max(report.wall_residual);
            assert_eq!(report.outflow_mass[0], 0.0);
            assert!(report.removed[0].is_empty());
        }
        let drift = (world.total_measure_mass() - m0).abs() / m0;
        assert!(drift < 1e-11, "relative drift {drift}");
        assert!(max_residual < 1e-12, "wall residual {max_residual}");
        assert!(world.populations[0].density.min_coefficient() >= 0.0);
    }

    #[test]
    fn dt_respects_cfl_and_final_time() {
        let grid = Grid::new(vec2(0.0, 0.0), 0.1, 4, 4);
        let env = sealed_env(grid.bounding_rect());
        let density = MacroDensity::zeros(grid);
        let pop = Population {
            name: "p".into(),
            micro: MicroState::from_positions(&[vec2(0.2, 0.2)]),
            density,
            lambda: 1.0,
            interaction: no_interaction(),
            desired: DesiredVelocity::constant(vec2(2.0, 0.0)),
            leader: None,
            probe: None,
        };
        let mut world = World::new(env, StepControls::default(), vec![pop]);
        world.controls.t_final = 10.0;
        let fields = compute_fields(&world);
        let dt = compute_dt(&world, &fields);
        assert!((dt - 0.95 * 0.1 / 2.0).abs() < 1e-15);

        world.time = 10.0 - 1e-3;
        let dt = compute_dt(&world, &fields);
        assert!((dt - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn agents_slide_along_obstacles() {
        let domain = Rect::from_corners(0.0, 0.0, 4.0, 4.0);
        let env = Environment::new(
            domain,
            vec![Obstacle {
                rect: Rect::from_corners(2.0, 0.0, 2.5, 4.0),
            }],
            vec![],
            0.01,
            true,
        );
        let micro = MicroState::from_positions(&[vec2(1.9, 2.0)]);
        let v = vec![vec2(1.0, 0.25)];
        let out = advance_micro(&env, &micro, &v, 0.5);
        let p = out.micro.agents[0].pos;
        assert!(p.x <= 2.0);
        assert!(2.0 - p.x < 1e-9);
        assert!((p.y - 2.125).abs() < 1e-12);
    }

    #[test]
    fn agents_leave_through_open_boundary_door() {
        let domain = Rect::from_corners(0.0, 0.0, 2.0, 2.0);
        let env = Environment::new(
            domain,
            vec![],
            vec![DoorSegment {
                a: vec2(2.0, 0.8),
                b: vec2(2.0, 1.2),
                outward: vec2(1.0, 0.0),
            }],
            0.01,
            false,
        );
        let micro = MicroState::from_positions(&[vec2(1.95, 1.0), vec2(1.95, 0.3)]);
        let v = vec![vec2(1.0, 0.0); 2];
        let out = advance_micro(&env, &micro, &v, 0.2);
        // The agent in the door span leaves; the other is stopped by the wall.
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].id, 0);
        assert_eq!(out.micro.agents.len(), 1);
        assert!(out.micro.agents[0].pos.x <= 2.0);
    }

    #[test]
    fn door_outflow_is_measured() {
        let grid = Grid::new(vec2(0.0, 0.0), 0.25, 8, 8);
        let env = Environment::new(
            grid.bounding_rect(),
            vec![],
            vec![DoorSegment {
                a: vec2(2.0, 0.75),
                b: vec2(2.0, 1.25),
                outward: vec2(1.0, 0.0),
            }],
            0.025,
            false,
        );
        let mut density = MacroDensity::zeros(grid.clone());
        density.rho[grid.linear(7, 3)] = 4.0; // cell [1.75, 2.0] x [0.75, 1.0], inside the door span
        density.rho[grid.linear(7, 6)] = 4.0; // same column, facing wall
        let v = vec![vec2(0.5, 0.0); grid.n_cells()];
        let out = advance_macro(&env, &density, &v, 0.25); // displacement 0.125
        // Door cell: half its area crosses the boundary.
        let expected = 4.0 * 0.125 * 0.25;
        assert!((out.outflow_mass - expected).abs() < 1e-12);
        // Wall cell keeps everything.
        let wall_row: f64 = (0..8)
            .map(|ix| out.density.rho[grid.linear(ix, 6)] * 0.0625)
            .sum();
        assert!((wall_row - 4.0 * 0.0625).abs() < 1e-12);
        assert!(out.wall_residual < 1e-12);
    }

    #[test]
    fn leader_walks_only_with_followers_near() {
        let domain = Rect::from_corners(0.0, 0.0, 6.0, 2.0);
        let env = Environment::new(domain, vec![], vec![], 0.01, true);
        let grid = Grid::new(vec2(0.0, 0.0), 0.1, 60, 20);
        let mut agents = vec![
            Agent {
                id: 0,
                pos: vec2(1.0, 1.0),
                role: Role::Follower,
            },
            Agent {
                id: 1,
                pos: vec2(2.0, 1.0),
                role: Role::Leader,
            },
        ];
        let make_pop = |agents: Vec<Agent>| Population {
            name: "led".into(),
            micro: MicroState { agents },
            density: MacroDensity::zeros(grid.clone()),
            lambda: 1.0,
            interaction: no_interaction(),
            desired: DesiredVelocity::zero(vec2(1.0, 0.0)),
            leader: Some(LeaderRule {
                velocity: vec2(0.4, 0.0),
                stop_distance: 1.5,
            }),
            probe: None,
        };
        let world = World::new(env, StepControls::default(), vec![make_pop(agents.clone())]);
        let fields = compute_fields(&world);
        assert_eq!(fields.agent_velocity[0][1], vec2(0.4, 0.0));

        // Too far: the leader waits.
        agents[0].pos = vec2(0.2, 1.0);
        let env = Environment::new(domain, vec![], vec![], 0.01, true);
        let world = World::new(env, StepControls::default(), vec![make_pop(agents)]);
        let fields = compute_fields(&world);
        assert_eq!(fields.agent_velocity[0][1], Vec2::ZERO);
    }

    #[test]
    fn run_stops_when_probe_empties() {
        let grid = Grid::new(vec2(0.0, 0.0), 0.25, 8, 4);
        let env = Environment::new(
            grid.bounding_rect(),
            vec![],
            vec![DoorSegment {
                a: vec2(2.0, 0.0),
                b: vec2(2.0, 1.0),
                outward: vec2(1.0, 0.0),
            }],
            0.025,
            false,
        );
        let mut density = MacroDensity::zeros(grid.clone());
        density.rho[grid.linear(1, 1)] = 1.0;
        density.rho[grid.linear(1, 2)] = 1.0;
        let pop = Population {
            name: "p".into(),
            micro: MicroState::from_positions(&[vec2(0.4, 0.5)]),
            density,
            lambda: 8.0,
            interaction: no_interaction(),
            desired: DesiredVelocity::constant(vec2(1.0, 0.0)),
            leader: None,
            probe: Some(Rect::from_corners(0.0, 0.0, 1.0, 1.0)),
        };
        let mut world = World::new(
            env,
            StepControls {
                dt_max: 0.1,
                cfl: 0.9,
                t_final: 100.0,
                emptiness_threshold: 1e-6,
            },
            vec![pop],
        );
        let summary = run(&mut world, |_, _| {});
        assert_eq!(summary.reason, StopReason::ProbesEmptied);
        assert!(summary.final_time < 100.0);
        let probe = Rect::from_corners(0.0, 0.0, 1.0, 1.0);
        let left = world.populations[0].measure_mass_in(&probe);
        assert!(left < 1e-6 * world.initial_probe_mass(0));
    }
}
