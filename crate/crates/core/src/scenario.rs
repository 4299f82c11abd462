//! Scenario description: everything needed to set up a run, as data.
//!
//! A scenario can come from a named preset, from a text file, or from a
//! preset with overrides applied. The text format is line based:
//!
//! ```text
//! [scenario]
//! name = crossing
//!
//! [domain]
//! origin = 0 0
//! size = 8 3
//! h = 0.1
//!
//! [controls]
//! dt_max = 0.05
//! cfl = 0.95
//! t_final = 20
//!
//! [obstacle.0]
//! rect = 3.9 0 4.1 1
//!
//! [door.0]
//! segment = 4 1 4 2
//! outward = 1 0
//!
//! [population.0]
//! name = east
//! lattice = 1.0 0.9 0.3 0.3 6 5
//! theta = 0.3
//! lambda = 30
//! f_r = 0.1
//! r_r = 0.2
//! desired = funnel 0 1 0 0.15
//! probe = 0 0 4 3
//! ```
//!
//! Unknown sections or keys are parse errors; missing required keys are
//! validation errors. Serialization uses the shortest exact decimal form,
//! so a scenario round-trips through text without losing bits.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::desired::{DesiredKind, DesiredVelocity, VectorGrid};
use crate::error::{Error, Result};
use crate::geometry::{default_wall_tolerance, DoorSegment, Environment, Grid, Obstacle, Rect};
use crate::interaction::{InteractionSpec, KernelParams};
use crate::io::load_vector_field;
use crate::measures::{init_density_from_micro, Agent, MicroState, Role};
use crate::stepper::{LeaderRule, Population, StepControls, World};
use crate::vec2::{vec2, Vec2};

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub domain_origin: Vec2,
    pub domain_size: Vec2,
    pub h: f64,
    pub controls: StepControls,
    pub seal_doors: bool,
    pub obstacles: Vec<Rect>,
    pub doors: Vec<DoorSpec>,
    pub populations: Vec<PopulationSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoorSpec {
    pub a: Vec2,
    pub b: Vec2,
    pub outward: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub f_r: f64,
    pub f_a: f64,
    pub r_r: f64,
    pub r_a: f64,
    pub alpha_bar: f64,
}

impl KernelSpec {
    fn to_params(self) -> KernelParams {
        KernelParams {
            f_r: self.f_r,
            f_a: self.f_a,
            r_r: self.r_r,
            r_a: self.r_a,
            alpha_bar: self.alpha_bar,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AgentLayout {
    /// `origin, step, nx, ny`: a row-major lattice of agents.
    Lattice {
        origin: Vec2,
        step: Vec2,
        nx: usize,
        ny: usize,
    },
    Single(Vec2),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderSpec {
    pub pos: Vec2,
    pub velocity: Vec2,
    pub stop_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DesiredSpec {
    Zero,
    Constant(Vec2),
    Toward { target: Vec2, speed: f64 },
    GridFile(PathBuf),
    /// Walk toward door `door` (shrunk by `margin` at both ends), then in
    /// direction `dir` once past it; unit speed throughout.
    Funnel { door: usize, dir: Vec2, margin: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSpec {
    pub name: String,
    pub layout: Vec<AgentLayout>,
    pub leader: Option<LeaderSpec>,
    pub theta: f64,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub exogenous: Option<KernelSpec>,
    pub capital_theta: f64,
    pub desired: DesiredSpec,
    pub heading: Vec2,
    pub probe: Option<Rect>,
}

impl PopulationSpec {
    pub fn agent_positions(&self) -> Vec<Vec2> {
        let mut out = Vec::new();
        for l in &self.layout {
            match *l {
                AgentLayout::Lattice {
                    origin,
                    step,
                    nx,
                    ny,
                } => {
                    for iy in 0..ny {
                        for ix in 0..nx {
                            out.push(vec2(
                                origin.x + step.x * ix as f64,
                                origin.y + step.y * iy as f64,
                            ));
                        }
                    }
                }
                AgentLayout::Single(p) => out.push(p),
            }
        }
        out
    }
}

impl Scenario {
    pub fn domain_rect(&self) -> Rect {
        Rect {
            min: self.domain_origin,
            max: self.domain_origin + self.domain_size,
        }
    }

    pub fn grid(&self) -> Grid {
        let nx = (self.domain_size.x / self.h).round() as usize;
        let ny = (self.domain_size.y / self.h).round() as usize;
        Grid::new(self.domain_origin, self.h, nx.max(1), ny.max(1))
    }

    pub fn door_segments(&self) -> Vec<DoorSegment> {
        self.doors
            .iter()
            .map(|d| DoorSegment {
                a: d.a,
                b: d.b,
                outward: d.outward,
            })
            .collect()
    }
}

const PRESET_NAMES: &[&str] = &["test1", "test2_small", "test2_large", "test3", "test4"];

pub fn preset_names() -> &'static [&'static str] {
    PRESET_NAMES
}

/// A ready-made scenario by name.
pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "test1" => Ok(preset_dispersal()),
        "test2_small" => Ok(preset_evacuation(10)),
        "test2_large" => Ok(preset_evacuation(100)),
        "test3" => Ok(preset_crossing()),
        "test4" => Ok(preset_guided()),
        other => Err(Error::UnknownPreset(format!(
            "unknown preset '{other}'; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// A crowd left alone in a big room: no desired motion, short-range
/// repulsion only. Shows how the interaction field alone disperses the
/// group.
fn preset_dispersal() -> Scenario {
    Scenario {
        name: "test1".into(),
        domain_origin: vec2(-2.4, -1.4),
        domain_size: vec2(6.0, 5.6),
        h: 0.1,
        controls: StepControls {
            dt_max: 0.05,
            cfl: 0.95,
            t_final: 1.0,
            emptiness_threshold: 1e-6,
        },
        seal_doors: false,
        obstacles: vec![],
        doors: vec![],
        populations: vec![PopulationSpec {
            name: "crowd".into(),
            layout: vec![AgentLayout::Lattice {
                origin: vec2(0.05, 0.05),
                step: vec2(0.3, 0.3),
                nx: 10,
                ny: 10,
            }],
            leader: None,
            theta: 0.3,
            lambda: 10.0,
            kernel: KernelSpec {
                f_r: 0.1,
                f_a: 0.0,
                r_r: 0.5,
                r_a: 0.5,
                alpha_bar: FRAC_PI_2,
            },
            exogenous: None,
            capital_theta: 0.0,
            desired: DesiredSpec::Zero,
            heading: vec2(1.0, 0.0),
            probe: None,
        }],
    }
}

/// A room with a single exit: everyone funnels through the doorway, then
/// leaves the outer area through the fully open right edge.
fn preset_evacuation(n: usize) -> Scenario {
    let (nx, ny, origin, step) = if n <= 10 {
        (5, 2, vec2(1.0, 1.875), vec2(0.25, 0.25))
    } else {
        (10, 10, vec2(0.375, 0.875), vec2(0.25, 0.25))
    };
    Scenario {
        name: if n <= 10 {
            "test2_small".into()
        } else {
            "test2_large".into()
        },
        domain_origin: vec2(0.0, 0.0),
        domain_size: vec2(6.0, 4.0),
        h: 0.05,
        controls: StepControls {
            dt_max: 0.05,
            cfl: 0.95,
            t_final: 60.0,
            emptiness_threshold: 1e-6,
        },
        seal_doors: false,
        obstacles: vec![
            Rect::from_corners(3.0, 0.0, 3.2, 1.75),
            Rect::from_corners(3.0, 2.25, 3.2, 4.0),
        ],
        doors: vec![
            DoorSpec {
                a: vec2(3.0, 1.75),
                b: vec2(3.0, 2.25),
                outward: vec2(1.0, 0.0),
            },
            DoorSpec {
                a: vec2(6.0, 0.0),
                b: vec2(6.0, 4.0),
                outward: vec2(1.0, 0.0),
            },
        ],
        populations: vec![PopulationSpec {
            name: "walkers".into(),
            layout: vec![AgentLayout::Lattice {
                origin,
                step,
                nx,
                ny,
            }],
            leader: None,
            theta: 0.5,
            lambda: n as f64,
            kernel: KernelSpec {
                f_r: 0.1,
                f_a: 0.0,
                r_r: 0.25,
                r_a: 0.25,
                alpha_bar: FRAC_PI_2,
            },
            exogenous: None,
            capital_theta: 0.0,
            desired: DesiredSpec::Funnel {
                door: 0,
                dir: vec2(1.0, 0.0),
                margin: 0.1,
            },
            heading: vec2(1.0, 0.0),
            probe: Some(Rect::from_corners(0.0, 0.0, 3.0, 4.0)),
        }],
    }
}

/// Two groups walk through the same narrow passage in opposite directions.
fn preset_crossing() -> Scenario {
    let kernel = KernelSpec {
        f_r: 0.1,
        f_a: 0.0,
        r_r: 0.2,
        r_a: 0.2,
        alpha_bar: FRAC_PI_2,
    };
    let exo = KernelSpec {
        f_r: 0.1,
        f_a: 0.0,
        r_r: 0.35,
        r_a: 0.35,
        alpha_bar: FRAC_PI_2,
    };
    let pop = |name: &str, x0: f64, y0: f64, dir: f64, probe: Rect| PopulationSpec {
        name: name.into(),
        layout: vec![AgentLayout::Lattice {
            origin: vec2(x0, y0),
            step: vec2(0.3, 0.3),
            nx: 6,
            ny: 5,
        }],
        leader: None,
        theta: 0.3,
        lambda: 30.0,
        kernel,
        exogenous: Some(exo),
        capital_theta: 0.65,
        desired: DesiredSpec::Funnel {
            door: 0,
            dir: vec2(dir, 0.0),
            margin: 0.0,
        },
        heading: vec2(dir, 0.0),
        probe: Some(probe),
    };
    Scenario {
        name: "test3".into(),
        domain_origin: vec2(0.0, 0.0),
        domain_size: vec2(8.0, 3.0),
        h: 0.05,
        controls: StepControls {
            dt_max: 0.05,
            cfl: 0.95,
            t_final: 20.0,
            emptiness_threshold: 1e-6,
        },
        seal_doors: false,
        obstacles: vec![
            Rect::from_corners(3.9, 0.0, 4.1, 1.0),
            Rect::from_corners(3.9, 2.0, 4.1, 3.0),
        ],
        doors: vec![DoorSpec {
            a: vec2(4.0, 1.0),
            b: vec2(4.0, 2.0),
            outward: vec2(1.0, 0.0),
        }],
        // The blocks sit on opposite sides of the passage axis (centers at
        // y = 1.3 and 1.7), so at high theta the oncoming streams enter the
        // opening on complementary sides and walk past each other in two
        // lanes. Blocks facing each other dead-centered collide head-on and
        // lock up at every theta.
        populations: vec![
            pop("east", 1.0, 0.7, 1.0, Rect::from_corners(0.0, 0.0, 4.0, 3.0)),
            pop("west", 5.5, 1.1, -1.0, Rect::from_corners(4.0, 0.0, 8.0, 3.0)),
        ],
    }
}

/// A leader walks a corridor at fixed speed; followers have no desired
/// velocity of their own and trail it through attraction alone.
fn preset_guided() -> Scenario {
    Scenario {
        name: "test4".into(),
        domain_origin: vec2(0.0, 0.0),
        domain_size: vec2(12.0, 3.0),
        h: 0.1,
        controls: StepControls {
            dt_max: 0.05,
            cfl: 0.95,
            t_final: 18.0,
            emptiness_threshold: 1e-6,
        },
        seal_doors: false,
        obstacles: vec![],
        doors: vec![],
        populations: vec![PopulationSpec {
            name: "guided".into(),
            layout: vec![AgentLayout::Lattice {
                origin: vec2(0.6, 0.8),
                step: vec2(0.35, 0.35),
                nx: 5,
                ny: 5,
            }],
            leader: Some(LeaderSpec {
                pos: vec2(2.6, 1.5),
                velocity: vec2(0.4, 0.0),
                stop_distance: 1.5,
            }),
            theta: 0.3,
            lambda: 80.0,
            kernel: KernelSpec {
                f_r: 0.05,
                f_a: 0.4,
                r_r: 1.5,
                r_a: 1.5,
                alpha_bar: FRAC_PI_2,
            },
            exogenous: None,
            capital_theta: 0.0,
            desired: DesiredSpec::Zero,
            heading: vec2(1.0, 0.0),
            probe: None,
        }],
    }
}

/// Check everything that must hold before a world can be built. All
/// problems are reported together.
pub fn validate(sc: &Scenario) -> Result<()> {
    let mut issues = Vec::new();
    let domain = sc.domain_rect();

    if !(sc.domain_size.x > 0.0 && sc.domain_size.y > 0.0) {
        issues.push("domain size must be positive in both directions".to_string());
    }
    if !(sc.h > 0.0) {
        issues.push(format!("cell size must be positive, got {}", sc.h));
    } else {
        for (len, axis) in [(sc.domain_size.x, "x"), (sc.domain_size.y, "y")] {
            let n = (len / sc.h).round();
            if n < 1.0 || (n * sc.h - len).abs() > 1e-9 * len.max(1.0) {
                issues.push(format!(
                    "cell size {} does not tile the domain extent {} along {axis}",
                    sc.h, len
                ));
            }
        }
    }
    if !(sc.controls.dt_max > 0.0) {
        issues.push("dt_max must be positive".to_string());
    }
    if !(sc.controls.cfl > 0.0 && sc.controls.cfl <= 1.0) {
        issues.push(format!(
            "cfl must be in (0, 1], got {}",
            sc.controls.cfl
        ));
    }
    if !(sc.controls.t_final > 0.0) {
        issues.push("t_final must be positive".to_string());
    }
    if !(sc.controls.emptiness_threshold > 0.0) {
        issues.push("emptiness_threshold must be positive".to_string());
    }

    for (i, o) in sc.obstacles.iter().enumerate() {
        if !(o.max.x > o.min.x && o.max.y > o.min.y) {
            issues.push(format!("obstacle.{i} is degenerate"));
        } else if !domain.contains_rect(o) {
            issues.push(format!("obstacle.{i} sticks out of the domain"));
        }
    }
    for (i, d) in sc.doors.iter().enumerate() {
        let vertical = d.a.x == d.b.x;
        let horizontal = d.a.y == d.b.y;
        if vertical == horizontal {
            issues.push(format!("door.{i} must be a proper axis-aligned segment"));
        }
        if (d.b - d.a).norm() <= 0.0 {
            issues.push(format!("door.{i} has zero length"));
        }
        if d.outward.norm_sq() == 0.0 {
            issues.push(format!("door.{i} needs a nonzero outward direction"));
        }
    }

    if sc.populations.is_empty() {
        issues.push("at least one population is required".to_string());
    }
    for (pi, p) in sc.populations.iter().enumerate() {
        let label = &p.name;
        if !(0.0..=1.0).contains(&p.theta) {
            issues.push(format!("population {label}: theta must be in [0, 1]"));
        }
        if !(p.lambda > 0.0) {
            issues.push(format!("population {label}: lambda must be positive"));
        }
        if !(0.0..=1.0).contains(&p.capital_theta) {
            issues.push(format!(
                "population {label}: capital_theta must be in [0, 1]"
            ));
        }
        if p.capital_theta > 0.0 && p.exogenous.is_none() && sc.populations.len() > 1 {
            issues.push(format!(
                "population {label}: capital_theta > 0 needs an exogenous kernel"
            ));
        }
        for k in std::iter::once(&p.kernel).chain(p.exogenous.iter()) {
            if k.f_r < 0.0 || k.f_a < 0.0 || k.r_r < 0.0 || k.r_a < 0.0 {
                issues.push(format!(
                    "population {label}: kernel strengths and radii must be nonnegative"
                ));
            }
            if k.alpha_bar < 0.0 || k.alpha_bar > std::f64::consts::PI {
                issues.push(format!(
                    "population {label}: alpha_bar must be in [0, pi]"
                ));
            }
        }
        if p.heading.norm_sq() == 0.0 {
            issues.push(format!("population {label}: heading must be nonzero"));
        }
        let positions = p.agent_positions();
        if positions.is_empty() {
            issues.push(format!("population {label}: no agents"));
        }
        for (ai, pos) in positions.iter().enumerate() {
            if !domain.contains(*pos) {
                issues.push(format!(
                    "population {label}: agent {ai} at ({}, {}) is outside the domain",
                    pos.x, pos.y
                ));
            } else if sc.obstacles.iter().any(|o| o.contains_interior(*pos)) {
                issues.push(format!(
                    "population {label}: agent {ai} at ({}, {}) is inside an obstacle",
                    pos.x, pos.y
                ));
            }
        }
        if let Some(l) = &p.leader {
            if !domain.contains(l.pos) {
                issues.push(format!("population {label}: leader is outside the domain"));
            }
            if !(l.stop_distance > 0.0) {
                issues.push(format!(
                    "population {label}: leader stop distance must be positive"
                ));
            }
        }
        if let DesiredSpec::Funnel { door, dir, margin } = &p.desired {
            if *door >= sc.doors.len() {
                issues.push(format!(
                    "population {label}: funnel references door.{door} which does not exist"
                ));
            }
            if dir.norm_sq() == 0.0 {
                issues.push(format!("population {label}: funnel direction is zero"));
            }
            if *margin < 0.0 {
                issues.push(format!("population {label}: funnel margin is negative"));
            }
        }
        if let Some(probe) = &p.probe {
            if !(probe.max.x > probe.min.x && probe.max.y > probe.min.y) {
                issues.push(format!("population {label}: probe region is degenerate"));
            }
        }
        let _ = pi;
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(issues))
    }
}

/// Funnel desired-velocity field: ahead of the door plane walk in `dir`,
/// behind it walk toward the nearest point of the door opening (shrunk by
/// `margin`), always at unit speed.
///
/// Cells inside a wall count as behind the door even when their center is
/// past its plane. A walker pressed flush against a wall face samples the
/// first cell of the wall, and a past-the-door direction there would pin it
/// in place; aiming the cell at the opening lets it slide out instead.
fn funnel_field(
    grid: &Grid,
    door: &DoorSegment,
    dir: Vec2,
    margin: f64,
    obstacles: &[Obstacle],
) -> VectorGrid {
    let dir = dir.normalized();
    let center = door.center();
    VectorGrid::from_fn(grid.clone(), |c| {
        let walled = obstacles.iter().any(|o| o.rect.contains(c));
        if !walled && (c - center).dot(dir) >= 0.0 {
            dir
        } else {
            let target = door.closest_point(c, margin);
            let d = target - c;
            if d.norm_sq() < 1e-24 {
                dir
            } else {
                d.normalized()
            }
        }
    })
}

fn materialize_desired(
    spec: &DesiredSpec,
    heading: Vec2,
    grid: &Grid,
    doors: &[DoorSegment],
    obstacles: &[Obstacle],
) -> Result<DesiredVelocity> {
    let fallback = heading.normalized();
    let kind = match spec {
        DesiredSpec::Zero => DesiredKind::Zero,
        DesiredSpec::Constant(v) => DesiredKind::Constant(*v),
        DesiredSpec::Toward { target, speed } => DesiredKind::TowardTarget {
            target: *target,
            speed: *speed,
        },
        DesiredSpec::GridFile(path) => DesiredKind::Sampled(load_vector_field(path)?),
        DesiredSpec::Funnel { door, dir, margin } => {
            DesiredKind::Sampled(funnel_field(grid, &doors[*door], *dir, *margin, obstacles))
        }
    };
    Ok(DesiredVelocity {
        kind,
        fallback_heading: fallback,
    })
}

/// Build a runnable world: expand agent layouts, initialize each density
/// from its agents, materialize desired-velocity fields, and assemble the
/// environment.
pub fn build_world(sc: &Scenario) -> Result<World> {
    validate(sc)?;
    let grid = sc.grid();
    let obstacles: Vec<Obstacle> = sc.obstacles.iter().map(|&rect| Obstacle { rect }).collect();
    let doors = sc.door_segments();
    let env = Environment::new(
        sc.domain_rect(),
        obstacles.clone(),
        doors.clone(),
        default_wall_tolerance(sc.h),
        sc.seal_doors,
    );

    let mut populations = Vec::with_capacity(sc.populations.len());
    for p in &sc.populations {
        let mut agents: Vec<Agent> = p
            .agent_positions()
            .iter()
            .enumerate()
            .map(|(i, &pos)| Agent {
                id: i as u32,
                pos,
                role: Role::Follower,
            })
            .collect();
        if let Some(l) = &p.leader {
            agents.push(Agent {
                id: agents.len() as u32,
                pos: l.pos,
                role: Role::Leader,
            });
        }
        let micro = MicroState { agents };
        let init = init_density_from_micro(&micro, p.lambda, &grid, &obstacles)?;
        let desired = materialize_desired(&p.desired, p.heading, &grid, &doors, &obstacles)?;
        populations.push(Population {
            name: p.name.clone(),
            micro,
            density: init.density,
            lambda: p.lambda,
            interaction: InteractionSpec {
                theta: p.theta,
                endogenous: p.kernel.to_params(),
                exogenous: p.exogenous.map(KernelSpec::to_params),
                capital_theta: p.capital_theta,
            },
            desired,
            leader: p.leader.map(|l| LeaderRule {
                velocity: l.velocity,
                stop_distance: l.stop_distance,
            }),
            probe: p.probe,
        });
    }
    Ok(World::new(env, sc.controls, populations))
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

impl Scenario {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[scenario]");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s);
        let _ = writeln!(s, "[domain]");
        let _ = writeln!(s, "origin = {} {}", self.domain_origin.x, self.domain_origin.y);
        let _ = writeln!(s, "size = {} {}", self.domain_size.x, self.domain_size.y);
        let _ = writeln!(s, "h = {}", self.h);
        let _ = writeln!(s);
        let _ = writeln!(s, "[controls]");
        let _ = writeln!(s, "dt_max = {}", self.controls.dt_max);
        let _ = writeln!(s, "cfl = {}", self.controls.cfl);
        let _ = writeln!(s, "t_final = {}", self.controls.t_final);
        let _ = writeln!(
            s,
            "emptiness_threshold = {}",
            self.controls.emptiness_threshold
        );
        let _ = writeln!(s, "seal_doors = {}", self.seal_doors);
        for (i, o) in self.obstacles.iter().enumerate() {
            let _ = writeln!(s);
            let _ = writeln!(s, "[obstacle.{i}]");
            let _ = writeln!(s, "rect = {} {} {} {}", o.min.x, o.min.y, o.max.x, o.max.y);
        }
        for (i, d) in self.doors.iter().enumerate() {
            let _ = writeln!(s);
            let _ = writeln!(s, "[door.{i}]");
            let _ = writeln!(s, "segment = {} {} {} {}", d.a.x, d.a.y, d.b.x, d.b.y);
            let _ = writeln!(s, "outward = {} {}", d.outward.x, d.outward.y);
        }
        for (i, p) in self.populations.iter().enumerate() {
            let _ = writeln!(s);
            let _ = writeln!(s, "[population.{i}]");
            let _ = writeln!(s, "name = {}", p.name);
            for l in &p.layout {
                match l {
                    AgentLayout::Lattice {
                        origin,
                        step,
                        nx,
                        ny,
                    } => {
                        let _ = writeln!(
                            s,
                            "lattice = {} {} {} {} {} {}",
                            origin.x, origin.y, step.x, step.y, nx, ny
                        );
                    }
                    AgentLayout::Single(p) => {
                        let _ = writeln!(s, "agent = {} {}", p.x, p.y);
                    }
                }
            }
            if let Some(l) = &p.leader {
                let _ = writeln!(
                    s,
                    "leader = {} {} {} {} {}",
                    l.pos.x, l.pos.y, l.velocity.x, l.velocity.y, l.stop_distance
                );
            }
            let _ = writeln!(s, "theta = {}", p.theta);
            let _ = writeln!(s, "lambda = {}", p.lambda);
            let _ = writeln!(s, "f_r = {}", p.kernel.f_r);
            let _ = writeln!(s, "f_a = {}", p.kernel.f_a);
            let _ = writeln!(s, "r_r = {}", p.kernel.r_r);
            let _ = writeln!(s, "r_a = {}", p.kernel.r_a);
            let _ = writeln!(s, "alpha_bar = {}", p.kernel.alpha_bar);
            let _ = writeln!(s, "capital_theta = {}", p.capital_theta);
            if let Some(e) = &p.exogenous {
                let _ = writeln!(s, "exo_f_r = {}", e.f_r);
                let _ = writeln!(s, "exo_f_a = {}", e.f_a);
                let _ = writeln!(s, "exo_r_r = {}", e.r_r);
                let _ = writeln!(s, "exo_r_a = {}", e.r_a);
                let _ = writeln!(s, "exo_alpha_bar = {}", e.alpha_bar);
            }
            let _ = writeln!(s, "desired = {}", desired_to_text(&p.desired));
            let _ = writeln!(s, "heading = {} {}", p.heading.x, p.heading.y);
            if let Some(r) = &p.probe {
                let _ = writeln!(s, "probe = {} {} {} {}", r.min.x, r.min.y, r.max.x, r.max.y);
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Scenario> {
        Parser::new(text).finish()
    }
}

fn desired_to_text(d: &DesiredSpec) -> String {
    match d {
        DesiredSpec::Zero => "zero".into(),
        DesiredSpec::Constant(v) => format!("constant {} {}", v.x, v.y),
        DesiredSpec::Toward { target, speed } => {
            format!("toward {} {} {}", target.x, target.y, speed)
        }
        DesiredSpec::GridFile(p) => format!("grid_file {}", p.display()),
        DesiredSpec::Funnel { door, dir, margin } => {
            format!("funnel {door} {} {} {margin}", dir.x, dir.y)
        }
    }
}

fn parse_desired(value: &str, line: usize) -> Result<DesiredSpec> {
    let fields: Vec<&str> = value.split_whitespace().collect();
    let bad = |msg: String| Error::ScenarioParse { line, msg };
    match fields.first().copied() {
        Some("zero") if fields.len() == 1 => Ok(DesiredSpec::Zero),
        Some("constant") if fields.len() == 3 => Ok(DesiredSpec::Constant(vec2(
            num(fields[1], line)?,
            num(fields[2], line)?,
        ))),
        Some("toward") if fields.len() == 4 => Ok(DesiredSpec::Toward {
            target: vec2(num(fields[1], line)?, num(fields[2], line)?),
            speed: num(fields[3], line)?,
        }),
        Some("grid_file") if fields.len() == 2 => {
            Ok(DesiredSpec::GridFile(PathBuf::from(fields[1])))
        }
        Some("funnel") if fields.len() == 5 => Ok(DesiredSpec::Funnel {
            door: count(fields[1], line)?,
            dir: vec2(num(fields[2], line)?, num(fields[3], line)?),
            margin: num(fields[4], line)?,
        }),
        _ => Err(bad(format!(
            "desired must be one of: zero | constant vx vy | toward x y speed | \
grid_file path | funnel door dx dy margin (got '{value}')"
        ))),
    }
}

fn num(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::ScenarioParse {
        line,
        msg: format!("expected a number, got '{s}'"),
    })
}

fn count(s: &str, line: usize) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::ScenarioParse {
        line,
        msg: format!("expected a nonnegative integer, got '{s}'"),
    })
}

fn nums<const N: usize>(value: &str, line: usize) -> Result<[f64; N]> {
    let fields: Vec<&str> = value.split_whitespace().collect();
    if fields.len() != N {
        return Err(Error::ScenarioParse {
            line,
            msg: format!("expected {N} numbers, got {}", fields.len()),
        });
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = num(f, line)?;
    }
    Ok(out)
}

#[derive(Default)]
struct PopBuilder {
    name: Option<String>,
    layout: Vec<AgentLayout>,
    leader: Option<LeaderSpec>,
    theta: Option<f64>,
    lambda: Option<f64>,
    f_r: Option<f64>,
    f_a: Option<f64>,
    r_r: Option<f64>,
    r_a: Option<f64>,
    alpha_bar: Option<f64>,
    capital_theta: Option<f64>,
    exo_f_r: Option<f64>,
    exo_f_a: Option<f64>,
    exo_r_r: Option<f64>,
    exo_r_a: Option<f64>,
    exo_alpha_bar: Option<f64>,
    desired: Option<DesiredSpec>,
    heading: Option<Vec2>,
    probe: Option<Rect>,
}

impl PopBuilder {
    fn finish(self, idx: usize) -> Result<PopulationSpec> {
        let missing = |what: &str| {
            Error::ScenarioParse {
                line: 0,
                msg: format!("population.{idx} is missing '{what}'"),
            }
        };
        let r_r = self.r_r.ok_or_else(|| missing("r_r"))?;
        let exo = match (self.exo_f_r, self.exo_r_r) {
            (None, None) => {
                if self.exo_f_a.is_some() || self.exo_r_a.is_some() || self.exo_alpha_bar.is_some()
                {
                    return Err(missing("exo_f_r and exo_r_r"));
                }
                None
            }
            (Some(f_r), Some(r_r)) => Some(KernelSpec {
                f_r,
                f_a: self.exo_f_a.unwrap_or(0.0),
                r_r,
                r_a: self.exo_r_a.unwrap_or(r_r),
                alpha_bar: self.exo_alpha_bar.unwrap_or(FRAC_PI_2),
            }),
            _ => return Err(missing("exo_f_r and exo_r_r")),
        };
        Ok(PopulationSpec {
            name: self.name.unwrap_or_else(|| format!("population{idx}")),
            layout: self.layout,
            leader: self.leader,
            theta: self.theta.ok_or_else(|| missing("theta"))?,
            lambda: self.lambda.ok_or_else(|| missing("lambda"))?,
            kernel: KernelSpec {
                f_r: self.f_r.ok_or_else(|| missing("f_r"))?,
                f_a: self.f_a.unwrap_or(0.0),
                r_r,
                r_a: self.r_a.unwrap_or(r_r),
                alpha_bar: self.alpha_bar.unwrap_or(FRAC_PI_2),
            },
            exogenous: exo,
            capital_theta: self.capital_theta.unwrap_or(0.0),
            desired: self.desired.unwrap_or(DesiredSpec::Zero),
            heading: self.heading.unwrap_or(vec2(1.0, 0.0)),
            probe: self.probe,
        })
    }
}

enum Section {
    None,
    Scenario,
    Domain,
    Controls,
    Obstacle(usize),
    Door(usize),
    Population(usize),
}

struct Parser {
    name: String,
    origin: Option<Vec2>,
    size: Option<Vec2>,
    h: Option<f64>,
    controls: StepControls,
    seal_doors: bool,
    obstacles: BTreeMap<usize, Rect>,
    doors: BTreeMap<usize, (Option<(Vec2, Vec2)>, Option<Vec2>)>,
    pops: BTreeMap<usize, PopBuilder>,
    error: Option<Error>,
}

impl Parser {
    fn new(text: &str) -> Parser {
        let mut p = Parser {
            name: "custom".into(),
            origin: None,
            size: None,
            h: None,
            controls: StepControls::default(),
            seal_doors: false,
            obstacles: BTreeMap::new(),
            doors: BTreeMap::new(),
            pops: BTreeMap::new(),
            error: None,
        };
        if let Err(e) = p.run(text) {
            p.error = Some(e);
        }
        p
    }

    fn run(&mut self, text: &str) -> Result<()> {
        let mut section = Section::None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let bad = |msg: String| Error::ScenarioParse { line, msg };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(header) = trimmed.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| bad("unterminated section header".into()))?;
                section = self.open_section(header, line)?;
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| bad(format!("expected 'key = value', got '{trimmed}'")))?;
            let key = key.trim();
            let value = value.trim();
            match &section {
                Section::None => {
                    return Err(bad(format!(
                        "'{key}' appears before any section header"
                    )))
                }
                Section::Scenario => match key {
                    "name" => self.name = value.to_string(),
                    _ => return Err(bad(format!("unknown key '{key}' in [scenario]"))),
                },
                Section::Domain => match key {
                    "origin" => {
                        let [x, y] = nums::<2>(value, line)?;
                        self.origin = Some(vec2(x, y));
                    }
                    "size" => {
                        let [x, y] = nums::<2>(value, line)?;
                        self.size = Some(vec2(x, y));
                    }
                    "h" => self.h = Some(num(value, line)?),
                    _ => return Err(bad(format!("unknown key '{key}' in [domain]"))),
                },
                Section::Controls => match key {
                    "dt_max" => self.controls.dt_max = num(value, line)?,
                    "cfl" => self.controls.cfl = num(value, line)?,
                    "t_final" => self.controls.t_final = num(value, line)?,
                    "emptiness_threshold" => {
                        self.controls.emptiness_threshold = num(value, line)?
                    }
                    "seal_doors" => {
                        self.seal_doors = value.parse::<bool>().map_err(|_| {
                            bad(format!("seal_doors must be true or false, got '{value}'"))
                        })?
                    }
                    _ => return Err(bad(format!("unknown key '{key}' in [controls]"))),
                },
                Section::Obstacle(i) => match key {
                    "rect" => {
                        let [x0, y0, x1, y1] = nums::<4>(value, line)?;
                        self.obstacles.insert(*i, Rect::from_corners(x0, y0, x1, y1));
                    }
                    _ => return Err(bad(format!("unknown key '{key}' in [obstacle.{i}]"))),
                },
                Section::Door(i) => {
                    let entry = self.doors.entry(*i).or_insert((None, None));
                    match key {
                        "segment" => {
                            let [ax, ay, bx, by] = nums::<4>(value, line)?;
                            entry.0 = Some((vec2(ax, ay), vec2(bx, by)));
                        }
                        "outward" => {
                            let [x, y] = nums::<2>(value, line)?;
                            entry.1 = Some(vec2(x, y));
                        }
                        _ => return Err(bad(format!("unknown key '{key}' in [door.{i}]"))),
                    }
                }
                Section::Population(i) => {
                    let b = self.pops.entry(*i).or_default();
                    match key {
                        "name" => b.name = Some(value.to_string()),
                        "lattice" => {
                            let fields: Vec<&str> = value.split_whitespace().collect();
                            if fields.len() != 6 {
                                return Err(bad(
                                    "lattice needs: x0 y0 dx dy nx ny".to_string(),
                                ));
                            }
                            b.layout.push(AgentLayout::Lattice {
                                origin: vec2(num(fields[0], line)?, num(fields[1], line)?),
                                step: vec2(num(fields[2], line)?, num(fields[3], line)?),
                                nx: count(fields[4], line)?,
                                ny: count(fields[5], line)?,
                            });
                        }
                        "agent" => {
                            let [x, y] = nums::<2>(value, line)?;
                            b.layout.push(AgentLayout::Single(vec2(x, y)));
                        }
                        "leader" => {
                            let [x, y, vx, vy, d] = nums::<5>(value, line)?;
                            b.leader = Some(LeaderSpec {
                                pos: vec2(x, y),
                                velocity: vec2(vx, vy),
                                stop_distance: d,
                            });
                        }
                        "theta" => b.theta = Some(num(value, line)?),
                        "lambda" => b.lambda = Some(num(value, line)?),
                        "f_r" => b.f_r = Some(num(value, line)?),
                        "f_a" => b.f_a = Some(num(value, line)?),
                        "r_r" => b.r_r = Some(num(value, line)?),
                        "r_a" => b.r_a = Some(num(value, line)?),
                        "alpha_bar" => b.alpha_bar = Some(num(value, line)?),
                        "capital_theta" => b.capital_theta = Some(num(value, line)?),
                        "exo_f_r" => b.exo_f_r = Some(num(value, line)?),
                        "exo_f_a" => b.exo_f_a = Some(num(value, line)?),
                        "exo_r_r" => b.exo_r_r = Some(num(value, line)?),
                        "exo_r_a" => b.exo_r_a = Some(num(value, line)?),
                        "exo_alpha_bar" => b.exo_alpha_bar = Some(num(value, line)?),
                        "desired" => b.desired = Some(parse_desired(value, line)?),
                        "heading" => {
                            let [x, y] = nums::<2>(value, line)?;
                            b.heading = Some(vec2(x, y));
                        }
                        "probe" => {
                            let [x0, y0, x1, y1] = nums::<4>(value, line)?;
                            b.probe = Some(Rect::from_corners(x0, y0, x1, y1));
                        }
                        _ => {
                            return Err(bad(format!(
                                "unknown key '{key}' in [population.{i}]"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn open_section(&mut self, header: &str, line: usize) -> Result<Section> {
        let bad = |msg: String| Error::ScenarioParse { line, msg };
        match header {
            "scenario" => return Ok(Section::Scenario),
            "domain" => return Ok(Section::Domain),
            "controls" => return Ok(Section::Controls),
            _ => {}
        }
        let (kind, idx) = header
            .split_once('.')
            .ok_or_else(|| bad(format!("unknown section [{header}]")))?;
        let idx = count(idx, line)?;
        match kind {
            "obstacle" => Ok(Section::Obstacle(idx)),
            "door" => Ok(Section::Door(idx)),
            "population" => Ok(Section::Population(idx)),
            _ => Err(bad(format!("unknown section [{header}]"))),
        }
    }

    fn finish(self) -> Result<Scenario> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let missing = |what: &str| Error::ScenarioParse {
            line: 0,
            msg: format!("missing required '{what}'"),
        };
        let origin = self.origin.ok_or_else(|| missing("[domain] origin"))?;
        let size = self.size.ok_or_else(|| missing("[domain] size"))?;
        let h = self.h.ok_or_else(|| missing("[domain] h"))?;

        let contiguous = |keys: Vec<usize>, what: &str| -> Result<()> {
            for (expect, got) in keys.iter().enumerate() {
                if *got != expect {
                    return Err(Error::ScenarioParse {
                        line: 0,
                        msg: format!("{what} sections must be numbered 0, 1, 2, ..."),
                    });
                }
            }
            Ok(())
        };
        contiguous(self.obstacles.keys().copied().collect(), "obstacle")?;
        contiguous(self.doors.keys().copied().collect(), "door")?;
        contiguous(self.pops.keys().copied().collect(), "population")?;

        let mut doors = Vec::new();
        for (i, (seg, outward)) in self.doors {
            let (a, b) = seg.ok_or_else(|| missing(&format!("door.{i} segment")))?;
            let outward = outward.ok_or_else(|| missing(&format!("door.{i} outward")))?;
            doors.push(DoorSpec { a, b, outward });
        }
        let mut populations = Vec::new();
        for (i, b) in self.pops {
            populations.push(b.finish(i)?);
        }

        Ok(Scenario {
            name: self.name,
            domain_origin: origin,
            domain_size: size,
            h,
            controls: self.controls,
            seal_doors: self.seal_doors,
            obstacles: self.obstacles.into_values().collect(),
            doors,
            populations,
        })
    }
}

// ---------------------------------------------------------------------------
// Overrides
// ---------------------------------------------------------------------------

/// Apply a `key=value` override to a scenario. Supported keys:
/// `scenario.name`, `domain.h`, `controls.{dt_max,cfl,t_final,`
/// `emptiness_threshold,seal_doors}`, and
/// `populations.<i>.{theta,lambda,f_r,f_a,r_r,r_a,alpha_bar,capital_theta,`
/// `desired,heading}` (singular `population.<i>` works too).
pub fn apply_override(sc: &mut Scenario, assignment: &str) -> Result<()> {
    let (key, value) = assignment.split_once('=').ok_or_else(|| {
        Error::OverrideKey(format!("override '{assignment}' is not of the form key=value"))
    })?;
    let key = key.trim();
    let value = value.trim();
    let badval = |msg: String| Error::OverrideValue {
        key: key.to_string(),
        msg,
    };
    let parse_num =
        |v: &str| -> Result<f64> { v.parse().map_err(|_| badval(format!("'{v}' is not a number"))) };

    let parts: Vec<&str> = key.split('.').collect();
    match parts.as_slice() {
        ["scenario", "name"] => sc.name = value.to_string(),
        ["domain", "h"] => sc.h = parse_num(value)?,
        ["controls", "dt_max"] => sc.controls.dt_max = parse_num(value)?,
        ["controls", "cfl"] => sc.controls.cfl = parse_num(value)?,
        ["controls", "t_final"] => sc.controls.t_final = parse_num(value)?,
        ["controls", "emptiness_threshold"] => {
            sc.controls.emptiness_threshold = parse_num(value)?
        }
        ["controls", "seal_doors"] => {
            sc.seal_doors = value
                .parse()
                .map_err(|_| badval(format!("'{value}' is not true/false")))?
        }
        ["population" | "populations", idx, field] => {
            let i: usize = idx
                .parse()
                .map_err(|_| Error::OverrideKey(format!("bad population index in '{key}'")))?;
            let n = sc.populations.len();
            let p = sc
                .populations
                .get_mut(i)
                .ok_or_else(|| Error::OverrideKey(format!(
                    "population.{i} does not exist (scenario has {n})"
                )))?;
            match *field {
                "theta" => p.theta = parse_num(value)?,
                "lambda" => p.lambda = parse_num(value)?,
                "f_r" => p.kernel.f_r = parse_num(value)?,
                "f_a" => p.kernel.f_a = parse_num(value)?,
                "r_r" => p.kernel.r_r = parse_num(value)?,
                "r_a" => p.kernel.r_a = parse_num(value)?,
                "alpha_bar" => p.kernel.alpha_bar = parse_num(value)?,
                "capital_theta" => p.capital_theta = parse_num(value)?,
                "desired" => p.desired = parse_desired(value, 0).map_err(|e| match e {
                    Error::ScenarioParse { msg, .. } => badval(msg),
                    other => other,
                })?,
                "heading" => {
                    let [x, y] = nums::<2>(value, 0).map_err(|_| {
                        badval(format!("'{value}' is not two numbers"))
                    })?;
                    p.heading = vec2(x, y);
                }
                other => {
                    return Err(Error::OverrideKey(format!(
                        "unknown population field '{other}' in '{key}'"
                    )))
                }
            }
        }
        _ => return Err(Error::OverrideKey(format!("unknown override key '{key}'"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_build() {
        for name in preset_names() {
            let sc = preset(name).unwrap();
            validate(&sc).unwrap_or_else(|e| panic!("{name}: {e}"));
            let world = build_world(&sc).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!world.populations.is_empty());
            for p in &world.populations {
                // Density initialization must reproduce the follower count.
                let scaled = p.lambda * p.density.total_mass();
                let n = p.micro.follower_count() as f64;
                assert!(
                    (scaled - n).abs() / n <= 0.05,
                    "{name}/{}: scaled {scaled} vs {n}",
                    p.name
                );
            }
        }
        assert!(preset("test99").is_err());
    }

    #[test]
    fn preset_agent_counts() {
        assert_eq!(
            preset("test1").unwrap().populations[0].agent_positions().len(),
            100
        );
        assert_eq!(
            preset("test2_small").unwrap().populations[0]
                .agent_positions()
                .len(),
            10
        );
        assert_eq!(
            preset("test2_large").unwrap().populations[0]
                .agent_positions()
                .len(),
            100
        );
        let t3 = preset("test3").unwrap();
        assert_eq!(t3.populations.len(), 2);
        assert_eq!(t3.populations[0].agent_positions().len(), 30);
        let t4 = preset("test4").unwrap();
        assert_eq!(t4.populations[0].agent_positions().len(), 25);
        assert!(t4.populations[0].leader.is_some());
    }

    #[test]
    fn text_round_trip_is_exact() {
        for name in preset_names() {
            let sc = preset(name).unwrap();
            let text = sc.to_text();
            let back = Scenario::from_text(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(sc, back, "{name} did not round-trip");
            assert_eq!(text, back.to_text());
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let text = "[domain]\norigin = 0 0\nsize = 1 1\nh = 0.5\nwat = 3\n";
        match Scenario::from_text(text) {
            Err(Error::ScenarioParse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn funnel_field_points_through_the_door() {
        let sc = preset("test2_small").unwrap();
        let world = build_world(&sc).unwrap();
        let desired = &world.populations[0].desired;
        // Left of the doorway: aims at the opening (up and to the right
        // from below the door span).
        let v = desired.eval(vec2(1.0, 0.5));
        assert!(v.x > 0.0 && v.y > 0.0);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        // Right of the doorway: straight out.
        let v = desired.eval(vec2(3.5, 0.5));
        assert_eq!(v, vec2(1.0, 0.0));
        // In line with the opening: straight at it.
        let v = desired.eval(vec2(1.0, 2.0));
        assert!((v.y).abs() < 1e-9);
        assert!(v.x > 0.99);
    }

    #[test]
    fn overrides_reach_their_targets() {
        let mut sc = preset("test1").unwrap();
        apply_override(&mut sc, "populations.0.theta=0.75").unwrap();
        assert_eq!(sc.populations[0].theta, 0.75);
        apply_override(&mut sc, "population.0.theta=0.25").unwrap();
        assert_eq!(sc.populations[0].theta, 0.25);
        apply_override(&mut sc, "controls.t_final=2.5").unwrap();
        assert_eq!(sc.controls.t_final, 2.5);
        apply_override(&mut sc, "controls.seal_doors=true").unwrap();
        assert!(sc.seal_doors);
        apply_override(&mut sc, "population.0.desired=constant 0.5 0").unwrap();
        assert_eq!(
            sc.populations[0].desired,
            DesiredSpec::Constant(vec2(0.5, 0.0))
        );
        assert!(apply_override(&mut sc, "population.7.theta=0.5").is_err());
        assert!(apply_override(&mut sc, "nope.key=1").is_err());
        assert!(apply_override(&mut sc, "population.0.theta=x").is_err());
    }

    #[test]
    fn validation_collects_issues() {
        let mut sc = preset("test1").unwrap();
        sc.populations[0].theta = 1.5;
        sc.populations[0].lambda = -1.0;
        sc.h = 0.07; // does not tile 6.0 x 5.6
        match validate(&sc) {
            Err(Error::Validation(issues)) => {
                assert!(issues.len() >= 3, "{issues:?}");
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn agents_outside_domain_fail_validation() {
        let mut sc = preset("test1").unwrap();
        sc.populations[0]
            .layout
            .push(AgentLayout::Single(vec2(100.0, 0.0)));
        assert!(validate(&sc).is_err());
    }
}
