//! Observables: multiscale moments, probe masses, door fluxes, outflow
//! time statistics, grid error norms, and a per-step CSV table.

use std::collections::HashSet;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::io::sig9;
use crate::measures::{MacroDensity, MicroState};
use crate::stepper::{Population, StepReport, World};
use crate::vec2::Vec2;

/// Mass, center of mass, and dispersion (mean squared distance from the
/// center) of one distribution.
#[derive(Clone, Copy, Debug)]
pub struct Moments {
    pub mass: f64,
    pub center: Vec2,
    pub dispersion: f64,
}

pub fn micro_moments(m: &MicroState) -> Option<Moments> {
    if m.agents.is_empty() {
        return None;
    }
    let n = m.agents.len() as f64;
    let center = m.agents.iter().fold(Vec2::ZERO, |s, a| s + a.pos) / n;
    let dispersion = m
        .agents
        .iter()
        .map(|a| (a.pos - center).norm_sq())
        .sum::<f64>()
        / n;
    Some(Moments {
        mass: n,
        center,
        dispersion,
    })
}

pub fn macro_moments(d: &MacroDensity) -> Option<Moments> {
    let g = &d.grid;
    let h2 = g.h * g.h;
    let mut mass = 0.0;
    let mut first = Vec2::ZERO;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let m = d.rho[g.linear(ix, iy)] * h2;
            if m != 0.0 {
                mass += m;
                first += g.cell_center(ix, iy) * m;
            }
        }
    }
    if mass <= 0.0 {
        return None;
    }
    let center = first / mass;
    let mut second = 0.0;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let m = d.rho[g.linear(ix, iy)] * h2;
            if m != 0.0 {
                second += (g.cell_center(ix, iy) - center).norm_sq() * m;
            }
        }
    }
    Some(Moments {
        mass,
        center,
        dispersion: second / mass,
    })
}

/// Moments of the full multiscale measure
/// `theta * m + (1 - theta) * lambda * M`.
pub fn measure_moments(p: &Population) -> Option<Moments> {
    let th = p.theta();
    let mut mass = 0.0;
    let mut first = Vec2::ZERO;
    for a in &p.micro.agents {
        mass += th;
        first += a.pos * th;
    }
    let g = &p.density.grid;
    let h2 = g.h * g.h;
    let w = (1.0 - th) * p.lambda;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let m = w * p.density.rho[g.linear(ix, iy)] * h2;
            if m != 0.0 {
                mass += m;
                first += g.cell_center(ix, iy) * m;
            }
        }
    }
    if mass <= 0.0 {
        return None;
    }
    let center = first / mass;
    let second = measure_second_moment_about(p, center);
    Some(Moments {
        mass,
        center,
        dispersion: second / mass,
    })
}

/// Second moments split by axis: `i1` along x, `i2` along y, `ig` their
/// sum. Unnormalized, so the multiscale variant is the plain theta blend of
/// the per-scale values.
#[derive(Clone, Copy, Debug)]
pub struct AxisMoments {
    pub i1: f64,
    pub i2: f64,
    pub ig: f64,
}

impl AxisMoments {
    fn new(i1: f64, i2: f64) -> AxisMoments {
        AxisMoments {
            i1,
            i2,
            ig: i1 + i2,
        }
    }

    const NAN: AxisMoments = AxisMoments {
        i1: f64::NAN,
        i2: f64::NAN,
        ig: f64::NAN,
    };
}

pub fn micro_axis_moments_about(m: &MicroState, c: Vec2) -> AxisMoments {
    let (mut i1, mut i2) = (0.0, 0.0);
    for a in &m.agents {
        let d = a.pos - c;
        i1 += d.x * d.x;
        i2 += d.y * d.y;
    }
    AxisMoments::new(i1, i2)
}

pub fn macro_axis_moments_about(d: &MacroDensity, c: Vec2) -> AxisMoments {
    let g = &d.grid;
    let h2 = g.h * g.h;
    let (mut i1, mut i2) = (0.0, 0.0);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let m = d.rho[g.linear(ix, iy)] * h2;
            if m != 0.0 {
                let off = g.cell_center(ix, iy) - c;
                i1 += off.x * off.x * m;
                i2 += off.y * off.y * m;
            }
        }
    }
    AxisMoments::new(i1, i2)
}

pub fn measure_axis_moments_about(p: &Population, c: Vec2) -> AxisMoments {
    let th = p.theta();
    let w = (1.0 - th) * p.lambda;
    let m = micro_axis_moments_about(&p.micro, c);
    let mm = macro_axis_moments_about(&p.density, c);
    AxisMoments::new(th * m.i1 + w * mm.i1, th * m.i2 + w * mm.i2)
}

/// Unnormalized second moment of the atomic part about `c`.
pub fn micro_second_moment_about(m: &MicroState, c: Vec2) -> f64 {
    m.agents.iter().map(|a| (a.pos - c).norm_sq()).sum()
}

/// Unnormalized second moment of the density about `c`.
pub fn macro_second_moment_about(d: &MacroDensity, c: Vec2) -> f64 {
    let g = &d.grid;
    let h2 = g.h * g.h;
    let mut second = 0.0;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let rho = d.rho[g.linear(ix, iy)];
            if rho != 0.0 {
                second += (g.cell_center(ix, iy) - c).norm_sq() * rho * h2;
            }
        }
    }
    second
}

/// Unnormalized second moment of the multiscale measure about `c`.
pub fn measure_second_moment_about(p: &Population, c: Vec2) -> f64 {
    let th = p.theta();
    th * micro_second_moment_about(&p.micro, c)
        + (1.0 - th) * p.lambda * macro_second_moment_about(&p.density, c)
}

/// One diagnostics table row: one population at one step.
///
/// The axis moments come in three flavors, each about its own scale's
/// center of mass: `i*_micro` against the agents, `i*_macro` against the
/// density, `i*_mu` against the blended measure. Empty scales report NaN.
#[derive(Clone, Debug)]
pub struct Row {
    pub step: u64,
    pub time: f64,
    pub dt: f64,
    pub population: String,
    pub mu_mass: f64,
    pub agent_count: usize,
    pub macro_mass: f64,
    pub probe_mu_mass: f64,
    pub com_x: f64,
    pub com_y: f64,
    pub dispersion: f64,
    /// Multiscale mass per unit time leaving the probe region.
    pub door_flux: f64,
    pub outflow_cumulative: f64,
    pub removed_cumulative: usize,
    pub wall_residual: f64,
    pub micro_moments: AxisMoments,
    pub macro_moments: AxisMoments,
    pub mu_moments: AxisMoments,
    pub max_density: f64,
    /// Agents that have left the probe region so far.
    pub crossings_out_cumulative: usize,
    /// Agents that have entered it.
    pub crossings_in_cumulative: usize,
}

pub const CSV_HEADER: &str = "step,time,dt,population,mu_mass,agent_count,macro_mass,\
probe_mu_mass,com_x,com_y,dispersion,door_flux,outflow_cumulative,removed_cumulative,\
wall_residual,i1_micro,i2_micro,ig_micro,i1_macro,i2_macro,ig_macro,i1_mu,i2_mu,ig_mu,\
max_density,crossings_out_cumulative,crossings_in_cumulative";

/// Per-step observer that keeps the probe bookkeeping needed for flux
/// estimates and accumulates the diagnostics table.
pub struct Recorder {
    rows: Vec<Row>,
    prev_probe_macro: Vec<f64>,
    prev_probe_ids: Vec<HashSet<u32>>,
    cum_outflow: Vec<f64>,
    cum_removed: Vec<usize>,
    cum_cross_out: Vec<usize>,
    cum_cross_in: Vec<usize>,
}

fn probe_macro_mass(p: &Population) -> f64 {
    p.probe.map_or(0.0, |r| p.density.mass_in(&r))
}

fn probe_agent_ids(p: &Population) -> HashSet<u32> {
    match p.probe {
        Some(r) => p
            .micro
            .agents
            .iter()
            .filter(|a| r.contains(a.pos))
            .map(|a| a.id)
            .collect(),
        None => HashSet::new(),
    }
}

impl Recorder {
    /// Snapshot the initial state as step rows with zero dt and flux.
    pub fn new(world: &World) -> Recorder {
        let n = world.populations.len();
        let mut rec = Recorder {
            rows: Vec::new(),
            prev_probe_macro: Vec::with_capacity(n),
            prev_probe_ids: Vec::with_capacity(n),
            cum_outflow: vec![0.0; n],
            cum_removed: vec![0; n],
            cum_cross_out: vec![0; n],
            cum_cross_in: vec![0; n],
        };
        for (i, p) in world.populations.iter().enumerate() {
            rec.prev_probe_macro.push(probe_macro_mass(p));
            rec.prev_probe_ids.push(probe_agent_ids(p));
            rec.rows.push(rec.make_row(world, i, 0.0, 0.0, 0.0));
        }
        rec
    }

    fn make_row(
        &self,
        world: &World,
        i: usize,
        dt: f64,
        door_flux: f64,
        wall_residual: f64,
    ) -> Row {
        let p = &world.populations[i];
        let moments = measure_moments(p);
        let (com_x, com_y, dispersion) = match moments {
            Some(m) => (m.center.x, m.center.y, m.dispersion),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let mu_moments = match moments {
            Some(m) => measure_axis_moments_about(p, m.center),
            None => AxisMoments::NAN,
        };
        Row {
            step: world.step_index,
            time: world.time,
            dt,
            population: p.name.clone(),
            mu_mass: p.total_measure_mass(),
            agent_count: p.micro.len(),
            macro_mass: p.density.total_mass(),
            probe_mu_mass: p.probe.map_or(0.0, |r| p.measure_mass_in(&r)),
            com_x,
            com_y,
            dispersion,
            door_flux,
            outflow_cumulative: self.cum_outflow[i],
            removed_cumulative: self.cum_removed[i],
            wall_residual,
            micro_moments: match micro_moments(&p.micro) {
                Some(m) => micro_axis_moments_about(&p.micro, m.center),
                None => AxisMoments::NAN,
            },
            macro_moments: match macro_moments(&p.density) {
                Some(m) => macro_axis_moments_about(&p.density, m.center),
                None => AxisMoments::NAN,
            },
            mu_moments,
            max_density: p.density.max_coefficient(),
            crossings_out_cumulative: self.cum_cross_out[i],
            crossings_in_cumulative: self.cum_cross_in[i],
        }
    }

    pub fn observe(&mut self, world: &World, report: &StepReport) {
        for (i, p) in world.populations.iter().enumerate() {
            self.cum_outflow[i] += report.outflow_mass[i];
            self.cum_removed[i] += report.removed[i].len();

            let flux = if p.probe.is_some() && report.dt > 0.0 {
                let m_post = probe_macro_mass(p);
                let ids_post = probe_agent_ids(p);
                let out = self.prev_probe_ids[i].difference(&ids_post).count();
                let inflow = ids_post.difference(&self.prev_probe_ids[i]).count();
                self.cum_cross_out[i] += out;
                self.cum_cross_in[i] += inflow;
                let th = p.theta();
                let macro_loss = (1.0 - th) * p.lambda * (self.prev_probe_macro[i] - m_post);
                let micro_loss = th * (out as f64 - inflow as f64);
                self.prev_probe_macro[i] = m_post;
                self.prev_probe_ids[i] = ids_post;
                (macro_loss + micro_loss) / report.dt
            } else {
                0.0
            };
            self.rows
                .push(self.make_row(world, i, report.dt, flux, report.wall_residual));
        }
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// `(time, probe mu-mass)` samples for one population, in step order.
    pub fn probe_mass_series(&self, population: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.population == population)
            .map(|r| (r.time, r.probe_mu_mass))
            .collect()
    }

    pub fn mu_mass_series(&self, population: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.population == population)
            .map(|r| (r.time, r.mu_mass))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                sig9(r.time),
                sig9(r.dt),
                r.population,
                sig9(r.mu_mass),
                r.agent_count,
                sig9(r.macro_mass),
                sig9(r.probe_mu_mass),
                sig9(r.com_x),
                sig9(r.com_y),
                sig9(r.dispersion),
                sig9(r.door_flux),
                sig9(r.outflow_cumulative),
                r.removed_cumulative,
                sig9(r.wall_residual),
                sig9(r.micro_moments.i1),
                sig9(r.micro_moments.i2),
                sig9(r.micro_moments.ig),
                sig9(r.macro_moments.i1),
                sig9(r.macro_moments.i2),
                sig9(r.macro_moments.ig),
                sig9(r.mu_moments.i1),
                sig9(r.mu_moments.i2),
                sig9(r.mu_moments.ig),
                sig9(r.max_density),
                r.crossings_out_cumulative,
                r.crossings_in_cumulative,
            )?;
        }
        Ok(())
    }
}

/// Time a unit of mass spends in a region, on average: the trapezoid
/// integral of the mass history divided by the initial mass.
pub fn average_outflow_time(series: &[(f64, f64)]) -> f64 {
    if series.is_empty() || series[0].1 <= 0.0 {
        return 0.0;
    }
    let mut integral = 0.0;
    for w in series.windows(2) {
        integral += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    integral / series[0].1
}

/// L1 distance between two densities. The grids must either match or the
/// second must be a nested refinement of the first, in which case the finer
/// cells are averaged onto the coarse grid before comparing.
pub fn l1_cell_error(a: &MacroDensity, b: &MacroDensity) -> Result<f64> {
    let (ga, gb) = (&a.grid, &b.grid);
    let scale = ga.h.max(gb.h);
    let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * scale;
    if !close(ga.origin.x, gb.origin.x) || !close(ga.origin.y, gb.origin.y) {
        return Err(Error::IncompatibleGrids(
            "density grids have different origins".into(),
        ));
    }
    let ratio = ga.h / gb.h;
    let r = ratio.round() as usize;
    if r == 0 || (ratio - r as f64).abs() > 1e-9 {
        return Err(Error::IncompatibleGrids(format!(
            "cell sizes {} and {} are not nested",
            ga.h, gb.h
        )));
    }
    if gb.nx != ga.nx * r || gb.ny != ga.ny * r {
        return Err(Error::IncompatibleGrids(format!(
            "grid shapes {}x{} and {}x{} do not nest with ratio {r}",
            ga.nx, ga.ny, gb.nx, gb.ny
        )));
    }
    let h2 = ga.h * ga.h;
    let mut err = 0.0;
    for iy in 0..ga.ny {
        for ix in 0..ga.nx {
            let mut fine = 0.0;
            for sy in 0..r {
                for sx in 0..r {
                    fine += b.rho[gb.linear(ix * r + sx, iy * r + sy)];
                }
            }
            let mean = fine / (r * r) as f64;
            err += (a.rho[ga.linear(ix, iy)] - mean).abs() * h2;
        }
    }
    Ok(err)
}
