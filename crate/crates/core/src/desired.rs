//! Desired velocity fields.
//!
//! The desired velocity encodes where a population wants to go before any
//! interaction with other mass is taken into account. It doubles as the
//! walking direction for the sight cone, with a stored fallback heading for
//! places where the field vanishes.

use crate::geometry::Grid;
use crate::vec2::{vec2, Vec2};

/// A vector per grid cell, sampled by nearest cell center with clamping at
/// the edges.
#[derive(Clone, Debug)]
pub struct VectorGrid {
    pub grid: Grid,
    pub v: Vec<Vec2>,
}

impl VectorGrid {
    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> Vec2) -> VectorGrid {
        let mut v = Vec::with_capacity(grid.n_cells());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                v.push(f(grid.cell_center(ix, iy)));
            }
        }
        VectorGrid { grid, v }
    }

    pub fn sample(&self, x: Vec2) -> Vec2 {
        let ix = ((x.x - self.grid.origin.x) / self.grid.h).floor();
        let iy = ((x.y - self.grid.origin.y) / self.grid.h).floor();
        let ix = (ix.max(0.0) as usize).min(self.grid.nx - 1);
        let iy = (iy.max(0.0) as usize).min(self.grid.ny - 1);
        self.v[self.grid.linear(ix, iy)]
    }
}

#[derive(Clone, Debug)]
pub enum DesiredKind {
    /// No preferred motion; the population only reacts to others.
    Zero,
    Constant(Vec2),
    /// Walk toward a fixed point at the given speed; zero at the point.
    TowardTarget { target: Vec2, speed: f64 },
    Sampled(VectorGrid),
}

#[derive(Clone, Debug)]
pub struct DesiredVelocity {
    pub kind: DesiredKind,
    /// Walking direction used for the sight cone wherever the field is zero.
    pub fallback_heading: Vec2,
}

impl DesiredVelocity {
    pub fn zero(heading: Vec2) -> DesiredVelocity {
        DesiredVelocity {
            kind: DesiredKind::Zero,
            fallback_heading: heading.normalized(),
        }
    }

    pub fn constant(v: Vec2) -> DesiredVelocity {
        let heading = if v.norm_sq() > 0.0 { v.normalized() } else { vec2(1.0, 0.0) };
        DesiredVelocity {
            kind: DesiredKind::Constant(v),
            fallback_heading: heading,
        }
    }

    pub fn eval(&self, x: Vec2) -> Vec2 {
        match &self.kind {
            DesiredKind::Zero => Vec2::ZERO,
            DesiredKind::Constant(v) => *v,
            DesiredKind::TowardTarget { target, speed } => {
                let d = *target - x;
                if d.norm_sq() == 0.0 {
                    Vec2::ZERO
                } else {
                    d.normalized() * *speed
                }
            }
            DesiredKind::Sampled(field) => field.sample(x),
        }
    }

    /// Unit walking direction at `x`.
    pub fn heading(&self, x: Vec2) -> Vec2 {
        let v = self.eval(x);
        if v.norm_sq() > 1e-24 {
            v.normalized()
        } else {
            self.fallback_heading
        }
    }
}
