//! Walkable-domain geometry: the background grid, axis-aligned obstacles,
//! door segments, and the admissible-velocity treatment near walls.
//!
//! Cells are half-open rectangles `[x, x+h) x [y, y+h)` so that every point
//! of the domain belongs to exactly one cell and translated cell images
//! partition cleanly into overlap areas.

use crate::vec2::{vec2, Vec2};

/// Axis-aligned rectangle, `min` inclusive, `max` exclusive where it matters
/// (area overlap of touching rectangles is zero).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Rect {
        debug_assert!(min.x <= max.x && min.y <= max.y);
        Rect { min, max }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
        Rect::new(vec2(x0.min(x1), y0.min(y1)), vec2(x0.max(x1), y0.max(y1)))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vec2 {
        vec2(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }

    /// Closed-rectangle membership. Boundary sets have measure zero, so the
    /// inclusive convention only shows up in agent counting, where it is the
    /// forgiving choice for agents sliding along a wall.
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Open-interior membership.
    pub fn contains_interior(&self, p: Vec2) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    /// Whether `other` lies entirely inside (or flush with) this rectangle.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.min.x >= self.min.x
            && other.max.x <= self.max.x
            && other.min.y >= self.min.y
            && other.max.y <= self.max.y
    }

    pub fn translated(&self, d: Vec2) -> Rect {
        Rect {
            min: self.min + d,
            max: self.max + d,
        }
    }

    /// Whether the interiors of the two rectangles intersect.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.min.x < other.max.x
            && other.min.x < self.max.x
            && self.min.y < other.max.y
            && other.min.y < self.max.y
    }
}

/// Area of the intersection of two axis-aligned rectangles. Touching
/// rectangles overlap with area zero.
pub fn overlap_area(a: &Rect, b: &Rect) -> f64 {
    let w = a.max.x.min(b.max.x) - a.min.x.max(b.min.x);
    let h = a.max.y.min(b.max.y) - a.min.y.max(b.min.y);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

/// Uniform square-cell grid. Cell `(ix, iy)` covers
/// `[origin + ix*h, origin + (ix+1)*h)` in `x` and likewise in `y`;
/// storage order is row-major with `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub origin: Vec2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(origin: Vec2, h: f64, nx: usize, ny: usize) -> Grid {
        assert!(h > 0.0 && nx > 0 && ny > 0, "degenerate grid");
        Grid { origin, h, nx, ny }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn linear(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    /// Multi-index of the cell containing `p`, or `None` outside the grid.
    pub fn cell_index(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.h).floor();
        let fy = ((p.y - self.origin.y) / self.h).floor();
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        if ix < self.nx && iy < self.ny {
            Some((ix, iy))
        } else {
            None
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        vec2(
            self.origin.x + (ix as f64 + 0.5) * self.h,
            self.origin.y + (iy as f64 + 0.5) * self.h,
        )
    }

    // Both corners are computed as origin + k*h so that neighbouring cells
    // share edges bitwise and the outermost edges coincide exactly with
    // `bounding_rect`.
    pub fn cell_rect(&self, ix: usize, iy: usize) -> Rect {
        Rect {
            min: vec2(
                self.origin.x + ix as f64 * self.h,
                self.origin.y + iy as f64 * self.h,
            ),
            max: vec2(
                self.origin.x + (ix + 1) as f64 * self.h,
                self.origin.y + (iy + 1) as f64 * self.h,
            ),
        }
    }

    pub fn bounding_rect(&self) -> Rect {
        Rect {
            min: self.origin,
            max: vec2(
                self.origin.x + self.nx as f64 * self.h,
                self.origin.y + self.ny as f64 * self.h,
            ),
        }
    }

    /// Inclusive index window of all cells whose rectangle intersects
    /// `[lo, hi]`, clamped to the grid.
    pub fn index_window(&self, lo: Vec2, hi: Vec2) -> (usize, usize, usize, usize) {
        let i0 = (((lo.x - self.origin.x) / self.h).floor().max(0.0)) as usize;
        let j0 = (((lo.y - self.origin.y) / self.h).floor().max(0.0)) as usize;
        let i1 = (((hi.x - self.origin.x) / self.h).floor().max(0.0) as usize).min(self.nx - 1);
        let j1 = (((hi.y - self.origin.y) / self.h).floor().max(0.0) as usize).min(self.ny - 1);
        (i0.min(self.nx - 1), i1, j0.min(self.ny - 1), j1)
    }
}

/// Default width of the band around walls in which velocities are projected.
pub fn default_wall_tolerance(h: f64) -> f64 {
    h / 10.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obstacle {
    pub rect: Rect,
}

/// An opening, either in the outer boundary (mass crossing it leaves the
/// simulation) or in the interior (a gap between obstacles, used as a flux
/// reference). Segments are axis-aligned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoorSegment {
    pub a: Vec2,
    pub b: Vec2,
    /// Unit vector pointing to the side considered "out".
    pub outward: Vec2,
}

impl DoorSegment {
    pub fn is_vertical(&self) -> bool {
        self.a.x == self.b.x
    }

    pub fn center(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    /// Endpoints pulled toward the middle by `margin` on each side, never
    /// collapsing below 20% of the original length.
    pub fn shrunk(&self, margin: f64) -> (Vec2, Vec2) {
        let dir = (self.b - self.a).normalized();
        let len = self.a.distance(self.b);
        let m = margin.min(0.4 * len);
        (self.a + dir * m, self.b - dir * m)
    }

    /// Closest point of the (shrunk) segment to `p`.
    pub fn closest_point(&self, p: Vec2, margin: f64) -> Vec2 {
        let (a, b) = self.shrunk(margin);
        let ab = b - a;
        let len_sq = ab.norm_sq();
        if len_sq == 0.0 {
            return a;
        }
        let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
        a + ab * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// Static geometry of one scenario: the rectangular domain, interior
/// obstacles and the doors cut into the outer boundary. Velocities near any
/// solid face lose their inward normal component, so crowds slide along
/// walls instead of entering them.
#[derive(Clone, Debug)]
pub struct Environment {
    pub domain: Rect,
    pub obstacles: Vec<Obstacle>,
    pub doors: Vec<DoorSegment>,
    pub eps_wall: f64,
    pub sealed: bool,
    /// Obstacles plus the solid parts of the outer boundary, expanded into
    /// rectangles for the swept-displacement clamp.
    solids: Vec<Rect>,
}

impl Environment {
    pub fn new(
        domain: Rect,
        obstacles: Vec<Obstacle>,
        doors: Vec<DoorSegment>,
        eps_wall: f64,
        sealed: bool,
    ) -> Environment {
        let solids = build_solids(&domain, &obstacles, &doors, eps_wall, sealed);
        Environment {
            domain,
            obstacles,
            doors,
            eps_wall,
            sealed,
            solids,
        }
    }

    pub fn solids(&self) -> &[Rect] {
        &self.solids
    }

    /// Doors lying on the outer boundary that currently permit outflow.
    fn open_boundary_doors(&self) -> impl Iterator<Item = &DoorSegment> {
        let sealed = self.sealed;
        let domain = self.domain;
        self.doors
            .iter()
            .filter(move |d| !sealed && door_boundary_edge(&domain, d).is_some())
    }

    /// Remove inward normal components of `v` for every wall face within
    /// `eps_wall` of `x`. At concave corners both constraints apply.
    pub fn project_admissible(&self, v: Vec2, x: Vec2) -> Vec2 {
        let eps = self.eps_wall;
        let mut v = v;

        for ob in &self.obstacles {
            let r = &ob.rect;
            // The band is eps wide in the normal direction only, and a face
            // ends strictly at its corners: a point level with the top face
            // may slide along it past the side face, and widening either
            // extent would freeze such motion. Penetration is impossible
            // regardless; the displacement clamp is the hard guarantee.
            let in_y = x.y > r.min.y && x.y < r.max.y;
            let in_x = x.x > r.min.x && x.x < r.max.x;
            // Left face: outward normal (-1, 0); inadmissible means v.x > 0.
            if in_y && (x.x - r.min.x).abs() <= eps && v.x > 0.0 {
                v.x = 0.0;
            }
            if in_y && (x.x - r.max.x).abs() <= eps && v.x < 0.0 {
                v.x = 0.0;
            }
            if in_x && (x.y - r.min.y).abs() <= eps && v.y > 0.0 {
                v.y = 0.0;
            }
            if in_x && (x.y - r.max.y).abs() <= eps && v.y < 0.0 {
                v.y = 0.0;
            }
        }

        let d = &self.domain;
        if (x.x - d.min.x).abs() <= eps && v.x < 0.0 && !self.through_door(x, Axis::X) {
            v.x = 0.0;
        }
        if (x.x - d.max.x).abs() <= eps && v.x > 0.0 && !self.through_door(x, Axis::X) {
            v.x = 0.0;
        }
        if (x.y - d.min.y).abs() <= eps && v.y < 0.0 && !self.through_door(x, Axis::Y) {
            v.y = 0.0;
        }
        if (x.y - d.max.y).abs() <= eps && v.y > 0.0 && !self.through_door(x, Axis::Y) {
            v.y = 0.0;
        }
        v
    }

    /// Whether `x` sits in the span of an open boundary door on an edge
    /// perpendicular to `axis`.
    fn through_door(&self, x: Vec2, axis: Axis) -> bool {
        for door in self.open_boundary_doors() {
            match (axis, door.is_vertical()) {
                (Axis::X, true) => {
                    let (lo, hi) = (door.a.y.min(door.b.y), door.a.y.max(door.b.y));
                    if (x.x - door.a.x).abs() <= self.eps_wall && x.y >= lo && x.y <= hi {
                        return true;
                    }
                }
                (Axis::Y, false) => {
                    let (lo, hi) = (door.a.x.min(door.b.x), door.a.x.max(door.b.x));
                    if (x.y - door.a.y).abs() <= self.eps_wall && x.x >= lo && x.x <= hi {
                        return true;
                    }
                }
                _ => {}
            }
        }
        false
    }

    /// Largest admissible displacement of the rectangle `r` along `d`:
    /// on first contact with a solid the normal component is cut to the
    /// exact gap and the tangential remainder is kept, so the moved
    /// rectangle never overlaps a solid.
    pub fn clamp_rect_displacement(&self, r: &Rect, d: Vec2) -> Vec2 {
        let mut d = d;
        for _ in 0..3 {
            if d == Vec2::ZERO {
                break;
            }
            let mut best: Option<(f64, Axis, usize)> = None;
            for (si, s) in self.solids.iter().enumerate() {
                if let Some((t, axis)) = swept_entry(r, d, s) {
                    let better = match best {
                        None => true,
                        Some((bt, _, _)) => t < bt,
                    };
                    if better {
                        best = Some((t, axis, si));
                    }
                }
            }
            match best {
                None => break,
                Some((_, axis, si)) => {
                    let s = &self.solids[si];
                    match axis {
                        Axis::X => {
                            d.x = if d.x > 0.0 {
                                pull_flush(r.max.x, s.min.x, true)
                            } else if d.x < 0.0 {
                                pull_flush(r.min.x, s.max.x, false)
                            } else {
                                break;
                            };
                        }
                        Axis::Y => {
                            d.y = if d.y > 0.0 {
                                pull_flush(r.max.y, s.min.y, true)
                            } else if d.y < 0.0 {
                                pull_flush(r.min.y, s.max.y, false)
                            } else {
                                break;
                            };
                        }
                    }
                }
            }
        }
        for s in &self.solids {
            if r.translated(d).intersects(s) {
                return Vec2::ZERO;
            }
        }
        d
    }

    /// Point version of [`clamp_rect_displacement`].
    pub fn clamp_point_displacement(&self, p: Vec2, d: Vec2) -> Vec2 {
        let r = Rect { min: p, max: p };
        self.clamp_rect_displacement(&r, d)
    }
}

/// Entry time of the moving rectangle into solid `s` along displacement `d`,
/// with the impact axis. `None` when the sweep misses within `t` in `[0, 1)`.
fn swept_entry(r: &Rect, d: Vec2, s: &Rect) -> Option<(f64, Axis)> {
    let (tx0, tx1) = axis_times(r.min.x, r.max.x, d.x, s.min.x, s.max.x);
    let (ty0, ty1) = axis_times(r.min.y, r.max.y, d.y, s.min.y, s.max.y);
    let t_enter = tx0.max(ty0);
    let t_exit = tx1.min(ty1);
    if t_enter < t_exit && t_enter < 1.0 && t_exit > 0.0 {
        let t = t_enter.max(0.0);
        if tx0 >= ty0 {
            Some((t, Axis::X))
        } else {
            Some((t, Axis::Y))
        }
    } else {
        None
    }
}

/// Per-axis entry/exit times for a swept interval.
fn axis_times(lo: f64, hi: f64, d: f64, slo: f64, shi: f64) -> (f64, f64) {
    if d > 0.0 {
        ((slo - hi) / d, (shi - lo) / d)
    } else if d < 0.0 {
        ((shi - lo) / d, (slo - hi) / d)
    } else if hi > slo && lo < shi {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        (f64::INFINITY, f64::NEG_INFINITY)
    }
}

/// Displacement that lands `edge` on `face` without crossing it in the
/// direction of motion (`positive` means the edge moves toward larger
/// coordinates). One rounded subtraction can overshoot by an ulp, so the
/// trial target retreats until the landing passes; this also pulls an edge
/// already past the face back to flush.
fn pull_flush(edge: f64, face: f64, positive: bool) -> f64 {
    let mut trial = face;
    for _ in 0..64 {
        let g = trial - edge;
        let landed = edge + g;
        let ok = if positive { landed <= face } else { landed >= face };
        if ok {
            return g;
        }
        trial = if positive {
            trial.next_down()
        } else {
            trial.next_up()
        };
    }
    0.0
}

/// Which outer edge a door lies on, if any.
fn door_boundary_edge(domain: &Rect, door: &DoorSegment) -> Option<Axis> {
    let tol = 1e-9 * (domain.width() + domain.height());
    if door.is_vertical() {
        if (door.a.x - domain.min.x).abs() <= tol || (door.a.x - domain.max.x).abs() <= tol {
            return Some(Axis::X);
        }
    } else if (door.a.y - domain.min.y).abs() <= tol || (door.a.y - domain.max.y).abs() <= tol {
        return Some(Axis::Y);
    }
    None
}

/// Obstacles plus the outer boundary turned into solid rectangles. Each edge
/// becomes a slab outside the domain, carved by the spans of its open doors;
/// slabs extend past the corners so nothing escapes diagonally.
fn build_solids(
    domain: &Rect,
    obstacles: &[Obstacle],
    doors: &[DoorSegment],
    eps_wall: f64,
    sealed: bool,
) -> Vec<Rect> {
    let mut solids: Vec<Rect> = obstacles.iter().map(|o| o.rect).collect();
    let t = (50.0 * eps_wall).max(1e-3 * (domain.width() + domain.height()));

    let mut edge = |vertical: bool, at: f64, lo: f64, hi: f64, outside_positive: bool| {
        let mut cuts: Vec<(f64, f64)> = Vec::new();
        if !sealed {
            for d in doors {
                if door_boundary_edge(domain, d).is_some() && d.is_vertical() == vertical {
                    let edge_coord = if vertical { d.a.x } else { d.a.y };
                    if (edge_coord - at).abs() <= 1e-9 * (domain.width() + domain.height()) {
                        let (a, b) = if vertical {
                            (d.a.y.min(d.b.y), d.a.y.max(d.b.y))
                        } else {
                            (d.a.x.min(d.b.x), d.a.x.max(d.b.x))
                        };
                        cuts.push((a, b));
                    }
                }
            }
        }
        cuts.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        let (s0, s1) = if outside_positive {
            (at, at + t)
        } else {
            (at - t, at)
        };
        let mut start = lo - t;
        let mut spans = Vec::new();
        for (a, b) in cuts {
            if a > start {
                spans.push((start, a));
            }
            start = start.max(b);
        }
        if start < hi + t {
            spans.push((start, hi + t));
        }
        for (a, b) in spans {
            let rect = if vertical {
                Rect::from_corners(s0, a, s1, b)
            } else {
                Rect::from_corners(a, s0, b, s1)
            };
            if rect.area() > 0.0 {
                solids.push(rect);
            }
        }
    };

    edge(true, domain.min.x, domain.min.y, domain.max.y, false);
    edge(true, domain.max.x, domain.min.y, domain.max.y, true);
    edge(false, domain.min.y, domain.min.x, domain.max.x, false);
    edge(false, domain.max.y, domain.min.x, domain.max.x, true);
    solids
}
