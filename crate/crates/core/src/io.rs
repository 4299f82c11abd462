//! Snapshot files.
//!
//! Density snapshots are plain text: a `#`-prefixed header giving the grid
//! (nx, ny, h, origin, t), then `ny` rows of `nx` space-separated
//! coefficients, bottom row first. Vector fields use the same layout with
//! two values (vx vy) per cell. Agent snapshots are one line per agent:
//! `id x y role`. All floats are written with 9 significant digits.

use std::io::{self, Write};
use std::path::Path;

use crate::desired::VectorGrid;
use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::measures::{MacroDensity, MicroState, Role};
use crate::vec2::{vec2, Vec2};

/// 9 significant digits, scientific.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

fn write_grid_header<W: Write>(w: &mut W, grid: &Grid, time: f64) -> io::Result<()> {
    writeln!(w, "# nx = {}", grid.nx)?;
    writeln!(w, "# ny = {}", grid.ny)?;
    writeln!(w, "# h = {}", sig9(grid.h))?;
    writeln!(w, "# origin = {} {}", sig9(grid.origin.x), sig9(grid.origin.y))?;
    writeln!(w, "# t = {}", sig9(time))
}

pub fn write_density_snapshot<W: Write>(
    w: &mut W,
    density: &MacroDensity,
    time: f64,
) -> io::Result<()> {
    let grid = &density.grid;
    write_grid_header(w, grid, time)?;
    for iy in 0..grid.ny {
        let mut line = String::new();
        for ix in 0..grid.nx {
            if ix > 0 {
                line.push(' ');
            }
            line.push_str(&sig9(density.rho[iy * grid.nx + ix]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn save_density_snapshot(path: &Path, density: &MacroDensity, time: f64) -> Result<()> {
    let mut buf = Vec::new();
    write_density_snapshot(&mut buf, density, time)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_vector_field<W: Write>(w: &mut W, field: &VectorGrid) -> io::Result<()> {
    let grid = &field.grid;
    write_grid_header(w, grid, 0.0)?;
    for iy in 0..grid.ny {
        let mut line = String::new();
        for ix in 0..grid.nx {
            if ix > 0 {
                line.push(' ');
            }
            let v = field.v[iy * grid.nx + ix];
            line.push_str(&sig9(v.x));
            line.push(' ');
            line.push_str(&sig9(v.y));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn save_vector_field(path: &Path, field: &VectorGrid) -> Result<()> {
    let mut buf = Vec::new();
    write_vector_field(&mut buf, field)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_agent_snapshot<W: Write>(
    w: &mut W,
    micro: &MicroState,
    time: f64,
) -> io::Result<()> {
    writeln!(w, "# t = {}", sig9(time))?;
    for a in &micro.agents {
        let role = match a.role {
            Role::Follower => "follower",
            Role::Leader => "leader",
        };
        writeln!(w, "{} {} {} {role}", a.id, sig9(a.pos.x), sig9(a.pos.y))?;
    }
    Ok(())
}

pub fn save_agent_snapshot(path: &Path, micro: &MicroState, time: f64) -> Result<()> {
    let mut buf = Vec::new();
    write_agent_snapshot(&mut buf, micro, time)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct GridHeader {
    nx: usize,
    ny: usize,
    h: f64,
    origin: Vec2,
    time: f64,
}

/// Reads the `#` header lines; returns the header and the remaining
/// non-empty data lines with their 1-based line numbers.
fn parse_grid_header(text: &str) -> Result<(GridHeader, Vec<(usize, &str)>)> {
    let mut nx = None;
    let mut ny = None;
    let mut h = None;
    let mut origin = None;
    let mut time = 0.0;
    let mut data = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let bad = |msg: String| Error::ScenarioParse { line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let Some((key, value)) = rest.split_once('=') else {
                continue;
            };
            let value = value.trim();
            let parse = |what: &str| -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad {what}: '{value}'")))
            };
            match key.trim() {
                "nx" => nx = Some(parse("nx")? as usize),
                "ny" => ny = Some(parse("ny")? as usize),
                "h" => h = Some(parse("h")?),
                "t" => time = parse("t")?,
                "origin" => {
                    let fields: Vec<&str> = value.split_whitespace().collect();
                    if fields.len() != 2 {
                        return Err(bad(format!("origin needs two numbers, got '{value}'")));
                    }
                    let x = fields[0]
                        .parse()
                        .map_err(|_| bad(format!("bad origin: '{value}'")))?;
                    let y = fields[1]
                        .parse()
                        .map_err(|_| bad(format!("bad origin: '{value}'")))?;
                    origin = Some(vec2(x, y));
                }
                _ => {}
            }
        } else {
            data.push((line, trimmed));
        }
    }
    let missing = |what: &str| Error::ScenarioParse {
        line: 0,
        msg: format!("header is missing '{what}'"),
    };
    let header = GridHeader {
        nx: nx.ok_or_else(|| missing("nx"))?,
        ny: ny.ok_or_else(|| missing("ny"))?,
        h: h.ok_or_else(|| missing("h"))?,
        origin: origin.ok_or_else(|| missing("origin"))?,
        time,
    };
    if !(header.h > 0.0) {
        return Err(Error::ScenarioParse {
            line: 0,
            msg: format!("cell size must be positive, got {}", header.h),
        });
    }
    if header.nx == 0 || header.ny == 0 {
        return Err(Error::ScenarioParse {
            line: 0,
            msg: "grid must have at least one cell".into(),
        });
    }
    Ok((header, data))
}

fn parse_rows(
    data: &[(usize, &str)],
    ny: usize,
    values_per_row: usize,
) -> Result<Vec<Vec<f64>>> {
    if data.len() != ny {
        return Err(Error::ScenarioParse {
            line: 0,
            msg: format!("expected {ny} data rows, found {}", data.len()),
        });
    }
    let mut rows = Vec::with_capacity(ny);
    for (line, text) in data {
        let mut row = Vec::with_capacity(values_per_row);
        for field in text.split_whitespace() {
            row.push(field.parse::<f64>().map_err(|_| Error::ScenarioParse {
                line: *line,
                msg: format!("bad number '{field}'"),
            })?);
        }
        if row.len() != values_per_row {
            return Err(Error::ScenarioParse {
                line: *line,
                msg: format!("expected {values_per_row} values, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_density_snapshot(path: &Path) -> Result<(MacroDensity, f64)> {
    let text = std::fs::read_to_string(path)?;
    let (header, data) = parse_grid_header(&text)?;
    let rows = parse_rows(&data, header.ny, header.nx)?;
    let grid = Grid::new(header.origin, header.h, header.nx, header.ny);
    let mut rho = Vec::with_capacity(header.nx * header.ny);
    for row in rows {
        rho.extend(row);
    }
    Ok((MacroDensity { grid, rho }, header.time))
}

pub fn load_vector_field(path: &Path) -> Result<VectorGrid> {
    let text = std::fs::read_to_string(path)?;
    let (header, data) = parse_grid_header(&text)?;
    let rows = parse_rows(&data, header.ny, 2 * header.nx)?;
    let grid = Grid::new(header.origin, header.h, header.nx, header.ny);
    let mut v = Vec::with_capacity(header.nx * header.ny);
    for row in rows {
        for pair in row.chunks_exact(2) {
            v.push(vec2(pair[0], pair[1]));
        }
    }
    Ok(VectorGrid { grid, v })
}
