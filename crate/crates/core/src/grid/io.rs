//! Plain-text grid files.
//!
//! ```text
//! darcy-ms-grid 1
//! nx 4
//! ny 4
//! lx 1.0
//! ly 1.0
//! seed none
//! bc left 1.0 right 0.0 bottom none top none
//! circles 1
//! 0.5 0.5 0.4
//! cells 16
//! 0 0 1 1.0
//! ...
//! ```
//!
//! Cell records are `i j active kappa`, row-major. Floats use the shortest
//! representation that parses back to the same bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BoundarySpec, Circle, FineGrid, GridParams, PerforationSpec, Side};
use crate::error::{Error, Result};

const MAGIC: &str = "darcy-ms-grid";
const VERSION: u32 = 1;

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:?}"),
        None => "none".to_string(),
    }
}

pub fn write_grid<W: Write>(grid: &FineGrid, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC} {VERSION}")?;
    writeln!(out, "nx {}", grid.nx)?;
    writeln!(out, "ny {}", grid.ny)?;
    writeln!(out, "lx {:?}", grid.lx)?;
    writeln!(out, "ly {:?}", grid.ly)?;
    match grid.perforations.seed {
        Some(s) => writeln!(out, "seed {s}")?,
        None => writeln!(out, "seed none")?,
    }
    write!(out, "bc")?;
    for side in Side::ALL {
        write!(out, " {} {}", side.name(), opt(grid.bc.value(side)))?;
    }
    writeln!(out)?;
    writeln!(out, "circles {}", grid.perforations.circles.len())?;
    for c in &grid.perforations.circles {
        writeln!(out, "{:?} {:?} {:?}", c.cx, c.cy, c.r)?;
    }
    writeln!(out, "cells {}", grid.nx * grid.ny)?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let idx = j * grid.nx + i;
            writeln!(out, "{i} {j} {} {:?}", u8::from(grid.active[idx]), grid.kappa_field[idx])?;
        }
    }
    Ok(())
}

pub fn save_grid(grid: &FineGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(grid, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line += 1;
            match self.inner.next() {
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        return Ok(l);
                    }
                }
                None => return Err(self.err("unexpected end of file")),
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, msg: msg.into() }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let l = self.next_line()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(self.err(format!("expected '{key} <value>', found '{l}'"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse '{s}'")))
    }

    fn parse_opt(&self, s: &str) -> Result<Option<f64>> {
        if s == "none" {
            Ok(None)
        } else {
            self.parse(s).map(Some)
        }
    }
}

pub fn read_grid<R: Read>(input: R) -> Result<FineGrid> {
    let mut lines = Lines { inner: BufReader::new(input).lines(), line: 0 };
    let header = lines.next_line()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(lines.err("not a grid file"));
    }
    let version: u32 = lines.parse(parts.next().unwrap_or(""))?;
    if version != VERSION {
        return Err(lines.err(format!("unsupported grid file version {version}")));
    }
    let nx: usize = { let v = lines.keyed("nx")?; lines.parse(&v)? };
    let ny: usize = { let v = lines.keyed("ny")?; lines.parse(&v)? };
    let lx: f64 = { let v = lines.keyed("lx")?; lines.parse(&v)? };
    let ly: f64 = { let v = lines.keyed("ly")?; lines.parse(&v)? };
    let seed = {
        let v = lines.keyed("seed")?;
        if v == "none" { None } else { Some(lines.parse::<u64>(&v)?) }
    };
    let bc = {
        let v = lines.keyed("bc")?;
        let tok: Vec<&str> = v.split_whitespace().collect();
        if tok.len() != 8 {
            return Err(lines.err("bc line needs four side/value pairs"));
        }
        let mut bc = BoundarySpec::neumann();
        for pair in tok.chunks(2) {
            let value = lines.parse_opt(pair[1])?;
            match pair[0] {
                "left" => bc.left = value,
                "right" => bc.right = value,
                "bottom" => bc.bottom = value,
                "top" => bc.top = value,
                other => return Err(lines.err(format!("unknown side '{other}'"))),
            }
        }
        bc
    };
    let ncirc: usize = { let v = lines.keyed("circles")?; lines.parse(&v)? };
    let mut circles = Vec::with_capacity(ncirc);
    for _ in 0..ncirc {
        let l = lines.next_line()?;
        let v: Vec<&str> = l.split_whitespace().collect();
        if v.len() != 3 {
            return Err(lines.err("circle record needs 'cx cy r'"));
        }
        circles.push(Circle::new(lines.parse(v[0])?, lines.parse(v[1])?, lines.parse(v[2])?));
    }
    let ncells: usize = { let v = lines.keyed("cells")?; lines.parse(&v)? };
    if ncells != nx * ny {
        return Err(lines.err(format!("expected {} cell records, header says {ncells}", nx * ny)));
    }
    let mut active = vec![false; ncells];
    let mut kappa = vec![0.0; ncells];
    let mut seen = vec![false; ncells];
    for _ in 0..ncells {
        let l = lines.next_line()?;
        let v: Vec<&str> = l.split_whitespace().collect();
        if v.len() != 4 {
            return Err(lines.err("cell record needs 'i j active kappa'"));
        }
        let i: usize = lines.parse(v[0])?;
        let j: usize = lines.parse(v[1])?;
        if i >= nx || j >= ny {
            return Err(lines.err(format!("cell ({i}, {j}) outside the grid")));
        }
        let idx = j * nx + i;
        if seen[idx] {
            return Err(lines.err(format!("duplicate cell ({i}, {j})")));
        }
        seen[idx] = true;
        active[idx] = match v[2] {
            "1" => true,
            "0" => false,
            other => return Err(lines.err(format!("active flag must be 0 or 1, got '{other}'"))),
        };
        kappa[idx] = lines.parse(v[3])?;
    }
    let perf = PerforationSpec { circles, seed };
    FineGrid::from_mask(GridParams { nx, ny, lx, ly }, active, kappa, perf, bc)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<FineGrid> {
    read_grid(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, random_perforations, PermeabilitySpec};

    fn sample() -> FineGrid {
        let perf = random_perforations(5, 6, 0.05, 0.15, 1.0, 0.7);
        let kappa = PermeabilitySpec::LogNormal { mean_log: 0.3, std_log: 1.2, seed: 11 };
        build_grid(GridParams::new(13, 9, 1.0, 0.7), &perf, &kappa, BoundarySpec::default()).unwrap()
    }

    fn to_string(g: &FineGrid) -> String {
        let mut buf = Vec::new();
        write_grid(g, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let g = sample();
        let text = to_string(&g);
        let back = read_grid(text.as_bytes()).unwrap();
        assert_eq!(back.active, g.active);
        assert_eq!(back.kappa_field, g.kappa_field);
        assert_eq!(back.perforations, g.perforations);
        assert_eq!(back.bc, g.bc);
        assert_eq!(back.interior_edges, g.interior_edges);
        assert_eq!(back.dirichlet_edges, g.dirichlet_edges);
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn identical_inputs_serialize_identically() {
        assert_eq!(to_string(&sample()), to_string(&sample()));
    }

    #[test]
    fn malformed_files_report_the_line() {
        let text = to_string(&sample());
        let broken = text.replacen("nx 13", "nx thirteen", 1);
        match read_grid(broken.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_grid("hello".as_bytes()).is_err());
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(read_grid(truncated.as_bytes()).is_err());
    }
}
