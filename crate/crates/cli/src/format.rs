//! On-disk formats: `VPH1` grid snapshots, `VPP1` particle snapshots and CSV.

use std::io::{self, Read, Write};

use vpsaddle::grid::{GridSpec, ScalarField2D, VectorField2D};

pub const GRID_MAGIC: &[u8; 4] = b"VPH1";
pub const PARTICLE_MAGIC: &[u8; 4] = b"VPP1";

/// A grid snapshot: `components * n * n` values, row-major, component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSnapshot {
    pub n: u32,
    pub origin: [f64; 2],
    pub h: f64,
    pub time: f64,
    pub components: u32,
    pub values: Vec<f64>,
}

impl GridSnapshot {
    pub fn scalar(field: &ScalarField2D<f64>, time: f64) -> Self {
        Self {
            n: field.spec.n as u32,
            origin: field.spec.origin,
            h: field.spec.h,
            time,
            components: 1,
            values: field.values.clone(),
        }
    }

    pub fn vector(field: &VectorField2D<f64>, time: f64) -> Self {
        let mut values: Vec<f64> = field.values.iter().map(|v| v[0]).collect();
        values.extend(field.values.iter().map(|v| v[1]));
        Self {
            n: field.spec.n as u32,
            origin: field.spec.origin,
            h: field.spec.h,
            time,
            components: 2,
            values,
        }
    }

    pub fn spec(&self) -> GridSpec<f64> {
        GridSpec::new(self.origin, self.h, self.n as usize)
    }

    /// First component as a scalar field.
    pub fn to_scalar(&self) -> ScalarField2D<f64> {
        let len = (self.n as usize).pow(2);
        ScalarField2D {
            spec: self.spec(),
            values: self.values[..len].to_vec(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&self.n.to_le_bytes())?;
        for x in [self.origin[0], self.origin[1], self.h, self.time] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&self.components.to_le_bytes())?;
        for x in &self.values {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + 8 * self.values.len());
        self.write_to(&mut buf).expect("write to Vec");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "not a VPH1 grid snapshot",
            ));
        }
        let n = read_u32(&mut r)?;
        let origin = [read_f64(&mut r)?, read_f64(&mut r)?];
        let h = read_f64(&mut r)?;
        let time = read_f64(&mut r)?;
        let components = read_u32(&mut r)?;
        if !(components == 1 || components == 2) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "components must be 1 or 2",
            ));
        }
        let len = components as usize * (n as usize).pow(2);
        let values = (0..len)
            .map(|_| read_f64(&mut r))
            .collect::<io::Result<_>>()?;
        Ok(Self {
            n,
            origin,
            h,
            time,
            components,
            values,
        })
    }
}

/// Per-particle state needed to rebuild scattering coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleRecord {
    pub s: [f64; 2],
    pub u: [f64; 2],
    pub w: f64,
    pub f0_val: f64,
}

/// `VPP1`, then little-endian: u64 count, f64 time, then per particle the six
/// f64 `s1 s2 u1 u2 w f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSnapshot {
    pub time: f64,
    pub particles: Vec<ParticleRecord>,
}

impl ParticleSnapshot {
    pub fn of(time: f64, parts: &[vpsaddle::Particle]) -> Self {
        Self {
            time,
            particles: parts
                .iter()
                .map(|p| ParticleRecord {
                    s: p.s,
                    u: p.u,
                    w: p.w,
                    f0_val: p.f0_val,
                })
                .collect(),
        }
    }

    /// Particles with the stored fields set and a fresh tangent.
    pub fn to_particles(&self) -> Vec<vpsaddle::Particle> {
        self.particles
            .iter()
            .map(|r| vpsaddle::Particle::new(r.s, r.u, r.w, r.f0_val, [0.0; 4]))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(PARTICLE_MAGIC)?;
        w.write_all(&(self.particles.len() as u64).to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        for p in &self.particles {
            for x in [p.s[0], p.s[1], p.u[0], p.u[1], p.w, p.f0_val] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARTICLE_MAGIC {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "not a VPP1 particle snapshot",
            ));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let count = u64::from_le_bytes(b) as usize;
        let time = read_f64(&mut r)?;
        let mut particles = Vec::with_capacity(count);
        for _ in 0..count {
            let mut x = [0.0; 6];
            for v in &mut x {
                *v = read_f64(&mut r)?;
            }
            particles.push(ParticleRecord {
                s: [x[0], x[1]],
                u: [x[2], x[3]],
                w: x[4],
                f0_val: x[5],
            });
        }
        Ok(Self { time, particles })
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Fixed 17-significant-digit formatting; empty for missing values.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// CSV table built in memory and written in one piece.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| fmt_num(x)).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| quote(c)).collect();
            out.push_str(&cells.join(","));
            out.push_str("\r\n");
        }
        out
    }

    /// Parse a rendered table; quoted cells may contain commas and quotes.
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = split_row(lines.next()?);
        let rows: Vec<Vec<String>> = lines.map(split_row).collect();
        rows.iter()
            .all(|r| r.len() == header.len())
            .then_some(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column as numbers; unparsable cells become NaN.
    pub fn numbers(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[c].parse().unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

fn split_row(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.trim_end_matches('\r').chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => cells.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    cells.push(cur);
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_num(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn quoted_cells_survive() {
        let mut c = Csv::new(&["a", "b"]);
        c.push(vec!["x,y".into(), "say \"hi\"".into()]);
        assert_eq!(Csv::parse(&c.render()).unwrap(), c);
    }
}
