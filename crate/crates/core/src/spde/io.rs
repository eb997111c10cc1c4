//! Grid export: long-format CSV and a compact binary dump.
//!
//! Binary layout, all little endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `LPSV` |
//! | 1     | format version (1) |
//! | 4 + 4 | `nx`, `ny` as `u32` |
//! | 5 × 8 | `t`, `x_min`, `dx`, `y_min`, `dy` as `f64` |
//! | nx·ny × 8 | values, row-major in `x` |

use std::io::{Read, Write};

use super::grid::DensityGrid;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LPSV";
pub const FORMAT_VERSION: u8 = 1;

/// Writes `t,x,y,u` rows, one per node.
pub fn write_csv<W: Write>(grid: &DensityGrid, mut out: W) -> Result<()> {
    writeln!(out, "t,x,y,u")?;
    for j in 0..grid.nx {
        for k in 0..grid.ny {
            writeln!(out, "{},{},{},{}", grid.t, grid.x(j), grid.y(k), grid.get(j, k))?;
        }
    }
    Ok(())
}

pub fn write_binary<W: Write>(grid: &DensityGrid, mut out: W) -> Result<()> {
    let dims = |n: usize, name: &str| {
        u32::try_from(n).map_err(|_| Error::Input(format!("{name} = {n} does not fit in u32")))
    };
    out.write_all(MAGIC)?;
    out.write_all(&[FORMAT_VERSION])?;
    out.write_all(&dims(grid.nx, "nx")?.to_le_bytes())?;
    out.write_all(&dims(grid.ny, "ny")?.to_le_bytes())?;
    for v in [grid.t, 0.0, grid.dx, grid.y_min, grid.dy] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(grid.values.len() * 8);
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<DensityGrid> {
    let mut head = [0u8; 5];
    input.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Input("not an LPSV grid dump".into()));
    }
    if head[4] != FORMAT_VERSION {
        return Err(Error::Input(format!("unsupported grid dump version {}", head[4])));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let nx = u32::from_le_bytes(u32buf) as usize;
    input.read_exact(&mut u32buf)?;
    let ny = u32::from_le_bytes(u32buf) as usize;
    let mut f = [0.0f64; 5];
    let mut b8 = [0u8; 8];
    for v in f.iter_mut() {
        input.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    if f[1] != 0.0 {
        return Err(Error::Input(format!("grid dump starts at x = {}, expected 0", f[1])));
    }
    let mut raw = vec![0u8; nx * ny * 8];
    input.read_exact(&mut raw)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DensityGrid { t: f[0], dx: f[2], nx, y_min: f[3], dy: f[4], ny, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DensityGrid {
        let mut g = DensityGrid::zeros(0.1, 4, -0.5, 0.25, 5);
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = (i as f64).sin() / 3.0;
        }
        g.t = 0.125;
        g
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let g = sample();
        let mut buf = Vec::new();
        write_binary(&g, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LPSV");
        assert_eq!(buf.len(), 4 + 1 + 8 + 40 + 20 * 8);
        let back = read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        assert!(read_binary(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let g = sample();
        let mut buf = Vec::new();
        write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 21);
        assert_eq!(text.lines().next(), Some("t,x,y,u"));
    }
}
