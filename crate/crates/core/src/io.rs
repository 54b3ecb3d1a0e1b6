//! Field serialization.
//!
//! Binary container, little endian:
//!
//! ```text
//! magic   b"HDFIELD1"
//! u32     n, nr, l, fd_order, rank, symmetric (0/1)
//! f64     r0, rmax, tail_threshold, weight
//! f64[]   data, component-major as in memory (n^rank * nr * na values)
//! ```
//!
//! The grid is rebuilt from the header on read.

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::field::{Field, Kind};
use crate::grid::{Grid, GridOptions, GridSpec};

const MAGIC: &[u8; 8] = b"HDFIELD1";

pub fn write_field<W: Write>(f: &Field, mut w: W) -> Result<()> {
    let spec = f.grid().spec();
    w.write_all(MAGIC)?;
    for x in [
        spec.n,
        spec.nr,
        spec.l,
        spec.options.fd_order,
        f.rank(),
        (f.kind() == Kind::SymTensor) as usize,
    ] {
        w.write_u32::<LittleEndian>(x as u32)?;
    }
    for x in [spec.r0, spec.rmax, spec.options.tail_threshold, f.weight()] {
        w.write_f64::<LittleEndian>(x)?;
    }
    for &x in f.data() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

/// Reads a field, reusing `grid` when its parameters match the header.
pub fn read_field<R: Read>(mut r: R, grid: Option<&Arc<Grid>>) -> Result<Field> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a field container".into()));
    }
    let mut u = [0usize; 6];
    for x in u.iter_mut() {
        *x = r.read_u32::<LittleEndian>()? as usize;
    }
    let mut d = [0f64; 4];
    for x in d.iter_mut() {
        *x = r.read_f64::<LittleEndian>()?;
    }
    let [n, nr, l, fd_order, rank, sym] = u;
    let [r0, rmax, tail_threshold, weight] = d;
    let spec = GridSpec {
        n,
        r0,
        rmax,
        nr,
        l,
        options: GridOptions {
            fd_order,
            tail_threshold,
        },
    };
    let grid = match grid {
        Some(g) if g.spec() == &spec => g.clone(),
        _ => Grid::new(spec)?,
    };
    let kind = if sym == 1 {
        Kind::SymTensor
    } else {
        Kind::of_rank(rank)
    };
    let len = kind.ncomp(n) * grid.npts();
    let mut data = vec![0.0; len];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Field::from_data(&grid, kind, weight, data)
}

/// CSV with one row per radial node: r, sup and L² norm of |f|_b on the shell.
pub fn write_shell_norms<W: Write>(f: &Field, w: W) -> Result<()> {
    let grid = f.grid();
    let norm = f.norm_b();
    let aw = grid.sphere().weights();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["r", "sup", "l2"]).map_err(csv_err)?;
    for k in 0..grid.nr() {
        let sh = norm.shell(0, k);
        let sup = sh.iter().cloned().fold(0.0, f64::max);
        let l2 = sh
            .iter()
            .zip(aw)
            .map(|(x, a)| a * x * x)
            .sum::<f64>()
            .sqrt();
        out.serialize((grid.r()[k], sup, l2)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
