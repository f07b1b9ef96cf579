//! Binary and CSV layouts for grid and half-space functions.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size      field
//! 0       4         magic: b"VHGF" (grid function) or b"VHHS" (half-space)
//! 4       4         u32 format version (= 1)
//! 8       4         u32 dim (1 or 2)
//! 12      4         u32 points per axis N
//! 16      8*dim     f64 lower bound per axis
//! ..      8*dim     f64 upper bound per axis
//! ..      (VHHS only) f64 t_min, f64 t_max, u32 levels
//! ..      8         u64 value count
//! ..      8*count   f64 values, row-major nodes (axis 0 slowest);
//!                   half-space values are level-major
//! ```
//!
//! CSV layout: comment header lines starting with `#` carrying
//! `kind`, `dim`, `n`, `lower`, `upper` (and `t_min`, `t_max`, `levels`),
//! followed by a column header and one row per sample:
//! `x[,y],value` or `x[,y],t,value`. Floats use Rust's shortest
//! round-trip formatting, so CSV round trips are exact as well.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GridBox, GridFunction, HalfSpaceFunction, ScaleLadder};
use crate::error::{Error, Result};

const MAGIC_GRID: &[u8; 4] = b"VHGF";
const MAGIC_HALF: &[u8; 4] = b"VHHS";
const VERSION: u32 = 1;

fn write_header(w: &mut impl Write, magic: &[u8; 4], grid: &GridBox) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.points_per_axis() as u32).to_le_bytes())?;
    for a in 0..grid.dim() {
        w.write_all(&grid.lower(a).to_le_bytes())?;
    }
    for a in 0..grid.dim() {
        w.write_all(&grid.upper(a).to_le_bytes())?;
    }
    Ok(())
}

fn write_values(w: &mut impl Write, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<GridBox> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = read_u32(r)? as usize;
    if dim != 1 && dim != 2 {
        return Err(Error::Format(format!("bad dimension {dim}")));
    }
    let n = read_u32(r)? as usize;
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    for v in lower.iter_mut() {
        *v = read_f64(r)?;
    }
    for v in upper.iter_mut() {
        *v = read_f64(r)?;
    }
    GridBox::new(dim, &lower, &upper, n).map_err(|e| Error::Format(e.to_string()))
}

fn read_values(r: &mut impl Read, expected: usize) -> Result<Vec<f64>> {
    let count = read_u64(r)? as usize;
    if count != expected {
        return Err(Error::Format(format!(
            "value count {count}, expected {expected}"
        )));
    }
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_grid_function(w: &mut impl Write, f: &GridFunction) -> Result<()> {
    write_header(w, MAGIC_GRID, f.grid())?;
    write_values(w, f.values())
}

pub fn read_grid_function(r: &mut impl Read) -> Result<GridFunction> {
    let grid = read_header(r, MAGIC_GRID)?;
    let values = read_values(r, grid.node_count())?;
    GridFunction::new(grid, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_half_space(w: &mut impl Write, f: &HalfSpaceFunction) -> Result<()> {
    write_header(w, MAGIC_HALF, f.grid())?;
    let l = f.ladder();
    w.write_all(&l.t_min().to_le_bytes())?;
    w.write_all(&l.t_max().to_le_bytes())?;
    w.write_all(&(l.levels() as u32).to_le_bytes())?;
    write_values(w, f.values())
}

pub fn read_half_space(r: &mut impl Read) -> Result<HalfSpaceFunction> {
    let grid = read_header(r, MAGIC_HALF)?;
    let t_min = read_f64(r)?;
    let t_max = read_f64(r)?;
    let levels = read_u32(r)? as usize;
    let ladder =
        ScaleLadder::new(t_min, t_max, levels).map_err(|e| Error::Format(e.to_string()))?;
    let values = read_values(r, grid.node_count() * levels)?;
    HalfSpaceFunction::new(grid, ladder, values).map_err(|e| Error::Format(e.to_string()))
}

/// File kinds recognised by [`sniff`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    GridBinary,
    HalfSpaceBinary,
    GridCsv,
    HalfSpaceCsv,
}

/// Detects the layout of a file from its first bytes.
pub fn sniff(path: &Path) -> Result<FileKind> {
    let mut head = [0u8; 64];
    let mut file = std::fs::File::open(path)?;
    let n = file.read(&mut head)?;
    let head = &head[..n];
    if head.starts_with(MAGIC_GRID) {
        return Ok(FileKind::GridBinary);
    }
    if head.starts_with(MAGIC_HALF) {
        return Ok(FileKind::HalfSpaceBinary);
    }
    let text = String::from_utf8_lossy(head);
    if text.contains("kind=half-space") {
        Ok(FileKind::HalfSpaceCsv)
    } else if text.contains("kind=grid-function") {
        Ok(FileKind::GridCsv)
    } else {
        Err(Error::Format(format!(
            "{}: unrecognised file layout",
            path.display()
        )))
    }
}

pub fn save_grid_function(path: &Path, f: &GridFunction) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    if is_csv(path) {
        write_grid_csv(&mut w, f)?;
    } else {
        write_grid_function(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_grid_function(path: &Path) -> Result<GridFunction> {
    match sniff(path)? {
        FileKind::GridBinary => read_grid_function(&mut BufReader::new(std::fs::File::open(path)?)),
        FileKind::GridCsv => read_grid_csv(&mut BufReader::new(std::fs::File::open(path)?)),
        other => Err(Error::Format(format!(
            "{}: expected a grid function, found {other:?}",
            path.display()
        ))),
    }
}

pub fn save_half_space(path: &Path, f: &HalfSpaceFunction) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    if is_csv(path) {
        write_half_space_csv(&mut w, f)?;
    } else {
        write_half_space(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_half_space(path: &Path) -> Result<HalfSpaceFunction> {
    match sniff(path)? {
        FileKind::HalfSpaceBinary => {
            read_half_space(&mut BufReader::new(std::fs::File::open(path)?))
        }
        FileKind::HalfSpaceCsv => {
            read_half_space_csv(&mut BufReader::new(std::fs::File::open(path)?))
        }
        other => Err(Error::Format(format!(
            "{}: expected a half-space function, found {other:?}",
            path.display()
        ))),
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn join(v: impl Iterator<Item = f64>) -> String {
    v.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn csv_box_header(w: &mut impl Write, kind: &str, grid: &GridBox) -> Result<()> {
    writeln!(w, "# kind={kind}")?;
    writeln!(w, "# dim={}", grid.dim())?;
    writeln!(w, "# n={}", grid.points_per_axis())?;
    writeln!(
        w,
        "# lower={}",
        join((0..grid.dim()).map(|a| grid.lower(a)))
    )?;
    writeln!(
        w,
        "# upper={}",
        join((0..grid.dim()).map(|a| grid.upper(a)))
    )?;
    Ok(())
}

fn coord_columns(grid: &GridBox) -> &'static str {
    if grid.dim() == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn coord_fields(grid: &GridBox, idx: usize) -> String {
    let x = grid.coord(idx);
    if grid.dim() == 1 {
        format!("{}", x[0])
    } else {
        format!("{},{}", x[0], x[1])
    }
}

pub fn write_grid_csv(w: &mut impl Write, f: &GridFunction) -> Result<()> {
    let g = f.grid();
    csv_box_header(w, "grid-function", g)?;
    writeln!(w, "{},value", coord_columns(g))?;
    for (idx, v) in f.values().iter().enumerate() {
        writeln!(w, "{},{}", coord_fields(g, idx), v)?;
    }
    Ok(())
}

pub fn write_half_space_csv(w: &mut impl Write, f: &HalfSpaceFunction) -> Result<()> {
    let g = f.grid();
    csv_box_header(w, "half-space", g)?;
    let l = f.ladder();
    writeln!(w, "# t_min={}", l.t_min())?;
    writeln!(w, "# t_max={}", l.t_max())?;
    writeln!(w, "# levels={}", l.levels())?;
    writeln!(w, "{},t,value", coord_columns(g))?;
    for k in 0..l.levels() {
        let t = l.scale(k);
        for (idx, v) in f.level(k).iter().enumerate() {
            writeln!(w, "{},{},{}", coord_fields(g, idx), t, v)?;
        }
    }
    Ok(())
}

struct CsvContents {
    meta: std::collections::BTreeMap<String, String>,
    last_column: Vec<f64>,
}

fn parse_csv(r: &mut impl BufRead) -> Result<CsvContents> {
    let mut meta = std::collections::BTreeMap::new();
    let mut last_column = Vec::new();
    let mut saw_columns = false;
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !saw_columns {
            saw_columns = true;
            continue;
        }
        let v = line
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::Format(format!("bad csv row: {line}")))?;
        last_column.push(
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad value {v:?}: {e}")))?,
        );
    }
    Ok(CsvContents { meta, last_column })
}

fn meta_get<'a>(c: &'a CsvContents, key: &str) -> Result<&'a str> {
    c.meta
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("missing header field {key}")))
}

fn meta_parse<T: std::str::FromStr>(c: &CsvContents, key: &str) -> Result<T> {
    meta_get(c, key)?
        .parse()
        .map_err(|_| Error::Format(format!("bad header field {key}")))
}

fn meta_list(c: &CsvContents, key: &str) -> Result<Vec<f64>> {
    meta_get(c, key)?
        .split(';')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad header field {key}")))
        })
        .collect()
}

fn csv_grid(c: &CsvContents) -> Result<GridBox> {
    let dim: usize = meta_parse(c, "dim")?;
    let n: usize = meta_parse(c, "n")?;
    GridBox::new(dim, &meta_list(c, "lower")?, &meta_list(c, "upper")?, n)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn read_grid_csv(r: &mut impl BufRead) -> Result<GridFunction> {
    let c = parse_csv(r)?;
    if meta_get(&c, "kind")? != "grid-function" {
        return Err(Error::Format("csv is not a grid function".into()));
    }
    let grid = csv_grid(&c)?;
    GridFunction::new(grid, c.last_column).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_half_space_csv(r: &mut impl BufRead) -> Result<HalfSpaceFunction> {
    let c = parse_csv(r)?;
    if meta_get(&c, "kind")? != "half-space" {
        return Err(Error::Format("csv is not a half-space function".into()));
    }
    let grid = csv_grid(&c)?;
    let ladder = ScaleLadder::new(
        meta_parse(&c, "t_min")?,
        meta_parse(&c, "t_max")?,
        meta_parse(&c, "levels")?,
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    HalfSpaceFunction::new(grid, ladder, c.last_column).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_strategy() -> impl Strategy<Value = GridBox> {
        (1usize..=2, 8usize..20, -5.0f64..0.0, 0.1f64..5.0).prop_map(|(dim, n, lo, w)| {
            GridBox::new(dim, &vec![lo; dim], &vec![lo + w; dim], n).unwrap()
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(grid in grid_strategy(), seed in any::<u64>()) {
            let mut s = seed;
            let values: Vec<f64> = (0..grid.node_count()).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits((s >> 12) | 0x3ff0_0000_0000_0000) - 1.5
            }).collect();
            let f = GridFunction::new(grid, values).unwrap();
            let mut buf = Vec::new();
            write_grid_function(&mut buf, &f).unwrap();
            let back = read_grid_function(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.grid(), f.grid());
            for (a, b) in back.values().iter().zip(f.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn csv_round_trip_is_exact(grid in grid_strategy(), scale in 1e-300f64..1e300) {
            let f = GridFunction::from_fn(&grid, |x| scale * (x[0] * 7.3).sin()).unwrap();
            let mut buf = Vec::new();
            write_grid_csv(&mut buf, &f).unwrap();
            let back = read_grid_csv(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn half_space_round_trips() {
        let g = GridBox::square(-1.0, 1.0, 8).unwrap();
        let l = ScaleLadder::new(0.1, 1.0, 8).unwrap();
        let f = HalfSpaceFunction::from_fn(&g, &l, |x, t| x[0] * t + x[1]).unwrap();
        let mut buf = Vec::new();
        write_half_space(&mut buf, &f).unwrap();
        assert_eq!(read_half_space(&mut buf.as_slice()).unwrap(), f);
        let mut csv = Vec::new();
        write_half_space_csv(&mut csv, &f).unwrap();
        assert_eq!(read_half_space_csv(&mut csv.as_slice()).unwrap(), f);
    }

    #[test]
    fn corrupted_input_is_rejected() {
        let g = GridBox::line(0.0, 1.0, 8).unwrap();
        let f = GridFunction::zeros(&g);
        let mut buf = Vec::new();
        write_grid_function(&mut buf, &f).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_grid_function(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
        let mut short = Vec::new();
        write_grid_function(&mut short, &f).unwrap();
        short.truncate(short.len() - 3);
        assert!(read_grid_function(&mut short.as_slice()).is_err());
    }
}
