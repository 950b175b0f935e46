//! File formats: grid-function CSV, the VSGF binary layout, and JSON helpers.
//!
//! VSGF layout (little-endian): the 4 bytes `VSGF`, `n1: u32`, `n2: u32`,
//! then `(n1+1)(n2+1)` `f64` node values in row-major order (rows of
//! constant `x₂`, see [`crate::grid`]).

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{Grid, GridError, GridFunction};

pub const VSGF_MAGIC: &[u8; 4] = b"VSGF";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("bad VSGF data: {0}")]
    Vsgf(String),
    #[error("bad table: {0}")]
    Table(String),
}

pub fn write_vsgf<W: Write>(u: &GridFunction, mut w: W) -> Result<(), IoError> {
    let n1 = u32::try_from(u.grid.n1).map_err(|_| IoError::Vsgf("n1 exceeds u32".into()))?;
    let n2 = u32::try_from(u.grid.n2).map_err(|_| IoError::Vsgf("n2 exceeds u32".into()))?;
    w.write_all(VSGF_MAGIC)?;
    w.write_all(&n1.to_le_bytes())?;
    w.write_all(&n2.to_le_bytes())?;
    for v in &u.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_vsgf<R: Read>(mut r: R) -> Result<GridFunction, IoError> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    if &header[..4] != VSGF_MAGIC {
        return Err(IoError::Vsgf("missing magic".into()));
    }
    let n1 = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let n2 = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let grid = Grid::new(n1, n2)?;
    let mut buf = vec![0u8; 8 * grid.node_count()];
    r.read_exact(&mut buf)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(IoError::Vsgf(format!("{} trailing bytes", rest.len())));
    }
    let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(GridFunction::from_values(grid, values)?)
}

pub fn save_vsgf(u: &GridFunction, path: &Path) -> Result<(), IoError> {
    let f = std::fs::File::create(path)?;
    write_vsgf(u, std::io::BufWriter::new(f))
}

pub fn load_vsgf(path: &Path) -> Result<GridFunction, IoError> {
    let f = std::fs::File::open(path)?;
    read_vsgf(std::io::BufReader::new(f))
}

/// `x1,x2,value` rows, one per node, in storage order.
pub fn write_grid_csv<W: Write>(u: &GridFunction, w: W) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x1", "x2", "value"])?;
    let g = u.grid;
    for j in 0..g.nodes2() {
        for i in 0..g.nodes1() {
            out.serialize((g.x1(i), g.x2(j), u.at(i, j)))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads `x1,x2,value` rows and returns them unsorted.
pub fn read_point_csv<R: Read>(r: R) -> Result<Vec<(f64, f64, f64)>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: (f64, f64, f64) = rec?;
        rows.push(row);
    }
    Ok(rows)
}

/// Rebuilds a full grid function from `x1,x2,value` rows covering every node.
pub fn read_grid_csv<R: Read>(grid: Grid, r: R) -> Result<GridFunction, IoError> {
    let rows = read_point_csv(r)?;
    let mut u = GridFunction::zeros(grid);
    let mut seen = vec![false; grid.node_count()];
    for (x1, x2, v) in rows {
        let k = locate_node(grid, x1, x2)?;
        u.values[k] = v;
        seen[k] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(IoError::Table(format!("node {k} missing")));
    }
    Ok(u)
}

/// Storage index of the node at `(x1, x2)`; coordinates must hit a node to `1e-9`.
pub fn locate_node(grid: Grid, x1: f64, x2: f64) -> Result<usize, IoError> {
    let fi = (x1 + 1.0) / grid.h1();
    let fj = (x2 + 1.0) / grid.h2();
    let (i, j) = (fi.round(), fj.round());
    if (fi - i).abs() * grid.h1() > 1e-9 || (fj - j).abs() * grid.h2() > 1e-9 {
        return Err(IoError::Table(format!("({x1}, {x2}) is not a grid node")));
    }
    if i < 0.0 || j < 0.0 || i as usize > grid.n1 || j as usize > grid.n2 {
        return Err(IoError::Table(format!("({x1}, {x2}) is outside the domain")));
    }
    Ok(grid.node(i as usize, j as usize))
}

/// Serde adapter for `f64` fields that may be non-finite: finite values are
/// plain numbers, `±∞`/NaN become the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod json_f64 {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    other => Err(E::custom(format!("unexpected string {other:?}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vsgf_header_layout() {
        let g = Grid::new(2, 3).unwrap();
        let u = GridFunction::from_fn(g, |x, y| x + 10.0 * y);
        let mut bytes = Vec::new();
        write_vsgf(&u, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"VSGF");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 8 * 12);
        // second stored value is node (1, 0)
        let v1 = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        assert_eq!(v1, u.at(1, 0));
        let back = read_vsgf(bytes.as_slice()).unwrap();
        assert_eq!(back.values, u.values);
    }

    #[test]
    fn vsgf_rejects_garbage() {
        assert!(read_vsgf(&b"XXXX\0\0\0\0\0\0\0\0"[..]).is_err());
        let g = Grid::square(2).unwrap();
        let mut bytes = Vec::new();
        write_vsgf(&GridFunction::zeros(g), &mut bytes).unwrap();
        bytes.pop();
        assert!(read_vsgf(bytes.as_slice()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid::new(4, 3).unwrap();
        let u = GridFunction::from_fn(g, |x, y| x * x - y);
        let mut bytes = Vec::new();
        write_grid_csv(&u, &mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("x1,x2,value\n"));
        let back = read_grid_csv(g, bytes.as_slice()).unwrap();
        assert_eq!(back.values, u.values);
    }

    #[test]
    fn infinite_json_marker() {
        #[derive(serde::Serialize, serde::Deserialize)]
        struct S {
            #[serde(with = "json_f64")]
            x: f64,
        }
        let s = serde_json::to_string(&S { x: f64::INFINITY }).unwrap();
        assert_eq!(s, r#"{"x":"inf"}"#);
        let back: S = serde_json::from_str(&s).unwrap();
        assert!(back.x.is_infinite());
        let back: S = serde_json::from_str(r#"{"x":2}"#).unwrap();
        assert_eq!(back.x, 2.0);
    }
}
