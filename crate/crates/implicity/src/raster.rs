//! Georeferenced 2D grids (DSMs, ortho-images, masks, error maps).
//!
//! Storage is row-major, north-up: row 0 is the northernmost row, matching
//! the ESRI ASCII grid layout. Cell values are anchored at cell centers.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

pub const DEFAULT_NODATA: f64 = -9999.0;

/// A georeferenced raster: origin at the lower-left corner, square cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    nodata: f64,
    /// (n_rows, n_cols), row 0 = north.
    values: Array2<f64>,
}

impl RasterGrid {
    pub fn new(
        origin_xy: (f64, f64),
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        fill: f64,
        nodata: f64,
    ) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::InvalidGrid(format!("cell_size {cell_size} must be > 0")));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid must have at least one cell, got {n_rows}x{n_cols}"
            )));
        }
        Ok(RasterGrid {
            origin_x: origin_xy.0,
            origin_y: origin_xy.1,
            cell_size,
            nodata,
            values: Array2::from_elem((n_rows, n_cols), fill),
        })
    }

    pub fn filled_nodata(
        origin_xy: (f64, f64),
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self> {
        Self::new(origin_xy, cell_size, n_rows, n_cols, DEFAULT_NODATA, DEFAULT_NODATA)
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_rows(), self.n_cols())
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || v.is_nan()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[(row, col)] = v;
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    /// World extent (x_min, y_min, x_max, y_max) of the covered area.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.cell_size * self.n_cols() as f64,
            self.origin_y + self.cell_size * self.n_rows() as f64,
        )
    }

    /// World coordinates of the center of cell (row, col).
    pub fn cell_to_world(&self, row: usize, col: usize) -> (f64, f64) {
        let x = self.origin_x + (col as f64 + 0.5) * self.cell_size;
        let y = self.origin_y + ((self.n_rows() - 1 - row) as f64 + 0.5) * self.cell_size;
        (x, y)
    }

    /// Cell containing the world point, or None if outside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.cell_size).floor();
        let fy = ((y - self.origin_y) / self.cell_size).floor();
        if col < 0.0 || fy < 0.0 {
            return None;
        }
        let (col, fy) = (col as usize, fy as usize);
        if col >= self.n_cols() || fy >= self.n_rows() {
            return None;
        }
        Some((self.n_rows() - 1 - fy, col))
    }

    /// Value at the cell containing (x, y), or None outside the grid.
    pub fn value_at(&self, x: f64, y: f64) -> Option<f64> {
        self.world_to_cell(x, y).map(|(r, c)| self.get(r, c))
    }

    /// True where the two grids have identical geometry (origin, size, shape).
    pub fn same_geometry(&self, other: &RasterGrid) -> bool {
        self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
            && self.cell_size == other.cell_size
            && self.values.dim() == other.values.dim()
    }

    pub fn geometry_summary(&self) -> String {
        format!(
            "{}x{} @ {} m, origin ({}, {})",
            self.n_rows(),
            self.n_cols(),
            self.cell_size,
            self.origin_x,
            self.origin_y
        )
    }

    // ---- ESRI ASCII grid ----

    pub fn write_ascii<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::new();
        let _ = writeln!(header, "ncols {}", self.n_cols());
        let _ = writeln!(header, "nrows {}", self.n_rows());
        let _ = writeln!(header, "xllcorner {}", self.origin_x);
        let _ = writeln!(header, "yllcorner {}", self.origin_y);
        let _ = writeln!(header, "cellsize {}", self.cell_size);
        let _ = writeln!(header, "NODATA_value {}", self.nodata);
        w.write_all(header.as_bytes())?;
        let mut line = String::new();
        for row in self.values.rows() {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{v}");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn write_ascii_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_ascii(BufWriter::new(f))
    }

    pub fn read_ascii<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut header = std::collections::HashMap::new();
        let mut first_data_line: Option<String> = None;
        for _ in 0..6 {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse("ascii grid", "truncated header"))??;
            let mut it = line.split_whitespace();
            let key = it
                .next()
                .ok_or_else(|| Error::parse("ascii grid", "empty header line"))?
                .to_ascii_lowercase();
            let val = it
                .next()
                .ok_or_else(|| Error::parse("ascii grid", format!("missing value for {key}")))?;
            if !["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"]
                .contains(&key.as_str())
            {
                // Headers may omit NODATA_value; treat this line as data.
                first_data_line = Some(line);
                break;
            }
            let v: f64 = val
                .parse()
                .map_err(|e| Error::parse("ascii grid", format!("bad {key}: {e}")))?;
            header.insert(key, v);
        }
        let need = |k: &str| -> Result<f64> {
            header
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse("ascii grid", format!("missing header key {k}")))
        };
        let n_cols = need("ncols")? as usize;
        let n_rows = need("nrows")? as usize;
        let nodata = header.get("nodata_value").copied().unwrap_or(DEFAULT_NODATA);
        let mut grid = RasterGrid::new(
            (need("xllcorner")?, need("yllcorner")?),
            need("cellsize")?,
            n_rows,
            n_cols,
            0.0,
            nodata,
        )?;
        let mut flat = Vec::with_capacity(n_rows * n_cols);
        let push_line = |line: &str, flat: &mut Vec<f64>| -> Result<()> {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| Error::parse("ascii grid", format!("bad value {tok}: {e}")))?;
                flat.push(v);
            }
            Ok(())
        };
        if let Some(line) = first_data_line {
            push_line(&line, &mut flat)?;
        }
        for line in lines {
            push_line(&line?, &mut flat)?;
        }
        if flat.len() != n_rows * n_cols {
            return Err(Error::parse(
                "ascii grid",
                format!("expected {} values, got {}", n_rows * n_cols, flat.len()),
            ));
        }
        grid.values = Array2::from_shape_vec((n_rows, n_cols), flat)
            .map_err(|e| Error::parse("ascii grid", e.to_string()))?;
        Ok(grid)
    }

    pub fn read_ascii_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_ascii(f)
    }

    // ---- flat binary format ----
    //
    // 48-byte textual header of six 8-character fields (ncols, nrows,
    // xllcorner, yllcorner, cellsize, nodata), then n_rows*n_cols
    // little-endian f32 values, row-major, north-up.

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::new();
        for v in [
            self.n_cols() as f64,
            self.n_rows() as f64,
            self.origin_x,
            self.origin_y,
            self.cell_size,
            self.nodata,
        ] {
            let field = format!("{v}");
            if field.len() > 8 {
                return Err(Error::InvalidGrid(format!(
                    "header value {v} does not fit an 8-char binary header field"
                )));
            }
            let _ = write!(header, "{field:>8}");
        }
        debug_assert_eq!(header.len(), 48);
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in self.values.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn write_binary_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(BufWriter::new(f))
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 48];
        r.read_exact(&mut header)?;
        let text = std::str::from_utf8(&header)
            .map_err(|_| Error::parse("binary grid", "header is not UTF-8"))?;
        let mut fields = [0f64; 6];
        for (i, f) in fields.iter_mut().enumerate() {
            let s = text[i * 8..(i + 1) * 8].trim();
            *f = s
                .parse()
                .map_err(|e| Error::parse("binary grid", format!("bad header field {s}: {e}")))?;
        }
        let (n_cols, n_rows) = (fields[0] as usize, fields[1] as usize);
        let mut grid = RasterGrid::new(
            (fields[2], fields[3]),
            fields[4],
            n_rows,
            n_cols,
            0.0,
            fields[5],
        )?;
        let mut buf = vec![0u8; n_rows * n_cols * 4];
        r.read_exact(&mut buf)?;
        for (slot, chunk) in grid.values.iter_mut().zip(buf.chunks_exact(4)) {
            *slot = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        }
        Ok(grid)
    }

    pub fn read_binary_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(BufReader::new(f))
    }

    /// Export as 8-bit binary PGM, mapping [lo, hi] to [0, 255].
    pub fn write_pgm<W: Write>(&self, mut w: W, lo: f64, hi: f64) -> Result<()> {
        let header = format!("P5\n{} {}\n255\n", self.n_cols(), self.n_rows());
        w.write_all(header.as_bytes())?;
        let span = (hi - lo).max(1e-12);
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn write_pgm_file(&self, path: &Path, lo: f64, hi: f64) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(BufWriter::new(f), lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_grid() -> RasterGrid {
        let mut g = RasterGrid::new((10.0, 20.0), 0.25, 3, 4, 0.0, -9999.0).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                g.set(r, c, (r * 4 + c) as f64 * 0.5 - 1.0);
            }
        }
        g
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(RasterGrid::new((0.0, 0.0), 0.0, 2, 2, 0.0, -9999.0).is_err());
        assert!(RasterGrid::new((0.0, 0.0), 1.0, 0, 2, 0.0, -9999.0).is_err());
    }

    #[test]
    fn cell_world_roundtrip_exact() {
        let g = demo_grid();
        for r in 0..g.n_rows() {
            for c in 0..g.n_cols() {
                let (x, y) = g.cell_to_world(r, c);
                assert_eq!(g.world_to_cell(x, y), Some((r, c)));
            }
        }
        assert_eq!(g.world_to_cell(9.9, 20.1), None);
        assert_eq!(g.world_to_cell(10.1, 20.8), None);
    }

    #[test]
    fn north_up_orientation() {
        let g = demo_grid();
        // Row 0 is the northernmost row.
        let (_, y_top) = g.cell_to_world(0, 0);
        let (_, y_bot) = g.cell_to_world(2, 0);
        assert!(y_top > y_bot);
        assert_eq!(y_bot, 20.0 + 0.125);
    }

    #[test]
    fn ascii_roundtrip() {
        let g = demo_grid();
        let mut buf = Vec::new();
        g.write_ascii(&mut buf).unwrap();
        let back = RasterGrid::read_ascii(&buf[..]).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn binary_roundtrip_f32() {
        let g = demo_grid();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..48].len(), &48);
        let back = RasterGrid::read_binary(&buf[..]).unwrap();
        assert!(g.same_geometry(&back));
        for (a, b) in g.values().iter().zip(back.values().iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn pgm_header_and_size() {
        let g = demo_grid();
        let mut buf = Vec::new();
        g.write_pgm(&mut buf, -1.0, 4.5).unwrap();
        assert!(buf.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(buf.len(), 11 + 12);
    }
}
