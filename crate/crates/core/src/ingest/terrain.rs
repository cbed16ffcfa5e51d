//! ESRI ASCII grid (`.asc`) elevation models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TerrainError {
    #[error("terrain line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("terrain grid declares {expected} values but {found} were found")]
    CountMismatch { expected: usize, found: usize },
    #[error("no elevation at ({x}, {y})")]
    NoElevation { x: f64, y: f64 },
}

/// Horizontal reference system of a grid's header coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridCrs {
    /// Easting/northing in the scene frame's UTM zone.
    #[default]
    Utm,
    /// Longitude (x) and latitude (y) in degrees.
    Geographic,
}

/// Regular elevation grid. Row 0 is the northernmost row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainGrid {
    pub ncols: usize,
    pub nrows: usize,
    /// Position of the south-west node (bottom-left cell centre).
    pub x_sw: f64,
    pub y_sw: f64,
    pub cellsize: f64,
    pub nodata: f64,
    pub values: Vec<f64>,
    #[serde(default)]
    pub crs: GridCrs,
}

impl TerrainGrid {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.value(row, col) == self.nodata
    }

    /// Grid-native position of a node.
    pub fn node_position(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_sw + col as f64 * self.cellsize,
            self.y_sw + (self.nrows - 1 - row) as f64 * self.cellsize,
        )
    }

    pub fn all_nodata(&self) -> bool {
        self.values.iter().all(|&v| v == self.nodata)
    }

    /// Bilinear elevation at a grid-native position. See [`sample_elevation`].
    pub fn sample(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        let none = TerrainError::NoElevation { x, y };
        let fc = (x - self.x_sw) / self.cellsize;
        let fr = (y - self.y_sw) / self.cellsize;
        let max_c = (self.ncols - 1) as f64;
        let max_r = (self.nrows - 1) as f64;
        if !(0.0..=max_c).contains(&fc) || !(0.0..=max_r).contains(&fr) {
            return Err(none);
        }
        let c0 = (fc.floor() as usize).min(self.ncols.saturating_sub(2));
        let s0 = (fr.floor() as usize).min(self.nrows.saturating_sub(2));
        let tx = fc - c0 as f64;
        let ty = fr - s0 as f64;
        let c1 = (c0 + 1).min(self.ncols - 1);
        let s1 = (s0 + 1).min(self.nrows - 1);
        // Rows are stored north first; s counts from the south.
        let row = |s: usize| self.nrows - 1 - s;
        let corners = [
            ((1.0 - tx) * (1.0 - ty), row(s0), c0),
            (tx * (1.0 - ty), row(s0), c1),
            ((1.0 - tx) * ty, row(s1), c0),
            (tx * ty, row(s1), c1),
        ];
        let mut z = 0.0;
        for (w, r, c) in corners {
            if w == 0.0 {
                continue;
            }
            if self.is_nodata(r, c) {
                return Err(none);
            }
            z += w * self.value(r, c);
        }
        Ok(z)
    }
}

/// Bilinear interpolation of the four nodes around `(x, y)`, given in the
/// grid's own coordinates. Nodes with zero weight are not consulted, so an
/// exact node query returns the node value even next to NODATA.
pub fn sample_elevation(grid: &TerrainGrid, x: f64, y: f64) -> Result<f64, TerrainError> {
    grid.sample(x, y)
}

/// Parse an ESRI ASCII grid. Header keys are case-insensitive and both the
/// `xllcorner` and `xllcenter` registrations are accepted.
pub fn parse_terrain(text: &str) -> Result<TerrainGrid, TerrainError> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centered = false;
    let mut cellsize = None;
    let mut nodata = -9999.0;
    let mut values = Vec::new();
    let mut in_data = false;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut tokens = line.split_whitespace().peekable();
        let Some(first) = tokens.peek().copied() else { continue };
        let perr = |reason: String| TerrainError::Parse { line: lineno, reason };
        if !in_data && first.parse::<f64>().is_err() {
            let key = first.to_ascii_lowercase();
            tokens.next();
            let raw = tokens
                .next()
                .ok_or_else(|| perr(format!("header {first} has no value")))?;
            let num: f64 = raw
                .parse()
                .map_err(|_| perr(format!("header {first} value {raw:?} is not a number")))?;
            let count = |v: f64| -> Result<usize, TerrainError> {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(perr(format!("{first} must be a positive integer")))
                }
            };
            match key.as_str() {
                "ncols" => ncols = Some(count(num)?),
                "nrows" => nrows = Some(count(num)?),
                "xllcorner" => xll = Some(num),
                "yllcorner" => yll = Some(num),
                "xllcenter" => {
                    xll = Some(num);
                    centered = true;
                }
                "yllcenter" => {
                    yll = Some(num);
                    centered = true;
                }
                "cellsize" => {
                    if !(num > 0.0 && num.is_finite()) {
                        return Err(perr("cellsize must be positive".into()));
                    }
                    cellsize = Some(num);
                }
                "nodata_value" => nodata = num,
                _ => return Err(perr(format!("unknown header key {first}"))),
            }
            continue;
        }
        in_data = true;
        for tok in tokens {
            let v: f64 = tok
                .parse()
                .map_err(|_| perr(format!("value {tok:?} is not a number")))?;
            if !v.is_finite() {
                return Err(perr(format!("value {tok:?} is not finite")));
            }
            values.push(v);
        }
    }

    let missing = |what: &str| TerrainError::Parse {
        line: 0,
        reason: format!("missing header {what}"),
    };
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let yll = yll.ok_or_else(|| missing("yllcorner"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let expected = ncols
        .checked_mul(nrows)
        .ok_or_else(|| missing("sane ncols/nrows"))?;
    if values.len() != expected {
        return Err(TerrainError::CountMismatch {
            expected,
            found: values.len(),
        });
    }
    let half = if centered { 0.0 } else { cellsize / 2.0 };
    Ok(TerrainGrid {
        ncols,
        nrows,
        x_sw: xll + half,
        y_sw: yll + half,
        cellsize,
        nodata,
        values,
        crs: GridCrs::Utm,
    })
}
