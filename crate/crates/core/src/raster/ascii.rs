//! ESRI ASCII grid reader and writer.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{CellId, GridGeometry, RasterGrid, DEFAULT_NODATA};
use crate::error::{Error, Result};

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text, Some(path))
}

pub fn write_ascii_grid(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_ascii_grid(grid)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses an ESRI ASCII grid. Header keys are case-insensitive; values are one
/// grid row per line, northern row first.
pub fn parse_ascii_grid(text: &str, path: Option<&Path>) -> Result<RasterGrid> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.map(PathBuf::from),
        line,
        message,
    };

    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centered = (false, false);
    let mut cellsize = None;
    let mut nodata = None;

    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(idx, line)) = lines.peek() {
        let mut tokens = line.split_whitespace();
        let Some(key) = tokens.next() else {
            lines.next();
            continue;
        };
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            break;
        }
        let lineno = idx + 1;
        let raw = tokens
            .next()
            .ok_or_else(|| perr(lineno, format!("header key `{key}` has no value")))?;
        if tokens.next().is_some() {
            return Err(perr(lineno, format!("header key `{key}` has more than one value")));
        }
        let num: f64 = raw
            .parse()
            .map_err(|_| perr(lineno, format!("header value `{raw}` for `{key}` is not numeric")))?;
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(perr(lineno, format!("`{key}` must be a positive integer, got `{raw}`")))
            }
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(count(num)?),
            "nrows" => nrows = Some(count(num)?),
            "xllcorner" => xll = Some(num),
            "yllcorner" => yll = Some(num),
            "xllcenter" => {
                xll = Some(num);
                centered.0 = true;
            }
            "yllcenter" => {
                yll = Some(num);
                centered.1 = true;
            }
            "cellsize" => cellsize = Some(num),
            "nodata_value" => nodata = Some(num),
            other => return Err(perr(lineno, format!("unknown header key `{other}`"))),
        }
        lines.next();
    }

    let header_end = lines.peek().map(|&(i, _)| i + 1).unwrap_or(text.lines().count() + 1);
    let missing = |k: &str| perr(header_end, format!("missing header key `{k}`"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = yll.ok_or_else(|| missing("yllcorner"))?;
    if centered.0 {
        xll -= cellsize / 2.0;
    }
    if centered.1 {
        yll -= cellsize / 2.0;
    }
    let nodata = nodata.unwrap_or(DEFAULT_NODATA);
    let geometry = GridGeometry::new(nrows, ncols, xll, yll, cellsize).map_err(|e| perr(header_end, e.to_string()))?;

    let mut values = vec![f64::NAN; geometry.len()];
    let mut file_row = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if file_row >= nrows {
            return Err(perr(lineno, format!("more than {nrows} data rows")));
        }
        let row = nrows - 1 - file_row;
        let mut count = 0usize;
        for token in line.split_whitespace() {
            if count >= ncols {
                count += 1;
                continue;
            }
            let v: f64 = token.parse().map_err(|_| {
                perr(
                    lineno,
                    format!("non-numeric token `{token}` in data row {}", file_row + 1),
                )
            })?;
            let cell = row * ncols + count;
            values[cell] = if v == nodata || !v.is_finite() { f64::NAN } else { v };
            count += 1;
        }
        if count != ncols {
            return Err(perr(
                lineno,
                format!("data row {} has {count} values, expected ncols = {ncols}", file_row + 1),
            ));
        }
        file_row += 1;
    }
    if file_row != nrows {
        return Err(perr(
            text.lines().count() + 1,
            format!("found {file_row} data rows, expected nrows = {nrows}"),
        ));
    }
    Ok(RasterGrid::new(geometry, values)?.with_nodata_value(nodata))
}

/// Canonical ESRI ASCII text for `grid`. Values use the shortest decimal
/// form that round-trips exactly.
pub fn format_ascii_grid(grid: &RasterGrid) -> Result<String> {
    let g = grid.geometry();
    let nodata = grid.nodata_value();
    let mut out = String::new();
    let _ = writeln!(out, "ncols        {}", g.ncols);
    let _ = writeln!(out, "nrows        {}", g.nrows);
    let _ = writeln!(out, "xllcorner    {}", g.x_origin);
    let _ = writeln!(out, "yllcorner    {}", g.y_origin);
    let _ = writeln!(out, "cellsize     {}", g.cell_size);
    let _ = writeln!(out, "NODATA_value {}", nodata);
    for row in (0..g.nrows).rev() {
        for col in 0..g.ncols {
            if col > 0 {
                out.push(' ');
            }
            let cell = CellId(row * g.ncols + col);
            match grid.value(cell) {
                Some(v) if v == nodata => {
                    return Err(Error::invalid(format!(
                        "cell ({row}, {col}) holds the no-data sentinel {nodata} as a valid value"
                    )))
                }
                Some(v) => {
                    let _ = write!(out, "{v}");
                }
                None => {
                    let _ = write!(out, "{nodata}");
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        let g = GridGeometry::new(1, 1, 0.0, 0.0, 1.0).unwrap();
        let grid = RasterGrid::new(g, vec![7.0]).unwrap();
        let text = format_ascii_grid(&grid).unwrap();
        assert!(text.ends_with("NODATA_value -9999\n7\n"));
        assert_eq!(parse_ascii_grid(&text, None).unwrap(), grid);
    }

    #[test]
    fn top_row_first() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n";
        let grid = parse_ascii_grid(text, None).unwrap();
        // (0.5, 0.5) is the south-west cell: the first value of the last line.
        assert_eq!(grid.value(grid.cell_index(0.5, 0.5).unwrap()), Some(3.0));
        assert_eq!(grid.value(grid.cell_index(1.5, 1.5).unwrap()), Some(2.0));
    }

    #[test]
    fn nodata_and_center_header() {
        let text = "NCOLS 2\nNROWS 1\nXLLCENTER 0.5\nYLLCENTER 0.5\nCELLSIZE 1\nNODATA_VALUE -1\n-1 2.5\n";
        let grid = parse_ascii_grid(text, None).unwrap();
        assert_eq!(grid.geometry().x_origin, 0.0);
        assert_eq!(grid.value(CellId(0)), None);
        assert_eq!(grid.value(CellId(1)), Some(2.5));
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n4 5\n";
        let err = parse_ascii_grid(text, None).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 7);
                assert!(message.contains("data row 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_tokens_and_headers() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 x\n";
        assert!(matches!(
            parse_ascii_grid(text, None),
            Err(Error::Parse { line: 6, .. })
        ));
        let text = "ncols 2\nnrows 1\nxllcorner 0\ncellsize 1\n1 2\n";
        let err = parse_ascii_grid(text, None).unwrap_err().to_string();
        assert!(err.contains("yllcorner"), "{err}");
        let text = "ncols 2.5\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n";
        assert!(matches!(
            parse_ascii_grid(text, None),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n";
        assert!(parse_ascii_grid(text, None).is_err());
    }

    #[test]
    fn canonical_text_is_idempotent() {
        let text = "ncols        3\nnrows        2\nxllcorner    -1.5\nyllcorner    2\ncellsize     0.25\nNODATA_value -9999\n0.1 -9999 3\n0.0000001 2.5 -4\n";
        let grid = parse_ascii_grid(text, None).unwrap();
        assert_eq!(format_ascii_grid(&grid).unwrap(), text);
    }
}
