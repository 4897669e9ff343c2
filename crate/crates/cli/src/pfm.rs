//! Grayscale portable float maps.
//!
//! ```text
//! Pf\n
//! <width> <height>\n
//! <scale>\n          negative: little-endian, positive: big-endian
//! <raw f32 data>     rows stored bottom to top
//! ```

use std::path::Path;

use densefuse_core::{Grid, Real};

use crate::error::{read_file, write_file, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Serializes `grid` with scale magnitude 1.
pub fn encode(grid: &Grid<f32>, endian: Endian) -> Vec<u8> {
    let (w, h) = grid.dims();
    let scale = match endian {
        Endian::Little => "-1.0",
        Endian::Big => "1.0",
    };
    let mut out = format!("Pf\n{w} {h}\n{scale}\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for &v in grid.row(y) {
            let bytes = match endian {
                Endian::Little => v.to_le_bytes(),
                Endian::Big => v.to_be_bytes(),
            };
            out.extend_from_slice(&bytes);
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace(&mut self) {
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next whitespace-delimited header token and its starting offset.
    fn token(&mut self, what: &str) -> Result<(&'a str, usize), CliError> {
        self.skip_whitespace();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(CliError::parse(
                self.file,
                start,
                format!("expected {what}"),
            ));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map(|s| (s, start))
            .map_err(|_| CliError::parse(self.file, start, format!("expected {what}")))
    }
}

/// Parses a grayscale float map. Errors carry the byte offset of the
/// offending header token or of the truncated data.
pub fn decode(data: &[u8], file: &Path) -> Result<Grid<f32>, CliError> {
    let mut c = Cursor { data, pos: 0, file };
    let (magic, at) = c.token("magic")?;
    match magic {
        "Pf" => {}
        "PF" => {
            return Err(CliError::parse(
                file,
                at,
                "colour float maps are not supported",
            ))
        }
        _ => {
            return Err(CliError::parse(
                file,
                at,
                format!("bad magic `{magic}`, expected `Pf`"),
            ))
        }
    }
    let mut dim = |what: &str| -> Result<usize, CliError> {
        let (tok, at) = c.token(what)?;
        tok.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| CliError::parse(file, at, format!("bad {what} `{tok}`")))
    };
    let w = dim("width")?;
    let h = dim("height")?;
    let (tok, at) = c.token("scale")?;
    let scale: f32 = tok
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| CliError::parse(file, at, format!("bad scale `{tok}`")))?;
    let endian = if scale < 0.0 {
        Endian::Little
    } else {
        Endian::Big
    };
    // Exactly one whitespace byte separates the header from the data.
    if c.pos >= data.len() || !data[c.pos].is_ascii_whitespace() {
        return Err(CliError::parse(file, c.pos, "missing newline after scale"));
    }
    let start = c.pos + 1;
    let needed = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CliError::parse(file, at, "dimensions overflow"))?;
    let body = &data[start..];
    if body.len() < needed {
        return Err(CliError::parse(
            file,
            data.len(),
            format!("truncated data: {} of {needed} bytes", body.len()),
        ));
    }
    if body.len() > needed {
        return Err(CliError::parse(
            file,
            start + needed,
            "trailing bytes after data",
        ));
    }
    let mut values = vec![0f32; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = match endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        };
        let (row, x) = (i / w, i % w);
        values[(h - 1 - row) * w + x] = v;
    }
    Ok(Grid::from_vec(w, h, values))
}

pub fn read(path: &Path) -> Result<Grid<f32>, CliError> {
    decode(&read_file(path)?, path)
}

/// Writes little-endian.
pub fn write(path: &Path, grid: &Grid<f32>) -> Result<(), CliError> {
    write_file(path, &encode(grid, Endian::Little))
}

/// Reads a map into any scalar type.
pub fn read_as<T: Real>(path: &Path) -> Result<Grid<T>, CliError> {
    Ok(read(path)?.cast())
}

/// Writes a map of any scalar type, rounding to 32-bit floats.
pub fn write_from<T: Real>(path: &Path, grid: &Grid<T>) -> Result<(), CliError> {
    write(path, &grid.cast())
}
