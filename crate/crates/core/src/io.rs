//! File formats: distribution CSV, PGM/PPM and CSV intensity grids, atomic output.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::distributions::{DiscreteDistribution, GrayImage};
use crate::{Error, Result};

/// Reads a distribution CSV: a header row, then one row per atom with columns
/// `x_1..x_d, mass`.
pub fn read_distribution_csv(path: &Path) -> Result<DiscreteDistribution> {
    let text = fs::read_to_string(path)?;
    parse_distribution_csv(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(Some(path), message),
        other => other,
    })
}

pub fn parse_distribution_csv(text: &str) -> Result<DiscreteDistribution> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::parse(None, "need at least one coordinate column and a mass column"));
    }
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::parse(
                None,
                format!("row {} has {} fields, header has {width}", line + 2, record.len()),
            ));
        }
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(None, format!("row {}: bad number `{f}`", line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let (coords, mass) = values.split_at(width - 1);
        points.push(coords.to_vec());
        masses.push(mass[0]);
    }
    DiscreteDistribution::from_points(&points, &masses)
}

pub fn write_distribution_csv(path: &Path, dist: &DiscreteDistribution) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (1..=dist.dim()).map(|i| format!("x_{i}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",mass\n");
    for (p, m) in dist.points().zip(dist.masses()) {
        for x in p {
            out.push_str(&format!("{x},"));
        }
        out.push_str(&format!("{m}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Loads a grayscale image from PGM (P2/P5), PPM (P3/P6, channel-averaged) or a
/// headerless CSV grid, chosen by extension.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let bytes = fs::read(path)?;
    let parsed = match ext.as_deref() {
        Some("csv") | Some("txt") => parse_csv_grid(
            std::str::from_utf8(&bytes).map_err(|_| Error::parse(None, "not UTF-8"))?,
        ),
        _ => parse_pnm(&bytes),
    };
    parsed.map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(Some(path), message),
        other => other,
    })
}

pub fn parse_csv_grid(text: &str) -> Result<GrayImage> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(None, format!("line {}: bad number `{f}`", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::parse(None, "ragged intensity grid"));
    }
    GrayImage::new(rows.len(), width, rows.concat())
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(None, "unexpected end of PNM data"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(None, "bad PNM header"))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::parse(None, format!("bad PNM number `{t}`")))
    }
}

pub fn parse_pnm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = PnmCursor { bytes, pos: 0 };
    let magic = cur.token()?.to_string();
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P5" => (1, true),
        "P3" => (3, false),
        "P6" => (3, true),
        other => return Err(Error::parse(None, format!("unsupported image magic `{other}`"))),
    };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(None, format!("bad maxval {maxval}")));
    }
    let count = width * height * channels;
    let samples: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = cur.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if bytes.len() < start + need {
            return Err(Error::parse(None, "truncated PNM raster"));
        }
        let raster = &bytes[start..start + need];
        if wide {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
                .collect()
        } else {
            raster.iter().map(|&b| b as f64).collect()
        }
    } else {
        (0..count)
            .map(|_| cur.number().map(|v| v as f64))
            .collect::<Result<_>>()?
    };
    let pixels = samples
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    GrayImage::new(height, width, pixels)
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut out = format!("P2\n{} {}\n255\n", image.width, image.height);
    for r in 0..image.height {
        let row: Vec<String> = (0..image.width)
            .map(|c| format!("{}", image.get(r, c).round().clamp(0.0, 255.0) as u8))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Writes through a temporary file in the target directory, so a failed run never
/// leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_csv_roundtrip() {
        let d = parse_distribution_csv("x_1,x_2,mass\n0,0,1\n1,0,3\n").unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.masses(), &[0.25, 0.75]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_distribution_csv(&path, &d).unwrap();
        assert_eq!(read_distribution_csv(&path).unwrap(), d);
    }

    #[test]
    fn distribution_csv_errors() {
        assert!(matches!(
            parse_distribution_csv("x_1,mass\n0,abc\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_distribution_csv("x_1,mass\n0,-1\n"),
            Err(Error::NegativeMass { .. })
        ));
        assert!(matches!(
            parse_distribution_csv("x_1,mass\n"),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn pgm_ascii_and_binary() {
        let img = parse_pnm(b"P2\n# comment\n2 1\n255\n0 255\n").unwrap();
        assert_eq!((img.height, img.width), (1, 2));
        assert_eq!(img.pixels, vec![0.0, 255.0]);

        let mut raw = b"P5\n2 2\n255\n".to_vec();
        raw.extend_from_slice(&[1, 2, 3, 4]);
        let img = parse_pnm(&raw).unwrap();
        assert_eq!(img.pixels, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn ppm_is_channel_averaged() {
        let img = parse_pnm(b"P3 1 1 255 30 60 90").unwrap();
        assert_eq!(img.pixels, vec![60.0]);
    }

    #[test]
    fn csv_grid() {
        let img = parse_csv_grid("0,1\n2,3\n").unwrap();
        assert_eq!((img.height, img.width), (2, 2));
        assert!(parse_csv_grid("0,1\n2\n").is_err());
    }
}
