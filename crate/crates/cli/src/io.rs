//! Artifact formats.
//!
//! CSV: `#`-prefixed metadata lines, one header row, comma-separated rows,
//! numbers in shortest round-trip decimal form. PGM: binary P5 with the
//! metadata as comment lines after the magic. Observations: TOML with the
//! metadata as leading comments.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scorewalk::conditional::{ForwardOperator, LinearObservation};
use scorewalk::{Error, Matrix64};

use crate::error::{in_file, CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance written at the top of every artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub extras: Vec<(String, String)>,
}

impl Meta {
    pub fn new(command: &str, config_sha256: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: config_sha256.to_string(),
            seed,
            extras: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extras.push((key.to_string(), value.to_string()));
        self
    }

    /// `# key: value` lines: command, config_sha256, seed, version, extras.
    pub fn lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("command: {}", self.command),
            format!("config_sha256: {}", self.config_sha256),
            format!("seed: {}", self.seed),
            format!("version: scorewalk {}", env!("CARGO_PKG_VERSION")),
        ];
        v.extend(self.extras.iter().map(|(k, val)| format!("{k}: {val}")));
        v
    }

    pub fn header(&self) -> String {
        self.lines().iter().map(|l| format!("# {l}\n")).collect()
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_csv(path: &Path, meta: &Meta, header: &str, rows: &[String]) -> CliResult<()> {
    let mut s = meta.header();
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

pub fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn coord_header(d: usize) -> String {
    (0..d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

/// `chain,x0,…` rows.
pub fn sample_rows(labeled: &[(u64, Vec<f64>)]) -> Vec<String> {
    labeled.iter().map(|(c, x)| format!("{c},{}", join(x))).collect()
}

/// Reads the `x*` columns of a CSV written by this tool. Errors name the
/// offending line (1-based, counting metadata lines).
pub fn read_samples(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = read_to_string(path)?;
    parse_samples(&text).map_err(|e| in_file(path, e))
}

pub fn parse_samples(text: &str) -> Result<Vec<Vec<f64>>, Error> {
    let mut cols: Option<Vec<usize>> = None;
    let mut width = 0;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(idx) = cols.as_ref() else {
            let idx: Vec<usize> = fields
                .iter()
                .enumerate()
                .filter(|(_, f)| f.starts_with('x') && f[1..].parse::<usize>().is_ok())
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "header has no x0.. columns".into(),
                });
            }
            width = fields.len();
            cols = Some(idx);
            continue;
        };
        if fields.len() != width {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let row = idx
            .iter()
            .map(|&i| {
                fields[i].parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("{:?}: {e}", fields[i]),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    if cols.is_none() {
        return Err(Error::Parse {
            line: 0,
            message: "no header row".into(),
        });
    }
    Ok(out)
}

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> CliResult<Self> {
        if pixels.len() != width * height {
            return Err(CliError::Core(Error::Dimension {
                context: "image pixels",
                expected: width * height,
                found: pixels.len(),
            }));
        }
        Ok(Self { width, height, pixels })
    }
}

pub fn encode_pgm(meta: &Meta, img: &Image) -> Vec<u8> {
    let mut out = b"P5\n".to_vec();
    for l in meta.lines() {
        out.extend_from_slice(format!("# {l}\n").as_bytes());
    }
    out.extend_from_slice(format!("{} {}\n255\n", img.width, img.height).as_bytes());
    out.extend(img.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, meta: &Meta, img: &Image) -> CliResult<()> {
    write_bytes(path, &encode_pgm(meta, img))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image, Error> {
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: format!("PGM: {m}"),
    };
    let mut pos = 0;
    let mut tokens = Vec::new();
    // Magic, width, height, maxval; comments run to end of line.
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if tokens[0] != "P5" {
        return Err(bad("only binary P5 images are supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
    if raster.len() != w * h {
        return Err(bad(&format!("expected {} raster bytes, found {}", w * h, raster.len())));
    }
    Ok(Image {
        width: w,
        height: h,
        pixels: raster.iter().map(|&b| b as f64 / maxval as f64).collect(),
    })
}

pub fn read_pgm(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| in_file(path, e))
}

/// Tiles images into a grid with a one-pixel mid-grey border.
pub fn tile_grid(images: &[Vec<f64>], width: usize, height: usize, cols: usize) -> Image {
    let cols = cols.max(1).min(images.len().max(1));
    let rows = images.len().div_ceil(cols).max(1);
    let gw = cols * (width + 1) + 1;
    let gh = rows * (height + 1) + 1;
    let mut px = vec![0.5; gw * gh];
    for (i, img) in images.iter().enumerate() {
        let (r0, c0) = ((i / cols) * (height + 1) + 1, (i % cols) * (width + 1) + 1);
        for r in 0..height {
            for c in 0..width {
                px[(r0 + r) * gw + c0 + c] = img[r * width + c];
            }
        }
    }
    Image {
        width: gw,
        height: gh,
        pixels: px,
    }
}

/// Image `(width, height)` when a vector came from a PGM file.
pub type ImageShape = Option<(usize, usize)>;

/// A single vector from a `.pgm` image or the first data row of a CSV.
pub fn read_vector(path: &Path) -> CliResult<(Vec<f64>, ImageShape)> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        let img = read_pgm(path)?;
        return Ok((img.pixels, Some((img.width, img.height))));
    }
    let rows = read_samples(path)?;
    let first = rows.into_iter().next().ok_or_else(|| {
        CliError::Core(Error::Parse {
            line: 0,
            message: format!("{}: no data rows", path.display()),
        })
    })?;
    Ok((first, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorRecord {
    Mask { dim: usize, keep: Vec<usize> },
    BlockAverage { width: usize, height: usize, factor: usize },
    Dense { rows: Vec<Vec<f64>> },
}

impl OperatorRecord {
    pub fn from_operator(op: &ForwardOperator<f64>) -> Self {
        match op {
            ForwardOperator::Mask { dim, keep } => OperatorRecord::Mask {
                dim: *dim,
                keep: keep.clone(),
            },
            ForwardOperator::BlockAverage { width, height, factor } => OperatorRecord::BlockAverage {
                width: *width,
                height: *height,
                factor: *factor,
            },
            ForwardOperator::Dense(m) => OperatorRecord::Dense { rows: m.to_rows() },
        }
    }

    pub fn to_operator(&self) -> CliResult<ForwardOperator<f64>> {
        let op = match self {
            OperatorRecord::Mask { dim, keep } => ForwardOperator::Mask {
                dim: *dim,
                keep: keep.clone(),
            },
            OperatorRecord::BlockAverage { width, height, factor } => ForwardOperator::BlockAverage {
                width: *width,
                height: *height,
                factor: *factor,
            },
            OperatorRecord::Dense { rows } => ForwardOperator::Dense(Matrix64::from_rows(rows)?),
        };
        op.validate()?;
        Ok(op)
    }
}

/// `y = A x + η n` with the operator needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub eta: f64,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_height: Option<usize>,
    pub operator: OperatorRecord,
}

impl ObservationFile {
    pub fn observation(&self) -> CliResult<LinearObservation<f64>> {
        Ok(LinearObservation::new(self.operator.to_operator()?, self.y.clone(), self.eta)?)
    }

    pub fn encode(&self, meta: &Meta) -> CliResult<String> {
        let body = toml::to_string(self).map_err(|e| CliError::config(format!("observation encoding: {e}")))?;
        Ok(meta.header() + &body)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

/// Writes rows to stdout unless quiet.
pub fn report(quiet: bool, lines: &[String]) {
    if quiet {
        return;
    }
    let stdout = std::io::stdout();
    let mut h = stdout.lock();
    for l in lines {
        let _ = writeln!(h, "{l}");
    }
}
