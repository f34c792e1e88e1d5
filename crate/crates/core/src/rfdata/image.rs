use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Complex (I, Q) image indexed `(scanline, depth)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqImage {
    pub i_part: Array2<f64>,
    pub q_part: Array2<f64>,
    /// Display dynamic range in dB (positive).
    pub dynamic_range_db: f64,
}

impl IqImage {
    pub fn new(i_part: Array2<f64>, q_part: Array2<f64>) -> Result<Self> {
        if i_part.dim() != q_part.dim() {
            return Err(Error::dims(format!(
                "I is {:?}, Q is {:?}",
                i_part.dim(),
                q_part.dim()
            )));
        }
        Ok(Self {
            i_part,
            q_part,
            dynamic_range_db: 60.0,
        })
    }

    pub fn zeros(lines: usize, depth: usize) -> Self {
        Self {
            i_part: Array2::zeros((lines, depth)),
            q_part: Array2::zeros((lines, depth)),
            dynamic_range_db: 60.0,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.i_part.dim()
    }

    pub fn envelope(&self) -> Array2<f64> {
        envelope(self)
    }

    /// Log-compressed image in dB, normalised to this image's maximum.
    pub fn bmode_db(&self) -> Array2<f64> {
        log_compress(&self.envelope(), self.dynamic_range_db)
    }

    /// Restricts the image to a range of depth rows.
    pub fn crop_depth(&self, rows: std::ops::Range<usize>) -> Self {
        let s = ndarray::s![.., rows];
        Self {
            i_part: self.i_part.slice(s).to_owned(),
            q_part: self.q_part.slice(s).to_owned(),
            dynamic_range_db: self.dynamic_range_db,
        }
    }
}

/// Detected envelope `sqrt(i^2 + q^2)`.
pub fn envelope(img: &IqImage) -> Array2<f64> {
    Zip::from(&img.i_part)
        .and(&img.q_part)
        .map_collect(|&i, &q| i.hypot(q))
}

/// `20 log10(env / max(env))` clamped to `[-dynamic_range_db, 0]`.
///
/// An all-zero envelope maps to `-dynamic_range_db` everywhere.
pub fn log_compress(env: &Array2<f64>, dynamic_range_db: f64) -> Array2<f64> {
    let peak = env.iter().cloned().fold(0.0_f64, f64::max);
    if peak <= 0.0 {
        return Array2::from_elem(env.dim(), -dynamic_range_db);
    }
    env.mapv(|e| {
        let db = 20.0 * (e / peak).log10();
        if db.is_nan() {
            -dynamic_range_db
        } else {
            db.clamp(-dynamic_range_db, 0.0)
        }
    })
}

/// Linear map of `[-dynamic_range_db, 0]` dB onto `[0, 255]`.
pub fn to_gray8(bmode_db: &Array2<f64>, dynamic_range_db: f64) -> Array2<u8> {
    bmode_db.mapv(|db| {
        let v = (db + dynamic_range_db) / dynamic_range_db * 255.0;
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// Writes a binary (P5) PGM; array rows become image rows.
pub fn write_pgm(img: &Array2<u8>, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = img.dim();
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = img.iter().copied().collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b)? == 0 {
            break;
        }
        let c = b[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("unexpected end of PGM header".into()));
    }
    Ok(tok)
}

/// Reads an 8-bit binary (P5) PGM into `[rows x cols]`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let mut r = BufReader::new(File::open(path)?);
    if next_token(&mut r)? != "P5" {
        return Err(Error::Format("only binary P5 PGM is supported".into()));
    }
    let parse = |t: String| -> Result<usize> {
        t.parse()
            .map_err(|_| Error::Format(format!("bad PGM header field {t:?}")))
    };
    let w = parse(next_token(&mut r)?)?;
    let h = parse(next_token(&mut r)?)?;
    let maxval = parse(next_token(&mut r)?)?;
    if maxval != 255 {
        return Err(Error::Format(format!("PGM maxval {maxval} is not 255")));
    }
    let mut data = vec![0u8; w * h];
    r.read_exact(&mut data)
        .map_err(|_| Error::Size("PGM pixel data truncated".into()))?;
    Array2::from_shape_vec((h, w), data).map_err(|e| Error::Size(e.to_string()))
}
