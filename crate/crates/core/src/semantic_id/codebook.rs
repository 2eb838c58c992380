use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_embeddings_from, write_embeddings_to, EmbeddingMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_DEAD_FRACTION: f64 = 1e-3;
pub const EMA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Residual,
    Product,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Residual => "residual",
            Scheme::Product => "product",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "residual" | "rq" => Ok(Scheme::Residual),
            "product" | "pq" => Ok(Scheme::Product),
            _ => Err(Error::invalid(format!("unknown quantization scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticId {
    pub scheme: Scheme,
    pub codes: Vec<usize>,
}

/// `levels` tables of `entries` codewords each. For the residual scheme every
/// codeword spans the full input; for the product scheme `dim` is the chunk
/// width and inputs are `levels * dim` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    scheme: Scheme,
    levels: usize,
    entries: usize,
    dim: usize,
    gamma: f64,
    dead_fraction: f64,
    codewords: Vec<f32>,
    ema_count: Vec<f32>,
    ema_sum: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    scheme: Scheme,
    levels: usize,
    entries: usize,
    dim: usize,
    gamma: f64,
    dead_fraction: f64,
}

const FORMAT_TAG: &str = "vlkit-codebook/1";

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma {gamma} outside [0, 1)")))
    }
}

impl Codebook {
    /// Codebook from explicit codewords (`levels x entries x dim`, row-major).
    /// EMA state starts at N = 1, m = codeword.
    pub fn from_codewords(
        scheme: Scheme,
        levels: usize,
        entries: usize,
        dim: usize,
        codewords: Vec<f32>,
    ) -> Result<Self> {
        if levels == 0 || entries == 0 {
            return Err(Error::invalid("levels and entries must be positive"));
        }
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if codewords.len() != levels * entries * dim {
            return Err(Error::invalid(format!(
                "{} codeword values for {levels} x {entries} x {dim}",
                codewords.len()
            )));
        }
        if let Some(pos) = codewords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Codebook {
            scheme,
            levels,
            entries,
            dim,
            gamma: DEFAULT_GAMMA,
            dead_fraction: DEFAULT_DEAD_FRACTION,
            ema_count: vec![1.0; levels * entries],
            ema_sum: codewords.clone(),
            codewords,
        })
    }

    pub fn zeros(scheme: Scheme, levels: usize, entries: usize, dim: usize) -> Result<Self> {
        Self::from_codewords(scheme, levels, entries, dim, vec![0.0; levels * entries * dim])
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_dead_fraction(mut self, dead_fraction: f64) -> Result<Self> {
        if !(dead_fraction >= 0.0 && dead_fraction.is_finite()) {
            return Err(Error::invalid("dead_fraction must be a nonnegative number"));
        }
        self.dead_fraction = dead_fraction;
        Ok(self)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    /// Width of one codeword.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Width of the vectors this codebook encodes.
    pub fn input_dim(&self) -> usize {
        match self.scheme {
            Scheme::Residual => self.dim,
            Scheme::Product => self.dim * self.levels,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dead_fraction(&self) -> f64 {
        self.dead_fraction
    }

    pub fn codewords(&self) -> &[f32] {
        &self.codewords
    }

    pub fn ema_count(&self) -> &[f32] {
        &self.ema_count
    }

    pub fn ema_sum(&self) -> &[f32] {
        &self.ema_sum
    }

    pub fn codeword(&self, level: usize, index: usize) -> &[f32] {
        let start = (level * self.entries + index) * self.dim;
        &self.codewords[start..start + self.dim]
    }

    pub(crate) fn level_codewords(&self, level: usize) -> &[f32] {
        let n = self.entries * self.dim;
        &self.codewords[level * n..(level + 1) * n]
    }

    pub(crate) fn set_codeword(&mut self, level: usize, index: usize, v: &[f32]) {
        let slot = level * self.entries + index;
        let start = slot * self.dim;
        self.codewords[start..start + self.dim].copy_from_slice(v);
        self.ema_sum[start..start + self.dim].copy_from_slice(v);
        self.ema_count[slot] = 1.0;
    }

    pub(crate) fn check_code(&self, level: usize, index: usize) -> Result<()> {
        if index < self.entries {
            Ok(())
        } else {
            Err(Error::CodeOutOfRange {
                level,
                index,
                entries: self.entries,
            })
        }
    }

    pub(crate) fn check_id(&self, id: &SemanticId) -> Result<()> {
        if id.scheme != self.scheme {
            return Err(Error::invalid(format!(
                "{} id given to a {} codebook",
                id.scheme, self.scheme
            )));
        }
        if id.codes.len() != self.levels {
            return Err(Error::invalid(format!(
                "id has {} codes, codebook has {} levels",
                id.codes.len(),
                self.levels
            )));
        }
        id.codes
            .iter()
            .enumerate()
            .try_for_each(|(level, &index)| self.check_code(level, index))
    }

    /// One EMA step for a level: `N <- g N + (1-g) n`, `m <- g m + (1-g) s`,
    /// `c <- m / max(N, eps)`. Codes whose count falls below `dead_fraction`
    /// of the level's mean count are reset to a random batch row with N = 1.
    /// Returns the number of reset codes.
    ///
    /// An empty batch leaves the level untouched.
    pub fn ema_update<R: Rng + ?Sized>(
        &mut self,
        level: usize,
        batch: &EmbeddingMatrix,
        assignments: &[usize],
        rng: &mut R,
    ) -> Result<usize> {
        if level >= self.levels {
            return Err(Error::invalid(format!("level {level} outside {} levels", self.levels)));
        }
        if batch.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: batch.dim(),
            });
        }
        if assignments.len() != batch.count() {
            return Err(Error::invalid(format!(
                "{} assignments for {} batch rows",
                assignments.len(),
                batch.count()
            )));
        }
        if batch.count() == 0 {
            return Ok(0);
        }
        let (m, d) = (self.entries, self.dim);
        let mut n = vec![0.0f64; m];
        let mut s = vec![0.0f64; m * d];
        for (row, &a) in batch.rows().zip(assignments) {
            self.check_code(level, a)?;
            n[a] += 1.0;
            for (acc, &v) in s[a * d..(a + 1) * d].iter_mut().zip(row) {
                *acc += v as f64;
            }
        }

        let g = self.gamma;
        let base = level * m;
        for i in 0..m {
            let slot = base + i;
            let count = g * self.ema_count[slot] as f64 + (1.0 - g) * n[i];
            self.ema_count[slot] = count as f32;
            let denom = count.max(EMA_EPS);
            for j in 0..d {
                let k = slot * d + j;
                let sum = g * self.ema_sum[k] as f64 + (1.0 - g) * s[i * d + j];
                self.ema_sum[k] = sum as f32;
                self.codewords[k] = (sum / denom) as f32;
            }
        }

        let counts = &self.ema_count[base..base + m];
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / m as f64;
        let cutoff = self.dead_fraction * mean;
        let dead: Vec<usize> = (0..m).filter(|&i| (counts[i] as f64) < cutoff).collect();
        for &i in &dead {
            let pick = rng.random_range(0..batch.count());
            self.set_codeword(level, i, batch.row(pick));
        }
        Ok(dead.len())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format: FORMAT_TAG.to_owned(),
            scheme: self.scheme,
            levels: self.levels,
            entries: self.entries,
            dim: self.dim,
            gamma: self.gamma,
            dead_fraction: self.dead_fraction,
        };
        serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        let table = |dim, values: &[f32]| EmbeddingMatrix::new(dim, values.to_vec(), None);
        write_embeddings_to(&table(self.dim, &self.codewords)?, &mut w)?;
        write_embeddings_to(&table(self.entries, &self.ema_count)?, &mut w)?;
        write_embeddings_to(&table(self.dim, &self.ema_sum)?, &mut w)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::InvalidEmbeddingFile(format!("codebook header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(Error::InvalidEmbeddingFile(format!(
                "unknown codebook format `{}`",
                header.format
            )));
        }
        let codewords = read_embeddings_from(&mut r)?;
        let counts = read_embeddings_from(&mut r)?;
        let sums = read_embeddings_from(&mut r)?;
        let (levels, entries, dim) = (header.levels, header.entries, header.dim);
        let cells = levels * entries;
        let shape_ok = codewords.dim() == dim
            && codewords.count() == cells
            && counts.dim() == entries
            && counts.count() == levels
            && sums.dim() == dim
            && sums.count() == cells;
        if !shape_ok {
            return Err(Error::InvalidEmbeddingFile("codebook tensors do not match header".into()));
        }
        if counts.values().iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidEmbeddingFile("negative EMA count".into()));
        }
        let mut cb = Codebook::from_codewords(header.scheme, levels, entries, dim, codewords.into_parts().1)?
            .with_gamma(header.gamma)?
            .with_dead_fraction(header.dead_fraction)?;
        cb.ema_count = counts.into_parts().1;
        cb.ema_sum = sums.into_parts().1;
        Ok(cb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut r = BufReader::new(file);
        let cb = Self::read_from(&mut r)?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::InvalidEmbeddingFile("trailing bytes after codebook".into()));
        }
        Ok(cb)
    }
}
