use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Mean-centered principal-component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `out_dim` unit-norm components, each `dim` long, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Every eigenvalue of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance carried by each kept component.
    pub explained_variance_ratio: Vec<f64>,
    pub count: usize,
}

impl PcaModel {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimMismatch {
                expected: self.in_dim(),
                actual: x.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((&w, &v), &m)| w * (v as f64 - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.out_dim() {
            return Err(Error::DimMismatch {
                expected: self.out_dim(),
                actual: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (o, &w) in out.iter_mut().zip(c) {
                *o += zi * w;
            }
        }
        Ok(out)
    }

    /// Total squared error of project-then-reconstruct over `data`.
    pub fn reconstruction_error(&self, data: &EmbeddingMatrix) -> Result<f64> {
        let mut total = 0.0;
        for x in data.rows() {
            let xh = self.reconstruct(&self.project(x)?)?;
            total += x.iter().zip(&xh).map(|(&a, &b)| (a as f64 - b).powi(2)).sum::<f64>();
        }
        Ok(total)
    }

    /// Sum of the eigenvalues not kept.
    pub fn discarded_variance(&self) -> f64 {
        self.eigenvalues[self.out_dim()..].iter().sum()
    }
}

/// Fit PCA on `data` and project every row onto the top `out_dim` components.
/// Each component's sign is fixed so its largest-magnitude entry is positive.
pub fn pca_project(data: &EmbeddingMatrix, out_dim: usize) -> Result<(PcaModel, EmbeddingMatrix)> {
    let (n, d) = (data.count(), data.dim());
    if out_dim == 0 || out_dim > d {
        return Err(Error::invalid(format!("out_dim {out_dim} outside 1..={d}")));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { count: n, needed: 2 });
    }
    let mut mean = vec![0.0f64; d];
    for x in data.rows() {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data.row(i)[j] as f64 - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    // tiny negative eigenvalues are rounding noise on a PSD matrix
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let components: Vec<Vec<f64>> = order[..out_dim]
        .iter()
        .map(|&i| {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let pivot = c
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(_, &v)| v)
                .unwrap_or(1.0);
            if pivot < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        })
        .collect();
    let explained_variance_ratio = eigenvalues[..out_dim]
        .iter()
        .map(|&l| if total > 0.0 { l / total } else { 0.0 })
        .collect();
    let model = PcaModel {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
        count: n,
    };

    let mut projected = Vec::with_capacity(n * out_dim);
    for x in data.rows() {
        projected.extend(model.project(x)?.into_iter().map(|v| v as f32));
    }
    let mut out = EmbeddingMatrix::new(out_dim, projected, None)?;
    if let Some(ids) = data.ids() {
        out = out.with_ids(ids.to_vec())?;
    }
    Ok((model, out))
}

/// Symmetric int8 code: `x ~ code * scale`, zero point fixed at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Int8Vector {
    pub codes: Vec<i8>,
    pub scale: f32,
    pub zero_point: i8,
}

/// `scale = max|x| / 127`, `code = round(x / scale)` clamped to +-127. An
/// all-zero vector gets scale 1.
pub fn int8_quantize(x: &[f32]) -> Result<Int8Vector> {
    if let Some(col) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, col });
    }
    let max_abs = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let mut scale = max_abs / 127.0;
    if !scale.is_normal() || scale < 0.0 {
        // zero vector, or subnormal inputs whose scale would underflow
        scale = if max_abs == 0.0 { 1.0 } else { f32::MIN_POSITIVE };
    }
    let s = scale as f64;
    let codes = x
        .iter()
        .map(|&v| (v as f64 / s).round().clamp(-127.0, 127.0) as i8)
        .collect();
    Ok(Int8Vector {
        codes,
        scale,
        zero_point: 0,
    })
}

pub fn int8_dequantize(q: &Int8Vector) -> Vec<f32> {
    let (s, z) = (q.scale as f64, q.zero_point as f64);
    q.codes.iter().map(|&c| ((c as f64 - z) * s) as f32).collect()
}

/// Row-wise int8 matrix with one scale per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Int8Matrix {
    pub dim: usize,
    pub rows: Vec<Int8Vector>,
    pub ids: Option<Vec<String>>,
}

impl Int8Matrix {
    pub fn quantize(m: &EmbeddingMatrix) -> Result<Self> {
        Ok(Int8Matrix {
            dim: m.dim(),
            rows: m.rows().map(int8_quantize).collect::<Result<_>>()?,
            ids: m.ids().map(<[String]>::to_vec),
        })
    }

    pub fn dequantize(&self) -> Result<EmbeddingMatrix> {
        let values = self.rows.iter().flat_map(int8_dequantize).collect();
        EmbeddingMatrix::new(self.dim, values, self.ids.clone())
    }
}

pub const XFQ8_MAGIC: [u8; 4] = *b"XFQ8";
pub const XFQ8_VERSION: u16 = 1;

/// Layout mirrors the f32 embedding file: magic, u16 version, u32 dim,
/// u64 count, then per row an f32 scale and `dim` signed bytes, then the
/// optional id table. Little-endian throughout.
pub fn write_int8_to<W: Write>(m: &Int8Matrix, mut w: W) -> Result<()> {
    let dim = u32::try_from(m.dim).map_err(|_| Error::invalid("dim exceeds u32"))?;
    w.write_all(&XFQ8_MAGIC)?;
    w.write_all(&XFQ8_VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(m.rows.len() as u64).to_le_bytes())?;
    for r in &m.rows {
        if r.codes.len() != m.dim {
            return Err(Error::DimMismatch {
                expected: m.dim,
                actual: r.codes.len(),
            });
        }
        w.write_all(&r.scale.to_le_bytes())?;
        let bytes: Vec<u8> = r.codes.iter().map(|&c| c as u8).collect();
        w.write_all(&bytes)?;
    }
    match &m.ids {
        None => w.write_all(&[0x00])?,
        Some(ids) => {
            w.write_all(&[0x01])?;
            for id in ids {
                let len = u32::try_from(id.len()).map_err(|_| Error::invalid("id too long"))?;
                w.write_all(&len.to_le_bytes())?;
                w.write_all(id.as_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_int8(m: &Int8Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    write_int8_to(m, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedPayload(what.to_owned()),
        _ => Error::Io(e),
    })
}

pub fn read_int8_from<R: Read>(mut r: R) -> Result<Int8Matrix> {
    let mut magic = [0u8; 4];
    read_or(&mut r, &mut magic, "header")?;
    if magic != XFQ8_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: XFQ8_MAGIC,
        });
    }
    let mut rest = [0u8; 14];
    read_or(&mut r, &mut rest, "header")?;
    let version = u16::from_le_bytes([rest[0], rest[1]]);
    if version != XFQ8_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(rest[2..6].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(rest[6..14].try_into().expect("8 bytes"));
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    let mut rows = Vec::new();
    let mut buf = vec![0u8; 4 + dim];
    for _ in 0..count {
        read_or(&mut r, &mut buf, "payload ended mid-row")?;
        let scale = f32::from_le_bytes(buf[..4].try_into().expect("4 bytes"));
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidEmbeddingFile(format!("bad row scale {scale}")));
        }
        rows.push(Int8Vector {
            codes: buf[4..].iter().map(|&b| b as i8).collect(),
            scale,
            zero_point: 0,
        });
    }
    let mut flag = [0u8; 1];
    read_or(&mut r, &mut flag, "missing id flag")?;
    let ids = match flag[0] {
        0x00 => None,
        0x01 => {
            let mut ids = Vec::with_capacity(rows.len());
            for _ in 0..count {
                let mut len = [0u8; 4];
                read_or(&mut r, &mut len, "id table")?;
                let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
                read_or(&mut r, &mut bytes, "id table")?;
                ids.push(
                    String::from_utf8(bytes)
                        .map_err(|_| Error::InvalidEmbeddingFile("id is not valid UTF-8".into()))?,
                );
            }
            Some(ids)
        }
        other => {
            return Err(Error::InvalidEmbeddingFile(format!(
                "unknown id flag {other:#04x}"
            )))
        }
    };
    Ok(Int8Matrix { dim, rows, ids })
}

pub fn read_int8(path: impl AsRef<Path>) -> Result<Int8Matrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file);
    let m = read_int8_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::InvalidEmbeddingFile("trailing bytes after payload".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(seed: u64, n: usize, d: usize) -> EmbeddingMatrix {
        let mut rng = stream_rng(seed, 0);
        // uneven column scales so the spectrum is well separated
        let v = (0..n * d)
            .map(|k| rng.random_range(-1.0f32..1.0) * (1 + k % d) as f32)
            .collect();
        EmbeddingMatrix::new(d, v, None).unwrap()
    }

    #[test]
    fn full_basis_is_lossless() {
        let data = random_matrix(1, 40, 6);
        let (model, proj) = pca_project(&data, 6).unwrap();
        assert_eq!(proj.dim(), 6);
        let total: f64 = data.values().iter().map(|&v| (v as f64).powi(2)).sum();
        assert!(model.reconstruction_error(&data).unwrap() <= 1e-8 * total);
        let ratio_sum: f64 = model.explained_variance_ratio.iter().sum();
        assert_relative_eq!(ratio_sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_rank_two() {
        let mut rng = stream_rng(2, 0);
        let (a, b) = ([1.0f32, 2.0, 0.0, -1.0, 0.5], [0.0f32, 1.0, 1.0, 3.0, -2.0]);
        let v: Vec<f32> = (0..30)
            .flat_map(|_| {
                let (s, t) = (rng.random_range(-2.0f32..2.0), rng.random_range(-2.0f32..2.0));
                (0..5).map(move |j| 3.0 + s * a[j] + t * b[j])
            })
            .collect();
        let data = EmbeddingMatrix::new(5, v, None).unwrap();
        let (model, _) = pca_project(&data, 2).unwrap();
        assert!(model.reconstruction_error(&data).unwrap() < 1e-8);
    }

    #[test]
    fn error_is_discarded_variance() {
        let data = random_matrix(3, 100, 8);
        let (model, proj) = pca_project(&data, 3).unwrap();
        let err = model.reconstruction_error(&data).unwrap();
        assert_relative_eq!(err, model.discarded_variance() * 99.0, max_relative = 1e-6);
        assert_eq!(proj.count(), 100);
        assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pca_preconditions() {
        let data = random_matrix(4, 10, 3);
        assert!(pca_project(&data, 4).is_err());
        assert!(pca_project(&data, 0).is_err());
        let one = random_matrix(4, 1, 3);
        assert!(matches!(pca_project(&one, 2), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn pca_keeps_ids_and_sign() {
        let data = random_matrix(5, 12, 4)
            .with_ids((0..12).map(|i| format!("r{i}")).collect())
            .unwrap();
        let (model, proj) = pca_project(&data, 2).unwrap();
        assert_eq!(proj.ids().unwrap()[11], "r11");
        for c in &model.components {
            let pivot = c.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn int8_examples() {
        let q = int8_quantize(&[0.0; 4]).unwrap();
        assert_eq!((q.codes.as_slice(), q.scale), ([0i8; 4].as_slice(), 1.0));
        assert_eq!(int8_dequantize(&q), [0.0; 4]);

        let q = int8_quantize(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(q.codes, [-127, 0, 127]);
        assert_eq!(q.scale, 1.0 / 127.0);
        assert_eq!(q.zero_point, 0);
        assert!(int8_quantize(&[f32::INFINITY]).is_err());
    }

    #[test]
    fn int8_file_round_trip() {
        let data = random_matrix(6, 9, 5)
            .with_ids((0..9).map(|i| format!("id-{i}")).collect())
            .unwrap();
        let q = Int8Matrix::quantize(&data).unwrap();
        let mut buf = Vec::new();
        write_int8_to(&q, &mut buf).unwrap();
        assert_eq!(buf.len(), 18 + 9 * (4 + 5) + 1 + 9 * (4 + 4));
        assert_eq!(read_int8_from(buf.as_slice()).unwrap(), q);
        assert!(matches!(read_int8_from(&buf[..30]), Err(Error::TruncatedPayload(_))));
        let back = q.dequantize().unwrap();
        assert_eq!(back.count(), 9);
    }

    proptest! {
        #[test]
        fn int8_error_within_half_step(x in prop::collection::vec(-1e4f32..1e4, 1..256)) {
            let q = int8_quantize(&x).unwrap();
            let s = q.scale as f64;
            for (&v, &c) in x.iter().zip(&q.codes) {
                prop_assert!((v as f64 - c as f64 * s).abs() <= s / 2.0);
            }
        }
    }
}
