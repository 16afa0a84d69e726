//! The learnable `ℓ × d` matrix that maps sparse structural features to
//! dense node embeddings, `e = xᵀ W`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{EncoderConfig, SparseFeatures};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("not an embedding matrix file (bad magic)")]
    BadMagic,
    #[error("unsupported embedding file version {0}")]
    Version(u32),
    #[error("embedding file is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("embedding file was trained with {field} = {file}, but the encoder uses {expected}")]
    ConfigMismatch {
        field: &'static str,
        file: u64,
        expected: u64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type DenseEmbedding = Vec<f64>;

/// Row-major dense parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "embedding matrix needs rows, cols >= 1");
        EmbeddingMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Entries i.i.d. uniform in `[-scale, scale]`.
    pub fn init(rows: usize, cols: usize, seed: u64, scale: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        if scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in m.values.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        m
    }

    /// The default initialisation, uniform in `±0.5 / d`.
    pub fn init_default(rows: usize, cols: usize, seed: u64) -> Self {
        Self::init(rows, cols, seed, 0.5 / cols as f64)
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(ModelError::Shape {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(EmbeddingMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_features(&self, x: &SparseFeatures) -> Result<(), ModelError> {
        if x.dim() != self.rows {
            return Err(ModelError::Shape {
                expected: self.rows,
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &SparseFeatures) -> Result<DenseEmbedding, ModelError> {
        self.check_features(x)?;
        let mut e = vec![0.0; self.cols];
        self.forward_into(x, &mut e);
        Ok(e)
    }

    /// Unchecked forward pass into a caller buffer of length `cols`.
    #[inline]
    pub fn forward_into(&self, x: &SparseFeatures, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, v) in x.iter() {
            for (o, w) in out.iter_mut().zip(self.row(i as usize)) {
                *o += v * w;
            }
        }
    }

    /// Embeds every row of a feature table.
    pub fn forward_all(&self, rows: &[SparseFeatures]) -> Result<Vec<DenseEmbedding>, ModelError> {
        rows.iter().map(|x| self.forward(x)).collect()
    }

    /// `grad_w[i] += x_i * grad_e` for every stored entry of `x`.
    pub fn accumulate_gradient(
        x: &SparseFeatures,
        grad_e: &[f64],
        grad_w: &mut EmbeddingMatrix,
    ) -> Result<(), ModelError> {
        grad_w.check_features(x)?;
        if grad_e.len() != grad_w.cols {
            return Err(ModelError::Shape {
                expected: grad_w.cols,
                got: grad_e.len(),
            });
        }
        for (i, v) in x.iter() {
            for (g, d) in grad_w.row_mut(i as usize).iter_mut().zip(grad_e) {
                *g += v * d;
            }
        }
        Ok(())
    }

    /// Writes the self-describing binary format: magic, version, ℓ, d,
    /// alpha, delta_max, encoder flags, then row-major little-endian f64.
    pub fn save(&self, path: &Path, enc: &EncoderConfig) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, enc)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W, enc: &EncoderConfig) -> Result<(), ModelError> {
        let header = FileHeader::new(self, enc);
        header.write(w)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, EncoderConfig), ModelError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Loads and refuses files whose encoder settings differ from `enc`.
    pub fn load_for(path: &Path, enc: &EncoderConfig) -> Result<Self, ModelError> {
        let (m, file_enc) = Self::load(path)?;
        let checks = [
            ("alpha", file_enc.alpha as u64, enc.alpha as u64),
            ("delta_max", file_enc.delta_max as u64, enc.delta_max as u64),
            ("apply_log", file_enc.apply_log as u64, enc.apply_log as u64),
            (
                "apply_unit_norm",
                file_enc.apply_unit_norm as u64,
                enc.apply_unit_norm as u64,
            ),
            ("log_bins", file_enc.log_bins as u64, enc.log_bins as u64),
        ];
        for (field, file, expected) in checks {
            if file != expected {
                return Err(ModelError::ConfigMismatch {
                    field,
                    file,
                    expected,
                });
            }
        }
        Ok(m)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, EncoderConfig), ModelError> {
        let header = FileHeader::read(r)?;
        let enc = header.encoder();
        if enc.dim() != header.rows as usize {
            return Err(ModelError::Corrupt(format!(
                "header rows {} disagree with encoder dimension {}",
                header.rows,
                enc.dim()
            )));
        }
        let n = (header.rows * header.cols) as usize;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| ModelError::Corrupt(format!("expected {n} values")))?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(ModelError::Corrupt("trailing bytes after matrix".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((
            EmbeddingMatrix::from_vec(header.rows as usize, header.cols as usize, values)?,
            enc,
        ))
    }
}

const MAGIC: &[u8; 8] = b"IGELEMB\0";
const VERSION: u32 = 1;

const FLAG_LOG: u32 = 1;
const FLAG_UNIT_NORM: u32 = 2;
const FLAG_LOG_BINS: u32 = 4;

struct FileHeader {
    rows: u64,
    cols: u64,
    alpha: u32,
    delta_max: u32,
    flags: u32,
}

impl FileHeader {
    fn new(m: &EmbeddingMatrix, enc: &EncoderConfig) -> Self {
        let mut flags = 0;
        if enc.apply_log {
            flags |= FLAG_LOG;
        }
        if enc.apply_unit_norm {
            flags |= FLAG_UNIT_NORM;
        }
        if enc.log_bins {
            flags |= FLAG_LOG_BINS;
        }
        FileHeader {
            rows: m.rows as u64,
            cols: m.cols as u64,
            alpha: enc.alpha,
            delta_max: enc.delta_max,
            flags,
        }
    }

    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            alpha: self.alpha,
            delta_max: self.delta_max,
            apply_log: self.flags & FLAG_LOG != 0,
            apply_unit_norm: self.flags & FLAG_UNIT_NORM != 0,
            log_bins: self.flags & FLAG_LOG_BINS != 0,
        }
    }

    fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.rows.to_le_bytes())?;
        w.write_all(&self.cols.to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&self.delta_max.to_le_bytes())?;
        w.write_all(&self.flags.to_le_bytes())
    }

    fn read<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let mut buf = [0u8; 8 + 4 + 8 + 8 + 4 + 4 + 4];
        r.read_exact(&mut buf)
            .map_err(|_| ModelError::Corrupt("header too short".into()))?;
        if &buf[..8] != MAGIC {
            return Err(ModelError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(ModelError::Version(version));
        }
        let header = FileHeader {
            rows: u64_at(12),
            cols: u64_at(20),
            alpha: u32_at(28),
            delta_max: u32_at(32),
            flags: u32_at(36),
        };
        if header.rows == 0 || header.cols == 0 || header.delta_max == 0 {
            return Err(ModelError::Corrupt("zero-sized header field".into()));
        }
        Ok(header)
    }
}

/// Writes `node v1 ... vd` lines.
pub fn write_node_embeddings<W: Write>(
    mut out: W,
    embeddings: &[DenseEmbedding],
    labels: Option<&crate::graph::NodeLabels>,
) -> std::io::Result<()> {
    for (i, e) in embeddings.iter().enumerate() {
        match labels {
            Some(l) => write!(out, "{}", l.name(i as u32))?,
            None => write!(out, "{i}")?,
        }
        for v in e {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, dim: usize) -> SparseFeatures {
        let mut entries = Vec::new();
        for i in 0..dim as u32 {
            if rng.gen_bool(0.4) {
                entries.push((i, rng.gen_range(0.01..1.0)));
            }
        }
        SparseFeatures::new(dim, entries).unwrap()
    }

    #[test]
    fn one_hot_selects_row() {
        let w = EmbeddingMatrix::init(5, 3, 1, 1.0);
        let x = SparseFeatures::new(5, vec![(3, 1.0)]).unwrap();
        assert_eq!(w.forward(&x).unwrap(), w.row(3));
        assert_eq!(w.forward(&SparseFeatures::empty(5)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn matches_dense_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = EmbeddingMatrix::init(12, 4, 2, 1.0);
        for _ in 0..20 {
            let x = random_sparse(&mut rng, 12);
            let dense = x.to_dense();
            let oracle: Vec<f64> = (0..4)
                .map(|j| (0..12).map(|i| dense[i] * w.as_slice()[i * 4 + j]).sum())
                .collect();
            let e = w.forward(&x).unwrap();
            for (a, b) in e.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let w = EmbeddingMatrix::zeros(4, 2);
        assert!(matches!(
            w.forward(&SparseFeatures::empty(5)),
            Err(ModelError::Shape { .. })
        ));
        let mut g = EmbeddingMatrix::zeros(4, 2);
        assert!(EmbeddingMatrix::accumulate_gradient(&SparseFeatures::empty(4), &[1.0], &mut g).is_err());
    }

    #[test]
    fn gradient_touches_only_active_rows() {
        let x = SparseFeatures::new(4, vec![(2, 1.0)]).unwrap();
        let mut g = EmbeddingMatrix::zeros(4, 3);
        EmbeddingMatrix::accumulate_gradient(&x, &[1.0, -2.0, 0.5], &mut g).unwrap();
        assert_eq!(g.row(2), &[1.0, -2.0, 0.5]);
        for r in [0, 1, 3] {
            assert_eq!(g.row(r), &[0.0; 3]);
        }
        let before = g.clone();
        EmbeddingMatrix::accumulate_gradient(&x, &[0.0; 3], &mut g).unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn gradient_matches_central_differences() {
        // f(W) = c · forward(x; W); df/dW = x ⊗ c.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let w = EmbeddingMatrix::init(9, 4, rng.gen(), 1.0);
            let x = random_sparse(&mut rng, 9);
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = |m: &EmbeddingMatrix| -> f64 {
                m.forward(&x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
            };
            let mut grad = EmbeddingMatrix::zeros(9, 4);
            EmbeddingMatrix::accumulate_gradient(&x, &c, &mut grad).unwrap();
            let h = 1e-5;
            for k in 0..36 {
                let mut plus = w.clone();
                plus.as_mut_slice()[k] += h;
                let mut minus = w.clone();
                minus.as_mut_slice()[k] -= h;
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                let analytic = grad.as_slice()[k];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!((numeric - analytic).abs() / denom < 1e-4 || (numeric - analytic).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn init_properties() {
        assert!(EmbeddingMatrix::init(4, 4, 1, 0.0).as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(EmbeddingMatrix::init(6, 5, 9, 0.1), EmbeddingMatrix::init(6, 5, 9, 0.1));
        let d = 16;
        let m = EmbeddingMatrix::init_default(500, d, 4);
        let scale = 0.5 / d as f64;
        assert!(m.as_slice().iter().all(|v| v.abs() <= scale));
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        // Uniform(-a, a) has standard deviation a / sqrt(3).
        let sigma_mean = scale / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn save_load_round_trip() {
        let enc = EncoderConfig::new(2, 5);
        let m = EmbeddingMatrix::init(enc.dim(), 3, 5, 1.0);
        let mut buf = Vec::new();
        m.write_to(&mut buf, &enc).unwrap();
        let (back, back_enc) = EmbeddingMatrix::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_enc, enc);

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            EmbeddingMatrix::read_from(&mut &truncated[..]),
            Err(ModelError::Corrupt(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::read_from(&mut bad.as_slice()),
            Err(ModelError::BadMagic)
        ));
    }

    #[test]
    fn load_for_rejects_other_alpha() {
        let dir = std::env::temp_dir().join(format!("igel-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.bin");
        let enc = EncoderConfig::new(2, 5);
        EmbeddingMatrix::init(enc.dim(), 3, 5, 1.0).save(&path, &enc).unwrap();
        let err = EmbeddingMatrix::load_for(&path, &EncoderConfig::new(1, 5)).unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        assert!(EmbeddingMatrix::load_for(&path, &enc).is_ok());
    }

    proptest! {
        #[test]
        fn forward_is_linear(seed in any::<u64>(), a in 0.1f64..3.0, b in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = EmbeddingMatrix::init(10, 4, seed, 1.0);
            let x = random_sparse(&mut rng, 10);
            let y = random_sparse(&mut rng, 10);
            let combo: Vec<(u32, f64)> = x
                .to_dense()
                .iter()
                .zip(y.to_dense())
                .enumerate()
                .filter(|(_, (p, q))| **p > 0.0 || *q > 0.0)
                .map(|(i, (p, q))| (i as u32, a * p + b * q))
                .collect();
            let lhs = w.forward(&SparseFeatures::new(10, combo).unwrap()).unwrap();
            let fx = w.forward(&x).unwrap();
            let fy = w.forward(&y).unwrap();
            for j in 0..4 {
                prop_assert!((lhs[j] - (a * fx[j] + b * fy[j])).abs() < 1e-10);
            }
        }
    }
}
