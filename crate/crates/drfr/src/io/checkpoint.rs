//! The `DRFM` model checkpoint: embedding weights, both metric factors, and
//! the hyperparameters that produced them, all at full 64-bit precision so
//! save/load round trips are bit-exact.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{
    Bandwidth, DualMetric, EmbeddingKind, EmbeddingModel, Hyperparams, MetricFactor, TrainedModel,
};

const MAGIC: &[u8; 4] = b"DRFM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A trained model together with the hyperparameters it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: TrainedModel,
    pub hyper: Hyperparams,
    pub version: u16,
}

impl ModelCheckpoint {
    pub fn new(model: TrainedModel, hyper: Hyperparams) -> Self {
        ModelCheckpoint {
            model,
            hyper,
            version: CHECKPOINT_VERSION,
        }
    }
}

fn push_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_bits().to_le_bytes());
        }
    }
}

/// Writes a checkpoint. Layout: magic, version u16, embedding kind u8, then
/// W, L_age, L_ind (each nrows u32, ncols u32, f64 bits row-major), then the
/// hyperparameter block.
pub fn save_checkpoint(checkpoint: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let model = &checkpoint.model;
    let h = &checkpoint.hyper;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match model.embedding.kind() {
        EmbeddingKind::Linear => 0,
        EmbeddingKind::Pca => 1,
    });
    push_matrix(&mut buf, model.embedding.weights());
    push_matrix(&mut buf, model.metric.age.factor());
    push_matrix(&mut buf, model.metric.ind.factor());

    buf.extend_from_slice(&(h.k_neighbors as u32).to_le_bytes());
    match h.bandwidth {
        Bandwidth::Auto => {
            buf.push(0);
            buf.extend_from_slice(&0f64.to_bits().to_le_bytes());
        }
        Bandwidth::Fixed(t) => {
            buf.push(1);
            buf.extend_from_slice(&t.to_bits().to_le_bytes());
        }
    }
    buf.extend_from_slice(&h.age_epsilon.to_le_bytes());
    for v in [
        h.margin_delta,
        h.graph_weight,
        h.retrieve_lambda,
        h.learning_rate,
        h.momentum,
    ] {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    buf.extend_from_slice(&(h.batch_size as u32).to_le_bytes());
    buf.extend_from_slice(&(h.epochs as u32).to_le_bytes());
    buf.extend_from_slice(&(h.embed_dim as u32).to_le_bytes());
    buf.extend_from_slice(&h.seed.to_le_bytes());

    std::fs::write(path.as_ref(), buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("checkpoint file", "truncated file".to_string()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let nrows = self.u32()? as usize;
        let ncols = self.u32()? as usize;
        if nrows == 0 || ncols == 0 {
            return Err(Error::format("checkpoint file", "empty matrix block".to_string()));
        }
        let mut m = DMatrix::zeros(nrows, ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

/// Reads a checkpoint, verifying the header, matrix shape consistency, and
/// that the file holds exactly the declared payload.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != MAGIC {
        return Err(Error::format("checkpoint file", "bad magic".to_string()));
    }
    let version = cur.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "checkpoint file",
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let kind = match cur.u8()? {
        0 => EmbeddingKind::Linear,
        1 => EmbeddingKind::Pca,
        other => {
            return Err(Error::format(
                "checkpoint file",
                format!("unknown embedding kind {other}"),
            ))
        }
    };
    let weights = cur.matrix()?;
    let l_age = cur.matrix()?;
    let l_ind = cur.matrix()?;

    let k_neighbors = cur.u32()? as usize;
    let bandwidth = match cur.u8()? {
        0 => {
            cur.f64()?;
            Bandwidth::Auto
        }
        1 => Bandwidth::Fixed(cur.f64()?),
        other => {
            return Err(Error::format(
                "checkpoint file",
                format!("unknown bandwidth tag {other}"),
            ))
        }
    };
    let age_epsilon = cur.u16()?;
    let margin_delta = cur.f64()?;
    let graph_weight = cur.f64()?;
    let retrieve_lambda = cur.f64()?;
    let learning_rate = cur.f64()?;
    let momentum = cur.f64()?;
    let batch_size = cur.u32()? as usize;
    let epochs = cur.u32()? as usize;
    let embed_dim = cur.u32()? as usize;
    let seed = cur.u64()?;

    if cur.pos != bytes.len() {
        return Err(Error::format(
            "checkpoint file",
            format!("{} trailing bytes after declared payload", bytes.len() - cur.pos),
        ));
    }

    let embedding = EmbeddingModel::new(kind, weights)?;
    let metric = DualMetric::new(MetricFactor::new(l_age)?, MetricFactor::new(l_ind)?)?;
    let model = TrainedModel::new(embedding, metric)?;
    let hyper = Hyperparams {
        k_neighbors,
        bandwidth,
        age_epsilon,
        margin_delta,
        graph_weight,
        retrieve_lambda,
        learning_rate,
        momentum,
        batch_size,
        epochs,
        embed_dim,
        seed,
    };
    Ok(ModelCheckpoint {
        model,
        hyper,
        version,
    })
}
