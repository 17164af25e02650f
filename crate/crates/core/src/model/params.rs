use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde_json::json;

/// Weights of the embedding -> GRU -> attention -> linear recommender.
///
/// GRU step with input `x` and previous state `p`:
/// `z = σ(W_z x + U_z p + b_z)`, `r = σ(W_r x + U_r p + b_r)`,
/// `n = tanh(W_n x + U_n (r ⊙ p) + b_n)`, `h = (1 - z) ⊙ n + z ⊙ p`.
/// Attention scores states `h_j` against the newest state `h_t` with
/// `h_j · (A h_t)`; the output layer sees `[context; h_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Array2<f64>,
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_n: Array2<f64>,
    pub u_n: Array2<f64>,
    pub b_n: Array1<f64>,
    pub attention: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub version: u64,
}

impl ModelParams {
    pub fn zeros(vocab: usize, embed: usize, hidden: usize) -> Self {
        Self {
            embedding: Array2::zeros((vocab, embed)),
            w_z: Array2::zeros((hidden, embed)),
            u_z: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            w_r: Array2::zeros((hidden, embed)),
            u_r: Array2::zeros((hidden, hidden)),
            b_r: Array1::zeros(hidden),
            w_n: Array2::zeros((hidden, embed)),
            u_n: Array2::zeros((hidden, hidden)),
            b_n: Array1::zeros(hidden),
            attention: Array2::zeros((hidden, hidden)),
            w_out: Array2::zeros((vocab, 2 * hidden)),
            b_out: Array1::zeros(vocab),
            version: 0,
        }
    }

    /// Uniform(-1/√fan_in, 1/√fan_in) per block; embeddings Uniform(-1, 1).
    pub fn random<R: Rng + ?Sized>(vocab: usize, embed: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(vocab, embed, hidden);
        let gru = 1.0 / (hidden as f64).sqrt();
        let out = 1.0 / ((2 * hidden) as f64).sqrt();
        let scales = [1.0, gru, gru, gru, gru, gru, gru, gru, gru, gru, gru, out, out];
        for ((_, block), scale) in p.blocks_mut().into_iter().zip(scales) {
            let dist = Uniform::new_inclusive(-scale, scale);
            for v in block.iter_mut() {
                *v = dist.sample(rng);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        let (vocab, embed) = self.embedding.dim();
        Self::zeros(vocab, embed, self.hidden_dim())
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.nrows()
    }

    /// Named flat views of every weight block, in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64], Vec<usize>)> {
        macro_rules! b {
            ($($f:ident),*) => { vec![$((stringify!($f), self.$f.as_slice().expect("standard layout"), self.$f.shape().to_vec())),*] };
        }
        b!(embedding, w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n, attention, w_out, b_out)
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        macro_rules! b {
            ($($f:ident),*) => { vec![$((stringify!($f), self.$f.as_slice_mut().expect("standard layout"))),*] };
        }
        b!(embedding, w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n, attention, w_out, b_out)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b, _)| b.iter().all(|v| v.is_finite()))
    }

    pub fn fill(&mut self, value: f64) {
        for (_, b) in self.blocks_mut() {
            b.fill(value);
        }
    }

    /// `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        for ((_, dst), (_, src, _)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Writes `<stem>.bin` (little-endian f64 blocks back to back) and
    /// `<stem>.json` (name, shape and element offset per block).
    pub fn dump(&self, dir: &Path, stem: &str) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut bin = io::BufWriter::new(fs::File::create(dir.join(format!("{stem}.bin")))?);
        let mut manifest = Vec::new();
        let mut offset = 0usize;
        for (name, data, shape) in self.blocks() {
            for v in data {
                bin.write_all(&v.to_le_bytes())?;
            }
            manifest.push(json!({"name": name, "shape": shape, "offset": offset, "dtype": "f64le"}));
            offset += data.len();
        }
        bin.flush()?;
        let doc = json!({"version": self.version, "tensors": manifest});
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&doc)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes() {
        let p = ModelParams::random(6, 4, 5, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.vocab_size(), 6);
        assert_eq!(p.embed_dim(), 4);
        assert_eq!(p.hidden_dim(), 5);
        assert_eq!(p.w_out.dim(), (6, 10));
        assert!(p.is_finite());
        let total: usize = p.blocks().iter().map(|(_, b, _)| b.len()).sum();
        assert_eq!(total, 6 * 4 + 3 * (5 * 4 + 25 + 5) + 25 + 60 + 6);
    }

    #[test]
    fn dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::random(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(1));
        p.dump(dir.path(), "iter_1").unwrap();
        let bin = fs::read(dir.path().join("iter_1.bin")).unwrap();
        let total: usize = p.blocks().iter().map(|(_, b, _)| b.len()).sum();
        assert_eq!(bin.len(), total * 8);
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("iter_1.json")).unwrap()).unwrap();
        let last = manifest["tensors"].as_array().unwrap().last().unwrap().clone();
        assert_eq!(last["name"], "b_out");
        let off = last["offset"].as_u64().unwrap() as usize * 8;
        assert_eq!(f64::from_le_bytes(bin[off..off + 8].try_into().unwrap()), p.b_out[0]);
    }
}
