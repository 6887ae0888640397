//! Versioned binary checkpoints.
//!
//! Layout: the magic bytes `MGMAE1`, a little-endian `u32` version, then
//! length-prefixed fields in a fixed order, then an end marker. Floats are
//! stored as little-endian IEEE-754 bit patterns, so a round trip is
//! bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::gmm::{GaussianComponent, GmmModel};
use crate::layers::ParamStore;
use crate::seq2seq::{Decoder, Encoder, ModelDims, TrainLog};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"MGMAE1";
pub const VERSION: u32 = 1;
const END: &[u8; 4] = b"END.";

/// Which pipeline produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    /// Autoencoder, mixture and filters; `decoder` is the autoencoder's.
    Mgmae,
    /// Plain encoder-decoder; `decoder` maps sources to targets.
    Baseline,
}

/// Everything a finished (or partially finished) run leaves behind.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// The experiment configuration as TOML text.
    pub config: String,
    pub seed: u64,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub encoder: Encoder,
    /// The autoencoder's or the baseline's decoder.
    pub decoder: Option<Decoder>,
    pub bank: Option<FilterBank>,
    /// Training-set representations, one row per sentence.
    pub representations: Option<Tensor>,
    /// Cluster label of each representation row.
    pub labels: Vec<usize>,
    /// Named training logs, in the order the stages ran.
    pub logs: Vec<(String, TrainLog)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }

    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor) {
        self.len(t.ndim());
        t.shape().iter().for_each(|d| self.len(*d));
        t.data().iter().for_each(|x| self.f64(*x));
    }

    fn vocab(&mut self, v: &Vocab) {
        self.len(v.len());
        v.tokens().iter().for_each(|t| self.str(t));
    }

    fn dims(&mut self, d: ModelDims) {
        self.len(d.vocab_size);
        self.len(d.embed_dim);
        self.len(d.hidden_dim);
    }

    fn store(&mut self, s: &ParamStore) {
        self.len(s.len());
        for (name, t) in s.names().iter().zip(s.tensors()) {
            self.str(name);
            self.tensor(t);
        }
    }

    fn decoder(&mut self, d: &Decoder) {
        self.dims(d.dims());
        self.store(d.store());
    }

    fn gmm(&mut self, g: &GmmModel) {
        self.len(g.len());
        for c in g.components() {
            self.f64s(&c.mean);
            self.f64s(&c.variances);
            self.f64(c.weight);
        }
    }
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    /// A length, sanity-checked against the bytes left so a corrupt prefix
    /// cannot request a huge allocation.
    fn len(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(min_item_bytes as u64) > left {
            return Err(Error::Format(format!(
                "length {n} exceeds remaining {left} bytes"
            )));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let nd = self.len(8)?;
        let shape: Vec<usize> = (0..nd).map(|_| self.len(0)).collect::<Result<_>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        if count.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(Error::Format("tensor data truncated".into()));
        }
        let data = (0..count).map(|_| self.f64()).collect::<Result<_>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Format(format!("bad tensor: {e}")))
    }

    fn vocab(&mut self) -> Result<Vocab> {
        let n = self.len(8)?;
        let tokens = (0..n).map(|_| self.str()).collect::<Result<_>>()?;
        Vocab::from_tokens(tokens)
    }

    fn dims(&mut self) -> Result<ModelDims> {
        Ok(ModelDims {
            vocab_size: self.len(0)?,
            embed_dim: self.len(0)?,
            hidden_dim: self.len(0)?,
        })
    }

    fn store(&mut self) -> Result<ParamStore> {
        let n = self.len(16)?;
        let mut s = ParamStore::new();
        for _ in 0..n {
            let name = self.str()?;
            let t = self.tensor()?;
            s.add(name, t);
        }
        Ok(s)
    }

    fn decoder(&mut self) -> Result<Decoder> {
        let dims = self.dims()?;
        Decoder::from_store(dims, self.store()?)
    }

    fn gmm(&mut self) -> Result<GmmModel> {
        let m = self.len(24)?;
        let comps = (0..m)
            .map(|_| {
                Ok(GaussianComponent {
                    mean: self.f64s()?,
                    variances: self.f64s()?,
                    weight: self.f64()?,
                })
            })
            .collect::<Result<_>>()?;
        GmmModel::new(comps).map_err(|e| Error::Format(format!("bad mixture: {e}")))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("bad option tag {b}"))),
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u8(match self.kind {
            CheckpointKind::Mgmae => 0,
            CheckpointKind::Baseline => 1,
        });
        w.str(&self.config);
        w.u64(self.seed);
        w.vocab(&self.src_vocab);
        w.vocab(&self.tgt_vocab);
        w.dims(self.encoder.dims());
        w.store(self.encoder.store());
        match &self.decoder {
            Some(d) => {
                w.u8(1);
                w.decoder(d);
            }
            None => w.u8(0),
        }
        match &self.bank {
            Some(b) => {
                w.u8(1);
                w.gmm(b.gmm());
                w.len(b.len());
                b.filters().iter().for_each(|f| w.decoder(f));
            }
            None => w.u8(0),
        }
        match &self.representations {
            Some(r) => {
                w.u8(1);
                w.tensor(r);
            }
            None => w.u8(0),
        }
        w.len(self.labels.len());
        self.labels.iter().for_each(|&l| w.len(l));
        w.len(self.logs.len());
        for (name, log) in &self.logs {
            w.str(name);
            w.f64s(&log.epoch_losses);
        }
        w.0.extend_from_slice(END);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Format("missing MGMAE1 header".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let kind = match r.u8()? {
            0 => CheckpointKind::Mgmae,
            1 => CheckpointKind::Baseline,
            b => return Err(Error::Format(format!("unknown checkpoint kind {b}"))),
        };
        let config = r.str()?;
        let seed = r.u64()?;
        let src_vocab = r.vocab()?;
        let tgt_vocab = r.vocab()?;
        let enc_dims = r.dims()?;
        let encoder = Encoder::from_store(enc_dims, r.store()?)?;
        let decoder = if r.flag()? { Some(r.decoder()?) } else { None };
        let bank = if r.flag()? {
            let gmm = r.gmm()?;
            let k = r.len(24)?;
            let filters = (0..k).map(|_| r.decoder()).collect::<Result<_>>()?;
            Some(
                FilterBank::from_parts(gmm, filters)
                    .map_err(|e| Error::Format(format!("bad filter bank: {e}")))?,
            )
        } else {
            None
        };
        let representations = if r.flag()? { Some(r.tensor()?) } else { None };
        let n = r.len(8)?;
        let labels = (0..n).map(|_| r.len(0)).collect::<Result<_>>()?;
        let n = r.len(16)?;
        let logs = (0..n)
            .map(|_| {
                Ok((
                    r.str()?,
                    TrainLog {
                        epoch_losses: r.f64s()?,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        if r.take(END.len())? != END {
            return Err(Error::Format("missing end marker".into()));
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after end marker".into()));
        }
        Ok(Checkpoint {
            kind,
            config,
            seed,
            src_vocab,
            tgt_vocab,
            encoder,
            decoder,
            bank,
            representations,
            labels,
            logs,
        })
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&self.to_bytes())
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file()
            .sync_all()
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf)
    }
}
