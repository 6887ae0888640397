//! Parameterized layers: embedding, LSTM cell, bidirectional LSTM, linear
//! projection and dot-product attention.
//!
//! Layers only hold [`ParamId`]s. The tensors live in a [`ParamStore`] owned
//! by the enclosing model, which is what gets optimized and checkpointed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor drawn from uniform(-bound, bound).
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        if bound > 0.0 {
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, id: ParamId) -> Var {
        tape.param(&self.tensors[id.0])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Per-parameter gradients in store order; parameters the loss never
    /// touched get zeros.
    pub fn gradients(&self, tape: &Tape<'_>, grads: &Gradients) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| {
                tape.bound(t)
                    .and_then(|v| grads.get(v))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }

    /// Replaces every tensor with `other`'s after checking that names and
    /// shapes agree.
    pub fn load_from(&mut self, other: ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Format(format!(
                "parameter names differ: expected {:?}, found {:?}",
                self.names, other.names
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!(
                    "parameter shape mismatch: expected {:?}, found {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.tensors = other.tensors;
        Ok(())
    }

    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bit_eq(b))
    }
}

/// Forward-pass regime. Dropout only fires in `Train`.
pub enum Mode<'r> {
    Eval,
    Train {
        dropout: f64,
        rng: &'r mut ChaCha8Rng,
    },
}

impl Mode<'_> {
    pub fn dropout(&mut self, tape: &mut Tape<'_>, v: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(v),
            Mode::Train { dropout, rng } => tape.dropout(v, *dropout, Some(&mut **rng)),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embedding {
    pub weight: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[vocab_size, dim], bound, rng);
        Embedding {
            weight,
            vocab_size,
            dim,
        }
    }

    /// Row-gather: `[T × dim]` for `T` ids.
    pub fn forward<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        ids: &[usize],
    ) -> Result<Var> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                size: self.vocab_size,
            });
        }
        let w = store.bind(tape, self.weight);
        tape.gather_rows(w, ids)
    }
}

/// One LSTM layer. Gates are packed in the order input, forget, cell,
/// output along the `4H` axis of `w`, `u` and `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lstm {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let w = store.add_uniform(
            format!("{name}.w"),
            &[4 * hidden_dim, input_dim],
            bound,
            rng,
        );
        let u = store.add_uniform(
            format!("{name}.u"),
            &[4 * hidden_dim, hidden_dim],
            bound,
            rng,
        );
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        let b = store.add(format!("{name}.b"), Tensor::vector(bias));
        Lstm {
            w,
            u,
            b,
            input_dim,
            hidden_dim,
        }
    }

    /// One time step; returns `(h_t, c_t)`.
    pub fn step<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        for v in [h_prev, c_prev] {
            if tape.value(v).shape() != [hd] {
                return Err(Error::Shape {
                    op: "lstm_step",
                    lhs: vec![hd],
                    rhs: tape.value(v).shape().to_vec(),
                });
            }
        }
        let w = store.bind(tape, self.w);
        let u = store.bind(tape, self.u);
        let b = store.bind(tape, self.b);
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h_prev)?;
        let z = tape.add(wx, uh)?;
        let z = tape.add(z, b)?;
        let zi = tape.slice(z, 0, hd)?;
        let zf = tape.slice(z, hd, hd)?;
        let zg = tape.slice(z, 2 * hd, hd)?;
        let zo = tape.slice(z, 3 * hd, hd)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fwd = Lstm::new(store, &format!("{name}.fwd"), input_dim, hidden_dim, rng);
        let bwd = Lstm::new(store, &format!("{name}.bwd"), input_dim, hidden_dim, rng);
        BiLstm { fwd, bwd }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim
    }

    /// Runs both directions over the rows of `xs` (`[T × input_dim]`).
    ///
    /// Returns `outputs[t] = [h_fwd[t]; h_bwd[t]]` as a `[T × 2H]` matrix and
    /// the final state `[h_fwd[T-1]; h_bwd[0]]`, where `h_bwd[0]` is the
    /// backward direction's state after it has consumed the whole sequence.
    pub fn encode<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        xs: Var,
    ) -> Result<(Var, Var)> {
        let shape = tape.value(xs).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "bilstm_encode",
                lhs: shape,
                rhs: vec![],
            });
        }
        let steps = shape[0];
        let hd = self.hidden_dim();
        let rows: Vec<Var> = (0..steps).map(|t| tape.row(xs, t)).collect::<Result<_>>()?;

        let zeros = tape.constant(Tensor::zeros(&[hd]));
        let (mut h, mut c) = (zeros, zeros);
        let mut hf = Vec::with_capacity(steps);
        for &x in &rows {
            (h, c) = self.fwd.step(store, tape, x, h, c)?;
            hf.push(h);
        }
        let (mut h, mut c) = (zeros, zeros);
        let mut hb = vec![zeros; steps];
        for t in (0..steps).rev() {
            (h, c) = self.bwd.step(store, tape, rows[t], h, c)?;
            hb[t] = h;
        }
        let outs: Vec<Var> = hf
            .iter()
            .zip(&hb)
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect::<Result<_>>()?;
        let outputs = tape.stack(&outs)?;
        let last = tape.concat(&[hf[steps - 1], hb[0]])?;
        Ok((outputs, last))
    }
}

/// Affine map `W x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[out_dim, in_dim], bound, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'a>(&self, store: &'a ParamStore, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let w = store.bind(tape, self.w);
        let b = store.bind(tape, self.b);
        let wx = tape.matvec(w, x)?;
        tape.add(wx, b)
    }
}

/// Dot-product attention of `query` (`[H]`) over the rows of `keys`
/// (`[T × H]`). Returns `(context [H], weights [T])`.
pub fn dot_attention(tape: &mut Tape<'_>, keys: Var, query: Var) -> Result<(Var, Var)> {
    let ks = tape.value(keys).shape().to_vec();
    let qs = tape.value(query).shape().to_vec();
    if ks.len() != 2 || qs.len() != 1 || ks[1] != qs[0] {
        return Err(Error::Shape {
            op: "dot_attention",
            lhs: ks,
            rhs: qs,
        });
    }
    let scores = tape.matvec(keys, query)?;
    let weights = tape.softmax(scores)?;
    let kt = tape.transpose(keys)?;
    let context = tape.matvec(kt, weights)?;
    Ok((context, weights))
}
