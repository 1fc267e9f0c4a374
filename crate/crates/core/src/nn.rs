//! Layers shared by the imaginator and the arbitrator, expressed on the tape.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// `x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), &[input, output], input, rng)?,
            b: store.add_uniform(format!("{name}.b"), &[output], input, rng)?,
            input,
            output,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let w = store.id(&format!("{name}.w"))?;
        let b = store.id(&format!("{name}.b"))?;
        let shape = store.value(w).shape();
        Ok(Self {
            w,
            b,
            input: shape[0],
            output: shape[1],
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            table: store.add_uniform(name, &[rows, dim], 1, rng)?,
            rows,
            dim,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let table = store.id(name)?;
        let shape = store.value(table).shape();
        Ok(Self {
            table,
            rows: shape[0],
            dim: shape[1],
        })
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather(t, ids)
    }
}

/// LSTM cell with fused gate weights in the order forget, input, output,
/// candidate: `W: [in, 4H]`, `U: [H, 4H]`, `b: [4H]`.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), &[input, 4 * hidden], hidden, rng)?,
            u: store.add_uniform(format!("{name}.u"), &[hidden, 4 * hidden], hidden, rng)?,
            b: store.add_uniform(format!("{name}.b"), &[4 * hidden], hidden, rng)?,
            input,
            hidden,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let w = store.id(&format!("{name}.w"))?;
        let u = store.id(&format!("{name}.u"))?;
        let b = store.id(&format!("{name}.b"))?;
        let (input, four_h) = (store.value(w).shape()[0], store.value(w).shape()[1]);
        Ok(Self {
            w,
            u,
            b,
            input,
            hidden: four_h / 4,
        })
    }

    /// One step for a batch: `x: [B, in]`, `h, c: [B, H]`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xv = g.value(x);
        if xv.cols() != self.input {
            return Err(Error::Dimension {
                op: "lstm_step",
                left: xv.shape().to_vec(),
                right: vec![self.input, 4 * self.hidden],
            });
        }
        let (w, u, b) = (g.param(self.w), g.param(self.u), g.param(self.b));
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(h, u)?;
        let z = g.add(xw, hu)?;
        let z = g.add_bias(z, b)?;
        let hd = self.hidden;
        let f = g.slice_cols(z, 0, hd)?;
        let i = g.slice_cols(z, hd, hd)?;
        let o = g.slice_cols(z, 2 * hd, hd)?;
        let cand = g.slice_cols(z, 3 * hd, hd)?;
        let (f, i, o) = (g.sigmoid(f), g.sigmoid(i), g.sigmoid(o));
        let cand = g.tanh(cand);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

/// GRU cell, gates ordered reset, update, candidate:
/// `r = σ(x Wr + h Ur + br)`, `z = σ(x Wz + h Uz + bz)`,
/// `n = tanh(x Wn + r ⊙ (h Un) + bn)`, `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(format!("{name}.w"), &[input, 3 * hidden], hidden, rng)?,
            u: store.add_uniform(format!("{name}.u"), &[hidden, 3 * hidden], hidden, rng)?,
            b: store.add_uniform(format!("{name}.b"), &[3 * hidden], hidden, rng)?,
            input,
            hidden,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let w = store.id(&format!("{name}.w"))?;
        let u = store.id(&format!("{name}.u"))?;
        let b = store.id(&format!("{name}.b"))?;
        let (input, three_h) = (store.value(w).shape()[0], store.value(w).shape()[1]);
        Ok(Self {
            w,
            u,
            b,
            input,
            hidden: three_h / 3,
        })
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let (w, u, b) = (g.param(self.w), g.param(self.u), g.param(self.b));
        let hd = self.hidden;
        let xw = g.matmul(x, w)?;
        let xw = g.add_bias(xw, b)?;
        let hu = g.matmul(h, u)?;
        let (xr, xz, xn) = (
            g.slice_cols(xw, 0, hd)?,
            g.slice_cols(xw, hd, hd)?,
            g.slice_cols(xw, 2 * hd, hd)?,
        );
        let (hr, hz, hn) = (
            g.slice_cols(hu, 0, hd)?,
            g.slice_cols(hu, hd, hd)?,
            g.slice_cols(hu, 2 * hd, hd)?,
        );
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn)?;
        let n = g.add(xn, rh)?;
        let n = g.tanh(n);
        let one_minus_z = g.one_minus(z);
        let a = g.mul(one_minus_z, n)?;
        let bz = g.mul(z, h)?;
        g.add(a, bz)
    }
}
