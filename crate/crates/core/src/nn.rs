//! Small layers built on the tape: dense, LSTM, affine layer norm.

use rand::Rng;
use strokesel_tape::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Glorot-uniform weights `[fan_in, fan_out]`, zero bias.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-lim..lim)).collect();
        Self {
            w: store.add(format!("{name}.w"), Tensor::new([fan_in, fan_out], w).expect("sized")),
            b: store.add(format!("{name}.b"), Tensor::zeros([1, fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }
}

/// Row-wise layer norm with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled([1, dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([1, dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.layer_norm_rows(x, Self::EPS)?;
        let (g, b) = (tape.param(store, self.gain), tape.param(store, self.bias));
        let y = tape.mul_row(n, g)?;
        Ok(tape.add_row(y, b)?)
    }
}

/// Single-layer LSTM, gate order `[i, f, g, o]`.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let lim_x = (1.0 / input as f64).sqrt();
        let lim_h = (1.0 / hidden as f64).sqrt();
        let w_x = (0..input * 4 * hidden).map(|_| rng.gen_range(-lim_x..lim_x)).collect();
        let w_h = (0..hidden * 4 * hidden).map(|_| rng.gen_range(-lim_h..lim_h)).collect();
        let mut b = vec![0.0; 4 * hidden];
        // forget-gate bias of 1
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Self {
            w_x: store.add(format!("{name}.w_x"), Tensor::new([input, 4 * hidden], w_x).expect("sized")),
            w_h: store.add(format!("{name}.w_h"), Tensor::new([hidden, 4 * hidden], w_h).expect("sized")),
            b: store.add(format!("{name}.b"), Tensor::new([1, 4 * hidden], b).expect("sized")),
            input,
            hidden,
        }
    }

    /// One step for a batch: `x_proj` is the already projected input
    /// `[n, 4h]` (bias included).
    fn cell(&self, tape: &mut Tape, w_h: Var, x_proj: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let rec = tape.matmul(h, w_h)?;
        let z = tape.add(x_proj, rec)?;
        let zi = tape.slice_cols(z, 0, hd)?;
        let zf = tape.slice_cols(z, hd, hd)?;
        let zg = tape.slice_cols(z, 2 * hd, hd)?;
        let zo = tape.slice_cols(z, 3 * hd, hd)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c2 = tape.add(fc, ig)?;
        let tc = tape.tanh(c2)?;
        let h2 = tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Runs a single sequence `[n, input]` and returns the final hidden
    /// state `[1, hidden]`.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, xs: Var) -> Result<Var> {
        let n = tape.shape(xs)[0];
        let (w_x, w_h, b) = (
            tape.param(store, self.w_x),
            tape.param(store, self.w_h),
            tape.param(store, self.b),
        );
        let proj = tape.matmul(xs, w_x)?;
        let proj = tape.add_row(proj, b)?;
        let mut h = tape.constant(Tensor::zeros([1, self.hidden]))?;
        let mut c = tape.constant(Tensor::zeros([1, self.hidden]))?;
        for t in 0..n {
            let xt = tape.gather_rows(proj, &[t])?;
            (h, c) = self.cell(tape, w_h, xt, h, c)?;
        }
        Ok(h)
    }

    /// Runs several sequences of different lengths side by side and returns
    /// the final hidden state of each, `[seqs.len(), hidden]`. Rows whose
    /// sequence has ended are carried through unchanged.
    pub fn run_batched(&self, tape: &mut Tape, store: &ParamStore, seqs: &[Tensor]) -> Result<Var> {
        let k = seqs.len();
        let hd = self.hidden;
        let steps = seqs.iter().map(Tensor::rows).max().unwrap_or(0);
        let (w_x, w_h, b) = (
            tape.param(store, self.w_x),
            tape.param(store, self.w_h),
            tape.param(store, self.b),
        );
        let mut h = tape.constant(Tensor::zeros([k, hd]))?;
        let mut c = tape.constant(Tensor::zeros([k, hd]))?;
        for t in 0..steps {
            let mut xt = vec![0.0; k * self.input];
            let mut keep = vec![0.0; k * hd];
            let mut all_live = true;
            for (r, s) in seqs.iter().enumerate() {
                if t < s.rows() {
                    xt[r * self.input..(r + 1) * self.input]
                        .copy_from_slice(&s.data()[t * self.input..(t + 1) * self.input]);
                    keep[r * hd..(r + 1) * hd].iter_mut().for_each(|v| *v = 1.0);
                } else {
                    all_live = false;
                }
            }
            let xt = tape.constant(Tensor::new([k, self.input], xt)?)?;
            let proj = tape.matmul(xt, w_x)?;
            let proj = tape.add_row(proj, b)?;
            let (h2, c2) = self.cell(tape, w_h, proj, h, c)?;
            if all_live {
                (h, c) = (h2, c2);
            } else {
                // h <- h + keep * (h2 - h)
                let m = tape.constant(Tensor::new([k, hd], keep)?)?;
                let dh = tape.sub(h2, h)?;
                let dh = tape.mul(m, dh)?;
                let dc = tape.sub(c2, c)?;
                let dc = tape.mul(m, dc)?;
                h = tape.add(h, dh)?;
                c = tape.add(c, dc)?;
            }
        }
        Ok(h)
    }
}
