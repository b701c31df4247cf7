//! Batched LSTM layer with step-wise forward and backward passes.
//!
//! Gate columns are laid out `[i | f | g | o]`, each `hidden` wide. Inputs
//! are multiplied from the left: `z = x·W + h·U + b` with `W: [input, 4H]`,
//! `U: [H, 4H]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Zip};

use crate::{Error, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed weights of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w: ArrayView2<'a, f64>,
    pub u: ArrayView2<'a, f64>,
    pub b: ArrayView1<'a, f64>,
}

impl LstmWeights<'_> {
    pub fn hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }
}

/// Owned weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            w: Array2::zeros((input_dim, 4 * hidden)),
            u: Array2::zeros((hidden, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn view(&self) -> LstmWeights<'_> {
        LstmWeights { w: self.w.view(), u: self.u.view(), b: self.b.view() }
    }
}

/// Gradient buffers of one layer.
pub struct LstmGrads<'a> {
    pub w: ArrayViewMut2<'a, f64>,
    pub u: ArrayViewMut2<'a, f64>,
    pub b: ArrayViewMut1<'a, f64>,
}

/// Single-example cell update. Returns `(h_t, c_t)`.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hsz = params.hidden();
    if x.len() != params.w.nrows() || h_prev.len() != hsz || c_prev.len() != hsz {
        return Err(Error::ShapeMismatch {
            expected: format!("x[{}], h[{hsz}], c[{hsz}]", params.w.nrows()),
            actual: format!("x[{}], h[{}], c[{}]", x.len(), h_prev.len(), c_prev.len()),
        });
    }
    let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
    let mut trace = LstmTrace::new(1, hsz, 1);
    trace.c0 = row(c_prev);
    trace.push(&params.view(), row(x), row(h_prev).view(), None);
    let h = trace.h[0].row(0).to_vec();
    let c = trace.c[0].row(0).to_vec();
    if h.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LSTM activation".into()));
    }
    Ok((h, c))
}

/// Cached activations of one layer over a sequence, batch-major within a step.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    hidden: usize,
    batch: usize,
    c0: Array2<f64>,
    /// Inputs as used, i.e. after input dropout.
    pub x: Vec<Array2<f64>>,
    /// Previous hidden state as used, i.e. after recurrent dropout.
    hin: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
    pub h: Vec<Array2<f64>>,
}

impl LstmTrace {
    pub fn new(batch: usize, hidden: usize, capacity: usize) -> Self {
        LstmTrace {
            hidden,
            batch,
            c0: Array2::zeros((batch, hidden)),
            x: Vec::with_capacity(capacity),
            hin: Vec::with_capacity(capacity),
            gates: Vec::with_capacity(capacity),
            c: Vec::with_capacity(capacity),
            h: Vec::with_capacity(capacity),
        }
    }

    pub fn steps(&self) -> usize {
        self.h.len()
    }

    /// Hidden state after the last step (zeros before any step).
    pub fn last_h(&self) -> Array2<f64> {
        self.h.last().cloned().unwrap_or_else(|| Array2::zeros((self.batch, self.hidden)))
    }

    /// Advance one step. `x` must already carry any input dropout; `hmask`
    /// is the recurrent dropout mask (already scaled).
    pub fn push(&mut self, wts: &LstmWeights<'_>, x: Array2<f64>, h_prev: ArrayView2<'_, f64>, hmask: Option<&Array2<f64>>) {
        let hsz = self.hidden;
        let hin = match hmask {
            Some(m) => &h_prev * m,
            None => h_prev.to_owned(),
        };
        let mut z = Array2::zeros((self.batch, 4 * hsz));
        z.rows_mut().into_iter().for_each(|mut r| r.assign(&wts.b));
        general_mat_mul(1.0, &x, &wts.w, 1.0, &mut z);
        general_mat_mul(1.0, &hin, &wts.u, 1.0, &mut z);

        let c_prev = self.c.last().unwrap_or(&self.c0);
        let mut c = Array2::zeros((self.batch, hsz));
        let mut h = Array2::zeros((self.batch, hsz));
        for n in 0..self.batch {
            let zr = z.row_mut(n).into_slice().unwrap();
            for v in &mut zr[..2 * hsz] {
                *v = sigmoid(*v);
            }
            for v in &mut zr[2 * hsz..3 * hsz] {
                *v = v.tanh();
            }
            for v in &mut zr[3 * hsz..] {
                *v = sigmoid(*v);
            }
            let cp = c_prev.row(n);
            let mut cr = c.row_mut(n);
            let mut hr = h.row_mut(n);
            for k in 0..hsz {
                let ct = zr[hsz + k] * cp[k] + zr[k] * zr[2 * hsz + k];
                cr[k] = ct;
                hr[k] = zr[3 * hsz + k] * ct.tanh();
            }
        }
        self.x.push(x);
        self.hin.push(hin);
        self.gates.push(z);
        self.c.push(c);
        self.h.push(h);
    }

    /// Backpropagate through step `t` given the total gradients w.r.t. `h_t`
    /// and `c_t`. Accumulates weight gradients, overwrites `dh`/`dc` with the
    /// gradients w.r.t. `h_{t-1}`/`c_{t-1}` and returns the gradient w.r.t.
    /// the (pre-dropout) input when `want_dx` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_step(
        &self,
        t: usize,
        wts: &LstmWeights<'_>,
        grads: &mut LstmGrads<'_>,
        dh: &mut Array2<f64>,
        dc: &mut Array2<f64>,
        xmask: Option<&Array2<f64>>,
        hmask: Option<&Array2<f64>>,
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        let hsz = self.hidden;
        let gates = &self.gates[t];
        let c_t = &self.c[t];
        let c_prev = if t == 0 { &self.c0 } else { &self.c[t - 1] };
        let mut dz = Array2::zeros((self.batch, 4 * hsz));
        for n in 0..self.batch {
            let g = gates.row(n);
            let g = g.as_slice().unwrap();
            let dzr = dz.row_mut(n).into_slice().unwrap();
            let mut dhr = dh.row_mut(n);
            let mut dcr = dc.row_mut(n);
            for k in 0..hsz {
                let (ig, fg, gg, og) = (g[k], g[hsz + k], g[2 * hsz + k], g[3 * hsz + k]);
                let tc = c_t[[n, k]].tanh();
                let dhk = dhr[k];
                let dct = dcr[k] + dhk * og * (1.0 - tc * tc);
                dzr[k] = dct * gg * ig * (1.0 - ig);
                dzr[hsz + k] = dct * c_prev[[n, k]] * fg * (1.0 - fg);
                dzr[2 * hsz + k] = dct * ig * (1.0 - gg * gg);
                dzr[3 * hsz + k] = dhk * tc * og * (1.0 - og);
                dcr[k] = dct * fg;
                dhr[k] = 0.0;
            }
        }
        general_mat_mul(1.0, &self.x[t].t(), &dz, 1.0, &mut grads.w);
        general_mat_mul(1.0, &self.hin[t].t(), &dz, 1.0, &mut grads.u);
        Zip::from(&mut grads.b).and(dz.columns()).for_each(|b, col| *b += col.sum());

        general_mat_mul(1.0, &dz, &wts.u.t(), 0.0, dh);
        if let Some(m) = hmask {
            *dh *= m;
        }
        want_dx.then(|| {
            let mut dx = dz.dot(&wts.w.t());
            if let Some(m) = xmask {
                dx *= m;
            }
            dx
        })
    }
}

/// Run a layer over a time-major input `[T, B, in]` (slices per step).
pub fn run_layer(
    wts: &LstmWeights<'_>,
    inputs: impl Iterator<Item = Array2<f64>>,
    batch: usize,
    steps: usize,
    xmask: Option<&Array2<f64>>,
    hmask: Option<&Array2<f64>>,
) -> LstmTrace {
    let mut trace = LstmTrace::new(batch, wts.hidden(), steps);
    for x in inputs {
        let x = match xmask {
            Some(m) => x * m,
            None => x,
        };
        let h_prev = trace.last_h();
        trace.push(wts, x, h_prev.view(), hmask);
    }
    trace
}

/// Backpropagate a whole sequence. `dh_ext[t]` is the gradient flowing into
/// `h_t` from outside the layer. Returns input gradients per step when
/// `want_dx` is set.
pub fn backward_layer(
    trace: &LstmTrace,
    wts: &LstmWeights<'_>,
    grads: &mut LstmGrads<'_>,
    dh_ext: &[Option<Array2<f64>>],
    xmask: Option<&Array2<f64>>,
    hmask: Option<&Array2<f64>>,
    want_dx: bool,
) -> Vec<Option<Array2<f64>>> {
    let steps = trace.steps();
    let mut dh = Array2::zeros((trace.batch, trace.hidden));
    let mut dc = Array2::zeros((trace.batch, trace.hidden));
    let mut dxs = vec![None; steps];
    for t in (0..steps).rev() {
        if let Some(Some(ext)) = dh_ext.get(t) {
            dh += ext;
        }
        dxs[t] = trace.backward_step(t, wts, grads, &mut dh, &mut dc, xmask, hmask, want_dx);
    }
    dxs
}
