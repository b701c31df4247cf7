//! The five forecasters and their exact gradients.
//!
//! All trainable values of a model live in one flat `Vec<f64>` described by
//! a [`ParamLayout`]; gradients share the layout, so optimizers and
//! snapshots work on plain slices.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lstm::{backward_layer, run_layer, LstmGrads, LstmTrace, LstmWeights};
use super::{ModelConfig, OutputActivation, Variant};
use crate::dataset::Batch;
use crate::{Error, Result};

/// Shapes that determine a model's parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub variant: Variant,
    pub n_features: usize,
    pub n_label: usize,
    pub input_width: usize,
    pub label_width: usize,
    pub units: usize,
    pub activation: OutputActivation,
    /// Input column of each label feature.
    pub label_cols: Vec<usize>,
}

impl Architecture {
    pub fn from_config(cfg: &ModelConfig) -> Architecture {
        Architecture {
            variant: cfg.variant,
            n_features: cfg.combo.channels().len(),
            n_label: cfg.combo.label_channels().len(),
            input_width: cfg.window.input_width,
            label_width: cfg.window.label_width,
            units: cfg.units,
            activation: cfg.output_activation,
            label_cols: cfg.combo.label_columns(),
        }
    }

    pub fn lstm_layers(&self) -> usize {
        match self.variant {
            Variant::SingleShot | Variant::Feedback => 1,
            Variant::TwoLayer => 2,
            Variant::Baseline | Variant::Dense => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Order of tensors in the flat parameter vector:
/// `lstm0.w, lstm0.u, lstm0.b, [lstm1.w, lstm1.u, lstm1.b,] dense.w, dense.b`.
/// Matrices are row-major; LSTM gate columns are `[i | f | g | o]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn for_arch(arch: &Architecture) -> ParamLayout {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorSpec { name, rows, cols, offset });
            offset += rows * cols;
        };
        let h = arch.units;
        let out_full = arch.label_width * arch.n_label;
        match arch.variant {
            Variant::Baseline => {}
            Variant::Dense => {
                add("dense.w".into(), arch.input_width * arch.n_features, out_full);
                add("dense.b".into(), 1, out_full);
            }
            Variant::SingleShot | Variant::TwoLayer | Variant::Feedback => {
                for layer in 0..arch.lstm_layers() {
                    let input = if layer == 0 { arch.n_features } else { h };
                    add(format!("lstm{layer}.w"), input, 4 * h);
                    add(format!("lstm{layer}.u"), h, 4 * h);
                    add(format!("lstm{layer}.b"), 1, 4 * h);
                }
                let out = if arch.variant == Variant::Feedback { arch.n_label } else { out_full };
                add("dense.w".into(), h, out);
                add("dense.b".into(), 1, out);
            }
        }
        ParamLayout { tensors, total: offset }
    }

    /// Offset where the output head starts (everything before is LSTM).
    fn head_offset(&self) -> usize {
        self.tensors
            .iter()
            .find(|t| t.name == "dense.w")
            .map_or(self.total, |t| t.offset)
    }
}

/// Per-sequence dropout masks, fixed across time steps and already scaled
/// by `1 / (1 − rate)`. One `(input, recurrent)` pair per LSTM layer.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub layers: Vec<(Array2<f64>, Array2<f64>)>,
}

impl DropoutMasks {
    pub fn sample<R: Rng>(arch: &Architecture, batch: usize, rate: f64, rng: &mut R) -> Option<DropoutMasks> {
        if rate <= 0.0 || arch.lstm_layers() == 0 {
            return None;
        }
        let keep = 1.0 - rate;
        let mut mask = |cols: usize| {
            Array2::from_shape_fn((batch, cols), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        };
        let layers = (0..arch.lstm_layers())
            .map(|l| {
                let input = if l == 0 { arch.n_features } else { arch.units };
                (mask(input), mask(arch.units))
            })
            .collect();
        Some(DropoutMasks { layers })
    }

    /// Rows `range` of every mask.
    pub fn rows(&self, range: std::ops::Range<usize>) -> DropoutMasks {
        DropoutMasks {
            layers: self
                .layers
                .iter()
                .map(|(x, h)| (x.slice(s![range.clone(), ..]).to_owned(), h.slice(s![range.clone(), ..]).to_owned()))
                .collect(),
        }
    }

    fn layer(&self, l: usize) -> (Option<&Array2<f64>>, Option<&Array2<f64>>) {
        let (x, h) = &self.layers[l];
        (Some(x), Some(h))
    }
}

fn masks_for(masks: Option<&DropoutMasks>, layer: usize) -> (Option<&Array2<f64>>, Option<&Array2<f64>>) {
    masks.map_or((None, None), |m| m.layer(layer))
}

/// Forward-pass caches needed by [`Model::backward`].
pub struct Tape {
    traces: Vec<LstmTrace>,
    /// Inputs to the output head, one per head evaluation.
    head_in: Vec<Array2<f64>>,
    head_pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub layout: ParamLayout,
    params: Vec<f64>,
}

impl Model {
    pub fn zeros(arch: Architecture) -> Model {
        let layout = ParamLayout::for_arch(&arch);
        let params = vec![0.0; layout.total];
        Model { arch, layout, params }
    }

    /// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
    pub fn init(arch: Architecture, seed: u64) -> Model {
        let mut model = Model::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = model.arch.units;
        for t in model.layout.tensors.clone() {
            let vals = &mut model.params[t.range()];
            if t.name.ends_with(".b") {
                if t.name.starts_with("lstm") {
                    vals[h..2 * h].fill(1.0);
                }
                continue;
            }
            let limit = (6.0 / (t.rows + t.cols) as f64).sqrt();
            for v in vals.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        model
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Model> {
        let layout = ParamLayout::for_arch(&arch);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", layout.total),
                actual: format!("{} parameters", params.len()),
            });
        }
        Ok(Model { arch, layout, params })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn tensor(&self, name: &str) -> ArrayView2<'_, f64> {
        let t = self.layout.tensors.iter().find(|t| t.name == name).expect("tensor exists");
        ArrayView2::from_shape((t.rows, t.cols), &self.params[t.range()]).unwrap()
    }

    fn lstm(&self, layer: usize) -> LstmWeights<'_> {
        LstmWeights {
            w: self.tensor(&format!("lstm{layer}.w")),
            u: self.tensor(&format!("lstm{layer}.u")),
            b: self.tensor(&format!("lstm{layer}.b")).index_axis_move(Axis(0), 0),
        }
    }

    fn head(&self) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        (self.tensor("dense.w"), self.tensor("dense.b").index_axis_move(Axis(0), 0))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let (iw, _, nf) = batch.input.dim();
        if iw != self.arch.input_width || nf != self.arch.n_features {
            return Err(Error::ShapeMismatch {
                expected: format!("input [{}, _, {}]", self.arch.input_width, self.arch.n_features),
                actual: format!("input [{iw}, _, {nf}]"),
            });
        }
        Ok(())
    }

    fn apply_head(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (w, b) = self.head();
        let mut pre = Array2::zeros((x.nrows(), w.ncols()));
        pre.rows_mut().into_iter().for_each(|mut r| r.assign(&b));
        general_mat_mul(1.0, x, &w, 1.0, &mut pre);
        let out = match self.arch.activation {
            OutputActivation::Linear => pre.clone(),
            OutputActivation::Relu => pre.mapv(|v| v.max(0.0)),
        };
        (pre, out)
    }

    fn unflatten(&self, flat: &Array2<f64>) -> Array3<f64> {
        let b = flat.nrows();
        flat.to_shape((b, self.arch.label_width, self.arch.n_label)).unwrap().to_owned()
    }

    /// Inference-mode prediction `[batch, label_width, n_label]`.
    pub fn predict(&self, batch: &Batch) -> Result<Array3<f64>> {
        Ok(self.forward(batch, None)?.0)
    }

    /// Forward pass keeping the caches for [`Model::backward`].
    pub fn forward(&self, batch: &Batch, masks: Option<&DropoutMasks>) -> Result<(Array3<f64>, Tape)> {
        self.check_batch(batch)?;
        match self.arch.variant {
            Variant::Feedback => {
                Ok(self.forward_feedback(batch.input.view(), batch.decoder_exog.view(), self.arch.label_width, masks))
            }
            _ => Ok(self.forward_direct(batch, masks)),
        }
    }

    fn forward_direct(&self, batch: &Batch, masks: Option<&DropoutMasks>) -> (Array3<f64>, Tape) {
        let (iw, b, nf) = batch.input.dim();
        let a = &self.arch;
        let mut tape = Tape { traces: Vec::new(), head_in: Vec::new(), head_pre: Vec::new() };
        match a.variant {
            Variant::Baseline => {
                let last = batch.input.index_axis(Axis(0), iw - 1);
                let pred = Array3::from_shape_fn((b, a.label_width, a.n_label), |(n, _, j)| last[[n, a.label_cols[j]]]);
                return (pred, tape);
            }
            Variant::Dense => {
                let flat = Array2::from_shape_fn((b, iw * nf), |(n, k)| batch.input[[k / nf, n, k % nf]]);
                let (pre, out) = self.apply_head(&flat);
                tape.head_in.push(flat);
                tape.head_pre.push(pre);
                return (self.unflatten(&out), tape);
            }
            _ => {}
        }
        let steps = |inp: &Array3<f64>| inp.outer_iter().map(|v| v.to_owned()).collect::<Vec<_>>();
        let (xm, hm) = masks_for(masks, 0);
        let mut trace = run_layer(&self.lstm(0), steps(&batch.input).into_iter(), b, iw, xm, hm);
        if a.variant == Variant::TwoLayer {
            tape.traces.push(trace);
            let (xm, hm) = masks_for(masks, 1);
            let inputs = tape.traces[0].h.clone();
            trace = run_layer(&self.lstm(1), inputs.into_iter(), b, iw, xm, hm);
        }
        let last = trace.last_h();
        tape.traces.push(trace);
        let (pre, out) = self.apply_head(&last);
        tape.head_in.push(last);
        tape.head_pre.push(pre);
        (self.unflatten(&out), tape)
    }

    /// Autoregressive decoding for `horizon` steps. `exog[k]` supplies the
    /// non-label inputs for decoding step `k + 1`.
    fn forward_feedback(
        &self,
        input: ArrayView3<'_, f64>,
        exog: ArrayView3<'_, f64>,
        horizon: usize,
        masks: Option<&DropoutMasks>,
    ) -> (Array3<f64>, Tape) {
        let (iw, b, _) = input.dim();
        let a = &self.arch;
        let wts = self.lstm(0);
        let (xm, hm) = masks_for(masks, 0);
        let mut trace = LstmTrace::new(b, a.units, iw + horizon - 1);
        let masked = |x: Array2<f64>| match xm {
            Some(m) => x * m,
            None => x,
        };
        for x in input.outer_iter() {
            let h_prev = trace.last_h();
            trace.push(&wts, masked(x.to_owned()), h_prev.view(), hm);
        }
        let mut pred = Array3::zeros((b, horizon, a.n_label));
        let mut tape = Tape { traces: Vec::new(), head_in: Vec::new(), head_pre: Vec::new() };
        for k in 0..horizon {
            let h = trace.last_h();
            let (pre, out) = self.apply_head(&h);
            pred.index_axis_mut(Axis(1), k).assign(&out);
            tape.head_in.push(h);
            tape.head_pre.push(pre);
            if k + 1 < horizon {
                let mut x = exog.index_axis(Axis(0), k).to_owned();
                for (j, &col) in a.label_cols.iter().enumerate() {
                    x.column_mut(col).assign(&out.column(j));
                }
                let h_prev = trace.last_h();
                trace.push(&wts, masked(x), h_prev.view(), hm);
            }
        }
        tape.traces.push(trace);
        (pred, tape)
    }

    /// Feedback-variant forecast over an arbitrary horizon.
    /// `input: [input_width, batch, n_features]`, `exog: [horizon − 1, batch, n_features]`.
    pub fn predict_feedback(&self, input: ArrayView3<'_, f64>, exog: ArrayView3<'_, f64>, horizon: usize) -> Result<Array3<f64>> {
        if self.arch.variant != Variant::Feedback {
            return Err(Error::param("arbitrary horizons need the feedback variant"));
        }
        if horizon == 0 || exog.dim().0 + 1 < horizon || input.dim().0 != self.arch.input_width {
            return Err(Error::ShapeMismatch {
                expected: format!("input width {} and {} exogenous rows", self.arch.input_width, horizon.saturating_sub(1)),
                actual: format!("input width {} and {} exogenous rows", input.dim().0, exog.dim().0),
            });
        }
        Ok(self.forward_feedback(input, exog, horizon, None).0)
    }

    fn head_backward(
        &self,
        tape: &Tape,
        idx: usize,
        dy: &Array2<f64>,
        gw: &mut ArrayViewMut2<'_, f64>,
        gb: &mut ArrayViewMut1<'_, f64>,
    ) -> Array2<f64> {
        let pre = &tape.head_pre[idx];
        let dpre = match self.arch.activation {
            OutputActivation::Linear => dy.clone(),
            OutputActivation::Relu => ndarray::Zip::from(dy).and(pre).map_collect(|d, p| if *p > 0.0 { *d } else { 0.0 }),
        };
        general_mat_mul(1.0, &tape.head_in[idx].t(), &dpre, 1.0, gw);
        for (b, col) in gb.iter_mut().zip(dpre.columns()) {
            *b += col.sum();
        }
        let (w, _) = self.head();
        dpre.dot(&w.t())
    }

    /// Gradient of `Σ dpred ⊙ pred` w.r.t. every parameter, i.e. the
    /// parameter gradient given the loss gradient `dpred` w.r.t. the output.
    pub fn backward(&self, tape: &Tape, dpred: &Array3<f64>, masks: Option<&DropoutMasks>) -> Vec<f64> {
        let mut grads = vec![0.0; self.layout.total];
        if self.arch.variant == Variant::Baseline {
            return grads;
        }
        let head_at = self.layout.head_offset();
        let (lstm_buf, head_buf) = grads.split_at_mut(head_at);
        let hw = self.tensor("dense.w").dim();
        let (gw_buf, gb_buf) = head_buf.split_at_mut(hw.0 * hw.1);
        let mut gw = ArrayViewMut2::from_shape(hw, gw_buf).unwrap();
        let mut gb = ArrayViewMut1::from_shape(gb_buf.len(), gb_buf).unwrap();
        let b = dpred.dim().0;

        match self.arch.variant {
            Variant::Dense => {
                let flat = dpred.to_shape((b, self.arch.label_width * self.arch.n_label)).unwrap().to_owned();
                self.head_backward(tape, 0, &flat, &mut gw, &mut gb);
            }
            Variant::SingleShot | Variant::TwoLayer => {
                let flat = dpred.to_shape((b, self.arch.label_width * self.arch.n_label)).unwrap().to_owned();
                let dh_last = self.head_backward(tape, 0, &flat, &mut gw, &mut gb);
                let layers = self.arch.lstm_layers();
                let mut bufs = split_lstm_grads(&self.layout, lstm_buf, layers);
                let mut dh_ext: Vec<Option<Array2<f64>>> = vec![None; self.arch.input_width];
                dh_ext[self.arch.input_width - 1] = Some(dh_last);
                for l in (0..layers).rev() {
                    let (xm, hm) = masks_for(masks, l);
                    let dxs = backward_layer(&tape.traces[l], &self.lstm(l), &mut bufs[l], &dh_ext, xm, hm, l > 0);
                    dh_ext = dxs;
                }
            }
            Variant::Feedback => {
                let mut bufs = split_lstm_grads(&self.layout, lstm_buf, 1);
                let trace = &tape.traces[0];
                let wts = self.lstm(0);
                let (xm, hm) = masks_for(masks, 0);
                let iw = self.arch.input_width;
                let horizon = dpred.dim().1;
                let mut dh = Array2::zeros((b, self.arch.units));
                let mut dc = Array2::zeros((b, self.arch.units));
                let mut carry: Option<Array2<f64>> = None;
                for k in (0..horizon).rev() {
                    let mut dy = dpred.index_axis(Axis(1), k).to_owned();
                    if let Some(c) = carry.take() {
                        dy += &c;
                    }
                    dh += &self.head_backward(tape, k, &dy, &mut gw, &mut gb);
                    let dx = trace.backward_step(iw - 1 + k, &wts, &mut bufs[0], &mut dh, &mut dc, xm, hm, k > 0);
                    if let Some(dx) = dx {
                        carry = Some(Array2::from_shape_fn((b, self.arch.n_label), |(n, j)| dx[[n, self.arch.label_cols[j]]]));
                    }
                }
                for t in (0..iw - 1).rev() {
                    trace.backward_step(t, &wts, &mut bufs[0], &mut dh, &mut dc, xm, hm, false);
                }
            }
            Variant::Baseline => unreachable!(),
        }
        grads
    }
}

fn split_lstm_grads<'a>(layout: &ParamLayout, mut buf: &'a mut [f64], layers: usize) -> Vec<LstmGrads<'a>> {
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let find = |suffix: &str| {
            layout
                .tensors
                .iter()
                .find(|t| t.name == format!("lstm{l}.{suffix}"))
                .expect("layer tensor")
                .clone()
        };
        let (w, u, b) = (find("w"), find("u"), find("b"));
        let (wb, rest) = std::mem::take(&mut buf).split_at_mut(w.len());
        let (ub, rest) = rest.split_at_mut(u.len());
        let (bb, rest) = rest.split_at_mut(b.len());
        buf = rest;
        out.push(LstmGrads {
            w: ArrayViewMut2::from_shape((w.rows, w.cols), wb).unwrap(),
            u: ArrayViewMut2::from_shape((u.rows, u.cols), ub).unwrap(),
            b: ArrayViewMut1::from_shape(b.len(), bb).unwrap(),
        });
    }
    out
}
