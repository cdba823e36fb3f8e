//! Plain forward-only kernels, shared by frozen encoders and eval-mode
//! scoring. Loop order matches the taped ops exactly so both paths produce
//! bit-identical values.

use super::tensor::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max-subtracted softmax; output sums to 1 within 1e-9 and is invariant
/// under adding a constant to the input.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (m, n) = (w.rows(), w.cols());
    debug_assert_eq!(n, x.len());
    let wd = w.data();
    let mut out = vec![0.0; m];
    for i in 0..m {
        let mut acc = 0.0;
        let base = i * n;
        for j in 0..n {
            acc += wd[base + j] * x[j];
        }
        out[i] = acc;
    }
    out
}

pub fn linear(w: &Tensor, x: &[f64], b: &Tensor) -> Vec<f64> {
    let mut out = matvec(w, x);
    for (o, bv) in out.iter_mut().zip(b.data()) {
        *o += bv;
    }
    out
}

/// LSTM weights viewed for a forward pass; gates stacked [i, f, g, o].
pub struct LstmWeights<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub b: &'a Tensor,
}

/// Forward LSTM over `inputs`; returns the hidden state after every step.
pub fn lstm_forward(w: &LstmWeights, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hidden = w.w_hh.cols();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let ih = matvec(w.w_ih, x);
        let hh = matvec(w.w_hh, &h);
        let bd = w.b.data();
        let mut c_new = vec![0.0; hidden];
        let mut h_new = vec![0.0; hidden];
        for k in 0..hidden {
            // Mirror the taped op order: (ih + hh) + b, then gate activations.
            let i = sigmoid((ih[k] + hh[k]) + bd[k]);
            let f = sigmoid((ih[hidden + k] + hh[hidden + k]) + bd[hidden + k]);
            let g = ((ih[2 * hidden + k] + hh[2 * hidden + k]) + bd[2 * hidden + k]).tanh();
            let o = sigmoid((ih[3 * hidden + k] + hh[3 * hidden + k]) + bd[3 * hidden + k]);
            c_new[k] = f * c[k] + i * g;
            h_new[k] = o * c_new[k].tanh();
        }
        c = c_new;
        h = h_new;
        out.push(h.clone());
    }
    out
}
