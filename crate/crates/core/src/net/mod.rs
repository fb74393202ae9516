//! Single-layer LSTM regressor with a linear scalar head.
//!
//! Parameters live in one flat buffer so the optimizer and the finite
//! difference checker can treat them uniformly. Layout, with `H` hidden units
//! and `D` inputs, gate blocks ordered input | forget | cell | output:
//!
//! ```text
//! w       4H x D   row-major
//! u       4H x H   row-major
//! b       4H
//! head_w  H
//! head_b  1
//! ```

mod gradcheck;
mod train;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use train::{
    build_samples, evaluate_samples, predict_ori_series, predict_tot, train, Checkpoint, ReadinessModel, SampleSet,
    Target, TrainConfig, TrainReport, CHECKPOINT_FORMAT,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct RecurrentModel {
    input_dim: usize,
    hidden_dim: usize,
    params: Vec<f64>,
}

/// Serialized form: named parameter arrays.
#[derive(Serialize, Deserialize)]
struct ModelRecord {
    input_dim: usize,
    hidden_dim: usize,
    w: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
    head_w: Vec<f64>,
    head_b: f64,
}

impl TryFrom<ModelRecord> for RecurrentModel {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        let mut m = RecurrentModel::zeros(r.input_dim, r.hidden_dim)?;
        let (h, d) = (r.hidden_dim, r.input_dim);
        let expect = [
            (r.w.len(), 4 * h * d),
            (r.u.len(), 4 * h * h),
            (r.b.len(), 4 * h),
            (r.head_w.len(), h),
        ];
        for (actual, expected) in expect {
            if actual != expected {
                return Err(Error::DimensionMismatch { expected, actual });
            }
        }
        let mut params = r.w;
        params.extend(r.u);
        params.extend(r.b);
        params.extend(r.head_w);
        params.push(r.head_b);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        m.params = params;
        Ok(m)
    }
}

impl From<RecurrentModel> for ModelRecord {
    fn from(m: RecurrentModel) -> Self {
        let v = m.views();
        ModelRecord {
            input_dim: m.input_dim,
            hidden_dim: m.hidden_dim,
            w: v.w.to_vec(),
            u: v.u.to_vec(),
            b: v.b.to_vec(),
            head_w: v.head_w.to_vec(),
            head_b: v.head_b,
        }
    }
}

struct Views<'a> {
    w: &'a [f64],
    u: &'a [f64],
    b: &'a [f64],
    head_w: &'a [f64],
    head_b: f64,
}

struct ViewsMut<'a> {
    w: &'a mut [f64],
    u: &'a mut [f64],
    b: &'a mut [f64],
    head_w: &'a mut [f64],
    head_b: &'a mut f64,
}

fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
    4 * hidden_dim * (input_dim + hidden_dim + 1) + hidden_dim + 1
}

fn split_mut(buf: &mut [f64], d: usize, h: usize) -> ViewsMut<'_> {
    let (w, rest) = buf.split_at_mut(4 * h * d);
    let (u, rest) = rest.split_at_mut(4 * h * h);
    let (b, rest) = rest.split_at_mut(4 * h);
    let (head_w, rest) = rest.split_at_mut(h);
    ViewsMut {
        w,
        u,
        b,
        head_w,
        head_b: &mut rest[0],
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Activations kept from a forward pass for backpropagation. Reusable across
/// calls to avoid reallocating.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    steps: usize,
    /// Per step: i, f, g, o gate activations (4H).
    gates: Vec<f64>,
    /// Cell state after each step (H), plus a leading zero state.
    cells: Vec<f64>,
    /// Hidden state after each step (H), plus a leading zero state.
    hidden: Vec<f64>,
    /// tanh(c_t) per step (H).
    tanh_c: Vec<f64>,
    preact: Vec<f64>,
}

impl RecurrentModel {
    /// All-zero parameters.
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(RecurrentModel {
            input_dim,
            hidden_dim,
            params: vec![0.0; param_count(input_dim, hidden_dim)],
        })
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) everywhere except the forget-gate bias
    /// block, which starts at +1.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(input_dim, hidden_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for p in m.params.iter_mut() {
            *p = rng.random_range(-bound..bound);
        }
        let h = hidden_dim;
        split_mut(&mut m.params, input_dim, h).b[h..2 * h].fill(1.0);
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn head_bias(&self) -> f64 {
        *self.params.last().unwrap()
    }

    pub fn set_head_bias(&mut self, value: f64) {
        *self.params.last_mut().unwrap() = value;
    }

    fn views(&self) -> Views<'_> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let (w, rest) = self.params.split_at(4 * h * d);
        let (u, rest) = rest.split_at(4 * h * h);
        let (b, rest) = rest.split_at(4 * h);
        let (head_w, rest) = rest.split_at(h);
        Views {
            w,
            u,
            b,
            head_w,
            head_b: rest[0],
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<usize> {
        if window.is_empty() {
            return Err(Error::Empty("window"));
        }
        if window.len() % self.input_dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: window.len() % self.input_dim,
            });
        }
        if window.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("window"));
        }
        Ok(window.len() / self.input_dim)
    }

    /// Runs the recurrence over a row-major `T x D` window from a zero state
    /// and returns `head_w . h_T + head_b`.
    pub fn forward_window(&self, window: &[f64]) -> Result<f64> {
        self.check_window(window)?;
        let mut tape = Tape::default();
        Ok(self.forward_tape(window, &mut tape))
    }

    /// Forward pass recording activations. `window` must already be checked.
    pub fn forward_tape(&self, window: &[f64], tape: &mut Tape) -> f64 {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let steps = window.len() / d;
        let v = self.views();
        tape.steps = steps;
        tape.gates.resize(steps * 4 * h, 0.0);
        tape.tanh_c.resize(steps * h, 0.0);
        tape.cells.resize((steps + 1) * h, 0.0);
        tape.hidden.resize((steps + 1) * h, 0.0);
        tape.preact.resize(4 * h, 0.0);
        tape.cells[..h].fill(0.0);
        tape.hidden[..h].fill(0.0);

        for t in 0..steps {
            let x = &window[t * d..(t + 1) * d];
            let h_prev = &tape.hidden[t * h..(t + 1) * h];
            for (r, z) in tape.preact.iter_mut().enumerate() {
                *z = v.b[r] + dot(&v.w[r * d..(r + 1) * d], x) + dot(&v.u[r * h..(r + 1) * h], h_prev);
            }
            let gates = &mut tape.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                gates[j] = sigmoid(tape.preact[j]);
                gates[h + j] = sigmoid(tape.preact[h + j]);
                gates[2 * h + j] = tape.preact[2 * h + j].tanh();
                gates[3 * h + j] = sigmoid(tape.preact[3 * h + j]);
            }
            let (before, after) = tape.cells.split_at_mut((t + 1) * h);
            let c_prev = &before[t * h..];
            let c = &mut after[..h];
            let (_, hidden_after) = tape.hidden.split_at_mut((t + 1) * h);
            let tanh_c = &mut tape.tanh_c[t * h..(t + 1) * h];
            for j in 0..h {
                c[j] = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
                tanh_c[j] = c[j].tanh();
                hidden_after[j] = gates[3 * h + j] * tanh_c[j];
            }
        }
        let h_last = &tape.hidden[steps * h..(steps + 1) * h];
        dot(v.head_w, h_last) + v.head_b
    }

    /// Accumulates `d_pred * d(prediction)/d(params)` into `grads` using the
    /// activations of the preceding [`forward_tape`](Self::forward_tape) call.
    pub fn backward_tape(&self, window: &[f64], tape: &Tape, d_pred: f64, grads: &mut [f64]) {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let steps = tape.steps;
        let v = self.views();
        let g = split_mut(grads, d, h);

        let h_last = &tape.hidden[steps * h..(steps + 1) * h];
        axpy(d_pred, h_last, g.head_w);
        *g.head_b += d_pred;

        let mut dh: Vec<f64> = v.head_w.iter().map(|w| d_pred * w).collect();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let mut dh_prev = vec![0.0; h];
        for t in (0..steps).rev() {
            let x = &window[t * d..(t + 1) * d];
            let h_prev = &tape.hidden[t * h..(t + 1) * h];
            let c_prev = &tape.cells[t * h..(t + 1) * h];
            let gates = &tape.gates[t * 4 * h..(t + 1) * 4 * h];
            let tanh_c = &tape.tanh_c[t * h..(t + 1) * h];
            for j in 0..h {
                let (i, f, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let d_o = dh[j] * tanh_c[j];
                dc[j] += dh[j] * o * (1.0 - tanh_c[j] * tanh_c[j]);
                let d_i = dc[j] * gg;
                let d_g = dc[j] * i;
                let d_f = dc[j] * c_prev[j];
                dz[j] = d_i * i * (1.0 - i);
                dz[h + j] = d_f * f * (1.0 - f);
                dz[2 * h + j] = d_g * (1.0 - gg * gg);
                dz[3 * h + j] = d_o * o * (1.0 - o);
                dc[j] *= f;
            }
            dh_prev.fill(0.0);
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                axpy(dzr, x, &mut g.w[r * d..(r + 1) * d]);
                axpy(dzr, h_prev, &mut g.u[r * h..(r + 1) * h]);
                g.b[r] += dzr;
                axpy(dzr, &v.u[r * h..(r + 1) * h], &mut dh_prev);
            }
            std::mem::swap(&mut dh, &mut dh_prev);
        }
    }

    /// Prediction and exact gradient of `(prediction - target)^2` with respect
    /// to every parameter, in the flat layout.
    pub fn backward_window(&self, window: &[f64], target: f64) -> Result<(f64, Vec<f64>)> {
        self.check_window(window)?;
        if !target.is_finite() {
            return Err(Error::NonFinite("target"));
        }
        let mut tape = Tape::default();
        let pred = self.forward_tape(window, &mut tape);
        let mut grads = vec![0.0; self.params.len()];
        self.backward_tape(window, &tape, 2.0 * (pred - target), &mut grads);
        Ok((pred, grads))
    }

    /// Index of the head bias in the flat layout.
    pub fn head_bias_index(&self) -> usize {
        self.params.len() - 1
    }
}

/// Mean absolute error.
pub fn evaluate_mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("MAE input"));
    }
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(seed: u64, steps: usize, d: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps * d).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn zero_model_returns_head_bias() {
        let mut m = RecurrentModel::zeros(21, 8).unwrap();
        m.set_head_bias(3.7);
        for s in 0..3 {
            assert_eq!(m.forward_window(&window(s, 10, 21)).unwrap(), 3.7);
        }
    }

    #[test]
    fn single_step_matches_hand_recurrence() {
        let m = RecurrentModel::init(3, 2, 11).unwrap();
        let x = [0.3, -0.2, 0.9];
        let v = m.views();
        let (d, h) = (3, 2);
        let mut hidden = [0.0; 2];
        for j in 0..h {
            let z = |block: usize| {
                let r = block * h + j;
                v.b[r] + dot(&v.w[r * d..(r + 1) * d], &x)
            };
            let c = sigmoid(z(0)) * z(2).tanh();
            hidden[j] = sigmoid(z(3)) * c.tanh();
        }
        let expected = dot(v.head_w, &hidden) + v.head_b;
        assert_eq!(m.forward_window(&x).unwrap(), expected);
    }

    #[test]
    fn forward_is_deterministic() {
        let m1 = RecurrentModel::init(21, 16, 5).unwrap();
        let m2 = RecurrentModel::init(21, 16, 5).unwrap();
        let w = window(9, 60, 21);
        assert_eq!(
            m1.forward_window(&w).unwrap().to_bits(),
            m2.forward_window(&w).unwrap().to_bits()
        );
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let m = RecurrentModel::init(4, 3, 1).unwrap();
        assert_eq!(&m.views().b[3..6], &[1.0, 1.0, 1.0]);
        let bound = 1.0 / 3f64.sqrt();
        assert!(m.views().w.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let m = RecurrentModel::init(5, 4, 2).unwrap();
        let w = window(3, 7, 5);
        let pred = m.forward_window(&w).unwrap();
        let (_, g) = m.backward_window(&w, pred).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn head_bias_gradient_is_twice_residual() {
        let m = RecurrentModel::init(5, 4, 2).unwrap();
        let w = window(3, 7, 5);
        let (pred, g) = m.backward_window(&w, 1.25).unwrap();
        assert_eq!(g[m.head_bias_index()], 2.0 * (pred - 1.25));
    }

    #[test]
    fn rejects_bad_windows() {
        let m = RecurrentModel::init(5, 4, 2).unwrap();
        assert!(matches!(m.forward_window(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            m.forward_window(&[0.0; 7]),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut w = window(1, 2, 5);
        w[3] = f64::NAN;
        assert!(matches!(m.forward_window(&w), Err(Error::NonFinite(_))));
    }

    #[test]
    fn record_round_trip_is_exact() {
        let m = RecurrentModel::init(6, 5, 77).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: RecurrentModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(evaluate_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(evaluate_mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(
            evaluate_mae(&[2.0, 1.0, 5.0], &[4.0, 2.0, 1.0]).unwrap(),
            evaluate_mae(&[5.0, 2.0, 1.0], &[1.0, 4.0, 2.0]).unwrap()
        );
        assert!(evaluate_mae(&[], &[]).is_err());
        assert!(evaluate_mae(&[1.0], &[1.0, 2.0]).is_err());
    }
}
