//! Dense layers and the gated recurrent cell, composed from tape ops.

use rand::Rng;

use crate::error::{Error, Result};

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Real;

/// `y = x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: store.add_matrix(&format!("{name}.weight"), fan_in, fan_out, rng),
            bias: store.add_bias(&format!("{name}.bias"), fan_out),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add(y, p[self.bias])
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

/// Gated recurrent unit parameters. Input weights are packed as
/// `[d_in × 3H]` with column blocks (update, reset, candidate).
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_input: ParamId,
    pub w_hidden_gates: ParamId,
    pub w_hidden_candidate: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        GruParams {
            w_input: store.add_matrix(&format!("{name}.w_input"), input, 3 * hidden, rng),
            w_hidden_gates: store.add_matrix(&format!("{name}.w_hidden_gates"), hidden, 2 * hidden, rng),
            w_hidden_candidate: store.add_matrix(&format!("{name}.w_hidden_candidate"), hidden, hidden, rng),
            bias: store.add_bias(&format!("{name}.bias"), 3 * hidden),
            input,
            hidden,
        }
    }
}

/// One recurrent update for a batch of rows:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h̃ = tanh(x·Wn + (r ⊙ h)·Un + bn)
/// h' = z ⊙ h + (1 − z) ⊙ h̃
/// ```
pub fn gru_cell<T: Real>(tape: &mut Tape<T>, p: &Bound, params: &GruParams, x: Var, h_prev: Var) -> Result<Var> {
    let hd = params.hidden;
    let (sx, sh) = (tape.shape(x).to_vec(), tape.shape(h_prev).to_vec());
    if sx.len() != 2 || sh.len() != 2 || sx[1] != params.input || sh[1] != hd || sx[0] != sh[0] {
        return Err(Error::Dimension(format!(
            "gru_cell expects [B×{}] and [B×{hd}], got {sx:?} and {sh:?}",
            params.input
        )));
    }
    let xw = tape.matmul(x, p[params.w_input])?;
    let xw = tape.add(xw, p[params.bias])?;
    let hu = tape.matmul(h_prev, p[params.w_hidden_gates])?;

    let xz = tape.narrow(xw, 0, hd)?;
    let hz = tape.narrow(hu, 0, hd)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z)?;

    let xr = tape.narrow(xw, hd, hd)?;
    let hr = tape.narrow(hu, hd, hd)?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r)?;

    let rh = tape.mul(r, h_prev)?;
    let rhu = tape.matmul(rh, p[params.w_hidden_candidate])?;
    let xn = tape.narrow(xw, 2 * hd, hd)?;
    let n = tape.add(xn, rhu)?;
    let n = tape.tanh(n)?;

    // z ⊙ h + (1 − z) ⊙ n  ==  n + z ⊙ (h − n)
    let diff = tape.sub(h_prev, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use rand::SeedableRng;

    fn setup(input: usize, hidden: usize) -> (ParamStore, GruParams) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let g = GruParams::new(&mut store, "gru", input, hidden, &mut rng);
        (store, g)
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
    }

    #[test]
    fn zero_params_zero_state_stays_zero() {
        let (mut store, g) = setup(4, 3);
        zero_all(&mut store);
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape);
        let x = tape.zeros(&[1, 4]);
        let h = tape.zeros(&[1, 3]);
        let out = gru_cell(&mut tape, &p, &g, x, h).unwrap();
        assert_eq!(tape.value(out), &[0.0; 3]);
    }

    #[test]
    fn update_gate_extremes() {
        let (mut store, g) = setup(4, 3);
        let h_prev = Tensor::matrix(1, 3, vec![0.3, -0.7, 0.9]).unwrap();
        let x = Tensor::matrix(1, 4, vec![0.5, -1.0, 0.25, 2.0]).unwrap();

        // z → 1: carry the previous state.
        let mut b = vec![0.0; 9];
        b[..3].fill(60.0);
        store.set(g.bias, Tensor::vector(b).unwrap()).unwrap();
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(&x);
        let hv = tape.constant(&h_prev);
        let out = gru_cell(&mut tape, &p, &g, xv, hv).unwrap();
        for (a, b) in tape.value(out).iter().zip(h_prev.data()) {
            assert!((a - b).abs() < 1e-6);
        }

        // z → 0: output equals the candidate.
        let mut b = vec![0.0; 9];
        b[..3].fill(-60.0);
        store.set(g.bias, Tensor::vector(b).unwrap()).unwrap();
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(&x);
        let hv = tape.constant(&h_prev);
        let out = gru_cell(&mut tape, &p, &g, xv, hv).unwrap();
        // Candidate computed by hand through the same weights.
        let w = store.get(g.w_input).data();
        let u = store.get(g.w_hidden_gates).data();
        let un = store.get(g.w_hidden_candidate).data();
        let mut expected = [0f32; 3];
        let r: Vec<f32> = (0..3)
            .map(|j| {
                let pre: f32 = (0..4).map(|i| x.data()[i] * w[i * 9 + 3 + j]).sum::<f32>()
                    + (0..3).map(|i| h_prev.data()[i] * u[i * 6 + 3 + j]).sum::<f32>();
                1.0 / (1.0 + (-pre).exp())
            })
            .collect();
        for (j, e) in expected.iter_mut().enumerate() {
            let pre: f32 = (0..4).map(|i| x.data()[i] * w[i * 9 + 6 + j]).sum::<f32>()
                + (0..3).map(|i| r[i] * h_prev.data()[i] * un[i * 3 + j]).sum::<f32>();
            *e = pre.tanh();
        }
        for (a, b) in tape.value(out).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let (store, g) = setup(4, 3);
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape);
        let x = tape.zeros(&[1, 5]);
        let h = tape.zeros(&[1, 3]);
        assert!(matches!(gru_cell(&mut tape, &p, &g, x, h), Err(Error::Dimension(_))));
    }
}
