//! Central finite-difference check of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};

/// Denominator floor for relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// A scalar function of parameter tensors, evaluable at any tape precision.
pub trait TapeFn {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per tensor (sampled with `seed`).
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-3,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor, coordinate, analytic, numeric) at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub per_tensor: Vec<f64>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval_loss<T: Real, F: TapeFn>(f: &F, values: &[(Vec<usize>, Vec<T>)]) -> Result<f64> {
    let mut tape = Tape::<T>::new();
    let vars = values
        .iter()
        .map(|(s, v)| tape.leaf_raw(s.clone(), v.clone(), false))
        .collect::<Result<Vec<_>>>()?;
    let loss = f.eval(&mut tape, &vars)?;
    Ok(tape.scalar_value(loss).as_f64())
}

/// Compares reverse-mode gradients computed at precision `A` against
/// central differences `(f(p+eps) − f(p−eps)) / 2eps` evaluated at
/// precision `N`.
pub fn gradient_check_with<A: Real, N: Real, F: TapeFn>(
    f: &F,
    params: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut tape = Tape::<A>::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f.eval(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let mut values: Vec<(Vec<usize>, Vec<N>)> = params
        .iter()
        .map(|p| (p.shape().to_vec(), p.data().iter().map(|&x| N::of_f32(x)).collect()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_tensor: vec![0.0; params.len()],
        coords_checked: 0,
    };
    for ti in 0..params.len() {
        let n = params[ti].numel();
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = values[ti].1[c];
            values[ti].1[c] = N::of_f64(orig.as_f64() + opts.eps);
            let plus = eval_loss::<N, F>(f, &values)?;
            values[ti].1[c] = N::of_f64(orig.as_f64() - opts.eps);
            let minus = eval_loss::<N, F>(f, &values)?;
            values[ti].1[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[ti].data()[c] as f64;
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.per_tensor[ti] {
                report.per_tensor[ti] = err;
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((ti, c, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Maximum relative error between 32-bit reverse-mode gradients and
/// central differences taken at double precision, over every coordinate.
pub fn gradient_check<F: TapeFn>(f: &F, params: &[Tensor], eps: f64) -> Result<f64> {
    let opts = GradCheckOptions {
        eps,
        ..Default::default()
    };
    Ok(gradient_check_with::<f32, f64, F>(f, params, &opts)?.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    struct LinearSum;
    impl TapeFn for LinearSum {
        fn eval<T: Real>(&self, tape: &mut Tape<T>, p: &[Var]) -> Result<Var> {
            let c = tape.constant(&Tensor::vector(vec![1.5, -2.0, 0.25]).unwrap());
            let y = tape.mul(p[0], c)?;
            tape.sum(y)
        }
    }

    /// loss = CE(relu(x·W1 + b1)·W2 + b2, target) on a 2-layer MLP.
    struct TwoLayer {
        x: Tensor,
        target: usize,
    }
    impl TapeFn for TwoLayer {
        fn eval<T: Real>(&self, tape: &mut Tape<T>, p: &[Var]) -> Result<Var> {
            let x = tape.constant(&self.x);
            let h = tape.matmul(x, p[0])?;
            let h = tape.add(h, p[1])?;
            let h = tape.tanh(h)?;
            let o = tape.matmul(h, p[2])?;
            let o = tape.add(o, p[3])?;
            let o = tape.reshape(o, &[4])?;
            tape.cross_entropy(o, self.target)
        }
    }

    #[test]
    fn linear_function_is_exact() {
        let p = vec![Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap()];
        let err = gradient_check(&LinearSum, &p, 1e-3).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn random_mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x = Tensor::matrix(1, 5, (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let params = vec![
                Tensor::glorot(5, 6, &mut rng),
                Tensor::vector((0..6).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap(),
                Tensor::glorot(6, 4, &mut rng),
                Tensor::vector((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap(),
            ];
            let err = gradient_check(&TwoLayer { x, target: 2 }, &params, 1e-3).unwrap();
            assert!(err < 1e-3, "{err}");
        }
    }
}
