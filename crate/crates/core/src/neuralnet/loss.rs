use crate::error::{Result, SpadeError};
use crate::linalg::Matrix;

pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(n: usize, targets: &[f64], weights: &[f64]) -> Result<f64> {
    if targets.len() != n || weights.len() != n {
        return Err(SpadeError::DimensionMismatch {
            expected: n,
            actual: if targets.len() != n { targets.len() } else { weights.len() },
        });
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(SpadeError::invalid(format!("BCE target {t} is not 0 or 1")));
    }
    if let Some(w) = weights.iter().find(|&&w| w != 0.0 && w != 1.0) {
        return Err(SpadeError::invalid(format!("BCE weight {w} is not 0 or 1")));
    }
    Ok(weights.iter().sum())
}

/// Weighted binary cross-entropy on logits. The loss is the mean over
/// weight-1 samples; the gradient is with respect to each logit.
pub fn bce_with_logits(logits: &[f64], targets: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let kept = check_inputs(logits.len(), targets, weights)?;
    let mut grad = vec![0.0; logits.len()];
    if kept == 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for (i, ((&z, &y), &w)) in logits.iter().zip(targets).zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad[i] = (sigmoid(z) - y) / kept;
    }
    Ok((loss / kept, grad))
}

/// Same loss on probabilities clamped to `[1e-7, 1 - 1e-7]`; the gradient is
/// with respect to each probability.
pub fn bce_probabilities(probs: &[f64], targets: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let kept = check_inputs(probs.len(), targets, weights)?;
    let mut grad = vec![0.0; probs.len()];
    if kept == 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for (i, ((&p, &y), &w)) in probs.iter().zip(targets).zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad[i] = (p - y) / (p * (1.0 - p)) / kept;
    }
    Ok((loss / kept, grad))
}

/// Mean squared error over all entries, with its gradient in `x_hat`.
pub fn mse_loss(x_hat: &Matrix, x: &Matrix) -> Result<(f64, Matrix)> {
    if x_hat.rows() != x.rows() || x_hat.cols() != x.cols() {
        return Err(SpadeError::DimensionMismatch {
            expected: x.rows() * x.cols(),
            actual: x_hat.rows() * x_hat.cols(),
        });
    }
    let n = x.as_slice().len();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for ((g, &a), &b) in grad.as_mut_slice().iter_mut().zip(x_hat.as_slice()).zip(x.as_slice()) {
        let d = a - b;
        loss += d * d;
        *g = 2.0 * d / n as f64;
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{Activation, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_values() {
        let (l, _) = bce_probabilities(&[0.5, 0.5, 0.5], &[0.0, 1.0, 1.0], &[1.0; 3]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let (l, _) = bce_with_logits(&[0.0; 3], &[0.0, 1.0, 1.0], &[1.0; 3]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let (l, _) = bce_probabilities(&[0.0, 1.0], &[0.0, 1.0], &[1.0; 2]).unwrap();
        assert!(l < 1e-6);
        assert!(bce_with_logits(&[0.0], &[0.5], &[1.0]).is_err());
        assert!(bce_with_logits(&[0.0], &[1.0], &[0.5]).is_err());
    }

    #[test]
    fn zero_weights_drop_out() {
        let z = [0.3, -1.2, 2.0, 0.7];
        let y = [1.0, 0.0, 0.0, 1.0];
        let (full, g) = bce_with_logits(&z, &y, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let (half, gh) = bce_with_logits(&[0.3, 2.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(full, half);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[3], 0.0);
        assert_eq!((g[0], g[2]), (gh[0], gh[1]));
        let (l, g) = bce_with_logits(&z, &y, &[0.0; 4]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_match_probabilities() {
        let z = [-3.0, -0.5, 0.0, 1.5, 4.0];
        let y = [0.0, 1.0, 0.0, 1.0, 0.0];
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let (a, _) = bce_with_logits(&z, &y, &[1.0; 5]).unwrap();
        let (b, _) = bce_probabilities(&p, &y, &[1.0; 5]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mse_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        assert_eq!(mse_loss(&x, &x).unwrap().0, 0.0);
        let shifted = Matrix::from_vec(3, 4, x.as_slice().iter().map(|v| v + 1.0).collect()).unwrap();
        assert!((mse_loss(&shifted, &x).unwrap().0 - 1.0).abs() < 1e-12);
        let y = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..4 {
                s += (x[(r, c)] - y[(r, c)]).powi(2);
            }
        }
        assert!((mse_loss(&x, &y).unwrap().0 - s / 12.0).abs() < 1e-12);
    }

    fn fd_check(net: &mut Mlp, x: &Matrix, loss: impl Fn(&Matrix) -> (f64, Matrix)) {
        let cache = net.forward(x).unwrap();
        let (_, up) = loss(cache.output());
        let (grads, _) = net.backward(&cache, &up).unwrap();
        let analytic: Vec<f64> = grads.slices().concat();
        let h = 1e-5;
        let mut idx = 0;
        let n_slices = net.param_slices_mut().len();
        for s in 0..n_slices {
            let len = net.param_slices_mut()[s].len();
            for j in 0..len {
                let orig = net.param_slices_mut()[s][j];
                net.param_slices_mut()[s][j] = orig + h;
                let lp = loss(&net.predict(x).unwrap()).0;
                net.param_slices_mut()[s][j] = orig - h;
                let lm = loss(&net.predict(x).unwrap()).0;
                net.param_slices_mut()[s][j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic[idx];
                assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3), "param {idx}: {a} vs {fd}");
                idx += 1;
            }
        }
    }

    #[test]
    fn finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::init(&[3, 4, 1], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let w = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        fd_check(&mut net, &x, |out| {
            let (l, g) = bce_with_logits(out.as_slice(), &y, &w).unwrap();
            (l, Matrix::from_vec(6, 1, g).unwrap())
        });

        let mut dec = Mlp::init(&[3, 2, 3], &[Activation::Sigmoid, Activation::Identity], &mut rng).unwrap();
        let target = x.clone();
        fd_check(&mut dec, &x, |out| mse_loss(out, &target).unwrap());
    }
}
