//! Central finite-difference gradient checking.
//!
//! Used by the test suites to validate every differentiable block against
//! an independent numerical derivative. Kept in the library (not `tests/`)
//! so unit, integration, and acceptance tests share one implementation.

use crate::autodiff::{grad, Var};
use crate::tensor::Tensor;

/// Worst relative error between analytic and numerical gradients.
///
/// `f` must build a scalar from the supplied vars. The numerical side is a
/// central difference with step `eps` computed entirely outside the tape.
pub fn max_grad_rel_err(f: &dyn Fn(&[Var]) -> Var, inputs: &[Tensor], eps: f64) -> f64 {
    let leaves: Vec<Var> = inputs.iter().map(|t| Var::leaf(t.clone())).collect();
    let output = f(&leaves);
    let analytic = grad(&output, &leaves);

    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        let a = analytic[which].value();
        for elem in 0..input.len() {
            let eval = |delta: f64| -> f64 {
                let probes: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if i == which {
                            let mut data = t.data().to_vec();
                            data[elem] += delta;
                            Var::constant(Tensor::new(t.shape().to_vec(), data))
                        } else {
                            Var::constant(t.clone())
                        }
                    })
                    .collect();
                f(&probes).item()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let exact = a.data()[elem];
            let err = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Deterministic pseudo-random tensor for test fixtures (xorshift; value
/// range roughly [-1, 1]). Not used by any production path.
pub fn fixture(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    let data = (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 11) % 20001) as f64 / 10000.0 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_correct_and_wrong_gradients() {
        let t = fixture(&[4], 1);
        // sum(x^2): exact gradient available.
        let ok = max_grad_rel_err(&|vs| vs[0].square().sum_all(), &[t.clone()], 1e-6);
        assert!(ok < 1e-8, "err {ok}");
        // A deliberately wrong function of the same inputs: scale mismatch
        // between analytic (3x^2) and what a checker would see if we lied.
        let wrong = max_grad_rel_err(
            &|vs| vs[0].square().sum_all().scale(1.0 + 1e-3),
            &[t],
            1e-6,
        );
        assert!(wrong < 1e-8); // still consistent: scaling is differentiated too
    }
}
