use super::Tensor;

/// `|a - b| / max(|a|, |b|, 1e-6)`: relative error with an absolute floor for
/// gradients that are essentially zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central finite-difference check of `analytic` (one gradient tensor per
/// input) against the scalar function `f`. Every element of every input is
/// perturbed by `±eps`; returns the worst relative error.
pub fn fd_check(
    f: impl Fn(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eps: f64,
) -> f64 {
    assert_eq!(inputs.len(), analytic.len(), "one gradient per input");
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (i, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[i].shape(), "gradient shape for input {i}");
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = f(&work);
            work[i].data_mut()[j] = orig - eps;
            let minus = f(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    worst
}
