//! Central finite differences, used to validate analytic gradients.
//!
//! Only forward evaluations are involved, so the check is independent of the
//! tape's backward rules.

use super::tensor::Tensor2D;

/// Step used by default, matching the 64-bit gradient-check protocol.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `∂f/∂x` estimated entrywise as `(f(x+h) - f(x-h)) / 2h`.
pub fn central_difference(x: &Tensor2D, h: f64, mut f: impl FnMut(&Tensor2D) -> f64) -> Tensor2D {
    let mut probe = x.clone();
    let mut out = Tensor2D::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Relative error `|a - b| / max(|a|, |b|, floor)` maximised over entries.
///
/// `floor` keeps entries whose true gradient is essentially zero from
/// dominating the ratio.
pub fn max_relative_error(analytic: &Tensor2D, numeric: &Tensor2D, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
