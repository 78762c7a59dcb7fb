use rand::distributions::Open01;
use rand::Rng;

use crate::autodiff::Tensor;

/// One standard Gumbel draw `-ln(-ln U)`, `U` uniform on (0, 1).
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// `scale * Gumbel(0, 1)` samples of the given shape, row-major draw order.
pub fn gumbel_noise<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * gumbel(rng)).collect();
    Tensor::new(rows, cols, data).expect("length matches")
}

/// `logits + scale * G`. A zero scale returns the logits untouched and
/// draws nothing from `rng`.
pub fn add_gumbel_noise<R: Rng + ?Sized>(logits: &Tensor, scale: f64, rng: &mut R) -> Tensor {
    if scale == 0.0 {
        return logits.clone();
    }
    let mut out = gumbel_noise(logits.rows(), logits.cols(), scale, rng);
    out.add_assign(logits);
    out
}
