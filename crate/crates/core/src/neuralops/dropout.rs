use rand::Rng;

/// Inverted-dropout multipliers: `0` with probability `q`, else `1/(1−q)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, q: f64, rng: &mut R) -> Vec<f64> {
    assert!((0.0..1.0).contains(&q), "dropout rate {q} outside [0, 1)");
    let keep = 1.0 / (1.0 - q);
    (0..len)
        .map(|_| if rng.gen::<f64>() < q { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout. Identity when not training or when `q = 0`.
pub fn apply_dropout<R: Rng + ?Sized>(activations: &[f64], q: f64, rng: &mut R, training: bool) -> Vec<f64> {
    if !training || q == 0.0 {
        return activations.to_vec();
    }
    let mask = dropout_mask(activations.len(), q, rng);
    activations.iter().zip(&mask).map(|(a, m)| a * m).collect()
}

/// Dropout applied during a forward pass: rate plus the generator for masks.
pub struct DropoutCtx<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> DropoutCtx<'_, R> {
    /// Draws a mask and applies it to `x` in place; `None` when the rate is zero.
    pub(crate) fn apply(&mut self, x: &mut [f64]) -> Option<Vec<f64>> {
        if self.rate == 0.0 {
            return None;
        }
        let mask = dropout_mask(x.len(), self.rate, self.rng);
        x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Some(mask)
    }
}
