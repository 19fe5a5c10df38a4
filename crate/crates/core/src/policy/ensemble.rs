//! Exponential temporal averaging of overlapping chunk predictions.

/// Normalized weights `exp(-m * age) / sum` for the given prediction ages.
pub fn ensemble_weights(ages: &[usize], m: f64) -> Vec<f64> {
    let raw: Vec<f64> = ages.iter().map(|&a| (-m * a as f64).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Blends predictions for one timestep. Each entry is `(age, action)`,
/// where age counts control steps since the chunk was predicted.
///
/// Panics when `predictions` is empty.
pub fn temporal_ensemble<const N: usize>(predictions: &[(usize, [f64; N])], m: f64) -> [f64; N] {
    assert!(!predictions.is_empty(), "temporal_ensemble needs at least one prediction");
    let ages: Vec<usize> = predictions.iter().map(|(a, _)| *a).collect();
    let weights = ensemble_weights(&ages, m);
    let mut out = [0.0; N];
    for ((_, a), w) in predictions.iter().zip(&weights) {
        for (o, v) in out.iter_mut().zip(a) {
            *o += w * v;
        }
    }
    out
}
