use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Gaussian clusters with unit noise around random centers on the sphere of
/// radius `separation`. Images are `[n, 1, 1, dim]`, grouped by class.
pub fn synthetic_blobs(classes: usize, per_class: usize, dim: usize, separation: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(separation > 0.0) || classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Config("blobs need positive classes, per-class count, dim and separation".into()));
    }
    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        centers.push(v.into_iter().map(|x| x / norm * separation).collect::<Vec<_>>());
    }
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(center.iter().map(|&m| (m + rng.normal()) as f32));
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(&[n, 1, 1, dim], data)?, labels, classes, Split::Train)
}
