use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::numeric::tensor::l2_normalize;
use crate::rng::{derive_seed, seeded};

/// Isotropic Gaussian clusters around class means drawn uniformly on the unit sphere.
///
/// Samples are laid out class by class; `source_id` is the sample's position.
pub fn generate_gaussian_clusters(
    num_classes: usize,
    d_in: usize,
    samples_per_class: usize,
    cluster_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || d_in == 0 || samples_per_class == 0 {
        return Err(Error::Config("cluster counts must be positive".into()));
    }
    if !(cluster_std >= 0.0) || !cluster_std.is_finite() {
        return Err(Error::Config(format!("cluster std must be ≥ 0, got {cluster_std}")));
    }
    let mut mean_rng = seeded(derive_seed(seed, &[0]));
    let mut samples = Vec::with_capacity(num_classes * samples_per_class);
    for class in 0..num_classes {
        let raw: Vec<f64> = (0..d_in).map(|_| StandardNormal.sample(&mut mean_rng)).collect();
        let mean = l2_normalize(&raw)?;
        let mut noise_rng = seeded(derive_seed(seed, &[1, class as u64]));
        for _ in 0..samples_per_class {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    m + cluster_std * z
                })
                .collect();
            samples.push(LabeledSample {
                features,
                label: class as u32,
                source_id: samples.len() as u64,
            });
        }
    }
    Dataset::new(d_in, None, samples)
}

/// Adds `offset` to every coordinate. A large shared positive component is
/// the image-like regime where all inputs sit in one orthant.
pub fn add_offset(dataset: &mut Dataset, offset: f64) {
    for s in &mut dataset.samples {
        for v in &mut s.features {
            *v += offset;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::dot;

    #[test]
    fn zero_noise_reproduces_means() {
        let ds = generate_gaussian_clusters(2, 5, 4, 0.0, 3).unwrap();
        for class in 0..2u32 {
            let rows: Vec<_> = ds.samples.iter().filter(|s| s.label == class).collect();
            assert!(rows.iter().all(|s| s.features == rows[0].features));
            assert!((dot(&rows[0].features, &rows[0].features) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            generate_gaussian_clusters(4, 6, 3, 0.2, 5).unwrap(),
            generate_gaussian_clusters(4, 6, 3, 0.2, 5).unwrap()
        );
    }

    #[test]
    fn nearest_mean_separates_tight_clusters() {
        let ds = generate_gaussian_clusters(10, 32, 50, 0.05, 17).unwrap();
        let split = ds.split_train_test(0.8, 2).unwrap();
        let mut means = vec![vec![0.0; 32]; 10];
        let mut counts = vec![0usize; 10];
        for s in &split.train.samples {
            counts[s.label as usize] += 1;
            for (m, f) in means[s.label as usize].iter_mut().zip(&s.features) {
                *m += f;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let correct = split
            .test
            .samples
            .iter()
            .filter(|s| {
                let best = (0..10)
                    .min_by(|&a, &b| {
                        let da: f64 = means[a].iter().zip(&s.features).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = means[b].iter().zip(&s.features).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best as u32 == s.label
            })
            .count();
        let acc = correct as f64 / split.test.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_gaussian_clusters(0, 2, 2, 0.1, 0).is_err());
        assert!(generate_gaussian_clusters(2, 2, 2, -0.1, 0).is_err());
    }
}
