//! Deterministic feature transforms that simulate distinct input domains.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum DomainTransform {
    Identity,
    /// `x -> 1 - x`.
    PixelInvert,
    /// Rotates disjoint feature pairs, paired by a seeded permutation, by a
    /// fixed angle. Orthogonal, so norms are preserved.
    Rotation { degrees: f64, seed: u64 },
    /// Adds seeded `N(0, sigma²)` noise to every feature.
    AdditiveNoise { sigma: f64, seed: u64 },
    IntensityScale { factor: f64 },
}

impl DomainTransform {
    /// Domains cycled through when a scenario does not list its own.
    pub fn defaults() -> Vec<DomainTransform> {
        vec![
            DomainTransform::Identity,
            DomainTransform::PixelInvert,
            DomainTransform::Rotation {
                degrees: 45.0,
                seed: 0,
            },
            DomainTransform::AdditiveNoise { sigma: 0.1, seed: 0 },
            DomainTransform::IntensityScale { factor: 0.5 },
        ]
    }

    /// Applies the transform to the features; labels are untouched.
    pub fn apply<S: Scalar>(&self, ds: &Dataset<S>) -> Dataset<S> {
        let mut out = ds.clone();
        let x = out.features.as_mut_slice();
        match *self {
            DomainTransform::Identity => {}
            DomainTransform::PixelInvert => x.iter_mut().for_each(|v| *v = S::one() - *v),
            DomainTransform::IntensityScale { factor } => {
                let f = S::of(factor);
                x.iter_mut().for_each(|v| *v *= f);
            }
            DomainTransform::AdditiveNoise { sigma, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for v in x.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += S::of(sigma * z);
                }
            }
            DomainTransform::Rotation { degrees, seed } => {
                let dim = out.features.cols();
                let mut order: Vec<usize> = (0..dim).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let (sin, cos) = degrees.to_radians().sin_cos();
                let (sin, cos) = (S::of(sin), S::of(cos));
                for r in 0..out.features.rows() {
                    let row = out.features.row_mut(r);
                    for pair in order.chunks_exact(2) {
                        let (a, b) = (row[pair[0]], row[pair[1]]);
                        row[pair[0]] = a * cos - b * sin;
                        row[pair[1]] = a * sin + b * cos;
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for DomainTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainTransform::Identity => write!(f, "identity"),
            DomainTransform::PixelInvert => write!(f, "pixel-invert"),
            DomainTransform::Rotation { degrees, seed } => write!(f, "rotation:{degrees}:{seed}"),
            DomainTransform::AdditiveNoise { sigma, seed } => write!(f, "noise:{sigma}:{seed}"),
            DomainTransform::IntensityScale { factor } => write!(f, "scale:{factor}"),
        }
    }
}

fn num<T: FromStr>(s: &str, whole: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::UnknownTransform(whole.to_string()))
}

impl FromStr for DomainTransform {
    type Err = Error;

    /// `identity`, `pixel-invert`, `rotation[:deg[:seed]]`,
    /// `noise[:sigma[:seed]]`, `scale[:factor]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let arg = |i: usize| parts.get(i).copied();
        let t = match (parts[0], parts.len()) {
            ("identity", 1) => DomainTransform::Identity,
            ("pixel-invert", 1) => DomainTransform::PixelInvert,
            ("rotation", 1..=3) => DomainTransform::Rotation {
                degrees: arg(1).map_or(Ok(45.0), |v| num(v, s))?,
                seed: arg(2).map_or(Ok(0), |v| num(v, s))?,
            },
            ("noise", 1..=3) => DomainTransform::AdditiveNoise {
                sigma: arg(1).map_or(Ok(0.1), |v| num(v, s))?,
                seed: arg(2).map_or(Ok(0), |v| num(v, s))?,
            },
            ("scale", 1..=2) => DomainTransform::IntensityScale {
                factor: arg(1).map_or(Ok(0.5), |v| num(v, s))?,
            },
            _ => return Err(Error::UnknownTransform(s.to_string())),
        };
        Ok(t)
    }
}

/// Applies the transform named by `id` to `ds`.
pub fn domain_transform<S: Scalar>(id: &str, ds: &Dataset<S>) -> Result<Dataset<S>> {
    Ok(id.parse::<DomainTransform>()?.apply(ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor2;

    fn sample() -> Dataset<f64> {
        Dataset::new(
            Tensor2::from_vec(2, 3, vec![0.0, 0.25, 1.0, 0.5, 0.75, 0.125]).unwrap(),
            vec![1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn identity_is_noop() {
        assert_eq!(domain_transform("identity", &sample()).unwrap(), sample());
    }

    #[test]
    fn invert_is_involution() {
        let once = domain_transform("pixel-invert", &sample()).unwrap();
        assert_ne!(once, sample());
        assert_eq!(domain_transform("pixel-invert", &once).unwrap(), sample());
    }

    #[test]
    fn noise_is_reproducible() {
        let a = domain_transform("noise:0.2:5", &sample()).unwrap();
        let b = domain_transform("noise:0.2:5", &sample()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample());
        assert_eq!(a.labels, sample().labels);
    }

    #[test]
    fn rotation_preserves_norms() {
        let r = domain_transform("rotation:30:2", &sample()).unwrap();
        for (a, b) in r.features.row_iter().zip(sample().features.row_iter()) {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            assert!((na - nb).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_id_rejected() {
        assert!(matches!(
            domain_transform("blur", &sample()),
            Err(Error::UnknownTransform(_))
        ));
        assert!("noise:abc".parse::<DomainTransform>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for t in DomainTransform::defaults() {
            assert_eq!(t.to_string().parse::<DomainTransform>().unwrap(), t);
        }
    }
}
