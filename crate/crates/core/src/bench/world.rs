//! Synthetic embedding worlds.
//!
//! A world is a class roster with a visual distribution per class. The
//! visual mean of a class is its zero-shot text embedding displaced by a
//! family shift (shared by related classes, scaled by `gamma`) and a private
//! shift (scaled by `delta`), renormalized; samples add isotropic noise of
//! scale `sigma` in the tangent plane. Families are what give forged experts
//! a transfer signal: classes of one family share both a name token (so
//! their text embeddings retrieve each other) and a visual shift direction
//! (so their experts learn transferable displacements).

use crate::encoder::prompt::ClassPrompt;
use crate::encoder::reference::ReferenceEncoder;
use crate::error::{Error, Result};
use crate::ids::ClassId;
use crate::numerics::rng::{derive_seed, SeededRng};
use crate::numerics::tensor::{l2_normalize, EmbeddingVector, Tensor1D};
use serde::{Deserialize, Serialize};

const FAMILY_WORDS: [&str; 8] = [
    "hawk", "fern", "reef", "dune", "moss", "crag", "wisp", "loch",
];
const MODIFIER_WORDS: [&str; 12] = [
    "crimson", "azure", "amber", "ivory", "onyx", "umber", "jade", "coral", "slate", "ochre",
    "pearl", "cobalt",
];

/// Roster size and distribution parameters of a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub families: usize,
    pub classes_per_family: usize,
    /// Scale of the family (domain) shift shared within a family.
    pub gamma: f64,
    /// Scale of each class's private shift.
    pub delta: f64,
    /// Noise scale in the tangent plane of the class mean.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            families: 5,
            classes_per_family: 4,
            gamma: 0.4,
            delta: 0.15,
            sigma: 0.08,
            seed: 1992,
        }
    }
}

/// One roster entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorldClass {
    pub id: ClassId,
    pub name: String,
    pub family: usize,
}

/// A fully specified synthetic world bound to one encoder.
#[derive(Clone, Debug, Serialize)]
pub struct SyntheticWorld {
    config: WorldConfig,
    classes: Vec<WorldClass>,
    means: Vec<EmbeddingVector>,
    encoder_fingerprint: u64,
    dim: usize,
}

impl SyntheticWorld {
    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn classes(&self) -> &[WorldClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encoder_fingerprint(&self) -> u64 {
        self.encoder_fingerprint
    }

    pub fn class(&self, id: ClassId) -> Result<&WorldClass> {
        self.classes
            .get(id.0 as usize)
            .filter(|c| c.id == id)
            .ok_or(Error::UnknownClass(id))
    }

    pub fn name(&self, id: ClassId) -> Result<&str> {
        Ok(self.class(id)?.name.as_str())
    }

    pub fn mean(&self, id: ClassId) -> Result<&EmbeddingVector> {
        self.class(id)?;
        Ok(&self.means[id.0 as usize])
    }

    /// Draw `n` visual embeddings of a class: the class mean plus isotropic
    /// tangent-plane noise, renormalized. With `sigma = 0` every sample is
    /// exactly the mean.
    pub fn sample_class(&self, id: ClassId, n: usize, seed: u64) -> Result<Vec<EmbeddingVector>> {
        let mean = self.mean(id)?.clone();
        if self.config.sigma == 0.0 {
            return Ok(vec![mean; n]);
        }
        let mu = mean.as_slice();
        let mut rng = SeededRng::new(seed);
        let mut out = Vec::with_capacity(n);
        let mut g = vec![0.0; self.dim];
        for _ in 0..n {
            rng.fill_normal(&mut g);
            let along: f64 = g.iter().zip(mu).map(|(a, b)| a * b).sum();
            let v: Vec<f64> = mu
                .iter()
                .zip(&g)
                .map(|(&m, &gi)| m + self.config.sigma * (gi - along * m))
                .collect();
            out.push(l2_normalize(&Tensor1D::from_vec(v)?)?);
        }
        Ok(out)
    }
}

/// Build a world from its config: generate names, compute per-class means
/// from zero-shot text embeddings plus family and private shifts.
pub fn generate_world(config: &WorldConfig, encoder: &ReferenceEncoder) -> Result<SyntheticWorld> {
    if config.families == 0 || config.classes_per_family == 0 {
        return Err(Error::contract("world needs at least one class"));
    }
    if config.families > FAMILY_WORDS.len() {
        return Err(Error::contract(format!(
            "at most {} families supported",
            FAMILY_WORDS.len()
        )));
    }
    if config.classes_per_family > MODIFIER_WORDS.len() {
        return Err(Error::contract(format!(
            "at most {} classes per family supported",
            MODIFIER_WORDS.len()
        )));
    }
    if config.gamma < 0.0 || config.delta < 0.0 || config.sigma < 0.0 {
        return Err(Error::contract("world shift scales must be non-negative"));
    }

    let dim = encoder.dim();
    let mut classes = Vec::new();
    let mut means = Vec::new();
    let mut family_dirs = Vec::with_capacity(config.families);
    for f in 0..config.families {
        let mut rng = SeededRng::new(derive_seed(config.seed, "family-shift", f as u64));
        let mut dir = vec![0.0; dim];
        rng.fill_normal(&mut dir);
        family_dirs.push(l2_normalize(&Tensor1D::from_vec(dir)?)?);
    }

    let mut id = 0u32;
    for f in 0..config.families {
        for c in 0..config.classes_per_family {
            let name = format!("{} {}", MODIFIER_WORDS[c], FAMILY_WORDS[f]);
            let prompt = ClassPrompt::canonical(ClassId(id), name.clone());
            let text = encoder.zero_shot(&prompt)?;

            let mut rng = SeededRng::new(derive_seed(config.seed, "private-shift", id as u64));
            let mut private = vec![0.0; dim];
            rng.fill_normal(&mut private);
            let private = l2_normalize(&Tensor1D::from_vec(private)?)?;

            let mean: Vec<f64> = text
                .as_slice()
                .iter()
                .zip(family_dirs[f].as_slice())
                .zip(private.as_slice())
                .map(|((&z, &fd), &pd)| z + config.gamma * fd + config.delta * pd)
                .collect();
            means.push(l2_normalize(&Tensor1D::from_vec(mean)?)?);
            classes.push(WorldClass {
                id: ClassId(id),
                name,
                family: f,
            });
            id += 1;
        }
    }

    Ok(SyntheticWorld {
        config: config.clone(),
        classes,
        means,
        encoder_fingerprint: encoder.fingerprint(),
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::reference::EncoderConfig;

    fn encoder() -> ReferenceEncoder {
        ReferenceEncoder::new(EncoderConfig {
            seed: 3,
            vocab: 128,
            d_tok: 8,
            hidden: 16,
            d_out: 12,
            adapted_layers: vec![0, 1],
        })
        .unwrap()
    }

    #[test]
    fn same_seed_same_world() {
        let enc = encoder();
        let cfg = WorldConfig {
            families: 3,
            classes_per_family: 2,
            ..WorldConfig::default()
        };
        let a = generate_world(&cfg, &enc).unwrap();
        let b = generate_world(&cfg, &enc).unwrap();
        assert_eq!(a.classes(), b.classes());
        for (x, y) in a.means.iter().zip(&b.means) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
        let c = generate_world(
            &WorldConfig {
                seed: cfg.seed + 1,
                ..cfg
            },
            &enc,
        )
        .unwrap();
        assert_ne!(a.means[0].as_slice(), c.means[0].as_slice());
    }

    #[test]
    fn sigma_zero_samples_equal_the_mean() {
        let enc = encoder();
        let cfg = WorldConfig {
            families: 2,
            classes_per_family: 2,
            sigma: 0.0,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg, &enc).unwrap();
        let samples = world.sample_class(ClassId(1), 5, 9).unwrap();
        for s in samples {
            assert_eq!(s.as_slice(), world.mean(ClassId(1)).unwrap().as_slice());
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let enc = encoder();
        let world = generate_world(&WorldConfig::default(), &enc).unwrap();
        let a = world.sample_class(ClassId(3), 10, 77).unwrap();
        let b = world.sample_class(ClassId(3), 10, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_direction_matches_mean_within_three_standard_errors() {
        // Tangent noise is symmetric, so the expected sample is proportional
        // to the mean; compare the normalized empirical mean per coordinate.
        let enc = encoder();
        let world = generate_world(&WorldConfig::default(), &enc).unwrap();
        let id = ClassId(7);
        let n = 10_000;
        let samples = world.sample_class(id, n, 4).unwrap();
        let dim = world.dim();
        let mut acc = vec![0.0; dim];
        for s in &samples {
            for (a, &v) in acc.iter_mut().zip(s.as_slice()) {
                *a += v;
            }
        }
        let mean_emp: Vec<f64> = acc.iter().map(|a| a / n as f64).collect();
        let dir = l2_normalize(&Tensor1D::from_vec(mean_emp.clone()).unwrap()).unwrap();

        // Per-coordinate standard error of the sample mean, then propagated
        // loosely through the normalization (norm close to 1 here).
        let mu = world.mean(id).unwrap().as_slice();
        for i in 0..dim {
            let mut var = 0.0;
            for s in &samples {
                let d = s.as_slice()[i] - mean_emp[i];
                var += d * d;
            }
            var /= (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let tol = 3.0 * se + 1e-9;
            assert!(
                (dir.as_slice()[i] - mu[i]).abs() < tol,
                "coord {i}: {} vs {} (tol {tol})",
                dir.as_slice()[i],
                mu[i]
            );
        }
    }

    #[test]
    fn family_structure_is_visible_in_text_space() {
        // Same-family classes share a name token, so their zero-shot text
        // embeddings are more similar than cross-family pairs on average.
        let enc = encoder();
        let world = generate_world(&WorldConfig::default(), &enc).unwrap();
        let embeds: Vec<EmbeddingVector> = world
            .classes()
            .iter()
            .map(|c| {
                enc.zero_shot(&ClassPrompt::canonical(c.id, c.name.clone()))
                    .unwrap()
            })
            .collect();
        let mut within = Vec::new();
        let mut across = Vec::new();
        for i in 0..world.len() {
            for j in (i + 1)..world.len() {
                let s = embeds[i].cosine(&embeds[j]).unwrap();
                if world.classes()[i].family == world.classes()[j].family {
                    within.push(s);
                } else {
                    across.push(s);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&within) > mean(&across),
            "within {} !> across {}",
            mean(&within),
            mean(&across)
        );
    }

    #[test]
    fn oversized_rosters_are_rejected() {
        let enc = encoder();
        assert!(generate_world(
            &WorldConfig {
                families: 9,
                ..WorldConfig::default()
            },
            &enc
        )
        .is_err());
        assert!(generate_world(
            &WorldConfig {
                classes_per_family: 13,
                ..WorldConfig::default()
            },
            &enc
        )
        .is_err());
    }
}
