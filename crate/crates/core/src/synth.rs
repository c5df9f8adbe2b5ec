//! Seeded synthetic embedding populations with per-region noise and makeup
//! perturbation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, EmbeddingRecord, EmbeddingStore, ProviderMap};
use crate::protocol::{DatasetManifest, MakeupState, ManifestEntry};
use crate::RegionTag;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

fn default_dataset() -> String {
    "custom".into()
}

fn default_provider() -> String {
    "synthetic".into()
}

/// Regions are the union of the keys of `region_noise` and `makeup_shift`;
/// a region missing from one map takes 0 there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_subjects: usize,
    pub dim: usize,
    pub seed: u64,
    #[serde(default = "default_dataset")]
    pub dataset_id: String,
    #[serde(default = "default_provider")]
    pub provider_id: String,
    #[serde(default)]
    pub region_noise: BTreeMap<RegionTag, f64>,
    #[serde(default)]
    pub makeup_shift: BTreeMap<RegionTag, f64>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: ScenarioSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_subjects < 2 {
            return bad(format!("n_subjects must be at least 2, got {}", self.n_subjects));
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.regions().is_empty() {
            return bad("no regions configured".into());
        }
        for (name, map) in [("region_noise", &self.region_noise), ("makeup_shift", &self.makeup_shift)] {
            for (r, v) in map {
                if !v.is_finite() || *v < 0.0 {
                    return bad(format!("{name}.{r} must be finite and non-negative, got {v}"));
                }
            }
        }
        if self.dataset_id.contains(',') || self.provider_id.contains(',') {
            return bad("ids must not contain commas".into());
        }
        Ok(())
    }

    pub fn regions(&self) -> Vec<RegionTag> {
        let mut r: Vec<RegionTag> = self.region_noise.keys().chain(self.makeup_shift.keys()).copied().collect();
        r.sort();
        r.dedup();
        r
    }

    /// Two images per state for `ymu`, one otherwise.
    pub fn images_per_state(&self) -> usize {
        if self.dataset_id == "ymu" {
            2
        } else {
            1
        }
    }

    /// Holistic face heavily perturbed by makeup, two parts clean, the rest
    /// moderately perturbed; every region shares the same base noise.
    pub fn scenario_s1(seed: u64) -> Self {
        let noise = 1.5;
        let shift = |r: RegionTag| match r {
            RegionTag::Holistic => 2.5,
            RegionTag::Nose | RegionTag::ThirdUpper => 0.0,
            _ => 1.0,
        };
        ScenarioSpec {
            n_subjects: 200,
            dim: 64,
            seed,
            dataset_id: default_dataset(),
            provider_id: default_provider(),
            region_noise: RegionTag::ALL.iter().map(|&r| (r, noise)).collect(),
            makeup_shift: RegionTag::ALL.iter().map(|&r| (r, shift(r))).collect(),
        }
    }

    /// Every region perturbed identically: no complementary signal to fuse.
    pub fn scenario_s2(seed: u64) -> Self {
        ScenarioSpec {
            makeup_shift: RegionTag::ALL.iter().map(|&r| (r, 1.0)).collect(),
            ..Self::scenario_s1(seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub store: EmbeddingStore,
    pub providers: ProviderMap,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Draws one population. Each (subject, region) cell has its own random
/// stream and consumes the same draws whatever σ and δ are, so changing one
/// region's parameters leaves every other number unchanged.
///
/// Per subject and region: identity `u` uniform on the sphere; each image
/// adds isotropic noise with per-component deviation σ/√dim (expected norm
/// σ); after-makeup images also add δ times a uniform random direction.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let regions = spec.regions();
    let per_state = spec.images_per_state();
    let sd = |m: &BTreeMap<RegionTag, f64>, r| m.get(&r).copied().unwrap_or(0.0);

    let mut entries = Vec::new();
    let mut store = EmbeddingStore::new();
    for s in 0..spec.n_subjects {
        let subject = format!("{}_s{s:04}", spec.dataset_id);
        let mut images = Vec::new();
        for state in [MakeupState::Before, MakeupState::After] {
            for k in 0..per_state {
                let image = format!("{subject}_{}{k}", state.as_str());
                entries.push(ManifestEntry {
                    subject_id: subject.clone(),
                    image_id: image.clone(),
                    makeup_state: state,
                    landmark_file: "-".into(),
                    image_file: "-".into(),
                });
                images.push((image, state));
            }
        }
        for &r in &regions {
            let region_idx = RegionTag::ALL.iter().position(|&x| x == r).expect("known region") as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed ^ mix(s as u64 * 16 + region_idx)));
            let identity = unit(gaussian(&mut rng, spec.dim));
            let sigma = sd(&spec.region_noise, r) / (spec.dim as f64).sqrt();
            let delta = sd(&spec.makeup_shift, r);
            for (image, state) in &images {
                let noise = gaussian(&mut rng, spec.dim);
                let direction = unit(gaussian(&mut rng, spec.dim));
                let shift = if *state == MakeupState::After { delta } else { 0.0 };
                let v: Vec<f64> = (0..spec.dim)
                    .map(|i| identity[i] + sigma * noise[i] + shift * direction[i])
                    .collect();
                store.insert(EmbeddingRecord::new(&subject, image, r, &spec.provider_id, v)?)?;
            }
        }
    }
    Ok(SyntheticDataset {
        manifest: DatasetManifest {
            dataset_id: spec.dataset_id.clone(),
            entries,
        },
        providers: ProviderMap::uniform(&spec.provider_id, &regions),
        store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_scenario() {
        let spec = ScenarioSpec::from_toml(
            r#"
n_subjects = 4
dim = 8
seed = 3
dataset_id = "ymu"

[region_noise]
holistic = 0.2
nose = 0.1

[makeup_shift]
holistic = 1.5
"#,
        )
        .unwrap();
        assert_eq!(spec.regions(), vec![RegionTag::Holistic, RegionTag::Nose]);
        assert_eq!(spec.provider_id, "synthetic");
        assert_eq!(ScenarioSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let d = generate(&spec).unwrap();
        assert_eq!(d.manifest.entries.len(), 16);
        assert_eq!(d.store.len(), 32);
        d.manifest.validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = ScenarioSpec::scenario_s1(0);
        s.n_subjects = 1;
        assert!(s.validate().is_err());
        let mut s = ScenarioSpec::scenario_s1(0);
        s.makeup_shift.insert(RegionTag::Nose, -1.0);
        assert!(s.validate().is_err());
        assert!(ScenarioSpec::from_toml("n_subjects = 3\ndim = 4\nseed = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn region_streams_are_independent_of_other_regions() {
        let mut a = ScenarioSpec::scenario_s1(5);
        a.n_subjects = 3;
        let mut b = a.clone();
        b.makeup_shift.insert(RegionTag::Holistic, 9.0);
        b.region_noise.remove(&RegionTag::Mouth);
        b.makeup_shift.remove(&RegionTag::Mouth);
        let (da, db) = (generate(&a).unwrap(), generate(&b).unwrap());
        let key = |d: &SyntheticDataset| {
            d.store
                .get("custom_s0001_after0", RegionTag::Nose, "synthetic")
                .unwrap()
                .vector()
                .to_vec()
        };
        assert_eq!(key(&da), key(&db));
    }
}
