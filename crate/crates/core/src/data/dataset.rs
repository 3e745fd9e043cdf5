use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pgm;
use super::render::generate_sample;
use super::spec::{DatasetPreset, DomainSpec};
use super::ImageSample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (train|test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCounts {
    pub spec: DomainSpec,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub resolution: usize,
    pub domains: Vec<DomainCounts>,
}

impl DatasetConfig {
    pub fn preset(preset: DatasetPreset) -> Self {
        let specs = [DomainSpec::ring(), DomainSpec::blob(), DomainSpec::bilobed()];
        let domains = match preset {
            DatasetPreset::Default => specs
                .map(|spec| DomainCounts {
                    spec,
                    n_train: 500,
                    n_test: 100,
                })
                .to_vec(),
            DatasetPreset::Scarce => specs
                .into_iter()
                .enumerate()
                .map(|(d, spec)| DomainCounts {
                    spec,
                    n_train: if d == 2 { 20 } else { 500 },
                    n_test: 100,
                })
                .collect(),
            DatasetPreset::Toy => specs[..2]
                .iter()
                .map(|spec| DomainCounts {
                    spec: spec.clone(),
                    n_train: 50,
                    n_test: 20,
                })
                .collect(),
        };
        DatasetConfig {
            resolution: 64,
            domains,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 {
            return Err(Error::Config(format!("resolution {} must be >= 32", self.resolution)));
        }
        if self.domains.is_empty() {
            return Err(Error::Config("at least one domain is required".into()));
        }
        if self.domains.len() > u8::MAX as usize - 1 {
            return Err(Error::Config("too many domains".into()));
        }
        for d in &self.domains {
            d.spec.validate()?;
        }
        Ok(())
    }

    /// Per-sample RNG: one ChaCha stream per `(split, domain, index)`.
    pub fn sample_rng(seed: u64, split: Split, domain: usize, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((split.stream_tag() << 56) | ((domain as u64) << 40) | index as u64);
        rng
    }

    fn count(&self, domain: usize, split: Split) -> usize {
        match split {
            Split::Train => self.domains[domain].n_train,
            Split::Test => self.domains[domain].n_test,
        }
    }
}

/// In-memory dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub resolution: usize,
    pub domain_names: Vec<String>,
    pub train: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

impl Dataset {
    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn split(&self, split: Split) -> &[ImageSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn domain(&self, split: Split, domain: usize) -> Vec<ImageSample> {
        self.split(split)
            .iter()
            .filter(|s| s.domain == domain)
            .cloned()
            .collect()
    }

    pub fn count(&self, split: Split, domain: usize) -> usize {
        self.split(split).iter().filter(|s| s.domain == domain).count()
    }
}

/// Render every sample; generation is parallel but each sample owns its RNG
/// stream, so the result does not depend on thread count.
pub fn generate(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let render = |split: Split| -> Vec<ImageSample> {
        let jobs: Vec<(usize, usize)> = (0..config.domains.len())
            .flat_map(|d| (0..config.count(d, split)).map(move |i| (d, i)))
            .collect();
        jobs.into_par_iter()
            .map(|(d, i)| {
                let mut rng = DatasetConfig::sample_rng(seed, split, d, i);
                generate_sample(&config.domains[d].spec, config.resolution, d, &mut rng)
            })
            .collect()
    };
    Ok(Dataset {
        seed,
        resolution: config.resolution,
        domain_names: config.domains.iter().map(|d| d.spec.name.clone()).collect(),
        train: render(Split::Train),
        test: render(Split::Test),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub image: String,
    pub mask: String,
    pub domain: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub resolution: usize,
    pub domains: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Generate and write `{split}/{domain}/{index}_image.pgm` and `_mask.pgm`
/// under `out_dir`, plus `manifest.json`.
pub fn generate_dataset(config: &DatasetConfig, seed: u64, out_dir: &Path) -> Result<(Manifest, PathBuf)> {
    let ds = generate(config, seed)?;
    let mut entries = Vec::with_capacity(ds.train.len() + ds.test.len());
    for split in [Split::Train, Split::Test] {
        let mut next = vec![0usize; ds.num_domains()];
        for s in ds.split(split) {
            let idx = next[s.domain];
            next[s.domain] += 1;
            let dir = format!("{split}/{}", s.domain);
            std::fs::create_dir_all(out_dir.join(&dir)).map_err(|e| Error::io(out_dir.join(&dir), e))?;
            let image = format!("{dir}/{idx:05}_image.pgm");
            let mask = format!("{dir}/{idx:05}_mask.pgm");
            pgm::write_image(&out_dir.join(&image), &s.image)?;
            pgm::write_mask(&out_dir.join(&mask), &s.mask)?;
            entries.push(ManifestEntry {
                image,
                mask,
                domain: s.domain,
                split,
            });
        }
    }
    let manifest = Manifest {
        seed,
        resolution: ds.resolution,
        domains: ds.domain_names,
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((manifest, path))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(e) = m.entries.iter().find(|e| e.domain >= m.domains.len()) {
        return Err(Error::Data(format!(
            "manifest entry {} names domain {} but only {} are listed",
            e.image,
            e.domain,
            m.domains.len()
        )));
    }
    Ok(m)
}

/// Read a manifest and every image/mask it lists. `path` may be the manifest
/// file or its directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = file.parent().unwrap_or(Path::new("."));
    let m = load_manifest(&file)?;
    let load = |e: &ManifestEntry| -> Result<ImageSample> {
        let image = pgm::read_image(&root.join(&e.image))?;
        let mask = pgm::read_mask(&root.join(&e.mask))?;
        if image.shape()[1..] != [mask.height(), mask.width()] {
            return Err(Error::Data(format!("{}: image and mask extents differ", e.image)));
        }
        Ok(ImageSample {
            image,
            mask,
            domain: e.domain,
        })
    };
    let pick = |split: Split| -> Result<Vec<ImageSample>> {
        m.entries.par_iter().filter(|e| e.split == split).map(load).collect()
    };
    Ok(Dataset {
        seed: m.seed,
        resolution: m.resolution,
        train: pick(Split::Train)?,
        test: pick(Split::Test)?,
        domain_names: m.domains,
    })
}
