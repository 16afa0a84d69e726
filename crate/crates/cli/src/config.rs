//! The JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::Context;
use igel::eval::ScalingConfig;
use igel::graph::{EdgeListDialect, Graph};
use igel::supervised::{EdgeClassifierConfig, HeadConfig, Split};
use igel::unsup::UnsupConfig;
use igel::walker::{mix64, WalkConfig};
use igel::EncoderConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Top-level seed; every component seed is derived from it.
    pub seed: u64,
    pub graph: Option<PathBuf>,
    pub dialect: EdgeListDialect,
    pub out_dir: Option<PathBuf>,
    pub encoder: EncoderSection,
    pub walk: WalkConfig,
    pub unsup: UnsupConfig,
    pub link_prediction: LinkSection,
    pub cluster: ClusterSection,
    pub classify: ClassifySection,
    pub bench: BenchSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub alpha: u32,
    /// Size of the degree axis; the graph's largest degree when absent.
    pub delta_max: Option<u32>,
    pub apply_log: bool,
    pub apply_unit_norm: bool,
    pub log_bins: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            alpha: 1,
            delta_max: None,
            apply_log: true,
            apply_unit_norm: true,
            log_bins: false,
        }
    }
}

impl EncoderSection {
    pub fn resolve(&self, max_degree: usize) -> EncoderConfig {
        EncoderConfig {
            alpha: self.alpha,
            delta_max: self.delta_max.unwrap_or(max_degree.max(1) as u32),
            apply_log: self.apply_log,
            apply_unit_norm: self.apply_unit_norm,
            log_bins: self.log_bins,
        }
    }

    pub fn resolve_for(&self, g: &Graph) -> EncoderConfig {
        self.resolve(g.max_degree())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub split_fraction: f64,
    pub test_fraction: f64,
    pub classifier: EdgeClassifierConfig,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            split_fraction: 0.5,
            test_fraction: 0.5,
            classifier: EdgeClassifierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection { k_min: 2, k_max: 15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphEntry {
    pub edges: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub attributes: Option<PathBuf>,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    pub graphs: Vec<GraphEntry>,
    pub head: HeadConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    pub size_degree: f64,
    pub degrees: Vec<f64>,
    pub degree_nodes: usize,
    pub alphas: Vec<u32>,
    pub degree_alphas: Vec<u32>,
    pub replicates: usize,
    pub fit_min_nodes: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let s = ScalingConfig::default();
        BenchSection {
            sizes: s.sizes,
            size_degree: s.size_degree,
            degrees: s.degrees,
            degree_nodes: s.degree_nodes,
            alphas: s.alphas,
            degree_alphas: s.degree_alphas,
            replicates: s.replicates,
            fit_min_nodes: s.fit_min_nodes,
        }
    }
}

// Salts separating the derived seeds.
const WALK: u64 = 0x7761_6c6b;
const TRAIN: u64 = 0x7472_6169;
const HEAD: u64 = 0x6865_6164;

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }

    /// Replaces every component seed with one derived from `seed`.
    pub fn derive_seeds(&mut self) {
        self.walk.seed = mix64(self.seed ^ WALK);
        self.unsup.seed = mix64(self.seed ^ TRAIN);
        self.classify.head.seed = mix64(self.seed ^ HEAD);
    }

    pub fn scaling(&self) -> ScalingConfig {
        let b = &self.bench;
        ScalingConfig {
            sizes: b.sizes.clone(),
            size_degree: b.size_degree,
            degrees: b.degrees.clone(),
            degree_nodes: b.degree_nodes,
            alphas: b.alphas.clone(),
            degree_alphas: b.degree_alphas.clone(),
            replicates: b.replicates,
            walk: self.walk,
            unsup: self.unsup.clone(),
            fit_min_nodes: b.fit_min_nodes,
            seed: self.seed,
        }
    }

    pub fn k_range(&self) -> anyhow::Result<Vec<usize>> {
        let c = &self.cluster;
        if c.k_min == 0 || c.k_min > c.k_max {
            return Err(ConfigError(format!("invalid k range {}..={}", c.k_min, c.k_max)).into());
        }
        Ok((c.k_min..=c.k_max).collect())
    }
}
