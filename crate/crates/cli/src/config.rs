//! Run configuration, config hashing and run directories.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gwn_core::codec::{Arch, BatchSource, CodecConfig, CombineRule, InputView, TrainOptions};
use gwn_core::source_gen::{AttributeKind, AttributeSource, AttributePmfSpec, SyntheticSource, SyntheticSourceSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Seed override read by every subcommand that takes a seed.
pub const SEED_ENV: &str = "GWN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Synthetic(SyntheticSourceSpec),
    Attribute(AttributeConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeConfig {
    pub attribute: AttributeKind,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_embedding_dim() -> usize {
    20
}

fn default_noise() -> f64 {
    0.1
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Synthetic(SyntheticSourceSpec::desk(1))
    }
}

impl SourceConfig {
    pub fn build(&self) -> Result<Box<dyn BatchSource>> {
        Ok(match self {
            SourceConfig::Synthetic(spec) => Box::new(SyntheticSource::new(spec.clone()).context("source_gen")?),
            SourceConfig::Attribute(a) => Box::new(
                AttributeSource::new(
                    AttributePmfSpec::new(a.attribute, a.embedding_dim, a.noise_scale, a.seed).context("source_gen")?,
                )
                .context("source_gen")?,
            ),
        })
    }
}

/// Codec settings; the seed comes from the run's master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub arch: Arch,
    pub latent_dim: usize,
    pub beta: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Defaults to `1 / eta`.
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub combine: CombineRule,
    pub view: InputView,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self {
            arch: Arch::Shared,
            latent_dim: 16,
            beta: 1.0,
            eta: 0.1,
            gamma: 1.0,
            lambda1: None,
            lambda2: None,
            combine: CombineRule::default(),
            view: InputView::default(),
        }
    }
}

impl CodecSection {
    pub fn resolve(&self, seed: u64) -> CodecConfig {
        let mut cfg = CodecConfig::new(self.arch, self.latent_dim, self.beta, self.eta, seed);
        cfg.gamma = self.gamma;
        cfg.lambda1 = self.lambda1.unwrap_or(cfg.lambda1);
        cfg.lambda2 = self.lambda2.unwrap_or(cfg.lambda2);
        cfg.combine = self.combine;
        cfg.view = self.view;
        cfg
    }
}

/// Configuration file of `train` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub source: SourceConfig,
    pub codec: CodecSection,
    pub training: TrainOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).map_err(|e| validation(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = seed_override()? {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Seed from `GWN_SEED`, if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| validation(format!("{SEED_ENV}={v}: {e}"))),
        Err(_) => Ok(None),
    }
}

/// Wraps a message as a validation error of the core crate so that it
/// maps onto the validation exit code.
pub fn validation(msg: impl Into<String>) -> anyhow::Error {
    gwn_core::Error::InvalidArgument(msg.into()).into()
}

/// First 16 hex digits of the SHA-256 of the config's canonical JSON.
pub fn config_hash(command: &str, resolved: &serde_json::Value) -> String {
    let canonical = serde_json::json!({ "command": command, "config": resolved });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Output directory of one subcommand run, named by its config hash.
pub struct RunDir {
    pub path: PathBuf,
    pub hash: String,
    pub seed: u64,
}

impl RunDir {
    /// Creates `<root>/<command>-<hash>` and writes `config.json`.
    pub fn create(root: &Path, command: &str, resolved: &impl Serialize, seed: u64) -> Result<Self> {
        let value = serde_json::to_value(resolved)?;
        let hash = config_hash(command, &value);
        let path = root.join(format!("{command}-{hash}"));
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let dir = RunDir { path, hash, seed };
        dir.write_json(
            "config.json",
            &serde_json::json!({ "command": command, "config_hash": dir.hash, "seed": seed, "config": value }),
        )?;
        Ok(dir)
    }

    /// Writes `value` as pretty JSON with the config hash and seed added
    /// at the top level.
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        match &mut v {
            serde_json::Value::Object(m) => {
                m.insert("config_hash".into(), self.hash.clone().into());
                m.insert("seed".into(), self.seed.into());
            }
            other => {
                *other = serde_json::json!({ "config_hash": self.hash, "seed": self.seed, "data": other.clone() });
            }
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes CSV text with a `config_hash` column appended, plus a `seed`
    /// column when the table has none.
    pub fn write_csv(&self, name: &str, csv: &str) -> Result<PathBuf> {
        let mut out = String::with_capacity(csv.len() + 64);
        let mut add_seed = false;
        for (i, line) in csv.split("\r\n").filter(|l| !l.is_empty()).enumerate() {
            if i == 0 {
                add_seed = !line.split(',').any(|h| h == "seed");
                out.push_str(line);
                out.push_str(if add_seed { ",config_hash,seed" } else { ",config_hash" });
            } else {
                out.push_str(&format!("{line},{}", self.hash));
                if add_seed {
                    out.push_str(&format!(",{}", self.seed));
                }
            }
            out.push_str("\r\n");
        }
        self.write(name, out.as_bytes())
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path.join(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

/// Joins `rows` as RFC 4180 CSV with CRLF line endings. Fields are plain
/// numbers or identifiers and need no quoting.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push_str("\r\n");
    for r in rows {
        out.push_str(&r.join(","));
        out.push_str("\r\n");
    }
    out
}
