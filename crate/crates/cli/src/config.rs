use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use vessel_agreement::patches::{Quotas, DEFAULT_DUPLICATES, DEFAULT_PATCH_SIZE};
use vessel_agreement::rating::Reference;
use vessel_agreement::vesselness::{FrangiParams, Polarity, ScaleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

/// Every tunable of every pipeline. Loaded from `--config` (JSON, all keys
/// optional) and then overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: Option<PathBuf>,
    /// Output directory. Not echoed into manifests so that runs into
    /// different directories stay comparable.
    #[serde(skip_serializing_if = "is_default_out")]
    pub out: PathBuf,
    pub seed: u64,
    pub patch_size: usize,
    pub patch_count: usize,
    /// The two annotators compared, in (a, b) order.
    pub annotators: [String; 2],
    pub thresholds: ThresholdGrid,
    pub sigmas: Vec<f64>,
    pub polarity: Polarity,
    pub frangi: FrangiParams,
    pub quotas: Quotas,
    pub duplicates: usize,
    pub reference: Reference,
    pub addr: String,
}

fn is_default_out(p: &Path) -> bool {
    p == Path::new("out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scales = ScaleParams::default();
        PipelineConfig {
            dataset: None,
            out: PathBuf::from("out"),
            seed: 0,
            patch_size: DEFAULT_PATCH_SIZE,
            patch_count: 2000,
            annotators: ["A1".into(), "A2".into()],
            thresholds: ThresholdGrid {
                min: 0.5,
                max: 6.0,
                step: 0.5,
            },
            sigmas: scales.sigmas().to_vec(),
            polarity: scales.polarity(),
            frangi: FrangiParams::default(),
            quotas: Quotas::default(),
            duplicates: DEFAULT_DUPLICATES,
            reference: Reference::A1,
            addr: "127.0.0.1:8080".into(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn scales(&self) -> vessel_agreement::Result<ScaleParams> {
        ScaleParams::new(self.sigmas.clone(), self.polarity)
    }

    /// Parameters echoed into manifests: everything except the output path.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("out");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(
            r#"{"seed": 9, "quotas": {"NONE": 0, "BOTH": 1, "A1_ONLY": 2, "A2_ONLY": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.quotas.total(), 6);
        assert_eq!(c.patch_size, 128);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn echo_omits_output_dir() {
        let c = PipelineConfig {
            out: "/tmp/x".into(),
            ..PipelineConfig::default()
        };
        assert!(c.echo().get("out").is_none());
        assert_eq!(c.echo()["seed"], 0);
    }
}
