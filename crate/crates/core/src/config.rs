use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::LowRankConfig;
use crate::matting::MatteParams;
use crate::segmenter::{PhantomSpec, StubParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// Generate a synthetic volume with ground truth.
    Phantom(PhantomSpec),
    /// Read a KVOL volume, optionally with KVOL ground-truth labels.
    Volume {
        path: PathBuf,
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

/// Externally produced probability maps that replace the stub segmenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalProbs {
    pub source: PathBuf,
    pub lowrank: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: InputSource,
    pub output_dir: PathBuf,
    pub lowrank: LowRankConfig,
    pub matte: MatteParams,
    /// Segmenter for the source-image path.
    pub source_stub: StubParams,
    /// Segmenter for the low-rank path.
    pub lowrank_stub: StubParams,
    pub external_probs: Option<ExternalProbs>,
    /// Display names indexed by class id; class 0 is background.
    pub class_names: Vec<String>,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputSource::Phantom(PhantomSpec::default()),
            output_dir: PathBuf::from("run"),
            lowrank: LowRankConfig::default(),
            matte: MatteParams::default(),
            source_stub: StubParams {
                erosion_depth: 1,
                ..StubParams::default()
            },
            lowrank_stub: StubParams::default(),
            external_probs: None,
            class_names: vec!["background".into(), "sheet_1".into(), "sheet_2".into()],
            threads: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.lowrank.validate()?;
        self.matte.validate()?;
        if self.external_probs.is_none() {
            self.source_stub.validate()?;
            self.lowrank_stub.validate()?;
            if self.source_stub.class_count() != self.lowrank_stub.class_count() {
                return Err(Error::usage(
                    "source and low-rank stubs must emit the same number of classes",
                ));
            }
        }
        if let InputSource::Phantom(spec) = &self.input {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_use_block_ten_rank_three() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.lowrank.block_depth, cfg.lowrank.slice_rank), (10, 3));
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = PipelineConfig::from_json(
            r#"{"lowrank": {"slice_rank": 5}, "input": {"volume": {"path": "scan"}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.lowrank.slice_rank, 5);
        assert_eq!(cfg.lowrank.block_depth, 10);
        assert_eq!(
            cfg.input,
            InputSource::Volume {
                path: "scan".into(),
                truth: None
            }
        );
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_json_is_usage_error() {
        assert!(matches!(
            PipelineConfig::from_json("{\"lowrank\": 3}"),
            Err(Error::Usage(_))
        ));
    }
}
