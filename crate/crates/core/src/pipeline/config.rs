//! Run configuration shared by every pipeline stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::TransportConfig;
use crate::annotate::{AnnotateConfig, ClientConfig};
use crate::error::{Error, Result};
use crate::hyperembed::HypTrainConfig;
use crate::synth::{EventConfig, SourceConfig, WorldConfig};
use crate::treebuild::GroupingConfig;

/// Input files. Any path left unset defaults to the file the producing
/// stage writes under the output directory. Explicitly set paths must exist
/// when the configuration is loaded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub vocab: Option<PathBuf>,
    pub parents: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub reference_tree: Option<PathBuf>,
    /// Language-model embedding TSV.
    pub coder: Option<PathBuf>,
    /// Event CSV per co-occurrence source.
    pub events: BTreeMap<String, PathBuf>,
    /// Ready-made embedding TSV per co-occurrence source; takes precedence
    /// over the SPPMI output for that source.
    pub embeddings: BTreeMap<String, PathBuf>,
    pub harmonized: Option<PathBuf>,
    pub lorentz: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub annotated_tree: Option<PathBuf>,
}

impl Inputs {
    /// Every explicitly set path.
    pub fn paths(&self) -> Vec<&Path> {
        let singles = [
            &self.vocab,
            &self.parents,
            &self.categories,
            &self.pairs,
            &self.reference_tree,
            &self.coder,
            &self.harmonized,
            &self.lorentz,
            &self.tree,
            &self.annotated_tree,
        ];
        singles
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .chain(self.events.values().map(PathBuf::as_path))
            .chain(self.embeddings.values().map(PathBuf::as_path))
            .collect()
    }

    /// Fails with the first explicitly set path that does not exist.
    pub fn check_exist(&self) -> Result<()> {
        match self.paths().into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingInput(p.to_path_buf())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthStage {
    pub world: WorldConfig,
    /// Names of the co-occurrence sources to simulate.
    pub sources: Vec<String>,
    pub events: EventConfig,
    /// Noisy view written as the language-model embedding.
    pub coder: SourceConfig,
    /// Also write a noisy embedding per source, for runs that skip SPPMI.
    pub source_embeddings: Option<SourceConfig>,
}

impl Default for SynthStage {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            sources: vec!["va".into(), "mgb".into()],
            events: EventConfig::default(),
            coder: SourceConfig::default(),
            source_embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SppmiStage {
    /// Sources to process; defaults to the synthetic source list.
    pub sources: Option<Vec<String>>,
    pub window_days: i64,
    pub dim: usize,
    pub use_total_factor: bool,
    /// Roll descendant counts up into known parent codes.
    pub aggregate_parents: bool,
}

impl Default for SppmiStage {
    fn default() -> Self {
        Self {
            sources: None,
            window_days: 30,
            dim: 16,
            use_total_factor: true,
            aggregate_parents: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignStage {
    /// Source whose space every other source is mapped into.
    pub target: String,
    /// Sources mapped into the target; defaults to all others.
    pub sources: Option<Vec<String>>,
    pub transport: TransportConfig,
}

impl Default for AlignStage {
    fn default() -> Self {
        Self {
            target: "mgb".into(),
            sources: None,
            transport: TransportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedStage {
    pub train: HypTrainConfig,
    /// Use known parent codes for the additivity loss.
    pub use_hierarchy: bool,
}

impl Default for EmbedStage {
    fn default() -> Self {
        Self {
            train: HypTrainConfig::default(),
            use_hierarchy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeStage {
    pub grouping: GroupingConfig,
    pub use_known_parents: bool,
    /// Without categories every code goes into one category named `all`.
    pub use_categories: bool,
}

impl Default for TreeStage {
    fn default() -> Self {
        Self {
            grouping: GroupingConfig::default(),
            use_known_parents: true,
            use_categories: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateStage {
    pub client: ClientConfig,
    pub protocol: AnnotateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    pub negatives_per_positive: usize,
    /// Score the annotated tree with the judge prompts.
    pub judged_scores: bool,
}

impl Default for EvalStage {
    fn default() -> Self {
        Self {
            negatives_per_positive: 5,
            judged_scores: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its randomness from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: Inputs,
    pub synth: SynthStage,
    pub sppmi: SppmiStage,
    pub align: AlignStage,
    pub embed: EmbedStage,
    pub tree: TreeStage,
    pub annotate: AnnotateStage,
    pub eval: EvalStage,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("mash-out"),
            inputs: Inputs::default(),
            synth: SynthStage::default(),
            sppmi: SppmiStage::default(),
            align: AlignStage::default(),
            embed: EmbedStage::default(),
            tree: TreeStage::default(),
            annotate: AnnotateStage::default(),
            eval: EvalStage::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates a config file and checks that its
    /// explicit input paths exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::invalid(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.inputs.check_exist()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Internal(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.align.transport.validate()?;
        self.embed.train.validate()?;
        if self.synth.sources.is_empty() {
            return Err(Error::invalid("synth.sources must name at least one source"));
        }
        if self.sppmi.dim == 0 || self.sppmi.window_days <= 0 {
            return Err(Error::invalid("sppmi.dim and sppmi.window_days must be positive"));
        }
        if self.eval.negatives_per_positive == 0 {
            return Err(Error::invalid("eval.negatives_per_positive must be positive"));
        }
        Ok(())
    }

    /// `out_dir/stage/file`.
    pub fn out_path(&self, stage: &str, file: &str) -> PathBuf {
        self.out_dir.join(stage).join(file)
    }

    pub fn sppmi_sources(&self) -> Vec<String> {
        self.sppmi.sources.clone().unwrap_or_else(|| self.synth.sources.clone())
    }

    /// Sources mapped into the target during alignment.
    pub fn align_sources(&self) -> Vec<String> {
        match &self.align.sources {
            Some(s) => s.clone(),
            None => {
                let mut all: Vec<String> = self.sppmi_sources();
                for k in self.inputs.embeddings.keys() {
                    if !all.contains(k) {
                        all.push(k.clone());
                    }
                }
                all.retain(|s| *s != self.align.target);
                all
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("seed = 3\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[align.transport]\nlearnig_rate = 0.1\n").is_err());
        let c = RunConfig::from_toml_str("seed = 3\n[align.transport]\nhidden_sizes = [4]\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.align.transport.hidden_sizes, vec![4]);
    }

    #[test]
    fn toml_roundtrip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
    }

    #[test]
    fn explicit_inputs_must_exist() {
        let mut c = RunConfig::default();
        assert!(c.inputs.check_exist().is_ok());
        c.inputs.events.insert("va".into(), PathBuf::from("/nonexistent/va.csv"));
        match c.inputs.check_exist() {
            Err(Error::MissingInput(p)) => assert_eq!(p, PathBuf::from("/nonexistent/va.csv")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn align_sources_exclude_target() {
        let c = RunConfig::default();
        assert_eq!(c.align_sources(), vec!["va".to_string()]);
    }
}
