//! TOML run configuration.
//!
//! ```toml
//! [data]
//! train = "data/train.jsonl"
//! dev = "data/dev.jsonl"
//! test = "data/test.jsonl"        # optional
//! embeddings = "vectors.txt"      # optional, word2vec text format
//! checkpoint_dir = "runs/clothes"
//!
//! [training]
//! batch_size = 32
//! eta = 0.5
//!
//! [training.model]
//! hidden = 64
//! interaction = "no_position"
//! ```
//!
//! Instead of corpus paths, `[data.synth]` generates a planted-rule corpus
//! (split 80/10/10 with `data.synth_seed`).

use std::path::{Path, PathBuf};

use rssn::config::TrainConfig;
use rssn::corpus::SynthSpec;
use rssn::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub synth_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    #[serde(default)]
    pub training: TrainConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, Error> {
        let mut cfg: RunConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        let base = origin.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.train,
            &mut cfg.data.dev,
            &mut cfg.data.test,
            &mut cfg.data.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        cfg.data.checkpoint_dir = base.join(&cfg.data.checkpoint_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.training.validate()?;
        let d = &self.data;
        match (&d.synth, &d.train, &d.dev) {
            (Some(_), None, None) => {}
            (Some(_), _, _) => {
                return Err(Error::Config("data.synth cannot be combined with corpus paths".into()))
            }
            (None, Some(_), Some(_)) => {}
            (None, _, _) => return Err(Error::Config("data.train and data.dev are required".into())),
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let text = "[data]\ntrain = \"a.jsonl\"\ndev = \"b.jsonl\"\ncheckpoint_dir = \"out\"\n\n[training]\neta = 0.3\n\n[training.model]\nhidden = 64\n";
        let cfg = RunConfigFile::parse(text, Path::new("/x/run.toml")).unwrap();
        assert_eq!(cfg.data.train.as_deref(), Some(Path::new("/x/a.jsonl")));
        assert_eq!(cfg.training.eta, 0.3);
        assert_eq!(cfg.training.model.hidden, 64);
        let again = RunConfigFile::parse(&cfg.to_toml(), Path::new("run.toml")).unwrap();
        assert_eq!(again.training, cfg.training);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_data() {
        let unknown = "[data]\ncheckpoint_dir = \"o\"\n[data.synth]\n[training]\nlearnig_rate = 0.1\n";
        assert!(matches!(RunConfigFile::parse(unknown, Path::new("r.toml")), Err(Error::Config(_))));
        let missing = "[data]\ntrain = \"a\"\ncheckpoint_dir = \"o\"\n";
        assert!(RunConfigFile::parse(missing, Path::new("r.toml")).is_err());
        let bad_eta = "[data]\ncheckpoint_dir = \"o\"\n[data.synth]\n[training]\neta = 1.5\n";
        assert!(RunConfigFile::parse(bad_eta, Path::new("r.toml")).is_err());
    }
}
