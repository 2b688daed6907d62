//! Experiment configuration: a flat, diff-able `key = value` text format.
//!
//! One seed fully determines a run. Unknown keys are rejected; later keys
//! win (so CLI overrides are just appended pairs). Every run writes back a
//! fully resolved echo that reproduces it when fed to the CLI again.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::AdamParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Vae,
    Idvae,
    IdvaeR,
    NoSharing,
    CIdvae,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Vae, Variant::Idvae, Variant::IdvaeR, Variant::NoSharing, Variant::CIdvae];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::Idvae => "idvae",
            Variant::IdvaeR => "idvae_r",
            Variant::NoSharing => "no_sharing",
            Variant::CIdvae => "c_idvae",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "vae" => Ok(Variant::Vae),
            "idvae" => Ok(Variant::Idvae),
            "idvae_r" => Ok(Variant::IdvaeR),
            "no_sharing" => Ok(Variant::NoSharing),
            "c_idvae" => Ok(Variant::CIdvae),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected vae|idvae|idvae_r|no_sharing|c_idvae)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    DisFirst,
    EncFirst,
    Joint,
}

impl Schedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Schedule::DisFirst => "dis_first",
            Schedule::EncFirst => "enc_first",
            Schedule::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Schedule> {
        match s {
            "dis_first" => Ok(Schedule::DisFirst),
            "enc_first" => Ok(Schedule::EncFirst),
            "joint" => Ok(Schedule::Joint),
            other => Err(Error::Config(format!(
                "unknown schedule '{other}' (expected dis_first|enc_first|joint)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetId {
    Ring2d,
    Idx,
}

impl DatasetId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetId::Ring2d => "ring2d",
            DatasetId::Idx => "idx",
        }
    }

    pub fn parse(s: &str) -> Result<DatasetId> {
        match s {
            "ring2d" => Ok(DatasetId::Ring2d),
            "idx" => Ok(DatasetId::Idx),
            other => Err(Error::Config(format!("unknown dataset '{other}' (expected ring2d|idx)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub schedule: Schedule,
    pub dataset: DatasetId,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub weights: LossWeights,
    pub adam: AdamParams,
    pub log_every: usize,
    /// Dense widths for vector data, conv channels for images.
    pub trunk: Vec<usize>,
    // ring2d parameters
    pub ring_modes: usize,
    pub ring_radius: f32,
    pub ring_sigma: f32,
    pub train_n: usize,
    pub test_n: usize,
    // idx paths
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use only the first n training examples (0 = all).
    pub limit_train: usize,
    pub out_dir: PathBuf,
    /// Diagnostic: drop the discriminator phase from the schedule.
    pub skip_dis_phase: bool,
}

impl ExperimentConfig {
    /// Defaults for the 2-D ring experiment.
    pub fn ring_defaults() -> ExperimentConfig {
        ExperimentConfig {
            variant: Variant::Idvae,
            schedule: Schedule::DisFirst,
            dataset: DatasetId::Ring2d,
            seed: 1,
            epochs: 20,
            batch_size: 64,
            latent_dim: 2,
            weights: LossWeights::default(),
            adam: AdamParams::default(),
            log_every: 50,
            trunk: vec![128, 128],
            ring_modes: 8,
            ring_radius: 2.0,
            ring_sigma: 0.02,
            train_n: 8192,
            test_n: 2048,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            limit_train: 0,
            out_dir: PathBuf::from("runs/ring2d"),
            skip_dis_phase: false,
        }
    }

    /// Defaults for IDX image datasets.
    pub fn idx_defaults() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetId::Idx,
            latent_dim: 64,
            trunk: vec![32, 64, 128],
            out_dir: PathBuf::from("runs/images"),
            ..ExperimentConfig::ring_defaults()
        }
    }

    pub fn defaults_for(dataset: DatasetId) -> ExperimentConfig {
        match dataset {
            DatasetId::Ring2d => ExperimentConfig::ring_defaults(),
            DatasetId::Idx => ExperimentConfig::idx_defaults(),
        }
    }

    /// Apply key=value pairs in order over dataset-appropriate defaults.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<ExperimentConfig> {
        let dataset = match pairs.iter().rev().find(|(k, _)| k == "dataset") {
            Some((_, v)) => DatasetId::parse(v)?,
            None => DatasetId::Ring2d,
        };
        let mut cfg = ExperimentConfig::defaults_for(dataset);
        for (k, v) in pairs {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a config file (optional), then apply overrides.
    pub fn from_sources(file: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            pairs.extend(parse_kv_file(path)?);
        }
        pairs.extend(overrides.iter().cloned());
        ExperimentConfig::from_pairs(&pairs)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse::<T>().map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
        }
        match key {
            "variant" => self.variant = Variant::parse(value)?,
            "schedule" => self.schedule = Schedule::parse(value)?,
            "dataset" => self.dataset = DatasetId::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "alpha" => self.weights.alpha = num(key, value)?,
            "beta" => self.weights.beta = num(key, value)?,
            "omega" => self.weights.omega = num(key, value)?,
            "lambda" => self.weights.lambda = num(key, value)?,
            "gamma" => self.weights.gamma = num(key, value)?,
            "lr" => self.adam.lr = num(key, value)?,
            "adam_beta1" => self.adam.beta1 = num(key, value)?,
            "adam_beta2" => self.adam.beta2 = num(key, value)?,
            "adam_eps" => self.adam.eps = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "trunk" => {
                let mut dims = Vec::new();
                for part in value.split(',') {
                    dims.push(num::<usize>(key, part.trim())?);
                }
                self.trunk = dims;
            }
            "ring_modes" => self.ring_modes = num(key, value)?,
            "ring_radius" => self.ring_radius = num(key, value)?,
            "ring_sigma" => self.ring_sigma = num(key, value)?,
            "train_n" => self.train_n = num(key, value)?,
            "test_n" => self.test_n = num(key, value)?,
            "train_images" => self.train_images = Some(PathBuf::from(value)),
            "train_labels" => self.train_labels = Some(PathBuf::from(value)),
            "test_images" => self.test_images = Some(PathBuf::from(value)),
            "test_labels" => self.test_labels = Some(PathBuf::from(value)),
            "limit_train" => self.limit_train = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "skip_dis_phase" => self.skip_dis_phase = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.trunk.is_empty() {
            return Err(Error::Config("trunk must list at least one layer".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        self.weights.validate()?;
        match self.variant {
            Variant::IdvaeR => {
                if self.weights.gamma <= 0.0 {
                    return Err(Error::Config("idvae_r requires gamma > 0".into()));
                }
            }
            _ => {
                if self.weights.gamma != 0.0 {
                    return Err(Error::Config(format!(
                        "gamma is only meaningful for idvae_r (variant is {})",
                        self.variant
                    )));
                }
            }
        }
        match self.dataset {
            DatasetId::Ring2d => {
                if self.ring_modes == 0 || !(self.ring_sigma > 0.0) {
                    return Err(Error::Config("ring2d needs ring_modes >= 1 and ring_sigma > 0".into()));
                }
                if self.train_n == 0 || self.test_n == 0 {
                    return Err(Error::Config("ring2d needs train_n and test_n >= 1".into()));
                }
            }
            DatasetId::Idx => {
                for (name, p) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if p.is_none() {
                        return Err(Error::Config(format!("dataset idx requires {name}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// All keys and values, sorted: the resolved-config echo.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("variant".into(), self.variant.as_str().into()),
            ("schedule".into(), self.schedule.as_str().into()),
            ("dataset".into(), self.dataset.as_str().into()),
            ("seed".into(), self.seed.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("alpha".into(), self.weights.alpha.to_string()),
            ("beta".into(), self.weights.beta.to_string()),
            ("omega".into(), self.weights.omega.to_string()),
            ("lambda".into(), self.weights.lambda.to_string()),
            ("gamma".into(), self.weights.gamma.to_string()),
            ("lr".into(), self.adam.lr.to_string()),
            ("adam_beta1".into(), self.adam.beta1.to_string()),
            ("adam_beta2".into(), self.adam.beta2.to_string()),
            ("adam_eps".into(), self.adam.eps.to_string()),
            ("log_every".into(), self.log_every.to_string()),
            (
                "trunk".into(),
                self.trunk.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("limit_train".into(), self.limit_train.to_string()),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("skip_dis_phase".into(), self.skip_dis_phase.to_string()),
        ];
        match self.dataset {
            DatasetId::Ring2d => {
                kv.push(("ring_modes".into(), self.ring_modes.to_string()));
                kv.push(("ring_radius".into(), self.ring_radius.to_string()));
                kv.push(("ring_sigma".into(), self.ring_sigma.to_string()));
                kv.push(("train_n".into(), self.train_n.to_string()));
                kv.push(("test_n".into(), self.test_n.to_string()));
            }
            DatasetId::Idx => {
                for (name, p) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if let Some(p) = p {
                        kv.push((name.into(), p.display().to_string()));
                    }
                }
            }
        }
        kv.sort();
        kv
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Parse `key = value` lines; '#' starts a comment line, blanks are skipped.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_kv_text(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected 'key = value'", lineno + 1)));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parse a CLI `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Config(format!("bad override '{s}', expected key=value"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let cfg = ExperimentConfig::ring_defaults();
        let text = cfg.to_text();
        let pairs = parse_kv_text(&text).unwrap();
        let back = ExperimentConfig::from_pairs(&pairs).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn idx_defaults_roundtrip() {
        let mut cfg = ExperimentConfig::idx_defaults();
        cfg.train_images = Some("a.idx".into());
        cfg.train_labels = Some("b.idx".into());
        cfg.test_images = Some("c.idx".into());
        cfg.test_labels = Some("d.idx".into());
        let back = ExperimentConfig::from_pairs(&parse_kv_text(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_pairs(&[("bogus".into(), "1".into())]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn later_keys_win() {
        let cfg = ExperimentConfig::from_pairs(&[
            ("seed".into(), "1".into()),
            ("seed".into(), "9".into()),
        ])
        .unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn gamma_only_for_idvae_r() {
        let err = ExperimentConfig::from_pairs(&[("gamma".into(), "1".into())]).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        let ok = ExperimentConfig::from_pairs(&[
            ("variant".into(), "idvae_r".into()),
            ("gamma".into(), "1".into()),
        ]);
        assert!(ok.is_ok());
        let missing = ExperimentConfig::from_pairs(&[("variant".into(), "idvae_r".into())]);
        assert!(missing.is_err());
    }

    #[test]
    fn idx_requires_paths() {
        let err = ExperimentConfig::from_pairs(&[("dataset".into(), "idx".into())]).unwrap_err();
        assert!(err.to_string().contains("train_images"));
    }

    #[test]
    fn dataset_key_position_does_not_matter() {
        // trunk picks up image defaults even when dataset comes later
        let cfg = ExperimentConfig::from_pairs(&[
            ("train_images".into(), "a".into()),
            ("train_labels".into(), "b".into()),
            ("test_images".into(), "c".into()),
            ("test_labels".into(), "d".into()),
            ("dataset".into(), "idx".into()),
        ])
        .unwrap();
        assert_eq!(cfg.trunk, vec![32, 64, 128]);
        assert_eq!(cfg.latent_dim, 64);
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let pairs = parse_kv_text("# header\n\nseed = 4\n  # indented comment\n").unwrap();
        assert_eq!(pairs, vec![("seed".to_string(), "4".to_string())]);
    }
}
