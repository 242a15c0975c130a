//! Run configuration: one TOML file with model, data, train, uq, ablate and
//! saliency sections. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use drifa_core::data::DEFAULT_FRACTIONS;
use drifa_core::{AblationFlags, DrifaNetConfig, EnsembleConfig, OmegaFlags, SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Generated data. Used when `path` is absent.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Directory written by the dataset export.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { synthetic: Some(SyntheticSpec::default()), path: None, fractions: DEFAULT_FRACTIONS }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grid {
    /// none, MFA, MIFA, MFA+MIFA
    Table2,
    /// none, HIFA+MGIFA, CLIA+MLIFA, all four
    Table3,
    /// Six modulation-weight rows on an MFA-only network.
    OmegaMfa,
    /// Six modulation-weight rows on a MIFA-only network.
    OmegaMifa,
    /// Rows listed under `[[ablate.rows]]`.
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub label: String,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub omegas: OmegaFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub grid: Grid,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { grid: Grid::Table2, seeds: (0..5).collect(), rows: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencyConfig {
    pub task: usize,
    pub class: usize,
    /// Test samples to render, taken in split order.
    pub max_samples: usize,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self { task: 0, class: 0, max_samples: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: DrifaNetConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub uq: EnsembleConfig,
    pub ablate: AblateConfig,
    pub saliency: SaliencyConfig,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    /// Parses and validates. A `[data]` section with neither `synthetic` nor
    /// `path` falls back to the default synthetic spec.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if config.data.synthetic.is_none() && config.data.path.is_none() {
            config.data.synthetic = Some(SyntheticSpec::default());
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.uq.validate()?;
        match (&self.data.synthetic, &self.data.path) {
            (Some(_), Some(_)) => return Err(config_err("[data] takes either `synthetic` or `path`, not both")),
            (Some(spec), None) => {
                spec.validate()?;
                self.check_data_shape(spec.modalities, &spec.classes_per_task, spec.image_size)?;
            }
            _ => {}
        }
        let f = self.data.fractions;
        if f.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_err(format!("split fractions {f:?} must lie in [0, 1] and sum to 1")));
        }
        if self.ablate.seeds.is_empty() {
            return Err(config_err("[ablate] needs at least one seed"));
        }
        match (self.ablate.grid, self.ablate.rows.is_empty()) {
            (Grid::Custom, true) => return Err(config_err("custom ablation grid needs [[ablate.rows]]")),
            (Grid::Custom, false) | (_, true) => {}
            (grid, false) => return Err(config_err(format!("[[ablate.rows]] only apply to the custom grid, not {grid:?}"))),
        }
        let s = &self.saliency;
        match self.model.tasks.get(s.task) {
            Some(&n) if s.class < n => {}
            _ => return Err(config_err(format!("saliency task {} / class {} out of range", s.task, s.class))),
        }
        Ok(())
    }

    /// Model and data must agree on modality count, input channels and tasks.
    pub fn check_data_shape(&self, modalities: usize, classes: &[usize], image_size: [usize; 3]) -> Result<()> {
        let m = &self.model;
        if m.modalities != modalities || m.in_channels != image_size[2] || m.tasks != classes {
            return Err(config_err(format!(
                "model expects {} modalities, {} channels, tasks {:?}; data has {modalities}, {}, {classes:?}",
                m.modalities, m.in_channels, m.tasks, image_size[2]
            )));
        }
        Ok(())
    }

    /// Rows of the configured ablation grid, each a full model config.
    pub fn ablation_rows(&self) -> Vec<(String, DrifaNetConfig)> {
        let base = &self.model;
        let with = |ablation: AblationFlags, omegas: OmegaFlags| DrifaNetConfig { ablation, omegas, ..base.clone() };
        let modules = |mfa: bool, mifa: bool| AblationFlags { mfa, mifa, ..base.ablation };
        let parts = |hifa: bool, clia: bool, mgifa: bool, mlifa: bool| AblationFlags { mfa: true, mifa: true, hifa, clia, mgifa, mlifa };
        // (first, second, channel) switch patterns shared by both weight grids
        const OMEGA_ROWS: [(bool, bool, bool); 6] =
            [(false, false, false), (false, false, true), (false, true, true), (true, false, true), (true, true, false), (true, true, true)];
        let omega_label = |names: [&str; 3], on: (bool, bool, bool)| {
            let picked: Vec<&str> = names.iter().zip([on.0, on.1, on.2]).filter(|(_, b)| *b).map(|(n, _)| *n).collect();
            if picked.is_empty() {
                "no weights".to_string()
            } else {
                picked.join("+")
            }
        };
        match self.ablate.grid {
            Grid::Table2 => vec![
                ("baseline".into(), with(modules(false, false), base.omegas)),
                ("+MFA".into(), with(modules(true, false), base.omegas)),
                ("+MIFA".into(), with(modules(false, true), base.omegas)),
                ("+MFA+MIFA".into(), with(modules(true, true), base.omegas)),
            ],
            Grid::Table3 => vec![
                ("none".into(), with(parts(false, false, false, false), base.omegas)),
                ("HIFA+MGIFA".into(), with(parts(true, false, true, false), base.omegas)),
                ("CLIA+MLIFA".into(), with(parts(false, true, false, true), base.omegas)),
                ("all".into(), with(parts(true, true, true, true), base.omegas)),
            ],
            Grid::OmegaMfa => OMEGA_ROWS
                .iter()
                .map(|&on| {
                    let omegas = OmegaFlags { omega_d: on.0, omega_l: on.1, omega_c: on.2, ..base.omegas };
                    (omega_label(["omega_d", "omega_l", "omega_c"], on), with(modules(true, false), omegas))
                })
                .collect(),
            Grid::OmegaMifa => OMEGA_ROWS
                .iter()
                .map(|&on| {
                    let omegas = OmegaFlags { omega_dm: on.0, omega_lm: on.1, omega_cm: on.2, ..base.omegas };
                    (omega_label(["omega_dm", "omega_lm", "omega_cm"], on), with(modules(false, true), omegas))
                })
                .collect(),
            Grid::Custom => self.ablate.rows.iter().map(|r| (r.label.clone(), with(r.ablation, r.omegas))).collect(),
        }
    }
}
