//! Experiment configuration in the same JSON dialect as the matrix files.

use std::fs;
use std::path::{Path, PathBuf};

use quditqpt::channels::{
    depolarizing_channel, shift_channel, KrausChannel, ShiftKind, ShiftWeights,
};
use quditqpt::tomography::{Shots, DEFAULT_RECOVERY_RCOND};
use quditqpt::turbulence::{
    turbulence_channel, HvModel, SlitGeometry, SlitMode, TurbulenceParams,
    DESK_SCALE_GROUND_CONSTANT,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QUDITQPT_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "quditqpt-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub measurement: MeasurementSpec,
    #[serde(default)]
    pub recovery: RecoverySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelSpec {
    Identity,
    As(ShiftSpec),
    Ps(ShiftSpec),
    Aps(ShiftSpec),
    Depolarizing { p: f64 },
    Turbulence(TurbulenceSpec),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WeightPreset {
    /// identity and every pair with equal weight
    #[default]
    Uniform,
    /// identity and the pairs (0, a), each 1/d
    UniformFromZero,
    /// identity 1 - p, p spread over all pairs
    Error,
    /// identity weight and pair list given explicitly
    Explicit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    #[serde(default)]
    pub weights: WeightPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_weight: Option<f64>,
    /// `[nu, alpha, weight]` triples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    DiagonalPhase,
    #[default]
    TiltShift,
}

impl From<ModeSpec> for SlitMode {
    fn from(m: ModeSpec) -> Self {
        match m {
            ModeSpec::DiagonalPhase => SlitMode::DiagonalPhase,
            ModeSpec::TiltShift => SlitMode::TiltShift,
        }
    }
}

fn default_path_length() -> f64 {
    500.0
}
fn default_wavelength() -> f64 {
    405e-9
}
fn default_grid_size() -> usize {
    512
}
fn default_wind_speed() -> f64 {
    HvModel::default().wind_speed
}
fn default_ground_constant() -> f64 {
    DESK_SCALE_GROUND_CONSTANT
}
fn default_masks() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceSpec {
    pub altitude: f64,
    #[serde(default = "default_path_length")]
    pub path_length: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Defaults to the spacing that makes the aperture span half the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(default = "default_wind_speed")]
    pub wind_speed: f64,
    #[serde(default = "default_ground_constant")]
    pub ground_constant: f64,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default = "default_masks")]
    pub masks: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TurbulenceSpec {
    pub fn new(altitude: f64) -> Self {
        Self {
            altitude,
            path_length: default_path_length(),
            wavelength: default_wavelength(),
            grid_size: default_grid_size(),
            grid_spacing: None,
            r0: None,
            wind_speed: default_wind_speed(),
            ground_constant: default_ground_constant(),
            geometry: GeometrySpec::default(),
            mode: ModeSpec::default(),
            masks: default_masks(),
            seed: 0,
        }
    }

    pub fn geometry(&self, d: usize) -> SlitGeometry {
        SlitGeometry {
            d,
            width: self.geometry.width,
            pitch: self.geometry.pitch,
            height: self.geometry.height,
        }
    }

    pub fn params(&self, d: usize) -> TurbulenceParams {
        let mut p = TurbulenceParams::new(self.altitude, self.path_length, self.wavelength);
        p.grid_size = self.grid_size;
        p.model = HvModel {
            wind_speed: self.wind_speed,
            ground_constant: self.ground_constant,
        };
        p.r0_override = self.r0;
        p = p.fit_to(&self.geometry(d));
        if let Some(dx) = self.grid_spacing {
            p.grid_spacing = dx;
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub width: f64,
    pub pitch: f64,
    pub height: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        let g = SlitGeometry::default();
        Self {
            width: g.width,
            pitch: g.pitch,
            height: g.height,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    /// Shots per (preparation, basis); absent means exact probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

impl MeasurementSpec {
    pub fn shots(&self) -> Shots {
        match self.shots {
            Some(n) => Shots::Sampled(n),
            None => Shots::Exact,
        }
    }
}

fn default_rcond() -> f64 {
    DEFAULT_RECOVERY_RCOND
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySpec {
    #[serde(default = "default_rcond")]
    pub rcond: f64,
    #[serde(default)]
    pub strict: bool,
}

impl Default for RecoverySpec {
    fn default() -> Self {
        Self {
            rcond: default_rcond(),
            strict: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(CliError::Config(format!(
                "d must be at least 2, got {}",
                self.d
            )));
        }
        if self.measurement.shots == Some(0) {
            return Err(CliError::Config("shots must be at least 1".into()));
        }
        if !(self.recovery.rcond > 0.0 && self.recovery.rcond < 1.0) {
            return Err(CliError::Config(format!(
                "rcond must lie in (0, 1), got {}",
                self.recovery.rcond
            )));
        }
        match &self.channel {
            ChannelSpec::Depolarizing { p } if !(0.0..=1.0).contains(p) => Err(CliError::Config(
                format!("depolarizing p must lie in [0, 1], got {p}"),
            )),
            ChannelSpec::As(s) | ChannelSpec::Ps(s) | ChannelSpec::Aps(s) => {
                s.weights(self.d).map(|_| ())
            }
            ChannelSpec::Turbulence(t) => {
                if t.masks == 0 {
                    return Err(CliError::Config("masks must be at least 1".into()));
                }
                t.params(self.d).validate()?;
                t.geometry(self.d).validate()?;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 of the canonical serialization, defaults filled in.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_channel(&self) -> Result<KrausChannel> {
        let d = self.d;
        Ok(match &self.channel {
            ChannelSpec::Identity => KrausChannel::identity(d),
            ChannelSpec::As(s) => shift_channel(d, ShiftKind::Amplitude, &s.weights(d)?)?,
            ChannelSpec::Ps(s) => shift_channel(d, ShiftKind::Phase, &s.weights(d)?)?,
            ChannelSpec::Aps(s) => shift_channel(d, ShiftKind::AmplitudePhase, &s.weights(d)?)?,
            ChannelSpec::Depolarizing { p } => depolarizing_channel(d, *p)?,
            ChannelSpec::Turbulence(t) => {
                turbulence_channel(&t.params(d), &t.geometry(d), t.mode.into(), t.masks, t.seed)?
            }
        })
    }

    /// Flag, then config file, then environment, then `quditqpt-out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        resolve_output_dir(flag, self.output_dir.as_deref())
    }
}

pub fn resolve_output_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag.or(config) {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(FALLBACK_OUT_DIR),
    }
}

impl ShiftSpec {
    pub fn weights(&self, d: usize) -> Result<ShiftWeights> {
        let extra = |what: &str| {
            CliError::Config(format!(
                "'{what}' is not used with weights '{:?}'",
                self.weights
            ))
        };
        let w = match self.weights {
            WeightPreset::Uniform | WeightPreset::UniformFromZero => {
                if self.p.is_some() {
                    return Err(extra("p"));
                }
                if self.pairs.is_some() || self.identity_weight.is_some() {
                    return Err(extra("pairs"));
                }
                if self.weights == WeightPreset::Uniform {
                    ShiftWeights::uniform(d)
                } else {
                    ShiftWeights::uniform_from_zero(d)
                }
            }
            WeightPreset::Error => {
                if self.pairs.is_some() || self.identity_weight.is_some() {
                    return Err(extra("pairs"));
                }
                let p = self
                    .p
                    .ok_or_else(|| CliError::Config("weights 'error' needs p".into()))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(CliError::Config(format!("p must lie in [0, 1], got {p}")));
                }
                ShiftWeights::uniform_error(d, p)
            }
            WeightPreset::Explicit => {
                if self.p.is_some() {
                    return Err(extra("p"));
                }
                let (Some(id), Some(pairs)) = (self.identity_weight, self.pairs.as_ref()) else {
                    return Err(CliError::Config(
                        "weights 'explicit' needs identity_weight and pairs".into(),
                    ));
                };
                ShiftWeights {
                    identity: id,
                    pairs: pairs.iter().map(|&(n, a, w)| ((n, a), w)).collect(),
                }
            }
        };
        // shift_channel validates sums and indices; surface that here as a
        // configuration problem
        shift_channel(d, ShiftKind::Amplitude, &w)?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg =
            ExperimentConfig::parse(r#"{"d": 5, "channel": {"kind": "depolarizing", "p": 0.3}}"#)
                .unwrap();
        assert_eq!(cfg.d, 5);
        assert_eq!(cfg.channel, ChannelSpec::Depolarizing { p: 0.3 });
        assert_eq!(cfg.measurement.shots(), Shots::Exact);
        assert_eq!(cfg.recovery.rcond, 1e-3);
        assert_eq!(cfg.build_channel().unwrap().operators().len(), 31);
    }

    #[test]
    fn rejects_unknown_keys() {
        for text in [
            r#"{"d": 5, "channel": {"kind": "identity"}, "colour": 1}"#,
            r#"{"d": 5, "channel": {"kind": "depolarizing", "p": 0.3, "q": 1}}"#,
            r#"{"d": 4, "channel": {"kind": "turbulence", "altitude": 174, "wind": 3}}"#,
            r#"{"d": 5, "channel": {"kind": "as", "weigths": "uniform"}}"#,
            r#"{"d": 5, "channel": {"kind": "identity"}, "measurement": {"shot": 3}}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"d": 1, "channel": {"kind": "identity"}}"#,
            r#"{"d": 5, "channel": {"kind": "depolarizing", "p": 1.5}}"#,
            r#"{"d": 5, "channel": {"kind": "as", "weights": "error"}}"#,
            r#"{"d": 5, "channel": {"kind": "as", "weights": "uniform", "p": 0.2}}"#,
            r#"{"d": 3, "channel": {"kind": "ps", "weights": "explicit", "identity_weight": 0.5, "pairs": [[0, 1, 0.2]]}}"#,
            r#"{"d": 4, "channel": {"kind": "turbulence", "altitude": 174, "masks": 0}}"#,
            r#"{"d": 4, "channel": {"kind": "identity"}, "recovery": {"rcond": 0}}"#,
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn shift_presets() {
        let cfg =
            ExperimentConfig::parse(r#"{"d": 5, "channel": {"kind": "as", "weights": "uniform"}}"#)
                .unwrap();
        assert_eq!(cfg.build_channel().unwrap().operators().len(), 11);
        let cfg = ExperimentConfig::parse(
            r#"{"d": 5, "channel": {"kind": "as", "weights": "uniform-from-zero"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.build_channel().unwrap().operators().len(), 5);
        let cfg = ExperimentConfig::parse(
            r#"{"d": 3, "channel": {"kind": "aps", "weights": "explicit", "identity_weight": 0.5, "pairs": [[0, 1, 0.25], [1, 2, 0.25]]}}"#,
        )
        .unwrap();
        assert!(cfg.build_channel().unwrap().is_trace_preserving());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a =
            ExperimentConfig::parse(r#"{"d": 5, "channel": {"kind": "depolarizing", "p": 0.3}}"#)
                .unwrap();
        let b =
            ExperimentConfig::parse(r#"{ "channel": {"p": 0.3, "kind": "depolarizing"}, "d": 5 }"#)
                .unwrap();
        let c =
            ExperimentConfig::parse(r#"{"d": 5, "channel": {"kind": "depolarizing", "p": 0.31}}"#)
                .unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn turbulence_defaults() {
        let cfg = ExperimentConfig::parse(
            r#"{"d": 4, "channel": {"kind": "turbulence", "altitude": 174}}"#,
        )
        .unwrap();
        let ChannelSpec::Turbulence(t) = &cfg.channel else {
            panic!()
        };
        assert_eq!(t.masks, 500);
        assert_eq!(t.mode, ModeSpec::TiltShift);
        let p = t.params(4);
        assert_eq!(p, TurbulenceParams::desk_scale(174.0));
    }

    #[test]
    fn output_dir_precedence() {
        let cfg = ExperimentConfig::parse(
            r#"{"d": 2, "channel": {"kind": "identity"}, "output_dir": "cfg"}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.output_dir(Some(Path::new("flag"))),
            PathBuf::from("flag")
        );
        assert_eq!(cfg.output_dir(None), PathBuf::from("cfg"));
    }
}
