//! Declarative JSON scenario configs: parsing, strict validation (unknown
//! keys are errors), and construction of runnable [`Scenario`] values.
//!
//! All physical quantities are in units of the declared base frequency.

use serde::{Deserialize, Serialize};

use crate::engine::{Detection, LambdaSchedule};
use crate::experiments::{
    build_dicke_clusters, build_jaynes_cummings, build_spin_squeezing, AtomInitial,
    FeedbackChoice, Observable, Scenario,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub name: String,
    pub unit_frequency: UnitFrequency,
    pub system: SystemConfig,
    /// Per-mode detection override; length must match the mode count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<Vec<DetectionConfig>>,
    pub k_max: usize,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackConfig>,
    pub ensemble: EnsembleConfig,
    /// Observable column names; empty means the scenario's defaults.
    #[serde(default)]
    pub outputs: Vec<String>,
    /// Jump-rate ordering switch (see the photodetection hierarchy).
    #[serde(default)]
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fock_cutoffs: Option<Vec<usize>>,
}

fn default_sample_every() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitFrequency {
    #[serde(rename = "omega")]
    Omega,
    #[serde(rename = "Omega")]
    BigOmega,
}

impl UnitFrequency {
    pub fn label(&self) -> &'static str {
        match self {
            UnitFrequency::Omega => "omega",
            UnitFrequency::BigOmega => "Omega",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionConfig {
    Homodyne,
    Heterodyne,
    Photodetect,
    Unmonitored,
}

impl From<DetectionConfig> for Detection {
    fn from(d: DetectionConfig) -> Detection {
        match d {
            DetectionConfig::Homodyne => Detection::Homodyne,
            DetectionConfig::Heterodyne => Detection::Heterodyne,
            DetectionConfig::Photodetect => Detection::Photodetect,
            DetectionConfig::Unmonitored => Detection::Unmonitored,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    JaynesCummings {
        omega: f64,
        #[serde(default)]
        epsilon: f64,
        g: f64,
        delta: f64,
        kappa: f64,
        #[serde(default = "default_jc_initial")]
        initial: String,
    },
    DickeClusters {
        #[serde(rename = "Omega")]
        omega: f64,
        n_clusters: usize,
        n_atoms: usize,
        g_matrix: Vec<Vec<f64>>,
        delta: f64,
        kappa: f64,
        monitored_modes: Vec<usize>,
        #[serde(default = "default_cluster_initial")]
        initial: String,
    },
    SpinSqueezing {
        #[serde(rename = "Omega")]
        omega: f64,
        n_atoms: usize,
        g: f64,
        kappa: f64,
    },
}

fn default_jc_initial() -> String {
    "excited".into()
}

fn default_cluster_initial() -> String {
    "all_down".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    #[serde(default)]
    pub mode: usize,
    pub law: FeedbackLawConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackLawConfig {
    Constant {
        lambda: f64,
    },
    Schedule {
        pieces: Vec<SchedulePiece>,
        final_lambda: f64,
    },
    Dynamic {
        #[serde(default = "default_hold_last")]
        hold_last: bool,
    },
}

fn default_hold_last() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePiece {
    pub until: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub trajectories: usize,
    pub master_seed: u64,
}

fn parse_initial(s: &str, path: &str) -> Result<AtomInitial> {
    Ok(match s {
        "excited" => AtomInitial::Excited,
        "ground" => AtomInitial::Ground,
        "plus" => AtomInitial::Plus,
        "all_down" => AtomInitial::AllDown,
        "css_x" => AtomInitial::CoherentX,
        other => {
            return Err(Error::Config {
                path: path.into(),
                message: format!("unknown initial state `{other}`"),
            })
        }
    })
}

/// Parses and validates a config file into a runnable scenario.
pub fn parse_config(path: &std::path::Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Parses a config from its JSON text. Unknown keys, missing fields, and
/// semantic violations all fail with a field-path message.
pub fn parse_config_str(text: &str) -> Result<Scenario> {
    let file = deserialize(text)?;
    build_scenario(&file)
}

/// Structural parse only (no scenario construction); errors carry the JSON
/// path of the offending field.
pub fn deserialize(text: &str) -> Result<ConfigFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Builds the runnable scenario from a parsed config.
pub fn build_scenario(file: &ConfigFile) -> Result<Scenario> {
    let mut scenario = match &file.system {
        SystemConfig::JaynesCummings { omega, epsilon, g, delta, kappa, initial } => {
            check_positive("system.omega", *omega)?;
            build_jaynes_cummings(
                *omega,
                *epsilon,
                *g,
                *delta,
                *kappa,
                parse_initial(initial, "system.initial")?,
            )?
        }
        SystemConfig::DickeClusters {
            omega,
            n_clusters,
            n_atoms,
            g_matrix,
            delta,
            kappa,
            monitored_modes,
            initial,
        } => {
            check_positive("system.Omega", *omega)?;
            if *n_clusters == 0 || *n_atoms == 0 || *n_clusters > 6 || *n_atoms > 63 {
                return Err(Error::Config {
                    path: "system".into(),
                    message: "n_clusters in 1..=6 and n_atoms in 1..=63 required".into(),
                });
            }
            build_dicke_clusters(
                *omega,
                *n_clusters,
                *n_atoms,
                g_matrix,
                *delta,
                *kappa,
                monitored_modes,
                parse_initial(initial, "system.initial")?,
            )?
        }
        SystemConfig::SpinSqueezing { omega, n_atoms, g, kappa } => {
            check_positive("system.Omega", *omega)?;
            if *n_atoms > 1000 {
                return Err(Error::Config {
                    path: "system.n_atoms".into(),
                    message: "at most 1000 atoms".into(),
                });
            }
            let fb = match &file.feedback {
                None => FeedbackChoice::None,
                Some(f) => match &f.law {
                    FeedbackLawConfig::Constant { lambda } => FeedbackChoice::Constant(*lambda),
                    FeedbackLawConfig::Schedule { pieces, final_lambda } => {
                        validate_schedule(pieces)?;
                        FeedbackChoice::Schedule(LambdaSchedule::piecewise(
                            pieces.iter().map(|p| (p.until, p.lambda)).collect(),
                            *final_lambda,
                        ))
                    }
                    FeedbackLawConfig::Dynamic { hold_last } => {
                        FeedbackChoice::Dynamic { hold_last: *hold_last }
                    }
                },
            };
            build_spin_squeezing(*omega, *n_atoms, *g, *kappa, fb)?
        }
    };
    if file.feedback.is_some() && !matches!(file.system, SystemConfig::SpinSqueezing { .. }) {
        return Err(Error::Config {
            path: "feedback".into(),
            message: "feedback is supported for spin_squeezing systems".into(),
        });
    }
    if let Some(fb) = &file.feedback {
        if fb.mode != 0 {
            return Err(Error::Config {
                path: "feedback.mode".into(),
                message: "single-mode scenarios feed back on mode 0".into(),
            });
        }
    }

    scenario.name = file.name.clone();
    scenario.unit_frequency = file.unit_frequency.label().to_string();
    scenario.k_max = file.k_max;
    scenario.dt = file.dt;
    scenario.t_final = file.t_final;
    scenario.sample_every = file.sample_every;
    scenario.trajectories = file.ensemble.trajectories;
    scenario.master_seed = file.ensemble.master_seed;
    scenario.theta = file.theta;
    if !(file.theta == 0.0 || file.theta == 1.0) {
        return Err(Error::Config {
            path: "theta".into(),
            message: "theta must be 0 or 1".into(),
        });
    }
    if let Some(detections) = &file.detection {
        if detections.len() != scenario.modes.len() {
            return Err(Error::Config {
                path: "detection".into(),
                message: format!(
                    "{} entries for {} modes",
                    detections.len(),
                    scenario.modes.len()
                ),
            });
        }
        for (m, d) in scenario.modes.iter_mut().zip(detections.iter()) {
            m.detection = (*d).into();
        }
        // feedback must still point at a homodyne mode
        if let Some(fb) = &scenario.feedback {
            fb.validate(&scenario.modes)?;
        }
    }
    if !file.outputs.is_empty() {
        scenario.outputs = file
            .outputs
            .iter()
            .map(|s| Observable::parse(s))
            .collect::<Result<Vec<_>>>()?;
    } else if scenario.feedback.is_none() {
        scenario.outputs.retain(|o| *o != Observable::Lambda);
    }
    if let Some(cutoffs) = &file.fock_cutoffs {
        if cutoffs.len() != scenario.modes.len() {
            return Err(Error::Config {
                path: "fock_cutoffs".into(),
                message: format!(
                    "{} entries for {} modes",
                    cutoffs.len(),
                    scenario.modes.len()
                ),
            });
        }
        scenario.fock_cutoffs = cutoffs.clone();
    }
    if scenario.trajectories == 0 {
        return Err(Error::Config {
            path: "ensemble.trajectories".into(),
            message: "must be >= 1".into(),
        });
    }
    if scenario.k_max > 64 {
        return Err(Error::Config {
            path: "k_max".into(),
            message: "truncation depth beyond 64 is not supported".into(),
        });
    }
    let space_size = crate::engine::auxiliary_count(scenario.modes.len(), scenario.k_max)?;
    if space_size > 1_000_000 {
        return Err(Error::Config {
            path: "k_max".into(),
            message: format!("{space_size} auxiliaries exceed the 1e6 cap"),
        });
    }
    if scenario.steps() > 100_000_000 {
        return Err(Error::Config {
            path: "t_final".into(),
            message: "more than 1e8 steps requested".into(),
        });
    }
    scenario.validate()?;
    Ok(scenario)
}

fn check_positive(path: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Config { path: path.into(), message: "must be positive".into() });
    }
    Ok(())
}

fn validate_schedule(pieces: &[SchedulePiece]) -> Result<()> {
    for w in pieces.windows(2) {
        if !(w[1].until > w[0].until) {
            return Err(Error::Config {
                path: "feedback.law.pieces".into(),
                message: "switch times must strictly increase".into(),
            });
        }
    }
    if pieces.iter().any(|p| !(p.until > 0.0) || !p.lambda.is_finite()) {
        return Err(Error::Config {
            path: "feedback.law.pieces".into(),
            message: "times must be positive and strengths finite".into(),
        });
    }
    Ok(())
}

/// The engine's convention switches, echoed into every output manifest so a
/// run is reproducible from the manifest alone.
#[derive(Debug, Clone, Serialize)]
pub struct ConventionFlags {
    /// Jump-rate ordering: <a^dag a> = tr rho^(e,e)/g^2 - theta.
    pub theta: f64,
    /// Heterodyne stochastic pairing: which increment rides with the
    /// raising-index auxiliary.
    pub heterodyne_pairing: &'static str,
}

impl ConventionFlags {
    pub fn new(theta: f64) -> Self {
        Self {
            theta,
            heterodyne_pairing: "rho^(n+e,m) pairs with dWc; rho^(n,m+e) with dWc*",
        }
    }
}
