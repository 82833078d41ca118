//! Layered run configuration: strict TOML sections plus flag overrides.

use meandep::covariance::{CovParams, LinkFamily, LinkKind};
use meandep::fitting::{FitConfig, FitMethod};
use meandep::geometry::PredictorSet;
use meandep::simulation::SimConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Full effective configuration, echoed in every command's metadata.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed for all randomness.
    pub seed: u64,
    /// Worker-thread bound; absent means the runtime default.
    pub threads: Option<usize>,
    /// Apply a square-root transform when loading observations.
    pub sqrt_transform: bool,
    pub fit: FitSection,
    pub simulate: SimulateSection,
    pub test: TestSection,
    pub predict: PredictSection,
    pub crossval: CrossvalSection,
    pub experiment: ExperimentSection,
    pub diagnose_links: DiagnoseSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// How the coefficient prior is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// beta0 = 0 and a diffuse diagonal prior.
    Neutral,
    /// Moments of per-day least-squares estimates.
    Empirical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub stations: PathBuf,
    pub observations: PathBuf,
    pub out: PathBuf,
    pub method: FitMethod,
    pub predictor_set: PredictorSet,
    pub penalty: PenaltyKind,
    pub nugget_sill_link: LinkKind,
    pub range_link: LinkKind,
    pub tuning: FitConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            stations: "stations.csv".into(),
            observations: "observations.csv".into(),
            out: "model.json".into(),
            method: FitMethod::Onestep,
            predictor_set: PredictorSet::Sim3,
            penalty: PenaltyKind::Neutral,
            nugget_sill_link: LinkKind::Mdns,
            range_link: LinkKind::Mdns,
            tuning: FitConfig::default(),
        }
    }
}

impl FitSection {
    pub fn links(&self) -> LinkFamily {
        LinkFamily {
            nugget: self.nugget_sill_link,
            sill: self.nugget_sill_link,
            range: self.range_link,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub m: usize,
    /// Nonstationarity multiplier scaling the true slopes.
    pub c: f64,
    pub lon_range: [f64; 2],
    pub lat_range: [f64; 2],
    /// True intercepts (log nugget, log sill-sd scale, log squared range).
    pub a: [f64; 3],
    /// Base slopes, multiplied by `c`.
    pub b_base: [f64; 3],
    pub out_dir: PathBuf,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n: 100,
            m: 5,
            c: 1.0,
            lon_range: [-67.3, -65.7],
            lat_range: [17.9, 18.5],
            a: [-1.0, 0.5, 4.0],
            b_base: [0.1, 0.5, -0.5],
            out_dir: ".".into(),
        }
    }
}

impl SimulateSection {
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, meandep::Error> {
        let b = [
            self.b_base[0] * self.c,
            self.b_base[1] * self.c,
            self.b_base[2] * self.c,
        ];
        let eta_true = CovParams::new(self.a, b, LinkFamily::MDNS)?;
        Ok(SimConfig {
            n: self.n,
            m: self.m,
            replicates: 1,
            lon_range: (self.lon_range[0], self.lon_range[1]),
            lat_range: (self.lat_range[0], self.lat_range[1]),
            eta_true,
            c: self.c,
            n_test: 0,
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    pub stations: PathBuf,
    pub observations: PathBuf,
    pub out: PathBuf,
    pub method: FitMethod,
    pub predictor_set: PredictorSet,
    pub penalty: PenaltyKind,
    pub nugget_sill_link: LinkKind,
    pub range_link: LinkKind,
    pub tuning: FitConfig,
}

impl Default for TestSection {
    fn default() -> Self {
        TestSection {
            stations: "stations.csv".into(),
            observations: "observations.csv".into(),
            out: "test.json".into(),
            method: FitMethod::Onestep,
            predictor_set: PredictorSet::Sim3,
            penalty: PenaltyKind::Neutral,
            nugget_sill_link: LinkKind::Mdns,
            range_link: LinkKind::Mdns,
            tuning: FitConfig::default(),
        }
    }
}

impl TestSection {
    pub fn links(&self) -> LinkFamily {
        LinkFamily {
            nugget: self.nugget_sill_link,
            sill: self.nugget_sill_link,
            range: self.range_link,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub stations: PathBuf,
    pub observations: PathBuf,
    pub model: PathBuf,
    /// Prediction sites in the station CSV format.
    pub targets: PathBuf,
    pub out: PathBuf,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            stations: "stations.csv".into(),
            observations: "observations.csv".into(),
            model: "model.json".into(),
            targets: "targets.csv".into(),
            out: "predictions.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalSection {
    pub stations: PathBuf,
    pub observations: PathBuf,
    pub out: PathBuf,
    pub k: usize,
    pub predictor_sets: Vec<PredictorSet>,
    pub tuning: FitConfig,
}

impl Default for CrossvalSection {
    fn default() -> Self {
        CrossvalSection {
            stations: "stations.csv".into(),
            observations: "observations.csv".into(),
            out: "cv_report.csv".into(),
            k: 5,
            predictor_sets: vec![PredictorSet::Linear4, PredictorSet::Quad7],
            tuning: FitConfig::default(),
        }
    }
}

/// Which Monte Carlo harness to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Type1Power,
    Estimation,
    Prediction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Site counts for rejection-rate cells.
    pub n_values: Vec<usize>,
    /// Nonstationarity multipliers for rejection-rate cells.
    pub c_values: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub replicates: usize,
    /// Use the reference replicate count (200) instead of `replicates`.
    pub paper_scale: bool,
    pub method: FitMethod,
    pub methods: Vec<FitMethod>,
    pub alpha: f64,
    pub n_test: usize,
    pub out: PathBuf,
    pub tuning: FitConfig,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: ExperimentKind::Type1Power,
            n_values: vec![50, 100],
            c_values: vec![0.0],
            n: 100,
            m: 5,
            c: 1.0,
            replicates: 50,
            paper_scale: false,
            method: FitMethod::Onestep,
            methods: vec![FitMethod::Onestep, FitMethod::FullMle],
            alpha: 0.05,
            n_test: 100,
            out: "experiment.csv".into(),
            tuning: FitConfig::default(),
        }
    }
}

impl ExperimentSection {
    pub fn effective_replicates(&self) -> usize {
        if self.paper_scale {
            200
        } else {
            self.replicates
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub stations: PathBuf,
    pub observations: PathBuf,
    pub out: PathBuf,
    pub tuning: FitConfig,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            stations: "stations.csv".into(),
            observations: "observations.csv".into(),
            out: "diagnostics.csv".into(),
            tuning: FitConfig::default(),
        }
    }
}
