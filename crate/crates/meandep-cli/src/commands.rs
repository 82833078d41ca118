//! Command implementations returning metadata for stdout.

use crate::config::{Config, ExperimentKind, PenaltyKind};
use meandep::covariance::CovParams;
use meandep::error::Error;
use meandep::evaluation::{crossval, diagnose_links, empirical_penalty, grid_for};
use meandep::fitting::{
    fit_full_mle, fit_onestep, fit_stationary, FitConfig, FitMethod, FitResult,
};
use meandep::geometry::{
    load_observations, load_stations, DesignMatrix, ObservationPanel, SiteSet,
};
use meandep::nstest::test_nonstationarity;
use meandep::prediction::{krige, threshold_nonnegative};
use meandep::simulation::{
    neutral_penalty, run_estimation_mse, run_prediction_experiment, run_type1_power,
    simulate_replicate, SimConfig, PARAM_SCALE_NOTE,
};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use std::path::Path;

/// Failure with the exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Configuration, input, or validation problem (exit 2).
    Config(String),
    /// Numerical failure inside a computation (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        json!({ "error": { "kind": kind, "message": message } })
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPositiveDefinite { .. }
            | Error::SingularSystem
            | Error::NoImprovement
            | Error::NotNested(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

type CmdResult = Result<Value, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn tuning_with_seed(tuning: &FitConfig, seed: u64) -> Result<FitConfig, CliError> {
    let mut t = *tuning;
    t.seed = seed;
    t.validate()?;
    Ok(t)
}

fn penalty_for(
    kind: PenaltyKind,
    panel: &ObservationPanel,
    z: &DesignMatrix,
) -> Result<(DVector<f64>, DMatrix<f64>), CliError> {
    match kind {
        PenaltyKind::Neutral => Ok(neutral_penalty(z.n_cols())),
        PenaltyKind::Empirical => Ok(empirical_penalty(panel, z)?),
    }
}

struct FitChain {
    stationary: FitResult,
    onestep: Option<FitResult>,
    full: Option<FitResult>,
}

impl FitChain {
    fn run(
        panel: &ObservationPanel,
        sites: &SiteSet,
        z: &DesignMatrix,
        beta0: &DVector<f64>,
        omega: &DMatrix<f64>,
        links: meandep::covariance::LinkFamily,
        method: FitMethod,
        tuning: &FitConfig,
    ) -> Result<Self, CliError> {
        let stationary = fit_stationary(panel, sites, z, beta0, omega, tuning)?;
        let mut onestep = None;
        let mut full = None;
        if method != FitMethod::Stationary {
            let one = fit_onestep(panel, sites, z, &stationary, links, tuning)?;
            if method == FitMethod::FullMle {
                full = Some(fit_full_mle(panel, sites, z, &one, tuning)?);
            }
            onestep = Some(one);
        }
        Ok(FitChain { stationary, onestep, full })
    }

    fn requested(&self) -> &FitResult {
        self.full
            .as_ref()
            .or(self.onestep.as_ref())
            .unwrap_or(&self.stationary)
    }
}

/// Fitted model persisted as JSON; holds everything prediction needs.
#[derive(serde::Serialize, serde::Deserialize)]
struct ModelFile {
    method: FitMethod,
    converged: bool,
    evals: usize,
    loglik: f64,
    eta: CovParams,
    betas: Vec<Vec<f64>>,
    day_labels: Vec<String>,
    predictor_set: meandep::geometry::PredictorSet,
    data_fingerprint: u64,
    stationary_loglik: f64,
    onestep_loglik: Option<f64>,
}

fn model_file(chain: &FitChain, panel: &ObservationPanel, sec_ps: meandep::geometry::PredictorSet) -> ModelFile {
    let fit = chain.requested();
    let betas = (0..panel.n_days())
        .map(|t| fit.state.mean.beta(t).iter().copied().collect())
        .collect();
    ModelFile {
        method: fit.method,
        converged: fit.converged,
        evals: fit.evals,
        loglik: fit.loglik,
        eta: fit.state.eta,
        betas,
        day_labels: panel.day_labels().to_vec(),
        predictor_set: sec_ps,
        data_fingerprint: fit.data_fingerprint,
        stationary_loglik: chain.stationary.loglik,
        onestep_loglik: chain.onestep.as_ref().map(|f| f.loglik),
    }
}

pub fn cmd_simulate(cfg: &Config) -> CmdResult {
    let sec = &cfg.simulate;
    let sim = sec.sim_config(cfg.seed)?;
    let data = simulate_replicate(&sim, 0, false)?;
    std::fs::create_dir_all(&sec.out_dir).map_err(|e| io_err(&sec.out_dir, e))?;

    let stations_path = sec.out_dir.join("stations.csv");
    let mut w = csv_writer(&stations_path)?;
    w.write_record(["station_id", "lon", "lat", "elev"])
        .map_err(|e| io_err(&stations_path, e))?;
    for (i, s) in data.sites.sites().iter().enumerate() {
        w.write_record(&[
            format!("s{:04}", i + 1),
            format!("{}", s.lon),
            format!("{}", s.lat),
            String::new(),
        ])
        .map_err(|e| io_err(&stations_path, e))?;
    }
    w.flush().map_err(|e| io_err(&stations_path, e))?;

    let obs_path = sec.out_dir.join("observations.csv");
    let mut w = csv_writer(&obs_path)?;
    w.write_record(["station_id", "day", "value"])
        .map_err(|e| io_err(&obs_path, e))?;
    for t in 0..sim.m {
        for i in 0..sim.n {
            w.write_record(&[
                format!("s{:04}", i + 1),
                data.panel.day_labels()[t].clone(),
                format!("{}", data.panel.values()[(i, t)]),
            ])
            .map_err(|e| io_err(&obs_path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&obs_path, e))?;

    let truth_path = sec.out_dir.join("truth.json");
    let betas: Vec<Vec<f64>> = (0..sim.m)
        .map(|t| data.betas_true.row(t).iter().copied().collect())
        .collect();
    write_json(
        &truth_path,
        &json!({
            "eta_true": sim.eta_true,
            "betas": betas,
            "seed": cfg.seed,
            "c": sec.c,
        }),
    )?;

    Ok(json!({
        "config": cfg,
        "outputs": {
            "stations": stations_path,
            "observations": obs_path,
            "truth": truth_path,
        },
        "n": sim.n,
        "m": sim.m,
    }))
}

pub fn cmd_fit(cfg: &Config) -> CmdResult {
    let sec = &cfg.fit;
    let (sites, panel) =
        load_observations(&sec.stations, &sec.observations, cfg.sqrt_transform)?;
    let z = DesignMatrix::build(&sites, sec.predictor_set)?;
    let (beta0, omega) = penalty_for(sec.penalty, &panel, &z)?;
    let tuning = tuning_with_seed(&sec.tuning, cfg.seed)?;
    let chain = FitChain::run(
        &panel, &sites, &z, &beta0, &omega, sec.links(), sec.method, &tuning,
    )?;
    let model = model_file(&chain, &panel, sec.predictor_set);
    let value = serde_json::to_value(&model).map_err(|e| CliError::Config(e.to_string()))?;
    write_json(&sec.out, &value)?;
    Ok(json!({
        "config": cfg,
        "outputs": { "model": sec.out },
        "loglik": {
            "stationary": chain.stationary.loglik,
            "onestep": chain.onestep.as_ref().map(|f| f.loglik),
            "full_mle": chain.full.as_ref().map(|f| f.loglik),
        },
        "converged": chain.requested().converged,
    }))
}

pub fn cmd_test(cfg: &Config) -> CmdResult {
    let sec = &cfg.test;
    if sec.method == FitMethod::Stationary {
        return Err(CliError::Config(
            "the nonstationarity test needs the onestep or full-mle method".into(),
        ));
    }
    let (sites, panel) =
        load_observations(&sec.stations, &sec.observations, cfg.sqrt_transform)?;
    let z = DesignMatrix::build(&sites, sec.predictor_set)?;
    let (beta0, omega) = penalty_for(sec.penalty, &panel, &z)?;
    let tuning = tuning_with_seed(&sec.tuning, cfg.seed)?;
    let outcome = test_nonstationarity(
        &panel,
        &sites,
        &z,
        &beta0,
        &omega,
        &tuning,
        sec.method,
        sec.links(),
    )?;
    let value = json!({
        "statistic": outcome.lrt.statistic,
        "df": outcome.lrt.df,
        "p_value": outcome.lrt.p_value,
        "reject_at": outcome.lrt.reject_at,
        "null_loglik": outcome.null_fit.loglik,
        "alt_loglik": outcome.alt_fit.loglik,
        "method": sec.method,
        "links": sec.links(),
    });
    write_json(&sec.out, &value)?;
    Ok(json!({
        "config": cfg,
        "outputs": { "test": sec.out },
        "statistic": outcome.lrt.statistic,
        "p_value": outcome.lrt.p_value,
    }))
}

pub fn cmd_predict(cfg: &Config) -> CmdResult {
    let sec = &cfg.predict;
    let text = std::fs::read_to_string(&sec.model).map_err(|e| io_err(&sec.model, e))?;
    let model: ModelFile =
        serde_json::from_str(&text).map_err(|e| io_err(&sec.model, e))?;
    let (sites, panel) =
        load_observations(&sec.stations, &sec.observations, cfg.sqrt_transform)?;
    if panel.day_labels() != model.day_labels.as_slice() {
        return Err(CliError::Config(
            "model and observations disagree on the day set".into(),
        ));
    }
    let z = DesignMatrix::build(&sites, model.predictor_set)?;
    let (targets, target_index) = load_stations(&sec.targets)?;
    let mut target_ids = vec![String::new(); targets.n()];
    for (id, &i) in &target_index {
        target_ids[i] = id.clone();
    }
    let z_target = DesignMatrix::build(&targets, model.predictor_set)?;

    let mut w = csv_writer(&sec.out)?;
    w.write_record(["day", "station_id", "mean", "se", "mean_nonneg"])
        .map_err(|e| io_err(&sec.out, e))?;
    for t in 0..panel.n_days() {
        if model.betas[t].len() != z.n_cols() {
            return Err(CliError::Config(
                "model coefficients do not match the design width".into(),
            ));
        }
        let idx = panel.observed_indices(t);
        if idx.is_empty() {
            continue;
        }
        let train_sites = sites.subset(&idx)?;
        let z_train = z.subset(&idx);
        let y_train = DVector::from_fn(idx.len(), |r, _| panel.values()[(idx[r], t)]);
        let beta = DVector::from_vec(model.betas[t].clone());
        let dist = krige(
            &train_sites,
            &y_train,
            &targets,
            z_train.z(),
            z_target.z(),
            &beta,
            &model.eta,
        )?;
        let nonneg = threshold_nonnegative(&dist);
        for i in 0..targets.n() {
            w.write_record(&[
                panel.day_labels()[t].clone(),
                target_ids[i].clone(),
                format!("{}", dist.mean[i]),
                format!("{}", dist.se[i]),
                format!("{}", nonneg[i]),
            ])
            .map_err(|e| io_err(&sec.out, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&sec.out, e))?;
    Ok(json!({
        "config": cfg,
        "outputs": { "predictions": sec.out },
        "days": panel.n_days(),
        "targets": targets.n(),
    }))
}

pub fn cmd_crossval(cfg: &Config) -> CmdResult {
    let sec = &cfg.crossval;
    let (sites, panel) =
        load_observations(&sec.stations, &sec.observations, cfg.sqrt_transform)?;
    let grid = grid_for(&sec.predictor_sets);
    let tuning = tuning_with_seed(&sec.tuning, cfg.seed)?;
    let report = crossval(&panel, &sites, &grid, sec.k, &tuning, cfg.seed)?;
    let mut w = csv_writer(&sec.out)?;
    for row in &report.rows {
        w.serialize(row).map_err(|e| io_err(&sec.out, e))?;
    }
    w.flush().map_err(|e| io_err(&sec.out, e))?;
    Ok(json!({
        "config": cfg,
        "outputs": { "cv_report": sec.out },
        "folds": report.folds,
        "models": report.rows.len(),
    }))
}

/// Estimation-error row flattened for CSV output.
#[derive(serde::Serialize)]
struct EstimationCsvRow {
    method: FitMethod,
    replicates: usize,
    total_mse: f64,
    total_se: f64,
    mse_nugget: f64,
    se_nugget: f64,
    mse_b1: f64,
    se_b1: f64,
    mse_sill: f64,
    se_sill: f64,
    mse_b2: f64,
    se_b2: f64,
    mse_a3: f64,
    se_a3: f64,
    mse_b3: f64,
    se_b3: f64,
}

pub fn cmd_experiment(cfg: &Config) -> CmdResult {
    let sec = &cfg.experiment;
    let tuning = tuning_with_seed(&sec.tuning, cfg.seed)?;
    let replicates = sec.effective_replicates();
    match sec.kind {
        ExperimentKind::Type1Power => {
            let mut cells = Vec::new();
            for &n in &sec.n_values {
                for &c in &sec.c_values {
                    let mut cell = SimConfig::standard(n, sec.m, c, cfg.seed);
                    cell.replicates = replicates;
                    cell.n_test = 0;
                    cells.push(cell);
                }
            }
            let rows = run_type1_power(&cells, &tuning, sec.method, sec.alpha)?;
            let mut w = csv_writer(&sec.out)?;
            for row in &rows {
                w.serialize(row).map_err(|e| io_err(&sec.out, e))?;
            }
            w.flush().map_err(|e| io_err(&sec.out, e))?;
            Ok(json!({
                "config": cfg,
                "outputs": { "table": sec.out },
                "kind": sec.kind,
                "cells": rows.len(),
                "alpha": sec.alpha,
            }))
        }
        ExperimentKind::Estimation => {
            let mut sim = SimConfig::standard(sec.n, sec.m, sec.c, cfg.seed);
            sim.replicates = replicates;
            sim.n_test = 0;
            let rows = run_estimation_mse(&sim, &tuning, &sec.methods)?;
            let mut w = csv_writer(&sec.out)?;
            for r in &rows {
                let p = &r.per_param_mse;
                let s = &r.per_param_se;
                w.serialize(EstimationCsvRow {
                    method: r.method,
                    replicates: r.replicates,
                    total_mse: r.total_mse,
                    total_se: r.total_se,
                    mse_nugget: p[0],
                    se_nugget: s[0],
                    mse_b1: p[1],
                    se_b1: s[1],
                    mse_sill: p[2],
                    se_sill: s[2],
                    mse_b2: p[3],
                    se_b2: s[3],
                    mse_a3: p[4],
                    se_a3: s[4],
                    mse_b3: p[5],
                    se_b3: s[5],
                })
                .map_err(|e| io_err(&sec.out, e))?;
            }
            w.flush().map_err(|e| io_err(&sec.out, e))?;
            Ok(json!({
                "config": cfg,
                "outputs": { "table": sec.out },
                "kind": sec.kind,
                "scale_note": PARAM_SCALE_NOTE,
                "truth": sim.eta_true,
            }))
        }
        ExperimentKind::Prediction => {
            let mut sim = SimConfig::standard(sec.n, sec.m, sec.c, cfg.seed);
            sim.replicates = replicates;
            sim.n_test = sec.n_test;
            let rows = run_prediction_experiment(&sim, &tuning, &sec.methods)?;
            let mut w = csv_writer(&sec.out)?;
            for row in &rows {
                w.serialize(row).map_err(|e| io_err(&sec.out, e))?;
            }
            w.flush().map_err(|e| io_err(&sec.out, e))?;
            Ok(json!({
                "config": cfg,
                "outputs": { "table": sec.out },
                "kind": sec.kind,
                "n_test": sec.n_test,
                "truth": sim.eta_true,
            }))
        }
    }
}

pub fn cmd_diagnose_links(cfg: &Config) -> CmdResult {
    let sec = &cfg.diagnose_links;
    let (sites, panel) =
        load_observations(&sec.stations, &sec.observations, cfg.sqrt_transform)?;
    let tuning = tuning_with_seed(&sec.tuning, cfg.seed)?;
    let diag = diagnose_links(&panel, &sites, &tuning)?;
    let mut w = csv_writer(&sec.out)?;
    for row in &diag.rows {
        w.serialize(row).map_err(|e| io_err(&sec.out, e))?;
    }
    w.flush().map_err(|e| io_err(&sec.out, e))?;
    Ok(json!({
        "config": cfg,
        "outputs": { "diagnostics": sec.out },
        "days": diag.rows.len(),
        "skipped_days": diag.skipped_days,
        "regressions": {
            "log_nugget_vs_mean": diag.log_nugget_vs_mean,
            "log_nugget_vs_log1p_mean": diag.log_nugget_vs_log1p_mean,
            "log_sill_vs_mean": diag.log_sill_vs_mean,
            "log_sill_vs_log1p_mean": diag.log_sill_vs_log1p_mean,
            "log_range_vs_mean": diag.log_range_vs_mean,
            "log_range_vs_log1p_mean": diag.log_range_vs_log1p_mean,
        },
    }))
}
