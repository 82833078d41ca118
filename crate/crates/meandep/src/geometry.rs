//! Spatial sites, distances, design matrices, observation panels, and fold splitting.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;
use std::path::Path;

/// A spatial location in planar degree coordinates, with optional elevation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub lon: f64,
    pub lat: f64,
    pub elev: Option<f64>,
}

impl Site {
    pub fn new(lon: f64, lat: f64) -> Self {
        Site { lon, lat, elev: None }
    }

    pub fn with_elev(lon: f64, lat: f64, elev: f64) -> Self {
        Site { lon, lat, elev: Some(elev) }
    }
}

/// An ordered collection of distinct sites with a precomputed distance matrix.
///
/// Distances are planar Euclidean in raw degree coordinates.
#[derive(Debug, Clone)]
pub struct SiteSet {
    sites: Vec<Site>,
    distances: DMatrix<f64>,
}

impl SiteSet {
    /// Validates the sites and computes all pairwise distances.
    pub fn new(sites: Vec<Site>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidSites("site set must not be empty".into()));
        }
        for (i, s) in sites.iter().enumerate() {
            let elev_ok = s.elev.map_or(true, f64::is_finite);
            if !s.lon.is_finite() || !s.lat.is_finite() || !elev_ok {
                return Err(Error::InvalidSites(format!(
                    "site {i} has non-finite coordinates ({}, {}, {:?})",
                    s.lon, s.lat, s.elev
                )));
            }
        }
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                if sites[i].lon == sites[j].lon && sites[i].lat == sites[j].lat {
                    return Err(Error::InvalidSites(format!(
                        "sites {i} and {j} share coordinates ({}, {})",
                        sites[i].lon, sites[i].lat
                    )));
                }
            }
        }
        let n = sites.len();
        let distances = DMatrix::from_fn(n, n, |i, j| {
            let dx = sites[i].lon - sites[j].lon;
            let dy = sites[i].lat - sites[j].lat;
            (dx * dx + dy * dy).sqrt()
        });
        Ok(SiteSet { sites, distances })
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &Site {
        &self.sites[i]
    }

    /// Symmetric pairwise distance matrix with zero diagonal.
    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }

    /// New site set keeping only `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.n() {
                return Err(Error::InvalidSites(format!(
                    "subset index {i} out of range for {} sites",
                    self.n()
                )));
            }
        }
        let sites: Vec<Site> = indices.iter().map(|&i| self.sites[i]).collect();
        let distances = DMatrix::from_fn(indices.len(), indices.len(), |a, b| {
            self.distances[(indices[a], indices[b])]
        });
        if sites.is_empty() {
            return Err(Error::InvalidSites("subset must not be empty".into()));
        }
        Ok(SiteSet { sites, distances })
    }
}

/// Predictor column layout for the regression mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorSet {
    /// Intercept, longitude, latitude.
    Sim3,
    /// Intercept, longitude, latitude, elevation.
    Linear4,
    /// Intercept, longitude, latitude, elevation, lon-squared, lon-lat, lat-squared.
    Quad7,
    /// Caller-supplied columns.
    Custom,
}

impl PredictorSet {
    pub fn n_cols(self) -> Option<usize> {
        match self {
            PredictorSet::Sim3 => Some(3),
            PredictorSet::Linear4 => Some(4),
            PredictorSet::Quad7 => Some(7),
            PredictorSet::Custom => None,
        }
    }
}

/// A full-column-rank regression design whose first column is an intercept.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    z: DMatrix<f64>,
    predictor_set: PredictorSet,
}

impl DesignMatrix {
    /// Builds the design for a standard predictor set.
    pub fn build(sites: &SiteSet, predictor_set: PredictorSet) -> Result<Self> {
        let rows: Result<Vec<Vec<f64>>> = sites
            .sites()
            .iter()
            .enumerate()
            .map(|(i, s)| match predictor_set {
                PredictorSet::Sim3 => Ok(vec![1.0, s.lon, s.lat]),
                PredictorSet::Linear4 => {
                    let e = s.elev.ok_or_else(|| missing_elev(i, s))?;
                    Ok(vec![1.0, s.lon, s.lat, e])
                }
                PredictorSet::Quad7 => {
                    let e = s.elev.ok_or_else(|| missing_elev(i, s))?;
                    Ok(vec![
                        1.0,
                        s.lon,
                        s.lat,
                        e,
                        s.lon * s.lon,
                        s.lon * s.lat,
                        s.lat * s.lat,
                    ])
                }
                PredictorSet::Custom => Err(Error::InvalidParams(
                    "custom designs are built from an explicit matrix".into(),
                )),
            })
            .collect();
        let rows = rows?;
        let j = rows[0].len();
        let z = DMatrix::from_fn(rows.len(), j, |r, c| rows[r][c]);
        check_design(&z)?;
        Ok(DesignMatrix { z, predictor_set })
    }

    /// Wraps a caller-supplied matrix, checking the intercept column and rank.
    pub fn custom(z: DMatrix<f64>) -> Result<Self> {
        if z.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidParams(
                "first design column must be an all-ones intercept".into(),
            ));
        }
        check_design(&z)?;
        Ok(DesignMatrix { z, predictor_set: PredictorSet::Custom })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n_rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.z.ncols()
    }

    pub fn predictor_set(&self) -> PredictorSet {
        self.predictor_set
    }

    /// Rows `indices` of the design, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DesignMatrix {
        let z = DMatrix::from_fn(indices.len(), self.z.ncols(), |r, c| {
            self.z[(indices[r], c)]
        });
        DesignMatrix { z, predictor_set: self.predictor_set }
    }
}

fn missing_elev(i: usize, s: &Site) -> Error {
    Error::MissingElevation(format!("site {i} at ({}, {})", s.lon, s.lat))
}

fn check_design(z: &DMatrix<f64>) -> Result<()> {
    if z.nrows() < z.ncols() {
        return Err(Error::RankDeficient { rank: z.nrows(), cols: z.ncols() });
    }
    let svd = z.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * z.nrows().max(z.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < z.ncols() {
        return Err(Error::RankDeficient { rank, cols: z.ncols() });
    }
    Ok(())
}

/// Free-standing design construction, mirroring `DesignMatrix::build`.
pub fn build_design(sites: &SiteSet, predictor_set: PredictorSet) -> Result<DesignMatrix> {
    DesignMatrix::build(sites, predictor_set)
}

/// Response values over sites and days with an observed mask.
#[derive(Debug, Clone)]
pub struct ObservationPanel {
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
    day_labels: Vec<String>,
}

impl ObservationPanel {
    /// Validates shapes, the per-day coverage requirement, and finiteness.
    pub fn new(
        values: DMatrix<f64>,
        observed: DMatrix<bool>,
        day_labels: Vec<String>,
    ) -> Result<Self> {
        if values.shape() != observed.shape() {
            return Err(Error::DimensionMismatch(format!(
                "values {:?} vs observed mask {:?}",
                values.shape(),
                observed.shape()
            )));
        }
        if values.ncols() != day_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} value columns vs {} day labels",
                values.ncols(),
                day_labels.len()
            )));
        }
        for t in 0..values.ncols() {
            let mut any = false;
            for i in 0..values.nrows() {
                if observed[(i, t)] {
                    any = true;
                    if !values[(i, t)].is_finite() {
                        return Err(Error::InvalidPanel(format!(
                            "non-finite value at site {i}, day {}",
                            day_labels[t]
                        )));
                    }
                }
            }
            if !any {
                return Err(Error::InvalidPanel(format!(
                    "day {} has no observed sites",
                    day_labels[t]
                )));
            }
        }
        Ok(ObservationPanel { values, observed, day_labels })
    }

    /// A fully observed panel.
    pub fn complete(values: DMatrix<f64>, day_labels: Vec<String>) -> Result<Self> {
        let observed = DMatrix::from_element(values.nrows(), values.ncols(), true);
        ObservationPanel::new(values, observed, day_labels)
    }

    pub fn n_sites(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_days(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn observed(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn day_labels(&self) -> &[String] {
        &self.day_labels
    }

    pub fn is_observed(&self, site: usize, day: usize) -> bool {
        self.observed[(site, day)]
    }

    /// Indices of sites observed on `day`, ascending.
    pub fn observed_indices(&self, day: usize) -> Vec<usize> {
        (0..self.n_sites())
            .filter(|&i| self.observed[(i, day)])
            .collect()
    }

    /// True when every cell is observed.
    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&b| b)
    }

    /// New panel keeping only the site rows in `indices`, in the given order.
    pub fn subset_sites(&self, indices: &[usize]) -> Result<ObservationPanel> {
        let values = DMatrix::from_fn(indices.len(), self.n_days(), |r, c| {
            self.values[(indices[r], c)]
        });
        let observed = DMatrix::from_fn(indices.len(), self.n_days(), |r, c| {
            self.observed[(indices[r], c)]
        });
        ObservationPanel::new(values, observed, self.day_labels.clone())
    }
}

/// Reads station and observation CSV files into aligned structures.
///
/// Station rows define the site order. Observation rows are long-format
/// `station_id,day,value`; absent pairs become masked cells. With
/// `sqrt_transform`, values are replaced by their square roots and negative
/// inputs are rejected.
pub fn load_observations(
    stations_csv: &Path,
    obs_csv: &Path,
    sqrt_transform: bool,
) -> Result<(SiteSet, ObservationPanel)> {
    let (sites, station_index) = load_stations(stations_csv)?;

    let mut reader = open_csv(obs_csv)?;
    let mut cells: HashMap<(usize, String), f64> = HashMap::new();
    let mut day_set: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(obs_csv, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = field(obs_csv, &record, 0, line)?;
        let day = field(obs_csv, &record, 1, line)?.to_string();
        let raw = field(obs_csv, &record, 2, line)?;
        let value: f64 = raw.parse().map_err(|_| Error::Parse {
            path: obs_csv.display().to_string(),
            line,
            message: format!("bad numeric value {raw:?}"),
        })?;
        let &site = station_index
            .get(id)
            .ok_or_else(|| Error::UnknownStationId(id.to_string()))?;
        let value = if sqrt_transform {
            if value < 0.0 {
                return Err(Error::NegativeValueUnderSqrt {
                    path: obs_csv.display().to_string(),
                    line,
                    value,
                });
            }
            value.sqrt()
        } else {
            value
        };
        let key = (site, day.clone());
        if cells.insert(key, value).is_some() {
            return Err(Error::Parse {
                path: obs_csv.display().to_string(),
                line,
                message: format!("duplicate observation for station {id:?}, day {day:?}"),
            });
        }
        if !day_set.contains(&day) {
            day_set.push(day);
        }
    }
    if day_set.is_empty() {
        return Err(Error::InvalidPanel("no observation rows".into()));
    }
    let day_labels = sort_day_labels(day_set);

    let n = sites.n();
    let m = day_labels.len();
    let mut values = DMatrix::zeros(n, m);
    let mut observed = DMatrix::from_element(n, m, false);
    for (t, day) in day_labels.iter().enumerate() {
        for i in 0..n {
            if let Some(&v) = cells.get(&(i, day.clone())) {
                values[(i, t)] = v;
                observed[(i, t)] = true;
            }
        }
    }
    let panel = ObservationPanel::new(values, observed, day_labels)?;
    Ok((sites, panel))
}

/// Reads a station CSV into a site set plus an id-to-row lookup.
pub fn load_stations(stations_csv: &Path) -> Result<(SiteSet, HashMap<String, usize>)> {
    let mut reader = open_csv(stations_csv)?;
    let mut sites = Vec::new();
    let mut index = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(stations_csv, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = field(stations_csv, &record, 0, line)?.to_string();
        let lon = parse_f64(stations_csv, &record, 1, line)?;
        let lat = parse_f64(stations_csv, &record, 2, line)?;
        let elev_raw = field(stations_csv, &record, 3, line)?;
        let elev = if elev_raw.trim().is_empty() {
            None
        } else {
            Some(parse_f64(stations_csv, &record, 3, line)?)
        };
        if index.insert(id.clone(), sites.len()).is_some() {
            return Err(Error::Parse {
                path: stations_csv.display().to_string(),
                line,
                message: format!("duplicate station id {id:?}"),
            });
        }
        sites.push(Site { lon, lat, elev });
    }
    Ok((SiteSet::new(sites)?, index))
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path: path.display().to_string(), source },
            other => Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("{other:?}"),
            },
        })
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

fn field<'r>(
    path: &Path,
    record: &'r csv::StringRecord,
    idx: usize,
    line: u64,
) -> Result<&'r str> {
    record.get(idx).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("missing column {idx}"),
    })
}

fn parse_f64(path: &Path, record: &csv::StringRecord, idx: usize, line: u64) -> Result<f64> {
    let raw = field(path, record, idx, line)?;
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("bad numeric value {raw:?} in column {idx}"),
    })
}

/// Sorts numerically when every label parses as an integer, else lexicographically.
fn sort_day_labels(mut labels: Vec<String>) -> Vec<String> {
    let numeric: Option<Vec<i64>> = labels.iter().map(|s| s.parse().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by_key(|s| s.parse::<i64>().unwrap()),
        None => labels.sort(),
    }
    labels
}

/// Splits site indices into `k` disjoint folds of near-equal size.
pub fn split_folds(sites: &SiteSet, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = sites.n();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
