//! Series generation and loading, standardization, windowing and
//! chronological splits.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `M × D` observations, one row per time step.
pub type SeriesMatrix = Array2<f64>;

/// Steps simulated and discarded before an AR series starts.
pub const AR_BURN_IN: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `x_t = Σᵢ φᵢ x_{t−i} + ε_t`, independently per channel.
    Ar { coeffs: Vec<f64>, noise_std: f64 },
    /// Sinusoid plus linear trend plus noise; channel `d` is phase-shifted
    /// by `2πd/D`.
    SeasonalTrend {
        period: usize,
        amplitude: f64,
        slope: f64,
        noise_std: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub length: usize,
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Whether `1 − Σ φᵢ zⁱ` has all roots outside the unit circle.
///
/// Runs the Levinson step-down recursion: the process is stationary iff
/// every reflection coefficient has magnitude below one.
pub fn is_stationary(coeffs: &[f64]) -> bool {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let mut a = coeffs.to_vec();
    while let Some(&kappa) = a.last() {
        if kappa.abs() >= 1.0 {
            return false;
        }
        let p = a.len();
        let denom = 1.0 - kappa * kappa;
        let prev: Vec<f64> = (0..p - 1)
            .map(|i| (a[i] + kappa * a[p - 2 - i]) / denom)
            .collect();
        a = prev;
    }
    true
}

pub fn generate(spec: &SyntheticSpec) -> Result<SeriesMatrix> {
    if spec.length == 0 || spec.channels == 0 {
        return Err(Error::Config("synthetic length and channels must be positive".into()));
    }
    let mut out = Array2::zeros((spec.length, spec.channels));
    match &spec.kind {
        SyntheticKind::Ar { coeffs, noise_std } => {
            check_noise(*noise_std)?;
            if !is_stationary(coeffs) {
                return Err(Error::Config(format!("AR coefficients {coeffs:?} are not stationary")));
            }
            let p = coeffs.len();
            for d in 0..spec.channels {
                let mut rng = channel_rng(spec.seed, d);
                let mut buf = vec![0.0; AR_BURN_IN + spec.length];
                for t in 0..buf.len() {
                    let mut v = noise_std * rng.sample::<f64, _>(StandardNormal);
                    for i in 0..p.min(t) {
                        v += coeffs[i] * buf[t - 1 - i];
                    }
                    buf[t] = v;
                }
                for (t, v) in buf[AR_BURN_IN..].iter().enumerate() {
                    out[[t, d]] = *v;
                }
            }
        }
        SyntheticKind::SeasonalTrend {
            period,
            amplitude,
            slope,
            noise_std,
        } => {
            check_noise(*noise_std)?;
            if *period == 0 {
                return Err(Error::Config("seasonal period must be positive".into()));
            }
            let tau = 2.0 * std::f64::consts::PI;
            for d in 0..spec.channels {
                let mut rng = channel_rng(spec.seed, d);
                let phase = tau * d as f64 / spec.channels as f64;
                for t in 0..spec.length {
                    let season = amplitude * (tau * t as f64 / *period as f64 + phase).sin();
                    let noise: f64 = rng.sample(StandardNormal);
                    out[[t, d]] = season + slope * t as f64 + noise_std * noise;
                }
            }
        }
    }
    Ok(out)
}

fn check_noise(noise_std: f64) -> Result<()> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("noise_std must be finite and >= 0, got {noise_std}")));
    }
    Ok(())
}

fn channel_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

/// Reads a comma-separated file with a header row. When
/// `date_column_present` is set the first column is skipped. Every other
/// cell must parse as a finite number.
pub fn load_csv(path: &Path, date_column_present: bool) -> Result<SeriesMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let csv_err = |row: usize, column: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| csv_err(0, 0, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(csv_err(0, 0, "file is empty".into()));
    }
    let skip = usize::from(date_column_present);
    if headers.len() <= skip {
        return Err(csv_err(0, 0, "no value columns".into()));
    }
    let width = headers.len();
    let channels = width - skip;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(row, 0, e.to_string()))?;
        if record.len() != width {
            return Err(csv_err(
                row,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate().skip(skip) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| csv_err(row, j + 1, format!("cannot parse {cell:?} as a number")))?;
            if !v.is_finite() {
                return Err(csv_err(row, j + 1, format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(csv_err(0, 0, "no data rows".into()));
    }
    Ok(Array2::from_shape_vec((rows, channels), values).expect("row widths were checked"))
}

/// Per-channel affine map fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose training std was zero; their std is reported as 1.
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Fits on the first `train_rows` rows, using population std.
    pub fn fit(series: &SeriesMatrix, train_rows: usize) -> Result<Self> {
        if train_rows < 2 || train_rows > series.nrows() {
            return Err(Error::Config(format!(
                "standardization needs 2..={} training rows, got {train_rows}",
                series.nrows()
            )));
        }
        let train = series.slice(s![..train_rows, ..]);
        let n = train_rows as f64;
        let mut mean = Vec::with_capacity(series.ncols());
        let mut std = Vec::with_capacity(series.ncols());
        let mut constant = Vec::with_capacity(series.ncols());
        for col in train.axis_iter(Axis(1)) {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            if sd > 0.0 && sd.is_finite() {
                std.push(sd);
                constant.push(false);
            } else {
                std.push(1.0);
                constant.push(true);
            }
        }
        Ok(Standardizer { mean, std, constant })
    }

    pub fn apply(&self, series: &SeriesMatrix) -> SeriesMatrix {
        let mut out = series.clone();
        for (d, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[d]) / self.std[d]);
        }
        out
    }

    pub fn invert(&self, series: &SeriesMatrix) -> SeriesMatrix {
        let mut out = series.clone();
        for (d, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.std[d] + self.mean[d]);
        }
        out
    }
}

pub fn standardize(series: &SeriesMatrix, train_rows: usize) -> Result<(SeriesMatrix, Standardizer)> {
    let st = Standardizer::fit(series, train_rows)?;
    Ok((st.apply(series), st))
}

/// One training sample: history rows `[start, start+H)` and label rows
/// `[start+H, start+H+T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub start: usize,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

/// Stride-1 windows fully inside `rows`.
pub fn window(series: &SeriesMatrix, history: usize, horizon: usize, rows: Range<usize>) -> Result<Vec<WindowPair>> {
    if history == 0 || horizon == 0 {
        return Err(Error::Config("history and horizon must be positive".into()));
    }
    if rows.end > series.nrows() || rows.start > rows.end {
        return Err(Error::Config(format!(
            "row range {rows:?} outside series of {} rows",
            series.nrows()
        )));
    }
    let span = history + horizon;
    if rows.len() < span {
        return Err(Error::Config(format!(
            "row range of length {} is shorter than H + T = {span}",
            rows.len()
        )));
    }
    Ok((rows.start..=rows.end - span)
        .map(|start| WindowPair {
            start,
            x: series.slice(s![start..start + history, ..]).to_owned(),
            y: series
                .slice(s![start + history..start + span, ..])
                .to_owned(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitBoundaries {
    /// Train gets `⌊M·train⌋` rows, test `⌊M·test⌋`, validation the rest.
    Fractions { train: f64, val: f64, test: f64 },
    /// Explicit boundaries: train `[0, train_end)`, validation
    /// `[train_end, val_end)`, test `[val_end, end)`.
    Rows { train_end: usize, val_end: usize, end: usize },
    /// 12/4/4 months of 30 days, `rows_per_hour` rows per hour.
    Ett { rows_per_hour: usize },
}

impl Default for SplitBoundaries {
    fn default() -> Self {
        SplitBoundaries::Fractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitConvention {
    /// Validation and test ranges start `H` rows early so their first
    /// window has a full history.
    #[default]
    Extended,
    Strict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub boundaries: SplitBoundaries,
    #[serde(default)]
    pub convention: SplitConvention,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            boundaries: SplitBoundaries::default(),
            convention: SplitConvention::default(),
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    /// Row ranges of the three splits, before any backward extension.
    fn borders(&self, total: usize) -> Result<(usize, usize, usize)> {
        match self.boundaries {
            SplitBoundaries::Fractions { train, val, test } => {
                if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f))
                    || (train + val + test - 1.0).abs() > 1e-9
                {
                    return Err(Error::Config(format!(
                        "split fractions must be in [0, 1] and sum to 1, got {train}/{val}/{test}"
                    )));
                }
                let n_train = (total as f64 * train).floor() as usize;
                let n_test = (total as f64 * test).floor() as usize;
                Ok((n_train, total - n_test, total))
            }
            SplitBoundaries::Rows {
                train_end,
                val_end,
                end,
            } => {
                if !(train_end <= val_end && val_end <= end && end <= total) {
                    return Err(Error::Config(format!(
                        "row boundaries {train_end}/{val_end}/{end} invalid for {total} rows"
                    )));
                }
                Ok((train_end, val_end, end))
            }
            SplitBoundaries::Ett { rows_per_hour } => {
                let month = 30 * 24 * rows_per_hour.max(1);
                let (a, b, c) = (12 * month, 16 * month, 20 * month);
                if c > total {
                    return Err(Error::Config(format!(
                        "ETT boundaries need {c} rows, series has {total}"
                    )));
                }
                Ok((a, b, c))
            }
        }
    }

    pub fn ranges(&self, total: usize, history: usize, horizon: usize) -> Result<SplitRanges> {
        let (train_end, val_end, end) = self.borders(total)?;
        let back = match self.convention {
            SplitConvention::Extended => history,
            SplitConvention::Strict => 0,
        };
        let ranges = SplitRanges {
            train: 0..train_end,
            val: train_end.saturating_sub(back)..val_end,
            test: val_end.saturating_sub(back)..end,
        };
        for (name, r) in [("train", &ranges.train), ("val", &ranges.val), ("test", &ranges.test)] {
            if r.len() < history + horizon {
                return Err(Error::Config(format!(
                    "{name} split {r:?} has fewer than H + T = {} rows",
                    history + horizon
                )));
            }
        }
        Ok(ranges)
    }
}

/// Windows for all three splits on the (optionally standardized) series.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
    pub ranges: SplitRanges,
    pub standardizer: Option<Standardizer>,
}

pub fn prepare(series: &SeriesMatrix, split: &SplitSpec, history: usize, horizon: usize) -> Result<Dataset> {
    let ranges = split.ranges(series.nrows(), history, horizon)?;
    let (scaled, standardizer) = if split.standardize {
        let (s, st) = standardize(series, ranges.train.end)?;
        (s, Some(st))
    } else {
        (series.clone(), None)
    };
    Ok(Dataset {
        train: window(&scaled, history, horizon, ranges.train.clone())?,
        val: window(&scaled, history, horizon, ranges.val.clone())?,
        test: window(&scaled, history, horizon, ranges.test.clone())?,
        ranges,
        standardizer,
    })
}
