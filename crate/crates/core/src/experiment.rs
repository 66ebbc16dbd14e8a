//! Experiment configuration, the per-frame localization driver and error
//! statistics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelationSet, Correlator, FramePlan};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{MicArray, Point, PointGrid, SearchRegion, VolumetricGrid};
use crate::localize::{
    EnergyMap, Estimate, Localizer, Method, ModifiedSearch, PointSearch, RefinedSearch, VolumeSearch,
};
use crate::room::{self, DelayPlacement, Reflection, RoomSpec};
use crate::tables::{self, CacheKey, ComplexityReport, RefineBoundary, VolumeLagSets};

/// Width of the error histogram bins, in meters.
pub const BIN_WIDTH: f64 = 0.05;
/// Errors at or beyond this many meters go to the overflow bin.
pub const OVERFLOW_AT: f64 = 0.30;

fn default_c() -> f64 {
    340.0
}

fn default_true() -> bool {
    true
}

fn default_margin() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDims {
    /// Horizontal error only, for linear arrays searching a plane.
    Xy,
    #[default]
    Xyz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MethodSpec {
    Csrp {
        spacing: f64,
    },
    Vsrp {
        edge: f64,
        alpha: usize,
    },
    Rvsrp {
        edge: f64,
        alpha: usize,
        refine: f64,
        #[serde(default)]
        boundary: RefineBoundary,
    },
    Msrp {
        spacing: f64,
        /// Cube edge around each point; the grid spacing when absent.
        #[serde(default)]
        cube_edge: Option<f64>,
    },
}

impl MethodSpec {
    pub fn method(&self) -> Method {
        match self {
            MethodSpec::Csrp { .. } => Method::Csrp,
            MethodSpec::Vsrp { .. } => Method::Vsrp,
            MethodSpec::Rvsrp { .. } => Method::Rvsrp,
            MethodSpec::Msrp { .. } => Method::Msrp,
        }
    }

    pub fn label(&self) -> String {
        let cm = |m: f64| format!("{}", (m * 1000.0).round() / 10.0);
        match self {
            MethodSpec::Csrp { spacing } => format!("C-SRP [{} cm]", cm(*spacing)),
            MethodSpec::Vsrp { edge, alpha } => format!("V-SRP [{} cm, alpha {alpha}]", cm(*edge)),
            MethodSpec::Rvsrp { edge, alpha, refine, .. } => {
                format!("RV-SRP [{} cm, alpha {alpha} / ref. {} cm]", cm(*edge), cm(*refine))
            }
            MethodSpec::Msrp { spacing, .. } => format!("M-SRP [{} cm]", cm(*spacing)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Ground-truth position.
    pub position: Point,
    /// Recording to localize; simulated from `simulation` when absent.
    #[serde(default)]
    pub wav: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub room: [f64; 3],
    pub reflection: Reflection,
    /// Excitation length in seconds.
    pub duration: f64,
    #[serde(default)]
    pub max_order: Option<usize>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub placement: DelayPlacement,
}

impl SimulationSpec {
    pub fn room(&self, fs: f64, c: f64) -> Result<RoomSpec> {
        let mut room = RoomSpec::new(self.room, self.reflection, fs, c)?;
        room.max_order = self.max_order;
        room.placement = self.placement;
        Ok(room)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub fs: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub phat: bool,
    #[serde(default)]
    pub frames: FramePlan,
    /// Localize at most this many frames per source.
    #[serde(default)]
    pub max_frames: Option<usize>,
    /// Extra lags computed beyond the largest attainable TDoA.
    #[serde(default = "default_margin")]
    pub lag_margin: usize,
    pub mics: MicArray,
    pub region: SearchRegion,
    pub methods: Vec<MethodSpec>,
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub error_dims: ErrorDims,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory for cached volumetric lag sets.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.c > 0.0) {
            return Err(Error::Config("fs and c must be positive".into()));
        }
        self.region.validate()?;
        FramePlan::new(self.frames.frame_len, self.frames.hop)?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if self.sources.is_empty() {
            return Err(Error::Config("no sources configured".into()));
        }
        if self.simulation.is_none() {
            if let Some(k) = self.sources.iter().position(|s| s.wav.is_none()) {
                return Err(Error::Config(format!("source {k} has no wav and no simulation is configured")));
            }
        }
        if self.max_lag() >= self.frames.frame_len {
            return Err(Error::MaxLagTooLarge { max_lag: self.max_lag(), frame_len: self.frames.frame_len });
        }
        Ok(())
    }

    /// Correlation half-width in samples.
    pub fn max_lag(&self) -> usize {
        self.mics.max_lag(self.fs, self.c) as usize + self.lag_margin
    }
}

/// Per-frame error statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Counts of `[k w, (k+1) w)` for errors below [`OVERFLOW_AT`].
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl Histogram {
    pub fn from_errors(errors: &[f64]) -> Self {
        let bins = (OVERFLOW_AT / BIN_WIDTH).round() as usize;
        let mut counts = vec![0; bins];
        let mut overflow = 0;
        for &e in errors {
            let k = (e / BIN_WIDTH + 1e-12).floor() as usize;
            if k < bins {
                counts[k] += 1;
            } else {
                overflow += 1;
            }
        }
        Self { bin_width: BIN_WIDTH, counts, overflow }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub histogram: Histogram,
}

pub fn position_error(estimate: &Point, truth: &Point, dims: ErrorDims) -> f64 {
    let axes = match dims {
        ErrorDims::Xy => 2,
        ErrorDims::Xyz => 3,
    };
    (0..axes).map(|k| (estimate[k] - truth[k]).powi(2)).sum::<f64>().sqrt()
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Euclidean errors over the chosen axes with their mean, median and histogram.
pub fn error_metrics(estimates: &[Point], truths: &[Point], dims: ErrorDims) -> Result<ErrorStats> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch(estimates.len(), truths.len()));
    }
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| position_error(e, t, dims)).collect();
    Ok(stats_from_errors(errors))
}

pub(crate) fn stats_from_errors(errors: Vec<f64>) -> ErrorStats {
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    ErrorStats { mean, median: median(&errors), histogram: Histogram::from_errors(&errors), errors }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub source: usize,
    pub truth: Point,
    pub error: f64,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub label: String,
    pub method: Method,
    pub mean_error: f64,
    pub median_error: f64,
    pub histogram: Histogram,
    pub predicted_additions: u64,
    pub frames: Vec<FrameRecord>,
    /// Search time over all frames; excluded from determinism checks.
    pub wall_clock_s: f64,
}

impl MethodReport {
    /// Recomputes the summary statistics from the stored frames.
    pub fn recompute(&self) -> Option<ErrorStats> {
        if self.frames.is_empty() {
            return None;
        }
        Some(stats_from_errors(self.frames.iter().map(|f| f.error).collect()))
    }

    pub fn counters_match(&self) -> bool {
        self.frames.iter().all(|f| f.estimate.measured_additions == self.predicted_additions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pairs: usize,
    pub max_lag: usize,
    pub methods: Vec<MethodReport>,
}

impl RunReport {
    /// One row per method and frame.
    pub fn write_estimates_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "method,source,frame,truth_x,truth_y,truth_z,x,y,z,error_m,score,additions,element")?;
        for m in &self.methods {
            for f in &m.frames {
                let e = &f.estimate;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    m.label,
                    f.source,
                    e.frame,
                    f.truth[0],
                    f.truth[1],
                    f.truth[2],
                    e.position[0],
                    e.position[1],
                    e.position[2],
                    f.error,
                    e.score,
                    e.measured_additions,
                    e.element
                )?;
            }
        }
        Ok(())
    }

    /// Histogram rows: method, lower edge in cm, count; overflow as `>=30`.
    pub fn write_histograms_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "method,bin_cm,count")?;
        for m in &self.methods {
            for (k, n) in m.histogram.counts.iter().enumerate() {
                writeln!(out, "{},{},{n}", m.label, (k as f64 * m.histogram.bin_width * 100.0).round())?;
            }
            writeln!(out, "{},>={},{}", m.label, (OVERFLOW_AT * 100.0).round(), m.histogram.overflow)?;
        }
        Ok(())
    }
}

/// A configured set of localizers with their tables built.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub localizers: Vec<Box<dyn Localizer>>,
    pub complexity: Vec<Option<ComplexityReport>>,
    correlator: Correlator,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, exec: Exec) -> Result<Self> {
        config.validate()?;
        let (fs, c) = (config.fs, config.c);
        let mut localizers: Vec<Box<dyn Localizer>> = Vec::new();
        let mut complexity = Vec::new();
        for spec in &config.methods {
            match *spec {
                MethodSpec::Csrp { spacing } => {
                    let grid = PointGrid::new(config.region, spacing)?;
                    localizers.push(Box::new(PointSearch::new(grid, &config.mics, fs, c, exec)?));
                    complexity.push(None);
                }
                MethodSpec::Vsrp { edge, alpha } => {
                    let volumes = volume_search(&config, edge, alpha, exec)?;
                    complexity.push(Some(ComplexityReport::new(&volumes.grid, &volumes.sets, None)?));
                    localizers.push(Box::new(volumes));
                }
                MethodSpec::Rvsrp { edge, alpha, refine, boundary } => {
                    let volumes = volume_search(&config, edge, alpha, exec)?;
                    complexity.push(Some(ComplexityReport::new(
                        &volumes.grid,
                        &volumes.sets,
                        Some((refine, boundary)),
                    )?));
                    localizers.push(Box::new(RefinedSearch {
                        volumes,
                        array: config.mics.clone(),
                        fs,
                        c,
                        spacing: refine,
                        boundary,
                    }));
                }
                MethodSpec::Msrp { spacing, cube_edge } => {
                    let grid = PointGrid::new(config.region, spacing)?;
                    let edge = cube_edge.unwrap_or(spacing);
                    localizers.push(Box::new(ModifiedSearch::new(grid, &config.mics, fs, c, edge, exec)?));
                    complexity.push(None);
                }
            }
        }
        let max_lag = config.max_lag();
        for l in &localizers {
            for (p, &(lo, hi)) in l.lag_bounds().iter().enumerate() {
                for lag in [lo, hi] {
                    if lag.unsigned_abs() as usize > max_lag {
                        return Err(Error::LagOutOfRange { pair: p, lag, max_lag });
                    }
                }
            }
        }
        let correlator = Correlator::new(config.frames.frame_len);
        Ok(Self { config, localizers, complexity, correlator })
    }

    /// Microphone signals for source `k`, read from its WAV or simulated.
    pub fn source_signals(&self, k: usize, exec: Exec) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.config;
        let source = cfg.sources.get(k).ok_or_else(|| Error::Config(format!("no source {k}")))?;
        if let Some(path) = &source.wav {
            return load_signals(path, cfg);
        }
        let sim = cfg.simulation.as_ref().ok_or_else(|| Error::Config("no simulation configured".into()))?;
        simulate_source(sim, cfg, k, exec)
    }

    pub fn correlate(&self, channels: &[Vec<f64>], frame: usize, exec: Exec) -> Result<CorrelationSet> {
        let plan = &self.config.frames;
        let start = plan.frame_start(frame);
        let end = start + plan.frame_len;
        if channels.iter().any(|ch| ch.len() < end) {
            return Err(Error::SignalTooShort { len: channels[0].len(), frame_len: end });
        }
        let slices: Vec<&[f64]> = channels.iter().map(|ch| &ch[start..end]).collect();
        self.correlator.correlate(&slices, &self.config.mics, self.config.max_lag(), self.config.phat, exec)
    }

    pub fn frame_count(&self, channels: &[Vec<f64>]) -> Result<usize> {
        let len = channels.iter().map(Vec::len).min().unwrap_or(0);
        let n = self.config.frames.frame_count(len)?;
        Ok(self.config.max_frames.map_or(n, |cap| n.min(cap)))
    }

    /// Every configured method on every frame: `result[method][frame]`.
    pub fn localize_signals(&self, channels: &[Vec<f64>], exec: Exec) -> Result<Vec<Vec<Estimate>>> {
        let mut out = vec![Vec::new(); self.localizers.len()];
        for frame in 0..self.frame_count(channels)? {
            let corr = self.correlate(channels, frame, exec)?;
            for (slot, l) in out.iter_mut().zip(&self.localizers) {
                slot.push(Estimate { frame, ..l.localize(&corr, exec)? });
            }
        }
        Ok(out)
    }

    pub fn energy_map(&self, channels: &[Vec<f64>], frame: usize, method: usize, exec: Exec) -> Result<EnergyMap> {
        let l = self.localizers.get(method).ok_or_else(|| Error::Config(format!("no method {method}")))?;
        l.energy_map(&self.correlate(channels, frame, exec)?, exec)
    }

    /// Localizes every frame of every source with every method.
    pub fn run(&self, exec: Exec) -> Result<RunReport> {
        let cfg = &self.config;
        let mut frames: Vec<Vec<FrameRecord>> = vec![Vec::new(); self.localizers.len()];
        let mut seconds = vec![0.0; self.localizers.len()];
        for (k, source) in cfg.sources.iter().enumerate() {
            let channels = self.source_signals(k, exec)?;
            for frame in 0..self.frame_count(&channels)? {
                let corr = self.correlate(&channels, frame, exec)?;
                for (m, l) in self.localizers.iter().enumerate() {
                    let started = Instant::now();
                    let estimate = Estimate { frame, ..l.localize(&corr, exec)? };
                    seconds[m] += started.elapsed().as_secs_f64();
                    let error = position_error(&estimate.position, &source.position, cfg.error_dims);
                    frames[m].push(FrameRecord { source: k, truth: source.position, error, estimate });
                }
            }
        }
        let methods = frames
            .into_iter()
            .zip(&self.localizers)
            .zip(&cfg.methods)
            .zip(seconds)
            .map(|(((frames, l), spec), wall_clock_s)| {
                let stats = stats_from_errors(frames.iter().map(|f| f.error).collect());
                MethodReport {
                    label: spec.label(),
                    method: l.method(),
                    mean_error: stats.mean,
                    median_error: stats.median,
                    histogram: stats.histogram,
                    predicted_additions: l.predicted_additions(),
                    frames,
                    wall_clock_s,
                }
            })
            .collect();
        Ok(RunReport { pairs: cfg.mics.pair_count(), max_lag: cfg.max_lag(), methods })
    }
}

fn volume_search(config: &ExperimentConfig, edge: f64, alpha: usize, exec: Exec) -> Result<VolumeSearch> {
    let grid = VolumetricGrid::new(config.region, edge, alpha)?;
    let Some(dir) = &config.cache_dir else {
        return VolumeSearch::new(grid, &config.mics, config.fs, config.c, exec);
    };
    let key =
        CacheKey { mics: config.mics.positions(), region: &config.region, edge, alpha, fs: config.fs, c: config.c };
    let sets = match tables::load_cached(dir, &key)? {
        Some(sets) if sets.volume_count() == grid.len() => sets,
        _ => {
            let sets = VolumeLagSets::from_geometry(&grid, &config.mics, config.fs, config.c, exec)?;
            tables::store_cached(dir, &key, &sets)?;
            sets
        }
    };
    Ok(VolumeSearch { grid, sets })
}

/// Reads a multichannel recording and checks it against the configuration.
pub fn load_signals(path: &Path, cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let (channels, fs) = room::read_wav(path)?;
    if channels.len() != cfg.mics.mic_count() {
        return Err(Error::ChannelCount { expected: cfg.mics.mic_count(), found: channels.len() });
    }
    if (fs as f64 - cfg.fs).abs() > 0.5 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: format!("sample rate {fs} differs from the configured {}", cfg.fs),
        });
    }
    Ok(channels)
}

/// Renders source `k` of the configuration with a seeded noise excitation.
pub fn simulate_source(sim: &SimulationSpec, cfg: &ExperimentConfig, k: usize, exec: Exec) -> Result<Vec<Vec<f64>>> {
    let room = sim.room(cfg.fs, cfg.c)?;
    let len = (sim.duration * cfg.fs).round() as usize;
    let seed = cfg.seed.wrapping_add(k as u64);
    let excitation = room::noise_burst(len, seed);
    room::render_mic_signals(&room, &cfg.sources[k].position, &excitation, &cfg.mics, sim.snr_db, seed, exec)
}

/// Builds the configured localizers and runs them over every source.
pub fn run_experiment(config: ExperimentConfig, exec: Exec) -> Result<RunReport> {
    Experiment::new(config, exec)?.run(exec)
}

/// Predicted C-SRP additions for a region, without building the grid.
pub fn predicted_csrp(region: &SearchRegion, spacing: f64, pairs: usize) -> u64 {
    tables::predict_ops_csrp_region(region, spacing, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_estimates() {
        let pts = vec![[1.0, 2.0, 3.0]; 4];
        let s = error_metrics(&pts, &pts, ErrorDims::Xyz).unwrap();
        assert_eq!((s.mean, s.median), (0.0, 0.0));
        assert_eq!(s.histogram.counts[0], 4);
        assert_eq!(s.histogram.total(), 4);
    }

    #[test]
    fn mean_median_divergence() {
        let truths = vec![[0.0; 3]; 3];
        let est = vec![[0.01, 0.0, 0.0], [0.0, 0.02, 0.0], [0.0, 0.0, 1.0]];
        let s = error_metrics(&est, &truths, ErrorDims::Xyz).unwrap();
        assert!((s.mean * 100.0 - 34.333_333).abs() < 1e-4);
        assert!((s.median * 100.0 - 2.0).abs() < 1e-12);
        assert_eq!(s.histogram.counts, vec![2, 0, 0, 0, 0, 0]);
        assert_eq!(s.histogram.overflow, 1);
        // Horizontal error ignores z.
        let s = error_metrics(&est, &truths, ErrorDims::Xy).unwrap();
        assert_eq!(s.errors[2], 0.0);
    }

    #[test]
    fn bins_are_half_open() {
        let h = Histogram::from_errors(&[0.0, 0.049, 0.05, 0.2999, 0.30, 2.0]);
        assert_eq!(h.counts, vec![2, 1, 0, 0, 0, 1]);
        assert_eq!(h.overflow, 2);
    }

    #[test]
    fn even_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(error_metrics(&[], &[], ErrorDims::Xy), Err(Error::Empty(_))));
        assert!(matches!(error_metrics(&[[0.0; 3]], &[], ErrorDims::Xy), Err(Error::LengthMismatch(1, 0))));
    }

    #[test]
    fn config_requires_signals() {
        let text = r#"
            fs = 48000
            mics = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]
            region = { origin = [0.0, 1.0, 0.0], extents = [1.0, 1.0, 0.0] }
            methods = [{ kind = "csrp", spacing = 0.1 }]
            sources = [{ position = [0.5, 1.5, 0.0] }]
        "#;
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))));
        let with_wav = text.replace("position = [0.5, 1.5, 0.0]", "position = [0.5, 1.5, 0.0], wav = \"a.wav\"");
        let cfg = ExperimentConfig::from_toml(&with_wav).unwrap();
        assert_eq!(cfg.c, 340.0);
        assert_eq!(cfg.frames, FramePlan::STANDARD);
        assert!(cfg.phat);
        assert_eq!(cfg.methods[0].label(), "C-SRP [10 cm]");
    }
}
