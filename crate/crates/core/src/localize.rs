//! Steered-response power search over point and volumetric grids.
//!
//! Every search counts the additions it performs while evaluating its
//! objective. Only those additions are counted: table construction and
//! correlation are outside the per-frame search cost.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationSet;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::geometry::{distance, floor_ratio, MicArray, Point, PointGrid, VolumetricGrid};
use crate::tables::{
    predict_ops_csrp, predict_ops_rvsrp, predict_ops_vsrp, PointLagTable, RefineBoundary, VolumeLagSets,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classical point-grid search.
    Csrp,
    /// Volumetric search over deduplicated lag sets.
    Vsrp,
    /// Volumetric search followed by a dense point search in the winner.
    Rvsrp,
    /// Point search summing a gradient-estimated lag interval per pair.
    Msrp,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Csrp => "C-SRP",
            Method::Vsrp => "V-SRP",
            Method::Rvsrp => "RV-SRP",
            Method::Msrp => "M-SRP",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Result of localizing one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub position: Point,
    pub score: f64,
    pub method: Method,
    pub frame: usize,
    pub measured_additions: u64,
    /// Winning point index (C-SRP, M-SRP) or volume index (V-SRP, RV-SRP).
    pub element: usize,
}

/// Objective value of every grid element for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap {
    pub method: Method,
    pub centers: Vec<Point>,
    pub values: Vec<f64>,
}

impl EnergyMap {
    /// Index of the largest value, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| *v > self.values[b]) {
                best = Some(i);
            }
        }
        best
    }

    /// Rows of `x,y,z,score`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,z,score")?;
        for (c, v) in self.centers.iter().zip(&self.values) {
            writeln!(out, "{},{},{},{}", c[0], c[1], c[2], v)?;
        }
        Ok(())
    }
}

fn check_pairs(table_pairs: usize, corr: &CorrelationSet) -> Result<()> {
    if table_pairs != corr.pair_count() {
        return Err(Error::PairMismatch { table: table_pairs, corr: corr.pair_count() });
    }
    Ok(())
}

/// `Σ_p φ_p[ζ_p(x)]` for one table row, with the additions it took.
#[inline]
fn point_score(phi: &[f64], width: usize, offset: i32, row: &[i16]) -> (f64, u64) {
    let mut score = phi[(row[0] as i32 + offset) as usize];
    let mut additions = 0;
    for (p, &lag) in row.iter().enumerate().skip(1) {
        score += phi[p * width + (lag as i32 + offset) as usize];
        additions += 1;
    }
    (score, additions)
}

/// `Σ_p Σ_{ζ ∈ Z_{p,V}} φ_p[ζ]` for one volume, with the additions it took.
#[inline]
fn volume_score(phi: &[f64], width: usize, offset: i32, sets: &VolumeLagSets, v: usize) -> (f64, u64) {
    let lags = sets.volume_lags(v);
    let offsets = sets.volume_offsets(v);
    let base = offsets[0];
    let mut score = 0.0;
    let mut terms = 0u64;
    for p in 0..sets.pair_count() {
        let row = &phi[p * width..(p + 1) * width];
        for &lag in &lags[(offsets[p] - base) as usize..(offsets[p + 1] - base) as usize] {
            let term = row[(lag as i32 + offset) as usize];
            if terms == 0 {
                score = term;
            } else {
                score += term;
            }
            terms += 1;
        }
    }
    (score, terms.saturating_sub(1))
}

/// `Σ_p Σ_{ζ=lo}^{hi} φ_p[ζ]` for one point, with the additions it took.
#[inline]
fn interval_score(phi: &[f64], width: usize, offset: i32, row: &[(i16, i16)]) -> (f64, u64) {
    let mut score = 0.0;
    let mut terms = 0u64;
    for (p, &(lo, hi)) in row.iter().enumerate() {
        let base = p * width;
        for lag in lo as i32..=hi as i32 {
            let term = phi[base + (lag + offset) as usize];
            if terms == 0 {
                score = term;
            } else {
                score += term;
            }
            terms += 1;
        }
    }
    (score, terms.saturating_sub(1))
}

fn layout(corr: &CorrelationSet) -> (&[f64], usize, i32) {
    (corr.raw(), 2 * corr.max_lag() + 1, corr.max_lag() as i32)
}

/// Classical search: the grid point maximizing `Σ_p φ_p[ζ_p(x)]`.
pub fn csrp_localize(corr: &CorrelationSet, grid: &PointGrid, table: &PointLagTable, exec: Exec) -> Result<Estimate> {
    check_pairs(table.pair_count(), corr)?;
    corr.check_bounds(table.pair_bounds())?;
    let (phi, width, offset) = layout(corr);
    let best = exec::argmax(table.point_count(), exec, |i| point_score(phi, width, offset, table.row(i)));
    Ok(Estimate {
        position: grid.points()[best.index],
        score: best.score,
        method: Method::Csrp,
        frame: 0,
        measured_additions: best.additions,
        element: best.index,
    })
}

/// Volumetric search: the volume maximizing the sum of correlation values
/// over its deduplicated lag sets. Reports the volume center.
pub fn vsrp_localize(
    corr: &CorrelationSet,
    sets: &VolumeLagSets,
    vgrid: &VolumetricGrid,
    exec: Exec,
) -> Result<Estimate> {
    check_pairs(sets.pair_count(), corr)?;
    corr.check_bounds(sets.pair_bounds())?;
    let (phi, width, offset) = layout(corr);
    let best = exec::argmax(sets.volume_count(), exec, |v| volume_score(phi, width, offset, sets, v));
    Ok(Estimate {
        position: vgrid.volumes()[best.index].center(),
        score: best.score,
        method: Method::Vsrp,
        frame: 0,
        measured_additions: best.additions,
        element: best.index,
    })
}

/// Points of a lattice of spacing `spacing` anchored at `lo`, spanning one
/// volume edge on each active axis.
pub fn refine_points(lo: &Point, active: [bool; 3], edge: f64, spacing: f64, boundary: RefineBoundary) -> Vec<Point> {
    let per_axis = floor_ratio(edge, spacing)
        + match boundary {
            RefineBoundary::Closed => 1,
            RefineBoundary::Open => 0,
        };
    let counts: [usize; 3] = std::array::from_fn(|k| if active[k] { per_axis.max(1) } else { 1 });
    let mut points = Vec::with_capacity(counts.iter().product());
    for iz in 0..counts[2] {
        for iy in 0..counts[1] {
            for ix in 0..counts[0] {
                points.push([lo[0] + ix as f64 * spacing, lo[1] + iy as f64 * spacing, lo[2] + iz as f64 * spacing]);
            }
        }
    }
    points
}

/// Refinement settings for [`rvsrp_localize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement<'a> {
    pub array: &'a MicArray,
    pub fs: f64,
    pub c: f64,
    pub spacing: f64,
    pub boundary: RefineBoundary,
}

/// Volumetric search, then a point search over a fresh lattice spanning the
/// winning volume. TDoAs of the refinement lattice are computed on the fly.
///
/// The returned `element` is the winning volume.
pub fn rvsrp_localize(
    corr: &CorrelationSet,
    sets: &VolumeLagSets,
    vgrid: &VolumetricGrid,
    refine: &Refinement<'_>,
    exec: Exec,
) -> Result<Estimate> {
    if !(refine.spacing > 0.0) || refine.spacing > vgrid.edge() * (1.0 + 1e-9) {
        return Err(Error::InvalidSpacing(refine.spacing));
    }
    let coarse = vsrp_localize(corr, sets, vgrid, exec)?;
    let volume = &vgrid.volumes()[coarse.element];
    let points = refine_points(&volume.lo, vgrid.region().active_axes(), vgrid.edge(), refine.spacing, refine.boundary);
    let table = PointLagTable::build(&points, refine.array, refine.fs, refine.c, exec)?;
    check_pairs(table.pair_count(), corr)?;
    corr.check_bounds(table.pair_bounds())?;
    let (phi, width, offset) = layout(corr);
    let best = exec::argmax(points.len(), exec, |i| point_score(phi, width, offset, table.row(i)));
    Ok(Estimate {
        position: points[best.index],
        score: best.score,
        method: Method::Rvsrp,
        frame: 0,
        measured_additions: coarse.measured_additions + best.additions,
        element: coarse.element,
    })
}

/// Gradient-estimated lag interval of a cube of edge `r` centered on `x`
/// for the pair `(m1, m2)`.
///
/// The half-width is `‖∇τ‖·d` with `d` the distance from the cube center
/// to its surface along the gradient. A zero gradient collapses the
/// interval to the point's own lag.
pub fn msrp_lag_bounds(x: &Point, m1: &Point, m2: &Point, fs: f64, c: f64, r: f64) -> (i32, i32) {
    let d1 = distance(m1, x);
    let d2 = distance(m2, x);
    let center = (d2 - d1) * (fs / c);
    let unit = |m: &Point, d: f64| -> [f64; 3] {
        if d == 0.0 {
            [0.0; 3]
        } else {
            std::array::from_fn(|k| (x[k] - m[k]) / d)
        }
    };
    let (u2, u1) = (unit(m2, d2), unit(m1, d1));
    let grad: [f64; 3] = std::array::from_fn(|k| (u2[k] - u1[k]) / c);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 || r == 0.0 {
        let lag = center.round() as i32;
        return (lag, lag);
    }
    let reach =
        grad.iter().map(|g| (g / norm).abs()).filter(|a| *a > 0.0).map(|a| 1.0 / a).fold(f64::INFINITY, f64::min);
    let half = norm * 0.5 * r * reach * fs;
    ((center - half).round() as i32, (center + half).round() as i32)
}

/// Per-point, per-pair lag intervals for the modified search, clipped to
/// the physically attainable lags of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MsrpTable {
    pairs: usize,
    points: usize,
    cube_edge: f64,
    intervals: Vec<(i16, i16)>,
    bounds: Vec<(i32, i32)>,
    clipped: usize,
}

impl MsrpTable {
    pub fn build(points: &[Point], array: &MicArray, fs: f64, c: f64, cube_edge: f64, exec: Exec) -> Result<Self> {
        let pairs = array.pair_count();
        let limits: Vec<i32> = (0..pairs).map(|p| array.pair_lag_limit(p, fs, c)).collect();
        let rows = exec::map(points.len(), exec, |i| {
            let mut clipped = 0;
            let row: Vec<(i16, i16)> = (0..pairs)
                .map(|p| {
                    let (m1, m2) = array.pair(p);
                    let (lo, hi) = msrp_lag_bounds(&points[i], m1, m2, fs, c, cube_edge);
                    let lim = limits[p];
                    let (clo, chi) = (lo.clamp(-lim, lim), hi.clamp(-lim, lim));
                    clipped += usize::from(clo != lo) + usize::from(chi != hi);
                    (clo as i16, chi as i16)
                })
                .collect();
            (row, clipped)
        });
        if limits.iter().any(|&l| l > i16::MAX as i32) {
            return Err(Error::LagOverflow(*limits.iter().max().unwrap_or(&0)));
        }
        let mut intervals = Vec::with_capacity(points.len() * pairs);
        let mut clipped = 0;
        for (row, n) in rows {
            intervals.extend(row);
            clipped += n;
        }
        let mut bounds = vec![(0, 0); pairs];
        for (k, &(lo, hi)) in intervals.iter().enumerate() {
            let b = &mut bounds[k % pairs];
            *b = if k < pairs { (lo as i32, hi as i32) } else { (b.0.min(lo as i32), b.1.max(hi as i32)) };
        }
        Ok(Self { pairs, points: points.len(), cube_edge, intervals, bounds, clipped })
    }

    pub fn pair_count(&self) -> usize {
        self.pairs
    }

    pub fn point_count(&self) -> usize {
        self.points
    }

    pub fn cube_edge(&self) -> f64 {
        self.cube_edge
    }

    pub fn interval(&self, pair: usize, point: usize) -> (i32, i32) {
        let (lo, hi) = self.intervals[point * self.pairs + pair];
        (lo as i32, hi as i32)
    }

    fn row(&self, point: usize) -> &[(i16, i16)] {
        &self.intervals[point * self.pairs..(point + 1) * self.pairs]
    }

    pub fn pair_bounds(&self) -> &[(i32, i32)] {
        &self.bounds
    }

    /// Interval endpoints that were clipped to the attainable lag range.
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    /// `Σ_x [(Σ_p (hi - lo + 1)) - 1]`.
    pub fn predicted_additions(&self) -> u64 {
        let terms: u64 = self.intervals.iter().map(|&(lo, hi)| (hi as i64 - lo as i64 + 1) as u64).sum();
        terms - self.points as u64
    }
}

/// Modified search: the grid point maximizing the sum of correlation values
/// over each pair's gradient-estimated lag interval.
pub fn msrp_localize(corr: &CorrelationSet, grid: &PointGrid, table: &MsrpTable, exec: Exec) -> Result<Estimate> {
    check_pairs(table.pair_count(), corr)?;
    corr.check_bounds(table.pair_bounds())?;
    let (phi, width, offset) = layout(corr);
    let best = exec::argmax(table.point_count(), exec, |i| interval_score(phi, width, offset, table.row(i)));
    Ok(Estimate {
        position: grid.points()[best.index],
        score: best.score,
        method: Method::Msrp,
        frame: 0,
        measured_additions: best.additions,
        element: best.index,
    })
}

/// A search method bundled with the tables it runs on.
pub trait Localizer: Send + Sync {
    fn method(&self) -> Method;

    fn localize(&self, corr: &CorrelationSet, exec: Exec) -> Result<Estimate>;

    /// Objective over every searchable element. For the refined search this
    /// is the volumetric stage's map.
    fn energy_map(&self, corr: &CorrelationSet, exec: Exec) -> Result<EnergyMap>;

    /// Additions per frame predicted from the tables alone.
    fn predicted_additions(&self) -> u64;

    /// Smallest and largest lag each pair may request.
    fn lag_bounds(&self) -> Vec<(i32, i32)>;
}

pub struct PointSearch {
    pub grid: PointGrid,
    pub table: PointLagTable,
}

impl PointSearch {
    pub fn new(grid: PointGrid, array: &MicArray, fs: f64, c: f64, exec: Exec) -> Result<Self> {
        let table = PointLagTable::build(grid.points(), array, fs, c, exec)?;
        Ok(Self { grid, table })
    }
}

impl Localizer for PointSearch {
    fn method(&self) -> Method {
        Method::Csrp
    }

    fn localize(&self, corr: &CorrelationSet, exec: Exec) -> Result<Estimate> {
        csrp_localize(corr, &self.grid, &self.table, exec)
    }

    fn energy_map(&self, corr: &CorrelationSet, exec: Exec) -> Result<EnergyMap> {
        check_pairs(self.table.pair_count(), corr)?;
        corr.check_bounds(self.table.pair_bounds())?;
        let (phi, width, offset) = layout(corr);
        let values = exec::map(self.grid.len(), exec, |i| point_score(phi, width, offset, self.table.row(i)).0);
        Ok(EnergyMap { method: Method::Csrp, centers: self.grid.points().to_vec(), values })
    }

    fn predicted_additions(&self) -> u64 {
        predict_ops_csrp(self.grid.len() as u64, self.table.pair_count())
    }

    fn lag_bounds(&self) -> Vec<(i32, i32)> {
        self.table.pair_bounds().to_vec()
    }
}

pub struct VolumeSearch {
    pub grid: VolumetricGrid,
    pub sets: VolumeLagSets,
}

impl VolumeSearch {
    pub fn new(grid: VolumetricGrid, array: &MicArray, fs: f64, c: f64, exec: Exec) -> Result<Self> {
        let sets = VolumeLagSets::from_geometry(&grid, array, fs, c, exec)?;
        Ok(Self { grid, sets })
    }

    fn map(&self, corr: &CorrelationSet, exec: Exec, method: Method) -> Result<EnergyMap> {
        check_pairs(self.sets.pair_count(), corr)?;
        corr.check_bounds(self.sets.pair_bounds())?;
        let (phi, width, offset) = layout(corr);
        let values = exec::map(self.grid.len(), exec, |v| volume_score(phi, width, offset, &self.sets, v).0);
        let centers = self.grid.volumes().iter().map(|v| v.center()).collect();
        Ok(EnergyMap { method, centers, values })
    }
}

impl Localizer for VolumeSearch {
    fn method(&self) -> Method {
        Method::Vsrp
    }

    fn localize(&self, corr: &CorrelationSet, exec: Exec) -> Result<Estimate> {
        vsrp_localize(corr, &self.sets, &self.grid, exec)
    }

    fn energy_map(&self, corr: &CorrelationSet, exec: Exec) -> Result<EnergyMap> {
        self.map(corr, exec, Method::Vsrp)
    }

    fn predicted_additions(&self) -> u64 {
        predict_ops_vsrp(&self.sets)
    }

    fn lag_bounds(&self) -> Vec<(i32, i32)> {
        self.sets.pair_bounds().to_vec()
    }
}

pub struct RefinedSearch {
    pub volumes: VolumeSearch,
    pub array: MicArray,
    pub fs: f64,
    pub c: f64,
    pub spacing: f64,
    pub boundary: RefineBoundary,
}

impl Localizer for RefinedSearch {
    fn method(&self) -> Method {
        Method::Rvsrp
    }

    fn localize(&self, corr: &CorrelationSet, exec: Exec) -> Result<Estimate> {
        let refine =
            Refinement { array: &self.array, fs: self.fs, c: self.c, spacing: self.spacing, boundary: self.boundary };
        rvsrp_localize(corr, &self.volumes.sets, &self.volumes.grid, &refine, exec)
    }

    fn energy_map(&self, corr: &CorrelationSet, exec: Exec) -> Result<EnergyMap> {
        self.volumes.map(corr, exec, Method::Rvsrp)
    }

    fn predicted_additions(&self) -> u64 {
        predict_ops_rvsrp(
            &self.volumes.sets,
            self.volumes.grid.edge(),
            self.spacing,
            self.volumes.grid.region().dimensions(),
            self.boundary,
        )
    }

    fn lag_bounds(&self) -> Vec<(i32, i32)> {
        // Refinement points lie inside the region, so the attainable range
        // bounds them too.
        (0..self.array.pair_count())
            .map(|p| {
                let lim = self.array.pair_lag_limit(p, self.fs, self.c);
                (-lim, lim)
            })
            .collect()
    }
}

pub struct ModifiedSearch {
    pub grid: PointGrid,
    pub table: MsrpTable,
}

impl ModifiedSearch {
    pub fn new(grid: PointGrid, array: &MicArray, fs: f64, c: f64, cube_edge: f64, exec: Exec) -> Result<Self> {
        let table = MsrpTable::build(grid.points(), array, fs, c, cube_edge, exec)?;
        Ok(Self { grid, table })
    }
}

impl Localizer for ModifiedSearch {
    fn method(&self) -> Method {
        Method::Msrp
    }

    fn localize(&self, corr: &CorrelationSet, exec: Exec) -> Result<Estimate> {
        msrp_localize(corr, &self.grid, &self.table, exec)
    }

    fn energy_map(&self, corr: &CorrelationSet, exec: Exec) -> Result<EnergyMap> {
        check_pairs(self.table.pair_count(), corr)?;
        corr.check_bounds(self.table.pair_bounds())?;
        let (phi, width, offset) = layout(corr);
        let values = exec::map(self.grid.len(), exec, |i| interval_score(phi, width, offset, self.table.row(i)).0);
        Ok(EnergyMap { method: Method::Msrp, centers: self.grid.points().to_vec(), values })
    }

    fn predicted_additions(&self) -> u64 {
        self.table.predicted_additions()
    }

    fn lag_bounds(&self) -> Vec<(i32, i32)> {
        self.table.pair_bounds().to_vec()
    }
}
