//! Precomputed TDoA look-up tables and analytic operation counts.
//!
//! Lags are stored as `i16`; at 48 kHz that covers baselines beyond 200 m.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::geometry::{point_count, MicArray, Point, PointGrid, SearchRegion, VolumetricGrid};

fn pair_bounds<'a>(pairs: usize, rows: impl Iterator<Item = &'a [i16]>) -> Vec<(i32, i32)> {
    let mut bounds = vec![(0, 0); pairs];
    let mut first = true;
    for row in rows {
        for (b, &lag) in bounds.iter_mut().zip(row) {
            let lag = lag as i32;
            *b = if first { (lag, lag) } else { (b.0.min(lag), b.1.max(lag)) };
        }
        first = false;
    }
    bounds
}

fn compact(lag: i32) -> Result<i16> {
    i16::try_from(lag).map_err(|_| Error::LagOverflow(lag))
}

/// `ζ_p(x)` for every grid point and pair, point-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLagTable {
    pairs: usize,
    points: usize,
    lags: Vec<i16>,
    bounds: Vec<(i32, i32)>,
}

impl PointLagTable {
    pub fn build(points: &[Point], array: &MicArray, fs: f64, c: f64, exec: Exec) -> Result<Self> {
        let pairs = array.pair_count();
        let rows = exec::map(points.len(), exec, |i| {
            let mut dist = Vec::with_capacity(array.mic_count());
            let mut row = vec![0i32; pairs];
            array.tdoas_into(&points[i], fs, c, &mut dist, &mut row);
            row
        });
        let mut lags = Vec::with_capacity(points.len() * pairs);
        for row in rows {
            for lag in row {
                lags.push(compact(lag)?);
            }
        }
        let bounds = pair_bounds(pairs, lags.chunks_exact(pairs.max(1)));
        Ok(Self { pairs, points: points.len(), lags, bounds })
    }

    pub fn pair_count(&self) -> usize {
        self.pairs
    }

    pub fn point_count(&self) -> usize {
        self.points
    }

    pub fn get(&self, pair: usize, point: usize) -> i32 {
        self.lags[point * self.pairs + pair] as i32
    }

    /// All pair lags of one point.
    pub fn row(&self, point: usize) -> &[i16] {
        &self.lags[point * self.pairs..(point + 1) * self.pairs]
    }

    /// Smallest and largest lag per pair.
    pub fn pair_bounds(&self) -> &[(i32, i32)] {
        &self.bounds
    }

    pub fn memory_bytes(&self) -> usize {
        self.lags.len() * std::mem::size_of::<i16>()
    }
}

/// `build_point_table` over a grid.
pub fn build_point_table(grid: &PointGrid, array: &MicArray, fs: f64, c: f64) -> Result<PointLagTable> {
    PointLagTable::build(grid.points(), array, fs, c, Exec::default())
}

/// The deduplicated lag sets `Z_{p,V}` of every volume, stored contiguously.
///
/// Entry `(v, p)` lives at `v * pairs + p`; each set is sorted ascending so
/// its bounds are its first and last element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeLagSets {
    pairs: usize,
    volumes: usize,
    points_per_volume: usize,
    offsets: Vec<u32>,
    lags: Vec<i16>,
    bounds: Vec<(i32, i32)>,
}

impl VolumeLagSets {
    /// Collects the sets from a table built over `vgrid.points()`.
    pub fn from_table(vgrid: &VolumetricGrid, table: &PointLagTable, exec: Exec) -> Result<Self> {
        let pairs = table.pair_count();
        let per_volume = exec::map(vgrid.len(), exec, |v| {
            let members = &vgrid.volumes()[v].members;
            let mut lags = vec![0i16; members.len() * pairs];
            for (k, &i) in members.iter().enumerate() {
                for (p, &lag) in table.row(i).iter().enumerate() {
                    lags[p * members.len() + k] = lag;
                }
            }
            VolumeEntry::dedup(lags, members.len(), pairs)
        });
        Ok(Self::assemble(pairs, vgrid.points_per_volume(), per_volume))
    }

    /// Same sets, computed volume by volume from geometry so the full
    /// point table never has to be held in memory.
    pub fn from_geometry(vgrid: &VolumetricGrid, array: &MicArray, fs: f64, c: f64, exec: Exec) -> Result<Self> {
        let pairs = array.pair_count();
        let points = vgrid.points().points();
        let per_volume = exec::map(vgrid.len(), exec, |v| -> Result<VolumeEntry> {
            let members = &vgrid.volumes()[v].members;
            let mut dist = Vec::with_capacity(array.mic_count());
            let mut row = vec![0i32; pairs];
            let mut lags = vec![0i16; members.len() * pairs];
            for (k, &i) in members.iter().enumerate() {
                array.tdoas_into(&points[i], fs, c, &mut dist, &mut row);
                for (p, &lag) in row.iter().enumerate() {
                    lags[p * members.len() + k] = compact(lag)?;
                }
            }
            Ok(VolumeEntry::dedup(lags, members.len(), pairs))
        });
        let per_volume = per_volume.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(pairs, vgrid.points_per_volume(), per_volume))
    }

    /// Builds sets from explicit per-volume, per-pair lists, deduplicating
    /// and sorting each list.
    pub fn from_sets(pairs: usize, points_per_volume: usize, sets: Vec<Vec<Vec<i16>>>) -> Self {
        let per_volume = sets
            .into_iter()
            .map(|vol| {
                assert_eq!(vol.len(), pairs, "one list per pair");
                let mut entry = VolumeEntry { lags: Vec::new(), counts: Vec::with_capacity(pairs) };
                for mut s in vol {
                    s.sort_unstable();
                    s.dedup();
                    entry.counts.push(s.len() as u32);
                    entry.lags.extend(s);
                }
                entry
            })
            .collect();
        Self::assemble(pairs, points_per_volume, per_volume)
    }

    fn assemble(pairs: usize, points_per_volume: usize, per_volume: Vec<VolumeEntry>) -> Self {
        let volumes = per_volume.len();
        let total: usize = per_volume.iter().map(|e| e.lags.len()).sum();
        let mut offsets = Vec::with_capacity(volumes * pairs + 1);
        let mut lags = Vec::with_capacity(total);
        offsets.push(0u32);
        for entry in per_volume {
            lags.extend_from_slice(&entry.lags);
            for n in entry.counts {
                offsets.push(offsets[offsets.len() - 1] + n);
            }
        }
        let mut bounds = vec![(0, 0); pairs];
        for v in 0..volumes {
            for (p, b) in bounds.iter_mut().enumerate() {
                let e = v * pairs + p;
                let set = &lags[offsets[e] as usize..offsets[e + 1] as usize];
                if let (Some(&lo), Some(&hi)) = (set.first(), set.last()) {
                    *b = if v == 0 { (lo as i32, hi as i32) } else { (b.0.min(lo as i32), b.1.max(hi as i32)) };
                }
            }
        }
        Self { pairs, volumes, points_per_volume, offsets, lags, bounds }
    }

    pub fn pair_count(&self) -> usize {
        self.pairs
    }

    pub fn volume_count(&self) -> usize {
        self.volumes
    }

    pub fn points_per_volume(&self) -> usize {
        self.points_per_volume
    }

    /// `Z_{p,V}` in ascending order.
    pub fn set(&self, volume: usize, pair: usize) -> &[i16] {
        let e = volume * self.pairs + pair;
        &self.lags[self.offsets[e] as usize..self.offsets[e + 1] as usize]
    }

    /// All sets of one volume, concatenated pair after pair.
    pub(crate) fn volume_lags(&self, volume: usize) -> &[i16] {
        let lo = self.offsets[volume * self.pairs] as usize;
        let hi = self.offsets[(volume + 1) * self.pairs] as usize;
        &self.lags[lo..hi]
    }

    pub(crate) fn volume_offsets(&self, volume: usize) -> &[u32] {
        &self.offsets[volume * self.pairs..=(volume + 1) * self.pairs]
    }

    pub fn cardinality(&self, volume: usize, pair: usize) -> usize {
        let e = volume * self.pairs + pair;
        (self.offsets[e + 1] - self.offsets[e]) as usize
    }

    /// `(min Z_{p,V}, max Z_{p,V})`.
    pub fn bounds(&self, volume: usize, pair: usize) -> (i32, i32) {
        let s = self.set(volume, pair);
        (s[0] as i32, s[s.len() - 1] as i32)
    }

    /// Sum of all cardinalities.
    pub fn total_cardinality(&self) -> u64 {
        self.lags.len() as u64
    }

    /// Smallest and largest lag per pair over all volumes.
    pub fn pair_bounds(&self) -> &[(i32, i32)] {
        &self.bounds
    }

    pub fn memory_bytes(&self) -> usize {
        self.lags.len() * std::mem::size_of::<i16>() + self.offsets.len() * std::mem::size_of::<u32>()
    }
}

/// Deduplicated sets of one volume, concatenated pair after pair.
struct VolumeEntry {
    lags: Vec<i16>,
    counts: Vec<u32>,
}

impl VolumeEntry {
    /// `lags` holds `members` raw lags per pair, pair-major.
    fn dedup(mut lags: Vec<i16>, members: usize, pairs: usize) -> Self {
        let mut counts = Vec::with_capacity(pairs);
        let mut write = 0;
        for p in 0..pairs {
            let chunk = &mut lags[p * members..(p + 1) * members];
            chunk.sort_unstable();
            let mut n = 0;
            for k in 0..chunk.len() {
                if k == 0 || chunk[k] != chunk[k - 1] {
                    chunk[n] = chunk[k];
                    n += 1;
                }
            }
            lags.copy_within(p * members..p * members + n, write);
            write += n;
            counts.push(n as u32);
        }
        lags.truncate(write);
        Self { lags, counts }
    }
}

/// `build_volume_lag_sets` over a table built on the grid's points.
pub fn build_volume_lag_sets(vgrid: &VolumetricGrid, table: &PointLagTable) -> Result<VolumeLagSets> {
    VolumeLagSets::from_table(vgrid, table, Exec::default())
}

/// Average cardinality `⟨|Z|⟩` over all volumes and pairs.
pub fn mean_cardinality(sets: &VolumeLagSets) -> Result<f64> {
    let entries = sets.volume_count() * sets.pair_count();
    if entries == 0 {
        return Err(Error::Empty("volume lag sets"));
    }
    Ok(sets.total_cardinality() as f64 / entries as f64)
}

/// Additions per frame for the point search: `N_g (P - 1)`.
pub fn predict_ops_csrp(points: u64, pairs: usize) -> u64 {
    points * (pairs as u64 - 1)
}

/// Additions per frame for the volumetric search: `Σ_V [(Σ_p |Z_{p,V}|) - 1]`.
pub fn predict_ops_vsrp(sets: &VolumeLagSets) -> u64 {
    sets.total_cardinality() - sets.volume_count() as u64
}

/// Whether the refinement grid includes the far faces of the winning volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineBoundary {
    /// `floor(g_V / spacing) + 1` points per active axis.
    #[default]
    Closed,
    /// `floor(g_V / spacing)` points per active axis.
    Open,
}

/// Points of the refinement grid spanning one volume of edge `edge`.
pub fn refine_point_count(edge: f64, spacing: f64, dimensions: u32, boundary: RefineBoundary) -> u64 {
    let per_axis = crate::geometry::floor_ratio(edge, spacing) as u64
        + match boundary {
            RefineBoundary::Closed => 1,
            RefineBoundary::Open => 0,
        };
    per_axis.max(1).pow(dimensions)
}

/// Additions per frame for the refined search: the volumetric pass plus a
/// point search over the winning volume at `refine_spacing`.
pub fn predict_ops_rvsrp(
    sets: &VolumeLagSets,
    volume_edge: f64,
    refine_spacing: f64,
    dimensions: u32,
    boundary: RefineBoundary,
) -> u64 {
    let refine = refine_point_count(volume_edge, refine_spacing, dimensions, boundary);
    predict_ops_vsrp(sets) + predict_ops_csrp(refine, sets.pair_count())
}

/// Grid sizes, cardinality statistics and predicted per-frame additions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub points: u64,
    pub volumes: u64,
    pub pairs: usize,
    pub alpha: usize,
    pub dimensions: u32,
    pub mean_cardinality: f64,
    pub max_cardinality: usize,
    /// Point search over the volumetric grid's internal points.
    pub predicted_csrp: u64,
    pub predicted_vsrp: u64,
    pub predicted_rvsrp: Option<u64>,
    pub table_bytes: usize,
}

impl ComplexityReport {
    pub fn new(vgrid: &VolumetricGrid, sets: &VolumeLagSets, refine: Option<(f64, RefineBoundary)>) -> Result<Self> {
        let dimensions = vgrid.region().dimensions();
        let max_cardinality = (0..sets.volume_count())
            .flat_map(|v| (0..sets.pair_count()).map(move |p| (v, p)))
            .map(|(v, p)| sets.cardinality(v, p))
            .max()
            .unwrap_or(0);
        Ok(Self {
            points: vgrid.points().len() as u64,
            volumes: vgrid.len() as u64,
            pairs: sets.pair_count(),
            alpha: vgrid.alpha(),
            dimensions,
            mean_cardinality: mean_cardinality(sets)?,
            max_cardinality,
            predicted_csrp: predict_ops_csrp(vgrid.points().len() as u64, sets.pair_count()),
            predicted_vsrp: predict_ops_vsrp(sets),
            predicted_rvsrp: refine.map(|(spacing, b)| predict_ops_rvsrp(sets, vgrid.edge(), spacing, dimensions, b)),
            table_bytes: sets.memory_bytes(),
        })
    }
}

/// Predicted point-search additions for a region without building the grid.
pub fn predict_ops_csrp_region(region: &SearchRegion, spacing: f64, pairs: usize) -> u64 {
    predict_ops_csrp(point_count(region, spacing), pairs)
}

/// Identifies a table configuration for the on-disk cache.
#[derive(Debug, Clone, Serialize)]
pub struct CacheKey<'a> {
    pub mics: &'a [Point],
    pub region: &'a SearchRegion,
    pub edge: f64,
    pub alpha: usize,
    pub fs: f64,
    pub c: f64,
}

impl CacheKey<'_> {
    /// Hex SHA-256 of the bincode encoding of the key.
    pub fn digest(&self) -> String {
        let bytes = bincode::serialize(self).expect("cache key serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    key: String,
    sets: VolumeLagSets,
}

/// Writes lag sets to `dir/<digest>.bin`, returning the path.
pub fn store_cached(dir: &Path, key: &CacheKey<'_>, sets: &VolumeLagSets) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let digest = key.digest();
    let path = dir.join(format!("{digest}.bin"));
    let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    bincode::serialize_into(file, &CacheFile { key: digest, sets: sets.clone() })
        .map_err(|e| Error::Cache(e.to_string()))?;
    Ok(path)
}

/// Loads lag sets for `key` if a matching cache file exists.
pub fn load_cached(dir: &Path, key: &CacheKey<'_>) -> Result<Option<VolumeLagSets>> {
    let digest = key.digest();
    let path = dir.join(format!("{digest}.bin"));
    if !path.exists() {
        return Ok(None);
    }
    let file = std::io::BufReader::new(std::fs::File::open(&path)?);
    let cached: CacheFile = bincode::deserialize_from(file).map_err(|e| Error::Cache(e.to_string()))?;
    if cached.key != digest {
        return Err(Error::Cache(format!("{} holds a different key", path.display())));
    }
    Ok(Some(cached.sets))
}
