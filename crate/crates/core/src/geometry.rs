//! Microphone arrays, search regions, point grids and volumetric grids.
//!
//! Grids are anchored at the region origin. Along every axis with a
//! non-zero extent `E`, a point grid of spacing `g` holds `floor(E/g) + 1`
//! points, and a volumetric grid of edge `g_V` holds `floor(E/g_V)` volumes.
//! An axis with zero extent contributes a single point and a single (flat)
//! volume layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in meters.
pub type Point = [f64; 3];

/// Slack used when flooring ratios of lengths, so that `4.0 / 0.2` and
/// similar decimal quotients land on the intended integer.
const FLOOR_EPS: f64 = 1e-9;

pub(crate) fn floor_ratio(extent: f64, step: f64) -> usize {
    (extent / step + FLOOR_EPS).floor() as usize
}

#[inline]
pub fn distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Quantized time difference of arrival, in samples, of a source at `x`
/// for the microphone pair `(m1, m2)`.
///
/// Positive when `m2` is farther from the source than `m1`. Rounds half
/// away from zero, so swapping the microphones negates the result exactly.
#[inline]
pub fn tdoa_samples(x: &Point, m1: &Point, m2: &Point, fs: f64, c: f64) -> i32 {
    tdoa_from_distances(distance(m1, x), distance(m2, x), fs / c)
}

#[inline]
pub(crate) fn tdoa_from_distances(d1: f64, d2: f64, samples_per_meter: f64) -> i32 {
    ((d2 - d1) * samples_per_meter).round() as i32
}

/// A set of omnidirectional microphones and all of their distinct pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct MicArray {
    positions: Vec<Point>,
    pairs: Vec<(usize, usize)>,
}

impl MicArray {
    /// Builds an array, enumerating pairs `(i, j)` with `i < j` in
    /// lexicographic order.
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidArray(format!("need at least two microphones, got {}", positions.len())));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArray("non-finite microphone coordinate".into()));
        }
        let m = positions.len();
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                pairs.push((i, j));
            }
        }
        Ok(Self { positions, pairs })
    }

    /// `count` microphones evenly spaced on the segment from `start` to `end`.
    pub fn uniform_linear(count: usize, start: Point, end: Point) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidArray("a linear array needs two microphones".into()));
        }
        let positions = (0..count)
            .map(|k| {
                let t = k as f64 / (count - 1) as f64;
                [
                    start[0] + t * (end[0] - start[0]),
                    start[1] + t * (end[1] - start[1]),
                    start[2] + t * (end[2] - start[2]),
                ]
            })
            .collect();
        Self::new(positions)
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn mic_count(&self) -> usize {
        self.positions.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// The two microphone positions of pair `p`.
    pub fn pair(&self, p: usize) -> (&Point, &Point) {
        let (a, b) = self.pairs[p];
        (&self.positions[a], &self.positions[b])
    }

    pub fn baseline(&self, p: usize) -> f64 {
        let (a, b) = self.pair(p);
        distance(a, b)
    }

    pub fn max_baseline(&self) -> f64 {
        (0..self.pair_count()).map(|p| self.baseline(p)).fold(0.0, f64::max)
    }

    /// Largest TDoA magnitude, in samples, any source position can produce.
    pub fn max_lag(&self, fs: f64, c: f64) -> i32 {
        (self.max_baseline() * fs / c).round() as i32
    }

    /// Per-pair bound `round(baseline * fs / c)`.
    pub fn pair_lag_limit(&self, p: usize, fs: f64, c: f64) -> i32 {
        (self.baseline(p) * fs / c).round() as i32
    }

    /// All pair TDoAs for one point, using one distance per microphone.
    pub fn tdoas_into(&self, x: &Point, fs: f64, c: f64, dist: &mut Vec<f64>, out: &mut [i32]) {
        let k = fs / c;
        dist.clear();
        dist.extend(self.positions.iter().map(|m| distance(m, x)));
        for (slot, &(a, b)) in out.iter_mut().zip(&self.pairs) {
            *slot = tdoa_from_distances(dist[a], dist[b], k);
        }
    }
}

impl TryFrom<Vec<Point>> for MicArray {
    type Error = Error;

    fn try_from(positions: Vec<Point>) -> Result<Self> {
        Self::new(positions)
    }
}

impl From<MicArray> for Vec<Point> {
    fn from(array: MicArray) -> Self {
        array.positions
    }
}

/// An axis-aligned box to search, possibly flat along some axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub origin: Point,
    /// Length, width and height in meters.
    pub extents: [f64; 3],
}

impl SearchRegion {
    pub fn new(origin: Point, extents: [f64; 3]) -> Result<Self> {
        let region = Self { origin, extents };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        if self.origin.iter().any(|v| !v.is_finite()) || self.extents.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::InvalidRegion(format!("{self:?}")));
        }
        Ok(())
    }

    /// Axes with a non-zero extent.
    pub fn active_axes(&self) -> [bool; 3] {
        self.extents.map(|e| e > 0.0)
    }

    /// Number of non-degenerate axes.
    pub fn dimensions(&self) -> u32 {
        self.active_axes().iter().filter(|a| **a).count() as u32
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        (0..3).all(|k| x[k] >= self.origin[k] - tol && x[k] <= self.origin[k] + self.extents[k] + tol)
    }
}

/// Uniform lattice of candidate source positions.
///
/// Points are stored with the x index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid {
    region: SearchRegion,
    spacing: f64,
    counts: [usize; 3],
    points: Vec<Point>,
}

impl PointGrid {
    pub fn new(region: SearchRegion, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidSpacing(spacing));
        }
        region.validate()?;
        let counts = region.extents.map(|e| floor_ratio(e, spacing) + 1);
        Ok(Self::from_counts(region, spacing, counts))
    }

    /// A lattice with explicit per-axis counts; the region is only metadata.
    pub(crate) fn from_counts(region: SearchRegion, spacing: f64, counts: [usize; 3]) -> Self {
        let mut points = Vec::with_capacity(counts.iter().product());
        for iz in 0..counts[2] {
            for iy in 0..counts[1] {
                for ix in 0..counts[0] {
                    points.push([
                        region.origin[0] + ix as f64 * spacing,
                        region.origin[1] + iy as f64 * spacing,
                        region.origin[2] + iz as f64 * spacing,
                    ]);
                }
            }
        }
        Self { region, spacing, counts, points }
    }

    pub fn region(&self) -> &SearchRegion {
        &self.region
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.counts[0] * (iy + self.counts[1] * iz)
    }
}

/// Number of points of a grid with spacing `spacing` over `region`.
pub fn point_count(region: &SearchRegion, spacing: f64) -> u64 {
    region.extents.iter().map(|&e| floor_ratio(e, spacing) as u64 + 1).product()
}

/// One cell of a volumetric grid: the half-open box `[lo, hi)` on every
/// active axis and the indices of the point-grid points it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub lo: Point,
    pub hi: Point,
    pub members: Vec<usize>,
}

impl Volume {
    pub fn center(&self) -> Point {
        [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1]), 0.5 * (self.lo[2] + self.hi[2])]
    }

    /// Closed-box containment, used to check refinement results.
    pub fn contains_closed(&self, x: &Point, tol: f64) -> bool {
        (0..3).all(|k| x[k] >= self.lo[k] - tol && x[k] <= self.hi[k] + tol)
    }
}

/// A tiling of the search region into disjoint boxes of edge `g_V`, each
/// owning the points of an internal grid of spacing `g_V / alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricGrid {
    region: SearchRegion,
    edge: f64,
    alpha: usize,
    counts: [usize; 3],
    points: PointGrid,
    volumes: Vec<Volume>,
}

impl VolumetricGrid {
    pub fn new(region: SearchRegion, edge: f64, alpha: usize) -> Result<Self> {
        if alpha < 2 {
            return Err(Error::InvalidAlpha(alpha));
        }
        if !(edge > 0.0 && edge.is_finite()) {
            return Err(Error::InvalidSpacing(edge));
        }
        region.validate()?;
        let active = region.active_axes();
        let counts: [usize; 3] =
            std::array::from_fn(|k| if active[k] { floor_ratio(region.extents[k], edge) } else { 1 });
        if counts.contains(&0) {
            return Err(Error::InvalidRegion(format!(
                "extents {:?} are smaller than the volume edge {edge}",
                region.extents
            )));
        }
        let points = PointGrid::new(region, edge / alpha as f64)?;
        // Point index ranges per axis: volume v owns points [v*alpha, (v+1)*alpha),
        // which is the half-open box [lo, lo + edge).
        let span: [usize; 3] = std::array::from_fn(|k| if active[k] { alpha } else { 1 });
        let mut volumes = Vec::with_capacity(counts.iter().product());
        for vz in 0..counts[2] {
            for vy in 0..counts[1] {
                for vx in 0..counts[0] {
                    let v = [vx, vy, vz];
                    let lo: Point = std::array::from_fn(|k| region.origin[k] + v[k] as f64 * edge);
                    let hi: Point = std::array::from_fn(|k| if active[k] { lo[k] + edge } else { lo[k] });
                    let mut members = Vec::with_capacity(span.iter().product());
                    for iz in v[2] * span[2]..(v[2] + 1) * span[2] {
                        for iy in v[1] * span[1]..(v[1] + 1) * span[1] {
                            for ix in v[0] * span[0]..(v[0] + 1) * span[0] {
                                members.push(points.index(ix, iy, iz));
                            }
                        }
                    }
                    volumes.push(Volume { lo, hi, members });
                }
            }
        }
        Ok(Self { region, edge, alpha, counts, points, volumes })
    }

    /// One volume per grid point: the box `[x, x + spacing)` on every active
    /// axis. Volume `i` owns exactly point `i`, so volumetric search over
    /// this grid is the point search in disguise.
    pub fn single_point_volumes(region: SearchRegion, spacing: f64) -> Result<Self> {
        let points = PointGrid::new(region, spacing)?;
        let active = region.active_axes();
        let volumes = points
            .points()
            .iter()
            .enumerate()
            .map(|(i, x)| Volume {
                lo: *x,
                hi: std::array::from_fn(|k| if active[k] { x[k] + spacing } else { x[k] }),
                members: vec![i],
            })
            .collect();
        Ok(Self { region, edge: spacing, alpha: 1, counts: points.counts(), points, volumes })
    }

    pub fn region(&self) -> &SearchRegion {
        &self.region
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn points(&self) -> &PointGrid {
        &self.points
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    /// Member points of a full volume: `alpha^d`.
    pub fn points_per_volume(&self) -> usize {
        self.alpha.pow(self.region.dimensions())
    }
}

/// Number of volumes of edge `edge` tiling `region`.
pub fn volume_count(region: &SearchRegion, edge: f64) -> u64 {
    region.extents.iter().map(|&e| if e > 0.0 { floor_ratio(e, edge) as u64 } else { 1 }).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 48_000.0;
    const C: f64 = 340.0;

    fn plane(l: f64, w: f64) -> SearchRegion {
        SearchRegion::new([0.0; 3], [l, w, 0.0]).unwrap()
    }

    #[test]
    fn tdoa_examples() {
        let m1 = [-2.0, 0.0, 0.0];
        let m2 = [2.0, 0.0, 0.0];
        assert_eq!(tdoa_samples(&[0.0, 2.0, 0.0], &m1, &m2, FS, C), 0);
        assert_eq!(tdoa_samples(&[-0.5, 1.5, -0.5], &m1, &m2, FS, C), 110);
        assert_eq!(tdoa_samples(&[0.5, 1.5, 0.5], &m1, &m2, FS, C), -110);
    }

    #[test]
    fn pair_enumeration() {
        for m in 2..=32usize {
            let array = MicArray::new((0..m).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
            assert_eq!(array.pair_count(), m * (m - 1) / 2);
            let mut seen = std::collections::HashSet::new();
            for &(a, b) in array.pairs() {
                assert!(a < b);
                assert!(seen.insert((a, b)));
            }
        }
    }

    #[test]
    fn array_rejects_bad_input() {
        assert!(MicArray::new(vec![[0.0; 3]]).is_err());
        assert!(MicArray::new(vec![[0.0; 3], [f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn point_grid_counts() {
        assert_eq!(PointGrid::new(plane(3.5, 4.0), 0.01).unwrap().len(), 140_751);
        let g = PointGrid::new(plane(3.5, 4.0), 0.20).unwrap();
        assert_eq!(g.counts(), [18, 21, 1]);
        assert_eq!(g.len(), 378);
        let single = PointGrid::new(SearchRegion::new([1.0, 2.0, 3.0], [0.0; 3]).unwrap(), 0.1).unwrap();
        assert_eq!(single.points(), &[[1.0, 2.0, 3.0]]);
        assert!(PointGrid::new(plane(1.0, 1.0), 0.0).is_err());
        assert!(PointGrid::new(plane(1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn adjacent_points_are_one_spacing_apart() {
        let g = PointGrid::new(SearchRegion::new([0.3, -0.2, 1.0], [0.5, 0.4, 0.3]).unwrap(), 0.1).unwrap();
        let [nx, ny, nz] = g.counts();
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx - 1 {
                    let d = distance(&g.points()[g.index(ix, iy, iz)], &g.points()[g.index(ix + 1, iy, iz)]);
                    assert!((d - 0.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn volumetric_grid_examples() {
        let v = VolumetricGrid::new(plane(3.5, 4.0), 0.10, 4).unwrap();
        assert_eq!(v.len(), 1400);
        assert!(v.volumes().iter().all(|vol| vol.members.len() == 16));

        let v = VolumetricGrid::new(SearchRegion::new([0.0; 3], [1.0, 1.0, 0.0]).unwrap(), 1.0, 2).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.volumes()[0].members.len(), 4);

        assert!(matches!(VolumetricGrid::new(plane(1.0, 1.0), 0.5, 1), Err(Error::InvalidAlpha(1))));
    }

    #[test]
    fn volumetric_grid_3d_room() {
        let region = SearchRegion::new([0.0; 3], [4.0, 6.0, 3.0]).unwrap();
        assert_eq!(volume_count(&region, 0.10), 72_000);
        // Check a small corner of the full grid to keep the test light.
        let small = SearchRegion::new([0.0; 3], [0.4, 0.3, 0.2]).unwrap();
        let v = VolumetricGrid::new(small, 0.10, 4).unwrap();
        assert_eq!(v.len(), 24);
        assert!(v.volumes().iter().all(|vol| vol.members.len() == 64));
    }

    #[test]
    fn members_lie_in_half_open_boxes() {
        let region = SearchRegion::new([0.1, 0.2, 0.0], [0.6, 0.45, 0.3]).unwrap();
        let v = VolumetricGrid::new(region, 0.15, 3).unwrap();
        let pts = v.points().points();
        let tol = 1e-9;
        for vol in v.volumes() {
            for &i in &vol.members {
                let x = pts[i];
                for k in 0..3 {
                    assert!(x[k] >= vol.lo[k] - tol);
                    assert!(x[k] < vol.hi[k] - tol);
                }
            }
        }
    }

    #[test]
    fn tiling_is_exact() {
        let region = SearchRegion::new([0.0; 3], [0.6, 0.4, 0.0]).unwrap();
        let v = VolumetricGrid::new(region, 0.2, 4).unwrap();
        let mut owners = vec![0usize; v.points().len()];
        for vol in v.volumes() {
            for &i in &vol.members {
                owners[i] += 1;
            }
        }
        let tiled_hi = [0.6, 0.4];
        for (i, x) in v.points().points().iter().enumerate() {
            let inside = x[0] < tiled_hi[0] - 1e-9 && x[1] < tiled_hi[1] - 1e-9;
            assert_eq!(owners[i], usize::from(inside), "point {x:?}");
        }
    }

    #[test]
    fn partial_strips_are_dropped() {
        let region = SearchRegion::new([0.0; 3], [0.35, 0.2, 0.0]).unwrap();
        let v = VolumetricGrid::new(region, 0.1, 2).unwrap();
        assert_eq!(v.counts(), [3, 2, 1]);
        assert_eq!(v.len() as u64, volume_count(&region, 0.1));
    }

    #[test]
    fn single_point_volumes_mirror_points() {
        let v = VolumetricGrid::single_point_volumes(plane(0.3, 0.2), 0.1).unwrap();
        assert_eq!(v.len(), v.points().len());
        for (i, vol) in v.volumes().iter().enumerate() {
            assert_eq!(vol.members, vec![i]);
        }
    }
}
