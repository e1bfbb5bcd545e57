//! Region bookkeeping for the staged estimator.
//!
//! A [`RegionPartition`] is a set of active cells of the axis-aligned grid of
//! width `w` anchored at the origin. Cell `i` along an axis is the half-open
//! interval `[i·w, (i+1)·w)`; the last cell along each axis is closed at 1 so
//! the grid covers `[0,1]^d` exactly. A [`TreeRegion`] plays the same role for
//! binary partitions: a set of active nodes at one level of a fixed tree.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::learners::{BaseSpec, BinaryPartition};
use crate::points::Rows;

/// Cell coordinates: grid indices per axis, or `[node]` for tree levels.
pub type CellId = SmallVec<[u32; 4]>;

const GRID_EPS: f64 = 1e-9;

fn cells_per_axis(width: f64) -> u32 {
    ((1.0 / width) - GRID_EPS).ceil().max(1.0) as u32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    dim: usize,
    cell_width: f64,
    active: BTreeSet<CellId>,
}

/// Grid of width `h0` with every cell active.
pub fn initial_partition(d: usize, h0: f64) -> Result<RegionPartition> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    if !(h0 > 0.0 && h0 <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "initial region width must lie in (0, 1], got {h0}"
        )));
    }
    let k = cells_per_axis(h0);
    let total = (k as u64).checked_pow(d as u32).unwrap_or(u64::MAX);
    if total > 50_000_000 {
        return Err(Error::InvalidParameter(format!(
            "initial grid would have {total} cells"
        )));
    }
    let mut active = BTreeSet::new();
    let mut idx: CellId = SmallVec::from_elem(0, d);
    loop {
        active.insert(idx.clone());
        let mut axis = 0;
        loop {
            if axis == d {
                return Ok(RegionPartition {
                    dim: d,
                    cell_width: h0,
                    active,
                });
            }
            idx[axis] += 1;
            if idx[axis] < k {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

impl RegionPartition {
    /// Partition with an explicit set of active cells.
    pub fn with_cells(d: usize, cell_width: f64, cells: impl IntoIterator<Item = CellId>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(d));
        }
        if !(cell_width > 0.0 && cell_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cell width must be positive, got {cell_width}"
            )));
        }
        let k = cells_per_axis(cell_width);
        let active: BTreeSet<CellId> = cells.into_iter().collect();
        if let Some(bad) = active.iter().find(|c| c.len() != d || c.iter().any(|&i| i >= k)) {
            return Err(Error::InvalidInput(format!(
                "cell {bad:?} is not a grid cell of width {cell_width} in dimension {d}"
            )));
        }
        Ok(Self {
            dim: d,
            cell_width,
            active,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn cells(&self) -> &BTreeSet<CellId> {
        &self.active
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Grid cell containing `x` (whether active or not).
    #[inline]
    pub fn cell_of(&self, x: &[f64]) -> CellId {
        let k = cells_per_axis(self.cell_width);
        let w = self.cell_width;
        x.iter()
            .map(|&v| {
                let mut i = ((v / w).floor().max(0.0) as u32).min(k - 1);
                // agree with the products used by `cell_bounds` at boundaries
                if i > 0 && v < i as f64 * w {
                    i -= 1;
                } else if i + 1 < k && v >= (i + 1) as f64 * w {
                    i += 1;
                }
                i
            })
            .collect()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.active.contains(&self.cell_of(x))
    }

    pub fn membership_mask(&self, xs: &Rows<'_>) -> Vec<bool> {
        xs.iter().map(|x| self.contains(x)).collect()
    }

    /// Nominal bounds `[lo, hi)` of a cell, truncated to the unit cube.
    pub fn cell_bounds(&self, cell: &CellId) -> (Vec<f64>, Vec<f64>) {
        let w = self.cell_width;
        let lo = cell.iter().map(|&i| i as f64 * w).collect();
        let hi = cell.iter().map(|&i| ((i + 1) as f64 * w).min(1.0)).collect();
        (lo, hi)
    }

    pub fn cell_volume(&self, cell: &CellId) -> f64 {
        let (lo, hi) = self.cell_bounds(cell);
        lo.iter().zip(&hi).map(|(a, b)| b - a).product()
    }

    /// Re-grids the active set at width `new_width ≤ cell_width`.
    ///
    /// The result holds every `new_width` cell that meets an active cell. When
    /// the new width does not divide the old one this is a superset of the
    /// original point set, at most one new cell wider along each face.
    pub fn refine(&self, new_width: f64) -> Result<RegionPartition> {
        if !(new_width > 0.0) || new_width > self.cell_width * (1.0 + 1e-12) {
            return Err(Error::InvalidRefinement {
                current: self.cell_width,
                requested: new_width,
            });
        }
        let k_new = cells_per_axis(new_width);
        let mut active = BTreeSet::new();
        for cell in &self.active {
            let (lo, hi) = self.cell_bounds(cell);
            let ranges: Vec<(u32, u32)> = lo
                .iter()
                .zip(&hi)
                .map(|(&a, &b)| {
                    let first = ((a / new_width) + GRID_EPS).floor() as u32;
                    let last = (((b / new_width) - GRID_EPS).ceil() as u32).max(first + 1) - 1;
                    (first.min(k_new - 1), last.min(k_new - 1))
                })
                .collect();
            let mut idx: CellId = ranges.iter().map(|r| r.0).collect();
            'outer: loop {
                active.insert(idx.clone());
                for (axis, &(first, last)) in ranges.iter().enumerate() {
                    if idx[axis] < last {
                        idx[axis] += 1;
                        continue 'outer;
                    }
                    idx[axis] = first;
                }
                break;
            }
        }
        Ok(RegionPartition {
            dim: self.dim,
            cell_width: new_width,
            active,
        })
    }

    pub fn retain(&self, keep: impl Fn(&CellId) -> bool) -> RegionPartition {
        RegionPartition {
            dim: self.dim,
            cell_width: self.cell_width,
            active: self.active.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }
}

/// Active nodes at one level of a fixed binary partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRegion {
    tree: Arc<BinaryPartition>,
    level: u32,
    active: BTreeSet<u32>,
}

impl TreeRegion {
    /// All nodes of `level` active.
    pub fn full(tree: Arc<BinaryPartition>, level: u32) -> Result<Self> {
        if level > tree.depth() {
            return Err(Error::InvalidParameter(format!(
                "level {level} deeper than region tree depth {}",
                tree.depth()
            )));
        }
        Ok(Self {
            active: (0..1u32 << level).collect(),
            tree,
            level,
        })
    }

    pub fn tree(&self) -> &Arc<BinaryPartition> {
        &self.tree
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn nodes(&self) -> &BTreeSet<u32> {
        &self.active
    }

    #[inline]
    pub fn node_of(&self, x: &[f64]) -> u32 {
        self.tree.node_at_level(x, self.level) as u32
    }

    /// Descendants at `level` of the active nodes.
    pub fn refine(&self, level: u32) -> Result<TreeRegion> {
        if level < self.level || level > self.tree.depth() {
            return Err(Error::InvalidParameter(format!(
                "cannot refine level {} to level {level} (tree depth {})",
                self.level,
                self.tree.depth()
            )));
        }
        let shift = level - self.level;
        let active = self
            .active
            .iter()
            .flat_map(|&n| (n << shift)..((n + 1) << shift))
            .collect();
        Ok(TreeRegion {
            tree: self.tree.clone(),
            level,
            active,
        })
    }
}

/// Either region family, with a common cell interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Region {
    Grid(RegionPartition),
    Tree(TreeRegion),
}

impl Region {
    #[inline]
    pub fn cell_of(&self, x: &[f64]) -> CellId {
        match self {
            Region::Grid(g) => g.cell_of(x),
            Region::Tree(t) => smallvec::smallvec![t.node_of(x)],
        }
    }

    pub fn has_cell(&self, cell: &CellId) -> bool {
        match self {
            Region::Grid(g) => g.active.contains(cell),
            Region::Tree(t) => cell.len() == 1 && t.active.contains(&cell[0]),
        }
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.has_cell(&self.cell_of(x))
    }

    pub fn cells(&self) -> Vec<CellId> {
        match self {
            Region::Grid(g) => g.active.iter().cloned().collect(),
            Region::Tree(t) => t.active.iter().map(|&n| smallvec::smallvec![n]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Region::Grid(g) => g.active.len(),
            Region::Tree(t) => t.active.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn retain(&self, keep: impl Fn(&CellId) -> bool) -> Region {
        match self {
            Region::Grid(g) => Region::Grid(g.retain(keep)),
            Region::Tree(t) => Region::Tree(TreeRegion {
                tree: t.tree.clone(),
                level: t.level,
                active: t
                    .active
                    .iter()
                    .copied()
                    .filter(|&n| keep(&smallvec::smallvec![n]))
                    .collect(),
            }),
        }
    }

    /// Refines to the resolution of `spec`, never coarsening: a grid keeps its
    /// width when `spec` is wider, a tree region keeps its level when `spec`
    /// is shallower.
    pub fn refine_to(&self, spec: &BaseSpec) -> Result<Region> {
        match (self, spec) {
            (Region::Grid(g), BaseSpec::Histogram { bin_width }) => {
                Ok(Region::Grid(g.refine(bin_width.min(g.cell_width))?))
            }
            (Region::Tree(t), BaseSpec::Binary { depth, .. }) => {
                let level = (*depth).clamp(t.level, t.tree.depth());
                Ok(Region::Tree(t.refine(level)?))
            }
            _ => Err(Error::InvalidParameter(
                "region family does not match the base learner family".into(),
            )),
        }
    }

    /// Describes a cell as `(lo, hi)` bounds.
    pub fn cell_bounds(&self, cell: &CellId) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Grid(g) => g.cell_bounds(cell),
            Region::Tree(t) => t.tree.node_box((1usize << t.level) - 1 + cell[0] as usize),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{sample_binary_partition, SplitRule};
    use crate::random::RngStream;
    use ndarray::Array2;
    use rand::Rng;

    fn ids(v: &[&[u32]]) -> BTreeSet<CellId> {
        v.iter().map(|c| c.iter().copied().collect()).collect()
    }

    #[test]
    fn initial_partition_examples() {
        let p = initial_partition(1, 0.5).unwrap();
        assert_eq!(p.cells(), &ids(&[&[0], &[1]]));
        assert_eq!(p.cell_bounds(&smallvec::smallvec![1]), (vec![0.5], vec![1.0]));

        assert_eq!(initial_partition(1, 0.2).unwrap().cells().len(), 5);

        let p = initial_partition(2, 0.5).unwrap();
        assert_eq!(p.cells().len(), 4);
        let vol: f64 = p.cells().iter().map(|c| p.cell_volume(c)).sum();
        assert!((vol - 1.0).abs() < 1e-15);

        // boundary cells truncated
        let p = initial_partition(1, 0.3).unwrap();
        assert_eq!(p.cells().len(), 4);
        let vol: f64 = p.cells().iter().map(|c| p.cell_volume(c)).sum();
        assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_partition_rejects_bad_width() {
        assert!(initial_partition(1, 0.0).is_err());
        assert!(initial_partition(1, 1.5).is_err());
        assert!(initial_partition(0, 0.5).is_err());
    }

    #[test]
    fn refine_examples() {
        let p = initial_partition(1, 0.2).unwrap();
        assert_eq!(p.refine(0.1).unwrap().cells().len(), 10);

        let one = RegionPartition::with_cells(1, 0.2, [smallvec::smallvec![0]]).unwrap();
        assert_eq!(one.refine(0.1).unwrap().cells(), &ids(&[&[0], &[1]]));
        // 0.15 does not divide 0.2: covering superset
        assert_eq!(one.refine(0.15).unwrap().cells(), &ids(&[&[0], &[1]]));

        let mid = RegionPartition::with_cells(1, 0.2, [smallvec::smallvec![2]]).unwrap();
        // [0.4, 0.6) meets [0.3,0.45), [0.45,0.6)
        assert_eq!(mid.refine(0.15).unwrap().cells(), &ids(&[&[2], &[3]]));

        assert!(matches!(
            one.refine(0.3),
            Err(Error::InvalidRefinement { .. })
        ));
    }

    #[test]
    fn refine_covers_original_point_set() {
        let mut rng = RngStream::new(4, 4);
        let p = initial_partition(2, 0.2)
            .unwrap()
            .retain(|c| (c[0] + c[1]) % 3 == 0);
        for w in [0.2, 0.1, 0.05, 0.07, 0.13] {
            let r = p.refine(w).unwrap();
            for _ in 0..2000 {
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                if p.contains(&x) {
                    assert!(r.contains(&x), "width {w} lost {x:?}");
                }
            }
        }
    }

    #[test]
    fn membership_boundaries() {
        let full = initial_partition(1, 0.5).unwrap();
        let xs = Array2::from_shape_vec((3, 1), vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(full.membership_mask(&Rows::new(&xs)), vec![true; 3]);

        let none = full.retain(|_| false);
        assert_eq!(none.membership_mask(&Rows::new(&xs)), vec![false; 3]);

        let left = full.retain(|c| c[0] == 0);
        assert_eq!(
            left.membership_mask(&Rows::new(&xs)),
            vec![true, false, false]
        );
    }

    #[test]
    fn disjoint_cover() {
        let mut rng = RngStream::new(1, 2);
        let p = initial_partition(2, 0.15).unwrap();
        let cells: Vec<CellId> = p.cells().iter().cloned().collect();
        for _ in 0..10_000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let hits = cells
                .iter()
                .filter(|c| {
                    let (lo, hi) = p.cell_bounds(c);
                    (0..2).all(|k| x[k] >= lo[k] && (x[k] < hi[k] || hi[k] == 1.0))
                })
                .count();
            assert_eq!(hits, 1);
            assert!(p.contains(&x));
        }
        assert!(p.contains(&[1.0, 1.0]));
    }

    #[test]
    fn tree_region_refines_to_descendants() {
        let mut rng = RngStream::new(0, 3);
        let tree = Arc::new(sample_binary_partition(3, 6, SplitRule::Uniform, &mut rng).unwrap());
        let r = TreeRegion::full(tree.clone(), 2).unwrap();
        assert_eq!(r.nodes().len(), 4);
        let partial = Region::Tree(r).retain(|c| c[0] != 1);
        let refined = partial.refine_to(&BaseSpec::binary(4)).unwrap();
        assert_eq!(refined.len(), 12);
        for _ in 0..5000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            assert_eq!(partial.contains(&x), refined.contains(&x));
        }
        // shallower spec keeps the level
        let same = partial.refine_to(&BaseSpec::binary(1)).unwrap();
        assert_eq!(same, partial);
        assert!(partial.refine_to(&BaseSpec::histogram(0.1)).is_err());
    }

    #[test]
    fn grid_refine_never_coarsens() {
        let g = Region::Grid(initial_partition(1, 0.1).unwrap());
        let r = g.refine_to(&BaseSpec::histogram(0.2)).unwrap();
        assert_eq!(r, g);
    }
}
