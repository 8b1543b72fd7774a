//! Randomized nested multiresolution decompositions of a source space.
//!
//! Level `l` keeps `K_l = round(K s^(l-L))` randomly chosen source positions
//! as centers and assigns every fine position to its nearest center. The
//! unknowns are constant over each resulting subset, which gives an exact
//! restriction of the lead field (column sums) and a prolongation that copies
//! a coarse value to every member of its subset.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::{LeadField, Point3, SourceSpace};
use crate::seeds::derive_seed;

/// Source counts per level, coarsest first.
///
/// `K_l = round(K s^(l-L))` rounding half away from zero; the finest level
/// is exactly `K`.
pub fn level_counts(k: usize, s: f64, levels: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::param("K must be at least 1"));
    }
    if levels == 0 {
        return Err(Error::param("L must be at least 1"));
    }
    if !(s > 1.0 && s.is_finite()) {
        return Err(Error::param(format!("sparsity factor must exceed 1, got {s}")));
    }
    let counts: Vec<usize> = (1..=levels)
        .map(|l| {
            if l == levels {
                k
            } else {
                (k as f64 * s.powi(l as i32 - levels as i32)).round() as usize
            }
        })
        .collect();
    if counts[0] == 0 {
        return Err(Error::param(format!(
            "coarsest level would be empty (K = {k}, s = {s}, L = {levels})"
        )));
    }
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param(format!(
            "level counts {counts:?} are not strictly increasing"
        )));
    }
    Ok(counts)
}

/// One resolution level: a set of centers and the induced partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionLevel {
    level_index: usize,
    centers: Vec<usize>,
    parent_map: Vec<usize>,
    subset_sizes: Vec<usize>,
}

impl ResolutionLevel {
    /// Build a level from center indices into `space`, assigning each
    /// position to its nearest center (ties to the lowest center index).
    pub fn from_centers(space: &SourceSpace, level_index: usize, centers: Vec<usize>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::param("a level needs at least one center"));
        }
        if let Some(&c) = centers.iter().find(|&&c| c >= space.len()) {
            return Err(Error::param(format!("center index {c} out of range")));
        }
        let points: Vec<Point3> = centers.iter().map(|&c| space.positions()[c]).collect();
        let grid = CenterGrid::new(&points, space.positions());
        let parent_map: Vec<usize> = space.positions().iter().map(|p| grid.nearest(p)).collect();
        Self::from_parent_map(level_index, centers, parent_map)
    }

    /// The finest level: every position is its own subset.
    pub fn identity(k: usize, level_index: usize) -> Self {
        Self {
            level_index,
            centers: (0..k).collect(),
            parent_map: (0..k).collect(),
            subset_sizes: vec![1; k],
        }
    }

    fn from_parent_map(level_index: usize, centers: Vec<usize>, parent_map: Vec<usize>) -> Result<Self> {
        let mut subset_sizes = vec![0usize; centers.len()];
        for &p in &parent_map {
            subset_sizes[p] += 1;
        }
        if let Some(j) = subset_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Geometry(format!("subset {j} is empty")));
        }
        Ok(Self {
            level_index,
            centers,
            parent_map,
            subset_sizes,
        })
    }

    /// 1-based level index, 1 being the coarsest.
    pub fn level_index(&self) -> usize {
        self.level_index
    }

    /// Indices of the center positions in the fine source space.
    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Subset index of each fine position.
    pub fn parent_map(&self) -> &[usize] {
        &self.parent_map
    }

    pub fn subset_sizes(&self) -> &[usize] {
        &self.subset_sizes
    }

    /// `K_l`
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `K`
    pub fn fine_len(&self) -> usize {
        self.parent_map.len()
    }

    pub fn is_identity(&self) -> bool {
        self.centers.len() == self.parent_map.len()
            && self.parent_map.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// `L` resolution levels over one source space, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiresDecomposition {
    levels: Vec<ResolutionLevel>,
    seed: u64,
    sparsity: f64,
}

impl MultiresDecomposition {
    pub fn levels(&self) -> &[ResolutionLevel] {
        &self.levels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Draw a decomposition. Every level below the finest samples its centers
/// uniformly without replacement from the source positions, independently
/// of the other levels.
pub fn build_decomposition(space: &SourceSpace, s: f64, levels: usize, rng_seed: u64) -> Result<MultiresDecomposition> {
    let counts = level_counts(space.len(), s, levels)?;
    let k = space.len();
    let levels = counts
        .iter()
        .enumerate()
        .map(|(l, &kl)| {
            if kl == k {
                Ok(ResolutionLevel::identity(k, l + 1))
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, l as u64));
                let centers = rand::seq::index::sample(&mut rng, k, kl).into_vec();
                ResolutionLevel::from_centers(space, l + 1, centers)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiresDecomposition {
        levels,
        seed: rng_seed,
        sparsity: s,
    })
}

/// Coarse lead field whose column `(j, a)` is the sum of the fine columns
/// `(i, a)` over the subset `B_j`.
pub fn restrict_leadfield(lf: &LeadField, level: &ResolutionLevel) -> Result<LeadField> {
    if lf.cols() != 3 * level.fine_len() {
        return Err(Error::param(format!(
            "lead field has {} columns, level expects {}",
            lf.cols(),
            3 * level.fine_len()
        )));
    }
    if level.is_identity() {
        return Ok(lf.clone());
    }
    let fine = lf.matrix();
    let mut coarse = DMatrix::zeros(lf.rows(), 3 * level.len());
    for (i, &p) in level.parent_map().iter().enumerate() {
        for a in 0..3 {
            let mut dst = coarse.column_mut(3 * p + a);
            dst += fine.column(3 * i + a);
        }
    }
    LeadField::new(coarse, lf.modality(), lf.units())
}

/// Copy each coarse value to every member of its subset, per axis.
pub fn prolong(z: &DVector<f64>, level: &ResolutionLevel) -> Result<DVector<f64>> {
    if z.len() != 3 * level.len() {
        return Err(Error::param(format!(
            "coarse vector has length {}, level expects {}",
            z.len(),
            3 * level.len()
        )));
    }
    let mut x = DVector::zeros(3 * level.fine_len());
    for (i, &p) in level.parent_map().iter().enumerate() {
        for a in 0..3 {
            x[3 * i + a] = z[3 * p + a];
        }
    }
    Ok(x)
}

/// Mean over each subset, per axis.
pub fn restrict_vector(x: &DVector<f64>, level: &ResolutionLevel) -> Result<DVector<f64>> {
    if x.len() != 3 * level.fine_len() {
        return Err(Error::param(format!(
            "fine vector has length {}, level expects {}",
            x.len(),
            3 * level.fine_len()
        )));
    }
    let mut z = DVector::zeros(3 * level.len());
    for (i, &p) in level.parent_map().iter().enumerate() {
        for a in 0..3 {
            z[3 * p + a] += x[3 * i + a];
        }
    }
    for (j, &n) in level.subset_sizes().iter().enumerate() {
        for a in 0..3 {
            z[3 * j + a] /= n as f64;
        }
    }
    Ok(z)
}

/// Uniform bucket grid over the bounding box of the fine positions, used to
/// find nearest centers without scanning all of them.
struct CenterGrid<'a> {
    centers: &'a [Point3],
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl<'a> CenterGrid<'a> {
    fn new(centers: &'a [Point3], fine: &[Point3]) -> Self {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for p in fine.iter().chain(centers) {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let volume = extent.iter().map(|e| e.max(1e-9)).product::<f64>();
        // about two centers per occupied cell
        let cell = (2.0 * volume / centers.len() as f64)
            .cbrt()
            .max(extent.max() / 1000.0)
            .max(1e-9);
        let dims = [0, 1, 2].map(|a| (extent[a] / cell).floor() as usize + 1);

        let mut grid = Self {
            centers,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            members: Vec::new(),
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let cell_of: Vec<usize> = centers.iter().map(|c| grid.flat(grid.coords(c))).collect();
        let mut counts = vec![0usize; n_cells + 1];
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut members = vec![0usize; centers.len()];
        for (j, &c) in cell_of.iter().enumerate() {
            members[fill[c]] = j;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.members = members;
        grid
    }

    fn coords(&self, p: &Point3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            (c.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn nearest(&self, p: &Point3) -> usize {
        let home = self.coords(p);
        let mut best = (f64::INFINITY, usize::MAX);
        let max_ring = *self.dims.iter().max().expect("three axes");
        for ring in 0..=max_ring {
            let lo = home.map(|h| h as isize - ring as isize);
            let hi = home.map(|h| h as isize + ring as isize);
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    let on_shell_yz = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                    for x in lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1) {
                        if !(on_shell_yz || x == lo[0] || x == hi[0]) {
                            continue;
                        }
                        let cell = self.flat([x as usize, y as usize, z as usize]);
                        for &j in &self.members[self.starts[cell]..self.starts[cell + 1]] {
                            let d = (self.centers[j] - p).norm_squared();
                            if d < best.0 || (d == best.0 && j < best.1) {
                                best = (d, j);
                            }
                        }
                    }
                }
            }
            // Cells beyond this ring are at least `ring * cell` away.
            let bound = ring as f64 * self.cell;
            if best.1 != usize::MAX && best.0 < bound * bound {
                break;
            }
        }
        best.1
    }
}
