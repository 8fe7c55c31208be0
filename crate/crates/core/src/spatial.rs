//! Uniform spatial hash for exact fixed-radius neighbor queries.

use std::collections::HashMap;

const MAX_HASHED_DIM: usize = 4;

type CellKey = [i64; MAX_HASHED_DIM];

/// Buckets point indices by cubic cells of side `radius / reach`. Any point
/// within `radius` of a query lies in one of the (2·reach + 1)ⁿ cells around it.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    dim: usize,
    cell_size: f64,
    reach: usize,
    len: usize,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl SpatialHash {
    /// `coords` is a flat array of `dim`-tuples.
    pub fn build(dim: usize, coords: &[f64], radius: f64) -> Self {
        Self::with_reach(dim, coords, radius, 1)
    }

    pub fn with_reach(dim: usize, coords: &[f64], radius: f64, reach: usize) -> Self {
        assert!(radius > 0.0 && reach > 0, "radius and reach must be positive");
        let cell_size = radius / reach as f64;
        let len = coords.len().checked_div(dim).unwrap_or(0);
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        if dim <= MAX_HASHED_DIM {
            for i in 0..len {
                let key = Self::key(dim, cell_size, &coords[i * dim..(i + 1) * dim]);
                cells.entry(key).or_default().push(i);
            }
        }
        Self { dim, cell_size, reach, len, cells }
    }

    fn key(dim: usize, cell_size: f64, p: &[f64]) -> CellKey {
        let mut k = [0i64; MAX_HASHED_DIM];
        for a in 0..dim {
            k[a] = (p[a] / cell_size).floor() as i64;
        }
        k
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn radius(&self) -> f64 {
        self.cell_size * self.reach as f64
    }

    /// Writes into `out` the indices of all points that may lie within
    /// `radius` of `query`; the caller filters by distance. The order depends
    /// only on the point set and the query cell, never on scheduling.
    pub fn candidates(&self, query: &[f64], out: &mut Vec<usize>) {
        self.collect(query, self.reach, out);
    }

    /// As [`Self::candidates`] for an arbitrary search radius.
    pub fn candidates_within(&self, query: &[f64], radius: f64, out: &mut Vec<usize>) {
        let reach = (radius / self.cell_size).ceil().max(1.0) as usize;
        self.collect(query, reach, out);
    }

    fn collect(&self, query: &[f64], reach: usize, out: &mut Vec<usize>) {
        out.clear();
        if self.dim > MAX_HASHED_DIM {
            out.extend(0..self.len);
            return;
        }
        let base = Self::key(self.dim, self.cell_size, query);
        let side = 2 * reach + 1;
        let total = side.pow(self.dim as u32);
        for code in 0..total {
            let mut key = base;
            let mut c = code;
            for k in key.iter_mut().take(self.dim) {
                *k += (c % side) as i64 - reach as i64;
                c /= side;
            }
            if let Some(bucket) = self.cells.get(&key) {
                out.extend_from_slice(bucket);
            }
        }
    }
}
