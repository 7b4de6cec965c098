//! Haversine distances and a lat/lon grid that bounds every δ-neighbor
//! search to the 3×3 surrounding cells.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (phi1, phi2) = (a.0.to_radians(), b.0.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.1 - a.1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.min(1.0).sqrt().asin()
}

const SLACK: f64 = 1.0 + 1e-9;

#[derive(Clone, Debug)]
pub struct SpatialGridIndex {
    cell_km: f64,
    row_width: f64,
    n_cols: i64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    cell_of: Vec<(i64, i64)>,
}

impl SpatialGridIndex {
    /// Buckets `coords` (lat, lon in degrees) into cells at least `cell_km` wide
    /// in great-circle terms.
    pub fn build(coords: &[(f64, f64)], cell_km: f64) -> Result<Self> {
        if !(cell_km > 0.0) {
            return Err(Error::InvalidArgument(format!("cell size {cell_km} km must be positive")));
        }
        let row_width = cell_km / EARTH_RADIUS_KM * SLACK;
        // Any two points within cell_km differ in longitude by at most
        // 2·asin(sin(cell_km / 2R) / cos φ_max), with φ_max the largest |lat| present.
        let min_cos = coords
            .iter()
            .map(|c| c.0.to_radians().cos())
            .fold(1.0f64, f64::min)
            .max(0.0);
        let s = (cell_km / (2.0 * EARTH_RADIUS_KM)).sin() / min_cos;
        let n_cols = if min_cos <= 0.0 || s >= 1.0 {
            1
        } else {
            let lon_width = 2.0 * s.asin() * SLACK;
            let n = (2.0 * PI / lon_width).floor() as i64;
            if n < 3 {
                1
            } else {
                n
            }
        };
        let mut index = SpatialGridIndex {
            cell_km,
            row_width,
            n_cols,
            cells: HashMap::new(),
            cell_of: Vec::with_capacity(coords.len()),
        };
        for (i, &c) in coords.iter().enumerate() {
            let cell = index.cell(c);
            index.cells.entry(cell).or_default().push(i);
            index.cell_of.push(cell);
        }
        Ok(index)
    }

    fn cell(&self, (lat, lon): (f64, f64)) -> (i64, i64) {
        let row = ((lat.to_radians() + FRAC_PI_2) / self.row_width).floor() as i64;
        let col_width = 2.0 * PI / self.n_cols as f64;
        let col = (((lon.to_radians() + PI) / col_width).floor() as i64).clamp(0, self.n_cols - 1);
        (row, col)
    }

    pub fn cell_km(&self) -> f64 {
        self.cell_km
    }

    pub fn len(&self) -> usize {
        self.cell_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_of.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    fn neighbor_cols(&self, col: i64) -> Vec<i64> {
        if self.n_cols == 1 {
            vec![0]
        } else {
            vec![(col - 1).rem_euclid(self.n_cols), col, (col + 1).rem_euclid(self.n_cols)]
        }
    }

    /// Points in the 3×3 cell neighborhood of point `i` (including `i`).
    pub fn neighborhood(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (row, col) = self.cell_of[i];
        let cols = self.neighbor_cols(col);
        (row - 1..=row + 1)
            .flat_map(move |r| cols.clone().into_iter().map(move |c| (r, c)))
            .filter_map(|key| self.cells.get(&key))
            .flat_map(|pts| pts.iter().copied())
    }

    /// Unordered candidate pairs (i < j) sharing a cell neighborhood, sorted.
    pub fn candidate_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = (0..self.len())
            .flat_map(|i| self.neighborhood(i).filter(move |&j| j > i).map(move |j| (i, j)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}
