//! Spatial pre-selection over valued properties.
//!
//! Points are stored as unit vectors in an R*-tree. Chord length on the unit
//! sphere is monotone in great-circle distance, so the tree narrows the
//! candidate set and the exact haversine distance decides the final order.
//! Equal distances are ordered by ascending property id.

use std::cmp::Ordering;

use rstar::primitives::GeomWithData;
use rstar::RTree;
use thiserror::Error;

use crate::dataset::{GeoPoint, Property};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

// Slack added to chord comparisons so rounding in the Cartesian embedding
// never drops a point the haversine ordering would keep.
const CHORD2_REL_SLACK: f64 = 1e-9;
const CHORD2_ABS_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeoIndexError {
    #[error("cannot build an index over zero properties")]
    EmptyInput,
    #[error("property {0} has no known value")]
    Unvalued(u64),
    #[error("property {0} has invalid coordinates")]
    InvalidLocation(u64),
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let half_dphi = (phi2 - phi1) / 2.0;
    let half_dlambda = (b.lon - a.lon).to_radians() / 2.0;
    let h = half_dphi.sin().powi(2) + phi1.cos() * phi2.cos() * half_dlambda.sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

fn unit_vector(p: GeoPoint) -> [f64; 3] {
    let (lat, lon) = (p.lat.to_radians(), p.lon.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

fn slack(chord2: f64) -> f64 {
    chord2 + chord2 * CHORD2_REL_SLACK + CHORD2_ABS_SLACK
}

/// How comparables are pre-selected around a target location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreselectMode {
    KNearest { k: u32 },
    Radius { r_m: f64 },
    Both { k: u32, r_m: f64 },
}

impl PreselectMode {
    pub fn k(&self) -> Option<u32> {
        match *self {
            PreselectMode::KNearest { k } | PreselectMode::Both { k, .. } => Some(k),
            PreselectMode::Radius { .. } => None,
        }
    }

    pub fn radius_m(&self) -> Option<f64> {
        match *self {
            PreselectMode::Radius { r_m } | PreselectMode::Both { r_m, .. } => Some(r_m),
            PreselectMode::KNearest { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position of the property in the slice the index was built from.
    pub slot: usize,
    pub id: u64,
    pub distance_m: f64,
}

/// Total order used for every neighbor list: distance, then id.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance_m.total_cmp(&b.distance_m).then(a.id.cmp(&b.id))
}

type Entry = GeomWithData<[f64; 3], usize>;

/// Immutable spatial index. Safe to share across threads once built.
#[derive(Debug, Clone)]
pub struct GeoIndex {
    tree: RTree<Entry>,
    ids: Vec<u64>,
    locations: Vec<GeoPoint>,
}

impl GeoIndex {
    /// Bulk-loads an index over valued properties with valid coordinates.
    pub fn build(valued: &[Property]) -> Result<Self, GeoIndexError> {
        for p in valued {
            if !p.is_valued() {
                return Err(GeoIndexError::Unvalued(p.id));
            }
        }
        Self::from_points(valued.iter().map(|p| (p.id, p.location)))
    }

    pub fn from_points<I>(points: I) -> Result<Self, GeoIndexError>
    where
        I: IntoIterator<Item = (u64, GeoPoint)>,
    {
        let (ids, locations): (Vec<u64>, Vec<GeoPoint>) = points.into_iter().unzip();
        if ids.is_empty() {
            return Err(GeoIndexError::EmptyInput);
        }
        if let Some(i) = locations.iter().position(|p| !p.is_valid()) {
            return Err(GeoIndexError::InvalidLocation(ids[i]));
        }
        let entries = locations
            .iter()
            .enumerate()
            .map(|(slot, &p)| GeomWithData::new(unit_vector(p), slot))
            .collect();
        Ok(Self {
            tree: RTree::bulk_load(entries),
            ids,
            locations,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, slot: usize) -> u64 {
        self.ids[slot]
    }

    pub fn location(&self, slot: usize) -> GeoPoint {
        self.locations[slot]
    }

    fn neighbor(&self, query: GeoPoint, slot: usize) -> Neighbor {
        Neighbor {
            slot,
            id: self.ids[slot],
            distance_m: haversine_m(query, self.locations[slot]),
        }
    }

    /// The `k` nearest points, ascending by distance then id.
    pub fn knn(&self, query: GeoPoint, k: usize, exclude_id: Option<u64>) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let q = unit_vector(query);
        let mut found: Vec<Neighbor> = Vec::with_capacity(k + 1);
        let mut bound = f64::INFINITY;
        for (entry, chord2) in self.tree.nearest_neighbor_iter_with_distance_2(&q) {
            if chord2 > bound {
                break;
            }
            let slot = entry.data;
            if Some(self.ids[slot]) == exclude_id {
                continue;
            }
            found.push(self.neighbor(query, slot));
            if found.len() == k {
                bound = slack(chord2);
            }
        }
        found.sort_unstable_by(neighbor_order);
        found.truncate(k);
        found
    }

    /// All points strictly closer than `r_m` meters, ascending by distance
    /// then id.
    pub fn within_radius(&self, query: GeoPoint, r_m: f64, exclude_id: Option<u64>) -> Vec<Neighbor> {
        if !(r_m > 0.0) {
            return Vec::new();
        }
        let keep = |slot: usize| Some(self.ids[slot]) != exclude_id;
        let mut found: Vec<Neighbor> = if r_m >= std::f64::consts::PI * EARTH_RADIUS_M {
            (0..self.len())
                .filter(|&s| keep(s))
                .map(|s| self.neighbor(query, s))
                .filter(|n| n.distance_m < r_m)
                .collect()
        } else {
            let half_angle = r_m / (2.0 * EARTH_RADIUS_M);
            let chord2 = 4.0 * half_angle.sin().powi(2);
            self.tree
                .locate_within_distance(unit_vector(query), slack(chord2))
                .map(|e| e.data)
                .filter(|&s| keep(s))
                .map(|s| self.neighbor(query, s))
                .filter(|n| n.distance_m < r_m)
                .collect()
        };
        found.sort_unstable_by(neighbor_order);
        found
    }

    pub fn preselect(&self, query: GeoPoint, mode: PreselectMode, exclude_id: Option<u64>) -> Vec<Neighbor> {
        match mode {
            PreselectMode::KNearest { k } => self.knn(query, k as usize, exclude_id),
            PreselectMode::Radius { r_m } => self.within_radius(query, r_m, exclude_id),
            PreselectMode::Both { k, r_m } => {
                // Both lists are prefixes of the same total order.
                let mut near = self.knn(query, k as usize, exclude_id);
                near.retain(|n| n.distance_m < r_m);
                near
            }
        }
    }
}
