//! Similarity functions between properties.
//!
//! Three families are supported: location-based similarity (inverse squared
//! geographic distance), unweighted Euclidean similarity on scaled
//! attributes, and the learnable filtered quasi-norm
//! `(sum_i w_i |a_i - b_i|^q)^(-1/q)`. Filters compare raw attribute values;
//! the quasi-norm works on scaled ones.

use std::collections::BTreeMap;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AttributeSchema, GeoPoint};
use crate::geo_index::{haversine_m, PreselectMode};

pub const Q_MIN: f64 = 0.01;
pub const Q_MAX: f64 = 10.0;
pub const K_MAX: u32 = 2000;
pub const R_MAX_M: f64 = 50_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum GenomeError {
    #[error("exponent q = {0} outside [{Q_MIN}, {Q_MAX}]")]
    ExponentOutOfRange(f64),
    #[error("expected {expected} {what}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("weight `{0}` must be finite and nonnegative")]
    NegativeWeight(String),
    #[error("all weights are zero")]
    AllWeightsZero,
    #[error("filter `{0}` must be nonnegative or inf")]
    BadFilter(String),
    #[error("post-selection size m must be at least 1")]
    ZeroM,
    #[error("k = {0} outside [1, {K_MAX}]")]
    KOutOfRange(u32),
    #[error("radius {0} m outside [0, {R_MAX_M}] and not inf")]
    RadiusOutOfRange(f64),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("preselect mode `{0}` is missing a parameter or unknown")]
    BadPreselect(String),
    #[error("json error: {0}")]
    Json(String),
}

/// Post-selection cap: how many of the most similar comparables enter the
/// weighted average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostSelect {
    Top(u32),
    All,
}

impl PostSelect {
    pub fn limit(&self) -> usize {
        match *self {
            PostSelect::Top(m) => m as usize,
            PostSelect::All => usize::MAX,
        }
    }
}

/// A learnable similarity configuration: exponent, weights, filters,
/// post-selection size and pre-selection mode. Weight and filter vectors are
/// indexed by the attribute schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGenome {
    pub q: f64,
    pub weights: Vec<f64>,
    /// `f64::INFINITY` disables a filter.
    pub filters: Vec<f64>,
    pub m: PostSelect,
    pub preselect: PreselectMode,
}

impl SimilarityGenome {
    /// Euclidean similarity over all attributes with no filters.
    pub fn unweighted(n_attrs: usize, m: PostSelect, preselect: PreselectMode) -> Self {
        Self {
            q: 2.0,
            weights: vec![1.0; n_attrs],
            filters: vec![f64::INFINITY; n_attrs],
            m,
            preselect,
        }
    }

    pub fn n_attrs(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self, n_attrs: usize) -> Result<(), GenomeError> {
        if !(Q_MIN..=Q_MAX).contains(&self.q) {
            return Err(GenomeError::ExponentOutOfRange(self.q));
        }
        for (what, v) in [("weights", &self.weights), ("filters", &self.filters)] {
            if v.len() != n_attrs {
                return Err(GenomeError::Length {
                    what,
                    expected: n_attrs,
                    found: v.len(),
                });
            }
        }
        if let Some(i) = self.weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(GenomeError::NegativeWeight(i.to_string()));
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(GenomeError::AllWeightsZero);
        }
        if let Some(i) = self.filters.iter().position(|f| !(*f >= 0.0)) {
            return Err(GenomeError::BadFilter(i.to_string()));
        }
        if self.m == PostSelect::Top(0) {
            return Err(GenomeError::ZeroM);
        }
        if let Some(k) = self.preselect.k() {
            if !(1..=K_MAX).contains(&k) {
                return Err(GenomeError::KOutOfRange(k));
            }
        }
        if let Some(r) = self.preselect.radius_m() {
            if !((0.0..=R_MAX_M).contains(&r) || r == f64::INFINITY) {
                return Err(GenomeError::RadiusOutOfRange(r));
            }
        }
        Ok(())
    }

    /// `sum_i w_i |a1_i - a2_i|^q` over positively weighted attributes.
    #[inline]
    pub fn power_sum(&self, a1: &[f64], a2: &[f64]) -> f64 {
        weighted_power_sum(self.q, &self.weights, a1, a2)
    }

    /// True when no filter trips for the raw attribute vectors.
    #[inline]
    pub fn passes_filters(&self, raw1: &[f64], raw2: &[f64]) -> bool {
        self.filters
            .iter()
            .zip(raw1.iter().zip(raw2))
            .all(|(&f, (a, b))| (a - b).abs() < f)
    }

    pub fn quasi_norm_similarity(&self, a1: &[f64], a2: &[f64]) -> f64 {
        quasi_norm_similarity(self.q, &self.weights, a1, a2)
    }

    /// Quasi-norm similarity of the scaled vectors, or 0 when a filter on
    /// the raw vectors trips.
    pub fn filtered_similarity(&self, raw1: &[f64], raw2: &[f64], scaled1: &[f64], scaled2: &[f64]) -> f64 {
        if self.passes_filters(raw1, raw2) {
            self.quasi_norm_similarity(scaled1, scaled2)
        } else {
            0.0
        }
    }

    pub fn to_json(&self, schema: &AttributeSchema) -> String {
        serde_json::to_string_pretty(&GenomeFile::from_genome(self, schema)).expect("genome serializes")
    }

    pub fn from_json(text: &str, schema: &AttributeSchema) -> Result<Self, GenomeError> {
        let file: GenomeFile = serde_json::from_str(text).map_err(|e| GenomeError::Json(e.to_string()))?;
        file.into_genome(schema)
    }
}

#[inline]
pub fn weighted_power_sum(q: f64, weights: &[f64], a1: &[f64], a2: &[f64]) -> f64 {
    let mut sum = 0.0;
    for ((&w, &x), &y) in weights.iter().zip(a1).zip(a2) {
        if w > 0.0 {
            let d = (x - y).abs();
            if d > 0.0 {
                sum += w * d.powf(q);
            }
        }
    }
    sum
}

/// Same sum as [`weighted_power_sum`], or `None` as soon as a partial sum
/// exceeds `bound`.
#[inline]
pub fn bounded_power_sum(q: f64, weights: &[f64], a1: &[f64], a2: &[f64], bound: f64) -> Option<f64> {
    let mut sum = 0.0;
    for ((&w, &x), &y) in weights.iter().zip(a1).zip(a2) {
        if w > 0.0 {
            let d = (x - y).abs();
            if d > 0.0 {
                sum += w * d.powf(q);
                if sum > bound {
                    return None;
                }
            }
        }
    }
    Some(sum)
}

/// Converts a power sum into a similarity; zero maps to `+inf`.
#[inline]
pub fn similarity_from_power_sum(sum: f64, q: f64) -> f64 {
    if sum == 0.0 {
        f64::INFINITY
    } else {
        sum.powf(-1.0 / q)
    }
}

pub fn quasi_norm_similarity(q: f64, weights: &[f64], a1: &[f64], a2: &[f64]) -> f64 {
    similarity_from_power_sum(weighted_power_sum(q, weights, a1, a2), q)
}

pub fn unweighted_similarity(a1: &[f64], a2: &[f64]) -> f64 {
    let sum: f64 = a1.iter().zip(a2).map(|(x, y)| (x - y).powi(2)).sum();
    if sum == 0.0 {
        f64::INFINITY
    } else {
        1.0 / sum.sqrt()
    }
}

/// Inverse squared great-circle distance in meters.
pub fn lbs_similarity(p1: GeoPoint, p2: GeoPoint) -> f64 {
    lbs_from_distance(haversine_m(p1, p2))
}

#[inline]
pub fn lbs_from_distance(d_m: f64) -> f64 {
    if d_m == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (d_m * d_m)
    }
}

/// A real that may be `+inf`, written as the string `"inf"` in JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedReal(pub f64);

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtendedReal(v)),
            Raw::Str(s) if s == "inf" || s == "Infinity" => Ok(ExtendedReal(f64::INFINITY)),
            Raw::Str(s) => Err(de::Error::custom(format!("expected number or \"inf\", found `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum MValue {
    Count(u32),
    Inf(InfTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum InfTag {
    #[serde(rename = "inf")]
    Inf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreselectFile {
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_m: Option<ExtendedReal>,
}

/// On-disk genome layout. Omitted weights are 0, omitted filters disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenomeFile {
    q: f64,
    #[serde(default)]
    weights: BTreeMap<String, f64>,
    #[serde(default)]
    filters: BTreeMap<String, ExtendedReal>,
    m: MValue,
    preselect: PreselectFile,
}

impl GenomeFile {
    fn from_genome(g: &SimilarityGenome, schema: &AttributeSchema) -> Self {
        let weights = schema.names().zip(&g.weights).map(|(n, &w)| (n.to_string(), w)).collect();
        let filters = schema
            .names()
            .zip(&g.filters)
            .map(|(n, &f)| (n.to_string(), ExtendedReal(f)))
            .collect();
        let m = match g.m {
            PostSelect::Top(m) => MValue::Count(m),
            PostSelect::All => MValue::Inf(InfTag::Inf),
        };
        let preselect = match g.preselect {
            PreselectMode::KNearest { k } => PreselectFile {
                mode: "k_nearest".into(),
                k: Some(k),
                r_m: None,
            },
            PreselectMode::Radius { r_m } => PreselectFile {
                mode: "radius".into(),
                k: None,
                r_m: Some(ExtendedReal(r_m)),
            },
            PreselectMode::Both { k, r_m } => PreselectFile {
                mode: "both".into(),
                k: Some(k),
                r_m: Some(ExtendedReal(r_m)),
            },
        };
        Self {
            q: g.q,
            weights,
            filters,
            m,
            preselect,
        }
    }

    fn into_genome(self, schema: &AttributeSchema) -> Result<SimilarityGenome, GenomeError> {
        let n = schema.len();
        let mut weights = vec![0.0; n];
        for (name, w) in self.weights {
            let i = schema.index_of(&name).ok_or(GenomeError::UnknownAttribute(name))?;
            weights[i] = w;
        }
        let mut filters = vec![f64::INFINITY; n];
        for (name, f) in self.filters {
            let i = schema.index_of(&name).ok_or(GenomeError::UnknownAttribute(name))?;
            filters[i] = f.0;
        }
        let m = match self.m {
            MValue::Count(m) => PostSelect::Top(m),
            MValue::Inf(_) => PostSelect::All,
        };
        let p = self.preselect;
        let preselect = match (p.mode.as_str(), p.k, p.r_m) {
            ("k_nearest", Some(k), None) => PreselectMode::KNearest { k },
            ("radius", None, Some(r)) => PreselectMode::Radius { r_m: r.0 },
            ("both", Some(k), Some(r)) => PreselectMode::Both { k, r_m: r.0 },
            _ => return Err(GenomeError::BadPreselect(p.mode)),
        };
        let genome = SimilarityGenome {
            q: self.q,
            weights,
            filters,
            m,
            preselect,
        };
        genome.validate(n)?;
        Ok(genome)
    }
}
