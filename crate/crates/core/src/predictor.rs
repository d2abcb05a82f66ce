//! Weighted-average prediction over pre- and post-selected comparables.
//!
//! A prediction is `sum s_j v_j / sum s_j` over the comparables that survive
//! pre-selection, filtering and post-selection. Every prediction comes with a
//! [`PredictionWitness`] listing the comparables and their share of the
//! result.

use std::collections::{BinaryHeap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FallbackMeans, GeoPoint, Property, Scaler};
use crate::geo_index::{GeoIndex, GeoIndexError, Neighbor, PreselectMode};
use crate::similarity::{bounded_power_sum, ExtendedReal, PostSelect, SimilarityGenome};

/// Radius used by both built-in baselines.
pub const BASELINE_RADIUS_M: f64 = 10_000.0;
/// Post-selection size of the unweighted baseline.
pub const UNWEIGHTED_BASELINE_M: u32 = 50;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("no comparable with positive similarity for property {target_id} ({candidates} pre-selected)")]
    NoComparables { target_id: u64, candidates: usize },
    #[error(transparent)]
    Index(#[from] GeoIndexError),
    #[error("attribute count {found} does not match scaler length {expected}")]
    AttributeCount { expected: usize, found: usize },
}

/// The valued properties predictions are made from, with their spatial
/// index. Slots in the index and in the attribute tables coincide.
#[derive(Debug, Clone)]
pub struct CaseBase {
    ids: Vec<u64>,
    values: Vec<f64>,
    raw: Vec<f64>,
    scaled: Vec<f64>,
    regions: Vec<Option<String>>,
    n_attrs: usize,
    index: GeoIndex,
    fallback: FallbackMeans,
    slot_of: HashMap<u64, usize>,
}

impl CaseBase {
    pub fn new(valued: &[Property], scaler: &Scaler) -> Result<Self, PredictError> {
        let index = GeoIndex::build(valued)?;
        let n_attrs = scaler.len();
        let mut raw = Vec::with_capacity(valued.len() * n_attrs);
        let mut scaled = Vec::with_capacity(valued.len() * n_attrs);
        for p in valued {
            if p.attributes.len() != n_attrs {
                return Err(PredictError::AttributeCount {
                    expected: n_attrs,
                    found: p.attributes.len(),
                });
            }
            raw.extend_from_slice(&p.attributes);
            scaled.extend(scaler.scale(&p.attributes));
        }
        let values: Vec<f64> = valued.iter().map(|p| p.value.expect("index build checks values")).collect();
        let fallback = FallbackMeans::from_values(
            valued.iter().zip(&values).map(|(p, &v)| (v, p.region.as_deref())),
        )
        .expect("index build rejects empty input");
        Ok(Self {
            ids: valued.iter().map(|p| p.id).collect(),
            values,
            raw,
            scaled,
            regions: valued.iter().map(|p| p.region.clone()).collect(),
            n_attrs,
            index,
            fallback,
            slot_of: valued.iter().enumerate().map(|(i, p)| (p.id, i)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn index(&self) -> &GeoIndex {
        &self.index
    }

    pub fn fallback(&self) -> &FallbackMeans {
        &self.fallback
    }

    pub fn id(&self, slot: usize) -> u64 {
        self.ids[slot]
    }

    pub fn slot_of(&self, id: u64) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    pub fn value(&self, slot: usize) -> f64 {
        self.values[slot]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn raw(&self, slot: usize) -> &[f64] {
        &self.raw[slot * self.n_attrs..(slot + 1) * self.n_attrs]
    }

    pub fn scaled(&self, slot: usize) -> &[f64] {
        &self.scaled[slot * self.n_attrs..(slot + 1) * self.n_attrs]
    }

    pub fn region(&self, slot: usize) -> Option<&str> {
        self.regions[slot].as_deref()
    }

    /// A stored property viewed as a prediction target (leave-one-out).
    pub fn target(&self, slot: usize) -> TargetRef<'_> {
        TargetRef {
            id: self.ids[slot],
            location: self.index.location(slot),
            raw: self.raw(slot),
            scaled: self.scaled(slot),
            region: self.region(slot),
        }
    }
}

/// A property to be valued, with raw and scaled attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub id: u64,
    pub location: GeoPoint,
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
    pub region: Option<String>,
}

impl Target {
    pub fn new(property: &Property, scaler: &Scaler) -> Self {
        Self {
            id: property.id,
            location: property.location,
            raw: property.attributes.clone(),
            scaled: scaler.scale(&property.attributes),
            region: property.region.clone(),
        }
    }

    pub fn as_ref(&self) -> TargetRef<'_> {
        TargetRef {
            id: self.id,
            location: self.location,
            raw: &self.raw,
            scaled: &self.scaled,
            region: self.region.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TargetRef<'a> {
    pub id: u64,
    pub location: GeoPoint,
    pub raw: &'a [f64],
    pub scaled: &'a [f64],
    pub region: Option<&'a str>,
}

/// A complete prediction configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Filtered weighted quasi-norm on attributes.
    Genome(SimilarityGenome),
    /// Inverse squared geographic distance.
    Lbs { preselect: PreselectMode, m: PostSelect },
}

impl Method {
    pub fn lbs_baseline() -> Self {
        Method::Lbs {
            preselect: PreselectMode::Radius {
                r_m: BASELINE_RADIUS_M,
            },
            m: PostSelect::All,
        }
    }

    pub fn unweighted_baseline(n_attrs: usize) -> Self {
        Method::Genome(SimilarityGenome::unweighted(
            n_attrs,
            PostSelect::Top(UNWEIGHTED_BASELINE_M),
            PreselectMode::Radius {
                r_m: BASELINE_RADIUS_M,
            },
        ))
    }

    pub fn preselect(&self) -> PreselectMode {
        match self {
            Method::Genome(g) => g.preselect,
            Method::Lbs { preselect, .. } => *preselect,
        }
    }

    pub fn m(&self) -> PostSelect {
        match self {
            Method::Genome(g) => g.m,
            Method::Lbs { m, .. } => *m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WitnessFlags {
    pub exact_match: bool,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparable {
    pub id: u64,
    pub similarity: ExtendedReal,
    pub value: f64,
    /// Share of this comparable in the prediction; shares sum to one.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionWitness {
    pub target_id: u64,
    pub predicted_value: f64,
    #[serde(default)]
    pub comparables: Vec<Comparable>,
    #[serde(default)]
    pub preselect_candidates_count: usize,
    #[serde(default)]
    pub flags: WitnessFlags,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Scored {
    slot: usize,
    id: u64,
    /// Power sum for quasi-norms, meters for LBS. Similarity is
    /// `dissimilarity^(-exponent)`.
    dissimilarity: f64,
    weight: f64,
}

impl Scored {
    fn new(n: &Neighbor, dissimilarity: f64) -> Self {
        Self {
            slot: n.slot,
            id: n.id,
            dissimilarity,
            weight: 0.0,
        }
    }
}

/// Max-heap adapter: the worst-ranked comparable sits on top.
#[derive(Debug, Clone, Copy)]
struct Ranked(Scored);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        rank(&self.0, &other.0).is_eq()
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        rank(&self.0, &other.0)
    }
}

/// Reusable buffers for repeated predictions.
#[derive(Debug, Default)]
pub struct Scratch {
    scored: Vec<Scored>,
    heap: BinaryHeap<Ranked>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Aggregate {
    pub value: f64,
    pub exact_match: bool,
}

fn rank(a: &Scored, b: &Scored) -> std::cmp::Ordering {
    a.dissimilarity.total_cmp(&b.dissimilarity).then(a.id.cmp(&b.id))
}

/// Scores candidates, applies post-selection and computes the weighted
/// average. Returns `None` when nothing has positive similarity. On success
/// `scratch` holds the ranked comparables that contributed.
pub(crate) fn aggregate(
    method: &Method,
    target: TargetRef<'_>,
    base: &CaseBase,
    candidates: &[Neighbor],
    scratch: &mut Scratch,
) -> Option<Aggregate> {
    match method {
        Method::Genome(g) => aggregate_scored(g.m.limit(), 1.0 / g.q, base, candidates, scratch, |_, c, bound| {
            if !g.passes_filters(target.raw, base.raw(c.slot)) {
                return None;
            }
            bounded_power_sum(g.q, &g.weights, target.scaled, base.scaled(c.slot), bound)
        }),
        Method::Lbs { m, .. } => {
            scratch.scored.clear();
            scratch.scored.extend(candidates.iter().map(|c| Scored::new(c, c.distance_m)));
            combine(m.limit(), 2.0, base, &mut scratch.scored)
        }
    }
}

/// Top-`limit` selection with pruning. `score(i, candidate, bound)` returns
/// the dissimilarity of `candidates[i]`, or `None` when it is filtered out or
/// certainly above `bound`.
pub(crate) fn aggregate_scored<F>(
    limit: usize,
    exponent: f64,
    base: &CaseBase,
    candidates: &[Neighbor],
    scratch: &mut Scratch,
    mut score: F,
) -> Option<Aggregate>
where
    F: FnMut(usize, &Neighbor, f64) -> Option<f64>,
{
    let heap = &mut scratch.heap;
    heap.clear();
    for (i, c) in candidates.iter().enumerate() {
        if heap.len() < limit {
            if let Some(d) = score(i, c, f64::INFINITY) {
                heap.push(Ranked(Scored::new(c, d)));
            }
            continue;
        }
        // Once `limit` candidates are held only a better one can enter.
        let worst = heap.peek().expect("limit is positive").0;
        let Some(d) = score(i, c, worst.dissimilarity) else {
            continue;
        };
        let s = Scored::new(c, d);
        if rank(&s, &worst).is_lt() {
            heap.pop();
            heap.push(Ranked(s));
        }
    }
    scratch.scored.clear();
    scratch.scored.extend(heap.drain().map(|r| r.0));
    combine(limit, exponent, base, &mut scratch.scored)
}

fn combine(limit: usize, exponent: f64, base: &CaseBase, scored: &mut Vec<Scored>) -> Option<Aggregate> {
    if scored.is_empty() {
        return None;
    }

    if scored.len() > limit {
        scored.select_nth_unstable_by(limit - 1, rank);
        scored.truncate(limit);
    }
    scored.sort_unstable_by(rank);

    let best = scored[0].dissimilarity;
    if best == 0.0 {
        // Infinite similarity: the weighted average degenerates to the mean
        // of the exact matches.
        let exact = scored.iter().take_while(|s| s.dissimilarity == 0.0).count();
        scored.truncate(exact);
        let share = 1.0 / exact as f64;
        let mut total = 0.0;
        for s in scored.iter_mut() {
            s.weight = share;
            total += base.value(s.slot);
        }
        return Some(Aggregate {
            value: total / exact as f64,
            exact_match: true,
        });
    }

    // Similarities relative to the best one keep the ratio finite for any q.
    let mut weight_sum = 0.0;
    let mut weighted = 0.0;
    for s in scored.iter_mut() {
        s.weight = (best / s.dissimilarity).powf(exponent);
        weight_sum += s.weight;
        weighted += s.weight * base.value(s.slot);
    }
    for s in scored.iter_mut() {
        s.weight /= weight_sum;
    }
    Some(Aggregate {
        value: weighted / weight_sum,
        exact_match: false,
    })
}

fn similarity_of(method: &Method, dissimilarity: f64) -> f64 {
    if dissimilarity == 0.0 {
        return f64::INFINITY;
    }
    match method {
        Method::Genome(g) => dissimilarity.powf(-1.0 / g.q),
        Method::Lbs { .. } => 1.0 / (dissimilarity * dissimilarity),
    }
}

pub fn predict(target: TargetRef<'_>, method: &Method, base: &CaseBase) -> Result<PredictionWitness, PredictError> {
    predict_with_scratch(target, method, base, &mut Scratch::default())
}

pub fn predict_with_scratch(
    target: TargetRef<'_>,
    method: &Method,
    base: &CaseBase,
    scratch: &mut Scratch,
) -> Result<PredictionWitness, PredictError> {
    let candidates = base.index().preselect(target.location, method.preselect(), Some(target.id));
    let agg = aggregate(method, target, base, &candidates, scratch).ok_or(PredictError::NoComparables {
        target_id: target.id,
        candidates: candidates.len(),
    })?;
    let comparables = scratch
        .scored
        .iter()
        .map(|s| Comparable {
            id: s.id,
            similarity: ExtendedReal(similarity_of(method, s.dissimilarity)),
            value: base.value(s.slot),
            weight: s.weight,
        })
        .collect();
    Ok(PredictionWitness {
        target_id: target.id,
        predicted_value: agg.value,
        comparables,
        preselect_candidates_count: candidates.len(),
        flags: WitnessFlags {
            exact_match: agg.exact_match,
            fallback_used: false,
        },
    })
}

/// Witness for a target without usable comparables: the training mean of
/// its region, or the global training mean.
pub fn fallback_witness(target: TargetRef<'_>, base: &CaseBase, candidates: usize) -> PredictionWitness {
    PredictionWitness {
        target_id: target.id,
        predicted_value: base.fallback().for_region(target.region),
        comparables: Vec::new(),
        preselect_candidates_count: candidates,
        flags: WitnessFlags {
            exact_match: false,
            fallback_used: true,
        },
    }
}

/// Like [`predict`], substituting [`fallback_witness`] for `NoComparables`.
pub fn predict_or_fallback(target: TargetRef<'_>, method: &Method, base: &CaseBase, scratch: &mut Scratch) -> PredictionWitness {
    match predict_with_scratch(target, method, base, scratch) {
        Ok(w) => w,
        Err(PredictError::NoComparables { candidates, .. }) => fallback_witness(target, base, candidates),
        Err(e) => unreachable!("predict only fails with NoComparables: {e}"),
    }
}

pub fn predict_batch(targets: &[Target], method: &Method, base: &CaseBase) -> Vec<Result<PredictionWitness, PredictError>> {
    let mut scratch = Scratch::default();
    targets
        .iter()
        .map(|t| predict_with_scratch(t.as_ref(), method, base, &mut scratch))
        .collect()
}

#[derive(Debug, Error)]
pub enum WitnessIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Writes one JSON object per line.
pub fn write_witnesses<W: Write>(mut out: W, witnesses: &[PredictionWitness]) -> std::io::Result<()> {
    for w in witnesses {
        serde_json::to_writer(&mut out, w)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_witnesses<R: BufRead>(input: R) -> Result<Vec<PredictionWitness>, WitnessIoError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let w: PredictionWitness = serde_json::from_str(&line).map_err(|e| WitnessIoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !w.predicted_value.is_finite() {
            return Err(WitnessIoError::Parse {
                line: i + 1,
                message: "predicted_value must be finite".into(),
            });
        }
        out.push(w);
    }
    Ok(out)
}
