//! Property records: CSV ingestion, cleaning, temporal splitting and
//! attribute scaling.
//!
//! The CSV layout is fixed: `id,lat,lon,offer_date,value,region` followed by
//! one column per schema attribute, in schema order. Rows that fail
//! validation are never dropped silently; they are returned in a
//! [`ParseReport`] together with the reason.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Columns that precede the schema attributes in every dataset file.
pub const FIXED_COLUMNS: [&str; 6] = ["id", "lat", "lon", "offer_date", "value", "region"];

/// Attribute names used to identify re-listings of the same physical property.
pub const LIVING_AREA: &str = "living_area";
pub const OBJECT_TYPE: &str = "object_type";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    FileMissing(String),
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid cleaning config: {0}")]
    InvalidCleaningConfig(String),
    #[error("temporal split leaves the {0} side empty")]
    EmptySplit(&'static str),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("attribute count {found} does not match schema length {expected}")]
    AttributeCount { expected: usize, found: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Continuous,
    CategoricalCoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default)]
    pub unit: String,
}

/// Ordered attribute list. The position of an attribute is its index in
/// every attribute vector, weight vector and filter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for a in &attributes {
            if a.name.is_empty() {
                return Err(DatasetError::InvalidSchema("empty attribute name".into()));
            }
            if FIXED_COLUMNS.contains(&a.name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!(
                    "attribute `{}` collides with a fixed column",
                    a.name
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!(
                    "duplicate attribute `{}`",
                    a.name
                )));
            }
        }
        Ok(Self { attributes })
    }

    /// Schema of continuous attributes with the given names and no units.
    pub fn continuous<S: AsRef<str>>(names: &[S]) -> Result<Self, DatasetError> {
        Self::new(
            names
                .iter()
                .map(|n| Attribute {
                    name: n.as_ref().to_string(),
                    kind: AttributeKind::Continuous,
                    unit: String::new(),
                })
                .collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        if !path.exists() {
            return Err(DatasetError::FileMissing(path.display().to_string()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Full expected CSV header.
    pub fn header(&self) -> Vec<String> {
        FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.attributes.iter().map(|a| a.name.clone()))
            .collect()
    }
}

impl TryFrom<Vec<Attribute>> for AttributeSchema {
    type Error = DatasetError;

    fn try_from(value: Vec<Attribute>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AttributeSchema> for Vec<Attribute> {
    fn from(value: AttributeSchema) -> Self {
        value.attributes
    }
}

/// A point on the globe in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub id: u64,
    pub location: GeoPoint,
    pub offer_date: NaiveDate,
    pub attributes: Vec<f64>,
    pub value: Option<f64>,
    pub region: Option<String>,
}

impl Property {
    pub fn is_valued(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    FieldCount { expected: usize, found: usize },
    Missing { column: String },
    Unparseable { column: String, text: String },
    OutOfRange { column: String, text: String },
    DuplicateId { id: u64 },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::FieldCount { expected, found } => {
                write!(f, "expected {expected} fields, found {found}")
            }
            RejectReason::Missing { column } => write!(f, "missing value in `{column}`"),
            RejectReason::Unparseable { column, text } => {
                write!(f, "cannot parse `{text}` in `{column}`")
            }
            RejectReason::OutOfRange { column, text } => {
                write!(f, "`{text}` out of range in `{column}`")
            }
            RejectReason::DuplicateId { id } => write!(f, "duplicate id {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowRejected {
    /// 1-based line number in the file, header is line 1.
    pub line: u64,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseReport {
    pub accepted: usize,
    pub rejected: Vec<RowRejected>,
}

pub fn parse_csv(path: &Path, schema: &AttributeSchema) -> Result<(Vec<Property>, ParseReport), DatasetError> {
    if !path.exists() {
        return Err(DatasetError::FileMissing(path.display().to_string()));
    }
    parse_csv_reader(File::open(path)?, schema)
}

/// Parses dataset CSV from any reader. Structural problems (header) are
/// errors; per-row problems are collected into the report.
pub fn parse_csv_reader<R: Read>(
    reader: R,
    schema: &AttributeSchema,
) -> Result<(Vec<Property>, ParseReport), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let expected = schema.header();
    let found: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != expected {
        return Err(DatasetError::HeaderMismatch {
            expected: expected.join(","),
            found: found.join(","),
        });
    }

    let mut properties = Vec::new();
    let mut report = ParseReport::default();
    let mut ids = HashSet::new();
    for (row, record) in rdr.records().enumerate() {
        let line = record
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line()))
            .unwrap_or(row as u64 + 2);
        let record = match record {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                report.rejected.push(RowRejected {
                    line,
                    reason: RejectReason::Unparseable {
                        column: "<row>".into(),
                        text: "invalid utf-8".into(),
                    },
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match parse_row(&record, schema) {
            Ok(p) => {
                if !ids.insert(p.id) {
                    report.rejected.push(RowRejected {
                        line,
                        reason: RejectReason::DuplicateId { id: p.id },
                    });
                } else {
                    properties.push(p);
                }
            }
            Err(reason) => report.rejected.push(RowRejected { line, reason }),
        }
    }
    report.accepted = properties.len();
    Ok((properties, report))
}

fn parse_row(record: &csv::StringRecord, schema: &AttributeSchema) -> Result<Property, RejectReason> {
    let expected = FIXED_COLUMNS.len() + schema.len();
    if record.len() != expected {
        return Err(RejectReason::FieldCount {
            expected,
            found: record.len(),
        });
    }
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    let required = |i: usize, column: &str| -> Result<&str, RejectReason> {
        let text = field(i);
        if text.is_empty() {
            Err(RejectReason::Missing {
                column: column.to_string(),
            })
        } else {
            Ok(text)
        }
    };
    let number = |i: usize, column: &str| -> Result<f64, RejectReason> {
        let text = required(i, column)?;
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(RejectReason::Unparseable {
                column: column.to_string(),
                text: text.to_string(),
            }),
        }
    };
    let out_of_range = |i: usize, column: &str| RejectReason::OutOfRange {
        column: column.to_string(),
        text: field(i).to_string(),
    };

    let id_text = required(0, "id")?;
    let id = id_text.parse::<u64>().map_err(|_| RejectReason::Unparseable {
        column: "id".into(),
        text: id_text.to_string(),
    })?;
    let lat = number(1, "lat")?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(out_of_range(1, "lat"));
    }
    let lon = number(2, "lon")?;
    if !(-180.0..=180.0).contains(&lon) {
        return Err(out_of_range(2, "lon"));
    }
    let date_text = required(3, "offer_date")?;
    let offer_date =
        NaiveDate::parse_from_str(date_text, "%Y-%m-%d").map_err(|_| RejectReason::Unparseable {
            column: "offer_date".into(),
            text: date_text.to_string(),
        })?;
    let value = if field(4).is_empty() {
        None
    } else {
        let v = number(4, "value")?;
        if v <= 0.0 {
            return Err(out_of_range(4, "value"));
        }
        Some(v)
    };
    let region = match field(5) {
        "" => None,
        r => Some(r.to_string()),
    };
    let attributes = schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(j, a)| number(FIXED_COLUMNS.len() + j, &a.name))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Property {
        id,
        location: GeoPoint::new(lat, lon),
        offer_date,
        attributes,
        value,
        region,
    })
}

/// Writes properties in the canonical dataset CSV layout.
pub fn write_csv<W: Write>(writer: W, schema: &AttributeSchema, properties: &[Property]) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.header())?;
    for p in properties {
        if p.attributes.len() != schema.len() {
            return Err(DatasetError::AttributeCount {
                expected: schema.len(),
                found: p.attributes.len(),
            });
        }
        let mut row = vec![
            p.id.to_string(),
            p.location.lat.to_string(),
            p.location.lon.to_string(),
            p.offer_date.format("%Y-%m-%d").to_string(),
            p.value.map(|v| v.to_string()).unwrap_or_default(),
            p.region.clone().unwrap_or_default(),
        ];
        row.extend(p.attributes.iter().map(|a| a.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub const JAPAN: BoundingBox = BoundingBox {
        lat_min: 24.0,
        lat_max: 46.0,
        lon_min: 122.0,
        lon_max: 146.0,
    };

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }

    pub fn is_well_ordered(&self) -> bool {
        self.lat_min <= self.lat_max && self.lon_min <= self.lon_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub max_price: f64,
    pub bounding_box: BoundingBox,
    pub dedupe: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            max_price: 3.0e8,
            bounding_box: BoundingBox::JAPAN,
            dedupe: true,
        }
    }
}

impl CleaningConfig {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let cfg: CleaningConfig = toml::from_str(text).map_err(|e| DatasetError::InvalidCleaningConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.max_price > 0.0) {
            return Err(DatasetError::InvalidCleaningConfig("max_price must be positive".into()));
        }
        if !self.bounding_box.is_well_ordered() {
            return Err(DatasetError::InvalidCleaningConfig("bounding box is not well ordered".into()));
        }
        Ok(())
    }
}

/// Per-rule removal counts, serialized as `{rule: count}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub duplicate: usize,
    pub price_cap: usize,
    pub outside_box: usize,
}

impl CleaningReport {
    pub fn total(&self) -> usize {
        self.duplicate + self.price_cap + self.outside_box
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct DedupeKey {
    lat_micro: i64,
    lon_micro: i64,
    living_area: Option<u64>,
    object_type: Option<u64>,
}

fn dedupe_key(p: &Property, living_area: Option<usize>, object_type: Option<usize>) -> DedupeKey {
    // +0.0 normalizes negative zero so both compare equal.
    let bits = |i: Option<usize>| i.map(|i| (p.attributes[i] + 0.0).to_bits());
    DedupeKey {
        lat_micro: (p.location.lat * 1e6).round() as i64,
        lon_micro: (p.location.lon * 1e6).round() as i64,
        living_area: bits(living_area),
        object_type: bits(object_type),
    }
}

/// Collapses re-listings to their latest offer and drops price and location
/// outliers. Input order is preserved among the kept records.
pub fn clean(
    properties: &[Property],
    schema: &AttributeSchema,
    config: &CleaningConfig,
) -> (Vec<Property>, CleaningReport) {
    let mut report = CleaningReport::default();
    let mut keep = vec![true; properties.len()];

    if config.dedupe {
        let living = schema.index_of(LIVING_AREA);
        let object = schema.index_of(OBJECT_TYPE);
        let mut latest: HashMap<DedupeKey, usize> = HashMap::new();
        for (i, p) in properties.iter().enumerate() {
            let key = dedupe_key(p, living, object);
            match latest.get_mut(&key) {
                None => {
                    latest.insert(key, i);
                }
                Some(j) => {
                    let other = &properties[*j];
                    // Later offer wins; same date falls back to the larger id.
                    if (p.offer_date, p.id) > (other.offer_date, other.id) {
                        keep[*j] = false;
                        *j = i;
                    } else {
                        keep[i] = false;
                    }
                    report.duplicate += 1;
                }
            }
        }
    }

    let mut kept = Vec::with_capacity(properties.len());
    for (p, k) in properties.iter().zip(keep) {
        if !k {
            continue;
        }
        if p.value.is_some_and(|v| v > config.max_price) {
            report.price_cap += 1;
        } else if !config.bounding_box.contains(p.location) {
            report.outside_box += 1;
        } else {
            kept.push(p.clone());
        }
    }
    (kept, report)
}

/// Splits valued properties at `cutoff`: strictly earlier offers train,
/// offers on or after the cutoff test. Unvalued properties are not part of
/// either side.
pub fn temporal_split(
    properties: &[Property],
    cutoff: NaiveDate,
) -> Result<(Vec<Property>, Vec<Property>), DatasetError> {
    let (train, test): (Vec<Property>, Vec<Property>) = properties
        .iter()
        .filter(|p| p.is_valued())
        .cloned()
        .partition(|p| p.offer_date < cutoff);
    if train.is_empty() {
        return Err(DatasetError::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(DatasetError::EmptySplit("test"));
    }
    Ok((train, test))
}

/// Linear min-max scaling learned from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &[Property], schema: &AttributeSchema) -> Result<Self, DatasetError> {
        let first = train.first().ok_or(DatasetError::EmptyTrainingSet)?;
        let n = schema.len();
        if first.attributes.len() != n {
            return Err(DatasetError::AttributeCount {
                expected: n,
                found: first.attributes.len(),
            });
        }
        let mut min = first.attributes.clone();
        let mut max = first.attributes.clone();
        for p in train {
            if p.attributes.len() != n {
                return Err(DatasetError::AttributeCount {
                    expected: n,
                    found: p.attributes.len(),
                });
            }
            for (i, &a) in p.attributes.iter().enumerate() {
                min[i] = min[i].min(a);
                max[i] = max[i].max(a);
            }
        }
        Ok(Self { min, max })
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Raw span per attribute, zero for constant attributes.
    pub fn span(&self, i: usize) -> f64 {
        self.max[i] - self.min[i]
    }

    pub fn scale_value(&self, i: usize, raw: f64) -> f64 {
        let span = self.span(i);
        if span <= 0.0 {
            return 0.0;
        }
        ((raw - self.min[i]) / span).clamp(0.0, 1.0)
    }

    pub fn scale(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().enumerate().map(|(i, &a)| self.scale_value(i, a)).collect()
    }

    pub fn apply(&self, property: &Property) -> Property {
        Property {
            attributes: self.scale(&property.attributes),
            ..property.clone()
        }
    }
}

pub fn fit_scaler(train: &[Property], schema: &AttributeSchema) -> Result<Scaler, DatasetError> {
    Scaler::fit(train, schema)
}

pub fn apply_scaler(scaler: &Scaler, property: &Property) -> Property {
    scaler.apply(property)
}

/// Mean value per region label plus the global mean, used when a target has
/// no usable comparables.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackMeans {
    pub global: f64,
    pub per_region: BTreeMap<String, f64>,
}

impl FallbackMeans {
    pub fn from_values<'a, I>(items: I) -> Option<Self>
    where
        I: IntoIterator<Item = (f64, Option<&'a str>)>,
    {
        let mut total = 0.0;
        let mut count = 0usize;
        let mut regions: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (v, region) in items {
            total += v;
            count += 1;
            if let Some(r) = region {
                let e = regions.entry(r.to_string()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        if count == 0 {
            return None;
        }
        Some(Self {
            global: total / count as f64,
            per_region: regions.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        })
    }

    pub fn for_region(&self, region: Option<&str>) -> f64 {
        region
            .and_then(|r| self.per_region.get(r).copied())
            .unwrap_or(self.global)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> AttributeSchema {
        AttributeSchema::continuous(&["living_area", "object_type", "year_built"]).unwrap()
    }

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn prop(id: u64, lat: f64, lon: f64, d: &str, value: Option<f64>) -> Property {
        Property {
            id,
            location: GeoPoint::new(lat, lon),
            offer_date: date(d),
            attributes: vec![70.0, 1.0, 1990.0],
            value,
            region: None,
        }
    }

    const HEADER: &str = "id,lat,lon,offer_date,value,region,living_area,object_type,year_built\n";

    fn parse(body: &str) -> (Vec<Property>, ParseReport) {
        parse_csv_reader(format!("{HEADER}{body}").as_bytes(), &schema()).unwrap()
    }

    #[test]
    fn well_formed_rows() {
        let (props, report) = parse(
            "1,35.6,139.7,2016-01-01,1000000,Tokyo,70,1,1990\n\
             2,35.7,139.8,2016-02-01,2000000,Tokyo,80,2,2000\n\
             3,34.6,135.5,2017-05-01,1500000,Osaka,60,1,1985\n",
        );
        assert_eq!(props.len(), 3);
        assert!(report.rejected.is_empty());
        assert_eq!(report.accepted, 3);
        assert_eq!(props[2].region.as_deref(), Some("Osaka"));
        assert_eq!(props[1].attributes, vec![80.0, 2.0, 2000.0]);
    }

    #[test]
    fn empty_value_is_unvalued() {
        let (props, report) = parse("1,35.6,139.7,2016-01-01,,,70,1,1990\n");
        assert!(report.rejected.is_empty());
        assert_eq!(props[0].value, None);
        assert_eq!(props[0].region, None);
    }

    #[test]
    fn latitude_out_of_range_rejected() {
        let (props, report) = parse("1,91.0,139.7,2016-01-01,100,,70,1,1990\n");
        assert!(props.is_empty());
        assert_eq!(
            report.rejected[0].reason,
            RejectReason::OutOfRange {
                column: "lat".into(),
                text: "91.0".into()
            }
        );
        assert_eq!(report.rejected[0].line, 2);
    }

    #[test]
    fn row_errors_are_collected() {
        let (props, report) = parse(
            "1,35,139,2016-01-01,100,,70,,1990\n\
             2,35,139,not-a-date,100,,70,1,1990\n\
             3,35,139,2016-01-01,-5,,70,1,1990\n\
             4,35,139,2016-01-01,100,,70,1\n\
             5,35,139,2016-01-01,100,,70,1,1990\n\
             5,35,139,2016-01-01,100,,70,1,1990\n\
             x,35,139,2016-01-01,100,,70,1,1990\n\
             8,35,139,2016-01-01,100,,NaN,1,1990\n",
        );
        assert_eq!(props.len(), 1);
        let reasons: Vec<_> = report.rejected.iter().map(|r| &r.reason).collect();
        assert!(matches!(reasons[0], RejectReason::Missing { column } if column == "object_type"));
        assert!(matches!(reasons[1], RejectReason::Unparseable { column, .. } if column == "offer_date"));
        assert!(matches!(reasons[2], RejectReason::OutOfRange { column, .. } if column == "value"));
        assert!(matches!(reasons[3], RejectReason::FieldCount { expected: 9, found: 8 }));
        assert_eq!(reasons[4], &RejectReason::DuplicateId { id: 5 });
        assert!(matches!(reasons[5], RejectReason::Unparseable { column, .. } if column == "id"));
        assert!(matches!(reasons[6], RejectReason::Unparseable { column, .. } if column == "living_area"));
    }

    #[test]
    fn header_mismatch() {
        let err = parse_csv_reader("id,lat,lon\n1,2,3\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, DatasetError::HeaderMismatch { .. }));
    }

    #[test]
    fn missing_file() {
        let err = parse_csv(Path::new("/nonexistent/data.csv"), &schema()).unwrap_err();
        assert!(matches!(err, DatasetError::FileMissing(_)));
    }

    #[test]
    fn csv_write_parse_roundtrip() {
        let mut p = prop(7, 35.123456789, 139.5, "2016-03-04", Some(1234.5));
        p.region = Some("Kanto".into());
        let q = prop(8, 35.0, 139.0, "2017-03-04", None);
        let mut buf = Vec::new();
        write_csv(&mut buf, &schema(), &[p.clone(), q.clone()]).unwrap();
        let (back, report) = parse_csv_reader(buf.as_slice(), &schema()).unwrap();
        assert!(report.rejected.is_empty());
        assert_eq!(back, vec![p, q]);
    }

    #[test]
    fn schema_rejects_duplicates_and_fixed_names() {
        assert!(AttributeSchema::continuous(&["a", "a"]).is_err());
        assert!(AttributeSchema::continuous(&["value"]).is_err());
        let json = r#"[{"name":"floor","kind":"continuous","unit":""},{"name":"object_type","kind":"categorical_coded"}]"#;
        let s = AttributeSchema::from_json(json).unwrap();
        assert_eq!(s.index_of("object_type"), Some(1));
        assert_eq!(s.attributes()[1].kind, AttributeKind::CategoricalCoded);
    }

    #[test]
    fn dedupe_keeps_latest() {
        let a = prop(1, 35.0, 139.0, "2016-01-01", Some(100.0));
        let b = prop(2, 35.0, 139.0, "2017-01-01", Some(120.0));
        let (kept, report) = clean(&[a, b.clone()], &schema(), &CleaningConfig::default());
        assert_eq!(kept, vec![b]);
        assert_eq!(report.duplicate, 1);
    }

    #[test]
    fn dedupe_distinguishes_living_area() {
        let a = prop(1, 35.0, 139.0, "2016-01-01", Some(100.0));
        let mut b = prop(2, 35.0, 139.0, "2017-01-01", Some(120.0));
        b.attributes[0] = 71.0;
        let (kept, _) = clean(&[a, b], &schema(), &CleaningConfig::default());
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn price_cap_and_box() {
        let expensive = prop(1, 35.0, 139.0, "2016-01-01", Some(3.5e8));
        let outside = prop(2, 10.0, 10.0, "2016-01-01", Some(100.0));
        let ok = prop(3, 35.5, 139.5, "2016-01-01", Some(3.0e8));
        let (kept, report) = clean(&[expensive, outside, ok.clone()], &schema(), &CleaningConfig::default());
        assert_eq!(kept, vec![ok]);
        assert_eq!(report.price_cap, 1);
        assert_eq!(report.outside_box, 1);
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            r#"{"duplicate":0,"price_cap":1,"outside_box":1}"#
        );
    }

    #[test]
    fn cleaning_config_validation() {
        let mut c = CleaningConfig::default();
        assert!(c.validate().is_ok());
        c.max_price = 0.0;
        assert!(c.validate().is_err());
        c = CleaningConfig::default();
        c.bounding_box.lat_min = 50.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_semantics() {
        let a = prop(1, 35.0, 139.0, "2016-01-15", Some(1.0));
        let b = prop(2, 35.0, 139.1, "2017-06-15", Some(1.0));
        let c = prop(3, 35.0, 139.2, "2017-03-01", Some(1.0));
        let u = prop(4, 35.0, 139.3, "2017-06-15", None);
        let cutoff = date("2017-03-01");
        let (train, test) = temporal_split(&[a.clone(), b.clone(), c.clone(), u], cutoff).unwrap();
        assert_eq!(train, vec![a.clone()]);
        assert_eq!(test, vec![b, c]);
        assert!(matches!(
            temporal_split(&[a], cutoff),
            Err(DatasetError::EmptySplit("test"))
        ));
    }

    #[test]
    fn scaler_cases() {
        let schema = AttributeSchema::continuous(&["a", "b"]).unwrap();
        let mk = |a: f64| Property {
            attributes: vec![a, 5.0],
            ..prop(1, 35.0, 139.0, "2016-01-01", Some(1.0))
        };
        let scaler = fit_scaler(&[mk(10.0), mk(20.0)], &schema).unwrap();
        assert_eq!(scaler.scale_value(0, 15.0), 0.5);
        assert_eq!(scaler.scale_value(0, 25.0), 1.0);
        assert_eq!(scaler.scale_value(0, 5.0), 0.0);
        assert_eq!(scaler.scale_value(1, 5.0), 0.0);
        assert_eq!(scaler.scale_value(1, 123.0), 0.0);
        assert_eq!(apply_scaler(&scaler, &mk(12.5)).attributes, vec![0.25, 0.0]);
        assert!(matches!(fit_scaler(&[], &schema), Err(DatasetError::EmptyTrainingSet)));
    }

    #[test]
    fn fallback_means() {
        let m = FallbackMeans::from_values([(10.0, Some("a")), (20.0, Some("a")), (60.0, None)]).unwrap();
        assert_eq!(m.global, 30.0);
        assert_eq!(m.for_region(Some("a")), 15.0);
        assert_eq!(m.for_region(Some("b")), 30.0);
        assert_eq!(m.for_region(None), 30.0);
    }
}
