//! Synthetic geolocated property datasets with planted structure.
//!
//! Prices follow
//! `base * field(location) * prod_i effect_i(a_i) * exp(sigma * N(0, 1))`
//! where `field` is one plus a mixture of Gaussian bumps and each relevant
//! attribute contributes `exp(strength * (a_i / range - 0.5))`. Noise
//! attributes are drawn independently of the price.

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AttributeSchema, BoundingBox, GeoPoint, Property};
use crate::geo_index::haversine_m;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub n_relevant_attrs: usize,
    pub n_noise_attrs: usize,
    pub base_price: f64,
    /// Upper end of each raw attribute's uniform range (lower end is 0).
    pub attribute_range: f64,
    /// Log-price span of one relevant attribute over its raw range.
    pub effect_strength: f64,
    pub bounding_box: BoundingBox,
    pub n_bumps: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub width_min_m: f64,
    pub width_max_m: f64,
    /// Standard deviation of the log-normal price noise.
    pub noise_sigma: f64,
    pub outlier_rate: f64,
    pub outlier_multiplier: f64,
    /// Regions are the cells of a `region_grid x region_grid` grid.
    pub region_grid: usize,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            seed: 1,
            n_relevant_attrs: 2,
            n_noise_attrs: 5,
            base_price: 5.0e6,
            attribute_range: 100.0,
            effect_strength: 1.0,
            bounding_box: BoundingBox {
                lat_min: 34.0,
                lat_max: 38.0,
                lon_min: 136.0,
                lon_max: 140.0,
            },
            n_bumps: 24,
            amplitude_min: 1.0,
            amplitude_max: 6.0,
            width_min_m: 8_000.0,
            width_max_m: 40_000.0,
            noise_sigma: 0.1,
            outlier_rate: 0.0,
            outlier_multiplier: 100.0,
            region_grid: 4,
            date_start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            date_end: NaiveDate::from_ymd_opt(2018, 3, 31).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n == 0 {
            return fail("n must be positive");
        }
        if self.n_relevant_attrs + self.n_noise_attrs == 0 {
            return fail("at least one attribute is required");
        }
        if !(self.base_price > 0.0 && self.base_price.is_finite()) {
            return fail("base_price must be positive");
        }
        if !(self.attribute_range > 0.0 && self.attribute_range.is_finite()) {
            return fail("attribute_range must be positive");
        }
        if !(self.effect_strength >= 0.0 && self.effect_strength.is_finite()) {
            return fail("effect_strength must be nonnegative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return fail("outlier_rate must lie in [0, 1]");
        }
        if !(self.outlier_multiplier > 0.0 && self.outlier_multiplier.is_finite()) {
            return fail("outlier_multiplier must be positive");
        }
        let b = &self.bounding_box;
        let valid = |p: GeoPoint| p.is_valid();
        if !b.is_well_ordered() || !valid(GeoPoint::new(b.lat_min, b.lon_min)) || !valid(GeoPoint::new(b.lat_max, b.lon_max)) {
            return fail("bounding box must be well ordered and on the globe");
        }
        if !(0.0 <= self.amplitude_min && self.amplitude_min <= self.amplitude_max && self.amplitude_max.is_finite()) {
            return fail("amplitude range must satisfy 0 <= min <= max");
        }
        if !(0.0 < self.width_min_m && self.width_min_m <= self.width_max_m && self.width_max_m.is_finite()) {
            return fail("bump width range must satisfy 0 < min <= max");
        }
        if self.region_grid == 0 {
            return fail("region_grid must be positive");
        }
        if self.date_start > self.date_end {
            return fail("date_start after date_end");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relevant attributes first, then noise attributes.
    pub fn schema(&self) -> AttributeSchema {
        let names: Vec<String> = (1..=self.n_relevant_attrs)
            .map(|i| format!("relevant_{i}"))
            .chain((1..=self.n_noise_attrs).map(|i| format!("noise_{i}")))
            .collect();
        AttributeSchema::continuous(&names).expect("generated names are unique")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: GeoPoint,
    pub amplitude: f64,
    pub width_m: f64,
}

/// The noiseless price function behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub base_price: f64,
    pub bumps: Vec<Bump>,
    pub relevant_attrs: Vec<usize>,
    pub attribute_range: f64,
    pub effect_strength: f64,
    pub noise_sigma: f64,
    pub outlier_ids: Vec<u64>,
}

impl GroundTruthModel {
    pub fn location_field(&self, p: GeoPoint) -> f64 {
        1.0 + self
            .bumps
            .iter()
            .map(|b| {
                let d = haversine_m(p, b.center);
                b.amplitude * (-(d * d) / (2.0 * b.width_m * b.width_m)).exp()
            })
            .sum::<f64>()
    }

    pub fn attribute_effect(&self, attributes: &[f64]) -> f64 {
        self.relevant_attrs
            .iter()
            .map(|&i| (self.effect_strength * (attributes[i] / self.attribute_range - 0.5)).exp())
            .product()
    }

    pub fn noiseless_price(&self, location: GeoPoint, attributes: &[f64]) -> f64 {
        self.base_price * self.location_field(location) * self.attribute_effect(attributes)
    }

    /// Bound on `|field(p) - field(p')| / d(p, p')` in 1/m. Since the field
    /// is at least one, it also bounds the noiseless price ratio:
    /// `price(p') / price(p) <= 1 + L * d` for equal attributes.
    pub fn location_lipschitz_per_m(&self) -> f64 {
        // max |d/dx A exp(-x^2 / 2w^2)| = A / (w sqrt(e))
        self.bumps
            .iter()
            .map(|b| b.amplitude / (b.width_m * std::f64::consts::E.sqrt()))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub schema: AttributeSchema,
    pub properties: Vec<Property>,
    pub truth: GroundTruthModel,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bb = config.bounding_box;

    let bumps: Vec<Bump> = (0..config.n_bumps)
        .map(|_| Bump {
            center: GeoPoint::new(uniform(&mut rng, bb.lat_min, bb.lat_max), uniform(&mut rng, bb.lon_min, bb.lon_max)),
            amplitude: uniform(&mut rng, config.amplitude_min, config.amplitude_max),
            width_m: uniform(&mut rng, config.width_min_m, config.width_max_m),
        })
        .collect();
    let mut truth = GroundTruthModel {
        base_price: config.base_price,
        bumps,
        relevant_attrs: (0..config.n_relevant_attrs).collect(),
        attribute_range: config.attribute_range,
        effect_strength: config.effect_strength,
        noise_sigma: config.noise_sigma,
        outlier_ids: Vec::new(),
    };

    let n_attrs = config.n_relevant_attrs + config.n_noise_attrs;
    let days = (config.date_end - config.date_start).num_days();
    let grid = config.region_grid;
    let cell = |x: f64, lo: f64, hi: f64| {
        if hi > lo {
            (((x - lo) / (hi - lo)) * grid as f64).floor().clamp(0.0, grid as f64 - 1.0) as usize
        } else {
            0
        }
    };

    let mut properties = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let location = GeoPoint::new(uniform(&mut rng, bb.lat_min, bb.lat_max), uniform(&mut rng, bb.lon_min, bb.lon_max));
        let attributes: Vec<f64> = (0..n_attrs)
            .map(|_| (uniform(&mut rng, 0.0, config.attribute_range) * 100.0).round() / 100.0)
            .collect();
        let offer_date = config.date_start + Duration::days(rng.gen_range(0..=days));
        let z: f64 = StandardNormal.sample(&mut rng);
        let mut value = truth.noiseless_price(location, &attributes) * (config.noise_sigma * z).exp();
        let id = i as u64 + 1;
        if rng.gen::<f64>() < config.outlier_rate {
            value *= config.outlier_multiplier;
            truth.outlier_ids.push(id);
        }
        let region = format!(
            "R{}_{}",
            cell(location.lat, bb.lat_min, bb.lat_max),
            cell(location.lon, bb.lon_min, bb.lon_max)
        );
        properties.push(Property {
            id,
            location,
            offer_date,
            attributes,
            // Whole currency units keep the CSV compact and exact.
            value: Some(value.round().max(1.0)),
            region: Some(region),
        });
    }

    Ok(SynthDataset {
        schema: config.schema(),
        properties,
        truth,
    })
}
