use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde_json::json;

use comparables::dataset::{self, AttributeSchema, CleaningConfig, Property, Scaler};
use comparables::evolution::{evolve, EaConfig, SearchSpace};
use comparables::metrics;
use comparables::predictor::{predict_or_fallback, read_witnesses, write_witnesses, CaseBase, Method, Scratch, Target};
use comparables::similarity::SimilarityGenome;
use comparables::synthgen::{self, SynthConfig};

use crate::manifest::Run;

pub const DATASET_FILE: &str = "dataset.csv";
pub const SCHEMA_FILE: &str = "schema.json";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const GENOME_FILE: &str = "genome.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const WITNESS_FILE: &str = "witnesses.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_schema(run: &mut Run, path: &Path) -> Result<AttributeSchema> {
    run.input(path)?;
    Ok(AttributeSchema::load(path)?)
}

/// Loads a dataset that is expected to be canonical: any rejected row is an
/// error.
fn load_dataset(run: &mut Run, path: &Path, schema: &AttributeSchema) -> Result<Vec<Property>> {
    run.input(path)?;
    let (props, report) = dataset::parse_csv(path, schema)?;
    if let Some(first) = report.rejected.first() {
        bail!(
            "{}: {} invalid rows (first at line {}: {:?}); run ingest first",
            path.display(),
            report.rejected.len(),
            first.line,
            first.reason
        );
    }
    Ok(props)
}

fn csv_bytes(schema: &AttributeSchema, props: &[Property]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    dataset::write_csv(&mut buf, schema, props)?;
    Ok(buf)
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn synth(config_path: Option<&Path>, run_dir: &Path) -> Result<PathBuf> {
    let config = match config_path {
        Some(p) => SynthConfig::from_toml(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    let mut run = Run::new("synth", run_dir, serde_json::to_value(&config)?, Some(config.seed));
    if let Some(p) = config_path {
        run.input(p)?;
    }
    let data = synthgen::generate(&config)?;
    run.lap("generate");
    run.output(DATASET_FILE, csv_bytes(&data.schema, &data.properties)?);
    run.output(SCHEMA_FILE, json_bytes(&data.schema)?);
    run.output(TRUTH_FILE, json_bytes(&data.truth)?);
    run.finish()
}

pub fn ingest(
    csv_path: &Path,
    schema_path: &Path,
    cleaning_path: Option<&Path>,
    no_clean: bool,
    run_dir: &Path,
) -> Result<PathBuf> {
    let cleaning = match cleaning_path {
        Some(p) => CleaningConfig::from_toml(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => CleaningConfig::default(),
    };
    let config = json!({ "cleaning": cleaning, "no_clean": no_clean });
    let mut run = Run::new("ingest", run_dir, config, None);
    let schema = load_schema(&mut run, schema_path)?;
    if let Some(p) = cleaning_path {
        run.input(p)?;
    }
    run.input(csv_path)?;
    let (parsed, parse_report) = dataset::parse_csv(csv_path, &schema)?;
    run.lap("parse");
    let (props, cleaning_report) = if no_clean {
        (parsed, None)
    } else {
        let (cleaned, report) = dataset::clean(&parsed, &schema, &cleaning);
        (cleaned, Some(report))
    };
    run.lap("clean");
    let report = json!({
        "parse": parse_report,
        "cleaning": cleaning_report,
        "output_rows": props.len(),
    });
    run.output(DATASET_FILE, csv_bytes(&schema, &props)?);
    run.output(SCHEMA_FILE, json_bytes(&schema)?);
    run.output(INGEST_REPORT_FILE, json_bytes(&report)?);
    run.finish()
}

pub fn split(dataset_path: &Path, schema_path: &Path, cutoff: NaiveDate, run_dir: &Path) -> Result<PathBuf> {
    let mut run = Run::new("split", run_dir, json!({ "cutoff": cutoff }), None);
    let schema = load_schema(&mut run, schema_path)?;
    let props = load_dataset(&mut run, dataset_path, &schema)?;
    let (train, test) = dataset::temporal_split(&props, cutoff)?;
    run.lap("split");
    run.output(TRAIN_FILE, csv_bytes(&schema, &train)?);
    run.output(TEST_FILE, csv_bytes(&schema, &test)?);
    run.output(SCHEMA_FILE, json_bytes(&schema)?);
    run.finish()
}

fn training_base(train: &[Property], schema: &AttributeSchema) -> Result<(Vec<Property>, Scaler)> {
    let valued: Vec<Property> = train.iter().filter(|p| p.is_valued()).cloned().collect();
    if valued.is_empty() {
        bail!("training set is empty");
    }
    let scaler = Scaler::fit(&valued, schema)?;
    Ok((valued, scaler))
}

pub fn train(
    dataset_path: &Path,
    schema_path: &Path,
    ea_config_path: Option<&Path>,
    m_cap: Option<u32>,
    run_dir: &Path,
) -> Result<PathBuf> {
    let config = match ea_config_path {
        Some(p) => EaConfig::from_toml(&read_text(p)?)?,
        None => EaConfig::default(),
    };
    let snapshot = json!({ "ea": config, "m_cap": m_cap.map_or(json!("inf"), |m| json!(m)) });
    let mut run = Run::new("train", run_dir, snapshot, Some(config.rng_seed));
    if let Some(p) = ea_config_path {
        run.input(p)?;
    }
    let schema = load_schema(&mut run, schema_path)?;
    let props = load_dataset(&mut run, dataset_path, &schema)?;
    let (valued, scaler) = training_base(&props, &schema)?;
    let base = CaseBase::new(&valued, &scaler)?;
    run.lap("load");
    let space = SearchSpace::new(&scaler, m_cap);
    let (genome, trace) = evolve(&config, &space, &base)?;
    run.lap("evolve");
    let mut genome_text = genome.to_json(&schema).into_bytes();
    genome_text.push(b'\n');
    run.output(GENOME_FILE, genome_text);
    let mut trace_csv = Vec::new();
    trace.write_csv(&mut trace_csv)?;
    run.output(TRACE_FILE, trace_csv);
    run.finish()
}

/// What `predict` should run: a genome file or one of the named baselines.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodArg {
    Lbs,
    Unweighted,
    Genome(PathBuf),
}

impl MethodArg {
    pub fn parse(s: &str) -> Self {
        match s {
            "lbs" => Self::Lbs,
            "unweighted" => Self::Unweighted,
            path => Self::Genome(PathBuf::from(path)),
        }
    }
}

pub fn predict(
    train_path: &Path,
    test_path: &Path,
    schema_path: &Path,
    method: &MethodArg,
    run_dir: &Path,
) -> Result<PathBuf> {
    let label = match method {
        MethodArg::Lbs => "lbs".to_string(),
        MethodArg::Unweighted => "unweighted".to_string(),
        MethodArg::Genome(p) => p.display().to_string(),
    };
    let mut run = Run::new("predict", run_dir, json!({ "method": label }), None);
    let schema = load_schema(&mut run, schema_path)?;
    let method = match method {
        MethodArg::Lbs => Method::lbs_baseline(),
        MethodArg::Unweighted => Method::unweighted_baseline(schema.len()),
        MethodArg::Genome(p) => {
            run.input(p)?;
            Method::Genome(SimilarityGenome::from_json(&read_text(p)?, &schema)?)
        }
    };
    let train = load_dataset(&mut run, train_path, &schema)?;
    let test = load_dataset(&mut run, test_path, &schema)?;
    let (valued, scaler) = training_base(&train, &schema)?;
    let base = CaseBase::new(&valued, &scaler)?;
    run.lap("load");
    let mut scratch = Scratch::default();
    let witnesses: Vec<_> = test
        .iter()
        .map(|p| predict_or_fallback(Target::new(p, &scaler).as_ref(), &method, &base, &mut scratch))
        .collect();
    run.lap("predict");
    let mut out = Vec::new();
    write_witnesses(&mut out, &witnesses)?;
    run.output(WITNESS_FILE, out);
    run.finish()
}

pub fn evaluate(
    witness_path: &Path,
    test_path: &Path,
    schema_path: &Path,
    min_region_n: usize,
    run_dir: &Path,
) -> Result<PathBuf> {
    let mut run = Run::new("evaluate", run_dir, json!({ "min_region_n": min_region_n }), None);
    let schema = load_schema(&mut run, schema_path)?;
    run.input(witness_path)?;
    let file = fs::File::open(witness_path).with_context(|| format!("reading {}", witness_path.display()))?;
    let witnesses = read_witnesses(std::io::BufReader::new(file))?;
    let test = load_dataset(&mut run, test_path, &schema)?;
    run.lap("load");
    let report = metrics::evaluate(&witnesses, &test, min_region_n)?;
    run.lap("evaluate");
    let mut hist = Vec::new();
    report.histogram.write_csv(&mut hist)?;
    run.output(REPORT_FILE, json_bytes(&report)?);
    run.output(HISTOGRAM_FILE, hist);
    run.finish()
}
