//! Dataset and model files (JSON), written atomically.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use latentsp_core::{CountingNumbers, FactorGraph, HyperParams, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Features, Record};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "latentsp-dataset";
pub const MODEL_FORMAT: &str = "latentsp-model";
pub const DATASET_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    cardinalities: Vec<usize>,
    factors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    format: String,
    version: u32,
    features: Features,
    graph: GraphDoc,
    examples: Vec<Record>,
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so a failed write never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `text` into `T`, reporting the JSON path of the first bad key.
fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = match e.path().to_string() {
            p if p == "." => "(document)".to_string(),
            p => p,
        };
        let inner = e.into_inner();
        let message = if inner.line() > 0 {
            format!("{} (line {}, column {})", strip_position(&inner.to_string()), inner.line(), inner.column())
        } else {
            inner.to_string()
        };
        Error::schema(path, pointer, message)
    })
}

fn strip_position(msg: &str) -> &str {
    msg.rfind(" at line ").map_or(msg, |k| &msg[..k])
}

/// Canonical serialized bytes of a dataset; also what the digest covers.
pub fn dataset_to_string(data: &Dataset) -> Result<String> {
    let doc = DatasetDoc {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        features: data.features,
        graph: GraphDoc { cardinalities: data.graph.cardinalities().to_vec(), factors: data.graph.scopes().to_vec() },
        examples: data.records.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn dataset_from_str(path: &Path, text: &str) -> Result<Dataset> {
    let doc: DatasetDoc = parse(path, text)?;
    if doc.format != DATASET_FORMAT {
        return Err(Error::schema(path, "format", format!("expected \"{DATASET_FORMAT}\", found \"{}\"", doc.format)));
    }
    if doc.version != DATASET_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: doc.version,
            expected: DATASET_VERSION,
            hint: "regenerate the dataset with this build's `gen` command",
        });
    }
    if doc.graph.cardinalities.is_empty() {
        return Err(Error::schema(path, "graph.cardinalities", "must list at least one variable"));
    }
    let graph = FactorGraph::build(doc.graph.cardinalities, doc.graph.factors)
        .map_err(|e| Error::schema(path, "graph.factors", e.to_string()))?;
    let data = Dataset { graph: Arc::new(graph), features: doc.features, records: doc.examples };
    data.validate().map_err(|e| Error::schema(path, "examples", e.to_string()))?;
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, dataset_to_string(data)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_str(path, &read(path)?)
}

/// SHA-256 of the canonical serialization, hex encoded.
pub fn dataset_digest(data: &Dataset) -> Result<String> {
    Ok(hex::encode(Sha256::digest(dataset_to_string(data)?.as_bytes())))
}

/// `f64` as a C99 hexadecimal literal, e.g. `0x1.8p+0` for 1.5.
pub fn format_hex_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    let esign = if e < 0 { '-' } else { '+' };
    format!("{sign}0x{lead}{frac}p{esign}{}", e.abs())
}

/// Inverse of [`format_hex_f64`]; accepts exactly that output form.
pub fn parse_hex_f64(s: &str) -> Option<f64> {
    match s {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (mantissa, exp) = rest.split_once('p')?;
    let e: i64 = exp.parse().ok()?;
    let (lead, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let frac_bits = if frac.is_empty() { 0 } else { u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len())) };
    let bits = match lead {
        "0" if frac_bits == 0 && e == 0 => 0,
        "0" if e == -1022 => frac_bits,
        "1" if (-1022..=1023).contains(&e) => (((e + 1023) as u64) << 52) | frac_bits,
        _ => return None,
    };
    let v = f64::from_bits(bits);
    Some(if neg { -v } else { v })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperDoc {
    epsilon: String,
    c_reg: String,
    counting_node: String,
    counting_factor: String,
    latent_counting_node: String,
    latent_counting_factor: String,
    outer_iters: usize,
    inner_iters: usize,
    message_sweeps: usize,
    tolerance: String,
    latent_tolerance: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    /// Hex-float weights, bit exact.
    weights: Vec<String>,
    /// Decimal rendering for reading only; ignored on load.
    weights_decimal: Vec<f64>,
    hyper: HyperDoc,
    data_digest: String,
}

/// A trained model and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub hyper: HyperParams,
    pub data_digest: String,
}

pub fn model_to_string(m: &ModelFile) -> Result<String> {
    let h = &m.hyper;
    let x = format_hex_f64;
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        weights: m.params.weights.iter().map(|&w| x(w)).collect(),
        weights_decimal: m.params.weights.clone(),
        hyper: HyperDoc {
            epsilon: x(h.epsilon),
            c_reg: x(h.c_reg),
            counting_node: x(h.counting.node),
            counting_factor: x(h.counting.factor),
            latent_counting_node: x(h.latent_counting.node),
            latent_counting_factor: x(h.latent_counting.factor),
            outer_iters: h.outer_iters,
            inner_iters: h.inner_iters,
            message_sweeps: h.message_sweeps,
            tolerance: x(h.tolerance),
            latent_tolerance: x(h.latent_tolerance),
            seed: h.seed,
        },
        data_digest: m.data_digest.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_str(path: &Path, text: &str) -> Result<ModelFile> {
    // Check the header first so an old or foreign file gets a version
    // message rather than a field-by-field schema complaint.
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let head: Header = parse(path, text)?;
    if head.format != MODEL_FORMAT {
        return Err(Error::schema(path, "format", format!("expected \"{MODEL_FORMAT}\", found \"{}\"", head.format)));
    }
    if head.version != MODEL_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: head.version,
            expected: MODEL_VERSION,
            hint: "retrain the model with this build's `train` command",
        });
    }
    let doc: ModelDoc = parse(path, text)?;
    let num = |key: &str, s: &str| {
        parse_hex_f64(s).ok_or_else(|| Error::schema(path, key, format!("\"{s}\" is not a hex float")))
    };
    let weights = doc
        .weights
        .iter()
        .enumerate()
        .map(|(k, s)| num(&format!("weights[{k}]"), s))
        .collect::<Result<Vec<_>>>()?;
    let h = &doc.hyper;
    let hyper = HyperParams {
        epsilon: num("hyper.epsilon", &h.epsilon)?,
        c_reg: num("hyper.c_reg", &h.c_reg)?,
        counting: CountingNumbers {
            node: num("hyper.counting_node", &h.counting_node)?,
            factor: num("hyper.counting_factor", &h.counting_factor)?,
        },
        latent_counting: CountingNumbers {
            node: num("hyper.latent_counting_node", &h.latent_counting_node)?,
            factor: num("hyper.latent_counting_factor", &h.latent_counting_factor)?,
        },
        outer_iters: h.outer_iters,
        inner_iters: h.inner_iters,
        message_sweeps: h.message_sweeps,
        tolerance: num("hyper.tolerance", &h.tolerance)?,
        latent_tolerance: num("hyper.latent_tolerance", &h.latent_tolerance)?,
        seed: h.seed,
    };
    let params = ModelParams::new(weights).map_err(|e| Error::schema(path, "weights", e.to_string()))?;
    Ok(ModelFile { params, hyper, data_digest: doc.data_digest })
}

pub fn save_model(path: &Path, m: &ModelFile) -> Result<()> {
    write_atomic(path, model_to_string(m)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    model_from_str(path, &read(path)?)
}
