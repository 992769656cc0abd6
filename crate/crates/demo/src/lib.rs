//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Results cross the boundary as JSON strings; the page parses them with
//! `JSON.parse`.

use serde::Serialize;
use tsad_core::corpus::{gen_corpus, CorpusSpec};
use tsad_core::detectors::{detect, DetectorKind, DetectorParams};
use tsad_core::selector::heuristic_select;
use tsad_core::series::TimeSeries;
use tsad_core::transforms::{detect_period, sr_saliency, SrConfig};
use tsad_core::tuning::{tune, Band};
use wasm_bindgen::prelude::*;

const STEP: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub id: String,
    pub values: Vec<f64>,
    pub truth: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub kind: DetectorKind,
    pub param: f64,
    /// `heuristic` for `auto`, `user` otherwise.
    pub picked_by: &'static str,
    pub period: Option<usize>,
    pub scores: Vec<f64>,
    pub raw_labels: Vec<bool>,
    pub labels: Vec<bool>,
    pub band: Band,
}

/// One synthetic series of the given family.
pub fn sample(family: &str, seed: u64, length: usize) -> Result<Sample, String> {
    let spec = match family {
        "seasonal" => CorpusSpec::mix(1, 0, 0),
        "trend" => CorpusSpec::mix(0, 1, 0),
        "level" => CorpusSpec::mix(0, 0, 1),
        other => return Err(format!("unknown family {other:?}")),
    };
    let spec = CorpusSpec { length, ..spec };
    let s = gen_corpus(&spec, seed)
        .map_err(|e| e.to_string())?
        .pop()
        .ok_or("empty corpus")?;
    Ok(Sample {
        id: s.id,
        values: s.series.values().to_vec(),
        truth: s.labels,
    })
}

fn series(values: &[f64]) -> Result<TimeSeries, String> {
    TimeSeries::from_values(0, STEP, values.to_vec()).map_err(|e| e.to_string())
}

/// Runs a detector and the α tuning. `kind` is `sr`, `hbos`, `shesd` or
/// `auto`; `auto` uses the period heuristic and its default parameter.
pub fn analysis(values: &[f64], kind: &str, param: f64, alpha: f64) -> Result<Analysis, String> {
    let s = series(values)?;
    let (params, picked_by) = if kind == "auto" {
        (heuristic_select(&s).params(), "heuristic")
    } else {
        let kind: DetectorKind = kind.parse().map_err(|e: tsad_core::Error| e.to_string())?;
        (
            DetectorParams::new(kind, param).map_err(|e| e.to_string())?,
            "user",
        )
    };
    let out = detect(&s, &params).map_err(|e| e.to_string())?;
    let tuned = tune(&s, &out.labels, alpha).map_err(|e| e.to_string())?;
    Ok(Analysis {
        kind: params.kind,
        param: params.value,
        picked_by,
        period: detect_period(&s),
        scores: out.scores,
        raw_labels: out.labels,
        labels: tuned.adjusted_labels,
        band: tuned.band,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn generate(family: &str, seed: u32, length: u32) -> Result<String, JsError> {
    let s = sample(family, u64::from(seed), length as usize).map_err(|e| JsError::new(&e))?;
    to_json(&s)
}

#[wasm_bindgen]
pub fn analyze(values: &[f64], kind: &str, param: f64, alpha: f64) -> Result<String, JsError> {
    let a = analysis(values, kind, param, alpha).map_err(|e| JsError::new(&e))?;
    to_json(&a)
}

#[wasm_bindgen]
pub fn saliency(values: &[f64]) -> Result<Vec<f64>, JsError> {
    sr_saliency(values, &SrConfig::default())
        .map(|m| m.scores)
        .map_err(|e| JsError::new(&e.to_string()))
}
