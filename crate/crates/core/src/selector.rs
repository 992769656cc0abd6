//! Per-series detector selection: training labels, the boosted classifier and
//! parameter estimators, the heuristic fallback, bundle persistence and the
//! gated retraining pipeline.

use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::evaluate_selector;
use crate::detectors::{detect_grid, param_grid, DetectorKind, DetectorParams};
use crate::error::{Error, Result};
use crate::eval::{segment_counts, split_corpus, Counts, DEFAULT_DELAY};
use crate::features::{self, FeatureVector, SCHEMA_VERSION};
use crate::gbdt::{argmax, GbdtClassifier, GbdtConfig, GbdtRegressor};
use crate::series::{last_window, LabeledSeries, TimeSeries, DEFAULT_WINDOW};
use crate::transforms::detect_period;

pub const BUNDLE_MAGIC: &str = "ADSB1";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.5;
pub const MIN_ESTIMATOR_SAMPLES: usize = 5;
pub const DEFAULT_LATENCY_BUDGET_MS: f64 = 250.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLabel {
    pub series_id: String,
    pub best_kind: DetectorKind,
    pub best_param: f64,
    pub best_f1: f64,
}

/// Segment-adjusted counts for every (kind, grid value) pair of one series,
/// indexed `[kind.index()][grid position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEval {
    pub counts: Vec<Vec<Counts>>,
}

impl GridEval {
    pub fn new(s: &LabeledSeries, delay: usize) -> Result<Self> {
        let counts = DetectorKind::ALL
            .iter()
            .map(|&kind| {
                detect_grid(&s.series, kind, param_grid(kind))?
                    .iter()
                    .map(|out| segment_counts(&out.labels, &s.labels, delay))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { counts })
    }

    pub fn f1(&self, kind: DetectorKind, j: usize) -> f64 {
        self.counts[kind.index()][j].scores().f1
    }

    /// Grid position of the best value for `kind`; ties go to the smaller index.
    pub fn best_index(&self, kind: DetectorKind) -> usize {
        let f1s: Vec<f64> = (0..param_grid(kind).len())
            .map(|j| self.f1(kind, j))
            .collect();
        argmax(&f1s)
    }

    /// Overall best pair in kind order, then grid order.
    pub fn best_pair(&self) -> (DetectorKind, usize, f64) {
        let mut best = (DetectorKind::Sr, 0, self.f1(DetectorKind::Sr, 0));
        for kind in DetectorKind::ALL {
            for j in 0..param_grid(kind).len() {
                let f = self.f1(kind, j);
                if f > best.2 {
                    best = (kind, j, f);
                }
            }
        }
        best
    }
}

/// Turns a grid evaluation into a training label; an all-zero grid takes the
/// heuristic's choice.
pub fn label_from_grid(s: &LabeledSeries, grid: &GridEval) -> TrainingLabel {
    let (kind, j, f1) = grid.best_pair();
    let (best_kind, best_param) = if f1 > 0.0 {
        (kind, param_grid(kind)[j])
    } else {
        let h = heuristic_select(&s.series);
        (h.kind, h.param)
    };
    TrainingLabel {
        series_id: s.id.clone(),
        best_kind,
        best_param,
        best_f1: f1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub labels: Vec<TrainingLabel>,
    /// Ids of series shorter than the window.
    pub skipped: Vec<String>,
}

pub fn build_training_labels(corpus: &[LabeledSeries], omega: usize) -> Result<LabelSet> {
    let mut labels = Vec::with_capacity(corpus.len());
    let mut skipped = Vec::new();
    for s in corpus {
        if s.series.len() < omega {
            skipped.push(s.id.clone());
            continue;
        }
        labels.push(label_from_grid(s, &GridEval::new(s, DEFAULT_DELAY)?));
    }
    Ok(LabelSet { labels, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceSource {
    Classifier,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorChoice {
    pub kind: DetectorKind,
    pub param: f64,
    pub confidence: f64,
    pub source: ChoiceSource,
}

impl DetectorChoice {
    pub fn params(&self) -> DetectorParams {
        DetectorParams {
            kind: self.kind,
            value: self.param,
        }
    }
}

/// Periodic series go to S-H-ESD, everything else to SR, at default values.
pub fn heuristic_select(series: &TimeSeries) -> DetectorChoice {
    let kind = if detect_period(series).is_some() {
        DetectorKind::Shesd
    } else {
        DetectorKind::Sr
    };
    DetectorChoice {
        kind,
        param: kind.default_param(),
        confidence: 0.0,
        source: ChoiceSource::Heuristic,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub corpus_hash: String,
    /// Excluded from [`SelectorBundle::model_hash`].
    pub created: String,
    pub n_train: usize,
    pub gbdt: GbdtConfig,
    pub releasable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorBundle {
    pub format_version: u32,
    pub feature_schema_version: u32,
    pub feature_schema: Vec<String>,
    pub confidence_floor: f64,
    pub window: usize,
    pub delay: usize,
    pub classifier: GbdtClassifier,
    /// One per kind, in [`DetectorKind::ALL`] order.
    pub estimators: Vec<GbdtRegressor>,
    /// Train-set-best fixed value per kind.
    pub baseline_params: Vec<f64>,
    pub metadata: BundleMetadata,
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    model_hash: String,
    bundle: SelectorBundle,
}

impl SelectorBundle {
    /// SHA-256 over everything except the creation date.
    pub fn model_hash(&self) -> String {
        let mut copy = self.clone();
        copy.metadata.created.clear();
        let bytes = serde_json::to_vec(&copy).expect("bundle serialises");
        hex(&Sha256::digest(&bytes))
    }

    pub fn estimate(&self, kind: DetectorKind, x: &[f64]) -> f64 {
        kind.clamp_to_grid(self.estimators[kind.index()].predict(x))
    }

    pub fn baseline(&self, kind: DetectorKind) -> DetectorParams {
        DetectorParams {
            kind,
            value: self.baseline_params[kind.index()],
        }
    }

    fn check_schema(&self) -> Result<()> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "bundle format {} (expected {BUNDLE_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.feature_schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "feature schema version {} (expected {SCHEMA_VERSION})",
                self.feature_schema_version
            )));
        }
        let names = features::feature_names();
        if self.feature_schema != names {
            return Err(Error::SchemaMismatch(format!(
                "bundle has {} feature names, this build extracts {}",
                self.feature_schema.len(),
                names.len()
            )));
        }
        let dims = std::iter::once(self.classifier.n_features)
            .chain(self.estimators.iter().map(|e| e.n_features));
        if self.estimators.len() != DetectorKind::ALL.len()
            || self.baseline_params.len() != DetectorKind::ALL.len()
            || self.classifier.n_classes != DetectorKind::ALL.len()
            || dims.into_iter().any(|d| d != names.len())
        {
            return Err(Error::SchemaMismatch(
                "model shapes do not match the feature schema".into(),
            ));
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_bundle(bundle: &SelectorBundle, path: &Path) -> Result<()> {
    let file = BundleFile {
        model_hash: bundle.model_hash(),
        bundle: bundle.clone(),
    };
    let mut out = format!("{BUNDLE_MAGIC}\n").into_bytes();
    serde_json::to_writer(&mut out, &file).map_err(|e| Error::Parse(e.to_string()))?;
    out.push(b'\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<SelectorBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<SelectorBundle> {
    let corrupt = |why: &str| Error::CorruptBundle(why.to_string());
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header"))?;
    let magic = &bytes[..newline];
    if magic != BUNDLE_MAGIC.as_bytes() {
        if magic.starts_with(b"ADSB") {
            return Err(Error::SchemaMismatch(format!(
                "bundle header {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        return Err(corrupt("bad magic"));
    }
    let file: BundleFile = serde_json::from_slice(&bytes[newline + 1..])
        .map_err(|e| Error::CorruptBundle(e.to_string()))?;
    file.bundle.check_schema()?;
    if file.bundle.model_hash() != file.model_hash {
        return Err(corrupt("model hash mismatch"));
    }
    Ok(file.bundle)
}

/// Features of the series' trailing window.
pub fn series_features(series: &TimeSeries, omega: usize) -> Result<FeatureVector> {
    features::extract_features(last_window(series, omega)?.values())
}

pub fn select(
    bundle: &SelectorBundle,
    features: &FeatureVector,
    series: &TimeSeries,
) -> Result<DetectorChoice> {
    if features.schema_version != bundle.feature_schema_version
        || features.values.len() != bundle.feature_schema.len()
    {
        return Err(Error::SchemaMismatch(format!(
            "feature vector v{} with {} values, bundle expects v{} with {}",
            features.schema_version,
            features.values.len(),
            bundle.feature_schema_version,
            bundle.feature_schema.len()
        )));
    }
    let probs = bundle.classifier.predict_proba(&features.values);
    Ok(choose(bundle, &probs, &features.values, series))
}

fn choose(
    bundle: &SelectorBundle,
    probs: &[f64],
    x: &[f64],
    series: &TimeSeries,
) -> DetectorChoice {
    let best = argmax(probs);
    let confidence = probs[best];
    if confidence >= bundle.confidence_floor {
        let kind = DetectorKind::from_index(best).expect("three classes");
        DetectorChoice {
            kind,
            param: bundle.estimate(kind, x),
            confidence,
            source: ChoiceSource::Classifier,
        }
    } else {
        heuristic_select(series)
    }
}

/// Never fails: any problem with the bundle or the series falls back to the
/// heuristic.
pub fn select_for_series(bundle: Option<&SelectorBundle>, series: &TimeSeries) -> DetectorChoice {
    bundle
        .and_then(|b| {
            let f = series_features(series, b.window).ok()?;
            select(b, &f, series).ok()
        })
        .unwrap_or_else(|| heuristic_select(series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gbdt: GbdtConfig,
    pub confidence_floor: f64,
    pub window: usize,
    pub delay: usize,
    /// Train on every non-overlapping window of each series instead of only
    /// the last one. Selection always uses the last window.
    pub all_windows: bool,
    pub estimator_target: EstimatorTarget,
}

/// What the parameter estimators regress on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTarget {
    /// The label's value: the smallest grid value reaching the best F1.
    Label,
    /// The median of all grid values of the label's kind that reach that
    /// kind's best F1. Tied optima usually form a plateau whose lower edge
    /// sits next to a cliff, so the centre is the safer regression target.
    PlateauCentre,
}

impl Prepared {
    pub fn estimator_target(&self, how: EstimatorTarget) -> f64 {
        let kind = self.label.best_kind;
        if how == EstimatorTarget::Label || self.label.best_f1 == 0.0 {
            return self.label.best_param;
        }
        let grid = param_grid(kind);
        let best = self.grid.f1(kind, self.grid.best_index(kind));
        let plateau: Vec<f64> = (0..grid.len())
            .filter(|&j| self.grid.f1(kind, j) == best)
            .map(|j| grid[j])
            .collect();
        let m = plateau.len();
        if m % 2 == 1 {
            plateau[m / 2]
        } else {
            0.5 * (plateau[m / 2 - 1] + plateau[m / 2])
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gbdt: GbdtConfig::default(),
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
            window: DEFAULT_WINDOW,
            delay: DEFAULT_DELAY,
            all_windows: true,
            estimator_target: EstimatorTarget::PlateauCentre,
        }
    }
}

/// Per-series training artifacts, reusable across evaluations.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub label: TrainingLabel,
    pub grid: GridEval,
    /// Training rows, last window first.
    pub rows: Vec<FeatureVector>,
}

/// Non-overlapping windows aligned to the series end, last first.
pub fn segment_windows(values: &[f64], omega: usize) -> Vec<&[f64]> {
    let mut out = Vec::new();
    let mut end = values.len();
    while omega > 0 && end >= omega {
        out.push(&values[end - omega..end]);
        end -= omega;
    }
    out
}

pub fn prepare(
    corpus: &[LabeledSeries],
    cfg: &TrainConfig,
) -> Result<(Vec<Prepared>, Vec<String>)> {
    let window = cfg.window;
    let mut out = Vec::with_capacity(corpus.len());
    let mut skipped = Vec::new();
    for s in corpus {
        if s.series.len() < window {
            skipped.push(s.id.clone());
            continue;
        }
        let grid = GridEval::new(s, cfg.delay)?;
        let rows = if cfg.all_windows {
            segment_windows(s.series.values(), window)
                .into_iter()
                .map(features::extract_features)
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![series_features(&s.series, window)?]
        };
        out.push(Prepared {
            label: label_from_grid(s, &grid),
            rows,
            grid,
        });
    }
    Ok((out, skipped))
}

pub fn corpus_hash(corpus: &[LabeledSeries]) -> String {
    let mut h = Sha256::new();
    for s in corpus {
        h.update(s.id.as_bytes());
        h.update([0]);
        for (t, v) in s.series.points() {
            h.update(t.to_le_bytes());
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(s.labels.iter().map(|&l| l as u8).collect::<Vec<_>>());
    }
    hex(&h.finalize())
}

pub fn train_bundle(train: &[LabeledSeries], cfg: &TrainConfig) -> Result<SelectorBundle> {
    let (prepared, _) = prepare(train, cfg)?;
    train_from_prepared(&prepared, corpus_hash(train), cfg)
}

/// Flattens per-series rows into a matrix with one target per row.
fn rows_for<'a, T: Copy>(
    prepared: impl Iterator<Item = &'a Prepared>,
    target: impl Fn(&Prepared) -> T,
) -> (Vec<Vec<f64>>, Vec<T>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for p in prepared {
        for r in &p.rows {
            x.push(r.values.clone());
            y.push(target(p));
        }
    }
    (x, y)
}

pub fn train_from_prepared(
    prepared: &[Prepared],
    corpus_hash: String,
    cfg: &TrainConfig,
) -> Result<SelectorBundle> {
    if prepared.is_empty() {
        return Err(Error::DegenerateData("no usable training series".into()));
    }
    if !(0.0..=1.0).contains(&cfg.confidence_floor) {
        return Err(Error::OutOfRange {
            value: cfg.confidence_floor,
            min: 0.0,
            max: 1.0,
        });
    }
    let (x, y) = rows_for(prepared.iter(), |p| p.label.best_kind.index());
    let classifier = GbdtClassifier::fit(&x, &y, DetectorKind::ALL.len(), &cfg.gbdt)?;

    let mut estimators = Vec::with_capacity(3);
    let mut baseline_params = Vec::with_capacity(3);
    for kind in DetectorKind::ALL {
        let rows: Vec<&Prepared> = prepared
            .iter()
            .filter(|p| p.label.best_kind == kind)
            .collect();
        estimators.push(if rows.len() < MIN_ESTIMATOR_SAMPLES {
            GbdtRegressor::constant(features::FEATURE_DIM, kind.default_param())
        } else {
            let (xs, ts) = rows_for(rows.iter().copied(), |p| {
                p.estimator_target(cfg.estimator_target)
            });
            GbdtRegressor::fit(&xs, &ts, &cfg.gbdt)?
        });

        let pooled: Vec<f64> = (0..param_grid(kind).len())
            .map(|j| {
                let mut c = Counts::default();
                for p in prepared {
                    c.add(p.grid.counts[kind.index()][j]);
                }
                c.scores().f1
            })
            .collect();
        baseline_params.push(param_grid(kind)[argmax(&pooled)]);
    }

    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .and_then(|d| chrono::DateTime::from_timestamp(d.as_secs() as i64, 0))
        .map(|d| d.to_rfc3339())
        .unwrap_or_default();

    Ok(SelectorBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        feature_schema_version: SCHEMA_VERSION,
        feature_schema: features::feature_names(),
        confidence_floor: cfg.confidence_floor,
        window: cfg.window,
        delay: cfg.delay,
        classifier,
        estimators,
        baseline_params,
        metadata: BundleMetadata {
            corpus_hash,
            created,
            n_train: prepared.len(),
            gbdt: cfg.gbdt.clone(),
            releasable: true,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    pub train: TrainConfig,
    pub split_seed: u64,
    pub latency_budget_ms: f64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            split_seed: 0,
            latency_budget_ms: DEFAULT_LATENCY_BUDGET_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorF1 {
    pub kind: DetectorKind,
    pub param: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub passed: bool,
    pub reasons: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub skipped: Vec<String>,
    pub selector_f1: f64,
    pub previous_f1: Option<f64>,
    pub per_detector: Vec<DetectorF1>,
    /// Rows: label kind of the test series; columns: selected kind.
    pub confusion: [[usize; 3]; 3],
    pub latency_ms_per_series: f64,
    pub latency_budget_ms: f64,
    pub model_hash: String,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub bundle: SelectorBundle,
    pub report: GateReport,
}

/// Splits 3:1, trains on the larger part and gates on the held-out part. A
/// failed gate still returns the bundle, marked not releasable.
pub fn retrain_pipeline(
    corpus: &[LabeledSeries],
    previous: Option<&SelectorBundle>,
    cfg: &RetrainConfig,
) -> Result<RetrainOutcome> {
    let (train, test) = split_corpus(corpus, cfg.split_seed).map_err(|e| match e {
        Error::TooFew { needed, got } => Error::DegenerateData(format!(
            "corpus has {got} series, at least {needed} are needed for a 3:1 split"
        )),
        other => other,
    })?;
    let (train_prep, mut skipped) = prepare(&train, &cfg.train)?;
    let held_out = TrainConfig {
        all_windows: false,
        ..cfg.train.clone()
    };
    let (test_prep, test_skipped) = prepare(&test, &held_out)?;
    skipped.extend(test_skipped);
    let mut bundle = train_from_prepared(&train_prep, corpus_hash(&train), &cfg.train)?;

    let test_series: Vec<LabeledSeries> = test
        .into_iter()
        .filter(|s| s.series.len() >= cfg.train.window)
        .collect();
    let started = Instant::now();
    let evaluation = evaluate_selector(Some(&bundle), &test_series, cfg.train.delay)?;
    let latency_ms_per_series = if test_series.is_empty() {
        0.0
    } else {
        started.elapsed().as_secs_f64() * 1000.0 / test_series.len() as f64
    };
    let selector_f1 = evaluation.aggregate.micro.f1;
    let previous_f1 = previous
        .map(|p| evaluate_selector(Some(p), &test_series, cfg.train.delay))
        .transpose()?
        .map(|e| e.aggregate.micro.f1);

    let mut per_detector = Vec::new();
    for kind in DetectorKind::ALL {
        let j = param_grid(kind)
            .iter()
            .position(|&v| v == bundle.baseline_params[kind.index()])
            .expect("baseline from grid");
        let mut c = Counts::default();
        for p in &test_prep {
            c.add(p.grid.counts[kind.index()][j]);
        }
        per_detector.push(DetectorF1 {
            kind,
            param: param_grid(kind)[j],
            f1: c.scores().f1,
        });
    }

    let mut confusion = [[0usize; 3]; 3];
    for (p, choice) in test_prep.iter().zip(&evaluation.choices) {
        confusion[p.label.best_kind.index()][choice.kind.index()] += 1;
    }

    let mut reasons = Vec::new();
    if let Some(prev) = previous_f1 {
        if selector_f1 < prev {
            reasons.push(format!(
                "selector F1 {selector_f1:.4} below previous {prev:.4}"
            ));
        }
    }
    if latency_ms_per_series > cfg.latency_budget_ms {
        reasons.push(format!(
            "selection latency {latency_ms_per_series:.2} ms over budget {:.2} ms",
            cfg.latency_budget_ms
        ));
    }
    let passed = reasons.is_empty();
    bundle.metadata.releasable = passed;
    let report = GateReport {
        passed,
        reasons,
        n_train: train_prep.len(),
        n_test: test_prep.len(),
        skipped,
        selector_f1,
        previous_f1,
        per_detector,
        confusion,
        latency_ms_per_series,
        latency_budget_ms: cfg.latency_budget_ms,
        model_hash: bundle.model_hash(),
    };
    Ok(RetrainOutcome { bundle, report })
}
