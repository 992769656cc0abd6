//! Corpus-level comparison of fixed-parameter detectors against the selector.
//!
//! `Table2` rows use the bundle's train-set-best fixed value per detector;
//! `Table3` additionally reports each detector (and the selector's chosen
//! kind) at its per-series best grid value on the evaluated corpus.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detectors::{detect, param_grid, DetectorKind};
use crate::error::{Error, Result};
use crate::eval::{segment_counts, Aggregate, Counts};
use crate::selector::{select_for_series, DetectorChoice, GridEval, SelectorBundle};
use crate::series::LabeledSeries;

pub const SELECTOR_ROW: &str = "Auto-Selector";
pub const ORACLE_ROW: &str = "Oracle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Table2,
    Table3,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(Mode::Table2),
            "table3" => Ok(Mode::Table3),
            other => Err(Error::Parse(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Table2 => "table2",
            Mode::Table3 => "table3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub mode: Mode,
    /// Fixed parameter, when the row uses one.
    pub param: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ReportRow {
    fn new(model: &str, mode: Mode, param: Option<f64>, agg: &Aggregate) -> Self {
        Self {
            model: model.to_string(),
            mode,
            param,
            f1: agg.micro.f1,
            precision: agg.micro.precision,
            recall: agg.micro.recall,
            macro_f1: agg.macro_f1,
            tp: agg.counts.tp,
            fp: agg.counts.fp,
            fn_: agg.counts.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub delay: usize,
    pub n_series: usize,
    pub skipped: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub per_series: Vec<SeriesResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub series_id: String,
    pub choice: DetectorChoice,
    pub selector_f1: f64,
    pub oracle_f1: f64,
}

impl EvalReport {
    pub fn row(&self, model: &str, mode: Mode) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:<7} {:>7} {:>8} {:>9} {:>8} {:>8}",
            "Model", "Mode", "Param", "F1", "Precision", "Recall", "MacroF1"
        );
        for r in &self.rows {
            let param = r
                .param
                .map(|p| format!("{p}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<14} {:<7} {:>7} {:>8.4} {:>9.4} {:>8.4} {:>8.4}",
                r.model, r.mode, param, r.f1, r.precision, r.recall, r.macro_f1
            );
        }
        out
    }
}

pub fn model_name(kind: DetectorKind) -> &'static str {
    match kind {
        DetectorKind::Sr => "SR",
        DetectorKind::Hbos => "HBOS",
        DetectorKind::Shesd => "S-H-ESD",
    }
}

#[derive(Debug, Clone)]
pub struct SelectorEvaluation {
    pub aggregate: Aggregate,
    pub choices: Vec<DetectorChoice>,
    pub counts: Vec<Counts>,
}

/// Selects and detects on every series, pooling segment-adjusted counts.
pub fn evaluate_selector(
    bundle: Option<&SelectorBundle>,
    corpus: &[LabeledSeries],
    delay: usize,
) -> Result<SelectorEvaluation> {
    let mut choices = Vec::with_capacity(corpus.len());
    let mut counts = Vec::with_capacity(corpus.len());
    for s in corpus {
        let choice = select_for_series(bundle, &s.series);
        let out = detect(&s.series, &choice.params())?;
        counts.push(segment_counts(&out.labels, &s.labels, delay)?);
        choices.push(choice);
    }
    Ok(SelectorEvaluation {
        aggregate: Aggregate::from_counts(&counts),
        choices,
        counts,
    })
}

pub fn run_benchmark(
    corpus: &[LabeledSeries],
    bundle: &SelectorBundle,
    omega: usize,
    delay: usize,
    mode: Mode,
) -> Result<EvalReport> {
    let (usable, skipped): (Vec<&LabeledSeries>, Vec<&LabeledSeries>) =
        corpus.iter().partition(|s| s.series.len() >= omega);
    let usable: Vec<LabeledSeries> = usable.into_iter().cloned().collect();
    let grids = usable
        .iter()
        .map(|s| GridEval::new(s, delay))
        .collect::<Result<Vec<_>>>()?;

    let mut windowed = bundle.clone();
    windowed.window = omega;
    let selector = evaluate_selector(Some(&windowed), &usable, delay)?;

    let mut rows = Vec::new();
    for kind in DetectorKind::ALL {
        let value = bundle.baseline_params[kind.index()];
        let j = grid_position(kind, value)?;
        let per: Vec<Counts> = grids.iter().map(|g| g.counts[kind.index()][j]).collect();
        rows.push(ReportRow::new(
            model_name(kind),
            Mode::Table2,
            Some(value),
            &Aggregate::from_counts(&per),
        ));
    }
    rows.push(ReportRow::new(
        SELECTOR_ROW,
        Mode::Table2,
        None,
        &selector.aggregate,
    ));

    let oracle: Vec<Counts> = grids
        .iter()
        .map(|g| {
            let (kind, j, _) = g.best_pair();
            g.counts[kind.index()][j]
        })
        .collect();

    if mode == Mode::Table3 {
        let best_for =
            |g: &GridEval, kind: DetectorKind| g.counts[kind.index()][g.best_index(kind)];
        for kind in DetectorKind::ALL {
            let per: Vec<Counts> = grids.iter().map(|g| best_for(g, kind)).collect();
            rows.push(ReportRow::new(
                model_name(kind),
                Mode::Table3,
                None,
                &Aggregate::from_counts(&per),
            ));
        }
        let per: Vec<Counts> = grids
            .iter()
            .zip(&selector.choices)
            .map(|(g, c)| best_for(g, c.kind))
            .collect();
        rows.push(ReportRow::new(
            SELECTOR_ROW,
            Mode::Table3,
            None,
            &Aggregate::from_counts(&per),
        ));
        rows.push(ReportRow::new(
            ORACLE_ROW,
            Mode::Table3,
            None,
            &Aggregate::from_counts(&oracle),
        ));
    }

    let per_series = usable
        .iter()
        .zip(&selector.choices)
        .zip(selector.counts.iter().zip(&oracle))
        .map(|((s, choice), (sel, orc))| SeriesResult {
            series_id: s.id.clone(),
            choice: *choice,
            selector_f1: sel.scores().f1,
            oracle_f1: orc.scores().f1,
        })
        .collect();

    Ok(EvalReport {
        mode,
        delay,
        n_series: usable.len(),
        skipped: skipped.into_iter().map(|s| s.id.clone()).collect(),
        rows,
        per_series,
    })
}

fn grid_position(kind: DetectorKind, value: f64) -> Result<usize> {
    param_grid(kind)
        .iter()
        .position(|&v| v == value)
        .ok_or(Error::ParamOutOfRange {
            kind: kind.as_str(),
            value,
        })
}
