//! Per-series online state.
//!
//! Every change to a [`Registration`] goes through an [`Event`]: the request
//! handlers plan an event, journal it and then apply it, and a restart
//! replays the same events. Selection results are recorded in the events so
//! that a replay never depends on the bundle loaded at the time.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tsad_core::detectors::detect;
use tsad_core::selector::{select_for_series, DetectorChoice, SelectorBundle};
use tsad_core::series::TimeSeries;
use tsad_core::tuning::{tune, Band};

use crate::error::{ServiceError, ServiceResult};
use crate::API_SCHEMA_VERSION;

/// Shortest series accepted at registration: every detector can run on it.
pub const MIN_SERIES_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReselectionPolicy {
    pub anomaly_rate_ceiling: f64,
    /// Applied to false alerts over feedback-covered alerts.
    pub false_alert_rate_ceiling: f64,
    pub min_feedback: usize,
    /// Trailing count of streamed points used for the anomaly rate.
    pub window: usize,
    pub min_points: usize,
}

impl Default for ReselectionPolicy {
    fn default() -> Self {
        Self {
            anomaly_rate_ceiling: 0.25,
            false_alert_rate_ceiling: 0.5,
            min_feedback: 10,
            window: 500,
            min_points: 10,
        }
    }
}

impl ReselectionPolicy {
    pub fn check(&self) -> ServiceResult<()> {
        for (name, v) in [
            ("anomaly_rate_ceiling", self.anomaly_rate_ceiling),
            ("false_alert_rate_ceiling", self.false_alert_rate_ceiling),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ServiceError::BadRequest(format!(
                    "{name} must be in (0, 1], got {v}"
                )));
            }
        }
        if self.window == 0 || self.min_points == 0 || self.min_points > self.window {
            return Err(ServiceError::BadRequest(
                "reselection window must be positive and at least min_points".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub index: usize,
    pub is_anomaly: bool,
    /// Timestamp of the point the feedback is about.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Register {
        series: TimeSeries,
        alpha: f64,
        choice: DetectorChoice,
    },
    Append {
        /// Grid values added after the previous last point, gaps filled.
        values: Vec<f64>,
        labels: Vec<bool>,
        reselected: Option<DetectorChoice>,
    },
    Feedback {
        entry: FeedbackEntry,
        reselected: Option<DetectorChoice>,
    },
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub id: String,
    /// The series as first registered, for idempotent re-registration.
    pub initial: TimeSeries,
    pub series: TimeSeries,
    pub alpha: f64,
    pub choice: DetectorChoice,
    pub feedback: Vec<FeedbackEntry>,
    pub reselections: usize,
    /// Feedback before this index predates the active choice.
    feedback_epoch: usize,
    recent: VecDeque<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppendOutcome {
    pub schema_version: u32,
    pub id: String,
    pub indices: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub labels: Vec<bool>,
    pub band: Band,
    pub anomaly_rate: f64,
    pub window_points: usize,
    pub reselection_triggered: bool,
    pub choice: DetectorChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackOutcome {
    pub schema_version: u32,
    pub id: String,
    pub entry: FeedbackEntry,
    pub false_alerts: usize,
    pub covered_alerts: usize,
    pub false_alert_rate: f64,
    pub reselection_triggered: bool,
    pub choice: DetectorChoice,
}

/// Full detection view of a series at one α.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesResult {
    pub schema_version: u32,
    pub id: String,
    pub alpha: f64,
    pub choice: DetectorChoice,
    pub granularity: i64,
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
    pub raw_labels: Vec<bool>,
    pub labels: Vec<bool>,
    pub anomaly_count: usize,
    pub delta: Vec<f64>,
    pub band: Band,
    pub feedback: Vec<FeedbackEntry>,
}

struct Detection {
    raw: Vec<bool>,
    scores: Vec<f64>,
    labels: Vec<bool>,
    delta: Vec<f64>,
    band: Band,
}

fn run_detection(
    series: &TimeSeries,
    choice: &DetectorChoice,
    alpha: f64,
) -> ServiceResult<Detection> {
    let out = detect(series, &choice.params())?;
    let tuned = tune(series, &out.labels, alpha)?;
    Ok(Detection {
        raw: out.labels,
        scores: out.scores,
        labels: tuned.adjusted_labels,
        delta: tuned.delta,
        band: tuned.band,
    })
}

impl Registration {
    pub fn new(id: String, series: TimeSeries, alpha: f64, choice: DetectorChoice) -> Self {
        Self {
            id,
            initial: series.clone(),
            series,
            alpha,
            choice,
            feedback: Vec::new(),
            reselections: 0,
            feedback_epoch: 0,
            recent: VecDeque::new(),
        }
    }

    /// Rebuilds a registration from its journal.
    pub fn replay(id: &str, events: &[Event], policy: &ReselectionPolicy) -> ServiceResult<Self> {
        let Some(Event::Register {
            series,
            alpha,
            choice,
        }) = events.first()
        else {
            return Err(ServiceError::Journal(format!(
                "{id}: journal does not start with a registration"
            )));
        };
        let mut reg = Self::new(id.to_string(), series.clone(), *alpha, *choice);
        for e in &events[1..] {
            reg.apply(e, policy)?;
        }
        Ok(reg)
    }

    pub fn apply(&mut self, event: &Event, policy: &ReselectionPolicy) -> ServiceResult<()> {
        match event {
            Event::Register { .. } => {
                return Err(ServiceError::Journal(format!(
                    "{}: duplicate registration",
                    self.id
                )))
            }
            Event::Append {
                values,
                labels,
                reselected,
            } => {
                let mut all = self.series.values().to_vec();
                all.extend_from_slice(values);
                self.series = TimeSeries::from_values(
                    self.series.timestamps()[0],
                    self.series.granularity(),
                    all,
                )?;
                self.recent.extend(labels.iter().copied());
                while self.recent.len() > policy.window {
                    self.recent.pop_front();
                }
                if let Some(c) = reselected {
                    self.reselect_to(*c);
                }
            }
            Event::Feedback { entry, reselected } => {
                self.feedback.push(*entry);
                if let Some(c) = reselected {
                    self.reselect_to(*c);
                }
            }
        }
        Ok(())
    }

    fn reselect_to(&mut self, choice: DetectorChoice) {
        self.choice = choice;
        self.reselections += 1;
        self.recent.clear();
        self.feedback_epoch = self.feedback.len();
    }

    pub fn result(&self, alpha: f64) -> ServiceResult<SeriesResult> {
        let d = run_detection(&self.series, &self.choice, alpha)?;
        Ok(SeriesResult {
            schema_version: API_SCHEMA_VERSION,
            id: self.id.clone(),
            alpha,
            choice: self.choice,
            granularity: self.series.granularity(),
            timestamps: self.series.timestamps().to_vec(),
            values: self.series.values().to_vec(),
            scores: d.scores,
            raw_labels: d.raw,
            anomaly_count: d.labels.iter().filter(|&&l| l).count(),
            labels: d.labels,
            delta: d.delta,
            band: d.band,
            feedback: self.feedback.clone(),
        })
    }

    /// Validates streamed points and works out the resulting event without
    /// changing any state.
    pub fn plan_append(
        &self,
        points: &[(i64, f64)],
        bundle: Option<&SelectorBundle>,
        policy: &ReselectionPolicy,
    ) -> ServiceResult<(Event, AppendOutcome)> {
        if points.is_empty() {
            return Err(ServiceError::BadRequest("no points to append".into()));
        }
        let g = self.series.granularity();
        let mut last_t = *self
            .series
            .timestamps()
            .last()
            .expect("registered series is non-empty");
        let mut last_v = *self
            .series
            .values()
            .last()
            .expect("registered series is non-empty");
        let mut added = Vec::new();
        for &(t, v) in points {
            if t <= last_t {
                return Err(ServiceError::BadRequest(format!(
                    "timestamp {t} does not follow the last timestamp {last_t}"
                )));
            }
            if (t - last_t) % g != 0 {
                return Err(ServiceError::BadRequest(format!(
                    "timestamp {t} is off the {g}s grid"
                )));
            }
            if !v.is_finite() {
                return Err(ServiceError::BadRequest(format!(
                    "value at timestamp {t} is not finite"
                )));
            }
            let steps = (t - last_t) / g;
            for s in 1..steps {
                added.push(last_v + (v - last_v) * s as f64 / steps as f64);
            }
            added.push(v);
            last_t = t;
            last_v = v;
        }

        let old_len = self.series.len();
        let mut all = self.series.values().to_vec();
        all.extend_from_slice(&added);
        let series = TimeSeries::from_values(self.series.timestamps()[0], g, all)?;
        let d = run_detection(&series, &self.choice, self.alpha)?;
        let labels = d.labels[old_len..].to_vec();

        let mut recent = self.recent.clone();
        recent.extend(labels.iter().copied());
        while recent.len() > policy.window {
            recent.pop_front();
        }
        let flagged = recent.iter().filter(|&&l| l).count();
        let anomaly_rate = if recent.is_empty() {
            0.0
        } else {
            flagged as f64 / recent.len() as f64
        };
        let triggered =
            recent.len() >= policy.min_points && anomaly_rate > policy.anomaly_rate_ceiling;
        let reselected = triggered.then(|| select_for_series(bundle, &series));

        let outcome = AppendOutcome {
            schema_version: API_SCHEMA_VERSION,
            id: self.id.clone(),
            indices: (old_len..series.len()).collect(),
            timestamps: series.timestamps()[old_len..].to_vec(),
            labels: labels.clone(),
            band: Band {
                lower: d.band.lower[old_len..].to_vec(),
                upper: d.band.upper[old_len..].to_vec(),
            },
            anomaly_rate,
            window_points: recent.len(),
            reselection_triggered: triggered,
            choice: reselected.unwrap_or(self.choice),
        };
        let event = Event::Append {
            values: added,
            labels,
            reselected,
        };
        Ok((event, outcome))
    }

    pub fn plan_feedback(
        &self,
        index: usize,
        is_anomaly: bool,
        bundle: Option<&SelectorBundle>,
        policy: &ReselectionPolicy,
    ) -> ServiceResult<(Event, FeedbackOutcome)> {
        if index >= self.series.len() {
            return Err(ServiceError::BadRequest(format!(
                "index {index} out of range for a series of {} points",
                self.series.len()
            )));
        }
        let entry = FeedbackEntry {
            index,
            is_anomaly,
            timestamp: self.series.timestamps()[index],
        };
        let reported = run_detection(&self.series, &self.choice, self.alpha)?.labels;

        // Latest feedback per point since the active choice was made.
        let mut latest = BTreeMap::new();
        for f in self.feedback[self.feedback_epoch..]
            .iter()
            .chain(std::iter::once(&entry))
        {
            latest.insert(f.index, f.is_anomaly);
        }
        let covered: Vec<bool> = latest
            .iter()
            .filter(|(&i, _)| reported[i])
            .map(|(_, &says_anomaly)| says_anomaly)
            .collect();
        let false_alerts = covered.iter().filter(|&&a| !a).count();
        let false_alert_rate = if covered.is_empty() {
            0.0
        } else {
            false_alerts as f64 / covered.len() as f64
        };
        let triggered = covered.len() >= policy.min_feedback
            && false_alert_rate > policy.false_alert_rate_ceiling;
        let reselected = triggered.then(|| select_for_series(bundle, &self.series));

        let outcome = FeedbackOutcome {
            schema_version: API_SCHEMA_VERSION,
            id: self.id.clone(),
            entry,
            false_alerts,
            covered_alerts: covered.len(),
            false_alert_rate,
            reselection_triggered: triggered,
            choice: reselected.unwrap_or(self.choice),
        };
        Ok((Event::Feedback { entry, reselected }, outcome))
    }

    /// Points whose feedback all agrees, with the agreed label.
    pub fn confirmed_labels(&self) -> Vec<(usize, bool)> {
        let mut votes: BTreeMap<usize, Option<bool>> = BTreeMap::new();
        for f in &self.feedback {
            votes
                .entry(f.index)
                .and_modify(|v| {
                    if *v != Some(f.is_anomaly) {
                        *v = None;
                    }
                })
                .or_insert(Some(f.is_anomaly));
        }
        votes
            .into_iter()
            .filter_map(|(i, v)| v.map(|l| (i, l)))
            .collect()
    }

    /// Writes the series and its confirmed labels as a one-series corpus
    /// directory. Unconfirmed points get no label row.
    pub fn export_feedback(&self, dir: &Path) -> ServiceResult<()> {
        fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        tsad_core::io::write_series_csv(&dir.join(format!("{}.csv", self.id)), &self.series)?;
        let mut labels = String::from("series_id,index,is_anomaly\n");
        for (i, l) in self.confirmed_labels() {
            let _ = writeln!(labels, "{},{},{}", self.id, i, u8::from(l));
        }
        let path = dir.join(tsad_core::corpus::LABELS_FILE);
        let tmp = dir.join(".labels.csv.tmp");
        fs::write(&tmp, labels).map_err(|e| ServiceError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| ServiceError::io(&path, e))?;
        Ok(())
    }
}
