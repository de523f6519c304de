//! Experiment reports and their CSV/JSON export.
//!
//! Reports hold only values that are a pure function of the config, so two
//! runs of one config produce byte-identical files whatever the worker count.
//! Measured wall time goes to a separate [`TimingReport`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::capture::Illumination;
use crate::pipeline::{Method, StageTimings};
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One decided (scene, illumination, method[, candidate draw][, shot]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub scene_id: u64,
    pub illumination: String,
    pub method: Method,
    pub csa_run: u32,
    pub shot: Option<u32>,
    /// Candidate configs in canonical order.
    pub candidates: Vec<String>,
    /// Affinity of each candidate (MVP methods only).
    pub scores: Vec<f64>,
    pub selected: Vec<String>,
    pub vote_size: usize,
    pub predicted: usize,
    pub true_label: usize,
    pub correct: bool,
    pub capture_latency_s: f64,
    pub compute_latency_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Tally {
    n: u64,
    correct: u64,
    capture_s: f64,
    compute_ms: f64,
}

impl Tally {
    fn add(&mut self, r: &DecisionRow) {
        self.n += 1;
        self.correct += r.correct as u64;
        self.capture_s += r.capture_latency_s;
        self.compute_ms += r.compute_latency_ms;
    }

    fn of<'a>(rows: impl IntoIterator<Item = &'a DecisionRow>) -> Tally {
        let mut t = Tally::default();
        rows.into_iter().for_each(|r| t.add(r));
        t
    }

    fn ratio(x: f64, n: u64) -> f64 {
        if n == 0 {
            0.0
        } else {
            x / n as f64
        }
    }

    fn accuracy(&self) -> f64 {
        Self::ratio(self.correct as f64, self.n)
    }

    fn capture(&self) -> f64 {
        Self::ratio(self.capture_s, self.n)
    }

    fn compute(&self) -> f64 {
        Self::ratio(self.compute_ms, self.n)
    }
}

/// Top-1 accuracy and mean latencies of one method under one light.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: Method,
    pub illumination: String,
    pub n: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub capture_latency_s: f64,
    pub compute_latency_ms: f64,
    pub seed: u64,
}

/// A method over all lights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub capture_latency_s: f64,
    pub compute_latency_ms: f64,
}

/// One value of a swept parameter, over all scenes and lights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub method: Method,
    pub n: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub capture_latency_s: f64,
    pub compute_latency_ms: f64,
    pub seed: u64,
}

impl AblationRow {
    pub fn from_rows(axis: &str, value: &str, seed: u64, rows: &[DecisionRow]) -> Self {
        let t = Tally::of(rows);
        AblationRow {
            axis: axis.to_string(),
            value: value.to_string(),
            method: rows.first().map_or(Method::Mvp, |r| r.method),
            n: t.n,
            correct: t.correct,
            accuracy: t.accuracy(),
            capture_latency_s: t.capture(),
            compute_latency_ms: t.compute(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// The fully resolved config that produced this report.
    pub config: ExperimentConfig,
    pub accuracy: Vec<AccuracyRow>,
    pub methods: Vec<MethodSummary>,
    pub ablation: Vec<AblationRow>,
    /// Physical captures taken, each (scene, light, config, shot) once.
    pub captures_performed: u64,
    /// Caveats about how the results were produced.
    #[serde(default)]
    pub notes: Vec<String>,
    pub decisions: Vec<DecisionRow>,
}

/// Flags the simulated auto-exposure policy on reports that use it.
pub const AE_POLICY_NOTE: &str = "ae and ae_photo use a simulated auto-exposure policy: \
the grid config whose frame-mean exposure is closest to e_opt, ties to the canonical order";

impl ExperimentReport {
    pub fn empty(config: ExperimentConfig) -> Self {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            accuracy: Vec::new(),
            methods: Vec::new(),
            ablation: Vec::new(),
            captures_performed: 0,
            notes: Vec::new(),
            decisions: Vec::new(),
        }
    }

    /// Aggregate a decision log into per-(method, light) and per-method rows.
    pub fn from_decisions(
        config: ExperimentConfig,
        methods: &[Method],
        illuminations: &[Illumination],
        decisions: Vec<DecisionRow>,
        captures_performed: u64,
    ) -> Self {
        let seed = config.seed;
        let mut accuracy = Vec::with_capacity(methods.len() * illuminations.len());
        let mut summaries = Vec::with_capacity(methods.len());
        for &m in methods {
            for l in illuminations {
                let t = Tally::of(
                    decisions
                        .iter()
                        .filter(|r| r.method == m && r.illumination == l.level_id),
                );
                accuracy.push(AccuracyRow {
                    method: m,
                    illumination: l.level_id.clone(),
                    n: t.n,
                    correct: t.correct,
                    accuracy: t.accuracy(),
                    capture_latency_s: t.capture(),
                    compute_latency_ms: t.compute(),
                    seed,
                });
            }
            let t = Tally::of(decisions.iter().filter(|r| r.method == m));
            summaries.push(MethodSummary {
                method: m,
                n: t.n,
                correct: t.correct,
                accuracy: t.accuracy(),
                capture_latency_s: t.capture(),
                compute_latency_ms: t.compute(),
            });
        }
        let notes = if methods
            .iter()
            .any(|m| matches!(m, Method::Ae | Method::AePhoto))
        {
            vec![AE_POLICY_NOTE.to_string()]
        } else {
            Vec::new()
        };
        ExperimentReport {
            accuracy,
            methods: summaries,
            notes,
            captures_performed,
            decisions,
            ..ExperimentReport::empty(config)
        }
    }

    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// `method,illumination,accuracy,capture_latency_s,compute_latency_ms,seed`
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from(
            "method,illumination,accuracy,capture_latency_s,compute_latency_ms,seed\n",
        );
        for r in &self.accuracy {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                csv_field(&r.illumination),
                r.accuracy,
                r.capture_latency_s,
                r.compute_latency_ms,
                r.seed
            );
        }
        out
    }

    /// `axis,value,method,accuracy,capture_latency_s,compute_latency_ms,seed`
    pub fn ablation_csv(&self) -> String {
        let mut out =
            String::from("axis,value,method,accuracy,capture_latency_s,compute_latency_ms,seed\n");
        for r in &self.ablation {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.axis,
                csv_field(&r.value),
                r.method,
                r.accuracy,
                r.capture_latency_s,
                r.compute_latency_ms,
                r.seed
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::from_json(&text)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Measured wall time of a run, kept apart from the deterministic report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub workers: usize,
    pub parallel_build: bool,
    pub wall_s: f64,
    /// Per-stage time summed over all workers.
    pub stage_ms: StageMillis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMillis {
    pub capture: f64,
    pub augment: f64,
    pub encode: f64,
    pub affinity: f64,
    pub filter: f64,
    pub vote: f64,
}

impl TimingReport {
    pub fn new(workers: usize, wall: Duration, t: StageTimings) -> Self {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        TimingReport {
            workers,
            parallel_build: crate::exec::parallel_enabled(),
            wall_s: wall.as_secs_f64(),
            stage_ms: StageMillis {
                capture: ms(t.capture),
                augment: ms(t.augment),
                encode: ms(t.encode),
                affinity: ms(t.affinity),
                filter: ms(t.filter),
                vote: ms(t.vote),
            },
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::at_path(path))
}

/// Write `report.json`, `timing.json`, and `report.csv` (benchmarks) or
/// `ablation.csv` (sweeps) into `dir`, creating it if needed.
pub fn export_report(
    dir: &Path,
    report: &ExperimentReport,
    timing: Option<&TimingReport>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &text)?;
        written.push(p);
        Ok(())
    };
    if !report.methods.is_empty() || report.ablation.is_empty() {
        put("report.csv", report.accuracy_csv())?;
    }
    if !report.ablation.is_empty() {
        put("ablation.csv", report.ablation_csv())?;
    }
    put("report.json", report.to_json()?)?;
    if let Some(t) = timing {
        put("timing.json", serde_json::to_string_pretty(t)? + "\n")?;
    }
    Ok(written)
}
