//! Accuracy and uncertainty metrics over per-sample evaluation records.
//!
//! Records CSV header:
//! `predicted,actual,vacuity,mean_evidence,max_softmax,is_ood`
//! with `max_softmax` left empty for evidential models.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::format_f64;
use crate::error::{Error, Result};

pub const RECORDS_HEADER: &str = "predicted,actual,vacuity,mean_evidence,max_softmax,is_ood";

/// Census thresholds on mean evidence.
pub const CENSUS_THRESHOLDS: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub predicted: usize,
    pub actual: usize,
    pub vacuity: f64,
    pub mean_evidence: f64,
    pub max_softmax: Option<f64>,
    pub is_ood: bool,
}

impl SampleRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.actual
    }

    /// OOD score: vacuity, or `1 - max_softmax` when a softmax score is present.
    pub fn ood_score(&self) -> f64 {
        match self.max_softmax {
            Some(p) => 1.0 - p,
            None => self.vacuity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub coverage: f64,
    /// `None` when no record falls under the threshold.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKPoint {
    pub fraction: f64,
    pub selected: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CensusBuckets {
    pub le_0_01: usize,
    pub le_0_1: usize,
    pub le_1_0: usize,
    pub gt_1_0: usize,
}

impl CensusBuckets {
    pub fn total(&self) -> usize {
        self.le_1_0 + self.gt_1_0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VacuitySummary {
    pub ind_mean: f64,
    pub ood_mean: Option<f64>,
}

fn nonempty(records: &[SampleRecord], op: &str) -> Result<()> {
    if records.is_empty() {
        Err(Error::InvalidInput(format!("{op}: no records")))
    } else {
        Ok(())
    }
}

pub fn accuracy(records: &[SampleRecord]) -> Result<f64> {
    nonempty(records, "accuracy")?;
    let hits = records.iter().filter(|r| r.correct()).count();
    Ok(hits as f64 / records.len() as f64)
}

pub fn accuracy_vacuity_curve(records: &[SampleRecord], thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    nonempty(records, "accuracy_vacuity_curve")?;
    for w in thresholds.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidInput("thresholds must be sorted ascending".into()));
        }
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvalidInput(format!("threshold {t} outside (0, 1]")));
    }
    let n = records.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (count, hits) = records
                .iter()
                .filter(|r| r.vacuity <= t)
                .fold((0usize, 0usize), |(c, h), r| (c + 1, h + r.correct() as usize));
            CurvePoint {
                threshold: t,
                coverage: count as f64 / n,
                accuracy: (count > 0).then(|| hits as f64 / count as f64),
            }
        })
        .collect())
}

pub fn topk_confident_accuracy(records: &[SampleRecord], fractions: &[f64]) -> Result<Vec<TopKPoint>> {
    nonempty(records, "topk_confident_accuracy")?;
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::InvalidInput(format!("fraction {f} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    // sort_by is stable, so equal vacuities keep input order
    order.sort_by(|&a, &b| records[a].vacuity.total_cmp(&records[b].vacuity));
    let n = records.len();
    Ok(fractions
        .iter()
        .map(|&f| {
            let k = ((f * n as f64).ceil() as usize).clamp(1, n);
            let hits = order[..k].iter().filter(|&&i| records[i].correct()).count();
            TopKPoint {
                fraction: f,
                selected: k,
                accuracy: hits as f64 / k as f64,
            }
        })
        .collect())
}

pub fn evidence_census(records: &[SampleRecord]) -> CensusBuckets {
    let mut b = CensusBuckets::default();
    for r in records {
        let m = r.mean_evidence;
        if m <= CENSUS_THRESHOLDS[0] {
            b.le_0_01 += 1;
        }
        if m <= CENSUS_THRESHOLDS[1] {
            b.le_0_1 += 1;
        }
        if m <= CENSUS_THRESHOLDS[2] {
            b.le_1_0 += 1;
        } else {
            b.gt_1_0 += 1;
        }
    }
    b
}

pub fn vacuity_summary(records: &[SampleRecord]) -> Result<VacuitySummary> {
    let mean = |ood: bool| {
        let v: Vec<f64> = records.iter().filter(|r| r.is_ood == ood).map(|r| r.vacuity).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let ind_mean = mean(false)
        .ok_or_else(|| Error::InvalidInput("vacuity_summary: no in-distribution records".into()))?;
    Ok(VacuitySummary {
        ind_mean,
        ood_mean: mean(true),
    })
}

/// Mann–Whitney AUROC: probability a positive outscores a negative, ties ½.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput("auroc needs nonempty positive and negative lists".into()));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("auroc scores must not be NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // midranks in doubled units keep the arithmetic integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        rank_sum2 += mid2 * all[i..=j].iter().filter(|(_, p)| *p).count() as u128;
        i = j + 1;
    }
    let np = pos.len() as u128;
    let nn = neg.len() as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// AUROC with OOD records as positives, scored by [`SampleRecord::ood_score`].
pub fn ood_auroc(records: &[SampleRecord]) -> Result<Option<f64>> {
    let pos: Vec<f64> = records.iter().filter(|r| r.is_ood).map(SampleRecord::ood_score).collect();
    let neg: Vec<f64> = records.iter().filter(|r| !r.is_ood).map(SampleRecord::ood_score).collect();
    if pos.is_empty() {
        return Ok(None);
    }
    auroc(&pos, &neg).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub accuracy: f64,
    pub census: CensusBuckets,
    pub vacuity: VacuitySummary,
    pub auroc: Option<f64>,
}

pub fn summarize(records: &[SampleRecord]) -> Result<MetricsSummary> {
    let ind: Vec<SampleRecord> = records.iter().filter(|r| !r.is_ood).cloned().collect();
    Ok(MetricsSummary {
        n: records.len(),
        accuracy: accuracy(&ind)?,
        census: evidence_census(&ind),
        vacuity: vacuity_summary(records)?,
        auroc: ood_auroc(records)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,coverage,accuracy\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", format_f64(p.threshold), format_f64(p.coverage), opt(p.accuracy));
    }
    s
}

pub fn topk_csv(points: &[TopKPoint]) -> String {
    let mut s = String::from("fraction,selected,accuracy\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", format_f64(p.fraction), p.selected, format_f64(p.accuracy));
    }
    s
}

pub fn census_csv(b: &CensusBuckets) -> String {
    format!(
        "le_0.01,le_0.1,le_1.0,gt_1.0,n\n{},{},{},{},{}\n",
        b.le_0_01,
        b.le_0_1,
        b.le_1_0,
        b.gt_1_0,
        b.total()
    )
}

pub fn records_csv(records: &[SampleRecord]) -> String {
    let mut s = String::from(RECORDS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.predicted,
            r.actual,
            format_f64(r.vacuity),
            format_f64(r.mean_evidence),
            opt(r.max_softmax),
            r.is_ood
        );
    }
    s
}

pub fn save_records(records: &[SampleRecord], path: &Path) -> Result<()> {
    std::fs::write(path, records_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path)
}

pub fn parse_records(text: &str, path: &Path) -> Result<Vec<SampleRecord>> {
    let err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == RECORDS_HEADER => {}
        Some((i, _)) => return Err(err(i + 1, format!("expected header '{RECORDS_HEADER}'"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(row, format!("expected 6 columns, found {}", f.len())));
        }
        let class = |s: &str, name: &str| s.parse::<usize>().map_err(|_| err(row, format!("bad {name} '{s}'")));
        let real = |s: &str, name: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(row, format!("bad {name} '{s}'")))
        };
        let vacuity = real(f[2], "vacuity")?;
        if !(vacuity > 0.0 && vacuity <= 1.0) {
            return Err(err(row, format!("vacuity {vacuity} outside (0, 1]")));
        }
        let mean_evidence = real(f[3], "mean_evidence")?;
        if mean_evidence < 0.0 {
            return Err(err(row, "mean_evidence must be >= 0".into()));
        }
        let max_softmax = if f[4].is_empty() {
            None
        } else {
            Some(real(f[4], "max_softmax")?)
        };
        let is_ood = f[5].parse::<bool>().map_err(|_| err(row, format!("bad is_ood '{}'", f[5])))?;
        out.push(SampleRecord {
            predicted: class(f[0], "predicted")?,
            actual: class(f[1], "actual")?,
            vacuity,
            mean_evidence,
            max_softmax,
            is_ood,
        });
    }
    if out.is_empty() {
        return Err(err(1, "no records".into()));
    }
    Ok(out)
}
