//! Central-difference oracle for the analytic logit gradients.
//!
//! Each cell of the grid fixes a loss, an activation, an incorrect-evidence
//! regularizer and whether the correct-evidence term is on. Random logits and
//! labels are drawn for every cell; the analytic gradient is compared against
//! `(L(o + h e_k) − L(o − h e_k)) / 2h` of the scalar objective. The vacuity
//! weight of the correct-evidence term is frozen at the unperturbed logits,
//! matching how it is treated during training.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{ActivationKind, EvidenceState, LogitVector, EXP_LOGIT_CLAMP};
use crate::losses::{LabelVector, LossGradPair, LossKind};
use crate::regularizers::{composite_loss_with_vacuity, IncRegKind, RegWeights};

/// One (loss, activation, regularizer) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GradCell {
    pub loss: LossKind,
    pub activation: ActivationKind,
    pub incorrect: IncRegKind,
    pub correct: bool,
}

impl GradCell {
    pub fn is_valid(&self) -> bool {
        if self.loss == LossKind::SoftmaxCe {
            return self.incorrect == IncRegKind::None && !self.correct;
        }
        !self.correct || self.activation == ActivationKind::Exp
    }
}

impl fmt::Display for GradCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}{}",
            self.loss.name(),
            self.activation.name(),
            self.incorrect.name(),
            if self.correct { "+red" } else { "" }
        )
    }
}

/// Every valid evidential cell: 3 losses × 3 activations × 4 incorrect-evidence
/// regularizers, plus the correct-evidence term on top of each regularizer
/// under `Exp`.
pub fn default_grid() -> Vec<GradCell> {
    let mut cells = Vec::new();
    for loss in LossKind::EVIDENTIAL {
        for activation in ActivationKind::ALL {
            for incorrect in IncRegKind::ALL {
                cells.push(GradCell {
                    loss,
                    activation,
                    incorrect,
                    correct: false,
                });
            }
        }
        for incorrect in IncRegKind::ALL {
            cells.push(GradCell {
                loss,
                activation: ActivationKind::Exp,
                incorrect,
                correct: true,
            });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub samples: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Below this magnitude (both sides) the absolute criterion applies.
    pub small_magnitude: f64,
    pub abs_tolerance: f64,
    pub class_counts: Vec<usize>,
    /// Logits are drawn uniformly from `[-logit_range, logit_range]`.
    pub logit_range: f64,
    pub lambda1: f64,
    pub epoch: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            h: 1e-5,
            tolerance: 1e-4,
            small_magnitude: 1e-6,
            abs_tolerance: 1e-7,
            class_counts: vec![2, 3, 5, 10],
            logit_range: 4.0,
            lambda1: 1.0,
            epoch: 10,
            seed: 2024,
        }
    }
}

impl GradCheckConfig {
    /// Reads a TOML file; missing keys take their defaults.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config {
            field: path.display().to_string(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("samples", "must be at least 1"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("h", "must be a positive finite step"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("tolerance", "must be positive"));
        }
        if self.class_counts.is_empty() || self.class_counts.iter().any(|&k| k < 2) {
            return Err(Error::config("class_counts", "need at least one entry, each >= 2"));
        }
        if !(self.logit_range > 0.0) {
            return Err(Error::config("logit_range", "must be positive"));
        }
        if !(self.lambda1 >= 0.0) {
            return Err(Error::config("lambda1", "must be >= 0"));
        }
        Ok(())
    }
}

/// Worst observed discrepancy within one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub cell: GradCell,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub abs_failures: usize,
    pub worst_logits: Vec<f64>,
    pub worst_label: usize,
    pub worst_coordinate: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub cells: Vec<CellReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CellReport> {
        self.cells
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| !c.passed)
    }
}

/// Analytic gradient provider: `(cell, logits, label, frozen vacuity) -> loss + grad`.
pub type AnalyticFn<'a> =
    dyn Fn(&GradCell, &LogitVector<f64>, &LabelVector, f64) -> Result<LossGradPair<f64>> + Sync + 'a;

fn weights(cell: &GradCell, cfg: &GradCheckConfig) -> RegWeights<f64> {
    RegWeights {
        lambda1: cfg.lambda1,
        use_correct_reg: cell.correct,
        epoch: cfg.epoch,
    }
}

/// The composite objective of a cell, with vacuity frozen at `nu`.
pub fn cell_objective(
    cell: &GradCell,
    cfg: &GradCheckConfig,
    o: &LogitVector<f64>,
    y: &LabelVector,
    nu: f64,
) -> Result<LossGradPair<f64>> {
    composite_loss_with_vacuity(
        cell.loss,
        cell.incorrect,
        cell.activation,
        &weights(cell, cfg),
        o,
        y,
        Some(nu),
    )
}

fn skip_coordinate(act: ActivationKind, o: f64, h: f64) -> bool {
    match act {
        // non-differentiable kink at 0
        ActivationKind::Relu => o.abs() <= 10.0 * h,
        ActivationKind::Exp => o >= EXP_LOGIT_CLAMP - 10.0 * h,
        ActivationKind::Softplus => false,
    }
}

/// Checks one cell against the finite-difference oracle.
pub fn check_cell(cell: &GradCell, cfg: &GradCheckConfig) -> Result<CellReport> {
    let cfg_ref = cfg;
    check_cell_with(cell, cfg, &|c, o, y, nu| cell_objective(c, cfg_ref, o, y, nu))
}

/// Checks one cell, taking the analytic gradient from `analytic`.
pub fn check_cell_with(
    cell: &GradCell,
    cfg: &GradCheckConfig,
    analytic: &AnalyticFn<'_>,
) -> Result<CellReport> {
    cfg.validate()?;
    if !cell.is_valid() {
        return Err(Error::InvalidInput(format!("invalid gradient-check cell {cell}")));
    }
    // each cell gets its own deterministic stream
    let mut cell_seed = cfg.seed;
    for b in cell.to_string().bytes() {
        cell_seed = cell_seed.wrapping_mul(0x100_0000_01b3).wrapping_add(b as u64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);

    let mut report = CellReport {
        cell: *cell,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        abs_failures: 0,
        worst_logits: Vec::new(),
        worst_label: 0,
        worst_coordinate: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        passed: true,
    };

    for i in 0..cfg.samples {
        let k = cfg.class_counts[i % cfg.class_counts.len()];
        let raw: Vec<f64> = (0..k)
            .map(|_| rng.gen_range(-cfg.logit_range..=cfg.logit_range))
            .collect();
        let gt = rng.gen_range(0..k);
        let o = LogitVector::new(raw.clone())?;
        let y = LabelVector::new(gt, k)?;
        let nu = EvidenceState::new(cell.activation, &o).vacuity;
        let an = analytic(cell, &o, &y, nu)?;
        for j in 0..k {
            if skip_coordinate(cell.activation, raw[j], cfg.h) {
                report.skipped += 1;
                continue;
            }
            let mut plus = raw.clone();
            let mut minus = raw.clone();
            plus[j] += cfg.h;
            minus[j] -= cfg.h;
            let lp = cell_objective(cell, cfg, &LogitVector::new(plus)?, &y, nu)?.loss;
            let lm = cell_objective(cell, cfg, &LogitVector::new(minus)?, &y, nu)?.loss;
            let numeric = (lp - lm) / (2.0 * cfg.h);
            let a = an.grad[j];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            report.checked += 1;

            let (rel, abs_fail) = if !diff.is_finite() {
                (f64::INFINITY, false)
            } else if scale < cfg.small_magnitude {
                (0.0, diff > cfg.abs_tolerance)
            } else {
                (diff / scale, false)
            };
            if abs_fail {
                report.abs_failures += 1;
            }
            if rel > report.max_rel_error || (abs_fail && report.worst_logits.is_empty()) {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst_logits = raw.clone();
                report.worst_label = gt;
                report.worst_coordinate = j;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance && report.abs_failures == 0;
    Ok(report)
}

/// Runs every cell of `grid`.
pub fn run(grid: &[GradCell], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let cfg_ref = cfg;
    run_with(grid, cfg, &|c, o, y, nu| cell_objective(c, cfg_ref, o, y, nu))
}

pub fn run_with(
    grid: &[GradCell],
    cfg: &GradCheckConfig,
    analytic: &AnalyticFn<'_>,
) -> Result<GradCheckReport> {
    let cells = grid
        .iter()
        .map(|cell| check_cell_with(cell, cfg, analytic))
        .collect::<Result<Vec<_>>>()?;
    let passed = cells.iter().all(|c| c.passed);
    Ok(GradCheckReport { cells, passed })
}
