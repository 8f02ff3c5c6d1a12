//! Incorrect-evidence regularizers, the vacuity-weighted correct-evidence
//! regularizer, the η₁ annealing schedule and the composite objective
//!
//! ```text
//! L = L_evid + η₁ · L_inc + L_cor,   η₁ = λ₁ · min(1, epoch / 10)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{ActivationKind, EvidenceState, LogitVector};
use crate::losses::{
    chain_to_logits, check_classes, evidential_loss_grad, LabelVector, LossGradPair, LossKind,
};
use crate::scalar::Real;
use crate::special::{digamma_pos, log_gamma_pos, trigamma_pos};

/// Number of epochs over which η₁ ramps from 0 to λ₁.
pub const ANNEAL_EPOCHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncRegKind {
    /// KL(Dir(α̃) ‖ Dir(1)).
    EdlKl,
    /// Σ_{k≠gt} e_k.
    AdlSum,
    /// Σ_{k≠gt} e_k / S.
    UnitsBelief,
    None,
}

impl IncRegKind {
    pub const ALL: [IncRegKind; 4] = [Self::None, Self::EdlKl, Self::AdlSum, Self::UnitsBelief];

    pub fn name(self) -> &'static str {
        match self {
            Self::EdlKl => "edl_kl",
            Self::AdlSum => "adl_sum",
            Self::UnitsBelief => "units_belief",
            Self::None => "none",
        }
    }
}

impl std::str::FromStr for IncRegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edl_kl" => Ok(Self::EdlKl),
            "adl_sum" => Ok(Self::AdlSum),
            "units_belief" => Ok(Self::UnitsBelief),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidInput(format!("unknown regularizer '{other}'"))),
        }
    }
}

/// Regularization knobs for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegWeights<T> {
    pub lambda1: T,
    pub use_correct_reg: bool,
    pub epoch: usize,
}

impl<T: Real> RegWeights<T> {
    pub fn new(lambda1: T, use_correct_reg: bool, epoch: usize) -> Result<Self> {
        if !(lambda1 >= T::zero()) || !lambda1.is_finite() {
            return Err(Error::InvalidInput(format!("lambda1 must be >= 0, got {lambda1}")));
        }
        Ok(Self {
            lambda1,
            use_correct_reg,
            epoch,
        })
    }

    pub fn eta1(&self) -> T {
        anneal_eta1(self.lambda1, self.epoch)
    }
}

/// λ₁ · min(1, epoch / 10).
pub fn anneal_eta1<T: Real>(lambda1: T, epoch: usize) -> T {
    let ramp = T::from_usize_lossy(epoch.min(ANNEAL_EPOCHS)) / T::from_usize_lossy(ANNEAL_EPOCHS);
    lambda1 * ramp
}

/// α̃ = y + (1 − y) ⊙ α: the ground-truth entry replaced by 1.
pub fn tilde_alpha<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> Vec<T> {
    state
        .alpha
        .iter()
        .enumerate()
        .map(|(k, &a)| if k == y.gt() { T::one() } else { a })
        .collect()
}

fn incorrect_evidence<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> T {
    state
        .evidence
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y.gt())
        .fold(T::zero(), |acc, (_, &e)| acc + e)
}

/// Forward KL from Dir(α̃) to the uniform Dirichlet.
///
/// ∂L/∂α_k = (α_k − 1) Ψ₁(α_k) − (S̃ − K) Ψ₁(S̃) for k ≠ gt, where
/// S̃ = Σ α̃ = S − α_gt + 1; zero at the ground truth.
pub fn reg_edl_kl<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> Result<LossGradPair<T>> {
    check_classes(state.num_classes(), y)?;
    let k = state.num_classes();
    let wrong = incorrect_evidence(state, y);
    if wrong == T::zero() {
        return Ok(LossGradPair::zeros(k));
    }
    let alpha_t = tilde_alpha(state, y);
    let s_t = alpha_t.iter().fold(T::zero(), |a, &x| a + x);
    let psi_s = digamma_pos(s_t);
    let ln_gamma_k = log_gamma_pos(T::from_usize_lossy(k));
    let mut loss = log_gamma_pos(s_t) - ln_gamma_k;
    for &a in &alpha_t {
        loss = loss - log_gamma_pos(a) + (a - T::one()) * (digamma_pos(a) - psi_s);
    }
    // Σ (α̃_j − 1) = S̃ − K, the total incorrect evidence
    let tri_s = wrong * trigamma_pos(s_t);
    let dalpha: Vec<T> = alpha_t
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            if j == y.gt() {
                T::zero()
            } else {
                (a - T::one()) * trigamma_pos(a) - tri_s
            }
        })
        .collect();
    Ok(LossGradPair {
        loss,
        grad: chain_to_logits(state, &dalpha),
    })
}

/// Sum of incorrect evidence, S − K − α_gt + 1.
pub fn reg_adl_sum<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> Result<LossGradPair<T>> {
    check_classes(state.num_classes(), y)?;
    let dalpha: Vec<T> = (0..state.num_classes())
        .map(|k| T::one() - y.y::<T>(k))
        .collect();
    Ok(LossGradPair {
        loss: incorrect_evidence(state, y),
        grad: chain_to_logits(state, &dalpha),
    })
}

/// Incorrect belief mass (S − K − α_gt + 1) / S, in [0, 1].
///
/// ∂L/∂α_k = (e_gt + K)/S² for k ≠ gt and −(Σ_{j≠gt} e_j)/S² at the ground
/// truth, since S itself depends on α_gt.
pub fn reg_units_belief<T: Real>(
    state: &EvidenceState<T>,
    y: &LabelVector,
) -> Result<LossGradPair<T>> {
    check_classes(state.num_classes(), y)?;
    let s = state.strength;
    let s2 = s * s;
    let wrong = incorrect_evidence(state, y);
    let k = T::from_usize_lossy(state.num_classes());
    let off = (state.evidence[y.gt()] + k) / s2;
    let on = -wrong / s2;
    let dalpha: Vec<T> = (0..state.num_classes())
        .map(|j| if j == y.gt() { on } else { off })
        .collect();
    Ok(LossGradPair {
        loss: wrong / s,
        grad: chain_to_logits(state, &dalpha),
    })
}

/// Incorrect-evidence regularizer by kind; `None` yields zeros.
pub fn reg_incorrect<T: Real>(
    kind: IncRegKind,
    state: &EvidenceState<T>,
    y: &LabelVector,
) -> Result<LossGradPair<T>> {
    match kind {
        IncRegKind::EdlKl => reg_edl_kl(state, y),
        IncRegKind::AdlSum => reg_adl_sum(state, y),
        IncRegKind::UnitsBelief => reg_units_belief(state, y),
        IncRegKind::None => {
            check_classes(state.num_classes(), y)?;
            Ok(LossGradPair::zeros(state.num_classes()))
        }
    }
}

/// Correct-evidence regularizer −ν · log(α_gt − 1) with ν held constant.
pub fn reg_correct<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> Result<LossGradPair<T>> {
    reg_correct_weighted(state, y, state.vacuity)
}

/// −w · log(e_gt) with an explicit, gradient-free weight `w`.
///
/// Under the exponential activation `log e_gt` is the (clamped) logit itself,
/// so the value never underflows and the gradient at the ground-truth logit
/// is exactly `−w`; every other coordinate gets 0.
pub fn reg_correct_weighted<T: Real>(
    state: &EvidenceState<T>,
    y: &LabelVector,
    weight: T,
) -> Result<LossGradPair<T>> {
    check_classes(state.num_classes(), y)?;
    if state.activation != ActivationKind::Exp {
        return Err(Error::Precondition(format!(
            "correct-evidence regularization requires the exp activation (alpha_gt > 1), got {}",
            state.activation.name()
        )));
    }
    let gt = y.gt();
    let log_evidence = state.logits[gt];
    let mut grad = vec![T::zero(); state.num_classes()];
    grad[gt] = -weight;
    Ok(LossGradPair {
        loss: -weight * log_evidence,
        grad,
    })
}

/// The full training objective for one sample.
pub fn composite_loss<T: Real>(
    kind: LossKind,
    inc: IncRegKind,
    act: ActivationKind,
    weights: &RegWeights<T>,
    o: &LogitVector<T>,
    y: &LabelVector,
) -> Result<LossGradPair<T>> {
    composite_loss_with_vacuity(kind, inc, act, weights, o, y, None)
}

/// [`composite_loss`] with an optional externally frozen vacuity weight for
/// the correct-evidence term. `None` uses the sample's own vacuity.
pub fn composite_loss_with_vacuity<T: Real>(
    kind: LossKind,
    inc: IncRegKind,
    act: ActivationKind,
    weights: &RegWeights<T>,
    o: &LogitVector<T>,
    y: &LabelVector,
    frozen_vacuity: Option<T>,
) -> Result<LossGradPair<T>> {
    check_classes(o.num_classes(), y)?;
    if kind == LossKind::SoftmaxCe {
        if inc != IncRegKind::None || weights.use_correct_reg {
            return Err(Error::Precondition(
                "softmax cross-entropy cannot be combined with evidential regularizers".into(),
            ));
        }
        return crate::losses::loss_softmax_ce(o, y);
    }
    if weights.use_correct_reg && act != ActivationKind::Exp {
        return Err(Error::Precondition(format!(
            "correct-evidence regularization requires the exp activation, got {}",
            act.name()
        )));
    }
    let state = EvidenceState::new(act, o);
    let mut total = evidential_loss_grad(kind, &state, y)?;
    let eta1 = weights.eta1();
    if inc != IncRegKind::None && eta1 != T::zero() {
        total.add_scaled(eta1, &reg_incorrect(inc, &state, y)?);
    }
    if weights.use_correct_reg {
        let w = frozen_vacuity.unwrap_or(state.vacuity);
        total.add_scaled(T::one(), &reg_correct_weighted(&state, y, w)?);
    }
    Ok(total)
}
