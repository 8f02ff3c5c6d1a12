//! Evidence head: turns logits into evidence, Dirichlet parameters, strength,
//! vacuity and belief masses.
//!
//! For logits `o` and a non-negative activation `A`:
//!
//! ```text
//! e = A(o),  α = e + 1,  S = Σ α = K + Σ e,  ν = K / S,  b = e / S
//! ```
//!
//! so that `Σ b + ν = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Logits are clamped to this value before `exp` inside [`EvidenceState::new`].
pub const EXP_LOGIT_CLAMP: f64 = 30.0;

/// Non-negative transformation from logits to evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Softplus,
    Exp,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [Self::Relu, Self::Softplus, Self::Exp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Softplus => "softplus",
            Self::Exp => "exp",
        }
    }

    /// Evidence for a single logit. `Exp` is not clamped here.
    #[inline]
    pub fn apply<T: Real>(self, o: T) -> T {
        match self {
            Self::Relu => o.max(T::zero()),
            // log(1 + e^o) = max(o, 0) + log1p(e^{-|o|})
            Self::Softplus => o.max(T::zero()) + (-o.abs()).exp().ln_1p(),
            Self::Exp => o.exp(),
        }
    }

    /// ∂e/∂o. The ReLU derivative at exactly zero is 0.
    #[inline]
    pub fn grad<T: Real>(self, o: T) -> T {
        match self {
            Self::Relu => {
                if o > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Softplus => sigmoid(o),
            Self::Exp => o.exp(),
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "softplus" => Ok(Self::Softplus),
            "exp" => Ok(Self::Exp),
            other => Err(Error::InvalidInput(format!("unknown activation '{other}'"))),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(o: T) -> T {
    if o >= T::zero() {
        (T::one() + (-o).exp()).recip()
    } else {
        let z = o.exp();
        z / (T::one() + z)
    }
}

/// Raw network outputs for one sample: finite, at least two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector<T>(Vec<T>);

impl<T: Real> LogitVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("logit {i} is not finite")));
        }
        Ok(Self(values))
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.0
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> AsRef<[T]> for LogitVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Applies the activation element-wise (no overflow clamp).
pub fn activation_apply<T: Real>(kind: ActivationKind, o: &LogitVector<T>) -> Vec<T> {
    o.values().iter().map(|&x| kind.apply(x)).collect()
}

/// ∂e/∂o for a single logit.
#[inline]
pub fn activation_grad<T: Real>(kind: ActivationKind, o: T) -> T {
    kind.grad(o)
}

/// Everything derived from one sample's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceState<T> {
    pub activation: ActivationKind,
    /// Logits actually fed to the activation (clamped for `Exp`).
    pub logits: Vec<T>,
    pub evidence: Vec<T>,
    pub alpha: Vec<T>,
    pub strength: T,
    pub vacuity: T,
    pub beliefs: Vec<T>,
    /// ∂e_k/∂o_k evaluated at the (clamped) logits.
    pub evidence_grad: Vec<T>,
}

impl<T: Real> EvidenceState<T> {
    pub fn new(kind: ActivationKind, o: &LogitVector<T>) -> Self {
        let clamp = T::lit(EXP_LOGIT_CLAMP);
        let logits: Vec<T> = match kind {
            ActivationKind::Exp => o.values().iter().map(|&x| x.min(clamp)).collect(),
            _ => o.values().to_vec(),
        };
        let evidence: Vec<T> = logits.iter().map(|&x| kind.apply(x)).collect();
        let evidence_grad: Vec<T> = match kind {
            // d exp(o)/do = exp(o) = e
            ActivationKind::Exp => evidence.clone(),
            _ => logits.iter().map(|&x| kind.grad(x)).collect(),
        };
        let k = T::from_usize_lossy(evidence.len());
        let alpha: Vec<T> = evidence.iter().map(|&e| e + T::one()).collect();
        let total: T = evidence.iter().fold(T::zero(), |a, &e| a + e);
        let strength = k + total;
        let vacuity = k / strength;
        let beliefs = evidence.iter().map(|&e| e / strength).collect();
        Self {
            activation: kind,
            logits,
            evidence,
            alpha,
            strength,
            vacuity,
            beliefs,
            evidence_grad,
        }
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.evidence.len()
    }

    pub fn total_evidence(&self) -> T {
        self.evidence.iter().fold(T::zero(), |a, &e| a + e)
    }

    pub fn mean_evidence(&self) -> T {
        self.total_evidence() / T::from_usize_lossy(self.num_classes())
    }

    /// True for coordinates where the `Exp` overflow clamp was active.
    pub fn is_clamped(&self, original: &LogitVector<T>, k: usize) -> bool {
        self.activation == ActivationKind::Exp && original.values()[k] > T::lit(EXP_LOGIT_CLAMP)
    }
}

/// Evidence state for the given activation and logits.
pub fn evidence_state<T: Real>(kind: ActivationKind, o: &LogitVector<T>) -> EvidenceState<T> {
    EvidenceState::new(kind, o)
}

/// Index of the largest evidence; ties go to the lowest index.
pub fn predict_class<T: Real>(state: &EvidenceState<T>) -> usize {
    argmax(&state.evidence)
}

/// First index of the maximum value.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean evidence `Σe / K` is at most `tau`.
pub fn is_zero_evidence<T: Real>(state: &EvidenceState<T>, tau: T) -> bool {
    state.mean_evidence() <= tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(v: &[f64]) -> LogitVector<f64> {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activation_apply(ActivationKind::Exp, &logits(&[0.0, 0.0])), vec![1.0, 1.0]);
        assert_eq!(activation_apply(ActivationKind::Relu, &logits(&[-3.0, 2.0])), vec![0.0, 2.0]);
        let sp = activation_apply(ActivationKind::Softplus, &logits(&[0.0, 0.0]));
        assert!((sp[0] - (1.0_f64 + 1.0).ln()).abs() < 1e-15);
        // large arguments stay finite and accurate
        let sp = activation_apply(ActivationKind::Softplus, &logits(&[800.0, -800.0]));
        assert_eq!(sp[0], 800.0);
        assert!(sp[1] >= 0.0 && sp[1] < 1e-300);
    }

    #[test]
    fn activation_grad_examples() {
        assert_eq!(activation_grad(ActivationKind::Relu, -1.0), 0.0);
        assert_eq!(activation_grad(ActivationKind::Relu, 0.0), 0.0);
        assert_eq!(activation_grad(ActivationKind::Relu, 1e-300), 1.0);
        assert_eq!(activation_grad(ActivationKind::Softplus, 0.0), 0.5);
        assert_eq!(activation_grad(ActivationKind::Exp, 0.0), 1.0);
    }

    #[test]
    fn evidence_state_examples() {
        let s = evidence_state(ActivationKind::Exp, &logits(&[0.0, 0.0]));
        assert_eq!(s.evidence, vec![1.0, 1.0]);
        assert_eq!(s.alpha, vec![2.0, 2.0]);
        assert_eq!(s.strength, 4.0);
        assert_eq!(s.vacuity, 0.5);
        assert_eq!(s.beliefs, vec![0.25, 0.25]);

        let s = evidence_state(ActivationKind::Relu, &logits(&[-1.0, -2.0]));
        assert_eq!(s.evidence, vec![0.0, 0.0]);
        assert_eq!(s.alpha, vec![1.0, 1.0]);
        assert_eq!(s.strength, 2.0);
        assert_eq!(s.vacuity, 1.0);
        assert_eq!(s.beliefs, vec![0.0, 0.0]);

        let s = evidence_state(ActivationKind::Softplus, &logits(&[0.0, 0.0, 0.0]));
        let ln2 = 2.0_f64.ln();
        assert!((s.strength - (3.0 + 3.0 * ln2)).abs() < 1e-12);
        assert!((s.strength - 5.0794415416798).abs() < 1e-12);
        assert!((s.vacuity - 3.0 / (3.0 + 3.0 * ln2)).abs() < 1e-12);
        assert!((s.vacuity - 0.5906161091496).abs() < 1e-12);
    }

    #[test]
    fn exp_overflow_is_clamped() {
        let s = evidence_state(ActivationKind::Exp, &logits(&[1e4, 0.0]));
        assert!(s.evidence[0].is_finite());
        assert_eq!(s.evidence[0], EXP_LOGIT_CLAMP.exp());
        assert!(s.vacuity > 0.0 && s.vacuity.is_finite());
        assert!(s.is_clamped(&logits(&[1e4, 0.0]), 0));
        assert!(!s.is_clamped(&logits(&[1e4, 0.0]), 1));
    }

    #[test]
    fn predict_class_ties_go_low() {
        let mk = |e: &[f64]| {
            // relu on non-negative logits reproduces the evidence exactly
            evidence_state(ActivationKind::Relu, &logits(e))
        };
        assert_eq!(predict_class(&mk(&[0.0, 5.0, 1.0])), 1);
        assert_eq!(predict_class(&mk(&[2.0, 2.0])), 0);
        assert_eq!(predict_class(&mk(&[0.0, 0.0])), 0);
    }

    #[test]
    fn zero_evidence_predicate() {
        let mk = |e: &[f64]| evidence_state(ActivationKind::Relu, &logits(e));
        assert!(is_zero_evidence(&mk(&[0.0, 0.0]), 0.0));
        assert!(is_zero_evidence(&mk(&[0.005, 0.005]), 0.01));
        assert!(!is_zero_evidence(&mk(&[3.0, 0.0]), 0.01));
    }

    #[test]
    fn rejects_bad_logits() {
        assert!(LogitVector::new(vec![1.0_f64]).is_err());
        assert!(LogitVector::new(vec![1.0_f64, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY, 0.0]).is_err());
    }

    fn kind_strategy() -> impl Strategy<Value = ActivationKind> {
        prop_oneof![
            Just(ActivationKind::Relu),
            Just(ActivationKind::Softplus),
            Just(ActivationKind::Exp)
        ]
    }

    proptest! {
        #[test]
        fn beliefs_and_vacuity_sum_to_one(
            kind in kind_strategy(),
            o in prop::collection::vec(-40.0f64..40.0, 2..12),
        ) {
            let s = evidence_state(kind, &LogitVector::new(o).unwrap());
            let total: f64 = s.beliefs.iter().sum::<f64>() + s.vacuity;
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(s.vacuity > 0.0 && s.vacuity <= 1.0);
            for (a, e) in s.alpha.iter().zip(&s.evidence) {
                prop_assert!(*e >= 0.0);
                prop_assert_eq!(*a, e + 1.0);
            }
            prop_assert_eq!(s.vacuity == 1.0, s.total_evidence() == 0.0);
            prop_assert_eq!(predict_class(&s), argmax(&s.alpha));
        }

        #[test]
        fn exp_gradient_dominates_on_non_positive_logits(o in -50.0f64..=0.0) {
            let r = activation_grad(ActivationKind::Relu, o);
            let sp = activation_grad(ActivationKind::Softplus, o);
            let ex = activation_grad(ActivationKind::Exp, o);
            prop_assert!(ex >= sp && sp >= r && r == 0.0);
            prop_assert!((ex / sp - (1.0 + o.exp())).abs() <= 1e-12);
        }
    }
}
