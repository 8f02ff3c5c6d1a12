//! Evidential losses and the softmax cross-entropy baseline, with closed-form
//! gradients with respect to the logits.
//!
//! Every evidential gradient is assembled as `∂L/∂α_k · ∂e_k/∂o_k`, since
//! `α_k = e_k + 1` and `e_k` depends only on `o_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{ActivationKind, EvidenceState, LogitVector};
use crate::scalar::Real;
use crate::special::{digamma_pos, trigamma_pos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Bayes risk with sum of squares.
    EvMse,
    /// Bayes risk with cross-entropy (digamma form).
    EvCe,
    /// Type II maximum likelihood.
    EvLog,
    /// Standard softmax cross-entropy; ignores the evidential activation.
    SoftmaxCe,
}

impl LossKind {
    pub const EVIDENTIAL: [LossKind; 3] = [Self::EvMse, Self::EvCe, Self::EvLog];

    pub fn is_evidential(self) -> bool {
        self != Self::SoftmaxCe
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EvMse => "ev_mse",
            Self::EvCe => "ev_ce",
            Self::EvLog => "ev_log",
            Self::SoftmaxCe => "softmax_ce",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ev_mse" => Ok(Self::EvMse),
            "ev_ce" => Ok(Self::EvCe),
            "ev_log" => Ok(Self::EvLog),
            "softmax_ce" => Ok(Self::SoftmaxCe),
            other => Err(Error::InvalidInput(format!("unknown loss '{other}'"))),
        }
    }
}

/// One-hot label: class `gt` out of `num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelVector {
    gt: usize,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(gt: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 || gt >= num_classes {
            return Err(Error::InvalidInput(format!(
                "label {gt} invalid for {num_classes} classes"
            )));
        }
        Ok(Self { gt, num_classes })
    }

    #[inline]
    pub fn gt(&self) -> usize {
        self.gt
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// y_k as a scalar.
    #[inline]
    pub fn y<T: Real>(&self, k: usize) -> T {
        if k == self.gt {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn one_hot<T: Real>(&self) -> Vec<T> {
        (0..self.num_classes).map(|k| self.y(k)).collect()
    }
}

/// Scalar loss and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradPair<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

impl<T: Real> LossGradPair<T> {
    pub fn zeros(k: usize) -> Self {
        Self {
            loss: T::zero(),
            grad: vec![T::zero(); k],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, weight: T, other: &LossGradPair<T>) {
        self.loss = self.loss + weight * other.loss;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g = *g + weight * *o;
        }
    }
}

pub(crate) fn check_classes(k_state: usize, y: &LabelVector) -> Result<()> {
    if k_state != y.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: k_state,
            actual: y.num_classes(),
            context: "label vs logits",
        });
    }
    Ok(())
}

/// Σ_j (y_j − α_j/S)² + α_j(S − α_j)/(S²(S+1)); lies in [0, 2].
pub fn loss_ev_mse<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> T {
    let s = state.strength;
    let denom = s * s * (s + T::one());
    state
        .alpha
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (j, &a)| {
            let err = y.y::<T>(j) - a / s;
            acc + err * err + a * (s - a) / denom
        })
}

/// Ψ(S) − Ψ(α_gt).
pub fn loss_ev_ce<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> T {
    digamma_pos(state.strength) - digamma_pos(state.alpha[y.gt()])
}

/// log S − log α_gt.
pub fn loss_ev_log<T: Real>(state: &EvidenceState<T>, y: &LabelVector) -> T {
    state.strength.ln() - state.alpha[y.gt()].ln()
}

/// Loss value for an evidential kind. `SoftmaxCe` needs the raw logits and
/// is handled by [`loss_softmax_ce`].
pub fn evidential_loss<T: Real>(kind: LossKind, state: &EvidenceState<T>, y: &LabelVector) -> T {
    match kind {
        LossKind::EvMse => loss_ev_mse(state, y),
        LossKind::EvCe => loss_ev_ce(state, y),
        LossKind::EvLog => loss_ev_log(state, y),
        LossKind::SoftmaxCe => panic!("softmax cross-entropy is not an evidential loss"),
    }
}

/// ∂L/∂α_k for an evidential loss.
pub fn evidential_alpha_grad<T: Real>(
    kind: LossKind,
    state: &EvidenceState<T>,
    y: &LabelVector,
) -> Vec<T> {
    let s = state.strength;
    let gt = y.gt();
    let two = T::lit(2.0);
    match kind {
        LossKind::EvMse => {
            // L = 2 − 2α_gt/S − 2P/(S(S+1)),  P = Σ_{i<j} α_i α_j
            let sum_sq = state.alpha.iter().fold(T::zero(), |a, &x| a + x * x);
            let pairs = (s * s - sum_sq) / two;
            let s1 = s * (s + T::one());
            let alpha_gt = state.alpha[gt];
            state
                .alpha
                .iter()
                .enumerate()
                .map(|(k, &a)| {
                    two * alpha_gt / (s * s) - two * y.y::<T>(k) / s - two * (s - a) / s1
                        + two * (two * s + T::one()) * pairs / (s1 * s1)
                })
                .collect()
        }
        LossKind::EvCe => {
            let t_s = trigamma_pos(s);
            let t_gt = trigamma_pos(state.alpha[gt]);
            (0..state.num_classes())
                .map(|k| t_s - y.y::<T>(k) * t_gt)
                .collect()
        }
        LossKind::EvLog => state
            .alpha
            .iter()
            .enumerate()
            .map(|(k, &a)| s.recip() - y.y::<T>(k) / a)
            .collect(),
        LossKind::SoftmaxCe => panic!("softmax cross-entropy is not an evidential loss"),
    }
}

/// Chains ∂L/∂α through the activation derivative stored in the state.
pub(crate) fn chain_to_logits<T: Real>(state: &EvidenceState<T>, dalpha: &[T]) -> Vec<T> {
    dalpha
        .iter()
        .zip(&state.evidence_grad)
        .map(|(&d, &de)| if de == T::zero() { T::zero() } else { d * de })
        .collect()
}

/// Evidential loss and its logit gradient for an already computed state.
pub fn evidential_loss_grad<T: Real>(
    kind: LossKind,
    state: &EvidenceState<T>,
    y: &LabelVector,
) -> Result<LossGradPair<T>> {
    check_classes(state.num_classes(), y)?;
    let loss = evidential_loss(kind, state, y);
    let dalpha = evidential_alpha_grad(kind, state, y);
    Ok(LossGradPair {
        loss,
        grad: chain_to_logits(state, &dalpha),
    })
}

/// log Σ exp(o_i) − o_gt with gradient softmax(o) − y.
pub fn loss_softmax_ce<T: Real>(o: &LogitVector<T>, y: &LabelVector) -> Result<LossGradPair<T>> {
    check_classes(o.num_classes(), y)?;
    let probs = softmax(o.values());
    let max = o.values().iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum_exp = o
        .values()
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - max).exp());
    let loss = (max + sum_exp.ln() - o.values()[y.gt()]).max(T::zero());
    let grad = probs
        .iter()
        .enumerate()
        .map(|(k, &p)| p - y.y::<T>(k))
        .collect();
    Ok(LossGradPair { loss, grad })
}

/// Max-shifted softmax.
pub fn softmax<T: Real>(o: &[T]) -> Vec<T> {
    let max = o.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = o.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &v| a + v);
    exps.into_iter().map(|v| v / sum).collect()
}

/// Loss and ∂loss/∂o for any loss kind under the given activation.
pub fn grad_logits<T: Real>(
    kind: LossKind,
    act: ActivationKind,
    o: &LogitVector<T>,
    y: &LabelVector,
) -> Result<LossGradPair<T>> {
    match kind {
        LossKind::SoftmaxCe => loss_softmax_ce(o, y),
        _ => {
            let state = EvidenceState::new(act, o);
            evidential_loss_grad(kind, &state, y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::evidence_state;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// State with exactly the given α (via ReLU on α − 1 ≥ 0).
    fn state_from_alpha(alpha: &[f64]) -> EvidenceState<f64> {
        let o: Vec<f64> = alpha.iter().map(|a| a - 1.0).collect();
        evidence_state(ActivationKind::Relu, &LogitVector::new(o).unwrap())
    }

    fn label(gt: usize, k: usize) -> LabelVector {
        LabelVector::new(gt, k).unwrap()
    }

    /// 2 − 2α_gt/S − 2Σ_{i<j}α_iα_j/(S(S+1)), with the pair sum enumerated.
    fn mse_pairwise_form(alpha: &[f64], gt: usize) -> f64 {
        let s: f64 = alpha.iter().sum();
        let mut pairs = 0.0;
        for i in 0..alpha.len() {
            for j in (i + 1)..alpha.len() {
                pairs += alpha[i] * alpha[j];
            }
        }
        2.0 - 2.0 * alpha[gt] / s - 2.0 * pairs / (s * (s + 1.0))
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, o: &[f64], h: f64) -> Vec<f64> {
        (0..o.len())
            .map(|k| {
                let mut p = o.to_vec();
                let mut m = o.to_vec();
                p[k] += h;
                m[k] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn ev_mse_examples() {
        let v = loss_ev_mse(&state_from_alpha(&[1.0, 1.0]), &label(0, 2));
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        let v = loss_ev_mse(&state_from_alpha(&[1e6, 1.0]), &label(0, 2));
        assert!((0.0..=1e-5).contains(&v));
    }

    #[test]
    fn ev_mse_pair_sum_reading_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let k = rng.gen_range(2..8);
            let alpha: Vec<f64> = (0..k).map(|_| 1.0 + rng.gen_range(0.0..20.0)).collect();
            let gt = rng.gen_range(0..k);
            let direct = loss_ev_mse(&state_from_alpha(&alpha), &label(gt, k));
            assert!((direct - mse_pairwise_form(&alpha, gt)).abs() < 1e-12);
        }
    }

    #[test]
    fn ev_ce_examples() {
        let y = label(0, 2);
        assert!((loss_ev_ce(&state_from_alpha(&[1.0, 1.0]), &y) - 1.0).abs() < 1e-12);
        assert!((loss_ev_ce(&state_from_alpha(&[2.0, 1.0]), &y) - 0.5).abs() < 1e-12);
        assert!((loss_ev_ce(&state_from_alpha(&[3.0, 1.0]), &y) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ev_log_examples() {
        let y = label(0, 2);
        assert!((loss_ev_log(&state_from_alpha(&[1.0, 1.0]), &y) - 2f64.ln()).abs() < 1e-15);
        let v = loss_ev_log(&state_from_alpha(&[2.0, 1.0]), &y);
        assert!((v - (3f64.ln() - 2f64.ln())).abs() < 1e-15);
        let v = loss_ev_log(&state_from_alpha(&[999.0, 1.0]), &y);
        assert!((v - (1000.0f64 / 999.0).ln()).abs() < 1e-15);
        assert!((v - 0.0010005).abs() < 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let y = label(0, 2);
        let r = loss_softmax_ce(&LogitVector::<f64>::new(vec![0.0, 0.0]).unwrap(), &y).unwrap();
        assert!((r.loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.grad, vec![-0.5, 0.5]);
        let r = loss_softmax_ce(&LogitVector::<f64>::new(vec![100.0, 0.0]).unwrap(), &y).unwrap();
        assert!(r.loss < 1e-40);
        assert!(r.grad.iter().all(|g| g.abs() < 1e-40));
    }

    #[test]
    fn ev_log_exp_gradient_example() {
        let o = LogitVector::<f64>::new(vec![0.0, 0.0]).unwrap();
        let r = grad_logits(LossKind::EvLog, ActivationKind::Exp, &o, &label(0, 2)).unwrap();
        assert!((r.grad[0] + 0.25).abs() < 1e-15);
        assert!((r.grad[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn relu_zero_evidence_gradient_is_exactly_zero() {
        let o = LogitVector::new(vec![-1.0, -2.0]).unwrap();
        for kind in LossKind::EVIDENTIAL {
            let r = grad_logits(kind, ActivationKind::Relu, &o, &label(0, 2)).unwrap();
            assert_eq!(r.grad, vec![0.0, 0.0], "{kind:?}");
        }
    }

    #[test]
    fn ev_mse_exp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let k = rng.gen_range(2..7);
            let o: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y = label(rng.gen_range(0..k), k);
            let f = |x: &[f64]| {
                loss_ev_mse(
                    &evidence_state(ActivationKind::Exp, &LogitVector::new(x.to_vec()).unwrap()),
                    &y,
                )
            };
            let fd = central_diff(f, &o, 1e-5);
            let an = grad_logits(LossKind::EvMse, ActivationKind::Exp, &LogitVector::new(o).unwrap(), &y)
                .unwrap()
                .grad;
            for (a, n) in an.iter().zip(&fd) {
                assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn gradient_vanishes_as_logits_decrease() {
        let y = label(1, 3);
        for act in [ActivationKind::Softplus, ActivationKind::Exp] {
            for kind in LossKind::EVIDENTIAL {
                let mut prev = f64::INFINITY;
                for step in 5..=20 {
                    let o = LogitVector::new(vec![-(step as f64); 3]).unwrap();
                    let g = grad_logits(kind, act, &o, &y).unwrap().grad;
                    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!(norm < prev, "{kind:?}/{act:?} at -{step}");
                    prev = norm;
                }
                assert!(prev <= 1e-7);
            }
        }
    }

    #[test]
    fn ev_log_large_incorrect_evidence_gradient_tends_to_one() {
        let y = label(0, 3);
        let o = LogitVector::<f64>::new(vec![0.0, 25.0, 0.0]).unwrap();
        let g = grad_logits(LossKind::EvLog, ActivationKind::Exp, &o, &y).unwrap().grad;
        assert!((g[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_label_is_rejected() {
        let o = LogitVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert!(grad_logits(LossKind::EvLog, ActivationKind::Exp, &o, &label(0, 2)).is_err());
        assert!(LabelVector::new(2, 2).is_err());
    }

    proptest! {
        #[test]
        fn ev_mse_is_bounded(alpha in prop::collection::vec(1.0f64..1e6, 2..10), gt_seed in 0usize..100) {
            let gt = gt_seed % alpha.len();
            let v = loss_ev_mse(&state_from_alpha(&alpha), &label(gt, alpha.len()));
            prop_assert!((0.0..=2.0).contains(&v));
        }

        #[test]
        fn softmax_gradient_sums_to_zero(o in prop::collection::vec(-50.0f64..50.0, 2..10), gt_seed in 0usize..100) {
            let gt = gt_seed % o.len();
            let r = loss_softmax_ce(&LogitVector::new(o.clone()).unwrap(), &label(gt, o.len())).unwrap();
            let p = softmax(&o);
            let sum: f64 = r.grad.iter().sum();
            prop_assert!(sum.abs() < 1e-12);
            for (k, g) in r.grad.iter().enumerate() {
                prop_assert!((-1.0..=1.0).contains(g));
                let yk = if k == gt { 1.0 } else { 0.0 };
                prop_assert_eq!(*g, p[k] - yk);
            }
            prop_assert!(r.loss >= 0.0);
        }
    }
}
