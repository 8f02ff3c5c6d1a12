use evidential::evidence::EvidenceState;
use evidential::mlp::{dense_specs, Network};
use evidential::regularizers::{composite_loss_with_vacuity, RegWeights};
use evidential::{ActivationKind, IncRegKind, LabelVector, LogitVector, LossKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Objective with vacuity frozen at `nu`, as a function of the parameters.
fn objective(
    net: &Network<f64>,
    x: &[f64],
    y: &LabelVector,
    cell: (LossKind, ActivationKind, IncRegKind, bool),
    nu: f64,
) -> f64 {
    let o = LogitVector::new(net.predict(x).unwrap()).unwrap();
    let w = RegWeights::new(0.7, cell.3, 12).unwrap();
    composite_loss_with_vacuity(cell.0, cell.2, cell.1, &w, &o, y, Some(nu)).unwrap().loss
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let cells = [
        (LossKind::EvMse, ActivationKind::Softplus, IncRegKind::EdlKl, false),
        (LossKind::EvCe, ActivationKind::Exp, IncRegKind::AdlSum, true),
        (LossKind::EvLog, ActivationKind::Exp, IncRegKind::UnitsBelief, true),
        (LossKind::EvLog, ActivationKind::Softplus, IncRegKind::None, false),
        (LossKind::SoftmaxCe, ActivationKind::Relu, IncRegKind::None, false),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for (ci, &cell) in cells.iter().enumerate() {
        for &k in &[2usize, 3, 5] {
            let net = Network::<f64>::new(&dense_specs(&[4, 16, k]).unwrap(), 40 + ci as u64).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let y = LabelVector::new(rng.gen_range(0..k), k).unwrap();
            let (logits, cache) = net.forward(&x).unwrap();
            let o = LogitVector::new(logits).unwrap();
            let nu = EvidenceState::new(cell.1, &o).vacuity;
            let w = RegWeights::new(0.7, cell.3, 12).unwrap();
            let pair = composite_loss_with_vacuity(cell.0, cell.2, cell.1, &w, &o, &y, Some(nu)).unwrap();
            let grads = net.backward(&cache, &pair.grad).unwrap();

            for (li, layer) in net.layers().iter().enumerate() {
                let n_w = layer.weights.len();
                for j in 0..n_w + layer.bias.len() {
                    let eval = |delta: f64| {
                        let mut m = net.clone();
                        let l = &mut m.layers_mut()[li];
                        if j < n_w {
                            l.weights[j] += delta;
                        } else {
                            l.bias[j - n_w] += delta;
                        }
                        objective(&m, &x, &y, cell, nu)
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    let g = &grads.layers[li];
                    let analytic = if j < n_w { g.weights[j] } else { g.bias[j - n_w] };
                    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
                    assert!(
                        (analytic - numeric).abs() / scale < 1e-4,
                        "cell {ci} K={k} layer {li} param {j}: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }
}
