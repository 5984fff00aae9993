use mipcnet::loss::{combined_loss, one_hot, soft_dice_loss, DICE_EPS};
use mipcnet::{Tensor, Var};

fn labels_4x4() -> Vec<u8> {
    vec![0, 1, 1, 2, 0, 1, 3, 2, 0, 0, 3, 3, 2, 2, 1, 0]
}

#[test]
fn uniform_logits_give_log_k_cross_entropy() {
    for k in [2usize, 4, 9] {
        let labels: Vec<u8> = (0..16).map(|i| (i % k) as u8).collect();
        let logits = Var::constant(Tensor::<f64>::full(vec![1, k, 4, 4], 0.3));
        let parts = combined_loss(&logits, &labels).unwrap();
        assert!((parts.ce.value().data()[0] - (k as f64).ln()).abs() < 1e-9, "k={k}");
    }
}

#[test]
fn uniform_probs_dice_closed_form_k2() {
    // 2x2 image, two foreground pixels; every prob is 1/2
    let labels = [1u8, 0, 0, 1];
    let g = one_hot::<f64>(&labels, 1, 2, 2, 2).unwrap();
    let p = Var::constant(Tensor::full(vec![1, 2, 2, 2], 0.5));
    let loss = soft_dice_loss(&p, &g).unwrap().value().data()[0];
    // sum p*g = 1, sum p = 2, sum g = 2
    let expected = 1.0 - (2.0 * 1.0 + DICE_EPS) / (2.0 + 2.0 + DICE_EPS);
    assert!((loss - expected).abs() < 1e-15);

    let parts = combined_loss(&Var::constant(Tensor::<f64>::zeros(vec![1, 2, 2, 2])), &labels).unwrap();
    let total = parts.total.value().data()[0];
    assert!((total - (0.5 * 2f64.ln() + 0.5 * expected)).abs() < 1e-12);
}

#[test]
fn peaked_logits_drive_loss_to_zero_monotonically() {
    let labels = labels_4x4();
    let g = one_hot::<f64>(&labels, 1, 4, 4, 4).unwrap();
    let losses: Vec<f64> = [1.0, 5.0, 20.0]
        .iter()
        .map(|&s| {
            let logits = Var::constant(g.map(|v| v * s));
            combined_loss(&logits, &labels).unwrap().total.value().data()[0]
        })
        .collect();
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    assert!(losses[2] < 1e-6, "{losses:?}");
}

#[test]
fn loss_is_non_negative_on_arbitrary_logits() {
    let labels = labels_4x4();
    for seed in 0..20u64 {
        let logits = Tensor::<f64>::from_fn(vec![1, 4, 4, 4], |i| {
            let x = ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 100.0;
            x - 5.0
        });
        let parts = combined_loss(&Var::constant(logits), &labels).unwrap();
        for v in [&parts.total, &parts.ce, &parts.dice] {
            assert!(v.value().data()[0] >= 0.0);
        }
    }
}

#[test]
fn mismatched_labels_are_rejected() {
    let logits = Var::constant(Tensor::<f64>::zeros(vec![1, 3, 2, 2]));
    assert!(combined_loss(&logits, &[0, 1, 2]).is_err());
    assert!(combined_loss(&logits, &[0, 1, 2, 3]).is_err());
}
