use ndarray::{s, Array4};
use rand::Rng;

use super::*;
use crate::nn::loss::mse;
use crate::nn::Conv2d;

fn tensors_of<S: Scalar>(m: &mut DualHeadModel<S>) -> Vec<(String, Vec<S>)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |name, _, p| out.push((name, p.value().to_vec())));
    out
}

fn random_batch(b: usize, side: usize, seed: u64) -> Array4<f32> {
    let mut rng = stream(seed, Domain::Init, &[42]);
    Array4::from_shape_fn((b, side, side, 3), |_| rng.gen_range(0.0..1.0))
}

#[test]
fn unknown_arch_is_config_error() {
    assert!(matches!(build_model("resnet50", 10, 0), Err(Error::Config(_))));
}

#[test]
fn same_seed_builds_identical_models() {
    let mut a = DualHeadModel::<f32>::convnet_scaled([8, 16, 32], 10, 5);
    let mut b = DualHeadModel::<f32>::convnet_scaled([8, 16, 32], 10, 5);
    let mut c = DualHeadModel::<f32>::convnet_scaled([8, 16, 32], 10, 6);
    assert_eq!(tensors_of(&mut a), tensors_of(&mut b));
    assert_ne!(tensors_of(&mut a), tensors_of(&mut c));
}

#[test]
fn convnet13_head_shapes() {
    let model = build_model("convnet13", 10, 0).unwrap();
    let x = random_batch(2, 32, 1);
    let super_logits = model.forward(&x, Head::Super).unwrap();
    let self_logits = model.forward(&x, Head::SelfSup).unwrap();
    assert_eq!(super_logits.dim(), (2, 10));
    assert_eq!(self_logits.dim(), (2, 7));
}

/// Closed-form parameter count for the depth-28 wide residual network,
/// written independently of the network code.
fn wrn_params_closed_form(widen: usize, num_classes: usize) -> usize {
    let n = 4usize;
    let w = [16usize, 16 * widen, 32 * widen, 64 * widen];
    let mut total = 3 * 16 * 9; // stem conv
    for g in 0..3 {
        let (cin, cout) = (w[g], w[g + 1]);
        for b in 0..n {
            let i = if b == 0 { cin } else { cout };
            total += 2 * i; // bn1 affine
            total += 9 * i * cout; // conv1
            total += 2 * cout; // bn2 affine
            total += 9 * cout * cout; // conv2
            if b == 0 {
                total += i * cout; // projection shortcut
            }
        }
    }
    total += 2 * w[3]; // final bn
    total += w[3] * num_classes + num_classes; // supervised head
    total += w[3] * 7 + 7; // self-supervised head
    total
}

#[test]
fn wrn_28_4_parameter_count_matches_closed_form() {
    let mut model = build_model("wrn_28_4", 100, 0).unwrap();
    let count = model.num_trainable();
    let expected = wrn_params_closed_form(4, 100);
    assert_eq!(count, expected);
    assert_eq!(expected, 5_873_979);
    assert!((5_840_000..5_900_000).contains(&count));
}

#[test]
fn zero_weight_heads_give_zero_logits() {
    let mut model = DualHeadModel::<f32>::convnet_scaled([4, 8, 8], 5, 1);
    model.visit_params("", &mut |name, _, p| {
        if name.starts_with("head_") {
            for v in p.value_mut() {
                *v = 0.0;
            }
        }
    });
    let x = random_batch(3, 32, 2);
    let logits = model.forward(&x, Head::Super).unwrap();
    assert!(logits.iter().all(|&v| v == 0.0));
}

#[test]
fn inference_rows_are_batch_independent() {
    let model = DualHeadModel::<f32>::convnet_scaled([4, 8, 8], 10, 3);
    let big = random_batch(8, 32, 7);
    let one = big.slice(s![0..1, .., .., ..]).to_owned();
    let lb = model.forward(&big, Head::Super).unwrap();
    let l1 = model.forward(&one, Head::Super).unwrap();
    assert_eq!(lb.row(0), l1.row(0));

    // wide residual path: running-stat normalization is batch independent
    let mut rng = stream(0, Domain::Init, &[1]);
    let wrn = Wrn::<f32>::new(1, &mut rng);
    let bf = wrn.forward_eval(&big).unwrap();
    let f1 = wrn.forward_eval(&one).unwrap();
    for (a, b) in bf.row(0).iter().zip(f1.row(0).iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn predictions_are_normalized() {
    let model = DualHeadModel::<f32>::convnet_scaled([4, 8, 8], 10, 4);
    let probs = model.predict(&random_batch(4, 32, 9), Head::SelfSup).unwrap();
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn branch_training_leaves_other_head_untouched() {
    let mut model = DualHeadModel::<f32>::convnet_scaled([4, 8, 8], 6, 5);
    let before: Vec<(String, Vec<f32>)> = tensors_of(&mut model)
        .into_iter()
        .filter(|(n, _)| n.starts_with("head_self"))
        .collect();
    let x = random_batch(4, 32, 11);
    let mut rng = stream(5, Domain::Dropout, &[0]);
    model.train_branch(&x, &[0, 1, 2, 3], Head::Super, 1.0, &mut rng).unwrap();

    // self head gradient is untouched
    model.visit_params("", &mut |name, _, p| {
        if name.starts_with("head_self") {
            assert!(!p.used(), "{name} marked used");
            assert!(p.grad().iter().all(|&g| g == 0.0), "{name} has gradient");
        }
    });
    let mut sgd = Sgd::new(SgdConfig::new(0.05, 100));
    sgd.apply(&mut model);
    let after: Vec<(String, Vec<f32>)> = tensors_of(&mut model)
        .into_iter()
        .filter(|(n, _)| n.starts_with("head_self"))
        .collect();
    assert_eq!(before, after); // bitwise unchanged

    // but the shared backbone did move
    let mut backbone_moved = false;
    let mut fresh = DualHeadModel::<f32>::convnet_scaled([4, 8, 8], 6, 5);
    let orig = tensors_of(&mut fresh);
    let now = tensors_of(&mut model);
    for ((n0, v0), (_, v1)) in orig.iter().zip(&now) {
        if n0.starts_with("backbone") && v0 != v1 {
            backbone_moved = true;
        }
    }
    assert!(backbone_moved);
}

#[test]
fn zero_loss_gives_zero_grads() {
    // regression probe: loss of a prediction against itself
    let mut rng = stream(8, Domain::Init, &[0]);
    let mut conv = Conv2d::<f64>::new(3, 4, 3, 1, 1, true, &mut rng);
    let x = Array4::from_shape_fn((2, 6, 6, 3), |_| rng.gen_range(-1.0..1.0));
    let y = conv.forward(&x).unwrap();
    let (loss, dy) = mse(&y, &y).unwrap();
    assert_eq!(loss, 0.0);
    conv.backward(&x, &dy).unwrap();
    assert!(conv.w.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn train_reduces_loss_on_tiny_problem() {
    let mut model = DualHeadModel::<f32>::convnet_scaled([4, 8, 8], 2, 9);
    // two clearly separable constant images
    let mut x = Array4::<f32>::zeros((8, 32, 32, 3));
    let mut targets = vec![0usize; 8];
    for i in 0..8 {
        let v = if i % 2 == 0 { 0.9 } else { 0.1 };
        x.slice_mut(s![i, .., .., ..]).fill(v);
        targets[i] = i % 2;
    }
    let mut sgd = Sgd::new(SgdConfig::new(0.02, 60));
    let mut first = 0.0;
    let mut last = 0.0;
    for step in 0..40 {
        model.zero_grads();
        let mut rng = stream(9, Domain::Dropout, &[step]);
        let loss = model.train_branch(&x, &targets, Head::Super, 1.0, &mut rng).unwrap();
        sgd.apply(&mut model);
        if step == 0 {
            first = loss;
        }
        last = loss;
    }
    assert!(last < first * 0.5, "first={first} last={last}");
}
