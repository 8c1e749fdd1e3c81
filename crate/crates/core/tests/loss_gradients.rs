mod common;

use std::f64::consts::FRAC_PI_2;

use common::{central_difference, random_rbox, rel_err};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textcontour::losses::{
    angle_loss, contour_loss, dense_iou_loss, dice_loss, iou_box_loss, total_loss, LossComponents,
    LossWeights,
};
use textcontour::model::NetworkOutputs;
use textcontour::nn::Tensor;
use textcontour::targets::{build_targets, AnnotatedImage, Instance, TargetConfig};
use textcontour::training::batch_loss;

const POINTS: usize = 100;
const H: f64 = 1e-6;
const TOL: f64 = 1e-3;

fn assert_grad(name: &str, f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) {
    for (i, &a) in analytic.iter().enumerate().take(x.len()) {
        let fd = central_difference(&f, x, i, H);
        let e = rel_err(fd, a);
        assert!(
            e <= TOL,
            "{name}: coordinate {i}: finite difference {fd} vs analytic {a}"
        );
    }
}

#[test]
fn dice_loss_examples() {
    let gt: [f64; 5] = [1.0, 1.0, 0.0, 0.0, 1.0];
    let ones = [1.0; 5];
    assert!(dice_loss(&gt, &gt, &ones, 1e-5).value <= 1e-4);
    let disjoint = dice_loss(&[0.0, 0.0, 1.0, 1.0, 0.0], &gt, &ones, 1e-5).value;
    assert!((disjoint - 1.0).abs() <= 1e-3);
}

#[test]
fn angle_loss_examples() {
    let one = [1.0f64];
    assert!(angle_loss(&[0.3], &[0.3], &one).value.abs() <= 1e-6);
    assert!((angle_loss(&[0.3 + FRAC_PI_2], &[0.3], &one).value - 1.0).abs() <= 1e-6);
}

#[test]
fn iou_loss_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..POINTS {
        let p: [f64; 4] = std::array::from_fn(|_| rng.gen_range(5.0..30.0));
        let g: [f64; 4] = std::array::from_fn(|_| rng.gen_range(5.0..30.0));
        let base = iou_box_loss(p, g, 1e-5);
        for k in [0.5, 2.0, 7.0] {
            let scaled = iou_box_loss(p.map(|v| v * k), g.map(|v| v * k), 1e-5);
            assert!(
                (scaled - base).abs() <= 1e-6,
                "scale {k}: {base} -> {scaled}"
            );
        }
    }
}

#[test]
fn weighted_total_with_unit_components() {
    let c = LossComponents {
        l_score: 1.0,
        l_iou: 1.0,
        l_theta: 1.0,
        l_contour: 1.0,
    };
    let w = LossWeights::default();
    let r = total_loss(&c, &w, true).unwrap();
    assert!((r.l_total - 2.11).abs() <= 1e-9, "{}", r.l_total);
    assert!((r.l_geo - 2.0).abs() <= 1e-12);
    let baseline = total_loss(
        &LossComponents {
            l_contour: 5.0,
            ..c
        },
        &w,
        false,
    )
    .unwrap();
    assert!((baseline.l_total - 2.01).abs() <= 1e-9);
    assert_eq!(baseline.l_contour, None);
}

#[test]
fn dice_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..POINTS {
        let n = rng.gen_range(2..16);
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98)).collect();
        let gt: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
        let mask: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.85) as u8 as f64).collect();
        let f = |p: &[f64]| dice_loss(p, &gt, &mask, 1e-5).value;
        assert_grad("dice", f, &pred, &dice_loss(&pred, &gt, &mask, 1e-5).grad);
    }
}

#[test]
fn iou_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..POINTS {
        let n = rng.gen_range(1..6);
        let mut pred: Vec<f64> = (0..4 * n).map(|_| rng.gen_range(0.5..20.0)).collect();
        let gt: Vec<f64> = (0..4 * n).map(|_| rng.gen_range(0.5..20.0)).collect();
        // Keep every coordinate away from the min() kink at p == g.
        for (p, g) in pred.iter_mut().zip(&gt) {
            if (*p - *g).abs() < 1e-3 {
                *p += 0.01;
            }
        }
        let weight: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    1.0
                } else {
                    rng.gen_bool(0.7) as u8 as f64
                }
            })
            .collect();
        let split = |v: &[f64]| -> [Vec<f64>; 4] {
            std::array::from_fn(|c| v[c * n..(c + 1) * n].to_vec())
        };
        let g4 = split(&gt);
        let eval = |p: &[f64]| {
            let p4 = split(p);
            dense_iou_loss(
                [&p4[0], &p4[1], &p4[2], &p4[3]],
                [&g4[0], &g4[1], &g4[2], &g4[3]],
                &weight,
                1e-5,
            )
        };
        let analytic: Vec<f64> = eval(&pred).grad.concat();
        assert_grad("iou", |p| eval(p).value, &pred, &analytic);
    }
}

#[test]
fn angle_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..POINTS {
        let n = rng.gen_range(1..10);
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..2.4)).collect();
        let gt: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..2.4)).collect();
        let weight: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    1.0
                } else {
                    rng.gen_bool(0.6) as u8 as f64
                }
            })
            .collect();
        let f = |p: &[f64]| angle_loss(p, &gt, &weight).value;
        assert_grad("angle", f, &pred, &angle_loss(&pred, &gt, &weight).grad);
    }
}

#[test]
fn contour_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values = [0.0, 0.6, 0.9, 1.0];
    for _ in 0..POINTS {
        let n = rng.gen_range(1..16);
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let gt: Vec<f64> = (0..n).map(|_| values[rng.gen_range(0..4)]).collect();
        let mask: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    1.0
                } else {
                    rng.gen_bool(0.8) as u8 as f64
                }
            })
            .collect();
        let f = |p: &[f64]| contour_loss(p, &gt, &mask).value;
        assert_grad("contour", f, &pred, &contour_loss(&pred, &gt, &mask).grad);
    }
}

/// The batch objective's output gradients agree with differences of its total.
#[test]
fn batch_objective_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, size) = (2usize, 64u32);
    let targets: Vec<_> = (0..n)
        .map(|i| {
            let r = random_rbox(&mut rng, size as f64);
            let text = if i == 1 { "###" } else { "w" };
            let other = random_rbox(&mut rng, size as f64);
            let s = AnnotatedImage {
                image: RgbImage::new(size, size),
                instances: vec![
                    Instance::new(r.to_quad().unwrap(), "w"),
                    Instance::new(other.to_quad().unwrap(), text),
                ],
            };
            build_targets(&s, &TargetConfig::default()).unwrap()
        })
        .collect();
    let hw = (size / 4) as usize;
    let plane = hw * hw;
    let mut rand_vec = |len: usize, lo: f64, hi: f64| {
        (0..len)
            .map(|_| rng.gen_range(lo..hi))
            .collect::<Vec<f64>>()
    };
    let out = NetworkOutputs {
        contour: Some(Tensor::from_vec(
            [n, 1, hw, hw],
            rand_vec(n * plane, 0.05, 0.95),
        )),
        score: Tensor::from_vec([n, 1, hw, hw], rand_vec(n * plane, 0.05, 0.95)),
        distances: Tensor::from_vec([n, 4, hw, hw], rand_vec(4 * n * plane, 0.3, 12.0)),
        angle: Tensor::from_vec([n, 1, hw, hw], rand_vec(n * plane, -0.7, 2.3)),
    };
    let w = LossWeights::default();
    let step = batch_loss(&out, &targets, &w, true, false).unwrap();
    assert!(step.report.is_consistent(&w, 1e-9));
    let total = |o: &NetworkOutputs<f64>| {
        batch_loss(o, &targets, &w, true, false)
            .unwrap()
            .report
            .l_total
    };

    // Probe a random subset of coordinates in every output tensor.
    type Pick = fn(&mut NetworkOutputs<f64>) -> &mut Tensor<f64>;
    let tensors: [(&str, Pick, &Tensor<f64>); 4] = [
        ("score", |o| &mut o.score, &step.d_score),
        ("distances", |o| &mut o.distances, &step.d_distances),
        ("angle", |o| &mut o.angle, &step.d_angle),
        (
            "contour",
            |o| o.contour.as_mut().unwrap(),
            step.d_contour.as_ref().unwrap(),
        ),
    ];
    for (name, pick, grad) in tensors {
        let len = grad.data.len();
        for _ in 0..40 {
            let i = rng.gen_range(0..len);
            let mut plus = out.clone();
            pick(&mut plus).data[i] += H;
            let mut minus = out.clone();
            pick(&mut minus).data[i] -= H;
            let fd = (total(&plus) - total(&minus)) / (2.0 * H);
            let e = rel_err(fd, grad.data[i]);
            assert!(
                e <= TOL,
                "{name}[{i}]: finite difference {fd} vs analytic {}",
                grad.data[i]
            );
        }
    }
}
