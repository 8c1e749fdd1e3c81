mod common;

use common::{greedy_replay, random_quad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textcontour::eval::{default_thresholds, match_image, sweep_iou};
use textcontour::geometry::{Detection, Point, QuadBox};
use textcontour::targets::Instance;

fn random_image(rng: &mut ChaCha8Rng, max: usize) -> Vec<Instance<f64>> {
    (0..rng.gen_range(1..=max))
        .map(|_| {
            let text = if rng.gen_bool(0.15) { "###" } else { "word" };
            Instance::new(random_quad(rng, 200.0), text)
        })
        .collect()
}

fn jitter(q: &QuadBox<f64>, amount: f64, rng: &mut ChaCha8Rng) -> QuadBox<f64> {
    loop {
        let v = q.vertices().map(|p| {
            Point::new(
                p.x + rng.gen_range(-amount..=amount),
                p.y + rng.gen_range(-amount..=amount),
            )
        });
        if let Ok(j) = QuadBox::new(v) {
            return j;
        }
    }
}

#[test]
fn ground_truth_as_detections_is_perfect_at_every_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let gts: Vec<Vec<Instance<f64>>> = (0..20).map(|_| random_image(&mut rng, 6)).collect();
    let dets: Vec<Vec<Detection<f64>>> = gts
        .iter()
        .map(|img| {
            img.iter()
                .filter(|g| !g.dont_care)
                .map(|g| Detection::new(g.quad.clone(), 1.0))
                .collect()
        })
        .collect();
    let res = sweep_iou(&dets, &gts, &default_thresholds()).unwrap();
    assert_eq!(res.per_threshold.len(), 9);
    for row in &res.per_threshold {
        assert_eq!(
            (row.precision, row.recall, row.f1),
            (1.0, 1.0, 1.0),
            "at {}",
            row.iou_threshold
        );
    }
}

#[test]
fn jittered_detections_give_a_nonincreasing_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..20 {
        let gts: Vec<Vec<Instance<f64>>> = (0..10).map(|_| random_image(&mut rng, 5)).collect();
        let amount = 2.0 + trial as f64;
        let dets: Vec<Vec<Detection<f64>>> = gts
            .iter()
            .map(|img| {
                img.iter()
                    .map(|g| {
                        Detection::new(jitter(&g.quad, amount, &mut rng), rng.gen_range(0.5..1.0))
                    })
                    .collect()
            })
            .collect();
        let res = sweep_iou(&dets, &gts, &default_thresholds()).unwrap();
        let f1: Vec<f64> = res.per_threshold.iter().map(|r| r.f1).collect();
        assert!(
            f1.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            "trial {trial}: {f1:?}"
        );
    }
}

/// Cases built from a coarse lattice so tied scores and tied IoUs are common.
fn small_case(rng: &mut ChaCha8Rng) -> (Vec<Detection<f64>>, Vec<Instance<f64>>, f64) {
    let cell = |rng: &mut ChaCha8Rng| {
        let x = rng.gen_range(0..4) as f64 * 10.0;
        let y = rng.gen_range(0..4) as f64 * 10.0;
        let w = rng.gen_range(1..3) as f64 * 10.0;
        let h = rng.gen_range(1..3) as f64 * 10.0;
        QuadBox::from_rect(x, y, x + w, y + h).unwrap()
    };
    let gts = (0..rng.gen_range(0..5))
        .map(|_| Instance::new(cell(rng), if rng.gen_bool(0.2) { "###" } else { "w" }))
        .collect();
    let dets = (0..rng.gen_range(0..6))
        .map(|_| Detection::new(cell(rng), [0.6, 0.8, 0.9][rng.gen_range(0..3)]))
        .collect();
    let thr = [0.3, 0.5, 0.7][rng.gen_range(0..3)];
    (dets, gts, thr)
}

#[test]
fn greedy_matching_agrees_with_replay_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for case in 0..500 {
        let (dets, gts, thr) = small_case(&mut rng);
        let m = match_image(&dets, &gts, thr);
        let got = (m.counts.tp, m.counts.fp, m.counts.discarded);
        assert_eq!(got, greedy_replay(&dets, &gts, thr), "case {case}");
        assert_eq!(m.counts.num_gt, gts.iter().filter(|g| !g.dont_care).count());
        assert_eq!(m.counts.tp + m.counts.fp + m.counts.discarded, dets.len());
    }
}

#[test]
fn no_detections_give_zero_precision_and_recall() {
    let gts = vec![vec![Instance::new(
        QuadBox::from_rect(0.0, 0.0, 10.0, 10.0).unwrap(),
        "w",
    )]];
    let res = sweep_iou::<f64>(&[vec![]], &gts, &[0.5]).unwrap();
    assert_eq!((res.precision, res.recall, res.f1), (0.0, 0.0, 0.0));
}
