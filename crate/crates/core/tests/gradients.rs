use std::sync::Arc;

use pcss_adv::attack::{adv_loss, smoothness, target_gradient, AttackConfig, Perturbation, TargetSpec};
use pcss_adv::diffcore::{finite_diff_check, relative_error, Graph, Inputs, Prim, Tape, Tensor};
use pcss_adv::pointcloud::PointCloud;
use pcss_adv::segmodel::{Arch, Fields, SegModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, c: usize) -> PointCloud {
    let coords = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let feats = (0..n * 3).map(|_| rng.random_range(0.05..0.95)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    PointCloud::new(coords, feats, 3, Some(labels), c).unwrap()
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Smooth primitives chained into a scalar match central differences.
    #[test]
    fn smooth_graph_matches_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Graph::new()
            .op("h", Prim::MatMul, &["x", "w"])
            .op("hb", Prim::AddBias, &["h", "b"])
            .op("t", Prim::Tanh, &["hb"])
            .op("c", Prim::ConcatCols, &["t", "x"])
            .op("g", Prim::GatherRows(vec![2, 0, 0, 1]), &["c"])
            .op("m", Prim::GroupMean(2), &["g"])
            .op("n", Prim::RowNorm, &["m"])
            .op("sq", Prim::Square, &["t"])
            .op("ce", Prim::SoftmaxCrossEntropy(vec![1, 0, 3]), &["sq"])
            .op("s1", Prim::SumAll, &["n"])
            .op("s2", Prim::Scale(0.5), &["ce"])
            .op("out", Prim::Add, &["s1", "s2"])
            .output("out");
        let ins: Inputs = [
            ("x".to_string(), mat(&mut rng, 3, 2)),
            ("w".to_string(), mat(&mut rng, 2, 4)),
            ("b".to_string(), mat(&mut rng, 1, 4)),
        ]
        .into();
        let rep = finite_diff_check(&g, &ins, &["x", "w", "b"], 1e-5).unwrap();
        prop_assert!(rep.max_rel_error < 1e-5, "max rel error {}", rep.max_rel_error);
    }

    /// The attack objective gradient on color equals differences of
    /// `lambda1·hinge + lambda2·smoothness` evaluated from plain forward passes.
    #[test]
    fn attack_objective_gradient(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Arch { hidden: 8, k_agg: 3, ..Arch::default() };
        let model = SegModel::new(arch, seed).unwrap();
        let cloud = random_cloud(&mut rng, 24, arch.num_classes);
        let target = TargetSpec::degrade_class(&cloud, cloud.labels().unwrap()[0]).unwrap();
        let cfg = AttackConfig { alpha: 3, ..AttackConfig::norm_unbounded() };
        let pert = Perturbation::new(&cloud, target.indices(), Fields::Color).unwrap();
        let tg = target_gradient(&model, &cloud, &target, &pert, &cfg, true).unwrap();

        let objective = |c: &PointCloud| -> f64 {
            let logits = model.forward(c).unwrap();
            let rows: Vec<Vec<f64>> = target.indices().iter().map(|&i| logits.row(i).to_vec()).collect();
            let adv = adv_loss(target.mode(), &Tensor::from_rows(&rows).unwrap(), target.labels()).unwrap();
            cfg.lambda1 * adv + cfg.lambda2 * smoothness(c.coords(), c.feats(), 3, cfg.alpha).unwrap()
        };
        prop_assert!((objective(&cloud) - (cfg.lambda1 * tg.adv + cfg.lambda2 * tg.smooth)).abs() < 1e-9);

        let h = 1e-6;
        for (q, &i) in target.indices().iter().enumerate() {
            for f in 0..3 {
                let bump = |d: f64| {
                    let mut feats = cloud.feats().to_vec();
                    feats[i * 3 + f] += d;
                    cloud.with_fields(cloud.coords().to_vec(), feats).unwrap()
                };
                let numeric = (objective(&bump(h)) - objective(&bump(-h))) / (2.0 * h);
                let r = relative_error(tg.feats[q * 3 + f], numeric);
                prop_assert!(r < 1e-4, "entry {q}/{f}: analytic {} numeric {numeric}", tg.feats[q * 3 + f]);
            }
        }
    }
}

/// Model input gradients against central differences with a step small
/// enough that max and relu kinks are not crossed.
#[test]
fn model_input_gradient_small_step() {
    let h = 1e-6;
    let mut bad = 0;
    let mut total = 0;
    for pair in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(pair);
        let arch = Arch { hidden: 16, k_agg: 4, ..Arch::default() };
        let model = SegModel::new(arch, 50 + pair).unwrap();
        let cloud = random_cloud(&mut rng, 48, arch.num_classes);
        let nb = model.neighbors(cloud.coords()).unwrap();
        let lab: Arc<[usize]> = cloud.labels().unwrap().into();
        let g = model
            .input_grad(&cloud.coords_tensor(), &cloud.feats_tensor(), &nb, Fields::Both, |tape, v| {
                tape.softmax_cross_entropy(v.logits, lab.clone())
            })
            .unwrap();
        let value = |c: &Tensor, f: &Tensor| {
            let mut tape = Tape::new();
            let logits = tape.constant(model.forward_with(c, f, &nb).unwrap()).unwrap();
            let l = tape.softmax_cross_entropy(logits, lab.clone()).unwrap();
            tape.value(l).item().unwrap()
        };
        let (ct, ft) = (cloud.coords_tensor(), cloud.feats_tensor());
        for (which, analytic) in [(0, g.coords.unwrap()), (1, g.feats.unwrap())] {
            for e in 0..analytic.len() {
                let (mut cp, mut fp, mut cm, mut fm) = (ct.clone(), ft.clone(), ct.clone(), ft.clone());
                if which == 0 {
                    cp.data_mut()[e] += h;
                    cm.data_mut()[e] -= h;
                } else {
                    fp.data_mut()[e] += h;
                    fm.data_mut()[e] -= h;
                }
                let numeric = (value(&cp, &fp) - value(&cm, &fm)) / (2.0 * h);
                total += 1;
                if relative_error(analytic.data()[e], numeric) > 1e-3 {
                    bad += 1;
                }
            }
        }
    }
    assert!(bad * 1000 <= total, "{bad} of {total} entries off");
}

/// The tape result for a tiny model matches a hand-rolled forward pass.
#[test]
fn model_forward_by_hand() {
    let arch = Arch { hidden: 3, k_agg: 1, num_classes: 2, num_feats: 3 };
    let model = SegModel::new(arch, 3).unwrap();
    let cloud = PointCloud::new(
        vec![[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.9, 0.0]],
        vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        3,
        None,
        2,
    )
    .unwrap();
    let p = model.params();
    let dense = |x: &[f64], w: &Tensor, b: &Tensor, relu: bool| -> Vec<f64> {
        let (r, c) = (w.rows(), w.cols());
        (0..c)
            .map(|j| {
                let v = b.data()[j] + (0..r).map(|i| x[i] * w.data()[i * c + j]).sum::<f64>();
                if relu { v.max(0.0) } else { v }
            })
            .collect()
    };
    let local: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            let mut x = cloud.coord(i).to_vec();
            x.extend_from_slice(cloud.feat(i));
            let h = dense(&x, &p[0], &p[1], true);
            dense(&h, &p[2], &p[3], true)
        })
        .collect();
    // Nearest other point: 0↔1, 2→0.
    let nearest = [1, 0, 0];
    let logits = model.forward(&cloud).unwrap();
    for i in 0..3 {
        let mut x = local[i].clone();
        x.extend_from_slice(&local[nearest[i]]);
        let h = dense(&x, &p[4], &p[5], true);
        let out = dense(&h, &p[6], &p[7], false);
        for (a, b) in out.iter().zip(logits.row(i)) {
            assert!((a - b).abs() < 1e-12, "row {i}: {a} vs {b}");
        }
    }
}
