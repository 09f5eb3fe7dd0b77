use pcss_adv::pointcloud::{
    format_cloud, knn_points, neighborhood_change_rate, parse_cloud, synth_scene, PointCloud, SceneSpec,
};
use proptest::prelude::*;

fn brute_knn(points: &[f64], dim: usize, k: usize) -> Vec<Vec<usize>> {
    let n = points.len() / dim;
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..dim).map(|a| (points[i * dim + a] - points[j * dim + a]).powi(2)).sum();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), n),
            prop::collection::vec(0.0f64..1.0, n * 3),
            prop::collection::vec(0usize..5, n),
        )
            .prop_map(|(c, f, l)| PointCloud::new(c, f, 3, Some(l), 5).unwrap())
    })
}

proptest! {
    #[test]
    fn knn_matches_brute_force(
        n in 2usize..30,
        dim in 1usize..7,
        k_raw in 1usize..30,
        grid in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Coarse grids force distance ties.
        let pts: Vec<f64> = (0..n * dim)
            .map(|_| if grid { rng.random_range(0..3) as f64 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let k = 1 + (k_raw - 1) % (n - 1);
        let nb = knn_points(&pts, dim, k, None).unwrap();
        let brute = brute_knn(&pts, dim, k);
        for (i, row) in brute.iter().enumerate() {
            prop_assert_eq!(nb.row(i), row.as_slice());
        }
    }

    #[test]
    fn pcseg_round_trip_is_exact(c in cloud_strategy()) {
        let back = parse_cloud(&format_cloud(&c), true).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn color_changes_leave_neighborhoods(c in cloud_strategy(), shift in 0.0f64..0.5) {
        prop_assume!(c.len() >= 3);
        let feats: Vec<f64> = c.feats().iter().map(|v| (v + shift).min(1.0)).collect();
        let moved = c.with_fields(c.coords().to_vec(), feats).unwrap();
        prop_assert_eq!(neighborhood_change_rate(&c, &moved, 2).unwrap(), 0.0);
    }
}

#[test]
fn knn_rejects_bad_k() {
    let pts = vec![0.0; 9];
    assert!(knn_points(&pts, 3, 0, None).is_err());
    assert!(knn_points(&pts, 3, 3, None).is_err());
    assert!(knn_points(&pts, 3, 2, Some(&[5])).is_err());
}

#[test]
fn synthetic_scene_is_deterministic_and_in_range() {
    let a = synth_scene(&SceneSpec::default_room(512, 9)).unwrap();
    let b = synth_scene(&SceneSpec::default_room(512, 9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 512);
    assert!(a.coords().iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    assert!(a.feats().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(a, synth_scene(&SceneSpec::default_room(512, 10)).unwrap());
}

#[test]
fn raw_pcseg_is_normalized_on_load() {
    let text = "pcseg 1 2 3 2 1\n0 0 0 255 0 0 0\n2 4 0 0 255 0 1\n";
    let c = parse_cloud(text, true).unwrap();
    assert_eq!(c.feat(0), &[1.0, 0.0, 0.0]);
    assert!(c.coords().iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(c.labels().unwrap(), &[0, 1]);
}

#[test]
fn malformed_pcseg_reports_line() {
    let text = "pcseg 1 2 3 2 1\n0 0 0 1 1 1 0\n0 0 0 1 1\n";
    let (line, _) = parse_cloud(text, true).unwrap_err();
    assert_eq!(line, 3);
}
