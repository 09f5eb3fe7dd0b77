use pcss_adv::defense::{apply_defense, sor, sor_scores, srs, Defense, DefenseConfig};
use pcss_adv::pointcloud::PointCloud;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let feats = (0..n * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|i| i % 3).collect();
    PointCloud::new(coords, feats, 3, Some(labels), 3).unwrap()
}

fn brute_sor(c: &PointCloud, k: usize, mult: f64) -> Vec<usize> {
    let n = c.len();
    let v = |i: usize| -> Vec<f64> { c.coord(i).iter().chain(c.feat(i)).copied().collect() };
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| v(i).iter().zip(v(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    (0..n).filter(|&i| scores[i] > mean + mult * std).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sor_matches_brute_force(seed in any::<u64>(), k in 1usize..5, mult in 0.2f64..2.0) {
        let c = random_cloud(seed, 40);
        let (f, removed) = sor(&c, k, mult).unwrap();
        prop_assert_eq!(&removed, &brute_sor(&c, k, mult));
        prop_assert_eq!(f.cloud.len() + removed.len(), c.len());
        prop_assert_eq!(sor_scores(&c, k).unwrap().len(), c.len());
    }

    #[test]
    fn srs_keeps_sorted_subset(seed in any::<u64>(), m in 0usize..40) {
        let c = random_cloud(seed, 40);
        let f = srs(&c, m, seed).unwrap();
        prop_assert_eq!(f.kept.len(), 40 - m);
        prop_assert!(f.kept.windows(2).all(|w| w[0] < w[1]));
        for (row, &i) in f.kept.iter().enumerate() {
            prop_assert_eq!(f.cloud.coord(row), c.coord(i));
            prop_assert_eq!(f.cloud.labels().unwrap()[row], c.labels().unwrap()[i]);
        }
    }
}

#[test]
fn srs_count_can_mean_kept() {
    let c = random_cloud(1, 30);
    let cfg = DefenseConfig { srs_count: 10, srs_count_is_kept: true, ..DefenseConfig::default() };
    assert_eq!(apply_defense(&c, Defense::Srs, &cfg).unwrap().cloud.len(), 10);
    let cfg = DefenseConfig { srs_count: 10, ..DefenseConfig::default() };
    assert_eq!(apply_defense(&c, Defense::Srs, &cfg).unwrap().cloud.len(), 20);
    assert_eq!(apply_defense(&c, Defense::None, &cfg).unwrap().cloud, c);
}
