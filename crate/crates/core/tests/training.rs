use pcss_adv::pointcloud::synth::{benchmark_seeds, room_scenes};
use pcss_adv::segmodel::{checkpoint_bytes, load_checkpoint, save_checkpoint, train, Arch, SegModel, TrainConfig};

fn setup() -> (SegModel, Vec<pcss_adv::pointcloud::PointCloud>) {
    let (train_seeds, _) = benchmark_seeds(5, 6, 0);
    let scenes = room_scenes(&train_seeds, 128).unwrap();
    (SegModel::new(Arch { hidden: 12, ..Arch::default() }, 3).unwrap(), scenes)
}

#[test]
fn training_is_bit_reproducible() {
    let (init, scenes) = setup();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let (a, log_a) = train(&init, &scenes, &cfg).unwrap();
    let (b, log_b) = train(&init, &scenes, &cfg).unwrap();
    assert_eq!(checkpoint_bytes(&a), checkpoint_bytes(&b));
    assert_eq!(log_a, log_b);
    assert_ne!(checkpoint_bytes(&a), checkpoint_bytes(&init));
}

#[test]
fn zero_epochs_keeps_initialization() {
    let (init, scenes) = setup();
    let (m, log) = train(&init, &scenes, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert_eq!(checkpoint_bytes(&m), checkpoint_bytes(&init));
    assert!(log.epoch_loss.is_empty());
}

#[test]
fn training_lowers_loss() {
    let (init, scenes) = setup();
    let (_, log) = train(&init, &scenes, &TrainConfig { epochs: 4, ..TrainConfig::default() }).unwrap();
    assert!(log.epoch_loss.last().unwrap() < log.epoch_loss.first().unwrap());
}

#[test]
fn checkpoint_file_round_trip() {
    let (init, _) = setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&init, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&init));
    assert!(load_checkpoint(dir.path().join("missing")).is_err());
}
