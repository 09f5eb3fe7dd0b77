use std::path::Path;
use std::process::{Command, Output};

use pcss_adv::pointcloud::{load_cloud, save_cloud, PointCloud};
use pcss_adv_cli::commands::read_manifest;

fn pcssadv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcssadv")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tiny(dir: &Path) -> Vec<String> {
    [
        format!("out_dir={}", dir.display()),
        "seed=3".into(),
        "scene.points=96".into(),
        "scene.train=3".into(),
        "scene.test=2".into(),
        "model.hidden=8".into(),
        "model.k_agg=4".into(),
        "train.epochs=1".into(),
        "attack.steps=5".into(),
        "attack.alpha=3".into(),
    ]
    .into()
}

fn run(cmd: &str, extra: &[String], over: &[&str]) -> Output {
    let mut args: Vec<&str> = vec![cmd];
    args.extend(extra.iter().map(String::as_str));
    args.extend(over);
    pcssadv(&args)
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    ok(&run("synth", &cfg, &[]));
    let manifest = read_manifest(&tmp.path().join("scenes")).unwrap();
    assert_eq!(manifest.iter().filter(|e| e.split == "train").count(), 3);
    assert_eq!(manifest.iter().filter(|e| e.split == "test").count(), 2);

    let out = ok(&run("train", &cfg, &[]));
    assert!(out.contains("held_out_accuracy="));
    let ckpt = std::fs::read(tmp.path().join("model.ckpt")).unwrap();
    ok(&run("train", &cfg, &[]));
    assert_eq!(std::fs::read(tmp.path().join("model.ckpt")).unwrap(), ckpt);

    let summary = ok(&run("attack", &cfg, &[]));
    for row in ["best", "average", "worst"] {
        assert!(summary.lines().any(|l| l.starts_with(row)), "{summary}");
    }
    let report = std::fs::read_to_string(tmp.path().join("attack/scene_0000.report.txt")).unwrap();
    let again = ok(&run("attack", &cfg, &["attack.workers=2"]));
    assert_eq!(again, summary);
    assert_eq!(std::fs::read_to_string(tmp.path().join("attack/scene_0000.report.txt")).unwrap(), report);

    let defended = ok(&run("defend", &cfg, &[]));
    assert!(defended.contains("sor_acc") && defended.contains("srs_acc"));
    // The no-defense column reproduces the attack summary's accuracy.
    let col = |text: &str, name: &str| -> Vec<String> {
        let mut lines = text.lines().skip_while(|l| !l.starts_with("scene "));
        let head: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        let k = head.iter().position(|h| *h == name).unwrap();
        lines
            .take_while(|l| l.split_whitespace().next().is_some_and(|t| t.parse::<usize>().is_ok()))
            .filter_map(|l| l.split_whitespace().nth(k).map(String::from))
            .collect()
    };
    assert_eq!(col(&defended, "none_acc"), col(&summary, "adv_acc"));

    let same = tmp.path().join("model.ckpt");
    let t = ok(&run("transfer", &cfg, &[&format!("transfer.checkpoint={}", same.display())]));
    assert_eq!(col(&t, "adv_acc_a"), col(&t, "adv_acc_b"));

    let missing = run("transfer", &cfg, &["transfer.checkpoint=/nonexistent/b.ckpt"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn hiding_reports_psr_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    ok(&run("synth", &cfg, &[]));
    ok(&run("train", &cfg, &[]));
    let s = ok(&run("attack", &cfg, &["attack.mode=hiding", "attack.source=2", "attack.target=1"]));
    assert!(s.contains("psr") && s.contains("oob_acc"), "{s}");
}

#[test]
fn zero_steps_summary_equals_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    ok(&run("synth", &cfg, &[]));
    ok(&run("train", &cfg, &[]));
    let s = ok(&run("attack", &cfg, &["attack.steps=0"]));
    let rows: Vec<Vec<&str>> = s.lines().map(|l| l.split_whitespace().collect()).collect();
    let scenes: Vec<&Vec<&str>> = rows.iter().filter(|l| l.len() > 4 && l[0].parse::<usize>().is_ok()).collect();
    assert_eq!(scenes.len(), 2);
    for l in scenes {
        assert_eq!(l[1], l[3]);
        assert_eq!(l[2], l[4]);
    }
}

#[test]
fn synth_is_reproducible_and_handles_zero_scenes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&run("synth", &tiny(a.path()), &[]));
    ok(&run("synth", &tiny(b.path()), &[]));
    let f = "scenes/test/scene_0001.pcseg";
    assert_eq!(
        std::fs::read(a.path().join(f)).unwrap(),
        std::fs::read(b.path().join(f)).unwrap()
    );
    let z = tempfile::tempdir().unwrap();
    ok(&run("synth", &tiny(z.path()), &["scene.train=0", "scene.test=0"]));
    assert!(read_manifest(&z.path().join("scenes")).unwrap().is_empty());
    assert_eq!(run("train", &tiny(z.path()), &["scene.train=0"]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(pcssadv(&["attack", "atack.steps=3"]).status.code(), Some(1));
    assert_eq!(pcssadv(&["defend", "defense.methods=dup"]).status.code(), Some(1));
    assert_eq!(pcssadv(&["nonsense"]).status.code(), Some(1));
    assert_eq!(pcssadv(&["attack", "out_dir=/nonexistent/x"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.cfg");
    std::fs::write(&file, "# comment\nseed = 1\nbogus = 2\n").unwrap();
    let out = pcssadv(&["synth", "-c", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn gradcheck_runs_small() {
    let out = ok(&pcssadv(&[
        "gradcheck",
        "gradcheck.pairs=2",
        "gradcheck.points=16",
        "gradcheck.h=1e-6",
        "model.hidden=8",
        "model.k_agg=3",
    ]));
    let last = out.lines().last().unwrap();
    let frac: f64 = last.rsplit('=').next().unwrap().parse().unwrap();
    assert!(frac >= 0.99, "{out}");
}

/// Minimal ASCII PLY reader used as an independent oracle.
fn read_ply(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let (head, body) = text.split_once("end_header\n").unwrap();
    let rows = body
        .lines()
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    (head.lines().map(String::from).collect(), rows)
}

#[test]
fn export_ply_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("s.pcseg");
    let cloud = PointCloud::new(
        vec![[0.125, -0.5, 0.3333333], [1.0, 0.0, -1.0]],
        vec![1.0, 0.0, 0.5, 0.2, 0.7, 1.2f64.min(1.0)],
        3,
        Some(vec![0, 2]),
        3,
    )
    .unwrap();
    save_cloud(&cloud, &scene).unwrap();
    let ply = tmp.path().join("s.ply");
    ok(&pcssadv(&["export-ply", scene.to_str().unwrap(), ply.to_str().unwrap()]));
    let (head, rows) = read_ply(&std::fs::read_to_string(&ply).unwrap());
    assert!(head.contains(&"element vertex 2".to_string()));
    assert_eq!(rows.len(), 2);
    let back = load_cloud(&scene, true).unwrap();
    for (i, r) in rows.iter().enumerate() {
        for a in 0..3 {
            assert!((r[a] - back.coord(i)[a]).abs() < 1e-6);
        }
    }
    assert_eq!(&rows[0][3..], &[255.0, 0.0, 128.0]);

    ok(&pcssadv(&["export-ply", "--labels", scene.to_str().unwrap(), ply.to_str().unwrap()]));
    let (_, rows) = read_ply(&std::fs::read_to_string(&ply).unwrap());
    assert_ne!(rows[0][3..], rows[1][3..]);
    assert_eq!(pcssadv(&["export-ply", "/nonexistent.pcseg", ply.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn keys_lists_schema() {
    let out = ok(&pcssadv(&["keys"]));
    assert!(out.contains("`attack.lambda2`"));
}
