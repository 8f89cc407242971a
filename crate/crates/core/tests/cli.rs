use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rim"))
        .current_dir(dir)
        .env("RIM_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = rim(dir, args);
    assert!(
        out.status.success(),
        "rim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn same(dir: &Path, a: &str, b: &str) {
    let (x, y) = (fs::read(dir.join(a)).unwrap(), fs::read(dir.join(b)).unwrap());
    assert!(x == y, "{a} and {b} differ");
}

#[test]
fn mask_is_reproducible_from_flags_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mask", "--size", "32", "48", "--accel", "6", "--seed", "9", "--out", "a.rimk"]);
    ok(d, &["mask", "--size", "32", "48", "--accel", "6", "--seed", "9", "--out", "b.rimk"]);
    same(d, "a.rimk", "b.rimk");
    ok(d, &["mask", "--config", "a.rimk.manifest.toml", "--out", "c.rimk"]);
    same(d, "a.rimk", "c.rimk");
    ok(d, &["mask", "--config", "a.rimk.manifest.toml", "--seed", "10", "--out", "e.rimk"]);
    assert_ne!(fs::read(d.join("a.rimk")).unwrap(), fs::read(d.join("e.rimk")).unwrap());
}

#[test]
fn flat_config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.toml"), "kind = \"ellipses\"\nsize = 32\nseed = 4\n").unwrap();
    ok(d, &["phantom", "--config", "cfg.toml", "--out", "a.rimv"]);
    ok(d, &["phantom", "--kind", "ellipses", "--size", "32", "--seed", "4", "--out", "b.rimv"]);
    same(d, "a.rimv", "b.rimv");
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.toml"), "sizes = 32\n").unwrap();
    let out = rim(d, &["phantom", "--config", "cfg.toml", "--out", "a.rimv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
    assert!(!d.join("a.rimv").exists());
}

#[test]
fn manifest_for_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mask", "--size", "16", "16", "--out", "m.rimk"]);
    let out = rim(d, &["phantom", "--config", "m.rimk.manifest.toml"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rim(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(rim(dir.path(), &["mask", "--accel", "fast"]).status.code(), Some(2));
    assert_eq!(rim(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rim"))
        .current_dir(dir.path())
        .env("RIM_THREADS", "zero")
        .args(["mask", "--size", "16", "16"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_checkpoint_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--size", "32", "--out", "p.rimv"]);
    let out = rim(d, &["reconstruct", "--checkpoint", "absent.rimc", "--input", "p.rimv", "--out", "r.rimv", "--png", "r.png"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.rimc"));
    for f in ["r.rimv", "r.rimv.toml", "r.png", "r.rimv.manifest.toml"] {
        assert!(!d.join(f).exists(), "{f} was written");
    }
}

#[test]
fn infeasible_mask_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rim(dir.path(), &["mask", "--size", "16", "16", "--accel", "100", "--ellipse", "0.5"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pipeline_runs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--size", "32", "--seed", "2", "--out", "p.rimv"]);
    ok(d, &["mask", "--size", "32", "32", "--accel", "4", "--seed", "1", "--out", "m.rimk"]);
    ok(
        d,
        &[
            "train", "--features", "4", "--time-steps", "2", "--count", "3", "--size", "32", "--patch", "24",
            "--steps", "3", "--validation", "1", "--seed", "5", "--out", "a.rimc",
        ],
    );
    ok(d, &["train", "--config", "a.rimc.manifest.toml", "--out", "b.rimc"]);
    same(d, "a.rimc", "b.rimc");
    same(d, "a.curve.csv", "b.curve.csv");

    for method in ["rim", "cs", "zero-filled"] {
        let out = format!("r-{method}.rimv");
        ok(
            d,
            &[
                "reconstruct", "--method", method, "--checkpoint", "a.rimc", "--input", "p.rimv", "--mask", "m.rimk",
                "--noise", "0.02", "--cs-iters", "10", "--out", &out,
            ],
        );
        let again = format!("r-{method}-2.rimv");
        ok(d, &["reconstruct", "--config", &format!("{out}.manifest.toml"), "--out", &again]);
        same(d, &out, &again);
    }

    ok(d, &["metrics", "--reference", "p.rimv", "--estimate", "r-cs.rimv", "--out", "m.csv"]);
    let csv = fs::read_to_string(d.join("m.csv")).unwrap();
    assert!(csv.starts_with("model,dataset,acceleration,slice,seed,ssim,psnr,snr\n"));
    assert_eq!(csv.lines().count(), 2);

    ok(
        d,
        &[
            "eval", "--checkpoint", "a.rimc", "gone.rimc", "--datasets", "ellipses", "--count", "2", "--size", "32",
            "--accel", "4", "--cs-iters", "5", "--out", "e.csv",
        ],
    );
    let summary = fs::read_to_string(d.join("e.summary.csv")).unwrap();
    assert!(summary.contains("IRIM@textured,ellipses,4,psnr,2,"));
    assert!(summary.contains("gone@gone,ellipses,4,psnr,0,"));

    ok(
        d,
        &[
            "lesion-sim", "--checkpoint", "a.rimc", "--size", "32", "--mask-seeds", "2", "--accel", "4", "--factors",
            "0", "1.5", "--out", "les",
        ],
    );
    ok(d, &["lesion-sim", "--config", "les/manifest.toml", "--out", "les2"]);
    same(d, "les/lesion.csv", "les2/lesion.csv");
    let manifest = fs::read_to_string(d.join("les/manifest.toml")).unwrap();
    assert!(manifest.contains("center = ["));
    assert!(d.join("les/panels/IRIM-a_R4.png").exists());

    ok(
        d,
        &["bench", "--features", "4", "--time-steps", "2", "3", "--reps", "2", "--warmup", "0", "--size", "16", "--no-cs", "--out", "b.csv"],
    );
    assert_eq!(fs::read_to_string(d.join("b.csv")).unwrap().lines().count(), 1 + 6);
}

#[test]
fn full_sampling_zero_filled_recovers_the_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--size", "32", "--out", "p.rimv"]);
    ok(
        d,
        &["reconstruct", "--method", "zero-filled", "--input", "p.rimv", "--accel", "1", "--out", "z.rimv"],
    );
    ok(d, &["metrics", "--reference", "p.rimv", "--estimate", "z.rimv", "--out", "m.csv"]);
    let csv = fs::read_to_string(d.join("m.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let ssim: f64 = row[5].parse().unwrap();
    assert!(ssim > 0.999, "{csv}");
}

#[test]
fn kspace_input_uses_given_sensitivities() {
    use rim_core::harness::{gen_phantom, write_volume, Domain, PhantomKind, Volume};
    use rim_core::mri::{forward_op, synth_sensitivities};
    use rim_core::sampling::SamplingMask;

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let x = gen_phantom(PhantomKind::Ellipses, 32, 7).unwrap();
    let coils = synth_sensitivities(32, 32, 3, 1).unwrap();
    let y = forward_op(&x, &coils, &SamplingMask::full(32, 32)).unwrap();
    let mut k = Volume::from_images(&y).unwrap();
    k.domain = Domain::Kspace;
    write_volume(d.join("k.rimv"), &k).unwrap();
    write_volume(d.join("s.rimv"), &Volume::from_images(&coils.sensitivities).unwrap()).unwrap();
    write_volume(d.join("x.rimv"), &Volume::from_image(&x)).unwrap();

    let out = rim(d, &["reconstruct", "--method", "zero-filled", "--input", "k.rimv", "--out", "r.rimv"]);
    assert_eq!(out.status.code(), Some(3), "k-space without sensitivities must fail");
    ok(
        d,
        &["reconstruct", "--method", "zero-filled", "--input", "k.rimv", "--sensitivities", "s.rimv", "--accel", "1", "--out", "r.rimv"],
    );
    ok(d, &["metrics", "--reference", "x.rimv", "--estimate", "r.rimv", "--out", "m.csv"]);
    let csv = fs::read_to_string(d.join("m.csv")).unwrap();
    let psnr: f64 = csv.lines().nth(1).unwrap().split(',').nth(6).unwrap().parse().unwrap();
    assert!(psnr > 60.0, "{csv}");
}
