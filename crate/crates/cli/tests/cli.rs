//! End-to-end smoke tests of the faceveil binary: synthesize a model, build a
//! synthetic scene corpus, fit, cluster, replace, render, obfuscate, evaluate,
//! and run a small pipeline.

use faceveil::image::ImageRgb;
use faceveil::imageops::save_landmarks;
use faceveil::model::synth_model;
use faceveil::scenes::{compose_scene, random_identity_params};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_faceveil")
}

fn run(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("spawn faceveil");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("faceveil_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Write a rendered scene, its landmarks, and an annotation line.
fn write_scene(
    dir: &Path,
    model: &faceveil::model::FaceModel,
    seed: u64,
    name: &str,
) -> faceveil::imageops::HeadAnnotation {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let id = random_identity_params(model, &mut rng, 0.6);
    let scene = compose_scene(model, &id, (224, 224), &mut rng).unwrap();
    scene.image.save_png(dir.join(name)).unwrap();
    let stem = name.trim_end_matches(".png");
    save_landmarks(dir.join(format!("{stem}.txt")), &scene.landmarks).unwrap();
    scene.head_box
}

#[test]
fn unknown_flag_fails_with_usage() {
    let (ok, _, err) = run(&["synth-model", "--nonsense"]);
    assert!(!ok);
    assert!(
        err.contains("error"),
        "stderr should carry a usage error: {err}"
    );
}

#[test]
fn help_lists_all_subcommands() {
    let (ok, out, _) = run(&["--help"]);
    assert!(ok);
    for sub in [
        "synth-model",
        "fit",
        "cluster",
        "replace",
        "obfuscate",
        "render",
        "train-inpaint",
        "eval",
        "pipeline",
    ] {
        assert!(out.contains(sub), "--help must list {sub}");
    }
}

#[test]
fn synth_fit_cluster_replace_render_obfuscate_eval_round_trip() {
    let dir = workdir("roundtrip");
    let model_path = dir.join("model.fm3d");
    let (ok, out, err) = run(&[
        "synth-model",
        "--seed",
        "42",
        "--vertices",
        "320",
        "-o",
        model_path.to_str().unwrap(),
    ]);
    assert!(ok, "synth-model failed: {err}");
    assert!(out.contains("320 vertices"));

    // Scene fixture rendered through the library for the fit target.
    let model = synth_model(42, 320).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let id = random_identity_params(&model, &mut rng, 0.5);
    let scene = compose_scene(&model, &id, (192, 192), &mut rng).unwrap();
    let img_path = dir.join("face.png");
    scene.image.save_png(&img_path).unwrap();
    let lm_path = dir.join("face_landmarks.txt");
    save_landmarks(&lm_path, &scene.landmarks).unwrap();

    // Fit several reports so clustering has material.
    let mut reports: Vec<String> = Vec::new();
    for (i, seed) in [(0usize, 11u64), (1, 12), (2, 13)] {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let id = random_identity_params(&model, &mut rng, 0.5);
        let sc = compose_scene(&model, &id, (192, 192), &mut rng).unwrap();
        let ip = dir.join(format!("f{i}.png"));
        sc.image.save_png(&ip).unwrap();
        let lp = dir.join(format!("f{i}.txt"));
        save_landmarks(&lp, &sc.landmarks).unwrap();
        let rp = dir.join(format!("report{i}.json"));
        let (ok, _, err) = run(&[
            "fit",
            "--model",
            model_path.to_str().unwrap(),
            "--image",
            ip.to_str().unwrap(),
            "--landmarks",
            lp.to_str().unwrap(),
            "--iters",
            "10",
            "-o",
            rp.to_str().unwrap(),
        ]);
        assert!(ok, "fit failed: {err}");
        reports.push(rp.to_str().unwrap().to_string());
    }

    let clusters_path = dir.join("clusters.fm3d");
    let mut args = vec!["cluster"];
    for r in &reports {
        args.push(r);
    }
    let k_args = ["-k", "3", "--seed", "5", "-o"];
    args.extend_from_slice(&k_args);
    args.push(clusters_path.to_str().unwrap());
    let (ok, _, err) = run(&args);
    assert!(ok, "cluster failed: {err}");

    let replaced_path = dir.join("replaced.json");
    let (ok, _, err) = run(&[
        "replace",
        "--report",
        &reports[0],
        "--clusters",
        clusters_path.to_str().unwrap(),
        "--rank",
        "3",
        "-o",
        replaced_path.to_str().unwrap(),
    ]);
    assert!(ok, "replace failed: {err}");

    let render_path = dir.join("render.png");
    let (ok, _, err) = run(&[
        "render",
        "--model",
        model_path.to_str().unwrap(),
        "--report",
        replaced_path.to_str().unwrap(),
        "--width",
        "128",
        "--height",
        "128",
        "-o",
        render_path.to_str().unwrap(),
    ]);
    assert!(ok, "render failed: {err}");
    assert!(ImageRgb::load_png(&render_path).is_ok());

    let obf_path = dir.join("obf.png");
    let (ok, _, err) = run(&[
        "obfuscate",
        "--image",
        img_path.to_str().unwrap(),
        "--bbox",
        "40,30,110,120",
        "--face-mode",
        "black",
        "--hair-mode",
        "blur",
        "-o",
        obf_path.to_str().unwrap(),
    ]);
    assert!(ok, "obfuscate failed: {err}");

    let (ok, out, err) = run(&[
        "eval",
        "--a",
        img_path.to_str().unwrap(),
        "--b",
        obf_path.to_str().unwrap(),
        "--bbox",
        "40,30,110,120",
    ]);
    assert!(ok, "eval failed: {err}");
    assert!(out.contains("ssim"), "eval output: {out}");
    assert!(out.contains("mask_ssim"));

    // Rank out of range must fail with a nonzero exit.
    let (ok, _, err) = run(&[
        "replace",
        "--report",
        &reports[0],
        "--clusters",
        clusters_path.to_str().unwrap(),
        "--rank",
        "99",
        "-o",
        dir.join("x.json").to_str().unwrap(),
    ]);
    assert!(!ok);
    assert!(err.contains("rank"));
}

#[test]
fn pipeline_smoke_over_two_images() {
    let dir = workdir("pipeline");
    let model_path = dir.join("model.fm3d");
    let (ok, _, err) = run(&[
        "synth-model",
        "--seed",
        "7",
        "--vertices",
        "300",
        "-o",
        model_path.to_str().unwrap(),
    ]);
    assert!(ok, "synth-model failed: {err}");
    let model = synth_model(7, 300).unwrap();

    let input_dir = dir.join("inputs");
    let lm_dir = dir.join("landmarks");
    std::fs::create_dir_all(&input_dir).unwrap();
    std::fs::create_dir_all(&lm_dir).unwrap();
    let mut ann_lines = String::new();
    for (i, seed) in [(0usize, 21u64), (1, 22)] {
        let name = format!("img{i}.png");
        let bbox = write_scene(&input_dir, &model, seed, &name);
        std::fs::rename(
            input_dir.join(format!("img{i}.txt")),
            lm_dir.join(format!("img{i}.txt")),
        )
        .unwrap();
        ann_lines.push_str(&format!(
            "{name} {} {} {} {}\n",
            bbox.x, bbox.y, bbox.w, bbox.h
        ));
    }
    let ann_path = dir.join("annotations.txt");
    std::fs::write(&ann_path, ann_lines).unwrap();

    let out_dir = dir.join("out");
    let (ok, out, err) = run(&[
        "pipeline",
        "--model",
        model_path.to_str().unwrap(),
        "--annotations",
        ann_path.to_str().unwrap(),
        "--landmarks",
        lm_dir.to_str().unwrap(),
        "--input-dir",
        input_dir.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--face-mode",
        "blur",
        "--hair-mode",
        "black",
        "--fit-iterations",
        "6",
    ]);
    assert!(ok, "pipeline failed: {err}\n{out}");
    assert!(out_dir.join("metrics.csv").exists());
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("img0_final.png").exists());
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("image,ssim,mask_ssim,proxy_match\n"));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"variant\""));
}

#[test]
fn pipeline_all_modalities_emits_18_sets_17_obfuscating() {
    let dir = workdir("modalities");
    let model_path = dir.join("model.fm3d");
    let (ok, _, err) = run(&[
        "synth-model",
        "--seed",
        "3",
        "--vertices",
        "280",
        "-o",
        model_path.to_str().unwrap(),
    ]);
    assert!(ok, "synth-model failed: {err}");
    let model = synth_model(3, 280).unwrap();

    let input_dir = dir.join("inputs");
    let lm_dir = dir.join("landmarks");
    std::fs::create_dir_all(&input_dir).unwrap();
    std::fs::create_dir_all(&lm_dir).unwrap();
    let bbox = write_scene(&input_dir, &model, 31, "solo.png");
    std::fs::rename(input_dir.join("solo.txt"), lm_dir.join("solo.txt")).unwrap();
    let ann_path = dir.join("annotations.txt");
    std::fs::write(
        &ann_path,
        format!("solo.png {} {} {} {}\n", bbox.x, bbox.y, bbox.w, bbox.h),
    )
    .unwrap();

    // Clusters from a handful of quick fits of the same scene.
    let clusters_path = dir.join("clusters.fm3d");
    {
        use faceveil::identity::{cluster_identities, extract_identity};
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let vectors: Vec<_> = (0..20)
            .map(|_| {
                let mut p = faceveil::model::SemanticParams::zeros();
                for i in 0..faceveil::model::ALPHA_DIM {
                    p.alpha[i] = rng.gen_range(-0.05..0.05);
                }
                extract_identity(&p)
            })
            .collect();
        cluster_identities(&vectors, 15, 1)
            .unwrap()
            .save(&clusters_path)
            .unwrap();
    }

    let out_dir = dir.join("out");
    let (ok, out, err) = run(&[
        "pipeline",
        "--model",
        model_path.to_str().unwrap(),
        "--clusters",
        clusters_path.to_str().unwrap(),
        "--annotations",
        ann_path.to_str().unwrap(),
        "--landmarks",
        lm_dir.to_str().unwrap(),
        "--input-dir",
        input_dir.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--fit-iterations",
        "4",
        "--all-modalities",
    ]);
    assert!(ok, "pipeline --all-modalities failed: {err}\n{out}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("modalities.json")).unwrap())
            .unwrap();
    let entries = summary.as_array().unwrap();
    assert_eq!(entries.len(), 18, "expected 18 modality runs");
    let obfuscating = entries
        .iter()
        .filter(|e| e["obfuscating"].as_bool() == Some(true))
        .count();
    assert_eq!(obfuscating, 17, "exactly 17 combinations obfuscate");
    // 18 distinct per-combination output directories with manifests.
    let subdirs = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(subdirs, 18);
}
