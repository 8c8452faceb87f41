mod common;

use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scm-ident"))
        .args(args)
        .env("SCM_IDENT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn check_exit_codes() {
    let ok = run(&["check", &path("topology_identity.json")]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = run(&["check", &path("topology_collide.json"), "--format", "json"]);
    assert_eq!(bad.status.code(), Some(1));
    let v = json_of(&bad);
    assert_eq!(
        v["violating_pair_labels"],
        serde_json::json!([["L_3", "L_4"]])
    );
    assert_eq!(v["deciders_agree"], Value::Bool(true));

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    let out = run(&["check", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let invalid = dir.path().join("invalid.json");
    std::fs::write(
        &invalid,
        r#"{"num_tasks":1,"num_latents":2,"adjacency":[[0.5,1]]}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["check", invalid.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let extra = dir.path().join("extra.json");
    std::fs::write(
        &extra,
        r#"{"num_tasks":1,"num_latents":1,"adjacency":[[1]],"x":1}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["check", extra.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["check", "/nonexistent/file.json"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn closure_trace_shows_first_difference() {
    let out = run(&["closure", &path("topology_walkthrough.json"), "--trace"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed Pa(Y_1) = {L_1, L_2}"));
    assert!(text.contains("seed Pa(Y_2) = {L_2, L_3, L_5}"));
    assert!(text.contains("[0] − [1] = {L_1}"));

    let out = run(&[
        "closure",
        &path("topology_collide.json"),
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v = json_of(&out);
    assert_eq!(v["missing_singletons"], serde_json::json!(["L_3", "L_4"]));
    assert!(v["family_size"].as_u64().unwrap() <= 1 << 4);
}

#[test]
fn enumerate_reports_capacity() {
    let out = run(&["enumerate", "--m", "2", "--n", "5", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["mismatches"], serde_json::json!([]));
    let m2 = &v["capacity"][1];
    assert_eq!(m2["max_identifiable_latents"], 4);
    assert_eq!(m2["stated_bound"], 3);
    let s22 = v["shapes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["num_tasks"] == 2 && s["num_latents"] == 2)
        .unwrap()
        .clone();
    assert_eq!(s22["matrices"], 16);
    let s12 = v["shapes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["num_tasks"] == 1 && s["num_latents"] == 2)
        .unwrap()
        .clone();
    assert!(s12["identifiable"].as_u64().unwrap() >= 1);
    assert_eq!(
        run(&["enumerate", "--m", "5", "--n", "5"]).status.code(),
        Some(2)
    );
}

#[test]
fn loss_and_gradcheck() {
    let out = run(&["loss", &path("soft_identity.json"), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["uic_loss"], 0.0);
    assert_eq!(v["dis_loss"], 0.0);

    let dir = tempfile::tempdir().unwrap();
    let dup = dir.path().join("dup.json");
    std::fs::write(&dup, "[[1,1],[0,0]]").unwrap();
    let v = json_of(&run(&["loss", dup.to_str().unwrap(), "--format", "json"]));
    assert!((v["uic_loss"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(
        run(&["loss", dup.to_str().unwrap(), "--alpha", "3"])
            .status
            .code(),
        Some(2)
    );
    let oob = dir.path().join("oob.json");
    std::fs::write(&oob, "[[1.2,0]]").unwrap();
    assert_eq!(run(&["loss", oob.to_str().unwrap()]).status.code(), Some(2));

    let out = run(&[
        "gradcheck",
        "--alpha",
        "4",
        "--trials",
        "100",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json_of(&out)["report"]["max_rel_err_uic"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn mask_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.json");
    std::fs::write(&scores, "[0.05, -0.05, 0.0]").unwrap();
    let out = run(&[
        "mask",
        scores.to_str().unwrap(),
        "--format",
        "json",
        "--seed",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["tasks"][0]["soft"][2], 0.5);
    assert_eq!(v["tasks"][0]["bernoulli"].as_array().unwrap().len(), 3);
    assert_eq!(
        run(&["mask", scores.to_str().unwrap(), "--scale", "10"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn dgp_gen_and_recover() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let gen = run(&[
        "dgp-gen",
        &path("spec_ident.json"),
        "--samples",
        "3000",
        "--seed",
        "9",
        "--out",
        csv.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(gen.status.code(), Some(0));
    assert_eq!(json_of(&gen)["variety"]["ok"], Value::Bool(true));

    let rec = run(&[
        "recover",
        csv.to_str().unwrap(),
        &path("topology_identity.json"),
        "--init-from",
        &path("spec_ident.json"),
        "--format",
        "json",
    ]);
    assert_eq!(rec.status.code(), Some(0));
    assert!(json_of(&rec)["report"]["mcc"].as_f64().unwrap() >= 0.999);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"restarts": 2, "max_iters": 300}"#).unwrap();
    let rec = run(&[
        "recover",
        csv.to_str().unwrap(),
        &path("topology_identity.json"),
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(rec.status.code(), Some(0));
    assert_eq!(
        json_of(&rec)["report"]["restart_objectives"]
            .as_array()
            .unwrap()
            .len(),
        2
    );

    std::fs::write(&cfg, r#"{"seed": 2}"#).unwrap();
    let bad = run(&[
        "recover",
        csv.to_str().unwrap(),
        &path("topology_identity.json"),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let wrong = run(&[
        "recover",
        csv.to_str().unwrap(),
        &path("topology_collide.json"),
    ]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn experiment_small() {
    let out = run(&[
        "experiment",
        &path("spec_ident.json"),
        &path("spec_collide.json"),
        "--seeds",
        "2",
        "--samples",
        "2000",
        "--restarts",
        "2",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    for side in ["identifiable", "colliding"] {
        assert_eq!(v[side]["per_seed"].as_array().unwrap().len(), 2);
        assert!(v[side]["summary"]["median_mcc"].is_number());
        assert!(v[side]["summary"]["dispersion"].is_number());
    }
    assert!(v["median_gap"].is_number());
}

#[test]
fn thread_cap_must_parse() {
    let out = Command::new(env!("CARGO_BIN_EXE_scm-ident"))
        .args(["check", &path("topology_identity.json")])
        .env("SCM_IDENT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
