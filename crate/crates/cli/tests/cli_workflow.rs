//! End-to-end exercise of the `granterra` binary: one tiny simulation run,
//! then a synthetic-analytic dataset through ingest → train → predict →
//! crossval → assimilate → scaling, plus exit-code checks on bad input.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use granterra_core::pipeline::{CrossvalReport, DatasetManifest, ScalingReport, TrainedModel};
use granterra_core::ropf::{write_observations_csv, Observation};
use granterra_core::sim::{
    DomainConfig, KinematicSchedule, LegGeometry, Morphology, ScenarioConfig, SphConfig,
};
use granterra_core::trace::{uniform_theta_grid, ForceTrace, TraceMetadata};

fn granterra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_granterra"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Analytic truth used for the synthetic dataset: drag linear in ω, lift
/// affine in ω with an angle-coupled term.
fn truth(omega: f64, theta: f64) -> (f64, f64) {
    (
        omega * theta.sin(),
        2.0 + 0.5 * omega + (1.0 + 0.3 * omega) * theta.cos(),
    )
}

fn write_scenario_files(dir: &Path, morphology: &str, fl: f64, omega: f64, amp: f64) {
    let grid = uniform_theta_grid(96);
    let (fx, fz): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .map(|&t| {
            let (x, z) = truth(omega, t);
            (amp * x, amp * z)
        })
        .unzip();
    let tr = ForceTrace::new(grid, fx, fz).unwrap();
    let meta = TraceMetadata {
        schema_version: granterra_core::SCHEMA_VERSION.to_string(),
        morphology: morphology.to_string(),
        fl,
        omega_rad_per_s: omega,
        config_digest: format!("synthetic-{morphology}-{omega}"),
        source: "simulation".to_string(),
    };
    let stem = format!("{morphology}_w{}", (omega * 10.0).round() as i64);
    fs::write(dir.join(format!("{stem}.csv")), tr.to_csv()).unwrap();
    fs::write(dir.join(format!("{stem}.json")), meta.to_json()).unwrap();
}

#[test]
fn simulate_writes_trace_metadata_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        domain: DomainConfig {
            width: 0.10,
            fill_height: 0.03,
            ..DomainConfig::default()
        },
        sph: SphConfig {
            particle_spacing: 0.006,
            ..SphConfig::default()
        },
        leg: LegGeometry {
            morphology: Morphology::Flat,
            length: 0.02,
            fl: 1.0 / 3.0,
        },
        schedule: KinematicSchedule {
            pause_duration: 0.05,
            hip_height: 0.005,
            omega: 6.0,
            theta_start: -0.6,
            theta_end: 0.6,
            hold_duration: 0.0,
            ..KinematicSchedule::default()
        },
        sample_stride: 10,
        trace_points: 32,
        ..ScenarioConfig::default()
    };
    let cfg_path = dir.path().join("scenario.json");
    fs::write(&cfg_path, cfg.to_json()).unwrap();
    let out_path = dir.path().join("run.csv");

    let out = granterra(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_success(&out, "simulate");

    let trace = ForceTrace::from_csv(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(trace.len(), 32);
    let meta = TraceMetadata::from_json(
        &fs::read_to_string(dir.path().join("run.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta.morphology, "flat");
    assert_eq!(meta.omega_rad_per_s, 6.0);
    assert_eq!(meta.source, "simulation");
    assert_eq!(meta.config_digest, cfg.digest());

    let diag: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("run.diagnostics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        diag["schema_version"].as_str().unwrap(),
        granterra_core::SCHEMA_VERSION
    );
    assert_eq!(diag["config_digest"].as_str().unwrap(), cfg.digest());
    assert!(diag["diagnostics"]["settled"].as_bool().unwrap());
    assert!(diag["diagnostics"]["n_steps"].as_u64().unwrap() > 0);

    // The simulate output pair is directly ingestable.
    let manifest_path = dir.path().join("manifest.json");
    let out = granterra(&[
        "ingest",
        "--dir",
        dir.path().to_str().unwrap(),
        "--out",
        manifest_path.to_str().unwrap(),
        "--trace-points",
        "32",
    ]);
    assert_success(&out, "ingest of simulate output");
    let manifest =
        DatasetManifest::from_json(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest.scenarios.len(), 1);
    assert_eq!(manifest.scenarios[0].morphology, "flat");
}

#[test]
fn synthetic_dataset_flows_through_the_whole_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    for i in 1..=6 {
        write_scenario_files(&data, "flat", 1.0 / 3.0, i as f64, 1.0);
    }

    // ingest
    let manifest_path = dir.path().join("manifest.json");
    let out = granterra(&[
        "ingest",
        "--dir",
        data.to_str().unwrap(),
        "--out",
        manifest_path.to_str().unwrap(),
        "--trace-points",
        "64",
    ]);
    assert_success(&out, "ingest");
    let manifest =
        DatasetManifest::from_json(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest.theta_grid.len(), 64);
    assert_eq!(manifest.scenarios.len(), 6);

    // train (exact retention: the data is noiseless and low-rank)
    let model_path = dir.path().join("model.json");
    let out = granterra(&[
        "train",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--design",
        "flat",
        "--thresholds",
        "1.0,1.0,1.0",
        "--out",
        model_path.to_str().unwrap(),
    ]);
    assert_success(&out, "train");
    let model_text = fs::read_to_string(&model_path).unwrap();
    let model = TrainedModel::from_json(&model_text).unwrap();
    assert_eq!(model.morphology, "flat");
    assert_eq!(model.train_omegas, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    // training is deterministic: a second run reproduces the file bytes
    let model2_path = dir.path().join("model2.json");
    let out = granterra(&[
        "train",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--design",
        "flat",
        "--thresholds",
        "1.0,1.0,1.0",
        "--out",
        model2_path.to_str().unwrap(),
    ]);
    assert_success(&out, "train (repeat)");
    assert_eq!(model_text, fs::read_to_string(&model2_path).unwrap());

    // predict at a training condition: the mean must reproduce the truth
    let pred_path = dir.path().join("pred.csv");
    let out = granterra(&[
        "predict",
        "--model",
        model_path.to_str().unwrap(),
        "--omega",
        "3.0",
        "--out",
        pred_path.to_str().unwrap(),
    ]);
    assert_success(&out, "predict");
    let pred_text = fs::read_to_string(&pred_path).unwrap();
    let mut lines = pred_text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "theta_rad,fx_N_per_m,fz_N_per_m,fx_lower95,fx_upper95,fz_lower95,fz_upper95"
    );
    let mut worst = 0.0_f64;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols.len(), 7);
        let (fx, fz) = truth(3.0, cols[0]);
        worst = worst.max((cols[1] - fx).abs()).max((cols[2] - fz).abs());
        assert!(cols[3] <= cols[1] && cols[1] <= cols[4], "fx band ordering");
        assert!(cols[5] <= cols[2] && cols[2] <= cols[6], "fz band ordering");
    }
    assert!(worst < 1e-3, "training-condition defect {worst}");
    let sidecar: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("pred.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar["omega_rad_per_s"].as_f64().unwrap(), 3.0);
    assert!(!sidecar["extrapolation"].as_bool().unwrap());
    assert_eq!(
        sidecar["schema_version"].as_str().unwrap(),
        granterra_core::SCHEMA_VERSION
    );

    // crossval
    let report_path = dir.path().join("report.json");
    let out = granterra(&[
        "crossval",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--design",
        "flat",
        "--thresholds",
        "1.0,1.0,1.0",
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_success(&out, "crossval");
    let report =
        CrossvalReport::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 6);
    assert_eq!(report.folds.iter().filter(|f| f.edge).count(), 2);

    // assimilate: exact-truth observations at a held-out speed, seeded twice
    let obs: Vec<Observation> = (0..8)
        .flat_map(|k| {
            let theta = -1.8 + 3.6 * k as f64 / 7.0;
            let (fx, fz) = truth(2.5, theta);
            [
                Observation {
                    theta_rad: theta,
                    behavior: 0,
                    value: fx,
                },
                Observation {
                    theta_rad: theta,
                    behavior: 1,
                    value: fz,
                },
            ]
        })
        .collect();
    let obs_path = dir.path().join("obs.csv");
    fs::write(&obs_path, write_observations_csv(&obs)).unwrap();
    let updated_path = dir.path().join("updated.csv");
    let assimilate_args = [
        "assimilate",
        "--model",
        model_path.to_str().unwrap(),
        "--omega",
        "2.5",
        "--obs",
        obs_path.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        updated_path.to_str().unwrap(),
    ];
    let out = granterra(&assimilate_args);
    assert_success(&out, "assimilate");
    let updated_text = fs::read_to_string(&updated_path).unwrap();
    let updated = ForceTrace::from_csv(&updated_text).unwrap();
    assert_eq!(updated.len(), 64);
    let record: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("updated.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(record["omega_rad_per_s"].as_f64().unwrap(), 2.5);
    assert!(record["prior_trace"].is_object());
    assert!(record["block_results"].as_array().unwrap().len() == 1);

    // same seed → byte-identical output
    let out = granterra(&assimilate_args);
    assert_success(&out, "assimilate (repeat)");
    assert_eq!(updated_text, fs::read_to_string(&updated_path).unwrap());
}

#[test]
fn scaling_report_covers_all_morphologies() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    // Three designs at three shared speeds; amplitudes vary per design so
    // the raw maxima disperse.
    for (morph, fl, amp) in [
        ("flat", 1.0 / 3.0, 1.0),
        ("l_leg", 1.0 / 3.0, 1.4),
        ("reversed_c", 1.0 / 3.0, 0.7),
    ] {
        for omega in [1.0, 2.0, 3.0] {
            write_scenario_files(&data, morph, fl, omega, amp);
        }
    }
    let manifest_path = dir.path().join("manifest.json");
    let out = granterra(&[
        "ingest",
        "--dir",
        data.to_str().unwrap(),
        "--out",
        manifest_path.to_str().unwrap(),
    ]);
    assert_success(&out, "ingest");

    let report_path = dir.path().join("scaling.json");
    let out = granterra(&[
        "scaling",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_success(&out, "scaling");
    let report =
        ScalingReport::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.omegas, vec![1.0, 2.0, 3.0]);
    assert_eq!(report.morphologies.len(), 3);
    assert_eq!(report.morphologies[0].morphology, "flat");
    assert_eq!(report.morphologies[0].mu, 1.0);
    assert!(report.cov_drag_raw.iter().all(|c| c.is_finite()));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("3 morphologies at 3 common speeds"));
}

#[test]
fn validation_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();

    // Config that fails validation (negative width).
    let mut cfg = ScenarioConfig::default();
    cfg.domain.width = -1.0;
    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, cfg.to_json()).unwrap();
    let out = granterra(&["simulate", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // Missing input file.
    let out = granterra(&[
        "predict",
        "--model",
        dir.path().join("nope.json").to_str().unwrap(),
        "--omega",
        "1.0",
        "--out",
        dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Malformed thresholds list.
    let manifest_path = dir.path().join("empty_manifest.json");
    let empty = DatasetManifest::new(uniform_theta_grid(16), Vec::new()).unwrap();
    fs::write(&manifest_path, empty.to_json()).unwrap();
    let out = granterra(&[
        "train",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--design",
        "flat",
        "--thresholds",
        "0.9,0.9",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown design name.
    let out = granterra(&[
        "train",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--design",
        "banana",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
