mod common;

use common::{csv_rows, markdown_rows, micro_spec, numeric};
use mipcnet::data::{generate_synthetic, Dataset};
use mipcnet::harness::*;
use mipcnet::training::TrainConfig;
use mipcnet::ModelConfig;

#[test]
fn variant_grid_writes_every_artifact_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = micro_spec(AblationAxis::MipcVariant);
    let mut lines = Vec::new();
    let first = run_ablation(&spec, dir.path(), |l| lines.push(l.to_string())).unwrap();
    assert_eq!(first.rows.len(), 4);
    assert!(first.rows.iter().all(|r| r.seeds_completed == 2 && r.error.is_none()));
    assert!(first.rows.iter().all(|r| r.dsc_std.is_some()));
    for f in ["tables/table5.md", "tables/table5.csv", "tables/table5.json", "plots/table5.svg", "manifests/ablation-table5.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let manifest: AblationManifest =
        serde_json::from_str(&std::fs::read_to_string(manifest_path(dir.path(), spec.axis)).unwrap()).unwrap();
    assert_eq!(manifest.runs.len(), 8);
    assert_eq!(manifest.spec, spec);
    for (path, hash) in &manifest.artifacts {
        if path.starts_with("checkpoints") {
            assert_eq!(&file_sha256(&dir.path().join(path)).unwrap(), hash);
        }
    }

    let mut again = Vec::new();
    let second = run_ablation(&spec, dir.path(), |l| again.push(l.to_string())).unwrap();
    assert!(again.iter().all(|l| l.contains("reused")), "{again:?}");
    assert_eq!(first, second);
}

#[test]
fn fresh_rerun_gives_identical_rows() {
    let spec = AblationSpec { seeds: vec![3], ..micro_spec(AblationAxis::MutualInclusion) };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ta = run_ablation(&spec, a.path(), |_| {}).unwrap();
    let tb = run_ablation(&spec, b.path(), |_| {}).unwrap();
    assert_eq!(ta.rows, tb.rows);
}

#[test]
fn shared_cell_is_independent_of_grid_and_order() {
    // MIPC in the mutual-inclusion grid is the pam+cam cell of the variant grid
    let t4 = AblationSpec { seeds: vec![0], ..micro_spec(AblationAxis::MutualInclusion) };
    let t5 = AblationSpec { seeds: vec![0], ..micro_spec(AblationAxis::MipcVariant) };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r4 = run_ablation(&t4, a.path(), |_| {}).unwrap();
    let r5 = run_ablation(&t5, b.path(), |_| {}).unwrap();
    let mipc = r4.rows.iter().find(|r| r.cell == "MIPC").unwrap();
    let pam_cam = r5.rows.iter().find(|r| r.cell == "pam+cam").unwrap();
    assert_eq!(mipc.config_hash, pam_cam.config_hash);
    assert_eq!((mipc.dsc_mean, mipc.hd_mean), (pam_cam.dsc_mean, pam_cam.hd_mean));

    // and running the variant grid into the first directory reuses it
    let mut lines = Vec::new();
    run_ablation(&t5, a.path(), |l| lines.push(l.to_string())).unwrap();
    assert!(lines.iter().any(|l| l.starts_with("pam+cam") && l.contains("reused")), "{lines:?}");
}

#[test]
fn failing_runs_are_recorded_and_the_grid_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = micro_spec(AblationAxis::MutualInclusion);
    spec.train = TrainConfig { lr: 1e30, momentum: 0.0, max_iterations: 12, ..spec.train };
    let t = run_ablation(&spec, dir.path(), |_| {}).unwrap();
    assert_eq!(t.rows.len(), 2);
    for r in &t.rows {
        assert_eq!(r.seeds_completed, 0);
        assert!(r.error.as_deref().unwrap().contains("non-finite"), "{:?}", r.error);
        assert_eq!(r.dsc_mean, None);
    }
    let md = std::fs::read_to_string(dir.path().join("tables/table4.md")).unwrap();
    assert!(md.contains("failed: "));
    assert!(svg_chart(&t).contains(">failed<"));
}

#[test]
fn markdown_and_csv_carry_the_same_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let t = run_ablation(&micro_spec(AblationAxis::MutualInclusion), dir.path(), |_| {}).unwrap();
    let md = markdown_rows(&markdown_table(&t));
    let csv = csv_rows(&csv_table(&t).unwrap());
    assert_eq!(md.len(), t.rows.len());
    assert_eq!(csv.len(), t.rows.len());
    for ((m, c), row) in md.iter().zip(&csv).zip(&t.rows) {
        assert_eq!(m[0], c[0]);
        assert_eq!(numeric(m), numeric(c));
        assert_eq!(m[8], row.config_hash);
        assert_eq!(c[8], row.config_hash);
        let dsc = numeric(c)[0].unwrap();
        assert!((dsc - row.dsc_mean.unwrap()).abs() <= 5e-5);
    }
}

#[test]
fn report_headers_mark_direction_and_analog() {
    let row = ResultRow {
        cell: "only".into(),
        config_hash: "ab".repeat(32),
        param_count: 10,
        seeds_completed: 1,
        seeds_total: 1,
        dsc_mean: Some(87.5),
        dsc_std: None,
        hd_mean: Some(2.25),
        hd_std: None,
        error: None,
    };
    let t = ResultTable {
        axis: AblationAxis::GlPlacement,
        title: AblationAxis::GlPlacement.title().into(),
        note: ANALOG_NOTE.into(),
        hd_unit: "px".into(),
        rows: vec![row],
        runtime_secs: 1.0,
    };
    let md = markdown_table(&t);
    let header = md.lines().find(|l| l.starts_with("| Cell")).unwrap();
    let (dsc, hd) = (header.find("DSC↑").unwrap(), header.find("HD↓").unwrap());
    assert!(dsc < hd);
    assert!(md.contains(ANALOG_NOTE));
    let rows = markdown_rows(&md);
    assert_eq!(rows.len(), 1);
    assert_eq!(numeric(&rows[0]), vec![Some(87.5), None, Some(2.25), None, Some(10.0), Some(1.0), Some(1.0)]);
    assert_eq!(csv_rows(&csv_table(&t).unwrap()).len(), 1);
    let svg = svg_chart(&t);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<rect").count(), 2);
}

#[test]
fn pc_cell_is_smaller_than_mipc_cell() {
    let cells = AblationAxis::MutualInclusion.cells(&ModelConfig::tiny());
    let count = |i: usize| mipcnet::Model::<f32>::new(&cells[i].model, 0).unwrap().param_count();
    assert_eq!((cells[0].name.as_str(), cells[1].name.as_str()), ("PC", "MIPC"));
    assert!(count(0) < count(1));
}

#[test]
fn placement_cells_differ_pairwise() {
    let mc = ModelConfig::micro();
    let spec = micro_spec(AblationAxis::GlPlacement);
    let ds = generate_synthetic(&spec.data).unwrap();
    let (image, _) = Dataset::batch::<f64>(&[&ds.samples[0]]).unwrap();
    let outs = placement_logits(&mc, 0, &image).unwrap();
    assert_eq!(outs.len(), 6);
    for i in 0..outs.len() {
        for j in i + 1..outs.len() {
            assert_ne!(outs[i].1.data(), outs[j].1.data(), "{} vs {}", outs[i].0, outs[j].0);
        }
    }
}

#[test]
fn spec_validation_names_the_key() {
    let mut spec = micro_spec(AblationAxis::MipcVariant);
    spec.seeds.clear();
    assert!(spec.validate().unwrap_err().to_string().contains("seeds"));
    let mut spec = micro_spec(AblationAxis::MipcVariant);
    spec.data.num_classes = 5;
    assert!(spec.validate().unwrap_err().to_string().contains("num_classes"));
    let text = r#"{"axis": "table9"}"#;
    assert!(serde_json::from_str::<AblationSpec>(text).unwrap_err().to_string().contains("table9"));
    assert_eq!("gl_placement".parse::<AblationAxis>().unwrap(), AblationAxis::GlPlacement);
}
