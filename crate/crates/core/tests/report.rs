use mtnet_core::data::{generate_phantom, Sample, SessionKind, Volume};
use mtnet_core::evaluation::{emit_report, evaluate_predictions, validate_report_json, EvalOptions, FoldEvaluation, REPORT_FILES};
use mtnet_core::ClassLabel;

fn samples() -> Vec<Sample> {
    let labels = [ClassLabel::Hc, ClassLabel::Hc, ClassLabel::Mmd, ClassLabel::Icsd, ClassLabel::Stroke];
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let (input, target) = generate_phantom(40 + i as u64, label, [16, 16, 8]).unwrap();
            Sample::from_volumes(format!("s{i}"), SessionKind::Baseline, label, input, target).unwrap()
        })
        .collect()
}

fn one_hot(label: ClassLabel) -> Vec<f64> {
    let mut p = vec![0.0; 4];
    p[label.index()] = 1.0;
    p
}

fn perfect(samples: &[Sample]) -> FoldEvaluation {
    let preds: Vec<(Volume, Vec<f64>)> = samples.iter().map(|s| (s.target.clone(), one_hot(s.label))).collect();
    evaluate_predictions(samples, &preds, &EvalOptions::default()).unwrap()
}

#[test]
fn prediction_equal_to_target_is_perfect() {
    let s = samples();
    let e = perfect(&s);
    assert_eq!(e.accuracy(), 1.0);
    assert!((e.image.ssim - 1.0).abs() < 1e-9);
    assert_eq!(e.image.nrmse, 0.0);
    assert_eq!(e.image.psnr, 100.0);
    let a = e.agreement.unwrap();
    assert!(a.bias.abs() < 1e-9 && a.sd < 1e-9);
    for scan in &e.scans {
        assert_eq!(scan.predicted, scan.label);
        assert!((scan.true_mean_cbf - scan.pred_mean_cbf).abs() < 1e-9);
    }
}

#[test]
fn report_files_are_well_formed() {
    let s = samples();
    let mut preds: Vec<(Volume, Vec<f64>)> = s.iter().map(|x| (x.target.clone(), one_hot(x.label))).collect();
    for v in preds[1].0.data_mut() {
        *v *= 0.9;
    }
    preds[2].1 = one_hot(ClassLabel::Hc);
    let e = evaluate_predictions(&s, &preds, &EvalOptions::default()).unwrap();
    assert_eq!(e.accuracy(), 0.8);
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_report(&e, std::slice::from_ref(&e), &EvalOptions::default(), dir.path()).unwrap();
    assert_eq!(paths.len(), REPORT_FILES.len());

    let json = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    let report = validate_report_json(&json).unwrap();
    assert_eq!(report.n_scans, s.len());

    let csv = std::fs::read_to_string(dir.path().join("per_scan.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), s.len() + 1);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));

    for name in REPORT_FILES.iter().filter(|n| n.ends_with(".svg")) {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg", "{name}");
        assert!(doc.descendants().count() > 3, "{name} is empty");
    }
}

#[test]
fn tampered_report_is_rejected() {
    let s = samples();
    let e = perfect(&s);
    let dir = tempfile::tempdir().unwrap();
    emit_report(&e, &[], &EvalOptions::default(), dir.path()).unwrap();
    let json = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["n_scans"] = serde_json::json!(99);
    assert!(validate_report_json(&v.to_string()).is_err());
    v["n_scans"] = serde_json::json!(s.len());
    v["schema_version"] = serde_json::json!(7);
    assert!(validate_report_json(&v.to_string()).is_err());
    assert!(validate_report_json("{").is_err());
}
