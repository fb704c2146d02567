use std::path::Path;

use rfs_energy::{
    evaluate_category, fit_model_from, read_manifest, read_ppf, Error, Label, PpfFiles,
    ScoreMethod, ScoringConfig, Split,
};

/// Encodes a PPF file field by field, independently of the library writer.
fn hand_encoded(dim: u32, rows: &[Vec<f32>], keypoints: bool) -> Vec<u8> {
    let mut b = b"RFSP".to_vec();
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&(keypoints as u16).to_le_bytes());
    b.extend_from_slice(&dim.to_le_bytes());
    b.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    if keypoints {
        for (i, _) in rows.iter().enumerate() {
            for v in [i as f32 * 8.0, 4.0, 1.0, 0.5] {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for r in rows {
        for v in r {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

fn rows(seed: usize, n: usize, shift: f32) -> Vec<Vec<f32>> {
    (0..n)
        .map(|i| {
            (0..3)
                .map(|j| ((seed * 31 + i * 7 + j * 3) % 11) as f32 / 3.0 + shift)
                .collect()
        })
        .collect()
}

fn write(dir: &Path, rel: &str, bytes: &[u8]) {
    let p = dir.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, bytes).unwrap();
}

#[test]
fn externally_written_category_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("bottle");
    let mut items = Vec::new();
    for i in 0..6 {
        let rel = format!("train/good/{i:03}.ppf");
        write(
            &root,
            &rel,
            &hand_encoded(3, &rows(i, 10 + i, 0.0), i % 2 == 0),
        );
        items.push(format!(
            r#"{{"path": "{rel}", "label": 0, "split": "train"}}"#
        ));
    }
    for i in 0..4 {
        let rel = format!("test/good/{i:03}.ppf");
        write(&root, &rel, &hand_encoded(3, &rows(100 + i, 10, 0.0), true));
        items.push(format!(
            r#"{{"path": "{rel}", "label": 0, "split": "test"}}"#
        ));
        let rel = format!("test/crack/{i:03}.ppf");
        write(
            &root,
            &rel,
            &hand_encoded(3, &rows(200 + i, 10, 6.0), false),
        );
        items.push(format!(
            r#"{{"path": "{rel}", "label": 1, "split": "test", "defect_type": "crack"}}"#
        ));
    }
    let manifest = format!(
        r#"{{"category": "bottle", "items": [{}]}}"#,
        items.join(",\n")
    );
    std::fs::write(root.join("manifest.json"), manifest).unwrap();

    let m = read_manifest(root.join("manifest.json")).unwrap();
    assert_eq!(m.category, "bottle");
    assert!(m.items.iter().all(|i| i.path.starts_with(&root)));
    let crack = m
        .items
        .iter()
        .find(|i| i.label == Label::Anomalous)
        .unwrap();
    assert_eq!(crack.defect_type.as_deref(), Some("crack"));
    assert_eq!(crack.split, Split::Test);

    let first = read_ppf(&m.items[0].path).unwrap();
    assert_eq!(first.len(), 10);
    assert_eq!(first.keypoints().unwrap()[3].x, 24.0);
    assert_eq!(first.descriptor(2), rows(0, 10, 0.0)[2].as_slice());
    assert!(read_ppf(&m.items[1].path).unwrap().keypoints().is_none());

    let train = PpfFiles(m.train().map(|i| i.path.clone()).collect());
    let model = fit_model_from(&train, 2).unwrap().model;
    let test: Vec<_> = m.test().cloned().collect();
    let report = evaluate_category(
        "bottle",
        &model,
        &test,
        &ScoringConfig::new(ScoreMethod::Energy),
        2,
    )
    .unwrap();
    assert_eq!(report.auc, 1.0);
}

#[test]
fn malformed_inputs_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut short = hand_encoded(3, &rows(0, 4, 0.0), false);
    short.pop();
    write(dir.path(), "short.ppf", &short);
    let err = read_ppf(dir.path().join("short.ppf")).unwrap_err();
    assert!(matches!(err, Error::Truncated { .. }), "{err}");
    assert!(err.to_string().contains("short.ppf"));

    let mut nan = hand_encoded(3, &rows(0, 2, 0.0), false);
    let last = nan.len() - 4;
    nan[last..].copy_from_slice(&f32::NAN.to_le_bytes());
    write(dir.path(), "nan.ppf", &nan);
    assert!(read_ppf(dir.path().join("nan.ppf")).is_err());

    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"category": "x", "items": [{"path": "a.ppf", "label": 1, "split": "train"}]}"#,
    )
    .unwrap();
    let err = read_manifest(dir.path().join("manifest.json")).unwrap_err();
    assert!(err.to_string().contains("a.ppf"), "{err}");
}
