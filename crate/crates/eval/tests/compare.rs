use oromon_eval::{compare, EvalError, RegionScore, Report};

fn table3() -> Vec<Report> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/table3.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn report(id: &str, values: &[f64]) -> Report {
    let regions = ["all", "chin", "eyebrows", "nose", "eyes", "mouth"];
    Report {
        analyzer_id: id.into(),
        frames: None,
        rows: regions.iter().zip(values).map(|(r, v)| RegionScore { region: r.to_string(), nme: *v }).collect(),
    }
}

#[test]
fn published_variants_render_in_table_layout() {
    let c = compare(&table3()).unwrap();
    assert_eq!(c.columns, ["Facial landmark mask RCNN (our)", "N-FLMask", "300VW-FLMask", "N-Mask"]);
    let labels: Vec<String> = c.rows.iter().map(|r| r.label()).collect();
    assert_eq!(labels, ["NME_68", "NME_chin", "NME_eyebrows", "NME_nose", "NME_eyes", "NME_mouth"]);
    assert_eq!(c.rows[0].values, [1.79, 2.70, 3.88, 13.55]);
    assert_eq!(c.rows[5].values, [1.49, 2.19, 3.70, 21.17]);
    // The fine-tuned network is best everywhere except the eyes.
    let best: Vec<&[usize]> = c.rows.iter().map(|r| r.best.as_slice()).collect();
    assert_eq!(best, [&[0][..], &[0], &[0], &[0], &[1], &[0]]);

    let table = c.render(2);
    let nme68 = table.lines().find(|l| l.starts_with("NME_68")).unwrap();
    let cells: Vec<&str> = nme68.split_whitespace().collect();
    assert_eq!(cells, ["NME_68", "1.79*", "2.70", "3.88", "13.55"]);
    let eyes = table.lines().find(|l| l.starts_with("NME_eyes")).unwrap();
    assert_eq!(eyes.split_whitespace().collect::<Vec<_>>(), ["NME_eyes", "1.03", "0.94*", "3.04", "5.23"]);
    // Every row lines up under the header.
    let widths: Vec<usize> = table.lines().map(str::len).collect();
    assert!(widths.windows(2).all(|w| w[0] == w[1]), "{table}");
}

#[test]
fn two_reports_two_columns() {
    let a = report("a", &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    let b = report("b", &[2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let c = compare(&[b.clone(), a.clone()]).unwrap();
    assert_eq!(c.columns, ["b", "a"]);
    assert!(c.rows.iter().all(|r| r.values.len() == 2 && r.best == [1]));
}

#[test]
fn mismatched_or_too_few_reports_are_rejected() {
    let a = report("a", &[1.0; 6]);
    let mut b = report("b", &[1.0; 6]);
    b.rows.pop();
    assert!(matches!(compare(&[a.clone(), b]), Err(EvalError::RegionMismatch { analyzer, .. }) if analyzer == "b"));
    let mut renamed = report("c", &[1.0; 6]);
    renamed.rows[2].region = "brows".into();
    assert!(matches!(compare(&[a.clone(), renamed]), Err(EvalError::RegionMismatch { .. })));
    assert!(matches!(compare(&[a]), Err(EvalError::TooFewReports(1))));
    assert!(matches!(compare(&[]), Err(EvalError::TooFewReports(0))));
}

#[test]
fn row_order_follows_the_first_report() {
    let a = report("a", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut b = report("b", &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
    b.rows.reverse();
    let c = compare(&[a, b]).unwrap();
    assert_eq!(c.rows[0].region, "all");
    assert_eq!(c.rows[0].values, [1.0, 6.0]);
}
