use proptest::prelude::*;
use shopsim::eval::{compute_metrics, EvalConfig, PredictionRecord};
use shopsim::{Action, ActionType, ClickType};

#[derive(Debug, Clone, Copy)]
enum Out {
    Exact,
    SameTypeWrongDetail,
    Type(usize),
    Unknown,
    Garbage,
}

fn gt_for(i: usize) -> Action {
    match i {
        0 => Action::input("usb cable"),
        1 => Action::click(ClickType::Purchase, "Buy Now"),
        _ => Action::Scroll,
    }
}

fn render(gt: &Action, out: Out) -> String {
    let env = |a: &str| format!(r#"{{"rationale":"I act.","action":{a}}}"#);
    match out {
        Out::Exact => env(&shopsim::serialize_action(gt)),
        Out::SameTypeWrongDetail => match gt {
            Action::Input { .. } => env(r#"{"type":"input","text":"hdmi cable"}"#),
            Action::Click { .. } => env(r#"{"type":"click","click_type":"product_option","name":"Buy Now"}"#),
            Action::Scroll => env(r#"{"type":"scroll"}"#),
        },
        Out::Type(t) => env(&shopsim::serialize_action(&gt_for(t))),
        Out::Unknown => env(r#"{"type":"hover"}"#),
        Out::Garbage => "I would click the button".into(),
    }
}

fn arb_records() -> impl Strategy<Value = Vec<(usize, Out)>> {
    let out = prop_oneof![
        Just(Out::Exact),
        Just(Out::SameTypeWrongDetail),
        (0usize..3).prop_map(Out::Type),
        Just(Out::Unknown),
        Just(Out::Garbage),
    ];
    prop::collection::vec((0usize..3, out), 1..120)
}

/// Predicted class index, or `None` for outputs outside the grammar.
fn predicted(gt: usize, out: Out) -> Option<usize> {
    match out {
        Out::Exact | Out::SameTypeWrongDetail => Some(gt),
        Out::Type(t) => Some(t),
        Out::Unknown | Out::Garbage => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn metrics_match_confusion_oracle(rows in arb_records()) {
        let records: Vec<PredictionRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(gt, out))| PredictionRecord {
                session_id: format!("s{}", i / 5),
                step: i % 5 + 1,
                raw_output: render(&gt_for(gt), out),
                ground_truth: gt_for(gt),
            })
            .collect();
        let report = compute_metrics(&records, &EvalConfig::default()).unwrap();

        // 3x4 confusion matrix, last column = no class
        let mut m = [[0usize; 4]; 3];
        let mut exact = 0;
        for &(gt, out) in &rows {
            m[gt][predicted(gt, out).unwrap_or(3)] += 1;
            let is_exact = matches!(out, Out::Exact)
                || (gt == 2 && matches!(out, Out::SameTypeWrongDetail))
                || matches!(out, Out::Type(t) if t == gt);
            exact += is_exact as usize;
        }
        let n = rows.len() as f64;
        let diag: usize = (0..3).map(|c| m[c][c]).sum();
        let mut f1s = Vec::new();
        for c in 0..3 {
            let support: usize = m[c].iter().sum();
            let pred: usize = (0..3).map(|g| m[g][c]).sum();
            if support + pred == 0 {
                continue;
            }
            let p = if pred == 0 { 0.0 } else { m[c][c] as f64 / pred as f64 };
            let r = if support == 0 { 0.0 } else { m[c][c] as f64 / support as f64 };
            f1s.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        let macro_f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;

        prop_assert!((report.exact_match_acc - exact as f64 / n).abs() < 1e-12);
        prop_assert!((report.type_acc - diag as f64 / n).abs() < 1e-12);
        prop_assert!((report.macro_f1 - macro_f1).abs() < 1e-12);
        prop_assert_eq!(report.per_class[&ActionType::Click].support, m[1].iter().sum::<usize>());

        let hundredths = report.distribution.percent_hundredths();
        prop_assert_eq!(hundredths.iter().sum::<u64>(), 10_000);
        let others_expected = rows.iter().filter(|(_, o)| matches!(o, Out::Unknown)).count();
        prop_assert_eq!(report.distribution.others, others_expected);
    }
}
