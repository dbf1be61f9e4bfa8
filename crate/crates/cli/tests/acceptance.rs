//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances and time limits are fixed here.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use serde_json::{json, Value};
use shopsim::eval::{compute_metrics, render_report, EvalConfig, PredictionRecord, ReportFormat};
use shopsim::pipeline::{
    emit_jsonl, prepare, prune_to_viewport, read_jsonl, read_raw_sessions, render_html, simplify_html, DomNode,
    PipelineConfig, Rect, TrainingExample,
};
use shopsim::reward::{self_certainty, SparseRow, TokenRow};
use shopsim::{score_response, Action, ActionType, ClickType, ParseMode, RewardConfig, TokenDistribution};
use shopsim_service::{serve_on, ItemResult, ScoreResponse, ServiceConfig};

const CERTAINTY_TOL: f64 = 1e-9;
const CERTAINTY_LIMIT: Duration = Duration::from_secs(5);
const REWARD_TOL: f64 = 1e-9;
const REWARD_LIMIT: Duration = Duration::from_secs(1);
const GATE_CASES: usize = 10_000;
const FORMAT_CASES: usize = 200;
const PIPELINE_LIMIT: Duration = Duration::from_secs(2);
const METRIC_TOL: f64 = 1e-6;
const PERCENT_SUM_TOL: f64 = 0.01;
const PARITY_TOL: f64 = 1e-9;

type Check = Result<String, String>;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_limit(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- certainty

fn densify(row: &TokenRow, v: usize) -> Vec<f64> {
    match row {
        TokenRow::Dense(p) => p.clone(),
        TokenRow::Sparse(s) => {
            let mut p = vec![s.tail_mass / (v - s.top.len()) as f64; v];
            for &(i, m) in &s.top {
                p[i as usize] = m;
            }
            p
        }
    }
}

/// Sum over positions and vocabulary of p * ln(p * |V|), over N * |V|.
fn certainty_oracle(d: &TokenDistribution) -> f64 {
    let v = d.vocab_size;
    let mut acc = 0.0;
    for row in &d.rows {
        for p in densify(row, v) {
            if p > 0.0 {
                acc += p * (p * v as f64).ln();
            }
        }
    }
    acc / (d.rows.len() * v) as f64
}

fn random_weights(rng: &mut StdRng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.001..1.0) })
        .collect();
    let s: f64 = w.iter().sum();
    if s == 0.0 {
        let mut one = vec![0.0; n];
        one[0] = 1.0;
        return one;
    }
    w.into_iter().map(|x| x / s).collect()
}

fn random_distribution(rng: &mut StdRng) -> TokenDistribution {
    let v = rng.random_range(2..=64usize);
    let n = rng.random_range(1..=8usize);
    let sparse = rng.random_bool(0.5);
    let rows = (0..n)
        .map(|_| {
            if sparse {
                let k = rng.random_range(0..v);
                let mut idx: Vec<u32> = (0..v as u32).collect();
                for i in 0..k {
                    let j = rng.random_range(i..v);
                    idx.swap(i, j);
                }
                let w = random_weights(rng, k + 1);
                TokenRow::Sparse(SparseRow {
                    top: idx[..k].iter().copied().zip(w[..k].iter().copied()).collect(),
                    tail_mass: w[k],
                })
            } else {
                TokenRow::Dense(random_weights(rng, v))
            }
        })
        .collect();
    TokenDistribution::new(v, rows).expect("generated distributions are valid")
}

fn check_certainty() -> Check {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5e1f);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let d = random_distribution(&mut rng);
        let got = self_certainty(&d).map_err(|e| format!("case {case}: {e}"))?;
        let diff = (got - certainty_oracle(&d)).abs();
        ensure(diff <= CERTAINTY_TOL, || format!("case {case}: off by {diff:e}"))?;
        worst = worst.max(diff);
    }
    for v in [2usize, 7, 64] {
        let uniform = TokenDistribution::new(v, vec![TokenRow::Dense(vec![1.0 / v as f64; v]); 3]).unwrap();
        let s = self_certainty(&uniform).unwrap();
        ensure(s == 0.0, || format!("uniform |V|={v} gave {s:e}"))?;
    }
    let one_hot = TokenDistribution::new(4, vec![TokenRow::Dense(vec![1.0, 0.0, 0.0, 0.0])]).unwrap();
    let s = self_certainty(&one_hot).unwrap();
    let expected = 4f64.ln() / 4.0;
    ensure((s - expected).abs() <= CERTAINTY_TOL, || format!("one-hot gave {s}, expected {expected}"))?;
    within_limit(CERTAINTY_LIMIT, started)?;
    Ok(format!("1000 distributions, max error {worst:.1e}, one-hot {s:.6}"))
}

// ---------------------------------------------------------------- composition

#[derive(Deserialize)]
struct RewardCase {
    name: String,
    response_text: String,
    ground_truth: Action,
    expected_total: f64,
    #[serde(default)]
    token_distribution: Option<TokenDistribution>,
    #[serde(default)]
    rationale_span: Option<[usize; 2]>,
    #[serde(default)]
    config: Option<RewardConfig>,
}

fn check_composition() -> Check {
    let text = std::fs::read_to_string(fixtures().join("reward_cases.json")).map_err(|e| e.to_string())?;
    let cases: Vec<RewardCase> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(cases.len() == 50, || format!("expected 50 fixtures, found {}", cases.len()))?;
    let composite = cases
        .iter()
        .any(|c| (c.expected_total - 10002.346574).abs() < 5e-7);
    ensure(composite, || "composite case missing".into())?;

    let started = Instant::now();
    for c in &cases {
        let cfg = c.config.clone().unwrap_or_default();
        let span = c.rationale_span.map(|[a, b]| a..b);
        let scored = score_response(&c.response_text, c.token_distribution.as_ref(), span, &c.ground_truth, &cfg)
            .map_err(|e| format!("{}: {e}", c.name))?;
        let got = scored.breakdown.total;
        ensure((got - c.expected_total).abs() <= REWARD_TOL, || {
            format!("{}: total {got}, expected {}", c.name, c.expected_total)
        })?;
    }
    within_limit(REWARD_LIMIT, started)?;
    Ok(format!("{} fixtures", cases.len()))
}

// ---------------------------------------------------------------- random actions

const WORDS: [&str; 10] = ["add", "to", "cart", "go", "bottle", "red", "size", "next", "page", "buy"];

fn random_phrase(rng: &mut StdRng) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn random_action(rng: &mut StdRng) -> Action {
    match rng.random_range(0..3) {
        0 => Action::input(random_phrase(rng)),
        1 => Action::click(ClickType::ALL[rng.random_range(0..ClickType::ALL.len())], random_phrase(rng)),
        _ => Action::Scroll,
    }
}

/// A prediction related to `gt`: often the same type, sometimes sharing fields.
fn nearby_action(rng: &mut StdRng, gt: &Action) -> Action {
    if rng.random_bool(0.4) {
        return random_action(rng);
    }
    match gt {
        Action::Input { text } => {
            if rng.random_bool(0.5) {
                Action::input(text.clone())
            } else {
                Action::input(random_phrase(rng))
            }
        }
        Action::Click { click_type, name } => {
            let t = if rng.random_bool(0.5) {
                *click_type
            } else {
                ClickType::ALL[rng.random_range(0..ClickType::ALL.len())]
            };
            let n = if rng.random_bool(0.5) { name.clone() } else { random_phrase(rng) };
            Action::click(t, n)
        }
        Action::Scroll => Action::Scroll,
    }
}

fn envelope(rationale: &str, action: &Action) -> Value {
    json!({ "rationale": rationale, "action": action })
}

// ---------------------------------------------------------------- gate

fn check_gate() -> Check {
    let mut rng = StdRng::seed_from_u64(0x6a7e);
    let (mut type_zero, mut unlocked) = (0usize, 0usize);
    for case in 0..GATE_CASES {
        let gt = random_action(&mut rng);
        let pred = nearby_action(&mut rng, &gt);
        let env = envelope("I decide.", &pred).to_string();
        let raw = match rng.random_range(0..10) {
            0 => malform(rng.random_range(0..MALFORMATIONS), &env, &pred),
            1 => json!({"rationale": "I hover.", "action": {"type": "hover"}}).to_string(),
            _ => env,
        };
        let cfg = RewardConfig {
            r_format_value: rng.random_range(0.0..2.0),
            r_type_value: rng.random_range(0.01..3.0),
            w_click_type: rng.random_range(0.0..1.0),
            w_name: rng.random_range(0.0..1.0),
            w_text: rng.random_range(0.0..1.0),
            dars_factor: rng.random_range(1.0..20_000.0),
            ..RewardConfig::default()
        };
        let b = score_response(&raw, None, None, &gt, &cfg)
            .map_err(|e| format!("case {case}: {e}"))?
            .breakdown;
        if b.r_type == 0.0 {
            type_zero += 1;
            ensure(b.r_subaction == 0.0, || format!("case {case}: r_subaction {} with r_type 0", b.r_subaction))?;
        } else if b.r_subaction > 0.0 {
            unlocked += 1;
        }
    }
    ensure(type_zero > 1000 && unlocked > 1000, || {
        format!("weak coverage: {type_zero} gated, {unlocked} unlocked")
    })?;
    Ok(format!("{GATE_CASES} cases, {type_zero} gated, {unlocked} with subaction credit"))
}

// ---------------------------------------------------------------- format

const MALFORMATIONS: usize = 20;

fn malform(family: usize, valid: &str, action: &Action) -> String {
    let action_value = serde_json::to_value(action).unwrap();
    match family {
        0 => valid[..valid.len() - 1].to_string(),
        1 => valid[..valid.len() / 2].to_string(),
        2 => String::new(),
        3 => " \n\t ".to_string(),
        4 => format!("Here is my answer: {valid}"),
        5 => format!("{valid} Hope this helps."),
        6 => format!("```json\n{valid}\n```"),
        7 => json!({ "action": action_value }).to_string(),
        8 => json!({ "rationale": "I act." }).to_string(),
        9 => json!({ "rationale": "", "action": action_value }).to_string(),
        10 => json!({ "rationale": 42, "action": action_value }).to_string(),
        11 => json!({ "rationale": "I act.", "action": { "type": "hover" } }).to_string(),
        12 => {
            let mut a = action_value;
            a.as_object_mut().unwrap().remove("type");
            json!({ "rationale": "I act.", "action": a }).to_string()
        }
        13 => json!({ "rationale": "I act.", "action": action_value, "confidence": 0.9 }).to_string(),
        14 => {
            let mut a = action_value;
            a["extra"] = json!(true);
            json!({ "rationale": "I act.", "action": a }).to_string()
        }
        15 => valid.replace('"', "'"),
        16 => format!("[{valid}]"),
        17 => format!("{valid}{valid}"),
        18 => json!({ "rationale": "I act.", "action": action.action_type().as_str() }).to_string(),
        _ => {
            let upper = action.action_type().as_str().to_uppercase();
            let mut a = action_value;
            a["type"] = json!(upper);
            json!({ "rationale": "I act.", "action": a }).to_string()
        }
    }
}

fn check_format() -> Check {
    let cfg = RewardConfig {
        r_format_value: 0.75,
        ..RewardConfig::default()
    };
    let mut rng = StdRng::seed_from_u64(0xf0f0);
    let bases: Vec<Action> = vec![
        Action::input("water bottle"),
        Action::input("Hydro Flask 32 oz"),
        Action::click(ClickType::Purchase, "Add to Cart"),
        Action::click(ClickType::Search, "Go"),
        Action::click(ClickType::ProductLink, "Simple Modern Bottle"),
        Action::click(ClickType::Filter, "Under $25"),
        Action::click(ClickType::PageRelated, "Go to next page"),
        Action::click(ClickType::Quantity, "quantity"),
        Action::Scroll,
        Action::input("usb c cable"),
    ];
    let gt = Action::Scroll;
    let mut malformed = 0;
    for family in 0..MALFORMATIONS {
        for base in &bases {
            let valid = envelope("I want to see more options.", base).to_string();
            let raw = malform(family, &valid, base);
            let b = score_response(&raw, None, None, &gt, &cfg).map_err(|e| e.to_string())?.breakdown;
            ensure(b.r_format == 0.0, || format!("family {family} scored {}: {raw}", b.r_format))?;
            ensure(b.r_type == 0.0 && b.r_subaction == 0.0, || format!("family {family} leaked credit: {raw}"))?;
            malformed += 1;
        }
    }
    ensure(malformed == FORMAT_CASES, || format!("{malformed} malformed cases"))?;

    let mut valid_count = 0;
    for i in 0..FORMAT_CASES {
        let action = random_action(&mut rng);
        let rationale = format!("I think step {i} makes sense.");
        let value = envelope(&rationale, &action);
        let raw = match i % 4 {
            0 => value.to_string(),
            1 => serde_json::to_string_pretty(&value).unwrap(),
            2 => format!(
                "{{\"action\":{},\"rationale\":{}}}",
                serde_json::to_string(&action).unwrap(),
                json!(rationale)
            ),
            _ => format!("\n  {value}  \n"),
        };
        let b = score_response(&raw, None, None, &gt, &cfg).map_err(|e| e.to_string())?.breakdown;
        ensure(b.r_format == cfg.r_format_value, || format!("valid envelope scored {}: {raw}", b.r_format))?;
        valid_count += 1;
    }
    Ok(format!("{malformed} malformed scored 0, {valid_count} valid scored {}", cfg.r_format_value))
}

// ---------------------------------------------------------------- pipeline

fn overlaps(a: &Rect, b: &Rect) -> bool {
    let left = a.x.max(b.x);
    let right = (a.x + a.width).min(b.x + b.width);
    let top = a.y.max(b.y);
    let bottom = (a.y + a.height).min(b.y + b.height);
    right > left && bottom > top
}

fn leaves_outside(node: &DomNode, view: &Rect, out: &mut Vec<String>) {
    if node.children.is_empty() {
        if !overlaps(&node.rect, view) {
            out.push(format!("{}{:?}", node.tag, node.node_id));
        }
    } else {
        for c in &node.children {
            leaves_outside(c, view, out);
        }
    }
}

fn run_prepare(input: &Path, out: &Path) -> Result<(), String> {
    let sessions = read_raw_sessions(input).map_err(|e| e.to_string())?;
    let split = prepare(&sessions, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    emit_jsonl(&split.train, &out.join("train.jsonl")).map_err(|e| e.to_string())?;
    emit_jsonl(&split.test, &out.join("test.jsonl")).map_err(|e| e.to_string())?;
    std::fs::write(out.join("distribution.csv"), split.counts.to_csv()).map_err(|e| e.to_string())
}

fn check_pipeline() -> Check {
    let input = fixtures().join("sessions.jsonl");
    let golden = fixtures().join("golden/prepare");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        run_prepare(&input, &out)?;
        for f in ["train.jsonl", "test.jsonl", "distribution.csv"] {
            let a = std::fs::read(out.join(f)).map_err(|e| e.to_string())?;
            let g = std::fs::read(golden.join(f)).map_err(|e| e.to_string())?;
            ensure(a == g, || format!("run {run}: {f} differs from golden"))?;
        }
    }
    within_limit(PIPELINE_LIMIT, started)?;

    let sessions = read_raw_sessions(&input).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let mut rendered = HashSet::from([String::new()]);
    let mut snapshots = 0;
    for s in &sessions {
        for snap in &s.snapshots {
            let simplified = simplify_html(&snap.dom, &cfg.simplify);
            if let Some(pruned) = prune_to_viewport(&simplified, &snap.viewport) {
                let view = Rect::new(snap.viewport.scroll_x, snap.viewport.scroll_y, snap.viewport.width, snap.viewport.height);
                let mut bad = Vec::new();
                leaves_outside(&pruned, &view, &mut bad);
                ensure(bad.is_empty(), || format!("{}: leaves outside viewport: {bad:?}", snap.snapshot_id))?;
                rendered.insert(render_html(&pruned));
            }
            snapshots += 1;
        }
    }

    let mut examples: Vec<TrainingExample> = Vec::new();
    for f in ["train.jsonl", "test.jsonl"] {
        examples.extend(read_jsonl::<TrainingExample>(&golden.join(f)).map_err(|e| e.to_string())?);
    }
    let mut by_session: BTreeMap<&str, Vec<(usize, ActionType)>> = BTreeMap::new();
    for ex in &examples {
        ensure(rendered.contains(&ex.query.current_html), || {
            format!("{} step {}: html is not a checked pruned snapshot", ex.session_id, ex.step)
        })?;
        for h in &ex.query.history {
            ensure(rendered.contains(&h.html), || format!("{} history html unchecked", ex.session_id))?;
        }
        by_session
            .entry(&ex.session_id)
            .or_default()
            .push((ex.step, ex.target.action.action_type()));
    }
    for (sid, steps) in &mut by_session {
        steps.sort();
        for w in steps.windows(2) {
            ensure(!(w[0].1 == ActionType::Scroll && w[1].1 == ActionType::Scroll), || {
                format!("{sid}: adjacent scrolls at steps {} and {}", w[0].0, w[1].0)
            })?;
        }
    }
    Ok(format!(
        "{} examples byte-identical over 2 runs, {snapshots} snapshots checked",
        examples.len()
    ))
}

// ---------------------------------------------------------------- metrics

fn check_metrics() -> Check {
    let records: Vec<PredictionRecord> =
        read_jsonl(&fixtures().join("predictions.jsonl")).map_err(|e| e.to_string())?;
    let report = compute_metrics(&records, &EvalConfig::default()).map_err(|e| e.to_string())?;
    let measured = (report.exact_match_acc, report.type_acc, report.macro_f1);
    // hand-counted: 4 exact, 5 type hits of 10; per-class F1 input 0.5, click 0.6, scroll 0.5
    let expected = [
        ("exact match", report.exact_match_acc, 0.4),
        ("type accuracy", report.type_acc, 0.5),
        ("macro F1", report.macro_f1, (0.5 + 0.6 + 0.5) / 3.0),
    ];
    for (name, got, want) in expected {
        ensure((got - want).abs() <= METRIC_TOL, || format!("{name}: {got} vs {want}"))?;
    }
    let sum_pct: f64 = shopsim::OutputBucket::ALL
        .iter()
        .map(|&b| report.distribution.fraction(b) * 100.0)
        .sum();
    ensure((sum_pct - 100.0).abs() <= PERCENT_SUM_TOL, || format!("percentages sum to {sum_pct}"))?;

    // 277 input, 9656 click, 7 scroll, 0 others, 60 unparseable
    let gt = Action::click(ClickType::Purchase, "Buy Now");
    let outputs = [
        (277usize, envelope("I search.", &Action::input("shoes")).to_string()),
        (9656, envelope("I buy.", &gt).to_string()),
        (7, envelope("I look.", &Action::Scroll).to_string()),
        (60, "I would click Buy Now".to_string()),
    ];
    let mut log = Vec::with_capacity(10_000);
    for (count, raw) in &outputs {
        for _ in 0..*count {
            log.push(PredictionRecord {
                session_id: format!("s{}", log.len()),
                step: 1,
                raw_output: raw.clone(),
                ground_truth: gt.clone(),
            });
        }
    }
    let report = compute_metrics(&log, &EvalConfig::default()).map_err(|e| e.to_string())?;
    let hundredths: u64 = report.distribution.percent_hundredths().iter().sum();
    ensure(hundredths == 10_000, || format!("rendered percentages sum to {hundredths}/100"))?;
    let markdown = render_report(&report, ReportFormat::Markdown);
    let row = "| 2.77% | 96.56% | 0.07% | 0% | 0.60% |";
    ensure(markdown.contains(row), || format!("row {row} not found in:\n{markdown}"))?;
    let csv = render_report(&report, ReportFormat::Csv);
    ensure(csv.contains(",2.77,96.56,0.07,0.00,0.60,"), || format!("csv row mismatch:\n{csv}"))?;
    Ok(format!(
        "exact {:.4}, type {:.4}, macro-F1 {:.6}; distribution row {row}",
        measured.0, measured.1, measured.2
    ))
}

// ---------------------------------------------------------------- service

fn local_breakdown(item: &Value) -> Result<shopsim::RewardBreakdown, String> {
    let gt = Action::from_value(&item["ground_truth"], ParseMode::Strict).map_err(|e| e.to_string())?;
    let dist: Option<TokenDistribution> = item
        .get("token_distribution")
        .map(|d| serde_json::from_value(d.clone()))
        .transpose()
        .map_err(|e| e.to_string())?;
    let span = item
        .get("rationale_span")
        .and_then(|s| Some(s[0].as_u64()? as usize..s[1].as_u64()? as usize));
    let text = item["response_text"].as_str().ok_or("response_text")?;
    score_response(text, dist.as_ref(), span, &gt, &RewardConfig::default())
        .map(|s| s.breakdown)
        .map_err(|e| e.to_string())
}

async fn service_checks() -> Check {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_on(listener, ServiceConfig::default(), async {
        let _ = rx.await;
    }));
    let client = reqwest::Client::new();
    let url = format!("http://{addr}/v1/score");
    let post = |body: String| {
        let req = client.post(&url).header("content-type", "application/json").body(body);
        async move {
            let resp = req.send().await.map_err(|e| e.to_string())?;
            let status = resp.status();
            let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
            Ok::<_, String>((status, bytes.to_vec()))
        }
    };

    let parity_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../service/tests/fixtures/parity_request.json");
    let parity_text = std::fs::read_to_string(parity_path).map_err(|e| e.to_string())?;
    let parity: Value = serde_json::from_str(&parity_text).map_err(|e| e.to_string())?;

    let (s1, b1) = post(parity_text.clone()).await?;
    let (s2, b2) = post(parity_text.clone()).await?;
    ensure(s1.is_success() && s2.is_success(), || format!("statuses {s1} {s2}"))?;
    ensure(b1 == b2, || "identical bodies gave different responses".into())?;

    let resp: ScoreResponse = serde_json::from_slice(&b1).map_err(|e| e.to_string())?;
    let items = parity["items"].as_array().ok_or("items")?;
    ensure(resp.results.len() == items.len(), || "result count mismatch".into())?;
    let mut worst: f64 = 0.0;
    for (i, (item, result)) in items.iter().zip(&resp.results).enumerate() {
        let ItemResult::Scored(remote) = result else {
            return Err(format!("parity item {i} not scored"));
        };
        let local = local_breakdown(item)?;
        let r = &remote.breakdown;
        for (a, b) in [
            (r.r_format, local.r_format),
            (r.self_certainty, local.self_certainty),
            (r.r_type, local.r_type),
            (r.r_subaction, local.r_subaction),
            (r.dars, local.dars),
            (r.total, local.total),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= PARITY_TOL, || format!("parity error {worst:e}"))?;

    let mut batch: Vec<Value> = items.clone();
    let mut bad = items[0].clone();
    bad["token_distribution"] = json!({"vocab_size": 3, "rows": [[0.9, 0.9, 0.9]]});
    batch.insert(4, bad);
    let (status, body) = post(json!({ "items": batch }).to_string()).await?;
    ensure(status.is_success(), || format!("isolation batch status {status}"))?;
    let resp: ScoreResponse = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    for (i, r) in resp.results.iter().enumerate() {
        let scored = matches!(r, ItemResult::Scored(_));
        ensure(scored == (i != 4), || format!("item {i} scored={scored}"))?;
    }

    let _ = tx.send(());
    server.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
    Ok(format!(
        "{} items, byte-identical responses, parity error {worst:.1e}, 1 bad item isolated",
        items.len()
    ))
}

fn check_service() -> Check {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(service_checks())
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 7] = [
        ("self-certainty correctness", check_certainty),
        ("reward composition", check_composition),
        ("hierarchy gate", check_gate),
        ("format reward", check_format),
        ("pipeline golden suite", check_pipeline),
        ("metric oracle", check_metrics),
        ("service determinism and isolation", check_service),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let outcome = check();
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({ms} ms)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
