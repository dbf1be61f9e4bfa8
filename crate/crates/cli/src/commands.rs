use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use shopsim::annotate::{annotate_dataset, provider_from_config, CoverageReport, RationaleCache};
use shopsim::eval::{compute_metrics, render_report, PredictionRecord, ReportFormat};
use shopsim::pipeline::{emit_jsonl, prepare as prepare_split, read_examples, read_jsonl, read_raw_sessions, write_jsonl, TrainingExample};
use shopsim::Action;
use shopsim_service::{score_request, ItemResult, ScoreRequest};

use crate::config::CliConfig;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const DISTRIBUTION_FILE: &str = "distribution.csv";
pub const REPORT_FILE: &str = "annotation_report.json";
pub const FAILURES_FILE: &str = "annotation_failures.jsonl";

pub fn prepare(cfg: &CliConfig, input: &Path, out: &Path) -> Result<()> {
    let sessions = read_raw_sessions(input)?;
    tracing::info!(sessions = sessions.len(), input = %input.display(), "read raw sessions");
    let split = prepare_split(&sessions, &cfg.prepare)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    emit_jsonl(&split.train, &out.join(TRAIN_FILE))?;
    emit_jsonl(&split.test, &out.join(TEST_FILE))?;
    fs::write(out.join(DISTRIBUTION_FILE), split.counts.to_csv())
        .with_context(|| format!("writing {}", out.join(DISTRIBUTION_FILE).display()))?;
    tracing::info!(train = split.train.len(), test = split.test.len(), out = %out.display(), "wrote examples");
    print!("{}", split.counts.to_table());
    Ok(())
}

/// Writes `examples` next to `path` and renames over it.
fn replace_examples(examples: &[TrainingExample], path: &Path) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    emit_jsonl(examples, &tmp)?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

fn add_report(total: &mut CoverageReport, part: CoverageReport) {
    total.total += part.total;
    total.preserved += part.preserved;
    total.cached += part.cached;
    total.fetched += part.fetched;
    total.failed += part.failed;
    total.failures.extend(part.failures);
}

pub fn annotate(cfg: &CliConfig, data: &Path) -> Result<()> {
    let files: Vec<PathBuf> = [TRAIN_FILE, TEST_FILE]
        .iter()
        .map(|f| data.join(f))
        .filter(|p| p.exists())
        .collect();
    if files.is_empty() {
        bail!("no {TRAIN_FILE} or {TEST_FILE} in {}", data.display());
    }
    let settings = cfg.annotate_settings()?;
    let provider = provider_from_config(&cfg.annotate.provider)?;
    let cache_dir = cfg
        .annotate
        .cache_dir
        .clone()
        .unwrap_or_else(|| data.join(".rationale_cache"));
    let cache = RationaleCache::open(&cache_dir).with_context(|| format!("opening cache {}", cache_dir.display()))?;

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let mut report = CoverageReport::default();
    for path in files {
        let mut examples = read_examples(&path)?;
        let part = runtime.block_on(annotate_dataset(&mut examples, provider.as_ref(), Some(&cache), &settings));
        tracing::info!(file = %path.display(), fetched = part.fetched, cached = part.cached, failed = part.failed, "annotated");
        replace_examples(&examples, &path)?;
        add_report(&mut report, part);
    }

    let failures = data.join(FAILURES_FILE);
    if report.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(&failures).with_context(|| format!("removing {}", failures.display()))?;
        }
    } else {
        write_jsonl(&report.failures, &failures)?;
        tracing::warn!(failed = report.failed, manifest = %failures.display(), "some steps could not be annotated; rerun to resume");
    }
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(data.join(REPORT_FILE), format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GroundTruthLine {
    Example(TrainingExample),
    Plain {
        session_id: String,
        step: usize,
        ground_truth: Action,
    },
}

impl GroundTruthLine {
    fn into_parts(self) -> ((String, usize), Action) {
        match self {
            GroundTruthLine::Example(e) => ((e.session_id, e.step), e.target.action),
            GroundTruthLine::Plain {
                session_id,
                step,
                ground_truth,
            } => ((session_id, step), ground_truth),
        }
    }
}

#[derive(Debug, Serialize)]
struct ScoreLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    session_id: Option<&'a Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<&'a Value>,
    #[serde(flatten)]
    result: &'a ItemResult,
}

pub fn score(cfg: &CliConfig, predictions: &Path, ground_truth: Option<&Path>, out: &Path) -> Result<()> {
    let lines: Vec<Value> = read_jsonl(predictions)?;
    let truth: HashMap<(String, usize), Action> = match ground_truth {
        Some(p) => read_jsonl::<GroundTruthLine>(p)?
            .into_iter()
            .map(GroundTruthLine::into_parts)
            .collect(),
        None => HashMap::new(),
    };

    let mut ids = Vec::with_capacity(lines.len());
    let mut items = Vec::with_capacity(lines.len());
    for (i, line) in lines.into_iter().enumerate() {
        let Value::Object(mut obj) = line else {
            bail!("{}:{}: expected a JSON object", predictions.display(), i + 1);
        };
        let session_id = obj.remove("session_id");
        let step = obj.remove("step");
        if let Some(raw) = obj.remove("raw_output") {
            obj.entry("response_text").or_insert(raw);
        }
        if !obj.contains_key("ground_truth") {
            let key = session_id
                .as_ref()
                .and_then(Value::as_str)
                .zip(step.as_ref().and_then(Value::as_u64))
                .map(|(s, t)| (s.to_string(), t as usize));
            let gt = key.as_ref().and_then(|k| truth.get(k)).with_context(|| {
                format!("{}:{}: no ground truth for this prediction", predictions.display(), i + 1)
            })?;
            obj.insert("ground_truth".into(), serde_json::to_value(gt)?);
        }
        ids.push((session_id, step));
        items.push(Value::Object(obj));
    }
    if items.is_empty() {
        bail!("{} holds no predictions", predictions.display());
    }

    let request = ScoreRequest {
        items,
        config_overrides: None,
    };
    let results = score_request(&request, &cfg.reward, usize::MAX)
        .map_err(|e| anyhow::anyhow!("{}: {e}", predictions.display()))?;
    let out_lines: Vec<ScoreLine> = results
        .iter()
        .zip(&ids)
        .map(|(result, (session_id, step))| ScoreLine {
            session_id: session_id.as_ref(),
            step: step.as_ref(),
            result,
        })
        .collect();
    write_jsonl(&out_lines, out)?;
    let failed = results.iter().filter(|r| matches!(r, ItemResult::Error(_))).count();
    tracing::info!(scored = results.len() - failed, failed, out = %out.display(), "wrote reward breakdowns");
    Ok(())
}

pub fn eval(cfg: &CliConfig, predictions: &Path, out: &Path, format: Option<ReportFormat>) -> Result<()> {
    let records: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let report = compute_metrics(&records, &cfg.eval.eval_config())?;
    let format = format.unwrap_or_else(|| match out.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
        _ => ReportFormat::Markdown,
    });
    fs::write(out, render_report(&report, format)).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "records={} exact_match={:.4} type_acc={:.4} macro_f1={:.4}",
        report.records, report.exact_match_acc, report.type_acc, report.macro_f1
    );
    if let Some(min) = cfg.eval.min_exact {
        if report.exact_match_acc < min {
            bail!(
                "exact-match accuracy {:.4} is below the required {:.4}",
                report.exact_match_acc,
                min
            );
        }
    }
    Ok(())
}

pub fn serve(cfg: &CliConfig) -> Result<()> {
    shopsim_service::serve(cfg.service_config())?;
    Ok(())
}
