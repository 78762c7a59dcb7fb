use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use moe_absa::metrics::cov2;
use moe_absa::moe::RoutingTrace;
use moe_absa::pipeline::{
    aspect_labels, evaluate_absa, evaluate_acd, evaluate_sentiment, one_vs_rest, pr_curves, pseudo_label, train_absa,
    train_acd, train_sentiment, write_heatmap_csv, write_pr_csv, Checkpoint, Cov2Summary, MetricsDocument, RngState,
    Stage, StageModel, TrainOptions, SENTIMENT_LABELS,
};
use moe_absa::text::{
    ingest_csv, label_proportions, split_dataset, synth_corpus, write_csv_path, Normalizer, ReviewRecord,
    SpellingTable, DEFAULT_RATIOS,
};
use moe_absa::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::settings::resolve;
use crate::TrainArgs;

/// Env var bounding parallel evaluation workers.
pub const THREADS_VAR: &str = "MOE_ABSA_THREADS";

fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `<file>.meta.json` next to a CSV output.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn load_records(path: &Path) -> Result<Vec<ReviewRecord>> {
    let ing = ingest_csv(path)?;
    if !ing.rejected.is_empty() {
        eprintln!("{}: skipped {} malformed row(s)", path.display(), ing.rejected.len());
    }
    Ok(ing.records)
}

pub fn preprocess(input: &Path, output: &Path, spelling: Option<&Path>, seed: u64) -> Result<()> {
    let table = match spelling {
        Some(p) => SpellingTable::from_path(p)?,
        None => SpellingTable::default_table(),
    };
    let normalizer = Normalizer::new(table);
    let reader = File::open(input).map_err(|e| Error::io(input, e))?;
    let stats = moe_absa::text::preprocess(reader, create(output)?, &normalizer)?;
    println!(
        "rows in {}, rows out {}, rejected {}, emoji removed {}, letters mapped {}, half-space joins {}, spelling replacements {}",
        stats.rows_in,
        stats.rows_out,
        stats.rows_rejected,
        stats.emoji_removed,
        stats.letters_mapped,
        stats.half_space_joins,
        stats.spelling_replacements
    );
    for r in &stats.rejected {
        eprintln!("rejected {r}");
    }
    write_json(
        &sidecar(output),
        &json!({"command": "preprocess", "seed": seed, "input": input, "stats": stats}),
    )
}

pub fn synth(n: usize, output: &Path, seed: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Usage("n must be >= 1".into()));
    }
    let records = synth_corpus(seed, n);
    write_csv_path(&records, output)?;
    let mut counts = std::collections::BTreeMap::new();
    let mut total = 0usize;
    for r in &records {
        for (a, s) in r.triples() {
            *counts.entry(format!("{}/{}", a.name(), s.name())).or_insert(0usize) += 1;
            total += 1;
        }
    }
    let target: std::collections::BTreeMap<String, f64> = label_proportions()
        .into_iter()
        .map(|((a, s), p)| (format!("{}/{}", a.name(), s.name()), p))
        .collect();
    let mut marginals = serde_json::Map::new();
    println!("{n} records, {total} labeled pairs");
    for (cell, p) in &target {
        let c = counts.get(cell).copied().unwrap_or(0);
        let share = c as f64 / total.max(1) as f64;
        println!("{cell:<26} {c:>7} {share:.4} (target {p:.4})");
        marginals.insert(cell.clone(), json!({"count": c, "share": share, "target": p}));
    }
    write_json(
        &sidecar(output),
        &json!({"command": "synth", "seed": seed, "n": n, "pairs": total, "marginals": marginals}),
    )
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let stage = args.stage()?;
    let settings = resolve(stage, args.config.as_deref(), &args.overrides()?)?;
    if args.unlabeled.is_some() && stage != Stage::Sentiment {
        return Err(Error::Usage("--unlabeled only applies to the sentiment stage".into()));
    }
    let config = &settings.config;
    let provider = settings.provider.build()?;
    let records = load_records(&args.data)?;
    let split = split_dataset(&records, DEFAULT_RATIOS, config.seed)?;
    ensure_dir(&args.out_dir)?;

    let mut files = vec!["checkpoint.bin", "metrics.json"];
    let (model, report, rng, f1) = match stage {
        Stage::Sentiment => {
            let t = train_sentiment(&split, config, &provider)?;
            if let Some(path) = &args.unlabeled {
                let unlabeled = load_records(path)?;
                let labels = pseudo_label(&t.model, &unlabeled, &provider, config.pseudo_threshold, config.manual_budget)?;
                println!(
                    "pseudo-labels: {} auto, {} flagged for review",
                    labels.auto_labeled.len(),
                    labels.flagged_for_review.len()
                );
                write_json(&args.out_dir.join("pseudo_labels.json"), &json!({"seed": config.seed, "labels": labels}))?;
                files.push("pseudo_labels.json");
            }
            let f1 = t.report.final_epoch().validation.weighted.f1;
            (StageModel::Sentiment(t.model), serde_json::to_value(&t.report)?, t.rng, f1)
        }
        Stage::Acd => {
            let t = train_acd(&split, config, &provider)?;
            let f1 = t.report.final_epoch().validation.weighted.f1;
            (StageModel::Acd(t.model), serde_json::to_value(&t.report)?, t.rng, f1)
        }
        Stage::Absa => {
            let options = TrainOptions {
                record_trace: true,
                gate_skew: None,
            };
            let t = train_absa(&split, config, &provider, &options)?;
            write_heatmap_csv(&t.report.heatmap, create(&args.out_dir.join("heatmap.csv"))?)?;
            t.report.trace.write_csv(create(&args.out_dir.join("trace.csv"))?)?;
            files.extend(["heatmap.csv", "trace.csv"]);
            let last = t.report.final_epoch();
            println!(
                "cov2 soft {:.6} hard {:.6}, top-k drops {}, unrouted {}",
                last.cov2_soft, last.cov2_hard, t.report.topk_drops, t.report.unrouted
            );
            let f1 = last.validation.weighted.f1;
            (StageModel::Absa(t.model), serde_json::to_value(&t.report)?, t.rng, f1)
        }
    };
    println!("{stage}: validation weighted F1 {f1:.6}");

    let ckpt = Checkpoint {
        config: config.clone(),
        provider: settings.provider.clone(),
        rng: RngState::capture(&rng),
        metrics: json!({"validation_weighted_f1": f1}),
        model,
    };
    ckpt.save(&args.out_dir.join("checkpoint.bin"))?;
    write_json(
        &args.out_dir.join("metrics.json"),
        &json!({
            "command": "train",
            "seed": config.seed,
            "stage": stage.name(),
            "data": args.data,
            "config": config,
            "provider": settings.provider,
            "report": report,
            "files": files,
        }),
    )
}

fn pick_split(records: &[ReviewRecord], which: &str, seed: u64) -> Result<Vec<ReviewRecord>> {
    if which == "all" {
        return Ok(records.to_vec());
    }
    let s = split_dataset(records, DEFAULT_RATIOS, seed)?;
    match which {
        "train" => Ok(s.train),
        "validation" => Ok(s.validation),
        "test" => Ok(s.test),
        _ => Err(Error::Usage(format!("unknown split {which:?}, want train, validation, test or all"))),
    }
}

pub fn eval(checkpoint: &Path, data: &Path, out_dir: &Path, which: &str, seed: Option<u64>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let seed = seed.unwrap_or(ckpt.config.seed);
    let provider = ckpt.provider.build()?;
    let records = pick_split(&load_records(data)?, which, seed)?;
    let threads = threads()?;
    ensure_dir(out_dir)?;
    let config_value = serde_json::to_value(&ckpt.config)?;
    let batch = ckpt.config.batch_size;
    let stage = ckpt.stage();
    let mut files = vec!["eval_metrics.json", "pr.csv"];
    let (doc, curves) = match ckpt.model {
        StageModel::Sentiment(m) => {
            let ev = evaluate_sentiment(&m, &records, &provider, batch)?;
            let curves = pr_curves(&ev.probs, &one_vs_rest(&ev.labels, SENTIMENT_LABELS.len()), &SENTIMENT_LABELS)?;
            (MetricsDocument::new(seed, stage.name(), &ev.report, None, config_value)?, curves)
        }
        StageModel::Acd(m) => {
            let ev = evaluate_acd(&m, &records, &provider, batch)?;
            let curves = pr_curves(&ev.probs, &ev.truth, &aspect_labels())?;
            (MetricsDocument::new(seed, stage.name(), &ev.report, None, config_value)?, curves)
        }
        StageModel::Absa(m) => {
            let ev = evaluate_absa(&m, &records, &provider, batch, threads)?;
            let curves = pr_curves(&ev.probs, &one_vs_rest(&ev.labels, SENTIMENT_LABELS.len()), &SENTIMENT_LABELS)?;
            write_heatmap_csv(&ev.heatmap, create(&out_dir.join("heatmap.csv"))?)?;
            files.push("heatmap.csv");
            let summary = Cov2Summary {
                cov2_soft: ev.cov2_soft_all,
                cov2_hard: ev.cov2_hard_all,
                cov2_soft_window: ev.cov2_soft_window,
                cov2_hard_window: ev.cov2_hard_window,
            };
            println!(
                "cov2 soft {:.6} hard {:.6} (first {} batches: soft {:.6} hard {:.6})",
                summary.cov2_soft,
                summary.cov2_hard,
                moe_absa::pipeline::COV2_WINDOW,
                summary.cov2_soft_window,
                summary.cov2_hard_window
            );
            (MetricsDocument::new(seed, stage.name(), &ev.report, Some(summary), config_value)?, curves)
        }
    };
    println!("{stage}: weighted F1 {:.6} on {} samples", doc.weighted.f1, doc.n_samples);
    write_pr_csv(&curves, create(&out_dir.join("pr.csv"))?)?;
    let mut value = serde_json::to_value(&doc)?;
    if let Value::Object(map) = &mut value {
        map.insert("command".into(), json!("eval"));
        map.insert("data".into(), json!(data));
        map.insert("split".into(), json!(which));
        map.insert("files".into(), json!(files));
    }
    write_json(&out_dir.join("eval_metrics.json"), &value)
}

pub fn route_stats(trace: &Path, out_dir: &Path, experts: usize, seed: u64) -> Result<()> {
    if experts == 0 {
        return Err(Error::Usage("experts must be >= 1".into()));
    }
    let file = File::open(trace).map_err(|e| Error::io(trace, e))?;
    let t = RoutingTrace::read_csv(file)?;
    ensure_dir(out_dir)?;
    let occupancy = t.occupancy(experts)?;
    let cov2_hard = if occupancy.iter().any(|&c| c > 0) {
        Some(cov2(&t.hard_utilization(experts)?.u)?)
    } else {
        None
    };
    let heatmap = t.heatmap(experts)?;
    write_heatmap_csv(&heatmap, create(&out_dir.join("heatmap.csv"))?)?;
    let steps = t.rows.iter().map(|r| r.step).collect::<std::collections::BTreeSet<_>>().len();
    println!(
        "{} tokens over {steps} steps, top-k drops {}, unrouted {}, cov2 hard {}",
        t.rows.len(),
        t.total_drops(),
        t.unrouted(),
        cov2_hard.map_or("n/a".to_string(), |c| format!("{c:.6}"))
    );
    write_json(
        &out_dir.join("route_stats.json"),
        &json!({
            "command": "route-stats",
            "seed": seed,
            "trace": trace,
            "experts": experts,
            "tokens": t.rows.len(),
            "steps": steps,
            "topk_drops": t.total_drops(),
            "unrouted": t.unrouted(),
            "occupancy": occupancy,
            "cov2_hard": cov2_hard,
            "heatmap": heatmap,
            "files": ["route_stats.json", "heatmap.csv"],
        }),
    )
}
