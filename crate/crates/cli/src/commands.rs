use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use conceptgen_core::augment::{emit_dataset, EmitMode};
use conceptgen_core::caption::{caption_images, Caption, CaptionProvider, HttpProvider, ManifestProvider, ENDPOINT_ENV};
use conceptgen_core::dataset::{resplit_dev, split_stats, validate_records, write_dataset, RawRecord, Record, Split};
use conceptgen_core::jsonl;
use conceptgen_core::metrics::{concept_index, evaluate_system, join_generations, load_generations, EvalReport, GenerationRecord};
use conceptgen_core::ranker::{rank_all, CaptionSet, RankedRecord};
use conceptgen_core::retrieval::{retrieve_all, FixtureFetcher, FixtureSearch, HttpFetcher, HttpSearch, RetrievalConfig, RetrievedImage};
use conceptgen_core::sigtest::{recompute_bleu_rows, significance_table, Mode, SigConfig};
use conceptgen_core::sweep::{coverage_rows, metric_rows, rows_to_csv, select_ntc_by, NtcRun};
use conceptgen_core::RetryPolicy;

use crate::manifest::Recorder;
use crate::{
    AugmentArgs, CaptionArgs, DatasetArgs, EmitModeArg, EvaluateArgs, ModeArg, NetArgs, Outcome, RankArgs,
    RetrieveArgs, SigtestArgs, SplitArgs, SweepCoverageArgs, SweepSelectArgs,
};

/// Loads and validates dataset files together, so ids must be unique
/// across all of them.
fn load_records(paths: &[PathBuf], split: Option<Split>) -> Result<Vec<Record>> {
    let mut raw: Vec<RawRecord> = Vec::new();
    for p in paths {
        raw.extend(jsonl::read::<RawRecord>(p)?);
    }
    let records = validate_records(raw)?;
    Ok(match split {
        Some(s) => records.into_iter().filter(|r| r.concept_set.split() == s).collect(),
        None => records,
    })
}

fn load_dataset_args(args: &DatasetArgs, rec: &mut Recorder) -> Result<Vec<Record>> {
    for p in &args.datasets {
        rec.input(p)?;
    }
    let records = load_records(&args.datasets, args.split)?;
    if records.is_empty() {
        bail!("no records selected from the dataset");
    }
    Ok(records)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn failures_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".failures.jsonl");
    out.with_file_name(name)
}

fn retry_policy(net: &NetArgs) -> RetryPolicy {
    RetryPolicy {
        retries: net.retries,
        base_delay: Duration::from_millis(net.retry_base_ms),
    }
}

fn net_config(net: &NetArgs) -> serde_json::Value {
    json!({
        "offline": net.fixtures.is_some(),
        "retries": net.retries,
        "retry_base_ms": net.retry_base_ms,
        "timeout_secs": net.timeout_secs,
    })
}

pub fn split(args: SplitArgs) -> Result<Outcome> {
    let mut rec = Recorder::new("split", json!({ "seed": args.seed })).seed(args.seed);
    for p in &args.datasets {
        rec.input(p)?;
    }
    let records = load_records(&args.datasets, None)?;
    let mut by_split: BTreeMap<Split, Vec<Record>> = BTreeMap::new();
    for r in records {
        by_split.entry(r.concept_set.split()).or_default().push(r);
    }
    let has_derived = by_split.contains_key(&Split::DevCg) || by_split.contains_key(&Split::TestCg);
    if let (Some(dev_o), false) = (by_split.get(&Split::DevO), has_derived) {
        let (dev, test) = resplit_dev(dev_o, args.seed)?;
        by_split.insert(Split::DevCg, dev);
        by_split.insert(Split::TestCg, test);
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut outputs = Vec::new();
    let mut stats = serde_json::Map::new();
    for (split, records) in &by_split {
        let path = args.out_dir.join(format!("{split}.jsonl"));
        write_dataset(&path, records)?;
        outputs.push(path);
        let s = split_stats(records);
        let by_size: serde_json::Map<String, serde_json::Value> =
            s.by_size.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        stats.insert(split.to_string(), json!({ "total": s.total, "by_size": by_size }));
        println!(
            "{:<8} {:>6}  ({})",
            split.as_str(),
            s.total,
            (3..=5).map(|k| s.count(k).to_string()).collect::<Vec<_>>().join("/")
        );
    }
    let stats_path = args.out_dir.join("stats.json");
    write_json(&stats_path, &stats)?;
    outputs.push(stats_path.clone());
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    rec.write(&stats_path, &refs)?;
    Ok(Outcome::Ok)
}

pub fn retrieve(args: RetrieveArgs) -> Result<Outcome> {
    let config = json!({
        "split": args.data.split,
        "limit": args.limit,
        "max_image_bytes": args.max_image_bytes,
        "search_url": args.search_url,
        "store_images": args.images_dir.is_some(),
        "net": net_config(&args.net),
    });
    let mut rec = Recorder::new("retrieve", config);
    let records = load_dataset_args(&args.data, &mut rec)?;
    if args.limit == 0 {
        bail!("--limit must be positive");
    }
    let timeout = Duration::from_secs(args.net.timeout_secs);
    let (backend, fetcher): (Box<dyn conceptgen_core::retrieval::SearchBackend>, Box<dyn conceptgen_core::retrieval::ImageFetcher>) =
        match (&args.net.fixtures, &args.search_url) {
            (Some(dir), _) => {
                rec.input(dir)?;
                (Box::new(FixtureSearch::new(dir.join("search"))), Box::new(FixtureFetcher::new(dir.join("images"))))
            }
            (None, Some(template)) => {
                if !template.contains("{query}") {
                    bail!("--search-url must contain {{query}}");
                }
                (
                    Box::new(HttpSearch::new(template.clone(), timeout)),
                    Box::new(HttpFetcher::new(timeout, args.max_image_bytes)),
                )
            }
            (None, None) => bail!("either --fixtures or --search-url is required"),
        };
    let sets: Vec<_> = records.iter().map(|r| r.concept_set.clone()).collect();
    let retrieval = RetrievalConfig {
        limit: args.limit,
        retry: retry_policy(&args.net),
        images_dir: args.images_dir.clone(),
    };
    let report = retrieve_all(&sets, backend.as_ref(), fetcher.as_ref(), &retrieval);
    ensure_parent(&args.out)?;
    jsonl::write(&args.out, &report.images)?;
    let failures = failures_path(&args.out);
    jsonl::write(&failures, &report.failures)?;
    rec.write(&args.out, &[&args.out, &failures])?;
    let validated = report.images.iter().filter(|i| i.validated).count();
    println!("{} images, {validated} validated, {} concept sets failed", report.images.len(), report.failures.len());
    Ok(outcome(report.failures.len()))
}

fn outcome(failures: usize) -> Outcome {
    if failures == 0 {
        Outcome::Ok
    } else {
        Outcome::Warnings(failures)
    }
}

pub fn caption(args: CaptionArgs) -> Result<Outcome> {
    let mut rec = Recorder::new(
        "caption",
        json!({
            "endpoint": args.endpoint,
            "manifest": args.manifest.is_some(),
            "net": net_config(&args.net),
        }),
    );
    rec.input(&args.images)?;
    let images: Vec<RetrievedImage> = jsonl::read(&args.images)?;
    let provider: Box<dyn CaptionProvider> = match (&args.net.fixtures, &args.manifest) {
        (Some(dir), _) => {
            let path = dir.join("captions.jsonl");
            rec.input(&path)?;
            Box::new(ManifestProvider::load(&path)?)
        }
        (None, Some(path)) => {
            rec.input(path)?;
            Box::new(ManifestProvider::load(path)?)
        }
        (None, None) => {
            let endpoint = match &args.endpoint {
                Some(e) => e.clone(),
                None => std::env::var(ENDPOINT_ENV)
                    .map_err(|_| anyhow!("no caption provider: pass --fixtures, --manifest, --endpoint or set {ENDPOINT_ENV}"))?,
            };
            Box::new(HttpProvider::new(endpoint, Duration::from_secs(args.net.timeout_secs)))
        }
    };
    let report = caption_images(&images, provider.as_ref(), &retry_policy(&args.net));
    ensure_parent(&args.out)?;
    jsonl::write(&args.out, &report.captions)?;
    let failures = failures_path(&args.out);
    jsonl::write(&failures, &report.failures)?;
    rec.write(&args.out, &[&args.out, &failures])?;
    println!("{} captions, {} failures", report.captions.len(), report.failures.len());
    Ok(outcome(report.failures.len()))
}

pub fn rank(args: RankArgs) -> Result<Outcome> {
    let mut rec = Recorder::new("rank", json!({ "split": args.data.split }));
    let records = load_dataset_args(&args.data, &mut rec)?;
    rec.input(&args.captions)?;
    let captions: Vec<Caption> = jsonl::read(&args.captions)?;
    let sets: Vec<_> = records.iter().map(|r| r.concept_set.clone()).collect();
    let ranked = rank_all(&sets, &captions);
    let lines: Vec<RankedRecord> = ranked.iter().map(RankedRecord::from).collect();
    ensure_parent(&args.out)?;
    jsonl::write(&args.out, &lines)?;
    rec.write(&args.out, &[&args.out])?;
    let empty = ranked.iter().filter(|cs| cs.ranked.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} concept sets have no captions");
    }
    println!("ranked captions for {} concept sets", lines.len());
    Ok(Outcome::Ok)
}

/// Caption sets from a ranked manifest, for the given records only.
fn load_ranked(path: &Path, records: &[Record]) -> Result<HashMap<String, CaptionSet>> {
    let concepts: HashMap<&str, &[String]> = records.iter().map(|r| (r.id(), r.concept_set.concepts())).collect();
    let mut out = HashMap::new();
    for line in jsonl::read::<RankedRecord>(path)? {
        if let Some(c) = concepts.get(line.concept_set_id.as_str()) {
            let id = line.concept_set_id.clone();
            out.insert(id, line.into_caption_set(c.to_vec()));
        }
    }
    Ok(out)
}

pub fn augment(args: AugmentArgs) -> Result<Outcome> {
    let records = load_records(&args.data.datasets, args.data.split)?;
    if records.is_empty() {
        bail!("no records selected from the dataset");
    }
    // Targets only for training data unless asked otherwise.
    let mode = match args.mode {
        Some(EmitModeArg::Train) => EmitMode::Train,
        Some(EmitModeArg::Inference) => EmitMode::Inference,
        None if records.iter().all(|r| r.concept_set.split().is_training()) => EmitMode::Train,
        None => EmitMode::Inference,
    };
    let mode_name = match mode {
        EmitMode::Train => "train",
        EmitMode::Inference => "inference",
    };
    let mut rec = Recorder::new(
        "augment",
        json!({ "split": args.data.split, "ntc": args.ntc.get(), "mode": mode_name }),
    );
    for p in &args.data.datasets {
        rec.input(p)?;
    }
    rec.input(&args.ranked)?;
    let sets = load_ranked(&args.ranked, &records)?;
    ensure_parent(&args.out)?;
    let summary = emit_dataset(&records, &sets, args.ntc, mode, &args.out)?;
    rec.write(&args.out, &[&args.out])?;
    if !summary.missing_captions.is_empty() {
        log::warn!("{} concept sets had no captions", summary.missing_captions.len());
    }
    println!("wrote {} lines ({mode_name}, ntc {})", summary.lines, args.ntc);
    Ok(Outcome::Ok)
}

#[derive(Deserialize)]
struct ExternalScore {
    id: String,
    score: f64,
}

fn system_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "system".into())
}

fn load_system(name: &str, path: &Path, records: &[Record]) -> Result<Vec<GenerationRecord>> {
    let gens = load_generations(path)?;
    join_generations(name, &gens, records).with_context(|| format!("joining {}", path.display()))
}

pub fn evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let name = args.name.clone().unwrap_or_else(|| system_name(&args.system));
    let externals: Vec<&str> = args.external.iter().map(|(k, _)| k.as_str()).collect();
    let mut rec = Recorder::new(
        "evaluate",
        json!({ "split": args.split, "system_name": name, "external": externals }),
    );
    for p in &args.refs {
        rec.input(p)?;
    }
    rec.input(&args.system)?;
    let records = load_records(&args.refs, args.split)?;
    let gens = load_system(&name, &args.system, &records)?;
    let mut report = evaluate_system(&gens, &concept_index(&records))?;
    for (metric, path) in &args.external {
        rec.input(path)?;
        let scores: HashMap<String, f64> = jsonl::read::<ExternalScore>(path)?
            .into_iter()
            .map(|s| (s.id, s.score))
            .collect();
        let aligned = report
            .example_ids
            .iter()
            .map(|id| scores.get(id).copied().ok_or_else(|| anyhow!("{metric}: no score for {id}")))
            .collect::<Result<Vec<_>>>()?;
        report.add_external(metric, aligned)?;
    }
    write_json(&args.out, &report)?;
    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(csv) = &args.csv {
        write_text(csv, &report.to_csv())?;
        outputs.push(csv);
    }
    rec.write(&args.out, &outputs)?;
    print!("{}", report.to_csv());
    Ok(Outcome::Ok)
}

pub fn sigtest(args: SigtestArgs) -> Result<Outcome> {
    if !(args.alpha > 0.0 && args.alpha <= 1.0) {
        bail!("--alpha must be in (0, 1]");
    }
    let mode = match args.mode {
        ModeArg::Auto => None,
        ModeArg::Exact => Some(Mode::Exact),
        ModeArg::MonteCarlo => Some(Mode::MonteCarlo),
    };
    let config = SigConfig {
        alpha: args.alpha,
        mode,
        samples: args.samples,
        seed: args.seed,
    };
    let mut rec = Recorder::new(
        "sigtest",
        json!({ "split": args.split, "sigtest": config, "corpus_bleu": args.corpus_bleu }),
    )
    .seed(args.seed);
    for p in args.refs.iter().chain([&args.a, &args.b]) {
        rec.input(p)?;
    }
    let records = load_records(&args.refs, args.split)?;
    let (mut name_a, mut name_b) = (system_name(&args.a), system_name(&args.b));
    if name_a == name_b {
        name_a.push_str("_a");
        name_b.push_str("_b");
    }
    let gens_a = load_system(&name_a, &args.a, &records)?;
    let gens_b = load_system(&name_b, &args.b, &records)?;
    let index = concept_index(&records);
    let report_a: EvalReport = evaluate_system(&gens_a, &index)?;
    let report_b: EvalReport = evaluate_system(&gens_b, &index)?;
    let mut table = significance_table(&report_a, &report_b, &config)?;
    if args.corpus_bleu {
        recompute_bleu_rows(&mut table, &gens_a, &gens_b, &config)?;
    }
    write_text(&args.out, &table.to_csv())?;
    let text = table.to_text();
    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(path) = &args.text {
        write_text(path, &text)?;
        outputs.push(path);
    }
    rec.write(&args.out, &outputs)?;
    print!("{text}");
    Ok(Outcome::Ok)
}

pub fn sweep_coverage(args: SweepCoverageArgs) -> Result<Outcome> {
    let ntcs: Vec<usize> = args.ntc.iter().map(|n| n.get()).collect();
    let mut rec = Recorder::new("sweep coverage", json!({ "split": args.data.split, "ntc": ntcs }));
    let records = load_dataset_args(&args.data, &mut rec)?;
    rec.input(&args.ranked)?;
    let by_id = load_ranked(&args.ranked, &records)?;
    let mut sets: Vec<CaptionSet> = by_id.into_values().collect();
    sets.sort_by(|a, b| a.concept_set_id.cmp(&b.concept_set_id));
    if sets.len() < records.len() {
        log::warn!("{} concept sets missing from the ranked manifest", records.len() - sets.len());
    }
    let rows = coverage_rows(&sets, &args.ntc)?;
    let csv = rows_to_csv(&rows);
    write_text(&args.out, &csv)?;
    rec.write(&args.out, &[&args.out])?;
    print!("{csv}");
    Ok(Outcome::Ok)
}

pub fn sweep_select(args: SweepSelectArgs) -> Result<Outcome> {
    let mut rec = Recorder::new("sweep select", json!({ "metric": args.metric }));
    let mut runs = Vec::new();
    let mut seeds: HashMap<usize, u64> = HashMap::new();
    for (key, path) in &args.reports {
        let ntc = key.parse().map_err(|e| anyhow!("--report {key}={}: {e}", path.display()))?;
        rec.input(path)?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))?;
        let seed = seeds.entry(ntc).or_insert(0);
        *seed += 1;
        runs.push(NtcRun {
            ntc: conceptgen_core::ranker::Ntc::new(ntc).ok_or_else(|| anyhow!("NTC must be at least 1"))?,
            seed: *seed,
            report,
        });
    }
    let best = select_ntc_by(&runs, &args.metric)?;
    let csv = rows_to_csv(&metric_rows(&runs));
    write_text(&args.out, &csv)?;
    rec.write(&args.out, &[&args.out])?;
    println!("selected ntc: {best}");
    Ok(Outcome::Ok)
}
