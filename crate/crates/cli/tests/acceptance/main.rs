//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Tolerances and sizes are pinned in the constants below. Exits non-zero
//! when any criterion fails.

mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use conceptgen_core::augment::build_input;
use conceptgen_core::caption::Caption;
use conceptgen_core::dataset::{load_dataset, resplit_dev, split_stats, ConceptSet, Record, ReferenceSet, Split, DEFAULT_RESPLIT_SEED};
use conceptgen_core::jsonl;
use conceptgen_core::metrics::{self, GenerationRecord};
use conceptgen_core::ranker::{aggregate_coverage, caption_coverage, rank_all, rank_captions, select_top, CaptionSet, Ntc, NTC_GRID};
use conceptgen_core::sigtest::{is_starred, permutation_test, Mode, PairedScores};
use conceptgen_core::stem;
use conceptgen_core::sweep::coverage_curve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METRIC_TOLERANCE: f64 = 1e-9;
const METRIC_CORPORA: usize = 200;
const METRIC_TIME_LIMIT: Duration = Duration::from_secs(60);
const MONTE_CARLO_TOLERANCE: f64 = 0.02;
const MONTE_CARLO_SAMPLES: usize = 100_000;
const MONTE_CARLO_INSTANCES: usize = 20;
const RANDOM_CAPTION_SETS: usize = 1_000;
const END_TO_END_TIME_LIMIT: Duration = Duration::from_secs(30);
const WORKER_COUNTS: [usize; 3] = [1, 2, 8];
const ALPHA: f64 = 0.1;
/// NTC after which each step must add less coverage per caption than the
/// step before.
const CURVE_KNEE: usize = 2;

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn caption_set(id: &str, concepts: &[&str], texts: &[&str]) -> CaptionSet {
    let caps = texts
        .iter()
        .zip(1..)
        .map(|(t, rank)| Caption {
            concept_set_id: id.into(),
            source_rank: rank,
            text: t.to_string(),
        })
        .collect();
    rank_captions(CaptionSet::new(id, strings(concepts), caps))
}

fn augmented_strings() -> Outcome {
    let expected = [
        "wave fall board surfer <s> a surfer riding a wave on a surfboard",
        "dance stage front crowd <s> a crowd of people watching a man on a stage <s> a man is holding a microphone in front of a crowd",
        "stand hold umbrella street <s> a woman walking down a street holding an umbrella <s> a woman walking down a street holding an umbrella <s> a girl holding a pink umbrella in a city <s> a man holding an umbrella in a city <s> a group of people standing under a umbrella",
    ];
    let direct = [
        build_input(&["wave", "fall", "board", "surfer"], &["a surfer riding a wave on a surfboard"]),
        build_input(
            &["dance", "stage", "front", "crowd"],
            &["a crowd of people watching a man on a stage", "a man is holding a microphone in front of a crowd"],
        ),
        build_input(
            &["stand", "hold", "umbrella", "street"],
            &[
                "a woman walking down a street holding an umbrella",
                "a woman walking down a street holding an umbrella",
                "a girl holding a pink umbrella in a city",
                "a man holding an umbrella in a city",
                "a group of people standing under a umbrella",
            ],
        ),
    ];
    for (got, want) in direct.iter().zip(&expected) {
        ensure(got == want, || format!("build_input gave {got:?}"))?;
    }
    // The same strings through ranking of the bundled search-order captions.
    let dir = fixtures();
    let showcase = load_dataset(&dir.join("dataset/showcase.jsonl")).map_err(|e| e.to_string())?;
    let captions: Vec<Caption> = jsonl::read(&dir.join("offline/captions.jsonl")).map_err(|e| e.to_string())?;
    let sets: Vec<ConceptSet> = showcase.iter().map(|r| r.concept_set.clone()).collect();
    let ranked = rank_all(&sets, &captions);
    let by_id: BTreeMap<&str, &CaptionSet> = ranked.iter().map(|cs| (cs.concept_set_id.as_str(), cs)).collect();
    for ((id, ntc), want) in [("show-surf", 1), ("show-dance", 2), ("show-umbrella", 5)].iter().zip(&expected) {
        let cs = by_id[id];
        let top: Vec<&str> = select_top(cs, Ntc::new(*ntc).unwrap()).iter().map(|c| c.text.as_str()).collect();
        let got = build_input(&cs.concepts, &top);
        ensure(&got == want, || format!("{id} via ranking gave {got:?}"))?;
    }
    Ok("3/3 strings byte-identical, directly and via ranking".into())
}

fn split_statistics() -> Outcome {
    let dir = fixtures().join("dataset");
    let train = load_dataset(&dir.join("train.jsonl")).map_err(|e| e.to_string())?;
    let dev_o = load_dataset(&dir.join("dev_o.jsonl")).map_err(|e| e.to_string())?;
    let check = |name: &str, records: &[Record], want: [usize; 4]| {
        let s = split_stats(records);
        let got = [s.total, s.count(3), s.count(4), s.count(5)];
        ensure(got == want, || format!("{name}: got {got:?}, want {want:?}"))
    };
    check("train", &train, [32_651, 25_020, 4_240, 3_391])?;
    check("dev_o", &dev_o, [993, 493, 250, 250])?;
    let (dev, test) = resplit_dev(&dev_o, DEFAULT_RESPLIT_SEED).map_err(|e| e.to_string())?;
    check("dev_cg", &dev, [240, 120, 60, 60])?;
    check("test_cg", &test, [360, 0, 180, 180])?;
    // Any seed, and a larger dev_o, give the same strata.
    let doubled: Vec<Record> = dev_o
        .iter()
        .chain(&dev_o)
        .enumerate()
        .map(|(i, r)| Record {
            concept_set: ConceptSet::new(format!("x{i}"), r.concept_set.concepts().to_vec(), Split::DevO).unwrap(),
            references: ReferenceSet::new(format!("x{i}"), r.references.references().to_vec()).unwrap(),
        })
        .collect();
    for seed in 0..10 {
        for source in [&dev_o, &doubled] {
            let (dev, test) = resplit_dev(source, seed).map_err(|e| e.to_string())?;
            check("dev_cg", &dev, [240, 120, 60, 60])?;
            check("test_cg", &test, [360, 0, 180, 180])?;
            let overlap = dev.iter().any(|d| test.iter().any(|t| t.id() == d.id()));
            ensure(!overlap, || format!("seed {seed}: dev_cg and test_cg overlap"))?;
        }
    }
    Ok("train 32,651 (25,020/4,240/3,391), dev_cg 240 (120/60/60), test_cg 360 (0/180/180); 20 extra resplits".into())
}

fn coverage_oracle() -> Outcome {
    // Hand derivation, matching concept stems against caption token stems:
    //  stand hold umbrella street / "a woman walking down a street holding an umbrella":
    //    hold (holding), umbrella, street; no token stems to "stand" -> 3/4
    //  food eat hand bird / "a person holding a small bird in their hand":
    //    hand, bird; neither food nor eat appears -> 2/4
    //  cat bed pet lay / "a cat laying on a bed with a stuffed animal":
    //    cat, bed, lay (laying and lay share the stem "lai"); no pet -> 3/4
    //  fence jump horse rider / "a horse is jumping over a wooden fence":
    //    fence, jump (jumping), horse; no rider -> 3/4
    let cases: [(&[&str], &str, f64); 4] = [
        (&["stand", "hold", "umbrella", "street"], "a woman walking down a street holding an umbrella", 0.75),
        (&["food", "eat", "hand", "bird"], "a person holding a small bird in their hand", 0.5),
        (&["cat", "bed", "pet", "lay"], "a cat laying on a bed with a stuffed animal", 0.75),
        (&["fence", "jump", "horse", "rider"], "a horse is jumping over a wooden fence", 0.75),
    ];
    let mut got = Vec::new();
    for (concepts, caption, want) in cases {
        let c = caption_coverage(&strings(concepts), caption);
        ensure(c == want, || format!("{concepts:?}: got {c}, want {want}"))?;
        got.push(c);
    }
    Ok(format!("{got:?} exact"))
}

const VOCAB: [&str; 6] = ["cat", "dog", "run", "sit", "mat", "red"];

fn random_tokens(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<String> {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect()
}

fn metric_oracle() -> Outcome {
    // The oracle does no stemming, which is exact only if every word is its
    // own stem.
    for w in VOCAB {
        ensure(stem(w) == w, || format!("vocabulary word {w} is not its own stem"))?;
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for corpus_no in 0..METRIC_CORPORA {
        // CIDEr needs at least two examples for a document frequency.
        let n_examples = rng.random_range(2..=5);
        let examples: Vec<oracle::Example> = (0..n_examples)
            .map(|_| {
                let hyp = random_tokens(&mut rng, 0, 8);
                let n_refs = rng.random_range(1..=3);
                let refs = (0..n_refs).map(|_| random_tokens(&mut rng, 1, 8)).collect();
                oracle::Example { hyp, refs }
            })
            .collect();
        let records: Vec<GenerationRecord> = examples
            .iter()
            .enumerate()
            .map(|(i, ex)| GenerationRecord {
                concept_set_id: format!("c{i}"),
                system_name: "sys".into(),
                output_text: ex.hyp.join(" "),
                references: ex.refs.iter().map(|r| r.join(" ")).collect(),
            })
            .collect();
        let mut pairs: Vec<(String, f64, f64)> = Vec::new();
        for n in 1..=4 {
            let got = metrics::bleu(&records, n).map_err(|e| e.to_string())?.score;
            pairs.push((format!("bleu_{n}"), got, oracle::bleu(&examples, n)));
        }
        for n in 1..=2 {
            let got = metrics::rouge_n(&records, n).map_err(|e| e.to_string())?;
            pairs.push((format!("rouge_{n}"), got, oracle::rouge_n(&examples, n)));
        }
        pairs.push(("rouge_l".into(), metrics::rouge_l(&records).map_err(|e| e.to_string())?, oracle::rouge_l(&examples)));
        pairs.push(("cider".into(), metrics::cider(&records).map_err(|e| e.to_string())?, oracle::cider(&examples)));
        for (name, got, want) in pairs {
            let diff = (got - want).abs();
            worst = worst.max(diff);
            ensure(diff <= METRIC_TOLERANCE, || {
                format!("corpus {corpus_no}: {name} = {got}, oracle {want} (diff {diff:e})")
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < METRIC_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{METRIC_CORPORA} corpora x 8 metrics, max |diff| {worst:.1e} <= {METRIC_TOLERANCE:e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn permutation() -> Outcome {
    let ps = PairedScores::new("m", vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    let p = permutation_test(&ps, Mode::Exact, 0, 0).map_err(|e| e.to_string())?;
    ensure(p == 0.25, || format!("n=3 example: p = {p}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..MONTE_CARLO_INSTANCES {
        // Varying effect sizes spread the p-values over (0, 1].
        let shift = rng.random_range(0.0..0.4);
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0) + shift).collect();
        let ps = PairedScores::new("m", a, b).map_err(|e| e.to_string())?;
        let exact = permutation_test(&ps, Mode::Exact, 0, 0).map_err(|e| e.to_string())?;
        let mc = permutation_test(&ps, Mode::MonteCarlo, MONTE_CARLO_SAMPLES, 100 + i as u64).map_err(|e| e.to_string())?;
        let diff = (exact - mc).abs();
        worst = worst.max(diff);
        ensure(diff <= MONTE_CARLO_TOLERANCE, || format!("instance {i}: exact {exact}, monte carlo {mc}"))?;
    }
    ensure(is_starred(0.33, ALPHA), || "p = 0.33 not starred".into())?;
    ensure(!is_starred(0.06, ALPHA), || "p = 0.06 starred".into())?;
    Ok(format!(
        "exact n=3 p = 0.25; {MONTE_CARLO_INSTANCES} n=12 instances, max |mc - exact| {worst:.4} <= {MONTE_CARLO_TOLERANCE}; 0.33* and 0.06 at alpha {ALPHA}"
    ))
}

/// Stable descending order by bucketing, independent of the sort used by
/// the ranker.
fn bucket_order(counts: &[usize], max: usize) -> Vec<usize> {
    (0..=max)
        .rev()
        .flat_map(|c| (0..counts.len()).filter(move |&i| counts[i] == c))
        .collect()
}

fn ranking() -> Outcome {
    let concepts = ["cat", "dog", "run", "sit"];
    let mut checked = 0;
    for len in 0..=5u32 {
        for code in 0..5usize.pow(len) {
            let counts: Vec<usize> = (0..len).map(|i| code / 5usize.pow(i) % 5).collect();
            // Caption i mentions the first counts[i] concepts plus a marker.
            let texts: Vec<String> = counts
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let mut words: Vec<&str> = concepts[..c].to_vec();
                    let marker = format!("x{i}");
                    words.push(&marker);
                    words.join(" ")
                })
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let cs = caption_set("s", &concepts, &refs);
            let got: Vec<usize> = cs.ranked.iter().map(|r| r.caption.source_rank as usize - 1).collect();
            let want = bucket_order(&counts, concepts.len());
            ensure(got == want, || format!("counts {counts:?}: ranked {got:?}, want {want:?}"))?;
            for r in &cs.ranked {
                let c = counts[r.caption.source_rank as usize - 1];
                ensure(r.coverage == c as f64 / 4.0, || format!("counts {counts:?}: coverage {}", r.coverage))?;
            }
            checked += 1;
        }
    }
    let words = ["cat", "dog", "run", "sit", "mat", "red", "sun", "hat", "the", "on"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..RANDOM_CAPTION_SETS {
        let k = rng.random_range(3..=5);
        let mut pool = words[..8].to_vec();
        let concepts: Vec<&str> = (0..k).map(|_| pool.remove(rng.random_range(0..pool.len()))).collect();
        let n_caps = rng.random_range(0..=12);
        let texts: Vec<String> = (0..n_caps)
            .map(|_| {
                let len = rng.random_range(0..=6);
                (0..len).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let cs = caption_set(&format!("r{i}"), &concepts, &refs);
        let mut prev = 0.0;
        for n in 1..=n_caps + 2 {
            let agg = aggregate_coverage(&cs, Ntc::new(n).unwrap());
            ensure(agg >= prev, || format!("set {i}: aggregate dropped at ntc {n}"))?;
            prev = agg;
        }
        let all = caption_coverage(&strings(&concepts), &texts.join(" "));
        ensure(n_caps == 0 || prev == all, || format!("set {i}: full aggregate {prev} vs concatenation {all}"))?;
    }
    Ok(format!(
        "{checked} coverage sequences of length <= 5 stable; {RANDOM_CAPTION_SETS} random sets monotone"
    ))
}

fn curve_shape() -> Outcome {
    let dir = fixtures();
    let dev_o = load_dataset(&dir.join("dataset/dev_o.jsonl")).map_err(|e| e.to_string())?;
    let captions: Vec<Caption> = jsonl::read(&dir.join("captions/dev_o.jsonl")).map_err(|e| e.to_string())?;
    let sets: Vec<ConceptSet> = dev_o.iter().map(|r| r.concept_set.clone()).collect();
    let ranked = rank_all(&sets, &captions);
    let grid: Vec<Ntc> = NTC_GRID.iter().map(|&n| Ntc::new(n).unwrap()).collect();
    let curve = coverage_curve(&ranked, &grid).map_err(|e| e.to_string())?;
    let values: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
    for w in values.windows(2) {
        ensure(w[1] >= w[0], || format!("curve decreases: {values:?}"))?;
    }
    ensure(values.iter().all(|v| (0.0..=100.0).contains(v)), || format!("out of range: {values:?}"))?;
    // Gain per added caption between consecutive grid points.
    let gains: Vec<(usize, f64)> = curve
        .windows(2)
        .map(|w| (w[1].0.get(), (w[1].1 - w[0].1) / (w[1].0.get() - w[0].0.get()) as f64))
        .collect();
    let after_knee: Vec<f64> = gains.iter().filter(|(to, _)| *to > CURVE_KNEE).map(|(_, g)| *g).collect();
    let at_knee = gains.iter().find(|(to, _)| *to == CURVE_KNEE).map(|(_, g)| *g).unwrap_or(f64::INFINITY);
    ensure(after_knee.first().is_some_and(|g| *g < at_knee), || format!("no knee at {CURVE_KNEE}: {gains:?}"))?;
    for w in after_knee.windows(2) {
        ensure(w[1] < w[0], || format!("gains not strictly diminishing: {gains:?}"))?;
    }
    let shown: Vec<String> = curve.iter().map(|(n, v)| format!("{n}:{v:.2}")).collect();
    Ok(format!("curve {}", shown.join(" ")))
}

fn run_pipeline(bin: &Path, workers: usize, dir: &Path) -> Result<Duration, String> {
    let f = fixtures().canonicalize().map_err(|e| e.to_string())?;
    let fx = |p: &str| f.join(p).display().to_string();
    let w = workers.to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["split".into(), "--dataset".into(), fx("dataset/train.jsonl"), "--dataset".into(), fx("dataset/dev_o.jsonl"), "--out-dir".into(), "data".into()],
        vec!["rank".into(), "--dataset".into(), "data/dev_o.jsonl".into(), "--captions".into(), fx("captions/dev_o.jsonl"), "--out".into(), "ranked.jsonl".into()],
        vec!["augment".into(), "--dataset".into(), "data/test_cg.jsonl".into(), "--split".into(), "test_cg".into(), "--ranked".into(), "ranked.jsonl".into(), "--ntc".into(), "2".into(), "--out".into(), "test_cg.ntc2.jsonl".into()],
        vec!["evaluate".into(), "--system".into(), fx("generations/system_a.jsonl"), "--refs".into(), "data/test_cg.jsonl".into(), "--out".into(), "system_a.report.json".into(), "--csv".into(), "system_a.csv".into()],
        vec!["evaluate".into(), "--system".into(), fx("generations/system_b.jsonl"), "--refs".into(), "data/test_cg.jsonl".into(), "--out".into(), "system_b.report.json".into()],
        vec!["sigtest".into(), "--a".into(), fx("generations/system_a.jsonl"), "--b".into(), fx("generations/system_b.jsonl"), "--refs".into(), "data/test_cg.jsonl".into(), "--out".into(), "sig.csv".into(), "--text".into(), "sig.txt".into()],
    ];
    let start = Instant::now();
    for step in steps {
        let out = Command::new(bin)
            .args(["--workers", &w])
            .args(&step)
            .current_dir(dir)
            .env_remove("CONCEPTGEN_CAPTION_ENDPOINT")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", step[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(start.elapsed())
}

fn list_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path)?);
        }
    }
    Ok(())
}

fn end_to_end() -> Outcome {
    let bin = Path::new(env!("CARGO_BIN_EXE_conceptgen"));
    let mut snapshots = Vec::new();
    let mut times = Vec::new();
    for workers in WORKER_COUNTS {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let elapsed = run_pipeline(bin, workers, dir.path())?;
        ensure(elapsed < END_TO_END_TIME_LIMIT, || format!("{workers} workers took {elapsed:?}"))?;
        times.push(format!("{:.1}s", elapsed.as_secs_f64()));
        let mut files = BTreeMap::new();
        list_files(dir.path(), dir.path(), &mut files).map_err(|e| e.to_string())?;
        snapshots.push(files);
    }
    let first = &snapshots[0];
    for (workers, snap) in WORKER_COUNTS.iter().zip(&snapshots).skip(1) {
        ensure(snap.keys().eq(first.keys()), || format!("{workers} workers wrote different files"))?;
        for (path, bytes) in snap {
            ensure(&first[path] == bytes, || format!("{} differs with {workers} workers", path.display()))?;
        }
    }
    let aug = String::from_utf8_lossy(&first[Path::new("test_cg.ntc2.jsonl")]).into_owned();
    ensure(aug.lines().count() == 360, || "expected one inference line per test_cg set".into())?;
    ensure(first.contains_key(Path::new("sig.csv.run.json")), || "missing run manifest".into())?;
    Ok(format!(
        "{} files byte-identical at workers {WORKER_COUNTS:?}; run times {}",
        first.len(),
        times.join(", ")
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("augmented inputs byte-exact", augmented_strings),
        ("split statistics", split_statistics),
        ("coverage oracle", coverage_oracle),
        ("metric oracle equivalence", metric_oracle),
        ("permutation test", permutation),
        ("ranking properties", ranking),
        ("coverage curve shape", curve_shape),
        ("hermetic end-to-end", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
