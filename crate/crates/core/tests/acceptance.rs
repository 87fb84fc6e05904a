//! Acceptance suite. Each criterion runs against an independent oracle and
//! prints one PASS or FAIL line; any failure makes the binary exit nonzero.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cxr_core::embedding_store::{split_frame, DatasetManifest, EmbeddingFrame, EmbeddingMatrix, SplitFractions};
use cxr_core::evaluation::{Candidate, DatasetTag, EvalStore, EvaluationCase, ResultsFilter, SlotScores, Submission};
use cxr_core::generation::{EngineConfig, EngineStyle, TemplateEngine};
use cxr_core::grounding::{CoordinateConvention, StubGrounder};
use cxr_core::metrics::{
    exact_match_accuracy, roc_auc, rouge_l, single_match_accuracy, top_k_accuracy, Brevity, RubricMaps,
};
use cxr_core::par::Execution;
use cxr_core::pipeline::{run_localisation_benchmark, Agent, LocalisationCase, Strategy};
use cxr_core::probe::{
    bce_with_logits, bce_with_logits_grad, evaluate, grid_search, train, GridSearchSpace, Optimizer, ProbeWeights,
    Provenance, SelectionMetric, TrainConfig,
};
use cxr_core::report_text::{Extractor, Synonyms};
use cxr_core::synthetic::{generate, SyntheticSpec};
use cxr_core::types::{ConfidenceScore, DetectionMap, LabelSet, LabelSetRef, Labels, ScanRecord};
use cxr_core::uncertainty::{default_bands, phrase_for};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn chexpert() -> LabelSetRef {
    Arc::new(serde_json::from_str(include_str!("../data/chexpert14.json")).expect("label set parses"))
}

fn set_of(items: &[&str]) -> Labels {
    items.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------- metrics

fn pairwise_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if pos[i] && !pos[j] {
                pairs += 1;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn oracle_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] {
                1 + t[i + 1][j + 1]
            } else {
                t[i + 1][j].max(t[i][j + 1])
            };
        }
    }
    t[0][0]
}

fn random_score(rng: &mut ChaCha8Rng, coarse: bool) -> f64 {
    if coarse {
        f64::from(rng.gen_range(0..5u8)) / 4.0
    } else {
        rng.gen()
    }
}

fn metrics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_901);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let width = rng.gen_range(1..=8);
        let coarse = rng.gen_bool(0.5);
        let prevalence = rng.gen_range(0.05..0.95);
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..width).map(|_| random_score(&mut rng, coarse)).collect())
            .collect();
        let labels: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..width).map(|_| u8::from(rng.gen_bool(prevalence))).collect())
            .collect();
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let mut defined = Vec::new();
        for j in 0..width {
            let col: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            let pos: Vec<bool> = labels.iter().map(|r| r[j] == 1).collect();
            let want = pairwise_auc(&col, &pos);
            match (got.per_label[j], want) {
                (Some(g), Some(w)) => {
                    worst = worst.max((g - w).abs());
                    defined.push(w);
                }
                (None, None) => {}
                other => return Err(format!("definedness differs: {other:?}")),
            }
        }
        let want_macro = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        match (got.macro_average, want_macro) {
            (Some(g), Some(w)) => worst = worst.max((g - w).abs()),
            (None, None) => {}
            other => return Err(format!("macro definedness differs: {other:?}")),
        }
    }
    ensure!(worst <= 1e-9, "max AUC deviation {worst:e}");

    // accuracy family against plain counting
    let set = chexpert();
    let pathologies: Vec<&str> = set.pathologies().map(|(_, l)| l).collect();
    for _ in 0..200 {
        let n = rng.gen_range(1..=40);
        let mut preds = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n {
            let r: Labels = pathologies
                .iter()
                .filter(|_| rng.gen_bool(0.15))
                .map(|s| s.to_string())
                .collect();
            let p = if rng.gen_bool(0.4) {
                r.clone()
            } else {
                pathologies
                    .iter()
                    .filter(|_| rng.gen_bool(0.15))
                    .map(|s| s.to_string())
                    .collect()
            };
            preds.push(p);
            refs.push(r);
        }
        let exact = preds.iter().zip(&refs).filter(|(p, r)| p == r).count();
        let report = exact_match_accuracy(&preds, &refs).map_err(|e| e.to_string())?;
        ensure!(report.overall == exact as f64 / n as f64, "exact match differs");
        for (size, got) in [(0usize, report.no_finding), (1, report.one_pathology)] {
            let idx: Vec<usize> = (0..n).filter(|&i| refs[i].len() == size).collect();
            let hits = idx.iter().filter(|&&i| preds[i] == refs[i]).count();
            let want = (!idx.is_empty()).then(|| hits as f64 / idx.len() as f64);
            ensure!(got == want, "split accuracy for size {size}: {got:?} vs {want:?}");
        }
        let total: usize = refs.iter().map(|r| r.len()).sum();
        let matched: usize = preds
            .iter()
            .zip(&refs)
            .map(|(p, r)| r.iter().filter(|l| p.contains(*l)).count())
            .sum();
        match single_match_accuracy(&preds, &refs) {
            Ok(v) => ensure!(total > 0 && v == matched as f64 / total as f64, "single match differs"),
            Err(_) => ensure!(total == 0, "single match refused with {total} references"),
        }

        // top-k: a label is in the top k when fewer than k labels beat it,
        // counting earlier labels with an equal score as beating it
        let k = rng.gen_range(1..=3);
        let coarse = rng.gen_bool(0.5);
        let dets: Vec<DetectionMap> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..set.len()).map(|_| random_score(&mut rng, coarse)).collect();
                DetectionMap::from_values(set.clone(), &v).expect("scores in range")
            })
            .collect();
        let mut hits = 0;
        for (d, r) in dets.iter().zip(&refs) {
            let s = d.scores();
            let reference = if r.is_empty() {
                set_of(&["No Finding"])
            } else {
                r.clone()
            };
            let top: Vec<&str> = (0..s.len())
                .filter(|&i| {
                    let beaten_by = (0..s.len())
                        .filter(|&j| s[j].value() > s[i].value() || (s[j].value() == s[i].value() && j < i))
                        .count();
                    beaten_by < k
                })
                .map(|i| set.labels()[i].as_str())
                .collect();
            if top.iter().all(|l| reference.contains(*l)) {
                hits += 1;
            }
        }
        let got = top_k_accuracy(&dets, &refs, k).map_err(|e| e.to_string())?;
        ensure!(got == hits as f64 / n as f64, "top-{k} differs: {got} vs {hits}/{n}");
    }

    // ROUGE-L against a full-table LCS
    let vocab = [
        "no", "acute", "effusion", "left", "right", "lung", "clear", "there", "is", "mild",
    ];
    for _ in 0..500 {
        let mut words = |max: usize| -> Vec<&str> {
            let n = rng.gen_range(0..=max);
            (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect()
        };
        let (c, r) = (words(15), words(15));
        let lcs = oracle_lcs(&c, &r) as f64;
        let p = if c.is_empty() { 0.0 } else { lcs / c.len() as f64 };
        let rc = if r.is_empty() { 0.0 } else { lcs / r.len() as f64 };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * (p * rc) / (p + rc) };
        let got = rouge_l(&c.join(" "), &r.join(" "));
        ensure!(
            got.precision == p && got.recall == rc && got.f1 == f,
            "rouge mismatch on {c:?} / {r:?}"
        );
    }
    Ok(format!("1000 AUC instances, max deviation {worst:.1e}"))
}

// ------------------------------------------------------------------ probe

fn probe_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=16);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        let g = bce_with_logits_grad(&z, &y).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for i in 0..n {
            let mut up = z.clone();
            let mut down = z.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (bce_with_logits(&up, &y).unwrap() - bce_with_logits(&down, &y).unwrap()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    ensure!(worst <= 1e-6, "gradient relative error {worst:e}");

    let synth = generate(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    ensure!(
        synth.frame.len() == 200 && synth.frame.dim() == 8,
        "synthetic frame shape"
    );
    let split =
        split_frame(&synth.frame, SplitFractions::new(0.5, 0.25, 0.25).unwrap(), 11).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::new(32, 60, 0.05, 3, Optimizer::Adam).unwrap();
    let w = train(&split.train, &cfg).map_err(|e| e.to_string())?;
    let ev = evaluate(&w, &split.test, 0.5, Execution::Sequential).map_err(|e| e.to_string())?;
    ensure!(
        ev.accuracy.overall >= 0.99,
        "held-out exact match {}",
        ev.accuracy.overall
    );

    let space = GridSearchSpace::default();
    ensure!(space.len() == 45, "grid has {} configs", space.len());
    let base = TrainConfig::default();
    let a = grid_search(
        &split.train,
        &split.val,
        &space,
        SelectionMetric::ExactMatch,
        &base,
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    let b = grid_search(
        &split.train,
        &split.val,
        &space,
        SelectionMetric::ExactMatch,
        &base,
        Execution::Sequential,
    )
    .map_err(|e| e.to_string())?;
    ensure!(a == b, "grid search differs between runs");
    ensure!(
        a.leaderboard.len() == 45,
        "leaderboard has {} rows",
        a.leaderboard.len()
    );
    let distinct: BTreeSet<(usize, usize, u64)> = a
        .leaderboard
        .iter()
        .map(|e| (e.config.batch_size, e.config.epochs, e.config.learning_rate.to_bits()))
        .collect();
    ensure!(distinct.len() == 45, "leaderboard repeats a configuration");
    for pair in a.leaderboard.windows(2) {
        let (x, y) = (&pair[0], &pair[1]);
        let key =
            |e: &cxr_core::probe::LeaderboardEntry| (e.config.learning_rate, e.config.batch_size, e.config.epochs);
        ensure!(
            x.score > y.score || (x.score == y.score && key(x) < key(y)),
            "leaderboard order broken between {:?} and {:?}",
            x.config,
            y.config
        );
    }
    Ok(format!(
        "max gradient error {worst:.1e}, held-out exact match {:.3}, best {:?}",
        ev.accuracy.overall,
        (a.best.batch_size, a.best.epochs, a.best.learning_rate)
    ))
}

// ---------------------------------------------------------------- mapping

fn mapping_fidelity() -> Outcome {
    // the published table, lower bound inclusive
    let table: [(f64, &str); 4] = [
        (0.3, "cannot exclude <pathology>"),
        (0.5, "possible <pathology>"),
        (0.7, "probable <pathology>"),
        (0.9, "there is <pathology>"),
    ];
    let bands = default_bands();
    for x in [0.29, 0.30, 0.49, 0.50, 0.69, 0.70, 0.89, 0.90] {
        let want = table
            .iter()
            .rev()
            .find(|(lo, _)| x >= *lo)
            .map(|(_, t)| t.replace("<pathology>", "pleural effusion"));
        let got = phrase_for(ConfidenceScore::new(x).unwrap(), "pleural effusion", &bands);
        ensure!(got == want, "{x}: {got:?} vs {want:?}");
    }
    Ok("8 boundary values".into())
}

// ------------------------------------------------------------- extraction

#[derive(Deserialize)]
struct CorpusEntry {
    text: String,
    positive: Vec<String>,
    negated: Vec<String>,
}

fn extraction_corpus() -> Outcome {
    let set = chexpert();
    let ex = Extractor::new(&set, &Synonyms::defaults());
    let corpus: Vec<CorpusEntry> =
        serde_json::from_str(include_str!("fixtures/extraction_corpus.json")).map_err(|e| e.to_string())?;
    ensure!(corpus.len() >= 40, "corpus has only {} sentences", corpus.len());
    ensure!(
        corpus.iter().any(|c| c.text == "No pleural effusion or opacity."),
        "corpus lacks the conjunction example"
    );
    for c in &corpus {
        let r = ex.extract(&c.text);
        let pos: Labels = c.positive.iter().cloned().collect();
        let neg: Labels = c.negated.iter().cloned().collect();
        ensure!(
            r.positive == pos && r.negated == neg,
            "{:?}: got +{:?} -{:?}",
            c.text,
            r.positive,
            r.negated
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let terms: Vec<(&str, &str)> = set
        .pathologies()
        .filter(|(_, l)| !set.is_suppressed(l))
        .map(|(_, l)| (l, l))
        .chain([
            ("effusion", "Pleural Effusion"),
            ("nodule", "Lung Lesion"),
            ("oedema", "Edema"),
        ])
        .collect();
    let negators = ["No", "There is no", "Without", "Absent", "Not"];
    let asserters = ["is seen", "is present", "is noted", "has developed"];
    let gaps = [" ", "  ", "\n", "\t"];
    for i in 0..500 {
        let (na, la) = terms[rng.gen_range(0..terms.len())];
        let (nb, lb) = loop {
            let t = terms[rng.gen_range(0..terms.len())];
            if t.1 != la {
                break t;
            }
        };
        let neg = format!("{} {}.", negators[rng.gen_range(0..negators.len())], na.to_lowercase());
        let pos = format!("{} {}.", nb, asserters[rng.gen_range(0..asserters.len())]);
        let gap = gaps[rng.gen_range(0..gaps.len())];
        let negated_first = i % 2 == 0;
        let text = if negated_first {
            format!("{neg}{gap}{pos}")
        } else {
            format!("{pos}{gap}{neg}")
        };
        let r = ex.extract(&text);
        ensure!(
            r.positive == set_of(&[lb]) && r.negated == set_of(&[la]),
            "{text:?}: got +{:?} -{:?}",
            r.positive,
            r.negated
        );
    }
    Ok(format!("{} golden sentences, 500 generated pairs", corpus.len()))
}

// -------------------------------------------------------------- closed loop

fn oracle_sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn closed_loop() -> Outcome {
    let set = chexpert();
    let dim = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(424_242);
    let styles = [EngineStyle::Simple, EngineStyle::InstructionRich, EngineStyle::Flash];
    let mut nonempty = 0;
    for case in 0..100 {
        let weights: Vec<f64> = (0..set.len() * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        // every fifth case is pushed towards a normal study
        let span = if case % 5 == 0 { -9.0..-4.0 } else { -3.0..2.0 };
        let bias: Vec<f64> = (0..set.len()).map(|_| rng.gen_range(span.clone())).collect();
        let x: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let probs: Vec<f64> = (0..set.len())
            .map(|l| {
                let z: f64 = (0..dim).map(|d| weights[l * dim + d] * f64::from(x[d])).sum::<f64>() + bias[l];
                oracle_sigmoid(z)
            })
            .collect();
        if probs.iter().any(|p| (p - 0.3).abs() < 1e-9) {
            continue;
        }
        let expected: Labels = set
            .labels()
            .iter()
            .zip(&probs)
            .filter(|(l, &p)| p >= 0.3 && !set.is_suppressed(l) && !set.is_no_finding(l))
            .map(|(l, _)| l.clone())
            .collect();
        nonempty += usize::from(!expected.is_empty());

        let image = format!("scan-{case}");
        let mut grounder = StubGrounder::new();
        grounder.add_image(&image);
        for l in &expected {
            for side in ["left", "right"] {
                let a = rng.gen_range(-0.5..1.0);
                let c = rng.gen_range(0.0..1.0);
                grounder
                    .plant(&image, &format!("{side} {}", l.to_lowercase()), a, Some(c))
                    .map_err(|e| e.to_string())?;
            }
        }
        let probe = ProbeWeights::new(set.clone(), dim, weights, bias).map_err(|e| e.to_string())?;
        let engine = EngineConfig::preset("template", styles[case % 3]);
        let agent =
            Agent::new(probe, Arc::new(grounder), engine, Arc::new(TemplateEngine)).map_err(|e| e.to_string())?;
        let listing = agent.run_detection_listing(&image, &x).map_err(|e| e.to_string())?;
        ensure!(
            listing.extraction.positive == expected,
            "case {case}: extracted {:?}, expected {expected:?}; report {:?}",
            listing.extraction.positive,
            listing.report.text
        );
        ensure!(listing.extraction.negated.is_empty(), "case {case}: spurious negations");
        let again = agent.run_detection_listing(&image, &x).map_err(|e| e.to_string())?;
        ensure!(again.report == listing.report, "case {case}: report not reproducible");
        for s in set.suppressed() {
            let s = s.to_lowercase();
            let b = &listing.trace.bundle;
            for text in [&b.system, &b.image_context, &b.user, &listing.report.text] {
                ensure!(
                    !text.to_lowercase().contains(&s),
                    "case {case}: suppressed {s:?} leaked"
                );
            }
        }
        for sentence in listing.report.text.split(". ") {
            let sentence = sentence.trim_end_matches('.').to_lowercase();
            let known = sentence == "no acute cardiopulmonary abnormality"
                || listing.trace.phrases().any(|p| p.to_lowercase() == sentence);
            ensure!(known, "case {case}: sentence {sentence:?} has no trace entry");
        }
    }
    ensure!((50..100).contains(&nonempty), "{nonempty} of 100 cases had findings");
    Ok(format!("100 cases, {nonempty} with findings"))
}

// ------------------------------------------------------------- localisation

fn localisation_harness() -> Outcome {
    let set = chexpert();
    let lateral: Vec<String> = set
        .pathologies()
        .filter(|(_, l)| set.is_lateralizable(l) && !set.is_suppressed(l))
        .map(|(_, l)| l.to_lowercase())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut oracle = StubGrounder::new();
    let mut silent = StubGrounder::new();
    let mut cases = Vec::new();
    for i in 0..120 {
        let p = &lateral[rng.gen_range(0..lateral.len())];
        let image = format!("img-{i}");
        let answer = rng.gen_range(1..=2u8);
        let (o1, o2) = (format!("left {p}"), format!("right {p}"));
        let hi = rng.gen_range(0.05..1.0);
        let lo = rng.gen_range(-0.5..hi - 0.01);
        let (a1, a2) = if answer == 1 { (hi, lo) } else { (lo, hi) };
        // image-side convention: left lies in the left half
        let centroid = if answer == 1 {
            rng.gen_range(0.0..0.49)
        } else {
            rng.gen_range(0.5..1.0)
        };
        oracle.plant(&image, &o1, a1, Some(0.3)).unwrap();
        oracle.plant(&image, &o2, a2, Some(0.7)).unwrap();
        oracle.plant(&image, p, hi, Some(centroid)).unwrap();
        silent.plant(&image, &o1, -rng.gen_range(0.0..1.0), None).unwrap();
        silent.plant(&image, &o2, -rng.gen_range(0.0..1.0), None).unwrap();
        silent.plant(&image, p, 0.0, Some(0.5)).unwrap();
        cases.push(LocalisationCase {
            question: format!("Which side is the {p} on?"),
            option_1: o1,
            option_2: o2,
            image_ref: image,
            answer,
            detected: true,
        });
    }
    let conv = CoordinateConvention::ImageSide;
    for strategy in [Strategy::TwoOption, Strategy::Position] {
        let r = run_localisation_benchmark(&cases, strategy, &oracle, conv, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        ensure!(
            r.accuracy_decided == Some(1.0),
            "{strategy:?} oracle accuracy {:?}",
            r.accuracy_decided
        );
        ensure!(r.decided == cases.len(), "{strategy:?}: {} decided", r.decided);
        let r = run_localisation_benchmark(&cases, strategy, &silent, conv, Execution::Sequential)
            .map_err(|e| e.to_string())?;
        ensure!(r.abstained == cases.len(), "{strategy:?}: {} abstentions", r.abstained);
        ensure!(r.accuracy_decided.is_none(), "{strategy:?}: decided accuracy reported");
        ensure!(
            r.accuracy_overall == Some(0.0),
            "{strategy:?}: overall {:?}",
            r.accuracy_overall
        );
    }
    Ok(format!("{} cases per strategy", cases.len()))
}

// ------------------------------------------------------------- score maps

fn score_maps() -> Outcome {
    let maps = RubricMaps::default();
    let rubric: BTreeMap<String, i32> = [("X", 0), ("B2", -2), ("B1", -1), ("C", 0), ("A1", 1), ("C2", 2)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    ensure!(maps.rubric == rubric, "rubric map {:?}", maps.rubric);
    let brevity: BTreeMap<Brevity, i32> = [(Brevity::TooConcise, -1), (Brevity::Good, 0), (Brevity::TooVerbose, 1)]
        .into_iter()
        .collect();
    ensure!(maps.brevity == brevity, "brevity map {:?}", maps.brevity);
    let ranks: BTreeMap<u32, i32> = [(1, 3), (2, 2), (3, 1), (4, 1)].into_iter().collect();
    ensure!(maps.rank_to_score == ranks, "rank map {:?}", maps.rank_to_score);

    let models = ["m1", "m2", "m3", "m4"];
    let store = EvalStore::in_memory();
    store
        .import_cases(vec![EvaluationCase {
            case_id: "case".into(),
            image_uri: "/images/case.png".into(),
            reference_report: Some("Small left pleural effusion.".into()),
            candidates: models
                .iter()
                .map(|m| Candidate {
                    model_id: m.to_string(),
                    text: format!("{m} says effusion"),
                })
                .collect(),
            dataset_tag: DatasetTag::Mimic,
        }])
        .map_err(|e| e.to_string())?;
    // per rater, per model: (rank, rubric, brevity, accuracy)
    let plan: [(&str, [(u32, &str, Brevity, u8); 4]); 2] = [
        (
            "rater-a",
            [
                (1, "B1", Brevity::Good, 4),
                (2, "C", Brevity::TooVerbose, 3),
                (3, "A1", Brevity::TooConcise, 2),
                (4, "B2", Brevity::Good, 1),
            ],
        ),
        (
            "rater-b",
            [
                (1, "B1", Brevity::TooConcise, 5),
                (3, "X", Brevity::Good, 3),
                (2, "C2", Brevity::TooVerbose, 4),
                (4, "B1", Brevity::TooVerbose, 2),
            ],
        ),
    ];
    for (seed, (rater, by_model)) in plan.iter().enumerate() {
        let session = store
            .create_session(&["case".to_string()], rater, seed as u64 + 17)
            .map_err(|e| e.to_string())?;
        let slots = session.assignments[0]
            .slots
            .iter()
            .map(|m| {
                let (rank, letter, brevity, accuracy) = by_model[models.iter().position(|x| x == m).unwrap()];
                SlotScores {
                    rank,
                    rubric: Some(letter.into()),
                    brevity,
                    accuracy,
                    dangerous: accuracy == 1,
                    temporal_hallucination: false,
                }
            })
            .collect();
        store
            .submit(
                &session.session_id,
                0,
                Submission {
                    rater_id: rater.to_string(),
                    abnormal: true,
                    slots,
                },
            )
            .map_err(|e| e.to_string())?;
    }
    let export = store
        .export_results(&ResultsFilter::default())
        .map_err(|e| e.to_string())?;
    let m1 = export.model("m1").ok_or("m1 missing")?;
    ensure!(
        m1.overall.mean_accuracy == 4.5,
        "m1 accuracy {}",
        m1.overall.mean_accuracy
    );
    ensure!(
        m1.overall.mean_rubric == Some(-1.0),
        "m1 rubric {:?}",
        m1.overall.mean_rubric
    );
    let a = export
        .model("m1")
        .unwrap()
        .per_rater
        .get("rater-a")
        .ok_or("rater-a missing")?;
    let rank_scores: Vec<f64> = models
        .iter()
        .map(|m| export.model(m).unwrap().per_rater["rater-a"].mean_rank_score)
        .collect();
    ensure!(rank_scores == [3.0, 2.0, 1.0, 1.0], "rank scores {rank_scores:?}");
    ensure!(a.mean_accuracy == 4.0, "rater-a m1 accuracy {}", a.mean_accuracy);

    // every pooled mean against a recomputation from the plan
    for (i, m) in models.iter().enumerate() {
        let rows: Vec<(u32, &str, Brevity, u8)> = plan.iter().map(|(_, p)| p[i]).collect();
        let mean = |f: &dyn Fn(&(u32, &str, Brevity, u8)) -> f64| rows.iter().map(f).sum::<f64>() / 2.0;
        let got = &export.model(m).unwrap().overall;
        let want_rubric = mean(&|r| f64::from(rubric[r.1]));
        let want_similar = rows.iter().filter(|r| rubric[r.1] >= 0).count() as f64 / 2.0;
        ensure!(got.mean_rubric == Some(want_rubric), "{m} rubric");
        ensure!(got.similar_or_superior == Some(want_similar), "{m} similar/superior");
        ensure!(got.mean_brevity == mean(&|r| f64::from(brevity[&r.2])), "{m} brevity");
        ensure!(got.mean_accuracy == mean(&|r| f64::from(r.3)), "{m} accuracy");
        ensure!(
            got.mean_rank_score == mean(&|r| f64::from(ranks[&r.0])),
            "{m} rank score"
        );
        ensure!(
            got.dangerous == rows.iter().filter(|r| r.3 == 1).count(),
            "{m} dangerous"
        );
    }
    Ok("literal maps, two-rater export".into())
}

// ----------------------------------------------------------------- formats

fn formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f32> = (0..37 * 11).map(|_| rng.gen_range(-10.0f32..10.0)).collect();
    let m = EmbeddingMatrix::new(37, 11, data).map_err(|e| e.to_string())?;
    let bytes = m.to_bytes();
    let back = EmbeddingMatrix::from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure!(back.to_bytes() == bytes && back == m, "embedding round trip");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("emb.bin");
    m.save(&path).map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&path).unwrap() == bytes, "embedding file bytes");

    let set = chexpert();
    let w: Vec<f64> = (0..set.len() * 11).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..set.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let plain = ProbeWeights::new(set.clone(), 11, w, b).map_err(|e| e.to_string())?;
    let with_meta = plain.clone().with_provenance(Provenance {
        config: TrainConfig::default(),
        dataset_fingerprint: "ab".repeat(32),
        epoch_losses: vec![0.7, 0.5, 0.3],
    });
    for p in [plain, with_meta] {
        let bytes = p.to_bytes().map_err(|e| e.to_string())?;
        let back = ProbeWeights::from_bytes(&bytes).map_err(|e| e.to_string())?;
        ensure!(back.to_bytes().unwrap() == bytes, "weights round trip");
        let path = dir.path().join("probe.bin");
        p.save(&path).map_err(|e| e.to_string())?;
        ensure!(
            ProbeWeights::load(&path).unwrap().to_bytes().unwrap() == bytes,
            "weights file round trip"
        );
    }

    let label_set = LabelSet::new("tiny", vec!["A".into()]).unwrap();
    let records = (0..3000)
        .map(|i| ScanRecord {
            image_id: format!("s{i}"),
            split: None,
            labels: vec![u8::from(i % 3 == 0)],
            image_uri: None,
        })
        .collect();
    let manifest = DatasetManifest {
        source_name: "synthetic".into(),
        label_set,
        records,
    };
    let frame = EmbeddingFrame::new(manifest, EmbeddingMatrix::new(3000, 1, vec![0.0; 3000]).unwrap())
        .map_err(|e| e.to_string())?;
    let s = split_frame(&frame, SplitFractions::new(0.75, 0.10, 0.15).unwrap(), 1).map_err(|e| e.to_string())?;
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    ensure!(sizes == (2250, 300, 450), "split sizes {sizes:?}");
    Ok("byte-identical round trips, split (2250, 300, 450)".into())
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("metrics oracle equivalence", Duration::from_secs(30), metrics_oracles),
        ("probe correctness", Duration::from_secs(120), probe_correctness),
        ("mapping fidelity", Duration::from_secs(5), mapping_fidelity),
        ("extraction corpus", Duration::from_secs(30), extraction_corpus),
        ("closed-loop pipeline", Duration::from_secs(60), closed_loop),
        (
            "localisation benchmark harness",
            Duration::from_secs(30),
            localisation_harness,
        ),
        ("score maps", Duration::from_secs(5), score_maps),
        ("formats", Duration::from_secs(30), formats),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failures += 1;
                println!("FAIL  {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
