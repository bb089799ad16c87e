//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/tiny_onnx.rs"]
mod tiny_onnx;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mobmod_core::apriori::apriori_frequent_pairs;
use mobmod_core::dataset::{load_frames, sample_frame_indices};
use mobmod_core::embedding::temporal_pool;
use mobmod_core::encoder::Normalization;
use mobmod_core::eval::embed_clips;
use mobmod_core::parity::{check_bundle, PARITY_TOLERANCE};
use mobmod_core::projection::{
    accuracy_of, class_texts, loss_and_grads, random_instance, train, GradCheckConfig,
};
use mobmod_core::prompt::{default_templates, generate_feature_templates, generate_pair_templates};
use mobmod_core::synth::{generate, SynthConfig};
use mobmod_core::zero_shot::{class_embeddings, classify};
use mobmod_core::{
    BackendConfig, ClassEmbeddings, ClassLabel, ClassTextEmbedding, FrequentPair,
    ManifestEntry, Pooling, ProjectionLayer, Split, TokenLists, TrainConfig, Transaction,
    Vocabulary,
};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.2?}, budget {budget:?}"))
}

// ---------------------------------------------------------------- prompts

fn prompt_combinatorics() -> Result<String, String> {
    let start = Instant::now();
    let initial = generate_pair_templates(&TokenLists::initial()).map_err(|e| e.to_string())?;
    ensure(initial.len() == 55 && initial.generated_before_dedup == 75, || {
        format!("initial lists: {} unique / {} generated", initial.len(), initial.generated_before_dedup)
    })?;
    let candidate = generate_pair_templates(&TokenLists::candidate()).map_err(|e| e.to_string())?;
    ensure(candidate.len() == 15 && candidate.generated_before_dedup == 18, || {
        format!("candidate lists: {} unique / {} generated", candidate.len(), candidate.generated_before_dedup)
    })?;
    let feats = generate_feature_templates(&TokenLists::candidate()).map_err(|e| e.to_string())?;
    let m = feats.for_class(ClassLabel::Malicious).count();
    let b = feats.for_class(ClassLabel::Benign).count();
    ensure((m, b) == (168, 270), || format!("feature templates: {m} malicious + {b} benign"))?;
    within(Duration::from_secs(1), start)?;
    Ok("55/75 initial, 15/18 candidate, 168 + 270 feature templates".into())
}

// ---------------------------------------------------------------- apriori

/// Every 2-subset of the item universe, counted directly.
fn brute_force_pairs(ts: &[Vec<String>], tenths: usize) -> Vec<(String, String, usize)> {
    let mut universe: Vec<&String> = ts.iter().flatten().collect();
    universe.sort();
    universe.dedup();
    let n = ts.len();
    let mut out = Vec::new();
    for i in 0..universe.len() {
        for j in i + 1..universe.len() {
            let (a, b) = (universe[i], universe[j]);
            let count = ts.iter().filter(|t| t.contains(a) && t.contains(b)).count();
            if count * 10 >= tenths * n {
                out.push((a.clone(), b.clone(), count));
            }
        }
    }
    out.sort_by(|x, y| y.2.cmp(&x.2).then_with(|| (&x.0, &x.1).cmp(&(&y.0, &y.1))));
    out
}

fn apriori_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut total_pairs = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_items = rng.random_range(2..=10);
        let n_tx = rng.random_range(1..=50);
        let tenths = rng.random_range(1..=9usize);
        let raw: Vec<Vec<String>> = (0..n_tx)
            .map(|_| {
                let mut items: Vec<String> = (0..n_items)
                    .filter(|_| rng.random_bool(0.4))
                    .map(|i| format!("item{i}"))
                    .collect();
                if items.is_empty() {
                    items.push(format!("item{}", rng.random_range(0..n_items)));
                }
                items
            })
            .collect();
        let ts: Vec<Transaction> = raw.iter().map(|t| Transaction::new(t.clone()).unwrap()).collect();
        let got = apriori_frequent_pairs(&ts, tenths as f64 / 10.0).map_err(|e| e.to_string())?;
        let want: Vec<FrequentPair> = brute_force_pairs(&raw, tenths)
            .into_iter()
            .map(|(a, b, c)| FrequentPair::new(a, b, c as f64 / n_tx as f64))
            .collect();
        ensure(got == want, || format!("seed {seed}: got {got:?}, want {want:?}"))?;
        total_pairs += want.len();
    }
    within(Duration::from_secs(5), start)?;
    Ok(format!("100 instances match brute force ({total_pairs} pairs in total)"))
}

// ---------------------------------------------------------------- gradients

/// Plain-loop loss: mean cross-entropy of softmax(scale · cos(Wx + b, t_k)).
fn oracle_loss(
    weight: &[f64],
    bias: &[f64],
    texts: &[Vec<f64>],
    batch: &[(Vec<f64>, ClassLabel)],
    scale: f64,
) -> f64 {
    let out = bias.len();
    let mut total = 0.0;
    for (x, label) in batch {
        let z: Vec<f64> = (0..out)
            .map(|r| bias[r] + (0..x.len()).map(|c| weight[r * x.len() + c] * x[c]).sum::<f64>())
            .collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        let logits: Vec<f64> = texts
            .iter()
            .map(|t| scale * t.iter().zip(&z).map(|(a, b)| a * b / norm).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[label.index()];
    }
    total / batch.len() as f64
}

fn gradient_correctness() -> Result<String, String> {
    let start = Instant::now();
    let cfg = GradCheckConfig::default();
    let h = 1e-4;
    let mut worst = 0f64;
    for seed in 0..20u64 {
        let (layer, texts, batch) = random_instance(seed, &cfg);
        let (loss, grads) =
            loss_and_grads(&batch, &layer, &texts, cfg.logit_scale).map_err(|e| e.to_string())?;
        let (w0, b0) = (layer.weight().to_vec(), layer.bias().to_vec());
        let at = |i: usize, delta: f64| {
            let (mut w, mut b) = (w0.clone(), b0.clone());
            if i < w.len() {
                w[i] += delta;
            } else {
                b[i - w0.len()] += delta;
            }
            oracle_loss(&w, &b, &texts, &batch, cfg.logit_scale)
        };
        let base = at(0, 0.0);
        ensure((base - loss).abs() < 1e-9, || format!("seed {seed}: loss {loss} vs oracle {base}"))?;
        for (i, &a) in grads.weight.iter().chain(&grads.bias).enumerate() {
            let numeric = (at(i, h) - at(i, -h)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    within(Duration::from_secs(10), start)?;
    Ok(format!("20 instances, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- commutation

fn commutation() -> Result<String, String> {
    let mut worst = 0f32;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let layer = ProjectionLayer::<f32>::glorot(512, 768, &mut rng);
        let n_frames = rng.random_range(1..=16);
        let frames: Vec<Vec<f32>> = (0..n_frames)
            .map(|_| (0..768).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let pooled = temporal_pool(&frames, Pooling::Mean).map_err(|e| e.to_string())?;
        let a = layer.project(pooled.values());
        let projected: Vec<Vec<f32>> = frames.iter().map(|f| layer.project(f)).collect();
        let b = temporal_pool(&projected, Pooling::Mean).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(b.values()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst < 1e-5, || format!("max abs diff {worst:.3e}"))?;
    Ok(format!("50 instances, max abs diff {worst:.2e}"))
}

// ---------------------------------------------------------------- training

/// lr 1e-3 is the permitted ×10 scaling of the default 1e-4 for synthetic data.
fn training_sanity() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let entries = generate(
        dir.path(),
        &SynthConfig {
            clips: 200,
            train_fraction: 1.0,
            ..SynthConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let encoder = BackendConfig::reference(42).build().map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_steps: Some(200),
        ..TrainConfig::default()
    };
    let clips = embed_clips(&entries, encoder.as_ref(), cfg.frames_per_clip, cfg.pooling)
        .map_err(|e| e.to_string())?;
    let embs = class_embeddings(&default_templates(), encoder.as_ref(), &Vocabulary::character_level())
        .map_err(|e| e.to_string())?;
    let samples: Vec<(Vec<f32>, ClassLabel)> = clips.iter().map(|c| (c.feature.clone(), c.label)).collect();
    let scale = cfg.logit_scale as f32;
    let before = accuracy_of(&samples, &ProjectionLayer::init(cfg.seed), &class_texts(&embs), scale);
    let outcome = train(&samples, &embs, ProjectionLayer::init(cfg.seed), &cfg).map_err(|e| e.to_string())?;
    let acc = accuracy_of(&samples, &outcome.layer, &class_texts(&embs), scale);
    ensure(outcome.steps <= 200, || format!("{} steps", outcome.steps))?;
    ensure(acc >= 0.95, || format!("train accuracy {:.1}% after {} steps", 100.0 * acc, outcome.steps))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "200 clips, {} steps at lr 1e-3: train accuracy {:.1}% -> {:.1}%",
        outcome.steps,
        100.0 * before,
        100.0 * acc
    ))
}

// ---------------------------------------------------------------- zero-shot

fn zero_shot_contract() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random_vec = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
    let mut worst_sum = 0f64;
    for _ in 0..200 {
        let m = random_vec(512);
        let b = random_vec(512);
        let video = random_vec(512);
        let embs = ClassEmbeddings::new(
            ClassTextEmbedding::from_vector(ClassLabel::Malicious, &m, 1),
            ClassTextEmbedding::from_vector(ClassLabel::Benign, &b, 1),
        )
        .map_err(|e| e.to_string())?;
        let s = classify(&video, &embs, 100.0).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((s.probabilities.iter().sum::<f64>() - 1.0).abs());
        for alpha in [1e-3f32, 0.5, 7.0, 1e3] {
            let scaled: Vec<f32> = video.iter().map(|v| v * alpha).collect();
            let s2 = classify(&scaled, &embs, 100.0).map_err(|e| e.to_string())?;
            ensure(s2.predicted == s.predicted, || format!("label changed under rescaling by {alpha}"))?;
        }
    }
    ensure(worst_sum <= 1e-6, || format!("probabilities sum off by {worst_sum:.3e}"))?;

    let t = random_vec(512);
    let video = random_vec(512);
    let same = ClassEmbeddings::new(
        ClassTextEmbedding::from_vector(ClassLabel::Malicious, &t, 1),
        ClassTextEmbedding::from_vector(ClassLabel::Benign, &t, 1),
    )
    .map_err(|e| e.to_string())?;
    let s = classify(&video, &same, 100.0).map_err(|e| e.to_string())?;
    ensure(s.probabilities == [0.5, 0.5], || format!("symmetric case gave {:?}", s.probabilities))?;
    ensure(s.predicted == ClassLabel::Malicious, || format!("tie went to {:?}", s.predicted))?;
    Ok(format!(
        "200 instances, max |sum - 1| {worst_sum:.1e}, labels stable under rescaling, symmetric case [0.5, 0.5] -> malicious"
    ))
}

// ---------------------------------------------------------------- tokenizer

const TOY_MERGES: [(&str, &str); 12] = [
    ("a", "b"),
    ("b", "c"),
    ("c", "d"),
    ("a", "a"),
    ("ab", "c"),
    ("d", "a"),
    ("aa", "b"),
    ("ab", "ab"),
    ("cd", "a"),
    ("b", "b"),
    ("bb", "bb"),
    ("abc", "d"),
];

const TOY_MARKED_MERGES: [(&str, &str); 10] = [
    ("a", "b"),
    ("a", "b</w>"),
    ("c", "d</w>"),
    ("b", "c"),
    ("a", "a"),
    ("ab", "c</w>"),
    ("ab", "ab</w>"),
    ("d", "a</w>"),
    ("bc", "d</w>"),
    ("b", "b"),
];

/// Apply merges one rank at a time, each until it no longer occurs.
fn oracle_bpe(word: &str, merges: &[(&str, &str)], marker: bool) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if marker {
        syms.last_mut().unwrap().push_str("</w>");
    }
    for (l, r) in merges {
        loop {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == *l && syms[i + 1] == *r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            let done = out.len() == syms.len();
            syms = out;
            if done {
                break;
            }
        }
    }
    syms
}

fn toy_vocab(merges: &[(&str, &str)], marker: bool) -> (Vec<String>, Vocabulary) {
    let mut tokens: Vec<String> = ["<sot>", "<eot>", "<pad>"].iter().map(|s| s.to_string()).collect();
    for c in ["a", "b", "c", "d"] {
        tokens.push(c.into());
        if marker {
            tokens.push(format!("{c}</w>"));
        }
    }
    tokens.extend(merges.iter().map(|(l, r)| format!("{l}{r}")));
    let vocab = Vocabulary::from_parts(
        tokens.clone(),
        merges.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect(),
    )
    .unwrap();
    (tokens, vocab)
}

fn all_words(max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut level = vec![String::new()];
    for _ in 0..max_len {
        level = level
            .iter()
            .flat_map(|w| ['a', 'b', 'c', 'd'].map(|c| format!("{w}{c}")))
            .collect();
        out.extend(level.iter().cloned());
    }
    out
}

fn tokenizer() -> Result<String, String> {
    let words = all_words(8);
    for (merges, marker) in [(&TOY_MERGES[..], false), (&TOY_MARKED_MERGES[..], true)] {
        let (tokens, vocab) = toy_vocab(merges, marker);
        ensure(vocab.is_byte_level() == marker, || "unexpected word-marker mode".into())?;
        let id_of = |s: &str| tokens.iter().position(|t| t == s).unwrap() as u32;
        for w in &words {
            let mut want = vec![0u32];
            want.extend(oracle_bpe(w, merges, marker).iter().map(|s| id_of(s)));
            want.push(1);
            want.resize(77, 2);
            let got = vocab.encode(w).map_err(|e| format!("{w:?}: {e}"))?;
            ensure(got.ids() == want.as_slice(), || {
                format!("{w:?} (marker {marker}): got {:?}, want {:?}", &got.ids()[..12], &want[..12])
            })?;
        }
    }
    let (_, vocab) = toy_vocab(&TOY_MERGES, false);
    let long = ["abcd ".repeat(40), "a".repeat(500), "d c b a".into(), "  ab   cd  ".into()];
    for text in &long {
        let ids = vocab.encode(text).map_err(|e| e.to_string())?;
        ensure(ids.len() == 77 && ids.ids()[0] == 0, || format!("{text:?}: length {}", ids.len()))?;
        ensure(ids.ids().iter().filter(|&&i| i == 1).count() == 1, || format!("{text:?}: eot count"))?;
    }
    Ok(format!(
        "{} inputs x 2 vocabularies match rank-order merging; all outputs length 77",
        words.len()
    ))
}

// ---------------------------------------------------------------- determinism

fn mobmod(dir: &Path, args: &[&str]) -> (Option<i32>, Vec<u8>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_mobmod"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .env_remove("MOBMOD_THREADS")
        .output()
        .expect("running mobmod");
    (out.status.code(), out.stdout, out.stderr)
}

fn snapshot_dir(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const DETERMINISM_RUNS: &[&[&str]] = &[
    &["synth", "--out", "data", "--clips", "40", "--frames", "4", "--size", "16"],
    &["gen-prompts", "--strategy", "default", "--out", "default.txt"],
    &["gen-prompts", "--strategy", "context", "--out", "context.txt"],
    &["gen-prompts", "--strategy", "pairs", "--tokens", "tokens.toml", "--out", "pairs.txt"],
    &["gen-prompts", "--strategy", "features", "--tokens", "tokens.toml", "--out", "features.txt"],
    &[
        "zero-shot", "--manifest", "data/manifest.csv", "--templates", "pairs.txt", "--frames", "4",
        "--report", "zs.csv", "--markdown", "zs.md", "--cache", "cache.bin",
    ],
    &["apriori", "--records", "zs.csv", "--min-support", "0.1", "--out", "freq.csv", "--templates-out", "regen.txt"],
    &["gen-prompts", "--strategy", "apriori-regenerate", "--pairs", "freq.csv", "--out", "regen2.txt"],
    &[
        "train", "--manifest", "data/manifest.csv", "--frames", "4", "--epochs", "2", "--out",
        "proj.bin", "--metrics", "metrics.csv",
    ],
    &[
        "eval", "--manifest", "data/manifest.csv", "--frames", "4", "--proj", "proj.bin", "--report",
        "eval.csv", "--markdown", "eval.md",
    ],
    &["check-grads", "--trials", "3"],
    &["check-parity", "--bundle", "bundle"],
];

fn determinism() -> Result<String, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        fs::create_dir_all(dir.join("bundle")).unwrap();
        fs::write(dir.join("tokens.toml"), TokenLists::candidate().to_toml_string()).unwrap();
        tiny_onnx::write_bundle(&dir.join("bundle"), 0.0);
        let mut log = Vec::new();
        for args in DETERMINISM_RUNS {
            if args[0] == "check-parity" && !cfg!(feature = "onnx") {
                continue;
            }
            let mut full = vec!["--seed", "7"];
            full.extend_from_slice(args);
            log.push(mobmod(&dir, &full));
        }
        logs.push(log);
        files.push(snapshot_dir(&dir));
    }
    for (args, (a, b)) in DETERMINISM_RUNS.iter().zip(logs[0].iter().zip(&logs[1])) {
        ensure(a == b, || {
            format!(
                "`{}` differs between runs: exit {:?} vs {:?}\n{}\n{}",
                args.join(" "),
                a.0,
                b.0,
                String::from_utf8_lossy(&a.2),
                String::from_utf8_lossy(&b.2)
            )
        })?;
        ensure(a.0 == Some(0), || {
            format!("`{}` exited {:?}: {}", args.join(" "), a.0, String::from_utf8_lossy(&a.2))
        })?;
    }
    ensure(files[0].keys().eq(files[1].keys()), || "runs wrote different file sets".into())?;
    for (path, bytes) in &files[0] {
        ensure(&files[1][path] == bytes, || format!("{} differs between runs", path.display()))?;
    }
    Ok(format!(
        "{} subcommand runs, {} output files byte-identical",
        logs[0].len(),
        files[0].len()
    ))
}

// ---------------------------------------------------------------- frames

fn write_gray_ppm(path: &Path, level: u8) {
    let mut bytes = b"P6\n2 2\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(level, 12));
    fs::write(path, bytes).unwrap();
}

fn frame_sampling() -> Result<String, String> {
    let want = [7, 23, 39, 54, 70, 85, 101, 117, 132, 148, 164, 179, 195, 210, 226, 242];
    let got = sample_frame_indices(250, 16);
    ensure(got == want, || format!("indices {got:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..250u8 {
        write_gray_ppm(&dir.path().join(format!("f{i:04}.ppm")), i);
    }
    let entry = ManifestEntry {
        id: "c".into(),
        frames_dir: dir.path().to_path_buf(),
        label: ClassLabel::Benign,
        split: Split::Test,
    };
    let norm = Normalization::default();
    let frames = load_frames(&entry, 16, &norm).map_err(|e| e.to_string())?;
    let levels: Vec<usize> = frames
        .iter()
        .map(|f| ((f.at(0, 100, 100) * norm.std[0] + norm.mean[0]) * 255.0).round() as usize)
        .collect();
    ensure(levels == want, || format!("loaded frames {levels:?}"))?;
    Ok("N=250, T=16 -> 7, 23, ..., 242; a 250-frame directory loads exactly those frames".into())
}

// ---------------------------------------------------------------- parity

fn export_parity() -> Result<Option<String>, String> {
    let Some(dir) = std::env::var_os("MOBMOD_BUNDLE") else {
        return Ok(None);
    };
    let r = check_bundle(Path::new(&dir)).map_err(|e| e.to_string())?;
    ensure(r.passed(PARITY_TOLERANCE), || format!("{r:?}"))?;
    Ok(Some(format!("max abs diff {:.2e}", r.max_diff())))
}

fn main() {
    let checks: &[(&str, Check)] = &[
        ("prompt combinatorics", prompt_combinatorics),
        ("apriori oracle equivalence", apriori_oracle),
        ("gradient correctness", gradient_correctness),
        ("commutation", commutation),
        ("training sanity", training_sanity),
        ("zero-shot contract", zero_shot_contract),
        ("tokenizer", tokenizer),
        ("determinism", determinism),
        ("frame sampling", frame_sampling),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2}s): {why}");
            }
        }
    }
    match export_parity() {
        Ok(Some(detail)) => println!("PASS  export parity: {detail}"),
        Ok(None) => println!("SKIP  export parity: MOBMOD_BUNDLE not set"),
        Err(why) => {
            failed += 1;
            println!("FAIL  export parity: {why}");
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
