//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use essay_scoring::corpus::{self, Corpus, LabeledDocument, SplitSpec};
use essay_scoring::metrics::{self, format_score, round_half_up, ConfusionMatrix};
use essay_scoring::rng::SplitMix64;
use essay_scoring::transformer::{self, lr_at, num_train_steps, ratio_class_weights, TrainConfig, TransformerConfig};
use essay_scoring::triage::{self, TriageItem};
use essay_scoring::wordpiece::{self, Vocabulary};
use essay_scoring::{bow, logreg, ClassWeights};

type Outcome = Result<(), Vec<String>>;

struct Checks(Vec<String>);

impl Checks {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.0.push(what.into());
        }
    }

    fn within(&mut self, start: Instant, limit: Duration) {
        let elapsed = start.elapsed();
        self.check(elapsed < limit, format!("runtime {elapsed:.2?} exceeds {limit:?}"));
    }

    fn finish(self) -> Outcome {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(self.0)
        }
    }
}

fn table_row(cm: [[u64; 2]; 2]) -> [String; 4] {
    let m = metrics::metrics_from_confusion(&ConfusionMatrix::new(cm).unwrap()).unwrap();
    [
        format_score(Some(m.accuracy)),
        format_score(m.f1),
        format_score(m.roc_auc_labels),
        format_score(m.kappa),
    ]
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::new();
    for (name, cm, expected) in [
        ("regression", [[31, 15], [87, 494]], [".84", ".91", ".76", ".30"]),
        ("large transformer", [[32, 14], [24, 557]], [".94", ".97", ".82", ".59"]),
    ] {
        let got = table_row(cm);
        for (label, (g, e)) in ["accuracy", "f1", "roc auc", "kappa"].iter().zip(got.iter().zip(expected)) {
            c.check(g == e, format!("{name} {label}: rendered {g}, expected {e}"));
        }
    }
    let cm = [[29, 17], [35, 546]];
    let got = table_row(cm);
    c.check(got[0] == ".92", format!("small transformer accuracy {}", got[0]));
    c.check(got[1] == ".95", format!("small transformer f1 {}", got[1]));
    let m = metrics::metrics_from_confusion(&ConfusionMatrix::new(cm).unwrap()).unwrap();
    let auc = round_half_up(m.roc_auc_labels.unwrap(), 3);
    let kappa = round_half_up(m.kappa.unwrap(), 3);
    c.check(auc == 0.785, format!("small transformer roc auc {auc}, expected .785"));
    c.check(kappa == 0.483, format!("small transformer kappa {kappa}, expected .483"));
    c.within(start, Duration::from_secs(1));
    c.finish()
}

fn numbered_corpus(n: usize) -> Corpus {
    let docs = (0..n)
        .map(|i| LabeledDocument::new(format!("d{i}"), format!("text {i}"), (i % 2) as u8, i + 1).unwrap())
        .collect();
    Corpus::new(docs).unwrap()
}

fn ids(c: &Corpus) -> Vec<String> {
    c.documents().iter().map(|d| d.id.clone()).collect()
}

fn split_sizing() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::new();
    let full = numbered_corpus(2088);
    for seed in [0, 1, 42, 2021, u64::MAX] {
        let (train, test) = corpus::split(&full, &SplitSpec { test_fraction: 0.30, seed }).unwrap();
        c.check(
            test.len() == 627 && train.len() == 1461,
            format!("seed {seed}: {} test / {} train", test.len(), train.len()),
        );
    }
    let mut rng = SplitMix64::new(2088);
    for _ in 0..100 {
        let n = 1 + rng.below(3000) as usize;
        let seed = rng.next_u64();
        let corpus = numbered_corpus(n);
        let spec = SplitSpec { test_fraction: 0.30, seed };
        let (train, test) = corpus::split(&corpus, &spec).unwrap();
        // ceil(3n / 10) in integers
        let expected_test = (3 * n).div_ceil(10);
        c.check(test.len() == expected_test, format!("n {n}: test size {} vs {expected_test}", test.len()));
        let train_ids: BTreeSet<String> = ids(&train).into_iter().collect();
        let test_ids: BTreeSet<String> = ids(&test).into_iter().collect();
        let all: BTreeSet<String> = ids(&corpus).into_iter().collect();
        c.check(train_ids.is_disjoint(&test_ids), format!("n {n} seed {seed}: sides overlap"));
        c.check(
            train_ids.union(&test_ids).cloned().collect::<BTreeSet<_>>() == all,
            format!("n {n} seed {seed}: union is not the corpus"),
        );
        let again = corpus::split(&corpus, &spec).unwrap();
        c.check(again == (train, test), format!("n {n} seed {seed}: rerun differs"));
    }
    c.within(start, Duration::from_secs(1));
    c.finish()
}

fn schedule_arithmetic() -> Outcome {
    let mut c = Checks::new();
    let cfg = TrainConfig::default();
    let steps = num_train_steps(1461, 8, 3);
    c.check(steps == 546, format!("steps {steps}"));
    for (step, expected) in [(0, 5e-5), (546, 0.0), (273, 2.5e-5)] {
        let lr = lr_at(step, &cfg, steps).unwrap();
        c.check(lr == expected, format!("lr_at({step}) = {lr:e}, expected {expected:e}"));
    }
    c.finish()
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::new();
    for seed in 0..10 {
        let err = common::logreg_gradient_error(seed, 1e-6);
        c.check(err < 1e-4, format!("logistic regression point {seed}: relative error {err:e}"));
        for (name, err) in common::transformer_gradient_error(seed, 1e-6) {
            c.check(err < 1e-4, format!("transformer point {seed} tensor {name}: relative error {err:e}"));
        }
    }
    c.within(start, Duration::from_secs(120));
    c.finish()
}

fn class_weight_algebra() -> Outcome {
    let mut c = Checks::new();
    let mut labels = vec![0u8; 146];
    labels.extend(vec![1u8; 1942]);
    let w = ratio_class_weights(&labels).unwrap();
    c.check((w.impolite - 13.3014).abs() <= 1e-3, format!("impolite weight {}", w.impolite));
    c.check(w.polite == 1.0, format!("polite weight {}", w.polite));

    let base = ClassWeights::new(3.7, 1.3).unwrap();
    let mut rng = SplitMix64::new(5);
    let x: Vec<Vec<f64>> = (0..30).map(|_| (0..2).map(|_| rng.symmetric(3.0)).collect()).collect();
    let y: Vec<u8> = (0..30).map(|i| u8::from(i % 4 != 0)).collect();
    let mut model = logreg::LogRegModel::zeros(2, base, logreg::LogRegHyper::default());
    model.set_params(&[0.4, -1.1, 0.3]);
    let config = common::tiny_config();
    let params = common::random_params(&config, 11);
    let batch: Vec<_> = (0..4).map(|_| common::random_encoding(&mut rng, 12, 6)).collect();
    let batch_labels = [0u8, 1, 0, 1];
    let (t_loss, t_grads) = transformer::loss_and_grads(&params, &batch, &batch_labels, &base).unwrap();
    let (l_loss, l_grad) = logreg::loss_and_grad(&model, &x, &y).unwrap();
    for factor in [2.0, 0.25, 8.0] {
        let mut scaled = model.clone();
        scaled.class_weights = base.scaled(factor);
        let (loss, grad) = logreg::loss_and_grad(&scaled, &x, &y).unwrap();
        c.check(loss == factor * l_loss, format!("logreg loss not scaled exactly by {factor}"));
        c.check(
            grad.iter().zip(&l_grad).all(|(g, b)| *g == factor * b),
            format!("logreg gradient not scaled exactly by {factor}"),
        );
        let (loss, grads) = transformer::loss_and_grads(&params, &batch, &batch_labels, &base.scaled(factor)).unwrap();
        c.check(loss == factor * t_loss, format!("transformer loss not scaled exactly by {factor}"));
        for ((name, g), (_, b)) in grads.tensors().into_iter().zip(t_grads.tensors()) {
            c.check(
                g.data().iter().zip(b.data()).all(|(g, b)| *g == factor * b),
                format!("transformer gradient {name} not scaled exactly by {factor}"),
            );
        }
    }
    c.finish()
}

fn random_text(rng: &mut SplitMix64) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'e', 'i', 'l', 'n', 'r', 'y', 'Z', 'ä', 'ß', '€', '!', ',', '.', '#', ' ', ' ', '\t', '\n', '日', 'é',
        '0', '7', '\u{301}', '-',
    ];
    let len = rng.below(60) as usize;
    (0..len).map(|_| ALPHABET[rng.below(ALPHABET.len() as u64) as usize]).collect()
}

fn tokenizer_conformance() -> Outcome {
    let mut c = Checks::new();
    let small = common::vocab_from(&["clear", "##ly", "do", "##ing"]);
    for (word, pieces) in [("clearly", ["clear", "##ly"]), ("doing", ["do", "##ing"])] {
        let got: Vec<&str> = wordpiece::encode(word, &small).iter().map(|&id| small.token(id).unwrap()).collect();
        c.check(got == pieces, format!("{word} -> {got:?}"));
    }

    let train = corpus::generate_synthetic(200, 0.1, 3).unwrap();
    let vocab = wordpiece::build_vocab(&train, 300, true).unwrap();
    let mut rng = SplitMix64::new(10_000);
    let mut failures = 0;
    for _ in 0..10_000 {
        let text = random_text(&mut rng);
        let max_len = 3 + rng.below(30) as usize;
        let enc = wordpiece::encode_padded(&text, &vocab, max_len).unwrap();
        let mask_monotone = enc.attention_mask.windows(2).all(|w| w[0] >= w[1]);
        if enc.validate(&vocab).is_err() || !mask_monotone || enc.ids.len() != max_len {
            failures += 1;
        }
    }
    c.check(failures == 0, format!("{failures} of 10000 fuzzed encodings broke the layout"));

    for doc in train.documents() {
        let normalized = wordpiece::pre_tokenize(&doc.text.to_lowercase()).join(" ");
        let ids = wordpiece::encode(&doc.text, &vocab);
        if ids.contains(&vocab.unk_id()) {
            c.check(false, format!("{} is not fully encodable", doc.id));
            continue;
        }
        let decoded = wordpiece::decode(&ids, &vocab).unwrap();
        c.check(decoded == normalized, format!("{}: decode(encode) = {decoded:?}", doc.id));
    }
    c.finish()
}

fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary, max_len: usize) -> Vec<wordpiece::Encoding> {
    corpus
        .texts()
        .iter()
        .map(|t| wordpiece::encode_padded(t, vocab, max_len).unwrap())
        .collect()
}

fn kappa(truth: &[u8], predicted: &[u8]) -> Option<f64> {
    metrics::metrics_from_confusion(&metrics::confusion(truth, predicted).unwrap())
        .unwrap()
        .kappa
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::new();
    let corpus = corpus::generate_synthetic(2000, 0.075, 42).unwrap();
    let (train, test) = corpus::split(&corpus, &SplitSpec::default()).unwrap();
    let (y_train, y_test) = (train.labels(), test.labels());

    let pre = bow::PreprocessConfig::default();
    let freqs = bow::build_freqs(&train, &pre);
    let x_train = bow::feature_matrix(&train, &freqs, &pre);
    let x_test = bow::feature_matrix(&test, &freqs, &pre);
    let weights = logreg::balanced_class_weights(&y_train).unwrap();
    let model = logreg::train(&x_train, &y_train, weights, logreg::LogRegHyper::default()).unwrap();
    let bow_kappa = kappa(&y_test, &logreg::predict(&model, &x_test).unwrap());
    c.check(bow_kappa.is_some_and(|k| k >= 0.5), format!("bag-of-words test kappa {bow_kappa:?}"));

    let vocab = wordpiece::build_vocab(&train, 1000, true).unwrap();
    let config = TransformerConfig::desk_scale(vocab.len());
    let enc_train = encode_corpus(&train, &vocab, config.max_len);
    let enc_test = encode_corpus(&test, &vocab, config.max_len);
    let class_weights = ratio_class_weights(&y_train).unwrap();
    let (params, log) =
        transformer::train(&enc_train, &y_train, &config, &TrainConfig::default(), &class_weights).unwrap();
    let labels = |enc: &[wordpiece::Encoding]| -> Vec<u8> {
        transformer::predict(&params, enc).unwrap().iter().map(|p| p.label).collect()
    };
    let train_pred = labels(&enc_train);
    let train_acc = train_pred.iter().zip(&y_train).filter(|(a, b)| a == b).count() as f64 / y_train.len() as f64;
    c.check(train_acc >= 0.95, format!("transformer training accuracy {train_acc:.4}"));
    let test_kappa = kappa(&y_test, &labels(&enc_test));
    c.check(test_kappa.is_some_and(|k| k >= 0.6), format!("transformer test kappa {test_kappa:?}"));
    let first = transformer::TrainLog::mean_loss(&log.entries[..10]);
    let last = transformer::TrainLog::mean_loss(&log.entries[log.entries.len() - 10..]);
    c.check(first > last, format!("loss did not fall: first {first:.4}, last {last:.4}"));
    c.within(start, Duration::from_secs(300));
    c.finish()
}

fn triage_arithmetic() -> Outcome {
    let mut c = Checks::new();
    let mut rng = SplitMix64::new(627);
    for set in 0..100 {
        let n = 1 + rng.below(200) as usize;
        let items: Vec<TriageItem> = (0..n)
            .map(|i| TriageItem {
                id: format!("r{i}"),
                predicted: rng.below(2) as u8,
                // coarse grid so that ties with the threshold occur
                probability: 0.5 + rng.below(51) as f64 / 100.0,
                human: (rng.below(4) != 0).then(|| rng.below(2) as u8),
            })
            .collect();
        let mut taus: Vec<f64> = (0..6).map(|_| rng.below(101) as f64 / 100.0).collect();
        taus.sort_by(f64::total_cmp);
        let mut last_coverage = f64::INFINITY;
        for &tau in &taus {
            let r = triage::run_triage(&items, tau).unwrap();
            c.check(r.auto_count + r.review_count == n, format!("set {set} tau {tau}: conservation"));
            c.check(r.coverage <= last_coverage, format!("set {set} tau {tau}: coverage increased"));
            last_coverage = r.coverage;
            c.check(
                r.auto.iter().all(|i| i.probability >= tau) && r.review.iter().all(|i| i.probability < tau),
                format!("set {set} tau {tau}: partition violates threshold"),
            );
            let disagreements = r.auto.iter().filter(|i| i.human.is_some_and(|h| h != i.predicted)).count();
            c.check(
                r.disagreement_count() == disagreements
                    && r.machine_polite.iter().all(|i| i.predicted == 1)
                    && r.machine_impolite.iter().all(|i| i.predicted == 0),
                format!("set {set} tau {tau}: direction split"),
            );
            if let Ok(d) = triage::disagreement_digest(&r) {
                c.check(
                    (d.residual - (1.0 - r.coverage)).abs() < 1e-15,
                    format!("set {set} tau {tau}: residual"),
                );
            }
            let again = triage::run_triage(&r.auto, tau).unwrap();
            c.check(again.auto == r.auto && again.review.is_empty(), format!("set {set} tau {tau}: not idempotent"));
        }
    }

    let items: Vec<TriageItem> = (0..627)
        .map(|i| {
            let confident = i < 554;
            let (predicted, human) = match i {
                0..=5 => (1, 0),
                6..=10 => (0, 1),
                _ => (1, 1),
            };
            TriageItem {
                id: format!("t{i}"),
                predicted,
                probability: if confident { 0.97 } else { 0.8 },
                human: Some(human),
            }
        })
        .collect();
    let r = triage::run_triage(&items, 0.95).unwrap();
    let d = triage::disagreement_digest(&r).unwrap();
    c.check(r.auto_count == 554, format!("auto count {}", r.auto_count));
    c.check(d.coverage_display == "88.3%", format!("coverage displayed as {}", d.coverage_display));
    c.check(d.residual_display == "11.7%", format!("residual displayed as {}", d.residual_display));
    c.check(d.direction_counts() == (6, 5), format!("direction counts {:?}", d.direction_counts()));
    c.finish()
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_essay-score"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(
        dir.join("confusion.json"),
        r#"[{"model": "a", "matrix": [[31, 15], [87, 494]]}, {"model": "b", "matrix": [[32, 14], [24, 557]]}]"#,
    )
    .map_err(|e| e.to_string())?;
    let steps: &[&[&str]] = &[
        &["synth", "--n-docs", "600"],
        &["stats", "--corpus", "corpus.csv"],
        &["split", "--corpus", "corpus.csv"],
        &["build-vocab", "--corpus", "split.train.csv", "--vocab-size", "400"],
        &["-o", "bow", "train", "--model", "bow", "--corpus", "split.train.csv"],
        &["-o", "bow", "eval", "--model", "bow/model.json", "--corpus", "split.test.csv"],
        &["-o", "bow", "triage", "--predictions", "bow/predictions.csv", "--corpus", "split.test.csv"],
        &["-o", "tf", "train", "--model", "transformer", "--corpus", "split.train.csv", "--vocab", "vocab.txt"],
        &["-o", "tf", "eval", "--model", "tf/model.bin", "--corpus", "split.test.csv"],
        &["-o", "tf", "triage", "--predictions", "tf/predictions.csv"],
        &["-o", "conf", "eval", "--confusion", "confusion.json"],
        &["report", "bow/eval.json", "tf/eval.json", "conf/eval.json"],
    ];
    for args in steps {
        run_cli(dir, args)?;
    }
    Ok(())
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli_determinism() -> Outcome {
    let mut c = Checks::new();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    for dir in [first.path(), second.path()] {
        if let Err(e) = pipeline(dir) {
            c.check(false, e);
            return c.finish();
        }
    }
    let (a, b) = (files(first.path()), files(second.path()));
    let names = |f: &[(String, Vec<u8>)]| f.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    c.check(names(&a) == names(&b), "reruns produced different file sets");
    c.check(a.len() >= 20, format!("only {} artifacts written", a.len()));
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        c.check(x == y, format!("{name} differs between reruns"));
    }
    c.finish()
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle on reported confusion matrices", metric_oracle),
        ("split sizing and partition", split_sizing),
        ("scheduler and step arithmetic", schedule_arithmetic),
        ("finite-difference gradient checks", gradient_checks),
        ("class-weight algebra", class_weight_algebra),
        ("tokenizer conformance", tokenizer_conformance),
        ("end-to-end desk-scale run", end_to_end),
        ("triage arithmetic", triage_arithmetic),
        ("CLI determinism", cli_determinism),
    ];
    let mut stderr = std::io::stderr();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        match outcome {
            Ok(()) => {
                let _ = writeln!(stderr, "criterion {} {name}: PASS ({elapsed:.2?})", i + 1);
            }
            Err(reasons) => {
                failed += 1;
                let _ = writeln!(stderr, "criterion {} {name}: FAIL ({elapsed:.2?})", i + 1);
                for r in reasons.iter().take(10) {
                    let _ = writeln!(stderr, "    {r}");
                }
                if reasons.len() > 10 {
                    let _ = writeln!(stderr, "    ... {} more", reasons.len() - 10);
                }
            }
        }
    }
    let _ = writeln!(stderr, "acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
