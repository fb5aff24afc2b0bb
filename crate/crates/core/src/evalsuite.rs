//! Evaluation metrics and the intent-bias audit.
//!
//! BLEU is sentence-level up to 4-grams with add-one smoothing of the n-gram
//! precisions for `n >= 2`; precision/recall follow the one-to-many protocol
//! (best reference per sample, best sample per reference). KL divergences are
//! reported as `KL(model || human)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array1;

use crate::corpus::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::intent_classifier::IntentRecognizer;
use crate::labels::{IntentLabel, NUM_INTENTS};
use crate::model::{EmphiModel, IntentDistribution};
use crate::rng::{self, Stream};

pub const BLEU_MAX_N: usize = 4;
/// Mass added to every bin of the denominator distribution when it has an
/// empty bin where the numerator does not.
pub const KL_EPSILON: f64 = 1e-6;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU of `hypothesis` against one `reference`.
pub fn bleu(hypothesis: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_N {
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let total: usize = hyp.values().sum();
        let matched: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            if matched == 0 {
                return Ok(0.0);
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln() / BLEU_MAX_N as f64;
    }
    let (c, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((bp * log_sum.exp()).clamp(0.0, 1.0))
}

/// Harmonic mean, 0 when either side is 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision <= 0.0 || recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// BLEU precision, recall and F1 of a sample set against a reference set.
pub fn bleu_prf(samples: &[Vec<String>], references: &[Vec<String>]) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if references.is_empty() {
        return Err(Error::Empty("references"));
    }
    let mut scores = vec![vec![0.0; references.len()]; samples.len()];
    for (i, s) in samples.iter().enumerate() {
        for (j, r) in references.iter().enumerate() {
            scores[i][j] = bleu(s, r)?;
        }
    }
    let precision = scores
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / samples.len() as f64;
    let recall = (0..references.len())
        .map(|j| scores.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / references.len() as f64;
    Ok((precision, recall, f1(precision, recall)))
}

/// Distinct n-grams over total n-gram occurrences across `responses`.
pub fn distinct_n(responses: &[Vec<String>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let mut seen: HashMap<&[String], ()> = HashMap::new();
    let mut total = 0usize;
    for r in responses {
        if r.len() >= n {
            for w in r.windows(n) {
                total += 1;
                seen.insert(w, ());
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("n-grams"));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Normalized histogram of recognized intents.
pub fn intent_distribution(
    responses: &[Vec<String>],
    recognizer: &dyn IntentRecognizer,
) -> Result<IntentDistribution> {
    if responses.is_empty() {
        return Err(Error::Empty("responses"));
    }
    let mut counts = [0usize; NUM_INTENTS];
    for r in responses {
        if r.is_empty() {
            // an empty generation carries no intent signal; count it Neutral
            counts[IntentLabel::from_name("Neutral")?.id()] += 1;
        } else {
            counts[recognizer.recognize_tokens(r)?.id()] += 1;
        }
    }
    Ok(histogram(&counts))
}

fn histogram(counts: &[usize; NUM_INTENTS]) -> IntentDistribution {
    let n: usize = counts.iter().sum();
    IntentDistribution(Array1::from_iter(
        counts.iter().map(|&c| c as f64 / n as f64),
    ))
}

/// `sum_k p_k ln(p_k / q_k)` with `0 ln 0 = 0`. If `q` has an empty bin
/// where `p` does not, `q` is first smoothed with `KL_EPSILON` per bin and
/// renormalized.
pub fn kl_divergence(p: &IntentDistribution, q: &IntentDistribution) -> f64 {
    let needs_smoothing = p.0.iter().zip(&q.0).any(|(&pk, &qk)| pk > 0.0 && qk <= 0.0);
    let q: Array1<f64> = if needs_smoothing {
        let z = 1.0 + KL_EPSILON * q.0.len() as f64;
        q.0.mapv(|x| (x + KL_EPSILON) / z)
    } else {
        q.0.clone()
    };
    p.0.iter()
        .zip(&q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk / qk).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Responses grouped per test context. A file without blank lines has one
/// response per line; otherwise blank lines separate groups of samples.
pub fn parse_responses(text: &str) -> Vec<Vec<Vec<String>>> {
    let lines: Vec<&str> = text.lines().collect();
    let grouped = lines.iter().any(|l| l.trim().is_empty())
        && lines.iter().filter(|l| !l.trim().is_empty()).count() > 0;
    if !grouped {
        return lines.iter().map(|l| vec![tokenize(l)]).collect();
    }
    let mut groups = Vec::new();
    let mut current = Vec::new();
    for l in lines {
        if l.trim().is_empty() {
            if !current.is_empty() {
                groups.push(std::mem::take(&mut current));
            }
        } else {
            current.push(tokenize(l));
        }
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

pub fn read_responses(path: &Path) -> Result<Vec<Vec<Vec<String>>>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_responses(&text))
}

/// Writes groups in the response-file format.
pub fn format_responses(groups: &[Vec<Vec<String>>]) -> String {
    let grouped = groups.iter().any(|g| g.len() != 1);
    let mut out = String::new();
    for (i, g) in groups.iter().enumerate() {
        if grouped && i > 0 {
            out.push('\n');
        }
        for r in g {
            out.push_str(&r.join(" "));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub kl: f64,
    pub model: IntentDistribution,
    pub human: IntentDistribution,
    /// Test contexts compared (the shorter of the two files).
    pub contexts: usize,
    pub mismatched: bool,
}

impl AuditReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "kl_direction: model||human").unwrap();
        writeln!(out, "kl: {:.6}", self.kl).unwrap();
        writeln!(out, "contexts: {}", self.contexts).unwrap();
        out.push_str(&histogram_table(&[
            ("model", &self.model),
            ("human", &self.human),
        ]));
        out
    }
}

/// Intent histograms of both response sets and `KL(model || human)`. If the
/// files disagree in length, only the common prefix of contexts is used.
pub fn audit_bias(
    model_responses: &[Vec<Vec<String>>],
    human_responses: &[Vec<Vec<String>>],
    recognizer: &dyn IntentRecognizer,
) -> Result<AuditReport> {
    let n = model_responses.len().min(human_responses.len());
    let mismatched = model_responses.len() != human_responses.len();
    if mismatched {
        log::warn!(
            "response files differ in length ({} vs {}); using the first {n} contexts",
            model_responses.len(),
            human_responses.len()
        );
    }
    let flat = |groups: &[Vec<Vec<String>>]| -> Vec<Vec<String>> {
        groups[..n].iter().flatten().cloned().collect()
    };
    let model = intent_distribution(&flat(model_responses), recognizer)?;
    let human = intent_distribution(&flat(human_responses), recognizer)?;
    Ok(AuditReport {
        kl: kl_divergence(&model, &human),
        model,
        human,
        contexts: n,
        mismatched,
    })
}

/// Per-intent table with one column per named distribution.
pub fn histogram_table(columns: &[(&str, &IntentDistribution)]) -> String {
    let mut out = format!("{:<14}", "intent");
    for (name, _) in columns {
        write!(out, " {name:>10}").unwrap();
    }
    out.push('\n');
    for intent in IntentLabel::all() {
        write!(out, "{:<14}", intent.name()).unwrap();
        for (_, d) in columns {
            write!(out, " {:>10.4}", d.0[intent.id()]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// A model that can be asked for intent-conditioned responses.
pub trait ConditionalGenerator {
    fn intent_prior(&self, context: &[usize]) -> Result<IntentDistribution>;
    /// One greedy response per requested intent.
    fn respond(&self, context: &[usize], intents: &[IntentLabel]) -> Result<Vec<Vec<String>>>;
}

/// Greedy decoding with the model's own emotion prediction.
pub struct ModelGenerator<'a> {
    pub model: &'a EmphiModel,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
}

impl ConditionalGenerator for ModelGenerator<'_> {
    fn intent_prior(&self, context: &[usize]) -> Result<IntentDistribution> {
        let enc = self.model.encode_context(context)?;
        Ok(self.model.prior_intent(&enc.final_state))
    }

    fn respond(&self, context: &[usize], intents: &[IntentLabel]) -> Result<Vec<Vec<String>>> {
        let enc = self.model.encode_context(context)?;
        let emotion = self.model.classify_emotion(&enc.final_state).argmax();
        let emotions = vec![emotion; intents.len()];
        self.model
            .greedy_batch(&enc, intents, &emotions, self.max_len)?
            .iter()
            .map(|ids| self.vocab.decode_clean(ids))
            .collect()
    }
}

/// One test context with its human response.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub context: Vec<usize>,
    pub reference: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cases: usize,
    pub samples: usize,
    pub bleu_precision: f64,
    pub bleu_recall: f64,
    pub bleu_f1: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub intent_histogram: IntentDistribution,
    pub human_histogram: IntentDistribution,
    pub kl_vs_human: f64,
    pub intent_acc: f64,
    /// Generated responses, one group per case.
    pub responses: Vec<Vec<Vec<String>>>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let lines: [(&str, String); 12] = [
            ("bleu_smoothing", "add-one for n>=2, n<=4".into()),
            ("kl_direction", "model||human".into()),
            ("cases", self.cases.to_string()),
            ("samples", self.samples.to_string()),
            ("bleu_precision", format!("{:.6}", self.bleu_precision)),
            ("bleu_recall", format!("{:.6}", self.bleu_recall)),
            ("bleu_f1", format!("{:.6}", self.bleu_f1)),
            ("distinct_1", format!("{:.6}", self.distinct_1)),
            ("distinct_2", format!("{:.6}", self.distinct_2)),
            ("kl_vs_human", format!("{:.6}", self.kl_vs_human)),
            ("intent_acc", format!("{:.6}", self.intent_acc)),
            ("histogram", String::new()),
        ];
        for (k, v) in lines {
            if v.is_empty() {
                writeln!(out, "{k}:").unwrap();
            } else {
                writeln!(out, "{k}: {v}").unwrap();
            }
        }
        out.push_str(&histogram_table(&[
            ("model", &self.intent_histogram),
            ("human", &self.human_histogram),
        ]));
        out
    }
}

/// Fraction of cases where the response generated for the first sampled
/// intent is recognized as that intent.
pub fn intent_acc(
    generator: &dyn ConditionalGenerator,
    recognizer: &dyn IntentRecognizer,
    contexts: &[Vec<usize>],
    seed: u64,
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::Empty("test contexts"));
    }
    let mut hits = 0usize;
    for (i, ctx) in contexts.iter().enumerate() {
        let z = generator.intent_prior(ctx)?.sample(&mut rng::substream(
            seed,
            Stream::IntentSampling,
            i as u32,
        ));
        let out = generator.respond(ctx, &[z])?.remove(0);
        hits += usize::from(!out.is_empty() && recognizer.recognize_tokens(&out)? == z);
    }
    Ok(hits as f64 / contexts.len() as f64)
}

/// Full evaluation: `samples` intents drawn from the prior per case, one
/// greedy response each. The first sample of each case doubles as the
/// intent-accuracy probe.
pub fn evaluate(
    generator: &dyn ConditionalGenerator,
    recognizer: &dyn IntentRecognizer,
    cases: &[EvalCase],
    samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::Empty("test cases"));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let mut responses = Vec::with_capacity(cases.len());
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    let mut hits = 0usize;
    for (i, case) in cases.iter().enumerate() {
        let prior = generator.intent_prior(&case.context)?;
        let mut rng = rng::substream(seed, Stream::IntentSampling, i as u32);
        let intents: Vec<IntentLabel> = (0..samples).map(|_| prior.sample(&mut rng)).collect();
        let outs = generator.respond(&case.context, &intents)?;
        let (p, r, _) = bleu_prf(&outs, std::slice::from_ref(&case.reference))?;
        p_sum += p;
        r_sum += r;
        if !outs[0].is_empty() && recognizer.recognize_tokens(&outs[0])? == intents[0] {
            hits += 1;
        }
        responses.push(outs);
    }
    let n = cases.len() as f64;
    let flat: Vec<Vec<String>> = responses.iter().flatten().cloned().collect();
    let humans: Vec<Vec<String>> = cases.iter().map(|c| c.reference.clone()).collect();
    let intent_histogram = intent_distribution(&flat, recognizer)?;
    let human_histogram = intent_distribution(&humans, recognizer)?;
    let (bleu_precision, bleu_recall) = (p_sum / n, r_sum / n);
    Ok(EvalReport {
        cases: cases.len(),
        samples,
        bleu_precision,
        bleu_recall,
        bleu_f1: f1(bleu_precision, bleu_recall),
        distinct_1: distinct_n(&flat, 1).unwrap_or(0.0),
        distinct_2: distinct_n(&flat, 2).unwrap_or(0.0),
        kl_vs_human: kl_divergence(&intent_histogram, &human_histogram),
        intent_histogram,
        human_histogram,
        intent_acc: hits as f64 / n,
        responses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{canonical_response, CoreOracle};
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn dist(p: &[f64]) -> IntentDistribution {
        IntentDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn bleu_identity_and_prefix() {
        let x = toks("i am so happy for you");
        assert!((bleu(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        // every smoothed precision is 1 and only the brevity penalty remains
        let v = bleu(&toks("the cat sat"), &toks("the cat sat on the mat")).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn bleu_hand_computed_partial_overlap() {
        // hyp 5 tokens, ref 4 tokens: p1 = 3/5, p2 = (1+1)/(4+1), p3 = 1/4, p4 = 1/3
        let v = bleu(&toks("the dog sat on grass"), &toks("the dog ran on")).unwrap();
        let expected = (0.6f64 * 0.4 * 0.25 * (1.0 / 3.0)).powf(0.25);
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
    }

    #[test]
    fn bleu_edge_cases() {
        assert_eq!(bleu(&[], &toks("a b")).unwrap(), 0.0);
        assert!(matches!(bleu(&toks("a"), &[]), Err(Error::Empty(_))));
        let v = bleu(&toks("x y z"), &toks("a b c d")).unwrap();
        assert!(v < 0.05);
    }

    #[test]
    fn prf_protocol() {
        let x = toks("i am sorry to hear that");
        assert_eq!(
            bleu_prf(std::slice::from_ref(&x), std::slice::from_ref(&x)).unwrap(),
            (1.0, 1.0, 1.0)
        );
        let junk: Vec<Vec<String>> = ["sorry that", "what a day it was", "hmm", "i see"]
            .iter()
            .map(|s| toks(s))
            .collect();
        let mut samples = vec![x.clone()];
        samples.extend(junk.iter().cloned());
        let (p, r, f) = bleu_prf(&samples, std::slice::from_ref(&x)).unwrap();
        let junk_sum: f64 = junk.iter().map(|j| bleu(j, &x).unwrap()).sum();
        assert_eq!(r, 1.0);
        assert!((p - (1.0 + junk_sum) / 5.0).abs() < 1e-12);
        assert!(p < 1.0);
        assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
        assert!(bleu_prf(&[], &[x]).is_err());
        assert_eq!(f1(0.0, 1.0), 0.0);
    }

    #[test]
    fn distinct_counts() {
        let r = vec![toks("i am sad"), toks("i am happy")];
        assert_eq!(distinct_n(&r, 1).unwrap(), 4.0 / 6.0);
        assert_eq!(distinct_n(&r, 2).unwrap(), 3.0 / 4.0);
        assert_eq!(distinct_n(&[toks("a b"), toks("a b")], 1).unwrap(), 0.5);
        assert!(matches!(distinct_n(&[toks("a")], 2), Err(Error::Empty(_))));
        assert_eq!(distinct_n(&[toks("a b c")], 1).unwrap(), 1.0);
    }

    #[test]
    fn kl_values() {
        let mut p = vec![0.0; 9];
        p[0] = 0.5;
        p[1] = 0.5;
        let mut q = vec![0.0; 9];
        q[0] = 0.25;
        q[1] = 0.75;
        let direct = 0.5 * 2f64.ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kl_divergence(&dist(&p), &dist(&q)) - direct).abs() < 1e-9);
        assert!((direct - 0.14384).abs() < 1e-5);
        let mut one = vec![0.0; 9];
        one[4] = 1.0;
        let v = kl_divergence(&dist(&one), &IntentDistribution::uniform());
        assert!((v - 9f64.ln()).abs() < 1e-9);
        assert_eq!(kl_divergence(&dist(&p), &dist(&p)), 0.0);
        // an empty model bin where the reference has mass stays finite
        let w = kl_divergence(&dist(&one), &dist(&p));
        assert!(w.is_finite() && w > 5.0);
    }

    proptest! {
        #[test]
        fn bleu_self_is_one(words in proptest::collection::vec("[a-e]{1,3}", 4..20)) {
            prop_assert!((bleu(&words, &words).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bleu_in_unit_interval(a in proptest::collection::vec("[a-c]", 0..12), b in proptest::collection::vec("[a-c]", 1..12)) {
            let v = bleu(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn kl_self_is_zero_and_nonnegative(raw in proptest::collection::vec(0.0f64..1.0, 9), raw2 in proptest::collection::vec(0.01f64..1.0, 9)) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p = IntentDistribution(Array1::from_iter(raw.iter().map(|x| (x + 1e-9 / 9.0) / s)));
            let s2: f64 = raw2.iter().sum();
            let q = IntentDistribution(Array1::from_iter(raw2.iter().map(|x| x / s2)));
            prop_assert!(kl_divergence(&p, &p).abs() < 1e-9);
            prop_assert!(kl_divergence(&p, &q) >= 0.0);
        }

        #[test]
        fn distinct_at_most_one(rs in proptest::collection::vec(proptest::collection::vec("[a-d]", 1..6), 1..6)) {
            let d = distinct_n(&rs, 1).unwrap();
            prop_assert!(d > 0.0 && d <= 1.0);
        }
    }

    #[test]
    fn intent_histograms() {
        let sorry = vec![toks("i am sorry to hear that"); 7];
        let h = intent_distribution(&sorry, &CoreOracle).unwrap();
        assert_eq!(h.0[4], 1.0);
        let canon: Vec<Vec<String>> = IntentLabel::all()
            .map(|i| tokenize(&canonical_response(i)))
            .collect();
        let u = intent_distribution(&canon, &CoreOracle).unwrap();
        assert!(u.0.iter().all(|&x| (x - 1.0 / 9.0).abs() < 1e-12));
        assert!(u.is_valid());
        assert!(intent_distribution(&[], &CoreOracle).is_err());
    }

    #[test]
    fn audit() {
        let human: Vec<Vec<Vec<String>>> = IntentLabel::all()
            .map(|i| vec![tokenize(&canonical_response(i))])
            .collect();
        let same = audit_bias(&human, &human, &CoreOracle).unwrap();
        assert_eq!(same.kl, 0.0);
        assert!(same.to_text().contains("kl: 0.000000"));
        let sorry: Vec<Vec<Vec<String>>> = vec![vec![toks("i am sorry to hear that")]; 12];
        let biased = audit_bias(&sorry, &human, &CoreOracle).unwrap();
        assert!(biased.mismatched);
        assert_eq!(biased.contexts, 9);
        assert!(biased.kl > 1.0);
        assert_eq!(biased.model.argmax().name(), "Sympathizing");
    }

    #[test]
    fn response_file_formats() {
        let single = "i am fine\nthat is great\n";
        let g = parse_responses(single);
        assert_eq!(g.len(), 2);
        assert_eq!(g[1], vec![toks("that is great")]);
        assert_eq!(format_responses(&g), single);
        let grouped = "a b\nc d\n\ne f\ng h\n";
        let g = parse_responses(grouped);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].len(), 2);
        assert_eq!(parse_responses(&format_responses(&g)), g);
    }

    struct Oracle;

    impl ConditionalGenerator for Oracle {
        fn intent_prior(&self, _: &[usize]) -> Result<IntentDistribution> {
            Ok(IntentDistribution::uniform())
        }

        fn respond(&self, _: &[usize], intents: &[IntentLabel]) -> Result<Vec<Vec<String>>> {
            Ok(intents
                .iter()
                .map(|&i| tokenize(&canonical_response(i)))
                .collect())
        }
    }

    #[test]
    fn oracle_generator_scores_perfect_accuracy() {
        let contexts = vec![vec![4, 5, 6]; 30];
        assert_eq!(intent_acc(&Oracle, &CoreOracle, &contexts, 1).unwrap(), 1.0);
        let cases: Vec<EvalCase> = (0..10)
            .map(|i| EvalCase {
                context: vec![4 + i],
                reference: tokenize(&canonical_response(IntentLabel::new(i % 9).unwrap())),
            })
            .collect();
        let a = evaluate(&Oracle, &CoreOracle, &cases, 5, 3).unwrap();
        let b = evaluate(&Oracle, &CoreOracle, &cases, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.intent_acc, 1.0);
        assert_eq!(a.responses.len(), 10);
        assert!(a.responses.iter().all(|g| g.len() == 5));
        assert!((a.bleu_f1 - f1(a.bleu_precision, a.bleu_recall)).abs() < 1e-12);
        assert!(a.bleu_recall >= a.bleu_precision);
        let text = a.to_text();
        assert!(text.contains("kl_direction: model||human"));
        assert!(text.lines().any(|l| l.starts_with("Sympathizing")));
    }
}
