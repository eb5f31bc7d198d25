//! Perplexity, distinct-n and Fleiss' kappa.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::parallel::{map_ordered, Exec};
use crate::seq2seq::{sequence_nll, Example, ModelParams, Seq2SeqError};

/// Fixed annotation label set: 0, +1, +2.
pub const CATEGORIES: usize = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no {n}-grams in the responses; distinct-{n} is undefined")]
    NoNgrams { n: usize },
    #[error("kappa is undefined: all labels fall in one category")]
    UndefinedKappa,
    #[error("annotations: {0}")]
    Annotations(String),
    #[error("perplexity needs at least one example")]
    NoExamples,
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerplexityMode {
    /// `exp(-(1/N) Σ_i log p(Y_i))` with `N` the number of responses.
    PerResponse,
    /// Total log-probability divided by the total token count (EOS included).
    PerToken,
}

/// Log-likelihood of one response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseLikelihood {
    pub log_prob: f64,
    pub tokens: usize,
}

/// Teacher-forced `log p(Y)` for every example, in input order.
pub fn response_likelihoods(
    model: &ModelParams,
    examples: &[Example],
    exec: Exec,
) -> Result<Vec<ResponseLikelihood>, EvalError> {
    map_ordered(exec, examples, |ex| {
        sequence_nll(model, &ex.message, &ex.response, &ex.topics).map(|nll| ResponseLikelihood {
            log_prob: -nll,
            tokens: ex.response.len(),
        })
    })
    .into_iter()
    .map(|r| r.map_err(EvalError::from))
    .collect()
}

/// Perplexity from per-response likelihoods. A zero-probability response
/// yields `f64::INFINITY`.
pub fn perplexity_from(likelihoods: &[ResponseLikelihood], mode: PerplexityMode) -> Result<f64, EvalError> {
    if likelihoods.is_empty() {
        return Err(EvalError::NoExamples);
    }
    let total: f64 = likelihoods.iter().map(|l| l.log_prob).sum();
    let n = match mode {
        PerplexityMode::PerResponse => likelihoods.len(),
        PerplexityMode::PerToken => likelihoods.iter().map(|l| l.tokens).sum(),
    };
    if total == f64::NEG_INFINITY || total.is_nan() {
        return Ok(f64::INFINITY);
    }
    Ok((-total / n as f64).exp())
}

pub fn perplexity(model: &ModelParams, examples: &[Example], mode: PerplexityMode, exec: Exec) -> Result<f64, EvalError> {
    perplexity_from(&response_likelihoods(model, examples, exec)?, mode)
}

/// Both perplexity modes over one evaluation set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perplexity {
    pub per_response: f64,
    pub per_token: f64,
}

impl Perplexity {
    pub fn compute(model: &ModelParams, examples: &[Example], exec: Exec) -> Result<Self, EvalError> {
        let l = response_likelihoods(model, examples, exec)?;
        Ok(Self {
            per_response: perplexity_from(&l, PerplexityMode::PerResponse)?,
            per_token: perplexity_from(&l, PerplexityMode::PerToken)?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.per_response.is_finite() && self.per_token.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distinct {
    pub count: usize,
    pub ratio: f64,
}

/// Distinct n-grams pooled over all responses, and their share of all n-gram
/// occurrences.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> Result<Distinct, EvalError> {
    if n == 0 {
        return Err(EvalError::NoNgrams { n });
    }
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
        for w in toks.windows(n) {
            total += 1;
            seen.insert(w.to_vec());
        }
    }
    if total == 0 {
        return Err(EvalError::NoNgrams { n });
    }
    Ok(Distinct {
        count: seen.len(),
        ratio: seen.len() as f64 / total as f64,
    })
}

/// Items × raters matrix of labels in `0..CATEGORIES`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationSet {
    labels: Vec<Vec<u8>>,
}

impl AnnotationSet {
    pub fn new(labels: Vec<Vec<u8>>) -> Result<Self, EvalError> {
        let raters = labels.first().map_or(0, Vec::len);
        if labels.is_empty() {
            return Err(EvalError::Annotations("no items".into()));
        }
        if raters < 2 {
            return Err(EvalError::Annotations("need at least two raters".into()));
        }
        if labels.iter().any(|row| row.len() != raters) {
            return Err(EvalError::Annotations("every item needs a label from every rater".into()));
        }
        if labels.iter().flatten().any(|&l| l as usize >= CATEGORIES) {
            return Err(EvalError::Annotations(format!("labels must be in 0..{CATEGORIES}")));
        }
        Ok(Self { labels })
    }

    /// Tab-separated: one item per line, one column per rater.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split('\t')
                .map(|f| f.trim().trim_start_matches('+').parse::<u8>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EvalError::Annotations(format!("line {}: {e}", i + 1)))?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn items(&self) -> usize {
        self.labels.len()
    }

    pub fn raters(&self) -> usize {
        self.labels[0].len()
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }
}

/// `κ = (P̄ − P̄_e) / (1 − P̄_e)` over the fixed category set.
pub fn fleiss_kappa(a: &AnnotationSet) -> Result<f64, EvalError> {
    let n = a.raters() as f64;
    let items = a.items() as f64;
    let mut category_totals = [0.0; CATEGORIES];
    let mut p_bar = 0.0;
    for row in a.labels() {
        let mut counts = [0.0; CATEGORIES];
        for &l in row {
            counts[l as usize] += 1.0;
        }
        let agree: f64 = counts.iter().map(|c| c * (c - 1.0)).sum();
        p_bar += agree / (n * (n - 1.0));
        for (t, c) in category_totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    p_bar /= items;
    let p_e: f64 = category_totals.iter().map(|t| (t / (items * n)).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(EvalError::UndefinedKappa);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// The automatic-metric report: validation and test perplexity in both
/// modes, distinct-1/2, and kappa when annotations were supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ppl_d: Option<Perplexity>,
    pub ppl_t: Perplexity,
    pub distinct1: Distinct,
    pub distinct2: Distinct,
    pub kappa: Option<f64>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let fmt_ppl = |p: Option<&Perplexity>| match p {
            Some(p) => (format!("{:.2}", p.per_response), format!("{:.2}", p.per_token)),
            None => ("-".into(), "-".into()),
        };
        let (d_resp, d_tok) = fmt_ppl(self.ppl_d.as_ref());
        let (t_resp, t_tok) = fmt_ppl(Some(&self.ppl_t));
        let _ = writeln!(s, "{:<12}{:>14}{:>14}", "", "per-response", "per-token");
        let _ = writeln!(s, "{:<12}{:>14}{:>14}", "PPL-D", d_resp, d_tok);
        let _ = writeln!(s, "{:<12}{:>14}{:>14}", "PPL-T", t_resp, t_tok);
        let _ = writeln!(
            s,
            "{:<12}{:>14}",
            "distinct-1",
            format!("{}/{:.3}", self.distinct1.count, self.distinct1.ratio)
        );
        let _ = writeln!(
            s,
            "{:<12}{:>14}",
            "distinct-2",
            format!("{}/{:.3}", self.distinct2.count, self.distinct2.ratio)
        );
        if let Some(k) = self.kappa {
            let _ = writeln!(s, "{:<12}{:>14.4}", "kappa", k);
        }
        s
    }

    /// `key=value` lines with full precision.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        if let Some(p) = &self.ppl_d {
            let _ = writeln!(s, "ppl_d={}", p.per_response);
            let _ = writeln!(s, "ppl_d_token={}", p.per_token);
        }
        let _ = writeln!(s, "ppl_t={}", self.ppl_t.per_response);
        let _ = writeln!(s, "ppl_t_token={}", self.ppl_t.per_token);
        let _ = writeln!(s, "distinct1_count={}", self.distinct1.count);
        let _ = writeln!(s, "distinct1_ratio={}", self.distinct1.ratio);
        let _ = writeln!(s, "distinct2_count={}", self.distinct2.count);
        let _ = writeln!(s, "distinct2_ratio={}", self.distinct2.ratio);
        if let Some(k) = self.kappa {
            let _ = writeln!(s, "kappa={k}");
        }
        s
    }
}
