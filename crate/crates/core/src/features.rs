//! Which phrases move a trait: n-gram features of free-text contexts regressed
//! onto score deltas.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::CorpusDoc;
use crate::error::{Error, Result};
use crate::item_bank::Trait;
use crate::stats::DeltaRecord;

/// Lowercased word tokens. Apostrophes survive only inside a word, so
/// "don't" stays whole while quotes and possessive tails are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        let t = current.trim_matches('\'');
        if !t.is_empty() {
            tokens.push(t.to_string());
        }
        current.clear();
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if ch == '\'' || ch == '\u{2019}' {
            current.push('\'');
        } else {
            flush(&mut current, &mut tokens);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramSpec {
    /// Which n to include, e.g. `[1, 2, 3]`.
    pub orders: Vec<usize>,
    /// Drop n-grams appearing in fewer documents than this.
    pub min_df: usize,
}

impl Default for NgramSpec {
    fn default() -> Self {
        NgramSpec {
            orders: vec![1, 2, 3],
            min_df: 1,
        }
    }
}

impl NgramSpec {
    pub fn orders(orders: &[usize]) -> NgramSpec {
        NgramSpec {
            orders: orders.to_vec(),
            ..NgramSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(Error::Config(format!(
                "n-gram orders must be positive, got {:?}",
                self.orders
            )));
        }
        Ok(())
    }

    fn ngrams(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for &n in &self.orders {
            out.extend(tokens.windows(n).map(|w| w.join(" ")));
        }
        out
    }
}

/// Sorted n-gram vocabulary; column `i` is the `i`-th term in byte order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vocabulary {
    pub spec: NgramSpec,
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, col: usize) -> &str {
        &self.terms[col]
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn doc_freq(&self, col: usize) -> usize {
        self.doc_freq[col]
    }
}

/// Compressed sparse rows of counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    /// Builds a matrix from dense rows; handy for small problems.
    pub fn from_dense(rows: &[Vec<f64>]) -> SparseMatrix {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = SparseMatrix {
            rows: rows.len(),
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.indices.push(j);
                    m.values.push(v);
                }
            }
            m.indptr.push(m.indices.len());
        }
        m
    }

    /// Column-major copy: for each column, its (row, value) entries.
    fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                cols[j].push((i, v));
            }
        }
        cols
    }
}

/// Counts n-grams per document over a vocabulary built from the same documents.
pub fn vectorize(texts: &[&str], spec: &NgramSpec) -> Result<(SparseMatrix, Vocabulary)> {
    spec.validate()?;
    if texts.is_empty() {
        return Err(Error::EmptyInput("no documents to vectorize".into()));
    }
    let counted: Vec<BTreeMap<String, usize>> = texts
        .par_iter()
        .map(|t| {
            let mut counts = BTreeMap::new();
            for g in spec.ngrams(&tokenize(t)) {
                *counts.entry(g).or_insert(0) += 1;
            }
            counts
        })
        .collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for counts in &counted {
        for g in counts.keys() {
            *df.entry(g.as_str()).or_insert(0) += 1;
        }
    }
    let kept: Vec<(&str, usize)> = df.into_iter().filter(|(_, n)| *n >= spec.min_df.max(1)).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let terms: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let index: HashMap<String, usize> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let mut m = SparseMatrix {
        rows: texts.len(),
        cols: terms.len(),
        indptr: vec![0],
        indices: Vec::new(),
        values: Vec::new(),
    };
    for counts in &counted {
        // BTreeMap iteration is sorted, so column indices come out ascending.
        for (g, n) in counts {
            if let Some(&j) = index.get(g) {
                m.indices.push(j);
                m.values.push(*n as f64);
            }
        }
        m.indptr.push(m.indices.len());
    }
    let vocab = Vocabulary {
        spec: spec.clone(),
        doc_freq: kept.iter().map(|(_, n)| *n).collect(),
        terms,
        index,
    };
    Ok((m, vocab))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Ridge least squares on Δ.
    #[default]
    Squared,
    /// L2-penalized logistic regression on whether Δ is positive.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub loss: Loss,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            lambda: 1.0,
            max_iter: 10_000,
            tol: 1e-8,
            loss: Loss::Squared,
        }
    }
}

impl RegressionConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        RegressionConfig {
            lambda,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub weights: Vec<f64>,
    /// Unpenalized.
    pub intercept: f64,
    pub iterations: usize,
    pub solver: Solver,
    pub config: RegressionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Cholesky solve of the normal equations (primal or dual, whichever is smaller).
    Direct,
    CoordinateDescent,
}

/// Largest system the direct solver will factor.
pub const DIRECT_SOLVE_LIMIT: usize = 3000;

/// Fits `y ≈ intercept + X w` with an L2 penalty `lambda/2 * |w|^2`.
///
/// Squared loss is solved directly when the smaller side of `X` is at most
/// [`DIRECT_SOLVE_LIMIT`] and the system is positive definite; otherwise, and
/// for logistic loss, by cyclic coordinate descent. Deterministic for fixed
/// inputs.
pub fn fit_delta_regression(x: &SparseMatrix, y: &[f64], config: &RegressionConfig) -> Result<RegressionFit> {
    if x.rows != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows but {} labels",
            x.rows,
            y.len()
        )));
    }
    if x.rows == 0 {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(Error::Config(format!(
            "lambda must be non-negative, got {}",
            config.lambda
        )));
    }
    match config.loss {
        Loss::Squared => fit_squared(x, y, config),
        Loss::Logistic => {
            let labels: Vec<f64> = y.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect();
            fit_logistic(x, &labels, config)
        }
    }
}

fn fit_squared(x: &SparseMatrix, y: &[f64], config: &RegressionConfig) -> Result<RegressionFit> {
    if x.rows.min(x.cols) <= DIRECT_SOLVE_LIMIT {
        if let Some(fit) = solve_direct(x, y, config) {
            return Ok(fit);
        }
        log::debug!("normal equations not positive definite; falling back to coordinate descent");
    }
    descend_squared(x, y, config)
}

// Centring X and y removes the intercept from the penalized problem.
fn solve_direct(x: &SparseMatrix, y: &[f64], config: &RegressionConfig) -> Option<RegressionFit> {
    let (n, p) = (x.rows, x.cols);
    let nf = n as f64;
    let mut mu = vec![0.0; p];
    for (&j, &v) in x.indices.iter().zip(&x.values) {
        mu[j] += v / nf;
    }
    let y_mean = y.iter().sum::<f64>() / nf;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let weights = if n <= p {
        // Dual: (Xc Xc' + lambda I) a = yc, w = Xc' a.
        let dense_rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| x.row(i).collect()).collect();
        let row_mu: Vec<f64> = dense_rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * mu[j]).sum())
            .collect();
        let mu_sq: f64 = mu.iter().map(|m| m * m).sum();
        let mut scratch = vec![0.0; p];
        let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for &(j, v) in &dense_rows[i] {
                scratch[j] = v;
            }
            for k in 0..=i {
                let dot: f64 = dense_rows[k].iter().map(|&(j, v)| v * scratch[j]).sum();
                let value = dot - row_mu[i] - row_mu[k] + mu_sq;
                gram[(i, k)] = value;
                gram[(k, i)] = value;
            }
            for &(j, _) in &dense_rows[i] {
                scratch[j] = 0.0;
            }
            gram[(i, i)] += config.lambda;
        }
        let a = factor(gram)?.solve(&nalgebra::DVector::from_vec(yc));
        let a_sum: f64 = a.iter().sum();
        let mut w: Vec<f64> = mu.iter().map(|m| -m * a_sum).collect();
        for (i, row) in dense_rows.iter().enumerate() {
            for &(j, v) in row {
                w[j] += v * a[i];
            }
        }
        w
    } else {
        // Primal: (Xc' Xc + lambda I) w = Xc' yc.
        let mut normal = nalgebra::DMatrix::<f64>::zeros(p, p);
        let mut rhs = nalgebra::DVector::<f64>::zeros(p);
        for (i, yi) in yc.iter().enumerate() {
            let row: Vec<(usize, f64)> = x.row(i).collect();
            for &(j, v) in &row {
                rhs[j] += v * yi;
                for &(k, u) in &row {
                    normal[(j, k)] += v * u;
                }
            }
        }
        for j in 0..p {
            for k in 0..p {
                normal[(j, k)] -= nf * mu[j] * mu[k];
            }
            normal[(j, j)] += config.lambda;
        }
        factor(normal)?.solve(&rhs).iter().copied().collect()
    };
    if weights.iter().any(|w| !w.is_finite()) {
        return None;
    }
    let intercept = y_mean - mu.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
    Some(RegressionFit {
        weights,
        intercept,
        iterations: 1,
        solver: Solver::Direct,
        config: *config,
    })
}

// Rejects factorizations whose pivots show the matrix is numerically singular.
fn factor(m: nalgebra::DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let chol = m.cholesky()?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v * v));
    (min_pivot > 1e-10 * scale.max(f64::MIN_POSITIVE)).then_some(chol)
}

fn descend_squared(x: &SparseMatrix, y: &[f64], config: &RegressionConfig) -> Result<RegressionFit> {
    let cols = x.columns();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|(_, v)| v * v).sum()).collect();
    let n = y.len() as f64;
    let mut w = vec![0.0; x.cols];
    let mut b = y.iter().sum::<f64>() / n;
    let mut r: Vec<f64> = y.iter().map(|v| v - b).collect();
    let mut max_update = f64::INFINITY;
    for iteration in 1..=config.max_iter {
        max_update = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            let denom = norms[j] + config.lambda;
            if denom == 0.0 {
                continue;
            }
            let rho: f64 = col.iter().map(|&(i, v)| v * r[i]).sum::<f64>() + w[j] * norms[j];
            let new = rho / denom;
            let step = new - w[j];
            if step != 0.0 {
                for &(i, v) in col {
                    r[i] -= step * v;
                }
                w[j] = new;
                max_update = max_update.max(step.abs());
            }
        }
        let shift = r.iter().sum::<f64>() / n;
        b += shift;
        r.iter_mut().for_each(|ri| *ri -= shift);
        max_update = max_update.max(shift.abs());
        if max_update < config.tol {
            return Ok(RegressionFit {
                weights: w,
                intercept: b,
                iterations: iteration,
                solver: Solver::CoordinateDescent,
                config: *config,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        residual: max_update,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// Coordinate steps use the curvature bound p(1-p) <= 1/4, so every step
// decreases the penalized loss.
fn fit_logistic(x: &SparseMatrix, labels: &[f64], config: &RegressionConfig) -> Result<RegressionFit> {
    let cols = x.columns();
    let bounds: Vec<f64> = cols
        .iter()
        .map(|c| 0.25 * c.iter().map(|(_, v)| v * v).sum::<f64>())
        .collect();
    let n = labels.len() as f64;
    let mut w = vec![0.0; x.cols];
    let mut b = 0.0;
    let mut z = vec![0.0; labels.len()];
    let mut max_update = f64::INFINITY;
    for iteration in 1..=config.max_iter {
        max_update = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            let h = bounds[j] + config.lambda;
            if h == 0.0 {
                continue;
            }
            let g: f64 = col.iter().map(|&(i, v)| v * (sigmoid(z[i]) - labels[i])).sum::<f64>() + config.lambda * w[j];
            let step = -g / h;
            if step != 0.0 {
                for &(i, v) in col {
                    z[i] += step * v;
                }
                w[j] += step;
                max_update = max_update.max(step.abs());
            }
        }
        let g: f64 = z.iter().zip(labels).map(|(zi, yi)| sigmoid(*zi) - yi).sum();
        let step = -g / (0.25 * n);
        z.iter_mut().for_each(|zi| *zi += step);
        b += step;
        max_update = max_update.max(step.abs());
        if max_update < config.tol {
            return Ok(RegressionFit {
                weights: w,
                intercept: b,
                iterations: iteration,
                solver: Solver::CoordinateDescent,
                config: *config,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        residual: max_update,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub ngram: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeightReport {
    #[serde(rename = "trait")]
    pub r#trait: Option<Trait>,
    /// Descending.
    pub top_positive: Vec<WeightedTerm>,
    /// Ascending (most negative first).
    pub top_negative: Vec<WeightedTerm>,
    pub n_docs: usize,
    pub vocabulary_size: usize,
    pub iterations: usize,
    pub solver: Solver,
    pub config: RegressionConfig,
}

impl FeatureWeightReport {
    /// Two-column text block: positive phrases beside negative ones.
    pub fn to_text(&self) -> String {
        let title = self.r#trait.map_or("all traits".to_string(), |t| t.name().to_string());
        let width = self
            .top_positive
            .iter()
            .map(|t| t.ngram.chars().count())
            .max()
            .unwrap_or(0)
            .max("Positive".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{title} ({} documents, lambda {})",
            self.n_docs, self.config.lambda
        );
        let _ = writeln!(out, "  {:<width$}  Negative", "Positive");
        let rows = self.top_positive.len().max(self.top_negative.len());
        for i in 0..rows {
            let pos = self.top_positive.get(i).map_or("", |t| t.ngram.as_str());
            let neg = self.top_negative.get(i).map_or("", |t| t.ngram.as_str());
            let _ = writeln!(out, "  {pos:<width$}  {neg}");
        }
        out
    }

    /// `(trait, direction, rank, ngram, weight)` rows.
    pub fn csv_rows(&self) -> Vec<FeatureCsvRow> {
        let code = self.r#trait.map_or("all", |t| t.code());
        let rows = |dir: &'static str, list: &[WeightedTerm]| {
            list.iter()
                .enumerate()
                .map(|(i, t)| FeatureCsvRow {
                    r#trait: code.to_string(),
                    direction: dir,
                    rank: i + 1,
                    ngram: t.ngram.clone(),
                    weight: t.weight,
                })
                .collect::<Vec<_>>()
        };
        let mut out = rows("positive", &self.top_positive);
        out.extend(rows("negative", &self.top_negative));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureCsvRow {
    #[serde(rename = "trait")]
    pub r#trait: String,
    pub direction: &'static str,
    pub rank: usize,
    pub ngram: String,
    pub weight: f64,
}

/// The `k` most positive and `k` most negative non-zero weights, ties broken
/// by n-gram text.
pub fn top_features(weights: &[f64], vocab: &Vocabulary, k: usize) -> (Vec<WeightedTerm>, Vec<WeightedTerm>) {
    let mut terms: Vec<WeightedTerm> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(j, &w)| WeightedTerm {
            ngram: vocab.term(j).to_string(),
            weight: w,
        })
        .collect();
    terms.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.ngram.cmp(&b.ngram)));
    let positive: Vec<_> = terms.iter().filter(|t| t.weight > 0.0).take(k).cloned().collect();
    terms.sort_by(|a, b| a.weight.total_cmp(&b.weight).then_with(|| a.ngram.cmp(&b.ngram)));
    let negative: Vec<_> = terms.iter().filter(|t| t.weight < 0.0).take(k).cloned().collect();
    (positive, negative)
}

pub fn report_top_features(
    r#trait: Option<Trait>,
    fit: &RegressionFit,
    vocab: &Vocabulary,
    n_docs: usize,
    k: usize,
) -> FeatureWeightReport {
    let (top_positive, top_negative) = top_features(&fit.weights, vocab, k);
    FeatureWeightReport {
        r#trait,
        top_positive,
        top_negative,
        n_docs,
        vocabulary_size: vocab.len(),
        iterations: fit.iterations,
        solver: fit.solver,
        config: fit.config,
    }
}

/// Smallest |Δ| a document needs to enter the regression.
pub const MIN_ABS_DELTA: i32 = 1;

/// Vectorizes the documents with `|Δ| >= 1` for one trait and fits them.
pub fn attribute_trait(
    t: Trait,
    docs: &[CorpusDoc],
    deltas: &[DeltaRecord],
    spec: &NgramSpec,
    config: &RegressionConfig,
    k: usize,
) -> Result<FeatureWeightReport> {
    let by_doc: HashMap<&str, i32> = deltas
        .iter()
        .filter(|d| d.r#trait == t)
        .filter_map(|d| d.doc_id.as_deref().map(|id| (id, d.delta)))
        .collect();
    let mut seen = BTreeSet::new();
    let (texts, ys): (Vec<&str>, Vec<f64>) = docs
        .iter()
        .filter(|d| seen.insert(d.doc_id.as_str()))
        .filter_map(|d| by_doc.get(d.doc_id.as_str()).map(|&delta| (d.text.as_str(), delta)))
        .filter(|(_, delta)| delta.abs() >= MIN_ABS_DELTA)
        .map(|(text, delta)| (text, f64::from(delta)))
        .unzip();
    if texts.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no documents with |delta| >= {MIN_ABS_DELTA} for {t}"
        )));
    }
    let (x, vocab) = vectorize(&texts, spec)?;
    let fit = fit_delta_regression(&x, &ys, config)?;
    Ok(report_top_features(Some(t), &fit, &vocab, texts.len(), k))
}

/// One report per trait, fitted independently in parallel.
pub fn attribute_all(
    docs: &[CorpusDoc],
    deltas: &[DeltaRecord],
    spec: &NgramSpec,
    config: &RegressionConfig,
    k: usize,
) -> Vec<(Trait, Result<FeatureWeightReport>)> {
    Trait::ALL
        .par_iter()
        .map(|&t| (t, attribute_trait(t, docs, deltas, spec, config, k)))
        .collect()
}
