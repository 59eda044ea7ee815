//! A one-layer next-token model standing in for the frozen server LLM.
//!
//! Forward pass at position `t`: `h` is the mean embedding of the tokens
//! before `t`, `hidden = (W₀ + ΔW)·h`, and `logits = Eᵀ·hidden`. Only `ΔW`
//! is ever trained: as a low-rank adapter, or as a soft row mask over a
//! frozen adapter.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::lowrank::AdapterPair;
use crate::maskcodec::DocMask;
use crate::rng;

/// Token ids below this are reserved for structure.
pub const RESERVED_TOKENS: u32 = 16;
pub const PAD_TOKEN: u32 = 0;
pub const END_TOKEN: u32 = 1;
pub const QUESTION_TOKEN: u32 = 2;
/// Template filler words used by augmentation.
pub const FILLER_TOKENS: [u32; 6] = [3, 4, 5, 6, 7, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d: usize,
    /// Standard deviation of each token embedding coordinate.
    pub embed_scale: f64,
    /// Standard deviation of each base-layer entry.
    pub base_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, d: usize, seed: u64) -> Self {
        Self { vocab_size, d, embed_scale: 0.5, base_scale: 0.5 / libm::sqrt(d as f64), seed }
    }
}

/// Frozen model parameters. Token embeddings are stored one row per token,
/// i.e. the transpose of the `d × V` embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLM {
    config: ModelConfig,
    token_vecs: Matrix,
    w0: Matrix,
}

impl ToyLM {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.vocab_size <= RESERVED_TOKENS as usize || config.d == 0 {
            bail!(Argument, "vocabulary must exceed {} tokens and d must be positive", RESERVED_TOKENS);
        }
        let mut g = rng::stream(config.seed, 0xE4BED);
        let token_vecs = Matrix::from_fn(config.vocab_size, config.d, |_, _| config.embed_scale * rng::normal(&mut g));
        let mut g = rng::stream(config.seed, 0xBA5E);
        let w0 = Matrix::from_fn(config.d, config.d, |_, _| config.base_scale * rng::normal(&mut g));
        Ok(Self { config, token_vecs, w0 })
    }

    /// Builds a model from explicit parameters; `embed` is `d × V`.
    pub fn from_parts(embed: &Matrix, w0: Matrix, seed: u64) -> Result<Self> {
        let (d, vocab) = embed.shape();
        if w0.shape() != (d, d) {
            bail!(Shape, "base layer is {:?}, expected ({}, {})", w0.shape(), d, d);
        }
        let token_vecs = Matrix::from_fn(vocab, d, |v, i| embed.get(i, v));
        let config = ModelConfig { vocab_size: vocab, d, embed_scale: 0.0, base_scale: 0.0, seed };
        Ok(Self { config, token_vecs, w0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    /// Token embedding rows (`V × d`).
    pub fn token_vecs(&self) -> &Matrix {
        &self.token_vecs
    }

    fn check_tokens(&self, seq: &[u32]) -> Result<()> {
        match seq.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(&token) => Err(Error::Vocabulary { token, vocab: self.config.vocab_size }),
            None => Ok(()),
        }
    }

    /// Mean embedding of `tokens`.
    pub fn context(&self, tokens: &[u32]) -> Vec<f64> {
        let mut h = vec![0.0; self.d()];
        for &t in tokens {
            for (x, e) in h.iter_mut().zip(self.token_vecs.row(t as usize)) {
                *x += e;
            }
        }
        let n = tokens.len().max(1) as f64;
        h.iter_mut().for_each(|x| *x /= n);
        h
    }

    /// Running-mean contexts for positions `1..T` (predicting `seq[t]`).
    fn prefix_contexts(&self, seq: &[u32]) -> Vec<Vec<f64>> {
        let mut sum = vec![0.0; self.d()];
        let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
        for (t, &tok) in seq.iter().enumerate().take(seq.len() - 1) {
            for (s, e) in sum.iter_mut().zip(self.token_vecs.row(tok as usize)) {
                *s += e;
            }
            out.push(sum.iter().map(|s| s / (t + 1) as f64).collect());
        }
        out
    }

    pub fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        self.token_vecs.matvec(hidden)
    }

    /// `Eᵀ`-adjoint: maps a logit gradient back to the hidden layer.
    fn hidden_grad(&self, logit_grad: &[f64]) -> Vec<f64> {
        self.token_vecs.matvec_t(logit_grad)
    }

    /// Next-token distribution for `context_tokens` under `W₀ + delta`.
    pub fn next_token_probs(&self, delta: &Matrix, context_tokens: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(context_tokens)?;
        let h = self.context(context_tokens);
        Ok(softmax(&self.logits(&self.hidden(delta, &h))))
    }

    fn hidden(&self, delta: &Matrix, h: &[f64]) -> Vec<f64> {
        let mut hidden = self.w0.matvec(h);
        for (x, y) in hidden.iter_mut().zip(delta.matvec(h)) {
            *x += y;
        }
        hidden
    }

    fn check_delta(&self, delta: &Matrix) -> Result<()> {
        if delta.shape() != (self.d(), self.d()) {
            bail!(Shape, "delta is {:?}, expected ({}, {})", delta.shape(), self.d(), self.d());
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `(−log softmax(z)[target], softmax(z) − onehot(target))`.
fn xent_with_grad(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    let loss = libm::log(total) + max - logits[target];
    let mut grad: Vec<f64> = exps.into_iter().map(|e| e / total).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

/// Mean over positions of `−log P(x_t | x_<t)` under `W₀ + delta`.
pub fn next_token_loss(model: &ToyLM, delta: &Matrix, seq: &[u32]) -> Result<f64> {
    if seq.len() < 2 {
        bail!(Argument, "next-token loss needs at least two tokens");
    }
    model.check_tokens(seq)?;
    model.check_delta(delta)?;
    let contexts = model.prefix_contexts(seq);
    let total: f64 = contexts
        .iter()
        .zip(&seq[1..])
        .map(|(h, &y)| xent_with_grad(&model.logits(&model.hidden(delta, h)), y as usize).0)
        .sum();
    Ok(total / contexts.len() as f64)
}

/// A (subject, relation, object) fact; each part is a token span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple(pub Vec<u32>, pub Vec<u32>, pub Vec<u32>);

impl Triple {
    pub fn subject(&self) -> &[u32] {
        &self.0
    }
    pub fn relation(&self) -> &[u32] {
        &self.1
    }
    pub fn object(&self) -> &[u32] {
        &self.2
    }

    /// The question form: `? subject relation`.
    pub fn question(&self) -> Vec<u32> {
        let mut q = vec![QUESTION_TOKEN];
        q.extend_from_slice(&self.0);
        q.extend_from_slice(&self.1);
        q
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u32,
    pub topic: u32,
    pub tokens: Vec<u32>,
    pub triples: Vec<Triple>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedDoc {
    pub source_doc_id: u32,
    pub rewrites: Vec<Vec<u32>>,
    pub qa_pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

impl AugmentedDoc {
    /// Every training sequence: rewrites, then `question ++ answer ++ END`.
    pub fn sequences(&self) -> Vec<Vec<u32>> {
        let mut out = self.rewrites.clone();
        for (q, a) in &self.qa_pairs {
            let mut s = q.clone();
            s.extend_from_slice(a);
            s.push(END_TOKEN);
            out.push(s);
        }
        out
    }
}

/// Renders one triple with template `variant`; variant 0 is canonical.
fn render_triple(t: &Triple, variant: usize, g: &mut rng::DetRng, out: &mut Vec<u32>) {
    let mut filler = || FILLER_TOKENS[rng::index(g, FILLER_TOKENS.len())];
    match variant {
        0 => {}
        1 => out.push(filler()),
        2 => {
            let (a, b) = (filler(), filler());
            out.extend([a, b]);
        }
        _ => {}
    }
    out.extend_from_slice(&t.0);
    if variant == 3 {
        out.push(filler());
    }
    out.extend_from_slice(&t.1);
    out.extend_from_slice(&t.2);
}

/// Deterministic stand-in for LLM rewriting: `n` templated rewrites and `m`
/// question-answer pairs over the document's triples.
pub fn augment(doc: &Document, n: usize, m: usize, seed: u64) -> Result<AugmentedDoc> {
    if n < 1 {
        bail!(Argument, "at least one rewrite is required");
    }
    if doc.tokens.is_empty() {
        bail!(Argument, "document {} is empty", doc.doc_id);
    }
    if doc.triples.is_empty() && m > 0 {
        return Err(Error::Augmentation(alloc::format!(
            "document {} has no triple to question",
            doc.doc_id
        )));
    }
    let mut g = rng::stream(seed, 0xA0_0000 + doc.doc_id as u64);
    let mut rewrites = Vec::with_capacity(n);
    for k in 0..n {
        if doc.triples.is_empty() {
            rewrites.push(doc.tokens.clone());
            continue;
        }
        let mut seq = Vec::new();
        for t in &doc.triples {
            let variant = if k == 0 { 0 } else { rng::index(&mut g, 4) };
            render_triple(t, variant, &mut g, &mut seq);
        }
        seq.push(END_TOKEN);
        rewrites.push(seq);
    }
    let qa_pairs = (0..m)
        .map(|j| {
            let t = &doc.triples[j % doc.triples.len()];
            (t.question(), t.object().to_vec())
        })
        .collect();
    Ok(AugmentedDoc { source_doc_id: doc.doc_id, rewrites, qa_pairs })
}

/// Initial adapter: `B = 0`, `A` uniform in `±init_scale`.
pub fn init_adapter(d: usize, r: usize, init_scale: f64, seed: u64) -> Result<AdapterPair> {
    let mut g = rng::stream(seed, 0xADA);
    let a = Matrix::from_fn(r, d, |_, _| rng::uniform(&mut g, -init_scale, init_scale));
    AdapterPair::new(a, Matrix::zeros(d, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrainConfig {
    pub rank: usize,
    pub epochs: usize,
    pub lr: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self { rank: 4, epochs: 3, lr: 0.1, init_scale: 0.02, seed: 0 }
    }
}

/// Trains one low-rank adapter on every sequence of `docs` with per-sequence
/// gradient steps in a fixed order.
pub fn train_adapter(model: &ToyLM, docs: &[AugmentedDoc], cfg: &AdapterTrainConfig) -> Result<AdapterPair> {
    let seqs: Vec<Vec<u32>> = docs.iter().flat_map(AugmentedDoc::sequences).filter(|s| s.len() >= 2).collect();
    if seqs.is_empty() {
        bail!(Argument, "adapter training set is empty");
    }
    if cfg.rank == 0 || cfg.rank > model.d() {
        bail!(Argument, "rank {} must lie in 1..={}", cfg.rank, model.d());
    }
    for s in &seqs {
        model.check_tokens(s)?;
    }
    let mut adapter = init_adapter(model.d(), cfg.rank, cfg.init_scale, cfg.seed)?;
    let d = model.d();
    let r = cfg.rank;
    for _ in 0..cfg.epochs {
        for seq in &seqs {
            let (a, b) = adapter.parts_mut();
            let mut grad_a = Matrix::zeros(r, d);
            let mut grad_b = Matrix::zeros(d, r);
            let contexts = model.prefix_contexts(seq);
            let norm = 1.0 / contexts.len() as f64;
            for (h, &y) in contexts.iter().zip(&seq[1..]) {
                let u = a.matvec(h);
                let mut hidden = model.w0.matvec(h);
                for (x, v) in hidden.iter_mut().zip(b.matvec(&u)) {
                    *x += v;
                }
                let (_, gz) = xent_with_grad(&model.logits(&hidden), y as usize);
                let gh = model.hidden_grad(&gz);
                let bt_gh = b.matvec_t(&gh);
                for i in 0..d {
                    let row = grad_b.row_mut(i);
                    for k in 0..r {
                        row[k] += norm * gh[i] * u[k];
                    }
                }
                for k in 0..r {
                    let row = grad_a.row_mut(k);
                    for (g, hj) in row.iter_mut().zip(h) {
                        *g += norm * bt_gh[k] * hj;
                    }
                }
            }
            a.add_scaled(&grad_a, -cfg.lr)?;
            b.add_scaled(&grad_b, -cfg.lr)?;
        }
    }
    if !adapter.a().is_finite() || !adapter.b().is_finite() {
        bail!(Argument, "adapter training diverged; lower the learning rate");
    }
    Ok(adapter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskTrainConfig {
    /// Sigmoid sharpening α.
    pub alpha: f64,
    /// Sparsity weight λ_ℓ1.
    pub lambda_l1: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Starting value of every mask logit.
    pub init_logit: f64,
    pub seed: u64,
}

impl Default for MaskTrainConfig {
    fn default() -> Self {
        Self { alpha: 4.0, lambda_l1: 0.01, epochs: 10, lr: 0.05, init_logit: 0.5, seed: 0 }
    }
}

impl MaskTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            bail!(Argument, "alpha must be positive");
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            bail!(Argument, "lambda_l1 must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Argument, "mask learning rate must be positive");
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Per-position quantities that stay fixed while the mask trains.
struct FrozenPosition {
    base: Vec<f64>,
    adapter_out: Vec<f64>,
    target: usize,
}

struct MaskProblem<'a> {
    model: &'a ToyLM,
    /// One entry per sequence.
    sequences: Vec<Vec<FrozenPosition>>,
}

impl<'a> MaskProblem<'a> {
    fn new(model: &'a ToyLM, adapter: &AdapterPair, doc: &AugmentedDoc) -> Result<Self> {
        if adapter.d() != model.d() {
            bail!(Shape, "adapter width {} does not match model width {}", adapter.d(), model.d());
        }
        let mut sequences = Vec::new();
        for seq in doc.sequences().into_iter().filter(|s| s.len() >= 2) {
            model.check_tokens(&seq)?;
            let positions = model
                .prefix_contexts(&seq)
                .into_iter()
                .zip(&seq[1..])
                .map(|(h, &y)| FrozenPosition {
                    base: model.w0.matvec(&h),
                    adapter_out: adapter.b().matvec(&adapter.a().matvec(&h)),
                    target: y as usize,
                })
                .collect();
            sequences.push(positions);
        }
        if sequences.is_empty() {
            bail!(Argument, "document {} has no trainable sequence", doc.source_doc_id);
        }
        Ok(Self { model, sequences })
    }

    /// `(L_next, ‖σ(α·m̂)‖₁, ∂L_next/∂s)` for soft mask `s`.
    fn evaluate(&self, soft: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let d = soft.len();
        let mass: f64 = soft.iter().sum();
        let lambda = d as f64 / mass;
        let mut loss = 0.0;
        let mut grad = vec![0.0; if want_grad { d } else { 0 }];
        let seq_weight = 1.0 / self.sequences.len() as f64;
        for positions in &self.sequences {
            let w = seq_weight / positions.len() as f64;
            for p in positions {
                let hidden: Vec<f64> = (0..d).map(|i| p.base[i] + lambda * soft[i] * p.adapter_out[i]).collect();
                let (l, gz) = xent_with_grad(&self.model.logits(&hidden), p.target);
                loss += w * l;
                if want_grad {
                    let gh = self.model.hidden_grad(&gz);
                    let coupled: f64 = (0..d).map(|i| gh[i] * soft[i] * p.adapter_out[i]).sum();
                    for j in 0..d {
                        grad[j] += w * (lambda * gh[j] * p.adapter_out[j] - lambda / mass * coupled);
                    }
                }
            }
        }
        (loss, grad)
    }
}

/// Loss terms of the relaxed mask objective at `logits`:
/// `(L_next, ‖σ(α·m̂)‖₁)`. The total is `L_next + λ_ℓ1·‖σ(α·m̂)‖₁`.
pub fn mask_loss(model: &ToyLM, adapter: &AdapterPair, doc: &AugmentedDoc, logits: &[f64], cfg: &MaskTrainConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let problem = MaskProblem::new(model, adapter, doc)?;
    let soft: Vec<f64> = logits.iter().map(|&m| sigmoid(cfg.alpha * m)).collect();
    let (next, _) = problem.evaluate(&soft, false);
    Ok((next, soft.iter().sum()))
}

fn total_grad(problem: &MaskProblem<'_>, logits: &[f64], cfg: &MaskTrainConfig) -> (f64, f64, Vec<f64>) {
    let soft: Vec<f64> = logits.iter().map(|&m| sigmoid(cfg.alpha * m)).collect();
    let (next, ds) = problem.evaluate(&soft, true);
    let grad = soft
        .iter()
        .zip(&ds)
        .map(|(&s, &g)| (g + cfg.lambda_l1) * cfg.alpha * s * (1.0 - s))
        .collect();
    (next, soft.iter().sum(), grad)
}

/// Analytic gradient of `L_next + λ_ℓ1·‖σ(α·m̂)‖₁` with respect to the logits.
pub fn grad_mask_logits(model: &ToyLM, adapter: &AdapterPair, doc: &AugmentedDoc, logits: &[f64], cfg: &MaskTrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if logits.len() != adapter.d() {
        bail!(Shape, "{} logits for width {}", logits.len(), adapter.d());
    }
    let problem = MaskProblem::new(model, adapter, doc)?;
    Ok(total_grad(&problem, logits, cfg).2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskTrainOutcome {
    pub logits: Vec<f64>,
    pub mask: DocMask,
    /// `(L_next, ‖σ(α·m̂)‖₁)` before each step, plus the final state.
    pub history: Vec<(f64, f64)>,
}

/// Learns a document's row mask over a frozen adapter by full-batch gradient
/// descent on the relaxed objective, then thresholds logits at zero. An
/// all-zero result keeps only the highest-logit row.
pub fn train_mask(model: &ToyLM, adapter: &AdapterPair, doc: &AugmentedDoc, cfg: &MaskTrainConfig) -> Result<MaskTrainOutcome> {
    cfg.validate()?;
    let problem = MaskProblem::new(model, adapter, doc)?;
    let d = adapter.d();
    let mut logits = vec![cfg.init_logit; d];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (next, l1, grad) = total_grad(&problem, &logits, cfg);
        history.push((next, l1));
        for (m, g) in logits.iter_mut().zip(grad) {
            *m -= cfg.lr * g;
        }
    }
    let soft: Vec<f64> = logits.iter().map(|&m| sigmoid(cfg.alpha * m)).collect();
    history.push((problem.evaluate(&soft, false).0, soft.iter().sum()));
    let mask = binarize(&logits);
    Ok(MaskTrainOutcome { logits, mask, history })
}

/// `1[m̂ > 0]`, forcing the first highest-logit row on if nothing survives.
pub fn binarize(logits: &[f64]) -> DocMask {
    let mut mask = DocMask::pack(&logits.iter().map(|&m| m > 0.0).collect::<Vec<_>>());
    if mask.popcount() == 0 && !logits.is_empty() {
        let best = (0..logits.len()).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
        mask.set(best, true);
    }
    mask
}

/// Greedy decoding under `W₀ + delta`; stops at `END_TOKEN` (not emitted)
/// or after `max_len` tokens. Ties go to the lowest token id.
pub fn generate(model: &ToyLM, delta: &Matrix, question: &[u32], max_len: usize) -> Result<Vec<u32>> {
    if question.is_empty() {
        bail!(Argument, "question must not be empty");
    }
    model.check_tokens(question)?;
    model.check_delta(delta)?;
    let mut context = question.to_vec();
    let mut out = Vec::new();
    while out.len() < max_len {
        let h = model.context(&context);
        let logits = model.logits(&model.hidden(delta, &h));
        let next = argmax(&logits) as u32;
        if next == END_TOKEN {
            break;
        }
        out.push(next);
        context.push(next);
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |b, j| if xs[j] > xs[b] { j } else { b })
}

/// Convenience: straight-line forward used by callers that need raw logits.
pub fn forward_logits(model: &ToyLM, delta: &Matrix, context_tokens: &[u32]) -> Result<Vec<f64>> {
    model.check_tokens(context_tokens)?;
    model.check_delta(delta)?;
    let h = model.context(context_tokens);
    Ok(model.logits(&model.hidden(delta, &h)))
}
