//! Word embeddings: skip-gram and CBOW objectives trained with negative
//! sampling, plus cosine similarity queries and vector persistence.
//!
//! The per-pair loss is
//! `-log σ(u_c · v_t) - Σ_k log σ(-u_k · v_t)` over K negatives drawn from a
//! count^0.75 noise distribution, minimized by plain SGD with a linearly
//! decaying learning rate. `v` rows live in the input table, `u` rows in the
//! output (context) table.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenSeq, Vocabulary};
use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    SkipGram,
    Cbow,
}

/// Training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub dim: usize,
    /// Context window size: positions t-c..t+c excluding t.
    pub window: usize,
    /// Negatives per positive item.
    pub negatives: usize,
    pub alpha0: f64,
    pub min_alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Worker threads. Results are bit-reproducible only with 1 worker;
    /// more workers update parameters without synchronization.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::SkipGram,
            dim: 200,
            window: 5,
            negatives: 5,
            alpha0: 0.025,
            min_alpha: 1e-4,
            epochs: 5,
            seed: 1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.window < 1 {
            return Err(Error::Config("dim and window must be >= 1".into()));
        }
        if !(self.min_alpha > 0.0 && self.min_alpha <= self.alpha0) {
            return Err(Error::Config(
                "learning rates must satisfy 0 < min_alpha <= alpha0".into(),
            ));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Input and output vector tables, row-major, one row per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab_len: usize,
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Seeded initialization: input rows uniform in [-0.5/dim, 0.5/dim],
    /// output rows zero.
    pub fn init(vocab_len: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let input = (0..vocab_len * dim)
            .map(|_| rng.gen_range(-half..half))
            .collect();
        EmbeddingMatrix {
            vocab_len,
            dim,
            input,
            output: vec![0.0; vocab_len * dim],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let vocab_len = rows.len();
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("embedding rows differ in length".into()));
        }
        let input: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(EmbeddingMatrix {
            vocab_len,
            dim,
            input,
            output: vec![0.0; vocab_len * dim],
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_row(&self, id: usize) -> &[f64] {
        &self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub fn output_row(&self, id: usize) -> &[f64] {
        &self.output[id * self.dim..(id + 1) * self.dim]
    }

    pub fn input_row_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub fn output_row_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.output[id * self.dim..(id + 1) * self.dim]
    }

    pub fn all_finite(&self) -> bool {
        self.input.iter().chain(self.output.iter()).all(|v| v.is_finite())
    }

    /// Writes `<path>` (binary vectors) and `<path>.tokens` (one token per
    /// line, id order). Header: magic "BEMB", endianness byte ('L'),
    /// version, |V|, dim; then the input table as little-endian f64 rows.
    pub fn save(&self, path: impl AsRef<Path>, tokens: &[String]) -> Result<()> {
        let path = path.as_ref();
        if tokens.len() != self.vocab_len {
            return Err(Error::Shape(format!(
                "token list length {} != vocab size {}",
                tokens.len(),
                self.vocab_len
            )));
        }
        let mut buf = Vec::with_capacity(21 + self.input.len() * 8);
        buf.extend_from_slice(b"BEMB");
        buf.push(b'L');
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.vocab_len as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.input {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))?;
        let token_path = sidecar_path(path);
        let mut text = String::new();
        for t in tokens {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(&token_path, text).map_err(|e| Error::io(token_path.display().to_string(), e))
    }

    /// Loads vectors saved by [`EmbeddingMatrix::save`]. The output table is
    /// not persisted and comes back zeroed; similarity queries only use the
    /// input table.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let p = path.display().to_string();
        if bytes.len() < 25 || &bytes[0..4] != b"BEMB" {
            return Err(Error::format(&p, "not an embedding file (bad magic)"));
        }
        if bytes[4] != b'L' {
            return Err(Error::format(&p, "unsupported endianness marker"));
        }
        let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        if version != 1 {
            return Err(Error::format(&p, format!("unsupported version {version}")));
        }
        let vocab_len = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
        let expect = 25 + vocab_len * dim * 8;
        if bytes.len() != expect {
            return Err(Error::format(
                &p,
                format!("truncated: {} bytes, expected {expect}", bytes.len()),
            ));
        }
        let input: Vec<f64> = bytes[25..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let token_path = sidecar_path(path);
        let text = fs::read_to_string(&token_path)
            .map_err(|e| Error::io(token_path.display().to_string(), e))?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.len() != vocab_len {
            return Err(Error::format(
                token_path.display().to_string(),
                format!("{} tokens for vocab of {vocab_len}", tokens.len()),
            ));
        }
        Ok((
            EmbeddingMatrix {
                vocab_len,
                dim,
                input,
                output: vec![0.0; vocab_len * dim],
            },
            tokens,
        ))
    }

    /// Text interop export: one `token v1 .. vdim` line per word.
    pub fn export_text(&self, path: impl AsRef<Path>, tokens: &[String]) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(f);
        for (id, tok) in tokens.iter().enumerate() {
            write!(w, "{tok}").map_err(|e| Error::io(path.display().to_string(), e))?;
            for v in self.input_row(id) {
                write!(w, " {v}").map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            writeln!(w).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".tokens");
    std::path::PathBuf::from(s)
}

/// Unigram noise distribution P(w) ∝ count(w)^0.75 as a cumulative table.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    pub fn probability(&self, id: usize) -> f64 {
        let prev = if id == 0 { 0.0 } else { self.cumulative[id - 1] };
        self.cumulative[id] - prev
    }

    /// Draws a vocabulary id.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&c| c <= u)
    }

    /// Draws an id different from `exclude`, resampling on collision up to
    /// 100 attempts; returns None if every attempt collided.
    pub fn sample_excluding<R: Rng>(&self, rng: &mut R, exclude: usize) -> Option<usize> {
        for _ in 0..100 {
            let id = self.sample(rng);
            if id != exclude {
                return Some(id);
            }
        }
        None
    }
}

/// Builds the count^0.75 noise distribution over a non-empty vocabulary.
pub fn build_noise_distribution(vocab: &Vocabulary) -> Result<NoiseDistribution> {
    if vocab.is_empty() {
        return Err(Error::Config("noise distribution over empty vocabulary".into()));
    }
    let weights: Vec<f64> = (0..vocab.len())
        .map(|id| (vocab.count(id) as f64).powf(0.75))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    // pin the final entry so sampling never falls off the table
    *cumulative.last_mut().unwrap() = 1.0;
    Ok(NoiseDistribution { cumulative })
}

/// One training item: a (center, context) pair for skip-gram, or the whole
/// context set predicting the center for CBOW.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainItem {
    SkipGram { center: usize, context: usize },
    Cbow { context: Vec<usize>, center: usize },
}

/// Enumerates training items over each sentence with window `c`. Windows
/// never cross sentence boundaries. Tokens missing from the vocabulary are
/// dropped before windowing.
pub fn generate_pairs(
    tokens: &TokenSeq,
    vocab: &Vocabulary,
    c: usize,
    mode: TrainMode,
) -> Vec<TrainItem> {
    let mut items = Vec::new();
    for sentence in &tokens.sentences {
        let ids: Vec<usize> = sentence.iter().filter_map(|t| vocab.id(t)).collect();
        for t in 0..ids.len() {
            let lo = t.saturating_sub(c);
            let hi = (t + c).min(ids.len().saturating_sub(1));
            match mode {
                TrainMode::SkipGram => {
                    for j in lo..=hi {
                        if j != t {
                            items.push(TrainItem::SkipGram {
                                center: ids[t],
                                context: ids[j],
                            });
                        }
                    }
                }
                TrainMode::Cbow => {
                    let context: Vec<usize> = (lo..=hi).filter(|&j| j != t).map(|j| ids[j]).collect();
                    if !context.is_empty() {
                        items.push(TrainItem::Cbow {
                            context,
                            center: ids[t],
                        });
                    }
                }
            }
        }
    }
    items
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x), computed without overflow for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Gradients of the pair loss with respect to every participating vector.
#[derive(Debug, Clone)]
pub struct PairGrads {
    /// d loss / d input_row(center)
    pub d_center: Vec<f64>,
    /// d loss / d output_row(context)
    pub d_context: Vec<f64>,
    /// d loss / d output_row(negatives[i]), aligned with the negatives list
    pub d_negatives: Vec<Vec<f64>>,
}

/// Loss and exact gradients for one skip-gram item:
/// `L = -log σ(u_c·v_t) - Σ_k log σ(-u_k·v_t)`.
pub fn pair_loss_and_grads(
    center: usize,
    context: usize,
    negatives: &[usize],
    emb: &EmbeddingMatrix,
) -> (f64, PairGrads) {
    let v_t = emb.input_row(center);
    let u_c = emb.output_row(context);
    let dim = emb.dim();

    let s_c: f64 = v_t.iter().zip(u_c).map(|(a, b)| a * b).sum();
    let mut loss = -log_sigmoid(s_c);
    let g_c = sigmoid(s_c) - 1.0; // dL/ds_c

    let mut d_center = vec![0.0; dim];
    for (d, u) in d_center.iter_mut().zip(u_c) {
        *d = g_c * u;
    }
    let d_context: Vec<f64> = v_t.iter().map(|v| g_c * v).collect();

    let mut d_negatives = Vec::with_capacity(negatives.len());
    for &k in negatives {
        let u_k = emb.output_row(k);
        let s_k: f64 = v_t.iter().zip(u_k).map(|(a, b)| a * b).sum();
        loss -= log_sigmoid(-s_k);
        let g_k = sigmoid(s_k); // dL/ds_k
        for (d, u) in d_center.iter_mut().zip(u_k) {
            *d += g_k * u;
        }
        d_negatives.push(v_t.iter().map(|v| g_k * v).collect());
    }

    (
        loss,
        PairGrads {
            d_center,
            d_context,
            d_negatives,
        },
    )
}

/// Cosine similarity in [-1, 1]; zero vectors map to 0 with the flag set.
/// Identical vectors yield exactly 1 (sqrt rounding would otherwise land a
/// hair below).
pub fn cosine_flagged(u: &[f64], v: &[f64]) -> (f64, bool) {
    debug_assert_eq!(u.len(), v.len());
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (0.0, true);
    }
    if u == v {
        return (1.0, false);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    ((dot / (nu * nv)).clamp(-1.0, 1.0), false)
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    cosine_flagged(u, v).0
}

/// Tokens most similar to `word` by input-vector cosine, descending, the
/// query excluded, ties broken by vocabulary id.
pub fn nearest_neighbors(
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    word: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let id = vocab
        .id(word)
        .ok_or_else(|| Error::UnknownToken(word.to_string()))?;
    let query = emb.input_row(id);
    let mut scored: Vec<(usize, f64)> = (0..vocab.len())
        .filter(|&other| other != id)
        .map(|other| (other, cosine(query, emb.input_row(other))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (vocab.token(i).to_string(), s))
        .collect())
}

// f64 stored as bits so unsynchronized multi-worker updates stay defined
// behavior; with one worker access is strictly sequential.
struct SharedTable(Vec<AtomicU64>);

impl SharedTable {
    fn from_slice(data: &[f64]) -> Self {
        SharedTable(data.iter().map(|v| AtomicU64::new(v.to_bits())).collect())
    }

    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    fn set(&self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed);
    }

    fn add(&self, i: usize, delta: f64) {
        self.set(i, self.get(i) + delta);
    }

    fn into_vec(self) -> Vec<f64> {
        self.0.into_iter().map(|a| f64::from_bits(a.into_inner())).collect()
    }
}

struct TrainShared<'a> {
    input: SharedTable,
    output: SharedTable,
    noise: &'a NoiseDistribution,
    config: &'a TrainConfig,
    total_items: usize,
    progress: AtomicUsize,
}

impl TrainShared<'_> {
    fn alpha(&self, step: usize) -> f64 {
        let denom = (self.total_items.saturating_sub(1)).max(1) as f64;
        let t = (step as f64 / denom).min(1.0);
        (self.config.alpha0 * (1.0 - t) + self.config.min_alpha * t).max(self.config.min_alpha)
    }

    /// One SGD step on a skip-gram positive pair plus K negatives, reading
    /// `h` from the center's input row.
    fn step_item(&self, item: &TrainItem, rng: &mut ChaCha8Rng, alpha: f64) {
        let dim = self.config.dim;
        let (h, target): (Vec<f64>, usize) = match item {
            TrainItem::SkipGram { center, context } => (
                (0..dim).map(|d| self.input.get(center * dim + d)).collect(),
                *context,
            ),
            TrainItem::Cbow { context, center } => {
                let mut h = vec![0.0; dim];
                for &w in context {
                    for (d, hv) in h.iter_mut().enumerate() {
                        *hv += self.input.get(w * dim + d);
                    }
                }
                let n = context.len() as f64;
                for hv in h.iter_mut() {
                    *hv /= n;
                }
                (h, *center)
            }
        };

        let mut d_h = vec![0.0; dim];
        // positive target, label 1
        self.update_output(&h, target, 1.0, alpha, &mut d_h);
        // negatives, label 0
        for _ in 0..self.config.negatives {
            if let Some(neg) = self.noise.sample_excluding(rng, target) {
                self.update_output(&h, neg, 0.0, alpha, &mut d_h);
            }
        }

        match item {
            TrainItem::SkipGram { center, .. } => {
                for (d, g) in d_h.iter().enumerate() {
                    self.input.add(center * dim + d, -alpha * g);
                }
            }
            TrainItem::Cbow { context, .. } => {
                let scale = context.len() as f64;
                for &w in context {
                    for (d, g) in d_h.iter().enumerate() {
                        self.input.add(w * dim + d, -alpha * g / scale);
                    }
                }
            }
        }
    }

    fn update_output(&self, h: &[f64], word: usize, label: f64, alpha: f64, d_h: &mut [f64]) {
        let dim = self.config.dim;
        let s: f64 = (0..dim).map(|d| h[d] * self.output.get(word * dim + d)).sum();
        let g = sigmoid(s) - label; // dL/ds
        for (d, dh) in d_h.iter_mut().enumerate() {
            *dh += g * self.output.get(word * dim + d);
        }
        for (d, hv) in h.iter().enumerate() {
            self.output.add(word * dim + d, -alpha * g * hv);
        }
    }
}

/// Trains embeddings over an already-subsampled corpus. With one worker the
/// result is bit-reproducible for a fixed seed; with more, updates are
/// unsynchronized and only convergence-in-expectation holds.
pub fn train(corpus: &TokenSeq, vocab: &Vocabulary, config: &TrainConfig) -> Result<EmbeddingMatrix> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(Error::Config("training over an empty vocabulary".into()));
    }
    let init = EmbeddingMatrix::init(vocab.len(), config.dim, config.seed);
    if config.epochs == 0 {
        return Ok(init);
    }
    let items = generate_pairs(corpus, vocab, config.window, config.mode);
    if items.is_empty() {
        return Err(Error::Config("corpus produced no training items".into()));
    }
    let noise = build_noise_distribution(vocab)?;
    let shared = TrainShared {
        input: SharedTable::from_slice(&init.input),
        output: SharedTable::from_slice(&init.output),
        noise: &noise,
        config,
        total_items: items.len() * config.epochs,
        progress: AtomicUsize::new(0),
    };

    if config.workers <= 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
        let mut step = 0usize;
        for _ in 0..config.epochs {
            for item in &items {
                let alpha = shared.alpha(step);
                shared.step_item(item, &mut rng, alpha);
                step += 1;
            }
        }
    } else {
        let shards: Vec<&[TrainItem]> = chunk_evenly(&items, config.workers);
        std::thread::scope(|scope| {
            for (worker, shard) in shards.into_iter().enumerate() {
                let shared = &shared;
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        config.seed.wrapping_add(0x5eed).wrapping_add(worker as u64),
                    );
                    for _ in 0..config.epochs {
                        for item in shard {
                            let step = shared.progress.fetch_add(1, Ordering::Relaxed);
                            let alpha = shared.alpha(step);
                            shared.step_item(item, &mut rng, alpha);
                        }
                    }
                });
            }
        });
    }

    let out = EmbeddingMatrix {
        vocab_len: vocab.len(),
        dim: config.dim,
        input: shared.input.into_vec(),
        output: shared.output.into_vec(),
    };
    if !out.all_finite() {
        return Err(Error::NonFinite("embedding training".into()));
    }
    Ok(out)
}

fn chunk_evenly<T>(items: &[T], n: usize) -> Vec<&[T]> {
    let len = items.len();
    (0..n)
        .map(|i| &items[len * i / n..len * (i + 1) / n])
        .collect()
}
