//! Replicated Softmax RBM over word-count vectors.
//!
//! Energy of a document `v` (length `D`) with binary hidden state `h`:
//!
//! ```text
//! E(v, h) = -Σ_kj v_k W_kj h_j - Σ_k a_k v_k - D Σ_j b_j h_j
//! ```
//!
//! The visible layer is a softmax over the vocabulary replicated `D` times,
//! so the hidden bias is scaled by document length.

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CountVector;
use crate::error::{Error, Result};
use crate::numeric::{ln_factorial, log_sum_exp, sigma};

/// Upper bound on `2^H · C(D+K-1, K-1)` for exact enumeration.
pub const EXACT_STATE_LIMIT: f64 = 1e7;

/// Layer parameters: `w` is K×H, `a` the K visible biases, `b` the H hidden
/// biases.
#[derive(Debug, Clone, PartialEq)]
pub struct RsmParams {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl RsmParams {
    pub fn zeros(k: usize, h: usize) -> Self {
        RsmParams {
            w: Array2::zeros((k, h)),
            a: Array1::zeros(k),
            b: Array1::zeros(h),
        }
    }

    /// Gaussian weights with standard deviation `sigma`, zero biases.
    pub fn random(k: usize, h: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let mut p = Self::zeros(k, h);
        p.w.iter_mut().for_each(|x| *x = normal.sample(rng));
        p
    }

    pub fn n_visible(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .all(|x| x.is_finite())
    }

    fn check_shape(&self) -> Result<()> {
        if self.a.len() != self.n_visible() {
            return Err(Error::DimensionMismatch {
                what: "visible bias length",
                expected: self.n_visible(),
                got: self.a.len(),
            });
        }
        if self.b.len() != self.n_hidden() {
            return Err(Error::DimensionMismatch {
                what: "hidden bias length",
                expected: self.n_hidden(),
                got: self.b.len(),
            });
        }
        Ok(())
    }

    /// Sets the visible biases to the log of add-one smoothed corpus word
    /// frequencies.
    pub fn init_visible_from_frequencies(&mut self, corpus: &[CountVector]) {
        let k = self.n_visible();
        let mut totals = vec![1.0; k];
        for v in corpus {
            for (i, c) in v.iter() {
                if i < k {
                    totals[i] += f64::from(c);
                }
            }
        }
        let sum: f64 = totals.iter().sum();
        for (a, t) in self.a.iter_mut().zip(totals) {
            *a = (t / sum).ln();
        }
    }
}

/// Gradient (or momentum velocity) with the same layout as [`RsmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct RsmGradient {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl RsmGradient {
    pub fn zeros_like(p: &RsmParams) -> Self {
        RsmGradient {
            w: Array2::zeros(p.w.raw_dim()),
            a: Array1::zeros(p.a.len()),
            b: Array1::zeros(p.b.len()),
        }
    }
}

/// Optimizer settings for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Gibbs steps in the negative chain.
    pub cd_k: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_init_sigma: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Initialize visible biases from smoothed corpus word frequencies.
    pub visible_bias_from_freq: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cd_k: 1,
            learning_rate: 0.01,
            batch_size: 10,
            epochs: 30,
            weight_init_sigma: 0.01,
            momentum: 0.5,
            seed: 0,
            visible_bias_from_freq: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.cd_k < 1 {
            return bad("cd_k must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be a non-negative finite number");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.weight_init_sigma.is_finite() && self.weight_init_sigma > 0.0) {
            return bad("weight_init_sigma must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

fn check_v(v: &CountVector, p: &RsmParams) -> Result<()> {
    p.check_shape()?;
    v.check_dimension(p.n_visible())
}

fn check_h(h: &[f64], p: &RsmParams) -> Result<()> {
    if h.len() != p.n_hidden() {
        return Err(Error::DimensionMismatch {
            what: "hidden vector length",
            expected: p.n_hidden(),
            got: h.len(),
        });
    }
    Ok(())
}

/// Energy `E(v, h)`; `h` holds 0/1 values.
pub fn energy(v: &CountVector, h: &[f64], params: &RsmParams) -> Result<f64> {
    check_v(v, params)?;
    check_h(h, params)?;
    let d = v.length_d() as f64;
    let mut e = 0.0;
    for (k, c) in v.iter() {
        let c = f64::from(c);
        let row = params.w.row(k);
        let interaction: f64 = row.iter().zip(h).map(|(w, h)| w * h).sum();
        e -= c * (interaction + params.a[k]);
    }
    let hb: f64 = params.b.iter().zip(h).map(|(b, h)| b * h).sum();
    Ok(e - d * hb)
}

/// Hidden pre-activations `Σ_k v_k W_kj + D b_j`.
fn hidden_input(v: &CountVector, params: &RsmParams) -> Array1<f64> {
    let d = v.length_d() as f64;
    let mut z = &params.b * d;
    for (k, c) in v.iter() {
        z.scaled_add(f64::from(c), &params.w.row(k));
    }
    z
}

/// `p(h_j = 1 | v) = σ(Σ_k W_kj v_k + D b_j)`.
pub fn hidden_probs(v: &CountVector, params: &RsmParams) -> Result<Array1<f64>> {
    check_v(v, params)?;
    Ok(hidden_input(v, params).mapv_into(sigma))
}

fn visible_logits(h: &[f64], params: &RsmParams) -> Array1<f64> {
    let h = ndarray::ArrayView1::from(h);
    params.w.dot(&h) + &params.a
}

fn log_softmax(mut s: Array1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(s.as_slice().expect("contiguous"));
    s.mapv_inplace(|x| x - lse);
    s
}

/// Softmax over words given a hidden state: `p_k ∝ exp(a_k + Σ_j W_kj h_j)`.
/// `h` may hold probabilities as well as binary values.
pub fn visible_word_dist(h: &[f64], params: &RsmParams) -> Result<Array1<f64>> {
    params.check_shape()?;
    check_h(h, params)?;
    let s = visible_logits(h, params);
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = s.mapv(|x| (x - max).exp());
    let z = p.sum();
    p /= z;
    Ok(p)
}

/// Draws one binary hidden state: unit `j` is on iff a uniform draw is below
/// `probs[j]`. Consumes exactly `probs.len()` uniforms.
pub fn sample_hidden(probs: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect()
}

/// Draws `d` words from `dist` with replacement. Each draw consumes one
/// uniform `u` and selects the first index whose cumulative mass exceeds `u`.
pub fn sample_visible(
    doc_id: &str,
    dist: &[f64],
    d: u64,
    rng: &mut impl Rng,
) -> Result<CountVector> {
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(
            "distribution has negative or non-finite entries".into(),
        ));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    let mut cum = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for p in dist {
        acc += p;
        cum.push(acc);
    }
    let last_positive = dist.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let mut counts = vec![0u32; dist.len()];
    for _ in 0..d {
        let u: f64 = rng.random();
        let k = cum.partition_point(|&c| c <= u).min(last_positive);
        counts[k] += 1;
    }
    Ok(CountVector::from_dense(doc_id, &counts))
}

/// Summary of one CD update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdStats {
    /// Mean per-word reconstruction cross-entropy of the batch before the
    /// update.
    pub reconstruction_ce: f64,
}

/// Per-word cross-entropy `-Σ_k v_k ln p_k / D` of `v` under the mean-field
/// reconstruction `p = softmax(a + W p(h|v))`. `None` for empty documents.
pub fn reconstruction_cross_entropy(v: &CountVector, params: &RsmParams) -> Result<Option<f64>> {
    if v.length_d() == 0 {
        check_v(v, params)?;
        return Ok(None);
    }
    let ph = hidden_probs(v, params)?;
    let logp = log_softmax(visible_logits(ph.as_slice().expect("contiguous"), params));
    let ce: f64 = v.iter().map(|(k, c)| -f64::from(c) * logp[k]).sum();
    Ok(Some(ce / v.length_d() as f64))
}

/// Mean of [`reconstruction_cross_entropy`] over the non-empty documents.
pub fn mean_reconstruction_ce(corpus: &[CountVector], params: &RsmParams) -> Result<f64> {
    let per_doc: Vec<Option<f64>> = corpus
        .par_iter()
        .map(|v| reconstruction_cross_entropy(v, params))
        .collect::<Result<_>>()?;
    let (sum, n) = per_doc
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

struct ChainEnd {
    ph0: Array1<f64>,
    vk: CountVector,
    phk: Array1<f64>,
}

fn run_chain(v0: &CountVector, params: &RsmParams, k: usize, seed: u64) -> Result<ChainEnd> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ph0 = hidden_probs(v0, params)?;
    let mut ph = ph0.clone();
    let mut v = v0.clone();
    for _ in 0..k {
        let h = sample_hidden(ph.as_slice().expect("contiguous"), &mut rng);
        let dist = visible_word_dist(&h, params)?;
        v = sample_visible(
            v0.doc_id(),
            dist.as_slice().expect("contiguous"),
            v0.length_d(),
            &mut rng,
        )?;
        ph = hidden_probs(&v, params)?;
    }
    Ok(ChainEnd {
        ph0,
        vk: v,
        phk: ph,
    })
}

/// One CD-k update of `params` on `batch`.
///
/// Each document's negative chain runs on its own generator, seeded by one
/// `u64` drawn from `rng` in batch order, so the result does not depend on the
/// number of worker threads. The positive phase uses hidden probabilities;
/// the chain alternates sampled binary hidden states and sampled counts with
/// the document's own length. Statistics are reduced in batch order.
pub fn cd_step(
    batch: &[CountVector],
    params: &mut RsmParams,
    velocity: &mut RsmGradient,
    cfg: &TrainConfig,
    rng: &mut impl RngCore,
) -> Result<CdStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    params.check_shape()?;
    for v in batch {
        v.check_dimension(params.n_visible())?;
    }
    let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
    let chains: Vec<ChainEnd> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(v, &s)| run_chain(v, params, cfg.cd_k, s))
        .collect::<Result<_>>()?;

    let stats = CdStats {
        reconstruction_ce: mean_reconstruction_ce(batch, params)?,
    };

    let mut grad = RsmGradient::zeros_like(params);
    for (v0, c) in batch.iter().zip(&chains) {
        let d = v0.length_d() as f64;
        for (k, n) in v0.iter() {
            grad.w.row_mut(k).scaled_add(f64::from(n), &c.ph0);
            grad.a[k] += f64::from(n);
        }
        for (k, n) in c.vk.iter() {
            grad.w.row_mut(k).scaled_add(-f64::from(n), &c.phk);
            grad.a[k] -= f64::from(n);
        }
        grad.b.scaled_add(d, &c.ph0);
        grad.b.scaled_add(-d, &c.phk);
    }
    let scale = cfg.learning_rate / batch.len() as f64;
    apply_momentum(&mut velocity.w, &grad.w, cfg.momentum, scale);
    apply_momentum(&mut velocity.a, &grad.a, cfg.momentum, scale);
    apply_momentum(&mut velocity.b, &grad.b, cfg.momentum, scale);
    params.w += &velocity.w;
    params.a += &velocity.a;
    params.b += &velocity.b;
    Ok(stats)
}

pub(crate) fn apply_momentum<D: ndarray::Dimension>(
    velocity: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    momentum: f64,
    scale: f64,
) {
    velocity.zip_mut_with(grad, |v, g| *v = momentum * *v + scale * g);
}

/// One entry of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub layer: usize,
    pub statistic: f64,
}

/// Trains a fresh layer with `cfg.epochs` passes of shuffled mini-batch CD.
///
/// Epoch 0 of the returned curve is the initial model; each later entry is the
/// full-corpus mean reconstruction cross-entropy after that epoch.
pub fn train(
    corpus: &[CountVector],
    n_hidden: usize,
    k: usize,
    cfg: &TrainConfig,
) -> Result<(RsmParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = RsmParams::random(k, n_hidden, cfg.weight_init_sigma, &mut rng);
    if cfg.visible_bias_from_freq {
        params.init_visible_from_frequencies(corpus);
    }
    let log = train_from(corpus, &mut params, cfg, &mut rng)?;
    Ok((params, log))
}

/// Continues training `params` in place; see [`train`].
pub fn train_from(
    corpus: &[CountVector],
    params: &mut RsmParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochRecord>> {
    use rand::seq::SliceRandom;
    cfg.validate()?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        layer: 1,
        statistic: mean_reconstruction_ce(corpus, params)?,
    }];
    let mut velocity = RsmGradient::zeros_like(params);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<CountVector> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            cd_step(&batch, params, &mut velocity, cfg, rng)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!(
                "layer 1 parameters after epoch {epoch}"
            )));
        }
        let statistic = mean_reconstruction_ce(corpus, params)?;
        log::debug!("rsm epoch {epoch}: reconstruction ce {statistic:.6}");
        log.push(EpochRecord {
            epoch,
            layer: 1,
            statistic,
        });
    }
    Ok(log)
}

fn binomial(n: u64, r: u64) -> f64 {
    (1..=r).fold(1.0, |acc, i| acc * (n - r + i) as f64 / i as f64)
}

fn check_feasible(d: u64, params: &RsmParams) -> Result<()> {
    let k = params.n_visible() as u64;
    let compositions = if k == 0 {
        0.0
    } else {
        binomial(d + k - 1, k - 1)
    };
    let states = 2f64.powi(params.n_hidden().min(1100) as i32) * compositions;
    if !(states <= EXACT_STATE_LIMIT) {
        return Err(Error::Infeasible {
            states,
            limit: EXACT_STATE_LIMIT,
        });
    }
    Ok(())
}

/// All count vectors of total `d` over `k` words, in lexicographic order.
pub fn compositions(d: u64, k: usize) -> Vec<Vec<u32>> {
    fn rec(rem: u32, slot: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slot + 1 == cur.len() {
            cur[slot] = rem;
            out.push(cur.clone());
            return;
        }
        for c in 0..=rem {
            cur[slot] = c;
            rec(rem - c, slot + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    rec(d as u32, 0, &mut vec![0; k], &mut out);
    out
}

fn hidden_states(h: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u64..1 << h).map(move |bits| (0..h).map(|j| ((bits >> j) & 1) as f64).collect())
}

fn ln_multinomial(counts: &[u32]) -> f64 {
    let d: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    ln_factorial(d)
        - counts
            .iter()
            .map(|&c| ln_factorial(u64::from(c)))
            .sum::<f64>()
}

/// Joint log-weights `ln(D!/Πv_k!) - E(v, h)` over every (composition, hidden
/// state) pair.
fn joint_table(d: u64, params: &RsmParams) -> Result<Vec<(CountVector, Vec<(Vec<f64>, f64)>)>> {
    let h = params.n_hidden();
    compositions(d, params.n_visible())
        .into_iter()
        .map(|dense| {
            let v = CountVector::from_dense("", &dense);
            let ln_mult = ln_multinomial(&dense);
            let row = hidden_states(h)
                .map(|hs| {
                    let e = energy(&v, &hs, params)?;
                    Ok((hs, ln_mult - e))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((v, row))
        })
        .collect()
}

/// Exact `ln p(v)` by enumerating every hidden state and every count vector
/// of the same length; the multinomial coefficient enters both the numerator
/// and the partition function.
pub fn exact_log_likelihood(v: &CountVector, params: &RsmParams) -> Result<f64> {
    check_v(v, params)?;
    check_feasible(v.length_d(), params)?;
    let table = joint_table(v.length_d(), params)?;
    let mut all = Vec::new();
    let mut own = Vec::new();
    for (u, row) in &table {
        let same = u.counts() == v.counts();
        for (_, lw) in row {
            all.push(*lw);
            if same {
                own.push(*lw);
            }
        }
    }
    Ok(log_sum_exp(&own) - log_sum_exp(&all))
}

/// Exact gradient of `ln p(v)` with respect to every parameter: data
/// expectation under `p(h|v)` minus model expectation under `p(v', h)` over
/// documents of the same length. Enumerates like [`exact_log_likelihood`].
pub fn exact_log_likelihood_gradient(v: &CountVector, params: &RsmParams) -> Result<RsmGradient> {
    check_v(v, params)?;
    check_feasible(v.length_d(), params)?;
    let d = v.length_d() as f64;
    let table = joint_table(v.length_d(), params)?;
    let ln_z = log_sum_exp(
        &table
            .iter()
            .flat_map(|(_, row)| row.iter().map(|(_, lw)| *lw))
            .collect::<Vec<_>>(),
    );
    let mut grad = RsmGradient::zeros_like(params);
    let add = |u: &CountVector, hs: &[f64], weight: f64, g: &mut RsmGradient| {
        for (k, c) in u.iter() {
            g.a[k] += weight * f64::from(c);
            for (j, &hj) in hs.iter().enumerate() {
                g.w[[k, j]] += weight * f64::from(c) * hj;
            }
        }
        for (j, &hj) in hs.iter().enumerate() {
            g.b[j] += weight * d * hj;
        }
    };
    for (u, row) in &table {
        for (hs, lw) in row {
            add(u, hs, -(lw - ln_z).exp(), &mut grad);
        }
        if u.counts() == v.counts() {
            let ln_pv = log_sum_exp(&row.iter().map(|(_, lw)| *lw).collect::<Vec<_>>());
            for (hs, lw) in row {
                add(u, hs, (lw - ln_pv).exp(), &mut grad);
            }
        }
    }
    Ok(grad)
}
