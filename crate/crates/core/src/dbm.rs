//! Two-hidden-layer model: a Replicated Softmax first layer stacked under a
//! binary-binary RBM, with tied weights for the deterministic encode/decode
//! maps
//!
//! ```text
//! h1 = σ(W1ᵀ v + D b1)        ṽ  = σ(W2ᵀ h1 + b2)
//! h1' = σ(W2 ṽ + b2')         v̂  = σ(W1 h1' + b1')
//! ```
//!
//! where `b1'`, `b2'` are the visible-side biases of each layer. A document's
//! reconstruction error is `ε = Σ_k |v̂_k - v_k|`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CountVector, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::{log_sigma, sigma};
use crate::rsm::{self, apply_momentum, EpochRecord, RsmParams, TrainConfig};

pub use crate::numeric::sigma as activation;

/// Training-log layer tag for joint fine-tuning epochs.
pub const FINE_TUNE_LAYER: usize = 0;

/// Binary-binary RBM: `w` is H1×H2, `a` the H1 visible-side biases, `b` the
/// H2 hidden biases.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmParams {
            w: Array2::zeros((n_visible, n_hidden)),
            a: Array1::zeros(n_visible),
            b: Array1::zeros(n_hidden),
        }
    }

    pub fn random(n_visible: usize, n_hidden: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        // Same draw order as the first layer so both initializations are
        // reproducible from their seeds alone.
        let p = RsmParams::random(n_visible, n_hidden, sigma, rng);
        RbmParams {
            w: p.w,
            a: p.a,
            b: p.b,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .all(|x| x.is_finite())
    }

    pub fn hidden_probs(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (self.w.t().dot(&x) + &self.b).mapv_into(sigma)
    }

    pub fn visible_probs(&self, h: ArrayView1<f64>) -> Array1<f64> {
        (self.w.dot(&h) + &self.a).mapv_into(sigma)
    }
}

/// The stacked model with its vocabulary and training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct DbmModel {
    pub vocab: Vocabulary,
    pub layer1: RsmParams,
    pub layer2: RbmParams,
    pub training_log: Vec<EpochRecord>,
}

impl DbmModel {
    /// The untrained model `pretrain` starts from: each layer drawn from a
    /// generator seeded with its own config seed.
    pub fn initial(
        vocab: Vocabulary,
        h1: usize,
        h2: usize,
        cfg1: &TrainConfig,
        cfg2: &TrainConfig,
    ) -> Self {
        let k = vocab.len();
        let layer1 = RsmParams::random(
            k,
            h1,
            cfg1.weight_init_sigma,
            &mut ChaCha8Rng::seed_from_u64(cfg1.seed),
        );
        let layer2 = RbmParams::random(
            h1,
            h2,
            cfg2.weight_init_sigma,
            &mut ChaCha8Rng::seed_from_u64(cfg2.seed),
        );
        DbmModel {
            vocab,
            layer1,
            layer2,
            training_log: Vec::new(),
        }
    }

    pub fn n_visible(&self) -> usize {
        self.layer1.n_visible()
    }

    pub fn n_hidden1(&self) -> usize {
        self.layer1.n_hidden()
    }

    pub fn n_hidden2(&self) -> usize {
        self.layer2.w.ncols()
    }

    /// Checks layer shapes against each other and the vocabulary.
    pub fn validate(&self) -> Result<()> {
        let mismatch = |what, expected, got| {
            Err(Error::DimensionMismatch {
                what,
                expected,
                got,
            })
        };
        let k = self.vocab.len();
        let (h1, h2) = (self.n_hidden1(), self.n_hidden2());
        if self.layer1.w.nrows() != k {
            return mismatch("layer-1 rows vs vocabulary", k, self.layer1.w.nrows());
        }
        if self.layer1.a.len() != k {
            return mismatch("layer-1 visible bias", k, self.layer1.a.len());
        }
        if self.layer1.b.len() != h1 {
            return mismatch("layer-1 hidden bias", h1, self.layer1.b.len());
        }
        if self.layer2.w.nrows() != h1 {
            return mismatch(
                "layer-2 rows vs layer-1 hidden units",
                h1,
                self.layer2.w.nrows(),
            );
        }
        if self.layer2.a.len() != h1 {
            return mismatch("layer-2 visible bias", h1, self.layer2.a.len());
        }
        if self.layer2.b.len() != h2 {
            return mismatch("layer-2 hidden bias", h2, self.layer2.b.len());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layer1.is_finite() && self.layer2.is_finite()
    }
}

/// Distance used for the reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorNorm {
    #[default]
    L1,
    L2,
}

/// Latent embedding `ṽ = σ(W2ᵀ σ(W1ᵀ v + D b1) + b2)`.
pub fn encode(v: &CountVector, model: &DbmModel) -> Result<Array1<f64>> {
    Ok(forward(v, model)?.latent)
}

/// Reconstruction `v̂ = σ(W1 σ(W2 ṽ + b2') + b1')`. The document length is
/// not used by the tied decoder; it is accepted for symmetry with `encode`.
pub fn decode(latent: &[f64], model: &DbmModel, _d: u64) -> Result<Array1<f64>> {
    if latent.len() != model.n_hidden2() {
        return Err(Error::DimensionMismatch {
            what: "latent vector length",
            expected: model.n_hidden2(),
            got: latent.len(),
        });
    }
    if latent.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidArgument(
            "latent entries must lie in [0, 1]".into(),
        ));
    }
    let latent = ArrayView1::from(latent);
    let h1p = model.layer2.visible_probs(latent);
    Ok((model.layer1.w.dot(&h1p) + &model.layer1.a).mapv_into(sigma))
}

/// `Σ_k |v̂_k - v_k|`.
pub fn reconstruction_error(v: &CountVector, v_hat: &[f64]) -> Result<f64> {
    reconstruction_distance(v, v_hat, ErrorNorm::L1)
}

pub fn reconstruction_distance(v: &CountVector, v_hat: &[f64], norm: ErrorNorm) -> Result<f64> {
    v.check_dimension(v_hat.len())?;
    Ok(dense_distance(&v.to_dense(v_hat.len()), v_hat, norm))
}

/// Distance between two dense vectors of equal length.
pub fn dense_distance(x: &[f64], y: &[f64], norm: ErrorNorm) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let diffs = x.iter().zip(y).map(|(a, b)| (a - b).abs());
    match norm {
        ErrorNorm::L1 => diffs.sum(),
        ErrorNorm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    }
}

/// Activations of one deterministic encode→decode pass.
#[derive(Debug, Clone)]
pub struct Pass {
    pub h1: Array1<f64>,
    pub latent: Array1<f64>,
    pub h1_prime: Array1<f64>,
    pub v_hat: Array1<f64>,
    z4: Array1<f64>,
}

fn forward(v: &CountVector, model: &DbmModel) -> Result<Pass> {
    model.validate()?;
    let h1 = rsm::hidden_probs(v, &model.layer1)?;
    let latent = model.layer2.hidden_probs(h1.view());
    let h1_prime = model.layer2.visible_probs(latent.view());
    let z4 = model.layer1.w.dot(&h1_prime) + &model.layer1.a;
    let v_hat = z4.mapv(sigma);
    Ok(Pass {
        h1,
        latent,
        h1_prime,
        v_hat,
        z4,
    })
}

/// Full encode→decode pass, keeping intermediate activations.
pub fn reconstruct(v: &CountVector, model: &DbmModel) -> Result<Pass> {
    forward(v, model)
}

/// Latent embeddings of every document as rows of an N×H2 matrix.
pub fn encode_all(vectors: &[CountVector], model: &DbmModel) -> Result<Array2<f64>> {
    let rows: Vec<Array1<f64>> = vectors
        .par_iter()
        .map(|v| encode(v, model))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((rows.len(), model.n_hidden2()));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// Error of each document under `model`, in input order.
pub fn reconstruction_errors(
    vectors: &[CountVector],
    model: &DbmModel,
    norm: ErrorNorm,
) -> Result<Vec<f64>> {
    vectors
        .par_iter()
        .map(|v| {
            let pass = forward(v, model)?;
            reconstruction_distance(v, pass.v_hat.as_slice().expect("contiguous"), norm)
        })
        .collect()
}

fn mean_error(vectors: &[CountVector], model: &DbmModel, norm: ErrorNorm) -> Result<f64> {
    let errs = reconstruction_errors(vectors, model, norm)?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

struct RbmChainEnd {
    ph0: Array1<f64>,
    vneg: Array1<f64>,
    phneg: Array1<f64>,
}

fn rbm_chain(x: ArrayView1<f64>, p: &RbmParams, k: usize, rng: &mut impl Rng) -> RbmChainEnd {
    let ph0 = p.hidden_probs(x);
    let mut h = Array1::from(rsm::sample_hidden(ph0.as_slice().expect("contiguous"), rng));
    let mut vneg = p.visible_probs(h.view());
    let mut phneg = p.hidden_probs(vneg.view());
    for _ in 1..k {
        h = Array1::from(rsm::sample_hidden(
            phneg.as_slice().expect("contiguous"),
            rng,
        ));
        vneg = p.visible_probs(h.view());
        phneg = p.hidden_probs(vneg.view());
    }
    RbmChainEnd { ph0, vneg, phneg }
}

/// Mean per-unit binary cross-entropy of `data` rows against their
/// mean-field reconstructions `σ(W p(h|x) + a)`.
pub fn rbm_reconstruction_ce(data: &Array2<f64>, p: &RbmParams) -> f64 {
    if data.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = data
        .axis_iter(Axis(0))
        .map(|x| {
            let ph = p.hidden_probs(x);
            let z = p.w.dot(&ph) + &p.a;
            x.iter()
                .zip(&z)
                .map(|(&t, &z)| -(t * log_sigma(z) + (1.0 - t) * log_sigma(-z)))
                .sum::<f64>()
                / x.len().max(1) as f64
        })
        .sum();
    total / data.nrows() as f64
}

/// One CD-k step of the binary-binary layer. The negative chain samples
/// binary hidden states and uses mean-field visible reconstructions; the
/// hidden bias is not scaled.
pub fn rbm_cd_step(
    batch: &[ArrayView1<f64>],
    params: &mut RbmParams,
    velocity: &mut RbmParams,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) {
    let mut gw = Array2::<f64>::zeros(params.w.raw_dim());
    let mut ga = Array1::<f64>::zeros(params.a.len());
    let mut gb = Array1::<f64>::zeros(params.b.len());
    for x in batch {
        let c = rbm_chain(x.view(), params, cfg.cd_k, rng);
        for (i, (&xi, &vi)) in x.iter().zip(&c.vneg).enumerate() {
            let mut row = gw.row_mut(i);
            row.scaled_add(xi, &c.ph0);
            row.scaled_add(-vi, &c.phneg);
            ga[i] += xi - vi;
        }
        gb += &c.ph0;
        gb -= &c.phneg;
    }
    let scale = cfg.learning_rate / batch.len().max(1) as f64;
    apply_momentum(&mut velocity.w, &gw, cfg.momentum, scale);
    apply_momentum(&mut velocity.a, &ga, cfg.momentum, scale);
    apply_momentum(&mut velocity.b, &gb, cfg.momentum, scale);
    params.w += &velocity.w;
    params.a += &velocity.a;
    params.b += &velocity.b;
}

fn train_rbm(
    data: &Array2<f64>,
    params: &mut RbmParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochRecord>> {
    let mut log = vec![EpochRecord {
        epoch: 0,
        layer: 2,
        statistic: rbm_reconstruction_ce(data, params),
    }];
    let mut velocity = RbmParams::zeros(params.w.nrows(), params.w.ncols());
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ArrayView1<f64>> = chunk.iter().map(|&i| data.row(i)).collect();
            rbm_cd_step(&batch, params, &mut velocity, cfg, rng);
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!(
                "layer 2 parameters after epoch {epoch}"
            )));
        }
        let statistic = rbm_reconstruction_ce(data, params);
        log::debug!("rbm epoch {epoch}: reconstruction ce {statistic:.6}");
        log.push(EpochRecord {
            epoch,
            layer: 2,
            statistic,
        });
    }
    Ok(log)
}

/// Greedy layerwise pretraining: the first layer by Replicated Softmax CD on
/// the counts, then the second layer by binary CD on the first layer's hidden
/// probabilities.
pub fn pretrain(
    corpus: &[CountVector],
    vocab: Vocabulary,
    cfg1: &TrainConfig,
    cfg2: &TrainConfig,
    h1: usize,
    h2: usize,
) -> Result<DbmModel> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train on an empty corpus".into(),
        ));
    }
    if vocab.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train with an empty vocabulary".into(),
        ));
    }
    if h1 == 0 || h2 == 0 {
        return Err(Error::InvalidArgument(
            "hidden layer sizes must be at least 1".into(),
        ));
    }
    cfg1.validate()?;
    cfg2.validate()?;
    for v in corpus {
        v.check_dimension(vocab.len())?;
    }
    let k = vocab.len();

    let mut rng1 = ChaCha8Rng::seed_from_u64(cfg1.seed);
    let mut layer1 = RsmParams::random(k, h1, cfg1.weight_init_sigma, &mut rng1);
    if cfg1.visible_bias_from_freq {
        layer1.init_visible_from_frequencies(corpus);
    }
    let mut training_log = rsm::train_from(corpus, &mut layer1, cfg1, &mut rng1)?;

    let mut features = Array2::zeros((corpus.len(), h1));
    for (mut row, v) in features.axis_iter_mut(Axis(0)).zip(corpus) {
        row.assign(&rsm::hidden_probs(v, &layer1)?);
    }
    let mut rng2 = ChaCha8Rng::seed_from_u64(cfg2.seed);
    let mut layer2 = RbmParams::random(h1, h2, cfg2.weight_init_sigma, &mut rng2);
    training_log.extend(train_rbm(&features, &mut layer2, cfg2, &mut rng2)?);

    Ok(DbmModel {
        vocab,
        layer1,
        layer2,
        training_log,
    })
}

/// Gradient of the fine-tuning loss with the layout of a [`DbmModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DbmGradient {
    pub w1: Array2<f64>,
    pub a1: Array1<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub a2: Array1<f64>,
    pub b2: Array1<f64>,
}

impl DbmGradient {
    fn zeros_like(m: &DbmModel) -> Self {
        DbmGradient {
            w1: Array2::zeros(m.layer1.w.raw_dim()),
            a1: Array1::zeros(m.layer1.a.len()),
            b1: Array1::zeros(m.layer1.b.len()),
            w2: Array2::zeros(m.layer2.w.raw_dim()),
            a2: Array1::zeros(m.layer2.a.len()),
            b2: Array1::zeros(m.layer2.b.len()),
        }
    }

    fn add(&mut self, o: &DbmGradient) {
        self.w1 += &o.w1;
        self.a1 += &o.a1;
        self.b1 += &o.b1;
        self.w2 += &o.w2;
        self.a2 += &o.a2;
        self.b2 += &o.b2;
    }
}

/// Bernoulli cross-entropy between the reconstruction `v̂` and word presence
/// `min(v_k, 1)`, summed over the vocabulary.
pub fn autoencoder_loss(v: &CountVector, model: &DbmModel) -> Result<f64> {
    let pass = forward(v, model)?;
    Ok(presence_ce(v, &pass.z4))
}

fn presence_ce(v: &CountVector, z4: &Array1<f64>) -> f64 {
    z4.iter()
        .enumerate()
        .map(|(k, &z)| {
            if v.get(k) > 0 {
                -log_sigma(z)
            } else {
                -log_sigma(-z)
            }
        })
        .sum()
}

/// Loss and its gradient for one document, by backpropagation through the
/// tied encode→decode map.
pub fn autoencoder_loss_and_grad(v: &CountVector, model: &DbmModel) -> Result<(f64, DbmGradient)> {
    let pass = forward(v, model)?;
    let d = v.length_d() as f64;
    let w1 = &model.layer1.w;
    let w2 = &model.layer2.w;
    let dsig = |y: &Array1<f64>| y.mapv(|s| s * (1.0 - s));

    let mut dz4 = pass.v_hat.clone();
    for (k, c) in v.iter() {
        if c > 0 {
            dz4[k] -= 1.0;
        }
    }
    let mut g = DbmGradient::zeros_like(model);
    // v̂ = σ(W1 h1' + a1)
    g.w1 += &outer(&dz4, &pass.h1_prime);
    g.a1.assign(&dz4);
    let dz3 = w1.t().dot(&dz4) * dsig(&pass.h1_prime);
    // h1' = σ(W2 ṽ + a2)
    g.w2 += &outer(&dz3, &pass.latent);
    g.a2.assign(&dz3);
    let dz2 = w2.t().dot(&dz3) * dsig(&pass.latent);
    // ṽ = σ(W2ᵀ h1 + b2)
    g.w2 += &outer(&pass.h1, &dz2);
    g.b2.assign(&dz2);
    let dz1 = w2.dot(&dz2) * dsig(&pass.h1);
    // h1 = σ(W1ᵀ v + D b1)
    for (k, c) in v.iter() {
        g.w1.row_mut(k).scaled_add(f64::from(c), &dz1);
    }
    g.b1 = dz1 * d;
    Ok((presence_ce(v, &pass.z4), g))
}

fn outer(x: &Array1<f64>, y: &Array1<f64>) -> Array2<f64> {
    let xc = x.view().insert_axis(Axis(1));
    let yr = y.view().insert_axis(Axis(0));
    xc.dot(&yr)
}

/// Fine-tuning settings: optimizer, early-stopping patience and the holdout
/// error norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub train: TrainConfig,
    pub patience: usize,
    pub norm: ErrorNorm,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            train: TrainConfig {
                learning_rate: 0.01,
                momentum: 0.5,
                epochs: 20,
                ..TrainConfig::default()
            },
            patience: 5,
            norm: ErrorNorm::L1,
        }
    }
}

/// Gradient descent on the encode→decode cross-entropy of `train`, keeping
/// the parameters with the lowest holdout mean reconstruction error (the input
/// model included). Stops after `patience` epochs without improvement.
pub fn fine_tune(
    model: &DbmModel,
    train: &[CountVector],
    holdout: &[CountVector],
    cfg: &FineTuneConfig,
) -> Result<DbmModel> {
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::InvalidInput(
            "fine-tuning needs non-empty train and holdout sets".into(),
        ));
    }
    cfg.train.validate()?;
    model.validate()?;
    for v in train.iter().chain(holdout) {
        v.check_dimension(model.n_visible())?;
    }
    let tc = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut current = model.clone();
    let mut velocity = DbmGradient::zeros_like(model);
    let mut best_score = mean_error(holdout, model, cfg.norm)?;
    let mut best = model.clone();
    let mut log = vec![EpochRecord {
        epoch: 0,
        layer: FINE_TUNE_LAYER,
        statistic: best_score,
    }];
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch_size) {
            let grads: Vec<DbmGradient> = chunk
                .par_iter()
                .map(|&i| autoencoder_loss_and_grad(&train[i], &current).map(|(_, g)| g))
                .collect::<Result<_>>()?;
            let mut total = DbmGradient::zeros_like(&current);
            for g in &grads {
                total.add(g);
            }
            // Descent: step against the gradient.
            let scale = -tc.learning_rate / chunk.len() as f64;
            apply_momentum(&mut velocity.w1, &total.w1, tc.momentum, scale);
            apply_momentum(&mut velocity.a1, &total.a1, tc.momentum, scale);
            apply_momentum(&mut velocity.b1, &total.b1, tc.momentum, scale);
            apply_momentum(&mut velocity.w2, &total.w2, tc.momentum, scale);
            apply_momentum(&mut velocity.a2, &total.a2, tc.momentum, scale);
            apply_momentum(&mut velocity.b2, &total.b2, tc.momentum, scale);
            current.layer1.w += &velocity.w1;
            current.layer1.a += &velocity.a1;
            current.layer1.b += &velocity.b1;
            current.layer2.w += &velocity.w2;
            current.layer2.a += &velocity.a2;
            current.layer2.b += &velocity.b2;
        }
        if !current.is_finite() {
            return Err(Error::NonFinite(format!(
                "fine-tuned parameters after epoch {epoch}"
            )));
        }
        let score = mean_error(holdout, &current, cfg.norm)?;
        log::debug!("fine-tune epoch {epoch}: holdout mean error {score:.6}");
        log.push(EpochRecord {
            epoch,
            layer: FINE_TUNE_LAYER,
            statistic: score,
        });
        if score < best_score {
            best_score = score;
            best = current.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    best.training_log = model.training_log.clone();
    best.training_log.extend(log);
    Ok(best)
}
