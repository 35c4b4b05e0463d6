//! Desk-scale communication game.
//!
//! A sender sees one of `N` images (fixed random feature vectors), scores `K`
//! code words linearly and emits a one-hot code; a receiver maps the code
//! linearly back to feature space and picks an image by inner product. Both
//! are trained by plain SGD on the expected receiver cross-entropy, with the
//! sender's gradient supplied by the chosen estimator.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use latstruct::numcore::{logsumexp, Rng};
use latstruct::simplex::{softmax, sparsemax};
use latstruct::stochastic::{
    explicit_marginal, sfe_gradient, sparsemax_marginal, BaselineConfig, DownstreamFn,
    EstimatorReport,
};
use latstruct::structures::OneOfK;

use crate::error::{config_err, HarnessError, Result};
use crate::output::{num, Artifact, Table, SCHEMA_VERSION};
use crate::stats::spearman;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GameEstimator {
    /// Exact sum over all `K` codes.
    Explicit,
    /// Exact sum over the sparsemax support.
    Sparsemax,
    /// Score function with an EMA baseline.
    Sfe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Number of images `N`.
    pub images: usize,
    /// Number of code words `K`.
    pub codes: usize,
    /// Feature dimension.
    pub dim: usize,
    /// Held-out trials per evaluation.
    pub trials: usize,
    pub estimator: GameEstimator,
    pub lr: f64,
    pub steps: usize,
    /// Steps between evaluations; each CSV row summarizes one window.
    pub eval_every: usize,
    /// Samples per step for the score-function estimator.
    pub samples: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            images: 4,
            codes: 16,
            dim: 8,
            trials: 200,
            estimator: GameEstimator::Explicit,
            lr: 0.1,
            steps: 2000,
            eval_every: 50,
            samples: 4,
        }
    }
}

impl GameConfig {
    fn validate(&self) -> Result<()> {
        if self.images < 2 || self.codes < 2 {
            return Err(config_err("need at least 2 images and 2 codes"));
        }
        if self.dim == 0 || self.trials == 0 || self.eval_every == 0 || self.samples == 0 {
            return Err(config_err(
                "dim, trials, eval-every and samples must be positive",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameRow {
    /// Last step of the window.
    pub step: usize,
    /// Held-out communication success after the window.
    pub success_rate: f64,
    /// Mean decoder calls per step over the window.
    pub decoder_calls: f64,
    /// Mean training loss over the window.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: GameConfig,
    pub rows: Vec<GameRow>,
    pub final_success: f64,
    /// First evaluated step with success ≥ 0.95.
    pub first_step_at_95: Option<usize>,
    /// Spearman correlation between step and decoder calls per step.
    pub calls_trend: f64,
}

impl Artifact for GameReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["step", "success_rate", "decoder_calls", "loss"]);
        for r in &self.rows {
            t.push(vec![
                r.step.to_string(),
                num(r.success_rate),
                num(r.decoder_calls),
                num(r.loss),
            ]);
        }
        t
    }
}

/// Row-major `rows×cols` matrix.
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn random(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = rng
            .normal_vec(rows * cols)
            .into_iter()
            .map(|x| scale * x)
            .collect();
        Self { rows, cols, data }
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.cols)
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self −= lr · a bᵀ`.
    fn sub_outer(&mut self, lr: f64, a: &[f64], b: &[f64]) {
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                self.data[i * self.cols + j] -= lr * ai * bj;
            }
        }
    }
}

struct Players {
    features: Vec<Vec<f64>>,
    /// `K×d`: image features to code scores.
    sender: Mat,
    /// `d×K`: code to receiver query.
    receiver: Mat,
}

impl Players {
    fn receiver_logits(receiver: &Mat, features: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        let q = receiver.mul(z);
        features
            .iter()
            .map(|x| x.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Greedy play: top-scoring code, then top-scoring image.
    fn play(&self, target: usize) -> bool {
        let s = self.sender.mul(&self.features[target]);
        let mut code = 0;
        for (i, &x) in s.iter().enumerate() {
            if x > s[code] {
                code = i;
            }
        }
        let mut z = vec![0.0; self.sender.rows];
        z[code] = 1.0;
        let logits = Self::receiver_logits(&self.receiver, &self.features, &z);
        let mut guess = 0;
        for (j, &x) in logits.iter().enumerate() {
            if x > logits[guess] {
                guess = j;
            }
        }
        guess == target
    }
}

fn evaluate(p: &Players, trials: usize, rng: &mut Rng) -> f64 {
    let wins = (0..trials)
        .filter(|_| p.play(rng.below(p.features.len())))
        .count();
    wins as f64 / trials as f64
}

/// Receiver cross-entropy for one code, and `∂/∂q` of it where `q = W_r z`.
fn loss_and_query_grad(
    features: &[Vec<f64>],
    receiver: &Mat,
    z: &[f64],
    target: usize,
) -> (f64, Vec<f64>) {
    let logits = Players::receiver_logits(receiver, features, z);
    let lse = logsumexp(&logits);
    let mut q = vec![0.0; receiver.rows];
    for (x, l) in features.iter().zip(&logits) {
        let p = (l - lse).exp();
        q.iter_mut().zip(x).for_each(|(a, b)| *a += p * b);
    }
    q.iter_mut()
        .zip(&features[target])
        .for_each(|(a, b)| *a -= b);
    (lse - logits[target], q)
}

/// Trains the pair and logs held-out success and decoder calls per window.
pub fn run(cfg: &GameConfig, seed: u64) -> Result<GameReport> {
    cfg.validate()?;
    let mut root = Rng::seed(seed);
    let mut init = root.split();
    let mut train = root.split();
    let mut eval = root.split();

    let features: Vec<Vec<f64>> = (0..cfg.images).map(|_| init.normal_vec(cfg.dim)).collect();
    let features = Arc::new(features);
    let mut players = Players {
        features: features.to_vec(),
        sender: Mat::random(cfg.codes, cfg.dim, 0.01, &mut init),
        receiver: Mat::random(cfg.dim, cfg.codes, 0.1, &mut init),
    };
    let domain = OneOfK::new(cfg.codes);
    let mut baseline = BaselineConfig::ema();

    let mut rows = Vec::new();
    let (mut window_calls, mut window_loss, mut window_len) = (0usize, 0.0, 0usize);
    for step in 1..=cfg.steps {
        let target = train.below(cfg.images);
        let x = &features[target];
        let s = players.sender.mul(x);

        // The decoder is frozen for this step; record where it is evaluated.
        let visited: Arc<Mutex<Vec<Vec<f64>>>> = Arc::default();
        let g = {
            let (feats, log) = (Arc::clone(&features), Arc::clone(&visited));
            let receiver = Mat {
                rows: players.receiver.rows,
                cols: players.receiver.cols,
                data: players.receiver.data.clone(),
            };
            DownstreamFn::new(move |z| {
                log.lock().expect("visit log poisoned").push(z.to_vec());
                loss_and_query_grad(&feats, &receiver, z, target).0
            })
        };
        let report: EstimatorReport = match cfg.estimator {
            GameEstimator::Explicit => explicit_marginal(&domain, &s, &g)?,
            GameEstimator::Sparsemax => sparsemax_marginal(&domain, &s, &g, None)?,
            GameEstimator::Sfe => {
                sfe_gradient(&domain, &s, &g, cfg.samples, &mut baseline, &mut train)?
            }
        };
        if !report.value.is_finite() || report.gradient.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Diverged {
                step,
                detail: format!("loss {}", report.value),
            });
        }

        // Receiver gradient: the same weighting of per-code gradients the
        // estimator used for its value.
        let visited = std::mem::take(&mut *visited.lock().expect("visit log poisoned"));
        let weights: Vec<f64> = match cfg.estimator {
            GameEstimator::Explicit => softmax(&s)?.probs,
            GameEstimator::Sparsemax => sparsemax(&s)?.probs.probs,
            GameEstimator::Sfe => vec![1.0 / visited.len() as f64; cfg.codes],
        };
        let mut recv_grad = vec![0.0; cfg.dim * cfg.codes];
        for z in &visited {
            let code = z.iter().position(|&b| b == 1.0).unwrap_or(0);
            let w = match cfg.estimator {
                GameEstimator::Sfe => weights[0],
                _ => weights[code],
            };
            let (_, q) = loss_and_query_grad(&features, &players.receiver, z, target);
            for (i, qi) in q.iter().enumerate() {
                recv_grad[i * cfg.codes + code] += w * qi;
            }
        }
        players.sender.sub_outer(cfg.lr, &report.gradient, x);
        players
            .receiver
            .data
            .iter_mut()
            .zip(&recv_grad)
            .for_each(|(a, g)| *a -= cfg.lr * g);

        window_calls += report.decoder_calls;
        window_loss += report.value;
        window_len += 1;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            rows.push(GameRow {
                step,
                success_rate: evaluate(&players, cfg.trials, &mut eval),
                decoder_calls: window_calls as f64 / window_len as f64,
                loss: window_loss / window_len as f64,
            });
            (window_calls, window_loss, window_len) = (0, 0.0, 0);
        }
    }
    let steps: Vec<f64> = rows.iter().map(|r| r.step as f64).collect();
    let calls: Vec<f64> = rows.iter().map(|r| r.decoder_calls).collect();
    Ok(GameReport {
        schema_version: SCHEMA_VERSION,
        seed,
        config: cfg.clone(),
        final_success: rows.last().map_or(0.0, |r| r.success_rate),
        first_step_at_95: rows.iter().find(|r| r.success_rate >= 0.95).map(|r| r.step),
        calls_trend: spearman(&steps, &calls),
        rows,
    })
}
