//! RMSProp and the two training loops.
//!
//! Both loops draw a fresh target network every step and never update it.
//! Inverse training minimizes `|G(F(G(x), G)) - G(x)|_1`; compression
//! training jointly fits an encoder `F1(G)` and decoder `F2(x, code)` under a
//! mean squared error against `G(x)`.
//!
//! A run is strictly sequential. Periodic evaluation fans trials out over
//! rayon, each on its own derived random stream, and reduces in trial order,
//! so thread count never changes a result.

use rayon::prelude::*;

use crate::autodiff::{GradientMap, Graph};
use crate::checkpoint::{Checkpoint, MetricsRecord, ModelRecords, OptimizerRecord, RowRecord, FORMAT_VERSION};
use crate::config::{Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::hexfloat::{Hex, HexVec};
use crate::host::NnpnnParams;
use crate::metrics::{manhattan_ratio, summarize, EvalStats, MetricsHistory, MetricsRow};
use crate::networks::{generate_nn, random_input, DenseNetwork, MetaNetwork, NetTemplate};
use crate::rng::Rng;

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct RmsState {
    pub v: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
}

impl RmsState {
    pub fn new(len: usize, lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            v: vec![0.0; len],
            rho,
            eps,
            lr,
        }
    }

    /// `v <- rho v + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(v) + eps)`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.v.len() || grads.len() != self.v.len() {
            return Err(Error::Structural(format!(
                "rmsprop: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.v.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Data(format!("non-finite gradient at parameter {i}")));
        }
        for ((theta, v), g) in params.iter_mut().zip(&mut self.v).zip(grads) {
            *v = self.rho * *v + (1.0 - self.rho) * g * g;
            *theta -= self.lr * g / (v.sqrt() + self.eps);
        }
        Ok(())
    }

    fn record(&self, name: &str) -> OptimizerRecord {
        OptimizerRecord {
            name: name.into(),
            lr: Hex(self.lr),
            rho: Hex(self.rho),
            eps: Hex(self.eps),
            v: HexVec(self.v.clone()),
        }
    }

    fn from_record(r: &OptimizerRecord, len: usize) -> Result<Self> {
        if r.v.0.len() != len || r.v.0.iter().any(|v| *v < 0.0) {
            return Err(Error::Checkpoint(format!(
                "shape mismatch: optimizer {:?} has {} accumulators, model has {len} parameters",
                r.name,
                r.v.0.len()
            )));
        }
        Ok(Self {
            v: r.v.0.clone(),
            rho: r.rho.0,
            eps: r.eps.0,
            lr: r.lr.0,
        })
    }
}

/// One target network and the input drawn for it.
#[derive(Clone, Debug)]
pub struct Draw {
    pub network: DenseNetwork,
    pub input: Vec<f64>,
}

impl Draw {
    pub fn sample(rng: &mut Rng, template: &NetTemplate) -> Result<Self> {
        let network = generate_nn(rng, template)?;
        let input = random_input(rng, template.input_dim);
        Ok(Self { network, input })
    }
}

/// Mean over `draws` of `mae(G(F(G(x), G)), G(x))`, with gradients for the host.
pub fn inverse_objective(host: &NnpnnParams, draws: &[Draw]) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let set = host.bind(&mut g);
    let mut losses = Vec::with_capacity(draws.len());
    for d in draws {
        let target = d.network.eval(&d.input)?;
        let arg = g.input(target.clone())?;
        let (out, _) = host.forward(&mut g, Some(set), Some(arg), &d.network)?;
        let image = d.network.forward(&mut g, out)?;
        losses.push(g.mae_loss(image, &target)?);
    }
    let loss = mean_node(&mut g, &losses)?;
    let value = g.value(loss)[0];
    let grads = g.backward(loss)?;
    Ok((value, grads.into_sets().swap_remove(0)))
}

/// Mean over `draws` of `mse(F2(x, F1(G)), G(x))`, with gradients for
/// encoder and decoder.
pub fn compression_objective(
    encoder: &NnpnnParams,
    decoder: &MetaNetwork,
    draws: &[Draw],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let enc = encoder.bind(&mut g);
    let dec = decoder.bind(&mut g);
    let mut losses = Vec::with_capacity(draws.len());
    for d in draws {
        let target = d.network.eval(&d.input)?;
        let (code, _) = encoder.forward(&mut g, Some(enc), None, &d.network)?;
        let x = g.input(d.input.clone())?;
        let y = decoder.forward(&mut g, Some(dec), x, code)?;
        losses.push(g.mse_loss(y, &target)?);
    }
    let loss = mean_node(&mut g, &losses)?;
    let value = g.value(loss)[0];
    let grads: GradientMap = g.backward(loss)?;
    let mut sets = grads.into_sets();
    let dec_grads = sets.pop().expect("decoder set");
    let enc_grads = sets.pop().expect("encoder set");
    Ok((value, enc_grads, dec_grads))
}

fn mean_node(g: &mut Graph<'_>, losses: &[crate::autodiff::VecNode]) -> Result<crate::autodiff::VecNode> {
    match losses {
        [single] => Ok(*single),
        many => g.mean(many),
    }
}

/// The host's preimage estimate `F(G(x), G)`.
pub fn invert(host: &NnpnnParams, network: &DenseNetwork, target: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let arg = g.input(target.to_vec())?;
    let (out, _) = host.forward(&mut g, None, Some(arg), network)?;
    Ok(g.value(out).to_vec())
}

/// The decoder's reconstruction `F2(x, F1(G))`.
pub fn reconstruct(
    encoder: &NnpnnParams,
    decoder: &MetaNetwork,
    network: &DenseNetwork,
    x: &[f64],
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let (code, _) = encoder.forward(&mut g, None, None, network)?;
    let xn = g.input(x.to_vec())?;
    let y = decoder.forward(&mut g, None, xn, code)?;
    Ok(g.value(y).to_vec())
}

/// Per-example mean squared error, the compression evaluation statistic.
pub fn example_mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / target.len().max(1) as f64
}

/// Runs `trials` independent trials; trial `i` draws from `rng.derive(i)` and
/// is redrawn on [`Error::ResampleRequired`]. Results keep trial order.
fn run_trials<T, F>(rng: &Rng, template: &NetTemplate, trials: usize, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Draw) -> Result<T> + Sync,
{
    if trials == 0 {
        return Err(Error::Structural("evaluation needs at least one trial".into()));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i);
            loop {
                let draw = Draw::sample(&mut r, template)?;
                match trial(&draw) {
                    Err(Error::ResampleRequired) => continue,
                    other => return other,
                }
            }
        })
        .collect()
}

/// Deviation `|G(inverse) - G(x)|_1 / |G(x)|_1` over fresh trials, with the
/// preimage supplied by `inverter(network, G(x), x)`.
pub fn evaluate_inverse_with<F>(rng: &Rng, template: &NetTemplate, trials: usize, inverter: F) -> Result<EvalStats>
where
    F: Fn(&DenseNetwork, &[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    let ratios = run_trials(rng, template, trials, |d| {
        let target = d.network.eval(&d.input)?;
        let guess = inverter(&d.network, &target, &d.input)?;
        let image = d.network.eval(&guess)?;
        manhattan_ratio(&image, &target)
    })?;
    summarize(&ratios)
}

pub fn evaluate_inverse(host: &NnpnnParams, template: &NetTemplate, rng: &Rng, trials: usize) -> Result<EvalStats> {
    evaluate_inverse_with(rng, template, trials, |net, target, _| invert(host, net, target))
}

/// Per-example MSE statistics and Manhattan deviation of the reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CompressionStats {
    pub mse: EvalStats,
    pub ratio: EvalStats,
}

pub fn evaluate_compression_with<F>(
    rng: &Rng,
    template: &NetTemplate,
    trials: usize,
    predict: F,
) -> Result<CompressionStats>
where
    F: Fn(&DenseNetwork, &[f64]) -> Result<Vec<f64>> + Sync,
{
    let pairs = run_trials(rng, template, trials, |d| {
        let target = d.network.eval(&d.input)?;
        let pred = predict(&d.network, &d.input)?;
        let ratio = manhattan_ratio(&pred, &target)?;
        Ok((example_mse(&pred, &target), ratio))
    })?;
    let (mse, ratio): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(CompressionStats {
        mse: summarize(&mse)?,
        ratio: summarize(&ratio)?,
    })
}

pub fn evaluate_compression(
    encoder: &NnpnnParams,
    decoder: &MetaNetwork,
    template: &NetTemplate,
    rng: &Rng,
    trials: usize,
) -> Result<CompressionStats> {
    evaluate_compression_with(rng, template, trials, |net, x| reconstruct(encoder, decoder, net, x))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Models {
    Inverse { host: NnpnnParams },
    Compress { encoder: NnpnnParams, decoder: MetaNetwork },
}

/// A resumable training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: RunConfig,
    iteration: u64,
    rng: Rng,
    models: Models,
    optim: Vec<RmsState>,
    history: MetricsHistory,
    window_sum: f64,
    window_count: u64,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let mut init = root.derive(INIT_STREAM);
        let rms = |n: usize| RmsState::new(n, cfg.lr, cfg.rho, cfg.eps);
        let (models, optim) = match cfg.experiment {
            Experiment::Inverse => {
                let host = NnpnnParams::init(cfg.host_config(), &mut init)?;
                let optim = vec![rms(host.param_count())];
                (Models::Inverse { host }, optim)
            }
            Experiment::Compress => {
                let encoder = NnpnnParams::init(cfg.host_config(), &mut init)?;
                let decoder = MetaNetwork::init(cfg.meta_config(), &mut init)?;
                let optim = vec![rms(encoder.param_count()), rms(decoder.param_count())];
                (Models::Compress { encoder, decoder }, optim)
            }
        };
        Ok(Self {
            rng: root.derive(TRAIN_STREAM),
            cfg,
            iteration: 0,
            models,
            optim,
            history: MetricsHistory::default(),
            window_sum: 0.0,
            window_count: 0,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        let cfg = ck.config.clone();
        cfg.validate()?;
        let mismatch = |what: &str| Error::Checkpoint(format!("shape mismatch: {what} disagrees with config"));
        let (models, optim) = match (&ck.models, cfg.experiment) {
            (ModelRecords::Inverse { host }, Experiment::Inverse) => {
                let host = NnpnnParams::from_record(host)?;
                if *host.config() != cfg.host_config() {
                    return Err(mismatch("host"));
                }
                let [o] = ck.optimizer.as_slice() else {
                    return Err(mismatch("optimizer count"));
                };
                let optim = vec![RmsState::from_record(o, host.param_count())?];
                (Models::Inverse { host }, optim)
            }
            (ModelRecords::Compress { encoder, decoder }, Experiment::Compress) => {
                let encoder = NnpnnParams::from_record(encoder)?;
                let decoder = MetaNetwork::from_record(decoder)?;
                if *encoder.config() != cfg.host_config() {
                    return Err(mismatch("encoder"));
                }
                if *decoder.config() != cfg.meta_config() {
                    return Err(mismatch("decoder"));
                }
                let [o1, o2] = ck.optimizer.as_slice() else {
                    return Err(mismatch("optimizer count"));
                };
                let optim = vec![
                    RmsState::from_record(o1, encoder.param_count())?,
                    RmsState::from_record(o2, decoder.param_count())?,
                ];
                (Models::Compress { encoder, decoder }, optim)
            }
            _ => return Err(mismatch("experiment")),
        };
        Ok(Self {
            rng: Rng::from_state(&ck.rng)?,
            cfg,
            iteration: ck.iteration,
            models,
            optim,
            history: MetricsHistory {
                rows: ck.metrics.rows.iter().map(MetricsRow::from).collect(),
            },
            window_sum: ck.metrics.window_sum.0,
            window_count: ck.metrics.window_count,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Changes the total iteration target recorded in the run configuration.
    pub fn set_iterations(&mut self, iterations: u64) {
        self.cfg.iterations = iterations;
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    /// Rows logged at multiples of `eval_every`.
    pub fn history(&self) -> &MetricsHistory {
        &self.history
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (models, names): (ModelRecords, &[&str]) = match &self.models {
            Models::Inverse { host } => (ModelRecords::Inverse { host: host.to_record() }, &["host"]),
            Models::Compress { encoder, decoder } => (
                ModelRecords::Compress {
                    encoder: encoder.to_record(),
                    decoder: decoder.to_record(),
                },
                &["encoder", "decoder"],
            ),
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: self.cfg.clone(),
            iteration: self.iteration,
            rng: self.rng.state(),
            models,
            optimizer: self.optim.iter().zip(names).map(|(o, n)| o.record(n)).collect(),
            metrics: MetricsRecord {
                rows: self.history.rows.iter().map(RowRecord::from).collect(),
                window_sum: Hex(self.window_sum),
                window_count: self.window_count,
            },
        }
    }

    /// One optimizer step on a fresh batch. On failure the trainer is left
    /// exactly as it was before the call.
    pub fn step(&mut self) -> Result<f64> {
        let before = self.rng.clone();
        let result = self.try_step();
        if result.is_err() {
            self.rng = before;
        }
        result
    }

    fn try_step(&mut self) -> Result<f64> {
        let draws = (0..self.cfg.batch_size)
            .map(|_| Draw::sample(&mut self.rng, &self.cfg.target))
            .collect::<Result<Vec<_>>>()?;
        let loss = match &mut self.models {
            Models::Inverse { host } => {
                let (loss, grads) = inverse_objective(host, &draws)?;
                self.optim[0].step(host.params_mut(), &grads)?;
                loss
            }
            Models::Compress { encoder, decoder } => {
                let (loss, enc, dec) = compression_objective(encoder, decoder, &draws)?;
                if let Some(i) = enc.iter().chain(&dec).position(|g| !g.is_finite()) {
                    return Err(Error::Data(format!("non-finite gradient at joint parameter {i}")));
                }
                self.optim[0].step(encoder.params_mut(), &enc)?;
                self.optim[1].step(decoder.params_mut(), &dec)?;
                loss
            }
        };
        if !loss.is_finite() {
            return Err(Error::Data(format!("non-finite loss {loss}")));
        }
        self.iteration += 1;
        Ok(loss)
    }

    /// Held-out evaluation used for the ratio columns; the stream depends only
    /// on the run seed and the iteration.
    pub fn evaluate(&self, trials: usize) -> Result<EvalStats> {
        let rng = Rng::new(self.cfg.seed).derive(EVAL_STREAM).derive(self.iteration);
        match &self.models {
            Models::Inverse { host } => evaluate_inverse(host, &self.cfg.target, &rng, trials),
            Models::Compress { encoder, decoder } => {
                Ok(evaluate_compression(encoder, decoder, &self.cfg.target, &rng, trials)?.ratio)
            }
        }
    }

    fn log_row(&mut self) -> Result<MetricsRow> {
        let stats = self.evaluate(self.cfg.eval_trials)?;
        let row = MetricsRow::new(self.iteration, self.window_sum / self.window_count as f64, &stats);
        self.window_sum = 0.0;
        self.window_count = 0;
        Ok(row)
    }

    /// Trains until `until` iterations have completed, logging a row every
    /// `eval_every` iterations and handing a checkpoint to `on_checkpoint`
    /// every `checkpoint_every`. A failed step is reported as
    /// [`Error::Diverged`] carrying the last good checkpoint.
    pub fn run_until<F>(&mut self, until: u64, mut on_checkpoint: F) -> Result<()>
    where
        F: FnMut(&Checkpoint) -> Result<()>,
    {
        while self.iteration < until {
            let loss = match self.step() {
                Ok(loss) => loss,
                Err(source) => {
                    return Err(Error::Diverged {
                        iteration: self.iteration + 1,
                        source: Box::new(source),
                        last_good: Box::new(self.checkpoint()),
                    })
                }
            };
            self.window_sum += loss;
            self.window_count += 1;
            if self.iteration.is_multiple_of(self.cfg.eval_every) {
                let row = self.log_row()?;
                self.history.push(row);
            }
            if self.iteration.is_multiple_of(self.cfg.checkpoint_every) {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }

    /// The logged rows plus, if iterations ran since the last row, a closing
    /// row for that partial window.
    pub fn final_history(&self) -> Result<MetricsHistory> {
        let mut history = self.history.clone();
        if self.window_count > 0 {
            let mut probe = self.clone();
            history.push(probe.log_row()?);
        }
        Ok(history)
    }
}

fn train(cfg: RunConfig, expected: Experiment) -> Result<(MetricsHistory, Checkpoint)> {
    if cfg.experiment != expected {
        return Err(Error::Config(format!(
            "config is for the {} experiment, expected {}",
            cfg.experiment.name(),
            expected.name()
        )));
    }
    let mut trainer = Trainer::new(cfg)?;
    let until = trainer.config().iterations;
    trainer.run_until(until, |_| Ok(()))?;
    Ok((trainer.final_history()?, trainer.checkpoint()))
}

pub fn train_inverse(cfg: RunConfig) -> Result<(MetricsHistory, Checkpoint)> {
    train(cfg, Experiment::Inverse)
}

pub fn train_compression(cfg: RunConfig) -> Result<(MetricsHistory, Checkpoint)> {
    train(cfg, Experiment::Compress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::networks::{Activation, NetSpec};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn small(experiment: Experiment) -> RunConfig {
        let mut cfg = RunConfig::for_experiment(experiment);
        cfg.host.width1 = 6;
        cfg.host.width2 = 6;
        cfg.meta.hidden = vec![6];
        cfg.iterations = 30;
        cfg.eval_every = 10;
        cfg.eval_trials = 20;
        cfg.checkpoint_every = 15;
        cfg.lr = 1e-3;
        cfg
    }

    #[test]
    fn rmsprop_hand_example() {
        let mut s = RmsState::new(1, 0.1, 0.9, 1e-8);
        let mut theta = [1.0];
        s.step(&mut theta, &[1.0]).unwrap();
        assert!((s.v[0] - 0.1).abs() < 1e-15);
        let exact = 1.0 - 0.1 / (0.1f64.sqrt() + 1e-8);
        assert!((theta[0] - exact).abs() < 1e-15);
        assert!((theta[0] - 0.68377223).abs() < 5e-8);
    }

    #[test]
    fn rmsprop_zero_gradient_decays_accumulator() {
        let mut s = RmsState::new(2, 0.1, 0.9, 1e-8);
        s.v = vec![1.0, 4.0];
        let mut theta = [0.5, -0.5];
        s.step(&mut theta, &[0.0, 0.0]).unwrap();
        assert_eq!(theta, [0.5, -0.5]);
        assert_eq!(s.v, vec![0.9, 3.6]);
    }

    #[test]
    fn rmsprop_rejects_bad_input_without_mutating() {
        let mut s = RmsState::new(2, 0.1, 0.9, 1e-8);
        let mut theta = [1.0, 2.0];
        assert!(matches!(s.step(&mut theta, &[1.0, f64::NAN]), Err(Error::Data(_))));
        assert_eq!(theta, [1.0, 2.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
        assert!(matches!(s.step(&mut theta, &[1.0]), Err(Error::Structural(_))));
    }

    proptest! {
        #[test]
        fn rmsprop_moves_against_gradient(
            theta in prop::collection::vec(-2.0f64..2.0, 8),
            grads in prop::collection::vec(-5.0f64..5.0, 8),
            v in prop::collection::vec(0.0f64..4.0, 8),
        ) {
            let mut s = RmsState::new(8, 1e-3, 0.9, 1e-8);
            s.v = v;
            let mut a = theta.clone();
            s.step(&mut a, &grads).unwrap();
            for i in 0..8 {
                if grads[i].abs() > 1e-6 {
                    prop_assert_eq!((a[i] - theta[i]).signum(), -grads[i].signum());
                }
                prop_assert!(s.v[i] >= 0.0);
            }
            let mut s2 = RmsState::new(8, 1e-3, 0.9, 1e-8);
            s2.v = s.v.clone();
            let mut s3 = s2.clone();
            let (mut b, mut c) = (theta.clone(), theta.clone());
            s2.step(&mut b, &grads).unwrap();
            s3.step(&mut c, &grads).unwrap();
            prop_assert_eq!(b, c);
            prop_assert_eq!(s2, s3);
        }
    }

    #[test]
    fn zero_iterations_gives_empty_history() {
        let mut cfg = small(Experiment::Inverse);
        cfg.iterations = 0;
        let (history, ck) = train_inverse(cfg.clone()).unwrap();
        assert!(history.is_empty());
        assert_eq!(ck.iteration, 0);
        assert_eq!(Trainer::new(cfg).unwrap().checkpoint(), ck);
    }

    #[test]
    fn experiment_mismatch_is_config_error() {
        assert!(matches!(
            train_compression(small(Experiment::Inverse)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rows_and_losses_are_well_formed() {
        let (history, _) = train_inverse(small(Experiment::Inverse)).unwrap();
        let iters: Vec<u64> = history.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![10, 20, 30]);
        assert!(history.rows.iter().all(|r| r.loss >= 0.0 && r.loss.is_finite()));
        assert!(history.rows.iter().all(|r| r.frac10 <= r.frac25));
    }

    #[test]
    fn partial_window_gets_closing_row() {
        let mut cfg = small(Experiment::Compress);
        cfg.iterations = 25;
        let (history, ck) = train_compression(cfg).unwrap();
        let iters: Vec<u64> = history.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![10, 20, 25]);
        assert_eq!(ck.metrics.rows.len(), 2);
        assert_eq!(ck.metrics.window_count, 5);
    }

    #[test]
    fn runs_are_deterministic() {
        for exp in [Experiment::Inverse, Experiment::Compress] {
            let a = train(small(exp), exp).unwrap();
            let b = train(small(exp), exp).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_json(), b.1.to_json());
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        for exp in [Experiment::Inverse, Experiment::Compress] {
            let cfg = small(exp);
            let (full_hist, full_ck) = train(cfg.clone(), exp).unwrap();

            let mut first = Trainer::new(cfg.clone()).unwrap();
            let mut saved = None;
            first
                .run_until(17, |ck| {
                    saved = Some(ck.clone());
                    Ok(())
                })
                .unwrap();
            let mid = first.checkpoint();
            assert_eq!(saved.unwrap().iteration, 15);
            let json = mid.to_json();
            let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
            resumed.run_until(cfg.iterations, |_| Ok(())).unwrap();
            assert_eq!(resumed.final_history().unwrap(), full_hist);
            assert_eq!(resumed.checkpoint().to_json(), full_ck.to_json());
        }
    }

    #[test]
    fn targets_stay_frozen() {
        let cfg = small(Experiment::Inverse);
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        let mut rng = trainer.rng.clone();
        let draw = Draw::sample(&mut rng, &cfg.target).unwrap();
        let before = draw.network.clone();
        let Models::Inverse { host } = &mut trainer.models else {
            unreachable!()
        };
        for _ in 0..5 {
            let (_, grads) = inverse_objective(host, std::slice::from_ref(&draw)).unwrap();
            trainer.optim[0].step(host.params_mut(), &grads).unwrap();
        }
        assert_eq!(draw.network, before);
        let rebuilt = DenseNetwork::from_seed(*before.spec(), Activation::Tanh, before.seed().unwrap()).unwrap();
        assert_eq!(rebuilt.params(), draw.network.params());
    }

    #[test]
    fn inverse_gradient_through_linear_target() {
        let mut cfg = small(Experiment::Inverse);
        cfg.host.phases = 1;
        cfg.host.queries = 1;
        let host = NnpnnParams::init(cfg.host_config(), &mut Rng::new(3)).unwrap();
        let spec = NetSpec::new(2, 2, 1, 3).unwrap();
        let mut prng = Rng::new(4);
        let linear = DenseNetwork::from_params(
            spec,
            Activation::Identity,
            (0..spec.param_count()).map(|_| prng.symmetric_uniform(1.0)).collect(),
        )
        .unwrap();
        let draws = [Draw {
            network: linear,
            input: vec![0.7, -1.3],
        }];
        let (_, grads) = inverse_objective(&host, &draws).unwrap();
        // final bias of the query head: last layer of the phase block
        let bias = host.phases()[0].subs[1].d3;
        let range = bias.bias_offset..bias.bias_offset + bias.rows;
        let loss_at = |b: &[f64]| {
            let mut h = host.clone();
            h.params_mut()[range.clone()].copy_from_slice(b);
            inverse_objective(&h, &draws).unwrap().0
        };
        let err = finite_diff_check(loss_at, &host.params()[range.clone()], &grads[range.clone()], 1e-5);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn exact_preimage_has_zero_deviation() {
        let stats = evaluate_inverse_with(&Rng::new(1), &NetTemplate::default(), 50, |_, _, x| Ok(x.to_vec())).unwrap();
        assert_eq!(stats.median, 0.0);
        assert_eq!(stats.frac_within_10, 1.0);
    }

    #[test]
    fn evaluation_is_order_stable_and_seeded() {
        let cfg = small(Experiment::Inverse);
        let host = NnpnnParams::init(cfg.host_config(), &mut Rng::new(3)).unwrap();
        let a = evaluate_inverse(&host, &cfg.target, &Rng::new(7), 64).unwrap();
        let b = evaluate_inverse(&host, &cfg.target, &Rng::new(7), 64).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            evaluate_inverse(&host, &cfg.target, &Rng::new(7), 0),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn compression_single_trial_and_degenerate_match() {
        let cfg = small(Experiment::Compress);
        let mut init = Rng::new(2);
        let encoder = NnpnnParams::init(cfg.host_config(), &mut init).unwrap();
        let decoder = MetaNetwork::init(cfg.meta_config(), &mut init).unwrap();
        let s = evaluate_compression(&encoder, &decoder, &cfg.target, &Rng::new(5), 1).unwrap();
        assert_eq!(s.mse.mean, s.mse.median);

        let zero_decoder = MetaNetwork::zeros(cfg.meta_config()).unwrap();
        let spec = NetSpec::new(2, 2, 1, 5).unwrap();
        let zero_target = DenseNetwork::from_params(spec, Activation::Tanh, vec![0.0; 27]).unwrap();
        let pred = reconstruct(&encoder, &zero_decoder, &zero_target, &[3.0, -4.0]).unwrap();
        let target = zero_target.eval(&[3.0, -4.0]).unwrap();
        assert_eq!(example_mse(&pred, &target), 0.0);
    }

    #[test]
    fn diverged_run_reports_last_good_state() {
        let mut cfg = small(Experiment::Inverse);
        cfg.lr = 1e300;
        cfg.eps = 1e-300;
        let mut trainer = Trainer::new(cfg).unwrap();
        let err = trainer.run_until(30, |_| Ok(())).unwrap_err();
        let Error::Diverged {
            iteration, last_good, ..
        } = err
        else {
            panic!("expected divergence, got {err}");
        };
        assert_eq!(last_good.iteration, iteration - 1);
        assert_eq!(trainer.checkpoint(), *last_good);
    }

    #[test]
    fn checkpoint_shape_mismatches() {
        let cfg = small(Experiment::Compress);
        let ck = Trainer::new(cfg).unwrap().checkpoint();
        let mut edited = ck.clone();
        edited.config.host.phases = 3;
        assert!(matches!(Trainer::from_checkpoint(&edited), Err(Error::Checkpoint(_))));
        let mut edited = ck.clone();
        edited.optimizer[1].v.0.pop();
        assert!(matches!(Trainer::from_checkpoint(&edited), Err(Error::Checkpoint(_))));
        let mut edited = ck;
        edited.config.experiment = Experiment::Inverse;
        assert!(Trainer::from_checkpoint(&edited).is_err());
    }
}
