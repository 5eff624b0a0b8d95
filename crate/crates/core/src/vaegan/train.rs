use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::loss::{loss_gan, loss_like, loss_prior};
use super::{gather_batch, Architecture, ModelTriple, Network};
use crate::diffcore::{AdamConfig, OptimizerKind, OptimizerState, ParamGrads, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::synthface::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub architecture: Architecture,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub lr_discriminator: f64,
    /// Weight of the feature-space reconstruction term in the decoder's objective.
    pub gamma: f64,
    /// Weight of the prior-matching term.
    pub beta: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingConfig {
            architecture: Architecture::default(),
            batch_size: 32,
            epochs: 30,
            lr_encoder: adam.lr,
            lr_decoder: adam.lr,
            lr_discriminator: adam.lr,
            gamma: 1e-2,
            beta: 1.0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        for (name, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} = {v} must be ≥ 0")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::validation(format!("gamma = {} must satisfy γ > 0", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::validation(format!("beta = {} must satisfy β > 0", self.beta)));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::validation(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    fn lr(&self, net: Network) -> f64 {
        match net {
            Network::Encoder => self.lr_encoder,
            Network::Decoder => self.lr_decoder,
            Network::Discriminator => self.lr_discriminator,
        }
    }
}

/// Pre-update loss values of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub step: usize,
    pub l_prior: f64,
    pub l_like: f64,
    pub l_gan: f64,
}

/// The three loss terms on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub prior: Var,
    pub like: Var,
    pub gan: Var,
}

/// Per-network update directions.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutedGrads<T> {
    pub encoder: ParamGrads<T>,
    pub decoder: ParamGrads<T>,
    pub discriminator: ParamGrads<T>,
}

impl<T: Scalar> RoutedGrads<T> {
    pub fn get(&self, net: Network) -> &ParamGrads<T> {
        match net {
            Network::Encoder => &self.encoder,
            Network::Decoder => &self.decoder,
            Network::Discriminator => &self.discriminator,
        }
    }
}

/// Combine per-term gradients: the encoder follows `∇(L_prior + L_like)`,
/// the decoder `∇(γ·L_like − L_GAN)`, the discriminator `∇L_GAN`.
pub fn route_gradients<T: Scalar>(
    prior: &ParamGrads<T>,
    like: &ParamGrads<T>,
    gan: &ParamGrads<T>,
    gamma: f64,
) -> RoutedGrads<T> {
    let mut encoder = prior.subset(Network::Encoder.prefix());
    encoder.axpy(T::one(), like);
    let mut decoder = like.subset(Network::Decoder.prefix()).scaled(T::of(gamma));
    decoder.axpy(-T::one(), gan);
    let discriminator = gan.subset(Network::Discriminator.prefix());
    RoutedGrads { encoder, decoder, discriminator }
}

/// Model plus optimizer state and step counters.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: ModelTriple<T>,
    pub config: TrainingConfig,
    optimizers: Vec<OptimizerState<T>>,
    pub epoch: usize,
    pub step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let model = ModelTriple::new(config.architecture.clone(), derive_seed(&[config.seed, 0x1417]))?;
        Self::with_model(model, config)
    }

    pub fn with_model(model: ModelTriple<T>, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if model.arch != config.architecture {
            return Err(Error::validation("model architecture differs from training config"));
        }
        let optimizers = Network::ALL
            .iter()
            .map(|&net| {
                OptimizerState::new(
                    config.optimizer,
                    AdamConfig {
                        lr: config.lr(net),
                        beta1: config.adam_beta1,
                        beta2: config.adam_beta2,
                        ..AdamConfig::default()
                    },
                )
            })
            .collect();
        Ok(Trainer { model, config, optimizers, epoch: 0, step: 0 })
    }

    fn abort(&self, term: &'static str) -> impl Fn(Error) -> Error + '_ {
        move |e| match e {
            Error::Overflow { .. } => Error::TrainingAbort { term: term.to_string(), epoch: self.epoch, step: self.step },
            other => other,
        }
    }

    /// Build all three loss terms for one batch on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Tensor<T>, noise: &Tensor<T>, z_p: &Tensor<T>) -> Result<LossVars> {
        let m = &self.model;
        let x = tape.constant(batch.clone())?;
        let (prior, mu, lv) = (|| {
            let (mu, lv) = m.encoder_graph(tape, x)?;
            Ok((loss_prior(tape, mu, lv, self.config.beta)?, mu, lv))
        })()
        .map_err(self.abort("l_prior"))?;
        let (like, p_real, p_recon) = (|| {
            let z = tape.gaussian_sample(mu, lv, noise.clone())?;
            let x_tilde = m.decoder_graph(tape, z)?;
            let (p_real, f_real) = m.discriminator_graph(tape, x)?;
            let (p_recon, f_recon) = m.discriminator_graph(tape, x_tilde)?;
            Ok((loss_like(tape, f_real, f_recon)?, p_real, p_recon))
        })()
        .map_err(self.abort("l_like"))?;
        let gan = (|| {
            let zp = tape.constant(z_p.clone())?;
            let x_p = m.decoder_graph(tape, zp)?;
            let (p_prior, _) = m.discriminator_graph(tape, x_p)?;
            loss_gan(tape, p_real, p_prior, p_recon)
        })()
        .map_err(self.abort("l_gan"))?;
        Ok(LossVars { prior, like, gan })
    }

    /// Gradients of each term, routed to the three networks.
    pub fn routed_gradients(&self, tape: &Tape<T>, losses: &LossVars) -> Result<RoutedGrads<T>> {
        let p = &self.model.params;
        let gp = tape.backward(losses.prior)?.for_params(p);
        let gl = tape.backward(losses.like)?.for_params(p);
        let gg = tape.backward(losses.gan)?.for_params(p);
        Ok(route_gradients(&gp, &gl, &gg, self.config.gamma))
    }

    /// One joint update on `batch` with reparameterization noise `noise`
    /// and prior samples `z_p` (both `[N, D]`). Returns the losses before
    /// the update.
    pub fn train_step(&mut self, batch: &Tensor<T>, noise: &Tensor<T>, z_p: &Tensor<T>) -> Result<LossBreakdown> {
        let n = batch.shape().first().copied().unwrap_or(0);
        let d = self.model.arch.latent_dim;
        for (name, t) in [("noise", noise), ("z_p", z_p)] {
            if t.shape() != [n, d] {
                return Err(Error::validation(format!("{name} shape {:?}, expected [{n}, {d}]", t.shape())));
            }
        }
        let mut tape = Tape::new();
        let losses = self.forward(&mut tape, batch, noise, z_p)?;
        let breakdown = LossBreakdown {
            epoch: self.epoch,
            step: self.step,
            l_prior: tape.value(losses.prior).item().as_f64(),
            l_like: tape.value(losses.like).item().as_f64(),
            l_gan: tape.value(losses.gan).item().as_f64(),
        };
        let routed = self.routed_gradients(&tape, &losses)?;
        for (net, term) in Network::ALL.iter().zip(["gradient(encoder)", "gradient(decoder)", "gradient(discriminator)"]) {
            if !routed.get(*net).all_finite() {
                return Err(Error::TrainingAbort { term: term.to_string(), epoch: self.epoch, step: self.step });
            }
        }
        for (i, net) in Network::ALL.iter().enumerate() {
            self.optimizers[i].step(&mut self.model.params, routed.get(*net))?;
        }
        self.step += 1;
        Ok(breakdown)
    }

    /// One pass over `dataset` (`[N,1,S,S]`) in shuffled batches. The
    /// shuffle and noise stream depend only on the seed and epoch index.
    pub fn run_epoch(&mut self, dataset: &Tensor<T>) -> Result<Vec<LossBreakdown>> {
        let n = dataset.shape()[0];
        let d = self.model.arch.latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.seed, 0x7A41, self.epoch as u64]));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut history = Vec::new();
        for idx in order.chunks(self.config.batch_size) {
            let batch = gather_batch(dataset, idx)?;
            let normal = |rng: &mut ChaCha8Rng| {
                Tensor::from_fn(&[idx.len(), d], |_| T::of(rng.sample::<f64, _>(StandardNormal)))
            };
            let noise = normal(&mut rng);
            let z_p = normal(&mut rng);
            history.push(self.train_step(&batch, &noise, &z_p)?);
        }
        self.epoch += 1;
        Ok(history)
    }
}

/// Train a fresh model for `config.epochs` epochs. `on_epoch` runs after
/// every epoch with the trainer and that epoch's losses (for checkpoints).
pub fn fit<T: Scalar>(
    dataset: &Tensor<T>,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&Trainer<T>, &[LossBreakdown]) -> Result<()>,
) -> Result<(ModelTriple<T>, Vec<LossBreakdown>)> {
    if dataset.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::validation("fit: empty dataset"));
    }
    let mut trainer = Trainer::new(config.clone())?;
    trainer.model.check_images(dataset.shape())?;
    let mut history = Vec::new();
    for _ in 0..config.epochs {
        let losses = trainer.run_epoch(dataset)?;
        on_epoch(&trainer, &losses)?;
        history.extend(losses);
    }
    Ok((trainer.model, history))
}

pub const LOSS_HISTORY_HEADER: &str = "epoch,step,l_prior,l_like,l_gan";

pub fn write_loss_history(path: &Path, history: &[LossBreakdown]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{LOSS_HISTORY_HEADER}")?;
    for h in history {
        writeln!(out, "{},{},{},{},{}", h.epoch, h.step, h.l_prior, h.l_like, h.l_gan)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_loss_history(path: &Path) -> Result<Vec<LossBreakdown>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let perr = |m: &str| Error::Parse { path: name.clone(), line: i + 1, message: m.to_string() };
        if i == 0 {
            if line.trim() != LOSS_HISTORY_HEADER {
                return Err(perr("unexpected header"));
            }
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 5 {
            return Err(perr("expected 5 columns"));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| perr("bad number"));
        out.push(LossBreakdown {
            epoch: c[0].parse().map_err(|_| perr("bad epoch"))?,
            step: c[1].parse().map_err(|_| perr("bad step"))?,
            l_prior: f(c[2])?,
            l_like: f(c[3])?,
            l_gan: f(c[4])?,
        });
    }
    Ok(out)
}
