//! Convolutional encoder, decoder and discriminator trained jointly as a
//! VAE whose reconstruction error is measured in discriminator feature space.

mod loss;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{init, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use loss::{loss_gan, loss_like, loss_prior};
pub use train::{
    fit, read_loss_history, route_gradients, write_loss_history, LossBreakdown, LossVars, RoutedGrads, Trainer,
    TrainingConfig, LOSS_HISTORY_HEADER,
};

pub const KERNEL: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Layer sizes shared by the three networks.
///
/// Every convolution is `4×4`, stride 2, padding 1, so each of the
/// `channels.len()` layers halves the spatial side. `feature_layer` is the
/// 1-based index of the discriminator convolution whose activations serve
/// as `Dis_l`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub image_size: usize,
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub feature_layer: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { image_size: 32, channels: vec![16, 32, 64], latent_dim: 32, feature_layer: 3 }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.channels.contains(&0) {
            return Err(Error::validation("architecture needs at least one conv layer with nonzero channels"));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << n) {
            return Err(Error::validation(format!(
                "image size {} is not divisible by 2^{n}",
                self.image_size
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::validation("latent dimension D must be positive"));
        }
        if !(1..=n).contains(&self.feature_layer) {
            return Err(Error::validation(format!(
                "feature layer l = {} must lie in [1, {n}]",
                self.feature_layer
            )));
        }
        Ok(())
    }

    /// Spatial side after `layers` convolutions.
    fn side_after(&self, layers: usize) -> usize {
        self.image_size >> layers
    }

    /// Length of the flattened final conv activation.
    pub fn bottleneck_len(&self) -> usize {
        let side = self.side_after(self.channels.len());
        self.channels[self.channels.len() - 1] * side * side
    }

    /// Per-image shape `[C, H, W]` of `Dis_l`.
    pub fn feature_shape(&self) -> [usize; 3] {
        let side = self.side_after(self.feature_layer);
        [self.channels[self.feature_layer - 1], side, side]
    }

    /// One-line `key=value;…` description, stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        format!(
            "image={};channels={};latent={};feature_layer={}",
            self.image_size,
            ch.join(","),
            self.latent_dim,
            self.feature_layer
        )
    }

    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("bad architecture descriptor `{s}`"));
        let mut arch = Architecture { image_size: 0, channels: Vec::new(), latent_dim: 0, feature_layer: 0 };
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "image" => arch.image_size = v.parse().map_err(|_| bad())?,
                "channels" => {
                    arch.channels = v.split(',').map(|c| c.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?
                }
                "latent" => arch.latent_dim = v.parse().map_err(|_| bad())?,
                "feature_layer" => arch.feature_layer = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        arch.validate()?;
        Ok(arch)
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let (k, n, d, f) = (KERNEL, self.channels.len(), self.latent_dim, self.bottleneck_len());
        let mut out = Vec::new();
        for net in ["enc", "dis"] {
            let mut cin = 1;
            for (i, &c) in self.channels.iter().enumerate() {
                out.push((format!("{net}.conv{i}.w"), vec![c, cin, k, k], cin * k * k));
                out.push((format!("{net}.conv{i}.b"), vec![c], 0));
                cin = c;
            }
        }
        for head in ["mu", "logvar"] {
            out.push((format!("enc.{head}.w"), vec![f, d], f));
            out.push((format!("enc.{head}.b"), vec![d], 0));
        }
        out.push(("dis.head.w".into(), vec![f, 1], f));
        out.push(("dis.head.b".into(), vec![1], 0));
        out.push(("dec.fc.w".into(), vec![d, f], d));
        out.push(("dec.fc.b".into(), vec![f], 0));
        for i in 0..n {
            let cin = self.channels[n - 1 - i];
            let cout = if i + 1 == n { 1 } else { self.channels[n - 2 - i] };
            out.push((format!("dec.deconv{i}.w"), vec![cin, cout, k, k], cin * k * k));
            out.push((format!("dec.deconv{i}.b"), vec![cout], 0));
        }
        out
    }
}

/// Posterior `q(z|x)` of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

/// Reparameterized draw `z = μ + exp(½·logvar) ⊙ noise`.
pub fn sample_latent(posterior: &LatentPosterior, noise: &[f64]) -> Result<LatentCode> {
    if noise.len() != posterior.mu.len() || posterior.logvar.len() != posterior.mu.len() {
        return Err(Error::validation(format!(
            "noise of dimension {} for a posterior of dimension {}",
            noise.len(),
            posterior.mu.len()
        )));
    }
    let z = posterior
        .mu
        .iter()
        .zip(&posterior.logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e)
        .collect();
    Ok(LatentCode { z })
}

/// Which of the three networks a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    Encoder,
    Decoder,
    Discriminator,
}

impl Network {
    pub const ALL: [Network; 3] = [Network::Encoder, Network::Decoder, Network::Discriminator];

    pub fn prefix(self) -> &'static str {
        match self {
            Network::Encoder => "enc.",
            Network::Decoder => "dec.",
            Network::Discriminator => "dis.",
        }
    }
}

/// Encoder, decoder and discriminator parameters with their architecture.
/// Parameter names carry the network prefix `enc.`, `dec.` or `dis.`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelTriple<T> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

/// Batch `[N, 1, S, S]` from row-major images of side `size`.
pub fn images_to_tensor<T: Scalar>(images: &[&[f64]], size: usize) -> Result<Tensor<T>> {
    if images.is_empty() {
        return Err(Error::validation("empty image batch"));
    }
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.len() != size * size {
            return Err(Error::validation(format!("image with {} pixels in a {size}×{size} batch", img.len())));
        }
        data.extend(img.iter().map(|&p| T::of(p)));
    }
    Tensor::new(vec![images.len(), 1, size, size], data)
}

/// Split a `[N, …]` batch into per-image `f64` vectors.
pub fn tensor_to_images<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    let per = t.len() / n;
    t.data().chunks(per).map(|c| c.iter().map(|v| v.as_f64()).collect()).collect()
}

const INFERENCE_CHUNK: usize = 64;

impl<T: Scalar> ModelTriple<T> {
    /// Fan-in uniform weights and zero biases, seeded.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in arch.param_shapes() {
            let t = if fan_in == 0 { init::zeros(&shape) } else { init::fan_in_uniform(&mut rng, &shape, fan_in) };
            params.insert(name, t)?;
        }
        Ok(ModelTriple { arch, params })
    }

    /// Wrap existing parameters, checking names and shapes against `arch`.
    pub fn from_params(arch: Architecture, params: ParamStore<T>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::ManifestMismatch(format!(
                "architecture needs {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            let got = params.get(name).map_err(|_| Error::ManifestMismatch(format!("missing tensor `{name}`")))?;
            if got.shape() != shape.as_slice() {
                return Err(Error::ManifestMismatch(format!(
                    "tensor `{name}` has shape {:?}, architecture needs {shape:?}",
                    got.shape()
                )));
            }
        }
        Ok(ModelTriple { arch, params })
    }

    pub fn cast<U: Scalar>(&self) -> ModelTriple<U> {
        ModelTriple { arch: self.arch.clone(), params: self.params.cast() }
    }

    /// Parameters of one network.
    pub fn network(&self, net: Network) -> ParamStore<T> {
        self.params.subset(net.prefix())
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        let s = self.arch.image_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != s || shape[3] != s {
            return Err(Error::validation(format!("image batch shape {shape:?}, expected [N, 1, {s}, {s}]")));
        }
        Ok(())
    }

    fn p(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        tape.param(&self.params, name)
    }

    /// `x [N,1,S,S]` → `(μ, logvar)`, each `[N, D]`, logvar clamped.
    pub fn encoder_graph(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Var)> {
        self.check_images(tape.shape(x))?;
        let n = tape.shape(x)[0];
        let mut h = x;
        for i in 0..self.arch.channels.len() {
            let (w, b) = (self.p(tape, &format!("enc.conv{i}.w"))?, self.p(tape, &format!("enc.conv{i}.b"))?);
            let c = tape.conv2d(h, w, b, 2, 1)?;
            h = tape.leaky_relu(c, LEAKY_SLOPE)?;
        }
        let flat = tape.reshape(h, &[n, self.arch.bottleneck_len()])?;
        let (wm, bm) = (self.p(tape, "enc.mu.w")?, self.p(tape, "enc.mu.b")?);
        let mu = tape.dense(flat, wm, bm)?;
        let (wl, bl) = (self.p(tape, "enc.logvar.w")?, self.p(tape, "enc.logvar.b")?);
        let lv = tape.dense(flat, wl, bl)?;
        let logvar = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }

    /// `z [N, D]` → images `[N,1,S,S]` in `[0, 1]`.
    pub fn decoder_graph(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.arch.latent_dim {
            return Err(Error::validation(format!(
                "latent batch shape {shape:?}, expected [N, {}]",
                self.arch.latent_dim
            )));
        }
        let n_layers = self.arch.channels.len();
        let side = self.arch.side_after(n_layers);
        let (w, b) = (self.p(tape, "dec.fc.w")?, self.p(tape, "dec.fc.b")?);
        let fc = tape.dense(z, w, b)?;
        let grid = tape.reshape(fc, &[shape[0], self.arch.channels[n_layers - 1], side, side])?;
        let mut h = tape.leaky_relu(grid, LEAKY_SLOPE)?;
        for i in 0..n_layers {
            let (w, b) = (self.p(tape, &format!("dec.deconv{i}.w"))?, self.p(tape, &format!("dec.deconv{i}.b"))?);
            let c = tape.conv2d_transpose(h, w, b, 2, 1)?;
            h = if i + 1 == n_layers { tape.sigmoid(c)? } else { tape.leaky_relu(c, LEAKY_SLOPE)? };
        }
        Ok(h)
    }

    /// Images → `(Dis(x) [N,1], Dis_l(x) [N,C,H,W])`.
    pub fn discriminator_graph(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Var)> {
        self.check_images(tape.shape(x))?;
        let n = tape.shape(x)[0];
        let mut h = x;
        let mut features = None;
        for i in 0..self.arch.channels.len() {
            let (w, b) = (self.p(tape, &format!("dis.conv{i}.w"))?, self.p(tape, &format!("dis.conv{i}.b"))?);
            let c = tape.conv2d(h, w, b, 2, 1)?;
            h = tape.leaky_relu(c, LEAKY_SLOPE)?;
            if i + 1 == self.arch.feature_layer {
                features = Some(h);
            }
        }
        let flat = tape.reshape(h, &[n, self.arch.bottleneck_len()])?;
        let (w, b) = (self.p(tape, "dis.head.w")?, self.p(tape, "dis.head.b")?);
        let logit = tape.dense(flat, w, b)?;
        let p = tape.sigmoid(logit)?;
        Ok((p, features.expect("feature layer validated")))
    }

    /// Posterior for each image of a `[N,1,S,S]` batch.
    pub fn encode(&self, images: &Tensor<T>) -> Result<Vec<LatentPosterior>> {
        self.check_images(images.shape())?;
        if images.data().iter().any(|p| !(T::zero()..=T::one()).contains(p)) {
            return Err(Error::validation("encode: pixel values must lie in [0, 1]"));
        }
        let d = self.arch.latent_dim;
        let mut out = Vec::with_capacity(images.shape()[0]);
        for chunk in chunk_batch(images, INFERENCE_CHUNK)? {
            let mut tape = Tape::new();
            let x = tape.constant(chunk)?;
            let (mu, lv) = self.encoder_graph(&mut tape, x)?;
            let (mu, lv) = (tape.value(mu).data(), tape.value(lv).data());
            for (m, l) in mu.chunks(d).zip(lv.chunks(d)) {
                out.push(LatentPosterior {
                    mu: m.iter().map(|v| v.as_f64()).collect(),
                    logvar: l.iter().map(|v| v.as_f64()).collect(),
                });
            }
        }
        Ok(out)
    }

    /// Posterior means for a list of row-major images.
    pub fn encode_mu(&self, images: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let t = images_to_tensor::<T>(images, self.arch.image_size)?;
        Ok(self.encode(&t)?.into_iter().map(|p| p.mu).collect())
    }

    /// Decoded images `[N,1,S,S]`.
    pub fn decode(&self, codes: &[LatentCode]) -> Result<Tensor<T>> {
        let d = self.arch.latent_dim;
        if codes.is_empty() {
            return Err(Error::validation("decode: empty latent batch"));
        }
        if let Some(c) = codes.iter().find(|c| c.z.len() != d) {
            return Err(Error::validation(format!("decode: latent of dimension {}, expected {d}", c.z.len())));
        }
        let s = self.arch.image_size;
        let mut data = Vec::with_capacity(codes.len() * s * s);
        for chunk in codes.chunks(INFERENCE_CHUNK) {
            let z = Tensor::new(vec![chunk.len(), d], chunk.iter().flat_map(|c| c.z.iter().map(|&v| T::of(v))).collect())?;
            let mut tape = Tape::new();
            let zv = tape.constant(z)?;
            let x = self.decoder_graph(&mut tape, zv)?;
            data.extend_from_slice(tape.value(x).data());
        }
        Tensor::new(vec![codes.len(), 1, s, s], data)
    }

    /// `(Dis(x), Dis_l(x))` for a `[N,1,S,S]` batch.
    pub fn discriminate(&self, images: &Tensor<T>) -> Result<(Vec<f64>, Tensor<T>)> {
        self.check_images(images.shape())?;
        let [c, h, w] = self.arch.feature_shape();
        let mut probs = Vec::with_capacity(images.shape()[0]);
        let mut feats = Vec::new();
        for chunk in chunk_batch(images, INFERENCE_CHUNK)? {
            let mut tape = Tape::new();
            let x = tape.constant(chunk)?;
            let (p, f) = self.discriminator_graph(&mut tape, x)?;
            probs.extend(tape.value(p).data().iter().map(|v| v.as_f64()));
            feats.extend_from_slice(tape.value(f).data());
        }
        let features = Tensor::new(vec![probs.len(), c, h, w], feats)?;
        Ok((probs, features))
    }
}

/// Split a `[N, …]` tensor along the batch axis.
fn chunk_batch<T: Scalar>(t: &Tensor<T>, max: usize) -> Result<Vec<Tensor<T>>> {
    let n = t.shape()[0];
    let per = t.len() / n;
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let m = max.min(n - start);
        let mut shape = t.shape().to_vec();
        shape[0] = m;
        out.push(Tensor::new(shape, t.data()[start * per..(start + m) * per].to_vec())?);
        start += m;
    }
    Ok(out)
}

/// Gather rows `idx` of a `[N, …]` tensor.
pub(crate) fn gather_batch<T: Scalar>(t: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let per = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture { image_size: 8, channels: vec![2, 3], latent_dim: 4, feature_layer: 2 }
    }

    fn batch(n: usize, size: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, 1, size, size], |i| ((i * 37) % 101) as f64 / 100.0)
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::default().validate().is_ok());
        let mut a = tiny();
        a.feature_layer = 3;
        assert!(a.validate().is_err());
        a.feature_layer = 0;
        assert!(a.validate().is_err());
        assert!(Architecture { image_size: 10, ..tiny() }.validate().is_err());
        assert!(Architecture { latent_dim: 0, ..tiny() }.validate().is_err());
    }

    #[test]
    fn descriptor_roundtrip() {
        let a = Architecture::default();
        assert_eq!(a.descriptor(), "image=32;channels=16,32,64;latent=32;feature_layer=3");
        assert_eq!(Architecture::parse_descriptor(&a.descriptor()).unwrap(), a);
        assert!(Architecture::parse_descriptor("image=32;bogus=1").is_err());
    }

    #[test]
    fn zero_heads_give_prior_posterior_and_half_probability() {
        let mut m = ModelTriple::<f64>::new(tiny(), 1).unwrap();
        for name in ["enc.mu.w", "enc.logvar.w", "dis.head.w"] {
            let shape = m.params.get(name).unwrap().shape().to_vec();
            m.params.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let x = batch(3, 8);
        for post in m.encode(&x).unwrap() {
            assert!(post.mu.iter().chain(&post.logvar).all(|&v| v == 0.0));
        }
        let (p, f) = m.discriminate(&x).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
        assert_eq!(&f.shape()[1..], &m.arch.feature_shape());
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let m = ModelTriple::<f64>::new(tiny(), 2).unwrap();
        let one: Vec<f64> = (0..64).map(|i| (i % 9) as f64 / 9.0).collect();
        let x = images_to_tensor::<f64>(&[&one, &one], 8).unwrap();
        let post = m.encode(&x).unwrap();
        assert_eq!(post[0], post[1]);
        let (p, f) = m.discriminate(&x).unwrap();
        assert_eq!(p[0], p[1]);
        let imgs = tensor_to_images(&f);
        assert_eq!(imgs[0], imgs[1]);
        let code = LatentCode { z: vec![0.3, -1.0, 2.0, 0.1] };
        let d = m.decode(&[code.clone(), code]).unwrap();
        let imgs = tensor_to_images(&d);
        assert_eq!(imgs[0], imgs[1]);
    }

    #[test]
    fn decoder_output_in_unit_interval() {
        let m = ModelTriple::<f64>::new(tiny(), 3).unwrap();
        let codes: Vec<LatentCode> =
            (0..10).map(|k| LatentCode { z: (0..4).map(|d| ((k * 4 + d) as f64 * 0.77).sin() * 3.0).collect() }).collect();
        let out = m.decode(&codes).unwrap();
        assert_eq!(out.shape(), &[10, 1, 8, 8]);
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn shape_errors() {
        let m = ModelTriple::<f64>::new(tiny(), 4).unwrap();
        assert!(matches!(m.encode(&batch(2, 16)), Err(Error::Validation(_))));
        assert!(matches!(m.decode(&[LatentCode { z: vec![0.0; 3] }]), Err(Error::Validation(_))));
        assert!(matches!(m.discriminate(&batch(1, 4)), Err(Error::Validation(_))));
        let bad = Tensor::from_fn(&[1, 1, 8, 8], |_| 1.5);
        assert!(m.encode(&bad).is_err());
    }

    #[test]
    fn sample_latent_cases() {
        let p = LatentPosterior { mu: vec![0.0, 0.0], logvar: vec![0.0, 0.0] };
        assert_eq!(sample_latent(&p, &[0.4, -1.2]).unwrap().z, vec![0.4, -1.2]);
        let p = LatentPosterior { mu: vec![1.5, -2.0], logvar: vec![-1e9, LOGVAR_MIN] };
        let z = sample_latent(&p, &[3.0, -3.0]).unwrap().z;
        assert!((z[0] - 1.5).abs() <= (-5.0f64).exp() * 3.0);
        assert!((z[1] + 2.0).abs() <= (-5.0f64).exp() * 3.0);
        assert!(sample_latent(&p, &[1.0]).is_err());
    }

    #[test]
    fn from_params_checks_manifest() {
        let m = ModelTriple::<f32>::new(tiny(), 5).unwrap();
        assert!(ModelTriple::from_params(tiny(), m.params.clone()).is_ok());
        let other = Architecture { latent_dim: 5, ..tiny() };
        assert!(matches!(ModelTriple::from_params(other, m.params), Err(Error::ManifestMismatch(_))));
    }
}
