//! Analytically specified hierarchical models with fixed, committed
//! parameters.
//!
//! These models stand in for a trained network so that every rate claim is
//! checkable: all conditionals are Gaussians whose means and scales come
//! from 3x3 neighborhood affine maps with location-independent weights, so
//! one model evaluates on images of any height and width. Latent layer `l`
//! has the ceil-halved spatial dims of the layer below and one channel.
//!
//! [`LinearGaussianToy`] is a separate conjugate model whose marginal and
//! posterior are closed-form; it oracles the ELBO estimator.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::bitsback::{gauss_sample, LatentHierarchyModel, LatentTensor, UpperLatents};
use crate::discretize::ContinuousParams;
use crate::error::{Error, Result};
use crate::{Image, ImageShape};

/// One 3x3 convolution tap set with a bias.
#[derive(Clone, Copy, Debug)]
struct Conv3x3 {
    w: [f64; 9],
    b: f64,
}

impl Conv3x3 {
    /// Applies the map at (y, x) of a single-channel plane with zero
    /// padding outside the plane.
    fn at(&self, plane: &[f64], h: usize, w: usize, y: usize, x: usize) -> f64 {
        let mut acc = self.b;
        let mut k = 0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let yy = y as i64 + dy;
                let xx = x as i64 + dx;
                if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                    acc += self.w[k] * plane[(yy as usize) * w + xx as usize];
                }
                k += 1;
            }
        }
        acc
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-layer conditional parameter maps.
#[derive(Clone, Debug)]
struct LayerParams {
    prior_mean: Conv3x3,
    prior_scale: Conv3x3,
    post_mean_z: Conv3x3,
    post_mean_x: Conv3x3,
    post_scale_z: Conv3x3,
    post_scale_x: Conv3x3,
}

/// A fixed-parameter fully convolutional hierarchy with Gaussian latent
/// conditionals and a discretized-logistic pixel likelihood.
#[derive(Clone, Debug)]
pub struct ToyModel {
    name: &'static str,
    id: u8,
    depth: usize,
    layers: Vec<LayerParams>,
    lik_mean: Conv3x3,
    lik_scale: Conv3x3,
    channel_mean_offset: [f64; 4],
    channel_scale_offset: [f64; 4],
}

/// Pixel mean swing around 127.5 and the center-tap gain of the
/// likelihood mean map. The posterior inverts this map, so both constants
/// are shared between the generative and inference sides.
const PIXEL_GAIN: f64 = 90.0;
const PIXEL_TAP: f64 = 0.7;

/// Draws a uniform value in [-a, a] from raw generator words, independent
/// of any sampling-crate algorithm.
fn uniform_pm(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 / 9007199254740992.0;
    a * (2.0 * u - 1.0)
}

/// A 3x3 map with a dominant center tap plus committed jitter.
fn gen_conv(
    rng: &mut ChaCha8Rng,
    center: f64,
    center_jitter: f64,
    others: f64,
    bias: f64,
) -> Conv3x3 {
    let mut w = [0.0; 9];
    for slot in &mut w {
        *slot = uniform_pm(rng, others);
    }
    w[4] = center + uniform_pm(rng, center_jitter);
    Conv3x3 {
        w,
        b: uniform_pm(rng, bias),
    }
}

impl ToyModel {
    fn generate(name: &'static str, id: u8, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(depth);
        for layer in 1..=depth {
            let first = layer == 1;
            layers.push(LayerParams {
                // priors propagate the parent latent with spatial mixing
                prior_mean: gen_conv(&mut rng, 0.55, 0.05, 0.08, 0.05),
                prior_scale: gen_conv(&mut rng, 0.0, 0.1, 0.10, 0.30),
                // the posterior of the first layer reads the observation
                // feature almost directly (it inverts the likelihood mean
                // map); deeper layers stay near their prior with a nudge
                // from the pooled feature
                post_mean_z: if first {
                    gen_conv(&mut rng, 0.05, 0.02, 0.03, 0.02)
                } else {
                    gen_conv(&mut rng, 0.50, 0.05, 0.06, 0.03)
                },
                post_mean_x: if first {
                    gen_conv(&mut rng, 0.90, 0.03, 0.03, 0.02)
                } else {
                    gen_conv(&mut rng, 0.35, 0.05, 0.05, 0.03)
                },
                post_scale_z: gen_conv(&mut rng, 0.0, 0.05, 0.05, 0.15),
                post_scale_x: gen_conv(&mut rng, 0.0, 0.05, 0.05, 0.15),
            });
        }
        let lik_mean = gen_conv(&mut rng, PIXEL_TAP, 0.015, 0.05, 0.08);
        let lik_scale = gen_conv(&mut rng, 0.0, 0.1, 0.12, 0.40);
        let mut channel_mean_offset = [0.0; 4];
        let mut channel_scale_offset = [0.0; 4];
        for c in 0..4 {
            channel_mean_offset[c] = uniform_pm(&mut rng, 0.20);
            channel_scale_offset[c] = uniform_pm(&mut rng, 0.35);
        }
        ToyModel {
            name,
            id,
            depth,
            layers,
            lik_mean,
            lik_scale,
            channel_mean_offset,
            channel_scale_offset,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    /// SHA-256 digest of the committed parameters and the fixed transform
    /// constants, hex encoded. Identical across platforms; checked against
    /// frozen constants by `selftest`.
    pub fn parameter_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in [
            PIXEL_GAIN, PIXEL_TAP, 0.45, 0.75, 0.05, 0.07, 0.40, 0.45, 1.6, 4.0,
        ] {
            hasher.update(v.to_le_bytes());
        }
        let mut push_conv = |c: &Conv3x3| {
            for v in c.w {
                hasher.update(v.to_le_bytes());
            }
            hasher.update(c.b.to_le_bytes());
        };
        for layer in &self.layers {
            push_conv(&layer.prior_mean);
            push_conv(&layer.prior_scale);
            push_conv(&layer.post_mean_z);
            push_conv(&layer.post_mean_x);
            push_conv(&layer.post_scale_z);
            push_conv(&layer.post_scale_x);
        }
        push_conv(&self.lik_mean);
        push_conv(&self.lik_scale);
        for v in self.channel_mean_offset {
            hasher.update(v.to_le_bytes());
        }
        for v in self.channel_scale_offset {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Upsamples the layer-above latent onto this layer's grid (nearest
    /// neighbor); absent layer gives zeros.
    fn upsampled_above(&self, above: &UpperLatents<'_>, shape: ImageShape) -> Vec<f64> {
        let mut plane = vec![0.0; shape.height * shape.width];
        if let Some(t) = above.layer_above() {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    plane[y * shape.width + x] =
                        t.values[(y / 2) * t.shape.width + (x / 2)];
                }
            }
        }
        plane
    }

    /// Observation feature at the layer grid: the block-pooled pixel mean
    /// pushed back through the likelihood mean map (atanh of the
    /// normalized mean, channel offset removed, divided by the center
    /// tap). On in-model data this approximates the pooled first-layer
    /// latent.
    fn pooled_observation(&self, x: &Image, layer: usize) -> Vec<f64> {
        let obs = x.shape;
        let shape = self.latent_shape(layer, obs);
        let block = 1usize << layer;
        let mean_offset: f64 = self.channel_mean_offset[..obs.channels]
            .iter()
            .sum::<f64>()
            / obs.channels as f64;
        let mut plane = vec![0.0; shape.height * shape.width];
        for y in 0..shape.height {
            for xx in 0..shape.width {
                let y0 = y * block;
                let y1 = ((y + 1) * block).min(obs.height);
                let x0 = xx * block;
                let x1 = ((xx + 1) * block).min(obs.width);
                let mut acc = 0.0;
                let mut count = 0;
                for py in y0..y1 {
                    for px in x0..x1 {
                        for c in 0..obs.channels {
                            acc += x.at(py, px, c) as f64 / 127.5 - 1.0;
                            count += 1;
                        }
                    }
                }
                let mean = acc / count as f64;
                let t = (mean * 127.5 / PIXEL_GAIN).clamp(-0.985, 0.985);
                plane[y * shape.width + xx] = (t.atanh() - mean_offset) / PIXEL_TAP;
            }
        }
        plane
    }

    /// Ancestral sample from the generative model at the given shape.
    pub fn sample_image(&self, obs: ImageShape, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut upper: Vec<LatentTensor> = Vec::with_capacity(self.depth);
        for layer in (1..=self.depth).rev() {
            let above = UpperLatents::new(&upper);
            let prior = self.prior(layer, &above, obs);
            let shape = self.latent_shape(layer, obs);
            let values: Vec<f64> = prior
                .iter()
                .map(|p| p.loc + p.scale * gauss_sample(&mut rng))
                .collect();
            upper.insert(0, LatentTensor { shape, values });
        }
        let lik = self.likelihood(&upper, obs);
        let pixels: Vec<u8> = lik
            .iter()
            .map(|p| {
                // logistic draw by inverse cdf, rounded to the pixel bins
                let u = ((rng.next_u64() >> 11) as f64 + 0.5) / 9007199254740992.0;
                let v = p.loc + p.scale * (u / (1.0 - u)).ln();
                v.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Image::new(obs, pixels)
    }
}

impl LatentHierarchyModel for ToyModel {
    fn depth(&self) -> usize {
        self.depth
    }

    fn latent_shape(&self, layer: usize, obs: ImageShape) -> ImageShape {
        let mut h = obs.height;
        let mut w = obs.width;
        for _ in 0..layer {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        ImageShape {
            height: h,
            width: w,
            channels: 1,
        }
    }

    fn prior(
        &self,
        layer: usize,
        above: &UpperLatents<'_>,
        obs: ImageShape,
    ) -> Vec<ContinuousParams> {
        let shape = self.latent_shape(layer, obs);
        let params = &self.layers[layer - 1];
        let u = self.upsampled_above(above, shape);
        let (h, w) = (shape.height, shape.width);
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mean = params.prior_mean.at(&u, h, w, y, x);
                let raw = params.prior_scale.at(&u, h, w, y, x);
                let scale = 0.45 + 0.75 * sigmoid(raw);
                out.push(ContinuousParams::gaussian(mean, scale));
            }
        }
        out
    }

    fn posterior(
        &self,
        layer: usize,
        above: &UpperLatents<'_>,
        x: &Image,
    ) -> Vec<ContinuousParams> {
        let obs = x.shape;
        let shape = self.latent_shape(layer, obs);
        let params = &self.layers[layer - 1];
        let u = self.upsampled_above(above, shape);
        let xf = self.pooled_observation(x, layer);
        let (h, w) = (shape.height, shape.width);
        let mut out = Vec::with_capacity(h * w);
        // the first layer is pinned to likelihood accuracy; deeper layers
        // stay near their priors
        let (scale_base, scale_range) = if layer == 1 { (0.05, 0.07) } else { (0.40, 0.45) };
        for y in 0..h {
            for xx in 0..w {
                let mean = params.post_mean_z.at(&u, h, w, y, xx)
                    + params.post_mean_x.at(&xf, h, w, y, xx);
                let raw = params.post_scale_z.at(&u, h, w, y, xx)
                    + params.post_scale_x.at(&xf, h, w, y, xx);
                let scale = scale_base + scale_range * sigmoid(raw);
                out.push(ContinuousParams::gaussian(mean, scale));
            }
        }
        out
    }

    fn likelihood(&self, latents: &[LatentTensor], obs: ImageShape) -> Vec<ContinuousParams> {
        let z1 = &latents[0];
        let (h, w) = (obs.height, obs.width);
        // upsample layer 1 onto the pixel grid
        let mut plane = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = z1.values[(y / 2) * z1.shape.width + (x / 2)];
            }
        }
        let mut out = Vec::with_capacity(obs.dims());
        for y in 0..h {
            for x in 0..w {
                let a = self.lik_mean.at(&plane, h, w, y, x);
                let s = self.lik_scale.at(&plane, h, w, y, x);
                for c in 0..obs.channels {
                    let loc = 127.5 + PIXEL_GAIN * (a + self.channel_mean_offset[c]).tanh();
                    let scale = 1.6 + 4.0 * sigmoid(s + self.channel_scale_offset[c]);
                    out.push(ContinuousParams::logistic(loc, scale));
                }
            }
        }
        out
    }
}

/// Registry of the shipped models.
pub const MODEL_NAMES: [&str; 3] = ["toy1", "toy2", "toy3"];

/// Frozen parameter digests, one per model; `selftest` recomputes and
/// compares them.
pub const MODEL_DIGESTS: [(&str, &str); 3] = [
    (
        "toy1",
        "fa9188b05b693acf67b09594c0917963657d6341aea2d51b58367b78144c62b7",
    ),
    (
        "toy2",
        "def5a6fde295132d305ab4c03f1d854bb123253c9715e45b47f725794f2a399b",
    ),
    (
        "toy3",
        "4815285c30bf1e43b42e739d5ce62821545f1e560ef319145c231a6a4cf460a6",
    ),
];

/// Builds a shipped model by name ("toy1", "toy2", "toy3"; depth equals the
/// trailing digit). Identical parameters on every build.
pub fn build_toy_model(name: &str) -> Result<ToyModel> {
    match name {
        "toy1" => Ok(ToyModel::generate("toy1", 1, 1, 0x7031_0001)),
        "toy2" => Ok(ToyModel::generate("toy2", 2, 2, 0x7032_0002)),
        "toy3" => Ok(ToyModel::generate("toy3", 3, 3, 0x7033_0003)),
        _ => Err(Error::UnknownModel(0)),
    }
}

/// Builds a shipped model from its container id byte.
pub fn model_by_id(id: u8) -> Result<ToyModel> {
    match id {
        1 => build_toy_model("toy1"),
        2 => build_toy_model("toy2"),
        3 => build_toy_model("toy3"),
        other => Err(Error::UnknownModel(other)),
    }
}

/// Depth-1 conjugate linear-Gaussian model: `z ~ N(0, I)`,
/// `x = a z + e`, `e ~ N(0, noise^2 I)`. The posterior is exact, so the
/// ELBO equals the log marginal; both are closed-form. Used as the oracle
/// for the ELBO estimator, not for coding (its observation is continuous).
#[derive(Clone, Copy, Debug)]
pub struct LinearGaussianToy {
    pub coeff: f64,
    pub noise: f64,
    pub dim: usize,
}

impl LinearGaussianToy {
    pub fn new(coeff: f64, noise: f64, dim: usize) -> Self {
        LinearGaussianToy { coeff, noise, dim }
    }

    /// Exact posterior q(z | x) = N(a x / (a^2 + s^2), s^2 / (a^2 + s^2)),
    /// per dimension.
    pub fn posterior(&self, x: f64) -> (f64, f64) {
        let a = self.coeff;
        let s2 = self.noise * self.noise;
        let denom = a * a + s2;
        (a * x / denom, (s2 / denom).sqrt())
    }

    /// Closed-form `-log2 p(x) / dim`: the marginal is N(0, a^2 + s^2) per
    /// dimension.
    pub fn exact_log_marginal_bits_per_dim(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let var = self.coeff * self.coeff + self.noise * self.noise;
        let ln2 = std::f64::consts::LN_2;
        let mut total = 0.0;
        for &v in x {
            let ln_density =
                -0.5 * v * v / var - 0.5 * var.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            total -= ln_density / ln2;
        }
        total / self.dim as f64
    }

    /// Monte-Carlo `-E_q[log p(x,z)/q(z|x)] / dim` in bits with the exact
    /// posterior as q. Conjugacy makes the integrand constant, so the
    /// estimate equals the log marginal up to floating-point error.
    pub fn elbo_estimate(&self, x: &[f64], n_samples: usize, seed: u64) -> (f64, f64) {
        assert_eq!(x.len(), self.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ln2 = std::f64::consts::LN_2;
        let two_pi = 2.0 * std::f64::consts::PI;
        let ln_norm = |v: f64, mu: f64, sd: f64| {
            let t = (v - mu) / sd;
            -0.5 * t * t - sd.ln() - 0.5 * two_pi.ln()
        };
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let mut log_ratio = 0.0;
            for &v in x {
                let (qm, qs) = self.posterior(v);
                let z = qm + qs * gauss_sample(&mut rng);
                log_ratio += ln_norm(z, 0.0, 1.0); // prior
                log_ratio += ln_norm(v, self.coeff * z, self.noise); // likelihood
                log_ratio -= ln_norm(z, qm, qs); // posterior
            }
            samples.push(-log_ratio / ln2 / self.dim as f64);
        }
        let mean = samples.iter().sum::<f64>() / n_samples as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (n_samples.max(2) - 1) as f64;
        (mean, (var / n_samples as f64).sqrt())
    }

    /// Samples an observation from the model.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim)
            .map(|_| self.coeff * gauss_sample(&mut rng) + self.noise * gauss_sample(&mut rng))
            .collect()
    }
}
