//! Bits-back coding for hierarchical latent-variable models.
//!
//! Encoding a datum first *decodes* (samples) discretized latents from the
//! posterior, top layer first, then encodes the datum under the likelihood
//! at the reconstructed latents and the latent indices under the uniform
//! index prior. Decoding runs the precise inverse. Discretization grids are
//! rebuilt per location from the conditional prior, so the posterior over
//! indices is computable at decode time as long as inference is top-down.
//!
//! The first pop of a fresh chain needs a buffer of bits to draw from;
//! [`SeedPolicy`] either supplies counted random words or lets the pop fail.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ans::{LaneDists, QuantizedDistribution};
use crate::discretize::{
    index_to_center, make_equal_mass_bins, posterior_index_dist, ContinuousParams,
    DiscretizationGrid,
};
use crate::error::{Error, Result};
use crate::message::{HeadShape, ShapedMessage, ViewLens};
use crate::{Image, ImageShape};

/// A reconstructed latent layer: values on the layer's grid.
#[derive(Clone, Debug)]
pub struct LatentTensor {
    pub shape: ImageShape,
    pub values: Vec<f64>,
}

/// The latents of the layers *above* the one being parameterized, in
/// bottom-up order: `get(0)` is layer `l+1`, `get(1)` is layer `l+2`, and
/// so on. Conditionals receive only this view, so a posterior that reads
/// lower layers (bottom-up inference) cannot be expressed against this
/// interface.
pub struct UpperLatents<'a> {
    tensors: &'a [LatentTensor],
}

impl<'a> UpperLatents<'a> {
    /// Wraps already-reconstructed upper layers, bottom-up order: the
    /// first tensor is the layer immediately above.
    pub fn new(tensors: &'a [LatentTensor]) -> Self {
        UpperLatents { tensors }
    }

    pub fn none() -> UpperLatents<'static> {
        UpperLatents { tensors: &[] }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Latent of the layer `offset + 1` above the current one.
    pub fn get(&self, offset: usize) -> Option<&'a LatentTensor> {
        self.tensors.get(offset)
    }

    /// The immediately-above layer, if any.
    pub fn layer_above(&self) -> Option<&'a LatentTensor> {
        self.get(0)
    }
}

/// A hierarchical latent-variable model usable for bits-back coding.
///
/// The prior factorizes top-down as `p(z_L) * prod p(z_l | z_{l+1:L})` and
/// the posterior as `q(z_L | x) * prod q(z_l | z_{l+1:L}, x)`. Both
/// conditionals for layer `l` receive only the latents above `l` (plus the
/// observation for the posterior); there is no way to hand them `z_{<l}`.
pub trait LatentHierarchyModel {
    /// Number of latent layers, >= 1.
    fn depth(&self) -> usize;

    /// Shape of latent layer `layer` (1-based, 1 is closest to the data)
    /// for an observation of shape `obs`.
    fn latent_shape(&self, layer: usize, obs: ImageShape) -> ImageShape;

    /// Per-dimension conditional prior `p(z_layer | z_above)`, in the
    /// layer's row-major order.
    fn prior(
        &self,
        layer: usize,
        above: &UpperLatents<'_>,
        obs: ImageShape,
    ) -> Vec<ContinuousParams>;

    /// Per-dimension conditional posterior `q(z_layer | z_above, x)`.
    fn posterior(
        &self,
        layer: usize,
        above: &UpperLatents<'_>,
        x: &Image,
    ) -> Vec<ContinuousParams>;

    /// Per-pixel likelihood `p(x | z)` as a continuous location-scale
    /// distribution over pixel values, discretized to the 256 symbol bins
    /// by [`discretized_pixel_masses`].
    fn likelihood(&self, latents: &[LatentTensor], obs: ImageShape) -> Vec<ContinuousParams>;
}

/// Masses of the 256 pixel symbols under a continuous distribution: interior
/// bins are cdf differences at half-integer edges and the end bins absorb
/// the tails.
pub fn discretized_pixel_masses(params: ContinuousParams, out: &mut [f64]) {
    debug_assert_eq!(out.len(), 256);
    let mut prev = 0.0;
    for (k, slot) in out.iter_mut().enumerate() {
        let next = if k == 255 {
            1.0
        } else {
            let z = (k as f64 + 0.5 - params.loc) / params.scale;
            if z <= -40.0 {
                0.0
            } else if z >= 40.0 {
                1.0
            } else {
                params.family.std_cdf(z)
            }
        };
        *slot = next - prev;
        prev = next;
    }
}

/// Log2 of the mass a continuous likelihood assigns to pixel value `p`.
pub fn pixel_log2_mass(params: ContinuousParams, p: u8) -> f64 {
    let cdf_at = |edge: f64| {
        let z = (edge - params.loc) / params.scale;
        if z <= -40.0 {
            0.0
        } else if z >= 40.0 {
            1.0
        } else {
            params.family.std_cdf(z)
        }
    };
    let lo = if p == 0 { 0.0 } else { cdf_at(p as f64 - 0.5) };
    let hi = if p == 255 { 1.0 } else { cdf_at(p as f64 + 0.5) };
    (hi - lo).max(f64::MIN_POSITIVE).log2()
}

/// How the bits-back chain obtains its initial buffer.
#[derive(Clone, Debug)]
pub enum SeedPolicy {
    /// No seeding: the first pop of a fresh chain fails with
    /// `InsufficientBits`.
    Error,
    /// Seed the message with `words` pseudo-random words from a counted,
    /// reproducible generator. The seed words are part of the message and
    /// are included in every reported length.
    CountedRandom { words: usize, seed: u64 },
}

/// Deterministic seed words; the leading word is kept nonzero so it is
/// always a valid flattened-head word.
pub fn seed_words(count: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<u32> = (0..count).map(|_| rng.next_u32()).collect();
    if let Some(first) = words.first_mut() {
        if *first == 0 {
            *first = 1;
        }
    }
    words
}

/// Upper bound on the words the first image of a chain can consume: growing
/// the head costs at most five pops per lane (bucket plus residual chunks)
/// and each posterior pop pulls at most one word.
pub fn worst_case_seed_words<M: LatentHierarchyModel>(
    model: &M,
    obs: ImageShape,
    _n_bins: usize,
) -> usize {
    let coder_shape = bbans_head_shape(model, obs);
    let total_lanes = coder_shape.lane_count();
    let z_lanes: usize = (1..=model.depth())
        .map(|l| model.latent_shape(l, obs).dims())
        .sum();
    2 + 5 * total_lanes + z_lanes + 16
}

/// The head shape used to code an observation: a pair of the observation
/// lanes and one lane array per latent layer.
pub fn bbans_head_shape<M: LatentHierarchyModel>(model: &M, obs: ImageShape) -> HeadShape {
    let x_part = HeadShape::of_dims(&[obs.height, obs.width, obs.channels]);
    let z_parts: Vec<HeadShape> = (1..=model.depth())
        .map(|l| {
            let s = model.latent_shape(l, obs);
            HeadShape::of_dims(&[s.height, s.width, s.channels])
        })
        .collect();
    HeadShape::Tuple(vec![x_part, HeadShape::Tuple(z_parts)])
}

fn x_lens() -> ViewLens {
    ViewLens::of(&[0])
}

fn z_root_lens() -> ViewLens {
    ViewLens::of(&[1])
}

fn z_layer_lens(layer: usize) -> ViewLens {
    ViewLens::of(&[1, layer - 1])
}

/// Quantized information moved by one bits-back push, in bits.
#[derive(Clone, Copy, Debug, Default)]
pub struct BbansStepReport {
    /// Bits removed by the posterior index pops.
    pub posterior_bits: f64,
    /// Bits added by the likelihood push.
    pub likelihood_bits: f64,
    /// Bits added by the uniform index push.
    pub uniform_bits: f64,
}

impl BbansStepReport {
    /// Net length change of the push in quantized log-masses.
    pub fn net_bits(&self) -> f64 {
        self.likelihood_bits + self.uniform_bits - self.posterior_bits
    }
}

/// Bits-back coder for one model at a fixed precision and bin count.
pub struct BbansCoder<'a, M: LatentHierarchyModel> {
    model: &'a M,
    n_bins: usize,
    precision: u32,
    uniform: QuantizedDistribution,
}

impl<'a, M: LatentHierarchyModel> BbansCoder<'a, M> {
    pub fn new(model: &'a M, n_bins: usize, precision: u32) -> Result<Self> {
        if !n_bins.is_power_of_two() || !(2..=1 << 16).contains(&n_bins) {
            return Err(Error::InvalidBinCount(n_bins));
        }
        if (n_bins as u64) > 1u64 << precision {
            return Err(Error::AlphabetTooLarge {
                symbols: n_bins,
                precision,
            });
        }
        let uniform = QuantizedDistribution::uniform_with_precision(n_bins, precision)?;
        Ok(BbansCoder {
            model,
            n_bins,
            precision,
            uniform,
        })
    }

    pub fn model(&self) -> &M {
        self.model
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn head_shape(&self, obs: ImageShape) -> HeadShape {
        bbans_head_shape(self.model, obs)
    }

    fn check_shape(&self, msg: &ShapedMessage, obs: ImageShape) -> Result<()> {
        let want = self.head_shape(obs);
        if *msg.shape() != want {
            return Err(Error::ShapeMismatch {
                expected: want.lane_count(),
                got: msg.lane_count(),
            });
        }
        Ok(())
    }

    /// Builds, for one layer, the per-dimension prior grids and the
    /// posterior-over-indices distributions.
    fn layer_grids(
        &self,
        layer: usize,
        above: &UpperLatents<'_>,
        obs: ImageShape,
    ) -> Result<Vec<DiscretizationGrid>> {
        let prior = self.model.prior(layer, above, obs);
        prior
            .into_iter()
            .map(|p| make_equal_mass_bins(p, self.n_bins))
            .collect()
    }

    fn layer_posterior_dists(
        &self,
        layer: usize,
        grids: &[DiscretizationGrid],
        above: &UpperLatents<'_>,
        x: &Image,
    ) -> Result<Vec<QuantizedDistribution>> {
        let posterior = self.model.posterior(layer, above, x);
        debug_assert_eq!(posterior.len(), grids.len());
        grids
            .iter()
            .zip(posterior)
            .map(|(g, q)| posterior_index_dist(g, q, self.precision))
            .collect()
    }

    fn pixel_dists(&self, latents: &[LatentTensor], obs: ImageShape) -> Result<Vec<QuantizedDistribution>> {
        let params = self.model.likelihood(latents, obs);
        let mut masses = [0.0f64; 256];
        params
            .into_iter()
            .map(|p| {
                discretized_pixel_masses(p, &mut masses);
                QuantizedDistribution::quantize(&masses, self.precision)
            })
            .collect()
    }

    /// Encodes `x`: pops the latent indices layer by layer from the
    /// posterior (top-down), pushes the pixels under the likelihood at the
    /// bin centers, then pushes all indices under the uniform index prior
    /// in one vectorized push.
    pub fn push(&self, msg: &mut ShapedMessage, x: &Image) -> Result<BbansStepReport> {
        let obs = x.shape;
        self.check_shape(msg, obs)?;
        let depth = self.model.depth();
        let mut report = BbansStepReport::default();

        // latents[l - 1] will hold layer l; filled top-down
        let mut latents: Vec<Option<LatentTensor>> = vec![None; depth];
        let mut indices: Vec<Vec<u32>> = vec![Vec::new(); depth];
        let mut upper: Vec<LatentTensor> = Vec::with_capacity(depth);

        for layer in (1..=depth).rev() {
            let above = UpperLatents { tensors: &upper };
            let grids = self.layer_grids(layer, &above, obs)?;
            let dists = self.layer_posterior_dists(layer, &grids, &above, x)?;
            let idx = {
                let mut view = msg.view_at(&z_layer_lens(layer))?;
                view.vpop(LaneDists::PerLane(&dists))?
            };
            for (lane, &i) in idx.iter().enumerate() {
                report.posterior_bits += dists[lane].bits_of(i as usize);
            }
            let centers = index_to_center(&grids, &idx);
            let tensor = LatentTensor {
                shape: self.model.latent_shape(layer, obs),
                values: centers,
            };
            // `upper` is kept in bottom-up order for the next (lower) layer:
            // its first element must be the layer immediately above.
            upper.insert(0, tensor.clone());
            latents[layer - 1] = Some(tensor);
            indices[layer - 1] = idx;
        }

        let latents: Vec<LatentTensor> = latents.into_iter().map(Option::unwrap).collect();
        let pixel_dists = self.pixel_dists(&latents, obs)?;
        let pixels: Vec<u32> = x.pixels.iter().map(|&p| p as u32).collect();
        for (lane, &p) in pixels.iter().enumerate() {
            report.likelihood_bits += pixel_dists[lane].bits_of(p as usize);
        }
        {
            let mut view = msg.view_at(&x_lens())?;
            view.vpush(&pixels, LaneDists::PerLane(&pixel_dists))?;
        }

        // one vectorized push of every layer's indices under the uniform
        // index prior
        let all_indices: Vec<u32> = indices.into_iter().flatten().collect();
        report.uniform_bits += all_indices.len() as f64 * (self.n_bins as f64).log2();
        {
            let mut view = msg.view_at(&z_root_lens())?;
            view.vpush(&all_indices, LaneDists::Broadcast(&self.uniform))?;
        }
        Ok(report)
    }

    /// Decodes one observation; the precise inverse of [`push`].
    ///
    /// [`push`]: BbansCoder::push
    pub fn pop(&self, msg: &mut ShapedMessage, obs: ImageShape) -> Result<Image> {
        self.check_shape(msg, obs)?;
        let depth = self.model.depth();

        let all_indices = {
            let mut view = msg.view_at(&z_root_lens())?;
            view.vpop(LaneDists::Broadcast(&self.uniform))?
        };
        // split back into per-layer tensors (ascending layer order in the
        // lane layout)
        let mut indices: Vec<Vec<u32>> = Vec::with_capacity(depth);
        let mut offset = 0;
        for layer in 1..=depth {
            let dims = self.model.latent_shape(layer, obs).dims();
            indices.push(all_indices[offset..offset + dims].to_vec());
            offset += dims;
        }

        // reconstruct latents top-down and keep the grids for the
        // re-encoding pass
        let mut upper: Vec<LatentTensor> = Vec::with_capacity(depth);
        let mut grids_per_layer: Vec<Option<Vec<DiscretizationGrid>>> = vec![None; depth];
        for layer in (1..=depth).rev() {
            let above = UpperLatents { tensors: &upper };
            let grids = self.layer_grids(layer, &above, obs)?;
            let centers = index_to_center(&grids, &indices[layer - 1]);
            upper.insert(
                0,
                LatentTensor {
                    shape: self.model.latent_shape(layer, obs),
                    values: centers,
                },
            );
            grids_per_layer[layer - 1] = Some(grids);
        }
        let latents = upper; // bottom-up order: latents[0] is layer 1

        let pixel_dists = self.pixel_dists(&latents, obs)?;
        let pixels = {
            let mut view = msg.view_at(&x_lens())?;
            view.vpop(LaneDists::PerLane(&pixel_dists))?
        };
        let x = Image::new(obs, pixels.iter().map(|&p| p as u8).collect());

        // push the indices back under the posterior, lowest layer first
        for layer in 1..=depth {
            let above = UpperLatents {
                tensors: &latents[layer..],
            };
            let grids = grids_per_layer[layer - 1].take().unwrap();
            let dists = self.layer_posterior_dists(layer, &grids, &above, &x)?;
            let mut view = msg.view_at(&z_layer_lens(layer))?;
            view.vpush(&indices[layer - 1], LaneDists::PerLane(&dists))?;
        }
        Ok(x)
    }
}

/// Report of one chained compression run.
#[derive(Clone, Debug)]
pub struct ChainReport {
    /// The flattened final message.
    pub words: Vec<u32>,
    /// Words of counted seed the chain started from.
    pub seed_words: usize,
    /// Net message growth per image, in bits (content measure).
    pub per_image_net_bits: Vec<f64>,
    /// Mean net bits per dimension across the images.
    pub net_bits_per_dim: f64,
    /// Final flattened size in bits, seed included.
    pub total_bits: u64,
}

/// Compresses a sequence of images onto one message by repeated bits-back
/// pushes, then flattens. Per-image net costs are content-measure deltas;
/// the total includes the counted seed.
pub fn chain_compress<M: LatentHierarchyModel>(
    images: &[Image],
    model: &M,
    n_bins: usize,
    precision: u32,
    policy: &SeedPolicy,
) -> Result<ChainReport> {
    let coder = BbansCoder::new(model, n_bins, precision)?;
    let mut msg = match (policy, images.first()) {
        (_, None) => ShapedMessage::empty(HeadShape::scalar()),
        (SeedPolicy::Error, Some(first)) => ShapedMessage::empty(coder.head_shape(first.shape)),
        (SeedPolicy::CountedRandom { words, seed }, Some(first)) => {
            ShapedMessage::unflatten(&seed_words(*words, *seed), coder.head_shape(first.shape))?
        }
    };
    let seed_count = match policy {
        SeedPolicy::Error => 0,
        SeedPolicy::CountedRandom { words, .. } => *words,
    };

    let mut per_image = Vec::with_capacity(images.len());
    let mut total_dims = 0usize;
    for image in images {
        let want = coder.head_shape(image.shape);
        if msg.shape() != &want {
            msg.reshape(want)?;
        }
        let before = msg.content_bits();
        coder.push(&mut msg, image)?;
        per_image.push(msg.content_bits() - before);
        total_dims += image.shape.dims();
    }
    let net: f64 = per_image.iter().sum();
    let words = msg.flatten();
    Ok(ChainReport {
        total_bits: 32 * words.len() as u64,
        words,
        seed_words: seed_count,
        per_image_net_bits: per_image,
        net_bits_per_dim: if total_dims > 0 {
            net / total_dims as f64
        } else {
            0.0
        },
    })
}

/// Decompresses a chain of `count` same-shape images; they are returned in
/// the order they were given to [`chain_compress`].
pub fn chain_decompress<M: LatentHierarchyModel>(
    words: &[u32],
    model: &M,
    obs: ImageShape,
    count: usize,
    n_bins: usize,
    precision: u32,
) -> Result<Vec<Image>> {
    let coder = BbansCoder::new(model, n_bins, precision)?;
    let mut msg = ShapedMessage::unflatten(words, coder.head_shape(obs))?;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        images.push(coder.pop(&mut msg, obs)?);
    }
    images.reverse();
    Ok(images)
}

/// Monte-Carlo estimate of the expected bits-back message length per
/// dimension: `-E_q[log p(x,z)/q(z|x)] / dims`, in bits. Uses the
/// continuous model; the discretization gap is measured separately by the
/// coding tests.
#[derive(Clone, Copy, Debug)]
pub struct ElboEstimate {
    pub bits_per_dim: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

pub fn elbo_estimate<M: LatentHierarchyModel>(
    model: &M,
    x: &Image,
    n_samples: usize,
    seed: u64,
) -> ElboEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = x.shape;
    let depth = model.depth();
    let dims = obs.dims() as f64;
    let ln2 = std::f64::consts::LN_2;

    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut upper: Vec<LatentTensor> = Vec::with_capacity(depth);
        let mut log_ratio = 0.0; // ln p(x, z) - ln q(z | x)
        for layer in (1..=depth).rev() {
            let above = UpperLatents { tensors: &upper };
            let prior = model.prior(layer, &above, obs);
            let posterior = model.posterior(layer, &above, x);
            let shape = model.latent_shape(layer, obs);
            let mut values = Vec::with_capacity(prior.len());
            for (p, q) in prior.iter().zip(&posterior) {
                let z = q.loc + q.scale * gauss_sample(&mut rng);
                log_ratio += gaussian_ln_density(*p, z) - gaussian_ln_density(*q, z);
                values.push(z);
            }
            upper.insert(0, LatentTensor { shape, values });
        }
        let lik = model.likelihood(&upper, obs);
        for (params, &p) in lik.iter().zip(&x.pixels) {
            log_ratio += pixel_log2_mass(*params, p) * ln2;
        }
        samples.push(-log_ratio / ln2 / dims);
    }

    let mean = samples.iter().sum::<f64>() / n_samples as f64;
    let var = samples
        .iter()
        .map(|s| (s - mean) * (s - mean))
        .sum::<f64>()
        / (n_samples.max(2) - 1) as f64;
    ElboEstimate {
        bits_per_dim: mean,
        std_err: (var / n_samples as f64).sqrt(),
        n_samples,
    }
}

fn gaussian_ln_density(params: ContinuousParams, z: f64) -> f64 {
    debug_assert!(matches!(
        params.family,
        crate::discretize::ContinuousFamily::Gaussian
    ));
    let t = (z - params.loc) / params.scale;
    -0.5 * t * t - params.scale.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard normal draw by Box-Muller over raw uniform words, so samples
/// depend only on the ChaCha keystream.
pub(crate) fn gauss_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) / 9007199254740992.0;
    let u2 = ((rng.next_u64() >> 11) as f64 + 0.5) / 9007199254740992.0;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_toy_model;

    fn sample_images(name: &str, shape: ImageShape, n: usize) -> (crate::models::ToyModel, Vec<Image>) {
        let model = build_toy_model(name).unwrap();
        let images = (0..n as u64)
            .map(|i| model.sample_image(shape, 5000 + i))
            .collect();
        (model, images)
    }

    #[test]
    fn depth_one_reduces_to_the_three_step_procedure() {
        // At depth 1 the coder is exactly: pop z from the posterior over
        // indices, push x under the likelihood, push z under the uniform
        // index prior. Replay those steps by hand and compare bit-for-bit.
        let (model, images) = sample_images("toy1", ImageShape::new(4, 4, 1).unwrap(), 1);
        let x = &images[0];
        let obs = x.shape;
        let coder = BbansCoder::new(&model, 256, 16).unwrap();
        let seed = seed_words(4096, 99);

        let mut by_coder = ShapedMessage::unflatten(&seed, coder.head_shape(obs)).unwrap();
        coder.push(&mut by_coder, x).unwrap();

        let mut by_hand = ShapedMessage::unflatten(&seed, coder.head_shape(obs)).unwrap();
        let above = UpperLatents::none();
        let prior = model.prior(1, &above, obs);
        let grids: Vec<_> = prior
            .iter()
            .map(|p| crate::discretize::make_equal_mass_bins(*p, 256).unwrap())
            .collect();
        let posterior = model.posterior(1, &above, x);
        let dists: Vec<_> = grids
            .iter()
            .zip(&posterior)
            .map(|(g, q)| crate::discretize::posterior_index_dist(g, *q, 16).unwrap())
            .collect();
        let idx = by_hand
            .view_at(&z_layer_lens(1))
            .unwrap()
            .vpop(LaneDists::PerLane(&dists))
            .unwrap();
        let centers = index_to_center(&grids, &idx);
        let latents = vec![LatentTensor {
            shape: model.latent_shape(1, obs),
            values: centers,
        }];
        let lik = model.likelihood(&latents, obs);
        let mut masses = [0.0; 256];
        let pix: Vec<_> = lik
            .iter()
            .map(|p| {
                discretized_pixel_masses(*p, &mut masses);
                QuantizedDistribution::quantize(&masses, 16).unwrap()
            })
            .collect();
        let pixels: Vec<u32> = x.pixels.iter().map(|&p| p as u32).collect();
        by_hand
            .view_at(&x_lens())
            .unwrap()
            .vpush(&pixels, LaneDists::PerLane(&pix))
            .unwrap();
        let uniform = QuantizedDistribution::uniform_with_precision(256, 16).unwrap();
        by_hand
            .view_at(&z_root_lens())
            .unwrap()
            .vpush(&idx, LaneDists::Broadcast(&uniform))
            .unwrap();

        assert_eq!(by_coder, by_hand);
    }

    #[test]
    fn push_pop_inverse_depth_three() {
        let shape = ImageShape::new(8, 8, 1).unwrap();
        let (model, images) = sample_images("toy3", shape, 3);
        let coder = BbansCoder::new(&model, 256, 16).unwrap();
        let words = seed_words(worst_case_seed_words(&model, shape, 256), 5);
        let start = ShapedMessage::unflatten(&words, coder.head_shape(shape)).unwrap();
        let mut msg = start.clone();
        for x in &images {
            coder.push(&mut msg, x).unwrap();
        }
        for x in images.iter().rev() {
            assert_eq!(&coder.pop(&mut msg, shape).unwrap(), x);
        }
        assert_eq!(msg, start);
    }

    #[test]
    fn exhaustive_roundtrip_one_pixel_all_values() {
        // depth 2, 1x1x1 observation, every possible pixel value
        let shape = ImageShape::new(1, 1, 1).unwrap();
        let model = build_toy_model("toy2").unwrap();
        let coder = BbansCoder::new(&model, 64, 14).unwrap();
        let words = seed_words(2048, 8);
        for v in 0..=255u8 {
            let x = Image::new(shape, vec![v]);
            let mut msg = ShapedMessage::unflatten(&words, coder.head_shape(shape)).unwrap();
            coder.push(&mut msg, &x).unwrap();
            let back = coder.pop(&mut msg, shape).unwrap();
            assert_eq!(back, x, "pixel value {v}");
        }
    }

    #[test]
    fn net_length_identity() {
        // measured content change equals the quantized log-mass accounting
        // within the renormalization slack
        let shape = ImageShape::new(16, 16, 1).unwrap();
        let (model, images) = sample_images("toy2", shape, 4);
        let coder = BbansCoder::new(&model, 4096, 16).unwrap();
        let words = seed_words(worst_case_seed_words(&model, shape, 4096), 6);
        let mut msg = ShapedMessage::unflatten(&words, coder.head_shape(shape)).unwrap();
        for x in &images {
            let before = msg.content_bits();
            let report = coder.push(&mut msg, x).unwrap();
            let measured = msg.content_bits() - before;
            assert!(
                (measured - report.net_bits()).abs() <= 64.0,
                "measured {measured:.2} vs accounted {:.2}",
                report.net_bits()
            );
        }
    }

    #[test]
    fn unseeded_first_pop_reports_insufficient_bits() {
        let shape = ImageShape::new(4, 4, 1).unwrap();
        let (model, images) = sample_images("toy1", shape, 1);
        let coder = BbansCoder::new(&model, 256, 16).unwrap();
        let mut msg = ShapedMessage::empty(coder.head_shape(shape));
        assert!(matches!(
            coder.push(&mut msg, &images[0]),
            Err(Error::InsufficientBits { .. })
        ));
    }

    #[test]
    fn decoding_with_a_different_model_garbles_the_data() {
        let shape = ImageShape::new(8, 8, 1).unwrap();
        let (model, images) = sample_images("toy1", shape, 2);
        let other = build_toy_model("toy2").unwrap();
        let report = chain_compress(
            &images,
            &model,
            256,
            16,
            &SeedPolicy::CountedRandom { words: 4096, seed: 1 },
        )
        .unwrap();
        let wrong = chain_decompress(&report.words, &other, shape, 2, 256, 16);
        match wrong {
            Ok(decoded) => assert_ne!(decoded, images),
            Err(_) => {} // a failed pop is also an acceptable outcome
        }
    }

    #[test]
    fn chain_is_lifo_and_decompress_restores_order() {
        let shape = ImageShape::new(4, 4, 1).unwrap();
        let (model, images) = sample_images("toy1", shape, 5);
        let report = chain_compress(
            &images,
            &model,
            256,
            16,
            &SeedPolicy::CountedRandom { words: 4096, seed: 2 },
        )
        .unwrap();
        assert_eq!(report.per_image_net_bits.len(), 5);
        let decoded = chain_decompress(&report.words, &model, shape, 5, 256, 16).unwrap();
        assert_eq!(decoded, images);

        // popping manually returns the images in reverse push order
        let coder = BbansCoder::new(&model, 256, 16).unwrap();
        let mut msg = ShapedMessage::unflatten(&report.words, coder.head_shape(shape)).unwrap();
        let last = coder.pop(&mut msg, shape).unwrap();
        assert_eq!(&last, images.last().unwrap());
    }

    #[test]
    fn elbo_estimate_is_reproducible_under_a_fixed_seed() {
        let shape = ImageShape::new(4, 4, 1).unwrap();
        let (model, images) = sample_images("toy2", shape, 1);
        let a = elbo_estimate(&model, &images[0], 1, 42);
        let b = elbo_estimate(&model, &images[0], 1, 42);
        assert_eq!(a.bits_per_dim.to_bits(), b.bits_per_dim.to_bits());
    }

    // The posterior interface hands layer l only the latents of layers
    // above it (UpperLatents), so a bottom-up factorization cannot be
    // expressed: there is no way to pass z_{<l} into `posterior`. This is
    // the contract-level counterpart of requiring top-down inference, and
    // the compiler enforces it; this test just pins the shape of the
    // interface.
    #[test]
    fn posterior_interface_exposes_only_upper_layers() {
        let shape = ImageShape::new(8, 8, 1).unwrap();
        let model = build_toy_model("toy3").unwrap();
        let z3 = LatentTensor {
            shape: model.latent_shape(3, shape),
            values: vec![0.0; model.latent_shape(3, shape).dims()],
        };
        let z2 = LatentTensor {
            shape: model.latent_shape(2, shape),
            values: vec![0.0; model.latent_shape(2, shape).dims()],
        };
        // for layer 1 the view holds layers 2 and 3 and nothing else
        let stack = [z2, z3];
        let above = UpperLatents::new(&stack);
        assert_eq!(above.len(), 2);
        let l2 = model.latent_shape(2, shape);
        assert_eq!(above.layer_above().unwrap().shape, l2);
    }
}
