//! Composable codecs: a codec is a push/pop pair over a message view, with
//! pop the exact inverse of push. Primitive codecs wrap quantized
//! distributions; combinators compose codecs serially, through lenses onto
//! sub-heads, and autoregressively.

use crate::ans::{LaneDists, QuantizedDistribution};
use crate::error::{Error, Result};
use crate::message::{MessageView, ViewLens};

/// A push/pop pair over a shaped message. `pop` after `push` restores both
/// the message and the value bit-exactly.
pub trait Codec {
    type Value;

    fn push(&self, msg: &mut MessageView<'_>, value: &Self::Value) -> Result<()>;
    fn pop(&self, msg: &mut MessageView<'_>) -> Result<Self::Value>;
}

/// Codec for integers in `[0, n)` under the uniform distribution, one
/// symbol per lane of the addressed head. When `n` is a power of two each
/// symbol costs exactly `log2 n` bits.
pub struct UniformCodec {
    dist: QuantizedDistribution,
    n: usize,
}

impl UniformCodec {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > 1 << 24 {
            return Err(Error::InvalidDistribution(format!(
                "uniform alphabet size {n} out of range 1..=2^24"
            )));
        }
        Ok(UniformCodec {
            dist: QuantizedDistribution::uniform(n)?,
            n,
        })
    }

    /// Uniform codec at an explicit precision (needed when it must be
    /// bit-compatible with other codecs at that precision).
    pub fn with_precision(n: usize, precision: u32) -> Result<Self> {
        Ok(UniformCodec {
            dist: QuantizedDistribution::uniform_with_precision(n, precision)?,
            n,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.n
    }

    pub fn distribution(&self) -> &QuantizedDistribution {
        &self.dist
    }
}

impl Codec for UniformCodec {
    type Value = Vec<u32>;

    fn push(&self, msg: &mut MessageView<'_>, value: &Vec<u32>) -> Result<()> {
        msg.vpush(value, LaneDists::Broadcast(&self.dist))
    }

    fn pop(&self, msg: &mut MessageView<'_>) -> Result<Vec<u32>> {
        msg.vpop(LaneDists::Broadcast(&self.dist))
    }
}

/// Codec for symbols under one shared quantized distribution, one symbol
/// per lane. Pushing symbol `s` costs `precision - log2(freq(s))` bits.
pub struct CategoricalCodec {
    dist: QuantizedDistribution,
}

impl CategoricalCodec {
    pub fn new(dist: QuantizedDistribution) -> Self {
        CategoricalCodec { dist }
    }

    pub fn distribution(&self) -> &QuantizedDistribution {
        &self.dist
    }
}

impl Codec for CategoricalCodec {
    type Value = Vec<u32>;

    fn push(&self, msg: &mut MessageView<'_>, value: &Vec<u32>) -> Result<()> {
        msg.vpush(value, LaneDists::Broadcast(&self.dist))
    }

    fn pop(&self, msg: &mut MessageView<'_>) -> Result<Vec<u32>> {
        msg.vpop(LaneDists::Broadcast(&self.dist))
    }
}

/// Codec with one quantized distribution per lane.
pub struct PerLaneCodec {
    dists: Vec<QuantizedDistribution>,
}

impl PerLaneCodec {
    pub fn new(dists: Vec<QuantizedDistribution>) -> Self {
        PerLaneCodec { dists }
    }
}

impl Codec for PerLaneCodec {
    type Value = Vec<u32>;

    fn push(&self, msg: &mut MessageView<'_>, value: &Vec<u32>) -> Result<()> {
        msg.vpush(value, LaneDists::PerLane(&self.dists))
    }

    fn pop(&self, msg: &mut MessageView<'_>) -> Result<Vec<u32>> {
        msg.vpop(LaneDists::PerLane(&self.dists))
    }
}

/// Maximum tolerated deviation of a cdf from 0 and 1 at the support ends.
pub const CDF_TOLERANCE: f64 = 1e-9;

/// Builds the quantized distribution over bin indices of a continuous
/// distribution given by its cdf: bin masses are cdf differences at the bin
/// edges, integerized by largest-remainder quantization.
///
/// `bin_edges` must be strictly increasing and cover the support; the cdf
/// must evaluate to 0 and 1 (within [`CDF_TOLERANCE`]) at the first and last
/// edge. Infinite edges are allowed and map to cdf values 0 and 1.
pub fn quantize_cdf_bins(
    cdf: impl Fn(f64) -> f64,
    bin_edges: &[f64],
    precision: u32,
) -> Result<QuantizedDistribution> {
    if bin_edges.len() < 2 {
        return Err(Error::InvalidDistribution("need at least one bin".into()));
    }
    for w in bin_edges.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidDistribution(
                "bin edges must be strictly increasing".into(),
            ));
        }
    }
    let eval = |x: f64| -> f64 {
        if x == f64::NEG_INFINITY {
            0.0
        } else if x == f64::INFINITY {
            1.0
        } else {
            cdf(x)
        }
    };
    let lo = eval(bin_edges[0]);
    let hi = eval(*bin_edges.last().unwrap());
    if lo.abs() > CDF_TOLERANCE || (hi - 1.0).abs() > CDF_TOLERANCE {
        return Err(Error::CdfDoesNotSpan { lo, hi });
    }
    let mut masses = Vec::with_capacity(bin_edges.len() - 1);
    let mut prev = lo;
    for (i, &edge) in bin_edges[1..].iter().enumerate() {
        let next = eval(edge);
        let mass = next - prev;
        if mass < 0.0 {
            return Err(Error::NonMonotoneCdf { bin: i });
        }
        masses.push(mass);
        prev = next;
    }
    QuantizedDistribution::quantize(&masses, precision)
}

/// Codec over bin indices of a discretized continuous distribution.
pub fn discretized_continuous_codec(
    cdf: impl Fn(f64) -> f64,
    bin_edges: &[f64],
    precision: u32,
) -> Result<CategoricalCodec> {
    Ok(CategoricalCodec::new(quantize_cdf_bins(
        cdf, bin_edges, precision,
    )?))
}

/// Applies codecs in order on push and in reverse order on pop. The value
/// is the vector of the parts' values, in push order. Composition adds
/// zero bits of its own.
pub struct SerialCodec<C: Codec> {
    parts: Vec<C>,
}

impl<C: Codec> SerialCodec<C> {
    pub fn new(parts: Vec<C>) -> Self {
        SerialCodec { parts }
    }
}

impl<C: Codec> Codec for SerialCodec<C> {
    type Value = Vec<C::Value>;

    fn push(&self, msg: &mut MessageView<'_>, value: &Vec<C::Value>) -> Result<()> {
        if value.len() != self.parts.len() {
            return Err(Error::ShapeMismatch {
                expected: self.parts.len(),
                got: value.len(),
            });
        }
        for (codec, v) in self.parts.iter().zip(value) {
            codec.push(msg, v)?;
        }
        Ok(())
    }

    fn pop(&self, msg: &mut MessageView<'_>) -> Result<Vec<C::Value>> {
        let mut values: Vec<C::Value> = Vec::with_capacity(self.parts.len());
        for codec in self.parts.iter().rev() {
            values.push(codec.pop(msg)?);
        }
        values.reverse();
        Ok(values)
    }
}

/// Applies an inner codec through a lens onto a structural component of the
/// head, leaving all other lanes untouched.
pub struct ViewCodec<C: Codec> {
    lens: ViewLens,
    inner: C,
}

impl<C: Codec> ViewCodec<C> {
    pub fn new(lens: ViewLens, inner: C) -> Self {
        ViewCodec { lens, inner }
    }
}

impl<C: Codec> Codec for ViewCodec<C> {
    type Value = C::Value;

    fn push(&self, msg: &mut MessageView<'_>, value: &C::Value) -> Result<()> {
        let mut sub = msg.narrow(&self.lens)?;
        self.inner.push(&mut sub, value)
    }

    fn pop(&self, msg: &mut MessageView<'_>) -> Result<C::Value> {
        let mut sub = msg.narrow(&self.lens)?;
        self.inner.pop(&mut sub)
    }
}

/// Autoregressive composition: element `k` is coded under a codec built
/// from the already-decoded elements `0..k`.
///
/// Decoding must run forward (element `k` may depend only on earlier
/// elements), so pushing traverses the elements in reverse order. The
/// context function must be deterministic or the round trip fails.
pub struct AutoregressiveCodec<V, C, F>
where
    C: Codec<Value = V>,
    F: Fn(&[V]) -> C,
{
    len: usize,
    step: F,
    _marker: std::marker::PhantomData<fn() -> (V, C)>,
}

impl<V, C, F> AutoregressiveCodec<V, C, F>
where
    C: Codec<Value = V>,
    F: Fn(&[V]) -> C,
{
    pub fn new(len: usize, step: F) -> Self {
        AutoregressiveCodec {
            len,
            step,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<V, C, F> Codec for AutoregressiveCodec<V, C, F>
where
    C: Codec<Value = V>,
    F: Fn(&[V]) -> C,
{
    type Value = Vec<V>;

    fn push(&self, msg: &mut MessageView<'_>, value: &Vec<V>) -> Result<()> {
        if value.len() != self.len {
            return Err(Error::ShapeMismatch {
                expected: self.len,
                got: value.len(),
            });
        }
        for k in (0..self.len).rev() {
            let codec = (self.step)(&value[..k]);
            codec.push(msg, &value[k])?;
        }
        Ok(())
    }

    fn pop(&self, msg: &mut MessageView<'_>) -> Result<Vec<V>> {
        let mut values: Vec<V> = Vec::with_capacity(self.len);
        for _ in 0..self.len {
            let codec = (self.step)(&values);
            values.push(codec.pop(msg)?);
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{HeadShape, ShapedMessage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded(shape: HeadShape, words: usize, seed: u64) -> ShapedMessage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<u32> = (0..words).map(|_| rng.random()).collect();
        if w[0] == 0 {
            w[0] = 1;
        }
        ShapedMessage::unflatten(&w, shape).unwrap()
    }

    #[test]
    fn uniform_one_pushes_zero_bits() {
        let c = UniformCodec::new(1).unwrap();
        let mut msg = ShapedMessage::empty(HeadShape::scalar());
        let before = msg.clone();
        c.push(&mut msg.as_view(), &vec![0]).unwrap();
        assert_eq!(msg, before);
        let v = c.pop(&mut msg.as_view()).unwrap();
        assert_eq!(v, vec![0]);
        assert_eq!(msg, before);
    }

    #[test]
    fn uniform_256_costs_eight_bits() {
        let c = UniformCodec::new(256).unwrap();
        let mut msg = seeded(HeadShape::scalar(), 8, 1);
        let before = msg.content_bits();
        for i in 0..5000u32 {
            c.push(&mut msg.as_view(), &vec![i % 256]).unwrap();
        }
        let grown = msg.content_bits() - before;
        assert!((grown - 5000.0 * 8.0).abs() <= 64.0);
    }

    #[test]
    fn uniform_pops_are_uniform() {
        let c = UniformCodec::new(8).unwrap();
        let mut msg = seeded(HeadShape::scalar(), 40_000, 2);
        let mut counts = [0u64; 8];
        let trials = 100_000;
        for _ in 0..trials {
            let v = c.pop(&mut msg.as_view()).unwrap();
            counts[v[0] as usize] += 1;
        }
        let p = 1.0 / 8.0;
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd);
        }
    }

    #[test]
    fn categorical_costs_match_information_content() {
        let dist = QuantizedDistribution::quantize(&[0.75, 0.25], 16).unwrap();
        let c = CategoricalCodec::new(dist);
        // the heavy symbol costs about log2(4/3) = 0.415 bits
        let mut msg = seeded(HeadShape::scalar(), 8, 3);
        let before = msg.content_bits();
        for _ in 0..100_000 {
            c.push(&mut msg.as_view(), &vec![0]).unwrap();
        }
        let per_symbol = (msg.content_bits() - before) / 100_000.0;
        assert!((per_symbol - 0.415).abs() < 0.001, "got {per_symbol}");
        // the light one costs about 2 bits
        let mut msg = seeded(HeadShape::scalar(), 8, 4);
        let before = msg.content_bits();
        for _ in 0..100_000 {
            c.push(&mut msg.as_view(), &vec![1]).unwrap();
        }
        let per_symbol = (msg.content_bits() - before) / 100_000.0;
        assert!((per_symbol - 2.0).abs() < 0.001, "got {per_symbol}");
    }

    #[test]
    fn degenerate_symbol_is_nearly_free() {
        // one symbol holds all mass that quantization allows
        let mut pmf = vec![0.0; 4];
        pmf[2] = 1.0;
        let dist = QuantizedDistribution::quantize(&pmf, 16).unwrap();
        assert_eq!(dist.frequency(2), (1 << 16) - 3);
        let c = CategoricalCodec::new(dist);
        let mut msg = seeded(HeadShape::scalar(), 8, 5);
        let before = msg.content_bits();
        for _ in 0..10_000 {
            c.push(&mut msg.as_view(), &vec![2]).unwrap();
        }
        let grown = msg.content_bits() - before;
        assert!(grown < 10.0, "heavy symbol cost {grown} bits over 10k pushes");
    }

    #[test]
    fn gaussian_half_split_is_symmetric() {
        let cdf = |x: f64| statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2) / 2.0;
        let d = quantize_cdf_bins(cdf, &[f64::NEG_INFINITY, 0.0, f64::INFINITY], 16).unwrap();
        assert_eq!(d.frequency(0), 1 << 15);
        assert_eq!(d.frequency(1), 1 << 15);
    }

    #[test]
    fn gaussian_quartile_bins_are_equal() {
        let cdf = |x: f64| statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2) / 2.0;
        // quartile edges of the standard normal
        let q = 0.674_489_750_196_081_7;
        let edges = [f64::NEG_INFINITY, -q, 0.0, q, f64::INFINITY];
        let d = quantize_cdf_bins(cdf, &edges, 16).unwrap();
        for s in 0..4 {
            assert_eq!(d.frequency(s), 1 << 14);
        }
    }

    #[test]
    fn logistic_pixel_bins_sum_exactly() {
        let mu = 87.3;
        let s = 12.0;
        let cdf = move |x: f64| 1.0 / (1.0 + (-(x - mu) / s).exp());
        let mut edges = vec![f64::NEG_INFINITY];
        for k in 1..256 {
            edges.push(k as f64 - 0.5);
        }
        edges.push(f64::INFINITY);
        let d = quantize_cdf_bins(cdf, &edges, 16).unwrap();
        let total: u64 = (0..256).map(|s| d.frequency(s) as u64).sum();
        assert_eq!(total, 1 << 16);
    }

    #[test]
    fn non_monotone_cdf_is_rejected() {
        let bad = |x: f64| match x {
            x if x <= 0.0 => 0.0,
            x if x >= 1.0 => 1.0,
            x if x < 0.5 => 0.9 * x * 2.0,
            _ => 0.4,
        };
        let edges = [0.0, 0.4, 0.7, 1.0];
        assert!(matches!(
            quantize_cdf_bins(bad, &edges, 12),
            Err(Error::NonMonotoneCdf { .. })
        ));
    }

    #[test]
    fn serial_composition_is_lifo_and_free() {
        let parts = vec![
            CategoricalCodec::new(QuantizedDistribution::quantize(&[0.5, 0.5], 8).unwrap()),
            CategoricalCodec::new(QuantizedDistribution::quantize(&[0.9, 0.1], 8).unwrap()),
            CategoricalCodec::new(QuantizedDistribution::quantize(&[0.2, 0.8], 8).unwrap()),
        ];
        let info: f64 = [
            parts[0].distribution().bits_of(1),
            parts[1].distribution().bits_of(0),
            parts[2].distribution().bits_of(1),
        ]
        .iter()
        .sum();
        let serial = SerialCodec::new(parts);
        let mut msg = seeded(HeadShape::scalar(), 8, 6);
        let start = msg.clone();
        let before = msg.content_bits();
        let value = vec![vec![1u32], vec![0], vec![1]];
        serial.push(&mut msg.as_view(), &value).unwrap();
        let grown = msg.content_bits() - before;
        // composition adds nothing beyond the parts
        assert!((grown - info).abs() < 1e-9);
        let back = serial.pop(&mut msg.as_view()).unwrap();
        assert_eq!(back, value);
        assert_eq!(msg, start);
    }

    #[test]
    fn serial_of_one_codec_equals_that_codec() {
        let d = QuantizedDistribution::quantize(&[0.3, 0.7], 10).unwrap();
        let lone = CategoricalCodec::new(d);
        let mut a = seeded(HeadShape::scalar(), 8, 7);
        let mut b = a.clone();
        lone.push(&mut a.as_view(), &vec![1]).unwrap();
        let serial = SerialCodec::new(vec![CategoricalCodec::new(
            QuantizedDistribution::quantize(&[0.3, 0.7], 10).unwrap(),
        )]);
        serial.push(&mut b.as_view(), &vec![vec![1]]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_lenses_commute() {
        let shape = HeadShape::Tuple(vec![
            HeadShape::of_dims(&[4]),
            HeadShape::of_dims(&[2, 3]),
        ]);
        let d4 = QuantizedDistribution::uniform(16).unwrap();
        let d6 = QuantizedDistribution::quantize(&[0.5, 0.3, 0.2], 12).unwrap();
        let x_codec = ViewCodec::new(ViewLens::of(&[0]), CategoricalCodec::new(d4));
        let z_codec = ViewCodec::new(ViewLens::of(&[1]), CategoricalCodec::new(d6));
        let xs = vec![3u32, 7, 1, 12];
        let zs = vec![0u32, 2, 1, 1, 0, 2];

        let mut a = seeded(shape.clone(), 64, 8);
        let mut b = a.clone();
        x_codec.push(&mut a.as_view(), &xs).unwrap();
        z_codec.push(&mut a.as_view(), &zs).unwrap();
        z_codec.push(&mut b.as_view(), &zs).unwrap();
        x_codec.push(&mut b.as_view(), &xs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn root_lens_equals_inner_codec() {
        let d = QuantizedDistribution::uniform(32).unwrap();
        let inner = CategoricalCodec::new(d);
        let viewed = ViewCodec::new(
            ViewLens::root(),
            CategoricalCodec::new(QuantizedDistribution::uniform(32).unwrap()),
        );
        let mut a = seeded(HeadShape::of_dims(&[5]), 32, 9);
        let mut b = a.clone();
        let v = vec![1u32, 30, 4, 17, 9];
        inner.push(&mut a.as_view(), &v).unwrap();
        viewed.push(&mut b.as_view(), &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nested_lens_roundtrip() {
        let shape = HeadShape::Tuple(vec![
            HeadShape::of_dims(&[2]),
            HeadShape::Tuple(vec![HeadShape::of_dims(&[3]), HeadShape::of_dims(&[1])]),
        ]);
        let mut msg = seeded(shape, 64, 10);
        let start = msg.clone();
        let inner = CategoricalCodec::new(QuantizedDistribution::uniform(8).unwrap());
        let codec = ViewCodec::new(ViewLens::of(&[1, 0]), inner);
        let v = vec![5u32, 0, 7];
        codec.push(&mut msg.as_view(), &v).unwrap();
        assert_eq!(codec.pop(&mut msg.as_view()).unwrap(), v);
        assert_eq!(msg, start);
    }

    #[test]
    fn constant_context_autoregression_equals_serial() {
        let step = |_ctx: &[Vec<u32>]| {
            CategoricalCodec::new(QuantizedDistribution::quantize(&[0.6, 0.4], 12).unwrap())
        };
        let ar = AutoregressiveCodec::new(4, step);
        let mut a = seeded(HeadShape::scalar(), 8, 11);
        let mut b = a.clone();
        let values: Vec<Vec<u32>> = vec![vec![0], vec![1], vec![1], vec![0]];
        ar.push(&mut a.as_view(), &values).unwrap();
        let back = ar.pop(&mut a.as_view()).unwrap();
        assert_eq!(back, values);
        // single element sequence equals the plain codec
        let one = AutoregressiveCodec::new(1, step);
        one.push(&mut b.as_view(), &vec![vec![1u32]]).unwrap();
        let mut c = seeded(HeadShape::scalar(), 8, 11);
        step(&[]).push(&mut c.as_view(), &vec![1u32]).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn markov_chain_codes_at_its_entropy() {
        // 2-state Markov chain; the autoregressive codec should spend the
        // exact per-transition information content.
        let trans = [[0.9, 0.1], [0.35, 0.65]];
        let dists: Vec<QuantizedDistribution> = trans
            .iter()
            .map(|row| QuantizedDistribution::quantize(row, 16).unwrap())
            .collect();
        let start_dist = QuantizedDistribution::quantize(&[0.5, 0.5], 16).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000usize;
        let mut chain: Vec<Vec<u32>> = Vec::with_capacity(n);
        let mut state = 0usize;
        for k in 0..n {
            let p = if k == 0 { 0.5 } else { trans[state][1] };
            let next = usize::from(rng.random::<f64>() < p);
            chain.push(vec![next as u32]);
            state = next;
        }

        // independent oracle: sum the quantized information contents
        let mut info = 0.0;
        for k in 0..n {
            let s = chain[k][0] as usize;
            info += if k == 0 {
                start_dist.bits_of(s)
            } else {
                dists[chain[k - 1][0] as usize].bits_of(s)
            };
        }

        let step = move |ctx: &[Vec<u32>]| {
            let dist = match ctx.last() {
                None => QuantizedDistribution::quantize(&[0.5, 0.5], 16).unwrap(),
                Some(prev) => {
                    QuantizedDistribution::quantize(&trans[prev[0] as usize], 16).unwrap()
                }
            };
            CategoricalCodec::new(dist)
        };
        let ar = AutoregressiveCodec::new(n, step);
        let mut msg = seeded(HeadShape::scalar(), 8, 12);
        let start = msg.clone();
        let before = msg.content_bits();
        ar.push(&mut msg.as_view(), &chain).unwrap();
        let grown = msg.content_bits() - before;
        assert!(
            (grown - info).abs() <= 64.0,
            "coded {grown:.1} bits, information {info:.1}"
        );
        let back = ar.pop(&mut msg.as_view()).unwrap();
        assert_eq!(back, chain);
        assert_eq!(msg, start);
    }

    #[test]
    fn universal_roundtrip_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..200 {
            let n = rng.random_range(2..40usize);
            let pmf: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let dist = QuantizedDistribution::quantize(&pmf, 14).unwrap();
            let c = CategoricalCodec::new(dist);
            let lanes = rng.random_range(1..12usize);
            let mut msg = seeded(HeadShape::of_dims(&[lanes]), 4 * lanes + 8, trial);
            let start = msg.clone();
            let v: Vec<u32> = (0..lanes).map(|_| rng.random_range(0..n as u32)).collect();
            c.push(&mut msg.as_view(), &v).unwrap();
            assert_eq!(c.pop(&mut msg.as_view()).unwrap(), v);
            assert_eq!(msg, start);
        }
    }
}
