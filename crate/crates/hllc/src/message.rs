//! Vectorized ANS with a shaped stack head.
//!
//! A [`ShapedMessage`] holds an n-dimensional (or nested) array of 64-bit
//! lane registers over one shared word stream. Lanes push and pop in
//! parallel; renormalization words are committed in ascending lane order on
//! push and pulled in descending order on pop, which makes every operation
//! bit-exact and platform independent.
//!
//! The head can be resized by folding: to shrink, the top half of the lane
//! vector is encoded onto the bottom half under a quantized `p(h) ∝ 1/h`
//! distribution, repeatedly, so the number of vectorized steps is
//! logarithmic in the size ratio. Growing decodes new lanes from the stream
//! under the same distribution and is the exact inverse. [`flatten`] folds
//! down to a single lane and serializes; [`unflatten`] grows back.

use std::sync::OnceLock;

use crate::ans::{raw_pop, raw_push, vpop_lanes, vpush_lanes, QuantizedDistribution, STATE_MIN};
use crate::error::{Error, Result};

pub use crate::ans::LaneDists;

/// Shape descriptor for the stack head: a plain n-dimensional array or a
/// nested tuple of shapes (for example a pair matching an observation and
/// its latents).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HeadShape {
    Array(Vec<usize>),
    Tuple(Vec<HeadShape>),
}

impl HeadShape {
    pub fn scalar() -> Self {
        HeadShape::Array(vec![1])
    }

    pub fn of_dims(dims: &[usize]) -> Self {
        HeadShape::Array(dims.to_vec())
    }

    /// Total number of lane registers under this shape.
    pub fn lane_count(&self) -> usize {
        match self {
            HeadShape::Array(dims) => dims.iter().product(),
            HeadShape::Tuple(parts) => parts.iter().map(|p| p.lane_count()).sum(),
        }
    }

    fn subtree(&self, path: &[usize]) -> Option<&HeadShape> {
        match path.split_first() {
            None => Some(self),
            Some((&head, rest)) => match self {
                HeadShape::Array(_) => None,
                HeadShape::Tuple(parts) => parts.get(head)?.subtree(rest),
            },
        }
    }

    /// Flat lane offset of the subtree at `path` (children are laid out
    /// depth-first, in order).
    fn lane_offset(&self, path: &[usize]) -> Option<usize> {
        match path.split_first() {
            None => Some(0),
            Some((&head, rest)) => match self {
                HeadShape::Array(_) => None,
                HeadShape::Tuple(parts) => {
                    if head >= parts.len() {
                        return None;
                    }
                    let before: usize = parts[..head].iter().map(|p| p.lane_count()).sum();
                    Some(before + parts[head].lane_offset(rest)?)
                }
            },
        }
    }
}

/// A selector addressing a structural component of a nested head, as a path
/// of tuple child indices. The empty path addresses the whole head.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ViewLens {
    path: Vec<usize>,
}

impl ViewLens {
    pub fn root() -> Self {
        ViewLens { path: Vec::new() }
    }

    pub fn of(path: &[usize]) -> Self {
        ViewLens {
            path: path.to_vec(),
        }
    }

    pub fn child(&self, index: usize) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        ViewLens { path }
    }
}

/// A mutable window onto part of a message: a lane slice, the shared
/// stream, and the shape of the addressed subtree.
pub struct MessageView<'a> {
    shape: &'a HeadShape,
    lanes: &'a mut [u64],
    stream: &'a mut Vec<u32>,
}

impl<'a> MessageView<'a> {
    pub fn shape(&self) -> &HeadShape {
        self.shape
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    /// Narrows the view to the subtree addressed by `lens`.
    pub fn narrow(&mut self, lens: &ViewLens) -> Result<MessageView<'_>> {
        let sub = self.shape.subtree(&lens.path).ok_or(Error::ShapeMismatch {
            expected: self.lanes.len(),
            got: 0,
        })?;
        let offset = self.shape.lane_offset(&lens.path).unwrap();
        let count = sub.lane_count();
        Ok(MessageView {
            shape: sub,
            lanes: &mut self.lanes[offset..offset + count],
            stream: self.stream,
        })
    }

    pub fn vpush(&mut self, symbols: &[u32], dists: LaneDists<'_>) -> Result<()> {
        vpush_lanes(self.lanes, self.stream, symbols, dists)
    }

    pub fn vpop(&mut self, dists: LaneDists<'_>) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        vpop_lanes(self.lanes, self.stream, dists, &mut out)?;
        Ok(out)
    }

    pub fn vpop_into(&mut self, dists: LaneDists<'_>, out: &mut Vec<u32>) -> Result<()> {
        vpop_lanes(self.lanes, self.stream, dists, out)
    }
}

/// The vectorized ANS message: a shaped head of lane registers plus the
/// shared word-stream stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapedMessage {
    shape: HeadShape,
    lanes: Vec<u64>,
    stream: Vec<u32>,
}

/// Marker word used to flatten a message that holds no content at all
/// (every lane at the interval minimum, empty stream). A genuine fold
/// output always starts with the high head word, which is nonzero.
const EMPTY_MARKER: u32 = 0;

impl ShapedMessage {
    /// Fresh message with every lane at the interval minimum.
    pub fn empty(shape: HeadShape) -> Self {
        let lanes = vec![STATE_MIN; shape.lane_count()];
        ShapedMessage {
            shape,
            lanes,
            stream: Vec::new(),
        }
    }

    /// Message seeded with `words` of (counted) random data and grown to
    /// `shape`. Fails with `InsufficientBits` if the words cannot feed the
    /// growth.
    pub fn seeded(shape: HeadShape, words: &[u32]) -> Result<Self> {
        Self::unflatten(words, shape)
    }

    pub fn shape(&self) -> &HeadShape {
        &self.shape
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn lanes(&self) -> &[u64] {
        &self.lanes
    }

    pub fn stream_words(&self) -> usize {
        self.stream.len()
    }

    /// Total message length in bits: 64 per lane plus 32 per stream word.
    pub fn length_bits(&self) -> u64 {
        64 * self.lanes.len() as u64 + 32 * self.stream.len() as u64
    }

    /// Exact information content in bits: the sum of `log2` of every lane
    /// register plus 32 per stream word.
    pub fn content_bits(&self) -> f64 {
        let head: f64 = self.lanes.iter().map(|&h| (h as f64).log2()).sum();
        head + 32.0 * self.stream.len() as f64
    }

    pub fn as_view(&mut self) -> MessageView<'_> {
        MessageView {
            shape: &self.shape,
            lanes: &mut self.lanes,
            stream: &mut self.stream,
        }
    }

    pub fn view_at(&mut self, lens: &ViewLens) -> Result<MessageView<'_>> {
        self.as_view().narrow_owned(lens)
    }

    /// Lane-parallel push over the whole head.
    pub fn vpush(&mut self, symbols: &[u32], dists: LaneDists<'_>) -> Result<()> {
        vpush_lanes(&mut self.lanes, &mut self.stream, symbols, dists)
    }

    /// Lane-parallel pop over the whole head; exact inverse of [`vpush`].
    ///
    /// [`vpush`]: ShapedMessage::vpush
    pub fn vpop(&mut self, dists: LaneDists<'_>) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        vpop_lanes(&mut self.lanes, &mut self.stream, dists, &mut out)?;
        Ok(out)
    }

    /// Allocation-reusing variant of [`vpop`].
    ///
    /// [`vpop`]: ShapedMessage::vpop
    pub fn vpop_into(&mut self, dists: LaneDists<'_>, out: &mut Vec<u32>) -> Result<()> {
        vpop_lanes(&mut self.lanes, &mut self.stream, dists, out)
    }

    /// Reshapes the head by folding or growing, then installs the new shape
    /// metadata. Returns the number of vectorized fold/grow steps taken.
    pub fn reshape(&mut self, new_shape: HeadShape) -> Result<usize> {
        let target = new_shape.lane_count();
        let current = self.lanes.len();
        let mut steps = 0;
        if target < current {
            for (from, to) in fold_schedule(current, target) {
                fold_step(&mut self.lanes, &mut self.stream, from, to);
                steps += 1;
            }
        } else if target > current {
            let mut schedule = fold_schedule(target, current);
            schedule.reverse();
            for (from, to) in schedule {
                grow_step(&mut self.lanes, &mut self.stream, to, from)?;
                steps += 1;
            }
        }
        self.shape = new_shape;
        Ok(steps)
    }

    /// Serializes the whole message as a word sequence: the entirely empty
    /// message becomes a single marker word; otherwise the head is folded
    /// down to one lane and written as two words followed by the stream,
    /// top word first.
    pub fn flatten(mut self) -> Vec<u32> {
        if self.stream.is_empty() && self.lanes.iter().all(|&h| h == STATE_MIN) {
            return vec![EMPTY_MARKER];
        }
        self.reshape(HeadShape::scalar())
            .expect("folding cannot underflow");
        let head = self.lanes[0];
        let mut words = Vec::with_capacity(2 + self.stream.len());
        words.push((head >> 32) as u32);
        words.push(head as u32);
        words.extend(self.stream.iter().rev());
        words
    }

    /// Exact inverse of [`flatten`] for a matching shape. Also accepts
    /// arbitrary seed words for starting a chain; errors if there are not
    /// enough words to grow the requested shape.
    ///
    /// [`flatten`]: ShapedMessage::flatten
    pub fn unflatten(words: &[u32], shape: HeadShape) -> Result<Self> {
        if words.len() == 1 && words[0] == EMPTY_MARKER {
            return Ok(Self::empty(shape));
        }
        if words.len() < 2 {
            return Err(Error::BadFlatWords(
                "need at least two words for the head".into(),
            ));
        }
        if words[0] == 0 {
            return Err(Error::BadFlatWords(
                "high head word is zero; head would be below the interval".into(),
            ));
        }
        let head = ((words[0] as u64) << 32) | words[1] as u64;
        let stream: Vec<u32> = words[2..].iter().rev().copied().collect();
        let mut msg = ShapedMessage {
            shape: HeadShape::scalar(),
            lanes: vec![head],
            stream,
        };
        msg.reshape(shape)?;
        Ok(msg)
    }
}

impl<'a> MessageView<'a> {
    fn narrow_owned(self, lens: &ViewLens) -> Result<MessageView<'a>> {
        let sub = self.shape.subtree(&lens.path).ok_or(Error::ShapeMismatch {
            expected: self.lanes.len(),
            got: 0,
        })?;
        let offset = self.shape.lane_offset(&lens.path).unwrap();
        let count = sub.lane_count();
        Ok(MessageView {
            shape: sub,
            lanes: &mut self.lanes[offset..offset + count],
            stream: self.stream,
        })
    }
}

/// Number of fold/grow steps a resize between the two lane counts takes.
pub fn resize_steps(from: usize, to: usize) -> usize {
    let (hi, lo) = if from > to { (from, to) } else { (to, from) };
    fold_schedule(hi, lo).len()
}

/// Shrink schedule from `from` lanes down to `to` lanes; each step roughly
/// halves the lane count and never undershoots the target.
fn fold_schedule(mut from: usize, to: usize) -> Vec<(usize, usize)> {
    debug_assert!(from >= to && to >= 1);
    let mut steps = Vec::new();
    while from > to {
        let next = to.max(from.div_ceil(2));
        steps.push((from, next));
        from = next;
    }
    steps
}

/// One fold step: lane `to + i` is encoded onto lane `i` for each removed
/// lane, in ascending receiver order.
fn fold_step(lanes: &mut Vec<u64>, stream: &mut Vec<u32>, from: usize, to: usize) {
    debug_assert_eq!(lanes.len(), from);
    let removed = from - to;
    debug_assert!(removed <= to);
    for i in 0..removed {
        let value = lanes[to + i];
        encode_head_value(&mut lanes[i], stream, value);
    }
    lanes.truncate(to);
}

/// Exact inverse of [`fold_step`]: decode the removed lanes back out in
/// descending receiver order.
fn grow_step(lanes: &mut Vec<u64>, stream: &mut Vec<u32>, from: usize, to: usize) -> Result<()> {
    debug_assert_eq!(lanes.len(), from);
    let added = to - from;
    debug_assert!(added <= from);
    lanes.resize(to, 0);
    for i in (0..added).rev() {
        let mut donor = lanes[i];
        let value = decode_head_value(&mut donor, stream)?;
        lanes[i] = donor;
        lanes[from + i] = value;
    }
    Ok(())
}

/// Bucket layout for the head-value distribution: 5 bits select the octave
/// (the bit length of the head, 33..=64) and `SUB_BITS` select an
/// equal-width slice within the octave. Under `p(h) ∝ 1/h` each octave has
/// equal mass and the within-octave bucket mass is proportional to
/// `1 / (2^SUB_BITS + m + 0.5)`, evaluated at the bucket midpoint.
const SUB_BITS: u32 = 7;
const FOLD_PRECISION: u32 = 19;

fn head_bucket_dist() -> &'static QuantizedDistribution {
    static DIST: OnceLock<QuantizedDistribution> = OnceLock::new();
    DIST.get_or_init(|| {
        let per_octave = 1usize << SUB_BITS;
        let mut pmf = Vec::with_capacity(32 * per_octave);
        for _octave in 0..32 {
            for m in 0..per_octave {
                pmf.push(1.0 / (per_octave as f64 + m as f64 + 0.5));
            }
        }
        QuantizedDistribution::quantize(&pmf, FOLD_PRECISION).expect("static fold distribution")
    })
}

fn chunk_dist(bits: u32) -> &'static QuantizedDistribution {
    static DISTS: OnceLock<Vec<QuantizedDistribution>> = OnceLock::new();
    let all = DISTS.get_or_init(|| {
        (1..=16)
            .map(|b| QuantizedDistribution::uniform_with_precision(1usize << b, b).unwrap())
            .collect()
    });
    &all[(bits - 1) as usize]
}

/// Quantized head-value distribution used by the folds; exposed so its
/// validity can be checked as an ordinary [`QuantizedDistribution`].
pub fn fold_distribution() -> &'static QuantizedDistribution {
    head_bucket_dist()
}

/// Encodes a full 64-bit head value (in `[2^32, 2^64)`) onto a scalar lane:
/// the residual bits below the bucket are pushed as uniform chunks, low
/// chunk first, then the bucket symbol.
fn encode_head_value(lane: &mut u64, stream: &mut Vec<u32>, value: u64) {
    debug_assert!(value >= STATE_MIN);
    let len = 64 - value.leading_zeros(); // 33..=64
    let resid_bits = len - 1 - SUB_BITS;
    let sub = ((value >> resid_bits) as u64 & ((1 << SUB_BITS) - 1)) as u32;
    let bucket = ((len - 33) << SUB_BITS) | sub;

    let mut rem = resid_bits;
    let mut v = value & ((1u64 << resid_bits) - 1);
    while rem > 0 {
        let take = rem.min(16);
        let chunk = (v & ((1u64 << take) - 1)) as usize;
        raw_push(lane, stream, chunk, chunk_dist(take));
        v >>= take;
        rem -= take;
    }
    raw_push(lane, stream, bucket as usize, head_bucket_dist());
}

/// Exact inverse of [`encode_head_value`].
fn decode_head_value(lane: &mut u64, stream: &mut Vec<u32>) -> Result<u64> {
    let bucket = raw_pop(lane, stream, head_bucket_dist())? as u32;
    let len = 33 + (bucket >> SUB_BITS);
    let sub = (bucket & ((1 << SUB_BITS) - 1)) as u64;
    let resid_bits = len - 1 - SUB_BITS;

    // Chunk sizes exactly as the encoder produced them, popped in reverse.
    let mut sizes = Vec::with_capacity(4);
    let mut rem = resid_bits;
    while rem > 0 {
        let take = rem.min(16);
        sizes.push(take);
        rem -= take;
    }
    let mut v: u64 = 0;
    for &take in sizes.iter().rev() {
        let chunk = raw_pop(lane, stream, chunk_dist(take))? as u64;
        v = (v << take) | chunk;
    }
    Ok((1u64 << (len - 1)) | (sub << resid_bits) | v)
}
