//! Scalar rANS coder: exact, invertible push/pop of symbols under quantized
//! distributions.
//!
//! The coder state is a 64-bit head register plus a stack of 32-bit words.
//! After any push or pop the head lies in the renormalization interval
//! `[2^32, 2^64)`; the designated empty-initial state sits at the interval
//! minimum with an empty stream. All arithmetic is on integers, so identical
//! inputs produce identical word streams on every platform.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Lower bound of the renormalization interval (and the empty-initial head).
pub const STATE_MIN: u64 = 1 << 32;

/// Highest supported fixed-point precision. `freq * (head >> 32)` must stay
/// inside 64 bits with headroom, which caps `r` at 24.
pub const PRECISION_MAX: u32 = 24;

/// Precomputed magic multiplier for dividing a 64-bit head by a frequency.
///
/// Uses the floor-magic scheme: `q0 = (x * magic) >> (64 + shift)` is either
/// the true quotient or one less, fixed up with a single compare.
#[derive(Clone, Copy, Debug)]
struct Reciprocal {
    magic: u64,
    shift: u32,
}

impl Reciprocal {
    fn new(divisor: u32) -> Self {
        debug_assert!(divisor >= 1);
        let shift = 31 - divisor.leading_zeros(); // floor(log2 d)
        let magic = if divisor.is_power_of_two() {
            // floor(2^(64+shift) / d) would be exactly 2^64; u64::MAX keeps
            // the same one-short-then-fix-up contract without overflowing.
            u64::MAX
        } else {
            ((1u128 << (64 + shift)) / divisor as u128) as u64
        };
        Reciprocal { magic, shift }
    }

    /// `floor(x / divisor)`; the magic estimate is exact or one short, so a
    /// single compare fixes it up. Branch-predictor friendly and division
    /// free.
    #[inline(always)]
    fn divide(self, x: u64, divisor: u32) -> u64 {
        let q = ((x as u128 * self.magic as u128) >> (64 + self.shift)) as u64;
        let rem = x - q * divisor as u64;
        q + (rem >= divisor as u64) as u64
    }
}

enum Repr {
    /// Power-of-two uniform distribution: every frequency is 1 and the
    /// precision equals log2 of the alphabet size. Push and pop reduce to
    /// shifts, and no tables are stored.
    UniformPow2 { bits: u32 },
    General {
        freqs: Vec<u32>,
        /// Exclusive prefix sums of `freqs`; `cums[0] == 0`.
        cums: Vec<u32>,
        recips: Vec<Reciprocal>,
        /// Lazily built slot -> symbol table, only for precision <= 16.
        lut: OnceLock<Vec<u16>>,
    },
}

/// A discrete distribution with integer frequencies summing to `2^precision`.
///
/// Every symbol has frequency >= 1, so every symbol is codable. The inverse
/// lookup maps each slot `u` in `[0, 2^precision)` to the unique symbol `s`
/// with `cumulative(s) <= u < cumulative(s) + frequency(s)`.
pub struct QuantizedDistribution {
    precision: u32,
    len: usize,
    repr: Repr,
}

impl QuantizedDistribution {
    /// Quantizes a nonnegative pmf to integer frequencies summing to
    /// `2^precision`.
    ///
    /// One unit of frequency is reserved for every symbol, and the remaining
    /// budget is apportioned by largest remainder, ties broken by lowest
    /// symbol index.
    pub fn quantize(pmf: &[f64], precision: u32) -> Result<Self> {
        if !(1..=PRECISION_MAX).contains(&precision) {
            return Err(Error::InvalidPrecision(precision));
        }
        let n = pmf.len();
        if n == 0 {
            return Err(Error::InvalidDistribution("empty pmf".into()));
        }
        if n as u64 > 1u64 << precision {
            return Err(Error::AlphabetTooLarge {
                symbols: n,
                precision,
            });
        }
        let mut total = 0.0;
        for (i, &p) in pmf.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "pmf[{i}] = {p} is not a finite nonnegative value"
                )));
            }
            total += p;
        }
        if total <= 0.0 {
            return Err(Error::InvalidDistribution(
                "pmf has no strictly positive entry".into(),
            ));
        }

        let budget = (1u64 << precision) - n as u64;
        let mut freqs = vec![1u32; n];
        if budget > 0 {
            let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(n);
            let mut assigned = 0u64;
            for (i, &p) in pmf.iter().enumerate() {
                let ideal = budget as f64 * (p / total);
                let base = ideal.floor();
                freqs[i] += base as u32;
                assigned += base as u64;
                fracs.push((ideal - base, i));
            }
            let mut remainder = (budget - assigned) as usize;
            if remainder > 0 {
                // Largest fractional part first, lowest index on ties.
                let cmp = |a: &(f64, usize), b: &(f64, usize)| {
                    b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1))
                };
                if remainder < n {
                    fracs.select_nth_unstable_by(remainder - 1, cmp);
                } else {
                    remainder = n;
                }
                for &(_, i) in &fracs[..remainder] {
                    freqs[i] += 1;
                }
            }
        }
        Self::from_frequencies(freqs, precision)
    }

    /// Builds a distribution from explicit frequencies. They must all be
    /// positive and sum to exactly `2^precision`.
    pub fn from_frequencies(freqs: Vec<u32>, precision: u32) -> Result<Self> {
        if !(1..=PRECISION_MAX).contains(&precision) {
            return Err(Error::InvalidPrecision(precision));
        }
        let total: u64 = freqs.iter().map(|&f| f as u64).sum();
        if total != 1u64 << precision {
            return Err(Error::InvalidDistribution(format!(
                "frequencies sum to {total}, expected 2^{precision}"
            )));
        }
        if freqs.iter().any(|&f| f == 0) {
            return Err(Error::InvalidDistribution(
                "zero frequency is not codable".into(),
            ));
        }
        let len = freqs.len();
        if len as u64 == total && len > 1 {
            return Ok(QuantizedDistribution {
                precision,
                len,
                repr: Repr::UniformPow2 { bits: precision },
            });
        }
        let mut cums = Vec::with_capacity(len);
        let mut acc = 0u32;
        for &f in &freqs {
            cums.push(acc);
            acc = acc.wrapping_add(f);
        }
        let recips = freqs.iter().map(|&f| Reciprocal::new(f)).collect();
        Ok(QuantizedDistribution {
            precision,
            len,
            repr: Repr::General {
                freqs,
                cums,
                recips,
                lut: OnceLock::new(),
            },
        })
    }

    /// Uniform distribution over `n` symbols at the smallest precision that
    /// can host it exactly when `n` is a power of two.
    pub fn uniform(n: usize) -> Result<Self> {
        let bits = (n.max(2) - 1).ilog2() + 1; // ceil(log2 n), >= 1
        Self::uniform_with_precision(n, bits)
    }

    /// Uniform distribution over `n` symbols at an explicit precision.
    pub fn uniform_with_precision(n: usize, precision: u32) -> Result<Self> {
        if n == 0 || n > 1 << PRECISION_MAX {
            return Err(Error::InvalidDistribution(format!(
                "uniform alphabet size {n} out of range"
            )));
        }
        if !(1..=PRECISION_MAX).contains(&precision) {
            return Err(Error::InvalidPrecision(precision));
        }
        if n.is_power_of_two() && n > 1 && precision == n.ilog2() {
            return Ok(QuantizedDistribution {
                precision,
                len: n,
                repr: Repr::UniformPow2 { bits: precision },
            });
        }
        Self::quantize(&vec![1.0; n], precision)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn frequency(&self, symbol: usize) -> u32 {
        match &self.repr {
            Repr::UniformPow2 { .. } => 1,
            Repr::General { freqs, .. } => freqs[symbol],
        }
    }

    pub fn cumulative(&self, symbol: usize) -> u32 {
        match &self.repr {
            Repr::UniformPow2 { .. } => symbol as u32,
            Repr::General { cums, .. } => cums[symbol],
        }
    }

    /// Code length of `symbol` in bits: `precision - log2(frequency)`.
    pub fn bits_of(&self, symbol: usize) -> f64 {
        self.precision as f64 - (self.frequency(symbol) as f64).log2()
    }

    /// Inverse lookup: the unique symbol whose slot range contains `slot`.
    pub fn symbol_of_slot(&self, slot: u32) -> usize {
        debug_assert!((slot as u64) < (1u64 << self.precision));
        match &self.repr {
            Repr::UniformPow2 { .. } => slot as usize,
            Repr::General { cums, .. } => cums.partition_point(|&c| c <= slot) - 1,
        }
    }

    /// Slot -> symbol table for fast vectorized pops. Built on first use;
    /// only available at precision <= 16 (the table has `2^precision`
    /// entries).
    fn slot_table(&self) -> Option<&[u16]> {
        match &self.repr {
            Repr::UniformPow2 { .. } => None,
            Repr::General { freqs, lut, .. } => {
                if self.precision > 16 {
                    return None;
                }
                Some(lut.get_or_init(|| {
                    let mut table = vec![0u16; 1 << self.precision];
                    let mut slot = 0usize;
                    for (s, &f) in freqs.iter().enumerate() {
                        table[slot..slot + f as usize].fill(s as u16);
                        slot += f as usize;
                    }
                    table
                }))
            }
        }
    }
}

/// Pushes one symbol onto a raw (head, stream) pair. At most one word is
/// emitted per push.
#[inline]
pub(crate) fn raw_push(head: &mut u64, stream: &mut Vec<u32>, symbol: usize, dist: &QuantizedDistribution) {
    let r = dist.precision;
    match &dist.repr {
        Repr::UniformPow2 { bits } => {
            // freq 1: the update is a pure shift-in of the symbol bits.
            if *head >> (64 - bits) >= 1 {
                stream.push(*head as u32);
                *head >>= 32;
            }
            *head = (*head << bits) | symbol as u64;
        }
        Repr::General {
            freqs,
            cums,
            recips,
            ..
        } => {
            let f = freqs[symbol];
            if *head >> (64 - r) >= f as u64 {
                stream.push(*head as u32);
                *head >>= 32;
            }
            let q = recips[symbol].divide(*head, f);
            *head = (q << r) + (*head - q * f as u64) + cums[symbol] as u64;
        }
    }
}

/// Pops one symbol from a raw (head, stream) pair. Pulls at most one word.
#[inline]
pub(crate) fn raw_pop(head: &mut u64, stream: &mut Vec<u32>, dist: &QuantizedDistribution) -> Result<usize> {
    let r = dist.precision;
    let slot = (*head & ((1u64 << r) - 1)) as u32;
    let symbol;
    let mut next = match &dist.repr {
        Repr::UniformPow2 { .. } => {
            symbol = slot as usize;
            *head >> r
        }
        Repr::General { freqs, cums, .. } => {
            symbol = dist.symbol_of_slot(slot);
            freqs[symbol] as u64 * (*head >> r) + (slot - cums[symbol]) as u64
        }
    };
    if next < STATE_MIN {
        let word = stream
            .pop()
            .ok_or(Error::InsufficientBits { needed_words: 1 })?;
        next = (next << 32) | word as u64;
    }
    *head = next;
    Ok(symbol)
}

/// The scalar ANS message: a single head register and a word-stream stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalarAnsState {
    head: u64,
    stream: Vec<u32>,
}

impl ScalarAnsState {
    /// The canonical empty message: head at the interval minimum, no words.
    pub fn empty() -> Self {
        ScalarAnsState {
            head: STATE_MIN,
            stream: Vec::new(),
        }
    }

    /// Builds a state directly from parts. The head must be in range.
    pub fn from_parts(head: u64, stream: Vec<u32>) -> Result<Self> {
        if head < STATE_MIN {
            return Err(Error::BadFlatWords(format!(
                "head {head:#x} below the renormalization interval"
            )));
        }
        Ok(ScalarAnsState { head, stream })
    }

    pub fn head(&self) -> u64 {
        self.head
    }

    pub fn stream(&self) -> &[u32] {
        &self.stream
    }

    pub fn is_empty_initial(&self) -> bool {
        self.head == STATE_MIN && self.stream.is_empty()
    }

    /// Total message length in bits: 64 for the head plus 32 per word.
    pub fn length_bits(&self) -> u64 {
        64 + 32 * self.stream.len() as u64
    }

    /// Exact information content in bits: `log2(head) + 32 * words`.
    pub fn content_bits(&self) -> f64 {
        (self.head as f64).log2() + 32.0 * self.stream.len() as f64
    }

    /// Encodes `symbol` under `dist`, growing the message by
    /// `precision - log2(freq)` bits amortized.
    #[must_use]
    pub fn push(mut self, symbol: usize, dist: &QuantizedDistribution) -> Self {
        assert!(symbol < dist.len(), "symbol {symbol} out of alphabet");
        raw_push(&mut self.head, &mut self.stream, symbol, dist);
        self
    }

    /// Decodes one symbol under `dist`; the exact inverse of `push` with the
    /// same distribution. Errors with `InsufficientBits` if the stream
    /// underflows.
    pub fn pop(mut self, dist: &QuantizedDistribution) -> Result<(Self, usize)> {
        let symbol = raw_pop(&mut self.head, &mut self.stream, dist)?;
        Ok((self, symbol))
    }
}

pub(crate) use lane_ops::{vpop_lanes, vpush_lanes};
pub use lane_ops::LaneDists;

mod lane_ops {
    use super::*;

    /// Distributions for a vectorized operation: one shared distribution
    /// broadcast over every lane, or one distribution per lane.
    #[derive(Clone, Copy)]
    pub enum LaneDists<'a> {
        Broadcast(&'a QuantizedDistribution),
        PerLane(&'a [QuantizedDistribution]),
    }

    impl<'a> LaneDists<'a> {
        pub fn check_lanes(&self, lanes: usize) -> Result<()> {
            if let LaneDists::PerLane(d) = self {
                if d.len() != lanes {
                    return Err(Error::ShapeMismatch {
                        expected: lanes,
                        got: d.len(),
                    });
                }
            }
            Ok(())
        }

        #[inline]
        pub fn get(&self, lane: usize) -> &'a QuantizedDistribution {
            match self {
                LaneDists::Broadcast(d) => d,
                LaneDists::PerLane(d) => &d[lane],
            }
        }
    }

    /// Lane-parallel push. Lanes that renormalize write their words to the
    /// shared stream in ascending lane order; this order is normative so the
    /// result is identical on every platform.
    pub fn vpush_lanes(
        lanes: &mut [u64],
        stream: &mut Vec<u32>,
        symbols: &[u32],
        dists: LaneDists<'_>,
    ) -> Result<()> {
        if symbols.len() != lanes.len() {
            return Err(Error::ShapeMismatch {
                expected: lanes.len(),
                got: symbols.len(),
            });
        }
        dists.check_lanes(lanes.len())?;
        match dists {
            LaneDists::Broadcast(dist) => match &dist.repr {
                Repr::UniformPow2 { bits } => {
                    let bits = *bits;
                    for (h, &s) in lanes.iter_mut().zip(symbols) {
                        let mut head = *h;
                        if head >> (64 - bits) >= 1 {
                            stream.push(head as u32);
                            head >>= 32;
                        }
                        *h = (head << bits) | s as u64;
                    }
                }
                Repr::General {
                    freqs,
                    cums,
                    recips,
                    ..
                } => {
                    let r = dist.precision;
                    for (h, &s) in lanes.iter_mut().zip(symbols) {
                        let s = s as usize;
                        let f = freqs[s];
                        let mut head = *h;
                        if head >> (64 - r) >= f as u64 {
                            stream.push(head as u32);
                            head >>= 32;
                        }
                        let q = recips[s].divide(head, f);
                        *h = (q << r) + (head - q * f as u64) + cums[s] as u64;
                    }
                }
            },
            LaneDists::PerLane(ds) => {
                for i in 0..lanes.len() {
                    raw_push(&mut lanes[i], stream, symbols[i] as usize, &ds[i]);
                }
            }
        }
        Ok(())
    }

    /// Lane-parallel pop, the exact inverse of [`vpush_lanes`]: lanes pull
    /// their renormalization words in descending lane order.
    pub fn vpop_lanes(
        lanes: &mut [u64],
        stream: &mut Vec<u32>,
        dists: LaneDists<'_>,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        dists.check_lanes(lanes.len())?;
        let n = lanes.len();
        out.clear();
        out.resize(n, 0);
        match dists {
            LaneDists::Broadcast(dist) => match &dist.repr {
                Repr::UniformPow2 { bits } => {
                    let bits = *bits;
                    let mask = (1u64 << bits) - 1;
                    for i in (0..n).rev() {
                        let h = lanes[i];
                        let slot = h & mask;
                        let mut next = h >> bits;
                        if next < STATE_MIN {
                            let word = stream
                                .pop()
                                .ok_or(Error::InsufficientBits { needed_words: 1 })?;
                            next = (next << 32) | word as u64;
                        }
                        lanes[i] = next;
                        out[i] = slot as u32;
                    }
                }
                Repr::General { freqs, cums, .. } => {
                    let r = dist.precision;
                    let mask = (1u64 << r) - 1;
                    let lut = dist.slot_table();
                    for i in (0..n).rev() {
                        let h = lanes[i];
                        let slot = (h & mask) as u32;
                        let s = match lut {
                            Some(table) => table[slot as usize] as usize,
                            None => dist.symbol_of_slot(slot),
                        };
                        let mut next =
                            freqs[s] as u64 * (h >> r) + (slot - cums[s]) as u64;
                        if next < STATE_MIN {
                            let word = stream
                                .pop()
                                .ok_or(Error::InsufficientBits { needed_words: 1 })?;
                            next = (next << 32) | word as u64;
                        }
                        lanes[i] = next;
                        out[i] = s as u32;
                    }
                }
            },
            LaneDists::PerLane(ds) => {
                for i in (0..n).rev() {
                    out[i] = raw_pop(&mut lanes[i], stream, &ds[i])? as u32;
                }
            }
        }
        Ok(())
    }
}
