//! Throughput measurement: scalar push/pop in a loop versus the vectorized
//! lane-parallel path, over a shared workload.

use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ans::{LaneDists, QuantizedDistribution, ScalarAnsState};
use crate::message::{HeadShape, ShapedMessage};

/// Timings for one lane count, in million symbols per second.
#[derive(Clone, Copy, Debug)]
pub struct BenchRow {
    pub lanes: usize,
    pub threads: usize,
    pub symbols: usize,
    pub scalar_encode_msps: f64,
    pub scalar_decode_msps: f64,
    pub vector_encode_msps: f64,
    pub vector_decode_msps: f64,
}

impl BenchRow {
    /// Combined (encode plus decode) vectorized-over-scalar speedup.
    pub fn speedup(&self) -> f64 {
        let scalar = combined(self.scalar_encode_msps, self.scalar_decode_msps);
        let vector = combined(self.vector_encode_msps, self.vector_decode_msps);
        vector / scalar
    }
}

fn combined(encode: f64, decode: f64) -> f64 {
    // total symbols over total time for one encode+decode pass
    2.0 / (1.0 / encode + 1.0 / decode)
}

fn workload_dist() -> QuantizedDistribution {
    // a mildly skewed 256-symbol distribution, the common pixel case
    let pmf: Vec<f64> = (0..256)
        .map(|s| 1.0 / (1.0 + s as f64 / 16.0))
        .collect();
    QuantizedDistribution::quantize(&pmf, 16).unwrap()
}

fn workload_symbols(n: usize, dist: &QuantizedDistribution, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| dist.symbol_of_slot(rng.next_u32() & 0xFFFF) as u32)
        .collect()
}

fn scalar_pass(symbols: &[u32], dist: &QuantizedDistribution) -> (f64, f64) {
    let mut state = ScalarAnsState::empty();
    let t0 = Instant::now();
    for &s in symbols {
        state = state.push(s as usize, dist);
    }
    let encode = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut check = 0u64;
    for _ in 0..symbols.len() {
        let (next, s) = state.pop(dist).expect("decode of own encode");
        state = next;
        check = check.wrapping_add(s as u64);
    }
    let decode = t1.elapsed().as_secs_f64();
    std::hint::black_box(check);
    (
        symbols.len() as f64 / encode / 1e6,
        symbols.len() as f64 / decode / 1e6,
    )
}

fn vector_pass(
    symbols: &[u32],
    lanes: usize,
    dist: &QuantizedDistribution,
) -> (f64, f64) {
    let mut msg = ShapedMessage::empty(HeadShape::of_dims(&[lanes]));
    let batches: Vec<&[u32]> = symbols.chunks_exact(lanes).collect();
    let total = batches.len() * lanes;
    let t0 = Instant::now();
    for batch in &batches {
        msg.vpush(batch, LaneDists::Broadcast(dist)).unwrap();
    }
    let encode = t0.elapsed().as_secs_f64();
    let mut out = Vec::new();
    let t1 = Instant::now();
    let mut check = 0u64;
    for _ in 0..batches.len() {
        msg.vpop_into(LaneDists::Broadcast(dist), &mut out).unwrap();
        check = check.wrapping_add(out[0] as u64);
    }
    let decode = t1.elapsed().as_secs_f64();
    std::hint::black_box(check);
    (
        total as f64 / encode / 1e6,
        total as f64 / decode / 1e6,
    )
}

/// Runs the scalar and vectorized workloads for each lane count. With
/// `threads > 1` the vectorized side runs that many independent messages in
/// parallel and reports aggregate throughput; the scalar baseline is always
/// one chain.
pub fn run_bench(lane_counts: &[usize], threads: usize, seed: u64) -> Vec<BenchRow> {
    let dist = workload_dist();
    let base_symbols = 1usize << 21;
    let mut rows = Vec::with_capacity(lane_counts.len());

    // one scalar baseline, reused across rows
    let scalar_input = workload_symbols(base_symbols, &dist, seed);
    // warmup then measure
    scalar_pass(&scalar_input[..base_symbols / 8], &dist);
    let (scalar_enc, scalar_dec) = scalar_pass(&scalar_input, &dist);

    for &lanes in lane_counts {
        let per_message = (base_symbols.max(lanes * 8) / lanes) * lanes;
        let threads = threads.max(1);
        let (vec_enc, vec_dec) = if threads == 1 || lanes == 1 {
            let symbols = workload_symbols(per_message, &dist, seed ^ lanes as u64);
            vector_pass(&symbols[..per_message / 8 / lanes * lanes], lanes, &dist);
            vector_pass(&symbols, lanes, &dist)
        } else {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let dist = workload_dist();
                    let symbols =
                        workload_symbols(per_message, &dist, seed ^ lanes as u64 ^ (t as u64) << 32);
                    std::thread::spawn(move || vector_pass(&symbols, lanes, &dist))
                })
                .collect();
            let mut enc_total = 0.0;
            let mut dec_total = 0.0;
            for h in handles {
                let (e, d) = h.join().expect("bench thread");
                enc_total += e;
                dec_total += d;
            }
            (enc_total, dec_total)
        };
        rows.push(BenchRow {
            lanes,
            threads: if lanes == 1 { 1 } else { threads },
            symbols: per_message,
            scalar_encode_msps: scalar_enc,
            scalar_decode_msps: scalar_dec,
            vector_encode_msps: vec_enc,
            vector_decode_msps: vec_dec,
        });
    }
    rows
}

/// Machine-readable table of a bench run.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "lanes,threads,symbols,scalar_encode_msps,scalar_decode_msps,vector_encode_msps,vector_decode_msps,speedup\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            r.lanes,
            r.threads,
            r.symbols,
            r.scalar_encode_msps,
            r.scalar_decode_msps,
            r.vector_encode_msps,
            r.vector_decode_msps,
            r.speedup()
        ));
    }
    out
}

/// Thread budget for benchmarks: `HLLC_THREADS` capped by the hardware,
/// default one thread.
pub fn thread_budget() -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("HLLC_THREADS") {
        Ok(v) => v.parse::<usize>().unwrap_or(1).clamp(1, hw),
        Err(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_rows_parse_as_csv() {
        let rows = run_bench(&[1, 64], 1, 42);
        let csv = bench_csv(&rows);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 8);
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 8);
            for field in line.split(',') {
                assert!(field.parse::<f64>().is_ok(), "field {field}");
            }
        }
    }
}
