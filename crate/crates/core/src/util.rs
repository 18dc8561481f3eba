//! Small shared helpers: percentiles, digests, dB conversion, RNG
//! substreams, row parallelism.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: a high-quality 64-bit mixing function.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent RNG substream from a base seed and up to three
/// integer tags (e.g. epoch, row, column — or a draw index).
///
/// Generation keyed this way is order-independent: every pixel or draw gets
/// the same stream no matter how work is scheduled across threads, which is
/// what makes simulation and sampling bit-reproducible.
pub fn substream(seed: u64, tags: [u64; 3]) -> ChaCha8Rng {
    let mut h = seed;
    for (i, &t) in tags.iter().enumerate() {
        // Sequential absorption keeps the tag positions non-commutative.
        h = mix64(h.wrapping_add(GAMMA).wrapping_add(t).wrapping_add(i as u64));
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        h = h.wrapping_add(GAMMA);
        chunk.copy_from_slice(&mix64(h).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Nearest-rank percentile of a pre-sorted, non-empty slice.
///
/// `p` is in percent (0..=100). Rank = ceil(p/100 * n), clamped to [1, n], so
/// `p = 0` returns the minimum and `p = 100` the maximum.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    let n = sorted.len();
    let rank = (p / 100.0 * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Sorts a copy of `values` (NaNs excluded) and returns the nearest-rank percentile.
/// Returns None when no finite value remains.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Some(percentile_sorted(&v, p))
}

/// FNV-1a 64-bit digest, rendered as fixed-width hex.
///
/// Used to fingerprint manifests in run records and dataset metadata; not a
/// cryptographic hash.
pub fn fnv1a64_hex(bytes: &[u8]) -> String {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    format!("{h:016x}")
}

/// Linear power ratio to decibels.
pub fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Runs `work` over disjoint row ranges `[r0, r1)`, each paired with the
/// matching disjoint slice of `out` (`row_len` elements per row).
///
/// With `threads <= 1` everything runs inline. Workers only write their own
/// slice, so results are identical for every thread count.
pub fn par_rows<T, F>(threads: usize, rows: usize, row_len: usize, out: &mut [T], work: F)
where
    T: Send,
    F: Fn(std::ops::Range<usize>, &mut [T]) + Sync,
{
    assert_eq!(out.len(), rows * row_len, "output length mismatch");
    let threads = threads.max(1).min(rows.max(1));
    if threads == 1 || rows == 0 {
        work(0..rows, out);
        return;
    }
    let chunk_rows = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        let mut rest = out;
        let mut r0 = 0;
        while r0 < rows {
            let r1 = (r0 + chunk_rows).min(rows);
            let (chunk, tail) = rest.split_at_mut((r1 - r0) * row_len);
            rest = tail;
            let work = &work;
            scope.spawn(move || work(r0..r1, chunk));
            r0 = r1;
        }
    });
}
