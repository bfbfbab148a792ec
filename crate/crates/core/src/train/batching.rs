use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Groups sentence pairs into length-bucketed batches for one epoch.
///
/// Pairs are shuffled, stably sorted by source then target length, and cut
/// into consecutive batches whose padded size (`count × longest side`, the
/// target side counting its extra BOS/EOS position) stays within
/// `batch_tokens`. The batch order is shuffled afterwards. The same RNG
/// state always yields the same batches.
pub fn epoch_batches(lens: &[(usize, usize)], batch_tokens: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lens[i]);
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut widest = 0;
    for i in order {
        let w = lens[i].0.max(lens[i].1 + 1);
        let next_w = widest.max(w);
        if !cur.is_empty() && (cur.len() + 1) * next_w > batch_tokens {
            batches.push(std::mem::take(&mut cur));
            widest = 0;
        }
        widest = widest.max(w);
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(rng);
    batches
}
