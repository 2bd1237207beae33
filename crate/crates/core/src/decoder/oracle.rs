//! Exhaustive CTC decoding for small instances: enumerate every frame-level
//! path, collapse it, and sum path probabilities per label sequence.

use std::collections::HashMap;

use super::{check_posteriors, tie_break, Alphabet, CharLm, DecodeError, Hypothesis};

/// Largest number of frame-level paths the oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Every label sequence with non-zero probability, best first. Each sequence
/// is weighted by its character-model probability raised to `alpha`.
pub fn brute_force_decode<L: CharLm>(
    posteriors: &[Vec<f64>],
    alphabet: &Alphabet,
    lm: &mut L,
    alpha: f64,
) -> Result<Vec<Hypothesis>, DecodeError> {
    for row in posteriors {
        check_posteriors(row, alphabet)?;
    }
    let width = alphabet.am_dim();
    let paths = (width as f64).powi(posteriors.len() as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(DecodeError::TooLarge { paths });
    }
    let blank = alphabet.blank();
    let mut sums: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut path = vec![0usize; posteriors.len()];
    loop {
        let p: f64 = path.iter().zip(posteriors).map(|(&k, row)| row[k]).product();
        if p > 0.0 {
            let mut labels = Vec::new();
            let mut prev = blank;
            for &k in &path {
                if k != blank && k != prev {
                    labels.push(k);
                }
                prev = k;
            }
            *sums.entry(labels).or_insert(0.0) += p;
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == path.len() {
                return finish(sums, lm, alpha);
            }
            path[i] += 1;
            if path[i] < width {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn finish<L: CharLm>(sums: HashMap<Vec<usize>, f64>, lm: &mut L, alpha: f64) -> Result<Vec<Hypothesis>, DecodeError> {
    let mut out = Vec::with_capacity(sums.len());
    for (labels, p) in sums {
        let mut log_prob = p.ln();
        if alpha != 0.0 {
            let mut ctx = lm.initial()?;
            for &k in &labels {
                log_prob += alpha * lm.log_prob(&ctx, k);
                let next = lm.advance(&ctx, k)?;
                lm.release(std::mem::replace(&mut ctx, next));
            }
            lm.release(ctx);
        }
        out.push(Hypothesis { labels, log_prob, word_score: 0.0 });
    }
    out.sort_by(|a, b| {
        b.log_prob.partial_cmp(&a.log_prob).unwrap_or(std::cmp::Ordering::Equal).then_with(|| tie_break(&a.labels, &b.labels))
    });
    Ok(out)
}
