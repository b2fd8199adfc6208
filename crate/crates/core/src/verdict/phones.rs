//! Ordered phone containment.
//!
//! The matched count is the largest number of the word's phones that appear
//! in the token phone stream in the same relative order (a longest common
//! subsequence). It is computed with the bit-parallel recurrence
//! `V' = (V + (V & M)) | (V & !M)` over one bit per word phone.

use std::collections::HashMap;

use super::VerdictError;

/// Result of matching a word's phones against the token phone stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhoneMatch {
    pub matched: usize,
    pub total: usize,
    pub is_match: bool,
}

/// Length of the longest subsequence of `word` that occurs in order in `stream`.
pub fn ordered_containment<S: AsRef<str>, T: AsRef<str>>(word: &[S], stream: &[T]) -> usize {
    let n = word.len();
    if n == 0 || stream.is_empty() {
        return 0;
    }
    let blocks = n.div_ceil(64);
    let mut masks: HashMap<&str, Vec<u64>> = HashMap::new();
    for (i, phone) in word.iter().enumerate() {
        masks
            .entry(phone.as_ref())
            .or_insert_with(|| vec![0; blocks])[i / 64] |= 1 << (i % 64);
    }
    let mut v = vec![u64::MAX; blocks];
    for phone in stream {
        let Some(m) = masks.get(phone.as_ref()) else {
            continue;
        };
        let mut carry = false;
        for (vw, &mw) in v.iter_mut().zip(m) {
            let u = *vw & mw;
            let (sum, c1) = vw.overflowing_add(u);
            let (sum, c2) = sum.overflowing_add(u64::from(carry));
            carry = c1 || c2;
            *vw = sum | (*vw & !mw);
        }
    }
    let mut zeros = 0;
    for (b, &vw) in v.iter().enumerate() {
        let bits = (n - b * 64).min(64);
        let live = if bits == 64 {
            vw
        } else {
            vw & ((1u64 << bits) - 1)
        };
        zeros += bits - live.count_ones() as usize;
    }
    zeros
}

/// Matches `word_phones` against the concatenated phones of the word's
/// top-1 tokens. `strict` requires the matched share to exceed `ratio`
/// instead of reaching it.
pub fn transliteration_match<S: AsRef<str>, T: AsRef<str>>(
    word_phones: &[S],
    token_phones: &[T],
    ratio: f64,
    strict: bool,
) -> Result<PhoneMatch, VerdictError> {
    if word_phones.is_empty() {
        return Err(VerdictError::EmptyWordPhones);
    }
    let matched = ordered_containment(word_phones, token_phones);
    let total = word_phones.len();
    let share = matched as f64 / total as f64;
    let is_match = if strict {
        share > ratio
    } else {
        share >= ratio
    };
    Ok(PhoneMatch {
        matched,
        total,
        is_match,
    })
}
