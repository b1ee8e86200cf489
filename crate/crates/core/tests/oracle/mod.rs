//! Straightforward re-implementations used to cross-check the library.
//! Each one favours obviousness over speed and shares no code with it.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

/// Krippendorff's alpha built from the explicit coincidence matrix: every
/// ordered pair of values inside a unit is visited one at a time and adds
/// `1 / (m - 1)` to its cell. `rows[r][c]` is rater `r` on item `c`.
/// Returns `None` when no item has two values.
pub fn alpha_from_definition(rows: &[Vec<Option<u8>>], ordinal: bool) -> Option<f64> {
    let items = rows[0].len();
    let mut o = [[0.0f64; 5]; 5];
    let mut pairable = false;
    let mut unit: Vec<u8> = Vec::with_capacity(rows.len());
    for c in 0..items {
        unit.clear();
        unit.extend(rows.iter().filter_map(|r| r[c]));
        let m = unit.len();
        if m < 2 {
            continue;
        }
        pairable = true;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    o[unit[i] as usize][unit[j] as usize] += 1.0 / (m as f64 - 1.0);
                }
            }
        }
    }
    if !pairable {
        return None;
    }
    let mut n_c = [0.0f64; 5];
    for c in 0..5 {
        for k in 0..5 {
            n_c[c] += o[c][k];
        }
    }
    let n: f64 = n_c.iter().sum();
    let delta = |c: usize, k: usize| -> f64 {
        if c == k {
            0.0
        } else if !ordinal {
            1.0
        } else {
            let (lo, hi) = if c < k { (c, k) } else { (k, c) };
            let mut between = 0.0;
            for g in lo..=hi {
                between += n_c[g];
            }
            let d = between - (n_c[c] + n_c[k]) / 2.0;
            d * d
        }
    };
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..5 {
        for k in 0..5 {
            d_o += o[c][k] * delta(c, k);
            d_e += n_c[c] * n_c[k] * delta(c, k);
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if d_o == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - d_o / d_e)
}

/// Mode by counting, ties averaged.
pub fn brute_mode(values: &[u8]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut counts = [0usize; 5];
    for &v in values {
        counts[v as usize] += 1;
    }
    let top = *counts.iter().max().unwrap();
    let modes: Vec<f64> = (0..5).filter(|&v| counts[v] == top).map(|v| v as f64).collect();
    Some(modes.iter().sum::<f64>() / modes.len() as f64)
}

/// Plain left-to-right mean.
pub fn naive_mean(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    total / values.len() as f64
}

/// Per-RoT group mode vs. LM value (`None` = refusal, distance 4), averaged
/// over RoTs that at least one member annotated.
/// `answers` is rot_id → (annotator_id, value); `lm` is rot_id → value.
pub fn group_mean(
    answers: &BTreeMap<String, Vec<(String, u8)>>,
    lm: &BTreeMap<String, Option<u8>>,
    members: &BTreeSet<String>,
) -> Option<(f64, usize)> {
    let mut distances = Vec::new();
    for (rot, rot_answers) in answers {
        let Some(lm_value) = lm.get(rot) else {
            continue;
        };
        let mine: Vec<u8> = rot_answers
            .iter()
            .filter(|(who, _)| members.contains(who))
            .map(|(_, v)| *v)
            .collect();
        let Some(mode) = brute_mode(&mine) else {
            continue;
        };
        distances.push(match lm_value {
            Some(v) => (mode - *v as f64).abs(),
            None => 4.0,
        });
    }
    if distances.is_empty() {
        None
    } else {
        Some((naive_mean(&distances), distances.len()))
    }
}
