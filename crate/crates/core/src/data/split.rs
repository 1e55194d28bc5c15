//! Stratified train/validation/test assignment.
//!
//! Strata are `(class, type_tag)` pairs, ordered by name. The global split
//! sizes are the largest-remainder apportionment of the eligible total. Each
//! stratum receives the floor of its exact quota per split plus at most one
//! extra sample, chosen so that rows add up to the stratum size and columns
//! to the global sizes; extra samples go preferentially to the largest
//! remainders, ties broken by stratum name then split order. Inside a
//! stratum, records are shuffled with a seeded stream before being dealt out.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::{SampleManifest, Split};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];
const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Per-stratum and global counts produced by [`stratified_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub strata: BTreeMap<String, [usize; 3]>,
    pub totals: [usize; 3],
    /// Strata with fewer than three records, sent entirely to train.
    pub undersized: Vec<String>,
}

/// Largest-remainder apportionment of `total` by `ratios`; ties go to the
/// earlier index.
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|&r| quota(total, r)).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let short = total.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.partial_cmp(&fa).expect("finite quotas").then(a.cmp(&b))
    });
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// `n·r`, snapped to 1e-9 so that products such as `500·0.2` floor correctly.
fn quota(n: usize, r: f64) -> f64 {
    (n as f64 * r * 1e9).round() / 1e9
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    Ok(())
}

/// Integer allocation `counts[s][k]` with row sums `sizes[s]`, column sums
/// `totals[k]`, each entry the floor or ceiling of `sizes[s]·ratios[k]`.
fn controlled_rounding(sizes: &[usize], ratios: [f64; 3], totals: [usize; 3]) -> Result<Vec<[usize; 3]>> {
    let quota = |s: usize, k: usize| quota(sizes[s], ratios[k]);
    let mut counts: Vec<[usize; 3]> = (0..sizes.len())
        .map(|s| [0, 1, 2].map(|k| quota(s, k).floor() as usize))
        .collect();
    let frac = |s: usize, k: usize| quota(s, k) - quota(s, k).floor();
    let eligible = |s: usize, k: usize| frac(s, k) > 1e-12;
    let mut extra = vec![[false; 3]; sizes.len()];
    let mut row_need: Vec<usize> = (0..sizes.len()).map(|s| sizes[s] - counts[s].iter().sum::<usize>()).collect();
    let mut col_need = [0, 1, 2].map(|k| totals[k] - counts.iter().map(|c| c[k]).sum::<usize>());

    // Greedy pass: largest remainders first.
    let mut cells: Vec<(usize, usize)> = (0..sizes.len())
        .flat_map(|s| (0..3).map(move |k| (s, k)))
        .filter(|&(s, k)| eligible(s, k))
        .collect();
    cells.sort_by(|&(sa, ka), &(sb, kb)| {
        frac(sb, kb).partial_cmp(&frac(sa, ka)).expect("finite").then(sa.cmp(&sb)).then(ka.cmp(&kb))
    });
    for &(s, k) in &cells {
        if row_need[s] > 0 && col_need[k] > 0 {
            extra[s][k] = true;
            row_need[s] -= 1;
            col_need[k] -= 1;
        }
    }

    // Repair: augmenting paths row → column, alternating through assigned cells.
    for s0 in 0..sizes.len() {
        while row_need[s0] > 0 {
            // BFS over columns; parent[k] = (row that reached k, previous column or none)
            let mut parent: [Option<(usize, Option<usize>)>; 3] = [None; 3];
            let mut queue: Vec<usize> = Vec::new();
            for k in 0..3 {
                if eligible(s0, k) && !extra[s0][k] {
                    parent[k] = Some((s0, None));
                    queue.push(k);
                }
            }
            let mut found = None;
            let mut head = 0;
            while head < queue.len() {
                let k = queue[head];
                head += 1;
                if col_need[k] > 0 {
                    found = Some(k);
                    break;
                }
                // some row currently using column k could move to another column
                for s in 0..sizes.len() {
                    if !extra[s][k] {
                        continue;
                    }
                    for k2 in 0..3 {
                        if parent[k2].is_none() && eligible(s, k2) && !extra[s][k2] {
                            parent[k2] = Some((s, Some(k)));
                            queue.push(k2);
                        }
                    }
                }
            }
            let mut k = found.ok_or_else(|| Error::Data("stratified rounding is infeasible".into()))?;
            col_need[k] -= 1;
            row_need[s0] -= 1;
            loop {
                let (s, prev) = parent[k].expect("path");
                extra[s][k] = true;
                match prev {
                    Some(p) => {
                        extra[s][p] = false;
                        k = p;
                    }
                    None => break,
                }
            }
        }
    }
    for (c, e) in counts.iter_mut().zip(&extra) {
        for k in 0..3 {
            c[k] += e[k] as usize;
        }
    }
    Ok(counts)
}

/// Assigns every record of `manifest` to train, val or test.
pub fn stratified_split(manifest: &SampleManifest, ratios: [f64; 3], seed: u64) -> Result<(SampleManifest, SplitSummary)> {
    validate_ratios(ratios)?;
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        strata.entry(r.stratum()).or_default().push(i);
    }
    let mut out = manifest.clone();
    let mut undersized = Vec::new();
    let mut eligible: Vec<(&String, &Vec<usize>)> = Vec::new();
    for (name, idx) in &strata {
        if idx.len() < 3 {
            warn!("stratum {name} has {} records; all assigned to train", idx.len());
            undersized.push(name.clone());
            for &i in idx {
                out.records[i].split = Split::Train;
            }
        } else {
            eligible.push((name, idx));
        }
    }
    let sizes: Vec<usize> = eligible.iter().map(|(_, idx)| idx.len()).collect();
    let lr = largest_remainder(sizes.iter().sum(), &ratios);
    let totals = [lr[0], lr[1], lr[2]];
    let alloc = controlled_rounding(&sizes, ratios, totals)?;

    let mut summary = SplitSummary {
        strata: BTreeMap::new(),
        totals: [0; 3],
        undersized,
    };
    for ((name, idx), counts) in eligible.iter().zip(&alloc) {
        let mut order: Vec<usize> = (*idx).clone();
        let mut rng = rng::stream(seed, Purpose::Split, rng::hash64(name.as_bytes()));
        order.shuffle(&mut rng);
        let mut it = order.into_iter();
        for (k, &n) in counts.iter().enumerate() {
            for i in it.by_ref().take(n) {
                out.records[i].split = SPLITS[k];
            }
        }
        summary.strata.insert((*name).clone(), *counts);
    }
    for name in &summary.undersized {
        summary.strata.insert(name.clone(), [strata[name].len(), 0, 0]);
    }
    for c in summary.strata.values() {
        for k in 0..3 {
            summary.totals[k] += c[k];
        }
    }
    out.split_seed = Some(seed);
    Ok((out, summary))
}
