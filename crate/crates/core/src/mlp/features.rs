//! Per-component inputs built from the nearest monitors around it on every
//! lightpath it carries.
//!
//! For each traversing lightpath the tuple is `(l1, p1, p1', l2, p2, p2')`:
//! hop distance to the closest monitored slot before the component and the
//! previous/current readings there, then the same for the closest monitored
//! slot after it. A missing side is all zeros. Tuples are ordered by how much
//! power the component appears to have lost, largest loss first.

use crate::monitoring::{MonitorSnapshot, ALPHA};
use crate::provisioning::Lightpath;
use crate::topology::ComponentId;

use super::MlpError;

pub const TUPLE: usize = 6;

/// Most lightpaths sharing one component.
pub fn l_max(lightpaths: &[Lightpath]) -> usize {
    let mut counts = std::collections::BTreeMap::<ComponentId, usize>::new();
    for lp in lightpaths {
        for &c in &lp.components {
            *counts.entry(c).or_default() += 1;
        }
    }
    counts.values().copied().max().unwrap_or(0)
}

fn tuple(
    lp_index: usize,
    at: usize,
    lp: &Lightpath,
    pre: &MonitorSnapshot,
    post: &MonitorSnapshot,
) -> [f64; TUPLE] {
    let now = &post.readings[lp_index];
    let then = &pre.readings[lp_index];
    let last_slot = lp.len() - 1;
    let mut t = [0.0; TUPLE];
    if let Some(j) = (0..at.min(last_slot)).rev().find(|&j| now[j] != ALPHA) {
        t[0] = (at - j) as f64;
        t[1] = then[j];
        t[2] = now[j];
    }
    if let Some(j) = (at..last_slot).find(|&j| now[j] != ALPHA) {
        t[3] = (j - at + 1) as f64;
        t[4] = then[j];
        t[5] = now[j];
    }
    t
}

/// Where each component sits: `(lightpath index, position)` pairs.
pub type Occurrences = std::collections::BTreeMap<ComponentId, Vec<(usize, usize)>>;

pub fn occurrences(lightpaths: &[Lightpath]) -> Occurrences {
    let mut out = Occurrences::new();
    for (l, lp) in lightpaths.iter().enumerate() {
        for (at, &c) in lp.components.iter().enumerate() {
            out.entry(c).or_default().push((l, at));
        }
    }
    out
}

pub fn extract_features(
    component: ComponentId,
    lightpaths: &[Lightpath],
    pre: &MonitorSnapshot,
    post: &MonitorSnapshot,
    l_max: usize,
) -> Result<Vec<f64>, MlpError> {
    let occ: Vec<(usize, usize)> = lightpaths
        .iter()
        .enumerate()
        .filter_map(|(l, lp)| Some((l, lp.components.iter().position(|&c| c == component)?)))
        .collect();
    if occ.is_empty() {
        return Err(MlpError::Untraversed(component));
    }
    Ok(features_at(&occ, lightpaths, pre, post, l_max))
}

/// Same as [`extract_features`] from precomputed occurrences.
pub fn features_at(
    occ: &[(usize, usize)],
    lightpaths: &[Lightpath],
    pre: &MonitorSnapshot,
    post: &MonitorSnapshot,
    l_max: usize,
) -> Vec<f64> {
    let mut rows: Vec<(f64, u32, [f64; TUPLE])> = occ
        .iter()
        .map(|&(l, at)| {
            let lp = &lightpaths[l];
            let t = tuple(l, at, lp, pre, post);
            let drop = (t[5] - t[4]) - (t[2] - t[1]);
            (drop, lp.id, t)
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = vec![0.0; TUPLE * l_max];
    for (k, (_, _, t)) in rows.iter().take(l_max).enumerate() {
        out[k * TUPLE..(k + 1) * TUPLE].copy_from_slice(t);
    }
    out
}
