//! Threshold calibration and rule-based reasoning over a monitoring snapshot.
//!
//! Position `i` of a lightpath judges component `z_i` from the two readings
//! around it, `x_{i-1}` and `x_i`. The change is taken in the direction the
//! component is supposed to move power: gain for amplifiers, loss for
//! everything else. A separate per-reading floor `epsilon` clears every
//! component upstream of a reading that still looks healthy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitoring::{snapshot, Deployment, MonitorSnapshot, ALPHA};
use crate::physical::{self, FailureScenario, PowerModel};
use crate::provisioning::Lightpath;
use crate::topology::{ComponentGraph, ComponentId};

pub const DEFAULT_WINDOW: usize = 50;
/// Smallest margin used by the fallback thresholds, in dB.
pub const MIN_MARGIN_DB: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("window at lightpath {lp} position {position} lacks a normal or a faulty instance")]
pub struct InsufficientHistory {
    pub lp: u32,
    pub position: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionThreshold {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpThresholds {
    pub lp: u32,
    /// Indexed by reading position `0..p_l - 1`.
    pub positions: Vec<PositionThreshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub window: usize,
    pub lightpaths: Vec<LpThresholds>,
}

impl ThresholdTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("thresholds serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One calibration epoch: a snapshot and the components that were failed
/// while it was taken.
#[derive(Debug, Clone)]
pub struct LabelledSnapshot<'a> {
    pub snapshot: &'a MonitorSnapshot,
    pub failed: BTreeSet<ComponentId>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Change and reading thresholds from two labelled classes.
/// `normal`/`faulty` hold changes measured in the expected direction.
/// Returns `(delta, tau)`, or `None` if either class is empty.
pub fn fit_change(amplifier: bool, normal: &[f64], faulty: &[f64]) -> Option<(f64, f64)> {
    if normal.is_empty() || faulty.is_empty() {
        return None;
    }
    let avg_or = |filtered: Vec<f64>, all: &[f64]| {
        mean(filtered).unwrap_or_else(|| mean(all.iter().copied()).expect("non-empty"))
    };
    let (delta, tau) = if amplifier {
        let min_p = normal.iter().copied().fold(f64::INFINITY, f64::min);
        let max_q = faulty.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let delta = avg_or(
            faulty.iter().copied().filter(|&x| x < min_p).collect(),
            faulty,
        );
        let tau = avg_or(
            normal.iter().copied().filter(|&x| x > max_q).collect(),
            normal,
        );
        (delta, tau)
    } else {
        let max_p = normal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_q = faulty.iter().copied().fold(f64::INFINITY, f64::min);
        let tau = avg_or(
            faulty.iter().copied().filter(|&x| x > max_p).collect(),
            faulty,
        );
        let delta = avg_or(
            normal.iter().copied().filter(|&x| x < min_q).collect(),
            normal,
        );
        (delta, tau)
    };
    if delta > tau {
        let mid = 0.5 * (delta + tau);
        Some((mid, mid))
    } else {
        Some((delta, tau))
    }
}

/// Reading floor: mean of the normal readings above every faulty one.
pub fn fit_epsilon(normal: &[f64], faulty: &[f64]) -> Option<f64> {
    if normal.is_empty() || faulty.is_empty() {
        return None;
    }
    let max_q = faulty.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mean(normal.iter().copied().filter(|&x| x > max_q)).or_else(|| mean(normal.iter().copied()))
}

fn margin(sigma: f64) -> f64 {
    (3.0 * sigma * std::f64::consts::SQRT_2).max(MIN_MARGIN_DB)
}

/// Thresholds around an expected change `e` when the window has a single
/// class.
pub fn fallback_change(amplifier: bool, expected: f64, sigma: f64) -> (f64, f64) {
    let m = margin(sigma);
    if amplifier {
        (expected - 2.0 * m, expected - m)
    } else {
        (expected + m, expected + 2.0 * m)
    }
}

pub fn fallback_epsilon(expected_reading: f64, sigma: f64) -> f64 {
    expected_reading - (3.0 * sigma).max(MIN_MARGIN_DB)
}

fn is_amplifier(graph: &ComponentGraph, id: ComponentId) -> bool {
    graph.component(id).kind.is_amplifier()
}

/// Change of `z_i` between two readings, positive in the expected direction.
fn signed_change(amplifier: bool, before: f64, after: f64) -> f64 {
    if amplifier {
        after - before
    } else {
        before - after
    }
}

/// Fits every deployed position over the last `window` epochs of `history`.
/// Positions whose window holds a single class use the fallback built from
/// the window's own mean (or the nominal value when the window is empty).
pub fn fit_thresholds(
    graph: &ComponentGraph,
    lightpaths: &[Lightpath],
    history: &[LabelledSnapshot<'_>],
    model: &PowerModel,
    window: usize,
) -> (ThresholdTable, Vec<InsufficientHistory>) {
    let history = &history[history.len().saturating_sub(window)..];
    let sigma = model.jitter_sigma_db;
    let mut missing = Vec::new();
    let mut rng = crate::seed::rng(0, "nominal");
    let lps = lightpaths
        .iter()
        .enumerate()
        .map(|(l, lp)| {
            let nominal = physical::propagate(
                lp,
                graph,
                &FailureScenario::none(),
                &PowerModel::noiseless(),
                &mut rng,
            )
            .readings;
            let deployed_at = |i: usize| {
                history
                    .first()
                    .is_some_and(|h| h.snapshot.readings[l][i] != ALPHA)
            };
            let positions = (0..lp.len() - 1)
                .map(|i| {
                    let mut th = PositionThreshold::default();
                    if !deployed_at(i) {
                        return th;
                    }
                    let reading_class = |failed: &BTreeSet<ComponentId>| {
                        !lp.components[..=i].iter().any(|c| failed.contains(c))
                    };
                    let (mut rp, mut rq) = (Vec::new(), Vec::new());
                    for h in history {
                        let x = h.snapshot.readings[l][i];
                        if reading_class(&h.failed) {
                            rp.push(x)
                        } else {
                            rq.push(x)
                        }
                    }
                    let mut insufficient = false;
                    th.epsilon = Some(fit_epsilon(&rp, &rq).unwrap_or_else(|| {
                        insufficient = true;
                        fallback_epsilon(mean(rp.iter().copied()).unwrap_or(nominal[i]), sigma)
                    }));
                    if i >= 1 && deployed_at(i - 1) {
                        let z = lp.components[i];
                        let amp = is_amplifier(graph, z);
                        let (mut cp, mut cq) = (Vec::new(), Vec::new());
                        for h in history {
                            let r = &h.snapshot.readings[l];
                            let c = signed_change(amp, r[i - 1], r[i]);
                            if h.failed.contains(&z) {
                                cq.push(c)
                            } else {
                                cp.push(c)
                            }
                        }
                        let (d, t) = fit_change(amp, &cp, &cq).unwrap_or_else(|| {
                            insufficient = true;
                            let e = mean(cp.iter().copied())
                                .unwrap_or_else(|| graph.component(z).nominal_delta_db().abs());
                            fallback_change(amp, e, sigma)
                        });
                        th.delta = Some(d);
                        th.tau = Some(t);
                    }
                    if insufficient {
                        missing.push(InsufficientHistory {
                            lp: lp.id,
                            position: i as u32,
                        });
                    }
                    th
                })
                .collect();
            LpThresholds {
                lp: lp.id,
                positions,
            }
        })
        .collect();
    (
        ThresholdTable {
            window,
            lightpaths: lps,
        },
        missing,
    )
}

/// Thresholds from a single noise-free healthy epoch: every position falls
/// back to nominal values with margins for `model`'s jitter.
pub fn nominal_thresholds(
    graph: &ComponentGraph,
    lightpaths: &[Lightpath],
    deployment: &Deployment,
    model: &PowerModel,
) -> ThresholdTable {
    let snap = snapshot(
        graph,
        lightpaths,
        deployment,
        &FailureScenario::none(),
        &PowerModel::noiseless(),
        &mut crate::seed::rng(0, "nominal"),
    );
    let h = [LabelledSnapshot {
        snapshot: &snap,
        failed: BTreeSet::new(),
    }];
    fit_thresholds(graph, lightpaths, &h, model, 1).0
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuspectPartition {
    pub all: BTreeSet<ComponentId>,
    pub normal: BTreeSet<ComponentId>,
    pub faulty: BTreeSet<ComponentId>,
    pub suspect: BTreeSet<ComponentId>,
}

impl SuspectPartition {
    pub fn suspect_ratio(&self) -> f64 {
        if self.all.is_empty() {
            0.0
        } else {
            self.suspect.len() as f64 / self.all.len() as f64
        }
    }
}

/// Partitions every traversed component into normal, faulty and suspect.
pub fn reason(
    graph: &ComponentGraph,
    lightpaths: &[Lightpath],
    post: &MonitorSnapshot,
    thresholds: &ThresholdTable,
) -> SuspectPartition {
    let mut all = BTreeSet::new();
    let mut normal = BTreeSet::new();
    let mut faulty = BTreeSet::new();
    let transmitters: BTreeSet<ComponentId> =
        lightpaths.iter().map(|lp| lp.transmitter()).collect();
    for (l, lp) in lightpaths.iter().enumerate() {
        let x = &post.readings[l];
        let th = &thresholds.lightpaths[l].positions;
        debug_assert_eq!(thresholds.lightpaths[l].lp, lp.id);
        all.extend(lp.components.iter().copied());
        let p = lp.len();

        // a transmitter that cannot reach its launch floor failed
        if let (true, Some(eps)) = (x[0] != ALPHA, th[0].epsilon) {
            if x[0] < eps {
                faulty.insert(lp.components[0]);
            }
        }
        for i in 1..p - 1 {
            if x[i - 1] == ALPHA || x[i] == ALPHA {
                continue;
            }
            let (Some(delta), Some(tau)) = (th[i].delta, th[i].tau) else {
                continue;
            };
            let z = lp.components[i];
            let amp = is_amplifier(graph, z);
            let change = signed_change(amp, x[i - 1], x[i]);
            if amp {
                if change >= tau {
                    normal.insert(z);
                } else if change < delta {
                    faulty.insert(z);
                }
            } else if change >= tau {
                faulty.insert(z);
            } else if change < delta {
                normal.insert(z);
            }
        }
        let last_good = (0..p - 1)
            .rev()
            .find(|&i| x[i] != ALPHA && th[i].epsilon.is_some_and(|eps| x[i] >= eps));
        if let Some(i_s) = last_good {
            normal.extend(lp.components[..=i_s].iter().copied());
        }
        // a receiver that never transmits has no failure mode
        let rx = lp.receiver();
        if !transmitters.contains(&rx) {
            normal.insert(rx);
        }
    }
    for c in &faulty {
        normal.remove(c);
    }
    let suspect = all
        .iter()
        .filter(|c| !normal.contains(c) && !faulty.contains(c))
        .copied()
        .collect();
    SuspectPartition {
        all,
        normal,
        faulty,
        suspect,
    }
}
