//! dB power ledger along lightpaths and failure injection.
//!
//! Readings are additive: the power after component `i` is the launch power
//! plus the signed effective contribution of every component up to `i`. A
//! hard failure replaces the component output by noise at the floor (or
//! lower, if the input already was); downstream amplifiers keep amplifying
//! that noise, so monitors keep reporting power, but the receiver loses the
//! signal.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provisioning::Lightpath;
use crate::topology::{Component, ComponentGraph, ComponentId, ComponentKind};

pub const NOISE_FLOOR_DBM: f64 = -60.0;
pub const RECEIVER_SENSITIVITY_DBM: f64 = -25.0;
pub const DEFAULT_JITTER_DB: f64 = 0.1;

pub const ATTENUATION_RANGE_DB: (f64, f64) = (2.0, 8.0);
pub const GAIN_DEGRADATION_RANGE_DB: (f64, f64) = (3.0, 10.0);
pub const LAUNCH_DEGRADATION_RANGE_DB: (f64, f64) = (2.0, 6.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicalError {
    #[error("failure {failure:?} does not apply to {kind:?} component {component}")]
    KindMismatch {
        component: ComponentId,
        kind: ComponentKind,
        failure: FailureType,
    },
    #[error("component {0} appears twice in one scenario")]
    DuplicateComponent(ComponentId),
    #[error("need {requested} failed components but only {available} candidates are observable")]
    NotEnoughComponents { requested: usize, available: usize },
    #[error("empty failure-count set")]
    EmptyFailureSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureType {
    TransponderBreak,
    LaunchPowerDegradation,
    AmplifierBreak,
    GainDegradation,
    WssBreak,
    ExcessiveFiltering,
    ExtraAttenuation,
    FiberBreak,
    LossDegradation,
}

impl FailureType {
    pub const ALL: [FailureType; 9] = [
        FailureType::TransponderBreak,
        FailureType::LaunchPowerDegradation,
        FailureType::AmplifierBreak,
        FailureType::GainDegradation,
        FailureType::WssBreak,
        FailureType::ExcessiveFiltering,
        FailureType::ExtraAttenuation,
        FailureType::FiberBreak,
        FailureType::LossDegradation,
    ];

    pub fn applies_to(self, kind: ComponentKind) -> bool {
        use FailureType::*;
        match self {
            TransponderBreak | LaunchPowerDegradation => kind == ComponentKind::Transponder,
            AmplifierBreak | GainDegradation => kind.is_amplifier(),
            WssBreak | ExcessiveFiltering | ExtraAttenuation => kind.is_wss(),
            FiberBreak | LossDegradation => kind == ComponentKind::FiberSpan,
        }
    }

    pub fn is_hard(self) -> bool {
        use FailureType::*;
        matches!(
            self,
            TransponderBreak | AmplifierBreak | WssBreak | ExcessiveFiltering | FiberBreak
        )
    }

    pub fn applicable(kind: ComponentKind) -> Vec<FailureType> {
        Self::ALL
            .into_iter()
            .filter(|t| t.applies_to(kind))
            .collect()
    }
}

/// Component family used to restrict failure draws to one family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    Transponder,
    Amplifier,
    Wss,
    Fiber,
}

impl FailureClass {
    pub const ALL: [FailureClass; 4] = [
        FailureClass::Transponder,
        FailureClass::Amplifier,
        FailureClass::Wss,
        FailureClass::Fiber,
    ];

    pub fn of(kind: ComponentKind) -> Self {
        match kind {
            ComponentKind::Transponder => FailureClass::Transponder,
            ComponentKind::Preamp | ComponentKind::Booster | ComponentKind::Ila => {
                FailureClass::Amplifier
            }
            ComponentKind::LocalWss | ComponentKind::LineWss => FailureClass::Wss,
            ComponentKind::FiberSpan => FailureClass::Fiber,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FailureClass::Transponder => "transponder",
            FailureClass::Amplifier => "amplifier",
            FailureClass::Wss => "wss",
            FailureClass::Fiber => "fiber",
        }
    }
}

impl std::str::FromStr for FailureClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transponder" => Ok(FailureClass::Transponder),
            "amplifier" => Ok(FailureClass::Amplifier),
            "wss" => Ok(FailureClass::Wss),
            "fiber" => Ok(FailureClass::Fiber),
            other => Err(format!(
                "unknown failure type '{other}' (expected transponder, amplifier, wss or fiber)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub component: ComponentId,
    pub kind: FailureType,
    /// Degradation in dB; zero for hard failures.
    pub magnitude_db: f64,
    /// Blocked channel for excessive filtering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureScenario {
    pub failures: Vec<Failure>,
    #[serde(skip)]
    by_component: BTreeMap<ComponentId, usize>,
}

impl FailureScenario {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(graph: &ComponentGraph, failures: Vec<Failure>) -> Result<Self, PhysicalError> {
        let mut by_component = BTreeMap::new();
        for (i, f) in failures.iter().enumerate() {
            let kind = graph.component(f.component).kind;
            if !f.kind.applies_to(kind) {
                return Err(PhysicalError::KindMismatch {
                    component: f.component,
                    kind,
                    failure: f.kind,
                });
            }
            if by_component.insert(f.component, i).is_some() {
                return Err(PhysicalError::DuplicateComponent(f.component));
            }
        }
        Ok(FailureScenario {
            failures,
            by_component,
        })
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.by_component = self
            .failures
            .iter()
            .enumerate()
            .map(|(i, f)| (f.component, i))
            .collect();
    }

    pub fn failure_of(&self, id: ComponentId) -> Option<&Failure> {
        self.by_component.get(&id).map(|&i| &self.failures[i])
    }

    pub fn components(&self) -> BTreeSet<ComponentId> {
        self.failures.iter().map(|f| f.component).collect()
    }

    pub fn len(&self) -> usize {
        self.failures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub jitter_sigma_db: f64,
    pub noise_floor_dbm: f64,
    pub receiver_sensitivity_dbm: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            jitter_sigma_db: DEFAULT_JITTER_DB,
            noise_floor_dbm: NOISE_FLOOR_DBM,
            receiver_sensitivity_dbm: RECEIVER_SENSITIVITY_DBM,
        }
    }
}

impl PowerModel {
    pub fn noiseless() -> Self {
        PowerModel {
            jitter_sigma_db: 0.0,
            ..Self::default()
        }
    }
}

/// Effective behaviour of one component for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Effective {
    /// Transmit power in dBm.
    Launch(f64),
    Gain(f64),
    Loss(f64),
    /// Output replaced by noise at the floor.
    Broken,
}

impl Effective {
    /// Output power given the input power (ignored for launch).
    pub fn apply(self, input_dbm: f64, nominal: &Component, floor: f64) -> f64 {
        match self {
            Effective::Launch(p) => p,
            Effective::Gain(g) => input_dbm + g,
            Effective::Loss(l) => input_dbm - l,
            Effective::Broken => {
                let nominal_out = if nominal.kind == ComponentKind::Transponder {
                    nominal.nominal
                } else {
                    input_dbm + nominal.nominal_delta_db()
                };
                floor.min(nominal_out)
            }
        }
    }
}

/// Nominal parameters adjusted by any failure on the component, as seen by
/// a channel on `wavelength`.
pub fn effective_params(
    component: &Component,
    scenario: &FailureScenario,
    wavelength: u32,
) -> Result<Effective, PhysicalError> {
    let base = match component.kind {
        ComponentKind::Transponder => Effective::Launch(component.nominal),
        k if k.is_amplifier() => Effective::Gain(component.nominal),
        _ => Effective::Loss(component.nominal),
    };
    let Some(f) = scenario.failure_of(component.id) else {
        return Ok(base);
    };
    if !f.kind.applies_to(component.kind) {
        return Err(PhysicalError::KindMismatch {
            component: component.id,
            kind: component.kind,
            failure: f.kind,
        });
    }
    use FailureType::*;
    Ok(match f.kind {
        TransponderBreak | AmplifierBreak | WssBreak | FiberBreak => Effective::Broken,
        ExcessiveFiltering => {
            if f.wavelength.is_none_or(|w| w == wavelength) {
                Effective::Broken
            } else {
                base
            }
        }
        LaunchPowerDegradation => Effective::Launch(component.nominal - f.magnitude_db),
        GainDegradation => Effective::Gain(component.nominal - f.magnitude_db),
        ExtraAttenuation | LossDegradation => Effective::Loss(component.nominal + f.magnitude_db),
    })
}

/// Power readings at every slot of a lightpath plus the receiver verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// `readings[i]` is the power between component `i` and `i + 1`.
    pub readings: Vec<f64>,
    pub received: bool,
}

/// Propagates one channel; `jitter` draws the measurement noise (pass the
/// same generator state for reproducible traces).
pub fn propagate<R: Rng + ?Sized>(
    lp: &Lightpath,
    graph: &ComponentGraph,
    scenario: &FailureScenario,
    model: &PowerModel,
    jitter: &mut R,
) -> Trace {
    let floor = model.noise_floor_dbm;
    let mut power = 0.0;
    let mut signal = true;
    let mut readings = Vec::with_capacity(lp.components.len().saturating_sub(1));
    let last = lp.components.len() - 1;
    for (i, &id) in lp.components.iter().enumerate() {
        let c = graph.component(id);
        if i == last {
            // receiving transponder: only its launch side can fail
            break;
        }
        let eff = effective_params(c, scenario, lp.wavelength).expect("scenario validated");
        if eff == Effective::Broken {
            signal = false;
        }
        power = eff.apply(power, c, floor);
        readings.push(power);
    }
    let received = signal
        && readings
            .last()
            .is_some_and(|&p| p >= model.receiver_sensitivity_dbm);
    if model.jitter_sigma_db > 0.0 {
        let noise = Normal::new(0.0, model.jitter_sigma_db).expect("finite sigma");
        for r in &mut readings {
            *r += noise.sample(jitter);
        }
    }
    Trace { readings, received }
}

/// Components whose failure can show up on at least one lightpath: every
/// traversed component, except transponders that only receive (the failure
/// modes of a transponder act on its launch side).
pub fn observable_components(lightpaths: &[Lightpath]) -> Vec<ComponentId> {
    let transmitters: BTreeSet<_> = lightpaths.iter().map(|lp| lp.transmitter()).collect();
    let mut out = BTreeSet::new();
    for lp in lightpaths {
        out.extend(lp.components[..lp.len() - 1].iter().copied());
    }
    out.extend(transmitters);
    out.into_iter().collect()
}

/// Draws a failure scenario for dataset generation.
pub fn sample_failure_scenario<R: Rng + ?Sized>(
    graph: &ComponentGraph,
    lightpaths: &[Lightpath],
    n_f_set: &[usize],
    class_filter: Option<FailureClass>,
    rng: &mut R,
) -> Result<FailureScenario, PhysicalError> {
    let &n_f = n_f_set.choose(rng).ok_or(PhysicalError::EmptyFailureSet)?;
    let candidates: Vec<ComponentId> = observable_components(lightpaths)
        .into_iter()
        .filter(|&c| class_filter.is_none_or(|f| FailureClass::of(graph.component(c).kind) == f))
        .collect();
    if candidates.len() < n_f {
        return Err(PhysicalError::NotEnoughComponents {
            requested: n_f,
            available: candidates.len(),
        });
    }
    let mut chosen: Vec<ComponentId> = candidates.choose_multiple(rng, n_f).copied().collect();
    chosen.sort_unstable();
    let mut failures = Vec::with_capacity(n_f);
    for id in chosen {
        let kind = graph.component(id).kind;
        let kind_types = FailureType::applicable(kind);
        let ty = *kind_types
            .choose(rng)
            .expect("every kind has failure types");
        let mut f = Failure {
            component: id,
            kind: ty,
            magnitude_db: 0.0,
            wavelength: None,
        };
        use FailureType::*;
        match ty {
            ExtraAttenuation | LossDegradation => {
                f.magnitude_db = rng.gen_range(ATTENUATION_RANGE_DB.0..=ATTENUATION_RANGE_DB.1)
            }
            GainDegradation => {
                f.magnitude_db =
                    rng.gen_range(GAIN_DEGRADATION_RANGE_DB.0..=GAIN_DEGRADATION_RANGE_DB.1)
            }
            LaunchPowerDegradation => {
                f.magnitude_db =
                    rng.gen_range(LAUNCH_DEGRADATION_RANGE_DB.0..=LAUNCH_DEGRADATION_RANGE_DB.1)
            }
            ExcessiveFiltering => {
                let channels: BTreeSet<u32> = lightpaths
                    .iter()
                    .filter(|lp| lp.components.contains(&id))
                    .map(|lp| lp.wavelength)
                    .collect();
                let channels: Vec<u32> = channels.into_iter().collect();
                f.wavelength = channels.choose(rng).copied();
            }
            _ => {}
        }
        failures.push(f);
    }
    FailureScenario::new(graph, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provisioning::{route_spff, LightpathRequest};
    use crate::seed;
    use crate::topology::{LinkSpec, Site, Topology, WssParams};

    fn setup() -> (ComponentGraph, Vec<Lightpath>) {
        let g = ComponentGraph::build(&Topology {
            nodes: vec![0, 1, 2],
            links: vec![
                LinkSpec {
                    a: 0,
                    b: 1,
                    length_km: 160.0,
                    fibers: 1,
                },
                LinkSpec {
                    a: 1,
                    b: 2,
                    length_km: 240.0,
                    fibers: 2,
                },
            ],
            wss: WssParams { k: 8, m: 2, n: 4 },
            span_km: 80.0,
            seed: 11,
        })
        .unwrap();
        let reqs = [
            LightpathRequest {
                id: 0,
                source: 0,
                destination: 2,
            },
            LightpathRequest {
                id: 1,
                source: 1,
                destination: 2,
            },
            LightpathRequest {
                id: 2,
                source: 2,
                destination: 0,
            },
        ];
        let lps = route_spff(&g, &reqs, 4).lightpaths;
        (g, lps)
    }

    fn ledger(g: &ComponentGraph, lp: &Lightpath) -> Vec<f64> {
        let mut acc = 0.0;
        lp.components[..lp.len() - 1]
            .iter()
            .map(|&id| {
                let c = g.component(id);
                acc = if c.kind == ComponentKind::Transponder {
                    c.nominal
                } else {
                    acc + c.nominal_delta_db()
                };
                acc
            })
            .collect()
    }

    #[test]
    fn healthy_trace_is_the_nominal_sum() {
        let (g, lps) = setup();
        let mut r = seed::rng(0, "t");
        for lp in &lps {
            let t = propagate(
                lp,
                &g,
                &FailureScenario::none(),
                &PowerModel::noiseless(),
                &mut r,
            );
            assert_eq!(t.readings, ledger(&g, lp));
            assert!(t.received);
        }
    }

    #[test]
    fn extra_attenuation_shifts_downstream_by_magnitude() {
        let (g, lps) = setup();
        let lp = &lps[0];
        let pos = lp
            .components
            .iter()
            .position(|&c| g.component(c).kind == ComponentKind::LineWss)
            .unwrap();
        let wss = g.component(lp.components[pos]);
        let s = FailureScenario::new(
            &g,
            vec![Failure {
                component: wss.id,
                kind: FailureType::ExtraAttenuation,
                magnitude_db: 4.0,
                wavelength: None,
            }],
        )
        .unwrap();
        assert_eq!(
            effective_params(wss, &FailureScenario::none(), 0).unwrap(),
            Effective::Loss(5.0)
        );
        assert_eq!(effective_params(wss, &s, 0).unwrap(), Effective::Loss(9.0));
        let mut r = seed::rng(0, "t");
        let base = propagate(
            lp,
            &g,
            &FailureScenario::none(),
            &PowerModel::noiseless(),
            &mut r,
        );
        let hit = propagate(lp, &g, &s, &PowerModel::noiseless(), &mut r);
        for i in 0..base.readings.len() {
            let expect = if i >= pos { 4.0 } else { 0.0 };
            assert!((base.readings[i] - hit.readings[i] - expect).abs() < 1e-12);
        }
        assert!(hit.received);
    }

    #[test]
    fn fiber_break_kills_signal() {
        let (g, lps) = setup();
        let lp = &lps[0];
        let pos = lp
            .components
            .iter()
            .position(|&c| g.component(c).kind == ComponentKind::FiberSpan)
            .unwrap();
        let s = FailureScenario::new(
            &g,
            vec![Failure {
                component: lp.components[pos],
                kind: FailureType::FiberBreak,
                magnitude_db: 0.0,
                wavelength: None,
            }],
        )
        .unwrap();
        let mut r = seed::rng(0, "t");
        let t = propagate(lp, &g, &s, &PowerModel::noiseless(), &mut r);
        assert_eq!(t.readings[pos], NOISE_FLOOR_DBM);
        assert!(!t.received);
        // the ledger stays additive after the break
        let base = ledger(&g, lp);
        for i in pos + 1..base.len() {
            let d = (t.readings[i] - t.readings[i - 1]) - (base[i] - base[i - 1]);
            assert!(d.abs() < 1e-9);
        }
    }

    #[test]
    fn amplifier_break_on_noise_does_not_raise_power() {
        let (g, lps) = setup();
        let lp = &lps[0];
        let amp = lp
            .components
            .iter()
            .copied()
            .find(|&c| g.component(c).kind == ComponentKind::Ila)
            .unwrap();
        let c = g.component(amp);
        // input far below the floor: the broken amplifier passes nominal output
        assert_eq!(
            Effective::Broken.apply(-100.0, c, NOISE_FLOOR_DBM),
            -100.0 + c.nominal
        );
        assert_eq!(
            Effective::Broken.apply(-10.0, c, NOISE_FLOOR_DBM),
            NOISE_FLOOR_DBM
        );
    }

    #[test]
    fn excessive_filtering_is_per_channel() {
        let (g, lps) = setup();
        let wss = g.line_in((1, 2, 0));
        let f = Failure {
            component: wss,
            kind: FailureType::ExcessiveFiltering,
            magnitude_db: 0.0,
            wavelength: Some(3),
        };
        let s = FailureScenario::new(&g, vec![f]).unwrap();
        assert_eq!(
            effective_params(g.component(wss), &s, 3).unwrap(),
            Effective::Broken
        );
        assert_eq!(
            effective_params(g.component(wss), &s, 0).unwrap(),
            Effective::Loss(5.0)
        );
        let _ = lps;
    }

    #[test]
    fn kind_mismatch_rejected() {
        let (g, _) = setup();
        let span = g.fiber_chain((0, 1, 0))[0];
        let err = FailureScenario::new(
            &g,
            vec![Failure {
                component: span,
                kind: FailureType::GainDegradation,
                magnitude_db: 3.0,
                wavelength: None,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, PhysicalError::KindMismatch { .. }));
    }

    #[test]
    fn sampled_counts_and_filters() {
        let (g, lps) = setup();
        let mut rng = seed::rng(5, "draws");
        for _ in 0..200 {
            let s = sample_failure_scenario(&g, &lps, &[1], None, &mut rng).unwrap();
            assert_eq!(s.len(), 1);
        }
        for _ in 0..200 {
            let s = sample_failure_scenario(
                &g,
                &lps,
                &[1, 2],
                Some(FailureClass::Transponder),
                &mut rng,
            )
            .unwrap();
            for f in &s.failures {
                let c = g.component(f.component);
                assert!(matches!(c.site, Site::Transponder { .. }));
                // only transmitting transponders are eligible
                assert!(lps.iter().any(|lp| lp.transmitter() == c.id));
            }
        }
        let err =
            sample_failure_scenario(&g, &lps, &[30], Some(FailureClass::Transponder), &mut rng)
                .unwrap_err();
        assert!(matches!(err, PhysicalError::NotEnoughComponents { .. }));
    }

    #[test]
    fn mixed_failure_count_averages_two() {
        let (g, lps) = setup();
        let mut rng = seed::rng(9, "lln");
        let n = 30_000;
        let total: usize = (0..n)
            .map(|_| {
                sample_failure_scenario(&g, &lps, &[1, 2, 3], None, &mut rng)
                    .unwrap()
                    .len()
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
    }
}
