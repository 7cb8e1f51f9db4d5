//! OPM deployment, monitoring snapshots and the dataset generator.
//!
//! A snapshot holds, per lightpath `l`, a vector of length `p_l`: entry `i`
//! (0-based, `i < p_l - 1`) is the power after component `i`, or [`ALPHA`]
//! when that slot has no OPM; the last entry is the receiver flag (1 or 0).

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physical::{self, FailureClass, FailureScenario, PhysicalError, PowerModel};
use crate::provisioning::{Lightpath, LightpathRequest, Router, DEFAULT_WAVELENGTHS};
use crate::seed;
use crate::topology::{ComponentGraph, ComponentId, SlotId, Topology, TopologyError};

/// Reading stored for a slot without an OPM.
pub const ALPHA: f64 = -999.0;

#[derive(Debug, Error)]
pub enum MonitoringError {
    #[error("cannot deploy {requested} OPMs over {available} candidate locations")]
    OutOfRange { requested: f64, available: u32 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Physical(#[from] PhysicalError),
    #[error("could only provision {provisioned} of {requested} lightpaths")]
    Provisioning {
        requested: usize,
        provisioned: usize,
    },
    #[error("dataset io: {0}")]
    Io(String),
    #[error("dataset format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub total_slots: u32,
    pub interval: u32,
    /// Slot ids carrying an OPM (0-based; slot `s` is location `s + 1`).
    pub deployed: BTreeSet<SlotId>,
}

impl Deployment {
    /// One OPM every `floor(M / M')` locations, at `I, 2I, ..., M'I`.
    pub fn uniform(total_slots: u32, count: u32) -> Result<Self, MonitoringError> {
        if count == 0 || count > total_slots {
            return Err(MonitoringError::OutOfRange {
                requested: count as f64,
                available: total_slots,
            });
        }
        let interval = total_slots / count;
        let deployed = (1..=count).map(|m| m * interval - 1).collect();
        Ok(Deployment {
            total_slots,
            interval,
            deployed,
        })
    }

    /// `M' = round(fraction * M)`, at least one.
    pub fn from_fraction(total_slots: u32, fraction: f64) -> Result<Self, MonitoringError> {
        if !(fraction > 0.0 && fraction <= 1.0) || total_slots == 0 {
            return Err(MonitoringError::OutOfRange {
                requested: fraction,
                available: total_slots,
            });
        }
        let count = ((fraction * total_slots as f64).round() as u32).clamp(1, total_slots);
        Self::uniform(total_slots, count)
    }

    pub fn full(total_slots: u32) -> Self {
        Deployment {
            total_slots,
            interval: 1,
            deployed: (0..total_slots).collect(),
        }
    }

    pub fn is_deployed(&self, slot: SlotId) -> bool {
        self.deployed.contains(&slot)
    }

    /// Indicator per location.
    pub fn psi(&self) -> Vec<u8> {
        (0..self.total_slots)
            .map(|s| self.is_deployed(s) as u8)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.deployed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deployed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSnapshot {
    #[serde(with = "fixed4")]
    pub readings: Vec<Vec<f64>>,
}

impl MonitorSnapshot {
    pub fn flag(&self, lp: usize) -> bool {
        self.readings[lp].last().is_some_and(|&v| v >= 0.5)
    }
}

/// Readings for every lightpath under `scenario`, masked by `deployment`.
pub fn snapshot<R: Rng + ?Sized>(
    graph: &ComponentGraph,
    lightpaths: &[Lightpath],
    deployment: &Deployment,
    scenario: &FailureScenario,
    model: &PowerModel,
    rng: &mut R,
) -> MonitorSnapshot {
    let readings = lightpaths
        .iter()
        .map(|lp| {
            let trace = physical::propagate(lp, graph, scenario, model, rng);
            let mut row: Vec<f64> = trace
                .readings
                .iter()
                .zip(&lp.slots)
                .map(|(&p, &s)| if deployment.is_deployed(s) { p } else { ALPHA })
                .collect();
            row.push(if trace.received { 1.0 } else { 0.0 });
            row
        })
        .collect();
    MonitorSnapshot { readings }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub post: MonitorSnapshot,
    pub failures: Vec<physical::Failure>,
}

impl Sample {
    pub fn truth(&self) -> BTreeSet<ComponentId> {
        self.failures.iter().map(|f| f.component).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub opm_fraction: f64,
    pub n_f_set: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_filter: Option<FailureClass>,
    pub lp_count: usize,
    pub wavelengths: u32,
    pub power_model: PowerModel,
}

impl DatasetMeta {
    pub fn opm_percent(&self) -> u32 {
        (self.opm_fraction * 100.0).round() as u32
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub topology: Topology,
    pub lightpaths: Vec<Lightpath>,
    pub deployment: Deployment,
    pub pre: MonitorSnapshot,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MonitoringError> {
        serde_json::from_str(text).map_err(|e| MonitoringError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), MonitoringError> {
        crate::util::write_atomic(path, self.to_json().as_bytes())
            .map_err(|e| MonitoringError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, MonitoringError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MonitoringError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn graph(&self) -> Result<ComponentGraph, MonitoringError> {
        Ok(ComponentGraph::build(&self.topology)?)
    }

    /// Components traversed by at least one lightpath.
    pub fn traversed(&self) -> BTreeSet<ComponentId> {
        traversed(&self.lightpaths)
    }
}

pub fn traversed(lightpaths: &[Lightpath]) -> BTreeSet<ComponentId> {
    lightpaths
        .iter()
        .flat_map(|lp| lp.components.iter().copied())
        .collect()
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub lp_count: usize,
    pub samples: usize,
    pub n_f_set: Vec<usize>,
    pub type_filter: Option<FailureClass>,
    pub opm_fraction: f64,
    pub power_model: PowerModel,
    pub wavelengths: u32,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            lp_count: 100,
            samples: 1000,
            n_f_set: vec![1, 2, 3],
            type_filter: None,
            opm_fraction: 1.0,
            power_model: PowerModel::default(),
            wavelengths: DEFAULT_WAVELENGTHS,
            seed: 0,
        }
    }
}

/// Random source/destination pairs routed one by one; blocked requests are
/// replaced by fresh draws until `count` lightpaths exist.
pub fn provision_random(
    graph: &ComponentGraph,
    count: usize,
    wavelengths: u32,
    seed_root: u64,
) -> Result<Vec<Lightpath>, MonitoringError> {
    let nodes = &graph.topology.nodes;
    let mut rng = seed::rng(seed_root, "requests");
    let mut router = Router::new(graph, wavelengths);
    let mut out = Vec::with_capacity(count);
    let budget = 50 * count + 100;
    let mut attempts = 0;
    while out.len() < count && attempts < budget && nodes.len() >= 2 {
        attempts += 1;
        let a = nodes[rng.gen_range(0..nodes.len())];
        let b = nodes[rng.gen_range(0..nodes.len())];
        if a == b {
            continue;
        }
        let req = LightpathRequest {
            id: out.len() as u32,
            source: a,
            destination: b,
        };
        if let Ok(lp) = router.route(&req) {
            out.push(lp);
        }
    }
    if out.len() < count {
        return Err(MonitoringError::Provisioning {
            requested: count,
            provisioned: out.len(),
        });
    }
    Ok(out)
}

pub fn generate_dataset(
    topology: &Topology,
    config: &GeneratorConfig,
) -> Result<Dataset, MonitoringError> {
    let graph = ComponentGraph::build(topology)?;
    let lightpaths = provision_random(&graph, config.lp_count, config.wavelengths, config.seed)?;
    let deployment = Deployment::from_fraction(graph.slots.len() as u32, config.opm_fraction)?;
    let model = config.power_model;
    let pre = snapshot(
        &graph,
        &lightpaths,
        &deployment,
        &FailureScenario::none(),
        &model,
        &mut seed::rng(config.seed, "pre"),
    );
    let samples = (0..config.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng_indexed(config.seed, "sample", s as u64);
            let scenario = physical::sample_failure_scenario(
                &graph,
                &lightpaths,
                &config.n_f_set,
                config.type_filter,
                &mut rng,
            )?;
            let post = snapshot(
                &graph,
                &lightpaths,
                &deployment,
                &scenario,
                &model,
                &mut rng,
            );
            Ok(Sample {
                post,
                failures: scenario.failures,
            })
        })
        .collect::<Result<Vec<_>, MonitoringError>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            seed: config.seed,
            opm_fraction: config.opm_fraction,
            n_f_set: config.n_f_set.clone(),
            type_filter: config.type_filter,
            lp_count: config.lp_count,
            wavelengths: config.wavelengths,
            power_model: model,
        },
        topology: topology.clone(),
        lightpaths,
        deployment,
        pre,
        samples,
    })
}

/// `|T|` failure-free snapshots with measurement jitter, used to calibrate
/// thresholds on the network the dataset was captured on.
pub fn healthy_window(
    graph: &ComponentGraph,
    lightpaths: &[Lightpath],
    deployment: &Deployment,
    model: &PowerModel,
    size: usize,
    seed_root: u64,
) -> Vec<MonitorSnapshot> {
    (0..size)
        .map(|t| {
            let mut rng = seed::rng_indexed(seed_root, "window", t as u64);
            snapshot(
                graph,
                lightpaths,
                deployment,
                &FailureScenario::none(),
                model,
                &mut rng,
            )
        })
        .collect()
}

mod fixed4 {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};
    use serde_json::value::RawValue;

    struct Row<'a>(&'a [f64]);

    impl serde::Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(self.0.len()))?;
            for v in self.0 {
                let raw =
                    RawValue::from_string(format!("{v:.4}")).map_err(serde::ser::Error::custom)?;
                seq.serialize_element(&raw)?;
            }
            seq.end()
        }
    }

    pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(rows.len()))?;
        for r in rows {
            seq.serialize_element(&Row(r))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<f64>>::deserialize(d)
    }
}
