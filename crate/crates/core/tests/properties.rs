use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use rinn::monitoring::{generate_dataset, Deployment, GeneratorConfig};
use rinn::physical::{propagate, FailureScenario, PowerModel};
use rinn::provisioning::{route_spff, LightpathRequest};
use rinn::rules::{nominal_thresholds, reason};
use rinn::seed;
use rinn::topology::{ComponentGraph, ComponentKind, LinkSpec, Topology, WssParams};

fn topology_strategy() -> impl Strategy<Value = Topology> {
    (2u32..6, any::<u64>(), 1u32..4).prop_flat_map(|(n, s, m)| {
        let pairs: Vec<(u32, u32)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        let k = pairs.len();
        (
            proptest::collection::vec((any::<bool>(), 1.0f64..500.0, 1u32..4), k),
            m..=6,
        )
            .prop_map(move |(picks, n_local)| {
                let links = pairs
                    .iter()
                    .zip(picks)
                    .filter(|(_, p)| p.0)
                    .map(|(&(a, b), (_, len, f))| LinkSpec {
                        a,
                        b,
                        length_km: len,
                        fibers: f,
                    })
                    .collect();
                Topology {
                    nodes: (0..n).collect(),
                    links,
                    wss: WssParams {
                        k: 64,
                        m,
                        n: n_local,
                    },
                    span_km: 80.0,
                    seed: s,
                }
            })
    })
}

fn japan() -> Topology {
    let path =
        std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../topologies/japan14.toml");
    Topology::load(&path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_graph_matches_closed_forms(t in topology_strategy()) {
        prop_assume!(t.validate().is_ok());
        let g = ComponentGraph::build(&t).unwrap();
        prop_assert_eq!(g.components.len() as u64, t.count_components().total);
        prop_assert_eq!(g.slots.len() as u64, t.count_opm_slots().total);
    }

    #[test]
    fn adding_a_fiber_never_lowers_lambda(t in topology_strategy(), pick in any::<prop::sample::Index>()) {
        prop_assume!(!t.links.is_empty());
        let mut more = t.clone();
        let i = pick.index(more.links.len());
        more.links[i].fibers += 1;
        for &n in &t.nodes {
            prop_assert!(more.lambda(n) >= t.lambda(n));
            prop_assert!(more.node_stats(n).degree >= t.node_stats(n).degree);
        }
    }

    #[test]
    fn no_two_lightpaths_share_a_fiber_wavelength(s in any::<u64>(), count in 1usize..60, w in 1u32..8) {
        let g = ComponentGraph::build(&japan()).unwrap();
        let mut rng = seed::rng(s, "requests");
        let requests: Vec<LightpathRequest> = (0..count as u32)
            .map(|id| {
                let a = rng.gen_range(0..14u32);
                let b = (a + rng.gen_range(1..14u32)) % 14;
                LightpathRequest { id, source: a, destination: b }
            })
            .collect();
        let p = route_spff(&g, &requests, w);
        prop_assert_eq!(p.lightpaths.len() + p.blocked.len(), count);
        let mut used = BTreeSet::new();
        for lp in &p.lightpaths {
            prop_assert!(lp.wavelength < w);
            for &c in &lp.components {
                if g.component(c).kind == ComponentKind::Booster {
                    prop_assert!(used.insert((c, lp.wavelength)));
                }
            }
        }
    }

    #[test]
    fn healthy_trace_is_the_running_sum(s in any::<u64>()) {
        let d = generate_dataset(&japan(), &GeneratorConfig {
            lp_count: 10,
            samples: 0,
            seed: s,
            ..GeneratorConfig::default()
        }).unwrap();
        let g = d.graph().unwrap();
        for lp in &d.lightpaths {
            let trace = propagate(lp, &g, &FailureScenario::none(), &PowerModel::noiseless(), &mut seed::rng(s, "j"));
            let mut sum = 0.0;
            for (i, &c) in lp.components[..lp.len() - 1].iter().enumerate() {
                let comp = g.component(c);
                sum += if comp.kind == ComponentKind::Transponder { comp.nominal } else { comp.nominal_delta_db() };
                prop_assert!((trace.readings[i] - sum).abs() < 1e-9);
            }
            prop_assert!(trace.received);
        }
    }

    #[test]
    fn rules_partition_is_disjoint(s in any::<u64>(), frac in 0.1f64..=1.0) {
        let model = PowerModel::noiseless();
        let d = generate_dataset(&japan(), &GeneratorConfig {
            lp_count: 15,
            samples: 5,
            opm_fraction: frac,
            power_model: model,
            seed: s,
            ..GeneratorConfig::default()
        }).unwrap();
        let g = d.graph().unwrap();
        let th = nominal_thresholds(&g, &d.lightpaths, &d.deployment, &model);
        for sample in &d.samples {
            let part = reason(&g, &d.lightpaths, &sample.post, &th);
            prop_assert!(part.normal.is_disjoint(&part.faulty));
            prop_assert!(part.suspect.is_disjoint(&part.faulty));
            prop_assert!(part.suspect.is_disjoint(&part.normal));
            let union: BTreeSet<_> = part.normal.iter().chain(&part.faulty).chain(&part.suspect).copied().collect();
            prop_assert_eq!(&union, &part.all);
            // with exact thresholds a convicted component is always a real failure
            prop_assert!(part.faulty.is_subset(&sample.truth()));
        }
    }

    #[test]
    fn deployment_size_and_spacing(total in 1u32..5000, count in 1u32..5000) {
        prop_assume!(count <= total);
        let d = Deployment::uniform(total, count).unwrap();
        prop_assert_eq!(d.deployed.len() as u32, count);
        prop_assert_eq!(d.interval, total / count);
        prop_assert!(d.deployed.iter().all(|&s| (s + 1) % d.interval == 0 && s < total));
    }
}

#[test]
fn same_seed_same_dataset() {
    let cfg = GeneratorConfig {
        lp_count: 20,
        samples: 20,
        opm_fraction: 0.4,
        seed: 99,
        ..GeneratorConfig::default()
    };
    let a = generate_dataset(&japan(), &cfg).unwrap().to_json();
    let b = generate_dataset(&japan(), &cfg).unwrap().to_json();
    assert_eq!(a, b);
    let other = GeneratorConfig { seed: 100, ..cfg };
    assert_ne!(a, generate_dataset(&japan(), &other).unwrap().to_json());
}

#[test]
fn routes_are_hop_shortest() {
    let t = japan();
    let g = ComponentGraph::build(&t).unwrap();
    let router = rinn::provisioning::Router::new(&g, 32);
    // breadth-first hop distances as the reference
    for src in 0..14u32 {
        let mut dist = [u32::MAX; 14];
        dist[src as usize] = 0;
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for (v, _) in t.neighbors(u) {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = dist[u as usize] + 1;
                    queue.push_back(v);
                }
            }
        }
        for dst in 0..14u32 {
            if dst == src {
                continue;
            }
            let path = router.shortest_path(src, dst).expect("connected");
            assert_eq!(path.len() as u32 - 1, dist[dst as usize], "{src}->{dst}");
            assert_eq!((path[0], *path.last().unwrap()), (src, dst));
        }
    }
}
