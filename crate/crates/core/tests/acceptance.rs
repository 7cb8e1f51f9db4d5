//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p rinn-core --test acceptance`.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;
use rinn::mlp::{Mlp, TrainReport};
use rinn::monitoring::{generate_dataset, snapshot, Dataset, Deployment, GeneratorConfig};
use rinn::physical::{propagate, sample_failure_scenario, Effective, FailureScenario, PowerModel};
use rinn::pipeline::{
    calibrate, evaluate, mean_suspect_ratio, measure_inference, score_results, train_model,
    Context, Engine, ModelFile,
};
use rinn::provisioning::{route_spff, LightpathRequest};
use rinn::rules::{nominal_thresholds, reason, DEFAULT_WINDOW};
use rinn::topology::{ComponentGraph, ComponentKind, LinkSpec, Topology, WssParams};
use rinn::{mlp, physical, seed};

const ROOT: u64 = 20_240_607;

// pinned tolerances
const LEDGER_TOL_DB: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-4;
const ORDER_MARGIN: f64 = 0.02;
const INFERENCE_LIMIT_S: f64 = 0.050;
const COUNTING_LIMIT: Duration = Duration::from_secs(10);
const ENDPOINT_LIMIT: Duration = Duration::from_secs(300);
const ORDERING_LIMIT: Duration = Duration::from_secs(900);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn japan() -> Topology {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../topologies/japan14.toml");
    Topology::load(&path).expect("shipped topology loads")
}

fn random_topology<R: Rng>(rng: &mut R) -> Topology {
    let n_nodes = rng.gen_range(1..=6u32);
    let nodes: Vec<u32> = (0..n_nodes).collect();
    let mut links = Vec::new();
    for a in 0..n_nodes {
        for b in a + 1..n_nodes {
            if rng.gen_bool(0.5) {
                links.push(LinkSpec {
                    a,
                    b,
                    length_km: rng.gen_range(1.0..400.0),
                    fibers: rng.gen_range(1..=3),
                });
            }
        }
    }
    let m = rng.gen_range(1..=4);
    Topology {
        nodes,
        links,
        wss: WssParams {
            k: 64,
            m,
            n: rng.gen_range(m..=6),
        },
        span_km: 80.0,
        seed: rng.gen(),
    }
}

/// Closed-form totals written out independently of the library.
fn closed_forms(t: &Topology) -> (u64, u64) {
    let (k_n, m) = (t.wss.n as u64, t.wss.m as u64);
    let mut c = 0u64;
    let mut slots = 0u64;
    for &i in &t.nodes {
        let hs: Vec<u64> = t
            .links
            .iter()
            .filter(|l| l.a == i || l.b == i)
            .map(|l| l.fibers as u64)
            .collect();
        let sum: u64 = hs.iter().sum();
        let lambda = sum.div_ceil(m);
        c += k_n * lambda + 2 * lambda + 4 * sum;
        slots += 2 * k_n * lambda;
        for &h in &hs {
            slots += 6 * h + h * (sum - h);
        }
    }
    for l in &t.links {
        let s = ((l.length_km / t.span_km).ceil() as u64).max(1);
        let h = l.fibers as u64;
        c += 2 * h * (2 * s - 1);
        slots += 2 * h * 2 * (s - 1);
    }
    (c, slots)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(ROOT, "counting");
    let mut bad = 0;
    for _ in 0..200 {
        let t = random_topology(&mut rng);
        let g = ComponentGraph::build(&t).expect("random topology is valid");
        let (c, m) = closed_forms(&t);
        let ok = g.components.len() as u64 == c
            && g.slots.len() as u64 == m
            && t.count_components().total == c
            && t.count_opm_slots().total == m;
        bad += !ok as usize;
    }
    let took = start.elapsed();
    outcome(
        bad == 0 && took < COUNTING_LIMIT,
        format!(
            "200 topologies, {bad} mismatches, {:.2}s",
            took.as_secs_f64()
        ),
    )
}

/// dB ledger recomputed from the failure list alone.
fn ledger(g: &ComponentGraph, lp: &rinn::provisioning::Lightpath, s: &FailureScenario) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::new();
    for &id in &lp.components[..lp.len() - 1] {
        let c = g.component(id);
        let eff = physical::effective_params(c, s, lp.wavelength).unwrap();
        acc = match eff {
            Effective::Launch(p) => p,
            Effective::Gain(x) => acc + x,
            Effective::Loss(x) => acc - x,
            Effective::Broken => {
                let nominal_out = if c.kind == ComponentKind::Transponder {
                    c.nominal
                } else {
                    acc + c.nominal_delta_db()
                };
                physical::NOISE_FLOOR_DBM.min(nominal_out)
            }
        };
        out.push(acc);
    }
    out
}

fn criterion_2() -> Outcome {
    let topo = japan();
    let g = ComponentGraph::build(&topo).unwrap();
    let lps =
        rinn::monitoring::provision_random(&g, 100, 32, seed::derive(ROOT, "ledger")).unwrap();
    let mut rng = seed::rng(ROOT, "ledger-scenarios");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = sample_failure_scenario(&g, &lps, &[1, 2, 3], None, &mut rng).unwrap();
        let lp = &lps[rng.gen_range(0..lps.len())];
        let t = propagate(lp, &g, &s, &PowerModel::noiseless(), &mut rng);
        for (a, b) in t.readings.iter().zip(ledger(&g, lp, &s)) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst <= LEDGER_TOL_DB,
        format!("1000 pairs, max deviation {worst:.3e} dB"),
    )
}

fn toy(variant: usize, topo_seed: u64) -> (ComponentGraph, Vec<rinn::provisioning::Lightpath>) {
    let (length, reqs) = if variant == 0 {
        // two channels sharing every line component
        (80.0, vec![(0, 0, 1), (1, 0, 1)])
    } else {
        (160.0, vec![(0, 0, 1)])
    };
    let t = Topology {
        nodes: vec![0, 1],
        links: vec![LinkSpec {
            a: 0,
            b: 1,
            length_km: length,
            fibers: 1,
        }],
        wss: WssParams { k: 4, m: 1, n: 2 },
        span_km: 80.0,
        seed: topo_seed,
    };
    let g = ComponentGraph::build(&t).unwrap();
    let reqs: Vec<_> = reqs
        .into_iter()
        .map(|(id, source, destination)| LightpathRequest {
            id,
            source,
            destination,
        })
        .collect();
    let lps = route_spff(&g, &reqs, 4).lightpaths;
    (g, lps)
}

/// Components every failure set consistent with the readings must contain.
fn implied_failures(
    g: &ComponentGraph,
    lps: &[rinn::provisioning::Lightpath],
    snap: &rinn::monitoring::MonitorSnapshot,
) -> Option<BTreeSet<u32>> {
    let all: Vec<u32> = lps
        .iter()
        .flat_map(|lp| lp.components.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // (component, observed contribution, nominal contribution)
    let mut obs = Vec::new();
    for (l, lp) in lps.iter().enumerate() {
        let x = &snap.readings[l];
        let tx = g.component(lp.components[0]);
        obs.push((tx.id, x[0], tx.nominal));
        for i in 1..lp.len() - 1 {
            let c = g.component(lp.components[i]);
            obs.push((c.id, x[i] - x[i - 1], c.nominal_delta_db()));
        }
    }
    let mut implied: Option<BTreeSet<u32>> = None;
    for mask in 0u32..(1 << all.len()) {
        let f: BTreeSet<u32> = (0..all.len())
            .filter(|b| mask >> b & 1 == 1)
            .map(|b| all[b])
            .collect();
        let fits = obs.iter().all(|&(c, seen, nominal)| {
            if f.contains(&c) {
                seen <= nominal + 1e-9
            } else {
                (seen - nominal).abs() <= 1e-9
            }
        });
        let explains_loss = lps
            .iter()
            .enumerate()
            .all(|(l, lp)| snap.flag(l) || lp.components.iter().any(|c| f.contains(c)));
        if fits && explains_loss {
            implied = Some(match implied {
                None => f,
                Some(acc) => acc.intersection(&f).copied().collect(),
            });
        }
    }
    implied
}

fn criterion_3() -> Outcome {
    let mut rng = seed::rng(ROOT, "oracle");
    let mut mismatches = 0;
    let mut max_components = 0;
    for k in 0..500 {
        let (g, lps) = toy(k % 2, rng.gen());
        let all: BTreeSet<u32> = lps
            .iter()
            .flat_map(|lp| lp.components.iter().copied())
            .collect();
        max_components = max_components.max(all.len());
        let dep = Deployment::full(g.slots.len() as u32);
        let s = sample_failure_scenario(&g, &lps, &[1, 2, 3], None, &mut rng).unwrap();
        let snap = snapshot(&g, &lps, &dep, &s, &PowerModel::noiseless(), &mut rng);
        let th = nominal_thresholds(&g, &lps, &dep, &PowerModel::noiseless());
        let faulty = reason(&g, &lps, &snap, &th).faulty;
        if implied_failures(&g, &lps, &snap).as_ref() != Some(&faulty) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && max_components <= 12,
        format!("500 scenarios on <= {max_components} components, {mismatches} mismatches"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(ROOT, "gradients");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let input = rng.gen_range(1..=12);
        let hidden = rng.gen_range(1..=16);
        let mut m = Mlp::new(input, hidden, &mut rng);
        for p in &mut m.params {
            *p *= 3.0;
        }
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = rng.gen_range(0..2) as f64;
        let (_, grad) = m.loss_and_grad(&x, y).unwrap();
        let h = 1e-5;
        for k in 0..m.params.len() {
            let mut up = m.clone();
            up.params[k] += h;
            let mut down = m.clone();
            down.params[k] -= h;
            let numeric = (mlp::bce(up.logit(&x).unwrap(), y)
                - mlp::bce(down.logit(&x).unwrap(), y))
                / (2.0 * h);
            let scale = grad[k].abs().max(numeric.abs());
            if scale > 1e-7 {
                worst = worst.max((grad[k] - numeric).abs() / scale);
            }
        }
    }
    outcome(
        worst < GRAD_REL_TOL,
        format!("100 triples, worst relative error {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let d = Deployment::uniform(9, 3).unwrap();
    let got: Vec<u32> = d.deployed.iter().map(|s| s + 1).collect();
    outcome(got == vec![3, 6, 9], format!("deployed locations {got:?}"))
}

struct Network {
    train: Dataset,
    graph: ComponentGraph,
}

fn dataset(
    topo: &Topology,
    label: &str,
    opm: f64,
    n_f: &[usize],
    samples: usize,
    jitter: f64,
) -> Dataset {
    generate_dataset(
        topo,
        &GeneratorConfig {
            lp_count: 100,
            samples,
            n_f_set: n_f.to_vec(),
            opm_fraction: opm,
            power_model: PowerModel {
                jitter_sigma_db: jitter,
                ..PowerModel::default()
            },
            seed: seed::derive(ROOT, label),
            ..GeneratorConfig::default()
        },
    )
    .unwrap()
}

fn train_both(net: &Network) -> (ModelFile, TrainReport, ModelFile, TrainReport) {
    let th = calibrate(&net.train, &net.graph, DEFAULT_WINDOW);
    let ctx = Context::new(&net.graph, &net.train.lightpaths, &net.train.pre, &th);
    let cfg = mlp::TrainConfig {
        seed: seed::derive(ROOT, "train"),
        ..Default::default()
    };
    let (ann, ann_r) = train_model(Engine::Ann, &ctx, &net.train, &cfg).unwrap();
    let (rinn, rinn_r) = train_model(Engine::Rinn, &ctx, &net.train, &cfg).unwrap();
    (ann, ann_r, rinn, rinn_r)
}

fn accuracies(test: &Dataset, g: &ComponentGraph, ann: &ModelFile, rinn: &ModelFile) -> [f64; 3] {
    let th = calibrate(test, g, DEFAULT_WINDOW);
    let ctx = Context::new(g, &test.lightpaths, &test.pre, &th);
    let mut out = [0.0; 3];
    for (k, e) in Engine::ALL.into_iter().enumerate() {
        let model = match e {
            Engine::Rules => None,
            Engine::Ann => Some(ann),
            Engine::Rinn => Some(rinn),
        };
        let r = evaluate(e, &ctx, &test.samples, model, seed::derive(ROOT, "pick"));
        out[k] = score_results(&r, &test.samples).complete;
    }
    out
}

/// Criteria 6 and 9 share the 100% training run.
fn criteria_6_and_9() -> (Outcome, Outcome) {
    let start = Instant::now();
    let topo = japan();
    let train = dataset(&topo, "full-train", 1.0, &[1, 2, 3], 1000, 0.0);
    let graph = train.graph().unwrap();
    let net = Network { train, graph };
    let (ann, ann_r, rinn, _) = train_both(&net);
    let test = dataset(&topo, "full-test", 1.0, &[1], 1000, 0.0);
    let [rules_acc, ann_acc, rinn_acc] = accuracies(&test, &net.graph, &ann, &rinn);
    let took = start.elapsed();
    let c6 = outcome(
        rules_acc == 1.0 && ann_acc == 1.0 && rinn_acc == 1.0 && took < ENDPOINT_LIMIT,
        format!(
            "complete rules {:.1}% ann {:.1}% rinn {:.1}%, {:.0}s",
            100.0 * rules_acc,
            100.0 * ann_acc,
            100.0 * rinn_acc,
            took.as_secs_f64()
        ),
    );
    let early = ann_r.mean_loss(1, 10);
    let late = ann_r.mean_loss(90, 100);
    let c9 = outcome(
        late < 0.5 * early,
        format!("mean loss epochs 1-10 {early:.4}, 90-100 {late:.4}"),
    );
    (c6, c9)
}

fn criterion_7() -> Outcome {
    let topo = japan();
    let mut ratios = Vec::new();
    for pct in [20u32, 40, 60, 80, 100] {
        let d = dataset(
            &topo,
            &format!("suspects-{pct}"),
            pct as f64 / 100.0,
            &[1],
            1000,
            physical::DEFAULT_JITTER_DB,
        );
        let g = d.graph().unwrap();
        let th = calibrate(&d, &g, DEFAULT_WINDOW);
        let ctx = Context::new(&g, &d.lightpaths, &d.pre, &th);
        ratios.push(mean_suspect_ratio(&ctx, &d.samples));
    }
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let text: Vec<String> = ratios
        .iter()
        .map(|r| format!("{:.2}%", 100.0 * r))
        .collect();
    outcome(
        decreasing && *ratios.last().unwrap() == 0.0,
        format!("suspect ratio at 20..100%: {}", text.join(" ")),
    )
}

/// Criteria 8 and 10 share the 60% training run.
fn criteria_8_and_10() -> (Outcome, Outcome) {
    let start = Instant::now();
    let topo = japan();
    let jitter = physical::DEFAULT_JITTER_DB;
    let train = dataset(&topo, "mid-train", 0.6, &[1, 2, 3], 1000, jitter);
    let graph = train.graph().unwrap();
    let net = Network { train, graph };
    let (ann, _, rinn, _) = train_both(&net);
    let test = dataset(&topo, "mid-test", 0.6, &[1, 2, 3], 1000, jitter);
    let [rules_acc, ann_acc, rinn_acc] = accuracies(&test, &net.graph, &ann, &rinn);
    let took = start.elapsed();
    let c8 = outcome(
        rinn_acc - ann_acc > ORDER_MARGIN
            && rinn_acc - rules_acc > ORDER_MARGIN
            && took < ORDERING_LIMIT,
        format!(
            "complete rules {:.1}% ann {:.1}% rinn {:.1}%, {:.0}s",
            100.0 * rules_acc,
            100.0 * ann_acc,
            100.0 * rinn_acc,
            took.as_secs_f64()
        ),
    );

    let th = calibrate(&test, &net.graph, DEFAULT_WINDOW);
    let ctx = Context::new(&net.graph, &test.lightpaths, &test.pre, &th);
    let timed = &test.samples[..200];
    let rinn_t = measure_inference(Engine::Rinn, &ctx, timed, Some(&rinn));
    let rules_t = measure_inference(Engine::Rules, &ctx, timed, None);
    let c10 = outcome(
        rinn_t < INFERENCE_LIMIT_S && rules_t <= rinn_t,
        format!(
            "mean per sample rinn {:.3} ms, rules {:.3} ms",
            rinn_t * 1e3,
            rules_t * 1e3
        ),
    );
    (c8, c10)
}

fn main() {
    // let the test harness's filter arguments through without acting on them
    let list_only = std::env::args().any(|a| a == "--list");
    if list_only {
        println!("acceptance: test");
        return;
    }
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!(
            "criterion {n:>2} {:<4} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    record(1, "counting identities", criterion_1());
    record(2, "power ledger", criterion_2());
    record(3, "rules vs exhaustive oracle", criterion_3());
    record(4, "gradient check", criterion_4());
    record(5, "uniform deployment", criterion_5());
    let (c6, c9) = criteria_6_and_9();
    record(6, "full-monitoring endpoint", c6);
    record(7, "suspect-ratio trend", criterion_7());
    let (c8, c10) = criteria_8_and_10();
    record(8, "ordering at 60% monitoring", c8);
    record(9, "loss convergence", c9);
    record(10, "inference time", c10);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" {failed:?}")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
