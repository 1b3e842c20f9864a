use std::collections::{BTreeMap, BTreeSet};

use heng_core::network::{NetworkTopology, Node, NodeKind, Pipe};
use heng_core::nn::{Activation, Mlp, Tape};
use heng_core::transport::{
    mix_at_node, simulate_network, step_upwind, BoundarySignal, FractionField, InitialField, InitialProfile, Scenario,
    VelocitySchedule,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected acyclic network: a tree rooted at a source, extra forward
/// pipes, extra sources and one injection station feeding interior nodes.
#[derive(Debug, Clone)]
struct NetSpec {
    parents: Vec<usize>,
    extra: Vec<(usize, usize)>,
    feeds: Vec<usize>,
}

fn net_spec() -> impl Strategy<Value = NetSpec> {
    (2usize..9).prop_flat_map(|n| {
        let parents = (1..n).map(|i| 0..i).collect::<Vec<_>>();
        let extra = prop::collection::vec((0..n, 0..n), 0..4);
        let feeds = prop::collection::vec(1..n, 0..3);
        (parents, extra, feeds).prop_map(|(parents, extra, feeds)| NetSpec {
            parents,
            extra: extra.into_iter().filter(|(a, b)| a < b).collect(),
            feeds,
        })
    })
}

fn build(spec: &NetSpec) -> NetworkTopology {
    let n = spec.parents.len() + 1;
    let mut pipes = Vec::new();
    let mut add = |from: String, to: String, i: usize| {
        pipes.push(Pipe::new(format!("p{i}"), from, to, 100.0 + 37.0 * i as f64, 0.05 + 0.01 * i as f64));
    };
    let mut k = 0;
    for (i, &p) in spec.parents.iter().enumerate() {
        add(format!("n{p}"), format!("n{}", i + 1), k);
        k += 1;
    }
    for &(a, b) in &spec.extra {
        add(format!("n{a}"), format!("n{b}"), k);
        k += 1;
    }
    let mut nodes: Vec<Node> = Vec::new();
    for (j, &target) in spec.feeds.iter().enumerate() {
        let (id, kind) = if j == 0 {
            ("h".to_string(), NodeKind::HydrogenInjection)
        } else {
            (format!("s{j}"), NodeKind::Source)
        };
        add(id.clone(), format!("n{target}"), k);
        k += 1;
        nodes.push(Node::controlled(id.clone(), kind, format!("sig_{id}")));
    }
    for i in 0..n {
        let id = format!("n{i}");
        let has_out = pipes.iter().any(|p| p.from_node == id);
        nodes.push(match (i, has_out) {
            (0, _) => Node::controlled(id, NodeKind::Source, "sig_n0"),
            (_, true) => Node::new(id, NodeKind::Junction),
            (_, false) => Node::new(id, NodeKind::Load),
        });
    }
    NetworkTopology::new(nodes, pipes)
}

fn random_scenario(net: &NetworkTopology, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = 400.0;
    let cells = 8;
    let mut velocity_schedules = Vec::new();
    let mut vmax_over_dx: f64 = 0.0;
    for p in &net.pipes {
        let v: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..3.0)).collect();
        vmax_over_dx = vmax_over_dx.max(v[0].max(v[1]) / (p.length_m / cells as f64));
        velocity_schedules.push(VelocitySchedule {
            pipe_id: p.id.clone(),
            breakpoints: vec![0.0, rng.gen_range(1.0..horizon)],
            velocities: v,
        });
    }
    let boundary_signals = net
        .nodes
        .iter()
        .filter_map(|n| n.boundary_signal_id.clone())
        .map(|id| BoundarySignal {
            signal_id: id,
            breakpoints: vec![0.0, rng.gen_range(1.0..horizon)],
            fractions: vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
        })
        .collect();
    let initial_fields = net
        .pipes
        .iter()
        .map(|p| InitialField {
            pipe_id: p.id.clone(),
            cells,
            profile: InitialProfile::Values((0..cells).map(|_| rng.gen_range(0.0..1.0)).collect()),
        })
        .collect();
    Scenario {
        velocity_schedules,
        boundary_signals,
        initial_fields,
        horizon_s: horizon,
        dt_s: 0.95 / vmax_over_dx.max(1e-3),
        snapshot_stride: 3,
        reference_density: 1.0,
    }
}

fn input_range(sc: &Scenario) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for w in sc.boundary_signals.iter().flat_map(|s| s.fractions.iter()).chain(
        sc.initial_fields.iter().flat_map(|f| match &f.profile {
            InitialProfile::Values(v) => v.iter(),
            _ => unreachable!(),
        }),
    ) {
        lo = lo.min(*w);
        hi = hi.max(*w);
    }
    (lo, hi)
}

/// Raises every boundary and initial value by a random non-negative amount.
fn raised(sc: &Scenario, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut up = sc.clone();
    for s in &mut up.boundary_signals {
        s.fractions.iter_mut().for_each(|w| *w = (*w + rng.gen_range(0.0..0.3)).min(1.0));
    }
    for f in &mut up.initial_fields {
        if let InitialProfile::Values(v) = &mut f.profile {
            v.iter_mut().for_each(|w| *w = (*w + rng.gen_range(0.0..0.3)).min(1.0));
        }
    }
    up
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_is_symmetric(spec in net_spec()) {
        let net = build(&spec);
        prop_assert!(net.validate().is_valid(), "{}", net.validate());
        let adj = net.line_graph_adjacency().unwrap();
        for (p, nbrs) in &adj {
            prop_assert!(!nbrs.contains(p));
            for q in nbrs {
                prop_assert!(adj[q].contains(p), "{} ~ {} but not back", p, q);
            }
        }
    }

    #[test]
    fn relabeling_gives_isomorphic_adjacency(spec in net_spec(), salt in 0u32..1000, shuffle_seed in any::<u64>()) {
        let net = build(&spec);
        let node_name = |id: &str| format!("v{salt}_{id}");
        let pipe_name = |id: &str| format!("e{salt}_{}", id.chars().rev().collect::<String>());
        let mut pipes: Vec<Pipe> = net
            .pipes
            .iter()
            .map(|p| Pipe::new(pipe_name(&p.id), node_name(&p.from_node), node_name(&p.to_node), p.length_m, p.area_m2))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        for i in (1..pipes.len()).rev() {
            pipes.swap(i, rng.gen_range(0..=i));
        }
        let nodes = net
            .nodes
            .iter()
            .rev()
            .map(|n| Node { id: node_name(&n.id), ..n.clone() })
            .collect();
        let twin = NetworkTopology::new(nodes, pipes);

        let adj = net.line_graph_adjacency().unwrap();
        let mapped: BTreeMap<String, BTreeSet<String>> = adj
            .iter()
            .map(|(p, nbrs)| (pipe_name(p), nbrs.iter().map(|q| pipe_name(q)).collect()))
            .collect();
        prop_assert_eq!(mapped, twin.line_graph_adjacency().unwrap());
    }

    #[test]
    fn upwind_step_is_bounded_and_monotone(
        values in prop::collection::vec(0.0f64..=1.0, 2..40),
        bumps in prop::collection::vec(0.0f64..0.5, 40),
        inlet in 0.0f64..=1.0,
        inlet_bump in 0.0f64..0.5,
        courant in 0.0f64..=1.0,
    ) {
        let n = values.len();
        let field = FractionField::new("p", n as f64 * 10.0, values.clone());
        let next = step_upwind(&field, courant * 10.0, 1.0, inlet).unwrap();
        let lo = values.iter().copied().fold(inlet, f64::min);
        let hi = values.iter().copied().fold(inlet, f64::max);
        for w in &next.values {
            prop_assert!(*w >= lo && *w <= hi);
        }
        let raised: Vec<f64> = values.iter().zip(&bumps).map(|(w, b)| (w + b).min(1.0)).collect();
        let up = step_upwind(&FractionField::new("p", n as f64 * 10.0, raised), courant * 10.0, 1.0, (inlet + inlet_bump).min(1.0)).unwrap();
        for (a, b) in next.values.iter().zip(&up.values) {
            prop_assert!(b >= a, "raised input lowered a cell: {} -> {}", a, b);
        }
    }

    #[test]
    fn mixing_conserves_hydrogen(
        inflows in prop::collection::vec((1e-3f64..1e3, 0.0f64..=1.0), 1..6),
        injection in prop::option::of((1e-3f64..1e3, 0.0f64..=1.0)),
    ) {
        let out = mix_at_node(&inflows, injection).unwrap();
        let streams: Vec<(f64, f64)> = inflows.iter().copied().chain(injection).collect();
        let mass: f64 = streams.iter().map(|s| s.0).sum();
        let hydrogen: f64 = streams.iter().map(|s| s.0 * s.1).sum();
        prop_assert!((mass * out - hydrogen).abs() <= 1e-12 * hydrogen.max(mass));
        let lo = streams.iter().map(|s| s.1).fold(1.0, f64::min);
        let hi = streams.iter().map(|s| s.1).fold(0.0, f64::max);
        prop_assert!(out >= lo && out <= hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn network_simulation_is_bounded_monotone_and_deterministic(spec in net_spec(), seed in any::<u64>()) {
        let net = build(&spec);
        let sc = random_scenario(&net, seed);
        let result = simulate_network(&net, &sc).unwrap();
        prop_assert_eq!(&result, &simulate_network(&net, &sc).unwrap());

        let (lo, hi) = input_range(&sc);
        for snap in &result.snapshots {
            for f in &snap.fields {
                for w in &f.values {
                    prop_assert!(*w >= lo && *w <= hi, "{} outside [{}, {}]", w, lo, hi);
                }
            }
        }

        let up = simulate_network(&net, &raised(&sc, seed ^ 0x5eed)).unwrap();
        for (a, b) in result.snapshots.iter().zip(&up.snapshots) {
            for (fa, fb) in a.fields.iter().zip(&b.fields) {
                for (wa, wb) in fa.values.iter().zip(&fb.values) {
                    prop_assert!(wb >= wa, "pipe {} at t = {}: {} -> {}", fa.pipe_id, a.time_s, wa, wb);
                }
            }
        }
    }

    #[test]
    fn tape_forward_matches_plain_and_finite_differences(
        dims in prop::collection::vec(1usize..6, 2..5),
        seed in any::<u64>(),
    ) {
        let mlp = Mlp::new(&dims, Activation::Tanh, Activation::Identity, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; mlp.end()];
        mlp.init(&mut params, &mut rng);
        // non-zero biases so every parameter is exercised
        params.iter_mut().for_each(|p| *p += rng.gen_range(-0.3..0.3));
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seed_vec: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let plain = mlp.forward(&params, &input).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        let out = mlp.forward_tape(&params, &mut tape, x).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&plain), bits(tape.value(out)));

        let grads = tape.backward(&params, out, &seed_vec).unwrap();
        let objective = |p: &[f64]| -> f64 {
            mlp.forward(p, &input).unwrap().iter().zip(&seed_vec).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
            prop_assert!(err < 1e-4, "parameter {}: analytic {} vs fd {}", i, grads[i], fd);
        }
    }
}
