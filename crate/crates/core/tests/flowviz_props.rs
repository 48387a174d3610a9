use std::f64::consts::PI;

use angioforge_core::flowviz::{
    assign_flow, detect_stagnation, distance_transform, skeletonize, CenterlineEdge, CenterlineGraph,
    CenterlineNode, CenterlineSample, FlowField, NodeKind, SplitRule, StagnationOptions,
};
use angioforge_core::image_ops::{connected_components, euler_number, Connectivity};
use angioforge_core::BinaryMask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Union of random discs and bars, with a few random holes punched out.
fn blob_mask(seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (48u32, 40u32);
    let discs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..6))
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(2.0..9.0),
            )
        })
        .collect();
    let holes: Vec<(f64, f64, f64)> = (0..rng.random_range(0..3))
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(1.0..3.0),
            )
        })
        .collect();
    let bar_y = rng.random_range(5..35);
    BinaryMask::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let inside = |&(cx, cy, r): &(f64, f64, f64)| (x - cx).hypot(y - cy) <= r;
        let bar = (y - bar_y as f64).abs() <= 1.5 && (8.0..40.0).contains(&x);
        (discs.iter().any(inside) || bar) && !holes.iter().any(inside)
    })
}

fn brute_edt(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dimensions();
    let bg: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !mask.get(x, y))
        .map(|(x, y)| (x as f64, y as f64))
        .collect();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            if !mask.get(x, y) {
                0.0
            } else {
                bg.iter()
                    .map(|&(bx, by)| (bx - x as f64).hypot(by - y as f64))
                    .fold(f64::INFINITY, f64::min)
            }
        })
        .collect()
}

struct RandomTree {
    graph: CenterlineGraph,
    inlets: Vec<usize>,
    outlets: Vec<usize>,
}

/// Random tree: node i > 0 hangs off a random earlier node; every edge gets
/// 3..12 samples with random radii. Inlets are one or two random leaves,
/// the other leaves are outlets.
fn random_tree(seed: u64) -> RandomTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..30usize);
    let mut nodes = Vec::with_capacity(n);
    let mut edges = Vec::new();
    for i in 0..n {
        nodes.push(CenterlineNode {
            x: rng.random_range(0.0..500.0),
            y: rng.random_range(0.0..500.0),
            radius: 1.0,
            kind: NodeKind::Endpoint,
        });
        if i > 0 {
            let parent = rng.random_range(0..i);
            let (a, b) = if rng.random_bool(0.5) { (parent, i) } else { (i, parent) };
            let k = rng.random_range(3..12);
            let samples = (0..k)
                .map(|_| CenterlineSample {
                    x: rng.random_range(0.0..500.0),
                    y: rng.random_range(0.0..500.0),
                    radius: rng.random_range(0.5..12.0),
                    arc: 0.0,
                })
                .collect();
            edges.push(CenterlineEdge { a, b, samples });
        }
    }
    let graph = CenterlineGraph::new(512, 512, nodes, edges);
    let mut leaves = graph.endpoints();
    let n_in = if leaves.len() > 2 && rng.random_bool(0.5) { 2 } else { 1 };
    for i in (1..leaves.len()).rev() {
        leaves.swap(i, rng.random_range(0..=i));
    }
    let outlets = leaves.split_off(n_in);
    RandomTree {
        graph,
        inlets: leaves,
        outlets,
    }
}

/// Net flow leaving node set `s`.
fn flow_out_of(field: &FlowField, s: &[bool]) -> f64 {
    field
        .edges
        .iter()
        .map(|e| match (s[e.from], s[e.to]) {
            (true, false) => e.q,
            (false, true) => -e.q,
            _ => 0.0,
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thinning_preserves_topology(seed in any::<u64>()) {
        let mask = blob_mask(seed);
        prop_assume!(!mask.is_empty());
        let skel = skeletonize(&mask).unwrap();
        prop_assert_eq!(euler_number(&skel), euler_number(&mask));
        prop_assert_eq!(
            connected_components(&skel, true, Connectivity::Eight).len(),
            connected_components(&mask, true, Connectivity::Eight).len()
        );
        prop_assert!(skel.bits().iter().zip(mask.bits()).all(|(s, m)| !s || *m));
    }

    #[test]
    fn distance_transform_is_exact(seed in any::<u64>()) {
        let mask = blob_mask(seed);
        prop_assume!(!mask.is_empty() && mask.area() < 48 * 40);
        let dt = distance_transform(&mask).unwrap();
        for (a, b) in dt.values().iter().zip(brute_edt(&mask)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_is_conserved_on_random_trees(seed in any::<u64>(), murray in any::<bool>()) {
        let t = random_tree(seed);
        let rule = if murray { SplitRule::Murray } else { SplitRule::Area };
        let f = assign_flow(&t.graph, &t.inlets, &t.outlets, rule).unwrap();
        let n = t.graph.nodes.len();
        for node in 0..n {
            let inflow: f64 = f.edges.iter().filter(|e| e.to == node).map(|e| e.q).sum();
            let outflow: f64 = f.edges.iter().filter(|e| e.from == node).map(|e| e.q).sum();
            if t.inlets.contains(&node) {
                prop_assert!((outflow - inflow - 1.0 / t.inlets.len() as f64).abs() <= 1e-9);
            } else if t.outlets.contains(&node) {
                prop_assert!(outflow == 0.0);
            } else {
                prop_assert!((inflow - outflow).abs() <= 1e-9 * inflow.max(outflow).max(1e-300));
            }
        }
        // Random cuts: any node set holding every inlet and no outlet.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..8 {
            let s: Vec<bool> = (0..n)
                .map(|i| t.inlets.contains(&i) || (!t.outlets.contains(&i) && rng.random_bool(0.5)))
                .collect();
            prop_assert!((flow_out_of(&f, &s) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn velocity_law_and_monotonicity(seed in any::<u64>()) {
        let t = random_tree(seed);
        let f = assign_flow(&t.graph, &t.inlets, &t.outlets, SplitRule::Area).unwrap();
        for e in &f.edges {
            for s in &e.samples {
                let q = s.v * PI * s.radius * s.radius;
                prop_assert!((q - e.q).abs() <= 1e-12 * e.q.max(f64::MIN_POSITIVE));
            }
            if e.q > 0.0 {
                for a in &e.samples {
                    for b in &e.samples {
                        if a.radius < b.radius {
                            prop_assert!(a.v > b.v);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn stagnation_is_scale_free(seed in any::<u64>(), k in -3i32..=3) {
        let t = random_tree(seed);
        let scale = 2f64.powi(k);
        let mut scaled = t.graph.clone();
        for e in &mut scaled.edges {
            for s in &mut e.samples {
                s.radius *= scale;
            }
        }
        let opts = StagnationOptions::default();
        let a = detect_stagnation(&assign_flow(&t.graph, &t.inlets, &t.outlets, SplitRule::Area).unwrap(), &opts).unwrap();
        let b = detect_stagnation(&assign_flow(&scaled, &t.inlets, &t.outlets, SplitRule::Area).unwrap(), &opts).unwrap();
        let spans = |r: &angioforge_core::flowviz::StagnationReport| {
            let mut v: Vec<(usize, usize, usize)> = r
                .zones
                .iter()
                .flat_map(|z| z.segments.iter().map(|s| (s.edge, s.start_index, s.end_index)))
                .collect();
            v.sort();
            v
        };
        prop_assert_eq!(spans(&a), spans(&b));
        for z in &a.zones {
            prop_assert!(z.mean_velocity < a.threshold_used);
        }
    }
}
