use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::graph::{CenterlineGraph, NodeKind};
use super::FlowVizError;

/// How a junction divides its inflow among downstream branches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Proportional to child cross-section, `r^2`.
    #[default]
    Area,
    /// Murray's law, `r^3`.
    Murray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub arc: f64,
    pub q: f64,
    pub v: f64,
}

/// One graph edge oriented along its net flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFlow {
    pub edge: usize,
    pub from: usize,
    pub to: usize,
    pub q: f64,
    pub samples: Vec<FlowSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub inlets: Vec<usize>,
    pub outlets: Vec<usize>,
    pub rule: SplitRule,
    /// Node positions, indexed like the source graph.
    pub nodes: Vec<[f64; 2]>,
    pub edges: Vec<EdgeFlow>,
}

impl FlowField {
    pub fn samples(&self) -> impl Iterator<Item = &FlowSample> {
        self.edges.iter().flat_map(|e| e.samples.iter())
    }

    pub fn velocity_range(&self) -> Option<(f64, f64)> {
        self.samples().fold(None, |acc, s| match acc {
            None => Some((s.v, s.v)),
            Some((lo, hi)) => Some((lo.min(s.v), hi.max(s.v))),
        })
    }
}

/// Mass-conserving flow over the centerline graph.
///
/// Total inflow is 1, shared equally by the inlets. Each inlet's share is
/// routed along a breadth-first spanning tree rooted at that inlet: at every
/// node the flow divides among child branches that lead to an outlet, in
/// proportion to the branch mean radius squared (or cubed under
/// [`SplitRule::Murray`]). Per-inlet flows are summed per edge and each edge
/// is oriented along its net flow. Edges off every spanning tree carry no
/// flow. Velocity at each sample is `Q / (pi r^2)`.
pub fn assign_flow(
    graph: &CenterlineGraph,
    inlets: &[usize],
    outlets: &[usize],
    rule: SplitRule,
) -> Result<FlowField, FlowVizError> {
    if inlets.is_empty() {
        return Err(FlowVizError::NoInlet);
    }
    if outlets.is_empty() {
        return Err(FlowVizError::NoOutlet);
    }
    let n = graph.nodes.len();
    let deg = graph.degrees();
    let mut role = vec![0u8; n];
    for (&t, tag) in inlets.iter().map(|t| (t, 1u8)).chain(outlets.iter().map(|t| (t, 2u8))) {
        if t >= n || deg[t] != 1 || role[t] != 0 {
            return Err(FlowVizError::InvalidTerminal(t));
        }
        role[t] = tag;
    }

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in graph.edges.iter().enumerate() {
        adjacency[e.a].push(i);
        adjacency[e.b].push(i);
    }
    let weight = |edge: usize| {
        let r = graph.edges[edge].mean_radius();
        match rule {
            SplitRule::Area => r * r,
            SplitRule::Murray => r * r * r,
        }
    };

    let share = 1.0 / inlets.len() as f64;
    let mut net = vec![0.0f64; graph.edges.len()];
    let mut reached = vec![false; n];
    for &inlet in inlets {
        let mut parent_edge = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        seen[inlet] = true;
        let mut queue = VecDeque::from([inlet]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &e in &adjacency[u] {
                let v = graph.edges[e].other(u);
                if !seen[v] {
                    seen[v] = true;
                    parent_edge[v] = e;
                    queue.push_back(v);
                }
            }
        }
        let children = |u: usize| -> Vec<(usize, usize)> {
            adjacency[u]
                .iter()
                .map(|&e| (e, graph.edges[e].other(u)))
                .filter(|&(e, v)| parent_edge[v] == e && v != inlet)
                .collect()
        };

        let mut drains = vec![false; n];
        for &u in order.iter().rev() {
            drains[u] = role[u] == 2 || children(u).iter().any(|&(_, v)| drains[v]);
        }
        if !drains[inlet] {
            return Err(FlowVizError::StrandedInlet(inlet));
        }
        for &u in &order {
            if role[u] == 2 {
                reached[u] = true;
            }
        }

        let mut inflow = vec![0.0f64; n];
        inflow[inlet] = share;
        for &u in &order {
            let live: Vec<(usize, usize)> = children(u).into_iter().filter(|&(_, v)| drains[v]).collect();
            if live.is_empty() {
                continue;
            }
            let total: f64 = live.iter().map(|&(e, _)| weight(e)).sum();
            for &(e, v) in &live {
                let q = inflow[u] * weight(e) / total;
                inflow[v] += q;
                net[e] += if graph.edges[e].a == u { q } else { -q };
            }
        }
    }
    if let Some(&lost) = outlets.iter().find(|&&o| !reached[o]) {
        return Err(FlowVizError::UnreachableOutlet(lost));
    }

    let edges = graph
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let forward = net[i] >= 0.0;
            let (from, to) = if forward { (e.a, e.b) } else { (e.b, e.a) };
            let q = net[i].abs();
            let mut pts: Vec<(f64, f64, f64)> = e.samples.iter().map(|s| (s.x, s.y, s.radius)).collect();
            if !forward {
                pts.reverse();
            }
            let (mut px, mut py) = (graph.nodes[from].x, graph.nodes[from].y);
            let mut arc = 0.0;
            let samples = pts
                .into_iter()
                .map(|(x, y, radius)| {
                    arc += (x - px).hypot(y - py);
                    px = x;
                    py = y;
                    FlowSample {
                        x,
                        y,
                        radius,
                        arc,
                        q,
                        v: q / (PI * radius * radius),
                    }
                })
                .collect();
            EdgeFlow {
                edge: i,
                from,
                to,
                q,
                samples,
            }
        })
        .collect();

    Ok(FlowField {
        width: graph.width,
        height: graph.height,
        inlets: inlets.to_vec(),
        outlets: outlets.to_vec(),
        rule,
        nodes: graph.nodes.iter().map(|n| [n.x, n.y]).collect(),
        edges,
    })
}

/// Default terminal choice for a frontal view of a cavopulmonary connection:
/// the lowest endpoint (largest y, then smallest x) is an inlet, and with
/// three or more endpoints so is the highest one (smallest y, then largest
/// x). Every other endpoint is an outlet.
pub fn default_terminals(graph: &CenterlineGraph) -> Result<(Vec<usize>, Vec<usize>), FlowVizError> {
    let mut ends: Vec<usize> = graph
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::Endpoint)
        .map(|(i, _)| i)
        .collect();
    match ends.len() {
        0 => return Err(FlowVizError::NoInlet),
        1 => return Err(FlowVizError::NoOutlet),
        _ => {}
    }
    ends.sort_by(|&i, &j| {
        let (a, b) = (&graph.nodes[i], &graph.nodes[j]);
        b.y.total_cmp(&a.y).then(a.x.total_cmp(&b.x)).then(i.cmp(&j))
    });
    let mut inlets = vec![ends.remove(0)];
    if ends.len() >= 2 {
        inlets.push(ends.pop().expect("non-empty"));
    }
    Ok((inlets, ends))
}

/// Snaps each pixel position to the nearest endpoint node.
pub fn terminals_near(graph: &CenterlineGraph, points: &[[f64; 2]]) -> Vec<usize> {
    let ends = graph.endpoints();
    points
        .iter()
        .filter_map(|p| {
            ends.iter().copied().min_by(|&i, &j| {
                let d = |k: usize| (graph.nodes[k].x - p[0]).hypot(graph.nodes[k].y - p[1]);
                d(i).total_cmp(&d(j)).then(i.cmp(&j))
            })
        })
        .collect()
}
