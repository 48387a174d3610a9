use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::raster::BinaryMask;

use super::distance::DistanceMap;
use super::skeleton::{neighbours, RING};
use super::FlowVizError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// Degree 0 or 1.
    Endpoint,
    Internal,
    Junction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineNode {
    pub x: f64,
    pub y: f64,
    /// Pixels.
    pub radius: f64,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineSample {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Arc length from the edge's first node.
    pub arc: f64,
}

/// Polyline from node `a` to node `b`. `samples` excludes the two node
/// positions themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineEdge {
    pub a: usize,
    pub b: usize,
    pub samples: Vec<CenterlineSample>,
}

impl CenterlineEdge {
    pub fn mean_radius(&self) -> f64 {
        self.samples.iter().map(|s| s.radius).sum::<f64>() / self.samples.len() as f64
    }

    pub fn other(&self, node: usize) -> usize {
        if self.a == node {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineGraph {
    pub width: u32,
    pub height: u32,
    pub nodes: Vec<CenterlineNode>,
    pub edges: Vec<CenterlineEdge>,
}

impl CenterlineGraph {
    /// Assembles a graph, recomputing node kinds from degrees and sample arc
    /// lengths from geometry. Every edge needs at least one sample.
    pub fn new(width: u32, height: u32, nodes: Vec<CenterlineNode>, edges: Vec<CenterlineEdge>) -> Self {
        let mut g = CenterlineGraph {
            width,
            height,
            nodes,
            edges,
        };
        g.refresh();
        g
    }

    fn refresh(&mut self) {
        let deg = self.degrees();
        for (node, d) in self.nodes.iter_mut().zip(deg) {
            node.kind = match d {
                0 | 1 => NodeKind::Endpoint,
                2 => NodeKind::Internal,
                _ => NodeKind::Junction,
            };
        }
        for e in &mut self.edges {
            let (mut px, mut py) = (self.nodes[e.a].x, self.nodes[e.a].y);
            let mut arc = 0.0;
            for s in &mut e.samples {
                arc += (s.x - px).hypot(s.y - py);
                s.arc = arc;
                px = s.x;
                py = s.y;
            }
        }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.a] += 1;
            deg[e.b] += 1;
        }
        deg
    }

    /// Edge ids touching `node`, in edge order.
    pub fn incident(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| self.edges[i].a == node || self.edges[i].b == node)
            .collect()
    }

    pub fn endpoints(&self) -> Vec<usize> {
        self.nodes_of(NodeKind::Endpoint)
    }

    pub fn junctions(&self) -> Vec<usize> {
        self.nodes_of(NodeKind::Junction)
    }

    fn nodes_of(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == kind).collect()
    }

    /// Node-to-node polyline length.
    pub fn edge_length(&self, edge: usize) -> f64 {
        let e = &self.edges[edge];
        let last = e.samples.last().expect("edges carry samples");
        last.arc + (self.nodes[e.b].x - last.x).hypot(self.nodes[e.b].y - last.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    /// Spurs (endpoint-to-junction edges) shorter than this are pruned.
    pub spur_min: f64,
    /// Spurs shorter than this multiple of their junction radius are also
    /// pruned.
    pub spur_radius_factor: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            spur_min: 5.0,
            spur_radius_factor: 1.0,
        }
    }
}

type Pixel = (u32, u32);

/// Turns a 1-pixel-wide skeleton into a centerline graph.
///
/// Skeleton pixels with other than two neighbours are node pixels;
/// 8-adjacent node pixels merge into one node at their centroid. Chains of
/// two-neighbour pixels between nodes become edges. Closed loops without a
/// node are cut into three edges, and self-loops and parallel edges get
/// extra internal nodes so the graph stays simple. Radii are the distance
/// map minus half a pixel. Short spurs are then pruned; a junction left
/// with two edges is dissolved into a single edge.
pub fn build_centerline_graph(
    skeleton: &BinaryMask,
    dist: &DistanceMap,
    opts: &GraphOptions,
) -> Result<CenterlineGraph, FlowVizError> {
    let (w, h) = skeleton.dimensions();
    let idx = |p: Pixel| p.1 as usize * w as usize + p.0 as usize;
    let radius_at = |p: Pixel| (dist.get(p.0, p.1) - 0.5).max(0.5);
    let fg_neighbours = |p: Pixel| -> Vec<Pixel> {
        let nb = neighbours(skeleton, p.0 as i64, p.1 as i64);
        RING.iter()
            .zip(nb)
            .filter(|(_, b)| *b)
            .map(|(&(dx, dy), _)| ((p.0 as i64 + dx) as u32, (p.1 as i64 + dy) as u32))
            .collect()
    };

    let pixels: Vec<Pixel> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| skeleton.get(x, y))
        .collect();

    // Node clusters.
    let mut cluster = vec![usize::MAX; (w * h) as usize];
    let is_node_pixel = |p: Pixel| fg_neighbours(p).len() != 2;
    let mut nodes: Vec<CenterlineNode> = Vec::new();
    for &p in &pixels {
        if cluster[idx(p)] != usize::MAX || !is_node_pixel(p) {
            continue;
        }
        let id = nodes.len();
        let mut members = vec![p];
        cluster[idx(p)] = id;
        let mut queue = VecDeque::from([p]);
        while let Some(q) = queue.pop_front() {
            for n in fg_neighbours(q) {
                if cluster[idx(n)] == usize::MAX && is_node_pixel(n) {
                    cluster[idx(n)] = id;
                    members.push(n);
                    queue.push_back(n);
                }
            }
        }
        let k = members.len() as f64;
        nodes.push(CenterlineNode {
            x: members.iter().map(|m| m.0 as f64).sum::<f64>() / k,
            y: members.iter().map(|m| m.1 as f64).sum::<f64>() / k,
            radius: members.iter().map(|&m| radius_at(m)).fold(0.0, f64::max),
            kind: NodeKind::Endpoint,
        });
    }

    let mut visited = vec![false; (w * h) as usize];
    let mut raw: Vec<(usize, usize, Vec<Pixel>)> = Vec::new();
    for &p in &pixels {
        let c = cluster[idx(p)];
        if c == usize::MAX {
            continue;
        }
        for q in fg_neighbours(p) {
            if cluster[idx(q)] != usize::MAX || visited[idx(q)] {
                continue;
            }
            let mut path = vec![q];
            visited[idx(q)] = true;
            let (mut prev, mut cur) = (p, q);
            let end = loop {
                let next = fg_neighbours(cur)
                    .into_iter()
                    .find(|&n| n != prev)
                    .expect("chain pixels have two neighbours");
                if cluster[idx(next)] != usize::MAX {
                    break cluster[idx(next)];
                }
                if visited[idx(next)] {
                    // Chain closed on itself without reaching a node; cannot
                    // happen for chains that start at a node.
                    break c;
                }
                visited[idx(next)] = true;
                path.push(next);
                prev = cur;
                cur = next;
            };
            raw.push((c, end, path));
        }
    }

    // Closed loops with no node pixel.
    for &p in &pixels {
        if cluster[idx(p)] != usize::MAX || visited[idx(p)] {
            continue;
        }
        let mut path = vec![p];
        visited[idx(p)] = true;
        let (mut prev, mut cur) = (p, fg_neighbours(p)[0]);
        while cur != p {
            visited[idx(cur)] = true;
            path.push(cur);
            let next = fg_neighbours(cur)
                .into_iter()
                .find(|&n| n != prev)
                .expect("chain pixels have two neighbours");
            prev = cur;
            cur = next;
        }
        if path.len() < 6 {
            continue;
        }
        let id = nodes.len();
        nodes.push(pixel_node(path[0], radius_at(path[0])));
        raw.push((id, id, path[1..].to_vec()));
    }

    // Self-loops and parallel edges.
    let mut edges: Vec<(usize, usize, Vec<Pixel>)> = Vec::new();
    let mut seen: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    for (a, b, path) in raw {
        if a == b {
            if path.len() < 5 {
                continue;
            }
            let (i1, i2) = (path.len() / 3, 2 * path.len() / 3);
            let n1 = nodes.len();
            nodes.push(pixel_node(path[i1], radius_at(path[i1])));
            nodes.push(pixel_node(path[i2], radius_at(path[i2])));
            edges.push((a, n1, path[..i1].to_vec()));
            edges.push((n1, n1 + 1, path[i1 + 1..i2].to_vec()));
            edges.push((n1 + 1, a, path[i2 + 1..].to_vec()));
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key, ()).is_none() {
            edges.push((a, b, path));
            continue;
        }
        if path.len() < 3 {
            continue;
        }
        let mid = path.len() / 2;
        let m = nodes.len();
        nodes.push(pixel_node(path[mid], radius_at(path[mid])));
        edges.push((a, m, path[..mid].to_vec()));
        edges.push((m, b, path[mid + 1..].to_vec()));
    }

    let edges: Vec<CenterlineEdge> = edges
        .into_iter()
        .map(|(a, b, path)| CenterlineEdge {
            a,
            b,
            samples: path
                .into_iter()
                .map(|p| CenterlineSample {
                    x: p.0 as f64,
                    y: p.1 as f64,
                    radius: radius_at(p),
                    arc: 0.0,
                })
                .collect(),
        })
        .collect();

    let mut graph = CenterlineGraph::new(w, h, nodes, edges);
    prune_spurs(&mut graph, opts);
    drop_isolated(&mut graph);
    if graph.nodes.len() < 2 {
        return Err(FlowVizError::DegenerateSkeleton);
    }
    Ok(graph)
}

fn pixel_node(p: Pixel, radius: f64) -> CenterlineNode {
    CenterlineNode {
        x: p.0 as f64,
        y: p.1 as f64,
        radius,
        kind: NodeKind::Internal,
    }
}

fn prune_spurs(g: &mut CenterlineGraph, opts: &GraphOptions) {
    loop {
        let deg = g.degrees();
        let spur = (0..g.edges.len())
            .filter_map(|i| {
                let e = &g.edges[i];
                let junction = match (deg[e.a], deg[e.b]) {
                    (1, d) if d >= 3 => e.b,
                    (d, 1) if d >= 3 => e.a,
                    _ => return None,
                };
                let len = g.edge_length(i);
                let limit = opts.spur_min.max(opts.spur_radius_factor * g.nodes[junction].radius);
                (len < limit).then_some((len, i, junction))
            })
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let Some((_, spur, junction)) = spur else {
            break;
        };
        g.edges.remove(spur);
        dissolve(g, junction);
        g.refresh();
    }
}

/// Replaces a degree-2 node by a single edge when that keeps the graph
/// simple.
fn dissolve(g: &mut CenterlineGraph, node: usize) {
    let inc = g.incident(node);
    if inc.len() != 2 {
        return;
    }
    let (e1, e2) = (inc[0], inc[1]);
    let (u, v) = (g.edges[e1].other(node), g.edges[e2].other(node));
    let duplicate = g
        .edges
        .iter()
        .any(|e| (e.a == u && e.b == v) || (e.a == v && e.b == u));
    if u == v || u == node || v == node || duplicate {
        return;
    }
    let toward = |e: &CenterlineEdge| -> Vec<CenterlineSample> {
        let mut s = e.samples.clone();
        if e.a == node {
            s.reverse();
        }
        s
    };
    let mut samples = toward(&g.edges[e1]);
    let n = &g.nodes[node];
    samples.push(CenterlineSample {
        x: n.x,
        y: n.y,
        radius: n.radius,
        arc: 0.0,
    });
    let mut tail = toward(&g.edges[e2]);
    tail.reverse();
    samples.extend(tail);
    let (hi, lo) = (e1.max(e2), e1.min(e2));
    g.edges.remove(hi);
    g.edges.remove(lo);
    g.edges.push(CenterlineEdge { a: u, b: v, samples });
}

fn drop_isolated(g: &mut CenterlineGraph) {
    let deg = g.degrees();
    let mut remap = vec![usize::MAX; g.nodes.len()];
    let mut kept = Vec::new();
    for (i, node) in g.nodes.iter().enumerate() {
        if deg[i] > 0 {
            remap[i] = kept.len();
            kept.push(node.clone());
        }
    }
    g.nodes = kept;
    for e in &mut g.edges {
        e.a = remap[e.a];
        e.b = remap[e.b];
    }
    g.refresh();
}
