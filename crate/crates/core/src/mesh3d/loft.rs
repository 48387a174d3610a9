use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::flowviz::CenterlineGraph;

use super::{add, cross, dot, norm, normalize, scale, sub, MeshError, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoftOptions {
    pub n_sides: usize,
    /// Millimeters per pixel.
    pub pixel_pitch: f64,
    /// Half-width of the moving average applied to centerline samples.
    pub smoothing: usize,
    /// Largest allowed ratio of tube radius to local curvature radius.
    pub curvature_tolerance: f64,
}

impl Default for LoftOptions {
    fn default() -> Self {
        LoftOptions {
            n_sides: 16,
            pixel_pitch: 0.25,
            smoothing: 3,
            curvature_tolerance: 1.5,
        }
    }
}

/// Centerline polyline of one edge in pixel units.
struct Path {
    pts: Vec<[f64; 2]>,
    radii: Vec<f64>,
    arc: Vec<f64>,
}

impl Path {
    fn length(&self) -> f64 {
        *self.arc.last().expect("paths have two or more points")
    }

    fn at(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.clamp(0.0, self.length());
        let i = self.arc.partition_point(|&a| a <= s).clamp(1, self.arc.len() - 1);
        let span = self.arc[i] - self.arc[i - 1];
        let f = if span > 0.0 { (s - self.arc[i - 1]) / span } else { 0.0 };
        let lerp = |a: f64, b: f64| a + f * (b - a);
        (
            [lerp(self.pts[i - 1][0], self.pts[i][0]), lerp(self.pts[i - 1][1], self.pts[i][1])],
            lerp(self.radii[i - 1], self.radii[i]),
        )
    }

    fn mean_radius(&self) -> f64 {
        self.radii.iter().sum::<f64>() / self.radii.len() as f64
    }
}

/// Cross-section ring where an edge meets a node.
#[derive(Clone, Copy)]
struct Attachment {
    ring: usize,
    /// Ring frame runs away from the node (edge start) or toward it (end).
    starts_here: bool,
    /// In-plane direction from the node into the edge.
    heading: [f64; 3],
    center: [f64; 3],
    radius: f64,
}

/// Sweeps every centerline edge with a regular `n_sides` polygon.
///
/// Samples are smoothed, then resampled into stations about half a radius
/// apart. Rings are oriented by rotation-minimizing frames (double
/// reflection) and stitched with two triangles per quad. At a node of
/// degree one the ring is closed with a flat fan. Elsewhere each incident
/// edge stops one maximal incident radius short of the node, and the ring
/// openings are joined by two fans: one from an apex above the node over
/// the upper half-rings, one from an apex below over the lower half-rings,
/// taken in angular order around the node. The result is a closed,
/// consistently oriented surface.
pub fn loft_tube(graph: &CenterlineGraph, opts: &LoftOptions) -> Result<TriMesh, MeshError> {
    if opts.n_sides < 6 {
        return Err(MeshError::TooFewSides(opts.n_sides));
    }
    if !(opts.pixel_pitch.is_finite() && opts.pixel_pitch > 0.0) {
        return Err(MeshError::InvalidPitch(opts.pixel_pitch));
    }
    check_graph(graph)?;

    let paths: Vec<Path> = graph
        .edges
        .iter()
        .map(|e| smoothed_path(graph, e, opts.smoothing))
        .collect::<Result<_, _>>()?;

    let n_nodes = graph.nodes.len();
    let degree = graph.degrees();
    let mut setback = vec![0.0f64; n_nodes];
    for (e, path) in graph.edges.iter().zip(&paths) {
        for (node, r) in [(e.a, path.radii[0]), (e.b, *path.radii.last().unwrap())] {
            if degree[node] >= 2 {
                setback[node] = setback[node].max(r);
            }
        }
    }

    let pitch = opts.pixel_pitch;
    let to_mm = |p: [f64; 2]| [p[0] * pitch, -p[1] * pitch, 0.0];
    let n = opts.n_sides;
    let mut mesh = TriMesh::default();
    let mut rings: Vec<Vec<u32>> = Vec::new();
    let mut attachments: Vec<Vec<Attachment>> = vec![Vec::new(); n_nodes];

    for (e, path) in graph.edges.iter().zip(&paths) {
        let len = path.length();
        let (s0, s1) = (setback[e.a], len - setback[e.b]);
        let stations: Vec<f64> = if s1 - s0 <= 1e-9 {
            vec![((s0 + s1) / 2.0).clamp(0.0, len)]
        } else {
            let step = (0.5 * path.mean_radius()).max(1.0);
            let k = ((s1 - s0) / step).ceil().max(1.0) as usize;
            (0..=k).map(|i| s0 + (s1 - s0) * i as f64 / k as f64).collect()
        };

        for &s in &stations {
            check_curvature(path, s, opts.curvature_tolerance)?;
        }

        let centers: Vec<[f64; 3]> = stations.iter().map(|&s| to_mm(path.at(s).0)).collect();
        let radii: Vec<f64> = stations.iter().map(|&s| path.at(s).1 * pitch).collect();
        let h = (0.5 * (s1 - s0).max(0.0) / stations.len() as f64).max(0.5).min(len / 2.0);
        let tangents: Vec<[f64; 3]> = stations
            .iter()
            .map(|&s| {
                let (lo, hi) = ((s - h).max(0.0), (s + h).min(len));
                normalize(sub(to_mm(path.at(hi).0), to_mm(path.at(lo).0)))
            })
            .collect();

        let frames = rotation_minimizing_frames(&centers, &tangents);
        let first_ring = rings.len();
        for ((c, &r), (t, u)) in centers.iter().zip(&radii).zip(&frames) {
            let w = cross(*t, *u);
            let base = mesh.vertices.len() as u32;
            for j in 0..n {
                let theta = 2.0 * PI * j as f64 / n as f64;
                let offset = add(scale(*u, r * theta.cos()), scale(w, r * theta.sin()));
                mesh.vertices.push(add(*c, offset));
            }
            rings.push((base..base + n as u32).collect());
        }
        for i in first_ring..rings.len() - 1 {
            let (ra, rb) = (&rings[i], &rings[i + 1]);
            for j in 0..n {
                let k = (j + 1) % n;
                mesh.triangles.push([ra[j], ra[k], rb[k]]);
                mesh.triangles.push([ra[j], rb[k], rb[j]]);
            }
        }
        let last_ring = rings.len() - 1;
        let flat = |v: [f64; 3]| normalize([v[0], v[1], 0.0]);
        attachments[e.a].push(Attachment {
            ring: first_ring,
            starts_here: true,
            heading: flat(tangents[0]),
            center: centers[0],
            radius: radii[0],
        });
        attachments[e.b].push(Attachment {
            ring: last_ring,
            starts_here: false,
            heading: flat(scale(*tangents.last().unwrap(), -1.0)),
            center: *centers.last().unwrap(),
            radius: *radii.last().unwrap(),
        });
    }

    let m = n / 2;
    for (node, atts) in attachments.iter_mut().enumerate() {
        if atts.len() == 1 {
            let a = atts[0];
            let ring = &rings[a.ring];
            let c = mesh.vertices.len() as u32;
            mesh.vertices.push(a.center);
            for j in 0..n {
                let k = (j + 1) % n;
                mesh.triangles.push(if a.starts_here {
                    [c, ring[k], ring[j]]
                } else {
                    [c, ring[j], ring[k]]
                });
            }
            continue;
        }
        atts.sort_by(|p, q| {
            p.heading[1]
                .atan2(p.heading[0])
                .total_cmp(&q.heading[1].atan2(q.heading[0]))
        });
        // Half-rings taken from the right side of each heading to its left.
        let mut upper: Vec<u32> = Vec::new();
        let mut lower: Vec<u32> = Vec::new();
        for a in atts.iter() {
            let ring = &rings[a.ring];
            if a.starts_here {
                upper.extend((0..=m).rev().map(|j| ring[j]));
                lower.extend((m..n).map(|j| ring[j]));
                lower.push(ring[0]);
            } else {
                upper.extend((0..=m).map(|j| ring[j]));
                lower.push(ring[0]);
                lower.extend((m..n).rev().map(|j| ring[j]));
            }
        }
        let apex_height = atts.iter().map(|a| a.radius).fold(0.0, f64::max);
        let center = to_mm([graph.nodes[node].x, graph.nodes[node].y]);
        let top = mesh.vertices.len() as u32;
        mesh.vertices.push(add(center, [0.0, 0.0, apex_height]));
        mesh.vertices.push(add(center, [0.0, 0.0, -apex_height]));
        let bottom = top + 1;
        for i in 0..upper.len() {
            let (a, b) = (upper[i], upper[(i + 1) % upper.len()]);
            mesh.triangles.push([top, a, b]);
        }
        for i in 0..lower.len() {
            let (a, b) = (lower[i], lower[(i + 1) % lower.len()]);
            mesh.triangles.push([bottom, b, a]);
        }
    }
    Ok(mesh)
}

fn check_graph(graph: &CenterlineGraph) -> Result<(), MeshError> {
    let bad = |msg: String| Err(MeshError::DegenerateCenterline(msg));
    if graph.nodes.len() < 2 {
        return bad(format!("{} node(s)", graph.nodes.len()));
    }
    if graph.edges.is_empty() {
        return bad("no edges".into());
    }
    for n in &graph.nodes {
        if !(n.x.is_finite() && n.y.is_finite()) {
            return bad("non-finite node position".into());
        }
    }
    for (i, e) in graph.edges.iter().enumerate() {
        if e.a >= graph.nodes.len() || e.b >= graph.nodes.len() || e.a == e.b {
            return bad(format!("edge {i} has invalid end nodes"));
        }
        if e.samples.is_empty() {
            return bad(format!("edge {i} has no samples"));
        }
        if e.samples.iter().any(|s| !(s.x.is_finite() && s.y.is_finite() && s.radius.is_finite() && s.radius > 0.0)) {
            return bad(format!("edge {i} has an invalid sample"));
        }
    }
    Ok(())
}

/// Node, samples, node; positions and radii smoothed by a moving average
/// that keeps both end positions fixed.
fn smoothed_path(
    graph: &CenterlineGraph,
    e: &crate::flowviz::CenterlineEdge,
    half: usize,
) -> Result<Path, MeshError> {
    let (na, nb) = (&graph.nodes[e.a], &graph.nodes[e.b]);
    let mut pts = vec![[na.x, na.y]];
    pts.extend(e.samples.iter().map(|s| [s.x, s.y]));
    pts.push([nb.x, nb.y]);
    let mut radii = vec![e.samples[0].radius];
    radii.extend(e.samples.iter().map(|s| s.radius));
    radii.push(e.samples[e.samples.len() - 1].radius);

    let len = pts.len();
    let window = |i: usize| (i.saturating_sub(half), (i + half).min(len - 1));
    let smooth_pts: Vec<[f64; 2]> = (0..len)
        .map(|i| {
            if i == 0 || i == len - 1 {
                return pts[i];
            }
            let (lo, hi) = window(i);
            let k = (hi - lo + 1) as f64;
            let sx: f64 = pts[lo..=hi].iter().map(|p| p[0]).sum();
            let sy: f64 = pts[lo..=hi].iter().map(|p| p[1]).sum();
            [sx / k, sy / k]
        })
        .collect();
    let smooth_radii: Vec<f64> = (0..len)
        .map(|i| {
            let (lo, hi) = window(i);
            radii[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();

    let mut arc = Vec::with_capacity(len);
    let mut total = 0.0;
    for i in 0..len {
        if i > 0 {
            total += (smooth_pts[i][0] - smooth_pts[i - 1][0]).hypot(smooth_pts[i][1] - smooth_pts[i - 1][1]);
        }
        arc.push(total);
    }
    if total <= 1e-9 {
        return Err(MeshError::DegenerateCenterline(format!(
            "edge {}-{} has zero length",
            e.a, e.b
        )));
    }
    Ok(Path {
        pts: smooth_pts,
        radii: smooth_radii,
        arc,
    })
}

/// Circumradius through the points one tube radius before and after `s`.
fn check_curvature(path: &Path, s: f64, tolerance: f64) -> Result<(), MeshError> {
    let (p, r) = path.at(s);
    if s - r < 0.0 || s + r > path.length() {
        return Ok(());
    }
    let (a, _) = path.at(s - r);
    let (b, _) = path.at(s + r);
    let (ab, ap, pb) = (
        (b[0] - a[0]).hypot(b[1] - a[1]),
        (p[0] - a[0]).hypot(p[1] - a[1]),
        (b[0] - p[0]).hypot(b[1] - p[1]),
    );
    let area2 = ((p[0] - a[0]) * (b[1] - a[1]) - (p[1] - a[1]) * (b[0] - a[0])).abs();
    if area2 <= 1e-12 * ab * ab {
        return Ok(());
    }
    let circumradius = ab * ap * pb / (2.0 * area2);
    if r > tolerance * circumradius {
        return Err(MeshError::SelfIntersectingInput {
            x: p[0],
            y: p[1],
            radius: r,
            curvature_radius: circumradius,
        });
    }
    Ok(())
}

/// Double-reflection rotation-minimizing frames. Returns (tangent, normal)
/// per station; the first normal is the tangent turned a quarter turn in
/// the xy plane.
fn rotation_minimizing_frames(centers: &[[f64; 3]], tangents: &[[f64; 3]]) -> Vec<([f64; 3], [f64; 3])> {
    let t0 = tangents[0];
    let mut u = normalize([-t0[1], t0[0], 0.0]);
    if norm(u) == 0.0 {
        u = normalize(cross(t0, [1.0, 0.0, 0.0]));
    }
    let mut frames = vec![(t0, u)];
    for i in 0..centers.len() - 1 {
        let (ti, ui) = frames[i];
        let v1 = sub(centers[i + 1], centers[i]);
        let c1 = dot(v1, v1);
        let t_next = tangents[i + 1];
        let u_next = if c1 <= 1e-24 {
            ui
        } else {
            let ul = sub(ui, scale(v1, 2.0 / c1 * dot(v1, ui)));
            let tl = sub(ti, scale(v1, 2.0 / c1 * dot(v1, ti)));
            let v2 = sub(t_next, tl);
            let c2 = dot(v2, v2);
            if c2 <= 1e-24 {
                ul
            } else {
                sub(ul, scale(v2, 2.0 / c2 * dot(v2, ul)))
            }
        };
        // Re-orthogonalize against drift.
        let u_next = normalize(sub(u_next, scale(t_next, dot(t_next, u_next))));
        frames.push((t_next, u_next));
    }
    frames
}
