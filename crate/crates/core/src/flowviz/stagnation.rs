use serde::{Deserialize, Serialize};

use super::flow::FlowField;
use super::FlowVizError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagnationOptions {
    /// Threshold as a fraction of the median sample velocity.
    pub ratio: f64,
    /// Runs separated by fewer unflagged samples than this are merged.
    pub merge_gap: usize,
}

impl Default for StagnationOptions {
    fn default() -> Self {
        StagnationOptions {
            ratio: 0.5,
            merge_gap: 3,
        }
    }
}

/// Flagged interval on one edge; indices are inclusive sample positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSegment {
    pub edge: usize,
    pub start_index: usize,
    pub end_index: usize,
    pub start_arc: f64,
    pub end_arc: f64,
}

/// Connected slow region. Segments on different edges that reach a common
/// node belong to one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagnationZone {
    pub segments: Vec<ZoneSegment>,
    /// Mean over the flagged samples.
    pub mean_velocity: f64,
    /// Pixel coordinates, mean of the flagged samples.
    pub centroid: [f64; 2],
    pub max_radius: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagnationReport {
    pub threshold_used: f64,
    pub median_velocity: f64,
    pub zones: Vec<StagnationZone>,
}

/// Flags samples with `v < ratio * median(v)`, groups them into maximal
/// per-edge runs (bridging gaps shorter than `merge_gap` samples), then joins
/// runs that meet at a node.
pub fn detect_stagnation(field: &FlowField, opts: &StagnationOptions) -> Result<StagnationReport, FlowVizError> {
    let mut all: Vec<f64> = field.samples().map(|s| s.v).collect();
    if all.is_empty() {
        return Err(FlowVizError::EmptyField);
    }
    all.sort_by(f64::total_cmp);
    let m = all.len();
    let median = if m % 2 == 1 {
        all[m / 2]
    } else {
        (all[m / 2 - 1] + all[m / 2]) / 2.0
    };
    let threshold = opts.ratio * median;

    let mut segments: Vec<ZoneSegment> = Vec::new();
    for (e, edge) in field.edges.iter().enumerate() {
        let mut run: Option<(usize, usize)> = None;
        for (i, s) in edge.samples.iter().enumerate() {
            if s.v >= threshold {
                continue;
            }
            run = match run {
                Some((start, end)) if i - end - 1 < opts.merge_gap => Some((start, i)),
                Some(done) => {
                    segments.push(segment(field, e, done));
                    Some((i, i))
                }
                None => Some((i, i)),
            };
        }
        if let Some(done) = run {
            segments.push(segment(field, e, done));
        }
    }

    // Join segments through shared nodes.
    let mut parent: Vec<usize> = (0..segments.len()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut k = i;
        while parent[k] != r {
            let next = parent[k];
            parent[k] = r;
            k = next;
        }
        r
    }
    let mut at_node: Vec<Option<usize>> = vec![None; field.nodes.len()];
    for (i, seg) in segments.iter().enumerate() {
        let edge = &field.edges[seg.edge];
        let len = edge.samples.len();
        let mut touched = Vec::new();
        if seg.start_index < opts.merge_gap {
            touched.push(edge.from);
        }
        if len - 1 - seg.end_index < opts.merge_gap {
            touched.push(edge.to);
        }
        for node in touched {
            match at_node[node] {
                Some(j) => {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
                None => at_node[node] = Some(i),
            }
        }
    }

    let mut groups: Vec<(usize, Vec<ZoneSegment>)> = Vec::new();
    for (i, seg) in segments.into_iter().enumerate() {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, list)) => list.push(seg),
            None => groups.push((root, vec![seg])),
        }
    }

    let zones = groups
        .into_iter()
        .map(|(_, segs)| {
            let flagged: Vec<_> = segs
                .iter()
                .flat_map(|seg| field.edges[seg.edge].samples[seg.start_index..=seg.end_index].iter())
                .filter(|s| s.v < threshold)
                .collect();
            let k = flagged.len() as f64;
            StagnationZone {
                mean_velocity: flagged.iter().map(|s| s.v).sum::<f64>() / k,
                centroid: [
                    flagged.iter().map(|s| s.x).sum::<f64>() / k,
                    flagged.iter().map(|s| s.y).sum::<f64>() / k,
                ],
                max_radius: flagged.iter().map(|s| s.radius).fold(0.0, f64::max),
                sample_count: flagged.len(),
                segments: segs,
            }
        })
        .collect();

    Ok(StagnationReport {
        threshold_used: threshold,
        median_velocity: median,
        zones,
    })
}

fn segment(field: &FlowField, edge: usize, (start, end): (usize, usize)) -> ZoneSegment {
    let samples = &field.edges[edge].samples;
    ZoneSegment {
        edge,
        start_index: start,
        end_index: end,
        start_arc: samples[start].arc,
        end_arc: samples[end].arc,
    }
}
