use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{cross, dot, norm, normalize, sub, TriMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Edge-manifold with no boundary: every edge has exactly two triangles.
    pub watertight: bool,
    pub edge_manifold: bool,
    /// Each shared edge is traversed in opposite directions by its two
    /// triangles.
    pub consistently_oriented: bool,
    /// V - E + F over referenced vertices.
    pub euler_characteristic: i64,
    pub boundary_edge_count: usize,
    /// Edges used by more than two triangles.
    pub nonmanifold_edge_count: usize,
    /// Cubic millimeters; positive for outward winding.
    pub signed_volume: f64,
    pub triangle_count: usize,
    pub vertex_count: usize,
    pub degenerate_triangle_count: usize,
    /// Smallest `(1 + n1 . n2) / 2` over edges shared by two triangles:
    /// 1 for coplanar neighbours, 0 for a fold back onto itself.
    pub min_dihedral_quality: f64,
}

impl ValidationReport {
    /// Closed, oriented, positive volume, no degenerate faces.
    pub fn is_valid(&self) -> bool {
        self.watertight
            && self.consistently_oriented
            && self.signed_volume > 0.0
            && self.degenerate_triangle_count == 0
    }
}

pub fn validate_mesh(mesh: &TriMesh) -> ValidationReport {
    let mut uses: HashMap<(u32, u32), Vec<(usize, bool)>> = HashMap::new();
    let mut referenced = BTreeSet::new();
    let mut volume = 0.0;
    let mut degenerate = 0;
    let mut normals = Vec::with_capacity(mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = mesh.triangle(t);
        volume += dot(a, cross(b, c)) / 6.0;
        let n = cross(sub(b, a), sub(c, a));
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] || norm(n) == 0.0 {
            degenerate += 1;
        }
        normals.push(normalize(n));
        for k in 0..3 {
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            referenced.insert(p);
            uses.entry((p.min(q), p.max(q))).or_default().push((t, p < q));
        }
    }

    let mut boundary = 0;
    let mut nonmanifold = 0;
    let mut oriented = true;
    let mut quality = 1.0f64;
    for list in uses.values() {
        match list.len() {
            1 => boundary += 1,
            2 => {
                if list[0].1 == list[1].1 {
                    oriented = false;
                }
                let q = (1.0 + dot(normals[list[0].0], normals[list[1].0])) / 2.0;
                quality = quality.min(q);
            }
            _ => nonmanifold += 1,
        }
    }
    let manifold = boundary == 0 && nonmanifold == 0 && !mesh.triangles.is_empty();
    ValidationReport {
        watertight: manifold,
        edge_manifold: manifold,
        consistently_oriented: oriented && nonmanifold == 0,
        euler_characteristic: referenced.len() as i64 - uses.len() as i64 + mesh.triangles.len() as i64,
        boundary_edge_count: boundary,
        nonmanifold_edge_count: nonmanifold,
        signed_volume: volume,
        triangle_count: mesh.triangles.len(),
        vertex_count: referenced.len(),
        degenerate_triangle_count: degenerate,
        min_dihedral_quality: quality,
    }
}
