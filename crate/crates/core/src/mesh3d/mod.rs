//! Centerline tube meshes: lofting, validation and STL I/O.
//!
//! Coordinates are millimeters. A pixel `(x, y)` maps to
//! `(x * pitch, -y * pitch, 0)` so the image's downward y axis becomes a
//! right-handed frame with +z toward the viewer. Triangles wind
//! counter-clockwise seen from outside.

mod loft;
mod stl;
mod validate;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use loft::{loft_tube, LoftOptions};
pub use stl::{read_stl, write_stl, StlFormat};
pub use validate::{validate_mesh, ValidationReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("degenerate centerline: {0}")]
    DegenerateCenterline(String),
    #[error("centerline radius {radius:.3} exceeds 1.5x local curvature radius {curvature_radius:.3} near ({x:.1}, {y:.1})")]
    SelfIntersectingInput {
        x: f64,
        y: f64,
        radius: f64,
        curvature_radius: f64,
    },
    #[error("n_sides must be at least 6, got {0}")]
    TooFewSides(usize),
    #[error("pixel pitch must be positive and finite, got {0}")]
    InvalidPitch(f64),
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("malformed STL: {0}")]
    MalformedStl(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Every coordinate rounded to the nearest f32.
    pub fn quantized(&self) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| v.map(|c| c as f32 as f64))
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Merges bit-identical vertices and renumbers them in order of first
    /// use by the triangle list; unused vertices are dropped.
    pub fn canonical(&self) -> TriMesh {
        let mut index: HashMap<[u64; 3], u32> = HashMap::new();
        let mut vertices = Vec::new();
        let triangles = self
            .triangles
            .iter()
            .map(|tri| {
                tri.map(|i| {
                    let v = self.vertices[i as usize];
                    *index.entry(v.map(f64::to_bits)).or_insert_with(|| {
                        vertices.push(v);
                        (vertices.len() - 1) as u32
                    })
                })
            })
            .collect();
        TriMesh { vertices, triangles }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}
