use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{cross, normalize, sub, MeshError, TriMesh};

const HEADER: &[u8] = b"angioforge binary STL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StlFormat {
    Binary,
    Ascii,
}

/// Serializes a mesh. Binary output stores f32 coordinates; its facet
/// normals are computed from the f32-rounded vertices, so rewriting a mesh
/// read back from the bytes reproduces them exactly. Ascii output prints 9
/// significant digits.
pub fn write_stl(mesh: &TriMesh, format: StlFormat) -> Result<Vec<u8>, MeshError> {
    if mesh.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    match format {
        StlFormat::Binary => {
            let mut out = Vec::with_capacity(84 + 50 * mesh.triangles.len());
            let mut header = [0u8; 80];
            header[..HEADER.len()].copy_from_slice(HEADER);
            out.extend_from_slice(&header);
            out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
            for t in 0..mesh.triangles.len() {
                let corners = mesh.triangle(t).map(|v| v.map(|c| c as f32 as f64));
                let n = facet_normal(&corners);
                for c in n.iter().chain(corners.iter().flatten()) {
                    out.extend_from_slice(&(*c as f32).to_le_bytes());
                }
                out.extend_from_slice(&[0, 0]);
            }
            Ok(out)
        }
        StlFormat::Ascii => {
            let mut s = String::from("solid angioforge\n");
            for t in 0..mesh.triangles.len() {
                let corners = mesh.triangle(t);
                let n = facet_normal(&corners);
                let _ = writeln!(s, "  facet normal {:.8e} {:.8e} {:.8e}", n[0], n[1], n[2]);
                s.push_str("    outer loop\n");
                for v in corners {
                    let _ = writeln!(s, "      vertex {:.8e} {:.8e} {:.8e}", v[0], v[1], v[2]);
                }
                s.push_str("    endloop\n  endfacet\n");
            }
            s.push_str("endsolid angioforge\n");
            Ok(s.into_bytes())
        }
    }
}

fn facet_normal(c: &[[f64; 3]; 3]) -> [f64; 3] {
    normalize(cross(sub(c[1], c[0]), sub(c[2], c[0])))
}

/// Parses binary or ascii STL. A file whose length equals
/// `84 + 50 * count` is binary even if it starts with `solid`. Vertices
/// are merged by exact bit equality in order of first appearance.
pub fn read_stl(bytes: &[u8]) -> Result<TriMesh, MeshError> {
    let malformed = |m: String| MeshError::MalformedStl(m);
    if bytes.len() >= 84 {
        let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as u64;
        if 84 + 50 * count == bytes.len() as u64 {
            return read_binary(bytes, count as usize);
        }
    }
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(bytes.len());
    if bytes[trimmed..].starts_with(b"solid") {
        return read_ascii(bytes);
    }
    if bytes.len() < 84 {
        return Err(malformed(format!("{} bytes is shorter than a binary header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as u64;
    Err(malformed(format!(
        "count field says {count} triangles ({} bytes) but file has {} bytes",
        84 + 50 * count,
        bytes.len()
    )))
}

fn read_binary(bytes: &[u8], count: usize) -> Result<TriMesh, MeshError> {
    let mut builder = Builder::default();
    for t in 0..count {
        let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
        let corners = [[f(3), f(4), f(5)], [f(6), f(7), f(8)], [f(9), f(10), f(11)]];
        if corners.iter().flatten().any(|c| !c.is_finite()) {
            return Err(MeshError::MalformedStl(format!("non-finite vertex in facet {t}")));
        }
        builder.push(corners);
    }
    Ok(builder.mesh)
}

fn read_ascii(bytes: &[u8]) -> Result<TriMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|_| MeshError::MalformedStl("ascii STL is not UTF-8".into()))?;
    let body = text.trim_start();
    // The solid name runs to the end of the first line.
    let after_name = body.find('\n').map(|i| &body[i + 1..]).unwrap_or("");
    let mut tokens = after_name.split_ascii_whitespace().peekable();
    let mut builder = Builder::default();
    let err = |m: &str| MeshError::MalformedStl(m.to_string());
    let expect = |tokens: &mut std::iter::Peekable<std::str::SplitAsciiWhitespace>, word: &str| {
        match tokens.next() {
            Some(t) if t == word => Ok(()),
            Some(t) => Err(MeshError::MalformedStl(format!("expected '{word}', found '{t}'"))),
            None => Err(MeshError::MalformedStl(format!("expected '{word}', found end of file"))),
        }
    };
    let number = |tokens: &mut std::iter::Peekable<std::str::SplitAsciiWhitespace>| -> Result<f64, MeshError> {
        let t = tokens.next().ok_or_else(|| err("truncated number"))?;
        let v: f64 = t.parse().map_err(|_| MeshError::MalformedStl(format!("bad number '{t}'")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MeshError::MalformedStl(format!("non-finite number '{t}'")))
        }
    };
    loop {
        match tokens.next() {
            Some("facet") => {}
            Some("endsolid") => break,
            Some(t) => return Err(MeshError::MalformedStl(format!("expected 'facet', found '{t}'"))),
            None => return Err(err("missing 'endsolid'")),
        }
        expect(&mut tokens, "normal")?;
        for _ in 0..3 {
            number(&mut tokens)?;
        }
        expect(&mut tokens, "outer")?;
        expect(&mut tokens, "loop")?;
        let mut corners = [[0.0; 3]; 3];
        for corner in &mut corners {
            expect(&mut tokens, "vertex")?;
            for c in corner.iter_mut() {
                *c = number(&mut tokens)?;
            }
        }
        expect(&mut tokens, "endloop")?;
        expect(&mut tokens, "endfacet")?;
        builder.push(corners);
    }
    if builder.mesh.triangles.is_empty() {
        return Err(err("no facets"));
    }
    Ok(builder.mesh)
}

#[derive(Default)]
struct Builder {
    mesh: TriMesh,
    index: HashMap<[u64; 3], u32>,
}

impl Builder {
    fn push(&mut self, corners: [[f64; 3]; 3]) {
        let tri = corners.map(|v| {
            *self.index.entry(v.map(f64::to_bits)).or_insert_with(|| {
                self.mesh.vertices.push(v);
                (self.mesh.vertices.len() - 1) as u32
            })
        });
        self.mesh.triangles.push(tri);
    }
}
