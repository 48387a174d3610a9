//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

// `!(x <= tol)` is deliberate: NaN must fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use angioforge_core::backend::{BackendConfig, BackendError, EditRequest, ImageEditBackend, MockBackend, RemoteBackend};
use angioforge_core::flowviz::{
    assign_flow, CenterlineEdge, CenterlineGraph, CenterlineNode, CenterlineSample, FlowField, NodeKind, SplitRule,
};
use angioforge_core::image_ops::otsu_threshold;
use angioforge_core::mesh3d::{loft_tube, read_stl, validate_mesh, write_stl, LoftOptions, StlFormat, TriMesh};
use angioforge_core::phantom::{fontan_phantom, Phantom, PhantomOptions};
use angioforge_core::pipeline::ops::FlowSettings;
use angioforge_core::pipeline::{
    parse_manifest, pipeline_definition, replay, FinalReport, Pipeline, RecordState, SessionConfig, SessionStore,
    StepRecord, STEP_COUNT,
};
use angioforge_core::raster::{GrayImage, Raster};
use angioforge_core::ContentHash;
use angioforge_service::{AppState, BackgroundServer, SessionSummary};
use angioforge_testkit::{StubResponse, StubServer};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::{multipart, Client};
use reqwest::StatusCode;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Batch run shared by the completion, stagnation and replay criteria.

struct BatchRun {
    dir: tempfile::TempDir,
    phantom: Phantom,
    exit: Option<i32>,
    stderr: String,
    elapsed: Duration,
}

fn batch_run() -> BatchRun {
    let dir = tempfile::tempdir().expect("tempdir");
    let phantom = fontan_phantom(&PhantomOptions {
        size: 1024,
        ..PhantomOptions::default()
    });
    let input = dir.path().join("phantom.png");
    std::fs::write(&input, Raster::Gray(phantom.image.clone()).encode_png().unwrap()).unwrap();
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_angioforge"))
        .env("RUST_LOG", "warn")
        .arg("run")
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(dir.path().join("out"))
        .output()
        .expect("spawn angioforge");
    BatchRun {
        elapsed: started.elapsed(),
        exit: out.status.code(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        dir,
        phantom,
    }
}

fn out_dir(run: &BatchRun) -> std::path::PathBuf {
    run.dir.path().join("out")
}

fn completion(run: &BatchRun) -> Outcome {
    ensure!(run.exit == Some(0), "exit {:?}: {}", run.exit, run.stderr.trim());
    let out = out_dir(run);
    for name in ["projection.png", "flow.png", "report.json", "model.stl", "manifest.json"] {
        ensure!(out.join(name).is_file(), "{name} missing");
    }
    let session = parse_manifest(&std::fs::read(out.join("manifest.json")).unwrap()).map_err(|e| e.to_string())?;
    let accepted = session
        .records()
        .iter()
        .filter(|r| r.state == RecordState::Accepted)
        .count();
    ensure!(session.attempts.len() == 16, "{} attempts", session.attempts.len());
    ensure!(accepted == 16 && session.accepted_count() == 16, "{accepted} accepted records");
    let mesh = read_stl(&std::fs::read(out.join("model.stl")).unwrap()).map_err(|e| e.to_string())?;
    ensure!(validate_mesh(&mesh).is_valid(), "model.stl fails validation");
    let secs = run.elapsed.as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("16/16 accepted, 4 artifacts, 1024x1024 in {secs:.1} s"))
}

fn stagnation(run: &BatchRun) -> Outcome {
    ensure!(run.exit == Some(0), "batch run failed");
    let report: FinalReport =
        serde_json::from_slice(&std::fs::read(out_dir(run).join("report.json")).unwrap()).map_err(|e| e.to_string())?;
    let zones = &report.stagnation.zones;
    ensure!(zones.len() == 1, "{} zones", zones.len());
    let c = zones[0].centroid;
    ensure!(run.phantom.in_pouch(c), "centroid ({:.1}, {:.1}) outside the pouch", c[0], c[1]);
    Ok(format!("1 zone, centroid ({:.1}, {:.1}) inside the pouch", c[0], c[1]))
}

fn replay_determinism(run: &BatchRun) -> Outcome {
    ensure!(run.exit == Some(0), "batch run failed");
    let store = SessionStore::open(angioforge_cli::store_dir(&out_dir(run))).map_err(|e| e.to_string())?;
    let ids = store.list().map_err(|e| e.to_string())?;
    ensure!(ids.len() == 1, "{} sessions in store", ids.len());
    let session = store.load(&ids[0]).map_err(|e| e.to_string())?;
    let stored: Vec<(u8, ContentHash)> = (1..=STEP_COUNT)
        .filter_map(|k| session.accepted(k).map(|a| (k, a.output_hash.clone())))
        .collect();
    ensure!(stored.len() == 16, "{} accepted steps stored", stored.len());
    let replayed = replay(&store, &session).map_err(|e| e.to_string())?;
    let same = replayed.iter().zip(&stored).filter(|(a, b)| a == b).count();
    ensure!(replayed == stored, "{same}/16 hashes reproduced");
    Ok("16/16 output hashes reproduced".into())
}

// ---------------------------------------------------------------------------
// Segmentation.

/// Exhaustive search over all cuts with exact rational comparison of the
/// between-class variance (S0 n1 - S1 n0)^2 / (n0 n1 N^2); first maximum wins.
fn otsu_oracle(px: &[u8]) -> Option<u8> {
    let mut best: Option<(u8, BigInt, BigInt)> = None;
    for t in 0..=255u16 {
        let (mut n0, mut s0, mut n1, mut s1) = (0i64, 0i64, 0i64, 0i64);
        for &p in px {
            if (p as u16) < t {
                n0 += 1;
                s0 += p as i64;
            } else {
                n1 += 1;
                s1 += p as i64;
            }
        }
        let (num, den) = if n0 == 0 || n1 == 0 {
            (BigInt::from(0), BigInt::from(1))
        } else {
            let d = BigInt::from(s0) * n1 - BigInt::from(s1) * n0;
            let n = BigInt::from(n0 + n1);
            (&d * &d, BigInt::from(n0) * n1 * &n * &n)
        };
        if best.as_ref().is_none_or(|(_, bn, bd)| &num * bd > bn * &den) {
            best = Some((t as u8, num, den));
        }
    }
    px.iter().any(|&p| p != px[0]).then(|| best.unwrap().0)
}

fn random_image(seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed.is_multiple_of(2) {
        GrayImage::from_fn(64, 64, |_, _| rng.random())
    } else {
        let k = rng.random_range(1..6);
        let centers: Vec<(i32, i32)> = (0..k)
            .map(|_| (rng.random_range(0..256), rng.random_range(1..40)))
            .collect();
        GrayImage::from_fn(64, 64, |_, _| {
            let (c, s) = centers[rng.random_range(0..k)];
            (c + rng.random_range(-s..=s)).clamp(0, 255) as u8
        })
    }
}

fn segmentation_oracle() -> Outcome {
    let (mut agree, mut constant) = (0, 0);
    for seed in 0..200u64 {
        let img = random_image(seed);
        match (otsu_oracle(img.pixels()), otsu_threshold(&img)) {
            (Some(want), Ok((got, mask))) => {
                let mask_ok = mask.bits().iter().zip(img.pixels()).all(|(m, &p)| *m == (p >= want));
                if got == want && mask_ok {
                    agree += 1;
                }
            }
            // A constant image has no threshold; both sides must say so.
            (None, Err(_)) => {
                agree += 1;
                constant += 1;
            }
            _ => {}
        }
    }
    ensure!(agree == 200, "{agree}/200 agree");
    ensure!(constant == 0, "{constant} constant images drawn");
    Ok("200/200 thresholds and masks match brute force".into())
}

// ---------------------------------------------------------------------------
// Flow.

fn bare_node(x: f64, y: f64) -> CenterlineNode {
    CenterlineNode {
        x,
        y,
        radius: 1.0,
        kind: NodeKind::Endpoint,
    }
}

struct Tree {
    graph: CenterlineGraph,
    inlets: Vec<usize>,
    outlets: Vec<usize>,
}

fn flow_tree(seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..30usize);
    let mut nodes = Vec::with_capacity(n);
    let mut edges = Vec::new();
    for i in 0..n {
        nodes.push(bare_node(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)));
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
    Tree {
        graph,
        inlets: leaves,
        outlets,
    }
}

fn cut_flow(field: &FlowField, s: &[bool]) -> f64 {
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

fn conservation() -> Outcome {
    let (mut junctions, mut cuts, mut worst) = (0usize, 0usize, 0f64);
    for seed in 0..50u64 {
        let t = flow_tree(seed);
        let rule = if seed.is_multiple_of(2) { SplitRule::Area } else { SplitRule::Murray };
        let f = assign_flow(&t.graph, &t.inlets, &t.outlets, rule).map_err(|e| format!("tree {seed}: {e}"))?;
        let n = t.graph.nodes.len();
        for node in 0..n {
            if t.inlets.contains(&node) || t.outlets.contains(&node) {
                continue;
            }
            let inflow: f64 = f.edges.iter().filter(|e| e.to == node).map(|e| e.q).sum();
            let outflow: f64 = f.edges.iter().filter(|e| e.from == node).map(|e| e.q).sum();
            let rel = (inflow - outflow).abs() / inflow.max(outflow).max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            ensure!(rel <= 1e-9, "tree {seed} node {node}: in {inflow} out {outflow}");
            junctions += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
        let mut sets: Vec<Vec<bool>> = vec![
            (0..n).map(|i| t.inlets.contains(&i)).collect(),
            (0..n).map(|i| !t.outlets.contains(&i)).collect(),
        ];
        for _ in 0..16 {
            sets.push(
                (0..n)
                    .map(|i| t.inlets.contains(&i) || (!t.outlets.contains(&i) && rng.random_bool(0.5)))
                    .collect(),
            );
        }
        for s in sets {
            let q = cut_flow(&f, &s);
            ensure!((q - 1.0).abs() <= 1e-9, "tree {seed}: cut carries {q}");
            cuts += 1;
        }
    }
    Ok(format!(
        "{junctions} interior nodes (worst rel {worst:.1e}), {cuts} cuts carry Q = 1"
    ))
}

fn straight_edge(a: usize, b: usize, from: (f64, f64), to: (f64, f64), k: usize, r: impl Fn(f64) -> f64) -> CenterlineEdge {
    CenterlineEdge {
        a,
        b,
        samples: (1..=k)
            .map(|i| {
                let f = i as f64 / (k + 1) as f64;
                CenterlineSample {
                    x: from.0 + f * (to.0 - from.0),
                    y: from.1 + f * (to.1 - from.1),
                    radius: r(f),
                    arc: 0.0,
                }
            })
            .collect(),
    }
}

fn analytic_velocity() -> Outcome {
    let tube = CenterlineGraph::new(
        128,
        16,
        vec![bare_node(4.0, 8.0), bare_node(120.0, 8.0)],
        vec![straight_edge(0, 1, (4.0, 8.0), (120.0, 8.0), 100, |_| 1.0)],
    );
    let f = assign_flow(&tube, &[0], &[1], SplitRule::Area).map_err(|e| e.to_string())?;
    let mut worst = 0f64;
    for s in f.samples() {
        worst = worst.max((s.v - 1.0 / PI).abs());
    }
    ensure!(worst <= 1e-12, "constant tube off by {worst:e}");

    let pinched = CenterlineGraph::new(
        128,
        16,
        vec![bare_node(4.0, 8.0), bare_node(120.0, 8.0)],
        vec![straight_edge(0, 1, (4.0, 8.0), (120.0, 8.0), 100, |f| if f < 0.5 { 3.0 } else { 1.5 })],
    );
    let f = assign_flow(&pinched, &[0], &[1], SplitRule::Area).map_err(|e| e.to_string())?;
    let wide: Vec<f64> = f.samples().filter(|s| s.radius == 3.0).map(|s| s.v).collect();
    let narrow: Vec<f64> = f.samples().filter(|s| s.radius == 1.5).map(|s| s.v).collect();
    ensure!(!wide.is_empty() && !narrow.is_empty(), "constriction not sampled");
    let mut ratio_err = 0f64;
    for a in &wide {
        for b in &narrow {
            ratio_err = ratio_err.max((b / a - 4.0).abs() / 4.0);
        }
    }
    ensure!(ratio_err <= 1e-9, "jump off by {ratio_err:e}");
    Ok(format!("|v - 1/pi| <= {worst:.1e}; constriction jump 4x within {ratio_err:.1e}"))
}

// ---------------------------------------------------------------------------
// Mesh and STL.

fn mesh_tree(seed: u64) -> CenterlineGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..12usize);
    let mut pos = vec![(500.0, 500.0)];
    let mut used_dirs: Vec<Vec<f64>> = vec![Vec::new()];
    let mut edges = Vec::new();
    let sep = 40f64.to_radians();
    while pos.len() < n {
        let parent = rng.random_range(0..pos.len());
        if used_dirs[parent].len() >= 4 {
            continue;
        }
        let theta: f64 = rng.random_range(0.0..2.0 * PI);
        let clear = used_dirs[parent].iter().all(|&d| {
            let diff = (theta - d).rem_euclid(2.0 * PI);
            diff.min(2.0 * PI - diff) >= sep
        });
        if !clear {
            continue;
        }
        let len = rng.random_range(40.0..90.0);
        let p = pos[parent];
        let q = (p.0 + len * theta.cos(), p.1 + len * theta.sin());
        let bow = rng.random_range(-0.15..0.15) * len;
        let (r0, r1) = (rng.random_range(2.0..7.0), rng.random_range(2.0..7.0));
        let k = len as usize;
        let samples: Vec<CenterlineSample> = (1..k)
            .map(|i| {
                let f = i as f64 / k as f64;
                let off = bow * (PI * f).sin();
                CenterlineSample {
                    x: p.0 + f * (q.0 - p.0) - off * theta.sin(),
                    y: p.1 + f * (q.1 - p.1) + off * theta.cos(),
                    radius: r0 + f * (r1 - r0),
                    arc: 0.0,
                }
            })
            .collect();
        let child = pos.len();
        pos.push(q);
        used_dirs[parent].push(theta);
        used_dirs.push(vec![(theta + PI).rem_euclid(2.0 * PI)]);
        let (a, b) = if rng.random_bool(0.5) { (parent, child) } else { (child, parent) };
        let samples = if a == parent {
            samples
        } else {
            samples.into_iter().rev().collect()
        };
        edges.push(CenterlineEdge { a, b, samples });
    }
    let nodes = pos.iter().map(|&(x, y)| bare_node(x, y)).collect();
    CenterlineGraph::new(1000, 1000, nodes, edges)
}

fn straight_tube(len: f64, r: f64) -> CenterlineGraph {
    CenterlineGraph::new(
        300,
        100,
        vec![bare_node(20.0, 50.0), bare_node(20.0 + len, 50.0)],
        vec![straight_edge(0, 1, (20.0, 50.0), (20.0 + len, 50.0), len as usize - 1, |_| r)],
    )
}

fn mesh_validity() -> Outcome {
    for seed in 0..50u64 {
        let mesh = loft_tube(&mesh_tree(seed), &LoftOptions::default()).map_err(|e| format!("tree {seed}: {e}"))?;
        let r = validate_mesh(&mesh);
        let v = mesh.vertices.len() as i64;
        let f = mesh.triangles.len() as i64;
        ensure!(f % 2 == 0, "tree {seed}: odd face count");
        let e = 3 * f / 2;
        ensure!(
            r.watertight && r.edge_manifold && r.consistently_oriented && r.signed_volume > 0.0,
            "tree {seed}: {r:?}"
        );
        ensure!(v - e + f == 2 && r.euler_characteristic == 2, "tree {seed}: V - E + F = {}", v - e + f);
    }
    let pitch = LoftOptions::default().pixel_pitch;
    let (r, len) = (10.0 * pitch, 100.0 * pitch);
    let mut worst = 0f64;
    for n in [6usize, 8, 16, 33] {
        let opts = LoftOptions {
            n_sides: n,
            ..LoftOptions::default()
        };
        let mesh = loft_tube(&straight_tube(100.0, 10.0), &opts).map_err(|e| e.to_string())?;
        let prism = 0.5 * n as f64 * (2.0 * PI / n as f64).sin() * r * r * len;
        let rel = (validate_mesh(&mesh).signed_volume - prism).abs() / prism;
        worst = worst.max(rel);
        ensure!(rel <= 1e-9, "n = {n}: prism volume off by {rel:e}");
    }
    let opts = LoftOptions {
        n_sides: 64,
        ..LoftOptions::default()
    };
    let mesh = loft_tube(&straight_tube(100.0, 10.0), &opts).map_err(|e| e.to_string())?;
    let cylinder = PI * r * r * len;
    let cyl_rel = (validate_mesh(&mesh).signed_volume - cylinder).abs() / cylinder;
    ensure!(cyl_rel < 0.002, "n = 64: cylinder volume off by {:.3}%", 100.0 * cyl_rel);
    Ok(format!(
        "50/50 closed with chi = 2; prism rel err {worst:.1e}; 64-gon vs cylinder {:.3}%",
        100.0 * cyl_rel
    ))
}

fn stl_exactness() -> Outcome {
    for seed in 0..10u64 {
        let mesh = loft_tube(&mesh_tree(seed), &LoftOptions::default()).map_err(|e| e.to_string())?;
        let bytes = write_stl(&mesh, StlFormat::Binary).map_err(|e| e.to_string())?;
        ensure!(bytes.len() == 84 + 50 * mesh.triangles.len(), "tree {seed}: size {}", bytes.len());
        let back = read_stl(&bytes).map_err(|e| e.to_string())?;
        let again = write_stl(&back, StlFormat::Binary).map_err(|e| e.to_string())?;
        ensure!(again == bytes, "tree {seed}: round trip changed bytes");
    }

    let tri = TriMesh {
        vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        triangles: vec![[0, 1, 2]],
    };
    let one = write_stl(&tri, StlFormat::Binary).map_err(|e| e.to_string())?;
    // 80-byte header, u32 count, then 12 f32 and a u16 per facet.
    let expected = 80 + 4 + (12 * 4 + 2);
    ensure!(one.len() == expected, "single triangle is {} bytes", one.len());
    ensure!(one[80..84] == 1u32.to_le_bytes(), "count field {:?}", &one[80..84]);
    let normal: Vec<f32> = (0..3)
        .map(|i| f32::from_le_bytes(one[84 + 4 * i..88 + 4 * i].try_into().unwrap()))
        .collect();
    ensure!(normal == [0.0, 0.0, 1.0], "normal {normal:?}");

    let malformed = |b: &[u8]| matches!(read_stl(b), Err(angioforge_core::mesh3d::MeshError::MalformedStl(_)));
    let bad: [(&str, Vec<u8>); 5] = [
        ("empty", Vec::new()),
        ("truncated", one[..one.len() - 1].to_vec()),
        ("trailing", [one.clone(), vec![0; 50]].concat()),
        ("short header", one[..83].to_vec()),
        (
            "ascii",
            b"solid x\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nendloop\nendfacet\nendsolid x\n".to_vec(),
        ),
    ];
    for (name, b) in &bad {
        ensure!(malformed(b), "{name} file accepted");
    }
    Ok("10/10 round trips byte-identical; 1 triangle = 134 bytes; 5/5 malformed rejected".into())
}

// ---------------------------------------------------------------------------
// Backend resilience.

fn edit_request() -> EditRequest {
    let step = pipeline_definition().step(2).unwrap().clone();
    EditRequest {
        prompt: step.default_prompt.to_string(),
        step,
        input: GrayImage::from_fn(32, 32, |x, y| (x * 5 + y * 3) as u8).into(),
        session_id: "acceptance".into(),
        attempt: 1,
        flow: FlowSettings::default(),
    }
}

fn backend_resilience() -> Outcome {
    std::env::set_var("AF_ACCEPTANCE_KEY", "sk-acceptance");
    let remote = |url: String, base_ms: u64| {
        RemoteBackend::new(BackendConfig {
            credential_source: Some("AF_ACCEPTANCE_KEY".into()),
            max_retries: 3,
            backoff_base_ms: base_ms,
            timeout_secs: 10,
            ..BackendConfig::remote(url)
        })
        .map_err(|e| e.to_string())
    };
    let req = edit_request();
    let reply = format!(
        "{{\"image\": \"{}\"}}",
        STANDARD.encode(req.input.encode_png().unwrap())
    );

    let stub = StubServer::start(vec![StubResponse::status(429), StubResponse::json(200, reply)]);
    let out = remote(stub.url(), 50)?.edit_image(&req).map_err(|e| format!("429 then 200: {e}"))?;
    ensure!(out.attempts == 2, "429 then 200 took {} attempts", out.attempts);
    ensure!(stub.request_count() == 2, "429 then 200 sent {} requests", stub.request_count());

    let base = 50u64;
    let stub = StubServer::start(vec![StubResponse::status(500)]);
    let err = remote(stub.url(), base)?.edit_image(&req).unwrap_err();
    ensure!(
        matches!(err, BackendError::BackendUnavailable { attempts: 4, .. }),
        "persistent 500 gave {err}"
    );
    let reqs = stub.requests();
    ensure!(reqs.len() == 4, "persistent 500 sent {} requests", reqs.len());
    let mut gaps = Vec::new();
    for k in 1..4 {
        let gap = reqs[k].arrived - reqs[k - 1].arrived;
        let want = Duration::from_millis(base << (k - 1));
        ensure!(
            gap >= want && gap < want + Duration::from_millis(250),
            "gap {k} was {gap:?}, expected {want:?}"
        );
        gaps.push(format!("{}", gap.as_millis()));
    }
    Ok(format!(
        "429->200 in 2 attempts; 500 x4 -> BackendUnavailable, gaps {} ms (base {base} ms)",
        gaps.join("/")
    ))
}

// ---------------------------------------------------------------------------
// API contract.

fn api_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let backend: Arc<dyn ImageEditBackend> = Arc::new(MockBackend::identity());
    let pipeline = Pipeline::new(SessionStore::open(dir.path()).map_err(|e| e.to_string())?, backend);
    let state = Arc::new(AppState::new(pipeline, BackendConfig::mock(), SessionConfig::default()));
    let server = BackgroundServer::start(state, "127.0.0.1:0".parse().unwrap()).map_err(|e| e.to_string())?;
    let base = server.base_url();
    let c = Client::new();
    let net = |e: reqwest::Error| e.to_string();
    let expect = |what: &str, got: StatusCode, want: StatusCode| -> Result<(), String> {
        if got == want {
            Ok(())
        } else {
            Err(format!("{what}: {got}, expected {want}"))
        }
    };
    let mut calls = 0;

    let ph = fontan_phantom(&PhantomOptions {
        size: 256,
        ..PhantomOptions::default()
    });
    let png = Raster::Gray(ph.image).encode_png().unwrap();
    let form = multipart::Form::new().part("image", multipart::Part::bytes(png).file_name("phantom.png"));
    let r = c.post(format!("{base}/sessions")).multipart(form).send().map_err(net)?;
    calls += 1;
    expect("create", r.status(), StatusCode::CREATED)?;
    let created: SessionSummary = r.json().map_err(net)?;
    ensure!(created.cursor == 1, "new session cursor {}", created.cursor);
    let url = |p: &str| format!("{base}/sessions/{}{p}", created.id);

    let r = c.get(url("/outputs/model.stl")).send().map_err(net)?;
    calls += 1;
    expect("model.stl before completion", r.status(), StatusCode::NOT_FOUND)?;

    let custom = "remove the residual speckle next to the pouch";
    for n in 1..=16u8 {
        let r = c.post(url("/advance")).send().map_err(net)?;
        calls += 1;
        expect(&format!("advance {n}"), r.status(), StatusCode::OK)?;
        let mut rec: StepRecord = r.json().map_err(net)?;
        ensure!(rec.step_index == n, "advance {n} ran step {}", rec.step_index);
        if n == 9 {
            let r = c
                .post(url("/steps/9/regenerate"))
                .json(&serde_json::json!({ "prompt": custom }))
                .send()
                .map_err(net)?;
            calls += 1;
            expect("regenerate", r.status(), StatusCode::OK)?;
            rec = r.json().map_err(net)?;
            ensure!(rec.iteration == 2 && rec.prompt_used == custom, "regenerate returned {rec:?}");
        }
        let r = c
            .post(url(&format!("/steps/{n}/iterations/{}/accept", rec.iteration)))
            .send()
            .map_err(net)?;
        calls += 1;
        expect(&format!("accept {n}"), r.status(), StatusCode::OK)?;
    }

    let r = c.get(url("")).send().map_err(net)?;
    calls += 1;
    expect("summary", r.status(), StatusCode::OK)?;
    let summary: SessionSummary = r.json().map_err(net)?;
    ensure!(summary.accepted == 16 && summary.cursor == 17, "summary {summary:?}");
    let r = c.post(url("/advance")).send().map_err(net)?;
    calls += 1;
    expect("advance on complete", r.status(), StatusCode::CONFLICT)?;

    let r = c.get(url("/history")).send().map_err(net)?;
    calls += 1;
    expect("history", r.status(), StatusCode::OK)?;
    let history: Vec<StepRecord> = r.json().map_err(net)?;
    ensure!(history.len() == 17, "history has {} records", history.len());

    for (name, media) in [
        ("projection.png", "image/png"),
        ("flow.png", "image/png"),
        ("report.json", "application/json"),
        ("model.stl", "model/stl"),
    ] {
        let r = c.get(url(&format!("/outputs/{name}"))).send().map_err(net)?;
        calls += 1;
        expect(name, r.status(), StatusCode::OK)?;
        ensure!(r.headers()["content-type"] == media, "{name} served as {:?}", r.headers()["content-type"]);
        let bytes = r.bytes().map_err(net)?;
        let hash = ContentHash::of(&bytes);
        ensure!(summary.outputs.get(name) == Some(&hash), "{name} hash mismatch");
        let r = c.get(url(&format!("/artifacts/{hash}"))).send().map_err(net)?;
        calls += 1;
        expect(&format!("artifact {name}"), r.status(), StatusCode::OK)?;
        ensure!(r.bytes().map_err(net)? == bytes, "artifact bytes differ for {name}");
    }
    let stl = c.get(url("/outputs/model.stl")).send().map_err(net)?.bytes().map_err(net)?;
    calls += 1;
    let mesh = read_stl(&stl).map_err(|e| e.to_string())?;
    ensure!(validate_mesh(&mesh).is_valid(), "downloaded model.stl is invalid");
    Ok(format!("{calls} calls with expected status codes (mock backend)"))
}

// ---------------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome + std::panic::UnwindSafe) -> Outcome {
    std::panic::catch_unwind(f).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() -> ExitCode {
    let run = batch_run();
    let run = &run;
    let criteria: Vec<(&str, &str, Outcome)> = vec![
        ("16-step completion", "16 accepted, 4 artifacts, < 60 s at 1024^2", guarded(|| completion(run))),
        ("segmentation oracle", "200/200 exact", guarded(segmentation_oracle)),
        ("flow conservation", "rel 1e-9, 50 trees", guarded(conservation)),
        ("analytic velocity", "1e-12 / 1e-9", guarded(analytic_velocity)),
        ("stagnation localization", "exactly 1 zone in pouch", guarded(|| stagnation(run))),
        ("mesh validity", "50 trees; prism 1e-9; cylinder 0.2%", guarded(mesh_validity)),
        ("STL bit-exactness", "byte-identical; 134 bytes", guarded(stl_exactness)),
        ("replay determinism", "16/16 hashes", guarded(|| replay_determinism(run))),
        ("backend resilience", "1 retry; 4 attempts, doubling gaps", guarded(backend_resilience)),
        ("API contract", "documented status codes", guarded(api_contract)),
    ];
    let mut failed = 0;
    for (i, (name, tol, outcome)) in criteria.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name} [{tol}]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {name} [{tol}]: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
