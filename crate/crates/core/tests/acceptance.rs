//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line with the
//! measured quantities before asserting; the lines appear without `--nocapture`.
//!
//! The training criteria (5, 6, 8) run real optimizations on the desk-scale
//! cohort; build with optimizations (the workspace test profile does).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transformesh::autodiff::gradcheck::check_gradients;
use transformesh::autodiff::{ParamStore, Tensor};
use transformesh::cohort::{generate_cohort, Cohort, CohortConfig, Group, Split, Subject};
use transformesh::config::KeyValues;
use transformesh::experiment::{run_anomaly, run_protocol, CopyReference, Protocol};
use transformesh::hierarchy::{build_hierarchy, qem_decimate, HierarchyConfig, MeshHierarchy, SparseMatrix};
use transformesh::mesh::shapes::{ellipsoid, icosphere, planar_grid, tetrahedron};
use transformesh::mesh::TriangleMesh;
use transformesh::model::{Model, ModelConfig, SequenceBatch, SlotStatus};
use transformesh::nn::SpiralConv;
use transformesh::pipeline;
use transformesh::spiral::{build_spiral_table, SpiralTable, FILLER};
use transformesh::training::{sequence_loss, toy_gradcheck, train, LossConfig, TrainConfig};
use transformesh::Result;

/// Epochs for the cohort-scale training criteria (6 and 8).
const EPOCHS: usize = 60;

/// Writes to the process stdout directly so the line survives the harness's
/// output capture.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn verdict(criterion: u32, pass: bool, detail: &str) {
    emit(&format!("criterion {criterion}: {} {detail}", if pass { "PASS" } else { "FAIL" }));
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn desk_hierarchy(cohort: &Cohort) -> MeshHierarchy {
    build_hierarchy(&cohort.template, &HierarchyConfig::default()).unwrap()
}

fn random_leaf(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::leaf(shape, data).unwrap()
}

fn weighted(out: Tensor, rng_seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(out.mul(&Tensor::from_vec(out.shape(), w)?)?.sum())
}

#[test]
fn criterion_1_gradients() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_leaf(&mut rng, &[2, 3, 4]);
    let b = random_leaf(&mut rng, &[2, 3, 4]);
    let w = random_leaf(&mut rng, &[4, 5]);
    let r = random_leaf(&mut rng, &[2, 4, 3]);
    let s = random_leaf(&mut rng, &[3, 5]);
    let down = Rc::new(SparseMatrix::from_rows(3, vec![vec![(0, 0.5), (2, 0.5)], vec![(1, 1.0)]]));
    let table = Rc::new(vec![2, 0, FILLER, 1, 1, 2]);
    let ops: Vec<(&str, Vec<Tensor>, Box<dyn Fn() -> Result<Tensor>>)> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new({ let (a, b) = (a.clone(), b.clone()); move || weighted(a.add(&b)?, 1) })),
        ("sub", vec![a.clone(), b.clone()], Box::new({ let (a, b) = (a.clone(), b.clone()); move || weighted(a.sub(&b)?, 2) })),
        ("mul", vec![a.clone(), b.clone()], Box::new({ let (a, b) = (a.clone(), b.clone()); move || weighted(a.mul(&b)?, 3) })),
        ("scale", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.scale(0.7), 4) })),
        ("abs", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.abs(), 5) })),
        ("elu", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.elu(), 6) })),
        ("gelu", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.gelu(), 7) })),
        ("matmul", vec![a.clone(), w.clone()], Box::new({ let (a, w) = (a.clone(), w.clone()); move || weighted(a.matmul(&w)?, 8) })),
        ("bmm", vec![a.clone(), r.clone()], Box::new({ let (a, r) = (a.clone(), r.clone()); move || weighted(a.bmm(&r)?, 9) })),
        ("spmm", vec![a.clone()], Box::new({ let (a, d) = (a.clone(), down.clone()); move || weighted(a.spmm(d.clone())?, 10) })),
        ("gather_rows", vec![a.clone()], Box::new({ let (a, t) = (a.clone(), table.clone()); move || weighted(a.gather_rows(t.clone(), 3)?, 11) })),
        ("concat", vec![a.clone(), b.clone()], Box::new({ let (a, b) = (a.clone(), b.clone()); move || weighted(Tensor::concat(&[a.clone(), b.clone()], 2)?, 12) })),
        ("slice", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.slice(1, 1, 3)?, 13) })),
        ("permute", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.permute(&[1, 2, 0])?, 14) })),
        ("transpose", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.transpose()?, 15) })),
        ("reshape", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.reshape(&[6, 4])?, 16) })),
        ("sum_axis", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.sum_axis(1)?, 17) })),
        ("mean_axis", vec![a.clone()], Box::new({ let a = a.clone(); move || weighted(a.mean_axis(2)?, 18) })),
        ("sum+mean", vec![a.clone()], Box::new({ let a = a.clone(); move || a.sum().add(&a.mean().scale(2.0)) })),
        ("softmax", vec![s.clone()], Box::new({ let s = s.clone(); move || weighted(s.softmax()?, 19) })),
        ("masked_softmax", vec![s.clone()], Box::new({ let s = s.clone(); move || weighted(s.mask_last_axis(&[true, false, false, true, false])?.softmax()?, 20) })),
        ("layer_norm", vec![s.clone()], Box::new({ let s = s.clone(); move || weighted(s.layer_norm(1e-5)?, 21) })),
    ];
    let mut worst_op = ("", 0.0f64);
    for (name, params, f) in &ops {
        let rep = check_gradients(params, f, 1e-5, None).unwrap();
        if rep.max_relative_error >= worst_op.1 {
            worst_op = (name, rep.max_relative_error);
        }
    }
    let e2e = toy_gradcheck(7, 1e-6).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_op.1 <= 1e-4 && e2e.max_relative_error <= 1e-3 && secs < 60.0;
    verdict(
        1,
        pass,
        &format!(
            "ops={} worst_op={}:{:.2e} (tol 1e-4) end_to_end={:.2e} over {} entries (tol 1e-3) time={secs:.1}s (<60s)",
            ops.len(),
            worst_op.0,
            worst_op.1,
            e2e.max_relative_error,
            e2e.checked
        ),
    );
}

/// Spiral convolution written as the per-vertex loop of its definition.
fn naive_spiral_conv(x: &[f64], c_in: usize, table: &SpiralTable, weight: &[f64], bias: &[f64], elu: bool) -> Vec<f64> {
    let (n, l, c_out) = (table.n_vertices(), table.length(), bias.len());
    let mut out = vec![0.0; n * c_out];
    for i in 0..n {
        let mut concat = Vec::with_capacity(l * c_in);
        for &j in table.row(i) {
            if j == FILLER {
                concat.extend(std::iter::repeat_n(0.0, c_in));
            } else {
                concat.extend_from_slice(&x[j * c_in..(j + 1) * c_in]);
            }
        }
        for o in 0..c_out {
            let mut acc = bias[o];
            for (k, v) in concat.iter().enumerate() {
                acc += v * weight[k * c_out + o];
            }
            out[i * c_out + o] = if elu && acc < 0.0 { acc.exp_m1() } else { acc };
        }
    }
    out
}

/// Checks one spiral row against hop-distance rings computed by plain BFS:
/// center first, rings in order, every ring complete except possibly the last
/// listed one, ring 1 starting at the smallest neighbor, consecutive same-ring
/// entries adjacent, padding only once the connected component is exhausted.
fn row_matches_bfs(mesh: &TriangleMesh, table: &SpiralTable, center: usize) -> bool {
    let n = mesh.n_vertices();
    let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            nbrs[a].insert(b);
            nbrs[b].insert(a);
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[center] = 0;
    let mut queue = std::collections::VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        for &v in &nbrs[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let row = table.row(center);
    let listed: Vec<usize> = row.iter().copied().take_while(|&v| v != FILLER).collect();
    if listed.first() != Some(&center) || row[listed.len()..].iter().any(|&v| v != FILLER) {
        return false;
    }
    if listed.iter().collect::<BTreeSet<_>>().len() != listed.len() {
        return false;
    }
    if listed.windows(2).any(|w| dist[w[0]] > dist[w[1]]) {
        return false;
    }
    let last = dist[*listed.last().unwrap()];
    let reachable = dist.iter().filter(|&&d| d != usize::MAX).count();
    if listed.len() < row.len() && listed.len() != reachable {
        return false;
    }
    let mut per_ring: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in &listed {
        *per_ring.entry(dist[v]).or_default() += 1;
    }
    for r in 0..last {
        if per_ring.get(&r).copied().unwrap_or(0) != dist.iter().filter(|&&d| d == r).count() {
            return false;
        }
    }
    let first_ring: Vec<usize> = listed.iter().copied().filter(|&v| dist[v] == 1).collect();
    if !first_ring.is_empty() && first_ring[0] != *nbrs[center].iter().next().unwrap() {
        return false;
    }
    listed
        .windows(2)
        .filter(|w| dist[w[0]] == dist[w[1]])
        .all(|w| nbrs[w[0]].contains(&w[1]))
}

#[test]
fn criterion_2_oracles() {
    let start = Instant::now();
    let ico3 = build_hierarchy(&icosphere(3), &HierarchyConfig::default()).unwrap();
    let meshes: Vec<(&str, TriangleMesh)> = vec![
        ("tetrahedron", tetrahedron()),
        ("icosphere0", icosphere(0)),
        ("icosphere1", icosphere(1)),
        ("icosphere2", icosphere(2)),
        ("ellipsoid2", ellipsoid(2, [1.0, 0.5, 0.5])),
        ("pooled160", ico3.mesh(1).clone()),
        ("pooled40", ico3.mesh(2).clone()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut rows, mut bad_rows, mut worst_conv) = (0usize, Vec::new(), 0.0f64);
    for (name, mesh) in &meshes {
        assert!(mesh.n_vertices() <= 200);
        for length in [1, 4, 9, 19] {
            let table = build_spiral_table(mesh, length, 0).unwrap();
            for v in 0..mesh.n_vertices() {
                rows += 1;
                if !row_matches_bfs(mesh, &table, v) {
                    bad_rows.push(format!("{name}/l{length}/v{v}"));
                }
            }
            for (c_in, c_out, elu) in [(3, 5, true), (4, 2, false)] {
                let mut store = ParamStore::new();
                let conv = SpiralConv::new(&mut store, "c", &table, c_in, c_out, elu, false, &mut rng).unwrap();
                store.jitter(0.1, &mut rng);
                let x: Vec<f64> = (0..2 * mesh.n_vertices() * c_in).map(|_| rng.random_range(-1.0..1.0)).collect();
                let got = conv.forward(&Tensor::from_vec(&[2, mesh.n_vertices(), c_in], x.clone()).unwrap()).unwrap().to_vec();
                let (w, b) = (conv.linear.weight.to_vec(), conv.linear.bias.to_vec());
                let per = mesh.n_vertices() * c_in;
                for bi in 0..2 {
                    let want = naive_spiral_conv(&x[bi * per..(bi + 1) * per], c_in, &table, &w, &b, elu);
                    let got = &got[bi * mesh.n_vertices() * c_out..(bi + 1) * mesh.n_vertices() * c_out];
                    for (g, e) in got.iter().zip(&want) {
                        worst_conv = worst_conv.max((g - e).abs());
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad_rows.is_empty() && worst_conv <= 1e-12 && secs < 10.0;
    verdict(
        2,
        pass,
        &format!(
            "meshes={} rows={rows} bfs_mismatches={} {:?} conv_max_abs_diff={worst_conv:.1e} (tol 1e-12) time={secs:.2}s (<10s)",
            meshes.len(),
            bad_rows.len(),
            bad_rows.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_3_decimation() {
    // A grid in a tilted plane so that coplanarity is not trivially axis-aligned.
    let grid = planar_grid(12);
    let normal = {
        let n: [f64; 3] = [0.3, -0.5, 0.8];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        [n[0] / len, n[1] / len, n[2] / len]
    };
    let u = {
        let t: [f64; 3] = [1.0, 0.0, -normal[0] / normal[2]];
        let len = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        [t[0] / len, t[1] / len, t[2] / len]
    };
    let v = [
        normal[1] * u[2] - normal[2] * u[1],
        normal[2] * u[0] - normal[0] * u[2],
        normal[0] * u[1] - normal[1] * u[0],
    ];
    let offset = 0.7;
    let tilted: Vec<[f64; 3]> = grid
        .vertices()
        .iter()
        .map(|p| std::array::from_fn(|k| p[0] * u[k] + p[1] * v[k] + offset * normal[k]))
        .collect();
    let tilted = grid.with_vertices(tilted).unwrap();
    let coarse = qem_decimate(&tilted, tilted.n_vertices() / 4).unwrap();
    let plane_residual = coarse
        .mesh
        .vertices()
        .iter()
        .map(|p| (p[0] * normal[0] + p[1] * normal[1] + p[2] * normal[2] - offset).abs())
        .fold(0.0, f64::max);

    let h = build_hierarchy(&icosphere(3), &HierarchyConfig::default()).unwrap();
    let mut levels = Vec::new();
    let mut manifold = true;
    for k in 0..h.n_levels() {
        let m = h.mesh(k);
        manifold &= m.is_closed_manifold() && m.euler_characteristic() == 2;
        levels.push(format!("{}v/chi{}", m.n_vertices(), m.euler_characteristic()));
    }
    let mut displacement_ok = true;
    let mut ratios = Vec::new();
    for k in 0..h.n_levels() - 1 {
        let fine = h.mesh(k).flat_vertices();
        let n = h.n_vertices(k);
        let round_trip = h.up(k).apply(&h.down(k).apply(&fine, 1, 3), 1, 3);
        let mean_disp = (0..n)
            .map(|i| (0..3).map(|c| (round_trip[3 * i + c] - fine[3 * i + c]).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64;
        let edge = h.mesh(k).mean_edge_length();
        ratios.push(format!("{:.3}", mean_disp / edge));
        displacement_ok &= mean_disp < edge;
    }
    let pass = plane_residual < 1e-9 && manifold && displacement_ok;
    verdict(
        3,
        pass,
        &format!(
            "grid {}->{} plane_residual={plane_residual:.1e} (tol 1e-9) levels={levels:?} closed_manifold={manifold} up_down_disp/edge={ratios:?} (<1)",
            tilted.n_vertices(),
            coarse.mesh.n_vertices()
        ),
    );
}

#[test]
fn criterion_4_masking() {
    let template = icosphere(2);
    let hcfg = HierarchyConfig {
        factors: vec![4],
        spiral_lengths: vec![9],
    };
    let h = build_hierarchy(&template, &hcfg).unwrap();
    let cfg = ModelConfig {
        width: 16,
        heads: 2,
        channels: vec![8],
        depth: 2,
        hierarchy: hcfg,
        ..ModelConfig::desk("ttm").unwrap()
    };
    let model = Model::new(&cfg, &h).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    model.params().jitter(0.05, &mut rng);
    let base = template.flat_vertices();
    let mesh = |amp: f64, rng: &mut ChaCha8Rng| -> Vec<f64> { base.iter().map(|v| v + rng.random_range(-amp..amp)).collect() };
    use SlotStatus::*;
    let statuses = [Observed, Missing, Observed, Augmented, Missing, Observed, Missing, Missing];
    let reference = mesh(0.05, &mut rng);
    let mut batch = SequenceBatch {
        slots: statuses
            .iter()
            .enumerate()
            .map(|(t, &status)| {
                let truth = mesh(0.05, &mut rng);
                transformesh::model::Slot {
                    status,
                    month: transformesh::cohort::SCHEDULE[t],
                    input: match status {
                        Observed if t == 0 => reference.clone(),
                        Observed => truth.clone(),
                        Augmented => reference.clone(),
                        Missing => truth.clone(),
                    },
                    target: Some(if t == 0 { reference.clone() } else { truth }),
                }
            })
            .collect(),
    };
    let loss_cfg = LossConfig::default();
    let run = |b: &SequenceBatch| {
        model.params().zero_grad();
        let pred = model.forward(b, None).unwrap();
        let loss = sequence_loss(&pred, b, &loss_cfg).unwrap();
        loss.backward().unwrap();
        let grads: Vec<Vec<f64>> = model.params().params().iter().map(|p| p.tensor.grad().unwrap_or_default()).collect();
        (pred.vertices.to_vec(), loss.item(), grads)
    };
    let (out_a, loss_a, grad_a) = run(&batch);
    for (t, s) in batch.slots.iter_mut().enumerate() {
        if s.status == Missing {
            s.input = mesh(25.0, &mut rng);
            s.target = if t % 2 == 0 { None } else { Some(mesh(25.0, &mut rng)) };
        }
    }
    let (out_b, loss_b, grad_b) = run(&batch);
    let n = base.len();
    let unmasked_identical = statuses
        .iter()
        .enumerate()
        .filter(|(_, s)| **s != Missing)
        .all(|(t, _)| out_a[t * n..(t + 1) * n] == out_b[t * n..(t + 1) * n]);
    let all_identical = out_a == out_b;
    let grads_identical = grad_a == grad_b;
    let loss_identical = loss_a.to_bits() == loss_b.to_bits();
    let pass = unmasked_identical && grads_identical && loss_identical;
    verdict(
        4,
        pass,
        &format!(
            "unmasked_outputs_bit_identical={unmasked_identical} all_outputs_bit_identical={all_identical} param_grads_bit_identical={grads_identical} loss_bit_identical={loss_identical} ({loss_a:?})"
        ),
    );
}

#[test]
fn criterion_5_overfit() {
    let start = Instant::now();
    // Without observation noise: i.i.d. per-vertex noise in the targets is not
    // learnable and would put a floor under the loss.
    let cohort = generate_cohort(&CohortConfig {
        n_subjects: 20,
        noise_fraction: 0.0,
        ..CohortConfig::default()
    })
    .unwrap();
    let h = desk_hierarchy(&cohort);
    let subject = cohort
        .subjects
        .iter()
        .filter(|s| s.split == Split::Train)
        .max_by_key(|s| (s.observed_slots().len(), std::cmp::Reverse(s.id())))
        .unwrap();
    let model = Model::new(&ModelConfig::desk("ttm").unwrap(), &h).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let report = train(&model, &[subject.training_batch()], &[], &cfg, None).unwrap();
    let first = report.log[0].train_loss;
    let best = report.log.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    let reduction = 1.0 - best / first;
    let secs = start.elapsed().as_secs_f64();
    let pass = reduction >= 0.9 && secs < 300.0;
    verdict(
        5,
        pass,
        &format!(
            "{} noise=0 visits={} first_loss={first:.4} best_loss={best:.5} reduction={:.1}% (>=90%) time={secs:.1}s (<300s)",
            subject.name(),
            subject.observed_slots().len(),
            100.0 * reduction
        ),
    );
}

fn train_preset(preset: &str, h: &MeshHierarchy, train_set: &[&Subject], val: &[&Subject]) -> Model {
    let model = Model::new(&ModelConfig::desk(preset).unwrap(), h).unwrap();
    let cfg = TrainConfig {
        epochs: EPOCHS,
        ..TrainConfig::default()
    };
    let tr: Vec<_> = train_set.iter().map(|s| s.training_batch()).collect();
    let va: Vec<_> = val.iter().map(|s| s.training_batch()).collect();
    train(&model, &tr, &va, &cfg, None).unwrap();
    model
}

#[test]
fn criterion_6_protocol_ordering() {
    let start = Instant::now();
    let cohort = generate_cohort(&CohortConfig::default()).unwrap();
    let h = desk_hierarchy(&cohort);
    let (tr, va, te) = (cohort.split(Split::Train), cohort.split(Split::Val), cohort.split(Split::Test));
    let ttm = train_preset("ttm", &h, &tr, &va);
    let fcbn = train_preset("fcbn", &h, &tr, &va);

    let mut lines = Vec::new();
    let mut beats_copy = true;
    let mut interp = (0.0, 0.0);
    for p in Protocol::ALL {
        let m = run_protocol(p, &ttm, &te).unwrap();
        let c = run_protocol(p, &CopyReference, &te).unwrap();
        let f = run_protocol(p, &fcbn, &te).unwrap();
        let gain = 1.0 - m.median / c.median;
        beats_copy &= gain >= 0.05;
        if p == Protocol::Interpolation {
            interp = (m.median, f.median);
        }
        lines.push(format!(
            "{p}: ttm={:.5} fcbn={:.5} copy={:.5} gain_vs_copy={:.1}% n={}",
            m.median,
            f.median,
            c.median,
            100.0 * gain,
            m.subjects.len()
        ));
    }
    let ttm_vs_fcbn = interp.0 <= interp.1 * 1.02;
    let sizes = [642, 160, 40];
    let count = |p: &str| ModelConfig::full(p).unwrap().parameter_count(&sizes);
    let (p_ttm, p_fcbn) = (count("ttm"), count("fcbn"));
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        emit(&format!("criterion 6:   {l}"));
    }
    let pass = beats_copy && ttm_vs_fcbn && p_ttm < p_fcbn && secs < 3600.0;
    verdict(
        6,
        pass,
        &format!(
            "(a) ttm beats copy-reference by >=5% on all protocols: {beats_copy}; (b) ttm interpolation {:.5} <= fcbn {:.5} x 1.02: {ttm_vs_fcbn}; full-scale params ttm={p_ttm} < fcbn={p_fcbn}: {}; epochs={EPOCHS} time={secs:.0}s (<3600s)",
            interp.0,
            interp.1,
            p_ttm < p_fcbn
        ),
    );
}

#[test]
fn criterion_7_cohort_statistics() {
    let cohort = generate_cohort(&CohortConfig::default()).unwrap();
    let stats = cohort.visit_stats();
    let analytic = CohortConfig::default().missingness;
    let pass = (stats.mean_visits - 3.25).abs() <= 0.325 && (0.01..=0.05).contains(&stats.complete_fraction);
    verdict(
        7,
        pass,
        &format!(
            "n={} mean_visits={:.3} (3.25 +/- 10%) complete_fraction={:.3} ([0.01, 0.05]) expected_visits={:.3} expected_complete={:.3}",
            cohort.subjects.len(),
            stats.mean_visits,
            stats.complete_fraction,
            analytic.expected_visits(),
            analytic.complete_probability()
        ),
    );
}

#[test]
fn criterion_8_anomaly_localization() {
    let start = Instant::now();
    let cohort = generate_cohort(&CohortConfig::default()).unwrap();
    let h = desk_hierarchy(&cohort);
    let normals = |split: Split| -> Vec<&Subject> {
        cohort.split(split).into_iter().filter(|s| s.spec.group == Group::Normal).collect()
    };
    let (tr, va) = (normals(Split::Train), normals(Split::Val));
    let model = train_preset("ttm", &h, &tr, &va);
    let ids: BTreeSet<usize> = tr.iter().chain(&va).map(|s| s.id()).collect();
    let progressors: Vec<&Subject> = cohort.subjects.iter().filter(|s| s.spec.group == Group::Progressor).collect();
    let report = run_anomaly(&model, &ids, &progressors, &cohort.template, None).unwrap();
    let fraction = report.fraction_at_least(1.5);
    let mut ratios: Vec<f64> = report.subjects.iter().map(|s| s.ratio()).collect();
    ratios.sort_by(f64::total_cmp);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        8,
        fraction >= 0.7,
        &format!(
            "progressors_scored={} skipped={} fraction_ratio>=1.5={:.3} (>=0.70) median_ratio={:.2} train_normals={} time={secs:.0}s",
            report.subjects.len(),
            report.skipped.len(),
            fraction,
            ratios.get(ratios.len() / 2).copied().unwrap_or(f64::NAN),
            tr.len()
        ),
    );
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_9_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut gen_kv = KeyValues::new("acceptance");
    gen_kv.set("n_subjects", 40);
    let mut train_kv = KeyValues::new("acceptance");
    train_kv.set("preset", "ttm");
    train_kv.set("epochs", 2);
    let mut archives = Vec::new();
    let mut losses = Vec::new();
    let mut metrics = Vec::new();
    for run in 0..2 {
        let root = tmp.path().join(format!("run{run}"));
        let cohort_dir = root.join("cohort");
        pipeline::generate(&cohort_dir, &gen_kv).unwrap();
        archives.push(tree_bytes(&cohort_dir));
        let run_dir = root.join("train");
        pipeline::train(&cohort_dir, &run_dir, &train_kv, false, &mut |_| Ok(())).unwrap();
        losses.push(fs::read(run_dir.join("loss.csv")).unwrap());
        let results = root.join("results");
        pipeline::evaluate(&cohort_dir, &run_dir, &results, &Protocol::ALL, Split::Test, "best").unwrap();
        let mut m = tree_bytes(&results.join("metrics"));
        m.insert("best.ckpt".into(), fs::read(run_dir.join("best.ckpt")).unwrap());
        metrics.push(m);
    }
    let files = archives[0].len();
    let archive_same = archives[0] == archives[1];
    let loss_same = losses[0] == losses[1];
    let metrics_same = metrics[0] == metrics[1];
    verdict(
        9,
        archive_same && loss_same && metrics_same && files > 0,
        &format!(
            "archive_files={files} archives_identical={archive_same} loss_csv_identical={loss_same} evaluation_csvs_identical={metrics_same} ({} files)",
            metrics[0].len()
        ),
    );
}
