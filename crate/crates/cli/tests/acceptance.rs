//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sargnn::accel::{
    exec_vak, exec_vuk, Accelerator, AcceleratorConfig, Edge, GatherOp, KernelOp, MtuCost, PostOp,
    Schedule, SimState, VakKernel, VukKernel,
};
use sargnn::activation::{sigmoid, sigmoid_pla, SigmoidMode};
use sargnn::dataset::{synth_dataset, SynthConfig};
use sargnn::model::{graphsage_forward, ArchConfig, GnnLayer};
use sargnn::partition::{lpt, optimal_partition, partition_vak, partition_vuk, BankAssignment};
use sargnn::real::rel_err_inf;
use sargnn::trainer::{
    accuracy, backprop, one_hot, prepare, prepare_training, prune_weights, train, Gradients,
    LabeledGraph, TrainConfig,
};
use sargnn::weights::{Linear, Triple};
use sargnn::{build_graph, FeatureMatrix, GridGraph, Layout, ModelSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// Shared generators

fn random_model(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ModelSpec<f32> {
    let layers = rng.gen_range(1..=3);
    let arch = ArchConfig {
        input_width: w,
        input_height: h,
        num_classes: rng.gen_range(2..=6),
        gnn_widths: (0..layers).map(|_| 2 * rng.gen_range(1..=12)).collect(),
        pool_size: rng.gen_range(2..=3),
        pool_stride: 2,
        attention: rng.gen_bool(0.7),
        attention_reduction: rng.gen_range(1..=4),
        mlp_hidden: (0..rng.gen_range(0..=2))
            .map(|_| rng.gen_range(2..=24))
            .collect(),
    };
    let mut model: ModelSpec<f32> = ModelSpec::init(&arch, rng.gen()).unwrap();
    for l in model.linears_mut() {
        l.bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.3..0.3));
        if rng.gen_bool(0.5) {
            *l = l.pruned(rng.gen_range(0.0..0.5));
        }
    }
    model
}

fn random_graph(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GridGraph {
    let p = rng.gen_range(0.0..=1.0);
    let alive = (0..w * h).map(|_| rng.gen_bool(p)).collect::<Vec<_>>();
    let feats: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.1..2.0)).collect();
    GridGraph::from_mask(w, h, alive, &feats)
}

fn random_config(rng: &mut ChaCha8Rng, sigmoid: SigmoidMode) -> AcceleratorConfig {
    AcceleratorConfig {
        pipelines: rng.gen_range(1..=16),
        pes: rng.gen_range(1..=32),
        mtu_cost: if rng.gen_bool(0.5) {
            MtuCost::Free
        } else {
            MtuCost::Bandwidth
        },
        sigmoid,
        ..AcceleratorConfig::default()
    }
}

/// Cycle formulas evaluated from kernel shapes, independent of the library's
/// own cycle functions.
fn formula_cycles(op: &KernelOp, cfg: &AcceleratorConfig) -> u64 {
    let (p, q) = (cfg.pipelines, cfg.pes);
    let ceil = |a: usize, b: usize| a.div_ceil(b);
    (match op {
        KernelOp::Vak(k) => ceil(k.edges.len(), p) * ceil(k.channels, q),
        KernelOp::Vuk(k) => ceil(k.num_vertices, q) * ceil(k.weights.nnz(), p),
        KernelOp::Mtu(k) => match cfg.mtu_cost {
            MtuCost::Free => 0,
            MtuCost::Bandwidth => ceil(k.num_vertices * k.channels, p * q),
        },
        KernelOp::Elementwise(k) => ceil(k.num_vertices, p) * ceil(k.channels, q),
    }) as u64
}

#[derive(Default)]
struct BeatTally {
    kernels: usize,
    mismatches: usize,
    first: Option<String>,
}

impl BeatTally {
    fn check(
        &mut self,
        schedule: &Schedule,
        report: &sargnn::accel::CycleReport,
        cfg: &AcceleratorConfig,
    ) {
        for (k, m) in schedule.kernels.iter().zip(&report.kernels) {
            self.kernels += 1;
            let expect = formula_cycles(&k.op, cfg);
            if m.cycles != expect {
                self.mismatches += 1;
                self.first.get_or_insert_with(|| {
                    format!("kernel {} {}: {} vs {expect}", m.index, m.label, m.cycles)
                });
            }
        }
        if schedule.kernels.len() != report.kernels.len() {
            self.mismatches += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// 1 and 2: cross-engine equivalence and cycle exactness

fn cross_engine(tally: &mut BeatTally) -> Outcome {
    let t = Instant::now();
    let tol = 1e-5;
    let (mut runs, mut failed) = (0, Vec::new());
    let mut worst = 0.0f64;
    for mode in [SigmoidMode::Pla, SigmoidMode::Exact] {
        for i in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let (w, h) = (rng.gen_range(2..=24), rng.gen_range(2..=24));
            let model = random_model(&mut rng, w, h);
            let graph = random_graph(&mut rng, w, h);
            let cfg = random_config(&mut rng, mode);
            let acc = Accelerator::new(&model, cfg).unwrap();
            let schedule = acc.lower(&graph, None).unwrap();
            let (sim, v) = acc.verify(&graph, tol).unwrap();
            tally.check(&schedule, &sim.report, &cfg);
            worst = v
                .layer_errors
                .iter()
                .map(|e| e.1)
                .fold(worst.max(v.logits_error), f64::max);
            runs += 1;
            if !v.passed() {
                failed.push(format!("pair {i} {mode:?}: {:?}", v.first_divergent));
            }
        }
    }
    let data = synth_dataset(&SynthConfig {
        samples_per_class: 13,
        width: 128,
        height: 128,
        ..SynthConfig::default()
    })
    .unwrap();
    let model: ModelSpec<f32> = ModelSpec::init(&ArchConfig::default(), 11).unwrap();
    let cfg = AcceleratorConfig::default();
    let acc = Accelerator::new(&model, cfg).unwrap();
    for (i, s) in data.samples.iter().take(50).enumerate() {
        let graph = build_graph(&s.image, 0.1);
        let schedule = acc.lower(&graph, None).unwrap();
        let (sim, v) = acc.verify(&graph, tol).unwrap();
        tally.check(&schedule, &sim.report, &cfg);
        worst = v
            .layer_errors
            .iter()
            .map(|e| e.1)
            .fold(worst.max(v.logits_error), f64::max);
        runs += 1;
        if !v.passed() {
            failed.push(format!("default model image {i}: {:?}", v.first_divergent));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failed.is_empty() && secs < 60.0,
        format!("{runs} runs (200 random pairs, 50 default-model images), worst rel err {worst:.2e}, {} failures{}, {secs:.1} s", failed.len(), failed.first().map_or(String::new(), |f| format!(" [{f}]"))),
    )
}

fn spot_values() -> (u64, u64) {
    let cfg = AcceleratorConfig::default();
    // 100 gather edges on 16 channels.
    let n = 10;
    let edges: Vec<Edge> = (0..100)
        .map(|i| Edge {
            src: (i % n) as u32,
            dst: (i / n) as u32,
            weight: 1.0,
        })
        .collect();
    let vak = VakKernel {
        edges: Arc::new(edges),
        gather: GatherOp::Acc,
        dst_scale: None,
        banks: Arc::new(BankAssignment {
            num_banks: 2,
            owner: (0..n as u32).map(|v| v % 2).collect(),
            loads: vec![50, 50],
        }),
        channels: 16,
        input: 0,
        output: 1,
    };
    let h = FeatureMatrix::from_values(n, 16, Layout::VertexMajor, vec![1.0f32; n * 16]).unwrap();
    let mut state = SimState::with_buffers(vec![Some(h), None]);
    let a = exec_vak(&vak, &mut state, &cfg).unwrap().cycles;
    // 64 vertices through 40 nonzero weights.
    let triples: Vec<Triple<f32>> = (0..80)
        .filter(|k| k % 2 == (k / 10) % 2)
        .map(|k| Triple {
            src: (k / 10) as u32,
            dst: (k % 10) as u32,
            weight: 0.5,
        })
        .collect();
    let w = Linear::sparse(8, 10, triples, vec![0.0; 10])
        .unwrap()
        .to_sparse();
    let banks = partition_vuk(&w, cfg.pipelines);
    let vuk = VukKernel {
        weights: Arc::new(w),
        banks: Arc::new(banks),
        post: PostOp::None,
        num_vertices: 64,
        input: 0,
        output: 1,
        dst_offset: 0,
    };
    let h = FeatureMatrix::from_values(64, 8, Layout::FeatureMajor, vec![1.0f32; 64 * 8]).unwrap();
    let mut state = SimState::with_buffers(vec![Some(h), None]);
    let b = exec_vuk(&vuk, 10, &mut state, &cfg).unwrap().cycles;
    (a, b)
}

fn cycle_exactness(tally: &BeatTally) -> Outcome {
    let (a, b) = spot_values();
    outcome(
        tally.mismatches == 0 && tally.kernels > 0 && a == 13 && b == 20,
        format!(
            "{} kernels checked, {} mismatches{}; spot values VAK {a} (13), VUK {b} (20)",
            tally.kernels,
            tally.mismatches,
            tally
                .first
                .as_ref()
                .map_or(String::new(), |f| format!(" [{f}]"))
        ),
    )
}

// ---------------------------------------------------------------------------
// 3: GraphSAGE oracle

fn dense_oracle(
    w: usize,
    alive: &[bool],
    h: &[Vec<f64>],
    wn: &[Vec<f64>],
    bn: &[f64],
    ws: &[Vec<f64>],
    bs: &[f64],
) -> Vec<f64> {
    let cells: Vec<usize> = (0..alive.len()).filter(|&c| alive[c]).collect();
    let n = cells.len();
    let out = bn.len();
    let mut result = Vec::with_capacity(n * 2 * out);
    for i in 0..n {
        let (xi, yi) = ((cells[i] % w) as i64, (cells[i] / w) as i64);
        let adj: Vec<usize> = (0..n)
            .filter(|&j| {
                let (xj, yj) = ((cells[j] % w) as i64, (cells[j] / w) as i64);
                (xi - xj).abs() + (yi - yj).abs() <= 1
            })
            .collect();
        let c = h[i].len();
        let z: Vec<f64> = (0..c)
            .map(|ch| adj.iter().map(|&j| h[j][ch]).sum::<f64>() / adj.len() as f64)
            .collect();
        for o in 0..out {
            let v: f64 = (0..c).map(|ch| z[ch] * wn[ch][o]).sum::<f64>() + bn[o];
            result.push(v.max(0.0));
        }
        for o in 0..out {
            let v: f64 = (0..c).map(|ch| h[i][ch] * ws[ch][o]).sum::<f64>() + bs[o];
            result.push(v.max(0.0));
        }
    }
    result
}

fn oracle_case(rng: &mut ChaCha8Rng, w: usize, hgt: usize, alive: Vec<bool>) -> f64 {
    let c = rng.gen_range(1..=4);
    let out = rng.gen_range(1..=4);
    let graph = GridGraph::from_mask(w, hgt, alive.clone(), &vec![1.0; w * hgt]);
    let n = graph.num_vertices();
    let mut mat = |r: usize, k: usize| -> Vec<Vec<f64>> {
        (0..r)
            .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let h_cells = mat(n, c);
    let wn = mat(c, out);
    let ws = mat(c, out);
    let bn: Vec<f64> = (0..out).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let bs: Vec<f64> = (0..out).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let expect = dense_oracle(w, &alive, &h_cells, &wn, &bn, &ws, &bs);
    // Oracle rows are in raster order; the library's vertices may not be.
    let raster_rank = |cell: usize| (0..cell).filter(|&x| alive[x]).count();
    let mut hm = FeatureMatrix::zeros(n, c, Layout::VertexMajor);
    for v in 0..n {
        hm.row_mut(v)
            .copy_from_slice(&h_cells[raster_rank(graph.vertex_cell(v))]);
    }
    let flat = |m: &[Vec<f64>]| m.iter().flatten().copied().collect::<Vec<f64>>();
    let layer = GnnLayer {
        neighbor: Linear::dense(c, out, flat(&wn), bn).unwrap(),
        root: Linear::dense(c, out, flat(&ws), bs).unwrap(),
        activation: true,
    };
    let got = graphsage_forward(&graph, &hm, &layer).unwrap();
    let mut got_raster = vec![0.0; n * 2 * out];
    for v in 0..n {
        let r = raster_rank(graph.vertex_cell(v));
        got_raster[r * 2 * out..(r + 1) * 2 * out].copy_from_slice(got.row(v));
    }
    rel_err_inf(&got_raster, &expect)
}

fn graphsage_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut cases, mut worst) = (0usize, 0.0f64);
    for w in 1..=5 {
        for hgt in 1..=5 {
            let cells = w * hgt;
            // Every mask where enumerable, else the full grid plus random masks.
            let masks: Vec<Vec<bool>> = if cells <= 12 {
                (0u32..1 << cells)
                    .map(|m| (0..cells).map(|c| m >> c & 1 == 1).collect())
                    .collect()
            } else {
                let mut ms = vec![vec![true; cells]];
                for _ in 0..2000 {
                    let p = rng.gen_range(0.0..=1.0);
                    ms.push((0..cells).map(|_| rng.gen_bool(p)).collect());
                }
                ms
            };
            for mask in masks {
                for _ in 0..20 {
                    worst = worst.max(oracle_case(&mut rng, w, hgt, mask.clone()));
                    cases += 1;
                }
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{cases} cases (all shapes to 5x5, 20 weight draws each), worst rel err {worst:.2e}, {:.1} s", t.elapsed().as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 4: gradient check

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let eps = 1e-6;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    let mut kinds = std::collections::BTreeSet::new();
    for trial in 0..4u64 {
        let mut arch = ArchConfig::compact(8, 3);
        if trial % 2 == 1 {
            arch.gnn_widths = vec![4, 8, 8];
        }
        let mut model: ModelSpec<f64> = ModelSpec::init(&arch, trial).unwrap();
        for l in model.linears_mut() {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.2..0.2));
        }
        let feats: Vec<f32> = (0..64).map(|_| rng.gen_range(0.2f32..1.5)).collect();
        let graph =
            GridGraph::from_mask(8, 8, (0..64).map(|_| rng.gen_bool(0.6)).collect(), &feats);
        let y: Vec<f64> = one_hot(trial as usize % 3, 3);
        let loss = |m: &ModelSpec<f64>| {
            let mut g = Gradients::zeros_like(m);
            backprop(m, &graph, &y, &mut g).unwrap().0
        };
        let mut g = Gradients::zeros_like(&model);
        backprop(&model, &graph, &y, &mut g).unwrap();
        let names = model.linear_names();
        for b in 0..names.len() {
            kinds.insert(
                names[b]
                    .split(|c: char| c.is_ascii_digit())
                    .next()
                    .unwrap_or("")
                    .to_string(),
            );
            let n = model.linears()[b].num_weights();
            for _ in 0..6 {
                let k = rng.gen_range(0..n);
                let w0 = model.linears()[b].weight(k);
                *model.linears_mut()[b].weight_mut(k) = w0 + eps;
                let up = loss(&model);
                *model.linears_mut()[b].weight_mut(k) = w0 - eps;
                let down = loss(&model);
                *model.linears_mut()[b].weight_mut(k) = w0;
                let fd = (up - down) / (2.0 * eps);
                let bp = g.blocks[b].weights[k];
                worst = worst.max((fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-6));
                checked += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let all_kinds = ["gnn", "attention", "mlp"]
        .iter()
        .all(|k| kinds.contains(*k));
    outcome(
        worst <= 1e-5 && checked >= 100 && all_kinds && secs < 30.0,
        format!("{checked} weights over {kinds:?}, worst rel err {worst:.2e}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6: partitioning

fn lpt_bound() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = 0;
    let mut worst_ratio = 1.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let p = rng.gen_range(2..=4);
        let items: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=100)).collect();
        let opt = optimal_partition(&items, p).unwrap();
        let got = lpt(&items, p).makespan();
        if !(opt <= got && 3 * got <= 4 * opt) {
            bad += 1;
        }
        worst_ratio = worst_ratio.max(got as f64 / opt as f64);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        bad == 0 && secs < 10.0,
        format!("1000 instances, {bad} violations, worst LPT/opt {worst_ratio:.4}, {secs:.2} s"),
    )
}

fn vak_balance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(4..=64), rng.gen_range(4..=64));
        let pixels: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = sargnn::Image::new(w, h, pixels).unwrap();
        let g = build_graph(&img, rng.gen_range(0.0..0.95));
        let p = [2, 4, 8, 16][rng.gen_range(0..4)];
        worst = worst.max(partition_vak(&g, p).imbalance());
    }
    let full = build_graph(&sargnn::Image::new(4, 4, vec![1.0; 16]).unwrap(), 0.0);
    let loads = partition_vak(&full, 2).loads;
    outcome(
        worst <= 10 && loads == vec![24, 24],
        format!("100 pruned graphs, worst imbalance {worst}; 4x4 p=2 loads {loads:?}"),
    )
}

// ---------------------------------------------------------------------------
// 7: pruning on the synthetic task

struct Trained {
    model: ModelSpec<f32>,
    test_pruned: Vec<LabeledGraph>,
}

fn agreement(a: &ModelSpec<f32>, b: &ModelSpec<f32>, data: &[LabeledGraph]) -> f64 {
    let same = data
        .iter()
        .filter(|s| a.predict(&s.graph).unwrap() == b.predict(&s.graph).unwrap())
        .count();
    same as f64 / data.len() as f64
}

fn pruning() -> (Outcome, Trained) {
    let t = Instant::now();
    let (train_set, test_set) = synth_dataset(&SynthConfig::default()).unwrap().split(0.25);
    let arch = ArchConfig::compact(32, 4);
    let train_graphs = prepare_training(&train_set, &TrainConfig::default());
    let test_full = prepare(&test_set, 0.0);
    let test_pruned = prepare(&test_set, 0.1);

    // Dense model.
    let dense_cfg = TrainConfig {
        epochs: 40,
        seed: 1,
        ..TrainConfig::default()
    };
    let init: ModelSpec<f32> = ModelSpec::init(&arch, dense_cfg.seed).unwrap();
    let dense = train(&init, &train_graphs, None, &dense_cfg).unwrap().model;
    let acc_full = accuracy(&dense, &test_full).unwrap();
    let acc_pruned = accuracy(&dense, &test_pruned).unwrap();
    let v_full: usize = test_full.iter().map(|s| s.graph.num_vertices()).sum();
    let v_pruned: usize = test_pruned.iter().map(|s| s.graph.num_vertices()).sum();
    let removed = 1.0 - v_pruned as f64 / v_full as f64;
    let pass_a = acc_full >= 0.95;
    let pass_b = removed >= 0.85 && (acc_full - acc_pruned).abs() <= 0.01 + 1e-12;

    // Lasso model, then weight pruning.
    let lasso_cfg = TrainConfig {
        lambda: 0.05,
        learning_rate: 3e-3,
        epochs: 120,
        seed: 1,
        ..TrainConfig::default()
    };
    let init: ModelSpec<f32> = ModelSpec::init(&arch, lasso_cfg.seed).unwrap();
    let lasso = train(&init, &train_graphs, None, &lasso_cfg).unwrap().model;
    let (sparse, report) = prune_weights(&lasso, 1e-3);
    let max_density = report.iter().map(|d| d.density).fold(0.0, f64::max);
    let agree_pruned = agreement(&lasso, &sparse, &test_pruned);
    let agree_full = agreement(&lasso, &sparse, &test_full);
    let pass_c = max_density <= 0.33 && agree_pruned >= 0.99 && agree_full >= 0.99;
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "(a) dense test acc {:.1}% [{}]; (b) {:.1}% vertices removed, acc {:.1}% -> {:.1}% [{}]; \
         (c) max block density {max_density:.3}, agreement {:.1}% pruned / {:.1}% unpruned inputs, \
         sparse acc {:.1}% [{}]; {secs:.0} s",
        100.0 * acc_full,
        if pass_a { "ok" } else { "fail" },
        100.0 * removed,
        100.0 * acc_full,
        100.0 * acc_pruned,
        if pass_b { "ok" } else { "fail" },
        100.0 * agree_pruned,
        100.0 * agree_full,
        100.0 * accuracy(&sparse, &test_pruned).unwrap(),
        if pass_c { "ok" } else { "fail" },
    );
    (
        outcome(pass_a && pass_b && pass_c && secs < 600.0, detail),
        Trained {
            model: dense,
            test_pruned,
        },
    )
}

// ---------------------------------------------------------------------------
// 8: latency scaling

type Point = (usize, u64);

/// Pairs `(i, j)` with `|V_i| < |V_j|` but `C_i > C_j`.
fn monotone_violations(points: &[Point]) -> (usize, Option<(Point, Point)>) {
    let mut count = 0;
    let mut example = None;
    for a in points {
        for b in points {
            if a.0 < b.0 && a.1 > b.1 {
                count += 1;
                example.get_or_insert((*a, *b));
            }
        }
    }
    (count, example)
}

fn latency_scaling(trained: &Trained) -> Outcome {
    let acc = Accelerator::new(&trained.model, AcceleratorConfig::default()).unwrap();
    let mut est = Vec::new();
    let mut sim = Vec::new();
    let mut edges = Vec::new();
    for s in &trained.test_pruned {
        let v = s.graph.num_vertices();
        est.push((v, acc.estimate(&s.graph).unwrap().total_cycles()));
        sim.push((
            v,
            acc.simulate(&s.graph, None).unwrap().report.total_cycles(),
        ));
        edges.push(s.graph.num_edges());
    }
    let (ve, ex_e) = monotone_violations(&est);
    let (vs, _) = monotone_violations(&sim);
    let lat: Vec<u64> = sim.iter().map(|x| x.1).collect();
    let spread = lat.iter().max().unwrap() - lat.iter().min().unwrap();
    let vs_range = (
        sim.iter().map(|x| x.0).min().unwrap(),
        sim.iter().map(|x| x.0).max().unwrap(),
    );
    let edge_range = (edges.iter().min().unwrap(), edges.iter().max().unwrap());
    let agree = est == sim;
    let mut detail = format!(
        "{} images, |V| {}..{}, |E| {}..{}, cycles {}..{} (spread {spread}); non-monotone pairs: estimate {ve}, simulate {vs}; estimate==simulate {agree}",
        sim.len(),
        vs_range.0,
        vs_range.1,
        edge_range.0,
        edge_range.1,
        lat.iter().min().unwrap(),
        lat.iter().max().unwrap()
    );
    if let Some((a, b)) = ex_e {
        detail.push_str(&format!(
            "; e.g. |V|={} -> {} cycles but |V|={} -> {} cycles",
            a.0, a.1, b.0, b.1
        ));
    }
    outcome(ve == 0 && vs == 0 && spread > 0 && agree, detail)
}

// ---------------------------------------------------------------------------
// 9: piecewise-linear sigmoid

fn sigmoid_pla_check() -> Outcome {
    let mut max_dev = 0.0f64;
    let mut max_anti = 0.0f64;
    for i in -8000..=8000 {
        let x = i as f64 * 1e-3;
        max_dev = max_dev.max((sigmoid_pla(x) - sigmoid(x)).abs());
        let xf = x as f32;
        max_dev = max_dev.max((sigmoid_pla(xf) as f64 - sigmoid(x)).abs());
        max_anti = max_anti.max((sigmoid_pla(x) + sigmoid_pla(-x) - 1.0).abs());
        max_anti = max_anti.max((sigmoid_pla(xf) as f64 + sigmoid_pla(-xf) as f64 - 1.0).abs());
    }
    let zero = sigmoid_pla(0.0f32) == 0.5 && sigmoid_pla(0.0f64) == 0.5;
    outcome(
        max_dev <= 2e-2 && zero && max_anti <= 1e-7,
        format!("max deviation {max_dev:.5} on 16001 points, sigma(0)=0.5 {zero}, antisymmetry error {max_anti:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 10: determinism of every command

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn run_pipeline(root: &Path) -> Result<(), String> {
    let cfg =
        "[data]\nper_class = 12\nsize = 16\nforeground_fraction = 0.12\n\n[train]\nepochs = 4\n";
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(root.join("run.toml"), cfg).unwrap();
    let steps: [&[&str]; 7] = [
        &["--out", "data", "gen-data"],
        &[
            "--out",
            "train",
            "--i-weight",
            "0.01",
            "train",
            "--data",
            "data",
        ],
        &[
            "--out",
            "prune",
            "--i-weight",
            "0.02",
            "prune",
            "--model",
            "train/model.json",
            "--data",
            "data",
        ],
        &[
            "--out",
            "infer",
            "infer",
            "--model",
            "train/model.json",
            "--manifest",
            "data/test.csv",
        ],
        &[
            "--out",
            "simulate",
            "simulate",
            "--model",
            "prune/model_pruned.json",
            "--manifest",
            "data/test.csv",
            "--verify",
        ],
        &[
            "--out",
            "estimate",
            "estimate",
            "--model",
            "train/model.json",
            "--manifest",
            "data/test.csv",
        ],
        &[
            "--out",
            "estimate_v",
            "estimate",
            "--model",
            "train/model.json",
            "--vertices",
            "100",
        ],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_sargnn"))
            .current_dir(root)
            .args(["--config", "run.toml", "--no-timestamp"])
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if let Err(e) = run_pipeline(&a).and_then(|_| run_pipeline(&b)) {
        return outcome(false, format!("command failed: {e}"));
    }
    let (fa, fb) = (files(&a), files(&b));
    let csvs = fa.iter().filter(|f| f.0.ends_with(".csv")).count();
    let differing: Vec<&String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| &x.0)
        .collect();
    let same_set = fa.iter().map(|f| &f.0).eq(fb.iter().map(|f| &f.0));
    outcome(
        same_set && differing.is_empty(),
        format!(
            "6 commands run twice, {} files ({csvs} CSV), {} differ {:?}",
            fa.len(),
            differing.len(),
            differing
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut tally = BeatTally::default();
    results.push((1, "cross-engine equivalence", cross_engine(&mut tally)));
    results.push((2, "cycle-model exactness", cycle_exactness(&tally)));
    results.push((3, "GraphSAGE dense oracle", graphsage_oracle()));
    results.push((4, "finite-difference gradient check", gradient_check()));
    results.push((5, "LPT 4/3 bound", lpt_bound()));
    results.push((6, "VAK bank balance", vak_balance()));
    let (o7, trained) = pruning();
    results.push((7, "input and weight pruning", o7));
    results.push((8, "latency monotone in |V|", latency_scaling(&trained)));
    results.push((9, "piecewise-linear sigmoid", sigmoid_pla_check()));
    results.push((10, "byte-identical reruns", determinism()));

    println!();
    for (n, name, o) in &results {
        println!(
            "{} criterion {n:>2} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "\n{} of {} criteria passed in {:.0} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
