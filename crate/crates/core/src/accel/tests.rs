use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::activation::sigmoid;
use crate::features::FeatureMatrix;
use crate::graph::build_graph;
use crate::image::Image;
use crate::model::{ArchConfig, GnnLayer, Layer, MlpHead};
use crate::partition::{partition_vuk, BankAssignment};
use crate::weights::{Linear, SparseWeightMatrix, Triple};

fn random_graph(rng: &mut ChaCha8Rng, w: usize, h: usize, alive: f64) -> GridGraph {
    let px: Vec<f32> = (0..w * h)
        .map(|_| {
            if rng.gen_bool(alive) {
                rng.gen_range(0.2..1.5)
            } else {
                0.0
            }
        })
        .collect();
    build_graph(&Image::new(w, h, px).unwrap(), 0.1)
}

fn single_gnn_model() -> ModelSpec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lin = |r: usize, c: usize| {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let bias = (0..c).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
        Linear::dense(r, c, data, bias).unwrap()
    };
    ModelSpec {
        input_width: 3,
        input_height: 3,
        num_classes: 2,
        layers: vec![
            Layer::Gnn(GnnLayer {
                neighbor: lin(1, 2),
                root: lin(1, 2),
                activation: true,
            }),
            Layer::Flatten,
            Layer::Mlp(MlpHead {
                layers: vec![lin(36, 2)],
            }),
        ],
    }
}

fn kinds(s: &Schedule) -> Vec<KernelKind> {
    s.kernels.iter().map(|k| k.kind()).collect()
}

#[test]
fn worked_cycle_examples() {
    let cfg = AcceleratorConfig::default();
    assert_eq!(vak_cycles(100, 16, &cfg), 13);
    assert_eq!(vuk_cycles(64, 40, &cfg), 20);
    assert_eq!(mtu_cycles(64, 16, &cfg), 8);
    assert_eq!(
        mtu_cycles(
            64,
            16,
            &AcceleratorConfig {
                mtu_cost: MtuCost::Free,
                ..cfg
            }
        ),
        0
    );
    assert_eq!(vak_cycles(0, 16, &cfg), 0);
}

#[test]
fn vak_measures_thirteen_beats() {
    let cfg = AcceleratorConfig::default();
    let n = 10;
    let edges: Vec<Edge> = (0..100)
        .map(|i| Edge {
            src: (i % n) as u32,
            dst: (i / 10) as u32,
            weight: 1.0,
        })
        .collect();
    let k = VakKernel {
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
    let h = FeatureMatrix::from_values(
        n,
        16,
        Layout::VertexMajor,
        (0..n * 16).map(|x| x as f32).collect(),
    )
    .unwrap();
    let mut state = SimState::with_buffers(vec![Some(h.clone()), None]);
    let run = exec_vak(&k, &mut state, &cfg).unwrap();
    assert_eq!(run.cycles, 13);
    assert_eq!(run.bank_loads, vec![50, 50]);
    // Every destination sums all ten sources.
    let out = state.get(1).unwrap();
    for ch in 0..16 {
        let expect: f32 = (0..n).map(|v| h.get(v, ch)).sum();
        assert_eq!(out.get(3, ch), expect);
    }
}

#[test]
fn vak_rejects_feature_major_and_unowned_dst() {
    let cfg = AcceleratorConfig::default();
    let mut k = VakKernel {
        edges: Arc::new(vec![Edge {
            src: 0,
            dst: 1,
            weight: 1.0,
        }]),
        gather: GatherOp::Acc,
        dst_scale: None,
        banks: Arc::new(BankAssignment::single(1, 1)),
        channels: 1,
        input: 0,
        output: 1,
    };
    let fm = FeatureMatrix::<f32>::zeros(2, 1, Layout::FeatureMajor);
    let mut state = SimState::with_buffers(vec![Some(fm), None]);
    assert!(matches!(
        exec_vak(&k, &mut state, &cfg),
        Err(Error::Layout { .. })
    ));
    state.set(0, FeatureMatrix::zeros(2, 1, Layout::VertexMajor));
    assert!(matches!(
        exec_vak(&k, &mut state, &cfg),
        Err(Error::Partition(_))
    ));
    k.edges = Arc::new(Vec::new());
    let run = exec_vak(&k, &mut state, &cfg).unwrap();
    assert_eq!(run.cycles, 0);
}

#[test]
fn vuk_measures_twenty_beats_and_matches_matmul() {
    let cfg = AcceleratorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, cols, n) = (8, 10, 64);
    // Half of the 80 positions, in src-major order.
    let triples: Vec<Triple<f32>> = (0..rows * cols)
        .filter(|k| k % 2 == (k / cols) % 2)
        .map(|k| Triple {
            src: (k / cols) as u32,
            dst: (k % cols) as u32,
            weight: rng.gen_range(-1.0f32..1.0),
        })
        .collect();
    assert_eq!(triples.len(), 40);
    let bias: Vec<f32> = (0..cols).map(|j| j as f32 * 0.1).collect();
    let lin = Linear::sparse(rows, cols, triples, bias).unwrap();
    let w = lin.to_sparse();
    let banks = partition_vuk(&w, cfg.pipelines);
    let k = VukKernel {
        weights: Arc::new(w),
        banks: Arc::new(banks),
        post: PostOp::None,
        num_vertices: n,
        input: 0,
        output: 1,
        dst_offset: 0,
    };
    let h_vm = FeatureMatrix::from_values(
        n,
        rows,
        Layout::VertexMajor,
        (0..n * rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let mut state = SimState::with_buffers(vec![Some(h_vm.to_layout(Layout::FeatureMajor)), None]);
    let run = exec_vuk(&k, cols, &mut state, &cfg).unwrap();
    assert_eq!(run.cycles, 20);
    assert_eq!(run.bank_loads.iter().sum::<usize>(), 40 * 4);
    let out = state.get(1).unwrap();
    for v in 0..n {
        let expect = lin.apply(h_vm.row(v));
        for j in 0..cols {
            assert_eq!(out.get(v, j), expect[j]);
        }
    }
}

#[test]
fn vuk_without_nonzeros_broadcasts_bias() {
    let cfg = AcceleratorConfig::default();
    let w = SparseWeightMatrix {
        rows: 2,
        cols: 3,
        triples: Vec::new(),
        bias: vec![1.0f32, -2.0, 0.5],
    };
    let banks = partition_vuk(&w, cfg.pipelines);
    let k = VukKernel {
        weights: Arc::new(w),
        banks: Arc::new(banks),
        post: PostOp::None,
        num_vertices: 5,
        input: 0,
        output: 1,
        dst_offset: 0,
    };
    let mut state = SimState::with_buffers(vec![
        Some(FeatureMatrix::zeros(5, 2, Layout::FeatureMajor)),
        None,
    ]);
    assert_eq!(exec_vuk(&k, 3, &mut state, &cfg).unwrap().cycles, 0);
    let out = state.get(1).unwrap();
    for v in 0..5 {
        assert_eq!(
            [out.get(v, 0), out.get(v, 1), out.get(v, 2)],
            [1.0, -2.0, 0.5]
        );
    }
    state.set(0, FeatureMatrix::zeros(5, 2, Layout::VertexMajor));
    assert!(matches!(
        exec_vuk(&k, 3, &mut state, &cfg),
        Err(Error::Layout { .. })
    ));
}

#[test]
fn transpose_round_trip() {
    let cfg = AcceleratorConfig::default();
    let m = FeatureMatrix::from_values(
        64,
        16,
        Layout::VertexMajor,
        (0..1024).map(|x| x as f32).collect(),
    )
    .unwrap();
    let (t, cycles) = mtu_transpose(&m, &cfg);
    assert_eq!(cycles, 8);
    assert_eq!(t.layout(), Layout::FeatureMajor);
    assert_eq!(mtu_transpose(&t, &cfg).0, m);
    let one = FeatureMatrix::from_values(1, 1, Layout::VertexMajor, vec![3.0f32]).unwrap();
    assert_eq!(mtu_transpose(&one, &cfg).0.values(), one.values());
}

#[test]
fn single_gnn_schedule_shape() {
    let model = single_gnn_model();
    let g = build_graph(&Image::new(3, 3, vec![1.0; 9]).unwrap(), 0.1);
    let s = lower_model(&model, &g, AcceleratorConfig::default()).unwrap();
    use KernelKind::*;
    assert_eq!(kinds(&s)[..6], [Vak, Mtu, Vuk, Vuk, Mtu, Elementwise]);
    // Flatten, then one dense layer.
    assert_eq!(kinds(&s)[6..], [Elementwise, Vuk]);
    // 12 grid edges in both directions plus 9 self-loops.
    assert_eq!(s.kernels[0].work_items(), 33);
}

#[test]
fn kernel_counts_match_layer_list() {
    let g = build_graph(&Image::new(32, 32, vec![1.0; 1024]).unwrap(), 0.1);
    let compact: ModelSpec<f32> = ModelSpec::init(&ArchConfig::compact(32, 4), 1).unwrap();
    // gnn 6, pool 1, attention 12, gnn 7, pool 1, flatten 1, mlp 2
    assert_eq!(
        lower_model(&compact, &g, AcceleratorConfig::default())
            .unwrap()
            .kernels
            .len(),
        30
    );

    let arch = ArchConfig {
        input_width: 32,
        input_height: 32,
        ..ArchConfig::default()
    };
    let full: ModelSpec<f32> = ModelSpec::init(&arch, 1).unwrap();
    // 6 + 1 + 12 + 7 + 1 + 12 + 7 + 1 + 1 + 2
    let s = lower_model(&full, &g, AcceleratorConfig::default()).unwrap();
    assert_eq!(s.kernels.len(), 50);
    let mtus = kinds(&s).iter().filter(|&&k| k == KernelKind::Mtu).count();
    assert_eq!(mtus, 2 + 4 + 3 + 4 + 3);
}

#[test]
fn lowering_rejects_wrong_input_size() {
    let model = single_gnn_model();
    let g = build_graph(&Image::new(4, 3, vec![1.0; 12]).unwrap(), 0.1);
    assert!(matches!(
        lower_model(&model, &g, AcceleratorConfig::default()),
        Err(Error::Lowering(_))
    ));
}

#[test]
fn mean_aggregate_matches_reference_on_3x3() {
    let model = single_gnn_model();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(&mut rng, 3, 3, 0.8);
    let acc = Accelerator::new(&model, AcceleratorConfig::default()).unwrap();
    let s = acc.lower(&g, None).unwrap();
    let mut state = SimState::new(&s, &g);
    let KernelOp::Vak(k) = &s.kernels[0].op else {
        panic!("first kernel is not an aggregation")
    };
    exec_vak(k, &mut state, acc.config()).unwrap();
    let reference = crate::model::mean_aggregate(&g, &g.input_features::<f32>()).unwrap();
    assert!(rel_err_inf(state.get(k.output).unwrap().values(), reference.values()) <= 1e-6);
}

#[test]
fn simulation_matches_reference_and_analytic_cycles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model: ModelSpec<f32> = ModelSpec::init(&ArchConfig::compact(16, 3), 2).unwrap();
    for l in model.linears_mut() {
        l.bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
    for (i, mode) in [SigmoidMode::Pla, SigmoidMode::Exact]
        .into_iter()
        .enumerate()
    {
        let cfg = AcceleratorConfig {
            sigmoid: mode,
            ..AcceleratorConfig::default()
        };
        let acc = Accelerator::new(&model, cfg).unwrap();
        for _ in 0..5 {
            let g = random_graph(&mut rng, 16, 16, 0.3 + 0.2 * i as f64);
            let (sim, v) = acc.verify(&g, 1e-5).unwrap();
            assert!(v.passed(), "{:?}", v.layer_errors);
            let est = acc.estimate(&g).unwrap();
            for (a, b) in sim.report.kernels.iter().zip(&est.kernels) {
                assert_eq!(
                    (a.cycles, &a.bank_loads),
                    (b.cycles, &b.bank_loads),
                    "kernel {} {}",
                    a.index,
                    a.label
                );
            }
        }
    }
}

#[test]
fn empty_graph_gives_bias_chain() {
    let mut model: ModelSpec<f32> = ModelSpec::init(&ArchConfig::compact(8, 3), 4).unwrap();
    for (k, l) in model.linears_mut().into_iter().enumerate() {
        l.bias.iter_mut().for_each(|b| *b = 0.01 * k as f32);
    }
    let g = build_graph(&Image::new(8, 8, vec![0.0; 64]).unwrap(), 0.1);
    let acc = Accelerator::new(&model, AcceleratorConfig::default()).unwrap();
    let (sim, v) = acc.verify(&g, 0.0).unwrap();
    assert!(v.passed());
    assert!(sim
        .report
        .kernels
        .iter()
        .filter(|k| k.kind == KernelKind::Vak)
        .all(|k| k.work_items == 0));
    let reference = forward(
        &model,
        &g,
        ForwardOptions {
            sigmoid: SigmoidMode::Pla,
            trace: false,
        },
    )
    .unwrap();
    assert_eq!(sim.logits, reference.logits);
}

#[test]
fn latency_conversion() {
    let model = single_gnn_model();
    let g = build_graph(&Image::new(3, 3, vec![1.0; 9]).unwrap(), 0.1);
    let mut r = estimate(&model, &g, AcceleratorConfig::default()).unwrap();
    r.preprocessing_us = 0.0;
    let ns = r.total_cycles() as f64 * 8.0;
    assert!((r.latency_us() * 1e3 - ns).abs() < 1e-9);
    assert_eq!(
        r.total_cycles(),
        r.t_vak() + r.t_vuk() + r.t_mtu() + r.t_elementwise()
    );
}

#[test]
fn more_parallelism_fewer_cycles() {
    let model: ModelSpec<f32> = ModelSpec::init(&ArchConfig::compact(16, 3), 2).unwrap();
    let g = random_graph(&mut ChaCha8Rng::seed_from_u64(1), 16, 16, 0.5);
    let wide = estimate(&model, &g, AcceleratorConfig::default()).unwrap();
    let narrow = estimate(
        &model,
        &g,
        AcceleratorConfig {
            pipelines: 1,
            pes: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(wide.total_cycles() < narrow.total_cycles());
}

#[test]
fn pla_reexport() {
    assert_eq!(sigmoid_pla(0.0f32), 0.5);
    assert_eq!(sigmoid_pla(8.0f64), 1.0);
    assert!((sigmoid_pla(0.3f64) - sigmoid(0.3f64)).abs() < 2e-2);
}

#[test]
fn config_validation() {
    assert!(AcceleratorConfig::default().validate().is_ok());
    assert!(AcceleratorConfig {
        pipelines: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(AcceleratorConfig {
        clock_mhz: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert_eq!("free".parse::<MtuCost>().unwrap(), MtuCost::Free);
    assert!("fast".parse::<MtuCost>().is_err());
}
