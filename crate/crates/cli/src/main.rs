mod config;
mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sargnn::accel::{Accelerator, CycleReport};
use sargnn::dataset::{
    load_dataset, read_manifest, synth_dataset, write_manifest, Dataset, Split, TEMPLATES,
};
use sargnn::image::read_image;
use sargnn::model::{argmax, load_model, save_model};
use sargnn::trainer::{
    density_report, prepare, prepare_training, prune_weights, train_with, LayerDensity,
};
use sargnn::{build_graph, GridGraph, Image, ModelSpec};

use config::RunConfig;
use output::{cycle_rows, cycle_svg, preamble, write_csv, CYCLE_COLUMNS};

/// Grid-graph GNN pipeline: data, training, pruning, inference and
/// accelerator simulation.
#[derive(Debug, Parser)]
#[command(name = "sargnn", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    pipelines: Option<usize>,
    #[arg(long, global = true)]
    pes: Option<usize>,
    #[arg(long, global = true)]
    clock_mhz: Option<f64>,
    #[arg(long, global = true, value_parser = ["free", "bandwidth"])]
    mtu_cost: Option<String>,
    /// Input pruning threshold (training graphs for `train`, inputs otherwise).
    #[arg(long, global = true)]
    i_vertex: Option<f32>,
    #[arg(long, global = true)]
    i_weight: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Omit timestamps and zero wall-clock columns so reruns are byte-identical.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic image set with train/test manifests.
    GenData,
    /// Train a model; writes model.json and training.csv.
    Train {
        /// Directory holding train.csv and test.csv manifests. Generates the
        /// synthetic set in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Drop weights below --i-weight; writes model_pruned.json and pruning.csv.
    Prune {
        #[arg(long)]
        model: PathBuf,
        /// Manifest directory used to report agreement with the dense model.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Reference-engine predictions.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Run the accelerator simulator; writes predictions and cycle reports.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Compare every layer with the reference engine (1e-5 relative).
        #[arg(long)]
        verify: bool,
    },
    /// Analytic cycle estimate; writes cycles.csv and cycles.svg.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Synthetic input whose first N raster cells are alive.
        #[arg(long)]
        vertices: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    image: Vec<PathBuf>,
    /// `path,label` manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

struct Input {
    name: String,
    image: Image,
    label: Option<usize>,
}

fn load_inputs(args: &InputArgs) -> Result<Vec<Input>> {
    let mut inputs = Vec::new();
    for p in &args.image {
        let image = read_image(p).with_context(|| format!("reading {}", p.display()))?;
        inputs.push(Input {
            name: p.display().to_string(),
            image,
            label: None,
        });
    }
    if let Some(m) = &args.manifest {
        for (p, label) in
            read_manifest(m).with_context(|| format!("reading manifest {}", m.display()))?
        {
            let image = read_image(&p).with_context(|| format!("reading {}", p.display()))?;
            inputs.push(Input {
                name: p.display().to_string(),
                image,
                label: Some(label),
            });
        }
    }
    Ok(inputs)
}

fn check_input_size(model: &ModelSpec<f32>, input: &Input) -> Result<()> {
    ensure!(
        input.image.width == model.input_width && input.image.height == model.input_height,
        "{} is {}x{}, model expects {}x{}",
        input.name,
        input.image.width,
        input.image.height,
        model.input_width,
        model.input_height
    );
    Ok(())
}

/// Graph at `i_vertex` and the wall-clock microseconds spent building it.
fn timed_graph(image: &Image, i_vertex: f32, clock: bool) -> (GridGraph, f64) {
    let t = Instant::now();
    let g = build_graph(image, i_vertex);
    let us = if clock {
        t.elapsed().as_secs_f64() * 1e6
    } else {
        0.0
    };
    (g, us)
}

struct Ctx {
    cli: Cli,
    cfg: RunConfig,
}

impl Ctx {
    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.cli.out)
            .with_context(|| format!("creating output directory {}", self.cli.out.display()))?;
        Ok(self.cli.out.join(name))
    }

    fn preamble(&self, command: &str) -> String {
        preamble(command, &self.cfg.header(), !self.cli.no_timestamp)
    }

    fn clock(&self) -> bool {
        !self.cli.no_timestamp
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let training = matches!(cli.command, Command::Train { .. });
    let cfg = RunConfig::resolve(&cli, training)?;
    let ctx = Ctx { cli, cfg };
    match &ctx.cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Train { data } => cmd_train(&ctx, data.as_deref()),
        Command::Prune { model, data } => cmd_prune(&ctx, model, data.as_deref()),
        Command::Infer { model, input } => cmd_infer(&ctx, model, input),
        Command::Simulate {
            model,
            input,
            verify,
        } => cmd_simulate(&ctx, model, input, *verify),
        Command::Estimate {
            model,
            input,
            vertices,
        } => cmd_estimate(&ctx, model, input, *vertices),
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let ds = synth_dataset(&ctx.cfg.data.synth())?;
    let dir = ctx.out("images")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let names: Vec<String> = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| format!("images/{i:04}_{}.csv", TEMPLATES[s.label]))
        .collect();
    names
        .par_iter()
        .zip(&ds.samples)
        .try_for_each(|(name, s)| -> Result<()> {
            let path = ctx.cli.out.join(name);
            std::fs::write(&path, s.image.to_csv())
                .with_context(|| format!("writing {}", path.display()))
        })?;
    let entries: Vec<(String, usize)> = names
        .iter()
        .cloned()
        .zip(ds.samples.iter().map(|s| s.label))
        .collect();
    write_manifest(&ctx.out("all.csv")?, &entries)?;
    let n_test_per = |n: usize| ((n as f64 * ctx.cfg.data.test_fraction).round() as usize).min(n);
    let per_class = ctx.cfg.data.per_class;
    let mut seen = vec![0usize; ds.num_classes];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for e in &entries {
        let k = &mut seen[e.1];
        if *k < per_class - n_test_per(per_class) {
            train.push(e.clone());
        } else {
            test.push(e.clone());
        }
        *k += 1;
    }
    write_manifest(&ctx.out("train.csv")?, &train)?;
    write_manifest(&ctx.out("test.csv")?, &test)?;

    println!(
        "wrote {} images ({} train, {} test) to {}",
        ds.len(),
        train.len(),
        test.len(),
        ctx.cli.out.display()
    );
    let t = ctx.cfg.i_vertex;
    for c in 0..ds.num_classes {
        let imgs: Vec<&Image> = ds
            .samples
            .iter()
            .filter(|s| s.label == c)
            .map(|s| &s.image)
            .collect();
        let px: usize = imgs.iter().map(|i| i.pixels.len()).sum();
        let alive: usize = imgs
            .iter()
            .map(|i| i.pixels.iter().filter(|&&p| p >= t).count())
            .sum();
        let mean: f64 = imgs
            .iter()
            .flat_map(|i| &i.pixels)
            .map(|&p| p as f64)
            .sum::<f64>()
            / px.max(1) as f64;
        println!(
            "class {c} ({:>5}): {:>3} images, mean pixel {mean:.4}, share >= {t}: {:.2}%",
            TEMPLATES[c],
            imgs.len(),
            100.0 * alive as f64 / px.max(1) as f64
        );
    }
    Ok(())
}

fn load_split(ctx: &Ctx, data: Option<&Path>) -> Result<(Dataset, Dataset)> {
    match data {
        None => Ok(synth_dataset(&ctx.cfg.data.synth())?.split(ctx.cfg.data.test_fraction)),
        Some(dir) => {
            let read = |name: &str, split| -> Result<Dataset> {
                let m = dir.join(name);
                let entries =
                    read_manifest(&m).with_context(|| format!("reading {}", m.display()))?;
                let classes = entries
                    .iter()
                    .map(|e| e.1 + 1)
                    .max()
                    .unwrap_or(0)
                    .max(ctx.cfg.data.classes);
                Ok(load_dataset(&m, classes, split)?)
            };
            let (mut train, mut test) = (
                read("train.csv", Split::Train)?,
                read("test.csv", Split::Test)?,
            );
            let classes = train.num_classes.max(test.num_classes);
            train.num_classes = classes;
            test.num_classes = classes;
            Ok((train, test))
        }
    }
}

fn cmd_train(ctx: &Ctx, data: Option<&Path>) -> Result<()> {
    let (train_set, test_set) = load_split(ctx, data)?;
    let first = train_set.samples.first().context("training set is empty")?;
    let (w, h) = (first.image.width, first.image.height);
    let arch = ctx.cfg.model.arch(w, h, train_set.num_classes);
    let model: ModelSpec<f32> = ModelSpec::init(&arch, ctx.cfg.train.seed)?;
    let tc = &ctx.cfg.train;
    let train_graphs = prepare_training(&train_set, tc);
    let test_graphs = prepare(&test_set, ctx.cfg.i_vertex);
    let outcome = train_with(&model, &train_graphs, Some(&test_graphs), tc, |s| {
        eprintln!(
            "epoch {:>4}  loss {:>12.4}  train {:.4}  test {:.4}",
            s.epoch,
            s.loss,
            s.train_acc,
            s.test_acc.unwrap_or(f64::NAN)
        );
    })?;
    save_model(&outcome.model, &ctx.out("model.json")?)?;
    let rows = outcome.history.iter().map(|s| {
        [
            s.epoch.to_string(),
            format!("{:.6}", s.loss),
            format!("{:.6}", s.train_acc),
            s.test_acc.map_or(String::new(), |a| format!("{a:.6}")),
        ]
    });
    write_csv(
        &ctx.out("training.csv")?,
        &ctx.preamble("train"),
        &["epoch", "loss", "train_acc", "test_acc"],
        rows,
    )?;
    if tc.i_weight > 0.0 {
        let (pruned, report) = prune_weights(&outcome.model, tc.i_weight);
        save_model(&pruned, &ctx.out("model_pruned.json")?)?;
        write_pruning(ctx, &report)?;
    }
    if let Some(last) = outcome.history.last() {
        println!(
            "final loss {:.4}, train acc {:.4}, test acc {:.4}",
            last.loss,
            last.train_acc,
            last.test_acc.unwrap_or(0.0)
        );
    }
    Ok(())
}

fn write_pruning(ctx: &Ctx, report: &[LayerDensity]) -> Result<()> {
    let rows = report.iter().map(|d| {
        [
            d.layer.clone(),
            d.rows.to_string(),
            d.cols.to_string(),
            d.nnz.to_string(),
            format!("{:.6}", d.density),
        ]
    });
    write_csv(
        &ctx.out("pruning.csv")?,
        &ctx.preamble("prune"),
        &["layer", "rows", "cols", "nnz", "density"],
        rows,
    )
}

fn cmd_prune(ctx: &Ctx, model_path: &Path, data: Option<&Path>) -> Result<()> {
    let model =
        load_model(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let before = density_report(&model);
    let (pruned, report) = prune_weights(&model, ctx.cfg.train.i_weight);
    save_model(&pruned, &ctx.out("model_pruned.json")?)?;
    write_pruning(ctx, &report)?;
    let (nnz0, nnz1): (usize, usize) = (
        before.iter().map(|d| d.nnz).sum(),
        report.iter().map(|d| d.nnz).sum(),
    );
    println!(
        "kept {nnz1} of {nnz0} weights at i_weight {}",
        ctx.cfg.train.i_weight
    );
    if let Some(dir) = data {
        let (_, test) = load_split(ctx, Some(dir))?;
        let graphs = prepare(&test, ctx.cfg.i_vertex);
        let agree = graphs
            .par_iter()
            .map(|g| Ok(model.predict(&g.graph)? == pruned.predict(&g.graph)?))
            .collect::<Result<Vec<bool>>>()?;
        let n = agree.iter().filter(|&&a| a).count();
        println!("argmax agreement with the dense model: {n}/{}", agree.len());
    }
    Ok(())
}

fn accuracy_line(inputs: &[Input], predicted: &[usize]) {
    let labeled: Vec<(usize, usize)> = inputs
        .iter()
        .zip(predicted)
        .filter_map(|(i, &p)| i.label.map(|l| (l, p)))
        .collect();
    if !labeled.is_empty() {
        let hits = labeled.iter().filter(|(l, p)| l == p).count();
        println!(
            "accuracy {:.4} ({hits}/{})",
            hits as f64 / labeled.len() as f64,
            labeled.len()
        );
    }
}

fn cmd_infer(ctx: &Ctx, model_path: &Path, input: &InputArgs) -> Result<()> {
    let model =
        load_model(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let inputs = load_inputs(input)?;
    ensure!(
        !inputs.is_empty(),
        "no input images (use --image or --manifest)"
    );
    inputs
        .iter()
        .try_for_each(|i| check_input_size(&model, i))?;
    let results = inputs
        .par_iter()
        .map(|i| {
            let (g, us) = timed_graph(&i.image, ctx.cfg.i_vertex, ctx.clock());
            let logits = model.logits(&g)?;
            Ok((argmax(&logits), logits, g.num_vertices(), us))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = inputs.iter().zip(&results).map(|(i, (p, logits, n, us))| {
        let logits: Vec<String> = logits.iter().map(|x| x.to_string()).collect();
        [
            i.name.clone(),
            i.label.map_or(String::new(), |l| l.to_string()),
            p.to_string(),
            logits.join(" "),
            n.to_string(),
            format!("{us:.3}"),
        ]
    });
    write_csv(
        &ctx.out("predictions.csv")?,
        &ctx.preamble("infer"),
        &[
            "image",
            "label",
            "predicted",
            "logits",
            "vertices",
            "preprocessing_us",
        ],
        rows,
    )?;
    let predicted: Vec<usize> = results.iter().map(|r| r.0).collect();
    accuracy_line(&inputs, &predicted);
    Ok(())
}

struct SimRow {
    predicted: usize,
    vertices: usize,
    edges: usize,
    report: CycleReport,
}

fn cmd_simulate(ctx: &Ctx, model_path: &Path, input: &InputArgs, verify: bool) -> Result<()> {
    let model =
        load_model(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let inputs = load_inputs(input)?;
    ensure!(
        !inputs.is_empty(),
        "no input images (use --image or --manifest)"
    );
    inputs
        .iter()
        .try_for_each(|i| check_input_size(&model, i))?;
    let acc = Accelerator::new(&model, ctx.cfg.accel)?;
    let results = inputs
        .par_iter()
        .map(|i| -> Result<std::result::Result<SimRow, String>> {
            let (g, us) = timed_graph(&i.image, ctx.cfg.i_vertex, ctx.clock());
            let sim = if verify {
                let (sim, v) = acc.verify(&g, 1e-5)?;
                if let Some(layer) = v.first_divergent {
                    let err = v
                        .layer_errors
                        .iter()
                        .find(|e| e.0 == layer)
                        .map_or(v.logits_error, |e| e.1);
                    return Ok(Err(format!(
                        "{}: first divergent layer {layer} (rel err {err:.3e})",
                        i.name
                    )));
                }
                sim
            } else {
                acc.simulate(&g, None)?
            };
            let mut report = sim.report;
            report.preprocessing_us = if ctx.clock() {
                us + report.preprocessing_us
            } else {
                0.0
            };
            Ok(Ok(SimRow {
                predicted: argmax(&sim.logits),
                vertices: g.num_vertices(),
                edges: g.num_edges(),
                report,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if let Some(first) = failures.first() {
        bail!(
            "verification failed on {} of {} images; {first}",
            failures.len(),
            results.len()
        );
    }
    let rows: Vec<&SimRow> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    write_csv(
        &ctx.out("simulation.csv")?,
        &ctx.preamble("simulate"),
        &[
            "image",
            "label",
            "predicted",
            "vertices",
            "edges",
            "cycles",
            "latency_us",
            "preprocessing_us",
        ],
        inputs.iter().zip(&rows).map(|(i, r)| {
            [
                i.name.clone(),
                i.label.map_or(String::new(), |l| l.to_string()),
                r.predicted.to_string(),
                r.vertices.to_string(),
                r.edges.to_string(),
                r.report.total_cycles().to_string(),
                format!("{:.6}", r.report.latency_us()),
                format!("{:.3}", r.report.preprocessing_us),
            ]
        }),
    )?;
    let cycle_table: Vec<Vec<String>> = inputs
        .iter()
        .zip(&rows)
        .flat_map(|(i, r)| cycle_rows(&i.name, &r.report))
        .collect();
    write_csv(
        &ctx.out("cycles.csv")?,
        &ctx.preamble("simulate"),
        &CYCLE_COLUMNS,
        cycle_table,
    )?;
    let predicted: Vec<usize> = rows.iter().map(|r| r.predicted).collect();
    accuracy_line(&inputs, &predicted);
    let cycles: Vec<u64> = rows.iter().map(|r| r.report.total_cycles()).collect();
    let (lo, hi) = (
        cycles.iter().min().copied().unwrap_or(0),
        cycles.iter().max().copied().unwrap_or(0),
    );
    println!(
        "{} images simulated{}; cycles {lo}..{hi} ({:.3}..{:.3} us at {} MHz)",
        rows.len(),
        if verify { ", all layers verified" } else { "" },
        lo as f64 / ctx.cfg.accel.clock_mhz,
        hi as f64 / ctx.cfg.accel.clock_mhz,
        ctx.cfg.accel.clock_mhz
    );
    Ok(())
}

fn cmd_estimate(
    ctx: &Ctx,
    model_path: &Path,
    input: &InputArgs,
    vertices: Option<usize>,
) -> Result<()> {
    let model =
        load_model(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let mut graphs: Vec<(String, GridGraph, f64)> = Vec::new();
    if let Some(n) = vertices {
        let (w, h) = (model.input_width, model.input_height);
        ensure!(n <= w * h, "{n} vertices do not fit a {w}x{h} input");
        let alive = (0..w * h).map(|c| c < n).collect();
        graphs.push((
            format!("vertices={n}"),
            GridGraph::from_mask(w, h, alive, &vec![1.0; w * h]),
            0.0,
        ));
    }
    for i in load_inputs(input)? {
        check_input_size(&model, &i)?;
        let (g, us) = timed_graph(&i.image, ctx.cfg.i_vertex, ctx.clock());
        graphs.push((i.name, g, us));
    }
    ensure!(
        !graphs.is_empty(),
        "no input (use --image, --manifest or --vertices)"
    );
    let acc = Accelerator::new(&model, ctx.cfg.accel)?;
    let reports = graphs
        .par_iter()
        .map(|(_, g, us)| {
            let mut r = acc.estimate(g)?;
            r.preprocessing_us = if ctx.clock() {
                us + r.preprocessing_us
            } else {
                0.0
            };
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let table: Vec<Vec<String>> = graphs
        .iter()
        .zip(&reports)
        .flat_map(|((name, _, _), r)| cycle_rows(name, r))
        .collect();
    write_csv(
        &ctx.out("cycles.csv")?,
        &ctx.preamble("estimate"),
        &CYCLE_COLUMNS,
        table,
    )?;
    let svg_path = ctx.out("cycles.svg")?;
    let title = format!(
        "{} (p={}, q={})",
        graphs[0].0, ctx.cfg.accel.pipelines, ctx.cfg.accel.pes
    );
    std::fs::write(&svg_path, cycle_svg(&title, &reports[0]))
        .with_context(|| format!("writing {}", svg_path.display()))?;
    for ((name, g, _), r) in graphs.iter().zip(&reports) {
        println!(
            "{name}: |V|={} |E|={} cycles={} (VAK {}, VUK {}, MTU {}, EW {}) latency {:.3} us",
            g.num_vertices(),
            g.num_edges(),
            r.total_cycles(),
            r.t_vak(),
            r.t_vuk(),
            r.t_mtu(),
            r.t_elementwise(),
            r.latency_us()
        );
    }
    Ok(())
}
