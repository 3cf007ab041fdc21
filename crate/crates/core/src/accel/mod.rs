//! Functional simulator and analytic cycle model of the scatter-gather
//! accelerator.
//!
//! A model is lowered per input graph into an ordered list of kernels:
//! vertex aggregation (VAK, vertex-major operands), vertex update (VUK,
//! feature-major operands), layout transposes (MTU) and elementwise passes.
//! [`simulate`] executes the list beat by beat in `f32`; [`estimate`] prices
//! the same list without touching data.

mod exec;
mod kernel;
mod report;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::activation::SigmoidMode;
use crate::error::{Error, Result};
use crate::features::Layout;
use crate::graph::GridGraph;
use crate::model::{forward, ForwardOptions, ModelSpec};
use crate::partition::LevelPartitions;
use crate::real::rel_err_inf;

pub use crate::activation::sigmoid_pla;
pub use exec::{exec_vak, exec_vuk, mtu_transpose, run_schedule, KernelRun, SimState};
pub use kernel::{
    elementwise_cycles, lower, mtu_cycles, vak_cycles, vuk_cycles, BufferId, BufferSpec,
    CompiledModel, Edge, ElementOp, ElementwiseKernel, GatherOp, KernelDescriptor, KernelKind,
    KernelOp, MtuKernel, PostOp, Schedule, VakKernel, VukKernel,
};
pub use report::{CycleReport, KernelCycles};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtuCost {
    /// Transposes overlap with compute.
    Free,
    /// `p·q` elements per cycle.
    #[default]
    Bandwidth,
}

impl std::str::FromStr for MtuCost {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(MtuCost::Free),
            "bandwidth" => Ok(MtuCost::Bandwidth),
            other => Err(Error::Config(format!(
                "unknown MTU cost mode {other:?} (free|bandwidth)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceleratorConfig {
    /// Parallel scatter-gather pipelines `p`.
    pub pipelines: usize,
    /// Processing elements per scatter/gather unit `q`.
    pub pes: usize,
    pub clock_mhz: f64,
    pub mtu_cost: MtuCost,
    pub sigmoid: SigmoidMode,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        Self {
            pipelines: 8,
            pes: 16,
            clock_mhz: 125.0,
            mtu_cost: MtuCost::Bandwidth,
            sigmoid: SigmoidMode::Pla,
        }
    }
}

impl AcceleratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pipelines == 0 || self.pes == 0 {
            return Err(Error::Config("pipelines and PEs must be at least 1".into()));
        }
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return Err(Error::Config(format!(
                "clock must be positive, got {} MHz",
                self.clock_mhz
            )));
        }
        Ok(())
    }
}

/// Result of running both engines on one graph.
#[derive(Debug, Clone)]
pub struct Verification {
    /// Worst relative error per layer.
    pub layer_errors: Vec<(String, f64)>,
    pub logits_error: f64,
    /// First layer above tolerance.
    pub first_divergent: Option<String>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.first_divergent.is_none()
    }
}

/// A compiled model ready to run on many graphs. Cheap to clone and safe to
/// share across threads.
#[derive(Debug, Clone)]
pub struct Accelerator {
    compiled: Arc<CompiledModel>,
}

pub struct Simulation {
    pub logits: Vec<f32>,
    pub report: CycleReport,
    /// Output of every model layer, in the layout the simulator left it.
    pub layer_outputs: Vec<crate::features::FeatureMatrix<f32>>,
}

impl Accelerator {
    pub fn new(model: &ModelSpec<f32>, config: AcceleratorConfig) -> Result<Self> {
        Ok(Self {
            compiled: Arc::new(CompiledModel::new(model, config)?),
        })
    }

    pub fn config(&self) -> &AcceleratorConfig {
        &self.compiled.config
    }

    pub fn model(&self) -> &ModelSpec<f32> {
        &self.compiled.model
    }

    pub fn lower(
        &self,
        graph: &GridGraph,
        partitions: Option<&LevelPartitions>,
    ) -> Result<Schedule> {
        lower(&self.compiled, graph, partitions)
    }

    /// Analytic cycles for every kernel, without executing data.
    pub fn estimate(&self, graph: &GridGraph) -> Result<CycleReport> {
        let schedule = self.lower(graph, None)?;
        Ok(self.estimate_schedule(&schedule))
    }

    pub fn estimate_schedule(&self, schedule: &Schedule) -> CycleReport {
        let cfg = self.config();
        CycleReport::from_cycles(
            schedule,
            cfg,
            schedule
                .kernels
                .iter()
                .map(|k| (k.cycles(cfg), k.bank_loads(cfg))),
        )
    }

    pub fn simulate(
        &self,
        graph: &GridGraph,
        partitions: Option<&LevelPartitions>,
    ) -> Result<Simulation> {
        let schedule = self.lower(graph, partitions)?;
        self.run(&schedule, graph)
    }

    pub fn run(&self, schedule: &Schedule, graph: &GridGraph) -> Result<Simulation> {
        let cfg = self.config();
        let mut state = SimState::new(schedule, graph);
        let runs = run_schedule(schedule, &mut state, cfg)?;
        let report = CycleReport::from_cycles(
            schedule,
            cfg,
            runs.into_iter().map(|r| (r.cycles, r.bank_loads)),
        );
        let layer_outputs = schedule
            .layer_outputs
            .iter()
            .map(|&b| state.get(b).cloned())
            .collect::<Result<Vec<_>>>()?;
        let logits = state.get(schedule.logits)?.values().to_vec();
        Ok(Simulation {
            logits,
            report,
            layer_outputs,
        })
    }

    /// Simulates `graph` and compares every layer against the reference
    /// forward pass in the same sigmoid mode.
    pub fn verify(&self, graph: &GridGraph, tolerance: f64) -> Result<(Simulation, Verification)> {
        let sim = self.simulate(graph, None)?;
        let opts = ForwardOptions {
            sigmoid: self.config().sigmoid,
            trace: true,
        };
        let reference = forward(self.model(), graph, opts)?;
        let mut layer_errors = Vec::with_capacity(reference.trace.len());
        let mut first_divergent = None;
        for (entry, got) in reference.trace.iter().zip(&sim.layer_outputs) {
            let got = if got.num_vertices() == entry.features.num_vertices() {
                got.to_layout(Layout::VertexMajor)
            } else {
                got.clone()
            };
            let err = if got.values().len() == entry.features.values().len() {
                rel_err_inf(got.values(), entry.features.values())
            } else {
                f64::INFINITY
            };
            if !(err <= tolerance) && first_divergent.is_none() {
                first_divergent = Some(entry.name.clone());
            }
            layer_errors.push((entry.name.clone(), err));
        }
        let logits_error = rel_err_inf(&sim.logits, &reference.logits);
        if !(logits_error <= tolerance) && first_divergent.is_none() {
            first_divergent = Some("logits".into());
        }
        Ok((
            sim,
            Verification {
                layer_errors,
                logits_error,
                first_divergent,
            },
        ))
    }
}

pub fn lower_model(
    model: &ModelSpec<f32>,
    graph: &GridGraph,
    config: AcceleratorConfig,
) -> Result<Schedule> {
    Accelerator::new(model, config)?.lower(graph, None)
}

pub fn simulate(
    model: &ModelSpec<f32>,
    graph: &GridGraph,
    config: AcceleratorConfig,
    partitions: Option<&LevelPartitions>,
) -> Result<(Vec<f32>, CycleReport)> {
    let sim = Accelerator::new(model, config)?.simulate(graph, partitions)?;
    Ok((sim.logits, sim.report))
}

pub fn estimate(
    model: &ModelSpec<f32>,
    graph: &GridGraph,
    config: AcceleratorConfig,
) -> Result<CycleReport> {
    Accelerator::new(model, config)?.estimate(graph)
}

#[cfg(test)]
mod tests;
