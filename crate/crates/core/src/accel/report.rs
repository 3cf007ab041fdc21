use serde::Serialize;

use super::kernel::{KernelKind, Schedule};
use super::AcceleratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCycles {
    pub index: usize,
    pub layer: usize,
    pub layer_name: String,
    pub label: &'static str,
    pub kind: KernelKind,
    /// Edges (VAK), nonzeros (VUK) or matrix elements (MTU, elementwise).
    pub work_items: usize,
    pub cycles: u64,
    /// Update messages handled by each result bank.
    pub bank_loads: Vec<usize>,
}

/// Per-kernel cycles of one run. Kernels execute back to back, so the total
/// is the plain sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub kernels: Vec<KernelCycles>,
    pub clock_mhz: f64,
    pub preprocessing_us: f64,
}

impl CycleReport {
    pub(crate) fn from_cycles(
        schedule: &Schedule,
        cfg: &AcceleratorConfig,
        runs: impl IntoIterator<Item = (u64, Vec<usize>)>,
    ) -> Self {
        let kernels = schedule
            .kernels
            .iter()
            .zip(runs)
            .enumerate()
            .map(|(index, (k, (cycles, bank_loads)))| KernelCycles {
                index,
                layer: k.layer,
                layer_name: schedule.layer_names[k.layer].clone(),
                label: k.label,
                kind: k.kind(),
                work_items: k.work_items(),
                cycles,
                bank_loads,
            })
            .collect();
        Self {
            kernels,
            clock_mhz: cfg.clock_mhz,
            preprocessing_us: schedule.preprocessing_us,
        }
    }

    pub fn cycles_of(&self, kind: KernelKind) -> u64 {
        self.kernels
            .iter()
            .filter(|k| k.kind == kind)
            .map(|k| k.cycles)
            .sum()
    }

    pub fn t_vak(&self) -> u64 {
        self.cycles_of(KernelKind::Vak)
    }

    pub fn t_vuk(&self) -> u64 {
        self.cycles_of(KernelKind::Vuk)
    }

    pub fn t_mtu(&self) -> u64 {
        self.cycles_of(KernelKind::Mtu)
    }

    pub fn t_elementwise(&self) -> u64 {
        self.cycles_of(KernelKind::Elementwise)
    }

    pub fn total_cycles(&self) -> u64 {
        self.kernels.iter().map(|k| k.cycles).sum()
    }

    /// Kernel time only.
    pub fn compute_us(&self) -> f64 {
        self.total_cycles() as f64 / self.clock_mhz
    }

    /// Kernel time plus host preprocessing.
    pub fn latency_us(&self) -> f64 {
        self.compute_us() + self.preprocessing_us
    }
}
