//! Energy cost of spiking inference relative to conventional hardware.
//!
//! Energy is expressed in flop-equivalents: each synaptic event and each
//! neuron update is charged a fixed fraction of one floating-point operation.

use serde::{Deserialize, Serialize};

use crate::convert::SnnSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{count_flops, NetworkSpec};
use crate::sim::{evaluate_snn, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    /// Flop-equivalents per synaptic event.
    pub e_synop: f64,
    /// Flop-equivalents per neuron update.
    pub e_update: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_synop: 0.08,
            e_update: 0.25,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("e_synop", self.e_synop), ("e_update", self.e_update)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Energy to classify one image, in flop-equivalents.
pub fn snn_energy(synops_per_s: f64, updates_per_s: f64, presentation_s: f64, model: &EnergyModel) -> f64 {
    (model.e_synop * synops_per_s + model.e_update * updates_per_s) * presentation_s
}

pub fn relative_efficiency(ann_flops: f64, snn_energy: f64) -> Result<f64> {
    if snn_energy.is_nan() || snn_energy <= 0.0 {
        return Err(Error::param("snn_energy", "must be > 0"));
    }
    Ok(ann_flops / snn_energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub dataset: String,
    pub tau_s: f64,
    pub c0: f64,
    pub c1: f64,
    pub error: f64,
    pub synops_per_s: f64,
    pub updates_per_s: f64,
    pub presentation_s: f64,
    pub model: EnergyModel,
    pub ann_flops_per_image: u64,
    pub snn_energy_per_image: f64,
    pub relative_efficiency: f64,
}

impl EfficiencyReport {
    /// Builds a report from measured rates.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dataset: impl Into<String>,
        tau_s: f64,
        c0: f64,
        c1: f64,
        error: f64,
        synops_per_s: f64,
        updates_per_s: f64,
        model: EnergyModel,
        ann_flops_per_image: u64,
    ) -> Result<Self> {
        model.validate()?;
        let energy = snn_energy(synops_per_s, updates_per_s, c1, &model);
        Ok(Self {
            dataset: dataset.into(),
            tau_s,
            c0,
            c1,
            error,
            synops_per_s,
            updates_per_s,
            presentation_s: c1,
            model,
            ann_flops_per_image,
            snn_energy_per_image: energy,
            relative_efficiency: relative_efficiency(ann_flops_per_image as f64, energy)?,
        })
    }

    /// Recomputes the derived columns from the echoed inputs.
    pub fn recompute(&self) -> Result<Self> {
        Self::new(
            self.dataset.clone(),
            self.tau_s,
            self.c0,
            self.c1,
            self.error,
            self.synops_per_s,
            self.updates_per_s,
            self.model,
            self.ann_flops_per_image,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub tau_s: f64,
    pub c0: f64,
    pub c1: f64,
}

/// Evaluates `snn` on `dataset` for each timing row and reports error and
/// efficiency against the flop count of `ann`.
pub fn sweep(
    ann: &NetworkSpec,
    snn: &SnnSpec,
    dataset: &Dataset,
    dataset_name: &str,
    rows: &[SweepRow],
    base: &SimConfig,
    model: &EnergyModel,
) -> Result<Vec<EfficiencyReport>> {
    model.validate()?;
    let flops = count_flops(ann).flops_per_image;
    rows.iter()
        .map(|row| {
            let config = SimConfig {
                c0: row.c0,
                c1: row.c1,
                ..base.clone()
            };
            let eval = evaluate_snn(&snn.with_tau_s(row.tau_s)?, dataset, &config)?;
            EfficiencyReport::new(
                dataset_name,
                row.tau_s,
                row.c0,
                row.c1,
                eval.error,
                eval.synops_per_s,
                eval.updates_per_s,
                *model,
                flops,
            )
        })
        .collect()
}
