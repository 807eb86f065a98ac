//! Analytic parameter and MAC accounting.
//!
//! One MAC is one multiplication plus one addition. Convolutions (including
//! transposed ones, counted on their output grid) contribute MACs;
//! normalization layers contribute parameters only; correlation,
//! interpolation and softmax are not counted.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::StereoNet;
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModuleCost {
    pub module: String,
    pub params: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub params: usize,
    pub macs: u64,
    pub breakdown: Vec<ModuleCost>,
}

impl ComplexityReport {
    pub fn params_millions(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn macs_giga(&self) -> f64 {
        self.macs as f64 / 1e9
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} @ {}x{}", self.model, self.height, self.width);
        let _ = writeln!(s, "{:<14}{:>14}{:>16}", "module", "params", "MACs (G)");
        for m in &self.breakdown {
            let _ = writeln!(s, "{:<14}{:>14}{:>16.3}", m.module, m.params, m.macs as f64 / 1e9);
        }
        let _ = writeln!(s, "{:<14}{:>14}{:>16.3}", "total", self.params, self.macs_giga());
        let _ = writeln!(s, "params {:.3} M, MACs {:.2} G", self.params_millions(), self.macs_giga());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("module,params,macs\n");
        for m in &self.breakdown {
            let _ = writeln!(s, "{},{},{}", m.module, m.params, m.macs);
        }
        let _ = writeln!(s, "total,{},{}", self.params, self.macs);
        s
    }
}

/// Trainable scalars of a built model.
pub fn count_params(model: &StereoNet) -> usize {
    model.param_breakdown().iter().map(|(_, p)| p).sum()
}

/// Inference MACs for one stereo pair; sizes are padded up to multiples of 8 (even quarter resolution).
pub fn count_macs(model: &StereoNet, height: usize, width: usize) -> u64 {
    let (h, w) = (height.next_multiple_of(8), width.next_multiple_of(8));
    model.mac_breakdown(h, w).iter().map(|(_, m)| m).sum()
}

pub fn profile_model(model: &StereoNet, height: usize, width: usize) -> ComplexityReport {
    let (h, w) = (height.next_multiple_of(8), width.next_multiple_of(8));
    let macs = model.mac_breakdown(h, w);
    let breakdown: Vec<ModuleCost> = model
        .param_breakdown()
        .into_iter()
        .zip(macs)
        .map(|((name, params), (_, macs))| ModuleCost { module: name.to_string(), params, macs })
        .collect();
    ComplexityReport {
        model: model.config.name(),
        height: h,
        width: w,
        params: breakdown.iter().map(|m| m.params).sum(),
        macs: breakdown.iter().map(|m| m.macs).sum(),
        breakdown,
    }
}

/// Builds `config` and profiles it.
pub fn profile(config: &ModelConfig, height: usize, width: usize) -> Result<ComplexityReport> {
    let mut store = ParamStore::new();
    let model = StereoNet::build(config, &mut store, "", 0)?;
    Ok(profile_model(&model, height, width))
}
