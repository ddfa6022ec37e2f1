//! Flat TOML run configuration.
//!
//! Every key is optional; an empty document gives the reference scenario.
//!
//! ```toml
//! mode = "both"
//! epsilon = 1e-3
//! t_end = 20.0
//! noise_enabled = true
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::DEFAULT_SWEEP;
use crate::control::Scenario;
use crate::error::{Error, Result};
use crate::pwm::PwmConfig;
use crate::sim::{SimConfig, VirtualOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Actual,
    Ideal,
    #[default]
    Both,
    Sweep,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,

    pub epsilon: f64,
    pub u_max: f64,

    pub substeps_per_period: usize,
    pub event_tolerance: f64,
    pub noise_enabled: bool,
    pub noise_power_density: f64,
    pub noise_sample_time: f64,
    pub rng_seed: u64,
    pub record_stride: usize,
    pub virtual_output: VirtualOutput,

    pub d_step_time: f64,
    pub d_value: f64,
    pub ref_step_time: f64,
    pub ref_amplitude: f64,
    pub ref_filter_time_constant: f64,
    pub t_end: f64,

    pub out_dir: PathBuf,
    pub plots: bool,
    pub sweep_epsilons: Vec<f64>,
    /// Seconds discarded after each scenario discontinuity in sup norms.
    pub transient_exclusion: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let sc = Scenario::default();
        Self {
            mode: Mode::default(),
            epsilon: 1e-3,
            u_max: 20.0,
            substeps_per_period: sim.substeps_per_period,
            event_tolerance: sim.event_tolerance,
            noise_enabled: sim.noise_enabled,
            noise_power_density: sim.noise_power_density,
            noise_sample_time: sim.noise_sample_time,
            rng_seed: sim.rng_seed,
            record_stride: sim.record_stride,
            virtual_output: sim.virtual_output,
            d_step_time: sc.d_step_time,
            d_value: sc.d_value,
            ref_step_time: sc.ref_step_time,
            ref_amplitude: sc.ref_amplitude,
            ref_filter_time_constant: sc.ref_filter_time_constant,
            t_end: sc.t_end,
            out_dir: PathBuf::from("out"),
            plots: true,
            sweep_epsilons: DEFAULT_SWEEP.to_vec(),
            transient_exclusion: 0.1,
        }
    }
}

impl RunConfig {
    pub fn pwm(&self) -> Result<PwmConfig> {
        PwmConfig::new(self.epsilon, self.u_max)
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            substeps_per_period: self.substeps_per_period,
            event_tolerance: self.event_tolerance,
            noise_enabled: self.noise_enabled,
            noise_power_density: self.noise_power_density,
            noise_sample_time: self.noise_sample_time,
            rng_seed: self.rng_seed,
            record_stride: self.record_stride,
            virtual_output: self.virtual_output,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            d_step_time: self.d_step_time,
            d_value: self.d_value,
            ref_step_time: self.ref_step_time,
            ref_amplitude: self.ref_amplitude,
            ref_filter_time_constant: self.ref_filter_time_constant,
            t_end: self.t_end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pwm = self.pwm()?;
        self.sim().validate(&pwm)?;
        self.scenario().validate()?;
        let e = &self.sweep_epsilons;
        if e.len() < 3 || e.windows(2).any(|w| !(w[1] < w[0])) || e.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidConfig {
                field: "sweep_epsilons",
                reason: "needs at least 3 positive, strictly decreasing values".into(),
            });
        }
        if !(self.transient_exclusion >= 0.0 && self.transient_exclusion.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "transient_exclusion",
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            line: None,
            message: e.to_string(),
        })
    }
}

fn line_of_offset(doc: &str, offset: usize) -> usize {
    doc[..offset.min(doc.len())].matches('\n').count() + 1
}

fn line_of_key(doc: &str, key: &str) -> Option<usize> {
    doc.lines()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

/// Parses and validates a configuration document. Errors carry the line of
/// the offending key when it appears in the document.
pub fn parse_config(doc: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(doc).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of_offset(doc, s.start)),
        message: e.message().to_string(),
    })?;
    cfg.validate().map_err(|e| match e {
        Error::InvalidConfig { field, reason } => Error::Parse {
            line: line_of_key(doc, field),
            message: format!("{field}: {reason}"),
        },
        other => Error::Parse {
            line: None,
            message: other.to_string(),
        },
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(
            (c.epsilon, c.u_max, c.d_step_time, c.d_value),
            (1e-3, 20.0, 2.0, -0.25)
        );
        assert_eq!((c.ref_step_time, c.t_end), (14.0, 20.0));
    }

    #[test]
    fn negative_epsilon_names_the_field_and_line() {
        let err = parse_config("mode = \"actual\"\nepsilon = -1\n").unwrap_err();
        match &err {
            Error::Parse { line, message } => {
                assert_eq!(*line, Some(2));
                assert!(message.contains("epsilon"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_key_and_type_mismatch_are_line_anchored() {
        let err = parse_config("t_end = 20.0\n\nfoo = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(3), .. }), "{err}");
        let err = parse_config("epsilon = \"small\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(1), .. }), "{err}");
        let err = parse_config("mode = \"fast\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(1), .. }), "{err}");
    }

    #[test]
    fn round_trip() {
        let doc = "mode = \"sweep\"\nepsilon = 2.5e-4\nnoise_enabled = true\nrng_seed = 42\nd_value = 0.1\n\
                   virtual_output = \"exact\"\nsweep_epsilons = [0.003, 0.002, 0.001]\n";
        let c = parse_config(doc).unwrap();
        let again = parse_config(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.virtual_output, VirtualOutput::Exact);
    }
}
