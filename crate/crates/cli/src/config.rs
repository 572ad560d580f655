//! JSON experiment configs. Every struct rejects unknown keys and has a
//! built-in default, so a missing `--config` runs the default experiment.

use std::f64::consts::E;
use std::path::{Path, PathBuf};

use lbopt_core::algorithms::{AlgKind, Multipliers};
use lbopt_core::simulator::{Protocol, TimingModel};
use lbopt_core::worstcase::{InstanceParams, Variant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Reads a config file, or returns the default when `path` is `None`.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse(&text)
        }
    }
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionCase {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub a: f64,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionConfig {
    pub seed: u64,
    pub cases: Vec<FunctionCase>,
    /// Random points per case.
    pub points: usize,
    /// Grid size per kernel parameter for the scalar kernel checks.
    pub kernel_grid: usize,
    pub kernel_a: Vec<f64>,
}

impl Default for FunctionConfig {
    fn default() -> Self {
        let case = |t, k, a, variant| FunctionCase { t, k, a, variant };
        Self {
            seed: 1,
            cases: vec![
                case(50, 1, E, Variant::New),
                case(60, 4, 1.25, Variant::New),
                case(80, 6, 7.0 / 6.0, Variant::New),
                case(100, 2, 1.5, Variant::New),
                case(50, 1, E, Variant::Classic),
            ],
            points: 100,
            kernel_grid: 10_000,
            kernel_a: vec![1.1, 1.25, 1.5, 2.0, E],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub seed: u64,
    pub instances: Vec<InstanceParams>,
    /// Random points per instance for the exact variance bound.
    pub points: usize,
    /// Oracle calls per instance for the Monte-Carlo checks.
    pub draws: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let chain = |n, t, p, d, v| InstanceParams::for_chain(n, t, p, d, v).expect("valid default");
        Self {
            seed: 1,
            instances: vec![
                chain(1, 6, 0.25, 10, Variant::Classic),
                chain(2, 12, 0.1, 24, Variant::New),
                chain(4, 20, 0.5, 40, Variant::New),
            ],
            points: 1000,
            draws: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressorConfig {
    pub seed: u64,
    pub d: usize,
    /// RandK sizes checked for unbiasedness and variance.
    pub ks: Vec<usize>,
    /// Random input vectors per `K`.
    pub vectors: usize,
    pub draws: u64,
    /// `(d, K)` pairs for the subset-uniformity test, `d <= 6`.
    pub subsets: Vec<(usize, usize)>,
    /// Worker counts for the PermK checks.
    pub perm_n: Vec<usize>,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            d: 8,
            ks: vec![1, 3, 8],
            vectors: 10,
            draws: 100_000,
            subsets: vec![(4, 1), (5, 2), (6, 3), (6, 2)],
            perm_n: vec![1, 3, 4],
        }
    }
}

/// One simulation setting, run for every algorithm and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub instance: InstanceParams,
    pub timing: TimingModel,
    pub protocol: Protocol,
    pub algorithms: Vec<AlgKind>,
    pub multipliers: Multipliers,
    pub seeds: Vec<u64>,
    /// Simulated-seconds budget; defaults to 50x the algorithm's predicted time.
    pub budget: Option<f64>,
    pub max_events: u64,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            // classic chain of length 2 with unit L and eps
            instance: InstanceParams::new(1.0, 7296.0, 1.0, 1, 0.0, 256, Variant::Classic),
            timing: TimingModel {
                h: 1.0,
                tau_s: 0.0,
                tau_w: 0.0,
            },
            protocol: Protocol::P2,
            algorithms: vec![AlgKind::BatchSyncSgd],
            multipliers: Multipliers::default(),
            seeds: vec![1],
            budget: None,
            max_events: 200_000_000,
            out: None,
        }
    }
}

/// Axes of a sweep. An empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub n: Vec<usize>,
    pub sigma2: Vec<f64>,
    pub h: Vec<f64>,
    pub tau_s: Vec<f64>,
    pub tau_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub base: SimulateConfig,
    pub grid: Grid,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: SimulateConfig {
                seeds: vec![1, 2],
                ..SimulateConfig::default()
            },
            grid: Grid {
                n: vec![1, 2, 4, 8],
                ..Grid::default()
            },
        }
    }
}

/// Block-sum threshold check at the window/gate choice made by the instance builder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockPoint {
    pub n: usize,
    /// Number of blocks `B`; the chain has `T = B K` coordinates.
    pub blocks: usize,
    pub p_sigma: f64,
    pub h: f64,
    pub tau_s: f64,
    pub delta: f64,
    /// Ambient dimension as a multiple of `T`.
    #[serde(default = "default_d_factor")]
    pub d_factor: usize,
}

/// Recursion threshold check on the classic chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecursionPoint {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub p_sigma: f64,
    pub h: f64,
    pub tau_w: f64,
    pub delta: f64,
    #[serde(default = "default_d_factor")]
    pub d_factor: usize,
}

/// Greedy chaser runs compared against half the block-sum threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaserPoint {
    pub n: usize,
    pub blocks: usize,
    pub p_sigma: f64,
    pub h: f64,
    pub tau_s: f64,
    pub delta: f64,
    pub runs: u64,
    /// Required fraction of runs reaching coordinate `T` no earlier than `t̄/2`.
    pub min_fraction: f64,
    pub protocol: Protocol,
    #[serde(default = "default_d_factor")]
    pub d_factor: usize,
}

fn default_d_factor() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowerboundConfig {
    pub seed: u64,
    pub trials: u64,
    pub lemma6: Vec<BlockPoint>,
    pub lemma8: Vec<RecursionPoint>,
    pub chaser: Vec<ChaserPoint>,
    pub out: Option<PathBuf>,
}

impl Default for LowerboundConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 10_000,
            lemma6: vec![BlockPoint {
                n: 8,
                blocks: 8,
                p_sigma: 0.1,
                h: 1.0,
                tau_s: 1.0,
                delta: 0.5,
                d_factor: 4,
            }],
            lemma8: vec![RecursionPoint {
                n: 4,
                t: 100,
                p_sigma: 0.1,
                h: 1.0,
                tau_w: 1.0,
                delta: 0.5,
                d_factor: 4,
            }],
            chaser: vec![ChaserPoint {
                n: 8,
                blocks: 4,
                p_sigma: 0.1,
                h: 1.0,
                tau_s: 1.0,
                delta: 0.5,
                runs: 200,
                min_fraction: 0.45,
                protocol: Protocol::P1,
                d_factor: 4,
            }],
            out: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let s = serde_json::to_string(&SweepConfig::default()).unwrap();
        assert_eq!(parse::<SweepConfig>(&s).unwrap(), SweepConfig::default());
        let s = serde_json::to_string(&LowerboundConfig::default()).unwrap();
        assert_eq!(parse::<LowerboundConfig>(&s).unwrap(), LowerboundConfig::default());
        let s = serde_json::to_string(&FunctionConfig::default()).unwrap();
        assert_eq!(parse::<FunctionConfig>(&s).unwrap(), FunctionConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse::<SimulateConfig>(r#"{"sede": 3}"#), Err(CliError::Config(_))));
        assert!(matches!(
            parse::<SimulateConfig>(r#"{"timing": {"h": 1, "tau_s": 0, "tau_w": 0, "tau": 1}}"#),
            Err(CliError::Config(_))
        ));
        assert!(parse::<SimulateConfig>(r#"{"seeds": [4, 5]}"#).is_ok());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let c: LowerboundConfig = parse(r#"{"trials": 2000, "chaser": []}"#).unwrap();
        assert_eq!(c.trials, 2000);
        assert!(c.chaser.is_empty());
        assert_eq!(c.lemma6, LowerboundConfig::default().lemma6);
    }
}
