use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, PlateauRule};
use crate::error::{Error, Result};
use crate::netsim::{LinkSpec, TraceSpec, DEFAULT_MTU};
use crate::objective::Target;
use crate::tuner::TunerConfig;

/// A named link preset plus run-length defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub link: LinkSpec,
    /// Action bound in Mbps; twice the link's peak rate when absent.
    #[serde(default)]
    pub bound: Option<f64>,
    pub duration_ms: u64,
}

impl Scenario {
    pub fn bound(&self) -> Result<f64> {
        match self.bound {
            Some(b) => Ok(b),
            None => Ok(2.0 * self.link.peak_rate_mbps()?),
        }
    }

    /// Packets in one bandwidth-delay product of a constant-rate link.
    pub fn bdp_packets(rate_mbps: f64, rtt_ms: f64) -> usize {
        ((rate_mbps * 1000.0 * rtt_ms / (8.0 * DEFAULT_MTU as f64)).round() as usize).max(1)
    }
}

/// Bundled variable-rate trace used by the cellular preset.
pub fn bundled_cellular_trace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("traces/cellular.trace")
}

/// The wifi, cellular, satellite and steady reference links.
pub fn presets() -> BTreeMap<String, Scenario> {
    let mut m = BTreeMap::new();
    m.insert(
        "wifi".to_string(),
        Scenario {
            link: LinkSpec {
                trace: TraceSpec::Poisson {
                    rate_mbps: 2.64,
                    duration_ms: 60_000,
                },
                ..LinkSpec::constant(0.0, 88, 130)
            },
            bound: None,
            duration_ms: 60_000,
        },
    );
    m.insert(
        "cellular".to_string(),
        Scenario {
            link: LinkSpec {
                trace: TraceSpec::File {
                    path: bundled_cellular_trace(),
                },
                ..LinkSpec::constant(0.0, 100, 140)
            },
            bound: None,
            duration_ms: 60_000,
        },
    );
    m.insert(
        "satellite".to_string(),
        Scenario {
            link: LinkSpec {
                stochastic_loss: 0.0074,
                ..LinkSpec::constant(42.0, 400, Scenario::bdp_packets(42.0, 800.0))
            },
            bound: None,
            duration_ms: 60_000,
        },
    );
    // 90 KB of buffer is 60 full-size packets
    m.insert(
        "steady".to_string(),
        Scenario {
            link: LinkSpec::constant(12.0, 30, 60),
            bound: None,
            duration_ms: 60_000,
        },
    );
    m
}

fn d_train_scenario() -> String {
    "wifi".into()
}
fn d_iterations() -> usize {
    50_000
}
fn d_log_every() -> usize {
    100
}
fn d_eval_scenario() -> String {
    "steady".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "d_train_scenario")]
    pub scenario: String,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub plateau: Option<PlateauRule>,
    /// `bound` is taken from the scenario.
    #[serde(default)]
    pub agent: AgentConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            scenario: d_train_scenario(),
            iterations: d_iterations(),
            log_every: d_log_every(),
            plateau: None,
            agent: AgentConfig::default(),
        }
    }
}

/// An explicit target as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub throughput_mbps: f64,
    pub delay_ms: f64,
    pub loss: f64,
}

impl TargetSpec {
    pub fn to_target(&self) -> Result<Target> {
        Target::explicit(self.throughput_mbps, self.delay_ms, self.loss)
    }
}

fn d_frontier_goals() -> Vec<[f64; 3]> {
    vec![
        [1.0, 0.0, 0.0],
        [0.6, 0.3, 0.1],
        [0.4, 0.4, 0.2],
        [0.2, 0.6, 0.2],
        [0.0, 1.0, 0.0],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSection {
    #[serde(default = "d_eval_scenario")]
    pub scenario: String,
    #[serde(default = "d_frontier_goals")]
    pub goals: Vec<[f64; 3]>,
    #[serde(default)]
    pub duration_ms: Option<u64>,
}

fn d_targets() -> usize {
    500
}
fn d_tcr_duration() -> u64 {
    40_000
}
fn d_max_loss() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcrSection {
    #[serde(default = "d_eval_scenario")]
    pub scenario: String,
    #[serde(default = "d_targets")]
    pub n_targets: usize,
    #[serde(default = "d_tcr_duration")]
    pub duration_ms: u64,
    #[serde(default = "d_max_loss")]
    pub max_loss: f64,
}

fn d_conv_target() -> TargetSpec {
    TargetSpec {
        throughput_mbps: 12.0,
        delay_ms: 100.0,
        loss: 0.01,
    }
}
fn d_conv_duration() -> u64 {
    60_000
}
fn d_bin() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSection {
    #[serde(default = "d_eval_scenario")]
    pub scenario: String,
    #[serde(default = "d_conv_target")]
    pub target: TargetSpec,
    #[serde(default = "d_conv_duration")]
    pub duration_ms: u64,
    #[serde(default = "d_bin")]
    pub bin_ms: u64,
}

fn d_losses() -> Vec<f64> {
    (0..=6).map(|p| p as f64 / 100.0).collect()
}
fn d_sweep_target() -> TargetSpec {
    TargetSpec {
        throughput_mbps: 11.0,
        delay_ms: 100.0,
        loss: 0.05,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSweepSection {
    #[serde(default = "d_eval_scenario")]
    pub scenario: String,
    #[serde(default = "d_losses")]
    pub losses: Vec<f64>,
    #[serde(default = "d_sweep_target")]
    pub target: TargetSpec,
    #[serde(default = "d_conv_duration")]
    pub duration_ms: u64,
}

fn d_stagger() -> u64 {
    15_000
}
fn d_fair_duration() -> u64 {
    90_000
}
fn d_fair_target() -> TargetSpec {
    TargetSpec {
        throughput_mbps: 6.0,
        delay_ms: 100.0,
        loss: 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSection {
    #[serde(default = "d_eval_scenario")]
    pub scenario: String,
    #[serde(default = "d_stagger")]
    pub stagger_ms: u64,
    #[serde(default = "d_fair_duration")]
    pub duration_ms: u64,
    #[serde(default = "d_fair_target")]
    pub target: TargetSpec,
    #[serde(default = "d_bin")]
    pub bin_ms: u64,
}

fn d_instances() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSection {
    #[serde(default = "d_instances")]
    pub instances: usize,
}

macro_rules! serde_default {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                toml::from_str("").expect("all fields defaulted")
            }
        }
    )*};
}

serde_default!(
    FrontierSection,
    TcrSection,
    ConvergenceSection,
    LossSweepSection,
    FairnessSection,
    GradcheckSection
);

/// Whole-run configuration. Reserved tables configure commands; every other
/// top-level table is a scenario, adding to or replacing the presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub tuner: TunerConfig,
    #[serde(default)]
    pub frontier: FrontierSection,
    #[serde(default)]
    pub tcr: TcrSection,
    #[serde(default)]
    pub convergence: ConvergenceSection,
    #[serde(default)]
    pub loss_sweep: LossSweepSection,
    #[serde(default)]
    pub fairness: FairnessSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(flatten)]
    pub scenarios: BTreeMap<String, Scenario>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            train: TrainSection::default(),
            tuner: TunerConfig::default(),
            frontier: FrontierSection::default(),
            tcr: TcrSection::default(),
            convergence: ConvergenceSection::default(),
            loss_sweep: LossSweepSection::default(),
            fairness: FairnessSection::default(),
            gradcheck: GradcheckSection::default(),
            scenarios: presets(),
        }
    }
}

impl HarnessConfig {
    /// Parses TOML; relative trace paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: HarnessConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut all = presets();
        for (name, mut sc) in std::mem::take(&mut cfg.scenarios) {
            if let (TraceSpec::File { path }, Some(base)) = (&mut sc.link.trace, base_dir) {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
            all.insert(name, sc);
        }
        cfg.scenarios = all;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, sc) in &self.scenarios {
            if sc.duration_ms == 0 {
                return Err(Error::Config(format!("scenario {name}: duration_ms must be positive")));
            }
            sc.link.link_config().validate()?;
        }
        for name in [
            &self.train.scenario,
            &self.frontier.scenario,
            &self.tcr.scenario,
            &self.convergence.scenario,
            &self.loss_sweep.scenario,
            &self.fairness.scenario,
        ] {
            self.scenario(name)?;
        }
        self.tuner.validate()?;
        self.train.agent.reward.validate()
    }

    pub fn scenario(&self, name: &str) -> Result<&Scenario> {
        self.scenarios
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown scenario {name:?}")))
    }

    /// Agent configuration for training on the train scenario.
    pub fn agent_config(&self) -> Result<AgentConfig> {
        let mut a = self.train.agent.clone();
        a.bound = self.scenario(&self.train.scenario)?.bound()?;
        a.validate()?;
        Ok(a)
    }

    /// Canonical JSON; the manifest hash is taken over this.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_reference_links() {
        let p = presets();
        let s = &p["steady"];
        assert_eq!(s.link.min_rtt_ms(), 60.0);
        assert_eq!(s.link.queue_capacity * 1500, 90_000);
        assert_eq!(s.bound().unwrap(), 24.0);
        let sat = &p["satellite"];
        assert_eq!(sat.link.min_rtt_ms(), 800.0);
        assert_eq!(sat.link.queue_capacity, 2800);
        assert_eq!(sat.link.stochastic_loss, 0.0074);
        assert_eq!(p["wifi"].link.min_rtt_ms(), 176.0);
        assert_eq!(p["wifi"].link.queue_capacity, 130);
        assert_eq!(p["cellular"].link.min_rtt_ms(), 200.0);
        assert_eq!(p["cellular"].link.queue_capacity, 140);
    }

    #[test]
    fn empty_config_is_all_defaults() {
        let c = HarnessConfig::from_toml("", None).unwrap();
        assert_eq!(c, HarnessConfig::default());
        assert_eq!(c.tcr.n_targets, 500);
        assert_eq!(c.fairness.stagger_ms, 15_000);
        assert_eq!(c.convergence.bin_ms, 500);
        assert_eq!(c.loss_sweep.losses.len(), 7);
        assert_eq!(c.frontier.goals.len(), 5);
        assert_eq!(c.train.iterations, 50_000);
    }

    #[test]
    fn scenario_tables_and_overrides() {
        let text = r#"
[train]
scenario = "lab"
iterations = 10
[train.agent]
batch_size = 8

[tcr]
n_targets = 3

[lab]
duration_ms = 5000
bound = 20.0
[lab.link]
one_way_delay_ms = 10
queue_capacity = 20
trace = { kind = "file", path = "lab.trace" }
"#;
        let c = HarnessConfig::from_toml(text, Some(Path::new("/cfg"))).unwrap();
        assert_eq!(c.train.agent.batch_size, 8);
        assert_eq!(c.train.agent.tau, 0.005);
        assert_eq!(c.tcr.n_targets, 3);
        assert_eq!(c.tcr.duration_ms, 40_000);
        let lab = c.scenario("lab").unwrap();
        assert_eq!(lab.link.trace, TraceSpec::File { path: "/cfg/lab.trace".into() });
        assert!(c.scenarios.contains_key("steady"));
        assert_eq!(c.agent_config().unwrap().bound, 20.0);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(matches!(
            HarnessConfig::from_toml("[train]\nscenario = \"nope\"\n", None),
            Err(Error::Config(_))
        ));
        assert!(HarnessConfig::from_toml("[tuner]\nk = 0\n", None).is_err());
        assert!(HarnessConfig::from_toml("[train\n", None).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = HarnessConfig::default();
        assert_eq!(a.hash(), HarnessConfig::default().hash());
        let mut b = a.clone();
        b.tcr.n_targets = 499;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn bundled_trace_parses() {
        let p = presets();
        let r = p["cellular"].link.peak_rate_mbps().unwrap();
        assert!(r > 1.0, "{r}");
    }
}
