use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ScenarioError;
use crate::grid::{GridCase, Topology, TopologyAction};

const DESK: &str = include_str!("../../data/desk.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    TestOod,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::TestOod];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::TestOod => "test_ood",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| ScenarioError::UnknownSplit(s.to_string()))
    }
}

/// A busbar action in roster order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SetBus {
    pub substation: usize,
    pub busbars: Vec<i8>,
}

impl SetBus {
    pub fn action(&self) -> TopologyAction {
        TopologyAction::SetBus {
            substation: self.substation,
            busbars: self.busbars.clone(),
        }
    }
}

/// Lines of a multi-disconnection must pairwise lie within `hops`
/// substation hops of each other (end to nearest end).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    #[serde(default = "one")]
    pub hops: usize,
    /// Restricts the candidates to lines within `hops` of these substations.
    #[serde(default)]
    pub substations: Vec<usize>,
}

fn one() -> usize {
    1
}

/// Sampling parameters of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageParams {
    /// Probability of depth `1, 2, ...`.
    pub prob_depth: Vec<f64>,
    /// Probability of (busbar action, line disconnection).
    pub prob_type: [f64; 2],
    pub prob_do_nothing: f64,
    pub max_disc: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceArgs {
    pub topo_actions: Vec<SetBus>,
    pub prob_depth: Vec<f64>,
    pub prob_type: [f64; 2],
    pub prob_do_nothing: f64,
    pub max_disc: usize,
}

impl ReferenceArgs {
    pub fn params(&self) -> StageParams {
        StageParams {
            prob_depth: self.prob_depth.clone(),
            prob_type: self.prob_type,
            prob_do_nothing: self.prob_do_nothing,
            max_disc: self.max_disc,
            region: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub train_env_seed: u64,
    pub val_env_seed: u64,
    pub test_env_seed: u64,
    pub test_ood_topo_env_seed: u64,
    pub train_actor_seed: u64,
    pub val_actor_seed: u64,
    pub test_actor_seed: u64,
    pub test_ood_topo_actor_seed: u64,
}

impl Seeds {
    /// Eight consecutive seeds from `base`; `base = 1` gives the default layout.
    pub fn from_base(base: u64) -> Self {
        let s = |i: u64| base.wrapping_add(i);
        Self {
            train_env_seed: s(0),
            val_env_seed: s(1),
            test_env_seed: s(2),
            test_ood_topo_env_seed: s(3),
            train_actor_seed: s(4),
            val_actor_seed: s(5),
            test_actor_seed: s(6),
            test_ood_topo_actor_seed: s(7),
        }
    }

    /// (injection stream, topology stream) of a split.
    pub fn of(&self, split: Split) -> (u64, u64) {
        match split {
            Split::Train => (self.train_env_seed, self.train_actor_seed),
            Split::Val => (self.val_env_seed, self.val_actor_seed),
            Split::Test => (self.test_env_seed, self.test_actor_seed),
            Split::TestOod => (self.test_ood_topo_env_seed, self.test_ood_topo_actor_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub test_ood: usize,
}

impl Samples {
    pub fn of(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
            Split::TestOod => self.test_ood,
        }
    }
}

/// Mean-one log-normal load multipliers `exp(σ_g z_g + σ_l z_i − (σ_g² + σ_l²)/2)`
/// with one shared and one per-load normal draw. Non-slack generation
/// follows the total load proportionally; voltage setpoints get an
/// independent relative normal perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionParams {
    pub load_sigma_global: f64,
    pub load_sigma_local: f64,
    pub prod_v_sigma: f64,
}

impl Default for InjectionParams {
    fn default() -> Self {
        Self {
            load_sigma_global: 0.10,
            load_sigma_local: 0.05,
            prod_v_sigma: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    /// Attempts per sample before the configuration is declared unsatisfiable.
    pub max_redraws: usize,
    /// Also store sparse YBus/SBus per sample.
    pub store_physics: bool,
    /// Solved samples whose losses over production fall outside this range
    /// are redrawn like solver failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_range: Option<[f64; 2]>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_redraws: 100,
            store_physics: false,
            loss_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seeds: Seeds,
    pub samples: Samples,
    pub reference_args: ReferenceArgs,
    pub train: StageParams,
    /// Defaults to the test parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<StageParams>,
    pub test: StageParams,
    pub test_ood: StageParams,
    #[serde(default)]
    pub injections: InjectionParams,
    #[serde(default)]
    pub generation: GenerationParams,
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn check_probabilities(key: &str, p: &[f64]) -> Result<(), ScenarioError> {
    if p.is_empty() {
        return Err(invalid(key, "must not be empty"));
    }
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(invalid(key, "entries must lie in [0, 1]"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(invalid(key, format!("must sum to 1, sums to {sum}")));
    }
    Ok(())
}

impl StageParams {
    fn validate(&self, section: &str, case: Option<&GridCase>) -> Result<(), ScenarioError> {
        check_probabilities(&format!("{section}.prob_depth"), &self.prob_depth)?;
        check_probabilities(&format!("{section}.prob_type"), &self.prob_type)?;
        if !(0.0..=1.0).contains(&self.prob_do_nothing) {
            return Err(invalid(format!("{section}.prob_do_nothing"), "must lie in [0, 1]"));
        }
        if let (Some(region), Some(case)) = (&self.region, case) {
            if let Some(&s) = region.substations.iter().find(|&&s| s >= case.n_substations()) {
                return Err(invalid(format!("{section}.region.substations"), format!("unknown substation {s}")));
            }
        }
        Ok(())
    }

    /// Largest depth with nonzero probability.
    pub fn max_depth(&self) -> usize {
        self.prob_depth.iter().rposition(|&p| p > 0.0).map_or(0, |i| i + 1)
    }
}

impl ScenarioConfig {
    /// The bundled desk-scale IEEE-118 layout.
    pub fn desk() -> Self {
        Self::from_toml(DESK).expect("bundled desk config is valid")
    }

    /// Parses and validates against no particular case.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_default();
            invalid(key, e.message().to_string())
        })?;
        cfg.validate(None)?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn params(&self, split: Split) -> &StageParams {
        match split {
            Split::Train => &self.train,
            Split::Val => self.val.as_ref().unwrap_or(&self.test),
            Split::Test => &self.test,
            Split::TestOod => &self.test_ood,
        }
    }

    /// Checks probabilities and counts; with a case, also checks that every
    /// reference action applies to the reference topology.
    pub fn validate(&self, case: Option<&GridCase>) -> Result<(), ScenarioError> {
        let r = &self.reference_args;
        r.params().validate("reference_args", case)?;
        if r.prob_do_nothing < 1.0 && r.prob_type[0] > 0.0 && r.topo_actions.is_empty() {
            return Err(invalid("reference_args.topo_actions", "busbar actions are sampled but none are listed"));
        }
        for split in Split::ALL {
            self.params(split).validate(split.name(), case)?;
            if self.samples.of(split) == 0 {
                return Err(invalid(format!("samples.{split}"), "must be positive"));
            }
        }
        if self.generation.max_redraws == 0 {
            return Err(invalid("generation.max_redraws", "must be positive"));
        }
        if let Some([lo, hi]) = self.generation.loss_range {
            if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
                return Err(invalid("generation.loss_range", format!("need 0 <= low < high, got [{lo}, {hi}]")));
            }
        }
        if let Some(case) = case {
            let reference = Topology::reference(case);
            for (i, a) in r.topo_actions.iter().enumerate() {
                reference
                    .apply(case, &a.action())
                    .map_err(|e| invalid(format!("reference_args.topo_actions[{i}]"), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Replaces the seeds by eight consecutive ones starting at `base`.
    pub fn with_seed(mut self, base: u64) -> Self {
        self.seeds = Seeds::from_base(base);
        self
    }

    /// Sets every sample count.
    pub fn with_samples(mut self, n: usize) -> Self {
        self.samples = Samples {
            train: n,
            val: n,
            test: n,
            test_ood: n,
        };
        self
    }
}

/// Distinct stream id per (split, stage) so reseeding one never shifts another.
pub(crate) fn stream_id(split: Split, injections: bool) -> u64 {
    split.index() * 2 + injections as u64
}
