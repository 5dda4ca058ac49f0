//! TOML run configuration.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use stochabs_core::linalg::{from_rows, Mat, Vector};
use stochabs_core::spec::{Acceptance, SpecKind};
use stochabs_core::{
    AbstractionOptions, Dfa, Error, Grid, HorizonSpec, HyperRect, InputGain, InputSet, LabelMap, LinearDtScs, Region,
    Result, TruncationPolicy,
};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelBlock>,
    pub grid: Option<GridBlock>,
    pub spec: Option<SpecBlock>,
    pub bounds: Option<BoundsBlock>,
    pub barrier: Option<BarrierBlock>,
    pub network: Option<NetworkBlock>,
    pub sim: Option<SimBlock>,
    pub output: Option<OutputBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ModelBlock {
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    pub c0: Vec<f64>,
    pub C: Vec<Vec<f64>>,
    pub R: Vec<f64>,
    /// `A(u) = (1 − θ − γu₀)·A`.
    pub gain: Option<GainBlock>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainBlock {
    pub theta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
    pub input_lower: Option<f64>,
    pub input_upper: Option<f64>,
    pub input_count: Option<usize>,
    pub input_values: Option<Vec<Vec<f64>>>,
    pub truncation: Option<f64>,
    pub max_bytes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecBlock {
    /// `safety`, `reachability`, `reach-avoid` or `dfa`.
    pub kind: String,
    pub horizon: usize,
    pub safe: Option<Vec<BoxBlock>>,
    pub target: Option<Vec<BoxBlock>>,
    pub dfa: Option<DfaBlock>,
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfaBlock {
    pub locations: Vec<String>,
    pub alphabet: Vec<String>,
    pub initial: String,
    pub accepting: Vec<String>,
    pub transitions: Vec<[String; 3]>,
    pub labels: Vec<LabelBlock>,
    pub default_letter: String,
    /// `reach` or `invariant`.
    pub acceptance: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelBlock {
    pub letter: String,
    pub boxes: Vec<BoxBlock>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundsBlock {
    pub lambda1: Option<Lambda1Block>,
    pub lambda2: Option<Lambda2Block>,
    pub quadratic: Option<QuadraticBlock>,
    pub grid_ssf: Option<GridSsfBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambda1Block {
    /// `lambda1`, `lambda1_bar` or `two_lambda1_bar`.
    pub kind: String,
    /// `H` or `H̄`; derived from the model when absent.
    pub constant: Option<f64>,
    /// Grid diameter; taken from the grid block when absent.
    pub delta: Option<f64>,
    pub horizon: usize,
    pub l_b: Option<f64>,
    /// Input at which an input-dependent state matrix is evaluated.
    pub input: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambda2Block {
    pub k_alpha: f64,
    #[serde(default = "two")]
    pub alpha_exp: f64,
    pub kappa: f64,
    pub rho_coef: Option<f64>,
    #[serde(default = "two")]
    pub rho_exp: f64,
    pub psi: f64,
    #[serde(default)]
    pub v0: f64,
    #[serde(default)]
    pub u_sup: f64,
    pub epsilon: f64,
    pub horizon: usize,
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct QuadraticBlock {
    pub abstraction: ModelBlock,
    pub M: Vec<Vec<f64>>,
    pub P: Vec<Vec<f64>>,
    pub K: Vec<Vec<f64>>,
    pub Q: Vec<Vec<f64>>,
    pub pi: f64,
    pub kappa_hat: f64,
    pub epsilon: Option<f64>,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub u_sup: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSsfBlock {
    pub pi: f64,
    pub epsilon: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierBlock {
    /// Univariate coefficients, constant term first.
    pub coefficients: Option<Vec<f64>>,
    pub terms: Option<Vec<TermBlock>>,
    pub eta: f64,
    pub beta: f64,
    pub kappa: f64,
    pub c: f64,
    pub controller_gain: Option<Vec<Vec<f64>>>,
    pub controller_offset: Option<Vec<f64>>,
    pub initial: Vec<BoxBlock>,
    #[serde(rename = "unsafe")]
    pub unsafe_set: Vec<BoxBlock>,
    pub domain: Vec<BoxBlock>,
    pub spacing: f64,
    pub horizon: Option<usize>,
    pub lipschitz: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermBlock {
    pub powers: Vec<u32>,
    pub coef: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBlock {
    /// `ring` or `explicit`.
    pub topology: String,
    pub subsystems: usize,
    pub room: RoomBlock,
    /// Coupling matrix for `explicit` (internal inputs × internal outputs).
    pub coupling: Option<Vec<Vec<f64>>>,
    /// Per-subsystem SSF constants; derived from the grids when absent.
    pub ssf: Option<SubsystemSsfBlock>,
    pub state_lower: f64,
    pub state_upper: f64,
    pub state_cells: usize,
    pub internal_cells: usize,
    pub input_lower: f64,
    pub input_upper: f64,
    pub input_count: usize,
    #[serde(default = "one")]
    pub pi1: f64,
    #[serde(default = "one")]
    pub pi2: f64,
    pub epsilon: f64,
    pub horizon: usize,
    /// `max` or `sum`.
    #[serde(default = "max_str")]
    pub composition: String,
    /// Output deviation norm for max-type composition: `max` or `euclidean`.
    #[serde(default = "max_str")]
    pub norm: String,
    #[serde(default = "yes")]
    pub build_abstractions: bool,
}

fn one() -> f64 {
    1.0
}

fn max_str() -> String {
    "max".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomBlock {
    pub theta: f64,
    pub gamma: f64,
    pub t_heater: f64,
    pub t_ext: f64,
    pub sigma: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSsfBlock {
    pub k_alpha: f64,
    pub kappa: f64,
    pub rho_int: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub seed: u64,
    pub n_traj: usize,
    pub horizon: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub x0_box: Option<BoxBlock>,
    /// `constant`, `affine`, `policy` or `barrier`.
    #[serde(default = "constant_str")]
    pub controller: String,
    pub input: Option<Vec<f64>>,
    pub gain: Option<Vec<Vec<f64>>>,
    pub offset: Option<Vec<f64>>,
    pub fallback: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub dump: bool,
    pub validate: Option<ValidateBlock>,
}

fn constant_str() -> String {
    "constant".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    /// `kushner`, `pro4` or `pro2`.
    pub kind: String,
    pub resolution: Option<f64>,
    pub x_hat0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
}

/// Parses TOML text after applying `key.path=value` overrides.
pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))
}

pub fn load(path: &Path, overrides: &[String]) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let cfg = parse(&text, overrides)?;
    Ok((cfg, config_hash(&text, overrides)))
}

pub fn config_hash(text: &str, overrides: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    for o in overrides {
        h.update(b"\n--set ");
        h.update(o.as_bytes());
    }
    hex::encode(h.finalize())
}

fn apply_override(root: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override '{item}' is not key=value")))?;
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|mut t| t.remove("v").unwrap())
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("override path '{key}' crosses a non-table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn mat(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    from_rows(rows).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

pub fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    mat(rows, what)
}

impl ModelBlock {
    pub fn build(&self) -> Result<LinearDtScs> {
        let a_base = mat(&self.A, "A")?;
        let b = mat(&self.B, "B")?;
        let (a, gain) = match self.gain {
            Some(g) => {
                let (a, gain) = InputGain::theta_gamma(g.theta, g.gamma, &a_base, b.ncols());
                (a, Some(gain))
            }
            None => (a_base, None),
        };
        LinearDtScs::new(
            a,
            b,
            Vector::from_vec(self.c0.clone()),
            mat(&self.C, "C")?,
            Vector::from_vec(self.R.clone()),
            gain,
        )
    }
}

impl BoxBlock {
    pub fn build(&self) -> Result<HyperRect> {
        HyperRect::new(self.lower.clone(), self.upper.clone())
    }
}

pub fn region(boxes: &[BoxBlock]) -> Result<Region> {
    Region::new(boxes.iter().map(BoxBlock::build).collect::<Result<_>>()?)
}

impl GridBlock {
    pub fn state_grid(&self) -> Result<Grid> {
        Grid::new(HyperRect::new(self.lower.clone(), self.upper.clone())?, self.cells.clone())
    }

    pub fn inputs(&self) -> Result<InputSet> {
        match (&self.input_values, self.input_lower, self.input_upper, self.input_count) {
            (Some(v), None, None, None) => InputSet::list(v.clone()),
            (None, Some(lo), Some(hi), Some(n)) => InputSet::linspace(lo, hi, n),
            _ => Err(Error::Parse(
                "grid needs either input_values or all of input_lower, input_upper, input_count".into(),
            )),
        }
    }

    pub fn options(&self) -> Result<AbstractionOptions> {
        let mut o = AbstractionOptions::default();
        if let Some(g) = self.truncation {
            o.truncation = TruncationPolicy::new(g)?;
        }
        if self.max_bytes.is_some() {
            o.max_bytes = self.max_bytes;
        }
        Ok(o)
    }
}

impl SpecBlock {
    pub fn build(&self) -> Result<HorizonSpec> {
        let need = |b: &Option<Vec<BoxBlock>>, what: &str| -> Result<Region> {
            region(b.as_ref().ok_or_else(|| Error::Parse(format!("spec kind '{}' needs '{what}'", self.kind)))?)
        };
        Ok(match self.kind.as_str() {
            "safety" => HorizonSpec::safety(need(&self.safe, "safe")?, self.horizon),
            "reachability" => HorizonSpec::reachability(need(&self.target, "target")?, self.horizon),
            "reach-avoid" => HorizonSpec::reach_avoid(need(&self.safe, "safe")?, need(&self.target, "target")?, self.horizon),
            "dfa" => {
                let d = self.dfa.as_ref().ok_or_else(|| Error::Parse("spec kind 'dfa' needs a dfa table".into()))?;
                fn strs(v: &[String]) -> Vec<&str> {
                    v.iter().map(String::as_str).collect()
                }
                let triples: Vec<(&str, &str, &str)> =
                    d.transitions.iter().map(|t| (t[0].as_str(), t[1].as_str(), t[2].as_str())).collect();
                let dfa = Dfa::from_triples(&strs(&d.locations), &strs(&d.alphabet), &d.initial, &strs(&d.accepting), &triples)?;
                let labels = LabelMap::new(
                    d.labels.iter().map(|l| Ok((l.letter.clone(), region(&l.boxes)?))).collect::<Result<_>>()?,
                    d.default_letter.clone(),
                )?;
                let acceptance = match d.acceptance.as_str() {
                    "reach" => Acceptance::Reach,
                    "invariant" => Acceptance::Invariant,
                    other => return Err(Error::Parse(format!("unknown acceptance '{other}'"))),
                };
                HorizonSpec::dfa(dfa, labels, acceptance, self.horizon)?
            }
            other => return Err(Error::Parse(format!("unknown spec kind '{other}'"))),
        })
    }
}

/// Regions a spec refers to (for reporting).
pub fn spec_summary(spec: &HorizonSpec) -> String {
    match &spec.kind {
        SpecKind::Safety { .. } => format!("safety over {} steps", spec.horizon),
        SpecKind::Reachability { .. } => format!("reachability within {} steps", spec.horizon),
        SpecKind::ReachAvoid { .. } => format!("reach-avoid within {} steps", spec.horizon),
        SpecKind::Dfa { dfa, .. } => format!("DFA with {} locations over {} steps", dfa.num_locations(), spec.horizon),
    }
}

/// Which blocks each subcommand needs.
pub fn require(cfg: &RunConfig, subcommand: &str) -> Result<()> {
    let missing = |name: &str| Error::Parse(format!("subcommand '{subcommand}' needs a [{name}] block"));
    let has = |b: bool, name: &str| if b { Ok(()) } else { Err(missing(name)) };
    match subcommand {
        "abstract" => {
            has(cfg.model.is_some(), "model")?;
            has(cfg.grid.is_some(), "grid")
        }
        "synthesize" => {
            has(cfg.model.is_some(), "model")?;
            has(cfg.grid.is_some(), "grid")?;
            has(cfg.spec.is_some(), "spec")
        }
        "bounds" => has(cfg.bounds.is_some(), "bounds"),
        "verify-barrier" => {
            has(cfg.model.is_some(), "model")?;
            has(cfg.barrier.is_some(), "barrier")
        }
        "compose" => has(cfg.network.is_some(), "network"),
        "simulate" => {
            has(cfg.model.is_some(), "model")?;
            has(cfg.sim.is_some(), "sim")
        }
        "validate" => {
            has(cfg.model.is_some(), "model")?;
            let sim = cfg.sim.as_ref().ok_or_else(|| missing("sim"))?;
            has(sim.validate.is_some(), "sim.validate")
        }
        _ => Ok(()),
    }
}
