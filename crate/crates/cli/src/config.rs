//! Run configuration.
//!
//! One TOML file with the sections `lattice`, `dynamics`, `observation`,
//! `filter`, `seeds` and `output`. Every key is optional and defaults to the
//! 100 × 100 Oregonator experiment. Dotted `key=value` overrides are applied
//! on top of the file before validation.

use std::path::{Path, PathBuf};

use rdbpf::{
    InitialDistribution, Integrator, Lattice64, NoiseModel, ObservationModel64, Oregonator64, OregonatorParams64,
    ProposalKind, ResamplingScheme, StateField64,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    /// Grid points per dimension.
    pub side: usize,
    pub spacing: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { side: 100, spacing: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    /// Centre in lattice coordinates (0-based, may be fractional).
    pub row: f64,
    pub col: f64,
    pub width: f64,
    /// Relative amplitude applied to every species.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub dt: f64,
    /// Simulated time; the run has `horizon / dt` steps.
    pub horizon: f64,
    pub sigma_x: f64,
    pub integrator: IntegratorKind,
    pub rk4_substeps: usize,
    pub positivity_floor: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub q: f64,
    pub d1: f64,
    pub d2: f64,
    /// Optional localised perturbation of the homogeneous initial state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bump: Option<BumpConfig>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let p = OregonatorParams64::default();
        let n = NoiseModel::<f64>::default();
        DynamicsConfig {
            dt: n.dt,
            horizon: 40.0,
            sigma_x: n.sigma_x,
            integrator: IntegratorKind::Euler,
            rk4_substeps: 4,
            positivity_floor: rdbpf::POSITIVITY_FLOOR,
            epsilon: p.epsilon,
            sigma: p.sigma,
            q: p.q,
            d1: p.d1,
            d2: p.d2,
            bump: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub n_wavelengths: usize,
    /// Wavelength grid `λ_j = min + j (max − min) / n`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Band centre per species.
    pub centers: Vec<f64>,
    pub width: f64,
    pub sigma_y2: f64,
    /// Dynamics steps per observation.
    pub stride: u64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            n_wavelengths: 10,
            lambda_min: 0.0,
            lambda_max: 50.0,
            centers: vec![10.0, 40.0],
            width: 30.0,
            sigma_y2: NoiseModel::<f64>::default().sigma_y2,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub n_particles: usize,
    pub block_side: usize,
    pub proposal: ProposalKind,
    pub resampling: ResamplingScheme,
    /// Log-normal spread of the initial ensemble; 0 starts every particle at
    /// the initial state.
    pub initial_rel_std: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            n_particles: 128,
            block_side: 5,
            proposal: ProposalKind::Optimal,
            resampling: ResamplingScheme::Multinomial,
            initial_rel_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub simulation: u64,
    pub filter: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { simulation: 1, filter: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Times at which PGM snapshots and estimate dumps are written.
    pub snapshot_times: Vec<f64>,
    /// Dump the filter estimate at every observation, not only at snapshots.
    pub all_estimates: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            snapshot_times: vec![10.0, 20.0, 30.0, 40.0],
            all_estimates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub dynamics: DynamicsConfig,
    pub observation: ObservationConfig,
    pub filter: FilterSection,
    pub seeds: SeedConfig,
    pub output: OutputConfig,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` in a table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| usage(format!("override '{assignment}' is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("override key '{key}' is malformed")));
    }
    let mut t = table;
    for part in &path[..path.len() - 1] {
        let entry = t
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| usage(format!("override key '{key}': '{part}' is not a section")))?;
    }
    t.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads an optional file, applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> CliResult<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(usage(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if self.lattice.side < 2 {
            return Err(usage(format!("lattice.side must be >= 2, got {}", self.lattice.side)));
        }
        pos("lattice.spacing", self.lattice.spacing)?;
        let d = &self.dynamics;
        pos("dynamics.dt", d.dt)?;
        pos("dynamics.horizon", d.horizon)?;
        pos("dynamics.epsilon", d.epsilon)?;
        pos("dynamics.q", d.q)?;
        if !(d.sigma_x >= 0.0 && d.sigma_x.is_finite()) {
            return Err(usage(format!("dynamics.sigma_x must be finite and >= 0, got {}", d.sigma_x)));
        }
        for (name, v) in [("dynamics.d1", d.d1), ("dynamics.d2", d.d2), ("dynamics.positivity_floor", d.positivity_floor)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(usage(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !d.sigma.is_finite() {
            return Err(usage("dynamics.sigma must be finite"));
        }
        if d.integrator == IntegratorKind::Rk4 && d.rk4_substeps == 0 {
            return Err(usage("dynamics.rk4_substeps must be >= 1"));
        }
        if let Some(b) = &d.bump {
            if ![b.row, b.col, b.amplitude].iter().all(|v| v.is_finite()) || !(b.width > 0.0) {
                return Err(usage("dynamics.bump needs finite row, col, amplitude and width > 0"));
            }
        }
        self.n_steps()?;
        let o = &self.observation;
        if o.n_wavelengths == 0 {
            return Err(usage("observation.n_wavelengths must be >= 1"));
        }
        if !(o.lambda_max > o.lambda_min) || !o.lambda_min.is_finite() || !o.lambda_max.is_finite() {
            return Err(usage("observation.lambda_max must exceed observation.lambda_min"));
        }
        if o.centers.len() != 2 || o.centers.iter().any(|c| !c.is_finite()) {
            return Err(usage(format!(
                "observation.centers needs one finite band centre per species (2), got {}",
                o.centers.len()
            )));
        }
        pos("observation.width", o.width)?;
        pos("observation.sigma_y2", o.sigma_y2)?;
        if o.stride == 0 {
            return Err(usage("observation.stride must be >= 1"));
        }
        let f = &self.filter;
        if f.n_particles == 0 {
            return Err(usage("filter.n_particles must be >= 1"));
        }
        if f.block_side == 0 || f.block_side > self.lattice.side {
            return Err(usage(format!(
                "filter.block_side must lie in 1..={}, got {}",
                self.lattice.side, f.block_side
            )));
        }
        if !(f.initial_rel_std >= 0.0 && f.initial_rel_std.is_finite()) {
            return Err(usage("filter.initial_rel_std must be finite and >= 0"));
        }
        for &t in &self.output.snapshot_times {
            if !(t > 0.0 && t.is_finite()) {
                return Err(usage(format!("output.snapshot_times entries must be positive, got {t}")));
            }
            self.observation_index(t)?;
        }
        Ok(())
    }

    fn steps_for(&self, what: &str, t: f64) -> CliResult<u64> {
        let n = t / self.dynamics.dt;
        let r = n.round();
        if r < 1.0 || (n - r).abs() > 1e-6 * r.max(1.0) {
            return Err(usage(format!(
                "{what} = {t} is not a positive multiple of dynamics.dt = {}",
                self.dynamics.dt
            )));
        }
        Ok(r as u64)
    }

    /// Number of dynamics steps to the horizon.
    pub fn n_steps(&self) -> CliResult<u64> {
        let n = self.steps_for("dynamics.horizon", self.dynamics.horizon)?;
        if n < self.observation.stride {
            return Err(usage("dynamics.horizon is shorter than one observation stride"));
        }
        Ok(n)
    }

    /// Number of observations up to the horizon.
    pub fn n_observations(&self) -> CliResult<u64> {
        Ok(self.n_steps()? / self.observation.stride)
    }

    /// 1-based observation index at time `t`.
    pub fn observation_index(&self, t: f64) -> CliResult<u64> {
        let k = self.steps_for("output.snapshot_times entry", t)?;
        if k % self.observation.stride != 0 {
            return Err(usage(format!(
                "snapshot time {t} does not fall on an observation (stride {})",
                self.observation.stride
            )));
        }
        Ok(k / self.observation.stride)
    }

    pub fn lattice(&self) -> CliResult<Lattice64> {
        Ok(Lattice64::new(self.lattice.side, self.lattice.spacing)?)
    }

    pub fn params(&self) -> OregonatorParams64 {
        let d = &self.dynamics;
        OregonatorParams64 {
            epsilon: d.epsilon,
            sigma: d.sigma,
            q: d.q,
            d1: d.d1,
            d2: d.d2,
        }
    }

    pub fn model(&self) -> CliResult<Oregonator64> {
        let d = &self.dynamics;
        let noise = NoiseModel {
            sigma_x: d.sigma_x,
            sigma_y2: self.observation.sigma_y2,
            dt: d.dt,
        };
        let integrator = match d.integrator {
            IntegratorKind::Euler => Integrator::Euler,
            IntegratorKind::Rk4 => Integrator::Rk4 {
                substeps: d.rk4_substeps,
            },
        };
        let mut m = Oregonator64::new(self.lattice()?, self.params(), &noise, integrator)?;
        m.floor = d.positivity_floor;
        Ok(m)
    }

    pub fn observation_model(&self) -> CliResult<ObservationModel64> {
        let o = &self.observation;
        Ok(ObservationModel64::gaussian_bands(
            o.n_wavelengths,
            o.lambda_min,
            o.lambda_max,
            &o.centers,
            o.width,
            o.sigma_y2,
        )?)
    }

    /// Homogeneous steady state, optionally with the configured bump.
    pub fn initial_state(&self, model: &Oregonator64) -> CliResult<StateField64> {
        let mut x = model.steady_state_field()?;
        if let Some(b) = &self.dynamics.bump {
            x.add_bump(b.row, b.col, b.width, b.amplitude);
        }
        Ok(x)
    }

    pub fn initial_distribution(&self, model: &Oregonator64) -> CliResult<InitialDistribution<f64>> {
        let x = self.initial_state(model)?;
        Ok(if self.filter.initial_rel_std > 0.0 {
            InitialDistribution::LogNormal {
                center: x,
                rel_std: self.filter.initial_rel_std,
            }
        } else {
            InitialDistribution::Dirac(x)
        })
    }

    /// Library filter settings for this run.
    pub fn filter_config(&self) -> rdbpf::FilterConfig {
        rdbpf::FilterConfig {
            n_particles: self.filter.n_particles,
            block_side: self.filter.block_side,
            proposal: self.filter.proposal,
            resampling: self.filter.resampling,
            seed: self.seeds.filter,
            stride: self.observation.stride,
            ..rdbpf::FilterConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_experiment_setup() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lattice.side, 100);
        assert_eq!(c.n_steps().unwrap(), 4000);
        let m = c.model().unwrap();
        let obs = c.observation_model().unwrap();
        assert_eq!(rdbpf::StateSpaceModel::state_len(&m), 20_000);
        assert_eq!(obs.n_wavelengths() * 100 * 100, 100_000);
        assert_eq!(obs.wavelengths()[1], 5.0);
        assert_eq!(c.lattice().unwrap().make_partition(5).unwrap().n_blocks(), 400);
        assert_eq!(c.observation_index(10.0).unwrap(), 1000);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::load(
            None,
            &[
                "lattice.side=12".into(),
                "filter.proposal=standard".into(),
                "filter.proposal = \"bootstrap\"".into(),
                "output.snapshot_times=[0.5, 1.0]".into(),
                "dynamics.horizon=1".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.lattice.side, 12);
        assert_eq!(c.filter.proposal, ProposalKind::Bootstrap);
        assert_eq!(c.output.snapshot_times, vec![0.5, 1.0]);
        // Integer literal accepted for a float key.
        assert_eq!(c.dynamics.horizon, 1.0);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::load(None, &["lattice.sied=3".into()]).unwrap_err();
        assert!(e.to_string().contains("sied"), "{e}");
        let e = RunConfig::load(None, &["filter.block_side=0".into()]).unwrap_err();
        assert!(e.to_string().contains("filter.block_side"), "{e}");
        let e = RunConfig::load(None, &["dynamics.horizon=0.005".into()]).unwrap_err();
        assert!(e.to_string().contains("dynamics.horizon"), "{e}");
        let e = RunConfig::load(None, &["output.snapshot_times=[10.005]".into()]).unwrap_err();
        assert!(e.to_string().contains("snapshot"), "{e}");
        assert!(RunConfig::load(None, &["nokey".into()]).is_err());
    }

    fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
        lo..hi
    }

    prop_compose! {
        fn arb_config()(
            side in 2usize..300,
            spacing in finite(1e-3, 1.0),
            steps in 1u64..10_000,
            dt in finite(1e-4, 0.1),
            sigma_x in finite(0.0, 1.0),
            rk4 in any::<bool>(),
            substeps in 1usize..10,
            eps in finite(1e-3, 1.0),
            q in finite(1e-4, 0.1),
            d in (finite(0.0, 1e-2), finite(0.0, 1e-2)),
            bump in proptest::option::of((finite(0.0, 10.0), finite(0.0, 10.0), finite(0.1, 5.0), finite(-0.5, 0.5))),
            nl in 1usize..20,
            sigma_y2 in finite(1e-8, 1.0),
            np in 1usize..1000,
            proposal in prop_oneof![Just(ProposalKind::Bootstrap), Just(ProposalKind::Optimal)],
            systematic in any::<bool>(),
            rel in finite(0.0, 0.5),
            seeds in (any::<u64>(), any::<u64>()),
            all in any::<bool>(),
            bs_frac in 0.0f64..1.0,
        ) -> RunConfig {
            let mut c = RunConfig::default();
            c.lattice = LatticeConfig { side, spacing };
            c.dynamics.dt = dt;
            c.dynamics.horizon = steps as f64 * dt;
            c.dynamics.sigma_x = sigma_x;
            c.dynamics.integrator = if rk4 { IntegratorKind::Rk4 } else { IntegratorKind::Euler };
            c.dynamics.rk4_substeps = substeps;
            c.dynamics.epsilon = eps;
            c.dynamics.q = q;
            c.dynamics.d1 = d.0;
            c.dynamics.d2 = d.1;
            c.dynamics.bump = bump.map(|(row, col, width, amplitude)| BumpConfig { row, col, width, amplitude });
            c.observation.n_wavelengths = nl;
            c.observation.sigma_y2 = sigma_y2;
            c.filter.n_particles = np;
            c.filter.block_side = 1 + (bs_frac * (side - 1) as f64) as usize;
            c.filter.proposal = proposal;
            c.filter.resampling = if systematic { ResamplingScheme::Systematic } else { ResamplingScheme::Multinomial };
            c.filter.initial_rel_std = rel;
            c.seeds = SeedConfig { simulation: seeds.0, filter: seeds.1 };
            c.output.snapshot_times = vec![c.dynamics.horizon];
            c.output.all_estimates = all;
            c
        }
    }

    proptest! {
        #[test]
        fn config_round_trips(c in arb_config()) {
            c.validate().unwrap();
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
