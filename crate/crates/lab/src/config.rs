use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lle_core::damping::DampingOptions;
use lle_core::modulation::{CorpusOptions, PhaseMethod, PhaseOptions};
use lle_core::params::{shipped_params, shipped_wavenumber};
use lle_core::wave::NewtonOptions;
use lle_core::whitham::FitWindow;
use lle_core::{Error, LleParams, Lp, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed for every randomized corpus.
    pub seed: u64,
    /// Root for artifact directories; `LLE_LAB_OUT` and `--out` take precedence.
    pub output_dir: String,
    pub params: ParamsSection,
    pub wave: WaveSection,
    pub spectrum: SpectrumSection,
    pub grid: GridSection,
    pub localized: LocalizedSection,
    pub nonlocalized: NonlocalizedSection,
    pub integrator: IntegratorSection,
    pub damping: DampingSection,
    pub equivalence: EquivalenceSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub alpha: f64,
    pub beta: f64,
    pub f_pump: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WaveSection {
    /// Periods per unit length.
    pub k: f64,
    /// Collocation points per period.
    pub n_points: usize,
    /// Amplitude of the Turing seed; zero starts from the constant state.
    pub seed_amplitude: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub n_xi: usize,
    /// Bloch harmonics per component; zero uses the wave's collocation size.
    pub n_modes: usize,
    pub xi_fit_frac: f64,
    pub delta_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub periods: usize,
    pub points_per_period: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizedSection {
    /// Bump height relative to `sup |phi|`.
    pub amplitude_frac: f64,
    /// Gaussian width in periods.
    pub width_periods: f64,
    pub center_offset_periods: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NonlocalizedSection {
    /// Phase offset on the central plateau.
    pub jump: f64,
    /// Front width in `x`.
    pub front_width: f64,
    /// Time at which `||gamma||_{L^2}` is compared on the doubled domain (capped at `t_final`).
    pub doubling_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub dt: f64,
    pub t_final: f64,
    /// Time between stored snapshots.
    pub save_interval: f64,
    /// Every n-th stored snapshot is written to disk.
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DampingSection {
    pub periods: usize,
    pub points_per_period: usize,
    pub amplitude_frac: f64,
    pub t_final: f64,
    pub dt: f64,
    pub save_interval: f64,
    pub j_max: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_theta: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub n_c: usize,
    pub knee_factor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EquivalenceSection {
    pub samples: usize,
    pub n_points: usize,
    pub length: f64,
    pub max_mode: i64,
    pub max_gamma_x: f64,
    /// Exponents checked; `inf` allowed.
    pub p: Vec<String>,
    pub hk_order: usize,
    /// Samples for the `H^k` constant.
    pub hk_samples: usize,
    pub hk_cap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub phase_method: PhaseMethod,
    /// Newton refinements of the Bloch-projected phase.
    pub phase_refine_iters: usize,
    pub eta: f64,
    pub t_min: f64,
    pub tolerance: f64,
    /// Family members on each side of `k_*`.
    pub family_half: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: "lle-runs".into(),
            params: ParamsSection::default(),
            wave: WaveSection::default(),
            spectrum: SpectrumSection::default(),
            grid: GridSection::default(),
            localized: LocalizedSection::default(),
            nonlocalized: NonlocalizedSection::default(),
            integrator: IntegratorSection::default(),
            damping: DampingSection::default(),
            equivalence: EquivalenceSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = shipped_params();
        ParamsSection { alpha: p.alpha, beta: p.beta, f_pump: p.f_pump }
    }
}

impl Default for WaveSection {
    fn default() -> Self {
        WaveSection { k: shipped_wavenumber(), n_points: 64, seed_amplitude: 0.6, newton_tol: 1e-12, newton_max_iters: 50 }
    }
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection { n_xi: 128, n_modes: 0, xi_fit_frac: 0.1, delta_gap: 1e-3 }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { periods: 128, points_per_period: 64 }
    }
}

impl Default for LocalizedSection {
    fn default() -> Self {
        LocalizedSection { amplitude_frac: 1e-3, width_periods: 0.1, center_offset_periods: 0.15 }
    }
}

impl Default for NonlocalizedSection {
    fn default() -> Self {
        NonlocalizedSection { jump: 0.1, front_width: 1.0, doubling_time: 200.0 }
    }
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection { dt: 0.02, t_final: 1000.0, save_interval: 1.0, snapshot_stride: 100 }
    }
}

impl Default for DampingSection {
    fn default() -> Self {
        let d = DampingOptions::default();
        DampingSection {
            periods: 32,
            points_per_period: 64,
            amplitude_frac: 1e-3,
            t_final: 200.0,
            dt: 0.01,
            save_interval: 0.5,
            j_max: 3,
            theta_min: d.theta_min,
            theta_max: d.theta_max,
            n_theta: d.n_theta,
            c_min: d.c_min,
            c_max: d.c_max,
            n_c: d.n_c,
            knee_factor: d.knee_factor,
        }
    }
}

impl Default for EquivalenceSection {
    fn default() -> Self {
        let c = CorpusOptions::default();
        EquivalenceSection {
            samples: 1000,
            n_points: c.n_points,
            length: c.length,
            max_mode: c.max_mode,
            max_gamma_x: c.max_gx,
            p: vec!["1".into(), "2".into(), "4".into(), "inf".into()],
            hk_order: 2,
            hk_samples: 200,
            hk_cap: 2.0,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let w = FitWindow::default();
        AnalysisSection {
            phase_method: PhaseMethod::BlochProjection,
            phase_refine_iters: PhaseOptions::default().refine_iters,
            eta: 0.1,
            t_min: w.t_min,
            tolerance: w.tolerance,
            family_half: 10,
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub fn parse_lp(s: &str) -> Result<Lp> {
    match s.trim() {
        "inf" | "infinity" => Ok(Lp::Infinity),
        other => match other.parse::<f64>() {
            Ok(p) if p >= 1.0 && p.is_finite() => Ok(Lp::Finite(p)),
            _ => Err(config_error(format!("invalid exponent {other:?}"))),
        },
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads `path` (or the defaults) and applies `section.key=value` overrides.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?,
            None => ExperimentConfig::default().to_toml(),
        };
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.lle_params()?;
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_error(format!("{name} must be positive, got {v}")))
            }
        };
        pos("wave.k", self.wave.k)?;
        pos("wave.newton_tol", self.wave.newton_tol)?;
        pos("integrator.dt", self.integrator.dt)?;
        pos("integrator.t_final", self.integrator.t_final)?;
        pos("integrator.save_interval", self.integrator.save_interval)?;
        pos("damping.dt", self.damping.dt)?;
        pos("damping.t_final", self.damping.t_final)?;
        pos("damping.save_interval", self.damping.save_interval)?;
        pos("localized.width_periods", self.localized.width_periods)?;
        pos("nonlocalized.front_width", self.nonlocalized.front_width)?;
        pos("nonlocalized.doubling_time", self.nonlocalized.doubling_time)?;
        pos("equivalence.length", self.equivalence.length)?;
        pos("analysis.eta", self.analysis.eta)?;
        pos("analysis.tolerance", self.analysis.tolerance)?;
        if self.wave.n_points < 64 || !self.wave.n_points.is_power_of_two() {
            return Err(config_error("wave.n_points must be a power of two, at least 64"));
        }
        if self.grid.periods == 0 || self.grid.points_per_period < 8 || self.damping.periods == 0 || self.damping.points_per_period < 8 {
            return Err(config_error("grids need at least one period and eight points per period"));
        }
        for (name, n) in [("grid", self.grid.periods * self.grid.points_per_period), ("damping", self.damping.periods * self.damping.points_per_period)] {
            if !n.is_power_of_two() {
                return Err(config_error(format!("{name}: periods * points_per_period = {n} must be a power of two")));
            }
        }
        if self.spectrum.n_xi < 64 || !self.spectrum.n_xi.is_multiple_of(2) {
            return Err(config_error("spectrum.n_xi must be even and at least 64"));
        }
        if self.integrator.snapshot_stride == 0 {
            return Err(config_error("integrator.snapshot_stride must be at least 1"));
        }
        self.save_every()?;
        self.damping_save_every()?;
        if self.equivalence.max_gamma_x <= 0.0 || self.equivalence.max_gamma_x >= 1.0 {
            return Err(config_error("equivalence.max_gamma_x must lie in (0, 1)"));
        }
        if self.equivalence.p.is_empty() {
            return Err(config_error("equivalence.p must list at least one exponent"));
        }
        for p in &self.equivalence.p {
            parse_lp(p)?;
        }
        if self.analysis.family_half < 2 {
            return Err(config_error("analysis.family_half must be at least 2"));
        }
        self.damping_options().validate()
    }

    pub fn lle_params(&self) -> Result<LleParams> {
        LleParams::new(self.params.alpha, self.params.beta, self.params.f_pump).map_err(|e| config_error(e.to_string()))
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions { max_iters: self.wave.newton_max_iters, tol: self.wave.newton_tol }
    }

    fn steps(interval: f64, dt: f64, name: &str) -> Result<usize> {
        let s = interval / dt;
        let r = s.round();
        if r < 1.0 || (s - r).abs() > 1e-9 * s.max(1.0) {
            return Err(config_error(format!("{name} must be a positive multiple of the time step")));
        }
        Ok(r as usize)
    }

    pub fn save_every(&self) -> Result<usize> {
        Self::steps(self.integrator.save_interval, self.integrator.dt, "integrator.save_interval")
    }

    pub fn damping_save_every(&self) -> Result<usize> {
        Self::steps(self.damping.save_interval, self.damping.dt, "damping.save_interval")
    }

    /// Comparison time of the domain-doubling run, at most `t_final`.
    pub fn doubling_time(&self) -> f64 {
        self.nonlocalized.doubling_time.min(self.integrator.t_final)
    }

    pub fn damping_options(&self) -> DampingOptions {
        let d = &self.damping;
        DampingOptions {
            theta_min: d.theta_min,
            theta_max: d.theta_max,
            n_theta: d.n_theta,
            c_min: d.c_min,
            c_max: d.c_max,
            n_c: d.n_c,
            knee_factor: d.knee_factor,
        }
    }

    pub fn phase_options(&self) -> PhaseOptions {
        PhaseOptions { refine_iters: self.analysis.phase_refine_iters, ..PhaseOptions::default() }
    }

    pub fn fit_window(&self) -> FitWindow {
        FitWindow { t_min: self.analysis.t_min, tolerance: self.analysis.tolerance }
    }

    pub fn corpus_options(&self, n_points: usize) -> CorpusOptions {
        CorpusOptions {
            n_points,
            length: self.equivalence.length,
            max_mode: self.equivalence.max_mode,
            max_gx: self.equivalence.max_gamma_x,
            hk_cap: None,
            seed: self.seed,
        }
    }

    pub fn lp_exponents(&self) -> Result<Vec<Lp>> {
        self.equivalence.p.iter().map(|s| parse_lp(s)).collect()
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| config_error(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let value: toml::Value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut table = doc;
    for key in &keys[..keys.len() - 1] {
        table = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_error(format!("{key} in {path} is not a section")))?;
    }
    let last = keys[keys.len() - 1];
    // integers given for float fields stay valid
    let value = match (table.get(last), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(last.to_string(), value);
    Ok(())
}
