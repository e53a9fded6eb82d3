use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slitting-saw geometry and kinematics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutterModel {
    /// rad
    pub pitch_angle: f64,
    /// rad; only 0 is modelled.
    pub helix_angle: f64,
    /// m
    pub radius: f64,
    /// m
    pub width: f64,
    pub n_teeth: usize,
    /// rpm
    pub spindle_speed: f64,
    /// Radial to tangential force ratio.
    pub radial_ratio: f64,
}

impl Default for CutterModel {
    fn default() -> Self {
        CutterModel {
            pitch_angle: 0.126,
            helix_angle: 0.0,
            radius: 0.025,
            width: 0.0005,
            n_teeth: 50,
            spindle_speed: 1000.0,
            radial_ratio: 0.3,
        }
    }
}

impl CutterModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_teeth == 0 || !(self.radius > 0.0) || !(self.width > 0.0) || !(self.spindle_speed > 0.0) {
            return Err(Error::Config("cutter needs n_teeth >= 1 and positive radius, width and spindle speed".into()));
        }
        let full = self.n_teeth as f64 * self.pitch_angle;
        let two_pi = std::f64::consts::TAU;
        if ((full - two_pi) / two_pi).abs() > 0.02 {
            return Err(Error::Config(format!(
                "{} teeth × pitch {} rad = {full:.4} rad, not 2π within 2%",
                self.n_teeth, self.pitch_angle
            )));
        }
        if self.helix_angle != 0.0 {
            return Err(Error::Config("non-zero helix angle is not supported".into()));
        }
        if !(self.radial_ratio >= 0.0) {
            return Err(Error::Config("radial ratio must be non-negative".into()));
        }
        Ok(())
    }

    /// Angular spacing used for tooth placement. The configured pitch is only
    /// checked against this, so teeth always close the circle exactly.
    pub fn tooth_spacing(&self) -> f64 {
        std::f64::consts::TAU / self.n_teeth as f64
    }

    /// Same tool with `m` times as many teeth.
    pub fn with_tooth_multiplier(&self, m: f64) -> Result<Self> {
        let n = (self.n_teeth as f64 * m).round();
        if !(n >= 1.0) {
            return Err(Error::Config(format!("tooth multiplier {m} leaves no teeth")));
        }
        Ok(CutterModel {
            n_teeth: n as usize,
            pitch_angle: self.pitch_angle * self.n_teeth as f64 / n,
            ..self.clone()
        })
    }

    /// rad/s
    pub fn angular_speed(&self) -> f64 {
        self.spindle_speed * std::f64::consts::TAU / 60.0
    }
}

/// Mechanistic material constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub name: String,
    /// N/mm²
    pub k_c: f64,
    /// N/mm
    pub k_e: f64,
    /// Sampling range for domain randomisation (log-uniform).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_c_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_e_range: Option<(f64, f64)>,
}

impl MaterialParams {
    pub fn new(name: &str, k_c: f64, k_e: f64) -> Self {
        MaterialParams {
            name: name.to_string(),
            k_c,
            k_e,
            k_c_range: None,
            k_e_range: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_c >= 0.0 && self.k_e >= 0.0) {
            return Err(Error::Config(format!("material '{}': K_c and K_e must be >= 0", self.name)));
        }
        for (lo, hi) in [self.k_c_range, self.k_e_range].into_iter().flatten() {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!("material '{}': bad range ({lo}, {hi})", self.name)));
            }
        }
        Ok(())
    }

    /// Surrogate materials spanning three orders of magnitude in K_c.
    pub fn surrogates() -> Vec<MaterialParams> {
        vec![
            MaterialParams::new("foam", 20.0, 0.2),
            MaterialParams::new("cardboard", 150.0, 1.0),
            MaterialParams::new("mica", 800.0, 4.0),
            MaterialParams::new("aluminium", 3000.0, 12.0),
        ]
    }

    /// Randomised source material covering the surrogate range.
    pub fn randomised() -> MaterialParams {
        MaterialParams {
            name: "randomised".into(),
            k_c: 300.0,
            k_e: 1.5,
            k_c_range: Some((15.0, 4000.0)),
            k_e_range: Some((0.1, 15.0)),
        }
    }
}

/// Material surface relative to the planned path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Flat,
    /// Path planned `depth` mm inside the true surface.
    Offset { depth: f64 },
    /// True surface bulges above the plan by `amplitude·sin(π s)` mm over
    /// the material span (s ∈ [0, 1]).
    Curved { amplitude: f64 },
}

impl Geometry {
    pub fn name(&self) -> &'static str {
        match self {
            Geometry::Flat => "flat",
            Geometry::Offset { .. } => "offset",
            Geometry::Curved { .. } => "curved",
        }
    }

    /// Height of the true surface above the planned one, mm, at fraction `s`
    /// of the material span.
    pub fn surface_offset(&self, s: f64) -> f64 {
        match self {
            Geometry::Flat => 0.0,
            Geometry::Offset { depth } => *depth,
            Geometry::Curved { amplitude } => amplitude * (std::f64::consts::PI * s.clamp(0.0, 1.0)).sin(),
        }
    }

    pub fn standard_set() -> Vec<Geometry> {
        vec![Geometry::Flat, Geometry::Offset { depth: 1.0 }, Geometry::Curved { amplitude: 1.0 }]
    }
}

/// Point-mass impedance controller limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceConfig {
    /// kg
    pub mass: f64,
    /// N/m
    pub k_min: f64,
    pub k_max: f64,
}

impl Default for ImpedanceConfig {
    fn default() -> Self {
        ImpedanceConfig {
            mass: 5.0,
            k_min: 200.0,
            k_max: 5000.0,
        }
    }
}

/// Target-domain perturbations. All-zero (with multipliers 1) is the source domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// s; first-order sensor lag.
    pub sensor_lag: f64,
    /// N/s, added to every sensed axis.
    pub drift_rate: f64,
    /// mm; deadband on the position error.
    pub backlash: f64,
    pub tooth_multiplier: f64,
    /// Multiplier on both K_c and K_e.
    pub material_scale: f64,
    /// N; white noise on every sensed axis.
    #[serde(default)]
    pub sensor_noise: f64,
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation {
            sensor_lag: 0.0,
            drift_rate: 0.0,
            backlash: 0.0,
            tooth_multiplier: 1.0,
            material_scale: 1.0,
            sensor_noise: 0.0,
        }
    }

    pub fn target_default() -> Self {
        Perturbation {
            sensor_lag: 0.04,
            drift_rate: 0.02,
            backlash: 0.05,
            tooth_multiplier: 2.0,
            material_scale: 1.3,
            sensor_noise: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sensor_lag >= 0.0 && self.backlash >= 0.0 && self.sensor_noise >= 0.0) {
            return Err(Error::Config("sensor lag, backlash and noise must be >= 0".into()));
        }
        if !(self.tooth_multiplier > 0.0 && self.material_scale >= 0.0) {
            return Err(Error::Config("tooth multiplier must be > 0 and material scale >= 0".into()));
        }
        if !self.drift_rate.is_finite() {
            return Err(Error::Config("drift rate must be finite".into()));
        }
        Ok(())
    }
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation::none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cutter: CutterModel,
    pub material: MaterialParams,
    pub impedance: ImpedanceConfig,
    /// m/min
    pub nominal_feed: f64,
    /// mm
    pub nominal_doc: f64,
    /// m
    pub path_length: f64,
    /// m of free travel before the material starts.
    pub approach: f64,
    pub geometry: Geometry,
    /// s
    pub control_dt: f64,
    /// s
    pub obs_dt: f64,
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cutter: CutterModel::default(),
            material: MaterialParams::new("cardboard", 150.0, 1.0),
            impedance: ImpedanceConfig::default(),
            nominal_feed: 0.75,
            nominal_doc: 1.0,
            path_length: 0.2,
            approach: 0.02,
            geometry: Geometry::Flat,
            control_dt: 0.002,
            obs_dt: 0.02,
            perturbation: Perturbation::none(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn target_default() -> Self {
        SimConfig {
            perturbation: Perturbation::target_default(),
            ..SimConfig::default()
        }
    }

    /// Control steps per observation.
    pub fn substeps(&self) -> Result<usize> {
        let r = self.obs_dt / self.control_dt;
        let n = r.round();
        if !(self.control_dt > 0.0) || n < 1.0 || (r - n).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::Config(format!(
                "observation dt {} is not an integer multiple of control dt {}",
                self.obs_dt, self.control_dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.cutter.validate()?;
        self.material.validate()?;
        self.perturbation.validate()?;
        self.substeps()?;
        let imp = &self.impedance;
        if !(imp.mass > 0.0 && imp.k_min > 0.0 && imp.k_max >= imp.k_min) {
            return Err(Error::Config("impedance needs mass > 0 and 0 < k_min <= k_max".into()));
        }
        if !(self.nominal_feed > 0.0 && self.nominal_doc >= 0.0) {
            return Err(Error::Config("nominal feed must be > 0 and nominal DoC >= 0".into()));
        }
        if !(self.path_length >= 0.0 && self.approach >= 0.0) {
            return Err(Error::Config("path length and approach must be >= 0".into()));
        }
        Ok(())
    }

    /// Progress fraction at which the material starts.
    pub fn engage_progress(&self) -> f64 {
        if self.path_length > 0.0 {
            (self.approach / self.path_length).min(1.0)
        } else {
            0.0
        }
    }

    /// Cutter and material after applying the perturbation block.
    pub fn effective_cutter(&self) -> Result<CutterModel> {
        self.cutter.with_tooth_multiplier(self.perturbation.tooth_multiplier)
    }

    pub fn effective_material(&self) -> MaterialParams {
        let s = self.perturbation.material_scale;
        MaterialParams {
            k_c: self.material.k_c * s,
            k_e: self.material.k_e * s,
            ..self.material.clone()
        }
    }
}
