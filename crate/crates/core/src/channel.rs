//! Seawater link-budget arithmetic: Beer-Lambert attenuation, receiver
//! optics/detector losses and background yield, all folded into the total
//! transmittance used by the simulator and the analytic predictor.

use thiserror::Error;

/// 10·log10(e), the dB-per-neper conversion.
const DB_PER_NEPER: f64 = 4.342944819032518;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("negative input: {0}")]
    Negative(&'static str),
    #[error("efficiency out of (0,1]: {0}")]
    BadEfficiency(&'static str),
    #[error("invalid channel parameters: {0}")]
    Invalid(&'static str),
    #[error("bad water preset line {line}: {reason}")]
    BadPreset { line: usize, reason: String },
    #[error("unknown water type '{0}'")]
    UnknownWater(String),
}

/// A seawater clarity class: a name and its beam attenuation coefficient
/// in 1/m.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterType {
    pub name: String,
    pub c: f64,
}

impl WaterType {
    pub fn new(name: impl Into<String>, c: f64) -> Result<Self, ChannelError> {
        if !(c > 0.0) {
            return Err(ChannelError::Invalid("attenuation coefficient must be > 0"));
        }
        Ok(Self { name: name.into(), c })
    }

    /// Coastal-turbid water of the reference experiment, c = 0.293 /m.
    pub fn jerlov_iii() -> Self {
        Self { name: "JerlovIII".into(), c: 0.293 }
    }

    /// Clean ocean water. The coefficient is fixed so that 300 m of it
    /// attenuates by exactly 23.7 dB.
    pub fn jerlov_i() -> Self {
        Self { name: "JerlovI".into(), c: 0.01819 }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "jerloviii" | "jerlov3" | "jerlov_iii" => Some(Self::jerlov_iii()),
            "jerlovi" | "jerlov1" | "jerlov_i" => Some(Self::jerlov_i()),
            _ => None,
        }
    }
}

/// Everything the analytic model needs to know about one direction of the
/// quantum link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub water: WaterType,
    pub length_m: f64,
    /// Receiver optics plus detector loss, dB.
    pub eta_opt_db: f64,
    /// Per-gate background yield (dark counts plus stray light).
    pub y0: f64,
    /// Polarization misalignment error probability.
    pub e_det: f64,
    /// Error rate of background clicks; 1/2 by construction.
    pub e0: f64,
}

impl ChannelParams {
    pub fn new(
        water: WaterType,
        length_m: f64,
        eta_opt_db: f64,
        y0: f64,
        e_det: f64,
    ) -> Result<Self, ChannelError> {
        if length_m < 0.0 {
            return Err(ChannelError::Negative("length_m"));
        }
        if eta_opt_db < 0.0 {
            return Err(ChannelError::Negative("eta_opt_db"));
        }
        if !(0.0..1.0).contains(&y0) {
            return Err(ChannelError::Invalid("y0 must lie in [0,1)"));
        }
        if !(0.0..=0.5).contains(&e_det) {
            return Err(ChannelError::Invalid("e_det must lie in [0,0.5]"));
        }
        Ok(Self { water, length_m, eta_opt_db, y0, e_det, e0: 0.5 })
    }

    pub fn channel_db(&self) -> f64 {
        attenuation_db(self.water.c, self.length_m).expect("validated on construction")
    }

    pub fn total_db(&self) -> f64 {
        self.channel_db() + self.eta_opt_db
    }
}

/// Beer-Lambert channel loss in dB: 10·log10(e)·c·L.
pub fn attenuation_db(c: f64, length_m: f64) -> Result<f64, ChannelError> {
    if c < 0.0 {
        return Err(ChannelError::Negative("c"));
    }
    if length_m < 0.0 {
        return Err(ChannelError::Negative("length_m"));
    }
    Ok(DB_PER_NEPER * c * length_m)
}

/// Channel transmittance exp(−c·L).
pub fn transmittance(c: f64, length_m: f64) -> Result<f64, ChannelError> {
    attenuation_db(c, length_m)?;
    Ok((-c * length_m).exp())
}

/// Total transmittance of channel plus receiver:
/// η = exp(−c·L)·10^(−η_opt/10).
pub fn total_efficiency(p: &ChannelParams) -> f64 {
    (-p.water.c * p.length_m).exp() * 10f64.powf(-p.eta_opt_db / 10.0)
}

/// Receiver loss budget in dB from collection efficiency and detector
/// quantum efficiency: −10·log10(collect·qe).
pub fn receiver_budget(collect_eff: f64, qe: f64) -> Result<f64, ChannelError> {
    if !(collect_eff > 0.0 && collect_eff <= 1.0) {
        return Err(ChannelError::BadEfficiency("collect_eff"));
    }
    if !(qe > 0.0 && qe <= 1.0) {
        return Err(ChannelError::BadEfficiency("qe"));
    }
    Ok(-10.0 * (collect_eff * qe).log10())
}

/// Parse water presets from plain text, one `name, c` pair per line.
/// Blank lines and `#` comments are skipped.
pub fn parse_water_presets(text: &str) -> Result<Vec<WaterType>, ChannelError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, c_str) = line.split_once(',').ok_or(ChannelError::BadPreset {
            line: idx + 1,
            reason: "expected 'name, c'".into(),
        })?;
        let c: f64 = c_str.trim().parse().map_err(|e| ChannelError::BadPreset {
            line: idx + 1,
            reason: format!("bad coefficient: {e}"),
        })?;
        out.push(WaterType::new(name.trim(), c).map_err(|e| ChannelError::BadPreset {
            line: idx + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Resolve a `--water` argument: either a preset name (builtin or from the
/// preset list) or a literal `c=VALUE`.
pub fn resolve_water(arg: &str, presets: &[WaterType]) -> Result<WaterType, ChannelError> {
    if let Some(value) = arg.strip_prefix("c=") {
        let c: f64 = value
            .parse()
            .map_err(|_| ChannelError::UnknownWater(arg.into()))?;
        return WaterType::new(format!("c={c}"), c);
    }
    if let Some(w) = presets.iter().find(|w| w.name.eq_ignore_ascii_case(arg)) {
        return Ok(w.clone());
    }
    WaterType::builtin(arg).ok_or_else(|| ChannelError::UnknownWater(arg.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_channel_attenuation() {
        // 10.4 m of c = 0.293 water; the measured figure rounds to 13.26 dB.
        let db = attenuation_db(0.293, 10.4).unwrap();
        assert_relative_eq!(db, 13.2338, epsilon = 1e-3);
        assert!((db - 13.26).abs() / 13.26 < 0.003);
    }

    #[test]
    fn zero_length_is_lossless() {
        assert_eq!(attenuation_db(0.9, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn jerlov_i_reaches_23_7_db_at_300m() {
        let w = WaterType::jerlov_i();
        assert_relative_eq!(attenuation_db(w.c, 300.0).unwrap(), 23.7, epsilon = 0.05);
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(attenuation_db(-0.1, 1.0).is_err());
        assert!(attenuation_db(0.1, -1.0).is_err());
    }

    #[test]
    fn total_efficiency_reference_points() {
        let p = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, 0.0, 0.0).unwrap();
        assert_relative_eq!(total_efficiency(&p), 5.22e-3, max_relative = 1e-3);

        let p = ChannelParams::new(WaterType::jerlov_i(), 300.0, 9.59, 0.0, 0.0).unwrap();
        assert_relative_eq!(total_efficiency(&p), 4.69e-4, max_relative = 1e-3);

        // Lossless limit: c -> 0 is not a valid WaterType, so get there with
        // zero length and a zero receiver budget.
        let p = ChannelParams::new(WaterType::jerlov_iii(), 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(total_efficiency(&p), 1.0);
    }

    #[test]
    fn receiver_budget_reference() {
        assert_relative_eq!(receiver_budget(0.549, 0.20).unwrap(), 9.59, epsilon = 5e-3);
        assert_eq!(receiver_budget(1.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(receiver_budget(0.5, 0.5).unwrap(), 6.0206, epsilon = 1e-4);
        assert!(receiver_budget(0.0, 0.5).is_err());
    }

    #[test]
    fn attenuation_is_linear_and_transmittance_multiplicative() {
        let c = 0.17;
        let a = attenuation_db(c, 3.0).unwrap() + attenuation_db(c, 4.5).unwrap();
        let b = attenuation_db(c, 7.5).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);

        let t = transmittance(c, 3.0).unwrap() * transmittance(c, 4.5).unwrap();
        assert_relative_eq!(t, transmittance(c, 7.5).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn db_transmittance_roundtrip() {
        for (c, l) in [(0.293, 10.4), (0.01819, 300.0), (1.3, 2.0)] {
            let db = attenuation_db(c, l).unwrap();
            let t = 10f64.powf(-db / 10.0);
            assert_relative_eq!(t, transmittance(c, l).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn efficiency_monotone_in_loss_knobs() {
        let base = ChannelParams::new(WaterType::jerlov_iii(), 10.0, 9.0, 0.0, 0.0).unwrap();
        let longer = ChannelParams { length_m: 11.0, ..base.clone() };
        let murkier = ChannelParams {
            water: WaterType::new("murk", 0.4).unwrap(),
            ..base.clone()
        };
        let lossier = ChannelParams { eta_opt_db: 10.0, ..base.clone() };
        let eta = total_efficiency(&base);
        assert!(total_efficiency(&longer) < eta);
        assert!(total_efficiency(&murkier) < eta);
        assert!(total_efficiency(&lossier) < eta);
    }

    #[test]
    fn presets_parse_and_resolve() {
        let text = "# clarity table\nJerlovII, 0.092\n\ncoastal , 0.44\n";
        let presets = parse_water_presets(text).unwrap();
        assert_eq!(presets.len(), 2);
        assert_eq!(presets[0].name, "JerlovII");
        assert_relative_eq!(presets[1].c, 0.44);

        assert_eq!(resolve_water("jerloviii", &presets).unwrap().c, 0.293);
        assert_eq!(resolve_water("JerlovII", &presets).unwrap().c, 0.092);
        assert_relative_eq!(resolve_water("c=0.05", &presets).unwrap().c, 0.05);
        assert!(resolve_water("tapwater", &presets).is_err());
        assert!(parse_water_presets("JerlovX,-1.0").is_err());
    }

    #[test]
    fn channel_params_validation() {
        assert!(ChannelParams::new(WaterType::jerlov_i(), -1.0, 0.0, 0.0, 0.0).is_err());
        assert!(ChannelParams::new(WaterType::jerlov_i(), 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(ChannelParams::new(WaterType::jerlov_i(), 1.0, 0.0, 0.0, 0.6).is_err());
        let ok = ChannelParams::new(WaterType::jerlov_i(), 1.0, 3.0, 1e-6, 0.015).unwrap();
        assert_eq!(ok.e0, 0.5);
        assert!(ok.e_det < ok.e0);
    }
}
