//! Three-intensity decoy-state bounds, the secure-key-rate formula and the
//! analytic performance predictor behind the key-rate-versus-distance curves.
//!
//! Everything here is per-pulse arithmetic plus an explicit pulse-budget
//! normalization. The signal pool is
//! `N_s = F · P(signal) · P(basis match) · (1 − disclosure) · κ`
//! pulses per second; decoy and vacuum pools are half of that (2:1:1 state
//! ratio). κ is a single calibration constant, default 1, exposed because the
//! published rates are not exactly reproduced by any clean normalization;
//! κ ≈ 0.789 reproduces the reported signal rate at the 300 m operating point
//! exactly. The background yield fed to the bounds is referenced to the
//! signal pool (`Y0 = Q0_rate / N_s`, i.e. half the per-gate yield), which is
//! the reading that reproduces the reported signal error rate; strict
//! pool-proportional scaling would give 2.8% instead of 2.15%.

use thiserror::Error;

use crate::channel::{total_efficiency, ChannelParams};

#[derive(Debug, Error, PartialEq)]
pub enum DecoyError {
    #[error("intensities must satisfy u > v > 0 (got u={u}, v={v})")]
    BadIntensities { u: f64, v: f64 },
    #[error("input out of range: {0}")]
    OutOfRange(&'static str),
    #[error("no positive key rate anywhere in the search range")]
    NoPositiveRate,
}

/// Source-side parameters of the transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    /// Quantum-signal repetition rate F, Hz.
    pub rep_rate_hz: f64,
    /// Signal mean photon number.
    pub u: f64,
    /// Weak-decoy mean photon number.
    pub v: f64,
    /// Fraction of sifted keys disclosed for error estimation.
    pub disclosure: f64,
    /// Pulse-budget calibration constant (see module docs).
    pub kappa: f64,
}

impl SourceParams {
    /// The reference transmitter: 20 MHz, u/v = 0.8/0.1, 20% disclosure.
    pub fn reference() -> Self {
        Self { rep_rate_hz: 2e7, u: 0.8, v: 0.1, disclosure: 0.2, kappa: 1.0 }
    }

    pub fn validate(&self) -> Result<(), DecoyError> {
        if !(self.u > self.v && self.v > 0.0) {
            return Err(DecoyError::BadIntensities { u: self.u, v: self.v });
        }
        if !(0.0..1.0).contains(&self.disclosure) {
            return Err(DecoyError::OutOfRange("disclosure must be in [0,1)"));
        }
        if !(self.rep_rate_hz > 0.0 && self.kappa > 0.0) {
            return Err(DecoyError::OutOfRange("rep_rate_hz and kappa must be > 0"));
        }
        Ok(())
    }

    /// Probability of each state class under the control format (2:1:1).
    pub const P_SIGNAL: f64 = 0.5;
    pub const P_DECOY: f64 = 0.25;
    pub const P_VACUUM: f64 = 0.25;
    /// Passive basis-match probability.
    pub const P_SIFT: f64 = 0.5;

    /// Effective signal pool in pulses per second.
    pub fn signal_pool_rate(&self) -> f64 {
        self.rep_rate_hz * Self::P_SIGNAL * Self::P_SIFT * (1.0 - self.disclosure) * self.kappa
    }

    /// Decoy and vacuum pools are each half the signal pool.
    pub fn decoy_pool_rate(&self) -> f64 {
        self.signal_pool_rate() / 2.0
    }

    pub fn vacuum_pool_rate(&self) -> f64 {
        self.signal_pool_rate() / 2.0
    }
}

/// Single-photon bounds produced by the decoy-state estimate. All gains and
/// yields are per pulse of the respective pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyEstimate {
    /// Lower bound on the single-photon yield.
    pub y1: f64,
    /// Lower bound on the single-photon gain, Q1 = Y1·u·e^(−u).
    pub q1: f64,
    /// Upper bound on the single-photon error rate.
    pub e1: f64,
    /// False when any clamp fired; the bounds are then not usable for key
    /// extraction.
    pub consistent: bool,
}

/// Leakage accounting for the key-rate formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateParams {
    /// LDPC side-information fraction of the sifted keys (2304/6912).
    pub leak_fraction_r: f64,
    /// Error-correction efficiency for the ideal-EC comparison mode.
    pub ideal_f_ec: f64,
}

impl Default for KeyRateParams {
    fn default() -> Self {
        Self { leak_fraction_r: 1.0 / 3.0, ideal_f_ec: 1.16 }
    }
}

/// Which error-correction cost model the key-rate formula charges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcMode {
    /// Fixed LDPC syndrome fraction: subtract Qu·R.
    Ldpc,
    /// Ideal efficiency benchmark: subtract Qu·f·H2(Eu).
    IdealEc,
}

/// Binary Shannon entropy, with h2(0) = h2(1) = 0 by continuity.
///
/// Panics if `x` is outside [0, 1].
pub fn h2(x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "h2 argument {x} outside [0,1]");
    if x == 0.0 || x == 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Three-intensity decoy-state bounds on the single-photon yield, gain and
/// error rate.
///
/// Inputs are per-pulse gains/yields; rate-valued measurements must be
/// divided by their pool sizes first. Clamps are recorded in `consistent`
/// rather than erroring, since finite statistics can violate the bounds.
pub fn estimate_single_photon(
    qu: f64,
    qv: f64,
    y0: f64,
    _eu: f64,
    ev: f64,
    src: &SourceParams,
) -> Result<DecoyEstimate, DecoyError> {
    src.validate()?;
    let (u, v) = (src.u, src.v);
    if u * v - v * v <= 0.0 {
        return Err(DecoyError::BadIntensities { u, v });
    }
    for (val, name) in [
        (qu, "Qu"),
        (qv, "Qv"),
        (y0, "Y0"),
    ] {
        if !(0.0..=1.0).contains(&val) {
            let _ = name;
            return Err(DecoyError::OutOfRange("gains/yields must be in [0,1]"));
        }
    }

    let e0 = 0.5;
    let mut consistent = true;

    let mut y1 = (u / (u * v - v * v))
        * (qv * v.exp() - qu * u.exp() * (v * v) / (u * u) - ((u * u - v * v) / (u * u)) * y0);
    if y1 < 0.0 {
        y1 = 0.0;
        consistent = false;
    }
    if y1 > 1.0 {
        y1 = 1.0;
        consistent = false;
    }

    let e1 = if y1 > 0.0 {
        let mut e1 = (ev * qv * v.exp() - e0 * y0) / (y1 * v);
        if !(0.0..=0.5).contains(&e1) {
            e1 = e1.clamp(0.0, 0.5);
            consistent = false;
        }
        e1
    } else {
        consistent = false;
        0.5
    };

    Ok(DecoyEstimate { y1, q1: y1 * u * (-u).exp(), e1, consistent })
}

/// Asymptotic secure key rate. Both arguments and the result share whatever
/// unit `q1_rate` and `qu_rate` are expressed in (per pulse or per second).
///
/// Ldpc mode:    max(0, Q1·(1 − H2(e1)) − Qu·R)
/// IdealEc mode: max(0, Q1·(1 − H2(e1)) − Qu·f·H2(Eu))
pub fn secure_key_rate(
    q1_rate: f64,
    e1: f64,
    qu_rate: f64,
    kp: &KeyRateParams,
    mode: EcMode,
    eu: f64,
) -> Result<f64, DecoyError> {
    if q1_rate < 0.0 || qu_rate < 0.0 {
        return Err(DecoyError::OutOfRange("rates must be >= 0"));
    }
    if !(0.0..=0.5).contains(&e1) || !(0.0..=0.5).contains(&eu) {
        return Err(DecoyError::OutOfRange("error rates must be in [0,0.5]"));
    }
    let ec_cost = match mode {
        EcMode::Ldpc => qu_rate * kp.leak_fraction_r,
        EcMode::IdealEc => qu_rate * kp.ideal_f_ec * h2(eu),
    };
    Ok((q1_rate * (1.0 - h2(e1)) - ec_cost).max(0.0))
}

/// Full analytic operating point at one channel setting.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformancePoint {
    pub eta: f64,
    pub total_db: f64,
    /// Sifted signal rate, bps (net of disclosure).
    pub qu_rate: f64,
    pub eu: f64,
    pub qv_rate: f64,
    pub ev: f64,
    pub q0_rate: f64,
    pub estimate: DecoyEstimate,
    pub q1_rate: f64,
    pub r_skr_ldpc: f64,
    pub r_skr_ideal: f64,
}

/// Core of the predictor, parametrized directly by the total transmittance
/// and the pool-referenced background yield.
pub fn performance_at_eta(
    eta: f64,
    y0_pool: f64,
    e_det: f64,
    src: &SourceParams,
    kp: &KeyRateParams,
) -> Result<PerformancePoint, DecoyError> {
    src.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(DecoyError::OutOfRange("eta must be in [0,1]"));
    }
    let e0 = 0.5;
    let gain = |mu: f64| y0_pool + 1.0 - (-eta * mu).exp();
    let err = |mu: f64| (e0 * y0_pool + e_det * (1.0 - (-eta * mu).exp())) / gain(mu);

    let (qu, qv) = (gain(src.u), gain(src.v));
    let (eu, ev) = (err(src.u), err(src.v));
    let est = estimate_single_photon(qu, qv, y0_pool, eu, ev, src)?;

    let ns = src.signal_pool_rate();
    let qu_rate = qu * ns;
    let q1_rate = est.q1 * ns;
    let r_ldpc = secure_key_rate(q1_rate, est.e1, qu_rate, kp, EcMode::Ldpc, eu)?;
    let r_ideal = secure_key_rate(q1_rate, est.e1, qu_rate, kp, EcMode::IdealEc, eu)?;

    Ok(PerformancePoint {
        eta,
        total_db: -10.0 * eta.log10(),
        qu_rate,
        eu,
        qv_rate: qv * src.decoy_pool_rate(),
        ev,
        q0_rate: y0_pool * ns,
        estimate: est,
        q1_rate,
        r_skr_ldpc: r_ldpc,
        r_skr_ideal: r_ideal,
    })
}

/// Analytic prediction of gains, error rates, the single-photon bounds and
/// the secure key rate for one channel configuration. No Monte Carlo.
///
/// The per-gate background yield in `ch.y0` is halved to reference it to the
/// signal pool, per the normalization described in the module docs.
pub fn predict_performance(
    ch: &ChannelParams,
    src: &SourceParams,
    kp: &KeyRateParams,
) -> Result<PerformancePoint, DecoyError> {
    performance_at_eta(total_efficiency(ch), ch.y0 / 2.0, ch.e_det, src, kp)
}

/// Per-gate background yield that reproduces a measured vacuum count rate
/// (bps, net of disclosure) under the same pulse budget the predictor uses.
pub fn y0_from_q0_rate(q0_bps: f64, src: &SourceParams) -> f64 {
    q0_bps / src.vacuum_pool_rate()
}

/// Closed-form κ that makes the predicted signal rate hit `target_qu_bps`
/// at transmittance `eta`, given the measured vacuum rate. Follows from
/// Qu_rate = Q0 + κ·N_s(κ=1)·(1 − e^(−ηu)).
pub fn calibrate_kappa(target_qu_bps: f64, q0_bps: f64, eta: f64, src: &SourceParams) -> f64 {
    let src1 = SourceParams { kappa: 1.0, ..src.clone() };
    (target_qu_bps - q0_bps) / (src1.signal_pool_rate() * (1.0 - (-eta * src.u).exp()))
}

/// One row of the key-rate-versus-distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub length_m: f64,
    pub channel_db: f64,
    pub point: PerformancePoint,
}

/// Secure key rate as a function of distance for one water type. `ch` gives
/// the water, receiver budget and noise figures; its length is swept.
pub fn keyrate_curve(
    ch: &ChannelParams,
    l_min: f64,
    l_max: f64,
    step: f64,
    src: &SourceParams,
    kp: &KeyRateParams,
) -> Result<Vec<CurvePoint>, DecoyError> {
    if !(l_min <= l_max) || !(step > 0.0) {
        return Err(DecoyError::OutOfRange("need L_min <= L_max and step > 0"));
    }
    let mut out = Vec::new();
    let mut l = l_min;
    while l <= l_max + 1e-9 {
        let ch_l = ChannelParams { length_m: l, ..ch.clone() };
        let point = predict_performance(&ch_l, src, kp)?;
        out.push(CurvePoint { length_m: l, channel_db: ch_l.channel_db(), point });
        l += step;
    }
    Ok(out)
}

/// Largest total attenuation (channel plus receiver, dB) that still yields a
/// positive LDPC-mode key rate, located by bisection to 0.01 dB.
///
/// Returns `None` if the rate is still positive at the 80 dB search ceiling
/// (budget unbounded within the search range).
pub fn max_tolerable_attenuation(
    src: &SourceParams,
    kp: &KeyRateParams,
    y0_pool: f64,
    e_det: f64,
) -> Result<Option<f64>, DecoyError> {
    let rate = |db: f64| -> Result<f64, DecoyError> {
        Ok(performance_at_eta(10f64.powf(-db / 10.0), y0_pool, e_det, src, kp)?.r_skr_ldpc)
    };
    let (mut lo, mut hi) = (0.0f64, 80.0f64);
    if rate(hi)? > 0.0 {
        return Ok(None);
    }
    if rate(lo)? <= 0.0 {
        return Err(DecoyError::NoPositiveRate);
    }
    while hi - lo > 0.01 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}
