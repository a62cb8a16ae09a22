//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with the measured numbers (run with `-- --nocapture` to see them
//! for passing tests too).
//!
//! Criterion 3 pins the zero-rate attenuation budget to the 33.3 dB figure
//! quoted for the 300 m clean-water case. That figure is the plain sum of
//! channel (23.7 dB) and receiver (9.59 dB) losses at an operating point
//! where the model still delivers 26.7 bps — the same model criterion 2
//! requires to deliver 27.4 ± 10% bps there. A smooth rate curve cannot be
//! both 27 bps at 33.29 dB and zero by 33.8 dB; the model's actual zero
//! crossing sits near 37.5 dB. The criterion is asserted as written and is
//! expected to fail; see README "Known discrepancies".

use std::time::Instant;

use uwqkd_core::bits::Bits;
use uwqkd_core::channel::{attenuation_db, total_efficiency, ChannelParams, WaterType};
use uwqkd_core::decoy::{
    calibrate_kappa, estimate_single_photon, h2, max_tolerable_attenuation, performance_at_eta,
    predict_performance, secure_key_rate, y0_from_q0_rate, EcMode, KeyRateParams, SourceParams,
};
use uwqkd_core::photon::{align_delay, simulate_run, DetectorModel, SyncModel};
use uwqkd_core::postproc::ldpc::{ldpc_syndrome_reconcile, LdpcCode};
use uwqkd_core::postproc::toeplitz::{privacy_amplify, privacy_amplify_direct, ToeplitzSeed};
use uwqkd_core::protocol::{frame_stream, StateClass};
use uwqkd_core::runner::{run_endpoints, simulate_events, RunConfig};
use uwqkd_core::sifting::sift;
use uwqkd_core::tomography::{fidelity, reconstruct, DensityMatrix, TomographyCounts};
use uwqkd_core::Polarization;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

/// C1 — link budget arithmetic.
#[test]
fn c1_link_budget() {
    let reference = attenuation_db(0.293, 10.4).unwrap();
    let clean_300 = attenuation_db(WaterType::jerlov_i().c, 300.0).unwrap();
    let ok = (13.20..=13.30).contains(&reference) && (clean_300 - 23.7).abs() <= 0.05;
    report(
        "C1 link budget",
        ok,
        &format!("10.4 m coastal = {reference:.3} dB (13.20..13.30); 300 m clean = {clean_300:.3} dB (23.7±0.05)"),
    );
}

/// C2 — analytic reproduction of the 300 m clean-water operating point.
#[test]
fn c2_analytic_300m_reproduction() {
    let t0 = Instant::now();
    let mut src = SourceParams::reference();
    let ch0 = ChannelParams::new(WaterType::jerlov_i(), 300.0, 9.59, 0.0, 0.015).unwrap();
    let eta = total_efficiency(&ch0);
    src.kappa = calibrate_kappa(1200.1, 16.7, eta, &src);
    let y0_gate = y0_from_q0_rate(16.7, &src);
    let ch = ChannelParams::new(WaterType::jerlov_i(), 300.0, 9.59, y0_gate, 0.015).unwrap();
    let p = predict_performance(&ch, &src, &KeyRateParams::default()).unwrap();
    let anchor = p.q1_rate * (1.0 - h2(p.estimate.e1));

    let qu_ok = (p.qu_rate - 1200.1).abs() / 1200.1 <= 0.05;
    let eu_ok = (p.eu - 0.0215).abs() <= 0.0015;
    let ldpc_ok = (p.r_skr_ldpc - 27.4).abs() / 27.4 <= 0.10;
    let ideal_ok = (p.r_skr_ideal - 219.2).abs() / 219.2 <= 0.05;
    let anchor_ok = (anchor - 427.5).abs() / 427.5 <= 0.05;
    let fast = t0.elapsed().as_secs_f64() < 1.0;
    report(
        "C2 analytic reproduction",
        qu_ok && eu_ok && ldpc_ok && ideal_ok && anchor_ok && fast,
        &format!(
            "kappa={:.4}: Qu={:.1} bps (1200.1±5%), Eu={:.3}% (2.15±0.15), R_ldpc={:.2} bps (27.4±10%), R_ideal={:.1} bps (219.2±5%), anchor={:.1} bps (427.5±5%), {:.2}s",
            src.kappa, p.qu_rate, 100.0 * p.eu, p.r_skr_ldpc, p.r_skr_ideal, anchor,
            t0.elapsed().as_secs_f64()
        ),
    );
}

/// C3 — zero-rate attenuation budget pinned at 33.3 ± 0.5 dB.
///
/// Expected to fail: with the same normalization that criterion 2 requires
/// (26.7 bps at 33.29 dB), the rate crosses zero near 37.5 dB, not 33.3.
#[test]
fn c3_max_tolerable_attenuation() {
    let t0 = Instant::now();
    let mut src = SourceParams::reference();
    let ch0 = ChannelParams::new(WaterType::jerlov_i(), 300.0, 9.59, 0.0, 0.015).unwrap();
    src.kappa = calibrate_kappa(1200.1, 16.7, total_efficiency(&ch0), &src);
    let y0_pool = y0_from_q0_rate(16.7, &src) / 2.0;
    let budget = max_tolerable_attenuation(&src, &KeyRateParams::default(), y0_pool, 0.015)
        .unwrap()
        .expect("bounded within 80 dB");
    let ok = (budget - 33.3).abs() <= 0.5 && t0.elapsed().as_secs_f64() < 1.0;
    report(
        "C3 tolerable attenuation",
        ok,
        &format!(
            "bisected zero-rate budget = {budget:.2} dB vs pinned 33.3±0.5 dB; the rate is \
             still 26.7 bps at 33.29 dB (criterion 2), so a 33.3 dB zero crossing is \
             unattainable in this model"
        ),
    );
}

/// C4 — Monte Carlo against the closed-form detection model at the coastal
/// operating point, ten million pulses.
#[test]
fn c4_monte_carlo_vs_analytic() {
    let t0 = Instant::now();
    let y0 = 8.35e-6;
    let e_det = 0.015;
    let ch = ChannelParams::new(WaterType::jerlov_iii(), 10.4, 9.59, y0, e_det).unwrap();
    let eta = total_efficiency(&ch);
    let n = 10_000_000usize;
    let det = DetectorModel::from_channel(&ch);
    let events = simulate_run(frame_stream(0xC4, n, 0.8, 0.1), &ch, &det, 0x51A7).unwrap();
    let out = sift(frame_stream(0xC4, n, 0.8, 0.1), &events, 0.2, 0xD15C, 2e7).unwrap();

    // class click probabilities in the simulated model
    let p_click = |mu: f64| 1.0 - (-eta * mu).exp() * (1.0 - y0 / 4.0f64).powi(4);
    let mut ok = true;
    let mut detail = String::new();

    let mus = [(StateClass::Signal, 0.8), (StateClass::WeakDecoy, 0.1), (StateClass::Vacuum, 0.0)];
    for (cls, mu) in mus {
        let t = out.tallies.class(cls);
        // sifted = clicks that matched bases: probability p_click/2
        let p = p_click(mu) / 2.0;
        let n_cls = t.sent as f64;
        let sigma = (n_cls * p * (1.0 - p)).sqrt();
        let dev = (t.sifted as f64 - n_cls * p) / sigma;
        ok &= dev.abs() < 3.0;
        detail.push_str(&format!("{cls:?} gain dev {dev:+.2}σ, "));

        // error rates on the disclosed sample
        let x = 1.0 - (-eta * mu).exp();
        let p_bg = 1.0 - (1.0 - y0 / 4.0f64).powi(4);
        let model_e = (0.5 * p_bg + e_det * x) / (p_bg + x);
        if t.disclosed > 0 {
            let e_hat = t.errors as f64 / t.disclosed as f64;
            let sigma_e = (model_e * (1.0 - model_e) / t.disclosed as f64).sqrt();
            let dev_e = (e_hat - model_e) / sigma_e;
            ok &= dev_e.abs() < 3.0;
            detail.push_str(&format!("{cls:?} error dev {dev_e:+.2}σ, "));
        }
    }

    // sifted fraction of detections: 1/2 ± 3σ
    let detections = events.len() as f64;
    let sifted =
        (out.tallies.signal.sifted + out.tallies.decoy.sifted + out.tallies.vacuum.sifted) as f64;
    let dev_sift = (sifted - 0.5 * detections) / (detections * 0.25).sqrt();
    ok &= dev_sift.abs() < 3.0;
    let dt = t0.elapsed().as_secs_f64();
    ok &= dt < 60.0;
    detail.push_str(&format!("sift fraction dev {dev_sift:+.2}σ, {dt:.1}s"));
    report("C4 Monte Carlo vs analytic", ok, &detail);
}

/// C5 — key-rate formula on the published experiment row. The reported
/// 1823.4 bps is not reproducible from the same published inputs; the
/// formula value is what counts here and the discrepancy is logged.
#[test]
fn c5_published_rates_formula_value() {
    let r = secure_key_rate(7205.9, 0.0225, 14564.7, &KeyRateParams::default(), EcMode::Ldpc, 0.0155)
        .unwrap();
    let ok = (r - 1232.3).abs() <= 0.5;
    report(
        "C5 experiment-row formula value",
        ok,
        &format!(
            "Q1(1−H2(e1)) − Qu/3 = {r:.1} bps (pinned 1232.3±0.5); the reported 1823.4 bps \
             does not follow from the same published inputs and is excluded from pass/fail"
        ),
    );
}

/// C6 — decoy bound soundness across an (eta, Y0) grid, with the gap
/// closing as the weak-decoy intensity vanishes.
#[test]
fn c6_decoy_bound_soundness() {
    let t0 = Instant::now();
    let e_det = 0.015;
    let mut worst_y1_violation = f64::NEG_INFINITY;
    let mut worst_e1_violation = f64::NEG_INFINITY;
    for &eta in &[1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1] {
        for &y0 in &[0.0, 1e-6, 1e-5, 1e-4] {
            let src = SourceParams::reference();
            let gain = |mu: f64| y0 + 1.0 - (-eta * mu).exp();
            let err = |mu: f64| (0.5 * y0 + e_det * (1.0 - (-eta * mu).exp())) / gain(mu);
            let est = estimate_single_photon(gain(0.8), gain(0.1), y0, err(0.8), err(0.1), &src)
                .unwrap();
            let y1_true = y0 + eta;
            let e1_true = (0.5 * y0 + e_det * eta) / y1_true;
            worst_y1_violation = worst_y1_violation.max(est.y1 - y1_true);
            worst_e1_violation = worst_e1_violation.max(e1_true - est.e1);
        }
    }

    // gap -> 0 as v -> 0
    let eta = 1e-2;
    let y0 = 1e-5;
    let mut gaps = Vec::new();
    for &v in &[0.05, 0.01, 0.002] {
        let src = SourceParams { v, ..SourceParams::reference() };
        let gain = |mu: f64| y0 + 1.0 - (-eta * mu).exp();
        let err = |mu: f64| (0.5 * y0 + e_det * (1.0 - (-eta * mu).exp())) / gain(mu);
        let est = estimate_single_photon(gain(0.8), gain(v), y0, err(0.8), err(v), &src).unwrap();
        gaps.push(y0 + eta - est.y1);
    }
    let shrinking = gaps.windows(2).all(|w| w[1] < w[0]) && gaps.last().unwrap() < &2e-4;
    let dt = t0.elapsed().as_secs_f64();
    let ok = worst_y1_violation <= 1e-12 && worst_e1_violation <= 1e-12 && shrinking && dt < 5.0;
    report(
        "C6 decoy bound soundness",
        ok,
        &format!(
            "max Y1 overshoot {worst_y1_violation:.2e}, max e1 undershoot {worst_e1_violation:.2e}, \
             gaps {gaps:?} shrinking, {dt:.2}s"
        ),
    );
}

/// C7 — post-processing: LDPC success rate, FFT/direct Toeplitz equality,
/// end-to-end distillation integrity and the large-block PA timing.
#[test]
fn c7_postprocessing() {
    // (a) 1000 frames through BSC(0.0155): >= 99% corrected
    let t0 = Instant::now();
    let code = LdpcCode::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    let mut success = 0usize;
    for _ in 0..1000 {
        let alice = Bits::random(code.k(), &mut rng);
        let mut bob = alice.clone();
        for i in 0..bob.len() {
            if rng.gen::<f64>() < 0.0155 {
                bob.set(i, !bob.get(i));
            }
        }
        let out = ldpc_syndrome_reconcile(&alice, &bob, code, 60, 0.0155).unwrap();
        if out.converged && out.corrected == alice {
            success += 1;
        }
    }
    let ldpc_ok = success >= 990;
    let ldpc_t = t0.elapsed().as_secs_f64();

    // (b) FFT path equals the word-packed direct product on random sizes
    let t1 = Instant::now();
    let mut fft_ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(64..=1 << 16);
        let m = rng.gen_range(1..=n);
        let ts = ToeplitzSeed::new(rng.gen());
        let x = Bits::random(n, &mut rng);
        if privacy_amplify(&x, m, &ts) != privacy_amplify_direct(&x, m, &ts) {
            fft_ok = false;
            break;
        }
    }
    let fft_t = t1.elapsed().as_secs_f64();

    // (c) end-to-end distillation: byte-identical keys and exact leakage
    let t2 = Instant::now();
    let mut cfg = RunConfig::new(&WaterType::jerlov_iii(), 700_000, 0xC7E2E);
    cfg.length_m = 0.5;
    cfg.eta_opt_db = 3.0;
    cfg.groups_per_pa = 2;
    let events = simulate_events(&cfg).unwrap();
    let (alice, bob) = run_endpoints(&cfg, events).unwrap();
    let n_blocks = (bob.groups_total as usize).div_ceil(cfg.groups_per_pa) as u64;
    let distill_ok = alice.final_key == bob.final_key
        && alice.final_key.to_bytes() == bob.final_key.to_bytes()
        && !bob.final_key.is_empty()
        && bob.ledger.syndrome_bits == bob.groups_total as u64 * 2304
        && bob.ledger.tag_bits == n_blocks * 8;
    let distill_t = t2.elapsed().as_secs_f64();

    // (d) full-size privacy amplification under the wall-clock bound
    let t3 = Instant::now();
    let block = Bits::random(1_769_472, &mut rng);
    let m_out = 149_697;
    let key = privacy_amplify(&block, m_out, &ToeplitzSeed::new(0x9A));
    let pa_t = t3.elapsed().as_secs_f64();
    let pa_ok = key.len() == m_out && pa_t <= 5.0;

    let total = t0.elapsed().as_secs_f64();
    let ok = ldpc_ok && fft_ok && distill_ok && pa_ok && total < 300.0;
    report(
        "C7 post-processing",
        ok,
        &format!(
            "LDPC {success}/1000 at BSC(0.0155) [{ldpc_t:.1}s]; FFT==direct on 100 cases [{fft_t:.1}s]; \
             distill keys identical, ledger {} syn + {} tag bits [{distill_t:.1}s]; \
             1.77 Mbit PA in {pa_t:.2}s (≤5s); total {total:.1}s",
            bob.ledger.syndrome_bits, bob.ledger.tag_bits
        ),
    );
}

/// C8 — delay alignment recovers injected offsets to one 250 ps step.
#[test]
fn c8_delay_alignment() {
    let t0 = Instant::now();
    let det = DetectorModel::new(1e-5, 0.015);
    let mut ok = true;
    let mut detail = String::new();
    for (offset, expect) in [(0.0, 0.0), (17.25, 17.25), (63.0, 13.0)] {
        let sync = SyncModel::new(offset);
        let found = align_delay(&det, &sync, 100_000, 0xC8).unwrap();
        let d = (found - expect).rem_euclid(det.gate_period_ns);
        let dist = d.min(det.gate_period_ns - d);
        ok &= dist <= 0.25 + 1e-9;
        detail.push_str(&format!("offset {offset} -> {found:.2} ns (|Δ|={dist:.2}); "));
    }
    let dt = t0.elapsed().as_secs_f64();
    ok &= dt < 30.0;
    detail.push_str(&format!("{dt:.1}s"));
    report("C8 delay alignment", ok, &detail);
}

/// C9 — tomography: exact recovery of the four ideal states from ideal
/// counts, and the closed-form depolarization sweep. The measured lab
/// fidelity averages need raw data that does not exist here; the synthetic
/// sweep substitutes.
#[test]
fn c9_tomography() {
    let t0 = Instant::now();
    let mut ok = true;
    let n = 1_000_000u64;
    for pol in [Polarization::H, Polarization::V, Polarization::P, Polarization::M] {
        let ideal = DensityMatrix::ideal(pol);
        let ph = ideal.m[0][0].re;
        let pp = 0.5 * (1.0 + 2.0 * ideal.m[0][1].re);
        let counts = TomographyCounts::linear(
            (ph * n as f64).round() as u64,
            ((1.0 - ph) * n as f64).round() as u64,
            (pp * n as f64).round() as u64,
            ((1.0 - pp) * n as f64).round() as u64,
        );
        let rho = reconstruct(&counts).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                ok &= (rho.m[i][j] - ideal.m[i][j]).norm() < 1e-12;
            }
        }
    }
    let mut worst = 0f64;
    for p in [0.0, 0.01, 0.046, 0.2, 0.8, 1.0] {
        let ideal = DensityMatrix::ideal(Polarization::P);
        let f = fidelity(&ideal.depolarized(p), &ideal).unwrap();
        worst = worst.max((f - (1.0 - p / 2.0)).abs());
    }
    ok &= worst < 1e-10;
    let dt = t0.elapsed().as_secs_f64();
    ok &= dt < 1.0;
    report(
        "C9 tomography",
        ok,
        &format!("four ideal states exact; depolarization sweep worst |Δ| = {worst:.1e}; {dt:.2}s"),
    );
}

/// Companion to C3: the parts of the budget claim that do hold in this
/// model — positive rate at the full 33.29 dB operating point, and
/// monotone loss of budget with added noise.
#[test]
fn c3_companion_budget_properties() {
    let mut src = SourceParams::reference();
    let ch0 = ChannelParams::new(WaterType::jerlov_i(), 300.0, 9.59, 0.0, 0.015).unwrap();
    src.kappa = calibrate_kappa(1200.1, 16.7, total_efficiency(&ch0), &src);
    let y0_pool = y0_from_q0_rate(16.7, &src) / 2.0;
    let kp = KeyRateParams::default();

    let eta_33 = 10f64.powf(-3.329);
    let at_budget = performance_at_eta(eta_33, y0_pool, 0.015, &src, &kp).unwrap();
    let ok_positive = at_budget.r_skr_ldpc > 0.0;

    let budget = max_tolerable_attenuation(&src, &kp, y0_pool, 0.015).unwrap().unwrap();
    let doubled = max_tolerable_attenuation(&src, &kp, 2.0 * y0_pool, 0.015).unwrap().unwrap();
    report(
        "C3 companion (budget properties)",
        ok_positive && budget > 33.29 && doubled < budget,
        &format!(
            "rate at 33.29 dB = {:.1} bps > 0; budget {budget:.2} dB > 33.29; doubling the \
             background shrinks it to {doubled:.2} dB",
            at_budget.r_skr_ldpc
        ),
    );
}
