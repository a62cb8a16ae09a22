//! Built-in self test: fast oracle-equivalence and invariant checks over
//! every subsystem, meant to finish well under a minute on a fresh
//! checkout.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwqkd_core::bits::Bits;
use uwqkd_core::channel::{attenuation_db, receiver_budget, transmittance};
use uwqkd_core::decoy::{estimate_single_photon, h2, secure_key_rate, EcMode, KeyRateParams, SourceParams};
use uwqkd_core::photon::{align_delay, DetectorModel, SyncModel};
use uwqkd_core::postproc::ldpc::{ldpc_syndrome_reconcile, LdpcCode};
use uwqkd_core::postproc::toeplitz::{privacy_amplify, privacy_amplify_direct, ToeplitzSeed};
use uwqkd_core::protocol::{encode_random_bits, Polarization, StateClass};
use uwqkd_core::runner::{simulate_events, RunConfig};
use uwqkd_core::tomography::{fidelity, reconstruct, DensityMatrix, TomographyCounts};
use uwqkd_core::transport::{crc16, Deframer, Frame};
use uwqkd_core::WaterType;

pub fn run(ldpc_fixture: Option<&Path>) -> Result<()> {
    let t0 = Instant::now();
    let fixture_text = match ldpc_fixture {
        Some(path) => Some((
            path.display().to_string(),
            std::fs::read_to_string(path)
                .map_err(|e| anyhow!("cannot read LDPC fixture {}: {e}", path.display()))?,
        )),
        None => None,
    };

    let checks: Vec<(&str, Box<dyn Fn() -> Result<String>>)> = vec![
        ("control-format map", Box::new(check_control_format)),
        ("link budget", Box::new(check_link_budget)),
        ("key-rate formula", Box::new(check_key_rate)),
        ("decoy bounds", Box::new(check_decoy_bounds)),
        (
            "ldpc code",
            Box::new(move || check_ldpc(fixture_text.as_ref().map(|(n, t)| (n.as_str(), t.as_str())))),
        ),
        ("toeplitz hashing", Box::new(check_toeplitz)),
        ("classical framing", Box::new(check_framing)),
        ("tomography", Box::new(check_tomography)),
        ("delay alignment", Box::new(check_alignment)),
        ("simulation determinism", Box::new(check_determinism)),
    ];

    let mut failures = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("selftest {name}: PASS ({detail})"),
            Err(e) => {
                failures += 1;
                println!("selftest {name}: FAIL ({e})");
            }
        }
    }
    println!("selftest finished in {:.1}s", t0.elapsed().as_secs_f64());
    if failures > 0 {
        bail!("{failures} selftest check(s) failed");
    }
    Ok(())
}

fn check_control_format() -> Result<String> {
    let cases = [
        ((0, 0, 1, 0), (Polarization::H, StateClass::Signal)),
        ((0, 1, 0, 0), (Polarization::V, StateClass::Vacuum)),
        ((1, 1, 0, 1), (Polarization::M, StateClass::WeakDecoy)),
        ((1, 0, 1, 1), (Polarization::P, StateClass::Signal)),
    ];
    for ((b3, b2, b1, b0), want) in cases {
        let got = encode_random_bits(b3, b2, b1, b0);
        if got != want {
            bail!("({b3},{b2},{b1},{b0}) -> {got:?}, want {want:?}");
        }
    }
    Ok("4 control rows".into())
}

fn check_link_budget() -> Result<String> {
    let a = attenuation_db(0.293, 10.4)?;
    if !(13.20..=13.30).contains(&a) {
        bail!("10.4 m budget {a:.3} dB outside 13.20..13.30");
    }
    let r = receiver_budget(0.549, 0.20)?;
    if (r - 9.59).abs() > 0.01 {
        bail!("receiver budget {r:.3} dB != 9.59");
    }
    for (c, l) in [(0.293, 10.4), (0.01819, 300.0)] {
        let round_trip = 10f64.powf(-attenuation_db(c, l)? / 10.0);
        if (round_trip - transmittance(c, l)?).abs() / round_trip > 1e-12 {
            bail!("dB/transmittance round trip off at c={c}");
        }
    }
    Ok(format!("channel {a:.2} dB, receiver {r:.2} dB"))
}

fn check_key_rate() -> Result<String> {
    if h2(0.5) != 1.0 || h2(0.0) != 0.0 {
        bail!("h2 endpoints wrong");
    }
    let r = secure_key_rate(7205.9, 0.0225, 14564.7, &KeyRateParams::default(), EcMode::Ldpc, 0.0155)?;
    if (r - 1232.24).abs() > 0.01 {
        bail!("experiment-row formula value {r:.2} != 1232.24");
    }
    Ok(format!("formula value {r:.1} bps"))
}

fn check_decoy_bounds() -> Result<String> {
    let src = SourceParams::reference();
    for &eta in &[1e-3, 1e-2, 1e-1] {
        for &y0 in &[0.0, 1e-5] {
            let gain = |mu: f64| y0 + 1.0 - (-eta * mu).exp();
            let err = |mu: f64| (0.5 * y0 + 0.015 * (1.0 - (-eta * mu).exp())) / gain(mu);
            let est = estimate_single_photon(gain(0.8), gain(0.1), y0, err(0.8), err(0.1), &src)?;
            if est.y1 > y0 + eta + 1e-12 {
                bail!("Y1 bound above truth at eta={eta}, y0={y0}");
            }
            let e1_true = (0.5 * y0 + 0.015 * eta) / (y0 + eta);
            if est.e1 < e1_true - 1e-12 {
                bail!("e1 bound below truth at eta={eta}, y0={y0}");
            }
        }
    }
    Ok("sound on 3x2 grid".into())
}

fn check_ldpc(fixture: Option<(&str, &str)>) -> Result<String> {
    let owned;
    let code: &LdpcCode = match fixture {
        Some((name, text)) => {
            owned = LdpcCode::from_fixture_str(text, 384)
                .map_err(|e| anyhow!("fixture {name}: {e}"))?;
            &owned
        }
        None => LdpcCode::reference(),
    };
    if code.n() != 9216 || code.k() != 6912 || code.parity_bits() != 2304 {
        bail!("code dimensions {}x{} wrong", code.n(), code.k());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let msg = Bits::random(code.k(), &mut rng);
        let parity = code.encode_parity(&msg)?;
        let mut cw = msg.clone();
        cw.extend_from(&parity);
        if !code.check_codeword(&cw) {
            bail!("encoded word violates a parity check");
        }
    }
    for trial in 0..3 {
        let alice = Bits::random(code.k(), &mut rng);
        let mut bob = alice.clone();
        for i in 0..bob.len() {
            if rng.gen::<f64>() < 0.0155 {
                bob.set(i, !bob.get(i));
            }
        }
        let out = ldpc_syndrome_reconcile(&alice, &bob, code, 60, 0.0155)?;
        if !out.converged || out.corrected != alice {
            bail!("reconciliation failed on trial {trial}");
        }
        if out.leaked_bits != 2304 {
            bail!("leakage {} != 2304", out.leaked_bits);
        }
    }
    Ok("encode/decode/leakage ok".into())
}

fn check_toeplitz() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(m, n) in &[(8usize, 1024usize), (100, 4097), (256, 9000)] {
        let ts = ToeplitzSeed::new(rng.gen());
        let x = Bits::random(n, &mut rng);
        if privacy_amplify(&x, m, &ts) != privacy_amplify_direct(&x, m, &ts) {
            bail!("FFT and direct products differ at {m}x{n}");
        }
    }
    Ok("FFT == direct on 3 shapes".into())
}

fn check_framing() -> Result<String> {
    if crc16(b"123456789") != 0x29B1 {
        bail!("CRC check vector mismatch");
    }
    let f = Frame::new(5, vec![7; 300]);
    let mut d = Deframer::new();
    d.push_bytes(&[0x13, 0x37]); // garbage prefix
    d.push_bytes(&f.encode());
    match d.next_frame() {
        Some(got) if got == f => Ok("crc vector + resync ok".into()),
        other => bail!("deframer returned {other:?}"),
    }
}

fn check_tomography() -> Result<String> {
    let rho = reconstruct(&TomographyCounts::linear(1000, 0, 500, 500))?;
    if rho != DensityMatrix::ideal(Polarization::H) {
        bail!("pure-H reconstruction is not exact");
    }
    let ideal = DensityMatrix::ideal(Polarization::P);
    let f = fidelity(&ideal.depolarized(0.046), &ideal)?;
    if (f - 0.977).abs() > 1e-10 {
        bail!("depolarization fidelity {f} != 0.977");
    }
    Ok(format!("F(depol 4.6%) = {f:.4}"))
}

fn check_alignment() -> Result<String> {
    let det = DetectorModel::new(1e-5, 0.015);
    let sync = SyncModel::new(17.25);
    let found = align_delay(&det, &sync, 20_000, 3)?;
    if (found - 17.25).abs() > 0.25 + 1e-9 {
        bail!("recovered {found} ns, want 17.25 ± 0.25");
    }
    Ok(format!("17.25 ns -> {found} ns"))
}

fn check_determinism() -> Result<String> {
    let cfg = RunConfig::new(&WaterType::jerlov_iii(), 100_000, 99);
    let a = simulate_events(&cfg)?;
    let b = simulate_events(&cfg)?;
    if a != b {
        bail!("same seed produced different event streams");
    }
    Ok(format!("{} events reproduced", a.len()))
}
