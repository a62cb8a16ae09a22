//! Property-based invariants across the stack.

use proptest::prelude::*;

use uwqkd_core::bits::Bits;
use uwqkd_core::channel::{attenuation_db, transmittance, ChannelParams, WaterType};
use uwqkd_core::decoy::{estimate_single_photon, secure_key_rate, EcMode, KeyRateParams, SourceParams};
use uwqkd_core::postproc::toeplitz::{privacy_amplify, privacy_amplify_direct, toeplitz_tag, ToeplitzSeed};
use uwqkd_core::protocol::{read_events, read_frames, write_events, write_frames, DetectionEvent, Detector, frame_stream};
use uwqkd_core::tomography::{reconstruct, TomographyCounts};
use uwqkd_core::transport::{Deframer, Frame};

proptest! {
    #[test]
    fn bits_byte_roundtrip(bools in proptest::collection::vec(any::<bool>(), 0..300)) {
        let bits = Bits::from_bools(&bools);
        let back = Bits::from_bytes(&bits.to_bytes(), bits.len());
        prop_assert_eq!(&bits, &back);
        prop_assert_eq!(bits.count_ones(), bools.iter().filter(|&&b| b).count());
    }

    #[test]
    fn frame_codec_roundtrip_under_arbitrary_chunking(
        payloads in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..200), 1..12),
        chunk in 1usize..64,
    ) {
        let frames: Vec<Frame> =
            payloads.into_iter().enumerate().map(|(i, p)| Frame::new(i as u8, p)).collect();
        let mut stream = Vec::new();
        for f in &frames {
            stream.extend_from_slice(&f.encode());
        }
        let mut d = Deframer::new();
        let mut got = Vec::new();
        for piece in stream.chunks(chunk) {
            d.push_bytes(piece);
            while let Some(f) = d.next_frame() {
                got.push(f);
            }
        }
        prop_assert_eq!(frames, got);
        prop_assert_eq!(d.crc_drops, 0);
    }

    /// The FFT convolution route and the word-packed direct route are the
    /// same linear map.
    #[test]
    fn toeplitz_routes_agree(
        n in 1usize..2048,
        m_frac in 0.01f64..1.0,
        seed in any::<u64>(),
        xseed in any::<u64>(),
    ) {
        let m = ((n as f64 * m_frac) as usize).max(1);
        let ts = ToeplitzSeed::new(seed);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(xseed);
        let x = Bits::random(n, &mut rng);
        prop_assert_eq!(privacy_amplify(&x, m, &ts), privacy_amplify_direct(&x, m, &ts));
    }

    /// GF(2) linearity of the tag under XOR of blocks.
    #[test]
    fn toeplitz_tag_is_linear(
        a in proptest::collection::vec(any::<bool>(), 16..512),
        seed in any::<u64>(),
        flips in proptest::collection::vec(any::<usize>(), 1..8),
    ) {
        let ts = ToeplitzSeed::new(seed);
        let xa = Bits::from_bools(&a);
        let mut xb = xa.clone();
        let mut delta = Bits::zeros(xa.len());
        for f in flips {
            let i = f % xa.len();
            xb.set(i, !xb.get(i));
            delta.set(i, !delta.get(i));
        }
        let mut sum = toeplitz_tag(&xa, &ts, 8);
        sum.xor_assign(&toeplitz_tag(&xb, &ts, 8));
        prop_assert_eq!(toeplitz_tag(&delta, &ts, 8), sum);
    }

    /// Decoy bounds stay sound for arbitrary channel parameters within the
    /// physical ranges.
    #[test]
    fn decoy_bounds_sound_for_arbitrary_channels(
        eta_log in -4.0f64..-0.5,
        y0_log in -8.0f64..-3.5,
        v in 0.02f64..0.5,
        e_det in 0.0f64..0.05,
    ) {
        let eta = 10f64.powf(eta_log);
        let y0 = 10f64.powf(y0_log);
        let src = SourceParams { v, ..SourceParams::reference() };
        let gain = |mu: f64| y0 + 1.0 - (-eta * mu).exp();
        let err = |mu: f64| (0.5 * y0 + e_det * (1.0 - (-eta * mu).exp())) / gain(mu);
        let est = estimate_single_photon(gain(0.8), gain(v), y0, err(0.8), err(v), &src).unwrap();
        let y1_true = y0 + eta;
        let e1_true = (0.5 * y0 + e_det * eta) / y1_true;
        prop_assert!(est.y1 <= y1_true + 1e-12);
        if est.consistent {
            prop_assert!(est.e1 >= e1_true - 1e-12);
        }
    }

    /// Key rate is monotone in its inputs.
    #[test]
    fn key_rate_monotonicity(
        q1 in 0.0f64..2000.0,
        qu_extra in 0.0f64..2000.0,
        e1 in 0.0f64..0.4,
        de in 0.001f64..0.1,
    ) {
        let kp = KeyRateParams::default();
        let qu = q1 + qu_extra;
        let base = secure_key_rate(q1, e1, qu, &kp, EcMode::Ldpc, 0.02).unwrap();
        let worse_e1 = secure_key_rate(q1, (e1 + de).min(0.5), qu, &kp, EcMode::Ldpc, 0.02).unwrap();
        let more_q1 = secure_key_rate(q1 + 10.0, e1, qu, &kp, EcMode::Ldpc, 0.02).unwrap();
        prop_assert!(worse_e1 <= base + 1e-9);
        prop_assert!(more_q1 >= base - 1e-9);
    }

    /// Attenuation is linear in length; transmittance multiplies over
    /// segments and round-trips through dB.
    #[test]
    fn channel_attenuation_properties(
        c in 0.001f64..1.5,
        l1 in 0.0f64..200.0,
        l2 in 0.0f64..200.0,
    ) {
        let a = attenuation_db(c, l1).unwrap() + attenuation_db(c, l2).unwrap();
        let b = attenuation_db(c, l1 + l2).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        let t = transmittance(c, l1).unwrap() * transmittance(c, l2).unwrap();
        let t12 = transmittance(c, l1 + l2).unwrap();
        prop_assert!((t - t12).abs() <= 1e-12 * t12.max(1e-300));
        let round = 10f64.powf(-attenuation_db(c, l1).unwrap() / 10.0);
        prop_assert!((round - transmittance(c, l1).unwrap()).abs() <= 1e-12 * round);
    }

    /// Total efficiency decreases when any loss knob increases.
    #[test]
    fn efficiency_monotone(
        c in 0.01f64..1.0,
        l in 0.1f64..100.0,
        opt in 0.0f64..40.0,
        bump in 0.01f64..5.0,
    ) {
        let base = ChannelParams::new(WaterType::new("w", c).unwrap(), l, opt, 0.0, 0.0).unwrap();
        let eta = uwqkd_core::total_efficiency(&base);
        let longer = ChannelParams { length_m: l + bump, ..base.clone() };
        let lossier = ChannelParams { eta_opt_db: opt + bump, ..base.clone() };
        prop_assert!(uwqkd_core::total_efficiency(&longer) < eta);
        prop_assert!(uwqkd_core::total_efficiency(&lossier) < eta);
    }

    /// Any nonempty counts reconstruct to a valid density matrix: unit
    /// trace, Hermitian by construction, PSD after projection.
    #[test]
    fn reconstruction_is_always_physical(
        n_h in 0u64..10000, n_v in 0u64..10000,
        n_p in 0u64..10000, n_m in 0u64..10000,
    ) {
        prop_assume!(n_h + n_v > 0 && n_p + n_m > 0);
        let rho = reconstruct(&TomographyCounts::linear(n_h, n_v, n_p, n_m)).unwrap();
        prop_assert!((rho.trace() - 1.0).abs() < 1e-10);
        let (l1, l2) = rho.eigenvalues();
        prop_assert!(l1 >= -1e-10 && l2 >= -1e-10);
    }

    /// Frame and event fixture files round-trip bit-exactly.
    #[test]
    fn record_formats_roundtrip(seed in any::<u64>(), n in 0usize..400) {
        let frames: Vec<_> = frame_stream(seed, n, 0.8, 0.1).collect();
        let mut buf = Vec::new();
        write_frames(&mut buf, frames.iter().copied()).unwrap();
        prop_assert_eq!(&read_frames(&mut buf.as_slice(), 0.8, 0.1).unwrap(), &frames);

        let events: Vec<_> = frames
            .iter()
            .step_by(7)
            .map(|f| DetectionEvent {
                slot_index: f.slot_index,
                detector: Detector::from_basis_bit(f.pol.basis(), f.pol.bit()),
                within_gate: f.slot_index % 3 != 0,
            })
            .collect();
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        prop_assert_eq!(read_events(&mut buf.as_slice()).unwrap(), events);
    }
}
