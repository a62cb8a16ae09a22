//! End-to-end run orchestration: generate frames, simulate detection, run
//! the two endpoint sessions over the chosen transport, and write the run
//! directory (events, tallies, keys, manifest).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelParams, ChannelError, WaterType};
use crate::decoy::KeyRateParams;
use crate::photon::{simulate_run, DetectorModel, PhotonError};
use crate::postproc::PaBlockPolicy;
use crate::protocol::{frame_stream, write_events, write_frames, DetectionEvent};
use crate::seeds::{self, domain};
use crate::transport::link::{inproc_pair, ByteLink, TcpLink};
use crate::transport::session::{run_alice, run_bob, EndpointOutcome, SessionConfig, SessionError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[config] {0}")]
    Channel(#[from] ChannelError),
    #[error("[photon-sim] {0}")]
    Photon(#[from] PhotonError),
    #[error("[session] {0}")]
    Session(#[from] SessionError),
    #[error("[io] {0}")]
    Io(#[from] std::io::Error),
    #[error("[io] manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("[verify] final keys differ between endpoints")]
    KeyMismatch,
    #[error("[session] endpoint thread panicked")]
    EndpointPanic,
}

/// Which transport the two endpoints talk over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    InProc,
    Socket,
}

/// Complete description of one run; everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub water_name: String,
    pub water_c: f64,
    pub length_m: f64,
    pub eta_opt_db: f64,
    /// Per-gate background yield.
    pub y0: f64,
    pub e_det: f64,
    pub u: f64,
    pub v: f64,
    pub rep_rate_hz: f64,
    pub disclosure: f64,
    pub pulses: u64,
    pub seed: u64,
    pub groups_per_pa: usize,
    pub ldpc_max_iter: u32,
    pub transport: TransportKind,
}

impl RunConfig {
    pub fn new(water: &WaterType, pulses: u64, seed: u64) -> Self {
        Self {
            water_name: water.name.clone(),
            water_c: water.c,
            length_m: 10.4,
            eta_opt_db: 9.59,
            y0: 8.35e-6,
            e_det: 0.015,
            u: 0.8,
            v: 0.1,
            rep_rate_hz: 2e7,
            disclosure: 0.2,
            pulses,
            seed,
            groups_per_pa: PaBlockPolicy::default().groups_per_pa,
            ldpc_max_iter: 60,
            transport: TransportKind::InProc,
        }
    }

    pub fn channel(&self) -> Result<ChannelParams, RunError> {
        let water = WaterType::new(self.water_name.clone(), self.water_c)?;
        Ok(ChannelParams::new(water, self.length_m, self.eta_opt_db, self.y0, self.e_det)?)
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            n_slots: self.pulses,
            u: self.u,
            v: self.v,
            disclosure: self.disclosure,
            rep_rate_hz: self.rep_rate_hz,
            master_seed: self.seed,
            pa_policy: PaBlockPolicy { groups_per_pa: self.groups_per_pa, ..Default::default() },
            ldpc_max_iter: self.ldpc_max_iter,
            kp: KeyRateParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if !(self.u > self.v && self.v > 0.0) {
            return Err(RunError::Config("need u > v > 0".into()));
        }
        if !(0.0..1.0).contains(&self.disclosure) {
            return Err(RunError::Config("disclosure must be in [0,1)".into()));
        }
        if self.rep_rate_hz <= 0.0 {
            return Err(RunError::Config("rep_rate_hz must be positive".into()));
        }
        if self.groups_per_pa == 0 {
            return Err(RunError::Config("groups_per_pa must be positive".into()));
        }
        self.channel()?;
        Ok(())
    }
}

/// Summary of a finished run, echoed into the manifest.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub status: String,
    pub detections: usize,
    pub sifted_signal: u64,
    pub final_key_bits: usize,
    pub groups_total: u32,
    pub groups_failed: u32,
    pub leakage_syndrome_bits: u64,
    pub leakage_tag_bits: u64,
    pub keys_identical: bool,
}

pub struct RunArtifacts {
    pub alice: EndpointOutcome,
    pub bob: EndpointOutcome,
    pub events: Vec<DetectionEvent>,
    pub out_dir: PathBuf,
}

/// Simulate detection events for a config.
pub fn simulate_events(cfg: &RunConfig) -> Result<Vec<DetectionEvent>, RunError> {
    let ch = cfg.channel()?;
    let det = DetectorModel::from_channel(&ch);
    let frames = frame_stream(
        seeds::mix(cfg.seed, domain::FRAMES),
        cfg.pulses as usize,
        cfg.u,
        cfg.v,
    );
    Ok(simulate_run(frames, &ch, &det, seeds::mix(cfg.seed, domain::CHANNEL))?)
}

/// Run both endpoint sessions over the configured transport.
pub fn run_endpoints(
    cfg: &RunConfig,
    events: Vec<DetectionEvent>,
) -> Result<(EndpointOutcome, EndpointOutcome), RunError> {
    let session = cfg.session();
    match cfg.transport {
        TransportKind::InProc => {
            let (a, b) = inproc_pair();
            run_pair(session, events, a, b)
        }
        TransportKind::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let accept = thread::spawn(move || -> std::io::Result<TcpStream> {
                Ok(listener.accept()?.0)
            });
            let conn = TcpStream::connect(addr)?;
            let served = accept.join().map_err(|_| RunError::EndpointPanic)??;
            run_pair(session, events, TcpLink::new(served), TcpLink::new(conn))
        }
    }
}

fn run_pair<LA, LB>(
    session: SessionConfig,
    events: Vec<DetectionEvent>,
    alice_link: LA,
    bob_link: LB,
) -> Result<(EndpointOutcome, EndpointOutcome), RunError>
where
    LA: ByteLink + 'static,
    LB: ByteLink + 'static,
{
    let cfg_a = session.clone();
    let alice = thread::spawn(move || run_alice(alice_link, &cfg_a));
    let bob = run_bob(bob_link, &session, &events);
    let alice = alice.join().map_err(|_| RunError::EndpointPanic)?;
    Ok((alice?, bob?))
}

/// Full pipeline: photon simulation, both sessions, and the run directory.
pub fn run_simulation(
    cfg: &RunConfig,
    out_dir: &Path,
    emit_frames: bool,
) -> Result<RunArtifacts, RunError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let result = (|| -> Result<RunArtifacts, RunError> {
        let events = simulate_events(cfg)?;
        let mut w = BufWriter::new(File::create(out_dir.join("events.bin"))?);
        write_events(&mut w, &events)?;
        w.flush()?;
        if emit_frames {
            let mut w = BufWriter::new(File::create(out_dir.join("frames.bin"))?);
            write_frames(
                &mut w,
                frame_stream(seeds::mix(cfg.seed, domain::FRAMES), cfg.pulses as usize, cfg.u, cfg.v),
            )?;
            w.flush()?;
        }

        let (alice, bob) = run_endpoints(cfg, events.clone())?;
        write_outputs(cfg, out_dir, &alice, &bob, events.len())?;
        if alice.final_key != bob.final_key {
            return Err(RunError::KeyMismatch);
        }
        Ok(RunArtifacts { alice, bob, events, out_dir: out_dir.to_path_buf() })
    })();

    if let Err(e) = &result {
        // mark partial outputs invalid
        let _ = fs::write(
            out_dir.join("manifest.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "status": "failed",
                "error": e.to_string(),
                "config": cfg,
            }))
            .unwrap_or_default(),
        );
    }
    result
}

/// Post-processing only: run the sessions on recorded events.
pub fn run_distill(
    cfg: &RunConfig,
    events: Vec<DetectionEvent>,
    out_dir: &Path,
) -> Result<RunArtifacts, RunError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let (alice, bob) = run_endpoints(cfg, events.clone())?;
    write_outputs(cfg, out_dir, &alice, &bob, events.len())?;
    if alice.final_key != bob.final_key {
        return Err(RunError::KeyMismatch);
    }
    Ok(RunArtifacts { alice, bob, events, out_dir: out_dir.to_path_buf() })
}

fn write_outputs(
    cfg: &RunConfig,
    out_dir: &Path,
    alice: &EndpointOutcome,
    bob: &EndpointOutcome,
    detections: usize,
) -> Result<(), RunError> {
    fs::write(out_dir.join("tallies.csv"), bob.tallies.to_csv())?;
    fs::write(out_dir.join("tallies_summary.csv"), bob.tallies.to_csv_summary())?;
    fs::write(out_dir.join("alice_key.bin"), alice.final_key.to_bytes())?;
    fs::write(out_dir.join("bob_key.bin"), bob.final_key.to_bytes())?;

    let mut km = String::from("block_id,groups,m_out,tag,tag_ok,seed_fingerprint\n");
    for b in &bob.pa_blocks {
        km.push_str(&format!(
            "{},{},{},0x{:02x},{},{}\n",
            b.block_id, b.groups, b.m_out, b.tag, b.tag_ok, b.seed_fingerprint
        ));
    }
    fs::write(out_dir.join("key_manifest.csv"), km)?;

    let summary = RunSummary {
        status: "ok".into(),
        detections,
        sifted_signal: bob.tallies.signal.sifted,
        final_key_bits: bob.final_key.len(),
        groups_total: bob.groups_total,
        groups_failed: bob.groups_failed,
        leakage_syndrome_bits: bob.ledger.syndrome_bits,
        leakage_tag_bits: bob.ledger.tag_bits,
        keys_identical: alice.final_key == bob.final_key,
    };
    let manifest = serde_json::json!({
        "status": "ok",
        "config": cfg,
        "derived_seeds": {
            "frames": seeds::mix(cfg.seed, domain::FRAMES),
            "channel": seeds::mix(cfg.seed, domain::CHANNEL),
            "disclosure": seeds::mix(cfg.seed, domain::DISCLOSURE),
        },
        "summary": summary,
    });
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
