//! Batch command-line harness: end-to-end simulations, analytic key-rate
//! curves, tomography post-processing, distillation of recorded events and
//! the self-test suite. All outputs are CSV or binary plus a JSON manifest;
//! no plotting.

mod selftest;

use std::fs;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use uwqkd_core::channel::{parse_water_presets, resolve_water, ChannelParams, WaterType};
use uwqkd_core::decoy::{calibrate_kappa, keyrate_curve, y0_from_q0_rate, KeyRateParams, SourceParams};
use uwqkd_core::protocol::read_events;
use uwqkd_core::runner::{run_distill, run_simulation, RunConfig, TransportKind};
use uwqkd_core::tomography::{fidelity, reconstruct, DensityMatrix, TomographyCounts};
use uwqkd_core::transport::{run_alice, run_bob, CaptureLink, TcpLink};
use uwqkd_core::Polarization;

#[derive(Parser)]
#[command(

    name = "uwqkd",
    version,
    about = "Underwater decoy-state BB84 simulator and key-distillation stack"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full pipeline: photon simulation, sifting, reconciliation
    /// and privacy amplification between two endpoints.
    Simulate(SimulateArgs),
    /// Analytic secure-key-rate versus distance table (CSV).
    KeyrateCurve(CurveArgs),
    /// Reconstruct density matrices and fidelities from a counts CSV.
    Tomography(TomographyArgs),
    /// Post-process recorded detection events into final keys.
    Distill(DistillArgs),
    /// Run the built-in oracle and invariant checks.
    Selftest(SelftestArgs),
    /// Run a single endpoint over TCP (for two-process operation).
    Endpoint(EndpointArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Inproc,
    Socket,
}

#[derive(Args)]
struct RunParams {
    /// Master seed; every random stream in the run derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Source pulses to simulate (50 ns each at 20 MHz).
    #[arg(long)]
    pulses: Option<u64>,
    /// Water type: preset name or literal `c=VALUE` in 1/m.
    #[arg(long)]
    water: Option<String>,
    #[arg(long)]
    length_m: Option<f64>,
    /// Receiver optics + detector loss in dB.
    #[arg(long)]
    eta_opt_db: Option<f64>,
    /// Per-gate background yield.
    #[arg(long)]
    y0: Option<f64>,
    /// Polarization misalignment error probability.
    #[arg(long)]
    e_det: Option<f64>,
    /// Signal mean photon number.
    #[arg(long)]
    u: Option<f64>,
    /// Weak-decoy mean photon number.
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    rep_rate_hz: Option<f64>,
    /// Fraction of sifted keys disclosed for error estimation.
    #[arg(long)]
    disclosure: Option<f64>,
    /// Corrected LDPC groups accumulated per privacy amplification.
    #[arg(long)]
    groups_per_pa: Option<usize>,
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    /// TOML file with a complete run configuration (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reuse the configuration recorded in a previous run's manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Extra water presets, one `name, c` per line.
    #[arg(long)]
    water_presets: Option<PathBuf>,
}

impl RunParams {
    fn presets(&self) -> Result<Vec<WaterType>> {
        match &self.water_presets {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading water presets {}", path.display()))?;
                Ok(parse_water_presets(&text)?)
            }
            None => Ok(Vec::new()),
        }
    }

    fn build(&self) -> Result<RunConfig> {
        let mut cfg = if let Some(path) = &self.manifest {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading manifest {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            serde_json::from_value(value["config"].clone())
                .context("manifest has no usable config section")?
        } else if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str::<RunConfig>(&text).context("parsing run config")?
        } else {
            let seed = self
                .seed
                .ok_or_else(|| anyhow!("--seed is required (or provide --config/--manifest)"))?;
            RunConfig::new(&WaterType::jerlov_iii(), 10_000_000, seed)
        };

        if let Some(w) = &self.water {
            let water = resolve_water(w, &self.presets()?)?;
            cfg.water_name = water.name;
            cfg.water_c = water.c;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.pulses {
            cfg.pulses = p;
        }
        if let Some(x) = self.length_m {
            cfg.length_m = x;
        }
        if let Some(x) = self.eta_opt_db {
            cfg.eta_opt_db = x;
        }
        if let Some(x) = self.y0 {
            cfg.y0 = x;
        }
        if let Some(x) = self.e_det {
            cfg.e_det = x;
        }
        if let Some(x) = self.u {
            cfg.u = x;
        }
        if let Some(x) = self.v {
            cfg.v = x;
        }
        if let Some(x) = self.rep_rate_hz {
            cfg.rep_rate_hz = x;
        }
        if let Some(x) = self.disclosure {
            cfg.disclosure = x;
        }
        if let Some(x) = self.groups_per_pa {
            cfg.groups_per_pa = x;
        }
        if let Some(t) = self.transport {
            cfg.transport = match t {
                TransportArg::Inproc => TransportKind::InProc,
                TransportArg::Socket => TransportKind::Socket,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    params: RunParams,
    /// Run directory for events, tallies, keys and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Also write the frame stream as frames.bin for replay.
    #[arg(long)]
    emit_frames: bool,
}

#[derive(Args)]
struct CurveArgs {
    /// Water type: preset name or `c=VALUE`.
    #[arg(long, default_value = "JerlovI")]
    water: String,
    #[arg(long, default_value_t = 0.0)]
    l_min: f64,
    #[arg(long, default_value_t = 350.0)]
    l_max: f64,
    #[arg(long, default_value_t = 5.0)]
    step: f64,
    #[arg(long, default_value_t = 9.59)]
    eta_opt_db: f64,
    /// Measured vacuum count rate used to calibrate the background yield.
    #[arg(long, default_value_t = 16.7)]
    q0_bps: f64,
    #[arg(long, default_value_t = 0.015)]
    e_det: f64,
    #[arg(long, default_value_t = 0.8)]
    u: f64,
    #[arg(long, default_value_t = 0.1)]
    v: f64,
    #[arg(long, default_value_t = 2e7)]
    rep_rate_hz: f64,
    #[arg(long, default_value_t = 0.2)]
    disclosure: f64,
    /// Pulse-budget calibration constant.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Calibrate kappa so the signal rate equals this value at --calibrate-at-l.
    #[arg(long)]
    calibrate_qu: Option<f64>,
    #[arg(long, default_value_t = 300.0)]
    calibrate_at_l: f64,
    /// Error-correction cost model for the R_skr column.
    #[arg(long, value_enum, default_value = "ldpc")]
    mode: ModeArg,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    water_presets: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ldpc,
    Ideal,
}

#[derive(Args)]
struct TomographyArgs {
    /// Counts CSV: label,n_H,n_V,n_P,n_M with optional n_R,n_L per line.
    #[arg(long)]
    counts: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    params: RunParams,
    /// Recorded detection events (events.bin of a previous run).
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    /// Override the built-in LDPC base-matrix fixture.
    #[arg(long)]
    ldpc_fixture: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Alice,
    Bob,
}

#[derive(Args)]
struct EndpointArgs {
    #[arg(long, value_enum)]
    role: Role,
    #[command(flatten)]
    params: RunParams,
    /// Listen address (alice), e.g. 127.0.0.1:0.
    #[arg(long)]
    listen: Option<String>,
    /// Peer address to connect to (bob).
    #[arg(long)]
    connect: Option<String>,
    /// File to write the actual bound address to (with --listen).
    #[arg(long)]
    port_file: Option<PathBuf>,
    /// Recorded events (bob side).
    #[arg(long)]
    events: Option<PathBuf>,
    /// Tee all received classical-channel bytes into a replayable log.
    #[arg(long)]
    capture: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::KeyrateCurve(args) => cmd_keyrate_curve(args),
        Cmd::Tomography(args) => cmd_tomography(args),
        Cmd::Distill(args) => cmd_distill(args),
        Cmd::Selftest(args) => selftest::run(args.ldpc_fixture.as_deref()),
        Cmd::Endpoint(args) => cmd_endpoint(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.params.build()?;
    let t0 = Instant::now();
    let arts = run_simulation(&cfg, &args.out, args.emit_frames)?;
    println!(
        "simulate: {} pulses -> {} detections, {} sifted signal bits, {} groups ({} failed)",
        cfg.pulses,
        arts.events.len(),
        arts.bob.tallies.signal.sifted,
        arts.bob.groups_total,
        arts.bob.groups_failed,
    );
    println!(
        "final key: {} bits (alice == bob: {}), leakage {} syndrome + {} tag bits, {:.1}s",
        arts.bob.final_key.len(),
        arts.alice.final_key == arts.bob.final_key,
        arts.bob.ledger.syndrome_bits,
        arts.bob.ledger.tag_bits,
        t0.elapsed().as_secs_f64()
    );
    if arts.bob.final_key.is_empty() {
        println!("warning: no secure key at this operating point");
    }
    println!("run directory: {}", arts.out_dir.display());
    Ok(())
}

fn cmd_keyrate_curve(args: CurveArgs) -> Result<()> {
    let presets = match &args.water_presets {
        Some(p) => parse_water_presets(&fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let water = resolve_water(&args.water, &presets)?;
    let mut src = SourceParams {
        rep_rate_hz: args.rep_rate_hz,
        u: args.u,
        v: args.v,
        disclosure: args.disclosure,
        kappa: args.kappa,
    };
    if let Some(target) = args.calibrate_qu {
        let ch = ChannelParams::new(water.clone(), args.calibrate_at_l, args.eta_opt_db, 0.0, args.e_det)?;
        src.kappa = calibrate_kappa(target, args.q0_bps, uwqkd_core::total_efficiency(&ch), &src);
    }
    let y0_gate = y0_from_q0_rate(args.q0_bps, &src);
    let ch = ChannelParams::new(water, 0.0, args.eta_opt_db, y0_gate, args.e_det)?;
    let curve = keyrate_curve(&ch, args.l_min, args.l_max, args.step, &src, &KeyRateParams::default())?;

    let mut out = String::from("L_m,attenuation_db,Qu_bps,Eu,Q1_bps,e1,R_skr_bps\n");
    for point in &curve {
        let p = &point.point;
        let r = match args.mode {
            ModeArg::Ldpc => p.r_skr_ldpc,
            ModeArg::Ideal => p.r_skr_ideal,
        };
        out.push_str(&format!(
            "{:.3},{:.4},{:.4},{:.6},{:.4},{:.6},{:.4}\n",
            point.length_m, point.channel_db, p.qu_rate, p.eu, p.q1_rate, p.estimate.e1, r
        ));
    }
    write_or_print(args.out.as_deref(), &out)
}

fn cmd_tomography(args: TomographyArgs) -> Result<()> {
    let text = fs::read_to_string(&args.counts)
        .with_context(|| format!("reading counts {}", args.counts.display()))?;
    let mut out = String::from(
        "label,rho00_re,rho00_im,rho01_re,rho01_im,rho10_re,rho10_im,rho11_re,rho11_im,fidelity_vs_ideal\n",
    );
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.to_lowercase().starts_with("label") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 && fields.len() != 7 {
            bail!("counts line {}: expected 5 or 7 fields, got {}", idx + 1, fields.len());
        }
        let label = fields[0];
        let nums: Vec<u64> = fields[1..]
            .iter()
            .map(|f| f.parse().with_context(|| format!("counts line {}: bad count '{f}'", idx + 1)))
            .collect::<Result<_>>()?;
        let counts = TomographyCounts {
            n_h: nums[0],
            n_v: nums[1],
            n_p: nums[2],
            n_m: nums[3],
            circular: if nums.len() == 6 { Some((nums[4], nums[5])) } else { None },
        };
        let rho = reconstruct(&counts)?;
        let f = ideal_for_label(label)
            .map(|ideal| fidelity(&rho, &ideal))
            .transpose()?
            .map_or(String::new(), |f| format!("{f:.6}"));
        out.push_str(&format!(
            "{label},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{f}\n",
            rho.m[0][0].re,
            rho.m[0][0].im,
            rho.m[0][1].re,
            rho.m[0][1].im,
            rho.m[1][0].re,
            rho.m[1][0].im,
            rho.m[1][1].re,
            rho.m[1][1].im,
        ));
    }
    write_or_print(args.out.as_deref(), &out)
}

fn ideal_for_label(label: &str) -> Option<DensityMatrix> {
    let pol = match label.to_ascii_uppercase().as_str() {
        "H" => Polarization::H,
        "V" => Polarization::V,
        "P" => Polarization::P,
        "M" => Polarization::M,
        _ => return None,
    };
    Some(DensityMatrix::ideal(pol))
}

fn cmd_distill(args: DistillArgs) -> Result<()> {
    let cfg = args.params.build()?;
    let bytes = fs::read(&args.events)
        .with_context(|| format!("reading events {}", args.events.display()))?;
    let events = read_events(&mut bytes.as_slice())?;
    let arts = run_distill(&cfg, events, &args.out)?;
    println!(
        "distill: {} events -> {} groups, final key {} bits (identical: {})",
        arts.events.len(),
        arts.bob.groups_total,
        arts.bob.final_key.len(),
        arts.alice.final_key == arts.bob.final_key
    );
    if arts.bob.final_key.is_empty() {
        println!("warning: no secure key from this recording");
    }
    Ok(())
}

fn cmd_endpoint(args: EndpointArgs) -> Result<()> {
    let cfg = args.params.build()?;
    let session = cfg.session();
    fs::create_dir_all(&args.out)?;

    let outcome = match args.role {
        Role::Alice => {
            let addr = args.listen.as_deref().unwrap_or("127.0.0.1:0");
            let listener = TcpListener::bind(addr).context("binding listen address")?;
            let local = listener.local_addr()?;
            if let Some(pf) = &args.port_file {
                fs::write(pf, local.to_string())?;
            }
            println!("alice: listening on {local}");
            let (stream, peer) = listener.accept()?;
            println!("alice: peer {peer} connected");
            match &args.capture {
                Some(log) => run_alice(CaptureLink::create(TcpLink::new(stream), log)?, &session)?,
                None => run_alice(TcpLink::new(stream), &session)?,
            }
        }
        Role::Bob => {
            let addr = args
                .connect
                .clone()
                .ok_or_else(|| anyhow!("--connect is required for --role bob"))?;
            let events_path = args
                .events
                .as_ref()
                .ok_or_else(|| anyhow!("--events is required for --role bob"))?;
            let bytes = fs::read(events_path)?;
            let events = read_events(&mut bytes.as_slice())?;
            let stream = connect_with_retry(&addr)?;
            println!("bob: connected to {addr}");
            match &args.capture {
                Some(log) => run_bob(CaptureLink::create(TcpLink::new(stream), log)?, &session, &events)?,
                None => run_bob(TcpLink::new(stream), &session, &events)?,
            }
        }
    };

    fs::write(args.out.join("final_key.bin"), outcome.final_key.to_bytes())?;
    fs::write(args.out.join("tallies.csv"), outcome.tallies.to_csv())?;
    let summary = serde_json::json!({
        "final_key_bits": outcome.final_key.len(),
        "groups_total": outcome.groups_total,
        "groups_failed": outcome.groups_failed,
        "syndrome_bits": outcome.ledger.syndrome_bits,
        "tag_bits": outcome.ledger.tag_bits,
    });
    fs::write(args.out.join("outcome.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("endpoint done: {} key bits", outcome.final_key.len());
    Ok(())
}

fn connect_with_retry(addr: &str) -> Result<TcpStream> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e).context("connecting to peer"),
        }
    }
}

fn write_or_print(path: Option<&std::path::Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(p, content)?;
            println!("wrote {}", p.display());
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}
