use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbmc_uwb::channel::ChannelProfile;
use fbmc_uwb::harness::{emit_psd_report, emit_trial, run_and_emit, run_psd_report, run_trial, trial_rng, ExperimentSpec, LinkSetup, PsdSpec};
use fbmc_uwb::interference::InterfererSpec;
use fbmc_uwb::mask::{plan_active_set, write_masks_csv, Region, SpectralMask, DEFAULT_MIN_ACTIVE_FRACTION};
use fbmc_uwb::numerology::{preset, preset_names, LinkConfigFile};
use fbmc_uwb::rx::{StateSource, TapForm};
use fbmc_uwb::{Error, Result};

#[derive(Parser)]
#[command(name = "fbmc-uwb", version, about = "FBMC spread-spectrum UWB link simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo BER sweep comparing equalizer forms.
    Ber(BerArgs),
    /// Transmit PSD measurement and mask compliance report.
    Psd(PsdArgs),
    /// Plan the active subcarrier set for a regulatory mask.
    Plan(PlanArgs),
}

#[derive(Args)]
struct LinkArgs {
    /// Shipped preset name.
    #[arg(long, default_value = "desk-nlos", conflicts_with = "config")]
    preset: String,
    /// Link configuration TOML file (overrides --preset).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

impl LinkArgs {
    fn link(&self) -> Result<LinkConfigFile> {
        match &self.config {
            Some(p) => LinkConfigFile::load(p),
            None => preset(&self.preset),
        }
    }

    fn name(&self) -> String {
        match &self.config {
            Some(p) => p.display().to_string(),
            None => self.preset.clone(),
        }
    }
}

#[derive(Args)]
struct BerArgs {
    #[command(flatten)]
    link: LinkArgs,
    /// SNR points in dB, comma separated ("inf" for noiseless).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-10,-5,0")]
    snr: Vec<f64>,
    /// Trial cap per SNR point.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    min_errors: u64,
    /// QAM symbols per stream in each trial.
    #[arg(long, default_value_t = 64)]
    symbols: usize,
    /// awgn, los or nlos.
    #[arg(long, default_value = "nlos")]
    channel: ChannelProfile,
    #[arg(long, default_value_t = 0)]
    interferers: usize,
    #[arg(long, default_value_t = 20e6)]
    interferer_bw: f64,
    /// Interferer PSD above the noise floor, dB (fixed level).
    #[arg(long, allow_hyphen_values = true)]
    interferer_level: Option<f64>,
    /// Equalizer forms: joint, joint-whitened, perband.
    #[arg(long, value_delimiter = ',', default_value = "joint,perband")]
    forms: Vec<TapForm>,
    /// Estimate the noise-plus-interference state instead of using the oracle.
    #[arg(long)]
    estimate_noise: bool,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write the artifacts of the first trial at the first SNR point.
    #[arg(long)]
    dump_trial: bool,
}

#[derive(Args)]
struct PsdArgs {
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, default_value = "fcc")]
    region: Region,
    /// RF carrier, Hz (defaults to the region's shipped carrier).
    #[arg(long)]
    carrier: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Keep the link's own active set instead of planning one.
    #[arg(long)]
    no_plan: bool,
    #[arg(long, default_value_t = 2000)]
    symbols: usize,
    #[arg(long, default_value_t = 1e6)]
    rbw: f64,
    /// Also write the transmitted samples.
    #[arg(long)]
    write_samples: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    link: LinkArgs,
    #[arg(long, default_value = "fcc")]
    region: Region,
    #[arg(long)]
    carrier: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_ACTIVE_FRACTION)]
    min_fraction: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Ber(a) => ber(a),
        Command::Psd(a) => psd(a),
        Command::Plan(a) => plan(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Config(_) = e {
                eprintln!("presets: {}", preset_names().collect::<Vec<_>>().join(", "));
            }
            ExitCode::FAILURE
        }
    }
}

fn ber(a: BerArgs) -> Result<()> {
    let mut spec = ExperimentSpec::from_preset("desk-nlos")?;
    spec.name = a.link.name();
    spec.link = a.link.link()?;
    spec.seed = a.link.seed;
    spec.snr_db = a.snr;
    spec.max_trials = a.trials;
    spec.min_errors = a.min_errors;
    spec.symbols_per_trial = a.symbols;
    spec.channel = a.channel;
    spec.forms = a.forms;
    spec.batch_size = a.batch;
    spec.noise_source = if a.estimate_noise { StateSource::Estimated } else { StateSource::Oracle };
    let mut inter = InterfererSpec { count: a.interferers, bandwidth_hz: a.interferer_bw, ..InterfererSpec::default() };
    if let Some(l) = a.interferer_level {
        inter.psd_above_noise_db = [l, l];
    }
    spec.interferers = inter;
    spec.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = a.link.out;
    let table = pool.install(|| run_and_emit(&spec, &out))?;
    for p in &table.points {
        println!(
            "snr {:>7} dB  {:<15} ber {:.4e}  errors {:>7} / {:>10}{}",
            p.snr_db,
            p.form.to_string(),
            p.ber(),
            p.errors,
            p.bits,
            if p.censored { "  (censored)" } else { "" }
        );
    }
    if a.dump_trial {
        let setup = LinkSetup::new(&spec.link, spec.overlap_factor, spec.roll_off)?;
        let mut rng = trial_rng(spec.seed, 0, 0);
        let run = run_trial(&setup, &spec, spec.snr_db[0], &mut rng)?;
        emit_trial(&run, &out.join("trial0"))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn psd(a: PsdArgs) -> Result<()> {
    let mut spec = PsdSpec::new(a.link.link()?, a.region);
    if let Some(c) = a.carrier {
        spec.carrier_hz = c;
    }
    spec.margin_db = a.margin;
    spec.plan = !a.no_plan;
    spec.symbols = a.symbols;
    spec.resolution_bw_hz = a.rbw;
    spec.seed = a.link.seed;
    let report = run_psd_report(&spec)?;
    emit_psd_report(&report, spec.carrier_hz, &a.link.out)?;
    if a.write_samples {
        write_probe_samples(&spec, &report.active, report.tx_level_dbm_per_mhz, &a.link.out)?;
    }
    println!("{}", report.compliance.summary());
    if let Some(r) = report.ripple_db {
        println!("in-band ripple {r:.3} dB over {} active subcarriers", report.active.len());
    }
    println!("wrote {}", a.link.out.display());
    if report.compliance.pass {
        Ok(())
    } else {
        Err(Error::Stage { stage: "compliance", source: Box::new(Error::Measurement("transmit PSD violates the mask".into())) })
    }
}

fn write_probe_samples(spec: &PsdSpec, active: &[usize], level: f64, dir: &Path) -> Result<()> {
    let (base, _) = spec.link.build()?;
    let cfg = base.with_active(active.to_vec())?;
    let filter = fbmc_uwb::prototype::design_prototype(&cfg, spec.overlap_factor, spec.roll_off)?;
    let s = fbmc_uwb::harness::psd_probe_signal(&cfg, &filter, spec.symbols, level, spec.seed)?;
    fbmc_uwb::samples::write_samples(&s, &dir.join("tx.f32"))
}

fn plan(a: PlanArgs) -> Result<()> {
    let (config, _) = a.link.link()?.build()?;
    let mask = SpectralMask::builtin(a.region);
    let carrier = a.carrier.unwrap_or(a.region.default_carrier_hz());
    let plan = plan_active_set(&mask, &config, carrier, a.margin, a.min_fraction)?;
    let out = &a.link.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_masks_csv(&[mask], &out.join("mask.csv"))?;
    let p = out.join("plan.json");
    let json = serde_json::to_string_pretty(&plan).map_err(|e| Error::Parse { path: p.clone(), message: e.to_string() })?;
    std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    println!(
        "{}: {} of {} subcarriers active at {:.2} dBm/MHz (carrier {:.3} GHz, margin {} dB)",
        plan.region,
        plan.active.len(),
        config.num_subcarriers(),
        plan.level_dbm_per_mhz,
        carrier / 1e9,
        plan.margin_db
    );
    println!("wrote {}", out.display());
    Ok(())
}
