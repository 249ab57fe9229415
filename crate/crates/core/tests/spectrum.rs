use fbmc_uwb::harness::{in_band_ripple_db, psd_probe_signal, run_psd_report, PsdSpec};
use fbmc_uwb::mask::{Region, MAX_RBW_HZ};
use fbmc_uwb::numerology::preset;
use fbmc_uwb::prototype::design_prototype;
use fbmc_uwb::psd::measure_psd;
use fbmc_uwb::SmtConfig;
use proptest::prelude::*;

#[test]
fn all_active_signal_is_flat() {
    let cfg = SmtConfig::new(64e6, 64).unwrap();
    let f = design_prototype(&cfg, 4, 1.0).unwrap();
    let s = psd_probe_signal(&cfg, &f, 4000, -41.3, 1).unwrap();
    let psd = measure_psd(&s, cfg.sample_rate_hz(), 250e3).unwrap();
    let ripple = in_band_ripple_db(&psd, &cfg).unwrap();
    assert!(ripple < 1.0, "{ripple}");
    let mean: f64 = psd.dbm_per_mhz().iter().sum::<f64>() / psd.freqs_hz.len() as f64;
    assert!((mean + 41.3).abs() < 0.5, "{mean}");
}

#[test]
fn switched_off_subcarriers_are_40_db_down() {
    let m = 128;
    let cfg = SmtConfig::new(128e6, m).unwrap();
    let b = cfg.subcarrier_spacing_hz();
    // Active: |f| < W/4.
    let active: Vec<usize> = (0..m).filter(|&k| cfg.subcarrier_freq_hz(k).abs() < 32e6).collect();
    let cfg = cfg.with_active(active).unwrap();
    let f = design_prototype(&cfg, 4, 1.0).unwrap();
    let s = psd_probe_signal(&cfg, &f, 3000, 0.0, 2).unwrap();
    let psd = measure_psd(&s, cfg.sample_rate_hz(), b / 4.0).unwrap();
    let db = psd.dbm_per_mhz();
    let edge = 31.0 * b;
    let in_band: Vec<f64> = psd.freqs_hz.iter().zip(&db).filter(|(f, _)| f.abs() < edge - 2.0 * b).map(|(_, p)| *p).collect();
    let level = in_band.iter().sum::<f64>() / in_band.len() as f64;
    let worst_out = psd
        .freqs_hz
        .iter()
        .zip(&db)
        .filter(|(f, _)| f.abs() >= edge + 2.0 * b)
        .map(|(_, p)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(level - worst_out >= 40.0, "in-band {level:.1}, worst out-of-band {worst_out:.1}");
}

#[test]
fn shipped_carriers_pass_closed_loop() {
    let link = preset("desk-los").unwrap();
    for region in Region::ALL {
        let r = run_psd_report(&PsdSpec::new(link.clone(), region)).unwrap();
        assert!(r.compliance.pass, "{}", r.compliance.summary());
        assert!(r.compliance.min_headroom_db >= 1.0);
    }
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PsdSpec::new(preset("desk-los").unwrap(), Region::Japan);
    let r = run_psd_report(&spec).unwrap();
    fbmc_uwb::harness::emit_psd_report(&r, spec.carrier_hz, dir.path()).unwrap();
    let psd = std::fs::read_to_string(dir.path().join("psd.csv")).unwrap();
    assert!(psd.starts_with("frequency_hz,dbm_per_mhz\n"));
    let first: f64 = psd.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((first - (spec.carrier_hz - 80e6)).abs() < 1e6);
    assert!(dir.path().join("compliance.csv").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Wherever the planner finds a plan, the measured signal meets the mask
    /// with the planned margin.
    #[test]
    fn planner_output_always_complies(region in 0usize..3, carrier_ghz in 1.2..12.0f64, margin in 0.5..3.0f64) {
        let region = Region::ALL[region];
        let mut spec = PsdSpec::new(preset("desk-los").unwrap(), region);
        spec.carrier_hz = carrier_ghz * 1e9;
        spec.margin_db = margin;
        spec.symbols = 800;
        spec.resolution_bw_hz = MAX_RBW_HZ;
        match run_psd_report(&spec) {
            Ok(r) => prop_assert!(r.compliance.pass, "{} at {carrier_ghz} GHz: {}", region, r.compliance.summary()),
            Err(e) => prop_assert!(e.to_string().contains("planning") || e.to_string().contains("outside"), "{e}"),
        }
    }
}
