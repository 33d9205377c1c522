use squint_core::channel::{normalize_channel, sample_paths, synth_channel, vectorize};
use squint_core::estimator::*;
use squint_core::metrics::nmse;
use squint_core::pulse::PulseSpec;
use squint_core::sounding::{gen_sounding, measure};
use squint_core::sysmodel::*;
use squint_core::{seed, CVec64};

fn main() {
    let cfg = SystemConfig::<f64>::half_wavelength(28e9, 1e-9, 32, 0.25, 16, 4, 2, 2, 2);
    let pulse = PulseSpec::raised_cosine(&cfg);
    let ranges = ImpairmentRanges::reference(cfg.lambda_c());
    let imp = sample_impairments(&cfg, &ranges, &mut seed::stream(93, "mv-imp", 1));
    let dict = DictionarySet::from_impairments(&cfg, &imp, 8, 32, 64);
    let mut paths = sample_paths(4, 16.0 * cfg.t_s, &mut seed::stream(94, "mv-path", 1));
    let mut h = synth_channel(&cfg, &imp, &pulse, &paths).unwrap();
    normalize_channel(&cfg, &mut paths, &mut h).unwrap();
    for p in &paths.paths {
        println!("true: tau={:.2}Ts aoa(sin)={:.3} aod(sin)={:.3} |a|={:.3}", p.tau/cfg.t_s, p.aoa.sin(), p.aod.sin(), p.alpha.norm());
    }
    let snr_db = 15.0;
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    // Identity sensing route first
    let op = SensingOp::identity(cfg.n_r * cfg.n_t);
    let y: Vec<CVec64> = h.h.iter().map(vectorize).collect();
    let est = DaOmpBs::new(&cfg, &dict, &pulse, &op).unwrap();
    let params = EstimatorParams { stop_eps: 1e-9, max_paths: 8, sweep_rounds: 1, g_floor_rel: 1e-3 };
    let out = est.run(&y, &params).unwrap();
    let rec = est.reconstruct(&out.paths).unwrap();
    println!("identity sensing: NMSE {:.2} dB, {} paths", nmse(&h, &rec), out.paths.len());
    for t in &out.trace { println!("  it{}: tau={} aoa={} aod={} mse={:.3e}", t.iteration, t.tau_index, t.aoa_index, t.aod_index, t.mse); }
    // Hybrid route
    let sound = gen_sounding(&cfg, &imp, 40, 1, &mut seed::stream(95, "mv-snd", 1)).unwrap();
    let meas = measure(&sound, &h, sigma2, 0, &mut seed::stream(96, "mv-noise", 1)).unwrap();
    let (op2, y_w) = whiten_measurements(&sound, &meas);
    let est2 = DaOmpBs::new(&cfg, &dict, &pulse, &op2).unwrap();
    let params2 = EstimatorParams::noise_calibrated(sigma2, 1, 4);
    println!("stop_eps = {:.3e}", params2.stop_eps);
    let out2 = est2.run(&y_w, &params2).unwrap();
    let rec2 = est2.reconstruct(&out2.paths).unwrap();
    println!("hybrid: NMSE {:.2} dB, {} paths, degraded={}", nmse(&h, &rec2), out2.paths.len(), out2.degraded);
    for t in &out2.trace { println!("  it{}: tau={} aoa={} aod={} mse={:.3e}", t.iteration, t.tau_index, t.aoa_index, t.aod_index, t.mse); }
    let grid_sines: Vec<f64> = dict.aod_grid.values().iter().map(|a| a.sin()).collect();
    println!("aod grid sines: {:?}", &grid_sines[..6]);
}
