//! Fast built-in consistency checks run by `envdiff selftest`.

use serde::Serialize;

use envdiff_core::denoiser::GaussianDenoiser;
use envdiff_core::metrics::estoi;
use envdiff_core::rng::{standard_normal, stream};
use envdiff_core::sampler::{init_prior, sample, SamplerConfig};
use envdiff_core::schedule::ScheduleParams;
use envdiff_core::spectral::{compress, decompress, istft, stft, StftConfig};
use envdiff_core::ComplexSpectrogram;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub fn run() -> Vec<Check> {
    let mut out = Vec::new();
    let sched = ScheduleParams::default();

    let t = 0.5;
    let integral = simpson(
        |x| {
            let p = sched.eval_point(x).expect("schedule point");
            p.beta / (p.scale * p.scale)
        },
        0.0,
        t,
        4000,
    );
    let sigma = sched.sigma(t).unwrap_or(f64::NAN);
    let rel = (integral - sigma * sigma).abs() / (sigma * sigma);
    out.push(check("schedule quadrature", rel < 1e-6, format!("relative error {rel:.2e}")));

    let cfg = StftConfig::default();
    let mut rng = stream(1);
    // (1 + z⁻¹)² lowpass: no energy in the discarded Nyquist row
    let w: Vec<f64> = (0..8002).map(|_| standard_normal(&mut rng)).collect();
    let x: Vec<f64> = (0..8000).map(|n| w[n + 2] + 2.0 * w[n + 1] + w[n]).collect();
    let rt = stft(&x, &cfg).and_then(|s| istft(&s, &cfg, x.len()));
    let detail = match &rt {
        Ok(y) => {
            let (lo, hi) = (cfg.frame_len, x.len() - cfg.frame_len);
            let e: f64 = (lo..hi).map(|i| (x[i] - y[i]).powi(2)).sum();
            let s: f64 = (lo..hi).map(|i| x[i] * x[i]).sum();
            (e / s).sqrt()
        }
        Err(_) => f64::NAN,
    };
    out.push(check("stft round trip", detail <= 1e-6, format!("relative RMS {detail:.2e}")));

    if let Ok(spec) = stft(&x, &cfg) {
        let back = decompress(&compress(&spec, &cfg), &cfg);
        let rel = (back.dist_sqr(&spec).unwrap_or(f64::NAN) / spec.norm_sqr()).sqrt();
        out.push(check("compression round trip", rel <= 1e-9, format!("relative error {rel:.2e}")));
    }

    // second order: halving the step should cut the error by about 4
    let sd = 0.1;
    let y = ComplexSpectrogram::zeros(4, 4);
    let p_end = sched.eval_point(sched.t_end).expect("end point");
    let smax = sched.sigma_max().unwrap_or(f64::NAN);
    let heun_error = |n: usize| -> Result<(f64, usize), String> {
        let cfg = SamplerConfig { s_churn: 0.0, ..SamplerConfig::edm(n) };
        let z = init_prior(&sched, 4, 4, &mut stream(2)).map_err(|e| e.to_string())?.scale(1.0 / p_end.scale);
        let o = sample(&GaussianDenoiser { sigma_prior: sd }, &y, &cfg, &sched, &mut stream(2))
            .map_err(|e| e.to_string())?;
        let want = z.scale(sd / (sd * sd + smax * smax).sqrt());
        let rel = (o.n0.dist_sqr(&want).map_err(|e| e.to_string())? / want.norm_sqr()).sqrt();
        Ok((rel, o.diagnostics.evaluations))
    };
    let (passed, detail) = match (heun_error(32), heun_error(64)) {
        (Ok((e32, _)), Ok((e64, evals))) => (
            e32 / e64 >= 3.5 && evals == 127,
            format!("error {e32:.2e} at n=32, {e64:.2e} at n=64 (ratio {:.1}), {evals} evaluations", e32 / e64),
        ),
        (a, b) => (false, format!("{:?} {:?}", a.err(), b.err())),
    };
    out.push(check("heun gaussian terminal value", passed, detail));

    let ok = [4usize, 16, 64]
        .iter()
        .all(|&n| SamplerConfig::pc(n).expected_evaluations() == SamplerConfig::edm(n).expected_evaluations());
    out.push(check("evaluation parity", ok, "PC and EDM both use 2n-1".into()));

    let speech: Vec<f64> = (0..32_000)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let env = (std::f64::consts::PI * 3.0 * t).sin().abs();
            env * (2.0 * std::f64::consts::PI * 220.0 * t).sin()
        })
        .collect();
    let s = estoi(&speech, &speech, 16_000).unwrap_or(f64::NAN);
    out.push(check("estoi identity", (s - 1.0).abs() < 1e-6, format!("score {s:.9}")));
    out
}
