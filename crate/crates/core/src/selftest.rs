//! Reduced-scale checks of every module, reported as a pass/fail matrix.

use std::fmt::Write as _;

use crate::exactloss::{eigen_loss, expected_loss_finite, loss_finite, loss_infinite_data};
use crate::features::io::{dataset_from_csv, dataset_to_csv};
use crate::features::{
    build_relu_features, build_torus_features, random_projector, sample_manifold, sample_teacher, second_moment_features, ManifoldSpec,
    Projector,
};
use crate::fit::fit_line;
use crate::harness::{fit_scaling_exponent, run_sweep, Regime, SweepConfig};
use crate::linalg::sym_eigen_desc;
use crate::manifold::{estimate_dim, fit_nn_scaling};
use crate::replica::{replica_curve, solve_kappa, teacher_overlaps, KAPPA_TOL};
use crate::rng::derive_seed;
use crate::spectral::{eig_spectrum, fit_spectral_exponent, synth_spectrum};
use crate::Result;

const SEED: u64 = 20_240_601;

/// A deliberately broken check, used to confirm failures are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the smallest eigenvalue before the PSD check.
    EigenSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// One block per module, one line per check, and a final tally.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for c in &self.checks {
            if c.module != current {
                current = c.module;
                let _ = writeln!(out, "[{current}]");
            }
            let _ = writeln!(out, "  {:<4} {:<28} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let n_pass = self.checks.iter().filter(|c| c.pass).count();
        let _ = writeln!(out, "{n_pass}/{} checks passed", self.checks.len());
        out
    }
}

type Outcome = Result<(bool, String)>;

fn record(report: &mut SelftestReport, module: &'static str, name: &'static str, outcome: Outcome) {
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    report.checks.push(Check { module, name, pass, detail });
}

fn psd(fault: Option<Fault>) -> Outcome {
    let fm = build_relu_features(4, 24, SEED)?;
    let data = sample_manifold(fm.natural_manifold(), 2000, derive_seed(SEED, "selftest-psd", 0))?;
    let m = second_moment_features(&fm, &data)?;
    let (mut vals, _) = sym_eigen_desc(&m.to_dense());
    if fault == Some(Fault::EigenSign) {
        let floor = 1e-3 * vals[0];
        let last = vals.last_mut().unwrap();
        *last = -last.abs().max(floor);
    }
    let top = vals[0];
    let bottom = *vals.last().unwrap();
    Ok((bottom >= -1e-10 * top && m.asymmetry() < 1e-12, format!("min/max eigenvalue {:.3e}", bottom / top)))
}

fn dataset_round_trip() -> Outcome {
    let ds = sample_manifold(ManifoldSpec::torus(3)?, 50, SEED)?;
    let back = dataset_from_csv(&dataset_to_csv(&ds))?;
    Ok((back.inputs == ds.inputs && back.manifold == ds.manifold, "50 points on T^3".into()))
}

fn interpolation() -> Outcome {
    let fm = build_torus_features(1, 1.0, 3)?;
    let s = fm.n_features();
    let spec = fm.natural_manifold();
    let teacher = sample_teacher(s, SEED)?;
    let train = sample_manifold(spec, 4 * s, derive_seed(SEED, "selftest-train", 0))?;
    let test = sample_manifold(spec, 200, derive_seed(SEED, "selftest-test", 0))?;
    let l = loss_finite(&fm, &teacher, &Projector::full(s), &train, &test)?.value;
    Ok((l < 1e-20, format!("loss with D = 4S: {l:.2e}")))
}

fn finite_approaches_limit() -> Outcome {
    let fm = build_torus_features(1, 1.0, 6)?;
    let s = fm.n_features();
    let moment = fm.analytic_second_moment().expect("torus features have a closed-form moment");
    let proj = random_projector(s, 5, SEED)?;
    let limit = loss_infinite_data(&fm, &proj, &moment)?.value;
    let train = sample_manifold(fm.natural_manifold(), 4000, derive_seed(SEED, "selftest-train", 1))?;
    let finite = expected_loss_finite(&fm, &proj, &train, &moment)?.value;
    let rel = (finite - limit) / limit;
    Ok(((0.0..0.02).contains(&rel), format!("L(D=4000) / L(P) - 1 = {rel:.2e}")))
}

fn eigen_trace() -> Outcome {
    let sp = synth_spectrum(1.0, 100)?;
    let l = eigen_loss(&sp, &nalgebra::DMatrix::zeros(0, 100))?;
    let want = 0.5 * sp.sum();
    Ok(((l - want).abs() < 1e-12 * want, format!("{l:.6} vs {want:.6}")))
}

fn synth_fit() -> Outcome {
    let f = fit_spectral_exponent(&synth_spectrum(1.0, 4096)?, None)?;
    Ok(((f.exponent - 1.0).abs() < 0.02, format!("alpha_K = {:.4}", f.exponent)))
}

fn torus_decay() -> Outcome {
    let fm = build_torus_features(2, 2.0, 12)?;
    let sp = eig_spectrum(&fm.analytic_second_moment().expect("closed-form moment"))?;
    let f = fit_spectral_exponent(&sp, None)?;
    Ok(((f.exponent - 1.0).abs() < 0.1, format!("alpha_K = {:.4} (d = 2, t = 2)", f.exponent)))
}

fn kappa_slope() -> Outcome {
    let sp = synth_spectrum(1.0, 10_000)?;
    let grid = [100.0, 200.0, 400.0, 800.0];
    let sols = replica_curve(&sp, &teacher_overlaps(10_000), &grid)?;
    let x: Vec<f64> = grid.iter().map(|d: &f64| d.ln()).collect();
    let y: Vec<f64> = sols.iter().map(|r| r.kappa.ln()).collect();
    let f = fit_line(&x, &y, None)?;
    Ok(((f.slope + 1.0).abs() < 0.05, format!("d ln kappa / d ln D = {:.4}", f.slope)))
}

fn saturation() -> Outcome {
    let sp = synth_spectrum(1.0, 50)?;
    let below = solve_kappa(&sp, 20.0, KAPPA_TOL)?;
    let above = solve_kappa(&sp, 60.0, KAPPA_TOL)?;
    Ok((!below.saturated && below.kappa > 0.0 && above.saturated, format!("kappa(D=20) = {:.3e}", below.kappa)))
}

fn dimension() -> Outcome {
    let ds = sample_manifold(ManifoldSpec::torus(2)?, 2000, SEED)?;
    let est = estimate_dim(&ds.inputs, ds.manifold.metric())?;
    Ok(((est.d_hat - 2.0).abs() < 0.2, format!("d_hat = {:.3} on T^2", est.d_hat)))
}

fn nn_slope() -> Outcome {
    let f = fit_nn_scaling(ManifoldSpec::hypercube(2)?, &[100, 300, 1000, 3000], 5, SEED)?;
    Ok(((f.slope + 0.5).abs() < 0.05, format!("slope = {:.4} (d = 2)", f.slope)))
}

fn variance_sweep() -> Outcome {
    let mut c = SweepConfig::preset(Regime::VarianceD);
    c.seeds = 6;
    c.d_grid = vec![256, 512, 1024, 2048, 4096, 8192];
    let f = fit_scaling_exponent(&run_sweep(&c)?, None)?;
    Ok(((f.exponent - 1.0).abs() < 0.15, format!("alpha_D = {:.3} ± {:.3}", f.exponent, f.stderr)))
}

fn config_round_trip() -> Outcome {
    let ok = Regime::ALL.iter().all(|&r| {
        let c = SweepConfig::preset(r);
        SweepConfig::from_text(&c.to_text()).is_ok_and(|b| b == c)
    });
    Ok((ok, "every preset".into()))
}

/// Run every check; `fault` breaks one on purpose.
pub fn run(fault: Option<Fault>) -> SelftestReport {
    let mut r = SelftestReport::default();
    record(&mut r, "features", "second moment is PSD", psd(fault));
    record(&mut r, "features", "dataset CSV round trip", dataset_round_trip());
    record(&mut r, "exactloss", "interpolation at D > S", interpolation());
    record(&mut r, "exactloss", "finite D nears L(P)", finite_approaches_limit());
    record(&mut r, "exactloss", "eigen loss with no data", eigen_trace());
    record(&mut r, "spectral", "synthetic exponent", synth_fit());
    record(&mut r, "spectral", "torus decay", torus_decay());
    record(&mut r, "replica", "kappa ~ 1/D", kappa_slope());
    record(&mut r, "replica", "saturation at D >= S", saturation());
    record(&mut r, "manifold", "intrinsic dimension", dimension());
    record(&mut r, "manifold", "NN distance slope", nn_slope());
    record(&mut r, "harness", "variance-limited slope", variance_sweep());
    record(&mut r, "harness", "config round trip", config_round_trip());
    r
}
