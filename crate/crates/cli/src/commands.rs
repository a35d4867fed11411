//! Subcommand implementations. Each returns the text it prints on stdout so
//! callers and tests can inspect it.

use std::path::Path;

use quditqpt::channels::{chi_from_kraus, ChiMatrix};
use quditqpt::mub::{build_mubs, is_supported};
use quditqpt::numkernel::ComplexMatrix;
use quditqpt::qudit::{density_from_pure, fidelity, purity, DensityMatrix, PureState};
use quditqpt::tomography::{
    make_physical, preparation_basis, process_fidelity, recover_with, run_qpt, RecoveryOptions,
};
use quditqpt::turbulence::{
    fit_power_law, mask_seed, phase_screen, structure_function, KOLMOGOROV_SF_COEFF,
};
use quditqpt::Error;
use serde::Serialize;

use crate::config::{ChannelSpec, ExperimentConfig, TurbulenceSpec};
use crate::error::{CliError, Result};
use crate::io::{
    read_chi, read_density, read_kraus, write_bytes, write_records, write_screen_png,
    write_screen_raw, MatrixFile, Metadata,
};

/// Extra lines for stderr.
#[derive(Debug, Default)]
pub struct Output {
    pub stdout: String,
    pub warnings: Vec<String>,
}

impl Output {
    fn line(&mut self, s: impl AsRef<str>) {
        self.stdout.push_str(s.as_ref());
        self.stdout.push('\n');
    }
}

fn seed_of(cfg: &ExperimentConfig) -> Option<u64> {
    match &cfg.channel {
        ChannelSpec::Turbulence(t) => Some(t.seed),
        _ => None,
    }
}

/// Writes `kraus.json` and `chi.json` into `out`.
pub fn gen_channel(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let ch = cfg.build_channel()?;
    let meta = Metadata {
        seed: seed_of(cfg),
        config_hash: Some(cfg.hash()),
    };
    MatrixFile::from_kraus(&ch, meta.clone()).write(&out.join("kraus.json"))?;
    MatrixFile::from_chi(&chi_from_kraus(&ch), meta).write(&out.join("chi.json"))?;
    let defect = (&ch.completeness() - &ComplexMatrix::identity(ch.dim())).max_abs();
    let mut o = Output::default();
    o.line(format!("operators: {}", ch.operators().len()));
    o.line(format!(
        "trace-preserving: {} (max |sum E^H E - I| = {defect:.3e})",
        if ch.is_trace_preserving() {
            "pass"
        } else {
            "no"
        }
    ));
    o.line(format!("wrote {}", out.display()));
    Ok(o)
}

#[derive(Debug, Serialize)]
struct PurityRow {
    input: String,
    truth: f64,
    reconstructed: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    d: usize,
    config_hash: String,
    shots: Option<u64>,
    seed: u64,
    kraus_operators: usize,
    process_fidelity: f64,
    antihermitian_residual: f64,
    prep_fidelities: Vec<f64>,
    mean_prep_fidelity: f64,
    purity: Vec<PurityRow>,
    uniform_input_purity: f64,
}

/// `chi` applied to `rho`, repaired to a valid state for reporting.
fn predict(chi: &ChiMatrix, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let raw = chi.apply_unnormalized(rho.matrix())?.hermitian_part();
    Ok(make_physical(&raw)?)
}

/// Simulates tomography of the configured channel (or `channel_file`) and
/// writes `records.csv`, `chi.json` and `report.json`.
pub fn run_qpt_cmd(
    cfg: &ExperimentConfig,
    channel_file: Option<&Path>,
    out: &Path,
) -> Result<Output> {
    let ch = match channel_file {
        Some(p) => read_kraus(p)?,
        None => cfg.build_channel()?,
    };
    let d = ch.dim();
    if d != cfg.d {
        return Err(CliError::Config(format!(
            "channel file has d = {d}, config says {}",
            cfg.d
        )));
    }
    if !is_supported(d) {
        return Err(Error::UnsupportedDimension(d).into());
    }
    let mubs = build_mubs(d)?;
    let prep = preparation_basis(d)?;
    let shots = cfg.measurement.shots();
    let run = run_qpt(&ch, &prep, &mubs, shots, cfg.measurement.seed)?;
    let truth = chi_from_kraus(&ch);
    let chi = &run.result.chi;

    let mut prep_fidelities = Vec::with_capacity(prep.len());
    let mut rows = Vec::with_capacity(prep.len() + 1);
    for (j, rho) in prep.densities().iter().enumerate() {
        let t = ch.apply(rho)?.state;
        let r = predict(chi, rho)?;
        prep_fidelities.push(fidelity(&t, &r)?);
        rows.push(PurityRow {
            input: format!("prep {j}"),
            truth: purity(&t),
            reconstructed: purity(&r),
        });
    }
    let uniform = density_from_pure(&PureState::uniform(d));
    let t = ch.apply(&uniform)?.state;
    let r = predict(chi, &uniform)?;
    rows.push(PurityRow {
        input: "uniform".into(),
        truth: purity(&t),
        reconstructed: purity(&r),
    });
    let report = Report {
        d,
        config_hash: cfg.hash(),
        shots: shots.count(),
        seed: cfg.measurement.seed,
        kraus_operators: ch.operators().len(),
        process_fidelity: process_fidelity(chi, &truth)?,
        antihermitian_residual: run.result.antihermitian_residual,
        mean_prep_fidelity: prep_fidelities.iter().sum::<f64>() / prep_fidelities.len() as f64,
        prep_fidelities,
        uniform_input_purity: purity(&r),
        purity: rows,
    };

    write_records(&out.join("records.csv"), &run.records)?;
    let meta = Metadata {
        seed: Some(cfg.measurement.seed),
        config_hash: Some(cfg.hash()),
    };
    MatrixFile::from_chi(chi, meta).write(&out.join("chi.json"))?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_bytes(&out.join("report.json"), text.as_bytes())?;

    let mut o = Output::default();
    o.line(format!("process fidelity: {:.12}", report.process_fidelity));
    o.line(format!(
        "mean output fidelity: {:.12}",
        report.mean_prep_fidelity
    ));
    o.line(format!(
        "uniform-input purity: {:.6}",
        report.uniform_input_purity
    ));
    o.line(format!("wrote {}", out.display()));
    Ok(o)
}

/// Recovers the pre-channel state and writes it to `out`.
pub fn recover_cmd(
    chi_path: &Path,
    rho_path: &Path,
    opts: RecoveryOptions,
    reference: Option<&Path>,
    out: &Path,
) -> Result<Output> {
    let chi = read_chi(chi_path)?;
    let rho = read_density(rho_path)?;
    let rec = recover_with(&chi, &rho, &opts)?;
    let mut o = Output::default();
    if rec.is_rank_deficient() {
        o.warnings.push(format!(
            "warning: transfer matrix has effective rank {} of {} at rcond {:e}; recovery is a least-squares estimate",
            rec.effective_rank, rec.full_rank, opts.rcond
        ));
    }
    MatrixFile::from_density(&rec.state, Metadata::default()).write(out)?;
    o.line(format!(
        "effective rank: {}/{}",
        rec.effective_rank, rec.full_rank
    ));
    if let Some(p) = reference {
        let want = read_density(p)?;
        o.line(format!("fidelity: {:.12}", fidelity(&rec.state, &want)?));
    }
    o.line(format!("wrote {}", out.display()));
    Ok(o)
}

/// Named input states for [`apply_cmd`]: `uniform`, `basis:K`,
/// `phases:a,b,...` (equal weights) or a density-matrix file.
pub fn parse_state(spec: &str, d: usize) -> Result<DensityMatrix> {
    if spec == "uniform" {
        return Ok(density_from_pure(&PureState::uniform(d)));
    }
    if let Some(k) = spec.strip_prefix("basis:") {
        let k: usize = k
            .parse()
            .map_err(|_| CliError::Config(format!("bad basis index '{k}'")))?;
        if k >= d {
            return Err(CliError::Config(format!(
                "basis index {k} out of range for d = {d}"
            )));
        }
        return Ok(density_from_pure(&PureState::basis(d, k)));
    }
    if let Some(list) = spec.strip_prefix("phases:") {
        let phases = list
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| CliError::Config(format!("bad phase list '{list}'")))?;
        if phases.len() != d {
            return Err(CliError::Config(format!(
                "{} phases given for d = {d}",
                phases.len()
            )));
        }
        return Ok(density_from_pure(&PureState::with_phases(&phases)));
    }
    let rho = read_density(Path::new(spec))?;
    if rho.dim() != d {
        return Err(CliError::Config(format!(
            "state has d = {}, channel has {d}",
            rho.dim()
        )));
    }
    Ok(rho)
}

/// Pushes a state through a channel file; writes the input and the
/// post-selected output as density files.
pub fn apply_cmd(channel: &Path, state: &str, out: &Path) -> Result<Output> {
    let ch = read_kraus(channel)?;
    let rho = parse_state(state, ch.dim())?;
    let res = ch.apply(&rho)?;
    MatrixFile::from_density(&rho, Metadata::default()).write(&out.join("input.json"))?;
    MatrixFile::from_density(&res.state, Metadata::default()).write(&out.join("output.json"))?;
    let mut o = Output::default();
    o.line(format!("transmitted trace: {:.12}", res.transmitted_trace));
    o.line(format!("output purity: {:.12}", purity(&res.state)));
    o.line(format!("wrote {}", out.display()));
    Ok(o)
}

/// Lags, in pixels, for the structure-function table.
pub fn screen_lags(n: usize) -> Vec<usize> {
    let mut lags = vec![1, 2, 3];
    let mut k = 4;
    while k <= n / 8 {
        lags.push(k);
        if k + k / 2 <= n / 8 {
            lags.push(k + k / 2);
        }
        k *= 2;
    }
    lags
}

/// Writes `count` screens as PNG and raw grids plus `structure_function.csv`.
pub fn turb_screens(t: &TurbulenceSpec, d: usize, count: usize, out: &Path) -> Result<Output> {
    if count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    let p = t.params(d);
    p.validate()?;
    let screens = (0..count)
        .map(|m| phase_screen(&p, mask_seed(t.seed, m as u64)))
        .collect::<quditqpt::Result<Vec<_>>>()?;
    for (m, s) in screens.iter().enumerate() {
        write_screen_png(&out.join(format!("screen_{m:03}.png")), s)?;
        write_screen_raw(&out.join(format!("screen_{m:03}.bin")), s)?;
    }
    let r0 = p.r0()?;
    let mut o = Output::default();
    o.line(format!("r0: {r0:.6e} m"));
    if count >= 2 {
        let lags = screen_lags(p.grid_size);
        let seps: Vec<f64> = lags.iter().map(|&k| k as f64 * p.grid_spacing).collect();
        let dr = structure_function(&screens, &seps)?;
        let mut csv = String::from("lag_px,separation_m,d_measured,d_kolmogorov\n");
        for ((k, r), v) in lags.iter().zip(&seps).zip(&dr) {
            let model = KOLMOGOROV_SF_COEFF * (r / r0).powf(5.0 / 3.0);
            csv.push_str(&format!("{k},{r},{v},{model}\n"));
        }
        write_bytes(&out.join("structure_function.csv"), csv.as_bytes())?;
        let fit: Vec<(f64, f64)> = seps
            .iter()
            .zip(&dr)
            .filter(|(r, _)| **r >= 4.0 * p.grid_spacing - 1e-15)
            .map(|(&r, &v)| (r, v))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = fit.into_iter().unzip();
        match fit_power_law(&xs, &ys) {
            Ok((b, _)) => o.line(format!("fitted exponent: {b:.4}")),
            Err(_) => o
                .warnings
                .push("warning: screens are flat; no exponent fitted".into()),
        }
    } else {
        o.warnings
            .push("warning: structure function needs at least 2 screens; skipped".into());
    }
    o.line(format!("wrote {}", out.display()));
    Ok(o)
}
