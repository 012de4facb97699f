//! Artifact-producing drivers behind the command-line subcommands.
//!
//! Every CSV is written with a fixed column order and `{:.16e}` floats
//! (17 significant digits); identical configurations produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::ensemble::{
    bbgky_residual, estimate_correlation, run_ensemble, Ensemble, EnsembleError,
};
use crate::kernels::KernelFamily;
use crate::limit_models::{death_chain_evolve, maxwell_moment_ode, LimitError};
use crate::selfsim::{compute_frame, conserved_check, CheckMode, ConservationRow, SelfSimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] EnsembleError),
    #[error("self-similar frame: {0}")]
    SelfSim(#[from] SelfSimError),
    #[error("oracle: {0}")]
    Oracle(#[from] LimitError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reading {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

impl PipelineError {
    /// Process exit status: 1 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } | PipelineError::Csv { .. } => 3,
            PipelineError::Simulation(EnsembleError::Io(_)) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Fixed-precision float field; non-finite values are written as `nan`/`inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Accumulates a CSV file in memory.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            text: header.join(",") + "\n",
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, &self.text).map_err(io_err(path))
    }
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    config: &'a RunConfig,
    seed: u64,
    version: &'static str,
    realizations: usize,
    events: u64,
    null_events: u64,
    warnings: &'a [String],
}

/// Files produced by [`cli_run`].
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub ensemble: Ensemble,
    pub warnings: Vec<String>,
}

pub const RUN_FILES: [&str; 4] = [
    "moments.csv",
    "correlations.csv",
    "residuals.csv",
    "selfsim.csv",
];

/// `moments.csv`: raw particle number, energy `sum |v|^2` and momentum, averaged over realizations.
pub fn moments_table(ens: &Ensemble) -> Table {
    let mut t = Table::new(&[
        "t", "N_mean", "N_stderr", "E_mean", "E_stderr", "px", "py", "pz",
    ]);
    for (s, &time) in ens.times().iter().enumerate() {
        let n = ens.scalar_estimate(s, |r| r.n as f64);
        let e = ens.scalar_estimate(s, |r| r.energy);
        let p: Vec<f64> = (0..3)
            .map(|k| ens.scalar_estimate(s, |r| r.momentum[k]).value)
            .collect();
        t.row(&[
            fmt_f64(time),
            fmt_f64(n.value),
            fmt_opt(n.stderr),
            fmt_f64(e.value),
            fmt_opt(e.stderr),
            fmt_f64(p[0]),
            fmt_f64(p[1]),
            fmt_f64(p[2]),
        ]);
    }
    t
}

/// `selfsim.csv`; deviations come from split-sample mode when there are at least
/// four realizations and from same-sample mode otherwise.
pub fn selfsim_table(ens: &Ensemble) -> Result<Table, PipelineError> {
    let mut table = Table::new(&[
        "t",
        "tau",
        "n_f",
        "ux",
        "uy",
        "uz",
        "T_f",
        "dev_mass",
        "dev_px",
        "dev_py",
        "dev_pz",
        "dev_energy",
    ]);
    let mode = if ens.realizations() >= 4 {
        CheckMode::SplitSample
    } else {
        CheckMode::SameSample
    };
    let mut tau = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (s, &t) in ens.times().iter().enumerate() {
        let frame = match compute_frame(ens, s) {
            Ok(f) => f,
            Err(SelfSimError::Empty { .. } | SelfSimError::ZeroTemperature { .. }) => {
                let mut row = vec![fmt_f64(t)];
                row.extend(std::iter::repeat_n(String::new(), 11));
                table.row(&row);
                prev = None;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let g = frame.n_f * frame.t_f.sqrt();
        match prev {
            Some((t0, g0)) => tau += std::f64::consts::SQRT_2 * 0.5 * (t - t0) * (g + g0),
            None if s == 0 => tau = std::f64::consts::SQRT_2 * t * g,
            None => {}
        }
        prev = Some((t, g));
        let dev: Option<ConservationRow> = conserved_check(ens, &[s], mode)
            .ok()
            .map(|mut v| v.remove(0));
        let mut row = vec![
            fmt_f64(t),
            fmt_f64(tau),
            fmt_f64(frame.n_f),
            fmt_f64(frame.u_f[0]),
            fmt_f64(frame.u_f[1]),
            fmt_f64(frame.u_f[2]),
            fmt_f64(frame.t_f),
        ];
        match dev {
            Some(d) => row.extend(d.deviations().iter().map(|&x| fmt_f64(x))),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        table.row(&row);
    }
    Ok(table)
}

/// Runs the ensemble described by `cfg` and writes its artifacts into `cfg.output_dir`.
pub fn cli_run(cfg: &RunConfig) -> Result<RunArtifacts, PipelineError> {
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let ensemble = run_ensemble(&cfg.ensemble_spec()?)?;
    let mut warnings = Vec::new();

    moments_table(&ensemble).write(&dir.join("moments.csv"))?;

    let mut corr = Table::new(&["t", "ell", "testfn_id", "value", "stderr"]);
    for s in 0..ensemble.times().len() {
        for obs in &cfg.observables {
            let c = estimate_correlation(&ensemble, &obs.phi, s)?;
            corr.row(&[
                fmt_f64(c.t),
                c.ell.to_string(),
                obs.id.clone(),
                fmt_f64(c.value),
                fmt_opt(c.stderr),
            ]);
        }
    }
    corr.write(&dir.join("correlations.csv"))?;

    let last = ensemble.times().len() - 1;
    let mut series = Vec::new();
    for (k, obs) in cfg.observables.iter().enumerate() {
        let settings = crate::ensemble::ResidualSettings {
            salt: k as u64,
            ..cfg.residual_settings()
        };
        let r = bbgky_residual(&ensemble, &obs.phi, last, &settings)?;
        for w in &r.warnings {
            let w = format!("{}: {w}", obs.id);
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        series.push(r);
    }
    let mut res = Table::new(&["t", "ell", "testfn_id", "residual", "stderr"]);
    for s in 0..=last {
        for (obs, r) in cfg.observables.iter().zip(&series) {
            res.row(&[
                fmt_f64(r.t[s]),
                r.ell.to_string(),
                obs.id.clone(),
                fmt_f64(r.residual[s]),
                fmt_f64(r.stderr[s]),
            ]);
        }
    }
    res.write(&dir.join("residuals.csv"))?;

    selfsim_table(&ensemble)?.write(&dir.join("selfsim.csv"))?;

    let meta = Meta {
        config: cfg,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        realizations: ensemble.realizations(),
        events: ensemble.events,
        null_events: ensemble.nulls,
        warnings: &warnings,
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(RunArtifacts {
        dir,
        ensemble,
        warnings,
    })
}

/// `(t, observable_id, value, stderr)` of one sweep entry.
type SweepRow = (f64, String, f64, Option<f64>);

/// Runs `base` at each `N0` (with `lambda = N0`) into `n0_<N0>/` and joins the
/// results against the limit oracles in `sweep.csv`.
///
/// The series `number_density` and `energy_density` are always included; for
/// Maxwell kernels they are compared with the closed-form moment laws. Other
/// observables, and every observable for non-Maxwell kernels, are compared with
/// the run at the largest `N0`, whose own oracle fields are left empty.
pub fn cli_sweep(base: &RunConfig, n0_list: &[usize]) -> Result<PathBuf, PipelineError> {
    if n0_list.is_empty() {
        return Err(ConfigError::Invalid {
            key: "n0".into(),
            reason: "empty N0 list".into(),
        }
        .into());
    }
    let root = base.output_dir.clone();
    create_dir(&root)?;
    let mut per_n0: Vec<(usize, Vec<SweepRow>)> = Vec::new();
    for &n0 in n0_list {
        let mut cfg = base.clone();
        cfg.n0 = n0;
        cfg.lambda = None;
        cfg.output_dir = root.join(format!("n0_{n0}"));
        let cfg = cfg.resolved()?;
        let art = cli_run(&cfg)?;
        let ens = &art.ensemble;
        let mut rows = Vec::new();
        for (s, &t) in ens.times().iter().enumerate() {
            let lambda = cfg.lambda();
            let mass = ens.scalar_estimate(s, |r| r.n as f64 / lambda);
            let energy = ens.scalar_estimate(s, |r| r.energy / lambda);
            rows.push((t, "number_density".to_string(), mass.value, mass.stderr));
            rows.push((t, "energy_density".to_string(), energy.value, energy.stderr));
            for obs in &cfg.observables {
                let c = estimate_correlation(ens, &obs.phi, s)?;
                rows.push((t, obs.id.clone(), c.value, c.stderr));
            }
        }
        per_n0.push((n0, rows));
    }
    let reference_n0 = *n0_list.iter().max().unwrap();
    let reference = per_n0
        .iter()
        .find(|(n, _)| *n == reference_n0)
        .map(|(_, r)| r.clone())
        .unwrap();
    let maxwell = base.kernel.family == KernelFamily::Maxwell;
    let times = base.snapshot_times();
    let oracle = if maxwell {
        let rho0 = 1.0;
        Some(maxwell_moment_ode(
            rho0,
            rho0 * base.init.energy(),
            base.alpha,
            &times,
        )?)
    } else {
        None
    };
    let mut table = Table::new(&[
        "N0",
        "t",
        "observable_id",
        "value",
        "stderr",
        "oracle_value",
        "abs_error",
    ]);
    for (n0, rows) in &per_n0 {
        for (k, (t, id, value, stderr)) in rows.iter().enumerate() {
            let s = k / (rows.len() / times.len());
            let analytic = match (&oracle, id.as_str()) {
                (Some(o), "number_density") => Some(o.closed_form.n[s]),
                (Some(o), "energy_density") => Some(o.closed_form.energy[s]),
                _ => None,
            };
            let oracle_value = analytic.or_else(|| (*n0 != reference_n0).then(|| reference[k].2));
            table.row(&[
                n0.to_string(),
                fmt_f64(*t),
                id.clone(),
                fmt_f64(*value),
                fmt_opt(*stderr),
                fmt_opt(oracle_value),
                fmt_opt(oracle_value.map(|o| (value - o).abs())),
            ]);
        }
    }
    table.write(&root.join("sweep.csv"))?;
    Ok(root)
}

/// Writes `oracle_moments.csv` and `oracle_deathchain.csv` for a Maxwell configuration.
pub fn cli_oracle(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    if cfg.kernel.family != KernelFamily::Maxwell {
        return Err(ConfigError::Invalid {
            key: "kernel.family".into(),
            reason: "limit oracles exist only for maxwell kernels".into(),
        }
        .into());
    }
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let times = cfg.snapshot_times();
    let rho0 = cfg.n0 as f64 / cfg.lambda();
    let curve = maxwell_moment_ode(rho0, rho0 * cfg.init.energy(), cfg.alpha, &times)?;
    let mut m = Table::new(&["t", "n", "E"]);
    for (s, &t) in times.iter().enumerate() {
        m.row(&[
            fmt_f64(t),
            fmt_f64(curve.closed_form.n[s]),
            fmt_f64(curve.closed_form.energy[s]),
        ]);
    }
    m.write(&dir.join("oracle_moments.csv"))?;
    let chain = death_chain_evolve(cfg.n0, cfg.alpha, cfg.lambda(), &times)?;
    let mut d = Table::new(&["t", "N", "p"]);
    for (s, &t) in times.iter().enumerate() {
        for (i, &n) in chain.counts.iter().enumerate() {
            d.row(&[fmt_f64(t), n.to_string(), fmt_f64(chain.p[s][i])]);
        }
    }
    d.write(&dir.join("oracle_deathchain.csv"))?;
    Ok(dir)
}

/// Columns that label a series rather than carry a measurement.
const KEY_COLUMNS: [&str; 5] = ["ell", "testfn_id", "observable_id", "N0", "N"];

/// Gathers every CSV under `dir` (recursively, in sorted order) into the long
/// table `plotdata.csv` with columns `source, t, series, label, value`.
pub fn cli_plotdata(dir: &Path) -> Result<PathBuf, PipelineError> {
    let mut files = Vec::new();
    collect_csv(dir, &mut files)?;
    let out_path = dir.join("plotdata.csv");
    let mut table = Table::new(&["source", "t", "series", "label", "value"]);
    for file in files.iter().filter(|f| **f != out_path) {
        let source = file
            .strip_prefix(dir)
            .unwrap_or(file)
            .to_string_lossy()
            .replace('\\', "/");
        let csv_err = |e: csv::Error| PipelineError::Csv {
            path: file.display().to_string(),
            source: e,
        };
        let mut reader = csv::Reader::from_path(file).map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let Some(t_col) = headers.iter().position(|h| h == "t") else {
            continue;
        };
        let keys: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| KEY_COLUMNS.contains(h))
            .map(|(i, _)| i)
            .collect();
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let label = keys
                .iter()
                .map(|&i| format!("{}={}", &headers[i], &record[i]))
                .collect::<Vec<_>>()
                .join(";");
            for (i, h) in headers.iter().enumerate() {
                if i == t_col || keys.contains(&i) || record[i].is_empty() {
                    continue;
                }
                table.row(&[
                    source.clone(),
                    record[t_col].to_string(),
                    h.to_string(),
                    label.clone(),
                    record[i].to_string(),
                ]);
            }
        }
    }
    table.write(&out_path)?;
    Ok(out_path)
}

fn collect_csv(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_csv(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, extra: &str) -> RunConfig {
        let text = format!(
            r#"{{"kernel": {{"family": "maxwell"}}, "alpha": 0.5, "n0": 20, "t_end": 0.5,
                "ensemble_size": 4, "seed": 7, "init": {{"kind": "maxwellian", "t0": 1.0}},
                "omega_draws": 4, "pair_samples": 16 {extra}}}"#
        );
        let mut c = RunConfig::from_json(&text).unwrap();
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let art = cli_run(&config(dir.path(), "")).unwrap();
        for f in RUN_FILES.iter().chain(&["meta.json"]) {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert_eq!(art.ensemble.realizations(), 4);
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta["seed"], 7);
        assert_eq!(meta["config"]["lambda"], 20.0);
        let moments = fs::read_to_string(dir.path().join("moments.csv")).unwrap();
        assert_eq!(moments.lines().count(), 1 + 17);
        assert!(moments
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("0.0000000000000000e0,2.0000000000000000e1,0.0000000000000000e0"));
    }

    #[test]
    fn sweep_and_oracle_and_plotdata() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), "");
        c.alpha = 0.0;
        let root = cli_sweep(&c, &[10, 20]).unwrap();
        let mut reader = csv::Reader::from_path(root.join("sweep.csv")).unwrap();
        let mut mass_rows = 0;
        for rec in reader.records() {
            let rec = rec.unwrap();
            if &rec[2] == "number_density" {
                assert_eq!(rec[6].parse::<f64>().unwrap(), 0.0);
                mass_rows += 1;
            }
        }
        assert_eq!(mass_rows, 2 * 17);
        assert!(root.join("n0_10/moments.csv").is_file());

        let o = tempfile::tempdir().unwrap();
        let mut oc = config(o.path(), "");
        oc.output_dir = o.path().to_path_buf();
        cli_oracle(&oc).unwrap();
        let m = fs::read_to_string(o.path().join("oracle_moments.csv")).unwrap();
        assert!(m.starts_with(
            "t,n,E\n0.0000000000000000e0,1.0000000000000000e0,3.0000000000000000e0\n"
        ));
        let mut hs = oc.clone();
        hs.kernel = crate::config::KernelConfig::hard_sphere();
        assert_eq!(cli_oracle(&hs).unwrap_err().exit_code(), 1);

        let p = cli_plotdata(dir.path()).unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert!(text.starts_with("source,t,series,label,value\n"));
        assert!(text.contains("sweep.csv,"));
        assert!(text.contains("n0_10/moments.csv,"));
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = cli_run(&config(&blocker.join("sub"), "")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
