//! Command execution and result files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cdma_pme::constellation::linear_to_db;
use cdma_pme::mc_sim::{self, DecouplingReport, SampleStats};
use cdma_pme::replica_solver::{self, FixedPointSolution, SolveMethod, SolverOptions, SweepAxis};
use cdma_pme::spectral::{self, nats_to_bits};
use cdma_pme::validate;
use cdma_pme::{DetectorPreset, SystemSpec};
use serde::Serialize;

use crate::config::{Command, ExperimentConfig, Format};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Schema(#[from] crate::config::SchemaError),
    #[error(transparent)]
    Model(#[from] cdma_pme::Error),
    #[error("cannot write {path}: {msg}")]
    Write { path: String, msg: String },
}

impl RunError {
    /// 2 for configuration problems, 3 for solver failures, 4 for
    /// quadrature failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        use cdma_pme::Error as E;
        match self {
            RunError::Schema(_) => 2,
            RunError::Write { .. } => 1,
            RunError::Model(e) => match e {
                E::Quadrature { .. } => 4,
                E::NoConvergence { .. } | E::Singular(_) | E::SingularLoad | E::OutOfDomain { .. } | E::Unsupported(_) => 3,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "schema",
            3 => "solver",
            4 => "quadrature",
            _ => "io",
        }
    }
}

/// A finished command: result files, and whether it succeeded (only
/// `validate` can finish unsuccessfully).
pub struct Outcome {
    pub files: Vec<(Option<PathBuf>, String)>,
    pub success: bool,
}

pub fn format_for(cfg: &ExperimentConfig, output: Option<&Path>) -> Format {
    cfg.format.unwrap_or_else(|| match output.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Csv,
    })
}

pub fn run(cfg: &ExperimentConfig, output: Option<&Path>, format: Format) -> Result<Outcome, RunError> {
    let opts = SolverOptions::default();
    let single = |text: String| Outcome {
        files: vec![(output.map(Path::to_path_buf), text)],
        success: true,
    };
    match cfg.command {
        Command::Efficiency => {
            let spec = cfg.spec().system(cfg.spec().beta.expect("checked"))?;
            let sol = replica_solver::solve(&spec, &opts)?;
            Ok(single(efficiency_text(&spec, &sol, format)))
        }
        Command::Spectral => {
            let spec = cfg.spec().system(cfg.spec().beta.expect("checked"))?;
            Ok(single(spectral_text(&spectral_record(&spec, &opts)?, format)))
        }
        Command::Sweep => {
            let spec = cfg.spec().system(cfg.spec().beta.expect("checked"))?;
            let sw = cfg.sweep.as_ref().expect("checked");
            let rows = sweep_rows(&spec, sw.axis, &sw.values(), &opts)?;
            Ok(single(sweep_text(sw.axis, &rows, format)))
        }
        Command::Simulate => {
            let mc = cfg.mc.as_ref().expect("checked").build(cfg.spec())?;
            let sol = replica_solver::solve(&mc.system_spec()?, &opts)?;
            let records = mc_sim::run_trials(&mc, &sol)?;
            let report = mc_sim::decoupling_report(&mc, &sol, &records);
            Ok(match format {
                Format::Json => single(json(&report)),
                Format::Csv => {
                    let hist = output.map(hist_path);
                    let mut files = vec![(output.map(Path::to_path_buf), stats_csv(&report))];
                    if let Some(h) = hist {
                        files.push((Some(h), hist_csv(&report)));
                    }
                    Outcome { files, success: true }
                }
            })
        }
        Command::Validate => {
            let ids: Vec<u8> = cfg.criteria.clone().unwrap_or_else(|| (1..=12).collect());
            let outcomes: Vec<validate::Outcome> = ids.into_iter().map(validate::run).collect();
            for o in &outcomes {
                println!("{}", o.line());
            }
            let success = outcomes.iter().all(|o| o.passed);
            let text = match format {
                Format::Json => json(&outcomes.iter().map(ValidateRow::from).collect::<Vec<_>>()),
                Format::Csv => {
                    let mut s = String::from("criterion,name,passed,detail\n");
                    for o in &outcomes {
                        let _ = writeln!(s, "{},{},{},{}", o.id, quote(o.name), o.passed as u8, quote(&o.detail));
                    }
                    s
                }
            };
            // Results go to stdout above; a file is written only on request.
            let files = output.map(|p| vec![(Some(p.to_path_buf()), text)]).unwrap_or_default();
            Ok(Outcome { files, success })
        }
    }
}

pub fn write_files(outcome: &Outcome) -> Result<(), RunError> {
    for (path, text) in &outcome.files {
        match path {
            Some(p) => fs::write(p, text).map_err(|e| RunError::Write {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes()).map_err(|e| RunError::Write {
                    path: "stdout".into(),
                    msg: e.to_string(),
                })?;
            }
        }
    }
    Ok(())
}

/// `<stem>_hist.csv` next to the statistics file.
pub fn hist_path(p: &Path) -> PathBuf {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("simulate");
    p.with_file_name(format!("{stem}_hist.csv"))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("results serialize");
    s.push('\n');
    s
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn method_name(m: SolveMethod) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

#[derive(Serialize)]
struct EfficiencyRecord<'a> {
    beta: f64,
    mean_snr_db: f64,
    #[serde(flatten)]
    solution: &'a FixedPointSolution,
}

fn efficiency_text(spec: &SystemSpec, sol: &FixedPointSolution, format: Format) -> String {
    let mean_snr_db = linear_to_db(spec.snr_profile.mean());
    match format {
        Format::Json => json(&EfficiencyRecord {
            beta: spec.beta,
            mean_snr_db,
            solution: sol,
        }),
        Format::Csv => format!(
            "beta,mean_snr_db,method,eta,xi,free_energy_nats,branches,iterations,residual\n{},{},{},{},{},{},{},{},{}\n",
            spec.beta,
            mean_snr_db,
            method_name(sol.method),
            sol.eta,
            opt(sol.xi),
            opt(sol.free_energy),
            sol.branches.len(),
            sol.iterations,
            sol.residual
        ),
    }
}

/// Spectral efficiencies in bits per dimension. `eta` belongs to the
/// configured detector; the joint terms use the individually-optimal one.
#[derive(Debug, Serialize)]
pub struct SpectralRecord {
    pub beta: f64,
    pub mean_snr_db: f64,
    pub eta: f64,
    pub eta_optimal: f64,
    pub c_sep_bits: f64,
    pub c_joint_bits: f64,
    pub joint_gain_bits: f64,
    /// `(snr_db, I(eta snr) in bits)` per atom at the detector's `eta`.
    pub per_atom_info_bits: Vec<(f64, f64)>,
}

pub fn spectral_record(spec: &SystemSpec, opts: &SolverOptions) -> Result<SpectralRecord, cdma_pme::Error> {
    let sol = replica_solver::solve(spec, opts)?;
    let own = spectral::spectral_at(spec, sol.eta, &opts.quad)?;
    let joint = spectral::c_joint(spec, opts)?;
    Ok(SpectralRecord {
        beta: spec.beta,
        mean_snr_db: linear_to_db(spec.snr_profile.mean()),
        eta: sol.eta,
        eta_optimal: joint.eta,
        c_sep_bits: own.c_sep,
        c_joint_bits: joint.c_joint,
        joint_gain_bits: joint.joint_gain,
        per_atom_info_bits: own.per_atom_info.iter().map(|&(s, i)| (linear_to_db(s), i)).collect(),
    })
}

fn spectral_text(r: &SpectralRecord, format: Format) -> String {
    match format {
        Format::Json => json(r),
        Format::Csv => format!(
            "beta,mean_snr_db,eta,eta_optimal,c_sep_bits,c_joint_bits,joint_gain_bits\n{},{},{},{},{},{},{}\n",
            r.beta, r.mean_snr_db, r.eta, r.eta_optimal, r.c_sep_bits, r.c_joint_bits, r.joint_gain_bits
        ),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: f64,
    pub branch: usize,
    pub eta: f64,
    pub xi: Option<f64>,
    pub free_energy_nats: Option<f64>,
    pub dominant: bool,
    pub c_sep_bits: f64,
    pub c_joint_bits: f64,
}

/// One row per branch per grid point. Points where the solver fails are
/// logged and skipped; the sweep fails only if every point does.
pub fn sweep_rows(spec: &SystemSpec, axis: SweepAxis, values: &[f64], opts: &SolverOptions) -> Result<Vec<SweepRow>, cdma_pme::Error> {
    let io = spec.detector.preset() == DetectorPreset::IndividuallyOptimal;
    let mut rows = vec![];
    let mut last_err = None;
    for (&v, sol) in values.iter().zip(replica_solver::sweep(spec, axis, values, opts)) {
        let sol = match sol {
            Ok(s) => s,
            Err(e) => {
                log::warn!("sweep point {v}: {e}");
                last_err = Some(e);
                continue;
            }
        };
        let point = replica_solver::sweep_point(spec, axis, v)?;
        let optimal_joint = if io { None } else { Some(spectral::c_joint(&point, opts)?.c_joint) };
        for (i, b) in sol.branches.iter().enumerate() {
            let c_joint_bits = match (b.c_joint_nats, optimal_joint) {
                (Some(n), _) if io => nats_to_bits(n),
                (_, Some(c)) => c,
                _ => spectral::spectral_at(&point, b.eta, &opts.quad)?.c_joint,
            };
            rows.push(SweepRow {
                axis: v,
                branch: i,
                eta: b.eta,
                xi: b.xi,
                free_energy_nats: b.free_energy,
                dominant: i == sol.dominant_index,
                c_sep_bits: spectral::c_sep_at(&point, b.eta, &opts.quad)?,
                c_joint_bits,
            });
        }
    }
    match (rows.is_empty(), last_err) {
        (true, Some(e)) => Err(e),
        _ => Ok(rows),
    }
}

fn sweep_text(axis: SweepAxis, rows: &[SweepRow], format: Format) -> String {
    match format {
        Format::Json => json(&rows),
        Format::Csv => {
            let name = match axis {
                SweepAxis::SnrDb => "snr_db",
                SweepAxis::Beta => "beta",
            };
            let mut s = format!("{name},branch,eta,xi,free_energy_nats,dominant,c_sep_bits,c_joint_bits\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    r.axis,
                    r.branch,
                    r.eta,
                    opt(r.xi),
                    opt(r.free_energy_nats),
                    r.dominant as u8,
                    r.c_sep_bits,
                    r.c_joint_bits
                );
            }
            s
        }
    }
}

const STATS_HEADER: &str = "snr_db,group,symbol_re,symbol_im,count,saturated,mean_re,mean_im,variance,predicted_variance,ks,excess_kurtosis,ber,predicted_ber,eta\n";

fn stats_line(s: &mut String, snr_db: f64, group: &str, st: &SampleStats, ber: f64, pber: Option<f64>, eta: f64) {
    let _ = writeln!(
        s,
        "{snr_db},{group},{},{},{},{},{},{},{},{},{},{},{ber},{},{eta}",
        st.symbol[0],
        st.symbol[1],
        st.count,
        st.saturated,
        st.mean[0],
        st.mean[1],
        st.variance,
        st.predicted_variance,
        st.ks,
        st.excess_kurtosis,
        opt(pber)
    );
}

/// Per atom: one `symbol` row per constellation point and one `residual`
/// row pooling `Z̃ - X`.
pub fn stats_csv(r: &DecouplingReport) -> String {
    let mut s = String::from(STATS_HEADER);
    for a in &r.atoms {
        for st in &a.per_symbol {
            stats_line(&mut s, a.snr_db, "symbol", st, a.ber, a.predicted_ber, r.eta);
        }
        stats_line(&mut s, a.snr_db, "residual", &a.residual, a.ber, a.predicted_ber, r.eta);
    }
    s
}

pub fn hist_csv(r: &DecouplingReport) -> String {
    let mut s = String::from("snr_db,group,symbol_re,symbol_im,bin_lo,bin_hi,count,density,predicted_density\n");
    for a in &r.atoms {
        let groups = a.per_symbol.iter().map(|st| ("symbol", st)).chain(std::iter::once(("residual", &a.residual)));
        for (g, st) in groups {
            let h = &st.histogram;
            for i in 0..h.counts.len() {
                let _ = writeln!(
                    s,
                    "{},{g},{},{},{},{},{},{},{}",
                    a.snr_db,
                    st.symbol[0],
                    st.symbol[1],
                    h.edges[i],
                    h.edges[i + 1],
                    h.counts[i],
                    h.density[i],
                    h.predicted_density[i]
                );
            }
        }
    }
    s
}

#[derive(Serialize)]
struct ValidateRow {
    criterion: u8,
    name: &'static str,
    passed: bool,
    detail: String,
}

impl From<&validate::Outcome> for ValidateRow {
    fn from(o: &validate::Outcome) -> Self {
        ValidateRow {
            criterion: o.id,
            name: o.name,
            passed: o.passed,
            detail: o.detail.clone(),
        }
    }
}
