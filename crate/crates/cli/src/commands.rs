//! The four subcommands. Each returns the reports it produced or a [`CliError`]
//! carrying the exit code.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use svi_torus::io::{encode_snapshot, stats_csv};
use svi_torus::operators::OperatorSet;
use svi_torus::simulator::{ensemble_rows, initial_condition, run_ensemble};
use svi_torus::verify::{
    estimate_wdc_constant, rate_study, test_fields, verify_apriori_bound, verify_contraction, verify_energy_bound,
    verify_gradient_estimate, verify_potential_contraction, verify_svi_inequality, RateParameter, SviTest,
    VerifyReport,
};
use svi_torus::ConditionReport;

use crate::config::{ExperimentConfig, Resolved};
use crate::error::CliError;

/// Command-line overrides shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub force: bool,
    pub seed: Option<u64>,
}

/// A loaded configuration with overrides applied.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub out_dir: PathBuf,
    pub force: bool,
}

impl Experiment {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let mut config = ExperimentConfig::load(path)?;
        if let Some(seed) = ov.seed {
            config.solver.seed = seed;
        }
        let resolved = config.resolve()?;
        let out_dir = ov.out.clone().unwrap_or_else(|| PathBuf::from(&config.output.dir));
        Ok(Self {
            config,
            resolved,
            out_dir,
            force: ov.force,
        })
    }

    fn ops(&self) -> Result<OperatorSet, CliError> {
        Ok(OperatorSet::new(self.resolved.coeffs.clone())?)
    }

    /// Writes `bytes` to `name` inside the output directory via a temporary file and a rename.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.out_dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| CliError::Io(e.error))?;
        Ok(path)
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_resolved(&self) -> Result<PathBuf, CliError> {
        self.write("resolved.toml", self.config.to_toml().as_bytes())
    }
}

/// Conditions that must hold before a simulation runs.
const REQUIRED: [&str; 3] = ["E", "D", "R"];

/// Runs every checker; fails with exit 1 when (E), (D) or (R) fails.
pub fn check(exp: &Experiment) -> Result<Vec<ConditionReport>, CliError> {
    let c = &exp.resolved.coeffs;
    let mut reports = c.check_all();
    reports.push(c.check_killing());
    exp.write_json("check.json", &reports)?;
    exp.write_resolved()?;
    let mut table = String::new();
    for r in &reports {
        let required = if REQUIRED.contains(&r.condition.as_str()) {
            ""
        } else {
            "  (informational)"
        };
        let _ = writeln!(
            table,
            "{:<14} {}  residual {:>11.4e}  at ({:.4}, {:.4}) indices {:?}{required}",
            r.condition,
            if r.pass { "PASS" } else { "FAIL" },
            r.residual,
            r.location[0],
            r.location[1],
            r.indices
        );
    }
    print!("{table}");
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| REQUIRED.contains(&r.condition.as_str()) && !r.pass)
        .map(|r| r.condition.as_str())
        .collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::Failed(format!(
            "conditions failed: ({})",
            failed.join("), (")
        )))
    }
}

fn require_conditions(exp: &Experiment) -> Result<(), CliError> {
    let c = &exp.resolved.coeffs;
    let failed: Vec<String> = [c.check_e(), c.check_d(), c.check_r()]
        .into_iter()
        .filter(|r| !r.pass)
        .map(|r| format!("({})", r.condition))
        .collect();
    if failed.is_empty() {
        return Ok(());
    }
    if exp.force {
        eprintln!(
            "warning: conditions {} fail; continuing because of --force",
            failed.join(", ")
        );
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "conditions {} fail; rerun with --force to simulate anyway",
            failed.join(", ")
        )))
    }
}

/// Summary of one `simulate` run.
#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub rows: usize,
    pub final_norm_h2: f64,
    pub final_stderr_norm_h2: f64,
    pub wall_s: f64,
    pub files: Vec<PathBuf>,
}

/// Runs the ensemble and writes `stats.csv`, `resolved.toml` and optional snapshots.
pub fn simulate(exp: &Experiment) -> Result<SimulationSummary, CliError> {
    require_conditions(exp)?;
    let start = Instant::now();
    let ops = exp.ops()?;
    let cfg = &exp.config.solver;
    for w in cfg.warnings(&ops) {
        eprintln!("warning: {w}");
    }
    let trajs = run_ensemble(&exp.resolved.initial, cfg, &ops, &exp.resolved.potential)?;
    let rows = ensemble_rows(&trajs);
    let mut files = vec![
        exp.write("stats.csv", stats_csv(&rows).as_bytes())?,
        exp.write_resolved()?,
    ];
    if exp.config.output.snapshots {
        for (p, tr) in trajs.iter().enumerate() {
            for (t, field) in &tr.snapshots {
                files.push(exp.write(&format!("snapshot_p{p:04}_t{t:.6}.svit"), &encode_snapshot(field))?);
            }
        }
    }
    let last = rows.last().expect("at least the initial row");
    let summary = SimulationSummary {
        rows: rows.len(),
        final_norm_h2: last.norm_h2,
        final_stderr_norm_h2: last.stderr_norm_h2,
        wall_s: start.elapsed().as_secs_f64(),
        files,
    };
    println!(
        "simulated {} path(s), {} rows; final E|X|^2 = {:.6e} (stderr {:.2e}); {:.2} s",
        cfg.paths, summary.rows, summary.final_norm_h2, summary.final_stderr_norm_h2, summary.wall_s
    );
    Ok(summary)
}

/// Reports available to `verify`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inequality {
    Energy,
    Apriori,
    Contraction,
    Wdc,
    GradientEstimate,
    PotentialContraction,
    Svi,
}

impl Inequality {
    pub const ALL: [(&'static str, Inequality); 7] = [
        ("energy", Inequality::Energy),
        ("apriori", Inequality::Apriori),
        ("contraction", Inequality::Contraction),
        ("wdc", Inequality::Wdc),
        ("gradient-estimate", Inequality::GradientEstimate),
        ("potential-contraction", Inequality::PotentialContraction),
        ("svi", Inequality::Svi),
    ];

    pub fn from_name(name: &str) -> Result<Self, CliError> {
        Self::ALL
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, i)| *i)
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|(n, _)| *n).collect();
                CliError::Usage(format!(
                    "unknown inequality `{name}`; valid names: {}",
                    valid.join(", ")
                ))
            })
    }
}

fn measured_k(exp: &Experiment, ops: &OperatorSet) -> Result<f64, CliError> {
    if let Some(k) = exp.config.verify.k_hat {
        return Ok(k);
    }
    let v = &exp.config.verify;
    let fields = test_fields(ops.grid(), v.samples, v.test_seed);
    Ok(verify_gradient_estimate(ops, &fields, &v.gradient_times, v.substeps)?.k_hat)
}

fn measured_c(exp: &Experiment, ops: &OperatorSet) -> Result<f64, CliError> {
    if let Some(c) = exp.config.verify.c_hat {
        return Ok(c);
    }
    let v = &exp.config.verify;
    Ok(estimate_wdc_constant(ops, &v.betas, v.samples, v.test_seed)?.c_hat)
}

fn run_one(exp: &Experiment, ops: &OperatorSet, which: Inequality) -> Result<Vec<VerifyReport>, CliError> {
    let cfg = &exp.config.solver;
    let v = &exp.config.verify;
    let x = &exp.resolved.initial;
    let pot = &exp.resolved.potential;
    let report = match which {
        Inequality::Energy => verify_energy_bound(cfg, x, ops, pot)?,
        Inequality::Apriori => {
            let (k, c) = (measured_k(exp, ops)?, measured_c(exp, ops)?);
            verify_apriori_bound(cfg, x, ops, pot, Some(k), Some(c), v.apriori_exponent)?
        }
        Inequality::Contraction => {
            let dy = initial_condition(ops.grid(), &v.perturbation, exp.config.grid.initial_seed)?;
            let y = x.axpy(v.perturbation_scale, &dy)?;
            verify_contraction(cfg, x, &y, ops, pot)?
        }
        Inequality::Wdc => estimate_wdc_constant(ops, &v.betas, v.samples, v.test_seed)?.report,
        Inequality::GradientEstimate => {
            let fields = test_fields(ops.grid(), v.samples, v.test_seed);
            verify_gradient_estimate(ops, &fields, &v.gradient_times, v.substeps)?.report
        }
        Inequality::PotentialContraction => {
            let k = measured_k(exp, ops)?;
            verify_potential_contraction(ops, pot, v.contraction_delta, k, v.samples, v.test_seed)?
        }
        Inequality::Svi => {
            let test = match v.svi_test.as_str() {
                "zero" => SviTest::Zero,
                "heat" => SviTest::Heat {
                    z0: initial_condition(ops.grid(), &v.svi_z0, exp.config.grid.initial_seed)?,
                },
                _ => SviTest::SelfTest,
            };
            verify_svi_inequality(cfg, x, ops, pot, &test)?
        }
    };
    Ok(vec![report])
}

/// Runs the named reports (or the configured list) and writes `reports.json`.
pub fn verify(exp: &Experiment, names: &[String]) -> Result<Vec<VerifyReport>, CliError> {
    let names: Vec<String> = if names.is_empty() {
        exp.config.verify.inequalities.clone()
    } else {
        names.to_vec()
    };
    let which: Vec<Inequality> = names
        .iter()
        .map(|n| Inequality::from_name(n))
        .collect::<Result<_, _>>()?;
    let ops = exp.ops()?;
    let mut reports = Vec::new();
    for w in which {
        let r = run_one(exp, &ops, w)?;
        for rep in &r {
            println!("{rep}");
        }
        reports.extend(r);
    }
    exp.write_json("reports.json", &reports)?;
    exp.write_resolved()?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::Failed(format!("reports failed: {}", failed.join(", "))))
    }
}

/// Coupled rate study; the parameter and values default to the `verify` section.
pub fn rate(
    exp: &Experiment,
    parameter: Option<RateParameter>,
    values: &[f64],
) -> Result<svi_torus::verify::RateStudy, CliError> {
    let v = &exp.config.verify;
    let parameter = parameter.unwrap_or(v.rate_parameter);
    let values = if values.is_empty() {
        v.rate_values.clone()
    } else {
        values.to_vec()
    };
    let ops = exp.ops()?;
    let study = rate_study(
        &exp.config.solver,
        &exp.resolved.initial,
        &ops,
        &exp.resolved.potential,
        parameter,
        &values,
    )?;
    println!("{}", study.report);
    for ((s, e), se) in study.separations.iter().zip(&study.errors).zip(&study.stderrs) {
        println!("  separation {s:.4e}  sup_t E|dX|^2 {e:.4e}  stderr {se:.2e}");
    }
    for n in &study.report.notes {
        println!("  note: {n}");
    }
    exp.write_json("rate_study.json", &study)?;
    exp.write_resolved()?;
    if study.report.pass {
        Ok(study)
    } else {
        Err(CliError::Failed(format!(
            "slope {:?} below the threshold {}",
            study.slope,
            parameter.threshold()
        )))
    }
}
