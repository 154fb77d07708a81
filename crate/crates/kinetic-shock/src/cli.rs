//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::fixed_point::{verify_theorem, KineticProfile, ProfileDiagnostics};
use crate::ns_profile::{NsProfile, SlowModeData};
use crate::parallel::{map_indices, Execution};
use crate::pipeline::{
    build_model, cache_dir_from_env, converge_in_r, estimate_spread, linear_checks, load_tensor,
    localization_exponent, ns_profile, reduction_orders, residual_tolerance, run_epsilon, Backend,
    EpsilonRun, Model,
};
use crate::relaxation::validate;
use crate::tolerances::{EQUILIBRIUM_TOL_KINETIC, EQUILIBRIUM_TOL_SYNTHETIC};

#[derive(Debug, Parser)]
#[command(
    name = "kinetic-shock",
    version,
    about = "Small-amplitude kinetic shock profiles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Galerkin rank (basis size) of the Boltzmann backend.
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Velocity weight exponent.
    #[arg(long = "weight-s", global = true)]
    pub weight_s: Option<f64>,
    /// Run data-parallel loops sequentially.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural assumptions of the configured system.
    Validate,
    /// Dump the reduced flux, viscosity and slow field.
    CeReduce,
    /// Navier-Stokes profiles and their decay fits.
    NsProfile,
    /// Kinetic profiles and the scaling report.
    Solve,
    /// Amplitude sweep with linear-solver checks and order fits.
    Sweep,
    /// Consolidate the JSON outputs of a directory.
    Report {
        /// Directory to summarize; defaults to `--out`.
        dir: Option<PathBuf>,
    },
}

struct Context {
    config: RunConfig,
    out: PathBuf,
    exec: Execution,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut config = RunConfig::load(path)?;
        config.apply(&Overrides {
            out: cli.out.clone(),
            seed: cli.seed,
            rank: cli.rank,
            weight_s: cli.weight_s,
        })?;
        let exec = if cli.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        };
        let out = config.output.dir.clone();
        std::fs::create_dir_all(&out)?;
        Ok(Self { config, out, exec })
    }

    fn model(&self) -> Result<Model> {
        build_model(
            &self.config.backend()?,
            cache_dir_from_env().as_deref(),
            self.exec,
        )
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn eps_tag(e: f64) -> String {
    format!("eps{e}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Report { dir } => {
            let dir = dir
                .clone()
                .or_else(|| cli.out.clone())
                .ok_or_else(|| Error::Config("report needs a directory".into()))?;
            report(&dir)
        }
        Command::Validate => cmd_validate(&Context::new(cli)?),
        Command::CeReduce => cmd_ce_reduce(&Context::new(cli)?),
        Command::NsProfile => cmd_ns_profile(&Context::new(cli)?),
        Command::Solve => cmd_solve(&Context::new(cli)?),
        Command::Sweep => cmd_sweep(&Context::new(cli)?),
    }
}

fn cmd_validate(ctx: &Context) -> Result<()> {
    let model = ctx.model()?;
    let tol = if model.galerkin.is_some() {
        EQUILIBRIUM_TOL_KINETIC
    } else {
        EQUILIBRIUM_TOL_SYNTHETIC
    };
    let rep = validate(&model.reduced.system, tol)?;
    write_json(&ctx.path("validate.json"), &rep)?;
    if rep.all_passed() {
        Ok(())
    } else {
        Err(Error::Assumption(format!(
            "failed checks: {}",
            rep.failures().join(", ")
        )))
    }
}

fn cmd_ce_reduce(ctx: &Context) -> Result<()> {
    let model = ctx.model()?;
    let r = &model.reduced;
    let u0 = &r.u0;
    let dump = json!({
        "system": r.system.label,
        "n_macro": r.system.n_macro,
        "n_micro": r.system.n_micro(),
        "u0": vec_of(u0),
        "v_star": vec_of(&r.v_star(u0)?),
        "h_star": vec_of(&r.h_star(u0)?),
        "dh_star": rows(&r.dh_star(u0)?),
        "b_star": rows(&r.b_star(u0)?),
        "slow_field": r.slow_field()?,
    });
    write_json(&ctx.path("ce_reduce.json"), &dump)
}

fn write_ns_csv(path: &Path, p: &NsProfile) -> Result<()> {
    let n = p.u.first().map_or(0, |u| u.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string()];
    header.extend((0..n).map(|i| format!("u{i}")));
    header.extend((0..n).map(|i| format!("du{i}")));
    header.push("residual".into());
    w.write_record(&header)?;
    for i in 0..p.len() {
        let mut rec = vec![p.grid.x[i].to_string()];
        rec.extend(p.u[i].iter().map(|v| v.to_string()));
        rec.extend(p.du[i].iter().map(|v| v.to_string()));
        rec.push(p.residual[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ns_profile(ctx: &Context) -> Result<()> {
    let model = ctx.model()?;
    let settings = ctx.config.settings(ctx.exec);
    let eps = &ctx.config.shock.epsilons;
    let profiles = map_indices(ctx.exec, eps.len(), |i| {
        ns_profile(&model, eps[i], &settings.profile)
    });
    let mut reports = Vec::new();
    for p in profiles {
        let p = p?;
        write_ns_csv(
            &ctx.path(&format!("ns_profile_{}.csv", eps_tag(p.spec.epsilon))),
            &p,
        )?;
        let slow = SlowModeData::along(&model.reduced, &p, ctx.exec)?;
        reports.push(json!({ "profile": p.report(), "slow_mode": slow.report() }));
    }
    write_json(&ctx.path("ns_profile.json"), &reports)
}

fn write_profile_csv(path: &Path, model: &Model, kp: &KineticProfile) -> Result<()> {
    let n = model.reduced.system.n_macro;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string()];
    header.extend((0..n).map(|i| format!("u{i}")));
    header.extend(["micro_norm".to_string(), "residual".to_string()]);
    w.write_record(&header)?;
    for (i, f) in kp.profile.iter().enumerate() {
        let mut rec = vec![kp.grid.x[i].to_string()];
        rec.extend(f.rows(0, n).iter().map(|v| v.to_string()));
        rec.push(f.rows(n, f.len() - n).norm().to_string());
        rec.push(kp.residual[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Distribution at the profile centre on the plane `ξ₃ = 0`.
fn write_distribution_csv(path: &Path, model: &Model, kp: &KineticProfile) -> Result<()> {
    let Some(g) = &model.galerkin else {
        return Ok(());
    };
    let c = &kp.profile[kp.grid.center()];
    let (v0, t0) = (g.reference.velocity()[0], g.reference.temperature());
    let half = 4.0 * t0.sqrt();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["xi1", "xi2", "xi3", "value"])?;
    let k = 41;
    for a in 0..k {
        for b in 0..k {
            let xi = [
                v0 - half + 2.0 * half * a as f64 / (k - 1) as f64,
                -half + 2.0 * half * b as f64 / (k - 1) as f64,
                0.0,
            ];
            w.write_record([
                xi[0].to_string(),
                xi[1].to_string(),
                xi[2].to_string(),
                g.distribution(c, xi).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Localization {
    weight_s: f64,
    exponents: Vec<f64>,
    maxwellian_exponent: f64,
    bound_holds: bool,
}

fn localization(model: &Model, runs: &[EpsilonRun], s: f64) -> Result<Option<Localization>> {
    let Some(g) = &model.galerkin else {
        return Ok(None);
    };
    let exponents = runs
        .iter()
        .map(|r| localization_exponent(model, r))
        .collect::<Result<Vec<_>>>()?;
    let maxwellian_exponent = 0.5 / g.reference.temperature();
    let bound_holds = exponents.iter().all(|e| *e >= s * maxwellian_exponent);
    Ok(Some(Localization {
        weight_s: s,
        exponents,
        maxwellian_exponent,
        bound_holds,
    }))
}

fn solve_all(ctx: &Context, model: &Model) -> Result<Vec<EpsilonRun>> {
    let settings = ctx.config.settings(ctx.exec);
    let eps = &ctx.config.shock.epsilons;
    map_indices(ctx.exec, eps.len(), |i| {
        run_epsilon(model, eps[i], &settings)
    })
    .into_iter()
    .collect()
}

fn write_runs(ctx: &Context, model: &Model, runs: &[EpsilonRun]) -> Result<()> {
    for r in runs {
        let tag = eps_tag(r.epsilon);
        write_profile_csv(&ctx.path(&format!("profile_{tag}.csv")), model, &r.kinetic)?;
        write_distribution_csv(
            &ctx.path(&format!("distribution_{tag}.csv")),
            model,
            &r.kinetic,
        )?;
    }
    Ok(())
}

fn cmd_solve(ctx: &Context) -> Result<()> {
    let model = ctx.model()?;
    let runs = solve_all(ctx, &model)?;
    write_runs(ctx, &model, &runs)?;
    let per: Vec<ProfileDiagnostics> = runs.iter().map(|r| r.diagnostics.clone()).collect();
    let tol = residual_tolerance(&model);
    let theorem = verify_theorem(&per, tol);
    let loc = localization(&model, &runs, ctx.config.weights.s)?;
    write_json(
        &ctx.path("theorem.json"),
        &json!({ "system": model.label(), "residual_tolerance": tol, "theorem": theorem, "localization": loc }),
    )?;
    if theorem.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = theorem
            .checks
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(n, _)| n.as_str())
            .collect();
        Err(Error::Acceptance(format!(
            "theorem checks failed: {}",
            failed.join(", ")
        )))
    }
}

fn write_orders_csv(
    path: &Path,
    runs: &[EpsilonRun],
    linear: &[crate::pipeline::LinearChecks],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epsilon",
        "iterations",
        "macro_deviation",
        "attachment0",
        "attachment1",
        "corrector_norm",
        "first_iterate_norm",
        "decay_rate",
        "residual_v",
        "residual_v_uncorrected",
        "m_norm",
        "estimate_c_random",
        "estimate_c",
        "viscous_gap",
    ])?;
    for (r, l) in runs.iter().zip(linear) {
        let d = &r.diagnostics;
        let vals = [
            d.epsilon,
            d.iterations as f64,
            d.macro_deviation,
            d.attachment[0],
            d.attachment[1],
            d.corrector_norm,
            d.first_iterate_norm,
            d.decay_rate,
            d.residual_v,
            d.residual_v_uncorrected,
            d.m_norm,
            l.estimates.c_h2,
            l.estimates.c_h2_sup,
            l.viscous_gap,
        ];
        w.write_record(vals.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(ctx: &Context) -> Result<()> {
    let model = ctx.model()?;
    let settings = ctx.config.settings(ctx.exec);
    let runs = solve_all(ctx, &model)?;
    write_runs(ctx, &model, &runs)?;
    let linear = map_indices(ctx.exec, runs.len(), |i| {
        linear_checks(&model, &runs[i], &settings)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    for (r, l) in runs.iter().zip(&linear) {
        write_json(
            &ctx.path(&format!("sweep_{}.json", eps_tag(r.epsilon))),
            &json!({ "diagnostics": r.diagnostics, "linear": l }),
        )?;
    }
    write_orders_csv(&ctx.path("orders.csv"), &runs, &linear)?;
    let per: Vec<ProfileDiagnostics> = runs.iter().map(|r| r.diagnostics.clone()).collect();
    let theorem = verify_theorem(&per, residual_tolerance(&model));
    let convergence = match ctx.config.backend()? {
        Backend::Boltzmann {
            degree,
            rho,
            temperature,
        } if degree >= 5 => {
            let tensor = load_tensor(degree, cache_dir_from_env().as_deref(), ctx.exec)?;
            let degrees: Vec<usize> = (3..=degree).collect();
            let mid = ctx.config.shock.epsilons[ctx.config.shock.epsilons.len() / 2];
            let table = converge_in_r(
                &tensor,
                rho,
                temperature,
                &degrees,
                mid,
                &settings,
                ctx.exec,
            )?;
            let mut w = csv::Writer::from_path(ctx.path("galerkin_convergence.csv"))?;
            w.write_record([
                "degree",
                "rank",
                "next_rank",
                "difference",
                "macro_difference",
            ])?;
            for j in 0..table.differences.len() {
                w.write_record([
                    table.degrees[j].to_string(),
                    table.ranks[j].to_string(),
                    table.ranks[j + 1].to_string(),
                    table.differences[j].to_string(),
                    table.macro_differences[j].to_string(),
                ])?;
            }
            w.flush()?;
            Some(table)
        }
        _ => None,
    };
    let summary = json!({
        "system": model.label(),
        "reduction": reduction_orders(&runs),
        "theorem": theorem,
        "estimate_spread": estimate_spread(&linear),
        "localization": localization(&model, &runs, ctx.config.weights.s)?,
        "galerkin_convergence": convergence,
    });
    write_json(&ctx.path("summary.json"), &summary)?;
    if theorem.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = theorem
            .checks
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(n, _)| n.as_str())
            .collect();
        Err(Error::Acceptance(format!(
            "sweep checks failed: {}",
            failed.join(", ")
        )))
    }
}

/// Scalar leaves of a JSON value with dotted keys; long arrays are skipped.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        Value::Array(a) if a.len() <= 8 => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        Value::Array(_) | Value::Null => {}
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Write `report.md` and `report.csv` from the JSON files in `dir`.
pub fn report(dir: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no JSON outputs in {}",
            dir.display()
        )));
    }
    let mut md = String::from("# Run summary\n");
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record(["file", "key", "value"])?;
    for f in &files {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(f)?)?;
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut leaves = Vec::new();
        flatten("", &v, &mut leaves);
        md.push_str(&format!("\n## {name}\n\n| key | value |\n|---|---|\n"));
        for (k, x) in &leaves {
            md.push_str(&format!("| {k} | {x} |\n"));
            w.write_record([name.as_str(), k.as_str(), x.as_str()])?;
        }
    }
    w.flush()?;
    std::fs::write(dir.join("report.md"), md)?;
    Ok(())
}
