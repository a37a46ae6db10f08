//! The four subcommands. Each resolves its configuration, computes a
//! `results` JSON value that depends only on that configuration, and emits
//! the report.

use std::collections::BTreeMap;
use std::time::Instant;

use gexpect::checks::{
    check_axioms, check_comparison, check_convexity_suite, check_domination,
    check_meanfield_comparison, check_structure, CheckConfig, PropertyReport, Verdict,
};
use gexpect::decompose::{default_m_schedule, penalize_decompose};
use gexpect::recover::{
    converse_compare, recover_generator, roundtrip_necessity, sample_G, verify_representation_on_r,
    GFunction, GOracle,
};
use gexpect::{
    cond_gexp_R, entropic_value, evaluate_terminal, invariant_representation, make_uniform_grid,
    simulate, solve_phi, Generator, MatrixZ, SolveOptions, StepProcess, TimeGrid,
};
use serde_json::{json, Value};

use crate::config::{self, CliError, CliResult, ResolvedConfig};
use crate::parsers;
use crate::{CheckArgs, Cli, Command, DecomposeArgs, RecoverArgs, SolveArgs};

pub enum Outcome {
    Clean,
    CheckFailed,
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let started = Instant::now();
    let cfg = resolve_config(cli)?;
    let (results, outcome) = match cfg.command.as_str() {
        "solve" => (cmd_solve(&cfg, cli)?, Outcome::Clean),
        "recover" => cmd_recover(&cfg, cli)?,
        "decompose" => (cmd_decompose(&cfg, cli)?, Outcome::Clean),
        "check" => cmd_check(&cfg, cli)?,
        other => return Err(CliError::usage(format!("unknown command '{other}'"))),
    };
    let mut timings = BTreeMap::new();
    timings.insert("total".to_string(), started.elapsed().as_secs_f64() * 1e3);
    config::emit_report(&cli.globals, &cfg, results, timings)?;
    Ok(outcome)
}

/// Collects each subcommand's explicitly passed flags into the params map
/// and layers them over defaults, config file, and embedded report config.
fn resolve_config(cli: &Cli) -> CliResult<ResolvedConfig> {
    let mut params: BTreeMap<String, String> = BTreeMap::new();
    let mut set = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            params.insert(key.to_string(), v);
        }
    };
    let default_tol = match &cli.command {
        Command::Solve(args) => {
            let SolveArgs {
                gen,
                terminal,
                t,
                entropic,
                phi,
                invariant,
            } = args;
            set("gen", gen.clone());
            set("terminal", terminal.clone());
            set("t", t.clone());
            set("entropic", entropic.clone());
            set("phi", phi.then(|| "true".into()));
            set("invariant", invariant.clone());
            1e-10
        }
        Command::Recover(args) => {
            let RecoverArgs {
                oracle,
                oracle2,
                zmax,
                z_per_axis,
                z_random,
                verify,
                samples,
                verify_tol,
                table_out,
            } = args;
            set("oracle", oracle.clone());
            set("oracle2", oracle2.clone());
            set("zmax", zmax.map(|v| v.to_string()));
            set("z-per-axis", z_per_axis.map(|v| v.to_string()));
            set("z-random", z_random.map(|v| v.to_string()));
            set("verify", verify.then(|| "true".into()));
            set("samples", samples.map(|v| v.to_string()));
            set("verify-tol", verify_tol.map(|v| v.to_string()));
            set(
                "table-out",
                table_out.as_ref().map(|p| p.display().to_string()),
            );
            1e-8
        }
        Command::Decompose(args) => {
            let DecomposeArgs {
                psi,
                gen,
                z,
                m_schedule,
            } = args;
            set("psi", psi.clone());
            set("gen", gen.clone());
            set("z", z.clone());
            set("m-schedule", m_schedule.clone());
            1e-6
        }
        Command::Check(args) => {
            let CheckArgs {
                suite,
                oracle,
                gen,
                gen2,
                negated,
                property,
                k,
                rho_scale,
                samples,
                z_radius,
                terminal,
                terminal2,
            } = args;
            set("suite", suite.clone());
            set("oracle", oracle.clone());
            set("gen", gen.clone());
            set("gen2", gen2.clone());
            set("negated", negated.then(|| "true".into()));
            set("property", property.clone());
            set("k", k.map(|v| v.to_string()));
            set("rho-scale", rho_scale.map(|v| v.to_string()));
            set("samples", samples.map(|v| v.to_string()));
            set("z-radius", z_radius.map(|v| v.to_string()));
            set("terminal", terminal.clone());
            set("terminal2", terminal2.clone());
            1e-10
        }
    };
    config::resolve(&cli.globals, cli.command.name(), default_tol, params)
}

fn say(cli: &Cli, line: impl AsRef<str>) {
    if !cli.globals.quiet {
        eprintln!("{}", line.as_ref());
    }
}

fn param_f64(cfg: &ResolvedConfig, key: &str, default: f64) -> CliResult<f64> {
    match cfg.param(key) {
        Some(v) => parsers::parse_f64(v, key),
        None => Ok(default),
    }
}

fn param_usize(cfg: &ResolvedConfig, key: &str, default: usize) -> CliResult<usize> {
    match cfg.param(key) {
        Some(v) => parsers::parse_usize(v, key),
        None => Ok(default),
    }
}

// ───────────────────────────────────────────────────────────────────────
//  solve
// ───────────────────────────────────────────────────────────────────────

fn cmd_solve(cfg: &ResolvedConfig, cli: &Cli) -> CliResult<Value> {
    let xi = parsers::parse_terminal(cfg.require_param("terminal")?, cfg.horizon)?;
    let gen = cfg.param("gen").map(parsers::parse_generator).transpose()?;
    let entropic_nu = cfg
        .param("entropic")
        .map(|spec| {
            let kv = parsers::parse_kv(spec, "--entropic")?;
            kv.get("nu")
                .map(|v| parsers::parse_f64(v, "--entropic nu"))
                .transpose()?
                .ok_or_else(|| CliError::usage("--entropic needs nu=…"))
        })
        .transpose()?;
    if gen.is_none() && entropic_nu.is_none() {
        return Err(CliError::usage("solve needs --gen, --entropic, or both"));
    }
    let ts = match cfg.param("t") {
        Some(spec) => parsers::parse_f64_list(spec, "--t")?,
        None => vec![0.0],
    };
    if ts.is_empty() {
        return Err(CliError::usage("--t: need at least one time"));
    }

    let mut results = json!({});

    if let Some(g) = &gen {
        if g.d() != xi.z().cols() {
            return Err(CliError::usage(format!(
                "driver has d={} but terminal has d={}",
                g.d(),
                xi.z().cols()
            )));
        }
        let mut values = Vec::new();
        for &t in &ts {
            let value = cond_gexp_R(g, &xi, t, cfg.tol)?;
            say(
                cli,
                format!(
                    "value at t={t}: {}{}",
                    value.deterministic()[0],
                    if value.stochastic().is_some() {
                        " + stochastic part"
                    } else {
                        ""
                    }
                ),
            );
            values.push(json!({
                "t": t,
                "deterministic": value.deterministic(),
                "stochastic": value.stochastic(),
            }));
        }
        results["values"] = Value::Array(values);

        if cfg.param_flag("phi") {
            let h = StepProcess::indicator(
                xi.z().clone(),
                xi.u().min(cfg.horizon),
                xi.v().min(cfg.horizon),
                cfg.horizon,
            )?;
            let grid = make_uniform_grid(cfg.horizon, cfg.grid_steps)?
                .with_breakpoints(&[xi.u().min(cfg.horizon), xi.v().min(cfg.horizon)])?;
            let opts = SolveOptions {
                tol: cfg.tol,
                ..SolveOptions::default()
            };
            let phi = solve_phi(g, xi.y(), &h, &grid, opts)?;
            say(cli, format!("phi solved, residual {:.3e}", phi.residual()));
            results["phi"] = serde_json::to_value(&phi)
                .map_err(|e| CliError::Numeric(format!("phi serialization: {e}")))?;
        }

        if let Some(widths) = cfg.param("invariant") {
            let eps = parsers::parse_f64_list(widths, "--invariant")?;
            let opts = SolveOptions {
                tol: cfg.tol,
                ..SolveOptions::default()
            };
            let inv = invariant_representation(g, ts[0], xi.y(), xi.z(), &eps, opts)?;
            say(
                cli,
                format!("invariant slope at t={}: {:?}", ts[0], inv.extrapolated),
            );
            results["invariant"] = serde_json::to_value(&inv)
                .map_err(|e| CliError::Numeric(format!("serialization: {e}")))?;
        }
    }

    if let Some(nu) = entropic_nu {
        let d = xi.z().cols();
        let grid = make_uniform_grid(cfg.horizon, cfg.grid_steps)?
            .with_breakpoints(&[xi.u().min(cfg.horizon), xi.v().min(cfg.horizon)])?;
        let batch = simulate(&grid, cfg.mc_samples, d, cfg.seed)?;
        let payoff = evaluate_terminal(&batch, &xi)?;
        let est = entropic_value(nu, None, &payoff)?;
        say(
            cli,
            format!("entropic value: {} ± {}", est.value, est.std_error),
        );
        results["entropic"] = serde_json::to_value(&est)
            .map_err(|e| CliError::Numeric(format!("serialization: {e}")))?;
    }

    Ok(results)
}

// ───────────────────────────────────────────────────────────────────────
//  recover
// ───────────────────────────────────────────────────────────────────────

enum OracleSource {
    Builtin(GOracle),
    Table(GFunction),
}

fn parse_oracle(spec: &str) -> CliResult<OracleSource> {
    match spec.split_once(':') {
        Some(("builtin", rest)) => {
            let gen = parsers::parse_generator(rest)?;
            Ok(OracleSource::Builtin(GOracle::new(gen)?))
        }
        Some(("csv", path)) => {
            let text = config::read_spec_file(path)?;
            Ok(OracleSource::Table(GFunction::from_csv_string(&text)?))
        }
        _ => Err(CliError::usage(format!(
            "--oracle: expected builtin:<driver> or csv:<file>, got '{spec}'"
        ))),
    }
}

fn cmd_recover(cfg: &ResolvedConfig, cli: &Cli) -> CliResult<(Value, Outcome)> {
    let source = parse_oracle(cfg.require_param("oracle")?)?;
    let zmax = param_f64(cfg, "zmax", 2.0)?;
    let per_axis = param_usize(cfg, "z-per-axis", 8)?;
    let z_random = param_usize(cfg, "z-random", 0)?;
    let samples = param_usize(cfg, "samples", 200)?;
    let verify_tol = param_f64(cfg, "verify-tol", 1e-6)?;

    let (gf, oracle) = match source {
        OracleSource::Builtin(oracle) => {
            let grid = make_uniform_grid(cfg.horizon, cfg.grid_steps)?;
            let d = oracle.generator().d();
            let z_set = gexpect::recover::make_z_set(1, d, zmax, per_axis, z_random, cfg.seed)?;
            let gf = sample_G(&oracle, &grid, &z_set)?;
            (gf, Some(oracle))
        }
        OracleSource::Table(gf) => (gf, None),
    };

    let table = recover_generator(&gf)?;
    let roundtrip = roundtrip_necessity(&gf, &table, cfg.tol)?;
    let rough: Vec<usize> = (0..table.z_set().len())
        .filter(|&j| table.is_rough(j))
        .collect();
    say(
        cli,
        format!(
            "recovered {}×{} table; roundtrip {}",
            table.grid().points().len(),
            table.z_set().len(),
            if roundtrip.pass { "PASS" } else { "FAIL" }
        ),
    );

    let mut failed = !roundtrip.pass;
    let mut results = json!({
        "table": {
            "t": table.grid().points(),
            "z_norms": table.z_set().iter().map(MatrixZ::norm).collect::<Vec<_>>(),
            "values": (0..table.grid().points().len()).map(|i| {
                (0..table.z_set().len()).map(|j| table.value(i, j).to_vec()).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
            "rough_columns": rough,
        },
        "roundtrip": roundtrip,
    });

    if let Ok(csv_text) = table.to_csv_string() {
        results["table_csv"] = Value::String(csv_text.clone());
        if let Some(path) = cfg.param("table-out") {
            std::fs::write(path, csv_text).map_err(|e| CliError::usage(format!("{path}: {e}")))?;
            say(cli, format!("table written to {path}"));
        }
    } else if cfg.param("table-out").is_some() {
        return Err(CliError::usage(
            "--table-out supports scalar one-dimensional tables only",
        ));
    }

    if cfg.param_flag("verify") {
        let oracle = oracle.as_ref().ok_or_else(|| {
            CliError::usage("--verify needs a live oracle; csv tables cannot be queried")
        })?;
        let verify = verify_representation_on_r(oracle, &table, samples, cfg.seed, verify_tol)?;
        say(
            cli,
            format!(
                "verification over {} terminals: {} (max gap {:.3e})",
                verify.samples,
                if verify.pass { "PASS" } else { "FAIL" },
                verify.max_gap
            ),
        );
        failed = failed || !verify.pass;
        results["verify"] = serde_json::to_value(&verify)
            .map_err(|e| CliError::Numeric(format!("serialization: {e}")))?;
    }

    if let Some(spec2) = cfg.param("oracle2") {
        let first = oracle.as_ref().ok_or_else(|| {
            CliError::usage("--oracle2 comparison needs builtin oracles on both sides")
        })?;
        let second = match parse_oracle(spec2)? {
            OracleSource::Builtin(o) => o,
            OracleSource::Table(_) => {
                return Err(CliError::usage(
                    "--oracle2 comparison needs builtin oracles on both sides",
                ))
            }
        };
        let grid = make_uniform_grid(cfg.horizon, cfg.grid_steps)?;
        let d = first.generator().d();
        let z_set = gexpect::recover::make_z_set(1, d, zmax, per_axis, z_random, cfg.seed)?;
        let compare = converse_compare(first, &second, &grid, &z_set, verify_tol)?;
        say(
            cli,
            format!(
                "driver order: {:?} (values agree: {})",
                compare.verdict, compare.values_agree
            ),
        );
        if !compare.values_agree {
            return Err(CliError::Numeric(
                "driver-level order contradicts value-level order".into(),
            ));
        }
        results["compare"] = serde_json::to_value(&compare)
            .map_err(|e| CliError::Numeric(format!("serialization: {e}")))?;
    }

    Ok((
        results,
        if failed {
            Outcome::CheckFailed
        } else {
            Outcome::Clean
        },
    ))
}

// ───────────────────────────────────────────────────────────────────────
//  decompose
// ───────────────────────────────────────────────────────────────────────

fn cmd_decompose(cfg: &ResolvedConfig, cli: &Cli) -> CliResult<Value> {
    let gen = match cfg.param("gen") {
        Some(spec) => parsers::parse_generator(spec)?,
        None => parsers::parse_generator("zero")?,
    };
    let z = match cfg.param("z") {
        Some(spec) => parsers::parse_z_row(spec, "--z")?,
        None => MatrixZ::zeros(1, gen.d()),
    };

    let psi_spec = cfg.require_param("psi")?;
    let (grid, psi): (TimeGrid, Vec<f64>) = match psi_spec.split_once(':') {
        Some(("drift", rest)) => {
            let kv = parsers::parse_kv(rest, "--psi drift")?;
            let c = kv
                .get("c")
                .map(|v| parsers::parse_f64(v, "--psi drift c"))
                .transpose()?
                .ok_or_else(|| CliError::usage("--psi drift needs c=…"))?;
            let grid = make_uniform_grid(cfg.horizon, cfg.grid_steps)?;
            let psi = grid.points().iter().map(|&t| -c * t).collect();
            (grid, psi)
        }
        Some(("kink", rest)) => {
            let kv = parsers::parse_kv(rest, "--psi kink")?;
            let get = |key: &str| -> CliResult<f64> {
                kv.get(key)
                    .map(|v| parsers::parse_f64(v, key))
                    .transpose()?
                    .ok_or_else(|| CliError::usage(format!("--psi kink needs {key}=…")))
            };
            let (c, at) = (get("c")?, get("at")?);
            // The kink lands on a node, so every cell sees a smooth ψ.
            let grid = make_uniform_grid(cfg.horizon, cfg.grid_steps)?
                .with_breakpoints(&[at.clamp(0.0, cfg.horizon)])?;
            let psi = grid
                .points()
                .iter()
                .map(|&t| -c * (t - at).max(0.0))
                .collect();
            (grid, psi)
        }
        Some(("csv", path)) => {
            let (ts, psi) = parsers::parse_psi_csv(&config::read_spec_file(path)?)?;
            (TimeGrid::from_points(ts)?, psi)
        }
        _ => {
            return Err(CliError::usage(format!(
                "--psi: expected drift:c=…, kink:c=…,at=…, or csv:<file>, got '{psi_spec}'"
            )))
        }
    };

    let schedule = match cfg.param("m-schedule") {
        Some(spec) => parsers::parse_f64_list(spec, "--m-schedule")?,
        None => default_m_schedule(),
    };
    let result = penalize_decompose(&gen, &psi, &z, &grid, &schedule, cfg.tol)?;
    let a = result.a();
    say(
        cli,
        format!(
            "a(T) = {}, {} penalties, final gap {:.3e}, reconstruction {:.3e}",
            a[a.len() - 1],
            result.gaps().len() + 1,
            result.final_gap(),
            result.reconstruction_error()
        ),
    );
    Ok(json!({
        "t": result.grid().points(),
        "a": a,
        "converged": result.converged(),
        "final_gap": result.final_gap(),
        "gaps": result.gaps(),
        "monotonicity_violations": result.monotonicity_violations(),
        "reconstruction_error": result.reconstruction_error(),
        "history": result.psi_m_history().iter().map(|p| json!({
            "m": p.m,
            "a_final": p.a_m[p.a_m.len() - 1],
        })).collect::<Vec<_>>(),
    }))
}

// ───────────────────────────────────────────────────────────────────────
//  check
// ───────────────────────────────────────────────────────────────────────

fn cmd_check(cfg: &ResolvedConfig, cli: &Cli) -> CliResult<(Value, Outcome)> {
    let suite = cfg.param("suite").unwrap_or("all");
    let known = [
        "axioms",
        "structure",
        "comparison",
        "convexity",
        "domination",
        "meanfield",
    ];
    if suite != "all" && !known.contains(&suite) {
        return Err(CliError::usage(format!(
            "--suite: unknown suite '{suite}' ({} | all)",
            known.join(" | ")
        )));
    }
    let run_all = suite == "all";
    let ck = CheckConfig {
        samples: param_usize(cfg, "samples", 200)?,
        seed: cfg.seed,
        tol: cfg.tol,
        horizon: cfg.horizon,
        z_radius: param_f64(cfg, "z-radius", 5.0)?,
        grid_steps: cfg.grid_steps,
    };

    let gen_spec = cfg.param("gen");
    let gen: Option<Generator> = gen_spec
        .map(|spec| {
            let g = parsers::parse_generator(spec)?;
            Ok::<_, CliError>(if cfg.param_flag("negated") {
                g.negated()
            } else {
                g
            })
        })
        .transpose()?;

    // Axioms and structure query an oracle; an explicit --oracle wins,
    // otherwise the audited driver is wrapped.
    let oracle: Option<GOracle> = match cfg.param("oracle") {
        Some(spec) => match parse_oracle(spec)? {
            OracleSource::Builtin(o) => Some(o),
            OracleSource::Table(_) => {
                return Err(CliError::usage(
                    "axiom audits need a live oracle; csv tables cannot be queried",
                ))
            }
        },
        None => match (&gen, run_all || suite == "axioms" || suite == "structure") {
            (Some(g), true) => GOracle::new(g.clone()).ok(),
            _ => None,
        },
    };

    let mut reports: Vec<PropertyReport> = Vec::new();
    let need = |suite_name: &str, what: &str| -> CliError {
        CliError::usage(format!("--suite {suite_name} needs {what}"))
    };

    if suite == "axioms" || (run_all && oracle.is_some()) {
        let o = oracle
            .as_ref()
            .ok_or_else(|| need("axioms", "--oracle or --gen"))?;
        reports.extend(check_axioms(o, &ck)?);
    }
    if suite == "structure" || (run_all && oracle.is_some()) {
        let o = oracle
            .as_ref()
            .ok_or_else(|| need("structure", "--oracle or --gen"))?;
        reports.extend(check_structure(o, &ck)?);
    }
    if suite == "comparison" || (run_all && gen.is_some() && cfg.param("gen2").is_some()) {
        let g = gen.as_ref().ok_or_else(|| need("comparison", "--gen"))?;
        let spec2 = cfg
            .param("gen2")
            .ok_or_else(|| need("comparison", "--gen2"))?;
        let f = parsers::parse_generator(spec2)?;
        reports.push(check_comparison(g, &f, &ck)?);
    }
    if suite == "convexity" || (run_all && gen.as_ref().is_some_and(|g| g.meta().zero_at_zero)) {
        let g = gen.as_ref().ok_or_else(|| need("convexity", "--gen"))?;
        let all = check_convexity_suite(g, &ck)?;
        match cfg.param("property") {
            None | Some("all") => reports.extend(all),
            Some(p) => {
                let filtered: Vec<_> = all.into_iter().filter(|r| r.property == p).collect();
                if filtered.is_empty() {
                    return Err(CliError::usage(format!(
                        "--property: unknown property '{p}' (concavity | superadditivity | \
                         positive-homogeneity | all)"
                    )));
                }
                reports.extend(filtered);
            }
        }
    }
    if suite == "domination" || (run_all && cfg.param("k").is_some()) {
        let g = gen.as_ref().ok_or_else(|| need("domination", "--gen"))?;
        let spec = gen_spec.ok_or_else(|| need("domination", "--gen"))?;
        let k = param_f64(cfg, "k", 1.0)?;
        let rho = parsers::natural_modulus(spec, param_f64(cfg, "rho-scale", 1.0)?)?;
        reports.push(check_domination(g, &rho, k, &ck)?);
    }
    if suite == "meanfield" || (run_all && cfg.param("terminal").is_some()) {
        let g = gen.as_ref().ok_or_else(|| need("meanfield", "--gen"))?;
        let xi = parsers::parse_terminal(
            cfg.param("terminal")
                .ok_or_else(|| need("meanfield", "--terminal"))?,
            cfg.horizon,
        )?;
        let eta = parsers::parse_terminal(
            cfg.param("terminal2")
                .ok_or_else(|| need("meanfield", "--terminal2"))?,
            cfg.horizon,
        )?;
        reports.push(check_meanfield_comparison(g, &xi, &eta, &ck)?);
    }

    if reports.is_empty() {
        return Err(CliError::usage(
            "no suite could run: pass --suite with the inputs it needs",
        ));
    }

    let mut failed = false;
    for r in &reports {
        let line = match r.verdict {
            Verdict::Pass => format!("PASS {} ({} samples)", r.property, r.samples),
            Verdict::Fail => {
                failed = true;
                format!(
                    "FAIL {} ({} samples, {} violations)",
                    r.property, r.samples, r.violations
                )
            }
            Verdict::Skipped => format!(
                "SKIP {} — {}",
                r.property,
                r.note.as_deref().unwrap_or("not decidable")
            ),
        };
        say(cli, line);
    }

    let results = json!({
        "suite": suite,
        "reports": reports,
    });
    Ok((
        results,
        if failed {
            Outcome::CheckFailed
        } else {
            Outcome::Clean
        },
    ))
}
