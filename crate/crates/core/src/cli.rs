//! The `nhk` command-line front end.
//!
//! Exit codes: 0 pass, 1 verdict fail, 2 configuration error, 3 singularity,
//! 4 incompatibility, 5 integration singularity.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::brackets::{max_jacobiator, NonholonomicBracket, TransformedBracket};
use crate::condvar::{
    build_variational, configuration_state, configuration_velocities, constraint_conservation, velocities_from_quasi,
    AlmostElFlow, ConfigurationFlow,
};
use crate::dynamics::{compare, energy_monitor, integrate, state_names, HamiltonizedFlow, LdaFlow, StateMap, Trajectory};
use crate::expr::parse_with_vars;
use crate::geometry::Geometry;
use crate::hamiltonize::{
    check, divergence_sampled, fit_ansatz, measure_density, phase_box, solve_2dof, ChaplyginLike, SampleOptions,
    Solve2DofOptions, DEFAULT_TOL,
};
use crate::multiplier::{Multiplier, MultiplierCandidate};
use crate::routh::{detect_cyclic, reduce, reduced_hamiltonize, Pb2Bracket, Pb2Flow, ReducedFlow, ReducedSystem};
use crate::sampling::{SampleBox, DEFAULT_SAMPLES, DEFAULT_SEED};
use crate::system::{Kind, SystemDef};
use crate::systems::{self, RegistryEntry};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "nhk", version, about = "Chaplygin Hamiltonization of nonholonomic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// List the builtin systems.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Sample the Hamiltonization conditions for a multiplier.
    Check(RunArgs),
    /// Solve for the multiplier of a two-dimensional Chaplygin system.
    Solve2dof(RunArgs),
    /// Fit a log-linear multiplier ansatz.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Basis terms of log f; repeat the flag or separate with ';'.
        #[arg(long, required = true, value_delimiter = ';')]
        basis: Vec<String>,
    },
    /// Detect cyclic variables and Hamiltonize the reduced system.
    Reduce(RunArgs),
    /// Integrate one flow and write its trajectory.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = FlowKind::Lda)]
        flow: FlowKind,
    },
    /// Compare the nonholonomic and Hamiltonized flows.
    Compare(RunArgs),
    /// Invariant measure density and its divergence test.
    Measure(RunArgs),
    /// Jacobiators of the nonholonomic and Hamiltonized brackets.
    Jacobi(RunArgs),
    /// Variational Lagrangian and its almost Euler-Lagrange flow.
    Condvar(RunArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlowKind {
    Lda,
    Hamiltonized,
    Condvar,
}

/// Options shared by the system subcommands.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Registry name or path to a TOML system definition.
    pub system: String,
    /// Multiplier expression, or `auto`.
    #[arg(long, default_value = "auto")]
    pub f: String,
    /// Conserved cyclic momenta, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Final time.
    #[arg(long, default_value_t = 10.0)]
    pub t: f64,
    /// Integration step.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub ic: Vec<f64>,
    /// Output file (or directory for `compare`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the full JSON report.
    #[arg(long)]
    pub json: bool,
    /// Work on the reduced system of the cyclic variables.
    #[arg(long)]
    pub reduce: bool,
}

impl RunArgs {
    fn opts(&self, default_tol: f64) -> SampleOptions {
        SampleOptions {
            samples: self.samples,
            seed: self.seed,
            tol: self.tol.unwrap_or(default_tol),
        }
    }
}

/// Outcome of a subcommand: a JSON report, its exit code and files to write.
struct Outcome {
    report: Value,
    code: i32,
    files: Vec<(PathBuf, Vec<u8>)>,
    /// Printed to stderr after the report, for partial results.
    warning: Option<String>,
}

impl Outcome {
    fn new(report: Value, pass: bool) -> Outcome {
        Outcome {
            report,
            code: if pass { 0 } else { 1 },
            files: Vec::new(),
            warning: None,
        }
    }
}

/// Runs the CLI on `args`, writing to `out` and `err`; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let json_out = match &cli.command {
        Command::List { json } => *json,
        Command::Fit { run, .. } | Command::Simulate { run, .. } => run.json,
        Command::Check(r)
        | Command::Solve2dof(r)
        | Command::Reduce(r)
        | Command::Compare(r)
        | Command::Measure(r)
        | Command::Jacobi(r)
        | Command::Condvar(r) => r.json,
    };
    match dispatch(&cli.command) {
        Ok(outcome) => {
            for (path, bytes) in &outcome.files {
                if let Err(e) = write_atomic(path, bytes) {
                    let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
                    return 2;
                }
            }
            let text = if json_out {
                serde_json::to_string_pretty(&outcome.report).expect("reports serialize") + "\n"
            } else {
                render(&outcome.report)
            };
            let _ = out.write_all(text.as_bytes());
            if let Some(w) = &outcome.warning {
                let _ = writeln!(err, "error: {w}");
            }
            outcome.code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// One `key: value` line per top-level field.
fn render(v: &Value) -> String {
    match v {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}: {s}\n"),
                other => format!("{k}: {other}\n"),
            })
            .collect(),
        Value::Array(items) => items.iter().map(render).collect(),
        Value::String(s) => format!("{s}\n"),
        other => format!("{other}\n"),
    }
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::List { .. } => cmd_list(),
        Command::Check(r) => cmd_check(r),
        Command::Solve2dof(r) => cmd_solve2dof(r),
        Command::Fit { run, basis } => cmd_fit(run, basis),
        Command::Reduce(r) => cmd_reduce(r),
        Command::Simulate { run, flow } => cmd_simulate(run, *flow),
        Command::Compare(r) => cmd_compare(r),
        Command::Measure(r) => cmd_measure(r),
        Command::Jacobi(r) => cmd_jacobi(r),
        Command::Condvar(r) => cmd_condvar(r),
    }
}

/// A loaded system with its registry entry when it came from the registry.
struct Loaded {
    def: SystemDef,
    entry: Option<RegistryEntry>,
    geom: Arc<Geometry>,
}

fn load(src: &str) -> Result<Loaded> {
    let path = Path::new(src);
    let (def, entry) = if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {src}: {e}")))?;
        (SystemDef::from_toml(&text)?, None)
    } else {
        let e = systems::get(src)?;
        (e.def.clone(), Some(e))
    };
    let geom = Arc::new(Geometry::new(&def)?);
    Ok(Loaded { def, entry, geom })
}

/// A multiplier with its printable form.
struct Resolved {
    f: Arc<dyn Multiplier>,
    label: String,
    expr: Option<crate::expr::Expr>,
    source: &'static str,
}

fn from_candidate(c: MultiplierCandidate, source: &'static str) -> Resolved {
    Resolved {
        label: c.expr.to_string(),
        expr: Some(c.expr.clone()),
        f: Arc::new(c),
        source,
    }
}

fn resolve_full(l: &Loaded, text: &str) -> Result<Resolved> {
    if text != "auto" {
        return Ok(from_candidate(MultiplierCandidate::parse(text, &l.def)?, "user"));
    }
    if let Some(e) = l.entry.as_ref().and_then(|e| e.multiplier.as_ref()) {
        return Ok(from_candidate(MultiplierCandidate::for_system(e, &l.def)?, "registry"));
    }
    if l.def.kind == Kind::Chaplygin && l.def.m() == 2 {
        let sol = solve_2dof(l.geom.clone(), Solve2DofOptions::default())?;
        return Ok(match sol.candidate {
            Some(c) => from_candidate(c, "solve2dof"),
            None => Resolved {
                f: sol.quadrature.clone(),
                label: "quadrature".into(),
                expr: None,
                source: "solve2dof",
            },
        });
    }
    let hint = if l.entry.as_ref().is_some_and(|e| e.reduction.is_some()) {
        "; this system Hamiltonizes after reduction, try --reduce"
    } else {
        ""
    };
    Err(Error::Config(format!(
        "no known multiplier for {} and solve2dof does not apply; pass --f{hint}",
        l.def.name
    )))
}

fn reduced(l: &Loaded, lambda: &[f64]) -> Result<ReducedSystem> {
    let split = detect_cyclic(&l.geom)?;
    let lam: Vec<f64> = if lambda.is_empty() {
        l.entry
            .as_ref()
            .and_then(|e| e.reduction.as_ref())
            .map(|r| r.lambda.clone())
            .ok_or_else(|| Error::Config("pass --lambda for the cyclic momenta".into()))?
    } else {
        lambda.to_vec()
    };
    reduce(l.geom.clone(), split, &lam)
}

fn resolve_reduced(l: &Loaded, rs: &ReducedSystem, text: &str) -> Result<Resolved> {
    let names = rs.shape_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let build = |e: &crate::expr::Expr| MultiplierCandidate::with_coords(l.def.bind_parameters(e), &refs, refs.len());
    if text != "auto" {
        let mut vars = refs.clone();
        vars.extend(l.def.parameters.keys().map(String::as_str));
        return Ok(from_candidate(build(&parse_with_vars(text, &vars)?)?, "user"));
    }
    let known = l.entry.as_ref().and_then(|e| e.reduction.as_ref());
    if let Some(e) = known.and_then(|r| r.multiplier.as_ref()) {
        return Ok(from_candidate(build(e)?, "registry"));
    }
    let rc: Arc<dyn ChaplyginLike> = Arc::new(rs.clone());
    let sol = solve_2dof(rc, Solve2DofOptions::default())?;
    if let Some(c) = sol.candidate {
        return Ok(from_candidate(c, "solve2dof"));
    }
    let mut quad = Arc::try_unwrap(sol.quadrature).map_err(|_| Error::Config("multiplier is shared".into()))?;
    if let Some(d) = known.and_then(|r| r.reference_density.as_ref()) {
        let dens = build(d)?;
        let base = quad.base();
        quad.normalize_at(&base, dens.value(&base)?)?;
    }
    Ok(Resolved {
        f: Arc::new(quad),
        label: "quadrature".into(),
        expr: None,
        source: "solve2dof",
    })
}

fn cmd_list() -> Result<Outcome> {
    let items: Vec<Value> = systems::all()
        .iter()
        .map(|e| {
            json!({
                "name": e.name,
                "kind": format!("{:?}", e.def.kind).to_lowercase(),
                "m": e.def.m(),
                "k": e.def.k(),
                "s": e.def.s,
                "multiplier": e.multiplier.as_ref().map(|m| m.to_string()),
            })
        })
        .collect();
    Ok(Outcome::new(Value::Array(items), true))
}

fn report_value(r: &crate::report::ResidualReport) -> Value {
    serde_json::to_value(r).expect("reports serialize")
}

fn cmd_check(a: &RunArgs) -> Result<Outcome> {
    let l = load(&a.system)?;
    if a.reduce {
        let rs = reduced(&l, &a.lambda)?;
        let f = resolve_reduced(&l, &rs, &a.f)?;
        let h = reduced_hamiltonize(&rs, f.f.as_ref(), a.opts(DEFAULT_TOL))?;
        let mut v = report_value(&h.report);
        v["system"] = json!(l.def.name);
        v["multiplier"] = json!(f.label);
        v["lambda"] = json!(rs.lambda);
        return Ok(with_out(Outcome::new(v, h.report.passed()), a));
    }
    let f = resolve_full(&l, &a.f)?;
    let report = check(&l.geom, f.f.as_ref(), a.opts(DEFAULT_TOL))?;
    let mut v = report_value(&report);
    v["system"] = json!(l.def.name);
    v["multiplier"] = json!(f.label);
    Ok(with_out(Outcome::new(v, report.passed()), a))
}

fn with_out(mut o: Outcome, a: &RunArgs) -> Outcome {
    if let Some(p) = &a.out {
        let bytes = serde_json::to_string_pretty(&o.report).expect("reports serialize") + "\n";
        o.files.push((p.clone(), bytes.into_bytes()));
    }
    o
}

fn tabulate(sys: &dyn ChaplyginLike, f: &dyn Multiplier) -> Result<Value> {
    let bx = sys.shape_box();
    let mut rows = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            let r = [
                bx.lo[0] + (bx.hi[0] - bx.lo[0]) * (i as f64 + 0.5) / 5.0,
                bx.lo[1] + (bx.hi[1] - bx.lo[1]) * (j as f64 + 0.5) / 5.0,
            ];
            rows.push(json!([r[0], r[1], f.value(&sys.point(&r))?]));
        }
    }
    Ok(Value::Array(rows))
}

fn cmd_solve2dof(a: &RunArgs) -> Result<Outcome> {
    let l = load(&a.system)?;
    let sys: Arc<dyn ChaplyginLike> = if a.reduce {
        Arc::new(reduced(&l, &a.lambda)?)
    } else {
        l.geom.clone()
    };
    let sol = solve_2dof(sys.clone(), Solve2DofOptions::default())?;
    let mut v = json!({
        "system": l.def.name,
        "reduced": a.reduce,
        "shape": sys.shape_names(),
        "compatibility_defect": sol.compatibility,
        "path_defect": sol.path_defect,
    });
    match &sol.symbolic {
        Some(s) => {
            v["f_proportional_to"] = json!(s.to_string());
            v["measure_proportional_to"] = json!(measure_density(s, 2).to_string());
        }
        None => {
            v["f_proportional_to"] = json!("tabulated");
            v["table"] = tabulate(sys.as_ref(), sol.quadrature.as_ref())?;
        }
    }
    Ok(with_out(Outcome::new(v, true), a))
}

fn cmd_fit(a: &RunArgs, basis: &[String]) -> Result<Outcome> {
    let l = load(&a.system)?;
    let sys: Arc<dyn ChaplyginLike> = if a.reduce {
        Arc::new(reduced(&l, &a.lambda)?)
    } else {
        l.geom.clone()
    };
    let names = sys.shape_names();
    let mut vars: Vec<&str> = names.iter().map(String::as_str).collect();
    vars.extend(l.def.parameters.keys().map(String::as_str));
    let exprs = basis
        .iter()
        .filter(|b| !b.trim().is_empty())
        .map(|b| parse_with_vars(b, &vars))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_ansatz(sys.as_ref(), &exprs, a.opts(DEFAULT_TOL))?;
    let v = json!({
        "system": l.def.name,
        "basis": exprs.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
        "coefficients": fit.coefficients,
        "multiplier": fit.multiplier.expr.to_string(),
        "report": report_value(&fit.report),
        "verdict": fit.report.verdict,
    });
    Ok(with_out(Outcome::new(v, fit.report.passed()), a))
}

fn cmd_reduce(a: &RunArgs) -> Result<Outcome> {
    let l = load(&a.system)?;
    let rs = reduced(&l, &a.lambda)?;
    let f = resolve_reduced(&l, &rs, &a.f)?;
    let h = reduced_hamiltonize(&rs, f.f.as_ref(), a.opts(DEFAULT_TOL))?;
    let bracket = Pb2Bracket {
        rsys: &rs,
        f: f.f.as_ref(),
    };
    let mut terms = Vec::new();
    for w in rs.shape_box().halton(5, a.seed) {
        let t = bracket.table(&w)?;
        terms.push(json!({"w": w, "pb2": t.pp_shape[(0, rs.dim() - 1)]}));
    }
    let pass = h.report.passed() && h.jacobiator <= 1e-9;
    let v = json!({
        "system": l.def.name,
        "cyclic": rs.split.names,
        "excluded": rs.split.excluded,
        "strict": rs.split.strict,
        "kept": rs.shape_names(),
        "lambda": rs.lambda,
        "multiplier": f.label,
        "multiplier_source": f.source,
        "report": report_value(&h.report),
        "jacobiator": h.jacobiator,
        "pb2_samples": terms,
        "verdict": if pass { "pass" } else { "fail" },
    });
    Ok(with_out(Outcome::new(v, pass), a))
}

fn default_state(bx: &SampleBox, seed: u64) -> Vec<f64> {
    bx.halton(1, seed).remove(0)
}

fn initial(a: &RunArgs, bx: &SampleBox) -> Result<Vec<f64>> {
    if a.ic.is_empty() {
        return Ok(default_state(bx, a.seed));
    }
    if a.ic.len() != bx.dim() {
        return Err(Error::Config(format!("--ic needs {} values, got {}", bx.dim(), a.ic.len())));
    }
    Ok(a.ic.clone())
}

fn csv(traj: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn cmd_simulate(a: &RunArgs, flow: FlowKind) -> Result<Outcome> {
    let l = load(&a.system)?;
    let g = l.geom.as_ref();
    let (traj, extra) = match (flow, a.reduce) {
        (FlowKind::Lda, false) => {
            let x0 = initial(a, &phase_box(g))?;
            let f = LdaFlow::new(g);
            let tr = integrate(&f, state_names(g, "p"), &x0, 0.0, a.t, a.dt, None)?;
            let drift = energy_monitor(&tr, &|x| f.energy(x))?;
            (tr, json!({"energy_drift": drift}))
        }
        (FlowKind::Hamiltonized, false) => {
            let f = resolve_full(&l, &a.f)?;
            let hf = HamiltonizedFlow::new(g, f.f.as_ref())?;
            let x0 = hf.from_original(&initial(a, &phase_box(g))?)?;
            let m = g.m();
            let rate = |x: &[f64]| f.f.value(&g.point(&x[..m], &hf.group));
            let tr = integrate(&hf, state_names(g, "P"), &x0, 0.0, a.t, a.dt, Some(&rate))?;
            (tr.clone(), json!({"multiplier": f.label, "tau_monotone": tr.tau_monotone()}))
        }
        (FlowKind::Lda, true) => {
            let rs = reduced(&l, &a.lambda)?;
            let bx = rs.shape_box().join(&SampleBox::new(&vec![(-1.0, 1.0); rs.dim()]));
            let x0 = initial(a, &bx)?;
            let tr = integrate(&ReducedFlow { rsys: &rs }, rs.state_names(), &x0, 0.0, a.t, a.dt, None)?;
            let drift = energy_monitor(&tr, &|x| rs.energy(x))?;
            (tr, json!({"energy_drift": drift, "lambda": rs.lambda}))
        }
        (FlowKind::Hamiltonized, true) => {
            let rs = reduced(&l, &a.lambda)?;
            let f = resolve_reduced(&l, &rs, &a.f)?;
            let bx = rs.shape_box().join(&SampleBox::new(&vec![(-1.0, 1.0); rs.dim()]));
            let x0 = initial(a, &bx)?;
            let d = rs.dim();
            let fv = f.f.value(&x0[..d])?;
            let big: Vec<f64> = x0.iter().enumerate().map(|(i, v)| if i < d { *v } else { fv * v }).collect();
            let flow = Pb2Flow {
                bracket: Pb2Bracket {
                    rsys: &rs,
                    f: f.f.as_ref(),
                },
            };
            let rate = |x: &[f64]| f.f.value(&x[..d]);
            let names = rs.state_names().iter().map(|n| n.replacen("p_", "P_", 1)).collect();
            let tr = integrate(&flow, names, &big, 0.0, a.t, a.dt, Some(&rate))?;
            (tr.clone(), json!({"multiplier": f.label, "tau_monotone": tr.tau_monotone()}))
        }
        (FlowKind::Condvar, _) => {
            let f = resolve_full(&l, &a.f)?;
            let expr = f.expr.ok_or_else(|| Error::Config("condvar needs a closed-form multiplier".into()))?;
            let cand = MultiplierCandidate::for_system(&expr, &l.def)?;
            let lv = build_variational(&l.def, &cand)?;
            let n = lv.n();
            let bx = crate::hamiltonize::config_box(&l.def).join(&SampleBox::new(&vec![(-1.0, 1.0); n]));
            let (x0, moved) = lv.project(&initial(a, &bx)?)?;
            let tr = integrate(&AlmostElFlow { lv: &lv }, lv.state_names(), &x0, 0.0, a.t, a.dt, None)?;
            let drift = constraint_conservation(&lv, &tr)?;
            (tr, json!({"projection_residual": moved, "constraint_drift": drift}))
        }
    };
    let truncated = traj.meta.truncated.clone();
    let mut v = json!({
        "system": l.def.name,
        "flow": format!("{flow:?}").to_lowercase(),
        "reduced": a.reduce,
        "samples": traj.len(),
        "seed": a.seed,
        "t": a.t,
        "dt": traj.meta.step,
        "final_state": traj.last(),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    let mut o = Outcome::new(v, true);
    if let Some(p) = &a.out {
        o.files.push((p.clone(), csv(&traj)));
    }
    if let Some((t, msg)) = truncated {
        let e = Error::Integration { t, msg };
        o.report["truncated_at"] = json!(t);
        o.code = e.exit_code();
        o.warning = Some(e.to_string());
    }
    Ok(o)
}

fn cmd_compare(a: &RunArgs) -> Result<Outcome> {
    let l = load(&a.system)?;
    let g = l.geom.as_ref();
    let tol = a.tol.unwrap_or(1e-6);
    let (lda, hz, dev, drift, label) = if a.reduce {
        let rs = reduced(&l, &a.lambda)?;
        let f = resolve_reduced(&l, &rs, &a.f)?;
        let d = rs.dim();
        let bx = rs.shape_box().join(&SampleBox::new(&vec![(-1.0, 1.0); d]));
        let x0 = initial(a, &bx)?;
        let lda = integrate(&ReducedFlow { rsys: &rs }, rs.state_names(), &x0, 0.0, a.t, a.dt, None)?.ensure_complete()?;
        let fv = f.f.value(&x0[..d])?;
        let big: Vec<f64> = x0.iter().enumerate().map(|(i, v)| if i < d { *v } else { fv * v }).collect();
        let flow = Pb2Flow {
            bracket: Pb2Bracket {
                rsys: &rs,
                f: f.f.as_ref(),
            },
        };
        let rate = |x: &[f64]| f.f.value(&x[..d]);
        let hz = integrate(&flow, rs.state_names(), &big, 0.0, a.t, a.dt, Some(&rate))?.ensure_complete()?;
        let map = StateMap::MomentaScaleByF {
            f: f.f.as_ref(),
            m: d,
            group: vec![],
        };
        let dev = compare(&lda, &hz, &map)?;
        let drift = energy_monitor(&lda, &|x| rs.energy(x))?;
        (lda, hz, dev, drift, f.label)
    } else {
        let f = resolve_full(&l, &a.f)?;
        let x0 = initial(a, &phase_box(g))?;
        let lf = LdaFlow::new(g);
        let lda = integrate(&lf, state_names(g, "p"), &x0, 0.0, a.t, a.dt, None)?.ensure_complete()?;
        let hf = HamiltonizedFlow::new(g, f.f.as_ref())?;
        let m = g.m();
        let rate = |x: &[f64]| f.f.value(&g.point(&x[..m], &hf.group));
        let hz = integrate(&hf, state_names(g, "P"), &hf.from_original(&x0)?, 0.0, a.t, a.dt, Some(&rate))?
            .ensure_complete()?;
        let map = StateMap::MomentaScaleByF {
            f: f.f.as_ref(),
            m,
            group: hf.group.clone(),
        };
        let dev = compare(&lda, &hz, &map)?;
        let drift = energy_monitor(&lda, &|x| lf.energy(x))?;
        (lda, hz, dev, drift, f.label)
    };
    let pass = dev <= tol;
    let v = json!({
        "system": l.def.name,
        "multiplier": label,
        "reduced": a.reduce,
        "max_deviation": dev,
        "energy_drift": drift,
        "tau_monotone": hz.tau_monotone(),
        "samples": lda.len(),
        "seed": a.seed,
        "t": a.t,
        "dt": lda.meta.step,
        "tol": tol,
        "verdict": if pass { "pass" } else { "fail" },
    });
    let mut o = Outcome::new(v, pass);
    if let Some(dir) = &a.out {
        o.files.push((dir.join("lda.csv"), csv(&lda)));
        o.files.push((dir.join("hamiltonized.csv"), csv(&hz)));
        let bytes = serde_json::to_string_pretty(&o.report).expect("reports serialize") + "\n";
        o.files.push((dir.join("report.json"), bytes.into_bytes()));
    }
    Ok(o)
}

fn cmd_measure(a: &RunArgs) -> Result<Outcome> {
    let l = load(&a.system)?;
    let f = resolve_full(&l, &a.f)?;
    let m = l.def.m();
    let density: Arc<dyn Multiplier> = match (&f.expr, m) {
        (Some(e), _) => Arc::new(MultiplierCandidate::for_system(&measure_density(e, m), &l.def)?),
        (None, 0..=2) => f.f.clone(),
        (None, _) => return Err(Error::Config("tabulated multipliers are limited to two shape dimensions".into())),
    };
    let label = f.expr.as_ref().map(|e| measure_density(e, m).to_string()).unwrap_or_else(|| f.label.clone());
    let report = divergence_sampled(&l.geom, density.as_ref(), a.opts(1e-6))?;
    let mut v = report_value(&report);
    v["system"] = json!(l.def.name);
    v["density"] = json!(label);
    Ok(with_out(Outcome::new(v, report.passed()), a))
}

fn cmd_jacobi(a: &RunArgs) -> Result<Outcome> {
    let l = load(&a.system)?;
    let g = l.geom.as_ref();
    let f = resolve_full(&l, &a.f)?;
    let states = phase_box(g).halton(a.samples, a.seed);
    let nh = NonholonomicBracket {
        geom: g,
        group: vec![0.0; g.k()],
    };
    let tb = TransformedBracket {
        geom: g,
        f: f.f.as_ref(),
        group: vec![0.0; g.k()],
        poisson_only: true,
    };
    let (mut j_nh, mut j_h): (f64, f64) = (0.0, 0.0);
    for x in &states {
        j_nh = j_nh.max(max_jacobiator(&nh, x)?);
        j_h = j_h.max(max_jacobiator(&tb, x)?);
    }
    let tol = a.tol.unwrap_or(1e-9);
    let pass = j_h <= tol;
    let v = json!({
        "system": l.def.name,
        "multiplier": f.label,
        "nonholonomic_jacobiator": j_nh,
        "hamiltonized_jacobiator": j_h,
        "samples": states.len(),
        "seed": a.seed,
        "tol": tol,
        "verdict": if pass { "pass" } else { "fail" },
    });
    Ok(with_out(Outcome::new(v, pass), a))
}

fn cmd_condvar(a: &RunArgs) -> Result<Outcome> {
    let l = load(&a.system)?;
    let f = resolve_full(&l, &a.f)?;
    let expr = f.expr.ok_or_else(|| Error::Config("condvar needs a closed-form multiplier".into()))?;
    let cand = MultiplierCandidate::for_system(&expr, &l.def)?;
    let lv = build_variational(&l.def, &cand)?;
    let n = lv.n();
    let bx = crate::hamiltonize::config_box(&l.def).join(&SampleBox::new(&vec![(-1.0, 1.0); n]));
    let (x0, moved) = lv.project(&initial(a, &bx)?)?;
    let cv = integrate(&AlmostElFlow { lv: &lv }, lv.state_names(), &x0, 0.0, a.t, a.dt, None)?.ensure_complete()?;
    let drift = constraint_conservation(&lv, &cv)?;
    let g = l.geom.as_ref();
    let nh0 = configuration_state(g, &velocities_from_quasi(&cand, n, &x0)?)?;
    let nh = integrate(&ConfigurationFlow { geom: g }, vec![], &nh0, 0.0, a.t, a.dt, None)?.ensure_complete()?;
    let nh = nh.map_states(|s| configuration_velocities(g, s))?;
    let dev = compare(&nh, &cv, &StateMap::VelocityScaleByF { f: &cand, n })?;
    let tol = a.tol.unwrap_or(1e-6);
    let pass = dev <= tol;
    let v = json!({
        "system": l.def.name,
        "multiplier": f.label,
        "lagrangian": crate::expr::Canonical::of(&lv.lv).to_expr().to_string(),
        "constraints": lv.constraints.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        "projection_residual": moved,
        "constraint_drift": drift,
        "max_deviation": dev,
        "seed": a.seed,
        "t": a.t,
        "dt": cv.meta.step,
        "tol": tol,
        "verdict": if pass { "pass" } else { "fail" },
    });
    let mut o = Outcome::new(v, pass);
    if let Some(p) = &a.out {
        o.files.push((p.clone(), csv(&cv)));
    }
    Ok(o)
}
