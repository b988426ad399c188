//! Command-line front end: JSON-configured evaluation, grids, verification,
//! audits and a built-in self-check.
//!
//! Exit codes: 0 success, 1 config error, 2 no branch converged, 3 audit
//! gate failure, 4 self-check failure.

use std::fs;
use std::io::Read;
use std::path::Path;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::expr::{fd_check, parse};
use crate::family2d::{Eval2Options, Family2D};
use crate::family3d::{
    grid_eval, Axis, ConstraintVariant, EvalOptions, Family3D, PVariant, RVariant,
};
use crate::numkernel::SolverConfig;
use crate::verify::{
    closure_audit, intermediate_ycheck, residuals_at, AuditReport, ALL_CONSTRAINTS, ALL_P, ALL_R,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_BRANCH: i32 = 2;
pub const EXIT_AUDIT_GATE: i32 = 3;
pub const EXIT_SELFCHECK: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "eikonal",
    about = "Construct, evaluate and verify parametric solutions of the coupled eikonal system"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate a family at one spacetime point.
    Eval {
        /// JSON config path (or `-` for stdin).
        config: Option<String>,
        #[arg(long = "config", value_name = "PATH")]
        config_flag: Option<String>,
        /// Point as x0,x1,x2,x3.
        #[arg(long)]
        point: String,
    },
    /// Evaluate a family on a rectangular grid and write CSV.
    Grid {
        config: Option<String>,
        #[arg(long = "config", value_name = "PATH")]
        config_flag: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Residual and hodograph-image checks at one point.
    Verify {
        config: Option<String>,
        #[arg(long = "config", value_name = "PATH")]
        config_flag: Option<String>,
        #[arg(long)]
        point: String,
    },
    /// Score all constraint/closure variant combinations and write JSON.
    Audit {
        config: Option<String>,
        #[arg(long = "config", value_name = "PATH")]
        config_flag: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate a 2+1D family at one point (x0,x1,x2).
    Family2d {
        config: Option<String>,
        #[arg(long = "config", value_name = "PATH")]
        config_flag: Option<String>,
        #[arg(long)]
        point: String,
    },
    /// Run the built-in verification suite.
    Selfcheck {
        /// Deliberately corrupt an internal component (testing hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn default_fd_step() -> f64 {
    1e-5
}
fn default_samples() -> usize {
    40
}
fn zero() -> String {
    "0".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverJson {
    #[serde(default)]
    pub tol_residual: Option<f64>,
    #[serde(default)]
    pub tol_step: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub damping: Option<f64>,
    #[serde(default)]
    pub seed_grid_radius: Option<f64>,
    #[serde(default)]
    pub seed_grid_count: Option<usize>,
    #[serde(default)]
    pub dedupe_distance: Option<f64>,
}

impl SolverJson {
    fn build(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(v) = self.tol_residual {
            c.tol_residual = v;
        }
        if let Some(v) = self.tol_step {
            c.tol_step = v;
        }
        if let Some(v) = self.max_iterations {
            c.max_iter = v;
        }
        if let Some(v) = self.damping {
            c.damping = v;
        }
        if let Some(v) = self.seed_grid_radius {
            c.seed_grid_radius = v;
        }
        if let Some(v) = self.seed_grid_count {
            c.seed_grid_count = v;
        }
        if let Some(v) = self.dedupe_distance {
            c.dedupe_distance = v;
        }
        c
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum VariantsJson {
    Auto(String),
    Explicit {
        constraint: String,
        p: String,
        r: String,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisJson {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridJson {
    pub x0: AxisJson,
    pub x1: AxisJson,
    pub x2: AxisJson,
    pub x3: AxisJson,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: String,
    pub g: String,
    #[serde(default = "zero")]
    pub k: String,
    #[serde(default)]
    pub h: Option<String>,
    #[serde(default)]
    pub variants: Option<VariantsJson>,
    #[serde(default)]
    pub solver: Option<SolverJson>,
    #[serde(default)]
    pub grid: Option<GridJson>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub r_base: f64,
    #[serde(default)]
    pub both_branches: bool,
}

/// A user-facing configuration problem; always maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = if path == "-" {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| ConfigError(format!("reading stdin: {e}")))?;
            buf
        } else {
            fs::read_to_string(path).map_err(|e| ConfigError(format!("reading {path}: {e}")))?
        };
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("config: {e}")))?;
        if cfg.kind != "3d" && cfg.kind != "2d" {
            return Err(ConfigError(format!("kind: must be \"3d\" or \"2d\", got {:?}", cfg.kind)));
        }
        if matches!(&cfg.variants, Some(VariantsJson::Auto(s)) if s != "auto") {
            return Err(ConfigError("variants: string form must be \"auto\"".into()));
        }
        if matches!(&cfg.variants, Some(VariantsJson::Auto(_))) && cfg.kind != "3d" {
            return Err(ConfigError("variants: \"auto\" is only valid for kind 3d".into()));
        }
        Ok(cfg)
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            solver: self.solver.as_ref().map(|s| s.build()).unwrap_or_default(),
            fd_step: self.fd_step,
            x3_min: 1e-6,
            both_branches: self.both_branches,
        }
    }

    fn family3d(&self) -> Result<Family3D, ConfigError> {
        if self.kind != "3d" {
            return Err(ConfigError("kind: expected 3d".into()));
        }
        let fam = Family3D::from_text(&self.g, &self.k).map_err(|e| {
            // keep the parser's byte offset in the message
            ConfigError(e.to_string())
        })?;
        match &self.variants {
            None => Ok(fam.with_r_base(self.r_base)),
            Some(VariantsJson::Auto(_)) => {
                let report = closure_audit(&fam, self.samples, self.seed, &self.eval_options())
                    .map_err(|e| ConfigError(format!("audit: {e}")))?;
                let (c, p, r) = report.selected_variants();
                Ok(fam.with_variants(c, p, r).with_r_base(self.r_base))
            }
            Some(VariantsJson::Explicit { constraint, p, r }) => {
                let c = ALL_CONSTRAINTS
                    .into_iter()
                    .find(|v| v.name() == constraint)
                    .ok_or_else(|| ConfigError(format!("variants.constraint: unknown {constraint:?}")))?;
                let pv = ALL_P
                    .into_iter()
                    .find(|v| v.name() == p)
                    .ok_or_else(|| ConfigError(format!("variants.p: unknown {p:?}")))?;
                let rv = ALL_R
                    .into_iter()
                    .find(|v| v.name() == r)
                    .ok_or_else(|| ConfigError(format!("variants.r: unknown {r:?}")))?;
                Ok(fam.with_variants(c, pv, rv).with_r_base(self.r_base))
            }
        }
    }

    fn family2d(&self) -> Result<Family2D, ConfigError> {
        if self.kind != "2d" {
            return Err(ConfigError("kind: expected 2d".into()));
        }
        let h = self.h.as_deref().unwrap_or("0");
        Family2D::from_text(&self.g, &self.k, h)
            .map(|f| f.with_r_base(self.r_base))
            .map_err(|e| ConfigError(e.to_string()))
    }
}

fn pick_config(positional: Option<String>, flag: Option<String>) -> Result<String, ConfigError> {
    positional
        .or(flag)
        .ok_or_else(|| ConfigError("config: no path given (positional or --config)".into()))
}

fn parse_point<const N: usize>(text: &str) -> Result<[f64; N], ConfigError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != N {
        return Err(ConfigError(format!("point: expected {N} comma-separated values")));
    }
    let mut out = [0.0; N];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|e| ConfigError(format!("point component {i}: {e}")))?;
    }
    Ok(out)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(ConfigError(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, ConfigError> {
    match cli.cmd {
        Command::Eval { config, config_flag, point } => {
            let cfg = RunConfig::load(&pick_config(config, config_flag)?)?;
            let x: [f64; 4] = parse_point(&point)?;
            cmd_eval(&cfg, &x)
        }
        Command::Grid { config, config_flag, out } => {
            let cfg = RunConfig::load(&pick_config(config, config_flag)?)?;
            cmd_grid(&cfg, out.as_deref())
        }
        Command::Verify { config, config_flag, point } => {
            let cfg = RunConfig::load(&pick_config(config, config_flag)?)?;
            let x: [f64; 4] = parse_point(&point)?;
            cmd_verify(&cfg, &x)
        }
        Command::Audit { config, config_flag, out, seed, samples } => {
            let mut cfg = RunConfig::load(&pick_config(config, config_flag)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = samples {
                cfg.samples = n;
            }
            cmd_audit(&cfg, out.as_deref())
        }
        Command::Family2d { config, config_flag, point } => {
            let cfg = RunConfig::load(&pick_config(config, config_flag)?)?;
            let x: [f64; 3] = parse_point(&point)?;
            cmd_family2d(&cfg, &x)
        }
        Command::Selfcheck { inject_fault } => Ok(cmd_selfcheck(inject_fault.as_deref())),
    }
}

pub fn cmd_eval(cfg: &RunConfig, x: &[f64; 4]) -> Result<i32, ConfigError> {
    let fam = cfg.family3d()?;
    let opts = cfg.eval_options();
    let results = match fam.evaluate(x, &opts) {
        Ok(r) => r,
        Err(e) => {
            println!("no branch: {e}");
            return Ok(EXIT_NO_BRANCH);
        }
    };
    let mut any = false;
    for r in &results {
        any |= r.solver.converged();
        println!(
            "branch s={:+} z=({}, {}) u={} v={} res_uu={:.3e} res_vv={:.3e} res_uv={:.3e} iters={}",
            r.z.branch(),
            fmt(r.z.z1),
            fmt(r.z.z2),
            fmt(r.u),
            fmt(r.v),
            r.residuals.res_uu,
            r.residuals.res_vv,
            r.residuals.res_uv_minus_1,
            r.solver.iterations,
        );
    }
    if any {
        Ok(EXIT_OK)
    } else {
        println!("no branch converged");
        Ok(EXIT_NO_BRANCH)
    }
}

pub const CSV_HEADER: &str = "x0,x1,x2,x3,branch,z1,z2,s,u,v,res_uu,res_vv,res_uv,converged,iters";

/// Render the grid CSV for a 3d config; deterministic row order (row-major
/// grid, branches by z1 then z2).
pub fn grid_csv(cfg: &RunConfig) -> Result<String, ConfigError> {
    let fam = cfg.family3d()?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| ConfigError("grid: missing grid spec".into()))?;
    for (name, a) in [("x0", grid.x0), ("x1", grid.x1), ("x2", grid.x2), ("x3", grid.x3)] {
        if a.count < 1 {
            return Err(ConfigError(format!("grid.{name}.count: must be >= 1")));
        }
    }
    let axes = [grid.x0, grid.x1, grid.x2, grid.x3].map(|a| Axis {
        min: a.min,
        max: a.max,
        count: a.count,
    });
    let opts = cfg.eval_options();
    let points = grid_eval(&fam, &axes, &opts);
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for pe in points {
        let xcols = format!("{},{},{},{}", fmt(pe.x[0]), fmt(pe.x[1]), fmt(pe.x[2]), fmt(pe.x[3]));
        let mut rows: Vec<&crate::family3d::EvalResult> =
            pe.results.iter().filter(|r| r.solver.converged()).collect();
        rows.sort_by(|a, b| a.z.z1.total_cmp(&b.z.z1).then(a.z.z2.total_cmp(&b.z.z2)));
        if rows.is_empty() {
            csv.push_str(&format!("{xcols},,,,,,,,,0,\n"));
            continue;
        }
        for r in rows {
            csv.push_str(&format!(
                "{xcols},{:+},{},{},{},{},{},{},{},{},1,{}\n",
                r.z.branch(),
                fmt(r.z.z1),
                fmt(r.z.z2),
                fmt(r.z.s),
                fmt(r.u),
                fmt(r.v),
                fmt(r.residuals.res_uu),
                fmt(r.residuals.res_vv),
                fmt(r.residuals.res_uv_minus_1),
                r.solver.iterations,
            ));
        }
    }
    Ok(csv)
}

pub fn cmd_grid(cfg: &RunConfig, out_override: Option<&str>) -> Result<i32, ConfigError> {
    let csv = grid_csv(cfg)?;
    write_out(out_override.or(cfg.out.as_deref()), &csv)?;
    Ok(EXIT_OK)
}

fn write_out(path: Option<&str>, content: &str) -> Result<(), ConfigError> {
    match path {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(p) => fs::write(Path::new(p), content)
            .map_err(|e| ConfigError(format!("writing {p}: {e}"))),
    }
}

pub fn cmd_verify(cfg: &RunConfig, x: &[f64; 4]) -> Result<i32, ConfigError> {
    let fam = cfg.family3d()?;
    let opts = cfg.eval_options();
    let results = match fam.evaluate(x, &opts) {
        Ok(r) if !r.is_empty() => r,
        _ => {
            println!("no branch converged");
            return Ok(EXIT_NO_BRANCH);
        }
    };
    for r in &results {
        println!(
            "branch z=({:.12}, {:.12}): res_uu={:.3e} res_vv={:.3e} res_uv={:.3e} (fd h={:.1e}, stencil ok: {})",
            r.z.z1, r.z.z2, r.residuals.res_uu, r.residuals.res_vv,
            r.residuals.res_uv_minus_1, r.residuals.fd_step, r.residuals.branch_flag,
        );
    }
    match intermediate_ycheck(&fam, x, &opts) {
        Ok(c) => println!(
            "hodograph image system: eik4={:.3e} eik4a(printed)={:.3e} eik4a(corrected)={:.3e} eik4b={:.3e}",
            c.eik4, c.eik4a_printed, c.eik4a_corrected, c.eik4b
        ),
        Err(e) => println!("hodograph image system: not evaluated ({e})"),
    }
    Ok(EXIT_OK)
}

pub fn cmd_audit(cfg: &RunConfig, out_override: Option<&str>) -> Result<i32, ConfigError> {
    if cfg.samples < 1 {
        return Err(ConfigError("samples must be ≥ 1".into()));
    }
    if cfg.kind != "3d" {
        return Err(ConfigError("kind: audit requires kind 3d".into()));
    }
    let fam = Family3D::from_text(&cfg.g, &cfg.k).map_err(|e| ConfigError(e.to_string()))?;
    let report: AuditReport = closure_audit(&fam, cfg.samples, cfg.seed, &cfg.eval_options())
        .map_err(|e| ConfigError(format!("audit: {e}")))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_out(out_override.or(cfg.out.as_deref()), &format!("{json}\n"))?;
    if report.passed {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_AUDIT_GATE)
    }
}

pub fn cmd_family2d(cfg: &RunConfig, x: &[f64; 3]) -> Result<i32, ConfigError> {
    let fam = cfg.family2d()?;
    let opts = Eval2Options { fd_step: cfg.fd_step, ..Eval2Options::default() };
    let results = fam.evaluate2(x, &opts).map_err(|e| ConfigError(e.to_string()))?;
    if results.is_empty() {
        println!("no branch");
        return Ok(EXIT_NO_BRANCH);
    }
    for r in &results {
        println!(
            "branch z={} u={} v={} res_uu={:.3e} res_vv={:.3e} res_uv={:.3e} |implicit|={:.3e}",
            fmt(r.z),
            fmt(r.u),
            fmt(r.v),
            r.res_uu,
            r.res_vv,
            r.res_uv_minus_1,
            r.implicit_abs,
        );
    }
    Ok(EXIT_OK)
}

/// Minkowski dot with an optional deliberate sign fault (testing hook).
fn mdot_maybe_faulted(a: &[f64; 4], b: &[f64; 4], fault: bool) -> f64 {
    if fault {
        // wrong signature: flips the x1 term
        a[0] * b[0] + a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    } else {
        crate::numkernel::minkowski_dot(a, b)
    }
}

pub fn cmd_selfcheck(inject_fault: Option<&str>) -> i32 {
    let fault_minkowski = inject_fault == Some("minkowski-sign");
    let mut checks: Vec<(&str, bool, String)> = Vec::new();

    // 1. plane-wave pair against the (possibly faulted) metric
    {
        let gu = [1.0, 1.0, 0.0, 0.0];
        let gv = [0.5, -0.5, 0.0, 0.0];
        let uu = mdot_maybe_faulted(&gu, &gu, fault_minkowski);
        let vv = mdot_maybe_faulted(&gv, &gv, fault_minkowski);
        let uv = mdot_maybe_faulted(&gu, &gv, fault_minkowski) - 1.0;
        let ok = uu.abs() < 1e-12 && vv.abs() < 1e-12 && uv.abs() < 1e-12;
        checks.push(("plane_wave_pair", ok, format!("uu={uu:.1e} vv={vv:.1e} uv={uv:.1e}")));
    }
    // 2. plane-wave FD residuals through the verify machinery
    {
        let u = |x: &[f64; 4]| Some(x[0] + x[1]);
        let v = |x: &[f64; 4]| Some((x[0] - x[1]) / 2.0);
        let rep = residuals_at(&u, &v, &[0.3, -1.2, 5.0, 2.0], 1e-2);
        checks.push(("plane_wave_fd_residuals", rep.max_abs() < 1e-12, format!("max={:.1e}", rep.max_abs())));
    }
    // 3. closed-form 3d family
    {
        let (ok, detail) = match Family3D::from_text("1", "0")
            .map_err(|e| e.to_string())
            .and_then(|fam| {
                fam.evaluate(&[0.0, 0.6, 0.0, 0.8], &EvalOptions::default())
                    .map_err(|e| e.to_string())
            }) {
            Ok(res) if !res.is_empty() => {
                let r = &res[0];
                let ok = (r.u + 1.0).abs() < 1e-8
                    && (r.v - 0.5).abs() < 1e-8
                    && r.residuals.max_abs() < 1e-6;
                (ok, format!("u={:.9} v={:.9} max_res={:.1e}", r.u, r.v, r.residuals.max_abs()))
            }
            Ok(_) => (false, "no branch".into()),
            Err(e) => (false, e),
        };
        checks.push(("closed_form_3d", ok, detail));
    }
    // 4. constraint-sign discriminator
    {
        let (ok, detail) = match Family3D::from_text("1", "0").map(|f| {
            f.with_variants(ConstraintVariant::PaperXDisplay, PVariant::Printed, RVariant::Printed)
        }) {
            Ok(fam) => match fam.evaluate(&[0.0, 0.6, 0.0, 0.8], &EvalOptions::default()) {
                Ok(res) if !res.is_empty() => {
                    let uu = res[0].residuals.res_uu;
                    (uu.abs() > 1.0, format!("x-display res_uu={uu:.3}"))
                }
                _ => (false, "no branch".into()),
            },
            Err(e) => (false, e.to_string()),
        };
        checks.push(("constraint_sign_discriminator", ok, detail));
    }
    // 5. 2d worked example
    {
        let (ok, detail) = match Family2D::from_text("z", "0", "0") {
            Ok(fam) => match fam.evaluate2(&[2.0, 0.0, -1.0], &Eval2Options::default()) {
                Ok(res) if res.len() == 2 => {
                    let sqrt3 = 3.0f64.sqrt();
                    let ok = (res[1].z - sqrt3 / 2.0).abs() < 1e-9
                        && (res[1].u + sqrt3).abs() < 1e-8
                        && (res[1].v + sqrt3 / 2.0).abs() < 1e-8
                        && res.iter().all(|r| {
                            r.res_uu.abs() < 1e-6
                                && r.res_vv.abs() < 1e-6
                                && r.res_uv_minus_1.abs() < 1e-6
                        });
                    (ok, format!("z={:.9} u={:.9} v={:.9}", res[1].z, res[1].u, res[1].v))
                }
                Ok(res) => (false, format!("{} branches", res.len())),
                Err(e) => (false, e.to_string()),
            },
            Err(e) => (false, e.to_string()),
        };
        checks.push(("family2d_worked_example", ok, detail));
    }
    // 6. expression jets vs finite differences
    {
        let (ok, detail) = match parse("sin(3*z1)*exp(z2)", &["z1", "z2"]) {
            Ok(e) => match fd_check(&e, &[0.5, -0.2], 1e-4) {
                Ok(d) => (d.max() < 1e-6, format!("max discrepancy {:.1e}", d.max())),
                Err(err) => (false, err.to_string()),
            },
            Err(err) => (false, err.to_string()),
        };
        checks.push(("expression_jets_vs_fd", ok, detail));
    }
    // 7. hodograph image system on the closed-form family
    {
        let (ok, detail) = match Family3D::from_text("1", "0").map_err(|e| e.to_string()).and_then(
            |fam| {
                intermediate_ycheck(&fam, &[0.2, 0.6, 0.0, 0.8], &EvalOptions::default())
                    .map_err(|e| e.to_string())
            },
        ) {
            Ok(c) => (
                c.eik4.abs() < 1e-6 && c.eik4a_corrected.abs() < 1e-6 && c.eik4b.abs() < 1e-6,
                format!("eik4={:.1e} eik4a={:.1e} eik4b={:.1e}", c.eik4, c.eik4a_corrected, c.eik4b),
            ),
            Err(e) => (false, e),
        };
        checks.push(("hodograph_image_system", ok, detail));
    }

    let mut all_ok = true;
    for (name, ok, detail) in &checks {
        all_ok &= ok;
        println!("{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
    }
    if all_ok {
        println!("selfcheck: {} checks passed", checks.len());
        EXIT_OK
    } else {
        println!("selfcheck: FAILURES present");
        EXIT_SELFCHECK
    }
}
