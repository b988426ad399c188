//! The 3+1D parametric solution family.
//!
//! A family is a pair of generating functions (g, k) on the open unit disk
//! in (z1, z2). For a spacetime point x the two envelope constraints are
//! solved for z; the fields
//!
//! ```text
//! u = (x1 z1 + x2 z2 - x3 s - x0 - k) / g,      s = ±sqrt(1 - z1² - z2²)
//! v = g x3 / s + p u + r
//! ```
//!
//! then solve the coupled system u_mu u_mu = 0, v_mu v_mu = 0, u_mu v_mu = 1.
//! The closure functions p and r come in several published variants that do
//! not agree; all are implemented and arbitrated numerically (see `verify`).

use crate::expr::{parse, EvalError, Expression, Jet2, ParseError};
use crate::numkernel::{newton2, solve_all_2d, SolveOutcome, SolverConfig};
use crate::verify::{GradMethod, ResidualReport};
use thiserror::Error;

pub const DISK_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("parse error in {which}: {source}")]
    Parse {
        which: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("evaluation error in {which}: {source}")]
    Eval {
        which: &'static str,
        #[source]
        source: EvalError,
    },
    #[error("({z1}, {z2}) lies outside the open unit disk")]
    OutsideDisk { z1: f64, z2: f64 },
    #[error("|g| = {min_abs:.3e} on the sampled subdisk is below the floor {g_min}")]
    GTooSmall { min_abs: f64, g_min: f64 },
    #[error("g vanishes at z = ({z1}, {z2})")]
    SingularG { z1: f64, z2: f64 },
    #[error("|x3| = {x3:.3e} is below the degeneracy floor {x3_min:.3e}")]
    DegenerateX3 { x3: f64, x3_min: f64 },
    #[error("quadrature for r did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("generating function must use variables (z1, z2), got ({0:?})")]
    WrongVariables(Vec<String>),
    #[error("|z| = {z} is not inside the open interval (-1, 1)")]
    OutsideInterval { z: f64 },
    #[error("|g'| = {min_abs:.3e} on [-0.9, 0.9] is below the floor {gp_min}")]
    GpTooSmall { min_abs: f64, gp_min: f64 },
    #[error("g' vanishes at z = {z}")]
    SingularGp { z: f64 },
}

/// Which sign convention the envelope constraints use for the x3 term.
/// The source material displays both; they differ by the sign of the
/// x3·z_i/s term and only one yields null gradients (see `verify`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintVariant {
    /// F_i = x_i + x3 z_i / s - g_{z_i} u - k_{z_i}
    /// (stationarity of the complete integral; the default)
    PaperYDisplay,
    /// F_i = x_i - x3 z_i / s - g_{z_i} u - k_{z_i}
    PaperXDisplay,
}

/// Variants of the closure function p(z1, z2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PVariant {
    /// ½(-(g1² + g2² - g1 g2) + (g - z1 g1 - z2 g2)²), as printed.
    Printed,
    /// ½(-(g1² + g2²) + (g - z1 g1 - z2 g2)²), matching the 2+1D analogue.
    NoCross,
}

/// Variants of the closure gradient (r_{z1}, r_{z2}); r itself is recovered
/// by path quadrature from (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RVariant {
    /// r_{z1} = -k11 L1, r_{z2} = -k12 L2 with L_i = z_i g + s² g_i, as printed.
    Printed,
    /// Symmetrized: r_{z_i} = -Σ_j k_{ij} L_j.
    Sym,
    /// Diagonal: r_{z_i} = -k_{ii} L_i.
    Diag,
    /// r_{z_i} = -Σ_j k_{ij} M_j with M_j = g_j + z_j (g - z1 g1 - z2 g2);
    /// derived from the coupling condition u_mu v_mu = 1 on a fiber, and the
    /// only variant that reduces to the published 2+1D closure on the z2 = 0
    /// axis.
    FiberExact,
}

impl ConstraintVariant {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintVariant::PaperYDisplay => "paper_y_display",
            ConstraintVariant::PaperXDisplay => "paper_x_display",
        }
    }
}

impl PVariant {
    pub fn name(self) -> &'static str {
        match self {
            PVariant::Printed => "P_printed",
            PVariant::NoCross => "P_nocross",
        }
    }
}

impl RVariant {
    pub fn name(self) -> &'static str {
        match self {
            RVariant::Printed => "R_printed",
            RVariant::Sym => "R_sym",
            RVariant::Diag => "R_diag",
            RVariant::FiberExact => "R_fiber_exact",
        }
    }
}

/// s = branch · sqrt(1 - z1² - z2²); rejects the boundary and exterior.
pub fn s_of(z1: f64, z2: f64, branch: i8) -> Result<f64, FamilyError> {
    let q = 1.0 - z1 * z1 - z2 * z2;
    if q <= 0.0 {
        return Err(FamilyError::OutsideDisk { z1, z2 });
    }
    Ok(f64::from(branch.signum()) * q.sqrt())
}

/// A parameter point on one sheet of the sphere z1² + z2² + s² = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPoint {
    pub z1: f64,
    pub z2: f64,
    pub s: f64,
}

impl ParamPoint {
    pub fn new(z1: f64, z2: f64, branch: i8) -> Result<Self, FamilyError> {
        Ok(ParamPoint { z1, z2, s: s_of(z1, z2, branch)? })
    }

    pub fn branch(&self) -> i8 {
        if self.s >= 0.0 {
            1
        } else {
            -1
        }
    }
}

#[derive(Debug, Clone)]
pub struct Family3D {
    g: Expression,
    k: Expression,
    pub constraint_variant: ConstraintVariant,
    pub p_variant: PVariant,
    pub r_variant: RVariant,
    pub r_base: f64,
}

/// Evaluation-time knobs shared by the solver-facing operations.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub solver: SolverConfig,
    /// Central-difference step for the residual gradients.
    pub fd_step: f64,
    /// Points with |x3| below this are rejected (the fiber geometry and the
    /// x3/s term in v degenerate).
    pub x3_min: f64,
    /// Solve the opposite s-branch as well as the sign(x3) branch.
    pub both_branches: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            solver: SolverConfig::default(),
            fd_step: 1e-5,
            x3_min: 1e-6,
            both_branches: false,
        }
    }
}

/// One solved branch at one spacetime point.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub x: [f64; 4],
    pub z: ParamPoint,
    pub u: f64,
    pub v: f64,
    /// Analytic gradient of u (exact on the branch).
    pub grad_u: [f64; 4],
    /// Finite-difference gradient of v with z re-solved per stencil point.
    pub grad_v: [f64; 4],
    pub residuals: ResidualReport,
    pub solver: SolveOutcome,
    pub constraint_variant: ConstraintVariant,
    pub p_variant: PVariant,
    pub r_variant: RVariant,
}

const G_MIN_DEFAULT: f64 = 0.25;

impl Family3D {
    /// Build a family from already-parsed generating functions, validating
    /// |g| >= `G_MIN_DEFAULT` on a 21x21 grid over the subdisk z1²+z2² <= 0.9.
    pub fn new(g: Expression, k: Expression) -> Result<Self, FamilyError> {
        Self::with_g_min(g, k, G_MIN_DEFAULT)
    }

    pub fn with_g_min(g: Expression, k: Expression, g_min: f64) -> Result<Self, FamilyError> {
        for (expr, which) in [(&g, "g"), (&k, "k")] {
            let vars = expr.variables();
            if vars != ["z1".to_string(), "z2".to_string()] {
                let _ = which;
                return Err(FamilyError::WrongVariables(vars.to_vec()));
            }
        }
        let mut min_abs = f64::INFINITY;
        for i in 0..21 {
            for j in 0..21 {
                let z1 = -0.9 + 1.8 * (i as f64) / 20.0;
                let z2 = -0.9 + 1.8 * (j as f64) / 20.0;
                if z1 * z1 + z2 * z2 > 0.9 {
                    continue;
                }
                let gj = g
                    .eval_jet(&[z1, z2])
                    .map_err(|source| FamilyError::Eval { which: "g", source })?;
                k.eval_jet(&[z1, z2])
                    .map_err(|source| FamilyError::Eval { which: "k", source })?;
                min_abs = min_abs.min(gj.value.abs());
            }
        }
        if min_abs < g_min {
            return Err(FamilyError::GTooSmall { min_abs, g_min });
        }
        Ok(Family3D {
            g,
            k,
            constraint_variant: ConstraintVariant::PaperYDisplay,
            p_variant: PVariant::Printed,
            r_variant: RVariant::Printed,
            r_base: 0.0,
        })
    }

    pub fn from_text(g: &str, k: &str) -> Result<Self, FamilyError> {
        let g = parse(g, &["z1", "z2"]).map_err(|source| FamilyError::Parse { which: "g", source })?;
        let k = parse(k, &["z1", "z2"]).map_err(|source| FamilyError::Parse { which: "k", source })?;
        Self::new(g, k)
    }

    pub fn with_variants(mut self, c: ConstraintVariant, p: PVariant, r: RVariant) -> Self {
        self.constraint_variant = c;
        self.p_variant = p;
        self.r_variant = r;
        self
    }

    pub fn with_r_base(mut self, r_base: f64) -> Self {
        self.r_base = r_base;
        self
    }

    pub fn g_expr(&self) -> &Expression {
        &self.g
    }

    pub fn k_expr(&self) -> &Expression {
        &self.k
    }

    fn jets(&self, z1: f64, z2: f64) -> Result<(Jet2, Jet2), FamilyError> {
        let gj = self
            .g
            .eval_jet(&[z1, z2])
            .map_err(|source| FamilyError::Eval { which: "g", source })?;
        let kj = self
            .k
            .eval_jet(&[z1, z2])
            .map_err(|source| FamilyError::Eval { which: "k", source })?;
        Ok((gj, kj))
    }

    /// u = (x1 z1 + x2 z2 - x3 s - x0 - k) / g.
    ///
    /// The k term carries the minus sign of the hodograph-potential display
    /// w = y1 z1 + y2 z2 - y3 s - g y0 - k; the alternative +k display is
    /// equivalent up to the (arbitrary) replacement k -> -k, but only this
    /// sign is consistent with the -k_{z_i} term of [`Self::envelope_constraints`].
    pub fn u_of(&self, x: &[f64; 4], z: &ParamPoint) -> Result<f64, FamilyError> {
        let (gj, kj) = self.jets(z.z1, z.z2)?;
        if gj.value == 0.0 {
            return Err(FamilyError::SingularG { z1: z.z1, z2: z.z2 });
        }
        Ok((x[1] * z.z1 + x[2] * z.z2 - x[3] * z.s - x[0] - kj.value) / gj.value)
    }

    /// The two envelope (stationarity) constraints F(x, z) with u eliminated.
    pub fn envelope_constraints(&self, x: &[f64; 4], z: &ParamPoint) -> Result<[f64; 2], FamilyError> {
        Ok(self.constraints_and_jacobian(x, z)?.0)
    }

    /// Constraints together with their analytic Jacobian in (z1, z2).
    pub fn constraints_and_jacobian(
        &self,
        x: &[f64; 4],
        z: &ParamPoint,
    ) -> Result<([f64; 2], [[f64; 2]; 2]), FamilyError> {
        let (gj, kj) = self.jets(z.z1, z.z2)?;
        let g = gj.value;
        if g == 0.0 {
            return Err(FamilyError::SingularG { z1: z.z1, z2: z.z2 });
        }
        let s = z.s;
        let zz = [z.z1, z.z2];
        let u = (x[1] * zz[0] + x[2] * zz[1] - x[3] * s - x[0] - kj.value) / g;
        let sigma = match self.constraint_variant {
            ConstraintVariant::PaperYDisplay => 1.0,
            ConstraintVariant::PaperXDisplay => -1.0,
        };
        let mut f = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for i in 0..2 {
            f[i] = x[i + 1] + sigma * x[3] * zz[i] / s - gj.grad[i] * u - kj.grad[i];
        }
        // du/dz_j at fixed x (u always carries the +x3 z/s term from -x3 s)
        let du = [
            (x[1] + x[3] * zz[0] / s - kj.grad[0] - u * gj.grad[0]) / g,
            (x[2] + x[3] * zz[1] / s - kj.grad[1] - u * gj.grad[1]) / g,
        ];
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                let t_ij = delta / s + zz[i] * zz[j] / (s * s * s);
                jac[i][j] = sigma * x[3] * t_ij
                    - gj.hess(i, j) * u
                    - gj.grad[i] * du[j]
                    - kj.hess(i, j);
            }
        }
        Ok((f, jac))
    }

    /// Closure function p(z1, z2) for the requested variant.
    pub fn closure_p(&self, z: &ParamPoint, variant: PVariant) -> Result<f64, FamilyError> {
        let (gj, _) = self.jets(z.z1, z.z2)?;
        let (g1, g2) = (gj.grad[0], gj.grad[1]);
        let radial = gj.value - z.z1 * g1 - z.z2 * g2;
        Ok(match variant {
            PVariant::Printed => 0.5 * (-(g1 * g1 + g2 * g2 - g1 * g2) + radial * radial),
            PVariant::NoCross => 0.5 * (-(g1 * g1 + g2 * g2) + radial * radial),
        })
    }

    /// The closure gradient (r_{z1}, r_{z2}) of the requested variant at (z1, z2).
    pub fn r_gradient(&self, z1: f64, z2: f64, variant: RVariant) -> Result<[f64; 2], FamilyError> {
        let (gj, kj) = self.jets(z1, z2)?;
        let g = gj.value;
        let (g1, g2) = (gj.grad[0], gj.grad[1]);
        let s2 = 1.0 - z1 * z1 - z2 * z2;
        let (k11, k12, k22) = (kj.hess(0, 0), kj.hess(0, 1), kj.hess(1, 1));
        let l = [z1 * g + s2 * g1, z2 * g + s2 * g2];
        Ok(match variant {
            RVariant::Printed => [-k11 * l[0], -k12 * l[1]],
            RVariant::Sym => [-k11 * l[0] - k12 * l[1], -k12 * l[0] - k22 * l[1]],
            RVariant::Diag => [-k11 * l[0], -k22 * l[1]],
            RVariant::FiberExact => {
                let radial = g - z1 * g1 - z2 * g2;
                let m = [g1 + z1 * radial, g2 + z2 * radial];
                [-k11 * m[0] - k12 * m[1], -k12 * m[0] - k22 * m[1]]
            }
        })
    }

    /// r(z) = r_base + path integral of the variant's closure gradient along
    /// the axis-aligned path (0,0) -> (z1,0) -> (z1,z2), by adaptive
    /// Gauss-Legendre quadrature. Path dependence of the non-exact variants
    /// is measured separately (`verify::mixed_partial_defect`), never hidden.
    pub fn closure_r(&self, z: &ParamPoint, variant: RVariant) -> Result<f64, FamilyError> {
        let leg1 = adaptive_gl(
            &|t| self.r_gradient(t, 0.0, variant).ok().map(|g| g[0]),
            0.0,
            z.z1,
            QUAD_TOL,
        )?;
        let leg2 = adaptive_gl(
            &|t| self.r_gradient(z.z1, t, variant).ok().map(|g| g[1]),
            0.0,
            z.z2,
            QUAD_TOL,
        )?;
        Ok(self.r_base + leg1 + leg2)
    }

    /// v = g x3 / s + p u + r with the family's selected variants.
    pub fn v_of(&self, x: &[f64; 4], z: &ParamPoint, u: f64) -> Result<f64, FamilyError> {
        let (gj, _) = self.jets(z.z1, z.z2)?;
        let p = self.closure_p(z, self.p_variant)?;
        let r = self.closure_r(z, self.r_variant)?;
        Ok(gj.value * x[3] / z.s + p * u + r)
    }

    /// Gradient of u at any x on the fiber of z: (-1, z1, z2, -s) / g.
    /// Null in the Minkowski metric identically: 1 - z1² - z2² - s² = 0.
    pub fn analytic_grad_u(&self, z: &ParamPoint) -> Result<[f64; 4], FamilyError> {
        let (gj, _) = self.jets(z.z1, z.z2)?;
        if gj.value == 0.0 {
            return Err(FamilyError::SingularG { z1: z.z1, z2: z.z2 });
        }
        let g = gj.value;
        Ok([-1.0 / g, z.z1 / g, z.z2 / g, -z.s / g])
    }

    /// Solve the envelope constraints on one s-branch; returns deduplicated
    /// converged roots.
    pub fn solve_branch(&self, x: &[f64; 4], branch: i8, cfg: &SolverConfig) -> Vec<SolveOutcome> {
        let f = |zz: [f64; 2]| {
            let z = ParamPoint::new(zz[0], zz[1], branch).ok()?;
            self.constraints_and_jacobian(x, &z).ok()
        };
        solve_all_2d(f, project_disk, cfg)
    }

    /// Re-solve z near a known root (used for FD stencils); `None` when the
    /// solve fails or jumps to a different branch.
    pub fn resolve_z(
        &self,
        x: &[f64; 4],
        z0: &ParamPoint,
        cfg: &SolverConfig,
    ) -> Option<ParamPoint> {
        let branch = z0.branch();
        let f = |zz: [f64; 2]| {
            let z = ParamPoint::new(zz[0], zz[1], branch).ok()?;
            self.constraints_and_jacobian(x, &z).ok()
        };
        let out = newton2([z0.z1, z0.z2], f, project_disk, cfg);
        if !out.converged() {
            return None;
        }
        let jump = (out.z[0] - z0.z1).hypot(out.z[1] - z0.z2);
        if jump > 10.0 * cfg.dedupe_distance.max(1e-4) {
            return None;
        }
        ParamPoint::new(out.z[0], out.z[1], branch).ok()
    }

    /// (u, v) at x with z re-solved from the seed branch; used by FD stencils.
    pub fn uv_resolved(
        &self,
        x: &[f64; 4],
        z_seed: &ParamPoint,
        cfg: &SolverConfig,
    ) -> Option<(f64, f64)> {
        let z = self.resolve_z(x, z_seed, cfg)?;
        let u = self.u_of(x, &z).ok()?;
        let v = self.v_of(x, &z, u).ok()?;
        Some((u, v))
    }

    /// Evaluate every converged branch at x: solve, assemble u, v, gradients
    /// and residuals (FD gradients with per-stencil re-solve). Sorted by
    /// |u_mu u_mu|.
    pub fn evaluate(&self, x: &[f64; 4], opts: &EvalOptions) -> Result<Vec<EvalResult>, FamilyError> {
        if x[3].abs() < opts.x3_min {
            return Err(FamilyError::DegenerateX3 { x3: x[3], x3_min: opts.x3_min });
        }
        let first: i8 = if x[3] >= 0.0 { 1 } else { -1 };
        let mut branches = vec![first];
        if opts.both_branches {
            branches.push(-first);
        }
        let mut results = Vec::new();
        for b in branches {
            for root in self.solve_branch(x, b, &opts.solver) {
                let Ok(z) = ParamPoint::new(root.z[0], root.z[1], b) else { continue };
                if let Ok(res) = self.assemble(x, z, root, opts) {
                    results.push(res);
                }
            }
        }
        results.sort_by(|a, b| {
            a.residuals
                .res_uu
                .abs()
                .total_cmp(&b.residuals.res_uu.abs())
                .then(a.z.z1.total_cmp(&b.z.z1))
                .then(a.z.z2.total_cmp(&b.z.z2))
        });
        Ok(results)
    }

    fn assemble(
        &self,
        x: &[f64; 4],
        z: ParamPoint,
        solver: SolveOutcome,
        opts: &EvalOptions,
    ) -> Result<EvalResult, FamilyError> {
        let u = self.u_of(x, &z)?;
        let v = self.v_of(x, &z, u)?;
        let grad_u = self.analytic_grad_u(&z)?;
        let h = opts.fd_step;
        let mut gu_fd = [f64::NAN; 4];
        let mut gv_fd = [f64::NAN; 4];
        let mut ok = true;
        for mu in 0..4 {
            let mut xp = *x;
            let mut xm = *x;
            xp[mu] += h;
            xm[mu] -= h;
            match (
                self.uv_resolved(&xp, &z, &opts.solver),
                self.uv_resolved(&xm, &z, &opts.solver),
            ) {
                (Some((up, vp)), Some((um, vm))) => {
                    gu_fd[mu] = (up - um) / (2.0 * h);
                    gv_fd[mu] = (vp - vm) / (2.0 * h);
                }
                _ => ok = false,
            }
        }
        let residuals = ResidualReport::from_gradients(&gu_fd, &gv_fd, GradMethod::FdBoth, h, ok);
        Ok(EvalResult {
            x: *x,
            z,
            u,
            v,
            grad_u,
            grad_v: gv_fd,
            residuals,
            solver,
            constraint_variant: self.constraint_variant,
            p_variant: self.p_variant,
            r_variant: self.r_variant,
        })
    }
}

/// Result of evaluating a family at one grid node.
#[derive(Debug)]
pub struct PointEval {
    pub x: [f64; 4],
    pub results: Vec<EvalResult>,
    pub error: Option<String>,
}

/// Axis specification min/max/count; count = 1 pins the axis at min.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn node(&self, i: usize) -> f64 {
        if self.count <= 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * (i as f64) / ((self.count - 1) as f64)
        }
    }
}

fn grid_points(axes: &[Axis; 4]) -> Vec<[f64; 4]> {
    let mut pts = Vec::with_capacity(axes.iter().map(|a| a.count.max(1)).product());
    for i0 in 0..axes[0].count.max(1) {
        for i1 in 0..axes[1].count.max(1) {
            for i2 in 0..axes[2].count.max(1) {
                for i3 in 0..axes[3].count.max(1) {
                    pts.push([
                        axes[0].node(i0),
                        axes[1].node(i1),
                        axes[2].node(i2),
                        axes[3].node(i3),
                    ]);
                }
            }
        }
    }
    pts
}

fn eval_point(fam: &Family3D, x: [f64; 4], opts: &EvalOptions) -> PointEval {
    match fam.evaluate(&x, opts) {
        Ok(results) => PointEval { x, results, error: None },
        Err(e) => PointEval { x, results: Vec::new(), error: Some(e.to_string()) },
    }
}

/// Evaluate the family on a row-major rectangular grid. Fans out across
/// threads when the `parallel` feature is on; ordering is row-major either way.
pub fn grid_eval(fam: &Family3D, axes: &[Axis; 4], opts: &EvalOptions) -> Vec<PointEval> {
    crate::par_map(grid_points(axes), |x| eval_point(fam, x, opts))
}

/// Sequential reference implementation of [`grid_eval`] (same output).
pub fn grid_eval_seq(fam: &Family3D, axes: &[Axis; 4], opts: &EvalOptions) -> Vec<PointEval> {
    crate::seq_map(grid_points(axes), |x| eval_point(fam, x, opts))
}

/// Clamp a trial iterate into the open unit disk with a small margin.
pub fn project_disk(z: [f64; 2]) -> Option<[f64; 2]> {
    let r = z[0].hypot(z[1]);
    let rmax = 1.0 - DISK_MARGIN;
    if r <= rmax {
        Some(z)
    } else {
        Some([z[0] / r * rmax, z[1] / r * rmax])
    }
}

const QUAD_TOL: f64 = 1e-12;

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn gl5<F: Fn(f64) -> Option<f64>>(f: &F, a: f64, b: f64) -> Option<f64> {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
        acc += w * f(c + hw * x)?;
    }
    Some(acc * hw)
}

fn adaptive_rec<F: Fn(f64) -> Option<f64>>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let left = gl5(f, a, m)?;
    let right = gl5(f, m, b)?;
    let sum = left + right;
    if (sum - whole).abs() <= tol || depth == 0 {
        if depth == 0 && (sum - whole).abs() > tol {
            return None;
        }
        return Some(sum);
    }
    Some(
        adaptive_rec(f, a, m, left, 0.5 * tol, depth - 1)?
            + adaptive_rec(f, m, b, right, 0.5 * tol, depth - 1)?,
    )
}

/// Adaptive Gauss-Legendre quadrature of `f` on the oriented interval [a, b].
pub fn adaptive_gl<F: Fn(f64) -> Option<f64>>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, FamilyError> {
    if a == b {
        return Ok(0.0);
    }
    let whole = gl5(f, a, b).ok_or(FamilyError::Quadrature { a, b })?;
    adaptive_rec(f, a, b, whole, tol, 40).ok_or(FamilyError::Quadrature { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::minkowski_dot;

    fn unit_family() -> Family3D {
        Family3D::from_text("1", "0").unwrap()
    }

    #[test]
    fn s_of_examples() {
        assert_eq!(s_of(0.0, 0.0, 1).unwrap(), 1.0);
        assert!((s_of(0.6, 0.0, 1).unwrap() - 0.8).abs() < 1e-15);
        assert!(s_of(0.8, 0.6, 1).is_err());
        assert_eq!(s_of(0.0, 0.0, -1).unwrap(), -1.0);
    }

    #[test]
    fn u_of_worked_examples() {
        let x = [0.0, 0.6, 0.0, 0.8];
        let z = ParamPoint { z1: -0.6, z2: 0.0, s: 0.8 };
        let fam = unit_family();
        assert!((fam.u_of(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        let fam2 = Family3D::from_text("2", "0").unwrap();
        assert!((fam2.u_of(&x, &z).unwrap() + 0.5).abs() < 1e-15);
        // sign convention: the -k display, so constant k = 5 gives u = -5 at
        // the origin fiber
        let fam3 = Family3D::from_text("1", "5").unwrap();
        let z0 = ParamPoint { z1: 0.0, z2: 0.0, s: 1.0 };
        let x0 = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(fam3.u_of(&x0, &z0).unwrap(), -5.0);
    }

    #[test]
    fn envelope_root_closed_form() {
        let fam = unit_family();
        let x = [0.0, 0.6, 0.0, 0.8];
        let z = ParamPoint::new(-0.6, 0.0, 1).unwrap();
        let f = fam.envelope_constraints(&x, &z).unwrap();
        assert!(f[0].abs() < 1e-14 && f[1].abs() < 1e-14, "{f:?}");
        // solver finds it from the multistart grid
        let roots = fam.solve_branch(&x, 1, &SolverConfig::default());
        assert_eq!(roots.len(), 1);
        assert!((roots[0].z[0] + 0.6).abs() < 1e-10);
        assert!(roots[0].z[1].abs() < 1e-10);
    }

    #[test]
    fn x_display_root_is_mirrored() {
        let fam = unit_family().with_variants(
            ConstraintVariant::PaperXDisplay,
            PVariant::Printed,
            RVariant::Printed,
        );
        let x = [0.0, 0.6, 0.0, 0.8];
        let roots = fam.solve_branch(&x, 1, &SolverConfig::default());
        assert_eq!(roots.len(), 1);
        assert!((roots[0].z[0] - 0.6).abs() < 1e-10);
    }

    #[test]
    fn jacobian_matches_fd() {
        let fam = Family3D::from_text("1 + 0.2*z1 - 0.1*z2^2", "0.1*z1^2 + 0.3*z1*z2").unwrap();
        let x = [0.3, -0.2, 0.5, 0.9];
        let z0 = [0.2, -0.3];
        let h = 1e-6;
        let at = |zz: [f64; 2]| {
            let z = ParamPoint::new(zz[0], zz[1], 1).unwrap();
            fam.envelope_constraints(&x, &z).unwrap()
        };
        let (_, jac) = fam
            .constraints_and_jacobian(&x, &ParamPoint::new(z0[0], z0[1], 1).unwrap())
            .unwrap();
        for j in 0..2 {
            let mut zp = z0;
            let mut zm = z0;
            zp[j] += h;
            zm[j] -= h;
            let (fp, fm) = (at(zp), at(zm));
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((jac[i][j] - fd).abs() < 1e-7, "J[{i}][{j}] {} vs {}", jac[i][j], fd);
            }
        }
    }

    #[test]
    fn closure_p_examples() {
        let z = ParamPoint::new(0.0, 0.0, 1).unwrap();
        let fam = unit_family();
        assert_eq!(fam.closure_p(&z, PVariant::Printed).unwrap(), 0.5);
        assert_eq!(fam.closure_p(&z, PVariant::NoCross).unwrap(), 0.5);
        // g = a + b z1: both variants ½(a² − b²)
        let fam2 = Family3D::from_text("1.1 + 0.3*z1", "0").unwrap();
        let zq = ParamPoint::new(0.2, -0.4, 1).unwrap();
        let want = 0.5 * (1.1f64.powi(2) - 0.09);
        assert!((fam2.closure_p(&zq, PVariant::Printed).unwrap() - want).abs() < 1e-14);
        assert!((fam2.closure_p(&zq, PVariant::NoCross).unwrap() - want).abs() < 1e-14);
        // g = z1 + z2 violates the g-floor but the formulas are pure algebra
        let g = parse("z1 + z2", &["z1", "z2"]).unwrap();
        let k = parse("0", &["z1", "z2"]).unwrap();
        let fam3 = Family3D::with_g_min(g, k, 0.0).unwrap();
        assert_eq!(fam3.closure_p(&z, PVariant::Printed).unwrap(), -0.5);
        assert_eq!(fam3.closure_p(&z, PVariant::NoCross).unwrap(), -1.0);
    }

    #[test]
    fn closure_r_examples() {
        // k ≡ 0: every variant gives r_base
        let fam = Family3D::from_text("1 + 0.1*z1", "0").unwrap().with_r_base(0.7);
        let z = ParamPoint::new(0.4, -0.2, 1).unwrap();
        for v in [RVariant::Printed, RVariant::Sym, RVariant::Diag, RVariant::FiberExact] {
            assert!((fam.closure_r(&z, v).unwrap() - 0.7).abs() < 1e-12);
        }
        // k = z1², g ≡ 1: r_{z1} = −2 z1 → r = −z1²
        let fam2 = Family3D::from_text("1", "z1^2").unwrap();
        let z2 = ParamPoint::new(0.5, 0.3, 1).unwrap();
        let r = fam2.closure_r(&z2, RVariant::Printed).unwrap();
        assert!((r + 0.25).abs() < 1e-10, "r = {r}");
    }

    #[test]
    fn fiber_exact_matches_2d_closure_on_axis() {
        // on z2 = 0 with z2-independent g, k the exact gradient reduces to
        // r' = −k''(z g + (1 − z²) g')
        let fam = Family3D::from_text("1 + 0.2*z1", "0.3*z1^2 + 0.1*z1^3").unwrap();
        let z1 = 0.35;
        let grad = fam.r_gradient(z1, 0.0, RVariant::FiberExact).unwrap();
        let g = 1.0 + 0.2 * z1;
        let gp = 0.2;
        let kpp = 0.6 + 0.6 * z1;
        let want = -kpp * (z1 * g + (1.0 - z1 * z1) * gp);
        assert!((grad[0] - want).abs() < 1e-14, "{} vs {want}", grad[0]);
    }

    #[test]
    fn v_of_and_grad_u_closed_form() {
        let fam = unit_family();
        let x = [0.0, 0.6, 0.0, 0.8];
        let z = ParamPoint::new(-0.6, 0.0, 1).unwrap();
        let u = fam.u_of(&x, &z).unwrap();
        let v = fam.v_of(&x, &z, u).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let gu = fam.analytic_grad_u(&z).unwrap();
        assert_eq!(gu, [-1.0, -0.6, 0.0, -0.8]);
        assert!(minkowski_dot(&gu, &gu).abs() < 1e-15);
    }

    #[test]
    fn grad_u_null_for_any_g() {
        let fam = Family3D::from_text("2", "0").unwrap();
        let z = ParamPoint::new(0.6, 0.0, 1).unwrap();
        let gu = fam.analytic_grad_u(&z).unwrap();
        assert_eq!(gu, [-0.5, 0.3, 0.0, -0.4]);
        let z0 = ParamPoint::new(0.0, 0.0, 1).unwrap();
        let gu0 = fam.analytic_grad_u(&z0).unwrap();
        assert!(minkowski_dot(&gu0, &gu0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_closed_form_family() {
        let fam = unit_family();
        let opts = EvalOptions::default();
        let res = fam.evaluate(&[0.0, 0.6, 0.0, 0.8], &opts).unwrap();
        assert_eq!(res.len(), 1);
        let r = &res[0];
        assert!((r.u + 1.0).abs() < 1e-9, "u = {}", r.u);
        assert!((r.v - 0.5).abs() < 1e-9, "v = {}", r.v);
        assert!(r.residuals.max_abs() < 1e-6, "{:?}", r.residuals);

        let res2 = fam.evaluate(&[0.3, 0.0, 0.0, 1.0], &opts).unwrap();
        assert_eq!(res2.len(), 1);
        assert!((res2[0].u + 1.3).abs() < 1e-9);
        assert!((res2[0].v - 0.35).abs() < 1e-9);
    }

    #[test]
    fn evaluate_rejects_degenerate_x3() {
        let fam = unit_family();
        let err = fam.evaluate(&[0.0, 0.0, 0.0, 0.0], &EvalOptions::default());
        assert!(matches!(err, Err(FamilyError::DegenerateX3 { .. })));
    }

    #[test]
    fn branch_symmetry() {
        // flipping the s-branch, z -> -z and (x1,x2,x3) -> -(x1,x2,x3)
        // reproduces the same u
        let fam = Family3D::from_text("1 + 0.1*z1^2", "0.2*z2^2").unwrap();
        let opts = EvalOptions { both_branches: true, ..EvalOptions::default() };
        let x = [0.2, 0.3, -0.1, 0.9];
        let xr = [0.2, -0.3, 0.1, -0.9];
        let a = fam.evaluate(&x, &opts).unwrap();
        let b = fam.evaluate(&xr, &opts).unwrap();
        assert!(!a.is_empty() && !b.is_empty());
        for ra in &a {
            let found = b.iter().any(|rb| {
                (rb.z.z1 + ra.z.z1).abs() < 1e-8
                    && (rb.z.z2 + ra.z.z2).abs() < 1e-8
                    && (rb.z.s + ra.z.s).abs() < 1e-8
                    && (rb.u - ra.u).abs() < 1e-8
            });
            assert!(found, "no mirror branch for {:?}", ra.z);
        }
    }

    #[test]
    fn fd_grad_u_matches_analytic() {
        let fam = Family3D::from_text("1 + 0.15*z1 - 0.05*z2", "0.1*z1*z2").unwrap();
        let opts = EvalOptions::default();
        let res = fam.evaluate(&[0.1, 0.4, -0.3, 0.8], &opts).unwrap();
        assert!(!res.is_empty());
        let r = &res[0];
        // re-derive FD grad of u for comparison with the analytic formula
        let h = 1e-5;
        for mu in 0..4 {
            let mut xp = r.x;
            let mut xm = r.x;
            xp[mu] += h;
            xm[mu] -= h;
            let (up, _) = fam.uv_resolved(&xp, &r.z, &opts.solver).unwrap();
            let (um, _) = fam.uv_resolved(&xm, &r.z, &opts.solver).unwrap();
            let fd = (up - um) / (2.0 * h);
            assert!(
                (fd - r.grad_u[mu]).abs() < 1e-5,
                "mu={mu}: fd {fd} vs analytic {}",
                r.grad_u[mu]
            );
        }
    }

    #[test]
    fn family_invariant_rejects_small_g() {
        assert!(matches!(
            Family3D::from_text("z1", "0"),
            Err(FamilyError::GTooSmall { .. })
        ));
    }

    #[test]
    fn grid_eval_matches_seq() {
        let fam = unit_family();
        let axes = [
            Axis { min: 0.0, max: 0.5, count: 2 },
            Axis { min: 0.3, max: 0.3, count: 1 },
            Axis { min: -0.2, max: -0.2, count: 1 },
            Axis { min: 0.5, max: 1.0, count: 2 },
        ];
        let opts = EvalOptions::default();
        let par = grid_eval(&fam, &axes, &opts);
        let seq = grid_eval_seq(&fam, &axes, &opts);
        assert_eq!(par.len(), 4);
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.results.len(), b.results.len());
            for (ra, rb) in a.results.iter().zip(&b.results) {
                assert_eq!(ra.u.to_bits(), rb.u.to_bits());
                assert_eq!(ra.v.to_bits(), rb.v.to_bits());
            }
        }
    }

    #[test]
    fn adaptive_quadrature_basics() {
        let f = |t: f64| Some(t.cos());
        let v = adaptive_gl(&f, 0.0, 1.0, 1e-13).unwrap();
        assert!((v - 1.0f64.sin()).abs() < 1e-12);
        // oriented interval
        let v2 = adaptive_gl(&f, 1.0, 0.0, 1e-13).unwrap();
        assert!((v2 + 1.0f64.sin()).abs() < 1e-12);
    }
}
