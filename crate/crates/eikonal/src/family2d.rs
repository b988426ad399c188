//! The 2+1D (two space variables) rank-1 parametric solution family.
//!
//! Three generating functions g(z), k(z), h(z) of a scalar parameter
//! z ∈ (−1, 1) define an implicit equation for z(x); on each branch
//!
//! ```text
//! u = (x1 + x2 z/sqrt(1-z²) - k') / g'
//! v = g x2 / sqrt(1-z²) + p u + r
//! p = ½(-g'² + (g - z g')²),   r' = -k'' (z g + (1-z²) g')
//! ```
//!
//! solve u_mu u_mu = 0, v_mu v_mu = 0, u_mu v_mu = 1 with signature (+,-,-).
//!
//! The display is evaluated exactly as printed, but it only solves the
//! system when the generating functions are compatible. Writing the
//! implicit equation as Φ(x, z) = 0, its z-derivative is
//! Φ_z = g u_z − k' − h', and expanding the u-eikonal residual on the
//! surface gives
//!
//! ```text
//! u_mu u_mu = -(Φ_z − g u_z)² / ((1−z²) g'² Φ_z²) = -(k' + h')² / ((1−z²) g'² Φ_z²)
//! ```
//!
//! so the residuals vanish identically iff k + h is constant (h = c − k).
//! Incompatible triples still produce branches; their residuals report the
//! defect instead of being suppressed.

use crate::expr::{parse, Expression, Jet2, ParseError};
use crate::family3d::{adaptive_gl, FamilyError};
use crate::numkernel::{brent1, minkowski_dot3, scan_brackets};

const GP_MIN_DEFAULT: f64 = 0.25;
const EDGE_EPS: f64 = 1e-6;
const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Family2D {
    g: Expression,
    k: Expression,
    h: Expression,
    pub r_base: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Eval2Options {
    /// Nodes for the dense root scan over (-1+eps, 1-eps).
    pub scan_n: usize,
    pub fd_step: f64,
    pub root_tol: f64,
    pub max_iter: usize,
}

impl Default for Eval2Options {
    fn default() -> Self {
        Eval2Options { scan_n: 400, fd_step: 1e-5, root_tol: 1e-13, max_iter: 100 }
    }
}

/// One solved branch of the scalar parameter at one 2+1D point.
#[derive(Debug, Clone, Copy)]
pub struct Eval2Result {
    pub x: [f64; 3],
    pub z: f64,
    pub u: f64,
    pub v: f64,
    pub grad_u: [f64; 3],
    pub grad_v: [f64; 3],
    pub res_uu: f64,
    pub res_vv: f64,
    pub res_uv_minus_1: f64,
    /// |implicit2| at the returned root.
    pub implicit_abs: f64,
    /// False when an FD stencil point failed to re-solve.
    pub branch_flag: bool,
}

fn parse_err(which: &'static str) -> impl FnOnce(ParseError) -> FamilyError {
    move |source| FamilyError::Parse { which, source }
}

impl Family2D {
    pub fn new(g: Expression, k: Expression, h: Expression) -> Result<Self, FamilyError> {
        Self::with_gp_min(g, k, h, GP_MIN_DEFAULT)
    }

    pub fn with_gp_min(
        g: Expression,
        k: Expression,
        h: Expression,
        gp_min: f64,
    ) -> Result<Self, FamilyError> {
        let mut min_abs = f64::INFINITY;
        for i in 0..41 {
            let z = -0.9 + 1.8 * (i as f64) / 40.0;
            let gj = g
                .eval_jet(&[z])
                .map_err(|source| FamilyError::Eval { which: "g", source })?;
            k.eval_jet(&[z])
                .map_err(|source| FamilyError::Eval { which: "k", source })?;
            h.eval_jet(&[z])
                .map_err(|source| FamilyError::Eval { which: "h", source })?;
            min_abs = min_abs.min(gj.grad[0].abs());
        }
        if min_abs < gp_min {
            return Err(FamilyError::GpTooSmall { min_abs, gp_min });
        }
        Ok(Family2D { g, k, h, r_base: 0.0 })
    }

    pub fn from_text(g: &str, k: &str, h: &str) -> Result<Self, FamilyError> {
        let g = parse(g, &["z"]).map_err(parse_err("g"))?;
        let k = parse(k, &["z"]).map_err(parse_err("k"))?;
        let h = parse(h, &["z"]).map_err(parse_err("h"))?;
        Self::new(g, k, h)
    }

    pub fn with_r_base(mut self, r_base: f64) -> Self {
        self.r_base = r_base;
        self
    }

    fn jets(&self, z: f64) -> Result<(Jet2, Jet2, Jet2), FamilyError> {
        if z.abs() >= 1.0 {
            return Err(FamilyError::OutsideInterval { z });
        }
        let gj = self
            .g
            .eval_jet(&[z])
            .map_err(|source| FamilyError::Eval { which: "g", source })?;
        let kj = self
            .k
            .eval_jet(&[z])
            .map_err(|source| FamilyError::Eval { which: "k", source })?;
        let hj = self
            .h
            .eval_jet(&[z])
            .map_err(|source| FamilyError::Eval { which: "h", source })?;
        Ok((gj, kj, hj))
    }

    /// The implicit branch equation:
    /// x0 − x1 z + x2 √(1−z²) + (g/g')(x1 + x2 z/√(1−z²) − k') − h.
    pub fn implicit2(&self, x: &[f64; 3], z: f64) -> Result<f64, FamilyError> {
        let (gj, kj, hj) = self.jets(z)?;
        if gj.grad[0] == 0.0 {
            return Err(FamilyError::SingularGp { z });
        }
        let w = (1.0 - z * z).sqrt();
        Ok(x[0] - x[1] * z + x[2] * w
            + (gj.value / gj.grad[0]) * (x[1] + x[2] * z / w - kj.grad[0])
            - hj.value)
    }

    /// u = (x1 + x2 z/√(1−z²) − k') / g'.
    pub fn u2_of(&self, x: &[f64; 3], z: f64) -> Result<f64, FamilyError> {
        let (gj, kj, _) = self.jets(z)?;
        if gj.grad[0] == 0.0 {
            return Err(FamilyError::SingularGp { z });
        }
        let w = (1.0 - z * z).sqrt();
        Ok((x[1] + x[2] * z / w - kj.grad[0]) / gj.grad[0])
    }

    /// Closure pair (p, r) at z; r by adaptive quadrature of
    /// r' = −k''(z g + (1−z²) g') from 0 with base value `r_base`.
    pub fn closure2(&self, z: f64) -> Result<(f64, f64), FamilyError> {
        let (gj, _, _) = self.jets(z)?;
        let (g, gp) = (gj.value, gj.grad[0]);
        let p = 0.5 * (-gp * gp + (g - z * gp) * (g - z * gp));
        let rp = |t: f64| {
            let (gj, kj, _) = self.jets(t).ok()?;
            Some(-kj.hess(0, 0) * (t * gj.value + (1.0 - t * t) * gj.grad[0]))
        };
        let r = self.r_base + adaptive_gl(&rp, 0.0, z, QUAD_TOL)?;
        Ok((p, r))
    }

    /// v = g x2/√(1−z²) + p u + r.
    pub fn v2_of(&self, x: &[f64; 3], z: f64, u: f64) -> Result<f64, FamilyError> {
        let (gj, _, _) = self.jets(z)?;
        let w = (1.0 - z * z).sqrt();
        let (p, r) = self.closure2(z)?;
        Ok(gj.value * x[2] / w + p * u + r)
    }

    /// All roots of [`Self::implicit2`] in (−1+eps, 1−eps), by dense scan
    /// plus Brent refinement.
    pub fn solve_z(&self, x: &[f64; 3], opts: &Eval2Options) -> Vec<f64> {
        let f = |z: f64| self.implicit2(x, z).ok().filter(|v| v.is_finite());
        let (lo, hi) = (-1.0 + EDGE_EPS, 1.0 - EDGE_EPS);
        let mut roots = Vec::new();
        for (a, b) in scan_brackets(lo, hi, opts.scan_n, &f) {
            if let Some(z) = brent1(a, b, &f, opts.root_tol, opts.max_iter) {
                roots.push(z);
            }
        }
        roots.sort_by(f64::total_cmp);
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        roots
    }

    /// Re-solve z near a known root for FD stencils.
    fn resolve_near(&self, x: &[f64; 3], z0: f64, opts: &Eval2Options) -> Option<f64> {
        let f = |z: f64| self.implicit2(x, z).ok().filter(|v| v.is_finite());
        let mut delta = 1e-3;
        while delta <= 0.2 {
            let a = (z0 - delta).max(-1.0 + EDGE_EPS);
            let b = (z0 + delta).min(1.0 - EDGE_EPS);
            if let (Some(fa), Some(fb)) = (f(a), f(b)) {
                if fa * fb <= 0.0 {
                    let z = brent1(a, b, &f, opts.root_tol, opts.max_iter)?;
                    if (z - z0).abs() < 0.05 {
                        return Some(z);
                    }
                    return None;
                }
            }
            delta *= 4.0;
        }
        None
    }

    /// Evaluate every branch at x: roots of implicit2, then u, v, FD
    /// gradients (signature (+,−,−)) with z re-solved per stencil point.
    pub fn evaluate2(&self, x: &[f64; 3], opts: &Eval2Options) -> Result<Vec<Eval2Result>, FamilyError> {
        let mut out = Vec::new();
        for z in self.solve_z(x, opts) {
            let u = self.u2_of(x, z)?;
            let v = self.v2_of(x, z, u)?;
            let implicit_abs = self.implicit2(x, z)?.abs();
            let h = opts.fd_step;
            let mut gu = [f64::NAN; 3];
            let mut gv = [f64::NAN; 3];
            let mut ok = true;
            for mu in 0..3 {
                let mut xp = *x;
                let mut xm = *x;
                xp[mu] += h;
                xm[mu] -= h;
                let stencil = |xx: &[f64; 3]| -> Option<(f64, f64)> {
                    let zs = self.resolve_near(xx, z, opts)?;
                    let us = self.u2_of(xx, zs).ok()?;
                    let vs = self.v2_of(xx, zs, us).ok()?;
                    Some((us, vs))
                };
                match (stencil(&xp), stencil(&xm)) {
                    (Some((up, vp)), Some((um, vm))) => {
                        gu[mu] = (up - um) / (2.0 * h);
                        gv[mu] = (vp - vm) / (2.0 * h);
                    }
                    _ => ok = false,
                }
            }
            out.push(Eval2Result {
                x: *x,
                z,
                u,
                v,
                grad_u: gu,
                grad_v: gv,
                res_uu: minkowski_dot3(&gu, &gu),
                res_vv: minkowski_dot3(&gv, &gv),
                res_uv_minus_1: minkowski_dot3(&gu, &gv) - 1.0,
                implicit_abs,
                branch_flag: ok,
            });
        }
        Ok(out)
    }
}
