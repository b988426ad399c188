//! Shared numerics: Minkowski products, damped Newton in two unknowns,
//! bracketed scalar root finding, and finite-difference gradients.

/// Minkowski inner product with signature (+,-,-,-).
#[inline]
pub fn minkowski_dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
}

/// 2+1 dimensional Minkowski inner product, signature (+,-,-).
#[inline]
pub fn minkowski_dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2]
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub tol_residual: f64,
    pub tol_step: f64,
    pub max_iter: usize,
    /// Step is halved at most this many times per iteration while the
    /// residual fails to decrease.
    pub max_halvings: usize,
    /// Reciprocal-condition floor; below this the Jacobian is treated as
    /// singular and the solve aborts.
    pub rcond_min: f64,
    /// Backtracking factor in (0,1) applied to the Newton step while the
    /// residual fails to decrease.
    pub damping: f64,
    /// Multistart seeds are laid on a uniform grid inside the square of this
    /// half-width.
    pub seed_grid_radius: f64,
    /// Seeds per axis for the multistart grid.
    pub seed_grid_count: usize,
    /// Roots closer than this in the parameter plane are merged.
    pub dedupe_distance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_residual: 1e-12,
            tol_step: 1e-13,
            max_iter: 50,
            max_halvings: 20,
            rcond_min: 1e-12,
            damping: 0.5,
            seed_grid_radius: 0.95,
            seed_grid_count: 7,
            dedupe_distance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    SingularJacobian,
    /// The iterate could not be kept inside the admissible domain.
    LeftDomain,
    /// The residual or Jacobian could not be evaluated at the iterate.
    EvalFailed,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOutcome {
    pub z: [f64; 2],
    pub residual_norm: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Starting point the iteration was seeded from.
    pub seed: [f64; 2],
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Damped Newton iteration for a 2x2 system `f(z) = 0`.
///
/// `f` returns the residual pair and the Jacobian rows; returning `None`
/// signals an evaluation failure (e.g. domain error). `project` clamps a
/// trial iterate back into the admissible set, or returns `None` if that is
/// impossible.
pub fn newton2<F, P>(mut z: [f64; 2], f: F, project: P, cfg: &SolverConfig) -> SolveOutcome
where
    F: Fn([f64; 2]) -> Option<([f64; 2], [[f64; 2]; 2])>,
    P: Fn([f64; 2]) -> Option<[f64; 2]>,
{
    let seed = z;
    let outcome = move |z, r, it, status| SolveOutcome {
        z,
        residual_norm: r,
        iterations: it,
        status,
        seed,
    };
    z = match project(z) {
        Some(z) => z,
        None => return outcome(z, f64::INFINITY, 0, SolveStatus::LeftDomain),
    };
    let (mut res, mut jac) = match f(z) {
        Some(v) => v,
        None => return outcome(z, f64::INFINITY, 0, SolveStatus::EvalFailed),
    };
    let mut rnorm = norm2(res);
    for it in 1..=cfg.max_iter {
        if rnorm <= cfg.tol_residual {
            return outcome(z, rnorm, it - 1, SolveStatus::Converged);
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let smax = jac
            .iter()
            .flatten()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        if smax == 0.0 || det.abs() / (smax * smax) < cfg.rcond_min {
            return outcome(z, rnorm, it, SolveStatus::SingularJacobian);
        }
        let dz = [
            -(jac[1][1] * res[0] - jac[0][1] * res[1]) / det,
            -(jac[0][0] * res[1] - jac[1][0] * res[0]) / det,
        ];
        let damp = cfg.damping;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial = [z[0] + lambda * dz[0], z[1] + lambda * dz[1]];
            let Some(trial) = project(trial) else {
                lambda *= damp;
                continue;
            };
            if let Some((r2, j2)) = f(trial) {
                let rn2 = norm2(r2);
                if rn2 < rnorm || rn2 <= cfg.tol_residual {
                    let step = norm2([trial[0] - z[0], trial[1] - z[1]]);
                    z = trial;
                    res = r2;
                    jac = j2;
                    rnorm = rn2;
                    accepted = true;
                    if step <= cfg.tol_step && rnorm > cfg.tol_residual {
                        // stalled short of the residual tolerance
                        return outcome(z, rnorm, it, SolveStatus::MaxIterations);
                    }
                    break;
                }
            }
            lambda *= damp;
        }
        if !accepted {
            // full line search failed; accept the damped step anyway only
            // if it evaluates, otherwise give up
            let trial = [z[0] + lambda * dz[0], z[1] + lambda * dz[1]];
            match project(trial).and_then(|t| f(t).map(|fj| (t, fj))) {
                Some((t, (r2, j2))) => {
                    z = t;
                    res = r2;
                    jac = j2;
                    rnorm = norm2(res);
                }
                None => return outcome(z, rnorm, it, SolveStatus::EvalFailed),
            }
        }
    }
    if rnorm <= cfg.tol_residual {
        outcome(z, rnorm, cfg.max_iter, SolveStatus::Converged)
    } else {
        outcome(z, rnorm, cfg.max_iter, SolveStatus::MaxIterations)
    }
}

/// Multistart Newton over a uniform seed grid: `seed_grid_count`² seeds in
/// the square of half-width `seed_grid_radius`, restricted to seeds the
/// projection leaves unchanged. Converged roots are deduplicated within
/// `dedupe_distance` and returned sorted by final residual norm.
pub fn solve_all_2d<F, P>(f: F, project: P, cfg: &SolverConfig) -> Vec<SolveOutcome>
where
    F: Fn([f64; 2]) -> Option<([f64; 2], [[f64; 2]; 2])>,
    P: Fn([f64; 2]) -> Option<[f64; 2]>,
{
    let n = cfg.seed_grid_count.max(1);
    let r = cfg.seed_grid_radius;
    let mut roots: Vec<SolveOutcome> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let seed = if n == 1 {
                [0.0, 0.0]
            } else {
                [
                    -r + 2.0 * r * (i as f64) / ((n - 1) as f64),
                    -r + 2.0 * r * (j as f64) / ((n - 1) as f64),
                ]
            };
            if project(seed) != Some(seed) {
                continue;
            }
            let out = newton2(seed, &f, &project, cfg);
            if out.converged() {
                roots.push(out);
            }
        }
    }
    // deterministic merge: best residual first, then lexicographic z
    roots.sort_by(|a, b| {
        a.residual_norm
            .total_cmp(&b.residual_norm)
            .then(a.z[0].total_cmp(&b.z[0]))
            .then(a.z[1].total_cmp(&b.z[1]))
    });
    let mut kept: Vec<SolveOutcome> = Vec::new();
    for cand in roots {
        let dup = kept.iter().any(|k| {
            (k.z[0] - cand.z[0]).hypot(k.z[1] - cand.z[1]) < cfg.dedupe_distance
        });
        if !dup {
            kept.push(cand);
        }
    }
    kept
}

/// Brent's method on a bracketing interval `[a, b]` with `f(a)*f(b) <= 0`.
/// Returns `None` if the interval does not bracket a sign change.
pub fn brent1<F: Fn(f64) -> Option<f64>>(
    mut a: f64,
    mut b: f64,
    f: &F,
    tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa * fb > 0.0 {
        return None;
    }
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    let (mut c, mut fc) = (a, fa);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..max_iter {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic interpolation / secant
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Some(b)
}

/// Scan `[lo, hi]` with `n` uniform sub-intervals and return every
/// sub-interval whose endpoints bracket a sign change of `f`. Points where
/// `f` fails to evaluate break the scan into independent pieces.
pub fn scan_brackets<F: Fn(f64) -> Option<f64>>(lo: f64, hi: f64, n: usize, f: &F) -> Vec<(f64, f64)> {
    assert!(n >= 1 && hi > lo);
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let x = lo + (hi - lo) * (i as f64) / (n as f64);
        match f(x) {
            Some(fx) if fx.is_finite() => {
                if let Some((px, pfx)) = prev {
                    if pfx * fx < 0.0 {
                        out.push((px, x));
                    }
                }
                if fx == 0.0 {
                    // exact root at a node: degenerate bracket, reported once
                    out.push((x, x));
                }
                prev = Some((x, fx));
            }
            _ => prev = None,
        }
    }
    out
}

/// Fourth central-difference gradient of a scalar function of four
/// coordinates. Each component uses the same step `h`.
pub fn fd_gradient4<F: Fn(&[f64; 4]) -> Option<f64>>(f: &F, x: &[f64; 4], h: f64) -> Option<[f64; 4]> {
    let mut g = [0.0; 4];
    for i in 0..4 {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Some(g)
}

/// Central-difference gradient in 2+1 dimensions.
pub fn fd_gradient3<F: Fn(&[f64; 3]) -> Option<f64>>(f: &F, x: &[f64; 3], h: f64) -> Option<[f64; 3]> {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Some(g)
}
