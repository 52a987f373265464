//! Classical solvers used as oracles: an explicit finite-difference heat
//! solver, fixed-step RK4, and plain Monte Carlo integration.

use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Explicit FTCS solution on an `(M+1) × (N+1)` grid, one row per time level.
#[derive(Clone, Debug)]
pub struct FdGrid {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    pub alpha: f64,
    /// `u[j][i]` is the value at time `t[j]`, position `x[i]`.
    pub u: Vec<Vec<f64>>,
}

impl FdGrid {
    pub fn n_space(&self) -> usize {
        self.x.len() - 1
    }

    pub fn n_time(&self) -> usize {
        self.t.len() - 1
    }

    pub fn max_abs_error(&self, exact: impl Fn(f64, f64) -> f64) -> f64 {
        let mut worst = 0.0f64;
        for (j, row) in self.u.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                worst = worst.max((v - exact(self.x[i], self.t[j])).abs());
            }
        }
        worst
    }
}

/// Smallest number of time steps that keeps `Δt/Δx² ≤ 1/2`.
pub fn stable_time_steps(x_lo: f64, x_hi: f64, t_max: f64, n: usize) -> usize {
    let dx = (x_hi - x_lo) / n as f64;
    (2.0 * t_max / (dx * dx)).ceil() as usize
}

/// Time steps giving `α` as close to `target` as possible without exceeding it.
pub fn time_steps_for_alpha(x_lo: f64, x_hi: f64, t_max: f64, n: usize, target: f64) -> usize {
    let dx = (x_hi - x_lo) / n as f64;
    (t_max / (target * dx * dx)).ceil() as usize
}

/// `u_{i,j+1} = u_{i,j} + α (u_{i+1,j} − 2u_{i,j} + u_{i−1,j})` with both
/// ends pinned to `bc` at every level.
pub fn fd_heat_solve(
    x_lo: f64,
    x_hi: f64,
    t_max: f64,
    n: usize,
    m: usize,
    initial: impl Fn(f64) -> f64,
    bc: (f64, f64),
) -> Result<FdGrid> {
    if n < 2 || m < 1 {
        return Err(Error::Domain(format!("grid needs N ≥ 2 and M ≥ 1, got N={n}, M={m}")));
    }
    if !(x_lo < x_hi) || !(t_max > 0.0) {
        return Err(Error::Domain("empty space-time domain".into()));
    }
    let dx = (x_hi - x_lo) / n as f64;
    let dt = t_max / m as f64;
    let alpha = dt / (dx * dx);
    if alpha > 0.5 {
        return Err(Error::Unstable {
            alpha,
            suggested_steps: stable_time_steps(x_lo, x_hi, t_max, n),
        });
    }
    let x: Vec<f64> = (0..=n).map(|i| x_lo + i as f64 * dx).collect();
    let t: Vec<f64> = (0..=m).map(|j| j as f64 * dt).collect();
    let mut u = Vec::with_capacity(m + 1);
    let mut cur: Vec<f64> = x.iter().map(|&xi| initial(xi)).collect();
    cur[0] = bc.0;
    cur[n] = bc.1;
    u.push(cur.clone());
    for _ in 0..m {
        let mut next = vec![0.0; n + 1];
        next[0] = bc.0;
        next[n] = bc.1;
        for i in 1..n {
            next[i] = cur[i] + alpha * (cur[i + 1] - 2.0 * cur[i] + cur[i - 1]);
        }
        u.push(next.clone());
        cur = next;
    }
    Ok(FdGrid { x, t, dx, dt, alpha, u })
}

/// One classic fourth-order Runge-Kutta step.
pub fn rk4_step<const D: usize>(f: &impl Fn(f64, &[f64; D]) -> [f64; D], t: f64, y: &[f64; D], h: f64) -> [f64; D] {
    let shift = |base: &[f64; D], k: &[f64; D], c: f64| -> [f64; D] { std::array::from_fn(|i| base[i] + c * k[i]) };
    let k1 = f(t, y);
    let k2 = f(t + h / 2.0, &shift(y, &k1, h / 2.0));
    let k3 = f(t + h / 2.0, &shift(y, &k2, h / 2.0));
    let k4 = f(t + h, &shift(y, &k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// `steps + 1` states on a uniform grid over `[0, t_max]`.
pub fn rk4<const D: usize>(
    f: impl Fn(f64, &[f64; D]) -> [f64; D],
    y0: [f64; D],
    t_max: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<[f64; D]>)> {
    if steps == 0 {
        return Err(Error::Domain("RK4 needs at least one step".into()));
    }
    let h = t_max / steps as f64;
    let mut ts = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut y = y0;
    ts.push(0.0);
    ys.push(y);
    for k in 0..steps {
        let t = k as f64 * h;
        y = rk4_step(&f, t, &y, h);
        ts.push((k + 1) as f64 * h);
        ys.push(y);
    }
    Ok((ts, ys))
}

/// FitzHugh-Nagumo constants and initial state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FhnParams {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub i_ext: f64,
    pub y0: f64,
    pub w0: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.8,
            tau: 2.5,
            i_ext: 0.5,
            y0: 0.0,
            w0: 0.0,
        }
    }
}

impl FhnParams {
    /// `(dy/dt, dw/dt)`.
    pub fn rhs(&self, y: f64, w: f64) -> [f64; 2] {
        [
            y - y * y * y / 3.0 - w + self.i_ext,
            (y + self.alpha - self.beta * w) / self.tau,
        ]
    }

    /// Intersection of the two nullclines, by Newton on the cubic
    /// `y − y³/3 − (y + α)/β + I = 0`.
    pub fn fixed_point(&self) -> (f64, f64) {
        let mut y = -1.0;
        for _ in 0..100 {
            let f = y - y * y * y / 3.0 - (y + self.alpha) / self.beta + self.i_ext;
            let df = 1.0 - y * y - 1.0 / self.beta;
            let step = f / df;
            y -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        (y, (y + self.alpha) / self.beta)
    }
}

/// Trajectory `(t, y, w)` of the FitzHugh-Nagumo system.
#[derive(Clone, Debug)]
pub struct FhnTrajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

pub const FHN_DEFAULT_STEPS: usize = 3000;

pub fn rk4_fhn(params: &FhnParams, t_max: f64, steps: usize) -> Result<FhnTrajectory> {
    let (t, states) = rk4(
        |_, s: &[f64; 2]| params.rhs(s[0], s[1]),
        [params.y0, params.w0],
        t_max,
        steps,
    )?;
    Ok(FhnTrajectory {
        t,
        y: states.iter().map(|s| s[0]).collect(),
        w: states.iter().map(|s| s[1]).collect(),
    })
}

/// FitzHugh-Nagumo state at arbitrary times, each reached by RK4 from the
/// initial state with step at most `h_max`.
pub fn fhn_at(params: &FhnParams, times: &[f64], h_max: f64) -> Vec<[f64; 2]> {
    let f = |_: f64, s: &[f64; 2]| params.rhs(s[0], s[1]);
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out = vec![[0.0; 2]; times.len()];
    let (mut t, mut s) = (0.0, [params.y0, params.w0]);
    for i in order {
        let target = times[i];
        let gap = target - t;
        if gap > 0.0 {
            let steps = (gap / h_max).ceil().max(1.0) as usize;
            let h = gap / steps as f64;
            for k in 0..steps {
                s = rk4_step(&f, t + k as f64 * h, &s, h);
            }
            t = target;
        }
        out[i] = s;
    }
    out
}

/// `(b − a)/k · Σ f(x_j)` with `x_j ∼ U(a, b)`.
pub fn mc_integrate(rng: &mut Rng, f: impl Fn(f64) -> f64, a: f64, b: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("Monte Carlo needs at least one sample".into()));
    }
    if !(a < b) {
        return Err(Error::Domain(format!("empty interval [{a}, {b}]")));
    }
    let sum: f64 = (0..k).map(|_| f(a + (b - a) * rng.next_f64())).sum();
    Ok((b - a) / k as f64 * sum)
}
