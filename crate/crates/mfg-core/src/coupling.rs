//! Local coupling costs, the kinetic-energy integrand and the pointwise
//! proximal map used by the primal-dual iteration.

use std::sync::Arc;

use crate::error::MfgError;
use crate::grid::{FluxField, GridSpec, ScalarField};

type CostEval = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Running and terminal costs of the local coupling, together with the
/// potential sampled at the grid nodes.
///
/// Evaluators take the flat spatial index `i * N_h + j` and the density
/// value. `f` must be non-decreasing in the density on m >= 0 (this is
/// what makes the pointwise prox have a unique root); `f_integral` and
/// `g_integral` are the antiderivatives vanishing at zero.
#[derive(Clone)]
pub struct CouplingSpec {
    /// Cost exponent, shared with the grid.
    pub q: f64,
    /// Potential at the grid nodes, row-major.
    pub hbar: Arc<Vec<f64>>,
    f: CostEval,
    f_integral: CostEval,
    g: CostEval,
    g_integral: CostEval,
}

impl std::fmt::Debug for CouplingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CouplingSpec")
            .field("q", &self.q)
            .field("hbar_len", &self.hbar.len())
            .finish()
    }
}

impl CouplingSpec {
    pub fn new(
        q: f64,
        hbar: Vec<f64>,
        f: CostEval,
        f_integral: CostEval,
        g: CostEval,
        g_integral: CostEval,
    ) -> Self {
        Self { q, hbar: Arc::new(hbar), f, f_integral, g, g_integral }
    }

    /// Crowd-averse running cost f(x, m) = m^2 - hbar(x) with zero
    /// terminal cost.
    pub fn quadratic_congestion(q: f64, hbar: Vec<f64>) -> Self {
        let hb = Arc::new(hbar);
        let hb_f = hb.clone();
        let hb_int = hb.clone();
        Self {
            q,
            hbar: hb,
            f: Arc::new(move |x, m| m * m - hb_f[x]),
            f_integral: Arc::new(move |x, m| m * m * m / 3.0 - hb_int[x] * m),
            g: Arc::new(|_, _| 0.0),
            g_integral: Arc::new(|_, _| 0.0),
        }
    }

    /// The reference potential sin(2 pi y) + sin(2 pi x) + cos(2 pi x)
    /// sampled on the grid, paired with the quadratic congestion cost.
    pub fn sincos(grid: &GridSpec) -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        let n = grid.n_h;
        let mut hbar = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (x, y) = grid.node(i, j);
                hbar[i * n + j] = (two_pi * y).sin() + (two_pi * x).sin() + (two_pi * x).cos();
            }
        }
        Self::quadratic_congestion(grid.q, hbar)
    }

    /// Cost-free coupling, for fixed-point checks.
    pub fn free(q: f64, n: usize) -> Self {
        Self {
            q,
            hbar: Arc::new(vec![0.0; n * n]),
            f: Arc::new(|_, _| 0.0),
            f_integral: Arc::new(|_, _| 0.0),
            g: Arc::new(|_, _| 0.0),
            g_integral: Arc::new(|_, _| 0.0),
        }
    }

    #[inline]
    pub fn f(&self, x: usize, m: f64) -> f64 {
        (self.f)(x, m)
    }

    #[inline]
    pub fn f_integral(&self, x: usize, m: f64) -> f64 {
        (self.f_integral)(x, m)
    }

    #[inline]
    pub fn g(&self, x: usize, m: f64) -> f64 {
        (self.g)(x, m)
    }

    #[inline]
    pub fn g_integral(&self, x: usize, m: f64) -> f64 {
        (self.g_integral)(x, m)
    }

    /// Sample-based check that the running cost is non-decreasing in m.
    pub fn check_monotone(&self, m_max: f64, samples: usize) -> Result<(), MfgError> {
        for x in [0usize, self.hbar.len() / 2, self.hbar.len().saturating_sub(1)] {
            let mut prev = self.f(x, 0.0);
            for s in 1..=samples {
                let m = m_max * s as f64 / samples as f64;
                let cur = self.f(x, m);
                if cur < prev - 1e-12 {
                    return Err(MfgError::InvalidParameter(format!(
                        "running cost decreases in m near m = {m:.4} at x = {x}"
                    )));
                }
                prev = cur;
            }
        }
        Ok(())
    }
}

/// Orthogonal projection onto K = R+ x R- x R+ x R-.
#[inline]
pub fn project_onto_cone(v: [f64; 4]) -> [f64; 4] {
    [v[0].max(0.0), v[1].min(0.0), v[2].max(0.0), v[3].min(0.0)]
}

#[inline]
fn norm4(v: [f64; 4]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt()
}

/// Kinetic-energy integrand |w|^q / (q m^{q-1}), extended by 0 at the
/// origin and +inf outside its domain (m > 0 with w in K, or (0, 0)).
pub fn kinetic_cost(m: f64, w: [f64; 4], q: f64) -> f64 {
    let in_cone = w[0] >= 0.0 && w[1] <= 0.0 && w[2] >= 0.0 && w[3] <= 0.0;
    if m > 0.0 && in_cone {
        norm4(w).powf(q) / (q * m.powf(q - 1.0))
    } else if m == 0.0 && w == [0.0; 4] {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Full primal objective: kinetic term paired as (m^k, w^{k-1}) plus the
/// running cost over k = 1..N_T and the terminal cost weighted by 1/dt.
pub fn eval_objective(
    m: &ScalarField,
    w: &FluxField,
    coupling: &CouplingSpec,
    grid: &GridSpec,
) -> f64 {
    assert_eq!(m.slices(), grid.n_t + 1);
    assert_eq!(w.steps(), grid.n_t);
    let n = grid.n_h;
    let mut total = 0.0;
    for k in 1..=grid.n_t {
        for i in 0..n {
            for j in 0..n {
                let x = i * n + j;
                let mv = m.at(k, i, j);
                total += kinetic_cost(mv, w.at(k - 1, i, j), coupling.q);
                total += if mv >= 0.0 { coupling.f_integral(x, mv) } else { f64::INFINITY };
                if k == grid.n_t {
                    total += if mv >= 0.0 {
                        coupling.g_integral(x, mv) / grid.dt()
                    } else {
                        f64::INFINITY
                    };
                }
                if total == f64::INFINITY {
                    return f64::INFINITY;
                }
            }
        }
    }
    total
}

/// Result of the pointwise proximal map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxPointResult {
    pub m: f64,
    pub w: [f64; 4],
    pub converged: bool,
    pub iterations: usize,
}

/// Scalar optimality function of the reduced prox problem, for q = 2:
/// r(m) = -|P_K(wbar)|^2 / (2 (m + tau)^2) + f(x, m) [+ g(x, m)/dt]
///        + (m - mbar)/tau.
/// Strictly increasing on m >= 0 for non-decreasing costs.
struct ProxScalar<'a> {
    pk_norm_sq: f64,
    mbar: f64,
    tau: f64,
    x: usize,
    terminal_weight: f64, // 0 or 1/dt
    coupling: &'a CouplingSpec,
    q: f64,
}

impl ProxScalar<'_> {
    fn eval(&self, m: f64) -> f64 {
        let kinetic = if self.q == 2.0 {
            let d = m + self.tau;
            -self.pk_norm_sq / (2.0 * d * d)
        } else {
            // Envelope derivative of the reduced kinetic term for general q:
            // -((q-1)/q) |w*(m)|^q / m^q with |w*(m)| from the shrink equation.
            let rho = self.flux_magnitude(m);
            if m > 0.0 {
                -((self.q - 1.0) / self.q) * (rho / m).powf(self.q)
            } else {
                let pk = self.pk_norm_sq.sqrt();
                -((self.q - 1.0) / self.q) * (pk / self.tau).powf(self.q / (self.q - 1.0))
            }
        };
        kinetic
            + self.coupling.f(self.x, m)
            + self.terminal_weight * self.coupling.g(self.x, m)
            + (m - self.mbar) / self.tau
    }

    /// |w*(m)|: for q = 2 the closed-form shrink, otherwise the root of
    /// rho (1 + tau rho^{q-2} / m^{q-1}) = |P_K(wbar)|, monotone in rho.
    fn flux_magnitude(&self, m: f64) -> f64 {
        let pk = self.pk_norm_sq.sqrt();
        if pk == 0.0 || m == 0.0 {
            return 0.0;
        }
        if self.q == 2.0 {
            return pk * m / (m + self.tau);
        }
        let shrink = |rho: f64| rho * (1.0 + self.tau * rho.powf(self.q - 2.0) / m.powf(self.q - 1.0));
        let (mut lo, mut hi) = (0.0f64, pk);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if shrink(mid) < pk {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Pointwise proximal map of the kinetic + coupling cost at one node.
///
/// Returns the minimizer over m >= 0, w in K of
///   kinetic(m, w) + F(x, m) [+ G(x, m)/dt] + (|m - mbar|^2 + |w - wbar|^2) / (2 tau).
/// The flux is eliminated first (its optimum shrinks the cone projection
/// of wbar toward zero), leaving one increasing scalar equation in m that
/// is bracketed, bisected and polished with safeguarded Newton steps.
pub fn prox_point(
    mbar: f64,
    wbar: [f64; 4],
    tau: f64,
    x_index: usize,
    is_terminal: bool,
    coupling: &CouplingSpec,
    grid: &GridSpec,
) -> Result<ProxPointResult, MfgError> {
    assert!(tau > 0.0, "tau must be positive");
    let pk = project_onto_cone(wbar);
    let pk_norm_sq = pk.iter().map(|v| v * v).sum::<f64>();
    let scalar = ProxScalar {
        pk_norm_sq,
        mbar,
        tau,
        x: x_index,
        terminal_weight: if is_terminal { 1.0 / grid.dt() } else { 0.0 },
        coupling,
        q: coupling.q,
    };

    let r0 = scalar.eval(0.0);
    if r0 >= 0.0 {
        return Ok(ProxPointResult { m: 0.0, w: [0.0; 4], converged: true, iterations: 0 });
    }

    // Bracket: geometric growth from a scale set by the data. The
    // formula can land negative for negative mbar; the root of the
    // increasing r lies in (0, inf), so clamp the start to positive.
    let mut hi = (mbar
        + tau * (coupling.f(x_index, 0.0).abs() + pk_norm_sq.sqrt() / (2.0 * tau).sqrt() + 1.0))
        .max(tau);
    let mut growth = 0;
    while scalar.eval(hi) <= 0.0 {
        hi *= 2.0;
        growth += 1;
        if growth > 200 {
            return Err(MfgError::RootFind(format!(
                "no sign change up to m = {hi:.3e} (r = {:.3e})",
                scalar.eval(hi)
            )));
        }
    }

    let tol_r = 1e-12 * (1.0 + r0.abs());
    let mut lo = 0.0f64;
    let mut m = 0.5 * hi;
    let mut iterations = growth;
    for _ in 0..60 {
        m = 0.5 * (lo + hi);
        let r = scalar.eval(m);
        iterations += 1;
        if r.abs() <= tol_r {
            break;
        }
        if r < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    // Newton polish with a centered finite-difference slope, kept inside
    // the bracket.
    for _ in 0..5 {
        let r = scalar.eval(m);
        if r.abs() <= tol_r {
            break;
        }
        let delta = 1e-7 * (1.0 + m);
        let slope = (scalar.eval(m + delta) - scalar.eval(m - delta)) / (2.0 * delta);
        iterations += 1;
        if slope <= 0.0 {
            break;
        }
        let next = m - r / slope;
        if next <= lo || next >= hi {
            break;
        }
        m = next;
    }

    let w = if coupling.q == 2.0 {
        let shrink = m / (m + tau);
        [pk[0] * shrink, pk[1] * shrink, pk[2] * shrink, pk[3] * shrink]
    } else {
        let rho = scalar.flux_magnitude(m);
        let pk_norm = pk_norm_sq.sqrt();
        if pk_norm == 0.0 {
            [0.0; 4]
        } else {
            let s = rho / pk_norm;
            [pk[0] * s, pk[1] * s, pk[2] * s, pk[3] * s]
        }
    };
    Ok(ProxPointResult { m, w, converged: true, iterations })
}

/// Field-wide proximal map: applies `prox_point` at every node, pairing
/// density slice k with flux slice k-1 for k = 1..N_T and flagging the
/// terminal slice. The k = 0 density slice carries no cost term, so it
/// passes through unchanged.
pub fn prox_phi(
    m: &ScalarField,
    w: &FluxField,
    tau: f64,
    coupling: &CouplingSpec,
    grid: &GridSpec,
) -> Result<(ScalarField, FluxField), MfgError> {
    assert_eq!(m.slices(), grid.n_t + 1);
    assert_eq!(w.steps(), grid.n_t);
    let n = grid.n_h;
    let mut m_out = m.clone();
    let mut w_out = grid.flux_field();
    for k in 1..=grid.n_t {
        let terminal = k == grid.n_t;
        for i in 0..n {
            for j in 0..n {
                let r = prox_point(
                    m.at(k, i, j),
                    w.at(k - 1, i, j),
                    tau,
                    i * n + j,
                    terminal,
                    coupling,
                    grid,
                )?;
                m_out.set(k, i, j, r.m);
                w_out.set(k - 1, i, j, r.w);
            }
        }
    }
    Ok((m_out, w_out))
}
