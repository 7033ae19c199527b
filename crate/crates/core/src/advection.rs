//! `u_t + u_x + u_y = 0` on a multi-element mesh with upwind boundary
//! penalties and classical RK4.
//!
//! ```text
//! U_t = -(D_x + D_y) U + P^{-1} (E^e)^T P^e τ ½(|n| - n) (g - E^e U)
//! ```
//!
//! with `n = n_x + n_y`, so the penalty acts on inflow nodes only. With
//! `τ = 1` the energy rate is bounded by `Σ_inflow P^e |n| g²`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{check_len, Error, Result};
use crate::global::{dot, GlobalOperator};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExactVariant {
    /// Translating Gaussian, `exp(-c [(x + ¼ - t)² + (y + ¼ - t)²])`.
    #[default]
    Plus,
    /// Saddle, `exp(-c [(x + ¼ - t)² - (y + ¼ - t)²])`.
    Minus,
}

impl fmt::Display for ExactVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExactVariant::Plus => "plus",
            ExactVariant::Minus => "minus",
        })
    }
}

impl FromStr for ExactVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plus" | "+" => Ok(ExactVariant::Plus),
            "minus" | "-" => Ok(ExactVariant::Minus),
            other => Err(Error::InvalidArgument(format!("unknown exact-solution variant '{other}'"))),
        }
    }
}

/// Exact solution of the advection problem, transported along `(1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactSolution {
    pub variant: ExactVariant,
    /// Factor `c` multiplying the bracket in the exponent.
    pub coefficient: f64,
}

impl ExactSolution {
    pub const DEFAULT_COEFFICIENT: f64 = 0.005;

    pub fn new(variant: ExactVariant, coefficient: f64) -> Self {
        ExactSolution { variant, coefficient }
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let a = x + 0.25 - t;
        let b = y + 0.25 - t;
        let bracket = match self.variant {
            ExactVariant::Plus => a * a + b * b,
            ExactVariant::Minus => a * a - b * b,
        };
        (-self.coefficient * bracket).exp()
    }

    /// `∂_t u = -(u_x + u_y)`.
    pub fn time_derivative(&self, x: f64, y: f64, t: f64) -> f64 {
        let a = x + 0.25 - t;
        let b = y + 0.25 - t;
        let d = match self.variant {
            ExactVariant::Plus => 2.0 * (a + b),
            ExactVariant::Minus => 2.0 * (a - b),
        };
        self.coefficient * d * self.eval(x, y, t)
    }
}

impl Default for ExactSolution {
    fn default() -> Self {
        ExactSolution::new(ExactVariant::Plus, Self::DEFAULT_COEFFICIENT)
    }
}

pub struct AdvectionProblem {
    op: GlobalOperator,
    exact: ExactSolution,
    tau: f64,
    final_time: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    ext_x: Vec<f64>,
    ext_y: Vec<f64>,
    /// `P^e τ ½(|n| - n)` per exterior node.
    penalty: Vec<f64>,
    /// `P^e n` per exterior node.
    flux_weight: Vec<f64>,
}

/// Outcome of one right-hand side evaluation with the energy audit.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyAudit {
    /// `2 (U, U_t)_P`.
    pub rate: f64,
    /// `Σ_inflow P^e |n| g²`.
    pub bound: f64,
    /// Interface part of the rate; zero up to round-off.
    pub interface: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepPolicy {
    /// Fixed number of steps.
    Steps(usize),
    /// `Δt = safety · 2.78 / σ` with `σ` an estimate of the largest singular
    /// value of the semi-discrete operator in the `P` norm.
    Stability { safety: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Stability { safety: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub steps: StepPolicy,
    /// Record the energy log every this many steps (the final step is
    /// always recorded).
    pub log_every: usize,
    /// Audit the energy rate at every RK stage rather than once per step.
    pub audit_stages: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            steps: StepPolicy::default(),
            log_every: 1,
            audit_stages: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub max_error: f64,
}

#[derive(Clone, Debug)]
pub struct AdvectionResult {
    pub state: Vec<f64>,
    /// `|U - u(T)|` per node.
    pub error: Vec<f64>,
    pub max_error: f64,
    pub steps: usize,
    pub dt: f64,
    pub log: Vec<EnergyRecord>,
    /// Largest `|interface rate|` over all audited evaluations.
    pub max_interface_energy: f64,
    /// Largest `rate - bound` over all audited evaluations, relative to
    /// `max(1, |bound|)`.
    pub max_energy_excess: f64,
    pub audited_evaluations: usize,
}

/// Stability limit of classical RK4 on the negative real axis.
pub const RK4_REAL_LIMIT: f64 = 2.785;

impl AdvectionProblem {
    pub fn new(op: GlobalOperator, exact: ExactSolution, final_time: f64) -> Result<Self> {
        Self::with_penalty(op, exact, final_time, 1.0)
    }

    pub fn with_penalty(op: GlobalOperator, exact: ExactSolution, final_time: f64, tau: f64) -> Result<Self> {
        if !(final_time > 0.0) || !(tau >= 0.0) {
            return Err(Error::InvalidArgument(format!("final time {final_time} and penalty {tau} must be positive")));
        }
        let (x, y) = op.coordinates();
        let (ext_x, ext_y) = op.exterior_coordinates();
        let (p, n) = op.exterior_weights_normals(1.0, 1.0);
        let penalty = p.iter().zip(&n).map(|(p, n)| p * tau * 0.5 * (n.abs() - n)).collect();
        let flux_weight = p.iter().zip(&n).map(|(p, n)| p * n).collect();
        Ok(AdvectionProblem {
            op,
            exact,
            tau,
            final_time,
            x,
            y,
            ext_x,
            ext_y,
            penalty,
            flux_weight,
        })
    }

    pub fn operator(&self) -> &GlobalOperator {
        &self.op
    }

    pub fn exact(&self) -> ExactSolution {
        self.exact
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn coordinates(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    pub fn exact_state(&self, t: f64) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(&x, &y)| self.exact.eval(x, y, t)).collect()
    }

    /// Exact data `g` at the exterior face nodes.
    pub fn boundary_data(&self, t: f64) -> Vec<f64> {
        self.ext_x.iter().zip(&self.ext_y).map(|(&x, &y)| self.exact.eval(x, y, t)).collect()
    }

    /// Right-hand side with explicit boundary data `g`.
    pub fn rhs_with_data(&self, u: &[f64], g: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("boundary data", self.penalty.len(), g.len())?;
        self.op.apply_q_into(1.0, 1.0, u, out)?;
        for o in out.iter_mut() {
            *o = -*o;
        }
        let trace = self.op.exterior_trace(u)?;
        let sat: Vec<f64> = self
            .penalty
            .iter()
            .zip(g.iter().zip(&trace))
            .map(|(w, (g, v))| w * (g - v))
            .collect();
        self.op.exterior_lift_add(&sat, out)?;
        for (o, p) in out.iter_mut().zip(self.op.p()) {
            *o /= p;
        }
        Ok(())
    }

    pub fn semidiscrete_rhs(&self, u: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.rhs_with_data(u, &self.boundary_data(t), out)
    }

    /// Energy rate of the scheme at state `u` with right-hand side `rhs`,
    /// the boundary-data bound, and the interface contribution.
    pub fn energy_audit(&self, u: &[f64], rhs: &[f64], t: f64) -> Result<EnergyAudit> {
        let pu: Vec<f64> = u.iter().zip(self.op.p()).map(|(u, p)| u * p).collect();
        let rate = 2.0 * dot(&pu, rhs);
        let g = self.boundary_data(t);
        let bound = self.penalty.iter().zip(&g).map(|(w, g)| w / self.tau.max(f64::MIN_POSITIVE) * g * g).sum();
        let interface = self.op.interface_energy(1.0, 1.0, u)?;
        Ok(EnergyAudit { rate, bound, interface })
    }

    /// The boundary part of the energy rate, `-Σ P^e n v² + 2 Σ sat v`.
    pub fn boundary_rate(&self, u: &[f64], t: f64) -> Result<f64> {
        let v = self.op.exterior_trace(u)?;
        let g = self.boundary_data(t);
        Ok(v.iter()
            .zip(&g)
            .zip(self.flux_weight.iter().zip(&self.penalty))
            .map(|((v, g), (f, w))| -f * v * v + 2.0 * w * (g - v) * v)
            .sum())
    }

    /// `v ↦ L v` for the homogeneous part of the scheme (`g = 0`).
    fn apply_linear(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let zero = vec![0.0; self.penalty.len()];
        self.rhs_with_data(v, &zero, out)
    }

    /// `v ↦ L* v`, the `P`-adjoint of [`Self::apply_linear`]:
    /// `L* = P^{-1}(Q - B - E^T P S E)` with `B = E^T P^e n E`.
    fn apply_adjoint(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.op.apply_q_into(1.0, 1.0, v, out)?;
        let trace = self.op.exterior_trace(v)?;
        let lift: Vec<f64> = trace
            .iter()
            .zip(self.flux_weight.iter().zip(&self.penalty))
            .map(|(t, (f, w))| -(f + w) * t)
            .collect();
        self.op.exterior_lift_add(&lift, out)?;
        for (o, p) in out.iter_mut().zip(self.op.p()) {
            *o /= p;
        }
        Ok(())
    }

    /// Largest singular value of the semi-discrete operator in the `P`
    /// norm, by power iteration on `L* L`. Returns a slight overestimate.
    pub fn estimate_sigma_max(&self, iterations: usize) -> Result<f64> {
        let n = self.op.num_nodes();
        let p = self.op.p();
        let norm = |v: &[f64]| v.iter().zip(p).map(|(v, p)| p * v * v).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (0..n).map(|k| ((k as f64 + 1.0) * 0.7548776662466927).fract() - 0.5).collect();
        let s = norm(&v);
        v.iter_mut().for_each(|x| *x /= s);
        let mut lv = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut sigma2 = 0.0;
        for _ in 0..iterations.max(1) {
            self.apply_linear(&v, &mut lv)?;
            self.apply_adjoint(&lv, &mut w)?;
            sigma2 = norm(&w);
            if !(sigma2 > 0.0) || !sigma2.is_finite() {
                return Err(Error::InvalidArgument("degenerate operator in spectral estimate".into()));
            }
            for (a, b) in v.iter_mut().zip(&w) {
                *a = b / sigma2;
            }
        }
        Ok(1.05 * sigma2.sqrt())
    }

    /// Step count for a policy, adjusted so the steps land exactly on `T`.
    pub fn step_count(&self, policy: StepPolicy) -> Result<usize> {
        match policy {
            StepPolicy::Steps(n) if n > 0 => Ok(n),
            StepPolicy::Steps(_) => Err(Error::InvalidArgument("step count must be positive".into())),
            StepPolicy::Stability { safety } => {
                if !(safety > 0.0 && safety <= 1.0) {
                    return Err(Error::InvalidArgument(format!("safety factor {safety} outside (0, 1]")));
                }
                let sigma = self.estimate_sigma_max(40)?;
                let dt = safety * RK4_REAL_LIMIT / sigma;
                Ok((self.final_time / dt).ceil().max(1.0) as usize)
            }
        }
    }

    fn max_error(&self, u: &[f64], t: f64) -> f64 {
        u.iter()
            .zip(self.x.iter().zip(&self.y))
            .map(|(u, (&x, &y))| (u - self.exact.eval(x, y, t)).abs())
            .fold(0.0, f64::max)
    }

    pub fn run(&self, options: RunOptions) -> Result<AdvectionResult> {
        let steps = self.step_count(options.steps)?;
        let dt = self.final_time / steps as f64;
        let n = self.op.num_nodes();
        let p = self.op.p();
        let mut u = self.exact_state(0.0);
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut stage = vec![0.0; n];
        let mut log = Vec::new();
        let mut max_interface: f64 = 0.0;
        let mut max_excess = f64::NEG_INFINITY;
        let mut audited = 0usize;
        let energy = |u: &[f64]| u.iter().zip(p).map(|(u, p)| p * u * u).sum::<f64>();
        let log_every = options.log_every.max(1);

        log.push(EnergyRecord {
            step: 0,
            t: 0.0,
            energy: energy(&u),
            max_error: self.max_error(&u, 0.0),
        });

        const C: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for step in 0..steps {
            let t = step as f64 * dt;
            for s in 0..4 {
                let ts = t + C[s] * dt;
                if s == 0 {
                    stage.copy_from_slice(&u);
                } else {
                    for i in 0..n {
                        stage[i] = u[i] + C[s] * dt * k[s - 1][i];
                    }
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                self.semidiscrete_rhs(&stage, ts, &mut tail[0])?;
                if options.audit_stages || s == 0 {
                    let a = self.energy_audit(&stage, &tail[0], ts)?;
                    max_interface = max_interface.max(a.interface.abs());
                    max_excess = max_excess.max((a.rate - a.bound) / a.bound.abs().max(1.0));
                    audited += 1;
                }
            }
            for i in 0..n {
                u[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            let t_new = (step + 1) as f64 * dt;
            let e = energy(&u);
            if !e.is_finite() {
                return Err(Error::NonFinite {
                    step: step + 1,
                    time: t_new,
                });
            }
            if (step + 1) % log_every == 0 || step + 1 == steps {
                log.push(EnergyRecord {
                    step: step + 1,
                    t: t_new,
                    energy: e,
                    max_error: self.max_error(&u, t_new),
                });
            }
        }

        let t_end = self.final_time;
        let error: Vec<f64> = u
            .iter()
            .zip(self.x.iter().zip(&self.y))
            .map(|(u, (&x, &y))| (u - self.exact.eval(x, y, t_end)).abs())
            .collect();
        let max_error = error.iter().copied().fold(0.0, f64::max);
        Ok(AdvectionResult {
            state: u,
            error,
            max_error,
            steps,
            dt,
            log,
            max_interface_energy: max_interface,
            max_energy_excess: max_excess,
            audited_evaluations: audited,
        })
    }
}

/// Energy log as CSV with columns `step,t,energy,max_error`.
pub fn write_energy_log(path: &Path, log: &[EnergyRecord]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "step,t,energy,max_error").map_err(io)?;
    for r in log {
        writeln!(f, "{},{:.16e},{:.16e},{:.16e}", r.step, r.t, r.energy, r.max_error).map_err(io)?;
    }
    f.flush().map_err(io)
}
