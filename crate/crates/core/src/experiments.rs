//! Convergence studies: derivative accuracy on the Cartesian mesh and
//! advection on the curved one.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::advection::{AdvectionProblem, AdvectionResult, ExactSolution, RunOptions, StepPolicy};
use crate::curvilinear::{Direction, MetricMode};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::global::GlobalOperator;
use crate::mesh::{basket_weave_mesh, ElementSpec, MapKind, MeshTopology};
use crate::quadrature::NodeFamily;

/// Where the mesh for refinement level `n` comes from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum MeshSource {
    #[default]
    BasketWeave,
    /// A mesh file; level `n` splits each of its elements `n × n`.
    File(PathBuf),
}

impl MeshSource {
    pub fn build(&self, level: usize, spec: ElementSpec) -> Result<MeshTopology> {
        match self {
            MeshSource::BasketWeave => basket_weave_mesh(level, spec),
            MeshSource::File(path) => {
                let base = MeshTopology::load(path)?.with_specs(|_, _| spec)?;
                base.validate()?;
                if level == 1 {
                    Ok(base)
                } else {
                    base.refine(level)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub max_error: f64,
    /// `log(e_prev / e) / log(n / n_prev)`; absent on the first row.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub title: String,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn new(title: impl Into<String>, levels: &[usize], errors: &[f64]) -> Result<Self> {
        if levels.len() != errors.len() {
            return Err(Error::DimensionMismatch {
                context: "convergence table",
                expected: levels.len(),
                found: errors.len(),
            });
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("levels must be strictly increasing".into()));
        }
        let rows = levels
            .iter()
            .zip(errors)
            .enumerate()
            .map(|(k, (&level, &max_error))| ConvergenceRow {
                level,
                max_error,
                rate: (k > 0).then(|| rate(levels[k - 1], errors[k - 1], level, max_error)),
            })
            .collect();
        Ok(ConvergenceTable {
            title: title.into(),
            rows,
        })
    }

    pub fn final_rate(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.rate)
    }

    /// Rate between the first and last level.
    pub fn average_rate(&self) -> Option<f64> {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) if b.level > a.level => Some(rate(a.level, a.max_error, b.level, b.max_error)),
            _ => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,max_error,rate\n");
        for r in &self.rows {
            let rate = r.rate.map(|v| format!("{v:.4}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.10e},{}", r.level, r.max_error, rate);
        }
        if let Some(av) = self.average_rate() {
            let _ = writeln!(s, "av.,,{av:.4}");
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("### {}\n\n| n | max error | rate |\n|---:|---:|---:|\n", self.title);
        for r in &self.rows {
            let rate = r.rate.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "| {} | {:.4e} | {} |", r.level, r.max_error, rate);
        }
        if let Some(av) = self.average_rate() {
            let _ = writeln!(s, "| av. | | {av:.2} |");
        }
        s
    }
}

fn rate(n0: usize, e0: f64, n1: usize, e1: f64) -> f64 {
    (e0 / e1).ln() / (n1 as f64 / n0 as f64).ln()
}

/// Pointwise values on the volume nodes, written as `x,y,value`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub value: Vec<f64>,
}

impl ErrorField {
    pub fn max(&self) -> f64 {
        self.value.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(48 * self.value.len() + 16);
        s.push_str("x,y,value\n");
        for ((x, y), v) in self.x.iter().zip(&self.y).zip(&self.value) {
            let _ = writeln!(s, "{x:.10e},{y:.10e},{v:.10e}");
        }
        s
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

pub fn gaussian(x: f64, y: f64) -> f64 {
    (-((3.0 * x).powi(2) + (3.0 * y).powi(2)) / 2.0).exp()
}

/// `(u_x, u_y)` of [`gaussian`].
pub fn gaussian_gradient(x: f64, y: f64) -> (f64, f64) {
    let u = gaussian(x, y);
    (-9.0 * x * u, -9.0 * y * u)
}

/// `|e| = sqrt(|D_x U - U_x|² + |D_y U - U_y|²)` for the Gaussian.
pub fn derivative_error(op: &GlobalOperator) -> Result<ErrorField> {
    let (x, y) = op.coordinates();
    let u: Vec<f64> = x.iter().zip(&y).map(|(&x, &y)| gaussian(x, y)).collect();
    let dx = op.apply_global(Direction::X, &u)?;
    let dy = op.apply_global(Direction::Y, &u)?;
    let value = (0..u.len())
        .map(|i| {
            let (ux, uy) = gaussian_gradient(x[i], y[i]);
            (dx[i] - ux).hypot(dy[i] - uy)
        })
        .collect();
    Ok(ErrorField { x, y, value })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyConfig {
    pub family: NodeFamily,
    pub degree: usize,
    pub levels: Vec<usize>,
    pub mesh: MeshSource,
    pub map: MapKind,
    pub mode: MetricMode,
    pub exec: Execution,
}

impl AccuracyConfig {
    pub fn new(family: NodeFamily, degree: usize, levels: Vec<usize>) -> Self {
        AccuracyConfig {
            family,
            degree,
            levels,
            mesh: MeshSource::BasketWeave,
            map: MapKind::Affine,
            mode: MetricMode::Discrete,
            exec: Execution::default(),
        }
    }

    pub fn title(&self) -> String {
        format!("Derivative accuracy, {} N={}", self.family, self.degree)
    }

    pub fn level(&self, level: usize) -> Result<ErrorField> {
        let mesh = self.mesh.build(level, ElementSpec::uniform(self.family, self.degree, self.map))?;
        let op = GlobalOperator::build(&mesh, self.mode, self.exec)?;
        derivative_error(&op)
    }
}

pub struct AccuracyStudy {
    pub table: ConvergenceTable,
    pub fields: Vec<(usize, ErrorField)>,
}

pub fn operator_accuracy(cfg: &AccuracyConfig) -> Result<AccuracyStudy> {
    let mut fields = Vec::with_capacity(cfg.levels.len());
    for &level in &cfg.levels {
        fields.push((level, cfg.level(level)?));
    }
    let errors: Vec<f64> = fields.iter().map(|(_, f)| f.max()).collect();
    let table = ConvergenceTable::new(cfg.title(), &cfg.levels, &errors)?;
    Ok(AccuracyStudy { table, fields })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvectionConfig {
    pub family: NodeFamily,
    pub degree: usize,
    pub levels: Vec<usize>,
    pub mesh: MeshSource,
    pub map: MapKind,
    pub mode: MetricMode,
    pub exec: Execution,
    pub exact: ExactSolution,
    pub final_time: f64,
    pub options: RunOptions,
}

impl AdvectionConfig {
    pub fn new(family: NodeFamily, degree: usize, levels: Vec<usize>) -> Self {
        AdvectionConfig {
            family,
            degree,
            levels,
            mesh: MeshSource::BasketWeave,
            map: MapKind::Sine,
            mode: MetricMode::Discrete,
            exec: Execution::default(),
            exact: ExactSolution::default(),
            final_time: 0.5,
            options: RunOptions {
                steps: StepPolicy::default(),
                log_every: 1,
                audit_stages: true,
            },
        }
    }

    pub fn title(&self) -> String {
        format!("Advection, {} N={}", self.family, self.degree)
    }

    pub fn problem(&self, level: usize) -> Result<AdvectionProblem> {
        let mesh = self.mesh.build(level, ElementSpec::uniform(self.family, self.degree, self.map))?;
        let op = GlobalOperator::build(&mesh, self.mode, self.exec)?;
        AdvectionProblem::new(op, self.exact, self.final_time)
    }

    pub fn level(&self, level: usize) -> Result<(AdvectionProblem, AdvectionResult)> {
        let pb = self.problem(level)?;
        let res = pb.run(self.options)?;
        Ok((pb, res))
    }
}

pub struct AdvectionStudy {
    pub table: ConvergenceTable,
    pub runs: Vec<(usize, AdvectionResult)>,
}

impl AdvectionStudy {
    pub fn error_field(&self, pb: &AdvectionProblem, index: usize) -> ErrorField {
        let (x, y) = pb.coordinates();
        ErrorField {
            x: x.to_vec(),
            y: y.to_vec(),
            value: self.runs[index].1.error.clone(),
        }
    }
}

pub fn advection_convergence(cfg: &AdvectionConfig) -> Result<AdvectionStudy> {
    let mut runs = Vec::with_capacity(cfg.levels.len());
    for &level in &cfg.levels {
        runs.push((level, cfg.level(level)?.1));
    }
    let errors: Vec<f64> = runs.iter().map(|(_, r)| r.max_error).collect();
    let table = ConvergenceTable::new(cfg.title(), &cfg.levels, &errors)?;
    Ok(AdvectionStudy { table, runs })
}
