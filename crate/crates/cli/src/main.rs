use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gsbp_core::advection::{write_energy_log, ExactSolution, ExactVariant, StepPolicy};
use gsbp_core::audit::{audit_mesh, AuditOptions};
use gsbp_core::curvilinear::AffineChart;
use gsbp_core::experiments::{
    write_text, AccuracyConfig, AdvectionConfig, ConvergenceTable, ErrorField, MeshSource,
};
use gsbp_core::mesh::{basket_weave_mesh, conforming_pair, single_element, ElementSpec, MapKind};
use gsbp_core::{Execution, MeshTopology, NodeFamily};

#[derive(Parser)]
#[command(name = "gsbp", version, about = "Generalized SBP operators on non-conforming curvilinear meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derivative accuracy of the global operators on a Gaussian.
    Accuracy(AccuracyArgs),
    /// Advection convergence on the curved mesh.
    Advection(AdvectionArgs),
    /// Check every algebraic invariant; exits nonzero on failure.
    Audit(AuditArgs),
    /// Write a basket-weave mesh file.
    Mesh(MeshArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "legendre")]
    family: NodeFamily,
    #[arg(long, default_value_t = 4)]
    degree: usize,
    /// Refinement levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    levels: Vec<usize>,
    /// `basket-weave` or a mesh file; file levels split each element n×n.
    #[arg(long, default_value = "basket-weave")]
    mesh: String,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Level whose pointwise error field is written; 0 writes none.
    #[arg(long)]
    field_level: Option<usize>,
}

#[derive(Args)]
struct AccuracyArgs {
    #[command(flatten)]
    common: Common,
    /// Apply the sine perturbation instead of the Cartesian mesh.
    #[arg(long)]
    curved: bool,
}

#[derive(Args)]
struct AdvectionArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "plus")]
    exact_variant: ExactVariant,
    #[arg(long, default_value_t = ExactSolution::DEFAULT_COEFFICIENT)]
    coefficient: f64,
    /// Fixed step count instead of the stability estimate.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    safety: f64,
    #[arg(long, default_value_t = 0.5)]
    final_time: f64,
}

#[derive(Args)]
struct AuditArgs {
    /// `single`, `pair`, `basket-weave`, or a mesh file.
    #[arg(long, default_value = "basket-weave")]
    mesh: String,
    #[arg(long, default_value = "legendre")]
    family: NodeFamily,
    #[arg(long, default_value_t = 4)]
    degree: usize,
    #[arg(long, default_value_t = 1)]
    level: usize,
    /// Apply the sine perturbation.
    #[arg(long)]
    curved: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value_t = 1)]
    level: usize,
    #[arg(long)]
    curved: bool,
    #[arg(long, default_value = "legendre")]
    family: NodeFamily,
    #[arg(long, default_value_t = 4)]
    degree: usize,
    #[arg(long)]
    out: PathBuf,
}

fn execution(threads: usize) -> Result<Execution> {
    if threads == 0 {
        bail!("--threads must be at least 1");
    }
    if threads == 1 {
        return Ok(Execution::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
        Ok(Execution::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    bail!("built without the `parallel` feature; use --threads 1")
}

fn mesh_source(name: &str) -> MeshSource {
    match name {
        "basket-weave" => MeshSource::BasketWeave,
        path => MeshSource::File(PathBuf::from(path)),
    }
}

fn map_kind(curved: bool) -> MapKind {
    if curved {
        MapKind::Sine
    } else {
        MapKind::Affine
    }
}

fn check_levels(levels: &[usize]) -> Result<()> {
    if levels.is_empty() || levels.contains(&0) {
        bail!("--levels needs one or more positive levels");
    }
    Ok(())
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_table(dir: &Path, stem: &str, table: &ConvergenceTable) -> Result<()> {
    write_text(&dir.join(format!("{stem}.csv")), &table.to_csv())?;
    write_text(&dir.join(format!("{stem}.md")), &table.to_markdown())?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn write_field(dir: &Path, stem: &str, level: usize, field: &ErrorField) -> Result<()> {
    let path = dir.join(format!("{stem}_field_n{level}.csv"));
    write_text(&path, &field.to_csv())?;
    Ok(())
}

fn run_accuracy(args: AccuracyArgs) -> Result<()> {
    let c = &args.common;
    check_levels(&c.levels)?;
    let cfg = AccuracyConfig {
        mesh: mesh_source(&c.mesh),
        map: map_kind(args.curved),
        exec: execution(c.threads)?,
        ..AccuracyConfig::new(c.family, c.degree, c.levels.clone())
    };
    prepare_out(&c.out_dir)?;
    let stem = format!("accuracy_{}_N{}", c.family, c.degree);
    let field_level = c.field_level.unwrap_or(c.levels[0]);
    let mut errors = Vec::new();
    for &level in &c.levels {
        let t0 = Instant::now();
        let field = cfg.level(level)?;
        eprintln!("level {level}: max error {:.4e} ({:.1}s)", field.max(), t0.elapsed().as_secs_f64());
        if level == field_level {
            write_field(&c.out_dir, &stem, level, &field)?;
        }
        errors.push(field.max());
    }
    write_table(&c.out_dir, &stem, &ConvergenceTable::new(cfg.title(), &c.levels, &errors)?)
}

fn run_advection(args: AdvectionArgs) -> Result<()> {
    let c = &args.common;
    check_levels(&c.levels)?;
    let mut cfg = AdvectionConfig {
        mesh: mesh_source(&c.mesh),
        exec: execution(c.threads)?,
        exact: ExactSolution::new(args.exact_variant, args.coefficient),
        final_time: args.final_time,
        ..AdvectionConfig::new(c.family, c.degree, c.levels.clone())
    };
    cfg.options.steps = match args.steps {
        Some(n) => StepPolicy::Steps(n),
        None => StepPolicy::Stability { safety: args.safety },
    };
    prepare_out(&c.out_dir)?;
    let stem = format!("advection_{}_N{}", c.family, c.degree);
    let field_level = c.field_level.unwrap_or(c.levels[0]);
    let mut errors = Vec::new();
    for &level in &c.levels {
        let t0 = Instant::now();
        let (pb, res) = cfg.level(level)?;
        eprintln!(
            "level {level}: max error {:.4e}, {} steps, interface energy {:.1e}, energy excess {:.1e} ({:.1}s)",
            res.max_error,
            res.steps,
            res.max_interface_energy,
            res.max_energy_excess,
            t0.elapsed().as_secs_f64()
        );
        write_energy_log(&c.out_dir.join(format!("{stem}_energy_n{level}.csv")), &res.log)?;
        if level == field_level {
            let (x, y) = pb.coordinates();
            let field = ErrorField {
                x: x.to_vec(),
                y: y.to_vec(),
                value: res.error.clone(),
            };
            write_field(&c.out_dir, &stem, level, &field)?;
        }
        errors.push(res.max_error);
    }
    write_table(&c.out_dir, &stem, &ConvergenceTable::new(cfg.title(), &c.levels, &errors)?)
}

fn audit_topology(args: &AuditArgs) -> Result<(String, MeshTopology)> {
    let spec = ElementSpec::uniform(args.family, args.degree, map_kind(args.curved));
    Ok(match args.mesh.as_str() {
        "single" => ("single".into(), single_element(AffineChart::UNIT, spec)?),
        "pair" => ("pair".into(), conforming_pair(spec, spec)?),
        "basket-weave" => (format!("basket-weave-{}", args.level), basket_weave_mesh(args.level, spec)?),
        path => {
            let src = MeshSource::File(PathBuf::from(path));
            (path.to_string(), src.build(args.level, spec)?)
        }
    })
}

fn run_audit(args: AuditArgs) -> Result<bool> {
    let exec = execution(args.threads)?;
    let (label, topo) = audit_topology(&args)?;
    let label = format!("{label} {} N={}{}", args.family, args.degree, if args.curved { " curved" } else { "" });
    let report = audit_mesh(&label, &topo, AuditOptions { exec, ..Default::default() })?;
    prepare_out(&args.out_dir)?;
    let name: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    report.write(&args.out_dir.join(format!("audit_{name}.txt")))?;
    print!("{}", report.to_text());
    Ok(report.passed())
}

fn run_mesh(args: MeshArgs) -> Result<()> {
    let m = basket_weave_mesh(args.level, ElementSpec::uniform(args.family, args.degree, map_kind(args.curved)))?;
    m.save(&args.out)?;
    eprintln!("{} elements written to {}", m.num_elements(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Accuracy(a) => run_accuracy(a).map(|_| true),
        Command::Advection(a) => run_advection(a).map(|_| true),
        Command::Audit(a) => run_audit(a),
        Command::Mesh(a) => run_mesh(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("audit failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
