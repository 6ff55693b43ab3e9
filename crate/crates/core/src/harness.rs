//! Batch experiment driver: named cases, refinement loops, and CSV reports
//! (convergence table, point-wise error field, sparsity pattern, assembly
//! timings).

use crate::fitting::{
    generate_cylinder, generate_hemisphere, generate_plate, CylinderVariant, FittingError,
    PlateVariant,
};
use crate::mesh::{classify_elements, load_obj, ControlMesh, MeshError};
use crate::solver::{
    assemble, error_norms, pointwise_error_field, solve_penalized, ManufacturedCase,
    QuadratureConfig, SolverError,
};
use crate::subdivision::subdivide_mesh;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown case name '{0}'")]
    UnknownCase(String),
    #[error("case 'custom' needs --mesh pointing at an OBJ file")]
    MissingMesh,
    #[error("config {path}, line {line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fitting(#[from] FittingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Built-in experiment geometries plus user-supplied OBJ meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseName {
    /// `plate-test{1..4}-mesh{1,2}`.
    Plate { test: u8, mesh: u8 },
    CylinderRegular,
    Cylinder4Ev,
    Cylinder7Ev,
    Hemisphere,
    /// An imported mesh solved with the manufactured surface case.
    Custom,
}

impl CaseName {
    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        match name {
            "cylinder-regular" => Ok(CaseName::CylinderRegular),
            "cylinder-4ev" => Ok(CaseName::Cylinder4Ev),
            "cylinder-7ev" => Ok(CaseName::Cylinder7Ev),
            "hemisphere" => Ok(CaseName::Hemisphere),
            "custom" => Ok(CaseName::Custom),
            other => {
                if let Some(rest) = other.strip_prefix("plate-test") {
                    let parts: Vec<&str> = rest.split("-mesh").collect();
                    if parts.len() == 2 {
                        if let (Ok(test), Ok(mesh)) =
                            (parts[0].parse::<u8>(), parts[1].parse::<u8>())
                        {
                            if (1..=4).contains(&test) && (1..=2).contains(&mesh) {
                                return Ok(CaseName::Plate { test, mesh });
                            }
                        }
                    }
                }
                Err(HarnessError::UnknownCase(other.into()))
            }
        }
    }

    pub fn as_str(&self) -> String {
        match self {
            CaseName::Plate { test, mesh } => format!("plate-test{test}-mesh{mesh}"),
            CaseName::CylinderRegular => "cylinder-regular".into(),
            CaseName::Cylinder4Ev => "cylinder-4ev".into(),
            CaseName::Cylinder7Ev => "cylinder-7ev".into(),
            CaseName::Hemisphere => "hemisphere".into(),
            CaseName::Custom => "custom".into(),
        }
    }

    pub fn manufactured_case(&self) -> ManufacturedCase {
        match self {
            CaseName::Plate { test, .. } => ManufacturedCase::plate(*test),
            _ => ManufacturedCase::surface_exponential(),
        }
    }
}

/// A fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case: CaseName,
    pub levels: usize,
    pub quadrature: QuadratureConfig,
    pub beta: f64,
    pub out_dir: PathBuf,
    pub mesh_path: Option<PathBuf>,
    pub threads: Option<usize>,
    pub pointwise_samples: usize,
}

impl RunConfig {
    pub fn new(case: CaseName, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            case,
            levels: 3,
            quadrature: QuadratureConfig::Standard,
            beta: 1e8,
            out_dir: out_dir.into(),
            mesh_path: None,
            threads: None,
            pointwise_samples: 5,
        }
    }
}

pub fn parse_quadrature(text: &str) -> Option<QuadratureConfig> {
    if text == "standard" {
        return Some(QuadratureConfig::Standard);
    }
    text.strip_prefix("adaptive:")
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&d| d >= 1)
        .map(|depth| QuadratureConfig::Adaptive { depth })
}

/// Parses a flat `key = value` config file (`#` starts a comment).
pub fn parse_config_file(path: impl AsRef<Path>) -> Result<RunConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let fail = |line: usize, message: String| HarnessError::Config {
        path: display.clone(),
        line,
        message,
    };

    let mut case = None;
    let mut config_fields: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(fail(i + 1, format!("expected 'key = value', got '{line}'")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key == "case" {
            case = Some((i + 1, value));
        } else {
            config_fields.push((i + 1, key, value));
        }
    }
    let (case_line, case_name) =
        case.ok_or_else(|| fail(0, "missing required key 'case'".into()))?;
    let case = CaseName::parse(&case_name).map_err(|e| fail(case_line, e.to_string()))?;
    let mut config = RunConfig::new(case, "out");
    for (line, key, value) in config_fields {
        match key.as_str() {
            "levels" => {
                config.levels = value
                    .parse()
                    .map_err(|_| fail(line, format!("bad levels '{value}'")))?
            }
            "quadrature" => {
                config.quadrature = parse_quadrature(&value)
                    .ok_or_else(|| fail(line, format!("bad quadrature '{value}'")))?
            }
            "beta" => {
                config.beta = value
                    .parse()
                    .map_err(|_| fail(line, format!("bad beta '{value}'")))?
            }
            "out" => config.out_dir = PathBuf::from(value),
            "mesh" => config.mesh_path = Some(PathBuf::from(value)),
            "threads" => {
                config.threads = Some(
                    value
                        .parse()
                        .map_err(|_| fail(line, format!("bad threads '{value}'")))?,
                )
            }
            "pointwise_samples" => {
                config.pointwise_samples = value
                    .parse()
                    .map_err(|_| fail(line, format!("bad pointwise_samples '{value}'")))?
            }
            other => return Err(fail(line, format!("unknown key '{other}'"))),
        }
    }
    Ok(config)
}

/// One row of the convergence table.
#[derive(Debug, Clone, Copy)]
pub struct LevelReport {
    pub level: usize,
    pub n_elements: usize,
    pub n_dofs: usize,
    pub h_normalized: f64,
    pub e_l2: f64,
    pub e_h1: f64,
    pub rate_l2: f64,
    pub rate_h1: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

/// Everything `run_case` leaves behind, also returned for in-process use.
#[derive(Debug)]
pub struct RunArtifacts {
    pub levels: Vec<LevelReport>,
    pub convergence_csv: PathBuf,
    pub pointwise_csv: PathBuf,
    pub sparsity_csv: PathBuf,
}

/// Control mesh for a case at one refinement level.
pub fn case_mesh(config: &RunConfig, level: usize) -> Result<ControlMesh, HarnessError> {
    match config.case {
        CaseName::Plate { mesh: 1, .. } => Ok(generate_plate(PlateVariant::Regular, level)?),
        CaseName::Plate { .. } => Ok(generate_plate(PlateVariant::Extraordinary, level)?),
        CaseName::CylinderRegular => Ok(generate_cylinder(CylinderVariant::Regular, level)?),
        CaseName::Cylinder4Ev => Ok(generate_cylinder(CylinderVariant::FourEv, level)?),
        CaseName::Cylinder7Ev => Ok(generate_cylinder(CylinderVariant::SevenEv, level)?),
        CaseName::Hemisphere => Ok(generate_hemisphere(level)?),
        CaseName::Custom => {
            let path = config.mesh_path.as_ref().ok_or(HarnessError::MissingMesh)?;
            let mut mesh = load_obj(path)?;
            for _ in 0..level {
                mesh = subdivide_mesh(&mesh)?;
            }
            Ok(mesh)
        }
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn run_levels(config: &RunConfig) -> Result<(Vec<LevelReport>, Vec<String>), HarnessError> {
    let case = config.case.manufactured_case();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for level in 0..config.levels {
        let mesh = case_mesh(config, level)?;
        let patches = classify_elements(&mesh)?;
        let t0 = Instant::now();
        let system = assemble(&mesh, &patches, case, config.quadrature, config.beta)?;
        let assembly_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let u = solve_penalized(&system)?;
        let solve_seconds = t1.elapsed().as_secs_f64();
        let norms = error_norms(&mesh, &patches, case, config.quadrature, &u)?;
        let (rate_l2, rate_h1) = match prev {
            Some((l2, h1)) => (
                (l2 / norms.l2_relative).log2(),
                (h1 / norms.h1_relative).log2(),
            ),
            None => (f64::NAN, f64::NAN),
        };
        prev = Some((norms.l2_relative, norms.h1_relative));
        let report = LevelReport {
            level,
            n_elements: mesh.face_count(),
            n_dofs: mesh.vertex_count(),
            h_normalized: 0.5f64.powi(level as i32),
            e_l2: norms.l2_relative,
            e_h1: norms.h1_relative,
            rate_l2,
            rate_h1,
            assembly_seconds,
            solve_seconds,
        };
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{},{}",
            report.level,
            report.n_elements,
            report.n_dofs,
            fmt17(report.h_normalized),
            fmt17(report.e_l2),
            fmt17(report.e_h1),
            fmt17(report.rate_l2),
            fmt17(report.rate_h1),
            fmt17(report.assembly_seconds),
            fmt17(report.solve_seconds),
        ));
        reports.push(report);
    }
    Ok((reports, rows))
}

fn with_thread_pool<T>(
    threads: Option<usize>,
    job: impl FnOnce() -> Result<T, HarnessError> + Send,
) -> Result<T, HarnessError>
where
    T: Send,
{
    match threads {
        None => job(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool");
            pool.install(job)
        }
    }
}

/// Runs a case over its refinement levels and writes `convergence.csv`,
/// `pointwise_error.csv` (finest level) and `sparsity.csv` (finest level).
pub fn run_case(config: &RunConfig) -> Result<RunArtifacts, HarnessError> {
    std::fs::create_dir_all(&config.out_dir)?;
    let (reports, rows) = with_thread_pool(config.threads, || run_levels(config))?;

    let convergence_csv = config.out_dir.join("convergence.csv");
    let mut text = String::from(
        "level,n_elements,n_dofs,h_normalized,e_L2,e_H1,observed_rate_L2,observed_rate_H1,assembly_seconds,solve_seconds\r\n",
    );
    for row in &rows {
        text.push_str(row);
        text.push_str("\r\n");
    }
    std::fs::write(&convergence_csv, text)?;

    // Finest-level artifacts.
    let finest = config.levels - 1;
    let case = config.case.manufactured_case();
    let mesh = case_mesh(config, finest)?;
    let patches = classify_elements(&mesh)?;
    let (pointwise, system) = with_thread_pool(config.threads, || {
        let system = assemble(&mesh, &patches, case, config.quadrature, config.beta)?;
        let u = solve_penalized(&system)?;
        let pointwise =
            pointwise_error_field(&mesh, &patches, case, &u, config.pointwise_samples)?;
        Ok((pointwise, system))
    })?;

    let pointwise_csv = config.out_dir.join("pointwise_error.csv");
    let mut text = String::from("x1,x2,x3,abs_error\r\n");
    for (x, err, _) in &pointwise {
        writeln!(
            text,
            "{},{},{},{}\r",
            fmt17(x.x),
            fmt17(x.y),
            fmt17(x.z),
            fmt17(*err)
        )
        .unwrap();
    }
    std::fs::write(&pointwise_csv, text)?;

    let sparsity_csv = config.out_dir.join("sparsity.csv");
    let mut text = String::from("row,nnz\r\n");
    for r in 0..system.stiffness.n_rows() {
        writeln!(text, "{},{}\r", r, system.stiffness.row_nnz(r)).unwrap();
    }
    std::fs::write(&sparsity_csv, text)?;

    Ok(RunArtifacts {
        levels: reports,
        convergence_csv,
        pointwise_csv,
        sparsity_csv,
    })
}

/// One row of the assembly-timing study.
#[derive(Debug, Clone, Copy)]
pub struct TimingReport {
    pub level: usize,
    pub n_elements: usize,
    pub depth: usize,
    pub e_l2: f64,
    pub assembly_seconds: f64,
}

/// Compares assembly cost of the standard rule (`n_d = 0`) against adaptive
/// depths 3 and 7 across refinement levels, writing `timing.csv`.
///
/// Normal projection is shared across the quadrature variants and excluded
/// from the timed section. Assembly is timed on a single thread (the best of
/// three repetitions), so the numbers reflect the quadrature work rather
/// than scheduling noise.
pub fn report_timing(config: &RunConfig) -> Result<Vec<TimingReport>, HarnessError> {
    std::fs::create_dir_all(&config.out_dir)?;
    let case = config.case.manufactured_case();
    let mut out = Vec::new();
    with_thread_pool(Some(1), || {
        for level in 0..config.levels {
            let mesh = case_mesh(config, level)?;
            let patches = classify_elements(&mesh)?;
            let normals = if case.is_flat() {
                None
            } else {
                Some(crate::solver::project_normals(
                    &mesh,
                    &patches,
                    config.quadrature,
                )?)
            };
            let depths = [0usize, 3, 7];
            let quadrature_of = |depth: usize| {
                if depth == 0 {
                    QuadratureConfig::Standard
                } else {
                    QuadratureConfig::Adaptive { depth }
                }
            };
            // Interleave repetitions across the depths so bursts of machine
            // load hit all variants alike; keep the fastest run of each.
            let mut best = [f64::INFINITY; 3];
            let mut systems = [None, None, None];
            for _ in 0..7 {
                for (d, &depth) in depths.iter().enumerate() {
                    let t0 = Instant::now();
                    let s = crate::solver::assemble_with_normals(
                        &mesh,
                        &patches,
                        case,
                        quadrature_of(depth),
                        config.beta,
                        2,
                        normals.as_ref(),
                    )?;
                    best[d] = best[d].min(t0.elapsed().as_secs_f64());
                    systems[d] = Some(s);
                }
            }
            for (d, &depth) in depths.iter().enumerate() {
                let system = systems[d].take().expect("assembled");
                let u = solve_penalized(&system)?;
                let norms = error_norms(&mesh, &patches, case, quadrature_of(depth), &u)?;
                out.push(TimingReport {
                    level,
                    n_elements: mesh.face_count(),
                    depth,
                    e_l2: norms.l2_relative,
                    assembly_seconds: best[d],
                });
            }
        }
        Ok(())
    })?;

    let mut text = String::from("level,n_elements,n_d,e_L2,assembly_seconds\r\n");
    for r in &out {
        writeln!(
            text,
            "{},{},{},{},{}\r",
            r.level,
            r.n_elements,
            r.depth,
            fmt17(r.e_l2),
            fmt17(r.assembly_seconds)
        )
        .unwrap();
    }
    std::fs::write(config.out_dir.join("timing.csv"), text)?;
    Ok(out)
}
