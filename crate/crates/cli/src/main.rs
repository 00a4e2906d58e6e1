//! Command-line frontend: implicitize a point cloud, sweep a
//! representation along a motion, and query the result. Every output
//! file gets a manifest recording the command, input hashes, parameters
//! and timings; runs are deterministic for fixed seeds.

use clap::{Args, Parser, Subcommand};
use nalgebra::{Point3, Vector3};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;
use sweptvol_core::error::Error as CoreError;
use sweptvol_core::geometry::{Box3, OrientedPointCloud};
use sweptvol_core::grid::ScalarGrid;
use sweptvol_core::io;
use sweptvol_core::mpu::{mpu_build, MpuParams};
use sweptvol_core::query::{
    self, point_membership, ray_intersect_all, ray_intersect_first, subtract, time_witnesses,
    QueryConfig, Ray, SubtractObject,
};
use sweptvol_core::slim::{slim_build, SlimParams};
use sweptvol_core::sweep::{build_swept_rep, partition_cost, SweepParams};
use sweptvol_core::SolverConfig;

#[derive(Parser)]
#[command(name = "sweptvol", about = "Implicit swept volumes from oriented point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a local implicit representation from an oriented point cloud.
    Implicitize(ImplicitizeArgs),
    /// Build the swept-volume structure from a representation and motion.
    Sweep(SweepArgs),
    /// Query a swept structure.
    Query(QueryArgs),
}

#[derive(Args)]
struct ImplicitizeArgs {
    /// mpu (octree quadrics) or slim (ball cover)
    #[arg(long)]
    method: String,
    /// Cloud file: lines of `x y z nx ny nz`
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Taubin-error acceptance threshold (mpu)
    #[arg(long)]
    eps0: Option<f64>,
    /// Minimum support points per fit (mpu)
    #[arg(long)]
    nmin: Option<usize>,
    /// Support radius factor (mpu)
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta_sharp: Option<f64>,
    #[arg(long)]
    theta_corner: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Initial cover radius fraction of the diagonal (slim)
    #[arg(long)]
    rho0_fraction: Option<f64>,
    /// Description-length scale (slim)
    #[arg(long)]
    t_mdl: Option<f64>,
    /// Keep non-accepted fits as multi-scale levels (slim)
    #[arg(long)]
    keep_levels: bool,
    /// RNG seed (slim cover)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail (exit 3) when any fit was accepted on a degraded path
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    motion: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Refine contacts against the six face equations only
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    time_samples: Option<usize>,
    #[arg(long)]
    contact_tol: Option<f64>,
    #[arg(long)]
    max_cells: Option<usize>,
    /// Importance weight grid (binary grid format)
    #[arg(long)]
    weight_grid: Option<PathBuf>,
    /// Seed splits along the swept path before the cost loop
    #[arg(long)]
    seed_splits: bool,
    /// Prune pair solves via the anchor-distance filter
    #[arg(long)]
    prune: bool,
    /// Also build the other contact mode and check fast covers exact
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct QueryArgs {
    /// Swept structure file
    #[arg(long)]
    rep: PathBuf,
    #[arg(long)]
    no_early_exit: bool,
    #[command(subcommand)]
    what: QueryKind,
}

#[derive(Subcommand)]
enum QueryKind {
    /// Point membership: inside flag, signed value, witness.
    Point {
        #[arg(allow_negative_numbers = true)]
        x: f64,
        #[arg(allow_negative_numbers = true)]
        y: f64,
        #[arg(allow_negative_numbers = true)]
        z: f64,
    },
    /// First (or all) ray intersections.
    Ray {
        #[arg(allow_negative_numbers = true)]
        ox: f64,
        #[arg(allow_negative_numbers = true)]
        oy: f64,
        #[arg(allow_negative_numbers = true)]
        oz: f64,
        #[arg(allow_negative_numbers = true)]
        dx: f64,
        #[arg(allow_negative_numbers = true)]
        dy: f64,
        #[arg(allow_negative_numbers = true)]
        dz: f64,
        #[arg(long)]
        all: bool,
    },
    /// Time intervals during which the point is covered.
    Times {
        #[arg(allow_negative_numbers = true)]
        x: f64,
        #[arg(allow_negative_numbers = true)]
        y: f64,
        #[arg(allow_negative_numbers = true)]
        z: f64,
    },
    /// Subtract the swept volume from an object onto a grid.
    Subtract {
        /// Object file: representation or swept structure JSON
        #[arg(long)]
        object: PathBuf,
        #[arg(long, num_args = 3)]
        dims: Vec<usize>,
        /// x0 y0 z0 x1 y1 z1 (default: object bound united with the swept bound)
        #[arg(long, num_args = 6, allow_negative_numbers = true)]
        bounds: Option<Vec<f64>>,
        #[arg(long)]
        output: PathBuf,
        /// Write the ASCII variant instead of binary
        #[arg(long)]
        ascii: bool,
    },
    /// Sample the swept field alone onto a grid.
    ExportGrid {
        #[arg(long, num_args = 3)]
        dims: Vec<usize>,
        #[arg(long, num_args = 6, allow_negative_numbers = true)]
        bounds: Option<Vec<f64>>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        ascii: bool,
    },
}

#[derive(Serialize)]
struct Manifest {
    command: Vec<String>,
    inputs: BTreeMap<String, String>,
    parameters: serde_json::Value,
    seed: u64,
    timings_ms: BTreeMap<String, u128>,
    outputs: Vec<String>,
}

fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Parse { .. }
        | CoreError::Io(_)
        | CoreError::Json(_)
        | CoreError::InvalidInput(_) => 2,
        CoreError::Domain { .. }
        | CoreError::Bracket { .. }
        | CoreError::Underdetermined { .. }
        | CoreError::DegenerateFrame { .. } => 3,
    }
}

struct SurfacedError {
    code: i32,
    message: String,
}

impl From<CoreError> for SurfacedError {
    fn from(err: CoreError) -> Self {
        SurfacedError { code: exit_code(&err), message: err.to_string() }
    }
}

impl SurfacedError {
    fn numeric(message: impl Into<String>) -> Self {
        SurfacedError { code: 3, message: message.into() }
    }

    fn input(message: impl Into<String>) -> Self {
        SurfacedError { code: 2, message: message.into() }
    }
}

fn main() {
    if let Ok(threads) = std::env::var("SWEPTVOL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Implicitize(args) => run_implicitize(&args),
        Command::Sweep(args) => run_sweep(&args),
        Command::Query(args) => run_query(&args),
    };
    if let Err(SurfacedError { code, message }) = result {
        eprintln!("error: {message}");
        std::process::exit(code);
    }
}

fn hash_file(path: &Path) -> Result<String, SurfacedError> {
    let bytes = std::fs::read(path).map_err(CoreError::from)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn write_manifest(
    output: &Path,
    inputs: &[&Path],
    parameters: serde_json::Value,
    seed: u64,
    timings: BTreeMap<String, u128>,
) -> Result<(), SurfacedError> {
    let mut input_hashes = BTreeMap::new();
    for path in inputs {
        input_hashes.insert(path.display().to_string(), hash_file(path)?);
    }
    let manifest = Manifest {
        command: std::env::args().collect(),
        inputs: input_hashes,
        parameters,
        seed,
        timings_ms: timings,
        outputs: vec![output.display().to_string()],
    };
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    let path = output.with_file_name(name);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(CoreError::from)?)
        .map_err(CoreError::from)?;
    Ok(())
}

fn run_implicitize(args: &ImplicitizeArgs) -> Result<(), SurfacedError> {
    let cloud = OrientedPointCloud::load_xyzn(&args.input)?;
    let t0 = Instant::now();
    let mut timings = BTreeMap::new();
    let parameters;
    let flagged;
    match args.method.as_str() {
        "mpu" => {
            let defaults = MpuParams::default();
            let params = MpuParams {
                alpha: args.alpha.unwrap_or(defaults.alpha),
                n_min: args.nmin.unwrap_or(defaults.n_min),
                eps0: args.eps0.unwrap_or(defaults.eps0),
                theta_sharp: args.theta_sharp.unwrap_or(defaults.theta_sharp),
                theta_corner: args.theta_corner.unwrap_or(defaults.theta_corner),
                max_depth: args.max_depth.unwrap_or(defaults.max_depth),
            };
            let build = mpu_build(&cloud, &params)?;
            timings.insert("build".to_string(), t0.elapsed().as_millis());
            io::save_rep(&build.rep, &args.output)?;
            println!("patches: {}", build.rep.patches.len());
            println!("max taubin error: {:.6e}", build.max_taubin);
            println!("depth-capped cubes: {}", build.depth_capped_cubes);
            flagged = build.depth_capped_cubes > 0;
            parameters = serde_json::json!({
                "method": "mpu",
                "alpha": params.alpha,
                "n_min": params.n_min,
                "eps0": params.eps0,
                "theta_sharp": params.theta_sharp,
                "theta_corner": params.theta_corner,
                "max_depth": params.max_depth,
            });
        }
        "slim" => {
            let defaults = SlimParams::default();
            let params = SlimParams {
                rho0_fraction: args.rho0_fraction.unwrap_or(defaults.rho0_fraction),
                t_mdl: args.t_mdl.unwrap_or(defaults.t_mdl),
                levels_kept: args.keep_levels,
                rng_seed: args.seed,
                ..defaults
            };
            let build = slim_build(&cloud, &params)?;
            timings.insert("build".to_string(), t0.elapsed().as_millis());
            io::save_rep(&build.rep, &args.output)?;
            println!("balls: {}", build.rep.patches.len());
            println!("levels: {}", build.levels_built);
            println!("lambda: {:.6e}", build.lambda);
            println!(
                "coverage: {}/{} points, {} force-accepted",
                cloud.len() - build.rep.uncovered_points(&cloud).len(),
                cloud.len(),
                build.forced_points
            );
            flagged = build.forced_points > 0;
            parameters = serde_json::json!({
                "method": "slim",
                "rho0_fraction": params.rho0_fraction,
                "g": params.g,
                "t_mdl": params.t_mdl,
                "levels_kept": params.levels_kept,
            });
        }
        other => {
            return Err(SurfacedError::input(format!(
                "unknown method `{other}`; expected mpu or slim"
            )))
        }
    }
    write_manifest(&args.output, &[&args.input], parameters, args.seed, timings)?;
    if args.strict && flagged {
        return Err(SurfacedError::numeric("degraded fits present and --strict given"));
    }
    Ok(())
}

fn sweep_params(args: &SweepArgs) -> Result<SweepParams, SurfacedError> {
    let defaults = SweepParams::default();
    let weight = match &args.weight_grid {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(CoreError::from)?;
            let grid = ScalarGrid::read_binary(&mut bytes.as_slice())?;
            grid.validate_weight()?;
            Some(grid)
        }
        None => None,
    };
    Ok(SweepParams {
        time_samples: args.time_samples.unwrap_or(defaults.time_samples),
        contact_tol: args.contact_tol.unwrap_or(defaults.contact_tol),
        fast_mode: args.fast,
        weight,
        max_cells: args.max_cells.unwrap_or(defaults.max_cells),
        seed_splits_along_path: args.seed_splits,
        remark1_prune: args.prune,
    })
}

fn run_sweep(args: &SweepArgs) -> Result<(), SurfacedError> {
    let base = io::load_rep(&args.base)?;
    let motion = io::load_motion(&args.motion)?;
    let params = sweep_params(args)?;
    let t0 = Instant::now();
    let swept = build_swept_rep(&base, &motion, &params)?;
    let mut timings = BTreeMap::new();
    timings.insert("build".to_string(), t0.elapsed().as_millis());

    if args.verify {
        let t1 = Instant::now();
        let mut exact_params = params.clone();
        exact_params.fast_mode = false;
        let mut fast_params = params.clone();
        fast_params.fast_mode = true;
        let exact = build_swept_rep(&base, &motion, &exact_params)?;
        let fast = build_swept_rep(&base, &motion, &fast_params)?;
        for (ce, cf) in exact.cells.iter().zip(&fast.cells) {
            for e in ce.entries.iter() {
                let covered = cf
                    .entries
                    .iter()
                    .any(|f| f.patch == e.patch && f.t0 <= e.t0 && e.t1 <= f.t1);
                if !covered {
                    return Err(SurfacedError::numeric(format!(
                        "fast intervals do not cover exact entry (patch {}, [{}, {}])",
                        e.patch, e.t0, e.t1
                    )));
                }
            }
        }
        timings.insert("verify".to_string(), t1.elapsed().as_millis());
        println!("verify: fast-mode intervals cover exact-mode intervals");
    }

    io::save_swept(&swept, &args.output)?;
    let (a, b) = motion.domain();
    if a == b {
        println!("note: degenerate motion domain [{a}, {a}]; structure is a static placement");
    }
    println!("cells: {}", swept.cells.len());
    println!("mean entries per cell: {:.3}", swept.mean_entries());
    println!("cost: {:.6}", partition_cost(&swept.cells, params.weight.as_ref(), &swept.bound));
    write_manifest(
        &args.output,
        &[&args.base, &args.motion],
        serde_json::json!({
            "time_samples": params.time_samples,
            "contact_tol": params.contact_tol,
            "fast_mode": params.fast_mode,
            "max_cells": params.max_cells,
            "seed_splits_along_path": params.seed_splits_along_path,
            "remark1_prune": params.remark1_prune,
            "weighted": params.weight.is_some(),
        }),
        0,
        timings,
    )?;
    Ok(())
}

fn parse_bounds(values: &Option<Vec<f64>>, fallback: Box3) -> Result<Box3, SurfacedError> {
    match values {
        None => Ok(fallback),
        Some(v) => Box3::new(Point3::new(v[0], v[1], v[2]), Point3::new(v[3], v[4], v[5]))
            .map_err(Into::into),
    }
}

fn dims3(dims: &[usize]) -> [usize; 3] {
    [dims[0], dims[1], dims[2]]
}

fn run_query(args: &QueryArgs) -> Result<(), SurfacedError> {
    let swept = io::load_swept(&args.rep)?;
    let cfg = QueryConfig { solver: SolverConfig::default(), early_exit: !args.no_early_exit };
    match &args.what {
        QueryKind::Point { x, y, z } => {
            let result = point_membership(&swept, &Point3::new(*x, *y, *z), &cfg);
            println!(
                "{}",
                serde_json::json!({
                    "inside": result.inside,
                    "signed_distance": finite_or_null(result.signed_distance),
                    "far": result.far_away,
                    "distance_upper_bound": result.distance_upper_bound,
                    "witness": result.witness.map(|(patch, t)| serde_json::json!({"patch": patch, "t": t})),
                })
            );
        }
        QueryKind::Ray { ox, oy, oz, dx, dy, dz, all } => {
            let dir = Vector3::new(*dx, *dy, *dz);
            if dir.norm() < 1e-12 {
                return Err(SurfacedError::input("ray direction must be nonzero"));
            }
            let ray = Ray::new(Point3::new(*ox, *oy, *oz), dir.normalize())?;
            if *all {
                for hit in ray_intersect_all(&swept, &ray, &cfg) {
                    println!(
                        "{}",
                        serde_json::json!({
                            "s": hit.s,
                            "point": [hit.point.x, hit.point.y, hit.point.z],
                            "entering": hit.entering,
                            "grazing": hit.grazing,
                        })
                    );
                }
            } else {
                match ray_intersect_first(&swept, &ray, &cfg) {
                    Some(hit) => println!(
                        "{}",
                        serde_json::json!({
                            "hit": true,
                            "s": hit.s,
                            "point": [hit.point.x, hit.point.y, hit.point.z],
                        })
                    ),
                    None => println!("{}", serde_json::json!({"hit": false})),
                }
            }
        }
        QueryKind::Times { x, y, z } => {
            let intervals = time_witnesses(&swept, &Point3::new(*x, *y, *z), &cfg);
            println!(
                "{}",
                serde_json::json!({
                    "inside": !intervals.is_empty(),
                    "intervals": intervals.iter().map(|(a, b)| vec![*a, *b]).collect::<Vec<_>>(),
                })
            );
        }
        QueryKind::Subtract { object, dims, bounds, output, ascii } => {
            let text = std::fs::read_to_string(object).map_err(CoreError::from)?;
            // A swept bundle has a "cells" field; a plain representation
            // does not.
            let value: serde_json::Value = serde_json::from_str(&text).map_err(CoreError::from)?;
            let object_swept;
            let object_base;
            let obj = if value.get("cells").is_some() {
                object_swept = io::swept_from_json(&text)?;
                SubtractObject::Swept(&object_swept)
            } else {
                object_base = io::rep_from_json(&text)?;
                SubtractObject::Base(&object_base)
            };
            let fallback = obj.bound().union(&swept.bound);
            let bounds = parse_bounds(bounds, fallback)?;
            let t0 = Instant::now();
            let result = subtract(&obj, &swept, dims3(dims), bounds, &cfg)?;
            if result.disjoint_bounds {
                eprintln!(
                    "warning: object bound does not meet the swept bound; the difference equals the object"
                );
            }
            write_grid(&result.grid, output, *ascii)?;
            println!(
                "{}",
                serde_json::json!({
                    "inside_samples": result.inside_count,
                    "total_samples": result.grid.values.len(),
                    "disjoint_bounds": result.disjoint_bounds,
                    "output": output.display().to_string(),
                })
            );
            let mut timings = BTreeMap::new();
            timings.insert("subtract".to_string(), t0.elapsed().as_millis());
            write_manifest(
                output,
                &[&args.rep, object],
                serde_json::json!({"dims": dims, "ascii": ascii}),
                0,
                timings,
            )?;
        }
        QueryKind::ExportGrid { dims, bounds, output, ascii } => {
            let bounds = parse_bounds(bounds, swept.bound)?;
            let t0 = Instant::now();
            let grid = query::export_grid(&swept, dims3(dims), bounds, &cfg)?;
            write_grid(&grid, output, *ascii)?;
            println!(
                "{}",
                serde_json::json!({
                    "dims": dims,
                    "output": output.display().to_string(),
                })
            );
            let mut timings = BTreeMap::new();
            timings.insert("export".to_string(), t0.elapsed().as_millis());
            write_manifest(
                output,
                &[&args.rep],
                serde_json::json!({"dims": dims, "ascii": ascii}),
                0,
                timings,
            )?;
        }
    }
    Ok(())
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn write_grid(grid: &ScalarGrid, path: &Path, ascii: bool) -> Result<(), SurfacedError> {
    let mut buf = Vec::new();
    if ascii {
        grid.write_ascii(&mut buf)?;
    } else {
        grid.write_binary(&mut buf)?;
    }
    std::fs::write(path, buf).map_err(CoreError::from)?;
    Ok(())
}
