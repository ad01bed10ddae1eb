use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use reif::beta::beta_profile;
use reif::covering::{hausdorff_content, minkowski_content, packing_content, ContentReport};
use reif::generators as gen;
use reif::measure::{read_measure, write_measure_csv, write_measure_json, DiscreteMeasure};
use reif::neck::{neck_decompose, verify_neck, Decomposition, NeckParams, NeckRegion, NeckReport};
use reif::reifmap::{build_reifenberg_map, holder_exponent, HolderFit, LevelDiagnostics, ReifConfig};
use reif::{Error, Result};

/// Numerical toolkit for flatness, content, neck decompositions and
/// Reifenberg maps of point clouds.
#[derive(Debug, Parser)]
#[command(name = "reif", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Indent JSON output.
    #[arg(long, global = true)]
    pub pretty: bool,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic set or measure file.
    Gen(GenArgs),
    /// β profile at dyadic scales about a point (CSV).
    Beta(BetaArgs),
    /// Hausdorff, Minkowski or packing content at one scale.
    Content(ContentArgs),
    /// Neck decomposition of the measure in B_1(0).
    Decompose(DecomposeArgs),
    /// Reifenberg map of a point set onto its coarse plane.
    Reifmap(ReifmapArgs),
    /// Re-check the neck conditions of a neck or decomposition file.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[command(subcommand)]
    pub kind: GenKind,
    /// Output file; `.json` selects JSON, anything else CSV.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    /// Snowflake polyline starting from the segment (-2,0)-(2,0).
    Snowflake {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        iters: usize,
    },
    /// density·H^k on span(e_1..e_k) ∩ B_2.
    Plane {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        #[arg(long)]
        spacing: f64,
    },
    /// density·H^n on B_2.
    Dust {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        #[arg(long)]
        spacing: f64,
    },
    /// Plane measure plus dust.
    Mixed {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        #[arg(long)]
        spacing: f64,
        #[arg(long)]
        dust_density: f64,
        #[arg(long)]
        dust_spacing: f64,
    },
    /// Two orthogonal k-planes through the origin.
    Perpendicular {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        #[arg(long)]
        spacing: f64,
    },
    /// Graph of a sum of sines over span(e_1..e_k).
    Graph {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        slope: f64,
        #[arg(long, default_value_t = 4.0)]
        freq: f64,
        #[arg(long)]
        spacing: f64,
    },
    /// Two unit masses at distance `distance`.
    Dirac {
        #[arg(long)]
        distance: f64,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BetaArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub center: Vec<f64>,
    #[arg(long)]
    pub rmax: f64,
    #[arg(long)]
    pub rmin: f64,
    /// Profile CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report with the run configuration.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentKindArg {
    Hausdorff,
    Minkowski,
    Packing,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ContentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum)]
    pub kind: ContentKindArg,
    #[arg(long)]
    pub r: f64,
    /// Smallest certificate radius for the Hausdorff content.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NeckArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long)]
    pub rmin: f64,
    /// β threshold for e-balls; δ² when absent.
    #[arg(long)]
    pub beta_c: Option<f64>,
    /// Base of the e-ball distortion drop; δ⁴ when absent.
    #[arg(long)]
    pub drop_e: Option<f64>,
    /// Distortion drop for s-balls; δ⁶ when absent.
    #[arg(long)]
    pub s_drop: Option<f64>,
}

impl NeckArgs {
    fn params(&self) -> Result<NeckParams> {
        let p = NeckParams::new(self.k, self.delta, self.epsilon, self.nu, self.tau, self.rmin)?;
        p.with_thresholds(
            self.beta_c.unwrap_or(p.beta_c),
            self.drop_e.unwrap_or(p.drop_e),
            self.s_drop.unwrap_or(p.s_drop),
        )
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecomposeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub neck: NeckArgs,
    /// Distortion bound Γ required at every support point.
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReifmapArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub depth: usize,
    #[arg(long, default_value_t = ReifConfig::default().divisor)]
    pub divisor: f64,
    #[arg(long, default_value_t = ReifConfig::default().fit_multiplier)]
    pub fit_multiplier: f64,
    #[arg(long, default_value_t = ReifConfig::default().tol_rel)]
    pub tol_rel: f64,
    #[arg(long, default_value_t = ReifConfig::default().flatness_samples)]
    pub flatness_samples: usize,
    /// Pairs closer than this in the plane are left out of the exponent fit.
    #[arg(long, default_value_t = 0.0)]
    pub min_pair_distance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Neck region, decomposition, or decompose report.
    #[arg(long)]
    pub neck: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything a report needs to reproduce the run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub tool_version: &'static str,
    pub command: Command,
}

#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub config: RunConfig,
    /// SHA-256 of the input measure, when there is one.
    pub input_hash: Option<String>,
    pub result: T,
    pub elapsed_seconds: f64,
}

pub enum Outcome {
    Clean,
    Violations(usize),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(v: &T, out: Option<&Path>, pretty: bool) -> Result<()> {
    let text = if pretty { serde_json::to_string_pretty(v) } else { serde_json::to_string(v) }
        .map_err(|e| Error::Io(e.to_string()))?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}").map_err(|e| io_err(p, e))?;
            w.flush().map_err(|e| io_err(p, e))
        }
        None => {
            let mut w = std::io::stdout().lock();
            writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| Error::Io(format!("stdout: {e}")))
        }
    }
}

fn is_json(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

fn load(path: &Path) -> Result<DiscreteMeasure> {
    read_measure(path)
}

#[derive(Debug, Serialize)]
struct GenSummary {
    out: PathBuf,
    points: usize,
    dim: usize,
    total_mass: f64,
    edges: Option<usize>,
}

fn cmd_gen(a: &GenArgs) -> Result<GenSummary> {
    let out = a.out.clone().ok_or_else(|| Error::Input("gen needs --out".into()))?;
    let measure = match &a.kind {
        GenKind::Snowflake { delta, iters } => {
            let p = gen::snowflake(*delta, *iters)?;
            if is_json(&out) {
                write_json(&p, Some(&out), false)?;
            } else {
                p.write_csv(create(&out)?)?;
            }
            return Ok(GenSummary {
                out,
                points: p.vertices.len(),
                dim: 2,
                total_mass: p.vertices.len() as f64,
                edges: Some(p.edge_count()),
            });
        }
        GenKind::Plane { n, k, density, spacing } => gen::plane_measure(*n, *k, *density, *spacing)?,
        GenKind::Dust { n, density, spacing } => gen::dust_measure(*n, *density, *spacing)?,
        GenKind::Mixed { n, k, density, spacing, dust_density, dust_spacing } => {
            gen::mixed_measure(*n, *k, *density, *spacing, *dust_density, *dust_spacing)?
        }
        GenKind::Perpendicular { n, k, density, spacing } => gen::perpendicular_planes(*n, *k, *density, *spacing)?,
        GenKind::Graph { k, slope, freq, spacing } => {
            DiscreteMeasure::uniform(&gen::graphical_set(*k, *slope, *freq, *spacing)?)?
        }
        GenKind::Dirac { distance } => gen::dirac_pair(*distance)?,
    };
    if is_json(&out) {
        write_measure_json(&measure, create(&out)?)?;
    } else {
        write_measure_csv(&measure, create(&out)?)?;
    }
    Ok(GenSummary { out, points: measure.len(), dim: measure.dim(), total_mass: measure.total_mass(), edges: None })
}

#[derive(Debug, Serialize)]
struct ReifmapResult {
    levels: Vec<f64>,
    base: reif::geometry::AffineSubspace,
    diagnostics: Vec<LevelDiagnostics>,
    sampled_flatness: f64,
    warnings: Vec<String>,
    injective: bool,
    holder: Option<HolderFit>,
    images: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct VerifyResult {
    necks: Vec<NeckReport>,
    violations: usize,
}

/// Neck regions from a bare region, a decomposition, or a report wrapping one.
fn neck_regions(v: &Value) -> Result<Vec<NeckRegion>> {
    let v = v.get("result").unwrap_or(v);
    let bad = |e: serde_json::Error| Error::Input(format!("neck file: {e}"));
    if v.get("necks").is_some() {
        let d: Decomposition = serde_json::from_value(v.clone()).map_err(bad)?;
        Ok(d.necks.iter().map(|n| n.region(d.params)).collect())
    } else {
        Ok(vec![serde_json::from_value(v.clone()).map_err(bad)?])
    }
}

fn report<T: Serialize>(cmd: &Command, hash: Option<String>, result: T, t0: Instant) -> Report<T> {
    Report {
        config: RunConfig { tool_version: env!("CARGO_PKG_VERSION"), command: cmd.clone() },
        input_hash: hash,
        result,
        elapsed_seconds: t0.elapsed().as_secs_f64(),
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let t0 = Instant::now();
    let pretty = cli.pretty;
    let cmd = &cli.command;
    match cmd {
        Command::Gen(a) => {
            let s = cmd_gen(a)?;
            write_json(&report(cmd, None, s, t0), None, pretty)?;
            Ok(Outcome::Clean)
        }
        Command::Beta(a) => {
            let m = load(&a.input)?;
            let prof = beta_profile(&m, &a.center, a.k, a.rmax, a.rmin)?;
            match &a.out {
                Some(p) => prof.write_csv(create(p)?)?,
                None => prof.write_csv(std::io::stdout().lock())?,
            }
            if let Some(p) = &a.report {
                write_json(&report(cmd, Some(m.content_hash()), prof, t0), Some(p), pretty)?;
            }
            Ok(Outcome::Clean)
        }
        Command::Content(a) => {
            let m = load(&a.input)?;
            let pts: Vec<Vec<f64>> = m.points().map(|p| p.to_vec()).collect();
            let rep: ContentReport = match a.kind {
                ContentKindArg::Hausdorff => hausdorff_content(&pts, a.k, a.r, a.floor)?,
                ContentKindArg::Minkowski => minkowski_content(&pts, a.k, a.r)?,
                ContentKindArg::Packing => packing_content(&pts, a.k, a.r)?,
            };
            write_json(&report(cmd, Some(m.content_hash()), rep, t0), a.out.as_deref(), pretty)?;
            Ok(Outcome::Clean)
        }
        Command::Decompose(a) => {
            let m = load(&a.input)?;
            let d = neck_decompose(&m, a.neck.params()?, a.gamma)?;
            let bad: usize = d.necks.iter().map(|n| n.verify.total()).sum();
            write_json(&report(cmd, Some(m.content_hash()), d, t0), a.out.as_deref(), pretty)?;
            Ok(if bad == 0 { Outcome::Clean } else { Outcome::Violations(bad) })
        }
        Command::Reifmap(a) => {
            let m = load(&a.input)?;
            let pts: Vec<Vec<f64>> = m.points().map(|p| p.to_vec()).collect();
            let cfg = ReifConfig {
                divisor: a.divisor,
                fit_multiplier: a.fit_multiplier,
                tol_rel: a.tol_rel,
                flatness_samples: a.flatness_samples,
            };
            let map = build_reifenberg_map(&pts, a.k, a.depth, cfg)?;
            for w in &map.warnings {
                eprintln!("warning: {w}");
            }
            let holder = match holder_exponent(&pts, &map.images, a.min_pair_distance) {
                Ok(h) => Some(h),
                Err(Error::InsufficientData(msg)) => {
                    eprintln!("warning: no exponent fit: {msg}");
                    None
                }
                Err(e) => return Err(e),
            };
            let res = ReifmapResult {
                levels: map.levels.clone(),
                base: map.base.clone(),
                injective: map.injective(1e-12),
                diagnostics: map.diagnostics,
                sampled_flatness: map.sampled_flatness,
                warnings: map.warnings,
                holder,
                images: map.images,
            };
            write_json(&report(cmd, Some(m.content_hash()), res, t0), a.out.as_deref(), pretty)?;
            Ok(Outcome::Clean)
        }
        Command::Verify(a) => {
            let m = load(&a.input)?;
            let f = File::open(&a.neck).map_err(|e| io_err(&a.neck, e))?;
            let v: Value = serde_json::from_reader(std::io::BufReader::new(f))
                .map_err(|e| Error::Input(format!("{}: {e}", a.neck.display())))?;
            let necks: Vec<NeckReport> = neck_regions(&v)?
                .iter()
                .map(|n| {
                    n.params.validate()?;
                    reif::geometry::check_dim(m.dim(), n.ball.center.len())?;
                    Ok(verify_neck(&m, n))
                })
                .collect::<Result<_>>()?;
            let violations: usize = necks.iter().map(|r| r.violations.len()).sum();
            for (i, r) in necks.iter().enumerate() {
                for v in &r.violations {
                    eprintln!(
                        "neck {i}: {} at center {} (scale {:e}): {:e} > {:e}",
                        v.kind, v.center, v.scale, v.value, v.limit
                    );
                }
            }
            write_json(&report(cmd, Some(m.content_hash()), VerifyResult { necks, violations }, t0), a.out.as_deref(), pretty)?;
            Ok(if violations == 0 { Outcome::Clean } else { Outcome::Violations(violations) })
        }
    }
}
