//! `folab`: the command-line laboratory. Every stochastic command takes a
//! mandatory seed and emits a JSON report embedding (seed, n, t, build,
//! wall time); results are independent of the worker count.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure,
//! 4 estimator tolerance unmet.

use clap::{Args, Parser, Subcommand};
use foliation_lab::cocycle::{
    cocycle_identity_check, hl_separated, hr_check, integrability_diag, lyapunov_estimate,
    lyapunov_synthetic, SyntheticCurrent,
};
use foliation_lab::dimension::{
    closed_form, default_radii, jouanolou_dimension, local_dimension, measure_decay_check,
    ratio_aligned_radii, sample_transversal_global, sample_transversal_synthetic, Ifs,
};
use foliation_lab::geometry::{eigen_data, find_singularities, FoliationSpec, HomPoly};
use foliation_lab::hyperbolic::{
    dynkin_check, plane_entropy, sample_bm, DynkinTestFn, HypPoint, StepControl,
};
use foliation_lab::local_model::{angular_domain, sector_metric_checks, LinearSingularity};
use foliation_lab::numeric::{format_complex, parse_complex};
use foliation_lab::report::{Report, RunMeta};
use foliation_lab::tracker::{
    build_covering, calibrate_density_floor, calibrate_zeta, crossing_ratios, CoveringParams,
    TrackerContext, WalkParams,
};
use num_complex::Complex64;
use serde_json::json;
use std::collections::BTreeMap;
use std::time::Instant;

type C = Complex64;

const EXIT_CONFIG: i32 = 2;
const EXIT_NUMERIC: i32 = 3;
const EXIT_TOLERANCE: i32 = 4;

#[derive(Parser)]
#[command(name = "folab", about = "Numerical laboratory for foliated harmonic currents")]
struct Cli {
    /// Flat key=value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Echo the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// RNG seed (mandatory for stochastic commands).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample / path count.
    #[arg(long, global = true)]
    n: Option<u64>,
    /// Time horizon.
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Worker threads (default: logical cores; env FOLAB_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<String>,
    /// System selector: jouanolou:d | linear:a_re,a_im,b_re,b_im | spec:PATH.
    #[arg(long, global = true)]
    system: Option<String>,
    /// Built-in synthetic density: uniform | poisson | mixture | rotating.
    #[arg(long, global = true)]
    tau: Option<String>,
    /// Base Euclidean step of the Brownian walkers.
    #[arg(long, global = true)]
    step_base: Option<f64>,
    /// Burn-in time before estimators sample global paths.
    #[arg(long, global = true)]
    burn_in: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact degree constants and the Jouanolou dimension derivation.
    Constants {
        #[arg(long)]
        degree: usize,
    },
    /// Locate and classify the singular points of a system.
    Singularities,
    /// Angular domain and sector metric comparisons of a linear model.
    LocalModel {
        /// Depth threshold for the asymptotic checks (default e^5).
        #[arg(long)]
        depth: Option<f64>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Build the foliation-box covering and report its constants.
    Covering {
        /// Calibrate zeta on this many Brownian unit segments.
        #[arg(long, default_value_t = 1000)]
        calibrate: usize,
    },
    /// Lyapunov exponent estimate along leafwise Brownian paths.
    Lyapunov,
    /// Entropy of the hyperbolic plane (differenced Kaimanovich MC).
    EntropyPlane {
        /// Write one sampled path as CSV (time,re,im).
        #[arg(long)]
        trace_csv: Option<String>,
        /// Exit with code 4 when the reported stderr exceeds this bound.
        #[arg(long)]
        max_stderr: Option<f64>,
    },
    /// Separated-set leaf entropy on the plane.
    EntropyLeaf {
        /// Comma-separated horizons (default 5,10,15,20).
        #[arg(long)]
        horizons: Option<String>,
        /// Net separation (default 1.0).
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
    },
    /// Furstenberg-entropy identity check on a synthetic current.
    HdSynthetic,
    /// Relative-entropy nonnegativity check on a synthetic current.
    HrCheck,
    /// Transversal hitting measure and local-dimension regression.
    Dimension {
        /// Measure source: uniform | cantor | ifs:RATIO | synthetic | global.
        #[arg(long, default_value = "uniform")]
        source: String,
        /// Total path time for hitting-measure sources.
        #[arg(long, default_value_t = 40.0)]
        total_time: f64,
    },
    /// Self-similar measure decay exponent check.
    DecayCheck {
        #[arg(long, default_value_t = 1.0 / 3.0)]
        ratio: f64,
    },
    /// Integrability diagnostics along shifted unit segments.
    Diagnostics,
    /// Dynkin-formula calibration of the generator convention.
    Dynkin,
}

fn main() {
    let cli = Cli::parse();
    let code = run(cli);
    std::process::exit(code);
}

/// Flat key=value config file; unknown keys are rejected.
fn load_config(path: &str) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("config {path}: {e}"))?;
    let mut map = BTreeMap::new();
    let known = [
        "seed", "n", "t", "workers", "out", "system", "tau", "step_base", "burn_in",
    ];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", lineno + 1))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !known.contains(&k.as_str()) {
            return Err(format!("config line {}: unknown key `{k}`", lineno + 1));
        }
        map.insert(k, v);
    }
    Ok(map)
}

fn merge_config(common: &mut Common, file: &BTreeMap<String, String>) -> Result<(), String> {
    let parse = |k: &str, v: &str| format!("config key {k}: cannot parse `{v}`");
    for (k, v) in file {
        match k.as_str() {
            "seed" if common.seed.is_none() => {
                common.seed = Some(v.parse().map_err(|_| parse(k, v))?)
            }
            "n" if common.n.is_none() => common.n = Some(v.parse().map_err(|_| parse(k, v))?),
            "t" if common.t.is_none() => common.t = Some(v.parse().map_err(|_| parse(k, v))?),
            "workers" if common.workers.is_none() => {
                common.workers = Some(v.parse().map_err(|_| parse(k, v))?)
            }
            "out" if common.out.is_none() => common.out = Some(v.clone()),
            "system" if common.system.is_none() => common.system = Some(v.clone()),
            "tau" if common.tau.is_none() => common.tau = Some(v.clone()),
            "step_base" if common.step_base.is_none() => {
                common.step_base = Some(v.parse().map_err(|_| parse(k, v))?)
            }
            "burn_in" if common.burn_in.is_none() => {
                common.burn_in = Some(v.parse().map_err(|_| parse(k, v))?)
            }
            _ => {}
        }
    }
    Ok(())
}

fn resolved_config(common: &Common, command: &str) -> String {
    let mut out = format!("command = {command}\n");
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push_str(&format!("{k} = {v}\n"));
        }
    };
    push("seed", common.seed.map(|v| v.to_string()));
    push("n", common.n.map(|v| v.to_string()));
    push("t", common.t.map(|v| v.to_string()));
    push("workers", common.workers.map(|v| v.to_string()));
    push("out", common.out.clone());
    push("system", common.system.clone());
    push("tau", common.tau.clone());
    push("step_base", common.step_base.map(|v| v.to_string()));
    push("burn_in", common.burn_in.map(|v| v.to_string()));
    out
}

struct Ctx {
    common: Common,
    started: Instant,
    command: String,
}

impl Ctx {
    fn meta(&self) -> RunMeta {
        RunMeta {
            command: self.command.clone(),
            seed: self.common.seed,
            n: self.common.n,
            t: self.common.t,
            build: env!("FOLAB_GIT_DESCRIBE").to_string(),
            workers: rayon::current_num_threads(),
            wall_ms: self.started.elapsed().as_millis(),
        }
    }

    fn seed(&self) -> Result<u64, String> {
        self.common
            .seed
            .ok_or_else(|| "stochastic command requires --seed".to_string())
    }

    fn control(&self) -> StepControl {
        let mut c = StepControl::default();
        if let Some(b) = self.common.step_base {
            c.base = b;
        }
        c
    }

    fn walk_params(&self) -> WalkParams {
        let mut p = WalkParams::default();
        if let Some(b) = self.common.burn_in {
            p.burn_in = b;
        }
        p
    }

    fn emit<T: serde::Serialize>(&self, result: T) -> Result<(), String> {
        let report = Report { meta: self.meta(), result };
        let text = report.to_json();
        match &self.common.out {
            Some(path) => std::fs::write(path, text).map_err(|e| e.to_string())?,
            None => println!("{text}"),
        }
        Ok(())
    }
}

/// Parse the system selector into a foliation spec.
fn parse_system(sel: &str) -> Result<FoliationSpec, String> {
    if let Some(d) = sel.strip_prefix("jouanolou:") {
        let d: usize = d.parse().map_err(|_| format!("bad degree in `{sel}`"))?;
        if d < 2 {
            return Err("jouanolou degree must be >= 2".into());
        }
        return Ok(FoliationSpec::jouanolou(d));
    }
    if let Some(rest) = sel.strip_prefix("linear:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 2 {
            return Err("linear system needs `linear:a,b` with complex a, b".into());
        }
        let a = parse_complex(parts[0]).ok_or("bad complex a")?;
        let b = parse_complex(parts[1]).ok_or("bad complex b")?;
        let p = HomPoly { terms: vec![([1, 0, 0], a)] };
        let q = HomPoly { terms: vec![([0, 1, 0], b)] };
        let r = HomPoly { terms: vec![] };
        return FoliationSpec::new(1, [p, q, r]).map_err(|e| e.to_string());
    }
    if let Some(path) = sel.strip_prefix("spec:") {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
        return FoliationSpec::from_text(&text).map_err(|e| e.to_string());
    }
    Err(format!("unknown system selector `{sel}`"))
}

fn parse_linear(sel: &str) -> Result<LinearSingularity, String> {
    let rest = sel
        .strip_prefix("linear:")
        .ok_or("local-model needs --system linear:a,b")?;
    let parts: Vec<&str> = rest.split(',').collect();
    if parts.len() != 2 {
        return Err("linear system needs `linear:a,b`".into());
    }
    let a = parse_complex(parts[0]).ok_or("bad complex a")?;
    let b = parse_complex(parts[1]).ok_or("bad complex b")?;
    LinearSingularity::new(a, b).map_err(|e| e.to_string())
}

fn run(mut cli: Cli) -> i32 {
    if let Some(path) = cli.config.clone() {
        let file = match load_config(&path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
        };
        if let Err(e) = merge_config(&mut cli.common, &file) {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    }
    let workers = cli
        .common
        .workers
        .or_else(|| std::env::var("FOLAB_WORKERS").ok().and_then(|v| v.parse().ok()));
    if let Some(w) = workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let command = command_name(&cli.command);
    if cli.print_config {
        print!("{}", resolved_config(&cli.common, command));
        return 0;
    }
    let ctx = Ctx {
        common: cli.common.clone(),
        started: Instant::now(),
        command: command.to_string(),
    };
    match dispatch(&cli.command, &ctx) {
        Ok(code) => code,
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
        Err(RunError::Numeric(e)) => {
            eprintln!("numerical failure: {e}");
            EXIT_NUMERIC
        }
    }
}

fn command_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Constants { .. } => "constants",
        Cmd::Singularities => "singularities",
        Cmd::LocalModel { .. } => "local-model",
        Cmd::Covering { .. } => "covering",
        Cmd::Lyapunov => "lyapunov",
        Cmd::EntropyPlane { .. } => "entropy-plane",
        Cmd::EntropyLeaf { .. } => "entropy-leaf",
        Cmd::HdSynthetic => "hd-synthetic",
        Cmd::HrCheck => "hr-check",
        Cmd::Dimension { .. } => "dimension",
        Cmd::DecayCheck { .. } => "decay-check",
        Cmd::Diagnostics => "diagnostics",
        Cmd::Dynkin => "dynkin",
    }
}

enum RunError {
    Config(String),
    Numeric(String),
}

impl From<String> for RunError {
    fn from(e: String) -> Self {
        RunError::Config(e)
    }
}

impl From<&str> for RunError {
    fn from(e: &str) -> Self {
        RunError::Config(e.to_string())
    }
}

fn numeric<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Numeric(e.to_string())
}

fn dispatch(cmd: &Cmd, ctx: &Ctx) -> Result<i32, RunError> {
    match cmd {
        Cmd::Constants { degree } => {
            let c = closed_form(*degree).map_err(numeric)?;
            println!("degree           | {}", c.degree);
            println!("lyapunov         | {}", c.lyapunov);
            println!("brunella_bound   | {}", c.brunella_bound);
            let mut result = json!({
                "degree": c.degree,
                "lyapunov": c.lyapunov.to_string(),
                "brunella_bound": c.brunella_bound.to_string(),
            });
            if *degree == 2 {
                let j = jouanolou_dimension();
                println!("jouanolou_dim    | {}", j.dimension);
                result["jouanolou_dimension"] = json!(j.dimension.to_string());
                result["derivation"] = json!({
                    "leaf_entropy": j.leaf_entropy.to_string(),
                    "lyapunov_abs": j.lyapunov_abs.to_string(),
                    "entropy_equality": j.entropy_equality_justification,
                    "leaf_entropy_reason": j.leaf_entropy_justification,
                });
            }
            ctx.emit(result)?;
            Ok(0)
        }
        Cmd::Singularities => {
            let sel = ctx.common.system.clone().ok_or("singularities needs --system")?;
            let spec = parse_system(&sel)?;
            let points = find_singularities(&spec, 1e-12).map_err(numeric)?;
            let mut rows = Vec::new();
            for p in &points {
                let d = eigen_data(&spec, p, 1e-9).map_err(numeric)?;
                println!(
                    "[{} : {} : {}]  a = {}  b = {}  hyperbolic = {}  r_lin = {:.4}",
                    format_complex(p.homogeneous[0]),
                    format_complex(p.homogeneous[1]),
                    format_complex(p.homogeneous[2]),
                    format_complex(d.a),
                    format_complex(d.b),
                    d.hyperbolic,
                    d.linearization_radius
                );
                rows.push(json!({
                    "location": [
                        format_complex(p.homogeneous[0]),
                        format_complex(p.homogeneous[1]),
                        format_complex(p.homogeneous[2]),
                    ],
                    "a": format_complex(d.a),
                    "b": format_complex(d.b),
                    "hyperbolic": d.hyperbolic,
                    "linearization_radius": d.linearization_radius,
                }));
            }
            ctx.emit(json!({"count": points.len(), "singularities": rows}))?;
            Ok(0)
        }
        Cmd::LocalModel { depth, samples } => {
            let sel = ctx.common.system.clone().ok_or("local-model needs --system linear:a,b")?;
            let lin = parse_linear(&sel)?;
            let seed = ctx.seed()?;
            let dom = angular_domain(&lin);
            let depth = depth.unwrap_or((5.0f64).exp());
            let report = sector_metric_checks(&lin, *samples, depth, seed).map_err(numeric)?;
            ctx.emit(json!({
                "angular_domain": {"start": dom.start, "opening": dom.opening},
                "metric_checks": report,
            }))?;
            Ok(0)
        }
        Cmd::Covering { calibrate } => {
            let sel = ctx.common.system.clone().ok_or("covering needs --system")?;
            let spec = parse_system(&sel)?;
            let seed = ctx.seed()?;
            let tctx = TrackerContext::new(spec).map_err(numeric)?;
            let mut cov =
                build_covering(tctx, &CoveringParams { seed, ..Default::default() })
                    .map_err(numeric)?;
            calibrate_density_floor(&mut cov, 60, seed ^ 0x11);
            let zeta = if *calibrate > 0 {
                Some(
                    calibrate_zeta(&mut cov, *calibrate, seed ^ 0x22, ctx.walk_params())
                        .map_err(numeric)?,
                )
            } else {
                None
            };
            let boxes: Vec<_> = cov
                .boxes
                .iter()
                .map(|b| json!({"id": b.id, "chart": b.chart, "kind": b.kind, "trans_radius": b.trans_radius}))
                .collect();
            ctx.emit(json!({
                "n_boxes": cov.boxes.len(),
                "constants": cov.constants,
                "zeta": zeta,
                "sector_radius": cov.sector_radius,
                "nerve_edges": cov.nerve.len(),
                "boxes": boxes,
            }))?;
            Ok(0)
        }
        Cmd::Lyapunov => {
            let sel = ctx.common.system.clone().ok_or("lyapunov needs --system")?;
            let seed = ctx.seed()?;
            let n = ctx.common.n.unwrap_or(100) as usize;
            let t = ctx.common.t.unwrap_or(20.0);
            if sel.starts_with("synthetic") {
                let rep = lyapunov_synthetic(n, t, seed);
                ctx.emit(json!({"report": rep, "analytic_target": 0.0}))?;
                return Ok(0);
            }
            let spec = parse_system(&sel)?;
            let tctx = TrackerContext::new(spec).map_err(numeric)?;
            let mut cov = build_covering(tctx, &CoveringParams { seed, ..Default::default() })
                .map_err(numeric)?;
            calibrate_density_floor(&mut cov, 60, seed ^ 0x11);
            let (rep, target) =
                lyapunov_estimate(&cov, t, n, ctx.walk_params(), seed).map_err(numeric)?;
            ctx.emit(json!({"report": rep, "analytic_target": target}))?;
            Ok(0)
        }
        Cmd::EntropyPlane { trace_csv, max_stderr } => {
            let seed = ctx.seed()?;
            let n = ctx.common.n.unwrap_or(100_000) as usize;
            let t = ctx.common.t.unwrap_or(20.0);
            if let Some(path) = trace_csv {
                let bm = sample_bm(
                    &HypPoint::disc(C::new(0.0, 0.0)),
                    t,
                    ctx.control(),
                    seed,
                    2000,
                )
                .map_err(numeric)?;
                let mut csv = String::from("time,re,im\n");
                for (time, z) in &bm.samples {
                    csv.push_str(&format!("{time},{},{}\n", z.re, z.im));
                }
                std::fs::write(path, csv).map_err(|e| RunError::Config(e.to_string()))?;
            }
            let rep = plane_entropy(t, n, ctx.control(), seed).map_err(numeric)?;
            let ok = max_stderr.map(|m| rep.stderr <= m).unwrap_or(true);
            ctx.emit(rep)?;
            Ok(if ok { 0 } else { EXIT_TOLERANCE })
        }
        Cmd::EntropyLeaf { horizons, separation } => {
            let seed = ctx.seed()?;
            let horizons: Vec<f64> = horizons
                .clone()
                .unwrap_or_else(|| "5,10,15,20".to_string())
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad horizon `{s}`")))
                .collect::<Result<_, _>>()?;
            let budget = ctx.common.n.unwrap_or(100_000) as f64;
            let samples: Vec<usize> = horizons.iter().map(|h| (budget / h) as usize).collect();
            let rep = hl_separated(&horizons, &samples, *separation, ctx.control(), seed)
                .map_err(numeric)?;
            ctx.emit(rep)?;
            Ok(0)
        }
        Cmd::HdSynthetic => {
            let seed = ctx.seed()?;
            let n = ctx.common.n.unwrap_or(20_000) as usize;
            let t = ctx.common.t.unwrap_or(2.0);
            let tau = ctx.common.tau.clone().unwrap_or_else(|| "poisson".to_string());
            let current = SyntheticCurrent::builtin(&tau)
                .ok_or_else(|| format!("unknown tau `{tau}`"))?;
            let cal = dynkin_check(DynkinTestFn::LogBoundary, 4.0, n.min(20000), ctx.control(), seed)
                .map_err(numeric)?;
            let rep = cocycle_identity_check(&current, t, n, cal.c, ctx.control(), seed ^ 1)
                .map_err(numeric)?;
            let pass = rep.pass;
            ctx.emit(json!({"calibration": cal, "identity": rep}))?;
            Ok(if pass { 0 } else { EXIT_TOLERANCE })
        }
        Cmd::HrCheck => {
            let seed = ctx.seed()?;
            let n = ctx.common.n.unwrap_or(20_000) as usize;
            let t = ctx.common.t.unwrap_or(2.0);
            let tau = ctx.common.tau.clone().unwrap_or_else(|| "poisson".to_string());
            let current = SyntheticCurrent::builtin(&tau)
                .ok_or_else(|| format!("unknown tau `{tau}`"))?;
            let rep = hr_check(&current, t, n, ctx.control(), seed).map_err(numeric)?;
            let pass = rep.pass_nonnegative;
            ctx.emit(rep)?;
            Ok(if pass { 0 } else { EXIT_TOLERANCE })
        }
        Cmd::Dimension { source, total_time } => {
            let seed = ctx.seed()?;
            match source.as_str() {
                "uniform" => {
                    let n = ctx.common.n.unwrap_or(2_000_000) as usize;
                    let sample = foliation_lab::dimension::uniform_disc_sample(n, seed);
                    let radii: Vec<f64> =
                        (0..12).map(|k| 0.5 * (-3.0 * k as f64 / 11.0).exp()).collect();
                    let fit = local_dimension(&sample, C::new(0.0, 0.0), &radii, seed)
                        .map_err(numeric)?;
                    ctx.emit(fit)?;
                }
                "cantor" => {
                    let n = ctx.common.n.unwrap_or(400_000) as usize;
                    let ifs = Ifs::cantor();
                    let pts = ifs.sample(n, seed);
                    let sample = foliation_lab::dimension::TransversalMeasureSample {
                        transversal: 0,
                        hits: pts.iter().map(|(z, _)| (z.re, z.im, 1.0)).collect(),
                        total_time: 0.0,
                        burn_in: 0.0,
                        seed,
                    };
                    let radii = ratio_aligned_radii(&ifs, 2, 10);
                    let fit = local_dimension(&sample, pts[0].0, &radii, seed).map_err(numeric)?;
                    ctx.emit(fit)?;
                }
                s if s.starts_with("ifs:") => {
                    let ratio: f64 = s[4..].parse().map_err(|_| "bad ifs ratio".to_string())?;
                    let n = ctx.common.n.unwrap_or(400_000) as usize;
                    let ifs = Ifs::two_maps(ratio);
                    let pts = ifs.sample(n, seed);
                    let sample = foliation_lab::dimension::TransversalMeasureSample {
                        transversal: 0,
                        hits: pts.iter().map(|(z, _)| (z.re, z.im, 1.0)).collect(),
                        total_time: 0.0,
                        burn_in: 0.0,
                        seed,
                    };
                    let radii = ratio_aligned_radii(&ifs, 2, 8);
                    let fit = local_dimension(&sample, pts[0].0, &radii, seed).map_err(numeric)?;
                    ctx.emit(fit)?;
                }
                "synthetic" => {
                    let tau = ctx.common.tau.clone().unwrap_or_else(|| "uniform".to_string());
                    let current = SyntheticCurrent::builtin(&tau)
                        .ok_or_else(|| format!("unknown tau `{tau}`"))?;
                    let n = ctx.common.n.unwrap_or(4000) as usize;
                    let sample =
                        sample_transversal_synthetic(&current, n, *total_time, 1.0, seed)
                            .map_err(numeric)?;
                    let radii = default_radii(0.5);
                    let fit = local_dimension(&sample, C::new(0.0, 0.0), &radii, seed)
                        .map_err(numeric)?;
                    ctx.emit(fit)?;
                }
                "global" => {
                    let sel = ctx.common.system.clone().ok_or("global source needs --system")?;
                    let spec = parse_system(&sel)?;
                    let n = ctx.common.n.unwrap_or(200) as usize;
                    let tctx = TrackerContext::new(spec).map_err(numeric)?;
                    let mut cov =
                        build_covering(tctx, &CoveringParams { seed, ..Default::default() })
                            .map_err(numeric)?;
                    calibrate_density_floor(&mut cov, 60, seed ^ 0x11);
                    // Use the first regular box's transversal.
                    let box_id = cov
                        .boxes
                        .iter()
                        .position(|b| matches!(b.kind, foliation_lab::tracker::BoxKind::Regular { .. }))
                        .ok_or("no regular box")?;
                    let sample = sample_transversal_global(
                        &cov,
                        box_id,
                        n,
                        *total_time,
                        ctx.walk_params().burn_in,
                        ctx.walk_params(),
                        seed,
                    )
                    .map_err(numeric)?;
                    let positions = sample.positions();
                    let center = positions[positions.len() / 2];
                    let r_max = cov.boxes[box_id].trans_radius * 0.8;
                    let radii: Vec<f64> =
                        (0..12).map(|k| r_max * (-3.0 * k as f64 / 11.0).exp()).collect();
                    let fit = local_dimension(&sample, center, &radii, seed);
                    match fit {
                        Ok(fit) => ctx.emit(json!({
                            "hits": sample.hits.len(),
                            "fit": fit,
                            "expected_jouanolou": 0.25,
                            "note": "diagnostic only: sampled measure and metric are approximate",
                        }))?,
                        Err(e) => ctx.emit(json!({
                            "hits": sample.hits.len(),
                            "fit": null,
                            "error": e.to_string(),
                            "note": "diagnostic only",
                        }))?,
                    }
                }
                other => return Err(RunError::Config(format!("unknown source `{other}`"))),
            }
            Ok(0)
        }
        Cmd::DecayCheck { ratio } => {
            let seed = ctx.seed()?;
            let n = ctx.common.n.unwrap_or(200_000) as usize;
            let ifs = if (*ratio - 1.0 / 3.0).abs() < 1e-9 {
                Ifs::cantor()
            } else {
                Ifs::two_maps(*ratio)
            };
            let rep = measure_decay_check(&ifs, 3, 9, n, seed).map_err(numeric)?;
            let pass = (rep.exponent - rep.h_star).abs() < 0.05;
            ctx.emit(rep)?;
            Ok(if pass { 0 } else { EXIT_TOLERANCE })
        }
        Cmd::Diagnostics => {
            let sel = ctx.common.system.clone().ok_or("diagnostics needs --system")?;
            let spec = parse_system(&sel)?;
            let seed = ctx.seed()?;
            let n = ctx.common.n.unwrap_or(200) as usize;
            let t = ctx.common.t.unwrap_or(50.0);
            let tctx = TrackerContext::new(spec).map_err(numeric)?;
            let mut cov = build_covering(tctx, &CoveringParams { seed, ..Default::default() })
                .map_err(numeric)?;
            calibrate_density_floor(&mut cov, 60, seed ^ 0x11);
            let zeta = calibrate_zeta(&mut cov, 200, seed ^ 0x22, ctx.walk_params())
                .map_err(numeric)?;
            let ratios = crossing_ratios(&cov, 200, seed ^ 0x33, ctx.walk_params())
                .map_err(numeric)?;
            let violations = ratios.iter().filter(|(q, d)| *q > zeta * d.max(1e-9)).count();
            let rep = integrability_diag(&cov, t, n, ctx.walk_params(), seed).map_err(numeric)?;
            ctx.emit(json!({
                "integrability": rep,
                "zeta": zeta,
                "holdout_crossing_violations": violations,
            }))?;
            Ok(0)
        }
        Cmd::Dynkin => {
            let seed = ctx.seed()?;
            let n = ctx.common.n.unwrap_or(20_000) as usize;
            let t = ctx.common.t.unwrap_or(4.0);
            let rep = dynkin_check(DynkinTestFn::LogBoundary, t, n, ctx.control(), seed)
                .map_err(numeric)?;
            ctx.emit(rep)?;
            Ok(0)
        }
    }
}
