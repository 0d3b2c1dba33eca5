//! Subcommand bodies.
//!
//! Every operation resolves all of its parameters from the flat config up
//! front (so unknown keys can be rejected before any work starts), runs its
//! trials as independently seeded units, writes trial-level rows to a CSV,
//! and returns a JSON report plus any invariant violations. Unit `i` always
//! derives its randomness from `seed + i`, and results are reduced in index
//! order, which is what makes the output independent of `--jobs`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use locos::analysis::{
    default_lambda_grid, democracy_ratio, density_experiment, fit_log_slope, greedy_vs_best,
    unconditionality_constant, weak_type_ratio, RefinePolicy, WeakTypeReport,
};
use locos::gundy::{decompose, verify_parts, GundyReport};
use locos::measure::{
    dyadic_filtration, random_filtration, AtomId, Cut, Filtration, ProbabilitySpace, Segment,
    Support,
};
use locos::nonbinary::{
    comparable_rway, nonbinary_uncond_sweep, norm_product_check, op_condition,
    two_scale_filtration, CoefficientPreset, NonbinarySystem,
};
use locos::ortho::{counterexample_three, ChainPolicy, OrthoSystem};
use locos::space::{remez_constants_from_growth, remez_empirical, LocalSpace};
use locos::tensor2d::{mean_sup_ratio, Filtration2, Rect, TensorSystem2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::Config;
use crate::exec::run_indexed;
use crate::report::{write_csv, Report};

pub struct RunCtx<'a> {
    pub cfg: &'a Config,
    pub op: &'static str,
    pub seed: u64,
    pub jobs: usize,
    pub out: &'a Path,
    pub config_hash: &'a str,
}

/// Config mistakes exit with 1, failures of the run itself with 2.
pub enum OpError {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

pub struct OpOutput {
    pub report: Report,
    pub files: Vec<PathBuf>,
    pub violations: Vec<String>,
}

pub fn run(ctx: &RunCtx) -> std::result::Result<OpOutput, OpError> {
    macro_rules! dispatch {
        ($params:ident, $run:ident) => {{
            let p = $params(ctx.cfg).map_err(OpError::Config)?;
            ctx.cfg.reject_unknown().map_err(OpError::Config)?;
            $run(ctx, p).map_err(OpError::Run)
        }};
    }
    match ctx.op {
        "build" => dispatch!(build_params, build_run),
        "remez" => dispatch!(remez_params, remez_run),
        "uncond" => dispatch!(uncond_params, uncond_run),
        "weaktype" => dispatch!(weaktype_params, weaktype_run),
        "democracy" => dispatch!(democracy_params, democracy_run),
        "gundy" => dispatch!(gundy_params, gundy_run),
        "greedy" => dispatch!(greedy_params, greedy_run),
        "density" => dispatch!(density_params, density_run),
        "counterexample" => dispatch!(counterexample_params, counterexample_run),
        "op-condition" => dispatch!(opcond_params, opcond_run),
        "tensor" => dispatch!(tensor_params, tensor_run),
        other => Err(OpError::Config(anyhow!("unknown operation `{other}`"))),
    }
}

fn new_report(ctx: &RunCtx) -> Report {
    Report::new(
        ctx.op,
        ctx.config_hash.to_string(),
        ctx.seed,
        ctx.cfg.entries().clone(),
    )
}

fn csv_name(cfg: &Config, op: &str) -> String {
    let default = format!("{op}.csv");
    cfg.str_or("out.csv", &default).to_string()
}

/// Optional `check.min` / `check.max` guard on an operation's headline
/// metric. A NaN metric trips either bound.
struct CheckRange {
    min: Option<f64>,
    max: Option<f64>,
}

fn check_range(cfg: &Config) -> Result<CheckRange> {
    Ok(CheckRange {
        min: cfg.f64_opt("check.min")?,
        max: cfg.f64_opt("check.max")?,
    })
}

impl CheckRange {
    fn apply(&self, metric: &str, value: f64, violations: &mut Vec<String>) {
        if let Some(m) = self.min {
            if !(value >= m) {
                violations.push(format!("{metric} = {value} fell below check.min = {m}"));
            }
        }
        if let Some(m) = self.max {
            if !(value <= m) {
                violations.push(format!("{metric} = {value} exceeded check.max = {m}"));
            }
        }
    }
}

// ---------------------------------------------------------------- systems

const EIGHT_POINTS: [f64; 8] = [0.0, 0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 0.95];
const EIGHT_MASSES: [f64; 8] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

enum FiltSpec {
    Dyadic(usize),
    Random(usize),
    /// File contents, loaded while parameters are resolved so a missing
    /// file surfaces as a config error.
    File(String),
    EightPoint,
}

enum MeasureSpec {
    Unit,
    EightPoint,
}

struct SystemSpec {
    local: Arc<LocalSpace>,
    policy: ChainPolicy,
    filt: FiltSpec,
    measure: MeasureSpec,
}

fn system_spec(cfg: &Config, default_space: &str, default_filt: &str) -> Result<SystemSpec> {
    let space_desc = cfg.str_or("space", default_space).to_string();
    let local = Arc::new(
        LocalSpace::parse(&space_desc).with_context(|| format!("space `{space_desc}`"))?,
    );
    let policy = ChainPolicy::parse(cfg.str_or("policy", "default")).context("policy")?;

    let desc = cfg.str_or("filtration", default_filt).to_string();
    let filt = if let Some(rest) = desc.strip_prefix("dyadic:") {
        let gens: usize = rest.parse().with_context(|| format!("filtration `{desc}`"))?;
        if gens == 0 || gens > 12 {
            bail!("dyadic generations must lie in 1..=12, got {gens}");
        }
        FiltSpec::Dyadic(gens)
    } else if let Some(rest) = desc.strip_prefix("random:") {
        let n: usize = rest.parse().with_context(|| format!("filtration `{desc}`"))?;
        if n == 0 || n > 4096 {
            bail!("random split count must lie in 1..=4096, got {n}");
        }
        FiltSpec::Random(n)
    } else if let Some(path) = desc.strip_prefix("file:") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("filtration file `{path}`"))?;
        FiltSpec::File(text)
    } else if desc == "eight_point" {
        FiltSpec::EightPoint
    } else {
        bail!("unknown filtration `{desc}` (dyadic:N, random:N, file:PATH, eight_point)");
    };

    let measure = match cfg.get("measure") {
        None if matches!(filt, FiltSpec::EightPoint) => MeasureSpec::EightPoint,
        None | Some("unit") => MeasureSpec::Unit,
        Some("eight_point") => MeasureSpec::EightPoint,
        Some(other) => bail!("unknown measure `{other}` (unit, eight_point)"),
    };
    if matches!(filt, FiltSpec::EightPoint) && matches!(measure, MeasureSpec::Unit) {
        bail!("filtration = eight_point requires the eight_point measure");
    }

    Ok(SystemSpec {
        local,
        policy,
        filt,
        measure,
    })
}

fn space_for(measure: &MeasureSpec) -> Result<Arc<ProbabilitySpace>> {
    Ok(match measure {
        MeasureSpec::Unit => Arc::new(ProbabilitySpace::unit_interval()),
        MeasureSpec::EightPoint => {
            Arc::new(ProbabilitySpace::discrete(&EIGHT_POINTS, &EIGHT_MASSES)?)
        }
    })
}

fn realize_filtration(spec: &SystemSpec, seed: u64) -> Result<Filtration> {
    let space = space_for(&spec.measure)?;
    Ok(match &spec.filt {
        FiltSpec::Dyadic(g) => dyadic_filtration(space, *g)?,
        FiltSpec::Random(n) => random_filtration(space, *n, seed)?,
        FiltSpec::File(text) => Filtration::from_text(space, text)?,
        FiltSpec::EightPoint => {
            let mut filt = Filtration::new(space);
            filt.split(AtomId(0), Cut::TakePoints(vec![0, 1, 2, 3]))?;
            filt.split(AtomId(1), Cut::TakePoints(vec![0, 1]))?;
            filt.split(AtomId(2), Cut::TakePoints(vec![4, 5]))?;
            filt
        }
    })
}

fn build_system(spec: &SystemSpec, seed: u64) -> Result<OrthoSystem> {
    let filt = realize_filtration(spec, seed)?;
    Ok(OrthoSystem::build(
        Arc::new(filt),
        Arc::clone(&spec.local),
        spec.policy,
    )?)
}

/// Largest Gram defect over the first `cap` elements.
fn gram_deviation(sys: &OrthoSystem, cap: usize) -> f64 {
    let m = sys.len().min(cap);
    let mut worst = 0.0f64;
    for i in 1..=m {
        for j in i..=m {
            let want = if i == j { 1.0 } else { 0.0 };
            let got = sys.leaf_form(i).dot(sys.leaf_form(j));
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

fn unit_l1_fn(sys: &OrthoSystem, seed: u64) -> Result<locos::ortho::LeafFn> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut f = sys.random_fn(&mut rng);
    let n1 = sys.norm(&f, 1.0)?;
    if n1 > 0.0 {
        f.scale(1.0 / n1);
    }
    Ok(f)
}

fn sample_distinct(rng: &mut ChaCha20Rng, total: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (1..=total).collect();
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

// ------------------------------------------------------------------ build

struct BuildParams {
    spec: SystemSpec,
    emit_filtration: Option<String>,
    csv: String,
    check: CheckRange,
}

fn build_params(cfg: &Config) -> Result<BuildParams> {
    Ok(BuildParams {
        spec: system_spec(cfg, "indicator", "dyadic:3")?,
        emit_filtration: cfg.get("emit.filtration").map(str::to_string),
        csv: csv_name(cfg, "build"),
        check: check_range(cfg)?,
    })
}

fn build_run(ctx: &RunCtx, p: BuildParams) -> Result<OpOutput> {
    let sys = build_system(&p.spec, ctx.seed)?;
    let gram = gram_deviation(&sys, 128);
    let bounds = sys.psi_bounds()?;
    let projector = sys.projector_ratio(30, ctx.seed)?;

    let mut rows = Vec::with_capacity(bounds.len());
    let (mut outside, mut prev_ortho) = (0.0f64, 0.0f64);
    let (mut small_max, mut large_max) = (0.0f64, 0.0f64);
    for b in &bounds {
        outside = outside.max(b.outside_sup);
        prev_ortho = prev_ortho.max(b.prev_ortho);
        small_max = small_max.max(b.small_scaled);
        large_max = large_max.max(b.large_scaled);
        rows.push(format!(
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            b.m, b.level, b.small_scaled, b.large_scaled, b.outside_sup, b.prev_ortho
        ));
    }

    let mut report = new_report(ctx);
    report
        .constant("items", sys.len() as f64)
        .constant("levels", sys.level_count() as f64)
        .constant("leaves", sys.filtration().leaves().len() as f64)
        .constant("gram_deviation", gram)
        .constant("outside_sup", outside)
        .constant("prev_level_ortho", prev_ortho)
        .constant("profile_small_max", small_max)
        .constant("profile_large_max", large_max)
        .constant("projector_ratio", projector);

    let mut files = vec![write_csv(
        ctx.out,
        &p.csv,
        "m,level,small_scaled,large_scaled,outside_sup,prev_ortho",
        &rows,
    )?];
    if let Some(name) = &p.emit_filtration {
        std::fs::create_dir_all(ctx.out)?;
        let path = ctx.out.join(name);
        std::fs::write(&path, sys.filtration().to_text())
            .with_context(|| format!("writing {}", path.display()))?;
        files.push(path);
    }

    let mut violations = Vec::new();
    if gram > 1e-9 {
        violations.push(format!("gram deviation {gram:.3e} above 1e-9"));
    }
    if outside > 1e-10 {
        violations.push(format!("element leaks {outside:.3e} outside its split atom"));
    }
    if prev_ortho > 1e-9 {
        violations.push(format!(
            "inner product {prev_ortho:.3e} against the previous level"
        ));
    }
    p.check.apply("projector_ratio", projector, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// ------------------------------------------------------------------ remez

struct RemezParams {
    local: Arc<LocalSpace>,
    c1: f64,
    c2: f64,
    atoms: usize,
    trials: usize,
    csv: String,
    check: CheckRange,
}

fn remez_params(cfg: &Config) -> Result<RemezParams> {
    let desc = cfg.str_or("space", "polynomial:1").to_string();
    let local =
        Arc::new(LocalSpace::parse(&desc).with_context(|| format!("space `{desc}`"))?);
    let degree = local
        .growth_exponent()
        .ok_or_else(|| anyhow!("space `{desc}` carries no growth exponent"))?;
    let growth = cfg.f64_or("remez.growth", 4.0)?;
    if !(growth > 1.0) {
        bail!("remez.growth must exceed 1, got {growth}");
    }
    let (c1_default, c2_default) = remez_constants_from_growth(growth, degree);
    let c1 = cfg.f64_opt("remez.c1")?.unwrap_or(c1_default);
    let c2 = cfg.f64_opt("remez.c2")?.unwrap_or(c2_default);
    if !(c1 > 0.0) || !(c1 < 1.0) {
        bail!("remez.c1 must lie in (0, 1), got {c1}");
    }
    if !(c2 > 0.0) || !(c2 <= 1.0) {
        bail!("remez.c2 must lie in (0, 1], got {c2}");
    }
    let atoms = cfg.usize_or("remez.atoms", 50)?;
    let trials = cfg.usize_or("remez.trials", 200)?;
    if atoms == 0 || trials == 0 {
        bail!("remez.atoms and remez.trials must be positive");
    }
    Ok(RemezParams {
        local,
        c1,
        c2,
        atoms,
        trials,
        csv: csv_name(cfg, "remez"),
        check: check_range(cfg)?,
    })
}

/// Random subinterval of the unit interval. The certificate under test is
/// the single-interval one; unions of separated pieces obey only the
/// recursed constants and are exercised through the grouped-split paths.
fn random_support(rng: &mut ChaCha20Rng) -> Support {
    let a: f64 = rng.gen_range(0.0..0.85);
    let len = rng.gen_range(0.05..(1.0 - a).min(0.6));
    Support::Intervals(vec![Segment::new(a, a + len)])
}

fn format_support(support: &Support) -> String {
    support
        .segments()
        .iter()
        .map(|s| format!("{:.6}..{:.6}", s.a, s.b))
        .collect::<Vec<_>>()
        .join(";")
}

fn remez_run(ctx: &RunCtx, p: RemezParams) -> Result<OpOutput> {
    let space = ProbabilitySpace::unit_interval();
    let results = run_indexed(p.atoms, ctx.jobs, |k| {
        let mut rng = ChaCha20Rng::seed_from_u64(ctx.seed.wrapping_add(k as u64));
        let support = random_support(&mut rng);
        let outcome = remez_empirical(
            &space,
            &p.local,
            &support,
            p.c1,
            p.trials,
            ctx.seed.wrapping_add(k as u64),
        )?;
        Ok((support, outcome))
    })?;

    let mut rows = Vec::with_capacity(results.len());
    let mut worst = f64::INFINITY;
    for (k, (support, outcome)) in results.iter().enumerate() {
        worst = worst.min(outcome.worst_fraction);
        rows.push(format!(
            "{},{},{:.12e},{}",
            k,
            format_support(support),
            outcome.worst_fraction,
            outcome.checked
        ));
    }

    let mut report = new_report(ctx);
    report
        .constant("worst_fraction_min", worst)
        .constant("c1", p.c1)
        .constant("c2", p.c2)
        .constant("atoms", p.atoms as f64);

    let files = vec![write_csv(
        ctx.out,
        &p.csv,
        "atom,support,worst_fraction,checked",
        &rows,
    )?];

    let mut violations = Vec::new();
    if worst < p.c2 {
        violations.push(format!(
            "level fraction {worst:.6} at threshold {:.6} fell below c2 = {:.6}",
            p.c1, p.c2
        ));
    }
    p.check.apply("worst_fraction_min", worst, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// ----------------------------------------------------------------- uncond

struct UncondParams {
    spec: SystemSpec,
    p: f64,
    trials: usize,
    patterns: usize,
    csv: String,
    check: CheckRange,
}

fn require_inner_exponent(p: f64, key: &str) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        bail!("{key} must be a finite exponent above 1, got {p}");
    }
    Ok(())
}

fn uncond_params(cfg: &Config) -> Result<UncondParams> {
    let p = cfg.f64_or("uncond.p", 2.0)?;
    require_inner_exponent(p, "uncond.p")?;
    let trials = cfg.usize_or("uncond.trials", 20)?;
    if trials == 0 {
        bail!("uncond.trials must be positive");
    }
    Ok(UncondParams {
        spec: system_spec(cfg, "indicator", "dyadic:3")?,
        p,
        trials,
        patterns: cfg.usize_or("uncond.patterns", 2000)?,
        csv: csv_name(cfg, "uncond"),
        check: check_range(cfg)?,
    })
}

fn uncond_run(ctx: &RunCtx, p: UncondParams) -> Result<OpOutput> {
    let sys = build_system(&p.spec, ctx.seed)?;
    let results = run_indexed(p.trials, ctx.jobs, |i| {
        Ok(unconditionality_constant(
            &sys,
            p.p,
            1,
            ctx.seed.wrapping_add(i as u64),
            p.patterns,
        )?)
    })?;

    let mut rows = Vec::with_capacity(results.len());
    let mut best = 0usize;
    for (i, r) in results.iter().enumerate() {
        rows.push(format!("{},{:.12e},{}", i, r.constant, r.trials));
        if r.constant > results[best].constant {
            best = i;
        }
    }
    let constant = results[best].constant;
    let evaluations: usize = results.iter().map(|r| r.trials).sum();

    let mut report = new_report(ctx);
    report
        .constant("constant", constant)
        .constant("items", sys.len() as f64)
        .constant("evaluations", evaluations as f64);
    report.witness = serde_json::to_value(&results[best].witness).ok();

    let files = vec![write_csv(ctx.out, &p.csv, "trial,constant,evaluations", &rows)?];

    let mut violations = Vec::new();
    if (p.p - 2.0).abs() < 1e-12 && (constant - 1.0).abs() > 1e-10 {
        violations.push(format!(
            "sign flips moved the norm at p = 2 by {:.3e}",
            constant - 1.0
        ));
    }
    if constant < 1.0 - 1e-9 {
        violations.push(format!(
            "flip maximum {constant:.12} fell below the identity pattern"
        ));
    }
    p.check.apply("constant", constant, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// --------------------------------------------------------------- weaktype

enum SignsSpec {
    Auto,
    Exhaustive,
    Random(usize),
}

struct WeaktypeParams {
    spec: SystemSpec,
    trials: usize,
    signs: SignsSpec,
    csv: String,
    check: CheckRange,
}

fn weaktype_params(cfg: &Config) -> Result<WeaktypeParams> {
    let signs = match cfg.str_or("weaktype.signs", "auto") {
        "auto" => SignsSpec::Auto,
        "exhaustive" => SignsSpec::Exhaustive,
        other => match other.strip_prefix("random:") {
            Some(n) => SignsSpec::Random(
                n.parse()
                    .with_context(|| format!("weaktype.signs `{other}`"))?,
            ),
            None => bail!("weaktype.signs must be auto, exhaustive, or random:N"),
        },
    };
    let trials = cfg.usize_or("weaktype.trials", 10)?;
    if trials == 0 {
        bail!("weaktype.trials must be positive");
    }
    Ok(WeaktypeParams {
        spec: system_spec(cfg, "indicator", "dyadic:3")?,
        trials,
        signs,
        csv: csv_name(cfg, "weaktype"),
        check: check_range(cfg)?,
    })
}

fn enumerate_signs(m: usize) -> Vec<Vec<i8>> {
    let n = 1usize << (m - 1);
    (0..n)
        .map(|mask| {
            let mut s = vec![1i8; m];
            for j in 0..m - 1 {
                if mask >> j & 1 == 1 {
                    s[j + 1] = -1;
                }
            }
            s
        })
        .collect()
}

fn weaktype_run(ctx: &RunCtx, p: WeaktypeParams) -> Result<OpOutput> {
    let sys = build_system(&p.spec, ctx.seed)?;
    let m = sys.len();
    let exhaustive = match p.signs {
        SignsSpec::Auto => m <= 12,
        SignsSpec::Exhaustive => true,
        SignsSpec::Random(_) => false,
    };
    if exhaustive && m > 20 {
        bail!("exhaustive signs over {m} elements would need 2^{} patterns", m - 1);
    }
    let shared = if exhaustive { enumerate_signs(m) } else { Vec::new() };
    let random_patterns = match p.signs {
        SignsSpec::Random(n) => n.max(1),
        _ => 256,
    };

    let results = run_indexed(p.trials, ctx.jobs, |i| {
        let mut rng = ChaCha20Rng::seed_from_u64(ctx.seed.wrapping_add(i as u64));
        let f = sys.random_fn(&mut rng);
        let grid = default_lambda_grid(sys.norm(&f, 1.0)?);
        let mut best: Option<WeakTypeReport> = None;
        let mut consider = |r: WeakTypeReport| {
            if best.as_ref().is_none_or(|b| r.ratio > b.ratio) {
                best = Some(r);
            }
        };
        if exhaustive {
            for signs in &shared {
                consider(weak_type_ratio(&sys, &f, signs, &grid)?);
            }
        } else {
            for _ in 0..random_patterns {
                let signs: Vec<i8> =
                    (0..m).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
                consider(weak_type_ratio(&sys, &f, &signs, &grid)?);
            }
        }
        Ok(best.expect("at least one sign pattern"))
    })?;

    let mut rows = Vec::with_capacity(results.len());
    let mut best = 0usize;
    for (i, r) in results.iter().enumerate() {
        rows.push(format!(
            "{},{:.12e},{:.12e},{:.12e}",
            i, r.ratio, r.worst_lambda, r.norm_f_l1
        ));
        if r.ratio > results[best].ratio {
            best = i;
        }
    }

    let patterns_per_trial = if exhaustive {
        shared.len()
    } else {
        random_patterns
    };
    let mut report = new_report(ctx);
    report
        .constant("ratio_max", results[best].ratio)
        .constant("worst_lambda", results[best].worst_lambda)
        .constant("items", m as f64)
        .constant("patterns_per_trial", patterns_per_trial as f64);

    let mut curve_rows = Vec::with_capacity(results[best].curve.len());
    for &(lambda, tail) in &results[best].curve {
        curve_rows.push(format!("{lambda:.12e},{tail:.12e}"));
    }
    let curve_name = format!("{}.curve.csv", p.csv.trim_end_matches(".csv"));
    let files = vec![
        write_csv(ctx.out, &p.csv, "trial,ratio,worst_lambda,norm_f_l1", &rows)?,
        write_csv(ctx.out, &curve_name, "lambda,tail_probability", &curve_rows)?,
    ];

    let mut violations = Vec::new();
    p.check
        .apply("ratio_max", results[best].ratio, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// -------------------------------------------------------------- democracy

enum DemMode {
    Random,
    Level(usize),
}

struct DemocracyParams {
    spec: SystemSpec,
    p: f64,
    mode: DemMode,
    sizes: Vec<usize>,
    trials: usize,
    csv: String,
    check: CheckRange,
}

fn parse_usize_list(text: &str, key: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("{key} entry `{t}`"))
        })
        .collect()
}

fn democracy_params(cfg: &Config) -> Result<DemocracyParams> {
    let p = cfg.f64_or("democracy.p", 2.0)?;
    require_inner_exponent(p, "democracy.p")?;
    let mode = match cfg.str_or("democracy.mode", "random") {
        "random" => DemMode::Random,
        other => match other.strip_prefix("level:") {
            Some(n) => DemMode::Level(
                n.parse()
                    .with_context(|| format!("democracy.mode `{other}`"))?,
            ),
            None => bail!("democracy.mode must be random or level:N"),
        },
    };
    let sizes = parse_usize_list(cfg.str_or("democracy.sizes", "1,2,4,8,16"), "democracy.sizes")?;
    if sizes.contains(&0) {
        bail!("democracy.sizes entries must be positive");
    }
    let trials = cfg.usize_or("democracy.trials", 5)?;
    if trials == 0 {
        bail!("democracy.trials must be positive");
    }
    Ok(DemocracyParams {
        spec: system_spec(cfg, "indicator", "dyadic:3")?,
        p,
        mode,
        sizes,
        trials,
        csv: csv_name(cfg, "democracy"),
        check: check_range(cfg)?,
    })
}

fn democracy_run(ctx: &RunCtx, p: DemocracyParams) -> Result<OpOutput> {
    let sys = build_system(&p.spec, ctx.seed)?;
    let m = sys.len();

    let rows_ratios: Vec<(String, usize, f64)> = match p.mode {
        DemMode::Random => {
            let sizes: Vec<usize> = p.sizes.iter().copied().filter(|&s| s <= m).collect();
            if sizes.is_empty() {
                bail!("no democracy.sizes fit a system of {m} elements");
            }
            let units = sizes.len() * p.trials;
            run_indexed(units, ctx.jobs, |u| {
                let size = sizes[u / p.trials];
                let mut rng = ChaCha20Rng::seed_from_u64(ctx.seed.wrapping_add(u as u64));
                let indices = sample_distinct(&mut rng, m, size);
                let ratio = democracy_ratio(&sys, p.p, &indices)?;
                Ok(("random".to_string(), size, ratio))
            })?
        }
        DemMode::Level(n) => {
            if n >= sys.level_count() {
                bail!("level {n} outside a system with {} levels", sys.level_count());
            }
            let indices: Vec<usize> = sys.level_range(n).collect();
            let ratio = democracy_ratio(&sys, p.p, &indices)?;
            vec![(format!("level:{n}"), indices.len(), ratio)]
        }
    };

    let mut rows = Vec::with_capacity(rows_ratios.len());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (label, size, ratio) in &rows_ratios {
        lo = lo.min(*ratio);
        hi = hi.max(*ratio);
        rows.push(format!("{label},{size},{ratio:.12e}"));
    }

    let mut report = new_report(ctx);
    report
        .constant("ratio_max", hi)
        .constant("ratio_min", lo)
        .constant("spread", hi / lo)
        .constant("sets", rows_ratios.len() as f64);

    let files = vec![write_csv(ctx.out, &p.csv, "set,size,ratio", &rows)?];

    let mut violations = Vec::new();
    p.check.apply("spread", hi / lo, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// ------------------------------------------------------------------ gundy

struct GundyParams {
    spec: SystemSpec,
    lambdas: Vec<f64>,
    trials: usize,
    c3: Option<f64>,
    csv: String,
    check: CheckRange,
}

fn gundy_params(cfg: &Config) -> Result<GundyParams> {
    let lambdas = cfg.f64_list("gundy.lambda", &[1.0])?;
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        bail!("gundy.lambda entries must be positive");
    }
    let trials = cfg.usize_or("gundy.trials", 20)?;
    if trials == 0 {
        bail!("gundy.trials must be positive");
    }
    let c3 = cfg.f64_opt("gundy.c3")?;
    if let Some(c) = c3 {
        if !(c > 0.0) {
            bail!("gundy.c3 must be positive, got {c}");
        }
    }
    Ok(GundyParams {
        spec: system_spec(cfg, "indicator", "dyadic:3")?,
        lambdas,
        trials,
        c3,
        csv: csv_name(cfg, "gundy"),
        check: check_range(cfg)?,
    })
}

fn gundy_run(ctx: &RunCtx, p: GundyParams) -> Result<OpOutput> {
    let sys = build_system(&p.spec, ctx.seed)?;
    let c3 = match p.c3 {
        Some(v) => v,
        None => 1.1 * sys.projector_ratio(30, ctx.seed)?,
    };

    let units = p.lambdas.len() * p.trials;
    let results = run_indexed(units, ctx.jobs, |u| {
        let lambda = p.lambdas[u / p.trials];
        let unit_seed = ctx.seed.wrapping_add(u as u64);
        let f = unit_l1_fn(&sys, unit_seed)?;
        let parts = decompose(&sys, &f, lambda, c3)?;
        let report = verify_parts(&sys, &parts)?;
        let row = report.csv_row(unit_seed);
        let devs = [
            parts.reconstruction_dev(&f),
            parts.stopped_dev(),
            parts.difference_dev(&sys),
        ];
        Ok((row, report.scalars(), devs))
    })?;

    let mut rows = Vec::with_capacity(results.len());
    let mut scalar_max = [0.0f64; 5];
    let mut devs_max = [0.0f64; 3];
    for (row, scalars, devs) in &results {
        rows.push(row.clone());
        for (acc, &v) in scalar_max.iter_mut().zip(scalars) {
            *acc = acc.max(v);
        }
        for (acc, &v) in devs_max.iter_mut().zip(devs) {
            *acc = acc.max(v);
        }
    }
    let headline = scalar_max.iter().fold(0.0f64, |a, &b| a.max(b));

    let mut report = new_report(ctx);
    report
        .constant("reconstruction_dev_max", devs_max[0])
        .constant("stopped_dev_max", devs_max[1])
        .constant("adapted_dev_max", devs_max[2])
        .constant("norm_a_max", scalar_max[0])
        .constant("prob_da_lambda_max", scalar_max[1])
        .constant("db_sum_max", scalar_max[2])
        .constant("c_l1_max", scalar_max[3])
        .constant("c_sup_over_lambda_max", scalar_max[4])
        .constant("scalar_max", headline)
        .constant("c3", c3);

    let files = vec![write_csv(ctx.out, &p.csv, GundyReport::CSV_HEADER, &rows)?];

    let mut violations = Vec::new();
    if devs_max[0] > 1e-10 {
        violations.push(format!(
            "parts fail to reconstruct the input: deviation {:.3e}",
            devs_max[0]
        ));
    }
    p.check.apply("scalar_max", headline, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// ----------------------------------------------------------------- greedy

enum MSpec {
    Auto,
    List(Vec<usize>),
}

struct GreedyParams {
    spec: SystemSpec,
    p: f64,
    ms: MSpec,
    trials: usize,
    csv: String,
    check: CheckRange,
}

fn greedy_params(cfg: &Config) -> Result<GreedyParams> {
    let p = cfg.f64_or("greedy.p", 2.0)?;
    require_inner_exponent(p, "greedy.p")?;
    let ms = match cfg.str_or("greedy.m", "auto") {
        "auto" => MSpec::Auto,
        list => MSpec::List(parse_usize_list(list, "greedy.m")?),
    };
    let trials = cfg.usize_or("greedy.trials", 10)?;
    if trials == 0 {
        bail!("greedy.trials must be positive");
    }
    Ok(GreedyParams {
        spec: system_spec(cfg, "indicator", "dyadic:3")?,
        p,
        ms,
        trials,
        csv: csv_name(cfg, "greedy"),
        check: check_range(cfg)?,
    })
}

fn greedy_run(ctx: &RunCtx, p: GreedyParams) -> Result<OpOutput> {
    let sys = build_system(&p.spec, ctx.seed)?;
    let total = sys.len();
    let ms: Vec<usize> = match &p.ms {
        MSpec::Auto => (1..=total.saturating_sub(1).min(12)).collect(),
        MSpec::List(v) => {
            let kept: Vec<usize> = v.iter().copied().filter(|&m| m >= 1 && m <= total).collect();
            if kept.is_empty() {
                bail!("no greedy.m values fit a system of {total} elements");
            }
            kept
        }
    };
    if ms.is_empty() {
        bail!("system of {total} elements leaves no m-term budget");
    }

    let results = run_indexed(p.trials, ctx.jobs, |i| {
        let mut rng = ChaCha20Rng::seed_from_u64(ctx.seed.wrapping_add(i as u64));
        let f = sys.random_fn(&mut rng);
        let mut per_m = Vec::with_capacity(ms.len());
        for &m in &ms {
            per_m.push(greedy_vs_best(&sys, &f, m, p.p)?);
        }
        Ok(per_m)
    })?;

    let mut rows = Vec::new();
    let mut ratio_max = 0.0f64;
    for (i, per_m) in results.iter().enumerate() {
        for (r, &m) in per_m.iter().zip(&ms) {
            let ratio = if r.best_error > 1e-13 {
                r.greedy_error / r.best_error
            } else if r.greedy_error < 1e-12 {
                1.0
            } else {
                f64::INFINITY
            };
            ratio_max = ratio_max.max(ratio);
            rows.push(format!(
                "{},{},{:.12e},{:.12e},{:.12e},{}",
                i, m, r.greedy_error, r.best_error, ratio, r.exhaustive
            ));
        }
    }

    let mut report = new_report(ctx);
    report
        .constant("ratio_max", ratio_max)
        .constant("items", total as f64)
        .constant("trials", p.trials as f64);

    let files = vec![write_csv(
        ctx.out,
        &p.csv,
        "trial,m,greedy_error,best_error,ratio,exhaustive",
        &rows,
    )?];

    let mut violations = Vec::new();
    if (p.p - 2.0).abs() < 1e-12 && ratio_max > 1.0 + 1e-9 {
        violations.push(format!(
            "greedy selection lost to the best subset at p = 2 by factor {ratio_max:.12}"
        ));
    }
    p.check.apply("ratio_max", ratio_max, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// ---------------------------------------------------------------- density

struct DensityParams {
    local: Arc<LocalSpace>,
    target: Vec<Segment>,
    policy: RefinePolicy,
    rounds: usize,
    p: f64,
    csv: String,
    check: CheckRange,
}

fn parse_segments(text: &str, key: &str) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for part in text.split(';') {
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| anyhow!("{key} piece `{part}` must be `a:b`"))?;
        let a: f64 = a.trim().parse().with_context(|| format!("{key} endpoint `{a}`"))?;
        let b: f64 = b.trim().parse().with_context(|| format!("{key} endpoint `{b}`"))?;
        if !a.is_finite() || !b.is_finite() || !(a < b) {
            bail!("{key} piece `{part}` is not an increasing pair");
        }
        out.push(Segment::new(a, b));
    }
    Ok(out)
}

fn density_params(cfg: &Config) -> Result<DensityParams> {
    let desc = cfg.str_or("space", "indicator").to_string();
    let local =
        Arc::new(LocalSpace::parse(&desc).with_context(|| format!("space `{desc}`"))?);
    let target = parse_segments(
        cfg.str_or("density.target", "0:0.3333333333333333"),
        "density.target",
    )?;
    let policy = RefinePolicy::parse(cfg.str_or("density.policy", "dyadic"))
        .context("density.policy")?;
    let rounds = cfg.usize_or("density.rounds", 10)?;
    let cap = if matches!(policy, RefinePolicy::Dyadic) {
        14
    } else {
        4096
    };
    if rounds == 0 || rounds > cap {
        bail!("density.rounds must lie in 1..={cap}, got {rounds}");
    }
    let p = cfg.f64_or("density.p", 2.0)?;
    if !p.is_finite() || !(p >= 1.0) {
        bail!("density.p must be a finite exponent of at least 1, got {p}");
    }
    Ok(DensityParams {
        local,
        target,
        policy,
        rounds,
        p,
        csv: csv_name(cfg, "density"),
        check: check_range(cfg)?,
    })
}

fn density_run(ctx: &RunCtx, p: DensityParams) -> Result<OpOutput> {
    let errors = density_experiment(
        Arc::new(ProbabilitySpace::unit_interval()),
        Arc::clone(&p.local),
        &p.target,
        &p.policy,
        p.rounds,
        p.p,
    )?;

    let rows: Vec<String> = errors
        .iter()
        .enumerate()
        .map(|(round, e)| format!("{round},{e:.12e}"))
        .collect();
    let initial = errors[0];
    let final_error = *errors.last().expect("at least one round");

    let mut report = new_report(ctx);
    report
        .constant("initial_error", initial)
        .constant("final_error", final_error)
        .constant("rounds", p.rounds as f64);
    if initial > 0.0 {
        report.constant("reduction", final_error / initial);
    }

    let files = vec![write_csv(ctx.out, &p.csv, "round,error", &rows)?];

    let mut violations = Vec::new();
    if (p.p - 2.0).abs() < 1e-12 {
        for w in errors.windows(2) {
            if w[1] > w[0] + 1e-9 {
                violations.push(format!(
                    "error rose from {:.6e} to {:.6e} under refinement at p = 2",
                    w[0], w[1]
                ));
                break;
            }
        }
    }
    p.check.apply("final_error", final_error, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// --------------------------------------------------------- counterexample

struct CounterexampleParams {
    eps: Vec<f64>,
    csv: String,
    check: CheckRange,
}

fn counterexample_params(cfg: &Config) -> Result<CounterexampleParams> {
    let eps = cfg.f64_list("counterexample.eps", &[1e-1, 1e-2, 1e-3, 1e-4])?;
    if eps.len() < 2 {
        bail!("counterexample.eps needs at least two values to fit a slope");
    }
    if eps.iter().any(|&e| !(e > 0.0) || e > 0.5) {
        bail!("counterexample.eps entries must lie in (0, 0.5]");
    }
    Ok(CounterexampleParams {
        eps,
        csv: csv_name(cfg, "counterexample"),
        check: check_range(cfg)?,
    })
}

fn counterexample_run(ctx: &RunCtx, p: CounterexampleParams) -> Result<OpOutput> {
    let mut rows = Vec::with_capacity(p.eps.len());
    let mut ratios = Vec::with_capacity(p.eps.len());
    let mut violations = Vec::new();
    for &eps in &p.eps {
        let w = counterexample_three(eps)?;
        if w.mean.abs() > 1e-9 || (w.second_moment - 1.0).abs() > 1e-9 {
            violations.push(format!(
                "profile at eps = {eps} is inadmissible: mean {:.3e}, second moment off by {:.3e}",
                w.mean,
                w.second_moment - 1.0
            ));
        }
        ratios.push(w.ratio);
        rows.push(format!("{eps:.12e},{:.12e},{:.12e}", w.ratio, w.inner_gh));
    }
    let slope = fit_log_slope(&p.eps, &ratios);
    let ratio_max = ratios.iter().fold(0.0f64, |a, &b| a.max(b));

    let mut report = new_report(ctx);
    report
        .constant("slope", slope)
        .constant("ratio_max", ratio_max);

    let files = vec![write_csv(ctx.out, &p.csv, "epsilon,ratio,inner_gh", &rows)?];

    if (slope + 0.5).abs() > 0.1 {
        violations.push(format!(
            "pointwise ratio should scale like the inverse square root: fitted slope {slope:.4}"
        ));
    }
    p.check.apply("slope", slope, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// ------------------------------------------------------------ op-condition

enum OpcFamily {
    TwoScale(Vec<f64>),
    Comparable { depth: usize, r: usize },
}

struct OpcParams {
    family: OpcFamily,
    local: Arc<LocalSpace>,
    preset: CoefficientPreset,
    p: f64,
    patterns: usize,
    csv: String,
    check: CheckRange,
}

fn opcond_params(cfg: &Config) -> Result<OpcParams> {
    let family_str = cfg.str_or("opcond.family", "two_scale").to_string();
    let family = if family_str == "two_scale" {
        let eps = cfg.f64_list("opcond.eps", &[1e-1, 1e-2, 1e-3, 1e-4])?;
        if eps.is_empty() {
            bail!("opcond.eps must not be empty");
        }
        for &e in &eps {
            if !(e > 0.0) || e + 2.0 * e.sqrt() >= 1.0 {
                bail!("opcond.eps entry {e} leaves no room for the two larger children");
            }
        }
        OpcFamily::TwoScale(eps)
    } else if let Some(rest) = family_str.strip_prefix("comparable:") {
        let (depth, r) = rest
            .split_once(':')
            .ok_or_else(|| anyhow!("opcond.family comparable needs `comparable:DEPTH:R`"))?;
        let depth: usize = depth.parse().context("comparable depth")?;
        let r: usize = r.parse().context("comparable arity")?;
        if !(1..=8).contains(&depth) || !(2..=8).contains(&r) {
            bail!("comparable family wants depth 1..=8 and arity 2..=8");
        }
        OpcFamily::Comparable { depth, r }
    } else {
        bail!("opcond.family must be two_scale or comparable:DEPTH:R");
    };

    let preset_default = match family {
        OpcFamily::TwoScale(_) => "two_scale",
        OpcFamily::Comparable { .. } => "uniform",
    };
    let preset = CoefficientPreset::parse(cfg.str_or("opcond.preset", preset_default))
        .context("opcond.preset")?;
    let desc = cfg.str_or("space", "indicator").to_string();
    let local =
        Arc::new(LocalSpace::parse(&desc).with_context(|| format!("space `{desc}`"))?);
    let p = cfg.f64_or("opcond.p", 4.0)?;
    require_inner_exponent(p, "opcond.p")?;

    Ok(OpcParams {
        family,
        local,
        preset,
        p,
        patterns: cfg.usize_or("opcond.patterns", 100)?,
        csv: csv_name(cfg, "op-condition"),
        check: check_range(cfg)?,
    })
}

fn opcond_run(ctx: &RunCtx, p: OpcParams) -> Result<OpOutput> {
    let q = p.p / (p.p - 1.0);
    let mut rows = Vec::new();
    let mut report = new_report(ctx);
    let mut violations = Vec::new();

    let (op_max, dual_gap_max) = match &p.family {
        OpcFamily::TwoScale(eps) => {
            let per = run_indexed(eps.len(), ctx.jobs, |i| {
                let rw = two_scale_filtration(eps[i])?;
                let nsys = NonbinarySystem::build(rw, Arc::clone(&p.local))?;
                let coeffs = nsys.coefficients(0, &p.preset)?;
                let psi = nsys.compose(0, coeffs)?;
                let op_p = op_condition(&nsys, std::slice::from_ref(&psi), p.p)?;
                let op_q = op_condition(&nsys, std::slice::from_ref(&psi), q)?;
                let product = norm_product_check(&nsys, &psi, p.p)?;
                Ok((op_p, op_q, product))
            })?;
            let (mut op_max, mut gap_max, mut prod_max) = (0.0f64, 0.0f64, 0.0f64);
            for (&e, &(op_p, op_q, product)) in eps.iter().zip(&per) {
                op_max = op_max.max(op_p);
                gap_max = gap_max.max((op_p - op_q).abs());
                prod_max = prod_max.max(product);
                rows.push(format!("{e:.12e},{op_p:.12e},{product:.12e}"));
            }
            report.constant("norm_product_max", prod_max).constant(
                "norm_product_growth",
                per.last().expect("nonempty eps").2 / per[0].2,
            );
            (op_max, gap_max)
        }
        OpcFamily::Comparable { depth, r } => {
            let rw = comparable_rway(*depth, *r, ctx.seed)?;
            let nsys = NonbinarySystem::build(rw, Arc::clone(&p.local))?;
            let mut psis = Vec::with_capacity(nsys.group_count());
            for n in 0..nsys.group_count() {
                let coeffs = nsys.coefficients(n, &p.preset)?;
                psis.push(nsys.compose(n, coeffs)?);
            }
            let op_p = op_condition(&nsys, &psis, p.p)?;
            let op_q = op_condition(&nsys, &psis, q)?;
            let sweep = nonbinary_uncond_sweep(&nsys, &psis, p.p, p.patterns, ctx.seed)?;
            for (n, psi) in psis.iter().enumerate() {
                let single = op_condition(&nsys, std::slice::from_ref(psi), p.p)?;
                let product = norm_product_check(&nsys, psi, p.p)?;
                rows.push(format!(
                    "{},{:.12e},{:.12e}",
                    nsys.arity(n)? as f64,
                    single,
                    product
                ));
            }
            report.constant("sweep_constant", sweep.constant);
            (op_p, (op_p - op_q).abs())
        }
    };

    report
        .constant("op_max", op_max)
        .constant("dual_gap_max", dual_gap_max)
        .constant("p", p.p);

    let header = match &p.family {
        OpcFamily::TwoScale(_) => "epsilon,op_condition,norm_product",
        OpcFamily::Comparable { .. } => "arity,op_condition,norm_product",
    };
    let files = vec![write_csv(ctx.out, &p.csv, header, &rows)?];

    if dual_gap_max > 1e-10 {
        violations.push(format!(
            "cross-term bound differs between dual exponents by {dual_gap_max:.3e}"
        ));
    }
    p.check.apply("op_max", op_max, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}

// ----------------------------------------------------------------- tensor

struct TensorParams {
    filt: Filtration2,
    s1: Arc<LocalSpace>,
    s2: Arc<LocalSpace>,
    trials: usize,
    csv: String,
    check: CheckRange,
}

fn tensor_params(cfg: &Config) -> Result<TensorParams> {
    let desc = cfg
        .str_or("space", "tensor:polynomial:1,polynomial:1")
        .to_string();
    let rest = desc
        .strip_prefix("tensor:")
        .ok_or_else(|| anyhow!("tensor runs need space = tensor:FIRST,SECOND"))?;
    let (d1, d2) = rest
        .split_once(',')
        .ok_or_else(|| anyhow!("space `{desc}` is missing the second direction"))?;
    let s1 = Arc::new(LocalSpace::parse(d1).with_context(|| format!("space `{d1}`"))?);
    let s2 = Arc::new(LocalSpace::parse(d2).with_context(|| format!("space `{d2}`"))?);

    let mut filt = Filtration2::unit_square();
    for part in cfg.str_or("tensor.splits", "0:0.5:0.5").split(';') {
        let toks: Vec<&str> = part.split(':').collect();
        if toks.len() != 3 {
            bail!("tensor.splits piece `{part}` must be `parent:xcut:ycut`");
        }
        let parent: usize = toks[0].trim().parse().with_context(|| format!("split `{part}`"))?;
        let x: f64 = toks[1].trim().parse().with_context(|| format!("split `{part}`"))?;
        let y: f64 = toks[2].trim().parse().with_context(|| format!("split `{part}`"))?;
        filt.split(parent, x, y)
            .with_context(|| format!("split `{part}`"))?;
    }

    Ok(TensorParams {
        filt,
        s1,
        s2,
        trials: cfg.usize_or("tensor.trials", 20)?,
        csv: csv_name(cfg, "tensor"),
        check: check_range(cfg)?,
    })
}

fn tensor_run(ctx: &RunCtx, p: TensorParams) -> Result<OpOutput> {
    let sys = TensorSystem2::build(p.filt, Arc::clone(&p.s1), Arc::clone(&p.s2))?;
    let gram = sys.gram_deviation();

    let mut rows = Vec::with_capacity(sys.len());
    let mut profile_max = 0.0f64;
    for e in 0..sys.len() {
        let el = sys.element(e);
        let profile = match el.split {
            Some(_) => {
                let r = sys.profile_ratio(e)?;
                profile_max = profile_max.max(r);
                format!("{r:.12e}")
            }
            None => String::new(),
        };
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            e,
            el.split.map_or(-1i64, |s| s as i64),
            el.mu.0,
            el.mu.1,
            el.i,
            el.j,
            profile
        ));
    }

    let unit = Rect {
        x: Segment::new(0.0, 1.0),
        y: Segment::new(0.0, 1.0),
    };
    let mean_sup = mean_sup_ratio(&p.s1, &p.s2, unit, p.trials, ctx.seed)?;

    let mut report = new_report(ctx);
    report
        .constant("elements", sys.len() as f64)
        .constant("gram_deviation", gram)
        .constant("profile_max", profile_max)
        .constant("mean_sup_min", mean_sup);

    let files = vec![write_csv(
        ctx.out,
        &p.csv,
        "element,split,mu_x,mu_y,i,j,profile_ratio",
        &rows,
    )?];

    let mut violations = Vec::new();
    if gram > 1e-10 {
        violations.push(format!("tensor gram deviation {gram:.3e} above 1e-10"));
    }
    p.check.apply("profile_max", profile_max, &mut violations);

    Ok(OpOutput {
        report,
        files,
        violations,
    })
}
