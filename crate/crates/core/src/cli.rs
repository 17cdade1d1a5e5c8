//! Batch driver behind the `jellium` binary.
//!
//! Every output file is written atomically and depends only on the run
//! specification, so repeated runs produce identical bytes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::energy::{energy_decomposed, energy_pairwise, rod_jensen_check};
use crate::error::{Error, Result};
use crate::kfield::{unit_phase, KField, Side};
use crate::model::{build_domain, canonicalize, Configuration, Domain, ModelParams, Point};
use crate::observables::{
    charge_variance, density_lag, density_profile, k_tail, k_trace, phase_estimate,
    volume_average_stats, Accumulators, IdentityChecks, ObservableSpec, SnapshotRecorder,
};
use crate::oracle::{bin_occupation, expectation_quadrature, QuadratureSpec};
use crate::potential::{check_zero_average, v2_series, v2_strip, v_pair, Kernel, KernelSpec};
use crate::sampler::{Chain, ChainReport, Observer, SamplerSpec};

pub const SCHEMA_LINE: &str = "# jellium-q1d schema v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ParamsSection {
    beta: f64,
    q: f64,
    rho: f64,
    w: f64,
    theta: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = ModelParams::default();
        ParamsSection {
            beta: p.beta,
            q: p.q,
            rho: p.rho,
            w: p.w_width,
            theta: p.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DomainSection {
    n1: i64,
    n2: i64,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection { n1: 8, n2: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunSection {
    n_chains: u32,
    output_dir: PathBuf,
    save_snapshots: bool,
    /// Keep every n-th kept sample of chain 0 as a snapshot.
    snapshot_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            n_chains: 4,
            output_dir: PathBuf::from("out"),
            save_snapshots: false,
            snapshot_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    params: ParamsSection,
    domain: DomainSection,
    sampler: SamplerSpec,
    observables: ObservableSpec,
    run: RunSection,
}

/// Fully resolved description of a sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub params: ModelParams,
    pub n1: i64,
    pub n2: i64,
    pub sampler: SamplerSpec,
    pub observables: ObservableSpec,
    pub output_dir: PathBuf,
    pub n_chains: u32,
    /// Chain `c` is seeded with `base_seed + c`.
    pub base_seed: u64,
    pub save_snapshots: bool,
    pub snapshot_every: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec::from_file(ConfigFile::default())
    }
}

impl RunSpec {
    fn from_file(c: ConfigFile) -> Self {
        RunSpec {
            params: ModelParams {
                beta: c.params.beta,
                q: c.params.q,
                rho: c.params.rho,
                w_width: c.params.w,
                theta: c.params.theta,
            },
            n1: c.domain.n1,
            n2: c.domain.n2,
            base_seed: c.sampler.seed,
            sampler: c.sampler,
            observables: c.observables,
            output_dir: c.run.output_dir,
            n_chains: c.run.n_chains,
            save_snapshots: c.run.save_snapshots,
            snapshot_every: c.run.snapshot_every,
        }
    }

    pub fn domain(&self) -> Result<Domain> {
        build_domain(self.n1, self.n2, &self.params)
    }

    pub fn validate(&self) -> Result<()> {
        let v = |e: Error| Error::Validation(e.to_string());
        self.params.validate().map_err(v)?;
        let d = self.domain().map_err(v)?;
        self.sampler.validate().map_err(v)?;
        self.observables.validate(&d)?;
        if self.n_chains == 0 {
            return Err(Error::Validation("run.n_chains must be at least 1".into()));
        }
        Ok(())
    }
}

/// Strict JSON parsing: unknown keys are rejected, missing keys take the
/// documented defaults.
pub fn parse_config_str(text: &str) -> Result<RunSpec> {
    let file: ConfigFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let spec = RunSpec::from_file(file);
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<RunSpec> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `git hash-object` of the given bytes.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes through a temporary file in the same directory and renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

struct Csv(String);

impl Csv {
    fn new(columns: &[&str]) -> Self {
        Csv(format!("{SCHEMA_LINE}\n{}\n", columns.join(",")))
    }

    fn comment(&mut self, text: &str) {
        self.0.push_str("# ");
        self.0.push_str(text);
        self.0.push('\n');
    }

    fn row(&mut self, cells: &[String]) {
        self.0.push_str(&cells.join(","));
        self.0.push('\n');
    }

    fn save(self, path: &Path) -> Result<()> {
        write_atomic(path, self.0.as_bytes())
    }
}

/// Everything a sampling run produces before it is written out.
pub struct RunOutcome {
    pub spec: RunSpec,
    pub accumulators: Accumulators,
    pub reports: Vec<ChainReport>,
    pub snapshots: SnapshotRecorder,
}

impl RunOutcome {
    pub fn mean_acceptance(&self) -> f64 {
        self.reports.iter().map(|r| r.acceptance_rate).sum::<f64>() / self.reports.len() as f64
    }
}

/// Runs all chains (in parallel) and merges their accumulators in chain
/// order.
pub fn run_sampling(spec: &RunSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let domain = spec.domain()?;
    let results: Vec<Result<(Accumulators, ChainReport, SnapshotRecorder)>> = (0..spec.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut sampler = spec.sampler.clone();
            sampler.seed = spec.base_seed.wrapping_add(c as u64);
            let mut acc =
                Accumulators::new(&domain, &spec.params, sampler.mode, &spec.observables)?;
            let mut snaps =
                SnapshotRecorder::new(spec.snapshot_every, spec.save_snapshots && c == 0);
            let mut chain = Chain::new(domain, spec.params, sampler)?;
            let report = {
                let mut obs: [&mut dyn Observer; 2] = [&mut acc, &mut snaps];
                chain.run(&mut obs)?
            };
            acc.tau_int = report.tau_int_k0;
            Ok((acc, report, snaps))
        })
        .collect();

    let mut merged: Option<Accumulators> = None;
    let mut reports = Vec::new();
    let mut first_snaps = None;
    for r in results {
        let (acc, report, snaps) = r?;
        match merged.as_mut() {
            None => merged = Some(acc),
            Some(m) => m.merge(&acc)?,
        }
        reports.push(report);
        first_snaps.get_or_insert(snaps);
    }
    Ok(RunOutcome {
        spec: spec.clone(),
        accumulators: merged.expect("at least one chain"),
        reports,
        snapshots: first_snaps.expect("at least one chain"),
    })
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    run: &'a RunSpec,
    domain: Domain,
    samples: u64,
    acceptance_rate: f64,
    tau_int_k0: f64,
    effective_samples: f64,
    chains: &'a [ChainReport],
    identity_checks: &'a IdentityChecks,
    identity_checks_passed: bool,
}

/// Writes `accumulators.json`, `summary.json`, snapshot files and every
/// estimator CSV into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome, config_hash: &str) -> Result<Vec<String>> {
    let acc = &outcome.accumulators;
    write_atomic(
        &dir.join("accumulators.json"),
        erased::Json::to_json(acc).as_bytes(),
    )?;
    let summary = Summary {
        config_hash,
        run: &outcome.spec,
        domain: *acc.domain(),
        samples: acc.samples,
        acceptance_rate: outcome.mean_acceptance(),
        tau_int_k0: acc.tau_int,
        effective_samples: acc.effective_samples(),
        chains: &outcome.reports,
        identity_checks: &acc.checks,
        identity_checks_passed: acc.checks.passed(),
    };
    write_atomic(
        &dir.join("summary.json"),
        erased::Json::to_json(&summary).as_bytes(),
    )?;

    let domain = acc.domain();
    if let Some((step, cfg)) = &outcome.snapshots.last {
        let mut csv = Csv::new(&["x", "k_left", "k_right"]);
        csv.comment(&format!("chain=0 step={step}"));
        for (x, kl, kr) in k_trace(&KField::new(domain, cfg)) {
            csv.row(&[num(x), num(kl), num(kr)]);
        }
        csv.save(&dir.join("k_trace.csv"))?;
    }
    if outcome.spec.save_snapshots {
        let mut csv = Csv::new(&["step", "particle_rank", "x", "y"]);
        for (step, cfg) in &outcome.snapshots.rows {
            for (rank, p) in cfg.points().enumerate() {
                csv.row(&[step.to_string(), rank.to_string(), num(p.x), num(p.y)]);
            }
        }
        csv.save(&dir.join("snapshots.csv"))?;
    }
    analyze(acc, dir)
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> String {
            let mut s = serde_json::to_string_pretty(self).expect("serializable");
            s.push('\n');
            s
        }
    }
}

/// Writes the estimator CSVs for `acc` into `dir`; returns notes about
/// estimators that could not be computed.
pub fn analyze(acc: &Accumulators, dir: &Path) -> Result<Vec<String>> {
    let mut notes = Vec::new();
    let lam = acc.domain().lambda;

    let prof = density_profile(acc)?;
    let mut csv = Csv::new(&["x_lo", "x_hi", "density", "stderr"]);
    for i in 0..prof.density.len() {
        csv.row(&[
            num(prof.bin_edges[i]),
            num(prof.bin_edges[i + 1]),
            num(prof.density[i]),
            num(prof.stderr[i]),
        ]);
    }
    csv.save(&dir.join("density.csv"))?;

    let mut csv = Csv::new(&["gamma", "p_emp", "p_stderr"]);
    match k_tail(acc) {
        Ok(fit) => {
            for i in 0..fit.gamma_grid.len() {
                csv.row(&[
                    num(fit.gamma_grid[i]),
                    num(fit.tail_probs[i]),
                    num(fit.tail_stderr[i]),
                ]);
            }
            csv.comment(&format!(
                "fit fitted_a={} fitted_c={} ci_lo={} ci_hi={} a_stderr={} x_star={} k_variance={}",
                num(fit.fitted_a),
                num(fit.fitted_c),
                num(fit.a_ci.0),
                num(fit.a_ci.1),
                num(fit.a_stderr),
                num(fit.x_star * lam),
                num(fit.k_variance)
            ));
        }
        Err(e) => {
            let s = acc.tail_trials().max(1.0);
            for (g, &h) in acc.schema.spec.gamma_grid().iter().zip(&acc.tail_hits) {
                let p = h as f64 / s;
                let se = (p * (1.0 - p) / acc.effective_samples().max(1.0)).sqrt();
                csv.row(&[num(*g), num(p), num(se)]);
            }
            csv.comment(&format!("fit unavailable: {e}"));
            notes.push(format!("ktail fit skipped: {e}"));
        }
    }
    csv.save(&dir.join("ktail.csv"))?;

    let ph = phase_estimate(acc)?;
    let mut csv = Csv::new(&[
        "r_cut",
        "circ_mean_angle",
        "resultant_length",
        "stderr_angle",
    ]);
    for i in 0..ph.r_grid.len() {
        csv.row(&[
            num(ph.r_grid[i] * lam),
            num(ph.circular_mean[i]),
            num(ph.resultant_length[i]),
            num(ph.stderr_angle[i]),
        ]);
    }
    csv.save(&dir.join("phase.csv"))?;

    let va = volume_average_stats(acc)?;
    let mut cols = vec!["r".to_string(), "mean_abs".to_string()];
    cols.extend(va.deltas.iter().map(|d| format!("p_exceed_{}", num(*d))));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&cols);
    for i in 0..va.r_grid.len() {
        let mut row = vec![num(va.r_grid[i] * lam), num(va.mean_abs[i])];
        row.extend(va.exceed_probs[i].iter().map(|p| num(*p)));
        csv.row(&row);
    }
    csv.save(&dir.join("volavg.csv"))?;

    let cv = charge_variance(acc)?;
    let mut csv = Csv::new(&["u", "var_q", "stderr"]);
    for i in 0..cv.u_grid.len() {
        csv.row(&[num(cv.u_grid[i] * lam), num(cv.var_q[i]), num(cv.stderr[i])]);
    }
    csv.save(&dir.join("chargevar.csv"))?;
    Ok(notes)
}

/// One line of the identity battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, max_residual: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            max_residual,
            tolerance,
            passed: max_residual < tolerance,
        }
    }
}

fn random_configuration(rng: &mut ChaCha8Rng, d: &Domain) -> Result<Configuration> {
    let pts: Vec<(f64, f64)> = (0..d.n_particles())
        .map(|_| {
            (
                rng.random_range(d.l1..d.l2),
                rng.random_range(0.0..d.w_width),
            )
        })
        .collect();
    canonicalize(&pts, d)
}

/// Exact identities checked on random inputs drawn from `seed`.
pub fn validation_battery(params: &ModelParams, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let w = params.w_width;
    let lam = params.lambda();

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = Point::new(rng.random_range(-5.0..5.0) * w, rng.random_range(0.0..w));
        let b = Point::new(rng.random_range(-5.0..5.0) * w, rng.random_range(0.0..w));
        let dx = (a.x - b.x).abs();
        let split = -dx / (2.0 * w) + v2_strip(a.y, b.y, dx, w)?;
        worst = worst.max((v_pair(a, b, w)? - split).abs());
    }
    out.push(CheckResult::new("potential_decomposition", worst, 1e-10));

    let kernel = Kernel::ClosedForm { w_width: w };
    let mut worst = 0.0f64;
    for f in [0.1, 0.3, 1.0] {
        let r = check_zero_average(&kernel, f * w, rng.random_range(0.0..w), 10_000)?;
        worst = worst.max(r.abs());
    }
    out.push(CheckResult::new("zero_average", worst, 1e-6));

    let spec = KernelSpec::strip_series(w, lam, 200);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let dx = rng.random_range(0.05..3.0) * w;
        let (y, yp) = (rng.random_range(0.0..w), rng.random_range(0.0..w));
        let s = v2_series(y, yp, dx, &spec)?;
        worst = worst.max((s.value - v2_strip(y, yp, dx, w)?).abs());
    }
    out.push(CheckResult::new("series_vs_closed_form", worst, 1e-8));

    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 1 + i % 6;
        let d = build_domain(n as i64, (1 + (i / 6) % 6) as i64, params)?;
        let (a, b) = (
            random_configuration(&mut rng, &d)?,
            random_configuration(&mut rng, &d)?,
        );
        let dp = energy_pairwise(&b, &d, params)? - energy_pairwise(&a, &d, params)?;
        let dd =
            energy_decomposed(&b, &d, params)?.total - energy_decomposed(&a, &d, params)?.total;
        worst = worst.max((dp - dd).abs() / dp.abs().max(1.0));
    }
    out.push(CheckResult::new("energy_equivalence", worst, 1e-8));

    let (mut rec, mut coc, mut phs) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..1000 {
        let d = build_domain(2 + (i % 7) as i64, 3 + (i % 5) as i64, params)?;
        let f = KField::new(&d, &random_configuration(&mut rng, &d)?);
        let r = rng.random_range(0.1..1.0) * d.l2;
        let direct = f.eval(0.0, Side::Right) - f.integral(0.0, r, 1) / r;
        rec = rec.max((f.reconstruction(r).estimator - direct).abs());
        let u = rng.random_range(-2.0..2.0) * lam;
        let v = rng.random_range(-2.0..2.0) * lam;
        let lhs = f.charge_cocycle(u + v);
        let rhs = f.charge_cocycle(u) + f.shifted(u).charge_cocycle(v);
        coc = coc.max((lhs - rhs).abs());
        let s = rng.random_range(d.l1..d.l2);
        let expect = f.phase(0.0) * unit_phase(s / lam);
        phs = phs.max((f.shifted(s).phase(0.0) - expect).norm());
    }
    out.push(CheckResult::new("reconstruction", rec, 1e-10));
    out.push(CheckResult::new("cocycle", coc, 1e-12));
    out.push(CheckResult::new("phase_shift_covariance", phs, 1e-10));

    // largest violation of the Jensen direction, positive when violated
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = 1 + i % 3;
        let d = build_domain(n as i64, 1, params)?;
        let cfg = random_configuration(&mut rng, &d)?;
        let k = rng.random_range(0..cfg.len());
        let j = rod_jensen_check(&cfg, &d, params, k, 2048)?;
        worst = worst.max(-j.gap());
    }
    out.push(CheckResult::new("jensen_direction", worst, 1e-12));
    Ok(out)
}

/// Phase and density contrast between two runs differing only in `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaComparison {
    pub theta: (f64, f64),
    pub r_cut: f64,
    pub circular_mean: (f64, f64),
    pub stderr_angle: (f64, f64),
    pub resultant_length: (f64, f64),
    /// Wrapped difference of the circular means.
    pub angle_difference: f64,
    pub phases_separated: bool,
    /// Density cross-correlation lag in `[0, lambda)`.
    pub density_lag: f64,
}

pub fn compare_outcomes(a: &RunOutcome, b: &RunOutcome) -> Result<ThetaComparison> {
    let (pa, pb) = (
        phase_estimate(&a.accumulators)?,
        phase_estimate(&b.accumulators)?,
    );
    let da = *a.accumulators.domain();
    let half = da.l2.min(b.accumulators.domain().l2) / (2.0 * da.lambda);
    let i = pa
        .largest_within(half)
        .or_else(|| pa.largest_within(f64::INFINITY))
        .ok_or_else(|| Error::Validation("empty phase_r_grid".into()))?;
    let diff = {
        let d = pb.circular_mean[i] - pa.circular_mean[i];
        d.sin().atan2(d.cos())
    };
    let se = pa.stderr_angle[i].hypot(pb.stderr_angle[i]);
    let lag = density_lag(
        &density_profile(&a.accumulators)?,
        &density_profile(&b.accumulators)?,
        da.lambda,
    );
    Ok(ThetaComparison {
        theta: (a.spec.params.theta, b.spec.params.theta),
        r_cut: pa.r_grid[i] * da.lambda,
        circular_mean: (pa.circular_mean[i], pb.circular_mean[i]),
        stderr_angle: (pa.stderr_angle[i], pb.stderr_angle[i]),
        resultant_length: (pa.resultant_length[i], pb.resultant_length[i]),
        angle_difference: diff,
        phases_separated: diff.abs() > 5.0 * se,
        density_lag: lag,
    })
}

#[derive(Parser, Debug)]
#[command(
    name = "jellium",
    version,
    about = "Monte Carlo lab for quasi one-dimensional jellium"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides run.output_dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Base seed (overrides sampler.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of chains (overrides run.n_chains).
    #[arg(long, global = true)]
    chains: Option<u32>,
    /// Suppress progress and report lines on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the chains and write accumulators, estimators and snapshots.
    Sample,
    /// Recompute estimator CSVs from a stored accumulators.json.
    Analyze {
        /// Directory holding accumulators.json.
        #[arg(long)]
        input: PathBuf,
    },
    /// Quadrature reference for a domain with at most three particles.
    Oracle {
        #[arg(long, default_value_t = 8)]
        points_per_dim: usize,
        #[arg(long, default_value_t = 16)]
        y_points: usize,
    },
    /// Check the exact identities on random inputs.
    Validate,
    /// Run the same specification at two values of theta and contrast them.
    CompareTheta {
        #[arg(long, default_value_t = 0.0)]
        theta_a: f64,
        #[arg(long, default_value_t = 0.5)]
        theta_b: f64,
    },
}

struct Failure {
    code: i32,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Parse(_) => (2, "parse"),
            Error::Validation(_) => (2, "validation"),
            Error::InvalidParameter { .. } => (2, "invalid_parameter"),
            Error::Io(_) => (1, "io"),
            _ => (1, "runtime"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn diagnostic(kind: &str, message: &str) {
    let line = serde_json::json!({ "level": "error", "kind": kind, "message": message });
    eprintln!("{line}");
}

fn resolve_spec(cli: &Cli) -> Result<(RunSpec, String)> {
    let (mut spec, hash) = match &cli.config {
        Some(path) => {
            let bytes =
                fs::read(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            (parse_config(path)?, git_blob_hash(&bytes))
        }
        None => (RunSpec::default(), git_blob_hash(b"{}")),
    };
    if let Some(seed) = cli.seed {
        spec.base_seed = seed;
    }
    if let Some(n) = cli.chains {
        spec.n_chains = n;
    }
    if let Some(out) = &cli.output {
        spec.output_dir = out.clone();
    }
    spec.validate()?;
    Ok((spec, hash))
}

fn say(quiet: bool, text: &str) {
    if !quiet {
        println!("{text}");
    }
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::Sample => {
            let (spec, hash) = resolve_spec(cli)?;
            let outcome = run_sampling(&spec)?;
            let notes = write_run(&spec.output_dir, &outcome, &hash)?;
            for n in &notes {
                say(quiet, n);
            }
            say(
                quiet,
                &format!(
                    "sampled {} configurations, acceptance {:.3}, tau_int {:.2}; wrote {}",
                    outcome.accumulators.samples,
                    outcome.mean_acceptance(),
                    outcome.accumulators.tau_int,
                    spec.output_dir.display()
                ),
            );
            if !outcome.accumulators.checks.passed() {
                return Err(Failure {
                    code: 1,
                    kind: "identity_check",
                    message: format!("identity checks failed: {:?}", outcome.accumulators.checks),
                });
            }
        }
        Command::Analyze { input } => {
            let path = input.join("accumulators.json");
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let acc: Accumulators = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let dir = cli.output.clone().unwrap_or_else(|| input.clone());
            for n in analyze(&acc, &dir)? {
                say(quiet, &n);
            }
            say(quiet, &format!("wrote estimators to {}", dir.display()));
        }
        Command::Oracle {
            points_per_dim,
            y_points,
        } => {
            let (spec, hash) = resolve_spec(cli)?;
            let d = spec.domain()?;
            let nb = spec.observables.density_bins_per_lambda as usize * d.n_particles();
            let edges: Vec<f64> = (0..=nb)
                .map(|i| d.l1 + i as f64 * d.length() / nb as f64)
                .collect();
            let q = QuadratureSpec {
                points_per_dim: *points_per_dim,
                y_points: *y_points,
                ..QuadratureSpec::default()
            };
            let occ = bin_occupation(&d, &spec.params, &edges, &q)?;
            let k0 = expectation_quadrature(
                &d,
                &spec.params,
                1,
                &|c: &Configuration| vec![KField::new(&d, c).eval(0.0, Side::Right)],
                &QuadratureSpec {
                    breakpoints: vec![0.0],
                    ..q.clone()
                },
            )?;
            let mut csv = Csv::new(&["x_lo", "x_hi", "density", "stderr"]);
            for i in 0..nb {
                let w = edges[i + 1] - edges[i];
                csv.row(&[
                    num(edges[i]),
                    num(edges[i + 1]),
                    num(occ.value[i] / w),
                    num(occ.error[i] / w),
                ]);
            }
            csv.save(&spec.output_dir.join("oracle_density.csv"))?;
            let report = serde_json::json!({
                "config_hash": hash,
                "domain": d,
                "params": spec.params,
                "quadrature": q,
                "nodes": occ.nodes,
                "mean_k0": k0.value[0],
                "mean_k0_error": k0.error[0],
            });
            write_atomic(
                &spec.output_dir.join("oracle.json"),
                erased::Json::to_json(&report).as_bytes(),
            )?;
            say(
                quiet,
                &format!("E K(0) = {} +- {}", k0.value[0], k0.error[0]),
            );
        }
        Command::Validate => {
            let (spec, hash) = resolve_spec(cli)?;
            let checks = validation_battery(&spec.params, spec.base_seed)?;
            for c in &checks {
                say(
                    quiet,
                    &format!(
                        "{} {} max_residual={:e} tolerance={:e}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.max_residual,
                        c.tolerance
                    ),
                );
            }
            let report = serde_json::json!({ "config_hash": hash, "checks": checks });
            write_atomic(
                &spec.output_dir.join("validate.json"),
                erased::Json::to_json(&report).as_bytes(),
            )?;
            if checks.iter().any(|c| !c.passed) {
                return Err(Failure {
                    code: 1,
                    kind: "identity_check",
                    message: "one or more identities exceeded their tolerance".into(),
                });
            }
        }
        Command::CompareTheta { theta_a, theta_b } => {
            let (spec, hash) = resolve_spec(cli)?;
            let mut runs = Vec::new();
            for (tag, theta) in [("theta_a", *theta_a), ("theta_b", *theta_b)] {
                let mut s = spec.clone();
                s.params.theta = theta;
                s.output_dir = spec.output_dir.join(tag);
                s.validate()?;
                let outcome = run_sampling(&s)?;
                write_run(&s.output_dir, &outcome, &hash)?;
                runs.push(outcome);
            }
            let cmp = compare_outcomes(&runs[0], &runs[1])?;
            write_atomic(
                &spec.output_dir.join("compare_theta.json"),
                erased::Json::to_json(&cmp).as_bytes(),
            )?;
            say(
                quiet,
                &format!(
                    "angles {:.4} / {:.4} rad at R = {}, {}; density lag {:.3}",
                    cmp.circular_mean.0,
                    cmp.circular_mean.1,
                    cmp.r_cut,
                    if cmp.phases_separated {
                        "phases separated"
                    } else {
                        "phases not separated"
                    },
                    cmp.density_lag
                ),
            );
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 on success, 1 on failed checks or runtime errors, 2 on usage
/// errors. Errors are reported as one JSON object per line on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            diagnostic("usage", e.to_string().trim());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            diagnostic(f.kind, &f.message);
            f.code
        }
    }
}
