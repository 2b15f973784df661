//! Command-line surface of the `pepspec` binary.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use csv::StringRecord;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    blind_nce_shift, charge_perturbation, delta_decay, nce_calibration_sweep, stratify, ChargeSummary, DecayPoint,
    EvalItem, NcePoint, Predictor, Query, StratAxis, StratTable,
};
use crate::baseline::{train, BucketModel, TrainingExample};
use crate::error::{Error, Result};
use crate::io::config::{BootstrapParams, RunConfig};
use crate::io::predictions::{JoinColumns, JoinKey, PredictionTable, PredictionWriter};
use crate::io::report::{write_json, Manifest, Report};
use crate::io::table::{
    format_f64, ColumnPlan, ErrorPolicy, RecordStream, TableReader, TableRow, TableWriter, COL_CE, COL_CHARGE,
    COL_RAW_FILE, COL_SAMPLE_KEY, COL_SEQUENCE, COL_SPLIT,
};
use crate::ions::CanonicalSpace;
use crate::metrics::{bootstrap_ci, evaluate_pair, median, MetricRow, SaConvention};
use crate::peptide::{in_physical_scope, scope_filter, PtmBucket};
use crate::projection::project_ground_truth;
use crate::record::SpectrumRecord;
use crate::splits::{
    assign_split, leakage_audit, ood_rank_key, record_fingerprint, sampling_key, verify_disjoint, BalancedSampler,
    DisjointReport, LeakageAudit, SplitLabel, SplitRule, TopN,
};

pub const COL_NAKED: &str = "naked_sequence";
pub const COL_HAS_PTM: &str = "has_ptm";
pub const COL_PTM_BUCKET: &str = "ptm_bucket";
pub const COL_SPLIT_BUCKET: &str = "split_bucket";

const CHUNK_ROWS: usize = 8192;
const DEFAULT_NCE_GRID: [f64; 5] = [20.0, 25.0, 30.0, 35.0, 40.0];

#[derive(Debug, Parser)]
#[command(
    name = "pepspec",
    version,
    about = "Canonical-space evaluation toolkit for fragment-ion intensity prediction"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (overrides PEPSPEC_THREADS and the config file).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for hashing, sampling and bootstrap (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Handling of malformed rows (overrides the config).
    #[arg(long, global = true)]
    pub error_policy: Option<ErrorPolicy>,
    /// Spectral-angle scale (overrides the config).
    #[arg(long, global = true, value_enum)]
    pub sa_convention: Option<SaArg>,
    /// Manifest path; defaults to `<primary output>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SaArg {
    /// angle / pi, range [0, 0.5]
    InversePi,
    /// 2 angle / pi, range [0, 1]
    TwoOverPi,
}

impl From<SaArg> for SaConvention {
    fn from(a: SaArg) -> Self {
        match a {
            SaArg::InversePi => SaConvention::InversePi,
            SaArg::TwoOverPi => SaConvention::TwoOverPi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerturbMode {
    NceSweep,
    NceShift,
    Charge,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Canonicalize PTM notation, apply the scope filter and add metadata columns.
    Normalize {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Assign hash-based train/val/test splits and verify backbone disjointness.
    Split {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        rule: Option<SplitRule>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Deterministic balanced or top-N sampling, per split group.
    #[command(group(ArgGroup::new("mode").required(true).args(["balanced", "top_n"])))]
    Sample {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Balanced PTM sampling (about half unmodified).
        #[arg(long)]
        balanced: bool,
        /// Rows per split group for balanced sampling.
        #[arg(long)]
        quota: Option<usize>,
        /// Keep the N smallest OOD ranking keys per split group.
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Project observed spectra into the canonical ion space.
    ProjectTruth {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write `index:value` entries instead of dense vectors.
        #[arg(long)]
        sparse: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a prediction table against projected ground truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Per-spectrum metric rows (TSV).
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Median metrics per stratum from evaluate's metric rows.
    Stratify {
        #[arg(long)]
        rows: PathBuf,
        /// length_bin, charge, ptm_type or nce_bin; repeatable.
        #[arg(long = "axis", required = true)]
        axes: Vec<StratAxis>,
        /// Stratum used as reference for the delta-decay series.
        #[arg(long)]
        baseline_bin: Option<String>,
        /// Skip bootstrap confidence intervals.
        #[arg(long)]
        no_ci: bool,
        #[arg(long)]
        report: PathBuf,
        /// Plot-ready CSV of all strata.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Collision-energy and charge sensitivity probes.
    #[command(group(ArgGroup::new("predictor").required(true).args(["model", "predictions"])))]
    Perturb {
        #[arg(value_enum)]
        mode: PerturbMode,
        #[arg(short, long)]
        input: PathBuf,
        /// Baseline model JSON.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Prediction table covering every queried (peptide, charge, NCE).
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 25.0)]
        from: f64,
        #[arg(long, default_value_t = 30.0)]
        to: f64,
        #[arg(long)]
        report: PathBuf,
        /// Plot-ready CSV of the sweep curve.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Nearest-neighbour edit distance from test to train backbones.
    #[command(group(ArgGroup::new("source").required(true).args(["input", "train"])))]
    AuditLeakage {
        /// Table with a split column.
        #[arg(short, long, conflicts_with_all = ["train", "test"])]
        input: Option<PathBuf>,
        #[arg(long, requires = "test")]
        train: Option<PathBuf>,
        #[arg(long, requires = "train")]
        test: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        train_label: String,
        #[arg(long, default_value = "test")]
        test_label: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Fit the bucketed least-squares baseline.
    TrainBaseline {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Only use rows whose split column equals this label.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write baseline predictions for every in-scope row.
    PredictBaseline {
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        sparse: bool,
    },
}

/// Machine-readable error line written to stderr.
#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<u64>,
}

pub fn error_json(e: &Error) -> String {
    #[derive(Serialize)]
    struct Wrapper<'a> {
        error: ErrorBody<'a>,
    }
    serde_json::to_string(&Wrapper {
        error: ErrorBody {
            kind: e.kind(),
            message: e.to_string(),
            line: e.line(),
        },
    })
    .expect("plain struct serializes")
}

/// Parses arguments, runs the command and maps failures to exit code 1
/// with a JSON error on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let recorded = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, recorded) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}

struct Ctx {
    config: RunConfig,
    space: CanonicalSpace,
    args: Vec<String>,
    manifest: Option<PathBuf>,
}

impl Ctx {
    fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(command, self.args.clone(), &self.config)
    }

    fn write_manifest(&self, manifest: &Manifest, primary: &Path) -> Result<()> {
        let path = self.manifest.clone().unwrap_or_else(|| {
            let mut p = primary.as_os_str().to_owned();
            p.push(".manifest.json");
            PathBuf::from(p)
        });
        manifest.write(&path)
    }

    fn open(&self, path: &Path) -> Result<RecordStream<BufReader<File>>> {
        Ok(TableReader::open(path)?.records(self.config.default_nce, self.config.error_policy))
    }

    fn bootstrap(&self) -> crate::metrics::BootstrapConfig {
        self.config.bootstrap_config()
    }
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(policy) = cli.error_policy {
        config.error_policy = policy;
    }
    if let Some(sa) = cli.sa_convention {
        config.sa_convention = sa.into();
    }
    config.validate()?;
    if let Some(n) = config.resolve_threads(cli.threads)? {
        // A pool may already exist when running in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        space: config.space()?,
        config,
        args,
        manifest: cli.manifest,
    };
    match cli.command {
        Command::Normalize { input, output, report } => normalize(&ctx, &input, &output, report.as_deref()),
        Command::Split {
            input,
            output,
            rule,
            report,
        } => split(
            &ctx,
            &input,
            &output,
            rule.unwrap_or(ctx.config.split_rule),
            report.as_deref(),
        ),
        Command::Sample {
            input,
            output,
            balanced,
            quota,
            top_n,
            report,
        } => {
            let mode = if balanced {
                let q = quota
                    .or(ctx.config.sampling.quota)
                    .ok_or_else(|| Error::Config("--balanced needs --quota or sampling.quota".into()))?;
                SampleMode::Balanced(q)
            } else {
                SampleMode::TopN(top_n.or(ctx.config.sampling.top_n).ok_or(Error::QuotaZero)?)
            };
            sample(&ctx, &input, &output, mode, report.as_deref())
        }
        Command::ProjectTruth {
            input,
            output,
            sparse,
            report,
        } => project_truth(&ctx, &input, &output, sparse, report.as_deref()),
        Command::Evaluate {
            truth,
            predictions,
            report,
            rows,
        } => evaluate(&ctx, &truth, &predictions, &report, rows.as_deref()),
        Command::Stratify {
            rows,
            axes,
            baseline_bin,
            no_ci,
            report,
            csv,
        } => stratify_cmd(
            &ctx,
            &rows,
            &axes,
            baseline_bin.as_deref(),
            !no_ci,
            &report,
            csv.as_deref(),
        ),
        Command::Perturb {
            mode,
            input,
            model,
            predictions,
            grid,
            from,
            to,
            report,
            csv,
        } => {
            let grid = if grid.is_empty() {
                DEFAULT_NCE_GRID.to_vec()
            } else {
                grid
            };
            let source = match (model, predictions) {
                (Some(m), _) => PredictorSource::Model(m),
                (None, Some(p)) => PredictorSource::Table(p),
                (None, None) => return Err(Error::Config("perturb needs --model or --predictions".into())),
            };
            perturb(&ctx, mode, &input, &source, &grid, (from, to), &report, csv.as_deref())
        }
        Command::AuditLeakage {
            input,
            train,
            test,
            train_label,
            test_label,
            report,
        } => {
            let source = match (input, train, test) {
                (Some(i), _, _) => AuditSource::Labelled {
                    input: i,
                    train_label,
                    test_label,
                },
                (None, Some(train), Some(test)) => AuditSource::Files { train, test },
                _ => {
                    return Err(Error::Config(
                        "audit-leakage needs --input or both --train and --test".into(),
                    ))
                }
            };
            audit_leakage(&ctx, &source, &report)
        }
        Command::TrainBaseline {
            input,
            model,
            split,
            report,
        } => train_baseline(&ctx, &input, &model, split.as_deref(), report.as_deref()),
        Command::PredictBaseline {
            model,
            input,
            output,
            sparse,
        } => predict_baseline(&ctx, &model, &input, &output, sparse),
    }
}

fn next_chunk<R: Read>(stream: &mut RecordStream<R>) -> Result<Vec<(TableRow, SpectrumRecord)>> {
    let mut chunk = Vec::with_capacity(CHUNK_ROWS);
    for item in stream.by_ref().take(CHUNK_ROWS) {
        chunk.push(item?);
    }
    Ok(chunk)
}

/// Applies the error policy to a per-row result computed after parsing.
fn tolerate<T>(result: Result<T>, line: u64, policy: ErrorPolicy, skipped: &mut u64) -> Result<Option<T>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(_) if policy == ErrorPolicy::Skip => {
            *skipped += 1;
            Ok(None)
        }
        Err(e) => Err(e.at_line(line)),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub unmod: u64,
    pub ox: u64,
    pub cam: u64,
    pub ace: u64,
}

impl BucketCounts {
    fn add(&mut self, bucket: PtmBucket) {
        match bucket {
            PtmBucket::Unmod => self.unmod += 1,
            PtmBucket::Ox => self.ox += 1,
            PtmBucket::Cam => self.cam += 1,
            PtmBucket::Ace => self.ace += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.unmod + self.ox + self.cam + self.ace
    }
}

/// Row accounting shared by the streaming commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub n_rows: u64,
    pub n_written: u64,
    pub n_out_of_scope: u64,
    pub n_skipped: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub skipped_examples: Vec<String>,
}

impl RowCounts {
    fn absorb<R: Read>(&mut self, stream: &RecordStream<R>) {
        self.n_skipped += stream.skipped();
        self.skipped_examples = stream.skipped_examples().to_vec();
    }

    fn ensure_nonempty(&self, what: &str) -> Result<()> {
        if self.n_rows > 0 && self.n_written == 0 {
            return Err(Error::ScopeEmpty(format!("{} rows read, none {what}", self.n_rows)));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct NormalizeReport {
    #[serde(flatten)]
    counts: RowCounts,
    ptm_buckets: BucketCounts,
}

fn normalize(ctx: &Ctx, input: &Path, output: &Path, report: Option<&Path>) -> Result<()> {
    let mut stream = ctx.open(input)?;
    let plan = ColumnPlan::new(
        stream.schema().headers(),
        &[COL_SEQUENCE, COL_CE, COL_NAKED, COL_HAS_PTM, COL_PTM_BUCKET],
    );
    let mut writer = TableWriter::create(output)?;
    writer.write_record(plan.headers())?;
    let mut counts = RowCounts::default();
    let mut buckets = BucketCounts::default();
    for item in stream.by_ref() {
        let (row, rec) = item?;
        counts.n_rows += 1;
        if !scope_filter(&rec) {
            counts.n_out_of_scope += 1;
            continue;
        }
        let bucket = rec.peptide.ptm_bucket();
        buckets.add(bucket);
        let values = [
            rec.peptide.to_canonical_string(),
            format_f64(rec.nce),
            rec.peptide.to_naked(),
            rec.peptide.has_ptm().to_string(),
            bucket.to_string(),
        ];
        writer.write_record(plan.apply(&row.fields, &values))?;
        counts.n_written += 1;
    }
    counts.absorb(&stream);
    writer.finish()?;
    counts.ensure_nonempty("passed the scope filter")?;
    if let Some(path) = report {
        write_json(
            path,
            &Report::new(
                "normalize",
                NormalizeReport {
                    counts,
                    ptm_buckets: buckets,
                },
            ),
        )?;
    }
    let mut manifest = ctx.manifest("normalize");
    manifest.add_input(input)?;
    manifest.add_output(output)?;
    ctx.write_manifest(&manifest, output)
}

#[derive(Debug, Serialize)]
struct SplitCount {
    split: SplitLabel,
    n: u64,
    fraction: f64,
}

#[derive(Debug, Serialize)]
struct SplitReport {
    rule: SplitRule,
    #[serde(flatten)]
    counts: RowCounts,
    splits: Vec<SplitCount>,
    backbone_disjointness: DisjointReport,
}

fn split(ctx: &Ctx, input: &Path, output: &Path, rule: SplitRule, report: Option<&Path>) -> Result<()> {
    let mut stream = ctx.open(input)?;
    let plan = ColumnPlan::new(stream.schema().headers(), &[COL_SPLIT, COL_SPLIT_BUCKET]);
    let mut writer = TableWriter::create(output)?;
    writer.write_record(plan.headers())?;
    let mut counts = RowCounts::default();
    let mut per_label = [0u64; 3];
    let mut seen: HashMap<String, u8> = HashMap::new();
    let policy = ctx.config.error_policy;
    for item in stream.by_ref() {
        let (row, rec) = item?;
        counts.n_rows += 1;
        let Some(a) = tolerate(assign_split(&rec, rule), row.line, policy, &mut counts.n_skipped)? else {
            continue;
        };
        let slot = SplitLabel::ALL.iter().position(|&l| l == a.label).expect("known label");
        per_label[slot] += 1;
        *seen.entry(rec.naked()).or_default() |= 1 << slot;
        writer.write_record(plan.apply(&row.fields, &[a.label.to_string(), a.bucket.to_string()]))?;
        counts.n_written += 1;
    }
    counts.absorb(&stream);
    writer.finish()?;
    let disjoint = verify_disjoint(seen.iter().flat_map(|(backbone, &bits)| {
        SplitLabel::ALL
            .into_iter()
            .enumerate()
            .filter(move |(i, _)| bits & (1 << i) != 0)
            .map(move |(_, label)| (backbone.as_str(), label))
    }));
    if let Some(path) = report {
        let total = counts.n_written.max(1) as f64;
        let splits = SplitLabel::ALL
            .into_iter()
            .zip(per_label)
            .map(|(split, n)| SplitCount {
                split,
                n,
                fraction: n as f64 / total,
            })
            .collect();
        write_json(
            path,
            &Report::new(
                "split",
                SplitReport {
                    rule,
                    counts,
                    splits,
                    backbone_disjointness: disjoint,
                },
            ),
        )?;
    }
    let mut manifest = ctx.manifest("split");
    manifest.add_input(input)?;
    manifest.add_output(output)?;
    ctx.write_manifest(&manifest, output)
}

#[derive(Debug, Clone, Copy)]
enum SampleMode {
    Balanced(usize),
    TopN(usize),
}

enum Sampler {
    Balanced(BalancedSampler<StringRecord>),
    TopN(TopN<(PtmBucket, StringRecord)>),
}

#[derive(Debug, Serialize)]
struct SampleGroup {
    split: String,
    available: BucketCounts,
    selected: BucketCounts,
}

#[derive(Debug, Serialize)]
struct SampleReport {
    mode: &'static str,
    quota: usize,
    seed: u64,
    #[serde(flatten)]
    counts: RowCounts,
    groups: Vec<SampleGroup>,
}

/// Sort rank of a split label: train, val, test, other labels, unlabelled.
fn group_rank(label: &str) -> u8 {
    match label.parse::<SplitLabel>() {
        Ok(SplitLabel::Train) => 0,
        Ok(SplitLabel::Val) => 1,
        Ok(SplitLabel::Test) => 2,
        Err(_) if label.is_empty() => 4,
        Err(_) => 3,
    }
}

fn sample(ctx: &Ctx, input: &Path, output: &Path, mode: SampleMode, report: Option<&Path>) -> Result<()> {
    let mut stream = ctx.open(input)?;
    let headers = stream.schema().headers().clone();
    let seed = ctx.config.seed;
    let mut groups: BTreeMap<(u8, String), (Sampler, BucketCounts)> = BTreeMap::new();
    let mut counts = RowCounts::default();
    for item in stream.by_ref() {
        let (row, rec) = item?;
        counts.n_rows += 1;
        if !in_physical_scope(&rec.peptide, rec.charge) {
            counts.n_out_of_scope += 1;
            continue;
        }
        let label = rec.split.clone().unwrap_or_default();
        let (sampler, available) = match groups.entry((group_rank(&label), label)) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                let sampler = match mode {
                    SampleMode::Balanced(q) => Sampler::Balanced(BalancedSampler::new(q)?),
                    SampleMode::TopN(0) => return Err(Error::QuotaZero),
                    SampleMode::TopN(n) => Sampler::TopN(TopN::new(n)),
                };
                e.insert((sampler, BucketCounts::default()))
            }
        };
        let bucket = rec.peptide.ptm_bucket();
        available.add(bucket);
        let fingerprint = record_fingerprint(&rec);
        match sampler {
            Sampler::Balanced(s) => {
                let key = (sampling_key(&rec.naked(), rec.charge, rec.nce, seed), fingerprint);
                s.push(bucket, key, row.fields);
            }
            Sampler::TopN(t) => {
                let key = (ood_rank_key(&rec.naked(), rec.charge, seed), fingerprint);
                t.push(key, (bucket, row.fields));
            }
        }
    }
    counts.absorb(&stream);

    let mut writer = TableWriter::create(output)?;
    writer.write_record(&headers)?;
    let mut report_groups = Vec::new();
    for ((_, label), (sampler, available)) in groups {
        let mut selected = BucketCounts::default();
        let rows: Vec<(PtmBucket, StringRecord)> = match sampler {
            Sampler::Balanced(s) => s
                .finish()
                .into_iter()
                .flat_map(|(b, rows)| rows.into_iter().map(move |r| (b, r)))
                .collect(),
            Sampler::TopN(t) => t.into_sorted().into_iter().map(|(_, item)| item).collect(),
        };
        for (bucket, fields) in rows {
            selected.add(bucket);
            writer.write_record(&fields)?;
            counts.n_written += 1;
        }
        report_groups.push(SampleGroup {
            split: label,
            available,
            selected,
        });
    }
    writer.finish()?;
    counts.ensure_nonempty("selected")?;
    if let Some(path) = report {
        let (mode_name, quota) = match mode {
            SampleMode::Balanced(q) => ("balanced", q),
            SampleMode::TopN(n) => ("top_n", n),
        };
        write_json(
            path,
            &Report::new(
                "sample",
                SampleReport {
                    mode: mode_name,
                    quota,
                    seed,
                    counts,
                    groups: report_groups,
                },
            ),
        )?;
    }
    let mut manifest = ctx.manifest("sample");
    manifest.add_input(input)?;
    manifest.add_output(output)?;
    ctx.write_manifest(&manifest, output)
}

#[derive(Debug, Serialize)]
struct ProjectReport {
    #[serde(flatten)]
    counts: RowCounts,
    n_all_zero: u64,
}

fn join_columns_of<R: Read>(stream: &RecordStream<R>) -> JoinColumns {
    JoinColumns {
        raw_file: stream.schema().has_raw_file(),
        sample_key: stream.schema().has_sample_key(),
    }
}

fn project_truth(ctx: &Ctx, input: &Path, output: &Path, sparse: bool, report: Option<&Path>) -> Result<()> {
    let mut stream = ctx.open(input)?;
    stream.schema().require_peaks()?;
    let mut writer = PredictionWriter::new(TableWriter::create(output)?, join_columns_of(&stream), sparse)?;
    let mut counts = RowCounts::default();
    let mut n_all_zero = 0;
    let space = ctx.space;
    loop {
        let chunk = next_chunk(&mut stream)?;
        if chunk.is_empty() {
            break;
        }
        let projected: Vec<Option<Result<_>>> = chunk
            .par_iter()
            .map(|(_, rec)| {
                in_physical_scope(&rec.peptide, rec.charge)
                    .then(|| project_ground_truth(&rec.spectrum, &rec.peptide, rec.charge, &space))
            })
            .collect();
        for ((row, rec), result) in chunk.into_iter().zip(projected) {
            counts.n_rows += 1;
            let Some(result) = result else {
                counts.n_out_of_scope += 1;
                continue;
            };
            if let Some(v) = tolerate(result, row.line, ctx.config.error_policy, &mut counts.n_skipped)? {
                n_all_zero += u64::from(v.is_zero());
                writer.write(&rec, &v)?;
                counts.n_written += 1;
            }
        }
    }
    counts.absorb(&stream);
    writer.finish()?;
    counts.ensure_nonempty("projected")?;
    if let Some(path) = report {
        write_json(
            path,
            &Report::new("project_truth", ProjectReport { counts, n_all_zero }),
        )?;
    }
    let mut manifest = ctx.manifest("project-truth");
    manifest.add_input(input)?;
    manifest.add_output(output)?;
    ctx.write_manifest(&manifest, output)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    sa_convention: SaConvention,
    join_columns: Vec<&'static str>,
    bootstrap: BootstrapParams,
    seed: u64,
    n_truth_rows: u64,
    n_out_of_scope: u64,
    n_skipped: u64,
    n_matched: u64,
    n_unmatched_truth: u64,
    n_prediction_rows: u64,
    n_unmatched_predictions: u64,
    n_duplicate_predictions: u64,
    sa: MetricSummary,
    sas: MetricSummary,
    pcc: MetricSummary,
}

enum EvalOutcome {
    OutOfScope,
    Unmatched,
    Scored(JoinKey, Result<MetricRow>),
}

fn summarize(values: &[f64], bootstrap: &crate::metrics::BootstrapConfig) -> Result<MetricSummary> {
    let ci = bootstrap_ci(values, bootstrap)?;
    Ok(MetricSummary {
        median: median(values)?,
        ci_lo: ci.lo,
        ci_hi: ci.hi,
    })
}

const METRIC_ROW_COLUMNS: [&str; 6] = ["length", "ptm_bucket", "k", "sa", "sas", "pcc"];

fn evaluate(ctx: &Ctx, truth: &Path, predictions: &Path, report: &Path, rows_out: Option<&Path>) -> Result<()> {
    let mut stream = ctx.open(truth)?;
    stream.schema().require_peaks()?;
    let pred_headers = TableReader::open(predictions)?.schema().headers().clone();
    let join = JoinColumns::shared(stream.schema().headers(), &pred_headers);
    let table = PredictionTable::load(predictions, &ctx.space, join)?;

    let mut rows_writer = match rows_out {
        Some(path) => {
            let mut w = TableWriter::create(path)?;
            let mut header = vec![COL_SEQUENCE, COL_CHARGE, COL_CE];
            if join.raw_file {
                header.push(COL_RAW_FILE);
            }
            if join.sample_key {
                header.push(COL_SAMPLE_KEY);
            }
            header.extend(METRIC_ROW_COLUMNS);
            w.write_record(header)?;
            Some(w)
        }
        None => None,
    };

    let space = ctx.space;
    let convention = ctx.config.sa_convention;
    let mut counts = RowCounts::default();
    let mut unmatched_truth = 0u64;
    let mut matched_keys: HashSet<JoinKey> = HashSet::new();
    let mut metrics: Vec<MetricRow> = Vec::new();
    loop {
        let chunk = next_chunk(&mut stream)?;
        if chunk.is_empty() {
            break;
        }
        let outcomes: Vec<EvalOutcome> = chunk
            .par_iter()
            .map(|(_, rec)| {
                if !in_physical_scope(&rec.peptide, rec.charge) {
                    return EvalOutcome::OutOfScope;
                }
                let key = JoinKey::for_record(rec, join);
                if !table.contains(&key) {
                    return EvalOutcome::Unmatched;
                }
                let scored = project_ground_truth(&rec.spectrum, &rec.peptide, rec.charge, &space).and_then(|t| {
                    let p = table.vector(&key, &rec.peptide, rec.charge)?;
                    evaluate_pair(rec, &p, &t, &space, convention)
                });
                EvalOutcome::Scored(key, scored)
            })
            .collect();
        for ((row, rec), outcome) in chunk.into_iter().zip(outcomes) {
            counts.n_rows += 1;
            match outcome {
                EvalOutcome::OutOfScope => counts.n_out_of_scope += 1,
                EvalOutcome::Unmatched => unmatched_truth += 1,
                EvalOutcome::Scored(key, result) => {
                    let Some(m) = tolerate(result, row.line, ctx.config.error_policy, &mut counts.n_skipped)? else {
                        continue;
                    };
                    if let Some(w) = rows_writer.as_mut() {
                        let mut line = vec![
                            rec.peptide.to_canonical_string(),
                            rec.charge.to_string(),
                            format_f64(rec.nce),
                        ];
                        line.extend(key.raw_file.clone());
                        line.extend(key.sample_key.clone());
                        line.extend([
                            m.length.to_string(),
                            m.ptm_bucket.to_string(),
                            m.k.to_string(),
                            format_f64(m.sa),
                            format_f64(m.sas),
                            format_f64(m.pcc),
                        ]);
                        w.write_record(&line)?;
                    }
                    matched_keys.insert(key);
                    metrics.push(m);
                }
            }
        }
    }
    counts.absorb(&stream);
    if let Some(w) = rows_writer {
        w.finish()?;
    }
    if metrics.is_empty() {
        return Err(Error::ScopeEmpty(format!(
            "{} truth rows read, none matched a prediction",
            counts.n_rows
        )));
    }
    let bootstrap = ctx.bootstrap();
    let columns: [Vec<f64>; 3] = [
        metrics.iter().map(|m| m.sa).collect(),
        metrics.iter().map(|m| m.sas).collect(),
        metrics.iter().map(|m| m.pcc).collect(),
    ];
    let mut summaries = columns
        .par_iter()
        .map(|v| summarize(v, &bootstrap))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let mut join_names = Vec::new();
    if join.raw_file {
        join_names.push(COL_RAW_FILE);
    }
    if join.sample_key {
        join_names.push(COL_SAMPLE_KEY);
    }
    let body = EvaluateReport {
        sa_convention: convention,
        join_columns: join_names,
        bootstrap: ctx.config.bootstrap,
        seed: ctx.config.seed,
        n_truth_rows: counts.n_rows,
        n_out_of_scope: counts.n_out_of_scope,
        n_skipped: counts.n_skipped,
        n_matched: metrics.len() as u64,
        n_unmatched_truth: unmatched_truth,
        n_prediction_rows: table.len() as u64 + table.duplicates(),
        n_unmatched_predictions: (table.len() - matched_keys.len()) as u64,
        n_duplicate_predictions: table.duplicates(),
        sa: summaries.next().expect("three summaries"),
        sas: summaries.next().expect("three summaries"),
        pcc: summaries.next().expect("three summaries"),
    };
    write_json(report, &Report::new("evaluate", body))?;
    let mut manifest = ctx.manifest("evaluate");
    manifest.add_input(truth)?;
    manifest.add_input(predictions)?;
    manifest.add_output(report)?;
    if let Some(p) = rows_out {
        manifest.add_output(p)?;
    }
    ctx.write_manifest(&manifest, report)
}

#[derive(Debug, Deserialize)]
struct MetricLine {
    collision_energy: f64,
    length: usize,
    precursor_charge: u8,
    ptm_bucket: PtmBucket,
    k: usize,
    sa: f64,
    sas: f64,
    pcc: f64,
}

/// Reads the metric rows written by `evaluate --rows`.
pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = crate::io::table::tsv_reader(BufReader::new(file));
    let mut rows = Vec::new();
    for (i, item) in reader.deserialize::<MetricLine>().enumerate() {
        let m = item.map_err(|e| Error::Schema {
            line: e.position().map(|p| p.line()).unwrap_or(i as u64 + 2),
            message: e.to_string(),
        })?;
        rows.push(MetricRow {
            sa: m.sa,
            sas: m.sas,
            pcc: m.pcc,
            k: m.k,
            length: m.length,
            charge: m.precursor_charge,
            ptm_bucket: m.ptm_bucket,
            nce: m.collision_energy,
        });
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct DecaySeries {
    axis: StratAxis,
    baseline: String,
    points: Vec<DecayPoint>,
}

#[derive(Debug, Serialize)]
struct StratifyReport {
    n_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapParams>,
    seed: u64,
    tables: Vec<StratTable>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    decay: Vec<DecaySeries>,
}

fn stratify_cmd(
    ctx: &Ctx,
    rows_path: &Path,
    axes: &[StratAxis],
    baseline: Option<&str>,
    with_ci: bool,
    report: &Path,
    csv_out: Option<&Path>,
) -> Result<()> {
    let rows = read_metric_rows(rows_path)?;
    let bootstrap = ctx.bootstrap();
    let tables = axes
        .iter()
        .map(|&axis| stratify(&rows, axis, &ctx.config.strat, with_ci.then_some(&bootstrap)))
        .collect::<Result<Vec<_>>>()?;
    let mut decay = Vec::new();
    if let Some(base) = baseline {
        for t in tables.iter().filter(|t| t.get(base).is_some()) {
            decay.push(DecaySeries {
                axis: t.axis,
                baseline: base.to_string(),
                points: delta_decay(t, base)?,
            });
        }
        if decay.is_empty() {
            return Err(Error::MissingBaselineBin(base.to_string()));
        }
    }
    if let Some(path) = csv_out {
        let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
        w.write_record([
            "axis",
            "stratum",
            "n",
            "median_sa",
            "median_sas",
            "median_pcc",
            "sa_ci_lo",
            "sa_ci_hi",
        ])?;
        for t in &tables {
            let axis = serde_json::to_value(t.axis)?.as_str().unwrap_or_default().to_string();
            for r in &t.rows {
                let (lo, hi) = r
                    .sa_ci
                    .map(|c| (format_f64(c.lo), format_f64(c.hi)))
                    .unwrap_or_default();
                w.write_record([
                    axis.clone(),
                    r.stratum.clone(),
                    r.n.to_string(),
                    format_f64(r.median_sa),
                    format_f64(r.median_sas),
                    format_f64(r.median_pcc),
                    lo,
                    hi,
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let body = StratifyReport {
        n_rows: rows.len(),
        bootstrap: with_ci.then_some(ctx.config.bootstrap),
        seed: ctx.config.seed,
        tables,
        decay,
    };
    write_json(report, &Report::new("stratify", body))?;
    let mut manifest = ctx.manifest("stratify");
    manifest.add_input(rows_path)?;
    manifest.add_output(report)?;
    if let Some(p) = csv_out {
        manifest.add_output(p)?;
    }
    ctx.write_manifest(&manifest, report)
}

enum PredictorSource {
    Model(PathBuf),
    Table(PathBuf),
}

impl PredictorSource {
    fn path(&self) -> &Path {
        match self {
            PredictorSource::Model(p) | PredictorSource::Table(p) => p,
        }
    }

    fn load(&self, space: &CanonicalSpace) -> Result<Box<dyn Predictor>> {
        Ok(match self {
            PredictorSource::Model(p) => Box::new(BucketModel::load(p)?),
            PredictorSource::Table(p) => Box::new(PredictionTable::load(p, space, JoinColumns::default())?),
        })
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum PerturbReport {
    NceSweep {
        n: usize,
        sa_convention: SaConvention,
        points: Vec<NcePoint>,
        argmin: f64,
    },
    NceShift {
        n: usize,
        sa_convention: SaConvention,
        from: f64,
        to: f64,
        delta_sa: f64,
    },
    Charge {
        n_rows: usize,
        sa_convention: SaConvention,
        from_charge: u8,
        to_charge: u8,
        #[serde(flatten)]
        summary: ChargeSummary,
    },
}

#[allow(clippy::too_many_arguments)]
fn perturb(
    ctx: &Ctx,
    mode: PerturbMode,
    input: &Path,
    source: &PredictorSource,
    grid: &[f64],
    (from, to): (f64, f64),
    report: &Path,
    csv_out: Option<&Path>,
) -> Result<()> {
    let predictor = source.load(&ctx.space)?;
    let convention = ctx.config.sa_convention;
    let mut stream = ctx.open(input)?;
    let needs_truth = mode != PerturbMode::Charge;
    if needs_truth {
        stream.schema().require_peaks()?;
    }
    let mut queries = Vec::new();
    let mut items = Vec::new();
    let mut skipped = 0;
    let space = ctx.space;
    loop {
        let chunk = next_chunk(&mut stream)?;
        if chunk.is_empty() {
            break;
        }
        let chunk: Vec<_> = chunk
            .into_iter()
            .filter(|(_, r)| in_physical_scope(&r.peptide, r.charge))
            .collect();
        if !needs_truth {
            queries.extend(chunk.into_iter().map(|(_, r)| Query {
                peptide: r.peptide,
                charge: r.charge,
                nce: r.nce,
            }));
            continue;
        }
        let truths: Vec<Result<_>> = chunk
            .par_iter()
            .map(|(_, r)| project_ground_truth(&r.spectrum, &r.peptide, r.charge, &space))
            .collect();
        for ((row, r), truth) in chunk.into_iter().zip(truths) {
            if let Some(truth) = tolerate(truth, row.line, ctx.config.error_policy, &mut skipped)? {
                items.push(EvalItem {
                    query: Query {
                        peptide: r.peptide,
                        charge: r.charge,
                        nce: r.nce,
                    },
                    truth,
                });
            }
        }
    }
    let body = match mode {
        PerturbMode::NceSweep => {
            let curve = nce_calibration_sweep(predictor.as_ref(), &items, grid, convention)?;
            if let Some(path) = csv_out {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["nce", "median_sa"])?;
                for p in &curve.points {
                    w.write_record([format_f64(p.nce), format_f64(p.median_sa)])?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            PerturbReport::NceSweep {
                n: items.len(),
                sa_convention: convention,
                points: curve.points,
                argmin: curve.argmin,
            }
        }
        PerturbMode::NceShift => PerturbReport::NceShift {
            n: items.len(),
            sa_convention: convention,
            from,
            to,
            delta_sa: blind_nce_shift(predictor.as_ref(), &items, from, to, convention)?,
        },
        PerturbMode::Charge => PerturbReport::Charge {
            n_rows: queries.len(),
            sa_convention: convention,
            from_charge: 2,
            to_charge: 3,
            summary: charge_perturbation(predictor.as_ref(), &queries, convention)?,
        },
    };
    write_json(report, &Report::new("perturb", body))?;
    let mut manifest = ctx.manifest("perturb");
    manifest.add_input(input)?;
    manifest.add_input(source.path())?;
    manifest.add_output(report)?;
    if let Some(p) = csv_out.filter(|_| mode == PerturbMode::NceSweep) {
        manifest.add_output(p)?;
    }
    ctx.write_manifest(&manifest, report)
}

enum AuditSource {
    Labelled {
        input: PathBuf,
        train_label: String,
        test_label: String,
    },
    Files {
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Serialize)]
struct AuditReport {
    n_train_unique: usize,
    n_test_unique: usize,
    #[serde(flatten)]
    audit: LeakageAudit,
}

fn collect_backbones(ctx: &Ctx, path: &Path, label: Option<&str>) -> Result<BTreeSet<String>> {
    let mut stream = ctx.open(path)?;
    if label.is_some() {
        stream.schema().require_split()?;
    }
    let mut out = BTreeSet::new();
    for item in stream.by_ref() {
        let (_, rec) = item?;
        if label.is_none_or(|l| rec.split.as_deref() == Some(l)) {
            out.insert(rec.naked());
        }
    }
    Ok(out)
}

fn audit_leakage(ctx: &Ctx, source: &AuditSource, report: &Path) -> Result<()> {
    let mut manifest = ctx.manifest("audit-leakage");
    let (train, test) = match source {
        AuditSource::Labelled {
            input,
            train_label,
            test_label,
        } => {
            manifest.add_input(input)?;
            let stream = ctx.open(input)?;
            stream.schema().require_split()?;
            let mut train = BTreeSet::new();
            let mut test = BTreeSet::new();
            for item in stream {
                let (_, rec) = item?;
                match rec.split.as_deref() {
                    Some(l) if l == train_label => {
                        train.insert(rec.naked());
                    }
                    Some(l) if l == test_label => {
                        test.insert(rec.naked());
                    }
                    _ => {}
                }
            }
            (train, test)
        }
        AuditSource::Files { train, test } => {
            manifest.add_input(train)?;
            manifest.add_input(test)?;
            (
                collect_backbones(ctx, train, None)?,
                collect_backbones(ctx, test, None)?,
            )
        }
    };
    let train: Vec<String> = train.into_iter().collect();
    let test: Vec<String> = test.into_iter().collect();
    let audit = leakage_audit(&test, &train)?;
    let body = AuditReport {
        n_train_unique: train.len(),
        n_test_unique: test.len(),
        audit,
    };
    write_json(report, &Report::new("audit_leakage", body))?;
    manifest.add_output(report)?;
    ctx.write_manifest(&manifest, report)
}

#[derive(Debug, Serialize)]
struct TrainReport {
    #[serde(flatten)]
    counts: RowCounts,
    n_buckets: usize,
    n_fitted_buckets: usize,
    ce_grid: Vec<f64>,
}

fn train_baseline(
    ctx: &Ctx,
    input: &Path,
    model_path: &Path,
    split: Option<&str>,
    report: Option<&Path>,
) -> Result<()> {
    let mut stream = ctx.open(input)?;
    stream.schema().require_peaks()?;
    if split.is_some() {
        stream.schema().require_split()?;
    }
    let space = ctx.space;
    let mut counts = RowCounts::default();
    let mut examples = Vec::new();
    loop {
        let chunk = next_chunk(&mut stream)?;
        if chunk.is_empty() {
            break;
        }
        counts.n_rows += chunk.len() as u64;
        let chunk: Vec<_> = chunk
            .into_iter()
            .filter(|(_, r)| split.is_none_or(|s| r.split.as_deref() == Some(s)))
            .filter(|(_, r)| {
                let ok = in_physical_scope(&r.peptide, r.charge);
                counts.n_out_of_scope += u64::from(!ok);
                ok
            })
            .collect();
        let truths: Vec<Result<_>> = chunk
            .par_iter()
            .map(|(_, r)| project_ground_truth(&r.spectrum, &r.peptide, r.charge, &space))
            .collect();
        for ((row, r), truth) in chunk.into_iter().zip(truths) {
            if let Some(truth) = tolerate(truth, row.line, ctx.config.error_policy, &mut counts.n_skipped)? {
                examples.push(TrainingExample {
                    peptide: r.peptide,
                    charge: r.charge,
                    nce: r.nce,
                    truth,
                });
            }
        }
    }
    counts.absorb(&stream);
    counts.n_written = examples.len() as u64;
    let model = train(examples, &space, &ctx.config.baseline)?;
    model.save(model_path)?;
    if let Some(path) = report {
        let body = TrainReport {
            counts,
            n_buckets: model.buckets.len(),
            n_fitted_buckets: model.buckets.iter().filter(|b| !b.fits.is_empty()).count(),
            ce_grid: model.ce_grid.clone(),
        };
        write_json(path, &Report::new("train_baseline", body))?;
    }
    let mut manifest = ctx.manifest("train-baseline");
    manifest.add_input(input)?;
    manifest.add_output(model_path)?;
    ctx.write_manifest(&manifest, model_path)
}

fn predict_baseline(ctx: &Ctx, model_path: &Path, input: &Path, output: &Path, sparse: bool) -> Result<()> {
    let model = BucketModel::load(model_path)?;
    let mut stream = ctx.open(input)?;
    let mut writer = PredictionWriter::new(TableWriter::create(output)?, join_columns_of(&stream), sparse)?;
    let mut counts = RowCounts::default();
    loop {
        let chunk = next_chunk(&mut stream)?;
        if chunk.is_empty() {
            break;
        }
        let preds: Vec<Option<Result<_>>> = chunk
            .par_iter()
            .map(|(_, r)| in_physical_scope(&r.peptide, r.charge).then(|| model.predict(&r.peptide, r.charge, r.nce)))
            .collect();
        for ((row, r), pred) in chunk.into_iter().zip(preds) {
            counts.n_rows += 1;
            let Some(pred) = pred else {
                counts.n_out_of_scope += 1;
                continue;
            };
            if let Some(v) = tolerate(pred, row.line, ctx.config.error_policy, &mut counts.n_skipped)? {
                writer.write(&r, &v)?;
                counts.n_written += 1;
            }
        }
    }
    writer.finish()?;
    counts.ensure_nonempty("predicted")?;
    let mut manifest = ctx.manifest("predict-baseline");
    manifest.add_input(model_path)?;
    manifest.add_input(input)?;
    manifest.add_output(output)?;
    ctx.write_manifest(&manifest, output)
}
