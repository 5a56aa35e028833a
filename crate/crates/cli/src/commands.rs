use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use drg_core::catalog::{bundled_catalog_csv, CatalogSummary, DrgCatalog};
use drg_core::harmonize::{
    apply_review_decisions, build_mapping, read_decisions, read_mapping, read_review_queue,
    write_mapping, write_review_queue, Harmonizer, NormalizationRuleSet, DEFAULT_ACCEPT_THRESHOLD,
    DEFAULT_REVIEW_THRESHOLD,
};
use drg_core::metrics::{
    write_per_drg_csv, EvalOptions, MetricsReport, DEFAULT_BOOTSTRAP_ITERATIONS,
};
use drg_core::model::{train as fit_model, AdapterConfig, ModeKind, ModelArtifact, TrainConfig};
use drg_core::predictions::{
    evaluate_records, predict_records, EvaluationReport, PredictionRecord,
};
use drg_core::preprocess::{
    build_cohort, read_jsonl, split_from_rows, train_counts, write_jsonl, CohortRow,
    PreprocessConfig, PreprocessError, RawNote, SplitSide, DEFAULT_MIN_CLASS_COUNT,
    DEFAULT_TEST_FRACTION,
};
use drg_core::synth::{generate_notes, NoteGenSpec, DESK_CATALOG};

use crate::config::PipelineConfig;
use crate::{
    ApplyReviewsArgs, BuildCatalogArgs, EvaluateArgs, HarmonizeArgs, Mode, PredictArgs,
    PreprocessArgs, Preset, ReportArgs, SplitChoice, SynthArgs, TrainArgs,
};

pub const DEFAULT_SUBSETS: [usize; 3] = [300, 50, 30];

pub struct Context {
    pub seed: u64,
    pub quiet: bool,
    pub config: PipelineConfig,
}

impl Context {
    fn info(&self, message: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", message.as_ref());
        }
    }
}

/// 2 when any cause is an I/O failure, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.is::<std::io::Error>()
            || matches!(
                cause.downcast_ref::<PreprocessError>(),
                Some(PreprocessError::Io(_))
            )
    });
    if io {
        2
    } else {
        1
    }
}

// ---- file helpers ----

fn require(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone()).ok_or_else(|| {
        anyhow!(
            "missing --{name} (or paths.{} in the config)",
            name.replace('-', "_")
        )
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    read_jsonl(text.as_bytes()).with_context(|| format!("parsing {}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items)?;
    write_text(path, std::str::from_utf8(&buf)?)
}

fn load_catalog(path: Option<&Path>, version_tag: &str) -> Result<DrgCatalog> {
    let (text, origin) = match path {
        Some(p) => (read_text(p)?, p.display().to_string()),
        None => (bundled_catalog_csv(), "bundled catalog".to_string()),
    };
    let catalog =
        DrgCatalog::parse(&text, version_tag).with_context(|| format!("parsing {origin}"))?;
    if catalog.is_empty() {
        bail!("{origin} contains no DRG codes");
    }
    Ok(catalog)
}

fn catalog_for(ctx: &Context, flag: Option<PathBuf>) -> Result<DrgCatalog> {
    let path = flag.or_else(|| ctx.config.paths.catalog.clone());
    load_catalog(path.as_deref(), "v34")
}

fn mode_kind(mode: Mode) -> ModeKind {
    match mode {
        Mode::Single => ModeKind::Single,
        Mode::TwoLabel => ModeKind::TwoLabel,
    }
}

fn parse_mode(text: &str) -> Result<ModeKind> {
    match text {
        "single" => Ok(ModeKind::Single),
        "two_label" | "two-label" => Ok(ModeKind::TwoLabel),
        other => bail!("unknown mode {other:?}; expected single or two_label"),
    }
}

// ---- commands ----

#[derive(Serialize)]
struct CatalogFile<'a> {
    version_tag: &'a str,
    fingerprint: String,
    summary: CatalogSummary,
    #[serde(flatten)]
    dump: drg_core::catalog::CatalogDump,
}

pub fn build_catalog(ctx: &Context, args: BuildCatalogArgs) -> Result<()> {
    let path = args.catalog.or_else(|| ctx.config.paths.catalog.clone());
    let catalog = load_catalog(path.as_deref(), &args.version_tag)?;
    let summary = catalog.summary();
    ctx.info(format!(
        "{} codes, {} base DRGs; splits: {} three-way, {} CC/MCC-vs-none, {} MCC-vs-rest, {} no-split",
        summary.codes,
        summary.bases,
        summary.splits.three_way,
        summary.splits.two_way_ccmcc_vs_none,
        summary.splits.two_way_mcc_vs_rest,
        summary.splits.no_split
    ));
    write_json(
        &args.out,
        &CatalogFile {
            version_tag: &args.version_tag,
            fingerprint: catalog.fingerprint(),
            summary,
            dump: catalog.dump(),
        },
    )
}

pub fn synth(ctx: &Context, args: SynthArgs) -> Result<()> {
    let catalog = match &args.catalog {
        Some(p) => load_catalog(Some(p), "v34")?,
        None => DrgCatalog::parse(&DESK_CATALOG.render_csv(), "v34")?,
    };
    if let Some(path) = &args.write_catalog {
        write_text(path, &DESK_CATALOG.render_csv())?;
    }
    let spec = NoteGenSpec {
        n_notes: args.n_notes,
        seed: ctx.seed,
        ..Default::default()
    };
    let notes = generate_notes(&catalog, &spec);
    write_lines(&args.out, &notes)?;
    ctx.info(format!(
        "{} notes over {} codes",
        notes.len(),
        catalog.len()
    ));
    Ok(())
}

pub fn harmonize(ctx: &Context, args: HarmonizeArgs) -> Result<()> {
    let paths = &ctx.config.paths;
    let input = require(args.input, &paths.notes, "input")?;
    let out_queue = require(args.out_queue, &paths.queue, "out-queue")?;
    let out_mapping = require(args.out_mapping, &paths.mapping, "out-mapping")?;
    let catalog = catalog_for(ctx, args.catalog)?;
    let rules = match args.rules.or_else(|| paths.rules.clone()) {
        Some(p) => {
            NormalizationRuleSet::with_extra(NormalizationRuleSet::parse_csv(&read_text(&p)?)?)?
        }
        None => NormalizationRuleSet::default(),
    };
    let settings = &ctx.config.harmonize;
    let accept = args
        .accept_threshold
        .or(settings.accept_threshold)
        .unwrap_or(DEFAULT_ACCEPT_THRESHOLD);
    let review = args
        .review_threshold
        .or(settings.review_threshold)
        .unwrap_or(DEFAULT_REVIEW_THRESHOLD);
    let harmonizer = Harmonizer::new(&catalog, rules, accept, review)?;

    let notes: Vec<RawNote> = read_lines(&input)?;
    let (mapping, queue) = build_mapping(
        &harmonizer,
        notes.iter().map(|n| n.drg_description.as_str()),
    );
    write_text(&out_queue, &write_review_queue(&queue))?;
    write_text(&out_mapping, &write_mapping(&mapping))?;
    ctx.info(format!(
        "{} distinct descriptions: {} matched, {} queued for review",
        mapping.len() + queue.len(),
        mapping.len(),
        queue.len()
    ));
    Ok(())
}

pub fn apply_reviews(ctx: &Context, args: ApplyReviewsArgs) -> Result<()> {
    let paths = &ctx.config.paths;
    let queue_path = require(args.queue, &paths.queue, "queue")?;
    let catalog = catalog_for(ctx, args.catalog)?;
    let queue = read_review_queue(&read_text(&queue_path)?)?;
    let decisions = read_decisions(&read_text(&args.decisions)?)?;
    let reviewed = apply_review_decisions(&queue, &decisions, &catalog)?;
    let mut mapping = match args.mapping.or_else(|| paths.mapping.clone()) {
        Some(p) => read_mapping(&read_text(&p)?)?,
        None => BTreeMap::new(),
    };
    let n_reviewed = reviewed.len();
    mapping.extend(reviewed);
    write_text(&args.out, &write_mapping(&mapping))?;
    ctx.info(format!(
        "{n_reviewed} reviewed, {} mapped descriptions in total",
        mapping.len()
    ));
    Ok(())
}

pub fn preprocess(ctx: &Context, args: PreprocessArgs) -> Result<()> {
    let paths = &ctx.config.paths;
    let input = require(args.input, &paths.notes, "input")?;
    let mapping_path = require(args.mapping, &paths.mapping, "mapping")?;
    let out = require(args.out, &paths.cohort, "out")?;
    let settings = &ctx.config.preprocess;
    let config = PreprocessConfig {
        min_class_count: args
            .min_class_count
            .or(settings.min_class_count)
            .unwrap_or(DEFAULT_MIN_CLASS_COUNT),
        test_fraction: args
            .test_fraction
            .or(settings.test_fraction)
            .unwrap_or(DEFAULT_TEST_FRACTION),
        seed: ctx.seed,
    };
    if !(0.0..1.0).contains(&config.test_fraction) {
        bail!(
            "test fraction must be in [0, 1), got {}",
            config.test_fraction
        );
    }
    let notes: Vec<RawNote> = read_lines(&input)?;
    let mapping = read_mapping(&read_text(&mapping_path)?)?;
    let outcome = build_cohort(&notes, &mapping, &config)?;
    write_lines(&out, &outcome.rows)?;
    if let Some(p) = &args.drops {
        write_json(p, &outcome.drops)?;
    }
    if let Some(p) = &args.stats {
        write_json(p, &outcome.stats)?;
    }
    if outcome.rows.is_empty() {
        eprintln!(
            "warning: cohort is empty ({} notes, all dropped)",
            notes.len()
        );
    }
    ctx.info(format!(
        "{} notes -> {} stays ({} train, {} test); dropped {}",
        notes.len(),
        outcome.rows.len(),
        outcome.split.train.len(),
        outcome.split.test.len(),
        outcome.drops.total()
    ));
    Ok(())
}

fn train_config(ctx: &Context, args: &TrainArgs) -> Result<TrainConfig> {
    let s = &ctx.config.train;
    let preset = match (args.preset, s.preset.as_deref()) {
        (Some(p), _) => p,
        (None, None | Some("default")) => Preset::Default,
        (None, Some("reference")) => Preset::Reference,
        (None, Some(other)) => bail!("unknown preset {other:?}; expected default or reference"),
    };
    let mut c = match preset {
        Preset::Default => TrainConfig::default(),
        Preset::Reference => TrainConfig::reference_preset(),
    };
    c.seed = ctx.seed;
    c.learning_rate = args
        .learning_rate
        .or(s.learning_rate)
        .unwrap_or(c.learning_rate);
    c.weight_decay = args
        .weight_decay
        .or(s.weight_decay)
        .unwrap_or(c.weight_decay);
    c.epochs = args.epochs.or(s.epochs).unwrap_or(c.epochs);
    c.batch_size = args.batch_size.or(s.batch_size).unwrap_or(c.batch_size);
    c.lambda_cc = args.lambda_cc.or(s.lambda_cc).unwrap_or(c.lambda_cc);
    c.min_df = args.min_df.or(s.min_df).unwrap_or(c.min_df);

    let rank = args.adapter_rank.or(s.adapter_rank);
    let alpha = args.adapter_alpha.or(s.adapter_alpha);
    let dropout = args.adapter_dropout.or(s.adapter_dropout);
    if rank.is_some() || alpha.is_some() || dropout.is_some() {
        let base = c.adapter.unwrap_or_default();
        c.adapter = Some(AdapterConfig {
            rank: rank.unwrap_or(base.rank),
            alpha: alpha.unwrap_or(base.alpha),
            dropout: dropout.unwrap_or(base.dropout),
        });
    }
    if args.no_adapter {
        c.adapter = None;
    }
    c.validate()?;
    Ok(c)
}

fn read_cohort(path: &Path) -> Result<Vec<CohortRow>> {
    read_lines(path)
}

pub fn train(ctx: &Context, args: TrainArgs) -> Result<()> {
    let paths = &ctx.config.paths;
    let cohort_path = require(args.cohort.clone(), &paths.cohort, "cohort")?;
    let out = require(args.out.clone(), &paths.artifact, "out")?;
    let catalog = catalog_for(ctx, args.catalog.clone())?;
    let kind = match (args.mode, ctx.config.train.mode.as_deref()) {
        (Some(m), _) => mode_kind(m),
        (None, Some(m)) => parse_mode(m)?,
        (None, None) => ModeKind::Single,
    };
    let config = train_config(ctx, &args)?;
    let split = split_from_rows(&read_cohort(&cohort_path)?, ctx.seed);
    let (artifact, log) = fit_model(&split, &catalog, kind, &config)?;
    write_text(&out, &artifact.to_json()?)?;
    if let Some(p) = &args.log {
        write_json(p, &log)?;
    }
    let last = log.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
    ctx.info(format!(
        "trained {kind} model on {} stays: {} features, {} outputs, final epoch loss {last:.4}",
        split.train.len(),
        artifact.vocabulary.len(),
        artifact.head.n_outputs
    ));
    Ok(())
}

pub fn predict(ctx: &Context, args: PredictArgs) -> Result<()> {
    let paths = &ctx.config.paths;
    let artifact_path = require(args.artifact, &paths.artifact, "artifact")?;
    let cohort_path = require(args.cohort, &paths.cohort, "cohort")?;
    let out = require(args.out, &paths.predictions, "out")?;
    let catalog = catalog_for(ctx, args.catalog)?;
    let artifact = ModelArtifact::from_json(&read_text(&artifact_path)?)
        .with_context(|| format!("loading {}", artifact_path.display()))?;
    if let Some(mode) = args.mode {
        let expected = mode_kind(mode);
        if artifact.kind() != expected {
            bail!(
                "artifact was trained in {} mode, --mode asks for {expected}",
                artifact.kind()
            );
        }
    }
    let stays: Vec<(String, String)> = read_cohort(&cohort_path)?
        .into_iter()
        .filter(|r| match args.split {
            SplitChoice::All => true,
            SplitChoice::Test => r.split == SplitSide::Test,
            SplitChoice::Train => r.split == SplitSide::Train,
        })
        .map(|r| (r.stay_id, r.course_text))
        .collect();
    let records = predict_records(&artifact, &stays, &catalog)?;
    write_lines(&out, &records)?;
    ctx.info(format!(
        "{} predictions ({} mode)",
        records.len(),
        artifact.kind()
    ));
    Ok(())
}

/// Settings recorded alongside the metrics so a report names its run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub bootstrap_iterations: usize,
    pub subsets: Vec<usize>,
    pub catalog_version: String,
    pub catalog_fingerprint: String,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: EvaluationReport,
    pub run: RunInfo,
}

pub fn evaluate(ctx: &Context, args: EvaluateArgs) -> Result<()> {
    let paths = &ctx.config.paths;
    let preds_path = require(args.predictions, &paths.predictions, "predictions")?;
    let cohort_path = require(args.cohort, &paths.cohort, "cohort")?;
    let out = require(args.out, &paths.report, "out")?;
    let per_drg_path = args.per_drg.or_else(|| paths.per_drg.clone());
    let catalog = catalog_for(ctx, args.catalog)?;
    let settings = &ctx.config.evaluate;
    let subsets = args
        .subsets
        .or_else(|| settings.subsets.clone())
        .unwrap_or_else(|| DEFAULT_SUBSETS.to_vec());
    if subsets.contains(&0) {
        bail!("subset sizes must be positive");
    }
    let opts = EvalOptions {
        bootstrap_iterations: args
            .bootstrap
            .or(settings.bootstrap_iterations)
            .unwrap_or(DEFAULT_BOOTSTRAP_ITERATIONS),
        seed: ctx.seed,
    };

    let rows = read_cohort(&cohort_path)?;
    let split = split_from_rows(&rows, ctx.seed);
    let truths: BTreeMap<String, u32> = split
        .test
        .iter()
        .map(|r| (r.stay_id.clone(), r.drg_code))
        .collect();
    let records: Vec<PredictionRecord> = read_lines(&preds_path)?;
    let (report, per_drg) = evaluate_records(
        &records,
        &truths,
        &catalog,
        &train_counts(&split),
        &subsets,
        &opts,
    )?;
    let file = ReportFile {
        report,
        run: RunInfo {
            seed: ctx.seed,
            bootstrap_iterations: opts.bootstrap_iterations,
            subsets,
            catalog_version: catalog.version_tag().to_string(),
            catalog_fingerprint: catalog.fingerprint(),
            config: ctx.config.clone(),
        },
    };
    write_json(&out, &file)?;
    if let Some(p) = &per_drg_path {
        let mut buf = Vec::new();
        write_per_drg_csv(&per_drg.rows, &mut buf)?;
        write_text(p, std::str::from_utf8(&buf)?)?;
    }
    let o = &file.report.overall;
    ctx.info(format!(
        "n={} acc@1 {:.4} acc@5 {:.4} acc@10 {:.4} macro-F1 {:.4}",
        o.n, o.acc1, o.acc5, o.acc10, o.macro_f1
    ));
    Ok(())
}

fn cell(report: &MetricsReport, value: Option<f64>, key: &str) -> String {
    match (value, report.bootstrap.get(key)) {
        (Some(v), Some(b)) => format!("{v:.3} ± {:.3}", b.sd),
        (Some(v), None) => format!("{v:.3}"),
        (None, _) => "n/a".into(),
    }
}

fn metrics_row(label: &str, r: &MetricsReport) -> String {
    format!(
        "| {label} | {} ({:.1}%) | {} | {} | {} | {} | {} | {} | {} |\n",
        r.subset.n_cases,
        r.subset.pct_cases,
        cell(r, Some(r.acc1), "acc1"),
        cell(r, Some(r.acc5), "acc5"),
        cell(r, Some(r.acc10), "acc10"),
        cell(r, Some(r.macro_f1), "macro_f1"),
        cell(r, Some(r.micro_f1), "micro_f1"),
        cell(r, r.macro_auc, "macro_auc"),
        cell(r, r.micro_auc, "micro_auc"),
    )
}

pub fn render_markdown(file: &ReportFile) -> String {
    let r = &file.report;
    let mut md = String::from("## DRG prediction\n\n");
    md.push_str("| Subset | Cases | ACC@1 | ACC@5 | ACC@10 | Macro-F1 | Micro-F1 | Macro-AUC | Micro-AUC |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    md.push_str(&metrics_row("All DRGs", &r.overall));
    for s in &r.subsets {
        let label = match s.subset.top_n {
            Some(n) => format!("Top {n} DRGs"),
            None => s.subset.name.clone(),
        };
        md.push_str(&metrics_row(&label, s));
    }
    let _ = writeln!(
        md,
        "\nMacro-F1 over all {} model classes: {:.3}.",
        r.overall.metadata.n_classes, r.overall.metadata.macro_f1_all_classes
    );

    if let Some(t) = &r.two_label {
        md.push_str("\n## Two-label targets\n\n");
        md.push_str(
            "| Target | ACC@1 | Macro-F1 | Macro-AUC | Micro-AUC |\n|---|---|---|---|---|\n",
        );
        for (label, m) in [("Base DRG", &t.base), ("CC/MCC", &t.cc)] {
            let _ = writeln!(
                md,
                "| {label} | {} | {} | {} | {} |",
                cell(m, Some(m.acc1), "acc1"),
                cell(m, Some(m.macro_f1), "macro_f1"),
                cell(m, m.macro_auc, "macro_auc"),
                cell(m, m.micro_auc, "micro_auc"),
            );
        }
        let _ = writeln!(md, "| DRG (composed) | {:.3} | | | |", t.composed_acc1);
    }

    if !r.per_drg_groups.is_empty() {
        md.push_str("\n## Training cases by ACC@5 range\n\n");
        md.push_str("| ACC@5 range | DRGs | Median training cases | IQR |\n|---|---|---|---|\n");
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.1}"));
        for g in &r.per_drg_groups {
            let iqr = match (g.q1_train, g.q3_train) {
                (Some(q1), Some(q3)) => format!("{q1:.1}-{q3:.1}"),
                _ => "n/a".to_string(),
            };
            let _ = writeln!(
                md,
                "| {:.1}-{:.1} | {} | {} | {iqr} |",
                g.lower,
                g.upper,
                g.n_classes,
                fmt(g.median_train),
            );
        }
    }
    let _ = writeln!(
        md,
        "\nSeed {}, {} bootstrap iterations, catalog {} ({}).",
        file.run.seed,
        file.run.bootstrap_iterations,
        file.run.catalog_version,
        &file.run.catalog_fingerprint[..12.min(file.run.catalog_fingerprint.len())]
    );
    md
}

pub fn report(ctx: &Context, args: ReportArgs) -> Result<()> {
    let path = require(args.report, &ctx.config.paths.report, "report")?;
    let file: ReportFile = serde_json::from_str(&read_text(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    write_text(&args.out, &render_markdown(&file))?;
    ctx.info(format!("wrote {}", args.out.display()));
    Ok(())
}
