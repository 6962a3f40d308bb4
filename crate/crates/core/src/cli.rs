//! The `crowdwarn` command line.
//!
//! Every subcommand computes all of its outputs in memory and writes them to
//! `--out` only once everything succeeded, so a failing run leaves no partial
//! files. Errors print one `error_code: message` line to stderr.

use std::ffi::OsString;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::detector::{self, MatchConfig};
use crate::error::{Error, Result};
use crate::features::{self, CalendarConfig, FeatureTable};
use crate::gbdt::{self, GbdtModel, Hyperparams};
use crate::lag;
use crate::series::{self, HourTimestamp, Ingested, PoiSeries};
use crate::sim::{self, SimConfig};
use crate::warning::{self, DEFAULT_QUERY_ALPHA, MIN_FIT_DAYS};

pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "crowdwarn",
    version,
    about = "Crowd-anomaly early warning from map-query and positioning counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic series CSV and its event file.
    Simulate(SimulateArgs),
    /// Fit query and positioning warning lines per POI.
    FitWarning(FitArgs),
    /// Emit query-line alerts and score them at one alpha.
    Detect(DetectArgs),
    /// Precision/recall/F1 over a range of alphas.
    Evaluate(EvaluateArgs),
    /// Daily peak values and hours.
    Peaks(SeriesArgs),
    /// Histogram of daily peak-hour lags.
    LagHist(SeriesArgs),
    /// Mutual information between lagged query and positioning.
    Mi(MiArgs),
    /// Export the 47-feature matrix.
    Features(FeaturesArgs),
    /// Train a next-hour positioning model.
    Train(TrainArgs),
    /// Predict positioning with a trained model.
    Predict(PredictArgs),
    /// Mean absolute error of one or more models.
    EvalMae(PredictArgs),
    /// Split-gain feature importance of a model.
    Importance(ImportanceArgs),
    /// Run the whole pipeline on simulated data.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SeriesArgs {
    /// Input CSV: poi_id,timestamp,query_count,positioning_count.
    #[arg(long)]
    series: PathBuf,
    /// Restrict to one POI.
    #[arg(long)]
    poi: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// SimConfig JSON; the built-in fixture when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: SeriesArgs,
    #[arg(long, default_value_t = DEFAULT_QUERY_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = MIN_FIT_DAYS)]
    min_days: usize,
}

#[derive(Args, Debug, Clone, Copy)]
struct MatchArgs {
    /// Longest lead (hours) for an alert to count.
    #[arg(long = "T", default_value_t = 3)]
    horizon: i64,
    /// Shortest lead (hours) for an alert to count.
    #[arg(long, default_value_t = 1)]
    min_lead: i64,
    /// Merge consecutive exceedance hours into single events.
    #[arg(long)]
    cluster: bool,
    #[arg(long, default_value_t = MIN_FIT_DAYS)]
    min_days: usize,
}

impl MatchArgs {
    fn config(&self) -> Result<MatchConfig> {
        let cfg = MatchConfig {
            horizon: self.horizon,
            min_lead: self.min_lead,
            cluster: self.cluster,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    input: SeriesArgs,
    #[arg(long, default_value_t = DEFAULT_QUERY_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    input: SeriesArgs,
    /// `start:stop:step` (inclusive) or a single value.
    #[arg(long, default_value = "0.5:4.0:0.25")]
    alphas: String,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Args, Debug)]
struct MiArgs {
    #[command(flatten)]
    input: SeriesArgs,
    /// Inclusive lag range `lo:hi` in hours.
    #[arg(long, default_value = "-6:3", allow_hyphen_values = true)]
    lags: String,
    #[arg(long, default_value_t = lag::DEFAULT_MI_BINS)]
    bins: usize,
}

#[derive(Args, Debug)]
struct CalendarArgs {
    /// Holiday file, one YYYY-MM-DD per line.
    #[arg(long)]
    holidays: Option<PathBuf>,
}

impl CalendarArgs {
    fn load(&self) -> Result<CalendarConfig> {
        Ok(match &self.holidays {
            Some(path) => CalendarConfig::with_holidays(features::load_holidays(path)?),
            None => CalendarConfig::default(),
        })
    }
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[command(flatten)]
    input: SeriesArgs,
    #[command(flatten)]
    calendar: CalendarArgs,
    /// First prediction hour (YYYY-MM-DDTHH:00).
    #[arg(long, value_parser = parse_timestamp)]
    from: Option<HourTimestamp>,
    /// Last prediction hour, inclusive.
    #[arg(long, value_parser = parse_timestamp)]
    to: Option<HourTimestamp>,
}

#[derive(Args, Debug, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 200)]
    n_trees: usize,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    max_thresholds: usize,
    #[arg(long, default_value_t = 1.0)]
    subsample: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl HyperArgs {
    fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            learning_rate: self.learning_rate,
            max_thresholds_per_feature: self.max_thresholds,
            subsample: self.subsample,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    input: SeriesArgs,
    #[command(flatten)]
    calendar: CalendarArgs,
    /// Training uses the 60 days before this hour.
    #[arg(long, value_parser = parse_timestamp)]
    event: HourTimestamp,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Drop MQ1, MQ2 and MQY.
    #[arg(long)]
    no_query_features: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model JSON file(s).
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[command(flatten)]
    input: SeriesArgs,
    #[command(flatten)]
    calendar: CalendarArgs,
    #[arg(long, value_parser = parse_timestamp)]
    from: Option<HourTimestamp>,
    #[arg(long, value_parser = parse_timestamp)]
    to: Option<HourTimestamp>,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// SimConfig JSON; the built-in fixture when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_timestamp(s: &str) -> std::result::Result<HourTimestamp, String> {
    s.parse()
}

/// `start:stop:step` inclusive of `stop` within 1e-9, or a single value.
pub fn parse_alpha_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || {
        Error::Param(format!(
            "invalid alpha range {spec:?}, expected start:stop:step"
        ))
    };
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [single] => Ok(vec![*single]),
        [start, stop, step] => {
            if !(*step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n)
                .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(bad()),
    }
}

/// `lo:hi` inclusive.
pub fn parse_lag_range(spec: &str) -> Result<RangeInclusive<i32>> {
    let bad = || Error::Param(format!("invalid lag range {spec:?}, expected lo:hi"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    let lo: i32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: i32 = hi.trim().parse().map_err(|_| bad())?;
    if hi < lo {
        return Err(bad());
    }
    Ok(lo..=hi)
}

/// Files produced by a subcommand, written together at the end.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn add_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    fn write(self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Keeps POI ids usable as file-name components.
fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn load_series(args: &SeriesArgs) -> Result<Ingested> {
    let file = fs::File::open(&args.series).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", args.series.display()),
        ))
    })?;
    let rows = series::read_rows(std::io::BufReader::new(file))?;
    let mut ingested = series::ingest_series(&rows)?;
    if let Some(poi) = &args.poi {
        ingested.series.retain(|s| s.poi_id() == poi);
        ingested.gaps.retain(|g| &g.poi_id == poi);
        if ingested.series.is_empty() {
            return Err(Error::Config(format!(
                "poi {poi:?} not found in {}",
                args.series.display()
            )));
        }
    }
    if ingested.series.is_empty() {
        return Err(Error::Empty("input has no rows"));
    }
    Ok(ingested)
}

fn load_model(path: &Path) -> Result<GbdtModel> {
    let file = fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    GbdtModel::from_reader(std::io::BufReader::new(file))
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    EXIT_USAGE
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg
                        .lines()
                        .next()
                        .unwrap_or("")
                        .trim_start_matches("error: ");
                    eprintln!("usage_error: {first}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let (code, status) = e.code();
            eprintln!("{code}: {}", e.to_string().replace('\n', " "));
            status
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::FitWarning(a) => cmd_fit_warning(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Peaks(a) => cmd_peaks(a),
        Command::LagHist(a) => cmd_lag_hist(a),
        Command::Mi(a) => cmd_mi(a),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::EvalMae(a) => cmd_eval_mae(a),
        Command::Importance(a) => cmd_importance(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    }
}

fn load_sim_config(path: Option<&Path>, seed: Option<u64>) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{}: {e}", p.display()),
                ))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate_outputs(cfg: &SimConfig, out: &mut Outputs) -> Result<sim::SimOutput> {
    let sim_out = sim::generate(cfg)?;
    let mut buf = Vec::new();
    series::write_rows(&mut buf, &sim_out.rows)?;
    out.add("series.csv", buf);
    let mut buf = Vec::new();
    sim_out.write_events(&mut buf)?;
    out.add("events.csv", buf);
    out.add_json("sim_config.json", cfg)?;
    Ok(sim_out)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load_sim_config(a.config.as_deref(), a.seed)?;
    let mut out = Outputs::default();
    simulate_outputs(&cfg, &mut out)?;
    out.write(&a.out.out)
}

fn warning_lines(
    ingested: &Ingested,
    alpha: f64,
    min_days: usize,
) -> Result<Vec<warning::WarningLine>> {
    let mut lines = Vec::new();
    for poi in &ingested.series {
        let fits = detector::fit_poi_lines(poi, min_days)?;
        lines.push(warning::warning_line(&fits.query_fit, alpha)?);
        lines.push(fits.line_q);
    }
    Ok(lines)
}

fn cmd_fit_warning(a: FitArgs) -> Result<()> {
    let ingested = load_series(&a.input)?;
    let mut out = Outputs::default();
    out.add_json(
        "warning_lines.json",
        &warning_lines(&ingested, a.alpha, a.min_days)?,
    )?;
    out.add_json("gaps.json", &ingested.gaps)?;
    out.write(&a.input.out.out)
}

fn alerts_jsonl(ingested: &Ingested, alpha: f64, min_days: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for poi in &ingested.series {
        let fits = detector::fit_poi_lines(poi, min_days)?;
        let line = warning::warning_line(&fits.query_fit, alpha)?;
        for alert in detector::raise_alerts(&poi.query, &line)? {
            serde_json::to_writer(&mut buf, &alert)?;
            buf.push(b'\n');
        }
    }
    Ok(buf)
}

fn eval_csv(reports: &[detector::EvalReport]) -> Result<Vec<u8>> {
    csv_bytes(
        &["alpha", "poi_id", "precision", "recall", "f1"],
        reports.iter().map(|r| {
            vec![
                r.alpha.to_string(),
                r.poi_id.clone(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
            ]
        }),
    )
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let cfg = a.matching.config()?;
    let ingested = load_series(&a.input)?;
    let mut out = Outputs::default();
    out.add(
        "alerts.jsonl",
        alerts_jsonl(&ingested, a.alpha, a.matching.min_days)?,
    );
    let reports = detector::sweep_pois(&ingested.series, &[a.alpha], &cfg, a.matching.min_days)?;
    out.add("eval.csv", eval_csv(&reports)?);
    out.write(&a.input.out.out)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = a.matching.config()?;
    let alphas = parse_alpha_range(&a.alphas)?;
    let ingested = load_series(&a.input)?;
    let reports = detector::sweep_pois(&ingested.series, &alphas, &cfg, a.matching.min_days)?;
    let mut out = Outputs::default();
    out.add("eval.csv", eval_csv(&reports)?);
    out.write(&a.input.out.out)
}

fn peaks_csv(ingested: &Ingested) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for poi in &ingested.series {
        for s in [&poi.query, &poi.positioning] {
            for e in series::daily_peaks(s)?.entries {
                rows.push(vec![
                    poi.poi_id().to_string(),
                    s.signal().to_string(),
                    e.date.to_string(),
                    e.peak.to_string(),
                    e.peak_hour.to_string(),
                ]);
            }
        }
    }
    csv_bytes(&["poi_id", "signal", "date", "peak", "peak_hour"], rows)
}

fn cmd_peaks(a: SeriesArgs) -> Result<()> {
    let ingested = load_series(&a)?;
    let mut out = Outputs::default();
    out.add("peaks.csv", peaks_csv(&ingested)?);
    out.add_json("gaps.json", &ingested.gaps)?;
    out.write(&a.out.out)
}

fn lag_hist_outputs(ingested: &Ingested, out: &mut Outputs) -> Result<Vec<lag::PeakLagHistogram>> {
    let mut hists = Vec::new();
    for poi in &ingested.series {
        let h = lag::peak_lag_histogram(
            &series::daily_peaks(&poi.query)?,
            &series::daily_peaks(&poi.positioning)?,
        )?;
        let rows = h
            .bins
            .iter()
            .map(|(lag, count)| vec![lag.to_string(), count.to_string()]);
        out.add(
            format!("lag_hist_{}.csv", file_safe(poi.poi_id())),
            csv_bytes(&["lag", "count"], rows)?,
        );
        hists.push(h);
    }
    Ok(hists)
}

fn cmd_lag_hist(a: SeriesArgs) -> Result<()> {
    let ingested = load_series(&a)?;
    let mut out = Outputs::default();
    lag_hist_outputs(&ingested, &mut out)?;
    out.write(&a.out.out)
}

fn mi_outputs(
    ingested: &Ingested,
    lags: RangeInclusive<i32>,
    bins: usize,
    out: &mut Outputs,
) -> Result<Vec<lag::MiCurve>> {
    let mut curves = Vec::new();
    for poi in &ingested.series {
        let curve = lag::mutual_information(&poi.query, &poi.positioning, lags.clone(), bins)?;
        let rows = curve.entries.iter().map(|e| {
            vec![
                e.lag.to_string(),
                e.mi_bits.to_string(),
                e.n_pairs.to_string(),
            ]
        });
        out.add(
            format!("mi_{}.csv", file_safe(poi.poi_id())),
            csv_bytes(&["lag", "mi_bits", "n_pairs"], rows)?,
        );
        curves.push(curve);
    }
    Ok(curves)
}

fn cmd_mi(a: MiArgs) -> Result<()> {
    let lags = parse_lag_range(&a.lags)?;
    let ingested = load_series(&a.input)?;
    let mut out = Outputs::default();
    mi_outputs(&ingested, lags, a.bins, &mut out)?;
    out.write(&a.input.out.out)
}

fn feature_table(
    poi: &PoiSeries,
    cal: &CalendarConfig,
    from: Option<HourTimestamp>,
    to: Option<HourTimestamp>,
) -> Result<FeatureTable> {
    let first = from.unwrap_or_else(|| {
        poi.query.start().max(poi.positioning.start()) + features::MAX_HISTORY_HOURS
    });
    let last = to.unwrap_or_else(|| poi.positioning.end());
    Ok(features::build_rows(&poi.query, &poi.positioning, cal, first, last)?.table)
}

fn cmd_features(a: FeaturesArgs) -> Result<()> {
    let cal = a.calendar.load()?;
    let ingested = load_series(&a.input)?;
    let mut all: Option<FeatureTable> = None;
    for poi in &ingested.series {
        let table = feature_table(poi, &cal, a.from, a.to)?;
        match &mut all {
            Some(acc) => acc.rows.extend(table.rows),
            None => all = Some(table),
        }
    }
    let mut buf = Vec::new();
    all.expect("at least one POI").write_csv(&mut buf)?;
    let mut out = Outputs::default();
    out.add("features.csv", buf);
    out.write(&a.input.out.out)
}

fn train_model(
    poi: &PoiSeries,
    cal: &CalendarConfig,
    event: HourTimestamp,
    hp: &Hyperparams,
    seed: u64,
    ablate: bool,
) -> Result<GbdtModel> {
    let first = poi.query.start().max(poi.positioning.start()) + features::MAX_HISTORY_HOURS;
    let last = event - 1;
    if last < first {
        return Err(Error::InsufficientCoverage {
            available_hours: (event - first).max(0),
            required_hours: features::TRAIN_WINDOW_DAYS * 24,
        });
    }
    let table = features::build_rows(&poi.query, &poi.positioning, cal, first, last)?.table;
    let mut window = features::train_window(&table, event)?;
    if ablate {
        window = features::ablate_query_features(&window);
    }
    gbdt::fit(&window, hp, seed)
}

fn model_file_name(poi_id: &str, ablated: bool) -> String {
    if ablated {
        format!("model_{}_no_query.json", file_safe(poi_id))
    } else {
        format!("model_{}.json", file_safe(poi_id))
    }
}

fn model_bytes(model: &GbdtModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    model.to_writer(&mut buf)?;
    buf.push(b'\n');
    Ok(buf)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let hp = a.hyper.hyperparams();
    hp.validate()?;
    let cal = a.calendar.load()?;
    let ingested = load_series(&a.input)?;
    let mut out = Outputs::default();
    for poi in &ingested.series {
        let model = train_model(poi, &cal, a.event, &hp, a.hyper.seed, a.no_query_features)?;
        out.add(
            model_file_name(poi.poi_id(), a.no_query_features),
            model_bytes(&model)?,
        );
    }
    out.write(&a.input.out.out)
}

/// Features shaped for `model`: the ablated column set when the model lacks
/// the query features.
fn table_for_model(model: &GbdtModel, table: &FeatureTable) -> Result<FeatureTable> {
    if model.feature_names == table.names {
        return Ok(table.clone());
    }
    let ablated = features::ablate_query_features(table);
    if model.feature_names == ablated.names {
        Ok(ablated)
    } else {
        Err(Error::Shape {
            expected: model.n_features(),
            actual: table.names.len(),
        })
    }
}

fn predictions_csv(model: &GbdtModel, table: &FeatureTable) -> Result<Vec<u8>> {
    let mut rows = Vec::with_capacity(table.len());
    for r in &table.rows {
        let raw = model.predict_raw(&r.x)?;
        rows.push(vec![
            r.poi_id.clone(),
            r.at.to_string(),
            raw.max(0.0).to_string(),
            raw.to_string(),
            r.y.map(|y| y.to_string()).unwrap_or_default(),
        ]);
    }
    csv_bytes(&["poi_id", "timestamp", "predicted", "raw", "target"], rows)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let cal = a.calendar.load()?;
    let ingested = load_series(&a.input)?;
    let mut out = Outputs::default();
    for path in &a.model {
        let model = load_model(path)?;
        for poi in &ingested.series {
            let table = table_for_model(&model, &feature_table(poi, &cal, a.from, a.to)?)?;
            out.add(
                format!(
                    "predictions_{}_{}.csv",
                    file_safe(&model_label(path)),
                    file_safe(poi.poi_id())
                ),
                predictions_csv(&model, &table)?,
            );
        }
    }
    out.write(&a.input.out.out)
}

fn mae_row(
    label: &str,
    poi_id: &str,
    model: &GbdtModel,
    table: &FeatureTable,
) -> Result<Vec<String>> {
    let table = table_for_model(model, table)?;
    let mae = model.evaluate_mae(&table)?;
    Ok(vec![
        label.to_string(),
        poi_id.to_string(),
        table.len().to_string(),
        mae.to_string(),
    ])
}

const MAE_HEADER: [&str; 4] = ["model", "poi_id", "n_rows", "mae"];

fn cmd_eval_mae(a: PredictArgs) -> Result<()> {
    let cal = a.calendar.load()?;
    let ingested = load_series(&a.input)?;
    let mut rows = Vec::new();
    for path in &a.model {
        let model = load_model(path)?;
        for poi in &ingested.series {
            let mut table = feature_table(poi, &cal, a.from, a.to)?;
            table.rows.retain(|r| r.y.is_some());
            rows.push(mae_row(&model_label(path), poi.poi_id(), &model, &table)?);
        }
    }
    let mut out = Outputs::default();
    out.add("mae.csv", csv_bytes(&MAE_HEADER, rows)?);
    out.write(&a.input.out.out)
}

fn importance_csv(model: &GbdtModel) -> Result<Vec<u8>> {
    let report = model.feature_importance();
    csv_bytes(
        &["feature", "score"],
        report
            .entries
            .iter()
            .map(|e| vec![e.feature.clone(), e.score.to_string()]),
    )
}

fn cmd_importance(a: ImportanceArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut out = Outputs::default();
    out.add("importance.csv", importance_csv(&model)?);
    out.write(&a.out.out)
}

#[derive(Serialize)]
struct PoiSummary {
    poi_id: String,
    alpha: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    peak_lag_mode: Option<i32>,
    mi_argmax_lag: Option<i32>,
    split_time: Option<HourTimestamp>,
    mae_full: Option<f64>,
    mae_without_query: Option<f64>,
    top_features: Vec<String>,
}

fn cmd_reproduce(a: ReproduceArgs) -> Result<()> {
    let cfg = load_sim_config(a.config.as_deref(), Some(a.seed))?;
    let mut out = Outputs::default();
    let sim_out = simulate_outputs(&cfg, &mut out)?;
    let ingested = series::ingest_series(&sim_out.rows)?;
    out.add_json("gaps.json", &ingested.gaps)?;

    let alpha = DEFAULT_QUERY_ALPHA;
    let match_cfg = MatchConfig::default();
    out.add("peaks.csv", peaks_csv(&ingested)?);
    out.add_json(
        "warning_lines.json",
        &warning_lines(&ingested, alpha, MIN_FIT_DAYS)?,
    )?;
    out.add(
        "alerts.jsonl",
        alerts_jsonl(&ingested, alpha, MIN_FIT_DAYS)?,
    );
    let sweep = detector::sweep_pois(
        &ingested.series,
        &parse_alpha_range("0.5:4.0:0.25")?,
        &match_cfg,
        MIN_FIT_DAYS,
    )?;
    out.add("eval.csv", eval_csv(&sweep)?);
    let hists = lag_hist_outputs(&ingested, &mut out)?;
    let curves = mi_outputs(&ingested, lag::DEFAULT_LAGS, lag::DEFAULT_MI_BINS, &mut out)?;

    let cal = CalendarConfig::default();
    let hp = Hyperparams::default();
    let mut summaries = Vec::new();
    let mut mae_rows = Vec::new();
    for (i, poi) in ingested.series.iter().enumerate() {
        let id = poi.poi_id();
        let q = series::normalize_by_std(&poi.query)?;
        let p = series::normalize_by_std(&poi.positioning)?;
        let rows = poi
            .query
            .iter()
            .zip(q.iter().zip(&p))
            .map(|((ts, _), (qn, pn))| vec![ts.to_string(), qn.to_string(), pn.to_string()]);
        out.add(
            format!("normalized_{}.csv", file_safe(id)),
            csv_bytes(&["timestamp", "query", "positioning"], rows)?,
        );

        let lines = detector::fit_poi_lines(poi, MIN_FIT_DAYS)?;
        let report = detector::alpha_sweep(
            &poi.query,
            &poi.positioning,
            &lines.query_fit,
            &lines.line_q,
            &[alpha],
            &match_cfg,
        )?
        .remove(0);

        let poi_events: Vec<_> = sim_out
            .events
            .iter()
            .filter(|e| e.poi_id == id)
            .cloned()
            .collect();
        let split = sim::evaluation_split(&poi_events, poi.positioning.start());
        let (mut mae_full, mut mae_without_query, mut top_features) = (None, None, Vec::new());
        if let Some(split) = split {
            let full = train_model(poi, &cal, split, &hp, a.seed, false)?;
            let ablated = train_model(poi, &cal, split, &hp, a.seed, true)?;
            let eval_table = feature_table(poi, &cal, Some(split), None)?;
            let full_row = mae_row("full", id, &full, &eval_table)?;
            let ablated_row = mae_row("no_query", id, &ablated, &eval_table)?;
            mae_full = full_row[3].parse().ok();
            mae_without_query = ablated_row[3].parse().ok();
            mae_rows.push(full_row);
            mae_rows.push(ablated_row);
            top_features = full
                .feature_importance()
                .top(10)
                .map(String::from)
                .collect();
            out.add(
                format!("importance_{}.csv", file_safe(id)),
                importance_csv(&full)?,
            );
            out.add(
                format!("predictions_{}.csv", file_safe(id)),
                predictions_csv(&full, &eval_table)?,
            );
            out.add(model_file_name(id, false), model_bytes(&full)?);
            out.add(model_file_name(id, true), model_bytes(&ablated)?);
        }
        summaries.push(PoiSummary {
            poi_id: id.to_string(),
            alpha,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            peak_lag_mode: hists[i].mode(),
            mi_argmax_lag: curves[i].argmax(),
            split_time: split,
            mae_full,
            mae_without_query,
            top_features,
        });
    }
    out.add("mae.csv", csv_bytes(&MAE_HEADER, mae_rows)?);
    out.add_json("summary.json", &summaries)?;
    out.write(&a.out.out)
}
