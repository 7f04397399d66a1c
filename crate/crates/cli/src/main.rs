mod table;

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use chrono::{NaiveDate, SecondsFormat};
use clap::{Args, Parser, Subcommand};
use eoc_api::params::{kpi_query, kpi_type, Params};
use eoc_api::{canonical_body, ApiError, AppState};
use eoc_core::config::{ConfigError, PlatformConfig};
use eoc_core::datagen::{generate, GenError, GenSpec};
use eoc_core::extract::{load, IngestReport, LoadMode};
use eoc_core::kpi::{self, ForecastResult, KpiSeries};
use eoc_core::store::{Mode, Repository, StoreError};

#[derive(Parser)]
#[command(name = "eoc", version, about = "Episode-of-care analytics platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Platform config file.
    #[arg(long, env = "EOC_CONFIG")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hospital dataset with ground truth and a config.
    Generate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        patients: u32,
        #[arg(long, default_value_t = 90)]
        days: u32,
        /// First day of the generated window (YYYY-MM-DD).
        #[arg(long)]
        start: Option<NaiveDate>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load new source records and relink the affected patients.
    Ingest {
        #[command(flatten)]
        config: ConfigArg,
        /// Keep polling the sources every N seconds.
        #[arg(long, value_name = "N")]
        watch: Option<u64>,
        /// Stop watching after this many runs.
        #[arg(long, requires = "watch")]
        max_runs: Option<u64>,
        /// Reload every source from scratch and relink all patients.
        #[arg(long)]
        rebuild: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP API.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<IpAddr>,
    },
    /// Compute a KPI series.
    Kpi {
        kpi: String,
        #[command(flatten)]
        config: ConfigArg,
        /// Window start, RFC-3339.
        #[arg(long)]
        from: String,
        /// Window end (exclusive), RFC-3339.
        #[arg(long)]
        to: String,
        #[arg(long, default_value = "MONTH")]
        bucket: String,
        /// Comma-separated subset of gender, age_band, department.
        #[arg(long)]
        group_by: Option<String>,
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        cohort: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Project a KPI forward with a linear fit of its monthly history.
    Forecast {
        kpi: String,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        horizon: String,
        #[arg(long, default_value = "1")]
        scenario: String,
        /// History start; defaults to the month of the earliest event.
        #[arg(long)]
        from: Option<String>,
        /// History end; defaults to the end of the month of the latest event.
        #[arg(long)]
        to: Option<String>,
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        cohort: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

/// Exit 1 for validation errors, 2 for I/O errors.
enum Failure {
    Invalid(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidQuery(_) | StoreError::UnknownCohort(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        let mut msg = e.message;
        if let Some(off) = e.offset {
            msg.push_str(&format!(" (at byte {off})"));
        }
        if e.status < 500 {
            Failure::Invalid(msg)
        } else {
            Failure::Io(msg)
        }
    }
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Invalid(msg) | Failure::Io(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn init_logging() {
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
}

fn open(config: &Path, mode: Mode) -> Result<(PlatformConfig, Repository), Failure> {
    let cfg = PlatformConfig::load(config)?;
    let repo = Repository::open(&cfg.repository, mode)?;
    Ok((cfg, repo))
}

fn pairs(items: &[(&str, Option<&str>)]) -> Params {
    Params(
        items
            .iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v.to_string())))
            .collect(),
    )
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Generate { seed, patients, days, start, out } => {
            let mut spec = GenSpec {
                seed,
                n_patients: patients,
                days,
                ..GenSpec::default()
            };
            if let Some(s) = start {
                spec.start_date = s;
            }
            let m = generate(&spec, &out)?;
            println!("{}", canonical_body(&m));
            Ok(())
        }
        Command::Ingest { config, watch, max_runs, rebuild, json } => {
            init_logging();
            let (cfg, repo) = open(&config.config, Mode::ReadWrite)?;
            let sources = cfg.resolved_sources()?;
            let mut mode = if rebuild { LoadMode::Rebuild } else { LoadMode::Increment };
            let mut runs = 0u64;
            loop {
                let report = load(&repo, &sources, &cfg.linkage, mode);
                print_report(&report, json);
                runs += 1;
                let Some(secs) = watch else {
                    return if report.ok() {
                        Ok(())
                    } else {
                        Err(Failure::Io("ingest finished with errors".into()))
                    };
                };
                if max_runs.is_some_and(|m| runs >= m) {
                    return Ok(());
                }
                mode = LoadMode::Increment;
                std::thread::sleep(Duration::from_secs(secs));
            }
        }
        Command::Serve { config, port, bind } => {
            init_logging();
            let (cfg, repo) = open(&config.config, Mode::ReadWrite)?;
            let ip: IpAddr = match bind {
                Some(ip) => ip,
                None => cfg
                    .server
                    .bind
                    .parse()
                    .map_err(|e| Failure::Invalid(format!("server.bind: {e}")))?,
            };
            let addr = SocketAddr::new(ip, port.unwrap_or(cfg.server.port));
            let state = AppState::new(repo, cfg)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, eoc_api::router(state)).await
            })
            .map_err(|e| Failure::Io(e.to_string()))
        }
        Command::Kpi { kpi, config, from, to, bucket, group_by, filter, cohort, json } => {
            let kpi = kpi_type(&kpi)?;
            let p = pairs(&[
                ("from", Some(&from)),
                ("to", Some(&to)),
                ("bucket", Some(&bucket)),
                ("group_by", group_by.as_deref()),
                ("filter", filter.as_deref()),
                ("cohort", cohort.as_deref()),
            ]);
            let q = kpi_query(kpi, &p, None)?;
            let (cfg, repo) = open(&config.config, Mode::ReadOnly)?;
            let series = kpi::compute_kpi(&repo.snapshot(), &repo.cohorts(), &cfg.kpi_context(), &q)
                .map_err(ApiError::from)?;
            if json {
                println!("{}", canonical_body(&series));
            } else {
                print!("{}", series_table(&series));
            }
            Ok(())
        }
        Command::Forecast { kpi, config, horizon, scenario, from, to, filter, cohort, json } => {
            let kpi = kpi_type(&kpi)?;
            let p = pairs(&[
                ("from", from.as_deref()),
                ("to", to.as_deref()),
                ("horizon", Some(&horizon)),
                ("scenario", Some(&scenario)),
                ("filter", filter.as_deref()),
                ("cohort", cohort.as_deref()),
            ]);
            let horizon: u32 = p.required("horizon")?;
            let scenario: f64 = p.required("scenario")?;
            let (cfg, repo) = open(&config.config, Mode::ReadOnly)?;
            let snap = repo.snapshot();
            let q = kpi_query(kpi, &p, kpi::data_months(&snap))?;
            let result = kpi::forecast(&snap, &repo.cohorts(), &cfg.kpi_context(), &q, horizon, scenario)
                .map_err(ApiError::from)?;
            if json {
                println!("{}", canonical_body(&result));
            } else {
                print!("{}", forecast_table(&result));
            }
            Ok(())
        }
    }
}

fn print_report(report: &IngestReport, json: bool) {
    if json {
        println!("{}", canonical_body(report));
        return;
    }
    let rows: Vec<Vec<String>> = report
        .sources
        .iter()
        .map(|s| {
            vec![
                s.source_id.clone(),
                s.read.to_string(),
                s.normalized.to_string(),
                s.rejected.to_string(),
                s.upserted.to_string(),
                s.watermark
                    .high_water
                    .map_or_else(|| "-".into(), |t| t.to_rfc3339_opts(SecondsFormat::Secs, true)),
                s.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    print!(
        "{}",
        table::render(&["source", "read", "normalized", "rejected", "upserted", "watermark", "error"], &rows)
    );
    match (&report.build, &report.build_error) {
        (Some(b), _) => println!(
            "upserted {}, episodes written {}, tombstoned {}",
            report.upserted(),
            b.episodes_written,
            b.episodes_tombstoned
        ),
        (None, Some(e)) => println!("upserted {}, build failed: {e}", report.upserted()),
        (None, None) => println!("upserted {}", report.upserted()),
    }
}

fn day(t: chrono::DateTime<chrono::Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn series_table(s: &KpiSeries) -> String {
    let mut rows = Vec::new();
    for b in &s.buckets {
        for (key, cell) in &b.strata {
            rows.push(vec![
                day(b.bucket_start),
                day(b.bucket_end),
                key.clone(),
                table::value(cell.value),
                cell.n.to_string(),
            ]);
        }
        if b.strata.is_empty() {
            rows.push(vec![day(b.bucket_start), day(b.bucket_end), "-".into(), table::value(b.value), b.n.to_string()]);
        }
    }
    format!(
        "{} ({})\n{}",
        s.query.kpi.as_str(),
        s.query.kpi.unit(),
        table::render(&["bucket_start", "bucket_end", "stratum", "value", "n"], &rows)
    )
}

fn forecast_table(f: &ForecastResult) -> String {
    let mut rows: Vec<Vec<String>> = f
        .history
        .iter()
        .map(|p| vec![day(p.bucket_start), "history".into(), p.value.to_string()])
        .collect();
    rows.extend(
        f.projected
            .iter()
            .map(|p| vec![day(p.bucket_start), "projected".into(), p.value.to_string()]),
    );
    format!(
        "{} {}: slope {}, intercept {}, scenario x{}\n{}",
        f.kpi.as_str(),
        f.method,
        f.slope,
        f.intercept,
        f.scenario_multiplier,
        table::render(&["month", "kind", "value"], &rows)
    )
}
