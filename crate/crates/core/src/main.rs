use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use darkscope::config::RunConfig;
use darkscope::fingerprint::{default_signatures, fingerprint, read_signatures, tool_report};
use darkscope::ingest::{detect_format, read_ndjson, read_pcap, write_ndjson, EnrichmentMaps, InputFormat, IngestSummary};
use darkscope::model::{AggLevel, Address6, Prefix6, ProbePacket, MICROS_PER_SEC};
use darkscope::netsel::{classify_netsel, cluster_archetypes, extract_features};
use darkscope::pipeline::{classify_addresses, schedule_from_config, source_addrsel, validate};
use darkscope::randomness::{extract_bits, run_all, BitSection};
use darkscope::report::{self, build_report, packet_counts_from_packets, read_labels, ReportInputs, ReportParams};
use darkscope::schedule::{generate_schedule, AnnouncementSchedule, ScheduleParams, Window};
use darkscope::sessionizer::{read_sessions, sessionize, write_sessions, ScanSession, SessionizerConfig};
use darkscope::simulator::{population, simulate, write_truth_csv, ScannerSpec, SimTelescopes};
use darkscope::temporal::{classify_all, covering_window};
use darkscope::timefmt::parse_timestamp;
use darkscope::Error;

#[derive(Parser)]
#[command(name = "darkscope", version, about = "IPv6 telescope scan analysis")]
struct Cli {
    /// TOML configuration file; `DARKSCOPE_<SECTION>__<KEY>` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse pcap/pcapng or NDJSON captures into normalized NDJSON packets.
    Ingest(IngestArgs),
    /// Group packets into scan sessions.
    Sessions(SessionsArgs),
    /// Label sources on one taxonomy axis.
    #[command(subcommand)]
    Classify(ClassifyCmd),
    /// Run the randomness tests on a bit string or on target addresses.
    Nist(NistArgs),
    /// Cluster payloads and map clusters to known tools.
    Fingerprint(FingerprintArgs),
    /// Generate a prefix-splitting announcement schedule.
    Schedule(ScheduleArgs),
    /// Generate a synthetic trace with ground truth.
    Simulate(SimulateArgs),
    /// Build aggregate tables from sessions and labels.
    Report(ReportArgs),
    /// Simulate, classify and score against ground truth.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Capture files; `-` reads standard input.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "auto")]
    format: String,
    /// Telescope id for pcap input (overrides the config).
    #[arg(long)]
    telescope: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SessionsArgs {
    /// Packet NDJSON; `-` or absent reads standard input.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Source aggregation: 128 or 64 (overrides the config).
    #[arg(long)]
    level: Option<AggLevel>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ClassifyCmd {
    /// Address selection per source, with optional per-session detail.
    Addresses {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        per_session: Option<PathBuf>,
    },
    /// One-off, periodic or intermittent per source.
    Temporal {
        #[arg(long)]
        sessions: PathBuf,
        /// Analysis window is the schedule span; otherwise the sessions' span.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Network selection per source against an announcement schedule.
    Netsel {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Also write per-cycle DBSCAN archetypes as JSON.
        #[arg(long)]
        archetypes: Option<PathBuf>,
    },
}

#[derive(Args)]
struct NistArgs {
    /// A string of 0 and 1 characters.
    #[arg(long, conflicts_with_all = ["addresses"])]
    bits: Option<String>,
    /// File with one IPv6 address per line.
    #[arg(long)]
    addresses: Option<PathBuf>,
    /// iid64 or subnet32.
    #[arg(long, default_value = "iid64")]
    section: String,
    /// Telescope prefix the subnet bits are taken under.
    #[arg(long)]
    prefix: Option<Prefix6>,
}

#[derive(Args)]
struct FingerprintArgs {
    /// Packet NDJSON.
    #[arg(long)]
    packets: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    base: Option<Prefix6>,
    #[arg(long)]
    cycles: Option<usize>,
    /// RFC 3339 start of the baseline period.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    cycle_days: Option<i64>,
    #[arg(long)]
    dark_days: Option<i64>,
    #[arg(long)]
    baseline_days: Option<i64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON array of scanner specs; otherwise a generated population.
    #[arg(long)]
    specs: Option<PathBuf>,
    #[arg(long)]
    scanners: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Schedule JSON; otherwise generated from the config.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Packet NDJSON output.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Session NDJSON at either aggregation level.
    #[arg(long)]
    sessions: PathBuf,
    /// /64 session NDJSON for the port table.
    #[arg(long)]
    sessions64: Option<PathBuf>,
    /// Packet NDJSON for exact heavy-hitter counts.
    #[arg(long)]
    packets: Option<PathBuf>,
    /// Label CSV(s) from `classify`; may repeat.
    #[arg(long)]
    classify: Vec<PathBuf>,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scanners: Option<usize>,
    /// Directory for truth, predictions, scorecard and manifest.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Fail {
    Usage(String),
    Data(Error),
    Acceptance,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Fail::Usage(m),
            e => Fail::Data(e),
        }
    }
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        Fail::Data(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, Fail>;

fn open(path: &Path) -> CliResult<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    File::open(path)
        .map(|f| Box::new(BufReader::new(f)) as Box<dyn BufRead>)
        .map_err(|e| Fail::Usage(format!("{}: {e}", path.display())))
}

fn create(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
        Some(p) if p == Path::new("-") => Ok(Box::new(BufWriter::new(io::stdout()))),
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Fail::Usage(format!("{}: {e}", p.display()))),
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CliResult {
    std::fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn read_packets(path: &Path, cfg: &RunConfig) -> CliResult<Vec<ProbePacket>> {
    let (packets, summary) = read_ndjson(open(path)?, &cfg.ingest())?;
    report_rejects(&summary);
    Ok(packets)
}

fn load_sessions(path: &Path) -> CliResult<Vec<ScanSession>> {
    Ok(read_sessions(open(path)?)?)
}

fn load_schedule(path: &Path) -> CliResult<AnnouncementSchedule> {
    Ok(AnnouncementSchedule::from_reader(open(path)?)?)
}

fn report_rejects(summary: &IngestSummary) {
    for r in summary.rejects.iter().take(10) {
        log::warn!("line {}: {}", r.line, r.reason);
    }
    if summary.rejects.len() > 10 {
        log::warn!("{} more rejected records", summary.rejects.len() - 10);
    }
}

fn enrichment(cfg: &RunConfig) -> CliResult<Option<EnrichmentMaps>> {
    let e = &cfg.enrichment;
    if e.asn.is_none() && e.geo.is_none() && e.nettype.is_none() && e.rdns.is_none() {
        return Ok(None);
    }
    Ok(Some(EnrichmentMaps::load(
        e.asn.as_deref(),
        e.geo.as_deref(),
        e.nettype.as_deref(),
        e.rdns.as_deref(),
    )?))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(Error::from)?;
    for r in rows {
        w.write_record(&r).map_err(Error::from)?;
    }
    w.into_inner().map_err(|e| Fail::Data(Error::Invalid(e.to_string())))
}

fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(Error::from)?;
    out.push(b'\n');
    Ok(out)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    let mut w = create(path)?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn cmd_ingest(a: &IngestArgs, cfg: &RunConfig) -> CliResult {
    let mut opts = cfg.ingest();
    if let Some(t) = &a.telescope {
        opts.telescope = t.clone();
    }
    let forced: InputFormat = a.format.parse().map_err(|e: Error| Fail::Usage(e.to_string()))?;
    let mut all = Vec::new();
    let mut failure = None;
    for path in &a.inputs {
        let mut r = open(path)?;
        let head = r.fill_buf()?.to_vec();
        let format = match forced {
            InputFormat::Auto => detect_format(&head),
            f => f,
        };
        let summary = match format {
            InputFormat::Pcap => {
                let res = read_pcap(r, &opts);
                all.extend(res.packets);
                if let Some(e) = res.error {
                    log::error!("{}: {e}", path.display());
                    failure = Some(e);
                }
                res.summary
            }
            _ => {
                let (p, s) = read_ndjson(r, &opts)?;
                all.extend(p);
                s
            }
        };
        report_rejects(&summary);
        eprintln!(
            "{}: accepted {}, rejected {}, excluded {}, fragments {}, other {}",
            path.display(),
            summary.accepted,
            summary.rejects.len(),
            summary.excluded,
            summary.skipped_fragments,
            summary.skipped_other
        );
    }
    all.sort_by_key(|p| p.ts);
    write_ndjson(create(a.out.as_deref())?, &all)?;
    match failure {
        Some(e) => Err(Fail::Data(e)),
        None => Ok(()),
    }
}

fn cmd_sessions(a: &SessionsArgs, cfg: &RunConfig) -> CliResult {
    let input = a.input.clone().unwrap_or_else(|| PathBuf::from("-"));
    let packets = read_packets(&input, cfg)?;
    let mut sc = cfg.sessionizer()?;
    if let Some(l) = a.level {
        sc = SessionizerConfig::new(sc.timeout, l)?;
    }
    let sessions = sessionize(&packets, &sc);
    write_sessions(create(a.out.as_deref())?, &sessions)?;
    Ok(())
}

fn cmd_classify(c: &ClassifyCmd, cfg: &RunConfig) -> CliResult {
    match c {
        ClassifyCmd::Addresses { sessions, out, per_session } => {
            let sessions = load_sessions(sessions)?;
            let per = classify_addresses(&sessions, &cfg.telescopes, &cfg.addresses(), &cfg.randomness())?;
            let opt = |b: Option<bool>| b.map_or_else(String::new, |v| v.to_string());
            if let Some(p) = per_session {
                let rows = per.iter().map(|s| {
                    vec![
                        s.session.to_string(),
                        s.source.to_string(),
                        s.telescope.clone(),
                        s.packets.to_string(),
                        s.dominant_type.map_or_else(String::new, |t| t.to_string()),
                        opt(s.iid_random),
                        opt(s.subnet_random),
                        s.label.to_string(),
                    ]
                });
                let header =
                    ["session", "source", "telescope", "packets", "dominant_type", "iid_random", "subnet_random", "addrsel"];
                emit(Some(p), &csv_bytes(&header, rows)?)?;
            }
            let rows = source_addrsel(&per).into_iter().map(|(k, l)| vec![k.to_string(), l.to_string()]);
            emit(out.as_deref(), &csv_bytes(&["source", "addrsel"], rows)?)
        }
        ClassifyCmd::Temporal { sessions, schedule, out } => {
            let sessions = load_sessions(sessions)?;
            let tc = cfg.temporal();
            let window = match schedule {
                Some(p) => {
                    let s = load_schedule(p)?;
                    Window::new(s.baseline.start, s.end())
                }
                None => match covering_window(&sessions, tc.bin_width) {
                    Some(w) => w,
                    None => return emit(out.as_deref(), &csv_bytes(&["source", "temporal", "period_secs"], [])?),
                },
            };
            let labels = classify_all(&sessions, &tc, window)?;
            let rows = labels.into_iter().map(|(k, l)| {
                vec![
                    k.to_string(),
                    l.kind.to_string(),
                    l.period.map_or_else(String::new, |p| (p / MICROS_PER_SEC).to_string()),
                ]
            });
            emit(out.as_deref(), &csv_bytes(&["source", "temporal", "period_secs"], rows)?)
        }
        ClassifyCmd::Netsel { sessions, schedule, out, archetypes } => {
            let sessions = load_sessions(sessions)?;
            let schedule = load_schedule(schedule)?;
            let nc = cfg.netsel();
            nc.validate()?;
            let labels = classify_netsel(&sessions, &schedule, &nc);
            let rows = labels.into_iter().map(|(k, l)| {
                let cycles: Vec<String> = l.cycles.iter().map(|(c, lab)| format!("{c}:{lab}")).collect();
                vec![k.to_string(), l.label.to_string(), cycles.join(";")]
            });
            emit(out.as_deref(), &csv_bytes(&["source", "netsel", "cycles"], rows)?)?;
            if let Some(p) = archetypes {
                let arch = cluster_archetypes(&extract_features(&sessions, &schedule), &nc);
                emit(Some(p), &json_bytes(&arch)?)?;
            }
            Ok(())
        }
    }
}

fn cmd_nist(a: &NistArgs, cfg: &RunConfig) -> CliResult {
    let alpha = cfg.randomness.alpha;
    let bits: Vec<bool> = match (&a.bits, &a.addresses) {
        (Some(s), None) => s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Fail::Usage(format!("bit string contains `{other}`"))),
            })
            .collect::<CliResult<_>>()?,
        (None, Some(p)) => {
            let mut text = String::new();
            open(p)?.read_to_string(&mut text)?;
            let addrs = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.parse::<Address6>())
                .collect::<Result<Vec<_>, _>>()?;
            let section = match a.section.as_str() {
                "iid64" => BitSection::Iid64,
                "subnet32" => BitSection::Subnet32,
                other => return Err(Fail::Usage(format!("unknown section `{other}`"))),
            };
            let scope = match (section, a.prefix) {
                (_, Some(p)) => p,
                (BitSection::Iid64, None) => Prefix6::truncating(Address6(0), 0),
                (BitSection::Subnet32, None) => return Err(Fail::Usage("subnet32 needs --prefix".into())),
            };
            extract_bits(&addrs, section, scope)?
        }
        _ => return Err(Fail::Usage("give exactly one of --bits or --addresses".into())),
    };
    let results = run_all(&bits, alpha)?;
    emit(None, &json_bytes(&results)?)
}

fn cmd_fingerprint(a: &FingerprintArgs, cfg: &RunConfig) -> CliResult {
    let packets = read_packets(&a.packets, cfg)?;
    let sc = SessionizerConfig::new(cfg.sessions.timeout_secs * MICROS_PER_SEC, AggLevel::Addr128)?;
    let sessions = sessionize(&packets, &sc);
    let signatures = match &cfg.fingerprint.signatures {
        Some(p) => read_signatures(open(p)?)?,
        None => default_signatures(),
    };
    let rdns = enrichment(cfg)?.map(|e| e.rdns).unwrap_or_default();
    let (_, clusters) = fingerprint(&sessions, &packets, cfg.fingerprint_params(), &signatures, &rdns)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_file(&a.out_dir, "clusters.json", &json_bytes(&clusters)?)?;
    let rows = tool_report(&clusters).into_iter().map(|r| {
        vec![
            r.tool,
            r.scanners.to_string(),
            format!("{:.2}", r.scanners_pct),
            r.sessions.to_string(),
            format!("{:.2}", r.sessions_pct),
        ]
    });
    write_file(
        &a.out_dir,
        "tools.csv",
        &csv_bytes(&["tool", "scanners", "scanners_pct", "sessions", "sessions_pct"], rows)?,
    )
}

fn cmd_schedule(a: &ScheduleArgs, cfg: &RunConfig) -> CliResult {
    let s = &cfg.schedule;
    let start = a.start.as_deref().unwrap_or(&s.start);
    let params = ScheduleParams {
        cycle_days: a.cycle_days.unwrap_or(s.cycle_days),
        dark_days: a.dark_days.unwrap_or(s.dark_days),
        baseline_days: a.baseline_days.unwrap_or(s.baseline_days),
    };
    let schedule = generate_schedule(
        a.base.unwrap_or(s.base),
        a.cycles.unwrap_or(s.cycles),
        parse_timestamp(start)?,
        params,
    )?;
    let mut w = create(a.out.as_deref())?;
    schedule.to_writer(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Telescope layout for simulation: the configured telescope announcing the
/// schedule base follows the schedule, the others stay fixed.
fn sim_telescopes(cfg: &RunConfig, schedule: &AnnouncementSchedule) -> SimTelescopes {
    let scheduled = cfg
        .telescopes
        .iter()
        .find(|(_, p)| **p == schedule.base)
        .map_or_else(|| "T1".to_string(), |(k, _)| k.clone());
    let mut t = SimTelescopes::single(&scheduled, schedule);
    t.fixed = cfg
        .telescopes
        .iter()
        .filter(|(k, p)| **k != scheduled && !p.overlaps(&schedule.base))
        .map(|(k, p)| (k.clone(), *p))
        .collect();
    t
}

fn cmd_simulate(a: &SimulateArgs, cfg: &RunConfig) -> CliResult {
    let schedule = match &a.schedule {
        Some(p) => load_schedule(p)?,
        None => schedule_from_config(
            cfg,
            cfg.schedule.cycles,
            ScheduleParams {
                cycle_days: cfg.schedule.cycle_days,
                dark_days: cfg.schedule.dark_days,
                baseline_days: cfg.schedule.baseline_days,
            },
        )?,
    };
    let seed = a.seed.unwrap_or(cfg.validate.seed);
    let specs: Vec<ScannerSpec> = match &a.specs {
        Some(p) => serde_json::from_reader(open(p)?).map_err(Error::from)?,
        None => population(a.scanners.unwrap_or(cfg.validate.scanners), seed),
    };
    let telescopes = sim_telescopes(cfg, &schedule);
    let sim = simulate(&specs, &schedule, &telescopes, seed, &cfg.simulator())?;
    write_ndjson(create(a.out.as_deref())?, &sim.packets)?;
    if let Some(p) = &a.truth {
        let mut w = create(Some(p))?;
        write_truth_csv(&mut w, &sim.truth)?;
        w.flush()?;
    }
    eprintln!("{} scanners, {} packets", sim.truth.len(), sim.packets.len());
    Ok(())
}

fn cmd_report(a: &ReportArgs, cfg: &RunConfig) -> CliResult {
    let mut inputs = BTreeMap::new();
    let mut digest = |name: String, p: &Path| -> CliResult {
        let d = report::file_digest(p).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))?;
        inputs.insert(name, d);
        Ok(())
    };
    digest("sessions".into(), &a.sessions)?;
    if let Some(p) = &a.sessions64 {
        digest("sessions64".into(), p)?;
    }
    if let Some(p) = &a.packets {
        digest("packets".into(), p)?;
    }
    if let Some(p) = &a.schedule {
        digest("schedule".into(), p)?;
    }
    for (i, p) in a.classify.iter().enumerate() {
        digest(format!("classify{i}"), p)?;
    }

    let sessions = load_sessions(&a.sessions)?;
    let sessions64 = a.sessions64.as_deref().map(load_sessions).transpose()?;
    let packet_counts = match &a.packets {
        Some(p) => Some(packet_counts_from_packets(&read_packets(p, cfg)?)),
        None => None,
    };
    let labels = if a.classify.is_empty() {
        None
    } else {
        let readers = a.classify.iter().map(|p| open(p)).collect::<CliResult<Vec<_>>>()?;
        Some(read_labels(readers)?)
    };
    let schedule = a.schedule.as_deref().map(load_schedule).transpose()?;
    let enrich = enrichment(cfg)?;
    let params = ReportParams {
        heavy_hitter_share: cfg.report.heavy_hitter_share,
        top_ports: cfg.report.top_ports,
        discovery_prefix_len: cfg.report.discovery_prefix_len,
        address: cfg.addresses(),
        netsel: cfg.netsel(),
    };
    let bundle = build_report(
        &ReportInputs {
            sessions: &sessions,
            sessions64: sessions64.as_deref(),
            packet_counts,
            labels: labels.as_ref(),
            schedule: schedule.as_ref(),
            enrichment: enrich.as_ref(),
        },
        &params,
        &cfg.hash(),
    );
    for (t, why) in &bundle.omitted {
        log::warn!("skipped {t}: {why}");
    }
    bundle.write_dir(&a.out_dir, &params, inputs)?;
    Ok(())
}

#[derive(Serialize)]
struct ValidateManifest<'a> {
    config_hash: String,
    seed: u64,
    scanners: usize,
    trace_sha256: &'a str,
    artifacts: Vec<&'static str>,
    config: &'a RunConfig,
}

fn cmd_validate(a: &ValidateArgs, cfg: &RunConfig) -> CliResult {
    let mut cfg = cfg.clone();
    if let Some(s) = a.seed {
        cfg.validate.seed = s;
    }
    if let Some(n) = a.scanners {
        cfg.validate.scanners = n;
    }
    let run = validate(&cfg)?;
    let card = &run.scorecard;
    print!("{}", card.to_text());
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
        let mut truth = Vec::new();
        write_truth_csv(&mut truth, &run.truth)?;
        write_file(dir, "truth.csv", &truth)?;
        write_file(dir, "predictions.csv", &run.predictions_csv()?)?;
        write_file(dir, "scorecard.json", &json_bytes(card)?)?;
        write_file(dir, "scorecard.txt", card.to_text().as_bytes())?;
        let mut sched = Vec::new();
        run.schedule.to_writer(&mut sched)?;
        write_file(dir, "schedule.json", &sched)?;
        let manifest = ValidateManifest {
            config_hash: cfg.hash(),
            seed: cfg.validate.seed,
            scanners: cfg.validate.scanners,
            trace_sha256: &card.trace_sha256,
            artifacts: vec!["truth.csv", "predictions.csv", "scorecard.json", "scorecard.txt", "schedule.json"],
            config: &cfg,
        };
        write_file(dir, "manifest.json", &json_bytes(&manifest)?)?;
    }
    if card.pass() {
        Ok(())
    } else {
        Err(Fail::Acceptance)
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Fail::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Fail::Usage(e.to_string()))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    match &cli.cmd {
        Cmd::Ingest(a) => cmd_ingest(a, &cfg),
        Cmd::Sessions(a) => cmd_sessions(a, &cfg),
        Cmd::Classify(c) => cmd_classify(c, &cfg),
        Cmd::Nist(a) => cmd_nist(a, &cfg),
        Cmd::Fingerprint(a) => cmd_fingerprint(a, &cfg),
        Cmd::Schedule(a) => cmd_schedule(a, &cfg),
        Cmd::Simulate(a) => cmd_simulate(a, &cfg),
        Cmd::Report(a) => cmd_report(a, &cfg),
        Cmd::Validate(a) => cmd_validate(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Fail::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Fail::Acceptance) => {
            eprintln!("validation failed: accuracy below the configured minimum");
            ExitCode::from(3)
        }
    }
}
