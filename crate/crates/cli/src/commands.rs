use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use mudscope_core::model::HostRef;
use mudscope_core::parser::to_canonical_text;
use mudscope_core::{
    format_correct, parse_mud_file, ConnectivityGraph, DeviceProfile, GraphOptions, MergeMode, ValidationReport,
};
use serde::Serialize;
use serde_json::Value;

use crate::Format;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_MISSING: u8 = 2;
pub const EXIT_INCOMPLETE: u8 = 3;

#[derive(Args)]
pub struct GraphArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON object mapping controller class URIs to host lists.
    #[arg(long)]
    controller_map: Option<PathBuf>,
    /// Merge with the subset guard instead of plain intersection.
    #[arg(long)]
    strict_alg1: bool,
    /// Allow device links justified by only one side's policy.
    #[arg(long)]
    one_sided_links: bool,
    /// Write per-link trees (before/after pruning) as text and DOT.
    #[arg(long)]
    dump_trees: Option<PathBuf>,
    /// Exit 3 when promises remain unfulfilled.
    #[arg(long)]
    require_complete: bool,
    /// Treat the device with this MUD-URL as outside the local network.
    #[arg(long = "non-local", value_name = "MUD_URL")]
    non_local: Vec<String>,
}

enum Loaded {
    Missing(ValidationReport),
    Invalid(ValidationReport),
    Valid(Box<DeviceProfile>, ValidationReport),
}

fn load(path: &Path) -> Loaded {
    let name = path.display().to_string();
    match fs::read_to_string(path) {
        Err(e) => Loaded::Missing(ValidationReport::file_not_found(name, e.to_string())),
        Ok(text) => match parse_mud_file(&text) {
            Ok((profile, report)) => Loaded::Valid(Box::new(profile), report.with_file_ref(name)),
            Err(report) => Loaded::Invalid(report.with_file_ref(name)),
        },
    }
}

fn print_report(out: &mut impl Write, report: &ValidationReport, json: bool) {
    let _ = if json { writeln!(out, "{}", report.to_json_line()) } else { write!(out, "{report}") };
}

pub fn validate(paths: &[PathBuf], json: bool, fix: bool) -> u8 {
    let mut stdout = io::stdout().lock();
    let (mut missing, mut invalid) = (false, false);
    for path in paths {
        let report = match load(path) {
            Loaded::Missing(r) => {
                missing = true;
                r
            }
            Loaded::Invalid(r) => {
                invalid = true;
                r
            }
            Loaded::Valid(_, r) if fix => fix_file(path).unwrap_or(r),
            Loaded::Valid(_, r) => r,
        };
        print_report(&mut stdout, &report, json);
    }
    if missing {
        EXIT_MISSING
    } else if invalid {
        EXIT_INVALID
    } else {
        EXIT_OK
    }
}

fn fix_file(path: &Path) -> Option<ValidationReport> {
    let text = fs::read_to_string(path).ok()?;
    let (fixed, report) = format_correct(&text).ok()?;
    if fixed != text {
        if let Err(e) = fs::write(path, &fixed) {
            eprintln!("mudscope: cannot rewrite {}: {e}", path.display());
        }
    }
    Some(report.with_file_ref(path.display().to_string()))
}

/// Loads and validates every path. Reports go to stderr; on any failure the
/// exit code is returned instead of the profiles.
fn load_all(paths: &[PathBuf]) -> Result<Vec<DeviceProfile>, u8> {
    let mut stderr = io::stderr().lock();
    let mut profiles = Vec::new();
    let mut failed = false;
    for path in paths {
        match load(path) {
            Loaded::Missing(r) | Loaded::Invalid(r) => {
                print_report(&mut stderr, &r, false);
                failed = true;
            }
            Loaded::Valid(p, _) => profiles.push(*p),
        }
    }
    if failed {
        Err(EXIT_INVALID)
    } else {
        Ok(profiles)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> io::Result<()> {
    match out {
        Some(path) => fs::write(path, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    }
}

pub fn graph(args: &GraphArgs) -> u8 {
    let mut profiles = match load_all(&args.paths) {
        Ok(p) => p,
        Err(code) => return code,
    };
    for p in &mut profiles {
        if args.non_local.contains(&p.mud_url) {
            p.local = false;
        }
    }
    let options = GraphOptions {
        merge_mode: if args.strict_alg1 { MergeMode::StrictSubset } else { MergeMode::Intersection },
        one_sided_links: args.one_sided_links,
    };
    let mut graph = match ConnectivityGraph::from_profiles(profiles, options) {
        Ok((g, _)) => g,
        Err(e) => {
            eprintln!("mudscope: {e}");
            return EXIT_INVALID;
        }
    };
    if let Some(map_path) = &args.controller_map {
        let map: BTreeMap<String, Vec<HostRef>> = match fs::read_to_string(map_path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
        {
            Ok(m) => m,
            Err(e) => {
                eprintln!("mudscope: controller map {}: {e}", map_path.display());
                return EXIT_INVALID;
            }
        };
        if let Err(e) = graph.apply_controller_map(&map) {
            eprintln!("mudscope: controller map {}: {e}", map_path.display());
            return EXIT_INVALID;
        }
    }
    if let Some(dir) = &args.dump_trees {
        if let Err(e) = dump_trees(&graph, dir) {
            eprintln!("mudscope: cannot dump trees to {}: {e}", dir.display());
            return EXIT_INVALID;
        }
    }
    let text = match args.format {
        Format::Json => graph.to_json(),
        Format::Dot => graph.to_dot(),
    };
    if let Err(e) = write_output(args.out.as_deref(), &text) {
        eprintln!("mudscope: cannot write graph: {e}");
        return EXIT_INVALID;
    }
    let pending = graph.pending_promises();
    if pending > 0 {
        eprintln!("mudscope: {pending} promise(s) pending");
        if args.require_complete {
            return EXIT_INCOMPLETE;
        }
    }
    EXIT_OK
}

fn file_stem_for(source: &str, target: &str) -> String {
    let clean = |s: &str| s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect::<String>();
    format!("{}__{}", clean(source), clean(target))
}

fn dump_trees(graph: &ConnectivityGraph, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (source, target, before, after) in graph.link_trees() {
        let stem = file_stem_for(&source, &target);
        let text = format!(
            "{source} -> {target}\n\nbefore pruning:\n{}\nafter pruning:\n{}",
            before.to_text(),
            after.to_text()
        );
        fs::write(dir.join(format!("{stem}.txt")), text)?;
        let dot = format!("{}{}", before.to_dot(&format!("{stem}_before")), after.to_dot(&format!("{stem}_after")));
        fs::write(dir.join(format!("{stem}.dot")), dot)?;
    }
    Ok(())
}

pub fn report(paths: &[PathBuf]) -> u8 {
    let profiles = match load_all(paths) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match ConnectivityGraph::from_profiles(profiles, GraphOptions::default()) {
        Ok((g, _)) => {
            let text = serde_json::to_string_pretty(&g.redundancy_report()).expect("report serializes");
            println!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("mudscope: {e}");
            EXIT_INVALID
        }
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Phase {
    name: &'static str,
    seconds: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BenchReport {
    copies: usize,
    file: String,
    phases: Vec<Phase>,
    total_seconds: f64,
    peak_memory_mb: Option<f64>,
    nodes: usize,
    links: usize,
    export_bytes: u64,
}

/// Peak resident set size of this process, from /proc.
fn peak_memory_mb() -> Option<f64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

struct Counter(u64);

impl Write for Counter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Gives each copy its own MUD-URL under the original authority.
fn copies_of(doc: &Value, n: usize) -> Result<Vec<String>, String> {
    let url = doc
        .pointer("/ietf-mud:mud/mud-url")
        .and_then(Value::as_str)
        .ok_or("file has no mud-url")?;
    let authority = url.split("://").nth(1).and_then(|r| r.split('/').next()).ok_or("mud-url has no authority")?;
    let stem = url.rsplit('/').next().unwrap_or("device.json").trim_end_matches(".json").to_string();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut copy = doc.clone();
        copy["ietf-mud:mud"]["mud-url"] = Value::String(format!("https://{authority}/bench/{stem}-{i:04}.json"));
        out.push(to_canonical_text(&copy));
    }
    Ok(out)
}

pub fn bench(copies: usize, file: &Path, out: Option<&Path>) -> u8 {
    let start = Instant::now();
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("mudscope: {}: {e}", file.display());
            return EXIT_MISSING;
        }
    };
    let docs = match serde_json::from_str::<Value>(&text).map_err(|e| e.to_string()).and_then(|d| copies_of(&d, copies)) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("mudscope: {}: {e}", file.display());
            return EXIT_INVALID;
        }
    };

    let t = Instant::now();
    let mut profiles = Vec::with_capacity(copies);
    for doc in &docs {
        match parse_mud_file(doc) {
            Ok((p, _)) => profiles.push(p),
            Err(report) => {
                eprint!("{report}");
                return EXIT_INVALID;
            }
        }
    }
    drop(docs);
    let parse = t.elapsed();

    let (graph, timings) = match ConnectivityGraph::from_profiles(profiles, GraphOptions::default()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("mudscope: {e}");
            return EXIT_INVALID;
        }
    };

    let t = Instant::now();
    let export_bytes = match out {
        Some(path) => {
            let result = fs::File::create(path).and_then(|f| {
                let mut w = io::BufWriter::new(f);
                graph.write_json(&mut w)?;
                w.flush()
            });
            if let Err(e) = result {
                eprintln!("mudscope: cannot write {}: {e}", path.display());
                return EXIT_INVALID;
            }
            fs::metadata(path).map(|m| m.len()).unwrap_or(0)
        }
        None => {
            let mut counter = Counter(0);
            graph.write_json(&mut counter).expect("counting never fails");
            counter.0
        }
    };
    let export = t.elapsed();

    let report = BenchReport {
        copies,
        file: file.display().to_string(),
        phases: vec![
            Phase { name: "parse", seconds: parse.as_secs_f64() },
            Phase { name: "resolve", seconds: timings.resolve.as_secs_f64() },
            Phase { name: "merge+prune", seconds: timings.merge_prune.as_secs_f64() },
            Phase { name: "export", seconds: export.as_secs_f64() },
        ],
        total_seconds: start.elapsed().as_secs_f64(),
        peak_memory_mb: peak_memory_mb(),
        nodes: graph.nodes().len(),
        links: graph.link_count(),
        export_bytes,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    EXIT_OK
}
