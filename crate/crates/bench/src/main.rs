//! Benchmark harness for the object heap: runs one of the demo workloads
//! for a number of iterations and writes per-iteration metrics as CSV.
//!
//! CSV schema (documented, stable): the header row names every column;
//! rows are comma-separated with LF line endings. Leading columns are
//! `iteration` and `wall_ms`, followed by one `live_<type>` column per
//! object type of the chosen workload, then
//! `allocs,deallocs,fragmentation,allocated_blocks,block_claims,rollbacks,retries`
//! (the counter columns are per-iteration deltas). After the last
//! iteration a `summary` row repeats the totals: total wall time, final
//! live counts, total allocations/deallocations, final fragmentation and
//! block count, total counters. With `--no-timing` the wall-clock column
//! is written as 0.000, which makes single-worker runs with the same seed
//! byte-identical.
//!
//! Exit codes: 0 on success, 1 when a run stops early (out of memory —
//! the CSV written so far is kept, without a summary row), 2 on bad
//! configuration.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use soa_apps::game_of_life::GameOfLife;
use soa_apps::nbody::{NBody, NBodyConfig};
use soa_apps::rng::counter_rng;
use soa_apps::scalability::{self, ScalabilityConfig};
use soa_apps::wa_tor::{WaTor, WaTorConfig};
use soa_heap::{HeapCounters, SoaHeap};

/// Runs a workload on the object heap and writes per-iteration metrics as
/// CSV (see the module docs of this binary for the schema).
#[derive(Parser, Debug)]
#[command(name = "soa-bench", version, about)]
struct Cli {
    /// Workload: wa-tor | game-of-life | nbody | linux-scalability
    /// (aliases: wator, gol, scalability).
    #[arg(long)]
    app: String,

    /// Grid size as WIDTHxHEIGHT (wa-tor, game-of-life). Default 64x64.
    #[arg(long)]
    grid: Option<String>,

    /// Object count: bodies for nbody (default 1024), allocations for
    /// linux-scalability (default 1048576).
    #[arg(long)]
    n: Option<usize>,

    /// Iterations to run (simulation steps; full cycles for
    /// linux-scalability). Defaults: 100, or 1 for linux-scalability.
    #[arg(long)]
    iterations: Option<usize>,

    /// Arena size, e.g. 64MiB, 512KiB, 1GiB, or plain bytes
    /// (wa-tor, nbody; the other workloads size their own arenas).
    #[arg(long)]
    heap: Option<String>,

    /// Worker threads for the traversal engine.
    #[arg(long)]
    threads: Option<usize>,

    /// Lane-group width of the traversal engine, 1..=64 (wa-tor, nbody).
    #[arg(long)]
    lane_width: Option<u32>,

    /// Allocation fast-path retries before claiming a fresh block
    /// (wa-tor, nbody).
    #[arg(long)]
    retries: Option<u32>,

    /// World seed (wa-tor, game-of-life soup, nbody initial conditions).
    #[arg(long)]
    seed: Option<u64>,

    /// Output CSV path; stdout when omitted. The SOA_BENCH_OUT_DIR
    /// environment variable redirects the file into that directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Parameter sweep: one run per value, one CSV per run, e.g.
    /// --sweep retries=1,2,5 (parameters: retries, threads, lane-width,
    /// heap, seed). Requires --out; files get a _<param>_<value> suffix.
    #[arg(long)]
    sweep: Option<String>,

    /// Write 0.000 in the wall_ms column so identical configurations
    /// produce byte-identical CSV.
    #[arg(long)]
    no_timing: bool,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    eprintln!("run with --help for usage");
    ExitCode::from(2)
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid '{s}' is not WIDTHxHEIGHT"))?;
    let w = w.parse::<usize>().map_err(|_| format!("bad grid width '{w}'"))?;
    let h = h.parse::<usize>().map_err(|_| format!("bad grid height '{h}'"))?;
    if w < 3 || h < 3 {
        return Err("grid must be at least 3x3".into());
    }
    Ok((w, h))
}

fn parse_heap(s: &str) -> Result<usize, String> {
    let t = s.trim();
    let (digits, mult) = if let Some(d) = t.strip_suffix("GiB") {
        (d, 1usize << 30)
    } else if let Some(d) = t.strip_suffix("MiB") {
        (d, 1 << 20)
    } else if let Some(d) = t.strip_suffix("KiB") {
        (d, 1 << 10)
    } else if let Some(d) = t.strip_suffix('B') {
        (d, 1)
    } else {
        (t, 1)
    };
    digits
        .trim()
        .parse::<usize>()
        .map(|v| v * mult)
        .map_err(|_| format!("bad heap size '{s}' (use e.g. 64MiB, 512KiB, or bytes)"))
}

/// Where one run's CSV goes.
enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    fn open(&self) -> std::io::Result<Box<dyn Write>> {
        Ok(match self {
            Sink::Stdout => Box::new(std::io::stdout().lock()),
            Sink::File(p) => Box::new(File::create(p)?),
        })
    }
}

/// Applies the SOA_BENCH_OUT_DIR override to an output path.
fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os("SOA_BENCH_OUT_DIR") {
        Some(dir) => Path::new(&dir).join(path.file_name().unwrap_or(path.as_os_str())),
        None => path.to_path_buf(),
    }
}

/// Collects one row of metrics and formats it.
struct CsvRun<'a> {
    out: Box<dyn Write>,
    live_names: &'a [&'a str],
    no_timing: bool,
    rows: usize,
    total_wall: f64,
    total: HeapCounters,
}

impl<'a> CsvRun<'a> {
    fn new(sink: &Sink, live_names: &'a [&'a str], no_timing: bool) -> std::io::Result<CsvRun<'a>> {
        let mut run = CsvRun {
            out: sink.open()?,
            live_names,
            no_timing,
            rows: 0,
            total_wall: 0.0,
            total: HeapCounters::default(),
        };
        let mut header = String::from("iteration,wall_ms");
        for name in live_names {
            let _ = write!(header, ",live_{name}");
        }
        header.push_str(",allocs,deallocs,fragmentation,allocated_blocks,block_claims,rollbacks,retries\n");
        run.out.write_all(header.as_bytes())?;
        Ok(run)
    }

    fn wall(&self, ms: f64) -> f64 {
        if self.no_timing {
            0.0
        } else {
            ms
        }
    }

    fn row(
        &mut self,
        wall_ms: f64,
        live: &[u64],
        delta: &HeapCounters,
        fragmentation: f64,
        blocks: usize,
    ) -> std::io::Result<()> {
        assert_eq!(live.len(), self.live_names.len());
        let mut line = format!("{},{:.3}", self.rows, self.wall(wall_ms));
        for v in live {
            let _ = write!(line, ",{v}");
        }
        let _ = writeln!(
            line,
            ",{},{},{:.6},{},{},{},{}",
            delta.allocations,
            delta.deallocations,
            fragmentation,
            blocks,
            delta.block_initializations,
            delta.type_rollbacks,
            delta.reserve_retries
        );
        self.out.write_all(line.as_bytes())?;
        self.rows += 1;
        self.total_wall += wall_ms;
        self.total.allocations += delta.allocations;
        self.total.deallocations += delta.deallocations;
        self.total.block_initializations += delta.block_initializations;
        self.total.type_rollbacks += delta.type_rollbacks;
        self.total.reserve_retries += delta.reserve_retries;
        Ok(())
    }

    /// Writes the closing totals row. A run with zero iterations keeps the
    /// file header-only: no rows means nothing to summarize.
    fn summary(
        mut self,
        live: &[u64],
        fragmentation: f64,
        blocks: usize,
    ) -> std::io::Result<()> {
        if self.rows == 0 {
            return self.out.flush();
        }
        let mut line = format!("summary,{:.3}", self.wall(self.total_wall));
        for v in live {
            let _ = write!(line, ",{v}");
        }
        let _ = writeln!(
            line,
            ",{},{},{:.6},{},{},{},{}",
            self.total.allocations,
            self.total.deallocations,
            fragmentation,
            blocks,
            self.total.block_initializations,
            self.total.type_rollbacks,
            self.total.reserve_retries
        );
        self.out.write_all(line.as_bytes())?;
        self.out.flush()
    }
}

/// Snapshot-and-reset of the heap counters around one iteration.
fn take_delta(heap: &SoaHeap) -> HeapCounters {
    let c = heap.counters();
    heap.reset_counters();
    c
}

#[derive(Clone, Debug)]
struct RunParams {
    app: String,
    grid: (usize, usize),
    n: Option<usize>,
    iterations: usize,
    heap_bytes: Option<usize>,
    threads: usize,
    lane_width: Option<u32>,
    retries: Option<u32>,
    seed: u64,
    no_timing: bool,
}

fn run_wa_tor(p: &RunParams, sink: &Sink) -> Result<(), ExitCode> {
    let mut world = WaTor::new(WaTorConfig {
        width: p.grid.0,
        height: p.grid.1,
        seed: p.seed,
        workers: p.threads,
        alloc_retries: p.retries.unwrap_or(5),
        heap_bytes: p.heap_bytes,
        lane_width: p.lane_width,
        ..WaTorConfig::default()
    })
    .map_err(|e| usage_error(&format!("wa-tor setup failed: {e}")))?;
    let heap_live = |w: &WaTor| {
        let (fish, sharks) = w.counts();
        let cells = (p.grid.0 * p.grid.1) as u64;
        [fish, sharks, cells]
    };
    let mut csv = CsvRun::new(sink, &["fish", "shark", "cell"], p.no_timing)
        .map_err(|e| usage_error(&format!("cannot open output: {e}")))?;
    world.heap().reset_counters();
    for _ in 0..p.iterations {
        let t0 = Instant::now();
        let stepped = world.step();
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        let delta = take_delta(world.heap());
        let live = heap_live(&world);
        csv.row(
            wall,
            &live,
            &delta,
            world.heap().fragmentation(),
            world.heap().allocated_block_count(),
        )
        .map_err(io_fail)?;
        if let Err(e) = stepped {
            drop(csv); // partial CSV, no summary row
            eprintln!("run stopped early: {e}");
            return Err(ExitCode::from(1));
        }
    }
    let live = heap_live(&world);
    csv.summary(
        &live,
        world.heap().fragmentation(),
        world.heap().allocated_block_count(),
    )
    .map_err(io_fail)?;
    Ok(())
}

fn run_game_of_life(p: &RunParams, sink: &Sink) -> Result<(), ExitCode> {
    let mut gol = GameOfLife::new(p.grid.0, p.grid.1, p.threads)
        .map_err(|e| usage_error(&format!("game-of-life setup failed: {e}")))?;
    // Random soup at 30% density, deterministic in the seed.
    for idx in 0..p.grid.0 * p.grid.1 {
        if counter_rng(p.seed, 0, idx as u64) % 100 < 30 {
            gol.set_alive(idx % p.grid.0, idx / p.grid.0)
                .map_err(|e| usage_error(&format!("seeding failed: {e}")))?;
        }
    }
    let cells = (p.grid.0 * p.grid.1) as u64;
    let mut csv = CsvRun::new(sink, &["live", "candidate", "cell"], p.no_timing)
        .map_err(|e| usage_error(&format!("cannot open output: {e}")))?;
    gol.heap().reset_counters();
    for _ in 0..p.iterations {
        let t0 = Instant::now();
        let stepped = gol.step();
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        let delta = take_delta(gol.heap());
        let live = [gol.alive_count(), 0, cells];
        csv.row(
            wall,
            &live,
            &delta,
            gol.heap().fragmentation(),
            gol.heap().allocated_block_count(),
        )
        .map_err(io_fail)?;
        if let Err(e) = stepped {
            drop(csv);
            eprintln!("run stopped early: {e}");
            return Err(ExitCode::from(1));
        }
    }
    let live = [gol.alive_count(), 0, cells];
    csv.summary(&live, gol.heap().fragmentation(), gol.heap().allocated_block_count())
        .map_err(io_fail)?;
    Ok(())
}

fn run_nbody(p: &RunParams, sink: &Sink) -> Result<(), ExitCode> {
    let mut nb = NBody::new(NBodyConfig {
        bodies: p.n.unwrap_or(1024),
        seed: p.seed,
        workers: p.threads,
        heap_bytes: p.heap_bytes,
        lane_width: p.lane_width,
        alloc_retries: p.retries,
        // A small merge radius keeps the deletion protocol exercised.
        merge_radius: 0.01,
        ..NBodyConfig::default()
    })
    .map_err(|e| usage_error(&format!("nbody setup failed: {e}")))?;
    let mut csv = CsvRun::new(sink, &["body"], p.no_timing)
        .map_err(|e| usage_error(&format!("cannot open output: {e}")))?;
    nb.heap().reset_counters();
    for _ in 0..p.iterations {
        let t0 = Instant::now();
        let stepped = nb.step();
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        let delta = take_delta(nb.heap());
        csv.row(
            wall,
            &[nb.body_count()],
            &delta,
            nb.heap().fragmentation(),
            nb.heap().allocated_block_count(),
        )
        .map_err(io_fail)?;
        if let Err(e) = stepped {
            drop(csv);
            eprintln!("run stopped early: {e}");
            return Err(ExitCode::from(1));
        }
    }
    csv.summary(
        &[nb.body_count()],
        nb.heap().fragmentation(),
        nb.heap().allocated_block_count(),
    )
    .map_err(io_fail)?;
    Ok(())
}

fn run_scalability(p: &RunParams, sink: &Sink) -> Result<(), ExitCode> {
    let cfg = ScalabilityConfig {
        allocations: p.n.unwrap_or(1 << 20),
        threads: p.threads,
    };
    let mut csv = CsvRun::new(sink, &["node"], p.no_timing)
        .map_err(|e| usage_error(&format!("cannot open output: {e}")))?;
    let mut last_utilization = 1.0;
    for _ in 0..p.iterations {
        let report = scalability::run(cfg)
            .map_err(|e| usage_error(&format!("scalability setup failed: {e}")))?;
        let wall = (report.alloc_time + report.free_time).as_secs_f64() * 1e3;
        // The workload drains its heap, so the iteration ends with zero
        // live objects and an empty arena.
        csv.row(wall, &[0], &report.counters, 0.0, 0).map_err(io_fail)?;
        last_utilization = report.utilization;
        eprintln!(
            "utilization {:.4} ({}/{} objects), alloc {:?}, free {:?}",
            report.utilization, report.allocated, report.requested, report.alloc_time, report.free_time
        );
    }
    csv.summary(&[0], 0.0, 0).map_err(io_fail)?;
    if last_utilization < 0.95 {
        eprintln!("warning: final utilization {last_utilization:.4} below 0.95");
    }
    Ok(())
}

fn io_fail(e: std::io::Error) -> ExitCode {
    eprintln!("error writing output: {e}");
    ExitCode::from(1)
}

fn run_once(p: &RunParams, sink: &Sink) -> Result<(), ExitCode> {
    match p.app.as_str() {
        "wa-tor" | "wator" => run_wa_tor(p, sink),
        "game-of-life" | "gol" => run_game_of_life(p, sink),
        "nbody" => run_nbody(p, sink),
        "linux-scalability" | "scalability" => run_scalability(p, sink),
        other => Err(usage_error(&format!(
            "unknown app '{other}' (expected wa-tor, game-of-life, nbody, or linux-scalability)"
        ))),
    }
}

/// Returns (param, values) from `--sweep param=v1,v2,...`.
fn parse_sweep(s: &str) -> Result<(String, Vec<String>), String> {
    let (param, values) = s
        .split_once('=')
        .ok_or_else(|| format!("sweep '{s}' is not param=v1,v2,..."))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if values.is_empty() || values.iter().any(|v| v.is_empty()) {
        return Err(format!("sweep '{s}' has empty values"));
    }
    Ok((param.trim().to_string(), values))
}

fn apply_sweep_value(p: &mut RunParams, param: &str, value: &str) -> Result<(), String> {
    match param {
        "retries" => {
            p.retries = Some(value.parse().map_err(|_| format!("bad retries '{value}'"))?);
        }
        "threads" => {
            p.threads = value.parse().map_err(|_| format!("bad threads '{value}'"))?;
        }
        "lane-width" => {
            p.lane_width = Some(value.parse().map_err(|_| format!("bad lane width '{value}'"))?);
        }
        "heap" => {
            p.heap_bytes = Some(parse_heap(value)?);
        }
        "seed" => {
            p.seed = value.parse().map_err(|_| format!("bad seed '{value}'"))?;
        }
        other => {
            return Err(format!(
                "cannot sweep '{other}' (supported: retries, threads, lane-width, heap, seed)"
            ))
        }
    }
    Ok(())
}

/// The CSV file for one sweep value: `<stem>_<param>_<value>.csv`.
fn sweep_path(out: &Path, param: &str, value: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let safe: String = value.chars().map(|c| if c.is_alphanumeric() { c } else { '-' }).collect();
    out.with_file_name(format!("{stem}_{param}_{safe}.csv"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let app = cli.app.clone();
    let supports_heap = matches!(app.as_str(), "wa-tor" | "wator" | "nbody");
    let supports_grid = matches!(app.as_str(), "wa-tor" | "wator" | "game-of-life" | "gol");
    let supports_n = matches!(app.as_str(), "nbody" | "linux-scalability" | "scalability");
    let supports_seed = !matches!(app.as_str(), "linux-scalability" | "scalability");
    if cli.heap.is_some() && !supports_heap {
        return usage_error(&format!("--heap is not supported for {app} (it sizes its own arena)"));
    }
    if (cli.lane_width.is_some() || cli.retries.is_some()) && !supports_heap {
        return usage_error(&format!("--lane-width/--retries are not supported for {app}"));
    }
    if cli.grid.is_some() && !supports_grid {
        return usage_error(&format!("--grid is not supported for {app}; use --n"));
    }
    if cli.n.is_some() && !supports_n {
        return usage_error(&format!("--n is not supported for {app}; use --grid"));
    }
    if cli.seed.is_some() && !supports_seed {
        return usage_error(&format!("--seed is not supported for {app}"));
    }

    let grid = match cli.grid.as_deref().map(parse_grid).transpose() {
        Ok(g) => g.unwrap_or((64, 64)),
        Err(e) => return usage_error(&e),
    };
    let heap_bytes = match cli.heap.as_deref().map(parse_heap).transpose() {
        Ok(h) => h,
        Err(e) => return usage_error(&e),
    };
    if let Some(w) = cli.lane_width {
        if !(1..=64).contains(&w) {
            return usage_error("lane width must be in 1..=64");
        }
    }
    if cli.retries == Some(0) {
        return usage_error("retries must be at least 1");
    }

    let default_iterations = if matches!(app.as_str(), "linux-scalability" | "scalability") {
        1
    } else {
        100
    };
    let params = RunParams {
        app,
        grid,
        n: cli.n,
        iterations: cli.iterations.unwrap_or(default_iterations),
        heap_bytes,
        threads: cli
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        lane_width: cli.lane_width,
        retries: cli.retries,
        seed: cli.seed.unwrap_or(7),
        no_timing: cli.no_timing,
    };
    if params.threads == 0 {
        return usage_error("threads must be at least 1");
    }

    match &cli.sweep {
        None => {
            let sink = match &cli.out {
                Some(p) => Sink::File(resolve_out(p)),
                None => Sink::Stdout,
            };
            match run_once(&params, &sink) {
                Ok(()) => ExitCode::SUCCESS,
                Err(code) => code,
            }
        }
        Some(sweep_arg) => {
            let Some(out) = &cli.out else {
                return usage_error("--sweep requires --out (one CSV file per value)");
            };
            let (param, values) = match parse_sweep(sweep_arg) {
                Ok(pv) => pv,
                Err(e) => return usage_error(&e),
            };
            for value in &values {
                let mut p = params.clone();
                if let Err(e) = apply_sweep_value(&mut p, &param, value) {
                    return usage_error(&e);
                }
                let path = resolve_out(&sweep_path(out, &param, value));
                eprintln!("sweep {param}={value} -> {}", path.display());
                if let Err(code) = run_once(&p, &Sink::File(path)) {
                    return code;
                }
            }
            ExitCode::SUCCESS
        }
    }
}
