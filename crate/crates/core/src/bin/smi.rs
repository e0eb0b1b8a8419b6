use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;

use smi::config::{PortMap, RuntimeConfig};
use smi::harness::{self, BenchConfig, CsvRow, StencilConfig};
use smi::routing::{check_deadlock_free, generate_routes, load_tables, write_tables, DeadlockCheck};
use smi::topology::{make_bus_with, make_torus_with, TopologySpec, DEFAULT_IFACES};
use smi::{Result, SmiError};

#[derive(Parser)]
#[command(
    name = "smi",
    version,
    about = "Streaming message runtime and interconnect simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Topology files.
    Topo {
        #[command(subcommand)]
        cmd: TopoCmd,
    },
    /// Routing tables.
    Routes {
        #[command(subcommand)]
        cmd: RoutesCmd,
    },
    /// Run a benchmark and write its CSV.
    Bench {
        name: BenchName,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run an application and compare it with its sequential reference.
    App {
        name: AppName,
        #[arg(long)]
        config: PathBuf,
        /// Write the result (grid rows or y) as CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TopoCmd {
    Validate {
        file: PathBuf,
    },
    Gen {
        #[arg(long)]
        shape: Shape,
        #[arg(long)]
        ranks: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_IFACES)]
        ifaces: u8,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum RoutesCmd {
    Gen {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        ports: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    Check {
        dir: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        ports: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Bus,
    Torus,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchName {
    Bandwidth,
    Latency,
    Injection,
    Collectives,
}

#[derive(Clone, Copy, ValueEnum)]
enum AppName {
    Stencil,
    Gesummv,
}

fn ports_or_standard(p: Option<&Path>) -> Result<PortMap> {
    p.map_or_else(|| Ok(harness::standard_ports()), PortMap::load)
}

fn topo(cmd: TopoCmd) -> Result<()> {
    match cmd {
        TopoCmd::Validate { file } => {
            let t = TopologySpec::load(&file)?;
            let degrees: Vec<usize> = (0..t.num_ranks() as u8).map(|r| t.degree(r)).collect();
            println!(
                "{} ranks, {} ifaces per rank, {} connections, connected: {}",
                t.num_ranks(),
                t.ifaces_per_rank(),
                t.connections().len(),
                t.is_connected()
            );
            println!("degrees: {degrees:?}");
            Ok(())
        }
        TopoCmd::Gen {
            shape,
            ranks,
            rows,
            cols,
            ifaces,
            output,
        } => {
            let t = match shape {
                Shape::Bus => {
                    let n = ranks.ok_or_else(|| SmiError::Config("--ranks is required for a bus".into()))?;
                    make_bus_with(n, ifaces)?
                }
                Shape::Torus => {
                    let (r, c) = match (rows, cols, ranks) {
                        (Some(r), Some(c), _) => (r, c),
                        (None, None, Some(n)) => (1, n),
                        _ => return Err(SmiError::Config("torus needs --rows and --cols".into())),
                    };
                    make_torus_with(r, c, ifaces)?
                }
            };
            t.save(&output)?;
            println!("wrote {} ({} connections)", output.display(), t.connections().len());
            Ok(())
        }
    }
}

fn routes(cmd: RoutesCmd) -> Result<()> {
    match cmd {
        RoutesCmd::Gen {
            topology,
            ports,
            output,
        } => {
            let t = TopologySpec::load(&topology)?;
            let rt = generate_routes(&t, &ports_or_standard(ports.as_deref())?)?;
            write_tables(&rt, &output)?;
            println!("wrote {} table files to {}", rt.num_ranks(), output.display());
            Ok(())
        }
        RoutesCmd::Check { dir, topology, ports } => {
            let t = TopologySpec::load(&topology)?;
            let rt = load_tables(&dir)?;
            let pairs = rt.check_reachability(&t)?;
            let hops = rt.hop_counts(&t)?;
            let diameter = hops.iter().flatten().max().copied().unwrap_or(0);
            println!("reachable pairs: {pairs}, routed diameter: {diameter}");
            match check_deadlock_free(&t, &rt, &ports_or_standard(ports.as_deref())?)? {
                DeadlockCheck::Acyclic(order) => {
                    println!(
                        "deadlock-free: channel dependency graph is acyclic ({} channels)",
                        order.len()
                    );
                    Ok(())
                }
                DeadlockCheck::Cycle(c) => Err(SmiError::Tables(format!("dependency cycle: {c:?}"))),
            }
        }
    }
}

fn emit_csv<R: CsvRow>(rows: &[R], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => harness::write_csv(rows, BufWriter::new(File::create(p)?))?,
        None => harness::write_csv(rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn bench(name: BenchName, config: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let cfg = match &config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    let out = output.or_else(|| cfg.output.clone());
    let out = out.as_deref();
    match name {
        BenchName::Bandwidth => emit_csv(&harness::bench_bandwidth(&cfg)?, out),
        BenchName::Latency => emit_csv(&harness::bench_latency(&cfg)?, out),
        BenchName::Injection => emit_csv(&harness::bench_injection(&cfg)?, out),
        BenchName::Collectives => emit_csv(&harness::bench_collectives(&cfg)?, out),
    }
}

#[derive(Deserialize)]
struct StencilFile {
    #[serde(flatten)]
    params: StencilConfig,
    topology: Option<PathBuf>,
    tables: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
struct GesummvFile {
    n: usize,
    #[serde(default = "one")]
    alpha: f32,
    #[serde(default = "one")]
    beta: f32,
    topology: Option<PathBuf>,
    tables: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

fn one() -> f32 {
    1.0
}

fn resolve(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

fn write_rows(out: &Path, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(out)?);
    for r in rows {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

fn app(name: AppName, config: &Path, output: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(config)?;
    let base = config.parent().unwrap_or_else(|| Path::new("."));
    match name {
        AppName::Stencil => {
            let f: StencilFile = serde_json::from_str(&text)?;
            let c = f.params;
            c.validate()?;
            let ranks = c.ranks();
            let fabric = harness::load_fabric(
                resolve(base, f.topology).as_deref(),
                resolve(base, f.tables).as_deref(),
                || {
                    if ranks == 1 {
                        TopologySpec::new(1, DEFAULT_IFACES, [])
                    } else {
                        make_bus_with(ranks, DEFAULT_IFACES)
                    }
                },
                RuntimeConfig::default(),
            )?;
            let mut rng = StdRng::seed_from_u64(f.seed);
            let grid: Vec<f32> = (0..c.nx * c.ny).map(|_| rng.gen_range(0.0..1.0)).collect();
            let run = harness::app_stencil(&fabric, &c, &grid)?;
            let reference = harness::stencil_reference(&grid, c.nx, c.ny, c.t);
            let exact = run
                .grid
                .iter()
                .map(|x| x.to_bits())
                .eq(reference.iter().map(|x| x.to_bits()));
            let hiding = harness::stencil_hiding_check(&c)?;
            println!("cycles: {}", run.cycles);
            println!("matches sequential reference: {exact}");
            println!(
                "communication hidden: {} ({} / {} vs {} / {})",
                hiding.hidden, hiding.compute, hiding.b_mem, hiding.communicate, hiding.b_comm
            );
            if let Some(out) = output {
                write_rows(
                    &out,
                    run.grid
                        .chunks(c.ny)
                        .map(|row| row.iter().map(f32::to_string).collect::<Vec<_>>().join(",")),
                )?;
            }
            if !exact {
                return Err(SmiError::ProtocolViolation(
                    "stencil result differs from reference".into(),
                ));
            }
            Ok(())
        }
        AppName::Gesummv => {
            let f: GesummvFile = serde_json::from_str(&text)?;
            let fabric = harness::load_fabric(
                resolve(base, f.topology).as_deref(),
                resolve(base, f.tables).as_deref(),
                || make_bus_with(2, DEFAULT_IFACES),
                RuntimeConfig::default(),
            )?;
            let n = f.n;
            let mut rng = StdRng::seed_from_u64(f.seed);
            let mut fill = |len: usize| (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>();
            let (a, b, x) = (fill(n * n), fill(n * n), fill(n));
            let run = harness::app_gesummv(&fabric, n, f.alpha, f.beta, &a, &b, &x)?;
            let reference = harness::gesummv_reference(n, f.alpha, f.beta, &a, &b, &x);
            let exact = run
                .y
                .iter()
                .map(|v| v.to_bits())
                .eq(reference.iter().map(|v| v.to_bits()));
            println!("cycles: {}", run.cycles);
            println!("elements streamed: {}", run.elements_sent);
            println!("matches sequential reference: {exact}");
            if let Some(out) = output {
                write_rows(&out, run.y.iter().map(f32::to_string))?;
            }
            if !exact {
                return Err(SmiError::ProtocolViolation(
                    "gesummv result differs from reference".into(),
                ));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Topo { cmd } => topo(cmd),
        Cmd::Routes { cmd } => routes(cmd),
        Cmd::Bench { name, config, output } => bench(name, config, output),
        Cmd::App { name, config, output } => app(name, &config, output),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
