use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gradnet::analysis::{self, output, AnalysisError, GainDb, NewtonConfig, TranConfig};
use gradnet::circuit::{Circuit, Target};
use gradnet::compiler::{self, CompileError};
use gradnet::netlist::{self, NetlistDocument, Severity};
use gradnet::optim::{AlOptions, Status};
use gradnet::sizing::{self, CornerSpec, SizingError, SizingSpec};
use gradnet::submodel::{synth, table, DirTableSource, SynthTableSource, TableContext, TableError, TableSource};

const TABLE_DIR_ENV: &str = "GRADNET_TABLE_DIR";

#[derive(Parser)]
#[command(name = "gradnet", version, about = "Hierarchical circuit equations with gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Netlist JSON file.
    netlist: PathBuf,
    /// Write the result here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Process corner used to select device tables [default: tt]. For `size`
    /// it replaces the spec's corner list.
    #[arg(long)]
    corner: Option<String>,
    /// Temperature in °C used to select device tables [default: 27].
    #[arg(long = "temp", allow_negative_numbers = true)]
    temperature: Option<f64>,
    /// Directory with `<device>.json` table files. Defaults to $GRADNET_TABLE_DIR,
    /// then to the built-in synthetic tables.
    #[arg(long)]
    tables: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and statically check a netlist.
    Lint {
        netlist: PathBuf,
    },
    /// Compile and instantiate a netlist.
    Compile {
        #[command(flatten)]
        common: Common,
        /// Print the node and parameter frames of every instance.
        #[arg(long)]
        dump: bool,
    },
    /// DC operating point as JSON.
    Op {
        #[command(flatten)]
        common: Common,
    },
    /// Fixed-step transient from the DC point, as CSV.
    Tran {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tend: f64,
        #[arg(long)]
        dt: f64,
        /// 1 for backward Euler, 0.5 for trapezoidal.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
    /// Logarithmic small-signal sweep around the DC point, as CSV.
    Ac {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fstart: f64,
        #[arg(long)]
        fstop: f64,
        #[arg(long, default_value_t = 10)]
        points_per_decade: usize,
    },
    /// Gradient of a loss with respect to parameters, as JSON.
    Sense {
        #[command(flatten)]
        common: Common,
        /// `node:<signal>` for a DC voltage or current, `gain:<signal>@<freq_hz>`
        /// for the AC magnitude in dB.
        #[arg(long)]
        loss: String,
        /// Globals or `<instance path>.<param>` targets, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        wrt: Vec<String>,
    },
    /// Constrained sizing over the spec's corners.
    Size {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spec: PathBuf,
        /// Write the text report here instead of stderr.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write the synthetic NMOS/PMOS table files.
    GenTables {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Store table data base64-encoded instead of as number arrays.
        #[arg(long)]
        base64: bool,
    },
}

/// A domain error reported as `error: <name>: <message>` with exit code 1.
struct Failure {
    name: &'static str,
    message: String,
}

impl Failure {
    fn new(name: &'static str, message: impl Into<String>) -> Self {
        Self { name, message: message.into() }
    }
}

impl From<CompileError> for Failure {
    fn from(e: CompileError) -> Self {
        Failure::new(e.name(), e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::new(e.name(), e.to_string())
    }
}

impl From<SizingError> for Failure {
    fn from(e: SizingError) -> Self {
        // compile errors carry their own, more specific names
        let name = match &e {
            SizingError::Compile(c) => c.name(),
            _ => e.name(),
        };
        Failure::new(name, e.to_string())
    }
}

impl From<TableError> for Failure {
    fn from(e: TableError) -> Self {
        Failure::new(e.name(), e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new("IoError", format!("{}: {e}", path.display())))
}

fn write(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::new("IoError", format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_doc(path: &Path) -> Result<NetlistDocument, Failure> {
    netlist::parse(&read(path)?).map_err(|e| Failure::new(e.name(), e.to_string()))
}

fn table_source(dir: Option<&Path>) -> Box<dyn TableSource> {
    let dir = dir.map(Path::to_path_buf).or_else(|| std::env::var_os(TABLE_DIR_ENV).map(PathBuf::from));
    match dir {
        Some(d) => Box::new(DirTableSource::new(d)),
        None => Box::new(SynthTableSource::default()),
    }
}

impl Common {
    fn corner(&self) -> &str {
        self.corner.as_deref().unwrap_or("tt")
    }

    fn temperature(&self) -> f64 {
        self.temperature.unwrap_or(27.0)
    }
}

fn build(c: &Common) -> Result<Circuit, Failure> {
    let doc = load_doc(&c.netlist)?;
    let tables = table_source(c.tables.as_deref());
    let ctx = TableContext { source: tables.as_ref(), corner: c.corner(), temperature: c.temperature() };
    Ok(Circuit::build(&doc, Some(ctx))?)
}

fn lint(path: &Path) -> Result<(), Failure> {
    let doc = load_doc(path)?;
    let diags = netlist::validate(&doc);
    for d in &diags {
        println!("{d}");
    }
    match diags.iter().find(|d| d.severity == Severity::Error) {
        Some(first) => {
            let n = diags.iter().filter(|d| d.severity == Severity::Error).count();
            Err(Failure::new(first.code.as_str(), format!("{n} error(s)")))
        }
        None => Ok(()),
    }
}

fn compile(c: &Common, dump: bool) -> Result<(), Failure> {
    let ckt = build(c)?;
    let text = if dump {
        compiler::dump_indexes(&ckt.rules, &ckt.top)
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "top: {}", ckt.top_name());
        let _ = writeln!(s, "rules: {}", ckt.rules.rules.len());
        let _ = writeln!(s, "unknowns: {}", ckt.n);
        for (i, n) in ckt.names.iter().enumerate() {
            let _ = writeln!(s, "  {i} {n}");
        }
        s
    };
    write(c.output.as_deref(), &text)
}

fn op(c: &Common) -> Result<(), Failure> {
    let ckt = build(c)?;
    let sol = analysis::solve_dc(&ckt, &NewtonConfig::default())?;
    write(c.output.as_deref(), &output::dc_json(&ckt.names, &sol.x))
}

fn tran(c: &Common, tend: f64, dt: f64, beta: f64) -> Result<(), Failure> {
    let ckt = build(c)?;
    let cfg = TranConfig { t_end: tend, dt, beta, initial: None, newton: NewtonConfig::default() };
    let traj = analysis::solve_tran(&ckt, &cfg)?;
    write(c.output.as_deref(), &output::tran_csv(&ckt.names, &traj))
}

fn ac(c: &Common, fstart: f64, fstop: f64, ppd: usize) -> Result<(), Failure> {
    let ckt = build(c)?;
    let freqs = analysis::log_sweep(fstart, fstop, ppd)?;
    let x = analysis::solve_dc(&ckt, &NewtonConfig::default())?.x;
    let sweep = analysis::ac_sweep(&ckt, &x, &freqs)?;
    write(c.output.as_deref(), &output::ac_csv(&ckt.names, &sweep))
}

enum Loss {
    Node(usize),
    Gain { node: usize, freq_hz: f64 },
}

fn parse_loss(ckt: &Circuit, spec: &str) -> Result<Loss, Failure> {
    let usage = || Failure::new("LossSpecError", format!("loss `{spec}` must be node:<signal> or gain:<signal>@<freq_hz>"));
    let signal =
        |n: &str| ckt.signal_index(n).ok_or_else(|| Failure::new("UnknownSignal", format!("no signal named `{n}`")));
    let (kind, rest) = spec.split_once(':').ok_or_else(usage)?;
    match kind {
        "node" => Ok(Loss::Node(signal(rest)?)),
        "gain" => {
            let (n, f) = rest.split_once('@').ok_or_else(usage)?;
            let freq_hz: f64 = f.parse().map_err(|_| usage())?;
            Ok(Loss::Gain { node: signal(n)?, freq_hz })
        }
        _ => Err(usage()),
    }
}

fn sense(c: &Common, loss: &str, wrt: &[String]) -> Result<(), Failure> {
    let ckt = build(c)?;
    let loss = parse_loss(&ckt, loss)?;
    let targets = wrt
        .iter()
        .map(|n| ckt.target(n).ok_or_else(|| Failure::new("UnknownTarget", format!("no Global or instance parameter `{n}`"))))
        .collect::<Result<Vec<Target>, _>>()?;
    let cfg = NewtonConfig::default();
    let (value, grad) = match loss {
        Loss::Node(i) => {
            let x = analysis::solve_dc(&ckt, &cfg)?.x;
            let mut g = vec![0.0; ckt.n];
            g[i] = 1.0;
            (x[i], analysis::dc_sensitivity(&ckt, &x, &g, &targets)?)
        }
        Loss::Gain { node, freq_hz } => {
            let r = analysis::solve_dcac(&ckt, 2.0 * std::f64::consts::PI * freq_hz, &GainDb { node }, &targets, &cfg)?;
            (r.loss, r.grad)
        }
    };
    let mut items: Vec<(&str, f64)> = vec![("loss", value)];
    items.extend(wrt.iter().map(String::as_str).zip(grad));
    write(c.output.as_deref(), &output::named_json(items))
}

fn size(c: &Common, spec_path: &Path, report: Option<&Path>) -> Result<(), Failure> {
    let doc = load_doc(&c.netlist)?;
    let mut spec = SizingSpec::parse(&read(spec_path)?)?;
    if c.corner.is_some() || c.temperature.is_some() {
        spec.corners = vec![CornerSpec { corner: c.corner().to_string(), temperature: c.temperature() }];
    }
    let tables = table_source(c.tables.as_deref());
    let problem = sizing::build_problem(&doc, &spec, tables.as_ref(), Default::default())?;
    let cb = sizing::make_callbacks(&problem);
    let result = sizing::optimize(&cb, &AlOptions::default())?;

    let mut items: Vec<(&str, f64)> = result.p_opt.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    items.push(("objective", result.objective));
    items.push(("constraint_violation", result.constraint_violation));
    write(c.output.as_deref(), &output::named_json(items))?;
    let text = result.report();
    match report {
        Some(p) => write(Some(p), &text)?,
        None => eprint!("{text}"),
    }
    match result.status {
        Status::Optimal => Ok(()),
        s => Err(Failure::new(s.as_str(), "sizing did not reach an optimal point")),
    }
}

fn gen_tables(out: &Path, base64: bool) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| Failure::new("IoError", format!("{}: {e}", out.display())))?;
    for (device, pol) in [("NMOSTYPE", synth::Polarity::N), ("PMOSTYPE", synth::Polarity::P)] {
        let mut tables = Vec::new();
        for corner in synth::CORNERS {
            for t in synth::TEMPERATURES {
                tables.push(synth::mos_table(device, pol, corner, t)?);
            }
        }
        let text = table::write_table_file(&tables, base64)?;
        let path = out.join(format!("{device}.json"));
        write(Some(&path), &text)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Lint { netlist } => lint(&netlist),
        Command::Compile { common, dump } => compile(&common, dump),
        Command::Op { common } => op(&common),
        Command::Tran { common, tend, dt, beta } => tran(&common, tend, dt, beta),
        Command::Ac { common, fstart, fstop, points_per_decade } => ac(&common, fstart, fstop, points_per_decade),
        Command::Sense { common, loss, wrt } => sense(&common, &loss, &wrt),
        Command::Size { common, spec, report } => size(&common, &spec, report.as_deref()),
        Command::GenTables { out, base64 } => gen_tables(&out, base64),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.name, f.message);
            ExitCode::from(1)
        }
    }
}
