use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use qccs::bisim::{compare, BisimError, BisimReport, Counterexample, Mode, Reason};
use qccs::demo::{teleport, DemoError, TeleportReport};
use qccs::export::{lts_dot, lts_json, trace_json, ConfigJson};
use qccs::frontend::{load, pretty, Program, SourceError};
use qccs::laws::{congruence, equality_sum, static_laws, Mutation, SuiteReport};
use qccs::lp::LP_TOL;
use qccs::lts::{build_lts, run_trace, terminal_distribution, Bounds, Configuration, Lts, LtsError, Scheduler, TraceEnd};

const OPEN_CAVEAT: &str = "note: open mode explores environment inputs from finite domains only; \
a `distinguished` verdict is sound, an `equivalent` verdict covers only the sampled inputs";

#[derive(Parser)]
#[command(name = "qccs", version, about = "Interpreter and equivalence checker for quantum CCS")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Verbose logging on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a source file.
    Check { file: PathBuf },
    /// Explore the transition system of a configuration.
    Lts(LtsArgs),
    /// Execute one path through a configuration.
    Run(RunArgs),
    /// Decide bisimilarity of two configurations.
    Bisim(BisimArgs),
    /// Property suites over random terms.
    Laws(LawsArgs),
    /// Built-in demonstrations.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
}

#[derive(Args)]
struct Exploration {
    /// Allow environment inputs from finite domains.
    #[arg(long)]
    open: bool,
    #[arg(long, value_name = "N", default_value_t = Bounds::default().max_nodes)]
    max_nodes: usize,
    #[arg(long, value_name = "D", default_value_t = Bounds::default().max_depth)]
    max_depth: usize,
}

impl Exploration {
    fn bounds(&self) -> Bounds {
        Bounds { max_nodes: self.max_nodes, max_depth: self.max_depth }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(Args)]
struct LtsArgs {
    file: PathBuf,
    /// Configuration to explore (default: `Main`, else the first).
    #[arg(long, value_name = "NAME")]
    config: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[command(flatten)]
    explore: Exploration,
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    #[arg(long, value_name = "NAME")]
    config: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `first`, `random` or `interactive-script FILE`.
    #[arg(long, num_args = 1..=2, value_names = ["KIND", "FILE"], default_values = ["first"])]
    scheduler: Vec<String>,
    #[arg(long, value_name = "N", default_value_t = 1000)]
    max_steps: usize,
    #[arg(long)]
    open: bool,
}

#[derive(Args)]
struct BisimArgs {
    file: PathBuf,
    /// Left configuration; with neither side given, every `check`
    /// directive in the file is run.
    #[arg(long, value_name = "NAME", requires = "right")]
    left: Option<String>,
    #[arg(long, value_name = "NAME", requires = "left")]
    right: Option<String>,
    #[arg(long, default_value = "strong")]
    mode: Mode,
    /// LP tolerance (default: QCCS_TOL, else 1e-7).
    #[arg(long, value_name = "T", env = "QCCS_TOL")]
    tol: Option<f64>,
    #[command(flatten)]
    explore: Exploration,
}

#[derive(Args)]
struct LawsArgs {
    /// Random term samples for the static laws.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Related pairs per congruence suite.
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inject a fault into the right-hand sides (`swap-gate`).
    #[arg(long, value_name = "KIND")]
    mutate: Option<Mutation>,
}

#[derive(Subcommand)]
enum Demo {
    /// Teleport `alpha|0> + beta|1>` and check every branch.
    Teleport {
        #[arg(long, default_value_t = 0.6, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, default_value_t = 0.8, allow_hyphen_values = true)]
        beta: f64,
    },
}

/// Exit status: 0 success or equivalent, 1 failed check or distinguished,
/// 2 usage or runtime error.
struct Outcome {
    code: u8,
    json: Value,
    text: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Warn })
        .parse_env("QCCS_LOG")
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let error_code = if matches!(cli.command, Command::Check { .. }) { 1 } else { 2 };
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            let msg = format!("{e:#}");
            Outcome { code: error_code, json: json!({ "error": msg }), text: format!("error: {msg}") }
        }
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&outcome.json).expect("serializable"));
    } else if outcome.code == error_code && outcome.json.get("error").is_some() {
        eprintln!("{}", outcome.text);
    } else {
        print!("{}", outcome.text);
    }
    ExitCode::from(outcome.code)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Check { file } => cmd_check(file),
        Command::Lts(a) => cmd_lts(a, cli.json),
        Command::Run(a) => cmd_run(a),
        Command::Bisim(a) => cmd_bisim(a),
        Command::Laws(a) => cmd_laws(a),
        Command::Demo { which: Demo::Teleport { alpha, beta } } => cmd_teleport(*alpha, *beta),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn located(path: &Path, e: &SourceError) -> anyhow::Error {
    anyhow!("{}:{}:{}: {}", path.display(), e.line, e.col, e.message)
}

fn load_file(path: &Path, open: bool) -> Result<Program> {
    let mut program = load(&read(path)?, &BTreeMap::new()).map_err(|e| located(path, &e))?;
    program.policy.closed_only = !open;
    if open {
        eprintln!("{OPEN_CAVEAT}");
    }
    Ok(program)
}

fn pick<'a>(program: &'a Program, name: Option<&str>) -> Result<(String, &'a Configuration)> {
    match name {
        Some(n) => program.config(n).map(|c| (n.to_string(), c)).ok_or_else(|| anyhow!("no configuration named `{n}`")),
        None => program.main_config().map(|(n, c)| (n.to_string(), c)).ok_or_else(|| anyhow!("the file declares no configuration")),
    }
}

fn short(p: f64) -> String {
    let s = format!("{p:.10}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn complex_short(re: f64, im: f64) -> String {
    let round = |v: f64| (v * 1e10).round() / 1e10 + 0.0;
    qccs::linalg::format_complex(qccs::linalg::C64::new(round(re), round(im)))
}

fn cmd_check(path: &Path) -> Result<Outcome> {
    let text = read(path)?;
    let file = qccs::frontend::parse(&text).map_err(|e| located(path, &e))?;
    let program = qccs::frontend::elaborate(&file).map_err(|e| located(path, &e))?;
    let summary = json!({
        "ok": true,
        "procs": file.procs.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
        "configs": program.configs.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "checks": program.checks.len(),
    });
    let text = format!(
        "{}: ok ({} proc(s), {} config(s), {} check(s))\n",
        path.display(),
        file.procs.len(),
        program.configs.len(),
        program.checks.len()
    );
    Ok(Outcome { code: 0, json: summary, text })
}

fn explore(program: &Program, cfg: &Configuration, bounds: Bounds) -> Result<Lts> {
    build_lts(std::slice::from_ref(cfg), &program.env, &program.policy, bounds).map_err(Into::into)
}

fn cmd_lts(a: &LtsArgs, json_flag: bool) -> Result<Outcome> {
    let program = load_file(&a.file, a.explore.open)?;
    let (_, cfg) = pick(&program, a.config.as_deref())?;
    let lts = explore(&program, cfg, a.explore.bounds())?;
    let j = serde_json::to_value(lts_json(&lts))?;
    let text = match a.format {
        Format::Dot if !json_flag => lts_dot(&lts),
        _ => format!("{}\n", serde_json::to_string_pretty(&j)?),
    };
    let j = match a.format {
        Format::Dot => json!({ "dot": lts_dot(&lts) }),
        Format::Json => j,
    };
    Ok(Outcome { code: 0, json: j, text })
}

fn read_script(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for w in line.split_whitespace() {
            out.push(w.parse().with_context(|| format!("{}:{}: `{w}` is not a transition index", path.display(), n + 1))?);
        }
    }
    Ok(out)
}

fn cmd_run(a: &RunArgs) -> Result<Outcome> {
    let program = load_file(&a.file, a.open)?;
    let (name, cfg) = pick(&program, a.config.as_deref())?;
    let scheduler = match a.scheduler.as_slice() {
        [k] if k == "first" => Scheduler::First,
        [k] if k == "random" => Scheduler::Random,
        [k, f] if k == "interactive-script" => Scheduler::Script(read_script(Path::new(f))?),
        other => bail!("unknown scheduler `{}` (expected first, random or interactive-script FILE)", other.join(" ")),
    };
    let trace = run_trace(cfg, &program.env, &program.policy, &scheduler, a.seed, a.max_steps)?;
    let mut text = format!("run {name} (seed {})\n", a.seed);
    for (i, s) in trace.steps.iter().enumerate() {
        text += &format!("{i:>3}. {}\n     --{}-->", pretty(&s.from.process), s.action);
        if s.distribution.len() == 1 {
            text += "\n";
        } else {
            let ps: Vec<String> = s.distribution.iter().map(|(p, _)| short(*p)).collect();
            text += &format!(" [{}] took branch {}\n", ps.join(", "), s.sampled);
        }
    }
    text += &format!("end: {}\n", pretty(&trace.last.process));
    match &trace.end {
        TraceEnd::Terminated => text += "terminated\n",
        TraceEnd::Stuck { blocked } => text += &format!("stuck; blocked: {}\n", blocked.join(", ")),
        TraceEnd::StepLimit => text += &format!("stopped after {} steps\n", a.max_steps),
    }
    text += &context_text(&trace.last);
    let mut j = serde_json::to_value(trace_json(&trace))?;
    // Terminal distribution over all schedules resolved in order, when finite.
    if let Ok(lts) = explore(&program, cfg, Bounds::default()) {
        let dist = terminal_distribution(&lts, lts.roots()[0]);
        text += &format!("terminal distribution ({} outcome(s)):\n", dist.len());
        let mut out = Vec::new();
        for (node, p) in &dist {
            let c = lts.node(*node);
            text += &format!("  {} : {}\n", short(*p), pretty(&c.process));
            text += &indent(&context_text(c), 4);
            out.push(json!({ "probability": p, "configuration": ConfigJson::from(c) }));
        }
        j["terminal"] = Value::Array(out);
    }
    Ok(Outcome { code: 0, json: j, text })
}

fn indent(s: &str, n: usize) -> String {
    s.lines().map(|l| format!("{}{l}\n", " ".repeat(n))).collect()
}

fn context_text(c: &Configuration) -> String {
    let rho = c.context.rho();
    let mut s = format!("context [{}]:\n", c.context.vars().join(", "));
    for row in rho.to_rows() {
        let cells: Vec<String> = row.iter().map(|z| qccs::linalg::format_complex(*z)).collect();
        s += &format!("  {}\n", cells.join("  "));
    }
    s
}

fn tolerance(t: Option<f64>) -> Result<f64> {
    let t = t.unwrap_or(LP_TOL);
    if !(t > 0.0 && t < 1.0) {
        bail!("tolerance must lie in (0, 1), got {t}");
    }
    Ok(t)
}

fn symbol(mode: Mode) -> &'static str {
    match mode {
        Mode::Strong => "~",
        Mode::Weak => "≈",
        Mode::Eq => "≃",
    }
}

fn describe(c: &Counterexample, lts: &Lts, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth + 1);
    let node = |i: usize| format!("n{i} {}", pretty(&lts.node(i).process));
    match c.reason {
        Reason::TerminalContext => {
            *out += &format!("{pad}stuck configurations with different contexts: {} / {}\n", node(c.mover), node(c.responder));
        }
        Reason::StuckVersusActive => {
            *out += &format!("{pad}{} is stuck but {} can move\n", node(c.mover), node(c.responder));
        }
        Reason::UnmatchedMove => {
            let mass: Vec<String> = c.class_vector.iter().map(|(b, m)| format!("B{b}:{}", short(*m))).collect();
            *out += &format!(
                "{pad}{} --{}--> [{}] has no match from {}\n",
                node(c.mover),
                c.action.as_deref().unwrap_or("?"),
                mass.join(" "),
                node(c.responder)
            );
        }
    }
    if let Some(next) = &c.then {
        describe(next, lts, depth + 1, out);
    }
}

fn verdict(lts: &Lts, r: &BisimReport, left: &str, right: &str) -> (Value, String) {
    let name = if r.equivalent { "equivalent" } else { "distinguished" };
    let mut j = json!({
        "verdict": name,
        "mode": r.mode,
        "left": { "config": left, "node": r.left },
        "right": { "config": right, "node": r.right },
        "nodes": (0..lts.len()).map(|i| pretty(&lts.node(i).process)).collect::<Vec<_>>(),
        "blocks": r.blocks,
        "rounds": r.rounds,
        "warnings": r.warnings,
    });
    let mut text = if r.equivalent {
        format!("{left} {} {right}: equivalent ({} nodes, {} blocks)\n", symbol(r.mode), lts.len(), r.blocks.len())
    } else {
        format!("{left} {} {right}: distinguished\n", symbol(r.mode))
    };
    if let Some(c) = &r.counterexample {
        j["counterexample"] = serde_json::to_value(c).expect("serializable");
        describe(c, lts, 0, &mut text);
    } else {
        j["witness"] = serde_json::to_value(&r.witness).expect("serializable");
    }
    for w in &r.warnings {
        text += &format!("warning: {w}\n");
    }
    (j, text)
}

fn cmd_bisim(a: &BisimArgs) -> Result<Outcome> {
    let program = load_file(&a.file, a.explore.open)?;
    let tol = tolerance(a.tol)?;
    let pairs: Vec<(String, String, Mode)> = match (&a.left, &a.right) {
        (Some(l), Some(r)) => vec![(l.clone(), r.clone(), a.mode)],
        _ => program.checks.iter().map(|c| (c.left.clone(), c.right.clone(), c.mode)).collect(),
    };
    if pairs.is_empty() {
        bail!("give --left and --right, or add `check` directives to the file");
    }
    let mut results = Vec::new();
    let mut text = String::new();
    let mut all = true;
    for (l, r, mode) in &pairs {
        let lc = program.config(l).ok_or_else(|| anyhow!("no configuration named `{l}`"))?;
        let rc = program.config(r).ok_or_else(|| anyhow!("no configuration named `{r}`"))?;
        let (lts, report) = compare(lc, rc, &program.env, &program.policy, a.explore.bounds(), *mode, tol)
            .map_err(|e: BisimError| anyhow!(e))?;
        let (j, t) = verdict(&lts, &report, l, r);
        all &= report.equivalent;
        results.push(j);
        text += &t;
    }
    let j = if results.len() == 1 { results.pop().expect("one result") } else { json!({ "results": results }) };
    Ok(Outcome { code: if all { 0 } else { 1 }, json: j, text })
}

fn suite_text(r: &SuiteReport, out: &mut String) {
    for p in &r.results {
        let status = if p.passed() { "PASS" } else { "FAIL" };
        *out += &format!("{status} {:<28} {} checked, {} failed\n", p.name, p.checked, p.failures.len());
        for f in p.failures.iter().take(3) {
            *out += &format!("     sample {}: {}  vs  {}  ({})\n", f.sample, f.left, f.right, f.detail);
        }
    }
}

fn cmd_laws(a: &LawsArgs) -> Result<Outcome> {
    let statics = static_laws(a.samples, a.seed, a.mutate);
    let mut suites = vec![("static laws", statics)];
    if a.mutate.is_none() {
        suites.push(("congruence of ~", congruence(a.pairs, a.seed, Mode::Strong)));
        suites.push(("congruence of ≈", congruence(a.pairs, a.seed, Mode::Weak)));
        suites.push(("≃ and summation", equality_sum(a.pairs.div_ceil(2), a.seed)));
    }
    let mut text = String::new();
    let mut passed = true;
    for (title, s) in &suites {
        text += &format!("{title} (seed {}, {} samples)\n", s.seed, s.samples);
        suite_text(s, &mut text);
        passed &= s.passed;
    }
    text += if passed { "all properties hold\n" } else { "some properties failed\n" };
    let j = json!({
        "passed": passed,
        "seed": a.seed,
        "mutation": a.mutate,
        "suites": suites.iter().map(|(t, s)| json!({ "name": t, "report": s })).collect::<Vec<_>>(),
    });
    Ok(Outcome { code: if passed { 0 } else { 1 }, json: j, text })
}

fn cmd_teleport(alpha: f64, beta: f64) -> Result<Outcome> {
    let report: TeleportReport = match teleport(alpha, beta) {
        Ok(r) => r,
        Err(e @ DemoError::NotNormalised { .. }) => bail!("invalid input: {e}"),
        Err(DemoError::Lts(e @ LtsError::BoundExceeded { .. })) => bail!(e),
        Err(e) => bail!(e),
    };
    let mut text = format!(
        "teleporting {}|0> {} {}|1> ({} configurations explored)\n",
        short(alpha),
        if beta < 0.0 { "-" } else { "+" },
        short(beta.abs()),
        report.nodes
    );
    for b in &report.branches {
        let cells: Vec<String> = b
            .bob_state
            .iter()
            .map(|row| row.iter().map(|[re, im]| complex_short(*re, *im)).collect::<Vec<_>>().join(" "))
            .collect();
        text += &format!(
            "  p = {}  Bob's qubit [{}]  fidelity {}\n",
            short(b.probability),
            cells.join("; "),
            short(b.fidelity)
        );
    }
    text += if report.success { "every branch holds the input state\n" } else { "teleportation FAILED\n" };
    Ok(Outcome { code: if report.success { 0 } else { 1 }, json: serde_json::to_value(&report)?, text })
}
