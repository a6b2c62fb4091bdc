use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rangefp::formats::pow2;
use rangefp::training::{self, report, Outcome, TrainConfig};
use rangefp::{hex_f32, instructions, reference, roundfp, selftest, AccumMode, FpFormat, FpValue};

/// Parametric 16-bit floating-point emulation toolkit.
#[derive(Parser)]
#[command(name = "rangefp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the range constants of a format.
    FormatInfo {
        #[arg(long)]
        fmt: FpFormat,
    },
    /// Round one value into a format.
    Round {
        #[arg(long)]
        fmt: FpFormat,
        /// Decimal, hex float (0x1.8p-3), 2^k, inf or nan.
        #[arg(long, allow_hyphen_values = true)]
        value: String,
        /// Print values as hex floats.
        #[arg(long)]
        hex: bool,
    },
    /// Dot product of two vectors, checked against the exact oracle.
    Dot {
        #[arg(long)]
        fmt: FpFormat,
        #[arg(long, default_value = "fmac8")]
        mode: AccumMode,
        /// File with a `w:` line and an `x:` line of values.
        #[arg(long)]
        file: PathBuf,
    },
    /// Run a training job described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Tabulate the runs in a directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized cross-check against the exact oracle.
    SelfTest {
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

const EXIT_ERROR: u8 = 1;

fn outcome_code(o: Outcome) -> u8 {
    match o {
        Outcome::Converged => 0,
        Outcome::Degraded => 2,
        Outcome::Diverged => 3,
    }
}

/// Parses a value the way users write them: `1.5`, `-0x1.8p-3`, `2^-24`,
/// `-2^3`, `inf`, `nan`.
fn parse_value(s: &str) -> Result<f32> {
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let mag = if let Some(k) = body.strip_prefix("2^") {
        let k: i32 = k.parse().with_context(|| format!("bad exponent in {s:?}"))?;
        if !(-149..=127).contains(&k) {
            bail!("{s:?} is outside binary32");
        }
        pow2(k) as f32
    } else if body.starts_with("0x") || body.starts_with("0X") {
        hexf_parse::parse_hexf32(body, false).map_err(|e| anyhow::anyhow!("bad hex float {s:?}: {e}"))?
    } else {
        body.parse::<f32>().with_context(|| format!("cannot parse {s:?} as a number"))?
    };
    Ok(if neg { -mag } else { mag })
}

fn show(x: f32, hex: bool) -> String {
    if hex {
        hex_f32(x)
    } else {
        format!("{x:e}")
    }
}

fn encoding(v: FpValue) -> String {
    let digits = v.format().width().div_ceil(4) as usize;
    format!("0x{:0digits$x}", v.to_bits())
}

fn format_info(fmt: FpFormat) -> String {
    let c = fmt.constants();
    let p = fmt.man_bits();
    let mut s = String::new();
    let _ = writeln!(s, "format        {fmt}");
    let _ = writeln!(s, "width         {}", fmt.width());
    let _ = writeln!(s, "bias          {}", fmt.bias());
    let _ = writeln!(s, "E_min         {}", c.e_min);
    let _ = writeln!(s, "E_max         {}", c.e_max);
    match c.min_denormal_exp {
        Some(k) => {
            let _ = writeln!(s, "min_denormal  2^{k} ({:e})", pow2(k));
        }
        None => {
            let _ = writeln!(s, "min_denormal  none (flush to zero)");
        }
    }
    let _ = writeln!(s, "min_normal    2^{} ({:e})", c.min_normal_exp, c.min_normal());
    let _ = writeln!(s, "max_finite    (2-2^-{p})*2^{} ({:e})", c.e_max, c.max_finite());
    s
}

fn round_cmd(fmt: FpFormat, value: &str, hex: bool) -> Result<String> {
    let x = parse_value(value)?;
    let out = roundfp(x, fmt);
    let mut s = String::new();
    let _ = writeln!(s, "input     {}", show(x, hex));
    let _ = writeln!(s, "value     {}", show(out.value.value(), hex));
    let _ = writeln!(s, "encoding  {}", encoding(out.value));
    let _ = writeln!(s, "class     {}", out.value.classify());
    let _ = writeln!(s, "flags     {}", out.flags);
    Ok(s)
}

/// Reads `w: ...` and `x: ...` lines; values separated by spaces or commas.
fn read_vectors(path: &Path, fmt: FpFormat) -> Result<(Vec<f32>, Vec<f32>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut w, mut x) = (None, None);
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, rest) = body
            .split_once(':')
            .with_context(|| format!("line {}: expected `w:` or `x:`", i + 1))?;
        let vals = rest
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                let v = parse_value(t).with_context(|| format!("line {}", i + 1))?;
                if !fmt.is_representable(v) {
                    bail!("line {}: {t} is not a {fmt} value", i + 1);
                }
                Ok(v)
            })
            .collect::<Result<Vec<f32>>>()?;
        let slot = match key.trim() {
            "w" => &mut w,
            "x" => &mut x,
            other => bail!("line {}: unknown vector {other:?}", i + 1),
        };
        if slot.replace(vals).is_some() {
            bail!("line {}: vector {} given twice", i + 1, key.trim());
        }
    }
    let (w, x) = (w.context("missing `w:` line")?, x.context("missing `x:` line")?);
    if w.len() != x.len() {
        bail!("length mismatch: w has {}, x has {}", w.len(), x.len());
    }
    Ok((w, x))
}

fn dot_cmd(fmt: FpFormat, mode: AccumMode, file: &Path) -> Result<(String, bool)> {
    let (w, x) = read_vectors(file, fmt)?;
    let got = instructions::dot(&w, &x, mode, fmt);
    let want = reference::dot(&w, &x, mode, fmt);
    let ok = got.to_bits() == want.to_bits();
    let enc = |v: f32| FpValue::new(v, fmt).map(encoding).unwrap_or_else(|_| "?".into());
    let mut s = String::new();
    let _ = writeln!(s, "n         {}", w.len());
    let _ = writeln!(s, "result    {} {} ({})", hex_f32(got), enc(got), got);
    let _ = writeln!(s, "oracle    {} {} ({})", hex_f32(want), enc(want), want);
    let _ = writeln!(s, "{}", if ok { "MATCH" } else { "MISMATCH" });
    Ok((s, ok))
}

fn train_cmd(config: &Path, out: &Path) -> Result<u8> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = TrainConfig::parse(&text).with_context(|| format!("in {}", config.display()))?;
    let result = training::train(&cfg)?;
    let files = training::write_run_files(&result, out)?;
    let r = result.report();
    println!("run_id        {}", cfg.run_id);
    println!("steps         {} ({} skipped)", r.steps_run, r.skipped_steps);
    println!("final_loss    {}", r.final_loss);
    println!("final_scale   {}", r.final_scale);
    println!("max_denormal  {}", r.summary.global_max);
    println!("outcome       {}", r.outcome);
    println!("wrote         {}", files.summary_json.display());
    Ok(outcome_code(r.outcome))
}

fn report_cmd(runs: &Path, out: Option<&Path>) -> Result<u8> {
    let scan = report::scan(runs)?;
    for w in &scan.warnings {
        eprintln!("warning: {w}");
    }
    let table = report::render(&scan.reports);
    print!("{table}");
    if let Some(path) = out {
        std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if scan.warnings.is_empty() { 0 } else { EXIT_ERROR })
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::FormatInfo { fmt } => {
            print!("{}", format_info(fmt));
            Ok(0)
        }
        Command::Round { fmt, value, hex } => {
            print!("{}", round_cmd(fmt, &value, hex)?);
            Ok(0)
        }
        Command::Dot { fmt, mode, file } => {
            let (text, ok) = dot_cmd(fmt, mode, &file)?;
            print!("{text}");
            Ok(if ok { 0 } else { EXIT_ERROR })
        }
        Command::Train { config, out } => train_cmd(&config, &out),
        Command::Report { runs, out } => report_cmd(&runs, out.as_deref()),
        Command::SelfTest { samples, seed } => {
            let checks = selftest::run(samples, seed);
            for c in &checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict}  {}  {}", c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { EXIT_ERROR })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap exits 2 on usage errors, which is taken by "degraded".
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
