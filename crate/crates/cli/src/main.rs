//! `dropsched` command line.
//!
//! Exit status: 0 on success, 2 when the input is rejected, 1 for internal
//! failures (and for `verify` mismatches).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dropsched::attention::{default_verify_cases, verify_case};
use dropsched::capacity::{capacity_table, DEFAULT_BUDGET_BYTES};
use dropsched::config::{resolve_model, resolve_workload};
use dropsched::mask::{generate_mask_with, write_mask, MaskOptions};
use dropsched::report::{estimate_json, sweep_csv, whatif_csv};
use dropsched::schedule::{estimate_with, pipeline_schedule, whatif_sweep};
use dropsched::{
    sweep, KeepThreshold, MaskLayout, ParallelismPlan, PerfModel, StrategyParams,
    StrategyRegistry, SweepGrid, WorkloadConfig,
};

#[derive(Parser)]
#[command(name = "dropsched", version, about = "Dropout RNG / GEMM overlap model and mask tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Baseline vs. overlapped runtime for one workload, as JSON.
    Model(ModelArgs),
    /// Speedup over a grid of sequence lengths and head counts.
    Sweep(SweepArgs),
    /// Per-GPU mask storage across parallelism plans, as JSON.
    Capacity(CapacityArgs),
    /// Write a dropout mask file.
    Maskgen(MaskgenArgs),
    /// Check fused and decoupled dropout agree bit for bit.
    Verify(VerifyArgs),
    /// Paired sweeps on the given hardware and on MMA-scaled hardware.
    Whatif(WhatifArgs),
}

#[derive(Args)]
struct HwArgs {
    /// Hardware preset name or model file path.
    #[arg(long, default_value = "gh100")]
    hw: String,
    /// Share of baseline time above which a point is GEMM-dominated.
    #[arg(long)]
    gemm_threshold: Option<f64>,
}

impl HwArgs {
    fn model(&self) -> dropsched::Result<PerfModel> {
        let mut m = resolve_model(&self.hw)?;
        if let Some(t) = self.gemm_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(dropsched::Error::InvalidParameter(format!(
                    "--gemm-threshold must be in (0, 1], got {t}"
                )));
            }
            m.gemm_threshold = t;
        }
        Ok(m)
    }
}

#[derive(Args)]
struct WorkloadArgs {
    /// Workload preset name or workload file path.
    #[arg(long, default_value = "llama2")]
    preset: String,
    #[arg(long)]
    batch: Option<u64>,
    #[arg(long)]
    sq: Option<u64>,
    #[arg(long)]
    nh: Option<u64>,
    #[arg(long)]
    dh: Option<u64>,
    /// Keep probability.
    #[arg(long)]
    p: Option<f64>,
    /// Philox rounds.
    #[arg(long)]
    rounds: Option<u32>,
}

impl WorkloadArgs {
    fn workload(&self) -> dropsched::Result<WorkloadConfig> {
        let mut w = resolve_workload(&self.preset)?;
        if let Some(v) = self.batch {
            w.batch = v;
        }
        if let Some(v) = self.sq {
            w.seq_len = v;
        }
        if let Some(v) = self.nh {
            w.n_heads = v;
        }
        if let Some(v) = self.dh {
            w.head_dim = v;
        }
        if let Some(v) = self.p {
            w.keep_prob = v;
        }
        if let Some(v) = self.rounds {
            w.philox_rounds = v;
        }
        w.validate()?;
        Ok(w)
    }
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    hw: HwArgs,
    /// Schedule compared against the fused baseline.
    #[arg(long, default_value = "overlap")]
    strategy: String,
    /// Sequence chunks for the pipelined strategy.
    #[arg(long, default_value_t = 1)]
    chunks: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated sequence lengths (default: 2048..65536).
    #[arg(long, value_delimiter = ',')]
    sq: Vec<u64>,
    /// Comma-separated head counts (default: 48..128 step 16).
    #[arg(long, value_delimiter = ',')]
    nh: Vec<u64>,
    /// Workload supplying the remaining dimensions.
    #[arg(long, default_value = "llama2")]
    template: String,
}

impl GridArgs {
    fn grid(&self) -> SweepGrid {
        let mut g = SweepGrid::standard();
        if !self.sq.is_empty() {
            g.seq_lens = self.sq.clone();
        }
        if !self.nh.is_empty() {
            g.n_heads = self.nh.clone();
        }
        g
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    hw: HwArgs,
    #[arg(long, default_value = "overlap")]
    strategy: String,
    #[arg(long, default_value_t = 1)]
    chunks: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CapacityArgs {
    /// Comma-separated workload presets or files.
    #[arg(long, value_delimiter = ',', default_value = "gpt3,llama2")]
    presets: Vec<String>,
    /// Extra sequence lengths applied to every preset.
    #[arg(long, value_delimiter = ',')]
    sq: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    tp: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    sp: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES)]
    budget_bytes: u64,
    #[arg(long, default_value_t = 1)]
    chunks: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaskgenArgs {
    #[arg(long)]
    b: u32,
    #[arg(long)]
    nh: u32,
    #[arg(long)]
    sq: u32,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    rounds: u32,
    #[arg(long, default_value_t = 0)]
    base_offset: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Refuse masks larger than this many bits.
    #[arg(long, default_value_t = dropsched::mask::DEFAULT_MAX_BITS)]
    max_bits: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Emit the report as JSON instead of text lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct WhatifArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    hw: HwArgs,
    /// Multiplier on MMA, L2, HBM and RF throughput.
    #[arg(long, default_value_t = 2.0)]
    factor: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<dropsched::Error> for Failure {
    fn from(e: dropsched::Error) -> Self {
        Self {
            code: if e.is_validation() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn internal(message: String) -> Failure {
    Failure { code: 1, message }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure {
            code: 2,
            message: format!("cannot write {}: {e}", path.display()),
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| internal(format!("stdout: {e}")))
        }
    }
}

fn json_text(v: &impl serde::Serialize) -> Result<String, Failure> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| internal(format!("json encoding: {e}")))
}

fn run_model(a: ModelArgs) -> Result<(), Failure> {
    let model = a.hw.model()?;
    let cfg = a.workload.workload()?;
    let strategy = StrategyRegistry::default().create(&a.strategy, &StrategyParams { chunks: a.chunks })?;
    let est = estimate_with(&model, &cfg, strategy.as_ref())?;
    let mut v = estimate_json(&est, &cfg, &model.hw.name);
    if a.strategy == "pipelined" {
        v["peak_mask_bytes"] = pipeline_schedule(&model, &cfg, a.chunks)?.peak_mask_bytes.into();
    }
    emit(a.out.as_deref(), &json_text(&v)?)
}

fn run_sweep(a: SweepArgs) -> Result<(), Failure> {
    let model = a.hw.model()?;
    let template = resolve_workload(&a.grid.template)?;
    let strategy = StrategyRegistry::default().create(&a.strategy, &StrategyParams { chunks: a.chunks })?;
    let rows = sweep(&a.grid.grid(), &template, &model, strategy.as_ref())?;
    let text = match a.format {
        Format::Csv => sweep_csv(&rows),
        Format::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|r| {
                    let cfg = template.with_seq_len(r.sq).with_heads(r.n_heads);
                    estimate_json(&r.estimate, &cfg, &model.hw.name)
                })
                .collect();
            json_text(&v)?
        }
    };
    emit(a.out.as_deref(), &text)
}

fn run_capacity(a: CapacityArgs) -> Result<(), Failure> {
    let mut workloads = Vec::new();
    for name in &a.presets {
        let cfg = resolve_workload(name)?;
        workloads.push((name.clone(), cfg));
        for &sq in &a.sq {
            workloads.push((format!("{name}@{sq}"), cfg.with_seq_len(sq)));
        }
    }
    let plans: Vec<_> = a
        .tp
        .iter()
        .flat_map(|&tp| a.sp.iter().map(move |&sp| ParallelismPlan::new(tp, sp)))
        .collect();
    if plans.iter().any(|p| p.tp == 0 || p.sp == 0) || a.chunks == 0 {
        return Err(dropsched::Error::InvalidParameter("--tp, --sp and --chunks must be >= 1".into()).into());
    }
    let rows = capacity_table(&workloads, &plans, a.budget_bytes, a.chunks);
    emit(a.out.as_deref(), &json_text(&rows)?)
}

fn run_maskgen(a: MaskgenArgs) -> Result<(), Failure> {
    let layout = MaskLayout::new(a.b, a.nh, a.sq, a.seed, a.base_offset)?;
    let thr = KeepThreshold::new(a.p)?;
    if a.workers == 0 {
        return Err(dropsched::Error::InvalidParameter("--workers must be >= 1".into()).into());
    }
    let opts = MaskOptions {
        workers: a.workers,
        max_bits: a.max_bits,
    };
    let mask = generate_mask_with(&layout, &thr, a.rounds, opts)?;
    let file = std::fs::File::create(&a.out).map_err(|e| Failure {
        code: 2,
        message: format!("cannot write {}: {e}", a.out.display()),
    })?;
    write_mask(&mask, std::io::BufWriter::new(file))?;
    eprintln!(
        "wrote {} ({} elements, {} kept)",
        a.out.display(),
        layout.element_count(),
        mask.count_kept()
    );
    Ok(())
}

fn run_verify(a: VerifyArgs) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for case in default_verify_cases() {
        reports.push(verify_case(&case)?);
    }
    let bad = reports.iter().filter(|r| !r.bitwise_equal).count();
    let text = if a.json {
        json_text(&reports)?
    } else {
        let mut s = String::new();
        for r in &reports {
            let c = &r.case;
            s += &format!(
                "{} B={} nH={} SQ={} dH={} p={} R={} seed={:#x} kept={:.4} max_abs_diff={}\n",
                if r.bitwise_equal { "ok  " } else { "FAIL" },
                c.batch,
                c.heads,
                c.seq,
                c.head_dim,
                c.keep_prob,
                c.rounds,
                c.seed,
                r.kept_fraction,
                r.max_abs_diff
            );
        }
        s += &format!("{} of {} cases bitwise equal\n", reports.len() - bad, reports.len());
        s
    };
    emit(None, &text)?;
    if bad > 0 {
        return Err(internal(format!("{bad} case(s) differ between fused and decoupled dropout")));
    }
    Ok(())
}

fn run_whatif(a: WhatifArgs) -> Result<(), Failure> {
    let model = a.hw.model()?;
    let template = resolve_workload(&a.grid.template)?;
    let rows = whatif_sweep(&a.grid.grid(), &template, &model, a.factor)?;
    let text = match a.format {
        Format::Csv => whatif_csv(&rows),
        Format::Json => json_text(&rows)?,
    };
    emit(a.out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Model(a) => run_model(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Capacity(a) => run_capacity(a),
        Command::Maskgen(a) => run_maskgen(a),
        Command::Verify(a) => run_verify(a),
        Command::Whatif(a) => run_whatif(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
