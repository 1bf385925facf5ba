use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use rskc::bitstream::{read_sequence, split_frame, SEQUENCE_MAGIC};
use rskc::cloud::{parse_ply, voxelize, write_ply, ColorSpace, VoxelCloud};
use rskc::codec::{decode_frame, encode_sequence, EncodeStats, EncoderConfig, SkipMode};
use rskc::metrics::{
    bd_rate, bdbr_total, layer_stats, psnr, read_rd_csv, Psnr, RdPoint, LUMA_WEIGHT,
};
use rskc::predict::{PredictionMode, Reference};
use rskc::rdoskip::DEFAULT_C;
use rskc::synth::{dense_gradient, shell_sequence, ShellParams};

#[derive(Parser)]
#[command(
    name = "rskc",
    version,
    about = "RAHT point-cloud attribute codec with RDO layer skipping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode one PLY (a frame) or several (a sequence) into a container.
    Encode(EncodeArgs),
    /// Decode a container to PLY.
    Decode(DecodeArgs),
    /// Attribute PSNR between an original and a reconstruction.
    Metrics(MetricsArgs),
    /// Bjøntegaard delta rate between two RD tables.
    Bdrate(BdrateArgs),
    /// BDBR_Total of RDO skipping against skip-off, over a range of c.
    Sweep(SweepArgs),
    /// Per-layer residual statistics across QPs.
    Stats(StatsArgs),
    /// Write synthetic test content as PLY.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Intra,
    Inter,
}

impl From<Mode> for PredictionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Intra => PredictionMode::Intra,
            Mode::Inter => PredictionMode::Inter,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Shell,
    Dense,
}

fn parse_qp(s: &str) -> Result<i32, String> {
    let v: i32 = s.parse().map_err(|e| format!("{e}"))?;
    if !(4..=51).contains(&v) {
        return Err(format!("qp must be in 4..=51, got {v}"));
    }
    Ok(v)
}

fn parse_c(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("c must be positive, got {v}"));
    }
    Ok(v)
}

#[derive(Args)]
struct VoxelArgs {
    /// Octree depth of the voxel grid.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..=16))]
    depth: u32,
    /// Positions are multiplied by this before flooring onto the grid.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long, default_value_t = 34, value_parser = parse_qp)]
    qp: i32,
    /// Defaults to --qp.
    #[arg(long, value_parser = parse_qp)]
    qp_chroma: Option<i32>,
    #[arg(long, value_enum, default_value_t = Mode::Intra)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    skip: Switch,
    #[arg(long, default_value_t = DEFAULT_C, value_parser = parse_c)]
    c: f64,
}

impl CodecArgs {
    fn config(&self, verbose: bool) -> EncoderConfig {
        EncoderConfig {
            qp_luma: self.qp,
            qp_chroma: self.qp_chroma.unwrap_or(self.qp),
            mode: self.mode.into(),
            skip: match self.skip {
                Switch::On => SkipMode::Rdo,
                Switch::Off => SkipMode::Off,
            },
            c: self.c,
            analyze: verbose,
        }
    }
}

#[derive(Args)]
struct EncodeArgs {
    /// Input PLY files; more than one makes a sequence.
    #[arg(short, long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    voxel: VoxelArgs,
    #[command(flatten)]
    codec: CodecArgs,
    /// Include candidate D/R tables in the JSON.
    #[arg(long)]
    verbose: bool,
    /// Leave wall-clock fields out of the JSON.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Output PLY; sequences write one file per frame (`{}` is replaced by
    /// the frame number, otherwise `_NNNN` is appended to the stem).
    #[arg(short, long)]
    output: PathBuf,
    /// Write RGB instead of YCbCr.
    #[arg(long)]
    rgb: bool,
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    orig: PathBuf,
    /// Reconstruction on the coded grid (as written by `decode`).
    #[arg(long)]
    recon: PathBuf,
    #[command(flatten)]
    voxel: VoxelArgs,
    /// Container the reconstruction came from; adds BPOP to the output.
    #[arg(long)]
    stream: Option<PathBuf>,
}

#[derive(Args)]
struct BdrateArgs {
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct ContentArgs {
    /// Input PLY files, each coded as a single-frame sequence.
    #[arg(short, long = "input")]
    inputs: Vec<PathBuf>,
    /// Number of generated synthetic sequences to add.
    #[arg(long, default_value_t = 0)]
    synthetic: u32,
    /// Frames per synthetic sequence.
    #[arg(long, default_value_t = 1)]
    frames: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    voxel: VoxelArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    content: ContentArgs,
    /// Explicit c values; overrides the range.
    #[arg(long, value_delimiter = ',', value_parser = parse_c)]
    c_values: Vec<f64>,
    #[arg(long, default_value_t = 0.05, value_parser = parse_c)]
    c_min: f64,
    #[arg(long, default_value_t = 0.5, value_parser = parse_c)]
    c_max: f64,
    #[arg(long, default_value_t = 0.01, value_parser = parse_c)]
    c_step: f64,
    #[arg(long, value_delimiter = ',', value_parser = parse_qp, default_values_t = vec![22, 28, 34, 40, 46, 51])]
    qps: Vec<i32>,
    #[arg(long, value_enum, default_value_t = Mode::Intra)]
    mode: Mode,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    content: ContentArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_qp, default_values_t = vec![16, 22, 28, 34, 40, 46])]
    qps: Vec<i32>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = Kind::Shell)]
    kind: Kind,
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u32).range(1..=12))]
    depth: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    frames: u32,
    /// Per-voxel color noise amplitude (shell only).
    #[arg(long, default_value_t = 0.0)]
    grain: f64,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    rgb: bool,
}

const SYNTH_MOTION: f64 = 0.05;

fn load_cloud(path: &Path, v: &VoxelArgs) -> Result<VoxelCloud> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let raw = parse_ply(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    voxelize(&raw, v.depth, v.scale).with_context(|| format!("voxelizing {}", path.display()))
}

fn frame_path(base: &Path, index: usize, count: usize) -> PathBuf {
    if count == 1 {
        return base.to_path_buf();
    }
    let s = base.to_string_lossy();
    if s.contains("{}") {
        return PathBuf::from(s.replace("{}", &format!("{index:04}")));
    }
    let stem = base.file_stem().unwrap_or_default().to_string_lossy();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_{index:04}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{index:04}"),
    };
    base.with_file_name(name)
}

fn finite_or_inf(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn frame_json(i: usize, s: &EncodeStats, verbose: bool, timings: bool) -> Value {
    let mut v = json!({
        "frame": i,
        "points": s.point_count,
        "mode": s.mode,
        "attribute_bits": s.attribute_bits,
        "bpop": s.bpop,
        "flags": s.flags.flags(),
        "total_bytes": s.total_bytes,
    });
    if timings {
        v["enc_seconds"] = json!(s.timings.total_s);
        v["timings"] = json!(s.timings);
    }
    if verbose {
        v["channels"] = json!(s.channels);
    }
    v
}

fn print_json(v: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let frames = a
        .inputs
        .iter()
        .map(|p| load_cloud(p, &a.voxel))
        .collect::<Result<Vec<_>>>()?;
    let cfg = a.codec.config(a.verbose);
    let t = Instant::now();
    let seq = encode_sequence(&frames, &cfg)?;
    let secs = t.elapsed().as_secs_f64();
    let bytes = if frames.len() == 1 {
        &seq.frames[0].bytes
    } else {
        &seq.bytes
    };
    fs::write(&a.output, bytes).with_context(|| format!("writing {}", a.output.display()))?;
    let timings = !a.no_timings;
    let stats: Vec<Value> = seq
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| frame_json(i, &f.stats, a.verbose, timings))
        .collect();
    let bits: u64 = seq.frames.iter().map(|f| f.stats.attribute_bits).sum();
    let points: usize = seq.frames.iter().map(|f| f.stats.point_count).sum();
    let mut v = json!({
        "config": cfg,
        "frames": stats,
        "attribute_bits": bits,
        "bpop": bits as f64 / points as f64,
        "total_bytes": bytes.len(),
    });
    if timings {
        v["enc_seconds"] = json!(secs);
    }
    print_json(&v)
}

/// Decode a frame or sequence container.
fn decode_any(bytes: &[u8]) -> Result<Vec<(VoxelCloud, u64)>> {
    let frames: Vec<&[u8]> = if bytes.starts_with(&SEQUENCE_MAGIC) {
        read_sequence(bytes)?
    } else {
        vec![bytes]
    };
    let mut out = Vec::with_capacity(frames.len());
    let mut reference: Option<Reference> = None;
    for f in frames {
        let parts = split_frame(f)?;
        let h = parts.header;
        let attr_bytes =
            u64::from(h.dc_len) + h.payload_lens.iter().map(|&l| u64::from(l)).sum::<u64>();
        let dec = decode_frame(f, reference.as_ref())?;
        reference = Some(Reference::from_cloud(&dec.cloud));
        out.push((dec.cloud, 8 * attr_bytes + rskc::codec::SKIP_FLAG_BITS));
    }
    Ok(out)
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let t = Instant::now();
    let frames = decode_any(&bytes)?;
    let secs = t.elapsed().as_secs_f64();
    let space = if a.rgb {
        ColorSpace::Rgb
    } else {
        ColorSpace::YCbCr
    };
    let mut written = Vec::new();
    for (i, (cloud, _)) in frames.iter().enumerate() {
        let path = frame_path(&a.output, i, frames.len());
        fs::write(&path, write_ply(cloud, space))
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(json!({"frame": i, "points": cloud.len(), "path": path}));
    }
    let mut v = json!({ "frames": written });
    if !a.no_timings {
        v["dec_seconds"] = json!(secs);
    }
    print_json(&v)
}

fn psnr_json(p: &Psnr) -> Value {
    json!({
        "psnr_y": finite_or_inf(p.y),
        "psnr_cb": finite_or_inf(p.cb),
        "psnr_cr": finite_or_inf(p.cr),
        "psnr_weighted": finite_or_inf(p.weighted()),
    })
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let orig = load_cloud(&a.orig, &a.voxel)?;
    let grid = VoxelArgs {
        depth: a.voxel.depth,
        scale: 1.0,
    };
    let recon = load_cloud(&a.recon, &grid)?;
    let p = psnr(&orig, &recon)?;
    let mut v = psnr_json(&p);
    v["points"] = json!(orig.len());
    if let Some(stream) = &a.stream {
        let bytes = fs::read(stream).with_context(|| format!("reading {}", stream.display()))?;
        let frames = decode_any(&bytes)?;
        let bits: u64 = frames.iter().map(|f| f.1).sum();
        let points: usize = frames.iter().map(|f| f.0.len()).sum();
        v["attribute_bits"] = json!(bits);
        v["bpop"] = json!(bits as f64 / points as f64);
    }
    print_json(&v)
}

fn read_csv(path: &Path) -> Result<Vec<RdPoint>> {
    let f = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    read_rd_csv(f).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_bdrate(a: &BdrateArgs) -> Result<()> {
    let anchor = read_csv(&a.anchor)?;
    let test = read_csv(&a.test)?;
    let r = bd_rate(&anchor, &test)?;
    print_json(&json!({
        "bdbr_luma": r.y,
        "bdbr_cb": r.cb,
        "bdbr_cr": r.cr,
        "bdbr_total": r.total(),
    }))
}

fn load_content(c: &ContentArgs, synth_kind: Kind) -> Result<Vec<Vec<VoxelCloud>>> {
    let mut seqs: Vec<Vec<VoxelCloud>> = c
        .inputs
        .iter()
        .map(|p| load_cloud(p, &c.voxel).map(|f| vec![f]))
        .collect::<Result<_>>()?;
    for i in 0..u64::from(c.synthetic) {
        let seed = c.seed.wrapping_add(i);
        let seq = match synth_kind {
            Kind::Shell => {
                let p = ShellParams {
                    depth: c.voxel.depth.min(12),
                    ..ShellParams::with_seed(seed)
                };
                shell_sequence(&p, c.frames.max(1), SYNTH_MOTION)?
            }
            Kind::Dense => vec![dense_gradient(c.voxel.depth.min(12), seed)?],
        };
        seqs.push(seq);
    }
    if seqs.is_empty() {
        bail!("no input content: pass --input or --synthetic");
    }
    Ok(seqs)
}

/// RD point of a whole sequence: total attribute bits over total points,
/// PSNR averaged over frames.
fn rd_point(frames: &[VoxelCloud], cfg: &EncoderConfig) -> Result<RdPoint> {
    let seq = encode_sequence(frames, cfg)?;
    let mut bits = 0u64;
    let mut points = 0usize;
    let mut sum = [0.0f64; 3];
    for (orig, f) in frames.iter().zip(&seq.frames) {
        bits += f.stats.attribute_bits;
        points += f.stats.point_count;
        let p = psnr(orig, &f.reconstruction)?;
        for (ch, s) in sum.iter_mut().enumerate() {
            *s += p.channel(ch);
        }
    }
    let n = frames.len() as f64;
    Ok(RdPoint::new(
        bits as f64 / points as f64,
        Psnr {
            y: sum[0] / n,
            cb: sum[1] / n,
            cr: sum[2] / n,
        },
    ))
}

fn c_grid(a: &SweepArgs) -> Result<Vec<f64>> {
    if !a.c_values.is_empty() {
        return Ok(a.c_values.clone());
    }
    if a.c_max < a.c_min {
        bail!("--c-max must not be below --c-min");
    }
    let n = ((a.c_max - a.c_min) / a.c_step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((a.c_min + i as f64 * a.c_step) * 1e6).round() / 1e6)
        .collect())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let seqs = load_content(&a.content, Kind::Shell)?;
    let cs = c_grid(a)?;
    let base = EncoderConfig {
        mode: a.mode.into(),
        skip: SkipMode::Off,
        ..EncoderConfig::default()
    };
    // slot 0 is the skip-off anchor, slot i + 1 is cs[i]
    let jobs: Vec<(usize, usize, i32)> = (0..=cs.len())
        .flat_map(|slot| {
            (0..seqs.len()).flat_map(move |s| a.qps.iter().map(move |&qp| (slot, s, qp)))
        })
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(slot, s, qp)| {
            let cfg = EncoderConfig {
                qp_luma: qp,
                qp_chroma: qp,
                skip: if slot == 0 {
                    SkipMode::Off
                } else {
                    SkipMode::Rdo
                },
                c: if slot == 0 { DEFAULT_C } else { cs[slot - 1] },
                ..base
            };
            rd_point(&seqs[s], &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let per = seqs.len() * a.qps.len();
    let curve = |slot: usize, s: usize| {
        let start = slot * per + s * a.qps.len();
        &points[start..start + a.qps.len()]
    };
    let mut out = String::from("c,bdbr_luma,bdbr_cb,bdbr_cr,bdbr_total\n");
    for (i, c) in cs.iter().enumerate() {
        let mut acc = [0.0f64; 3];
        for s in 0..seqs.len() {
            let r = bd_rate(curve(0, s), curve(i + 1, s))
                .with_context(|| format!("BD-rate for sequence {s} at c = {c}"))?;
            acc[0] += r.y;
            acc[1] += r.cb;
            acc[2] += r.cr;
        }
        let avg = acc.map(|x| x / seqs.len() as f64);
        let total = bdbr_total(avg[0], avg[1], avg[2], LUMA_WEIGHT);
        out += &format!(
            "{c},{:.6},{:.6},{:.6},{:.6}\n",
            avg[0], avg[1], avg[2], total
        );
    }
    emit(a.output.as_deref(), &out)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let seqs = load_content(&a.content, Kind::Dense)?;
    let clouds: Vec<&VoxelCloud> = seqs.iter().flatten().collect();
    let rows = a
        .qps
        .par_iter()
        .map(|&qp| {
            let cfg = EncoderConfig {
                skip: SkipMode::Off,
                ..EncoderConfig::with_qp(qp)
            };
            // pooled over all clouds, per layer: [ac_count, zeros per channel]
            let mut pooled: Vec<(usize, [usize; 3])> = Vec::new();
            for cloud in &clouds {
                let e = rskc::codec::encode_frame(cloud, &cfg, None)?;
                for ch in 0..3 {
                    let s = layer_stats(&e.stats.channels[ch].levels, &e.stats.layer_offsets);
                    if pooled.len() < s.layers.len() {
                        pooled.resize(s.layers.len(), (0, [0; 3]));
                    }
                    for l in &s.layers {
                        if ch == 0 {
                            pooled[l.layer].0 += l.ac_count;
                        }
                        pooled[l.layer].1[ch] += l.zeros;
                    }
                }
            }
            Ok((qp, pooled))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from(
        "qp,layer,ac_count,zero_fraction,zero_fraction_y,zero_fraction_cb,zero_fraction_cr\n",
    );
    for (qp, layers) in rows {
        for (layer, (count, zeros)) in layers.iter().enumerate() {
            let frac = |z: usize, n: usize| if n == 0 { 1.0 } else { z as f64 / n as f64 };
            let all = frac(zeros.iter().sum(), 3 * count);
            out += &format!(
                "{qp},{layer},{count},{all:.6},{:.6},{:.6},{:.6}\n",
                frac(zeros[0], *count),
                frac(zeros[1], *count),
                frac(zeros[2], *count)
            );
        }
    }
    emit(a.output.as_deref(), &out)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let frames = match a.kind {
        Kind::Shell => {
            let p = ShellParams {
                depth: a.depth,
                grain: a.grain,
                ..ShellParams::with_seed(a.seed)
            };
            shell_sequence(&p, a.frames.max(1), SYNTH_MOTION)?
        }
        Kind::Dense => vec![dense_gradient(a.depth, a.seed)?],
    };
    let space = if a.rgb {
        ColorSpace::Rgb
    } else {
        ColorSpace::YCbCr
    };
    let mut written = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let path = frame_path(&a.output, i, frames.len());
        fs::write(&path, write_ply(f, space))
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(json!({"frame": i, "points": f.len(), "path": path}));
    }
    print_json(&json!({ "frames": written }))
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RSKC_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("RSKC_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Bdrate(a) => cmd_bdrate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
