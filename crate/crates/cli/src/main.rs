//! `ripstego` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 capacity exceeded,
//! 3 extraction integrity failure, 4 shield did not converge.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ripstego::config::{parse_pairs, Config};
use ripstego::crypto::{keygen, Payload, RsaKey};
use ripstego::embed::{embed, extract, extract_additive, EmbedMode, PayloadGuard, StegoKey};
use ripstego::image::{load_any, save_image, HistogramMap, PnmFormat};
use ripstego::metrics::QualityReport;
use ripstego::rs::{analyze, shield};
use ripstego::transform::{TransformKind, TransformParams};
use ripstego::{Error, Image};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ripstego", version, about = "Transform-domain image steganography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an RSA key pair (PREFIX.pub and PREFIX.key).
    Keygen {
        #[arg(long, default_value_t = 1024)]
        bits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hide a message in a cover image.
    Embed {
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        message: PathBuf,
        /// Public key file.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Recover a hidden message.
    Extract {
        #[arg(long)]
        stego: PathBuf,
        /// Private key file.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Original cover, needed only for additive mode.
        #[arg(long)]
        cover: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Print RS statistics (and quality figures against a reference) as JSON.
    Analyze {
        #[arg(long)]
        image: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Reduce the RS signature of a stego image without breaking its payload.
    Shield {
        #[arg(long)]
        stego: PathBuf,
        /// Private key file.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Embed, measure and shield every image in a directory; writes CSV.
    Benchmark {
        #[arg(long)]
        images: PathBuf,
        /// Comma-separated payload rates in bits per pixel.
        #[arg(long, value_delimiter = ',', default_value = "0.25")]
        payloads: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        bits: usize,
        /// Leave the runtime column empty so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        opts: ConfigArgs,
    },
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    k: Option<u8>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn core(err: Error) -> Failure {
    let code = match err {
        Error::CapacityExceeded { .. } => 2,
        Error::PayloadCorrupted | Error::NotAPayload(_) | Error::NoPayload => 3,
        Error::ShieldFailed => 4,
        _ => 1,
    };
    Failure { code, message: err.to_string() }
}

/// Extraction maps every failure to the integrity code.
fn integrity(err: Error) -> Failure {
    Failure { code: 3, message: err.to_string() }
}

fn read(path: &Path) -> Outcome<Vec<u8>> {
    fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Outcome<()> {
    fs::write(path, bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Outcome<Image> {
    load_any(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn save(path: &Path, image: &Image) -> Outcome<()> {
    let format = if image.channels() == 3 { PnmFormat::Ppm } else { PnmFormat::Pgm };
    write(path, &save_image(image, format).map_err(core)?)
}

fn load_key(path: &Path) -> Outcome<RsaKey> {
    let text = String::from_utf8(read(path)?).map_err(|_| usage(format!("{}: not a text key file", path.display())))?;
    RsaKey::from_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn emit(json: &serde_json::Value, path: Option<&Path>) -> Outcome<()> {
    let text = serde_json::to_string_pretty(json).expect("reports serialise") + "\n";
    match path {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Outcome<Config> {
        let mut cfg = Config::default();
        let mut pairs = match &self.config {
            Some(p) => {
                let text = String::from_utf8(read(p)?).map_err(|_| usage(format!("{}: not UTF-8", p.display())))?;
                parse_pairs(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
            None => Default::default(),
        };
        let mut flag = |k: &str, v: String| {
            pairs.insert(k.to_string(), v);
        };
        if let Some(t) = &self.transform {
            flag("transform", t.clone());
        }
        if let Some(k) = self.k {
            flag("k", k.to_string());
        }
        if let Some(s) = self.seed {
            flag("seed", s.to_string());
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        cfg.apply(&pairs).map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::Keygen { bits, seed, out } => {
            let pair = keygen(bits, seed).map_err(|e| usage(e.to_string()))?;
            let stem = out.to_string_lossy();
            write(Path::new(&format!("{stem}.pub")), pair.public_key().to_text().as_bytes())?;
            write(Path::new(&format!("{stem}.key")), pair.private_key().to_text().as_bytes())
        }
        Command::Embed { cover, message, key, out, report, opts } => {
            let cfg = opts.resolve()?;
            let cover = load(&cover)?;
            let message = read(&message)?;
            let key = StegoKey::new(load_key(&key)?);
            let (stego, rep) = embed(&cover, &message, &key, &cfg.embed).map_err(core)?;
            save(&out, &stego)?;
            emit(&serde_json::to_value(&rep).expect("report serialises"), report.as_deref())
        }
        Command::Extract { stego, key, out, cover, opts } => {
            let cfg = opts.resolve()?;
            let stego = load(&stego)?;
            let key = StegoKey::new(load_key(&key)?);
            let plain = match cfg.embed.mode {
                EmbedMode::Lsb => extract(&stego, &key, &cfg.embed).map_err(integrity)?,
                EmbedMode::Additive => {
                    let cover = cover.ok_or_else(|| usage("additive mode needs --cover"))?;
                    extract_additive(&stego, &load(&cover)?, &key, &cfg.embed).map_err(integrity)?.0
                }
            };
            write(&out, &plain)
        }
        Command::Analyze { image, reference, opts } => {
            let cfg = opts.resolve()?;
            let img = load(&image)?;
            let rs = analyze(&img, &cfg.shield.rs).map_err(core)?;
            let mut out = json!({ "rs": rs, "dr": rs.stats().dr(), "ds": rs.stats().ds() });
            if let Some(r) = reference {
                let q = QualityReport::compare(&load(&r)?, &img, None).map_err(core)?;
                out["quality"] = serde_json::to_value(&q).expect("report serialises");
                out["psnr_db"] = json!(q.psnr_db);
            }
            emit(&out, None)
        }
        Command::Shield { stego, key, out, report, opts } => {
            let cfg = opts.resolve()?;
            let stego = load(&stego)?;
            let key = StegoKey::new(load_key(&key)?);
            let guard = PayloadGuard::new(&stego, &key, &cfg.embed).map_err(integrity)?;
            let (shielded, rep) = shield(&stego, &guard, &cfg.shield).map_err(core)?;
            save(&out, &shielded)?;
            let mut value = serde_json::to_value(&rep).expect("report serialises");
            value["dr_before"] = json!(rep.before.stats().dr());
            value["dr_after"] = json!(rep.after.stats().dr());
            emit(&value, report.as_deref())?;
            if rep.converged {
                Ok(())
            } else {
                Err(core(Error::ShieldFailed))
            }
        }
        Command::Benchmark { images, payloads, out, bits, no_timing, opts } => {
            let cfg = opts.resolve()?;
            let csv = benchmark(&images, &payloads, bits, !no_timing, &cfg)?;
            write(&out, csv.as_bytes())
        }
    }
}

fn image_files(dir: &Path) -> Outcome<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("{}: no PGM/PPM images", dir.display())));
    }
    Ok(files)
}

/// Longest message whose frame fits in `bits`.
fn message_len_for(bits: usize, key: &RsaKey) -> usize {
    let fits = |len: usize| Payload::framed_len(len, &HistogramMap::default(), key) * 8 <= bits;
    if !fits(0) {
        return 0;
    }
    let (mut lo, mut hi) = (0usize, bits / 8 + 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("inf".to_string(), |x| format!("{x:.4}"))
}

const HEADER: &str = "image,transform,payload_bpp,psnr_before_opap,psnr_after_opap,dR,dS,dR_after_shield,runtime_s";

fn benchmark(dir: &Path, rates: &[f64], bits: usize, timing: bool, cfg: &Config) -> Outcome<String> {
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(usage("payload rates must be positive"));
    }
    let pair = keygen(bits, cfg.embed.seed).map_err(|e| usage(e.to_string()))?;
    let (public, private) = (StegoKey::new(pair.public_key()), StegoKey::new(pair.private_key()));
    let mut csv = String::from(HEADER);
    csv.push('\n');
    for path in image_files(dir)? {
        let img = load(&path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for kind in [TransformKind::Iwt, TransformKind::Drt] {
            let mut params = cfg.embed.clone();
            if params.transform.kind != kind {
                params.transform = TransformParams::for_kind(kind);
            }
            for &rate in rates {
                let start = Instant::now();
                let target = (rate * img.pixel_count() as f64).floor() as usize;
                let len = message_len_for(target, &public.rsa);
                let message: Vec<u8> = (0..len).map(|i| (i.wrapping_mul(151) ^ (i >> 3)) as u8).collect();
                let (stego, rep) = embed(&img, &message, &public, &params).map_err(core)?;
                let rs = analyze(&stego, &cfg.shield.rs).map_err(core)?.stats();
                let guard = PayloadGuard::new(&stego, &private, &params).map_err(integrity)?;
                let (_, shielded) = shield(&stego, &guard, &cfg.shield).map_err(core)?;
                let runtime = if timing { format!("{:.3}", start.elapsed().as_secs_f64()) } else { String::new() };
                writeln!(
                    csv,
                    "{name},{kind},{:.4},{},{},{:.6},{:.6},{:.6},{runtime}",
                    rep.payload_bpp,
                    fmt_opt(rep.psnr_before_opap),
                    fmt_opt(rep.psnr_after_opap),
                    rs.dr(),
                    rs.ds(),
                    shielded.after.stats().dr(),
                )
                .expect("writing to a String");
            }
        }
    }
    Ok(csv)
}

fn main() -> ExitCode {
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
        Err(f) => {
            eprintln!("ripstego: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
