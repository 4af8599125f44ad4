//! Exit criteria. Runs sequentially so the wall-clock limits mean something,
//! prints one PASS/FAIL line per criterion and exits non-zero on any FAIL.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ripstego::crypto::keygen;
use ripstego::embed::{embed, extract, max_plaintext_len, opap_adjust, EmbedParams, PayloadGuard, StegoKey};
use ripstego::ga::{crossover_permutation, evolve, mutate, AgaParams, Genome};
use ripstego::image::{load_any, save_image, PnmFormat};
use ripstego::metrics::{psnr, psnr_from_sse};
use ripstego::rs::{analyze, shield, RsParams, ShieldParams};
use ripstego::transform::{drt_forward, drt_inverse, drt_inverse_float, forward, inverse, TransformKind, TransformParams};
use ripstego::{Error, Image};
use tempfile::TempDir;

const CORPUS: [&str; 10] = [
    "00_camera",
    "01_astronaut",
    "02_coffee",
    "03_chelsea",
    "04_moon",
    "05_immunohistochemistry",
    "06_retina",
    "07_rocket",
    "08_brick",
    "09_gravel",
];

fn data_dir() -> String {
    format!("{}/../core/tests/data", env!("CARGO_MANIFEST_DIR"))
}

fn corpus(name: &str) -> Image {
    load_any(&fs::read(format!("{}/{name}.pgm", data_dir())).unwrap()).unwrap()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(limit: Duration, elapsed: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()))
}

/// Smallest |q - p| over 8-bit values q carrying `m` in their k LSBs.
fn brute_force_distance(p: i32, m: i32, k: u8) -> i32 {
    let mask = (1 << k) - 1;
    (0..256).filter(|q| q & mask == m).map(|q| (q - p).abs()).min().unwrap()
}

fn c1_opap_exhaustive() -> Verdict {
    let start = Instant::now();
    let (mut checked, mut clamped, mut mismatches, mut lost_bits) = (0, 0, 0, 0);
    for k in [2u8, 3, 4] {
        let (step, half, mask) = (1i32 << k, 1i32 << (k - 1), (1i32 << k) - 1);
        for p in 0..256i32 {
            for m in 0..step {
                let p2 = (p & !mask) | m;
                let out = opap_adjust(p as u8, p2 as u8, k) as i32;
                if out & mask != m {
                    lost_bits += 1;
                }
                let delta = p2 - p;
                let clamp_fires = (delta > half && p2 < step) || (delta < -half && p2 >= 256 - step);
                if clamp_fires {
                    clamped += 1;
                    continue;
                }
                checked += 1;
                if (out - p).abs() != brute_force_distance(p, m, k) {
                    mismatches += 1;
                }
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(1), start.elapsed());
    verdict(
        mismatches == 0 && lost_bits == 0 && fast,
        format!("{checked} pairs optimal except {mismatches}, {clamped} clamp cases skipped, {lost_bits} lost LSBs, {time}"),
    )
}

fn c2_worked_example() -> Verdict {
    let (p, p2) = (16u8, (16u8 & !0b1111) | 0b1111);
    let plain = (p2 as i32 - p as i32).abs();
    let adjusted = opap_adjust(p, p2, 4);
    let opap = (adjusted as i32 - p as i32).abs();
    verdict(plain == 15 && opap == 1, format!("16 -> {p2} (error {plain}) -> {adjusted} (error {opap})"))
}

fn c3_iwt_reversible() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1317);
    let mut failures = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(2..=64), rng.gen_range(2..=64));
        let channels = if rng.gen_bool(0.25) { 3 } else { 1 };
        let px: Vec<u8> = (0..w * h * channels).map(|_| rng.gen()).collect();
        let img = Image::new(w, h, channels, px).unwrap();
        let max_levels = (1..=6).take_while(|&l| ripstego::transform::iwt::check_levels(w, h, l).is_ok()).count();
        let levels = rng.gen_range(1..=max_levels);
        let p = forward(&img, &TransformParams { levels, ..TransformParams::iwt() }).unwrap();
        if inverse(&p).unwrap() != img {
            failures += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start.elapsed());
    verdict(failures == 0 && fast, format!("1000 images, {failures} mismatches, {time}"))
}

fn c4_drt_reconstruction() -> Verdict {
    let start = Instant::now();
    let (mut worst_psnr, mut worst_err) = (f64::INFINITY, 0i32);
    for name in CORPUS {
        let img = corpus(name);
        let mut p = drt_forward(&img, &TransformParams::drt()).unwrap();
        let back = drt_inverse_float(&p).unwrap();
        let sse: f64 = back[0].iter().zip(img.data()).map(|(a, &b)| (a - b as f64).powi(2)).sum();
        worst_psnr = worst_psnr.min(psnr_from_sse(sse, img.data().len()));
        p.quantize();
        let q = drt_inverse(&p).unwrap();
        let err = img.data().iter().zip(q.data()).map(|(&a, &b)| (a as i32 - b as i32).abs()).max().unwrap();
        worst_err = worst_err.max(err);
    }
    let (fast, time) = within(Duration::from_secs(60), start.elapsed());
    verdict(
        worst_psnr >= 80.0 && worst_err <= 1 && fast,
        format!("min PSNR {worst_psnr:.1} dB, max quantised error {worst_err}, {time}"),
    )
}

fn c5_end_to_end() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e5e);
    let sources: Vec<Image> = CORPUS.iter().map(|n| corpus(n)).collect();
    let (mut runs, mut refusals, mut failures) = (0, 0, Vec::new());
    for kind in [TransformKind::Iwt, TransformKind::Drt] {
        for k in [1u8, 2, 4] {
            for use_opap in [true, false] {
                let pair = keygen(64, rng.gen()).unwrap();
                let (public, private) = (StegoKey::new(pair.public_key()), StegoKey::new(pair.private_key()));
                for _ in 0..100 {
                    let src = &sources[rng.gen_range(0..sources.len())];
                    let (x0, y0) = (rng.gen_range(0..=src.width() - 64), rng.gen_range(0..=src.height() - 64));
                    let cover = Image::gray_from_fn(64, 64, |x, y| src.get(x0 + x, y0 + y, 0)).unwrap();
                    let params = EmbedParams { k, use_opap, seed: rng.gen(), ..EmbedParams::for_transform(kind) };
                    let max = max_plaintext_len(&cover, &public.rsa, &params).unwrap();
                    let mut msg: Vec<u8> = (0..rng.gen_range(1..=max)).map(|_| rng.gen()).collect();
                    runs += 1;
                    // the bound assumes no block needs the histogram guard; a cover that
                    // does carries less, and embed refuses rather than truncating
                    let mut result = embed(&cover, &msg, &public, &params);
                    while matches!(result, Err(Error::CapacityExceeded { .. })) && msg.len() > 1 {
                        refusals += 1;
                        msg.truncate(msg.len() / 2);
                        result = embed(&cover, &msg, &public, &params);
                    }
                    let ok = result
                        .and_then(|(stego, _)| extract(&stego, &private, &params))
                        .map_or(false, |out| out == msg);
                    if !ok {
                        failures.push(format!("{kind}/k{k}/opap {use_opap}"));
                    }
                }
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(300), start.elapsed());
    failures.dedup();
    verdict(failures.is_empty() && fast, format!("{runs} round trips, failures {failures:?}, {refusals} capacity refusals redrawn shorter, {time}"))
}

struct Row {
    image: String,
    transform: String,
    before: f64,
    after: f64,
}

fn parse_psnr(v: &str) -> f64 {
    if v == "inf" {
        f64::INFINITY
    } else {
        v.parse().unwrap()
    }
}

/// Runs the `benchmark` command at 0.5 bpp over the eight standard images.
fn benchmark_rows() -> Result<Vec<Row>, String> {
    let dir = TempDir::new().unwrap();
    let images = dir.path().join("images");
    fs::create_dir(&images).unwrap();
    for name in &CORPUS[..8] {
        fs::copy(format!("{}/{name}.pgm", data_dir()), images.join(format!("{name}.pgm"))).unwrap();
    }
    let csv = dir.path().join("bench.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_ripstego"))
        .args(["benchmark", "--images"])
        .arg(&images)
        .args(["--payloads", "0.5", "--bits", "512", "--no-timing", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let text = fs::read_to_string(csv).unwrap();
    Ok(text
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            Row { image: f[0].into(), transform: f[1].into(), before: parse_psnr(f[3]), after: parse_psnr(f[4]) }
        })
        .collect())
}

fn c6_opap_direction(rows: &[Row]) -> Verdict {
    let worse: Vec<String> =
        rows.iter().filter(|r| r.after < r.before).map(|r| format!("{}/{}", r.image, r.transform)).collect();
    let low: Vec<String> =
        rows.iter().filter(|r| r.after < 30.0).map(|r| format!("{}/{} {:.1}", r.image, r.transform, r.after)).collect();
    let min = rows.iter().map(|r| r.after).fold(f64::INFINITY, f64::min);
    verdict(
        rows.len() == 16 && worse.is_empty() && low.is_empty(),
        format!("{} rows, OPAP worse on {worse:?}, below 30 dB {low:?}, min {min:.2} dB", rows.len()),
    )
}

fn c7_drt_vs_iwt(rows: &[Row]) -> Verdict {
    let mut by_image: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for r in rows {
        let e = by_image.entry(&r.image).or_insert((f64::NAN, f64::NAN));
        match r.transform.as_str() {
            t if t.eq_ignore_ascii_case("iwt") => e.0 = r.after,
            t if t.eq_ignore_ascii_case("drt") => e.1 = r.after,
            _ => {}
        }
    }
    let wins = by_image.values().filter(|(iwt, drt)| drt >= iwt).count();
    verdict(by_image.len() == 8 && wins >= 7, format!("DRT >= IWT on {wins}/{}", by_image.len()))
}

fn c8_rs_sanity() -> Verdict {
    let params = RsParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ff);
    let (mut clean_max, mut increased) = (0f64, 0);
    for name in CORPUS {
        let img = corpus(name);
        let clean = analyze(&img, &params).unwrap();
        let s = clean.stats();
        clean_max = clean_max.max(s.dr().abs()).max(s.ds().abs());
        let mut noisy = img.clone();
        for v in noisy.data_mut() {
            *v = (*v & !1) | rng.gen_range(0..=1);
        }
        if analyze(&noisy, &params).unwrap().d_statistic > clean.d_statistic {
            increased += 1;
        }
    }
    verdict(
        clean_max <= 0.05 && increased >= 8,
        format!("clean max |dR|,|dS| {clean_max:.4}, randomisation raised d on {increased}/10"),
    )
}

fn c9_shield() -> Verdict {
    let start = Instant::now();
    let pair = keygen(512, 0x5151).unwrap();
    let (public, private) = (StegoKey::new(pair.public_key()), StegoKey::new(pair.private_key()));
    let mut lines = Vec::new();
    let mut all_ok = true;
    for kind in [TransformKind::Iwt, TransformKind::Drt] {
        let params = EmbedParams::for_transform(kind);
        let mut good = 0;
        let (mut worst_rel, mut worst_drop) = (0f64, 0f64);
        for name in CORPUS {
            let cover = corpus(name);
            let len = max_plaintext_len(&cover, &public.rsa, &params).unwrap() / 2;
            let msg: Vec<u8> = (0..len).map(|i| (i * 131 + 7) as u8).collect();
            let (stego, rep) = embed(&cover, &msg, &public, &params).unwrap();
            assert!((rep.payload_bpp - 0.25).abs() < 0.01, "{name}: {} bpp", rep.payload_bpp);
            let guard = PayloadGuard::new(&stego, &private, &params).unwrap();
            let (out, report) = shield(&stego, &guard, &ShieldParams::default()).unwrap();
            let rel = report.after.relative_dr();
            let drop = psnr(&cover, &stego).unwrap() - psnr(&cover, &out).unwrap();
            let exact = extract(&out, &private, &params).map_or(false, |m| m == msg);
            worst_rel = worst_rel.max(rel);
            worst_drop = worst_drop.max(drop);
            if rel <= 0.05 && exact && drop <= 2.0 {
                good += 1;
            }
        }
        all_ok &= good >= 8;
        lines.push(format!("{kind} {good}/10 (max rel dR {worst_rel:.4}, max drop {worst_drop:.2} dB)"));
    }
    let (fast, time) = within(Duration::from_secs(600), start.elapsed());
    verdict(all_ok && fast, format!("{}, {time}", lines.join(", ")))
}

fn fixed_points(g: &Genome, identity: &[u16]) -> f64 {
    g.as_permutation().unwrap().iter().zip(identity).filter(|(a, b)| a == b).count() as f64
}

/// Order-independent check that `p` holds each of `1..=n` exactly once.
fn is_perm_oracle(p: &[u16]) -> bool {
    let mut sorted = p.to_vec();
    sorted.sort_unstable();
    sorted.iter().enumerate().all(|(i, &v)| v as usize == i + 1)
}

fn c10_ga() -> Verdict {
    let identity = Genome::identity(64);
    let id = identity.as_permutation().unwrap().to_vec();
    let (mut monotone, mut optimum, mut best_sum) = (0, 0, 0.0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AgaParams { seed, ..AgaParams::default() };
        let initial = (0..params.population_size).map(|_| Genome::random_permutation(64, &mut rng)).collect();
        let run = evolve(initial, |g| fixed_points(g, &id), &params).unwrap();
        if run.trace.best.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
        if run.fitness == 64.0 {
            optimum += 1;
        }
        best_sum += run.fitness;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5);
    let mut invalid = 0;
    for i in 0..10_000 {
        let a = Genome::random_permutation(64, &mut rng);
        let out = if i % 2 == 0 {
            let b = Genome::random_permutation(64, &mut rng);
            Genome::Permutation(crossover_permutation(a.as_permutation().unwrap(), b.as_permutation().unwrap(), &mut rng).unwrap())
        } else {
            mutate(&a, rng.gen_range(0.0..=1.0), &mut rng)
        };
        if !is_perm_oracle(out.as_permutation().unwrap()) {
            invalid += 1;
        }
    }
    verdict(
        monotone == 100 && invalid == 0 && optimum >= 95,
        format!(
            "monotone {monotone}/100, invalid {invalid}/10000, optimum 64 reached {optimum}/100 (mean best {:.1})",
            best_sum / 100.0
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_ripstego")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Every command's artifacts, run in a fresh directory.
fn cli_session() -> Vec<(String, Vec<u8>)> {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cam = corpus("00_camera");
    let cover = Image::gray_from_fn(128, 128, |x, y| cam.get(x + 200, y + 200, 0)).unwrap();
    fs::create_dir(d.join("imgs")).unwrap();
    fs::write(d.join("cover.pgm"), save_image(&cover, PnmFormat::Pgm).unwrap()).unwrap();
    fs::write(d.join("imgs/cover.pgm"), save_image(&cover, PnmFormat::Pgm).unwrap()).unwrap();
    fs::write(d.join("msg.bin"), (0..200u32).map(|i| (i * 37) as u8).collect::<Vec<_>>()).unwrap();

    let mut stdout = Vec::new();
    stdout.push(run_cli(d, &["keygen", "--bits", "512", "--seed", "5", "--out", "k"]));
    for t in ["iwt", "drt"] {
        let stego = format!("stego_{t}.pgm");
        let (rep, shielded, srep, msg) =
            (format!("embed_{t}.json"), format!("shielded_{t}.pgm"), format!("shield_{t}.json"), format!("msg_{t}.out"));
        let common = ["--seed", "11", "--transform", t];
        let mut embed_args = vec!["embed", "--cover", "cover.pgm", "--message", "msg.bin", "--key", "k.pub"];
        embed_args.extend(["--out", &stego, "--report", &rep]);
        embed_args.extend(common);
        stdout.push(run_cli(d, &embed_args));
        let mut extract_args = vec!["extract", "--stego", &stego, "--key", "k.key", "--out", &msg];
        extract_args.extend(common);
        stdout.push(run_cli(d, &extract_args));
        stdout.push(run_cli(d, &["analyze", "--image", &stego, "--ref", "cover.pgm"]));
        let mut shield_args = vec!["shield", "--stego", &stego, "--key", "k.key", "--out", &shielded, "--report", &srep];
        shield_args.extend(common);
        stdout.push(run_cli(d, &shield_args));
    }
    stdout.push(run_cli(d, &["benchmark", "--images", "imgs", "--bits", "512", "--no-timing", "--out", "bench.csv"]));

    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(d)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files.push(("stdout".into(), stdout.concat()));
    files
}

fn c11_determinism() -> Verdict {
    let (a, b) = (cli_session(), cli_session());
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();

    let params = AgaParams { seed: 3, ..AgaParams::default() };
    let id = Genome::identity(64).as_permutation().unwrap().to_vec();
    let ga = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let initial = (0..32).map(|_| Genome::random_permutation(64, &mut rng)).collect();
        evolve(initial, |g| fixed_points(g, &id), &params).unwrap()
    };
    let ga_same = ga() == ga();
    verdict(
        a.len() == b.len() && differing.is_empty() && ga_same,
        format!("{} artifacts compared, differing {differing:?}, GA rerun identical {ga_same}", a.len()),
    )
}

fn main() {
    let mut stdout = std::io::stdout();
    let mut failed = Vec::new();
    let mut report = |n: usize, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        writeln!(stdout, "criterion {n:>2}: {status}  {}", v.detail).unwrap();
        stdout.flush().unwrap();
        if !v.pass {
            failed.push(n);
        }
    };
    report(1, c1_opap_exhaustive());
    report(2, c2_worked_example());
    report(3, c3_iwt_reversible());
    report(4, c4_drt_reconstruction());
    report(5, c5_end_to_end());
    match benchmark_rows() {
        Ok(rows) => {
            report(6, c6_opap_direction(&rows));
            report(7, c7_drt_vs_iwt(&rows));
        }
        Err(e) => {
            report(6, verdict(false, format!("benchmark failed: {e}")));
            report(7, verdict(false, "benchmark failed"));
        }
    }
    report(8, c8_rs_sanity());
    report(9, c9_shield());
    report(10, c10_ga());
    report(11, c11_determinism());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
