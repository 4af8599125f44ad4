use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ripstego::image::load_any;
use ripstego::transform::{drt_forward, drt_inverse, drt_inverse_float, forward, inverse, TransformParams};
use ripstego::Image;

fn data(name: &str) -> Image {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    load_any(&std::fs::read(path).unwrap()).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, channels: usize) -> Image {
    let px = (0..w * h * channels).map(|_| rng.gen()).collect();
    Image::new(w, h, channels, px).unwrap()
}

fn coeffs(p: &ripstego::transform::CoefficientPyramid) -> Vec<f64> {
    p.subbands.iter().flat_map(|s| s.coeffs.iter().copied()).collect()
}

#[test]
fn iwt_round_trip_odd_shapes_and_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(2..40), rng.gen_range(2..40));
        let channels = if rng.gen_bool(0.3) { 3 } else { 1 };
        let img = random_image(&mut rng, w, h, channels);
        let max_levels = (1..6).take_while(|&l| ripstego::transform::iwt::check_levels(w, h, l).is_ok()).count();
        let levels = rng.gen_range(1..=max_levels);
        let p = forward(&img, &TransformParams { levels, ..TransformParams::iwt() }).unwrap();
        assert_eq!(inverse(&p).unwrap(), img, "{w}x{h} levels {levels}");
    }
}

#[test]
fn iwt_constant_image_has_no_detail() {
    let img = Image::filled(32, 16, 1, 93).unwrap();
    let p = forward(&img, &TransformParams { levels: 2, ..TransformParams::iwt() }).unwrap();
    for s in &p.subbands {
        let expect = if s.scale == 0 { 93.0 } else { 0.0 };
        assert!(s.coeffs.iter().all(|&c| c == expect), "scale {} orientation {}", s.scale, s.orientation);
    }
}

#[test]
fn drt_parseval_and_float_reconstruction() {
    for name in ["00_camera.pgm", "06_retina.pgm"] {
        let img = data(name);
        let p = drt_forward(&img, &TransformParams::drt()).unwrap();
        let pixel_energy: f64 = img.data().iter().map(|&v| (v as f64).powi(2)).sum();
        assert!((p.energy() - pixel_energy).abs() / pixel_energy < 1e-10);
        let back = drt_inverse_float(&p).unwrap();
        let sse: f64 = back[0].iter().zip(img.data()).map(|(a, &b)| (a - b as f64).powi(2)).sum();
        let psnr = ripstego::metrics::psnr_from_sse(sse, img.data().len());
        assert!(psnr >= 80.0, "{name}: {psnr}");
    }
}

#[test]
fn drt_quantised_path_within_one_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let img = random_image(&mut rng, 37, 29, 1);
        let mut p = drt_forward(&img, &TransformParams::drt()).unwrap();
        p.quantize();
        let out = drt_inverse(&p).unwrap();
        let worst = img.data().iter().zip(out.data()).map(|(&a, &b)| (a as i32 - b as i32).abs()).max().unwrap();
        assert!(worst <= 1, "max error {worst}");
    }
}

#[test]
fn drt_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<u8> = (0..64 * 48).map(|_| rng.gen_range(0..128)).collect();
    let b: Vec<u8> = (0..64 * 48).map(|_| rng.gen_range(0..128)).collect();
    let sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let f = |px: Vec<u8>| coeffs(&drt_forward(&Image::new(64, 48, 1, px).unwrap(), &TransformParams::drt()).unwrap());
    let (fa, fb, fs) = (f(a), f(b), f(sum));
    for i in 0..fs.len() {
        assert!((fa[i] + fb[i] - fs[i]).abs() < 1e-9);
    }
}

#[test]
fn drt_offset_moves_only_the_lowpass() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base: Vec<u8> = (0..32 * 32).map(|_| rng.gen_range(0..200)).collect();
    let shifted: Vec<u8> = base.iter().map(|v| v + 20).collect();
    let params = TransformParams::drt();
    let p0 = drt_forward(&Image::new(32, 32, 1, base).unwrap(), &params).unwrap();
    let p1 = drt_forward(&Image::new(32, 32, 1, shifted).unwrap(), &params).unwrap();
    for (s0, s1) in p0.subbands.iter().zip(&p1.subbands) {
        for (a, b) in s0.coeffs.iter().zip(&s1.coeffs) {
            // DC basis is 1/8 per pixel, so 64 pixels shifted by 20 add 160
            let expect = if s0.scale == 0 { 160.0 } else { 0.0 };
            assert!((b - a - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn drt_rejects_tiny_images_and_wrong_params() {
    assert!(drt_forward(&Image::filled(7, 20, 1, 0).unwrap(), &TransformParams::drt()).is_err());
    assert!(drt_forward(&Image::filled(16, 16, 1, 0).unwrap(), &TransformParams::iwt()).is_err());
    assert!(forward(&Image::filled(16, 16, 1, 0).unwrap(), &TransformParams { levels: 9, ..TransformParams::drt() }).is_err());
}

#[test]
fn drt_quantisation_keeps_faint_impulses() {
    // every coefficient of a lone 2 in a black tile is 0.25, so nearest rounding erases it
    let mut img = Image::filled(16, 16, 1, 0).unwrap();
    img.set(8, 0, 0, 2);
    img.set(3, 12, 0, 3);
    let exact = drt_forward(&img, &TransformParams::drt()).unwrap();
    let mut p = exact.clone();
    p.quantize();
    let out = drt_inverse(&p).unwrap();
    for (&a, &b) in img.data().iter().zip(out.data()) {
        assert!((a as i32 - b as i32).abs() <= 1, "{a} -> {b}");
    }
    for (e, q) in coeffs(&exact).iter().zip(coeffs(&p)) {
        assert!(q == e.floor() || q == e.ceil(), "{e} -> {q}");
    }
}
