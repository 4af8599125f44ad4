use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    pyo3::prepare_freethreaded_python();
    Python::with_gil(|py| {
        let module = pyo3::wrap_pymodule!(ripstego_py::ripstego_py)(py);
        let globals = PyDict::new_bound(py);
        globals.set_item("rp", module).unwrap();
        if let Err(e) = py.run_bound(code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn round_trip_through_python() {
    run(r#"
pub, key = rp.keygen(512, 4)
img = rp.Image(64, 64, 1, bytes((x * 3 + y * 5) % 251 for y in range(64) for x in range(64)))
for t in ("iwt", "drt"):
    cfg = "transform = " + t
    stego, report = rp.embed(img, b"abc", pub, cfg)
    assert rp.extract(stego, key, cfg) == b"abc"
    assert rp.psnr(img, stego) > 30
"#);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
pub, key = rp.keygen(512, 4)
img = rp.Image(64, 64, 1, bytes(64 * 64))
try:
    rp.embed(img, b"x" * (rp.max_message_len(img, pub) + 1), pub)
    raise AssertionError("no capacity error")
except rp.CapacityError:
    pass
try:
    rp.extract(img, key)
    raise AssertionError("no integrity error")
except rp.IntegrityError as e:
    assert isinstance(e, rp.StegoError)
try:
    rp.embed(img, b"x", pub, "bogus = 1")
    raise AssertionError("no value error")
except ValueError:
    pass
try:
    rp.Image(4, 4, 1, b"short")
    raise AssertionError("no value error")
except (ValueError, rp.StegoError):
    pass
"#);
}
