//! Python bindings. Reports cross the boundary as JSON strings.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use ripstego::config::Config;
use ripstego::crypto::{self, RsaKey};
use ripstego::embed::{self, EmbedMode, PayloadGuard, StegoKey};
use ripstego::image::{load_any, save_image, PnmFormat};
use ripstego::{metrics, rs, Error, Image};

create_exception!(ripstego_py, StegoError, PyException);
create_exception!(ripstego_py, CapacityError, StegoError);
create_exception!(ripstego_py, IntegrityError, StegoError);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::CapacityExceeded { .. } => CapacityError::new_err(err.to_string()),
        Error::PayloadCorrupted | Error::NotAPayload(_) | Error::NoPayload => IntegrityError::new_err(err.to_string()),
        Error::InvalidParam(_) | Error::InvalidKey(_) | Error::UnsupportedKeySize(_) => PyValueError::new_err(err.to_string()),
        _ => StegoError::new_err(err.to_string()),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("reports serialise")
}

fn config(text: Option<&str>) -> PyResult<Config> {
    Config::parse(text.unwrap_or("")).map_err(to_py)
}

fn key(text: &str) -> PyResult<StegoKey> {
    Ok(StegoKey::new(RsaKey::from_text(text).map_err(to_py)?))
}

/// 8-bit grayscale or RGB image.
#[pyclass(name = "Image", module = "ripstego_py")]
#[derive(Clone)]
pub struct PyImage {
    inner: Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<Self> {
        Ok(Self { inner: Image::new(width, height, channels, data).map_err(to_py)? })
    }

    /// Parses binary PGM (P5) or PPM (P6) bytes.
    #[staticmethod]
    fn from_pnm(bytes: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: load_any(bytes).map_err(to_py)? })
    }

    fn to_pnm<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let format = if self.inner.channels() == 3 { PnmFormat::Ppm } else { PnmFormat::Pgm };
        Ok(PyBytes::new_bound(py, &save_image(&self.inner, format).map_err(to_py)?))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    /// Interleaved samples, row-major.
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, self.inner.data())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

/// Returns `(public_key_text, private_key_text)`.
#[pyfunction]
#[pyo3(signature = (bits = 1024, seed = 0))]
fn keygen(bits: usize, seed: u64) -> PyResult<(String, String)> {
    let pair = crypto::keygen(bits, seed).map_err(to_py)?;
    Ok((pair.public_key().to_text(), pair.private_key().to_text()))
}

/// Hides `message`; returns the stego image and the JSON embed report.
#[pyfunction]
#[pyo3(name = "embed", signature = (cover, message, public_key, config_text = None))]
fn embed_message(cover: &PyImage, message: &[u8], public_key: &str, config_text: Option<&str>) -> PyResult<(PyImage, String)> {
    let cfg = config(config_text)?;
    let (stego, report) = embed::embed(&cover.inner, message, &key(public_key)?, &cfg.embed).map_err(to_py)?;
    Ok((PyImage { inner: stego }, json(&report)))
}

/// Recovers the hidden message. Additive mode needs the cover.
#[pyfunction]
#[pyo3(signature = (stego, private_key, config_text = None, cover = None))]
fn extract<'py>(
    py: Python<'py>,
    stego: &PyImage,
    private_key: &str,
    config_text: Option<&str>,
    cover: Option<&PyImage>,
) -> PyResult<Bound<'py, PyBytes>> {
    let cfg = config(config_text)?;
    let k = key(private_key)?;
    let plain = match (cfg.embed.mode, cover) {
        (EmbedMode::Lsb, _) => embed::extract(&stego.inner, &k, &cfg.embed),
        (EmbedMode::Additive, Some(c)) => embed::extract_additive(&stego.inner, &c.inner, &k, &cfg.embed).map(|r| r.0),
        (EmbedMode::Additive, None) => return Err(PyValueError::new_err("additive mode needs the cover")),
    };
    let plain = plain.map_err(|e| IntegrityError::new_err(e.to_string()))?;
    Ok(PyBytes::new_bound(py, &plain))
}

/// Largest message that fits the cover under the given configuration.
#[pyfunction]
#[pyo3(signature = (cover, public_key, config_text = None))]
fn max_message_len(cover: &PyImage, public_key: &str, config_text: Option<&str>) -> PyResult<usize> {
    let cfg = config(config_text)?;
    embed::max_plaintext_len(&cover.inner, &key(public_key)?.rsa, &cfg.embed).map_err(to_py)
}

/// RS statistics as JSON.
#[pyfunction]
#[pyo3(signature = (image, config_text = None))]
fn analyze(image: &PyImage, config_text: Option<&str>) -> PyResult<String> {
    let cfg = config(config_text)?;
    Ok(json(&rs::analyze(&image.inner, &cfg.shield.rs).map_err(to_py)?))
}

/// Runs the RS shield; returns the adjusted image and the JSON report.
#[pyfunction]
#[pyo3(signature = (stego, private_key, config_text = None))]
fn shield(stego: &PyImage, private_key: &str, config_text: Option<&str>) -> PyResult<(PyImage, String)> {
    let cfg = config(config_text)?;
    let guard = PayloadGuard::new(&stego.inner, &key(private_key)?, &cfg.embed).map_err(|e| IntegrityError::new_err(e.to_string()))?;
    let (out, report) = rs::shield(&stego.inner, &guard, &cfg.shield).map_err(to_py)?;
    Ok((PyImage { inner: out }, json(&report)))
}

/// PSNR in dB; `inf` for identical images.
#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).map_err(to_py)
}

#[pyfunction]
fn opap_adjust(p: u8, p2: u8, k: u8) -> PyResult<u8> {
    if !(1..=7).contains(&k) {
        return Err(PyValueError::new_err("k must be in 1..=7"));
    }
    Ok(embed::opap_adjust(p, p2, k))
}

#[pymodule]
pub fn ripstego_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add("StegoError", m.py().get_type_bound::<StegoError>())?;
    m.add("CapacityError", m.py().get_type_bound::<CapacityError>())?;
    m.add("IntegrityError", m.py().get_type_bound::<IntegrityError>())?;
    m.add_function(wrap_pyfunction!(keygen, m)?)?;
    m.add_function(wrap_pyfunction!(embed_message, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(max_message_len, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(shield, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(opap_adjust, m)?)?;
    Ok(())
}
