//! Python bindings. Structured results cross the boundary as plain
//! dicts and lists (via JSON), so the Python side needs no wrapper types.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;
use verbot_core::dispatcher::{Config, Dispatcher, DEFAULT_TICK_S};
use verbot_core::replay::{self, Assertions};
use verbot_core::{lexicon, parser, Point, Scene, Store};

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Lowercased words; digit and number-word runs come back as ints.
#[pyfunction]
fn tokenize<'py>(py: Python<'py>, line: &str) -> PyResult<Vec<Bound<'py, PyAny>>> {
    lexicon::tokenize(line)
        .iter()
        .map(|t| -> PyResult<_> {
            Ok(match t.as_number() {
                Some(n) => n.into_pyobject(py)?.into_any(),
                None => t.text().into_pyobject(py)?.into_any(),
            })
        })
        .collect()
}

/// `"three hundred"` -> 300.
#[pyfunction]
fn parse_number_words(words: Vec<String>) -> PyResult<u32> {
    lexicon::parse_number_words(&words).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn command_heads() -> Vec<&'static str> {
    parser::command_heads()
}

/// Parses one line with the default aliases. Returns the command as a dict;
/// raises ValueError naming the error kind on rejection.
#[pyfunction]
fn parse<'py>(py: Python<'py>, line: &str) -> PyResult<Bound<'py, PyAny>> {
    let tokens = lexicon::Lexicon::with_defaults().normalize(line);
    let cmd = parser::parse(&tokens)
        .map_err(|e| PyValueError::new_err(format!("{}: {e}", e.kind())))?;
    to_py(py, &cmd)
}

/// Canonical text of a parsed line, e.g. `"move up"` -> `"up"`.
#[pyfunction]
fn canonical(line: &str) -> PyResult<String> {
    let tokens = lexicon::Lexicon::with_defaults().normalize(line);
    parser::parse(&tokens)
        .map(|c| c.to_string())
        .map_err(|e| PyValueError::new_err(format!("{}: {e}", e.kind())))
}

fn dispatcher(scene: Option<PathBuf>, store: Option<PathBuf>) -> PyResult<Dispatcher> {
    let scene = match scene {
        Some(p) => Scene::load(&p).map_err(runtime)?,
        None => Scene::default(),
    };
    let store = match store {
        Some(p) => Store::open(&p).map_err(runtime)?,
        None => Store::in_memory(),
    };
    Ok(Dispatcher::new(&scene, store, Config::default()))
}

/// A simulated robot driven by typed commands. Time only advances through
/// `tick` and `drain`.
#[pyclass(unsendable)]
struct Interpreter {
    inner: Dispatcher,
}

#[pymethods]
impl Interpreter {
    #[new]
    #[pyo3(signature = (scene=None, store=None))]
    fn new(scene: Option<PathBuf>, store: Option<PathBuf>) -> PyResult<Self> {
        Ok(Self { inner: dispatcher(scene, store)? })
    }

    /// Returns the acknowledgement dict (`command`, `enqueued`, `error`).
    fn submit<'py>(&mut self, py: Python<'py>, line: &str) -> PyResult<Bound<'py, PyAny>> {
        let ack = self.inner.submit(line);
        to_py(py, &ack)
    }

    #[pyo3(signature = (dt=DEFAULT_TICK_S))]
    fn tick<'py>(&mut self, py: Python<'py>, dt: f64) -> PyResult<Bound<'py, PyAny>> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(PyValueError::new_err("dt must be positive"));
        }
        let events = self.inner.tick(dt);
        to_py(py, &events)
    }

    /// Ticks until idle; returns `(events, idle)`.
    #[pyo3(signature = (dt=DEFAULT_TICK_S, max_ticks=1_000_000))]
    fn drain<'py>(
        &mut self,
        py: Python<'py>,
        dt: f64,
        max_ticks: u64,
    ) -> PyResult<(Bound<'py, PyAny>, bool)> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(PyValueError::new_err("dt must be positive"));
        }
        let (events, idle) = self.inner.drain(dt, max_ticks);
        Ok((to_py(py, &events)?, idle))
    }

    fn stop(&mut self) {
        self.inner.stop();
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.snapshot())
    }

    /// Moves a scene object, standing in for a human step.
    #[pyo3(signature = (name, x, y, z, rotation=None))]
    fn place_object(&mut self, name: &str, x: f64, y: f64, z: f64, rotation: Option<f64>) -> bool {
        self.inner.place_object(name, Point::from_mm(x, y, z), rotation)
    }

    #[getter]
    fn running(&self) -> bool {
        self.inner.running()
    }

    #[getter]
    fn queue_len(&self) -> usize {
        self.inner.queue_len()
    }

    fn is_idle(&self) -> bool {
        self.inner.is_idle()
    }
}

/// Replays a transcript (text, not a path) and returns the report dict,
/// with an `assertionFailures` list when `expect` (assert-file text) is given.
#[pyfunction]
#[pyo3(signature = (transcript, scene=None, store=None, expect=None, dt=DEFAULT_TICK_S))]
fn run_transcript<'py>(
    py: Python<'py>,
    transcript: &str,
    scene: Option<PathBuf>,
    store: Option<PathBuf>,
    expect: Option<&str>,
    dt: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut d = dispatcher(scene, store)?;
    let report = replay::replay(&mut d, transcript, dt).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = to_py(py, &report)?;
    if let Some(text) = expect {
        let a = Assertions::parse(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        out.set_item("assertionFailures", a.check(&report))?;
    }
    Ok(out)
}

#[pymodule]
fn verbot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(parse_number_words, m)?)?;
    m.add_function(wrap_pyfunction!(command_heads, m)?)?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(canonical, m)?)?;
    m.add_function(wrap_pyfunction!(run_transcript, m)?)?;
    m.add_class::<Interpreter>()?;
    Ok(())
}
