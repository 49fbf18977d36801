use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    pyo3::append_to_inittab!(polykb_module);
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("polykb", py.import("polykb").unwrap()).unwrap();
        f(py, &globals);
    });
}

use polykb_py::polykb_module;

fn run(py: Python<'_>, globals: &Bound<'_, PyDict>, code: &str) {
    let code = std::ffi::CString::new(code).unwrap();
    py.run(&code, Some(globals), None).unwrap_or_else(|e| panic!("{e}"));
}

#[test]
fn module_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    with_module(|py, g| {
        g.set_item("out", dir.path().to_str().unwrap()).unwrap();
        run(
            py,
            g,
            r#"
counts = polykb.gen_benchmark(out, seed=3, n_queries=6)
assert counts["queries"] == 6
e = polykb.Engine(out + "/corpus.jsonl", "[daks]\nbudget = 12\n")
d = e.route("x", [("甘草", "Drug")])
assert sum(d["budgets"].values()) == 12, d
t = e.answer("x", [], "merged")
assert t.get("routing") is None and t["packed"]["evidence"]
try:
    polykb.Engine(out + "/corpus.jsonl", "[daks]\nnope = 1\n")
    raise AssertionError("bad config accepted")
except polykb.PolykbError as err:
    assert str(err).startswith("ConfigError"), err
try:
    polykb.Engine.open(out + "/missing.toml")
    raise AssertionError("missing config accepted")
except polykb.PolykbError as err:
    assert str(err).startswith("IoError"), err
"#,
        );
    });
}
