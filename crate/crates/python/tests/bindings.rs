use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &std::ffi::CStr) {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(togsim::togsim)(py);
        let globals = PyDict::new(py);
        globals.set_item("togsim", m).unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn library_and_episode() {
    with_module(
        c"
lib = togsim.generate_library(7, 1)
assert len(lib) == 3 and len(lib.ids()) == 3
ep = togsim.Episode(lib, 1, 'sweep', 4, n_candidates=20)
assert len(ep.depth) == ep.resolution ** 2
assert ep.task == 'sweep'
r = ep.execute(0, [0.0, 0.0, 0.0, 0.0])
assert r['s_g'] or not r['s_t']
assert r == ep.execute(0, [0.0, 0.0, 0.0, 0.0])
",
    );
}

#[test]
fn network_scores_factorize() {
    with_module(
        c"
lib = togsim.generate_library(3, 1)
ep = togsim.Episode(lib, 0, 'hammer', 1, n_candidates=20)
net = togsim.Network(2, '{\"trunk_channels\": [8, 8], \"bottleneck\": 4, \"pool_to\": 4, \"z_embed\": 4, \"hidden\": 8}')
for q_g, q_tg, q_t, mean in net.score(ep):
    assert abs(q_t - q_g * q_tg) < 1e-12
",
    );
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(
        c"
lib = togsim.generate_library(3, 1)
for bad, exc in [(lambda: togsim.Episode(lib, 99, 'sweep', 1), IndexError),
                 (lambda: togsim.Episode(lib, 0, 'push', 1), ValueError),
                 (lambda: togsim.Network.load('/nonexistent/x.params'), OSError)]:
    try:
        bad()
    except exc:
        pass
    else:
        raise AssertionError('no exception')
",
    );
}

#[test]
fn statistics() {
    with_module(
        c"
lo, hi = togsim.wilson_interval(10, 10)
assert hi == 1.0 and abs(lo - 0.7225) < 1e-4
assert togsim.mcnemar_exact(3, 3) == 1.0
",
    );
}
