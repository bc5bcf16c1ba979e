//! Python bindings: tool libraries, single episodes, the network, datasets,
//! the full pipeline and the evaluation statistics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use togsim_core::evalharness::{mcnemar_exact as core_mcnemar, wilson_interval as core_wilson};
use togsim_core::graspselect::score_candidates;
use togsim_core::neural::io::{load_params, params_hash, save_params};
use togsim_core::neural::net::{ArchConfig, TogNetParams};
use togsim_core::pipeline::{Pipeline, RunConfig};
use togsim_core::procgen::{self, ProcGenConfig};
use togsim_core::rng::{rng_from, tag};
use togsim_core::selfsup;
use togsim_core::tasksim::{execute_episode, prepare_episode, random_action, ActionSpec, EpisodeSeeds, PreparedEpisode, SimConfig, TaskKind};
use togsim_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config { .. } | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_task(s: &str) -> PyResult<TaskKind> {
    match s {
        "sweep" => Ok(TaskKind::Sweep),
        "hammer" => Ok(TaskKind::Hammer),
        _ => Err(PyValueError::new_err(format!("unknown task `{s}`"))),
    }
}

#[pyclass(name = "ToolLibrary", module = "togsim", frozen)]
pub struct PyToolLibrary {
    inner: procgen::ToolLibrary,
}

#[pymethods]
impl PyToolLibrary {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyToolLibrary {
            inner: procgen::ToolLibrary::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.tools.iter().map(|t| t.id.clone()).collect()
    }

    fn families(&self) -> Vec<&'static str> {
        self.inner.tools.iter().map(|t| t.family.as_str()).collect()
    }

    #[getter]
    fn hash(&self) -> String {
        format!("{:016x}", self.inner.hash())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

/// Tools per family `per_family`, three families.
#[pyfunction]
fn generate_library(seed: u64, per_family: usize) -> PyResult<PyToolLibrary> {
    Ok(PyToolLibrary {
        inner: procgen::generate_library(seed, per_family, &ProcGenConfig::default()).map_err(to_py)?,
    })
}

/// One sampled scene and its top-down observation, ready to be scored and
/// executed.
#[pyclass(name = "Episode", module = "togsim", frozen)]
pub struct PyEpisode {
    tool: procgen::ToolShape,
    prep: PreparedEpisode,
    seeds: EpisodeSeeds,
    sim: SimConfig,
}

#[pymethods]
impl PyEpisode {
    #[new]
    #[pyo3(signature = (library, tool_index, task, seed, n_candidates = 200))]
    fn new(library: &PyToolLibrary, tool_index: usize, task: &str, seed: u64, n_candidates: usize) -> PyResult<Self> {
        let tool = library
            .inner
            .tools
            .get(tool_index)
            .ok_or_else(|| PyIndexError::new_err(format!("tool index {tool_index} out of range")))?
            .clone();
        let sim = SimConfig {
            n_candidates,
            ..SimConfig::default()
        };
        let seeds = EpisodeSeeds::derive(&[seed]);
        let prep = prepare_episode(&tool, parse_task(task)?, &seeds, &sim).map_err(to_py)?;
        Ok(PyEpisode { tool, prep, seeds, sim })
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.prep.task.as_str()
    }

    #[getter]
    fn tool_id(&self) -> String {
        self.tool.id.clone()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.prep.obs.size()
    }

    /// Row-major depth image in metres.
    #[getter]
    fn depth(&self) -> Vec<f64> {
        self.prep.obs.pixels.clone()
    }

    /// `(x, y, z, phi, width)` per candidate.
    #[getter]
    fn candidates(&self) -> Vec<(f64, f64, f64, f64, f64)> {
        self.prep.candidates.iter().map(|g| (g.gx, g.gy, g.gz, g.gphi, g.width)).collect()
    }

    /// Executes candidate `index` followed by `action`, or by a seeded random
    /// action when none is given.
    #[pyo3(signature = (index, action = None))]
    fn execute<'py>(&self, py: Python<'py>, index: usize, action: Option<[f64; 4]>) -> PyResult<Bound<'py, PyDict>> {
        let g = self
            .prep
            .candidates
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("candidate {index} out of range")))?;
        let policy = self.seeds.policy;
        let act = move || match action {
            Some(a) => ActionSpec::from_array(a).clamped(),
            None => random_action(&mut rng_from(&[policy, tag("random_action")])),
        };
        let ex = execute_episode(&self.tool, &self.prep, g, act, &self.seeds, &self.sim);
        let d = PyDict::new(py);
        d.set_item("s_g", ex.s_g())?;
        d.set_item("s_t", ex.s_t())?;
        d.set_item("grasp_failure", ex.grasp.failure_reason.as_str())?;
        d.set_item("task_failure", ex.task.failure_reason.as_str())?;
        d.set_item("action", ex.action.to_array())?;
        Ok(d)
    }
}

type Scores = (f64, f64, f64, [f64; 4]);

#[pyclass(name = "Network", module = "togsim")]
pub struct PyNetwork {
    inner: TogNetParams,
}

#[pymethods]
impl PyNetwork {
    /// Fresh network with the default architecture; `arch_json` overrides it.
    #[new]
    #[pyo3(signature = (seed = 0, arch_json = None))]
    fn new(seed: u64, arch_json: Option<&str>) -> PyResult<Self> {
        let arch: ArchConfig = match arch_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ArchConfig::default(),
        };
        Ok(PyNetwork {
            inner: TogNetParams::new(arch, &mut rng_from(&[seed])).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: load_params(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_params(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn hash(&self) -> String {
        params_hash(&self.inner)
    }

    /// `(q_g, q_tg, q_t, action_mean)` for every candidate of `episode`.
    fn score(&self, py: Python<'_>, episode: &PyEpisode) -> PyResult<Vec<Scores>> {
        let scored = py
            .detach(|| score_candidates(&self.inner, &episode.prep.obs, &episode.prep.candidates))
            .map_err(to_py)?;
        Ok(scored.iter().map(|s| (s.q_g, s.q_tg, s.q_t, s.action_mean)).collect())
    }
}

/// Every record of a dataset file as a dict, without the depth crops.
#[pyfunction]
fn read_dataset<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (_, recs) = selfsup::read_dataset(&path).map_err(to_py)?;
    recs.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("episode_index", r.episode_index)?;
            d.set_item("round_index", r.round_index)?;
            d.set_item("tool_id", &r.tool_id)?;
            d.set_item("task", r.task.as_str())?;
            d.set_item("grasp", (r.grasp.gx, r.grasp.gy, r.grasp.gz, r.grasp.gphi, r.grasp.width))?;
            d.set_item("action", r.action.to_array())?;
            d.set_item("s_g", r.s_g)?;
            d.set_item("s_t", r.s_t)?;
            d.set_item("grasp_failure", r.grasp_failure.as_str())?;
            d.set_item("task_failure", r.task_failure.as_str())?;
            d.set_item("no_candidates", r.no_candidates)?;
            Ok(d)
        })
        .collect()
}

/// Runs (or resumes) the whole pipeline; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config_path, out, seed = None))]
fn run_pipeline(py: Python<'_>, config_path: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<String> {
    py.detach(|| {
        let mut c = RunConfig::load(&config_path)?;
        if let Some(s) = seed {
            c.master_seed = s;
        }
        let s = Pipeline::new(c, &out)?.run_all()?;
        Ok(serde_json::to_string(&s).expect("serializable summary"))
    })
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (successes, episodes, confidence = 0.95))]
fn wilson_interval(successes: usize, episodes: usize, confidence: f64) -> (f64, f64) {
    core_wilson(successes, episodes, confidence)
}

/// Two-sided exact McNemar p-value from the discordant counts.
#[pyfunction]
fn mcnemar_exact(a_only: usize, b_only: usize) -> f64 {
    core_mcnemar(a_only, b_only)
}

#[pymodule]
pub fn togsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyToolLibrary>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(generate_library, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar_exact, m)?)?;
    Ok(())
}
