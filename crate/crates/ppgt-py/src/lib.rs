//! Python bindings for the core graph transformer types and operations.
//!
//! Build as a cdylib and import the shared object as `ppgt`; see
//! `python/smoke_test.py` at the repository root for a worked example.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ppgt_core::backbone::{
    graph_embedding, graph_head, load_checkpoint, model_forward, node_head, save_checkpoint,
    ModelConfig, ModelParams, Pooling,
};
use ppgt_core::error::Error;
use ppgt_core::norm::NormKind;
use ppgt_core::wl::{gdwl_refine, graph_fingerprint, rrwp_labels, spd_labels, wl1_refine, Dist};

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Config(_) | Error::UnknownPair(..) => PyValueError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Immutable undirected graph.
#[pyclass(name = "Graph", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: ppgt_core::graph::Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(PyGraph {
            inner: ppgt_core::graph::Graph::new(n, &edges).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    fn degrees(&self) -> Vec<usize> {
        self.inner.degrees().to_vec()
    }

    fn neighbors(&self, v: usize) -> PyResult<Vec<usize>> {
        if v >= self.inner.n() {
            return Err(PyValueError::new_err(format!("node {v} out of range")));
        }
        Ok(self.inner.neighbors(v).to_vec())
    }

    fn permuted(&self, perm: Vec<usize>) -> PyResult<PyGraph> {
        Ok(PyGraph {
            inner: self.inner.permuted(&perm).map_err(to_py_err)?,
        })
    }

    /// Induced BFS subgraph and the old-to-new id mapping; the root maps
    /// to new id 0.
    fn bfs_subgraph(&self, root: usize, max_nodes: usize) -> PyResult<(PyGraph, Vec<(usize, usize)>)> {
        let (sub, mapping) = self.inner.bfs_subgraph(root, max_nodes).map_err(to_py_err)?;
        Ok((PyGraph { inner: sub }, mapping))
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, m={})", self.inner.n(), self.inner.m())
    }
}

/// Cycle graph on n nodes.
#[pyfunction]
fn cycle(n: usize) -> PyGraph {
    PyGraph {
        inner: ppgt_core::graph::cycle(n),
    }
}

/// A named pair from the curated bank, with its oracle expectation flags
/// (stated at the bank's reference walk length K = 3).
#[pyclass(name = "GraphPair", frozen)]
struct PyGraphPair {
    #[pyo3(get)]
    name: String,
    #[pyo3(get)]
    category: String,
    #[pyo3(get)]
    g1: PyGraph,
    #[pyo3(get)]
    g2: PyGraph,
    #[pyo3(get)]
    expected_1wl: bool,
    #[pyo3(get)]
    expected_gdwl_rrwp: bool,
}

/// The full curated pair bank.
#[pyfunction]
fn pair_bank() -> Vec<PyGraphPair> {
    ppgt_core::bank::pair_bank()
        .into_iter()
        .map(|p| PyGraphPair {
            name: p.name.to_string(),
            category: p.category.as_str().to_string(),
            g1: PyGraph { inner: p.g1 },
            g2: PyGraph { inner: p.g2 },
            expected_1wl: p.expected_1wl,
            expected_gdwl_rrwp: p.expected_gdwl_rrwp,
        })
        .collect()
}

/// RRWP positional encodings as a nested list `[i][j][c]`, with channels
/// `I, W, ..., W^{K-1}` and optional sinusoidal expansion (`s` bases).
#[pyfunction]
#[pyo3(signature = (g, k, s = 0))]
fn rrwp(g: &PyGraph, k: usize, s: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    if k < 1 {
        return Err(PyValueError::new_err("k must be at least 1"));
    }
    let mut p = ppgt_core::pe::rrwp(&g.inner, k);
    if s > 0 {
        p = ppgt_core::pe::spe_encode(&p, s);
    }
    let n = p.n();
    Ok((0..n)
        .map(|i| (0..n).map(|j| p.pair(i, j).to_vec()).collect())
        .collect())
}

/// All-pairs shortest-path distances; `None` marks unreachable pairs.
#[pyfunction]
fn spd_matrix(g: &PyGraph) -> Vec<Vec<Option<u64>>> {
    let n = g.inner.n();
    match spd_labels(&g.inner) {
        ppgt_core::wl::DistanceLabel::Spd { dist, .. } => (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match dist[i * n + j] {
                        Dist::Finite(d) => Some(d),
                        Dist::Infinite => None,
                    })
                    .collect()
            })
            .collect(),
        _ => unreachable!("spd_labels returns Spd"),
    }
}

/// Canonical 1-WL fingerprint; equal strings mean 1-WL cannot separate the
/// graphs.
#[pyfunction]
#[pyo3(signature = (g, max_rounds = None))]
fn wl1_fingerprint(g: &PyGraph, max_rounds: Option<usize>) -> String {
    let rounds = max_rounds.unwrap_or_else(|| g.inner.n().max(1));
    graph_fingerprint(&wl1_refine(&g.inner, rounds))
}

/// Canonical GD-WL fingerprint with exact-rational RRWP labels.
#[pyfunction]
#[pyo3(signature = (g, k, max_rounds = None))]
fn gdwl_rrwp_fingerprint(g: &PyGraph, k: usize, max_rounds: Option<usize>) -> String {
    let rounds = max_rounds.unwrap_or_else(|| g.inner.n().max(1));
    graph_fingerprint(&gdwl_refine(&g.inner, &rrwp_labels(&g.inner, k), rounds))
}

/// (1-WL separates?, GD-WL with RRWP(K) separates?) for two graphs.
#[pyfunction]
fn oracle_distinguish(g1: &PyGraph, g2: &PyGraph, k: usize) -> (bool, bool) {
    (
        ppgt_core::wl::wl1_distinguishes(&g1.inner, &g2.inner),
        ppgt_core::wl::gdwl_rrwp_distinguishes(&g1.inner, &g2.inner, k),
    )
}

/// Learning-rate schedule: linear warmup then cosine annealing.
#[pyfunction]
fn cosine_lr(step: u64, warmup: u64, total: u64, lr_max: f64) -> f64 {
    ppgt_core::optim::cosine_lr(step, warmup, total, lr_max)
}

/// A randomly initialized model (tensors are not thread-safe, so instances
/// must stay on the thread that created them).
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    config: ModelConfig,
    params: ModelParams,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (
        seed = 0,
        n_layers = 4,
        model_dim = 32,
        n_heads = 4,
        k_walk = 3,
        spe_bases = 3,
        d_pe = 16,
        norm = "adarmsn",
        attention = "sl2-urpe",
        pooling = "sum",
        out_dim = 1,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        n_layers: usize,
        model_dim: usize,
        n_heads: usize,
        k_walk: usize,
        spe_bases: usize,
        d_pe: usize,
        norm: &str,
        attention: &str,
        pooling: &str,
        out_dim: usize,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            n_layers,
            model_dim,
            n_heads,
            k_walk,
            spe_bases,
            d_pe,
            norm_kind: NormKind::parse(norm).map_err(to_py_err)?,
            attention_kind: ppgt_core::attention::AttentionKind::parse(attention)
                .map_err(to_py_err)?,
            pooling: match pooling {
                "sum" => Pooling::Sum,
                "mean" => Pooling::Mean,
                "node" => Pooling::Node,
                other => {
                    return Err(PyValueError::new_err(format!(
                        "unknown pooling {other:?}"
                    )))
                }
            },
            out_dim,
            seed,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, None, None).map_err(to_py_err)?;
        Ok(PyModel { config, params })
    }

    /// Per-node embeddings `Y` as a nested list `[node][dim]`.
    fn node_embeddings(&self, g: &PyGraph) -> PyResult<Vec<Vec<f64>>> {
        let y = model_forward(&g.inner, &self.config, &self.params).map_err(to_py_err)?;
        let d = self.config.model_dim;
        Ok(y.data().chunks(d).map(|c| c.to_vec()).collect())
    }

    /// Pooled graph embedding.
    fn graph_embedding(&self, g: &PyGraph) -> PyResult<Vec<f64>> {
        Ok(graph_embedding(&g.inner, &self.config, &self.params)
            .map_err(to_py_err)?
            .data()
            .to_vec())
    }

    /// Graph-level prediction vector (pool + MLP head).
    fn graph_prediction(&self, g: &PyGraph) -> PyResult<Vec<f64>> {
        let y = model_forward(&g.inner, &self.config, &self.params).map_err(to_py_err)?;
        Ok(graph_head(&y, &self.config, &self.params)
            .map_err(to_py_err)?
            .data()
            .to_vec())
    }

    /// Per-node predictions `[node][out_dim]`.
    fn node_predictions(&self, g: &PyGraph) -> PyResult<Vec<Vec<f64>>> {
        let y = model_forward(&g.inner, &self.config, &self.params).map_err(to_py_err)?;
        let out = node_head(&y, &self.params).map_err(to_py_err)?;
        Ok(out
            .data()
            .chunks(self.config.out_dim)
            .map(|c| c.to_vec())
            .collect())
    }

    /// L2 distance between the two graphs' pooled embeddings.
    fn embedding_distance(&self, g1: &PyGraph, g2: &PyGraph) -> PyResult<f64> {
        let a = self.graph_embedding(g1)?;
        let b = self.graph_embedding(g2)?;
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt())
    }

    /// Write the flat-f64 checkpoint plus its JSON manifest.
    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.params, &self.config, std::path::Path::new(path)).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<PyModel> {
        let (config, params) =
            load_checkpoint(std::path::Path::new(path)).map_err(to_py_err)?;
        Ok(PyModel { config, params })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(layers={}, dim={}, heads={}, k={}, s={}, seed={})",
            self.config.n_layers,
            self.config.model_dim,
            self.config.n_heads,
            self.config.k_walk,
            self.config.spe_bases,
            self.config.seed
        )
    }
}

/// Run the normalization autoencoder case study; returns
/// `(mse, radial_mse)`.
#[pyfunction]
#[pyo3(signature = (norm, n_points = 64, epochs = 5000, seed = 0))]
fn case_study(norm: &str, n_points: usize, epochs: usize, seed: u64) -> PyResult<(f64, f64)> {
    let kind = NormKind::parse(norm).map_err(to_py_err)?;
    let report = ppgt_core::harness::run_case_study(&ppgt_core::harness::CaseStudySpec::new(
        kind, n_points, epochs, seed,
    ))
    .map_err(to_py_err)?;
    Ok((report.mse, report.radial_mse))
}

#[pymodule]
fn ppgt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyGraphPair>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(cycle, m)?)?;
    m.add_function(wrap_pyfunction!(pair_bank, m)?)?;
    m.add_function(wrap_pyfunction!(rrwp, m)?)?;
    m.add_function(wrap_pyfunction!(spd_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(wl1_fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(gdwl_rrwp_fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_distinguish, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(case_study, m)?)?;
    Ok(())
}
