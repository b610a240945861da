use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use qtensor_control as qt;

fn to_py(e: qt::Error) -> PyErr {
    match e {
        qt::Error::Precondition(_) | qt::Error::Config(_) | qt::Error::Input(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(format!("{}: {e}", e.class())),
    }
}

fn dim(d: usize) -> PyResult<qt::Dim> {
    qt::Dim::new(d).map_err(to_py)
}

/// Resolved experiment configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: qt::ProblemConfig,
}

#[pymethods]
impl PyConfig {
    /// Configuration of experiment 1, 2 or 3.
    #[staticmethod]
    fn preset(id: u8) -> PyResult<Self> {
        let preset = qt::Preset::try_from(id).map_err(|e| to_py(qt::Error::Config(e)))?;
        Ok(PyConfig {
            inner: qt::ProblemConfig::preset(preset),
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: qt::ProblemConfig::from_toml_str(text).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim.get()
    }

    #[getter]
    fn n_per_side(&self) -> usize {
        self.inner.n_per_side
    }

    #[setter]
    fn set_n_per_side(&mut self, n: usize) {
        self.inner.n_per_side = n;
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[setter]
    fn set_dt(&mut self, dt: f64) {
        self.inner.dt = dt;
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.inner.t_final
    }

    #[setter]
    fn set_t_final(&mut self, t: f64) {
        self.inner.t_final = t;
    }

    #[getter]
    fn max_iter(&self) -> usize {
        self.inner.optimizer.max_iter
    }

    #[setter]
    fn set_max_iter(&mut self, it: usize) {
        self.inner.optimizer.max_iter = it;
    }

    #[getter]
    fn n_steps(&self) -> PyResult<usize> {
        self.inner.n_steps().map_err(to_py)
    }
}

/// Located defect: position, nearest vertex and largest eigenvalue there.
#[pyclass(name = "Defect", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyDefect {
    position: [f64; 3],
    vertex: usize,
    lambda_max: f64,
}

#[pymethods]
impl PyDefect {
    fn __repr__(&self) -> String {
        let p = self.position;
        format!(
            "Defect(({:.4}, {:.4}, {:.4}), lambda_max={:.4})",
            p[0], p[1], p[2], self.lambda_max
        )
    }
}

fn defects(report: &qt::DefectReport) -> Vec<PyDefect> {
    report
        .defects
        .iter()
        .map(|d| PyDefect {
            position: d.position,
            vertex: d.vertex,
            lambda_max: d.lambda_max,
        })
        .collect()
}

#[pyclass(name = "ForwardResult", get_all)]
struct PyForwardResult {
    objective: f64,
    newton_iterations: Vec<usize>,
    final_state: Vec<f64>,
    defects: Vec<PyDefect>,
    polyline: Vec<[f64; 3]>,
}

#[pyclass(name = "IterationRecord", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyIteration {
    iter: usize,
    objective: f64,
    residual: f64,
    step: f64,
    line_search_trials: usize,
    active_fraction: f64,
}

#[pyclass(name = "OptimizationResult", get_all)]
struct PyOptimizationResult {
    status: String,
    objective: f64,
    residual: f64,
    history: Vec<PyIteration>,
    boundary_control: Vec<f64>,
    final_state: Vec<f64>,
    defects: Vec<PyDefect>,
    polyline: Vec<[f64; 3]>,
}

/// Discretized experiment: mesh, model, targets and initial control.
#[pyclass(name = "Experiment")]
struct PyExperiment {
    setup: qt::Setup,
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(PyExperiment {
            setup: qt::Setup::new(&config.inner).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.setup.mesh().n_vertices()
    }

    #[getter]
    fn n_boundary_faces(&self) -> usize {
        self.setup.mesh().n_boundary_faces()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.setup.mesh().h()
    }

    #[getter]
    fn s_star(&self) -> f64 {
        self.setup.s_star
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.setup.mesh().vertices().to_vec()
    }

    #[getter]
    fn initial_state(&self) -> Vec<f64> {
        self.setup.problem.initial_state.clone()
    }

    #[getter]
    fn target(&self) -> Vec<f64> {
        self.setup.problem.targets.final_state.clone()
    }

    #[getter]
    fn initial_control(&self) -> Vec<f64> {
        self.setup.initial_control.boundary.clone()
    }

    /// Objective value for a boundary control.
    fn objective(&self, py: Python<'_>, boundary: Vec<f64>) -> PyResult<f64> {
        let ctrl = qt::ControlSet::boundary_only(boundary);
        py.detach(|| self.setup.problem.evaluate(&ctrl).map(|e| e.objective))
            .map_err(to_py)
    }

    /// Reduced gradient (boundary part) for a boundary control.
    fn gradient(&self, py: Python<'_>, boundary: Vec<f64>) -> PyResult<Vec<f64>> {
        let p = &self.setup.problem;
        let ctrl = qt::ControlSet::boundary_only(boundary);
        py.detach(|| {
            let eval = p.evaluate(&ctrl)?;
            let adj = p.adjoint(&eval.trajectory)?;
            Ok(p.reduced_gradient(&adj, &ctrl).boundary)
        })
        .map_err(to_py)
    }

    /// Defects of a nodal field.
    fn locate_defects(&self, field: Vec<f64>) -> PyResult<Vec<PyDefect>> {
        if field.len() != self.setup.problem.model.state_len() {
            return Err(PyValueError::new_err(
                "field length does not match the mesh",
            ));
        }
        Ok(defects(&self.setup.defects(&field)))
    }

    /// Runs the state equation under the initial control; writes artifacts to `out_dir` if given.
    #[pyo3(signature = (out_dir=None))]
    fn forward(&self, py: Python<'_>, out_dir: Option<PathBuf>) -> PyResult<PyForwardResult> {
        let out = py
            .detach(|| {
                let out = self.setup.run_forward()?;
                if let Some(dir) = &out_dir {
                    self.setup.write_forward(dir, &out)?;
                }
                Ok(out)
            })
            .map_err(to_py)?;
        Ok(PyForwardResult {
            objective: out.objective,
            newton_iterations: out.report.iterations.clone(),
            defects: defects(&out.defects),
            polyline: out.defects.polyline.clone(),
            final_state: out.final_state,
        })
    }

    /// Optimizes the boundary control; writes artifacts to `out_dir` if given.
    #[pyo3(signature = (out_dir=None))]
    fn optimize(&self, py: Python<'_>, out_dir: Option<PathBuf>) -> PyResult<PyOptimizationResult> {
        let out = py
            .detach(|| {
                let out = self.setup.run_optimization(|_| {})?;
                if let Some(dir) = &out_dir {
                    self.setup.write_optimization(dir, &out)?;
                }
                Ok(out)
            })
            .map_err(to_py)?;
        let r = &out.result;
        Ok(PyOptimizationResult {
            status: format!("{:?}", r.status),
            objective: r.objective,
            residual: r.residual,
            history: r
                .history
                .iter()
                .map(|h| PyIteration {
                    iter: h.iter,
                    objective: h.objective,
                    residual: h.residual,
                    step: h.step,
                    line_search_trials: h.line_search_trials,
                    active_fraction: h.active_fraction,
                })
                .collect(),
            boundary_control: r.control.boundary.clone(),
            defects: defects(&out.defects),
            polyline: out.defects.polyline.clone(),
            final_state: out.final_state,
        })
    }
}

/// Bulk potential with its cutoff, in the orthonormal coefficient basis.
#[pyclass(name = "BulkPotential")]
struct PyPotential {
    inner: qt::BulkPotential,
}

impl PyPotential {
    fn check(&self, c: &[f64]) -> PyResult<()> {
        if c.len() != self.inner.ncoef() {
            return Err(PyValueError::new_err(format!(
                "expected {} coefficients",
                self.inner.ncoef()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyPotential {
    /// Potential of experiments 1 and 2 (`dim = 2`) or experiment 3 (`dim = 3`).
    #[new]
    fn new(dim_: usize) -> PyResult<Self> {
        let d = dim(dim_)?;
        let params = if d == qt::Dim::Two {
            qt::BulkParams::planar()
        } else {
            qt::BulkParams::spatial()
        };
        Ok(PyPotential {
            inner: qt::BulkPotential::new(params, d).map_err(to_py)?,
        })
    }

    #[getter]
    fn uniaxial_order(&self) -> f64 {
        self.inner.params().uniaxial_order(self.inner.dim())
    }

    fn psi(&self, c: Vec<f64>) -> PyResult<f64> {
        self.check(&c)?;
        Ok(self.inner.psi(&c))
    }

    fn psi_grad(&self, c: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&c)?;
        let mut g = vec![0.0; c.len()];
        self.inner.psi_grad(&c, &mut g);
        Ok(g)
    }

    /// Coefficients of `s (n n^T - I/d)` for a unit director `n`.
    fn uniaxial(&self, s: f64, n: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .basis()
            .uniaxial(s, &n)
            .map_err(to_py)?
            .as_slice()
            .to_vec())
    }

    fn eigenvalues(&self, c: Vec<f64>) -> PyResult<[f64; 3]> {
        self.check(&c)?;
        Ok(self.inner.basis().eigenvalues(&c))
    }

    fn biaxiality(&self, c: Vec<f64>) -> PyResult<f64> {
        self.check(&c)?;
        Ok(self.inner.basis().biaxiality_coeffs(&c))
    }
}

#[pymodule]
fn qtensor_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyExperiment>()?;
    m.add_class::<PyPotential>()?;
    m.add_class::<PyDefect>()?;
    m.add_class::<PyForwardResult>()?;
    m.add_class::<PyOptimizationResult>()?;
    m.add_class::<PyIteration>()?;
    Ok(())
}
