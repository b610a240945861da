//! Experiment setup from a configuration and artifact emission.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::config::{Preset, ProblemConfig};
use crate::control::{
    ControlSet, IterationRecord, OptimizationResult, OptimizerStatus, Problem, Targets, TimeField,
};
use crate::defects::{locate_defects, DefectReport};
use crate::error::Result;
use crate::experiments::{constant_uniaxial, curved_line_defect, defect_pair, PlanarDefect};
use crate::fem::{interpolate, interpolate_faces, Discretization};
use crate::forward::{Model, NewtonReport, Trajectory};
use crate::mesh::{Mesh, Point};
use crate::output;
use crate::qtensor::{Basis, BulkPotential, QCoeffs};

/// Problem, initial control and derived constants for one configuration.
#[derive(Clone, Debug)]
pub struct Setup {
    pub config: ProblemConfig,
    pub problem: Problem,
    pub initial_control: ControlSet,
    /// Uniaxial order parameter of the bulk minimum.
    pub s_star: f64,
}

impl Setup {
    pub fn new(config: &ProblemConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        let mesh = Mesh::unit(dim, config.n_per_side)?;
        let potential = BulkPotential::new(config.bulk, dim)?;
        let basis = potential.basis().clone();
        let disc = Arc::new(Discretization::new(mesh, potential)?);
        let checkpoint = config
            .output
            .checkpoint
            .then(|| config.output.dir.join("checkpoints"));
        let model = Model::new(disc.clone(), config.model_params()?)?
            .with_solver(config.solver)
            .with_checkpoint_dir(checkpoint);
        let s = config.bulk.uniaxial_order(dim);
        let delta = config.physics.eta_dw / 4.0;
        let mesh = disc.mesh();

        let state = |f: &dyn Fn(&Point) -> QCoeffs| interpolate(mesh, f);
        let (q0, target, u0) = match config.preset {
            Preset::PointDefect => {
                let center = PlanarDefect::plus_half(0.5, 0.5);
                let goal = PlanarDefect::plus_half(0.25, 0.35);
                let control = PlanarDefect {
                    a: 0.5,
                    b: 0.5,
                    degree: 1.0,
                    offset: 0.0,
                };
                (
                    state(&|x| center.eval(&basis, s, delta, x))?,
                    state(&|x| goal.eval(&basis, s, delta, x))?,
                    interpolate_faces(mesh, |x| control.eval(&basis, s, delta, x))?,
                )
            }
            Preset::DefectPair => (
                state(&|x| defect_pair(&basis, s, delta, (0.4, 0.505), (0.6, 0.495), x))?,
                state(&|x| defect_pair(&basis, s, delta, (0.2, 0.6), (0.8, 0.4), x))?,
                interpolate_faces(mesh, |_| constant_uniaxial(&basis, s))?,
            ),
            Preset::LineDefect => {
                let straight = PlanarDefect::plus_half(0.5, 0.5);
                (
                    state(&|x| straight.eval(&basis, s, delta, x))?,
                    state(&|x| curved_line_defect(&basis, s, delta, x))?,
                    interpolate_faces(mesh, |x| straight.eval(&basis, s, delta, x))?,
                )
            }
        };
        let targets = Targets {
            domain: TimeField::Constant(target.clone()),
            boundary: vec![0.0; target.len()],
            final_state: target,
        };
        let problem = Problem::new(model, q0, targets, config.weights, config.bounds.clone())?;
        Ok(Setup {
            config: config.clone(),
            problem,
            initial_control: ControlSet::boundary_only(u0),
            s_star: s,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.problem.model.disc().mesh()
    }

    pub fn basis(&self) -> &Basis {
        self.problem.model.disc().potential().basis()
    }

    pub fn defects(&self, field: &[f64]) -> DefectReport {
        locate_defects(self.mesh(), self.basis(), field, self.s_star)
    }

    /// Forward run under the (projected) initial control.
    pub fn run_forward(&self) -> Result<ForwardOutcome> {
        let control = self.problem.project(&self.initial_control);
        let eval = self.problem.evaluate(&control)?;
        let final_state = eval.trajectory.final_state()?.into_owned();
        Ok(ForwardOutcome {
            defects: self.defects(&final_state),
            objective: eval.objective,
            report: eval.report,
            trajectory: eval.trajectory,
            control,
            final_state,
        })
    }

    pub fn run_optimization(
        &self,
        observe: impl FnMut(&IterationRecord),
    ) -> Result<OptimizationOutcome> {
        let result =
            self.problem
                .optimize_with(&self.initial_control, &self.config.optimizer, observe)?;
        let final_state = result.trajectory.final_state()?.into_owned();
        Ok(OptimizationOutcome {
            defects: self.defects(&final_state),
            final_state,
            result,
        })
    }

    fn write_common(
        &self,
        dir: &Path,
        final_state: &[f64],
        control: &ControlSet,
        defects: &DefectReport,
    ) -> Result<()> {
        let mesh = self.mesh();
        let basis = self.basis();
        self.config.save(&dir.join("config.toml"))?;
        output::write_vtk_state(
            &dir.join("state_initial.vtk"),
            mesh,
            basis,
            &self.problem.initial_state,
            "Q at t = 0",
        )?;
        output::write_vtk_state(
            &dir.join("state_final.vtk"),
            mesh,
            basis,
            final_state,
            "Q at final time",
        )?;
        output::write_vtk_state(
            &dir.join("target.vtk"),
            mesh,
            basis,
            &self.problem.targets.final_state,
            "final-time target",
        )?;
        output::write_vtk_boundary(
            &dir.join("control_boundary.vtk"),
            mesh,
            basis,
            &control.boundary,
            "boundary control",
        )?;
        output::write_json(&dir.join("defects.json"), defects)
    }

    pub fn write_forward(&self, dir: &Path, out: &ForwardOutcome) -> Result<()> {
        self.write_common(dir, &out.final_state, &out.control, &out.defects)?;
        output::write_json(
            &dir.join("summary.json"),
            &ForwardSummary {
                preset: self.config.preset.id(),
                n_per_side: self.config.n_per_side,
                objective: out.objective,
                newton: &out.report,
                defects: out.defects.defects.len(),
            },
        )
    }

    pub fn write_optimization(&self, dir: &Path, out: &OptimizationOutcome) -> Result<()> {
        let r = &out.result;
        self.write_common(dir, &out.final_state, &r.control, &out.defects)?;
        output::write_history(&dir.join("history.csv"), &r.history)?;
        output::write_json(
            &dir.join("summary.json"),
            &OptimizationSummary {
                preset: self.config.preset.id(),
                n_per_side: self.config.n_per_side,
                status: r.status,
                iterations: r.history.len() - 1,
                initial_objective: r.history[0].objective,
                objective: r.objective,
                initial_residual: r.history[0].residual,
                residual: r.residual,
                defects: out.defects.defects.len(),
            },
        )
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutcome {
    pub control: ControlSet,
    pub trajectory: Trajectory,
    pub report: NewtonReport,
    pub objective: f64,
    pub final_state: Vec<f64>,
    pub defects: DefectReport,
}

#[derive(Clone, Debug)]
pub struct OptimizationOutcome {
    pub result: OptimizationResult,
    pub final_state: Vec<f64>,
    pub defects: DefectReport,
}

#[derive(Serialize)]
struct ForwardSummary<'a> {
    preset: u8,
    n_per_side: usize,
    objective: f64,
    newton: &'a NewtonReport,
    defects: usize,
}

#[derive(Serialize)]
struct OptimizationSummary {
    preset: u8,
    n_per_side: usize,
    status: OptimizerStatus,
    iterations: usize,
    initial_objective: f64,
    objective: f64,
    initial_residual: f64,
    residual: f64,
    defects: usize,
}
