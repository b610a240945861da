use std::path::Path;
use std::process::Command;

use qtensor_control::defects::locate_defects_below;
use qtensor_control::experiments::{
    constant_uniaxial, curve_point, defect_pair, distance_to_curve, PlanarDefect,
};
use qtensor_control::fem::interpolate;
use qtensor_control::output::{vtk_boundary, vtk_state};
use qtensor_control::*;

fn qtctl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qtctl"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn presets_carry_the_experiment_constants() {
    let p1 = ProblemConfig::preset(Preset::PointDefect);
    assert_eq!(
        p1.bulk,
        BulkParams {
            a0: 1.0,
            a2: 16.32653061225,
            a3: 0.0,
            a4: 66.63890045814,
            b1: 1.0,
            b2: 2.0
        }
    );
    assert_eq!(
        (p1.physics.eta_dw, p1.physics.eta_gamma, p1.physics.lambda),
        (0.2, 100.0, 0.0)
    );
    assert_eq!(
        (p1.dt, p1.t_final, p1.n_steps().unwrap()),
        (0.004, 0.4, 100)
    );
    let w = p1.weights;
    assert_eq!(
        (
            w.beta_domain,
            w.beta_boundary,
            w.beta_final,
            w.alpha_domain,
            w.alpha_boundary
        ),
        (1.0, 0.0, 1.0, 0.0, 0.01)
    );
    assert_eq!(p1.bounds.boundary, Bound::Uniform(1.0));
    let p2 = ProblemConfig::preset(Preset::DefectPair);
    assert_eq!(p2.bounds.boundary, Bound::Uniform(0.6));
    assert_eq!(p2.bulk, p1.bulk);
    let p3 = ProblemConfig::preset(Preset::LineDefect);
    assert_eq!(p3.dim, Dim::Three);
    assert_eq!(
        p3.bulk,
        BulkParams {
            a0: 1.0,
            a2: 7.5021037403,
            a3: 60.975813166,
            a4: 66.519068908,
            b1: 1.0,
            b2: 2.0
        }
    );
    assert_eq!((p3.dt, p3.t_final, p3.n_steps().unwrap()), (0.006, 0.3, 50));
    assert!((p3.bulk.uniaxial_order(Dim::Three) - 0.700005531).abs() < 1e-8);
}

#[test]
fn config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    let mut cfg = ProblemConfig::preset(Preset::DefectPair);
    cfg.n_per_side = 12;
    cfg.output.checkpoint = true;
    cfg.save(&path).unwrap();
    assert_eq!(ProblemConfig::load(&path).unwrap(), cfg);
    assert!(matches!(
        ProblemConfig::load(&dir.path().join("missing.toml")),
        Err(Error::Io { .. })
    ));
    std::fs::write(&path, "preset = 7").unwrap();
    assert!(matches!(ProblemConfig::load(&path), Err(Error::Config(_))));
}

fn section_count(vtk: &str, key: &str) -> usize {
    let line = vtk
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("missing {key}"));
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn vtk_files_are_structurally_complete() {
    for (dim, n) in [(Dim::Two, 3), (Dim::Three, 2)] {
        let mesh = Mesh::unit(dim, n).unwrap();
        let basis = Basis::new(dim);
        let s = 0.5;
        let field = interpolate(&mesh, |_| constant_uniaxial(&basis, s)).unwrap();
        let vtk = vtk_state(&mesh, &basis, &field, "state");
        assert!(vtk
            .starts_with("# vtk DataFile Version 3.0\nstate\nASCII\nDATASET UNSTRUCTURED_GRID\n"));
        assert_eq!(section_count(&vtk, "POINTS"), mesh.n_vertices());
        assert_eq!(section_count(&vtk, "CELLS"), mesh.n_cells());
        assert_eq!(section_count(&vtk, "POINT_DATA"), mesh.n_vertices());
        let ty = if dim == Dim::Two { "5" } else { "10" };
        let types: Vec<&str> = vtk
            .lines()
            .skip_while(|l| !l.starts_with("CELL_TYPES"))
            .skip(1)
            .take(mesh.n_cells())
            .collect();
        assert!(types.iter().all(|t| *t == ty));
        let ncoef = dim.ncoef();
        assert!(vtk.contains(&format!(
            "q_coefficients {ncoef} {} double",
            mesh.n_vertices()
        )));
        assert!(
            vtk.contains("SCALARS lambda_max double 1") && vtk.contains("VECTORS director double")
        );
        assert!(vtk.contains(&format!("biaxiality 1 {} double", mesh.n_vertices())));
        let total_lines = 4
            + 1
            + mesh.n_vertices()
            + 1
            + mesh.n_cells()
            + 1
            + mesh.n_cells()
            + 1
            + 2
            + mesh.n_vertices()
            + 1
            + mesh.n_vertices()
            + 1
            + 1
            + mesh.n_vertices()
            + 1
            + mesh.n_vertices();
        assert_eq!(vtk.lines().count(), total_lines);

        let faces = vec![0.1; mesh.n_boundary_faces() * ncoef];
        let b = vtk_boundary(&mesh, &basis, &faces, "control");
        assert_eq!(section_count(&b, "CELLS"), mesh.n_boundary_faces());
        assert_eq!(section_count(&b, "CELL_DATA"), mesh.n_boundary_faces());
    }
}

#[test]
fn centered_defect_is_located() {
    let mesh = Mesh::unit(Dim::Two, 16).unwrap();
    let basis = Basis::new(Dim::Two);
    let d = PlanarDefect::plus_half(0.5, 0.5);
    let field = interpolate(&mesh, |x| d.eval(&basis, 0.7, 0.05, x)).unwrap();
    let report = locate_defects(&mesh, &basis, &field, 0.7);
    assert_eq!(report.defects.len(), 1, "{report:?}");
    let (_, dist) = report.nearest(&[0.5, 0.5, 0.0]).unwrap();
    assert!(dist <= mesh.h());
    assert!(report.polyline.is_empty());
}

#[test]
fn uniform_field_has_no_defects() {
    let mesh = Mesh::unit(Dim::Two, 8).unwrap();
    let basis = Basis::new(Dim::Two);
    let field = interpolate(&mesh, |_| constant_uniaxial(&basis, 0.7)).unwrap();
    assert!(locate_defects(&mesh, &basis, &field, 0.7).is_empty());
    assert!(locate_defects_below(&mesh, &basis, &field, 10.0).is_empty());
}

#[test]
fn defect_pair_target_has_exactly_two_defects() {
    let mesh = Mesh::unit(Dim::Two, 32).unwrap();
    let basis = Basis::new(Dim::Two);
    let field = interpolate(&mesh, |x| {
        defect_pair(&basis, 0.7, 0.05, (0.2, 0.6), (0.8, 0.4), x)
    })
    .unwrap();
    let report = locate_defects(&mesh, &basis, &field, 0.7);
    assert_eq!(report.defects.len(), 2, "{report:?}");
    for p in [[0.2, 0.6, 0.0], [0.8, 0.4, 0.0]] {
        assert!(report.nearest(&p).unwrap().1 <= mesh.h());
    }
}

#[test]
fn curved_line_target_is_traced_slice_by_slice() {
    let cfg = ProblemConfig {
        n_per_side: 16,
        ..ProblemConfig::preset(Preset::LineDefect)
    };
    let setup = Setup::new(&cfg).unwrap();
    let report = setup.defects(&setup.problem.targets.final_state);
    assert_eq!(report.polyline.len(), 17);
    let h = setup.mesh().h();
    assert!(
        report.polyline.iter().all(|p| distance_to_curve(p) <= h),
        "{:?}",
        report.polyline
    );
    assert_eq!(curve_point(0.0), [0.2, 0.2, 0.0]);
    assert!(distance_to_curve(&[0.8, 0.8, 1.0]) < 1e-12);
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn show_config_prints_a_loadable_configuration() {
    let out = qtctl(&[
        "show-config",
        "--preset",
        "2",
        "--n",
        "10",
        "--max-iters",
        "3",
    ]);
    assert!(out.status.success());
    let cfg = ProblemConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(
        (cfg.preset, cfg.n_per_side, cfg.optimizer.max_iter),
        (Preset::DefectPair, 10, 3)
    );
}

#[test]
fn forward_command_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("fwd");
    let out = qtctl(&[
        "forward",
        "--preset",
        "1",
        "--n",
        "8",
        "--tf",
        "0.02",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "config.toml",
        "state_initial.vtk",
        "state_final.vtk",
        "target.vtk",
        "control_boundary.vtk",
        "defects.json",
        "summary.json",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let defects: DefectReport = serde_json::from_str(&read(&out_dir, "defects.json")).unwrap();
    assert_eq!(defects.defects.len(), 1);
    let cfg = ProblemConfig::load(&out_dir.join("config.toml")).unwrap();
    assert_eq!((cfg.n_per_side, cfg.t_final), (8, 0.02));
}

#[test]
fn run_command_writes_history_and_uses_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("opt");
    let out = qtctl(&[
        "run",
        "--preset",
        "1",
        "--n",
        "6",
        "--tf",
        "0.02",
        "--max-iters",
        "2",
        "--checkpoint",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let history = read(&out_dir, "history.csv");
    let mut lines = history.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,objective,residual,step,line_search_trials,newton_iterations,max_newton_residual,active_fraction"
    );
    assert_eq!(lines.count(), 3);
    assert!(out_dir
        .join("checkpoints")
        .join("state_000005.bin")
        .exists());
    let summary: serde_json::Value = serde_json::from_str(&read(&out_dir, "summary.json")).unwrap();
    assert_eq!(summary["iterations"], 2);
}

#[test]
fn configuration_conflicts_fail_before_computing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let mut cfg = ProblemConfig::preset(Preset::LineDefect);
    cfg.output.dir = dir.path().join("never");
    let text = cfg.to_toml_string().unwrap().replace("dim = 3", "dim = 2");
    std::fs::write(&path, text).unwrap();
    let out = qtctl(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(!dir.path().join("never").exists());

    let out = qtctl(&["forward", "--dt", "0.003"]);
    assert_eq!(out.status.code(), Some(2));
    let out = qtctl(&["forward", "--preset", "9"]);
    assert_eq!(out.status.code(), Some(2));
}
