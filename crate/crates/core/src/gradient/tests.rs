use super::*;
use crate::specgrid::{build_mesh, build_mesh_with, GridSpec, MeshOptions, StressSpace};

fn rd_mesh(extent: [f64; 3], h: f64) -> SpectralMesh {
    let opts = MeshOptions {
        regular_everywhere: true,
        clamp_outer: false,
        stress_space: StressSpace::Continuous,
    };
    build_mesh_with(GridSpec::new(extent, h, 0.0), opts).unwrap()
}

fn nodal(mesh: &SpectralMesh, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
    mesh.rd_nodes.iter().map(|&n| f(mesh.coords[n as usize])).collect()
}

#[test]
fn mass_sums_to_rd_volume() {
    let mesh = build_mesh(GridSpec::new([4.0, 6.0, 3.0], 1.0, 1.0)).unwrap();
    let space = MaterialSpace::new(&mesh);
    assert_eq!(space.len(), mesh.rd_nodes.len());
    let total: f64 = space.mass().iter().sum();
    assert!((total - 72.0).abs() < 1e-10);
    assert!(space.mass().iter().all(|&m| m > 0.0));
}

#[test]
fn constant_fields_have_no_tn_and_closed_form_tv() {
    let mesh = build_mesh(GridSpec::new([4.0, 4.0, 2.0], 1.0, 1.0)).unwrap();
    let space = MaterialSpace::new(&mesh);
    let f = vec![1.25e8; space.len()];
    for kind in [RegKind::Tn, RegKind::Tv] {
        let g = space.reg_gradient(&f, kind, 0.01).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }
    // 2.5 m elements do not cancel exactly without removing the constant
    let coarse = MaterialSpace::new(&build_mesh(GridSpec::new([5.0, 5.0, 5.0], 2.5, 2.5)).unwrap());
    let c = vec![8e7; coarse.len()];
    assert!(coarse.reg_gradient(&c, RegKind::Tn, 0.01).unwrap().iter().all(|&v| v == 0.0));
    assert_eq!(coarse.reg_integral(&c, RegKind::Tn, 0.01).unwrap(), 0.0);
    let mut spec = RegularizationSpec {
        r_lambda: 3.0,
        r_mu: 5.0,
        ..Default::default()
    };
    assert_eq!(space.reg_value(&f, &f, &spec).unwrap(), 0.0);
    spec.kind = RegKind::Tv;
    let v = space.reg_value(&f, &f, &spec).unwrap();
    let expect = 0.5 * 8.0 * 0.1 * 32.0;
    assert!((v - expect).abs() < 1e-12 * expect);
}

#[test]
fn tn_of_linear_slope() {
    let mesh = build_mesh(GridSpec::new([4.0, 4.0, 3.0], 1.0, 1.0)).unwrap();
    let space = MaterialSpace::new(&mesh);
    let s = 0.7;
    let f = nodal(&mesh, |p| 80.0 + s * p[2]);
    let spec = RegularizationSpec {
        r_lambda: 2.0,
        ..Default::default()
    };
    let v = space.reg_value(&f, &f, &spec).unwrap();
    assert!((v - s * s * 48.0).abs() < 1e-9 * v);
}

#[test]
fn tn_of_x_is_boundary_flux() {
    let h = 2.0;
    let mesh = rd_mesh([h, h, h], h);
    let space = MaterialSpace::new(&mesh);
    let f = nodal(&mesh, |p| p[0]);
    let g = space.reg_gradient(&f, RegKind::Tn, 0.0).unwrap();
    let w = &mesh.basis.weights;
    let x_max = mesh.coords.iter().fold(f64::MIN, |m, c| m.max(c[0]));
    let x_min = mesh.coords.iter().fold(f64::MAX, |m, c| m.min(c[0]));
    for (i, &n) in mesh.rd_nodes.iter().enumerate() {
        let ijk = mesh.node_ijk(n as usize);
        let face = w[ijk[1]] * w[ijk[2]] * (h / 2.0) * (h / 2.0);
        let x = mesh.coords[n as usize][0];
        let expect = if x == x_max {
            face
        } else if x == x_min {
            -face
        } else {
            0.0
        };
        assert!((g[i] - expect).abs() < 1e-13, "node {n}: {} vs {expect}", g[i]);
    }
}

#[test]
fn tv_limits() {
    let mesh = build_mesh(GridSpec::new([3.0, 3.0, 3.0], 1.0, 1.0)).unwrap();
    let space = MaterialSpace::new(&mesh);
    // steep linear field: TV = TN / sqrt(|grad f|^2 + eps)
    let s = 50.0;
    let f = nodal(&mesh, |p| s * (p[0] + 2.0 * p[2]));
    let tn = space.reg_gradient(&f, RegKind::Tn, 0.01).unwrap();
    let tv = space.reg_gradient(&f, RegKind::Tv, 0.01).unwrap();
    let norm = (5.0 * s * s).sqrt();
    for (a, b) in tn.iter().zip(&tv) {
        assert!((a / norm - b).abs() <= 0.01 * (a / norm).abs() + 1e-12);
    }
    // tiny perturbation: TV = TN / sqrt(eps)
    let eps = 0.04;
    let f = nodal(&mesh, |p| 1e-6 * (p[0] * p[1] + p[2].powi(2)));
    let tn = space.reg_gradient(&f, RegKind::Tn, eps).unwrap();
    let tv = space.reg_gradient(&f, RegKind::Tv, eps).unwrap();
    let scale = tn.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in tn.iter().zip(&tv) {
        assert!((a / eps.sqrt() - b).abs() <= 1e-6 * scale / eps.sqrt());
    }
}

#[test]
fn misfit_kernel_on_uniform_divergence() {
    let mesh = rd_mesh([2.0, 2.0, 2.0], 1.0);
    let space = MaterialSpace::new(&mesh);
    let n = space.len();
    let mut u = vec![0.0; 3 * n];
    for (i, &node) in mesh.rd_nodes.iter().enumerate() {
        u[3 * i] = mesh.coords[node as usize][0];
    }
    let (mut gl, mut gm) = (vec![0.0; n], vec![0.0; n]);
    space.accumulate_misfit(&u, &vec![0.0; 3 * n], 1.0, &mut gl, &mut gm);
    assert!(gl.iter().chain(&gm).all(|&v| v == 0.0));

    space.accumulate_misfit(&u, &u, 1.0, &mut gl, &mut gm);
    for i in 0..n {
        assert!((gl[i] + space.mass()[i]).abs() < 1e-13);
        assert!((gm[i] + 2.0 * space.mass()[i]).abs() < 1e-13);
    }
    let total: f64 = gl.iter().sum();
    assert!((total + 8.0).abs() < 1e-12);
}

#[test]
fn reduced_gradient_and_directional_derivative() {
    let mesh = rd_mesh([2.0, 1.0, 1.0], 1.0);
    let space = MaterialSpace::new(&mesh);
    let n = space.len();
    let zero = vec![0.0; n];
    assert!(space.reduced_gradient(&zero, &zero, 3.0).unwrap().iter().all(|&v| v == 0.0));
    let g_mis: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
    let g_reg: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    let g = space.reduced_gradient(&g_mis, &g_reg, 0.0).unwrap();
    for i in 0..n {
        assert!((g[i] * space.mass()[i] - g_mis[i]).abs() < 1e-12);
    }
    let g = space.reduced_gradient(&g_mis, &g_reg, 2.0).unwrap();
    let j = 5;
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    let d = space.directional_derivative_co(&g, &e).unwrap();
    assert!((d - (2.0 * g_reg[j] + g_mis[j])).abs() < 1e-12);
    assert_eq!(space.directional_derivative_co(&g, &zero).unwrap(), 0.0);
    assert!(space.directional_derivative_co(&g, &e[1..]).is_err());
}

#[test]
fn fd_on_quadratic_toy() {
    let m = vec![0.3, -1.2, 2.0];
    let mu = vec![0.0; 3];
    let j = |l: &[f64], _: &[f64]| Ok(0.5 * l.iter().map(|v| v * v).sum::<f64>());
    let e = vec![0.0, 1.0, 0.0];
    let h = 0.125;
    let d = directional_derivative_fd(j, &m, &mu, &e, Parameter::Lambda, h, None).unwrap();
    assert!((d - (m[1] + h / 2.0)).abs() < 1e-14);
    let d = directional_derivative_fd(j, &m, &mu, &[0.0; 3], Parameter::Lambda, h, None).unwrap();
    assert_eq!(d, 0.0);
    assert!(directional_derivative_fd(j, &m, &mu, &e, Parameter::Mu, 0.0, None).is_err());
}

#[test]
fn misaligned_stores_are_rejected() {
    let mesh = rd_mesh([1.0, 1.0, 1.0], 1.0);
    let space = MaterialSpace::new(&mesh);
    let len = 3 * space.len();
    let mut a = SnapshotStore::in_memory(len, 2, 0.1, 4).unwrap();
    let mut b = SnapshotStore::in_memory(len, 1, 0.1, 4).unwrap();
    assert!(misfit_gradients(&mut a, &mut b, &space, TimeRule::Trapezoid).is_err());
    let mut b = SnapshotStore::in_memory(len, 2, 0.1, 4).unwrap();
    for _ in 0..3 {
        a.push(&vec![1.0; len]).unwrap();
        b.push(&vec![0.0; len]).unwrap();
    }
    let (gl, gm) = misfit_gradients(&mut a, &mut b, &space, TimeRule::Trapezoid).unwrap();
    assert!(gl.iter().chain(&gm).all(|&v| v == 0.0));
}

#[test]
fn gradcheck_csv_has_one_row_per_case() {
    let row = GradCheckRow {
        case: "p20".into(),
        f_max: 20.0,
        coords: [0.0, 0.0, -2.5],
        field: Parameter::Mu,
        d_co: -3.035e-9,
        d_fd: vec![(1e5, -3.036e-9), (1e4, -3.03501e-9)],
    };
    let csv = gradcheck_csv(&[row.clone(), row]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("case,f_max,x,y,z,field,d_co,d_fd(h=1e5)"));
    assert!(lines[1].contains(",mu,"));
}
