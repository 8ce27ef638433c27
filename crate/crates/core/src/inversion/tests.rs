use super::*;

const FREE: Bounds = Bounds {
    lambda: [-1e300, 1e300],
    mu: [-1e300, 1e300],
};

#[test]
fn reg_factor_balances_gradient_sizes() {
    let g_mis = [6.0, 8.0];
    let g_reg = [0.0, 2.0];
    let r = choose_reg_factor(&g_reg, &g_mis, 0.5);
    assert_eq!(r, 2.5);
    assert_eq!(choose_reg_factor(&g_reg, &g_mis, 0.25), r / 2.0);
    assert!((r * norm(&g_reg) - 0.5 * norm(&g_mis)).abs() < 1e-15);
    assert_eq!(choose_reg_factor(&[0.0, 0.0], &g_mis, 0.5), 0.0);
}

#[test]
fn biasing_formula() {
    let b = bias_lambda_direction(&[1.0, 0.0], &[0.0, 2.0], 0.5).unwrap();
    assert_eq!(b, vec![0.5, 0.5]);
    let sl = [3.0, -4.0];
    assert_eq!(bias_lambda_direction(&sl, &[0.0, 2.0], 0.0).unwrap(), sl.to_vec());
    let full = bias_lambda_direction(&sl, &[0.0, 2.0], 1.0).unwrap();
    assert_eq!(full, vec![0.0, 5.0]);
    assert!(matches!(bias_lambda_direction(&[0.0, 0.0], &[1.0, 0.0], 0.3), Err(FwiError::ZeroDirection)));
    for w in [0.0, 0.1, 0.5, 0.9, 1.0] {
        let b = bias_lambda_direction(&sl, &[1.0, 7.0], w).unwrap();
        assert!(norm(&b) <= norm(&sl) * (1.0 + 1e-15));
    }
}

#[test]
fn bias_weight_schedule() {
    let b = BiasConfig {
        enabled: true,
        k_bias: 50,
    };
    assert_eq!(b.weight(0), 1.0);
    assert_eq!(b.weight(25), 0.5);
    assert_eq!(b.weight(50), 0.0);
    assert_eq!(b.weight(80), 0.0);
    assert_eq!(BiasConfig::default().weight(0), 0.0);
}

fn half_square(l: &[f64], _: &[f64]) -> Result<(f64, ())> {
    Ok((0.5 * l[0] * l[0], ()))
}

#[test]
fn armijo_accepts_full_step() {
    let p = LineSearchParams::default();
    let o = armijo_search(half_square, 0.5, &[1.0], &[], [&[-1.0], &[]], [&[1.0], &[]], &p, &FREE).unwrap();
    assert_eq!(o.alpha, [1.0, 1.0]);
    assert_eq!(o.backtracks, 0);
    assert_eq!(o.j_new, 0.0);
    assert!((o.bound - (0.5 - 1e-4)).abs() < 1e-16);
}

#[test]
fn armijo_backtracks_once() {
    let p = LineSearchParams::default();
    let o = armijo_search(half_square, 0.5, &[1.0], &[], [&[-3.0], &[]], [&[1.0], &[]], &p, &FREE).unwrap();
    assert_eq!(o.alpha[0], 0.5);
    assert_eq!(o.backtracks, 1);
    assert_eq!(o.j_new, 0.125);
    assert!(o.j_new < 0.5 - 1.5e-4);
}

#[test]
fn armijo_fails_on_zero_direction() {
    let p = LineSearchParams {
        max_backtracks: 5,
        ..Default::default()
    };
    let r = armijo_search(half_square, 0.5, &[1.0], &[], [&[0.0], &[]], [&[1.0], &[]], &p, &FREE);
    assert!(matches!(r, Err(FwiError::LineSearchFailed { backtracks: 5 })));
}

#[test]
fn armijo_clips_trials() {
    let p = LineSearchParams::default();
    let b = Bounds {
        lambda: [0.25, 10.0],
        mu: [0.0, 1.0],
    };
    let o = armijo_search(half_square, 0.5, &[1.0], &[], [&[-1.0], &[]], [&[1.0], &[]], &p, &b).unwrap();
    assert_eq!(o.lambda, vec![0.25]);
}

#[test]
fn lbfgs_with_armijo_converges_on_diagonal_quadratic() {
    let d = [1.0, 10.0];
    let eval = |m: &[f64], _: &[f64]| -> Result<(f64, ())> { Ok((0.5 * (d[0] * m[0] * m[0] + d[1] * m[1] * m[1]), ())) };
    let grad = |m: &[f64]| vec![d[0] * m[0], d[1] * m[1]];
    let mut m = vec![1.0, 1.0];
    let mut mem = LbfgsMemory::new(15);
    let p = LineSearchParams::default();
    let mut iterations = 0;
    let mut g = grad(&m);
    while norm(&g) > 1e-10 {
        assert!(iterations < 10, "|g| = {:e} after {iterations} iterations", norm(&g));
        let s = mem.direction(&g);
        assert!(dot(&g, &s) < 0.0);
        let j0 = eval(&m, &[]).unwrap().0;
        let o = armijo_search(eval, j0, &m, &[], [&s, &[]], [&g, &[]], &p, &FREE).unwrap();
        let g_new = grad(&o.lambda);
        let step: Vec<f64> = o.lambda.iter().zip(&m).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        mem.push(step, y);
        m = o.lambda;
        g = g_new;
        iterations += 1;
    }
    // backtracking from alpha = 1 breaks the finite-termination property of
    // exact-line-search BFGS; the run needs 10 iterations here
    assert_eq!(iterations, 10);
}

#[test]
fn config_validation() {
    let c = InversionConfig::new(vec![StageConfig::new("p20", 0.5, 0.5, 10)]);
    c.validate().unwrap();
    let l = single_parameter_mode(c.clone(), Parameter::Lambda).unwrap();
    assert!(l.freeze_lambda && !l.freeze_mu);
    assert!(single_parameter_mode(l, Parameter::Mu).is_err());
    let mut bad = c.clone();
    bad.stages[0].wp = 1.5;
    assert!(bad.validate().is_err());
    let mut bad = c;
    bad.line_search.shrink = 1.0;
    assert!(bad.validate().is_err());
}

#[test]
fn history_csv_columns() {
    let r = IterationRecord {
        k: 3,
        stage: 1,
        f_max: 30.0,
        j: 2.0,
        misfit: 1.5,
        reg: 0.5,
        r_lambda: 0.0,
        r_mu: 1e-3,
        alpha_lambda: 0.5,
        alpha_mu: 0.5,
        w: 0.0,
        backtracks: 1,
        j_new: 1.0,
        armijo_bound: 1.9,
        g_reg_norm: [0.0; 2],
        g_mis_norm: [0.0; 2],
        wp: 0.3,
    };
    let csv = history_csv(&[r]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,stage,J,misfit,reg,R_lambda,R_mu,alpha_lambda,alpha_mu,W,backtracks");
    assert_eq!(lines[1].split(',').count(), 11);
    assert!(lines[1].starts_with("3,1,"));
}
