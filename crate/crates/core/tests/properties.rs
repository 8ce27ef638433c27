//! Randomized properties of the quadrature, L-BFGS and line-search building blocks.

use approx::assert_relative_eq;
use proptest::prelude::*;

use pmlfwi::forward::{time_weights, TimeRule};
use pmlfwi::inversion::{armijo_search, bias_lambda_direction, Bounds, LbfgsMemory, LineSearchParams};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #[test]
    fn simpson_integrates_cubics(n in 3usize..60, h in 1e-3f64..0.1, c in prop::array::uniform4(-5.0f64..5.0)) {
        let w = time_weights(n, h, TimeRule::Simpson);
        let p = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        let got: f64 = w.iter().enumerate().map(|(i, wi)| wi * p(i as f64 * h)).sum();
        let t = (n - 1) as f64 * h;
        let exact = t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)));
        assert_relative_eq!(got, exact, epsilon = 1e-12, max_relative = 1e-10);
    }

    #[test]
    fn trapezoid_weights_sum_to_duration(n in 2usize..100, h in 1e-4f64..1.0) {
        let w = time_weights(n, h, TimeRule::Trapezoid);
        assert_relative_eq!(w.iter().sum::<f64>(), (n - 1) as f64 * h, max_relative = 1e-12);
    }

    #[test]
    fn lbfgs_direction_descends(g in vector(6), pairs in prop::collection::vec((vector(6), prop::array::uniform6(0.1f64..10.0)), 0..8)) {
        prop_assume!(dot(&g, &g) > 1e-6);
        let mut mem = LbfgsMemory::new(5);
        for (s, d) in pairs {
            // y = D s with D diagonal positive keeps s.y > 0
            let y: Vec<f64> = s.iter().zip(d).map(|(a, b)| a * b).collect();
            mem.push(s, y);
        }
        let dir = mem.direction(&g);
        prop_assert!(dot(&g, &dir) < 0.0);
    }

    #[test]
    fn bias_endpoints(sl in vector(5), sm in vector(5)) {
        let (nl, nm) = (dot(&sl, &sl).sqrt(), dot(&sm, &sm).sqrt());
        prop_assume!(nl > 1e-3 && nm > 1e-3);
        prop_assert_eq!(bias_lambda_direction(&sl, &sm, 0.0).unwrap(), sl.clone());
        let full = bias_lambda_direction(&sl, &sm, 1.0).unwrap();
        for (f, m) in full.iter().zip(&sm) {
            assert_relative_eq!(*f, nl * m / nm, max_relative = 1e-14);
        }
    }

    #[test]
    fn armijo_accepts_only_sufficient_decrease(d in prop::array::uniform3(0.1f64..100.0), m0 in vector(3)) {
        let j = |m: &[f64]| 0.5 * m.iter().zip(&d).map(|(x, k)| k * x * x).sum::<f64>();
        prop_assume!(j(&m0) > 1e-6);
        let g: Vec<f64> = m0.iter().zip(&d).map(|(x, k)| k * x).collect();
        let s: Vec<f64> = g.iter().map(|v| -v).collect();
        let free = Bounds { lambda: [-1e9, 1e9], mu: [-1e9, 1e9] };
        let params = LineSearchParams::default();
        let o = armijo_search(|l: &[f64], _: &[f64]| Ok((j(l), ())), j(&m0), &m0, &[], [&s, &[]], [&g, &[]], &params, &free).unwrap();
        prop_assert!(o.j_new <= j(&m0) + params.c1 * o.alpha[0] * dot(&g, &s));
        prop_assert_eq!(o.j_new, j(&o.lambda));
    }
}
