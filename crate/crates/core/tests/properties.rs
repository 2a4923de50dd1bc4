use nalgebra::DMatrix;
use proptest::prelude::*;

use phasemeas::apparatus::{symplectic_form, williamson_frequencies, TrapQuadraticForm};
use phasemeas::expr::parse;
use phasemeas::master::{ChannelMode, MeasurementChannel, Propagator, Substeps};
use phasemeas::phase_space::poisson_bracket;
use phasemeas::single_shot::{bayes_update, disturbance_update};
use phasemeas::{ApparatusConfig, DensityField, Grid2D, ObservableSpec, ScalarField};

/// Test-side expression tree with its own renderer and interpreter.
#[derive(Debug, Clone)]
enum Gen {
    Num(f64),
    Var(usize),
    Neg(Box<Gen>),
    Bin(char, Box<Gen>, Box<Gen>),
    Call(&'static str, Box<Gen>),
}

impl Gen {
    fn render(&self) -> String {
        match self {
            Gen::Num(v) => format!("{v}"),
            Gen::Var(i) => ["q", "p", "t"][*i].to_string(),
            Gen::Neg(a) => format!("-({})", a.render()),
            Gen::Bin(op, a, b) => format!("({}) {op} ({})", a.render(), b.render()),
            Gen::Call(f, a) => format!("{f}( {} )", a.render()),
        }
    }

    /// `None` where any intermediate is undefined or non-finite.
    fn eval(&self, x: [f64; 3]) -> Option<f64> {
        let v = match self {
            Gen::Num(v) => *v,
            Gen::Var(i) => x[*i],
            Gen::Neg(a) => -a.eval(x)?,
            Gen::Bin(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' if b == 0.0 => return None,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
            Gen::Call(f, a) => {
                let a = a.eval(x)?;
                match *f {
                    "sin" => a.sin(),
                    "cos" => a.cos(),
                    "exp" => a.exp(),
                    "log" if a <= 0.0 => return None,
                    "log" => a.ln(),
                    "sqrt" if a < 0.0 => return None,
                    _ => a.sqrt(),
                }
            }
        };
        v.is_finite().then_some(v)
    }
}

fn gen_expr() -> impl Strategy<Value = Gen> {
    let leaf = prop_oneof![
        (0u32..400).prop_map(|n| Gen::Num(n as f64 / 8.0)),
        (0usize..3).prop_map(Gen::Var),
    ];
    leaf.prop_recursive(5, 32, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Gen::Neg(Box::new(a))),
            (prop::sample::select(vec!['+', '-', '*', '/']), inner.clone(), inner.clone())
                .prop_map(|(op, a, b)| Gen::Bin(op, Box::new(a), Box::new(b))),
            // Small integer exponents keep values in range.
            (inner.clone(), 0u32..4).prop_map(|(a, n)| Gen::Bin('^', Box::new(a), Box::new(Gen::Num(n as f64)))),
            (prop::sample::select(vec!["sin", "cos", "exp", "log", "sqrt"]), inner)
                .prop_map(|(f, a)| Gen::Call(f, Box::new(a))),
        ]
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn poly_field(g: Grid2D, c: &[f64]) -> ScalarField {
    ScalarField::from_fn(g, |q, p| {
        c[0] + c[1] * q + c[2] * p + c[3] * q * q + c[4] * q * p + c[5] * p * p + c[6] * q * q * p + c[7] * (q + p).sin()
    })
    .unwrap()
}

fn random_symplectic(m: usize, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    // [[L, 0], [0, L^-T]] [[I, B], [0, I]] with L unit lower triangular and
    // B symmetric.
    let mut l = DMatrix::identity(m, m);
    let mut s = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in 0..=i {
            if i != j {
                l[(i, j)] = a[k];
            }
            s[(i, j)] = b[k];
            s[(j, i)] = b[k];
            k += 1;
        }
    }
    let l_inv_t = l.clone().try_inverse().unwrap().transpose();
    let mut scale = DMatrix::zeros(2 * m, 2 * m);
    scale.view_mut((0, 0), (m, m)).copy_from(&l);
    scale.view_mut((m, m), (m, m)).copy_from(&l_inv_t);
    let mut shear = DMatrix::identity(2 * m, 2 * m);
    shear.view_mut((0, m), (m, m)).copy_from(&s);
    scale * shear
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parsed_expressions_match_the_reference_interpreter(e in gen_expr(), pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..5.0), 100)) {
        let src = e.render();
        let tree = parse(&src).map_err(|err| TestCaseError::fail(format!("{src}: {err}")))?;
        let program = tree.compile();
        for (q, p, t) in pts {
            let want = e.eval([q, p, t]);
            let got = tree.eval(q, p, t);
            let compiled = program.eval(q, p, t);
            match want {
                Some(w) => {
                    let v = got.map_err(|f| TestCaseError::fail(format!("{src} at {q},{p},{t}: {f}")))?;
                    prop_assert!(close(v, w), "{} at ({}, {}, {}): {} vs {}", src, q, p, t, v, w);
                    prop_assert_eq!(compiled, got);
                }
                None => {
                    prop_assert!(got.is_err(), "{} at ({}, {}, {}) gave {:?}", src, q, p, t, got);
                    prop_assert!(compiled.is_err());
                }
            }
        }
    }

    #[test]
    fn printing_and_parsing_is_stable(e in gen_expr()) {
        let tree = parse(&e.render()).unwrap();
        let printed = tree.to_string();
        let again = parse(&printed).unwrap();
        prop_assert_eq!(again.to_string(), printed);
        for (q, p, t) in [(0.3, -1.2, 0.5), (2.0, 0.7, 3.0)] {
            prop_assert_eq!(again.eval(q, p, t), tree.eval(q, p, t));
        }
    }

    #[test]
    fn bracket_is_antisymmetric(a in prop::collection::vec(-2.0f64..2.0, 8), b in prop::collection::vec(-2.0f64..2.0, 8)) {
        let g = Grid2D::square(2.0, 24).unwrap();
        let (f, h) = (poly_field(g, &a), poly_field(g, &b));
        let fh = poisson_bracket(&f, &h).unwrap();
        let hf = poisson_bracket(&h, &f).unwrap();
        for (x, y) in fh.values().iter().zip(hf.values()) {
            prop_assert_eq!(*x, -*y);
        }
        let ff = poisson_bracket(&f, &f).unwrap();
        prop_assert!(ff.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn williamson_frequencies_are_symplectic_invariants(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        a in prop::collection::vec(-0.8f64..0.8, 3),
        b in prop::collection::vec(-0.8f64..0.8, 3),
    ) {
        let r = DMatrix::from_vec(4, 4, entries);
        let m = &r * r.transpose() + DMatrix::identity(4, 4);
        let s = random_symplectic(2, &a, &b);
        let j = symplectic_form(2);
        prop_assert!((s.transpose() * &j * &s - &j).amax() < 1e-12);
        let before = williamson_frequencies(&TrapQuadraticForm::new(m.clone()).unwrap());
        let moved = s.transpose() * &m * &s;
        let moved = 0.5 * (&moved + moved.transpose());
        let after = williamson_frequencies(&TrapQuadraticForm::new(moved).unwrap());
        for (x, y) in before.iter().zip(&after) {
            prop_assert!((x - y).abs() <= 1e-8 * x, "{:?} {:?}", before, after);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bayes_update_is_a_normalised_density(a_star in -1.5f64..1.5, k in 0.05f64..5.0, mq in -1.0f64..1.0) {
        let g = Grid2D::square(5.0, 40).unwrap();
        let rho = DensityField::gaussian(g, (mq, 0.2), (0.7, 0.9)).unwrap();
        let a = ObservableSpec::parse("q", &g, 0.0).unwrap();
        let post = bayes_update(&rho, &a, a_star, &ApparatusConfig::new(1.0, 1.0, k).unwrap()).unwrap();
        prop_assert!((post.mass() - 1.0).abs() < 1e-12);
        prop_assert!(post.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn disturbance_keeps_the_measured_marginal(k in 0.01f64..1.0, beta in 0.5f64..4.0) {
        // The flow generated by q moves p only, so the q marginal is kept
        // cell by cell up to interpolation error.
        let g = Grid2D::square(6.0, 48).unwrap();
        let rho = DensityField::gaussian(g, (0.4, -0.3), (0.8, 0.8)).unwrap();
        let a = ObservableSpec::parse("q", &g, 0.0).unwrap();
        let out = disturbance_update(&rho, &a, &ApparatusConfig::new(beta, 1.0, k).unwrap()).unwrap();
        let rows = |r: &DensityField| -> Vec<f64> { r.values().chunks(g.np).map(|c| c.iter().sum()).collect() };
        for (x, y) in rows(&rho).iter().zip(rows(&out)) {
            prop_assert!((x - y).abs() < 1e-6 * rows(&rho).iter().cloned().fold(0.0, f64::max), "{} {}", x, y);
        }
    }

    #[test]
    fn likelihood_steps_stay_positive_and_normalised(dws in prop::collection::vec(-0.3f64..0.3, 8)) {
        let g = Grid2D::square(6.0, 48).unwrap();
        let h = ObservableSpec::parse("0.5*(q^2 + p^2)", &g, 0.0).unwrap();
        let a = ObservableSpec::parse("q", &g, 0.0).unwrap();
        let ch = MeasurementChannel::new(a, ApparatusConfig::new(1.0, 1.0, 1.0).unwrap(), ChannelMode::Read).unwrap();
        let mut prop = Propagator::new(h, vec![ch], 0.01, Substeps::Auto).unwrap();
        let mut rho = DensityField::gaussian(g, (1.0, 0.0), (0.7, 0.7)).unwrap();
        for (n, dw) in dws.iter().enumerate() {
            rho = prop.step_with_increments(&rho, n as f64 * 0.01, &[*dw]).unwrap().density;
            prop_assert!((rho.mass() - 1.0).abs() < 1e-10);
            prop_assert!(rho.values().iter().all(|v| *v >= 0.0));
        }
    }
}
