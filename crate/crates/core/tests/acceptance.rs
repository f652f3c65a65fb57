//! Acceptance suite: one test per release criterion, each printing a
//! single pass/fail line (the harness line) for the property it checks.
//! Every criterion runs at its stated tolerance against the bundled
//! problem set; nothing here is mocked or downscaled.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DVector;
use num_bigint::BigInt;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use morse_corners::complex::{
    build_complex, expected_homology, homology, morse_inequalities, verify_chain, ComplexOptions,
    MorseComplex,
};
use morse_corners::critical::{find_critical_points, CriticalSet};
use morse_corners::field::modified_gradient;
use morse_corners::flow::Integrator;
use morse_corners::problem::{load_problem, Overrides, Problem};
use morse_corners::snf::smith_normal_form;

const PROBLEMS: [&str; 8] = [
    "interval",
    "square",
    "cube",
    "simplex",
    "circle",
    "cylinder",
    "corner_cylinder",
    "torus",
];

struct Case {
    name: &'static str,
    problem: Problem,
    critical: CriticalSet,
    complex: MorseComplex,
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(format!("{name}.json"))
        .to_string_lossy()
        .into_owned()
}

fn build_case(name: &'static str) -> Case {
    let problem = load_problem(&data(name), &Overrides::default()).expect(name);
    let critical =
        find_critical_points(&problem.domain, &problem.field, &problem.tolerances).expect(name);
    assert!(!critical.fatal(), "{name}: unexpected validation failure");
    let complex = build_complex(
        &problem.domain,
        &problem.field,
        &problem.tolerances,
        &critical,
        &problem.options,
    )
    .expect(name);
    assert!(!complex.fatal(), "{name}: unexpected numeric failure");
    assert_eq!(complex.unresolved, 0, "{name}: unresolved seeds");
    Case {
        name,
        problem,
        critical,
        complex,
    }
}

fn cases() -> &'static [Case] {
    static CASES: OnceLock<Vec<Case>> = OnceLock::new();
    CASES.get_or_init(|| PROBLEMS.iter().map(|n| build_case(n)).collect())
}

/// Criterion 1: the chain condition holds in exact integer arithmetic on
/// every bundled problem, each full pipeline finishing well under 60 s.
#[test]
fn criterion_1_chain_condition() {
    for name in PROBLEMS {
        let started = Instant::now();
        let case = build_case(name);
        let elapsed = started.elapsed();
        assert!(
            verify_chain(&case.complex.boundaries),
            "{name}: boundary of boundary is nonzero"
        );
        assert!(
            elapsed.as_secs() < 60,
            "{name}: pipeline took {elapsed:?}, budget is 60 s"
        );
        println!("criterion 1 [{name}]: chain condition holds in {elapsed:?}");
    }
}

/// Criterion 2: computed Betti numbers and torsion match the domain
/// oracle exactly on all eight problems, with the per-problem structural
/// facts that pin the complex down.
#[test]
fn criterion_2_main_theorem_suite() {
    let expected: &[(&str, &[usize])] = &[
        ("interval", &[1, 0]),
        ("square", &[1, 0, 0]),
        ("cube", &[1, 0, 0, 0]),
        ("simplex", &[1, 0, 0]),
        ("circle", &[1, 1]),
        ("cylinder", &[1, 1, 0]),
        ("corner_cylinder", &[1, 1, 0, 0]),
        ("torus", &[1, 2, 1]),
    ];
    for (name, betti) in expected {
        let case = cases().iter().find(|c| c.name == *name).unwrap();
        let n = case.problem.domain.dim();
        let h = homology(&case.critical, &case.complex.boundaries, n);
        assert_eq!(h.betti, *betti, "{name}: Betti numbers differ");
        assert!(
            h.torsion.iter().all(|t| t.is_empty()),
            "{name}: unexpected torsion"
        );
        assert_eq!(
            h.betti,
            expected_homology(&case.problem.domain),
            "{name}: oracle disagrees"
        );
        assert!(
            morse_inequalities(&case.critical.counts(n), &h.betti),
            "{name}: Morse inequalities fail"
        );
        println!("criterion 2 [{name}]: Betti {betti:?}, no torsion");
    }

    let by_name = |name: &str| cases().iter().find(|c| c.name == name).unwrap();

    // Interval: the boundary matrix reduces to diag(1).
    let interval = by_name("interval");
    let d1 = &interval.complex.boundaries[0];
    let rows: Vec<Vec<i64>> = (0..d1.nrows())
        .map(|i| (0..d1.ncols()).map(|j| d1[(i, j)]).collect())
        .collect();
    let snf = smith_normal_form(&rows);
    assert_eq!(snf.invariant_factors, vec![BigInt::from(1)]);

    // Square: a single index-0 generator.
    let square = by_name("square");
    assert_eq!(square.critical.counts(2), vec![1, 0, 0]);

    // Circle: degree(max, min) = 0 from two cancelling trajectories.
    let circle = by_name("circle");
    assert_eq!(circle.complex.trajectories.len(), 2);
    assert_eq!(circle.complex.degree(1, 0), 0);
    assert!(circle.complex.trajectories.iter().all(|t| t.sign.abs() == 1));

    // Cylinder: both connecting trajectories confined to the circle t=1.
    let cylinder = by_name("cylinder");
    assert_eq!(cylinder.complex.trajectories.len(), 2);
    for t in &cylinder.complex.trajectories {
        assert!((t.seed[1] - 1.0).abs() < 1e-9);
        assert!((t.crossing[1] - 1.0).abs() < 1e-9);
    }

    // Corner cylinder: essential points live on the depth-2 corner circle.
    let corner = by_name("corner_cylinder");
    for &i in &corner.critical.generators {
        assert_eq!(corner.critical.points[i].stratum.depth(), 2);
    }

    // Torus: every boundary map is zero.
    let torus = by_name("torus");
    assert!(torus
        .complex
        .boundaries
        .iter()
        .all(|m| m.iter().all(|&x| x == 0)));
}

/// Criterion 3: f is non-increasing along the flow, checked on 1000
/// random seeds spread across the bundled problems, to 1e-6 absolute.
#[test]
fn criterion_3_flow_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let per_problem = 125;
    let mut seeds = 0usize;
    let mut violations = 0usize;
    for case in cases() {
        let mut settings = case.problem.flow.clone();
        settings.record_trace = true;
        let integrator = Integrator {
            domain: &case.problem.domain,
            field: &case.problem.field,
            tol: case.problem.tolerances,
            settings,
        };
        for _ in 0..per_problem {
            let x0 = case.problem.domain.sample_point(&mut rng);
            let path = integrator.flow(&x0).expect(case.name);
            seeds += 1;
            let mut prev = f64::INFINITY;
            for point in &path.trace {
                let v = case.problem.field.value(&point.x).unwrap();
                if v > prev + 1e-6 {
                    violations += 1;
                }
                prev = v;
            }
        }
    }
    assert_eq!(seeds, 1000);
    assert_eq!(violations, 0, "f increased along some trajectory");
    println!("criterion 3: 0 monotonicity violations over {seeds} seeds");
}

/// Criterion 4: the descent direction satisfies <df, G> = -|G|^2 to
/// 1e-10 relative at 1000 random points per problem.
#[test]
fn criterion_4_projection_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for case in cases() {
        let g = case.problem.field.metric();
        for _ in 0..1000 {
            let x = case.problem.domain.sample_point(&mut rng);
            let Ok(stratum) = case
                .problem
                .domain
                .locate(&x, case.problem.tolerances.active)
            else {
                continue;
            };
            let descent = modified_gradient(
                &case.problem.domain,
                &case.problem.field,
                &x,
                &stratum,
                &case.problem.tolerances,
            )
            .unwrap();
            let df = case.problem.field.differential(&x).unwrap();
            let lhs = df.dot(&descent.vector);
            let rhs = -g.inner(&descent.vector, &descent.vector);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()),
                "{}: <df,G> = {lhs} but -|G|^2 = {rhs} at {x:?}",
                case.name
            );
        }
        println!("criterion 4 [{}]: projection identity holds", case.name);
    }
}

/// Criterion 5: the flow Jacobian agrees with a half-step recomputation
/// to 1e-4 relative on 10 trajectories that each cross a stratum event.
#[test]
fn criterion_5_jacobian_consistency() {
    let case = cases().iter().find(|c| c.name == "cylinder").unwrap();
    let integrator = Integrator {
        domain: &case.problem.domain,
        field: &case.problem.field,
        tol: case.problem.tolerances,
        settings: case.problem.flow.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let dirs = [
        DVector::from_vec(vec![1.0, 0.0]),
        DVector::from_vec(vec![0.0, 1.0]),
    ];
    let mut checked = 0;
    while checked < 10 {
        let x0 = DVector::from_vec(vec![
            rng.gen_range(0.3..6.0),
            rng.gen_range(0.3..0.7),
        ]);
        let path = integrator.flow(&x0).unwrap();
        let Some(first_event) = path.events.first() else {
            continue;
        };
        let t_end = first_event.t + 0.5;
        let full = integrator.flow_jacobian(&x0, t_end, &dirs, 1e-6).unwrap();
        let half = integrator.flow_jacobian(&x0, t_end, &dirs, 5e-7).unwrap();
        let scale = full.norm().max(1.0);
        let diff = (&full - &half).norm();
        assert!(
            diff <= 1e-4 * scale,
            "Jacobian differs by {diff:.3e} (scale {scale:.3e}) at {x0:?}"
        );
        checked += 1;
    }
    println!("criterion 5: {checked} event-crossing Jacobians consistent");
}

/// Criterion 6: flipping descending-frame orientations in every
/// combination never changes Betti numbers or torsion.
#[test]
fn criterion_6_orientation_invariance() {
    for name in ["interval", "circle", "cylinder"] {
        let case = cases().iter().find(|c| c.name == name).unwrap();
        let n = case.problem.domain.dim();
        let base = homology(&case.critical, &case.complex.boundaries, n);
        let m = case.critical.generators.len();
        for mask in 0u32..(1 << m) {
            let flips: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
            let flipped = case.complex.boundaries_with_flips(&case.critical, &flips);
            assert!(
                verify_chain(&flipped),
                "{name}: chain broken under flips {flips:?}"
            );
            let h = homology(&case.critical, &flipped, n);
            assert_eq!(h, base, "{name}: homology moved under flips {flips:?}");
        }
        println!("criterion 6 [{name}]: all {} flip patterns invariant", 1 << m);
    }
}

/// Criterion 7: doubling the sphere samples and halving epsilon changes
/// no degree entry on any bundled problem.
#[test]
fn criterion_7_refinement_stability() {
    for case in cases() {
        let refined_options = ComplexOptions {
            samples: 128,
            epsilon: Some(case.complex.epsilon / 2.0),
            ..case.problem.options.clone()
        };
        let refined = build_complex(
            &case.problem.domain,
            &case.problem.field,
            &case.problem.tolerances,
            &case.critical,
            &refined_options,
        )
        .unwrap();
        assert_eq!(
            case.complex.boundaries, refined.boundaries,
            "{}: degrees moved under refinement",
            case.name
        );
        println!("criterion 7 [{}]: degrees stable at 128 samples", case.name);
    }
}

/// Criterion 8: the negative controls are rejected by validation (exit
/// code 2), not silently computed.
#[test]
fn criterion_8_negative_controls() {
    for name in ["square_degenerate", "torus_degenerate"] {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_morse-corners"))
            .args(["validate", "--config", &data(name)])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "{name}: wrong exit code");
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let entries = report["morse_validation"].as_array().unwrap();
        assert!(
            entries.iter().any(|e| e["fatal"] == serde_json::json!(true)),
            "{name}: no fatal validation entry"
        );
        println!("criterion 8 [{name}]: rejected with exit 2");
    }
}

/// Criterion 9: automatic derivatives match central differences to 1e-6
/// relative on 1000 random (expression, point) pairs.
#[test]
fn criterion_9_derivative_correctness() {
    let pool: &[(&str, usize)] = &[
        ("-(x1-0.4)^2", 1),
        ("cos(x1)", 1),
        ("x1+x2", 2),
        ("cos(x1)-x2", 2),
        ("cos(x1)+cos(x2)", 2),
        ("x1+x2+x3", 3),
        ("cos(x1)-x2-x3", 3),
        ("sin(x1)*cos(x2)+x1^3", 2),
        ("exp(-(x1-0.5)^2)", 1),
        ("sqrt(x1+2)*x2", 2),
        ("log(x1+3)/(1+x2^2)", 2),
        ("2.5*x1^4 - x2*x1 + 0.1*sin(3*x1)", 2),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let mut pairs = 0usize;
    while pairs < 1000 {
        let (src, n) = pool[pairs % pool.len()];
        let expr = morse_corners::expr::parse(src, n).unwrap();
        let x = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let jet = expr.eval_jet2(&x).unwrap();
        let value_at = |y: &DVector<f64>| expr.eval_jet1(y).unwrap().value;

        let h = 1e-5;
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (value_at(&xp) - value_at(&xm)) / (2.0 * h);
            assert!(
                (fd - jet.gradient[i]).abs() <= 1e-6 * (1.0 + jet.gradient[i].abs()),
                "{src}: d/dx{} mismatch at {x:?}: fd {fd} vs ad {}",
                i + 1,
                jet.gradient[i]
            );
        }

        let h2 = 1e-4;
        for i in 0..n {
            for j in 0..n {
                let fd = if i == j {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h2;
                    xm[i] -= h2;
                    (value_at(&xp) - 2.0 * value_at(&x) + value_at(&xm)) / (h2 * h2)
                } else {
                    let mut xpp = x.clone();
                    let mut xpm = x.clone();
                    let mut xmp = x.clone();
                    let mut xmm = x.clone();
                    xpp[i] += h2;
                    xpp[j] += h2;
                    xpm[i] += h2;
                    xpm[j] -= h2;
                    xmp[i] -= h2;
                    xmp[j] += h2;
                    xmm[i] -= h2;
                    xmm[j] -= h2;
                    (value_at(&xpp) - value_at(&xpm) - value_at(&xmp) + value_at(&xmm))
                        / (4.0 * h2 * h2)
                };
                let ad = jet.hessian[(i, j)];
                assert!(
                    (fd - ad).abs() <= 1e-6 * (1.0 + ad.abs()),
                    "{src}: d2/dx{}dx{} mismatch at {x:?}: fd {fd} vs ad {ad}",
                    i + 1,
                    j + 1
                );
            }
        }
        pairs += 1;
    }
    println!("criterion 9: {pairs} derivative pairs verified");
}
