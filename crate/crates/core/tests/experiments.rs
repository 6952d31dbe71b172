use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbp_core::experiments::{
    bundled_problem, bundled_source, emit_report, experiment_config, render_report, run_experiment, ExperimentId,
    ReportFormat, ReportOptions, SweepEntry,
};
use sbp_core::problem::{emit_problem, load_problem, parse_problem, LoadError};
use sbp_core::{solve, FeasibleSet, FunctionOracle, Sense, Vector};
use serde_json::Value;

fn raw(id: ExperimentId) -> Value {
    serde_json::from_str(bundled_source(id)).unwrap()
}

#[test]
fn consistent_system_data_is_verbatim() {
    let g = &raw(ExperimentId::LeastNormSmall)["g"];
    let a: Vec<Vec<f64>> = serde_json::from_value(g["a"].clone()).unwrap();
    let b: Vec<f64> = serde_json::from_value(g["b"].clone()).unwrap();
    assert_eq!(
        a,
        vec![
            vec![1.0, 2.0, -3.0, 1.0],
            vec![3.0, -1.0, -2.0, -4.0],
            vec![2.0, 3.0, -5.0, 1.0]
        ]
    );
    assert_eq!(b, vec![-2.0, 1.0, -3.0]);
}

#[test]
fn every_bundled_file_loads() {
    let dims = [2, 4, 15, 3, 2, 8];
    for (id, dim) in ExperimentId::ALL.into_iter().zip(dims) {
        let loaded = bundled_problem(id).unwrap();
        assert_eq!(loaded.instance.dim(), dim, "{id}");
        assert!(loaded.instance.g.supports_lower_level(), "{id}");
    }
}

#[test]
fn portfolio_return_floor_is_inactive_on_the_simplex() {
    let set = bundled_problem(ExperimentId::Portfolio).unwrap().instance.set;
    let members = set.members();
    assert_eq!(members.len(), 2);
    assert!(matches!(members[0], FeasibleSet::Simplex { dim: 8, total } if total == 1.0));
    match &members[1] {
        FeasibleSet::Halfspace { normal, offset, sense } => {
            assert_eq!(*sense, Sense::Ge);
            assert_eq!(*offset, 0.05);
            assert_eq!(normal[0], 1.0630);
            assert_eq!(normal[7], 1.1605);
            // On the simplex <mu, x> is a convex combination of the entries of mu.
            assert!(normal.min() > *offset);
            assert!((normal.min() - 1.0630).abs() < 1e-12);
        }
        other => panic!("expected a halfspace, found {other:?}"),
    }
}

#[test]
fn malformed_json_names_the_offset() {
    let text = "{\n  \"name\": \"x\",\n  \"dimension\": 2,,\n}";
    match parse_problem(text) {
        Err(LoadError::Parse { offset, line, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(&text[offset..offset + 1], ",");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn emitted_problems_evaluate_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dir = tempfile::tempdir().unwrap();
    for id in ExperimentId::ALL {
        let p = bundled_problem(id).unwrap().instance;
        let path = dir.path().join("p.json");
        std::fs::write(&path, emit_problem(&p)).unwrap();
        let q = load_problem(&path).unwrap();
        assert_eq!(q.set, p.set, "{id}");
        let n = p.dim();
        for _ in 0..100 {
            let x = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            for (a, b) in [(&p.f, &q.f), (&p.g, &q.g)] {
                let (va, vb) = (a.value(&x).unwrap(), b.value(&x).unwrap());
                assert!((va - vb).abs() <= 1e-15 * va.abs().max(1.0), "{id}: {va} vs {vb}");
            }
        }
    }
}

#[test]
fn distance_anchor_example() {
    let anchors = [Vector::from_column_slice(&[2.0, 3.0])];
    let rows = run_experiment(ExperimentId::Distance, &[SweepEntry { eps: 1e-5, eta_base: 100.0 }], Some(&anchors)).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert!((&r.solution - Vector::from_column_slice(&[2.0, 2.0])).amax() <= 1e-3);
    assert!((r.distance().unwrap() - 1.0).abs() <= 1e-3);
}

#[test]
fn reports_are_deterministic() {
    let sweep = [SweepEntry { eps: 1e-5, eta_base: 10.0 }];
    let rows = run_experiment(ExperimentId::AffineDisc, &sweep, None).unwrap();
    let again = run_experiment(ExperimentId::AffineDisc, &sweep, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown] {
        let (p1, p2) = (dir.path().join("a"), dir.path().join("b"));
        emit_report(&rows, format, &p1, ReportOptions::default()).unwrap();
        emit_report(&again, format, &p2, ReportOptions::default()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
    let csv = render_report(&rows, ReportFormat::Csv, ReportOptions::default()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].contains(",-2.41421"), "{}", lines[1]);
    let md = render_report(&rows, ReportFormat::Markdown, ReportOptions::default()).unwrap();
    assert!(md.lines().all(|l| l.starts_with('|') && l.ends_with('|')));
    assert_eq!(md.lines().count(), 3);
}

/// The printed 5x15 system has least l1 norm 2.6936. Negating column 9 and
/// flipping the sign of the first entry of row 4 gives a system whose
/// least-norm solution matches the reported point and value, which points
/// at two transcription slips in the printed matrix.
#[test]
fn wide_system_with_corrected_signs() {
    let mut file = raw(ExperimentId::LeastNormWide);
    let a = file["g"]["a"].as_array_mut().unwrap();
    for row in a.iter_mut() {
        let e = row[8].as_f64().unwrap();
        row[8] = (-e).into();
    }
    let e = a[3][0].as_f64().unwrap();
    a[3][0] = e.abs().into();
    let loaded = parse_problem(&file.to_string()).unwrap();
    let config = experiment_config(&loaded, &SweepEntry { eps: 1e-5, eta_base: 10.0 }).unwrap();
    let r = solve(&loaded.instance, &config).unwrap();
    let l1: f64 = r.x_star.iter().map(|x| x.abs()).sum();
    assert!((l1 - 2.576563).abs() <= 1e-2, "l1 norm {l1}");
    assert!(r.g_star <= 1e-6);
    let reported = [
        0.3857, 0.0, 0.0, 0.0506, 0.6820, 0.0, 0.0, 0.0, 0.2233, 0.0, 0.0, 0.0, 0.0, 0.0, 1.2350,
    ];
    let dev = r.x_star.iter().zip(reported).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev <= 2e-2, "{:?}", r.x_star.as_slice());
}

/// Anchor (1/2, 1/2, 0, ...) at a looser threshold, where the reported solution moves to
/// (0.3627, 0.3627, ...). Slow, and tied to solver tolerances, so it is not
/// part of the default run: `cargo test --release -- --ignored`.
#[test]
#[ignore]
fn portfolio_half_half_anchor_at_a_looser_threshold() {
    let mut a = vec![0.0; 8];
    a[0] = 0.5;
    a[1] = 0.5;
    let anchors = [Vector::from_vec(a)];
    let rows = run_experiment(ExperimentId::Portfolio, &[SweepEntry { eps: 1e-8, eta_base: 100.0 }], Some(&anchors)).unwrap();
    let x = &rows[0].solution;
    println!("anchor (1/2, 1/2, 0, ...) at eps 1e-8: {:.4?}", x.as_slice());
    assert!((x[0] - 0.3627).abs() <= 1e-2 && (x[1] - 0.3627).abs() <= 1e-2);
}

#[test]
fn oracle_kinds_survive_emission() {
    let p = bundled_problem(ExperimentId::Distance).unwrap().instance;
    let q = parse_problem(&emit_problem(&p)).unwrap().instance;
    assert!(matches!(q.g, FunctionOracle::MaxOfAffine { .. }));
    assert!(matches!(q.f, FunctionOracle::SquaredDistance { .. }));
}
