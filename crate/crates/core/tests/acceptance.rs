//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Residuals, norms and quadratic forms are recomputed here from the raw
//! problem files rather than through the library's oracles. The process
//! exits with status 0 so that a workspace test run reports every target;
//! set `SBP_ACCEPTANCE_STRICT=1` to turn failed criteria into a failing
//! exit status.

// Reference values are kept to the digits they were reported with.
#![allow(clippy::approx_constant)]

use std::process::ExitCode;

use sbp_core::checks::{run_all, CheckOptions};
use sbp_core::experiments::{
    bundled_source, default_sweep, run_baseline, run_experiment, ExperimentId, ReportRow, SweepEntry,
};
use sbp_core::Vector;
use serde_json::Value;

struct Verdict {
    id: u32,
    title: &'static str,
    failures: Vec<String>,
}

impl Verdict {
    fn new(id: u32, title: &'static str) -> Self {
        Verdict {
            id,
            title,
            failures: Vec::new(),
        }
    }

    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn print(&self) {
        if self.failures.is_empty() {
            println!("PASS criterion {}: {}", self.id, self.title);
        } else {
            println!("FAIL criterion {}: {}", self.id, self.title);
            for f in &self.failures {
                println!("    {f}");
            }
        }
    }
}

fn raw(id: ExperimentId) -> Value {
    serde_json::from_str(bundled_source(id)).expect("bundled file is JSON")
}

fn rows_of(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

/// `|A x - b|^2` from the file's lower-level data.
fn residual(id: ExperimentId, x: &Vector) -> f64 {
    let g = &raw(id)["g"];
    let a = rows_of(&g["a"]);
    let b = floats(&g["b"]);
    a.iter()
        .zip(&b)
        .map(|(row, bi)| {
            let ax: f64 = row.iter().zip(x.iter()).map(|(aij, xj)| aij * xj).sum();
            (ax - bi).powi(2)
        })
        .sum()
}

/// `x^T A x` with the portfolio covariance.
fn portfolio_risk(x: &Vector) -> f64 {
    let a = rows_of(&raw(ExperimentId::Portfolio)["g"]["a"]);
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += x[i] * a[i][j] * x[j];
        }
    }
    s
}

fn l1(x: &Vector) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn max_dev(x: &Vector, target: &[f64]) -> f64 {
    x.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn label(row: &ReportRow) -> String {
    let mut s = format!("eps={:e}", row.eps);
    if let Some(b) = row.eta_base {
        s.push_str(&format!(" eta_base={b}"));
    }
    if let Some(a) = &row.anchor {
        s.push_str(&format!(" anchor={:?}", a.as_slice()));
    }
    s
}

fn sweep(eps: &[f64], bases: &[f64]) -> Vec<SweepEntry> {
    eps.iter()
        .flat_map(|&eps| bases.iter().map(move |&eta_base| SweepEntry { eps, eta_base }))
        .collect()
}

fn run(v: &mut Verdict, id: ExperimentId, entries: &[SweepEntry], anchors: Option<&[Vector]>) -> Vec<ReportRow> {
    match run_experiment(id, entries, anchors) {
        Ok(rows) => rows,
        Err(e) => {
            v.failures.push(format!("{id} did not run: {e}"));
            Vec::new()
        }
    }
}

fn criterion_1() -> (Verdict, Vec<ReportRow>) {
    let mut v = Verdict::new(1, "5.1 affine objective over the disc");
    let rows = run(&mut v, ExperimentId::AffineDisc, &sweep(&[1e-5], &[10.0, 100.0, 1000.0]), None);
    let target = [-0.70711, -0.70711];
    for r in &rows {
        let l = label(r);
        let dx = max_dev(&r.solution, &target);
        v.expect(dx <= 1e-3, || format!("{l}: |x* - target|_inf = {dx:e} > 1e-3"));
        let df = (r.upper_value - -2.414214).abs();
        v.expect(df <= 1e-4, || format!("{l}: f* = {} off by {df:e} > 1e-4", r.upper_value));
        v.expect(r.lower_value.abs() <= 1e-6, || format!("{l}: alpha_final = {:e}", r.lower_value));
        v.expect(r.outer_iterations <= 100, || format!("{l}: {} outer iterations", r.outer_iterations));
        let secs = r.wall_time.as_secs_f64();
        v.expect(secs <= 10.0, || format!("{l}: {secs:.2} s"));
        v.expect(r.termination == "criterion_met", || format!("{l}: {}", r.termination));
    }
    (v, rows)
}

fn least_norm_check(
    v: &mut Verdict,
    id: ExperimentId,
    eps: &[f64],
    target: &[f64],
    point_tol: f64,
    norm: (f64, f64),
    residual_ok: impl Fn(f64) -> Result<(), String>,
) {
    let rows = run(v, id, &sweep(eps, &[10.0, 100.0, 1000.0]), None);
    for r in &rows {
        let l = label(r);
        let dx = max_dev(&r.solution, target);
        v.expect(dx <= point_tol, || {
            format!("{l}: x* = {:.4?} is {dx:.3e} from the reported point", r.solution.as_slice())
        });
        let n = l1(&r.solution);
        v.expect((n - norm.0).abs() <= norm.1, || format!("{l}: |x*|_1 = {n:.6}, expected {} +- {}", norm.0, norm.1));
        if let Err(msg) = residual_ok(residual(id, &r.solution)) {
            v.failures.push(format!("{l}: {msg}"));
        }
    }
}

fn criterion_2() -> Verdict {
    let mut v = Verdict::new(2, "5.2a least l1 norm, consistent 3x4 system");
    least_norm_check(
        &mut v,
        ExperimentId::LeastNormSmall,
        &[1e-5, 1e-7],
        &[0.0, -1.0, 0.0, 0.0],
        1e-3,
        (1.0, 1e-3),
        |r| if r <= 1e-6 { Ok(()) } else { Err(format!("|Ax-b|^2 = {r:e}")) },
    );
    v
}

fn criterion_3() -> Verdict {
    let mut v = Verdict::new(3, "5.2b least l1 norm, 5x15 system");
    let target = [
        0.3857, 0.0, 0.0, 0.0506, 0.6820, 0.0, 0.0, 0.0, 0.2233, 0.0, 0.0, 0.0, 0.0, 0.0, 1.2350,
    ];
    least_norm_check(
        &mut v,
        ExperimentId::LeastNormWide,
        &[1e-5],
        &target,
        2e-2,
        (2.576563, 1e-2),
        |r| if r <= 1e-6 { Ok(()) } else { Err(format!("|Ax-b|^2 = {r:e}")) },
    );
    v
}

fn criterion_4() -> Verdict {
    let mut v = Verdict::new(4, "5.2c least l1 norm among least-squares solutions");
    least_norm_check(
        &mut v,
        ExperimentId::LeastNormInconsistent,
        &[1e-5],
        &[0.2334, 0.6718, -0.0153],
        1e-2,
        (0.92054, 1e-2),
        |r| {
            if (r - 42.57734).abs() <= 1e-2 {
                Ok(())
            } else {
                Err(format!("|Ax-b|^2 = {r:.6}, expected 42.57734 +- 1e-2"))
            }
        },
    );
    v
}

fn criterion_5() -> Verdict {
    let mut v = Verdict::new(5, "5.3 distance to the lower-level solution set");
    let id = ExperimentId::Distance;
    let anchors = [
        Vector::from_column_slice(&[0.0, -3.0]),
        Vector::from_column_slice(&[2.0, 3.0]),
        Vector::from_column_slice(&[0.0, 3.0]),
    ];
    let rows = run(&mut v, id, &default_sweep(id), Some(&anchors));
    for r in &rows {
        let l = label(r);
        let a = r.anchor.as_ref().unwrap();
        let d = (&r.solution - a).norm();
        if a[1] < 0.0 {
            v.expect(d <= 1e-6, || format!("{l}: distance {d:e}"));
        } else {
            v.expect((d - 1.0).abs() <= 1e-3, || format!("{l}: distance {d:.6}"));
            let dx = max_dev(&r.solution, &[a[0], 2.0]);
            v.expect(dx <= 1e-3, || format!("{l}: solution {:.6?}", r.solution.as_slice()));
        }
    }
    v
}

fn criterion_6() -> Verdict {
    let mut v = Verdict::new(6, "5.4 Markowitz portfolio, anchors e1 and uniform");
    let mut e1 = vec![0.0; 8];
    e1[0] = 1.0;
    let uniform = vec![0.125; 8];
    let anchors = [Vector::from_vec(e1), Vector::from_vec(uniform.clone())];
    let rows = run(&mut v, ExperimentId::Portfolio, &[SweepEntry { eps: 1e-10, eta_base: 100.0 }], Some(&anchors));
    for r in &rows {
        let a = r.anchor.as_ref().unwrap();
        let x = &r.solution;
        let upper = 0.5 * (x - a).norm_squared();
        let lower = portfolio_risk(x);
        if a[0] == 1.0 {
            let target = [0.6784, 0.0470, 0.0469, 0.0461, 0.0459, 0.0464, 0.0462, 0.0431];
            let dx = max_dev(x, &target);
            v.expect(dx <= 5e-3, || format!("anchor e1: x* = {:.4?}, {dx:.3e} from the reported point", x.as_slice()));
            v.expect((lower - 1.759577e-3).abs() <= 1e-4, || {
                format!("anchor e1: lower value {lower:.6e}, expected 1.759577e-3 +- 1e-4")
            });
        } else {
            let dx = max_dev(x, &uniform);
            v.expect(dx <= 1e-4, || format!("uniform anchor: x* = {:.4?}, {dx:.3e} from uniform", x.as_slice()));
            v.expect(upper <= 1e-8, || format!("uniform anchor: upper value {upper:e}"));
            v.expect((lower - 9.463094e-3).abs() <= 1e-4, || {
                format!("uniform anchor: lower value {lower:.6e}, expected 9.463094e-3 +- 1e-4")
            });
        }
    }
    v
}

fn criterion_7() -> Verdict {
    let mut v = Verdict::new(7, "property suites");
    for outcome in run_all(&CheckOptions::default()) {
        if !outcome.passed() {
            v.failures.push(outcome.summary());
        }
    }
    v
}

fn criterion_8(sbp_rows: &[ReportRow]) -> Verdict {
    let mut v = Verdict::new(8, "5.1 baseline needs more iterations than SBP-LFS");
    match run_baseline(ExperimentId::AffineDisc, &[1e-5]) {
        Ok(base) => {
            let b = base[0].outer_iterations;
            v.expect(!sbp_rows.is_empty(), || "no SBP-LFS rows".into());
            for r in sbp_rows {
                v.expect(r.outer_iterations < b, || {
                    format!("{}: {} SBP-LFS iterations vs {b} baseline", label(r), r.outer_iterations)
                });
            }
        }
        Err(e) => v.failures.push(format!("baseline did not run: {e}")),
    }
    v
}

fn main() -> ExitCode {
    let (c1, rows51) = criterion_1();
    let verdicts = vec![
        c1,
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(&rows51),
    ];
    for v in &verdicts {
        v.print();
    }
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.failures.is_empty())
        .map(|v| v.id.to_string())
        .collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }
    );
    let strict = std::env::var("SBP_ACCEPTANCE_STRICT").is_ok_and(|s| s == "1");
    if strict && !failed.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
