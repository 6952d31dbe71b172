//! Randomized property suites behind `sbp check`.
//!
//! Every suite draws from a seeded ChaCha stream, so a report is
//! reproducible from its seed. Suites never panic on a violated property;
//! they count failures and keep the worst observed value.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::experiments::{bundled_problem, default_anchors, default_sweep, experiment_config, instance_for, ExperimentId};
use crate::geometry::{DykstraOptions, FeasibleSet, Sense, Vector, TOL_PROJ};
use crate::inner::{solve_inner, InnerMethod, InnerProblem, DEFAULT_BUDGET, DEFAULT_FEAS_TOL};
use crate::lower_step::{lower_level_step_with, LowerStepParams};
use crate::oracles::FunctionOracle;
use crate::solver::{eta, solve};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest value of the checked quantity (compared against `tolerance`).
    pub worst: f64,
    pub tolerance: f64,
    pub note: Option<String>,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            trials: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
            note: None,
        }
    }

    fn record(&mut self, value: f64) {
        self.trials += 1;
        if value.is_nan() || value > self.tolerance {
            self.failures += 1;
        }
        if value.is_nan() || value > self.worst {
            self.worst = value;
        }
    }

    fn fail(&mut self, why: String) {
        self.trials += 1;
        self.failures += 1;
        self.note.get_or_insert(why);
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }

    pub fn summary(&self) -> String {
        let mut line = format!(
            "{} {}: {} trials, {} failures, worst {:.3e} (tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.failures,
            self.worst,
            self.tolerance
        );
        if let Some(note) = &self.note {
            line.push_str(&format!(" [{note}]"));
        }
        line
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Also run the bundled experiments and check their traces.
    pub traces: bool,
    /// Outer-iteration cap for trace runs of the portfolio problem, whose
    /// full runs take minutes.
    pub portfolio_max_outer: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 20_240_601,
            traces: true,
            portfolio_max_outer: 60,
        }
    }
}

pub fn run_all(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.extend(projection_properties(opts.seed, 1000));
    out.push(stationarity_sign(opts.seed.wrapping_add(1), 1000));
    out.extend(armijo_properties(opts.seed.wrapping_add(2), 500));
    out.push(synthetic_alpha_sequences(opts.seed.wrapping_add(3), 100));
    out.push(gradient_consistency(opts.seed.wrapping_add(4), 100));
    if opts.traces {
        out.push(alpha_recursion(opts.portfolio_max_outer));
    }
    out.push(inner_grid_equivalence());
    out
}

// ---------------------------------------------------------------------------
// Random instances

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vector(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vector {
    Vector::from_fn(n, |_, _| r.gen_range(-spread..spread))
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
}

/// Named generators for one random set of each kind.
fn set_kinds() -> Vec<(&'static str, fn(&mut ChaCha8Rng, usize) -> FeasibleSet)> {
    fn boxed(r: &mut ChaCha8Rng, n: usize) -> FeasibleSet {
        let lo = random_vector(r, n, 2.0);
        let width = Vector::from_fn(n, |_, _| r.gen_range(0.0..3.0));
        FeasibleSet::boxed(lo.clone(), lo + width).unwrap()
    }
    fn ball(r: &mut ChaCha8Rng, n: usize) -> FeasibleSet {
        let c = random_vector(r, n, 2.0);
        FeasibleSet::ball(c, r.gen_range(0.1..3.0)).unwrap()
    }
    fn halfspace(r: &mut ChaCha8Rng, n: usize) -> FeasibleSet {
        let mut normal = random_vector(r, n, 1.0);
        normal[0] += 0.1_f64.copysign(normal[0]);
        let sense = if r.gen_bool(0.5) { Sense::Le } else { Sense::Ge };
        FeasibleSet::halfspace(normal, r.gen_range(-2.0..2.0), sense).unwrap()
    }
    fn simplex(r: &mut ChaCha8Rng, n: usize) -> FeasibleSet {
        FeasibleSet::simplex(n, r.gen_range(0.5..3.0)).unwrap()
    }
    fn ball_and_box(r: &mut ChaCha8Rng, n: usize) -> FeasibleSet {
        // Shares the cube's centre with the ball so the intersection is nonempty.
        let c = random_vector(r, n, 1.0);
        let half = Vector::from_fn(n, |_, _| r.gen_range(0.2..2.0));
        FeasibleSet::intersection(vec![
            FeasibleSet::ball(c.clone(), r.gen_range(0.5..2.5)).unwrap(),
            FeasibleSet::boxed(&c - &half, &c + &half).unwrap(),
        ])
        .unwrap()
    }
    fn simplex_and_halfspace(r: &mut ChaCha8Rng, n: usize) -> FeasibleSet {
        // A floor on one coordinate. General cuts that meet the simplex at
        // a shallow angle need far more Dykstra sweeps than the cap allows.
        let mut normal = Vector::zeros(n);
        normal[r.gen_range(0..n)] = 1.0;
        FeasibleSet::intersection(vec![
            FeasibleSet::simplex(n, 1.0).unwrap(),
            FeasibleSet::halfspace(normal, r.gen_range(0.1..0.9), Sense::Ge).unwrap(),
        ])
        .unwrap()
    }
    vec![
        ("box", boxed),
        ("ball", ball),
        ("halfspace", halfspace),
        ("simplex", simplex),
        ("ball_and_box", ball_and_box),
        ("simplex_and_halfspace", simplex_and_halfspace),
    ]
}

/// A point of `set` drawn without projecting, for the generated
/// intersections; primitive sets fall back to projection.
fn feasible_sample(r: &mut ChaCha8Rng, set: &FeasibleSet) -> Vector {
    let n = set.dim();
    match set.members() {
        [FeasibleSet::Ball { center, radius }, FeasibleSet::Box { lower, upper }] => {
            // Shrinking coordinates towards the shared centre stays in both.
            let dir = random_vector(r, n, 1.0);
            let u = center + dir.normalize() * (radius * r.gen_range(0.0..1.0));
            Vector::from_fn(n, |i, _| u[i].clamp(lower[i], upper[i]))
        }
        [FeasibleSet::Simplex { total, .. }, FeasibleSet::Halfspace { normal, offset, .. }] => {
            let weights = Vector::from_fn(n, |_, _| -r.gen_range(f64::MIN_POSITIVE..1.0).ln());
            let j = normal.imax();
            let mut c = &weights / weights.sum() * (total - offset);
            c[j] += offset;
            c
        }
        _ => set.project(&random_vector(r, n, 5.0)).expect("primitive projection"),
    }
}

fn random_smooth_oracle(r: &mut ChaCha8Rng, n: usize) -> FunctionOracle {
    match r.gen_range(0..5) {
        0 => FunctionOracle::linear(random_vector(r, n, 2.0), r.gen_range(-1.0..1.0)).unwrap(),
        1 => {
            let m = random_matrix(r, n, n);
            FunctionOracle::quadratic_form(m.tr_mul(&m)).unwrap()
        }
        2 => {
            let rows = r.gen_range(1..=n + 2);
            let a = random_matrix(r, rows, n);
            let b = random_vector(r, rows, 2.0);
            FunctionOracle::least_squares(a, b).unwrap()
        }
        3 => FunctionOracle::squared_distance(random_vector(r, n, 2.0)).unwrap(),
        _ => FunctionOracle::dist_to_disc_squared(n).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// Projections

/// Idempotence, nonexpansiveness and the variational inequality, `trials`
/// random points per set kind.
pub fn projection_properties(seed: u64, trials: usize) -> Vec<CheckOutcome> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (kind, make) in set_kinds() {
        let mut idem = CheckOutcome::new(format!("projection idempotence ({kind})"), 10.0 * TOL_PROJ);
        let mut nonexp = CheckOutcome::new(format!("projection nonexpansive ({kind})"), 10.0 * TOL_PROJ);
        let vi_tol = if kind.contains("_and_") { 1e-8 } else { 1e-10 };
        let mut vi = CheckOutcome::new(format!("projection variational inequality ({kind})"), vi_tol);
        for _ in 0..trials {
            let n = r.gen_range(2..=6);
            let set = make(&mut r, n);
            let p = random_vector(&mut r, n, 5.0);
            let q = random_vector(&mut r, n, 5.0);
            let (pp, pq) = match (set.project(&p), set.project(&q)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    idem.fail(e.to_string());
                    continue;
                }
            };
            match set.project(&pp) {
                Ok(again) => idem.record((&again - &pp).norm()),
                Err(e) => idem.fail(e.to_string()),
            }
            nonexp.record((&pp - &pq).norm() - (&p - &q).norm());
            let normal = &p - &pp;
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..100 {
                let c = feasible_sample(&mut r, &set);
                worst = worst.max(normal.dot(&(c - &pp)));
            }
            vi.record(worst);
        }
        out.extend([idem, nonexp, vi]);
    }
    out
}

// ---------------------------------------------------------------------------
// Lower-level step

/// `<grad g(x), P_C(x - beta grad g(x)) - x> <= 1e-12` for feasible `x`.
///
/// The inequality holds for the exact projection; intersections are
/// therefore projected to `1e-14` here rather than the default tolerance,
/// whose error alone can reach `1e-10 |grad g|`.
pub fn stationarity_sign(seed: u64, trials: usize) -> CheckOutcome {
    let mut r = rng(seed);
    let tight = DykstraOptions {
        tol: 1e-14,
        max_sweeps: 100_000,
    };
    let kinds = set_kinds();
    let mut out = CheckOutcome::new("stationarity sign of the projected-gradient direction", 1e-12);
    for _ in 0..trials {
        let n = r.gen_range(2..=6);
        let (kind, make) = kinds[r.gen_range(0..kinds.len())];
        let set = make(&mut r, n);
        let g = random_smooth_oracle(&mut r, n);
        let x = match set.project_with(&random_vector(&mut r, n, 5.0), &tight) {
            Ok(x) => x,
            Err(e) => {
                out.fail(e.to_string());
                continue;
            }
        };
        let beta = r.gen_range(0.05..5.0);
        let grad = g.gradient(&x).expect("smooth oracle");
        match set.project_with(&(&x - &grad * beta), &tight) {
            Ok(z) => {
                let d = grad.dot(&(z - &x));
                if d > out.tolerance {
                    out.note.get_or_insert(format!("first violation on {kind} with {}", g.name()));
                }
                out.record(d)
            }
            Err(e) => out.fail(e.to_string()),
        }
    }
    out
}

fn disc_problem_set() -> FeasibleSet {
    FeasibleSet::intersection(vec![
        FeasibleSet::ball(Vector::zeros(2), 2f64.sqrt()).unwrap(),
        FeasibleSet::boxed(Vector::from_element(2, -3.0), Vector::from_element(2, 0.5)).unwrap(),
    ])
    .unwrap()
}

/// Strict Armijo decrease, minimality of the accepted exponent, and
/// insensitivity to a larger backtracking cap, on random states of the
/// disc problem.
pub fn armijo_properties(seed: u64, trials: usize) -> Vec<CheckOutcome> {
    let mut r = rng(seed);
    let g = FunctionOracle::dist_to_disc_squared(2).unwrap();
    let set = disc_problem_set();
    let mut descent = CheckOutcome::new("armijo strict decrease", 0.0);
    let mut minimal = CheckOutcome::new("armijo exponent minimality", 0.0);
    let mut stable = CheckOutcome::new("armijo result independent of backtracking cap", 0.0);
    for _ in 0..trials {
        let x = set.project(&random_vector(&mut r, 2, 4.0)).unwrap();
        let params = LowerStepParams {
            beta: r.gen_range(0.1..4.0),
            sigma: r.gen_range(0.01..0.9),
            ..LowerStepParams::default()
        };
        let res = match lower_level_step_with(&g, &set, &x, &params) {
            Ok(res) => res,
            Err(e) => {
                descent.fail(e.to_string());
                continue;
            }
        };
        let wide = LowerStepParams {
            max_backtracks: params.max_backtracks * 2,
            ..params
        };
        match lower_level_step_with(&g, &set, &x, &wide) {
            Ok(other) => stable.record(if other == res { 0.0 } else { 1.0 }),
            Err(e) => stable.fail(e.to_string()),
        }
        if res.stationary {
            continue;
        }
        let g_x = g.eval(&x);
        let strict = g.eval(&res.y) < g_x + params.sigma * res.gamma * res.dir_deriv;
        descent.record(if strict { 0.0 } else { 1.0 });
        if res.l > 0 {
            let coarser = res.gamma * 2.0;
            let y = &x + (&res.z - &x) * coarser;
            // The coarser step must have failed the test.
            let accepted = g.eval(&y) < g_x + params.sigma * coarser * res.dir_deriv;
            minimal.record(if accepted { 1.0 } else { 0.0 });
        } else {
            minimal.record(0.0);
        }
    }
    vec![descent, minimal, stable]
}

// ---------------------------------------------------------------------------
// Level sequences

/// Sequences `a_{k+1} = a_k + eta_k u_k - d_k`, bounded below, must settle:
/// the spread of the second half of a long run stays below `1e-8`.
pub fn synthetic_alpha_sequences(seed: u64, runs: usize) -> CheckOutcome {
    let mut r = rng(seed);
    let mut out = CheckOutcome::new("summably perturbed monotone sequences converge", 1e-8);
    let steps = 2000;
    for _ in 0..runs {
        let base: f64 = r.gen_range(2.0..1000.0);
        let floor: f64 = r.gen_range(-5.0..5.0);
        let press = r.gen_range(0.0..1.0);
        let mut a: f64 = floor + r.gen_range(0.0..10.0);
        let mut seq = Vec::with_capacity(steps);
        let mut bounded = true;
        for k in 1..=steps {
            let up = base.powi(-(k as i32)) * r.gen_range(0.0..1.0);
            let excess = a + up - floor;
            let down = if r.gen_bool(press) {
                r.gen_range(0.0..1.0) * excess.min(0.9f64.powi(k as i32))
            } else {
                0.0
            };
            a = a + up - down;
            bounded &= a >= floor;
            seq.push(a);
        }
        if !bounded {
            out.fail("sequence left its lower bound".into());
            continue;
        }
        let tail = &seq[steps / 2..];
        let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        out.record(hi - lo);
    }
    out
}

/// `alpha_k <= alpha_{k-1} + eta_{k-1} + 1e-9` along the trace of every
/// bundled experiment configuration.
pub fn alpha_recursion(portfolio_max_outer: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("level recursion along experiment traces", 1e-9);
    for id in ExperimentId::ALL {
        let loaded = match bundled_problem(id) {
            Ok(l) => l,
            Err(e) => {
                out.fail(e.to_string());
                continue;
            }
        };
        let anchors: Vec<Option<Vector>> = match default_anchors(id) {
            Some(list) => list.into_iter().map(Some).collect(),
            None => vec![None],
        };
        for entry in default_sweep(id) {
            for anchor in &anchors {
                let run = instance_for(id, &loaded, anchor.as_ref())
                    .map_err(|e| e.to_string())
                    .and_then(|inst| {
                        let mut cfg = experiment_config(&loaded, &entry).map_err(|e| e.to_string())?;
                        if id == ExperimentId::Portfolio {
                            cfg.max_outer = cfg.max_outer.min(portfolio_max_outer);
                        }
                        solve(&inst, &cfg).map(|res| (res, cfg)).map_err(|e| e.to_string())
                    });
                let (res, cfg) = match run {
                    Ok(v) => v,
                    Err(e) => {
                        out.fail(format!("{id}: {e}"));
                        continue;
                    }
                };
                for pair in res.trace.windows(2) {
                    let bound = pair[0].lower.alpha + eta(&cfg.eta_schedule, pair[0].k);
                    out.record(pair[1].lower.alpha - bound);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Oracles

/// Central differences against analytic gradients, 100 random points per
/// smooth oracle kind.
pub fn gradient_consistency(seed: u64, points: usize) -> CheckOutcome {
    let mut r = rng(seed);
    let mut out = CheckOutcome::new("gradients match central differences", 1e-5);
    for kind in 0..5 {
        for _ in 0..points {
            let n = r.gen_range(1..=6);
            let oracle = loop {
                let o = random_smooth_oracle(&mut r, n);
                if kind_index(&o) == kind {
                    break o;
                }
            };
            let x = random_vector(&mut r, n, 3.0);
            match oracle.check_gradient(&x, 1e-6) {
                Ok(err) => out.record(err),
                Err(e) => out.fail(e.to_string()),
            }
        }
    }
    out
}

fn kind_index(o: &FunctionOracle) -> usize {
    match o {
        FunctionOracle::Linear { .. } => 0,
        FunctionOracle::QuadraticForm { .. } => 1,
        FunctionOracle::LeastSquares { .. } => 2,
        FunctionOracle::SquaredDistance { .. } => 3,
        _ => 4,
    }
}

// ---------------------------------------------------------------------------
// Inner solver

/// Brute-force minimizer of `f` over `{x in C : g(x) <= tau}` in 2-D: a
/// grid over `window` refined around the incumbent.
pub fn grid_minimize(
    f: &FunctionOracle,
    g: &FunctionOracle,
    set: &FeasibleSet,
    tau: f64,
    window: ([f64; 2], [f64; 2]),
) -> Option<(Vector, f64)> {
    let (mut lo, mut hi) = window;
    let mut best: Option<(Vector, f64)> = None;
    let cells = 100;
    let keep = 50;
    for _ in 0..60 {
        let mut feasible = Vec::new();
        for i in 0..=cells {
            for j in 0..=cells {
                let x = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / cells as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / cells as f64,
                ];
                let v = Vector::from_column_slice(&x);
                if set.violation(&v) > 0.0 || g.eval(&v) > tau {
                    continue;
                }
                feasible.push((f.eval(&v), x));
            }
        }
        feasible.sort_by(|a, b| a.0.total_cmp(&b.0));
        let cell = [(hi[0] - lo[0]) / cells as f64, (hi[1] - lo[1]) / cells as f64];
        if let Some(&(fx, x)) = feasible.first() {
            if best.as_ref().is_none_or(|(_, b)| fx < *b) {
                best = Some((Vector::from_column_slice(&x), fx));
            }
        }
        let (incumbent, _) = best.as_ref()?;
        // Next window: the box around the best few points, so it stretches
        // along directions in which the value is flat.
        let (mut new_lo, mut new_hi) = ([incumbent[0], incumbent[1]], [incumbent[0], incumbent[1]]);
        for (_, x) in feasible.iter().take(keep) {
            for i in 0..2 {
                new_lo[i] = new_lo[i].min(x[i]);
                new_hi[i] = new_hi[i].max(x[i]);
            }
        }
        for i in 0..2 {
            new_lo[i] -= 2.0 * cell[i];
            new_hi[i] += 2.0 * cell[i];
        }
        if new_hi[0] - new_lo[0] < 1e-12 || new_hi[1] - new_lo[1] < 1e-12 {
            break;
        }
        lo = new_lo;
        hi = new_hi;
    }
    best
}

/// The inner solver against [`grid_minimize`] on the bundled planar
/// problems, for several levels above the lower optimum.
pub fn inner_grid_equivalence() -> CheckOutcome {
    let mut out = CheckOutcome::new("inner solver matches grid search on planar problems", 1e-3);
    for id in ExperimentId::ALL {
        let loaded = match bundled_problem(id) {
            Ok(l) => l,
            Err(e) => {
                out.fail(e.to_string());
                continue;
            }
        };
        if loaded.instance.dim() != 2 {
            continue;
        }
        let anchors: Vec<Option<Vector>> = match default_anchors(id) {
            Some(list) => list.into_iter().map(Some).collect(),
            None => vec![None],
        };
        let base = loaded.instance.known_lower_optimum.unwrap_or(0.0);
        for anchor in &anchors {
            let inst = match instance_for(id, &loaded, anchor.as_ref()) {
                Ok(i) => i,
                Err(e) => {
                    out.fail(e.to_string());
                    continue;
                }
            };
            let probe = inst.set.feasibility_probe().expect("bundled set is nonempty");
            let warm = match lower_level_step_with(&inst.g, &inst.set, &probe, &LowerStepParams::default()) {
                Ok(step) => step.y,
                Err(e) => {
                    out.fail(e.to_string());
                    continue;
                }
            };
            let (lo, hi) = bounding_window(&inst.set);
            for level in [1e-1, 1e-2, 1e-3] {
                let tau = base + level;
                let problem = InnerProblem {
                    f: &inst.f,
                    g: &inst.g,
                    set: &inst.set,
                    tau,
                    epsilon: 1e-8,
                    budget: DEFAULT_BUDGET,
                    feas_tol: DEFAULT_FEAS_TOL,
                    method: InnerMethod::Auto,
                };
                let warm = if inst.g.eval(&warm) <= tau { warm.clone() } else { probe.clone() };
                let solved = match solve_inner(&problem, &warm) {
                    Ok(s) => s,
                    Err(e) => {
                        out.fail(format!("{id} tau={tau:e}: {e}"));
                        continue;
                    }
                };
                match grid_minimize(&inst.f, &inst.g, &inst.set, tau, (lo, hi)) {
                    Some((x, fx)) => {
                        // Values are compared everywhere. Points only where f is
                        // strongly convex: for a linear f on a curved boundary the
                        // grid pins the point to the square root of its value error.
                        let gap = (solved.f_val - fx).abs();
                        let point_gap = if matches!(inst.f, FunctionOracle::SquaredDistance { .. }) {
                            (&solved.x_next - x).amax()
                        } else {
                            0.0
                        };
                        out.record(gap.max(point_gap));
                    }
                    None => out.fail(format!("{id}: grid found no feasible point")),
                }
            }
        }
    }
    out
}

fn bounding_window(set: &FeasibleSet) -> ([f64; 2], [f64; 2]) {
    let mut lo = [-10.0, -10.0];
    let mut hi = [10.0, 10.0];
    for m in set.members() {
        match m {
            FeasibleSet::Box { lower, upper } => {
                for i in 0..2 {
                    lo[i] = f64::max(lo[i], lower[i]);
                    hi[i] = f64::min(hi[i], upper[i]);
                }
            }
            FeasibleSet::Ball { center, radius } => {
                for i in 0..2 {
                    lo[i] = f64::max(lo[i], center[i] - radius);
                    hi[i] = f64::min(hi[i], center[i] + radius);
                }
            }
            _ => {}
        }
    }
    (lo, hi)
}
