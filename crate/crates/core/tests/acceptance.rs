//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Reference values come from the Riccati solver, trapezoidal
//! collocation, closed-form integrals and composite Simpson quadrature.

use std::time::Instant;

use galerkin_bounds::basis::BasisSpec;
use galerkin_bounds::certify::{convergence_summary, run_sweep, BoundReport, OracleChoice, SweepConfig};
use galerkin_bounds::galerkin::{project_function, LtiProblem, ParamVector};
use galerkin_bounds::oracle::solve_care;
use galerkin_bounds::SetDescription;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const TOL: f64 = 1e-8;
const EXACT: f64 = 1e-6;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: usize, name: &str, o: &Outcome) {
    println!(
        "criterion {id} {:<30} {}  {}",
        name,
        if o.passed { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn scalar_integrator(input_set: SetDescription) -> LtiProblem {
    LtiProblem::new(
        DMatrix::from_element(1, 1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, 1.0),
        SetDescription::Unconstrained,
        input_set,
    )
    .unwrap()
}

fn double_integrator() -> LtiProblem {
    LtiProblem::unconstrained(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DVector::from_column_slice(&[1.0, 0.0]),
    )
    .unwrap()
}

fn sweep(prob: &LtiProblem, p: f64, s_max: usize, oracle: OracleChoice) -> BoundReport {
    let cfg = SweepConfig {
        s_min: 1,
        s_max,
        tol: TOL,
        oracle,
        ..SweepConfig::default()
    };
    run_sweep(prob, p, &cfg).unwrap()
}

fn exact_representability(r: &BoundReport) -> Outcome {
    let care = solve_care(&DMatrix::from_element(1, 1, 0.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
    let mut worst = (care.p[(0, 0)] - 1.0).abs();
    let mut complete = true;
    for rec in &r.records {
        match (rec.upper_cost, rec.lower_cost) {
            (Some(j), Some(jt)) => worst = worst.max((j - 0.5).abs()).max((jt - 0.5).abs()),
            _ => complete = false,
        }
    }
    Outcome {
        passed: complete && r.records.len() == 5 && worst <= 1e-8,
        detail: format!("s = 1..5, max deviation from 0.5 (and of P from 1) {worst:.2e}"),
    }
}

fn hand_kkt_sandwich(r: &BoundReport) -> Outcome {
    let first = &r.records[0];
    let (j, jt) = (first.upper_cost.unwrap_or(f64::NAN), first.lower_cost.unwrap_or(f64::NAN));
    let care = solve_care(&DMatrix::from_element(1, 1, 0.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
    let j_inf = care.cost(&DVector::from_element(1, 1.0));
    let passed = first.s == 1
        && (j - 0.625).abs() <= 1e-8
        && (jt - 0.4).abs() <= 1e-8
        && jt < j_inf
        && j_inf < j;
    Outcome {
        passed,
        detail: format!("J_1 = {j:.12}, Jtilde_1 = {jt:.12}, reference {j_inf:.12}"),
    }
}

fn double_integrator_properties(r: &BoundReport) -> Outcome {
    let j_inf = 3f64.sqrt() / 2.0;
    let slack = 10.0 * TOL;
    let sandwich = r.records.iter().all(|rec| {
        rec.lower_cost.is_none_or(|jt| jt <= j_inf + slack) && rec.upper_cost.is_none_or(|j| j_inf <= j + slack)
    });
    let finite_from_n0 = r
        .records
        .iter()
        .skip_while(|rec| rec.upper_cost.is_none())
        .all(|rec| rec.upper_cost.is_some() && rec.lower_cost.is_some());
    let summary = convergence_summary(r);
    let (ratio, s_first) = summary.as_ref().map(|s| (s.ratio, s.s_first)).unwrap_or((f64::NAN, 0));
    let passed = r.flags.upper_monotone == Some(true)
        && r.flags.lower_monotone
        && sandwich
        && finite_from_n0
        && r.solver_failures == 0
        && ratio < 0.05;
    Outcome {
        passed,
        detail: format!(
            "first finite size {:?}, gap ratio {ratio:.2e} (from s = {s_first} to 30), monotone {:?}/{}, sandwich {sandwich}",
            r.n0, r.flags.upper_monotone, r.flags.lower_monotone
        ),
    }
}

fn cauchy_bound(r: &BoundReport) -> Outcome {
    let checked: Vec<_> = r.records.iter().filter(|rec| rec.cauchy_ok.is_some()).collect();
    let all_ok = checked.iter().all(|rec| rec.cauchy_ok == Some(true));
    // every consecutive pair from the first finite size onwards
    let expected = r.n0.map(|n0| 30 - n0).unwrap_or(usize::MAX);
    let worst = checked
        .iter()
        .map(|rec| rec.cauchy_lhs.unwrap() - rec.cauchy_rhs.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    Outcome {
        passed: all_ok && checked.len() == expected,
        detail: format!("{} pairs checked, max(lhs - rhs) = {worst:.2e}, slack {:.1e}", checked.len(), 40.0 * TOL),
    }
}

fn exact_dynamics(reports: &[&BoundReport]) -> Outcome {
    let mut upper = 0;
    let mut lower = 0;
    let mut worst_dyn = 0.0f64;
    let mut worst_adj = 0.0f64;
    let mut ok = true;
    for r in reports {
        for rec in &r.records {
            if let (Some(res), Some(n)) = (rec.dyn_residual, rec.eta_norm) {
                upper += 1;
                worst_dyn = worst_dyn.max(res / (1.0 + n));
                ok &= res <= EXACT * (1.0 + n);
            }
            if let (Some(res), Some(n)) = (rec.adjoint_residual, rec.eta_p_norm) {
                lower += 1;
                worst_adj = worst_adj.max(res / (1.0 + n));
                ok &= res <= EXACT * (1.0 + n);
            }
        }
    }
    Outcome {
        passed: ok && upper > 0 && lower > 0,
        detail: format!(
            "{upper} upper / {lower} lower solutions, worst relative residuals {worst_dyn:.2e} / {worst_adj:.2e}"
        ),
    }
}

fn constrained_sandwich(r: &BoundReport) -> Outcome {
    let Some(o) = &r.oracle else {
        return Outcome {
            passed: false,
            detail: "collocation reference unavailable".into(),
        };
    };
    let (c, eps) = (o.value, o.band);
    let lower_ok = r.records.iter().all(|rec| rec.lower_cost.is_none_or(|jt| jt <= c + eps));
    let upper_ok = r.records.iter().all(|rec| rec.upper_cost.is_none_or(|j| j >= c - eps));
    let last = r.records.last().unwrap();
    let passed = o.converged
        && lower_ok
        && upper_ok
        && r.flags.upper_monotone == Some(true)
        && r.flags.lower_monotone
        && r.solver_failures == 0;
    Outcome {
        passed,
        detail: format!(
            "C = {c:.7} ± {eps:.1e}, s = 20 bounds [{:.6}, {:.6}], solver failures {}",
            last.lower_cost.unwrap_or(f64::NAN),
            last.upper_cost.unwrap_or(f64::INFINITY),
            r.solver_failures
        ),
    }
}

/// Composite Simpson Gram matrix on `[0, 150/p]` with one Richardson step;
/// independent of the Gauss–Laguerre rule used by the library.
fn simpson_gram(spec: &BasisSpec) -> DMatrix<f64> {
    let coarse = simpson_gram_with(spec, 60_000);
    let fine = simpson_gram_with(spec, 120_000);
    (fine * 16.0 - coarse) / 15.0
}

fn simpson_gram_with(spec: &BasisSpec, n: usize) -> DMatrix<f64> {
    let s = spec.size();
    let horizon = 150.0 / spec.p();
    let h = horizon / n as f64;
    let mut g = DMatrix::zeros(s, s);
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let tau = spec.eval(k as f64 * h).unwrap();
        g.ger(w * h / 3.0, &tau, &tau, 1.0);
    }
    g
}

/// Random sums of damped cosines; their squared norms have a closed form.
fn bessel_suite(rng: &mut StdRng) -> (bool, f64) {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let p = [0.5, 1.0, 2.0, 5.0][rng.gen_range(0..4)];
        let s = rng.gen_range(1..=30);
        let terms: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.gen_range(-1.0..1.0), p * rng.gen_range(0.2..2.0), p * rng.gen_range(0.0..3.0)))
            .collect();
        let mut norm2 = 0.0;
        for &(ai, bi, wi) in &terms {
            for &(aj, bj, wj) in &terms {
                let c = bi + bj;
                let dm = wi - wj;
                let dp = wi + wj;
                norm2 += ai * aj * 0.5 * (c / (c * c + dm * dm) + c / (c * c + dp * dp));
            }
        }
        let spec = BasisSpec::laguerre(p, s).unwrap();
        let f = |t: f64| {
            let v: f64 = terms.iter().map(|&(a, b, w)| a * (-b * t).exp() * (w * t).cos()).sum();
            DVector::from_element(1, v)
        };
        let c = project_function(f, 1, &spec).unwrap();
        worst = worst.max((c.norm().powi(2) - norm2) / norm2);
    }
    (worst <= 1e-12, worst)
}

fn basis_suite() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst_identity = 0.0f64;
    let mut worst_gram = 0.0f64;
    let mut round_trip = true;
    for p in [0.5, 1.0, 2.0, 5.0] {
        for s in 1..=30 {
            let spec = BasisSpec::laguerre(p, s).unwrap();
            worst_identity = worst_identity.max(spec.generator_identity_residual() / p);
            let q = rng.gen_range(1..=3);
            let v = ParamVector::new(DVector::from_fn(q * s, |_, _| rng.gen_range(-1.0..1.0)), s).unwrap();
            let big = v.include(30 + 3).unwrap();
            round_trip &= big.truncate(s).unwrap() == v;
            let big_spec = BasisSpec::laguerre(p, 33).unwrap();
            // coefficients round-trip exactly; trajectory values agree to
            // rounding (the summation length differs)
            for t in [0.0, 0.3 / p, 2.0 / p, 11.0 / p] {
                let a = big.eval(&big_spec, t).unwrap();
                let b = v.eval(&spec, t).unwrap();
                round_trip &= (&a - &b).amax() <= 1e-14 * (1.0 + b.amax());
            }
        }
        // the Gram matrices for s < 30 are leading blocks of this one
        let spec = BasisSpec::laguerre(p, 30).unwrap();
        worst_gram = worst_gram.max((simpson_gram(&spec) - DMatrix::identity(30, 30)).amax());
        worst_gram = worst_gram.max((spec.gram_matrix(62).unwrap() - DMatrix::identity(30, 30)).amax());
    }
    let (bessel_ok, bessel_worst) = bessel_suite(&mut rng);
    let identity_ok = worst_identity <= 4.0 * f64::EPSILON;
    Outcome {
        passed: identity_ok && worst_gram <= 1e-8 && bessel_ok && round_trip,
        detail: format!(
            "identity {worst_identity:.1e}/p, gram {worst_gram:.1e}, bessel excess {bessel_worst:.1e} on 100 functions, round trip {round_trip}"
        ),
    }
}

fn strong_duality(reports: &[&BoundReport]) -> Outcome {
    let mut count = 0;
    let mut worst = 0.0f64;
    let mut ok = true;
    for r in reports {
        for rec in &r.records {
            if let (Some(g), Some(j)) = (rec.lower_duality_gap, rec.lower_cost) {
                count += 1;
                worst = worst.max(g.abs() / (1.0 + j.abs()));
                ok &= g.abs() <= EXACT * (1.0 + j.abs());
            }
        }
    }
    Outcome {
        passed: ok && count > 0,
        detail: format!("{count} optimal lower solves, worst relative gap {worst:.2e}"),
    }
}

fn main() {
    let start = Instant::now();
    let free = scalar_integrator(SetDescription::Unconstrained);
    let boxed = scalar_integrator(SetDescription::symmetric_box(&[0.4]).unwrap());

    let r1 = sweep(&free, 1.0, 5, OracleChoice::Care);
    let r2 = sweep(&free, 2.0, 20, OracleChoice::Care);
    let r3 = sweep(&double_integrator(), 1.0, 30, OracleChoice::Care);
    let r6 = sweep(&boxed, 1.0, 20, OracleChoice::Collocation);
    let all = [&r1, &r2, &r3, &r6];

    let results = [
        ("exact representability", exact_representability(&r1)),
        ("hand KKT sandwich", hand_kkt_sandwich(&r2)),
        ("double integrator bounds", double_integrator_properties(&r3)),
        ("cauchy bound", cauchy_bound(&r3)),
        ("exact dynamics and adjoint", exact_dynamics(&all)),
        ("constrained sandwich", constrained_sandwich(&r6)),
        ("basis suite", basis_suite()),
        ("strong duality", strong_duality(&all)),
    ];
    let mut failures = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        report(i + 1, name, o);
        failures += usize::from(!o.passed);
    }
    println!("acceptance: {} of {} criteria pass in {:.1} s", results.len() - failures, results.len(), start.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
