//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! process exits nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use cone_contraction::cone::{max_ratio, min_ratio, thompson_distance, OrderInterval, SpdMat, SymMat};
use cone_contraction::discrete::{
    directed_lipschitz, empirical_lipschitz, lgty_gap, lipschitz_report, woodbury_rbar, DiscreteParams,
    DEFAULT_RANK_TOL,
};
use cone_contraction::flow::{
    flow_map, integrate_on_grid, observed_contraction, order_preservation_probe, uniform_grid, IntegrationConfig,
};
use cone_contraction::gare::{gare_convergence_bound, solve_gare, solve_std_are, GareOptions};
use cone_contraction::gauge::{
    audit_nonexpansiveness, build_counterexample, finsler_distance, GaugeFunction, SearchGrid,
};
use cone_contraction::random::{self, Rng};
use cone_contraction::rates::{
    grde_local_rate, indefinite_sigma_analysis, orthant_rate, std_beta_rate, std_global_rate, DomainSampler,
    IndefiniteSigmaAnalysis, JacobianMode, OrthantFn,
};
use cone_contraction::vfield::{GrdeParams, ScalarBounds, StdRiccatiParams};
use cone_contraction::{Execution, Result};
use nalgebra::DMatrix;
use rand::Rng as _;

type Check = Result<std::result::Result<String, String>>;

fn tight() -> IntegrationConfig {
    IntegrationConfig::with_tolerances(1e-11, 1e-13)
}

fn ac1() -> Check {
    let mut rng = random::rng(1001);
    let mut worst = [0.0f64; 4];
    for i in 0..500 {
        let n = 1 + i % 6;
        let a = random::spd(&mut rng, n, 2.0);
        let b = random::spd(&mut rng, n, 2.0);
        let c = random::spd(&mut rng, n, 2.0);
        let dab = thompson_distance(&a, &b)?;
        if dab != thompson_distance(&b, &a)? {
            return Ok(Err(format!("asymmetric distance at draw {i}")));
        }
        worst[0] = worst[0].max(dab - thompson_distance(&a, &c)? - thompson_distance(&c, &b)?);
        let g = random::invertible(&mut rng, n, 0.5);
        let moved = thompson_distance(&a.congruence(&g)?, &b.congruence(&g)?)?;
        worst[1] = worst[1].max((moved - dab).abs());
        worst[2] = worst[2].max((thompson_distance(&a.inv(), &b.inv())? - dab).abs());
        let m = max_ratio(&a, &b)?.max(max_ratio(&b, &a)?);
        worst[3] = worst[3].max((dab.exp() - m).abs() / m);
    }
    let ok = worst[0] <= 1e-9 && worst[1] <= 1e-9 && worst[2] <= 1e-9 && worst[3] <= 1e-10;
    let detail = format!(
        "triangle excess {:.1e}, congruence {:.1e}, inversion {:.1e}, exp(d) vs M {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    );
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn ac2() -> Check {
    let mut rng = random::rng(1002);
    let (mut grde_err, mut f_err, mut defect_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..200 {
        let n = 1 + i % 4;
        let k = 1 + (i / 4) % 4;
        let p = random::grde_params(&mut rng, n, k, i % 2 == 0, 0.0);
        let x = random::spd(&mut rng, n, 1.0);
        let z = random::symmetric(&mut rng, n);
        let h = 1e-5;
        let plus = p.phi(&(x.as_sym() + &z.scale(h)))?;
        let minus = p.phi(&(x.as_sym() - &z.scale(h)))?;
        let fd = (plus.matrix() - minus.matrix()) / (2.0 * h);
        let an = p.dphi(&x, &z)?;
        grde_err = grde_err.max((an.matrix() - fd).norm() / an.matrix().norm().max(1e-3));
        let direct = &p.dphi(&x, &x)? - &p.phi(&x)?;
        defect_err =
            defect_err.max((p.defect(&x)?.matrix() - direct.matrix()).norm() / (1.0 + direct.frobenius_norm()));

        let dp = DiscreteParams::new(
            random::gaussian_matrix(&mut rng, n, n),
            random::gaussian_matrix(&mut rng, n, k),
            random::gaussian_matrix(&mut rng, n, n) * 0.5,
            random::gaussian_matrix(&mut rng, n, k) * 0.5,
            random::spd(&mut rng, n, 1.0),
            random::spd(&mut rng, k, 1.0),
        )?;
        let fp = dp.apply_f(&SpdMat::new(x.as_sym() + &z.scale(h))?)?;
        let fm = dp.apply_f(&SpdMat::new(x.as_sym() - &z.scale(h))?)?;
        let fd = (fp.matrix() - fm.matrix()) / (2.0 * h);
        let an = dp.df(&x, &z)?;
        f_err = f_err.max((an.matrix() - fd).norm() / an.matrix().norm().max(1e-3));
    }
    let ok = grde_err <= 1e-5 && f_err <= 1e-5 && defect_err <= 1e-10;
    let detail = format!("dphi rel err {grde_err:.1e}, dF rel err {f_err:.1e}, defect identity {defect_err:.1e}");
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

/// Well-posed instances whose stacked `[R; D]` is not close to rank deficient.
/// Near-deficient stacks drive states to the cone boundary faster than any
/// fixed tolerance can follow.
fn well_conditioned(rng: &mut Rng, n: usize, k: usize) -> GrdeParams {
    loop {
        let p = random::grde_params(rng, n, k, false, 0.0);
        let mut stack = DMatrix::zeros(k + n, k);
        stack.view_mut((0, 0), (k, k)).copy_from(p.r().matrix());
        stack.view_mut((k, 0), (n, k)).copy_from(p.d());
        let sv = stack.singular_values();
        if sv.min() >= 0.05 * sv.max() {
            return p;
        }
    }
}

fn ac3() -> Check {
    let mut rng = random::rng(1003);
    let grid = uniform_grid(0.0, 2.0, 20);
    let cfg = tight();
    let (mut worst_increase, mut worst_probe) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..100 {
        let n = 1 + i % 4;
        let k = 1 + (i / 4) % 3;
        let p = well_conditioned(&mut rng, n, k);
        let p1 = random::spd(&mut rng, n, 1.0);
        let p2 = random::spd(&mut rng, n, 1.0);
        let seq = observed_contraction(&p, &p1, &p2, &grid, thompson_distance, &cfg)?;
        if seq.len() != grid.len() {
            return Ok(Err(format!("instance {i} left the domain")));
        }
        for w in seq.windows(2) {
            worst_increase = worst_increase.max(w[1].1 - w[0].1);
        }
        let upper = SpdMat::new(p2.as_sym() + &SymMat::identity(n))?;
        worst_probe = worst_probe.min(order_preservation_probe(&p, &upper, &p2, &grid, &cfg)?);
    }
    let ok = worst_increase <= 1e-6 && worst_probe >= -1e-8;
    let detail = format!("largest distance increase {worst_increase:.1e}, smallest probe {worst_probe:.1e}");
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn ac4() -> Check {
    let n = 3;
    let id = SymMat::identity(n);
    let cert = std_global_rate(&id, &id)?;
    if cert.rate != 2.0 {
        return Ok(Err(format!("closed form gave {}", cert.rate)));
    }
    let mut rng = random::rng(1004);
    let grid = uniform_grid(0.0, 2.0, 20);
    let cfg = tight();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let field = StdRiccatiParams::new(random::gaussian_matrix(&mut rng, n, n), id.clone(), id.clone())?;
        let p1 = random::spd(&mut rng, n, 1.5);
        let p2 = random::spd(&mut rng, n, 1.5);
        let seq = observed_contraction(&field, &p1, &p2, &grid, thompson_distance, &cfg)?;
        let d0 = seq[0].1;
        for &(t, d) in &seq {
            worst = worst.max(d / ((-2.0 * t).exp() * d0));
        }
    }
    let sampler = DomainSampler::Composite(vec![
        DomainSampler::List(vec![SpdMat::identity(n)]),
        DomainSampler::interval(OrderInterval::below(SpdMat::scalar(n, 10.0)?), 500),
    ]);
    let beta = std_beta_rate(&id, &id, &sampler, 1004, Execution::default())?.rate;
    let ok = worst <= 1.0 + 1e-4 && (beta - 2.0).abs() <= 1e-6;
    let detail = format!("rate 2, worst d(t)/(e^-2t d(0)) = {worst:.8}, sampled beta = {beta:.9}");
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

/// Strict instances with `phi(2I) <= 0`, so that `(0, 2I]` is invariant.
fn strict_supersolved(rng: &mut Rng, n: usize, k: usize, top: &SpdMat) -> Result<GrdeParams> {
    loop {
        let p = random::grde_params(rng, n, k, true, 1.5);
        if p.phi(top)?.max_eigenvalue()? <= 0.0 {
            return Ok(p);
        }
    }
}

fn ac5() -> Check {
    let mut rng = random::rng(1005);
    let cfg = tight();
    let mut worst_ratio = f64::INFINITY;
    let mut min_rate = f64::INFINITY;
    for i in 0..20 {
        let n = 2 + i % 3;
        let k = 1 + i % 2;
        let top = SpdMat::scalar(n, 2.0)?;
        let p = strict_supersolved(&mut rng, n, k, &top)?;
        let cert = grde_local_rate(&p, &top)?;
        let want = min_ratio(&p.reduced_cost()?, &top)?;
        if !(cert.rate > 0.0 && cert.rate == want) {
            return Ok(Err(format!("instance {i}: certificate {} vs {want}", cert.rate)));
        }
        min_rate = min_rate.min(cert.rate);
        let horizon = (3.0 / cert.rate).min(20.0);
        let grid = uniform_grid(0.0, horizon, 30);
        for _ in 0..3 {
            let p1 = random::in_order_interval(&mut rng, None, &top);
            let p2 = random::in_order_interval(&mut rng, None, &top);
            let seq = observed_contraction(&p, &p1, &p2, &grid, thompson_distance, &cfg)?;
            let (t_end, d_end) = *seq.last().expect("grid");
            let measured = -(d_end / seq[0].1).ln() / t_end;
            worst_ratio = worst_ratio.min(measured / cert.rate);
        }
    }
    let ok = worst_ratio >= 0.95;
    let detail = format!("smallest certified rate {min_rate:.4}, worst measured/certified {worst_ratio:.4}");
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn scalar_grde(a: f64, b: f64, c: f64, d: f64, l: f64, q: f64, r: f64) -> Result<GrdeParams> {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    GrdeParams::new(m(a), m(b), m(c), m(d), m(l), SymMat::scalar(1, q), SymMat::scalar(1, r))
}

fn ac6() -> Check {
    let opts = GareOptions::default();
    let quad = solve_gare(&scalar_grde(-1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0)?, None, &opts)?;
    let quad_err = (quad.pbar.get(0, 0) - (2f64.sqrt() - 1.0)).abs();

    let mut rng = random::rng(1006);
    let mut bisect_err = 0.0f64;
    for _ in 0..10 {
        let (a, b, c, d, l) = (
            rng.random_range(-2.0..-0.5),
            rng.random_range(0.2..2.0),
            rng.random_range(-0.7..0.7),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        );
        let (q, r) = (l * l + rng.random_range(0.2..2.0), 1.0);
        let g = |x: f64| {
            let gain = b * x + c * d * x + l;
            2.0 * a * x + c * c * x + q - gain * gain / (r + d * d * x)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let sol = solve_gare(&scalar_grde(a, b, c, d, l, q, r)?, None, &opts)?;
        bisect_err = bisect_err.max((sol.pbar.get(0, 0) - 0.5 * (lo + hi)).abs());
    }

    let cfg = tight();
    let (mut worst_res, mut worst_unique, mut worst_rate) = (0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..10 {
        let n = 2 + i % 3;
        let p = random::grde_params(&mut rng, n, 1 + i % 2, true, 1.5);
        let s1 = solve_gare(&p, None, &opts)?;
        let s2 = solve_gare(&p, Some(&random::spd(&mut rng, n, 1.0)), &opts)?;
        worst_res = worst_res.max(s1.residual_norm).max(s2.residual_norm);
        worst_unique = worst_unique.max(thompson_distance(&s1.pbar, &s2.pbar)?);
        let start = random::spd(&mut rng, n, 1.0);
        let bound = gare_convergence_bound(&p, &s1.pbar, &start)?;
        let grid = uniform_grid(0.0, 3.0, 30);
        let traj = integrate_on_grid(&p, &start, &grid, &cfg)?;
        let d0 = thompson_distance(&start, &s1.pbar)?;
        for (t, x) in traj.times.iter().zip(&traj.states).skip(1) {
            let d = thompson_distance(x, &s1.pbar)?;
            if d < 1e-9 {
                break;
            }
            worst_rate = worst_rate.min(-(d / d0).ln() / t / bound);
        }
    }
    let ok = quad_err <= 1e-9 && bisect_err <= 1e-9 && worst_res < 1e-8 && worst_unique <= 1e-7 && worst_rate >= 0.95;
    let detail = format!(
        "quadratic err {quad_err:.1e}, bisection err {bisect_err:.1e}, residual {worst_res:.1e}, two-start {worst_unique:.1e}, measured/bound {worst_rate:.3}"
    );
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn ac7() -> Check {
    let mut rng = random::rng(1007);
    let mut strict_excess = f64::NEG_INFINITY;
    for i in 0..3 {
        let n = 2 + i;
        // [A; C] = [B; D] S with [B; D] of full column rank makes the instance strict.
        let b = random::gaussian_matrix(&mut rng, n, n);
        let d = random::gaussian_matrix(&mut rng, n, n) * 0.5;
        let s = random::gaussian_matrix(&mut rng, n, n) * 0.5;
        let p =
            DiscreteParams::new(&b * &s, b, &d * &s, d, random::spd(&mut rng, n, 0.5), random::spd(&mut rng, n, 0.5))?;
        let rep = lipschitz_report(&p, DEFAULT_RANK_TOL)?;
        if !rep.strict {
            return Ok(Err(format!("constructed strict instance {i} reported non-strict")));
        }
        let emp = empirical_lipschitz(&p, 10_000, 1007 + i as u64, Execution::default())?;
        strict_excess = strict_excess.max(emp - rep.bound);
    }
    let mut directed = f64::INFINITY;
    let scales: Vec<f64> = (2..=9).map(|e| 10f64.powi(e)).collect();
    for i in 0..3 {
        let n = 2 + i;
        let p = DiscreteParams::new(
            random::gaussian_matrix(&mut rng, n, n),
            random::gaussian_matrix(&mut rng, n, 1),
            random::gaussian_matrix(&mut rng, n, n) * 0.5,
            random::gaussian_matrix(&mut rng, n, 1) * 0.5,
            random::spd(&mut rng, n, 0.5),
            random::spd(&mut rng, 1, 0.5),
        )?;
        if lipschitz_report(&p, DEFAULT_RANK_TOL)?.strict {
            return Ok(Err(format!("rank-one input instance {i} reported strict")));
        }
        directed = directed.min(directed_lipschitz(&p, &scales, 1e-3, 2, 1107 + i as u64)?);
    }
    let mut gap = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let r = random::spd(&mut rng, n, 1.5);
        let x = random::spd(&mut rng, n, 3.0).into_sym();
        let delta = 2.0 + rng.random_range(0.0..10.0f64);
        gap = gap.min(lgty_gap(&r, &x, delta)?);
    }
    let mut woodbury = 0.0f64;
    for _ in 0..100 {
        let n = 3;
        let p = DiscreteParams::new(
            random::gaussian_matrix(&mut rng, n, n),
            random::gaussian_matrix(&mut rng, n, 2) * random::gaussian_matrix(&mut rng, 2, 4),
            random::gaussian_matrix(&mut rng, n, n),
            random::gaussian_matrix(&mut rng, n, 2) * random::gaussian_matrix(&mut rng, 2, 4),
            random::spd(&mut rng, n, 1.0),
            random::spd(&mut rng, 4, 1.0),
        )?;
        let red = p.reduce(DEFAULT_RANK_TOL)?;
        let _ = woodbury_rbar(&red.w, p.r())?;
        let x = random::spd(&mut rng, n, 1.0);
        let full = p.apply_f(&x)?;
        woodbury =
            woodbury.max((full.matrix() - p.apply_f_reduced(&red, &x)?.matrix()).norm() / (1.0 + full.matrix().norm()));
    }
    let ok = strict_excess <= 1e-6 && directed > 0.99 && gap >= -1e-9 && woodbury <= 1e-9;
    let detail = format!(
        "max(empirical - bound) {strict_excess:.3}, directed ratio {directed:.6}, lemma gap {gap:.1e}, reduction err {woodbury:.1e}"
    );
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn ac8() -> Check {
    let grid = SearchGrid::default();
    let two = GaugeFunction::p_norm(2.0)?;
    let one = GaugeFunction::p_norm(1.0)?;
    let r2 = audit_nonexpansiveness(&two, 2, &grid, Execution::default())?;
    let r1 = audit_nonexpansiveness(&one, 2, &grid, Execution::default())?;
    let rs = audit_nonexpansiveness(&GaugeFunction::SupNorm, 2, &grid, Execution::default())?;
    if r2.witnesses.is_empty() || r1.witnesses.is_empty() {
        return Ok(Err("p = 1 or p = 2 produced no witness".into()));
    }
    let mut closed_err = 0.0f64;
    for w in r2.witnesses.iter().chain(&r1.witnesses) {
        let (eps, mu, l, e) = (w.epsilon, &w.mu, &w.lambda, &w.e);
        let n = l.len();
        let dot: f64 = mu.iter().zip(l).map(|(a, b)| a * b).sum();
        let e2: f64 = e.iter().map(|v| v * v).sum();
        let tail: f64 = (0..n - 1).map(|i| l[i] * e[i] * e[i]).sum();
        let closed = -2.0 * eps * dot + mu[n - 1] * (-l[n - 1] * e2 + tail);
        closed_err = closed_err.max((closed - w.value).abs());
    }

    // Flow check at the strongest p = 2 witness.
    let w = &r2.witnesses[0];
    let params = build_counterexample(2, w.epsilon, &w.e)?;
    let h = 1e-3;
    let p1 = SpdMat::identity(2);
    let p2 = SymMat::from_diagonal(&[h * w.lambda[0], h * w.lambda[1]]).exp()?;
    let cfg = tight();
    let tau = 0.02;
    let q1 = flow_map(&params, 0.0, tau, &p1, &cfg)?;
    let q2 = flow_map(&params, 0.0, tau, &p2, &cfg)?;
    let d2_ratio = finsler_distance(&two, &q1, &q2)? / finsler_distance(&two, &p1, &p2)?;
    let dt_ratio = thompson_distance(&q1, &q2)? / thompson_distance(&p1, &p2)?;

    let ok = closed_err <= 1e-9
        && rs.witnesses.is_empty()
        && rs.max_value <= 0.0
        && d2_ratio > 1.0
        && dt_ratio <= 1.0 + 1e-9;
    let detail = format!(
        "p=2 max {:.4} at eps {}, p=1 max {:.4}, sup max {:.4}, closed-form err {closed_err:.1e}, d2 ratio {d2_ratio:.6}, dT ratio {dt_ratio:.6}",
        r2.max_value, w.epsilon, r1.max_value, rs.max_value
    );
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn ac9() -> Check {
    let scalar = OrthantFn::with_jacobian(
        1,
        |_, x: &[f64]| vec![1.0 - x[0] * x[0]],
        |_, x: &[f64]| DMatrix::from_element(1, 1, -2.0 * x[0]),
    );
    let samples: Vec<Vec<f64>> = (1..=200).map(|i| vec![i as f64 * 0.01]).collect();
    let cert = orthant_rate(&scalar, &samples, &[0.0], JacobianMode::Analytic, Execution::default())?;
    let fd = orthant_rate(&scalar, &samples, &[0.0], JacobianMode::default(), Execution::default())?;
    let mut linear_rates = Vec::new();
    let mut rng = random::rng(1009);
    for n in 1..=5 {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a2 = a.clone();
        let field = OrthantFn::with_jacobian(
            n,
            move |_, x: &[f64]| x.iter().zip(&a).map(|(x, a)| a * x).collect(),
            move |_, _: &[f64]| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a2.clone())),
        );
        let pts = cone_contraction::rates::orthant_box_samples(&vec![0.1; n], &vec![10.0; n], 50, n as u64)?;
        linear_rates.push(orthant_rate(&field, &pts, &[0.0], JacobianMode::Analytic, Execution::default())?.rate);
    }
    let at_one = matches!(&cert.witnesses[0].point, cone_contraction::rates::WitnessPoint::Vector(v) if (v[0] - 1.0).abs() < 1e-12);
    let ok = (cert.rate - 2.0).abs() <= 1e-8
        && (fd.rate - 2.0).abs() <= 1e-8
        && at_one
        && linear_rates.iter().all(|&r| r == 0.0);
    let detail = format!(
        "1 - x^2 rate {:.10} (difference Jacobian {:.10}), linear rates {:?}",
        cert.rate, fd.rate, linear_rates
    );
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn ac10() -> Check {
    let bounds = ScalarBounds { c_a: 2.0, c_d: 1.0, m_d: 1.0, c_sigma: 1.0 };
    let IndefiniteSigmaAnalysis::Admissible { interval } = indefinite_sigma_analysis(&bounds)? else {
        return Ok(Err("hypotheses reported violated".into()));
    };
    let hand_lo = 2.0 - 3f64.sqrt();
    let interval_err = (interval.lo - hand_lo).abs().max((interval.hi - 1.0).abs());

    let skew = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, -0.7, 0.0]);
    let a = DMatrix::identity(2, 2) * -2.0 + skew;
    let field = StdRiccatiParams::new(a, SymMat::from_diagonal(&[-1.0, 0.3]), SymMat::identity(2))?;
    let sb = field.scalar_bounds()?;
    if (sb.c_a - 2.0).abs() > 1e-12
        || (sb.c_d - 1.0).abs() > 1e-12
        || (sb.m_d - 1.0).abs() > 1e-12
        || (sb.c_sigma - 1.0).abs() > 1e-12
    {
        return Ok(Err(format!("instance bounds {sb:?} do not conform")));
    }
    let lambda = 0.5;
    let rate = interval.rate_at(lambda)?;
    let top = SpdMat::scalar(2, lambda)?;
    let sol = solve_std_are(&field, Some(&top), &GareOptions::default())?;
    let in_box = cone_contraction::loewner_leq(&sol.pbar, &top, 1e-12)?;

    let mut rng = random::rng(1010);
    let cfg = tight();
    let grid = uniform_grid(0.0, 4.0, 40);
    let (mut excursion, mut worst_rate) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..20 {
        let start = random::in_order_interval(&mut rng, None, &top);
        let traj = integrate_on_grid(&field, &start, &grid, &cfg)?;
        let d0 = thompson_distance(&start, &sol.pbar)?;
        for (t, x) in traj.times.iter().zip(&traj.states) {
            excursion = excursion.max((x.as_sym() - top.as_sym()).max_eigenvalue()?);
            let d = thompson_distance(x, &sol.pbar)?;
            if *t > 0.0 && d > 1e-8 {
                worst_rate = worst_rate.min(-(d / d0).ln() / t / rate);
            }
        }
    }
    let ok = interval_err <= 1e-12 && in_box && excursion <= 1e-8 && worst_rate >= 0.95 && sol.residual_norm < 1e-9;
    let detail = format!(
        "interval [{:.12}, {}), rate at lambda = {lambda}: {rate}, max excursion above lambda I {excursion:.1e}, measured/certified {worst_rate:.3}",
        interval.lo, interval.hi
    );
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

type Criterion = (&'static str, &'static str, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("AC1", "Thompson metric suite", ac1),
        ("AC2", "derivative oracles", ac2),
        ("AC3", "generalized Riccati non-expansiveness", ac3),
        ("AC4", "standard Riccati global rate", ac4),
        ("AC5", "local contraction on (0, 2I]", ac5),
        ("AC6", "algebraic Riccati solver", ac6),
        ("AC7", "discrete operator Lipschitz constant", ac7),
        ("AC8", "Finsler metric audit", ac8),
        ("AC9", "orthant rates", ac9),
        ("AC10", "indefinite Sigma box", ac10),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(Ok(detail)) => println!("[PASS] {id} {name}: {detail} ({secs:.1}s)"),
            Ok(Err(detail)) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail} ({secs:.1}s)");
            }
            Err(e) => {
                failed += 1;
                println!("[FAIL] {id} {name}: error: {e} ({secs:.1}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
