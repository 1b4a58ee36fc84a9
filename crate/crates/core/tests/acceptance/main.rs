//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 10 (full-scale smoke) is optional and only runs when
//! `RDBPF_ACCEPT_FULL=1`. `RDBPF_ACCEPT_ONLY=1,2,5` restricts the run to the
//! listed criteria.

#[path = "../common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{brute_force_drift, dense_conditioning, dense_laplacian, mean_and_se, ReferenceSir, SURROGATE};
use nalgebra::{DMatrix, DVector};
use rdbpf::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    gating: bool,
    run: fn() -> Verdict,
}

fn oregonator(side: usize, sigma_x: f64, integrator: Integrator) -> Oregonator<f64> {
    let noise = NoiseModel {
        sigma_x,
        ..NoiseModel::default()
    };
    Oregonator::new(Lattice::new(side, 0.02).unwrap(), OregonatorParams::default(), &noise, integrator).unwrap()
}

fn c1_stencil() -> Verdict {
    let mut worst: f64 = 0.0;
    for side in 2..=8 {
        let lattice = Lattice::new(side, 0.7).unwrap();
        let dense = dense_laplacian(side, 0.7);
        if dense != dense.transpose() {
            return verdict(false, format!("dense operator not symmetric at side {side}"));
        }
        // Apply the library stencil to every unit vector and compare columns.
        let n = side * side;
        let mut assembled = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = lattice.laplacian(&e).unwrap();
            for i in 0..n {
                assembled[(i, j)] = col[i];
            }
        }
        worst = worst.max((&assembled - &dense).abs().max());
        if assembled != assembled.transpose() {
            return verdict(false, format!("stencil not symmetric at side {side}"));
        }
        if lattice.laplacian(&vec![3.25; n]).unwrap().iter().any(|&x| x != 0.0) {
            return verdict(false, format!("constant field not annihilated at side {side}"));
        }
    }
    verdict(worst <= 1e-12, format!("max |L - L_dense| = {worst:.1e} (tol 1e-12), symmetric, constants -> 0"))
}

fn c2_drift() -> Verdict {
    let m = oregonator(3, 1e-2, Integrator::Euler);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let v: Vec<f64> = (0..18)
            .map(|i| 0.02 + 0.5 * (((i * 31 + trial * 17) as f64) * 0.613).sin().abs())
            .collect();
        let x = StateField::new(*m.lattice(), 2, v, 0.0).unwrap();
        let got = m.drift(&x).unwrap();
        let want = brute_force_drift(&m.params, 3, 0.02, x.values());
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w.abs().max(f64::MIN_POSITIVE));
        }
    }
    verdict(worst <= 1e-12, format!("max relative error {worst:.1e} (tol 1e-12)"))
}

fn c3_steady_state() -> Verdict {
    let p = OregonatorParams::<f64>::default();
    let (z, z2) = p.steady_state().unwrap();
    let b = 1.0 - p.sigma - p.q;
    let oracle = (b + (b * b + 4.0 * p.q * (1.0 + p.sigma)).sqrt()) / 2.0;
    let (r1, r2) = p.reaction_rates(z, z2);
    let residual = r1.abs() + r2.abs();
    let m = oregonator(10, 0.0, Integrator::Euler);
    let x0 = m.steady_state_field().unwrap();
    let mut drift = 0.0f64;
    simulate_with(&m, &ObservationModel::oregonator_default(1e-5), &x0, 1000, 1, SimulationKeys::from_seed(1), |_, x, _| {
        drift = x.values().iter().fold(drift, |a, v| a.max((v - z).abs()));
        Ok(())
    })
    .unwrap();
    let pass = (z - oracle).abs() < 1e-14 && z == z2 && residual < 1e-10 && drift < 1e-9;
    verdict(
        pass,
        format!("z* = {z:.6} (oracle {oracle:.6}), residual {residual:.1e} (tol 1e-10), max deviation over 1000 steps {drift:.1e} (tol 1e-9)"),
    )
}

struct Lcg(u64);

impl Lcg {
    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        lo + (hi - lo) * ((self.0 >> 11) as f64 / (1u64 << 53) as f64)
    }
}

fn c4_conditioning() -> Verdict {
    let mut g = Lcg(2718);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let centres = [g.range(0.0, 50.0), g.range(0.0, 50.0)];
        let width = g.range(5.0, 60.0);
        let noise_var = 10f64.powf(g.range(-6.0, -1.0));
        let obs = ObservationModel::gaussian_bands(10, 0.0, 50.0, &centres, width, noise_var).unwrap();
        let f = [g.range(0.0, 1.0), g.range(0.0, 1.0)];
        let var = [10f64.powf(g.range(-8.0, -1.0)), 10f64.powf(g.range(-8.0, -1.0))];
        let y: Vec<f64> = (0..10).map(|_| g.range(-0.2, 1.2)).collect();
        let phi = DMatrix::from_fn(10, 2, |j, s| obs.phi(j, s));
        let (mean, cov, lp) = dense_conditioning(&phi, &f, &var, &y, noise_var);
        let got = optimal_site_moments(&obs, &f, &var, &y).unwrap();
        let cov_got = DMatrix::from_row_slice(2, 2, &got.covariance);
        let mean_err = DVector::from_vec(got.mean.clone()) - DVector::from_vec(mean);
        worst = worst
            .max(mean_err.abs().max())
            .max((cov_got - cov).abs().max())
            .max((got.log_predictive - lp).abs() / lp.abs().max(1.0));
    }
    verdict(worst <= 1e-10, format!("1000 random 2-species/10-wavelength sites, max error {worst:.1e} (tol 1e-10)"))
}

fn c5_sir_equivalence() -> Verdict {
    let m = oregonator(3, 1e-2, Integrator::Euler);
    let obs = ObservationModel::oregonator_default(1e-5);
    let mut x0 = m.steady_state_field().unwrap();
    x0.add_bump(2.0, 2.0, 1.0, 0.3);
    let data = simulate(&m, &obs, &x0, 100, 1, SimulationKeys::from_seed(55)).unwrap();
    let config = FilterConfig {
        n_particles: 64,
        block_side: 3,
        proposal: ProposalKind::Bootstrap,
        seed: 5,
        ..FilterConfig::default()
    };
    let mut bpf = BlockParticleFilter::new(&m, &obs, config, &InitialDistribution::Dirac(x0.clone())).unwrap();
    let mut sir = ReferenceSir::new(&m, &obs, 5, &x0, 64);
    for (k, y) in data.observations.iter().enumerate() {
        bpf.step(y).unwrap();
        sir.step(k as u64 + 1, y);
        if bpf.ensemble().weights()[0] != sir.weights {
            return verdict(false, format!("weights differ at step {}", k + 1));
        }
    }
    verdict(true, "3x3 grid, single block, N_p=64: weights bit-identical for 100 steps")
}

fn surrogate_data() -> Vec<ObservationField<f64>> {
    SURROGATE.data(31)
}

fn c6_evidence() -> Verdict {
    let s = SURROGATE;
    let (m, obs) = (s.model(), s.observation_model());
    let ys = surrogate_data();
    let exact = *s.kalman_log_evidence(&ys).last().unwrap();
    let estimates: Vec<f64> = (0..1000u64)
        .map(|seed| {
            let config = FilterConfig {
                n_particles: 256,
                block_side: 1,
                seed,
                ..FilterConfig::default()
            };
            let out = run_filter(&m, &obs, &ys, &config, &InitialDistribution::Dirac(s.initial())).unwrap();
            out.records.iter().map(|r| r.log_likelihood[0]).sum::<f64>()
        })
        .collect();
    let (mean, se) = mean_and_se(&estimates);
    let z = (mean - exact) / se;
    verdict(
        z.abs() <= 3.0,
        format!("mean log-evidence {mean:.5} vs exact {exact:.5}, SE {se:.1e}, |z| = {:.2} (tol 3)", z.abs()),
    )
}

fn c7_variance_dominance() -> Verdict {
    let s = SURROGATE;
    let (m, obs) = (s.model(), s.observation_model());
    let mut wins = 0;
    for rep in 0..100u64 {
        let ys = s.data(7_000 + rep);
        let config = FilterConfig {
            n_particles: 256,
            block_side: 1,
            seed: rep,
            ..FilterConfig::default()
        };
        let mut f = BlockParticleFilter::new(&m, &obs, config, &InitialDistribution::Dirac(s.initial())).unwrap();
        let (mut vo, mut vb) = (0.0, 0.0);
        for (k, y) in ys.iter().enumerate() {
            let step = k as u64 + 1;
            let (ens, _) = resample(f.ensemble(), ResamplingScheme::Multinomial, rep, step);
            let (_, lo) = propose_optimal(&m, &obs, ens.particles(), y, rep, step).unwrap();
            let pb = propose_bootstrap(&m, ens.particles(), rep, step).unwrap();
            let lb = bootstrap_log_weights(&obs, 1, &pb, y).unwrap();
            let site0 = |l: &SiteLogWeights<f64>| (0..256).map(|n| l.particle(n)[0]).collect::<Vec<_>>();
            vo += common::sample_variance(&site0(&lo));
            vb += common::sample_variance(&site0(&lb));
            f.step(y).unwrap();
        }
        if vo <= vb {
            wins += 1;
        }
    }
    verdict(wins >= 95, format!("optimal variance <= bootstrap in {wins}/100 replications (need >= 95)"))
}

struct PairResult {
    rmse_opt: Vec<f64>,
    rmse_std: f64,
    evidence_opt: f64,
    evidence_std: f64,
}

fn scaled_pair(i: u64) -> PairResult {
    let m = oregonator(50, 1e-2, Integrator::Euler);
    let obs = ObservationModel::oregonator_default(1e-5);
    let x0 = m.steady_state_field().unwrap();
    let init = InitialDistribution::Dirac(x0.clone());
    let config = |proposal| FilterConfig {
        n_particles: 64,
        block_side: 5,
        proposal,
        seed: 2_000 + i,
        ..FilterConfig::default()
    };
    let mut opt = BlockParticleFilter::new(&m, &obs, config(ProposalKind::Optimal), &init).unwrap();
    let mut std = BlockParticleFilter::new(&m, &obs, config(ProposalKind::Bootstrap), &init).unwrap();
    let mut rmse_opt = Vec::new();
    let mut rmse_std = 0.0;
    let (mut evidence_opt, mut evidence_std) = (0.0, 0.0);
    simulate_with(&m, &obs, &x0, 3000, 1, SimulationKeys::from_seed(1_000 + i), |_, _, y| {
        let a = opt.step(y)?;
        let b = std.step(y)?;
        rmse_opt.push(metrics::rmse_total(&a.rmse));
        rmse_std = metrics::rmse_total(&b.rmse);
        evidence_opt += a.log_likelihood.iter().sum::<f64>();
        evidence_std += b.log_likelihood.iter().sum::<f64>();
        Ok(())
    })
    .unwrap();
    PairResult {
        rmse_opt,
        rmse_std,
        evidence_opt,
        evidence_std,
    }
}

fn scaled_pairs() -> &'static [PairResult] {
    static PAIRS: std::sync::OnceLock<Vec<PairResult>> = std::sync::OnceLock::new();
    PAIRS.get_or_init(|| {
        (0..10)
            .map(|i| {
                let t = Instant::now();
                let r = scaled_pair(i);
                eprintln!(
                    "  pair {i}: final RMSE optimal {:.3} standard {:.3}; log-evidence optimal {:.4e} standard {:.4e} ({:.0} s)",
                    r.rmse_opt.last().unwrap(),
                    r.rmse_std,
                    r.evidence_opt,
                    r.evidence_std,
                    t.elapsed().as_secs_f64()
                );
                r
            })
            .collect()
    })
}

/// No monotone blow-up: finite everywhere and the second half of the trace
/// never exceeds twice the first half's maximum.
fn bounded(trace: &[f64]) -> bool {
    let half = trace.len() / 2;
    let first = trace[..half].iter().copied().fold(0.0, f64::max);
    let second = trace[half..].iter().copied().fold(0.0, f64::max);
    trace.iter().all(|v| v.is_finite()) && second <= 2.0 * first
}

fn c8_scaled_rmse() -> Verdict {
    let pairs = scaled_pairs();
    let wins = pairs.iter().filter(|p| *p.rmse_opt.last().unwrap() < p.rmse_std).count();
    let all_bounded = pairs.iter().all(|p| bounded(&p.rmse_opt));
    verdict(
        wins >= 9 && all_bounded,
        format!("optimal final RMSE lower in {wins}/10 pairs (need >= 9); optimal traces bounded: {all_bounded}"),
    )
}

fn c9_scaled_evidence() -> Verdict {
    let pairs = scaled_pairs();
    let wins = pairs.iter().filter(|p| p.evidence_opt > p.evidence_std).count();
    verdict(wins >= 9, format!("optimal final log-evidence higher in {wins}/10 pairs (need >= 9)"))
}

fn c10_full_scale() -> Verdict {
    let m = oregonator(100, 1e-2, Integrator::Euler);
    let obs = ObservationModel::oregonator_default(1e-5);
    let x0 = m.steady_state_field().unwrap();
    let config = FilterConfig {
        n_particles: 128,
        block_side: 5,
        seed: 10,
        ..FilterConfig::default()
    };
    let mut f = BlockParticleFilter::new(&m, &obs, config, &InitialDistribution::Dirac(x0.clone())).unwrap();
    let mut worst: f64 = 0.0;
    let res = simulate_with(&m, &obs, &x0, 100, 1, SimulationKeys::from_seed(10), |_, _, y| {
        f.step(y)?;
        worst = worst.max(f.ensemble().normalization_error());
        Ok(())
    });
    match res {
        Ok(()) => verdict(
            worst <= 1e-12 && f.ensemble().weights().len() == 400,
            format!("100x100, 400 blocks, N_p=128, t=1: max normalisation error {worst:.1e} (tol 1e-12)"),
        ),
        Err(e) => verdict(false, format!("numerical failure: {e}")),
    }
}

fn main() -> ExitCode {
    let full = std::env::var("RDBPF_ACCEPT_FULL").is_ok_and(|v| v == "1");
    let criteria = [
        Criterion { id: 1, name: "stencil correctness", budget: Duration::from_secs(1), gating: true, run: c1_stencil },
        Criterion { id: 2, name: "drift oracle", budget: Duration::from_secs(1), gating: true, run: c2_drift },
        Criterion { id: 3, name: "steady state", budget: Duration::from_secs(5), gating: true, run: c3_steady_state },
        Criterion { id: 4, name: "gaussian conditioning oracle", budget: Duration::from_secs(10), gating: true, run: c4_conditioning },
        Criterion { id: 5, name: "global-block SIR equivalence", budget: Duration::from_secs(10), gating: true, run: c5_sir_equivalence },
        Criterion { id: 6, name: "evidence exactness", budget: Duration::from_secs(120), gating: true, run: c6_evidence },
        Criterion { id: 7, name: "proposal-variance dominance", budget: Duration::from_secs(120), gating: true, run: c7_variance_dominance },
        Criterion { id: 8, name: "scaled RMSE reproduction", budget: Duration::from_secs(3600), gating: true, run: c8_scaled_rmse },
        Criterion { id: 9, name: "scaled log-evidence reproduction", budget: Duration::from_secs(3600), gating: true, run: c9_scaled_evidence },
        Criterion { id: 10, name: "full-scale smoke", budget: Duration::from_secs(3600), gating: false, run: c10_full_scale },
    ];
    let only: Option<Vec<u32>> = std::env::var("RDBPF_ACCEPT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        if c.id == 10 && !full && only.is_none() {
            println!("SKIP criterion 10 ({}): optional, set RDBPF_ACCEPT_FULL=1 to run", c.name);
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = v.pass && in_time;
        println!(
            "{} criterion {} ({}): {}; {:.2} s (budget {} s{})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            v.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_time { "" } else { ", exceeded" }
        );
        if !pass && c.gating {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} gating criteria failed");
        ExitCode::FAILURE
    }
}
