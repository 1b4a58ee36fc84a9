//! Block particle filter with bootstrap or locally optimal proposals.
//!
//! One filter step, for observation `k`:
//!
//! 1. resample every block independently from the previous weights,
//!    splicing the chosen ancestors' block sections into new particles;
//! 2. propose new particles (from the transition, or from the Gaussian
//!    conditional `X_k | X_{k-1}, Y_k`);
//! 3. weight each block by the product of its site likelihoods and
//!    normalise within the block;
//! 4. record the block-wise weighted mean, per-block log-likelihood
//!    increments, ESS and output-space error.
//!
//! All random draws come from counter-based streams keyed by the filter
//! seed, so results do not depend on thread count or iteration order.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{finish_state, propagate, ObservationField, ObservationModel, StateField, StateSpaceModel};
use crate::error::{check_len, Error, Result};
use crate::lattice::{BlockPartition, Lattice};
use crate::metrics::{self, MetricTrace};
use crate::rng::{Domain, StreamKey};
use crate::scalar::Real;

/// Importance distribution used to move particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// Sample from the transition and weight by the observation density.
    #[serde(alias = "standard")]
    Bootstrap,
    /// Sample from `X_k | X_{k-1}, Y_k` and weight by `p(Y_k | X_{k-1})`.
    #[default]
    Optimal,
}

impl FromStr for ProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" | "standard" => Ok(ProposalKind::Bootstrap),
            "optimal" => Ok(ProposalKind::Optimal),
            other => Err(Error::usage(format!(
                "unknown proposal '{other}' (expected bootstrap|standard|optimal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Systematic,
}

impl FromStr for ResamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(ResamplingScheme::Multinomial),
            "systematic" => Ok(ResamplingScheme::Systematic),
            other => Err(Error::usage(format!(
                "unknown resampling scheme '{other}' (expected multinomial|systematic)"
            ))),
        }
    }
}

/// Distribution the initial ensemble is drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution<T> {
    /// Every particle equals the given state.
    Dirac(StateField<T>),
    /// Independent log-normal perturbations `x · exp(s ξ − s²/2)` of every
    /// component, which keep positive states positive and preserve the mean.
    LogNormal { center: StateField<T>, rel_std: T },
}

impl<T: Real> InitialDistribution<T> {
    fn center(&self) -> &StateField<T> {
        match self {
            InitialDistribution::Dirac(c) => c,
            InitialDistribution::LogNormal { center, .. } => center,
        }
    }
}

/// Which per-step estimates a run keeps in memory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum EstimateRecording {
    #[default]
    None,
    All,
    /// Observation indices (1-based) to keep.
    Steps(Vec<u64>),
}

impl EstimateRecording {
    fn wants(&self, k: u64) -> bool {
        match self {
            EstimateRecording::None => false,
            EstimateRecording::All => true,
            EstimateRecording::Steps(s) => s.contains(&k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub block_side: usize,
    pub proposal: ProposalKind,
    pub resampling: ResamplingScheme,
    pub seed: u64,
    /// Dynamics steps between consecutive observations.
    pub stride: u64,
    pub record_estimates: EstimateRecording,
    pub record_weights: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 128,
            block_side: 5,
            proposal: ProposalKind::Optimal,
            resampling: ResamplingScheme::Multinomial,
            seed: 0,
            stride: 1,
            record_estimates: EstimateRecording::None,
            record_weights: false,
        }
    }
}

/// `N_p` particles with one normalised weight vector per block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<T> {
    lattice: Lattice<T>,
    n_species: usize,
    particles: Vec<Vec<T>>,
    /// `weights[block][particle]`.
    weights: Vec<Vec<T>>,
    partition: BlockPartition,
    pub time: T,
}

impl<T: Real> ParticleEnsemble<T> {
    pub fn from_particles(
        particles: Vec<StateField<T>>,
        partition: BlockPartition,
    ) -> Result<Self> {
        let first = particles
            .first()
            .ok_or_else(|| Error::usage("an ensemble needs at least one particle"))?;
        let lattice = *first.lattice();
        let n_species = first.n_species();
        let time = first.time;
        check_len("partition sites", lattice.n_sites(), partition.side() * partition.side())?;
        let n_p = particles.len();
        let mut raw = Vec::with_capacity(n_p);
        for p in particles {
            check_len("particle state", n_species * lattice.n_sites(), p.values().len())?;
            raw.push(p.into_values());
        }
        let w = T::one() / T::of(n_p as f64);
        Ok(ParticleEnsemble {
            lattice,
            n_species,
            particles: raw,
            weights: vec![vec![w; n_p]; partition.n_blocks()],
            partition,
            time,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    /// Species-major state vector of each particle.
    pub fn particles(&self) -> &[Vec<T>] {
        &self.particles
    }

    pub fn particle(&self, n: usize) -> StateField<T> {
        StateField::new(self.lattice, self.n_species, self.particles[n].clone(), self.time)
            .expect("particle length is an ensemble invariant")
    }

    /// `weights()[block][particle]`.
    pub fn weights(&self) -> &[Vec<T>] {
        &self.weights
    }

    /// Largest `|Σₙ w − 1|` over blocks.
    pub fn normalization_error(&self) -> T {
        self.weights
            .iter()
            .map(|w| (w.iter().copied().sum::<T>() - T::one()).abs())
            .fold(T::zero(), T::max)
    }

    /// Block-wise weighted mean `X̂^{(V_b)} = Σₙ w^{(V_b,n)} X^{(V_b,n)}`.
    pub fn estimate(&self) -> StateField<T> {
        let n = self.lattice.n_sites();
        let mut out = vec![T::zero(); self.n_species * n];
        for (b, sites) in self.partition.blocks().iter().enumerate() {
            for (x, &w) in self.particles.iter().zip(&self.weights[b]) {
                if w == T::zero() {
                    continue;
                }
                for s in 0..self.n_species {
                    let off = s * n;
                    for &v in sites {
                        out[off + v] += w * x[off + v];
                    }
                }
            }
        }
        StateField::new(self.lattice, self.n_species, out, self.time)
            .expect("estimate has state length")
    }
}

/// Draws `N_p` particles from `initial` with uniform block weights.
pub fn init_ensemble<T: Real>(
    n_particles: usize,
    initial: &InitialDistribution<T>,
    partition: BlockPartition,
    seed: u64,
) -> Result<ParticleEnsemble<T>> {
    if n_particles == 0 {
        return Err(Error::usage("n_particles must be >= 1"));
    }
    let center = initial.center();
    let particles = (0..n_particles)
        .map(|n| match initial {
            InitialDistribution::Dirac(c) => c.clone(),
            InitialDistribution::LogNormal { center, rel_std } => {
                let mut p = center.clone();
                let mut xi = vec![0.0; p.values().len()];
                StreamKey::new(seed, Domain::Initial, n as u64).fill_normals(0, &mut xi);
                let half_var = *rel_std * *rel_std * T::of(0.5);
                for (v, &e) in p.values_mut().iter_mut().zip(&xi) {
                    *v = *v * (*rel_std * T::of(e) - half_var).exp();
                }
                p
            }
        })
        .collect();
    let _ = center;
    ParticleEnsemble::from_particles(particles, partition)
}

/// Ancestor indices for one weight vector.
///
/// Multinomial: `N` independent uniforms `uᵢ` (uniform `i` of the stream),
/// ancestor `i` is the first `j` with `uᵢ < Σ_{m≤j} w_m`, the running sum
/// accumulated in index order; uniforms beyond the last partial sum pick
/// the last particle with positive weight. Systematic: one uniform `U`,
/// points `(i + U)/N`, same inversion.
pub fn draw_ancestors<T: Real>(
    weights: &[T],
    scheme: ResamplingScheme,
    key: StreamKey,
    step: u64,
    out: &mut [usize],
) {
    let n = out.len();
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = T::zero();
    for &w in weights {
        acc += w;
        cum.push(acc);
    }
    let last_positive = weights
        .iter()
        .rposition(|&w| w > T::zero())
        .unwrap_or(weights.len() - 1);
    let pick = |u: T| -> usize {
        let j = cum.partition_point(|&c| c <= u);
        j.min(last_positive)
    };
    match scheme {
        ResamplingScheme::Multinomial => {
            let mut u = vec![0.0; n];
            key.fill_uniforms(step, 0, &mut u);
            for (o, &ui) in out.iter_mut().zip(&u) {
                *o = pick(T::of(ui));
            }
        }
        ResamplingScheme::Systematic => {
            let mut u0 = [0.0];
            key.fill_uniforms(step, 0, &mut u0);
            let inv_n = 1.0 / n as f64;
            for (i, o) in out.iter_mut().enumerate() {
                *o = pick(T::of((i as f64 + u0[0]) * inv_n));
            }
        }
    }
}

/// Per-block resampling; block `b` draws from stream lane `b`.
/// Returns the new ensemble (uniform weights) and `ancestors[block][n]`.
pub fn resample<T: Real>(
    ensemble: &ParticleEnsemble<T>,
    scheme: ResamplingScheme,
    seed: u64,
    step: u64,
) -> (ParticleEnsemble<T>, Vec<Vec<usize>>) {
    let n_p = ensemble.n_particles();
    let n = ensemble.lattice.n_sites();
    let key = StreamKey::new(seed, Domain::Resample, 0);
    let ancestors: Vec<Vec<usize>> = ensemble
        .weights
        .par_iter()
        .enumerate()
        .map(|(b, w)| {
            let mut a = vec![0; n_p];
            draw_ancestors(w, scheme, key.with_lane(b as u64), step, &mut a);
            a
        })
        .collect();
    let mut particles = ensemble.particles.clone();
    for (b, sites) in ensemble.partition.blocks().iter().enumerate() {
        for (dst, &a) in particles.iter_mut().zip(&ancestors[b]) {
            let src = &ensemble.particles[a];
            for s in 0..ensemble.n_species {
                let off = s * n;
                for &v in sites {
                    dst[off + v] = src[off + v];
                }
            }
        }
    }
    let w = T::one() / T::of(n_p as f64);
    let out = ParticleEnsemble {
        lattice: ensemble.lattice,
        n_species: ensemble.n_species,
        particles,
        weights: vec![vec![w; n_p]; ensemble.partition.n_blocks()],
        partition: ensemble.partition.clone(),
        time: ensemble.time,
    };
    (out, ancestors)
}

fn transition_key(seed: u64, particle: usize) -> StreamKey {
    StreamKey::new(seed, Domain::Transition, particle as u64)
}

/// Advances every particle by one transition; particle `n` uses transition
/// lane `n`.
pub fn propose_bootstrap<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    particles: &[Vec<T>],
    seed: u64,
    step: u64,
) -> Result<Vec<Vec<T>>> {
    particles
        .par_iter()
        .enumerate()
        .map(|(n, x)| {
            let mut out = vec![T::zero(); x.len()];
            propagate(model, x, transition_key(seed, n), step, &mut out)?;
            Ok(out)
        })
        .collect()
}

/// Per-particle, per-site log incremental weights, `values[n * n_sites + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteLogWeights<T> {
    n_sites: usize,
    values: Vec<T>,
}

impl<T: Real> SiteLogWeights<T> {
    pub fn new(n_particles: usize, n_sites: usize, values: Vec<T>) -> Result<Self> {
        check_len("site log-weights", n_particles * n_sites, values.len())?;
        Ok(SiteLogWeights { n_sites, values })
    }

    pub fn n_particles(&self) -> usize {
        self.values.len() / self.n_sites
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn particle(&self, n: usize) -> &[T] {
        &self.values[n * self.n_sites..(n + 1) * self.n_sites]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Local observation densities `ln N(y_v; Φ x̃_v, σ_y² I)` of proposed
/// particles.
pub fn bootstrap_log_weights<T: Real>(
    obs: &ObservationModel<T>,
    n_species: usize,
    proposed: &[Vec<T>],
    y: &ObservationField<T>,
) -> Result<SiteLogWeights<T>> {
    let n = y.n_sites();
    check_len("observation wavelengths", obs.n_wavelengths(), y.n_wavelengths())?;
    check_len("observation species", obs.n_species(), n_species)?;
    let rows: Vec<Vec<T>> = proposed
        .par_iter()
        .enumerate()
        .map(|(p, x)| {
            check_len("particle state", n_species * n, x.len())?;
            let mut z = vec![T::zero(); n_species];
            let mut row = Vec::with_capacity(n);
            for v in 0..n {
                for (s, zs) in z.iter_mut().enumerate() {
                    *zs = x[s * n + v];
                }
                let l = obs.site_log_density(&z, y.site(v));
                if !l.is_finite() {
                    return Err(Error::NonFiniteWeight { site: v, particle: p });
                }
                row.push(l);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    SiteLogWeights::new(proposed.len(), n, rows.concat())
}

/// Gaussian conditioning of `X ~ N(f, diag(var))` on `Y = Φ X + e`,
/// `e ~ N(0, σ_y² I)`, at a single site.
///
/// With `S = diag(√var)`, `A = Φᵀ Φ / σ_y²` and `K = I + S A S = L Lᵀ`:
///
/// ```text
/// Σ_opt   = S K⁻¹ S                       = (Σ_B⁻¹ + Φᵀ Σ_y⁻¹ Φ)⁻¹
/// M_opt   = f + Σ_opt Φᵀ (y − Φ f) / σ_y²  = Σ_opt (Σ_B⁻¹ f + Φᵀ Σ_y⁻¹ y)
/// ln p(y) = ln N(y; Φ f, Φ Σ_B Φᵀ + σ_y² I)
/// ```
///
/// The `S`-scaled forms stay finite when some variances vanish.
struct SiteConditioner<T> {
    ns: usize,
    nl: usize,
    phi: Vec<T>,
    a: Vec<T>,
    inv_var: T,
    log_norm: T,
}

struct ConditionScratch<T> {
    s: Vec<T>,
    r: Vec<T>,
    c: Vec<T>,
    w: Vec<T>,
    l: Vec<T>,
    mean: Vec<T>,
}

impl<T: Real> ConditionScratch<T> {
    fn new(ns: usize, nl: usize) -> Self {
        ConditionScratch {
            s: vec![T::zero(); ns],
            r: vec![T::zero(); nl],
            c: vec![T::zero(); ns],
            w: vec![T::zero(); ns],
            l: vec![T::zero(); ns * ns],
            mean: vec![T::zero(); ns],
        }
    }
}

impl<T: Real> SiteConditioner<T> {
    fn new(obs: &ObservationModel<T>) -> Self {
        let ns = obs.n_species();
        let nl = obs.n_wavelengths();
        let inv_var = obs.noise_var().recip();
        let mut a = vec![T::zero(); ns * ns];
        for i in 0..ns {
            for j in 0..ns {
                a[i * ns + j] = (0..nl).map(|k| obs.phi(k, i) * obs.phi(k, j)).sum::<T>() * inv_var;
            }
        }
        let log_norm = -T::of(0.5) * T::of(nl as f64) * (T::TAU() * obs.noise_var()).ln();
        SiteConditioner {
            ns,
            nl,
            phi: obs.response().to_vec(),
            a,
            inv_var,
            log_norm,
        }
    }

    /// Fills `sc.mean` and the Cholesky factor `sc.l`; returns `ln p(y)`.
    fn condition(&self, f: &[T], var: &[T], y: &[T], sc: &mut ConditionScratch<T>) -> T {
        let (ns, nl) = (self.ns, self.nl);
        for i in 0..ns {
            sc.s[i] = var[i].max(T::zero()).sqrt();
        }
        let mut rr = T::zero();
        for j in 0..nl {
            let row = &self.phi[j * ns..(j + 1) * ns];
            let mut m = T::zero();
            for i in 0..ns {
                m += row[i] * f[i];
            }
            let r = y[j] - m;
            sc.r[j] = r;
            rr += r * r;
        }
        // c = S Φᵀ r / σ²
        for i in 0..ns {
            let mut b = T::zero();
            for j in 0..nl {
                b += self.phi[j * ns + i] * sc.r[j];
            }
            sc.c[i] = sc.s[i] * b * self.inv_var;
        }
        // K = I + S A S, factorised in place (lower triangle).
        for i in 0..ns {
            for j in 0..=i {
                let mut k = sc.s[i] * self.a[i * ns + j] * sc.s[j];
                if i == j {
                    k += T::one();
                }
                for m in 0..j {
                    k -= sc.l[i * ns + m] * sc.l[j * ns + m];
                }
                sc.l[i * ns + j] = if i == j { k.sqrt() } else { k / sc.l[j * ns + j] };
            }
        }
        // w = L⁻¹ c
        let mut log_diag = T::zero();
        for i in 0..ns {
            let mut v = sc.c[i];
            for m in 0..i {
                v -= sc.l[i * ns + m] * sc.w[m];
            }
            let d = sc.l[i * ns + i];
            sc.w[i] = v / d;
            log_diag += d.ln();
        }
        let quad = rr * self.inv_var - sc.w.iter().map(|&w| w * w).sum::<T>();
        // mean = f + S L⁻ᵀ w
        back_substitute(&sc.l, ns, &mut sc.w);
        for i in 0..ns {
            sc.mean[i] = f[i] + sc.s[i] * sc.w[i];
        }
        self.log_norm - log_diag - T::of(0.5) * quad
    }

    /// `out = mean + S L⁻ᵀ ξ`, a draw from `N(M_opt, Σ_opt)`.
    fn sample(&self, sc: &mut ConditionScratch<T>, xi: &[T], out: &mut [T]) {
        let ns = self.ns;
        sc.w[..ns].copy_from_slice(&xi[..ns]);
        back_substitute(&sc.l, ns, &mut sc.w);
        for i in 0..ns {
            out[i] = sc.mean[i] + sc.s[i] * sc.w[i];
        }
    }
}

/// Solves `Lᵀ x = v` in place for lower-triangular `L` (row-major).
fn back_substitute<T: Real>(l: &[T], n: usize, v: &mut [T]) {
    for i in (0..n).rev() {
        let mut x = v[i];
        for m in i + 1..n {
            x -= l[m * n + i] * v[m];
        }
        v[i] = x / l[i * n + i];
    }
}

/// Moments of the locally optimal proposal at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMoments<T> {
    pub mean: Vec<T>,
    /// `N_S × N_S`, row-major.
    pub covariance: Vec<T>,
    /// `ln N(y; Φ f, Φ Σ_B Φᵀ + σ_y² I)`.
    pub log_predictive: T,
}

/// Conditional mean, covariance and predictive log-density for prior mean
/// `flow`, prior variances `variance` (diagonal `Σ_B`) and spectrum `y`.
pub fn optimal_site_moments<T: Real>(
    obs: &ObservationModel<T>,
    flow: &[T],
    variance: &[T],
    y: &[T],
) -> Result<SiteMoments<T>> {
    let ns = obs.n_species();
    check_len("site flow", ns, flow.len())?;
    check_len("site variance", ns, variance.len())?;
    check_len("site spectrum", obs.n_wavelengths(), y.len())?;
    let cond = SiteConditioner::new(obs);
    let mut sc = ConditionScratch::new(ns, obs.n_wavelengths());
    let log_predictive = cond.condition(flow, variance, y, &mut sc);
    // Σ_opt = S K⁻¹ S, column by column.
    let mut cov = vec![T::zero(); ns * ns];
    let mut col = vec![T::zero(); ns];
    for j in 0..ns {
        col.iter_mut().for_each(|c| *c = T::zero());
        col[j] = T::one();
        for i in 0..ns {
            let mut v = col[i];
            for m in 0..i {
                v -= sc.l[i * ns + m] * col[m];
            }
            col[i] = v / sc.l[i * ns + i];
        }
        back_substitute(&sc.l, ns, &mut col);
        for i in 0..ns {
            cov[i * ns + j] = sc.s[i] * col[i] * sc.s[j];
        }
    }
    Ok(SiteMoments {
        mean: sc.mean.clone(),
        covariance: cov,
        log_predictive,
    })
}

/// Draws every site of every particle from the locally optimal proposal and
/// returns the per-site log predictive densities as incremental log-weights.
///
/// The prior at site `v` is `N(F(x)_v, Δt g(x_v)²)` with `x` the parent;
/// noise `ξ` is the transition stream of the particle, indexed by the
/// species-major component.
pub fn propose_optimal<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    obs: &ObservationModel<T>,
    particles: &[Vec<T>],
    y: &ObservationField<T>,
    seed: u64,
    step: u64,
) -> Result<(Vec<Vec<T>>, SiteLogWeights<T>)> {
    let n = model.lattice().n_sites();
    let ns = model.n_species();
    check_len("observation species", ns, obs.n_species())?;
    check_len("observation sites", n, y.n_sites())?;
    check_len("observation wavelengths", obs.n_wavelengths(), y.n_wavelengths())?;
    let cond = SiteConditioner::new(obs);
    let rows: Vec<(Vec<T>, Vec<T>)> = particles
        .par_iter()
        .enumerate()
        .map(|(p, x)| {
            check_len("particle state", ns * n, x.len())?;
            let mut out = vec![T::zero(); x.len()];
            model.flow(x, &mut out)?;
            let mut xi = vec![0.0; x.len()];
            transition_key(seed, p).fill_normals(step, &mut xi);
            let mut sc = ConditionScratch::new(ns, obs.n_wavelengths());
            let (mut f, mut var, mut e, mut draw) =
                (vec![T::zero(); ns], vec![T::zero(); ns], vec![T::zero(); ns], vec![T::zero(); ns]);
            let mut logw = Vec::with_capacity(n);
            for v in 0..n {
                for s in 0..ns {
                    let i = s * n + v;
                    f[s] = out[i];
                    var[s] = model.transition_variance(x[i]);
                    e[s] = T::of(xi[i]);
                }
                let l = cond.condition(&f, &var, y.site(v), &mut sc);
                if !l.is_finite() {
                    return Err(Error::NonFiniteWeight { site: v, particle: p });
                }
                logw.push(l);
                cond.sample(&mut sc, &e, &mut draw);
                for s in 0..ns {
                    out[s * n + v] = draw[s];
                }
            }
            finish_state(model, &mut out)?;
            Ok((out, logw))
        })
        .collect::<Result<_>>()?;
    let mut proposed = Vec::with_capacity(rows.len());
    let mut logw = Vec::with_capacity(rows.len() * n);
    for (x, l) in rows {
        proposed.push(x);
        logw.extend_from_slice(&l);
    }
    let logw = SiteLogWeights::new(proposed.len(), n, logw)?;
    Ok((proposed, logw))
}

/// Normalised block weights and their log-likelihood increments.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    /// `weights[block][particle]`, each row summing to one.
    pub weights: Vec<Vec<T>>,
    /// `ln( N_p⁻¹ Σₙ Π_{v∈V_b} lᵛₙ )` per block.
    pub log_likelihood: Vec<T>,
}

/// Sums site log-weights over each block and normalises within the block,
/// shifting by the block maximum before exponentiating.
pub fn block_weights<T: Real>(
    partition: &BlockPartition,
    site_log_weights: &SiteLogWeights<T>,
) -> Result<BlockWeights<T>> {
    check_len(
        "site log-weights per particle",
        partition.side() * partition.side(),
        site_log_weights.n_sites(),
    )?;
    let n_p = site_log_weights.n_particles();
    let log_np = T::of(n_p as f64).ln();
    let rows: Vec<(Vec<T>, T)> = partition
        .blocks()
        .par_iter()
        .enumerate()
        .map(|(b, sites)| {
            let logw: Vec<T> = (0..n_p)
                .map(|n| {
                    let row = site_log_weights.particle(n);
                    let mut acc = T::zero();
                    for &v in sites {
                        acc += row[v];
                    }
                    acc
                })
                .collect();
            let max = logw.iter().copied().fold(T::neg_infinity(), T::max);
            if !max.is_finite() {
                return Err(Error::DegenerateBlock { block: b });
            }
            let mut w: Vec<T> = logw.iter().map(|&l| (l - max).exp()).collect();
            let total: T = w.iter().copied().sum();
            let inv = total.recip();
            w.iter_mut().for_each(|x| *x *= inv);
            Ok((w, max + total.ln() - log_np))
        })
        .collect::<Result<_>>()?;
    let (weights, log_likelihood) = rows.into_iter().unzip();
    Ok(BlockWeights {
        weights,
        log_likelihood,
    })
}

/// What one filter step reports.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStepRecord<T> {
    /// Observation index, starting at 1.
    pub step: u64,
    /// Dynamics step index of the observation.
    pub dynamics_step: u64,
    pub time: T,
    pub log_likelihood: Vec<T>,
    pub ess: Vec<T>,
    /// Output-space error `‖Φ X̂ − y‖₂` per block.
    pub rmse: Vec<T>,
    pub estimate: Option<StateField<T>>,
    pub weights: Option<Vec<Vec<T>>>,
    /// Blocks whose ESS fell to one (only reported for `N_p > 1`).
    pub degenerate_blocks: Vec<usize>,
}

/// Per-block output-space errors of an estimate.
pub fn block_rmse<T: Real>(
    obs: &ObservationModel<T>,
    partition: &BlockPartition,
    estimate: &StateField<T>,
    y: &ObservationField<T>,
) -> Result<Vec<T>> {
    let predicted = obs.mean(estimate)?;
    check_len("observation vector", predicted.values().len(), y.values().len())?;
    partition
        .blocks()
        .iter()
        .map(|sites| {
            let mut p = Vec::with_capacity(sites.len() * y.n_wavelengths());
            let mut o = Vec::with_capacity(p.capacity());
            for &v in sites {
                p.extend_from_slice(predicted.site(v));
                o.extend_from_slice(y.site(v));
            }
            metrics::rmse_block(&p, &o)
        })
        .collect()
}

/// One iteration: resample, move, weight, record.
///
/// `k` is the 1-based observation index; the observation sits at dynamics
/// step `k · stride`, and the `stride − 1` preceding transitions are drawn
/// from the dynamics.
pub fn filter_step<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    obs: &ObservationModel<T>,
    ensemble: &ParticleEnsemble<T>,
    y: &ObservationField<T>,
    config: &FilterConfig,
    k: u64,
) -> Result<(ParticleEnsemble<T>, FilterStepRecord<T>)> {
    if config.stride == 0 {
        return Err(Error::usage("observation stride must be >= 1"));
    }
    let last = k * config.stride;
    let (mut ens, _) = resample(ensemble, config.resampling, config.seed, k);
    let mut particles = std::mem::take(&mut ens.particles);
    for d in (last + 1 - config.stride)..last {
        particles = propose_bootstrap(model, &particles, config.seed, d)?;
    }
    let (proposed, logw) = match config.proposal {
        ProposalKind::Bootstrap => {
            let p = propose_bootstrap(model, &particles, config.seed, last)?;
            let l = bootstrap_log_weights(obs, ens.n_species, &p, y)?;
            (p, l)
        }
        ProposalKind::Optimal => propose_optimal(model, obs, &particles, y, config.seed, last)?,
    };
    let bw = block_weights(&ens.partition, &logw)?;
    ens.particles = proposed;
    ens.weights = bw.weights;
    ens.time = T::of(last as f64) * model.dt();

    let n_p = ens.n_particles();
    let ess = ens
        .weights
        .iter()
        .map(|w| metrics::effective_sample_size(w))
        .collect::<Result<Vec<T>>>()?;
    let degenerate_blocks = if n_p > 1 {
        let floor = T::of(1.0 + 1e-9);
        ess.iter().enumerate().filter(|(_, e)| **e < floor).map(|(b, _)| b).collect()
    } else {
        Vec::new()
    };
    let estimate = ens.estimate();
    let rmse = block_rmse(obs, &ens.partition, &estimate, y)?;
    let record = FilterStepRecord {
        step: k,
        dynamics_step: last,
        time: ens.time,
        log_likelihood: bw.log_likelihood,
        ess,
        rmse,
        estimate: config.record_estimates.wants(k).then_some(estimate),
        weights: config.record_weights.then(|| ens.weights.clone()),
        degenerate_blocks,
    };
    Ok((ens, record))
}

/// Stateful driver for streaming observations through the filter.
pub struct BlockParticleFilter<'a, T, M> {
    model: &'a M,
    obs: &'a ObservationModel<T>,
    config: FilterConfig,
    ensemble: ParticleEnsemble<T>,
    k: u64,
}

impl<'a, T: Real, M: StateSpaceModel<T>> BlockParticleFilter<'a, T, M> {
    pub fn new(
        model: &'a M,
        obs: &'a ObservationModel<T>,
        config: FilterConfig,
        initial: &InitialDistribution<T>,
    ) -> Result<Self> {
        if config.stride == 0 {
            return Err(Error::usage("observation stride must be >= 1"));
        }
        check_len("observation species", model.n_species(), obs.n_species())?;
        check_len("initial state", model.state_len(), initial.center().values().len())?;
        let partition = model.lattice().make_partition(config.block_side)?;
        let ensemble = init_ensemble(config.n_particles, initial, partition, config.seed)?;
        Ok(BlockParticleFilter {
            model,
            obs,
            config,
            ensemble,
            k: 0,
        })
    }

    pub fn ensemble(&self) -> &ParticleEnsemble<T> {
        &self.ensemble
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    /// Number of observations assimilated so far.
    pub fn steps_done(&self) -> u64 {
        self.k
    }

    pub fn step(&mut self, y: &ObservationField<T>) -> Result<FilterStepRecord<T>> {
        let k = self.k + 1;
        let (ens, rec) = filter_step(self.model, self.obs, &self.ensemble, y, &self.config, k)?;
        self.ensemble = ens;
        self.k = k;
        Ok(rec)
    }
}

/// Records of a whole run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutput<T> {
    pub records: Vec<FilterStepRecord<T>>,
}

impl<T: Real> FilterOutput<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn metrics(&self) -> MetricTrace<T> {
        let mut t = MetricTrace::default();
        for r in &self.records {
            t.push(r.step, r.time, r.rmse.clone(), r.log_likelihood.clone(), r.ess.clone());
        }
        t
    }

    /// Cumulative log-evidence after each step.
    pub fn log_evidence(&self) -> Result<Vec<T>> {
        metrics::log_evidence_trace(
            &self.records.iter().map(|r| r.log_likelihood.clone()).collect::<Vec<_>>(),
        )
    }

    pub fn total_log_evidence(&self) -> Result<T> {
        Ok(self.log_evidence()?.last().copied().unwrap_or_else(T::zero))
    }

    pub fn rmse_total(&self) -> Vec<T> {
        self.records.iter().map(|r| metrics::rmse_total(&r.rmse)).collect()
    }

    /// CSV with header `step,block,log_likelihood,ess`.
    pub fn write_block_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,block,log_likelihood,ess")?;
        for r in &self.records {
            for (b, (l, e)) in r.log_likelihood.iter().zip(&r.ess).enumerate() {
                writeln!(w, "{},{b},{l:e},{e:e}", r.step)?;
            }
        }
        Ok(())
    }
}

/// A run that stopped on a numerical failure: the error, the records up to
/// the last good step and the ensemble at that step.
#[derive(Debug)]
pub struct RunFailure<T> {
    pub error: Error,
    pub partial: FilterOutput<T>,
    pub checkpoint: ParticleEnsemble<T>,
}

/// Filters a whole observation sequence.
pub fn run_filter<T: Real, M: StateSpaceModel<T>>(
    model: &M,
    obs: &ObservationModel<T>,
    observations: &[ObservationField<T>],
    config: &FilterConfig,
    initial: &InitialDistribution<T>,
) -> std::result::Result<FilterOutput<T>, Box<RunFailure<T>>> {
    let mut filter = BlockParticleFilter::new(model, obs, config.clone(), initial).map_err(|error| {
        Box::new(RunFailure {
            error,
            partial: FilterOutput::default(),
            checkpoint: ParticleEnsemble {
                lattice: *model.lattice(),
                n_species: model.n_species(),
                particles: Vec::new(),
                weights: Vec::new(),
                partition: BlockPartition::new(2, 1).expect("trivial partition"),
                time: T::zero(),
            },
        })
    })?;
    let mut out = FilterOutput {
        records: Vec::with_capacity(observations.len()),
    };
    for y in observations {
        match filter.step(y) {
            Ok(r) => out.records.push(r),
            Err(error) => {
                return Err(Box::new(RunFailure {
                    error,
                    partial: out,
                    checkpoint: filter.ensemble,
                }))
            }
        }
    }
    Ok(out)
}
