//! Discrete-time stochastic dynamics and the spectral observation operator.
//!
//! One transition is
//!
//! ```text
//! X_k = F(X_{k-1}) + g(X_{k-1}) ΔB_k,   ΔB_k ~ N(0, Δt I)
//! ```
//!
//! with `F` a deterministic integrator over one `Δt` and `g` diagonal. The
//! gain is evaluated at `X_{k-1}` only (zero-order hold). Measurements are
//! `Y_k = H X_k + e_k` with `H = [I ⊗ Φ₁ ⋯ I ⊗ Φ_S]`, so an observation field
//! is stored pixel-major: the `N_Λ` spectrum of site 0, then of site 1, …

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lattice::{Lattice, ScalarField};
use crate::reaction::OregonatorParams;
use crate::rng::StreamKey;
use crate::scalar::Real;

/// Default lower bound applied to every concentration after a step.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Concentrations of every species at every site at one instant,
/// species-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField<T> {
    lattice: Lattice<T>,
    n_species: usize,
    values: Vec<T>,
    pub time: T,
}

impl<T: Real> StateField<T> {
    pub fn new(lattice: Lattice<T>, n_species: usize, values: Vec<T>, time: T) -> Result<Self> {
        check_len("state vector", n_species * lattice.n_sites(), values.len())?;
        Ok(StateField {
            lattice,
            n_species,
            values,
            time,
        })
    }

    /// Spatially uniform state with one value per species.
    pub fn homogeneous(lattice: Lattice<T>, per_species: &[T]) -> Self {
        let n = lattice.n_sites();
        let values = per_species
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        StateField {
            lattice,
            n_species: per_species.len(),
            values,
            time: T::zero(),
        }
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.n_sites()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Field of one species (0-based).
    pub fn species(&self, s: usize) -> &[T] {
        let n = self.n_sites();
        &self.values[s * n..(s + 1) * n]
    }

    pub fn species_mut(&mut self, s: usize) -> &mut [T] {
        let n = self.n_sites();
        &mut self.values[s * n..(s + 1) * n]
    }

    pub fn species_field(&self, s: usize) -> ScalarField<T> {
        ScalarField(self.species(s).to_vec())
    }

    /// Concentrations of all species at one flat site index.
    pub fn site_values(&self, site: usize, out: &mut [T]) {
        let n = self.n_sites();
        for (s, o) in out.iter_mut().enumerate().take(self.n_species) {
            *o = self.values[s * n + site];
        }
    }

    /// Adds a Gaussian bump of height `amplitude · base` to species 0,
    /// centred on `(row, col)` (1-based, fractional allowed) with standard
    /// deviation `width` in grid units.
    pub fn add_bump(&mut self, row: T, col: T, width: T, amplitude: T) {
        let side = self.lattice.side();
        let two_w2 = T::of(2.0) * width * width;
        for r in 0..side {
            for c in 0..side {
                let dr = T::of((r + 1) as f64) - row;
                let dc = T::of((c + 1) as f64) - col;
                let g = (-(dr * dr + dc * dc) / two_w2).exp();
                let v = &mut self.values[r * side + c];
                *v += *v * amplitude * g;
            }
        }
    }
}

/// Driving- and measurement-noise settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel<T> {
    /// Multiplier of the diagonal state-noise gain `g(X) = σ_x diag(X)`.
    pub sigma_x: T,
    /// Measurement noise variance.
    pub sigma_y2: T,
    pub dt: T,
}

impl<T: Real> Default for NoiseModel<T> {
    fn default() -> Self {
        NoiseModel {
            sigma_x: T::of(1e-2),
            sigma_y2: T::of(1e-5),
            dt: T::of(0.01),
        }
    }
}

impl<T: Real> NoiseModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x >= T::zero()) || !self.sigma_x.is_finite() {
            return Err(Error::usage("sigma_x must be finite and >= 0"));
        }
        if !(self.sigma_y2 > T::zero()) || !self.sigma_y2.is_finite() {
            return Err(Error::usage("sigma_y2 must be finite and > 0"));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::usage("dt must be finite and > 0"));
        }
        Ok(())
    }
}

/// Deterministic integrator realising `F` over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Integrator {
    /// `F(x) = x + f(x) Δt`.
    #[default]
    Euler,
    /// Classical fourth-order Runge-Kutta with a fixed number of substeps.
    Rk4 { substeps: usize },
}

/// A Markov transition on a lattice state with diagonal noise gain.
///
/// Implementors provide the deterministic flow and the gain; propagation,
/// noise draws and flooring are shared (see [`propagate`]).
pub trait StateSpaceModel<T: Real>: Sync {
    fn lattice(&self) -> &Lattice<T>;

    fn n_species(&self) -> usize;

    fn dt(&self) -> T;

    /// Writes `F(x)` into `out`. Both slices are species-major state vectors.
    fn flow(&self, x: &[T], out: &mut [T]) -> Result<()>;

    /// Diagonal entry of `g` for a component whose previous value is `x`.
    fn noise_gain(&self, x: T) -> T;

    /// Lower bound applied to every component after a step, if any.
    fn positivity_floor(&self) -> Option<T>;

    fn state_len(&self) -> usize {
        self.n_species() * self.lattice().n_sites()
    }

    /// Variance `Δt g(x)²` of the one-step transition for one component.
    #[inline]
    fn transition_variance(&self, x: T) -> T {
        let g = self.noise_gain(x);
        self.dt() * g * g
    }
}

/// Scaled two-species Oregonator on a square lattice with multiplicative
/// driving noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Oregonator<T> {
    lattice: Lattice<T>,
    pub params: OregonatorParams<T>,
    pub sigma_x: T,
    pub dt: T,
    pub integrator: Integrator,
    pub floor: T,
}

impl<T: Real> Oregonator<T> {
    pub fn new(
        lattice: Lattice<T>,
        params: OregonatorParams<T>,
        noise: &NoiseModel<T>,
        integrator: Integrator,
    ) -> Result<Self> {
        params.validate()?;
        noise.validate()?;
        if let Integrator::Rk4 { substeps: 0 } = integrator {
            return Err(Error::usage("rk4 integrator needs at least one substep"));
        }
        Ok(Oregonator {
            lattice,
            params,
            sigma_x: noise.sigma_x,
            dt: noise.dt,
            integrator,
            floor: T::of(POSITIVITY_FLOOR),
        })
    }

    /// Homogeneous state at the non-trivial fixed point.
    pub fn steady_state_field(&self) -> Result<StateField<T>> {
        let (a, b) = self.params.steady_state()?;
        Ok(StateField::homogeneous(self.lattice, &[a, b]))
    }

    /// Reaction-diffusion rate `f(x)` for a species-major state.
    pub fn drift_into(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let n = self.lattice.n_sites();
        check_len("state vector", 2 * n, x.len())?;
        check_len("drift output", 2 * n, out.len())?;
        let (z1, z2) = x.split_at(n);
        let (o1, o2) = out.split_at_mut(n);
        // Laplacians first, then the local kinetics in place.
        self.lattice.laplacian_into(z1, o1);
        self.lattice.laplacian_into(z2, o2);
        let p = &self.params;
        for i in 0..n {
            let (a, b) = (z1[i], z2[i]);
            if a + p.q == T::zero() {
                return Err(Error::Singularity {
                    site: i,
                    detail: "z1 + q = 0".into(),
                });
            }
            let (r1, r2) = p.reaction_rates(a, b);
            o1[i] = r1 + p.d1 * o1[i];
            o2[i] = r2 + p.d2 * o2[i];
        }
        Ok(())
    }

    pub fn drift(&self, state: &StateField<T>) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); state.values().len()];
        self.drift_into(state.values(), &mut out)?;
        Ok(out)
    }

    /// One stochastic step from `state`, using transition stream `key` at
    /// step index `step`.
    pub fn step(&self, state: &StateField<T>, key: StreamKey, step: u64) -> Result<StateField<T>> {
        let mut out = vec![T::zero(); state.values().len()];
        propagate(self, state.values(), key, step, &mut out)?;
        StateField::new(self.lattice, 2, out, state.time + self.dt)
    }
}

impl<T: Real> StateSpaceModel<T> for Oregonator<T> {
    fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    fn n_species(&self) -> usize {
        2
    }

    fn dt(&self) -> T {
        self.dt
    }

    fn flow(&self, x: &[T], out: &mut [T]) -> Result<()> {
        match self.integrator {
            Integrator::Euler => {
                self.drift_into(x, out)?;
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = xi + *o * self.dt;
                }
                Ok(())
            }
            Integrator::Rk4 { substeps } => {
                rk4(|s, o| self.drift_into(s, o), x, out, self.dt, substeps)
            }
        }
    }

    #[inline]
    fn noise_gain(&self, x: T) -> T {
        self.sigma_x * x
    }

    fn positivity_floor(&self) -> Option<T> {
        Some(self.floor)
    }
}

fn rk4<T: Real>(
    mut f: impl FnMut(&[T], &mut [T]) -> Result<()>,
    x: &[T],
    out: &mut [T],
    dt: T,
    substeps: usize,
) -> Result<()> {
    let n = x.len();
    let h = dt / T::of(substeps as f64);
    let half = h * T::of(0.5);
    let sixth = h / T::of(6.0);
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    out.copy_from_slice(x);
    for _ in 0..substeps {
        f(out, &mut k1)?;
        for i in 0..n {
            tmp[i] = out[i] + half * k1[i];
        }
        f(&tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = out[i] + half * k2[i];
        }
        f(&tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = out[i] + h * k3[i];
        }
        f(&tmp, &mut k4)?;
        for i in 0..n {
            out[i] += sixth * (k1[i] + T::of(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
    }
    Ok(())
}

/// Linear surrogate `dx = a x dt + s dB` per component, with no spatial
/// coupling, discretised as `F(x) = (1 + a Δt) x`. With Gaussian
/// measurements every site is an independent linear-Gaussian system.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    lattice: Lattice<T>,
    n_species: usize,
    pub rate: T,
    pub noise_std: T,
    pub dt: T,
}

impl<T: Real> LinearModel<T> {
    pub fn new(lattice: Lattice<T>, n_species: usize, rate: T, noise_std: T, dt: T) -> Result<Self> {
        if n_species == 0 {
            return Err(Error::usage("linear model needs at least one species"));
        }
        if !(dt > T::zero()) || !(noise_std >= T::zero()) {
            return Err(Error::usage("linear model needs dt > 0 and noise_std >= 0"));
        }
        Ok(LinearModel {
            lattice,
            n_species,
            rate,
            noise_std,
            dt,
        })
    }

    /// Transition coefficient `1 + a Δt`.
    pub fn transition(&self) -> T {
        T::one() + self.rate * self.dt
    }
}

impl<T: Real> StateSpaceModel<T> for LinearModel<T> {
    fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    fn n_species(&self) -> usize {
        self.n_species
    }

    fn dt(&self) -> T {
        self.dt
    }

    fn flow(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let a = self.transition();
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = a * xi;
        }
        Ok(())
    }

    fn noise_gain(&self, _x: T) -> T {
        self.noise_std
    }

    fn positivity_floor(&self) -> Option<T> {
        None
    }
}

/// `out = F(prev) + g(prev) √Δt ξ`, floored, with `ξ_i` the `i`-th normal of
/// stream `(key, step)` and `i` the species-major component index.
pub fn propagate<T: Real, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    prev: &[T],
    key: StreamKey,
    step: u64,
    out: &mut [T],
) -> Result<()> {
    check_len("state vector", model.state_len(), prev.len())?;
    check_len("state output", model.state_len(), out.len())?;
    model.flow(prev, out)?;
    let sqrt_dt = model.dt().sqrt();
    // Skip the draws entirely when the gain vanishes everywhere.
    if prev.iter().any(|&x| model.noise_gain(x) != T::zero()) {
        let mut xi = vec![0.0; prev.len()];
        key.fill_normals(step, &mut xi);
        for ((o, &x), &e) in out.iter_mut().zip(prev).zip(&xi) {
            *o += model.noise_gain(x) * sqrt_dt * T::of(e);
        }
    }
    finish_state(model, out)
}

/// Applies the positivity floor and reports the first non-finite component.
pub(crate) fn finish_state<T: Real, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    out: &mut [T],
) -> Result<()> {
    let n = model.lattice().n_sites();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalInstability {
            site: i % n,
            species: i / n,
        });
    }
    if let Some(floor) = model.positivity_floor() {
        for v in out.iter_mut() {
            if *v < floor {
                *v = floor;
            }
        }
    }
    Ok(())
}

/// Per-species response spectra sampled at a wavelength grid, plus
/// isotropic measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel<T> {
    wavelengths: Vec<T>,
    n_species: usize,
    /// `N_Λ × N_S`, row-major: `response[j * N_S + s] = φ_s(λ_j)`.
    response: Vec<T>,
    noise_var: T,
    log_norm: T,
}

impl<T: Real> ObservationModel<T> {
    pub fn new(wavelengths: Vec<T>, n_species: usize, response: Vec<T>, noise_var: T) -> Result<Self> {
        if wavelengths.is_empty() {
            return Err(Error::usage("observation model needs at least one wavelength"));
        }
        if n_species == 0 {
            return Err(Error::usage("observation model needs at least one species"));
        }
        check_len("response matrix", wavelengths.len() * n_species, response.len())?;
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("response spectra must be finite"));
        }
        if !(noise_var > T::zero()) || !noise_var.is_finite() {
            return Err(Error::usage("measurement noise variance must be finite and > 0"));
        }
        let n_l = T::of(wavelengths.len() as f64);
        let log_norm = -T::of(0.5) * n_l * (T::TAU() * noise_var).ln();
        Ok(ObservationModel {
            wavelengths,
            n_species,
            response,
            noise_var,
            log_norm,
        })
    }

    /// Gaussian bands `φ_s(λ) = exp(−(λ − c_s)² / width)` on the grid
    /// `λ_j = lo + j (hi − lo) / n`, `j = 0..n`.
    pub fn gaussian_bands(n: usize, lo: T, hi: T, centers: &[T], width: T, noise_var: T) -> Result<Self> {
        if n == 0 || !(hi > lo) || !(width > T::zero()) {
            return Err(Error::usage("wavelength grid needs n >= 1, hi > lo and width > 0"));
        }
        let step = (hi - lo) / T::of(n as f64);
        let wavelengths: Vec<T> = (0..n).map(|j| lo + step * T::of(j as f64)).collect();
        let mut response = Vec::with_capacity(n * centers.len());
        for &l in &wavelengths {
            for &c in centers {
                response.push((-(l - c) * (l - c) / width).exp());
            }
        }
        Self::new(wavelengths, centers.len(), response, noise_var)
    }

    /// Ten wavelengths `λ_j = 5j` with activator band at 10 and inhibitor
    /// band at 40, both of width 30.
    pub fn oregonator_default(noise_var: T) -> Self {
        Self::gaussian_bands(10, T::zero(), T::of(50.0), &[T::of(10.0), T::of(40.0)], T::of(30.0), noise_var)
            .expect("default spectra are valid")
    }

    pub fn wavelengths(&self) -> &[T] {
        &self.wavelengths
    }

    pub fn n_wavelengths(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn response(&self) -> &[T] {
        &self.response
    }

    #[inline]
    pub fn phi(&self, wavelength: usize, species: usize) -> T {
        self.response[wavelength * self.n_species + species]
    }

    /// `Φ z` for the concentrations of one site.
    #[inline]
    pub fn predict_site(&self, z: &[T], out: &mut [T]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.response[j * self.n_species..(j + 1) * self.n_species];
            *o = row.iter().zip(z).map(|(&p, &c)| p * c).sum();
        }
    }

    /// `ln N(y; Φ z, σ_y² I)` for one site.
    #[inline]
    pub fn site_log_density(&self, z: &[T], y: &[T]) -> T {
        let mut sq = T::zero();
        for (j, &yj) in y.iter().enumerate() {
            let row = &self.response[j * self.n_species..(j + 1) * self.n_species];
            let mut m = T::zero();
            for (&p, &c) in row.iter().zip(z) {
                m += p * c;
            }
            let r = yj - m;
            sq += r * r;
        }
        self.log_norm - T::of(0.5) * sq / self.noise_var
    }

    /// Noise-free observation `H x`.
    pub fn mean(&self, state: &StateField<T>) -> Result<ObservationField<T>> {
        check_len("state species", self.n_species, state.n_species())?;
        let n = state.n_sites();
        let nl = self.n_wavelengths();
        let mut values = vec![T::zero(); n * nl];
        let mut z = vec![T::zero(); self.n_species];
        for v in 0..n {
            state.site_values(v, &mut z);
            self.predict_site(&z, &mut values[v * nl..(v + 1) * nl]);
        }
        Ok(ObservationField {
            n_wavelengths: nl,
            n_sites: n,
            values,
            time: state.time,
        })
    }

    /// `H x + e` with `e_i` the `i`-th normal of `(key, step)`, `i` the
    /// pixel-major output index.
    pub fn observe(&self, state: &StateField<T>, key: StreamKey, step: u64) -> Result<ObservationField<T>> {
        let mut y = self.mean(state)?;
        let mut e = vec![0.0; y.values.len()];
        key.fill_normals(step, &mut e);
        let sd = self.noise_var.sqrt();
        for (v, &ei) in y.values.iter_mut().zip(&e) {
            *v += sd * T::of(ei);
        }
        Ok(y)
    }
}

/// Spectra at every site, pixel-major: `values[site * N_Λ + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationField<T> {
    n_wavelengths: usize,
    n_sites: usize,
    values: Vec<T>,
    pub time: T,
}

impl<T: Real> ObservationField<T> {
    pub fn new(n_wavelengths: usize, n_sites: usize, values: Vec<T>, time: T) -> Result<Self> {
        check_len("observation vector", n_wavelengths * n_sites, values.len())?;
        Ok(ObservationField {
            n_wavelengths,
            n_sites,
            values,
            time,
        })
    }

    pub fn n_wavelengths(&self) -> usize {
        self.n_wavelengths
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Spectrum at one flat site index.
    #[inline]
    pub fn site(&self, v: usize) -> &[T] {
        &self.values[v * self.n_wavelengths..(v + 1) * self.n_wavelengths]
    }

    /// Image of one wavelength channel.
    pub fn wavelength_field(&self, j: usize) -> ScalarField<T> {
        ScalarField(
            (0..self.n_sites)
                .map(|v| self.values[v * self.n_wavelengths + j])
                .collect(),
        )
    }
}

/// Ground truth and measurements recorded at observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// Dynamics step index of each record (multiples of the stride).
    pub steps: Vec<u64>,
    pub states: Vec<StateField<T>>,
    pub observations: Vec<ObservationField<T>>,
}

/// Seeds of the two random streams used when generating data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationKeys {
    pub transition: StreamKey,
    pub observation: StreamKey,
}

impl SimulationKeys {
    pub fn from_seed(seed: u64) -> Self {
        use crate::rng::Domain;
        SimulationKeys {
            transition: StreamKey::new(seed, Domain::Transition, u64::MAX),
            observation: StreamKey::new(seed, Domain::Observation, 0),
        }
    }
}

/// Runs `n_steps` transitions from `initial`, observing every `stride`-th
/// state, and hands each `(step, state, observation)` to `sink`.
pub fn simulate_with<T, M, F>(
    model: &M,
    obs: &ObservationModel<T>,
    initial: &StateField<T>,
    n_steps: u64,
    stride: u64,
    keys: SimulationKeys,
    mut sink: F,
) -> Result<()>
where
    T: Real,
    M: StateSpaceModel<T> + ?Sized,
    F: FnMut(u64, &StateField<T>, &ObservationField<T>) -> Result<()>,
{
    if n_steps == 0 {
        return Err(Error::usage("simulation needs at least one step"));
    }
    if stride == 0 {
        return Err(Error::usage("observation stride must be >= 1"));
    }
    let mut state = initial.clone();
    let mut next = initial.clone();
    for k in 1..=n_steps {
        propagate(model, state.values(), keys.transition, k, next.values_mut())?;
        next.time = T::of(k as f64) * model.dt();
        std::mem::swap(&mut state, &mut next);
        if k % stride == 0 {
            let y = obs.observe(&state, keys.observation, k)?;
            sink(k, &state, &y)?;
        }
    }
    Ok(())
}

/// In-memory variant of [`simulate_with`].
pub fn simulate<T: Real, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    obs: &ObservationModel<T>,
    initial: &StateField<T>,
    n_steps: u64,
    stride: u64,
    keys: SimulationKeys,
) -> Result<Trajectory<T>> {
    let mut traj = Trajectory {
        steps: Vec::new(),
        states: Vec::new(),
        observations: Vec::new(),
    };
    simulate_with(model, obs, initial, n_steps, stride, keys, |k, x, y| {
        traj.steps.push(k);
        traj.states.push(x.clone());
        traj.observations.push(y.clone());
        Ok(())
    })?;
    Ok(traj)
}
