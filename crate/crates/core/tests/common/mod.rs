//! Independent reference implementations used by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rdbpf::{
    Domain, Lattice, LinearModel, ObservationField, ObservationModel, OregonatorParams, StateField,
    StateSpaceModel, StreamKey,
};

/// Dense `n² × n²` Laplacian assembled edge by edge.
pub fn dense_laplacian(side: usize, spacing: f64) -> DMatrix<f64> {
    let n = side * side;
    let mut m = DMatrix::zeros(n, n);
    let h2 = spacing * spacing;
    let idx = |r: usize, c: usize| r * side + c;
    for r in 0..side {
        for c in 0..side {
            // Horizontal and vertical edges, each once.
            if c + 1 < side {
                let (a, b) = (idx(r, c), idx(r, c + 1));
                m[(a, b)] += 1.0 / h2;
                m[(b, a)] += 1.0 / h2;
                m[(a, a)] -= 1.0 / h2;
                m[(b, b)] -= 1.0 / h2;
            }
            if r + 1 < side {
                let (a, b) = (idx(r, c), idx(r + 1, c));
                m[(a, b)] += 1.0 / h2;
                m[(b, a)] += 1.0 / h2;
                m[(a, a)] -= 1.0 / h2;
                m[(b, b)] -= 1.0 / h2;
            }
        }
    }
    m
}

/// Scaled Oregonator drift evaluated site by site from the formula, with
/// the Laplacian written out from 2-D coordinates.
pub fn brute_force_drift(p: &OregonatorParams<f64>, side: usize, spacing: f64, x: &[f64]) -> Vec<f64> {
    let n = side * side;
    let at = |s: usize, r: i64, c: i64| -> Option<f64> {
        (r >= 0 && c >= 0 && (r as usize) < side && (c as usize) < side)
            .then(|| x[s * n + r as usize * side + c as usize])
    };
    let mut out = vec![0.0; 2 * n];
    for r in 0..side as i64 {
        for c in 0..side as i64 {
            let v = r as usize * side + c as usize;
            let mut lap = [0.0; 2];
            for (s, l) in lap.iter_mut().enumerate() {
                let centre = at(s, r, c).unwrap();
                for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    if let Some(nb) = at(s, r + dr, c + dc) {
                        *l += (nb - centre) / (spacing * spacing);
                    }
                }
            }
            let (u, w) = (x[v], x[n + v]);
            out[v] = (u * (1.0 - u) - p.sigma * w * (u - p.q) / (u + p.q)) / p.epsilon + p.d1 * lap[0];
            out[n + v] = u - w + p.d2 * lap[1];
        }
    }
    out
}

/// Moments of `X | Y = y` for `X ~ N(f, diag(var))`, `Y = Φ X + e`,
/// `e ~ N(0, σ² I)`, from the dense joint covariance, plus `ln p(y)`.
pub fn dense_conditioning(
    phi: &DMatrix<f64>,
    f: &[f64],
    var: &[f64],
    y: &[f64],
    noise_var: f64,
) -> (Vec<f64>, DMatrix<f64>, f64) {
    let ns = f.len();
    let nl = y.len();
    let sxx = DMatrix::from_diagonal(&DVector::from_column_slice(var));
    let syy = phi * &sxx * phi.transpose() + DMatrix::identity(nl, nl) * noise_var;
    let sxy = &sxx * phi.transpose();
    let mx = DVector::from_column_slice(f);
    let my = phi * &mx;
    let yv = DVector::from_column_slice(y);
    let syy_inv = syy.clone().try_inverse().expect("output covariance is invertible");
    let gain = &sxy * &syy_inv;
    let mean = &mx + &gain * (&yv - &my);
    let cov = &sxx - &gain * sxy.transpose();
    let r = &yv - &my;
    let quad = (r.transpose() * &syy_inv * &r)[(0, 0)];
    let logdet = syy.determinant().ln();
    let lp = -0.5 * (nl as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    let _ = ns;
    (mean.iter().copied().collect(), cov, lp)
}

/// Scalar linear-Gaussian surrogate `x_k = a x_{k-1} + w`, `y_k = x_k + e`.
#[derive(Debug, Clone, Copy)]
pub struct Surrogate {
    pub rate: f64,
    pub noise_std: f64,
    pub dt: f64,
    pub obs_var: f64,
    pub x0: f64,
    pub steps: usize,
}

/// Process noise small next to measurement noise (`q / r = 0.01`), the
/// regime of the reaction-diffusion experiments.
pub const SURROGATE: Surrogate = Surrogate {
    rate: -0.5,
    noise_std: 0.1,
    dt: 0.1,
    obs_var: 0.1,
    x0: 1.0,
    steps: 10,
};

/// Process noise as large as measurement noise; log-weights spread widely.
pub const HARD_SURROGATE: Surrogate = Surrogate {
    noise_std: 1.0,
    ..SURROGATE
};

impl Surrogate {
    pub fn a(&self) -> f64 {
        1.0 + self.rate * self.dt
    }

    pub fn q(&self) -> f64 {
        self.dt * self.noise_std * self.noise_std
    }

    /// A 2 × 2 lattice of independent copies; with unit blocks every block
    /// is a 1-site problem.
    pub fn model(&self) -> LinearModel<f64> {
        LinearModel::new(Lattice::new(2, 1.0).unwrap(), 1, self.rate, self.noise_std, self.dt).unwrap()
    }

    pub fn observation_model(&self) -> ObservationModel<f64> {
        ObservationModel::new(vec![0.0], 1, vec![1.0], self.obs_var).unwrap()
    }

    pub fn initial(&self) -> StateField<f64> {
        StateField::homogeneous(Lattice::new(2, 1.0).unwrap(), &[self.x0])
    }

    /// Observation sequence of one seeded realisation.
    pub fn data(&self, seed: u64) -> Vec<ObservationField<f64>> {
        let m = self.model();
        let obs = self.observation_model();
        let tr = rdbpf::simulate(&m, &obs, &self.initial(), self.steps as u64, 1, rdbpf::SimulationKeys::from_seed(seed))
            .unwrap();
        tr.observations
    }

    /// Exact `ln p(y_{1:k})` of site 0 after each step.
    pub fn kalman_log_evidence(&self, ys: &[ObservationField<f64>]) -> Vec<f64> {
        let (a, q, r) = (self.a(), self.q(), self.obs_var);
        let (mut m, mut p) = (self.x0, 0.0);
        let mut acc = 0.0;
        let mut out = Vec::new();
        for y in ys {
            let y = y.site(0)[0];
            let mp = a * m;
            let pp = a * a * p + q;
            let s = pp + r;
            acc += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (y - mp).powi(2) / s);
            let k = pp / s;
            m = mp + k * (y - mp);
            p = (1.0 - k) * pp;
            out.push(acc);
        }
        out
    }
}

/// A textbook SIR filter over whole states, sharing only the random streams
/// and the model with the library: multinomial resampling by linear search
/// on the running weight sum, transition draws, full-state likelihood
/// weights.
pub struct ReferenceSir<'a, M> {
    pub model: &'a M,
    pub obs: &'a ObservationModel<f64>,
    pub seed: u64,
    pub particles: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub log_evidence: f64,
}

impl<'a, M: StateSpaceModel<f64>> ReferenceSir<'a, M> {
    pub fn new(model: &'a M, obs: &'a ObservationModel<f64>, seed: u64, x0: &StateField<f64>, n: usize) -> Self {
        ReferenceSir {
            model,
            obs,
            seed,
            particles: vec![x0.values().to_vec(); n],
            weights: vec![1.0 / n as f64; n],
            log_evidence: 0.0,
        }
    }

    pub fn step(&mut self, k: u64, y: &ObservationField<f64>) {
        let n = self.particles.len();
        let mut u = vec![0.0; n];
        StreamKey::new(self.seed, Domain::Resample, 0).fill_uniforms(k, 0, &mut u);
        let mut parents = Vec::with_capacity(n);
        for &ui in &u {
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (j, &w) in self.weights.iter().enumerate() {
                acc += w;
                if ui < acc {
                    pick = j;
                    break;
                }
            }
            while self.weights[pick] == 0.0 {
                pick -= 1;
            }
            parents.push(self.particles[pick].clone());
        }
        let ns = self.model.n_species();
        let sites = self.model.lattice().n_sites();
        let mut logw = Vec::with_capacity(n);
        for (i, parent) in parents.iter().enumerate() {
            let mut x = vec![0.0; parent.len()];
            rdbpf::propagate(self.model, parent, StreamKey::new(self.seed, Domain::Transition, i as u64), k, &mut x)
                .unwrap();
            let mut l = 0.0;
            let mut z = vec![0.0; ns];
            for v in 0..sites {
                for (s, zs) in z.iter_mut().enumerate() {
                    *zs = x[s * sites + v];
                }
                l += self.obs.site_log_density(&z, y.site(v));
            }
            logw.push(l);
            self.particles[i] = x;
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let inv = 1.0 / total;
        self.weights = e.iter().map(|x| x * inv).collect();
        self.log_evidence += max + total.ln() - (n as f64).ln();
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}
