//! Chemical reaction networks under mass-action kinetics, plus the scaled
//! two-species Oregonator used for the Belousov-Zhabotinsky case study.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// `Σ_s R[r][s]·S_s → Σ_s P[r][s]·S_s` at rate `κ_r`, for every reaction `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork<T> {
    species: Vec<String>,
    reactants: Vec<Vec<u32>>,
    products: Vec<Vec<u32>>,
    rates: Vec<T>,
}

impl<T: Real> ReactionNetwork<T> {
    pub fn new(
        species: Vec<String>,
        reactants: Vec<Vec<u32>>,
        products: Vec<Vec<u32>>,
        rates: Vec<T>,
    ) -> Result<Self> {
        let n_s = species.len();
        let n_r = rates.len();
        check_len("reactant stoichiometry rows", n_r, reactants.len())?;
        check_len("product stoichiometry rows", n_r, products.len())?;
        for row in reactants.iter().chain(products.iter()) {
            check_len("stoichiometry columns", n_s, row.len())?;
        }
        if let Some(k) = rates.iter().find(|k| !(**k >= T::zero()) || !k.is_finite()) {
            return Err(Error::Domain(format!(
                "rate constants must be finite and non-negative, got {k}"
            )));
        }
        Ok(ReactionNetwork {
            species,
            reactants,
            products,
            rates,
        })
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.rates.len()
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactants(&self) -> &[Vec<u32>] {
        &self.reactants
    }

    pub fn products(&self) -> &[Vec<u32>] {
        &self.products
    }

    pub fn rates(&self) -> &[T] {
        &self.rates
    }

    pub fn with_rates(mut self, rates: Vec<T>) -> Result<Self> {
        check_len("rate constants", self.n_reactions(), rates.len())?;
        self.rates = rates;
        Self::new(self.species, self.reactants, self.products, self.rates)
    }

    fn check_concentrations(&self, z: &[T]) -> Result<()> {
        check_len("concentration vector", self.n_species(), z.len())?;
        if let Some((s, v)) = z.iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
            return Err(Error::Domain(format!(
                "concentration of species {s} is {v}; mass action needs z >= 0"
            )));
        }
        Ok(())
    }

    /// `ν_r = κ_r Π_s z_s^{R[r][s]}`, with `0⁰ = 1`.
    pub fn mass_action_rates(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_concentrations(z)?;
        Ok(self
            .reactants
            .iter()
            .zip(&self.rates)
            .map(|(row, &k)| {
                row.iter()
                    .zip(z)
                    .fold(k, |acc, (&e, &c)| acc * c.powi(e as i32))
            })
            .collect())
    }

    /// Reaction term `(P − R)ᵀ ν(z)` of the concentration dynamics.
    pub fn stoichiometric_drift(&self, z: &[T]) -> Result<Vec<T>> {
        let nu = self.mass_action_rates(z)?;
        let mut out = vec![T::zero(); self.n_species()];
        for ((r_row, p_row), &rate) in self.reactants.iter().zip(&self.products).zip(&nu) {
            for (s, (&a, &b)) in r_row.iter().zip(p_row).enumerate() {
                if a != b {
                    out[s] += (T::of(f64::from(b)) - T::of(f64::from(a))) * rate;
                }
            }
        }
        Ok(out)
    }

    /// Parses the TOML network format (see [`ReactionNetwork::to_toml`]).
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: NetworkFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<network>".into(),
            detail: e.to_string(),
        })?;
        let index: BTreeMap<&str, usize> = file
            .species
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        if index.len() != file.species.len() {
            return Err(Error::usage("duplicate species name in network"));
        }
        let n_s = file.species.len();
        let dense = |terms: &BTreeMap<String, u32>| -> Result<Vec<u32>> {
            let mut row = vec![0; n_s];
            for (name, &coef) in terms {
                let &i = index
                    .get(name.as_str())
                    .ok_or_else(|| Error::usage(format!("unknown species '{name}' in reaction")))?;
                row[i] = coef;
            }
            Ok(row)
        };
        let mut reactants = Vec::with_capacity(file.reaction.len());
        let mut products = Vec::with_capacity(file.reaction.len());
        let mut rates = Vec::with_capacity(file.reaction.len());
        for r in &file.reaction {
            reactants.push(dense(&r.reactants)?);
            products.push(dense(&r.products)?);
            rates.push(T::of(r.rate));
        }
        Self::new(file.species, reactants, products, rates)
    }

    /// Serialises to TOML:
    ///
    /// ```toml
    /// species = ["A", "B"]
    ///
    /// [[reaction]]
    /// rate = 2.0
    /// reactants = { A = 2 }
    /// products = { B = 1 }
    /// ```
    ///
    /// Zero coefficients are omitted.
    pub fn to_toml(&self) -> String {
        let sparse = |row: &[u32]| -> BTreeMap<String, u32> {
            row.iter()
                .zip(&self.species)
                .filter(|(c, _)| **c > 0)
                .map(|(c, s)| (s.clone(), *c))
                .collect()
        };
        let file = NetworkFile {
            species: self.species.clone(),
            reaction: (0..self.n_reactions())
                .map(|r| ReactionEntry {
                    rate: self.rates[r].as_f64(),
                    reactants: sparse(&self.reactants[r]),
                    products: sparse(&self.products[r]),
                })
                .collect(),
        };
        toml::to_string(&file).expect("network serialises to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    species: Vec<String>,
    #[serde(default)]
    reaction: Vec<ReactionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReactionEntry {
    rate: f64,
    #[serde(default)]
    reactants: BTreeMap<String, u32>,
    #[serde(default)]
    products: BTreeMap<String, u32>,
}

/// The six-species Oregonator network with caller-supplied rate constants
/// `κ₁…κ₅`. The fractional yield `0.5σ` of the last reaction cannot be
/// written with integer stoichiometry and is replaced by a unit yield.
pub fn oregonator_network<T: Real>(rates: [T; 5]) -> Result<ReactionNetwork<T>> {
    let species = (1..=6).map(|i| format!("S{i}")).collect();
    //                 S1 S2 S3 S4 S5 S6
    let reactants = vec![
        vec![2, 0, 0, 0, 0, 0],
        vec![1, 0, 1, 0, 0, 0],
        vec![1, 0, 0, 1, 0, 0],
        vec![0, 0, 1, 1, 0, 0],
        vec![0, 1, 0, 0, 0, 1],
    ];
    let products = vec![
        vec![0, 0, 0, 1, 1, 0],
        vec![0, 0, 0, 0, 2, 0],
        vec![2, 2, 0, 0, 0, 0],
        vec![1, 0, 0, 0, 1, 0],
        vec![0, 0, 1, 0, 0, 0],
    ];
    ReactionNetwork::new(species, reactants, products, rates.to_vec())
}

/// Parameters of the scaled two-species Oregonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OregonatorParams<T> {
    pub epsilon: T,
    pub sigma: T,
    pub q: T,
    /// Diffusion coefficient of the activator.
    pub d1: T,
    /// Diffusion coefficient of the inhibitor.
    pub d2: T,
}

impl<T: Real> Default for OregonatorParams<T> {
    fn default() -> Self {
        OregonatorParams {
            epsilon: T::of(0.08),
            sigma: T::of(0.95),
            q: T::of(0.0075),
            d1: T::of(5e-4),
            d2: T::of(5e-6),
        }
    }
}

impl<T: Real> OregonatorParams<T> {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.epsilon, self.sigma, self.q, self.d1, self.d2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::usage("oregonator parameters must be finite"));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::usage("oregonator epsilon must be > 0"));
        }
        if !(self.q > T::zero()) {
            return Err(Error::usage("oregonator q must be > 0"));
        }
        if self.d1 < T::zero() || self.d2 < T::zero() {
            return Err(Error::usage("diffusion coefficients must be >= 0"));
        }
        Ok(())
    }

    /// Reaction part of the drift at one site.
    #[inline]
    pub fn reaction_rates(&self, z1: T, z2: T) -> (T, T) {
        let inhibition = self.sigma * z2 * (z1 - self.q) / (z1 + self.q);
        (
            (z1 * (T::one() - z1) - inhibition) / self.epsilon,
            z1 - z2,
        )
    }

    /// Full reaction-diffusion drift given precomputed Laplacians.
    pub fn drift(
        &self,
        z1: &[T],
        z2: &[T],
        lap1: &[T],
        lap2: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let n = z1.len();
        check_len("inhibitor field", n, z2.len())?;
        check_len("activator laplacian", n, lap1.len())?;
        check_len("inhibitor laplacian", n, lap2.len())?;
        let mut f1 = Vec::with_capacity(n);
        let mut f2 = Vec::with_capacity(n);
        for i in 0..n {
            if z1[i] + self.q == T::zero() {
                return Err(Error::Singularity {
                    site: i,
                    detail: "z1 + q = 0".into(),
                });
            }
            let (r1, r2) = self.reaction_rates(z1[i], z2[i]);
            f1.push(r1 + self.d1 * lap1[i]);
            f2.push(r2 + self.d2 * lap2[i]);
        }
        Ok((f1, f2))
    }

    /// Non-trivial homogeneous fixed point `(z*, z*)`: the positive root of
    /// `z² − (1 − σ − q) z − q (1 + σ) = 0`.
    pub fn steady_state(&self) -> Result<(T, T)> {
        let two = T::of(2.0);
        let b = T::one() - self.sigma - self.q;
        let c = self.q * (T::one() + self.sigma);
        let disc = b * b + T::of(4.0) * c;
        if !(disc >= T::zero()) {
            return Err(Error::Domain(format!(
                "steady-state quadratic has no real root (discriminant {disc})"
            )));
        }
        let root = disc.sqrt();
        // Cancellation-free form of (b + √disc) / 2.
        let z = if b >= T::zero() {
            (b + root) / two
        } else {
            two * c / (root - b)
        };
        if !(z > T::zero()) || !z.is_finite() {
            return Err(Error::Domain(format!(
                "no positive steady state for these parameters (root {z})"
            )));
        }
        Ok((z, z))
    }
}
