//! Square-lattice geometry: sites, neighbourhoods, the five-point Laplacian
//! with zero-flux boundaries, and disjoint block partitions.
//!
//! Sites are addressed either by a 1-based [`Site`] `(row, col)` or by a
//! 0-based flat index `(row - 1) * side + (col - 1)`. State vectors are laid
//! out species-major: all sites of species 0, then all sites of species 1,
//! and so on.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// A grid point, 1-based in both coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub row: usize,
    pub col: usize,
}

impl Site {
    pub const fn new(row: usize, col: usize) -> Self {
        Site { row, col }
    }
}

/// Evenly spaced `side × side` grid with spacing `Δu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice<T> {
    side: usize,
    spacing: T,
}

impl<T: Real> Lattice<T> {
    pub fn new(side: usize, spacing: T) -> Result<Self> {
        if side < 2 {
            return Err(Error::usage(format!("lattice side must be >= 2, got {side}")));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::usage(format!(
                "lattice spacing must be positive and finite, got {spacing}"
            )));
        }
        Ok(Lattice { side, spacing })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn n_sites(&self) -> usize {
        self.side * self.side
    }

    pub fn contains(&self, site: Site) -> bool {
        (1..=self.side).contains(&site.row) && (1..=self.side).contains(&site.col)
    }

    fn check_site(&self, site: Site) -> Result<()> {
        if self.contains(site) {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "site ({}, {}) outside a {}x{} lattice",
                site.row, site.col, self.side, self.side
            )))
        }
    }

    /// 0-based row-major index of a site.
    pub fn flat_site(&self, site: Site) -> Result<usize> {
        self.check_site(site)?;
        Ok((site.row - 1) * self.side + (site.col - 1))
    }

    /// Inverse of [`Lattice::flat_site`].
    pub fn site_at(&self, index: usize) -> Result<Site> {
        if index >= self.n_sites() {
            return Err(Error::usage(format!(
                "site index {index} out of range for {} sites",
                self.n_sites()
            )));
        }
        Ok(Site::new(index / self.side + 1, index % self.side + 1))
    }

    /// Position of `(site, species)` in a species-major state vector.
    /// `species` is 1-based like sites.
    pub fn site_to_flat(&self, site: Site, species: usize, n_species: usize) -> Result<usize> {
        if species < 1 || species > n_species {
            return Err(Error::usage(format!(
                "species {species} out of range 1..={n_species}"
            )));
        }
        Ok((species - 1) * self.n_sites() + self.flat_site(site)?)
    }

    /// Manhattan-distance-1 neighbours inside the lattice, ordered
    /// up, down, left, right.
    pub fn neighbors(&self, site: Site) -> Result<Vec<Site>> {
        self.check_site(site)?;
        let mut out = Vec::with_capacity(4);
        if site.row > 1 {
            out.push(Site::new(site.row - 1, site.col));
        }
        if site.row < self.side {
            out.push(Site::new(site.row + 1, site.col));
        }
        if site.col > 1 {
            out.push(Site::new(site.row, site.col - 1));
        }
        if site.col < self.side {
            out.push(Site::new(site.row, site.col + 1));
        }
        Ok(out)
    }

    /// Discrete Laplacian of one species field.
    pub fn laplacian(&self, field: &[T]) -> Result<ScalarField<T>> {
        check_len("laplacian input", self.n_sites(), field.len())?;
        let mut out = vec![T::zero(); self.n_sites()];
        self.laplacian_into(field, &mut out);
        Ok(ScalarField(out))
    }

    /// Writes `Σ_{v'∈N(v)} (f[v'] − f[v]) / Δu²` into `out`. Missing
    /// neighbours at the boundary contribute nothing (zero flux).
    ///
    /// Both slices must hold exactly `n_sites()` values.
    pub fn laplacian_into(&self, field: &[T], out: &mut [T]) {
        let n = self.side;
        assert_eq!(field.len(), n * n);
        assert_eq!(out.len(), n * n);
        let inv_h2 = (self.spacing * self.spacing).recip();
        for r in 0..n {
            let row = r * n;
            for c in 0..n {
                let i = row + c;
                let center = field[i];
                let mut acc = T::zero();
                if r > 0 {
                    acc += field[i - n] - center;
                }
                if r + 1 < n {
                    acc += field[i + n] - center;
                }
                if c > 0 {
                    acc += field[i - 1] - center;
                }
                if c + 1 < n {
                    acc += field[i + 1] - center;
                }
                out[i] = acc * inv_h2;
            }
        }
    }

    /// Axis-aligned tiling into `block_side × block_side` squares, clipped
    /// at the far edges.
    pub fn make_partition(&self, block_side: usize) -> Result<BlockPartition> {
        BlockPartition::new(self.side, block_side)
    }
}

/// Values of one quantity at every lattice site, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField<T>(pub Vec<T>);

impl<T: Real> ScalarField<T> {
    pub fn constant(n_sites: usize, value: T) -> Self {
        ScalarField(vec![value; n_sites])
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for ScalarField<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for ScalarField<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for ScalarField<T> {
    fn from(v: Vec<T>) -> Self {
        ScalarField(v)
    }
}

/// Disjoint cover of the lattice by square blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    side: usize,
    block_side: usize,
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl BlockPartition {
    pub fn new(side: usize, block_side: usize) -> Result<Self> {
        if block_side < 1 || block_side > side {
            return Err(Error::usage(format!(
                "block side must lie in 1..={side}, got {block_side}"
            )));
        }
        let per_dim = side.div_ceil(block_side);
        let mut blocks = Vec::with_capacity(per_dim * per_dim);
        let mut block_of = vec![0; side * side];
        for br in 0..per_dim {
            for bc in 0..per_dim {
                let rows = br * block_side..((br + 1) * block_side).min(side);
                let cols = bc * block_side..((bc + 1) * block_side).min(side);
                let id = blocks.len();
                let mut sites = Vec::with_capacity(rows.len() * cols.len());
                for r in rows {
                    for c in cols.clone() {
                        let i = r * side + c;
                        block_of[i] = id;
                        sites.push(i);
                    }
                }
                blocks.push(sites);
            }
        }
        Ok(BlockPartition {
            side,
            block_side,
            blocks,
            block_of,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn block_side(&self) -> usize {
        self.block_side
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Flat site indices of each block, row-major within the block.
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &[usize] {
        &self.blocks[id]
    }

    /// Block id containing a flat site index.
    pub fn block_of(&self, site: usize) -> usize {
        self.block_of[site]
    }
}
