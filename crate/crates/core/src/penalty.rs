//! Sparsity penalties, their proximal maps and the support projection.
//!
//! Both penalties have unit weight: the proximal map shrinks by exactly 1
//! and the sparsity level is controlled by how long the iteration has run,
//! not by a multiplier inside the prox.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Partition of a tensor's flat element indices into groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupIndex {
    /// Every element is its own group.
    Elementwise { len: usize },
    /// `count` contiguous blocks of `block_len` elements (one per leading-axis slice).
    Blocks { count: usize, block_len: usize },
    Explicit { len: usize, groups: Vec<Vec<usize>> },
}

impl GroupIndex {
    pub fn elementwise(len: usize) -> Self {
        Self::Elementwise { len }
    }

    pub fn blocks(count: usize, block_len: usize) -> Self {
        Self::Blocks { count, block_len }
    }

    /// Arbitrary partition of `0..len`; rejects overlaps, gaps and
    /// out-of-range indices.
    pub fn explicit(groups: Vec<Vec<usize>>, len: usize) -> Result<Self> {
        let mut seen = vec![false; len];
        for &i in groups.iter().flatten() {
            if i >= len {
                return Err(Error::Index(format!("element {i} outside tensor of {len}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Argument(format!("element {i} in two groups")));
            }
        }
        if let Some(miss) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("element {miss} not covered")));
        }
        Ok(Self::Explicit { len, groups })
    }

    pub fn num_groups(&self) -> usize {
        match self {
            Self::Elementwise { len } => *len,
            Self::Blocks { count, .. } => *count,
            Self::Explicit { groups, .. } => groups.len(),
        }
    }

    /// Number of elements covered.
    pub fn len(&self) -> usize {
        match self {
            Self::Elementwise { len } | Self::Explicit { len, .. } => *len,
            Self::Blocks { count, block_len } => count * block_len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Index(format!(
                "group index covers {} elements, tensor has {n}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn members(&self, g: usize) -> Members<'_> {
        match self {
            Self::Elementwise { .. } => Members::Range(g..g + 1),
            Self::Blocks { block_len, .. } => Members::Range(g * block_len..(g + 1) * block_len),
            Self::Explicit { groups, .. } => Members::List(groups[g].iter()),
        }
    }

    /// Group that owns flat element `i`.
    pub fn owner(&self, i: usize) -> Option<usize> {
        match self {
            Self::Elementwise { len } => (i < *len).then_some(i),
            Self::Blocks { count, block_len } => (i < count * block_len).then(|| i / block_len),
            Self::Explicit { groups, .. } => groups.iter().position(|g| g.contains(&i)),
        }
    }

    pub fn group_size(&self, g: usize) -> usize {
        match self {
            Self::Elementwise { .. } => 1,
            Self::Blocks { block_len, .. } => *block_len,
            Self::Explicit { groups, .. } => groups[g].len(),
        }
    }
}

pub enum Members<'a> {
    Range(std::ops::Range<usize>),
    List(std::slice::Iter<'a, usize>),
}

impl Iterator for Members<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Members::Range(r) => r.next(),
            Members::List(it) => it.next().copied(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Lasso,
    GroupLasso,
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::GroupLasso => "group",
        })
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" | "l1" => Ok(Self::Lasso),
            "group" | "group_lasso" | "gl" => Ok(Self::GroupLasso),
            other => Err(Error::Argument(format!("unknown penalty kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub groups: GroupIndex,
}

impl PenaltySpec {
    /// Penalty over a weight tensor whose leading axis indexes output
    /// units: group lasso takes one group per output filter/row.
    pub fn for_weight(kind: PenaltyKind, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        let groups = match kind {
            PenaltyKind::Lasso => GroupIndex::elementwise(n),
            PenaltyKind::GroupLasso => GroupIndex::blocks(shape[0], n / shape[0]),
        };
        Self { kind, groups }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.num_groups()
    }

    pub fn check<T: Scalar>(&self, t: &Tensor<T>) -> Result<()> {
        if self.groups.len() != t.len() {
            return Err(Error::Dimension(format!(
                "penalty covers {} elements, tensor {:?} has {}",
                self.groups.len(),
                t.shape(),
                t.len()
            )));
        }
        Ok(())
    }
}

/// `Ω(γ)`: sum of group Euclidean norms (absolute values for lasso).
pub fn omega<T: Scalar>(gamma: &Tensor<T>, spec: &PenaltySpec) -> Result<f64> {
    spec.check(gamma)?;
    let d = gamma.data();
    Ok((0..spec.num_groups())
        .map(|g| {
            spec.groups
                .members(g)
                .map(|i| d[i].as_f64() * d[i].as_f64())
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

/// Group soft-thresholding at an arbitrary threshold:
/// `max(0, 1 − threshold/‖z^g‖) · z^g` per group (elementwise for lasso).
pub fn shrink<T: Scalar>(z: &Tensor<T>, threshold: T, spec: &PenaltySpec) -> Result<Tensor<T>> {
    spec.check(z)?;
    let mut out = z.clone();
    shrink_in_place(out.data_mut(), threshold, T::one(), spec);
    Ok(out)
}

/// `Γ = κ · Prox_Ω(Z)` with the unit-weight penalty.
pub fn prox<T: Scalar>(z: &Tensor<T>, kappa: T, spec: &PenaltySpec) -> Result<Tensor<T>> {
    if !(kappa > T::zero()) {
        return Err(Error::Argument(format!("kappa must be positive, got {kappa}")));
    }
    spec.check(z)?;
    let mut out = z.clone();
    shrink_in_place(out.data_mut(), T::one(), kappa, spec);
    Ok(out)
}

/// Writes `scale · shrink(z, threshold)` into `z`.
pub(crate) fn shrink_in_place<T: Scalar>(z: &mut [T], threshold: T, scale: T, spec: &PenaltySpec) {
    let zero = T::zero();
    match (&spec.kind, &spec.groups) {
        (PenaltyKind::Lasso, _) | (_, GroupIndex::Elementwise { .. }) => {
            for v in z.iter_mut() {
                let a = v.abs();
                *v = if a > threshold {
                    scale * v.signum() * (a - threshold)
                } else {
                    zero
                };
            }
        }
        (PenaltyKind::GroupLasso, groups) => {
            for g in 0..groups.num_groups() {
                let norm = groups
                    .members(g)
                    .fold(zero, |acc, i| acc + z[i] * z[i])
                    .sqrt();
                let factor = if norm > threshold {
                    scale * (T::one() - threshold / norm)
                } else {
                    zero
                };
                for i in groups.members(g) {
                    z[i] = factor * z[i];
                }
            }
        }
    }
}

/// Keeps the entries of `w` whose group is active in `gamma`, zeroes the rest.
pub fn proj_support<T: Scalar>(w: &Tensor<T>, gamma: &Tensor<T>, spec: &PenaltySpec) -> Result<Tensor<T>> {
    w.same_shape(gamma)?;
    spec.check(w)?;
    let mut out = w.clone();
    let (o, gd) = (out.data_mut(), gamma.data());
    for g in 0..spec.num_groups() {
        let active = spec.groups.members(g).any(|i| !gd[i].is_zero());
        if !active {
            for i in spec.groups.members(g) {
                o[i] = T::zero();
            }
        }
    }
    Ok(out)
}

/// Per-group activity of `gamma` (nonzero group norm).
pub fn support<T: Scalar>(gamma: &Tensor<T>, spec: &PenaltySpec) -> Result<Vec<bool>> {
    spec.check(gamma)?;
    let d = gamma.data();
    Ok((0..spec.num_groups())
        .map(|g| spec.groups.members(g).any(|i| !d[i].is_zero()))
        .collect())
}

pub const MOREAU_TOL: f64 = 1e-10;

/// Moreau-decomposition consistency of `(z, gamma)` at the default tolerance.
pub fn moreau_check<T: Scalar>(z: &Tensor<T>, gamma: &Tensor<T>, kappa: T, spec: &PenaltySpec) -> bool {
    moreau_check_tol(z, gamma, kappa, spec, MOREAU_TOL)
}

/// Active groups must satisfy `z^g = γ^g/κ + ∂Ω(γ)^g`; inactive groups need
/// `‖z^g‖ ≤ 1`. Comparisons use `tol · max(1, |z_i|)`.
pub fn moreau_check_tol<T: Scalar>(
    z: &Tensor<T>,
    gamma: &Tensor<T>,
    kappa: T,
    spec: &PenaltySpec,
    tol: f64,
) -> bool {
    if z.shape() != gamma.shape() || spec.check(z).is_err() {
        return false;
    }
    let kappa = kappa.as_f64();
    let (zd, gd) = (z.data(), gamma.data());
    let per_element = spec.kind == PenaltyKind::Lasso;
    for g in 0..spec.num_groups() {
        if per_element {
            for i in spec.groups.members(g) {
                let (zi, gi) = (zd[i].as_f64(), gd[i].as_f64());
                let ok = if gi == 0.0 {
                    zi.abs() <= 1.0 + tol
                } else {
                    (zi - (gi / kappa + gi.signum())).abs() <= tol * zi.abs().max(1.0)
                };
                if !ok {
                    return false;
                }
            }
            continue;
        }
        let gnorm = spec
            .groups
            .members(g)
            .map(|i| gd[i].as_f64().powi(2))
            .sum::<f64>()
            .sqrt();
        if gnorm == 0.0 {
            let znorm = spec
                .groups
                .members(g)
                .map(|i| zd[i].as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            if znorm > 1.0 + tol {
                return false;
            }
        } else {
            for i in spec.groups.members(g) {
                let (zi, gi) = (zd[i].as_f64(), gd[i].as_f64());
                if (zi - (gi / kappa + gi / gnorm)).abs() > tol * zi.abs().max(1.0) {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn omega_cases() {
        let lasso = PenaltySpec::for_weight(PenaltyKind::Lasso, &[3]);
        assert_eq!(omega(&t(&[0.0, 0.0, 0.0]), &lasso).unwrap(), 0.0);
        assert_eq!(omega(&t(&[1.0, -2.0, 3.0]), &lasso).unwrap(), 6.0);
        let gl = PenaltySpec::for_weight(PenaltyKind::GroupLasso, &[2, 2]);
        let g = Tensor::new(vec![2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(omega(&g, &gl).unwrap(), 5.0);
        assert!(omega(&t(&[1.0]), &gl).is_err());
    }

    #[test]
    fn prox_closed_forms() {
        let lasso = PenaltySpec::for_weight(PenaltyKind::Lasso, &[1]);
        assert_eq!(prox(&t(&[0.5]), 3.0, &lasso).unwrap().data(), &[0.0]);
        assert_eq!(prox(&t(&[3.0]), 2.0, &lasso).unwrap().data(), &[4.0]);
        assert_eq!(prox(&t(&[-3.0]), 2.0, &lasso).unwrap().data(), &[-4.0]);

        let gl = PenaltySpec::for_weight(PenaltyKind::GroupLasso, &[1, 2]);
        // ‖z‖ = 2 ⇒ factor 1 − 1/2
        let z = Tensor::new(vec![1, 2], vec![1.2, 1.6]).unwrap();
        let g: Tensor = prox(&z, 1.0, &gl).unwrap();
        assert!((g.data()[0] - 0.6).abs() < 1e-15 && (g.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn prox_rejects_nonpositive_kappa() {
        let lasso = PenaltySpec::for_weight(PenaltyKind::Lasso, &[1]);
        assert!(matches!(prox(&t(&[1.0]), 0.0, &lasso), Err(Error::Argument(_))));
        assert!(prox(&t(&[1.0]), -1.0, &lasso).is_err());
    }

    #[test]
    fn prox_dead_zone_gives_exact_zeros() {
        let gl = PenaltySpec::for_weight(PenaltyKind::GroupLasso, &[2, 3]);
        let z = Tensor::new(vec![2, 3], vec![0.5, 0.5, 0.5, 2.0, 0.0, 0.0]).unwrap();
        let g = prox(&z, 1.0, &gl).unwrap();
        assert_eq!(&g.data()[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(g.data()[3], 1.0);
    }

    #[test]
    fn projection_cases() {
        let gl = PenaltySpec::for_weight(PenaltyKind::GroupLasso, &[2, 2]);
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let zero = Tensor::zeros(&[2, 2]);
        assert_eq!(proj_support(&w, &zero, &gl).unwrap(), zero);
        let full = Tensor::new(vec![2, 2], vec![0.1, 0.0, 0.0, -0.2]).unwrap();
        assert_eq!(proj_support(&w, &full, &gl).unwrap(), w);
        let mixed = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 0.3]).unwrap();
        assert_eq!(proj_support(&w, &mixed, &gl).unwrap().data(), &[0.0, 0.0, 3.0, 4.0]);

        let lasso = PenaltySpec::for_weight(PenaltyKind::Lasso, &[2, 2]);
        assert_eq!(proj_support(&w, &mixed, &lasso).unwrap().data(), &[0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn moreau_cases() {
        let lasso = PenaltySpec::for_weight(PenaltyKind::Lasso, &[1]);
        let z = t(&[3.0]);
        let g = prox(&z, 2.0, &lasso).unwrap();
        assert!(moreau_check(&z, &g, 2.0, &lasso));

        let small = t(&[0.3]);
        assert!(moreau_check(&small, &prox(&small, 5.0, &lasso).unwrap(), 5.0, &lasso));

        let gl = PenaltySpec::for_weight(PenaltyKind::GroupLasso, &[2, 3]);
        let z = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 0.1, 0.2, -0.3]).unwrap();
        let mut g = prox(&z, 1.5, &gl).unwrap();
        assert!(moreau_check(&z, &g, 1.5, &gl));
        g.data_mut()[1] += 1e-3;
        assert!(!moreau_check(&z, &g, 1.5, &gl));
    }

    #[test]
    fn explicit_groups_validate() {
        assert!(GroupIndex::explicit(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(GroupIndex::explicit(vec![vec![0]], 2).is_err());
        assert!(GroupIndex::explicit(vec![vec![0, 5]], 2).is_err());
        let g = GroupIndex::explicit(vec![vec![1], vec![0]], 2).unwrap();
        assert_eq!(g.owner(0), Some(1));
    }
}
