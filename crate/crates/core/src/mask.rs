//! Sparse test tensors `M` defining the linear functionals `<T, M>`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use crate::tsvd::SpectralFactors;

/// A nonempty sparse weighting of tensor entries.
///
/// Duplicate indices are merged by summing their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFunctionalMask {
    dims: [usize; 3],
    entries: Vec<([usize; 3], f64)>,
    fro: f64,
    l1: f64,
}

/// One-based JSON form of a mask entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub j: usize,
    pub k: usize,
    pub l: usize,
    #[serde(default = "unit_weight")]
    pub w: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Named mask as it appears in spec and mask files (one-based indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub name: String,
    pub entries: Vec<MaskEntry>,
}

impl MaskSpec {
    pub fn to_mask(&self, dims: [usize; 3]) -> Result<LinearFunctionalMask> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                if e.j == 0 || e.k == 0 || e.l == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "mask '{}' uses one-based indices, got ({},{},{})",
                        self.name, e.j, e.k, e.l
                    )));
                }
                Ok(([e.j - 1, e.k - 1, e.l - 1], e.w))
            })
            .collect::<Result<Vec<_>>>()?;
        LinearFunctionalMask::new(dims, entries)
    }

    pub fn from_mask(name: impl Into<String>, mask: &LinearFunctionalMask) -> Self {
        Self {
            name: name.into(),
            entries: mask
                .entries()
                .iter()
                .map(|&([j, k, l], w)| MaskEntry {
                    j: j + 1,
                    k: k + 1,
                    l: l + 1,
                    w,
                })
                .collect(),
        }
    }
}

impl LinearFunctionalMask {
    /// Builds a mask from zero-based `(index, weight)` pairs.
    pub fn new(dims: [usize; 3], entries: Vec<([usize; 3], f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("mask has no entries".into()));
        }
        let mut merged: BTreeMap<[usize; 3], f64> = BTreeMap::new();
        for (idx, w) in entries {
            if idx.iter().zip(&dims).any(|(i, d)| i >= d) {
                return Err(Error::InvalidArgument(format!(
                    "mask index {idx:?} out of range for {dims:?}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("mask weight at {idx:?}")));
            }
            *merged.entry(idx).or_insert(0.0) += w;
        }
        let entries: Vec<_> = merged.into_iter().collect();
        let fro = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        let l1 = entries.iter().map(|(_, w)| w.abs()).sum();
        Ok(Self {
            dims,
            entries,
            fro,
            l1,
        })
    }

    /// Unit weight on a single zero-based entry.
    pub fn single(dims: [usize; 3], index: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![(index, 1.0)])
    }

    /// Parses `j,k,l:w` items joined by `;` (one-based; `:w` defaults to 1).
    pub fn parse(dims: [usize; 3], text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (idx, w) = match item.split_once(':') {
                Some((idx, w)) => (
                    idx,
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad weight in '{item}'")))?,
                ),
                None => (item, 1.0),
            };
            let parts = idx
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::InvalidArgument(format!("bad index in '{item}'")))?;
            if parts.len() != 3 || parts.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "expected one-based 'j,k,l', got '{idx}'"
                )));
            }
            entries.push(([parts[0] - 1, parts[1] - 1, parts[2] - 1], w));
        }
        Self::new(dims, entries)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Merged zero-based entries in lexicographic index order.
    pub fn entries(&self) -> &[([usize; 3], f64)] {
        &self.entries
    }

    pub fn fro(&self) -> f64 {
        self.fro
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.dims,
            self.entries.iter().map(|&(i, w)| (i, c * w)).collect(),
        )
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let entries = self
            .entries
            .iter()
            .map(|&(i, w)| (i, a * w))
            .chain(other.entries.iter().map(|&(i, w)| (i, b * w)))
            .collect();
        Self::new(self.dims, entries)
    }

    pub fn to_dense(&self) -> Tensor3 {
        let mut t = Tensor3::zeros(self.dims);
        for &([j, k, l], w) in &self.entries {
            let off = t.offset(j, k, l);
            t.data_mut()[off] = w;
        }
        t
    }

    /// Mode-3 DFT of every nonzero `(j, k)` tube, keyed by `(j, k)`.
    fn spectral_tubes(&self) -> BTreeMap<(usize, usize), Vec<c64>> {
        let d3 = self.dims[2];
        let mut tubes: BTreeMap<(usize, usize), Vec<c64>> = BTreeMap::new();
        for &([j, k, l], w) in &self.entries {
            let tube = tubes
                .entry((j, k))
                .or_insert_with(|| vec![c64::new(0.0, 0.0); d3]);
            for (t, z) in tube.iter_mut().enumerate() {
                let angle = -2.0 * PI * ((t * l) % d3) as f64 / d3 as f64;
                *z += c64::from_polar(w, angle);
            }
        }
        tubes
    }

    /// `(||U^dagger M||_F^2, ||M V||_F^2)` evaluated on the nonzero fibers of
    /// `M` only.
    pub fn projection_energy(&self, f: &SpectralFactors) -> Result<(f64, f64)> {
        let [d1, d2, d3] = f.dims();
        if [d1, d2, d3] != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} vs factors {:?}",
                self.dims,
                [d1, d2, d3]
            )));
        }
        let r = f.rank();
        let tubes = self.spectral_tubes();
        let mut by_col: BTreeMap<usize, Vec<(usize, &Vec<c64>)>> = BTreeMap::new();
        let mut by_row: BTreeMap<usize, Vec<(usize, &Vec<c64>)>> = BTreeMap::new();
        for ((j, k), tube) in &tubes {
            by_col.entry(*k).or_default().push((*j, tube));
            by_row.entry(*j).or_default().push((*k, tube));
        }
        let mut left = 0.0;
        let mut right = 0.0;
        let mut acc = vec![c64::new(0.0, 0.0); r];
        for t in 0..d3 {
            let (u, v) = (&f.u[t], &f.v[t]);
            // column k of U^H M: sum_j conj(U[j, :]) * m_jk
            for fibers in by_col.values() {
                acc.iter_mut().for_each(|z| *z = c64::new(0.0, 0.0));
                for &(j, tube) in fibers {
                    for (c, z) in acc.iter_mut().enumerate() {
                        *z += u[(j, c)].conj() * tube[t];
                    }
                }
                left += acc.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
            // row j of M V: sum_k m_jk * V[k, :]
            for fibers in by_row.values() {
                acc.iter_mut().for_each(|z| *z = c64::new(0.0, 0.0));
                for &(k, tube) in fibers {
                    for (c, z) in acc.iter_mut().enumerate() {
                        *z += tube[t] * v[(k, c)];
                    }
                }
                right += acc.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        Ok((left / d3 as f64, right / d3 as f64))
    }
}

/// `<T, M>`.
pub fn linear_form(t: &Tensor3, m: &LinearFunctionalMask) -> Result<f64> {
    if t.dims() != m.dims() {
        return Err(Error::DimensionMismatch(format!(
            "tensor {:?} vs mask {:?}",
            t.dims(),
            m.dims()
        )));
    }
    Ok(m.entries()
        .iter()
        .map(|&([j, k, l], w)| w * t.get(j, k, l))
        .sum())
}

/// The four test masks of the simulation study, placed relative to `dims`:
/// a corner entry, an interior entry, a two-entry sum within the first
/// frontal slice and a three-entry sum along the first tube.
pub fn reference_masks(dims: [usize; 3]) -> Vec<MaskSpec> {
    let interior = |d: usize| (2 * d) / 5 + 1;
    let (p1, p2, p3) = (interior(dims[0]), interior(dims[1]), interior(dims[2]));
    let e = |j, k, l| MaskEntry { j, k, l, w: 1.0 };
    let mut masks = vec![
        MaskSpec {
            name: "m1".into(),
            entries: vec![e(1, 1, 1)],
        },
        MaskSpec {
            name: "m2".into(),
            entries: vec![e(p1, p2, p3)],
        },
        MaskSpec {
            name: "m3".into(),
            entries: vec![e(1, 1, 1), e(p1, p2, 1)],
        },
    ];
    if dims[2] >= 3 {
        masks.push(MaskSpec {
            name: "m4".into(),
            entries: vec![e(1, 1, 1), e(1, 1, 2), e(1, 1, 3)],
        });
    }
    masks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_masks() {
        assert!(LinearFunctionalMask::new([2, 2, 2], vec![]).is_err());
        assert!(LinearFunctionalMask::single([2, 2, 2], [2, 0, 0]).is_err());
        assert!(LinearFunctionalMask::new([2, 2, 2], vec![([0, 0, 0], f64::NAN)]).is_err());
    }

    #[test]
    fn merges_duplicates_and_caches_norms() {
        let m = LinearFunctionalMask::new(
            [3, 3, 3],
            vec![([0, 0, 0], 1.0), ([0, 0, 0], 2.0), ([1, 2, 0], -4.0)],
        )
        .unwrap();
        assert_eq!(m.entries().len(), 2);
        assert!((m.fro() - 5.0).abs() < 1e-15);
        assert!((m.l1() - 7.0).abs() < 1e-15);
    }

    #[test]
    fn parses_micro_grammar() {
        let m = LinearFunctionalMask::parse([4, 4, 4], "1,1,1:1.0; 2,3,4:-0.5").unwrap();
        assert_eq!(m.entries(), &[([0, 0, 0], 1.0), ([1, 2, 3], -0.5)]);
        let unit = LinearFunctionalMask::parse([4, 4, 4], "4,4,4").unwrap();
        assert_eq!(unit.entries(), &[([3, 3, 3], 1.0)]);
        assert!(LinearFunctionalMask::parse([4, 4, 4], "0,1,1:1").is_err());
        assert!(LinearFunctionalMask::parse([4, 4, 4], "1,1:1").is_err());
        assert!(LinearFunctionalMask::parse([4, 4, 4], "1,1,1:x").is_err());
        assert!(LinearFunctionalMask::parse([4, 4, 4], "").is_err());
    }

    #[test]
    fn linear_form_basics() {
        let t = Tensor3::from_fn([3, 3, 2], |j, k, l| (j + 10 * k + 100 * l) as f64);
        let single = LinearFunctionalMask::single([3, 3, 2], [2, 1, 1]).unwrap();
        assert_eq!(linear_form(&t, &single).unwrap(), 112.0);
        let pair = LinearFunctionalMask::parse([3, 3, 2], "1,1,1;3,3,1").unwrap();
        assert_eq!(linear_form(&t, &pair).unwrap(), t.get(0, 0, 0) + t.get(2, 2, 0));
        let scaled = pair.scaled(-2.5).unwrap();
        assert_eq!(linear_form(&t, &scaled).unwrap(), -2.5 * linear_form(&t, &pair).unwrap());
    }

    #[test]
    fn mask_spec_round_trip() {
        let m = LinearFunctionalMask::parse([5, 5, 5], "1,2,3:0.5;5,5,5").unwrap();
        let spec = MaskSpec::from_mask("x", &m);
        assert_eq!(spec.to_mask([5, 5, 5]).unwrap(), m);
    }

    #[test]
    fn reference_masks_fit_dims() {
        let dims = [60, 60, 30];
        let masks = reference_masks(dims);
        assert_eq!(masks.len(), 4);
        for spec in &masks {
            spec.to_mask(dims).unwrap();
        }
        assert_eq!(masks[1].entries[0], MaskEntry { j: 25, k: 25, l: 13, w: 1.0 });
    }
}
