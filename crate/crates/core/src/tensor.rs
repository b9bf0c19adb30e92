//! Dense tensors with labeled axes.
//!
//! Every multi-dimensional quantity in this crate (cost tensors, transport
//! plans, scaling vectors, clique kernels) is a `LabeledTensor`: a row-major
//! dense array whose axes carry integer labels. All binary operations align
//! operands *by label*, never by position, so a marginal stored over axes
//! `[3]` multiplies correctly into a plan stored over `[1, 3, 4]` regardless
//! of axis order.
//!
//! Operations are pure and single-threaded with a fixed accumulation order
//! (row-major over the frame operand). Callers that parallelize do so over
//! disjoint tensors, which keeps results bitwise reproducible across thread
//! counts.

use crate::error::{Error, Result};
use std::fmt;

/// Identifier for a tensor axis. Problems use small integers (node ids,
/// variable ids); equality of labels is what makes two axes "the same".
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct AxisLabel(pub usize);

impl fmt::Display for AxisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Dense row-major tensor over labeled axes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTensor {
    axes: Vec<(AxisLabel, usize)>,
    values: Vec<f64>,
}

fn check_axes(axes: &[(AxisLabel, usize)]) -> Result<usize> {
    let mut len: usize = 1;
    for (i, &(label, size)) in axes.iter().enumerate() {
        if size == 0 {
            return Err(Error::Contract(format!("axis {label} has size 0")));
        }
        if axes[..i].iter().any(|&(l, _)| l == label) {
            return Err(Error::DuplicateLabel(label));
        }
        len = len
            .checked_mul(size)
            .ok_or_else(|| Error::Contract("tensor size overflows usize".into()))?;
    }
    Ok(len)
}

/// Row-major strides for the given axis sizes.
fn strides(axes: &[(AxisLabel, usize)]) -> Vec<usize> {
    let mut s = vec![1usize; axes.len()];
    for i in (0..axes.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * axes[i + 1].1;
    }
    s
}

/// Walk `sizes` in row-major order, calling `f(flat, off)` where `off`
/// advances by `other_strides[ax]` per step of axis `ax`. This is how a second
/// operand (with axes mapped to frame strides, 0 where absent) is kept in
/// lockstep with the frame tensor without re-deriving indices.
fn for_each_aligned(sizes: &[usize], other_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = sizes.iter().product();
    let ndim = sizes.len();
    let mut idx = vec![0usize; ndim];
    let mut off = 0usize;
    for flat in 0..n {
        f(flat, off);
        for ax in (0..ndim).rev() {
            idx[ax] += 1;
            off += other_strides[ax];
            if idx[ax] < sizes[ax] {
                break;
            }
            idx[ax] = 0;
            off -= sizes[ax] * other_strides[ax];
        }
    }
}

impl LabeledTensor {
    /// Build a tensor from axes and row-major values.
    pub fn new(axes: Vec<(AxisLabel, usize)>, values: Vec<f64>) -> Result<Self> {
        let len = check_axes(&axes)?;
        if values.len() != len {
            return Err(Error::Contract(format!(
                "expected {len} values for the given axes, got {}",
                values.len()
            )));
        }
        Ok(LabeledTensor { axes, values })
    }

    pub fn ones(axes: &[(AxisLabel, usize)]) -> Result<Self> {
        let len = check_axes(axes)?;
        Ok(LabeledTensor {
            axes: axes.to_vec(),
            values: vec![1.0; len],
        })
    }

    pub fn zeros(axes: &[(AxisLabel, usize)]) -> Result<Self> {
        let len = check_axes(axes)?;
        Ok(LabeledTensor {
            axes: axes.to_vec(),
            values: vec![0.0; len],
        })
    }

    /// Zero-axis tensor holding a single value.
    pub fn scalar(v: f64) -> Self {
        LabeledTensor {
            axes: Vec::new(),
            values: vec![v],
        }
    }

    /// Build entry-by-entry from the multi-index (in axis order).
    pub fn from_fn(
        axes: Vec<(AxisLabel, usize)>,
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self> {
        let len = check_axes(&axes)?;
        let ndim = axes.len();
        let mut idx = vec![0usize; ndim];
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f(&idx));
            for ax in (0..ndim).rev() {
                idx[ax] += 1;
                if idx[ax] < axes[ax].1 {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(LabeledTensor { axes, values })
    }

    pub fn axes(&self) -> &[(AxisLabel, usize)] {
        &self.axes
    }

    pub fn labels(&self) -> Vec<AxisLabel> {
        self.axes.iter().map(|&(l, _)| l).collect()
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn size_of(&self, label: AxisLabel) -> Option<usize> {
        self.axes
            .iter()
            .find(|&&(l, _)| l == label)
            .map(|&(_, s)| s)
    }

    pub fn has_label(&self, label: AxisLabel) -> bool {
        self.size_of(label).is_some()
    }

    /// Entry at a multi-index given in this tensor's axis order.
    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.axes.len());
        let st = strides(&self.axes);
        let flat: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        self.values[flat]
    }

    /// For each axis of `frame_axes`, the stride of the same label in
    /// `self`, or 0 if absent. Errors if sizes disagree on a shared label.
    fn strides_for_frame(&self, frame_axes: &[(AxisLabel, usize)]) -> Result<Vec<usize>> {
        let own = strides(&self.axes);
        let mut out = vec![0usize; frame_axes.len()];
        for (i, &(label, fsize)) in frame_axes.iter().enumerate() {
            if let Some(pos) = self.axes.iter().position(|&(l, _)| l == label) {
                let osize = self.axes[pos].1;
                if osize != fsize {
                    return Err(Error::SizeMismatch {
                        label,
                        left: fsize,
                        right: osize,
                    });
                }
                out[i] = own[pos];
            }
        }
        Ok(out)
    }

    fn require_subset_of(&self, frame: &LabeledTensor) -> Result<()> {
        for &(l, _) in &self.axes {
            if !frame.has_label(l) {
                return Err(Error::UnknownLabel(l));
            }
        }
        Ok(())
    }

    fn require_same_labels(&self, other: &LabeledTensor) -> Result<()> {
        self.require_subset_of(other).and_then(|_| {
            if self.axes.len() == other.axes.len() {
                Ok(())
            } else {
                Err(Error::LabelMismatch {
                    detail: format!("{:?} vs {:?}", self.labels(), other.labels()),
                })
            }
        })
    }

    /// Marginalize onto `keep`: sum over all axes not listed. The result
    /// keeps this tensor's axis order. Accumulation runs in row-major order
    /// of the source, so total mass is preserved up to that fixed order.
    pub fn project(&self, keep: &[AxisLabel]) -> Result<Self> {
        for (i, &l) in keep.iter().enumerate() {
            if !self.has_label(l) {
                return Err(Error::UnknownLabel(l));
            }
            if keep[..i].contains(&l) {
                return Err(Error::DuplicateLabel(l));
            }
        }
        let kept: Vec<(AxisLabel, usize)> = self
            .axes
            .iter()
            .copied()
            .filter(|&(l, _)| keep.contains(&l))
            .collect();
        let out = LabeledTensor::zeros(&kept)?;
        let dest_strides = out.strides_for_frame(&self.axes)?;
        let sizes: Vec<usize> = self.axes.iter().map(|&(_, s)| s).collect();
        let mut out = out;
        for_each_aligned(&sizes, &dest_strides, |flat, off| {
            out.values[off] += self.values[flat];
        });
        Ok(out)
    }

    /// Log-domain marginalization: entries are logs, result is
    /// `log sum exp` over the dropped axes, max-shifted per output cell.
    pub fn project_logsumexp(&self, keep: &[AxisLabel]) -> Result<Self> {
        for (i, &l) in keep.iter().enumerate() {
            if !self.has_label(l) {
                return Err(Error::UnknownLabel(l));
            }
            if keep[..i].contains(&l) {
                return Err(Error::DuplicateLabel(l));
            }
        }
        let kept: Vec<(AxisLabel, usize)> = self
            .axes
            .iter()
            .copied()
            .filter(|&(l, _)| keep.contains(&l))
            .collect();
        let mut maxes = LabeledTensor::zeros(&kept)?;
        maxes.values.fill(f64::NEG_INFINITY);
        let dest_strides = maxes.strides_for_frame(&self.axes)?;
        let sizes: Vec<usize> = self.axes.iter().map(|&(_, s)| s).collect();
        for_each_aligned(&sizes, &dest_strides, |flat, off| {
            if self.values[flat] > maxes.values[off] {
                maxes.values[off] = self.values[flat];
            }
        });
        let mut acc = LabeledTensor::zeros(&kept)?;
        for_each_aligned(&sizes, &dest_strides, |flat, off| {
            let m = maxes.values[off];
            if m > f64::NEG_INFINITY {
                acc.values[off] += (self.values[flat] - m).exp();
            }
        });
        for (a, &m) in acc.values.iter_mut().zip(&maxes.values) {
            *a = if m > f64::NEG_INFINITY {
                m + a.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        Ok(acc)
    }

    /// Outer product of factors with pairwise disjoint labels; the result's
    /// axes are the factors' axes concatenated in order.
    pub fn outer(factors: &[&LabeledTensor]) -> Result<Self> {
        let mut axes: Vec<(AxisLabel, usize)> = Vec::new();
        for f in factors {
            axes.extend_from_slice(&f.axes);
        }
        check_axes(&axes)?;
        let mut values = vec![1.0];
        for f in factors {
            let mut next = Vec::with_capacity(values.len() * f.values.len());
            for &v in &values {
                for &x in &f.values {
                    next.push(v * x);
                }
            }
            values = next;
        }
        Ok(LabeledTensor { axes, values })
    }

    fn broadcast_op(&self, s: &LabeledTensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        s.require_subset_of(self)?;
        let ost = s.strides_for_frame(&self.axes)?;
        let sizes: Vec<usize> = self.axes.iter().map(|&(_, x)| x).collect();
        let mut out = self.clone();
        for_each_aligned(&sizes, &ost, |flat, off| {
            out.values[flat] = f(self.values[flat], s.values[off]);
        });
        Ok(out)
    }

    /// Multiply `s` into this tensor, aligning axes by label; `s` may cover
    /// any subset of this tensor's axes and is broadcast over the rest.
    pub fn broadcast_mul(&self, s: &LabeledTensor) -> Result<Self> {
        self.broadcast_op(s, |a, b| a * b)
    }

    /// Add `s` into this tensor with the same alignment rules as
    /// `broadcast_mul`.
    pub fn broadcast_add(&self, s: &LabeledTensor) -> Result<Self> {
        self.broadcast_op(s, |a, b| a + b)
    }

    /// Elementwise product; both operands must cover the same label set
    /// (axis order may differ).
    pub fn hadamard(&self, other: &LabeledTensor) -> Result<Self> {
        self.require_same_labels(other)?;
        self.broadcast_op(other, |a, b| a * b)
    }

    /// Elementwise quotient over identical label sets. A zero denominator is
    /// a numeric error carrying the offending frame index.
    pub fn elementwise_div(&self, other: &LabeledTensor) -> Result<Self> {
        self.require_same_labels(other)?;
        let ost = other.strides_for_frame(&self.axes)?;
        let sizes: Vec<usize> = self.axes.iter().map(|&(_, x)| x).collect();
        let mut out = self.clone();
        let mut bad: Option<usize> = None;
        for_each_aligned(&sizes, &ost, |flat, off| {
            let d = other.values[off];
            if d == 0.0 && bad.is_none() {
                bad = Some(flat);
            }
            out.values[flat] = self.values[flat] / d;
        });
        if let Some(index) = bad {
            return Err(Error::Numeric {
                index: Some(index),
                reason: "division by zero".into(),
            });
        }
        Ok(out)
    }

    /// Sum of the elementwise product over identical label sets.
    pub fn inner(&self, other: &LabeledTensor) -> Result<f64> {
        self.require_same_labels(other)?;
        let ost = other.strides_for_frame(&self.axes)?;
        let sizes: Vec<usize> = self.axes.iter().map(|&(_, x)| x).collect();
        let mut acc = 0.0;
        for_each_aligned(&sizes, &ost, |flat, off| {
            acc += self.values[flat] * other.values[off];
        });
        Ok(acc)
    }

    /// Sum of absolute differences over identical label sets.
    pub fn l1_diff(&self, other: &LabeledTensor) -> Result<f64> {
        self.require_same_labels(other)?;
        let ost = other.strides_for_frame(&self.axes)?;
        let sizes: Vec<usize> = self.axes.iter().map(|&(_, x)| x).collect();
        let mut acc = 0.0;
        for_each_aligned(&sizes, &ost, |flat, off| {
            acc += (self.values[flat] - other.values[off]).abs();
        });
        Ok(acc)
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Relative entropy `sum b (log b - log m - 1)` of `self` with respect
    /// to `m`. Entries with `b = 0` contribute zero; `b > 0` where `m = 0`
    /// is a numeric error.
    pub fn rel_entropy(&self, m: &LabeledTensor) -> Result<f64> {
        self.require_same_labels(m)?;
        let ost = m.strides_for_frame(&self.axes)?;
        let sizes: Vec<usize> = self.axes.iter().map(|&(_, x)| x).collect();
        let mut acc = 0.0;
        let mut bad: Option<usize> = None;
        for_each_aligned(&sizes, &ost, |flat, off| {
            let b = self.values[flat];
            if b == 0.0 {
                return;
            }
            let mm = m.values[off];
            if mm <= 0.0 {
                if bad.is_none() {
                    bad = Some(flat);
                }
                return;
            }
            acc += b * (b.ln() - mm.ln() - 1.0);
        });
        if let Some(index) = bad {
            return Err(Error::Numeric {
                index: Some(index),
                reason: "positive mass where the reference measure vanishes".into(),
            });
        }
        Ok(acc)
    }

    /// Elementwise geometric mean of tensors over a common label set.
    /// All entries must be strictly positive.
    pub fn geo_mean(ts: &[&LabeledTensor]) -> Result<Self> {
        let first = *ts
            .first()
            .ok_or_else(|| Error::Contract("geo_mean of an empty list".into()))?;
        if ts.len() == 1 {
            for (i, &v) in first.values.iter().enumerate() {
                if v <= 0.0 {
                    return Err(Error::Numeric {
                        index: Some(i),
                        reason: "geometric mean needs strictly positive entries".into(),
                    });
                }
            }
            return Ok(first.clone());
        }
        let mut prod = first.clone();
        for (i, &v) in prod.values.iter().enumerate() {
            if v <= 0.0 {
                return Err(Error::Numeric {
                    index: Some(i),
                    reason: "geometric mean needs strictly positive entries".into(),
                });
            }
        }
        for t in &ts[1..] {
            if t.min() <= 0.0 {
                return Err(Error::Numeric {
                    index: None,
                    reason: "geometric mean needs strictly positive entries".into(),
                });
            }
            prod = prod.hadamard(t)?;
        }
        prod.powf(1.0 / ts.len() as f64)
    }

    /// Elementwise power. Entries must be nonnegative, and the result must
    /// stay finite.
    pub fn powf(&self, e: f64) -> Result<Self> {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if *v < 0.0 {
                return Err(Error::Numeric {
                    index: Some(i),
                    reason: "power of a negative entry".into(),
                });
            }
            *v = v.powf(e);
            if !v.is_finite() {
                return Err(Error::Numeric {
                    index: Some(i),
                    reason: format!("non-finite result of power {e}"),
                });
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(i: usize) -> AxisLabel {
        AxisLabel(i)
    }

    fn t2x2(vals: [f64; 4]) -> LabeledTensor {
        LabeledTensor::new(vec![(l(0), 2), (l(1), 2)], vals.to_vec()).unwrap()
    }

    #[test]
    fn project_drops_axes_in_order() {
        let t = t2x2([1.0, 2.0, 3.0, 4.0]);
        let p0 = t.project(&[l(0)]).unwrap();
        assert_eq!(p0.values(), &[3.0, 7.0]);
        let p1 = t.project(&[l(1)]).unwrap();
        assert_eq!(p1.values(), &[4.0, 6.0]);
    }

    #[test]
    fn project_matches_loop_oracle() {
        // independent oracle: explicit triple loop over a 3x4x2 tensor
        let axes = vec![(l(5), 3), (l(7), 4), (l(2), 2)];
        let t = LabeledTensor::from_fn(axes, |idx| {
            (1 + idx[0] * 31 + idx[1] * 7 + idx[2] * 3) as f64 * 0.137
        })
        .unwrap();
        let p = t.project(&[l(5), l(2)]).unwrap();
        assert_eq!(p.axes(), &[(l(5), 3), (l(2), 2)]);
        for a in 0..3 {
            for c in 0..2 {
                let mut want = 0.0;
                for b in 0..4 {
                    want += t.get(&[a, b, c]);
                }
                assert!((p.get(&[a, c]) - want).abs() < 1e-12);
            }
        }
        // mass preserved up to accumulation order
        assert!((p.total_mass() - t.total_mass()).abs() < 1e-12 * t.total_mass().abs());
    }

    #[test]
    fn project_unknown_label_errors() {
        let t = t2x2([1.0; 4]);
        assert!(matches!(t.project(&[l(9)]), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn outer_of_two_vectors() {
        let u = LabeledTensor::new(vec![(l(0), 2)], vec![0.5, 0.5]).unwrap();
        let v = LabeledTensor::new(vec![(l(1), 2)], vec![0.2, 0.8]).unwrap();
        let o = LabeledTensor::outer(&[&u, &v]).unwrap();
        assert_eq!(o.values(), &[0.10, 0.40, 0.10, 0.40]);
    }

    #[test]
    fn outer_then_project_recovers_factor() {
        let u = LabeledTensor::new(vec![(l(0), 3)], vec![0.3, 1.1, 0.6]).unwrap();
        let v = LabeledTensor::new(vec![(l(1), 2)], vec![0.25, 0.75]).unwrap();
        let o = LabeledTensor::outer(&[&u, &v]).unwrap();
        let p = o.project(&[l(0)]).unwrap();
        for i in 0..3 {
            assert!((p.values()[i] - u.values()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn outer_rejects_shared_label() {
        let u = LabeledTensor::new(vec![(l(0), 2)], vec![1.0, 2.0]).unwrap();
        assert!(LabeledTensor::outer(&[&u, &u]).is_err());
    }

    #[test]
    fn broadcast_on_first_axis() {
        let t = t2x2([1.0; 4]);
        let s = LabeledTensor::new(vec![(l(0), 2)], vec![2.0, 3.0]).unwrap();
        let r = t.broadcast_mul(&s).unwrap();
        assert_eq!(r.values(), &[2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn broadcast_aligns_by_label_not_position() {
        let t = LabeledTensor::new(
            vec![(l(0), 2), (l(1), 3)],
            (0..6).map(|v| v as f64).collect(),
        )
        .unwrap();
        // s carries the same labels in swapped order; result must match
        // multiplying the transposed table, not positional pairing.
        let s = LabeledTensor::from_fn(vec![(l(1), 3), (l(0), 2)], |idx| {
            (10 * idx[0] + idx[1]) as f64 + 1.0
        })
        .unwrap();
        let r = t.broadcast_mul(&s).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                let want = t.get(&[a, b]) * s.get(&[b, a]);
                assert_eq!(r.get(&[a, b]), want);
            }
        }
    }

    #[test]
    fn broadcast_by_ones_is_identity_bitwise() {
        let t = LabeledTensor::from_fn(vec![(l(0), 3), (l(1), 2)], |idx| {
            ((idx[0] + 1) as f64).sqrt() * 0.3 + idx[1] as f64
        })
        .unwrap();
        let ones = LabeledTensor::ones(&[(l(1), 2)]).unwrap();
        let r = t.broadcast_mul(&ones).unwrap();
        assert_eq!(r.values(), t.values());
    }

    #[test]
    fn broadcast_size_mismatch_errors() {
        let t = t2x2([1.0; 4]);
        let s = LabeledTensor::new(vec![(l(0), 3)], vec![1.0; 3]).unwrap();
        assert!(matches!(
            t.broadcast_mul(&s),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn div_by_zero_carries_index() {
        let a = t2x2([1.0; 4]);
        let b = t2x2([1.0, 0.0, 2.0, 2.0]);
        match a.elementwise_div(&b) {
            Err(Error::Numeric { index, .. }) => assert_eq!(index, Some(1)),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn inner_with_permuted_operand() {
        let a = LabeledTensor::from_fn(vec![(l(0), 2), (l(1), 3)], |idx| {
            (idx[0] * 3 + idx[1]) as f64
        })
        .unwrap();
        let b = LabeledTensor::from_fn(vec![(l(1), 3), (l(0), 2)], |idx| {
            (idx[0] + 10 * idx[1]) as f64
        })
        .unwrap();
        let mut want = 0.0;
        for x in 0..2 {
            for y in 0..3 {
                want += a.get(&[x, y]) * b.get(&[y, x]);
            }
        }
        assert_eq!(a.inner(&b).unwrap(), want);
    }

    #[test]
    fn rel_entropy_of_reference_is_minus_mass() {
        let b = t2x2([0.25; 4]);
        // H(b | b) = sum b (0 - 1) = -1 for unit mass
        assert!((b.rel_entropy(&b).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rel_entropy_zero_entries_contribute_zero() {
        let b = t2x2([0.0, 0.5, 0.5, 0.0]);
        let m = t2x2([0.0, 0.5, 0.5, 1.0]);
        let h = b.rel_entropy(&m).unwrap();
        assert!((h + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rel_entropy_positive_mass_on_null_reference_errors() {
        let b = t2x2([0.5, 0.5, 0.0, 0.0]);
        let m = t2x2([0.5, 0.0, 0.5, 0.5]);
        assert!(matches!(b.rel_entropy(&m), Err(Error::Numeric { .. })));
    }

    #[test]
    fn geo_mean_single_is_identity() {
        let a = t2x2([4.0, 1.0, 2.0, 8.0]);
        let g = LabeledTensor::geo_mean(&[&a]).unwrap();
        assert_eq!(g.values(), a.values());
    }

    #[test]
    fn geo_mean_pair() {
        let a = LabeledTensor::new(vec![(l(0), 2)], vec![4.0, 1.0]).unwrap();
        let b = LabeledTensor::new(vec![(l(0), 2)], vec![1.0, 4.0]).unwrap();
        let g = LabeledTensor::geo_mean(&[&a, &b]).unwrap();
        assert!((g.values()[0] - 2.0).abs() < 1e-15);
        assert!((g.values()[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn geo_mean_rejects_zero() {
        let a = LabeledTensor::new(vec![(l(0), 2)], vec![1.0, 0.0]).unwrap();
        let b = LabeledTensor::new(vec![(l(0), 2)], vec![1.0, 2.0]).unwrap();
        assert!(LabeledTensor::geo_mean(&[&a, &b]).is_err());
    }

    #[test]
    fn logsumexp_projection_matches_linear_path() {
        let t = LabeledTensor::from_fn(vec![(l(0), 3), (l(1), 4)], |idx| {
            -((idx[0] as f64 - 1.0).powi(2) + idx[1] as f64) * 2.5
        })
        .unwrap();
        let lin = t.map(f64::exp).project(&[l(0)]).unwrap();
        let log = t.project_logsumexp(&[l(0)]).unwrap();
        for i in 0..3 {
            assert!((log.values()[i].exp() - lin.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_tensor_roundtrip() {
        let s = LabeledTensor::scalar(3.5);
        assert_eq!(s.len(), 1);
        assert_eq!(s.total_mass(), 3.5);
        let p = s.project(&[]).unwrap();
        assert_eq!(p.values(), &[3.5]);
    }

    #[test]
    fn duplicate_label_rejected() {
        assert!(LabeledTensor::new(vec![(l(1), 2), (l(1), 2)], vec![0.0; 4]).is_err());
    }
}
