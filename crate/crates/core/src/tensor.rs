//! Dense non-negative tensors addressed by named indices.
//!
//! Storage is row-major: for indices `(i0, i1, ..., iN)` with cardinalities
//! `(c0, c1, ..., cN)` the flat offset is `((i0 * c1 + i1) * c2 + i2) ...`,
//! so the last index varies fastest. A tensor with no indices is a scalar
//! holding exactly one value.
//!
//! Every contraction in the crate goes through [`product_then_marginalize`],
//! which multiplies factors pairwise left to right and sums an index out as
//! soon as no remaining factor (and not the requested output) mentions it.

use serde::{Deserialize, Serialize};

use crate::error::{GctfError, Result};

/// Default guard used for divisions, logarithms and negative powers.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// A named tensor axis together with the number of values it takes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Index {
    pub label: String,
    pub cardinality: usize,
}

impl Index {
    pub fn new(label: impl Into<String>, cardinality: usize) -> Self {
        Index {
            label: label.into(),
            cardinality,
        }
    }
}

impl std::fmt::Display for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.label, self.cardinality)
    }
}

/// Shorthand for building index lists in builders and tests.
pub fn indices(spec: &[(&str, usize)]) -> Vec<Index> {
    spec.iter().map(|&(l, c)| Index::new(l, c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    indices: Vec<Index>,
    values: Vec<f64>,
}

/// Right-hand side of a binary element-wise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a DenseTensor),
    Scalar(f64),
}

impl<'a> From<&'a DenseTensor> for Operand<'a> {
    fn from(t: &'a DenseTensor) -> Self {
        Operand::Tensor(t)
    }
}

impl From<f64> for Operand<'_> {
    fn from(s: f64) -> Self {
        Operand::Scalar(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Multiply,
    /// `a / max(b, eps)`
    Divide,
    /// `max(a, eps) ^ exponent`; the right-hand operand is ignored.
    Power(f64),
}

fn check_index_list(indices: &[Index]) -> Result<()> {
    for (n, idx) in indices.iter().enumerate() {
        if idx.cardinality == 0 {
            return Err(GctfError::Shape(format!(
                "index `{}` has zero cardinality",
                idx.label
            )));
        }
        if indices[..n].iter().any(|o| o.label == idx.label) {
            return Err(GctfError::Shape(format!(
                "index `{}` appears twice",
                idx.label
            )));
        }
    }
    Ok(())
}

fn volume(indices: &[Index]) -> usize {
    indices.iter().map(|i| i.cardinality).product()
}

fn strides(indices: &[Index]) -> Vec<usize> {
    let mut out = vec![1; indices.len()];
    for ax in (0..indices.len().saturating_sub(1)).rev() {
        out[ax] = out[ax + 1] * indices[ax + 1].cardinality;
    }
    out
}

impl DenseTensor {
    /// Builds a tensor, rejecting negative or non-finite entries.
    pub fn new(indices: Vec<Index>, values: Vec<f64>) -> Result<Self> {
        check_index_list(&indices)?;
        let expected = volume(&indices);
        if values.len() != expected {
            return Err(GctfError::Shape(format!(
                "{} values supplied for shape {:?} ({} expected)",
                values.len(),
                shape_of(&indices),
                expected
            )));
        }
        if let Some((pos, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(GctfError::InvalidValue(format!(
                "entry {pos} is {v}; tensors must be finite and non-negative"
            )));
        }
        Ok(DenseTensor { indices, values })
    }

    pub(crate) fn from_parts(indices: Vec<Index>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), volume(&indices));
        DenseTensor { indices, values }
    }

    pub fn filled(indices: Vec<Index>, value: f64) -> Result<Self> {
        check_index_list(&indices)?;
        let n = volume(&indices);
        DenseTensor::new(indices, vec![value; n])
    }

    pub fn zeros(indices: Vec<Index>) -> Result<Self> {
        DenseTensor::filled(indices, 0.0)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        DenseTensor::new(Vec::new(), vec![value])
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn labels(&self) -> Vec<&str> {
        self.indices.iter().map(|i| i.label.as_str()).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        shape_of(&self.indices)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.indices.len()
    }

    pub fn axis_of(&self, label: &str) -> Option<usize> {
        self.indices.iter().position(|i| i.label == label)
    }

    pub fn same_layout(&self, other: &DenseTensor) -> bool {
        self.indices == other.indices
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.indices.len() {
            return Err(GctfError::Shape(format!(
                "multi-index of length {} for a {}-way tensor",
                multi.len(),
                self.indices.len()
            )));
        }
        let mut off = 0;
        for (v, idx) in multi.iter().zip(&self.indices) {
            if *v >= idx.cardinality {
                return Err(GctfError::Shape(format!(
                    "value {v} out of range for index {idx}"
                )));
            }
            off = off * idx.cardinality + v;
        }
        Ok(off)
    }

    /// Inverse of [`DenseTensor::offset`].
    pub fn multi_index(&self, offset: usize) -> Result<Vec<usize>> {
        if offset >= self.values.len() {
            return Err(GctfError::Shape(format!(
                "offset {offset} out of range for {} entries",
                self.values.len()
            )));
        }
        let mut rem = offset;
        let mut out = vec![0; self.indices.len()];
        for ax in (0..self.indices.len()).rev() {
            let c = self.indices[ax].cardinality;
            out[ax] = rem % c;
            rem /= c;
        }
        Ok(out)
    }

    pub fn get(&self, multi: &[usize]) -> Result<f64> {
        Ok(self.values[self.offset(multi)?])
    }

    pub fn set(&mut self, multi: &[usize], value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(GctfError::InvalidValue(format!(
                "cannot store {value}; tensors must be finite and non-negative"
            )));
        }
        let off = self.offset(multi)?;
        self.values[off] = value;
        Ok(())
    }

    /// Same values under new labels; cardinalities are kept.
    pub fn relabel(&self, labels: &[&str]) -> Result<DenseTensor> {
        if labels.len() != self.indices.len() {
            return Err(GctfError::Shape(format!(
                "{} labels for a {}-way tensor",
                labels.len(),
                self.indices.len()
            )));
        }
        let indices: Vec<Index> = labels
            .iter()
            .zip(&self.indices)
            .map(|(l, i)| Index::new(*l, i.cardinality))
            .collect();
        check_index_list(&indices)?;
        Ok(DenseTensor::from_parts(indices, self.values.clone()))
    }

    /// Applies `f` to every entry, re-checking non-negativity.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<DenseTensor> {
        DenseTensor::new(
            self.indices.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    fn zip_with(&self, rhs: Operand<'_>, f: impl Fn(f64, f64) -> f64) -> Result<DenseTensor> {
        let values = match rhs {
            Operand::Tensor(b) => {
                if b.indices != self.indices {
                    return Err(GctfError::Shape(format!(
                        "element-wise operands disagree: {:?} vs {:?}",
                        self.labels(),
                        b.labels()
                    )));
                }
                self.values
                    .iter()
                    .zip(&b.values)
                    .map(|(&x, &y)| f(x, y))
                    .collect()
            }
            Operand::Scalar(s) => {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(GctfError::InvalidValue(format!(
                        "scalar operand {s} must be finite and non-negative"
                    )));
                }
                self.values.iter().map(|&x| f(x, s)).collect()
            }
        };
        Ok(DenseTensor::from_parts(self.indices.clone(), values))
    }

    /// Hadamard product.
    pub fn multiply<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<DenseTensor> {
        self.zip_with(rhs.into(), |x, y| x * y)
    }

    /// `self / max(rhs, eps)` entry by entry.
    pub fn divide<'a>(&self, rhs: impl Into<Operand<'a>>, eps: f64) -> Result<DenseTensor> {
        check_eps(eps)?;
        self.zip_with(rhs.into(), |x, y| x / y.max(eps))
    }

    /// `max(self, eps) ^ exponent`. Zero bases are clamped to `eps` first, so
    /// `0^0` evaluates to 1 and negative exponents never divide by zero.
    pub fn powf(&self, exponent: f64, eps: f64) -> Result<DenseTensor> {
        check_eps(eps)?;
        if !exponent.is_finite() {
            return Err(GctfError::InvalidValue(format!(
                "exponent {exponent} is not finite"
            )));
        }
        Ok(DenseTensor::from_parts(
            self.indices.clone(),
            self.values
                .iter()
                .map(|&x| x.max(eps).powf(exponent))
                .collect(),
        ))
    }

    /// Reorders the axes to follow `order`, which must be a permutation of the labels.
    pub fn permuted(&self, order: &[&str]) -> Result<DenseTensor> {
        if order.len() != self.indices.len() {
            return Err(GctfError::Shape(format!(
                "permutation {:?} does not cover {:?}",
                order,
                self.labels()
            )));
        }
        let axes = order
            .iter()
            .map(|l| {
                self.axis_of(l).ok_or_else(|| {
                    GctfError::Shape(format!("index `{l}` not present in {:?}", self.labels()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if axes.iter().enumerate().all(|(n, &a)| n == a) {
            return Ok(self.clone());
        }
        let new_indices: Vec<Index> = axes.iter().map(|&a| self.indices[a].clone()).collect();
        check_index_list(&new_indices)?;
        let src_strides = strides(&self.indices);
        let step: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let dims: Vec<usize> = new_indices.iter().map(|i| i.cardinality).collect();
        let mut values = Vec::with_capacity(self.values.len());
        let mut counter = vec![0usize; dims.len()];
        let mut src = 0usize;
        for _ in 0..self.values.len() {
            values.push(self.values[src]);
            advance(&mut counter, &dims, &mut src, &step);
        }
        Ok(DenseTensor::from_parts(new_indices, values))
    }
}

/// A 0/1 tensor marking observed (1) and missing (0) entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(DenseTensor);

impl Mask {
    pub fn new(tensor: DenseTensor) -> Result<Self> {
        if let Some(v) = tensor.values.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(GctfError::InvalidValue(format!(
                "mask entries must be 0 or 1, found {v}"
            )));
        }
        Ok(Mask(tensor))
    }

    pub fn ones(indices: Vec<Index>) -> Result<Self> {
        Ok(Mask(DenseTensor::filled(indices, 1.0)?))
    }

    pub fn zeros(indices: Vec<Index>) -> Result<Self> {
        Ok(Mask(DenseTensor::zeros(indices)?))
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.0
    }

    pub fn indices(&self) -> &[Index] {
        &self.0.indices
    }

    pub fn is_observed(&self, offset: usize) -> bool {
        self.0.values[offset] != 0.0
    }

    pub fn observed_count(&self) -> usize {
        self.0.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Marks the entry at `offset` as missing.
    pub fn hide(&mut self, offset: usize) {
        self.0.values[offset] = 0.0;
    }
}

/// Dispatching form of the three element-wise operations.
pub fn elementwise(
    op: Elementwise,
    a: &DenseTensor,
    rhs: Operand<'_>,
    eps: f64,
) -> Result<DenseTensor> {
    match op {
        Elementwise::Multiply => a.multiply(rhs),
        Elementwise::Divide => a.divide(rhs, eps),
        Elementwise::Power(e) => a.powf(e, eps),
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(GctfError::InvalidValue(format!(
            "epsilon must be positive, got {eps}"
        )))
    }
}

fn shape_of(indices: &[Index]) -> Vec<usize> {
    indices.iter().map(|i| i.cardinality).collect()
}

/// Odometer step over `dims`, moving one offset along with it.
#[inline]
fn advance(counter: &mut [usize], dims: &[usize], offset: &mut usize, step: &[usize]) {
    for ax in (0..dims.len()).rev() {
        counter[ax] += 1;
        *offset += step[ax];
        if counter[ax] < dims[ax] {
            return;
        }
        *offset -= step[ax] * dims[ax];
        counter[ax] = 0;
    }
}

/// Sums `a` over every index not listed in `keep`. The result keeps `a`'s
/// relative axis order; `keep` may be empty (grand total as a scalar).
pub fn marginal_sum(a: &DenseTensor, keep: &[&str]) -> Result<DenseTensor> {
    for l in keep {
        if a.axis_of(l).is_none() {
            return Err(GctfError::Shape(format!(
                "cannot keep `{l}`: not an index of {:?}",
                a.labels()
            )));
        }
    }
    let out_indices: Vec<Index> = a
        .indices
        .iter()
        .filter(|i| keep.contains(&i.label.as_str()))
        .cloned()
        .collect();
    if out_indices.len() == a.indices.len() {
        return Ok(a.clone());
    }
    let out_strides = strides(&out_indices);
    let step: Vec<usize> = a
        .indices
        .iter()
        .map(|i| {
            out_indices
                .iter()
                .position(|o| o.label == i.label)
                .map_or(0, |p| out_strides[p])
        })
        .collect();
    let dims = shape_of(&a.indices);
    let mut out = vec![0.0; volume(&out_indices)];
    let mut counter = vec![0usize; dims.len()];
    let mut dst = 0usize;
    for &v in &a.values {
        out[dst] += v;
        advance(&mut counter, &dims, &mut dst, &step);
    }
    Ok(DenseTensor::from_parts(out_indices, out))
}

/// Multiplies two tensors over the union of their indices and keeps `out`,
/// summing everything else.
fn contract_pair(a: &DenseTensor, b: &DenseTensor, out: &[Index]) -> DenseTensor {
    let mut union: Vec<Index> = a.indices.clone();
    for i in &b.indices {
        if !union.iter().any(|u| u.label == i.label) {
            union.push(i.clone());
        }
    }
    let dims = shape_of(&union);
    let stride_in = |t: &[Index]| -> Vec<usize> {
        let s = strides(t);
        union
            .iter()
            .map(|u| {
                t.iter()
                    .position(|x| x.label == u.label)
                    .map_or(0, |p| s[p])
            })
            .collect()
    };
    let sa = stride_in(&a.indices);
    let sb = stride_in(&b.indices);
    let so = stride_in(out);

    let mut result = vec![0.0; volume(out)];
    let total = volume(&union);
    let n = dims.len();
    let mut counter = vec![0usize; n];
    let (mut oa, mut ob, mut oo) = (0usize, 0usize, 0usize);
    for _ in 0..total {
        result[oo] += a.values[oa] * b.values[ob];
        for ax in (0..n).rev() {
            counter[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            oo += so[ax];
            if counter[ax] < dims[ax] {
                break;
            }
            let d = dims[ax];
            oa -= sa[ax] * d;
            ob -= sb[ax] * d;
            oo -= so[ax] * d;
            counter[ax] = 0;
        }
    }
    DenseTensor::from_parts(out.to_vec(), result)
}

/// Computes `sum over non-kept indices of prod_f factors[f]`, returned with
/// axes in the order of `keep`.
pub fn product_then_marginalize(factors: &[&DenseTensor], keep: &[&str]) -> Result<DenseTensor> {
    let Some((first, rest)) = factors.split_first() else {
        return Err(GctfError::Shape("no factors to contract".into()));
    };

    let mut universe: Vec<Index> = Vec::new();
    for f in factors {
        for i in &f.indices {
            match universe.iter().find(|u| u.label == i.label) {
                Some(u) if u.cardinality != i.cardinality => {
                    return Err(GctfError::Shape(format!(
                        "index `{}` has cardinality {} and {}",
                        i.label, u.cardinality, i.cardinality
                    )))
                }
                Some(_) => {}
                None => universe.push(i.clone()),
            }
        }
    }
    for (n, l) in keep.iter().enumerate() {
        if !universe.iter().any(|u| u.label == *l) {
            return Err(GctfError::Shape(format!(
                "cannot keep `{l}`: no factor carries it"
            )));
        }
        if keep[..n].contains(l) {
            return Err(GctfError::Shape(format!("`{l}` requested twice")));
        }
    }

    let needed_after = |pos: usize| -> Vec<&str> {
        let mut need: Vec<&str> = keep.to_vec();
        for f in &rest[pos..] {
            for i in &f.indices {
                if !need.contains(&i.label.as_str()) {
                    need.push(i.label.as_str());
                }
            }
        }
        need
    };

    let first_keep: Vec<&str> = first
        .labels()
        .into_iter()
        .filter(|l| needed_after(0).contains(l))
        .collect();
    let mut acc = marginal_sum(first, &first_keep)?;
    for (pos, f) in rest.iter().enumerate() {
        let need = needed_after(pos + 1);
        let mut out: Vec<Index> = Vec::new();
        for i in acc.indices.iter().chain(&f.indices) {
            if need.contains(&i.label.as_str()) && !out.iter().any(|o| o.label == i.label) {
                out.push(i.clone());
            }
        }
        acc = contract_pair(&acc, f, &out);
    }
    acc.permuted(keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(spec: &[(&str, usize)], values: &[f64]) -> DenseTensor {
        DenseTensor::new(indices(spec), values.to_vec()).unwrap()
    }

    #[test]
    fn multiply_divide_power() {
        let a = t(&[("i", 2)], &[1.0, 2.0]);
        let b = t(&[("i", 2)], &[3.0, 4.0]);
        assert_eq!(a.multiply(&b).unwrap().values(), &[3.0, 8.0]);
        assert_eq!(a.divide(&a, 1e-12).unwrap().values(), &[1.0, 1.0]);
        let c = t(&[("i", 2)], &[4.0, 9.0]);
        let r = c.powf(-1.0, 1e-12).unwrap();
        assert_eq!(r.values()[0], 0.25);
        assert!((r.values()[1] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn guarded_division_and_zero_power() {
        let z = t(&[("i", 2)], &[0.0, 1.0]);
        let q = z.divide(&z, 1e-12).unwrap();
        assert_eq!(q.values(), &[0.0, 1.0]);
        assert_eq!(z.powf(0.0, 1e-12).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(z.powf(-1.0, 0.5).unwrap().values(), &[2.0, 1.0]);
        assert!(z.divide(&z, 0.0).is_err());
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = t(&[("i", 2)], &[1.0, 2.0]);
        let b = t(&[("j", 2)], &[1.0, 2.0]);
        assert!(matches!(a.multiply(&b), Err(GctfError::Shape(_))));
        let s = elementwise(Elementwise::Multiply, &a, Operand::Scalar(2.0), 1e-12).unwrap();
        assert_eq!(s.values(), &[2.0, 4.0]);
    }

    #[test]
    fn construction_rejects_bad_values() {
        assert!(DenseTensor::new(indices(&[("i", 2)]), vec![1.0, -1.0]).is_err());
        assert!(DenseTensor::new(indices(&[("i", 2)]), vec![1.0, f64::NAN]).is_err());
        assert!(DenseTensor::new(indices(&[("i", 2)]), vec![1.0]).is_err());
        assert!(DenseTensor::new(indices(&[("i", 0)]), vec![]).is_err());
        assert!(DenseTensor::new(indices(&[("i", 1), ("i", 1)]), vec![1.0]).is_err());
    }

    #[test]
    fn marginal_sum_examples() {
        let a = t(&[("i", 2), ("j", 2)], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(marginal_sum(&a, &["i"]).unwrap().values(), &[3.0, 7.0]);
        assert_eq!(marginal_sum(&a, &["j"]).unwrap().values(), &[4.0, 6.0]);
        assert_eq!(marginal_sum(&a, &["j", "i"]).unwrap(), a);
        let total = marginal_sum(&a, &[]).unwrap();
        assert_eq!(total.ndim(), 0);
        assert_eq!(total.values(), &[10.0]);
        assert!(marginal_sum(&a, &["k"]).is_err());
    }

    #[test]
    fn contraction_examples() {
        let a = t(&[("i", 2), ("r", 2)], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[("j", 2), ("r", 2)], &[1.0, 0.0, 0.0, 1.0]);
        let c = product_then_marginalize(&[&a, &b], &["i", "j"]).unwrap();
        assert_eq!(c.values(), &[1.0, 2.0, 3.0, 4.0]);

        let single = product_then_marginalize(&[&a], &["i", "r"]).unwrap();
        assert_eq!(single, a);

        let ones_a = DenseTensor::filled(indices(&[("i", 2), ("r", 2)]), 1.0).unwrap();
        let ones_b = DenseTensor::filled(indices(&[("j", 2), ("r", 2)]), 1.0).unwrap();
        let s = product_then_marginalize(&[&ones_a, &ones_b], &["i", "j"]).unwrap();
        assert!(s.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn contraction_output_follows_keep_order() {
        let a = t(&[("i", 2), ("r", 2)], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[("j", 3), ("r", 2)], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let ij = product_then_marginalize(&[&a, &b], &["i", "j"]).unwrap();
        let ji = product_then_marginalize(&[&a, &b], &["j", "i"]).unwrap();
        assert_eq!(ji.labels(), vec!["j", "i"]);
        assert_eq!(ij.permuted(&["j", "i"]).unwrap(), ji);
    }

    #[test]
    fn contraction_rejects_cardinality_conflict() {
        let a = t(&[("i", 2), ("r", 2)], &[1.0; 4]);
        let b = t(&[("j", 2), ("r", 3)], &[1.0; 6]);
        assert!(matches!(
            product_then_marginalize(&[&a, &b], &["i", "j"]),
            Err(GctfError::Shape(_))
        ));
        assert!(product_then_marginalize(&[&a], &["z"]).is_err());
    }

    #[test]
    fn offsets_are_row_major() {
        let a = DenseTensor::zeros(indices(&[("i", 2), ("j", 3), ("k", 4)])).unwrap();
        assert_eq!(a.offset(&[0, 0, 1]).unwrap(), 1);
        assert_eq!(a.offset(&[0, 1, 0]).unwrap(), 4);
        assert_eq!(a.offset(&[1, 0, 0]).unwrap(), 12);
        assert_eq!(a.multi_index(23).unwrap(), vec![1, 2, 3]);
        assert!(a.offset(&[2, 0, 0]).is_err());
    }
}
