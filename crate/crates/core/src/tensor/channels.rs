//! Channel regrouping primitives used to fold the augmented depthwise output
//! back into vector layout.

use super::{split_channels, Tensor};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;

/// Explicit partition of `in_channels` input channels into output groups;
/// output channel `o` is the sum of the input channels listed in `groups[o]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPlan {
    in_channels: usize,
    groups: Vec<Vec<usize>>,
}

impl GroupPlan {
    pub fn new(in_channels: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; in_channels];
        for g in &groups {
            if g.is_empty() {
                return Err(invalid!("empty channel group"));
            }
            for &c in g {
                if c >= in_channels {
                    return Err(invalid!("channel {c} out of range for {in_channels} channels"));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(invalid!("channel {c} appears in more than one group"));
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(invalid!("channel {c} is not covered by any group"));
        }
        Ok(GroupPlan {
            in_channels,
            groups,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

pub fn sum_channel_groups<T: Real>(t: &Tensor<T>, plan: &GroupPlan) -> Result<Tensor<T>> {
    let (rows, c) = split_channels(t.shape())?;
    if c != plan.in_channels {
        return Err(shape_err!(
            "tensor has {c} channels, plan expects {}",
            plan.in_channels
        ));
    }
    let s = plan.out_channels();
    let x = t.data();
    let mut out = Vec::with_capacity(rows * s);
    for r in 0..rows {
        let px = &x[r * c..(r + 1) * c];
        for g in &plan.groups {
            let mut acc = px[g[0]];
            for &i in &g[1..] {
                acc = acc + px[i];
            }
            out.push(acc);
        }
    }
    let mut shape = t.shape().to_vec();
    *shape.last_mut().unwrap() = s;
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`sum_channel_groups`]: every input channel receives the
/// gradient of the group it belongs to.
pub(crate) fn sum_channel_groups_backward<T: Real>(
    grad: &Tensor<T>,
    plan: &GroupPlan,
) -> Tensor<T> {
    let (rows, s) = split_channels(grad.shape()).expect("gradient has axes");
    let c = plan.in_channels;
    let mut out = vec![T::zero(); rows * c];
    for r in 0..rows {
        for (o, g) in plan.groups.iter().enumerate() {
            let v = grad.data()[r * s + o];
            for &i in g {
                out[r * c + i] = v;
            }
        }
    }
    let mut shape = grad.shape().to_vec();
    *shape.last_mut().unwrap() = c;
    Tensor::from_parts(shape, out)
}

pub(crate) fn validate_permutation(perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(invalid!("{perm:?} is not a permutation"));
        }
    }
    Ok(())
}

/// `inv[perm[o]] = o`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (o, &p) in perm.iter().enumerate() {
        inv[p] = o;
    }
    inv
}

/// Output channel `p` holds input channel `perm[p]`.
pub fn permute_channels<T: Real>(t: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    validate_permutation(perm)?;
    if perm.len() != t.channels() {
        return Err(shape_err!(
            "permutation of {} channels applied to {} channels",
            perm.len(),
            t.channels()
        ));
    }
    gather_channels(t, perm)
}

/// Output channel `p` holds input channel `index[p]` (repeats allowed).
pub(crate) fn gather_channels<T: Real>(t: &Tensor<T>, index: &[usize]) -> Result<Tensor<T>> {
    let (rows, c) = split_channels(t.shape())?;
    if let Some(&bad) = index.iter().find(|&&i| i >= c) {
        return Err(shape_err!("channel {bad} out of range for {c} channels"));
    }
    let x = t.data();
    let mut out = Vec::with_capacity(rows * index.len());
    for r in 0..rows {
        out.extend(index.iter().map(|&i| x[r * c + i]));
    }
    let mut shape = t.shape().to_vec();
    *shape.last_mut().unwrap() = index.len();
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`gather_channels`].
pub(crate) fn scatter_channels<T: Real>(
    grad: &Tensor<T>,
    index: &[usize],
    in_channels: usize,
) -> Tensor<T> {
    let (rows, s) = split_channels(grad.shape()).expect("gradient has axes");
    let mut out = vec![T::zero(); rows * in_channels];
    for r in 0..rows {
        for (o, &i) in index.iter().enumerate() {
            let dst = &mut out[r * in_channels + i];
            *dst = *dst + grad.data()[r * s + o];
        }
    }
    let mut shape = grad.shape().to_vec();
    *shape.last_mut().unwrap() = in_channels;
    Tensor::from_parts(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(values: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![1, 1, values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn group_sum_examples() {
        let t = px(&[1.0, 2.0, 3.0, 4.0]);
        let plan = GroupPlan::new(4, vec![vec![0, 2], vec![1, 3]]).unwrap();
        assert_eq!(sum_channel_groups(&t, &plan).unwrap().data(), &[4.0, 6.0]);

        let id = GroupPlan::new(4, (0..4).map(|i| vec![i]).collect()).unwrap();
        assert_eq!(sum_channel_groups(&t, &id).unwrap(), t);

        let all = GroupPlan::new(4, vec![vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(sum_channel_groups(&t, &all).unwrap().data(), &[10.0]);
    }

    #[test]
    fn group_plan_must_partition() {
        assert!(GroupPlan::new(3, vec![vec![0, 1]]).is_err());
        assert!(GroupPlan::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(GroupPlan::new(3, vec![vec![0, 1], vec![2, 3]]).is_err());
        assert!(GroupPlan::new(2, vec![vec![0, 1], vec![]]).is_err());
    }

    #[test]
    fn permutation_examples() {
        let t = px(&[1.0, 2.0, 3.0]);
        assert_eq!(permute_channels(&t, &[0, 1, 2]).unwrap(), t);
        assert_eq!(permute_channels(&t, &[2, 1, 0]).unwrap().data(), &[3.0, 2.0, 1.0]);
        let perm = [1, 2, 0];
        let inv = invert_permutation(&perm);
        let back = permute_channels(&permute_channels(&t, &perm).unwrap(), &inv).unwrap();
        assert_eq!(back, t);
        assert!(permute_channels(&t, &[0, 0, 1]).is_err());
        assert!(permute_channels(&t, &[0, 1]).is_err());
    }
}
