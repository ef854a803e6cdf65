//! Layer-wise subset / intersection algebra and pairwise protocol-stack merging.

use rayon::prelude::*;

use crate::error::AlgebraError;
use crate::model::{Direction, LayerValue, ProtocolStack};

/// How two layer values must relate for the merged stack to keep that layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MergeMode {
    /// Keep the intersection whenever it is non-empty.
    #[default]
    Intersection,
    /// Keep a layer only when the source value is a subset of the
    /// destination value. Drops flows the intersection rule keeps; exposed
    /// for comparison runs.
    StrictSubset,
}

fn check_layers(a: &LayerValue, b: &LayerValue) -> Result<(), AlgebraError> {
    match (a.layer(), b.layer()) {
        (Some(x), Some(y)) if x != y => Err(AlgebraError::LayerMismatch(x, y)),
        _ => Ok(()),
    }
}

/// `true` iff every concrete value of `a` is also a value of `b`. `Any` is a
/// superset of everything and a subset only of `Any`.
pub fn layer_subset(a: &LayerValue, b: &LayerValue) -> Result<bool, AlgebraError> {
    check_layers(a, b)?;
    Ok(subset_unchecked(a, b))
}

pub(crate) fn subset_unchecked(a: &LayerValue, b: &LayerValue) -> bool {
    match (a, b) {
        (_, LayerValue::Any) => true,
        (LayerValue::Any, _) => false,
        (LayerValue::Named(x), LayerValue::Named(y)) => x.is_subset(*y),
        (LayerValue::Ports(x), LayerValue::Ports(y)) => x.is_subset(y),
        _ => false,
    }
}

/// Exact intersection of two values of the same layer; `None` when disjoint.
pub fn layer_intersect(a: &LayerValue, b: &LayerValue) -> Result<Option<LayerValue>, AlgebraError> {
    check_layers(a, b)?;
    Ok(intersect_unchecked(a, b))
}

pub(crate) fn intersect_unchecked(a: &LayerValue, b: &LayerValue) -> Option<LayerValue> {
    match (a, b) {
        (LayerValue::Any, other) | (other, LayerValue::Any) => Some(other.clone()),
        (LayerValue::Named(x), LayerValue::Named(y)) => x.intersect(*y).map(LayerValue::Named),
        (LayerValue::Ports(x), LayerValue::Ports(y)) => x.intersect(y).map(LayerValue::from_port_set),
        _ => None,
    }
}

/// Merges an outbound stack of one device with an inbound stack of another.
/// Returns the layer-wise intersection when all four layers survive.
///
/// The result carries `FromDevice`: it describes traffic leaving the
/// source device.
pub fn merge_stacks(src: &ProtocolStack, dst: &ProtocolStack) -> Option<ProtocolStack> {
    merge_stacks_with(src, dst, MergeMode::Intersection)
}

pub fn merge_stacks_with(src: &ProtocolStack, dst: &ProtocolStack, mode: MergeMode) -> Option<ProtocolStack> {
    let layer = |a: &LayerValue, b: &LayerValue| match mode {
        MergeMode::Intersection => intersect_unchecked(a, b),
        MergeMode::StrictSubset if subset_unchecked(a, b) => intersect_unchecked(a, b),
        MergeMode::StrictSubset => None,
    };
    Some(ProtocolStack {
        network: layer(&src.network, &dst.network)?,
        transport: layer(&src.transport, &dst.transport)?,
        src_port: layer(&src.src_port, &dst.src_port)?,
        dst_port: layer(&src.dst_port, &dst.dst_port)?,
        direction: Direction::FromDevice,
    })
}

/// All non-empty pairwise merges of `src × dst`, ordered by
/// `(src index, dst index)`. Duplicates are kept.
pub fn merge_acls(src: &[ProtocolStack], dst: &[ProtocolStack]) -> Vec<ProtocolStack> {
    merge_acls_with(src, dst, MergeMode::Intersection)
}

pub fn merge_acls_with(src: &[ProtocolStack], dst: &[ProtocolStack], mode: MergeMode) -> Vec<ProtocolStack> {
    merge_acl_pairs(src, dst, mode).into_iter().map(|(_, _, s)| s).collect()
}

/// Like [`merge_acls_with`] but keeps the indices of the contributing pair.
pub fn merge_acl_pairs(
    src: &[ProtocolStack],
    dst: &[ProtocolStack],
    mode: MergeMode,
) -> Vec<(usize, usize, ProtocolStack)> {
    // Small lists dominate in practice; only fan out for big cross products.
    const PARALLEL_THRESHOLD: usize = 4096;
    let pair = |i: usize, j: usize| merge_stacks_with(&src[i], &dst[j], mode).map(|s| (i, j, s));
    if src.len() * dst.len() >= PARALLEL_THRESHOLD {
        (0..src.len())
            .into_par_iter()
            .flat_map_iter(|i| (0..dst.len()).filter_map(move |j| pair(i, j)))
            .collect()
    } else {
        (0..src.len())
            .flat_map(|i| (0..dst.len()).filter_map(move |j| pair(i, j)))
            .collect()
    }
}
