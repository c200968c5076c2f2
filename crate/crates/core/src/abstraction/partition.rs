//! Set partitions of the finite state space.
//!
//! Block labels are always canonical: block `k` is the one whose
//! lowest-indexed state appears `k`-th when scanning states in order. All
//! constructors re-establish this labeling, so partitions can be compared
//! with plain equality.

use crate::error::{OpeError, Result};

/// A partition of `{0, .., n_states-1}` into `n_blocks` nonempty blocks,
/// stored as the state-to-block map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    block_of: Vec<usize>,
    n_blocks: usize,
}

impl Partition {
    /// Builds a partition from any state-to-label map, relabeling blocks by
    /// first occurrence.
    pub fn from_block_of(labels: &[usize]) -> Self {
        let mut remap: Vec<Option<usize>> = vec![None; labels.len().max(labels.iter().map(|&l| l + 1).max().unwrap_or(0))];
        let mut block_of = Vec::with_capacity(labels.len());
        let mut next = 0usize;
        for &l in labels {
            let id = match remap[l] {
                Some(id) => id,
                None => {
                    let id = next;
                    remap[l] = Some(id);
                    next += 1;
                    id
                }
            };
            block_of.push(id);
        }
        Self { block_of, n_blocks: next }
    }

    /// One block per state.
    pub fn identity(n_states: usize) -> Self {
        Self { block_of: (0..n_states).collect(), n_blocks: n_states }
    }

    /// All states in a single block.
    pub fn single_block(n_states: usize) -> Self {
        Self { block_of: vec![0; n_states], n_blocks: n_states.min(1) }
    }

    pub fn n_states(&self) -> usize {
        self.block_of.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    /// Block index of a state.
    pub fn block(&self, state: usize) -> usize {
        self.block_of[state]
    }

    pub fn block_of(&self) -> &[usize] {
        &self.block_of
    }

    /// Member states of every block, in index order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_blocks];
        for (s, &x) in self.block_of.iter().enumerate() {
            out[x].push(s);
        }
        out
    }

    pub fn is_identity(&self) -> bool {
        self.n_blocks == self.n_states()
    }

    /// True when every block of `self` lies inside one block of `other`.
    pub fn refines(&self, other: &Partition) -> bool {
        if self.n_states() != other.n_states() {
            return false;
        }
        let mut image: Vec<Option<usize>> = vec![None; self.n_blocks];
        for (s, &x) in self.block_of.iter().enumerate() {
            match image[x] {
                None => image[x] = Some(other.block_of[s]),
                Some(y) if y == other.block_of[s] => {}
                Some(_) => return false,
            }
        }
        true
    }
}

/// Composes an `outer` partition of `inner`'s blocks with `inner`,
/// producing a partition of the ground states.
pub fn compose(outer: &Partition, inner: &Partition) -> Result<Partition> {
    if outer.n_states() != inner.n_blocks() {
        return Err(OpeError::InvalidArgument(format!(
            "outer partition covers {} items but inner has {} blocks",
            outer.n_states(),
            inner.n_blocks()
        )));
    }
    let labels: Vec<usize> = inner.block_of.iter().map(|&x| outer.block_of[x]).collect();
    Ok(Partition::from_block_of(&labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_relabeling_by_first_occurrence() {
        let p = Partition::from_block_of(&[5, 2, 5, 9, 2]);
        assert_eq!(p.block_of(), &[0, 1, 0, 2, 1]);
        assert_eq!(p.n_blocks(), 3);
    }

    #[test]
    fn identity_and_single_block() {
        let id = Partition::identity(4);
        assert_eq!(id.n_blocks(), 4);
        assert!(id.is_identity());
        let single = Partition::single_block(4);
        assert_eq!(single.n_blocks(), 1);
        assert_eq!(single.blocks(), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn refinement_relation() {
        let fine = Partition::from_block_of(&[0, 1, 2, 2]);
        let coarse = Partition::from_block_of(&[0, 0, 1, 1]);
        assert!(fine.refines(&coarse));
        assert!(!coarse.refines(&fine));
        assert!(fine.refines(&fine));
    }

    #[test]
    fn compose_with_identity_on_either_side() {
        let inner = Partition::from_block_of(&[0, 0, 1, 2]);
        let outer_id = Partition::identity(3);
        assert_eq!(compose(&outer_id, &inner).unwrap(), inner);
        let inner_id = Partition::identity(4);
        let outer = Partition::from_block_of(&[0, 0, 1, 1]);
        let composed = compose(&outer, &inner_id).unwrap();
        assert_eq!(composed, outer);
    }

    #[test]
    fn compose_merges_through_both_layers() {
        let inner = Partition::from_block_of(&[0, 0, 1, 2]); // 4 states -> 3 blocks
        let outer = Partition::from_block_of(&[0, 1, 0]); // 3 blocks -> 2
        let composed = compose(&outer, &inner).unwrap();
        assert_eq!(composed.block_of(), &[0, 0, 1, 0]);
        assert!(composed.n_blocks() <= inner.n_blocks().min(4));
    }

    #[test]
    fn compose_size_mismatch_rejected() {
        let inner = Partition::identity(3);
        let outer = Partition::identity(2);
        assert!(compose(&outer, &inner).is_err());
    }
}
