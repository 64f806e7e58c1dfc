//! Loop chains and their structural signatures.

use crate::mesh::LoopRecord;
use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

/// Structural hash of a loop chain: kernel names, ranges, datasets,
/// stencils, access modes and reductions, in chain order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainSignature(pub u64);

impl fmt::Debug for ChainSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Display for ChainSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// An ordered sequence of loops analysed and executed as one unit.
#[derive(Clone, Debug, Default)]
pub struct LoopChain {
    loops: Vec<LoopRecord>,
}

impl LoopChain {
    /// Builds a chain, renumbering `loop_id` to the position in the chain.
    pub fn new(mut loops: Vec<LoopRecord>) -> Self {
        for (i, l) in loops.iter_mut().enumerate() {
            l.loop_id = i;
        }
        Self { loops }
    }

    pub fn loops(&self) -> &[LoopRecord] {
        &self.loops
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.loops.first().map(LoopRecord::dim)
    }

    pub fn signature(&self) -> ChainSignature {
        // DefaultHasher::new() uses fixed keys, so this is stable within a build.
        let mut h = DefaultHasher::new();
        self.loops.len().hash(&mut h);
        for l in &self.loops {
            l.kernel.name().hash(&mut h);
            l.range.hash(&mut h);
            l.args.len().hash(&mut h);
            for a in &l.args {
                a.dataset.hash(&mut h);
                a.stencil.hash(&mut h);
                a.mode.hash(&mut h);
            }
            l.reduction.map(|r| r.op).hash(&mut h);
        }
        ChainSignature(h.finish())
    }
}

impl From<Vec<LoopRecord>> for LoopChain {
    fn from(loops: Vec<LoopRecord>) -> Self {
        Self::new(loops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ArgSpec, DatasetId, Kernel, Range, Stencil};

    fn lp(name: &str, range: (i64, i64), stencil: Stencil) -> LoopRecord {
        LoopRecord {
            loop_id: 0,
            kernel: Kernel::new(name, |_| {}),
            range: Range::new(&[range]).unwrap(),
            args: vec![
                ArgSpec::read(DatasetId(0), &stencil),
                ArgSpec::write(DatasetId(1), 1),
            ],
            reduction: None,
        }
    }

    #[test]
    fn identical_chains_share_signature() {
        let a = LoopChain::new(vec![lp("a", (0, 8), Stencil::star(1, 1))]);
        let b = LoopChain::new(vec![lp("a", (0, 8), Stencil::star(1, 1))]);
        assert_eq!(a.signature(), b.signature());
    }

    #[test]
    fn permuting_loops_changes_signature() {
        let x = lp("k", (0, 8), Stencil::star(1, 1));
        let y = lp("k", (0, 8), Stencil::identity(1));
        let a = LoopChain::new(vec![x.clone(), y.clone()]);
        let b = LoopChain::new(vec![y, x]);
        assert_ne!(a.signature(), b.signature());
    }

    #[test]
    fn range_change_changes_signature() {
        let a = LoopChain::new(vec![lp("a", (0, 8), Stencil::star(1, 1))]);
        let b = LoopChain::new(vec![lp("a", (0, 9), Stencil::star(1, 1))]);
        assert_ne!(a.signature(), b.signature());
    }
}
