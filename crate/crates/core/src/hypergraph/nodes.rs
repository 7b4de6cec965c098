use serde::{Deserialize, Serialize};

use crate::data::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Poi,
    User,
    Category,
    Slot,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [NodeType::Poi, NodeType::User, NodeType::Category, NodeType::Slot];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Poi => "poi",
            NodeType::User => "user",
            NodeType::Category => "category",
            NodeType::Slot => "slot",
        }
    }
}

/// Global node ordering: POIs, then users, categories and time slots, as contiguous blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpace {
    counts: [usize; 4],
    offsets: [usize; 4],
}

impl NodeSpace {
    pub fn new(pois: usize, users: usize, categories: usize, slots: usize) -> Self {
        let counts = [pois, users, categories, slots];
        let mut offsets = [0; 4];
        for i in 1..4 {
            offsets[i] = offsets[i - 1] + counts[i - 1];
        }
        NodeSpace { counts, offsets }
    }

    pub fn from_vocab(vocab: &Vocab) -> Self {
        NodeSpace::new(
            vocab.poi_count(),
            vocab.user_count(),
            vocab.category_count(),
            vocab.slot_count(),
        )
    }

    pub fn count(&self, t: NodeType) -> usize {
        self.counts[t.index()]
    }

    pub fn offset(&self, t: NodeType) -> usize {
        self.offsets[t.index()]
    }

    pub fn total(&self) -> usize {
        self.offsets[3] + self.counts[3]
    }

    pub fn global(&self, t: NodeType, id: usize) -> usize {
        debug_assert!(id < self.count(t), "{} id {id} out of range", t.name());
        self.offset(t) + id
    }

    pub fn type_of(&self, global: usize) -> NodeType {
        *NodeType::ALL
            .iter()
            .rev()
            .find(|&&t| global >= self.offset(t))
            .expect("offset of the first block is zero")
    }

    pub fn block(&self, t: NodeType) -> std::ops::Range<usize> {
        self.offset(t)..self.offset(t) + self.count(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_contiguous_and_disjoint() {
        let ns = NodeSpace::new(3, 2, 1, 4);
        assert_eq!(ns.total(), 10);
        assert_eq!(ns.block(NodeType::User), 3..5);
        assert_eq!(ns.global(NodeType::Slot, 3), 9);
        for g in 0..ns.total() {
            let t = ns.type_of(g);
            assert!(ns.block(t).contains(&g));
        }
    }
}
