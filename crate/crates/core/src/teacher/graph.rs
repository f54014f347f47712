//! Heterogeneous patch/text graph topology.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeType {
    Patch,
    Text,
}

/// Edge relation, named source-type then target-type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    PatchPatch,
    PatchText,
    TextPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

/// Nodes are numbered patches first (`0..P`, the global view included) and
/// then texts (`P..P+C`).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    pub nodes: Vec<NodeType>,
    pub edges: Vec<Edge>,
    num_patches: usize,
}

impl GraphTopology {
    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn num_texts(&self) -> usize {
        self.nodes.len() - self.num_patches
    }

    pub fn count(&self, relation: Relation) -> usize {
        self.edges.iter().filter(|e| e.relation == relation).count()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.dst == node).count()
    }

    /// Which sources each patch target may attend to, over columns
    /// `[patches (pp); texts (tp)]`. `None` when every pair is an edge.
    pub(crate) fn patch_target_mask(&self) -> Result<Option<Rc<Mask>>> {
        let (p, c) = (self.num_patches, self.num_texts());
        let mut allowed = vec![false; p * (p + c)];
        for e in &self.edges {
            match e.relation {
                Relation::PatchPatch => allowed[e.dst * (p + c) + e.src] = true,
                Relation::TextPatch => allowed[e.dst * (p + c) + e.src] = true,
                Relation::PatchText => {}
            }
        }
        finish_mask(p, p + c, allowed, 0)
    }

    /// Which patch sources each text target may attend to (pt edges).
    pub(crate) fn text_target_mask(&self) -> Result<Option<Rc<Mask>>> {
        let (p, c) = (self.num_patches, self.num_texts());
        let mut allowed = vec![false; c * p];
        for e in self.edges.iter().filter(|e| e.relation == Relation::PatchText) {
            allowed[(e.dst - p) * p + e.src] = true;
        }
        finish_mask(c, p, allowed, p)
    }

    fn check(&self) -> Result<()> {
        let p = self.num_patches;
        for e in &self.edges {
            let (s, d) = (self.nodes.get(e.src), self.nodes.get(e.dst));
            let ok = match e.relation {
                Relation::PatchPatch => s == Some(&NodeType::Patch) && d == Some(&NodeType::Patch),
                Relation::PatchText => s == Some(&NodeType::Patch) && d == Some(&NodeType::Text),
                Relation::TextPatch => s == Some(&NodeType::Text) && d == Some(&NodeType::Patch),
            };
            if !ok {
                return Err(Error::Topology(format!("edge {e:?} does not match node types")));
            }
        }
        if self.nodes[..p].iter().any(|n| *n != NodeType::Patch)
            || self.nodes[p..].iter().any(|n| *n != NodeType::Text)
        {
            return Err(Error::Topology("nodes must list patches before texts".into()));
        }
        Ok(())
    }

    /// Builds a topology from explicit edges, checking relation/type agreement.
    pub fn from_edges(num_patches: usize, num_texts: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut nodes = vec![NodeType::Patch; num_patches];
        nodes.extend(std::iter::repeat_n(NodeType::Text, num_texts));
        let topo = Self { nodes, edges, num_patches };
        topo.check()?;
        Ok(topo)
    }
}

fn finish_mask(rows: usize, cols: usize, allowed: Vec<bool>, offset: usize) -> Result<Option<Rc<Mask>>> {
    for r in 0..rows {
        if !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a) {
            return Err(Error::Topology(format!("node {} has no incoming edges", r + offset)));
        }
    }
    if allowed.iter().all(|&a| a) {
        return Ok(None);
    }
    Ok(Some(Rc::new(Mask::new(rows, cols, allowed)?)))
}

/// Full graph over `patches` patch nodes and `texts` text nodes: every
/// ordered patch pair (self-loops included), every patch to every text, and
/// every text to every patch. `texts = 0` gives the patch-only graph.
pub fn build_graph(patches: usize, texts: usize) -> GraphTopology {
    let mut edges = Vec::with_capacity(patches * patches + 2 * patches * texts);
    for dst in 0..patches {
        for src in 0..patches {
            edges.push(Edge { src, dst, relation: Relation::PatchPatch });
        }
    }
    for dst in patches..patches + texts {
        for src in 0..patches {
            edges.push(Edge { src, dst, relation: Relation::PatchText });
        }
    }
    for dst in 0..patches {
        for src in patches..patches + texts {
            edges.push(Edge { src, dst, relation: Relation::TextPatch });
        }
    }
    let mut nodes = vec![NodeType::Patch; patches];
    nodes.extend(std::iter::repeat_n(NodeType::Text, texts));
    GraphTopology { nodes, edges, num_patches: patches }
}
