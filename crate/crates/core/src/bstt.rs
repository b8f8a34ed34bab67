//! Binary Sparse Tensor Tree storage.
//!
//! A BSTT is a left-child/right-sibling tree over the nonzero index paths of
//! a sparse tensor. An index node at depth `d` (1-based) holds an index into
//! mode `d`; its first child is the root of the sub-tensor it selects and its
//! next sibling is the following nonzero sub-tensor of the same parent. The
//! first child of a depth-`rank` node is a leaf holding the value.
//!
//! Nodes live in an arena allocated in pre-order, so two trees built from the
//! same nonzeros compare equal node for node.
//!
//! The flat form is the pre-order word stream (index words and value words)
//! plus a parallel depth array. The word stream alone cannot tell a sibling
//! from an ancestor's sibling after a leaf, so reconstruction uses the depths.

use thiserror::Error;

use crate::tensor::{DenseTensor, Shape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BsttError {
    #[error("BSTT storage needs a tensor of rank at least 1")]
    ScalarShape,
    #[error("index {index:?} has wrong arity or is out of bounds for shape {shape}")]
    OutOfBounds { index: Vec<usize>, shape: Shape },
    #[error("duplicate entry at index {0:?}")]
    Duplicate(Vec<usize>),
    #[error("malformed flat BSTT at entry {at}: {reason}")]
    Malformed { at: usize, reason: &'static str },
    #[error("bad BSTT encoding: {0}")]
    Encoding(&'static str),
}

pub type Result<T, E = BsttError> = std::result::Result<T, E>;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum BsttNode {
    Index {
        index: usize,
        child: Option<NodeId>,
        sibling: Option<NodeId>,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
pub struct BsttTensor {
    shape: Shape,
    nodes: Vec<BsttNode>,
    root: Option<NodeId>,
    nnz: usize,
    dropped_zeros: usize,
}

/// Structural equality: same shape and same tree. The construction-time
/// zero-drop count is not part of the tensor.
impl PartialEq for BsttTensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.root == other.root && self.nodes == other.nodes
    }
}

/// One word of the flattened tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlatWord {
    Int(u64),
    Float(f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatBstt {
    pub entries: Vec<FlatWord>,
    pub depths: Vec<u32>,
}

/// Memory footprint in words (one index, value, or pointer each).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryReport {
    pub dense: usize,
    /// Length of the flat word stream.
    pub bstt_flat: usize,
    /// Flat word stream plus the depth array.
    pub bstt_impl: usize,
    pub csf: usize,
    pub nnz: usize,
}

impl BsttTensor {
    /// Builds the tree from `(index, value)` pairs in any order. Zero values
    /// are dropped and counted in [`BsttTensor::dropped_zeros`].
    pub fn from_coordinates(shape: Shape, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if shape.rank() == 0 {
            return Err(BsttError::ScalarShape);
        }
        for (idx, _) in &entries {
            if idx.len() != shape.rank() || idx.iter().zip(shape.dims()).any(|(i, d)| i >= d) {
                return Err(BsttError::OutOfBounds {
                    index: idx.clone(),
                    shape,
                });
            }
        }
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(BsttError::Duplicate(w[0].0.clone()));
        }
        let before = entries.len();
        entries.retain(|(_, v)| *v != 0.0);
        let dropped_zeros = before - entries.len();

        let mut nodes = Vec::with_capacity(entries.len() * (shape.rank() + 1));
        let root = build_level(&entries, 0, shape.rank(), &mut nodes);
        Ok(BsttTensor {
            shape,
            nodes,
            root,
            nnz: entries.len(),
            dropped_zeros,
        })
    }

    pub fn from_dense(d: &DenseTensor) -> Result<Self> {
        let entries = d
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(flat, &v)| (d.shape().unravel(flat), v))
            .collect();
        Self::from_coordinates(d.shape().clone(), entries)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &BsttNode {
        &self.nodes[id]
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn dropped_zeros(&self) -> usize {
        self.dropped_zeros
    }

    pub fn index_node_count(&self) -> usize {
        self.nodes.len() - self.nnz
    }

    /// Nonzero entries in pre-order, i.e. lexicographic index order.
    pub fn entries(&self) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::with_capacity(self.nnz);
        let mut path = Vec::with_capacity(self.shape.rank());
        self.collect(self.root, &mut path, &mut out);
        out
    }

    fn collect(
        &self,
        mut cur: Option<NodeId>,
        path: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        while let Some(id) = cur {
            match self.nodes[id] {
                BsttNode::Index {
                    index,
                    child,
                    sibling,
                } => {
                    path.push(index);
                    self.collect(child, path, out);
                    path.pop();
                    cur = sibling;
                }
                BsttNode::Leaf(v) => {
                    out.push((path.clone(), v));
                    cur = None;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut data = vec![0.0; self.shape.numel()];
        for (idx, v) in self.entries() {
            data[crate::tensor::ravel(&idx, self.shape.dims())] = v;
        }
        DenseTensor::new(self.shape.clone(), data).expect("data sized from shape")
    }

    /// Pre-order traversal: node, first-child subtree, next-sibling subtree.
    pub fn flatten(&self) -> FlatBstt {
        let mut flat = FlatBstt::default();
        let mut stack: Vec<(NodeId, u32)> = Vec::new();
        if let Some(r) = self.root {
            stack.push((r, 1));
        }
        while let Some((id, depth)) = stack.pop() {
            flat.depths.push(depth);
            match self.nodes[id] {
                BsttNode::Index {
                    index,
                    child,
                    sibling,
                } => {
                    flat.entries.push(FlatWord::Int(index as u64));
                    if let Some(s) = sibling {
                        stack.push((s, depth));
                    }
                    if let Some(c) = child {
                        stack.push((c, depth + 1));
                    }
                }
                BsttNode::Leaf(v) => flat.entries.push(FlatWord::Float(v)),
            }
        }
        flat
    }

    /// Rebuilds the tree from its flat form.
    pub fn reconstruct(flat: &FlatBstt, shape: Shape) -> Result<Self> {
        let rank = shape.rank();
        if rank == 0 {
            return Err(BsttError::ScalarShape);
        }
        let bad = |at, reason| Err(BsttError::Malformed { at, reason });
        if flat.entries.len() != flat.depths.len() {
            return bad(0, "entry and depth arrays differ in length");
        }
        let n = flat.entries.len();
        let leaf_depth = rank as u32 + 1;
        let mut nodes = Vec::with_capacity(n);
        // most recent node placed at each depth (index 0 unused)
        let mut last: Vec<Option<NodeId>> = vec![None; rank + 2];
        let mut root = None;
        let mut nnz = 0;

        for (at, (&word, &depth)) in flat.entries.iter().zip(&flat.depths).enumerate() {
            let prev = if at == 0 { 0 } else { flat.depths[at - 1] };
            if depth == 0 || depth > leaf_depth {
                return bad(at, "depth out of range");
            }
            if at == 0 && depth != 1 {
                return bad(at, "first entry must have depth 1");
            }
            if depth > prev + 1 {
                return bad(at, "depth increases by more than one");
            }
            if at > 0 {
                let prev_is_leaf = prev == leaf_depth;
                if !prev_is_leaf && depth != prev + 1 {
                    return bad(at, "index node without a child");
                }
                if prev_is_leaf && depth == leaf_depth {
                    return bad(at, "leaf with a sibling");
                }
            }
            let d = depth as usize;
            let id = nodes.len();
            match word {
                FlatWord::Float(v) => {
                    if depth != leaf_depth {
                        return bad(at, "value word above leaf depth");
                    }
                    if v == 0.0 {
                        return bad(at, "zero-valued leaf");
                    }
                    nodes.push(BsttNode::Leaf(v));
                    nnz += 1;
                    link_child(&mut nodes, last[d - 1], id);
                }
                FlatWord::Int(index) => {
                    if depth == leaf_depth {
                        return bad(at, "index word at leaf depth");
                    }
                    let index = index as usize;
                    if index >= shape.dims()[d - 1] {
                        return bad(at, "index out of bounds");
                    }
                    nodes.push(BsttNode::Index {
                        index,
                        child: None,
                        sibling: None,
                    });
                    match last[d] {
                        Some(sib) => {
                            let BsttNode::Index {
                                index: sib_index,
                                sibling,
                                ..
                            } = &mut nodes[sib]
                            else {
                                unreachable!("only index nodes are tracked at index depths")
                            };
                            if *sib_index >= index {
                                return bad(at, "sibling indices not increasing");
                            }
                            *sibling = Some(id);
                        }
                        None if d == 1 => root = Some(id),
                        None => link_child(&mut nodes, last[d - 1], id),
                    }
                    last[d] = Some(id);
                }
            }
            for slot in last.iter_mut().skip(d + 1) {
                *slot = None;
            }
        }
        if let Some(&d) = flat.depths.last() {
            if d != leaf_depth {
                return bad(n - 1, "stream ends on an index node");
            }
        }
        Ok(BsttTensor {
            shape,
            nodes,
            root,
            nnz,
            dropped_zeros: 0,
        })
    }

    /// Dense copy of the last-mode fiber addressed by `leading`.
    pub fn fiber(&self, leading: &[usize]) -> Result<DenseTensor> {
        let rank = self.shape.rank();
        let dims = self.shape.dims();
        if leading.len() + 1 != rank || leading.iter().zip(dims).any(|(i, d)| i >= d) {
            return Err(BsttError::OutOfBounds {
                index: leading.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut out = vec![0.0; self.shape.last()];
        let mut level = self.root;
        for &want in leading {
            level = self
                .find_sibling(level, want)
                .and_then(|id| self.child_of(id));
            if level.is_none() {
                break;
            }
        }
        let mut cur = level;
        while let Some(id) = cur {
            if let BsttNode::Index {
                index,
                child,
                sibling,
            } = self.nodes[id]
            {
                if let Some(BsttNode::Leaf(v)) = child.map(|c| &self.nodes[c]) {
                    out[index] = *v;
                }
                cur = sibling;
            } else {
                break;
            }
        }
        Ok(DenseTensor::vector(out))
    }

    fn find_sibling(&self, mut cur: Option<NodeId>, want: usize) -> Option<NodeId> {
        while let Some(id) = cur {
            match self.nodes[id] {
                BsttNode::Index { index, .. } if index == want => return Some(id),
                BsttNode::Index { index, .. } if index > want => return None,
                BsttNode::Index { sibling, .. } => cur = sibling,
                BsttNode::Leaf(_) => return None,
            }
        }
        None
    }

    fn child_of(&self, id: NodeId) -> Option<NodeId> {
        match self.nodes[id] {
            BsttNode::Index { child, .. } => child,
            BsttNode::Leaf(_) => None,
        }
    }

    pub fn memory_words(&self) -> MemoryReport {
        let flat = self.nodes.len();
        MemoryReport {
            dense: self.shape.numel(),
            bstt_flat: flat,
            bstt_impl: 2 * flat,
            csf: self.csf_memory_words(),
            nnz: self.nnz,
        }
    }

    /// Word count of the equivalent compressed-sparse-fiber trie: a value per
    /// nonzero, an index per trie node, and a child pointer per trie node.
    /// The trie has one node per distinct index prefix, exactly the index
    /// nodes of the BSTT.
    pub fn csf_memory_words(&self) -> usize {
        self.nnz + 2 * self.index_node_count()
    }
}

fn link_child(nodes: &mut [BsttNode], parent: Option<NodeId>, id: NodeId) {
    if let Some(BsttNode::Index { child, .. }) = parent.map(|p| &mut nodes[p]) {
        *child = Some(id);
    }
}

/// Builds the sibling chain for `entries` (sorted, sharing the index prefix
/// above `depth`), allocating nodes in pre-order.
fn build_level(
    entries: &[(Vec<usize>, f64)],
    depth: usize,
    rank: usize,
    nodes: &mut Vec<BsttNode>,
) -> Option<NodeId> {
    let mut first = None;
    let mut prev: Option<NodeId> = None;
    let mut rest = entries;
    while let Some((head, _)) = rest.first() {
        let index = head[depth];
        let run = rest.iter().take_while(|(i, _)| i[depth] == index).count();
        let (group, tail) = rest.split_at(run);
        rest = tail;

        let id = nodes.len();
        nodes.push(BsttNode::Index {
            index,
            child: None,
            sibling: None,
        });
        let child = if depth + 1 == rank {
            nodes.push(BsttNode::Leaf(group[0].1));
            Some(id + 1)
        } else {
            build_level(group, depth + 1, rank, nodes)
        };
        if let BsttNode::Index { child: c, .. } = &mut nodes[id] {
            *c = child;
        }
        match prev {
            Some(p) => {
                if let BsttNode::Index { sibling, .. } = &mut nodes[p] {
                    *sibling = Some(id);
                }
            }
            None => first = Some(id),
        }
        prev = Some(id);
    }
    first
}

const MAGIC: &[u8; 4] = b"BSTT";

impl FlatBstt {
    /// Binary layout: magic, rank, extents, entry count, tagged words
    /// (tag byte 0 = Int, 1 = Float, then 8 payload bytes), depths.
    /// Integers are little-endian 64-bit.
    pub fn encode(&self, shape: &Shape) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * (2 + shape.rank()) + 17 * self.entries.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(shape.rank() as u64).to_le_bytes());
        for &d in shape.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for w in &self.entries {
            match *w {
                FlatWord::Int(i) => {
                    out.push(0);
                    out.extend_from_slice(&i.to_le_bytes());
                }
                FlatWord::Float(v) => {
                    out.push(1);
                    out.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
        }
        for &d in &self.depths {
            out.extend_from_slice(&u64::from(d).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<(Shape, FlatBstt)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(BsttError::Encoding("missing BSTT magic"));
        }
        let rank = r.u64()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = Shape::new(dims).map_err(|_| BsttError::Encoding("zero extent"))?;
        let n = r.u64()? as usize;
        if n > bytes.len() {
            return Err(BsttError::Encoding("entry count exceeds input"));
        }
        let mut flat = FlatBstt {
            entries: Vec::with_capacity(n),
            depths: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let tag = r.take(1)?[0];
            let payload = r.u64()?;
            flat.entries.push(match tag {
                0 => FlatWord::Int(payload),
                1 => FlatWord::Float(f64::from_bits(payload)),
                _ => return Err(BsttError::Encoding("unknown word tag")),
            });
        }
        for _ in 0..n {
            let d = u32::try_from(r.u64()?).map_err(|_| BsttError::Encoding("depth too large"))?;
            flat.depths.push(d);
        }
        if r.pos != bytes.len() {
            return Err(BsttError::Encoding("trailing bytes"));
        }
        Ok((shape, flat))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(BsttError::Encoding("truncated input"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }
}
