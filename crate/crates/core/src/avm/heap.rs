//! VM heap: a flat word array carved into non-overlapping regions by a bump
//! allocator.
//!
//! A tensor record is `[rank, d_1, …, d_rank, payload…]` with a row-major
//! float payload. In poison mode freshly allocated tensor payloads start out
//! unwritten, and reading one traps; otherwise they are zeroed.

use std::collections::BTreeMap;

use super::vm::{TrapKind, VmWord};

/// Upper bound on heap size, so a hostile program traps instead of
/// exhausting host memory.
pub const MAX_HEAP_WORDS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegionKind {
    Raw,
    Tensor { rank: usize },
}

#[derive(Debug, Clone, Copy)]
struct Region {
    len: usize,
    kind: RegionKind,
}

/// A tensor record located on the heap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorView {
    pub addr: usize,
    pub dims: Vec<usize>,
    pub payload: usize,
    pub len: usize,
}

impl TensorView {
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn last(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Heap {
    words: Vec<Option<VmWord>>,
    regions: BTreeMap<usize, Region>,
    poison: bool,
}

impl Heap {
    pub fn new(poison: bool) -> Self {
        Heap {
            poison,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn reserve(&mut self, len: usize, kind: RegionKind) -> Result<usize, TrapKind> {
        let addr = self.words.len();
        if len > MAX_HEAP_WORDS - addr.min(MAX_HEAP_WORDS) {
            return Err(TrapKind::HeapExhausted { requested: len });
        }
        self.words.resize(addr + len, None);
        self.regions.insert(addr, Region { len, kind });
        Ok(addr)
    }

    /// Zeroed raw region of `size` words.
    pub fn malloc(&mut self, size: usize) -> Result<usize, TrapKind> {
        let addr = self.reserve(size, RegionKind::Raw)?;
        self.words[addr..].fill(Some(VmWord::Int(0)));
        Ok(addr)
    }

    /// New tensor record. With `data`, the payload is initialised from it;
    /// otherwise it is zeroed, or left unwritten in poison mode.
    pub fn alloc_tensor(
        &mut self,
        dims: &[usize],
        data: Option<&[f64]>,
    ) -> Result<usize, TrapKind> {
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_HEAP_WORDS)
            .ok_or(TrapKind::HeapExhausted {
                requested: usize::MAX,
            })?;
        let rank = dims.len();
        let addr = self.reserve(1 + rank + numel, RegionKind::Tensor { rank })?;
        self.words[addr] = Some(VmWord::Int(rank as i64));
        for (k, &d) in dims.iter().enumerate() {
            self.words[addr + 1 + k] = Some(VmWord::Int(d as i64));
        }
        let payload = &mut self.words[addr + 1 + rank..];
        match data {
            Some(values) => {
                debug_assert_eq!(values.len(), numel);
                for (slot, &v) in payload.iter_mut().zip(values) {
                    *slot = Some(VmWord::Float(v));
                }
            }
            None if self.poison => {}
            None => payload.fill(Some(VmWord::Float(0.0))),
        }
        Ok(addr)
    }

    fn region_containing(&self, addr: usize) -> Option<(usize, Region)> {
        self.regions
            .range(..=addr)
            .next_back()
            .filter(|(start, r)| addr < *start + r.len)
            .map(|(s, r)| (*s, *r))
    }

    /// The tensor record whose header is at `addr`.
    pub fn tensor(&self, addr: usize) -> Result<TensorView, TrapKind> {
        match self.regions.get(&addr) {
            Some(&Region {
                len,
                kind: RegionKind::Tensor { rank },
            }) => {
                let dims = (0..rank)
                    .map(|k| match self.words[addr + 1 + k] {
                        Some(VmWord::Int(d)) => d as usize,
                        _ => unreachable!("tensor headers are immutable"),
                    })
                    .collect();
                Ok(TensorView {
                    addr,
                    dims,
                    payload: addr + 1 + rank,
                    len: len - 1 - rank,
                })
            }
            _ => Err(TrapKind::NotATensor { addr }),
        }
    }

    /// Payload values of `view`, trapping on any unwritten word.
    pub fn values(&self, view: &TensorView) -> Result<Vec<f64>, TrapKind> {
        self.range(view.payload, view.len, 1)
    }

    /// `len` payload floats starting at `start` with the given stride.
    pub fn range(&self, start: usize, len: usize, stride: usize) -> Result<Vec<f64>, TrapKind> {
        (0..len)
            .map(|i| {
                let addr = start + i * stride;
                match self.words[addr] {
                    Some(VmWord::Float(v)) => Ok(v),
                    Some(VmWord::Int(v)) => Ok(v as f64),
                    Some(w @ VmWord::Ref(_)) => Err(TrapKind::Type {
                        expected: "a number",
                        got: w,
                    }),
                    None => Err(TrapKind::Unwritten { addr }),
                }
            })
            .collect()
    }

    pub fn set(&mut self, addr: usize, value: f64) {
        self.words[addr] = Some(VmWord::Float(value));
    }

    /// Adds into an already written payload word.
    pub fn accumulate(&mut self, addr: usize, value: f64) -> Result<(), TrapKind> {
        let old = self.range(addr, 1, 1)?[0];
        self.set(addr, old + value);
        Ok(())
    }

    /// Word read through the `this` segment.
    pub fn read(&self, addr: usize) -> Result<VmWord, TrapKind> {
        if self.region_containing(addr).is_none() {
            return Err(TrapKind::Segfault { addr });
        }
        self.words[addr].ok_or(TrapKind::Unwritten { addr })
    }

    /// Word write through the `this` segment. Tensor headers are read-only
    /// and tensor payloads hold only numbers.
    pub fn write(&mut self, addr: usize, word: VmWord) -> Result<(), TrapKind> {
        let Some((start, region)) = self.region_containing(addr) else {
            return Err(TrapKind::Segfault { addr });
        };
        let stored = match region.kind {
            RegionKind::Raw => word,
            RegionKind::Tensor { rank } => {
                if addr <= start + rank {
                    return Err(TrapKind::HeaderWrite { addr });
                }
                match word {
                    VmWord::Int(v) => VmWord::Float(v as f64),
                    VmWord::Float(_) => word,
                    VmWord::Ref(_) => {
                        return Err(TrapKind::Type {
                            expected: "a number",
                            got: word,
                        })
                    }
                }
            }
        };
        self.words[addr] = Some(stored);
        Ok(())
    }

    /// Whether `[addr, addr + len)` lies inside one region.
    pub fn is_live(&self, addr: usize, len: usize) -> bool {
        match self.region_containing(addr) {
            Some((start, r)) => addr + len <= start + r.len,
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_do_not_overlap() {
        let mut h = Heap::new(false);
        let a = h.malloc(3).unwrap();
        let b = h.malloc(2).unwrap();
        let t = h.alloc_tensor(&[2, 2], None).unwrap();
        assert_eq!((a, b, t), (0, 3, 5));
        assert_eq!(h.len(), 5 + 3 + 4);
        assert!(h.is_live(a, 3) && !h.is_live(a, 4));
    }

    #[test]
    fn tensor_records() {
        let mut h = Heap::new(false);
        let t = h
            .alloc_tensor(&[2, 3], Some(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
            .unwrap();
        let v = h.tensor(t).unwrap();
        assert_eq!((v.dims.clone(), v.payload, v.len), (vec![2, 3], 3, 6));
        assert_eq!(h.range(v.payload + 1, 2, 3).unwrap(), vec![2.0, 5.0]);
        assert_eq!(h.read(t).unwrap(), VmWord::Int(2));
        assert!(matches!(h.tensor(t + 1), Err(TrapKind::NotATensor { .. })));
        assert!(matches!(
            h.write(t + 2, VmWord::Int(9)),
            Err(TrapKind::HeaderWrite { .. })
        ));
        h.write(t + 3, VmWord::Int(9)).unwrap();
        assert_eq!(h.read(t + 3).unwrap(), VmWord::Float(9.0));
    }

    #[test]
    fn poison_mode_tracks_unwritten_words() {
        let mut h = Heap::new(true);
        let t = h.alloc_tensor(&[2], None).unwrap();
        let v = h.tensor(t).unwrap();
        assert!(matches!(h.values(&v), Err(TrapKind::Unwritten { addr: 2 })));
        h.set(2, 1.0);
        h.set(3, 2.0);
        assert_eq!(h.values(&v).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            Heap::new(false).alloc_tensor(&[1], None).map(|_| ()),
            Ok(())
        );
    }

    #[test]
    fn exhaustion_traps() {
        let mut h = Heap::new(false);
        assert!(h.malloc(MAX_HEAP_WORDS + 1).is_err());
        assert!(h.alloc_tensor(&[usize::MAX, 2], None).is_err());
    }
}
