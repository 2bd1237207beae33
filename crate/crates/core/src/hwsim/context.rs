use super::HwError;
use crate::rnn::FixedLstmState;

/// Handle to one context-memory slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub(crate) usize);

impl SlotId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Per-hypothesis storage of every character-model layer's `(h, c)`, as
/// 16-bit words. One slot per live hypothesis.
#[derive(Debug, Clone)]
pub struct ContextMemory {
    hidden: Vec<usize>,
    slot_words: usize,
    words: Vec<i16>,
    used: Vec<bool>,
    free: Vec<usize>,
    live: usize,
    peak: usize,
}

impl ContextMemory {
    pub fn new(capacity: usize, hidden: &[usize], width: usize) -> Result<Self, HwError> {
        if let Some(&h) = hidden.iter().find(|&&h| h > width) {
            return Err(HwError::SlotWidth { hidden: h, width });
        }
        let slot_words = hidden.iter().map(|h| 2 * h).sum();
        Ok(Self {
            hidden: hidden.to_vec(),
            slot_words,
            words: vec![0; capacity * slot_words],
            used: vec![false; capacity],
            free: (0..capacity).rev().collect(),
            live: 0,
            peak: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.used.len()
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn slot_bytes(&self) -> usize {
        self.slot_words * 2
    }

    pub fn alloc(&mut self) -> Result<SlotId, HwError> {
        let i = self.free.pop().ok_or(HwError::ContextFull { capacity: self.capacity() })?;
        self.used[i] = true;
        self.live += 1;
        self.peak = self.peak.max(self.live);
        Ok(SlotId(i))
    }

    pub fn release(&mut self, slot: SlotId) {
        if std::mem::replace(&mut self.used[slot.0], false) {
            self.live -= 1;
            self.free.push(slot.0);
        }
    }

    fn check(&self, slot: SlotId) -> Result<(), HwError> {
        if self.used.get(slot.0).copied().unwrap_or(false) {
            Ok(())
        } else {
            Err(HwError::EmptySlot(slot.0))
        }
    }

    pub fn store(&mut self, slot: SlotId, states: &[FixedLstmState]) -> Result<(), HwError> {
        self.check(slot)?;
        crate::rnn::check_dim("context layers", self.hidden.len(), states.len())?;
        let base = slot.0 * self.slot_words;
        let mut at = base;
        for (st, &h) in states.iter().zip(&self.hidden) {
            crate::rnn::check_dim("context h", h, st.h.len())?;
            crate::rnn::check_dim("context c", h, st.c.len())?;
            for &v in st.h.iter().chain(&st.c) {
                self.words[at] = i16::try_from(v).map_err(|_| HwError::ContextOverflow(v))?;
                at += 1;
            }
        }
        Ok(())
    }

    pub fn load(&self, slot: SlotId) -> Result<Vec<FixedLstmState>, HwError> {
        self.check(slot)?;
        let mut at = slot.0 * self.slot_words;
        let mut out = Vec::with_capacity(self.hidden.len());
        for &h in &self.hidden {
            let read = |from: usize| self.words[from..from + h].iter().map(|&w| w as i32).collect::<Vec<_>>();
            out.push(FixedLstmState { h: read(at), c: read(at + h) });
            at += 2 * h;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_load_round_trip() {
        let mut mem = ContextMemory::new(4, &[3, 2], 8).unwrap();
        let s = mem.alloc().unwrap();
        let states = vec![
            FixedLstmState { h: vec![1, -127, 5], c: vec![32767, -32767, 0] },
            FixedLstmState { h: vec![7, 8], c: vec![-9, 10] },
        ];
        mem.store(s, &states).unwrap();
        assert_eq!(mem.load(s).unwrap(), states);
        assert_eq!(mem.slot_bytes(), 20);
    }

    #[test]
    fn capacity_and_release() {
        let mut mem = ContextMemory::new(2, &[1], 8).unwrap();
        let a = mem.alloc().unwrap();
        let _b = mem.alloc().unwrap();
        assert!(matches!(mem.alloc(), Err(HwError::ContextFull { capacity: 2 })));
        mem.release(a);
        mem.release(a);
        assert_eq!(mem.live(), 1);
        assert!(mem.load(a).is_err());
        mem.alloc().unwrap();
        assert_eq!(mem.peak(), 2);
    }

    #[test]
    fn rejects_wide_layers_and_overflow() {
        assert!(matches!(ContextMemory::new(1, &[300], 256), Err(HwError::SlotWidth { .. })));
        let mut mem = ContextMemory::new(1, &[1], 8).unwrap();
        let s = mem.alloc().unwrap();
        let bad = [FixedLstmState { h: vec![0], c: vec![40000] }];
        assert!(matches!(mem.store(s, &bad), Err(HwError::ContextOverflow(40000))));
    }
}
