//! Open-addressing hash table from Morton code to feature slot.
//!
//! Keys are at most 63 bits wide, so `u64::MAX` is free to mark empty buckets.
//! Linear probing, capacity is a power of two, load factor kept at or below 1/2.

const EMPTY: u64 = u64::MAX;
const MIN_CAPACITY: usize = 16;

#[derive(Clone, Debug)]
pub struct MortonTable {
    keys: Vec<u64>,
    slots: Vec<u32>,
    len: usize,
    shift: u32,
}

#[inline]
fn bucket(code: u64, shift: u32) -> usize {
    // Fibonacci hashing; neighbouring Morton codes differ in low bits only.
    (code.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> shift) as usize
}

impl Default for MortonTable {
    fn default() -> Self {
        Self::with_capacity(0)
    }
}

impl MortonTable {
    pub fn with_capacity(n: usize) -> Self {
        let cap = (n * 2).next_power_of_two().max(MIN_CAPACITY);
        Self {
            keys: vec![EMPTY; cap],
            slots: vec![0; cap],
            len: 0,
            shift: 64 - cap.trailing_zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, code: u64) -> Option<u32> {
        let mask = self.keys.len() - 1;
        let mut i = bucket(code, self.shift);
        loop {
            let k = self.keys[i];
            if k == code {
                return Some(self.slots[i]);
            }
            if k == EMPTY {
                return None;
            }
            i = (i + 1) & mask;
        }
    }

    /// Returns the existing slot for `code`, or inserts the one produced by `make`.
    /// The boolean is true when a new entry was created.
    pub fn get_or_insert_with(&mut self, code: u64, make: impl FnOnce() -> u32) -> (u32, bool) {
        debug_assert_ne!(code, EMPTY);
        if (self.len + 1) * 2 > self.keys.len() {
            self.grow();
        }
        let mask = self.keys.len() - 1;
        let mut i = bucket(code, self.shift);
        loop {
            let k = self.keys[i];
            if k == code {
                return (self.slots[i], false);
            }
            if k == EMPTY {
                let slot = make();
                self.keys[i] = code;
                self.slots[i] = slot;
                self.len += 1;
                return (slot, true);
            }
            i = (i + 1) & mask;
        }
    }

    pub fn insert(&mut self, code: u64, slot: u32) -> bool {
        self.get_or_insert_with(code, || slot).1
    }

    fn grow(&mut self) {
        let cap = self.keys.len() * 2;
        let old_keys = std::mem::replace(&mut self.keys, vec![EMPTY; cap]);
        let old_slots = std::mem::replace(&mut self.slots, vec![0; cap]);
        self.shift = 64 - cap.trailing_zeros();
        let mask = cap - 1;
        for (k, s) in old_keys.into_iter().zip(old_slots) {
            if k == EMPTY {
                continue;
            }
            let mut i = bucket(k, self.shift);
            while self.keys[i] != EMPTY {
                i = (i + 1) & mask;
            }
            self.keys[i] = k;
            self.slots[i] = s;
        }
    }

    /// All entries in ascending code order.
    pub fn sorted_entries(&self) -> Vec<(u64, u32)> {
        let mut out: Vec<(u64, u32)> = self
            .keys
            .iter()
            .zip(&self.slots)
            .filter(|(k, _)| **k != EMPTY)
            .map(|(k, s)| (*k, *s))
            .collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    pub fn capacity(&self) -> usize {
        self.keys.len()
    }
}
