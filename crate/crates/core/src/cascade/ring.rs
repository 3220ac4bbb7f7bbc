use alloc::vec;
use alloc::vec::Vec;

use crate::frontend::{AudioChunk, SAMPLE_RATE_HZ};

/// Two seconds of 16 kHz audio.
pub const DEFAULT_CAPACITY_SAMPLES: usize = 2 * SAMPLE_RATE_HZ as usize;

/// Fixed-capacity circular store of the most recent PCM samples.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    storage: Vec<i16>,
    write_index: usize,
    total_written: u64,
}

impl RingBuffer {
    pub fn new(capacity_samples: usize) -> Self {
        Self {
            storage: vec![0; capacity_samples.max(1)],
            write_index: 0,
            total_written: 0,
        }
    }

    pub fn capacity_samples(&self) -> usize {
        self.storage.len()
    }

    pub fn byte_size(&self) -> usize {
        self.storage.len() * core::mem::size_of::<i16>()
    }

    pub fn total_written(&self) -> u64 {
        self.total_written
    }

    pub fn len(&self) -> usize {
        (self.total_written.min(self.storage.len() as u64)) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.total_written == 0
    }

    pub fn clear(&mut self) {
        self.write_index = 0;
        self.total_written = 0;
    }

    pub fn write(&mut self, samples: &[i16]) {
        let cap = self.storage.len();
        self.total_written += samples.len() as u64;
        // only the tail can survive
        let samples = &samples[samples.len().saturating_sub(cap)..];
        let first = samples.len().min(cap - self.write_index);
        self.storage[self.write_index..self.write_index + first].copy_from_slice(&samples[..first]);
        let rest = &samples[first..];
        self.storage[..rest.len()].copy_from_slice(rest);
        self.write_index = (self.write_index + samples.len()) % cap;
    }

    /// Copy of the most recent `min(capacity, total_written)` samples, oldest first.
    pub fn snapshot(&self) -> AudioChunk {
        let len = self.len();
        let start = (self.write_index + self.storage.len() - len) % self.storage.len();
        let mut out = Vec::with_capacity(len);
        if start + len <= self.storage.len() {
            out.extend_from_slice(&self.storage[start..start + len]);
        } else {
            out.extend_from_slice(&self.storage[start..]);
            out.extend_from_slice(&self.storage[..len - (self.storage.len() - start)]);
        }
        AudioChunk::new(out)
    }
}

impl Default for RingBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY_SAMPLES)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize) -> Vec<i16> {
        (0..n).map(|i| (i % 65536) as u16 as i16).collect()
    }

    #[test]
    fn default_capacity_is_64_kilobytes() {
        let rb = RingBuffer::default();
        assert_eq!(rb.capacity_samples(), 32000);
        assert_eq!(rb.byte_size(), 64000);
    }

    #[test]
    fn underfull_and_overfull_snapshots() {
        let mut rb = RingBuffer::default();
        rb.write(&ramp(10));
        assert_eq!(rb.snapshot().samples, ramp(10));
        let data = ramp(32005);
        let mut rb = RingBuffer::default();
        rb.write(&data[..10]);
        rb.write(&data[10..]);
        assert_eq!(rb.snapshot().samples, data[5..].to_vec());
        assert_eq!(rb.snapshot(), rb.snapshot());
        assert_eq!(rb.total_written(), 32005);
    }

    #[test]
    fn snapshot_is_independent_of_later_writes() {
        let mut rb = RingBuffer::new(8);
        rb.write(&[1, 2, 3]);
        let snap = rb.snapshot();
        rb.write(&[9; 20]);
        assert_eq!(snap.samples, vec![1, 2, 3]);
        assert_eq!(rb.snapshot().samples, vec![9; 8]);
    }

    proptest! {
        #[test]
        fn snapshot_is_a_suffix_of_everything_written(
            cap in 1usize..64,
            chunks in prop::collection::vec(prop::collection::vec(any::<i16>(), 0..100), 0..20),
        ) {
            let mut rb = RingBuffer::new(cap);
            let mut flat = Vec::new();
            for c in &chunks {
                rb.write(c);
                flat.extend_from_slice(c);
                let keep = flat.len().min(cap);
                prop_assert_eq!(&rb.snapshot().samples[..], &flat[flat.len() - keep..]);
            }
        }
    }
}
