use rand::Rng;

/// Overflow handling for a full bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InsertPolicy {
    /// Keep the most recent `capacity` ids.
    Fifo,
    /// Keep a uniform sample of all ids offered since the last clear.
    Reservoir,
}

/// Fixed-capacity list of neuron ids.
///
/// The reservoir policy uses skip-based reservoir sampling: once full, the
/// bucket precomputes which future insertion will be accepted next, so
/// rejected insertions cost one counter bump.
#[derive(Debug, Clone, Default)]
pub struct Bucket {
    slots: Vec<u32>,
    /// insertion attempts since the last clear
    count: u64,
    /// FIFO: slot overwritten next once full
    head: usize,
    /// Reservoir: 1-based attempt number of the next accepted insertion
    next_accept: u64,
    /// Reservoir: running skip parameter
    w: f64,
}

impl Bucket {
    pub fn clear(&mut self) {
        self.slots.clear();
        self.count = 0;
        self.head = 0;
        self.next_accept = 0;
        self.w = 0.0;
    }

    pub fn occupancy(&self) -> usize {
        self.slots.len()
    }

    pub fn attempts(&self) -> u64 {
        self.count
    }

    /// Stored ids in storage order.
    pub fn ids(&self) -> &[u32] {
        &self.slots
    }

    /// Stored ids, oldest first for FIFO buckets.
    pub fn ids_in_insertion_order(&self) -> Vec<u32> {
        let mut out = self.slots[self.head..].to_vec();
        out.extend_from_slice(&self.slots[..self.head]);
        out
    }

    /// Offers `id`; returns whether it was stored.
    #[inline]
    pub fn insert<R: Rng + ?Sized>(
        &mut self,
        id: u32,
        capacity: usize,
        policy: InsertPolicy,
        rng: &mut R,
    ) -> bool {
        self.count += 1;
        if self.slots.len() < capacity {
            self.slots.push(id);
            if policy == InsertPolicy::Reservoir && self.slots.len() == capacity {
                self.w = (unit_open(rng).ln() / capacity as f64).exp();
                self.next_accept = self.count + skip(self.w, rng) + 1;
            }
            return true;
        }
        match policy {
            InsertPolicy::Fifo => {
                self.slots[self.head] = id;
                self.head += 1;
                if self.head == capacity {
                    self.head = 0;
                }
                true
            }
            InsertPolicy::Reservoir => {
                if self.count != self.next_accept {
                    return false;
                }
                let slot = rng.gen_range(0..capacity);
                self.slots[slot] = id;
                self.w *= (unit_open(rng).ln() / capacity as f64).exp();
                self.next_accept = self.count + skip(self.w, rng) + 1;
                true
            }
        }
    }
}

/// Uniform draw from (0, 1].
#[inline]
fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Number of insertions to reject before the next acceptance.
#[inline]
fn skip<R: Rng + ?Sized>(w: f64, rng: &mut R) -> u64 {
    let s = (unit_open(rng).ln() / (1.0 - w).ln()).floor();
    if s.is_finite() && s > 0.0 {
        s as u64
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_keeps_last_capacity_in_order() {
        let mut b = Bucket::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for id in 0..10 {
            assert!(b.insert(id, 4, InsertPolicy::Fifo, &mut rng));
        }
        assert_eq!(b.ids_in_insertion_order(), vec![6, 7, 8, 9]);
        assert_eq!(b.occupancy(), 4);
        assert_eq!(b.attempts(), 10);
    }

    #[test]
    fn clear_resets_counters() {
        let mut b = Bucket::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for id in 0..6 {
            b.insert(id, 4, InsertPolicy::Reservoir, &mut rng);
        }
        b.clear();
        assert_eq!(b.attempts(), 0);
        assert_eq!(b.occupancy(), 0);
    }

    #[test]
    fn reservoir_retains_uniformly() {
        // 10 offers into capacity 4: each retained with probability 0.4
        let trials = 10_000;
        let mut hits = [0u32; 10];
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = Bucket::default();
            for id in 0..10 {
                b.insert(id, 4, InsertPolicy::Reservoir, &mut rng);
            }
            assert_eq!(b.occupancy(), 4);
            for &id in b.ids() {
                hits[id as usize] += 1;
            }
        }
        for (id, &h) in hits.iter().enumerate() {
            let f = h as f64 / trials as f64;
            assert!((f - 0.4).abs() <= 0.02, "id {id}: {f}");
        }
    }
}
