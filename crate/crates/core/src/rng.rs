//! Portable generator used by the train/valid/test splitter.
//!
//! Split reproducibility must not depend on a third-party RNG's stream
//! stability, so the splitter uses a fully specified generator:
//!
//! * per-user seed: `splitmix64(seed ^ splitmix64(user_index + 1))`, with a
//!   zero result replaced by `0x9E37_79B9_7F4A_7C15`;
//! * stream: xorshift64* (`x ^= x >> 12; x ^= x << 25; x ^= x >> 27;`
//!   output `x * 0x2545_F491_4F6C_DD1D`);
//! * bounded draw in `[0, n)`: `next() % n`;
//! * shuffle: Fisher-Yates from the last index down, swapping `i` with
//!   `below(i + 1)`.

/// One step of SplitMix64 applied to `x` as the state.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        Self {
            state: if seed == 0 {
                0x9E37_79B9_7F4A_7C15
            } else {
                seed
            },
        }
    }

    /// Independent stream for one user of a seeded split.
    pub fn for_user(seed: u64, user: usize) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(user as u64 + 1)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
