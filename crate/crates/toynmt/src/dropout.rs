//! Counter-based dropout masks.
//!
//! Every mask element is a pure function of `(seed, step, site, index)`, so
//! the same forward pass always drops the same units regardless of how
//! work is scheduled.

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dropout state for one forward pass.
#[derive(Debug, Clone)]
pub struct DropoutStream {
    key: u64,
    next: u64,
}

impl DropoutStream {
    pub fn new(seed: u64, step: u64) -> Self {
        DropoutStream {
            key: mix(mix(seed) ^ step),
            next: 0,
        }
    }

    /// Key for the next dropout call site in forward order.
    pub fn next_site(&mut self) -> DropoutSite {
        let site = DropoutSite {
            key: mix(self.key ^ mix(self.next)),
        };
        self.next += 1;
        site
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DropoutSite {
    key: u64,
}

impl DropoutSite {
    /// Uniform draw in `[0, 1)` for element `index`.
    pub fn uniform(&self, index: u64) -> f64 {
        (mix(self.key ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)) >> 11) as f64
            / (1u64 << 53) as f64
    }
}
