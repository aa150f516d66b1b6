//! Deterministic pseudo-random sampling used by every experiment.
//!
//! The generator is pinned rather than delegated to an external crate so that
//! identical seeds produce identical artifacts on every platform: a splitmix64
//! stage expands the user seed into the 256-bit state of a xoshiro256++ stream,
//! and substreams for parallel work are derived by advancing the splitmix64
//! stage, never by splitting the xoshiro state.

/// splitmix64 step: advances `state` and returns the next output word.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// xoshiro256++ stream seeded through splitmix64.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    /// Cached second Gaussian from the Box-Muller pair.
    spare: Option<f64>,
}

impl Rng {
    /// Seeds the stream; equal seeds give equal streams.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s, spare: None }
    }

    /// Substream `index` of a base seed: the splitmix64 stage is jumped
    /// `index + 1` steps before seeding, so rows of a parallel sweep draw from
    /// independent streams in a deterministic order.
    pub fn substream(base_seed: u64, index: u64) -> Self {
        let mut sm = base_seed;
        for _ in 0..=index {
            splitmix64(&mut sm);
        }
        Rng::new(sm)
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard Gaussian via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = self.uniform();
            if u <= f64::MIN_POSITIVE {
                continue;
            }
            let v = self.uniform();
            let r = (-2.0 * u.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * v).sin_cos();
            self.spare = Some(r * s);
            return r * c;
        }
    }

    /// Uniform draw from the closed ball of the given radius in `dim`
    /// dimensions: a normalized Gaussian direction scaled by U^(1/dim).
    pub fn in_ball(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        loop {
            let g: Vec<f64> = (0..dim).map(|_| self.gaussian()).collect();
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n <= f64::MIN_POSITIVE {
                continue;
            }
            let r = radius * self.uniform().powf(1.0 / dim as f64);
            return g.into_iter().map(|v| v * r / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic() {
        let a: Vec<u64> = {
            let mut r = Rng::new(42);
            (0..16).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = Rng::new(42);
            (0..16).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<u64> = {
            let mut r = Rng::new(43);
            (0..16).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn substreams_differ_from_each_other() {
        let mut r0 = Rng::substream(7, 0);
        let mut r1 = Rng::substream(7, 1);
        let a: Vec<u64> = (0..8).map(|_| r0.next_u64()).collect();
        let b: Vec<u64> = (0..8).map(|_| r1.next_u64()).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut r = Rng::new(5);
        for _ in 0..500 {
            let p = r.in_ball(3, 2.5);
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 2.5 + 1e-12);
        }
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut r = Rng::new(11);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
