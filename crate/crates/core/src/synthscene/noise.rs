//! Seeded multi-octave value noise for procedural albedo textures.

/// Deterministic value-noise field over surface (u, v) coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ValueNoise {
    seed: u64,
    octaves: u32,
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        ValueNoise { seed, octaves: 4 }
    }

    fn lattice(&self, ix: i64, iy: i64, octave: u32) -> f64 {
        let mut h = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(ix as u64)
            .wrapping_mul(0xbf58_476d_1ce4_e5b9)
            .wrapping_add(iy as u64)
            .wrapping_mul(0x94d0_49bb_1331_11eb)
            .wrapping_add(octave as u64);
        h ^= h >> 31;
        h = h.wrapping_mul(0xd6e8_feb8_6659_fd93);
        h ^= h >> 27;
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn octave(&self, x: f64, y: f64, o: u32) -> f64 {
        let ix = x.floor() as i64;
        let iy = y.floor() as i64;
        let fx = x - ix as f64;
        let fy = y - iy as f64;
        // smoothstep weights keep the field differentiable at lattice lines
        let sx = fx * fx * (3.0 - 2.0 * fx);
        let sy = fy * fy * (3.0 - 2.0 * fy);
        let v00 = self.lattice(ix, iy, o);
        let v10 = self.lattice(ix + 1, iy, o);
        let v01 = self.lattice(ix, iy + 1, o);
        let v11 = self.lattice(ix + 1, iy + 1, o);
        v00 * (1.0 - sx) * (1.0 - sy)
            + v10 * sx * (1.0 - sy)
            + v01 * (1.0 - sx) * sy
            + v11 * sx * sy
    }

    /// Multi-octave sample in [0, 1).
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut amp = 1.0;
        let mut total = 0.0;
        let mut freq = 1.0;
        for o in 0..self.octaves {
            sum += amp * self.octave(x * freq, y * freq, o);
            total += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / total
    }

    /// Albedo in [0.3, 1.0]; keeps every surface point lit.
    pub fn albedo(&self, x: f64, y: f64) -> f64 {
        0.3 + 0.7 * self.sample(x, y)
    }
}
