//! SplitMix64 stream shared with the Python tooling.
//!
//! * `next_u64`: `state += 0x9E3779B97F4A7C15`, then the standard SplitMix64 mix.
//! * `uniform`: `(next_u64 >> 11) · 2⁻⁵³`, in `[0, 1)`.
//! * `normal`: Box–Muller, cosine branch only, consuming two uniforms:
//!   `sqrt(−2 ln(1 − u₁)) · cos(2π u₂)`.
//! * Sparse matrices draw the whole Bernoulli mask (row-major) before any values.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Normal with the given mean and *variance*.
    pub fn normal_mv(&mut self, mean: f64, var: f64) -> f64 {
        mean + var.sqrt() * self.normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Row-major dense matrix with i.i.d. standard normal entries.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Vec<f64> {
        self.normal_vec(rows * cols)
    }

    /// Row-major matrix whose entries are nonzero with probability `density`.
    pub fn sparse_normal_matrix(&mut self, rows: usize, cols: usize, density: f64) -> Vec<f64> {
        let mask: Vec<bool> = (0..rows * cols).map(|_| self.bernoulli(density)).collect();
        mask.into_iter().map(|keep| if keep { self.normal() } else { 0.0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_splitmix_outputs() {
        // reference values of SplitMix64 seeded with 0
        let mut r = SplitMix64::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn uniform_in_unit_interval_and_normal_moments() {
        let mut r = SplitMix64::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.02);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn sparse_mask_density() {
        let mut r = SplitMix64::new(3);
        let m = r.sparse_normal_matrix(100, 100, 0.15);
        let nz = m.iter().filter(|v| **v != 0.0).count();
        assert!((1300..1700).contains(&nz));
    }
}
