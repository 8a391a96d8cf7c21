//! Deterministic random number generation.
//!
//! Two generators live here, both built from the same 64-bit avalanche
//! (SplitMix64 finalizer, constants 0xbf58476d1ce4e5b9 / 0x94d049bb133111eb):
//!
//! * [`SplitMix64`] — a tiny sequential stream used where draws are
//!   inherently ordered (trace generation, table init).
//! * [`gaussian_at`] — a counter-based standard normal keyed by
//!   (seed, step, element index). The value is a pure function of the key,
//!   so chunked, reordered, or multi-threaded generation all see the same
//!   sequence without storing anything.
//!
//! Uniform-to-normal conversion uses the Wichura AS241 (PPND16) rational
//! approximation of the inverse normal CDF, accurate to ~1e-15 relative.
//! The uniform is taken from the top 53 bits of the counter hash, offset by
//! half an ulp so it lies strictly inside (0, 1).

/// SplitMix64 finalizer; full-avalanche mixing of a 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Sequential deterministic generator with a single 64-bit state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent stream for a labeled purpose.
    pub fn derive(seed: u64, label: u64) -> Self {
        Self {
            state: mix64(seed ^ mix64(label.wrapping_add(GOLDEN_GAMMA))),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, bound). Modulo bias is negligible for simulation use.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.next_u64() % bound
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Fisher-Yates shuffle of `0..len`.
    pub fn permutation(&mut self, len: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            let j = self.below(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        perm
    }
}

/// Counter hash for (seed, step, element index). A three-stage mix chain:
/// each key word passes through the full avalanche before the next is added,
/// so distinct keys map to effectively independent words.
#[inline]
pub fn counter_word(seed: u64, step: u64, index: u64) -> u64 {
    mix64(
        mix64(mix64(seed.wrapping_add(GOLDEN_GAMMA)).wrapping_add(step)).wrapping_add(index),
    )
}

/// Standard normal value at (seed, step, index); pure function of the key.
#[inline]
pub fn gaussian_at(seed: u64, step: u64, index: u64) -> f64 {
    let w = counter_word(seed, step, index);
    // Top 53 bits -> (0,1), centered so neither endpoint is reachable.
    let u = ((w >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0);
    normal_quantile(u)
}

/// Inverse standard normal CDF (Wichura's AS241, PPND16 variant).
///
/// Valid for p in (0, 1); relative error below 1e-15 across the range.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&CENTRAL_NUM, r) / poly(&CENTRAL_DEN, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&TAIL_NUM, r) / poly(&TAIL_DEN, r)
    } else {
        r -= 5.0;
        poly(&FAR_TAIL_NUM, r) / poly(&FAR_TAIL_DEN, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[inline]
fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    // Horner evaluation, highest-order coefficient first.
    coeffs[1..].iter().fold(coeffs[0], |acc, c| acc * x + c)
}

// Coefficients as published; the trailing digits beyond f64 precision
// are kept so the tables match the reference algorithm listing.
#[allow(clippy::excessive_precision)]
const CENTRAL_NUM: [f64; 8] = [
    2.509_080_928_730_122_6e3,
    3.343_057_558_358_813e4,
    6.726_577_092_700_87e4,
    4.592_195_393_154_987e4,
    1.373_169_376_550_946_1e4,
    1.971_590_950_306_551_3e3,
    1.331_416_678_917_843_8e2,
    3.387_132_872_796_366_5,
];
#[allow(clippy::excessive_precision)]
const CENTRAL_DEN: [f64; 8] = [
    5.226_495_278_852_545_5e3,
    2.872_908_573_572_194_3e4,
    3.930_789_580_009_271e4,
    2.121_379_430_158_659_7e4,
    5.394_196_021_424_751e3,
    6.871_870_074_920_579e2,
    4.231_333_070_160_091e1,
    1.0,
];
#[allow(clippy::excessive_precision)]
const TAIL_NUM: [f64; 8] = [
    7.745_450_142_783_414e-4,
    2.272_384_498_926_918_4e-2,
    2.417_807_251_774_506e-1,
    1.270_458_252_452_368_4,
    3.647_848_324_763_204_5,
    5.769_497_221_460_691,
    4.630_337_846_156_546,
    1.423_437_110_749_683_6,
];
#[allow(clippy::excessive_precision)]
const TAIL_DEN: [f64; 8] = [
    1.050_750_071_644_416_9e-9,
    5.475_938_084_995_345e-4,
    1.519_866_656_361_645_7e-2,
    1.481_039_764_274_800_8e-1,
    6.897_673_349_851e-1,
    1.676_384_830_183_803_8,
    2.053_191_626_637_759,
    1.0,
];
#[allow(clippy::excessive_precision)]
const FAR_TAIL_NUM: [f64; 8] = [
    2.010_334_399_292_288_1e-7,
    2.711_555_568_743_487_6e-5,
    1.242_660_947_388_078_4e-3,
    2.653_218_952_657_612_3e-2,
    2.965_605_718_285_048_9e-1,
    1.784_826_539_917_291_3,
    5.463_784_911_164_114,
    6.657_904_643_501_103,
];
#[allow(clippy::excessive_precision)]
const FAR_TAIL_DEN: [f64; 8] = [
    2.044_263_103_389_939_8e-15,
    1.421_511_758_316_445_9e-7,
    1.846_318_317_510_054_8e-5,
    7.868_691_311_456_132_5e-4,
    1.487_536_129_085_061_5e-2,
    1.369_298_809_227_358e-1,
    5.998_322_065_558_88e-1,
    1.0,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_matches_reference_values() {
        // Reference values computed with scipy.special.ndtri.
        let cases: [(f64, f64); 12] = [
            (0.5, 0.0),
            (0.975, 1.959963984540054),
            (0.8413447460685429, 1.0),
            (0.2, -0.8416212335729142),
            (1e-10, -6.361340902404056),
            (1e-300, -37.0470962993612),
            (0.3, -0.5244005127080409),
            (0.7, 0.5244005127080407),
            (0.999999, 4.753424308817087),
            (2.220446049250313e-16, -8.125890664701908),
            (0.0001, -3.7190164854556804),
            (0.9999, 3.719016485455709),
        ];
        for (p, want) in cases {
            let got = normal_quantile(p);
            let tol = 1e-13 * want.abs().max(1.0);
            assert!(
                (got - want).abs() <= tol,
                "quantile({p}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn quantile_is_antisymmetric() {
        for &p in &[0.01, 0.1, 0.25, 0.4, 0.49] {
            let lo = normal_quantile(p);
            let hi = normal_quantile(1.0 - p);
            assert!((lo + hi).abs() < 1e-12, "p={p}: {lo} vs {hi}");
        }
    }

    #[test]
    fn counter_word_is_pure() {
        assert_eq!(counter_word(42, 7, 1000), counter_word(42, 7, 1000));
        assert_ne!(counter_word(42, 7, 1000), counter_word(42, 7, 1001));
        assert_ne!(counter_word(42, 7, 1000), counter_word(42, 8, 1000));
        assert_ne!(counter_word(42, 7, 1000), counter_word(43, 7, 1000));
    }

    #[test]
    fn splitmix_streams_are_reproducible() {
        let mut a = SplitMix64::new(9);
        let mut b = SplitMix64::new(9);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SplitMix64::derive(9, 1);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn permutation_is_a_bijection() {
        let mut rng = SplitMix64::new(3);
        let perm = rng.permutation(257);
        let mut seen = vec![false; 257];
        for &p in &perm {
            assert!(!seen[p]);
            seen[p] = true;
        }
    }
}
