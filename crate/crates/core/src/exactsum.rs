//! Exact floating-point accumulation.
//!
//! An [`ExactAccumulator`] holds a fixed-point rendition of the running sum
//! spanning the whole `f64` exponent range, so additions are error-free and
//! the final [`round`](ExactAccumulator::round) is the correctly rounded
//! value of the mathematical sum. Because integer addition is associative,
//! accumulators can be split, merged and reduced in any order without
//! changing the rounded result. The solver relies on this to keep dot
//! products bit-identical across rank counts and message schedules.
//!
//! Dot products feed the accumulator with exact product pairs obtained from
//! a fused multiply-add (`p = x*y` rounded, `e = fma(x, y, -p)` the exact
//! remainder).

/// Number of 32-bit limbs: f64 bit positions span `2^-1074 ..= 2^1023`
/// (2098 bits, 66 limbs); two extra limbs absorb mantissa spill and carries.
pub const N_LIMBS: usize = 68;

const LIMB_MASK: i64 = 0xFFFF_FFFF;
/// Renormalize after this many raw additions so limb magnitudes can never
/// reach the i64 overflow range.
const RENORM_LIMIT: u32 = 1 << 30;

/// Error-free fixed-point accumulator for `f64` sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactAccumulator {
    /// Signed 32-bit digits of the sum times `2^-1074`; limb `l` weighs
    /// `2^(32 l - 1074)`.
    limbs: Vec<i64>,
    adds: u32,
    nonfinite: bool,
}

impl Default for ExactAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactAccumulator {
    pub fn new() -> Self {
        Self {
            limbs: vec![0; N_LIMBS],
            adds: 0,
            nonfinite: false,
        }
    }

    /// Add one `f64` exactly.
    pub fn add(&mut self, x: f64) {
        let bits = x.to_bits();
        let exp_raw = ((bits >> 52) & 0x7FF) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        if exp_raw == 0x7FF {
            self.nonfinite = true;
            return;
        }
        let (mant, exp) = if exp_raw == 0 {
            if frac == 0 {
                return; // +-0
            }
            (frac, -1074i64)
        } else {
            (frac | (1u64 << 52), exp_raw - 1075)
        };
        let bitpos = (exp + 1074) as usize;
        let limb = bitpos >> 5;
        let shift = bitpos & 31;
        let wide = (mant as u128) << shift;
        let chunks = [
            (wide & 0xFFFF_FFFF) as i64,
            ((wide >> 32) & 0xFFFF_FFFF) as i64,
            ((wide >> 64) & 0xFFFF_FFFF) as i64,
        ];
        if bits >> 63 == 0 {
            for (k, &c) in chunks.iter().enumerate() {
                self.limbs[limb + k] += c;
            }
        } else {
            for (k, &c) in chunks.iter().enumerate() {
                self.limbs[limb + k] -= c;
            }
        }
        self.adds += 1;
        if self.adds >= RENORM_LIMIT {
            self.normalize();
        }
    }

    /// Add the exact value of the product `x * y` (two accumulator entries
    /// via a fused multiply-add error term).
    pub fn add_product(&mut self, x: f64, y: f64) {
        let p = x * y;
        let e = x.mul_add(y, -p);
        self.add(p);
        self.add(e);
    }

    /// Fold another accumulator in; exact and order-insensitive.
    pub fn merge(&mut self, other: &ExactAccumulator) {
        let combined = self.adds as u64 + other.adds as u64 + 1;
        if combined >= RENORM_LIMIT as u64 {
            // Bring both sides to canonical form so limb sums cannot
            // overflow, then add.
            self.normalize();
            let mut o = other.clone();
            o.normalize();
            for (a, b) in self.limbs.iter_mut().zip(&o.limbs) {
                *a += *b;
            }
            self.nonfinite |= o.nonfinite;
            self.adds = 2;
        } else {
            for (a, b) in self.limbs.iter_mut().zip(&other.limbs) {
                *a += *b;
            }
            self.nonfinite |= other.nonfinite;
            self.adds = combined as u32;
        }
    }

    /// Canonical form: every limb but the top one in `[0, 2^32)`.
    fn normalize(&mut self) {
        let mut carry: i64 = 0;
        for l in 0..N_LIMBS {
            let v = self.limbs[l] + carry;
            if l + 1 == N_LIMBS {
                self.limbs[l] = v;
                break;
            }
            let rem = v & LIMB_MASK;
            carry = (v - rem) >> 32;
            self.limbs[l] = rem;
        }
        self.adds = 1;
    }

    fn negate_in_place(&mut self) {
        for l in self.limbs.iter_mut() {
            *l = -*l;
        }
        self.normalize();
    }

    /// Round the exact sum to the nearest `f64` (ties to even).
    pub fn round(&self) -> f64 {
        if self.nonfinite {
            return f64::NAN;
        }
        let mut acc = self.clone();
        acc.normalize();
        let negative = acc.limbs[N_LIMBS - 1] < 0;
        if negative {
            acc.negate_in_place();
        }
        // Highest set bit position relative to 2^-1074.
        let mut top: Option<usize> = None;
        for l in (0..N_LIMBS).rev() {
            if acc.limbs[l] != 0 {
                let bit = 63 - (acc.limbs[l] as u64).leading_zeros() as usize;
                top = Some(32 * l + bit);
                break;
            }
        }
        let msb = match top {
            Some(p) => p as i64,
            None => return 0.0,
        };
        let bit_at = |pos: i64| -> u64 {
            if pos < 0 {
                return 0;
            }
            let l = (pos / 32) as usize;
            let s = (pos % 32) as u32;
            ((acc.limbs[l] as u64) >> s) & 1
        };
        let mut mant: u64 = 0;
        for k in 0..=52i64 {
            mant |= bit_at(msb - k) << (52 - k);
        }
        let round_bit = bit_at(msb - 53) == 1;
        let mut sticky = false;
        if msb - 54 >= 0 {
            let lowest = msb - 54;
            let full_limbs = (lowest / 32) as usize;
            for l in 0..full_limbs {
                if acc.limbs[l] != 0 {
                    sticky = true;
                    break;
                }
            }
            if !sticky {
                let bits_in_partial = (lowest % 32) + 1;
                let mask = (1i64 << bits_in_partial) - 1;
                sticky = acc.limbs[full_limbs] & mask != 0;
            }
        }
        let mut exp = msb - 52 - 1074;
        if round_bit && (sticky || mant & 1 == 1) {
            mant += 1;
            if mant == 1 << 53 {
                mant = 1 << 52;
                exp += 1;
            }
        }
        let magnitude = ldexp_exactish(mant, exp);
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

/// `mant * 2^exp` for a 53-bit mantissa. Exact whenever the result is
/// representable; the only inexact path (subnormal results) is fed
/// mantissas whose low bits are already zero, so no double rounding occurs.
fn ldexp_exactish(mant: u64, exp: i64) -> f64 {
    let mut value = mant as f64;
    let mut e = exp;
    while e > 0 {
        let step = e.min(1023);
        value *= pow2(step);
        e -= step;
    }
    while e < 0 {
        let step = (-e).min(1074);
        value *= pow2(-step);
        e += step;
    }
    value
}

/// Exact power of two as f64, `-1074 <= e <= 1023`.
fn pow2(e: i64) -> f64 {
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        // Subnormal powers of two are exact single-bit values.
        f64::from_bits(1u64 << (e + 1074) as u32)
    }
}

/// Exactly rounded dot product of two slices.
pub fn exact_dot(xs: &[f64], ys: &[f64]) -> ExactAccumulator {
    debug_assert_eq!(xs.len(), ys.len());
    let mut acc = ExactAccumulator::new();
    for (&x, &y) in xs.iter().zip(ys) {
        acc.add_product(x, y);
    }
    acc
}

/// Wire form: the canonical limbs plus a non-finite flag.
impl ExactAccumulator {
    pub fn to_limbs(&self) -> Vec<i64> {
        let mut acc = self.clone();
        acc.normalize();
        let mut out = acc.limbs;
        out.push(acc.nonfinite as i64);
        out
    }

    pub fn from_limbs(limbs: &[i64]) -> Option<Self> {
        if limbs.len() != N_LIMBS + 1 {
            return None;
        }
        Some(Self {
            limbs: limbs[..N_LIMBS].to_vec(),
            adds: 1,
            nonfinite: limbs[N_LIMBS] != 0,
        })
    }
}
