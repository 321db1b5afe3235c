//! Geometry, version widths and the modular arithmetic on stealth versions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the base field inside a packed 12-byte flat entry.
pub const FLAT_BASE_FIELD_BITS: u32 = 27;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamError {
    #[error("{name} must be a power of two, got {value}")]
    NotPowerOfTwo { name: &'static str, value: u64 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid security parameters: {0}")]
    Security(String),
    #[error("address {addr:#x} outside protected range of {limit:#x} bytes")]
    OutOfRange { addr: u64, limit: u64 },
    #[error("value {value} does not fit in {bits} bits")]
    Width { value: u64, bits: u32 },
}

/// Page / block / MAC-block shape of protected memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub page_bytes: u64,
    pub block_bytes: u64,
    pub mac_bits: u32,
    pub macs_per_block: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { page_bytes: 4096, block_bytes: 64, mac_bits: 56, macs_per_block: 8 }
    }
}

impl Geometry {
    pub fn blocks_per_page(&self) -> u32 {
        (self.page_bytes / self.block_bytes) as u32
    }

    /// Bits left over in a MAC block after packing `macs_per_block` tags.
    pub fn mac_spare_bits(&self) -> u64 {
        (self.block_bytes * 8).saturating_sub(self.macs_per_block as u64 * self.mac_bits as u64)
    }

    /// Bytes of data covered by one MAC block.
    pub fn mac_span_bytes(&self) -> u64 {
        self.block_bytes * self.macs_per_block as u64
    }

    pub fn validate(&self, params: &SecurityParams) -> Result<(), ParamError> {
        if !self.page_bytes.is_power_of_two() {
            return Err(ParamError::NotPowerOfTwo { name: "page_bytes", value: self.page_bytes });
        }
        if !self.block_bytes.is_power_of_two() {
            return Err(ParamError::NotPowerOfTwo { name: "block_bytes", value: self.block_bytes });
        }
        if self.block_bytes > self.page_bytes {
            return Err(ParamError::Geometry("block larger than page".into()));
        }
        let blocks = self.blocks_per_page();
        if blocks > 64 {
            return Err(ParamError::Geometry(format!("{blocks} blocks per page exceed the 64-bit coverage vector")));
        }
        if self.mac_bits == 0 || self.mac_bits > 64 || self.macs_per_block == 0 {
            return Err(ParamError::Geometry("MAC width must be in 1..=64 and macs_per_block > 0".into()));
        }
        if self.macs_per_block as u64 * self.mac_bits as u64 > self.block_bytes * 8 {
            return Err(ParamError::Geometry("MACs do not fit in a block".into()));
        }
        if self.mac_spare_bits() < params.upper_bits as u64 {
            return Err(ParamError::Geometry(format!(
                "{} spare MAC-block bits cannot hold a {}-bit upper version",
                self.mac_spare_bits(),
                params.upper_bits
            )));
        }
        if !(blocks as u64).is_multiple_of(self.macs_per_block as u64) {
            return Err(ParamError::Geometry("a page must hold a whole number of MAC blocks".into()));
        }
        Ok(())
    }

    /// Splits a byte address into (page index, block within page).
    pub fn decompose(&self, addr: u64, protected_bytes: u64) -> Result<BlockAddr, ParamError> {
        if addr >= protected_bytes {
            return Err(ParamError::OutOfRange { addr, limit: protected_bytes });
        }
        Ok(BlockAddr {
            page: addr / self.page_bytes,
            block: ((addr / self.block_bytes) % self.blocks_per_page() as u64) as u32,
        })
    }

    /// Number of pages needed to cover `bytes`, rounding a partial page up.
    pub fn pages_for(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.page_bytes)
    }

    pub fn block_addr(&self, page: u64, block: u32) -> u64 {
        page * self.page_bytes + block as u64 * self.block_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockAddr {
    pub page: u64,
    pub block: u32,
}

/// Free function form of [`Geometry::decompose`].
pub fn addr_decompose(addr: u64, g: &Geometry, protected_bytes: u64) -> Result<BlockAddr, ParamError> {
    g.decompose(addr, protected_bytes)
}

/// Version widths and reset probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    pub stealth_bits: u32,
    pub upper_bits: u32,
    /// Resets fire with probability `2^-reset_exp` per leading-version advance.
    pub reset_exp: u32,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self { stealth_bits: 27, upper_bits: 37, reset_exp: 20 }
    }
}

impl SecurityParams {
    pub fn new(stealth_bits: u32, upper_bits: u32, reset_exp: u32) -> Result<Self, ParamError> {
        let p = Self { stealth_bits, upper_bits, reset_exp };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.stealth_bits == 0 || self.stealth_bits > FLAT_BASE_FIELD_BITS {
            return Err(ParamError::Security(format!(
                "stealth width {} outside 1..={FLAT_BASE_FIELD_BITS}",
                self.stealth_bits
            )));
        }
        if self.upper_bits == 0 || self.stealth_bits + self.upper_bits > 64 {
            return Err(ParamError::Security(format!(
                "full version of {}+{} bits must fit in 64",
                self.upper_bits, self.stealth_bits
            )));
        }
        if self.reset_exp == 0 || self.reset_exp >= self.stealth_bits {
            return Err(ParamError::Security(format!(
                "reset exponent {} must satisfy 0 < R < S = {}",
                self.reset_exp, self.stealth_bits
            )));
        }
        Ok(())
    }

    pub fn full_bits(&self) -> u32 {
        self.stealth_bits + self.upper_bits
    }

    pub fn stealth_mask(&self) -> u64 {
        mask(self.stealth_bits)
    }

    pub fn stealth_modulus(&self) -> u64 {
        1u64 << self.stealth_bits
    }

    /// Number of distinct upper versions (`2^U`); `U < 64` after validation.
    pub fn uv_limit(&self) -> u64 {
        1u64 << self.upper_bits
    }

    pub fn stealth(&self, value: u64) -> StealthVersion {
        StealthVersion(value & self.stealth_mask())
    }
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// A stealth version; always reduced modulo `2^S` by its constructors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StealthVersion(u64);

impl StealthVersion {
    pub fn new(value: u64, params: &SecurityParams) -> Self {
        params.stealth(value)
    }

    pub fn get(self) -> u64 {
        self.0
    }

    /// Wraps an already-reduced value.
    pub(crate) const fn raw(value: u64) -> Self {
        StealthVersion(value)
    }

    pub fn add(self, d: u64, params: &SecurityParams) -> Self {
        StealthVersion(self.0.wrapping_add(d) & params.stealth_mask())
    }

    /// Forward distance from `earlier` to `self` modulo `2^S`.
    pub fn distance_from(self, earlier: StealthVersion, params: &SecurityParams) -> u64 {
        self.0.wrapping_sub(earlier.0) & params.stealth_mask()
    }
}

impl std::fmt::Display for StealthVersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

pub fn stealth_add(v: StealthVersion, d: u64, params: &SecurityParams) -> StealthVersion {
    v.add(d, params)
}

/// Upper version (page-shared) and stealth version of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FullVersion {
    pub uv: u64,
    pub stealth: StealthVersion,
}

impl FullVersion {
    pub fn pack(&self, params: &SecurityParams) -> Result<u64, ParamError> {
        pack_full(self.uv, self.stealth.get(), params)
    }
}

/// Concatenates `uv` (high bits) and `stealth` (low `S` bits) into the nonce.
pub fn pack_full(uv: u64, stealth: u64, params: &SecurityParams) -> Result<u64, ParamError> {
    if uv > mask(params.upper_bits) {
        return Err(ParamError::Width { value: uv, bits: params.upper_bits });
    }
    if stealth > params.stealth_mask() {
        return Err(ParamError::Width { value: stealth, bits: params.stealth_bits });
    }
    Ok(uv.checked_shl(params.stealth_bits).unwrap_or(0) | stealth)
}

pub fn unpack_full(nonce: u64, params: &SecurityParams) -> FullVersion {
    FullVersion {
        uv: nonce.checked_shr(params.stealth_bits).unwrap_or(0) & mask(params.upper_bits),
        stealth: StealthVersion(nonce & params.stealth_mask()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> (Geometry, SecurityParams) {
        (Geometry::default(), SecurityParams::default())
    }

    #[test]
    fn default_geometry_is_consistent() {
        let (g, p) = defaults();
        assert_eq!(g.blocks_per_page(), 64);
        assert_eq!(g.mac_spare_bits(), 64);
        g.validate(&p).unwrap();
        p.validate().unwrap();
        assert_eq!(p.full_bits(), 64);
    }

    #[test]
    fn decompose_examples() {
        let (g, _) = defaults();
        let lim = 1 << 40;
        assert_eq!(g.decompose(0, lim).unwrap(), BlockAddr { page: 0, block: 0 });
        assert_eq!(g.decompose(0x1040, lim).unwrap(), BlockAddr { page: 1, block: 1 });
        assert_eq!(g.decompose(0xFFF, lim).unwrap(), BlockAddr { page: 0, block: 63 });
        assert!(matches!(addr_decompose(4096, &g, 4096), Err(ParamError::OutOfRange { .. })));
    }

    #[test]
    fn stealth_add_examples() {
        let p = SecurityParams::default();
        let v = |x| StealthVersion::new(x, &p);
        assert_eq!(stealth_add(v(5), 0, &p), v(5));
        assert_eq!(stealth_add(v((1 << 27) - 1), 1, &p).get(), 0);
        assert_eq!(stealth_add(v(100), 130, &p).get(), 230);
    }

    #[test]
    fn pack_full_examples() {
        let p = SecurityParams::default();
        assert_eq!(pack_full(0, 0, &p).unwrap(), 0);
        assert_eq!(pack_full(1, 0, &p).unwrap(), 1 << 27);
        assert_eq!(pack_full((1 << 37) - 1, (1 << 27) - 1, &p).unwrap(), u64::MAX);
        assert!(pack_full(1 << 37, 0, &p).is_err());
        assert!(pack_full(0, 1 << 27, &p).is_err());
    }

    #[test]
    fn group_property_exhaustive_small_width() {
        let p = SecurityParams::new(6, 10, 3).unwrap();
        let m = p.stealth_modulus();
        for v in 0..m {
            for d in 0..m {
                let sv = StealthVersion::new(v, &p);
                assert_eq!(sv.add(d, &p).add(m - d, &p), sv);
            }
        }
    }

    #[test]
    fn pack_full_injective_small_width() {
        let p = SecurityParams::new(4, 5, 2).unwrap();
        let mut seen = std::collections::HashSet::new();
        for uv in 0..32 {
            for s in 0..16 {
                let n = pack_full(uv, s, &p).unwrap();
                assert!(seen.insert(n));
                assert_eq!(unpack_full(n, &p), FullVersion { uv, stealth: StealthVersion(s) });
            }
        }
        assert_eq!(seen.len(), 512);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SecurityParams::new(27, 37, 0).is_err());
        assert!(SecurityParams::new(27, 37, 27).is_err());
        assert!(SecurityParams::new(28, 36, 20).is_err());
        assert!(SecurityParams::new(27, 38, 20).is_err());
        let g = Geometry { page_bytes: 3000, ..Geometry::default() };
        assert!(g.validate(&SecurityParams::default()).is_err());
    }
}
