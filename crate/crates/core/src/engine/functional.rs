//! Functional mode: data is really enciphered and MACed under the full
//! version, so stale records can be replayed and caught.
//!
//! The cipher is an XOR keystream from HMAC-SHA256 over (full version,
//! address); the tag is HMAC-SHA256 over (full version, address, cipher)
//! truncated to the MAC width.

use std::collections::HashMap;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::{EngineError, ProtectionEngine};
use crate::params::{pack_full, BlockAddr, Geometry, StealthVersion};
use crate::rng::RandomSource;
use crate::trace::TraceEvent;

type HmacSha256 = Hmac<Sha256>;

pub const BLOCK_BYTES: usize = 64;

/// What untrusted memory holds for one block: ciphertext, its tag and the
/// page UV copy from the MAC block's spare bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub cipher: [u8; BLOCK_BYTES],
    pub mac: u64,
    pub uv: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayOutcome {
    Detected,
    SilentSuccess,
}

#[derive(Debug, Clone)]
pub(super) struct FunctionalStore {
    key: [u8; 32],
    records: HashMap<u64, Record>,
}

impl FunctionalStore {
    pub(super) fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        RandomSource::for_stream(seed, u64::MAX).fill(&mut key);
        Self { key, records: HashMap::new() }
    }

    fn hmac(&self, parts: &[&[u8]]) -> [u8; 32] {
        let mut m = HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length");
        for p in parts {
            m.update(p);
        }
        m.finalize().into_bytes().into()
    }

    fn keystream(&self, nonce: u64, addr: u64) -> [u8; BLOCK_BYTES] {
        let mut ks = [0u8; BLOCK_BYTES];
        for (i, chunk) in ks.chunks_mut(32).enumerate() {
            let h = self.hmac(&[b"enc", &nonce.to_le_bytes(), &addr.to_le_bytes(), &[i as u8]]);
            chunk.copy_from_slice(&h[..chunk.len()]);
        }
        ks
    }

    fn tag(&self, nonce: u64, addr: u64, cipher: &[u8; BLOCK_BYTES], mac_bits: u32) -> u64 {
        let h = self.hmac(&[b"mac", &nonce.to_le_bytes(), &addr.to_le_bytes(), cipher]);
        let t = u64::from_le_bytes(h[..8].try_into().unwrap());
        if mac_bits >= 64 {
            t
        } else {
            t & ((1u64 << mac_bits) - 1)
        }
    }

    fn xor(data: &[u8; BLOCK_BYTES], ks: &[u8; BLOCK_BYTES]) -> [u8; BLOCK_BYTES] {
        std::array::from_fn(|i| data[i] ^ ks[i])
    }

    fn seal(&self, nonce: u64, uv: u64, addr: u64, plain: &[u8; BLOCK_BYTES], mac_bits: u32) -> Record {
        let cipher = Self::xor(plain, &self.keystream(nonce, addr));
        Record { mac: self.tag(nonce, addr, &cipher, mac_bits), cipher, uv }
    }

    fn open(&self, nonce: u64, addr: u64, rec: &Record) -> [u8; BLOCK_BYTES] {
        Self::xor(&rec.cipher, &self.keystream(nonce, addr))
    }

    /// Rewrites the UV copy of every record of `page` without touching the
    /// ciphertext or tags.
    pub(super) fn relabel_page(&mut self, g: &Geometry, page: u64, uv: u64) {
        for b in 0..g.blocks_per_page() {
            if let Some(r) = self.records.get_mut(&g.block_addr(page, b)) {
                r.uv = uv;
            }
        }
    }
}

impl ProtectionEngine {
    fn functional_ref(&self) -> Result<&FunctionalStore, EngineError> {
        self.functional.as_ref().ok_or_else(|| EngineError::Config("functional mode is disabled".into()))
    }

    fn aligned(&self, addr: u64) -> Result<(u64, BlockAddr), EngineError> {
        let at = self.locate(addr)?;
        Ok((self.config.geometry.block_addr(at.page, at.block), at))
    }

    /// Verifies `rec` as a read of `addr` would: the tag is recomputed under
    /// the record's UV and the device's current stealth version.
    fn verifies(&self, addr: u64, at: BlockAddr, rec: &Record) -> Result<bool, EngineError> {
        let f = self.functional_ref()?;
        let stealth = self.store_ref()?.peek(at);
        let Ok(nonce) = pack_full(rec.uv, stealth.get(), &self.config.security) else {
            return Ok(false);
        };
        Ok(f.tag(nonce, addr, &rec.cipher, self.config.geometry.mac_bits) == rec.mac)
    }

    /// Writes `plain` to `addr`: one device UPDATE, then encrypt and MAC
    /// under the new full version.
    pub fn functional_write(&mut self, addr: u64, plain: &[u8; BLOCK_BYTES]) -> Result<Record, EngineError> {
        self.functional_ref()?;
        let (addr, at) = self.aligned(addr)?;
        self.process_access(TraceEvent::write(addr))?;
        let stealth = self.store_ref()?.peek(at);
        let uv = self.uv(at.page);
        let nonce = pack_full(uv, stealth.get(), &self.config.security)?;
        let mac_bits = self.config.geometry.mac_bits;
        let f = self.functional.as_mut().expect("checked above");
        let rec = f.seal(nonce, uv, addr, plain, mac_bits);
        f.records.insert(addr, rec.clone());
        Ok(rec)
    }

    /// Reads `addr`, verifying its MAC; a failure latches the kill switch.
    /// Never-written blocks read as zeros.
    pub fn functional_read(&mut self, addr: u64) -> Result<[u8; BLOCK_BYTES], EngineError> {
        self.functional_ref()?;
        let (addr, at) = self.aligned(addr)?;
        self.process_access(TraceEvent::read(addr))?;
        let Some(rec) = self.functional_ref()?.records.get(&addr).cloned() else {
            return Ok([0; BLOCK_BYTES]);
        };
        if !self.verifies(addr, at, &rec)? {
            self.trip(format!("MAC mismatch reading {addr:#x}"));
            return Err(EngineError::Integrity { addr });
        }
        let stealth = self.store_ref()?.peek(at);
        let nonce = pack_full(rec.uv, stealth.get(), &self.config.security)?;
        Ok(self.functional_ref()?.open(nonce, addr, &rec))
    }

    /// Copy of the record currently stored for `addr`, as an attacker with
    /// bus access would capture it.
    pub fn capture(&self, addr: u64) -> Result<Option<Record>, EngineError> {
        let (addr, _) = self.aligned(addr)?;
        Ok(self.functional_ref()?.records.get(&addr).cloned())
    }

    /// Substitutes `old` for the stored record of `addr` and verifies it as
    /// a read would. The genuine record is restored afterwards; a detection
    /// latches the kill switch.
    pub fn inject_replay(&mut self, addr: u64, old: &Record) -> Result<ReplayOutcome, EngineError> {
        self.check_alive()?;
        self.functional_ref()?;
        let (addr, at) = self.aligned(addr)?;
        let f = self.functional.as_mut().expect("checked above");
        let genuine = f.records.insert(addr, old.clone());
        let ok = self.verifies(addr, at, old);
        let f = self.functional.as_mut().expect("checked above");
        match genuine {
            Some(g) => f.records.insert(addr, g),
            None => f.records.remove(&addr),
        };
        if ok? {
            Ok(ReplayOutcome::SilentSuccess)
        } else {
            self.trip(format!("replayed record detected at {addr:#x}"));
            Ok(ReplayOutcome::Detected)
        }
    }

    /// Re-enciphers every stored block of `page` from its pre-reset version
    /// to the current one.
    pub(super) fn reencrypt_page(
        &mut self,
        page: u64,
        prior: &[StealthVersion],
        new_uv: u64,
    ) -> Result<(), EngineError> {
        let g = self.config.geometry;
        let params = self.config.security;
        let mac_bits = g.mac_bits;
        let store = self.store.as_ref().expect("functional mode implies toleo");
        let f = self.functional.as_mut().expect("functional mode");
        for b in 0..g.blocks_per_page() {
            let addr = g.block_addr(page, b);
            let Some(rec) = f.records.get(&addr) else { continue };
            let old_nonce = pack_full(rec.uv, prior[b as usize].get(), &params)?;
            let plain = f.open(old_nonce, addr, rec);
            let new_nonce = pack_full(new_uv, store.peek(BlockAddr { page, block: b }).get(), &params)?;
            let sealed = f.seal(new_nonce, new_uv, addr, &plain, mac_bits);
            f.records.insert(addr, sealed);
        }
        Ok(())
    }
}
