use alloc::string::String;
use core::fmt::{Debug, Write};
use core::hash::Hasher;

use fnv::FnvHasher;

struct HashWriter(FnvHasher);

impl Write for HashWriter {
    fn write_str(&mut self, s: &str) -> core::fmt::Result {
        self.0.write(s.as_bytes());
        Ok(())
    }
}

/// 64-bit FNV-1a of the value's `Debug` rendering, as 16 hex digits.
///
/// Floats render in shortest round-trip form, so two values share a
/// fingerprint exactly when every field compares bit-equal (up to the sign
/// of zero and NaN payloads).
pub fn fingerprint(value: &impl Debug) -> String {
    let mut w = HashWriter(FnvHasher::default());
    let _ = write!(w, "{value:?}");
    alloc::format!("{:016x}", w.0.finish())
}

/// Fingerprint of a configuration together with a parameter vector, hashed
/// by bit pattern.
pub fn fingerprint_with_params(value: &impl Debug, params: &[f32]) -> String {
    let mut w = HashWriter(FnvHasher::default());
    let _ = write!(w, "{value:?}");
    for p in params {
        w.0.write(&p.to_bits().to_le_bytes());
    }
    alloc::format!("{:016x}", w.0.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinguishes_fields() {
        assert_eq!(fingerprint(&(1.0f64, 2u8)), fingerprint(&(1.0f64, 2u8)));
        assert_ne!(fingerprint(&(1.0f64, 2u8)), fingerprint(&(1.0000000001f64, 2u8)));
        assert_eq!(fingerprint(&"").len(), 16);
        assert_ne!(fingerprint_with_params(&1, &[0.0]), fingerprint_with_params(&1, &[-0.0]));
    }
}
