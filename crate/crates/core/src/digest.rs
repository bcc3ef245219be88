//! SHA-256 digests of parameter sets and byte buffers.

use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&sha256(bytes))
}

/// Digest over shapes and little-endian values of a sequence of tensors.
pub fn tensors<'a, T: Scalar>(tensors: impl IntoIterator<Item = &'a Tensor<T>>) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    for t in tensors {
        buf.clear();
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
        hasher.update(&buf);
    }
    hex(&hasher.finalize())
}

/// First 8 bytes of the SHA-256 of a tensor, as an integer.
pub fn tensor_u64<T: Scalar>(t: &Tensor<T>) -> u64 {
    let mut buf = Vec::with_capacity(t.len() * T::BYTES);
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    let d = Sha256::digest(&buf);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
