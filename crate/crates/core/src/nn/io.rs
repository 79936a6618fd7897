//! Binary weights file.
//!
//! ```text
//! "PSMW"            4 bytes magic
//! version           u32 LE (currently 1)
//! digest            32 bytes, SHA-256 of the canonical NetworkSpec text
//! count             u64 LE, number of values that follow
//! values            count x f32 LE; per parametric layer in declared
//!                   order: weights, then biases
//! ```

use std::fs;
use std::path::Path;

use super::network::Network;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PSMW";
pub const WEIGHTS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32 + 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightsHeader {
    pub version: u32,
    pub digest: [u8; 32],
    pub count: u64,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_weights(net: &Network) -> Vec<u8> {
    let values: Vec<f64> = net.params().iter().flatten().flat_map(|p| p.iter().copied()).collect();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&net.spec().digest());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<WeightsHeader> {
    let corrupt = |msg: &str| Error::Corrupt { path: path.to_path_buf(), msg: msg.to_string() };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("file shorter than the weights header"));
    }
    if &bytes[..4] != WEIGHTS_MAGIC {
        return Err(corrupt("bad magic bytes (expected PSMW)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let digest: [u8; 32] = bytes[8..40].try_into().unwrap();
    let count = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
    Ok(WeightsHeader { version, digest, count })
}

pub fn read_header(path: impl AsRef<Path>) -> Result<WeightsHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_header(&bytes, path)
}

/// Replaces the parameters of `net` with the ones in `bytes`.
pub fn decode_weights_into(net: &mut Network, bytes: &[u8], path: &Path) -> Result<()> {
    let header = parse_header(bytes, path)?;
    let expected = net.spec().digest();
    if header.digest != expected {
        return Err(Error::IncompatibleArchitecture { expected: hex(&expected), found: hex(&header.digest) });
    }
    let total: usize = net.params().iter().flatten().map(|p| p.len()).sum();
    let body = &bytes[HEADER_LEN..];
    if header.count as usize != total || body.len() != 4 * total {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("expected {total} values, header says {} and body holds {} bytes", header.count, body.len()),
        });
    }
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for p in net.params_mut().iter_mut().flatten() {
        for v in p.iter_mut() {
            *v = values.next().expect("length checked above");
        }
    }
    Ok(())
}

pub fn load_weights(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights_into(net, &bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NetworkSpec, Tensor, WeightInit};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.psmw");
        let net = Network::new(NetworkSpec::desk_classifier(3), WeightInit::He, 11).unwrap();
        save_weights(&net, &path).unwrap();
        let mut loaded = Network::zeros(NetworkSpec::desk_classifier(3)).unwrap();
        load_weights(&mut loaded, &path).unwrap();
        assert_eq!(loaded, net);
        let x = Tensor::new(vec![32, 32, 3], (0..3072).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.psmw");
        let net = Network::new(NetworkSpec::desk_classifier(3), WeightInit::He, 11).unwrap();
        let bytes = encode_weights(&net);
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let mut target = Network::zeros(NetworkSpec::desk_classifier(3)).unwrap();
        assert!(matches!(load_weights(&mut target, &path), Err(Error::Corrupt { .. })));
        fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_weights(&mut target, &path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn different_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.psmw");
        let net = Network::new(NetworkSpec::desk_classifier(3), WeightInit::He, 11).unwrap();
        save_weights(&net, &path).unwrap();
        let mut other = Network::zeros(NetworkSpec::desk_classifier(4)).unwrap();
        assert!(matches!(load_weights(&mut other, &path), Err(Error::IncompatibleArchitecture { .. })));
    }
}
