//! Reproducibility header embedded in every emitted artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 over the input files, in the order they were given.
    pub input_hash: String,
}

impl Provenance {
    pub fn new<'a>(command: &str, seed: u64, inputs: impl IntoIterator<Item = &'a [u8]>) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_owned(),
            command: command.to_owned(),
            seed,
            input_hash: hash_inputs(inputs),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }

    /// `# key: value` lines for CSV and text outputs.
    pub fn comment_lines(&self) -> String {
        format!(
            "# tool_version: {}\n# command: {}\n# seed: {}\n# input_hash: {}\n",
            self.tool_version, self.command, self.seed, self.input_hash
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of one input is its SHA-256; several inputs hash the concatenation
/// of their individual digests.
pub fn hash_inputs<'a>(inputs: impl IntoIterator<Item = &'a [u8]>) -> String {
    let digests: Vec<String> = inputs.into_iter().map(sha256_hex).collect();
    match digests.as_slice() {
        [one] => one.clone(),
        many => sha256_hex(many.concat().as_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_input_hash_is_plain_sha256() {
        assert_eq!(
            hash_inputs([b"abc".as_slice()]),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn multiple_inputs_are_order_sensitive() {
        let a = hash_inputs([b"a".as_slice(), b"b".as_slice()]);
        let b = hash_inputs([b"b".as_slice(), b"a".as_slice()]);
        assert_ne!(a, b);
    }
}
