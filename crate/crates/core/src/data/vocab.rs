use crate::error::{Error, Result};

pub type TokenSequence = Vec<u32>;

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
/// 256 byte tokens followed by BOS, EOS and PAD.
pub const VOCAB_SIZE: usize = 259;

pub fn is_special(token: u32) -> bool {
    token >= 256
}

pub fn tokenize(bytes: &[u8]) -> TokenSequence {
    bytes.iter().map(|&b| b as u32).collect()
}

pub fn detokenize(tokens: &[u32]) -> Result<Vec<u8>> {
    tokens
        .iter()
        .map(|&t| {
            if is_special(t) {
                Err(Error::SpecialToken(t))
            } else {
                Ok(t as u8)
            }
        })
        .collect()
}

/// Bytes before the first EOS, as (lossy) UTF-8. Other special tokens are dropped.
pub fn render(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .take_while(|&&t| t != EOS)
        .filter(|&&t| !is_special(t))
        .map(|&t| t as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}
