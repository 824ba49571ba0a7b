//! Sealed application images.
//!
//! ```text
//! app_id[16] | version u32 BE | code_len u32 BE | sealed code (code_len bytes) | tag[16]
//! ```
//!
//! The 24-byte header is the associated data and also determines the
//! nonce. Images are sealed under the per-epoch image key, so one
//! (key, header) pair never seals two different codes.

use std::fmt;

use thiserror::Error;
use zeroize::Zeroizing;

use crate::crypto::{self, AeadKey, AlgId, CryptoError, Nonce, Tag, NONCE_LEN, TAG_LEN};

pub const IMAGE_HEADER_LEN: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("malformed image")]
    Malformed,
    #[error("image authentication failed")]
    AuthFailure,
}

impl From<CryptoError> for ImageError {
    fn from(_: CryptoError) -> Self {
        ImageError::AuthFailure
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AppImage {
    pub app_id: [u8; 16],
    pub version: u32,
    pub body: Vec<u8>,
    pub tag: Tag,
}

impl fmt::Debug for AppImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AppImage")
            .field("app_id", &hex::encode(self.app_id))
            .field("version", &self.version)
            .field("code_len", &self.body.len())
            .finish()
    }
}

fn header(app_id: &[u8; 16], version: u32, code_len: usize) -> [u8; IMAGE_HEADER_LEN] {
    let mut h = [0u8; IMAGE_HEADER_LEN];
    h[..16].copy_from_slice(app_id);
    h[16..20].copy_from_slice(&version.to_be_bytes());
    h[20..24].copy_from_slice(&(code_len as u32).to_be_bytes());
    h
}

fn nonce_for(header: &[u8; IMAGE_HEADER_LEN]) -> Nonce {
    let mut seed = b"image-nonce".to_vec();
    seed.extend_from_slice(header);
    let mut n = [0u8; NONCE_LEN];
    n.copy_from_slice(&crypto::xof_expand(&seed, NONCE_LEN));
    Nonce(n)
}

impl AppImage {
    pub fn seal(alg: AlgId, key: &AeadKey, app_id: [u8; 16], version: u32, code: &[u8]) -> Self {
        let h = header(&app_id, version, code.len());
        let (body, tag) = crypto::aead_encrypt(alg, key, &nonce_for(&h), &h, code);
        Self {
            app_id,
            version,
            body,
            tag,
        }
    }

    pub fn header(&self) -> [u8; IMAGE_HEADER_LEN] {
        header(&self.app_id, self.version, self.body.len())
    }

    pub fn code_len(&self) -> usize {
        self.body.len()
    }

    /// Decrypts into a buffer that is wiped when dropped.
    pub fn open(&self, alg: AlgId, key: &AeadKey) -> Result<Zeroizing<Vec<u8>>, ImageError> {
        let h = self.header();
        let mut buf = Zeroizing::new(self.body.clone());
        crypto::aead_decrypt_in_place(alg, key, &nonce_for(&h), &h, &mut buf, &self.tag)?;
        Ok(buf)
    }

    /// Re-seals under `to`, e.g. after a key renewal.
    pub fn reseal(&self, alg: AlgId, from: &AeadKey, to: &AeadKey) -> Result<Self, ImageError> {
        let code = self.open(alg, from)?;
        Ok(Self::seal(alg, to, self.app_id, self.version, &code))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + self.body.len() + TAG_LEN);
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.tag.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() < IMAGE_HEADER_LEN + TAG_LEN {
            return Err(ImageError::Malformed);
        }
        let code_len = u32::from_be_bytes(bytes[20..24].try_into().unwrap()) as usize;
        if bytes.len() != IMAGE_HEADER_LEN + code_len + TAG_LEN {
            return Err(ImageError::Malformed);
        }
        let mut tag = Tag::default();
        tag.0.copy_from_slice(&bytes[bytes.len() - TAG_LEN..]);
        Ok(Self {
            app_id: bytes[..16].try_into().unwrap(),
            version: u32::from_be_bytes(bytes[16..20].try_into().unwrap()),
            body: bytes[IMAGE_HEADER_LEN..IMAGE_HEADER_LEN + code_len].to_vec(),
            tag,
        })
    }
}
