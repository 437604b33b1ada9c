//! Binary feature bundle: one news sample's label and node features.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "GMON" | version u16 | label u8 | reserved u8
//! | n_text u32 | d_text u32 | n_visual u32 | d_visual u32
//! | sample_id_len u16 | sample_id (UTF-8)
//! | text matrix (f32, row-major) | visual matrix (f32, row-major)
//! ```

use std::path::Path;

use super::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::{TEXT_DIM, VISUAL_RAW_DIM};
use crate::tensor::Tensor;

pub const BUNDLE_MAGIC: [u8; 4] = *b"GMON";
pub const BUNDLE_VERSION: u16 = 1;

/// One sample: label plus text rows (row 0 = whole-text embedding) and raw
/// visual rows (row 0 = whole-image embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBundle {
    pub sample_id: String,
    /// 0 = real, 1 = fake.
    pub label: u8,
    pub text_features: Tensor<f32>,
    pub visual_features: Tensor<f32>,
}

impl SampleBundle {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Validation(format!(
                "sample {}: label {} is not 0 (real) or 1 (fake)",
                self.sample_id, self.label
            )));
        }
        if self.sample_id.len() > u16::MAX as usize {
            return Err(Error::Validation("sample id longer than 65535 bytes".into()));
        }
        for (what, t, width) in [
            ("text", &self.text_features, TEXT_DIM),
            ("visual", &self.visual_features, VISUAL_RAW_DIM),
        ] {
            if t.rank() != 2 || t.cols() != width {
                return Err(Error::Validation(format!(
                    "sample {}: {what} features have shape {:?}, expected width {width}",
                    self.sample_id,
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::Validation(format!(
                    "sample {}: {what} features contain non-finite values",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }

    pub fn n_text(&self) -> usize {
        self.text_features.rows()
    }

    pub fn n_visual(&self) -> usize {
        self.visual_features.rows()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer::with_capacity(
            28 + self.sample_id.len() + 4 * (self.text_features.len() + self.visual_features.len()),
        );
        w.bytes(&BUNDLE_MAGIC);
        w.u16(BUNDLE_VERSION);
        w.u8(self.label);
        w.u8(0);
        w.u32(self.n_text() as u32);
        w.u32(TEXT_DIM as u32);
        w.u32(self.n_visual() as u32);
        w.u32(VISUAL_RAW_DIM as u32);
        w.u16(self.sample_id.len() as u16);
        w.bytes(self.sample_id.as_bytes());
        w.f32s(self.text_features.data());
        w.f32s(self.visual_features.data());
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(&BUNDLE_MAGIC)?;
        let version_at = r.offset();
        let version = r.u16()?;
        if version != BUNDLE_VERSION {
            return Err(Error::Format {
                offset: version_at,
                message: format!("unsupported bundle version {version}"),
            });
        }
        let label = r.u8()?;
        let _reserved = r.u8()?;
        let n_text = r.u32()? as usize;
        let d_text = r.u32()? as usize;
        let n_visual = r.u32()? as usize;
        let d_visual = r.u32()? as usize;
        if d_text != TEXT_DIM {
            return Err(Error::Validation(format!(
                "text feature width {d_text}, expected {TEXT_DIM}"
            )));
        }
        if d_visual != VISUAL_RAW_DIM {
            return Err(Error::Validation(format!(
                "visual feature width {d_visual}, expected {VISUAL_RAW_DIM}"
            )));
        }
        if n_text == 0 || n_visual == 0 {
            return Err(Error::Validation(format!(
                "bundle has {n_text} text and {n_visual} visual rows; both need the global row"
            )));
        }
        let id_len = r.u16()? as usize;
        let id_at = r.offset();
        let sample_id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| Error::Format {
            offset: id_at,
            message: "sample id is not UTF-8".into(),
        })?;
        let text = r.f32s(n_text * d_text)?;
        let visual = r.f32s(n_visual * d_visual)?;
        r.finish()?;
        let bundle = SampleBundle {
            sample_id,
            label,
            text_features: Tensor::matrix(n_text, d_text, text)?,
            visual_features: Tensor::matrix(n_visual, d_visual, visual)?,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn write_bundle(bundle: &SampleBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = bundle.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<SampleBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SampleBundle::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(n_text: usize, n_visual: usize, seed: f32) -> SampleBundle {
        let fill = |n: usize, d: usize, k: f32| {
            Tensor::matrix(n, d, (0..n * d).map(|i| ((i as f32) * 0.37 + k).sin()).collect()).unwrap()
        };
        SampleBundle {
            sample_id: format!("s-{seed}"),
            label: 1,
            text_features: fill(n_text, TEXT_DIM, seed),
            visual_features: fill(n_visual, VISUAL_RAW_DIM, seed + 1.0),
        }
    }

    #[test]
    fn header_layout() {
        let b = bundle(1, 1, 0.0);
        let bytes = b.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"GMON");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 768);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2048);
        assert_eq!(bytes.len(), 26 + b.sample_id.len() + 4 * (768 + 2048));
    }

    #[test]
    fn minimal_bundle_round_trips() {
        let b = bundle(1, 1, 0.5);
        assert_eq!(SampleBundle::from_bytes(&b.to_bytes().unwrap()).unwrap(), b);
    }

    #[test]
    fn rejects_non_finite() {
        let mut b = bundle(2, 1, 0.0);
        b.text_features.data_mut()[7] = f32::NAN;
        assert!(matches!(b.to_bytes(), Err(Error::Validation(_))));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = bundle(2, 2, 0.0).to_bytes().unwrap();
        for cut in [3, 10, 30, bytes.len() - 1] {
            match SampleBundle::from_bytes(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = bundle(1, 1, 0.0).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(SampleBundle::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
        bytes[0] = b'G';
        bytes[4] = 9;
        assert!(matches!(SampleBundle::from_bytes(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn wrong_text_width_names_expected() {
        let mut bytes = bundle(1, 1, 0.0).to_bytes().unwrap();
        bytes[12..16].copy_from_slice(&512u32.to_le_bytes());
        let err = SampleBundle::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("768"), "{err}");
    }
}
