//! Image handles passed between stages and backends.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{DynamicImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {id}: {message}")]
    Decode { id: String, message: String },
    #[error("invalid image {id}: {message}")]
    Invalid { id: String, message: String },
}

/// Where the image bytes live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Path(PathBuf),
    /// Encoded image file bytes (PNG or JPEG), base64 in JSON.
    Bytes(#[serde(with = "b64_bytes")] Vec<u8>),
}

/// An image with known dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub source: ImageSource,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    /// References an image file, reading only its header for dimensions.
    pub fn from_path(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let id = id.into();
        let path = path.as_ref();
        let (width, height) = image::image_dimensions(path).map_err(|e| match e {
            image::ImageError::IoError(source) => ImageError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => ImageError::Decode {
                id: id.clone(),
                message: other.to_string(),
            },
        })?;
        Self::checked(id, ImageSource::Path(path.to_path_buf()), width, height)
    }

    /// Wraps encoded image bytes.
    pub fn from_encoded(id: impl Into<String>, bytes: Vec<u8>) -> Result<Self, ImageError> {
        let id = id.into();
        let reader = image::ImageReader::new(Cursor::new(&bytes))
            .with_guessed_format()
            .map_err(|e| ImageError::Decode {
                id: id.clone(),
                message: e.to_string(),
            })?;
        let (width, height) = reader.into_dimensions().map_err(|e| ImageError::Decode {
            id: id.clone(),
            message: e.to_string(),
        })?;
        Self::checked(id, ImageSource::Bytes(bytes), width, height)
    }

    /// Encodes an in-memory RGB buffer as PNG.
    pub fn from_rgb(id: impl Into<String>, rgb: &RgbImage) -> Result<Self, ImageError> {
        let id = id.into();
        let bytes = encode_png(&DynamicImage::ImageRgb8(rgb.clone())).map_err(|message| {
            ImageError::Decode {
                id: id.clone(),
                message,
            }
        })?;
        Self::checked(id, ImageSource::Bytes(bytes), rgb.width(), rgb.height())
    }

    fn checked(
        id: String,
        source: ImageSource,
        width: u32,
        height: u32,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid {
                id,
                message: format!("zero-sized image {width}x{height}"),
            });
        }
        Ok(Self {
            id,
            source,
            width,
            height,
        })
    }

    /// Raw encoded bytes of the image file.
    pub fn bytes(&self) -> Result<Vec<u8>, ImageError> {
        match &self.source {
            ImageSource::Bytes(b) => Ok(b.clone()),
            ImageSource::Path(p) => std::fs::read(p).map_err(|source| ImageError::Io {
                path: p.clone(),
                source,
            }),
        }
    }

    pub fn decode(&self) -> Result<DynamicImage, ImageError> {
        let bytes = self.bytes()?;
        image::load_from_memory(&bytes).map_err(|e| ImageError::Decode {
            id: self.id.clone(),
            message: e.to_string(),
        })
    }

    pub fn load_rgb(&self) -> Result<RgbImage, ImageError> {
        Ok(self.decode()?.to_rgb8())
    }

    /// SHA-256 of the encoded bytes, hex.
    pub fn digest(&self) -> Result<String, ImageError> {
        Ok(hex_digest(&self.bytes()?))
    }

    pub fn long_side(&self) -> u32 {
        self.width.max(self.height)
    }

    /// Resolves a relative path source against `base`.
    pub fn resolved_against(mut self, base: &Path) -> Self {
        if let ImageSource::Path(p) = &self.source {
            if p.is_relative() {
                self.source = ImageSource::Path(base.join(p));
            }
        }
        self
    }
}

pub(crate) fn encode_png(img: &DynamicImage) -> Result<Vec<u8>, String> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(out.into_inner())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub(crate) fn to_base64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub(crate) fn from_base64(text: &str) -> Result<Vec<u8>, String> {
    B64.decode(text.trim()).map_err(|e| e.to_string())
}

mod b64_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::to_base64(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        super::from_base64(&text).map_err(serde::de::Error::custom)
    }
}
