//! Binary PGM (`P5`) and PPM (`P6`) with at most 8 bits per sample.
//!
//! Samples map linearly to `[0, 1]` by `v / maxval`; writing always uses
//! `maxval = 255` and `round(255 * v)` after clamping, so 8-bit data survives
//! a read/write cycle bit for bit.

use std::fs;
use std::path::Path;

use super::{ImageError, ImageTensor};

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageTensor, ImageError> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_pnm(path: impl AsRef<Path>, img: &ImageTensor) -> Result<(), ImageError> {
    fs::write(path, encode_pnm(img))?;
    Ok(())
}

pub fn encode_pnm(img: &ImageTensor) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageTensor, ImageError> {
    let mut cursor = Header { bytes, pos: 0 };
    let channels = match cursor.token()? {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(ImageError::Format(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::Format(format!("maxval {maxval} is not in 1..=255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = cursor.pos + 1;
    let len = width * height * channels;
    let raster = bytes
        .get(start..start + len)
        .ok_or_else(|| ImageError::Format(format!("raster truncated: need {len} bytes")))?;
    let scale = maxval as f64;
    ImageTensor::new(
        height,
        width,
        channels,
        raster.iter().map(|&b| b as f64 / scale).collect(),
    )
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Result<&'a [u8], ImageError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Format("unexpected end of header".into())),
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Format(format!("bad {what}: {:?}", String::from_utf8_lossy(tok))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend([0u8, 51, 102, 153, 204, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.shape(), (2, 3, 1));
        assert_eq!(img.get(1, 2, 0), 1.0);
        assert_eq!(img.get(0, 1, 0), 0.2);
    }

    #[test]
    fn low_maxval_scales_linearly() {
        let mut bytes = b"P5 2 2 15\n".to_vec();
        bytes.extend([0u8, 5, 10, 15]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 5.0 / 15.0, 10.0 / 15.0, 1.0]);
    }

    #[test]
    fn truncated_and_unknown_rejected() {
        assert!(matches!(decode_pnm(b"P6 2 2 255\n\x00\x01"), Err(ImageError::Format(_))));
        assert!(matches!(decode_pnm(b"P3 2 2 255\n"), Err(ImageError::Format(_))));
        assert!(matches!(decode_pnm(b"P5 2 2 65535\n"), Err(ImageError::Format(_))));
    }

    proptest! {
        #[test]
        fn eight_bit_round_trip_is_exact(
            (w, h, rgb, raster) in (2usize..9, 2usize..9, any::<bool>()).prop_flat_map(|(w, h, rgb)| {
                let c = if rgb { 3 } else { 1 };
                (Just(w), Just(h), Just(rgb), proptest::collection::vec(any::<u8>(), w * h * c))
            })
        ) {
            let mut bytes = format!("{} {w} {h}\n255\n", if rgb { "P6" } else { "P5" }).into_bytes();
            bytes.extend(&raster);
            let img = decode_pnm(&bytes).unwrap();
            let again = encode_pnm(&img);
            prop_assert_eq!(&again[again.len() - raster.len()..], &raster[..]);
            prop_assert_eq!(decode_pnm(&again).unwrap(), img);
        }
    }
}
