use super::entropy::{context_of, EntropyModel};
use super::transform::{pad_plane, padded, DctBasis};
use super::{CodecConfig, CodecError};
use crate::image::ImageTensor;

/// Samples are transformed in 8-bit code values, so `quant_step` is in the
/// same units.
pub(crate) const CODE_SCALE: f64 = 255.0;

pub(crate) const MAGIC: &[u8; 4] = b"RDCF";
pub(crate) const VERSION: u8 = 1;
pub(crate) const HEADER_LEN: usize = 4 + 1 + 1 + 2 + 4 + 4 + 8 + 8;

/// Quantised block-transform coefficients of one image.
///
/// Coefficients are ordered channel, block (raster), then frequency row `v`
/// and column `u` within the block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    height: usize,
    width: usize,
    channels: usize,
    block_size: usize,
    quant_step: f64,
    model_id: u64,
    coeffs: Vec<i64>,
    bit_count: f64,
}

impl EncodedFrame {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn quant_step(&self) -> f64 {
        self.quant_step
    }

    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    pub fn coefficients(&self) -> &[i64] {
        &self.coeffs
    }

    /// Estimated size in bits under the model named by [`Self::model_id`].
    pub fn bit_count(&self) -> f64 {
        self.bit_count
    }

    /// Bits over the uncompressed 8-bit size.
    pub fn bits_per_sample(&self) -> f64 {
        self.bit_count / (self.height * self.width * self.channels) as f64
    }

    fn layout(&self) -> Layout {
        Layout::new(self.height, self.width, self.channels, self.block_size)
    }

    /// Serialises to the `RDCF` container. Fails if a coefficient does not
    /// fit in 16 bits.
    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(HEADER_LEN + 2 * self.coeffs.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.channels as u8);
        out.extend_from_slice(&(self.block_size as u16).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.quant_step.to_le_bytes());
        out.extend_from_slice(&self.model_id.to_le_bytes());
        for (i, &c) in self.coeffs.iter().enumerate() {
            let v = i16::try_from(c).map_err(|_| CodecError::Container(format!("coefficient {i} = {c} exceeds 16 bits")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses an `RDCF` container. The bit count is recomputed under `em`,
    /// whose id must match the one in the header.
    pub fn from_bytes(bytes: &[u8], em: &EntropyModel) -> Result<Self, CodecError> {
        let bad = |m: String| CodecError::Container(m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let channels = bytes[5] as usize;
        let block_size = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().expect("4")) as usize;
        let width = u32::from_le_bytes(bytes[12..16].try_into().expect("4")) as usize;
        let quant_step = f64::from_le_bytes(bytes[16..24].try_into().expect("8"));
        let model_id = u64::from_le_bytes(bytes[24..32].try_into().expect("8"));
        if channels != 1 && channels != 3 {
            return Err(bad(format!("channel count {channels}")));
        }
        if height < 2 || width < 2 || block_size == 0 {
            return Err(bad(format!("dims {height}x{width} block {block_size}")));
        }
        if !(quant_step.is_finite() && quant_step > 0.0) {
            return Err(bad(format!("quant_step {quant_step}")));
        }
        if model_id != em.id() {
            return Err(CodecError::ModelMismatch {
                frame: model_id,
                model: em.id(),
            });
        }
        let layout = Layout::new(height, width, channels, block_size);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 2 * layout.len() {
            return Err(bad(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                2 * layout.len()
            )));
        }
        let coeffs: Vec<i64> = payload
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as i64)
            .collect();
        let bit_count = frame_bits(&coeffs, &layout, em);
        Ok(Self {
            height,
            width,
            channels,
            block_size,
            quant_step,
            model_id,
            coeffs,
            bit_count,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub block: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl Layout {
    pub fn new(height: usize, width: usize, channels: usize, block: usize) -> Self {
        Self {
            height,
            width,
            channels,
            block,
            padded_h: padded(height, block),
            padded_w: padded(width, block),
        }
    }

    pub fn blocks_per_channel(&self) -> usize {
        (self.padded_h / self.block) * (self.padded_w / self.block)
    }

    pub fn len(&self) -> usize {
        self.channels * self.padded_h * self.padded_w
    }
}

/// Calls `f(ctx, value)` for every coded symbol, with DC replaced by its
/// difference to the previous block's DC.
pub(crate) fn for_each_symbol(coeffs: &[i64], layout: &Layout, mut f: impl FnMut(usize, i64)) {
    let b = layout.block;
    let per_block = b * b;
    for channel in coeffs.chunks_exact(layout.blocks_per_channel() * per_block) {
        let mut prev_dc = 0;
        for block in channel.chunks_exact(per_block) {
            f(0, block[0] - prev_dc);
            prev_dc = block[0];
            for (k, &c) in block.iter().enumerate().skip(1) {
                f(context_of(k / b, k % b), c);
            }
        }
    }
}

pub(crate) fn frame_bits(coeffs: &[i64], layout: &Layout, em: &EntropyModel) -> f64 {
    let mut bits = 0.0;
    for_each_symbol(coeffs, layout, |ctx, v| bits += em.value_bits(ctx, v));
    bits
}

pub(crate) fn quantize(img: &ImageTensor, cfg: &CodecConfig) -> Result<(Vec<i64>, Layout), CodecError> {
    cfg.validate()?;
    if let Some(i) = img.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(CodecError::OutOfRange {
            index: i,
            value: img.data()[i],
        });
    }
    let (h, w, ch) = img.shape();
    let layout = Layout::new(h, w, ch, cfg.block_size);
    let b = cfg.block_size;
    let (ph, pw) = (layout.padded_h, layout.padded_w);
    let dct = DctBasis::new(b);
    let mut coeffs = Vec::with_capacity(layout.len());
    let mut block = vec![0.0; b * b];
    let mut out = vec![0.0; b * b];
    for c in 0..ch {
        let plane = pad_plane(&img.plane(c), h, w, ph, pw);
        for by in (0..ph).step_by(b) {
            for bx in (0..pw).step_by(b) {
                for y in 0..b {
                    for x in 0..b {
                        block[y * b + x] = plane[(by + y) * pw + bx + x] * CODE_SCALE;
                    }
                }
                dct.forward(&block, &mut out);
                coeffs.extend(out.iter().map(|v| (v / cfg.quant_step).round() as i64));
            }
        }
    }
    Ok((coeffs, layout))
}

/// Transforms, quantises and prices `img`.
pub fn encode(img: &ImageTensor, cfg: &CodecConfig, em: &EntropyModel) -> Result<EncodedFrame, CodecError> {
    let (coeffs, layout) = quantize(img, cfg)?;
    let bit_count = frame_bits(&coeffs, &layout, em);
    Ok(EncodedFrame {
        height: layout.height,
        width: layout.width,
        channels: layout.channels,
        block_size: layout.block,
        quant_step: cfg.quant_step,
        model_id: em.id(),
        coeffs,
        bit_count,
    })
}

/// Dequantises, inverts the transform, crops the padding and clamps to `[0, 1]`.
pub fn decode(f: &EncodedFrame) -> Result<ImageTensor, CodecError> {
    let layout = f.layout();
    if f.coeffs.len() != layout.len() {
        return Err(CodecError::Dimensions {
            expected: layout.len(),
            got: f.coeffs.len(),
        });
    }
    let b = f.block_size;
    let (ph, pw) = (layout.padded_h, layout.padded_w);
    let dct = DctBasis::new(b);
    let mut planes = Vec::with_capacity(f.channels);
    let mut block = vec![0.0; b * b];
    let mut out = vec![0.0; b * b];
    let mut chunks = f.coeffs.chunks_exact(b * b);
    for _ in 0..f.channels {
        let mut plane = vec![0.0; ph * pw];
        for by in (0..ph).step_by(b) {
            for bx in (0..pw).step_by(b) {
                let q = chunks.next().expect("length checked above");
                for (dst, &v) in block.iter_mut().zip(q) {
                    *dst = v as f64 * f.quant_step;
                }
                dct.inverse(&block, &mut out);
                for y in 0..b {
                    for x in 0..b {
                        plane[(by + y) * pw + bx + x] = out[y * b + x] / CODE_SCALE;
                    }
                }
            }
        }
        let cropped: Vec<f64> = (0..f.height)
            .flat_map(|y| plane[y * pw..y * pw + f.width].iter().map(|v| v.clamp(0.0, 1.0)))
            .collect();
        planes.push(cropped);
    }
    Ok(ImageTensor::from_planes(f.height, f.width, &planes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_walk_uses_dc_differences() {
        let layout = Layout::new(4, 4, 1, 2);
        // four 2x2 blocks with DC 5, 7, 7, 2
        let coeffs = vec![5, 1, 0, 0, 7, 0, 0, 0, 7, 0, 0, -1, 2, 0, 0, 0];
        let mut seen = Vec::new();
        for_each_symbol(&coeffs, &layout, |ctx, v| seen.push((ctx, v)));
        let dc: Vec<i64> = seen.iter().filter(|(c, _)| *c == 0).map(|&(_, v)| v).collect();
        assert_eq!(dc, vec![5, 2, 0, -5]);
        assert_eq!(seen[1], (1, 1));
        assert_eq!(seen[11], (2, -1));
    }

    #[test]
    fn dc_prediction_restarts_per_channel() {
        let layout = Layout::new(2, 2, 3, 2);
        let coeffs: Vec<i64> = (0..3).flat_map(|c| [10 * (c + 1), 0, 0, 0]).collect();
        let mut dc = Vec::new();
        for_each_symbol(&coeffs, &layout, |ctx, v| {
            if ctx == 0 {
                dc.push(v)
            }
        });
        assert_eq!(dc, vec![10, 20, 30]);
    }
}
