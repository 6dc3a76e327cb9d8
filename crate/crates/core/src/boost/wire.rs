use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Bytes before the payload: chunk index (u32), ratio (u8), channels (u16), bins (u16).
pub const HEADER_LEN: usize = 9;

/// One compressed hint frame as sent from the large model to the small one.
///
/// `values` is laid out bin-major (`[F, channels]`), matching the models'
/// latent layout; the wire payload is channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HintEmbedding {
    pub source_chunk: u32,
    pub ratio: u8,
    pub channels: u16,
    pub bins: u16,
    pub values: Vec<f32>,
}

impl HintEmbedding {
    pub fn new(source_chunk: u32, ratio: u8, channels: usize, bins: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != channels * bins {
            return Err(Error::Wire(alloc::format!(
                "{} values for {} channels x {} bins",
                values.len(),
                channels,
                bins
            )));
        }
        let channels = u16::try_from(channels).map_err(|_| Error::Wire("too many channels".into()))?;
        let bins = u16::try_from(bins).map_err(|_| Error::Wire("too many bins".into()))?;
        Ok(Self {
            source_chunk,
            ratio,
            channels,
            bins,
            values,
        })
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.values.len()
    }

    /// Little-endian header followed by channel-major f32 payload.
    pub fn encode(&self) -> Vec<u8> {
        let (c, f) = (self.channels as usize, self.bins as usize);
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.source_chunk.to_le_bytes());
        out.push(self.ratio);
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&self.bins.to_le_bytes());
        for ch in 0..c {
            for b in 0..f {
                out.extend_from_slice(&self.values[b * c + ch].to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Wire(alloc::format!("{} bytes is shorter than the header", bytes.len())));
        }
        let source_chunk = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let ratio = bytes[4];
        let channels = u16::from_le_bytes(bytes[5..7].try_into().unwrap());
        let bins = u16::from_le_bytes(bytes[7..9].try_into().unwrap());
        let (c, f) = (channels as usize, bins as usize);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 4 * c * f {
            return Err(Error::Wire(alloc::format!(
                "payload has {} bytes, header announces {}",
                payload.len(),
                4 * c * f
            )));
        }
        if ratio == 0 {
            return Err(Error::Wire("compression ratio 0".into()));
        }
        let mut values = alloc::vec![0.0f32; c * f];
        for (i, word) in payload.chunks_exact(4).enumerate() {
            let (ch, b) = (i / f, i % f);
            values[b * c + ch] = f32::from_le_bytes(word.try_into().unwrap());
        }
        Ok(Self {
            source_chunk,
            ratio,
            channels,
            bins,
            values,
        })
    }
}
