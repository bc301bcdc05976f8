//! Message framing: u32 little-endian length (counting the tag byte), one
//! tag byte, payload. Weights travel as version + checkpoint bytes; episodes
//! as packed f32 transitions under a shared observation layout.

use crate::{OrchError, Result};
use l2r_core::replay::{ObsLayout, Transition};

/// Frames longer than this are rejected before any allocation.
pub const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

const TAG_HELLO: u8 = 1;
const TAG_GET_WEIGHTS: u8 = 2;
const TAG_WEIGHTS: u8 = 3;
const TAG_EPISODE: u8 = 4;
const TAG_EVAL_RESULT: u8 = 5;
const TAG_SHUTDOWN: u8 = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello,
    GetWeights,
    Weights {
        version: u64,
        checkpoint: Vec<u8>,
    },
    /// A whole episode under one layout. Masks and priorities are replay
    /// state, assigned at admission; they do not travel.
    Episode {
        layout: ObsLayout,
        act_dim: u32,
        transitions: Vec<Transition>,
    },
    EvalResult {
        episode_return: f32,
        distance: f32,
        fell: bool,
    },
    Shutdown,
}

pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    let mut payload = Vec::new();
    let tag = match msg {
        WireMessage::Hello => TAG_HELLO,
        WireMessage::GetWeights => TAG_GET_WEIGHTS,
        WireMessage::Weights { version, checkpoint } => {
            payload.extend_from_slice(&version.to_le_bytes());
            payload.extend_from_slice(checkpoint);
            TAG_WEIGHTS
        }
        WireMessage::Episode { layout, act_dim, transitions } => {
            payload.extend_from_slice(&(transitions.len() as u32).to_le_bytes());
            payload.push(layout.tag());
            payload.extend_from_slice(&(layout.dim() as u32).to_le_bytes());
            payload.extend_from_slice(&act_dim.to_le_bytes());
            for t in transitions {
                for &v in t.s.iter().chain(t.a.iter()) {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                payload.extend_from_slice(&t.r.to_le_bytes());
                for &v in &t.s_next {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                payload.push(t.done as u8);
            }
            TAG_EPISODE
        }
        WireMessage::EvalResult { episode_return, distance, fell } => {
            payload.extend_from_slice(&episode_return.to_le_bytes());
            payload.extend_from_slice(&distance.to_le_bytes());
            payload.push(*fell as u8);
            TAG_EVAL_RESULT
        }
        WireMessage::Shutdown => TAG_SHUTDOWN,
    };
    let mut out = Vec::with_capacity(5 + payload.len());
    out.extend_from_slice(&((payload.len() + 1) as u32).to_le_bytes());
    out.push(tag);
    out.extend_from_slice(&payload);
    out
}

/// Outcome of scanning a byte buffer for one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    /// A complete frame: the message and how many bytes it consumed.
    Frame(WireMessage, usize),
    /// The buffer ends mid-frame; read more and retry.
    NeedMoreBytes,
}

/// Streaming decode from the front of `buf`. Structural problems (bad tag,
/// oversize, length mismatch) are errors; a short buffer is not.
pub fn decode_from(buf: &[u8]) -> Result<Decoded> {
    if buf.len() < 4 {
        return Ok(Decoded::NeedMoreBytes);
    }
    let len = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len == 0 {
        return Err(OrchError::protocol("zero-length frame (no tag byte)"));
    }
    if len > MAX_FRAME_BYTES {
        return Err(OrchError::protocol(format!(
            "frame of {len} bytes exceeds the {MAX_FRAME_BYTES} byte cap"
        )));
    }
    if buf.len() < 4 + len {
        return Ok(Decoded::NeedMoreBytes);
    }
    let tag = buf[4];
    let msg = decode_payload(tag, &buf[5..4 + len])?;
    Ok(Decoded::Frame(msg, 4 + len))
}

/// Decodes exactly one frame spanning the whole slice.
pub fn decode_message(bytes: &[u8]) -> Result<WireMessage> {
    match decode_from(bytes)? {
        Decoded::Frame(msg, used) if used == bytes.len() => Ok(msg),
        Decoded::Frame(_, used) => Err(OrchError::protocol(format!(
            "{} trailing bytes after a {used}-byte frame",
            bytes.len() - used
        ))),
        Decoded::NeedMoreBytes => Err(OrchError::protocol("truncated frame")),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(OrchError::protocol(format!(
                "payload ends at byte {} ({} of {n} needed)",
                self.buf.len(),
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f32()?);
        }
        Ok(v)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(OrchError::protocol(format!(
                "{} unread payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn decode_payload(tag: u8, payload: &[u8]) -> Result<WireMessage> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let msg = match tag {
        TAG_HELLO => WireMessage::Hello,
        TAG_GET_WEIGHTS => WireMessage::GetWeights,
        TAG_WEIGHTS => {
            let version = c.u64()?;
            let checkpoint = c.take(payload.len() - c.pos)?.to_vec();
            WireMessage::Weights { version, checkpoint }
        }
        TAG_EPISODE => {
            let count = c.u32()? as usize;
            let layout_tag = c.u8()?;
            let layout_dim = c.u32()?;
            let layout = ObsLayout::from_tag(layout_tag, layout_dim)?;
            if layout.dim() != layout_dim as usize {
                return Err(OrchError::protocol(format!(
                    "layout dim {layout_dim} does not match tag {layout_tag}"
                )));
            }
            let act_dim = c.u32()?;
            let dim = layout.dim();
            let mut transitions = Vec::with_capacity(count.min(4096));
            for _ in 0..count {
                let s = c.f32_vec(dim)?;
                let a = c.f32_vec(act_dim as usize)?;
                let r = c.f32()?;
                let s_next = c.f32_vec(dim)?;
                let done = match c.u8()? {
                    0 => false,
                    1 => true,
                    other => {
                        return Err(OrchError::protocol(format!("done flag byte {other}")))
                    }
                };
                transitions.push(Transition::new(s, a, r, s_next, done, layout));
            }
            WireMessage::Episode { layout, act_dim, transitions }
        }
        TAG_EVAL_RESULT => {
            let episode_return = c.f32()?;
            let distance = c.f32()?;
            let fell = c.u8()? != 0;
            WireMessage::EvalResult { episode_return, distance, fell }
        }
        TAG_SHUTDOWN => WireMessage::Shutdown,
        other => return Err(OrchError::protocol(format!("unknown message tag {other}"))),
    };
    c.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use l2r_core::rng::SplitMix64;

    pub(crate) fn random_message(rng: &mut SplitMix64) -> WireMessage {
        match rng.below(6) {
            0 => WireMessage::Hello,
            1 => WireMessage::GetWeights,
            2 => WireMessage::Weights {
                version: rng.next_u64(),
                checkpoint: (0..rng.below(64)).map(|_| rng.below(256) as u8).collect(),
            },
            3 => {
                let dim = 1 + rng.below(6) as u32;
                let act = 1 + rng.below(4) as usize;
                let layout = ObsLayout::Flat(dim);
                let transitions = (0..rng.below(20))
                    .map(|_| {
                        Transition::new(
                            (0..dim).map(|_| rng.uniform(-2.0, 2.0) as f32).collect(),
                            (0..act).map(|_| rng.uniform(0.0, 1.0) as f32).collect(),
                            rng.uniform(-5.0, 5.0) as f32,
                            (0..dim).map(|_| rng.uniform(-2.0, 2.0) as f32).collect(),
                            rng.bernoulli(0.3),
                            layout,
                        )
                    })
                    .collect();
                WireMessage::Episode { layout, act_dim: act as u32, transitions }
            }
            4 => WireMessage::EvalResult {
                episode_return: rng.uniform(-10.0, 40.0) as f32,
                distance: rng.uniform(0.0, 30.0) as f32,
                fell: rng.bernoulli(0.5),
            },
            _ => WireMessage::Shutdown,
        }
    }

    #[test]
    fn hello_is_the_five_byte_frame() {
        assert_eq!(encode_message(&WireMessage::Hello), vec![0x01, 0x00, 0x00, 0x00, 0x01]);
    }

    #[test]
    fn round_trip_identity_over_random_messages() {
        let mut rng = SplitMix64::new(2024);
        for _ in 0..2000 {
            let msg = random_message(&mut rng);
            let bytes = encode_message(&msg);
            assert_eq!(decode_message(&bytes).unwrap(), msg);
        }
    }

    #[test]
    fn every_strict_prefix_asks_for_more_bytes() {
        let mut rng = SplitMix64::new(7);
        let msg = random_message(&mut rng);
        let bytes = encode_message(&WireMessage::Weights {
            version: 3,
            checkpoint: encode_message(&msg),
        });
        for cut in 0..bytes.len() {
            match decode_from(&bytes[..cut]).unwrap() {
                Decoded::NeedMoreBytes => {}
                Decoded::Frame(..) => panic!("frame decoded from {cut}-byte prefix"),
            }
        }
        match decode_from(&bytes).unwrap() {
            Decoded::Frame(_, used) => assert_eq!(used, bytes.len()),
            Decoded::NeedMoreBytes => panic!("full buffer not decoded"),
        }
    }

    #[test]
    fn two_frames_in_one_buffer_decode_in_order() {
        let mut buf = encode_message(&WireMessage::Hello);
        buf.extend(encode_message(&WireMessage::GetWeights));
        let Decoded::Frame(first, used) = decode_from(&buf).unwrap() else {
            panic!("first frame missing")
        };
        assert_eq!(first, WireMessage::Hello);
        let Decoded::Frame(second, used2) = decode_from(&buf[used..]).unwrap() else {
            panic!("second frame missing")
        };
        assert_eq!(second, WireMessage::GetWeights);
        assert_eq!(used + used2, buf.len());
    }

    #[test]
    fn unknown_tag_reports_its_value() {
        let frame = [0x01, 0x00, 0x00, 0x00, 0x2a];
        let err = decode_message(&frame).unwrap_err().to_string();
        assert!(err.contains("42"), "{err}");
    }

    #[test]
    fn oversized_and_zero_length_frames_are_rejected() {
        let mut oversize = ((MAX_FRAME_BYTES + 1) as u32).to_le_bytes().to_vec();
        oversize.push(TAG_HELLO);
        assert!(decode_from(&oversize).is_err());
        let zero = [0u8, 0, 0, 0];
        assert!(decode_from(&zero).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error_not_a_crash() {
        // EPISODE claiming 5 transitions but carrying bytes for none.
        let mut payload = Vec::new();
        payload.extend_from_slice(&5u32.to_le_bytes());
        payload.push(2);
        payload.extend_from_slice(&3u32.to_le_bytes());
        payload.extend_from_slice(&2u32.to_le_bytes());
        let mut frame = ((payload.len() + 1) as u32).to_le_bytes().to_vec();
        frame.push(TAG_EPISODE);
        frame.extend_from_slice(&payload);
        assert!(decode_message(&frame).is_err());
        // A valid frame followed by garbage length is also an error.
        let mut good = encode_message(&WireMessage::Hello);
        good.extend_from_slice(&[9, 9]);
        assert!(decode_message(&good).is_err());
    }

    #[test]
    fn episode_layout_dim_must_match_tag() {
        let t = Transition::new(vec![0.0; 13], vec![0.5; 4], 0.1, vec![0.0; 13], false, ObsLayout::Raw);
        let msg = WireMessage::Episode { layout: ObsLayout::Raw, act_dim: 4, transitions: vec![t] };
        let mut bytes = encode_message(&msg);
        // Corrupt the layout dim field (bytes 4..5 tag, 5..9 count, 9 layout tag, 10..14 dim).
        bytes[10] = 7;
        assert!(decode_message(&bytes).is_err());
    }
}
