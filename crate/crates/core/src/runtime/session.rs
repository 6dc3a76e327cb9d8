use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::channel::{ChannelMessage, DelayChannel, MessageKind};
use super::delay::TickDelays;
use crate::boost::{KbParams, KbSystem, LargeStream, SmallStream};
use crate::error::{config_err, shape_err, Error, Result};
use crate::gridnet::INPUT_CHANNELS;
use crate::real::Real;
use crate::tensor::Tensor;

/// FNV-1a over the f64 bit patterns of `values`.
pub fn digest<T: Real>(values: &[T]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.as_f64().to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// What the local node did at one tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalEvent {
    pub tick: usize,
    pub input: u64,
    pub hint_used: Option<usize>,
    pub cache_occupancy: Vec<usize>,
    pub output: u64,
}

/// What the remote node did at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteEvent {
    pub tick: usize,
    pub chunk: usize,
    pub input: u64,
}

/// One line of a session trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub local_input: u64,
    /// Chunk the remote node processed this tick (its hint is sent the same tick).
    pub remote_chunk: Option<usize>,
    pub remote_input: Option<u64>,
    /// Source chunk of the hint merged into this tick's output.
    pub hint_used: Option<usize>,
    pub cache_occupancy: Vec<usize>,
    /// Messages still in flight at the end of the tick.
    pub uplink_depth: usize,
    pub downlink_depth: usize,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub delays: TickDelays,
    pub records: Vec<TickRecord>,
}

impl SessionTrace {
    /// Builds a trace from per-node event logs, deriving queue depths from
    /// the message timestamps. Used by schedulers that do not observe the
    /// queues directly.
    pub fn assemble(delays: TickDelays, local: &[LocalEvent], remote: &[RemoteEvent]) -> Result<Self> {
        let mut records = Vec::with_capacity(local.len());
        let mut r = remote.iter().peekable();
        for (i, ev) in local.iter().enumerate() {
            if ev.tick != i {
                return Err(Error::Protocol(format!("local event {} has tick {}", i, ev.tick)));
            }
            let rem = match r.peek() {
                Some(e) if e.tick == i => r.next().copied(),
                _ => None,
            };
            // audio sent at s is in flight at the end of tick i when s <= i < s + up
            let uplink_depth = (i + 1).min(delays.uplink);
            let sent_hints = (i + 1).saturating_sub(delays.uplink);
            let downlink_depth = sent_hints.min(delays.downlink);
            records.push(TickRecord {
                tick: i,
                local_input: ev.input,
                remote_chunk: rem.map(|e| e.chunk),
                remote_input: rem.map(|e| e.input),
                hint_used: ev.hint_used,
                cache_occupancy: ev.cache_occupancy.clone(),
                uplink_depth,
                downlink_depth,
                output: ev.output,
            });
        }
        if let Some(e) = r.next() {
            return Err(Error::Protocol(format!("remote event at tick {} after the last local tick", e.tick)));
        }
        Ok(Self { delays, records })
    }
}

/// Large model and compressor behind the remote end of the link.
#[derive(Debug, Clone)]
pub struct RemoteNode<T> {
    stream: LargeStream<T>,
    next_chunk: usize,
}

impl<T: Real> RemoteNode<T> {
    pub fn new(sys: &KbSystem, p: &KbParams<T>, enrollment: Option<&Tensor<T>>) -> Result<Self> {
        Ok(Self {
            stream: sys.large_stream(p, enrollment)?,
            next_chunk: 0,
        })
    }

    /// Processes a delivered audio message and returns the hint for its chunk.
    pub fn on_audio(&mut self, sys: &KbSystem, p: &KbParams<T>, msg: &ChannelMessage<T>) -> Result<Vec<T>> {
        if msg.kind != MessageKind::AudioChunk || msg.chunk != self.next_chunk {
            return Err(Error::Protocol(format!(
                "remote expected audio chunk {}, got {:?} {}",
                self.next_chunk, msg.kind, msg.chunk
            )));
        }
        self.next_chunk += 1;
        Ok(self.stream.step(sys, p, &msg.payload))
    }
}

/// Small model with its merge caches on the local device.
#[derive(Debug, Clone)]
pub struct LocalNode<T> {
    stream: SmallStream<T>,
    c: usize,
    inbox: VecDeque<ChannelMessage<T>>,
    tick: usize,
}

impl<T: Real> LocalNode<T> {
    pub fn new(sys: &KbSystem, p: &KbParams<T>, enrollment: Option<&Tensor<T>>) -> Result<Self> {
        Ok(Self {
            stream: sys.small_stream(p, enrollment)?,
            c: sys.config().c,
            inbox: VecDeque::new(),
            tick: 0,
        })
    }

    /// Accepts a delivered hint message.
    pub fn receive(&mut self, msg: ChannelMessage<T>) -> Result<()> {
        if msg.kind != MessageKind::HintEmbedding {
            return Err(Error::Protocol(format!("local node received {:?}", msg.kind)));
        }
        if let Some(last) = self.inbox.back() {
            if msg.chunk != last.chunk + 1 {
                return Err(Error::Protocol(format!("hint {} arrived after hint {}", msg.chunk, last.chunk)));
            }
        }
        self.inbox.push_back(msg);
        Ok(())
    }

    /// Emits the output frame of the current tick from `frame` and the hint
    /// of chunk `tick - C`, which must already have been received.
    pub fn process(&mut self, sys: &KbSystem, p: &KbParams<T>, frame: &[T]) -> Result<(Vec<T>, LocalEvent)> {
        let i = self.tick;
        let hint = if i >= self.c {
            let want = i - self.c;
            match self.inbox.pop_front() {
                Some(m) if m.chunk == want && m.deliver_tick <= i => Some(m),
                Some(m) => {
                    return Err(Error::Protocol(format!(
                        "tick {i} needs hint {want}, inbox holds hint {} due at tick {}",
                        m.chunk, m.deliver_tick
                    )))
                }
                None => return Err(Error::Protocol(format!("hint {want} not delivered by tick {i}"))),
            }
        } else {
            None
        };
        let out = self.stream.step(sys, p, frame, hint.as_ref().map(|m| &m.payload[..]))?;
        self.tick += 1;
        let ev = LocalEvent {
            tick: i,
            input: digest(frame),
            hint_used: hint.map(|m| m.chunk),
            cache_occupancy: self.stream.caches().iter().map(|c| c.occupancy()).collect(),
            output: digest(&out),
        };
        Ok((out, ev))
    }
}

/// Single-process deterministic scheduler for one local/remote pair.
#[derive(Debug, Clone)]
pub struct Session<T> {
    delays: TickDelays,
    local: LocalNode<T>,
    remote: RemoteNode<T>,
    uplink: DelayChannel<T>,
    downlink: DelayChannel<T>,
    tick: usize,
    records: Vec<TickRecord>,
}

impl<T: Real> Session<T> {
    pub fn new(sys: &KbSystem, p: &KbParams<T>, enrollment: Option<&Tensor<T>>, delays: TickDelays) -> Result<Self> {
        Self::with_bound(sys, p, enrollment, delays, super::channel::CHANNEL_BOUND)
    }

    pub fn with_bound(
        sys: &KbSystem,
        p: &KbParams<T>,
        enrollment: Option<&Tensor<T>>,
        delays: TickDelays,
        bound: usize,
    ) -> Result<Self> {
        if delays.total() != sys.config().c {
            return Err(config_err!(
                "link delay of {} chunks does not match the C = {} the models were built for",
                delays.total(),
                sys.config().c
            ));
        }
        Ok(Self {
            delays,
            local: LocalNode::new(sys, p, enrollment)?,
            remote: RemoteNode::new(sys, p, enrollment)?,
            uplink: DelayChannel::with_bound(delays.uplink, bound),
            downlink: DelayChannel::with_bound(delays.downlink, bound),
            tick: 0,
            records: Vec::new(),
        })
    }

    /// Advances one tick. `local_frame` is what the microphone produced;
    /// `sent_frame` is the copy put on the uplink (normally the same).
    pub fn tick(&mut self, sys: &KbSystem, p: &KbParams<T>, local_frame: &[T], sent_frame: &[T]) -> Result<Vec<T>> {
        let i = self.tick;
        self.uplink.send(MessageKind::AudioChunk, i, sent_frame.to_vec(), i)?;
        let mut remote = None;
        while let Some(msg) = self.uplink.deliver(i) {
            let hint = self.remote.on_audio(sys, p, &msg)?;
            remote = Some((msg.chunk, digest(&msg.payload)));
            self.downlink.send(MessageKind::HintEmbedding, msg.chunk, hint, i)?;
        }
        while let Some(msg) = self.downlink.deliver(i) {
            self.local.receive(msg)?;
        }
        let (out, ev) = self.local.process(sys, p, local_frame)?;
        self.records.push(TickRecord {
            tick: i,
            local_input: ev.input,
            remote_chunk: remote.map(|r| r.0),
            remote_input: remote.map(|r| r.1),
            hint_used: ev.hint_used,
            cache_occupancy: ev.cache_occupancy,
            uplink_depth: self.uplink.in_flight(),
            downlink_depth: self.downlink.in_flight(),
            output: ev.output,
        });
        self.tick += 1;
        Ok(out)
    }

    pub fn trace(&self) -> SessionTrace {
        SessionTrace {
            delays: self.delays,
            records: self.records.clone(),
        }
    }
}

/// Output frames and trace of a whole session.
#[derive(Debug, Clone)]
pub struct SessionOutput<T> {
    /// `[T, F, 2K]`
    pub output: Tensor<T>,
    pub trace: SessionTrace,
}

/// Runs a whole `[T, F, 4]` input through the two-node pipeline. `remote`
/// overrides the frames sent to the remote node (same shape as `local`).
pub fn run_session<T: Real>(
    sys: &KbSystem,
    p: &KbParams<T>,
    local: &Tensor<T>,
    remote: Option<&Tensor<T>>,
    enrollment: Option<&Tensor<T>>,
    delays: TickDelays,
) -> Result<SessionOutput<T>> {
    let s = local.shape();
    if s.len() != 3 || s[1] != sys.bins() || s[2] != INPUT_CHANNELS {
        return Err(shape_err!("session input {:?}, expected [T, {}, {}]", s, sys.bins(), INPUT_CHANNELS));
    }
    if let Some(r) = remote {
        if r.shape() != s {
            return Err(shape_err!("remote copy {:?} differs from local input {:?}", r.shape(), s));
        }
    }
    let per = s[1] * s[2];
    let sent = remote.unwrap_or(local);
    let mut session = Session::new(sys, p, enrollment, delays)?;
    let mut out = Vec::with_capacity(s[0] * s[1] * 2 * sys.config().small.k);
    for t in 0..s[0] {
        let range = t * per..(t + 1) * per;
        out.extend(session.tick(sys, p, &local.data()[range.clone()], &sent.data()[range])?);
    }
    Ok(SessionOutput {
        output: Tensor::from_vec(&[s[0], s[1], 2 * sys.config().small.k], out)?,
        trace: session.trace(),
    })
}
