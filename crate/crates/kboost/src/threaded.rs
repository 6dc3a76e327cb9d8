//! Two-worker runtime: the local and the remote node on separate threads,
//! linked by channels whose messages carry their simulated delivery tick.

use std::sync::mpsc;

use kboost_core::boost::{KbParams, KbSystem};
use kboost_core::gridnet::INPUT_CHANNELS;
use kboost_core::runtime::{
    digest, ChannelMessage, LocalNode, MessageKind, RemoteEvent, RemoteNode, SessionOutput, SessionTrace, TickDelays,
    CHANNEL_BOUND,
};
use kboost_core::{Error, Real, Result, Tensor};

/// Same contract as [`kboost_core::runtime::run_session`], with the remote
/// node on its own thread. The trace is assembled from per-node event logs
/// and matches the single-threaded scheduler's.
pub fn run_threaded<T: Real + Send + Sync>(
    sys: &KbSystem,
    p: &KbParams<T>,
    local: &Tensor<T>,
    remote: Option<&Tensor<T>>,
    enrollment: Option<&Tensor<T>>,
    delays: TickDelays,
) -> Result<SessionOutput<T>> {
    let s = local.shape();
    if s.len() != 3 || s[1] != sys.bins() || s[2] != INPUT_CHANNELS {
        return Err(Error::Shape(format!("session input {:?}, expected [T, {}, {}]", s, sys.bins(), INPUT_CHANNELS)));
    }
    if remote.is_some_and(|r| r.shape() != s) {
        return Err(Error::Shape("remote copy differs in shape from the local input".into()));
    }
    if delays.total() != sys.config().c {
        return Err(Error::Config(format!(
            "link delay of {} chunks does not match the C = {} the models were built for",
            delays.total(),
            sys.config().c
        )));
    }
    for d in [delays.uplink, delays.downlink] {
        if d > CHANNEL_BOUND {
            return Err(Error::Backpressure {
                in_flight: d,
                bound: CHANNEL_BOUND,
            });
        }
    }
    let (ticks, per) = (s[0], s[1] * s[2]);
    let sent = remote.unwrap_or(local);
    let mut local_node = LocalNode::new(sys, p, enrollment)?;
    let remote_node = RemoteNode::new(sys, p, enrollment)?;
    let (up_tx, up_rx) = mpsc::sync_channel::<ChannelMessage<T>>(CHANNEL_BOUND);
    let (down_tx, down_rx) = mpsc::sync_channel::<ChannelMessage<T>>(CHANNEL_BOUND);

    std::thread::scope(|scope| {
        let worker = scope.spawn(move || -> Result<Vec<RemoteEvent>> {
            let mut node = remote_node;
            let mut events = Vec::new();
            for msg in up_rx {
                if msg.deliver_tick >= ticks {
                    continue;
                }
                let hint = node.on_audio(sys, p, &msg)?;
                let tick = msg.deliver_tick;
                events.push(RemoteEvent {
                    tick,
                    chunk: msg.chunk,
                    input: digest(&msg.payload),
                });
                let reply = ChannelMessage {
                    kind: MessageKind::HintEmbedding,
                    chunk: msg.chunk,
                    payload: hint,
                    sent_tick: tick,
                    deliver_tick: tick + delays.downlink,
                };
                // the local node drops its end once it has all the hints it can use;
                // the remaining audio is still processed so the trace is complete
                let _ = down_tx.send(reply);
            }
            Ok(events)
        });

        let c = delays.total();
        let mut out = Vec::with_capacity(ticks * s[1] * 2 * sys.config().small.k);
        let mut local_events = Vec::with_capacity(ticks);
        let mut run = || -> Result<()> {
            for t in 0..ticks {
                let range = t * per..(t + 1) * per;
                let msg = ChannelMessage {
                    kind: MessageKind::AudioChunk,
                    chunk: t,
                    payload: sent.data()[range.clone()].to_vec(),
                    sent_tick: t,
                    deliver_tick: t + delays.uplink,
                };
                up_tx.send(msg).map_err(|_| Error::Protocol("remote worker stopped".into()))?;
                if t >= c {
                    let hint = down_rx.recv().map_err(|_| Error::Protocol(format!("link closed before hint {}", t - c)))?;
                    local_node.receive(hint)?;
                }
                let (frame, ev) = local_node.process(sys, p, &local.data()[range])?;
                out.extend(frame);
                local_events.push(ev);
            }
            Ok(())
        };
        let local_result = run();
        drop(up_tx);
        drop(down_rx);
        let remote_events = worker.join().map_err(|_| Error::Protocol("remote worker panicked".into()))?;
        // a remote failure explains a local protocol error, so it wins
        let remote_events = remote_events?;
        local_result?;
        Ok(SessionOutput {
            output: Tensor::from_vec(&[ticks, s[1], 2 * sys.config().small.k], out)?,
            trace: SessionTrace::assemble(delays, &local_events, &remote_events)?,
        })
    })
}
