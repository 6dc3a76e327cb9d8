use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// In-flight bound per channel.
pub const CHANNEL_BOUND: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    AudioChunk,
    HintEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMessage<T> {
    pub kind: MessageKind,
    /// Chunk index the payload was computed from.
    pub chunk: usize,
    pub payload: Vec<T>,
    pub sent_tick: usize,
    pub deliver_tick: usize,
}

/// Ordered link with a fixed delay in ticks.
#[derive(Debug, Clone)]
pub struct DelayChannel<T> {
    delay: usize,
    bound: usize,
    queue: VecDeque<ChannelMessage<T>>,
}

impl<T> DelayChannel<T> {
    pub fn new(delay: usize) -> Self {
        Self::with_bound(delay, CHANNEL_BOUND)
    }

    pub fn with_bound(delay: usize, bound: usize) -> Self {
        Self {
            delay,
            bound,
            queue: VecDeque::new(),
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn send(&mut self, kind: MessageKind, chunk: usize, payload: Vec<T>, tick: usize) -> Result<()> {
        // messages still undelivered once this tick's deliveries are done
        let pending = self.queue.iter().filter(|m| m.deliver_tick > tick).count() + usize::from(self.delay > 0);
        if pending > self.bound {
            return Err(Error::Backpressure {
                in_flight: pending,
                bound: self.bound,
            });
        }
        self.queue.push_back(ChannelMessage {
            kind,
            chunk,
            payload,
            sent_tick: tick,
            deliver_tick: tick + self.delay,
        });
        Ok(())
    }

    /// Next message due by `tick`, in send order.
    pub fn deliver(&mut self, tick: usize) -> Option<ChannelMessage<T>> {
        if self.queue.front()?.deliver_tick <= tick {
            self.queue.pop_front()
        } else {
            None
        }
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}
