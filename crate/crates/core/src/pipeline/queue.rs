//! Bounded frame queue with a single-producer / single-consumer contract:
//! pushing onto a full queue drops the oldest frame (real-time bias), and
//! popping an empty queue blocks until a frame arrives or the stream closes.

use crate::camera::Image;
use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

#[derive(Debug, PartialEq)]
pub enum PopResult {
    Frame(Image),
    EndOfStream,
}

#[derive(Debug)]
struct QueueInner {
    frames: VecDeque<Image>,
    closed: bool,
}

#[derive(Debug)]
pub struct FrameQueue {
    inner: Mutex<QueueInner>,
    ready: Condvar,
    capacity: usize,
}

impl FrameQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        FrameQueue {
            inner: Mutex::new(QueueInner {
                frames: VecDeque::with_capacity(capacity),
                closed: false,
            }),
            ready: Condvar::new(),
            capacity,
        }
    }

    /// Pushes a frame, dropping the oldest if the queue is full. Returns
    /// whether a frame was dropped. Pushing after close is a no-op.
    pub fn push(&self, frame: Image) -> bool {
        let mut inner = self.inner.lock().unwrap();
        if inner.closed {
            return false;
        }
        let mut dropped = false;
        if inner.frames.len() == self.capacity {
            inner.frames.pop_front();
            dropped = true;
        }
        inner.frames.push_back(frame);
        self.ready.notify_one();
        dropped
    }

    /// Blocks until a frame is available or the stream is closed and
    /// drained.
    pub fn pop(&self) -> PopResult {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(frame) = inner.frames.pop_front() {
                return PopResult::Frame(frame);
            }
            if inner.closed {
                return PopResult::EndOfStream;
            }
            inner = self.ready.wait(inner).unwrap();
        }
    }

    /// Non-blocking pop; `None` means empty-but-open.
    pub fn try_pop(&self) -> Option<PopResult> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(frame) = inner.frames.pop_front() {
            Some(PopResult::Frame(frame))
        } else if inner.closed {
            Some(PopResult::EndOfStream)
        } else {
            None
        }
    }

    pub fn close(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.closed = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn stamped(us: u64) -> Image {
        let mut img = Image::zeros(2, 2);
        img.timestamp_us = us;
        img
    }

    fn pop_ts(q: &FrameQueue) -> u64 {
        match q.pop() {
            PopResult::Frame(f) => f.timestamp_us,
            PopResult::EndOfStream => panic!("unexpected end of stream"),
        }
    }

    #[test]
    fn fifo_order() {
        let q = FrameQueue::new(4);
        q.push(stamped(1));
        q.push(stamped(2));
        assert_eq!(pop_ts(&q), 1);
        assert_eq!(pop_ts(&q), 2);
    }

    #[test]
    fn full_queue_drops_oldest() {
        let q = FrameQueue::new(2);
        assert!(!q.push(stamped(1)));
        assert!(!q.push(stamped(2)));
        assert!(q.push(stamped(3)));
        assert_eq!(pop_ts(&q), 2);
        assert_eq!(pop_ts(&q), 3);
    }

    #[test]
    fn pop_after_close_on_empty_is_end_of_stream() {
        let q = FrameQueue::new(2);
        q.close();
        assert_eq!(q.pop(), PopResult::EndOfStream);
    }

    #[test]
    fn close_drains_remaining_frames_first() {
        let q = FrameQueue::new(2);
        q.push(stamped(7));
        q.close();
        assert_eq!(pop_ts(&q), 7);
        assert_eq!(q.pop(), PopResult::EndOfStream);
    }

    #[test]
    fn blocking_pop_wakes_on_push() {
        let q = Arc::new(FrameQueue::new(2));
        let q2 = Arc::clone(&q);
        let handle = std::thread::spawn(move || pop_ts(&q2));
        std::thread::sleep(std::time::Duration::from_millis(20));
        q.push(stamped(42));
        assert_eq!(handle.join().unwrap(), 42);
    }

    #[test]
    fn spsc_stress_monotone_timestamps() {
        let q = Arc::new(FrameQueue::new(8));
        let producer_q = Arc::clone(&q);
        let producer = std::thread::spawn(move || {
            for i in 0..100_000u64 {
                producer_q.push(stamped(i));
            }
            producer_q.close();
        });
        let mut last = None;
        let mut popped = 0u64;
        loop {
            match q.pop() {
                PopResult::Frame(f) => {
                    if let Some(prev) = last {
                        assert!(f.timestamp_us > prev, "{} !> {prev}", f.timestamp_us);
                    }
                    last = Some(f.timestamp_us);
                    popped += 1;
                }
                PopResult::EndOfStream => break,
            }
        }
        producer.join().unwrap();
        assert!(popped > 0 && popped <= 100_000);
        assert_eq!(last, Some(99_999));
    }
}
