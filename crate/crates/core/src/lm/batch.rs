use crate::error::{contract, Result};

/// One training segment: `batch × seq_len` ids, flattened lane-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq_len: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    /// Set when the lanes restarted from their beginning before this batch.
    pub wrapped: bool,
}

/// Stateful batching over `batch` contiguous lanes of a corpus.
///
/// Lane `b` reads `corpus[b·L .. (b+1)·L]` with `L = len / batch`, so
/// consecutive segments of a lane continue where the previous one stopped.
#[derive(Clone, Debug)]
pub struct BatchStream {
    ids: Vec<usize>,
    batch: usize,
    seq_len: usize,
    lane_len: usize,
    cursor: usize,
}

impl BatchStream {
    pub fn new(ids: Vec<usize>, batch: usize, seq_len: usize) -> Result<Self> {
        if batch == 0 || seq_len == 0 {
            return Err(contract!("batch size and segment length must be positive"));
        }
        if ids.len() < batch * (seq_len + 1) {
            return Err(contract!(
                "corpus of {} symbols is too small for {} lanes of {}+1",
                ids.len(),
                batch,
                seq_len
            ));
        }
        let lane_len = ids.len() / batch;
        Ok(Self {
            ids,
            batch,
            seq_len,
            lane_len,
            cursor: 0,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Start offset of every lane in the corpus.
    pub fn lane_offsets(&self) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.lane_len).collect()
    }

    /// Position inside each lane of the next segment.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Segments per pass over the lanes.
    pub fn segments_per_epoch(&self) -> usize {
        (self.lane_len - 1) / self.seq_len
    }

    /// Positions the stream as if `segments` batches had been drawn.
    pub fn seek(&mut self, segments: u64) {
        let per_epoch = self.segments_per_epoch() as u64;
        let within = match segments % per_epoch {
            0 if segments > 0 => per_epoch,
            r => r,
        };
        self.cursor = within as usize * self.seq_len;
    }

    pub fn next_batch(&mut self) -> Batch {
        let mut wrapped = false;
        if self.cursor + self.seq_len + 1 > self.lane_len {
            self.cursor = 0;
            wrapped = true;
        }
        let mut inputs = Vec::with_capacity(self.batch * self.seq_len);
        let mut targets = Vec::with_capacity(self.batch * self.seq_len);
        for lane in 0..self.batch {
            let start = lane * self.lane_len + self.cursor;
            inputs.extend_from_slice(&self.ids[start..start + self.seq_len]);
            targets.extend_from_slice(&self.ids[start + 1..start + self.seq_len + 1]);
        }
        self.cursor += self.seq_len;
        Batch {
            batch: self.batch,
            seq_len: self.seq_len,
            inputs,
            targets,
            wrapped,
        }
    }
}
