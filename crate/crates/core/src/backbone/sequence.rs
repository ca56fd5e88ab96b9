use crate::error::{Error, Result};

/// One video as `k` ordered frame feature vectors of width `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
    pub label: Option<usize>,
}

impl FrameFeatureSequence {
    /// `data` holds `frames * dim` reals, one row per frame.
    pub fn new(video_id: impl Into<String>, frames: usize, dim: usize, data: Vec<f32>, label: Option<usize>) -> Result<Self> {
        let video_id = video_id.into();
        if frames < 3 {
            return Err(Error::Config(format!("video {video_id}: need at least 3 frames, got {frames}")));
        }
        if dim == 0 {
            return Err(Error::Config(format!("video {video_id}: zero feature width")));
        }
        if data.len() != frames * dim {
            return Err(Error::dim("frame data", &[frames, dim], &[data.len()]));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("video {video_id}: non-finite frame feature")));
        }
        Ok(Self {
            video_id,
            frames,
            dim,
            data,
            label,
        })
    }

    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f32>], label: Option<usize>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("frames of unequal width".into()));
        }
        Self::new(video_id, rows.len(), dim, rows.concat(), label)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Frame `j` (0-based).
    pub fn frame(&self, j: usize) -> &[f32] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Same frames in reverse temporal order.
    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in (0..self.frames).rev() {
            data.extend_from_slice(self.frame(j));
        }
        Self {
            data,
            ..self.clone()
        }
    }

    pub fn without_label(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }
}
