use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// N points with I channels each; the first three channels are XYZ.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    channels: usize,
    data: Vec<f64>,
    pub instance_labels: Option<Vec<i32>>,
    pub semantic_labels: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels < 3 {
            return Err(invalid("a point cloud needs at least the XYZ channels"));
        }
        if data.is_empty() || !data.len().is_multiple_of(channels) {
            return Err(invalid(
                "point data length must be a positive multiple of the channel count",
            ));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(invalid("point data contains NaN"));
        }
        Ok(Self {
            channels,
            data,
            instance_labels: None,
            semantic_labels: None,
        })
    }

    pub fn with_instance_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(invalid("instance label count differs from point count"));
        }
        self.instance_labels = Some(labels);
        Ok(self)
    }

    pub fn with_semantic_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(invalid("semantic label count differs from point count"));
        }
        self.semantic_labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let p = self.point(i);
        [p[0], p[1], p[2]]
    }

    /// XYZ of every point as a flat N×3 array.
    pub fn coords(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.xyz(i)).collect()
    }

    /// Number of distinct non-negative instance ids.
    pub fn instance_count(&self) -> usize {
        self.instance_labels.as_ref().map_or(0, |l| {
            l.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
        })
    }

    /// Keeps the points at `idx` (in order, duplicates allowed).
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.channels);
        for &i in idx {
            data.extend_from_slice(self.point(i));
        }
        Self {
            channels: self.channels,
            data,
            instance_labels: self
                .instance_labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            semantic_labels: self
                .semantic_labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Replaces the channel data, keeping labels; the point count must match.
    pub fn with_channels(&self, channels: usize, data: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(channels, data)?;
        if out.len() != self.len() {
            return Err(invalid("channel rewrite changed the point count"));
        }
        out.instance_labels = self.instance_labels.clone();
        out.semantic_labels = self.semantic_labels.clone();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_nan_and_ragged_data() {
        assert!(PointCloud::new(3, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(PointCloud::new(3, vec![0.0, 1.0]).is_err());
        assert!(PointCloud::new(3, Vec::new()).is_err());
    }

    #[test]
    fn select_carries_labels() {
        let c = PointCloud::new(3, vec![0., 0., 0., 1., 1., 1.])
            .unwrap()
            .with_instance_labels(vec![0, 1])
            .unwrap();
        let s = c.select(&[1, 1]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.instance_labels.unwrap(), vec![1, 1]);
        assert_eq!(c.instance_count(), 2);
    }
}
