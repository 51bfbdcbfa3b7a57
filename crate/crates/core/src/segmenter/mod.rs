//! Per-view 2D segmenters: the logit container, a label-driven oracle and
//! the external subprocess driver.

mod external;
mod oracle;

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::ClassId;
use crate::render::RenderedView;
use crate::tensor::RawTensor;

pub use external::{
    read_request, write_done, write_logits, AdapterRequest, ExternalSegmenter, RequestView, DEFAULT_BATCH_SIZE,
    DEFAULT_TIMEOUT_SECS, DONE_FILE, REQUEST_FILE, REQUEST_SCHEMA,
};
pub use oracle::{oracle_infer, OracleConfig, OracleSegmenter};

/// Per-view class scores, `C x H x W` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor {
    pub view_id: u32,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl LogitTensor {
    pub fn zeros(view_id: u32, classes: usize, height: usize, width: usize) -> Self {
        Self { view_id, classes, height, width, data: vec![0.0; classes * height * width] }
    }

    pub fn new(view_id: u32, classes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::Shape(format!(
                "view {view_id}: {} logits for {classes}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("view {view_id}: non-finite logit at index {i}")));
        }
        Ok(Self { view_id, classes, height, width, data })
    }

    /// Validates a raw tensor against the expected `C x H x W` shape.
    pub fn from_tensor(view_id: u32, tensor: RawTensor, classes: usize, height: usize, width: usize) -> Result<Self> {
        let expected = [classes as u32, height as u32, width as u32];
        if tensor.dims != expected {
            return Err(Error::Shape(format!(
                "view {view_id}: logits have shape {:?}, expected {:?}",
                tensor.dims, expected
            )));
        }
        Self::new(view_id, classes, height, width, tensor.data)
    }

    pub fn to_tensor(&self) -> RawTensor {
        RawTensor::new(vec![self.classes as u32, self.height as u32, self.width as u32], self.data.clone())
            .expect("shape checked on construction")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_tensor().write(path)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, class: usize, x: usize, y: usize) -> f32 {
        self.data[class * self.plane_len() + y * self.width + x]
    }

    /// Class scores at pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> impl Iterator<Item = f32> + '_ {
        let offset = y * self.width + x;
        let plane = self.plane_len();
        (0..self.classes).map(move |c| self.data[c * plane + offset])
    }

    /// Highest-scoring class at a pixel, lowest id on ties; `None` for an
    /// all-zero (abstaining) pixel.
    pub fn argmax(&self, x: usize, y: usize) -> Option<ClassId> {
        let mut best: Option<(usize, f32)> = None;
        let mut any = false;
        for (c, v) in self.pixel(x, y).enumerate() {
            any |= v != 0.0;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        best.filter(|_| any).map(|(c, _)| c as ClassId)
    }

    pub fn matches_view(&self, view: &RenderedView) -> Result<()> {
        if self.view_id != view.view_id || self.height != view.height() || self.width != view.width() {
            return Err(Error::Shape(format!(
                "logits for view {} ({}x{}) do not match view {} ({}x{})",
                self.view_id,
                self.height,
                self.width,
                view.view_id,
                view.height(),
                view.width()
            )));
        }
        Ok(())
    }
}

/// A 2D model producing one logit tensor per rendered view, in input order.
pub trait Segmenter: Sync {
    fn class_count(&self) -> usize;

    fn infer_batch(&self, views: &[RenderedView]) -> Result<Vec<LogitTensor>>;

    /// Views per call that keeps memory bounded in streaming drivers.
    fn preferred_batch(&self) -> usize {
        DEFAULT_BATCH_SIZE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_validation() {
        let t = RawTensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let err = LogitTensor::from_tensor(7, t, 4, 2, 3).unwrap_err().to_string();
        assert!(err.contains("view 7"), "{err}");
        assert!(LogitTensor::new(1, 1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(LogitTensor::new(1, 2, 1, 1, vec![0.0]).is_err());
    }

    #[test]
    fn argmax_rules() {
        let t = LogitTensor::new(0, 2, 1, 3, vec![2.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(t.argmax(0, 0), Some(0));
        assert_eq!(t.argmax(1, 0), Some(0));
        assert_eq!(t.argmax(2, 0), None);
        let neg = LogitTensor::new(0, 2, 1, 1, vec![-3.0, -1.0]).unwrap();
        assert_eq!(neg.argmax(0, 0), Some(1));
    }
}
