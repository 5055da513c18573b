//! Flat parameter vector with a named segment layout.
//!
//! Everything the optimizer and the averaging code touch is a `ParamVector`:
//! one contiguous buffer of scalars plus a layout describing which slice
//! belongs to which layer parameter. Two vectors built from the same
//! [`MlpSpec`](super::MlpSpec) always share an identical layout, which is what
//! makes element-wise averaging of whole models well defined.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamName {
    Weight,
    Bias,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: usize,
    pub name: ParamName,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous, non-overlapping segments covering the value buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new(sizes: Vec<(usize, ParamName, usize)>) -> Self {
        let mut segments = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for (layer, name, len) in sizes {
            segments.push(Segment {
                layer,
                name,
                offset,
                len,
            });
            offset += len;
        }
        Self {
            segments,
            total: offset,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn find(&self, layer: usize, name: ParamName) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.layer == layer && s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<F> {
    values: Vec<F>,
    layout: Arc<ParamLayout>,
}

impl<F: Real> ParamVector<F> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![F::zero(); layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<F>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::input(format!(
                "value buffer length {} does not match layout length {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::input("parameter layout mismatch"))
        }
    }

    pub fn segment(&self, layer: usize, name: ParamName) -> Option<&[F]> {
        self.layout
            .find(layer, name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, layer: usize, name: ParamName) -> Option<&mut [F]> {
        let seg = self.layout.find(layer, name).cloned()?;
        Some(&mut self.values[seg.offset..seg.offset + seg.len])
    }

    pub fn l2_norm(&self) -> F {
        self.values
            .iter()
            .map(|v| *v * *v)
            .sum::<F>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
