//! Relevance maps for a `(model, image, class)` triple.
//!
//! Grad-CAM and Score-CAM produce `W x H` maps directly. Integrated Gradients
//! and epsilon-LRP produce `W x H x C` maps, which [`pool_l2sq`] reduces to
//! `W x H` so every method can be scored the same way.

mod cam;
mod ig;
mod lrp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cam::{grad_cam, score_cam, upsample_bilinear};
pub use ig::integrated_gradients;
pub use lrp::lrp_epsilon;

use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    GradCam,
    ScoreCam,
    Ig,
    Lrp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::GradCam, Method::ScoreCam, Method::Ig, Method::Lrp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GradCam => "gradcam",
            Method::ScoreCam => "scorecam",
            Method::Ig => "ig",
            Method::Lrp => "lrp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method '{s}' (expected gradcam, scorecam, ig or lrp)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub ig_steps: usize,
    /// Constant value of the IG baseline image; 0 is the black image.
    pub ig_baseline: f64,
    pub lrp_epsilon: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            ig_steps: 64,
            ig_baseline: 0.0,
            lrp_epsilon: 10.0,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps < 1 {
            return Err(Error::InvalidArgument("ig_steps must be at least 1".into()));
        }
        if !self.ig_baseline.is_finite() {
            return Err(Error::InvalidArgument("ig_baseline must be finite".into()));
        }
        if !(self.lrp_epsilon > 0.0 && self.lrp_epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lrp_epsilon must be positive, got {}",
                self.lrp_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    /// `[W, H]` when pooled or produced by a CAM method, else `[W, H, C]`.
    pub values: Tensor,
    pub method: Method,
    pub class: usize,
    pub sample_id: Option<String>,
}

impl AttributionMap {
    pub(crate) fn new(values: Tensor, method: Method, class: usize) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::InvalidArgument(format!("{method} produced non-finite relevance")));
        }
        Ok(Self {
            values,
            method,
            class,
            sample_id: None,
        })
    }

    pub fn with_sample_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = Some(id.into());
        self
    }

    pub fn is_pooled(&self) -> bool {
        self.values.rank() == 2
    }

    /// `W x H` view of the map, pooling 3-D maps.
    pub fn pooled(self) -> Result<Self> {
        if self.is_pooled() {
            return Ok(self);
        }
        Ok(Self {
            values: pool_l2sq(&self.values)?,
            ..self
        })
    }
}

/// Squared L2 norm over channels: `out(i, j) = sum_c map(i, j, c)^2`.
pub fn pool_l2sq(map: &Tensor) -> Result<Tensor> {
    let &[w, h, c] = map.shape() else {
        return Err(Error::InvalidArgument(format!(
            "pooling needs a W x H x C map, got shape {:?}",
            map.shape()
        )));
    };
    let data = map
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|v| v * v).sum())
        .collect();
    Tensor::new(vec![w, h], data)
}

pub(crate) fn check_class(model: &ModelSpec, class: usize) -> Result<()> {
    let num_classes = model.num_classes();
    if class >= num_classes {
        return Err(Error::ClassOutOfRange { class, num_classes });
    }
    Ok(())
}

/// Runs `method` and returns its `W x H` map.
pub fn attribute(model: &ModelSpec, x: &Tensor, class: usize, method: Method, cfg: &MethodConfig) -> Result<AttributionMap> {
    let map = match method {
        Method::GradCam => grad_cam(model, x, class)?,
        Method::ScoreCam => score_cam(model, x, class)?,
        Method::Ig => integrated_gradients(model, x, class, cfg)?,
        Method::Lrp => lrp_epsilon(model, x, class, cfg)?,
    };
    map.pooled()
}
