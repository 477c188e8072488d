use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::RigidTransform;
use crate::error::{Error, Result};

/// Coordinate frame a point set is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    /// Ego frame of the scene frame with this index.
    Ego(usize),
    World,
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameTag::Ego(i) => write!(f, "ego[{i}]"),
            FrameTag::World => f.write_str("world"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame_tag: FrameTag,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame_tag: FrameTag) -> Self {
        Self { points, frame_tag }
    }

    pub fn empty(frame_tag: FrameTag) -> Self {
        Self::new(Vec::new(), frame_tag)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Errors unless the cloud is in `expected`.
    pub fn expect_frame(&self, expected: FrameTag) -> Result<()> {
        if self.frame_tag != expected {
            return Err(Error::FrameMismatch {
                expected: expected.to_string(),
                actual: self.frame_tag.to_string(),
            });
        }
        Ok(())
    }

    /// Errors unless the cloud is in some ego frame.
    pub fn expect_ego(&self) -> Result<usize> {
        match self.frame_tag {
            FrameTag::Ego(i) => Ok(i),
            FrameTag::World => Err(Error::FrameMismatch {
                expected: "ego[*]".into(),
                actual: self.frame_tag.to_string(),
            }),
        }
    }

    pub fn transformed(&self, t: &RigidTransform, frame_tag: FrameTag) -> Self {
        Self::new(self.points.iter().map(|p| t.apply(p)).collect(), frame_tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_checks() {
        let c = PointCloud::empty(FrameTag::Ego(2));
        assert!(c.expect_frame(FrameTag::Ego(2)).is_ok());
        assert!(c.expect_frame(FrameTag::Ego(1)).is_err());
        assert_eq!(c.expect_ego().unwrap(), 2);
        assert!(PointCloud::empty(FrameTag::World).expect_ego().is_err());
    }
}
