//! The degradation family: five kernels at three intensity levels, and the
//! per-question view plan that picks which (kind, intensity) cells to render.

mod kernels;
mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::rng::Lineage;

pub use kernels::{
    kernel_gaussian_noise, kernel_motion_blur, kernel_occlusion, kernel_rotation,
    kernel_salt_pepper, motion_blur_at_angle, rotate, Rect,
};
pub use plan::{build_view_plan, ViewPlan, MAX_VIEWS, MIN_VIEWS};

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    GaussianNoise,
    SaltPepper,
    MotionBlur,
    Occlusion,
    Rotation,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::GaussianNoise,
        PerturbationKind::SaltPepper,
        PerturbationKind::MotionBlur,
        PerturbationKind::Occlusion,
        PerturbationKind::Rotation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::GaussianNoise => "gaussian_noise",
            PerturbationKind::SaltPepper => "salt_pepper",
            PerturbationKind::MotionBlur => "motion_blur",
            PerturbationKind::Occlusion => "occlusion",
            PerturbationKind::Rotation => "rotation",
        }
    }

    /// Row label used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            PerturbationKind::GaussianNoise => "Gaussian Noise",
            PerturbationKind::SaltPepper => "Salt-and-Pepper Noise",
            PerturbationKind::MotionBlur => "Motion Blur",
            PerturbationKind::Occlusion => "Local Occlusion",
            PerturbationKind::Rotation => "Slight Rotation",
        }
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityLevel {
    Low,
    Medium,
    High,
}

impl IntensityLevel {
    pub const ALL: [IntensityLevel; 3] = [IntensityLevel::Low, IntensityLevel::Medium, IntensityLevel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntensityLevel::Low => "low",
            IntensityLevel::Medium => "medium",
            IntensityLevel::High => "high",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            IntensityLevel::Low => "Low",
            IntensityLevel::Medium => "Medium",
            IntensityLevel::High => "High",
        }
    }
}

impl std::fmt::Display for IntensityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Numeric kernel parameters per kind, indexed `[low, medium, high]`.
///
/// This is data: it is loaded from JSON, snapshotted into every augmented
/// manifest, and only checked for monotonic severity by [`IntensityTable::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    /// Noise standard deviation in gray levels.
    pub gaussian_sigma: [f64; 3],
    /// Per-pixel replacement probability.
    pub salt_pepper_p: [f64; 3],
    /// Odd line-kernel length in pixels.
    pub motion_blur_length: [u32; 3],
    /// Occluded fraction of the canvas.
    pub occlusion_area: [f64; 3],
    /// Absolute rotation angle in degrees.
    pub rotation_degrees: [f64; 3],
    #[serde(default = "default_occlusion_fill")]
    pub occlusion_fill: [u8; 3],
    #[serde(default = "default_rotation_fill")]
    pub rotation_fill: [u8; 3],
}

fn default_occlusion_fill() -> [u8; 3] {
    [128, 128, 128]
}

fn default_rotation_fill() -> [u8; 3] {
    crate::image::WHITE
}

impl Default for IntensityTable {
    fn default() -> Self {
        Self {
            gaussian_sigma: [10.0, 20.0, 35.0],
            salt_pepper_p: [0.02, 0.05, 0.10],
            motion_blur_length: [5, 9, 15],
            occlusion_area: [0.05, 0.10, 0.20],
            rotation_degrees: [2.0, 5.0, 8.0],
            occlusion_fill: default_occlusion_fill(),
            rotation_fill: default_rotation_fill(),
        }
    }
}

impl IntensityTable {
    /// Every kernel reduces to the identity under this table.
    pub fn zero() -> Self {
        Self {
            gaussian_sigma: [0.0; 3],
            salt_pepper_p: [0.0; 3],
            motion_blur_length: [1; 3],
            occlusion_area: [0.0; 3],
            rotation_degrees: [0.0; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        fn increasing<T: PartialOrd + std::fmt::Debug>(name: &str, row: &[T; 3]) -> Result<(), PerturbError> {
            if row[0] < row[1] && row[1] < row[2] {
                Ok(())
            } else {
                Err(PerturbError::InvalidConfig(format!(
                    "{name} must strictly increase from low to high, got {row:?}"
                )))
            }
        }
        increasing("gaussian_sigma", &self.gaussian_sigma)?;
        increasing("salt_pepper_p", &self.salt_pepper_p)?;
        increasing("motion_blur_length", &self.motion_blur_length)?;
        increasing("occlusion_area", &self.occlusion_area)?;
        increasing("rotation_degrees", &self.rotation_degrees)?;
        if self.gaussian_sigma[0] < 0.0 {
            return Err(PerturbError::InvalidConfig("gaussian_sigma must be >= 0".into()));
        }
        if self.salt_pepper_p[0] < 0.0 || self.salt_pepper_p[2] > 1.0 {
            return Err(PerturbError::InvalidConfig("salt_pepper_p must lie in [0, 1]".into()));
        }
        if self.motion_blur_length.iter().any(|l| l % 2 == 0) {
            return Err(PerturbError::InvalidConfig("motion_blur_length entries must be odd".into()));
        }
        if self.occlusion_area[0] < 0.0 || self.occlusion_area[2] >= 1.0 {
            return Err(PerturbError::InvalidConfig("occlusion_area must lie in [0, 1)".into()));
        }
        if self.rotation_degrees[0] < 0.0 || self.rotation_degrees[2] >= 45.0 {
            return Err(PerturbError::InvalidConfig("rotation_degrees must lie in [0, 45)".into()));
        }
        Ok(())
    }
}

/// One degradation instruction for one view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub intensity: IntensityLevel,
    pub master_seed: u64,
    pub question_id: String,
    /// Always >= 1; index 0 is the clean original.
    pub view_index: u32,
}

impl PerturbationSpec {
    pub fn lineage(&self) -> Lineage {
        Lineage::new(self.master_seed, self.question_id.clone(), self.view_index)
    }
}

pub fn apply_perturbation(
    img: &Image,
    spec: &PerturbationSpec,
    table: &IntensityTable,
) -> Result<Image, PerturbError> {
    if spec.view_index == 0 {
        return Err(PerturbError::InvalidConfig(
            "view index 0 is reserved for the clean original".into(),
        ));
    }
    let mut rng = spec.lineage().stream();
    let level = spec.intensity.index();
    match spec.kind {
        PerturbationKind::GaussianNoise => {
            kernel_gaussian_noise(img, table.gaussian_sigma[level], &mut rng)
        }
        PerturbationKind::SaltPepper => kernel_salt_pepper(img, table.salt_pepper_p[level], &mut rng),
        PerturbationKind::MotionBlur => {
            kernel_motion_blur(img, table.motion_blur_length[level], &mut rng)
        }
        PerturbationKind::Occlusion => {
            kernel_occlusion(img, table.occlusion_area[level], table.occlusion_fill, &mut rng)
                .map(|(out, _)| out)
        }
        PerturbationKind::Rotation => {
            kernel_rotation(img, table.rotation_degrees[level], table.rotation_fill, &mut rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: PerturbationKind, intensity: IntensityLevel) -> PerturbationSpec {
        PerturbationSpec {
            kind,
            intensity,
            master_seed: 11,
            question_id: "q".into(),
            view_index: 1,
        }
    }

    fn textured(w: u32, h: u32) -> Image {
        let mut px = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&[(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) * 3 % 256) as u8]);
            }
        }
        Image::new(w, h, px).unwrap()
    }

    #[test]
    fn default_table_is_valid() {
        IntensityTable::default().validate().unwrap();
        assert!(IntensityTable::zero().validate().is_err());
    }

    #[test]
    fn zero_table_is_identity_for_every_kind() {
        let img = textured(40, 30);
        let table = IntensityTable::zero();
        for kind in PerturbationKind::ALL {
            for level in IntensityLevel::ALL {
                let out = apply_perturbation(&img, &spec(kind, level), &table).unwrap();
                assert_eq!(out, img, "{kind}/{level}");
            }
        }
    }

    #[test]
    fn apply_is_deterministic_and_preserves_dimensions() {
        let img = textured(64, 48);
        let table = IntensityTable::default();
        for kind in PerturbationKind::ALL {
            let a = apply_perturbation(&img, &spec(kind, IntensityLevel::High), &table).unwrap();
            let b = apply_perturbation(&img, &spec(kind, IntensityLevel::High), &table).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.width(), a.height()), (64, 48));
            assert_ne!(a, img, "{kind} left the image untouched");
        }
    }

    #[test]
    fn gaussian_medium_std_close_to_sigma() {
        let img = Image::filled(256, 256, [128, 128, 128]).unwrap();
        let out = apply_perturbation(&img, &spec(PerturbationKind::GaussianNoise, IntensityLevel::Medium), &IntensityTable::default()).unwrap();
        let diffs: Vec<f64> = out.pixels().iter().map(|&v| v as f64 - 128.0).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((std - 20.0).abs() <= 2.0, "std {std}");
    }

    #[test]
    fn blur_larger_than_image_is_degenerate() {
        let img = textured(8, 8);
        let err = apply_perturbation(&img, &spec(PerturbationKind::MotionBlur, IntensityLevel::Medium), &IntensityTable::default());
        assert!(matches!(err, Err(PerturbError::Degenerate(_))));
    }

    #[test]
    fn view_zero_spec_rejected() {
        let mut s = spec(PerturbationKind::Rotation, IntensityLevel::Low);
        s.view_index = 0;
        assert!(apply_perturbation(&textured(8, 8), &s, &IntensityTable::default()).is_err());
    }

    #[test]
    fn table_json_defaults_fill_colors() {
        let json = r#"{"gaussian_sigma":[1,2,3],"salt_pepper_p":[0.1,0.2,0.3],"motion_blur_length":[1,3,5],"occlusion_area":[0.1,0.2,0.3],"rotation_degrees":[1,2,3]}"#;
        let t: IntensityTable = serde_json::from_str(json).unwrap();
        assert_eq!(t.occlusion_fill, [128, 128, 128]);
        assert_eq!(t.rotation_fill, [255, 255, 255]);
        t.validate().unwrap();
    }
}
