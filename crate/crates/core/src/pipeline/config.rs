use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{QueryComposition, QueryConfig, SharpConfig, NEAR_SIGMAS, SHARP_ANGLE_DEG, SHARP_OFFSET};

/// Stages that may be switched off. Loading, normalization and serialization
/// always run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub watertight: bool,
    pub query: bool,
    pub surface: bool,
    pub fps: bool,
    pub render: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            watertight: true,
            query: true,
            surface: true,
            fps: true,
            render: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Cells per axis of the watertighting SDF grid.
    pub grid_resolution: usize,
    pub n_near: usize,
    pub n_uniform: usize,
    pub near_sigmas: [f64; 2],
    pub composition: QueryComposition,
    pub n_surface_uniform: usize,
    pub n_surface_sharp: usize,
    pub sharp_threshold_deg: f64,
    pub sharp_offset: f64,
    pub fps_uniform: usize,
    pub fps_sharp: usize,
    pub views: usize,
    pub render_size: [u32; 2],
    /// Also emit a second rig with this fixed fov.
    pub canonical_fov: Option<f64>,
    pub seed: u64,
    pub stages: StageToggles,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid_resolution: 256,
            n_near: 249_856,
            n_uniform: 249_856,
            near_sigmas: NEAR_SIGMAS,
            composition: QueryComposition::NearUniform,
            n_surface_uniform: 62_464,
            n_surface_sharp: 62_464,
            sharp_threshold_deg: SHARP_ANGLE_DEG,
            sharp_offset: SHARP_OFFSET,
            fps_uniform: 1536,
            fps_sharp: 1536,
            views: 150,
            render_size: [512, 512],
            canonical_fov: None,
            seed: 0,
            stages: StageToggles::default(),
        }
    }
}

impl PipelineConfig {
    pub fn surface_total(&self) -> usize {
        self.n_surface_uniform + self.n_surface_sharp
    }

    pub fn query_total(&self) -> usize {
        self.n_near + self.n_uniform
    }

    pub fn fps_total(&self) -> usize {
        self.fps_uniform + self.fps_sharp
    }

    pub fn query_config(&self) -> QueryConfig {
        QueryConfig {
            n_near: self.n_near,
            n_uniform: self.n_uniform,
            sigmas: self.near_sigmas,
            composition: self.composition,
        }
    }

    pub fn sharp_config(&self) -> SharpConfig {
        SharpConfig {
            threshold_deg: self.sharp_threshold_deg,
            offset: self.sharp_offset,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let counts = [
            ("n_near", self.n_near),
            ("n_uniform", self.n_uniform),
            ("n_surface_uniform", self.n_surface_uniform),
            ("n_surface_sharp", self.n_surface_sharp),
            ("fps_uniform", self.fps_uniform),
            ("fps_sharp", self.fps_sharp),
            ("views", self.views),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return bad(format!("{name} must be at least 1"));
        }
        if self.grid_resolution < 8 {
            return bad(format!("grid_resolution {} is below 8", self.grid_resolution));
        }
        if self.render_size.contains(&0) {
            return bad("render_size must be non-zero".into());
        }
        if self.fps_uniform > self.n_surface_uniform || self.fps_sharp > self.n_surface_sharp {
            return bad("fps budgets exceed the surface sets they select from".into());
        }
        if self.stages.fps && !self.stages.surface {
            return bad("the fps stage needs the surface stage".into());
        }
        if self.near_sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("near_sigmas must be positive".into());
        }
        if let Some(fov) = self.canonical_fov {
            if !(fov > 0.0 && fov < 180.0) {
                return bad(format!("canonical_fov {fov} is not in (0, 180)"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_counts() {
        let c = PipelineConfig::default();
        assert_eq!(c.query_total(), 499_712);
        assert_eq!(c.surface_total(), 124_928);
        assert_eq!(c.fps_total(), 3072);
        assert_eq!(c.views, 150);
        assert_eq!(c.render_size, [512, 512]);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = PipelineConfig::from_json(r#"{"grid_resolution": 64, "seed": 9, "stages": {"render": false}}"#).unwrap();
        assert_eq!(c.grid_resolution, 64);
        assert_eq!(c.seed, 9);
        assert!(!c.stages.render && c.stages.query);
        assert_eq!(c.n_near, 249_856);
        assert!(PipelineConfig::from_json(r#"{"grid": 64}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"views": 0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"fps_sharp": 70000}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = PipelineConfig {
            canonical_fov: Some(40.0),
            composition: QueryComposition::NearSurface,
            ..PipelineConfig::default()
        };
        let back = PipelineConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
