//! Fusion of diffusion predictions into the running map.
//!
//! Sensor evidence and predictions share one log-odds store but never touch
//! the same voxel at the same time: predictions only update voxels outside the
//! observed set, while scans update whatever they cross. Once a predicted
//! voxel is observed, sensor updates continue from the predicted value.

use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::map::{
    classify, logit, probability, GridGeometry, LocalGrid, OccupancyMap, OccupancyView, VoxelKey,
    VoxelState,
};

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("prediction geometry {pred:?} does not match crop geometry {crop:?}")]
    GeometryMismatch { crop: GridGeometry, pred: GridGeometry },
    #[error("crop resolution {crop} differs from map resolution {map}")]
    ResolutionMismatch { crop: f64, map: f64 },
    #[error("invalid merge config: {0}")]
    Config(String),
}

/// Inverse sensor and prediction models for the log-odds update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    pub p_sensor_hit: f64,
    pub p_sensor_miss: f64,
    pub p_pred_hit: f64,
    pub p_pred_miss: f64,
    pub prior: f64,
    pub occupancy_threshold: f64,
    /// Log-odds clamps.
    pub l_min: f64,
    pub l_max: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            p_sensor_hit: 0.7,
            p_sensor_miss: 0.4,
            p_pred_hit: 0.6,
            p_pred_miss: 0.45,
            prior: 0.5,
            occupancy_threshold: 0.5,
            l_min: logit(0.12),
            l_max: logit(0.97),
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), MergeError> {
        let probs = [
            ("sensor_hit", self.p_sensor_hit),
            ("sensor_miss", self.p_sensor_miss),
            ("pred_hit", self.p_pred_hit),
            ("pred_miss", self.p_pred_miss),
            ("prior", self.prior),
            ("threshold", self.occupancy_threshold),
        ];
        for (name, p) in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(MergeError::Config(format!("{name} = {p} is not in (0, 1)")));
            }
        }
        if self.p_pred_hit > self.p_sensor_hit {
            return Err(MergeError::Config(format!(
                "pred_hit {} exceeds sensor_hit {}",
                self.p_pred_hit, self.p_sensor_hit
            )));
        }
        if !(self.l_min < self.l_max) {
            return Err(MergeError::Config("clamp_min must be below clamp_max".into()));
        }
        Ok(())
    }

    /// Log-odds increment applied to an unobserved voxel by one prediction.
    pub fn prediction_delta(&self, occupied: bool) -> f64 {
        let p = if occupied { self.p_pred_hit } else { self.p_pred_miss };
        logit(p) - logit(self.prior)
    }
}

/// Binary occupancy prediction over a crop.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub geometry: GridGeometry,
    pub occupied: Vec<bool>,
}

impl PredictionGrid {
    pub fn new(geometry: GridGeometry, occupied: Vec<bool>) -> Self {
        assert_eq!(geometry.len(), occupied.len());
        Self { geometry, occupied }
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }
}

fn check_geometry(map: &OccupancyMap, crop: &LocalGrid, pred: &PredictionGrid) -> Result<(), MergeError> {
    if crop.geometry != pred.geometry {
        return Err(MergeError::GeometryMismatch {
            crop: crop.geometry,
            pred: pred.geometry,
        });
    }
    if crop.geometry.resolution != map.resolution() {
        return Err(MergeError::ResolutionMismatch {
            crop: crop.geometry.resolution,
            map: map.resolution(),
        });
    }
    Ok(())
}

/// Probabilistic merge of one prediction. Returns the number of voxels
/// updated.
pub fn merge_prediction(
    map: &mut OccupancyMap,
    crop: &LocalGrid,
    pred: &PredictionGrid,
    config: &MergeConfig,
) -> Result<usize, MergeError> {
    check_geometry(map, crop, pred)?;
    let hit = config.prediction_delta(true);
    let miss = config.prediction_delta(false);
    let mut updated = 0;
    for (idx, key) in crop.geometry.keys().enumerate() {
        if crop.known_mask[idx] || map.is_observed(key) {
            continue;
        }
        let delta = if pred.occupied[idx] { hit } else { miss };
        if delta == 0.0 {
            continue;
        }
        map.add_log_odds(key, delta, false);
        updated += 1;
    }
    Ok(updated)
}

/// Sequential probabilistic merge of several predictions of one crop.
pub fn merge_multi(
    map: &mut OccupancyMap,
    crop: &LocalGrid,
    preds: &[PredictionGrid],
    config: &MergeConfig,
) -> Result<usize, MergeError> {
    for pred in preds {
        check_geometry(map, crop, pred)?;
    }
    let mut updated = 0;
    for pred in preds {
        updated += merge_prediction(map, crop, pred, config)?;
    }
    Ok(updated)
}

/// Map view that also classifies prediction-only voxels.
///
/// Observed voxels classify as in the sensor map. Unobserved voxels that
/// carry prediction evidence are thresholded on their probability; untouched
/// voxels stay unknown.
#[derive(Debug, Clone, Copy)]
pub struct MergedView<'a>(pub &'a OccupancyMap);

impl OccupancyView for MergedView<'_> {
    fn resolution(&self) -> f64 {
        self.0.resolution()
    }

    fn state(&self, key: VoxelKey) -> VoxelState {
        match self.0.cell(key) {
            Some(c) if !c.observed => {
                if probability(c.log_odds) > self.0.threshold() {
                    VoxelState::Occupied
                } else {
                    VoxelState::Free
                }
            }
            _ => classify(self.0, key),
        }
    }
}

/// Predicted-occupied voxels of the most recent one-shot prediction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OneShotOverlay {
    keys: FxHashSet<VoxelKey>,
}

impl OneShotOverlay {
    /// Replaces any previous prediction with `pred`.
    pub fn install(&mut self, map: &OccupancyMap, crop: &LocalGrid, pred: &PredictionGrid) -> Result<(), MergeError> {
        check_geometry(map, crop, pred)?;
        self.keys.clear();
        for (idx, key) in crop.geometry.keys().enumerate() {
            if !crop.known_mask[idx] && pred.occupied[idx] {
                self.keys.insert(key);
            }
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.keys.clear();
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: VoxelKey) -> bool {
        self.keys.contains(&key)
    }

    /// Overlay keys in sorted order.
    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<_> = self.keys.iter().copied().collect();
        keys.sort();
        keys
    }

    pub fn view<'a>(&'a self, map: &'a OccupancyMap) -> OneShotView<'a> {
        OneShotView { map, overlay: std::borrow::Cow::Borrowed(self) }
    }
}

/// Non-destructive overlay: predicted-occupied unknown voxels read occupied.
#[derive(Debug, Clone)]
pub struct OneShotView<'a> {
    map: &'a OccupancyMap,
    overlay: std::borrow::Cow<'a, OneShotOverlay>,
}

impl OneShotView<'_> {
    /// Installs a newer prediction, dropping the previous one entirely.
    pub fn install(&mut self, crop: &LocalGrid, pred: &PredictionGrid) -> Result<(), MergeError> {
        let map = self.map;
        self.overlay.to_mut().install(map, crop, pred)
    }

    pub fn overlay(&self) -> &OneShotOverlay {
        &self.overlay
    }
}

impl OccupancyView for OneShotView<'_> {
    fn resolution(&self) -> f64 {
        self.map.resolution()
    }

    fn state(&self, key: VoxelKey) -> VoxelState {
        match classify(self.map, key) {
            VoxelState::Unknown if self.overlay.contains(key) => VoxelState::Occupied,
            s => s,
        }
    }
}

/// One-shot merge: an overlay view of `map` with `pred` installed.
pub fn merge_one_shot<'a>(
    map: &'a OccupancyMap,
    crop: &LocalGrid,
    pred: &PredictionGrid,
) -> Result<OneShotView<'a>, MergeError> {
    let mut overlay = OneShotOverlay::default();
    overlay.install(map, crop, pred)?;
    Ok(OneShotView {
        map,
        overlay: std::borrow::Cow::Owned(overlay),
    })
}
