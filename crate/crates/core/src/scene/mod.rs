//! In-memory scene store: ground plane, environment settings and named actors.
//!
//! Actor locations are box centres. Every collection-returning query is ordered by
//! actor name so traces built on top of the store replay identically.

mod catalog;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use catalog::{AssetCatalog, AssetDescriptor, Category};

use crate::{Aabb, Rotation, Transform, Vec3};

pub const SCENE_FILE_VERSION: u32 = 1;
pub const DEFAULT_GROUND_HALF_EXTENT: f64 = 9500.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("actor name already in use: {0}")]
    DuplicateName(String),
    #[error("no actor named {0}")]
    UnknownActor(String),
    #[error("asset not in catalog: {0}")]
    UnknownAsset(String),
    #[error("invalid asset descriptor: {0}")]
    InvalidAsset(String),
    #[error("unknown category tag: {0}")]
    UnknownCategory(String),
    #[error("transform has non-finite components")]
    NonFinite,
    #[error("scale components must be positive")]
    InvalidScale,
    #[error("ground size must be positive and finite, got {0}")]
    InvalidGroundSize(f64),
    #[error("environment already initialized; reinitialization not permitted")]
    AlreadyInitialized,
    #[error("setup_environment must be called before spawning")]
    NotInitialized,
    #[error("malformed name pattern {pattern:?}: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("scene file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSettings {
    pub time_of_day: String,
    pub sky: String,
}

impl EnvSettings {
    pub fn for_time_of_day(time_of_day: &str) -> Self {
        let sky = match time_of_day {
            "dawn" | "dusk" | "sunset" | "sunrise" => "golden",
            "night" | "midnight" => "night",
            "overcast" | "rain" => "overcast",
            _ => "clear",
        };
        Self {
            time_of_day: time_of_day.to_string(),
            sky: sky.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorRecord {
    pub name: String,
    pub asset_id: String,
    pub category: Category,
    pub transform: Transform,
    pub spawned_in_session: bool,
}

impl ActorRecord {
    pub fn world_aabb(&self, catalog: &AssetCatalog) -> Result<Aabb, SceneError> {
        let asset = catalog.require(&self.asset_id)?;
        Ok(self.transform.world_aabb(asset.base_extent))
    }
}

/// Partial transform update: `None` fields keep their current value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TransformPatch {
    pub location: Option<Vec3>,
    pub rotation: Option<Rotation>,
    pub scale: Option<Vec3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub ground_half_extent: f64,
    pub ground_z: f64,
    pub env_settings: Option<EnvSettings>,
    actors: BTreeMap<String, ActorRecord>,
}

impl Default for SceneGraph {
    fn default() -> Self {
        Self {
            ground_half_extent: DEFAULT_GROUND_HALF_EXTENT,
            ground_z: 0.0,
            env_settings: None,
            actors: BTreeMap::new(),
        }
    }
}

fn validate_transform(t: &Transform) -> Result<(), SceneError> {
    if !t.is_finite() {
        return Err(SceneError::NonFinite);
    }
    if !t.scale.all_positive() {
        return Err(SceneError::InvalidScale);
    }
    Ok(())
}

impl SceneGraph {
    /// A scene whose environment is already set up.
    pub fn with_ground(ground_size: f64, time_of_day: &str) -> Result<Self, SceneError> {
        let mut s = Self::default();
        s.setup_environment(ground_size, time_of_day, false)?;
        Ok(s)
    }

    pub fn is_initialized(&self) -> bool {
        self.env_settings.is_some()
    }

    pub fn setup_environment(
        &mut self,
        ground_size: f64,
        time_of_day: &str,
        allow_reinit: bool,
    ) -> Result<(), SceneError> {
        if !(ground_size.is_finite() && ground_size > 0.0) {
            return Err(SceneError::InvalidGroundSize(ground_size));
        }
        if (self.is_initialized() || !self.actors.is_empty()) && !allow_reinit {
            return Err(SceneError::AlreadyInitialized);
        }
        self.ground_half_extent = ground_size / 2.0;
        self.env_settings = Some(EnvSettings::for_time_of_day(time_of_day));
        Ok(())
    }

    pub fn spawn_actor(
        &mut self,
        catalog: &AssetCatalog,
        name: &str,
        asset_id: &str,
        transform: Transform,
    ) -> Result<&ActorRecord, SceneError> {
        if !self.is_initialized() {
            return Err(SceneError::NotInitialized);
        }
        if self.actors.contains_key(name) {
            return Err(SceneError::DuplicateName(name.to_string()));
        }
        let asset = catalog.require(asset_id)?;
        validate_transform(&transform)?;
        let rec = ActorRecord {
            name: name.to_string(),
            asset_id: asset.asset_id.clone(),
            category: asset.category,
            transform,
            spawned_in_session: true,
        };
        Ok(self.actors.entry(name.to_string()).or_insert(rec))
    }

    pub fn delete_actor(&mut self, name: &str) -> Result<ActorRecord, SceneError> {
        self.actors
            .remove(name)
            .ok_or_else(|| SceneError::UnknownActor(name.to_string()))
    }

    /// Removes every session-spawned actor; returns their names in order.
    pub fn delete_all_spawned(&mut self) -> Vec<String> {
        let names: Vec<String> = self
            .actors
            .values()
            .filter(|a| a.spawned_in_session)
            .map(|a| a.name.clone())
            .collect();
        for n in &names {
            self.actors.remove(n);
        }
        names
    }

    pub fn set_actor_transform(
        &mut self,
        name: &str,
        patch: TransformPatch,
    ) -> Result<&ActorRecord, SceneError> {
        let actor = self
            .actors
            .get(name)
            .ok_or_else(|| SceneError::UnknownActor(name.to_string()))?;
        let mut t = actor.transform;
        if let Some(l) = patch.location {
            t.location = l;
        }
        if let Some(r) = patch.rotation {
            t.rotation = Rotation::new(r.yaw, r.pitch, r.roll);
        }
        if let Some(s) = patch.scale {
            t.scale = s;
        }
        validate_transform(&t)?;
        let actor = self.actors.get_mut(name).expect("checked above");
        actor.transform = t;
        Ok(actor)
    }

    /// Treats every current actor as pre-existing level content.
    pub fn clear_spawned_flags(&mut self) {
        for a in self.actors.values_mut() {
            a.spawned_in_session = false;
        }
    }

    pub fn actor(&self, name: &str) -> Option<&ActorRecord> {
        self.actors.get(name)
    }

    /// All actors ordered by name.
    pub fn actors(&self) -> impl Iterator<Item = &ActorRecord> {
        self.actors.values()
    }

    pub fn actor_count(&self) -> usize {
        self.actors.len()
    }

    /// Actors whose names match a glob pattern (`*`, `?`, `[...]`), ordered by name.
    pub fn find_actors_by_name(&self, pattern: &str) -> Result<Vec<&ActorRecord>, SceneError> {
        let pat = glob::Pattern::new(pattern).map_err(|e| SceneError::BadPattern {
            pattern: pattern.to_string(),
            reason: e.msg.to_string(),
        })?;
        Ok(self.actors.values().filter(|a| pat.matches(&a.name)).collect())
    }

    /// Inserts a record as-is, used when loading files and restoring snapshots.
    pub fn insert_record(&mut self, rec: ActorRecord) -> Result<(), SceneError> {
        if self.actors.contains_key(&rec.name) {
            return Err(SceneError::DuplicateName(rec.name));
        }
        validate_transform(&rec.transform)?;
        self.actors.insert(rec.name.clone(), rec);
        Ok(())
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            version: SCENE_FILE_VERSION,
            ground_half_extent: self.ground_half_extent,
            ground_z: self.ground_z,
            env_settings: self.env_settings.clone(),
            actors: self
                .actors
                .values()
                .map(|a| ActorEntry {
                    name: a.name.clone(),
                    asset_id: a.asset_id.clone(),
                    category: a.category,
                    location: a.transform.location.to_array(),
                    rotation: a.transform.rotation.to_array(),
                    scale: a.transform.scale.to_array(),
                    spawned_in_session: a.spawned_in_session,
                })
                .collect(),
        }
    }

    pub fn from_file(file: SceneFile) -> Result<Self, SceneError> {
        if !(file.ground_half_extent.is_finite() && file.ground_half_extent > 0.0) {
            return Err(SceneError::InvalidGroundSize(file.ground_half_extent * 2.0));
        }
        let mut scene = SceneGraph {
            ground_half_extent: file.ground_half_extent,
            ground_z: file.ground_z,
            env_settings: file.env_settings,
            actors: BTreeMap::new(),
        };
        for a in file.actors {
            let [yaw, pitch, roll] = a.rotation;
            scene.insert_record(ActorRecord {
                name: a.name,
                asset_id: a.asset_id,
                category: a.category,
                transform: Transform {
                    location: Vec3::from_array(a.location),
                    rotation: Rotation::new(yaw, pitch, roll),
                    scale: Vec3::from_array(a.scale),
                },
                spawned_in_session: a.spawned_in_session,
            })?;
        }
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("scene serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    /// Hex SHA-256 of the compact scene file.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Checks every actor against the catalog.
    pub fn validate_assets(&self, catalog: &AssetCatalog) -> Result<(), SceneError> {
        for a in self.actors.values() {
            catalog.require(&a.asset_id)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub ground_half_extent: f64,
    pub ground_z: f64,
    pub env_settings: Option<EnvSettings>,
    pub actors: Vec<ActorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorEntry {
    pub name: String,
    pub asset_id: String,
    pub category: Category,
    pub location: [f64; 3],
    pub rotation: [f64; 3],
    pub scale: [f64; 3],
    pub spawned_in_session: bool,
}
