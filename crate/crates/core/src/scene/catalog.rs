use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::Vec3;

const BUILTIN_CATALOG: &str = include_str!("../../data/catalog.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Building,
    Tree,
    Vehicle,
    StreetFurniture,
    Road,
    Prop,
    Container,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Building,
        Category::Tree,
        Category::Vehicle,
        Category::StreetFurniture,
        Category::Road,
        Category::Prop,
        Category::Container,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Building => "building",
            Category::Tree => "tree",
            Category::Vehicle => "vehicle",
            Category::StreetFurniture => "street_furniture",
            Category::Road => "road",
            Category::Prop => "prop",
            Category::Container => "container",
        }
    }

    /// Ground-level environment geometry: skipped by collision checks and walkable.
    pub fn is_environment(self) -> bool {
        matches!(self, Category::Road)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SceneError::UnknownCategory(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetDescriptor {
    pub asset_id: String,
    pub category: Category,
    /// Half-extents of the unscaled local box, cm.
    pub base_extent: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssetCatalog {
    assets: BTreeMap<String, AssetDescriptor>,
}

impl AssetCatalog {
    /// The catalog bundled with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_CATALOG).expect("bundled catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let list: Vec<AssetDescriptor> = serde_json::from_str(text)?;
        Self::from_descriptors(list)
    }

    pub fn from_descriptors(list: Vec<AssetDescriptor>) -> Result<Self, SceneError> {
        let mut assets = BTreeMap::new();
        for a in list {
            if !a.base_extent.is_finite() || !a.base_extent.all_positive() {
                return Err(SceneError::InvalidAsset(a.asset_id));
            }
            if assets.contains_key(&a.asset_id) {
                return Err(SceneError::InvalidAsset(a.asset_id));
            }
            assets.insert(a.asset_id.clone(), a);
        }
        Ok(Self { assets })
    }

    pub fn to_json(&self) -> String {
        let list: Vec<&AssetDescriptor> = self.assets.values().collect();
        serde_json::to_string_pretty(&list).expect("catalog serializes")
    }

    pub fn get(&self, asset_id: &str) -> Option<&AssetDescriptor> {
        self.assets.get(asset_id)
    }

    pub fn require(&self, asset_id: &str) -> Result<&AssetDescriptor, SceneError> {
        self.get(asset_id)
            .ok_or_else(|| SceneError::UnknownAsset(asset_id.to_string()))
    }

    /// Descriptors ordered by asset id, optionally restricted to one category.
    pub fn list(&self, category: Option<Category>) -> Vec<&AssetDescriptor> {
        self.assets
            .values()
            .filter(|a| category.is_none_or(|c| a.category == c))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    /// Resolves a blueprint reference (`/Game/City/BP_Building_01.BP_Building_01_C`,
    /// `BP_Building_01`, `SM_Crate` or a bare id) to a catalog asset id.
    pub fn resolve(&self, reference: &str) -> Result<&AssetDescriptor, SceneError> {
        if let Some(a) = self.get(reference) {
            return Ok(a);
        }
        let tail = reference.rsplit('/').next().unwrap_or(reference);
        let stem = tail.split('.').next().unwrap_or(tail);
        let stem = stem
            .strip_prefix("BP_")
            .or_else(|| stem.strip_prefix("SM_"))
            .unwrap_or(stem);
        let stem = stem.strip_suffix("_C").unwrap_or(stem);
        let id = stem.to_ascii_lowercase();
        self.get(&id)
            .ok_or_else(|| SceneError::UnknownAsset(reference.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_covers_every_category() {
        let cat = AssetCatalog::builtin();
        assert!(cat.len() >= 60);
        for c in Category::ALL {
            assert!(!cat.list(Some(c)).is_empty(), "{c} missing");
        }
        assert!(cat.get("road_cone").is_some());
        assert!(cat.get("road_blocker").is_some());
    }

    #[test]
    fn list_filters_and_orders() {
        let cat = AssetCatalog::builtin();
        let trees = cat.list(Some(Category::Tree));
        assert!(trees.iter().all(|a| a.category == Category::Tree));
        let ids: Vec<_> = trees.iter().map(|a| a.asset_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(cat.list(None).len(), cat.len());
    }

    #[test]
    fn unknown_category_tag_is_rejected() {
        assert!("spaceship".parse::<Category>().is_err());
        assert_eq!("street_furniture".parse::<Category>().unwrap(), Category::StreetFurniture);
    }

    #[test]
    fn blueprint_shorthand_resolves() {
        let cat = AssetCatalog::builtin();
        let full = "/Game/CityDatabase/Blueprints/BP_Building_01.BP_Building_01_C";
        assert_eq!(cat.resolve(full).unwrap().asset_id, "building_01");
        assert_eq!(cat.resolve("BP_Tree_03").unwrap().asset_id, "tree_03");
        assert_eq!(cat.resolve("SM_Crate").unwrap().asset_id, "crate");
        assert!(cat.resolve("BP_Dragon").is_err());
    }
}
