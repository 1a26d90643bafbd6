//! Skill documents, tag retrieval and failure-driven skill promotion.
//!
//! A skill is a text file: a `---` delimited header of `key: value` lines, then a
//! free-form body. The directory is the source of truth; the five built-ins are
//! always indexed even when the directory does not hold a copy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Category;

pub const PROMOTION_WINDOW: u64 = 10;
pub const PROMOTION_MIN_OCCURRENCES: usize = 2;
const PROMOTIONS_FILE: &str = "promotions.jsonl";

const BUILTINS: [(&str, &str); 5] = [
    ("building-placement", include_str!("../data/skills/building-placement.md")),
    ("city-layout", include_str!("../data/skills/city-layout.md")),
    ("street-furniture", include_str!("../data/skills/street-furniture.md")),
    ("weather-and-mood", include_str!("../data/skills/weather-and-mood.md")),
    ("screenshot-tour", include_str!("../data/skills/screenshot-tour.md")),
];

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("skill directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("malformed skill document: {0}")]
    Malformed(String),
    #[error("skill {name} version {new} does not exceed registered version {old}")]
    VersionNotIncreasing { name: String, old: Version, new: Version },
    #[error("skill {name} depends on unknown skill {dependency}")]
    UnresolvedDependency { name: String, dependency: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dotted numeric version; missing trailing components compare as zero.
#[derive(Clone, Debug, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Version(Vec<u32>);

impl Version {
    fn trimmed(&self) -> &[u32] {
        let end = self.0.iter().rposition(|p| *p != 0).map_or(0, |i| i + 1);
        &self.0[..end]
    }
}

impl PartialEq for Version {
    fn eq(&self, o: &Self) -> bool {
        self.trimmed() == o.trimmed()
    }
}

impl Ord for Version {
    fn cmp(&self, o: &Self) -> Ordering {
        self.trimmed().cmp(o.trimmed())
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl FromStr for Version {
    type Err = SkillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .trim()
            .split('.')
            .map(|p| p.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| SkillError::Malformed(format!("bad version {s:?}")))?;
        Ok(Version(parts))
    }
}

impl TryFrom<String> for Version {
    type Error = SkillError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Version> for String {
    fn from(v: Version) -> String {
        v.to_string()
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&s.join("."))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillDoc {
    pub name: String,
    pub version: Version,
    pub tags: Vec<String>,
    pub dependencies: Vec<String>,
    pub util_ref: Option<String>,
    /// Header lines with keys outside the schema, kept verbatim.
    pub extra: Vec<String>,
    pub body: String,
}

fn parse_list(v: &str) -> Result<Vec<String>, SkillError> {
    let v = v.trim();
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| SkillError::Malformed(format!("expected [a, b] list, got {v:?}")))?;
    Ok(inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

impl SkillDoc {
    pub fn parse(text: &str) -> Result<Self, SkillError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("---") {
            return Err(SkillError::Malformed("missing opening `---`".into()));
        }
        let mut header = Vec::new();
        let mut closed = false;
        for l in lines.by_ref() {
            if l.trim() == "---" {
                closed = true;
                break;
            }
            header.push(l);
        }
        if !closed {
            return Err(SkillError::Malformed("missing closing `---`".into()));
        }
        let body: Vec<&str> = lines.collect();
        let mut name = None;
        let mut version = None;
        let mut tags = Vec::new();
        let mut dependencies = Vec::new();
        let mut util_ref = None;
        let mut extra = Vec::new();
        for l in header {
            if l.trim().is_empty() {
                continue;
            }
            let (k, v) = l
                .split_once(':')
                .ok_or_else(|| SkillError::Malformed(format!("header line without `:`: {l:?}")))?;
            match k.trim() {
                "name" => name = Some(v.trim().to_string()),
                "version" => version = Some(v.parse::<Version>()?),
                "tags" => tags = parse_list(v)?,
                "dependencies" => dependencies = parse_list(v)?,
                "python_util" => util_ref = Some(v.trim().to_string()),
                _ => extra.push(l.to_string()),
            }
        }
        let name = name
            .filter(|n| !n.is_empty())
            .ok_or_else(|| SkillError::Malformed("missing `name`".into()))?;
        if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(SkillError::Malformed(format!("bad skill name {name:?}")));
        }
        Ok(Self {
            name,
            version: version.unwrap_or(Version(vec![1, 0])),
            tags,
            dependencies,
            util_ref,
            extra,
            body: body.join("\n"),
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::from("---\n");
        out += &format!("name: {}\n", self.name);
        out += &format!("version: {}\n", self.version);
        out += &format!("tags: [{}]\n", self.tags.join(", "));
        out += &format!("dependencies: [{}]\n", self.dependencies.join(", "));
        if let Some(u) = &self.util_ref {
            out += &format!("python_util: {u}\n");
        }
        for l in &self.extra {
            out += l;
            out.push('\n');
        }
        out += "---\n";
        out += &self.body;
        if !self.body.ends_with('\n') {
            out.push('\n');
        }
        out
    }

    /// Per-category clearances from `spacing_cm: building=150, tree=250` lines.
    /// A `+` prefix marks an increment over the base table.
    pub fn spacing_entries(&self) -> Vec<(Category, SpacingEntry)> {
        let mut out = Vec::new();
        for l in self.body.lines() {
            let Some(rest) = l.trim().strip_prefix("spacing_cm:") else { continue };
            for item in rest.split(',') {
                let Some((k, v)) = item.split_once('=') else { continue };
                let Ok(cat) = k.trim().parse::<Category>() else { continue };
                let v = v.trim();
                let entry = match v.strip_prefix('+') {
                    Some(inc) => inc.parse().ok().map(SpacingEntry::Increase),
                    None => v.parse().ok().map(SpacingEntry::Absolute),
                };
                if let Some(e) = entry {
                    out.push((cat, e));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpacingEntry {
    Absolute(f64),
    Increase(f64),
}

/// Canonical failure class, e.g. `collision` / `rule:collision:building`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FailureSignature {
    pub category: String,
    pub context_key: String,
}

impl FailureSignature {
    pub fn new(category: &str, context_key: &str) -> Self {
        let canon = |s: &str| s.trim().to_ascii_lowercase().replace(char::is_whitespace, "_");
        Self {
            category: canon(category),
            context_key: canon(context_key),
        }
    }

    pub fn slug(&self) -> String {
        let raw = format!("{}-{}", self.category, self.context_key);
        let mut s: String = raw
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        while s.contains("--") {
            s = s.replace("--", "-");
        }
        s.trim_matches('-').to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromotionRecord {
    pub signature: FailureSignature,
    pub skill: String,
    pub episode: u64,
}

/// Occurrence log of failure signatures, keyed by generation-episode index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureStore {
    occurrences: BTreeMap<FailureSignature, Vec<u64>>,
}

impl FailureStore {
    /// Records one occurrence. Episodes must not go backwards for a signature;
    /// an earlier episode is clamped to the latest one seen.
    pub fn record_failure(&mut self, sig: &FailureSignature, episode: u64) {
        let v = self.occurrences.entry(sig.clone()).or_default();
        let e = v.last().map_or(episode, |l| episode.max(*l));
        v.push(e);
    }

    pub fn occurrences(&self, sig: &FailureSignature) -> &[u64] {
        self.occurrences.get(sig).map_or(&[], Vec::as_slice)
    }

    /// Occurrences within the last `PROMOTION_WINDOW` episodes ending at `episode`.
    pub fn recent(&self, sig: &FailureSignature, episode: u64) -> usize {
        let lo = (episode + 1).saturating_sub(PROMOTION_WINDOW);
        self.occurrences(sig).iter().filter(|e| **e >= lo && **e <= episode).count()
    }

    pub fn should_promote(&self, sig: &FailureSignature, episode: u64, index: &SkillIndex) -> bool {
        self.recent(sig, episode) >= PROMOTION_MIN_OCCURRENCES && !index.is_promoted(sig)
    }
}

/// Writes a corrective skill for a failure class.
pub trait SkillAuthor {
    fn author(&self, sig: &FailureSignature, index: &SkillIndex) -> SkillDoc;
}

/// Emits a templated document naming the failure class and a corrective batch.
/// Collision classes on a category also raise that category's clearance.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateAuthor;

impl SkillAuthor for TemplateAuthor {
    fn author(&self, sig: &FailureSignature, index: &SkillIndex) -> SkillDoc {
        let name = format!("fix-{}", sig.slug());
        let mut tags: Vec<String> = vec![sig.category.clone(), "self-evolved".into()];
        let cat = sig.context_key.rsplit(':').next().and_then(|c| c.parse::<Category>().ok());
        if let Some(c) = cat {
            tags.push(c.as_str().to_string());
        }
        if sig.category == "collision" {
            tags.push("spacing".into());
            tags.push("placement".into());
        }
        tags.sort();
        tags.dedup();
        let mut body = format!(
            "## Summary\nCorrective procedure for recurring `{}` failures ({}).\n\n## Usage\n",
            sig.category, sig.context_key
        );
        match (sig.category.as_str(), cat) {
            ("collision", Some(c)) => {
                body += &format!(
                    "Leave extra clearance between {c} actors, then re-run the batch below.\n\nspacing_cm: {c}=+100\n"
                );
            }
            ("floating", _) | ("gravity", _) => {
                body += "Snap every actor so its bottom face rests on the ground plane.\n";
            }
            _ => body += "Re-run the verifier after each batch and revert the offending placements.\n",
        }
        body += "\n```json\n[{\"tool\": \"check_collisions\", \"args\": {\"scope\": \"spawned\"}},\n {\"tool\": \"check_vertical_support\", \"args\": {\"scope\": \"spawned\"}}]\n```\n";
        let version = index
            .get(&name)
            .map(|d| {
                let mut v = d.version.0.clone();
                v[0] += 1;
                Version(v)
            })
            .unwrap_or(Version(vec![1, 0]));
        SkillDoc {
            name,
            version,
            tags,
            dependencies: Vec::new(),
            util_ref: None,
            extra: vec![format!("failure_class: {}/{}", sig.category, sig.context_key)],
            body,
        }
    }
}

/// Indexed registry backed by a flat directory of `<name>.md` files.
#[derive(Clone, Debug)]
pub struct SkillIndex {
    dir: PathBuf,
    docs: BTreeMap<String, SkillDoc>,
    promotions: Vec<PromotionRecord>,
    diagnostics: Vec<String>,
}

impl SkillIndex {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SkillError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(SkillError::MissingDirectory(dir.to_path_buf()));
        }
        let mut docs: BTreeMap<String, SkillDoc> = BTreeMap::new();
        for (_, text) in BUILTINS {
            let d = SkillDoc::parse(text).expect("built-in skill parses");
            docs.insert(d.name.clone(), d);
        }
        let mut diagnostics = Vec::new();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "md"))
            .collect();
        files.sort();
        for p in files {
            let text = fs::read_to_string(&p)?;
            match SkillDoc::parse(&text) {
                Ok(d) => {
                    let newer = docs.get(&d.name).is_none_or(|old| d.version >= old.version);
                    if newer {
                        docs.insert(d.name.clone(), d);
                    }
                }
                Err(e) => diagnostics.push(format!("{}: {e}", p.display())),
            }
        }
        loop {
            let names: BTreeSet<String> = docs.keys().cloned().collect();
            let broken: Vec<(String, String)> = docs
                .values()
                .filter_map(|d| {
                    d.dependencies
                        .iter()
                        .find(|dep| !names.contains(*dep))
                        .map(|dep| (d.name.clone(), dep.clone()))
                })
                .collect();
            if broken.is_empty() {
                break;
            }
            for (n, dep) in broken {
                diagnostics.push(format!("{n}: unresolved dependency {dep}"));
                docs.remove(&n);
            }
        }
        let mut promotions = Vec::new();
        let pf = dir.join(PROMOTIONS_FILE);
        if pf.exists() {
            for (i, l) in fs::read_to_string(&pf)?.lines().enumerate() {
                if l.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<PromotionRecord>(l) {
                    Ok(r) => promotions.push(r),
                    Err(e) => diagnostics.push(format!("{PROMOTIONS_FILE}:{}: {e}", i + 1)),
                }
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            docs,
            promotions,
            diagnostics,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&SkillDoc> {
        self.docs.get(name)
    }

    pub fn docs(&self) -> impl Iterator<Item = &SkillDoc> {
        self.docs.values()
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn promotions(&self) -> &[PromotionRecord] {
        &self.promotions
    }

    pub fn is_promoted(&self, sig: &FailureSignature) -> bool {
        self.promotions.iter().any(|p| &p.signature == sig)
    }

    /// Up to `k` docs sharing at least one tag, by overlap count then name.
    pub fn retrieve<S: AsRef<str>>(&self, tags: &[S], k: usize) -> Vec<&SkillDoc> {
        let want: BTreeSet<&str> = tags.iter().map(AsRef::as_ref).collect();
        let mut scored: Vec<(usize, &SkillDoc)> = self
            .docs
            .values()
            .map(|d| (d.tags.iter().filter(|t| want.contains(t.as_str())).count(), d))
            .filter(|(s, _)| *s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.name.cmp(&b.1.name)));
        scored.into_iter().take(k).map(|(_, d)| d).collect()
    }

    /// Persists and indexes `doc`; with a promotion context also appends the record.
    pub fn register(
        &mut self,
        doc: SkillDoc,
        promotion: Option<(FailureSignature, u64)>,
    ) -> Result<(), SkillError> {
        if let Some(old) = self.docs.get(&doc.name) {
            if doc.version <= old.version {
                return Err(SkillError::VersionNotIncreasing {
                    name: doc.name,
                    old: old.version.clone(),
                    new: doc.version,
                });
            }
        }
        if let Some(dep) = doc
            .dependencies
            .iter()
            .find(|d| !self.docs.contains_key(*d) && **d != doc.name)
        {
            return Err(SkillError::UnresolvedDependency {
                name: doc.name,
                dependency: dep.clone(),
            });
        }
        fs::write(self.dir.join(format!("{}.md", doc.name)), doc.render())?;
        if let Some((signature, episode)) = promotion {
            let rec = PromotionRecord {
                signature,
                skill: doc.name.clone(),
                episode,
            };
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.dir.join(PROMOTIONS_FILE))?;
            writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
            self.promotions.push(rec);
        }
        self.docs.insert(doc.name.clone(), doc);
        Ok(())
    }

    /// Merged per-category clearance (cm) from every doc carrying spacing lines:
    /// the largest absolute value wins, then increments add up.
    pub fn spacing_table(&self) -> BTreeMap<Category, f64> {
        let mut base: BTreeMap<Category, f64> = BTreeMap::new();
        let mut inc: BTreeMap<Category, f64> = BTreeMap::new();
        for d in self.docs.values() {
            for (c, e) in d.spacing_entries() {
                match e {
                    SpacingEntry::Absolute(v) => {
                        let b = base.entry(c).or_insert(v);
                        *b = b.max(v);
                    }
                    SpacingEntry::Increase(v) => *inc.entry(c).or_insert(0.0) += v,
                }
            }
        }
        for (c, v) in inc {
            *base.entry(c).or_insert(0.0) += v;
        }
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_with_schema_keys() {
        let d = SkillDoc::parse(BUILTINS[0].1).unwrap();
        assert_eq!(d.name, "building-placement");
        assert_eq!(d.version, "1.2".parse().unwrap());
        assert_eq!(d.tags, ["placement", "spacing", "buildings"]);
        assert_eq!(d.dependencies, ["city-layout"]);
        assert_eq!(d.util_ref.as_deref(), Some("building_placement_utils.py"));
        assert_eq!(d.spacing_entries()[0], (Category::Building, SpacingEntry::Absolute(150.0)));
    }

    #[test]
    fn unknown_keys_survive_rewrite() {
        let text = "---\nname: x\nversion: 2.0.1\ntags: [a]\nauthor:  someone  \ndependencies: []\n---\nbody\n";
        let d = SkillDoc::parse(text).unwrap();
        assert_eq!(d.extra, ["author:  someone  "]);
        let again = SkillDoc::parse(&d.render()).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn versions_compare_numerically() {
        let v = |s: &str| s.parse::<Version>().unwrap();
        assert!(v("1.10") > v("1.9"));
        assert_eq!(v("1.2"), v("1.2.0"));
        assert!(v("2") > v("1.99.99"));
        assert!("1.x".parse::<Version>().is_err());
    }

    #[test]
    fn window_counts() {
        let dir = tempfile::tempdir().unwrap();
        let idx = SkillIndex::load(dir.path()).unwrap();
        let sig = FailureSignature::new("collision", "rule:check_collisions:building");
        let mut st = FailureStore::default();
        st.record_failure(&sig, 3);
        assert!(!st.should_promote(&sig, 3, &idx));
        st.record_failure(&sig, 12);
        assert!(st.should_promote(&sig, 12, &idx));
        // episode 3 drops out of the window ending at 13
        assert!(!st.should_promote(&sig, 13, &idx));
    }

    #[test]
    fn slug_is_file_safe() {
        let s = FailureSignature::new("Collision", "rule: check_collisions:Building");
        assert_eq!(s.slug(), "collision-rule-check-collisions-building");
    }
}
