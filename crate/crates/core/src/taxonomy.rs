//! Object categories, object-part categories and their granularity tree.
//!
//! Part categories are always qualified by their object and are keyed as
//! `"object: part"` (for example `"dog: head"`). A part may point at a
//! coarser parent part of the same object; the depth in that parent tree is
//! the part's granularity level, with root parts at level 0.
//!
//! Object ids and part ids share one category-id space so that detections,
//! text embeddings and COCO categories can refer to either unambiguously.
//! Id 0 is reserved for background in label grids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CategoryId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCategory {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartCategory {
    pub id: CategoryId,
    #[serde(rename = "object")]
    pub object_name: String,
    #[serde(rename = "part")]
    pub part_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<CategoryId>,
}

impl PartCategory {
    pub fn key(&self) -> String {
        format!("{}: {}", self.object_name, self.part_name)
    }
}

/// Base/novel membership of part categories. The two sets are disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomySplit {
    pub base: BTreeSet<CategoryId>,
    pub novel: BTreeSet<CategoryId>,
}

impl TaxonomySplit {
    pub fn new(
        base: impl IntoIterator<Item = CategoryId>,
        novel: impl IntoIterator<Item = CategoryId>,
    ) -> Result<Self> {
        let split = TaxonomySplit {
            base: base.into_iter().collect(),
            novel: novel.into_iter().collect(),
        };
        if let Some(id) = split.base.intersection(&split.novel).next() {
            return Err(Error::InvalidTaxonomy(format!(
                "category {id} is both base and novel"
            )));
        }
        Ok(split)
    }

    pub fn is_base(&self, id: CategoryId) -> bool {
        self.base.contains(&id)
    }

    pub fn is_novel(&self, id: CategoryId) -> bool {
        self.novel.contains(&id)
    }
}

/// Text template used to turn an (object, part) pair into an encoder prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PromptTemplate {
    /// `"a {object} {part}"`
    #[default]
    #[serde(rename = "object-part")]
    ObjectPart,
    /// `"{part} of a {object}"`
    #[serde(rename = "part-of-object")]
    PartOfObject,
}

impl PromptTemplate {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptTemplate::ObjectPart => "object-part",
            PromptTemplate::PartOfObject => "part-of-object",
        }
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object-part" => Ok(PromptTemplate::ObjectPart),
            "part-of-object" => Ok(PromptTemplate::PartOfObject),
            other => Err(Error::InvalidConfig(format!(
                "unknown prompt template {other:?} (expected object-part or part-of-object)"
            ))),
        }
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(Error::InvalidName(name.to_string()));
    }
    Ok(())
}

pub fn render_prompt(template: PromptTemplate, object_name: &str, part_name: &str) -> Result<String> {
    check_name(object_name)?;
    check_name(part_name)?;
    Ok(match template {
        PromptTemplate::ObjectPart => format!("a {object_name} {part_name}"),
        PromptTemplate::PartOfObject => format!("{part_name} of a {object_name}"),
    })
}

/// Prompt for a whole-object category.
pub fn render_object_prompt(object_name: &str) -> Result<String> {
    check_name(object_name)?;
    Ok(format!("a {object_name}"))
}

pub fn canonical_part_key(object_name: &str, part_name: &str) -> Result<String> {
    check_name(object_name)?;
    check_name(part_name)?;
    Ok(format!("{object_name}: {part_name}"))
}

/// Inverse of [`canonical_part_key`].
pub fn split_part_key(key: &str) -> Option<(&str, &str)> {
    key.split_once(": ")
}

/// Result of restricting a taxonomy to a user-supplied vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSelection {
    pub objects: Vec<ObjectCategory>,
    pub parts: Vec<PartCategory>,
    /// Terms that matched nothing, verbatim.
    pub unknown: Vec<String>,
}

impl PromptSelection {
    pub fn category_ids(&self) -> BTreeSet<CategoryId> {
        self.objects
            .iter()
            .map(|o| o.id)
            .chain(self.parts.iter().map(|p| p.id))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty() && self.parts.is_empty()
    }
}

#[derive(Deserialize, Serialize)]
struct TaxonomyDoc {
    objects: Vec<ObjectCategory>,
    parts: Vec<PartCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<TaxonomySplit>,
}

/// Immutable, validated category vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    objects: Vec<ObjectCategory>,
    parts: Vec<PartCategory>,
    split: Option<TaxonomySplit>,
    object_by_name: HashMap<String, usize>,
    part_by_id: HashMap<CategoryId, usize>,
    part_by_key: HashMap<(String, String), usize>,
    depth: HashMap<CategoryId, usize>,
}

impl Taxonomy {
    pub fn new(
        mut objects: Vec<ObjectCategory>,
        mut parts: Vec<PartCategory>,
        split: Option<TaxonomySplit>,
    ) -> Result<Self> {
        objects.sort_by_key(|o| o.id);
        parts.sort_by_key(|p| p.id);

        let mut ids = BTreeSet::new();
        let mut object_by_name = HashMap::new();
        for (i, o) in objects.iter().enumerate() {
            check_name(&o.name)?;
            if o.name.contains(": ") {
                return Err(Error::InvalidTaxonomy(format!(
                    "object name {:?} contains the key separator \": \"",
                    o.name
                )));
            }
            if o.id == 0 {
                return Err(Error::InvalidTaxonomy("category id 0 is reserved for background".into()));
            }
            if !ids.insert(o.id) {
                return Err(Error::InvalidTaxonomy(format!("duplicate category id {}", o.id)));
            }
            if object_by_name.insert(o.name.clone(), i).is_some() {
                return Err(Error::InvalidTaxonomy(format!("duplicate object name {:?}", o.name)));
            }
        }

        let mut part_by_id = HashMap::new();
        let mut part_by_key = HashMap::new();
        for (i, p) in parts.iter().enumerate() {
            check_name(&p.object_name)?;
            check_name(&p.part_name)?;
            if p.id == 0 {
                return Err(Error::InvalidTaxonomy("category id 0 is reserved for background".into()));
            }
            if !ids.insert(p.id) {
                return Err(Error::InvalidTaxonomy(format!("duplicate category id {}", p.id)));
            }
            if !object_by_name.contains_key(&p.object_name) {
                return Err(Error::InvalidTaxonomy(format!(
                    "part {} refers to unknown object {:?}",
                    p.id, p.object_name
                )));
            }
            part_by_id.insert(p.id, i);
            if part_by_key
                .insert((p.object_name.clone(), p.part_name.clone()), i)
                .is_some()
            {
                return Err(Error::InvalidTaxonomy(format!("duplicate part key {:?}", p.key())));
            }
        }

        for p in &parts {
            if let Some(parent) = p.parent {
                let Some(&pi) = part_by_id.get(&parent) else {
                    return Err(Error::InvalidTaxonomy(format!(
                        "part {} has unknown parent {parent}",
                        p.id
                    )));
                };
                if parts[pi].object_name != p.object_name {
                    return Err(Error::InvalidTaxonomy(format!(
                        "part {} and its parent {parent} belong to different objects",
                        p.id
                    )));
                }
            }
        }

        let mut depth = HashMap::new();
        for p in &parts {
            let mut d = 0;
            let mut cur = p.parent;
            while let Some(id) = cur {
                d += 1;
                if d > parts.len() {
                    return Err(Error::InvalidTaxonomy(format!(
                        "parent links of part {} form a cycle",
                        p.id
                    )));
                }
                cur = parts[part_by_id[&id]].parent;
            }
            depth.insert(p.id, d);
        }

        if let Some(split) = &split {
            if let Some(id) = split.base.intersection(&split.novel).next() {
                return Err(Error::InvalidTaxonomy(format!(
                    "category {id} is both base and novel"
                )));
            }
            for id in split.base.iter().chain(&split.novel) {
                if !part_by_id.contains_key(id) {
                    return Err(Error::InvalidTaxonomy(format!(
                        "split lists {id}, which is not a part category"
                    )));
                }
            }
            if let Some(p) = parts
                .iter()
                .find(|p| !split.base.contains(&p.id) && !split.novel.contains(&p.id))
            {
                return Err(Error::InvalidTaxonomy(format!(
                    "part {} ({}) is in neither the base nor the novel split",
                    p.id,
                    p.key()
                )));
            }
        }

        Ok(Taxonomy {
            objects,
            parts,
            split,
            object_by_name,
            part_by_id,
            part_by_key,
            depth,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TaxonomyDoc = serde_json::from_str(text)?;
        Taxonomy::new(doc.objects, doc.parts, doc.split)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: TaxonomyDoc = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        Taxonomy::new(doc.objects, doc.parts, doc.split)
    }

    pub fn to_json(&self) -> String {
        let doc = TaxonomyDoc {
            objects: self.objects.clone(),
            parts: self.parts.clone(),
            split: self.split.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("taxonomy serializes")
    }

    pub fn objects(&self) -> &[ObjectCategory] {
        &self.objects
    }

    pub fn parts(&self) -> &[PartCategory] {
        &self.parts
    }

    pub fn split(&self) -> Option<&TaxonomySplit> {
        self.split.as_ref()
    }

    pub fn object(&self, name: &str) -> Option<&ObjectCategory> {
        self.object_by_name.get(name).map(|&i| &self.objects[i])
    }

    pub fn part(&self, id: CategoryId) -> Option<&PartCategory> {
        self.part_by_id.get(&id).map(|&i| &self.parts[i])
    }

    pub fn part_by_key(&self, object_name: &str, part_name: &str) -> Option<&PartCategory> {
        self.part_by_key
            .get(&(object_name.to_string(), part_name.to_string()))
            .map(|&i| &self.parts[i])
    }

    pub fn is_part(&self, id: CategoryId) -> bool {
        self.part_by_id.contains_key(&id)
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        self.is_part(id) || self.objects.iter().any(|o| o.id == id)
    }

    /// Display name: the object name for objects, the `"object: part"` key
    /// for parts.
    pub fn category_name(&self, id: CategoryId) -> Option<String> {
        if let Some(p) = self.part(id) {
            return Some(p.key());
        }
        self.objects.iter().find(|o| o.id == id).map(|o| o.name.clone())
    }

    /// All categories as `(id, display name)`, ordered by id.
    pub fn categories(&self) -> Vec<(CategoryId, String)> {
        let mut all: BTreeMap<CategoryId, String> =
            self.objects.iter().map(|o| (o.id, o.name.clone())).collect();
        all.extend(self.parts.iter().map(|p| (p.id, p.key())));
        all.into_iter().collect()
    }

    /// Depth of a part in its object's parent tree; `None` for non-parts.
    pub fn granularity(&self, part_id: CategoryId) -> Option<usize> {
        self.depth.get(&part_id).copied()
    }

    /// Parts of `object_name` at the given depth of the parent tree, by id.
    pub fn parts_of_object(&self, object_name: &str, level: usize) -> Result<Vec<&PartCategory>> {
        if self.object(object_name).is_none() {
            return Err(Error::UnknownCategory(object_name.to_string()));
        }
        Ok(self
            .parts
            .iter()
            .filter(|p| p.object_name == object_name && self.depth[&p.id] == level)
            .collect())
    }

    /// True when every part of the object is in the novel split.
    pub fn is_novel_object(&self, object_name: &str) -> bool {
        let Some(split) = &self.split else {
            return false;
        };
        let mut parts = self.parts.iter().filter(|p| p.object_name == object_name).peekable();
        parts.peek().is_some() && parts.all(|p| split.is_novel(p.id))
    }

    /// Restrict the vocabulary to user prompt terms.
    ///
    /// `"object: part"` terms select that part category; bare object names
    /// select the object category itself (not its parts). Whitespace around
    /// the separator is tolerated. Terms that match nothing are returned in
    /// [`PromptSelection::unknown`].
    pub fn filter_by_prompt<S: AsRef<str>>(&self, terms: &[S]) -> Result<PromptSelection> {
        if terms.is_empty() {
            return Err(Error::Vocabulary("prompt vocabulary is empty".into()));
        }
        let mut objects = BTreeMap::new();
        let mut parts = BTreeMap::new();
        let mut unknown = Vec::new();
        for term in terms {
            let raw = term.as_ref();
            let t = raw.trim();
            let hit = match t.split_once(':') {
                Some((o, p)) => self
                    .part_by_key(o.trim(), p.trim())
                    .map(|p| parts.insert(p.id, p.clone()))
                    .is_some(),
                None => self
                    .object(t)
                    .map(|o| objects.insert(o.id, o.clone()))
                    .is_some(),
            };
            if !hit {
                unknown.push(raw.to_string());
            }
        }
        Ok(PromptSelection {
            objects: objects.into_values().collect(),
            parts: parts.into_values().collect(),
            unknown,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dog with a two-level tree, plus a part-less object.
    fn fixture() -> Taxonomy {
        let text = r#"{
            "objects": [{"id": 1, "name": "dog"}, {"id": 2, "name": "cat"}, {"id": 3, "name": "ball"}],
            "parts": [
                {"id": 10, "object": "dog", "part": "head"},
                {"id": 11, "object": "dog", "part": "body"},
                {"id": 12, "object": "dog", "part": "foot"},
                {"id": 13, "object": "dog", "part": "tail"},
                {"id": 14, "object": "dog", "part": "ear", "parent": 10},
                {"id": 15, "object": "dog", "part": "eye", "parent": 10},
                {"id": 20, "object": "cat", "part": "head"},
                {"id": 21, "object": "cat", "part": "tail"}
            ],
            "split": {"base": [20, 21], "novel": [10, 11, 12, 13, 14, 15]}
        }"#;
        Taxonomy::from_json(text).unwrap()
    }

    #[test]
    fn prompts() {
        assert_eq!(render_prompt(PromptTemplate::ObjectPart, "dog", "head").unwrap(), "a dog head");
        assert_eq!(render_prompt(PromptTemplate::PartOfObject, "dog", "head").unwrap(), "head of a dog");
        assert_eq!(render_prompt(PromptTemplate::ObjectPart, "cat", "tail").unwrap(), "a cat tail");
        assert_eq!(
            render_prompt(PromptTemplate::ObjectPart, "car", "side mirror").unwrap(),
            "a car side mirror"
        );
        assert!(matches!(
            render_prompt(PromptTemplate::ObjectPart, "", "head"),
            Err(Error::InvalidName(_))
        ));
    }

    #[test]
    fn keys() {
        assert_eq!(canonical_part_key("dog", "head").unwrap(), "dog: head");
        assert_eq!(canonical_part_key("cat", "tail").unwrap(), "cat: tail");
        assert_eq!(canonical_part_key("bottle", "mouth").unwrap(), "bottle: mouth");
        assert!(canonical_part_key("dog", " ").is_err());
        assert_eq!(split_part_key("bottle: mouth"), Some(("bottle", "mouth")));
    }

    #[test]
    fn template_parse() {
        assert_eq!("object-part".parse::<PromptTemplate>().unwrap(), PromptTemplate::ObjectPart);
        assert_eq!("part-of-object".parse::<PromptTemplate>().unwrap(), PromptTemplate::PartOfObject);
        assert!("object_part".parse::<PromptTemplate>().is_err());
    }

    #[test]
    fn filter_bare_object() {
        let tax = fixture();
        let sel = tax.filter_by_prompt(&["dog"]).unwrap();
        assert_eq!(sel.objects, vec![ObjectCategory { id: 1, name: "dog".into() }]);
        assert!(sel.parts.is_empty());
        assert!(sel.unknown.is_empty());
    }

    #[test]
    fn filter_part_terms() {
        let tax = fixture();
        let sel = tax
            .filter_by_prompt(&["dog: head", "dog: body", "dog: foot", "dog: tail"])
            .unwrap();
        let ids: Vec<_> = sel.parts.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![10, 11, 12, 13]);
        assert!(sel.objects.is_empty());
    }

    #[test]
    fn filter_unknown_term_is_reported() {
        let tax = fixture();
        let sel = tax.filter_by_prompt(&["unicorn: horn"]).unwrap();
        assert!(sel.is_empty());
        assert_eq!(sel.unknown, vec!["unicorn: horn".to_string()]);
        assert!(tax.filter_by_prompt::<&str>(&[]).is_err());
    }

    #[test]
    fn filter_all_keys_is_full_taxonomy() {
        let tax = fixture();
        let mut terms: Vec<String> = tax.objects().iter().map(|o| o.name.clone()).collect();
        terms.extend(tax.parts().iter().map(|p| p.key()));
        let sel = tax.filter_by_prompt(&terms).unwrap();
        assert_eq!(sel.objects, tax.objects());
        assert_eq!(sel.parts, tax.parts());
        assert!(sel.unknown.is_empty());
    }

    #[test]
    fn granularity_levels() {
        let tax = fixture();
        let names = |lvl| {
            tax.parts_of_object("dog", lvl)
                .unwrap()
                .iter()
                .map(|p| p.part_name.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(names(0), vec!["head", "body", "foot", "tail"]);
        assert_eq!(names(1), vec!["ear", "eye"]);
        assert!(names(2).is_empty());
        assert!(tax.parts_of_object("ball", 0).unwrap().is_empty());
        assert!(matches!(
            tax.parts_of_object("unicorn", 0),
            Err(Error::UnknownCategory(_))
        ));
    }

    #[test]
    fn novel_objects() {
        let tax = fixture();
        assert!(tax.is_novel_object("dog"));
        assert!(!tax.is_novel_object("cat"));
        assert!(!tax.is_novel_object("ball"));
    }

    fn load(text: &str) -> Result<Taxonomy> {
        Taxonomy::from_json(text)
    }

    #[test]
    fn rejects_bad_documents() {
        let dup = r#"{"objects":[{"id":1,"name":"dog"}],"parts":[
            {"id":2,"object":"dog","part":"head"},{"id":3,"object":"dog","part":"head"}]}"#;
        assert!(matches!(load(dup), Err(Error::InvalidTaxonomy(_))));

        let shared_id = r#"{"objects":[{"id":1,"name":"dog"}],"parts":[{"id":1,"object":"dog","part":"head"}]}"#;
        assert!(matches!(load(shared_id), Err(Error::InvalidTaxonomy(_))));

        let cycle = r#"{"objects":[{"id":1,"name":"dog"}],"parts":[
            {"id":2,"object":"dog","part":"a","parent":3},{"id":3,"object":"dog","part":"b","parent":2}]}"#;
        assert!(matches!(load(cycle), Err(Error::InvalidTaxonomy(_))));

        let cross_parent = r#"{"objects":[{"id":1,"name":"dog"},{"id":2,"name":"cat"}],"parts":[
            {"id":3,"object":"dog","part":"head"},{"id":4,"object":"cat","part":"ear","parent":3}]}"#;
        assert!(matches!(load(cross_parent), Err(Error::InvalidTaxonomy(_))));

        let overlap = r#"{"objects":[{"id":1,"name":"dog"}],"parts":[{"id":2,"object":"dog","part":"head"}],
            "split":{"base":[2],"novel":[2]}}"#;
        assert!(matches!(load(overlap), Err(Error::InvalidTaxonomy(_))));

        let uncovered = r#"{"objects":[{"id":1,"name":"dog"}],"parts":[
            {"id":2,"object":"dog","part":"head"},{"id":3,"object":"dog","part":"tail"}],
            "split":{"base":[2],"novel":[]}}"#;
        assert!(matches!(load(uncovered), Err(Error::InvalidTaxonomy(_))));

        let orphan = r#"{"objects":[],"parts":[{"id":2,"object":"dog","part":"head"}]}"#;
        assert!(matches!(load(orphan), Err(Error::InvalidTaxonomy(_))));

        assert!(Taxonomy::from_json("{").is_err());
    }

    #[test]
    fn json_round_trip() {
        let tax = fixture();
        let again = load(&tax.to_json()).unwrap();
        assert_eq!(tax, again);
    }
}
