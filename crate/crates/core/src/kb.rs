//! Domain knowledge base: entities, their options and typed relations.
//!
//! The answer pool is every entity plus every option, and the same node set
//! backs the undirected graph used for node embeddings.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Menu,
    Shortcut,
    Dialog,
    Tool,
    Key,
    Panel,
    Item,
    Action,
}

impl EntityType {
    pub const ALL: [EntityType; 8] = [
        EntityType::Menu,
        EntityType::Shortcut,
        EntityType::Dialog,
        EntityType::Tool,
        EntityType::Key,
        EntityType::Panel,
        EntityType::Item,
        EntityType::Action,
    ];

    /// Only dialogs, tools and panels carry options.
    pub fn has_options(self) -> bool {
        matches!(self, EntityType::Dialog | EntityType::Tool | EntityType::Panel)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Menu => "menu",
            EntityType::Shortcut => "shortcut",
            EntityType::Dialog => "dialog",
            EntityType::Tool => "tool",
            EntityType::Key => "key",
            EntityType::Panel => "panel",
            EntityType::Item => "item",
            EntityType::Action => "action",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    IsA,
    BelongsTo,
    IsShortcutOf,
    IsOpenedBy,
    /// Implicit: derived from option nesting, never written in the file.
    HasOption,
}

impl RelationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::IsA => "is_a",
            RelationKind::BelongsTo => "belongs_to",
            RelationKind::IsShortcutOf => "is_shortcut_of",
            RelationKind::IsOpenedBy => "is_opened_by",
            RelationKind::HasOption => "has_option",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "is_a" => Ok(RelationKind::IsA),
            "belongs_to" => Ok(RelationKind::BelongsTo),
            "is_shortcut_of" => Ok(RelationKind::IsShortcutOf),
            "is_opened_by" => Ok(RelationKind::IsOpenedBy),
            other => Err(format!("unknown relation kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionRecord {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    #[serde(rename = "type")]
    pub etype: EntityType,
    #[serde(default)]
    pub options: Vec<OptionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub src: String,
    pub dst: String,
    pub kind: RelationKind,
}

#[derive(Deserialize)]
struct RawRelation {
    src: String,
    dst: String,
    kind: String,
}

#[derive(Deserialize)]
struct RawKb {
    #[serde(default)]
    entities: Vec<Entity>,
    #[serde(default)]
    relations: Vec<RawRelation>,
}

/// What a pool candidate is: a typed entity, or an option hanging off one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidateKind {
    Entity(EntityType),
    Option { parent: String, parent_type: EntityType },
}

/// A validated knowledge base. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    kinds: HashMap<String, CandidateKind>,
    names: HashMap<String, String>,
}

impl KnowledgeBase {
    /// Validates ids, option placement and relation endpoints.
    pub fn new(entities: Vec<Entity>, relations: Vec<Relation>) -> Result<Self> {
        let mut kinds = HashMap::new();
        let mut names = HashMap::new();
        for e in &entities {
            if kinds
                .insert(e.id.clone(), CandidateKind::Entity(e.etype))
                .is_some()
            {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            names.insert(e.id.clone(), e.name.clone());
            if !e.options.is_empty() && !e.etype.has_options() {
                return Err(Error::InvalidRecord {
                    record: format!("entity {}", e.id),
                    message: format!("entities of type {} cannot carry options", e.etype),
                });
            }
        }
        for e in &entities {
            for o in &e.options {
                let kind = CandidateKind::Option {
                    parent: e.id.clone(),
                    parent_type: e.etype,
                };
                if kinds.insert(o.id.clone(), kind).is_some() {
                    return Err(Error::DuplicateId(o.id.clone()));
                }
                names.insert(o.id.clone(), o.name.clone());
            }
        }
        for r in &relations {
            if r.kind == RelationKind::HasOption {
                return Err(Error::InvalidRecord {
                    record: format!("relation {} -> {}", r.src, r.dst),
                    message: "has_option is implied by option nesting".into(),
                });
            }
            for end in [&r.src, &r.dst] {
                if !kinds.contains_key(end) {
                    return Err(Error::DanglingRelation {
                        src: r.src.clone(),
                        dst: r.dst.clone(),
                        kind: r.kind.to_string(),
                        missing: end.clone(),
                    });
                }
            }
        }
        Ok(KnowledgeBase {
            entities,
            relations,
            kinds,
            names,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawKb = serde_json::from_str(text).map_err(|e| Error::parse("knowledge base", e))?;
        let mut relations = Vec::with_capacity(raw.relations.len());
        for (i, r) in raw.relations.into_iter().enumerate() {
            let kind = r.kind.parse().map_err(|m| Error::InvalidRecord {
                record: format!("relation #{i} ({} -> {})", r.src, r.dst),
                message: m,
            })?;
            relations.push(Relation {
                src: r.src,
                dst: r.dst,
                kind,
            });
        }
        Self::new(raw.entities, relations)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "entities": self.entities,
            "relations": self.relations,
        }))
        .expect("knowledge base serializes")
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn option_count(&self) -> usize {
        self.entities.iter().map(|e| e.options.len()).sum()
    }

    pub fn kind(&self, id: &str) -> Option<&CandidateKind> {
        self.kinds.get(id)
    }

    pub fn name(&self, id: &str) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn entity_type(&self, id: &str) -> Option<EntityType> {
        match self.kinds.get(id)? {
            CandidateKind::Entity(t) => Some(*t),
            CandidateKind::Option { .. } => None,
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.kinds.contains_key(id)
    }
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KnowledgeBase::from_json_str(&text)
}

pub fn save_kb(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, kb.to_json_string()).map_err(|e| Error::io(path, e))
}

/// The ordered global candidate set: entities first, then options, each
/// sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerPool {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerPool {
    pub fn from_ids(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        AnswerPool { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Stable digest of the ordered id list, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

pub fn answer_pool(kb: &KnowledgeBase) -> AnswerPool {
    let mut entities: Vec<String> = kb.entities.iter().map(|e| e.id.clone()).collect();
    let mut options: Vec<String> = kb
        .entities
        .iter()
        .flat_map(|e| e.options.iter().map(|o| o.id.clone()))
        .collect();
    entities.sort();
    options.sort();
    entities.extend(options);
    AnswerPool::from_ids(entities)
}

/// Undirected simple graph over the answer pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: Vec<String>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a simple graph from index pairs; duplicates and self-loops are dropped.
    pub fn from_edges(nodes: Vec<String>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
        for (a, b) in edges {
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        Graph {
            nodes,
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Edges as `(low, high)` index pairs in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (a, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }
}

pub fn to_graph(kb: &KnowledgeBase) -> Graph {
    let pool = answer_pool(kb);
    let idx = |id: &str| pool.index_of(id).expect("validated endpoint");
    let mut edges = Vec::new();
    for r in &kb.relations {
        edges.push((idx(&r.src), idx(&r.dst)));
    }
    for e in &kb.entities {
        for o in &e.options {
            edges.push((idx(&e.id), idx(&o.id)));
        }
    }
    Graph::from_edges(pool.ids.clone(), edges)
}

/// Entity ids of a given type, sorted.
pub fn ids_of_type(kb: &KnowledgeBase, etype: EntityType) -> Vec<String> {
    let mut ids: Vec<String> = kb
        .entities
        .iter()
        .filter(|e| e.etype == etype)
        .map(|e| e.id.clone())
        .collect();
    ids.sort();
    ids
}
