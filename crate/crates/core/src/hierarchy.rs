//! Label taxonomy: YAML parsing, validation, ancestor closure and edge lists.
//!
//! A hierarchy document declares each non-leaf label with its list of children.
//! Declarations may nest (`A: [B: [c, d]]`, or `A: {B: [c, d]}`) or be flat,
//! with a child referring to another top-level declaration (`A: [B]`, `B: [c]`).
//! A single top-level `Root` wrapping everything is stripped; the model never
//! sees a root node.
//!
//! Label ids run breadth-first in document order, so each level occupies a
//! contiguous id range.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use serde_yaml::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelHierarchy {
    labels: Vec<String>,
    parent_of: Vec<Option<usize>>,
    children_of: Vec<Vec<usize>>,
    /// 1-based.
    level_of: Vec<usize>,
    leaf_ids: Vec<usize>,
    level_sizes: Vec<usize>,
    index: HashMap<String, usize>,
}

/// Ancestor-closed binary label assignment over all labels of a hierarchy.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelVector {
    bits: Vec<bool>,
}

impl LabelVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    /// Build from raw bits, checking closure against `h`.
    pub fn from_bits(bits: Vec<bool>, h: &LabelHierarchy) -> Result<Self> {
        let v = Self { bits };
        if v.bits.len() != h.len() {
            return Err(Error::Shape(format!(
                "label vector of length {} for {} labels",
                v.bits.len(),
                h.len()
            )));
        }
        if !v.is_closed(h) {
            return Err(Error::InvalidConfig("label vector is not ancestor-closed".into()));
        }
        Ok(v)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, id: usize) -> bool {
        self.bits[id]
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_closed(&self, h: &LabelHierarchy) -> bool {
        self.active()
            .all(|c| h.parent(c).map_or(true, |p| self.bits[p]))
    }

    /// Values restricted to `ids`, as 0/1 floats.
    pub fn project(&self, ids: &[usize]) -> Vec<f64> {
        ids.iter().map(|&i| if self.bits[i] { 1.0 } else { 0.0 }).collect()
    }
}

/// Directed edges `(source, target)`; messages flow from source to target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeList {
    pub edges: Vec<(usize, usize)>,
    pub includes_reverse: bool,
    pub includes_self_loops: bool,
    pub num_nodes: usize,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Row-normalised in-neighbour matrix: `A[v][u] = 1/|N(v)|` for each edge u→v.
    pub fn mean_aggregation_matrix(&self) -> Vec<f64> {
        let n = self.num_nodes;
        let mut indeg = vec![0usize; n];
        for &(_, t) in &self.edges {
            indeg[t] += 1;
        }
        let mut a = vec![0.0; n * n];
        for &(s, t) in &self.edges {
            a[t * n + s] += 1.0 / indeg[t] as f64;
        }
        a
    }
}

/// Per-level label cardinality and density over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelStats {
    /// Mean active labels per sample at each level (index 0 = level 1).
    pub cardinality: Vec<f64>,
    pub density: Vec<f64>,
    pub leaf_cardinality: f64,
    pub leaf_density: f64,
}

#[derive(Debug)]
struct Decl {
    name: String,
    children: Vec<String>,
}

fn scalar_name(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.trim().to_string()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(Error::MalformedHierarchy(format!(
            "expected a label name, found {other:?}"
        ))),
    }
}

/// Walk a children value, registering nested declarations.
fn collect_children(value: &Value, decls: &mut Vec<Decl>) -> Result<Vec<String>> {
    let mut out = Vec::new();
    match value {
        Value::Null => {}
        Value::Sequence(items) => {
            for item in items {
                match item {
                    Value::Mapping(m) => {
                        for (k, v) in m {
                            let name = scalar_name(k)?;
                            declare(name.clone(), v, decls)?;
                            out.push(name);
                        }
                    }
                    other => out.push(scalar_name(other)?),
                }
            }
        }
        Value::Mapping(m) => {
            for (k, v) in m {
                let name = scalar_name(k)?;
                declare(name.clone(), v, decls)?;
                out.push(name);
            }
        }
        Value::Tagged(t) => return collect_children(&t.value, decls),
        other => out.push(scalar_name(other)?),
    }
    Ok(out)
}

fn declare(name: String, value: &Value, decls: &mut Vec<Decl>) -> Result<()> {
    if name.is_empty() {
        return Err(Error::MalformedHierarchy("empty label name".into()));
    }
    let slot = decls.len();
    decls.push(Decl {
        name,
        children: Vec::new(),
    });
    let children = collect_children(value, decls)?;
    decls[slot].children = children;
    Ok(())
}

impl LabelHierarchy {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: Value = serde_yaml::from_str(text).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("duplicate entry") {
                Error::DuplicateLabel(msg)
            } else {
                Error::Yaml(e)
            }
        })?;
        let mut decls = Vec::new();
        let top = match &doc {
            Value::Null => return Err(Error::EmptyDocument),
            Value::Mapping(m) if m.is_empty() => return Err(Error::EmptyDocument),
            Value::Sequence(s) if s.is_empty() => return Err(Error::EmptyDocument),
            v => collect_children(v, &mut decls)?,
        };
        Self::from_declarations(top, decls)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn from_declarations(top: Vec<String>, decls: Vec<Decl>) -> Result<Self> {
        // Every name mentioned, in order of first appearance.
        let mut order: Vec<String> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut note = |n: &str, order: &mut Vec<String>| {
            if !seen.contains_key(n) {
                seen.insert(n.to_string(), order.len());
                order.push(n.to_string());
            }
        };
        for n in &top {
            note(n, &mut order);
        }
        for d in &decls {
            note(&d.name, &mut order);
            for c in &d.children {
                note(c, &mut order);
            }
        }
        let id = |n: &str| seen[n];

        let mut children: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
        let mut declared = vec![false; order.len()];
        for d in &decls {
            let p = id(&d.name);
            if declared[p] && !d.children.is_empty() {
                return Err(Error::DuplicateLabel(d.name.clone()));
            }
            if !d.children.is_empty() {
                declared[p] = true;
            }
            for c in &d.children {
                let c = id(c);
                if children[p].contains(&c) {
                    return Err(Error::DuplicateLabel(order[c].clone()));
                }
                children[p].push(c);
            }
        }
        for (i, n) in top.iter().enumerate() {
            if top[..i].contains(n) {
                return Err(Error::DuplicateLabel(n.clone()));
            }
        }

        // Cycles first: a cycle reached from a root also shows up as a node
        // with two parents, and the cycle is the more useful diagnosis.
        let mut state = vec![0u8; order.len()];
        fn visit(v: usize, ch: &[Vec<usize>], st: &mut [u8], names: &[String]) -> Result<()> {
            st[v] = 1;
            for &c in &ch[v] {
                match st[c] {
                    1 => return Err(Error::Cycle(names[c].clone())),
                    0 => visit(c, ch, st, names)?,
                    _ => {}
                }
            }
            st[v] = 2;
            Ok(())
        }
        for v in 0..order.len() {
            if state[v] == 0 {
                visit(v, &children, &mut state, &order)?;
            }
        }

        let mut parent: Vec<Option<usize>> = vec![None; order.len()];
        for p in 0..order.len() {
            for &c in &children[p] {
                if let Some(first) = parent[c] {
                    return Err(Error::MultipleParents {
                        child: order[c].clone(),
                        first: order[first].clone(),
                        second: order[p].clone(),
                    });
                }
                parent[c] = Some(p);
            }
        }

        let mut roots: Vec<usize> = (0..order.len()).filter(|&v| parent[v].is_none()).collect();
        if roots.len() == 1 && order[roots[0]].eq_ignore_ascii_case("root") {
            roots = children[roots[0]].clone();
        }
        if roots.is_empty() {
            return Err(Error::EmptyDocument);
        }

        // Breadth-first id assignment.
        let mut labels = Vec::new();
        let mut parent_of = Vec::new();
        let mut level_of = Vec::new();
        let mut new_id = vec![usize::MAX; order.len()];
        let mut frontier = roots;
        let mut level = 1;
        let mut level_sizes = Vec::new();
        while !frontier.is_empty() {
            level_sizes.push(frontier.len());
            let mut next = Vec::new();
            for &v in &frontier {
                new_id[v] = labels.len();
                labels.push(order[v].clone());
                parent_of.push(if level == 1 { None } else { parent[v].map(|p| new_id[p]) });
                level_of.push(level);
                next.extend(children[v].iter().copied());
            }
            frontier = next;
            level += 1;
        }
        Self::from_parts(labels, parent_of)
            .map(|h| {
                debug_assert_eq!(h.level_sizes, level_sizes);
                h
            })
    }

    /// Build from names and parent links, which must already be in
    /// breadth-first order (every parent id below its children's ids).
    pub fn from_parts(labels: Vec<String>, parent_of: Vec<Option<usize>>) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::EmptyDocument);
        }
        if parent_of.len() != m {
            return Err(Error::MalformedHierarchy("parent list length differs from labels".into()));
        }
        let mut index = HashMap::new();
        for (i, n) in labels.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::DuplicateLabel(n.clone()));
            }
        }
        let mut level_of = vec![0usize; m];
        let mut children_of = vec![Vec::new(); m];
        for i in 0..m {
            level_of[i] = match parent_of[i] {
                None => 1,
                Some(p) if p < i => {
                    children_of[p].push(i);
                    level_of[p] + 1
                }
                Some(_) => {
                    return Err(Error::MalformedHierarchy(format!(
                        "'{}' precedes its parent",
                        labels[i]
                    )))
                }
            };
            if i > 0 && level_of[i] < level_of[i - 1] {
                return Err(Error::MalformedHierarchy("ids are not level-ordered".into()));
            }
        }
        let depth = *level_of.iter().max().unwrap();
        let mut level_sizes = vec![0usize; depth];
        for &l in &level_of {
            level_sizes[l - 1] += 1;
        }
        let leaf_ids = (0..m).filter(|&i| children_of[i].is_empty()).collect();
        Ok(Self {
            labels,
            parent_of,
            children_of,
            level_of,
            leaf_ids,
            level_sizes,
            index,
        })
    }

    /// One level containing every leaf of `self`, in leaf-id order.
    pub fn leaves_only(&self) -> Self {
        let labels = self.leaf_ids.iter().map(|&i| self.labels[i].clone()).collect::<Vec<_>>();
        let n = labels.len();
        Self::from_parts(labels, vec![None; n]).expect("leaf names are unique")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent_of[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children_of[id]
    }

    pub fn level(&self, id: usize) -> usize {
        self.level_of[id]
    }

    pub fn depth(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn leaf_ids(&self) -> &[usize] {
        &self.leaf_ids
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.children_of[id].is_empty()
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    /// Contiguous id range of a 1-based level.
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        let start: usize = self.level_sizes[..level - 1].iter().sum();
        start..start + self.level_sizes[level - 1]
    }

    /// Ancestor of `id` at the 1-based `level` (the label itself at its own level).
    pub fn ancestor_at(&self, mut id: usize, level: usize) -> Option<usize> {
        if level > self.level_of[id] {
            return None;
        }
        while self.level_of[id] > level {
            id = self.parent_of[id]?;
        }
        Some(id)
    }

    /// Named leaves plus all of their ancestors.
    pub fn ancestor_closure<S: AsRef<str>>(&self, leaf_names: &[S]) -> Result<LabelVector> {
        let mut bits = vec![false; self.len()];
        for name in leaf_names {
            let name = name.as_ref();
            let id = self.id(name).ok_or_else(|| Error::UnknownLabel(name.to_string()))?;
            if !self.is_leaf(id) {
                return Err(Error::NotALeaf(name.to_string()));
            }
            let mut cur = Some(id);
            while let Some(c) = cur {
                if bits[c] {
                    break;
                }
                bits[c] = true;
                cur = self.parent_of[c];
            }
        }
        Ok(LabelVector { bits })
    }

    /// Closure of a set of leaf ids.
    pub fn closure_of_ids(&self, leaf_ids: &[usize]) -> LabelVector {
        let mut bits = vec![false; self.len()];
        for &id in leaf_ids {
            let mut cur = Some(id);
            while let Some(c) = cur {
                bits[c] = true;
                cur = self.parent_of[c];
            }
        }
        LabelVector { bits }
    }

    /// One edge per parent link (parent→child), optionally followed by the
    /// reversed links and then one self-loop per node.
    pub fn build_edges(&self, add_reverse: bool, add_self_loops: bool) -> EdgeList {
        let forward: Vec<(usize, usize)> = (0..self.len())
            .filter_map(|c| self.parent_of[c].map(|p| (p, c)))
            .collect();
        let mut edges = forward.clone();
        if add_reverse {
            edges.extend(forward.iter().map(|&(p, c)| (c, p)));
        }
        if add_self_loops {
            edges.extend((0..self.len()).map(|v| (v, v)));
        }
        EdgeList {
            edges,
            includes_reverse: add_reverse,
            includes_self_loops: add_self_loops,
            num_nodes: self.len(),
        }
    }

    pub fn level_stats(&self, dataset: &[LabelVector]) -> Result<LevelStats> {
        if dataset.is_empty() {
            return Err(Error::Empty("level statistics of an empty dataset".into()));
        }
        let mut counts = vec![0usize; self.depth()];
        let mut leaf_count = 0usize;
        for v in dataset {
            if v.len() != self.len() || !v.is_closed(self) {
                return Err(Error::InvalidConfig("label vector is not a closed assignment".into()));
            }
            for id in v.active() {
                counts[self.level_of[id] - 1] += 1;
                if self.is_leaf(id) {
                    leaf_count += 1;
                }
            }
        }
        let n = dataset.len() as f64;
        let cardinality: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let density = cardinality
            .iter()
            .zip(&self.level_sizes)
            .map(|(c, &s)| c / s as f64)
            .collect();
        let leaf_cardinality = leaf_count as f64 / n;
        Ok(LevelStats {
            cardinality,
            density,
            leaf_cardinality,
            leaf_density: leaf_cardinality / self.leaf_ids.len() as f64,
        })
    }

    /// Canonical YAML: top-level map of level-1 labels to child lists; leaves are
    /// scalar entries, inner labels single-key maps.
    pub fn to_yaml(&self) -> Result<String> {
        fn entry(h: &LabelHierarchy, id: usize) -> Value {
            if h.is_leaf(id) {
                Value::String(h.labels[id].clone())
            } else {
                let mut m = serde_yaml::Mapping::new();
                m.insert(Value::String(h.labels[id].clone()), children(h, id));
                Value::Mapping(m)
            }
        }
        fn children(h: &LabelHierarchy, id: usize) -> Value {
            Value::Sequence(h.children_of[id].iter().map(|&c| entry(h, c)).collect())
        }
        let mut top = serde_yaml::Mapping::new();
        for id in self.level_range(1) {
            top.insert(Value::String(self.labels[id].clone()), children(self, id));
        }
        Ok(serde_yaml::to_string(&Value::Mapping(top))?)
    }

    /// Short JSON-friendly description.
    pub fn summary(&self) -> HierarchySummary {
        HierarchySummary {
            m: self.len(),
            levels: self.level_sizes.clone(),
            leaves: self.leaf_ids.len(),
            edges: self.build_edges(false, false).len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HierarchySummary {
    #[serde(rename = "M")]
    pub m: usize,
    pub levels: Vec<usize>,
    pub leaves: usize,
    pub edges: usize,
}

/// Label set `{0..leaves}` of ids with a given set of leaves active.
pub fn leaf_set(h: &LabelHierarchy, v: &LabelVector) -> BTreeSet<usize> {
    h.leaf_ids().iter().copied().filter(|&i| v.get(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const UCM: &str = include_str!("../assets/ucm.yaml");

    fn ucm() -> LabelHierarchy {
        LabelHierarchy::parse(UCM).unwrap()
    }

    #[test]
    fn ucm_shape() {
        let h = ucm();
        assert_eq!(h.len(), 30);
        assert_eq!(h.level_sizes(), &[4, 9, 17]);
        assert_eq!(h.leaf_ids().len(), 17);
        assert_eq!(h.name(0), "Artificial Surfaces");
        assert_eq!(h.level_range(3).start, 13);
    }

    #[test]
    fn single_label() {
        for doc in ["water:", "- water", "water: []"] {
            let h = LabelHierarchy::parse(doc).unwrap();
            assert_eq!(h.len(), 1);
            assert_eq!(h.level_sizes(), &[1]);
            assert_eq!(h.leaf_ids(), &[0]);
        }
    }

    #[test]
    fn two_parents_rejected() {
        let doc = "Root:\n  - A: [grass, x]\n  - B: [grass]\n";
        let err = LabelHierarchy::parse(doc).unwrap_err();
        assert!(err.to_string().contains("child listed under two parents"), "{err}");
    }

    #[test]
    fn cycle_rejected() {
        let err = LabelHierarchy::parse("a: [b]\nb: [a]\n").unwrap_err();
        assert!(err.to_string().contains("cycle detected"), "{err}");
        let err = LabelHierarchy::parse("Root: [a]\na: [b]\nb: [a]\n").unwrap_err();
        assert!(matches!(err, Error::Cycle(_)), "{err}");
    }

    #[test]
    fn duplicates_and_empty_rejected() {
        assert!(matches!(
            LabelHierarchy::parse("a: [x, x]").unwrap_err(),
            Error::DuplicateLabel(_)
        ));
        assert!(matches!(
            LabelHierarchy::parse("a: [x]\nb: {a: [y]}").unwrap_err(),
            Error::DuplicateLabel(_) | Error::MultipleParents { .. }
        ));
        assert!(matches!(LabelHierarchy::parse("").unwrap_err(), Error::EmptyDocument));
        assert!(matches!(LabelHierarchy::parse("{}").unwrap_err(), Error::EmptyDocument));
    }

    #[test]
    fn flat_and_nested_forms_agree() {
        let flat = "Root: [A, B]\nA: [a1, a2]\nB: [b1]\n";
        let nested = "A:\n  - a1\n  - a2\nB:\n  - b1\n";
        let mapped = "A: {a1: , a2: }\nB: {b1: }\n";
        let h = LabelHierarchy::parse(flat).unwrap();
        assert_eq!(h, LabelHierarchy::parse(nested).unwrap());
        assert_eq!(h, LabelHierarchy::parse(mapped).unwrap());
        assert_eq!(h.labels(), &["A", "B", "a1", "a2", "b1"]);
    }

    #[test]
    fn closure_examples() {
        let h = ucm();
        let v = h.ancestor_closure(&["buildings"]).unwrap();
        let names: BTreeSet<&str> = v.active().map(|i| h.name(i)).collect();
        assert_eq!(names, BTreeSet::from(["buildings", "Urban Fabric", "Artificial Surfaces"]));

        let v = h.ancestor_closure::<&str>(&[]).unwrap();
        assert_eq!(v.count(), 0);

        let v = h.ancestor_closure(&["sea", "sand"]).unwrap();
        let names: BTreeSet<&str> = v.active().map(|i| h.name(i)).collect();
        assert_eq!(names, BTreeSet::from(["sea", "sand", "Marine Waters", "Water Bodies"]));
    }

    #[test]
    fn closure_errors() {
        let h = ucm();
        assert!(matches!(h.ancestor_closure(&["lava"]), Err(Error::UnknownLabel(_))));
        assert!(matches!(h.ancestor_closure(&["Forests"]), Err(Error::NotALeaf(_))));
    }

    #[test]
    fn edge_examples() {
        let h = ucm();
        assert_eq!(h.build_edges(false, false).len(), 26);
        let single = LabelHierarchy::parse("water:").unwrap();
        assert_eq!(single.build_edges(false, true).edges, vec![(0, 0)]);
        let chain = LabelHierarchy::parse("a: [b: [c]]").unwrap();
        let e: BTreeSet<_> = chain.build_edges(true, false).edges.into_iter().collect();
        assert_eq!(e, BTreeSet::from([(0, 1), (1, 2), (1, 0), (2, 1)]));
    }

    #[test]
    fn level_stats_examples() {
        let h = ucm();
        let one = vec![h.ancestor_closure(&["field"]).unwrap()];
        let s = h.level_stats(&one).unwrap();
        assert_eq!(s.cardinality, vec![1.0, 1.0, 1.0]);
        let two = vec![
            h.ancestor_closure(&["sea"]).unwrap(),
            h.ancestor_closure(&["sea", "sand"]).unwrap(),
        ];
        let s = h.level_stats(&two).unwrap();
        assert_eq!(s.leaf_cardinality, 1.5);
        assert_eq!(s.cardinality[2], 1.5);
        assert!((s.density[2] - 1.5 / 17.0).abs() < 1e-15);
        assert!(h.level_stats(&[]).is_err());
    }

    #[test]
    fn yaml_round_trip() {
        let h = ucm();
        let again = LabelHierarchy::parse(&h.to_yaml().unwrap()).unwrap();
        assert_eq!(h, again);
        let single = LabelHierarchy::parse("water:").unwrap();
        assert_eq!(single, LabelHierarchy::parse(&single.to_yaml().unwrap()).unwrap());
    }

    #[test]
    fn aggregation_matrix_rows() {
        let chain = LabelHierarchy::parse("a: [b: [c]]").unwrap();
        let a = chain.build_edges(true, false).mean_aggregation_matrix();
        assert_eq!(a, vec![0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
    }
}
