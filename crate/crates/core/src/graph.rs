//! Sparse undirected simple graphs with indexed directed half-edges.
//!
//! Every directed half-edge `i -> j` has a stable integer id and an O(1)
//! reverse-edge lookup. The half-edge array, grouped by source vertex, is the
//! canonical index for belief-propagation messages.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph is empty")]
    Empty,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Input file format for [`load_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    /// Whitespace-separated vertex pairs, `#` comments.
    EdgeList,
    /// GML subset: `node` blocks with integer `id`, `edge` blocks with
    /// `source`/`target`.
    Gml,
}

/// What was silently dropped while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

/// Immutable sparse undirected simple graph.
///
/// Vertices are dense integers `0..n`. For vertex `i`, its outgoing half-edges
/// occupy ids `offsets[i]..offsets[i+1]`, in ascending order of destination.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    m: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    src_of: Vec<u32>,
    reverse: Vec<u32>,
    degrees: Vec<u32>,
    /// Undirected edge id for each half-edge; both orientations share an id.
    edge_index: Vec<u32>,
    /// Endpoints (i, j) with i < j for each undirected edge id.
    edge_endpoints: Vec<(u32, u32)>,
    /// External label of each vertex, for reporting.
    labels: Vec<String>,
}

impl Graph {
    /// Builds a graph from undirected edges over vertices `0..n`.
    /// Self-loops and duplicate edges are dropped and counted.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<(Graph, LoadReport), GraphError> {
        let labels = (0..n).map(|v| v.to_string()).collect();
        Self::from_labeled_edges_inner(n, edges, labels)
    }

    fn from_labeled_edges_inner(
        n: usize,
        edges: &[(usize, usize)],
        labels: Vec<String>,
    ) -> Result<(Graph, LoadReport), GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut report = LoadReport::default();
        let mut canonical: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                report.self_loops_dropped += 1;
                continue;
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            canonical.push((lo as u32, hi as u32));
        }
        canonical.sort_unstable();
        let before = canonical.len();
        canonical.dedup();
        report.duplicates_dropped = before - canonical.len();

        let m = canonical.len();
        let mut degrees = vec![0u32; n];
        for &(a, b) in &canonical {
            degrees[a as usize] += 1;
            degrees[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degrees[v] as usize;
        }
        let mut neighbors = vec![0u32; 2 * m];
        let mut src_of = vec![0u32; 2 * m];
        let mut cursor = offsets.clone();
        for &(a, b) in &canonical {
            neighbors[cursor[a as usize]] = b;
            cursor[a as usize] += 1;
            neighbors[cursor[b as usize]] = a;
            cursor[b as usize] += 1;
        }
        for v in 0..n {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
            for e in offsets[v]..offsets[v + 1] {
                src_of[e] = v as u32;
            }
        }
        let mut reverse = vec![0u32; 2 * m];
        for e in 0..2 * m {
            let i = src_of[e] as usize;
            let j = neighbors[e] as usize;
            let row = &neighbors[offsets[j]..offsets[j + 1]];
            let pos = row.binary_search(&(i as u32)).expect("symmetric adjacency");
            reverse[e] = (offsets[j] + pos) as u32;
        }
        // Undirected edge ids in (min, max) lexicographic order.
        let mut edge_index = vec![u32::MAX; 2 * m];
        let mut edge_endpoints = Vec::with_capacity(m);
        for e in 0..2 * m {
            let i = src_of[e];
            let j = neighbors[e];
            if i < j {
                let id = edge_endpoints.len() as u32;
                edge_index[e] = id;
                edge_index[reverse[e] as usize] = id;
                edge_endpoints.push((i, j));
            }
        }
        Ok((
            Graph {
                n,
                m,
                offsets,
                neighbors,
                src_of,
                reverse,
                degrees,
                edge_index,
                edge_endpoints,
                labels,
            },
            report,
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges L.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Average degree c = 2L/N.
    pub fn mean_degree(&self) -> f64 {
        2.0 * self.m as f64 / self.n as f64
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v] as usize
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Half-edge ids whose source is `v`.
    pub fn out_edges(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn num_half_edges(&self) -> usize {
        2 * self.m
    }

    pub fn src(&self, e: usize) -> usize {
        self.src_of[e] as usize
    }

    pub fn dst(&self, e: usize) -> usize {
        self.neighbors[e] as usize
    }

    /// Id of the opposite half-edge.
    pub fn reverse(&self, e: usize) -> usize {
        self.reverse[e] as usize
    }

    /// Undirected edge id shared by a half-edge and its reverse.
    pub fn edge_id(&self, e: usize) -> usize {
        self.edge_index[e] as usize
    }

    /// Endpoints (i, j) with i < j of undirected edge `id`.
    pub fn edge_endpoints(&self, id: usize) -> (usize, usize) {
        let (a, b) = self.edge_endpoints[id];
        (a as usize, b as usize)
    }

    /// Half-edge id for `i -> j`, if the edge exists.
    pub fn half_edge(&self, i: usize, j: usize) -> Option<usize> {
        let row = self.neighbors(i);
        row.binary_search(&(j as u32))
            .ok()
            .map(|pos| self.offsets[i] + pos)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.half_edge(i, j).is_some()
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    /// All undirected edges as (i, j) pairs with i < j, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edge_endpoints
            .iter()
            .map(|&(a, b)| (a as usize, b as usize))
    }

    /// Induced subgraph on the largest connected component, vertices relabeled
    /// `0..n'`. Ties between equal-sized components go to the one containing
    /// the lowest original vertex id. Returns the old -> new vertex map.
    pub fn largest_component(&self) -> (Graph, Vec<Option<u32>>) {
        let mut comp = vec![u32::MAX; self.n];
        let mut sizes: Vec<usize> = Vec::new();
        let mut stack = Vec::new();
        for start in 0..self.n {
            if comp[start] != u32::MAX {
                continue;
            }
            let id = sizes.len() as u32;
            let mut size = 0usize;
            stack.push(start);
            comp[start] = id;
            while let Some(v) = stack.pop() {
                size += 1;
                for &w in self.neighbors(v) {
                    if comp[w as usize] == u32::MAX {
                        comp[w as usize] = id;
                        stack.push(w as usize);
                    }
                }
            }
            sizes.push(size);
        }
        // Components are discovered in order of their lowest vertex id, so the
        // first maximum realizes the tie-break.
        let best = sizes
            .iter()
            .enumerate()
            .max_by_key(|&(idx, &s)| (s, std::cmp::Reverse(idx)))
            .map(|(idx, _)| idx as u32)
            .expect("nonempty graph");
        let mut old_to_new = vec![None; self.n];
        let mut kept = Vec::new();
        for v in 0..self.n {
            if comp[v] == best {
                old_to_new[v] = Some(kept.len() as u32);
                kept.push(v);
            }
        }
        let mut edges = Vec::new();
        for (i, j) in self.edges() {
            if let (Some(a), Some(b)) = (old_to_new[i], old_to_new[j]) {
                edges.push((a as usize, b as usize));
            }
        }
        let labels = kept.iter().map(|&v| self.labels[v].clone()).collect();
        let (g, _) = Graph::from_labeled_edges_inner(kept.len(), &edges, labels)
            .expect("component is nonempty");
        (g, old_to_new)
    }

    /// Canonical edge-list text, one `label label` line per edge, sorted by
    /// (min, max) endpoint.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            writeln!(out, "{} {}", self.labels[i], self.labels[j]).unwrap();
        }
        out
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<(), GraphError> {
        fs::write(path, self.to_edge_list())?;
        Ok(())
    }

    /// Checks the structural invariants; used by tests.
    pub fn validate(&self) {
        assert_eq!(self.degrees.iter().map(|&d| d as usize).sum::<usize>(), 2 * self.m);
        for e in 0..self.num_half_edges() {
            let r = self.reverse(e);
            assert_eq!(self.reverse(r), e);
            assert_eq!(self.src(r), self.dst(e));
            assert_eq!(self.dst(r), self.src(e));
            assert_eq!(self.edge_id(e), self.edge_id(r));
        }
        for v in 0..self.n {
            assert_eq!(self.neighbors(v).len(), self.degree(v));
        }
    }
}

/// Loads a graph from a file, mapping external labels to dense vertex ids.
pub fn load_graph(path: &Path, format: GraphFormat) -> Result<(Graph, LoadReport), GraphError> {
    let text = fs::read_to_string(path)?;
    match format {
        GraphFormat::EdgeList => parse_edge_list(&text),
        GraphFormat::Gml => parse_gml(&text),
    }
}

/// Picks the format from the file extension (`.gml` vs everything else).
pub fn format_for_path(path: &Path) -> GraphFormat {
    match path.extension().and_then(|s| s.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("gml") => GraphFormat::Gml,
        _ => GraphFormat::EdgeList,
    }
}

/// Parses whitespace-separated vertex pairs; `#` starts a comment.
pub fn parse_edge_list(text: &str) -> Result<(Graph, LoadReport), GraphError> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut intern = |tok: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&id) = ids.get(tok) {
            id
        } else {
            let id = labels.len();
            ids.insert(tok.to_string(), id);
            labels.push(tok.to_string());
            id
        }
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let a = toks.next().unwrap();
        let b = toks.next().ok_or_else(|| GraphError::Parse {
            line: lineno + 1,
            msg: format!("expected two vertex labels, got `{line}`"),
        })?;
        if toks.next().is_some() {
            return Err(GraphError::Parse {
                line: lineno + 1,
                msg: format!("expected two vertex labels, got `{line}`"),
            });
        }
        let ia = intern(a, &mut labels);
        let ib = intern(b, &mut labels);
        edges.push((ia, ib));
    }
    if labels.is_empty() {
        return Err(GraphError::Empty);
    }
    Graph::from_labeled_edges_inner(labels.len(), &edges, labels)
}

/// Minimal GML reader: `node [ id I ]` and `edge [ source S target T ]`
/// blocks with integer ids. Everything else is ignored.
pub fn parse_gml(text: &str) -> Result<(Graph, LoadReport), GraphError> {
    #[derive(PartialEq)]
    enum Block {
        None,
        Node,
        Edge,
    }
    let mut block = Block::None;
    let mut depth = 0usize;
    let mut node_ids: Vec<i64> = Vec::new();
    let mut raw_edges: Vec<(i64, i64)> = Vec::new();
    let mut cur_id: Option<i64> = None;
    let mut cur_source: Option<i64> = None;
    let mut cur_target: Option<i64> = None;

    let mut toks: Vec<(usize, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for t in line.split_whitespace() {
            toks.push((lineno + 1, t.to_string()));
        }
    }
    let mut it = toks.iter().peekable();
    while let Some((line, tok)) = it.next() {
        match tok.as_str() {
            "node" | "edge" if depth == 1 || depth == 0 => {
                let is_node = tok == "node";
                match it.next() {
                    Some((_, t)) if t == "[" => {}
                    _ => {
                        return Err(GraphError::Parse {
                            line: *line,
                            msg: format!("expected `[` after `{tok}`"),
                        })
                    }
                }
                depth += 1;
                block = if is_node { Block::Node } else { Block::Edge };
                cur_id = None;
                cur_source = None;
                cur_target = None;
            }
            "[" => depth += 1,
            "]" => {
                if depth == 0 {
                    return Err(GraphError::Parse {
                        line: *line,
                        msg: "unbalanced `]`".into(),
                    });
                }
                depth -= 1;
                match block {
                    Block::Node => {
                        let id = cur_id.ok_or(GraphError::Parse {
                            line: *line,
                            msg: "node block without `id`".into(),
                        })?;
                        node_ids.push(id);
                        block = Block::None;
                    }
                    Block::Edge => {
                        let (s, t) = match (cur_source, cur_target) {
                            (Some(s), Some(t)) => (s, t),
                            _ => {
                                return Err(GraphError::Parse {
                                    line: *line,
                                    msg: "edge block without `source`/`target`".into(),
                                })
                            }
                        };
                        raw_edges.push((s, t));
                        block = Block::None;
                    }
                    Block::None => {}
                }
            }
            key @ ("id" | "source" | "target") if block != Block::None => {
                let (vline, val) = it.next().ok_or(GraphError::Parse {
                    line: *line,
                    msg: format!("missing value for `{key}`"),
                })?;
                let v: i64 = val.parse().map_err(|_| GraphError::Parse {
                    line: *vline,
                    msg: format!("`{key}` value `{val}` is not an integer"),
                })?;
                match key {
                    "id" => cur_id = Some(v),
                    "source" => cur_source = Some(v),
                    _ => cur_target = Some(v),
                }
            }
            _ => {}
        }
    }
    let mut ids: HashMap<i64, usize> = HashMap::new();
    let mut labels = Vec::new();
    for id in &node_ids {
        if !ids.contains_key(id) {
            ids.insert(*id, labels.len());
            labels.push(id.to_string());
        }
    }
    let mut edges = Vec::new();
    for (s, t) in raw_edges {
        let a = *ids.get(&s).ok_or(GraphError::Parse {
            line: 0,
            msg: format!("edge references unknown node id {s}"),
        })?;
        let b = *ids.get(&t).ok_or(GraphError::Parse {
            line: 0,
            msg: format!("edge references unknown node id {t}"),
        })?;
        edges.push((a, b));
    }
    if labels.is_empty() {
        return Err(GraphError::Empty);
    }
    Graph::from_labeled_edges_inner(labels.len(), &edges, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_from_edge_list() {
        let (g, rep) = parse_edge_list("0 1\n1 2").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.m(), 2);
        assert_eq!(g.degrees(), &[1, 2, 1]);
        assert_eq!(rep, LoadReport::default());
        g.validate();
    }

    #[test]
    fn self_loops_and_duplicates_dropped() {
        let (g, rep) = parse_edge_list("0 1\n3 3\n1 0\n1 2\n2 3\n").unwrap();
        assert_eq!(g.m(), 3);
        assert_eq!(rep.self_loops_dropped, 1);
        assert_eq!(rep.duplicates_dropped, 1);
    }

    #[test]
    fn comments_and_blank_lines() {
        let (g, _) = parse_edge_list("# header\n0 1 # trailing\n\n1 2\n").unwrap();
        assert_eq!(g.m(), 2);
    }

    #[test]
    fn bad_line_reports_number() {
        let err = parse_edge_list("0 1\nnope\n").unwrap_err();
        match err {
            GraphError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_edge_list("# nothing\n"), Err(GraphError::Empty)));
    }

    #[test]
    fn gml_four_clique() {
        let mut s = String::from("graph [\n");
        for i in 0..4 {
            s += &format!("  node [ id {i} ]\n");
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                s += &format!("  edge [ source {i} target {j} ]\n");
            }
        }
        s += "]\n";
        let (g, _) = parse_gml(&s).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.m(), 6);
        assert!(g.degrees().iter().all(|&d| d == 3));
        g.validate();
    }

    #[test]
    fn reverse_edge_invariants() {
        let (g, _) = parse_edge_list("0 1\n0 2\n1 2\n2 3\n").unwrap();
        g.validate();
        for v in 0..g.n() {
            for e in g.out_edges(v) {
                assert_eq!(g.src(e), v);
                assert!(g.neighbors(v).contains(&(g.dst(e) as u32)));
            }
        }
    }

    #[test]
    fn largest_component_tie_goes_to_lowest_id() {
        // Two triangles {0,1,2} and {4,5,6}, isolated-ish vertex 3 on no edge
        // cannot exist in an edge list, so attach it to the second triangle's
        // mirror: use a lone edge instead.
        let (g, _) = parse_edge_list("0 1\n1 2\n2 0\n4 5\n5 6\n6 4\n").unwrap();
        let (lc, map) = g.largest_component();
        assert_eq!(lc.n(), 3);
        assert_eq!(lc.m(), 3);
        // Vertices 0,1,2 survive.
        assert!(map[0].is_some() && map[1].is_some() && map[2].is_some());
        assert!(map[3].is_none());
    }

    #[test]
    fn largest_component_connected_is_identity() {
        let (g, _) = parse_edge_list("0 1\n1 2\n").unwrap();
        let (lc, map) = g.largest_component();
        assert_eq!(lc.n(), 3);
        for v in 0..3 {
            assert_eq!(map[v], Some(v as u32));
        }
    }

    #[test]
    fn largest_component_path_beats_lone_edge() {
        let (g, _) = parse_edge_list("0 1\n1 2\n2 3\n3 4\n7 8\n").unwrap();
        let (lc, _) = g.largest_component();
        assert_eq!(lc.n(), 5);
        assert_eq!(lc.m(), 4);
    }

    #[test]
    fn edge_list_round_trip() {
        let (g, _) = parse_edge_list("b a\nc b\nd a\n").unwrap();
        let text = g.to_edge_list();
        let (g2, _) = parse_edge_list(&text).unwrap();
        assert_eq!(g.n(), g2.n());
        assert_eq!(g.m(), g2.m());
        let mut d1: Vec<u32> = g.degrees().to_vec();
        let mut d2: Vec<u32> = g2.degrees().to_vec();
        d1.sort_unstable();
        d2.sort_unstable();
        assert_eq!(d1, d2);
    }
}
