//! One graph per line:
//! `{"n": 3, "nodes": [0, 0, 1], "edges": [[0, 2, 1]]}`.
//!
//! Edges are listed once with `i < j` and a type of at least 1; absent
//! pairs are implicit.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Alphabet, CategoricalGraph};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    n: usize,
    nodes: Vec<usize>,
    edges: Vec<(usize, usize, usize)>,
}

fn parse_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.into(),
        message: message.into(),
    }
}

pub fn graph_to_line(g: &CategoricalGraph) -> String {
    let line = Line {
        n: g.n(),
        nodes: g.node_types().to_vec(),
        edges: g.edge_list(),
    };
    serde_json::to_string(&line).expect("plain data serializes")
}

fn parse_line(text: &str, lineno: usize, alphabet: Option<&Alphabet>) -> Result<CategoricalGraph> {
    let raw: Line = serde_json::from_str(text).map_err(|e| parse_err(lineno, "json", e.to_string()))?;
    if raw.n == 0 {
        return Err(parse_err(lineno, "n", "a graph needs at least one node"));
    }
    if raw.nodes.len() != raw.n {
        return Err(parse_err(
            lineno,
            "nodes",
            format!("{} node types listed for n = {}", raw.nodes.len(), raw.n),
        ));
    }
    if let Some(a) = alphabet {
        if let Some((i, &f)) = raw.nodes.iter().enumerate().find(|(_, &f)| f >= a.node_types) {
            return Err(parse_err(
                lineno,
                format!("nodes[{i}]"),
                format!("node type {f} outside 0..{}", a.node_types),
            ));
        }
    }
    let mut seen = BTreeSet::new();
    for (k, &(i, j, ty)) in raw.edges.iter().enumerate() {
        let field = format!("edges[{k}]");
        if i >= j {
            return Err(parse_err(lineno, field, format!("edge [{i}, {j}] must have i < j")));
        }
        if j >= raw.n {
            return Err(parse_err(lineno, field, format!("endpoint {j} outside 0..{}", raw.n)));
        }
        if ty == 0 {
            return Err(parse_err(lineno, field, "edge type must be at least 1"));
        }
        if let Some(a) = alphabet {
            if ty >= a.edge_types {
                return Err(parse_err(
                    lineno,
                    field,
                    format!("edge type {ty} outside 1..{}", a.edge_types),
                ));
            }
        }
        if !seen.insert((i, j)) {
            return Err(parse_err(lineno, field, format!("pair [{i}, {j}] listed twice")));
        }
    }
    CategoricalGraph::from_edges(raw.nodes, &raw.edges).map_err(|e| parse_err(lineno, "edges", e.to_string()))
}

/// Parses JSONL text; blank lines are skipped, line numbers start at 1.
pub fn parse_jsonl(text: &str, alphabet: Option<&Alphabet>) -> Result<Vec<CategoricalGraph>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| parse_line(l, k + 1, alphabet))
        .collect()
}

pub fn to_jsonl(graphs: &[CategoricalGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        out.push_str(&graph_to_line(g));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CategoricalGraph>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, None).map_err(|e| match e {
        Error::Parse { line, field, message } => Error::Parse {
            line,
            field,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn write_jsonl(path: &Path, graphs: &[CategoricalGraph]) -> Result<()> {
    std::fs::write(path, to_jsonl(graphs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn roundtrip_random_graphs() {
        let mut rng = stream(5, &[]);
        let graphs: Vec<CategoricalGraph> = (0..100)
            .map(|_| {
                let n = rng.random_range(1..9);
                let nodes = (0..n).map(|_| rng.random_range(0..3)).collect();
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        let ty = rng.random_range(0..4);
                        if ty > 0 {
                            edges.push((i, j, ty));
                        }
                    }
                }
                CategoricalGraph::from_edges(nodes, &edges).unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        write_jsonl(&path, &graphs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), graphs);
    }

    #[test]
    fn empty_text_is_empty_list() {
        assert!(parse_jsonl("", None).unwrap().is_empty());
        assert!(parse_jsonl("\n\n", None).unwrap().is_empty());
    }

    fn field_of(text: &str, alphabet: Option<&Alphabet>) -> (usize, String) {
        match parse_jsonl(text, alphabet).unwrap_err() {
            Error::Parse { line, field, .. } => (line, field),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_lines_name_line_and_field() {
        let good = r#"{"n": 3, "nodes": [0, 0, 0], "edges": []}"#;
        let reversed = r#"{"n": 3, "nodes": [0, 0, 0], "edges": [[2, 1, 1]]}"#;
        assert_eq!(field_of(&format!("{good}\n{reversed}"), None), (2, "edges[0]".into()));
        assert_eq!(field_of("{oops", None), (1, "json".into()));
        let dup = r#"{"n": 3, "nodes": [0, 0, 0], "edges": [[0, 1, 1], [0, 1, 2]]}"#;
        assert_eq!(field_of(dup, None), (1, "edges[1]".into()));
        let zero = r#"{"n": 2, "nodes": [0, 0], "edges": [[0, 1, 0]]}"#;
        assert_eq!(field_of(zero, None), (1, "edges[0]".into()));
        let count = r#"{"n": 2, "nodes": [0], "edges": []}"#;
        assert_eq!(field_of(count, None), (1, "nodes".into()));
        let a = Alphabet::new(1, 2).unwrap();
        let node_range = r#"{"n": 2, "nodes": [0, 1], "edges": []}"#;
        assert_eq!(field_of(node_range, Some(&a)), (1, "nodes[1]".into()));
        let edge_range = r#"{"n": 2, "nodes": [0, 0], "edges": [[0, 1, 2]]}"#;
        assert_eq!(field_of(edge_range, Some(&a)), (1, "edges[0]".into()));
    }
}
