//! Text update streams: `v`, `a <tail> <head> <cap> <cost>`, `d <edge>`, `q`.
//! `#` starts a comment.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{DynGraph, Edge, EdgeId, GraphError, Update, VertexId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Record {
    Vertex,
    Edge { tail: VertexId, head: VertexId, cap: f64, cost: f64 },
    Delete(EdgeId),
    Query,
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

pub fn parse_stream(text: &str) -> Result<Vec<Record>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| ParseError { line: i + 1, msg: msg.to_string() };
        let mut it = line.split_whitespace();
        let tag = it.next().expect("non-empty");
        let rest: Vec<&str> = it.collect();
        let rec = match (tag, rest.len()) {
            ("v", 0) => Record::Vertex,
            ("q", 0) => Record::Query,
            ("d", 1) => Record::Delete(rest[0].parse().map_err(|_| err("bad edge id"))?),
            ("a", 4) => Record::Edge {
                tail: rest[0].parse().map_err(|_| err("bad tail"))?,
                head: rest[1].parse().map_err(|_| err("bad head"))?,
                cap: rest[2].parse().map_err(|_| err("bad capacity"))?,
                cost: rest[3].parse().map_err(|_| err("bad cost"))?,
            },
            ("v" | "q" | "d" | "a", _) => return Err(err("wrong number of fields")),
            _ => return Err(err("unknown record")),
        };
        out.push(rec);
    }
    Ok(out)
}

pub fn write_stream(records: &[Record]) -> String {
    let mut s = String::new();
    for r in records {
        match r {
            Record::Vertex => s.push_str("v\n"),
            Record::Query => s.push_str("q\n"),
            Record::Delete(e) => writeln!(s, "d {e}").unwrap(),
            Record::Edge { tail, head, cap, cost } => writeln!(s, "a {tail} {head} {cap} {cost}").unwrap(),
        }
    }
    s
}

/// Graph after applying every record; queries are skipped.
pub fn replay_records(records: &[Record]) -> Result<DynGraph, GraphError> {
    let mut g = DynGraph::new();
    for r in records {
        match *r {
            Record::Vertex => {
                g.add_vertex();
            }
            Record::Edge { tail, head, cap, cost } => {
                let mut e = Edge::new(tail, head);
                e.capacity = cap;
                e.cost = cost;
                g.add_edge(e)?;
            }
            Record::Delete(e) => {
                g.apply_update(Update::DeleteEdge(e))?;
            }
            Record::Query => {}
        }
    }
    Ok(g)
}
