//! PACE `.gr` / `.td` text formats (1-based vertices).

use std::fmt::Write as _;

use thiserror::Error;

use super::decomposition::TreeDecomposition;
use super::tree::UnrootedTree;
use super::Graph;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("missing header line")]
    MissingHeader,
}

fn malformed(line: usize, msg: impl Into<String>) -> PaceError {
    PaceError::Malformed { line, msg: msg.into() }
}

fn numbers(line: usize, toks: &[&str]) -> Result<Vec<usize>, PaceError> {
    toks.iter()
        .map(|t| t.parse::<usize>().map_err(|_| malformed(line, format!("bad number {t:?}"))))
        .collect()
}

/// `p tw <n> <m>` followed by one `u v` per edge.
pub fn emit_gr(g: &Graph) -> String {
    let mut out = format!("p tw {} {}\n", g.num_vertices(), g.num_edges());
    for &(u, v) in g.edges() {
        writeln!(out, "{} {}", u + 1, v + 1).unwrap();
    }
    out
}

pub fn parse_gr(text: &str) -> Result<Graph, PaceError> {
    let mut header = None;
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() || toks[0] == "c" {
            continue;
        }
        if toks[0] == "p" {
            if toks.len() != 4 || toks[1] != "tw" {
                return Err(malformed(line, "expected `p tw n m`"));
            }
            let nums = numbers(line, &toks[2..])?;
            header = Some((nums[0], nums[1]));
            continue;
        }
        let (n, _) = header.ok_or(PaceError::MissingHeader)?;
        let nums = numbers(line, &toks)?;
        if nums.len() != 2 || nums.iter().any(|&x| x == 0 || x > n) || nums[0] == nums[1] {
            return Err(malformed(line, "bad edge"));
        }
        edges.push((nums[0] - 1, nums[1] - 1));
    }
    let (n, _) = header.ok_or(PaceError::MissingHeader)?;
    Ok(Graph::new(n, edges))
}

/// `s td <bags> <width+1> <n>`, then `b <k> <vertices>` lines and tree arcs.
pub fn emit_td(td: &TreeDecomposition, num_vertices: usize) -> String {
    let max_bag = td.bags.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = format!("s td {} {} {}\n", td.bags.len(), max_bag, num_vertices);
    for (k, bag) in td.bags.iter().enumerate() {
        write!(out, "b {}", k + 1).unwrap();
        for v in bag {
            write!(out, " {}", v + 1).unwrap();
        }
        out.push('\n');
    }
    for (a, b) in td.tree.arcs() {
        writeln!(out, "{} {}", a + 1, b + 1).unwrap();
    }
    out
}

/// Parses one complete `.td` document. Nodes of degree above three are split
/// so the result has the shape the rest of the pipeline expects.
pub fn parse_td(text: &str) -> Result<TreeDecomposition, PaceError> {
    let mut header: Option<(usize, usize)> = None;
    let mut bags: Vec<Option<Vec<usize>>> = Vec::new();
    let mut arcs = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() || toks[0] == "c" {
            continue;
        }
        if toks[0] == "s" {
            if toks.len() != 5 || toks[1] != "td" {
                return Err(malformed(line, "expected `s td bags width n`"));
            }
            let nums = numbers(line, &toks[2..])?;
            header = Some((nums[0], nums[2]));
            bags = vec![None; nums[0]];
            continue;
        }
        let (nb, nv) = header.ok_or(PaceError::MissingHeader)?;
        if toks[0] == "b" {
            let nums = numbers(line, &toks[1..])?;
            let Some((&id, verts)) = nums.split_first() else {
                return Err(malformed(line, "bag without id"));
            };
            if id == 0 || id > nb || bags[id - 1].is_some() {
                return Err(malformed(line, "bad bag id"));
            }
            if verts.iter().any(|&v| v == 0 || v > nv) {
                return Err(malformed(line, "vertex out of range"));
            }
            bags[id - 1] = Some(verts.iter().map(|v| v - 1).collect());
        } else {
            let nums = numbers(line, &toks)?;
            if nums.len() != 2 || nums.iter().any(|&x| x == 0 || x > nb) {
                return Err(malformed(line, "bad tree arc"));
            }
            arcs.push((nums[0] - 1, nums[1] - 1));
        }
    }
    let (nb, _) = header.ok_or(PaceError::MissingHeader)?;
    let bags: Vec<Vec<usize>> = bags
        .into_iter()
        .enumerate()
        .map(|(k, b)| b.ok_or_else(|| malformed(0, format!("bag {} missing", k + 1))))
        .collect::<Result<_, _>>()?;
    let tree = UnrootedTree::from_arcs(nb, &arcs).ok_or_else(|| malformed(0, "arcs do not form a tree"))?;
    Ok(TreeDecomposition::from_tree(tree, bags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::min_fill_tree_decomposition;

    #[test]
    fn gr_round_trip() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        let text = emit_gr(&g);
        assert!(text.starts_with("p tw 4 4\n1 2\n"));
        let back = parse_gr(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.num_vertices(), 4);
    }

    #[test]
    fn td_round_trip() {
        let g = Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]);
        let td = min_fill_tree_decomposition(&g, 3);
        let text = emit_td(&td, 5);
        let back = parse_td(&text).unwrap();
        assert_eq!(back.checked_width(&g), td.checked_width(&g));
        assert_eq!(back.bags, td.bags);
    }

    #[test]
    fn td_star_is_split() {
        let text = "c star\ns td 5 2 5\nb 1 1\nb 2 1 2\nb 3 1 3\nb 4 1 4\nb 5 1 5\n1 2\n1 3\n1 4\n1 5\n";
        let td = parse_td(text).unwrap();
        let g = Graph::new(5, vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(td.checked_width(&g), Ok(1));
        assert!((0..td.tree.num_nodes()).all(|n| td.tree.degree(n) <= 3));
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(parse_gr("1 2\n").unwrap_err(), PaceError::MissingHeader);
        assert!(parse_gr("p tw 2 1\n1 3\n").is_err());
        assert!(parse_td("s td 2 2 2\nb 1 1 2\n").is_err());
        assert!(parse_td("s td 2 2 2\nb 1 1 2\nb 2 2\n").is_err());
        assert!(parse_td("s td 1 2 2\nb 1 1 x\n").is_err());
    }
}
