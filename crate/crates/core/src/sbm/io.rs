//! Graph file formats.
//!
//! * Edge list: UTF-8, two whitespace-separated integer ids per line, `#`
//!   starts a comment. Direction is ignored, duplicates and self-loops are
//!   dropped. A line with a single id declares an isolated node. Distinct
//!   ids are sorted and mapped to `0..n`.
//! * Label file: CSV `node,label`, optional header. Distinct labels are
//!   sorted (numerically when they all parse as integers) and mapped to `0..k`.
//! * GML: nodes with `id` and optional `value`, edges with `source`/`target`.
//!   When every node has a `value`, it becomes the ground truth.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn graph_from_id_pairs(pairs: &[(i64, i64)], extra_ids: &[i64]) -> (Graph, BTreeMap<i64, usize>) {
    let mut index: BTreeMap<i64, usize> = BTreeMap::new();
    for &(a, b) in pairs {
        index.insert(a, 0);
        index.insert(b, 0);
    }
    for &id in extra_ids {
        index.insert(id, 0);
    }
    for (i, slot) in index.values_mut().enumerate() {
        *slot = i;
    }
    let ids: Vec<i64> = index.keys().copied().collect();
    let graph =
        Graph::from_edges(ids.len(), pairs.iter().map(|(a, b)| (index[a], index[b]))).with_ids(ids);
    (graph, index)
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    let mut lone = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut next_id = || -> Result<i64> {
            let tok = fields
                .next()
                .ok_or_else(|| parse_err(path, lineno + 1, "expected two node ids"))?;
            tok.parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad node id {tok:?}")))
        };
        let a = next_id()?;
        if line.split_whitespace().count() == 1 {
            lone.push(a);
            continue;
        }
        let b = next_id()?;
        pairs.push((a, b));
    }
    Ok(graph_from_id_pairs(&pairs, &lone).0)
}

pub fn write_edge_list(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# {} nodes, {} edges", graph.n(), graph.num_edges())?;
    for (u, v) in graph.edges() {
        writeln!(out, "{} {}", graph.ids()[u], graph.ids()[v])?;
    }
    for v in (0..graph.n()).filter(|&v| graph.degree(v) == 0) {
        writeln!(out, "{}", graph.ids()[v])?;
    }
    Ok(())
}

/// Writes `node,label` with 1-based labels.
pub fn write_labels(graph: &Graph, labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["node", "label"])?;
    for (v, &l) in labels.iter().enumerate() {
        wtr.write_record([graph.ids()[v].to_string(), (l + 1).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn label_index(values: impl IntoIterator<Item = String>) -> BTreeMap<String, usize> {
    let distinct: Vec<String> = {
        let mut v: Vec<String> = values.into_iter().collect();
        v.sort();
        v.dedup();
        v
    };
    let mut ordered = distinct;
    if ordered.iter().all(|s| s.parse::<i64>().is_ok()) {
        ordered.sort_by_key(|s| s.parse::<i64>().unwrap());
    }
    ordered
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect()
}

/// Attaches ground truth from a `node,label` CSV file.
pub fn attach_labels(graph: Graph, path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let by_id: HashMap<i64, usize> = graph
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut entries: Vec<(usize, String)> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(parse_err(path, row + 1, "expected node,label"));
        }
        let node = &record[0];
        let Ok(id) = node.parse::<i64>() else {
            if row == 0 {
                continue; // header
            }
            return Err(parse_err(path, row + 1, format!("bad node id {node:?}")));
        };
        let v = *by_id
            .get(&id)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        entries.push((v, record[1].to_string()));
    }
    let index = label_index(entries.iter().map(|(_, l)| l.clone()));
    let mut truth = vec![usize::MAX; graph.n()];
    for (v, l) in entries {
        truth[v] = index[&l];
    }
    let missing = truth.iter().filter(|&&l| l == usize::MAX).count();
    if missing > 0 {
        return Err(Error::MissingLabels(missing));
    }
    let k = index.len();
    graph.with_truth(truth, k)
}

#[derive(Debug, PartialEq)]
enum Token {
    Open,
    Close,
    Word(String),
}

fn tokenize_gml(text: &str, path: &Path) -> Result<Vec<(Token, usize)>> {
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '[' => {
                tokens.push((Token::Open, line));
                chars.next();
            }
            ']' => {
                tokens.push((Token::Close, line));
                chars.next();
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '"' => {
                let start = line;
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\n') => {
                            line += 1;
                            s.push('\n');
                        }
                        Some(c) => s.push(c),
                        None => return Err(parse_err(path, start, "unterminated string")),
                    }
                }
                tokens.push((Token::Word(s), start));
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '[' || c == ']' {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                tokens.push((Token::Word(s), line));
            }
        }
    }
    Ok(tokens)
}

/// Reads the `key value` / `key [ ... ]` pairs of one bracketed block.
/// Nested blocks are skipped.
fn read_block(
    tokens: &[(Token, usize)],
    pos: &mut usize,
    path: &Path,
) -> Result<HashMap<String, String>> {
    let mut fields = HashMap::new();
    loop {
        let Some((tok, line)) = tokens.get(*pos) else {
            return Err(parse_err(
                path,
                tokens.last().map_or(1, |t| t.1),
                "unclosed block",
            ));
        };
        *pos += 1;
        match tok {
            Token::Close => return Ok(fields),
            Token::Open => return Err(parse_err(path, *line, "unexpected '['")),
            Token::Word(key) => match tokens.get(*pos) {
                Some((Token::Open, _)) => {
                    *pos += 1;
                    read_block(tokens, pos, path)?;
                }
                Some((Token::Word(val), _)) => {
                    fields.insert(key.clone(), val.clone());
                    *pos += 1;
                }
                _ => return Err(parse_err(path, *line, format!("key {key:?} has no value"))),
            },
        }
    }
}

pub fn load_gml(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let tokens = tokenize_gml(&text, path)?;
    let mut pos = 0;
    // find `graph [`
    while pos < tokens.len() {
        if matches!(&tokens[pos].0, Token::Word(w) if w == "graph")
            && matches!(tokens.get(pos + 1), Some((Token::Open, _)))
        {
            break;
        }
        pos += 1;
    }
    if pos >= tokens.len() {
        return Err(parse_err(path, 1, "no `graph [` block"));
    }
    pos += 2;
    let mut node_ids: Vec<i64> = Vec::new();
    let mut node_values: Vec<Option<String>> = Vec::new();
    let mut pairs = Vec::new();
    loop {
        let Some((tok, line)) = tokens.get(pos) else {
            return Err(parse_err(
                path,
                tokens.last().map_or(1, |t| t.1),
                "unclosed graph block",
            ));
        };
        let line = *line;
        pos += 1;
        match tok {
            Token::Close => break,
            Token::Open => return Err(parse_err(path, line, "unexpected '['")),
            Token::Word(key) => {
                if matches!(tokens.get(pos), Some((Token::Open, _))) {
                    pos += 1;
                    let fields = read_block(&tokens, &mut pos, path)?;
                    let get_id = |name: &str| -> Result<i64> {
                        let raw = fields.get(name).ok_or_else(|| {
                            parse_err(path, line, format!("{key} without {name}"))
                        })?;
                        raw.parse()
                            .map_err(|_| parse_err(path, line, format!("bad {name} {raw:?}")))
                    };
                    match key.as_str() {
                        "node" => {
                            node_ids.push(get_id("id")?);
                            node_values.push(fields.get("value").cloned());
                        }
                        "edge" => pairs.push((get_id("source")?, get_id("target")?)),
                        _ => {}
                    }
                } else {
                    pos += 1; // scalar attribute of the graph
                }
            }
        }
    }
    let (graph, index) = graph_from_id_pairs(&pairs, &node_ids);
    if !node_values.is_empty()
        && node_values.iter().all(Option::is_some)
        && node_ids.len() == graph.n()
    {
        let labels = label_index(node_values.iter().flatten().cloned());
        let mut truth = vec![0usize; graph.n()];
        for (id, val) in node_ids.iter().zip(&node_values) {
            truth[index[id]] = labels[val.as_ref().unwrap()];
        }
        let k = labels.len();
        return graph.with_truth(truth, k);
    }
    Ok(graph)
}

/// Induced subgraph on the largest connected component (ties: the
/// component holding the smallest node), relabeled `0..n'`.
pub fn restrict_to_largest_component(graph: &Graph) -> Graph {
    let comps = graph.components();
    let best = comps
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
        .map(|(i, _)| i);
    match best {
        Some(i) => graph.induced(&comps[i]),
        None => graph.clone(),
    }
}
