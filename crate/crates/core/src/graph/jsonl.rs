use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{common_target_kind, EdgeFeatures, Graph, NodeFeatures, Target};
use crate::error::{Result, SeaError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureColumn {
    Tokens(Vec<usize>),
    Dense(Vec<Vec<f64>>),
}

/// One line of a JSONL dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_feat: FeatureColumn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_feat: Option<FeatureColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_graph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_node: Option<Vec<usize>>,
}

fn dense(rows: Vec<Vec<f64>>, what: &str) -> std::result::Result<Array2<f64>, String> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(format!("ragged {what} rows"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect())
        .map_err(|e| e.to_string())
}

impl GraphRecord {
    pub fn into_graph(self) -> Result<Graph> {
        let target = match (self.y_graph, self.y_node) {
            (Some(_), Some(_)) => {
                return Err(SeaError::InvalidGraph(
                    "record carries both y_graph and y_node".into(),
                ))
            }
            (Some(y), None) => Some(Target::Graph(y)),
            (None, Some(l)) => Some(Target::Node(l)),
            (None, None) => None,
        };
        let node_features = match self.node_feat {
            FeatureColumn::Tokens(t) => NodeFeatures::Tokens(t),
            FeatureColumn::Dense(rows) => {
                NodeFeatures::Dense(dense(rows, "node_feat").map_err(SeaError::InvalidGraph)?)
            }
        };
        let edge_features = match self.edge_feat {
            None => None,
            Some(FeatureColumn::Tokens(t)) => Some(EdgeFeatures::Tokens(t)),
            Some(FeatureColumn::Dense(rows)) => Some(EdgeFeatures::Dense(
                dense(rows, "edge_feat").map_err(SeaError::InvalidGraph)?,
            )),
        };
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::new(self.num_nodes, &edges, node_features, edge_features, target)
    }

    pub fn from_graph(graph: &Graph) -> Self {
        let node_feat = match graph.node_features() {
            NodeFeatures::Tokens(t) => FeatureColumn::Tokens(t.clone()),
            NodeFeatures::Dense(m) => {
                FeatureColumn::Dense(m.rows().into_iter().map(|r| r.to_vec()).collect())
            }
        };
        let edge_feat = graph.edge_features().map(|ef| match ef {
            EdgeFeatures::Tokens(t) => FeatureColumn::Tokens(t.clone()),
            EdgeFeatures::Dense(m) => {
                FeatureColumn::Dense(m.rows().into_iter().map(|r| r.to_vec()).collect())
            }
        });
        let (y_graph, y_node) = match graph.target() {
            None => (None, None),
            Some(Target::Graph(y)) => (Some(*y), None),
            Some(Target::Node(l)) => (None, Some(l.clone())),
        };
        GraphRecord {
            num_nodes: graph.num_nodes(),
            edges: graph.edges().iter().map(|&(u, v)| [u, v]).collect(),
            node_feat,
            edge_feat,
            y_graph,
            y_node,
        }
    }
}

/// Parses JSONL text, one graph per non-empty line.
pub fn parse_jsonl_dataset(reader: impl BufRead) -> Result<Vec<Graph>> {
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord = serde_json::from_str(&line).map_err(|e| SeaError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let graph = record.into_graph().map_err(|e| SeaError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        graphs.push(graph);
    }
    common_target_kind(&graphs)?;
    Ok(graphs)
}

pub fn load_jsonl_dataset(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    let file = std::fs::File::open(path)?;
    parse_jsonl_dataset(BufReader::new(file))
}

pub fn write_jsonl_dataset(mut writer: impl Write, graphs: &[Graph]) -> Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut writer, &GraphRecord::from_graph(g))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Graph>> {
        parse_jsonl_dataset(text.as_bytes())
    }

    #[test]
    fn smallest_record() {
        let gs = parse(r#"{"num_nodes":2,"edges":[[0,1]],"node_feat":[0,0],"y_graph":1.0}"#).unwrap();
        assert_eq!(gs.len(), 1);
        assert_eq!(gs[0].neighbors(0), &[1]);
        assert_eq!(gs[0].neighbors(1), &[0]);
        assert_eq!(gs[0].target(), Some(&Target::Graph(1.0)));
    }

    #[test]
    fn out_of_range_reports_line() {
        let text = "{\"num_nodes\":2,\"edges\":[[0,1]],\"node_feat\":[0,0]}\n\
                    {\"num_nodes\":2,\"edges\":[[0,5]],\"node_feat\":[0,0]}\n";
        let err = parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("node index out of range"), "{msg}");
    }

    #[test]
    fn keeps_file_order() {
        let text = (1..=3)
            .map(|n| format!("{{\"num_nodes\":{n},\"edges\":[],\"node_feat\":{:?}}}", vec![0; n]))
            .collect::<Vec<_>>()
            .join("\n");
        let gs = parse(&text).unwrap();
        assert_eq!(gs.iter().map(Graph::num_nodes).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn mixed_targets_rejected() {
        let text = "{\"num_nodes\":1,\"edges\":[],\"node_feat\":[0],\"y_graph\":0.5}\n\
                    {\"num_nodes\":1,\"edges\":[],\"node_feat\":[0],\"y_node\":[1]}\n";
        assert!(parse(text).unwrap_err().to_string().contains("mixed target"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse("\n{\"num_nodes\":").unwrap_err();
        assert!(matches!(err, SeaError::Parse { line: 2, .. }));
    }

    #[test]
    fn dense_features_and_edge_tokens() {
        let gs = parse(
            r#"{"num_nodes":3,"edges":[[1,2],[0,1]],"node_feat":[[1.5,0.0],[0.0,1.0],[2.0,2.0]],"edge_feat":[4,3],"y_node":[0,1,1]}"#,
        )
        .unwrap();
        assert_eq!(gs[0].node_features().dense_dim(), Some(2));
        assert_eq!(gs[0].edge_features(), Some(&EdgeFeatures::Tokens(vec![3, 4])));
    }

    #[test]
    fn write_then_read() {
        let gs = parse(r#"{"num_nodes":3,"edges":[[0,1],[1,2]],"node_feat":[1,2,3],"y_node":[0,0,1]}"#).unwrap();
        let mut buf = Vec::new();
        write_jsonl_dataset(&mut buf, &gs).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), gs);
    }
}
