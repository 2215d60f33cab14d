//! Immutable undirected graphs with CSR adjacency.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Undirected graph without self-loops or multi-edges. Node and edge
/// attributes are optional float matrices. Freely shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    degrees: Vec<usize>,
    node_attrs: Option<Vec<Vec<f64>>>,
    edge_attrs: Option<Vec<Vec<f64>>>,
}

impl Graph {
    /// Build a canonical graph: edges are normalized to `u < v`, sorted, and
    /// deduplicated. Self-loops and out-of-range endpoints are rejected.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u == v || u >= n || v >= n {
                return Err(Error::InvalidEdge { u, v, n });
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();

        let mut degrees = vec![0usize; n];
        for &(u, v) in &canon {
            degrees[u] += 1;
            degrees[v] += 1;
        }
        let mut row_offsets = vec![0usize; n + 1];
        for i in 0..n {
            row_offsets[i + 1] = row_offsets[i] + degrees[i];
        }
        let mut cursor = row_offsets.clone();
        let mut col_indices = vec![0usize; 2 * canon.len()];
        for &(u, v) in &canon {
            col_indices[cursor[u]] = v;
            cursor[u] += 1;
            col_indices[cursor[v]] = u;
            cursor[v] += 1;
        }
        for i in 0..n {
            col_indices[row_offsets[i]..row_offsets[i + 1]].sort_unstable();
        }
        Ok(Graph {
            n,
            edges: canon,
            row_offsets,
            col_indices,
            degrees,
            node_attrs: None,
            edge_attrs: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Sorted canonical edge list with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Neighbors of `v` in ascending order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn node_attrs(&self) -> Option<&Vec<Vec<f64>>> {
        self.node_attrs.as_ref()
    }

    /// Per-edge attribute vectors, aligned with [`Graph::edges`].
    pub fn edge_attrs(&self) -> Option<&Vec<Vec<f64>>> {
        self.edge_attrs.as_ref()
    }

    pub fn with_node_attrs(mut self, attrs: Vec<Vec<f64>>) -> Result<Graph> {
        if attrs.len() != self.n {
            return Err(Error::DimMismatch {
                op: "with_node_attrs",
                expected: self.n,
                got: attrs.len(),
            });
        }
        self.node_attrs = Some(attrs);
        Ok(self)
    }

    pub fn with_edge_attrs(mut self, attrs: Vec<Vec<f64>>) -> Result<Graph> {
        if attrs.len() != self.edges.len() {
            return Err(Error::DimMismatch {
                op: "with_edge_attrs",
                expected: self.edges.len(),
                got: attrs.len(),
            });
        }
        self.edge_attrs = Some(attrs);
        Ok(self)
    }

    /// Relabel nodes: node `v` becomes `perm[v]`. Attributes move with their
    /// nodes and edges.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::InvalidPermutation {
                perm: perm.to_vec(),
                n: self.n,
            });
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || seen[p] {
                return Err(Error::InvalidPermutation {
                    perm: perm.to_vec(),
                    n: self.n,
                });
            }
            seen[p] = true;
        }
        let mapped: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u], perm[v]))
            .collect();
        let mut g = Graph::new(self.n, &mapped)?;
        if let Some(attrs) = &self.node_attrs {
            let mut moved = vec![Vec::new(); self.n];
            for (v, row) in attrs.iter().enumerate() {
                moved[perm[v]] = row.clone();
            }
            g = g.with_node_attrs(moved)?;
        }
        if let Some(attrs) = &self.edge_attrs {
            // Edge attrs follow their (relabeled, re-sorted) edges.
            let mut tagged: Vec<((usize, usize), Vec<f64>)> = self
                .edges
                .iter()
                .zip(attrs)
                .map(|(&(u, v), a)| {
                    let (x, y) = (perm[u], perm[v]);
                    ((x.min(y), x.max(y)), a.clone())
                })
                .collect();
            tagged.sort_by_key(|(e, _)| *e);
            g = g.with_edge_attrs(tagged.into_iter().map(|(_, a)| a).collect())?;
        }
        Ok(g)
    }

    /// Inverse of a permutation.
    pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }

    /// Induced subgraph on the first `max_nodes` nodes reached by BFS from
    /// `root`, ties within a frontier broken by ascending node id. Returns the
    /// subgraph and the old-to-new id mapping; the root maps to new id 0.
    pub fn bfs_subgraph(&self, root: usize, max_nodes: usize) -> Result<(Graph, Vec<(usize, usize)>)> {
        if root >= self.n {
            return Err(Error::InvalidEdge {
                u: root,
                v: root,
                n: self.n,
            });
        }
        assert!(max_nodes >= 1, "bfs_subgraph needs max_nodes >= 1");
        let mut order = Vec::with_capacity(max_nodes);
        let mut visited = vec![false; self.n];
        let mut queue = VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            if order.len() == max_nodes {
                break;
            }
            // neighbors() is ascending, which provides the id tie-break.
            for &u in self.neighbors(v) {
                if !visited[u] {
                    visited[u] = true;
                    queue.push_back(u);
                }
            }
        }
        let mut new_id = vec![usize::MAX; self.n];
        for (new, &old) in order.iter().enumerate() {
            new_id[old] = new;
        }
        let mut sub_edges = Vec::new();
        for &(u, v) in &self.edges {
            if new_id[u] != usize::MAX && new_id[v] != usize::MAX {
                sub_edges.push((new_id[u], new_id[v]));
            }
        }
        let mut g = Graph::new(order.len(), &sub_edges)?;
        if let Some(attrs) = &self.node_attrs {
            g = g.with_node_attrs(order.iter().map(|&old| attrs[old].clone()).collect())?;
        }
        let mapping: Vec<(usize, usize)> = order.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        Ok((g, mapping))
    }

    /// Parse the plain-text edge-list format: first line `n m`, then `m`
    /// lines `u v`.
    pub fn read_edge_list<R: std::io::Read>(reader: R) -> Result<Graph> {
        let reader = BufReader::new(reader);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::GraphFormat("empty file".into()))??;
        let mut it = header.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::GraphFormat(format!("bad header {header:?}")))?;
        let m: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::GraphFormat(format!("bad header {header:?}")))?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::GraphFormat("truncated edge list".into()))??;
            let mut it = line.split_whitespace();
            let u: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::GraphFormat(format!("bad edge line {line:?}")))?;
            let v: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::GraphFormat(format!("bad edge line {line:?}")))?;
            edges.push((u, v));
        }
        Graph::new(n, &edges)
    }

    pub fn load_edge_list(path: &Path) -> Result<Graph> {
        Graph::read_edge_list(std::fs::File::open(path)?)
    }

    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.n, self.edges.len())?;
        for &(u, v) in &self.edges {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    /// Load node attributes from CSV rows `id,f1,f2,...` (no header).
    pub fn load_node_attrs_csv(self, path: &Path) -> Result<Graph> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut attrs: Vec<Option<Vec<f64>>> = vec![None; self.n];
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id: usize = fields
                .next()
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| Error::GraphFormat(format!("bad attr row {line:?}")))?;
            if id >= self.n {
                return Err(Error::GraphFormat(format!("attr row for unknown node {id}")));
            }
            let row: std::result::Result<Vec<f64>, _> =
                fields.map(|f| f.trim().parse::<f64>()).collect();
            attrs[id] = Some(row.map_err(|e| Error::GraphFormat(format!("bad attr row {line:?}: {e}")))?);
        }
        let full: Vec<Vec<f64>> = attrs
            .into_iter()
            .enumerate()
            .map(|(i, a)| a.ok_or_else(|| Error::GraphFormat(format!("missing attr row for node {i}"))))
            .collect::<Result<_>>()?;
        self.with_node_attrs(full)
    }
}

/// Cycle graph on `n >= 3` nodes.
pub fn cycle(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::new(n, &edges).expect("cycle is always valid")
}

/// Path graph on `n` nodes.
pub fn path(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::new(n, &edges).expect("path is always valid")
}

/// Disjoint union, relabeling the second graph's nodes after the first's.
pub fn disjoint_union(a: &Graph, b: &Graph) -> Graph {
    let mut edges = a.edges().to_vec();
    edges.extend(b.edges().iter().map(|&(u, v)| (u + a.n(), v + a.n())));
    Graph::new(a.n() + b.n(), &edges).expect("union of valid graphs is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_has_uniform_degree_two() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(g.degrees(), &[2, 2, 2]);
        assert_eq!(g.m(), 3);
    }

    #[test]
    fn duplicate_and_reversed_edges_collapse() {
        let g = Graph::new(2, &[(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn isolated_node_graph() {
        let g = Graph::new(1, &[]).unwrap();
        assert_eq!(g.degrees(), &[0]);
    }

    #[test]
    fn self_loop_and_out_of_range_are_named_in_errors() {
        let err = Graph::new(3, &[(1, 1)]).unwrap_err();
        assert!(err.to_string().contains("(1, 1)"));
        let err = Graph::new(3, &[(0, 7)]).unwrap_err();
        assert!(err.to_string().contains("(0, 7)"));
    }

    #[test]
    fn identity_permutation_is_identity() {
        let g = cycle(5);
        let p: Vec<usize> = (0..5).collect();
        assert_eq!(g.permuted(&p).unwrap(), g);
    }

    #[test]
    fn triangle_is_vertex_transitive() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(g.permuted(&[2, 0, 1]).unwrap(), g);
    }

    #[test]
    fn path_permutation_moves_degrees() {
        let g = path(3);
        let h = g.permuted(&[2, 1, 0]).unwrap();
        assert_eq!(h.degrees(), &[1, 2, 1]);
        assert_eq!(h.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn non_bijective_permutation_rejected() {
        let g = path(3);
        assert!(g.permuted(&[0, 0, 1]).is_err());
        assert!(g.permuted(&[0, 1]).is_err());
    }

    #[test]
    fn permute_then_inverse_round_trips() {
        let g = Graph::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]).unwrap();
        let perm = vec![3, 0, 5, 1, 4, 2];
        let inv = Graph::invert_perm(&perm);
        assert_eq!(g.permuted(&perm).unwrap().permuted(&inv).unwrap(), g);
    }

    #[test]
    fn bfs_star_takes_lowest_leaf_ids_first() {
        // Star: center 0 with 5 leaves.
        let g = Graph::new(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]).unwrap();
        let (sub, mapping) = g.bfs_subgraph(0, 3).unwrap();
        assert_eq!(mapping, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(sub.edges(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn bfs_whole_graph_when_budget_is_large() {
        let g = cycle(6);
        let (sub, _) = g.bfs_subgraph(2, 100).unwrap();
        assert_eq!(sub.n(), 6);
        assert_eq!(sub.m(), 6);
    }

    #[test]
    fn bfs_on_six_cycle_gives_path_of_four() {
        // From root 0 on 0-1-2-3-4-5-0: visit 0, then 1 and 5, then 2.
        // Induced edges: (0,1), (0,5), (1,2) — a path 5-0-1-2.
        let g = cycle(6);
        let (sub, mapping) = g.bfs_subgraph(0, 4).unwrap();
        assert_eq!(mapping, vec![(0, 0), (1, 1), (5, 2), (2, 3)]);
        assert_eq!(sub.n(), 4);
        assert_eq!(sub.edges(), &[(0, 1), (0, 2), (1, 3)]);
        assert_eq!(sub.degrees(), &[2, 2, 1, 1]);
    }

    #[test]
    fn bfs_is_connected_when_component_is_large_enough() {
        let g = disjoint_union(&cycle(6), &cycle(6));
        let (sub, _) = g.bfs_subgraph(1, 5).unwrap();
        // All 5 nodes reachable within the first component.
        assert_eq!(sub.n(), 5);
        let (reach, _) = sub.bfs_subgraph(0, 5).unwrap();
        assert_eq!(reach.n(), 5);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::new(4, &[(0, 1), (2, 3), (0, 3)]).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let back = Graph::read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn attributes_travel_with_their_nodes_and_edges() {
        let g = Graph::new(3, &[(0, 1), (1, 2)])
            .unwrap()
            .with_node_attrs(vec![vec![0.0], vec![1.0], vec![2.0]])
            .unwrap()
            .with_edge_attrs(vec![vec![10.0], vec![20.0]])
            .unwrap();
        let h = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(h.node_attrs().unwrap()[2], vec![0.0]);
        assert_eq!(h.node_attrs().unwrap()[0], vec![1.0]);
        // Edge (0,1) with attr 10 becomes (0,2); (1,2) with 20 becomes (0,1).
        assert_eq!(h.edges(), &[(0, 1), (0, 2)]);
        assert_eq!(h.edge_attrs().unwrap(), &vec![vec![20.0], vec![10.0]]);
    }

    #[test]
    fn node_attr_csv_rows_are_id_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("attrs.csv");
        std::fs::write(&csv, "1,0.5,2.0\n0,1.0,-1.0\n2,0.0,0.25\n").unwrap();
        let g = path(3).load_node_attrs_csv(&csv).unwrap();
        let attrs = g.node_attrs().unwrap();
        assert_eq!(attrs[0], vec![1.0, -1.0]);
        assert_eq!(attrs[1], vec![0.5, 2.0]);

        std::fs::write(&csv, "0,1.0\n").unwrap();
        let err = path(2).load_node_attrs_csv(&csv).unwrap_err().to_string();
        assert!(err.contains("missing attr row"));
    }
}
