//! The relational entity graph: one node per row, one undirected edge per
//! non-null foreign key value.
//!
//! Node ids are assigned table-major, so every table owns a contiguous id
//! range and the node type is a range lookup. Adjacency is stored in CSR
//! form, sorted by neighbor id, and each entry keeps the relation id of the
//! foreign key column that produced it.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{Database, RelationalSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub node: u32,
    pub relation: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityGraph {
    type_names: Vec<String>,
    relation_names: Vec<String>,
    /// `type_offsets[t]..type_offsets[t + 1]` are the ids of table `t`.
    type_offsets: Vec<u32>,
    node_type: Vec<u32>,
    timestamps: Vec<Option<i64>>,
    offsets: Vec<usize>,
    adjacency: Vec<Neighbor>,
    edge_count: usize,
}

/// An undirected edge `(a, b, relation)`.
pub type Edge = (u32, u32, u32);

impl EntityGraph {
    /// Assembles a graph from per-type node counts and an edge list.
    pub fn from_edges(
        type_names: Vec<String>,
        type_counts: &[usize],
        timestamps: Vec<Option<i64>>,
        relation_names: Vec<String>,
        edges: &[Edge],
    ) -> Self {
        assert_eq!(type_names.len(), type_counts.len());
        let mut type_offsets = Vec::with_capacity(type_counts.len() + 1);
        let mut node_type = Vec::new();
        let mut acc = 0u32;
        for (t, &c) in type_counts.iter().enumerate() {
            type_offsets.push(acc);
            node_type.extend(std::iter::repeat_n(t as u32, c));
            acc += c as u32;
        }
        type_offsets.push(acc);
        let n = acc as usize;
        assert_eq!(timestamps.len(), n, "one timestamp slot per node");

        let mut degree = vec![0usize; n];
        for &(a, b, r) in edges {
            assert!((a as usize) < n && (b as usize) < n, "edge ({a},{b}) out of range");
            assert!((r as usize) < relation_names.len(), "unknown relation {r}");
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut adjacency = vec![Neighbor { node: 0, relation: 0 }; offsets[n]];
        for &(a, b, r) in edges {
            adjacency[fill[a as usize]] = Neighbor { node: b, relation: r };
            fill[a as usize] += 1;
            adjacency[fill[b as usize]] = Neighbor { node: a, relation: r };
            fill[b as usize] += 1;
        }
        for v in 0..n {
            adjacency[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self {
            type_names,
            relation_names,
            type_offsets,
            node_type,
            timestamps,
            offsets,
            adjacency,
            edge_count: edges.len(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_type.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn type_count(&self) -> usize {
        self.type_names.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn node_type(&self, v: u32) -> u32 {
        self.node_type[v as usize]
    }

    pub fn node_types(&self) -> &[u32] {
        &self.node_type
    }

    /// Id range owned by table `t`.
    pub fn type_range(&self, t: usize) -> std::ops::Range<u32> {
        self.type_offsets[t]..self.type_offsets[t + 1]
    }

    pub fn node_id(&self, table: usize, row: usize) -> u32 {
        let id = self.type_offsets[table] + row as u32;
        assert!(id < self.type_offsets[table + 1], "row {row} out of range for table {table}");
        id
    }

    /// `(table, row)` of a node.
    pub fn table_row(&self, v: u32) -> (usize, usize) {
        let t = self.node_type(v) as usize;
        (t, (v - self.type_offsets[t]) as usize)
    }

    pub fn timestamp(&self, v: u32) -> Option<i64> {
        self.timestamps[v as usize]
    }

    pub fn timestamps(&self) -> &[Option<i64>] {
        &self.timestamps
    }

    /// Neighbors of `v` in ascending id order, each with its relation id.
    /// Parallel edges appear once per edge.
    pub fn neighbors(&self, v: u32) -> &[Neighbor] {
        let v = v as usize;
        assert!(v < self.node_count(), "node {v} out of range ({} nodes)", self.node_count());
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.neighbors(v).len()
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        let nb = self.neighbors(a);
        let i = nb.partition_point(|n| n.node < b);
        i < nb.len() && nb[i].node == b
    }

    /// Writes the little-endian `REG1` snapshot.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        put_u32(&mut w, SNAPSHOT_VERSION)?;
        put_names(&mut w, &self.type_names)?;
        for t in 0..self.type_count() {
            put_u64(&mut w, self.type_range(t).len() as u64)?;
        }
        put_names(&mut w, &self.relation_names)?;
        put_u64(&mut w, self.edge_count as u64)?;
        for ts in &self.timestamps {
            match ts {
                Some(t) => {
                    w.write_all(&[1])?;
                    w.write_all(&t.to_le_bytes())?;
                }
                None => w.write_all(&[0; 9])?,
            }
        }
        for &o in &self.offsets {
            put_u64(&mut w, o as u64)?;
        }
        for nb in &self.adjacency {
            put_u32(&mut w, nb.node)?;
            put_u32(&mut w, nb.relation)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a REG1 graph snapshot".into()));
        }
        let version = get_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let type_names = get_names(&mut r)?;
        let mut type_offsets = vec![0u32];
        let mut node_type = Vec::new();
        for t in 0..type_names.len() {
            let c = get_u64(&mut r)? as usize;
            node_type.extend(std::iter::repeat_n(t as u32, c));
            type_offsets.push(node_type.len() as u32);
        }
        let relation_names = get_names(&mut r)?;
        let edge_count = get_u64(&mut r)? as usize;
        let n = node_type.len();
        let mut timestamps = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 9];
            read_exact(&mut r, &mut buf)?;
            let v = i64::from_le_bytes(buf[1..].try_into().expect("8 bytes"));
            timestamps.push((buf[0] == 1).then_some(v));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            offsets.push(get_u64(&mut r)? as usize);
        }
        let total = *offsets.last().expect("n + 1 offsets");
        if total != 2 * edge_count || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("inconsistent adjacency offsets".into()));
        }
        let mut adjacency = Vec::with_capacity(total);
        for _ in 0..total {
            let node = get_u32(&mut r)?;
            let relation = get_u32(&mut r)?;
            if node as usize >= n || relation as usize >= relation_names.len() {
                return Err(Error::Format("adjacency entry out of range".into()));
            }
            adjacency.push(Neighbor { node, relation });
        }
        Ok(Self {
            type_names,
            relation_names,
            type_offsets,
            node_type,
            timestamps,
            offsets,
            adjacency,
            edge_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(bytes.as_slice())
    }
}

/// Materializes the entity graph of a validated database.
///
/// Relation ids follow manifest order of the foreign key columns and are
/// named `table.column`.
pub fn build_graph(db: &Database, schema: &RelationalSchema) -> EntityGraph {
    let type_names: Vec<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
    let counts: Vec<usize> = db.tables.iter().map(|t| t.num_rows).collect();
    let mut offsets = vec![0u32];
    for c in &counts {
        offsets.push(offsets.last().unwrap() + *c as u32);
    }
    let mut timestamps = Vec::with_capacity(db.total_rows());
    for t in &db.tables {
        timestamps.extend((0..t.num_rows).map(|r| t.timestamp(r)));
    }
    let mut relation_names = Vec::new();
    let mut edges = Vec::new();
    for (ti, t) in db.tables.iter().enumerate() {
        for fk in &t.foreign_keys {
            let rel = relation_names.len() as u32;
            relation_names.push(format!("{}.{}", t.name, fk.column));
            for (row, &target) in fk.rows.iter().enumerate() {
                if target >= 0 {
                    edges.push((
                        offsets[ti] + row as u32,
                        offsets[fk.target] + target as u32,
                        rel,
                    ));
                }
            }
        }
    }
    EntityGraph::from_edges(type_names, &counts, timestamps, relation_names, &edges)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"REG1";
const SNAPSHOT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_names<W: Write>(w: &mut W, names: &[String]) -> std::io::Result<()> {
    put_u32(w, names.len() as u32)?;
    for n in names {
        put_u32(w, n.len() as u32)?;
        w.write_all(n.as_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated snapshot: {e}")))
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_names<R: Read>(r: &mut R) -> Result<Vec<String>> {
    let n = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = get_u32(r)? as usize;
        let mut buf = vec![0u8; len];
        read_exact(r, &mut buf)?;
        out.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok(out)
}
