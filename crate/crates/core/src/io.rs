//! Text file formats: network triple (nodes, edges, grid) and trip lists.
//!
//! All files are UTF-8, comma-delimited, with a header row.
//!
//! * `nodes.csv`: `node_id,row,col,<p feature columns>`
//! * `edges.csv`: `src_id,dst_id,flow,<k feature columns>`, one row per
//!   unordered pair
//! * `grid.csv`: `origin_x,origin_y,cell_size,n_rows,n_cols` and one value row
//! * trips: `origin_x,origin_y,dest_x,dest_y[,count]`

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::ingest::TripRecord;
use crate::network::{EdgeRecord, FlowNetwork, NodeTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkPaths {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub grid: PathBuf,
}

impl NetworkPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        NetworkPaths {
            nodes: dir.join("nodes.csv"),
            edges: dir.join("edges.csv"),
            grid: dir.join("grid.csv"),
        }
    }
}

const GRID_HEADER: [&str; 5] = ["origin_x", "origin_y", "cell_size", "n_rows", "n_cols"];

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn field<T: FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(idx).ok_or_else(|| parse_err(path, line, format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} value {raw:?}")))
}

fn finite(path: &Path, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<f64> {
    let v: f64 = field(path, rec, idx, name)?;
    if !v.is_finite() {
        let line = rec.position().map_or(0, |p| p.line());
        return Err(parse_err(path, line, format!("non-finite {name} value {v}")));
    }
    Ok(v)
}

fn check_prefix(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        if header.get(i) != Some(*want) {
            return Err(parse_err(
                path,
                1,
                format!("header column {} should be {want:?}, found {:?}", i + 1, header.get(i)),
            ));
        }
    }
    Ok(())
}

fn check_width(path: &Path, rec: &csv::StringRecord, width: usize) -> Result<()> {
    if rec.len() != width {
        let line = rec.position().map_or(0, |p| p.line());
        return Err(parse_err(path, line, format!("expected {width} columns, found {}", rec.len())));
    }
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<GridSpec> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_prefix(path, &header, &GRID_HEADER)?;
    check_width(path, &header, GRID_HEADER.len())?;
    let rec = rdr
        .records()
        .next()
        .ok_or_else(|| parse_err(path, 2, "grid file has no value row"))??;
    check_width(path, &rec, GRID_HEADER.len())?;
    GridSpec::new(
        finite(path, &rec, 0, "origin_x")?,
        finite(path, &rec, 1, "origin_y")?,
        finite(path, &rec, 2, "cell_size")?,
        field(path, &rec, 3, "n_rows")?,
        field(path, &rec, 4, "n_cols")?,
    )
}

/// Reads a node table; cells are converted from `(row, col)` to indices.
pub fn load_nodes(path: &Path, grid: &GridSpec) -> Result<NodeTable> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_prefix(path, &header, &["node_id", "row", "col"])?;
    let feature_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let width = header.len();
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        check_width(path, &rec, width)?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: usize = field(path, &rec, 1, "row")?;
        let col: usize = field(path, &rec, 2, "col")?;
        if row >= grid.n_rows || col >= grid.n_cols {
            return Err(parse_err(path, line, format!("cell ({row}, {col}) outside grid")));
        }
        ids.push(field(path, &rec, 0, "node_id")?);
        cells.push(grid.cell_index(row, col));
        for (c, name) in feature_names.iter().enumerate() {
            values.push(finite(path, &rec, 3 + c, name)?);
        }
    }
    let features = Array2::from_shape_vec((ids.len(), feature_names.len()), values)
        .expect("row-major buffer matches shape");
    Ok(NodeTable {
        ids,
        cells,
        feature_names,
        features,
    })
}

pub fn load_network(paths: &NetworkPaths) -> Result<FlowNetwork> {
    let grid = load_grid(&paths.grid)?;
    let nodes = load_nodes(&paths.nodes, &grid)?;
    let index: HashMap<u64, usize> = nodes.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let path = paths.edges.as_path();
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_prefix(path, &header, &["src_id", "dst_id", "flow"])?;
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let width = header.len();
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        check_width(path, &rec, width)?;
        let line = rec.position().map_or(0, |p| p.line());
        let lookup = |col: usize, name: &str| -> Result<usize> {
            let id: u64 = field(path, &rec, col, name)?;
            index
                .get(&id)
                .copied()
                .ok_or_else(|| parse_err(path, line, format!("unknown node id {id}")))
        };
        let src = lookup(0, "src_id")?;
        let dst = lookup(1, "dst_id")?;
        if src == dst {
            return Err(parse_err(path, line, "self pair"));
        }
        let key = (src.min(dst), src.max(dst));
        if let Some(first) = seen.insert(key, line) {
            return Err(parse_err(path, line, format!("duplicate edge, first defined on line {first}")));
        }
        let flow = finite(path, &rec, 2, "flow")?;
        if flow < 0.0 {
            return Err(parse_err(path, line, format!("negative flow {flow}")));
        }
        let features = names
            .iter()
            .enumerate()
            .map(|(c, name)| finite(path, &rec, 3 + c, name))
            .collect::<Result<Vec<_>>>()?;
        edges.push(EdgeRecord {
            src,
            dst,
            flow,
            features,
        });
    }
    FlowNetwork::from_parts(grid, nodes, names, edges)
}

fn io(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(p, e)
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn save_network(net: &FlowNetwork, paths: &NetworkPaths) -> Result<()> {
    let g = net.grid();
    let mut out = create(&paths.grid)?;
    writeln!(out, "{}", GRID_HEADER.join(",")).map_err(io(&paths.grid))?;
    writeln!(out, "{},{},{},{},{}", g.origin_x, g.origin_y, g.cell_size, g.n_rows, g.n_cols)
        .map_err(io(&paths.grid))?;
    out.flush().map_err(io(&paths.grid))?;

    let mut out = create(&paths.nodes)?;
    let mut header = vec!["node_id".to_string(), "row".into(), "col".into()];
    header.extend(net.node_feature_names().iter().cloned());
    writeln!(out, "{}", header.join(",")).map_err(io(&paths.nodes))?;
    for i in 0..net.n() {
        let (row, col) = g.row_col(net.node_cell(i));
        let mut line = format!("{},{row},{col}", net.node_ids()[i]);
        for v in net.node_feature_row(i) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}").map_err(io(&paths.nodes))?;
    }
    out.flush().map_err(io(&paths.nodes))?;

    let mut out = create(&paths.edges)?;
    let mut header = vec!["src_id".to_string(), "dst_id".into(), "flow".into()];
    header.extend(net.edge_feature_names().iter().cloned());
    writeln!(out, "{}", header.join(",")).map_err(io(&paths.edges))?;
    let ids = net.node_ids();
    for (e, &(i, j)) in net.edges().iter().enumerate() {
        let mut line = format!("{},{},{}", ids[i], ids[j], net.flows_unguarded()[e]);
        for v in net.edge_feature_row(e) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}").map_err(io(&paths.edges))?;
    }
    out.flush().map_err(io(&paths.edges))?;
    Ok(())
}

pub fn load_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    check_prefix(path, &header, &["origin_x", "origin_y", "dest_x", "dest_y"])?;
    let has_count = header.get(4) == Some("count");
    let width = if has_count { 5 } else { 4 };
    check_width(path, &header, width)?;
    let mut trips = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        check_width(path, &rec, width)?;
        let count = if has_count { field(path, &rec, 4, "count")? } else { 1 };
        if count == 0 {
            let line = rec.position().map_or(0, |p| p.line());
            return Err(parse_err(path, line, "trip count must be at least 1"));
        }
        trips.push(TripRecord {
            origin_x: finite(path, &rec, 0, "origin_x")?,
            origin_y: finite(path, &rec, 1, "origin_y")?,
            dest_x: finite(path, &rec, 2, "dest_x")?,
            dest_y: finite(path, &rec, 3, "dest_y")?,
            count,
        });
    }
    Ok(trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn fixture_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "grid.csv", "origin_x,origin_y,cell_size,n_rows,n_cols\n100,200,500,1,2\n");
        write(dir.path(), "nodes.csv", "node_id,row,col,pop,jobs\n7,0,0,1.5,2\n9,0,1,3,-4.25\n");
        write(dir.path(), "edges.csv", "src_id,dst_id,flow,distance\n9,7,12,500\n");
        dir
    }

    #[test]
    fn two_node_fixture_loads_to_expected_struct() {
        let dir = fixture_dir();
        let net = load_network(&NetworkPaths::in_dir(dir.path())).unwrap();
        let grid = GridSpec::new(100.0, 200.0, 500.0, 1, 2).unwrap();
        let expected = FlowNetwork::from_parts(
            grid,
            NodeTable {
                ids: vec![7, 9],
                cells: vec![0, 1],
                feature_names: vec!["pop".into(), "jobs".into()],
                features: array![[1.5, 2.0], [3.0, -4.25]],
            },
            vec!["distance".into()],
            vec![EdgeRecord { src: 0, dst: 1, flow: 12.0, features: vec![500.0] }],
        )
        .unwrap();
        assert_eq!(net, expected);
    }

    #[test]
    fn duplicate_edge_names_line() {
        let dir = fixture_dir();
        write(dir.path(), "edges.csv", "src_id,dst_id,flow,distance\n9,7,12,500\n7,9,1,500\n");
        let err = load_network(&NetworkPaths::in_dir(dir.path())).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_feature_and_ragged_rows_are_rejected() {
        let dir = fixture_dir();
        write(dir.path(), "nodes.csv", "node_id,row,col,pop,jobs\n7,0,0,NaN,2\n9,0,1,3,4\n");
        let err = load_network(&NetworkPaths::in_dir(dir.path())).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");

        let dir = fixture_dir();
        write(dir.path(), "edges.csv", "src_id,dst_id,flow,distance\n9,7,12\n");
        let err = load_network(&NetworkPaths::in_dir(dir.path())).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = fixture_dir();
        write(dir.path(), "grid.csv", "x,y,cell_size,n_rows,n_cols\n0,0,500,1,2\n");
        assert!(matches!(
            load_network(&NetworkPaths::in_dir(dir.path())),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn trips_with_and_without_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "origin_x,origin_y,dest_x,dest_y\n1,2,3,4\n");
        assert_eq!(load_trips(&p).unwrap(), vec![TripRecord::new((1.0, 2.0), (3.0, 4.0))]);
        let p = write(dir.path(), "t2.csv", "origin_x,origin_y,dest_x,dest_y,count\n1,2,3,4,5\n");
        assert_eq!(load_trips(&p).unwrap()[0].count, 5);
        let p = write(dir.path(), "t3.csv", "origin_x,origin_y,dest_x,dest_y,count\n1,2,3,4,0\n");
        assert!(load_trips(&p).is_err());
    }
}
