//! On-disk formats: JSON-Lines graph corpora, JSON checkpoints, CSV
//! training histories. Every writer goes through [`atomic_write`], so a
//! failed command leaves at most a `*.partial` file behind.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eda::Provenance;
use crate::encoder::{Architecture, Model};
use crate::error::{Error, Result};
use crate::graph::{Graph, SplitTag};
use crate::num::{Matrix, ParamStore};
use crate::trainer::{EpochRecord, PredictionMode};

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: u64,
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub x: Vec<Vec<f64>>,
    pub y: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_rationale: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl GraphRecord {
    pub fn from_graph(g: &Graph, provenance: Option<Provenance>) -> Self {
        let f = g.features();
        Self {
            id: g.id,
            n: g.node_count(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            x: (0..f.rows()).map(|r| f.row(r).to_vec()).collect(),
            y: g.label,
            gt_rationale: g.gt_rationale().map(|f| f.iter().map(|&b| u8::from(b)).collect()),
            split: g.split,
            provenance,
        }
    }

    pub fn into_graph(self) -> Result<Graph> {
        if self.x.len() != self.n {
            return Err(Error::Data(format!("graph {}: {} feature rows for {} nodes", self.id, self.x.len(), self.n)));
        }
        let features = Matrix::from_rows(&self.x).map_err(|e| Error::Data(format!("graph {}: {e}", self.id)))?;
        let mut g = Graph::new(self.id, self.n, self.edges.iter().map(|e| (e[0], e[1])), features, self.y)
            .map_err(|e| Error::Data(format!("graph {}: {e}", self.id)))?;
        if let Some(flags) = self.gt_rationale {
            if let Some(bad) = flags.iter().find(|&&b| b > 1) {
                return Err(Error::Data(format!("graph {}: gt_rationale entry {bad} is not 0/1", self.id)));
            }
            g = g
                .with_gt_rationale(flags.iter().map(|&b| b == 1).collect())
                .map_err(|e| Error::Data(format!("graph {}: {e}", self.id)))?;
        }
        if let Some(s) = self.split {
            g = g.with_split(s);
        }
        Ok(g)
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes through `body` into `<path>.partial`, then renames it into place.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = partial_path(path);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_records(path: &Path, records: &[GraphRecord]) -> Result<()> {
    atomic_write(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })
}

pub fn write_corpus(path: &Path, graphs: &[Graph]) -> Result<()> {
    let records: Vec<GraphRecord> = graphs.iter().map(|g| GraphRecord::from_graph(g, None)).collect();
    write_records(path, &records)
}

pub fn read_records(path: &Path) -> Result<Vec<GraphRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Graph>> {
    read_records(path)?
        .into_iter()
        .map(GraphRecord::into_graph)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
}

/// Graphs of one split, or all graphs when none carries a split tag.
pub fn split_of(graphs: &[Graph], tag: SplitTag) -> Vec<Graph> {
    graphs.iter().filter(|g| g.split == Some(tag)).cloned().collect()
}

pub const CHECKPOINT_FORMAT: &str = "grbe-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub prediction: PredictionMode,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, prediction: PredictionMode) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(name, m)| {
                (
                    name.to_string(),
                    Tensor {
                        shape: [m.rows(), m.cols()],
                        data: m.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: model.architecture(),
            prediction,
            params,
        }
    }

    pub fn into_model(self) -> Result<(Model, PredictionMode)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let template = Model::new(self.architecture, 0).map_err(|e| Error::Data(e.to_string()))?;
        let mut store = ParamStore::new();
        for (name, _) in template.params().iter() {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {name}")))?;
            let m = Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone())
                .map_err(|e| Error::Data(format!("parameter {name}: {e}")))?;
            if !m.is_finite() {
                return Err(Error::Data(format!("parameter {name} is not finite")));
            }
            store.add(name, m);
        }
        if self.params.len() != store.len() {
            return Err(Error::Data("checkpoint has parameters the architecture does not use".into()));
        }
        Ok((Model::from_params(self.architecture, &store)?, self.prediction))
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, prediction: PredictionMode) -> Result<()> {
    write_json(path, &Checkpoint::from_model(model, prediction))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, PredictionMode)> {
    read_json::<Checkpoint>(path)?.into_model()
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryRow {
    epoch: usize,
    #[serde(rename = "L_r")]
    l_r: f64,
    #[serde(rename = "L_a")]
    l_a: f64,
    #[serde(rename = "L_c")]
    l_c: f64,
    #[serde(rename = "L_s")]
    l_s: f64,
    total: f64,
    train_acc: f64,
    val_acc: Option<f64>,
    rationale_auc: Option<f64>,
    aug_distance: Option<f64>,
    augmented_graphs: usize,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    atomic_write(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in history {
            csv.serialize(HistoryRow {
                epoch: r.epoch,
                l_r: r.l_r,
                l_a: r.l_a,
                l_c: r.l_c,
                l_s: r.l_s,
                total: r.total,
                train_acc: r.train_acc,
                val_acc: r.val_acc,
                rationale_auc: r.rationale_auc,
                aug_distance: r.aug_distance,
                augmented_graphs: r.augmented_graphs,
            })?;
        }
        csv.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize()
        .map(|row| {
            let r: HistoryRow = row?;
            Ok(EpochRecord {
                epoch: r.epoch,
                l_r: r.l_r,
                l_a: r.l_a,
                l_c: r.l_c,
                l_s: r.l_s,
                total: r.total,
                train_acc: r.train_acc,
                val_acc: r.val_acc,
                rationale_auc: r.rationale_auc,
                aug_distance: r.aug_distance,
                augmented_graphs: r.augmented_graphs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> Graph {
        Graph::new(7, 3, [(0, 1), (1, 2)], Matrix::from_vec(3, 1, vec![0.1, 0.25, 1.0 / 3.0]).unwrap(), 2)
            .unwrap()
            .with_gt_rationale(vec![true, false])
            .unwrap()
            .with_split(SplitTag::Val)
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&p, &[graph()]).unwrap();
        assert!(!partial_path(&p).exists());
        let back = read_corpus(&p).unwrap();
        assert_eq!(back, vec![graph()]);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"id\":0,\"n\":2,\"edges\":[[0,5]],\"x\":[[0],[0]],\"y\":0}\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Data(_))));
        fs::write(&p, "not json\n").unwrap();
        let msg = read_corpus(&p).unwrap_err().to_string();
        assert!(msg.contains(":1:"), "{msg}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let arch = Architecture {
            hidden: 4,
            layers: 2,
            feature_dim: 3,
            classes: 3,
        };
        let model = Model::new(arch, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_checkpoint(&p, &model, PredictionMode::Rationale).unwrap();
        let (back, mode) = load_checkpoint(&p).unwrap();
        assert_eq!(mode, PredictionMode::Rationale);
        assert_eq!(back.params().values(), model.params().values());
    }

    #[test]
    fn history_round_trip() {
        let h = vec![EpochRecord {
            epoch: 0,
            l_r: 1.0,
            l_a: 0.5,
            l_c: -0.25,
            l_s: 0.125,
            total: 1.2,
            train_acc: 0.5,
            val_acc: None,
            rationale_auc: Some(0.75),
            aug_distance: None,
            augmented_graphs: 3,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_history(&p, &h).unwrap();
        assert_eq!(read_history(&p).unwrap(), h);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,L_r,L_a,L_c,L_s,total,train_acc,val_acc,rationale_auc"));
    }
}
