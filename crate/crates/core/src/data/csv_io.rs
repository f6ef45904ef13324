//! Embedding CSV: `set_id,identity,yaw,f0,...,f{d-1}`, one member per row.

use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, FeatureSet, Member, MAX_YAW};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 3] = ["set_id", "identity", "yaw"];

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

pub fn write_embeddings<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.dim).map(|i| format!("f{i}")));
    out.write_record(&header).map_err(csv_err)?;

    let mut order: Vec<&FeatureSet> = ds.sets.iter().collect();
    order.sort_by(|a, b| a.set_id.cmp(&b.set_id));
    let mut row = Vec::with_capacity(3 + ds.dim);
    for s in order {
        for m in &s.members {
            row.clear();
            row.push(s.set_id.clone());
            row.push(s.identity.to_string());
            row.push(m.yaw.to_string());
            // 17 significant digits: exact f64 round trip.
            row.extend(m.feature.iter().map(|v| format!("{v:.16e}")));
            out.write_record(&row).map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })
}

pub fn read_embeddings<R: Read>(r: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(csv_err)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    let header_err = |msg: String| Error::Parse { line: 1, msg };
    if header.len() <= FIXED_COLUMNS.len() {
        return Err(header_err("header has no feature columns".into()));
    }
    for (i, name) in FIXED_COLUMNS.iter().enumerate() {
        if &header[i] != *name {
            return Err(header_err(format!("column {i} must be `{name}`, found `{}`", &header[i])));
        }
    }
    let dim = header.len() - FIXED_COLUMNS.len();
    for k in 0..dim {
        let got = &header[FIXED_COLUMNS.len() + k];
        if got != format!("f{k}") {
            return Err(header_err(format!("expected feature column `f{k}`, found `{got}`")));
        }
    }

    let mut sets: Vec<FeatureSet> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse { line, msg };
        if rec.len() != header.len() {
            return Err(err(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let set_id = rec[0].to_string();
        if set_id.is_empty() {
            return Err(err("empty set_id".into()));
        }
        let identity: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("identity `{}` is not a non-negative integer", &rec[1])))?;
        let yaw: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("yaw `{}` is not a number", &rec[2])))?;
        if !(0.0..=MAX_YAW).contains(&yaw) {
            return Err(err(format!("yaw {yaw} outside [0, {MAX_YAW}]")));
        }
        let mut feature = Vec::with_capacity(dim);
        for (k, field) in rec.iter().skip(FIXED_COLUMNS.len()).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(format!("f{k} `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("f{k} is not finite")));
            }
            feature.push(v);
        }
        let member = Member {
            feature,
            yaw,
            quality: None,
        };
        match index.get(&set_id) {
            Some(&i) => {
                if sets[i].identity != identity {
                    return Err(err(format!(
                        "set `{set_id}` has identity {identity}, earlier rows say {}",
                        sets[i].identity
                    )));
                }
                sets[i].members.push(member);
            }
            None => {
                index.insert(set_id.clone(), sets.len());
                sets.push(FeatureSet {
                    set_id,
                    identity,
                    members: vec![member],
                });
            }
        }
    }
    if sets.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    Dataset::from_sets(sets, dim)
}

pub fn save_embeddings(path: &Path, ds: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(ds, std::io::BufWriter::new(file))
}

pub fn load_embeddings(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(std::io::BufReader::new(file))
}
