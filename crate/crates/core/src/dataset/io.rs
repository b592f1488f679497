use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Instance, LabelRecord, LabelSpace};

const ABSTAIN_DIRECTIVE: &str = "!abstain ";

/// On-disk description of a dataset. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub label_space: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> DatasetError + '_ {
    move |source| DatasetError::Csv { path: path.to_path_buf(), source }
}

fn row_err(path: &Path, line: u64, message: impl Into<String>) -> DatasetError {
    DatasetError::Row { path: path.to_path_buf(), line, message: message.into() }
}

/// Reads a label-space file: one label per line, `!abstain <label>` lines
/// declare (and mark) abstention labels. Blank lines are ignored.
pub fn read_label_space(path: &Path) -> Result<LabelSpace, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels: Vec<String> = Vec::new();
    let mut abstain: Vec<String> = Vec::new();
    for line in text.lines() {
        let (label, is_abstain) = match line.strip_prefix(ABSTAIN_DIRECTIVE) {
            Some(rest) => (rest.trim(), true),
            None => (line.trim(), false),
        };
        if label.is_empty() {
            continue;
        }
        if is_abstain {
            if !abstain.iter().any(|a| a == label) {
                abstain.push(label.to_string());
            }
            if labels.iter().any(|l| l == label) {
                continue;
            }
        }
        labels.push(label.to_string());
    }
    LabelSpace::new(labels, abstain).map_err(|e| match e {
        DatasetError::LabelSpace(msg) => DatasetError::LabelSpace(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<fs::File>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(csv_err(path))?;
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(DatasetError::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(reader)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads a labels CSV (`instance_id,worker_id,label`). Every label must be
/// in `space`. Repeated (instance, worker) pairs keep the last occurrence.
pub fn read_labels_csv(path: &Path, space: &LabelSpace) -> Result<Vec<LabelRecord>, DatasetError> {
    let mut reader = open_csv(path, &["instance_id", "worker_id", "label"])?;
    let mut records: Vec<LabelRecord> = Vec::new();
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(csv_err(path))?;
        let line = line_of(&row);
        if row.len() != 3 {
            return Err(row_err(path, line, format!("expected 3 fields, found {}", row.len())));
        }
        let (instance_id, worker_id, label) = (&row[0], &row[1], &row[2]);
        if instance_id.is_empty() || worker_id.is_empty() {
            return Err(row_err(path, line, "empty instance_id or worker_id"));
        }
        if !space.contains(label) {
            return Err(row_err(path, line, format!("label `{label}` is not in the label space")));
        }
        let rec = LabelRecord::new(instance_id, worker_id, label);
        match slot.get(&(rec.instance_id.clone(), rec.worker_id.clone())) {
            Some(&idx) => {
                warn!(
                    "{}:{line}: duplicate label by `{}` for `{}`; keeping the later one",
                    path.display(),
                    rec.worker_id,
                    rec.instance_id
                );
                records[idx] = rec;
            }
            None => {
                slot.insert((rec.instance_id.clone(), rec.worker_id.clone()), records.len());
                records.push(rec);
            }
        }
    }
    if records.is_empty() {
        return Err(DatasetError::NoRecords { path: path.to_path_buf() });
    }
    Ok(records)
}

/// Reads a gold CSV (`instance_id,label`) into (instance, label) pairs in file order.
pub fn read_gold_csv(path: &Path, space: &LabelSpace) -> Result<Vec<(String, String)>, DatasetError> {
    let mut reader = open_csv(path, &["instance_id", "label"])?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(csv_err(path))?;
        let line = line_of(&row);
        if row.len() != 2 {
            return Err(row_err(path, line, format!("expected 2 fields, found {}", row.len())));
        }
        let (id, label) = (&row[0], &row[1]);
        if !space.contains(label) || space.is_abstain(label) {
            return Err(row_err(path, line, format!("gold label `{label}` is not a non-abstain label")));
        }
        if !seen.insert(id.to_string()) {
            return Err(row_err(path, line, format!("instance `{id}` has more than one gold label")));
        }
        out.push((id.to_string(), label.to_string()));
    }
    Ok(out)
}

fn read_instances_csv(path: &Path) -> Result<Vec<Instance>, DatasetError> {
    let mut reader = open_csv(path, &["instance_id", "text", "options"])?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(csv_err(path))?;
        let line = line_of(&row);
        if row.len() != 3 {
            return Err(row_err(path, line, format!("expected 3 fields, found {}", row.len())));
        }
        let id = &row[0];
        if id.is_empty() {
            return Err(row_err(path, line, "empty instance_id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(row_err(path, line, format!("duplicate instance `{id}`")));
        }
        let text = (!row[1].is_empty()).then(|| row[1].to_string());
        let options = if row[2].is_empty() {
            None
        } else {
            let opts: Vec<String> = row[2].split('|').map(|o| o.trim().to_string()).collect();
            let distinct: HashSet<&String> = opts.iter().collect();
            if distinct.len() != opts.len() {
                return Err(row_err(path, line, "repeated option text"));
            }
            Some(opts)
        };
        out.push(Instance { id: id.to_string(), text, options, gold: None });
    }
    Ok(out)
}

/// Loads and validates the dataset described by a JSON manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    let raw = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&raw)
        .map_err(|source| DatasetError::Manifest { path: manifest_path.to_path_buf(), source })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| base.join(p);

    let space_path = resolve(&manifest.label_space);
    let space = read_label_space(&space_path)?;
    let labels_path = resolve(&manifest.labels);
    let records = read_labels_csv(&labels_path, &space)?;

    let mut instances = match &manifest.instances {
        Some(p) => {
            let path = resolve(p);
            let instances = read_instances_csv(&path)?;
            let known: HashSet<&str> = instances.iter().map(|i| i.id.as_str()).collect();
            if let Some(r) = records.iter().find(|r| !known.contains(r.instance_id.as_str())) {
                return Err(DatasetError::Invalid(format!(
                    "{}: instance `{}` is not listed in {}",
                    labels_path.display(),
                    r.instance_id,
                    path.display()
                )));
            }
            instances
        }
        None => Vec::new(),
    };
    // Make sure every labeled instance exists before gold is attached.
    let mut known: HashSet<String> = instances.iter().map(|i| i.id.clone()).collect();
    for r in &records {
        if known.insert(r.instance_id.clone()) {
            instances.push(Instance::new(r.instance_id.clone()));
        }
    }

    if let Some(p) = &manifest.gold {
        let path = resolve(p);
        let index: HashMap<String, usize> = instances.iter().enumerate().map(|(k, i)| (i.id.clone(), k)).collect();
        for (id, label) in read_gold_csv(&path, &space)? {
            match index.get(&id) {
                Some(&k) => instances[k].gold = Some(label),
                None => {
                    return Err(DatasetError::Invalid(format!(
                        "{}: gold references unknown instance `{id}`",
                        path.display()
                    )))
                }
            }
        }
    }

    Dataset::from_records(manifest.name, space, instances, records)
}

/// Reads a crowd-annotation TSV in the "standardized" layout used by
/// several public crowdsourcing releases: tab-separated with header columns
/// `!amt_worker_ids`, `orig_id`, `response` and `gold` (other columns are
/// ignored). Instances keep their order of first appearance.
pub fn read_standardized_tsv(path: &Path, name: &str, space: LabelSpace) -> Result<Dataset, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader =
        csv::ReaderBuilder::new().delimiter(b'\t').has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(file);
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DatasetError::Header {
            path: path.to_path_buf(),
            expected: "!amt_worker_ids, orig_id, response, gold".into(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        })
    };
    let (wc, ic, rc, gc) = (col("!amt_worker_ids")?, col("orig_id")?, col("response")?, col("gold")?);
    let mut instances: Vec<Instance> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(csv_err(path))?;
        let line = line_of(&row);
        let field = |c: usize| row.get(c).ok_or_else(|| row_err(path, line, "missing column"));
        let (worker, id, label, gold) = (field(wc)?, field(ic)?, field(rc)?, field(gc)?);
        for l in [label, gold] {
            if !space.contains(l) {
                return Err(row_err(path, line, format!("label `{l}` is not in the label space")));
            }
        }
        let k = *index.entry(id.to_string()).or_insert_with(|| {
            instances.push(Instance { gold: Some(gold.to_string()), ..Instance::new(id) });
            instances.len() - 1
        });
        if instances[k].gold.as_deref() != Some(gold) {
            return Err(row_err(path, line, format!("conflicting gold labels for `{id}`")));
        }
        if !seen.insert((id.to_string(), worker.to_string())) {
            return Err(row_err(path, line, format!("duplicate label by `{worker}` for `{id}`")));
        }
        records.push(LabelRecord::new(id, worker, label));
    }
    if records.is_empty() {
        return Err(DatasetError::NoRecords { path: path.to_path_buf() });
    }
    Dataset::from_records(name, space, instances, records)
}

/// Writes `d` into `dir` as a manifest plus its files and returns the
/// manifest path.
pub fn write_dataset(d: &Dataset, dir: &Path) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let space_path = dir.join("label_space.txt");
    let mut space_text = String::new();
    for l in d.label_space.labels() {
        if d.label_space.is_abstain(l) {
            space_text.push_str(ABSTAIN_DIRECTIVE);
        }
        space_text.push_str(l);
        space_text.push('\n');
    }
    fs::write(&space_path, space_text).map_err(io_err(&space_path))?;

    let labels_path = dir.join("labels.csv");
    write_labels_csv(&labels_path, &d.records)?;

    let instances_path = dir.join("instances.csv");
    {
        let mut w = csv::Writer::from_path(&instances_path).map_err(csv_err(&instances_path))?;
        w.write_record(["instance_id", "text", "options"]).map_err(csv_err(&instances_path))?;
        for i in &d.instances {
            let opts = i.options.as_ref().map(|o| o.join("|")).unwrap_or_default();
            w.write_record([i.id.as_str(), i.text.as_deref().unwrap_or(""), opts.as_str()])
                .map_err(csv_err(&instances_path))?;
        }
        w.flush().map_err(io_err(&instances_path))?;
    }

    let gold_path = dir.join("gold.csv");
    let has_gold = d.has_gold();
    if has_gold {
        let mut w = csv::Writer::from_path(&gold_path).map_err(csv_err(&gold_path))?;
        w.write_record(["instance_id", "label"]).map_err(csv_err(&gold_path))?;
        for i in &d.instances {
            if let Some(g) = &i.gold {
                w.write_record([i.id.as_str(), g.as_str()]).map_err(csv_err(&gold_path))?;
            }
        }
        w.flush().map_err(io_err(&gold_path))?;
    }

    let manifest = Manifest {
        name: d.name.clone(),
        label_space: "label_space.txt".into(),
        labels: "labels.csv".into(),
        instances: Some("instances.csv".into()),
        gold: has_gold.then(|| "gold.csv".into()),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

/// Writes records as a labels CSV in the given order.
pub fn write_labels_csv(path: &Path, records: &[LabelRecord]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["instance_id", "worker_id", "label"]).map_err(csv_err(path))?;
    for r in records {
        w.write_record([r.instance_id.as_str(), r.worker_id.as_str(), r.label.as_str()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rte.tsv");
        fs::write(
            &p,
            "!amt_annotation_ids\t!amt_worker_ids\torig_id\tresponse\tgold\n\
             1\tA1\t10\t1\t1\n2\tA2\t10\t0\t1\n3\tA1\t7\t0\t0\n",
        )
        .unwrap();
        let space = LabelSpace::new(["0", "1", "unsure"], ["unsure"]).unwrap();
        let d = read_standardized_tsv(&p, "rte", space.clone()).unwrap();
        assert_eq!(d.records.len(), 3);
        assert_eq!(d.instances.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["10", "7"]);
        assert_eq!(d.gold()["10"], "1");
        assert_eq!(d.workers.len(), 2);

        fs::write(&p, "!amt_worker_ids\torig_id\tresponse\tgold\nA1\t10\t1\t1\nA2\t10\t1\t0\n").unwrap();
        assert!(read_standardized_tsv(&p, "rte", space.clone()).is_err());
        fs::write(&p, "worker\titem\tlabel\nA1\t10\t1\n").unwrap();
        assert!(matches!(read_standardized_tsv(&p, "rte", space), Err(DatasetError::Header { .. })));
    }

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn manifest(dir: &Path, extra: &str) -> PathBuf {
        let p = dir.join("manifest.json");
        write(
            dir,
            "manifest.json",
            &format!(r#"{{"name":"t","label_space":"space.txt","labels":"labels.csv"{extra}}}"#),
        );
        p
    }

    #[test]
    fn label_space_file_with_abstain_directive() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "0\n1\n!abstain unsure\n\n");
        let s = read_label_space(&dir.path().join("space.txt")).unwrap();
        assert_eq!(s.labels(), ["0", "1", "unsure"]);
        assert_eq!(s.abstain_labels(), ["unsure"]);
    }

    #[test]
    fn empty_labels_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "a\nb\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\n");
        let err = load_dataset(&manifest(dir.path(), "")).unwrap_err();
        assert!(matches!(err, DatasetError::NoRecords { .. }));
        assert!(err.to_string().contains("no records"));
    }

    #[test]
    fn unknown_label_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "true\nfalse\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\ni1,w1,true\ni2,w1,maybe\n");
        let err = load_dataset(&manifest(dir.path(), "")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("labels.csv:3"), "{msg}");
        assert!(msg.contains("maybe"), "{msg}");
    }

    #[test]
    fn duplicate_pairs_keep_last() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "a\nb\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\ni1,w1,a\ni2,w1,a\ni1,w1,b\n");
        let d = load_dataset(&manifest(dir.path(), "")).unwrap();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records[0], LabelRecord::new("i1", "w1", "b"));
    }

    #[test]
    fn labels_are_trimmed_but_not_case_folded() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "Yes\nNo\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\ni1,w1, Yes \n");
        assert!(load_dataset(&manifest(dir.path(), "")).is_ok());
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\ni1,w1,yes\n");
        assert!(load_dataset(&manifest(dir.path(), "")).is_err());
    }

    #[test]
    fn gold_with_dangling_instance_fails() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "a\nb\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\ni1,w1,a\n");
        write(dir.path(), "gold.csv", "instance_id,label\ni9,a\n");
        let err = load_dataset(&manifest(dir.path(), r#","gold":"gold.csv""#)).unwrap_err();
        assert!(err.to_string().contains("i9"));
    }

    #[test]
    fn gold_may_cover_subset() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "a\nb\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\ni1,w1,a\ni2,w1,b\n");
        write(dir.path(), "gold.csv", "instance_id,label\ni2,b\n");
        let d = load_dataset(&manifest(dir.path(), r#","gold":"gold.csv""#)).unwrap();
        assert_eq!(d.gold().len(), 1);
    }

    #[test]
    fn labels_referencing_unlisted_instance_fail() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "a\nb\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\ni1,w1,a\ni2,w1,b\n");
        write(dir.path(), "instances.csv", "instance_id,text,options\ni1,hello,\n");
        let err = load_dataset(&manifest(dir.path(), r#","instances":"instances.csv""#)).unwrap_err();
        assert!(err.to_string().contains("i2"));
    }

    #[test]
    fn instances_csv_parses_options() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "A\nB\nC\n");
        write(dir.path(), "labels.csv", "instance_id,worker_id,label\nq1,w1,A\n");
        write(dir.path(), "instances.csv", "instance_id,text,options\nq1,\"Pick, one\",red|green|blue\n");
        let d = load_dataset(&manifest(dir.path(), r#","instances":"instances.csv""#)).unwrap();
        assert_eq!(d.instances[0].text.as_deref(), Some("Pick, one"));
        assert_eq!(d.instances[0].options.as_ref().unwrap(), &["red", "green", "blue"]);
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "a\nb\n");
        let err = load_dataset(&manifest(dir.path(), "")).unwrap_err();
        assert!(err.to_string().contains("labels.csv"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "space.txt", "a\nb\n");
        write(dir.path(), "labels.csv", "item,annotator,label\ni1,w1,a\n");
        assert!(matches!(load_dataset(&manifest(dir.path(), "")).unwrap_err(), DatasetError::Header { .. }));
    }
}
