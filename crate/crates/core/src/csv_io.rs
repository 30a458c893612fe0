//! Paired-feature CSV files.
//!
//! Header `label,a0,…,a{C-1},b0,…,b{C-1}`, then one sample per line with a
//! non-negative integer label and `2C` decimal values. Values are written
//! with 9 significant digits and LF line endings.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::round_sig9;
use crate::types::{Dataset, FeatureVector, PairedSample};

pub fn header(dim: usize) -> Vec<String> {
    std::iter::once("label".to_string())
        .chain((0..dim).map(|i| format!("a{i}")))
        .chain((0..dim).map(|i| format!("b{i}")))
        .collect()
}

/// Writes `dataset` in the paired-feature format.
pub fn write_features_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(dataset.dim()))?;
    let mut row = Vec::with_capacity(1 + 2 * dataset.dim());
    for s in dataset.samples() {
        row.clear();
        row.push(s.label.to_string());
        for v in s.view_a.as_slice().iter().chain(s.view_b.as_slice()) {
            row.push(round_sig9(*v).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_features_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_features_csv(dataset, file)
}

/// Parses the paired-feature format. `num_classes` defaults to one more than
/// the largest label seen.
pub fn read_features_csv<R: Read>(input: R, num_classes: Option<usize>, path: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = reader.records();

    let head = match records.next() {
        None => return Err(Error::invalid(format!("{}: file is empty", path.display()))),
        Some(r) => r?,
    };
    let fields = head.len();
    if fields < 3 || fields % 2 == 0 {
        return Err(parse_err(1, format!("header has {fields} fields, expected 1 + 2C")));
    }
    let dim = (fields - 1) / 2;
    if head.iter().ne(header(dim).iter().map(String::as_str)) {
        return Err(parse_err(1, format!("header must read `{}`", header(dim).join(","))));
    }

    let mut samples = Vec::new();
    let mut max_label = 0;
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != fields {
            return Err(parse_err(line, format!("expected {fields} fields, found {}", record.len())));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("label `{}` is not a non-negative integer", &record[0])))?;
        if let Some(l) = num_classes {
            if label >= l {
                return Err(parse_err(line, format!("label {label} out of range for {l} classes")));
            }
        }
        max_label = max_label.max(label);
        let mut values = Vec::with_capacity(2 * dim);
        for (k, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("field {} (`{field}`) is not a number", &head[k])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("field {} is not finite", &head[k])));
            }
            values.push(v);
        }
        let view_b = values.split_off(dim);
        samples.push(PairedSample::new(FeatureVector::new(values)?, FeatureVector::new(view_b)?, label)?);
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{}: no samples after the header", path.display())));
    }
    Dataset::new(samples, num_classes.unwrap_or(max_label + 1), dim)
}

pub fn load_features_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    read_features_csv(File::open(path)?, num_classes, path)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn read(text: &str, l: Option<usize>) -> Result<Dataset> {
        read_features_csv(text.as_bytes(), l, Path::new("mem.csv"))
    }

    fn write(d: &Dataset) -> String {
        let mut buf = Vec::new();
        write_features_csv(d, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn exact_layout() {
        let d = read("label,a0,a1,b0,b1\n1,0.5,-2,3.25,1e-3\n0,0,0,0,0\n", None).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes()), (2, 2, 2));
        assert_eq!(d.samples()[0].view_b.as_slice(), &[3.25, 0.001]);
        assert_eq!(write(&d), "label,a0,a1,b0,b1\n1,0.5,-2,3.25,0.001\n0,0,0,0,0\n");
    }

    #[test]
    fn ragged_row_names_line() {
        let text = "label,a0,a1,a2,a3,b0,b1,b2,b3\n0,1,2,3,4,5,6,7,8\n1,1,2,3,4,5,6\n";
        match read(text, None) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("expected 9 fields, found 7"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(read("", None), Err(Error::InvalidInput(_))));
        assert!(matches!(read("label,a0,b0\n", None), Err(Error::InvalidInput(_))));
        assert!(matches!(read("label,x0,b0\n0,1,2\n", None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read("label,a0,a1,b0\n0,1,2,3\n", None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read("label,a0,b0\n0,1,2\n5,1,2\n", Some(3)), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(read("label,a0,b0\n0,nan,2\n", None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read("label,a0,b0\n0,inf,2\n", None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read("label,a0,b0\n-1,0,2\n", None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read("label,a0,b0\n0,zz,2\n", None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn explicit_class_count() {
        let d = read("label,a0,b0\n0,1,2\n", Some(7)).unwrap();
        assert_eq!(d.num_classes(), 7);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let d = read("label,a0,b0\n2,0.123456789,-7\n1,1,2\n", None).unwrap();
        save_features_csv(&d, &path).unwrap();
        assert_eq!(load_features_csv(&path, None).unwrap(), d);
        assert!(matches!(load_features_csv(&dir.path().join("missing.csv"), None), Err(Error::Io(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_at_nine_digits(
            rows in (1usize..6).prop_flat_map(|c| proptest::collection::vec(
                (0usize..5, proptest::collection::vec(-1e6f64..1e6, 2 * c)), 1..20))
        ) {
            let c = rows[0].1.len() / 2;
            let samples: Vec<PairedSample> = rows.iter().map(|(l, v)| {
                let v: Vec<f64> = v.iter().copied().map(round_sig9).collect();
                PairedSample::new(
                    FeatureVector::new(v[..c].to_vec()).unwrap(),
                    FeatureVector::new(v[c..].to_vec()).unwrap(),
                    *l,
                ).unwrap()
            }).collect();
            let d = Dataset::new(samples, 5, c).unwrap();
            let text = write(&d);
            let back = read(&text, Some(5)).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(write(&back), text);
        }
    }
}
