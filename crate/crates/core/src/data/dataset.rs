use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One labeled face on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFaceRecord {
    pub image_path: PathBuf,
    pub age_years: u32,
    pub gender: u8,
}

/// Parse the `[age]_[gender]_[race]_[stamp].ext` filename convention; only
/// the first two fields matter.
pub fn parse_labeled_filename(name: &str) -> Result<(u32, u8)> {
    let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name);
    let fields: Vec<&str> = stem.split('_').collect();
    if fields.len() < 4 {
        return Err(Error::invalid(format!(
            "{name}: expected at least 4 underscore-separated fields"
        )));
    }
    let age: u32 = fields[0]
        .parse()
        .map_err(|_| Error::invalid(format!("{name}: age field {:?} not numeric", fields[0])))?;
    let gender: u8 = fields[1]
        .parse()
        .map_err(|_| Error::invalid(format!("{name}: gender field {:?} not numeric", fields[1])))?;
    if gender > 1 {
        return Err(Error::invalid(format!("{name}: gender must be 0 or 1")));
    }
    Ok((age, gender))
}

/// Scan a directory of labeled faces. Files with unparsable names are
/// skipped with a warning, not an error. Results are sorted by filename so
/// every scan of the same tree is identical.
pub fn scan_labeled_dir(dir: impl AsRef<Path>) -> Result<Vec<LabeledFaceRecord>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
            )
        })
        .collect();
    names.sort();

    let mut records = Vec::new();
    for path in names {
        let Some(fname) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        match parse_labeled_filename(fname) {
            Ok((age_years, gender)) => records.push(LabeledFaceRecord {
                image_path: path,
                age_years,
                gender,
            }),
            Err(e) => log::warn!("skipping {fname}: {e}"),
        }
    }
    Ok(records)
}

/// One father-mother-child record. Paths are resolved against the CSV's
/// directory at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub family_id: String,
    pub father_path: PathBuf,
    pub mother_path: PathBuf,
    pub child_path: PathBuf,
    pub child_age_years: u32,
    pub child_gender: u8,
}

const TRIPLET_HEADER: [&str; 6] = [
    "family_id",
    "father",
    "mother",
    "child",
    "child_age",
    "child_gender",
];

/// Read a triplet CSV (`family_id,father,mother,child,child_age,child_gender`)
/// and verify that every referenced image exists.
pub fn load_triplets(csv_path: impl AsRef<Path>) -> Result<Vec<TripletRecord>> {
    let csv_path = csv_path.as_ref();
    let base = csv_path.parent().unwrap_or(Path::new("."));
    let path_str = csv_path.display().to_string();
    let row_err = |line: u64, msg: String| Error::CsvRow {
        path: path_str.clone(),
        line,
        msg,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| Error::invalid(format!("{path_str}: {e}")))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(format!("{path_str}: {e}")))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != TRIPLET_HEADER {
        return Err(Error::invalid(format!(
            "{path_str}: header {got:?}, expected {TRIPLET_HEADER:?}"
        )));
    }

    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| Error::invalid(format!("{path_str}: {e}")))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(records.len() as u64 + 2);
        if record.len() != 6 {
            return Err(row_err(line, format!("expected 6 fields, got {}", record.len())));
        }
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        for i in 1..=3 {
            if field(i).is_empty() {
                return Err(row_err(line, format!("missing {} path", TRIPLET_HEADER[i])));
            }
        }
        let resolve = |rel: String, role: &str| -> Result<PathBuf> {
            let p = base.join(&rel);
            if !p.is_file() {
                return Err(row_err(line, format!("{role} path {rel:?} does not exist")));
            }
            Ok(p)
        };
        let child_age_years: u32 = field(4)
            .parse()
            .map_err(|_| row_err(line, format!("child_age {:?} not numeric", field(4))))?;
        let child_gender: u8 = field(5)
            .parse()
            .map_err(|_| row_err(line, format!("child_gender {:?} not numeric", field(5))))?;
        if child_gender > 1 {
            return Err(row_err(line, "child_gender must be 0 or 1".into()));
        }
        records.push(TripletRecord {
            family_id: field(0),
            father_path: resolve(field(1), "father")?,
            mother_path: resolve(field(2), "mother")?,
            child_path: resolve(field(3), "child")?,
            child_age_years,
            child_gender,
        });
    }
    Ok(records)
}

/// Write a triplet CSV with paths relative to the CSV's directory.
pub fn write_triplets_csv(
    csv_path: impl AsRef<Path>,
    rows: &[(String, String, String, String, u32, u8)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path.as_ref())
        .map_err(|e| Error::invalid(format!("{}: {e}", csv_path.as_ref().display())))?;
    w.write_record(TRIPLET_HEADER)
        .map_err(|e| Error::invalid(e.to_string()))?;
    for (fam, f, m, c, age, gender) in rows {
        w.write_record([fam, f, m, c, &age.to_string(), &gender.to_string()])
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Stable 64-bit FNV-1a. Used for the family split so it never changes
/// across platforms or library versions.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash-split by family id so no family straddles the two sides.
/// `test_fraction` of the hash space goes to the second list.
pub fn split_by_family(
    records: &[TripletRecord],
    test_fraction: f64,
) -> (Vec<TripletRecord>, Vec<TripletRecord>) {
    let threshold = ((1.0 - test_fraction).clamp(0.0, 1.0) * 10_000.0) as u64;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in records {
        if fnv1a(&r.family_id) % 10_000 < threshold {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn filename_parsing() {
        assert_eq!(parse_labeled_filename("25_0_1_20170116.jpg").unwrap(), (25, 0));
        assert_eq!(parse_labeled_filename("5_1_0_x.jpg").unwrap(), (5, 1));
        assert!(parse_labeled_filename("badname.jpg").is_err());
        assert!(parse_labeled_filename("a_b_c_d.jpg").is_err());
        assert!(parse_labeled_filename("5_7_0_x.jpg").is_err()); // gender out of range
    }

    #[test]
    fn scan_skips_malformed_names() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::ImageBuffer::<image::Rgb<u8>, Vec<u8>>::new(4, 4);
        for name in ["30_0_0_a.png", "40_1_0_b.png", "badname.png", "notes.txt"] {
            let p = dir.path().join(name);
            if name.ends_with(".png") {
                img.save_with_format(&p, image::ImageFormat::Png).unwrap();
            } else {
                std::fs::write(&p, "x").unwrap();
            }
        }
        let records = scan_labeled_dir(dir.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].age_years, 30);
        assert_eq!(records[1].gender, 1);
    }

    fn write_fixture(dir: &Path, rows: &str) -> PathBuf {
        let img = image::ImageBuffer::<image::Rgb<u8>, Vec<u8>>::new(4, 4);
        for name in ["f.png", "m.png", "c.png"] {
            img.save_with_format(dir.join(name), image::ImageFormat::Png)
                .unwrap();
        }
        let csv = dir.join("triplets.csv");
        std::fs::write(
            &csv,
            format!("family_id,father,mother,child,child_age,child_gender\n{rows}"),
        )
        .unwrap();
        csv
    }

    #[test]
    fn load_valid_triplets() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_fixture(
            dir.path(),
            "fam1,f.png,m.png,c.png,10,0\n\
             fam2,f.png,m.png,c.png,4,1\n\
             fam3,f.png,m.png,c.png,8,0\n\
             fam4,f.png,m.png,c.png,2,1\n\
             fam5,f.png,m.png,c.png,6,0\n",
        );
        let records = load_triplets(&csv).unwrap();
        assert_eq!(records.len(), 5);
        assert_eq!(records[1].child_age_years, 4);
        assert!(records[0].father_path.is_file());
    }

    #[test]
    fn dangling_path_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_fixture(
            dir.path(),
            "fam1,f.png,m.png,c.png,10,0\nfam2,f.png,m.png,missing.png,4,1\n",
        );
        match load_triplets(&csv) {
            Err(Error::CsvRow { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("missing.png"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("t.csv");
        std::fs::write(&csv, "family,dad,mom,kid\nx,a,b,c\n").unwrap();
        assert!(load_triplets(&csv).is_err());
    }

    #[test]
    fn family_split_is_disjoint_and_stable() {
        let rec = |fam: &str| TripletRecord {
            family_id: fam.to_string(),
            father_path: PathBuf::from("f"),
            mother_path: PathBuf::from("m"),
            child_path: PathBuf::from("c"),
            child_age_years: 5,
            child_gender: 0,
        };
        let records: Vec<TripletRecord> = (0..1000).map(|i| rec(&format!("fam{i:05}"))).collect();
        let (train, test) = split_by_family(&records, 0.2);
        assert_eq!(train.len() + test.len(), 1000);
        // roughly 80/20
        assert!(train.len() > 700 && train.len() < 900, "{}", train.len());

        let train_ids: HashSet<_> = train.iter().map(|r| r.family_id.clone()).collect();
        let test_ids: HashSet<_> = test.iter().map(|r| r.family_id.clone()).collect();
        assert!(train_ids.is_disjoint(&test_ids));

        // duplicated family rows land on the same side
        let mut dup = records.clone();
        dup.push(rec("fam00000"));
        let (tr2, te2) = split_by_family(&dup, 0.2);
        let on_train = tr2.iter().filter(|r| r.family_id == "fam00000").count();
        let on_test = te2.iter().filter(|r| r.family_id == "fam00000").count();
        assert!(on_train == 2 && on_test == 0 || on_train == 0 && on_test == 2);

        // stable across calls
        let (tr3, _) = split_by_family(&records, 0.2);
        assert_eq!(train, tr3);
    }
}
