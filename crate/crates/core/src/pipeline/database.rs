//! Labelled cell collections and their line-oriented file format.
//!
//! ```text
//! #metadb v1 50 50 16 1 0.49
//! 0<TAB>base64(bit-packed cells)<TAB>C11,C12,C22,C33[<TAB>z1,...,zJ]
//! ...
//! #checksum sha256 <hex digest of every preceding byte>
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is lossless.

use super::PipelineError;
use crate::homogenization::{MaterialSpec, PropertyScaler, StiffnessComponents};
use crate::microstructure::Microstructure;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

pub const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub structure: Microstructure,
    pub properties: StiffnessComponents,
    pub latent: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    pub material: MaterialSpec,
    records: Vec<Record>,
    ids: HashSet<u64>,
}

impl Database {
    pub fn new(height: usize, width: usize, latent_dim: usize, material: MaterialSpec) -> Self {
        Self { height, width, latent_dim, material, records: Vec::new(), ids: HashSet::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Smallest id not yet used.
    pub fn next_id(&self) -> u64 {
        self.records.iter().map(|r| r.id + 1).max().unwrap_or(0)
    }

    /// Appends a record after checking id uniqueness, grid size, finiteness and latent length.
    pub fn insert(&mut self, mut record: Record) -> Result<(), PipelineError> {
        if self.ids.contains(&record.id) {
            return Err(PipelineError::Invalid(format!("duplicate record id {}", record.id)));
        }
        if (record.structure.height(), record.structure.width()) != (self.height, self.width) {
            return Err(PipelineError::Invalid(format!(
                "record {} is {}x{}, database holds {}x{}",
                record.id,
                record.structure.height(),
                record.structure.width(),
                self.height,
                self.width
            )));
        }
        if !record.properties.is_finite() {
            return Err(PipelineError::Invalid(format!("record {} has non-finite properties", record.id)));
        }
        if let Some(z) = &record.latent {
            if z.len() != self.latent_dim || z.iter().any(|v| !v.is_finite()) {
                return Err(PipelineError::Invalid(format!("record {} has a bad latent vector", record.id)));
            }
        }
        self.ids.insert(record.id);
        record.structure.id = Some(record.id);
        self.records.push(record);
        Ok(())
    }

    pub fn set_latent(&mut self, index: usize, z: Vec<f64>) -> Result<(), PipelineError> {
        if z.len() != self.latent_dim {
            return Err(PipelineError::Invalid(format!("latent length {} != {}", z.len(), self.latent_dim)));
        }
        self.records[index].latent = Some(z);
        Ok(())
    }

    pub fn properties(&self) -> Vec<StiffnessComponents> {
        self.records.iter().map(|r| r.properties).collect()
    }

    /// Standardization fitted to the stored properties.
    pub fn scaler(&self) -> PropertyScaler {
        PropertyScaler::fit(&self.properties())
    }

    /// Order-sensitive digest of ids, bitmaps and property bits.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.id.to_le_bytes());
            h.update(r.structure.bitmap_hash());
            for v in r.properties.to_array() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Componentwise minimum and maximum of the stored properties.
    pub fn property_bounds(&self) -> Option<([f64; 4], [f64; 4])> {
        let first = self.records.first()?.properties.to_array();
        let mut lo = first;
        let mut hi = first;
        for r in &self.records {
            for (k, v) in r.properties.to_array().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        Some((lo, hi))
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Serializes the database including the checksum trailer.
pub fn database_to_string(db: &Database) -> String {
    let mut s = String::new();
    let m = &db.material;
    let _ = writeln!(
        s,
        "#metadb {FORMAT_VERSION} {} {} {} {} {}",
        db.height, db.width, db.latent_dim, m.youngs_modulus, m.poisson_ratio
    );
    for r in &db.records {
        let _ = write!(
            s,
            "{}\t{}\t{}",
            r.id,
            STANDARD.encode(r.structure.to_packed_bits()),
            join_floats(&r.properties.to_array())
        );
        if let Some(z) = &r.latent {
            let _ = write!(s, "\t{}", join_floats(z));
        }
        s.push('\n');
    }
    let digest = Sha256::digest(s.as_bytes());
    let _ = writeln!(s, "#checksum sha256 {}", hex(&digest));
    s
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_floats(field: &str, line: usize, what: &str) -> Result<Vec<f64>, PipelineError> {
    field
        .split(',')
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PipelineError::Malformed { line, message: format!("bad {what} value `{t}`") })
        })
        .collect()
}

/// Parses and verifies a serialized database.
pub fn database_from_str(text: &str) -> Result<Database, PipelineError> {
    let malformed = |line: usize, message: String| PipelineError::Malformed { line, message };
    let mut lines = text.split_inclusive('\n').enumerate();
    let (_, head) = lines.next().ok_or_else(|| malformed(1, "empty file".into()))?;
    let fields: Vec<&str> = head.trim_end().split_whitespace().collect();
    if fields.first() != Some(&"#metadb") || fields.len() != 7 {
        return Err(malformed(1, "expected `#metadb <version> H W J E nu`".into()));
    }
    if fields[1] != FORMAT_VERSION {
        return Err(PipelineError::Version(fields[1].to_string()));
    }
    let num = |i: usize| fields[i].parse::<usize>().map_err(|_| malformed(1, format!("bad header field `{}`", fields[i])));
    let flt = |i: usize| fields[i].parse::<f64>().map_err(|_| malformed(1, format!("bad header field `{}`", fields[i])));
    let material = MaterialSpec { youngs_modulus: flt(5)?, poisson_ratio: flt(6)?, ..MaterialSpec::default() };
    material.validate().map_err(|e| malformed(1, e.to_string()))?;
    let mut db = Database::new(num(2)?, num(3)?, num(4)?, material);
    let mut consumed = head.len();
    for (i, raw) in lines {
        let line_no = i + 1;
        if let Some(rest) = raw.strip_prefix("#checksum") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 2 || parts[0] != "sha256" || !raw.ends_with('\n') {
                return Err(malformed(line_no, "malformed checksum trailer".into()));
            }
            if parts[1] != hex(&Sha256::digest(&text.as_bytes()[..consumed])) {
                return Err(PipelineError::Checksum);
            }
            if consumed + raw.len() != text.len() {
                return Err(malformed(line_no + 1, "data after checksum trailer".into()));
            }
            return Ok(db);
        }
        if !raw.ends_with('\n') {
            return Err(malformed(line_no, "truncated record".into()));
        }
        let cols: Vec<&str> = raw.trim_end_matches('\n').split('\t').collect();
        if cols.len() != 3 && cols.len() != 4 {
            return Err(malformed(line_no, format!("expected 3 or 4 tab-separated fields, found {}", cols.len())));
        }
        let id: u64 = cols[0].parse().map_err(|_| malformed(line_no, format!("bad id `{}`", cols[0])))?;
        let bits = STANDARD.decode(cols[1]).map_err(|e| malformed(line_no, format!("bad base64: {e}")))?;
        let structure = Microstructure::from_packed_bits(db.height, db.width, &bits)
            .map_err(|e| malformed(line_no, e.to_string()))?;
        let p = parse_floats(cols[2], line_no, "property")?;
        if p.len() != 4 {
            return Err(malformed(line_no, format!("expected 4 properties, found {}", p.len())));
        }
        let latent = match cols.get(3) {
            Some(f) => Some(parse_floats(f, line_no, "latent")?),
            None => None,
        };
        let record = Record { id, structure, properties: StiffnessComponents::from_array([p[0], p[1], p[2], p[3]]), latent };
        db.insert(record).map_err(|e| malformed(line_no, e.to_string()))?;
        consumed += raw.len();
    }
    Err(malformed(text.lines().count() + 1, "missing checksum trailer (file truncated?)".into()))
}

pub fn save_database(db: &Database, path: &Path) -> Result<(), PipelineError> {
    std::fs::write(path, database_to_string(db))?;
    Ok(())
}

pub fn load_database(path: &Path) -> Result<Database, PipelineError> {
    database_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_db() -> Database {
        let mut db = Database::new(6, 6, 2, MaterialSpec::default());
        for id in 0..5u64 {
            let m = Microstructure::from_fn(6, 6, |r, c| (r * 7 + c * 3 + id as usize) % 4 != 0).with_id(id);
            let latent = (id % 2 == 0).then(|| vec![0.1 * id as f64, -1.0 / 3.0]);
            let c = StiffnessComponents::new(0.1 + id as f64 / 7.0, 0.03, 0.2, 1e-17);
            db.insert(Record { id, structure: m, properties: c, latent }).unwrap();
        }
        db
    }

    #[test]
    fn round_trip_is_lossless() {
        let db = sample_db();
        let text = database_to_string(&db);
        let back = database_from_str(&text).unwrap();
        assert_eq!(back, db);
        assert_eq!(database_to_string(&back), text);
        for (a, b) in db.records().iter().zip(back.records()) {
            assert_eq!(a.structure.bitmap_hash(), b.structure.bitmap_hash());
        }
    }

    #[test]
    fn empty_database_is_header_plus_trailer() {
        let db = Database::new(50, 50, 16, MaterialSpec::default());
        let text = database_to_string(&db);
        assert!(text.starts_with("#metadb v1 50 50 16 1 0.49\n"));
        assert_eq!(text.lines().count(), 2);
        assert!(database_from_str(&text).unwrap().is_empty());
    }

    #[test]
    fn truncation_reports_a_line_number() {
        let text = database_to_string(&sample_db());
        let cut = &text[..text.len() / 2];
        match database_from_str(cut) {
            Err(PipelineError::Malformed { line, .. }) => assert!(line >= 2),
            other => panic!("unexpected {other:?}"),
        }
        // cut exactly at a line boundary before the trailer
        let no_trailer: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(matches!(database_from_str(&no_trailer), Err(PipelineError::Malformed { line: 5, .. })));
    }

    #[test]
    fn tampering_and_versions_are_detected() {
        let text = database_to_string(&sample_db());
        let tampered = text.replacen("0.03", "0.04", 1);
        assert!(matches!(database_from_str(&tampered), Err(PipelineError::Checksum)));
        let v2 = text.replacen("#metadb v1", "#metadb v2", 1);
        assert!(matches!(database_from_str(&v2), Err(PipelineError::Version(_))));
        let bad = text.replacen("\t", "\tX", 1);
        assert!(matches!(database_from_str(&bad), Err(PipelineError::Malformed { line: 2, .. })));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut db = sample_db();
        let r = db.records()[0].clone();
        assert!(db.insert(r).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_properties_survive_the_file(vals in proptest::collection::vec(-1e6f64..1e6, 4), z in -1e3f64..1e3) {
            let mut db = Database::new(4, 4, 1, MaterialSpec::default());
            let c = StiffnessComponents::from_array([vals[0], vals[1], vals[2], vals[3]]);
            db.insert(Record { id: 9, structure: Microstructure::filled(4, 4, true), properties: c, latent: Some(vec![z]) }).unwrap();
            prop_assert_eq!(database_from_str(&database_to_string(&db)).unwrap(), db);
        }
    }
}
