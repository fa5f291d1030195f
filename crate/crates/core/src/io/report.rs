//! Line-oriented text records: a record-type token followed by
//! tab-separated `key`, `value` pairs.
//!
//! ```text
//! epoch<TAB>epoch<TAB>3<TAB>step<TAB>120<TAB>loss<TAB>0.41 ...
//! ```

use std::fmt::{self, Display};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse_field<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::contract(format!("{} record lacks `{key}`", self.kind)))?;
        v.parse()
            .map_err(|_| Error::contract(format!("{} record: `{key}` = `{v}` does not parse", self.kind)))
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut parts = line.split('\t');
        let kind = parts.next().unwrap_or_default().to_string();
        if kind.is_empty() {
            return Err(Error::contract("record without a type token"));
        }
        let rest: Vec<&str> = parts.collect();
        if !rest.len().is_multiple_of(2) {
            return Err(Error::contract(format!("{kind} record has an unpaired key")));
        }
        let fields = rest
            .chunks(2)
            .map(|kv| (kv[0].to_string(), kv[1].to_string()))
            .collect();
        Ok(Self { kind, fields })
    }
}

impl Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.kind)?;
        for (k, v) in &self.fields {
            write!(f, "\t{k}\t{v}")?;
        }
        Ok(())
    }
}

pub fn format_records(records: &[Record]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(Record::parse_line)
        .collect()
}

pub fn write_records(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    fs::write(path, format_records(records))?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    parse_records(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let r = Record::new("epoch").with("epoch", 3).with("loss", 0.25);
        assert_eq!(r.to_string(), "epoch\tepoch\t3\tloss\t0.25");
        let back = parse_records(&format_records(std::slice::from_ref(&r))).unwrap();
        assert_eq!(back, vec![r]);
        assert_eq!(back[0].parse_field::<f64>("loss").unwrap(), 0.25);
        assert!(Record::parse_line("x\tlonely").is_err());
    }
}
