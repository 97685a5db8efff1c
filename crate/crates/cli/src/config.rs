//! Experiment configuration files.
//!
//! The grammar is TOML restricted to one level of `[section]` tables
//! holding scalar or list values. Every error names the offending field as
//! `section.key` together with the line it sits on (or the section header
//! when the key is missing).

use mmvlab::Error;
use std::path::{Path, PathBuf};
use toml::{Table, Value};

/// A parsed configuration file with typed, line-aware accessors.
#[derive(Clone, Debug)]
pub struct Config {
    text: String,
    table: Table,
    /// Directory against which relative paths resolve.
    base: PathBuf,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, Error> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(0),
            field: String::new(),
            message: e.message().to_string(),
        })?;
        for (name, v) in &table {
            let Value::Table(section) = v else {
                return Err(Error::Config {
                    line: find_line(text, None, name),
                    field: name.clone(),
                    message: "top-level keys must sit inside a [section]".into(),
                });
            };
            for (key, v) in section {
                if matches!(v, Value::Table(_)) {
                    return Err(Error::Config {
                        line: find_line(text, Some(name), key),
                        field: format!("{name}.{key}"),
                        message: "nested tables are not part of the grammar".into(),
                    });
                }
            }
        }
        Ok(Self {
            text: text.to_owned(),
            table,
            base: base.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.table.contains_key(section)
    }

    /// Error for `section.key` located at its line.
    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: find_line(&self.text, Some(section), key),
            field: format!("{section}.{key}"),
            message: message.into(),
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.table.get(section)?.as_table()?.get(key)
    }

    fn require(&self, section: &str, key: &str) -> Result<&Value, Error> {
        self.get(section, key).ok_or_else(|| self.error(section, key, "missing"))
    }

    /// Rejects keys of `section` outside `allowed`.
    pub fn check_keys(&self, section: &str, allowed: &[&str]) -> Result<(), Error> {
        if let Some(Value::Table(t)) = self.table.get(section) {
            for key in t.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(self.error(section, key, format!("unknown key; expected one of {allowed:?}")));
                }
            }
        }
        Ok(())
    }

    /// Rejects sections outside `allowed`.
    pub fn check_sections(&self, allowed: &[&str]) -> Result<(), Error> {
        for name in self.table.keys() {
            if !allowed.contains(&name.as_str()) {
                return Err(Error::Config {
                    line: find_line(&self.text, None, name),
                    field: name.clone(),
                    message: format!("unknown section; expected one of {allowed:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn string(&self, section: &str, key: &str) -> Result<String, Error> {
        match self.require(section, key)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(self.error(section, key, "expected a string")),
        }
    }

    pub fn opt_string(&self, section: &str, key: &str) -> Result<Option<String>, Error> {
        self.get(section, key).map(|_| self.string(section, key)).transpose()
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64, Error> {
        as_f64(self.require(section, key)?).ok_or_else(|| self.error(section, key, "expected a number"))
    }

    pub fn opt_f64(&self, section: &str, key: &str) -> Result<Option<f64>, Error> {
        self.get(section, key).map(|_| self.f64(section, key)).transpose()
    }

    /// A strictly positive finite number.
    pub fn positive(&self, section: &str, key: &str) -> Result<f64, Error> {
        let v = self.f64(section, key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(self.error(section, key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize, Error> {
        match self.require(section, key)? {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(self.error(section, key, "expected a nonnegative integer")),
        }
    }

    pub fn opt_usize(&self, section: &str, key: &str) -> Result<Option<usize>, Error> {
        self.get(section, key).map(|_| self.usize(section, key)).transpose()
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<u64, Error> {
        match self.require(section, key)? {
            Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            _ => Err(self.error(section, key, "expected a nonnegative integer")),
        }
    }

    pub fn bool(&self, section: &str, key: &str) -> Result<bool, Error> {
        match self.require(section, key)? {
            Value::Boolean(b) => Ok(*b),
            _ => Err(self.error(section, key, "expected true or false")),
        }
    }

    pub fn opt_bool(&self, section: &str, key: &str) -> Result<Option<bool>, Error> {
        self.get(section, key).map(|_| self.bool(section, key)).transpose()
    }

    /// A nonempty list of numbers.
    pub fn f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>, Error> {
        let Value::Array(items) = self.require(section, key)? else {
            return Err(self.error(section, key, "expected a list of numbers"));
        };
        if items.is_empty() {
            return Err(self.error(section, key, "list must be nonempty"));
        }
        items
            .iter()
            .map(|v| as_f64(v).ok_or_else(|| self.error(section, key, "expected a list of numbers")))
            .collect()
    }

    pub fn opt_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, Error> {
        self.get(section, key).map(|_| self.f64_list(section, key)).transpose()
    }

    /// A nonempty list of nonnegative integers.
    pub fn usize_list(&self, section: &str, key: &str) -> Result<Vec<usize>, Error> {
        let Value::Array(items) = self.require(section, key)? else {
            return Err(self.error(section, key, "expected a list of integers"));
        };
        if items.is_empty() {
            return Err(self.error(section, key, "list must be nonempty"));
        }
        items
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                _ => Err(self.error(section, key, "expected a list of nonnegative integers")),
            })
            .collect()
    }

    /// A path relative to the config file's directory.
    pub fn path(&self, section: &str, key: &str) -> Result<PathBuf, Error> {
        Ok(self.resolve(Path::new(&self.string(section, key)?)))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Line of `key = …` inside `[section]` (or of `[key]` itself when
/// `section` is `None`), falling back to the section header, then 0.
fn find_line(text: &str, section: Option<&str>, key: &str) -> usize {
    let mut current: Option<String> = None;
    let mut header = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = Some(name.trim().to_owned());
            if section.is_none() && name.trim() == key {
                return i + 1;
            }
            if section == Some(name.trim()) {
                header = i + 1;
            }
            continue;
        }
        if let (Some(s), Some(c)) = (section, &current) {
            if s == c {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim().trim_matches('"') == key {
                        return i + 1;
                    }
                }
            }
        }
        if section.is_none() && current.is_none() {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "[experiment]\nid = \"x\"\nseed = 3\n\n[schedule]\nrho = []\nk = 4\nlam = [1, 0.5]\n";

    fn cfg() -> Config {
        Config::parse(TEXT, Path::new(".")).unwrap()
    }

    fn line_and_field(e: Error) -> (usize, String) {
        match e {
            Error::Config { line, field, .. } => (line, field),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn typed_access() {
        let c = cfg();
        assert_eq!(c.string("experiment", "id").unwrap(), "x");
        assert_eq!(c.u64("experiment", "seed").unwrap(), 3);
        assert_eq!(c.f64_list("schedule", "lam").unwrap(), vec![1.0, 0.5]);
        assert_eq!(c.f64("schedule", "k").unwrap(), 4.0);
    }

    #[test]
    fn errors_name_field_and_line() {
        let c = cfg();
        assert_eq!(line_and_field(c.f64_list("schedule", "rho").unwrap_err()), (6, "schedule.rho".into()));
        assert_eq!(line_and_field(c.f64("schedule", "missing").unwrap_err()), (5, "schedule.missing".into()));
        assert_eq!(line_and_field(c.string("schedule", "k").unwrap_err()), (7, "schedule.k".into()));
        assert_eq!(line_and_field(c.check_keys("schedule", &["rho", "k"]).unwrap_err()).1, "schedule.lam");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let e = Config::parse("[a]\nx = 1\ny = = 2\n", Path::new(".")).unwrap_err();
        assert_eq!(line_and_field(e).0, 3);
        let e = Config::parse("x = 1\n", Path::new(".")).unwrap_err();
        assert_eq!(line_and_field(e), (1, "x".into()));
    }
}
