//! Run manifests: a plain `key=value` file recording the command, its
//! resolved configuration and the exact argument list, so a run can be
//! replayed.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration in insertion order.
    pub config: Vec<(String, String)>,
    /// Arguments after the subcommand name.
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.config.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "command={}", self.command).unwrap();
        for (k, v) in &self.config {
            writeln!(s, "config.{k}={v}").unwrap();
        }
        for a in &self.args {
            writeln!(s, "arg={a}").unwrap();
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = RunManifest::default();
        let mut seen_command = false;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            match k {
                "command" => {
                    m.command = v.to_string();
                    seen_command = true;
                }
                "arg" => m.args.push(v.to_string()),
                _ => match k.strip_prefix("config.") {
                    Some(key) => m.config.push((key.to_string(), v.to_string())),
                    None => return Err(err(format!("unknown key '{k}'"))),
                },
            }
        }
        if !seen_command {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                message: "manifest has no command".into(),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = RunManifest::new("sweep");
        m.set("seed", 7).set("grid", "laplace");
        m.args = vec!["--seed".into(), "7".into(), "--out=a=b.csv".into()];
        let back = RunManifest::parse(&m.render(), Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("seed"), Some("7"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(RunManifest::parse("command=x\nnonsense\n", Path::new("m")).is_err());
        assert!(RunManifest::parse("arg=1\n", Path::new("m")).is_err());
    }
}
