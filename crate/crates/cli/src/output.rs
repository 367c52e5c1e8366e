use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Appends `rows` under `header`. A new or empty file gets the header first;
/// an existing file must already start with exactly that header. All rows go
/// out in one write.
pub fn append_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let existing = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    let mut text = String::new();
    if existing == 0 {
        text.push_str(header);
        text.push('\n');
    } else {
        let mut first = String::new();
        BufReader::new(fs::File::open(path)?).read_line(&mut first)?;
        if first.trim_end() != header {
            bail!(
                "{} has header {:?}, expected {:?}; choose another --out",
                path.display(),
                first.trim_end(),
                header
            );
        }
    }
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes `<out>/runs/<hash>.conf` unless it already exists.
pub fn write_echo(out: &Path, hash: &str, echo: &str) -> Result<()> {
    let dir = out.join("runs");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{hash}.conf"));
    if !path.exists() {
        fs::write(&path, echo).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/r.csv");
        append_csv(&p, "a,b", &["1,2".into()]).unwrap();
        append_csv(&p, "a,b", &["3,4".into()]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n3,4\n");
        assert!(append_csv(&p, "a,c", &[]).is_err());
    }
}
