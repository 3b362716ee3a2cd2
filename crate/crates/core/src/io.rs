//! Plain-text tensor, mask, factor and summary files.
//!
//! A tensor file starts with `tensor v1 <N> <I₁> … <I_N>` and then lists the
//! entries one per line, first index fastest. The mask lives next to it in
//! `<file>.mask` with the same layout and 0/1 entries; without one every entry
//! counts as observed. Values are printed with 17 significant digits, so
//! reading back what was written is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, FactorSet, MaskedTensor};

const TENSOR_MAGIC: &str = "tensor";
const FACTORS_MAGIC: &str = "factors";
const VERSION: &str = "v1";
pub const MANIFEST: &str = "manifest.txt";

pub fn mask_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".mask");
    PathBuf::from(s)
}

pub fn mode_file(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("mode_{n}.txt"))
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated tokens tagged with 1-based line numbers.
fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
}

fn parse_usize(path: &Path, line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.parse().map_err(|_| {
        Error::parse(
            path,
            line,
            format!("{what}: expected a nonnegative integer, got {tok:?}"),
        )
    })
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("expected a number, got {tok:?}")))
}

fn parse_header(path: &Path, text: &str, magic: &str) -> Result<(usize, Vec<usize>)> {
    let (line_no, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let line_no = line_no + 1;
    let mut it = line.split_whitespace();
    if it.next() != Some(magic) || it.next() != Some(VERSION) {
        return Err(Error::parse(
            path,
            line_no,
            format!("header must start with `{magic} {VERSION}`"),
        ));
    }
    let nums = it
        .map(|t| parse_usize(path, line_no, t, "header"))
        .collect::<Result<Vec<_>>>()?;
    Ok((line_no, nums))
}

/// Shape plus `(line number, value)` for every body entry.
type Grid = (Vec<usize>, Vec<(usize, f64)>);

/// Reads the header and the body of a tensor or mask file.
fn read_grid(path: &Path) -> Result<Grid> {
    let text = read_text(path)?;
    let (line_no, nums) = parse_header(path, &text, TENSOR_MAGIC)?;
    let (&n, dims) = nums
        .split_first()
        .ok_or_else(|| Error::parse(path, line_no, "header is missing the mode count"))?;
    if dims.len() != n {
        return Err(Error::parse(
            path,
            line_no,
            format!("header declares {n} modes but lists {} sizes", dims.len()),
        ));
    }
    if n < 2 || dims.contains(&0) {
        return Err(Error::parse(path, line_no, "need at least two modes of positive size"));
    }
    let expected: usize = dims.iter().product();
    let body = text.lines().skip(line_no).collect::<Vec<_>>().join("\n");
    let values = tokens(&body)
        .map(|(l, t)| parse_f64(path, l + line_no, t).map(|v| (l + line_no, v)))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        let line = values.last().map_or(line_no, |&(l, _)| l);
        return Err(Error::parse(
            path,
            line,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok((dims.to_vec(), values))
}

fn render_grid(shape: &[usize], values: impl Iterator<Item = String>) -> String {
    let mut out = format!("{TENSOR_MAGIC} {VERSION} {}", shape.len());
    for d in shape {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    for v in values {
        out.push_str(&v);
        out.push('\n');
    }
    out
}

pub fn write_dense(path: &Path, t: &DenseTensor) -> Result<()> {
    write_text(path, &render_grid(t.shape(), t.data().iter().map(|&v| fmt_value(v))))
}

pub fn read_dense(path: &Path) -> Result<DenseTensor> {
    let (shape, values) = read_grid(path)?;
    DenseTensor::new(shape, values.into_iter().map(|(_, v)| v).collect())
}

/// Writes the values and the sibling mask file.
pub fn write_tensor(path: &Path, t: &MaskedTensor) -> Result<()> {
    write_dense(path, t.values())?;
    let mask = t.mask().iter().map(|&m| if m { "1" } else { "0" }.to_string());
    write_text(&mask_path(path), &render_grid(t.shape(), mask))
}

/// Reads a tensor and, if present, its mask.
pub fn read_tensor(path: &Path) -> Result<MaskedTensor> {
    let values = read_dense(path)?;
    let mpath = mask_path(path);
    if !mpath.exists() {
        return MaskedTensor::fully_observed(values);
    }
    let (shape, entries) = read_grid(&mpath)?;
    if shape != values.shape() {
        return Err(Error::parse(
            &mpath,
            1,
            format!("mask shape {shape:?} differs from tensor shape {:?}", values.shape()),
        ));
    }
    let mut mask = Vec::with_capacity(entries.len());
    for (line, v) in entries {
        mask.push(match v {
            0.0 => false,
            1.0 => true,
            _ => {
                return Err(Error::parse(
                    &mpath,
                    line,
                    format!("mask entries must be 0 or 1, got {v}"),
                ))
            }
        });
    }
    MaskedTensor::new(values, mask)
}

/// One `mode_<n>.txt` per mode plus a manifest with `N`, `R` and the sizes.
pub fn write_factors(dir: &Path, f: &FactorSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("{FACTORS_MAGIC} {VERSION} {} {}\n", f.ndim(), f.rank());
    let dims: Vec<String> = f.shape().iter().map(usize::to_string).collect();
    manifest.push_str(&dims.join(" "));
    manifest.push('\n');
    write_text(&dir.join(MANIFEST), &manifest)?;
    for (n, a) in f.factors().iter().enumerate() {
        let mut text = String::new();
        for i in 0..a.nrows() {
            let row: Vec<String> = (0..a.ncols()).map(|r| fmt_value(a[(i, r)])).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        write_text(&mode_file(dir, n), &text)?;
    }
    Ok(())
}

pub fn read_factors(dir: &Path) -> Result<FactorSet> {
    let mpath = dir.join(MANIFEST);
    let text = read_text(&mpath)?;
    let (line_no, nums) = parse_header(&mpath, &text, FACTORS_MAGIC)?;
    let [n_modes, rank] = nums[..] else {
        return Err(Error::parse(&mpath, line_no, "header must be `factors v1 <N> <R>`"));
    };
    let body = text.lines().skip(line_no).collect::<Vec<_>>().join("\n");
    let dims = tokens(&body)
        .map(|(l, t)| parse_usize(&mpath, l + line_no, t, "mode size"))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() != n_modes || n_modes == 0 {
        return Err(Error::parse(
            &mpath,
            line_no + 1,
            format!("expected {n_modes} mode sizes, found {}", dims.len()),
        ));
    }

    let mut factors = Vec::with_capacity(n_modes);
    for (n, &rows) in dims.iter().enumerate() {
        let path = mode_file(dir, n);
        if !path.exists() {
            return Err(Error::invalid(format!(
                "factor file for mode {n} is missing: {}",
                path.display()
            )));
        }
        let text = read_text(&path)?;
        let mut data = Vec::with_capacity(rows * rank);
        let mut count = 0;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split_whitespace()
                .map(|t| parse_f64(&path, i + 1, t))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != rank {
                return Err(Error::parse(
                    &path,
                    i + 1,
                    format!("expected {rank} columns, found {}", row.len()),
                ));
            }
            data.extend(row);
            count += 1;
        }
        if rank > 0 && count != rows {
            return Err(Error::parse(
                &path,
                count.max(1),
                format!("expected {rows} rows, found {count}"),
            ));
        }
        factors.push(DMatrix::from_row_slice(rows, rank, &data));
    }
    FactorSet::new(factors)
}

/// Run summary shared by every CLI command, one `key=value` per line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    /// Shortest round-tripping form, e.g. `1.0` or `4.6e-12`.
    pub fn set_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.set(key, format!("{value:?}"))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut s = Summary::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
            s.set(k.trim(), v.trim());
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_sibling_name() {
        assert_eq!(mask_path(Path::new("a/b.txt")), PathBuf::from("a/b.txt.mask"));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "tensor v1 3 2 2 2\n1\n2\n3\n4\n5\n6\n7\n").unwrap();
        match read_tensor(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 8);
                assert!(message.contains("expected 8 values, found 7"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fractional_mask_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "tensor v1 2 2 1\n1\n2\n").unwrap();
        fs::write(mask_path(&p), "tensor v1 2 2 1\n1\n0.5\n").unwrap();
        match read_tensor(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("0 or 1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        for head in [
            "tensor v2 2 1 1\n1\n",
            "matrix v1 2 1 1\n1\n",
            "tensor v1 3 1 1\n1\n",
            "tensor v1 2 x 1\n1\n",
        ] {
            fs::write(&p, head).unwrap();
            assert!(matches!(read_tensor(&p), Err(Error::Parse { line: 1, .. })), "{head:?}");
        }
    }

    #[test]
    fn missing_mode_file_names_mode() {
        let dir = tempfile::tempdir().unwrap();
        let f = FactorSet::new(vec![DMatrix::from_element(2, 1, 1.5); 3]).unwrap();
        write_factors(dir.path(), &f).unwrap();
        fs::remove_file(mode_file(dir.path(), 1)).unwrap();
        let err = read_factors(dir.path()).unwrap_err().to_string();
        assert!(err.contains("mode 1"), "{err}");
    }

    #[test]
    fn rank_zero_factors() {
        let dir = tempfile::tempdir().unwrap();
        let f = FactorSet::zeros(&[3, 2, 4], 0);
        write_factors(dir.path(), &f).unwrap();
        let g = read_factors(dir.path()).unwrap();
        assert_eq!(g.rank(), 0);
        assert_eq!(g.shape(), vec![3, 2, 4]);
    }

    #[test]
    fn summary_round_trip() {
        let mut s = Summary::default();
        s.set("rel_err", 1.2345678901234567e-5)
            .set("rank", 2)
            .set("score", "na");
        let back = Summary::parse(&s.render(), Path::new("s")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.get_f64("rel_err"), Some(1.2345678901234567e-5));
    }
}
