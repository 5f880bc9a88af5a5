//! Flat `key = value` files, mixture specs, datasets and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::density::{DensityModel, GaussianMixture};
use crate::error::{Error, Result};
use crate::linalg::Point;
use crate::mean_shift::ModeSet;
use crate::morse::CriticalPoint;

/// Ordered `key = value` pairs with their 1-based line numbers. Blank lines
/// and `#` comments are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) =
                body.split_once('=').ok_or_else(|| Error::parse(line, format!("expected `key = value`, got `{body}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::parse(line, "empty key"));
            }
            if let Some((_, _, first)) = entries.iter().find(|(key, _, _)| key == k) {
                return Err(Error::parse(line, format!("duplicate key `{k}` (first on line {first})")));
            }
            entries.push((k.to_string(), v.to_string(), line));
        }
        if entries.is_empty() {
            return Err(Error::parse(1, "file has no entries"));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, l)| (v.as_str(), *l))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(|(k, _, l)| (k.as_str(), *l))
    }

    /// Line after the last entry, for errors about missing keys.
    pub fn end_line(&self) -> usize {
        self.entries.last().map_or(1, |e| e.2 + 1)
    }

    pub fn required(&self, key: &str) -> Result<(&str, usize)> {
        self.get(key).ok_or_else(|| Error::parse(self.end_line(), format!("missing key `{key}`")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| Error::parse(line, format!("bad value `{v}` for `{key}`"))),
        }
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => parse_list(v, line).map(Some),
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, line: usize) -> Result<Vec<T>> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(Error::parse(line, format!("empty item in list `{v}`")));
    }
    items.iter().map(|s| s.parse().map_err(|_| Error::parse(line, format!("bad list item `{s}`")))).collect()
}

fn finite_list(v: &str, line: usize) -> Result<Vec<f64>> {
    let xs: Vec<f64> = parse_list(v, line)?;
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::parse(line, "non-finite value"));
    }
    Ok(xs)
}

/// The mixture keys: `dim`, `components`, `weight_j`, `mean_j`, `cov_j`
/// (row-major), `j` from 1.
pub const MIXTURE_KEYS: [&str; 2] = ["dim", "components"];

pub fn is_mixture_key(k: &str) -> bool {
    MIXTURE_KEYS.contains(&k) || ["weight_", "mean_", "cov_"].iter().any(|p| k.starts_with(p))
}

pub fn mixture_from_keys(kv: &KeyValues) -> Result<GaussianMixture> {
    let (d_str, d_line) = kv.required("dim")?;
    let d: usize = d_str.parse().map_err(|_| Error::parse(d_line, format!("bad dim `{d_str}`")))?;
    let (k_str, k_line) = kv.required("components")?;
    let k: usize = k_str.parse().map_err(|_| Error::parse(k_line, format!("bad components `{k_str}`")))?;
    if d == 0 || k == 0 {
        return Err(Error::parse(d_line.max(k_line), "dim and components must be positive"));
    }
    for (key, line) in kv.keys() {
        for prefix in ["weight_", "mean_", "cov_"] {
            if let Some(idx) = key.strip_prefix(prefix) {
                match idx.parse::<usize>() {
                    Ok(j) if (1..=k).contains(&j) => {}
                    _ => return Err(Error::parse(line, format!("component index in `{key}` outside 1..={k}"))),
                }
            }
        }
    }
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut last_line = 1;
    for j in 1..=k {
        let (w, wl) = kv.required(&format!("weight_{j}"))?;
        let w: f64 = w.parse().map_err(|_| Error::parse(wl, format!("bad weight `{w}`")))?;
        let (m, ml) = kv.required(&format!("mean_{j}"))?;
        let m = finite_list(m, ml)?;
        if m.len() != d {
            return Err(Error::parse(ml, format!("mean_{j} has {} entries, expected {d}", m.len())));
        }
        let (c, cl) = kv.required(&format!("cov_{j}"))?;
        let c = finite_list(c, cl)?;
        if c.len() != d * d {
            return Err(Error::parse(cl, format!("cov_{j} has {} entries, expected {}", c.len(), d * d)));
        }
        last_line = wl.max(ml).max(cl);
        weights.push(w);
        means.push(Point::from_vec(m));
        covs.push(DMatrix::from_row_slice(d, d, &c));
    }
    GaussianMixture::new(weights, means, covs).map_err(|e| Error::parse(last_line, e.to_string()))
}

pub fn mixture_from_str(text: &str) -> Result<GaussianMixture> {
    let kv = KeyValues::parse(text)?;
    for (key, line) in kv.keys() {
        if !is_mixture_key(key) {
            return Err(Error::parse(line, format!("unknown mixture key `{key}`")));
        }
    }
    mixture_from_keys(&kv)
}

pub fn read_mixture(path: &Path) -> Result<GaussianMixture> {
    mixture_from_str(&std::fs::read_to_string(path)?)
}

/// Writes a mixture in the spec format (round-trips through
/// [`mixture_from_str`] to full precision).
pub fn mixture_to_string(gm: &GaussianMixture) -> String {
    let mut out = format!("dim = {}\ncomponents = {}\n", gm.dim(), gm.num_components());
    let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
    for (j, ((w, m), c)) in gm.weights().iter().zip(gm.means()).zip(gm.covariances()).enumerate() {
        let rows: Vec<f64> = (0..c.nrows()).flat_map(|r| c.row(r).iter().copied().collect::<Vec<_>>()).collect();
        let _ =
            writeln!(out, "weight_{} = {w:e}\nmean_{} = {}\ncov_{} = {}", j + 1, j + 1, join(m.as_slice()), j + 1, join(&rows));
    }
    out
}

/// One point per line, comma- or whitespace-separated, no header. Blank
/// lines are skipped.
pub fn dataset_from_str(text: &str) -> Result<Vec<Point>> {
    let mut out: Vec<Point> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() {
            continue;
        }
        let xs = if body.contains(',') {
            finite_list(body, line)?
        } else {
            finite_list(&body.split_whitespace().collect::<Vec<_>>().join(","), line)?
        };
        if let Some(first) = out.first() {
            if first.len() != xs.len() {
                return Err(Error::parse(line, format!("{} coordinates, expected {}", xs.len(), first.len())));
            }
        }
        out.push(Point::from_vec(xs));
    }
    if out.is_empty() {
        return Err(Error::parse(1, "dataset is empty"));
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Point>> {
    dataset_from_str(&std::fs::read_to_string(path)?)
}

pub fn dataset_to_string(points: &[Point]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&p.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Fixed-precision float for CSV output.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.10e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, fmt_f)
}

fn coord_header(d: usize) -> String {
    (1..=d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

pub const MODES_HEADER: &str = "source,index,kind,morse_index,density";

/// `modes.csv` rows for an estimated mode set and the true critical points.
pub fn modes_csv(dim: usize, estimated: &ModeSet, truth: &[CriticalPoint]) -> String {
    let mut out = format!("{MODES_HEADER},{}\n", coord_header(dim));
    let coords = |p: &Point| p.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(",");
    for (i, (m, d)) in estimated.modes.iter().zip(&estimated.densities).enumerate() {
        let _ = writeln!(out, "estimated,{i},mode,{dim},{},{}", fmt_f(*d), coords(m));
    }
    for (i, c) in truth.iter().enumerate() {
        let _ = writeln!(out, "true,{i},{},{},{},{}", c.kind().as_str(), c.morse_index, fmt_f(c.value), coords(&c.location));
    }
    out
}

/// Per-point labels; empty fields for missing labels.
pub fn labels_csv(points: &[Point], estimated: &[Option<usize>], truth: Option<&[Option<usize>]>) -> String {
    let d = points.first().map_or(0, |p| p.len());
    let mut out = format!("index,{},estimated{}\n", coord_header(d), if truth.is_some() { ",true" } else { "" });
    let lab = |l: &Option<usize>| l.map_or_else(String::new, |v| v.to_string());
    for (i, p) in points.iter().enumerate() {
        let coords = p.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(",");
        let _ = write!(out, "{i},{coords},{}", lab(&estimated[i]));
        if let Some(t) = truth {
            let _ = write!(out, ",{}", lab(&t[i]));
        }
        out.push('\n');
    }
    out
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    const SPEC: &str = "# two blobs\ndim = 2\ncomponents = 2\nweight_1 = 0.25\nmean_1 = -1, 0\ncov_1 = 1, 0.2, 0.2, 0.5\n\nweight_2 = 0.75\nmean_2 = 2, 1 # trailing comment\ncov_2 = 1, 0, 0, 1\n";

    #[test]
    fn parses_mixture_spec() {
        let gm = mixture_from_str(SPEC).unwrap();
        assert_eq!(gm.dim(), 2);
        assert_eq!(gm.weights(), vec![0.25, 0.75]);
        assert_eq!(gm.means()[1], dvector![2.0, 1.0]);
        assert_eq!(gm.covariances()[0][(0, 1)], 0.2);
        let again = mixture_from_str(&mixture_to_string(&gm)).unwrap();
        assert_eq!(again.weights(), gm.weights());
        assert_eq!(again.covariances(), gm.covariances());
    }

    fn parse_line(text: &str) -> usize {
        match mixture_from_str(text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn mixture_errors_carry_line_numbers() {
        assert_eq!(parse_line(&SPEC.replace("mean_2 = 2, 1", "mean_2 = 2")), 9);
        assert_eq!(parse_line(&SPEC.replace("cov_1 = 1, 0.2, 0.2, 0.5", "cov_1 = 1, 0.2, 0.3, 0.5")), 10);
        assert_eq!(parse_line(&SPEC.replace("weight_2 = 0.75", "weight_2 = abc")), 8);
        assert_eq!(parse_line(&SPEC.replace("weight_2", "weight_3")), 8);
        assert_eq!(parse_line(&SPEC.replace("dim = 2", "dim 2")), 2);
        assert_eq!(parse_line(&format!("{SPEC}dim = 3\n")), 11);
        assert_eq!(parse_line(&format!("{SPEC}colour = red\n")), 11);
        assert_eq!(parse_line(""), 1);
    }

    #[test]
    fn parses_dataset() {
        let pts = dataset_from_str("1,2\n\n3.5, -4\n").unwrap();
        assert_eq!(pts, vec![dvector![1.0, 2.0], dvector![3.5, -4.0]]);
        assert_eq!(dataset_from_str(&dataset_to_string(&pts)).unwrap(), pts);
        assert!(matches!(dataset_from_str(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(dataset_from_str("1,2\n3\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(dataset_from_str("1,2\n3,x\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(dataset_from_str("1,nan\n"), Err(Error::Parse { line: 1, .. })));
        assert_eq!(dataset_from_str("1 2\n\t3   4\n").unwrap(), vec![dvector![1.0, 2.0], dvector![3.0, 4.0]]);
        assert!(matches!(dataset_from_str("1 2\n3,4,5\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn key_values() {
        let kv = KeyValues::parse("a = 1\nb = 0.5, 2\n").unwrap();
        assert_eq!(kv.parse_value::<usize>("a").unwrap(), Some(1));
        assert_eq!(kv.parse_list::<f64>("b").unwrap(), Some(vec![0.5, 2.0]));
        assert_eq!(kv.parse_value::<usize>("zzz").unwrap(), None);
        assert!(matches!(kv.parse_value::<usize>("b"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(kv.required("c"), Err(Error::Parse { line: 3, .. })));
        assert!(KeyValues::parse("a = 1,,2\n").unwrap().parse_list::<f64>("a").is_err());
    }
}
