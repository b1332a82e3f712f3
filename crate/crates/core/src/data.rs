//! Longitudinal multi-view datasets: the one-bar generator, wide CSV
//! ingestion/export, random splits and `T×B×d` batching.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DlgfaError, Result};
use crate::kernel::Tensor;
use crate::model::GroupSpec;

/// `N` sequences of `T` timesteps over `d` grouped features.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    /// Row-major `N × T × d`.
    values: Vec<f64>,
    timesteps: usize,
    groups: GroupSpec,
    /// Per-column feature label (without the group prefix).
    feature_names: Vec<String>,
    subject_ids: Vec<String>,
    time_index: Vec<String>,
}

impl LongitudinalDataset {
    pub fn new(
        values: Vec<f64>,
        timesteps: usize,
        groups: GroupSpec,
        feature_names: Vec<String>,
        subject_ids: Vec<String>,
        time_index: Vec<String>,
    ) -> Result<Self> {
        let d = groups.total_dim();
        if timesteps == 0 {
            return Err(DlgfaError::InvalidArgument("dataset needs at least one timestep".into()));
        }
        if feature_names.len() != d || time_index.len() != timesteps {
            return Err(DlgfaError::InvalidArgument(format!(
                "{} feature names for d={d}, {} time labels for T={timesteps}",
                feature_names.len(),
                time_index.len()
            )));
        }
        if values.len() != subject_ids.len() * timesteps * d {
            return Err(DlgfaError::dim(
                "LongitudinalDataset",
                format!(
                    "{} values for {} subjects × {timesteps} × {d}",
                    values.len(),
                    subject_ids.len()
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DlgfaError::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(LongitudinalDataset {
            values,
            timesteps,
            groups,
            feature_names,
            subject_ids,
            time_index,
        })
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn dim(&self) -> usize {
        self.groups.total_dim()
    }

    pub fn groups(&self) -> &GroupSpec {
        &self.groups
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sequence `i` as a `T × d` slice.
    pub fn sequence(&self, i: usize) -> &[f64] {
        let stride = self.timesteps * self.dim();
        &self.values[i * stride..(i + 1) * stride]
    }

    /// Gathers sequences into a `T × B × d` tensor, in the given order.
    pub fn batch_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let (t_len, d) = (self.timesteps, self.dim());
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(DlgfaError::IndexOutOfRange(format!("sequence {bad} of {}", self.len())));
        }
        let b = indices.len();
        let mut data = vec![0.0; t_len * b * d];
        for (bi, &i) in indices.iter().enumerate() {
            let seq = self.sequence(i);
            for t in 0..t_len {
                let dst = (t * b + bi) * d;
                data[dst..dst + d].copy_from_slice(&seq[t * d..(t + 1) * d]);
            }
        }
        Tensor::new(vec![t_len, b, d], data)
    }

    /// New dataset holding the listed sequences.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.timesteps * self.dim());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(DlgfaError::IndexOutOfRange(format!("sequence {i} of {}", self.len())));
            }
            values.extend_from_slice(self.sequence(i));
            ids.push(self.subject_ids[i].clone());
        }
        LongitudinalDataset::new(
            values,
            self.timesteps,
            self.groups.clone(),
            self.feature_names.clone(),
            ids,
            self.time_index.clone(),
        )
    }
}

/// How one-bar images are laid out in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BarMode {
    /// `T = size`; timestep `t` shows the bar on row `t`.
    RowAsTime,
    /// One image with its bar on a random row, repeated `timesteps` times.
    Replicate { timesteps: usize },
}

/// Synthetic `size × size` one-bar images, one group per image row.
///
/// Bar pixels are 1, the rest 0, and every pixel gets independent
/// `Normal(0, noise_sd²)` noise.
pub fn generate_one_bar(n: usize, size: usize, noise_sd: f64, seed: u64, mode: BarMode) -> Result<LongitudinalDataset> {
    if size < 2 {
        return Err(DlgfaError::InvalidArgument(format!("image size must be >= 2, got {size}")));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(DlgfaError::InvalidArgument(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let timesteps = match mode {
        BarMode::RowAsTime => size,
        BarMode::Replicate { timesteps } if timesteps >= 1 => timesteps,
        BarMode::Replicate { .. } => {
            return Err(DlgfaError::InvalidArgument("replicate mode needs timesteps >= 1".into()))
        }
    };
    let d = size * size;
    let normal = Normal::new(0.0, noise_sd).map_err(|e| DlgfaError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * timesteps * d);
    let mut image = vec![0.0; d];
    let draw_image = |rng: &mut ChaCha8Rng, bar: usize, out: &mut [f64]| {
        for (i, v) in out.iter_mut().enumerate() {
            let clean = if i / size == bar { 1.0 } else { 0.0 };
            *v = clean + normal.sample(rng);
        }
    };
    for _ in 0..n {
        match mode {
            BarMode::RowAsTime => {
                for t in 0..timesteps {
                    draw_image(&mut rng, t, &mut image);
                    values.extend_from_slice(&image);
                }
            }
            BarMode::Replicate { .. } => {
                let bar = rng.random_range(0..size);
                draw_image(&mut rng, bar, &mut image);
                for _ in 0..timesteps {
                    values.extend_from_slice(&image);
                }
            }
        }
    }
    let names = (1..=size).map(|r| format!("row{r}")).collect();
    let groups = GroupSpec::new(vec![size; size], names)?;
    let features = (0..d).map(|i| format!("c{}", i % size + 1)).collect();
    let width = n.max(1).to_string().len();
    let ids = (0..n).map(|i| format!("s{:0width$}", i + 1)).collect();
    let times = (1..=timesteps).map(|t| t.to_string()).collect();
    LongitudinalDataset::new(values, timesteps, groups, features, ids, times)
}

/// Explicit column-to-group assignment for [`load_wide_csv`].
pub type GroupMap = BTreeMap<String, String>;

fn parse_err(line: usize, message: impl Into<String>) -> DlgfaError {
    DlgfaError::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a wide CSV with header `subject,t,<group>.<feature>,...`.
///
/// Rows are grouped by subject (sorted) and ordered by numeric `t`. Every
/// subject must have the same set of `t` values. Feature columns are assigned
/// to groups by `group_map` when given, otherwise by the text before the
/// first `.` in the header; columns are reordered so each group is contiguous
/// (groups in order of first appearance).
pub fn load_wide_csv(path: impl AsRef<Path>, group_map: Option<&GroupMap>) -> Result<LongitudinalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DlgfaError::io(path, e))?;
    read_wide_csv(file, group_map)
}

pub fn read_wide_csv<R: std::io::Read>(reader: R, group_map: Option<&GroupMap>) -> Result<LongitudinalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    let header: Vec<String> = header.iter().map(|s| s.trim().to_owned()).collect();
    if header.len() < 3 || header[0] != "subject" || header[1] != "t" {
        return Err(parse_err(1, "header must start with `subject,t,` followed by feature columns"));
    }

    // (group, feature) per source column
    let mut assignment = Vec::with_capacity(header.len() - 2);
    for col in &header[2..] {
        let (group, feature) = match group_map {
            Some(map) => {
                let g = map
                    .get(col)
                    .ok_or_else(|| parse_err(1, format!("column `{col}` missing from group map")))?;
                let feature = col.strip_prefix(&format!("{g}.")).unwrap_or(col);
                (g.clone(), feature.to_owned())
            }
            None => {
                let (g, f) = col
                    .split_once('.')
                    .ok_or_else(|| parse_err(1, format!("column `{col}` is not `<group>.<feature>`")))?;
                (g.to_owned(), f.to_owned())
            }
        };
        if group.is_empty() || feature.is_empty() {
            return Err(parse_err(1, format!("column `{col}` has an empty group or feature name")));
        }
        assignment.push((group, feature));
    }
    let mut group_order: Vec<String> = Vec::new();
    for (g, _) in &assignment {
        if !group_order.contains(g) {
            group_order.push(g.clone());
        }
    }
    // stable reorder: target column order grouped by first appearance
    let mut order: Vec<usize> = Vec::with_capacity(assignment.len());
    let mut dims = Vec::with_capacity(group_order.len());
    for g in &group_order {
        let before = order.len();
        order.extend((0..assignment.len()).filter(|&i| &assignment[i].0 == g));
        dims.push(order.len() - before);
    }
    let feature_names: Vec<String> = order.iter().map(|&i| assignment[i].1.clone()).collect();
    let d = order.len();

    // subject -> t -> (line, row)
    let mut rows: BTreeMap<String, Vec<(f64, String, usize, Vec<f64>)>> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let subject = rec[0].trim().to_owned();
        let t_label = rec[1].trim().to_owned();
        let t_val: f64 = t_label
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("time `{t_label}` is not numeric")))?;
        let mut raw = Vec::with_capacity(d);
        for (i, cell) in rec.iter().skip(2).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("column `{}`: `{cell}` is not a finite number", header[i + 2])))?;
            raw.push(v);
        }
        let row = order.iter().map(|&i| raw[i]).collect();
        rows.entry(subject).or_default().push((t_val, t_label, line, row));
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }

    let mut time_index: Option<Vec<(f64, String)>> = None;
    let mut values = Vec::new();
    let mut subject_ids = Vec::with_capacity(rows.len());
    for (subject, mut entries) in rows {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(parse_err(
                    w[1].2,
                    format!("duplicate row for subject `{subject}` at t={}", w[1].1),
                ));
            }
        }
        let times: Vec<(f64, String)> = entries.iter().map(|e| (e.0, e.1.clone())).collect();
        match &time_index {
            None => time_index = Some(times),
            Some(expected) => {
                let same = expected.len() == times.len()
                    && expected.iter().zip(&times).all(|(a, b)| a.0 == b.0);
                if !same {
                    let line = entries.last().map_or(0, |e| e.2);
                    return Err(parse_err(
                        line,
                        format!(
                            "subject `{subject}` has {} timesteps that differ from the first subject's {}",
                            times.len(),
                            expected.len()
                        ),
                    ));
                }
            }
        }
        for (_, _, _, row) in entries {
            values.extend(row);
        }
        subject_ids.push(subject);
    }
    let time_index: Vec<String> = time_index.expect("non-empty").into_iter().map(|(_, s)| s).collect();
    let groups = GroupSpec::new(dims, group_order)?;
    LongitudinalDataset::new(values, time_index.len(), groups, feature_names, subject_ids, time_index)
}

/// Writes the dataset in the wide format read by [`load_wide_csv`]; values
/// use the shortest representation that parses back to the same bits.
pub fn write_wide_csv(ds: &LongitudinalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DlgfaError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let to_err = |e: csv::Error| DlgfaError::io(path, std::io::Error::other(e.to_string()));
    let mut header = vec!["subject".to_owned(), "t".to_owned()];
    let mut col = 0;
    for (g, &dg) in ds.groups.names().iter().zip(ds.groups.dims()) {
        for _ in 0..dg {
            header.push(format!("{g}.{}", ds.feature_names[col]));
            col += 1;
        }
    }
    w.write_record(&header).map_err(to_err)?;
    let d = ds.dim();
    for (i, subject) in ds.subject_ids.iter().enumerate() {
        let seq = ds.sequence(i);
        for (t, label) in ds.time_index.iter().enumerate() {
            let mut row = Vec::with_capacity(d + 2);
            row.push(subject.clone());
            row.push(label.clone());
            row.extend(seq[t * d..(t + 1) * d].iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| DlgfaError::io(path, e))
}

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Sizes for `n` sequences: validation and test get `round(f·n)`, the
    /// remainder goes to training.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DlgfaError::InvalidArgument(format!(
                "split fractions must be positive and sum to 1, got {fr:?}"
            )));
        }
        if n < 3 {
            return Err(DlgfaError::InvalidArgument(format!("need at least 3 sequences to split, got {n}")));
        }
        let val = (self.val * n as f64).round() as usize;
        let test = (self.test * n as f64).round() as usize;
        if val == 0 || test == 0 || val + test >= n {
            return Err(DlgfaError::InvalidArgument(format!(
                "degenerate split of {n} sequences: val={val}, test={test}"
            )));
        }
        Ok((n - val - test, val, test))
    }
}

/// Disjoint random partition into (train, validation, test).
pub fn split_dataset(ds: &LongitudinalDataset, spec: &SplitSpec) -> Result<(LongitudinalDataset, LongitudinalDataset, LongitudinalDataset)> {
    let (n_train, n_val, _) = spec.sizes(ds.len())?;
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&val)?, ds.subset(&test)?))
}

/// One `T × B × d` minibatch and the sequences it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub data: Tensor,
}

/// Shuffles sequences with `seed` and cuts them into batches of
/// `batch_size`; the last batch keeps whatever remains.
pub fn make_batches(ds: &LongitudinalDataset, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(DlgfaError::InvalidArgument("batch size must be >= 1".into()));
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm.chunks(batch_size)
        .map(|idx| {
            Ok(Batch {
                indices: idx.to_vec(),
                data: ds.batch_tensor(idx)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use proptest::prelude::*;

    use super::*;

    #[test]
    fn noiseless_bar_layout() {
        let ds = generate_one_bar(1, 2, 0.0, 0, BarMode::RowAsTime).unwrap();
        assert_eq!(ds.timesteps(), 2);
        assert_eq!(ds.groups().dims(), &[2, 2]);
        let seq = ds.sequence(0);
        assert_eq!(&seq[..4], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(&seq[4..], &[0.0, 0.0, 1.0, 1.0]);

        let rep = generate_one_bar(3, 4, 0.0, 5, BarMode::Replicate { timesteps: 6 }).unwrap();
        assert_eq!(rep.timesteps(), 6);
        for i in 0..3 {
            let s = rep.sequence(i);
            assert!(s.chunks(16).all(|img| img == &s[..16]));
            assert_eq!(s[..16].iter().sum::<f64>(), 4.0);
        }
        assert!(generate_one_bar(1, 1, 0.0, 0, BarMode::RowAsTime).is_err());
        assert!(generate_one_bar(1, 4, -1.0, 0, BarMode::RowAsTime).is_err());
    }

    #[test]
    fn off_bar_mean_is_zero() {
        let sd = 0.05;
        let ds = generate_one_bar(200, 8, sd, 3, BarMode::RowAsTime).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..ds.len() {
            for (t, img) in ds.sequence(i).chunks(64).enumerate() {
                for (p, v) in img.iter().enumerate() {
                    if p / 8 != t {
                        sum += v;
                        count += 1;
                    }
                }
            }
        }
        let mean = sum / count as f64;
        assert!(mean.abs() < 3.0 * sd / (count as f64).sqrt(), "{mean}");
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_one_bar(10, 8, 0.05, 9, BarMode::RowAsTime).unwrap();
        let b = generate_one_bar(10, 8, 0.05, 9, BarMode::RowAsTime).unwrap();
        assert_eq!(a, b);
        let c = generate_one_bar(10, 8, 0.05, 10, BarMode::RowAsTime).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(2000).unwrap(), (1600, 200, 200));
        assert_eq!(spec.sizes(10).unwrap(), (8, 1, 1));
        assert!(spec.sizes(2).is_err());
        assert!(spec.sizes(4).is_err()); // round(0.4) = 0
        let bad = SplitSpec { train: 0.5, val: 0.1, test: 0.1, seed: 0 };
        assert!(bad.sizes(100).is_err());
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let ds = generate_one_bar(50, 2, 0.1, 1, BarMode::RowAsTime).unwrap();
        let spec = SplitSpec { seed: 4, ..SplitSpec::default() };
        let (a, b, c) = split_dataset(&ds, &spec).unwrap();
        let (a2, b2, c2) = split_dataset(&ds, &spec).unwrap();
        assert_eq!((&a, &b, &c), (&a2, &b2, &c2));
        let mut all: Vec<&String> = a.subject_ids().iter().chain(b.subject_ids()).chain(c.subject_ids()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 50);
        assert_eq!((a.len(), b.len(), c.len()), (40, 5, 5));
    }

    #[test]
    fn batches_keep_short_tail() {
        let ds = generate_one_bar(200, 2, 0.0, 0, BarMode::RowAsTime).unwrap();
        let batches = make_batches(&ds, 64, 1).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.indices.len()).collect();
        assert_eq!(sizes, vec![64, 64, 64, 8]);
        assert_eq!(batches[3].data.shape(), &[2, 8, 4]);
        assert_eq!(make_batches(&ds, 64, 1).unwrap(), batches);
        assert!(make_batches(&ds, 0, 1).is_err());
    }

    #[test]
    fn batch_tensor_layout_is_time_major() {
        let ds = generate_one_bar(3, 2, 0.0, 0, BarMode::RowAsTime).unwrap();
        let b = ds.batch_tensor(&[2, 0]).unwrap();
        assert_eq!(b.shape(), &[2, 2, 4]);
        assert_eq!(b.index_axis0(1).unwrap().data(), &[0., 0., 1., 1., 0., 0., 1., 1.]);
    }

    const SMALL: &str = "subject,t,a.x,a.y,b.x,b.y\n\
                         s2,1,1,2,3,4\n\
                         s1,2,5,6,7,8\n\
                         s1,1,9,10,11,12\n\
                         s2,3,13,14,15,16\n\
                         s1,3,17,18,19,20\n\
                         s2,2,21,22,23,24\n";

    #[test]
    fn csv_is_canonicalized() {
        let ds = read_wide_csv(Cursor::new(SMALL), None).unwrap();
        assert_eq!((ds.len(), ds.timesteps(), ds.dim()), (2, 3, 4));
        assert_eq!(ds.subject_ids(), &["s1", "s2"]);
        assert_eq!(ds.time_index(), &["1", "2", "3"]);
        assert_eq!(&ds.sequence(0)[..4], &[9., 10., 11., 12.]);
        assert_eq!(ds.groups().names(), &["a", "b"]);

        let mut lines: Vec<&str> = SMALL.lines().collect();
        lines[1..].reverse();
        let shuffled = lines.join("\n");
        assert_eq!(read_wide_csv(Cursor::new(shuffled), None).unwrap(), ds);
    }

    #[test]
    fn csv_interleaved_groups_are_made_contiguous() {
        let text = "subject,t,a.x,b.x,a.y\ns1,1,1,2,3\n";
        let ds = read_wide_csv(Cursor::new(text), None).unwrap();
        assert_eq!(ds.groups().dims(), &[2, 1]);
        assert_eq!(ds.sequence(0), &[1., 3., 2.]);

        let mut map = GroupMap::new();
        map.insert("a.x".into(), "left".into());
        map.insert("b.x".into(), "left".into());
        map.insert("a.y".into(), "right".into());
        let ds = read_wide_csv(Cursor::new(text), Some(&map)).unwrap();
        assert_eq!(ds.groups().names(), &["left", "right"]);
        assert_eq!(ds.groups().dims(), &[2, 1]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let cases = [
            ("subject,t,a.x\ns1,1,1\ns1,2\n", 3),
            ("subject,t,a.x\ns1,1,1\ns1,2,abc\n", 3),
            ("subject,t,a.x\ns1,1,1\ns1,x,2\n", 3),
            ("subject,t,a.x\ns1,1,1\ns1,2,NaN\n", 3),
            ("subject,t,a.x\ns1,1,1\ns1,1,2\n", 3),
            ("subject,time,a.x\ns1,1,1\n", 1),
            ("subject,t,ax\ns1,1,1\n", 1),
        ];
        for (text, line) in cases {
            match read_wide_csv(Cursor::new(text), None) {
                Err(DlgfaError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        // s2 lacks t=2
        let text = "subject,t,a.x\ns1,1,1\ns1,2,1\ns2,1,1\n";
        assert!(matches!(read_wide_csv(Cursor::new(text), None), Err(DlgfaError::Parse { .. })));
    }

    #[test]
    fn mocap_shaped_csv_is_accepted() {
        // 29 joints with 1-3 degrees of freedom, 59 columns in total
        let dofs: Vec<usize> = [vec![3; 14], vec![2; 2], vec![1; 13]].concat();
        assert_eq!((dofs.len(), dofs.iter().sum::<usize>()), (29, 59));
        assert!(dofs.iter().all(|&d| (1..=3).contains(&d)));
        let mut header = vec!["subject".to_owned(), "t".to_owned()];
        for (j, &k) in dofs.iter().enumerate() {
            for f in 0..k {
                header.push(format!("joint{j}.dof{f}"));
            }
        }
        let mut text = header.join(",") + "\n";
        for t in 1..=32 {
            let row: Vec<String> = (0..59).map(|i| format!("{}", (i * t) as f64 * 0.01)).collect();
            text += &format!("trial1,{t},{}\n", row.join(","));
        }
        let ds = read_wide_csv(Cursor::new(text), None).unwrap();
        assert_eq!((ds.len(), ds.timesteps(), ds.dim(), ds.groups().count()), (1, 32, 59, 29));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn csv_round_trip_is_value_identical(seed in 0u64..1000, n in 1usize..6, size in 2usize..5) {
            let ds = generate_one_bar(n, size, 0.3, seed, BarMode::RowAsTime).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            write_wide_csv(&ds, &path).unwrap();
            let back = load_wide_csv(&path, None).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn batches_partition_the_dataset(n in 1usize..40, b in 1usize..12, seed in 0u64..100) {
            let ds = generate_one_bar(n, 2, 0.0, 0, BarMode::RowAsTime).unwrap();
            let mut seen: Vec<usize> = make_batches(&ds, b, seed).unwrap()
                .into_iter().flat_map(|b| b.indices).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
