//! Dataset loading, id remapping and the per-user 7:1:2 split.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::XorShift64Star;

/// Interactions with external ids remapped to dense indices in
/// first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct RawDataset {
    records: Vec<(u32, u32)>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_map: HashMap<String, u32>,
    item_map: HashMap<String, u32>,
}

impl RawDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a dataset from external id pairs. Repeated pairs are kept once.
    pub fn from_pairs<U, I>(pairs: impl IntoIterator<Item = (U, I)>) -> Self
    where
        U: AsRef<str>,
        I: AsRef<str>,
    {
        let mut ds = Self::new();
        let mut seen = std::collections::HashSet::new();
        for (u, i) in pairs {
            ds.push(u.as_ref(), i.as_ref(), &mut seen);
        }
        ds
    }

    /// Builds a dataset whose external ids are the decimal indices themselves.
    /// Ids are registered `0..num_users` / `0..num_items` up front, so dense
    /// indices coincide with the given ones.
    pub fn from_indexed(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut ds = Self::new();
        for u in 0..num_users {
            ds.intern_user(&u.to_string());
        }
        for i in 0..num_items {
            ds.intern_item(&i.to_string());
        }
        let mut seen = std::collections::HashSet::new();
        for (u, i) in pairs {
            if u >= num_users {
                return Err(Error::IndexOutOfRange {
                    kind: "user",
                    index: u,
                    size: num_users,
                });
            }
            if i >= num_items {
                return Err(Error::IndexOutOfRange {
                    kind: "item",
                    index: i,
                    size: num_items,
                });
            }
            if seen.insert((u as u32, i as u32)) {
                ds.records.push((u as u32, i as u32));
            }
        }
        Ok(ds)
    }

    fn intern_user(&mut self, id: &str) -> u32 {
        if let Some(&ix) = self.user_map.get(id) {
            return ix;
        }
        let ix = self.user_ids.len() as u32;
        self.user_ids.push(id.to_owned());
        self.user_map.insert(id.to_owned(), ix);
        ix
    }

    fn intern_item(&mut self, id: &str) -> u32 {
        if let Some(&ix) = self.item_map.get(id) {
            return ix;
        }
        let ix = self.item_ids.len() as u32;
        self.item_ids.push(id.to_owned());
        self.item_map.insert(id.to_owned(), ix);
        ix
    }

    fn push(&mut self, user: &str, item: &str, seen: &mut std::collections::HashSet<(u32, u32)>) {
        let u = self.intern_user(user);
        let i = self.intern_item(item);
        if seen.insert((u, i)) {
            self.records.push((u, i));
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn records(&self) -> &[(u32, u32)] {
        &self.records
    }

    pub fn user_id(&self, u: usize) -> &str {
        &self.user_ids[u]
    }

    pub fn item_id(&self, i: usize) -> &str {
        &self.item_ids[i]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_map.get(id).map(|&u| u as usize)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_map.get(id).map(|&i| i as usize)
    }

    /// Items of every user, in record order.
    pub fn items_by_user(&self) -> Vec<Vec<u32>> {
        let mut by_user = vec![Vec::new(); self.num_users()];
        for &(u, i) in &self.records {
            by_user[u as usize].push(i);
        }
        by_user
    }

    /// Parses a dataset file.
    ///
    /// Two layouts are accepted, chosen from the first data line: if it is
    /// two TAB-separated fields the file is read as `user<TAB>item` pairs,
    /// otherwise as whitespace-separated adjacency lists
    /// `user item item ...`. Blank lines and lines starting with `#` are
    /// ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let data_lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            });

        let mut format = None;
        let mut ds = Self::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in data_lines {
            let format = *format.get_or_insert_with(|| detect_format(line));
            match format {
                Format::Pairs => {
                    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
                    if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                        return Err(Error::Parse {
                            path: path.to_owned(),
                            line: lineno,
                            message: format!(
                                "expected `user<TAB>item`, found {} field(s)",
                                fields.len()
                            ),
                        });
                    }
                    ds.push(fields[0], fields[1], &mut seen);
                }
                Format::Adjacency => {
                    let mut fields = line.split_whitespace();
                    let Some(user) = fields.next() else { continue };
                    let items: Vec<&str> = fields.collect();
                    if items.is_empty() {
                        log::warn!(
                            "{}:{lineno}: user `{user}` has no items; line skipped",
                            path.display()
                        );
                        continue;
                    }
                    for item in items {
                        ds.push(user, item, &mut seen);
                    }
                }
            }
        }
        if ds.records.is_empty() {
            return Err(Error::EmptyFile(path.to_owned()));
        }
        Ok(ds)
    }

    /// Per-user shuffled 7:1:2 split. See [`apportion`] for bucket sizes.
    pub fn split(&self, seed: u64) -> SplitDataset {
        let by_user = self.items_by_user();
        let buckets = par::map_range(by_user.len(), |u| {
            let mut items = by_user[u].clone();
            XorShift64Star::for_user(seed, u).shuffle(&mut items);
            let (n_train, n_valid, _) = apportion(items.len());
            let mut train = items[..n_train].to_vec();
            let mut valid = items[n_train..n_train + n_valid].to_vec();
            let mut test = items[n_train + n_valid..].to_vec();
            train.sort_unstable();
            valid.sort_unstable();
            test.sort_unstable();
            (train, valid, test)
        });
        let mut split = SplitDataset {
            num_users: self.num_users(),
            num_items: self.num_items(),
            seed,
            train: Vec::with_capacity(buckets.len()),
            valid: Vec::with_capacity(buckets.len()),
            test: Vec::with_capacity(buckets.len()),
        };
        for (t, v, s) in buckets {
            split.train.push(t);
            split.valid.push(v);
            split.test.push(s);
        }
        split
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Pairs,
    Adjacency,
}

fn detect_format(line: &str) -> Format {
    let tab_fields = line.split('\t').filter(|f| !f.trim().is_empty()).count();
    if line.contains('\t') && tab_fields == 2 {
        Format::Pairs
    } else {
        Format::Adjacency
    }
}

/// Bucket sizes `(train, valid, test)` for a user with `n` interactions.
///
/// Largest-remainder apportionment of `0.7n : 0.1n : 0.2n`; leftover edges
/// go to the largest fractional parts, ties resolved test, then train, then
/// valid. Any user with `n >= 1` gets at least one test edge; when the
/// floor has to be enforced the edge comes out of valid first, then train.
pub fn apportion(n: usize) -> (usize, usize, usize) {
    if n == 0 {
        return (0, 0, 0);
    }
    // Exact tenths avoid floating-point remainders: quota_k = share_k * n / 10.
    // Order: test, train, valid (the tie-break priority).
    const SHARES: [usize; 3] = [2, 7, 1];
    let mut alloc = [0usize; 3];
    let mut rem = [0usize; 3];
    for k in 0..3 {
        alloc[k] = SHARES[k] * n / 10;
        rem[k] = SHARES[k] * n % 10;
    }
    let mut leftover = n - alloc.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    // Stable sort keeps the priority order among equal remainders.
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]));
    for &k in order.iter() {
        if leftover == 0 {
            break;
        }
        alloc[k] += 1;
        leftover -= 1;
    }
    let [mut test, mut train, mut valid] = alloc;
    if test == 0 {
        test = 1;
        if valid > 0 {
            valid -= 1;
        } else {
            train -= 1;
        }
    }
    (train, valid, test)
}

/// Three disjoint per-user edge buckets over the same index space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    num_users: usize,
    num_items: usize,
    seed: u64,
    train: Vec<Vec<u32>>,
    valid: Vec<Vec<u32>>,
    test: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucket {
    Train,
    Valid,
    Test,
}

impl Bucket {
    pub fn file_name(self) -> &'static str {
        match self {
            Bucket::Train => "train.txt",
            Bucket::Valid => "valid.txt",
            Bucket::Test => "test.txt",
        }
    }
}

impl SplitDataset {
    /// Assembles a split from explicit per-user buckets (each list sorted).
    pub fn from_buckets(
        num_items: usize,
        seed: u64,
        train: Vec<Vec<u32>>,
        valid: Vec<Vec<u32>>,
        test: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let num_users = train.len();
        if valid.len() != num_users || test.len() != num_users {
            return Err(Error::DimensionMismatch(format!(
                "bucket user counts {} / {} / {}",
                train.len(),
                valid.len(),
                test.len()
            )));
        }
        let mut split = Self {
            num_users,
            num_items,
            seed,
            train,
            valid,
            test,
        };
        for b in [&mut split.train, &mut split.valid, &mut split.test] {
            for items in b.iter_mut() {
                if let Some(&i) = items.iter().find(|&&i| i as usize >= num_items) {
                    return Err(Error::IndexOutOfRange {
                        kind: "item",
                        index: i as usize,
                        size: num_items,
                    });
                }
                items.sort_unstable();
            }
        }
        Ok(split)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bucket(&self, bucket: Bucket) -> &[Vec<u32>] {
        match bucket {
            Bucket::Train => &self.train,
            Bucket::Valid => &self.valid,
            Bucket::Test => &self.test,
        }
    }

    /// Sorted items of `user` in `bucket`.
    pub fn items(&self, bucket: Bucket, user: usize) -> &[u32] {
        &self.bucket(bucket)[user]
    }

    pub fn train(&self, user: usize) -> &[u32] {
        &self.train[user]
    }

    pub fn valid(&self, user: usize) -> &[u32] {
        &self.valid[user]
    }

    pub fn test(&self, user: usize) -> &[u32] {
        &self.test[user]
    }

    pub fn edges(&self, bucket: Bucket) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bucket(bucket)
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i as usize)))
    }

    pub fn len(&self, bucket: Bucket) -> usize {
        self.bucket(bucket).iter().map(Vec::len).sum()
    }

    /// Writes one bucket as `user<TAB>item` lines with external ids.
    pub fn write_bucket(
        &self,
        bucket: Bucket,
        raw: &RawDataset,
        mut out: impl Write,
    ) -> io::Result<()> {
        for (u, i) in self.edges(bucket) {
            writeln!(out, "{}\t{}", raw.user_id(u), raw.item_id(i))?;
        }
        Ok(())
    }

    /// Writes `train.txt`, `valid.txt` and `test.txt` into `dir`.
    pub fn export(&self, raw: &RawDataset, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for bucket in [Bucket::Train, Bucket::Valid, Bucket::Test] {
            let path = dir.join(bucket.file_name());
            let mut buf = Vec::new();
            self.write_bucket(bucket, raw, &mut buf)
                .map_err(|e| Error::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}
