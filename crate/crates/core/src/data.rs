//! Implicit-feedback ingestion, minimum-count filtering, leave-one-out
//! splitting and negative-sampled training batches.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 1 << 10;

pub const TRAIN_FILE: &str = "train.txt";
pub const VAL_FILE: &str = "val.txt";
pub const TEST_FILE: &str = "test.txt";

/// Deduplicated (user, item) pairs over dense index spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: Vec<(usize, usize)>,
    /// Dense user index → external id.
    pub user_ids: Vec<String>,
    /// Dense item index → external id.
    pub item_ids: Vec<String>,
}

impl InteractionLog {
    /// Builds a log over already-dense indices; external ids are the indices.
    pub fn from_pairs(num_users: usize, num_items: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut interactions = Vec::new();
        for (u, i) in pairs {
            if u >= num_users || i >= num_items {
                return Err(Error::Index(format!("pair ({u}, {i}) outside {num_users}x{num_items}")));
            }
            if seen.insert((u, i)) {
                interactions.push((u, i));
            }
        }
        Ok(Self {
            num_users,
            num_items,
            interactions,
            user_ids: (0..num_users).map(|u| u.to_string()).collect(),
            item_ids: (0..num_items).map(|i| i.to_string()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Per-user item lists, sorted ascending.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, i) in &self.interactions {
            out[u].push(i);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    pub fn user_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_users];
        self.interactions.iter().for_each(|&(u, _)| c[u] += 1);
        c
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_items];
        self.interactions.iter().for_each(|&(_, i)| c[i] += 1);
        c
    }
}

/// Reads `user_id item_id [ignored...]` lines. Blank lines and lines starting
/// with `#` are skipped. Ids are remapped densely in order of first appearance.
pub fn load_interactions<R: BufRead>(source: R) -> Result<InteractionLog> {
    let mut user_map: HashMap<String, usize> = HashMap::new();
    let mut item_map: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut interactions = Vec::new();

    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (Some(user), Some(item)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse { line: n + 1, msg: format!("expected `user item`, got {trimmed:?}") });
        };
        let u = *user_map.entry(user.to_owned()).or_insert_with(|| {
            user_ids.push(user.to_owned());
            user_ids.len() - 1
        });
        let i = *item_map.entry(item.to_owned()).or_insert_with(|| {
            item_ids.push(item.to_owned());
            item_ids.len() - 1
        });
        if seen.insert((u, i)) {
            interactions.push((u, i));
        }
    }

    if interactions.is_empty() {
        return Err(Error::Data("input contains no interactions".into()));
    }
    Ok(InteractionLog { num_users: user_ids.len(), num_items: item_ids.len(), interactions, user_ids, item_ids })
}

pub fn load_interactions_file(path: &Path) -> Result<InteractionLog> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    load_interactions(BufReader::new(file))
}

/// Repeatedly drops users with fewer than `min_user` and items with fewer
/// than `min_item` interactions until nothing changes, then reindexes.
pub fn filter_min_interactions(log: &InteractionLog, min_user: usize, min_item: usize) -> Result<InteractionLog> {
    let mut keep_user = vec![true; log.num_users];
    let mut keep_item = vec![true; log.num_items];
    loop {
        let mut uc = vec![0usize; log.num_users];
        let mut ic = vec![0usize; log.num_items];
        for &(u, i) in &log.interactions {
            if keep_user[u] && keep_item[i] {
                uc[u] += 1;
                ic[i] += 1;
            }
        }
        let mut changed = false;
        for u in 0..log.num_users {
            if keep_user[u] && uc[u] < min_user {
                keep_user[u] = false;
                changed = true;
            }
        }
        for i in 0..log.num_items {
            if keep_item[i] && ic[i] < min_item {
                keep_item[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let user_remap = dense_remap(&keep_user);
    let item_remap = dense_remap(&keep_item);
    let interactions: Vec<_> = log
        .interactions
        .iter()
        .filter_map(|&(u, i)| Some((user_remap[u]?, item_remap[i]?)))
        .collect();
    if interactions.is_empty() {
        return Err(Error::Data(format!(
            "filtering with min_user={min_user}, min_item={min_item} removed every interaction"
        )));
    }
    let pick = |ids: &[String], keep: &[bool]| -> Vec<String> {
        ids.iter().zip(keep).filter(|(_, &k)| k).map(|(s, _)| s.clone()).collect()
    };
    let user_ids = pick(&log.user_ids, &keep_user);
    let item_ids = pick(&log.item_ids, &keep_item);
    Ok(InteractionLog { num_users: user_ids.len(), num_items: item_ids.len(), interactions, user_ids, item_ids })
}

fn dense_remap(keep: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    keep.iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Leave-one-out split: one validation and one test item per eligible user.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionLog,
    pub validation: Vec<Option<usize>>,
    pub test: Vec<Option<usize>>,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.num_users
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items
    }

    /// Writes `train.txt`, `val.txt` and `test.txt` using dense indices.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_pairs(&dir.join(TRAIN_FILE), self.train.interactions.iter().copied())?;
        let held = |v: &[Option<usize>]| v.iter().enumerate().filter_map(|(u, i)| i.map(|i| (u, i))).collect::<Vec<_>>();
        write_pairs(&dir.join(VAL_FILE), held(&self.validation).into_iter())?;
        write_pairs(&dir.join(TEST_FILE), held(&self.test).into_iter())?;
        Ok(())
    }

    /// Reads a split written by [`SplitDataset::save`]. Index spaces are the
    /// largest index seen in any of the three files plus one.
    pub fn load(dir: &Path) -> Result<Self> {
        let train = read_dense_pairs(&dir.join(TRAIN_FILE))?;
        let val = read_dense_pairs(&dir.join(VAL_FILE))?;
        let test = read_dense_pairs(&dir.join(TEST_FILE))?;
        let all = train.iter().chain(&val).chain(&test);
        let num_users = all.clone().map(|p| p.0 + 1).max().unwrap_or(0);
        let num_items = all.map(|p| p.1 + 1).max().unwrap_or(0);
        if train.is_empty() {
            return Err(Error::Data(format!("{} holds no interactions", dir.join(TRAIN_FILE).display())));
        }
        let held = |pairs: &[(usize, usize)], name: &str| -> Result<Vec<Option<usize>>> {
            let mut out = vec![None; num_users];
            for &(u, i) in pairs {
                if out[u].replace(i).is_some() {
                    return Err(Error::Data(format!("{name}: user {u} has more than one held-out item")));
                }
            }
            Ok(out)
        };
        let validation = held(&val, VAL_FILE)?;
        let test = held(&test, TEST_FILE)?;
        let split = Self { train: InteractionLog::from_pairs(num_users, num_items, train)?, validation, test };
        split.check_disjoint()?;
        Ok(split)
    }

    fn check_disjoint(&self) -> Result<()> {
        let by_user = self.train.items_by_user();
        for u in 0..self.num_users() {
            let (v, t) = (self.validation[u], self.test[u]);
            if v.is_some() && v == t {
                return Err(Error::Data(format!("user {u}: validation and test items coincide")));
            }
            for held in [v, t].into_iter().flatten() {
                if by_user[u].binary_search(&held).is_ok() {
                    return Err(Error::Data(format!("user {u}: held-out item {held} also in train")));
                }
            }
        }
        Ok(())
    }
}

fn write_pairs(path: &Path, pairs: impl Iterator<Item = (usize, usize)>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (u, i) in pairs {
        writeln!(w, "{u} {i}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_dense_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut f = t.split_whitespace();
        let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        match (parse(f.next()), parse(f.next())) {
            (Some(u), Some(i)) => out.push((u, i)),
            _ => {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("{}: expected two dense indices, got {t:?}", path.display()),
                })
            }
        }
    }
    Ok(out)
}

/// Holds out one uniformly random test item and one validation item for every
/// user with at least three interactions; everything else stays in train.
pub fn leave_one_out_split<R: Rng + ?Sized>(log: &InteractionLog, rng: &mut R) -> SplitDataset {
    let mut validation = vec![None; log.num_users];
    let mut test = vec![None; log.num_users];
    let mut train_pairs = Vec::with_capacity(log.len());
    for (u, mut items) in log.items_by_user().into_iter().enumerate() {
        if items.len() >= 3 {
            items.shuffle(rng);
            test[u] = Some(items[0]);
            validation[u] = Some(items[1]);
            items.drain(..2);
            items.sort_unstable();
        }
        train_pairs.extend(items.into_iter().map(|i| (u, i)));
    }
    let train = InteractionLog {
        num_users: log.num_users,
        num_items: log.num_items,
        interactions: train_pairs,
        user_ids: log.user_ids.clone(),
        item_ids: log.item_ids.clone(),
    };
    SplitDataset { train, validation, test }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<usize>,
    pub pos_items: Vec<usize>,
    pub neg_items: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Per-user sorted train items, used for rejection sampling and masking.
#[derive(Debug, Clone)]
pub struct TrainIndex {
    by_user: Vec<Vec<usize>>,
    num_items: usize,
}

impl TrainIndex {
    pub fn new(log: &InteractionLog) -> Self {
        Self { by_user: log.items_by_user(), num_items: log.num_items }
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.by_user[user].binary_search(&item).is_ok()
    }

    pub fn items(&self, user: usize) -> &[usize] {
        &self.by_user[user]
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Uniform item the user has not interacted with in train.
    pub fn sample_negative<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Result<usize> {
        if self.by_user[user].len() >= self.num_items {
            return Err(Error::NegativeSampling { user });
        }
        loop {
            let j = rng.random_range(0..self.num_items);
            if !self.contains(user, j) {
                return Ok(j);
            }
        }
    }
}

/// One epoch of shuffled positives with one sampled negative each.
pub struct EpochBatches<'a, R: Rng> {
    pairs: Vec<(usize, usize)>,
    index: &'a TrainIndex,
    batch_size: usize,
    cursor: usize,
    rng: &'a mut R,
}

impl<R: Rng> Iterator for EpochBatches<'_, R> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.pairs.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.pairs.len());
        let chunk = &self.pairs[self.cursor..end];
        self.cursor = end;
        let mut batch = Batch {
            users: Vec::with_capacity(chunk.len()),
            pos_items: Vec::with_capacity(chunk.len()),
            neg_items: Vec::with_capacity(chunk.len()),
        };
        for &(u, i) in chunk {
            let j = match self.index.sample_negative(u, self.rng) {
                Ok(j) => j,
                Err(e) => return Some(Err(e)),
            };
            batch.users.push(u);
            batch.pos_items.push(i);
            batch.neg_items.push(j);
        }
        Some(Ok(batch))
    }
}

pub fn sample_batches<'a, R: Rng>(
    train: &InteractionLog,
    index: &'a TrainIndex,
    batch_size: usize,
    rng: &'a mut R,
) -> Result<EpochBatches<'a, R>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut pairs = train.interactions.clone();
    pairs.shuffle(rng);
    Ok(EpochBatches { pairs, index, batch_size, cursor: 0, rng })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn load(s: &str) -> Result<InteractionLog> {
        load_interactions(s.as_bytes())
    }

    fn random_log(seed: u64, users: usize, items: usize, density: f64) -> InteractionLog {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if r.random_bool(density) {
                    pairs.push((u, i));
                }
            }
        }
        InteractionLog::from_pairs(users, items, pairs).unwrap()
    }

    #[test]
    fn load_counts() {
        let log = load("a 1\nb 2\na 2").unwrap();
        assert_eq!((log.num_users, log.num_items, log.len()), (2, 2, 3));
        assert_eq!(log.user_ids, ["a", "b"]);
        assert_eq!(log.item_ids, ["1", "2"]);
    }

    #[test]
    fn load_drops_duplicates_and_comments() {
        assert_eq!(load("a 1\na 1").unwrap().len(), 1);
        let log = load("# header\n\nu i 5.0 123\n").unwrap();
        assert_eq!(log.interactions, [(0, 0)]);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(load(""), Err(Error::Data(_))));
        assert!(matches!(load("# only\n"), Err(Error::Data(_))));
        assert!(matches!(load("a 1\nlonely\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn filter_noop_thresholds() {
        let log = random_log(1, 10, 10, 0.3);
        assert_eq!(filter_min_interactions(&log, 0, 0).unwrap(), log);
    }

    #[test]
    fn filter_removes_light_user() {
        let mut pairs = vec![(0, 0)];
        for u in 1..3 {
            pairs.extend((0..5).map(|i| (u, i)));
        }
        let log = InteractionLog::from_pairs(3, 5, pairs).unwrap();
        let f = filter_min_interactions(&log, 5, 0).unwrap();
        assert_eq!(f.num_users, 2);
        assert_eq!(f.user_ids, ["1", "2"]);
        assert_eq!(f.len(), 10);
    }

    #[test]
    fn filter_empty_result_is_error() {
        let log = load("a 1\nb 2").unwrap();
        assert!(matches!(filter_min_interactions(&log, 5, 0), Err(Error::Data(_))));
    }

    // Naive oracle: drop one offending entity at a time, recount from scratch.
    fn filter_oracle(log: &InteractionLog, min_user: usize, min_item: usize) -> HashSet<(String, String)> {
        let mut pairs: HashSet<(String, String)> = log
            .interactions
            .iter()
            .map(|&(u, i)| (log.user_ids[u].clone(), log.item_ids[i].clone()))
            .collect();
        loop {
            let mut uc: HashMap<&String, usize> = HashMap::new();
            let mut ic: HashMap<&String, usize> = HashMap::new();
            for (u, i) in &pairs {
                *uc.entry(u).or_default() += 1;
                *ic.entry(i).or_default() += 1;
            }
            let bad_user = uc.iter().find(|(_, &c)| c < min_user).map(|(u, _)| (*u).clone());
            let bad_item = ic.iter().find(|(_, &c)| c < min_item).map(|(i, _)| (*i).clone());
            match (bad_user, bad_item) {
                (Some(u), _) => pairs.retain(|(pu, _)| *pu != u),
                (None, Some(i)) => pairs.retain(|(_, pi)| *pi != i),
                (None, None) => return pairs,
            }
        }
    }

    #[test]
    fn filter_matches_fixed_point_oracle() {
        let log = random_log(7, 50, 50, 0.06);
        let got = filter_min_interactions(&log, 3, 2).unwrap();
        let got_pairs: HashSet<_> = got
            .interactions
            .iter()
            .map(|&(u, i)| (got.user_ids[u].clone(), got.item_ids[i].clone()))
            .collect();
        assert_eq!(got_pairs, filter_oracle(&log, 3, 2));
        assert!(got.user_counts().iter().all(|&c| c >= 3));
        assert!(got.item_counts().iter().all(|&c| c >= 2));
    }

    #[test]
    fn split_small_users() {
        let log = InteractionLog::from_pairs(2, 5, [(0, 0), (0, 1), (0, 2), (1, 3), (1, 4)]).unwrap();
        let s = leave_one_out_split(&log, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.train.items_by_user()[0].len(), 1);
        assert!(s.validation[0].is_some() && s.test[0].is_some());
        assert_eq!(s.train.items_by_user()[1], [3, 4]);
        assert_eq!((s.validation[1], s.test[1]), (None, None));
    }

    #[test]
    fn split_is_deterministic() {
        let log = random_log(3, 30, 40, 0.2);
        let a = leave_one_out_split(&log, &mut ChaCha8Rng::seed_from_u64(11));
        let b = leave_one_out_split(&log, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn split_roundtrips_through_files() {
        let log = random_log(4, 20, 30, 0.3);
        let s = leave_one_out_split(&log, &mut ChaCha8Rng::seed_from_u64(5));
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = SplitDataset::load(dir.path()).unwrap();
        assert_eq!(back.train.interactions, s.train.interactions);
        assert_eq!(back.validation, s.validation);
        assert_eq!(back.test, s.test);
    }

    #[test]
    fn batch_sizes() {
        let log = InteractionLog::from_pairs(5, 10, (0..5).map(|u| (u, u))).unwrap();
        let idx = TrainIndex::new(&log);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let sizes: Vec<_> = sample_batches(&log, &idx, 2, &mut r).unwrap().map(|b| b.unwrap().len()).collect();
        assert_eq!(sizes, [2, 2, 1]);
        assert_eq!(DEFAULT_BATCH_SIZE, 1024);
        assert!(sample_batches(&log, &idx, 0, &mut r).is_err());
    }

    #[test]
    fn negatives_never_in_train() {
        let log = random_log(9, 20, 20, 0.5);
        let idx = TrainIndex::new(&log);
        let train: HashSet<_> = log.interactions.iter().copied().collect();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            for b in sample_batches(&log, &idx, 16, &mut r).unwrap() {
                let b = b.unwrap();
                for (&u, &j) in b.users.iter().zip(&b.neg_items) {
                    assert!(!train.contains(&(u, j)));
                }
            }
        }
    }

    #[test]
    fn saturated_user_reported() {
        let log = InteractionLog::from_pairs(2, 2, [(0, 0), (1, 0), (1, 1)]).unwrap();
        let idx = TrainIndex::new(&log);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let err = sample_batches(&log, &idx, 8, &mut r).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, Error::NegativeSampling { user: 1 }));
    }

    proptest! {
        #[test]
        fn split_partitions_each_user(seed in any::<u64>()) {
            let log = random_log(seed, 15, 12, 0.35);
            let s = leave_one_out_split(&log, &mut ChaCha8Rng::seed_from_u64(seed));
            let orig = log.items_by_user();
            let train = s.train.items_by_user();
            for u in 0..log.num_users {
                let mut all = train[u].clone();
                all.extend(s.validation[u]);
                all.extend(s.test[u]);
                all.sort_unstable();
                prop_assert_eq!(&all, &orig[u]);
                if s.test[u].is_some() {
                    prop_assert!(!train[u].is_empty());
                    prop_assert_ne!(s.test[u], s.validation[u]);
                }
            }
        }

        #[test]
        fn filter_is_idempotent(seed in any::<u64>(), mu in 0usize..4, mi in 0usize..4) {
            let log = random_log(seed, 25, 25, 0.15);
            if let Ok(once) = filter_min_interactions(&log, mu, mi) {
                let twice = filter_min_interactions(&once, mu, mi).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn epoch_covers_every_pair_once(seed in any::<u64>(), bs in 1usize..40) {
            let log = random_log(seed, 12, 15, 0.3);
            let idx = TrainIndex::new(&log);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = Vec::new();
            for b in sample_batches(&log, &idx, bs, &mut r).unwrap() {
                let b = b.unwrap();
                prop_assert!(b.len() <= bs);
                seen.extend(b.users.iter().copied().zip(b.pos_items.iter().copied()));
            }
            let mut expected = log.interactions.clone();
            expected.sort_unstable();
            seen.sort_unstable();
            prop_assert_eq!(seen, expected);
        }
    }
}
